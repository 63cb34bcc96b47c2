//! Indoor scene, grid mobility and geometric blockage.
//!
//! The room is a `W×W` floor with a 1 m lattice of `(W+1)²` cells. The MEC
//! server and the RIS hang near the ceiling; users walk between lattice
//! cells along the four cardinal directions. A user's direct link to the MEC
//! is blocked either by an axis-aligned obstacle box or by a taller user
//! standing between it and the MEC.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dist2d(&self, other: &Position3) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn dist3d(&self, other: &Position3) -> f64 {
        let dz = self.z - other.z;
        (self.dist2d(other).powi(2) + dz * dz).sqrt()
    }

    /// Nearest lattice cell, clamped into a `width` metre room.
    pub fn cell(&self, width: f64) -> (usize, usize) {
        let max = width.round().max(0.0);
        let c = |v: f64| v.round().clamp(0.0, max) as usize;
        (c(self.x), c(self.y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Direction> {
        Self::ALL.get(i).copied()
    }

    /// Unit step on the floor plane. `Up` is `+y`, `Right` is `+x`.
    pub fn unit(self) -> (f64, f64) {
        match self {
            Direction::Up => (0.0, 1.0),
            Direction::Down => (0.0, -1.0),
            Direction::Left => (-1.0, 0.0),
            Direction::Right => (1.0, 0.0),
        }
    }

    /// Direction of a displacement, if it is a pure axis move.
    pub fn of_move(dx: f64, dy: f64) -> Option<Direction> {
        match (dx.abs() > EPS, dy.abs() > EPS) {
            (true, false) => Some(if dx > 0.0 { Direction::Right } else { Direction::Left }),
            (false, true) => Some(if dy > 0.0 { Direction::Up } else { Direction::Down }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkState {
    Los,
    Nlos,
}

impl LinkState {
    pub fn is_los(self) -> bool {
        self == LinkState::Los
    }

    pub fn from_blocked(blocked: bool) -> Self {
        if blocked {
            LinkState::Nlos
        } else {
            LinkState::Los
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub height: f64,
}

impl Obstacle {
    /// Closed-footprint containment.
    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        x >= self.x_range[0] - EPS && x <= self.x_range[1] + EPS && y >= self.y_range[0] - EPS && y <= self.y_range[1] + EPS
    }
}

/// Parameter interval `[t0, t1] ⊂ [0, 1]` over which the segment `p→q`
/// lies inside the closed rectangle (Liang–Barsky clipping).
pub fn segment_rect_interval(p: (f64, f64), q: (f64, f64), ob: &Obstacle) -> Option<(f64, f64)> {
    let (dx, dy) = (q.0 - p.0, q.1 - p.1);
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    let checks = [
        (-dx, p.0 - ob.x_range[0]),
        (dx, ob.x_range[1] - p.0),
        (-dy, p.1 - ob.y_range[0]),
        (dy, ob.y_range[1] - p.1),
    ];
    for (pk, qk) in checks {
        if pk.abs() < 1e-15 {
            if qk < -EPS {
                return None;
            }
        } else {
            let r = qk / pk;
            if pk < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 <= t1 + EPS).then_some((t0, t1.max(t0)))
}

/// True when `blocker` shadows `user` from the MEC.
///
/// The user must sit on the MEC→blocker ray beyond the blocker (within
/// `colinear_tol` of it) and be close enough that the sight line from the
/// ceiling-mounted MEC to the user's head passes below the blocker's head:
/// `d_user < (h_A − h_U)·l / (h_A − h_B)`.
pub fn blocked_by_user(mec: &Position3, blocker: &Position3, user: &Position3, colinear_tol: f64) -> bool {
    let (ha, hb, hu) = (mec.z, blocker.z, user.z);
    if hb >= ha {
        return false;
    }
    let l = mec.dist2d(blocker);
    if l < EPS {
        return false;
    }
    let (ux, uy) = ((blocker.x - mec.x) / l, (blocker.y - mec.y) / l);
    let (wx, wy) = (user.x - mec.x, user.y - mec.y);
    let along = wx * ux + wy * uy;
    let perp = (wx * uy - wy * ux).abs();
    if perp > colinear_tol || along <= l + EPS {
        return false;
    }
    let d = mec.dist2d(user);
    d < (ha - hu) * l / (ha - hb)
}

/// True when the obstacle cuts the MEC–user sight line.
///
/// The floor-plane segment must cross the footprint with positive length
/// (grazing a corner does not count); an obstacle at least as tall as the
/// MEC always blocks, a shorter one blocks when the sight line is at or
/// below its top where it leaves the footprint.
pub fn blocked_by_obstacle(mec: &Position3, user: &Position3, obstacle: &Obstacle) -> bool {
    let Some((t0, t1)) = segment_rect_interval((mec.x, mec.y), (user.x, user.y), obstacle) else {
        return false;
    };
    let len = mec.dist2d(user);
    if (t1 - t0) * len <= EPS && len > EPS {
        return false;
    }
    if obstacle.height >= mec.z {
        return true;
    }
    let sight = mec.z + (user.z - mec.z) * t1;
    sight <= obstacle.height + EPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityState {
    pub position: Position3,
    pub destination: (usize, usize),
    pub direction: Direction,
    pub speed: f64,
}

/// Walkable lattice of a room.
#[derive(Debug, Clone)]
pub struct MobilityArea {
    pub width: f64,
    pub obstacles: Vec<Obstacle>,
    free_cells: Vec<(usize, usize)>,
}

impl MobilityArea {
    /// `reserved` cells (e.g. under the MEC) are never chosen as destinations.
    pub fn new(width: f64, obstacles: Vec<Obstacle>, reserved: &[(usize, usize)]) -> Result<Self> {
        if width < 1.0 {
            return Err(CoreError::config("scene.room_width", "room must be at least 1 m wide"));
        }
        let n = width.floor() as usize;
        let mut free_cells = Vec::new();
        for y in 0..=n {
            for x in 0..=n {
                let inside = obstacles.iter().any(|o| o.contains_xy(x as f64, y as f64));
                if !inside && !reserved.contains(&(x, y)) {
                    free_cells.push((x, y));
                }
            }
        }
        if free_cells.len() < 2 {
            return Err(CoreError::config("scene.obstacles", "fewer than two walkable cells"));
        }
        Ok(Self { width, obstacles, free_cells })
    }

    pub fn free_cells(&self) -> &[(usize, usize)] {
        &self.free_cells
    }

    pub fn is_walkable(&self, x: f64, y: f64) -> bool {
        (-EPS..=self.width + EPS).contains(&x)
            && (-EPS..=self.width + EPS).contains(&y)
            && !self.obstacles.iter().any(|o| o.contains_xy(x, y))
    }

    fn segment_walkable(&self, from: (f64, f64), to: (f64, f64)) -> bool {
        let len = (to.0 - from.0).hypot(to.1 - from.1);
        let n = (len / 0.25).ceil().max(1.0) as usize;
        (1..=n).all(|i| {
            let t = i as f64 / n as f64;
            self.is_walkable(from.0 + t * (to.0 - from.0), from.1 + t * (to.1 - from.1))
        })
    }

    pub fn random_cell<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        *self.free_cells.choose(rng).expect("area has free cells")
    }

    fn random_cell_except<R: Rng + ?Sized>(&self, rng: &mut R, except: (f64, f64)) -> (usize, usize) {
        loop {
            let c = self.random_cell(rng);
            if (c.0 as f64 - except.0).abs() > EPS || (c.1 as f64 - except.1).abs() > EPS {
                return c;
            }
        }
    }
}

fn productive_directions(pos: &Position3, dest: (usize, usize)) -> Vec<Direction> {
    let (dx, dy) = (dest.0 as f64 - pos.x, dest.1 as f64 - pos.y);
    let mut out = Vec::with_capacity(2);
    if dx.abs() > EPS {
        out.push(if dx > 0.0 { Direction::Right } else { Direction::Left });
    }
    if dy.abs() > EPS {
        out.push(if dy > 0.0 { Direction::Up } else { Direction::Down });
    }
    out
}

fn toward<R: Rng + ?Sized>(pos: &Position3, dest: (usize, usize), rng: &mut R, fallback: Direction) -> Direction {
    productive_directions(pos, dest).choose(rng).copied().unwrap_or(fallback)
}

/// Starts a user on a random free cell with a fresh destination.
pub fn spawn_user<R: Rng + ?Sized>(area: &MobilityArea, height: f64, speed: f64, rng: &mut R) -> MobilityState {
    let (x, y) = area.random_cell(rng);
    let position = Position3::new(x as f64, y as f64, height);
    let destination = area.random_cell_except(rng, (position.x, position.y));
    let direction = toward(&position, destination, rng, Direction::Up);
    MobilityState { position, destination, direction, speed }
}

/// One slot of the grid mobility model.
///
/// On arrival a new destination and heading are drawn and the user stays
/// put for this slot. Otherwise the user keeps its heading while that still
/// closes the distance, else turns onto the remaining axis, and moves at
/// most `speed` metres without overshooting the destination. If both useful
/// axes are obstructed the destination is redrawn.
pub fn vrmm_step<R: Rng + ?Sized>(state: &MobilityState, area: &MobilityArea, rng: &mut R) -> Result<MobilityState> {
    if !(state.speed > 0.0) {
        return Err(CoreError::config("scene.speed", "speed must be positive"));
    }
    let mut next = state.clone();
    let pos = state.position;
    let productive = productive_directions(&pos, state.destination);
    if productive.is_empty() {
        next.destination = area.random_cell_except(rng, (pos.x, pos.y));
        next.direction = toward(&pos, next.destination, rng, state.direction);
        return Ok(next);
    }
    let mut order = Vec::with_capacity(2);
    if productive.contains(&state.direction) {
        order.push(state.direction);
    }
    order.extend(productive.iter().filter(|d| **d != state.direction));
    for dir in order {
        let (ux, uy) = dir.unit();
        let remaining = if ux != 0.0 {
            (state.destination.0 as f64 - pos.x).abs()
        } else {
            (state.destination.1 as f64 - pos.y).abs()
        };
        let step = state.speed.min(remaining);
        let nx = (pos.x + ux * step).clamp(0.0, area.width);
        let ny = (pos.y + uy * step).clamp(0.0, area.width);
        if area.segment_walkable((pos.x, pos.y), (nx, ny)) {
            next.position = Position3::new(nx, ny, pos.z);
            next.direction = dir;
            return Ok(next);
        }
    }
    next.destination = area.random_cell_except(rng, (pos.x, pos.y));
    next.direction = toward(&pos, next.destination, rng, state.direction);
    Ok(next)
}

/// Static placement of everything except the users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLayout {
    pub width: f64,
    pub height: f64,
    pub mec: Position3,
    pub ris: Position3,
    pub obstacles: Vec<Obstacle>,
    pub body_radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneState {
    pub layout: SceneLayout,
    pub users: Vec<MobilityState>,
    pub los_flags: Vec<LinkState>,
}

impl SceneState {
    pub fn new(layout: SceneLayout, users: Vec<MobilityState>) -> Self {
        let mut s = Self { layout, users, los_flags: Vec::new() };
        s.refresh_los();
        s
    }

    pub fn positions(&self) -> Vec<Position3> {
        self.users.iter().map(|u| u.position).collect()
    }

    pub fn refresh_los(&mut self) {
        self.los_flags = los_status(&self.layout, &self.positions());
    }
}

/// LoS/NLoS state of every user: NLoS iff any obstacle or any other user
/// blocks the direct path.
pub fn los_status(layout: &SceneLayout, users: &[Position3]) -> Vec<LinkState> {
    users
        .iter()
        .enumerate()
        .map(|(k, u)| {
            let by_obstacle = layout.obstacles.iter().any(|o| blocked_by_obstacle(&layout.mec, u, o));
            let by_user = users
                .iter()
                .enumerate()
                .any(|(j, b)| j != k && blocked_by_user(&layout.mec, b, u, layout.body_radius));
            LinkState::from_blocked(by_obstacle || by_user)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obstacle() -> Obstacle {
        Obstacle { x_range: [4.0, 8.0], y_range: [8.0, 12.0], height: 3.0 }
    }

    fn open_area() -> MobilityArea {
        MobilityArea::new(20.0, vec![], &[]).unwrap()
    }

    #[test]
    fn axis_step_right() {
        let s = MobilityState {
            position: Position3::new(5.0, 5.0, 1.5),
            destination: (9, 5),
            direction: Direction::Right,
            speed: 1.0,
        };
        let n = vrmm_step(&s, &open_area(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(n.position, Position3::new(6.0, 5.0, 1.5));
        assert_eq!(n.direction, Direction::Right);
    }

    #[test]
    fn arrival_draws_new_destination_without_moving() {
        let s = MobilityState {
            position: Position3::new(3.0, 4.0, 1.5),
            destination: (3, 4),
            direction: Direction::Up,
            speed: 1.0,
        };
        let n = vrmm_step(&s, &open_area(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(n.position, s.position);
        assert_ne!(n.destination, (3, 4));
    }

    #[test]
    fn nonpositive_speed_is_rejected() {
        let s = MobilityState {
            position: Position3::new(3.0, 4.0, 1.5),
            destination: (5, 4),
            direction: Direction::Right,
            speed: 0.0,
        };
        let err = vrmm_step(&s, &open_area(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn last_step_does_not_overshoot() {
        let s = MobilityState {
            position: Position3::new(5.0, 5.0, 1.5),
            destination: (6, 5),
            direction: Direction::Right,
            speed: 2.5,
        };
        let n = vrmm_step(&s, &open_area(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(n.position.x, 6.0);
    }

    #[test]
    fn user_shadow_threshold() {
        let mec = Position3::new(0.0, 0.0, 3.0);
        let blocker = Position3::new(5.0, 0.0, 1.8);
        // threshold (3 - 1.2)·5/(3 - 1.8) = 7.5 m
        assert!(blocked_by_user(&mec, &blocker, &Position3::new(6.0, 0.0, 1.2), 0.3));
        assert!(!blocked_by_user(&mec, &blocker, &Position3::new(8.0, 0.0, 1.2), 0.3));
        // equal heights: threshold is l itself
        assert!(!blocked_by_user(&mec, &blocker, &Position3::new(5.5, 0.0, 1.8), 0.3));
        // off the ray
        assert!(!blocked_by_user(&mec, &blocker, &Position3::new(6.0, 1.0, 1.2), 0.3));
        // in front of the blocker
        assert!(!blocked_by_user(&mec, &blocker, &Position3::new(4.0, 0.0, 1.2), 0.3));
        // blocker at MEC height never blocks
        assert!(!blocked_by_user(&mec, &Position3::new(5.0, 0.0, 3.0), &Position3::new(6.0, 0.0, 1.2), 0.3));
        // degenerate l = 0
        assert!(!blocked_by_user(&mec, &Position3::new(0.0, 0.0, 1.8), &Position3::new(1.0, 0.0, 1.2), 0.3));
    }

    #[test]
    fn obstacle_segment_cases() {
        let mec = Position3::new(0.0, 0.0, 3.0);
        assert!(!blocked_by_obstacle(&mec, &Position3::new(10.0, 10.0, 1.5), &obstacle()));
        assert!(blocked_by_obstacle(&mec, &Position3::new(12.0, 20.0, 1.5), &obstacle()));
        assert!(blocked_by_obstacle(&mec, &Position3::new(6.0, 10.0, 1.5), &obstacle()));
    }

    #[test]
    fn short_obstacle_uses_slope() {
        let mec = Position3::new(0.0, 0.0, 3.0);
        let low = Obstacle { x_range: [4.0, 5.0], y_range: [-1.0, 1.0], height: 1.0 };
        // sight line leaves the box at x = 5 with height 3 - 1.8·5/6 = 1.5 > 1
        assert!(!blocked_by_obstacle(&mec, &Position3::new(6.0, 0.0, 1.2), &low));
        let wall = Obstacle { height: 2.0, ..low };
        assert!(blocked_by_obstacle(&mec, &Position3::new(6.0, 0.0, 1.2), &wall));
    }

    #[test]
    fn single_user_without_obstacles_is_los() {
        let layout = SceneLayout {
            width: 20.0,
            height: 3.0,
            mec: Position3::new(0.0, 0.0, 3.0),
            ris: Position3::new(10.0, 20.0, 3.0),
            obstacles: vec![],
            body_radius: 0.3,
        };
        assert_eq!(los_status(&layout, &[Position3::new(12.0, 20.0, 1.5)]), vec![LinkState::Los]);
        let with = SceneLayout { obstacles: vec![obstacle()], ..layout };
        assert_eq!(los_status(&with, &[Position3::new(12.0, 20.0, 1.5)]), vec![LinkState::Nlos]);
    }

    #[test]
    fn walking_never_enters_obstacles() {
        let area = MobilityArea::new(20.0, vec![obstacle()], &[(0, 0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = spawn_user(&area, 1.5, 1.0, &mut rng);
        for _ in 0..2000 {
            s = vrmm_step(&s, &area, &mut rng).unwrap();
            assert!(area.is_walkable(s.position.x, s.position.y));
        }
    }

    #[test]
    fn free_cells_exclude_obstacles_and_reserved() {
        let area = MobilityArea::new(20.0, vec![obstacle()], &[(0, 0)]).unwrap();
        assert_eq!(area.free_cells().len(), 21 * 21 - 25 - 1);
    }
}
