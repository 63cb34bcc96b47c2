//! Shared scene builders and brute-force link-budget oracles for the
//! integration tests. The oracles deliberately avoid `ndarray` and the
//! crate's own helpers: every product is spelled out element by element.
#![allow(dead_code)]

use std::f64::consts::PI;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thzvr_core::channel::{build_channel_set, ArrayPlacement, ChannelParams, ChannelSet, C64, SPEED_OF_LIGHT};
use thzvr_core::geometry::{los_status, Obstacle, Position3, SceneLayout};

pub const NOISE_W: f64 = 1e-14;

pub fn params(m: usize, n: usize) -> ChannelParams {
    ChannelParams {
        freq_hz: 3e11,
        tau: 0.0033,
        mec_antennas: m,
        ris_elements: n,
        ris_gain: 1.0,
        c: SPEED_OF_LIGHT,
        element_spacing: 0.5,
    }
}

pub fn placement() -> ArrayPlacement {
    ArrayPlacement {
        mec: Position3::new(0.0, 0.0, 3.0),
        ris: Position3::new(10.0, 20.0, 3.0),
        mec_broadside: PI / 4.0,
        ris_broadside: -PI / 2.0,
    }
}

pub fn layout() -> SceneLayout {
    SceneLayout {
        width: 20.0,
        height: 3.0,
        mec: Position3::new(0.0, 0.0, 3.0),
        ris: Position3::new(10.0, 20.0, 3.0),
        obstacles: vec![
            Obstacle { x_range: [4.0, 8.0], y_range: [8.0, 12.0], height: 3.0 },
            Obstacle { x_range: [12.0, 16.0], y_range: [8.0, 12.0], height: 3.0 },
        ],
        body_radius: 0.3,
    }
}

/// Continuous random user positions outside the obstacle footprints.
pub fn random_users(rng: &mut ChaCha8Rng, layout: &SceneLayout, k: usize) -> Vec<Position3> {
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let x = rng.random_range(0.5..layout.width);
        let y = rng.random_range(0.5..layout.width);
        if layout.obstacles.iter().any(|o| o.contains_xy(x, y)) {
            continue;
        }
        out.push(Position3::new(x, y, rng.random_range(1.2..1.8)));
    }
    out
}

/// A seeded scene: channels from real geometry plus the true LoS flags.
pub fn seeded_scene(seed: u64, k: usize, m: usize, n: usize) -> (ChannelSet, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lay = layout();
    let users = random_users(&mut rng, &lay, k);
    let states = los_status(&lay, &users);
    let ch = build_channel_set(&params(m, n), &placement(), &users, &states).unwrap();
    (ch, states.iter().map(|s| s.is_los()).collect())
}

fn to_vec(a: &Array1<C64>) -> Vec<C64> {
    a.iter().copied().collect()
}

fn dot_h(a: &[C64], b: &[C64]) -> C64 {
    let mut s = C64::new(0.0, 0.0);
    for i in 0..a.len() {
        s += a[i].conj() * b[i];
    }
    s
}

fn normalize(v: &[C64]) -> Vec<C64> {
    let n = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    if n == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|x| x / n).collect()
}

fn theta_matrix(phases: &[f64]) -> Vec<Vec<C64>> {
    let n = phases.len();
    let mut t = vec![vec![C64::new(0.0, 0.0); n]; n];
    for i in 0..n {
        t[i][i] = C64::from_polar(1.0, phases[i]);
    }
    t
}

fn matvec(a: &[Vec<C64>], x: &[C64]) -> Vec<C64> {
    a.iter()
        .map(|row| {
            let mut s = C64::new(0.0, 0.0);
            for j in 0..x.len() {
                s += row[j] * x[j];
            }
            s
        })
        .collect()
}

fn rows(a: &ndarray::Array2<C64>) -> Vec<Vec<C64>> {
    a.outer_iter().map(|r| r.iter().copied().collect()).collect()
}

fn conj_transpose(a: &[Vec<C64>]) -> Vec<Vec<C64>> {
    let (r, c) = (a.len(), a[0].len());
    (0..c).map(|j| (0..r).map(|i| a[i][j].conj()).collect()).collect()
}

fn log_rate(p: f64, s: f64, i: f64, noise: f64) -> f64 {
    (1.0 + p * s / (p * i + noise)).log2()
}

fn direct(ch: &ChannelSet, k: usize) -> Vec<C64> {
    if ch.blocked[k] {
        vec![C64::new(0.0, 0.0); ch.h[k].len()]
    } else {
        to_vec(&ch.h[k])
    }
}

/// Uplink rate written out term by term: signal through the user's own
/// two-ray channel, LoS-link interference and RIS-link interference of
/// every other user.
pub fn oracle_uplink(k: usize, ch: &ChannelSet, phases: &[f64], p: f64, noise: f64) -> f64 {
    let th = theta_matrix(phases);
    let gup = rows(&ch.g_up);
    let ris_path = |i: usize| matvec(&gup, &matvec(&th, &to_vec(&ch.g[i])));
    let own_ris = ris_path(k);
    let own_direct = direct(ch, k);
    let eff: Vec<C64> = own_direct.iter().zip(&own_ris).map(|(a, b)| a + b).collect();
    if eff.iter().all(|x| x.norm() == 0.0) {
        return 0.0;
    }
    let u = normalize(&eff);
    let signal = (dot_h(&u, &own_direct) + dot_h(&u, &own_ris)).norm_sqr();
    let mut interference = 0.0;
    for i in 0..ch.users() {
        if i == k {
            continue;
        }
        let los_term = dot_h(&u, &direct(ch, i));
        let ris_term = dot_h(&u, &ris_path(i));
        interference += (los_term + ris_term).norm_sqr();
    }
    log_rate(p, signal, interference, noise)
}

fn precoders(ch: &ChannelSet, phases: &[f64], serve_los: &[bool]) -> Vec<Vec<C64>> {
    let th = theta_matrix(phases);
    let gdh = conj_transpose(&rows(&ch.g_down));
    (0..ch.users())
        .map(|j| {
            if serve_los[j] {
                normalize(&to_vec(&ch.h[j]))
            } else {
                normalize(&matvec(&gdh, &matvec(&th, &to_vec(&ch.g[j]))))
            }
        })
        .collect()
}

pub fn oracle_downlink_los(k: usize, ch: &ChannelSet, phases: &[f64], serve_los: &[bool], p: f64, noise: f64) -> f64 {
    let v = precoders(ch, phases, serve_los);
    let h = direct(ch, k);
    let signal = dot_h(&h, &v[k]).norm_sqr();
    let mut intra = 0.0;
    let mut leak = 0.0;
    for i in 0..ch.users() {
        if i == k {
            continue;
        }
        let t = dot_h(&h, &v[i]).norm_sqr();
        if serve_los[i] {
            intra += t;
        } else {
            leak += t;
        }
    }
    log_rate(p, signal, intra + leak, noise)
}

pub fn oracle_downlink_nlos(b: usize, ch: &ChannelSet, phases: &[f64], serve_los: &[bool], p: f64, noise: f64) -> f64 {
    let v = precoders(ch, phases, serve_los);
    let th = theta_matrix(phases);
    let gd = rows(&ch.g_down);
    // received through the RIS: g_bᴴ Θ G_down v_j
    let gb = to_vec(&ch.g[b]);
    let through = |j: usize| dot_h(&gb, &matvec(&th, &matvec(&gd, &v[j])));
    let signal = through(b).norm_sqr();
    let mut interference = 0.0;
    for j in 0..ch.users() {
        if j != b && !serve_los[j] {
            interference += through(j).norm_sqr();
        }
    }
    log_rate(p, signal, interference, noise)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub const SAMPLES: usize = 1000;

/// Occlusion by sampling the 3D sight line MEC→user at 1000 points.
///
/// An obstacle occludes when a sample lies over its footprint no higher
/// than its top. A shorter user B occludes when the user lies beyond B
/// within `r` of the MEC→B ray and the sample at B's radial distance passes
/// below B's head. Returns `None` when the answer hinges on a feature finer
/// than the sample spacing.
pub fn sampled_blocked(layout: &SceneLayout, users: &[Position3], k: usize) -> Option<bool> {
    let a = layout.mec;
    let u = users[k];
    let at = |t: f64| Position3::new(a.x + t * (u.x - a.x), a.y + t * (u.y - a.y), a.z + t * (u.z - a.z));
    let samples: Vec<Position3> = (0..=SAMPLES).map(|i| at(i as f64 / SAMPLES as f64)).collect();
    let spacing = a.dist2d(&u) / SAMPLES as f64;
    let mut ambiguous = false;
    for o in &layout.obstacles {
        // signed depth of each sample inside the footprint (negative outside)
        let depth = |p: &Position3| {
            let inner = (p.x - o.x_range[0]).min(o.x_range[1] - p.x).min(p.y - o.y_range[0]).min(o.y_range[1] - p.y);
            if inner >= 0.0 {
                inner
            } else {
                let dx = (o.x_range[0] - p.x).max(p.x - o.x_range[1]).max(0.0);
                let dy = (o.y_range[0] - p.y).max(p.y - o.y_range[1]).max(0.0);
                -dx.hypot(dy)
            }
        };
        let deepest = samples.iter().filter(|p| p.z <= o.height).map(depth).fold(f64::MIN, f64::max);
        if deepest > spacing {
            return Some(true);
        }
        ambiguous |= deepest > -spacing;
    }
    let d = a.dist2d(&u);
    for (j, b) in users.iter().enumerate() {
        if j == k || b.z >= a.z {
            continue;
        }
        let l = a.dist2d(b);
        if l == 0.0 || d <= l {
            continue;
        }
        // lateral offset of the user from the MEC→B ray
        let cross = ((b.x - a.x) * (u.y - a.y) - (b.y - a.y) * (u.x - a.x)).abs() / l;
        let along = ((b.x - a.x) * (u.x - a.x) + (b.y - a.y) * (u.y - a.y)) / l;
        if cross > layout.body_radius || along <= l {
            continue;
        }
        let nearest = samples
            .iter()
            .min_by(|p, q| (a.dist2d(p) - l).abs().total_cmp(&(a.dist2d(q) - l).abs()))
            .unwrap();
        let slope = (a.z - u.z) / d;
        if (nearest.z - b.z).abs() <= slope * spacing {
            ambiguous = true;
        } else if nearest.z < b.z {
            return Some(true);
        }
    }
    (!ambiguous).then_some(false)
}

pub fn scene_with_clusters(seed: u64) -> (SceneLayout, Vec<Position3>) {
    let lay = layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut users = random_users(&mut rng, &lay, 5);
    // pull one user onto the MEC ray of another so user blockage is exercised
    let (b, c) = (users[0], users[1]);
    let scale = 1.1 + 0.1 * (seed % 3) as f64;
    let x = b.x * scale;
    let y = b.y * scale;
    if x <= 20.0 && y <= 20.0 && !lay.obstacles.iter().any(|o| o.contains_xy(x, y)) {
        users[1] = Position3::new(x, y, c.z.min(b.z - 0.05));
    }
    (lay, users)
}
