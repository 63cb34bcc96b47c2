//! Scene rasterization for the LoS classifier.
//!
//! The room maps onto a `(W+1)×(W+1)` grid of 1 m cells, row = y cell,
//! column = x cell, three colour channels in `[0, 1]`.

use ndarray::Array3;

use crate::geometry::{Position3, SceneLayout};

pub const BACKGROUND: [f64; 3] = [0.0, 0.0, 0.0];
pub const MEC: [f64; 3] = [1.0, 0.0, 0.0];
pub const OBSTACLE: [f64; 3] = [0.0, 0.0, 1.0];
pub const TALL_USER: [f64; 3] = [0.0, 1.0, 0.0];
pub const SHORT_USER: [f64; 3] = [0.0, 0.5, 0.0];
pub const TALL_TARGET: [f64; 3] = [1.0, 1.0, 0.0];
pub const SHORT_TARGET: [f64; 3] = [1.0, 0.5, 0.0];

pub fn grid_size(layout: &SceneLayout) -> usize {
    layout.width.round() as usize + 1
}

fn is_tall(z: f64, h_range: (f64, f64)) -> bool {
    z > 0.5 * (h_range.0 + h_range.1)
}

fn paint(img: &mut Array3<f64>, cell: (usize, usize), color: [f64; 3]) {
    for (c, v) in color.iter().enumerate() {
        img[[cell.1, cell.0, c]] = *v;
    }
}

/// Paints obstacles, the MEC, then users; `target` (if any) is painted last
/// in its highlight colour. Out-of-room positions land on the nearest
/// boundary cell.
pub fn rasterize_scene(layout: &SceneLayout, users: &[Position3], target: Option<usize>, h_range: (f64, f64)) -> Array3<f64> {
    let n = grid_size(layout);
    let mut img = Array3::zeros((n, n, 3));
    for o in &layout.obstacles {
        for y in 0..n {
            for x in 0..n {
                if o.contains_xy(x as f64, y as f64) {
                    paint(&mut img, (x, y), OBSTACLE);
                }
            }
        }
    }
    paint(&mut img, layout.mec.cell(layout.width), MEC);
    for (k, u) in users.iter().enumerate() {
        if Some(k) != target {
            paint(&mut img, u.cell(layout.width), if is_tall(u.z, h_range) { TALL_USER } else { SHORT_USER });
        }
    }
    if let Some(u) = target.and_then(|k| users.get(k)) {
        paint(&mut img, u.cell(layout.width), if is_tall(u.z, h_range) { TALL_TARGET } else { SHORT_TARGET });
    }
    img
}

/// Users recovered from an image, in row-major cell order, with tall users
/// at `h_range.1` and short ones at `h_range.0`. Also returns the index of
/// the highlighted user.
pub fn decode_users(img: &Array3<f64>, h_range: (f64, f64)) -> (Vec<Position3>, Option<usize>) {
    let (rows, cols, _) = img.dim();
    let mut users = Vec::new();
    let mut target = None;
    for y in 0..rows {
        for x in 0..cols {
            let px = [img[[y, x, 0]], img[[y, x, 1]], img[[y, x, 2]]];
            let (tall, highlighted) = match px {
                TALL_USER => (true, false),
                SHORT_USER => (false, false),
                TALL_TARGET => (true, true),
                SHORT_TARGET => (false, true),
                _ => continue,
            };
            if highlighted {
                target = Some(users.len());
            }
            let z = if tall { h_range.1 } else { h_range.0 };
            users.push(Position3::new(x as f64, y as f64, z));
        }
    }
    (users, target)
}
