#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sagwave::{GridSpec, TimeSpaceGrid};

pub fn spec(n_x: usize, n_t: usize) -> GridSpec {
    GridSpec::new(0.0, 0.0, 1.0, 10.0, n_t, n_x).unwrap()
}

pub fn grid_from(speeds: Array2<f64>) -> TimeSpaceGrid {
    let (n_x, n_t) = speeds.dim();
    TimeSpaceGrid {
        spec: spec(n_x, n_t),
        mask: Array2::from_elem((n_x, n_t), true),
        speeds,
    }
}

pub fn random_grid(rng: &mut ChaCha8Rng, n_x: usize, n_t: usize) -> TimeSpaceGrid {
    grid_from(Array2::from_shape_fn((n_x, n_t), |_| {
        rng.random_range(0.0..35.0)
    }))
}

/// Activation by the textbook definition: an explicit kernel table, explicit
/// window offsets and a full mask scan per cell.
pub fn naive_activation(
    grid: &TimeSpaceGrid,
    width: usize,
    v_ref: f64,
) -> (Array2<f64>, Array2<bool>) {
    let cols = width + 4;
    let mut base = vec![0i64; cols];
    for b in base.iter_mut().skip(1).take(width) {
        *b = -1;
    }
    base[width + 2] = width as i64 / 2;
    base[width + 3] = width as i64 / 2;
    let mut k = [[0i64; 64]; 3];
    for (r, row) in k.iter_mut().enumerate() {
        for c in 0..cols {
            row[(c + r) % cols] = base[c];
        }
    }
    let norm = (3 * width) as f64 * v_ref;
    let (n_x, n_t) = grid.speeds.dim();
    let mut out = Array2::zeros((n_x, n_t));
    let mut valid = Array2::from_elem((n_x, n_t), false);
    for i in 0..n_x as i64 {
        for j in 0..n_t as i64 {
            let mut acc = 0.0;
            let mut ok = true;
            for r in 0..3i64 {
                for c in 0..cols as i64 {
                    let gi = i + 1 - r;
                    let gj = j - cols as i64 / 2 + c;
                    if gi < 0 || gj < 0 || gi >= n_x as i64 || gj >= n_t as i64 {
                        ok = false;
                        continue;
                    }
                    if !grid.mask[[gi as usize, gj as usize]] {
                        ok = false;
                    }
                    acc +=
                        k[r as usize][c as usize] as f64 * grid.speeds[[gi as usize, gj as usize]];
                }
            }
            if ok {
                out[[i as usize, j as usize]] = (acc / norm).clamp(-1.0, 1.0);
                valid[[i as usize, j as usize]] = true;
            }
        }
    }
    (out, valid)
}

/// A jam band `width` columns wide that starts one column later for every
/// row upstream. Row `i` is slow on columns `[anchor - i, anchor - i + width)`.
/// Returns the speeds and the band center `(row, col)` of every row.
pub fn planted_wave(
    n_x: usize,
    n_t: usize,
    width: usize,
    anchor: usize,
    free: f64,
    jam: f64,
) -> (Array2<f64>, Vec<(usize, usize)>) {
    let mut speeds = Array2::from_elem((n_x, n_t), free);
    let mut centers = Vec::new();
    for i in 0..n_x {
        let start = anchor as i64 - i as i64;
        for j in start.max(0)..(start + width as i64).min(n_t as i64) {
            speeds[[i, j as usize]] = jam;
        }
        let center = start + width as i64 / 2;
        if center >= 0 && (center as usize) < n_t {
            centers.push((i, center as usize));
        }
    }
    (speeds, centers)
}

/// Adds independent N(0, sigma) noise and clamps at zero.
pub fn add_noise(speeds: &mut Array2<f64>, rng: &mut ChaCha8Rng, sigma: f64) {
    let normal = Normal::new(0.0, sigma).unwrap();
    speeds.mapv_inplace(|v| (v + normal.sample(rng)).max(0.0));
}
