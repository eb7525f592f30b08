#![allow(dead_code)]

use ndarray::Array2;
use replay_lab::rng::RngStream;

pub const FD_STEP: f64 = 1e-5;

/// Gaussian matrix scaled by `scale`.
pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut RngStream) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || scale * rng.next_gaussian())
}

pub fn random_labels(n: usize, classes: std::ops::Range<usize>, rng: &mut RngStream) -> Vec<usize> {
    let width = (classes.end - classes.start) as u64;
    (0..n).map(|_| classes.start + rng.next_below(width) as usize).collect()
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient(x: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut grad = Array2::zeros(x.raw_dim());
    let mut probe = x.clone();
    for idx in ndarray::indices(x.raw_dim()) {
        let orig = probe[idx];
        probe[idx] = orig + FD_STEP;
        let up = f(&probe);
        probe[idx] = orig - FD_STEP;
        let down = f(&probe);
        probe[idx] = orig;
        grad[idx] = (up - down) / (2.0 * FD_STEP);
    }
    grad
}

/// Largest entrywise `|a − n| / max(|a|, |n|, 1e-5)`; the floor keeps
/// entries that are zero analytically from amplifying round-off.
pub fn max_relative_error(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
    assert_eq!(analytic.dim(), numeric.dim());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-5))
        .fold(0.0, f64::max)
}
