//! Shared verification helpers: central finite differences and relative
//! error, kept independent of the reverse-mode path they are used to check.

/// Central finite-difference gradient of a scalar-valued function of a flat
/// input vector.
pub fn fd_gradient(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// |a - b| / max(|a|, |b|, floor). The floor absorbs finite-difference noise
/// when both values are near zero.
pub fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest pairwise relative error between two gradient vectors.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &b)| rel_error(a, b, floor))
        .fold(0.0, f64::max)
}

/// Default step and floor for double-precision gradient checks.
pub const FD_STEP: f64 = 1e-5;
pub const FD_FLOOR: f64 = 1e-6;
