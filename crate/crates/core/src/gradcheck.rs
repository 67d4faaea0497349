//! Central finite-difference gradient verification.

use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Denominator floor for [`relative_error`]; below this both values are
/// treated as zero and the absolute difference is scaled by the floor.
/// Central differences at `eps = 1e-5` on O(1..10) losses carry roundoff of
/// order 1e-11..1e-10, so an exactly-zero gradient needs a floor this large
/// to be judged on its absolute error.
pub const REL_FLOOR: f64 = 1e-6;

/// `d f / d x` by central differences `(f(x + eps) - f(x - eps)) / (2 eps)`.
pub fn numerical_gradient(x: &Tensor, eps: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape()).expect("non-empty");
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    grad
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic.data().iter().zip(numeric.data()).map(|(&a, &n)| relative_error(a, n)).fold(0.0, f64::max)
}

/// `sum(a * b)`, the scalar probe used to reduce a layer output to a loss.
pub fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}
