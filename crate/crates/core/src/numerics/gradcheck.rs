//! Central finite differences, used as an independent oracle for the tape.

use crate::numerics::Tensor;

/// Central-difference gradient of `f` with respect to every entry of
/// `params`. `params` is restored before returning.
pub fn finite_difference<F>(params: &mut [Tensor<f64>], h: f64, mut f: F) -> Vec<Tensor<f64>>
where
    F: FnMut(&[Tensor<f64>]) -> f64,
{
    let mut out: Vec<Tensor<f64>> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    for t in 0..params.len() {
        for i in 0..params[t].numel() {
            let orig = params[t].data()[i];
            params[t].data_mut()[i] = orig + h;
            let up = f(params);
            params[t].data_mut()[i] = orig - h;
            let down = f(params);
            params[t].data_mut()[i] = orig;
            out[t].data_mut()[i] = (up - down) / (2.0 * h);
        }
    }
    out
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
///
/// The floor keeps entries whose true gradient is zero from dividing
/// round-off by round-off.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Largest elementwise [`relative_error`] between two tensors.
pub fn max_relative_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>, floor: f64) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| relative_error(a, n, floor))
        .fold(0.0, f64::max)
}
