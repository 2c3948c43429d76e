//! Central finite differences, the reference for every analytic gradient.

use super::tensor::Tensor;
use super::ParamSet;

/// Numeric gradient of `f` at `params`, one coordinate at a time.
pub fn central_difference<F>(mut f: F, params: &Tensor, h: f64) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    let mut probe = params.clone();
    let mut out = Tensor::zeros(params.shape());
    for i in 0..params.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * h);
    }
    out
}

/// Relative error with a floor on the denominator so that gradients that are
/// zero on both sides compare as equal.
#[inline]
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Maximum relative error between `analytic` and central differences of `f`
/// over every coordinate of every tensor in `params`.
pub fn finite_diff_check<P, F>(mut f: F, params: &P, analytic: &P, h: f64) -> f64
where
    P: ParamSet + Clone,
    F: FnMut(&P) -> f64,
{
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    let count = params.tensors().len();
    for t in 0..count {
        let len = params.tensors()[t].len();
        for i in 0..len {
            let orig = probe.tensors()[t].data()[i];
            probe.tensors_mut()[t].data_mut()[i] = orig + h;
            let up = f(&probe);
            probe.tensors_mut()[t].data_mut()[i] = orig - h;
            let down = f(&probe);
            probe.tensors_mut()[t].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.tensors()[t].data()[i];
            worst = worst.max(relative_error(a, numeric));
        }
    }
    worst
}
