//! Central finite differences, the reference that analytic gradients are
//! checked against. Only forward evaluations are used here.

use crate::tensor::Tensor;

/// Numerical gradient of `f` at `params` by central differences with step `h`.
pub fn central_difference(
    mut f: impl FnMut(&[Tensor]) -> f64,
    params: &[Tensor],
    h: f64,
) -> Vec<Tensor> {
    let mut work: Vec<Tensor> = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut grad = Tensor::zeros(params[p].rows(), params[p].cols());
        for k in 0..params[p].len() {
            let orig = work[p].data()[k];
            work[p].data_mut()[k] = orig + h;
            let up = f(&work);
            work[p].data_mut()[k] = orig - h;
            let down = f(&work);
            work[p].data_mut()[k] = orig;
            grad.data_mut()[k] = (up - down) / (2.0 * h);
        }
        out.push(grad);
    }
    out
}

/// `|a - b| / max(|a|, |b|, floor)` over the concatenation of all tensors.
pub fn relative_error(analytic: &[Tensor], numeric: &[Tensor], floor: f64) -> f64 {
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (a, b) in analytic.iter().zip(numeric) {
        for (x, y) in a.data().iter().zip(b.data()) {
            diff += (x - y) * (x - y);
            na += x * x;
            nb += y * y;
        }
    }
    diff.sqrt() / na.sqrt().max(nb.sqrt()).max(floor)
}
