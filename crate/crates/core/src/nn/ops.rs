//! Stateless kernels with their backward passes.

use super::tensor::{matvec_acc, matvec_t_acc, outer_acc, Tensor};
use crate::error::{Error, Result};

/// Probability floor applied before taking logs.
pub const LOG_EPS: f64 = 1e-12;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row `token` of an embedding table.
pub fn embed(table: &Tensor, token: usize) -> Result<&[f64]> {
    if token >= table.rows() {
        return Err(Error::Index {
            index: token,
            len: table.rows(),
        });
    }
    Ok(table.row(token))
}

/// Accumulates the gradient of an embedding lookup into one row.
pub fn embed_backward(grad_table: &mut Tensor, token: usize, d_out: &[f64]) {
    for (g, d) in grad_table.row_mut(token).iter_mut().zip(d_out) {
        *g += d;
    }
}

/// In-place numerically stable softmax.
pub fn softmax_inplace(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

fn check_linear(w: &Tensor, b: &Tensor, z: &[f64]) -> Result<()> {
    if w.shape().len() != 2 || w.cols() != z.len() || b.len() != w.rows() {
        return Err(Error::Shape(format!(
            "linear head {:?} + bias {:?} cannot take input of length {}",
            w.shape(),
            b.shape(),
            z.len()
        )));
    }
    Ok(())
}

/// `W z + b`.
pub fn linear(w: &Tensor, b: &Tensor, z: &[f64]) -> Result<Vec<f64>> {
    check_linear(w, b, z)?;
    let mut out = b.data().to_vec();
    matvec_acc(w.data(), z, &mut out);
    Ok(out)
}

/// `softmax(W z + b)`.
pub fn linear_softmax(w: &Tensor, b: &Tensor, z: &[f64]) -> Result<Vec<f64>> {
    let mut p = linear(w, b, z)?;
    softmax_inplace(&mut p);
    Ok(p)
}

/// Backward through `W z + b` given the gradient on the logits; accumulates
/// into `dw`/`db` and returns the gradient on `z`.
pub fn linear_backward(
    w: &Tensor,
    z: &[f64],
    d_logits: &[f64],
    dw: &mut Tensor,
    db: &mut Tensor,
) -> Vec<f64> {
    outer_acc(dw.data_mut(), d_logits, z);
    for (g, d) in db.data_mut().iter_mut().zip(d_logits) {
        *g += d;
    }
    let mut dz = vec![0.0; z.len()];
    matvec_t_acc(w.data(), d_logits, &mut dz);
    dz
}

/// `-ln p[label]`, with `p[label]` clamped at [`LOG_EPS`].
pub fn cross_entropy(pred: &[f64], label: usize) -> Result<f64> {
    let p = pred.get(label).ok_or(Error::Index {
        index: label,
        len: pred.len(),
    })?;
    Ok(-p.max(LOG_EPS).ln())
}

/// Gradient of `-ln softmax(logits)[label]` with respect to the logits.
pub fn softmax_xent_grad(pred: &[f64], label: usize) -> Vec<f64> {
    let mut g = pred.to_vec();
    g[label] -= 1.0;
    g
}

/// Cosine similarity; 0 when either norm is below 1e-12.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    let (na, nb) = (aa.sqrt(), bb.sqrt());
    if na < 1e-12 || nb < 1e-12 {
        return Ok(0.0);
    }
    Ok((ab / (na * nb)).clamp(-1.0, 1.0))
}
