//! Minimal differentiable kernels with explicit backward passes.

pub mod adam;
pub mod gradcheck;
pub mod lstm;
pub mod ops;
pub mod tensor;

pub use adam::AdamState;
pub use gradcheck::{central_difference, finite_diff_check};
pub use lstm::{LstmCache, LstmParams};
pub use tensor::Tensor;

/// A fixed, ordered collection of parameter tensors. Gradient buffers use the
/// same type as the parameters they belong to.
pub trait ParamSet {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;
    /// Checkpoint names, parallel to [`ParamSet::tensors`].
    fn names(&self) -> Vec<&'static str>;

    fn zero_grad(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }
}

impl ParamSet for Tensor {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![self]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![self]
    }

    fn names(&self) -> Vec<&'static str> {
        vec!["tensor"]
    }
}
