//! Dense tensors, reverse-mode differentiation, SGD, and gradient checking.
//!
//! Every learnable block of the model is expressed as operations on a
//! [`Graph`]. Values are 64-bit throughout.

mod gemm;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_params, GradCheckConfig, GradCheckReport};
pub use graph::{sigmoid, softplus, FocalParams, Gradients, Graph, Reduce, Var, FOCAL_EPS};
pub use optim::SgdState;
pub use params::{read_weights, ParamId, ParamStore};
pub use tensor::Tensor;

pub type Real = f64;

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("weight format: {0}")]
    Format(String),
    #[error("i/o error on {0}: {1}")]
    Io(String, #[source] std::io::Error),
}

/// Scalar focal loss over probabilities, averaged over all entries.
pub fn focal_loss(probs: &Tensor, targets: &Tensor, params: FocalParams) -> Result<Real, NumericsError> {
    if probs.shape() != targets.shape() || probs.is_empty() {
        return Err(NumericsError::Shape(format!(
            "focal_loss: {:?} vs {:?}",
            probs.shape(),
            targets.shape()
        )));
    }
    let mut total = 0.0;
    for (&p, &t) in probs.data().iter().zip(targets.data()) {
        total += graph::focal_term(p, t, &params)?.0;
    }
    Ok(total / probs.len() as Real)
}

/// `1 − IoU + ρ²/c²` for two 1-D intervals `(start, end)`.
pub fn diou_loss_1d(pred: (Real, Real), gt: (Real, Real)) -> Result<Real, NumericsError> {
    Ok(graph::diou_terms(pred, gt)?.0)
}

#[cfg(test)]
mod tests;
