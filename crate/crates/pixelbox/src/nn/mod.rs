//! Minimal dense-tensor network substrate: layers with exact adjoint
//! backward passes, the two-branch detector, SGD with momentum, and
//! checkpoint serialization. Single-threaded and deterministic.

pub mod checkpoint;
pub mod conv;
pub mod net;
pub mod optim;
pub mod resample;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use conv::Conv2d;
pub use net::{Network, NetworkActivations, NetworkConfig, NetworkGradients};
pub use optim::{OptimizerState, SgdConfig};
pub use resample::{
    bilinear_upsample_backward, bilinear_upsample_forward, crop_center_backward,
    crop_center_forward,
};

use crate::tensor::Tensor;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("upsample target {target:?} smaller than input {from:?}")]
    DownscaleRequest { from: (usize, usize), target: (usize, usize) },
    #[error("crop target {target:?} larger than input {from:?}")]
    CropTooLarge { from: (usize, usize), target: (usize, usize) },
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
}

/// Elementwise max(0, x).
pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Gates the upstream gradient by the forward input's sign. The
/// derivative at exactly 0 is taken as 0.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    debug_assert_eq!(x.shape(), grad_out.shape());
    let mut grad_in = grad_out.clone();
    for (g, &v) in grad_in.data_mut().iter_mut().zip(x.data()) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
    grad_in
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::from_vec([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_gradient_gating() {
        let x = Tensor::from_vec([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let g = Tensor::from_vec([1, 1, 1, 3], vec![5.0, 5.0, 5.0]).unwrap();
        assert_eq!(relu_backward(&x, &g).data(), &[0.0, 0.0, 5.0]);
    }
}
