//! Small CPU tensor library with reverse-mode autodiff.
//!
//! Only what the CycleDM networks need: broadcasting arithmetic, a few
//! activations, 2-D convolution (plus its two adjoints), nearest upsampling,
//! concatenation and matrix products. Every backward rule is itself
//! differentiable, so `grad(.., create_graph = true)` supports gradient
//! penalties on input gradients.

pub mod nn;
pub mod optim;
mod tensor;
mod var;

pub use tensor::{broadcast_shape, conv2d, conv2d_weight, conv_transpose2d, ConvGeom, Tensor};
pub use var::{grad, Var};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Tensor of i.i.d. standard normal draws, filled in row-major order.
pub fn randn(rng: &mut impl Rng, shape: impl Into<Vec<usize>>) -> Tensor {
    let shape = shape.into();
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| StandardNormal.sample(rng)).collect())
}
