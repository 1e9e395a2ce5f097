//! Dense tensors, named parameter sets, hand-written layer gradients, SGD and
//! a finite-difference gradient checker.

mod gradcheck;
mod layers;
mod optim;
mod params;
mod rng;
mod tensor;

use rand::Rng;
use thiserror::Error;

pub use gradcheck::{check_gradients, GradCheckReport, GRADCHECK_FLOOR};
pub use layers::{
    embedding_backward, embedding_lookup, linear_backward, linear_forward, relu, relu_backward,
    softmax, softmax_backward, Bias, LinearGrads,
};
pub use optim::{sgd_step, sgd_step_in_place};
pub use params::{GradSet, ParamSet};
pub use rng::{splitmix64, tags, SeedStream};
pub use tensor::{dot, Tensor};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("id {id} out of range for vocabulary of {vocab}")]
    IdOutOfRange { id: usize, vocab: usize },
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parameter file: {0}")]
    Format(String),
}

/// Tensor with entries drawn from `uniform(−1/√fan_in, 1/√fan_in)`.
pub fn uniform_init<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}
