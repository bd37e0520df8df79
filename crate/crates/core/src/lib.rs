//! Separable cosparse analysis operator learning.
//!
//! A separable analysis operator is a list of small factors `Ω_i ∈ R^{k_i×n_i}`
//! acting on an order-N signal by n-mode products. The factors are learned
//! with a geometric conjugate gradient method on a product of oblique
//! manifolds ([`learn`]) and then used as a patch-based regularizer for
//! volumetric reconstruction ([`reconstruct`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod learn;
pub mod manifold;
pub mod objective;
pub mod opfile;
pub mod reconstruct;
mod reduce;
pub mod synthetic;
pub mod tensor;
pub mod volume;

pub use error::{Barrier, Error, Result};
pub use learn::{learn_operators, LearnReport, SolverConfig, Termination};
pub use manifold::{OperatorFactor, ProductPoint, TangentVector};
pub use objective::LearningParams;
pub use tensor::{DenseTensor, RealMatrix};
pub use volume::{TrainingSet, Volume};
