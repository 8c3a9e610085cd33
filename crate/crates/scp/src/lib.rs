//! Sparse cooperative perturbation attacks on point-set classifiers.
//!
//! The pipeline turns a trained permutation-invariant classifier and a clean
//! point cloud into a sparse adversarial example in three stages:
//!
//! 1. gradient screening ranks points by the norm of the misclassification
//!    loss gradient and keeps the top k as candidates ([`selection`]);
//! 2. a greedy scan grows a subset of candidates, accepting a point only if
//!    the bordered loss Hessian over the subset stays (near) positive
//!    definite — tested through a Schur-complement surplus against an
//!    incrementally extended Cholesky factor ([`hessian_schur`]);
//! 3. a penalty-based optimizer perturbs exactly that subset, binary-searching
//!    the distortion weight while tracking the least-distorted success
//!    ([`attack`]).
//!
//! [`pointset_io`] supplies dataset plumbing (XYZ files, manifests, synthetic
//! shape generation), [`classifier`] the victim model with analytic input
//! gradients, [`metrics`] the distortion and cooperation measures, and
//! [`harness`] the batch orchestration behind the `scp` binary.

pub mod attack;
pub mod classifier;
pub mod error;
pub mod harness;
pub mod hessian_schur;
pub mod linalg;
pub mod metrics;
pub mod objective;
pub mod pointset_io;
pub mod selection;

mod assignment;
mod optim;

#[cfg(test)]
pub(crate) mod stubs;

pub use error::{Error, Result};
