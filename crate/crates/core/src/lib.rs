//! Covariate-dependent discrete graphical models.
//!
//! * [`loglinear`]: hierarchical log-linear models whose interaction
//!   parameters are linear in covariates, cell probabilities, designs and
//!   contingency tables.
//! * [`mle`]: exact score, Hessian and damped Newton maximum likelihood.
//! * [`inference`]: Wald, likelihood-ratio and homogeneity tests.
//! * [`ising`]: dynamic Ising models, Gibbs sampling and per-vertex
//!   pseudo-likelihood.
//! * [`bdmcmc`]: birth-death MCMC neighborhood selection with BIC/EBIC
//!   scores, model averaging and AND/OR edge combination.
//! * [`io`], [`experiment`]: file formats, simulation studies and the task
//!   runner behind the `covgm` binary.
//!
//! Examples (`cargo run --release --example <name>`):
//!
//! * `exact_mle`: fit and Wald intervals on a two-vertex graph.
//! * `likelihood_ratio`: test whether the covariate changes the structure.
//! * `pseudo_likelihood`: Gibbs simulation and pseudo-likelihood recovery.
//! * `neighborhood_selection`: structure learning on a planted graph.
//! * `contingency_tables`: table conversion and file round trips.
//! * `study_report`: reduced accuracy and LRT studies.
//!
//! Randomness flows from one root seed through [`seed::stream`], so every
//! result is reproducible and independent of the thread count.

pub mod bdmcmc;
pub mod error;
pub mod experiment;
pub mod inference;
pub mod io;
pub mod ising;
pub mod loglinear;
pub mod mle;
pub mod seed;

pub use error::{Error, ErrorKind, Result};
