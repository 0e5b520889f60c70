//! Latent Gaussian models: Laplace approximation at fixed hyperparameters,
//! grid integration over the hyperparameter posterior, mixture marginals and
//! joint posterior sampling.

mod approx;
mod grid;
mod model;
mod posterior;

pub use approx::{gaussian_approx, Constraint, Engine, GaussianApprox};
pub use grid::{
    fit, hyper_grid, integration_weights, nelder_mead, tensor_grid, FitOptions, GridSpec,
    HyperPoint, NelderMeadResult,
};
pub use model::{Component, LatentModel, Likelihood};
pub use posterior::{
    sample_joint, write_summaries, FitResult, JointSamples, MarginalSummary, Mixture,
};
