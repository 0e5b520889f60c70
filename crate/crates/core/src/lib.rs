//! Geostatistical prevalence mapping.
//!
//! Matérn Gaussian random fields are approximated by sparse Gaussian Markov random
//! fields built from a finite-element discretization of the SPDE
//! `(κ² − Δ) S = W / τ` on a planar triangulation. Latent Gaussian models with
//! binomial or Gaussian observations are fitted by Gaussian approximations of the
//! latent conditional posterior combined over a hyperparameter grid. Fitted models
//! feed area-average prevalences, exceedance probabilities and simultaneous
//! excursion regions. A design-based path computes survey-weighted direct estimates
//! and smooths them with a BYM model on the area adjacency graph.

pub mod areal;
pub mod error;
pub mod functionals;
pub mod geometry;
pub mod geostat;
pub mod inference;
pub mod render;
pub mod simulate;
pub mod sparse;
pub mod spde;
pub mod special;
pub mod survey;

pub use error::{Error, Result};
