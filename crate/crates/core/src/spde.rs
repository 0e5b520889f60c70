//! Matérn covariance and the α = 2 SPDE precision on a finite-element mesh.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{Error, Result};
use crate::geometry::FemMatrices;
use crate::sparse::{CholeskyFactor, CscMatrix, SparseSym};
use crate::special::bessel_k;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    pub sigma2: f64,
    pub kappa: f64,
    pub nu: f64,
}

impl MaternParams {
    pub fn new(sigma2: f64, kappa: f64, nu: f64) -> Result<Self> {
        let p = Self { sigma2, kappa, nu };
        p.validate()?;
        Ok(p)
    }

    /// Parameters implied by an SPDE configuration with smoothness ν = 1.
    pub fn from_theta(theta: SpdeTheta) -> Self {
        let kappa = theta.kappa();
        Self {
            sigma2: sigma_from_tau(theta.tau(), kappa, 1.0),
            kappa,
            nu: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma2", self.sigma2),
            ("kappa", self.kappa),
            ("nu", self.nu),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "Matérn {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// SPDE exponent α = ν + d/2 in two dimensions.
    pub fn alpha(&self) -> f64 {
        self.nu + 1.0
    }

    pub fn practical_range(&self) -> f64 {
        practical_range(self.kappa, self.nu)
    }

    pub fn tau(&self) -> f64 {
        tau_from_sigma(self.sigma2, self.kappa, self.nu)
    }
}

/// Internal parameterization `(log τ, log κ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpdeTheta {
    pub log_tau: f64,
    pub log_kappa: f64,
}

impl SpdeTheta {
    pub fn new(log_tau: f64, log_kappa: f64) -> Self {
        Self { log_tau, log_kappa }
    }

    pub fn from_tau_kappa(tau: f64, kappa: f64) -> Self {
        Self::new(tau.ln(), kappa.ln())
    }

    pub fn from_matern(p: &MaternParams) -> Self {
        Self::from_tau_kappa(p.tau(), p.kappa)
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    pub fn kappa(&self) -> f64 {
        self.log_kappa.exp()
    }

    pub fn is_finite(&self) -> bool {
        self.log_tau.is_finite() && self.log_kappa.is_finite()
    }
}

/// Matérn covariance `σ²/(2^{ν−1}Γ(ν)) (κd)^ν K_ν(κd)`.
pub fn matern_cov(distance: f64, params: &MaternParams) -> f64 {
    params.sigma2 * matern_corr(distance, params.kappa, params.nu)
}

pub fn matern_corr(distance: f64, kappa: f64, nu: f64) -> f64 {
    let x = kappa * distance;
    if x <= 0.0 {
        return 1.0;
    }
    if x > 700.0 {
        return 0.0;
    }
    let log_c = (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu) + nu * x.ln();
    (log_c.exp() * bessel_k(nu, x)).min(1.0)
}

/// τ solving `τ² = Γ(ν) / (Γ(α) 4π κ^{2ν} σ²)` with α = ν + 1.
pub fn tau_from_sigma(sigma2: f64, kappa: f64, nu: f64) -> f64 {
    (gamma(nu) / (gamma(nu + 1.0) * 4.0 * PI * kappa.powf(2.0 * nu) * sigma2)).sqrt()
}

/// Marginal variance σ² implied by `(τ, κ, ν)`; inverse of [`tau_from_sigma`].
pub fn sigma_from_tau(tau: f64, kappa: f64, nu: f64) -> f64 {
    gamma(nu) / (gamma(nu + 1.0) * 4.0 * PI * kappa.powf(2.0 * nu) * tau * tau)
}

/// Distance `√(8ν)/κ` at which the correlation is about 0.13.
pub fn practical_range(kappa: f64, nu: f64) -> f64 {
    (8.0 * nu).sqrt() / kappa
}

/// The three θ-independent matrices `C`, `G`, `G C⁻¹ G` stored on a shared
/// sparsity pattern, so that `Q(θ)` is a cheap linear combination.
#[derive(Clone, Debug)]
pub struct SpdeStructure {
    pattern: CscMatrix,
    c: Vec<f64>,
    g: Vec<f64>,
    gcg: Vec<f64>,
}

impl SpdeStructure {
    pub fn new(fem: &FemMatrices) -> Result<Self> {
        let cd = fem.c_diag();
        if let Some((i, v)) = cd.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::Assembly {
                message: format!("mass matrix entry {i} is {v}"),
                min_eigenvalue: *v,
            });
        }
        let inv: Vec<f64> = cd.iter().map(|v| 1.0 / v).collect();
        let g = fem.g.as_csc();
        let gcg = g.scale_cols(&inv).matmul(g);
        let gcg = gcg.add_scaled(0.5, &gcg.transpose(), 0.5);
        let pattern = fem
            .c
            .as_csc()
            .add_scaled(1.0, g, 1.0)
            .add_scaled(1.0, &gcg, 1.0);
        let align = |m: &CscMatrix| pattern.add_scaled(0.0, m, 1.0).values().to_vec();
        Ok(Self {
            c: align(fem.c.as_csc()),
            g: align(g),
            gcg: align(&gcg),
            pattern,
        })
    }

    pub fn dim(&self) -> usize {
        self.pattern.nrows()
    }

    /// `τ²(κ⁴C + 2κ²G + G C⁻¹ G)` without a definiteness check.
    pub fn precision(&self, theta: SpdeTheta) -> SparseSym {
        let t2 = (2.0 * theta.log_tau).exp();
        let k2 = (2.0 * theta.log_kappa).exp();
        let (a, b) = (t2 * k2 * k2, 2.0 * t2 * k2);
        let mut q = self.pattern.clone();
        for (k, v) in q.values_mut().iter_mut().enumerate() {
            *v = a * self.c[k] + b * self.g[k] + t2 * self.gcg[k];
        }
        SparseSym::new_unchecked(q)
    }
}

/// Assembles the SPDE precision and verifies it by a Cholesky factorization.
pub fn assemble_precision(fem: &FemMatrices, theta: SpdeTheta) -> Result<SparseSym> {
    if !theta.is_finite() {
        return Err(Error::Assembly {
            message: format!("non-finite parameters {theta:?}"),
            min_eigenvalue: f64::NAN,
        });
    }
    let q = SpdeStructure::new(fem)?.precision(theta);
    match CholeskyFactor::new(&q) {
        Ok(_) => Ok(q),
        Err(Error::NotPositiveDefinite { pivot, value }) => Err(Error::Assembly {
            message: format!("Cholesky pivot {pivot} is {value:e}"),
            min_eigenvalue: smallest_eigenvalue_estimate(&q),
        }),
        Err(e) => Err(e),
    }
}

/// Smallest eigenvalue of a symmetric matrix by power iteration on `sI − Q`,
/// with `s` a Gershgorin upper bound.
pub fn smallest_eigenvalue_estimate(q: &SparseSym) -> f64 {
    let n = q.dim();
    if n == 0 {
        return f64::NAN;
    }
    let mut shift = 0.0f64;
    for j in 0..n {
        let (_, vals) = q.col(j);
        shift = shift.max(vals.iter().map(|v| v.abs()).sum());
    }
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + (i % 7) as f64 * 0.1).collect();
    let mut lambda = 0.0;
    for _ in 0..500 {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        x.iter_mut().for_each(|v| *v /= norm);
        let qx = q.mul_vec(&x);
        let y: Vec<f64> = x.iter().zip(&qx).map(|(a, b)| shift * a - b).collect();
        lambda = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        x = y;
    }
    shift - lambda
}
