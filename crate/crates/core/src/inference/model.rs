use std::sync::Arc;

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::sparse::{CscMatrix, SparseSym};
use crate::spde::{SpdeStructure, SpdeTheta};

/// Observation stage of a latent Gaussian model.
#[derive(Clone, Debug)]
pub enum Likelihood {
    /// `y_i ~ Binomial(N_i, expit(η_i))`.
    Binomial {
        successes: Vec<f64>,
        trials: Vec<f64>,
    },
    /// `y_i ~ N(η_i, V_i)` with known variances.
    Gaussian { y: Vec<f64>, variance: Vec<f64> },
}

pub(crate) const CURVATURE_FLOOR: f64 = 1e-12;

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Likelihood {
    pub fn len(&self) -> usize {
        match self {
            Likelihood::Binomial { successes, .. } => successes.len(),
            Likelihood::Gaussian { y, .. } => y.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, Likelihood::Gaussian { .. })
    }

    fn validate(&self) -> Result<()> {
        match self {
            Likelihood::Binomial { successes, trials } => {
                if successes.len() != trials.len() {
                    return Err(Error::Dimension(format!(
                        "{} successes but {} trial counts",
                        successes.len(),
                        trials.len()
                    )));
                }
                for (i, (&y, &n)) in successes.iter().zip(trials).enumerate() {
                    if !(y >= 0.0 && n >= y && n.is_finite()) {
                        return Err(Error::InvalidInput(format!(
                            "observation {i}: need 0 <= y <= N, got y={y}, N={n}"
                        )));
                    }
                }
            }
            Likelihood::Gaussian { y, variance } => {
                if y.len() != variance.len() {
                    return Err(Error::Dimension(format!(
                        "{} observations but {} variances",
                        y.len(),
                        variance.len()
                    )));
                }
                if let Some(i) = y.iter().position(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "observation {i} is not finite"
                    )));
                }
                if let Some(i) = variance.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(Error::InvalidInput(format!(
                        "observation {i}: variance must be positive, got {}",
                        variance[i]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Log-likelihood including normalizing constants.
    pub fn log_lik(&self, eta: &[f64]) -> f64 {
        match self {
            Likelihood::Binomial { successes, trials } => eta
                .iter()
                .zip(successes.iter().zip(trials))
                .map(|(&e, (&y, &n))| {
                    ln_gamma(n + 1.0) - ln_gamma(y + 1.0) - ln_gamma(n - y + 1.0) + y * e
                        - n * softplus(e)
                })
                .sum(),
            Likelihood::Gaussian { y, variance } => eta
                .iter()
                .zip(y.iter().zip(variance))
                .map(|(&e, (&y, &v))| {
                    -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (y - e) * (y - e) / v)
                })
                .sum(),
        }
    }

    /// First derivative and negative second derivative of the log-likelihood at
    /// each `η_i`. Returns the number of curvatures clamped to the floor.
    pub fn derivatives(&self, eta: &[f64], grad: &mut [f64], curv: &mut [f64]) -> usize {
        let mut clamped = 0;
        match self {
            Likelihood::Binomial { successes, trials } => {
                for i in 0..eta.len() {
                    let p = crate::special::expit(eta[i]);
                    grad[i] = successes[i] - trials[i] * p;
                    let h = trials[i] * p * (1.0 - p);
                    if h < CURVATURE_FLOOR {
                        curv[i] = CURVATURE_FLOOR;
                        clamped += 1;
                    } else {
                        curv[i] = h;
                    }
                }
            }
            Likelihood::Gaussian { y, variance } => {
                for i in 0..eta.len() {
                    grad[i] = (y[i] - eta[i]) / variance[i];
                    curv[i] = 1.0 / variance[i];
                }
            }
        }
        clamped
    }
}

/// One additive block of the latent vector.
#[derive(Clone, Debug)]
pub enum Component {
    /// Scalar β₀ entering every linear predictor.
    Intercept { name: String },
    /// Fixed effects; `columns[k][i]` is covariate `k` at observation `i`.
    Covariates {
        name: String,
        columns: Vec<Vec<f64>>,
    },
    /// SPDE field weights `w` entering through the projector `A w`.
    Spde {
        name: String,
        structure: Arc<SpdeStructure>,
        projector: CscMatrix,
        initial: SpdeTheta,
    },
    /// Exchangeable effects; observation `i` receives level `index[i]`.
    Iid {
        name: String,
        index: Vec<usize>,
        size: usize,
        initial_log_precision: f64,
    },
    /// Intrinsic CAR effect with structure `R = D − W`, constrained to sum to zero
    /// on each connected component. Observations with `None` get no contribution.
    Icar {
        name: String,
        structure: SparseSym,
        index: Vec<Option<usize>>,
        initial_log_precision: f64,
    },
}

impl Component {
    pub fn intercept() -> Self {
        Component::Intercept {
            name: "intercept".into(),
        }
    }

    /// Observation-level nugget: one iid effect per observation.
    pub fn nugget(num_obs: usize, initial_log_precision: f64) -> Self {
        Component::Iid {
            name: "nugget".into(),
            index: (0..num_obs).collect(),
            size: num_obs,
            initial_log_precision,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Component::Intercept { name }
            | Component::Covariates { name, .. }
            | Component::Spde { name, .. }
            | Component::Iid { name, .. }
            | Component::Icar { name, .. } => name,
        }
    }

    /// Number of latent coordinates.
    pub fn size(&self) -> usize {
        match self {
            Component::Intercept { .. } => 1,
            Component::Covariates { columns, .. } => columns.len(),
            Component::Spde { structure, .. } => structure.dim(),
            Component::Iid { size, .. } => *size,
            Component::Icar { structure, .. } => structure.dim(),
        }
    }

    pub fn num_hyper(&self) -> usize {
        match self {
            Component::Spde { .. } => 2,
            Component::Iid { .. } | Component::Icar { .. } => 1,
            _ => 0,
        }
    }

    pub fn hyper_names(&self) -> Vec<String> {
        let n = self.name();
        match self {
            Component::Spde { .. } => vec![format!("{n}.log_tau"), format!("{n}.log_kappa")],
            Component::Iid { .. } | Component::Icar { .. } => vec![format!("{n}.log_precision")],
            _ => Vec::new(),
        }
    }

    pub fn initial_hyper(&self) -> Vec<f64> {
        match self {
            Component::Spde { initial, .. } => vec![initial.log_tau, initial.log_kappa],
            Component::Iid {
                initial_log_precision,
                ..
            }
            | Component::Icar {
                initial_log_precision,
                ..
            } => vec![*initial_log_precision],
            _ => Vec::new(),
        }
    }

    fn validate(&self, num_obs: usize) -> Result<()> {
        let name = self.name();
        match self {
            Component::Intercept { .. } => {}
            Component::Covariates { columns, .. } => {
                for (k, c) in columns.iter().enumerate() {
                    if c.len() != num_obs {
                        return Err(Error::Dimension(format!(
                            "{name}: covariate {k} has {} values for {num_obs} observations",
                            c.len()
                        )));
                    }
                    if c.iter().any(|v| !v.is_finite()) {
                        return Err(Error::InvalidInput(format!(
                            "{name}: covariate {k} has non-finite values"
                        )));
                    }
                }
            }
            Component::Spde {
                structure,
                projector,
                ..
            } => {
                if projector.nrows() != num_obs || projector.ncols() != structure.dim() {
                    return Err(Error::Dimension(format!(
                        "{name}: projector is {}x{}, expected {num_obs}x{}",
                        projector.nrows(),
                        projector.ncols(),
                        structure.dim()
                    )));
                }
            }
            Component::Iid { index, size, .. } => {
                if index.len() != num_obs {
                    return Err(Error::Dimension(format!(
                        "{name}: index has {} entries for {num_obs} observations",
                        index.len()
                    )));
                }
                if let Some(&i) = index.iter().find(|&&i| i >= *size) {
                    return Err(Error::Dimension(format!("{name}: level {i} >= {size}")));
                }
            }
            Component::Icar {
                structure, index, ..
            } => {
                if index.len() != num_obs {
                    return Err(Error::Dimension(format!(
                        "{name}: index has {} entries for {num_obs} observations",
                        index.len()
                    )));
                }
                let k = structure.dim();
                if let Some(i) = index.iter().flatten().find(|&&i| i >= k) {
                    return Err(Error::Dimension(format!("{name}: area {i} >= {k}")));
                }
                for (i, d) in structure.diagonal().iter().enumerate() {
                    if !(*d > 0.0) {
                        return Err(Error::InvalidInput(format!(
                            "{name}: node {i} has no neighbours"
                        )));
                    }
                }
                let ones = vec![1.0; k];
                let r = structure.mul_vec(&ones);
                let scale = structure.max_abs();
                if r.iter().any(|v| v.abs() > 1e-9 * scale) {
                    return Err(Error::InvalidInput(format!(
                        "{name}: structure rows must sum to zero"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Full model description: observation stage plus additive latent components.
#[derive(Clone, Debug)]
pub struct LatentModel {
    pub likelihood: Likelihood,
    pub components: Vec<Component>,
    /// Prior precision of intercept and covariate coefficients.
    pub fixed_effect_precision: f64,
    /// Standard deviation of the Gaussian prior on each hyperparameter, centred
    /// at the component's initial value.
    pub hyperprior_sd: f64,
}

impl LatentModel {
    pub fn new(likelihood: Likelihood, components: Vec<Component>) -> Result<Self> {
        let m = Self {
            likelihood,
            components,
            fixed_effect_precision: 0.001,
            hyperprior_sd: 1.5,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.likelihood.validate()?;
        let n = self.likelihood.len();
        if n == 0 {
            return Err(Error::NoData("model has no observations".into()));
        }
        if self.components.is_empty() {
            return Err(Error::InvalidInput("model has no latent components".into()));
        }
        let mut names = std::collections::HashSet::new();
        for c in &self.components {
            if !names.insert(c.name()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate component name {}",
                    c.name()
                )));
            }
            c.validate(n)?;
        }
        if !(self.fixed_effect_precision > 0.0 && self.hyperprior_sd > 0.0) {
            return Err(Error::InvalidInput(
                "prior precisions must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn num_obs(&self) -> usize {
        self.likelihood.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.components.iter().map(Component::size).sum()
    }

    pub fn num_hyper(&self) -> usize {
        self.components.iter().map(Component::num_hyper).sum()
    }

    pub fn hyper_names(&self) -> Vec<String> {
        self.components
            .iter()
            .flat_map(|c| c.hyper_names())
            .collect()
    }

    pub fn initial_hyper(&self) -> Vec<f64> {
        self.components
            .iter()
            .flat_map(|c| c.initial_hyper())
            .collect()
    }

    /// Latent index range of the named component.
    pub fn component_range(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let mut start = 0;
        for c in &self.components {
            let end = start + c.size();
            if c.name() == name {
                return Some(start..end);
            }
            start = end;
        }
        None
    }

    /// Hyperparameter index range of the named component.
    pub fn hyper_range(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let mut start = 0;
        for c in &self.components {
            let end = start + c.num_hyper();
            if c.name() == name {
                return Some(start..end);
            }
            start = end;
        }
        None
    }

    /// Names of latent coordinates, `component[i]`.
    pub fn coordinate_names(&self) -> Vec<String> {
        self.components
            .iter()
            .flat_map(|c| {
                let name = c.name().to_string();
                (0..c.size()).map(move |i| format!("{name}[{i}]"))
            })
            .collect()
    }

    /// Observation-by-latent design matrix `X` with `η = X x`.
    pub fn design(&self) -> CscMatrix {
        let n = self.num_obs();
        let mut trip = Vec::new();
        let mut off = 0;
        for c in &self.components {
            match c {
                Component::Intercept { .. } => trip.extend((0..n).map(|i| (i, off, 1.0))),
                Component::Covariates { columns, .. } => {
                    for (k, col) in columns.iter().enumerate() {
                        trip.extend(
                            col.iter()
                                .enumerate()
                                .filter(|(_, v)| **v != 0.0)
                                .map(|(i, &v)| (i, off + k, v)),
                        );
                    }
                }
                Component::Spde { projector, .. } => {
                    trip.extend(projector.triplets().map(|(i, j, v)| (i, off + j, v)));
                }
                Component::Iid { index, .. } => {
                    trip.extend(index.iter().enumerate().map(|(i, &l)| (i, off + l, 1.0)));
                }
                Component::Icar { index, .. } => {
                    trip.extend(
                        index
                            .iter()
                            .enumerate()
                            .filter_map(|(i, l)| l.map(|l| (i, off + l, 1.0))),
                    );
                }
            }
            off += c.size();
        }
        CscMatrix::from_triplets(n, off, &trip)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_curvature_matches_finite_differences() {
        let lik = Likelihood::Binomial {
            successes: vec![0.0, 3.0, 7.0, 12.0],
            trials: vec![5.0, 10.0, 9.0, 12.0],
        };
        let eta = [-2.3, 0.4, 1.1, 3.0];
        let (mut g, mut h) = ([0.0; 4], [0.0; 4]);
        lik.derivatives(&eta, &mut g, &mut h);
        let step = 1e-5;
        for i in 0..4 {
            let (mut gp, mut gm, mut hh) = ([0.0; 4], [0.0; 4], [0.0; 4]);
            let mut e = eta;
            e[i] += step;
            lik.derivatives(&e, &mut gp, &mut hh);
            e[i] -= 2.0 * step;
            lik.derivatives(&e, &mut gm, &mut hh);
            let fd = -(gp[i] - gm[i]) / (2.0 * step);
            assert!((fd - h[i]).abs() <= 1e-5 * h[i].abs(), "{fd} vs {}", h[i]);

            // Gradient against the log-likelihood itself.
            let mut e = eta;
            e[i] += step;
            let lp = lik.log_lik(&e);
            e[i] -= 2.0 * step;
            let lm = lik.log_lik(&e);
            assert!(((lp - lm) / (2.0 * step) - g[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn binomial_log_lik_includes_coefficient() {
        let lik = Likelihood::Binomial {
            successes: vec![3.0],
            trials: vec![10.0],
        };
        let p: f64 = 0.3;
        let want = (120.0f64).ln() + 3.0 * p.ln() + 7.0 * (1.0 - p).ln();
        assert!((lik.log_lik(&[crate::special::logit(p)]) - want).abs() < 1e-12);
    }

    #[test]
    fn extreme_probabilities_are_clamped() {
        let lik = Likelihood::Binomial {
            successes: vec![0.0],
            trials: vec![1.0],
        };
        let (mut g, mut h) = ([0.0], [0.0]);
        assert_eq!(lik.derivatives(&[-60.0], &mut g, &mut h), 1);
        assert_eq!(h[0], CURVATURE_FLOOR);
        assert!(lik.log_lik(&[-800.0]).is_finite());
    }

    #[test]
    fn validation_rejects_inconsistent_models() {
        let lik = Likelihood::Binomial {
            successes: vec![4.0],
            trials: vec![3.0],
        };
        assert!(LatentModel::new(lik, vec![Component::intercept()]).is_err());
        let lik = Likelihood::Gaussian {
            y: vec![0.0, 1.0],
            variance: vec![1.0, 0.0],
        };
        assert!(LatentModel::new(lik, vec![Component::intercept()]).is_err());
        let lik = Likelihood::Gaussian {
            y: vec![0.0, 1.0],
            variance: vec![1.0, 1.0],
        };
        let bad = Component::Iid {
            name: "u".into(),
            index: vec![0, 2],
            size: 2,
            initial_log_precision: 0.0,
        };
        assert!(LatentModel::new(lik, vec![bad]).is_err());
    }

    #[test]
    fn design_and_layout() {
        let lik = Likelihood::Gaussian {
            y: vec![0.0; 3],
            variance: vec![1.0; 3],
        };
        let m = LatentModel::new(
            lik,
            vec![
                Component::intercept(),
                Component::Covariates {
                    name: "z".into(),
                    columns: vec![vec![1.0, 2.0, 3.0]],
                },
                Component::nugget(3, 2.0),
            ],
        )
        .unwrap();
        assert_eq!(m.latent_dim(), 5);
        assert_eq!(m.component_range("nugget"), Some(2..5));
        assert_eq!(m.hyper_names(), vec!["nugget.log_precision"]);
        let x = m.design().to_dense();
        assert_eq!(
            x.row(1).iter().copied().collect::<Vec<_>>(),
            vec![1.0, 2.0, 0.0, 1.0, 0.0]
        );
    }
}
