//! Hyperparameter mode search and integration grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::approx::{Engine, GaussianApprox};
use super::model::LatentModel;
use super::posterior::{FitResult, Mixture};
use crate::error::{Error, Result};

/// Per-dimension offsets (in θ units) around the centre; equal quadrature weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub offsets: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            offsets: vec![-1.5, -0.75, 0.0, 0.75, 1.5],
        }
    }
}

impl GridSpec {
    pub fn single() -> Self {
        Self { offsets: vec![0.0] }
    }

    pub fn with_spacing(points: usize, spacing: f64) -> Self {
        let half = (points as f64 - 1.0) / 2.0;
        Self {
            offsets: (0..points).map(|i| (i as f64 - half) * spacing).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub grid: GridSpec,
    /// Fixed grid centre; when `None` the posterior mode of θ is searched.
    pub center: Option<Vec<f64>>,
    pub max_evaluations: usize,
    /// Grid points whose normalized weight falls below this are dropped.
    pub weight_threshold: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            center: None,
            max_evaluations: 200,
            weight_threshold: 1e-9,
        }
    }
}

impl FitOptions {
    /// A single evaluation at fixed hyperparameters.
    pub fn fixed(theta: Vec<f64>) -> Self {
        Self {
            grid: GridSpec::single(),
            center: Some(theta),
            ..Self::default()
        }
    }
}

/// One integration point of the hyperparameter posterior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperPoint {
    pub theta: Vec<f64>,
    /// Unnormalized `log π̃(θ | y)`; `-inf` if the evaluation failed.
    pub log_post: f64,
    pub weight: f64,
}

#[derive(Clone, Debug)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Derivative-free minimization of `f` from `x0` with initial simplex edge `step`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step: f64,
    max_evals: usize,
    tol: f64,
) -> NelderMeadResult {
    let n = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    if n == 0 {
        let value = eval(x0, &mut evals);
        return NelderMeadResult {
            x: Vec::new(),
            value,
            evaluations: evals,
            converged: true,
        };
    }
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), v0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }
    let mut converged = false;
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[n].1);
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            })
            .fold(0.0f64, f64::max);
        if best.is_finite() && (worst - best).abs() <= tol * (1.0 + best.abs()) && diameter <= 1e-3
        {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|(x, _)| x[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = along(0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let x0 = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    let xs: Vec<f64> = x0
                        .iter()
                        .zip(&item.0)
                        .map(|(a, b)| a + 0.5 * (b - a))
                        .collect();
                    let fs = eval(&xs, &mut evals);
                    *item = (xs, fs);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    NelderMeadResult {
        x,
        value,
        evaluations: evals,
        converged,
    }
}

/// Full tensor grid `center + offsets^d`, first dimension varying slowest.
pub fn tensor_grid(center: &[f64], offsets: &[f64]) -> Vec<Vec<f64>> {
    let d = center.len();
    let k = offsets.len();
    let total = k.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            let mut theta = center.to_vec();
            for dim in (0..d).rev() {
                theta[dim] += offsets[idx % k];
                idx /= k;
            }
            theta
        })
        .collect()
}

/// Normalized weights `∝ exp(log_post) × quadrature weight`.
pub fn integration_weights(log_post: &[f64], quadrature: &[f64]) -> Vec<f64> {
    let max = log_post
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return vec![0.0; log_post.len()];
    }
    let raw: Vec<f64> = log_post
        .iter()
        .zip(quadrature)
        .map(|(lp, q)| {
            if lp.is_finite() {
                (lp - max).exp() * q
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|r| r / total).collect()
}

impl Engine {
    fn log_post(&self, ga: &GaussianApprox) -> f64 {
        ga.log_evidence + self.log_hyperprior(&ga.theta)
    }

    /// Locates the posterior mode of θ. Returns the centre and whether the
    /// search succeeded.
    pub fn find_mode(&self, start: &[f64], max_evals: usize) -> (Vec<f64>, bool) {
        let mut warm: Option<(f64, Vec<f64>)> = None;
        let result = nelder_mead(
            |theta| match self.approximate_evidence(theta, warm.as_ref().map(|w| w.1.as_slice())) {
                Ok(ga) => {
                    let lp = self.log_post(&ga);
                    if warm.as_ref().is_none_or(|w| lp > w.0) {
                        warm = Some((lp, ga.mode));
                    }
                    -lp
                }
                Err(e) => {
                    log::debug!("hyperparameter evaluation at {theta:?} failed: {e}");
                    f64::INFINITY
                }
            },
            start,
            0.5,
            max_evals,
            1e-7,
        );
        if !result.value.is_finite() {
            log::warn!(
                "hyperparameter mode search failed; using the initial values as grid centre"
            );
            return (start.to_vec(), false);
        }
        if !result.converged {
            log::warn!(
                "hyperparameter mode search stopped after {} evaluations without converging",
                result.evaluations
            );
        }
        (result.x, result.converged)
    }
}

/// Evaluates the hyperparameter posterior on a grid centred at the θ mode.
pub fn hyper_grid(
    engine: &Engine,
    options: &FitOptions,
) -> Result<(Vec<f64>, bool, Vec<HyperPoint>, Vec<Option<GaussianApprox>>)> {
    let model = engine.model();
    let (center, found) = match &options.center {
        Some(c) => {
            if c.len() != model.num_hyper() {
                return Err(Error::Dimension(format!(
                    "grid centre has {} values, model has {} hyperparameters",
                    c.len(),
                    model.num_hyper()
                )));
            }
            (c.clone(), true)
        }
        None => engine.find_mode(&model.initial_hyper(), options.max_evaluations),
    };
    if options.grid.offsets.is_empty() {
        return Err(Error::InvalidInput("grid needs at least one offset".into()));
    }
    let centre_fit = engine.approximate_evidence(&center, None)?;
    let warm = centre_fit.mode.clone();
    let thetas = tensor_grid(&center, &options.grid.offsets);
    let results: Vec<Option<GaussianApprox>> = thetas
        .par_iter()
        .map(|theta| {
            if *theta == center {
                return Some(centre_fit.clone());
            }
            match engine.approximate_evidence(theta, Some(&warm)) {
                Ok(ga) => Some(ga),
                Err(e) => {
                    log::warn!("grid point {theta:?} dropped: {e}");
                    None
                }
            }
        })
        .collect();
    let log_post: Vec<f64> = results
        .iter()
        .map(|r| {
            r.as_ref()
                .map_or(f64::NEG_INFINITY, |ga| engine.log_post(ga))
        })
        .collect();
    let quad = vec![1.0; thetas.len()];
    let mut weights = integration_weights(&log_post, &quad);
    for w in weights.iter_mut() {
        if *w < options.weight_threshold {
            *w = 0.0;
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let points = thetas
        .into_iter()
        .zip(log_post)
        .zip(&weights)
        .map(|((theta, log_post), &weight)| HyperPoint {
            theta,
            log_post,
            weight,
        })
        .collect();
    let approx = results
        .into_par_iter()
        .zip(weights.par_iter())
        .map(|(r, &w)| {
            let mut ga = r.filter(|_| w > 0.0)?;
            engine.complete(&mut ga);
            Some(ga)
        })
        .collect();
    Ok((center, found, points, approx))
}

/// Fits a latent Gaussian model: θ mode, integration grid, Gaussian
/// approximations and mixture marginals.
pub fn fit(model: &LatentModel, options: &FitOptions) -> Result<FitResult> {
    let engine = Engine::new(model)?;
    let (theta_mode, mode_found, points, approximations) = hyper_grid(&engine, options)?;
    let active: Vec<(f64, &GaussianApprox)> = points
        .iter()
        .zip(&approximations)
        .filter_map(|(p, a)| a.as_ref().map(|a| (p.weight, a)))
        .collect();
    let summarize = |mean: &(dyn Fn(&GaussianApprox) -> &[f64] + Sync),
                     var: &(dyn Fn(&GaussianApprox) -> &[f64] + Sync),
                     n: usize| {
        (0..n)
            .into_par_iter()
            .map(|i| {
                Mixture::new(
                    active.iter().map(|(w, _)| *w).collect(),
                    active.iter().map(|(_, a)| mean(a)[i]).collect(),
                    active
                        .iter()
                        .map(|(_, a)| var(a)[i].max(0.0).sqrt())
                        .collect(),
                )
                .summary()
            })
            .collect::<Vec<_>>()
    };
    let latent = summarize(&|a| &a.mode, &|a| &a.latent_var, model.latent_dim());
    let predictor = summarize(
        &|a| &a.predictor_mean,
        &|a| &a.predictor_var,
        model.num_obs(),
    );
    Ok(FitResult {
        hyper_names: model.hyper_names(),
        coordinate_names: model.coordinate_names(),
        component_ranges: model
            .components
            .iter()
            .map(|c| {
                (
                    c.name().to_string(),
                    model.component_range(c.name()).unwrap(),
                )
            })
            .collect(),
        theta_mode,
        mode_found,
        points,
        approximations,
        latent,
        predictor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let r = nelder_mead(
            |x| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2) + 0.5 * x[0] * x[1],
            &[0.0, 0.0],
            0.5,
            500,
            1e-12,
        );
        // Stationary point: [[2, 0.5], [0.5, 6]] x = [2, -12].
        let det = 12.0 - 0.25;
        let xs = (2.0 * 6.0 - 0.5 * -12.0) / det;
        let ys = (2.0 * -12.0 - 0.5 * 2.0) / det;
        assert!(r.converged);
        assert!(
            (r.x[0] - xs).abs() < 1e-3 && (r.x[1] - ys).abs() < 1e-3,
            "{:?}",
            r.x
        );
    }

    #[test]
    fn nelder_mead_survives_infinite_regions() {
        let r = nelder_mead(
            |x| {
                if x[0] < -1.0 {
                    f64::INFINITY
                } else {
                    (x[0] - 0.3).powi(2)
                }
            },
            &[0.0],
            2.0,
            200,
            1e-12,
        );
        assert!((r.x[0] - 0.3).abs() < 1e-3);
    }

    #[test]
    fn grid_layout() {
        let g = tensor_grid(&[1.0, 10.0], &[-1.0, 0.0, 1.0]);
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], vec![0.0, 9.0]);
        assert_eq!(g[1], vec![0.0, 10.0]);
        assert_eq!(g[4], vec![1.0, 10.0]);
        assert_eq!(tensor_grid(&[], &[0.0]), vec![Vec::<f64>::new()]);
        assert_eq!(GridSpec::with_spacing(5, 0.75), GridSpec::default());
    }

    #[test]
    fn weights_normalize() {
        assert_eq!(integration_weights(&[-3.0], &[1.0]), vec![1.0]);
        let w = integration_weights(&[-1.0, 0.0, -1.0, f64::NEG_INFINITY], &[1.0; 4]);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((w[0] - w[2]).abs() < 1e-15);
        assert_eq!(w[3], 0.0);
        // Symmetric log-posterior on a symmetric grid gives symmetric weights.
        let grid = tensor_grid(&[0.4], &GridSpec::default().offsets);
        let lp: Vec<f64> = grid.iter().map(|t| -2.0 * (t[0] - 0.4).powi(2)).collect();
        let w = integration_weights(&lp, &[1.0; 5]);
        for i in 0..5 {
            assert!((w[i] - w[4 - i]).abs() < 1e-12);
        }
    }
}
