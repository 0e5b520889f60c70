//! Gaussian approximation of the latent posterior at fixed hyperparameters.

use std::sync::Arc;

use nalgebra::DMatrix;

use super::model::{Component, LatentModel};
use crate::error::{Error, Result};
use crate::sparse::{CholeskyFactor, CscMatrix, SparseSym, SymbolicCholesky};
use crate::spde::SpdeStructure;

pub const MAX_NEWTON_ITERATIONS: usize = 100;
pub const MAX_HALVINGS: usize = 30;
pub const NEWTON_TOL: f64 = 1e-8;

/// Sum-to-zero constraints `C x = 0` imposed by conditioning on the
/// posterior (kriging correction).
#[derive(Clone, Debug)]
pub struct Constraint {
    sets: Vec<Vec<usize>>,
    /// `W = Q⁻¹ Cᵀ`, one column per constraint.
    w: Vec<Vec<f64>>,
    /// `(C Q⁻¹ Cᵀ)⁻¹`.
    s_inv: DMatrix<f64>,
    log_det_s: f64,
}

impl Constraint {
    fn new(sets: &[Vec<usize>], factor: &CholeskyFactor) -> Result<Self> {
        let n = factor.dim();
        let k = sets.len();
        let w: Vec<Vec<f64>> = sets
            .iter()
            .map(|set| {
                let mut e = vec![0.0; n];
                set.iter().for_each(|&i| e[i] = 1.0);
                factor.solve(&e)
            })
            .collect();
        let s = DMatrix::from_fn(k, k, |a, b| sets[a].iter().map(|&i| w[b][i]).sum::<f64>());
        let s = (&s + s.transpose()) * 0.5;
        let chol = s
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("constraint covariance is singular".into()))?;
        let log_det_s = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self {
            sets: sets.to_vec(),
            w,
            s_inv: chol.inverse(),
            log_det_s,
        })
    }

    /// `x ← x − W S⁻¹ C x`.
    pub fn correct(&self, x: &mut [f64]) {
        let cx: Vec<f64> = self
            .sets
            .iter()
            .map(|s| s.iter().map(|&i| x[i]).sum())
            .collect();
        let t = &self.s_inv * nalgebra::DVector::from_vec(cx);
        for (a, wa) in self.w.iter().enumerate() {
            if t[a] != 0.0 {
                x.iter_mut().zip(wa).for_each(|(xi, wi)| *xi -= t[a] * wi);
            }
        }
    }

    /// Diagonal of `W S⁻¹ Wᵀ`, the variance removed by the constraint.
    fn variance_reduction(&self, n: usize) -> Vec<f64> {
        let k = self.w.len();
        (0..n)
            .map(|i| {
                let mut acc = 0.0;
                for a in 0..k {
                    for b in 0..k {
                        acc += self.w[a][i] * self.s_inv[(a, b)] * self.w[b][i];
                    }
                }
                acc
            })
            .collect()
    }

    /// `(Wᵀa)ᵀ S⁻¹ (Wᵀa)`, the variance of `aᵀx` removed by the constraint.
    fn reduction_for(&self, a: &[f64]) -> f64 {
        let wa = nalgebra::DVector::from_iterator(
            self.w.len(),
            self.w
                .iter()
                .map(|w| w.iter().zip(a).map(|(x, y)| x * y).sum::<f64>()),
        );
        wa.dot(&(&self.s_inv * &wa))
    }

    pub fn num_constraints(&self) -> usize {
        self.sets.len()
    }
}

#[derive(Clone, Debug)]
enum PriorBlock {
    Fixed {
        diag_pos: Vec<usize>,
    },
    Spde {
        hyper: usize,
        structure: Arc<SpdeStructure>,
        pos: Vec<usize>,
        symbolic: Arc<SymbolicCholesky>,
    },
    Iid {
        hyper: usize,
        diag_pos: Vec<usize>,
    },
    Icar {
        hyper: usize,
        values: Vec<f64>,
        pos: Vec<usize>,
        rank: usize,
        log_gdet: f64,
    },
}

struct PriorEval {
    lower: Vec<f64>,
    half_log_det: f64,
}

/// Precomputed structure of a model shared across hyperparameter values.
#[derive(Clone, Debug)]
pub struct Engine {
    model: LatentModel,
    dim: usize,
    design: CscMatrix,
    row_ptr: Vec<usize>,
    row_cols: Vec<usize>,
    row_vals: Vec<f64>,
    symbolic: Arc<SymbolicCholesky>,
    pair_ptr: Vec<usize>,
    pair_pos: Vec<usize>,
    pair_coef: Vec<f64>,
    blocks: Vec<PriorBlock>,
    constraints: Vec<Vec<usize>>,
    log_det_cct: f64,
}

/// Laplace approximation at one hyperparameter value.
#[derive(Clone, Debug)]
pub struct GaussianApprox {
    pub theta: Vec<f64>,
    /// Constrained posterior mode of the latent vector.
    pub mode: Vec<f64>,
    pub latent_var: Vec<f64>,
    pub predictor_mean: Vec<f64>,
    pub predictor_var: Vec<f64>,
    /// Laplace approximation of `log π(y | θ)`.
    pub log_evidence: f64,
    pub iterations: usize,
    /// Objective value after each accepted Newton step.
    pub trace: Vec<f64>,
    /// Gradient max-norm of the log posterior at the mode, projected onto the
    /// constraint space.
    pub gradient_norm: f64,
    pub clamped: usize,
    pub precision: SparseSym,
    pub factor: CholeskyFactor,
    pub constraint: Option<Constraint>,
}

impl GaussianApprox {
    /// Draw from the approximation given a standard normal vector.
    pub fn sample_with(&self, z: &[f64]) -> Vec<f64> {
        let mut v = self.factor.sample_with(z);
        if let Some(c) = &self.constraint {
            c.correct(&mut v);
        }
        v.iter_mut().zip(&self.mode).for_each(|(a, m)| *a += m);
        v
    }

    /// Mean and variance of `Σ aᵢ xᵢ` for sparse coefficients `(i, aᵢ)`.
    pub fn linear_combination(&self, a: &[(usize, f64)]) -> (f64, f64) {
        let mut dense = vec![0.0; self.mode.len()];
        for &(i, v) in a {
            dense[i] += v;
        }
        let mean = dense.iter().zip(&self.mode).map(|(x, m)| x * m).sum();
        let qa = self.factor.solve(&dense);
        let mut var: f64 = dense.iter().zip(&qa).map(|(x, y)| x * y).sum();
        if let Some(c) = &self.constraint {
            var -= c.reduction_for(&dense);
        }
        (mean, var.max(0.0))
    }

    pub fn latent_sd(&self) -> Vec<f64> {
        self.latent_var.iter().map(|v| v.max(0.0).sqrt()).collect()
    }
}

/// Connected components of a symmetric pattern.
pub(crate) fn connected_components(m: &CscMatrix) -> Vec<Vec<usize>> {
    let n = m.nrows();
    let mut label = vec![usize::MAX; n];
    let mut comps = Vec::new();
    for s in 0..n {
        if label[s] != usize::MAX {
            continue;
        }
        let id = comps.len();
        let mut stack = vec![s];
        let mut members = Vec::new();
        label[s] = id;
        while let Some(v) = stack.pop() {
            members.push(v);
            let (rows, vals) = m.col(v);
            for (&u, &val) in rows.iter().zip(vals) {
                if val != 0.0 && label[u] == usize::MAX {
                    label[u] = id;
                    stack.push(u);
                }
            }
        }
        members.sort_unstable();
        comps.push(members);
    }
    comps
}

/// Log of the product of non-zero eigenvalues of a graph Laplacian, using
/// `n_c · det(R_c with one row and column removed)` per component.
pub(crate) fn laplacian_log_gdet(r: &SparseSym, comps: &[Vec<usize>]) -> Result<f64> {
    let mut total = 0.0;
    for comp in comps {
        let n = comp.len();
        if n < 2 {
            continue;
        }
        let mut local = vec![usize::MAX; r.dim()];
        for (k, &v) in comp.iter().skip(1).enumerate() {
            local[v] = k;
        }
        let trip: Vec<_> = comp
            .iter()
            .skip(1)
            .flat_map(|&j| {
                let (rows, vals) = r.col(j);
                let lj = local[j];
                let local = &local;
                rows.iter()
                    .zip(vals)
                    .filter(move |(&i, _)| local[i] != usize::MAX && local[i] >= lj)
                    .map(move |(&i, &v)| (local[i], lj, v))
            })
            .collect();
        let sub = SparseSym::from_lower_triplets(n - 1, &trip);
        total += (n as f64).ln() + CholeskyFactor::new(&sub)?.log_det();
    }
    Ok(total)
}

impl Engine {
    pub fn new(model: &LatentModel) -> Result<Self> {
        model.validate()?;
        let model = model.clone();
        let dim = model.latent_dim();
        let nobs = model.num_obs();
        let design = model.design();
        let xt = design.transpose();
        let (row_ptr, row_cols, row_vals) = (
            xt.col_ptr().to_vec(),
            xt.row_idx().to_vec(),
            xt.values().to_vec(),
        );

        // Union pattern of prior and data terms (lower triangle).
        let mut trip: Vec<(usize, usize, f64)> = Vec::new();
        let mut off = 0;
        for c in &model.components {
            match c {
                Component::Spde { structure, .. } => {
                    let q = structure.precision(crate::spde::SpdeTheta::new(0.0, 0.0));
                    trip.extend(
                        q.triplets()
                            .filter(|&(i, j, _)| i >= j)
                            .map(|(i, j, _)| (off + i, off + j, 1.0)),
                    );
                }
                Component::Icar { structure, .. } => {
                    trip.extend(
                        structure
                            .triplets()
                            .filter(|&(i, j, _)| i >= j)
                            .map(|(i, j, _)| (off + i, off + j, 1.0)),
                    );
                }
                _ => trip.extend((off..off + c.size()).map(|i| (i, i, 1.0))),
            }
            off += c.size();
        }
        for r in 0..nobs {
            let cols = &row_cols[row_ptr[r]..row_ptr[r + 1]];
            for (a, &i) in cols.iter().enumerate() {
                for &j in &cols[..=a] {
                    trip.push((i.max(j), i.min(j), 1.0));
                }
            }
        }
        let pattern = SparseSym::from_lower_triplets(dim, &trip);
        drop(trip);
        let symbolic = SymbolicCholesky::analyze(&pattern)?;
        let position =
            |i: usize, j: usize| symbolic.input_position(i, j).expect("entry in pattern");

        let mut pair_ptr = vec![0];
        let mut pair_pos = Vec::new();
        let mut pair_coef = Vec::new();
        for r in 0..nobs {
            let range = row_ptr[r]..row_ptr[r + 1];
            let (cols, vals) = (&row_cols[range.clone()], &row_vals[range]);
            for a in 0..cols.len() {
                for b in 0..=a {
                    pair_pos.push(position(cols[a], cols[b]));
                    pair_coef.push(vals[a] * vals[b]);
                }
            }
            pair_ptr.push(pair_pos.len());
        }

        let mut blocks = Vec::new();
        let mut constraints = Vec::new();
        let mut log_det_cct = 0.0;
        let (mut off, mut hyper) = (0, 0);
        for c in &model.components {
            let diag_pos = || {
                (off..off + c.size())
                    .map(|i| position(i, i))
                    .collect::<Vec<_>>()
            };
            match c {
                Component::Intercept { .. } | Component::Covariates { .. } => {
                    blocks.push(PriorBlock::Fixed {
                        diag_pos: diag_pos(),
                    })
                }
                Component::Spde { structure, .. } => {
                    let q = structure.precision(crate::spde::SpdeTheta::new(0.0, 0.0));
                    let pos = q
                        .triplets()
                        .filter(|&(i, j, _)| i >= j)
                        .map(|(i, j, _)| position(off + i, off + j))
                        .collect();
                    blocks.push(PriorBlock::Spde {
                        hyper,
                        structure: Arc::clone(structure),
                        pos,
                        symbolic: SymbolicCholesky::analyze(&q)?,
                    });
                }
                Component::Iid { .. } => blocks.push(PriorBlock::Iid {
                    hyper,
                    diag_pos: diag_pos(),
                }),
                Component::Icar { structure, .. } => {
                    let comps = connected_components(structure.as_csc());
                    let log_gdet = laplacian_log_gdet(structure, &comps)?;
                    let (mut pos, mut values) = (Vec::new(), Vec::new());
                    for (i, j, v) in structure.triplets().filter(|&(i, j, _)| i >= j) {
                        pos.push(position(off + i, off + j));
                        values.push(v);
                    }
                    for comp in &comps {
                        log_det_cct += (comp.len() as f64).ln();
                        constraints.push(comp.iter().map(|&i| off + i).collect());
                    }
                    blocks.push(PriorBlock::Icar {
                        hyper,
                        values,
                        pos,
                        rank: structure.dim() - comps.len(),
                        log_gdet,
                    });
                }
            }
            off += c.size();
            hyper += c.num_hyper();
        }

        Ok(Self {
            model,
            dim,
            design,
            row_ptr,
            row_cols,
            row_vals,
            symbolic,
            pair_ptr,
            pair_pos,
            pair_coef,
            blocks,
            constraints,
            log_det_cct,
        })
    }

    pub fn model(&self) -> &LatentModel {
        &self.model
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn design(&self) -> &CscMatrix {
        &self.design
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    fn predictor(&self, x: &[f64]) -> Vec<f64> {
        (0..self.model.num_obs())
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .map(|p| self.row_vals[p] * x[self.row_cols[p]])
                    .sum()
            })
            .collect()
    }

    fn prior_at(&self, theta: &[f64]) -> Result<PriorEval> {
        if theta.len() != self.model.num_hyper() {
            return Err(Error::Dimension(format!(
                "expected {} hyperparameters, got {}",
                self.model.num_hyper(),
                theta.len()
            )));
        }
        if let Some(t) = theta.iter().find(|t| !t.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite hyperparameter {t}"
            )));
        }
        let mut lower = vec![0.0; self.symbolic.input_nnz()];
        let mut half_log_det = 0.0;
        let fixed = self.model.fixed_effect_precision;
        for b in &self.blocks {
            match b {
                PriorBlock::Fixed { diag_pos } => {
                    diag_pos.iter().for_each(|&p| lower[p] += fixed);
                    half_log_det += 0.5 * diag_pos.len() as f64 * fixed.ln();
                }
                PriorBlock::Iid { hyper, diag_pos } => {
                    let prec = theta[*hyper].exp();
                    diag_pos.iter().for_each(|&p| lower[p] += prec);
                    half_log_det += 0.5 * diag_pos.len() as f64 * theta[*hyper];
                }
                PriorBlock::Spde {
                    hyper,
                    structure,
                    pos,
                    symbolic,
                } => {
                    let th = crate::spde::SpdeTheta::new(theta[*hyper], theta[*hyper + 1]);
                    let q = structure.precision(th);
                    let vals = q.triplets().filter(|&(i, j, _)| i >= j).map(|t| t.2);
                    for (&p, v) in pos.iter().zip(vals) {
                        lower[p] += v;
                    }
                    let f = CholeskyFactor::factorize(Arc::clone(symbolic), &q).map_err(|e| {
                        Error::Assembly {
                            message: format!("SPDE precision at {th:?}: {e}"),
                            min_eigenvalue: crate::spde::smallest_eigenvalue_estimate(&q),
                        }
                    })?;
                    half_log_det += 0.5 * f.log_det();
                }
                PriorBlock::Icar {
                    hyper,
                    values,
                    pos,
                    rank,
                    log_gdet,
                } => {
                    let prec = theta[*hyper].exp();
                    for (&p, &v) in pos.iter().zip(values) {
                        lower[p] += prec * v;
                    }
                    half_log_det += 0.5 * (*rank as f64 * theta[*hyper] + log_gdet);
                }
            }
        }
        Ok(PriorEval {
            lower,
            half_log_det,
        })
    }

    /// `xᵀ M x` for a matrix given by its lower values on the analyzed pattern.
    fn quad(&self, lower: &[f64], x: &[f64]) -> f64 {
        let (cp, ri) = self.symbolic.input_pattern();
        let mut acc = 0.0;
        for j in 0..self.dim {
            for p in cp[j]..cp[j + 1] {
                let i = ri[p];
                let v = lower[p] * x[i] * x[j];
                acc += if i == j { v } else { 2.0 * v };
            }
        }
        acc
    }

    fn lower_mul(&self, lower: &[f64], x: &[f64]) -> Vec<f64> {
        let (cp, ri) = self.symbolic.input_pattern();
        let mut y = vec![0.0; self.dim];
        for j in 0..self.dim {
            for p in cp[j]..cp[j + 1] {
                let i = ri[p];
                y[i] += lower[p] * x[j];
                if i != j {
                    y[j] += lower[p] * x[i];
                }
            }
        }
        y
    }

    fn posterior_lower(&self, prior: &[f64], curv: &[f64]) -> Vec<f64> {
        let mut lower = prior.to_vec();
        for (r, &h) in curv.iter().enumerate() {
            for p in self.pair_ptr[r]..self.pair_ptr[r + 1] {
                lower[self.pair_pos[p]] += h * self.pair_coef[p];
            }
        }
        lower
    }

    fn project_constraints(&self, x: &mut [f64]) {
        for set in &self.constraints {
            let mean = set.iter().map(|&i| x[i]).sum::<f64>() / set.len() as f64;
            set.iter().for_each(|&i| x[i] -= mean);
        }
    }

    /// Newton iteration to the constrained mode and the Gaussian approximation
    /// there. `warm` optionally supplies a starting point.
    pub fn approximate(&self, theta: &[f64], warm: Option<&[f64]>) -> Result<GaussianApprox> {
        self.approximate_with(theta, warm, true)
    }

    /// Mode and evidence only; marginal variances are left empty.
    pub(crate) fn approximate_evidence(
        &self,
        theta: &[f64],
        warm: Option<&[f64]>,
    ) -> Result<GaussianApprox> {
        self.approximate_with(theta, warm, false)
    }

    fn approximate_with(
        &self,
        theta: &[f64],
        warm: Option<&[f64]>,
        variances: bool,
    ) -> Result<GaussianApprox> {
        let prior = self.prior_at(theta)?;
        let lik = &self.model.likelihood;
        let nobs = self.model.num_obs();
        let mut x = match warm {
            Some(w) if w.len() == self.dim => w.to_vec(),
            _ => vec![0.0; self.dim],
        };
        self.project_constraints(&mut x);
        let objective =
            |x: &[f64]| lik.log_lik(&self.predictor(x)) - 0.5 * self.quad(&prior.lower, x);

        let (mut grad, mut curv) = (vec![0.0; nobs], vec![0.0; nobs]);
        let mut f = objective(&x);
        let mut trace = vec![f];
        let mut iterations = 0;
        let mut clamped = 0;
        let mut converged = false;
        let mut final_state: Option<(Vec<f64>, CholeskyFactor, Option<Constraint>)> = None;

        while iterations < MAX_NEWTON_ITERATIONS {
            iterations += 1;
            let eta = self.predictor(&x);
            clamped = lik.derivatives(&eta, &mut grad, &mut curv);
            let lower = self.posterior_lower(&prior.lower, &curv);
            let factor = CholeskyFactor::factorize_lower_values(Arc::clone(&self.symbolic), &lower)
                .map_err(|e| {
                    Error::Numerical(format!("posterior precision at θ={theta:?}: {e}"))
                })?;
            let work: Vec<f64> = (0..nobs).map(|r| grad[r] + curv[r] * eta[r]).collect();
            let mut target = factor.solve(&self.design.tr_mul_vec(&work));
            let constraint = if self.constraints.is_empty() {
                None
            } else {
                Some(Constraint::new(&self.constraints, &factor)?)
            };
            if let Some(c) = &constraint {
                c.correct(&mut target);
            }
            let d: Vec<f64> = target.iter().zip(&x).map(|(t, xi)| t - xi).collect();

            if lik.is_gaussian() {
                // Quadratic objective: one step lands on the exact mode.
                x = target;
                f = objective(&x);
                trace.push(f);
                converged = true;
                final_state = Some((lower, factor, constraint));
                break;
            }

            let mut lambda = 1.0;
            let mut accepted = None;
            for _ in 0..=MAX_HALVINGS {
                let xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + lambda * b).collect();
                let ft = objective(&xt);
                if ft.is_finite() && ft >= f - 1e-12 * (1.0 + f.abs()) {
                    accepted = Some((xt, ft));
                    break;
                }
                lambda *= 0.5;
            }
            let scale = 1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let step = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            match accepted {
                Some((xt, ft)) => {
                    x = xt;
                    f = ft;
                    trace.push(f);
                    if lambda * step <= NEWTON_TOL * scale {
                        converged = true;
                        break;
                    }
                }
                None => {
                    // No ascent possible along the Newton direction: accept the
                    // current point if the step is already negligible.
                    if step <= 1e-6 * scale {
                        converged = true;
                        break;
                    }
                    return Err(Error::Convergence {
                        iterations,
                        trace: format!("line search failed; objective trace {trace:?}"),
                    });
                }
            }
        }
        if !converged {
            return Err(Error::Convergence {
                iterations,
                trace: format!("objective trace {trace:?}"),
            });
        }
        if clamped > 0 {
            log::warn!(
                "{clamped} binomial curvatures clamped to {:e}",
                super::model::CURVATURE_FLOOR
            );
        }

        // Gaussian approximation at the mode.
        let eta = self.predictor(&x);
        lik.derivatives(&eta, &mut grad, &mut curv);
        let (lower, factor, constraint) = match final_state {
            Some(s) => s,
            None => {
                let lower = self.posterior_lower(&prior.lower, &curv);
                let factor =
                    CholeskyFactor::factorize_lower_values(Arc::clone(&self.symbolic), &lower)?;
                let constraint = if self.constraints.is_empty() {
                    None
                } else {
                    Some(Constraint::new(&self.constraints, &factor)?)
                };
                (lower, factor, constraint)
            }
        };

        let mut g = self.design.tr_mul_vec(&grad);
        let qx = self.lower_mul(&prior.lower, &x);
        g.iter_mut().zip(&qx).for_each(|(a, b)| *a -= b);
        self.project_constraints(&mut g);
        let gradient_norm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));

        let predictor_mean = self.predictor(&x);
        let (latent_var, predictor_var) = if variances {
            self.marginal_variances(&factor, constraint.as_ref())
        } else {
            (Vec::new(), Vec::new())
        };

        let mut log_evidence = lik.log_lik(&eta) + prior.half_log_det
            - 0.5 * self.quad(&prior.lower, &x)
            - 0.5 * factor.log_det();
        if let Some(c) = &constraint {
            log_evidence += -0.5 * c.log_det_s + 0.5 * self.log_det_cct;
        }

        let (cp, ri) = self.symbolic.input_pattern();
        let mut trip = Vec::with_capacity(lower.len());
        for j in 0..self.dim {
            for p in cp[j]..cp[j + 1] {
                trip.push((ri[p], j, lower[p]));
            }
        }
        let precision = SparseSym::from_lower_triplets(self.dim, &trip);

        Ok(GaussianApprox {
            theta: theta.to_vec(),
            mode: x,
            latent_var,
            predictor_mean,
            predictor_var,
            log_evidence,
            iterations,
            trace,
            gradient_norm,
            clamped,
            precision,
            factor,
            constraint,
        })
    }

    /// Fills in marginal variances of an evidence-only approximation.
    pub(crate) fn complete(&self, ga: &mut GaussianApprox) {
        if ga.latent_var.is_empty() {
            let (lv, pv) = self.marginal_variances(&ga.factor, ga.constraint.as_ref());
            ga.latent_var = lv;
            ga.predictor_var = pv;
        }
    }

    fn marginal_variances(
        &self,
        factor: &CholeskyFactor,
        constraint: Option<&Constraint>,
    ) -> (Vec<f64>, Vec<f64>) {
        let sel = factor.selected_inverse();
        let mut latent_var = sel.diagonal();
        let reduction = constraint.map(|c| c.variance_reduction(self.dim));
        if let Some(red) = &reduction {
            latent_var
                .iter_mut()
                .zip(red)
                .for_each(|(v, r)| *v = (*v - r).max(0.0));
        }
        let predictor_var = (0..self.model.num_obs())
            .map(|r| {
                let range = self.row_ptr[r]..self.row_ptr[r + 1];
                let (cols, vals) = (&self.row_cols[range.clone()], &self.row_vals[range]);
                let mut v = 0.0;
                for a in 0..cols.len() {
                    for b in 0..cols.len() {
                        let s = sel.get(cols[a], cols[b]).expect("entry in fill pattern");
                        v += vals[a] * vals[b] * s;
                    }
                }
                if let Some(c) = constraint {
                    let k = c.w.len();
                    let xw: Vec<f64> = (0..k)
                        .map(|a| cols.iter().zip(vals).map(|(&i, &xv)| xv * c.w[a][i]).sum())
                        .collect();
                    for a in 0..k {
                        for b in 0..k {
                            v -= xw[a] * c.s_inv[(a, b)] * xw[b];
                        }
                    }
                }
                v.max(0.0)
            })
            .collect();
        (latent_var, predictor_var)
    }

    /// Gaussian log prior density of the hyperparameters.
    pub fn log_hyperprior(&self, theta: &[f64]) -> f64 {
        let sd = self.model.hyperprior_sd;
        self.model
            .initial_hyper()
            .iter()
            .zip(theta)
            .map(|(m, t)| crate::special::norm_ln_pdf(*t, *m, sd))
            .sum()
    }
}

/// Gaussian approximation of `π(x | y, θ)` for a single model evaluation.
pub fn gaussian_approx(model: &LatentModel, theta: &[f64]) -> Result<GaussianApprox> {
    Engine::new(model)?.approximate(theta, None)
}
