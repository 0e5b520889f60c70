//! Mixture marginals, joint sampling and CSV export of fitted models.

use std::io::{Read, Write};
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::approx::GaussianApprox;
use super::grid::HyperPoint;
use crate::error::{Error, Result};
use crate::special::{expit, norm_cdf};

const QUANTILE_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalSummary {
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
}

/// Finite mixture of univariate Gaussians.
#[derive(Clone, Debug)]
pub struct Mixture {
    weights: Vec<f64>,
    means: Vec<f64>,
    sds: Vec<f64>,
}

impl Mixture {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, sds: Vec<f64>) -> Self {
        assert!(weights.len() == means.len() && means.len() == sds.len() && !weights.is_empty());
        let total: f64 = weights.iter().sum();
        Self {
            weights: weights.iter().map(|w| w / total).collect(),
            means,
            sds,
        }
    }

    pub fn mean(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .map(|(w, m)| w * m)
            .sum()
    }

    pub fn sd(&self) -> f64 {
        let mu = self.mean();
        let second: f64 = (0..self.weights.len())
            .map(|i| self.weights[i] * (self.sds[i].powi(2) + (self.means[i] - mu).powi(2)))
            .sum();
        second.max(0.0).sqrt()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        (0..self.weights.len())
            .map(|i| {
                let c = if self.sds[i] > 0.0 {
                    norm_cdf((x - self.means[i]) / self.sds[i])
                } else if x >= self.means[i] {
                    1.0
                } else {
                    0.0
                };
                self.weights[i] * c
            })
            .sum()
    }

    /// Quantile by bisection of the mixture CDF.
    pub fn quantile(&self, p: f64) -> f64 {
        let lo = (0..self.means.len())
            .map(|i| self.means[i] - 12.0 * self.sds[i])
            .fold(f64::INFINITY, f64::min);
        let hi = (0..self.means.len())
            .map(|i| self.means[i] + 12.0 * self.sds[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let (mut lo, mut hi) = (lo, hi);
        if hi - lo <= 0.0 {
            return lo;
        }
        while hi - lo > QUANTILE_TOL * (1.0 + lo.abs().max(hi.abs())) {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    pub fn summary(&self) -> MarginalSummary {
        MarginalSummary {
            mean: self.mean(),
            sd: self.sd(),
            q025: self.quantile(0.025),
            q50: self.quantile(0.5),
            q975: self.quantile(0.975),
        }
    }

    /// Summary of `expit(X)`: quantiles map through the monotone transform,
    /// moments by numerical integration.
    pub fn expit_summary(&self) -> MarginalSummary {
        const K: usize = 400;
        let (mut m1, mut m2) = (0.0, 0.0);
        for i in 0..self.weights.len() {
            let (mu, s) = (self.means[i], self.sds[i]);
            if s == 0.0 {
                let p = expit(mu);
                m1 += self.weights[i] * p;
                m2 += self.weights[i] * p * p;
                continue;
            }
            // Midpoint rule on ±10 sd.
            let h = 20.0 / K as f64;
            let (mut a1, mut a2, mut norm) = (0.0, 0.0, 0.0);
            for k in 0..K {
                let z = -10.0 + (k as f64 + 0.5) * h;
                let dens = (-0.5 * z * z).exp();
                let p = expit(mu + s * z);
                a1 += dens * p;
                a2 += dens * p * p;
                norm += dens;
            }
            m1 += self.weights[i] * a1 / norm;
            m2 += self.weights[i] * a2 / norm;
        }
        MarginalSummary {
            mean: m1,
            sd: (m2 - m1 * m1).max(0.0).sqrt(),
            q025: expit(self.quantile(0.025)),
            q50: expit(self.quantile(0.5)),
            q975: expit(self.quantile(0.975)),
        }
    }
}

/// Fitted latent Gaussian model.
#[derive(Clone, Debug)]
pub struct FitResult {
    pub hyper_names: Vec<String>,
    pub coordinate_names: Vec<String>,
    pub component_ranges: Vec<(String, Range<usize>)>,
    pub theta_mode: Vec<f64>,
    /// False when the mode search failed and the grid is centred at the
    /// initial values.
    pub mode_found: bool,
    pub points: Vec<HyperPoint>,
    /// Gaussian approximations aligned with `points`; `None` for points with
    /// zero weight.
    pub approximations: Vec<Option<GaussianApprox>>,
    pub latent: Vec<MarginalSummary>,
    pub predictor: Vec<MarginalSummary>,
}

impl FitResult {
    pub fn component_range(&self, name: &str) -> Option<Range<usize>> {
        self.component_ranges
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, r)| r.clone())
    }

    pub fn latent_dim(&self) -> usize {
        self.coordinate_names.len()
    }

    fn active(&self) -> impl Iterator<Item = (f64, &GaussianApprox)> {
        self.points
            .iter()
            .zip(&self.approximations)
            .filter_map(|(p, a)| a.as_ref().map(|a| (p.weight, a)))
    }

    /// Mixture marginal of latent coordinate `i`.
    pub fn latent_mixture(&self, i: usize) -> Mixture {
        let (w, m, s) = self.active().fold(
            (Vec::new(), Vec::new(), Vec::new()),
            |(mut w, mut m, mut s), (wi, a)| {
                w.push(wi);
                m.push(a.mode[i]);
                s.push(a.latent_var[i].max(0.0).sqrt());
                (w, m, s)
            },
        );
        Mixture::new(w, m, s)
    }

    /// Mixture marginal of linear predictor `r`.
    pub fn predictor_mixture(&self, r: usize) -> Mixture {
        let (w, m, s) = self.active().fold(
            (Vec::new(), Vec::new(), Vec::new()),
            |(mut w, mut m, mut s), (wi, a)| {
                w.push(wi);
                m.push(a.predictor_mean[r]);
                s.push(a.predictor_var[r].max(0.0).sqrt());
                (w, m, s)
            },
        );
        Mixture::new(w, m, s)
    }

    /// Mixture marginal of a linear combination of latent coordinates.
    pub fn combination_mixture(&self, a: &[(usize, f64)]) -> Mixture {
        let (w, m, s) = self.active().fold(
            (Vec::new(), Vec::new(), Vec::new()),
            |(mut w, mut m, mut s), (wi, ap)| {
                let (mean, var) = ap.linear_combination(a);
                w.push(wi);
                m.push(mean);
                s.push(var.sqrt());
                (w, m, s)
            },
        );
        Mixture::new(w, m, s)
    }

    /// Posterior mean of θ under the grid weights.
    pub fn theta_mean(&self) -> Vec<f64> {
        let d = self.hyper_names.len();
        let mut out = vec![0.0; d];
        for p in &self.points {
            for k in 0..d {
                out[k] += p.weight * p.theta[k];
            }
        }
        out
    }

    /// Writes `coordinate,mean,sd,q025,q50,q975` for every latent coordinate.
    pub fn write_latent_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_summaries(&self.coordinate_names, &self.latent, writer)
    }

    /// Writes one row per grid point: θ values, log posterior and weight.
    pub fn write_theta_grid_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = self.hyper_names.clone();
        header.push("log_post".into());
        header.push("weight".into());
        w.write_record(&header)?;
        for p in &self.points {
            let mut rec: Vec<String> = p.theta.iter().map(|v| v.to_string()).collect();
            rec.push(p.log_post.to_string());
            rec.push(p.weight.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn write_summaries<W: Write>(
    names: &[String],
    summaries: &[MarginalSummary],
    writer: W,
) -> Result<()> {
    if names.len() != summaries.len() {
        return Err(Error::Dimension(format!(
            "{} names for {} summaries",
            names.len(),
            summaries.len()
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["coordinate", "mean", "sd", "q025", "q50", "q975"])?;
    for (n, s) in names.iter().zip(summaries) {
        w.write_record([
            n.clone(),
            s.mean.to_string(),
            s.sd.to_string(),
            s.q025.to_string(),
            s.q50.to_string(),
            s.q975.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Draws from the approximate joint posterior, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct JointSamples {
    dim: usize,
    values: Vec<f64>,
    theta_index: Vec<usize>,
}

impl JointSamples {
    pub fn new(dim: usize, values: Vec<f64>, theta_index: Vec<usize>) -> Result<Self> {
        if values.len() != dim * theta_index.len() {
            return Err(Error::Dimension(format!(
                "{} values for {} samples of dimension {dim}",
                values.len(),
                theta_index.len()
            )));
        }
        Ok(Self {
            dim,
            values,
            theta_index,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.theta_index.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample(&self, s: usize) -> &[f64] {
        &self.values[s * self.dim..(s + 1) * self.dim]
    }

    pub fn theta_index(&self) -> &[usize] {
        &self.theta_index
    }

    pub fn coordinate(&self, i: usize) -> Vec<f64> {
        (0..self.num_samples())
            .map(|s| self.values[s * self.dim + i])
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim.max(1))
    }

    /// Keeps only the listed coordinates, in the given order.
    pub fn select(&self, columns: &[usize]) -> Result<JointSamples> {
        if let Some(&c) = columns.iter().find(|&&c| c >= self.dim) {
            return Err(Error::Dimension(format!(
                "coordinate {c} out of range for dimension {}",
                self.dim
            )));
        }
        let values = self
            .iter()
            .flat_map(|s| columns.iter().map(move |&c| s[c]))
            .collect();
        JointSamples::new(columns.len(), values, self.theta_index.clone())
    }

    /// Little-endian binary layout: magic, dimension, sample count, θ indices
    /// as `u64`, then values as `f64`, sample by sample.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(SAMPLES_MAGIC)?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        w.write_all(&(self.num_samples() as u64).to_le_bytes())?;
        for &t in &self.theta_index {
            w.write_all(&(t as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<JointSamples> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != SAMPLES_MAGIC {
            return Err(Error::Parse("not a joint sample file".into()));
        }
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut word)?;
            Ok(u64::from_le_bytes(word))
        };
        let dim = next(&mut r)? as usize;
        let n = next(&mut r)? as usize;
        let theta_index = (0..n)
            .map(|_| next(&mut r).map(|t| t as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != dim * n * 8 {
            return Err(Error::Parse(format!(
                "sample file holds {} bytes of values, expected {}",
                bytes.len(),
                dim * n * 8
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        JointSamples::new(dim, values, theta_index)
    }

    pub fn write_csv<W: Write>(&self, names: &[String], writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["sample".to_string(), "theta_index".to_string()];
        header.extend(names.iter().cloned());
        w.write_record(&header)?;
        for s in 0..self.num_samples() {
            let mut rec = vec![s.to_string(), self.theta_index[s].to_string()];
            rec.extend(self.sample(s).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

const SAMPLE_CHUNK: usize = 64;
const SAMPLES_MAGIC: &[u8; 8] = b"PMJSAMP1";

/// Samples θ by weight, then the latent vector from the corresponding
/// Gaussian approximation. Chunks of draws use independent streams of the
/// master seed, so output does not depend on the thread count.
pub fn sample_joint(fit: &FitResult, num_samples: usize, seed: u64) -> Result<JointSamples> {
    if num_samples == 0 {
        return Err(Error::InvalidInput("need at least one sample".into()));
    }
    let active: Vec<usize> = (0..fit.points.len())
        .filter(|&i| fit.approximations[i].is_some() && fit.points[i].weight > 0.0)
        .collect();
    if active.is_empty() {
        return Err(Error::Numerical(
            "fit has no usable integration points".into(),
        ));
    }
    let mut cumulative = Vec::with_capacity(active.len());
    let mut acc = 0.0;
    for &i in &active {
        acc += fit.points[i].weight;
        cumulative.push(acc);
    }
    let dim = fit.latent_dim();
    let chunks: Vec<(Vec<f64>, Vec<usize>)> = (0..num_samples.div_ceil(SAMPLE_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = SAMPLE_CHUNK.min(num_samples - c * SAMPLE_CHUNK);
            let mut values = Vec::with_capacity(count * dim);
            let mut idx = Vec::with_capacity(count);
            let mut z = vec![0.0; dim];
            for _ in 0..count {
                let u: f64 = rng.random::<f64>() * acc;
                let k = cumulative
                    .partition_point(|&c| c <= u)
                    .min(active.len() - 1);
                let point = active[k];
                z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                let ga = fit.approximations[point].as_ref().unwrap();
                values.extend(ga.sample_with(&z));
                idx.push(point);
            }
            (values, idx)
        })
        .collect();
    let mut values = Vec::with_capacity(num_samples * dim);
    let mut theta_index = Vec::with_capacity(num_samples);
    for (v, i) in chunks {
        values.extend(v);
        theta_index.extend(i);
    }
    JointSamples::new(dim, values, theta_index)
}
