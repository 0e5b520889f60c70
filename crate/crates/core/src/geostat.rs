//! Household-level binomial geostatistical model
//! `logit p_ij = β₀ + xᵢᵀβ + S(xᵢ) + ε_ij` built from a survey frame and a mesh.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fem_matrices, project, Polygon, TriMesh};
use crate::inference::{Component, LatentModel, Likelihood};
use crate::sparse::CscMatrix;
use crate::spde::{tau_from_sigma, SpdeStructure, SpdeTheta};
use crate::survey::SurveyFrame;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpdeModelOptions {
    /// Household-level iid effect.
    pub nugget: bool,
    /// Initial practical range; defaults to a fifth of the region diagonal.
    pub initial_range: Option<f64>,
    pub initial_sigma2: f64,
    pub initial_nugget_variance: f64,
}

impl Default for SpdeModelOptions {
    fn default() -> Self {
        Self {
            nugget: true,
            initial_range: None,
            initial_sigma2: 0.5,
            initial_nugget_variance: 0.1,
        }
    }
}

impl SpdeModelOptions {
    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.initial_range {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "initial_range must be positive, got {r}"
                )));
            }
        }
        if !(self.initial_sigma2.is_finite() && self.initial_sigma2 > 0.0) {
            return Err(Error::InvalidInput(format!(
                "initial_sigma2 must be positive, got {}",
                self.initial_sigma2
            )));
        }
        if !(self.initial_nugget_variance.is_finite() && self.initial_nugget_variance > 0.0) {
            return Err(Error::InvalidInput(format!(
                "initial_nugget_variance must be positive, got {}",
                self.initial_nugget_variance
            )));
        }
        Ok(())
    }

    /// Initial `(log τ, log κ)` for a study region.
    pub fn initial_theta(&self, region: &Polygon) -> SpdeTheta {
        let range = self
            .initial_range
            .unwrap_or_else(|| region.bbox().diagonal() / 5.0);
        let kappa = 8f64.sqrt() / range;
        SpdeTheta::from_tau_kappa(tau_from_sigma(self.initial_sigma2, kappa, 1.0), kappa)
    }
}

/// Per-cluster covariate columns, `values[i]` for cluster `i` in frame order.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterCovariates {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

/// Binomial model with one observation per household. Components are named
/// `intercept`, `covariates`, `spde` and `nugget`.
pub fn binomial_spde_model(
    frame: &SurveyFrame,
    mesh: &TriMesh,
    initial: SpdeTheta,
    options: &SpdeModelOptions,
    covariates: Option<&ClusterCovariates>,
) -> Result<LatentModel> {
    options.validate()?;
    let clusters = frame.clusters();
    if clusters.is_empty() {
        return Err(Error::NoData("survey has no clusters".into()));
    }
    let locations: Vec<_> = clusters.iter().map(|c| c.location).collect();
    let proj = project(mesh, &locations);
    if let Some(i) = (0..clusters.len()).find(|&i| proj.is_outside(i)) {
        return Err(Error::InvalidInput(format!(
            "cluster {} at ({}, {}) lies outside the mesh",
            clusters[i].cluster_id, locations[i].x, locations[i].y
        )));
    }
    let mut successes = Vec::new();
    let mut trials = Vec::new();
    let mut triplets = Vec::new();
    let mut cluster_of = Vec::new();
    for (i, c) in clusters.iter().enumerate() {
        let row = proj.row(i);
        for h in &c.households {
            let r = successes.len();
            successes.push(h.y as f64);
            trials.push(h.n as f64);
            cluster_of.push(i);
            triplets.extend(row.iter().map(|&(k, a)| (r, k, a)));
        }
    }
    let n_obs = successes.len();
    let mut components = vec![Component::intercept()];
    if let Some(cov) = covariates {
        if cov.values.len() != clusters.len()
            || cov.values.iter().any(|v| v.len() != cov.names.len())
        {
            return Err(Error::Dimension(format!(
                "covariates cover {} clusters with {} columns; survey has {} clusters",
                cov.values.len(),
                cov.names.len(),
                clusters.len()
            )));
        }
        if !cov.names.is_empty() {
            let columns = (0..cov.names.len())
                .map(|k| cluster_of.iter().map(|&i| cov.values[i][k]).collect())
                .collect();
            components.push(Component::Covariates {
                name: "covariates".into(),
                columns,
            });
        }
    }
    components.push(Component::Spde {
        name: "spde".into(),
        structure: Arc::new(SpdeStructure::new(&fem_matrices(mesh))?),
        projector: CscMatrix::from_triplets(n_obs, mesh.num_vertices(), &triplets),
        initial,
    });
    if options.nugget {
        components.push(Component::nugget(
            n_obs,
            -options.initial_nugget_variance.ln(),
        ));
    }
    LatentModel::new(Likelihood::Binomial { successes, trials }, components)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, Point2};
    use crate::survey::{Cluster, Household};

    #[test]
    fn layout_and_projector_rows() {
        let region = Polygon::rectangle("r", Point2::new(0.0, 0.0), Point2::new(2.0, 2.0)).unwrap();
        let mesh = build_mesh(&region, 0.5, 1.2, 1.0).unwrap();
        let hh = |n, y| Household {
            household_id: "h".into(),
            n,
            y,
            weight: 1.0,
        };
        let frame = SurveyFrame::new(vec![
            Cluster {
                cluster_id: "a".into(),
                area_id: "r".into(),
                location: Point2::new(0.3, 0.4),
                households: vec![hh(3, 1), hh(2, 0)],
            },
            Cluster {
                cluster_id: "b".into(),
                area_id: "r".into(),
                location: Point2::new(1.5, 1.1),
                households: vec![hh(4, 2)],
            },
        ])
        .unwrap();
        let opts = SpdeModelOptions::default();
        let theta = opts.initial_theta(&region);
        assert!((8f64.sqrt() / theta.kappa() - region.bbox().diagonal() / 5.0).abs() < 1e-12);
        let cov = ClusterCovariates {
            names: vec!["x".into()],
            values: vec![vec![0.5], vec![-1.0]],
        };
        let m = binomial_spde_model(&frame, &mesh, theta, &opts, Some(&cov)).unwrap();
        assert_eq!(m.num_obs(), 3);
        assert_eq!(
            m.hyper_names(),
            ["spde.log_tau", "spde.log_kappa", "nugget.log_precision"]
        );
        let x = m.design();
        let spde = m.component_range("spde").unwrap();
        let cov_col = m.component_range("covariates").unwrap().start;
        for r in 0..3 {
            let s: f64 = spde.clone().map(|j| x.get(r, j)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(x.get(1, cov_col), 0.5);
        assert_eq!(x.get(2, cov_col), -1.0);
        for j in spde {
            assert_eq!(x.get(0, j), x.get(1, j));
        }

        let far = SurveyFrame::new(vec![Cluster {
            cluster_id: "z".into(),
            area_id: "r".into(),
            location: Point2::new(40.0, 40.0),
            households: vec![hh(1, 0)],
        }])
        .unwrap();
        assert!(binomial_spde_model(&far, &mesh, theta, &opts, None).is_err());
    }
}
