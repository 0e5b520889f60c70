//! TOML pipeline configuration.

use std::path::{Path, PathBuf};

use prevmap::geostat::SpdeModelOptions;
use prevmap::inference::{FitOptions, GridSpec};
use prevmap::simulate::{HouseholdSizes, SimConfig};
use prevmap::survey::{DesignParams, FixPolicy};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; every random stream in the pipeline derives from it.
    pub seed: u64,
    pub paths: Paths,
    pub mesh: MeshSection,
    pub model: ModelSection,
    pub survey: SurveySection,
    pub functionals: FunctionalsSection,
    pub sim: SimSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            paths: Paths::default(),
            mesh: MeshSection::default(),
            model: ModelSection::default(),
            survey: SurveySection::default(),
            functionals: FunctionalsSection::default(),
            sim: SimSection::default(),
        }
    }
}

/// Input and output locations. Relative paths are taken relative to the
/// config file. Without `boundary`/`areas` the built-in demo geometry is used;
/// without `data` the survey written by `simulate` is read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub output: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub areas: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub locations: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub household_sizes: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adjacency: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covariates: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            output: PathBuf::from("output"),
            boundary: None,
            areas: None,
            data: None,
            locations: None,
            household_sizes: None,
            adjacency: None,
            covariates: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSection {
    pub interior_max_edge: f64,
    pub extension_factor: f64,
    pub exterior_max_edge: f64,
}

impl Default for MeshSection {
    fn default() -> Self {
        Self {
            interior_max_edge: 0.3,
            extension_factor: 1.5,
            exterior_max_edge: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Run the household-level SPDE model.
    pub spde: bool,
    /// Run the smoothed direct-estimate BYM model.
    pub bym: bool,
    pub nugget: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_range: Option<f64>,
    pub initial_sigma2: f64,
    pub initial_nugget_variance: f64,
    pub bym_initial_log_precision_icar: f64,
    pub bym_initial_log_precision_iid: f64,
    pub grid_offsets: Vec<f64>,
    pub max_evaluations: usize,
    pub weight_threshold: f64,
    pub num_samples: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let spde = SpdeModelOptions::default();
        let fit = FitOptions::default();
        Self {
            spde: true,
            bym: true,
            nugget: spde.nugget,
            initial_range: spde.initial_range,
            initial_sigma2: spde.initial_sigma2,
            initial_nugget_variance: spde.initial_nugget_variance,
            bym_initial_log_precision_icar: 0.0,
            bym_initial_log_precision_iid: 0.0,
            grid_offsets: fit.grid.offsets,
            max_evaluations: fit.max_evaluations,
            weight_threshold: fit.weight_threshold,
            num_samples: 1000,
        }
    }
}

impl ModelSection {
    pub fn spde_options(&self) -> SpdeModelOptions {
        SpdeModelOptions {
            nugget: self.nugget,
            initial_range: self.initial_range,
            initial_sigma2: self.initial_sigma2,
            initial_nugget_variance: self.initial_nugget_variance,
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            grid: GridSpec {
                offsets: self.grid_offsets.clone(),
            },
            center: None,
            max_evaluations: self.max_evaluations,
            weight_threshold: self.weight_threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurveySection {
    pub num_psu_sampled: usize,
    pub total_psu: usize,
    pub households_per_ea: usize,
    /// Weights in the data file are kept; when the file has no weight column
    /// they are derived from the design parameters.
    pub fix_policy: FixPolicy,
}

impl Default for SurveySection {
    fn default() -> Self {
        let d = DesignParams::default();
        Self {
            num_psu_sampled: d.num_psu_sampled,
            total_psu: d.total_psu,
            households_per_ea: d.households_per_ea,
            fix_policy: FixPolicy::default(),
        }
    }
}

impl SurveySection {
    pub fn design(&self) -> DesignParams {
        DesignParams {
            num_psu_sampled: self.num_psu_sampled,
            total_psu: self.total_psu,
            households_per_ea: self.households_per_ea,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FunctionalsSection {
    /// Prevalence threshold for exceedance and excursion sets.
    pub u: f64,
    pub alpha_level: f64,
    pub points_per_area: usize,
    /// Map grid spacing; defaults to half the interior mesh edge.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_spacing: Option<f64>,
}

impl Default for FunctionalsSection {
    fn default() -> Self {
        Self {
            u: 0.07,
            alpha_level: 0.05,
            points_per_area: 100,
            grid_spacing: None,
        }
    }
}

/// Simulation parameters; the seed comes from the top level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub beta0: f64,
    pub tau: f64,
    pub kappa: f64,
    pub nugget_variance: f64,
    pub n_clusters: usize,
    pub m_min: usize,
    pub m_max: usize,
    pub lattice_size: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        let s = SimConfig::default();
        Self {
            beta0: s.beta0,
            tau: s.tau,
            kappa: s.kappa,
            nugget_variance: s.nugget_variance,
            n_clusters: s.n_clusters,
            m_min: s.m_min,
            m_max: s.m_max,
            lattice_size: s.lattice_size,
        }
    }
}

impl PipelineConfig {
    /// Parses, resolves relative paths against `base` and validates.
    pub fn parse(text: &str, base: &Path) -> CliResult<Self> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        join(&mut p.output);
        for opt in [
            &mut p.boundary,
            &mut p.areas,
            &mut p.data,
            &mut p.locations,
            &mut p.household_sizes,
            &mut p.adjacency,
            &mut p.covariates,
        ]
        .into_iter()
        .flatten()
        {
            join(opt);
        }
    }

    /// Range checks on every numeric field and existence of input files.
    pub fn validate(&self) -> CliResult<()> {
        let err = |key: &str, msg: String| Err(CliError::Config(format!("{key}: {msg}")));
        let positive = |key: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                err(key, format!("must be positive, got {v}"))
            }
        };
        let probability = |key: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                err(key, format!("must lie strictly between 0 and 1, got {v}"))
            }
        };

        positive("mesh.interior_max_edge", self.mesh.interior_max_edge)?;
        positive("mesh.exterior_max_edge", self.mesh.exterior_max_edge)?;
        if !(self.mesh.extension_factor >= 1.0 && self.mesh.extension_factor.is_finite()) {
            return err(
                "mesh.extension_factor",
                format!("must be at least 1, got {}", self.mesh.extension_factor),
            );
        }

        let m = &self.model;
        if let Some(r) = m.initial_range {
            positive("model.initial_range", r)?;
        }
        positive("model.initial_sigma2", m.initial_sigma2)?;
        positive("model.initial_nugget_variance", m.initial_nugget_variance)?;
        for (key, v) in [
            (
                "model.bym_initial_log_precision_icar",
                m.bym_initial_log_precision_icar,
            ),
            (
                "model.bym_initial_log_precision_iid",
                m.bym_initial_log_precision_iid,
            ),
        ] {
            if !v.is_finite() {
                return err(key, format!("must be finite, got {v}"));
            }
        }
        if m.grid_offsets.is_empty() || m.grid_offsets.iter().any(|v| !v.is_finite()) {
            return err(
                "model.grid_offsets",
                "needs at least one finite offset".into(),
            );
        }
        if !(0.0..1.0).contains(&m.weight_threshold) {
            return err(
                "model.weight_threshold",
                format!("must lie in [0, 1), got {}", m.weight_threshold),
            );
        }
        if m.num_samples == 0 {
            return err("model.num_samples", "must be at least 1".into());
        }
        if m.max_evaluations == 0 {
            return err("model.max_evaluations", "must be at least 1".into());
        }

        let s = &self.survey;
        if s.num_psu_sampled == 0 || s.num_psu_sampled > s.total_psu {
            return err(
                "survey.num_psu_sampled",
                format!("must lie in 1..={}, got {}", s.total_psu, s.num_psu_sampled),
            );
        }
        if s.households_per_ea == 0 {
            return err("survey.households_per_ea", "must be at least 1".into());
        }
        if let FixPolicy::Clamp { epsilon } = s.fix_policy {
            if !(epsilon > 0.0 && epsilon < 0.5) {
                return err(
                    "survey.fix_policy.epsilon",
                    format!("must lie in (0, 0.5), got {epsilon}"),
                );
            }
        }

        let f = &self.functionals;
        probability("functionals.u", f.u)?;
        probability("functionals.alpha_level", f.alpha_level)?;
        if f.points_per_area == 0 {
            return err("functionals.points_per_area", "must be at least 1".into());
        }
        if let Some(h) = f.grid_spacing {
            positive("functionals.grid_spacing", h)?;
        }

        self.sim_config(HouseholdSizes::default())
            .validate()
            .map_err(|e| CliError::Config(format!("sim: {e}")))?;

        let p = &self.paths;
        for (key, path) in [
            ("paths.boundary", &p.boundary),
            ("paths.areas", &p.areas),
            ("paths.data", &p.data),
            ("paths.locations", &p.locations),
            ("paths.household_sizes", &p.household_sizes),
            ("paths.adjacency", &p.adjacency),
            ("paths.covariates", &p.covariates),
        ] {
            if let Some(path) = path {
                if !path.is_file() {
                    return err(key, format!("file {} does not exist", path.display()));
                }
            }
        }
        Ok(())
    }

    pub fn sim_config(&self, household_sizes: HouseholdSizes) -> SimConfig {
        let s = &self.sim;
        SimConfig {
            beta0: s.beta0,
            tau: s.tau,
            kappa: s.kappa,
            nugget_variance: s.nugget_variance,
            n_clusters: s.n_clusters,
            total_psu: self.survey.total_psu,
            households_per_ea: self.survey.households_per_ea,
            m_min: s.m_min,
            m_max: s.m_max,
            lattice_size: s.lattice_size,
            seed: self.seed,
            household_sizes,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn grid_spacing(&self) -> f64 {
        self.functionals
            .grid_spacing
            .unwrap_or(self.mesh.interior_max_edge / 2.0)
    }
}
