//! Synthetic two-stage cluster surveys over a Matérn field, with truth
//! surfaces for validation.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{build_mesh, fem_matrices, project, BBox, Point2, Polygon};
use crate::sparse::CholeskyFactor;
use crate::spde::{assemble_precision, matern_cov, sigma_from_tau, MaternParams, SpdeTheta};
use crate::special::expit;
use crate::survey::{design_weights, Cluster, Household, SurveyFrame};

/// Largest point set simulated exactly from the dense covariance.
pub const DENSE_LIMIT: usize = 5000;
pub const JITTER: f64 = 1e-8;

const STREAM_LOCATIONS: u64 = 0;
const STREAM_FIELD: u64 = 1;
const STREAM_HOUSEHOLDS: u64 = 2;
const STREAM_LATTICE: u64 = 3;

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s);
    rng
}

fn normals<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn dense_covariance(points: &[Point2], params: &MaternParams) -> DMatrix<f64> {
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let c = matern_cov(points[i].dist(&points[j]), params);
            k[(i, j)] = c;
            k[(j, i)] = c;
        }
    }
    k
}

/// Cholesky factor of a covariance, retrying once with a diagonal jitter.
fn robust_cholesky(mut k: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(c) = k.clone().cholesky() {
        return Ok(c.l());
    }
    log::warn!("covariance is not positive definite; adding jitter {JITTER}");
    for i in 0..k.nrows() {
        k[(i, i)] += JITTER;
    }
    k.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::Numerical("covariance not positive definite after jitter".into()))
}

fn simulate_dense<R: Rng>(
    points: &[Point2],
    params: &MaternParams,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let l = robust_cholesky(dense_covariance(points, params))?;
    let z = DVector::from_vec(normals(points.len(), rng));
    Ok((l * z).as_slice().to_vec())
}

/// GMRF draw on a mesh covering the points with a margin of one practical
/// range, interpolated to the points.
fn simulate_mesh<R: Rng>(
    points: &[Point2],
    params: &MaternParams,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if (params.nu - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidInput(format!(
            "mesh simulation supports smoothness 1 only, got {}",
            params.nu
        )));
    }
    let range = params.practical_range();
    let bb = BBox::from_points(points).ok_or_else(|| Error::NoData("no locations".into()))?;
    let pad = 1e-6 * bb.diagonal().max(1.0);
    let region = Polygon::rectangle(
        "sim",
        Point2::new(bb.min.x - pad, bb.min.y - pad),
        Point2::new(bb.max.x + pad, bb.max.y + pad),
    )?;
    let h = range / 6.0;
    let extension = 1.0 + range / region.bbox().diagonal();
    let mesh = build_mesh(&region, h, extension, 3.0 * h)?;
    let q = assemble_precision(&fem_matrices(&mesh), SpdeTheta::from_matern(params))?;
    let w = CholeskyFactor::new(&q)?.sample_with(&normals(q.dim(), rng));
    Ok(project(&mesh, points).apply(&w))
}

fn simulate_with<R: Rng>(
    points: &[Point2],
    params: &MaternParams,
    rng: &mut R,
) -> Result<Vec<f64>> {
    params.validate()?;
    if points.is_empty() {
        return Ok(Vec::new());
    }
    if points.len() <= DENSE_LIMIT {
        simulate_dense(points, params, rng)
    } else {
        simulate_mesh(points, params, rng)
    }
}

/// Zero-mean Matérn draw at `points`: exact for up to 5,000 points, via an
/// SPDE mesh beyond that.
pub fn simulate_field(points: &[Point2], params: &MaternParams, seed: u64) -> Result<Vec<f64>> {
    simulate_with(points, params, &mut stream(seed, 0))
}

/// Draw at `targets` conditional on field values `known` at `anchors`:
/// an unconditional draw `U` over both sets corrected by simple kriging,
/// `S_t = U_t + K_ta K_aa⁻¹ (known − U_a)`.
pub fn conditional_field<R: Rng>(
    anchors: &[Point2],
    known: &[f64],
    targets: &[Point2],
    params: &MaternParams,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if anchors.len() != known.len() {
        return Err(Error::Dimension(format!(
            "{} anchors, {} values",
            anchors.len(),
            known.len()
        )));
    }
    let all: Vec<Point2> = anchors.iter().chain(targets).copied().collect();
    let u = simulate_with(&all, params, rng)?;
    if anchors.is_empty() {
        return Ok(u);
    }
    let na = anchors.len();
    let l = robust_cholesky(dense_covariance(anchors, params))?;
    let resid = DVector::from_iterator(na, (0..na).map(|i| known[i] - u[i]));
    let y = l
        .solve_lower_triangular(&resid)
        .expect("nonsingular factor");
    let alpha = l
        .transpose()
        .solve_upper_triangular(&y)
        .expect("nonsingular factor");
    Ok(targets
        .par_iter()
        .enumerate()
        .map(|(t, p)| {
            let kriged: f64 = anchors
                .iter()
                .zip(alpha.iter())
                .map(|(a, w)| w * matern_cov(p.dist(a), params))
                .sum();
            u[na + t] + kriged
        })
        .collect())
}

/// Distribution of people tested per household.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HouseholdSizes {
    pub sizes: Vec<u32>,
    pub probabilities: Vec<f64>,
}

impl Default for HouseholdSizes {
    /// Uniform over 1..=12.
    fn default() -> Self {
        Self {
            sizes: (1..=12).collect(),
            probabilities: vec![1.0 / 12.0; 12],
        }
    }
}

impl HouseholdSizes {
    pub fn new(sizes: Vec<u32>, probabilities: Vec<f64>) -> Result<Self> {
        let h = Self {
            sizes,
            probabilities,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.sizes.len() != self.probabilities.len() {
            return Err(Error::InvalidInput(
                "household-size distribution is empty or ragged".into(),
            ));
        }
        if self.sizes.contains(&0) {
            return Err(Error::InvalidInput(
                "household sizes must be at least 1".into(),
            ));
        }
        if self
            .probabilities
            .iter()
            .any(|p| !(p.is_finite() && *p >= 0.0))
            || !(self.probabilities.iter().sum::<f64>() > 0.0)
        {
            return Err(Error::InvalidInput(
                "household-size probabilities must be non-negative with positive sum".into(),
            ));
        }
        Ok(())
    }

    /// Reads `size,probability` rows.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            size: u32,
            probability: f64,
        }
        let mut sizes = Vec::new();
        let mut probabilities = Vec::new();
        for row in csv::Reader::from_reader(reader).deserialize() {
            let r: Row = row?;
            sizes.push(r.size);
            probabilities.push(r.probability);
        }
        Self::new(sizes, probabilities)
    }

    pub fn mean(&self) -> f64 {
        let total: f64 = self.probabilities.iter().sum();
        self.sizes
            .iter()
            .zip(&self.probabilities)
            .map(|(&s, p)| s as f64 * p)
            .sum::<f64>()
            / total
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub beta0: f64,
    pub tau: f64,
    pub kappa: f64,
    pub nugget_variance: f64,
    pub n_clusters: usize,
    pub total_psu: usize,
    pub households_per_ea: usize,
    pub m_min: usize,
    pub m_max: usize,
    /// Cells per side of the truth lattice.
    pub lattice_size: usize,
    pub seed: u64,
    #[serde(skip)]
    pub household_sizes: HouseholdSizes,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            beta0: (0.07f64 / 0.93).ln(),
            tau: (-0.5f64).exp(),
            kappa: 0.5f64.exp(),
            nugget_variance: 0.01,
            n_clusters: 400,
            total_psu: 46_034,
            households_per_ea: 100,
            m_min: 4,
            m_max: 11,
            lattice_size: 200,
            seed: 1,
            household_sizes: HouseholdSizes::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !self.beta0.is_finite() {
            return bad(format!("beta0 must be finite, got {}", self.beta0));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return bad(format!("kappa must be positive, got {}", self.kappa));
        }
        if !(self.nugget_variance.is_finite() && self.nugget_variance >= 0.0) {
            return bad(format!(
                "nugget_variance must be non-negative, got {}",
                self.nugget_variance
            ));
        }
        if self.n_clusters == 0 || self.n_clusters > self.total_psu {
            return bad(format!(
                "n_clusters must lie in 1..={}, got {}",
                self.total_psu, self.n_clusters
            ));
        }
        if self.m_min == 0 || self.m_min > self.m_max || self.m_max > self.households_per_ea {
            return bad(format!(
                "household range {}..={} must lie within 1..={}",
                self.m_min, self.m_max, self.households_per_ea
            ));
        }
        if self.lattice_size == 0 {
            return bad("lattice_size must be positive".into());
        }
        self.household_sizes.validate()
    }

    /// Field marginal variance implied by `tau` and `kappa`.
    pub fn field_variance(&self) -> f64 {
        sigma_from_tau(self.tau, self.kappa, 1.0)
    }

    pub fn matern(&self) -> MaternParams {
        MaternParams {
            sigma2: self.field_variance(),
            kappa: self.kappa,
            nu: 1.0,
        }
    }
}

/// Truth surface on a regular lattice clipped to the areas.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthLattice {
    pub points: Vec<Point2>,
    /// Index into the area list.
    pub area: Vec<usize>,
    pub field: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AreaTruth {
    pub area_id: String,
    /// Lattice average of `expit(β₀ + S)`.
    pub prevalence: f64,
    pub num_points: usize,
}

#[derive(Clone, Debug)]
pub struct SimOutput {
    pub frame: SurveyFrame,
    /// `S_i` at each cluster, in frame order.
    pub cluster_field: Vec<f64>,
    pub lattice: TruthLattice,
    pub truth: Vec<AreaTruth>,
    pub config: SimConfig,
}

impl SimOutput {
    pub fn write_lattice_csv<W: Write>(&self, area_ids: &[String], writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x", "y", "area_id", "field", "prevalence"])?;
        for (k, p) in self.lattice.points.iter().enumerate() {
            w.write_record([
                p.x.to_string(),
                p.y.to_string(),
                area_ids[self.lattice.area[k]].clone(),
                self.lattice.field[k].to_string(),
                expit(self.config.beta0 + self.lattice.field[k]).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_truth_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for t in &self.truth {
            w.serialize(t)?;
        }
        w.flush()?;
        Ok(())
    }

    /// `cluster_id,area_id,x,y,field`.
    pub fn write_cluster_field_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["cluster_id", "area_id", "x", "y", "field"])?;
        for (c, s) in self.frame.clusters().iter().zip(&self.cluster_field) {
            w.write_record([
                c.cluster_id.clone(),
                c.area_id.clone(),
                c.location.x.to_string(),
                c.location.y.to_string(),
                s.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads `x,y` rows.
pub fn read_locations_csv<R: Read>(reader: R) -> Result<Vec<Point2>> {
    #[derive(Deserialize)]
    struct Row {
        x: f64,
        y: f64,
    }
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| {
            let r: Row = r?;
            Ok(Point2::new(r.x, r.y))
        })
        .collect()
}

pub fn uniform_points<R: Rng>(region: &Polygon, n: usize, rng: &mut R) -> Vec<Point2> {
    let bb = region.bbox();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = Point2::new(
            bb.min.x + rng.random::<f64>() * bb.width(),
            bb.min.y + rng.random::<f64>() * bb.height(),
        );
        if region.contains(&p) {
            out.push(p);
        }
    }
    out
}

/// Index of the area containing `p`, falling back to the nearest area.
fn assign_area(p: &Point2, areas: &[Polygon]) -> usize {
    areas.iter().position(|a| a.contains(p)).unwrap_or_else(|| {
        (0..areas.len())
            .min_by(|&a, &b| areas[a].distance(p).total_cmp(&areas[b].distance(p)))
            .unwrap_or(0)
    })
}

/// Distinct area ids in first-seen order and each polygon's position in it.
fn area_index(areas: &[Polygon]) -> (Vec<String>, Vec<usize>) {
    let mut ids: Vec<String> = Vec::new();
    let idx = areas
        .iter()
        .map(|a| match ids.iter().position(|s| s == a.id()) {
            Some(i) => i,
            None => {
                ids.push(a.id().to_string());
                ids.len() - 1
            }
        })
        .collect();
    (ids, idx)
}

fn truth_lattice(areas: &[Polygon], size: usize) -> Result<(Vec<Point2>, Vec<usize>)> {
    let bb = BBox::from_points(areas.iter().flat_map(|a| a.outer()))
        .ok_or_else(|| Error::NoData("no areas for the truth lattice".into()))?;
    let (dx, dy) = (bb.width() / size as f64, bb.height() / size as f64);
    let (_, poly_area) = area_index(areas);
    let mut pts = Vec::new();
    let mut which = Vec::new();
    for iy in 0..size {
        for ix in 0..size {
            let p = Point2::new(
                bb.min.x + (ix as f64 + 0.5) * dx,
                bb.min.y + (iy as f64 + 0.5) * dy,
            );
            if bb.contains(&p) {
                if let Some(k) = areas.iter().position(|a| a.contains(&p)) {
                    pts.push(p);
                    which.push(poly_area[k]);
                }
            }
        }
    }
    Ok((pts, which))
}

/// Simulates one survey: clusters (uniform in `boundary` unless given), the
/// field at clusters, households, binomial outcomes and design weights, plus
/// the noise-free truth surface on a lattice over `areas`.
pub fn simulate_survey(
    config: &SimConfig,
    boundary: &Polygon,
    areas: &[Polygon],
    cluster_locations: Option<&[Point2]>,
) -> Result<SimOutput> {
    config.validate()?;
    if areas.is_empty() {
        return Err(Error::InvalidInput(
            "at least one area polygon is required".into(),
        ));
    }
    let params = config.matern();
    let locations: Vec<Point2> = match cluster_locations {
        Some(l) => {
            if l.is_empty() {
                return Err(Error::NoData("empty cluster location list".into()));
            }
            l.to_vec()
        }
        None => uniform_points(
            boundary,
            config.n_clusters,
            &mut stream(config.seed, STREAM_LOCATIONS),
        ),
    };
    let n_clusters = locations.len();
    if n_clusters > config.total_psu {
        return Err(Error::InvalidInput(format!(
            "{n_clusters} clusters exceed total_psu {}",
            config.total_psu
        )));
    }
    let field = simulate_with(&locations, &params, &mut stream(config.seed, STREAM_FIELD))?;

    let (area_ids, poly_area) = area_index(areas);
    let mut rng = stream(config.seed, STREAM_HOUSEHOLDS);
    let sizes = WeightedIndex::new(&config.household_sizes.probabilities)
        .map_err(|e| Error::InvalidInput(format!("household-size distribution: {e}")))?;
    let nugget = Normal::new(0.0, config.nugget_variance.sqrt())
        .map_err(|e| Error::InvalidInput(format!("nugget: {e}")))?;
    let width = (n_clusters.max(1) as f64).log10().floor() as usize + 1;
    let mut clusters = Vec::with_capacity(n_clusters);
    for (i, (loc, s)) in locations.iter().zip(&field).enumerate() {
        let m = rng.random_range(config.m_min..=config.m_max);
        let w = design_weights(n_clusters, config.total_psu, m, config.households_per_ea)?;
        let mut households = Vec::with_capacity(m);
        for j in 0..m {
            let n = config.household_sizes.sizes[sizes.sample(&mut rng)];
            let eps: f64 = nugget.sample(&mut rng);
            let p = expit(config.beta0 + s + eps);
            let y = Binomial::new(n as u64, p)
                .map_err(|e| Error::Numerical(format!("binomial draw: {e}")))?
                .sample(&mut rng) as u32;
            households.push(Household {
                household_id: format!("h{:02}", j + 1),
                n,
                y,
                weight: w,
            });
        }
        clusters.push(Cluster {
            cluster_id: format!("c{:0width$}", i + 1),
            area_id: area_ids[poly_area[assign_area(loc, areas)]].clone(),
            location: *loc,
            households,
        });
    }

    let (lattice_points, lattice_area) = truth_lattice(areas, config.lattice_size)?;
    let lattice_field = conditional_field(
        &locations,
        &field,
        &lattice_points,
        &params,
        &mut stream(config.seed, STREAM_LATTICE),
    )?;
    let mut sums = vec![(0.0, 0usize); area_ids.len()];
    for (k, s) in lattice_area.iter().zip(&lattice_field) {
        sums[*k].0 += expit(config.beta0 + s);
        sums[*k].1 += 1;
    }
    let truth = area_ids
        .iter()
        .zip(&sums)
        .map(|(id, &(t, n))| AreaTruth {
            area_id: id.clone(),
            prevalence: if n > 0 { t / n as f64 } else { f64::NAN },
            num_points: n,
        })
        .collect();

    Ok(SimOutput {
        frame: SurveyFrame::new(clusters)?,
        cluster_field: field,
        lattice: TruthLattice {
            points: lattice_points,
            area: lattice_area,
            field: lattice_field,
        },
        truth,
        config: config.clone(),
    })
}

/// Seed of replicate `r`, derived from a master seed.
pub fn replicate_seed(master: u64, r: usize) -> u64 {
    stream(master, 1_000 + r as u64).next_u64()
}

/// Independent replicates in parallel; replicate `r` uses `replicate_seed(seed, r)`.
pub fn simulate_replicates(
    config: &SimConfig,
    boundary: &Polygon,
    areas: &[Polygon],
    replicates: usize,
) -> Result<Vec<SimOutput>> {
    (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut c = config.clone();
            c.seed = replicate_seed(config.seed, r);
            simulate_survey(&c, boundary, areas, None)
        })
        .collect()
}
