//! Posterior functionals of the prevalence surface: area averages, pointwise
//! exceedance probabilities and simultaneous excursion sets.

use std::io::Write;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use spade::{ConstrainedDelaunayTriangulation, Triangulation};

use crate::error::{Error, Result};
use crate::geometry::{project_with, BBox, Point2, Polygon, TriMesh, TriangleLocator};
use crate::inference::{FitResult, JointSamples};
use crate::special::{expit, logit};

/// Relative size below which bounding-box rejection gives way to sampling
/// from a triangulation.
pub const TINY_AREA_RATIO: f64 = 1e-6;

/// Maps latent samples to the logit surface `η(x) = β₀ + S(x)`; any nugget
/// or covariate effects are excluded.
#[derive(Clone, Debug)]
pub struct SurfaceModel {
    mesh: TriMesh,
    locator: TriangleLocator,
    intercept: usize,
    field: Range<usize>,
}

impl SurfaceModel {
    pub fn new(mesh: TriMesh, intercept: usize, field: Range<usize>) -> Result<Self> {
        if field.len() != mesh.num_vertices() {
            return Err(Error::Dimension(format!(
                "field block has {} coordinates, mesh has {} vertices",
                field.len(),
                mesh.num_vertices()
            )));
        }
        let locator = TriangleLocator::new(&mesh);
        Ok(Self {
            mesh,
            locator,
            intercept,
            field,
        })
    }

    /// Uses the `intercept` and `spde` components of a fit.
    pub fn from_fit(fit: &FitResult, mesh: TriMesh) -> Result<Self> {
        let b = fit
            .component_range("intercept")
            .ok_or_else(|| Error::InvalidInput("fit has no intercept".into()))?;
        let f = fit
            .component_range("spde")
            .ok_or_else(|| Error::InvalidInput("fit has no spde component".into()))?;
        Self::new(mesh, b.start, f)
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    /// Logit-surface values at `points` for every sample. Points outside the
    /// mesh are flagged and get NaN rows.
    pub fn evaluate(&self, samples: &JointSamples, points: &[Point2]) -> Result<SampleMatrix> {
        if samples.dim() < self.field.end || samples.dim() <= self.intercept {
            return Err(Error::Dimension(format!(
                "samples have dimension {}, surface needs {}",
                samples.dim(),
                self.field.end.max(self.intercept + 1)
            )));
        }
        let proj = project_with(&self.mesh, &self.locator, points);
        let rows = proj.rows();
        let ns = samples.num_samples();
        let values: Vec<Vec<f64>> = rows
            .par_iter()
            .enumerate()
            .map(|(j, row)| {
                if proj.is_outside(j) {
                    return vec![f64::NAN; ns];
                }
                samples
                    .iter()
                    .map(|x| {
                        x[self.intercept]
                            + row
                                .iter()
                                .map(|&(k, a)| a * x[self.field.start + k])
                                .sum::<f64>()
                    })
                    .collect()
            })
            .collect();
        Ok(SampleMatrix {
            num_samples: ns,
            values,
            outside: proj.outside_flags().to_vec(),
        })
    }
}

/// Point-major matrix of logit-scale surface samples.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleMatrix {
    num_samples: usize,
    values: Vec<Vec<f64>>,
    outside: Vec<bool>,
}

impl SampleMatrix {
    /// `values[j][s]` is sample `s` at point `j`.
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        let ns = values.first().map_or(0, Vec::len);
        if values.iter().any(|v| v.len() != ns) {
            return Err(Error::Dimension("ragged sample matrix".into()));
        }
        Ok(Self {
            num_samples: ns,
            outside: vec![false; values.len()],
            values,
        })
    }

    pub fn num_points(&self) -> usize {
        self.values.len()
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.values[j]
    }

    pub fn is_outside(&self, j: usize) -> bool {
        self.outside[j]
    }

    /// Posterior mean and sd of `expit(η)` per point.
    pub fn prevalence_moments(&self) -> Vec<(f64, f64)> {
        self.values
            .par_iter()
            .map(|v| {
                let n = v.len() as f64;
                let m = v.iter().map(|&x| expit(x)).sum::<f64>() / n;
                let var =
                    v.iter().map(|&x| (expit(x) - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
                (m, var.sqrt())
            })
            .collect()
    }

    /// Sample quantile of `expit(η)` per point.
    pub fn prevalence_quantile(&self, p: f64) -> Vec<f64> {
        self.values
            .par_iter()
            .map(|v| {
                let mut s: Vec<f64> = v.iter().map(|&x| expit(x)).collect();
                s.sort_by(f64::total_cmp);
                empirical_quantile(&s, p)
            })
            .collect()
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AreaAverage {
    pub area_id: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
    /// Integration points inside the mesh.
    pub num_points: usize,
    /// No integration point fell inside the mesh.
    pub excluded: bool,
}

#[derive(Clone, Debug)]
pub struct AreaAverageResult {
    pub areas: Vec<AreaAverage>,
    /// `draws[k][s]`: `T_k` under joint sample `s` (empty when excluded).
    pub draws: Vec<Vec<f64>>,
}

impl AreaAverageResult {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for a in &self.areas {
            w.serialize(a)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Polygons sharing an id form one area; order of first appearance.
pub fn group_areas(polygons: &[Polygon]) -> Vec<(String, Vec<&Polygon>)> {
    let mut out: Vec<(String, Vec<&Polygon>)> = Vec::new();
    for p in polygons {
        match out.iter_mut().find(|(id, _)| id == p.id()) {
            Some((_, v)) => v.push(p),
            None => out.push((p.id().to_string(), vec![p])),
        }
    }
    out
}

/// Triangles covering a polygon, from a constrained Delaunay triangulation of
/// its rings.
fn polygon_triangles(poly: &Polygon) -> Vec<[Point2; 3]> {
    let mut cdt = ConstrainedDelaunayTriangulation::<spade::Point2<f64>>::new();
    for ring in poly.rings() {
        let handles: Vec<_> = ring
            .iter()
            .filter_map(|p| cdt.insert(spade::Point2::new(p.x, p.y)).ok())
            .collect();
        for k in 0..handles.len() {
            let (a, b) = (handles[k], handles[(k + 1) % handles.len()]);
            if a != b && cdt.can_add_constraint(a, b) {
                cdt.add_constraint(a, b);
            }
        }
    }
    cdt.inner_faces()
        .filter_map(|f| {
            let [a, b, c] = f.positions();
            let t = [
                Point2::new(a.x, a.y),
                Point2::new(b.x, b.y),
                Point2::new(c.x, c.y),
            ];
            let centroid = Point2::new(
                (t[0].x + t[1].x + t[2].x) / 3.0,
                (t[0].y + t[1].y + t[2].y) / 3.0,
            );
            poly.contains(&centroid).then_some(t)
        })
        .collect()
}

fn tri_area(t: &[Point2; 3]) -> f64 {
    0.5 * ((t[1].x - t[0].x) * (t[2].y - t[0].y) - (t[2].x - t[0].x) * (t[1].y - t[0].y)).abs()
}

/// `n` uniform points in the union of `parts`.
pub fn sample_in_area<R: Rng>(parts: &[&Polygon], n: usize, rng: &mut R) -> Result<Vec<Point2>> {
    let area: f64 = parts.iter().map(|p| p.area()).sum();
    let bbox = BBox::from_points(parts.iter().flat_map(|p| p.outer()))
        .ok_or_else(|| Error::InvalidGeometry("area without vertices".into()))?;
    if !(area > 0.0) {
        return Err(Error::InvalidGeometry("area has zero extent".into()));
    }
    let mut out = Vec::with_capacity(n);
    if area >= TINY_AREA_RATIO * bbox.area() {
        while out.len() < n {
            let p = Point2::new(
                bbox.min.x + rng.random::<f64>() * bbox.width(),
                bbox.min.y + rng.random::<f64>() * bbox.height(),
            );
            if parts.iter().any(|poly| poly.contains(&p)) {
                out.push(p);
            }
        }
        return Ok(out);
    }
    let tris: Vec<[Point2; 3]> = parts.iter().flat_map(|p| polygon_triangles(p)).collect();
    let mut cum = Vec::with_capacity(tris.len());
    let mut acc = 0.0;
    for t in &tris {
        acc += tri_area(t);
        cum.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::InvalidGeometry("area triangulation is empty".into()));
    }
    for _ in 0..n {
        let r = rng.random::<f64>() * acc;
        let t = &tris[cum.partition_point(|&c| c < r).min(tris.len() - 1)];
        let (mut a, mut b) = (rng.random::<f64>(), rng.random::<f64>());
        if a + b > 1.0 {
            a = 1.0 - a;
            b = 1.0 - b;
        }
        out.push(Point2::new(
            t[0].x + a * (t[1].x - t[0].x) + b * (t[2].x - t[0].x),
            t[0].y + a * (t[1].y - t[0].y) + b * (t[2].y - t[0].y),
        ));
    }
    Ok(out)
}

fn summarize(draws: &[f64]) -> (f64, f64, f64, f64, f64) {
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let sd = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut s = draws.to_vec();
    s.sort_by(f64::total_cmp);
    (
        mean,
        sd,
        empirical_quantile(&s, 0.025),
        empirical_quantile(&s, 0.5),
        empirical_quantile(&s, 0.975),
    )
}

/// Monte Carlo area averages `T_k = (1/J) Σ_j expit(η(x_kj))` per joint sample.
/// Each area draws its points from its own random stream.
pub fn area_averages(
    samples: &JointSamples,
    model: &SurfaceModel,
    areas: &[Polygon],
    points_per_area: usize,
    seed: u64,
) -> Result<AreaAverageResult> {
    if points_per_area == 0 {
        return Err(Error::InvalidInput(
            "points_per_area must be at least 1".into(),
        ));
    }
    let groups = group_areas(areas);
    let mut out = Vec::with_capacity(groups.len());
    let mut all_draws = Vec::with_capacity(groups.len());
    for (k, (id, parts)) in groups.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let pts = sample_in_area(parts, points_per_area, &mut rng)?;
        let m = model.evaluate(samples, &pts)?;
        let inside: Vec<usize> = (0..pts.len()).filter(|&j| !m.is_outside(j)).collect();
        if inside.is_empty() {
            log::warn!("area {id} has no mesh coverage and is excluded");
            out.push(AreaAverage {
                area_id: id.clone(),
                mean: f64::NAN,
                sd: f64::NAN,
                q025: f64::NAN,
                q50: f64::NAN,
                q975: f64::NAN,
                num_points: 0,
                excluded: true,
            });
            all_draws.push(Vec::new());
            continue;
        }
        let j = inside.len() as f64;
        let draws: Vec<f64> = (0..samples.num_samples())
            .map(|s| inside.iter().map(|&p| expit(m.point(p)[s])).sum::<f64>() / j)
            .collect();
        let (mean, sd, q025, q50, q975) = summarize(&draws);
        out.push(AreaAverage {
            area_id: id.clone(),
            mean,
            sd,
            q025,
            q50,
            q975,
            num_points: inside.len(),
            excluded: false,
        });
        all_draws.push(draws);
    }
    Ok(AreaAverageResult {
        areas: out,
        draws: all_draws,
    })
}

fn check_threshold(u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::InvalidInput(format!("threshold {u} outside (0, 1)")));
    }
    Ok(logit(u))
}

/// Fraction of samples with `expit(η) > u` at each point (NaN outside the mesh).
pub fn exceedance_probabilities(matrix: &SampleMatrix, u: f64) -> Result<Vec<f64>> {
    let l = check_threshold(u)?;
    let ns = matrix.num_samples() as f64;
    Ok(matrix
        .values
        .par_iter()
        .enumerate()
        .map(|(j, v)| {
            if matrix.is_outside(j) {
                f64::NAN
            } else {
                v.iter().filter(|&&x| x > l).count() as f64 / ns
            }
        })
        .collect())
}

pub fn pointwise_exceedance(
    samples: &JointSamples,
    model: &SurfaceModel,
    grid: &[Point2],
    u: f64,
) -> Result<Vec<f64>> {
    exceedance_probabilities(&model.evaluate(samples, grid)?, u)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExcursionLabel {
    Above,
    Below,
    Indeterminate,
}

impl ExcursionLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExcursionLabel::Above => "above",
            ExcursionLabel::Below => "below",
            ExcursionLabel::Indeterminate => "indeterminate",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExcursionResult {
    pub u: f64,
    pub alpha_level: f64,
    pub exceed_prob: Vec<f64>,
    pub labels: Vec<ExcursionLabel>,
    /// Empirical probability that every above-set point exceeds `u`.
    pub joint_above: f64,
    pub joint_below: f64,
}

impl ExcursionResult {
    pub fn count(&self, label: ExcursionLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn set(&self, label: ExcursionLabel) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&j| self.labels[j] == label)
            .collect()
    }
}

/// Grows a set along `order` while the fraction of samples in which every
/// member satisfies `hit` stays at least `level`.
fn greedy_prefix(
    matrix: &SampleMatrix,
    order: &[usize],
    level: f64,
    hit: impl Fn(f64) -> bool,
    blocked: &[bool],
) -> (Vec<usize>, f64) {
    let ns = matrix.num_samples();
    let mut alive = vec![true; ns];
    let mut count = ns;
    let mut set = Vec::new();
    for &j in order {
        if blocked[j] {
            break;
        }
        let v = matrix.point(j);
        let next = alive.iter().zip(v).filter(|(&a, &x)| a && hit(x)).count();
        if (next as f64) < level * ns as f64 {
            break;
        }
        alive
            .iter_mut()
            .zip(v)
            .for_each(|(a, &x)| *a = *a && hit(x));
        count = next;
        set.push(j);
    }
    (set, count as f64 / ns.max(1) as f64)
}

/// Three-region excursion sets from a sample matrix. Points enter the
/// above-set in descending order of exceedance probability (ties by index)
/// while the joint exceedance probability stays at least `1 − alpha_level`;
/// the below-set is built symmetrically.
pub fn excursion_sets(matrix: &SampleMatrix, u: f64, alpha_level: f64) -> Result<ExcursionResult> {
    if !(alpha_level > 0.0 && alpha_level <= 0.5) {
        return Err(Error::InvalidInput(format!(
            "alpha_level {alpha_level} outside (0, 0.5]"
        )));
    }
    if matrix.num_samples() == 0 {
        return Err(Error::NoData("no samples".into()));
    }
    let l = check_threshold(u)?;
    let prob = exceedance_probabilities(matrix, u)?;
    let ns = matrix.num_samples() as f64;
    let below_prob: Vec<f64> = matrix
        .values
        .par_iter()
        .map(|v| v.iter().filter(|&&x| x < l).count() as f64 / ns)
        .collect();
    let valid: Vec<usize> = (0..prob.len()).filter(|&j| !matrix.is_outside(j)).collect();
    let mut up = valid.clone();
    up.sort_by(|&a, &b| prob[b].total_cmp(&prob[a]).then(a.cmp(&b)));
    let mut down = valid;
    down.sort_by(|&a, &b| below_prob[b].total_cmp(&below_prob[a]).then(a.cmp(&b)));
    let level = 1.0 - alpha_level;
    let none = vec![false; prob.len()];
    let (above, joint_above) = greedy_prefix(matrix, &up, level, |x| x > l, &none);
    let mut blocked = none;
    above.iter().for_each(|&j| blocked[j] = true);
    let (below, joint_below) = greedy_prefix(matrix, &down, level, |x| x < l, &blocked);
    let mut labels = vec![ExcursionLabel::Indeterminate; prob.len()];
    above
        .iter()
        .for_each(|&j| labels[j] = ExcursionLabel::Above);
    below
        .iter()
        .for_each(|&j| labels[j] = ExcursionLabel::Below);
    Ok(ExcursionResult {
        u,
        alpha_level,
        exceed_prob: prob,
        labels,
        joint_above,
        joint_below,
    })
}

pub fn simultaneous_excursions(
    samples: &JointSamples,
    model: &SurfaceModel,
    grid: &[Point2],
    u: f64,
    alpha_level: f64,
) -> Result<ExcursionResult> {
    excursion_sets(&model.evaluate(samples, grid)?, u, alpha_level)
}

/// Regular lattice of cell centres clipped to a region.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalGrid {
    pub origin: Point2,
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
    pub points: Vec<Point2>,
    /// Lattice cell `(ix, iy)` of each point, `iy = 0` at the bottom.
    pub cells: Vec<(usize, usize)>,
}

impl EvalGrid {
    pub fn new(region: &Polygon, spacing: f64) -> Result<Self> {
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidInput(format!(
                "grid spacing must be positive, got {spacing}"
            )));
        }
        let bb = region.bbox();
        let nx = (bb.width() / spacing).ceil().max(1.0) as usize;
        let ny = (bb.height() / spacing).ceil().max(1.0) as usize;
        if nx.saturating_mul(ny) > 50_000_000 {
            return Err(Error::InvalidInput(format!(
                "grid of {nx}×{ny} cells is too large"
            )));
        }
        let mut points = Vec::new();
        let mut cells = Vec::new();
        for iy in 0..ny {
            for ix in 0..nx {
                let p = Point2::new(
                    bb.min.x + (ix as f64 + 0.5) * spacing,
                    bb.min.y + (iy as f64 + 0.5) * spacing,
                );
                if region.contains(&p) {
                    points.push(p);
                    cells.push((ix, iy));
                }
            }
        }
        Ok(Self {
            origin: bb.min,
            spacing,
            nx,
            ny,
            points,
            cells,
        })
    }

    /// Spacing of half the interior mesh edge length.
    pub fn default_spacing(interior_max_edge: f64) -> f64 {
        0.5 * interior_max_edge
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `x,y,mean,sd,exceed_prob,label` with prevalence-scale moments.
pub fn write_grid_csv<W: Write>(
    grid: &EvalGrid,
    moments: &[(f64, f64)],
    excursions: &ExcursionResult,
    writer: W,
) -> Result<()> {
    let n = grid.len();
    if moments.len() != n || excursions.labels.len() != n {
        return Err(Error::Dimension(format!(
            "{} grid points, {} moments, {} labels",
            n,
            moments.len(),
            excursions.labels.len()
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["x", "y", "mean", "sd", "exceed_prob", "label"])?;
    for j in 0..n {
        let p = grid.points[j];
        w.write_record([
            p.x.to_string(),
            p.y.to_string(),
            moments[j].0.to_string(),
            moments[j].1.to_string(),
            excursions.exceed_prob[j].to_string(),
            excursions.labels[j].as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
