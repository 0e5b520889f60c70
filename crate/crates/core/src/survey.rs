//! Two-stage cluster designs: design weights, Hájek prevalence, linearization
//! variance and the empirical logit with zero/one fixes.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::special::logit;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Household {
    pub household_id: String,
    /// Members tested.
    pub n: u32,
    /// Positives.
    pub y: u32,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub cluster_id: String,
    pub area_id: String,
    pub location: Point2,
    pub households: Vec<Household>,
}

impl Cluster {
    /// Sampled households `m_i`.
    pub fn m(&self) -> usize {
        self.households.len()
    }
}

/// First- and second-stage design constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignParams {
    pub num_psu_sampled: usize,
    pub total_psu: usize,
    pub households_per_ea: usize,
}

impl Default for DesignParams {
    fn default() -> Self {
        Self {
            num_psu_sampled: 400,
            total_psu: 46_034,
            households_per_ea: 100,
        }
    }
}

/// `1/π` with `π = (num_psu_sampled/total_psu)(m_i/households_per_ea)`.
pub fn design_weights(
    num_psu_sampled: usize,
    total_psu: usize,
    m_i: usize,
    households_per_ea: usize,
) -> Result<f64> {
    if num_psu_sampled == 0 || total_psu == 0 || m_i == 0 || households_per_ea == 0 {
        return Err(Error::InvalidInput(format!(
            "zero selection probability: psu {num_psu_sampled}/{total_psu}, households {m_i}/{households_per_ea}"
        )));
    }
    if num_psu_sampled > total_psu || m_i > households_per_ea {
        return Err(Error::InvalidInput(format!(
            "sample exceeds population: psu {num_psu_sampled}/{total_psu}, households {m_i}/{households_per_ea}"
        )));
    }
    let pi = (num_psu_sampled as f64 / total_psu as f64) * (m_i as f64 / households_per_ea as f64);
    Ok(1.0 / pi)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurveyFrame {
    clusters: Vec<Cluster>,
}

impl SurveyFrame {
    pub fn new(clusters: Vec<Cluster>) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for c in &clusters {
            if !ids.insert(c.cluster_id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate cluster {}",
                    c.cluster_id
                )));
            }
            if !c.location.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "cluster {} has a non-finite location",
                    c.cluster_id
                )));
            }
            if c.households.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "cluster {} has no households",
                    c.cluster_id
                )));
            }
            for h in &c.households {
                if h.y > h.n {
                    return Err(Error::InvalidInput(format!(
                        "cluster {} household {}: Y={} exceeds N={}",
                        c.cluster_id, h.household_id, h.y, h.n
                    )));
                }
                if !(h.weight.is_finite() && h.weight > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "cluster {} household {}: weight must be positive, got {}",
                        c.cluster_id, h.household_id, h.weight
                    )));
                }
            }
        }
        Ok(Self { clusters })
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    /// Distinct area ids in sorted order.
    pub fn area_ids(&self) -> Vec<String> {
        self.clusters
            .iter()
            .map(|c| c.area_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn num_households(&self) -> usize {
        self.clusters.iter().map(Cluster::m).sum()
    }

    fn area_clusters<'a>(&'a self, area_id: &'a str) -> impl Iterator<Item = &'a Cluster> + 'a {
        self.clusters.iter().filter(move |c| c.area_id == area_id)
    }

    /// Multiplies every weight by `s`.
    pub fn scale_weights(&mut self, s: f64) {
        for c in &mut self.clusters {
            for h in &mut c.households {
                h.weight *= s;
            }
        }
    }

    /// Reads `cluster_id,area_id,x,y,household_id,N,Y[,weight]`. Rows without a
    /// weight require `design` to compute it from the cluster's household count.
    pub fn from_csv<R: Read>(reader: R, design: Option<&DesignParams>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            cluster_id: String,
            area_id: String,
            x: f64,
            y: f64,
            household_id: String,
            #[serde(rename = "N")]
            n: u32,
            #[serde(rename = "Y")]
            pos: u32,
            #[serde(default)]
            weight: Option<f64>,
        }
        let mut order: Vec<String> = Vec::new();
        let mut map: BTreeMap<String, (Cluster, Vec<bool>)> = BTreeMap::new();
        for (line, row) in csv::Reader::from_reader(reader).deserialize().enumerate() {
            let row: Row =
                row.map_err(|e| Error::Parse(format!("survey row {}: {e}", line + 2)))?;
            let entry = map.entry(row.cluster_id.clone()).or_insert_with(|| {
                order.push(row.cluster_id.clone());
                (
                    Cluster {
                        cluster_id: row.cluster_id.clone(),
                        area_id: row.area_id.clone(),
                        location: Point2::new(row.x, row.y),
                        households: Vec::new(),
                    },
                    Vec::new(),
                )
            });
            if entry.0.area_id != row.area_id {
                return Err(Error::Parse(format!(
                    "cluster {} appears in areas {} and {}",
                    row.cluster_id, entry.0.area_id, row.area_id
                )));
            }
            entry.1.push(row.weight.is_none());
            entry.0.households.push(Household {
                household_id: row.household_id,
                n: row.n,
                y: row.pos,
                weight: row.weight.unwrap_or(f64::NAN),
            });
        }
        let mut clusters = Vec::with_capacity(order.len());
        for id in order {
            let (mut c, missing) = map.remove(&id).unwrap();
            if missing.iter().any(|&m| m) {
                let d = design.ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "cluster {id} lacks weights and no design parameters were given"
                    ))
                })?;
                let w = design_weights(d.num_psu_sampled, d.total_psu, c.m(), d.households_per_ea)?;
                for (h, m) in c.households.iter_mut().zip(&missing) {
                    if *m {
                        h.weight = w;
                    }
                }
            }
            clusters.push(c);
        }
        Self::new(clusters)
    }

    pub fn to_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "cluster_id",
            "area_id",
            "x",
            "y",
            "household_id",
            "N",
            "Y",
            "weight",
        ])?;
        for c in &self.clusters {
            for h in &c.households {
                w.write_record([
                    c.cluster_id.clone(),
                    c.area_id.clone(),
                    c.location.x.to_string(),
                    c.location.y.to_string(),
                    h.household_id.clone(),
                    h.n.to_string(),
                    h.y.to_string(),
                    h.weight.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Weighted totals of one area.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AreaTotals {
    /// `Σ w Y`.
    pub weighted_y: f64,
    /// `Σ w N`.
    pub weighted_n: f64,
    /// Kish effective number of persons `(Σ w N)² / Σ w² N`.
    pub n_eff: f64,
    pub n_clusters: usize,
    pub n_households: usize,
}

pub fn area_totals(frame: &SurveyFrame, area_id: &str) -> AreaTotals {
    let (mut wy, mut wn, mut w2n) = (0.0, 0.0, 0.0);
    let (mut nc, mut nh) = (0, 0);
    for c in frame.area_clusters(area_id) {
        nc += 1;
        for h in &c.households {
            nh += 1;
            wy += h.weight * h.y as f64;
            wn += h.weight * h.n as f64;
            w2n += h.weight * h.weight * h.n as f64;
        }
    }
    AreaTotals {
        weighted_y: wy,
        weighted_n: wn,
        n_eff: if w2n > 0.0 { wn * wn / w2n } else { 0.0 },
        n_clusters: nc,
        n_households: nh,
    }
}

/// Hájek estimator `Σ w Y / Σ w N` over the area's households.
pub fn hajek(frame: &SurveyFrame, area_id: &str) -> Result<f64> {
    let t = area_totals(frame, area_id);
    if t.weighted_n <= 0.0 {
        return Err(Error::NoData(format!(
            "area {area_id} has no tested persons"
        )));
    }
    Ok((t.weighted_y / t.weighted_n).clamp(0.0, 1.0))
}

/// Hájek estimator pooled over every area.
pub fn hajek_overall(frame: &SurveyFrame) -> Result<f64> {
    let (mut wy, mut wn) = (0.0, 0.0);
    for c in frame.clusters() {
        for h in &c.households {
            wy += h.weight * h.y as f64;
            wn += h.weight * h.n as f64;
        }
    }
    if wn <= 0.0 {
        return Err(Error::NoData("survey has no tested persons".into()));
    }
    Ok(wy / wn)
}

/// With-replacement linearization variance of the Hájek estimator,
/// `n/(n−1) Σ (z_i − z̄)² / (Σ w N)²` with cluster residual totals
/// `z_i = Σ_j w_ij (Y_ij − p̂ N_ij)`. `None` flags a single-cluster area.
pub fn design_variance(frame: &SurveyFrame, area_id: &str, p_hat: f64) -> Result<Option<f64>> {
    let mut z = Vec::new();
    let mut wn = 0.0;
    for c in frame.area_clusters(area_id) {
        let mut zi = 0.0;
        for h in &c.households {
            zi += h.weight * (h.y as f64 - p_hat * h.n as f64);
            wn += h.weight * h.n as f64;
        }
        z.push(zi);
    }
    if z.is_empty() || wn <= 0.0 {
        return Err(Error::NoData(format!(
            "area {area_id} has no tested persons"
        )));
    }
    if z.len() < 2 {
        return Ok(None);
    }
    let n = z.len() as f64;
    let zbar = z.iter().sum::<f64>() / n;
    let ss: f64 = z.iter().map(|v| (v - zbar).powi(2)).sum();
    Ok(Some(n / (n - 1.0) * ss / (wn * wn)))
}

/// Boundary fix applied when `p̂ ∈ {0, 1}`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FixPolicy {
    /// Add one pseudo-person at the national mean, weighted like an average
    /// effective respondent of the area: `p̃ = (p̂ n_eff + p̄)/(n_eff + 1)`.
    #[default]
    Shrink,
    /// Clamp into `[ε, 1 − ε]`.
    Clamp { epsilon: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogitEstimate {
    pub p: f64,
    pub y_logit: f64,
    pub v_logit: f64,
    pub fixed: bool,
}

/// Empirical logit and delta-method variance `v/(p(1−p))²`. At the boundary,
/// `p̂` is replaced by the fix policy and the variance is floored at the
/// binomial value `p̃(1−p̃)/(n_eff + 1)`.
pub fn empirical_logit(
    p_hat: f64,
    v_star: f64,
    policy: &FixPolicy,
    totals: &AreaTotals,
    national_mean: f64,
) -> Result<LogitEstimate> {
    if !(0.0..=1.0).contains(&p_hat) {
        return Err(Error::InvalidInput(format!(
            "prevalence {p_hat} outside [0, 1]"
        )));
    }
    if !(v_star >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "negative design variance {v_star}"
        )));
    }
    let boundary = p_hat <= 0.0 || p_hat >= 1.0;
    let (p, v) = if boundary {
        let p = match *policy {
            FixPolicy::Shrink => {
                let pbar = national_mean.clamp(1e-6, 1.0 - 1e-6);
                (p_hat * totals.n_eff + pbar) / (totals.n_eff + 1.0)
            }
            FixPolicy::Clamp { epsilon } => p_hat.clamp(epsilon, 1.0 - epsilon),
        };
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidInput(format!("fix policy produced p = {p}")));
        }
        (p, v_star.max(p * (1.0 - p) / (totals.n_eff + 1.0)))
    } else {
        (p_hat, v_star)
    };
    let d = p * (1.0 - p);
    Ok(LogitEstimate {
        p,
        y_logit: logit(p),
        v_logit: v / (d * d),
        fixed: boundary,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectEstimate {
    pub area_id: String,
    pub p_hat: f64,
    pub v_star: f64,
    pub y_logit: f64,
    pub v_logit: f64,
    pub n_clusters: usize,
    pub n_households: usize,
    /// A zero/one fix was applied.
    pub boundary_fixed: bool,
    /// Variance pooled from the other areas: single-cluster areas, and areas
    /// whose clusters agree exactly so the linearization variance vanishes
    /// with `0 < p̂ < 1`.
    pub pooled_variance: bool,
}

/// Relative size below which an interior design variance counts as zero.
const DEGENERATE_VARIANCE: f64 = 1e-9;

/// Direct estimates for every sampled area (sorted by id). Areas without a
/// usable design variance receive the median `v_logit` of the others.
pub fn direct_estimates(frame: &SurveyFrame, policy: &FixPolicy) -> Result<Vec<DirectEstimate>> {
    let national = hajek_overall(frame)?;
    let mut out = Vec::new();
    for area in frame.area_ids() {
        let totals = area_totals(frame, &area);
        let p_hat = hajek(frame, &area)?;
        let v = design_variance(frame, &area, p_hat)?.filter(|&v| {
            let d = p_hat * (1.0 - p_hat);
            d == 0.0 || v > DEGENERATE_VARIANCE * d
        });
        let est = empirical_logit(p_hat, v.unwrap_or(0.0), policy, &totals, national)?;
        out.push(DirectEstimate {
            area_id: area,
            p_hat,
            v_star: v.unwrap_or(f64::NAN),
            y_logit: est.y_logit,
            v_logit: est.v_logit,
            n_clusters: totals.n_clusters,
            n_households: totals.n_households,
            boundary_fixed: est.fixed,
            pooled_variance: v.is_none(),
        });
    }
    let mut pool: Vec<f64> = out
        .iter()
        .filter(|d| !d.pooled_variance)
        .map(|d| d.v_logit)
        .collect();
    if out.iter().any(|d| d.pooled_variance) {
        if pool.is_empty() {
            return Err(Error::NoData(
                "no area has two or more clusters to pool a variance from".into(),
            ));
        }
        pool.sort_by(f64::total_cmp);
        let k = pool.len();
        let median = if k % 2 == 1 {
            pool[k / 2]
        } else {
            0.5 * (pool[k / 2 - 1] + pool[k / 2])
        };
        for d in out.iter_mut().filter(|d| d.pooled_variance) {
            d.v_logit = median;
            let p = crate::special::expit(d.y_logit);
            d.v_star = median * (p * (1.0 - p)).powi(2);
        }
    }
    Ok(out)
}

pub fn write_direct_csv<W: Write>(estimates: &[DirectEstimate], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for e in estimates {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_direct_csv<R: Read>(reader: R) -> Result<Vec<DirectEstimate>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hh(n: u32, y: u32, w: f64) -> Household {
        Household {
            household_id: String::new(),
            n,
            y,
            weight: w,
        }
    }

    fn cluster(id: &str, area: &str, households: Vec<Household>) -> Cluster {
        Cluster {
            cluster_id: id.into(),
            area_id: area.into(),
            location: Point2::new(0.0, 0.0),
            households,
        }
    }

    #[test]
    fn weight_formula() {
        let w = design_weights(400, 46_034, 4, 100).unwrap();
        assert!((1.0 / w - 3.4757e-4).abs() < 1e-8);
        assert!((w - 2877.125).abs() < 1e-9);
        assert_eq!(design_weights(10, 10, 100, 100).unwrap(), 1.0);
        let w8 = design_weights(400, 46_034, 8, 100).unwrap();
        assert!((w8 - w / 2.0).abs() < 1e-9);
        assert!((design_weights(400, 46_034, 5, 100).unwrap() - 2301.7).abs() < 1e-9);
        assert!(design_weights(0, 46_034, 5, 100).is_err());
        assert!(design_weights(400, 46_034, 0, 100).is_err());
    }

    #[test]
    fn hajek_hand_cases() {
        let f =
            SurveyFrame::new(vec![cluster("c", "a", vec![hh(2, 1, 1.0), hh(2, 0, 3.0)])]).unwrap();
        assert!((hajek(&f, "a").unwrap() - 0.125).abs() < 1e-15);
        let f =
            SurveyFrame::new(vec![cluster("c", "a", vec![hh(3, 3, 1.0), hh(2, 2, 7.0)])]).unwrap();
        assert_eq!(hajek(&f, "a").unwrap(), 1.0);
        assert!(matches!(hajek(&f, "zz"), Err(Error::NoData(_))));
    }

    #[test]
    fn two_cluster_linearization() {
        let f = SurveyFrame::new(vec![
            cluster("c1", "a", vec![hh(4, 1, 2.0), hh(3, 0, 2.0)]),
            cluster("c2", "a", vec![hh(5, 3, 1.0)]),
        ])
        .unwrap();
        let p = hajek(&f, "a").unwrap();
        assert!((p - 5.0 / 19.0).abs() < 1e-15);
        // z1 = 2(1 − 4p) + 2(0 − 3p), z2 = 3 − 5p; n/(n−1) = 2.
        let z1 = 2.0 * (1.0 - 4.0 * p) + 2.0 * (-3.0 * p);
        let z2 = 3.0 - 5.0 * p;
        let zbar = 0.5 * (z1 + z2);
        let want = 2.0 * ((z1 - zbar).powi(2) + (z2 - zbar).powi(2)) / 19.0f64.powi(2);
        let got = design_variance(&f, "a", p).unwrap().unwrap();
        assert!((got - want).abs() < 1e-12 * want);
    }

    #[test]
    fn identical_clusters_have_zero_variance() {
        let c = |id: &str| cluster(id, "a", vec![hh(4, 1, 2.0), hh(2, 1, 3.0)]);
        let f = SurveyFrame::new(vec![c("1"), c("2"), c("3")]).unwrap();
        let p = hajek(&f, "a").unwrap();
        assert!(design_variance(&f, "a", p).unwrap().unwrap().abs() < 1e-15);
        let single = SurveyFrame::new(vec![c("1")]).unwrap();
        assert_eq!(design_variance(&single, "a", p).unwrap(), None);
    }

    #[test]
    fn weight_scale_invariance() {
        let mut f = SurveyFrame::new(vec![
            cluster("1", "a", vec![hh(4, 1, 2.0), hh(3, 2, 5.0)]),
            cluster("2", "a", vec![hh(6, 0, 1.5)]),
            cluster("3", "a", vec![hh(2, 2, 4.0), hh(5, 1, 1.0)]),
        ])
        .unwrap();
        let p = hajek(&f, "a").unwrap();
        let v = design_variance(&f, "a", p).unwrap().unwrap();
        f.scale_weights(37.5);
        let p2 = hajek(&f, "a").unwrap();
        assert!((p - p2).abs() < 1e-15);
        let v2 = design_variance(&f, "a", p2).unwrap().unwrap();
        assert!((v - v2).abs() < 1e-12 * v);
    }

    #[test]
    fn logit_and_delta_method() {
        let t = AreaTotals {
            weighted_y: 0.0,
            weighted_n: 100.0,
            n_eff: 50.0,
            n_clusters: 3,
            n_households: 10,
        };
        let e = empirical_logit(0.07, 0.001, &FixPolicy::Shrink, &t, 0.1).unwrap();
        assert!((e.y_logit - (0.07f64 / 0.93).ln()).abs() < 1e-15);
        assert!((e.y_logit + 2.5867).abs() < 1e-4);
        let e = empirical_logit(0.5, 0.01, &FixPolicy::Shrink, &t, 0.1).unwrap();
        assert!((e.v_logit - 0.16).abs() < 1e-15);
        assert!(!e.fixed);

        for p in [0.0, 1.0] {
            let e = empirical_logit(p, 0.0, &FixPolicy::Shrink, &t, 0.07).unwrap();
            assert!(e.fixed && e.y_logit.is_finite() && e.v_logit.is_finite() && e.v_logit > 0.0);
            let d = e.p * (1.0 - e.p);
            assert!(e.v_logit * d * d > 0.0);
        }
        let e = empirical_logit(0.0, 0.0, &FixPolicy::Shrink, &t, 0.07).unwrap();
        assert!((e.p - 0.07 / 51.0).abs() < 1e-15);
        let e = empirical_logit(1.0, 0.0, &FixPolicy::Clamp { epsilon: 0.01 }, &t, 0.07).unwrap();
        assert!((e.p - 0.99).abs() < 1e-15);
        assert!(empirical_logit(1.2, 0.0, &FixPolicy::Shrink, &t, 0.07).is_err());
    }

    #[test]
    fn direct_estimates_pool_single_clusters() {
        let f = SurveyFrame::new(vec![
            cluster("1", "a", vec![hh(4, 1, 2.0), hh(3, 2, 5.0)]),
            cluster("2", "a", vec![hh(6, 0, 1.5)]),
            cluster("3", "b", vec![hh(2, 0, 4.0), hh(5, 1, 1.0)]),
            cluster("4", "b", vec![hh(3, 1, 4.0)]),
            cluster("5", "b", vec![hh(3, 2, 4.0)]),
            cluster("6", "c", vec![hh(5, 1, 2.0)]),
            cluster("7", "d", vec![hh(5, 0, 2.0)]),
            cluster("8", "d", vec![hh(4, 0, 1.0)]),
        ])
        .unwrap();
        let est = direct_estimates(&f, &FixPolicy::Shrink).unwrap();
        assert_eq!(
            est.iter().map(|e| e.area_id.as_str()).collect::<Vec<_>>(),
            ["a", "b", "c", "d"]
        );
        let c = &est[2];
        assert!(c.pooled_variance);
        let mut multi: Vec<f64> = [0, 1, 3].iter().map(|&i| est[i].v_logit).collect();
        multi.sort_by(f64::total_cmp);
        assert_eq!(c.v_logit, multi[1]);
        assert!(est[3].boundary_fixed && est[3].y_logit.is_finite());
        for e in &est {
            let p = crate::special::expit(e.y_logit);
            if !e.boundary_fixed {
                assert!((e.v_logit * (p * (1.0 - p)).powi(2) - e.v_star).abs() < 1e-12);
            }
        }
        let mut buf = Vec::new();
        write_direct_csv(&est, &mut buf).unwrap();
        let back = read_direct_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 4);
        assert_eq!(back[1], est[1]);
    }

    #[test]
    fn identical_clusters_pool_their_variance() {
        let f = SurveyFrame::new(vec![
            cluster("1", "a", vec![hh(4, 1, 2.0)]),
            cluster("2", "a", vec![hh(4, 1, 2.0)]),
            cluster("3", "b", vec![hh(2, 0, 4.0), hh(5, 1, 1.0)]),
            cluster("4", "b", vec![hh(3, 1, 4.0)]),
        ])
        .unwrap();
        let v = design_variance(&f, "a", 0.25).unwrap().unwrap();
        assert!(v.abs() < 1e-12);
        let est = direct_estimates(&f, &FixPolicy::Shrink).unwrap();
        assert!(est[0].pooled_variance && !est[0].boundary_fixed);
        assert_eq!(est[0].v_logit, est[1].v_logit);
        assert!(!est[1].pooled_variance);
    }

    #[test]
    fn csv_round_trip_and_computed_weights() {
        let text = "cluster_id,area_id,x,y,household_id,N,Y,weight\n\
                    c1,a,0.5,1.5,h1,3,1,\n\
                    c1,a,0.5,1.5,h2,4,0,\n\
                    c2,b,2,3,h1,2,2,10\n";
        assert!(SurveyFrame::from_csv(text.as_bytes(), None).is_err());
        let f = SurveyFrame::from_csv(text.as_bytes(), Some(&DesignParams::default())).unwrap();
        let w = design_weights(400, 46_034, 2, 100).unwrap();
        assert_eq!(f.clusters()[0].households[1].weight, w);
        assert_eq!(f.clusters()[1].households[0].weight, 10.0);
        let mut buf = Vec::new();
        f.to_csv(&mut buf).unwrap();
        assert_eq!(SurveyFrame::from_csv(buf.as_slice(), None).unwrap(), f);

        let bad = "cluster_id,area_id,x,y,household_id,N,Y,weight\nc1,a,0,0,h,2,3,1\n";
        assert!(SurveyFrame::from_csv(bad.as_bytes(), None).is_err());
    }
}
