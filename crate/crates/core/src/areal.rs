//! Areal smoothing: adjacency graphs, ICAR structure and the BYM model fitted
//! to empirical-logit direct estimates.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geometry::Polygon;
use crate::inference::{
    fit, Component, FitOptions, FitResult, LatentModel, Likelihood, MarginalSummary,
};
use crate::sparse::SparseSym;
use crate::survey::DirectEstimate;

/// Vertices closer than this are considered shared.
pub const SHARED_VERTEX_TOLERANCE: f64 = 1e-9;

/// Undirected, loop-free graph over named areas.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyGraph {
    ids: Vec<String>,
    neighbors: Vec<Vec<usize>>,
    component: Vec<usize>,
    num_components: usize,
}

impl AdjacencyGraph {
    /// Builds from index pairs; duplicate and reversed edges are merged.
    pub fn new(ids: Vec<String>, edges: &[(usize, usize)]) -> Result<Self> {
        let k = ids.len();
        let unique: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
        if unique.len() != k {
            return Err(Error::InvalidInput("duplicate area ids in graph".into()));
        }
        let mut sets = vec![BTreeSet::new(); k];
        for &(i, j) in edges {
            if i >= k || j >= k {
                return Err(Error::InvalidInput(format!(
                    "edge ({i}, {j}) out of range for {k} areas"
                )));
            }
            if i == j {
                return Err(Error::InvalidInput(format!("self-loop on area {}", ids[i])));
            }
            sets[i].insert(j);
            sets[j].insert(i);
        }
        let neighbors: Vec<Vec<usize>> =
            sets.into_iter().map(|s| s.into_iter().collect()).collect();
        let mut component = vec![usize::MAX; k];
        let mut num_components = 0;
        for s in 0..k {
            if component[s] != usize::MAX {
                continue;
            }
            let mut stack = vec![s];
            component[s] = num_components;
            while let Some(v) = stack.pop() {
                for &u in &neighbors[v] {
                    if component[u] == usize::MAX {
                        component[u] = num_components;
                        stack.push(u);
                    }
                }
            }
            num_components += 1;
        }
        Ok(Self {
            ids,
            neighbors,
            component,
            num_components,
        })
    }

    /// Reads an `area_i,area_j` edge list against a fixed set of ids.
    pub fn from_edge_csv<R: Read>(ids: Vec<String>, reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            area_i: String,
            area_j: String,
        }
        let index: HashMap<&str, usize> = ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut edges = Vec::new();
        for (line, row) in csv::Reader::from_reader(reader).deserialize().enumerate() {
            let row: Row = row.map_err(|e| Error::Parse(format!("edge row {}: {e}", line + 2)))?;
            let look = |s: &str| {
                index
                    .get(s)
                    .copied()
                    .ok_or_else(|| Error::Parse(format!("edge row {}: unknown area {s}", line + 2)))
            };
            edges.push((look(&row.area_i)?, look(&row.area_j)?));
        }
        Self::new(ids, &edges)
    }

    /// Areas are the distinct polygon ids (first-seen order); two areas are
    /// adjacent when their boundaries share at least two vertices.
    pub fn from_polygons(polygons: &[Polygon]) -> Result<Self> {
        let mut ids: Vec<String> = Vec::new();
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut verts: Vec<(f64, f64, usize, usize)> = Vec::new();
        let mut counter = 0usize;
        for p in polygons {
            let a = *index.entry(p.id()).or_insert_with(|| {
                ids.push(p.id().to_string());
                ids.len() - 1
            });
            for ring in p.rings() {
                for v in ring {
                    verts.push((v.x, v.y, a, counter));
                    counter += 1;
                }
            }
        }
        verts.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Distinct vertices of the lower-indexed area matched in the other.
        let mut shared: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
        for (s, a) in verts.iter().enumerate() {
            for b in &verts[s + 1..] {
                if b.0 - a.0 > SHARED_VERTEX_TOLERANCE {
                    break;
                }
                if a.2 == b.2 || (a.1 - b.1).abs() > SHARED_VERTEX_TOLERANCE {
                    continue;
                }
                let (lo, hi) = if a.2 < b.2 { (a, b) } else { (b, a) };
                shared.entry((lo.2, hi.2)).or_default().insert(lo.3);
            }
        }
        let edges: Vec<(usize, usize)> = shared
            .into_iter()
            .filter(|(_, v)| v.len() >= 2)
            .map(|(k, _)| k)
            .collect();
        Self::new(ids, &edges)
    }

    pub fn write_edge_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["area_i", "area_j"])?;
        for (i, nb) in self.neighbors.iter().enumerate() {
            for &j in nb.iter().filter(|&&j| j > i) {
                w.write_record([&self.ids[i], &self.ids[j]])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|s| s == id)
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Connected-component label of each area.
    pub fn components(&self) -> &[usize] {
        &self.component
    }

    pub fn num_components(&self) -> usize {
        self.num_components
    }

    /// Areas without neighbours.
    pub fn singletons(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.neighbors[i].is_empty())
            .collect()
    }

    /// Subgraph on `keep` (in that order).
    pub fn induced(&self, keep: &[usize]) -> Result<Self> {
        let mut map = vec![usize::MAX; self.len()];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut edges = Vec::new();
        for (new, &old) in keep.iter().enumerate() {
            for &j in &self.neighbors[old] {
                if map[j] != usize::MAX && map[j] > new {
                    edges.push((new, map[j]));
                }
            }
        }
        Self::new(keep.iter().map(|&i| self.ids[i].clone()).collect(), &edges)
    }
}

/// ICAR structure `D − W`.
pub fn icar_precision(graph: &AdjacencyGraph) -> SparseSym {
    let mut trip = Vec::with_capacity(graph.len() + graph.num_edges());
    for i in 0..graph.len() {
        trip.push((i, i, graph.degree(i) as f64));
        for &j in graph.neighbors(i).iter().filter(|&&j| j < i) {
            trip.push((i, j, -1.0));
        }
    }
    SparseSym::from_lower_triplets(graph.len(), &trip)
}

/// `η_k = β₀ + S_k + ε_k` with `y_k ~ N(η_k, V̂_k)`, ICAR `S` and iid `ε`.
#[derive(Clone, Debug)]
pub struct BymModel {
    pub graph: AdjacencyGraph,
    /// Area index of each direct estimate.
    pub obs_area: Vec<usize>,
    pub y: Vec<f64>,
    pub v: Vec<f64>,
    pub initial_log_precision_icar: f64,
    pub initial_log_precision_iid: f64,
}

impl BymModel {
    pub fn new(
        graph: AdjacencyGraph,
        obs_area: Vec<usize>,
        y: Vec<f64>,
        v: Vec<f64>,
    ) -> Result<Self> {
        let m = Self {
            graph,
            obs_area,
            y,
            v,
            initial_log_precision_icar: 0.0,
            initial_log_precision_iid: 0.0,
        };
        m.validate()?;
        Ok(m)
    }

    /// Matches direct estimates to graph areas by id; areas without an
    /// estimate are predicted from the prior.
    pub fn from_direct(graph: AdjacencyGraph, estimates: &[DirectEstimate]) -> Result<Self> {
        let mut obs_area = Vec::with_capacity(estimates.len());
        for e in estimates {
            obs_area.push(graph.index_of(&e.area_id).ok_or_else(|| {
                Error::InvalidInput(format!("direct estimate for unknown area {}", e.area_id))
            })?);
        }
        let y = estimates.iter().map(|e| e.y_logit).collect();
        let v = estimates.iter().map(|e| e.v_logit).collect();
        Self::new(graph, obs_area, y, v)
    }

    pub fn with_initial(mut self, log_precision_icar: f64, log_precision_iid: f64) -> Self {
        self.initial_log_precision_icar = log_precision_icar;
        self.initial_log_precision_iid = log_precision_iid;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.obs_area.len();
        if self.y.len() != n || self.v.len() != n {
            return Err(Error::Dimension(format!(
                "{} areas, {} estimates, {} variances",
                n,
                self.y.len(),
                self.v.len()
            )));
        }
        if n == 0 {
            return Err(Error::NoData("no direct estimates".into()));
        }
        if self.obs_area.iter().any(|&a| a >= self.graph.len()) {
            return Err(Error::InvalidInput(
                "estimate area outside the graph".into(),
            ));
        }
        if let Some(k) = self.v.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "variance of area {} must be positive, got {}",
                self.graph.ids()[self.obs_area[k]],
                self.v[k]
            )));
        }
        if let Some(k) = self.y.iter().position(|y| !y.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite estimate for area {}",
                self.graph.ids()[self.obs_area[k]]
            )));
        }
        Ok(())
    }

    /// Latent model with coordinates `[β₀, S (non-singleton areas), ε]`.
    fn latent_model(&self) -> Result<(LatentModel, Vec<Option<usize>>)> {
        let k = self.graph.len();
        let connected: Vec<usize> = (0..k).filter(|&i| self.graph.degree(i) > 0).collect();
        let mut icar_index = vec![None; k];
        for (s, &a) in connected.iter().enumerate() {
            icar_index[a] = Some(s);
        }
        let mut components = vec![Component::intercept()];
        if !connected.is_empty() {
            let sub = self.graph.induced(&connected)?;
            components.push(Component::Icar {
                name: "icar".into(),
                structure: icar_precision(&sub),
                index: self.obs_area.iter().map(|&a| icar_index[a]).collect(),
                initial_log_precision: self.initial_log_precision_icar,
            });
        }
        components.push(Component::Iid {
            name: "iid".into(),
            index: self.obs_area.clone(),
            size: k,
            initial_log_precision: self.initial_log_precision_iid,
        });
        let lik = Likelihood::Gaussian {
            y: self.y.clone(),
            variance: self.v.clone(),
        };
        Ok((LatentModel::new(lik, components)?, icar_index))
    }
}

#[derive(Clone, Debug)]
pub struct BymFit {
    pub fit: FitResult,
    pub area_ids: Vec<String>,
    /// Posterior of `η_k` for every graph area.
    pub eta: Vec<MarginalSummary>,
    /// Posterior of `expit(η_k)`.
    pub prevalence: Vec<MarginalSummary>,
    /// Posterior mean of `S_k` (zero for singletons).
    pub icar_mean: Vec<f64>,
    /// Areas whose ICAR term was dropped for lack of neighbours.
    pub singletons: Vec<String>,
}

impl BymFit {
    /// `area_id,mean,sd,q025,q50,q975,p_mean,p_sd,p_q025,p_q50,p_q975,singleton`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "area_id",
            "mean",
            "sd",
            "q025",
            "q50",
            "q975",
            "p_mean",
            "p_sd",
            "p_q025",
            "p_q50",
            "p_q975",
            "singleton",
        ])?;
        for (k, id) in self.area_ids.iter().enumerate() {
            let (e, p) = (&self.eta[k], &self.prevalence[k]);
            let mut rec = vec![id.clone()];
            for v in [
                e.mean, e.sd, e.q025, e.q50, e.q975, p.mean, p.sd, p.q025, p.q50, p.q975,
            ] {
                rec.push(v.to_string());
            }
            rec.push(self.singletons.contains(id).to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn fit_bym(model: &BymModel, options: &FitOptions) -> Result<BymFit> {
    model.validate()?;
    let (latent, icar_index) = model.latent_model()?;
    let singletons: Vec<String> = model
        .graph
        .singletons()
        .into_iter()
        .map(|i| model.graph.ids()[i].clone())
        .collect();
    if !singletons.is_empty() {
        log::warn!(
            "ICAR term dropped for isolated areas: {}",
            singletons.join(", ")
        );
    }
    let result = fit(&latent, options)?;
    let icar = result.component_range("icar");
    let iid = result
        .component_range("iid")
        .expect("iid component present");
    let k = model.graph.len();
    let mut eta = Vec::with_capacity(k);
    let mut prevalence = Vec::with_capacity(k);
    let mut icar_mean = vec![0.0; k];
    for a in 0..k {
        let mut coef = vec![(0, 1.0), (iid.start + a, 1.0)];
        if let (Some(r), Some(s)) = (&icar, icar_index[a]) {
            coef.push((r.start + s, 1.0));
            icar_mean[a] = result.latent[r.start + s].mean;
        }
        let mix = result.combination_mixture(&coef);
        eta.push(mix.summary());
        prevalence.push(mix.expit_summary());
    }
    Ok(BymFit {
        fit: result,
        area_ids: model.graph.ids().to_vec(),
        eta,
        prevalence,
        icar_mean,
        singletons,
    })
}
