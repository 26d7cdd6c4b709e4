use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::schedule::{RawSchedule, WeightSchedule};
use crate::error::{Error, Result};

/// Time structure shared by all edges of a graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Periodicity {
    /// No edge ever changes.
    Static,
    /// Every edge is stationary or repeats with a period dividing `T`.
    Periodic(f64),
    Aperiodic,
}

/// Undirected dynamic graph: `N` nodes and one weight schedule per edge.
///
/// Keys are normalized to `(i, j)` with `i < j`; absent pairs carry weight 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGraph", into = "RawGraph")]
pub struct GraphSignal {
    n_nodes: usize,
    schedules: BTreeMap<(usize, usize), WeightSchedule>,
}

#[derive(Serialize, Deserialize)]
struct RawEdge {
    i: usize,
    j: usize,
    #[serde(flatten)]
    schedule: RawSchedule,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    n_nodes: usize,
    #[serde(default)]
    edges: Vec<RawEdge>,
}

impl TryFrom<RawGraph> for GraphSignal {
    type Error = Error;

    fn try_from(raw: RawGraph) -> Result<Self> {
        let mut g = GraphSignal::new(raw.n_nodes)?;
        for e in raw.edges {
            let schedule = WeightSchedule::try_from(e.schedule).map_err(|err| match err {
                Error::InvalidSchedule(msg) => Error::InvalidSchedule(format!("edge {{{}, {}}}: {msg}", e.i, e.j)),
                other => other,
            })?;
            g.insert_edge(e.i, e.j, schedule)?;
        }
        Ok(g)
    }
}

impl From<GraphSignal> for RawGraph {
    fn from(g: GraphSignal) -> Self {
        RawGraph {
            n_nodes: g.n_nodes,
            edges: g
                .schedules
                .into_iter()
                .map(|((i, j), schedule)| RawEdge {
                    i,
                    j,
                    schedule: schedule.into(),
                })
                .collect(),
        }
    }
}

impl GraphSignal {
    pub fn new(n_nodes: usize) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::InvalidGraph("graph needs at least one node".into()));
        }
        Ok(Self {
            n_nodes,
            schedules: BTreeMap::new(),
        })
    }

    /// Adds the schedule of edge `{i, j}`; duplicates are rejected.
    pub fn insert_edge(&mut self, i: usize, j: usize, schedule: WeightSchedule) -> Result<()> {
        if i == j {
            return Err(Error::InvalidGraph(format!("self-loop on node {i}")));
        }
        if i >= self.n_nodes || j >= self.n_nodes {
            return Err(Error::InvalidGraph(format!(
                "edge {{{i}, {j}}} references a node outside 0..{}",
                self.n_nodes
            )));
        }
        let key = (i.min(j), i.max(j));
        if self.schedules.contains_key(&key) {
            return Err(Error::InvalidGraph(format!(
                "edge {{{}, {}}} declared twice",
                key.0, key.1
            )));
        }
        self.schedules.insert(key, schedule);
        Ok(())
    }

    pub fn with_edge(mut self, i: usize, j: usize, schedule: WeightSchedule) -> Result<Self> {
        self.insert_edge(i, j, schedule)?;
        Ok(self)
    }

    /// Static graph from a symmetric nonnegative weight matrix.
    pub fn from_static_weights(w: &DMatrix<f64>) -> Result<Self> {
        let n = w.nrows();
        if w.ncols() != n {
            return Err(Error::dim("weights", format!("{}×{} is not square", n, w.ncols())));
        }
        let mut g = Self::new(n)?;
        for i in 0..n {
            for j in (i + 1)..n {
                if w[(i, j)] != w[(j, i)] {
                    return Err(Error::InvalidGraph(format!("weights are not symmetric at ({i}, {j})")));
                }
                if w[(i, j)] != 0.0 {
                    g.insert_edge(i, j, WeightSchedule::constant(w[(i, j)])?)?;
                }
            }
        }
        Ok(g)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> impl Iterator<Item = (&(usize, usize), &WeightSchedule)> {
        self.schedules.iter()
    }

    pub fn edge_keys(&self) -> Vec<(usize, usize)> {
        self.schedules.keys().copied().collect()
    }

    pub fn schedule(&self, i: usize, j: usize) -> Option<&WeightSchedule> {
        self.schedules.get(&(i.min(j), i.max(j)))
    }

    /// Largest `w*` over all edges.
    pub fn w_star(&self) -> f64 {
        self.schedules.values().map(WeightSchedule::w_star).fold(0.0, f64::max)
    }

    /// Smallest domain end over all edges.
    pub fn domain_end(&self) -> f64 {
        self.schedules
            .values()
            .map(WeightSchedule::domain_end)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_piecewise_constant(&self) -> bool {
        self.schedules.values().all(WeightSchedule::is_piecewise_constant)
    }

    pub fn periodicity(&self) -> Periodicity {
        let mut period: Option<f64> = None;
        for s in self.schedules.values() {
            if s.is_stationary() {
                continue;
            }
            let Some(p) = s.period() else {
                return Periodicity::Aperiodic;
            };
            period = Some(match period {
                None => p,
                Some(q) => {
                    let (big, small) = if p >= q { (p, q) } else { (q, p) };
                    let ratio = big / small;
                    if (ratio - ratio.round()).abs() > 1e-9 * ratio {
                        return Periodicity::Aperiodic;
                    }
                    big
                }
            });
        }
        match period {
            None => Periodicity::Static,
            Some(p) => Periodicity::Periodic(p),
        }
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let end = self.domain_end();
        if !(t >= 0.0 && t < end) {
            return Err(Error::OutOfDomain { t, end });
        }
        Ok(())
    }

    /// Adjacency matrix `W(t)`.
    pub fn weights_at(&self, t: f64) -> Result<DMatrix<f64>> {
        self.check_time(t)?;
        let mut w = DMatrix::zeros(self.n_nodes, self.n_nodes);
        for (&(i, j), s) in &self.schedules {
            let v = s.weight_at(t)?;
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
        Ok(w)
    }

    /// `L(t) = diag(W(t)1) − W(t)`.
    pub fn laplacian_at(&self, t: f64) -> Result<DMatrix<f64>> {
        Ok(laplacian_from_weights(&self.weights_at(t)?))
    }

    /// `L̂(t) = L(t) + (1/N)11ᵀ`.
    pub fn augmented_laplacian_at(&self, t: f64) -> Result<DMatrix<f64>> {
        augmented_laplacian(&self.laplacian_at(t)?)
    }

    /// `W̄ = ∫_{t0}^{t1} W(τ) dτ`, exact per segment.
    pub fn union_weights(&self, t0: f64, t1: f64) -> Result<DMatrix<f64>> {
        if !(t0 >= 0.0 && t1 > t0) {
            return Err(Error::Precondition(format!(
                "union window [{t0}, {t1}] must satisfy 0 ≤ t0 < t1"
            )));
        }
        let end = self.domain_end();
        if t1 > end {
            return Err(Error::OutOfDomain { t: t1, end });
        }
        let mut w = DMatrix::zeros(self.n_nodes, self.n_nodes);
        for (&(i, j), s) in &self.schedules {
            let v = s.integral(t0, t1)?;
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
        Ok(w)
    }

    /// All segment boundaries strictly inside `(t0, t1)`, sorted and deduplicated.
    pub fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        let mut all: Vec<f64> = self.schedules.values().flat_map(|s| s.breakpoints(t0, t1)).collect();
        all.sort_by(f64::total_cmp);
        all.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
        all
    }

    /// Every edge schedule is constant on `[t0, t1)` (no breakpoint inside and constant profiles).
    pub fn is_constant_on(&self, t0: f64, t1: f64) -> Result<bool> {
        for s in self.schedules.values() {
            if !s.segment_at(t0)?.profile.is_constant() || !s.breakpoints(t0, t1).is_empty() {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

pub fn laplacian_from_weights(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    let mut l = -w.clone();
    for i in 0..n {
        let deg: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        l[(i, i)] = deg;
    }
    l
}

/// `L + (1/N)11ᵀ`.
pub fn augmented_laplacian(l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = l.nrows();
    if n == 0 || l.ncols() != n {
        return Err(Error::dim(
            "laplacian",
            format!("{}×{} is not a nonempty square matrix", n, l.ncols()),
        ));
    }
    Ok(l.add_scalar(1.0 / n as f64))
}
