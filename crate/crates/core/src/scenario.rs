//! JSON scenario files: plant, gain design, graph schedule, initial state,
//! simulation and analysis settings.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::design::{Kappa2Method, SweepSelection};
use crate::error::{Error, Result};
use crate::graphdyn::GraphSignal;
use crate::lti::Plant;
use crate::sim;

/// Row-major matrix, one inner array per row.
pub type Rows = Vec<Vec<f64>>;

pub const DESIGN_KINDS: [&str; 4] = ["explicit", "riccati", "neutral_lyapunov", "algorithm1"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    pub plant: PlantSpec,
    pub design: DesignSpec,
    pub graph: GraphSignal,
    pub init: InitSpec,
    pub sim: SimSpec,
    pub analysis: AnalysisSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    pub a: Rows,
    pub b: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DesignSpec {
    /// Given `P` and/or `K`; missing `P` is the identity, missing `K` is `BᵀP`.
    Explicit {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p: Option<Rows>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k: Option<Rows>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        kappa1: Option<f64>,
    },
    /// Riccati solution at `kappa1`; missing `Q` is the identity.
    Riccati {
        kappa1: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        q: Option<Rows>,
    },
    /// `AᵀP + PA = 0`. A supplied `P` is checked instead of computed; a
    /// missing `kappa1` is set to the computed `κ₂`.
    NeutralLyapunov {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p: Option<Rows>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        kappa1: Option<f64>,
    },
    /// γ-sweep; `window` defaults to the analysis window.
    Algorithm1 {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        window: Option<f64>,
        #[serde(default = "default_k_max")]
        k_max: usize,
        #[serde(default)]
        selection: SweepSelection,
        #[serde(default)]
        method: Kappa2Method,
    },
}

fn default_k_max() -> usize {
    50
}

impl DesignSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Explicit { .. } => "explicit",
            Self::Riccati { .. } => "riccati",
            Self::NeutralLyapunov { .. } => "neutral_lyapunov",
            Self::Algorithm1 { .. } => "algorithm1",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    /// Stacked `[x_1; …; x_N]`.
    Explicit { x0: Vec<f64> },
    /// Independent uniform entries in `[low, high]` from ChaCha20 seeded
    /// with `seed`.
    Uniform { low: f64, high: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub t_end: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

fn default_dt() -> f64 {
    sim::DEFAULT_DT
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    pub delta: f64,
    pub window: f64,
    /// Window stride for connectivity and aperiodic κ₂ grids; default `T/4`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<f64>,
    /// Default 10% of `t_end`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_skip: Option<f64>,
    /// Horizon for graph checks; default `t_end`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
}

impl AnalysisSpec {
    pub fn stride(&self) -> f64 {
        self.stride.unwrap_or(self.window / 4.0)
    }
}

/// A validated scenario with numeric objects built.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub plant: Plant,
    pub x0: DVector<f64>,
}

impl Scenario {
    pub fn graph(&self) -> &GraphSignal {
        &self.config.graph
    }

    pub fn horizon(&self) -> f64 {
        self.config.analysis.horizon.unwrap_or(self.config.sim.t_end)
    }
}

/// Builds a matrix from rows, requiring `rows × cols` when given.
pub fn matrix(field: &str, rows: &Rows, shape: (Option<usize>, Option<usize>)) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(Error::dim(field, "matrix is empty"));
    }
    if let Some((idx, row)) = rows.iter().enumerate().find(|(_, row)| row.len() != c) {
        return Err(Error::dim(
            field,
            format!("row {idx} has {} entries, row 0 has {c}", row.len()),
        ));
    }
    if let Some(want) = shape.0.filter(|&w| w != r) {
        return Err(Error::dim(field, format!("expected {want} rows, got {r}")));
    }
    if let Some(want) = shape.1.filter(|&w| w != c) {
        return Err(Error::dim(field, format!("expected {want} columns, got {c}")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::dim(field, "entries must be finite"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn rows_of(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::dim(field, format!("must be positive and finite, got {v}")))
    }
}

impl ScenarioConfig {
    /// Checks every dimension and builds the numeric objects.
    pub fn resolve(&self) -> Result<Scenario> {
        let a = matrix("plant.a", &self.plant.a, (None, None))?;
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::dim(
                "plant.a",
                format!("must be square, got {}×{}", n, a.ncols()),
            ));
        }
        let b = matrix("plant.b", &self.plant.b, (Some(n), None))?;
        let m = b.ncols();
        let plant = Plant::new(a, b)?;
        match &self.design {
            DesignSpec::Explicit { p, k, kappa1 } => {
                if let Some(p) = p {
                    matrix("design.p", p, (Some(n), Some(n)))?;
                }
                if let Some(k) = k {
                    matrix("design.k", k, (Some(m), Some(n)))?;
                }
                if let Some(k1) = kappa1 {
                    positive("design.kappa1", *k1)?;
                }
            }
            DesignSpec::Riccati { kappa1, q } => {
                positive("design.kappa1", *kappa1)?;
                if let Some(q) = q {
                    matrix("design.q", q, (Some(n), Some(n)))?;
                }
            }
            DesignSpec::NeutralLyapunov { p, kappa1 } => {
                if let Some(p) = p {
                    matrix("design.p", p, (Some(n), Some(n)))?;
                }
                if let Some(k1) = kappa1 {
                    positive("design.kappa1", *k1)?;
                }
            }
            DesignSpec::Algorithm1 { window, k_max, .. } => {
                if let Some(w) = window {
                    positive("design.window", *w)?;
                }
                if *k_max == 0 {
                    return Err(Error::dim("design.k_max", "must be at least 1"));
                }
            }
        }
        let n_agents = self.graph.n_nodes();
        let len = n * n_agents;
        let x0 = match &self.init {
            InitSpec::Explicit { x0 } => {
                if x0.len() != len {
                    return Err(Error::dim(
                        "init.x0",
                        format!("expected {len} entries ({n_agents} agents × {n}), got {}", x0.len()),
                    ));
                }
                DVector::from_column_slice(x0)
            }
            InitSpec::Uniform { low, high, seed } => {
                if !(low.is_finite() && high.is_finite() && low < high) {
                    return Err(Error::dim(
                        "init",
                        format!("need finite low < high, got [{low}, {high}]"),
                    ));
                }
                let mut rng = ChaCha20Rng::seed_from_u64(*seed);
                DVector::from_fn(len, |_, _| rng.random_range(*low..=*high))
            }
        };
        positive("sim.t_end", self.sim.t_end)?;
        positive("sim.dt", self.sim.dt)?;
        positive("analysis.delta", self.analysis.delta)?;
        positive("analysis.window", self.analysis.window)?;
        positive("analysis.stride", self.analysis.stride())?;
        if let Some(h) = self.analysis.horizon {
            positive("analysis.horizon", h)?;
        }
        if let Some(s) = self.analysis.t_skip {
            if !(s >= 0.0 && s < self.sim.t_end) {
                return Err(Error::dim(
                    "analysis.t_skip",
                    format!("must lie in [0, t_end), got {s}"),
                ));
            }
        }
        Ok(Scenario {
            config: self.clone(),
            plant,
            x0,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn parse_error(e: &serde_json::Error) -> Error {
    Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Parses and validates scenario JSON text.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| parse_error(&e))?;
    if let Some(kind) = value.pointer("/design/kind").and_then(|k| k.as_str()) {
        if !DESIGN_KINDS.contains(&kind) {
            return Err(Error::UnknownDesign(kind.to_string()));
        }
    }
    let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| parse_error(&e))?;
    cfg.resolve()?;
    Ok(cfg)
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text).map_err(|e| Error::Scenario {
        scenario: path.display().to_string(),
        source: Box::new(e),
    })
}

const EXAMPLES: [&str; 4] = [
    include_str!("../scenarios/example1.json"),
    include_str!("../scenarios/example2.json"),
    include_str!("../scenarios/example3.json"),
    include_str!("../scenarios/example4.json"),
];

/// JSON schema of the scenario format.
pub const SCHEMA: &str = include_str!("../scenarios/scenario.schema.json");

/// Text of bundled example `which` (1 to 4).
pub fn bundled_text(which: u8) -> Option<&'static str> {
    EXAMPLES.get(usize::from(which).checked_sub(1)?).copied()
}

pub fn bundled(which: u8) -> Result<ScenarioConfig> {
    let text =
        bundled_text(which).ok_or_else(|| Error::Precondition(format!("no bundled example {which}; use 1 to 4")))?;
    parse_scenario(text)
}
