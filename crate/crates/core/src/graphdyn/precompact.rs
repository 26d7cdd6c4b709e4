//! Sufficient conditions for precompactness of the shifted Laplacian family.
//!
//! Three certificates are tried, in order:
//! periodicity (the shift family is a continuous image of one period),
//! a positive dwell time for piecewise-constant schedules, and the
//! Lipschitz-plus-bounded-jump test for everything else.

use serde::Serialize;

use super::schedule::WeightSchedule;
use super::signal::{GraphSignal, Periodicity};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrecompactConfig {
    /// Lipschitz bound `c` for continuous pieces; `None` means `10·w*`.
    pub lipschitz_bound: Option<f64>,
    /// Jump bound `ĉ`; `None` means `10·w*`.
    pub jump_bound: Option<f64>,
    /// Dwell times below this are treated as "shrinking to zero" and the
    /// dwell certificate is not used.
    pub dwell_floor: f64,
}

impl Default for PrecompactConfig {
    fn default() -> Self {
        Self {
            lipschitz_bound: None,
            jump_bound: None,
            dwell_floor: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Certificate {
    Periodic,
    DwellTime,
    LipschitzJumps,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrecompactnessReport {
    pub valid: bool,
    pub certificate: Certificate,
    pub horizon: f64,
    pub piecewise_constant: bool,
    pub periodic: bool,
    /// Smallest gap between consecutive switching instants of `L(t)`;
    /// infinite when nothing switches in the horizon.
    pub min_dwell: f64,
    pub max_segment_lipschitz: f64,
    pub max_jump_ratio: f64,
    pub lipschitz_bound: f64,
    pub jump_bound: f64,
    pub violations: Vec<(f64, String)>,
}

struct EdgeScan {
    jumps: Vec<(f64, f64, f64)>,
    max_lipschitz: f64,
    slope_violations: Vec<(f64, f64)>,
}

/// Jumps `(time, size, preceding interval)` and slope statistics of one edge.
fn scan_edge(s: &WeightSchedule, horizon: f64) -> EdgeScan {
    let pieces = s.pieces(horizon);
    let mut jumps = Vec::new();
    let mut max_lipschitz: f64 = 0.0;
    let mut slope_violations = Vec::new();
    let mut last_jump = 0.0;
    for (k, (start, _, seg)) in pieces.iter().enumerate() {
        let lip = seg.profile.lipschitz();
        max_lipschitz = max_lipschitz.max(lip);
        slope_violations.push((*start, lip));
        if k > 0 {
            let size = WeightSchedule::jump_between(&pieces[k - 1].2, seg);
            if size > 1e-12 * s.w_star().max(1e-300) {
                jumps.push((*start, size, start - last_jump));
                last_jump = *start;
            }
        }
    }
    EdgeScan {
        jumps,
        max_lipschitz,
        slope_violations,
    }
}

pub fn validate_precompactness(
    g: &GraphSignal,
    horizon: f64,
    config: &PrecompactConfig,
) -> Result<PrecompactnessReport> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Precondition(format!(
            "horizon must be positive and finite, got {horizon}"
        )));
    }
    let w_star = g.w_star();
    let c = config.lipschitz_bound.unwrap_or(10.0 * w_star);
    let c_hat = config.jump_bound.unwrap_or(10.0 * w_star);
    let periodicity = g.periodicity();
    let periodic = matches!(periodicity, Periodicity::Periodic(_) | Periodicity::Static);
    let piecewise_constant = g.is_piecewise_constant();

    let mut switch_times: Vec<f64> = Vec::new();
    let mut max_lip: f64 = 0.0;
    let mut max_ratio: f64 = 0.0;
    let mut jump_violations = Vec::new();
    let mut slope_violations = Vec::new();
    for (&(i, j), s) in g.edges() {
        let scan = scan_edge(s, horizon);
        max_lip = max_lip.max(scan.max_lipschitz);
        for &(t, lip) in &scan.slope_violations {
            if lip > c {
                slope_violations.push((t, format!("edge {{{i}, {j}}}: slope {lip} exceeds c = {c}")));
            }
        }
        for &(t, size, gap) in &scan.jumps {
            switch_times.push(t);
            let ratio = size / gap;
            max_ratio = max_ratio.max(ratio);
            if ratio > c_hat {
                jump_violations.push((
                    t,
                    format!("edge {{{i}, {j}}}: jump {size} after an interval of {gap} (ratio {ratio} > ĉ = {c_hat})"),
                ));
            }
        }
    }
    switch_times.sort_by(f64::total_cmp);
    switch_times.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    let min_dwell = switch_times
        .iter()
        .scan(0.0, |prev, &t| {
            let d = t - *prev;
            *prev = t;
            Some(d)
        })
        .fold(f64::INFINITY, f64::min);

    let (certificate, violations) = if periodic {
        (Certificate::Periodic, Vec::new())
    } else if piecewise_constant && min_dwell >= config.dwell_floor {
        (Certificate::DwellTime, Vec::new())
    } else {
        let mut v = slope_violations;
        v.extend(jump_violations);
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        if v.is_empty() {
            (Certificate::LipschitzJumps, v)
        } else {
            (Certificate::None, v)
        }
    };
    Ok(PrecompactnessReport {
        valid: certificate != Certificate::None,
        certificate,
        horizon,
        piecewise_constant,
        periodic,
        min_dwell,
        max_segment_lipschitz: max_lip,
        max_jump_ratio: max_ratio,
        lipschitz_bound: c,
        jump_bound: c_hat,
        violations,
    })
}
