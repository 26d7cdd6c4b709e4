//! Post-hoc analysis of simulated runs: windowed ∫α, exponential-rate fits,
//! the sufficient-condition checklist and the uncontrollable-mode witness.

use std::io::Write;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::Serialize;

use crate::csvfmt::num;
use crate::design::GainDesign;
use crate::error::{Error, Result};
use crate::graphdyn::{self, GraphSignal, PrecompactConfig, PrecompactnessReport};
use crate::lti::{self, Plant};
use crate::sim::Trajectory;

/// Below this `V` is treated as numerically zero.
pub const V_FLOOR: f64 = 1e-300;

/// Thresholds for classification and the consistency checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalysisConfig {
    pub window: f64,
    /// `None` means 10% of the trajectory span.
    pub t_skip: Option<f64>,
    pub a_min: f64,
    pub r2_threshold: f64,
    /// `V` must shrink (or grow) by this factor for a decisive verdict.
    pub decay_factor: f64,
    pub restarts: usize,
    pub uniformity_tol: f64,
    pub lemma1_tol: f64,
}

impl AnalysisConfig {
    pub fn new(window: f64) -> Self {
        Self {
            window,
            t_skip: None,
            a_min: 1e-4,
            r2_threshold: 0.9,
            decay_factor: 100.0,
            restarts: 5,
            uniformity_tol: 0.3,
            lemma1_tol: 0.2,
        }
    }
}

/// Trapezoidal `∫_t^{t+T} α` for every sample start `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaWindows {
    pub window: f64,
    pub integrals: Vec<(f64, f64)>,
    pub lower_bound_a: f64,
    pub lower_bound_at: f64,
    /// Largest sampled α, the candidate `α*`.
    pub alpha_upper: f64,
    /// First sample where α was undefined (zero error), if any.
    pub truncated_at: Option<f64>,
}

impl AlphaWindows {
    /// Columns `start, integral`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["start", "integral"])?;
        for (t, v) in &self.integrals {
            wtr.write_record([num(*t), num(*v)])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub fn window_alpha_integrals(traj: &Trajectory, window: f64) -> Result<AlphaWindows> {
    if !(window > 0.0) {
        return Err(Error::Precondition(format!("window must be positive, got {window}")));
    }
    let span = traj.span();
    if span < 2.0 * window {
        return Err(Error::SpanTooShort {
            span,
            required: 2.0 * window,
        });
    }
    let first_nan = traj.alpha.iter().position(|a| !a.is_finite());
    let usable = first_nan.unwrap_or(traj.len());
    let times = &traj.times[..usable];
    let alpha = &traj.alpha[..usable];
    if usable < 2 || times[usable - 1] - times[0] < window {
        return Err(Error::SpanTooShort {
            span: if usable == 0 { 0.0 } else { times[usable - 1] - times[0] },
            required: window,
        });
    }
    let mut cum = vec![0.0; usable];
    for k in 1..usable {
        cum[k] = cum[k - 1] + 0.5 * (alpha[k] + alpha[k - 1]) * (times[k] - times[k - 1]);
    }
    let slack = 1e-9 * window;
    let cum_at = |t: f64| -> f64 {
        let idx = times.partition_point(|&s| s < t);
        if idx == 0 {
            return cum[0];
        }
        if idx >= usable {
            return cum[usable - 1];
        }
        if (times[idx] - t).abs() <= 1e-12 * (1.0 + t.abs()) {
            return cum[idx];
        }
        let (t0, t1) = (times[idx - 1], times[idx]);
        cum[idx - 1] + (cum[idx] - cum[idx - 1]) * (t - t0) / (t1 - t0)
    };
    let end = times[usable - 1];
    let mut integrals = Vec::new();
    let (mut lower, mut lower_at) = (f64::INFINITY, 0.0);
    for k in 0..usable {
        let t = times[k];
        if t + window > end + slack {
            break;
        }
        let val = cum_at(t + window) - cum[k];
        if val < lower {
            lower = val;
            lower_at = t;
        }
        integrals.push((t, val));
    }
    Ok(AlphaWindows {
        window,
        integrals,
        lower_bound_a: lower,
        lower_bound_at: lower_at,
        alpha_upper: alpha.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        truncated_at: first_nan.map(|k| traj.times[k]),
    })
}

/// Least-squares line through `(t, ln V)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    /// `−slope/2`, the decay rate of `‖e‖`.
    pub gamma_hat: f64,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub t_from: f64,
    pub t_to: f64,
    pub samples: usize,
    /// `V` reached numerical zero here and the fit stops.
    pub truncated_at: Option<f64>,
}

/// Fits `ln V` over `[t_from, t_to]`.
pub fn fit_log_series(times: &[f64], v: &[f64], t_from: f64, t_to: f64) -> Result<RateFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut truncated_at = None;
    for (&t, &val) in times.iter().zip(v) {
        if t < t_from {
            continue;
        }
        if t > t_to {
            break;
        }
        if !(val > V_FLOOR) || !val.is_finite() {
            truncated_at = Some(t);
            break;
        }
        xs.push(t);
        ys.push(val.ln());
    }
    if xs.len() < 2 {
        return Err(Error::Precondition(format!(
            "need at least two samples with V > 0 in [{t_from}, {t_to}], got {}",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(RateFit {
        gamma_hat: -slope / 2.0,
        slope,
        intercept,
        r_squared,
        t_from: xs[0],
        t_to: *xs.last().unwrap(),
        samples: xs.len(),
        truncated_at,
    })
}

pub fn fit_exponential_rate(traj: &Trajectory, t_skip: f64) -> Result<RateFit> {
    let end = traj.times.last().copied().unwrap_or(0.0);
    fit_log_series(&traj.times, &traj.v, t_skip, end)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Exponential,
    AsymptoticOnly,
    Divergent,
    Inconclusive,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Exponential => "exponential",
            Self::AsymptoticOnly => "asymptotic_only",
            Self::Divergent => "divergent",
            Self::Inconclusive => "inconclusive",
        }
    }
}

/// The two proof-direction inequalities between the measured window
/// integrals and the fitted envelope `V(t) ≤ γ₃e^{−γ₄(t−s)}V(s)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma1Check {
    pub a: f64,
    pub window: f64,
    pub alpha_upper: f64,
    /// Fitted decay rate of `V`, `−slope`.
    pub gamma4: f64,
    /// Smallest `γ₃` such that the envelope with `gamma4` holds on all sample pairs.
    pub gamma3: f64,
    /// `γ₄ ≥ a/T` up to the tolerance.
    pub sufficiency: bool,
    /// `a ≥ −ln γ₃ + γ₄T` up to the tolerance.
    pub necessity: bool,
    pub sufficiency_margin: f64,
    pub necessity_margin: f64,
    pub tolerance: f64,
}

impl Lemma1Check {
    pub fn holds(&self) -> bool {
        self.sufficiency && self.necessity
    }
}

/// Both inequalities are checked for any sign of `a`; with `a ≤ 0` they
/// bracket a non-decaying run instead of certifying decay.
pub fn lemma1_check(traj: &Trajectory, windows: &AlphaWindows, fit: &RateFit, tol: f64) -> Lemma1Check {
    let gamma4 = -fit.slope;
    let a = windows.lower_bound_a;
    let t = windows.window;
    // sup_{s ≤ t} ln V(t) − ln V(s) + γ₄(t − s), over samples with V > 0
    let mut ln_gamma3: f64 = 0.0;
    let mut running_min = f64::INFINITY;
    for (&time, &v) in traj.times.iter().zip(&traj.v) {
        if !(v > V_FLOOR) || !v.is_finite() {
            break;
        }
        let f = v.ln() + gamma4 * time;
        running_min = running_min.min(f);
        ln_gamma3 = ln_gamma3.max(f - running_min);
    }
    let suff_rhs = a / t;
    let sufficiency_margin = gamma4 - suff_rhs;
    let nec_rhs = -ln_gamma3 + gamma4 * t;
    let necessity_margin = a - nec_rhs;
    Lemma1Check {
        a,
        window: t,
        alpha_upper: windows.alpha_upper,
        gamma4,
        gamma3: ln_gamma3.exp(),
        sufficiency: sufficiency_margin >= -tol * suff_rhs.abs(),
        necessity: necessity_margin >= -tol * a.abs().max(nec_rhs.abs()),
        sufficiency_margin,
        necessity_margin,
        tolerance: tol,
    }
}

/// Rate fits restarted at several times `s`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformityCheck {
    pub restart_times: Vec<f64>,
    pub gamma_hats: Vec<f64>,
    pub reference: f64,
    pub max_relative_deviation: f64,
    pub consistent: bool,
}

pub fn uniformity_check(
    traj: &Trajectory,
    t_skip: f64,
    restarts: usize,
    tol: f64,
    reference: f64,
) -> Result<UniformityCheck> {
    let end = traj.times.last().copied().unwrap_or(0.0);
    let restarts = restarts.max(1);
    // restarts span the first half of the fitted range so every fit keeps
    // at least half the data
    let last = t_skip + 0.5 * (end - t_skip);
    let restart_times: Vec<f64> = (0..restarts)
        .map(|j| {
            if restarts == 1 {
                t_skip
            } else {
                t_skip + (last - t_skip) * j as f64 / (restarts - 1) as f64
            }
        })
        .collect();
    let mut gamma_hats = Vec::with_capacity(restarts);
    for &s in &restart_times {
        gamma_hats.push(fit_log_series(&traj.times, &traj.v, s, end)?.gamma_hat);
    }
    let max_relative_deviation = gamma_hats
        .iter()
        .map(|g| (g - reference).abs() / reference.abs())
        .fold(0.0, f64::max);
    Ok(UniformityCheck {
        restart_times,
        gamma_hats,
        reference,
        max_relative_deviation,
        consistent: max_relative_deviation <= tol,
    })
}

/// Empirical verdict on global uniform exponential consensus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GuecVerdict {
    pub window_t: f64,
    #[serde(skip)]
    pub alpha_integrals: AlphaWindows,
    pub lower_bound_a: f64,
    pub lower_bound_at: f64,
    pub alpha_upper: f64,
    pub rate_fit: RateFit,
    pub v_start: f64,
    pub v_end: f64,
    pub classification: Classification,
    pub lemma1: Lemma1Check,
    pub uniformity: Option<UniformityCheck>,
    pub thresholds: AnalysisConfig,
}

pub fn assess(traj: &Trajectory, cfg: &AnalysisConfig) -> Result<GuecVerdict> {
    let windows = window_alpha_integrals(traj, cfg.window)?;
    let t_skip = cfg.t_skip.unwrap_or(0.1 * traj.span());
    let fit = fit_exponential_rate(traj, t_skip)?;
    let v_start = traj.v[0];
    let v_end = traj
        .v
        .iter()
        .rev()
        .copied()
        .find(|v| v.is_finite())
        .unwrap_or(f64::INFINITY);
    let reached_zero = traj.v.iter().any(|&v| v <= V_FLOOR);
    let classification = if v_end >= cfg.decay_factor * v_start {
        Classification::Divergent
    } else if fit.r_squared >= cfg.r2_threshold && windows.lower_bound_a > cfg.a_min && fit.gamma_hat > 0.0 {
        Classification::Exponential
    } else if reached_zero || v_start >= cfg.decay_factor * v_end {
        Classification::AsymptoticOnly
    } else {
        Classification::Inconclusive
    };
    let lemma1 = lemma1_check(traj, &windows, &fit, cfg.lemma1_tol);
    let uniformity = if fit.gamma_hat != 0.0 {
        uniformity_check(traj, t_skip, cfg.restarts, cfg.uniformity_tol, fit.gamma_hat).ok()
    } else {
        None
    };
    Ok(GuecVerdict {
        window_t: cfg.window,
        lower_bound_a: windows.lower_bound_a,
        lower_bound_at: windows.lower_bound_at,
        alpha_upper: windows.alpha_upper,
        alpha_integrals: windows,
        rate_fit: fit,
        v_start,
        v_end,
        classification,
        lemma1,
        uniformity,
        thresholds: *cfg,
    })
}

/// The sufficient conditions for uniform exponential consensus, with the
/// evidence behind each flag.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem4Checklist {
    pub controllable: bool,
    pub uncontrollable_eigenvalues: Vec<Complex64>,
    pub spectrum_rhp: bool,
    pub eigenvalues: Vec<Complex64>,
    pub precompact_certified: bool,
    pub precompactness: PrecompactnessReport,
    pub jointly_connected: bool,
    pub delta: f64,
    pub window_t: f64,
    pub windows_checked: usize,
    /// Starts of failing windows, at most 20.
    pub failing_window_starts: Vec<f64>,
    pub kappa1: Option<f64>,
    pub kappa2: Option<f64>,
    pub sync_index: Option<f64>,
    pub index_ok: bool,
    pub overall: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChecklistGrid {
    pub delta: f64,
    pub window: f64,
    pub horizon: f64,
    pub stride: f64,
}

pub fn theorem4_checklist(
    plant: &Plant,
    g: &GraphSignal,
    design: &GainDesign,
    grid: &ChecklistGrid,
    precompact: &PrecompactConfig,
) -> Result<Theorem4Checklist> {
    let controllable = lti::is_controllable(plant, lti::DEFAULT_RANK_TOL);
    let uncontrollable_eigenvalues = lti::uncontrollable_modes(plant, lti::DEFAULT_RANK_TOL)
        .into_iter()
        .map(|m| m.eigenvalue)
        .collect();
    let spectrum_rhp = lti::spectrum_in_closed_rhp(plant.a(), 1e-9);
    let precompactness = graphdyn::validate_precompactness(g, grid.horizon, precompact)?;
    let conn = graphdyn::check_joint_connectivity(g, grid.delta, grid.window, grid.horizon, grid.stride)?;
    let sync_index = design.sync_index;
    let index_ok = sync_index.is_some_and(|s| s >= 1.0);
    let overall = controllable && spectrum_rhp && precompactness.valid && conn.all_connected && index_ok;
    Ok(Theorem4Checklist {
        controllable,
        uncontrollable_eigenvalues,
        spectrum_rhp,
        eigenvalues: plant.eigenvalues(),
        precompact_certified: precompactness.valid,
        precompactness,
        jointly_connected: conn.all_connected,
        delta: grid.delta,
        window_t: grid.window,
        windows_checked: conn.windows.len(),
        failing_window_starts: conn.failing_windows().take(20).map(|w| w.window_start).collect(),
        kappa1: design.kappa1,
        kappa2: design.kappa2,
        sync_index,
        index_ok,
        overall,
    })
}

/// Per-agent projections onto an uncontrollable left eigenvector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WitnessReport {
    pub eigenvalue: Complex64,
    pub left_eigenvector: Vec<f64>,
    /// Projections are `|vᴴx_i|` for complex modes, signed `vᵀx_i` for real ones.
    pub real_mode: bool,
    pub initial_projections: Vec<f64>,
    #[serde(skip)]
    pub times: Vec<f64>,
    #[serde(skip)]
    pub series: Vec<Vec<f64>>,
    /// Worst relative deviation from `e^{λt}vᵀx_i(0)` where the prediction
    /// is not negligible.
    pub max_relative_error: Vec<f64>,
    /// Largest `|vᵀx_i(t)|` for agents starting on the null projection.
    pub max_abs_zero_start: Vec<f64>,
    /// Fitted growth rate of `ln|vᵀx_i|`, `None` when the projection is zero.
    pub growth_rates: Vec<Option<f64>>,
    /// Two agents with different projections whose gap cannot close.
    pub consensus_obstructed: bool,
}

impl WitnessReport {
    /// Columns `t, p0, p1, …`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((0..self.series.len()).map(|i| format!("p{i}")));
        wtr.write_record(&header)?;
        for (k, t) in self.times.iter().enumerate() {
            let mut row = vec![num(*t)];
            row.extend(self.series.iter().map(|s| num(s[k])));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub fn uncontrollable_witness_report(plant: &Plant, traj: &Trajectory) -> Result<WitnessReport> {
    let mode = lti::uncontrollable_modes(plant, lti::DEFAULT_RANK_TOL)
        .into_iter()
        .max_by(|a, b| a.eigenvalue.re.total_cmp(&b.eigenvalue.re))
        .ok_or_else(|| Error::NotApplicable("(A, B) has no uncontrollable mode".into()))?;
    if plant.n() != traj.n {
        return Err(Error::dim(
            "trajectory",
            format!("agent dimension {} vs plant {}", traj.n, plant.n()),
        ));
    }
    let real_mode = mode.is_real();
    let lambda = mode.eigenvalue;
    let v_real = mode.real_vector();
    let v_c: DVector<Complex64> = mode.left_eigenvector.clone();
    let project = |x: &DVector<f64>| -> Complex64 {
        if real_mode {
            Complex64::new(v_real.dot(x), 0.0)
        } else {
            v_c.iter().zip(x.iter()).map(|(vi, xi)| vi.conj() * xi).sum()
        }
    };
    let n_agents = traj.n_agents;
    let mut series = vec![Vec::with_capacity(traj.len()); n_agents];
    let mut initial = vec![Complex64::new(0.0, 0.0); n_agents];
    let scale = (0..n_agents).map(|i| traj.agent_state(0, i).norm()).fold(1.0, f64::max);
    let zero_tol = 1e-9 * scale;
    let mut max_rel = vec![0.0f64; n_agents];
    let mut max_abs_zero = vec![0.0f64; n_agents];
    let t0 = traj.times[0];
    for k in 0..traj.len() {
        let t = traj.times[k];
        for i in 0..n_agents {
            let z = project(&traj.agent_state(k, i));
            if k == 0 {
                initial[i] = z;
            }
            let pred = (lambda * (t - t0)).exp() * initial[i];
            if initial[i].norm() > zero_tol {
                max_rel[i] = max_rel[i].max((z - pred).norm() / pred.norm());
            } else {
                max_abs_zero[i] = max_abs_zero[i].max(z.norm());
            }
            series[i].push(if real_mode { z.re } else { z.norm() });
        }
    }
    let growth_rates = (0..n_agents)
        .map(|i| {
            if initial[i].norm() <= zero_tol {
                return None;
            }
            let mag: Vec<f64> = series[i].iter().map(|p| p * p).collect();
            let end = *traj.times.last().unwrap();
            // V-style fit of p², so the slope is twice the growth rate
            fit_log_series(&traj.times, &mag, t0, end).ok().map(|f| f.slope / 2.0)
        })
        .collect();
    let mut consensus_obstructed = false;
    if lambda.re >= 0.0 {
        for i in 0..n_agents {
            for j in (i + 1)..n_agents {
                if (initial[i] - initial[j]).norm() > zero_tol {
                    consensus_obstructed = true;
                }
            }
        }
    }
    Ok(WitnessReport {
        eigenvalue: lambda,
        left_eigenvector: v_real.iter().copied().collect(),
        real_mode,
        initial_projections: initial
            .iter()
            .map(|z| if real_mode { z.re } else { z.norm() })
            .collect(),
        times: traj.times.clone(),
        series,
        max_relative_error: max_rel,
        max_abs_zero_start: max_abs_zero,
        growth_rates,
        consensus_obstructed,
    })
}
