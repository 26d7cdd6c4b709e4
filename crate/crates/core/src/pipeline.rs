//! Scenario execution: design, integrate, analyze and write artifacts.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::analyze::{self, AnalysisConfig, ChecklistGrid, GuecVerdict, Theorem4Checklist, WitnessReport};
use crate::design::{self, DesignKind, GainDesign, GammaSweep, GramGrid, Kappa2Method, SweepOptions};
use crate::error::{Error, Result};
use crate::graphdyn::{self, ConnectivityReport, PrecompactConfig};
use crate::linalg;
use crate::lti;
use crate::scenario::{matrix, rows_of, DesignSpec, Rows, Scenario, ScenarioConfig};
use crate::sim::{self, GramSet, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads for the γ-sweep.
    pub jobs: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { jobs: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignOutcome {
    pub design: GainDesign,
    pub sweep: Option<GammaSweep>,
    /// `‖AᵀP + PA‖_F` for neutral designs.
    pub lyapunov_residual: Option<f64>,
}

pub fn gram_grid(sc: &Scenario, window: f64) -> GramGrid {
    let an = &sc.config.analysis;
    GramGrid {
        window,
        dt: sc.config.sim.dt,
        horizon: sc.horizon(),
        stride: an.stride(),
    }
}

/// Builds the gain from the scenario design block and attaches `κ₂`.
pub fn build_design(sc: &Scenario, opts: &RunOptions) -> Result<DesignOutcome> {
    let plant = &sc.plant;
    let n = plant.n();
    let g = sc.graph();
    let grid = gram_grid(sc, sc.config.analysis.window);
    let kappa2 = |d: &mut GainDesign, grid: &GramGrid| -> Result<()> {
        let est = design::kappa2_for_design(plant, &d.p, &d.k, g, grid, Kappa2Method::Conservative)?;
        d.attach_kappa2(est);
        Ok(())
    };
    let mut lyapunov_residual = None;
    let mut sweep = None;
    let design = match &sc.config.design {
        DesignSpec::Explicit { p, k, kappa1 } => {
            let p = match p {
                Some(rows) => matrix("design.p", rows, (Some(n), Some(n)))?,
                None => DMatrix::identity(n, n),
            };
            let mut d = GainDesign::from_p(DesignKind::Explicit, plant, p)?;
            if let Some(rows) = k {
                d.k = matrix("design.k", rows, (Some(plant.m()), Some(n)))?;
            }
            d.kappa1 = *kappa1;
            kappa2(&mut d, &grid)?;
            d
        }
        DesignSpec::Riccati { kappa1, q } => {
            let q = match q {
                Some(rows) => matrix("design.q", rows, (Some(n), Some(n)))?,
                None => DMatrix::identity(n, n),
            };
            let mut d = GainDesign::riccati(plant, *kappa1, &q)?;
            kappa2(&mut d, &grid)?;
            d
        }
        DesignSpec::NeutralLyapunov { p, kappa1 } => {
            let p = match p {
                Some(rows) => matrix("design.p", rows, (Some(n), Some(n)))?,
                None => design::solve_neutral_lyapunov(plant.a(), None)?,
            };
            let residual = (plant.a().transpose() * &p + &p * plant.a()).norm();
            if residual > 1e-9 * p.norm() {
                return Err(Error::Precondition(format!(
                    "supplied P does not satisfy AᵀP + PA = 0 (residual {residual:.3e})"
                )));
            }
            lyapunov_residual = Some(residual);
            let mut d = GainDesign::from_p(DesignKind::NeutralLyapunov, plant, p)?;
            let est = design::kappa2_for_design(plant, &d.p, &d.k, g, &grid, Kappa2Method::Conservative)?;
            // P is a Riccati solution for every κ₁ with Q = κ₁PBBᵀP, so κ₁ = κ₂
            // is admissible and gives index one
            d.kappa1 = Some(kappa1.unwrap_or(est.kappa2));
            d.attach_kappa2(est);
            d
        }
        DesignSpec::Algorithm1 {
            window,
            k_max,
            selection,
            method,
        } => {
            let w = window.unwrap_or(sc.config.analysis.window);
            let mut so = SweepOptions::new(w, *k_max);
            so.grid = gram_grid(sc, w);
            so.selection = *selection;
            so.method = *method;
            so.jobs = opts.jobs.max(1);
            let res = design::algorithm1_search(plant, g, &so)?;
            sweep = Some(res.sweep);
            res.design
        }
    };
    Ok(DesignOutcome {
        design,
        sweep,
        lyapunov_residual,
    })
}

/// Everything one run produced; file paths are inside `dir`.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub design: DesignOutcome,
    pub trajectory: Trajectory,
    pub gram: Option<GramSet>,
    pub connectivity: ConnectivityReport,
    pub verdict: GuecVerdict,
    pub checklist: Theorem4Checklist,
    pub witness: Option<WitnessReport>,
}

#[derive(Serialize)]
struct DesignSummary<'a> {
    kind: DesignKind,
    p: Rows,
    k: Rows,
    kappa1: Option<f64>,
    kappa2: Option<f64>,
    sync_index: Option<f64>,
    care_residual: Option<f64>,
    lyapunov_residual: Option<f64>,
    kappa2_detail: Option<&'a design::Kappa2Estimate>,
    sweep_steps: Option<usize>,
    sweep_converged: Option<bool>,
}

#[derive(Serialize)]
struct VerdictFile<'a> {
    scenario: &'a str,
    classification: &'static str,
    exponential: bool,
    theorem4_overall: bool,
    design: DesignSummary<'a>,
    verdict: &'a GuecVerdict,
    checklist: &'a Theorem4Checklist,
    witness: Option<&'a WitnessReport>,
    files: Vec<String>,
}

fn create(dir: &Path, name: &str, files: &mut Vec<PathBuf>) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path)?;
    files.push(path);
    Ok(BufWriter::new(f))
}

fn with_context<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Scenario {
        scenario: name.to_string(),
        source: Box::new(e),
    })
}

/// Runs the whole pipeline and writes `trajectory.csv`, `windows.csv`,
/// `alpha_windows.csv`, `gram.csv`, `sweep.csv` (sweeps only),
/// `witness.csv` (uncontrollable plants only), `verdict.json` and
/// `report.txt` into `out_dir`.
pub fn run(cfg: &ScenarioConfig, out_dir: &Path, opts: &RunOptions) -> Result<RunOutput> {
    with_context(&cfg.name, run_inner(cfg, out_dir, opts))
}

fn run_inner(cfg: &ScenarioConfig, out_dir: &Path, opts: &RunOptions) -> Result<RunOutput> {
    let sc = cfg.resolve()?;
    std::fs::create_dir_all(out_dir)?;
    let plant = &sc.plant;
    let g = sc.graph();
    let an = &cfg.analysis;
    let outcome = build_design(&sc, opts)?;
    let d = &outcome.design;

    let traj = sim::integrate(plant, &d.k, &d.p, g, &sc.x0, cfg.sim.t_end, cfg.sim.dt)?;
    let gram = (an.window <= g.domain_end())
        .then(|| sim::gram_set(plant, &d.k, &d.p, g, 0.0, an.window, cfg.sim.dt))
        .transpose()?;
    let mut acfg = AnalysisConfig::new(an.window);
    acfg.t_skip = an.t_skip;
    let verdict = analyze::assess(&traj, &acfg)?;
    let grid = ChecklistGrid {
        delta: an.delta,
        window: an.window,
        horizon: sc.horizon(),
        stride: an.stride(),
    };
    let checklist = analyze::theorem4_checklist(plant, g, d, &grid, &PrecompactConfig::default())?;
    let connectivity = graphdyn::check_joint_connectivity(g, an.delta, an.window, sc.horizon(), an.stride())?;
    let witness = if lti::is_controllable(plant, lti::DEFAULT_RANK_TOL) {
        None
    } else {
        Some(analyze::uncontrollable_witness_report(plant, &traj)?)
    };

    let mut files = Vec::new();
    traj.write_csv(create(out_dir, "trajectory.csv", &mut files)?)?;
    connectivity.write_csv(g, create(out_dir, "windows.csv", &mut files)?)?;
    verdict
        .alpha_integrals
        .write_csv(create(out_dir, "alpha_windows.csv", &mut files)?)?;
    if let Some(gs) = &gram {
        gs.write_csv(create(out_dir, "gram.csv", &mut files)?)?;
    }
    if let Some(sw) = &outcome.sweep {
        sw.write_csv(create(out_dir, "sweep.csv", &mut files)?)?;
    }
    if let Some(w) = &witness {
        w.write_csv(create(out_dir, "witness.csv", &mut files)?)?;
    }
    let report_path = out_dir.join("report.txt");
    let verdict_path = out_dir.join("verdict.json");
    let mut listed: Vec<String> = files
        .iter()
        .chain([&verdict_path, &report_path])
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    listed.sort();
    let summary = VerdictFile {
        scenario: &cfg.name,
        classification: verdict.classification.as_str(),
        exponential: verdict.classification == analyze::Classification::Exponential,
        theorem4_overall: checklist.overall,
        design: DesignSummary {
            kind: d.kind,
            p: rows_of(&d.p),
            k: rows_of(&d.k),
            kappa1: d.kappa1,
            kappa2: d.kappa2,
            sync_index: d.sync_index,
            care_residual: d.care_residual,
            lyapunov_residual: outcome.lyapunov_residual,
            kappa2_detail: d.kappa2_detail.as_ref(),
            sweep_steps: outcome.sweep.as_ref().map(|s| s.steps.len()),
            sweep_converged: outcome.sweep.as_ref().map(|s| s.converged),
        },
        verdict: &verdict,
        checklist: &checklist,
        witness: witness.as_ref(),
        files: listed,
    };
    std::fs::write(&verdict_path, serde_json::to_string_pretty(&summary)? + "\n")?;
    files.push(verdict_path);
    let report = render_report(cfg, &outcome, &traj, &verdict, &checklist, witness.as_ref());
    std::fs::write(&report_path, report)?;
    files.push(report_path);

    Ok(RunOutput {
        dir: out_dir.to_path_buf(),
        files,
        design: outcome,
        trajectory: traj,
        gram,
        connectivity,
        verdict,
        checklist,
        witness,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.6e}"))
}

fn complex_list(zs: &[num_complex::Complex64]) -> String {
    let items: Vec<String> = zs
        .iter()
        .map(|z| {
            if z.im == 0.0 {
                format!("{:.6}", z.re)
            } else {
                format!("{:.6}{:+.6}i", z.re, z.im)
            }
        })
        .collect();
    format!("[{}]", items.join(", "))
}

fn flag(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

pub fn render_report(
    cfg: &ScenarioConfig,
    outcome: &DesignOutcome,
    traj: &Trajectory,
    v: &GuecVerdict,
    c: &Theorem4Checklist,
    witness: Option<&WitnessReport>,
) -> String {
    let d = &outcome.design;
    let mut s = String::new();
    // writing to a String cannot fail
    let _ = writeln!(s, "scenario: {}", cfg.name);
    if let Some(comment) = &cfg.comment {
        let _ = writeln!(s, "note: {comment}");
    }
    let _ = writeln!(
        s,
        "agents: {}, state dimension: {}, t_end: {}, dt: {}",
        traj.n_agents, traj.n, cfg.sim.t_end, cfg.sim.dt
    );
    let _ = writeln!(s, "\n[design] {}", cfg.design.kind());
    let _ = writeln!(s, "  P eigenvalues: {:?}", linalg::sym_eigenvalues(&d.p));
    let _ = writeln!(s, "  K = {:?}", rows_of(&d.k));
    let _ = writeln!(s, "  kappa1: {}", opt(d.kappa1));
    let _ = writeln!(s, "  kappa2: {}", opt(d.kappa2));
    let _ = writeln!(s, "  sync index kappa2/kappa1: {}", opt(d.sync_index));
    if let Some(r) = d.care_residual {
        let _ = writeln!(s, "  Riccati residual: {r:.3e}");
    }
    if let Some(r) = outcome.lyapunov_residual {
        let _ = writeln!(s, "  Lyapunov residual: {r:.3e}");
    }
    if let Some(sw) = &outcome.sweep {
        let _ = writeln!(
            s,
            "  gamma sweep: {} steps, converged: {}, min kappa2 {:.6e}",
            sw.steps.len(),
            flag(sw.converged),
            sw.min_kappa2()
        );
        if let Some(last) = sw.steps.last() {
            let _ = writeln!(
                s,
                "  last step k = {}: lambda_min(P/lambda_max) = {:.6}, kappa2 = {:.6e}",
                last.k, last.lambda_min_scaled_p, last.kappa2
            );
        }
    }

    let _ = writeln!(s, "\n[verdict] {}", v.classification.as_str());
    let th = &v.thresholds;
    let _ = writeln!(
        s,
        "  thresholds: r^2 >= {}, a > {}, V change factor {}",
        th.r2_threshold, th.a_min, th.decay_factor
    );
    let f = &v.rate_fit;
    let _ = writeln!(
        s,
        "  ln V fit on [{:.3}, {:.3}]: slope {:.6e}, gamma_hat {:.6e}, r^2 {:.6}",
        f.t_from, f.t_to, f.slope, f.gamma_hat, f.r_squared
    );
    if let Some(t) = f.truncated_at {
        let _ = writeln!(s, "  fit truncated where V reached zero at t = {t}");
    }
    let _ = writeln!(s, "  V(0) = {:.6e}, V(end) = {:.6e}", v.v_start, v.v_end);
    let _ = writeln!(
        s,
        "  window T = {}: min integral of alpha a = {:.6e} (window at {:.3}), max alpha = {:.6e}",
        v.window_t, v.lower_bound_a, v.lower_bound_at, v.alpha_upper
    );
    let l = &v.lemma1;
    let _ = writeln!(
        s,
        "  envelope: gamma3 = {:.6e}, gamma4 = {:.6e}; gamma4 >= a/T: {} (margin {:.3e}); a >= -ln gamma3 + gamma4 T: {} (margin {:.3e})",
        l.gamma3,
        l.gamma4,
        flag(l.sufficiency),
        l.sufficiency_margin,
        flag(l.necessity),
        l.necessity_margin
    );
    if let Some(u) = &v.uniformity {
        let _ = writeln!(
            s,
            "  restarted fits at {:?}: gamma_hat {:?}, max deviation {:.1}%, consistent: {}",
            u.restart_times,
            u.gamma_hats,
            100.0 * u.max_relative_deviation,
            flag(u.consistent)
        );
    }

    let _ = writeln!(s, "\n[sufficient conditions]");
    let _ = writeln!(s, "  (A, B) controllable: {}", flag(c.controllable));
    if !c.uncontrollable_eigenvalues.is_empty() {
        let _ = writeln!(
            s,
            "    uncontrollable eigenvalues: {}",
            complex_list(&c.uncontrollable_eigenvalues)
        );
    }
    let _ = writeln!(
        s,
        "  spectrum in closed right half-plane: {} (eigenvalues {})",
        flag(c.spectrum_rhp),
        complex_list(&c.eigenvalues)
    );
    let _ = writeln!(
        s,
        "  precompact: {} (certificate {:?}, min dwell {}, {} violations)",
        flag(c.precompact_certified),
        c.precompactness.certificate,
        c.precompactness.min_dwell,
        c.precompactness.violations.len()
    );
    let _ = writeln!(
        s,
        "  jointly (delta = {}, T = {}) connected: {} ({} windows, failing starts {:?})",
        c.delta,
        c.window_t,
        flag(c.jointly_connected),
        c.windows_checked,
        c.failing_window_starts
    );
    let _ = writeln!(s, "  sync index >= 1: {} ({})", flag(c.index_ok), opt(c.sync_index));
    let _ = writeln!(s, "  all conditions: {}", flag(c.overall));

    if let Some(w) = witness {
        let _ = writeln!(s, "\n[uncontrollable mode] lambda = {}", w.eigenvalue);
        let _ = writeln!(s, "  left eigenvector: {:?}", w.left_eigenvector);
        let _ = writeln!(s, "  initial projections: {:?}", w.initial_projections);
        let _ = writeln!(s, "  growth rates: {:?}", w.growth_rates);
        let _ = writeln!(s, "  max relative error vs closed form: {:?}", w.max_relative_error);
        let _ = writeln!(s, "  consensus obstructed: {}", flag(w.consensus_obstructed));
    }
    s
}
