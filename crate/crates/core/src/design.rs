//! Gain design: the κ₁-scaled Riccati equation, the neutral Lyapunov cone,
//! the Gram-based κ₂ estimate and the γ-sweep that searches for a
//! synchronization index of at least one.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::csvfmt::num;
use crate::error::{Error, Result};
use crate::graphdyn::{GraphSignal, Periodicity};
use crate::linalg;
use crate::lti::{self, Plant};
use crate::sim;

/// Stabilizing solution of `AᵀP + PA − κ₁PBBᵀP + Q = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CareSolution {
    pub p: DMatrix<f64>,
    /// `‖AᵀP + PA − κ₁PBBᵀP + Q‖_F`.
    pub residual: f64,
    /// `residual / (1 + ‖Q‖_F)`.
    pub relative_residual: f64,
    pub newton_steps: usize,
}

fn care_residual(a: &DMatrix<f64>, g: &DMatrix<f64>, q: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * p + p * a - p * g * p + q
}

fn check_symmetric(name: &str, m: &DMatrix<f64>) -> Result<()> {
    let asym = linalg::asymmetry(m);
    if asym > 1e-10 * m.norm().max(1.0) {
        return Err(Error::Asymmetric {
            name: name.into(),
            asymmetry: asym,
        });
    }
    Ok(())
}

/// Solves `AᵀP + PA − κ₁PBBᵀP + Q = 0` for the stabilizing SPD solution.
///
/// The stable invariant subspace `[X; Y]` of the Hamiltonian
/// `[[A, −κ₁BBᵀ], [−Q, −Aᵀ]]` gives `P = YX⁻¹`, which is then polished by
/// Newton–Kleinman steps.
pub fn solve_care(plant: &Plant, kappa1: f64, q: &DMatrix<f64>) -> Result<CareSolution> {
    let n = plant.n();
    if !(kappa1 > 0.0 && kappa1.is_finite()) {
        return Err(Error::Precondition(format!(
            "kappa1 must be positive and finite, got {kappa1}"
        )));
    }
    if q.nrows() != n || q.ncols() != n {
        return Err(Error::dim(
            "Q",
            format!("expected {n}×{n}, got {}×{}", q.nrows(), q.ncols()),
        ));
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    check_symmetric("Q", q)?;
    let q = linalg::symmetrize(q);
    let q_norm = q.norm();
    if linalg::sym_min_eig(&q) < -1e-10 * q_norm.max(1.0) {
        return Err(Error::Precondition("Q is not positive semidefinite".into()));
    }
    let a = plant.a();
    let scale = linalg::norm2(a).max(1.0);
    if let Some(mode) = lti::pbh_modes(plant, lti::DEFAULT_RANK_TOL)
        .into_iter()
        .find(|m| !m.controllable && m.eigenvalue.re >= -1e-9 * scale)
    {
        return Err(Error::NoSolution(format!(
            "(A, B) is not stabilizable: mode {} is uncontrollable",
            mode.eigenvalue
        )));
    }
    if !lti::is_observable(a, &linalg::psd_sqrt(&q), lti::DEFAULT_RANK_TOL)? {
        return Err(Error::NoSolution("(A, Q^{1/2}) is not observable".into()));
    }

    let g = plant.b() * plant.b().transpose() * kappa1;
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&g));
    h.view_mut((n, 0), (n, n)).copy_from(&(-&q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    let schur = linalg::ordered_schur(&h, |z: Complex64| z.re < 0.0)?;
    if schur.selected != n {
        return Err(Error::NoSolution(format!(
            "Hamiltonian has {} stable eigenvalues instead of {n} (eigenvalues on the imaginary axis)",
            schur.selected
        )));
    }
    let x = schur.z.view((0, 0), (n, n)).clone_owned();
    let y = schur.z.view((n, 0), (n, n)).clone_owned();
    let sv = linalg::singular_values(&x);
    let ratio = sv.last().copied().unwrap_or(0.0) / sv[0];
    if !(ratio >= 1e-12) {
        return Err(Error::IllConditioned { condition: 1.0 / ratio });
    }
    let x_inv = x.clone().lu().try_inverse().ok_or(Error::IllConditioned {
        condition: f64::INFINITY,
    })?;
    let mut p = linalg::symmetrize(&(y * x_inv));

    let target = 1e-10 * (1.0 + q_norm);
    let mut res = care_residual(a, &g, &q, &p);
    let mut res_norm = res.norm();
    let mut steps = 0;
    while res_norm > target && steps < 50 {
        let ak = a - &g * &p;
        let delta = match linalg::solve_lyapunov(&ak, &(-&res)) {
            Ok(d) => d,
            Err(_) => break,
        };
        let cand = linalg::symmetrize(&(&p + delta));
        let cand_res = care_residual(a, &g, &q, &cand);
        let cand_norm = cand_res.norm();
        if !(cand_norm < res_norm) {
            break;
        }
        p = cand;
        res = cand_res;
        res_norm = cand_norm;
        steps += 1;
    }
    if linalg::sym_min_eig(&p) <= 0.0 {
        return Err(Error::NoSolution("Riccati solution is not positive definite".into()));
    }
    let closed = a - &g * &p;
    if linalg::eigenvalues(&closed).iter().any(|z| z.re >= 0.0) {
        return Err(Error::NoSolution("Riccati solution is not stabilizing".into()));
    }
    Ok(CareSolution {
        p,
        residual: res_norm,
        relative_residual: res_norm / (1.0 + q_norm),
        newton_steps: steps,
    })
}

/// SPD `P` with `AᵀP + PA = 0` for a neutrally stable `A`.
///
/// `P = S⁻ᵀS⁻¹` where the columns of `S` are a real eigenbasis (real and
/// imaginary parts for each `iω` eigenvector), so `S⁻¹AS` is skew-symmetric.
/// With `scale = Some(s)` the result is normalized to `λ_max(P) = s`.
pub fn solve_neutral_lyapunov(a: &DMatrix<f64>, scale: Option<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::dim(
            "A",
            format!("{}×{} is not a nonempty square matrix", n, a.ncols()),
        ));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let a_scale = linalg::norm2(a).max(1.0);
    let normalize = |p: DMatrix<f64>| match scale {
        Some(s) => &p * (s / linalg::sym_max_eig(&p)),
        None => p,
    };
    if (a + a.transpose()).norm() <= 1e-14 * a_scale {
        return Ok(normalize(DMatrix::identity(n, n)));
    }
    let eigs = linalg::eigenvalues(a);
    for z in &eigs {
        if z.re.abs() > 1e-9 * a_scale {
            return Err(Error::NotNeutrallyStable {
                re: z.re,
                im: z.im,
                reason: "has a nonzero real part".into(),
            });
        }
    }
    let null_tol = 1e-7 * a_scale;
    let mut columns = Vec::with_capacity(n);
    for (lambda, alg) in lti::cluster_eigenvalues(&eigs, a_scale) {
        let omega = if lambda.im.abs() <= 1e-9 * a_scale {
            0.0
        } else {
            lambda.im
        };
        if omega < 0.0 {
            continue;
        }
        let geo = if omega == 0.0 {
            let svd = a.clone().svd(false, true);
            let v_t = svd.v_t.expect("v_t requested");
            let mut found = 0;
            for (idx, s) in svd.singular_values.iter().enumerate() {
                if *s <= null_tol {
                    columns.push(v_t.row(idx).transpose());
                    found += 1;
                }
            }
            found
        } else {
            let mut shifted = linalg::to_complex(a);
            for i in 0..n {
                shifted[(i, i)] -= Complex64::new(0.0, omega);
            }
            let basis = linalg::complex_null_space(&shifted, null_tol);
            for v in &basis {
                columns.push(v.map(|z| z.re));
                columns.push(v.map(|z| z.im));
            }
            basis.len()
        };
        if geo < alg {
            return Err(Error::NotNeutrallyStable {
                re: 0.0,
                im: omega,
                reason: format!("is defective (algebraic multiplicity {alg}, geometric {geo})"),
            });
        }
    }
    if columns.len() != n {
        return Err(Error::NotNeutrallyStable {
            re: 0.0,
            im: 0.0,
            reason: format!("eigenbasis has {} vectors instead of {n}", columns.len()),
        });
    }
    let s = DMatrix::from_columns(&columns);
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::NoSolution("eigenbasis is singular".into()))?;
    let p = normalize(linalg::symmetrize(&(s_inv.transpose() * &s_inv)));
    let residual = (a.transpose() * &p + &p * a).norm();
    if residual > 1e-8 * p.norm() {
        return Err(Error::NoSolution(format!(
            "Lyapunov residual {residual:.3e} is too large"
        )));
    }
    Ok(p)
}

/// Conservative `κ₂ = 2λ_min(F₂)/λ_max(F₄)`, so that `F₂ ⪰ (κ₂/2)F₄`.
/// Returns `+∞` when `F₄ = 0`.
pub fn kappa2_estimate(f2: &DMatrix<f64>, f4: &DMatrix<f64>) -> Result<f64> {
    check_pair(f2, f4)?;
    let lmax4 = linalg::sym_max_eig(f4);
    if lmax4 <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(2.0 * linalg::sym_min_eig(f2).max(0.0) / lmax4)
}

/// Largest `κ` with `F₂ ⪰ (κ/2)F₄`, from the pencil whitened by the
/// pseudo-inverse square root of `F₂`.
pub fn kappa2_tight(f2: &DMatrix<f64>, f4: &DMatrix<f64>) -> Result<f64> {
    check_pair(f2, f4)?;
    let f2 = linalg::symmetrize(f2);
    let f4 = linalg::symmetrize(f4);
    if linalg::sym_max_eig(&f4) <= 0.0 {
        return Ok(f64::INFINITY);
    }
    let eig = f2.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    if lmax <= 0.0 {
        return Ok(0.0);
    }
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > 1e-12 * lmax)
        .collect();
    let u = DMatrix::from_columns(
        &keep
            .iter()
            .map(|&i| eig.eigenvectors.column(i).clone_owned())
            .collect::<Vec<_>>(),
    );
    // F₄ must live in range(F₂), otherwise no positive κ works
    let proj = &u * u.transpose();
    let leak = (&f4 - &proj * &f4 * &proj).norm();
    if leak > 1e-9 * f4.norm() {
        return Ok(0.0);
    }
    let inv_sqrt = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        keep.len(),
        keep.iter().map(|&i| 1.0 / eig.eigenvalues[i].sqrt()),
    ));
    let m = &inv_sqrt * u.transpose() * &f4 * &u * &inv_sqrt;
    let top = linalg::sym_max_eig(&m);
    Ok(if top > 0.0 { 2.0 / top } else { f64::INFINITY })
}

fn check_pair(f2: &DMatrix<f64>, f4: &DMatrix<f64>) -> Result<()> {
    if f2.shape() != f4.shape() || f2.nrows() != f2.ncols() {
        return Err(Error::dim(
            "F2/F4",
            format!("shapes {:?} and {:?} must be equal and square", f2.shape(), f4.shape()),
        ));
    }
    check_symmetric("F2", f2)?;
    check_symmetric("F4", f4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Kappa2Method {
    #[default]
    Conservative,
    Tight,
}

/// Where the Gram matrices are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GramGrid {
    pub window: f64,
    pub dt: f64,
    /// Aperiodic graphs: last window start is `horizon − window`.
    pub horizon: f64,
    /// Aperiodic graphs: spacing of window starts.
    pub stride: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Kappa2Estimate {
    pub kappa2: f64,
    pub method: Kappa2Method,
    /// Window start where the minimum was attained.
    pub worst_start: f64,
    pub lambda_min_f2: f64,
    pub lambda_max_f4: f64,
    /// Number of window starts evaluated (1 for periodic graphs).
    pub grid_points: usize,
    pub grid_stride: Option<f64>,
}

/// κ₂ for the gain `K = BᵀP`: one window at `t = 0` for periodic or static
/// graphs, otherwise the minimum over a stride grid of window starts.
pub fn kappa2_for_design(
    plant: &Plant,
    p: &DMatrix<f64>,
    k: &DMatrix<f64>,
    g: &GraphSignal,
    grid: &GramGrid,
    method: Kappa2Method,
) -> Result<Kappa2Estimate> {
    let starts: Vec<f64> = match g.periodicity() {
        Periodicity::Static | Periodicity::Periodic(_) => vec![0.0],
        Periodicity::Aperiodic => {
            if !(grid.stride > 0.0) || grid.horizon < grid.window {
                return Err(Error::Precondition(format!(
                    "aperiodic κ₂ grid needs stride > 0 and horizon ≥ window (stride {}, horizon {})",
                    grid.stride, grid.horizon
                )));
            }
            let mut v = Vec::new();
            let mut j = 0usize;
            while j as f64 * grid.stride + grid.window <= grid.horizon * (1.0 + 1e-12) {
                v.push(j as f64 * grid.stride);
                j += 1;
            }
            v
        }
    };
    let mut best: Option<Kappa2Estimate> = None;
    for &t in &starts {
        let gs = sim::gram_set(plant, k, p, g, t, grid.window, grid.dt)?;
        let kappa2 = match method {
            Kappa2Method::Conservative => kappa2_estimate(&gs.f2, &gs.f4)?,
            Kappa2Method::Tight => kappa2_tight(&gs.f2, &gs.f4)?,
        };
        if best.as_ref().is_none_or(|b| kappa2 < b.kappa2) {
            best = Some(Kappa2Estimate {
                kappa2,
                method,
                worst_start: t,
                lambda_min_f2: linalg::sym_min_eig(&gs.f2),
                lambda_max_f4: linalg::sym_max_eig(&gs.f4),
                grid_points: starts.len(),
                grid_stride: (starts.len() > 1).then_some(grid.stride),
            });
        }
    }
    Ok(best.expect("at least one window start"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Explicit,
    Riccati,
    NeutralLyapunov,
    Algorithm1,
}

/// Feedback design `K` with its Lyapunov matrix `P` and the coupling constants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainDesign {
    pub kind: DesignKind,
    pub p: DMatrix<f64>,
    /// `BᵀP` for every kind except explicit gains.
    pub k: DMatrix<f64>,
    pub q: Option<DMatrix<f64>>,
    pub kappa1: Option<f64>,
    pub kappa2: Option<f64>,
    pub sync_index: Option<f64>,
    pub care_residual: Option<f64>,
    pub kappa2_detail: Option<Kappa2Estimate>,
}

impl GainDesign {
    /// `K = BᵀP` with the given metadata.
    pub fn from_p(kind: DesignKind, plant: &Plant, p: DMatrix<f64>) -> Result<Self> {
        if p.nrows() != plant.n() || p.ncols() != plant.n() {
            return Err(Error::dim(
                "P",
                format!("expected {0}×{0}, got {1}×{2}", plant.n(), p.nrows(), p.ncols()),
            ));
        }
        check_symmetric("P", &p)?;
        if linalg::sym_min_eig(&p) <= 0.0 {
            return Err(Error::Precondition("P must be positive definite".into()));
        }
        let k = plant.b().transpose() * &p;
        Ok(Self {
            kind,
            p,
            k,
            q: None,
            kappa1: None,
            kappa2: None,
            sync_index: None,
            care_residual: None,
            kappa2_detail: None,
        })
    }

    /// Riccati design at `κ₁` with weight `Q`.
    pub fn riccati(plant: &Plant, kappa1: f64, q: &DMatrix<f64>) -> Result<Self> {
        let sol = solve_care(plant, kappa1, q)?;
        let mut d = Self::from_p(DesignKind::Riccati, plant, sol.p)?;
        d.q = Some(q.clone());
        d.kappa1 = Some(kappa1);
        d.care_residual = Some(sol.residual);
        Ok(d)
    }

    /// Gain is `BᵀP` up to rounding.
    pub fn is_riccati_gain(&self, plant: &Plant) -> bool {
        let want = plant.b().transpose() * &self.p;
        (&want - &self.k).norm() <= 1e-12 * want.norm().max(1.0)
    }

    /// Fills `κ₂` and, when `κ₁` is known, the synchronization index.
    pub fn attach_kappa2(&mut self, est: Kappa2Estimate) {
        self.kappa2 = Some(est.kappa2);
        self.sync_index = self.kappa1.map(|k1| est.kappa2 / k1);
        self.kappa2_detail = Some(est);
    }
}

/// Which sweep entry becomes the returned design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SweepSelection {
    /// The step with the largest `κ₂(γ_k)/γ_k`.
    #[default]
    BestIndex,
    /// `κ₁ = min_k κ₂(γ_k)`, re-solved and re-estimated.
    MinKappa2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepOptions {
    pub k_max: usize,
    pub grid: GramGrid,
    pub method: Kappa2Method,
    pub rel_tol: f64,
    pub selection: SweepSelection,
    /// Worker threads; 1 runs sequentially.
    pub jobs: usize,
}

impl SweepOptions {
    pub fn new(window: f64, k_max: usize) -> Self {
        Self {
            k_max,
            grid: GramGrid {
                window,
                dt: sim::DEFAULT_DT,
                horizon: 10.0 * window,
                stride: window / 10.0,
            },
            method: Kappa2Method::Conservative,
            rel_tol: 1e-4,
            selection: SweepSelection::BestIndex,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepStep {
    pub k: usize,
    pub gamma: f64,
    pub p: DMatrix<f64>,
    pub care_residual: f64,
    pub lambda_min_scaled_p: f64,
    pub lambda_max_scaled_p: f64,
    pub kappa2: f64,
    pub lambda_min_f2: f64,
    pub lambda_max_f4: f64,
}

impl SweepStep {
    pub fn sync_index(&self) -> f64 {
        self.kappa2 / self.gamma
    }
}

/// Riccati solutions along `γ_k = 1/k` with `Q = I`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaSweep {
    pub steps: Vec<SweepStep>,
    pub converged: bool,
}

impl GammaSweep {
    pub fn gammas(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.gamma).collect()
    }

    pub fn kappa2_list(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.kappa2).collect()
    }

    pub fn min_eig_scaled(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.lambda_min_scaled_p).collect()
    }

    /// `min_k κ₂(γ_k)`.
    pub fn min_kappa2(&self) -> f64 {
        self.steps.iter().map(|s| s.kappa2).fold(f64::INFINITY, f64::min)
    }

    /// Columns `k, gamma, lambda_min_scaled_P, lambda_max_scaled_P, kappa2,
    /// sync_index, lambda_min_F2, lambda_max_F4, care_residual`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record([
            "k",
            "gamma",
            "lambda_min_scaled_P",
            "lambda_max_scaled_P",
            "kappa2",
            "sync_index",
            "lambda_min_F2",
            "lambda_max_F4",
            "care_residual",
        ])?;
        for s in &self.steps {
            wtr.write_record([
                s.k.to_string(),
                num(s.gamma),
                num(s.lambda_min_scaled_p),
                num(s.lambda_max_scaled_p),
                num(s.kappa2),
                num(s.sync_index()),
                num(s.lambda_min_f2),
                num(s.lambda_max_f4),
                num(s.care_residual),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Algorithm1Result {
    pub sweep: GammaSweep,
    pub design: GainDesign,
    /// Synchronization index of the returned design is at least one.
    pub success: bool,
}

fn sweep_step(plant: &Plant, g: &GraphSignal, k: usize, opts: &SweepOptions) -> Result<SweepStep> {
    let gamma = 1.0 / k as f64;
    let n = plant.n();
    let sol = solve_care(plant, gamma, &DMatrix::identity(n, n)).map_err(|e| Error::SweepStep {
        gamma,
        source: Box::new(e),
    })?;
    let ev = linalg::sym_eigenvalues(&sol.p);
    let top = *ev.last().expect("n ≥ 1");
    let gain = plant.b().transpose() * &sol.p;
    let est = kappa2_for_design(plant, &sol.p, &gain, g, &opts.grid, opts.method)?;
    Ok(SweepStep {
        k,
        gamma,
        care_residual: sol.residual,
        lambda_min_scaled_p: ev[0] / top,
        lambda_max_scaled_p: 1.0,
        kappa2: est.kappa2,
        lambda_min_f2: est.lambda_min_f2,
        lambda_max_f4: est.lambda_max_f4,
        p: sol.p,
    })
}

fn run_batch(plant: &Plant, g: &GraphSignal, ks: &[usize], opts: &SweepOptions) -> Vec<Result<SweepStep>> {
    if opts.jobs <= 1 || ks.len() <= 1 {
        return ks.iter().map(|&k| sweep_step(plant, g, k, opts)).collect();
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = ks
            .iter()
            .map(|&k| scope.spawn(move || sweep_step(plant, g, k, opts)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    })
}

/// γ-sweep: `γ_k = 1/k`, `P_γ` from the Riccati equation with `Q = I`,
/// `κ₂(γ_k)` from `F₂`, `F₄` of the gain `BᵀP_γ`. Stops once consecutive
/// `κ₂` agree to `rel_tol` or at `k_max`.
pub fn algorithm1_search(plant: &Plant, g: &GraphSignal, opts: &SweepOptions) -> Result<Algorithm1Result> {
    if opts.k_max == 0 {
        return Err(Error::Precondition("k_max must be at least 1".into()));
    }
    if !lti::is_controllable(plant, lti::DEFAULT_RANK_TOL) {
        return Err(Error::Precondition("(A, B) must be controllable".into()));
    }
    let mut steps: Vec<SweepStep> = Vec::new();
    let mut converged = false;
    let batch = opts.jobs.max(1);
    let mut next = 1;
    'outer: while next <= opts.k_max {
        let ks: Vec<usize> = (next..=(next + batch - 1).min(opts.k_max)).collect();
        next += ks.len();
        for step in run_batch(plant, g, &ks, opts) {
            let step = step?;
            if let Some(prev) = steps.last() {
                if (step.kappa2 - prev.kappa2).abs() <= opts.rel_tol * step.kappa2 {
                    steps.push(step);
                    converged = true;
                    break 'outer;
                }
            }
            steps.push(step);
        }
    }
    let sweep = GammaSweep { steps, converged };
    let n = plant.n();
    let design = match opts.selection {
        SweepSelection::BestIndex => {
            let best = sweep
                .steps
                .iter()
                .max_by(|a, b| a.sync_index().total_cmp(&b.sync_index()))
                .expect("sweep has at least one step");
            let mut d = GainDesign::from_p(DesignKind::Algorithm1, plant, best.p.clone())?;
            d.q = Some(DMatrix::identity(n, n));
            d.kappa1 = Some(best.gamma);
            d.care_residual = Some(best.care_residual);
            d.attach_kappa2(kappa2_for_design(plant, &d.p, &d.k, g, &opts.grid, opts.method)?);
            d
        }
        SweepSelection::MinKappa2 => {
            let kappa1 = sweep.min_kappa2();
            if !(kappa1 > 0.0 && kappa1.is_finite()) {
                return Err(Error::NoSolution(format!("sweep produced no usable κ₂ (min {kappa1})")));
            }
            let mut d = GainDesign::riccati(plant, kappa1, &DMatrix::identity(n, n))?;
            d.kind = DesignKind::Algorithm1;
            d.attach_kappa2(kappa2_for_design(plant, &d.p, &d.k, g, &opts.grid, opts.method)?);
            d
        }
    };
    let success = design.sync_index.is_some_and(|s| s >= 1.0);
    Ok(Algorithm1Result { sweep, design, success })
}

/// The `κ₁` among `candidates` whose Riccati solution (with weight `Q`) is
/// closest to `target` in relative Frobenius norm.
pub fn best_matching_kappa1(
    plant: &Plant,
    q: &DMatrix<f64>,
    target: &DMatrix<f64>,
    candidates: &[f64],
) -> Result<(f64, f64)> {
    let mut best = (f64::NAN, f64::INFINITY);
    for &k1 in candidates {
        let p = solve_care(plant, k1, q)?.p;
        let err = (&p - target).norm() / target.norm();
        if err < best.1 {
            best = (k1, err);
        }
    }
    if best.0.is_nan() {
        return Err(Error::Precondition("no candidate κ₁ given".into()));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64, b: f64) -> Plant {
        Plant::new(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, b)).unwrap()
    }

    fn example2() -> Plant {
        Plant::new(
            DMatrix::from_row_slice(3, 3, &[2., 1., 0., 1., 2., 1., 0., 1., 2.]),
            DMatrix::from_row_slice(3, 2, &[1., 0., 1., 1., 0., 1.]),
        )
        .unwrap()
    }

    #[test]
    fn scalar_riccati_roots() {
        let one = DMatrix::identity(1, 1);
        let p = solve_care(&scalar(1.0, 1.0), 1.0, &one).unwrap().p;
        assert!((p[(0, 0)] - (1.0 + 2f64.sqrt())).abs() < 1e-12);
        let p = solve_care(&scalar(0.0, 1.0), 1.0, &one).unwrap().p;
        assert!((p[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn example2_riccati_residual_and_stability() {
        let plant = example2();
        for kappa1 in [1.0, 0.1, 0.042, 0.02] {
            let sol = solve_care(&plant, kappa1, &DMatrix::identity(3, 3)).unwrap();
            assert!(
                sol.relative_residual <= 1e-10,
                "κ₁ = {kappa1}: {}",
                sol.relative_residual
            );
            let closed = plant.a() - plant.b() * plant.b().transpose() * &sol.p * kappa1;
            assert!(linalg::eigenvalues(&closed).iter().all(|z| z.re < 0.0));
        }
    }

    #[test]
    fn unstabilizable_plant_is_rejected() {
        let plant = Plant::new(DMatrix::identity(2, 2), DMatrix::from_row_slice(2, 1, &[1.0, 0.0])).unwrap();
        assert!(matches!(
            solve_care(&plant, 1.0, &DMatrix::identity(2, 2)),
            Err(Error::NoSolution(_))
        ));
    }

    #[test]
    fn rejects_asymmetric_q() {
        let q = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert!(solve_care(&scalar(1.0, 1.0), 1.0, &q).is_ok());
        let q2 = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let plant = Plant::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2)).unwrap();
        assert!(matches!(solve_care(&plant, 1.0, &q2), Err(Error::Asymmetric { .. })));
    }

    #[test]
    fn neutral_lyapunov_cases() {
        let skew = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, -2.0, 0.0]);
        assert_eq!(solve_neutral_lyapunov(&skew, None).unwrap(), DMatrix::identity(2, 2));
        assert_eq!(
            solve_neutral_lyapunov(&DMatrix::zeros(3, 3), None).unwrap(),
            DMatrix::identity(3, 3)
        );
        let a = DMatrix::from_row_slice(3, 3, &[0., 1., 0., -2., 0., 1., 0., 1., 0.]);
        let p = solve_neutral_lyapunov(&a, Some(1.0)).unwrap();
        assert!((a.transpose() * &p + &p * &a).norm() <= 1e-8 * p.norm());
        assert!(linalg::sym_min_eig(&p) > 0.0);
        assert!((linalg::sym_max_eig(&p) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn neutral_lyapunov_rejects_unstable_and_defective() {
        let unstable = DMatrix::from_row_slice(2, 2, &[0.1, 1.0, -1.0, 0.1]);
        assert!(matches!(
            solve_neutral_lyapunov(&unstable, None),
            Err(Error::NotNeutrallyStable { .. })
        ));
        let jordan = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let err = solve_neutral_lyapunov(&jordan, None).unwrap_err();
        assert!(err.to_string().contains("defective"), "{err}");
    }

    #[test]
    fn kappa2_examples() {
        let two = DMatrix::identity(2, 2) * 2.0;
        assert_eq!(kappa2_estimate(&two, &DMatrix::identity(2, 2)).unwrap(), 4.0);
        let f2 = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 4.0]));
        let f4 = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 2.0]));
        let k = kappa2_estimate(&f2, &f4).unwrap();
        assert_eq!(k, 1.0);
        assert!(linalg::sym_min_eig(&(&f2 - &f4 * (k / 2.0))) >= 0.0);
        assert_eq!(kappa2_estimate(&f2, &DMatrix::zeros(2, 2)).unwrap(), f64::INFINITY);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(kappa2_estimate(&asym, &f4), Err(Error::Asymmetric { .. })));
        // the tight pencil value is never smaller than the conservative one
        assert!(kappa2_tight(&f2, &f4).unwrap() >= k);
        assert!((kappa2_tight(&f2, &f4).unwrap() - 1.0).abs() < 1e-12);
        let f4b = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, 2.0]));
        assert!((kappa2_tight(&f2, &f4b).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn single_step_sweep() {
        let plant = scalar(0.0, 1.0);
        let g = GraphSignal::new(2)
            .unwrap()
            .with_edge(0, 1, crate::graphdyn::WeightSchedule::constant(1.0).unwrap())
            .unwrap();
        let mut opts = SweepOptions::new(1.0, 1);
        opts.grid.dt = 1e-2;
        let res = algorithm1_search(&plant, &g, &opts).unwrap();
        assert_eq!(res.sweep.steps.len(), 1);
        assert_eq!(res.sweep.steps[0].gamma, 1.0);
        assert!((res.sweep.steps[0].p[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parallel_sweep_matches_sequential() {
        let plant = scalar(0.5, 1.0);
        let g = GraphSignal::new(2)
            .unwrap()
            .with_edge(0, 1, crate::graphdyn::WeightSchedule::constant(1.0).unwrap())
            .unwrap();
        let mut opts = SweepOptions::new(1.0, 6);
        opts.grid.dt = 1e-2;
        opts.rel_tol = 0.0;
        let seq = algorithm1_search(&plant, &g, &opts).unwrap();
        opts.jobs = 4;
        let par = algorithm1_search(&plant, &g, &opts).unwrap();
        assert_eq!(seq.sweep, par.sweep);
        assert_eq!(seq.sweep.steps.len(), 6);
    }
}
