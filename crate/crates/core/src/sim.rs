//! Closed-loop integration, consensus error, Lyapunov rate, transition
//! matrices and Gram integrals.
//!
//! Every integration grid is split at the graph's segment boundaries. On
//! pieces where all weights are constant the propagator is one exact matrix
//! exponential per step; elsewhere classical RK4 is used.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::csvfmt::num;
use crate::error::{Error, Result};
use crate::graphdyn::{augmented_laplacian, GraphSignal};
use crate::linalg;
use crate::lti::{expm, Plant};

pub const DEFAULT_DT: f64 = 1e-3;

/// One stretch of the grid between consecutive graph breakpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPiece {
    pub t0: f64,
    pub t1: f64,
    /// Even, at least 2.
    pub steps: usize,
    pub constant: bool,
}

impl GridPiece {
    pub fn h(&self) -> f64 {
        (self.t1 - self.t0) / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.t1
        } else {
            self.t0 + k as f64 * self.h()
        }
    }

    /// Clamps `t` into the half-open piece so profile evaluation never picks
    /// up the next segment.
    fn inside(&self, t: f64) -> f64 {
        let left = self.t1 - 1e-12 * (1.0 + self.t1.abs());
        t.clamp(self.t0, left.max(self.t0))
    }
}

/// Pieces covering `[t0, t1]` with step at most `dt`.
pub fn time_grid(g: &GraphSignal, t0: f64, t1: f64, dt: f64) -> Result<Vec<GridPiece>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Precondition(format!("dt must be positive, got {dt}")));
    }
    if !(t1 > t0 && t0 >= 0.0 && t1.is_finite()) {
        return Err(Error::Precondition(format!("invalid time span [{t0}, {t1}]")));
    }
    let end = g.domain_end();
    if t1 > end {
        return Err(Error::OutOfDomain { t: t1, end });
    }
    let mut cuts = vec![t0];
    cuts.extend(g.breakpoints(t0, t1));
    cuts.push(t1);
    let mut pieces = Vec::with_capacity(cuts.len() - 1);
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mut steps = ((b - a) / dt * (1.0 - 1e-12)).ceil().max(2.0) as usize;
        if steps % 2 == 1 {
            steps += 1;
        }
        let constant = g.is_constant_on(a, b)?;
        pieces.push(GridPiece {
            t0: a,
            t1: b,
            steps,
            constant,
        });
    }
    Ok(pieces)
}

/// Closed-loop generator `I_N⊗A − L⊗BK`.
pub fn closed_loop_matrix(p: &Plant, bk: &DMatrix<f64>, l: &DMatrix<f64>) -> DMatrix<f64> {
    let n_agents = l.nrows();
    linalg::kron(&DMatrix::identity(n_agents, n_agents), p.a()) - linalg::kron(l, bk)
}

fn check_gain(p: &Plant, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if k.nrows() != p.m() || k.ncols() != p.n() {
        return Err(Error::dim(
            "K",
            format!("expected {}×{}, got {}×{}", p.m(), p.n(), k.nrows(), k.ncols()),
        ));
    }
    Ok(p.b() * k)
}

fn check_p(p: &Plant, pm: &DMatrix<f64>) -> Result<()> {
    if pm.nrows() != p.n() || pm.ncols() != p.n() {
        return Err(Error::dim(
            "P",
            format!("expected {0}×{0}, got {1}×{2}", p.n(), pm.nrows(), pm.ncols()),
        ));
    }
    Ok(())
}

/// Which Laplacian enters the generator.
#[derive(Clone, Copy)]
enum Coupling {
    Plain,
    Augmented,
}

/// Propagates a matrix (or a single column) across the grid, calling `visit`
/// at every grid point with the piece index, the point index and the state.
fn propagate<F>(
    p: &Plant,
    bk: &DMatrix<f64>,
    g: &GraphSignal,
    pieces: &[GridPiece],
    coupling: Coupling,
    init: DMatrix<f64>,
    mut visit: F,
) -> Result<DMatrix<f64>>
where
    F: FnMut(usize, usize, f64, &DMatrix<f64>) -> Result<()>,
{
    let generator = |t: f64| -> Result<DMatrix<f64>> {
        let l = g.laplacian_at(t)?;
        let l = match coupling {
            Coupling::Plain => l,
            Coupling::Augmented => augmented_laplacian(&l)?,
        };
        Ok(closed_loop_matrix(p, bk, &l))
    };
    let mut state = init;
    let mut cache: Vec<(DMatrix<f64>, f64, DMatrix<f64>)> = Vec::new();
    let mut last_finite = pieces.first().map_or(0.0, |pc| pc.t0);
    for (pi, piece) in pieces.iter().enumerate() {
        let h = piece.h();
        if pi == 0 {
            visit(pi, 0, piece.t0, &state)?;
        }
        if piece.constant {
            let m = generator(piece.t0)?;
            let step = match cache.iter().find(|(cm, ch, _)| *ch == h && *cm == m) {
                Some((_, _, s)) => s.clone(),
                None => {
                    let s = expm(&m, h)?;
                    cache.push((m, h, s.clone()));
                    s
                }
            };
            for k in 1..=piece.steps {
                state = &step * &state;
                let t = piece.time(k);
                if state.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Divergence {
                        last_finite_time: last_finite,
                    });
                }
                last_finite = t;
                visit(pi, k, t, &state)?;
            }
        } else {
            for k in 1..=piece.steps {
                let t = piece.time(k - 1);
                let m0 = generator(piece.inside(t))?;
                let mh = generator(piece.inside(t + 0.5 * h))?;
                let m1 = generator(piece.inside(t + h))?;
                let k1 = &m0 * &state;
                let k2 = &mh * (&state + &k1 * (0.5 * h));
                let k3 = &mh * (&state + &k2 * (0.5 * h));
                let k4 = &m1 * (&state + &k3 * h);
                state += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
                let t_next = piece.time(k);
                if state.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Divergence {
                        last_finite_time: last_finite,
                    });
                }
                last_finite = t_next;
                visit(pi, k, t_next, &state)?;
            }
        }
    }
    Ok(state)
}

/// `(J⊗I_n)x` with `J = I − (1/N)11ᵀ`.
pub fn error_projection(x: &DVector<f64>, n: usize, n_agents: usize) -> Result<DVector<f64>> {
    if n == 0 || n_agents == 0 || x.len() != n * n_agents {
        return Err(Error::dim(
            "x",
            format!("expected length {}·{}, got {}", n, n_agents, x.len()),
        ));
    }
    let mut mean = DVector::zeros(n);
    for i in 0..n_agents {
        mean += x.rows(i * n, n);
    }
    mean /= n_agents as f64;
    let mut e = x.clone();
    for i in 0..n_agents {
        let mut block = e.rows_mut(i * n, n);
        block -= &mean;
    }
    Ok(e)
}

/// Agent-blockwise evaluator of `V` and `α` that never forms `nN × nN` Kronecker
/// products.
#[derive(Debug, Clone)]
pub struct RateEvaluator {
    n: usize,
    p: DMatrix<f64>,
    /// `AᵀP + PA`.
    s: DMatrix<f64>,
    /// `PBK + (PBK)ᵀ`, equal to `2PBBᵀP` when `K = BᵀP`.
    g: DMatrix<f64>,
}

impl RateEvaluator {
    pub fn new(plant: &Plant, k: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<Self> {
        let bk = check_gain(plant, k)?;
        check_p(plant, p)?;
        let a = plant.a();
        let pbk = p * bk;
        Ok(Self {
            n: plant.n(),
            p: p.clone(),
            s: a.transpose() * p + p * a,
            g: &pbk + pbk.transpose(),
        })
    }

    /// `eᵀ(I_N⊗P)e`.
    pub fn v(&self, e: &DVector<f64>) -> f64 {
        let n = self.n;
        (0..e.len() / n)
            .map(|i| {
                let ei = e.rows(i * n, n);
                (ei.transpose() * &self.p * ei)[(0, 0)]
            })
            .sum()
    }

    /// `−V̇/V = −eᵀ[I⊗(AᵀP+PA) − L̂⊗(PBK + KᵀBᵀP)]e / V`.
    pub fn alpha(&self, e: &DVector<f64>, lhat: &DMatrix<f64>) -> Result<f64> {
        let n = self.n;
        let n_agents = lhat.nrows();
        if e.len() != n * n_agents {
            return Err(Error::dim(
                "e",
                format!("expected length {}, got {}", n * n_agents, e.len()),
            ));
        }
        let norm = e.norm();
        if norm <= 1e-14 {
            return Err(Error::ConsensusReached { norm });
        }
        let mut drift = 0.0;
        let mut coupling = 0.0;
        let ge: Vec<DVector<f64>> = (0..n_agents).map(|j| &self.g * e.rows(j * n, n)).collect();
        for i in 0..n_agents {
            let ei = e.rows(i * n, n);
            drift += (ei.transpose() * &self.s * ei)[(0, 0)];
            for (j, gej) in ge.iter().enumerate() {
                let lij = lhat[(i, j)];
                if lij != 0.0 {
                    coupling += lij * ei.dot(gej);
                }
            }
        }
        let v = self.v(e);
        if v <= 0.0 {
            return Err(Error::ConsensusReached { norm });
        }
        Ok(-(drift - coupling) / v)
    }
}

/// `α(t) = −eᵀ[I_N⊗(AᵀP+PA) − 2L̂⊗PBBᵀP]e / eᵀ(I_N⊗P)e` for the gain `K = BᵀP`.
pub fn alpha_at(
    e: &DVector<f64>,
    lhat: &DMatrix<f64>,
    a: &DMatrix<f64>,
    p: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<f64> {
    let plant = Plant::new(a.clone(), b.clone())?;
    let k = b.transpose() * p;
    RateEvaluator::new(&plant, &k, p)?.alpha(e, lhat)
}

/// Sampled closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub n: usize,
    pub n_agents: usize,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub errors: Vec<DVector<f64>>,
    pub v: Vec<f64>,
    /// `NaN` where the error is numerically zero.
    pub alpha: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn span(&self) -> f64 {
        match (self.times.first(), self.times.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// State of agent `i` at sample `k`.
    pub fn agent_state(&self, k: usize, i: usize) -> DVector<f64> {
        self.states[k].rows(i * self.n, self.n).clone_owned()
    }

    /// Columns `t, x0.., e0.., V, alpha, log_V`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let dim = self.n * self.n_agents;
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((0..dim).map(|i| format!("x{i}")));
        header.extend((0..dim).map(|i| format!("e{i}")));
        header.extend(["V", "alpha", "log_V"].map(String::from));
        wtr.write_record(&header)?;
        let mut row = Vec::with_capacity(header.len());
        for k in 0..self.len() {
            row.clear();
            row.push(num(self.times[k]));
            row.extend(self.states[k].iter().map(|&v| num(v)));
            row.extend(self.errors[k].iter().map(|&v| num(v)));
            row.push(num(self.v[k]));
            row.push(if self.alpha[k].is_nan() {
                String::new()
            } else {
                num(self.alpha[k])
            });
            row.push(if self.v[k] > 1e-300 {
                num(self.v[k].ln())
            } else {
                String::new()
            });
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Integrates `ẋ_i = Ax_i + BK Σ_j w_ij(t)(x_j − x_i)` on `[0, t_end]` and
/// evaluates `e`, `V` and `α` at every grid point.
pub fn integrate(
    plant: &Plant,
    k: &DMatrix<f64>,
    p: &DMatrix<f64>,
    g: &GraphSignal,
    x0: &DVector<f64>,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    let n = plant.n();
    let n_agents = g.n_nodes();
    if x0.len() != n * n_agents {
        return Err(Error::dim(
            "x0",
            format!("expected length {}, got {}", n * n_agents, x0.len()),
        ));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let bk = check_gain(plant, k)?;
    let rate = RateEvaluator::new(plant, k, p)?;
    let pieces = time_grid(g, 0.0, t_end, dt)?;
    let total: usize = pieces.iter().map(|pc| pc.steps).sum::<usize>() + 1;
    let mut traj = Trajectory {
        n,
        n_agents,
        times: Vec::with_capacity(total),
        states: Vec::with_capacity(total),
        errors: Vec::with_capacity(total),
        v: Vec::with_capacity(total),
        alpha: Vec::with_capacity(total),
    };
    let mut lhat_cache: Option<(usize, DMatrix<f64>)> = None;
    let x0m = DMatrix::from_column_slice(x0.len(), 1, x0.as_slice());
    propagate(plant, &bk, g, &pieces, Coupling::Plain, x0m, |pi, _, t, state| {
        let x = DVector::from_column_slice(state.as_slice());
        let e = error_projection(&x, n, n_agents)?;
        let piece = &pieces[pi];
        let lhat = if piece.constant {
            match &lhat_cache {
                Some((idx, l)) if *idx == pi => l.clone(),
                _ => {
                    let l = g.augmented_laplacian_at(piece.inside(t))?;
                    lhat_cache = Some((pi, l.clone()));
                    l
                }
            }
        } else {
            g.augmented_laplacian_at(piece.inside(t))?
        };
        let scale = 1.0 + x.norm();
        let alpha = if e.norm() <= 1e-14 * scale {
            f64::NAN
        } else {
            match rate.alpha(&e, &lhat) {
                Ok(a) => a,
                Err(Error::ConsensusReached { .. }) => f64::NAN,
                Err(other) => return Err(other),
            }
        };
        traj.times.push(t);
        traj.v.push(rate.v(&e));
        traj.alpha.push(alpha);
        traj.errors.push(e);
        traj.states.push(x);
        Ok(())
    })?;
    Ok(traj)
}

/// `Φ(t, s)` of the error dynamics `ė = (I_N⊗A − L̂(τ)⊗BK)e`.
pub fn state_transition(
    plant: &Plant,
    k: &DMatrix<f64>,
    g: &GraphSignal,
    s: f64,
    t: f64,
    dt: f64,
) -> Result<DMatrix<f64>> {
    if !(t >= s && s >= 0.0) {
        return Err(Error::Precondition(format!(
            "state transition needs t ≥ s ≥ 0, got s = {s}, t = {t}"
        )));
    }
    let dim = plant.n() * g.n_nodes();
    if t == s {
        return Ok(DMatrix::identity(dim, dim));
    }
    let bk = check_gain(plant, k)?;
    let pieces = time_grid(g, s, t, dt)?;
    propagate(
        plant,
        &bk,
        g,
        &pieces,
        Coupling::Augmented,
        DMatrix::identity(dim, dim),
        |_, _, _, _| Ok(()),
    )
}

/// Gram integrals `F_i(t) = ∫_t^{t+T} Φᵀ(τ,t) Γ_i Φ(τ,t) dτ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GramSet {
    pub t: f64,
    pub window: f64,
    pub f1: DMatrix<f64>,
    pub f2: DMatrix<f64>,
    pub f3: DMatrix<f64>,
    pub f4: DMatrix<f64>,
}

impl GramSet {
    /// `eᵀ(2F₂ − F₁)e / eᵀF₃e`, the window-integral form of the decay rate.
    pub fn alpha_ratio(&self, e: &DVector<f64>) -> f64 {
        let num = (e.transpose() * (&self.f2 * 2.0 - &self.f1) * e)[(0, 0)];
        let den = (e.transpose() * &self.f3 * e)[(0, 0)];
        num / den
    }

    /// Long-format CSV: `matrix, row, col, value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["matrix", "row", "col", "value"])?;
        for (name, m) in [("F1", &self.f1), ("F2", &self.f2), ("F3", &self.f3), ("F4", &self.f4)] {
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    wtr.write_record([name.to_string(), r.to_string(), c.to_string(), num(m[(r, c)])])?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Computes `F₁…F₄` over `[t, t + T]` by composite Simpson on each grid piece.
pub fn gram_set(
    plant: &Plant,
    k: &DMatrix<f64>,
    p: &DMatrix<f64>,
    g: &GraphSignal,
    t: f64,
    window: f64,
    dt: f64,
) -> Result<GramSet> {
    if !(window > 0.0) {
        return Err(Error::Precondition(format!(
            "window length must be positive, got {window}"
        )));
    }
    check_p(plant, p)?;
    let bk = check_gain(plant, k)?;
    let n_agents = g.n_nodes();
    let dim = plant.n() * n_agents;
    let a = plant.a();
    let pb = p * plant.b();
    let pbbp = &pb * pb.transpose();
    let eye_n = DMatrix::<f64>::identity(n_agents, n_agents);
    let gamma1 = linalg::kron(&eye_n, &(a.transpose() * p + p * a));
    let gamma3 = linalg::kron(&eye_n, p);
    let gamma4 = linalg::kron(&eye_n, &pbbp);
    let pieces = time_grid(g, t, t + window, dt)?;
    let mut f1 = DMatrix::zeros(dim, dim);
    let mut f2 = DMatrix::zeros(dim, dim);
    let mut f3 = DMatrix::zeros(dim, dim);
    let mut f4 = DMatrix::zeros(dim, dim);
    let mut gamma2_cache: Option<(usize, DMatrix<f64>)> = None;
    propagate(
        plant,
        &bk,
        g,
        &pieces,
        Coupling::Augmented,
        DMatrix::identity(dim, dim),
        |pi, idx, tau, phi| {
            let piece = &pieces[pi];
            let wgt = if idx == 0 || idx == piece.steps {
                1.0
            } else if idx % 2 == 1 {
                4.0
            } else {
                2.0
            } * piece.h()
                / 3.0;
            let gamma2 = if piece.constant {
                match &gamma2_cache {
                    Some((c, m)) if *c == pi => m.clone(),
                    _ => {
                        let m = linalg::kron(&g.augmented_laplacian_at(piece.inside(tau))?, &pbbp);
                        gamma2_cache = Some((pi, m.clone()));
                        m
                    }
                }
            } else {
                linalg::kron(&g.augmented_laplacian_at(piece.inside(tau))?, &pbbp)
            };
            let add = |f: &mut DMatrix<f64>, gamma: &DMatrix<f64>| {
                *f += phi.transpose() * gamma * phi * wgt;
            };
            add(&mut f1, &gamma1);
            add(&mut f2, &gamma2);
            add(&mut f3, &gamma3);
            add(&mut f4, &gamma4);
            // grid points shared by two pieces get their second weight here
            if idx == piece.steps && pi + 1 < pieces.len() {
                let next = &pieces[pi + 1];
                let w_next = next.h() / 3.0;
                let gamma2_next = linalg::kron(&g.augmented_laplacian_at(next.inside(tau))?, &pbbp);
                let add_next = |f: &mut DMatrix<f64>, gamma: &DMatrix<f64>| {
                    *f += phi.transpose() * gamma * phi * w_next;
                };
                add_next(&mut f1, &gamma1);
                add_next(&mut f2, &gamma2_next);
                add_next(&mut f3, &gamma3);
                add_next(&mut f4, &gamma4);
            }
            Ok(())
        },
    )?;
    Ok(GramSet {
        t,
        window,
        f1: linalg::symmetrize(&f1),
        f2: linalg::symmetrize(&f2),
        f3: linalg::symmetrize(&f3),
        f4: linalg::symmetrize(&f4),
    })
}
