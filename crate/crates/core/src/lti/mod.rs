//! Agent model `(A, B)` and the classical structural tests.

mod expm;

pub use expm::expm;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default relative singular-value threshold for rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plant {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl Plant {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if a.nrows() == 0 || a.nrows() != a.ncols() {
            return Err(Error::dim(
                "plant.a",
                format!("expected n×n with n ≥ 1, got {}×{}", a.nrows(), a.ncols()),
            ));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::dim(
                "plant.b",
                format!("expected {}×m with m ≥ 1, got {}×{}", a.nrows(), b.nrows(), b.ncols()),
            ));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// State dimension `n`.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension `m`.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn eigenvalues(&self) -> Vec<Complex64> {
        linalg::eigenvalues(&self.a)
    }
}

/// One eigenvalue of `A` with its left eigenvector and PBH verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeReport {
    pub eigenvalue: Complex64,
    /// Unit-norm `v` with `vᴴA = λvᴴ`; for repeated eigenvalues the vector of
    /// the eigenspace that minimizes `‖vᴴB‖`.
    pub left_eigenvector: DVector<Complex64>,
    pub controllable: bool,
    /// `‖vᴴB‖`.
    pub input_coupling: f64,
    pub algebraic_multiplicity: usize,
    pub geometric_multiplicity: usize,
    /// Eigenvalue is defective (Jordan chain longer than one).
    pub defective: bool,
}

impl ModeReport {
    pub fn is_real(&self) -> bool {
        self.eigenvalue.im == 0.0
    }

    /// Real part of the eigenvector, normalized; meaningful for real modes.
    pub fn real_vector(&self) -> DVector<f64> {
        // rotate so the largest component is real
        let (idx, _) = self
            .left_eigenvector
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .expect("non-empty eigenvector");
        let phase = self.left_eigenvector[idx] / self.left_eigenvector[idx].norm();
        let v = self.left_eigenvector.map(|z| (z / phase).re);
        let nrm = v.norm();
        v / nrm
    }
}

/// `[B, AB, …, A^{n−1}B]`.
pub fn controllability_matrix(p: &Plant) -> DMatrix<f64> {
    let (n, m) = (p.n(), p.m());
    let mut out = DMatrix::zeros(n, n * m);
    let mut block = p.b.clone();
    for k in 0..n {
        out.view_mut((0, k * m), (n, m)).copy_from(&block);
        block = &p.a * block;
    }
    out
}

pub fn is_controllable(p: &Plant, tol: f64) -> bool {
    linalg::numerical_rank(&controllability_matrix(p), tol) == p.n()
}

/// `[C; CA; …; CA^{n−1}]` has full column rank.
pub fn is_observable(a: &DMatrix<f64>, c: &DMatrix<f64>, tol: f64) -> Result<bool> {
    let n = a.nrows();
    if c.ncols() != n {
        return Err(Error::dim(
            "observability C",
            format!("expected q×{n}, got {}×{}", c.nrows(), c.ncols()),
        ));
    }
    let q = c.nrows();
    let mut obs = DMatrix::zeros(q * n, n);
    let mut block = c.clone();
    for k in 0..n {
        obs.view_mut((k * q, 0), (q, n)).copy_from(&block);
        block *= a;
    }
    Ok(linalg::numerical_rank(&obs, tol) == n)
}

/// Every eigenvalue has real part ≥ −tol.
pub fn spectrum_in_closed_rhp(a: &DMatrix<f64>, tol: f64) -> bool {
    linalg::eigenvalues(a).iter().all(|z| z.re >= -tol)
}

/// Groups numerically coincident eigenvalues: `(representative, multiplicity)`.
pub(crate) fn cluster_eigenvalues(eigs: &[Complex64], scale: f64) -> Vec<(Complex64, usize)> {
    let tol = 1e-6 * scale.max(1.0);
    let mut clusters: Vec<(Complex64, usize, Complex64)> = Vec::new();
    for &z in eigs {
        if let Some(c) = clusters.iter_mut().find(|c| (c.0 - z).norm() <= tol) {
            c.1 += 1;
            c.2 += z;
        } else {
            clusters.push((z, 1, z));
        }
    }
    clusters.into_iter().map(|(_, k, sum)| (sum / k as f64, k)).collect()
}

/// Popov–Belevitch–Hautus test: one report per distinct eigenvalue.
///
/// A mode is uncontrollable when some left eigenvector `v` satisfies
/// `‖vᴴB‖ ≤ tol · max(1, ‖B‖)`. Conjugate pairs share one verdict.
pub fn pbh_modes(p: &Plant, tol: f64) -> Vec<ModeReport> {
    let n = p.n();
    let a = &p.a;
    let scale = linalg::norm2(a);
    let at = linalg::to_complex(&a.transpose());
    let bc = linalg::to_complex(&p.b);
    let b_norm = linalg::norm2(&p.b).max(1.0);
    let eigs = linalg::eigenvalues(a);
    let clusters = cluster_eigenvalues(&eigs, scale);

    let mut reports: Vec<ModeReport> = Vec::new();
    for (lambda, alg) in clusters {
        let lambda = if lambda.im.abs() <= 1e-10 * scale.max(1.0) {
            Complex64::new(lambda.re, 0.0)
        } else {
            lambda
        };
        if lambda.im < 0.0 {
            continue;
        }
        // vᴴA = λvᴴ  ⇔  Aᵀv = λ̄v
        let mut shifted = at.clone();
        for i in 0..n {
            shifted[(i, i)] -= lambda.conj();
        }
        let null_tol = 1e-7 * scale.max(1.0);
        let mut basis = linalg::complex_null_space(&shifted, null_tol);
        if basis.is_empty() {
            let (_, v) = linalg::complex_smallest_singular(&shifted);
            basis.push(v);
        }
        let geo = basis.len();
        // vector in the eigenspace minimizing ‖vᴴB‖: smallest eigenpair of the
        // Gram matrix G = (VᴴB)(VᴴB)ᴴ
        let v_mat = DMatrix::from_columns(&basis);
        let vb = v_mat.adjoint() * &bc;
        let gram = &vb * vb.adjoint();
        let eig = gram.symmetric_eigen();
        let (idx, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|x, y| x.1.total_cmp(y.1))
            .expect("non-empty eigenspace");
        let u = eig.eigenvectors.column(idx).clone_owned();
        let mut v = &v_mat * u;
        let nrm = v.norm();
        v /= Complex64::new(nrm, 0.0);
        let coupling = (v.adjoint() * &bc).norm();
        let report = ModeReport {
            eigenvalue: lambda,
            left_eigenvector: v.clone(),
            controllable: coupling > tol * b_norm,
            input_coupling: coupling,
            algebraic_multiplicity: alg,
            geometric_multiplicity: geo.min(alg),
            defective: geo < alg,
        };
        if lambda.im != 0.0 {
            let mut conj = report.clone();
            conj.eigenvalue = lambda.conj();
            conj.left_eigenvector = v.map(|z| z.conj());
            reports.push(report);
            reports.push(conj);
        } else {
            reports.push(report);
        }
    }
    reports
}

pub fn uncontrollable_modes(p: &Plant, tol: f64) -> Vec<ModeReport> {
    pbh_modes(p, tol).into_iter().filter(|m| !m.controllable).collect()
}
