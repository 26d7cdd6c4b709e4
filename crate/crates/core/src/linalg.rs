//! Dense linear-algebra helpers shared by the design, lti and sim modules.
//!
//! Everything here works on small dynamically sized `nalgebra` matrices; the
//! largest systems in practice are the `nN × nN` error-space matrices.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).norm()
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn sym_min_eig(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

pub fn sym_max_eig(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(0.0)
}

/// Spectral norm.
pub fn norm2(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Singular values, descending.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Numerical rank: singular values strictly above `rel_tol · σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = singular_values(m);
    match sv.first() {
        None => 0,
        Some(&0.0) => 0,
        Some(&smax) => sv.iter().filter(|&&s| s > rel_tol * smax).count(),
    }
}

/// Symmetric PSD square root (negative eigenvalues are clipped to zero).
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|v| Complex64::new(v, 0.0))
}

/// Orthonormal basis (columns) of the numerical null space of a complex
/// square matrix, using singular values at or below `abs_tol`.
pub fn complex_null_space(m: &DMatrix<Complex64>, abs_tol: f64) -> Vec<DVector<Complex64>> {
    let n = m.ncols();
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let mut out = Vec::new();
    for (idx, s) in svd.singular_values.iter().enumerate() {
        if *s <= abs_tol {
            let row = v_t.row(idx);
            out.push(DVector::from_iterator(n, row.iter().map(|z| z.conj())));
        }
    }
    out
}

/// Smallest singular value of a complex matrix together with its right
/// singular vector.
pub fn complex_smallest_singular(m: &DMatrix<Complex64>) -> (f64, DVector<Complex64>) {
    let n = m.ncols();
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let (idx, s) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty matrix");
    let row = v_t.row(idx);
    (*s, DVector::from_iterator(n, row.iter().map(|z| z.conj())))
}

/// Eigenvalues of a general real matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    m.complex_eigenvalues().iter().copied().collect()
}

/// Solves `Aᵀ X + X A = C` through the Kronecker-vectorized linear system.
pub fn solve_lyapunov(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    let op = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_column_slice(c.as_slice());
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NoSolution("Lyapunov operator is singular".into()))?;
    Ok(symmetrize(&DMatrix::from_column_slice(n, n, sol.as_slice())))
}

/// Real Schur form `M = Z T Zᵀ` whose leading `selected` columns of `Z`
/// span the invariant subspace of the eigenvalues accepted by `select`.
pub struct OrderedSchur {
    pub z: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub selected: usize,
}

fn block_sizes(t: &DMatrix<f64>) -> Vec<usize> {
    let n = t.nrows();
    let mut sizes = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)] != 0.0 {
            sizes.push(2);
            i += 2;
        } else {
            sizes.push(1);
            i += 1;
        }
    }
    sizes
}

fn block_eigen(t: &DMatrix<f64>, start: usize, size: usize) -> Complex64 {
    if size == 1 {
        return Complex64::new(t[(start, start)], 0.0);
    }
    let a = t[(start, start)];
    let b = t[(start, start + 1)];
    let c = t[(start + 1, start)];
    let d = t[(start + 1, start + 1)];
    let half_tr = 0.5 * (a + d);
    let disc = 0.25 * (a - d) * (a - d) + b * c;
    // Complex pair; either member classifies the block.
    Complex64::new(half_tr, (-disc).max(0.0).sqrt())
}

fn rotate(t: &mut DMatrix<f64>, z: &mut DMatrix<f64>, start: usize, q: &DMatrix<f64>) {
    let k = q.nrows();
    let n = t.nrows();
    let rows = t.view((start, 0), (k, n)).clone_owned();
    t.view_mut((start, 0), (k, n)).copy_from(&(q.transpose() * rows));
    let cols = t.view((0, start), (n, k)).clone_owned();
    t.view_mut((0, start), (n, k)).copy_from(&(cols * q));
    let zc = z.view((0, start), (n, k)).clone_owned();
    z.view_mut((0, start), (n, k)).copy_from(&(zc * q));
}

/// Splits 2×2 diagonal blocks that carry two real eigenvalues.
fn split_real_pairs(t: &mut DMatrix<f64>, z: &mut DMatrix<f64>) {
    let n = t.nrows();
    let mut i = 0;
    while i + 1 < n {
        if t[(i + 1, i)] == 0.0 {
            i += 1;
            continue;
        }
        let a = t[(i, i)];
        let b = t[(i, i + 1)];
        let c = t[(i + 1, i)];
        let d = t[(i + 1, i + 1)];
        let disc = 0.25 * (a - d) * (a - d) + b * c;
        if disc >= 0.0 {
            let lambda = 0.5 * (a + d) + disc.sqrt();
            // eigenvector of [[a,b],[c,d]] for lambda
            let (u0, u1) = if (lambda - a).abs() + b.abs() > (lambda - d).abs() + c.abs() {
                (b, lambda - a)
            } else {
                (lambda - d, c)
            };
            let nrm = (u0 * u0 + u1 * u1).sqrt();
            if nrm > 0.0 {
                let (cs, sn) = (u0 / nrm, u1 / nrm);
                let g = DMatrix::from_row_slice(2, 2, &[cs, -sn, sn, cs]);
                rotate(t, z, i, &g);
                t[(i + 1, i)] = 0.0;
            }
            i += 1;
        } else {
            i += 2;
        }
    }
}

/// Swaps the adjacent diagonal blocks starting at `start` (sizes `p`, `q`).
fn swap_blocks(t: &mut DMatrix<f64>, z: &mut DMatrix<f64>, start: usize, p: usize, q: usize) -> Result<()> {
    let a11 = t.view((start, start), (p, p)).clone_owned();
    let a22 = t.view((start + p, start + p), (q, q)).clone_owned();
    let a12 = t.view((start, start + p), (p, q)).clone_owned();
    // A11 X − X A22 = −A12
    let op =
        DMatrix::<f64>::identity(q, q).kronecker(&a11) - a22.transpose().kronecker(&DMatrix::<f64>::identity(p, p));
    let rhs = -DVector::from_column_slice(a12.as_slice());
    let xv = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NoSolution("Schur reordering hit coincident eigenvalues".into()))?;
    let x = DMatrix::from_column_slice(p, q, xv.as_slice());
    let k = p + q;
    let mut basis = DMatrix::<f64>::zeros(k, k);
    basis.view_mut((0, 0), (p, q)).copy_from(&x);
    basis.view_mut((p, 0), (q, q)).fill_with_identity();
    basis.view_mut((0, q), (p, p)).fill_with_identity();
    let qmat = basis.qr().q();
    rotate(t, z, start, &qmat);
    // The (p × q) block below the new leading block is zero in exact arithmetic.
    for r in (start + q)..(start + k) {
        for c in start..(start + q) {
            t[(r, c)] = 0.0;
        }
    }
    Ok(())
}

/// Real Schur decomposition with the eigenvalues accepted by `select` moved
/// to the leading diagonal blocks.
pub fn ordered_schur(m: &DMatrix<f64>, select: impl Fn(Complex64) -> bool) -> Result<OrderedSchur> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let n = m.nrows();
    let (mut z, mut t) = Schur::new(m.clone()).unpack();
    let scale = t.norm().max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in 0..i {
            if j + 1 < i || t[(i, j)].abs() <= 1e-15 * scale {
                t[(i, j)] = 0.0;
            }
        }
    }
    split_real_pairs(&mut t, &mut z);

    let mut sizes = block_sizes(&t);
    let mut target_block = 0;
    let mut b = 0;
    while b < sizes.len() {
        let start: usize = sizes[..b].iter().sum();
        if select(block_eigen(&t, start, sizes[b])) {
            let mut cur = b;
            while cur > target_block {
                let prev_start: usize = sizes[..cur - 1].iter().sum();
                let (p, q) = (sizes[cur - 1], sizes[cur]);
                swap_blocks(&mut t, &mut z, prev_start, p, q)?;
                sizes.swap(cur - 1, cur);
                cur -= 1;
            }
            target_block += 1;
        }
        b += 1;
    }
    let selected = sizes[..target_block].iter().sum();
    Ok(OrderedSchur { z, t, selected })
}
