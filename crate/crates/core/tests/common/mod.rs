//! Helpers shared by the integration tests.
#![allow(dead_code)]

use consensus_core::graphdyn::{Profile, WeightSchedule, WeightSegment};
use consensus_core::linalg;
use consensus_core::lti::{self, Plant};
use nalgebra::{DMatrix, DVector};

/// Piecewise-constant schedule with the given values and durations, held at
/// the last value afterwards.
pub fn pwc(values: &[f64], durations: &[f64]) -> WeightSchedule {
    let mut segs = Vec::new();
    let mut t = 0.0;
    for (k, &v) in values.iter().enumerate() {
        let end = if k + 1 == values.len() {
            None
        } else {
            Some(t + durations[k])
        };
        segs.push(WeightSegment::new(t, end, Profile::Constant { value: v }));
        if let Some(e) = end {
            t = e;
        }
    }
    WeightSchedule::with_inferred_bound(segs, None).unwrap()
}

pub fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Rescales each input column to unit length, so the input strength does
/// not shrink with the random draw.
pub fn unit_columns(mut b: DMatrix<f64>) -> DMatrix<f64> {
    for mut c in b.column_iter_mut() {
        let n = c.norm();
        if n > 0.0 {
            c /= n;
        }
    }
    b
}

/// Controllability matrix is far from rank deficient, so `P` stays moderate.
pub fn well_controllable(p: &Plant) -> bool {
    let sv = linalg::singular_values(&lti::controllability_matrix(p));
    sv[p.n() - 1] >= 0.05 * sv[0]
}

/// Two-agent scalar closed form of `F₁…F₄`, integrated by a left Riemann sum.
/// `L̂(τ)` has the fixed eigenvectors `[1, 1]` (eigenvalue 1) and `[1, −1]`
/// (eigenvalue `2w(τ)`), so `Φ` is diagonal in that basis.
pub fn riemann_grams(a: f64, b: f64, p: f64, w: &WeightSchedule, t: f64, window: f64, h: f64) -> [DMatrix<f64>; 4] {
    let k = b * p;
    let steps = (window / h).round() as usize;
    let h = window / steps as f64;
    let (mut log_agree, mut log_dis) = (0.0f64, 0.0f64);
    let mut acc = [[0.0f64; 2]; 4];
    for s in 0..steps {
        let tau = t + s as f64 * h;
        let wt = w.weight_at(tau).unwrap();
        let (d1, d2) = (log_agree.exp(), log_dis.exp());
        let g = [
            [2.0 * a * p, 2.0 * a * p],
            [p * b * k, 2.0 * wt * p * b * k],
            [p, p],
            [p * b * p * b, p * b * p * b],
        ];
        for i in 0..4 {
            acc[i][0] += h * d1 * d1 * g[i][0];
            acc[i][1] += h * d2 * d2 * g[i][1];
        }
        log_agree += h * (a - b * k);
        log_dis += h * (a - 2.0 * wt * b * k);
    }
    let u = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, -1.0]) / 2f64.sqrt();
    acc.map(|d| &u * DMatrix::from_diagonal(&DVector::from_vec(d.to_vec())) * u.transpose())
}
