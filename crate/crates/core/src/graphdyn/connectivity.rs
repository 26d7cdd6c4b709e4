use std::collections::VecDeque;
use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use super::signal::GraphSignal;
use crate::csvfmt::num;
use crate::error::{Error, Result};
use crate::linalg;

/// δ-graph of the union over one window `[start, start + T]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowReport {
    pub window_start: f64,
    pub window_len: f64,
    pub union_weights: DMatrix<f64>,
    pub delta: f64,
    pub delta_graph_edges: Vec<(usize, usize)>,
    pub connected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConnectivityReport {
    pub delta: f64,
    pub window_len: f64,
    pub horizon: f64,
    pub stride: f64,
    pub windows: Vec<WindowReport>,
    /// Every scanned window is connected (and at least one was scanned).
    pub all_connected: bool,
}

impl ConnectivityReport {
    pub fn failing_windows(&self) -> impl Iterator<Item = &WindowReport> {
        self.windows.iter().filter(|w| !w.connected)
    }

    /// Writes `start, w_i_j…, connected` with one column per scheduled edge.
    pub fn write_csv<W: Write>(&self, g: &GraphSignal, out: W) -> Result<()> {
        let keys = g.edge_keys();
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["start".to_string()];
        header.extend(keys.iter().map(|(i, j)| format!("w_{i}_{j}")));
        header.push("connected".into());
        wtr.write_record(&header)?;
        for w in &self.windows {
            let mut row = vec![num(w.window_start)];
            row.extend(keys.iter().map(|&(i, j)| num(w.union_weights[(i, j)])));
            row.push(w.connected.to_string());
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Connectivity of an undirected edge list by breadth-first search.
pub fn is_connected(n: usize, edges: &[(usize, usize)]) -> bool {
    if n <= 1 {
        return true;
    }
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == n
}

/// δ-graph of one window.
pub fn window_report(g: &GraphSignal, delta: f64, start: f64, window_len: f64) -> Result<WindowReport> {
    let w = g.union_weights(start, start + window_len)?;
    let n = g.n_nodes();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if w[(i, j)] >= delta {
                edges.push((i, j));
            }
        }
    }
    let connected = is_connected(n, &edges);
    Ok(WindowReport {
        window_start: start,
        window_len,
        union_weights: w,
        delta,
        delta_graph_edges: edges,
        connected,
    })
}

/// Scans windows `[k·stride, k·stride + T]` with `k·stride + T ≤ horizon`.
pub fn check_joint_connectivity(
    g: &GraphSignal,
    delta: f64,
    window_len: f64,
    horizon: f64,
    stride: f64,
) -> Result<ConnectivityReport> {
    if !(delta > 0.0 && window_len > 0.0 && stride > 0.0) {
        return Err(Error::Precondition(format!(
            "delta, T and stride must be positive (got {delta}, {window_len}, {stride})"
        )));
    }
    if !(horizon >= window_len) || !horizon.is_finite() {
        return Err(Error::Precondition(format!(
            "horizon {horizon} must be finite and ≥ T = {window_len}"
        )));
    }
    let slack = 1e-12 * horizon.max(1.0);
    let mut windows = Vec::new();
    let mut k = 0usize;
    loop {
        let start = k as f64 * stride;
        if start + window_len > horizon + slack {
            break;
        }
        windows.push(window_report(g, delta, start, window_len)?);
        k += 1;
    }
    let all_connected = !windows.is_empty() && windows.iter().all(|w| w.connected);
    Ok(ConnectivityReport {
        delta,
        window_len,
        horizon,
        stride,
        windows,
        all_connected,
    })
}

/// Smallest candidate window length for which every window passes, scanning
/// `candidates` in ascending order with stride `stride_fraction · T`.
pub fn smallest_connected_window(
    g: &GraphSignal,
    delta: f64,
    candidates: &[f64],
    horizon: f64,
    stride_fraction: f64,
) -> Result<Option<f64>> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(f64::total_cmp);
    for t in sorted {
        if t > horizon {
            break;
        }
        if check_joint_connectivity(g, delta, t, horizon, stride_fraction * t)?.all_connected {
            return Ok(Some(t));
        }
    }
    Ok(None)
}

/// `e(S1,S2)/|S1| + e(S2,S1)/|S2|`, an upper bound on `λ₂(L)`.
pub fn lambda2_cut_bound(l: &DMatrix<f64>, s1: &[usize]) -> Result<f64> {
    let n = l.nrows();
    let mut in_s1 = vec![false; n];
    for &i in s1 {
        if i >= n {
            return Err(Error::Precondition(format!("node {i} outside 0..{n}")));
        }
        in_s1[i] = true;
    }
    let k = in_s1.iter().filter(|&&b| b).count();
    if k == 0 || k == n {
        return Err(Error::Precondition(
            "S1 must be a nonempty proper subset of the nodes".into(),
        ));
    }
    let mut cut = 0.0;
    for i in 0..n {
        for j in 0..n {
            if in_s1[i] && !in_s1[j] {
                cut -= l[(i, j)];
            }
        }
    }
    Ok(cut / k as f64 + cut / (n - k) as f64)
}

/// Second smallest eigenvalue of a Laplacian.
pub fn algebraic_connectivity(l: &DMatrix<f64>) -> f64 {
    linalg::sym_eigenvalues(l).get(1).copied().unwrap_or(0.0)
}
