//! Number formatting shared by the CSV writers.

/// Shortest decimal that parses back to `v`; scientific notation outside
/// `[1e-5, 1e16)` so tiny and huge values stay short.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || !v.is_finite() || (1e-5..1e16).contains(&a) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}
