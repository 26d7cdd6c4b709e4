use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed-form weight profile of one segment.
///
/// `Affine` is parameterized by the segment-local time `t − t_start`;
/// `Sinusoid` by the schedule-local time (`t mod period` for periodic
/// schedules, plain `t` otherwise).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Constant {
        value: f64,
    },
    Affine {
        value_at_start: f64,
        slope: f64,
    },
    Sinusoid {
        offset: f64,
        amplitude: f64,
        angular_frequency: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl Profile {
    fn params(&self) -> [f64; 4] {
        match *self {
            Profile::Constant { value } => [value, 0.0, 0.0, 0.0],
            Profile::Affine { value_at_start, slope } => [value_at_start, slope, 0.0, 0.0],
            Profile::Sinusoid {
                offset,
                amplitude,
                angular_frequency,
                phase,
            } => [offset, amplitude, angular_frequency, phase],
        }
    }

    /// Largest `|dw/dt|` over the segment.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            Profile::Constant { .. } => 0.0,
            Profile::Affine { slope, .. } => slope.abs(),
            Profile::Sinusoid {
                amplitude,
                angular_frequency,
                ..
            } => (amplitude * angular_frequency).abs(),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.lipschitz() == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSegment {
    #[serde(rename = "t0")]
    pub t_start: f64,
    /// Exclusive end; `None` means the segment runs forever.
    #[serde(rename = "t1")]
    pub t_end: Option<f64>,
    pub profile: Profile,
}

impl WeightSegment {
    pub fn new(t_start: f64, t_end: Option<f64>, profile: Profile) -> Self {
        Self {
            t_start,
            t_end,
            profile,
        }
    }

    pub fn end(&self) -> f64 {
        self.t_end.unwrap_or(f64::INFINITY)
    }

    /// Value at schedule-local time `t` (assumed inside the segment).
    fn value(&self, t: f64) -> f64 {
        match self.profile {
            Profile::Constant { value } => value,
            Profile::Affine { value_at_start, slope } => value_at_start + slope * (t - self.t_start),
            Profile::Sinusoid {
                offset,
                amplitude,
                angular_frequency,
                phase,
            } => offset + amplitude * (angular_frequency * t + phase).sin(),
        }
    }

    /// `∫_{t_start}^{t} w` for `t` inside the segment.
    fn integral_to(&self, t: f64) -> f64 {
        let h = t - self.t_start;
        match self.profile {
            Profile::Constant { value } => value * h,
            Profile::Affine { value_at_start, slope } => value_at_start * h + 0.5 * slope * h * h,
            Profile::Sinusoid {
                offset,
                amplitude,
                angular_frequency: w,
                phase,
            } => {
                if w == 0.0 {
                    (offset + amplitude * phase.sin()) * h
                } else {
                    offset * h - amplitude / w * ((w * t + phase).cos() - (w * self.t_start + phase).cos())
                }
            }
        }
    }

    /// Value right before `t_end` (finite segments only).
    fn value_at_end(&self) -> f64 {
        self.value(self.end())
    }

    /// Lower and upper bound of the profile over the segment.
    fn range(&self) -> (f64, f64) {
        match self.profile {
            Profile::Constant { value } => (value, value),
            Profile::Affine { value_at_start, slope } => {
                if slope == 0.0 {
                    (value_at_start, value_at_start)
                } else {
                    let end = self.value_at_end();
                    (value_at_start.min(end), value_at_start.max(end))
                }
            }
            Profile::Sinusoid {
                offset,
                amplitude,
                angular_frequency,
                phase,
            } => {
                if angular_frequency == 0.0 || amplitude == 0.0 {
                    let v = offset + amplitude * phase.sin();
                    (v, v)
                } else {
                    (offset - amplitude.abs(), offset + amplitude.abs())
                }
            }
        }
    }
}

/// A bounded, nonnegative edge weight `w_ij(t)` built from contiguous segments.
///
/// With `period = Some(p)` the segments cover `[0, p)` and repeat forever.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule", into = "RawSchedule")]
pub struct WeightSchedule {
    segments: Vec<WeightSegment>,
    w_star: f64,
    period: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RawSchedule {
    segments: Vec<WeightSegment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    w_star: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    period: Option<f64>,
}

impl TryFrom<RawSchedule> for WeightSchedule {
    type Error = Error;

    fn try_from(raw: RawSchedule) -> Result<Self> {
        match raw.w_star {
            Some(w) => WeightSchedule::new(raw.segments, w, raw.period),
            None => WeightSchedule::with_inferred_bound(raw.segments, raw.period),
        }
    }
}

impl From<WeightSchedule> for RawSchedule {
    fn from(s: WeightSchedule) -> Self {
        RawSchedule {
            segments: s.segments,
            w_star: Some(s.w_star),
            period: s.period,
        }
    }
}

const BOUND_SLACK: f64 = 1e-12;

impl WeightSchedule {
    pub fn new(segments: Vec<WeightSegment>, w_star: f64, period: Option<f64>) -> Result<Self> {
        if !(w_star.is_finite() && w_star >= 0.0) {
            return Err(Error::InvalidSchedule(format!(
                "w_star must be finite and ≥ 0, got {w_star}"
            )));
        }
        let s = Self {
            segments,
            w_star,
            period,
        };
        s.validate()?;
        Ok(s)
    }

    /// Builds a schedule whose `w*` is the largest value the segments reach.
    pub fn with_inferred_bound(segments: Vec<WeightSegment>, period: Option<f64>) -> Result<Self> {
        let w_star = segments
            .iter()
            .filter(|s| s.t_start < s.end())
            .map(|s| s.range().1)
            .fold(0.0, f64::max);
        Self::new(segments, w_star, period)
    }

    /// `value` on `[0, ∞)`.
    pub fn constant(value: f64) -> Result<Self> {
        Self::with_inferred_bound(vec![WeightSegment::new(0.0, None, Profile::Constant { value })], None)
    }

    /// Repeats `values[k]` on `[k·dwell, (k+1)·dwell)` with period `values.len()·dwell`.
    pub fn periodic_piecewise_constant(values: &[f64], dwell: f64) -> Result<Self> {
        let segments = values
            .iter()
            .enumerate()
            .map(|(k, &value)| {
                WeightSegment::new(
                    k as f64 * dwell,
                    Some((k + 1) as f64 * dwell),
                    Profile::Constant { value },
                )
            })
            .collect();
        Self::with_inferred_bound(segments, Some(values.len() as f64 * dwell))
    }

    fn validate(&self) -> Result<()> {
        let segs = &self.segments;
        if segs.is_empty() {
            return Err(Error::InvalidSchedule("no segments".into()));
        }
        if segs[0].t_start != 0.0 {
            return Err(Error::InvalidSchedule(format!(
                "first segment starts at t = {} instead of 0",
                segs[0].t_start
            )));
        }
        for (k, s) in segs.iter().enumerate() {
            if s.profile.params().iter().any(|v| !v.is_finite()) || !s.t_start.is_finite() {
                return Err(Error::InvalidSchedule(format!("segment {k} has non-finite parameters")));
            }
            if let Some(e) = s.t_end {
                if !e.is_finite() {
                    return Err(Error::InvalidSchedule(format!(
                        "segment {k} end must be finite or null"
                    )));
                }
            }
            if !(s.t_start < s.end()) {
                return Err(Error::InvalidSchedule(format!(
                    "segment {k} is empty: [{}, {})",
                    s.t_start,
                    s.end()
                )));
            }
            if k + 1 < segs.len() {
                match s.t_end {
                    None => {
                        return Err(Error::InvalidSchedule(format!(
                            "segment {k} is unbounded but is not the last segment"
                        )))
                    }
                    Some(e) if e != segs[k + 1].t_start => {
                        let what = if e < segs[k + 1].t_start { "gap" } else { "overlap" };
                        return Err(Error::InvalidSchedule(format!(
                            "{what} between segments at t = {e} (next segment starts at {})",
                            segs[k + 1].t_start
                        )));
                    }
                    _ => {}
                }
            }
            if s.t_end.is_none() {
                if let Profile::Affine { slope, .. } = s.profile {
                    if slope != 0.0 {
                        return Err(Error::InvalidSchedule(format!(
                            "segment {k}: unbounded affine segment leaves [0, w*]"
                        )));
                    }
                }
            }
            let (lo, hi) = s.range();
            if lo < -BOUND_SLACK {
                return Err(Error::InvalidSchedule(format!(
                    "segment {k} starting at t = {} reaches negative weight {lo}",
                    s.t_start
                )));
            }
            if hi > self.w_star * (1.0 + BOUND_SLACK) + BOUND_SLACK {
                return Err(Error::InvalidSchedule(format!(
                    "segment {k} starting at t = {} reaches {hi} > w* = {}",
                    s.t_start, self.w_star
                )));
            }
        }
        if let Some(p) = self.period {
            let last_end = segs.last().and_then(|s| s.t_end);
            if !(p.is_finite() && p > 0.0) || last_end != Some(p) {
                return Err(Error::InvalidSchedule(format!(
                    "period {p} must be positive and equal the end of the last segment ({:?})",
                    last_end
                )));
            }
        }
        Ok(())
    }

    pub fn segments(&self) -> &[WeightSegment] {
        &self.segments
    }

    pub fn w_star(&self) -> f64 {
        self.w_star
    }

    pub fn period(&self) -> Option<f64> {
        self.period
    }

    /// End of the domain: `∞` for periodic schedules and unbounded last segments.
    pub fn domain_end(&self) -> f64 {
        if self.period.is_some() {
            f64::INFINITY
        } else {
            self.segments.last().map_or(0.0, WeightSegment::end)
        }
    }

    /// A single constant unbounded segment.
    pub fn is_stationary(&self) -> bool {
        self.period.is_none() && self.segments.len() == 1 && self.segments[0].profile.is_constant()
    }

    pub fn is_piecewise_constant(&self) -> bool {
        self.segments.iter().all(|s| s.profile.is_constant())
    }

    fn check_domain(&self, t: f64) -> Result<()> {
        let end = self.domain_end();
        if !(t >= 0.0 && t < end) {
            return Err(Error::OutOfDomain { t, end });
        }
        Ok(())
    }

    /// Maps `t` to `(number of completed periods, local time)`.
    fn localize(&self, t: f64) -> (f64, f64) {
        match self.period {
            Some(p) => {
                let k = (t / p).floor();
                let local = t - k * p;
                // guard against rounding landing exactly on p
                if local >= p {
                    (k + 1.0, local - p)
                } else {
                    (k, local.max(0.0))
                }
            }
            None => (0.0, t),
        }
    }

    fn segment_index(&self, local: f64) -> usize {
        // last segment with t_start ≤ local
        self.segments.partition_point(|s| s.t_start <= local).saturating_sub(1)
    }

    /// Right-continuous point evaluation.
    pub fn weight_at(&self, t: f64) -> Result<f64> {
        self.check_domain(t)?;
        let (_, local) = self.localize(t);
        let seg = &self.segments[self.segment_index(local)];
        Ok(seg.value(local).max(0.0))
    }

    /// Segment active at `t` (right-continuous).
    pub fn segment_at(&self, t: f64) -> Result<&WeightSegment> {
        self.check_domain(t)?;
        let (_, local) = self.localize(t);
        Ok(&self.segments[self.segment_index(local)])
    }

    fn local_antiderivative(&self, local: f64) -> f64 {
        let idx = self.segment_index(local);
        let mut acc = 0.0;
        for s in &self.segments[..idx] {
            acc += s.integral_to(s.end());
        }
        acc + self.segments[idx].integral_to(local)
    }

    /// `∫_0^t w`.
    fn antiderivative(&self, t: f64) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        let (k, local) = self.localize(t);
        match self.period {
            Some(_) if k > 0.0 => k * self.period_integral() + self.local_antiderivative(local),
            _ => self.local_antiderivative(local),
        }
    }

    fn period_integral(&self) -> f64 {
        self.segments.iter().map(|s| s.integral_to(s.end())).sum()
    }

    /// Exact `∫_{t0}^{t1} w(τ) dτ`.
    pub fn integral(&self, t0: f64, t1: f64) -> Result<f64> {
        if !(t0 >= 0.0 && t1 >= t0) {
            return Err(Error::Precondition(format!(
                "integration window [{t0}, {t1}] is invalid"
            )));
        }
        let end = self.domain_end();
        if t1 > end {
            return Err(Error::OutOfDomain { t: t1, end });
        }
        Ok(self.antiderivative(t1) - self.antiderivative(t0))
    }

    /// Segment boundaries strictly inside `(t0, t1)`, ascending.
    pub fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let starts: Vec<f64> = self.segments.iter().skip(1).map(|s| s.t_start).collect();
        match self.period {
            Some(p) => {
                let mut k = (t0 / p).floor().max(0.0);
                loop {
                    let base = k * p;
                    if base >= t1 {
                        break;
                    }
                    if base > t0 {
                        out.push(base);
                    }
                    for &s in &starts {
                        let b = base + s;
                        if b > t0 && b < t1 {
                            out.push(b);
                        }
                    }
                    k += 1.0;
                }
            }
            None => out.extend(starts.into_iter().filter(|&b| b > t0 && b < t1)),
        }
        out
    }

    /// Explicit pieces `(start, end, profile)` covering `[0, horizon)`.
    pub(crate) fn pieces(&self, horizon: f64) -> Vec<(f64, f64, WeightSegment)> {
        let mut out = Vec::new();
        match self.period {
            Some(p) => {
                let mut k = 0.0;
                while k * p < horizon {
                    for s in &self.segments {
                        let a = k * p + s.t_start;
                        if a >= horizon {
                            break;
                        }
                        out.push((a, (k * p + s.end()).min(horizon), *s));
                    }
                    k += 1.0;
                }
            }
            None => {
                for s in &self.segments {
                    if s.t_start >= horizon {
                        break;
                    }
                    out.push((s.t_start, s.end().min(horizon), *s));
                }
            }
        }
        out
    }

    /// Left and right limits at a piece boundary, in schedule-local time.
    pub(crate) fn jump_between(prev: &WeightSegment, next: &WeightSegment) -> f64 {
        (next.value(next.t_start) - prev.value_at_end()).abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example1_edge01() -> WeightSchedule {
        WeightSchedule::periodic_piecewise_constant(&[0.1, 0.0], 1.0).unwrap()
    }

    #[test]
    fn constant_profile_evaluates_anywhere() {
        let s = WeightSchedule::constant(0.1).unwrap();
        assert_eq!(s.weight_at(5.0).unwrap(), 0.1);
        assert_eq!(s.weight_at(1e6).unwrap(), 0.1);
    }

    #[test]
    fn periodic_switching_schedule() {
        let s = example1_edge01();
        assert_eq!(s.weight_at(0.5).unwrap(), 0.1);
        assert_eq!(s.weight_at(1.5).unwrap(), 0.0);
        assert_eq!(s.weight_at(1.0).unwrap(), 0.0);
        assert_eq!(s.weight_at(2.0).unwrap(), 0.1);
        assert_eq!(s.weight_at(101.25).unwrap(), 0.0);
    }

    #[test]
    fn affine_profile_interpolates() {
        let s = WeightSchedule::new(
            vec![
                WeightSegment::new(
                    0.0,
                    Some(1.0),
                    Profile::Affine {
                        value_at_start: 0.2,
                        slope: -0.1,
                    },
                ),
                WeightSegment::new(1.0, None, Profile::Constant { value: 0.1 }),
            ],
            0.2,
            None,
        )
        .unwrap();
        assert!((s.weight_at(0.5).unwrap() - 0.15).abs() < 1e-15);
        assert!((s.integral(0.0, 1.0).unwrap() - 0.15).abs() < 1e-15);
    }

    #[test]
    fn out_of_domain_is_reported() {
        let s = WeightSchedule::new(
            vec![WeightSegment::new(0.0, Some(3.0), Profile::Constant { value: 1.0 })],
            1.0,
            None,
        )
        .unwrap();
        assert!(matches!(s.weight_at(3.0), Err(Error::OutOfDomain { .. })));
        assert!(matches!(s.weight_at(-1.0), Err(Error::OutOfDomain { .. })));
        assert!(s.integral(0.0, 4.0).is_err());
    }

    #[test]
    fn rectangle_area() {
        let s = WeightSchedule::constant(0.1).unwrap();
        assert!((s.integral(1.0, 3.0).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn periodic_integral_counts_whole_periods() {
        let s = example1_edge01();
        assert!((s.integral(0.0, 2.0).unwrap() - 0.1).abs() < 1e-15);
        assert!((s.integral(0.5, 10.25).unwrap() - (0.05 + 0.4 + 0.025)).abs() < 1e-12);
    }

    #[test]
    fn sinusoid_integral_matches_quadrature() {
        let s = WeightSchedule::new(
            vec![WeightSegment::new(
                0.0,
                None,
                Profile::Sinusoid {
                    offset: 0.05,
                    amplitude: 0.05,
                    angular_frequency: 1.0,
                    phase: 0.0,
                },
            )],
            0.1,
            None,
        )
        .unwrap();
        let (a, b) = (0.3, 4.1);
        let n = 20000;
        let h = (b - a) / n as f64;
        let mut sum = 0.0;
        for k in 0..=n {
            let w = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            sum += w * s.weight_at(a + k as f64 * h).unwrap();
        }
        sum *= h / 3.0;
        assert!((s.integral(a, b).unwrap() - sum).abs() < 1e-12);
    }

    #[test]
    fn contiguity_and_bounds_are_validated() {
        let gap = vec![
            WeightSegment::new(0.0, Some(1.0), Profile::Constant { value: 1.0 }),
            WeightSegment::new(1.5, None, Profile::Constant { value: 1.0 }),
        ];
        let err = WeightSchedule::new(gap, 1.0, None).unwrap_err().to_string();
        assert!(err.contains("gap") && err.contains("t = 1"), "{err}");
        let too_big = vec![WeightSegment::new(0.0, None, Profile::Constant { value: 2.0 })];
        assert!(WeightSchedule::new(too_big, 1.0, None).is_err());
        let negative = vec![WeightSegment::new(0.0, None, Profile::Constant { value: -0.1 })];
        assert!(WeightSchedule::with_inferred_bound(negative, None).is_err());
        let late = vec![WeightSegment::new(0.5, None, Profile::Constant { value: 0.1 })];
        assert!(WeightSchedule::with_inferred_bound(late, None).is_err());
        let bad_period = vec![WeightSegment::new(0.0, Some(1.0), Profile::Constant { value: 0.1 })];
        assert!(WeightSchedule::with_inferred_bound(bad_period, Some(2.0)).is_err());
    }

    #[test]
    fn breakpoints_unroll_periods() {
        let s = example1_edge01();
        assert_eq!(s.breakpoints(0.0, 4.0), vec![1.0, 2.0, 3.0]);
        assert_eq!(s.breakpoints(0.5, 2.5), vec![1.0, 2.0]);
    }

    #[test]
    fn serde_round_trip() {
        let s = example1_edge01();
        let json = serde_json::to_string(&s).unwrap();
        let back: WeightSchedule = serde_json::from_str(&json).unwrap();
        assert_eq!(s, back);
    }
}
