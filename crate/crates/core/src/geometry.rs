//! Gap structure of compact sets, perturbation schedules, and the
//! gap-counting bounds that drive the decay estimates.
//!
//! A compact set enters the crate as its convex hull together with the
//! bounded connected components of its complement (the "gaps"). Everything
//! downstream — the random map, the counting function, the feasibility fit —
//! is expressed in terms of that gap list.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::least_squares;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("delta_of requires t > 0, got {0}")]
    NonPositiveT(f64),
    #[error("alpha must lie in [0, 1], got {0}")]
    AlphaOutOfRange(f64),
    #[error("smoothness order m must be at least 1, got {0}")]
    OrderTooSmall(u32),
    #[error("invalid gap set: {0}")]
    InvalidGapSet(String),
    #[error("malformed gap table at line {line}: {reason}")]
    MalformedTable { line: usize, reason: String },
}

/// A closed interval for queries, an open interval when used as a gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// Closed containment: the closure of `other` lies in `self`.
    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn contains_point(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_point_strict(&self, x: f64) -> bool {
        self.lo < x && x < self.hi
    }
}

/// One bounded complement component, optionally tagged with the
/// construction level at which it appeared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub span: Interval,
    pub generation: Option<u32>,
}

impl Gap {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self {
            span: Interval::new(lo, hi),
            generation: None,
        }
    }

    pub fn with_generation(lo: f64, hi: f64, generation: u32) -> Self {
        Self {
            span: Interval::new(lo, hi),
            generation: Some(generation),
        }
    }

    pub fn len(&self) -> f64 {
        self.span.len()
    }
}

/// The hull of a compact set plus the sorted gaps of its complement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSet {
    hull: Interval,
    gaps: Vec<Gap>,
}

impl GapSet {
    /// Builds a gap set, sorting the gaps by left endpoint and validating
    /// that they are disjoint, of positive length and strictly inside the
    /// hull.
    pub fn new(hull: Interval, mut gaps: Vec<Gap>) -> Result<Self, GeometryError> {
        if hull.is_empty() {
            return Err(GeometryError::InvalidGapSet(format!(
                "hull [{}, {}] is empty",
                hull.lo, hull.hi
            )));
        }
        gaps.sort_by(|a, b| a.span.lo.total_cmp(&b.span.lo));
        for (i, g) in gaps.iter().enumerate() {
            if g.len() <= 0.0 {
                return Err(GeometryError::InvalidGapSet(format!(
                    "gap {i} has non-positive length ({}, {})",
                    g.span.lo, g.span.hi
                )));
            }
            if g.span.lo < hull.lo || g.span.hi > hull.hi {
                return Err(GeometryError::InvalidGapSet(format!(
                    "gap {i} ({}, {}) is not inside the hull",
                    g.span.lo, g.span.hi
                )));
            }
            if i > 0 && gaps[i - 1].span.hi > g.span.lo {
                return Err(GeometryError::InvalidGapSet(format!(
                    "gaps {} and {} overlap",
                    i - 1,
                    i
                )));
            }
        }
        Ok(Self { hull, gaps })
    }

    pub fn hull(&self) -> Interval {
        self.hull
    }

    pub fn gaps(&self) -> &[Gap] {
        &self.gaps
    }

    pub fn len(&self) -> usize {
        self.gaps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaps.is_empty()
    }

    /// Index of the gap whose open interior contains `x`, if any.
    pub fn gap_containing(&self, x: f64) -> Option<usize> {
        let idx = self.gaps.partition_point(|g| g.span.hi <= x);
        (idx < self.gaps.len() && self.gaps[idx].span.contains_point_strict(x)).then_some(idx)
    }

    /// Number of gaps lying entirely to the left of `x` (closure included).
    pub fn gaps_left_of(&self, x: f64) -> usize {
        self.gaps.partition_point(|g| g.span.hi <= x)
    }

    /// Endpoints of the construction: hull endpoints plus all gap endpoints,
    /// sorted. These are points of the underlying compact set.
    pub fn endpoints(&self) -> Vec<f64> {
        let mut pts = Vec::with_capacity(2 * self.gaps.len() + 2);
        pts.push(self.hull.lo);
        for g in &self.gaps {
            pts.push(g.span.lo);
            pts.push(g.span.hi);
        }
        pts.push(self.hull.hi);
        pts.sort_by(f64::total_cmp);
        pts
    }

    /// Plain-text table: comment lines with the hull, then one gap per line
    /// as `lo,hi,generation`.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# hull {} {}\n", self.hull.lo, self.hull.hi));
        out.push_str("lo,hi,generation\n");
        for g in &self.gaps {
            match g.generation {
                Some(k) => out.push_str(&format!("{},{},{}\n", g.span.lo, g.span.hi, k)),
                None => out.push_str(&format!("{},{},\n", g.span.lo, g.span.hi)),
            }
        }
        out
    }

    pub fn from_table(text: &str) -> Result<Self, GeometryError> {
        let mut hull: Option<Interval> = None;
        let mut gaps = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let fields: Vec<&str> = rest.split_whitespace().collect();
                if fields.len() == 3 && fields[0] == "hull" {
                    let lo = parse_f64(fields[1], lineno)?;
                    let hi = parse_f64(fields[2], lineno)?;
                    hull = Some(Interval::new(lo, hi));
                }
                continue;
            }
            if line == "lo,hi,generation" {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() < 2 || fields.len() > 3 {
                return Err(GeometryError::MalformedTable {
                    line: lineno + 1,
                    reason: format!("expected 2 or 3 fields, got {}", fields.len()),
                });
            }
            let lo = parse_f64(fields[0], lineno)?;
            let hi = parse_f64(fields[1], lineno)?;
            let generation = match fields.get(2).map(|s| s.trim()) {
                None | Some("") => None,
                Some(s) => Some(s.parse::<u32>().map_err(|e| GeometryError::MalformedTable {
                    line: lineno + 1,
                    reason: format!("bad generation {s:?}: {e}"),
                })?),
            };
            gaps.push(Gap {
                span: Interval::new(lo, hi),
                generation,
            });
        }
        let hull = hull.unwrap_or_else(|| {
            // Without an explicit hull line, use the span of the gaps.
            let lo = gaps.iter().map(|g| g.span.lo).fold(f64::INFINITY, f64::min);
            let hi = gaps
                .iter()
                .map(|g| g.span.hi)
                .fold(f64::NEG_INFINITY, f64::max);
            Interval::new(lo, hi)
        });
        Self::new(hull, gaps)
    }
}

fn parse_f64(s: &str, lineno: usize) -> Result<f64, GeometryError> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| GeometryError::MalformedTable {
            line: lineno + 1,
            reason: format!("bad number {s:?}: {e}"),
        })
}

/// The width budget delta(t): `1 / max(-log t, log 2)` for alpha = 0 and
/// `t^alpha` for alpha in (0, 1]. Strictly positive; `delta(t)/t` is
/// non-increasing for alpha > 0, and for alpha = 0 on (0, 1/e], which
/// covers every gap length arising here.
pub fn delta_of(t: f64, alpha: f64) -> Result<f64, GeometryError> {
    if !(t > 0.0) {
        return Err(GeometryError::NonPositiveT(t));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(GeometryError::AlphaOutOfRange(alpha));
    }
    if alpha == 0.0 {
        Ok(1.0 / (-t.ln()).max(2f64.ln()))
    } else {
        Ok(t.powf(alpha))
    }
}

/// Per-gap maximal perturbation widths `|U|^m * delta(|U|)` for a fixed
/// smoothness class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSchedule {
    pub m: u32,
    pub alpha: f64,
    delta_per_gap: Vec<f64>,
    delta_sum: f64,
}

impl PerturbationSchedule {
    pub fn delta_per_gap(&self) -> &[f64] {
        &self.delta_per_gap
    }

    /// Total width budget over all gaps; also a uniform bound on how far
    /// the sampled map can move any point.
    pub fn delta_sum(&self) -> f64 {
        self.delta_sum
    }

    pub fn delta_of(&self, t: f64) -> Result<f64, GeometryError> {
        delta_of(t, self.alpha)
    }
}

pub fn build_schedule(
    gaps: &GapSet,
    m: u32,
    alpha: f64,
) -> Result<PerturbationSchedule, GeometryError> {
    if m < 1 {
        return Err(GeometryError::OrderTooSmall(m));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(GeometryError::AlphaOutOfRange(alpha));
    }
    let delta_per_gap: Vec<f64> = gaps
        .gaps()
        .iter()
        .map(|g| {
            let t = g.len();
            Ok(t.powi(m as i32) * delta_of(t, alpha)?)
        })
        .collect::<Result<_, GeometryError>>()?;
    let delta_sum = delta_per_gap.iter().sum();
    Ok(PerturbationSchedule {
        m,
        alpha,
        delta_per_gap,
        delta_sum,
    })
}

/// Count of gaps U with closure contained in J and schedule width
/// `delta_U >= 1/x`.
pub fn psi(gaps: &GapSet, schedule: &PerturbationSchedule, j: &Interval, x: f64) -> usize {
    assert!(x > 0.0, "psi requires x > 0");
    let threshold = 1.0 / x;
    gaps.gaps()
        .iter()
        .zip(schedule.delta_per_gap())
        .filter(|(g, &d)| j.contains_interval(&g.span) && d >= threshold)
        .count()
}

/// Count of gaps U with closure contained in J and length `|U| >= 1/x`.
pub fn raw_gap_count(gaps: &GapSet, j: &Interval, x: f64) -> usize {
    assert!(x > 0.0, "raw_gap_count requires x > 0");
    let threshold = 1.0 / x;
    gaps.gaps()
        .iter()
        .filter(|g| j.contains_interval(&g.span) && g.len() >= threshold)
        .count()
}

/// Threshold mode for [`verify_count_bound`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CountMode {
    /// Count with the schedule widths delta_U.
    Schedule,
    /// Count with raw gap lengths.
    RawLength,
}

/// One evaluated grid pair.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridPoint {
    pub j_index: usize,
    pub x_index: usize,
    /// `log lambda(J) + s * theta(x) * log x`
    pub t: f64,
    pub count: usize,
}

/// Result of the two-constant feasibility fit for the counting inequality
/// `count >= a + b * (log lambda(J) + s log x)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CountBoundFit {
    pub a: f64,
    pub b: f64,
    /// Least-squares slope of count against t, for reference.
    pub ls_slope: f64,
    pub degenerate: bool,
    /// Grid pairs attaining the minimum slack of the certified line.
    pub tight: Vec<(usize, usize)>,
    /// Grid pairs skipped because lambda(J) = 0.
    pub skipped: Vec<(usize, usize)>,
    /// Grid pairs violating the certified line (empty unless degenerate
    /// data forces b <= 0).
    pub violations: Vec<(usize, usize)>,
    pub points: Vec<GridPoint>,
}

/// Fits the largest certifiable slope b (with free offset a) such that the
/// counting inequality holds at every grid pair.
///
/// Since a is free, any slope admits some offset; the reported b is the
/// largest slope at which the supporting line still touches the data in at
/// least two points, i.e. the slope of the rightmost edge of the lower
/// convex hull of the (t, count) cloud. The offset is then the largest a
/// with zero violations. An optional `theta` multiplies the `s log x` term,
/// for fat-Cantor-style corrections.
#[allow(clippy::too_many_arguments)]
pub fn verify_count_bound<F>(
    gaps: &GapSet,
    schedule: Option<&PerturbationSchedule>,
    mode: CountMode,
    lambda: F,
    s: f64,
    j_grid: &[Interval],
    x_grid: &[f64],
    theta: Option<&dyn Fn(f64) -> f64>,
) -> CountBoundFit
where
    F: Fn(&Interval) -> f64,
{
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for (ji, j) in j_grid.iter().enumerate() {
        let lam = lambda(j);
        for (xi, &x) in x_grid.iter().enumerate() {
            assert!(x > 0.0, "x grid values must be positive");
            if lam <= 0.0 {
                skipped.push((ji, xi));
                continue;
            }
            let count = match mode {
                CountMode::Schedule => {
                    let sched = schedule.expect("Schedule mode requires a schedule");
                    psi(gaps, sched, j, x)
                }
                CountMode::RawLength => raw_gap_count(gaps, j, x),
            };
            let th = theta.map_or(1.0, |f| f(x));
            points.push(GridPoint {
                j_index: ji,
                x_index: xi,
                t: lam.ln() + s * th * x.ln(),
                count,
            });
        }
    }

    let ts: Vec<f64> = points.iter().map(|p| p.t).collect();
    let cs: Vec<f64> = points.iter().map(|p| p.count as f64).collect();
    let (ls_slope, _, _) = least_squares(&ts, &cs);

    // Collapse near-identical t values, keeping the minimal count.
    let mut dedup: Vec<(f64, f64)> = Vec::new();
    {
        let mut sorted: Vec<(f64, f64)> = ts.iter().copied().zip(cs.iter().copied()).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (t, c) in sorted {
            match dedup.last_mut() {
                Some((lt, lc)) if (t - *lt).abs() <= 1e-12 * (1.0 + lt.abs()) => {
                    *lc = lc.min(c);
                }
                _ => dedup.push((t, c)),
            }
        }
    }

    let all_counts_equal = dedup.windows(2).all(|w| w[0].1 == w[1].1);
    let degenerate = dedup.len() < 2 || all_counts_equal;

    let b = if degenerate {
        // Any positive slope is certifiable; report a unit slope.
        1.0
    } else {
        lower_hull_last_slope(&dedup)
    };

    let a = points
        .iter()
        .map(|p| p.count as f64 - b * p.t)
        .fold(f64::INFINITY, f64::min);

    let mut tight = Vec::new();
    let mut violations = Vec::new();
    for p in &points {
        let slack = p.count as f64 - (a + b * p.t);
        let tol = 1e-9 * (1.0 + a.abs() + b.abs() * p.t.abs());
        if slack < -tol {
            violations.push((p.j_index, p.x_index));
        } else if slack <= tol {
            tight.push((p.j_index, p.x_index));
        }
    }

    CountBoundFit {
        a,
        b,
        ls_slope,
        degenerate,
        tight,
        skipped,
        violations,
        points,
    }
}

/// Slope of the rightmost edge of the lower convex hull of points sorted by
/// strictly increasing x.
fn lower_hull_last_slope(points: &[(f64, f64)]) -> f64 {
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for &p in points {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            // Remove b if it lies on or above the segment a-p.
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    let n = hull.len();
    (hull[n - 1].1 - hull[n - 2].1) / (hull[n - 1].0 - hull[n - 2].0)
}
