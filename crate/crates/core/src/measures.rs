//! Concrete sets and measures: affine IFS attractors with self-similar
//! measures, fat Cantor sets with uniform measures, Frostman-condition
//! checks, translation search and pushforward.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Gap, GapSet, GeometryError, Interval};

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("invalid construction spec: {0}")]
    InvalidSpec(String),
    #[error("hull images of maps {0} and {1} have overlapping interiors")]
    OverlappingImages(usize, usize),
    #[error("map is not strictly increasing on the support (atoms {0} and {1})")]
    MapNotIncreasing(usize, usize),
    #[error("no translate places positive mass on the target set")]
    NoIntersection,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Weighted atoms approximating a probability measure on the line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    atoms: Vec<(f64, f64)>,
    resolution: f64,
}

impl DiscreteMeasure {
    /// Validates strictly increasing positions, non-negative weights and
    /// total mass 1 within 1e-12.
    pub fn new(atoms: Vec<(f64, f64)>, resolution: f64) -> Result<Self, MeasureError> {
        if atoms.is_empty() {
            return Err(MeasureError::InvalidMeasure("no atoms".into()));
        }
        if !(resolution > 0.0) {
            return Err(MeasureError::InvalidMeasure(format!(
                "resolution must be positive, got {resolution}"
            )));
        }
        let mut total = 0.0;
        for (i, &(pos, w)) in atoms.iter().enumerate() {
            if !pos.is_finite() || !w.is_finite() || w < 0.0 {
                return Err(MeasureError::InvalidMeasure(format!(
                    "atom {i} has position {pos}, weight {w}"
                )));
            }
            if i > 0 && atoms[i - 1].0 >= pos {
                return Err(MeasureError::InvalidMeasure(format!(
                    "positions not strictly increasing at atom {i}"
                )));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(MeasureError::InvalidMeasure(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { atoms, resolution })
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Diameter of the finest construction piece each atom stands for.
    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn positions(&self) -> impl Iterator<Item = f64> + '_ {
        self.atoms.iter().map(|a| a.0)
    }

    /// Mass of the closed interval J.
    pub fn mass_on(&self, j: &Interval) -> f64 {
        let lo = self.atoms.partition_point(|a| a.0 < j.lo);
        let hi = self.atoms.partition_point(|a| a.0 <= j.hi);
        self.atoms[lo..hi].iter().map(|a| a.1).sum()
    }

    /// CSV with a comment header carrying resolution and provenance.
    pub fn to_csv(&self, provenance: &str) -> String {
        let mut out = String::new();
        out.push_str(&format!("# resolution {}\n", self.resolution));
        out.push_str(&format!("# provenance {provenance}\n"));
        out.push_str("position,weight\n");
        for &(pos, w) in &self.atoms {
            out.push_str(&format!("{pos},{w}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, MeasureError> {
        let mut resolution = None;
        let mut atoms = Vec::new();
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() || line == "position,weight" {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let fields: Vec<&str> = rest.split_whitespace().collect();
                if fields.len() == 2 && fields[0] == "resolution" {
                    resolution = fields[1].parse::<f64>().ok();
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 2 {
                return Err(MeasureError::InvalidMeasure(format!(
                    "bad measure CSV line: {line:?}"
                )));
            }
            let pos = fields[0].trim().parse::<f64>().map_err(|e| {
                MeasureError::InvalidMeasure(format!("bad position {:?}: {e}", fields[0]))
            })?;
            let w = fields[1].trim().parse::<f64>().map_err(|e| {
                MeasureError::InvalidMeasure(format!("bad weight {:?}: {e}", fields[1]))
            })?;
            atoms.push((pos, w));
        }
        let resolution = resolution
            .ok_or_else(|| MeasureError::InvalidMeasure("missing resolution header".into()))?;
        Self::new(atoms, resolution)
    }
}

/// One affine contraction `x -> ratio * x + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub ratio: f64,
    pub offset: f64,
}

impl AffineMap {
    pub fn apply(&self, x: f64) -> f64 {
        self.ratio * x + self.offset
    }

    pub fn apply_interval(&self, iv: Interval) -> Interval {
        let a = self.apply(iv.lo);
        let b = self.apply(iv.hi);
        Interval::new(a.min(b), a.max(b))
    }

    fn compose(&self, inner: &AffineMap) -> AffineMap {
        AffineMap {
            ratio: self.ratio * inner.ratio,
            offset: self.ratio * inner.offset + self.offset,
        }
    }
}

/// An affine iterated function system with selection weights and a
/// truncation depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineIfsSpec {
    pub maps: Vec<AffineMap>,
    pub weights: Vec<f64>,
    pub depth: u32,
}

impl AffineIfsSpec {
    /// The middle-thirds system with uniform weights.
    pub fn ternary(depth: u32) -> Self {
        Self {
            maps: vec![
                AffineMap {
                    ratio: 1.0 / 3.0,
                    offset: 0.0,
                },
                AffineMap {
                    ratio: 1.0 / 3.0,
                    offset: 2.0 / 3.0,
                },
            ],
            weights: vec![0.5, 0.5],
            depth,
        }
    }

    fn validate(&self) -> Result<(), MeasureError> {
        if self.maps.len() < 2 {
            return Err(MeasureError::InvalidSpec(
                "need at least two maps".to_string(),
            ));
        }
        if self.maps.len() != self.weights.len() {
            return Err(MeasureError::InvalidSpec(format!(
                "{} maps but {} weights",
                self.maps.len(),
                self.weights.len()
            )));
        }
        if self.depth < 1 {
            return Err(MeasureError::InvalidSpec("depth must be >= 1".into()));
        }
        for (i, m) in self.maps.iter().enumerate() {
            let r = m.ratio.abs();
            if !(r > 0.0 && r < 1.0) {
                return Err(MeasureError::InvalidSpec(format!(
                    "map {i} has contraction ratio {}, need 0 < |r| < 1",
                    m.ratio
                )));
            }
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 || self.weights.iter().any(|&p| p <= 0.0) {
            return Err(MeasureError::InvalidSpec(format!(
                "weights must be positive and sum to 1, got sum {total}"
            )));
        }
        Ok(())
    }

    /// Convex hull of the attractor: the unique fixed interval of
    /// `H -> conv(union of F_i(H))`, found by iteration from the span of
    /// the fixed points.
    pub fn attractor_hull(&self) -> Interval {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for m in &self.maps {
            let fp = m.offset / (1.0 - m.ratio);
            lo = lo.min(fp);
            hi = hi.max(fp);
        }
        if hi <= lo {
            hi = lo + 1.0; // degenerate seed, the iteration fixes it
        }
        let mut hull = Interval::new(lo, hi);
        for _ in 0..10_000 {
            let mut nlo = f64::INFINITY;
            let mut nhi = f64::NEG_INFINITY;
            for m in &self.maps {
                let img = m.apply_interval(hull);
                nlo = nlo.min(img.lo);
                nhi = nhi.max(img.hi);
            }
            let next = Interval::new(nlo, nhi);
            let scale = hull.len().max(1.0);
            if (next.lo - hull.lo).abs() <= 1e-15 * scale
                && (next.hi - hull.hi).abs() <= 1e-15 * scale
            {
                return next;
            }
            hull = next;
        }
        hull
    }
}

/// Expands the IFS to its depth-K cylinder cover: gaps of the cover and the
/// self-similar measure with one atom per cylinder midpoint.
pub fn build_ifs(spec: &AffineIfsSpec) -> Result<(GapSet, DiscreteMeasure), MeasureError> {
    spec.validate()?;
    let hull = spec.attractor_hull();

    // Disjoint-interior check on the first-level images, reported with the
    // offending pair.
    let mut first: Vec<(usize, Interval)> = spec
        .maps
        .iter()
        .enumerate()
        .map(|(i, m)| (i, m.apply_interval(hull)))
        .collect();
    first.sort_by(|a, b| a.1.lo.total_cmp(&b.1.lo));
    let tol = 1e-12 * hull.len();
    for w in first.windows(2) {
        if w[0].1.hi > w[1].1.lo + tol {
            let (i, j) = (w[0].0.min(w[1].0), w[0].0.max(w[1].0));
            return Err(MeasureError::OverlappingImages(i, j));
        }
    }

    let mut gaps: Vec<Gap> = Vec::new();
    let mut atoms: Vec<(f64, f64)> = Vec::new();
    let mut resolution = 0.0f64;

    // Depth-first, children visited left to right, so atoms come out sorted.
    struct Ctx<'a> {
        spec: &'a AffineIfsSpec,
        hull: Interval,
        tol: f64,
    }
    fn recurse(
        ctx: &Ctx,
        map: &AffineMap,
        weight: f64,
        level: u32,
        gaps: &mut Vec<Gap>,
        atoms: &mut Vec<(f64, f64)>,
        resolution: &mut f64,
    ) {
        if level == ctx.spec.depth {
            let cyl = map.apply_interval(ctx.hull);
            *resolution = resolution.max(cyl.len());
            atoms.push((cyl.midpoint(), weight));
            return;
        }
        let mut children: Vec<(AffineMap, f64, Interval)> = ctx
            .spec
            .maps
            .iter()
            .zip(&ctx.spec.weights)
            .map(|(m, &p)| {
                let composed = map.compose(m);
                let iv = composed.apply_interval(ctx.hull);
                (composed, weight * p, iv)
            })
            .collect();
        children.sort_by(|a, b| a.2.lo.total_cmp(&b.2.lo));
        for w in children.windows(2) {
            if w[1].2.lo - w[0].2.hi > ctx.tol {
                gaps.push(Gap::with_generation(w[0].2.hi, w[1].2.lo, level + 1));
            }
        }
        for (m, p, _) in children {
            recurse(ctx, &m, p, level + 1, gaps, atoms, resolution);
        }
    }

    let ctx = Ctx { spec, hull, tol };
    let identity = AffineMap {
        ratio: 1.0,
        offset: 0.0,
    };
    recurse(
        &ctx, &identity, 1.0, 0, &mut gaps, &mut atoms, &mut resolution,
    );

    let gap_set = GapSet::new(hull, gaps)?;
    let measure = DiscreteMeasure::new(atoms, resolution)?;
    Ok((gap_set, measure))
}

/// A fat Cantor construction: at step k remove the concentric open middle
/// of proportion `1 - 2 c_k` from every surviving interval.
#[derive(Clone)]
pub struct FatCantorSpec {
    depth: u32,
    c_seq: Arc<dyn Fn(u32) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for FatCantorSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FatCantorSpec")
            .field("depth", &self.depth)
            .finish_non_exhaustive()
    }
}

impl FatCantorSpec {
    pub fn new(
        depth: u32,
        c_seq: impl Fn(u32) -> f64 + Send + Sync + 'static,
    ) -> Result<Self, MeasureError> {
        if depth < 1 {
            return Err(MeasureError::InvalidSpec("depth must be >= 1".into()));
        }
        let spec = Self {
            depth,
            c_seq: Arc::new(c_seq),
        };
        // Validate the sequence a little past the evaluated range.
        let mut prev = 0.0;
        for k in 1..=depth + 2 {
            let c = spec.c(k);
            if !(c > 0.0 && c < 0.5) {
                return Err(MeasureError::InvalidSpec(format!(
                    "c_{k} = {c} is outside (0, 1/2)"
                )));
            }
            if c < prev {
                return Err(MeasureError::InvalidSpec(format!(
                    "c_{k} = {c} breaks monotonicity"
                )));
            }
            prev = c;
        }
        Ok(spec)
    }

    /// Default proportion sequence `c_k = 1/2 - 1/(2 (k + 2)^2)`: increasing,
    /// tends to 1/2, has a positive product of 2 c_k, and
    /// `log(1 - 2 c_k) / k -> 0`.
    pub fn with_default_sequence(depth: u32) -> Self {
        Self::new(depth, |k| {
            let d = (k + 2) as f64;
            0.5 - 1.0 / (2.0 * d * d)
        })
        .expect("default sequence is valid")
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// c_k, 1-indexed.
    pub fn c(&self, k: u32) -> f64 {
        (self.c_seq)(k)
    }

    /// Lebesgue measure of the depth-K approximation, `prod 2 c_k`.
    pub fn lebesgue_mass(&self) -> f64 {
        (1..=self.depth).map(|k| 2.0 * self.c(k)).product()
    }

    /// `log(1 - 2 c_K) / K` at the final depth; should trend to 0.
    pub fn tail_log_ratio(&self) -> f64 {
        (1.0 - 2.0 * self.c(self.depth)).ln() / self.depth as f64
    }

    /// The counting correction theta(x): with n the unique integer such
    /// that the generation-(n+2) gap length is below 1/x while the
    /// generation-(n+1) gap length is not,
    /// `theta(x) = -n log 2 / (log(1 - 2 c_{n+2}) + sum_{i<=n+1} log c_i)`.
    pub fn theta(&self, x: f64) -> f64 {
        assert!(x > 0.0);
        // gap_len(g) = (1 - 2 c_g) * prod_{i < g} c_i, strictly decreasing.
        let inv = 1.0 / x;
        let mut prod = 1.0;
        let mut n: i64 = -1;
        // find smallest g with gap_len(g) < inv; then n = g - 2.
        let mut g = 1u32;
        loop {
            let len = (1.0 - 2.0 * self.c(g)) * prod;
            if len < inv {
                n = g as i64 - 2;
                break;
            }
            prod *= self.c(g);
            g += 1;
            if g > 10_000 {
                break;
            }
        }
        if n <= 0 {
            return 1.0;
        }
        let n = n as u32;
        let mut denom = (1.0 - 2.0 * self.c(n + 2)).ln();
        for i in 1..=n + 1 {
            denom += self.c(i).ln();
        }
        -(n as f64) * 2f64.ln() / denom
    }
}

/// Expands the fat Cantor construction to depth K: 2^K - 1 gaps tagged with
/// their generation, and the uniform measure on the surviving intervals.
pub fn build_fat_cantor(spec: &FatCantorSpec) -> Result<(GapSet, DiscreteMeasure), MeasureError> {
    let mut intervals = vec![Interval::new(0.0, 1.0)];
    let mut gaps: Vec<Gap> = Vec::new();
    for k in 1..=spec.depth() {
        let c = spec.c(k);
        let mut next = Vec::with_capacity(intervals.len() * 2);
        for iv in &intervals {
            let keep = c * iv.len();
            let left = Interval::new(iv.lo, iv.lo + keep);
            let right = Interval::new(iv.hi - keep, iv.hi);
            gaps.push(Gap::with_generation(left.hi, right.lo, k));
            next.push(left);
            next.push(right);
        }
        intervals = next;
    }
    let resolution = intervals[0].len();
    let weight = 1.0 / intervals.len() as f64;
    let atoms: Vec<(f64, f64)> = intervals.iter().map(|iv| (iv.midpoint(), weight)).collect();
    let gap_set = GapSet::new(Interval::new(0.0, 1.0), gaps)?;
    let measure = DiscreteMeasure::new(atoms, resolution)?;
    Ok((gap_set, measure))
}

/// Result of a Frostman scan: the smallest constant A with
/// `lambda(I) <= A |I|^s` over atom-range intervals, and the interval
/// attaining it.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FrostmanReport {
    pub a: f64,
    pub witness: Interval,
}

/// Scans all intervals spanned by consecutive atom ranges. Each atom stands
/// for a construction piece of diameter `resolution`, so the interval
/// containing atoms i..j is credited length `(pos_j - pos_i) + resolution`;
/// this floors lengths at the resolution, below which the atomic
/// approximation carries no information.
pub fn frostman_check(measure: &DiscreteMeasure, s: f64) -> FrostmanReport {
    assert!(s > 0.0, "frostman_check requires s > 0");
    let atoms = measure.atoms();
    let n = atoms.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for &(_, w) in atoms {
        prefix.push(prefix.last().unwrap() + w);
    }
    let floor = measure.resolution();
    let best = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut local = (f64::NEG_INFINITY, i, i);
            for j in i..n {
                let mass = prefix[j + 1] - prefix[i];
                let len = (atoms[j].0 - atoms[i].0) + floor;
                let ratio = mass / len.powf(s);
                if ratio > local.0 {
                    local = (ratio, i, j);
                }
            }
            local
        })
        .reduce(
            || (f64::NEG_INFINITY, 0, 0),
            |a, b| if a.0 >= b.0 { a } else { b },
        );
    FrostmanReport {
        a: best.0,
        witness: Interval::new(atoms[best.1].0, atoms[best.2].0),
    }
}

/// Result of the translation search.
#[derive(Debug, Clone)]
pub struct TranslateResult {
    pub t: f64,
    pub mass: f64,
    /// Translated restriction, renormalized to a probability measure.
    pub lambda: DiscreteMeasure,
}

/// Membership in the depth-K approximation of the set behind `gaps`:
/// inside the hull and in no open gap.
fn in_set(gaps: &GapSet, x: f64) -> bool {
    gaps.hull().contains_point(x) && gaps.gap_containing(x).is_none()
}

/// Scans the translation grid for the shift that puts the most mass of `mu`
/// on the set described by `c_gaps`, then restricts and renormalizes.
/// Ties break towards the smallest t.
pub fn translate_intersect(
    mu: &DiscreteMeasure,
    c_gaps: &GapSet,
    t_grid: &[f64],
) -> Result<TranslateResult, MeasureError> {
    if t_grid.is_empty() {
        return Err(MeasureError::InvalidSpec("empty translation grid".into()));
    }
    let scored: Vec<(f64, f64)> = t_grid
        .par_iter()
        .map(|&t| {
            let mass: f64 = mu
                .atoms()
                .iter()
                .filter(|&&(x, _)| in_set(c_gaps, x + t))
                .map(|&(_, w)| w)
                .sum();
            (t, mass)
        })
        .collect();
    let mut best_t = f64::NAN;
    let mut best_mass = 0.0;
    for &(t, mass) in &scored {
        if mass > best_mass || (mass == best_mass && mass > 0.0 && t < best_t) {
            best_t = t;
            best_mass = mass;
        }
    }
    if best_mass <= 0.0 {
        return Err(MeasureError::NoIntersection);
    }
    let atoms: Vec<(f64, f64)> = mu
        .atoms()
        .iter()
        .filter(|&&(x, _)| in_set(c_gaps, x + best_t))
        .map(|&(x, w)| (x + best_t, w / best_mass))
        .collect();
    let lambda = DiscreteMeasure::new(atoms, mu.resolution())?;
    Ok(TranslateResult {
        t: best_t,
        mass: best_mass,
        lambda,
    })
}

/// Pushes the measure through a strictly increasing map: atom positions are
/// mapped, weights kept, and the resolution is rescaled by the largest
/// observed local stretch.
pub fn pushforward(
    measure: &DiscreteMeasure,
    map: impl Fn(f64) -> f64,
) -> Result<DiscreteMeasure, MeasureError> {
    let atoms = measure.atoms();
    let mut mapped: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
    let mut stretch = 1.0f64;
    for (i, &(x, w)) in atoms.iter().enumerate() {
        let y = map(x);
        if i > 0 {
            let (px, _) = atoms[i - 1];
            let py: f64 = mapped[i - 1].0;
            if y <= py {
                return Err(MeasureError::MapNotIncreasing(i - 1, i));
            }
            stretch = stretch.max((y - py) / (x - px));
        }
        mapped.push((y, w));
    }
    DiscreteMeasure::new(mapped, measure.resolution() * stretch)
}
