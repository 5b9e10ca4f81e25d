//! Sampling of the random gap-widening map, evaluation of the map and its
//! derivatives on the whole line, and the smoothness-modulus check.

use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{delta_of, GapSet, GeometryError, PerturbationSchedule};

#[derive(Debug, Error)]
pub enum RandMapError {
    #[error("unknown width distribution {0:?} (expected \"uniform\" or \"cosine\")")]
    UnknownNu(String),
    #[error("derivative order {k} exceeds the schedule smoothness m = {m}")]
    DerivativeOrder { k: u32, m: u32 },
    #[error("derivative order {k} exceeds the bump smoothness budget {order}")]
    BumpOrder { k: u32, order: u32 },
    #[error("point {0} lies inside a gap; the restricted map is only defined on the set")]
    InsideGap(f64),
    #[error("point {0} lies outside the hull")]
    OutsideHull(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

// ---------------------------------------------------------------------------
// Counter-based randomness: one value per (seed, index), independent of
// evaluation order.

const GOLDEN: u64 = 0x9E3779B97F4A7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Deterministic hash of a (seed, counter) pair.
pub fn counter_hash(seed: u64, index: u64) -> u64 {
    splitmix(splitmix(seed) ^ splitmix(index ^ 0xD6E8FEB86659FD93))
}

/// Uniform variate in [0, 1) derived from a (seed, counter) pair.
pub fn counter_u01(seed: u64, index: u64) -> f64 {
    (counter_hash(seed, index) >> 11) as f64 * (1.0 / 9007199254740992.0)
}

/// Child seed for sub-experiment `index` of a root seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    counter_hash(seed ^ 0xA0761D6478BD642F, index)
}

// ---------------------------------------------------------------------------
// Width distributions on [0, 1].

/// Named distribution for the normalized gap widths. Both options have a
/// Fourier transform vanishing at infinity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NuSpec {
    Uniform,
    /// Raised-cosine density 1 - cos(2 pi x) on [0, 1].
    Cosine,
}

impl NuSpec {
    pub fn name(&self) -> &'static str {
        match self {
            NuSpec::Uniform => "uniform",
            NuSpec::Cosine => "cosine",
        }
    }

    /// Maps a uniform [0, 1) variate through the inverse CDF.
    pub fn sample(&self, u: f64) -> f64 {
        match self {
            NuSpec::Uniform => u,
            NuSpec::Cosine => {
                // Invert F(x) = x - sin(2 pi x) / (2 pi) by bisection.
                let f = |x: f64| x - (2.0 * std::f64::consts::PI * x).sin()
                    / (2.0 * std::f64::consts::PI);
                let (mut lo, mut hi) = (0.0f64, 1.0f64);
                for _ in 0..70 {
                    let mid = 0.5 * (lo + hi);
                    if f(mid) < u {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }
}

impl FromStr for NuSpec {
    type Err = RandMapError;

    fn from_str(s: &str) -> Result<Self, RandMapError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" => Ok(NuSpec::Uniform),
            "cosine" | "raised-cosine" => Ok(NuSpec::Cosine),
            other => Err(RandMapError::UnknownNu(other.to_string())),
        }
    }
}

// ---------------------------------------------------------------------------
// Bump functions.

/// Transition profile used to open the gaps: 0 left of 0, 1 right of 1,
/// non-decreasing in between, with as many vanishing endpoint derivatives
/// as the smoothness budget demands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BumpFunction {
    /// Polynomial smoothstep with derivatives 1..=order vanishing at both
    /// endpoints (degree 2*order + 1). Derivatives are exact.
    Smoothstep { order: u32, coeffs: Vec<f64> },
    /// The classical exp(-1/u) transition. All derivatives vanish at the
    /// endpoints; derivatives of order >= 1 are evaluated by finite
    /// differences, so this variant is for exploration rather than tight
    /// bounds.
    Exp,
}

fn binomial(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

fn poly_eval(coeffs: &[f64], u: f64) -> f64 {
    let mut acc = 0.0;
    for &c in coeffs.iter().rev() {
        acc = acc * u + c;
    }
    acc
}

fn poly_derivative(coeffs: &[f64]) -> Vec<f64> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, &c)| i as f64 * c)
        .collect()
}

/// Max of |p| on [0, 1], via grid scan plus bisection on the sign changes
/// of p'.
fn poly_max_abs_unit(coeffs: &[f64]) -> f64 {
    let deriv = poly_derivative(coeffs);
    let n_grid = 4096;
    let mut best = poly_eval(coeffs, 0.0).abs().max(poly_eval(coeffs, 1.0).abs());
    let mut prev_d = poly_eval(&deriv, 0.0);
    for i in 1..=n_grid {
        let u = i as f64 / n_grid as f64;
        let d = poly_eval(&deriv, u);
        best = best.max(poly_eval(coeffs, u).abs());
        if prev_d == 0.0 || (prev_d < 0.0) != (d < 0.0) {
            // Bisect the critical point to machine precision.
            let mut lo = (i - 1) as f64 / n_grid as f64;
            let mut hi = u;
            let lo_sign = prev_d < 0.0;
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if (poly_eval(&deriv, mid) < 0.0) == lo_sign {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            best = best.max(poly_eval(coeffs, 0.5 * (lo + hi)).abs());
        }
        prev_d = d;
    }
    best
}

impl BumpFunction {
    /// The unique polynomial of degree 2*order + 1 with value 0 at 0,
    /// value 1 at 1, and derivatives 1..=order vanishing at both endpoints.
    pub fn smoothstep(order: u32) -> Self {
        let n = order as u64;
        let mut coeffs = vec![0.0; (2 * n + 2) as usize];
        for k in 0..=n {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            coeffs[(n + k + 1) as usize] =
                sign * binomial(n + k, k) * binomial(2 * n + 1, n - k);
        }
        BumpFunction::Smoothstep {
            order,
            coeffs,
        }
    }

    /// Derivative orders that can be requested.
    pub fn order(&self) -> u32 {
        match self {
            BumpFunction::Smoothstep { order, .. } => *order + 1,
            BumpFunction::Exp => u32::MAX,
        }
    }

    /// phi(u).
    pub fn eval(&self, u: f64) -> f64 {
        self.eval_k(0, u)
    }

    /// phi^(k)(u), zero outside (0, 1) for k >= 1 and clamped for k = 0.
    pub fn eval_k(&self, k: u32, u: f64) -> f64 {
        match self {
            BumpFunction::Smoothstep { coeffs, .. } => {
                if u <= 0.0 {
                    return if k == 0 { 0.0 } else { 0.0 };
                }
                if u >= 1.0 {
                    return if k == 0 { 1.0 } else { 0.0 };
                }
                let mut c = coeffs.clone();
                for _ in 0..k {
                    c = poly_derivative(&c);
                }
                poly_eval(&c, u)
            }
            BumpFunction::Exp => {
                if k == 0 {
                    return exp_bump(u);
                }
                // Central differences, recursively; adequate for plots and
                // sanity checks, not for certified bounds.
                let h = 1e-5;
                (self.eval_k(k - 1, u + h) - self.eval_k(k - 1, u - h)) / (2.0 * h)
            }
        }
    }

    /// Sup norm of phi^(k) on the line.
    pub fn sup_norm(&self, k: u32) -> f64 {
        match self {
            BumpFunction::Smoothstep { coeffs, .. } => {
                let mut c = coeffs.clone();
                for _ in 0..k {
                    c = poly_derivative(&c);
                }
                poly_max_abs_unit(&c)
            }
            BumpFunction::Exp => {
                let n = 100_000;
                (0..=n)
                    .map(|i| self.eval_k(k, i as f64 / n as f64).abs())
                    .fold(0.0, f64::max)
            }
        }
    }
}

fn exp_bump(u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / u).exp();
    let b = (-1.0 / (1.0 - u)).exp();
    a / (a + b)
}

// ---------------------------------------------------------------------------
// The sampled map.

/// One realization of the random map: a width `0 <= omega_U <= delta_U` per
/// gap, plus the transition profile. Resampling with the same seed
/// reproduces omega bit-exactly regardless of evaluation order.
#[derive(Debug, Clone)]
pub struct RandomMapSample {
    gaps: Arc<GapSet>,
    schedule: Arc<PerturbationSchedule>,
    omega: Vec<f64>,
    prefix: Vec<f64>,
    seed: u64,
    nu: NuSpec,
    bump: BumpFunction,
}

impl RandomMapSample {
    /// Samples omega with the default bump (smoothstep of order m + 1).
    pub fn sample(
        gaps: Arc<GapSet>,
        schedule: Arc<PerturbationSchedule>,
        nu: NuSpec,
        seed: u64,
    ) -> Self {
        let bump = BumpFunction::smoothstep(schedule.m + 1);
        Self::sample_with_bump(gaps, schedule, nu, seed, bump)
    }

    pub fn sample_with_bump(
        gaps: Arc<GapSet>,
        schedule: Arc<PerturbationSchedule>,
        nu: NuSpec,
        seed: u64,
        bump: BumpFunction,
    ) -> Self {
        assert_eq!(gaps.len(), schedule.delta_per_gap().len());
        let omega: Vec<f64> = schedule
            .delta_per_gap()
            .iter()
            .enumerate()
            .map(|(i, &delta)| delta * nu.sample(counter_u01(seed, i as u64)))
            .collect();
        let mut prefix = Vec::with_capacity(omega.len() + 1);
        prefix.push(0.0);
        for &w in &omega {
            prefix.push(prefix.last().unwrap() + w);
        }
        Self {
            gaps,
            schedule,
            omega,
            prefix,
            seed,
            nu,
            bump,
        }
    }

    /// The all-zero realization (the identity map).
    pub fn identity(gaps: Arc<GapSet>, schedule: Arc<PerturbationSchedule>) -> Self {
        let bump = BumpFunction::smoothstep(schedule.m + 1);
        let omega = vec![0.0; gaps.len()];
        let prefix = vec![0.0; gaps.len() + 1];
        Self {
            gaps,
            schedule,
            omega,
            prefix,
            seed: 0,
            nu: NuSpec::Uniform,
            bump,
        }
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn nu(&self) -> NuSpec {
        self.nu
    }

    pub fn bump(&self) -> &BumpFunction {
        &self.bump
    }

    pub fn gaps(&self) -> &Arc<GapSet> {
        &self.gaps
    }

    pub fn schedule(&self) -> &Arc<PerturbationSchedule> {
        &self.schedule
    }

    /// The extended map on the whole line:
    /// `x + sum_U omega_U phi((x - inf U) / |U|)`.
    pub fn eval_map(&self, x: f64) -> f64 {
        let idx = self.gaps.gaps_left_of(x);
        let mut value = x + self.prefix[idx];
        if idx < self.gaps.len() {
            let g = &self.gaps.gaps()[idx].span;
            if g.lo < x {
                value += self.omega[idx] * self.bump.eval((x - g.lo) / g.len());
            }
        }
        value
    }

    /// The map restricted to the set: `x + sum of omega over gaps left of x`.
    /// Errors if x is outside the hull or strictly inside a gap.
    pub fn eval_map_restricted(&self, x: f64) -> Result<f64, RandMapError> {
        if !self.gaps.hull().contains_point(x) {
            return Err(RandMapError::OutsideHull(x));
        }
        if self.gaps.gap_containing(x).is_some() {
            return Err(RandMapError::InsideGap(x));
        }
        Ok(x + self.prefix[self.gaps.gaps_left_of(x)])
    }

    /// k-th derivative of the extended map, `1 <= k <= m`. At most one gap
    /// contributes at any point.
    pub fn eval_derivative(&self, x: f64, k: u32) -> Result<f64, RandMapError> {
        if k < 1 || k > self.schedule.m {
            return Err(RandMapError::DerivativeOrder {
                k,
                m: self.schedule.m,
            });
        }
        if k > self.bump.order() {
            return Err(RandMapError::BumpOrder {
                k,
                order: self.bump.order(),
            });
        }
        let base = if k == 1 { 1.0 } else { 0.0 };
        match self.gaps.gap_containing(x) {
            None => Ok(base),
            Some(i) => {
                let g = &self.gaps.gaps()[i].span;
                let len = g.len();
                let u = (x - g.lo) / len;
                Ok(base + self.omega[i] / len.powi(k as i32) * self.bump.eval_k(k, u))
            }
        }
    }

    /// Stratified scan for the equicontinuity modulus of f^(m): the largest
    /// observed `|f^(m)(y) - f^(m)(x)| / delta(|y - x|)` against the bound
    /// `2 ||phi^(m+1)||_inf`.
    pub fn modulus_check(&self, n_pairs: usize, seed: u64) -> Result<ModulusReport, RandMapError> {
        let m = self.schedule.m;
        if m + 1 > self.bump.order() {
            return Err(RandMapError::BumpOrder {
                k: m + 1,
                order: self.bump.order(),
            });
        }
        let bound = 2.0 * self.bump.sup_norm(m + 1);
        let hull = self.gaps.hull();
        let margin = 0.1 * hull.len();
        let n_gaps = self.gaps.len();
        let mut max_ratio = 0.0f64;
        let mut argmax = (f64::NAN, f64::NAN);
        let mut counter = 0u64;
        let next_u01 = |c: &mut u64| {
            let v = counter_u01(seed, *c);
            *c += 1;
            v
        };
        for p in 0..n_pairs {
            let stratum = p % 3;
            let (x, y) = match stratum {
                0 if n_gaps > 0 => {
                    // Both points inside one gap.
                    let gi = (counter_hash(seed, counter) as usize) % n_gaps;
                    counter += 1;
                    let g = self.gaps.gaps()[gi].span;
                    let a = g.lo + g.len() * next_u01(&mut counter);
                    let b = g.lo + g.len() * next_u01(&mut counter);
                    (a, b)
                }
                1 => {
                    // Anywhere in the padded hull.
                    let a = hull.lo - margin + (hull.len() + 2.0 * margin) * next_u01(&mut counter);
                    let b = hull.lo - margin + (hull.len() + 2.0 * margin) * next_u01(&mut counter);
                    (a, b)
                }
                _ if n_gaps > 0 => {
                    // Straddling a gap endpoint at a logarithmic range of scales.
                    let gi = (counter_hash(seed, counter) as usize) % n_gaps;
                    counter += 1;
                    let g = self.gaps.gaps()[gi].span;
                    let end = if next_u01(&mut counter) < 0.5 { g.lo } else { g.hi };
                    let scale1 = g.len() * 10f64.powf(-6.0 * next_u01(&mut counter));
                    let scale2 = g.len() * 10f64.powf(-6.0 * next_u01(&mut counter));
                    (end - scale1, end + scale2)
                }
                _ => {
                    let a = hull.lo + hull.len() * next_u01(&mut counter);
                    let b = hull.lo + hull.len() * next_u01(&mut counter);
                    (a, b)
                }
            };
            let dist = (y - x).abs();
            if dist == 0.0 {
                continue;
            }
            let fx = self.eval_derivative(x, m)?;
            let fy = self.eval_derivative(y, m)?;
            let ratio = (fy - fx).abs() / delta_of(dist, self.schedule.alpha)?;
            if ratio > max_ratio {
                max_ratio = ratio;
                argmax = (x, y);
            }
        }
        Ok(ModulusReport {
            max_ratio,
            bound,
            pass: max_ratio <= bound * (1.0 + 1e-9),
            argmax,
            n_pairs,
        })
    }
}

/// Outcome of [`RandomMapSample::modulus_check`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModulusReport {
    pub max_ratio: f64,
    pub bound: f64,
    pub pass: bool,
    pub argmax: (f64, f64),
    pub n_pairs: usize,
}

/// Uniform bound on the error from dropping the unkept gaps: the sum of
/// their schedule widths. `kept` is aligned with the gap list.
pub fn truncation_bound(schedule: &PerturbationSchedule, kept: &[bool]) -> f64 {
    assert_eq!(kept.len(), schedule.delta_per_gap().len());
    schedule
        .delta_per_gap()
        .iter()
        .zip(kept)
        .filter(|(_, &k)| !k)
        .map(|(&d, _)| d)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_schedule, Gap, Interval};

    fn single_gap(lo: f64, hi: f64) -> Arc<GapSet> {
        Arc::new(
            GapSet::new(
                Interval::new(lo.min(0.0) - 1.0, hi.max(1.0) + 1.0),
                vec![Gap::new(lo, hi)],
            )
            .unwrap(),
        )
    }

    #[test]
    fn smoothstep_order1_is_cubic() {
        let bump = BumpFunction::smoothstep(1);
        for i in 0..=20 {
            let u = i as f64 / 20.0;
            let expect = 3.0 * u * u - 2.0 * u * u * u;
            assert!((bump.eval(u) - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn smoothstep_endpoint_derivatives_vanish() {
        for order in 1..=4u32 {
            let bump = BumpFunction::smoothstep(order);
            assert_eq!(bump.eval(0.0), 0.0);
            assert_eq!(bump.eval(1.0), 1.0);
            for k in 1..=order {
                let c = match &bump {
                    BumpFunction::Smoothstep { coeffs, .. } => {
                        let mut c = coeffs.clone();
                        for _ in 0..k {
                            c = poly_derivative(&c);
                        }
                        c
                    }
                    _ => unreachable!(),
                };
                assert!(poly_eval(&c, 0.0).abs() < 1e-12, "order {order} k {k} at 0");
                assert!(poly_eval(&c, 1.0).abs() < 1e-9, "order {order} k {k} at 1");
            }
            // Monotone on [0, 1].
            let mut prev = 0.0;
            for i in 0..=1000 {
                let v = bump.eval(i as f64 / 1000.0);
                assert!(v >= prev - 1e-15);
                prev = v;
            }
        }
    }

    #[test]
    fn smoothstep_order1_sup_norms() {
        let bump = BumpFunction::smoothstep(1);
        // phi' = 6u - 6u^2, max 1.5 at 1/2; phi'' = 6 - 12u, max 6 at 0.
        assert!((bump.sup_norm(1) - 1.5).abs() < 1e-12);
        assert!((bump.sup_norm(2) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn exp_bump_shape() {
        let bump = BumpFunction::Exp;
        assert_eq!(bump.eval(-1.0), 0.0);
        assert_eq!(bump.eval(2.0), 1.0);
        assert!((bump.eval(0.5) - 0.5).abs() < 1e-12);
        assert!(bump.eval(0.25) < 0.5 && bump.eval(0.75) > 0.5);
    }

    #[test]
    fn nu_parsing() {
        assert_eq!("uniform".parse::<NuSpec>().unwrap(), NuSpec::Uniform);
        assert_eq!("Cosine".parse::<NuSpec>().unwrap(), NuSpec::Cosine);
        assert!("gaussian".parse::<NuSpec>().is_err());
    }

    #[test]
    fn cosine_inverse_cdf_sane() {
        let nu = NuSpec::Cosine;
        assert!((nu.sample(0.5) - 0.5).abs() < 1e-9);
        assert!(nu.sample(0.01) > 0.0 && nu.sample(0.01) < 0.3);
        let mut prev = 0.0;
        for i in 1..100 {
            let v = nu.sample(i as f64 / 100.0);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn omega_zero_when_delta_zero() {
        // alpha = 1, tiny gap: delta is tiny but nonzero; instead force a
        // zero budget by scaling: use schedule with m large so delta ~ 0.
        let gaps = single_gap(0.0, 1e-8);
        let schedule = Arc::new(build_schedule(&gaps, 8, 1.0).unwrap());
        let s = RandomMapSample::sample(gaps, schedule.clone(), NuSpec::Uniform, 42);
        assert!(s.omega()[0] <= schedule.delta_per_gap()[0]);
        let zero_sched = Arc::new(build_schedule(&single_gap(0.0, 1e-300), 2, 1.0).unwrap());
        // delta underflows to 0 exactly; omega must be 0 exactly.
        let s = RandomMapSample::sample(
            single_gap(0.0, 1e-300),
            zero_sched,
            NuSpec::Uniform,
            7,
        );
        assert_eq!(s.omega()[0], 0.0);
    }

    #[test]
    fn same_seed_reproduces() {
        let gaps = Arc::new(
            GapSet::new(
                Interval::new(0.0, 10.0),
                (0..100)
                    .map(|i| Gap::new(i as f64 * 0.1 + 0.01, i as f64 * 0.1 + 0.05))
                    .collect(),
            )
            .unwrap(),
        );
        let schedule = Arc::new(build_schedule(&gaps, 1, 0.5).unwrap());
        let a = RandomMapSample::sample(gaps.clone(), schedule.clone(), NuSpec::Uniform, 99);
        let b = RandomMapSample::sample(gaps.clone(), schedule.clone(), NuSpec::Uniform, 99);
        assert_eq!(a.omega(), b.omega());
        let c = RandomMapSample::sample(gaps, schedule, NuSpec::Uniform, 100);
        assert_ne!(a.omega(), c.omega());
    }

    #[test]
    fn omega_mean_matches_clt() {
        // 10^4 unit gaps with delta = 1: the mean of omega should be within
        // 3 sigma of 1/2, sigma = 1/sqrt(12 * 10^4).
        let n = 10_000u64;
        let mean = (0..n).map(|i| counter_u01(12345, i)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.015, "mean {mean}");
    }

    #[test]
    fn eval_map_identity_when_zero() {
        let gaps = single_gap(0.25, 0.75);
        let schedule = Arc::new(build_schedule(&gaps, 1, 1.0).unwrap());
        let s = RandomMapSample::identity(gaps, schedule);
        for i in 0..=100 {
            let x = -1.0 + 3.0 * i as f64 / 100.0;
            assert_eq!(s.eval_map(x), x);
        }
    }

    #[test]
    fn eval_map_single_gap_closed_form() {
        let gaps = single_gap(0.0, 1.0);
        let schedule = Arc::new(build_schedule(&gaps, 1, 1.0).unwrap());
        let mut s = RandomMapSample::identity(gaps, schedule);
        let c = 0.37;
        s.omega[0] = c;
        s.prefix = vec![0.0, c];
        let bump = s.bump.clone();
        for i in 0..=40 {
            let x = -1.0 + 3.0 * i as f64 / 40.0;
            let expect = if x <= 0.0 {
                x
            } else if x >= 1.0 {
                x + c
            } else {
                x + c * bump.eval(x)
            };
            assert!((s.eval_map(x) - expect).abs() < 1e-14);
        }
        // First derivative inside the gap.
        let d = s.eval_derivative(0.5, 1).unwrap();
        assert!((d - (1.0 + c * bump.eval_k(1, 0.5))).abs() < 1e-14);
    }

    #[test]
    fn restricted_agrees_with_extended() {
        let gaps = Arc::new(
            GapSet::new(
                Interval::new(0.0, 1.0),
                vec![Gap::new(0.1, 0.2), Gap::new(0.4, 0.5), Gap::new(0.7, 0.9)],
            )
            .unwrap(),
        );
        let schedule = Arc::new(build_schedule(&gaps, 1, 1.0).unwrap());
        let s = RandomMapSample::sample(gaps.clone(), schedule, NuSpec::Uniform, 5);
        assert_eq!(s.eval_map_restricted(0.0).unwrap(), 0.0);
        let total: f64 = s.omega().iter().sum();
        assert!((s.eval_map_restricted(1.0).unwrap() - (1.0 + total)).abs() < 1e-15);
        for &x in &[0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.9, 1.0] {
            let r = s.eval_map_restricted(x).unwrap();
            assert!((r - s.eval_map(x)).abs() < 1e-12, "x = {x}");
        }
        assert!(matches!(
            s.eval_map_restricted(0.45),
            Err(RandMapError::InsideGap(_))
        ));
        assert!(matches!(
            s.eval_map_restricted(1.5),
            Err(RandMapError::OutsideHull(_))
        ));
    }

    #[test]
    fn derivatives_vanish_off_gaps() {
        let gaps = Arc::new(
            GapSet::new(
                Interval::new(0.0, 1.0),
                vec![Gap::new(0.2, 0.3), Gap::new(0.6, 0.8)],
            )
            .unwrap(),
        );
        let schedule = Arc::new(build_schedule(&gaps, 2, 0.5).unwrap());
        let s = RandomMapSample::sample(gaps, schedule, NuSpec::Uniform, 11);
        for &x in &[-0.5, 0.0, 0.15, 0.3, 0.5, 0.9, 1.5] {
            assert_eq!(s.eval_derivative(x, 1).unwrap(), 1.0, "x = {x}");
            assert_eq!(s.eval_derivative(x, 2).unwrap(), 0.0, "x = {x}");
        }
        assert!(matches!(
            s.eval_derivative(0.5, 3),
            Err(RandMapError::DerivativeOrder { .. })
        ));
        assert!(matches!(
            s.eval_derivative(0.5, 0),
            Err(RandMapError::DerivativeOrder { .. })
        ));
    }

    #[test]
    fn derivative_at_least_one_everywhere() {
        let gaps = Arc::new(
            GapSet::new(
                Interval::new(0.0, 1.0),
                vec![Gap::new(0.1, 0.3), Gap::new(0.5, 0.55), Gap::new(0.8, 0.95)],
            )
            .unwrap(),
        );
        let schedule = Arc::new(build_schedule(&gaps, 1, 0.0).unwrap());
        for seed in 0..20 {
            let s = RandomMapSample::sample(gaps.clone(), schedule.clone(), NuSpec::Cosine, seed);
            for i in 0..=2000 {
                let x = -0.1 + 1.2 * i as f64 / 2000.0;
                assert!(s.eval_derivative(x, 1).unwrap() >= 1.0);
            }
        }
    }

    #[test]
    fn map_monotone_in_omega() {
        let gaps = single_gap(0.2, 0.8);
        let schedule = Arc::new(build_schedule(&gaps, 1, 1.0).unwrap());
        let mut small = RandomMapSample::identity(gaps.clone(), schedule.clone());
        small.omega[0] = 0.1;
        small.prefix = vec![0.0, 0.1];
        let mut large = RandomMapSample::identity(gaps, schedule);
        large.omega[0] = 0.2;
        large.prefix = vec![0.0, 0.2];
        for i in 0..=100 {
            let x = 3.0 * i as f64 / 100.0 - 1.0;
            assert!(large.eval_map(x) >= small.eval_map(x));
        }
    }

    #[test]
    fn modulus_zero_for_identity() {
        let gaps = single_gap(0.3, 0.6);
        let schedule = Arc::new(build_schedule(&gaps, 1, 1.0).unwrap());
        let s = RandomMapSample::identity(gaps, schedule);
        let report = s.modulus_check(1000, 1).unwrap();
        assert_eq!(report.max_ratio, 0.0);
        assert!(report.pass);
    }

    #[test]
    fn modulus_single_gap_within_half_bound() {
        // With the full budget on one unit gap and pairs inside the gap,
        // the ratio stays below ||phi''||_inf (no factor 2 needed).
        let gaps = single_gap(0.0, 1.0);
        let schedule = Arc::new(build_schedule(&gaps, 1, 1.0).unwrap());
        let mut s = RandomMapSample::identity(gaps, schedule.clone());
        s.omega[0] = schedule.delta_per_gap()[0];
        s.prefix = vec![0.0, s.omega[0]];
        let half_bound = s.bump.sup_norm(2);
        let mut max_ratio = 0.0f64;
        let n = 400;
        for i in 0..n {
            for j in (i + 1)..n {
                let x = i as f64 / (n - 1) as f64;
                let y = j as f64 / (n - 1) as f64;
                let fx = s.eval_derivative(x, 1).unwrap();
                let fy = s.eval_derivative(y, 1).unwrap();
                max_ratio = max_ratio.max((fy - fx).abs() / delta_of(y - x, 1.0).unwrap());
            }
        }
        assert!(
            max_ratio <= half_bound * (1.0 + 1e-9),
            "ratio {max_ratio} vs {half_bound}"
        );
    }

    #[test]
    fn truncation_bound_examples() {
        let gaps = Arc::new(
            GapSet::new(
                Interval::new(0.0, 1.0),
                vec![Gap::new(0.1, 0.2), Gap::new(0.4, 0.6)],
            )
            .unwrap(),
        );
        let schedule = build_schedule(&gaps, 1, 1.0).unwrap();
        assert_eq!(truncation_bound(&schedule, &[true, true]), 0.0);
        let all = truncation_bound(&schedule, &[false, false]);
        assert!((all - schedule.delta_sum()).abs() < 1e-15);
        let partial = truncation_bound(&schedule, &[true, false]);
        assert!((partial - schedule.delta_per_gap()[1]).abs() < 1e-15);
    }
}
