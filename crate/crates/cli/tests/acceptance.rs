//! Acceptance suite: one test per primary criterion, each printing a single
//! PASS/FAIL line (run with --nocapture to see them; the test verdicts
//! mirror the lines). Quantitative tolerances are stated inline.

use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use fdim_core::fourier::{
    estimate_fourier_dim, moment_scan, spectrum_of_pushforward, ternary_cantor_transform_abs,
    transform,
};
use fdim_core::geometry::{
    build_schedule, verify_count_bound, CountMode, GapSet, Interval, PerturbationSchedule,
};
use fdim_core::measures::{
    build_fat_cantor, build_ifs, AffineIfsSpec, DiscreteMeasure, FatCantorSpec,
};
use fdim_core::randmap::{derive_seed, NuSpec, RandomMapSample};

const TERNARY_S: f64 = 0.6309297535714574; // log 2 / log 3

fn ternary(depth: u32, m: u32, alpha: f64) -> (Arc<GapSet>, Arc<PerturbationSchedule>, DiscreteMeasure) {
    let (gaps, measure) = build_ifs(&AffineIfsSpec::ternary(depth)).unwrap();
    let schedule = build_schedule(&gaps, m, alpha).unwrap();
    (Arc::new(gaps), Arc::new(schedule), measure)
}

/// Wall-clock budgets target the optimized build; in debug they are only
/// reported.
fn check_runtime(elapsed: Duration, budget: Duration, label: &str) {
    if !cfg!(debug_assertions) {
        assert!(
            elapsed <= budget,
            "{label}: elapsed {elapsed:?} exceeds budget {budget:?}"
        );
    }
}

fn report(criterion: u32, ok: bool, detail: &str) {
    println!(
        "criterion {criterion}: {} — {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_01_monotone_diffeomorphism() {
    let start = Instant::now();
    let (gaps, schedule, _) = ternary(12, 1, 1.0);
    let hull = gaps.hull();
    let n_grid = 10_000usize;

    let min_d: f64 = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let sample =
                RandomMapSample::sample(gaps.clone(), schedule.clone(), NuSpec::Uniform, seed);
            let mut min_d = f64::INFINITY;
            for i in 0..=n_grid {
                let x = hull.lo + (hull.hi - hull.lo) * i as f64 / n_grid as f64;
                min_d = min_d.min(sample.eval_derivative(x, 1).unwrap());
            }
            min_d
        })
        .reduce(|| f64::INFINITY, f64::min);

    let elapsed = start.elapsed();
    let ok = min_d >= 1.0 - 1e-12;
    report(1, ok, &format!("min f' = {min_d} over 100 seeds ({elapsed:?})"));
    assert!(ok, "min f' = {min_d} < 1");
    check_runtime(elapsed, Duration::from_secs(30), "criterion 1");
}

#[test]
fn criterion_02_modulus_bound() {
    let start = Instant::now();
    let mut worst = f64::NEG_INFINITY;
    for &(m, alpha) in &[(1u32, 1.0), (1, 0.5), (2, 0.0)] {
        let (gaps, schedule, _) = ternary(12, m, alpha);
        let excess = (0..20u64)
            .into_par_iter()
            .map(|seed| {
                let sample = RandomMapSample::sample(
                    gaps.clone(),
                    schedule.clone(),
                    NuSpec::Uniform,
                    seed,
                );
                let rep = sample.modulus_check(100_000, seed).unwrap();
                assert!(
                    rep.pass,
                    "m={m} alpha={alpha} seed={seed}: ratio {} > bound {}",
                    rep.max_ratio, rep.bound
                );
                rep.max_ratio / rep.bound
            })
            .reduce(|| f64::NEG_INFINITY, f64::max);
        worst = worst.max(excess);
    }
    let elapsed = start.elapsed();
    report(
        2,
        true,
        &format!("max ratio/bound = {worst} across 3 classes x 20 seeds ({elapsed:?})"),
    );
    check_runtime(elapsed, Duration::from_secs(120), "criterion 2");
}

#[test]
fn criterion_03_restricted_extended_agreement() {
    let (gaps, schedule, _) = ternary(12, 1, 1.0);
    let endpoints = gaps.endpoints();
    let mut max_diff = 0.0f64;
    for seed in 0..100u64 {
        let sample =
            RandomMapSample::sample(gaps.clone(), schedule.clone(), NuSpec::Uniform, seed);
        for &x in &endpoints {
            let ext = sample.eval_map(x);
            let restr = sample.eval_map_restricted(x).unwrap();
            max_diff = max_diff.max((ext - restr).abs());
        }
    }
    let ok = max_diff <= 1e-12;
    report(
        3,
        ok,
        &format!("max |extended - restricted| = {max_diff} at {} endpoints x 100 seeds", endpoints.len()),
    );
    assert!(ok, "max diff {max_diff} > 1e-12");
}

#[test]
fn criterion_04_lebesgue_proxy_oracle() {
    let start = Instant::now();
    let n = 1usize << 14;
    let h = 1.0 / n as f64;
    let atoms: Vec<(f64, f64)> = (0..n).map(|i| (h * (i as f64 + 0.5), h)).collect();
    let measure = DiscreteMeasure::new(atoms, h).unwrap();

    // 32 log-spaced frequencies per dyadic band up to the trusted window.
    let mut xi = Vec::new();
    for j in 2..=11 {
        for k in 0..32 {
            xi.push(2f64.powf(j as f64 + k as f64 / 32.0));
        }
    }
    let spectrum = transform(&measure, &xi);
    assert!(xi.iter().all(|&f| f <= spectrum.xi_max_valid));

    let mut max_err = 0.0f64;
    for (f, v) in spectrum.xi.iter().zip(&spectrum.values) {
        let sinc = (std::f64::consts::PI * f).sin() / (std::f64::consts::PI * f);
        max_err = max_err.max((v.norm() - sinc.abs()).abs());
    }
    let fit = estimate_fourier_dim(&spectrum, 2, 11).unwrap();
    let elapsed = start.elapsed();
    let ok = max_err <= 2e-3 && (0.85..=1.0).contains(&fit.s_hat);
    report(
        4,
        ok,
        &format!("max |.|-sinc error = {max_err}, s_hat = {} ({elapsed:?})", fit.s_hat),
    );
    assert!(ok, "max_err = {max_err}, s_hat = {}", fit.s_hat);
    check_runtime(elapsed, Duration::from_secs(60), "criterion 4");
}

#[test]
fn criterion_05_cantor_non_decay_oracle() {
    let (_, measure) = build_ifs(&AffineIfsSpec::ternary(14)).unwrap();
    let xi: Vec<f64> = (1..=12).map(|nn| 3f64.powi(nn)).collect();
    let spectrum = transform(&measure, &xi);
    assert!(xi.iter().all(|&f| f <= spectrum.xi_max_valid));

    let mut violations = Vec::new();
    for (f, v) in spectrum.xi.iter().zip(&spectrum.values) {
        let oracle = ternary_cantor_transform_abs(*f);
        let diff = (v.norm() - oracle).abs();
        if diff > 1e-3 {
            violations.push((*f, v.norm(), oracle, diff));
        }
    }
    let fit = estimate_fourier_dim(&spectrum, 1, 19).unwrap();
    let ok = violations.is_empty() && fit.s_hat <= 0.05;
    report(
        5,
        ok,
        &format!(
            "{} oracle deviations > 1e-3, s_hat = {}",
            violations.len(),
            fit.s_hat
        ),
    );
    assert!(
        ok,
        "s_hat = {}; deviations (xi, computed, oracle, diff): {violations:?}. \
         At the top frequencies 3^11 and 3^12 the depth-14 truncated measure \
         keeps only 3 resp. 2 factors of the cosine product, so it differs \
         from the infinite-product limit by 1.3e-3 resp. 1.2e-2 while both \
         frequencies still sit inside the trusted window 3^14/4; the 1e-3 \
         tolerance is unattainable there for any depth-14 discretization.",
        fit.s_hat
    );
}

#[test]
fn criterion_06_psi_bound_feasibility() {
    let (gaps, schedule, measure) = ternary(12, 1, 1.0);
    // Cylinders of depth <= 6, generated independently of the gap builder.
    let spec = AffineIfsSpec::ternary(12);
    let hull = spec.attractor_hull();
    let mut j_grid = vec![hull];
    let mut frontier = vec![hull];
    for _ in 0..6 {
        let mut next = Vec::new();
        for iv in &frontier {
            for m in &spec.maps {
                next.push(m.apply_interval(*iv));
            }
        }
        j_grid.extend(next.iter().copied());
        frontier = next;
    }
    let x_grid: Vec<f64> = (1..=20).map(|j| 2f64.powi(j)).collect();
    let s_exp = TERNARY_S / 2.0 - 0.02;

    let fit = verify_count_bound(
        &gaps,
        Some(&schedule),
        CountMode::Schedule,
        |j| measure.mass_on(j),
        s_exp,
        &j_grid,
        &x_grid,
        None,
    );
    let ok = fit.b > 0.0 && fit.violations.is_empty() && !fit.degenerate;
    report(
        6,
        ok,
        &format!(
            "b = {}, a = {}, violations = {}, {} grid points",
            fit.b,
            fit.a,
            fit.violations.len(),
            fit.points.len()
        ),
    );
    assert!(ok, "b = {}, violations = {:?}", fit.b, fit.violations);
}

#[test]
fn criterion_07_moment_trend() {
    let start = Instant::now();
    let (gaps, schedule, measure) = ternary(12, 1, 1.0);
    let xi: Vec<f64> = (6..=16).map(|j| 2f64.powi(j)).collect();
    let s_prime = TERNARY_S / 2.0;
    let mut details = Vec::new();
    let mut ok = true;
    for &q in &[1u32, 2] {
        let scan =
            moment_scan(&gaps, &schedule, &measure, NuSpec::Uniform, q, &xi, 200, 7).unwrap();
        let bound = -(s_prime * q as f64 - 1.0) + 0.5;
        ok &= scan.slope <= bound;
        details.push(format!("q={q}: slope {} <= bound {}", scan.slope, bound));
    }
    let elapsed = start.elapsed();
    report(7, ok, &format!("{} ({elapsed:?})", details.join("; ")));
    assert!(ok, "{details:?}");
    check_runtime(elapsed, Duration::from_secs(600), "criterion 7");
}

#[test]
fn criterion_08_decay_improvement() {
    let start = Instant::now();
    let (gaps, schedule, measure) = ternary(12, 1, 1.0);

    // Log-spaced frequencies plus c * 3^n for small integers c: the
    // unperturbed measure's band suprema live on those, so omitting them
    // would overstate its decay. The same grid serves both fits so the
    // comparison is like for like.
    let mut xi_set: Vec<f64> = Vec::new();
    for j in 6..=16 {
        for k in 0..16 {
            xi_set.push(2f64.powf(j as f64 + k as f64 / 16.0));
        }
    }
    for c in 1..=32u32 {
        let mut p = c as f64;
        while p < 2f64.powi(17) {
            if p >= 64.0 {
                xi_set.push(p);
            }
            p *= 3.0;
        }
    }
    xi_set.sort_by(f64::total_cmp);
    xi_set.dedup();
    let xi = xi_set;

    let base_fit = estimate_fourier_dim(&transform(&measure, &xi), 6, 16).unwrap();
    let s_hats: Vec<f64> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let sample =
                RandomMapSample::sample(gaps.clone(), schedule.clone(), NuSpec::Uniform, seed);
            let spec = spectrum_of_pushforward(&measure, &sample, &xi).unwrap();
            estimate_fourier_dim(&spec, 6, 16).unwrap().s_hat
        })
        .collect();

    let improved = s_hats
        .iter()
        .filter(|&&s| s - base_fit.s_hat >= 0.15)
        .count();
    let mean = s_hats.iter().sum::<f64>() / s_hats.len() as f64;
    let elapsed = start.elapsed();
    let ok = improved >= 90 && mean >= 0.165;
    report(
        8,
        ok,
        &format!(
            "unperturbed s_hat = {}, improved >= 0.15 for {improved}/100 seeds, mean s_hat = {mean} ({elapsed:?})",
            base_fit.s_hat
        ),
    );
    assert!(
        ok,
        "unperturbed {} improved {improved} mean {mean}",
        base_fit.s_hat
    );
}

#[test]
fn criterion_09_fat_cantor() {
    let depth = 12u32;
    let spec = FatCantorSpec::with_default_sequence(depth);
    let (gaps, _) = build_fat_cantor(&spec).unwrap();
    assert_eq!(gaps.len(), (1 << depth) - 1, "gap count");

    // Independent mass oracles: the direct product of 2 c_k, and the hull
    // length minus the total gap length.
    let mut product = 1.0f64;
    for k in 1..=depth {
        product *= 2.0 * spec.c(k);
    }
    let gap_total: f64 = gaps.gaps().iter().map(|g| g.len()).sum();
    let from_gaps = gaps.hull().len() - gap_total;
    let mass = spec.lebesgue_mass();
    assert!((mass - product).abs() <= 1e-12, "mass {mass} vs product {product}");
    assert!((mass - from_gaps).abs() <= 1e-12, "mass {mass} vs complement {from_gaps}");

    // A measure supported inside C's central (generation-1) gap must be
    // translated to intersect C with positive mass.
    let central = gaps
        .gaps()
        .iter()
        .max_by(|a, b| a.len().total_cmp(&b.len()))
        .unwrap()
        .span;
    let h = central.len() / 8.0;
    let atoms: Vec<(f64, f64)> = (0..5)
        .map(|i| (central.lo + (i as f64 + 1.5) * h, 0.2))
        .collect();
    let mu = DiscreteMeasure::new(atoms, h).unwrap();
    let t_grid: Vec<f64> = (-500..=500).map(|i| i as f64 / 500.0 * 0.6).collect();
    let result = fdim_core::measures::translate_intersect(&mu, &gaps, &t_grid).unwrap();
    // Independent membership check of the winning translate.
    for &(x, _) in result.lambda.atoms() {
        assert!(gaps.hull().contains_point(x) && gaps.gap_containing(x).is_none());
    }
    let ok = result.mass > 0.0;
    report(
        9,
        ok,
        &format!(
            "4095 gaps, mass = {mass} (three oracles agree to 1e-12), translate t = {} captures mass {}",
            result.t, result.mass
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_10_pipeline_determinism() {
    let bin = env!("CARGO_BIN_EXE_fdim");
    let tmp = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for workers in ["1", "8"] {
        let dir = tmp.path().join(format!("w{workers}"));
        let status = Command::new(bin)
            .args([
                "--out",
                dir.to_str().unwrap(),
                "--workers",
                workers,
                "--n-samples",
                "16",
                "pipeline",
                "--modulus-pairs",
                "20000",
            ])
            .status()
            .unwrap();
        assert!(status.success(), "pipeline with workers={workers} failed");
        reports.push(std::fs::read(dir.join("report.json")).unwrap());
    }
    let ok = reports[0] == reports[1];
    report(
        10,
        ok,
        &format!("report.json identical across workers 1 and 8 ({} bytes)", reports[0].len()),
    );
    assert!(ok, "report.json differs between worker counts");
}
