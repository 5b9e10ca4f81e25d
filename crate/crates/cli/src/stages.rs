use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use num_complex::Complex64;
use serde::Serialize;

use fdim_core::fourier::{estimate_fourier_dim, moment_scan, transform, DecayFit, Spectrum};
use fdim_core::geometry::{
    build_schedule, verify_count_bound, CountMode, GapSet, Interval, PerturbationSchedule,
};
use fdim_core::measures::{
    build_fat_cantor, build_ifs, frostman_check, pushforward, AffineIfsSpec, DiscreteMeasure,
    FatCantorSpec,
};
use fdim_core::randmap::{NuSpec, RandomMapSample};

use crate::config::{sha256_hex, Construction, RunConfig};

// ---------------------------------------------------------------------------
// File plumbing

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).context("serialize JSON")?;
    text.push('\n');
    write_text(dir, name, &text)
}

fn read_text(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    std::fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_gaps(dir: &Path) -> Result<GapSet> {
    GapSet::from_table(&read_text(dir, "gaps.csv")?).map_err(|e| anyhow!("gaps.csv: {e}"))
}

fn load_measure(dir: &Path, name: &str) -> Result<DiscreteMeasure> {
    DiscreteMeasure::from_csv(&read_text(dir, name)?).map_err(|e| anyhow!("{name}: {e}"))
}

fn parse_nu(cfg: &RunConfig) -> Result<NuSpec> {
    cfg.nu
        .parse::<NuSpec>()
        .map_err(|e| anyhow!("distribution {:?}: {e}", cfg.nu))
}

fn schedule_for(cfg: &RunConfig, gaps: &GapSet) -> Result<PerturbationSchedule> {
    build_schedule(gaps, cfg.m, cfg.alpha).map_err(|e| anyhow!("schedule: {e}"))
}

// ---------------------------------------------------------------------------
// build

#[derive(Debug, Serialize)]
pub struct Summary {
    pub config_hash: String,
    pub construction: String,
    pub depth: u32,
    pub gap_count: usize,
    pub delta_sum: f64,
    pub s: f64,
    pub frostman_a: f64,
    pub atom_count: usize,
    pub resolution: f64,
    pub lebesgue_mass: Option<f64>,
}

/// Uniform measure on the complement pieces of a raw gap table: one atom
/// per piece midpoint, weight proportional to piece length.
fn measure_from_pieces(gaps: &GapSet) -> Result<DiscreteMeasure> {
    let hull = gaps.hull();
    let mut pieces: Vec<Interval> = Vec::new();
    let mut cursor = hull.lo;
    for g in gaps.gaps() {
        if g.span.lo > cursor {
            pieces.push(Interval::new(cursor, g.span.lo));
        }
        cursor = g.span.hi;
    }
    if hull.hi > cursor {
        pieces.push(Interval::new(cursor, hull.hi));
    }
    if pieces.is_empty() {
        bail!("gap table leaves no set pieces to carry a measure");
    }
    let total: f64 = pieces.iter().map(|p| p.len()).sum();
    let resolution = pieces.iter().map(|p| p.len()).fold(0.0, f64::max);
    let atoms: Vec<(f64, f64)> = pieces
        .iter()
        .map(|p| (p.midpoint(), p.len() / total))
        .collect();
    DiscreteMeasure::new(atoms, resolution).map_err(|e| anyhow!("piece measure: {e}"))
}

pub fn build_construction(cfg: &RunConfig) -> Result<(GapSet, DiscreteMeasure, Option<f64>)> {
    match cfg.construction() {
        Construction::Ifs => {
            let (gaps, measure) = build_ifs(&AffineIfsSpec::ternary(cfg.depth))
                .map_err(|e| anyhow!("ifs construction: {e}"))?;
            Ok((gaps, measure, None))
        }
        Construction::FatCantor => {
            let spec = FatCantorSpec::with_default_sequence(cfg.depth);
            let mass = spec.lebesgue_mass();
            let (gaps, measure) =
                build_fat_cantor(&spec).map_err(|e| anyhow!("fat-cantor construction: {e}"))?;
            Ok((gaps, measure, Some(mass)))
        }
        Construction::GapTable(path) => {
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("cannot read gap table {}", path.display()))?;
            let gaps = GapSet::from_table(&text)
                .map_err(|e| anyhow!("gap table {}: {e}", path.display()))?;
            let measure = measure_from_pieces(&gaps)?;
            Ok((gaps, measure, None))
        }
    }
}

pub fn cmd_build(cfg: &RunConfig) -> Result<Summary> {
    let dir = cfg.out_dir();
    let hash = cfg.hash();
    let (gaps, measure, lebesgue_mass) = build_construction(cfg)?;
    let schedule = schedule_for(cfg, &gaps)?;
    let s = cfg.s_value();
    let frostman = frostman_check(&measure, s);

    let mut cfg_json = serde_json::to_string_pretty(cfg)?;
    cfg_json.push('\n');
    write_text(&dir, "config.json", &cfg_json)?;
    write_text(
        &dir,
        "gaps.csv",
        &format!("# config_hash {hash}\n{}", gaps.to_table()),
    )?;
    write_text(
        &dir,
        "measure.csv",
        &format!(
            "# config_hash {hash}\n{}",
            measure.to_csv(&cfg.construction)
        ),
    )?;
    let summary = Summary {
        config_hash: hash,
        construction: cfg.construction.clone(),
        depth: cfg.depth,
        gap_count: gaps.len(),
        delta_sum: schedule.delta_sum(),
        s,
        frostman_a: frostman.a,
        atom_count: measure.len(),
        resolution: measure.resolution(),
        lebesgue_mass,
    };
    write_json(&dir, "summary.json", &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// sample

#[derive(Debug, Serialize)]
pub struct SampleRecord {
    pub config_hash: String,
    pub seed: u64,
    pub nu: String,
    pub gap_table_hash: String,
    pub bump_order: u32,
    pub omega_count: usize,
    /// min f' over a uniform grid; >= 1 certifies an increasing
    /// diffeomorphism at the grid scale.
    pub min_derivative: f64,
    pub diffeo_pass: bool,
}

pub fn min_derivative(sample: &RandomMapSample, n_grid: usize) -> f64 {
    let hull = sample.gaps().hull();
    let mut min_d = f64::INFINITY;
    for i in 0..=n_grid {
        let x = hull.lo + (hull.hi - hull.lo) * i as f64 / n_grid as f64;
        let d = sample.eval_derivative(x, 1).expect("derivative on hull");
        min_d = min_d.min(d);
    }
    min_d
}

pub fn cmd_sample(cfg: &RunConfig) -> Result<SampleRecord> {
    let dir = cfg.out_dir();
    let gaps_text = read_text(&dir, "gaps.csv")?;
    let gaps = GapSet::from_table(&gaps_text).map_err(|e| anyhow!("gaps.csv: {e}"))?;
    let schedule = schedule_for(cfg, &gaps)?;
    let nu = parse_nu(cfg)?;
    let sample = RandomMapSample::sample(Arc::new(gaps), Arc::new(schedule), nu, cfg.seed);
    let min_d = min_derivative(&sample, 10_000);
    let record = SampleRecord {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        nu: nu.name().to_string(),
        gap_table_hash: sha256_hex(gaps_text.as_bytes()),
        bump_order: sample.bump().order(),
        omega_count: sample.omega().len(),
        min_derivative: min_d,
        diffeo_pass: min_d >= 1.0 - 1e-12,
    };
    write_json(&dir, "sample.json", &record)?;
    Ok(record)
}

// ---------------------------------------------------------------------------
// push

pub fn cmd_push(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.out_dir();
    let gaps = load_gaps(&dir)?;
    let measure = load_measure(&dir, "measure.csv")?;
    let schedule = schedule_for(cfg, &gaps)?;
    let nu = parse_nu(cfg)?;
    let sample = RandomMapSample::sample(Arc::new(gaps), Arc::new(schedule), nu, cfg.seed);
    let pushed =
        pushforward(&measure, |x| sample.eval_map(x)).map_err(|e| anyhow!("pushforward: {e}"))?;
    write_text(
        &dir,
        "pushed.csv",
        &format!(
            "# config_hash {}\n{}",
            cfg.hash(),
            pushed.to_csv(&format!("pushforward seed {}", cfg.seed))
        ),
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// spectrum / dim

fn spectrum_to_csv(cfg: &RunConfig, spectrum: &Spectrum) -> String {
    let mut out = format!(
        "# config_hash {}\n# xi_max_valid {}\nxi,re,im,abs\n",
        cfg.hash(),
        spectrum.xi_max_valid
    );
    for (f, v) in spectrum.xi.iter().zip(&spectrum.values) {
        out.push_str(&format!("{},{},{},{}\n", f, v.re, v.im, v.norm()));
    }
    out
}

fn spectrum_from_csv(text: &str) -> Result<Spectrum> {
    let mut xi_max_valid = None;
    let mut xi = Vec::new();
    let mut values = Vec::new();
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() || line == "xi,re,im,abs" {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let fields: Vec<&str> = rest.split_whitespace().collect();
            if fields.len() == 2 && fields[0] == "xi_max_valid" {
                xi_max_valid = fields[1].parse::<f64>().ok();
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            bail!("bad spectrum line: {line:?}");
        }
        xi.push(fields[0].trim().parse::<f64>()?);
        let re = fields[1].trim().parse::<f64>()?;
        let im = fields[2].trim().parse::<f64>()?;
        values.push(Complex64::new(re, im));
    }
    Ok(Spectrum {
        xi,
        values,
        xi_max_valid: xi_max_valid.ok_or_else(|| anyhow!("missing xi_max_valid header"))?,
    })
}

/// Computes the transform of `input` on the configured grid and writes it
/// to `output`.
pub fn cmd_spectrum(cfg: &RunConfig, input: &str, output: &str) -> Result<()> {
    let dir = cfg.out_dir();
    let measure = load_measure(&dir, input)?;
    let spectrum = transform(&measure, &cfg.xi_grid());
    write_text(&dir, output, &spectrum_to_csv(cfg, &spectrum))
}

#[derive(Debug, Serialize)]
pub struct FitRecord {
    pub config_hash: String,
    pub input: String,
    #[serde(flatten)]
    pub fit: DecayFit,
}

pub fn cmd_dim(cfg: &RunConfig, input: &str, output: &str) -> Result<FitRecord> {
    let dir = cfg.out_dir();
    let spectrum = spectrum_from_csv(&read_text(&dir, input)?)?;
    let fit = estimate_fourier_dim(&spectrum, cfg.j_min, cfg.j_max)
        .map_err(|e| anyhow!("decay fit: {e}"))?;
    let record = FitRecord {
        config_hash: cfg.hash(),
        input: input.to_string(),
        fit,
    };
    write_json(&dir, output, &record)?;
    Ok(record)
}

// ---------------------------------------------------------------------------
// verify-psi

#[derive(Debug, Serialize)]
pub struct PsiRecord {
    pub config_hash: String,
    pub s_exponent: f64,
    pub a: f64,
    pub b: f64,
    pub ls_slope: f64,
    pub degenerate: bool,
    pub n_points: usize,
    pub n_violations: usize,
    pub n_tight: usize,
    pub feasible: bool,
}

fn ifs_cylinders(spec: &AffineIfsSpec, max_depth: u32) -> Vec<Interval> {
    let hull = spec.attractor_hull();
    let mut out = vec![hull];
    let mut frontier = vec![hull];
    for _ in 0..max_depth {
        let mut next = Vec::new();
        for iv in &frontier {
            for m in &spec.maps {
                next.push(m.apply_interval(*iv));
            }
        }
        out.extend(next.iter().copied());
        frontier = next;
    }
    out
}

fn dyadic_subintervals(hull: Interval, max_level: u32) -> Vec<Interval> {
    let mut out = Vec::new();
    for d in 0..=max_level {
        let n = 1u64 << d;
        let step = hull.len() / n as f64;
        for k in 0..n {
            out.push(Interval::new(
                hull.lo + k as f64 * step,
                hull.lo + (k + 1) as f64 * step,
            ));
        }
    }
    out
}

/// Certifies psi(J, x) >= a + b (log lambda(J) + s' log x) on the standard
/// grid: J over cylinders (or dyadic subintervals) of depth <= 6, x over
/// powers of two up to 2^20, with s' = s/(m + alpha) - 0.02.
pub fn cmd_verify_psi(cfg: &RunConfig) -> Result<PsiRecord> {
    let dir = cfg.out_dir();
    let gaps = load_gaps(&dir)?;
    let measure = load_measure(&dir, "measure.csv")?;
    let schedule = schedule_for(cfg, &gaps)?;
    let s_exponent = cfg.target() - 0.02;

    let j_grid = match cfg.construction() {
        Construction::Ifs => {
            ifs_cylinders(&AffineIfsSpec::ternary(cfg.depth), cfg.depth.min(6))
        }
        _ => dyadic_subintervals(gaps.hull(), 6),
    };
    let x_grid: Vec<f64> = (1..=20).map(|j| 2f64.powi(j)).collect();

    let fat_spec = match cfg.construction() {
        Construction::FatCantor => Some(FatCantorSpec::with_default_sequence(cfg.depth)),
        _ => None,
    };
    let theta_fn = fat_spec.as_ref().map(|sp| {
        let sp = sp.clone();
        move |x: f64| sp.theta(x)
    });
    let theta_ref: Option<&dyn Fn(f64) -> f64> =
        theta_fn.as_ref().map(|f| f as &dyn Fn(f64) -> f64);

    let fit = verify_count_bound(
        &gaps,
        Some(&schedule),
        CountMode::Schedule,
        |j| measure.mass_on(j),
        s_exponent,
        &j_grid,
        &x_grid,
        theta_ref,
    );
    let record = PsiRecord {
        config_hash: cfg.hash(),
        s_exponent,
        a: fit.a,
        b: fit.b,
        ls_slope: fit.ls_slope,
        degenerate: fit.degenerate,
        n_points: fit.points.len(),
        n_violations: fit.violations.len(),
        n_tight: fit.tight.len(),
        feasible: fit.b > 0.0 && fit.violations.is_empty(),
    };
    write_json(&dir, "psi.json", &record)?;
    Ok(record)
}

// ---------------------------------------------------------------------------
// modulus

#[derive(Debug, Serialize)]
pub struct ModulusRecord {
    pub config_hash: String,
    pub m: u32,
    pub alpha: f64,
    pub seed: u64,
    pub n_pairs: usize,
    pub max_ratio: f64,
    pub bound: f64,
    pub pass: bool,
}

pub fn cmd_modulus(cfg: &RunConfig, n_pairs: usize) -> Result<ModulusRecord> {
    let dir = cfg.out_dir();
    let gaps = load_gaps(&dir)?;
    let schedule = schedule_for(cfg, &gaps)?;
    let nu = parse_nu(cfg)?;
    let sample = RandomMapSample::sample(Arc::new(gaps), Arc::new(schedule), nu, cfg.seed);
    let report = sample
        .modulus_check(n_pairs, cfg.seed)
        .map_err(|e| anyhow!("modulus check: {e}"))?;
    let record = ModulusRecord {
        config_hash: cfg.hash(),
        m: cfg.m,
        alpha: cfg.alpha,
        seed: cfg.seed,
        n_pairs,
        max_ratio: report.max_ratio,
        bound: report.bound,
        pass: report.pass,
    };
    write_json(&dir, "modulus.json", &record)?;
    Ok(record)
}

// ---------------------------------------------------------------------------
// moments

#[derive(Debug, Serialize)]
pub struct MomentSummary {
    pub q: u32,
    pub slope: f64,
    /// Expected decay exponent -(s'q - 1) with a +0.5 finite-size margin.
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct MomentsRecord {
    pub config_hash: String,
    pub n_samples: usize,
    pub scans: Vec<MomentSummary>,
    pub pass: bool,
}

pub fn cmd_moments(cfg: &RunConfig) -> Result<MomentsRecord> {
    let dir = cfg.out_dir();
    let gaps = Arc::new(load_gaps(&dir)?);
    let measure = load_measure(&dir, "measure.csv")?;
    let schedule = Arc::new(schedule_for(cfg, &gaps)?);
    let nu = parse_nu(cfg)?;
    let xi = cfg.xi_dyadic();
    let target = cfg.target();

    let mut csv = format!("# config_hash {}\nq,xi,mean,stderr,n\n", cfg.hash());
    let mut scans = Vec::new();
    for &q in &cfg.q {
        let scan = moment_scan(
            &gaps,
            &schedule,
            &measure,
            nu,
            q,
            &xi,
            cfg.n_samples as usize,
            cfg.seed,
        )
        .map_err(|e| anyhow!("moment scan q={q}: {e}"))?;
        for p in &scan.points {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                q, p.xi, p.mean, p.stderr, scan.n_samples
            ));
        }
        let bound = -(target * q as f64 - 1.0) + 0.5;
        scans.push(MomentSummary {
            q,
            slope: scan.slope,
            bound,
            pass: scan.slope <= bound,
        });
    }
    let record = MomentsRecord {
        config_hash: cfg.hash(),
        n_samples: cfg.n_samples as usize,
        pass: scans.iter().all(|s| s.pass),
        scans,
    };
    write_text(&dir, "moments.csv", &csv)?;
    write_json(&dir, "moments.json", &record)?;
    Ok(record)
}

// ---------------------------------------------------------------------------
// pipeline

#[derive(Debug, Serialize)]
pub struct StageStatus {
    pub name: String,
    pub status: String,
}

#[derive(Debug, Serialize)]
pub struct Checks {
    pub diffeo: Option<bool>,
    pub modulus: Option<bool>,
    pub psi_feasible: Option<bool>,
    pub moments: Option<bool>,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub config_hash: String,
    pub target: f64,
    pub s_hat: Option<f64>,
    pub s_hat_unperturbed: Option<f64>,
    pub min_derivative: Option<f64>,
    pub psi: Option<PsiRecord>,
    pub modulus: Option<ModulusRecord>,
    pub moments: Option<MomentsRecord>,
    pub checks: Checks,
    pub pass: bool,
    pub stages: Vec<StageStatus>,
    pub artifacts: BTreeMap<String, String>,
}

/// Runs build -> sample -> push -> spectrum -> fit -> verify-psi -> modulus
/// -> moments and writes report.json. Returns the process exit code: 0 if
/// every property check passed, 1 if some check failed, 2 if a stage
/// errored (partial artifacts are retained and the stage is named).
pub fn cmd_pipeline(cfg: &RunConfig, modulus_pairs: usize) -> Result<i32> {
    let dir = cfg.out_dir();
    let mut stages: Vec<StageStatus> = Vec::new();
    let mut failed_stage = false;

    let mut sample_rec: Option<SampleRecord> = None;
    let mut fit_rec: Option<FitRecord> = None;
    let mut fit_unpert: Option<FitRecord> = None;
    let mut psi_rec: Option<PsiRecord> = None;
    let mut modulus_rec: Option<ModulusRecord> = None;
    let mut moments_rec: Option<MomentsRecord> = None;

    // Each stage depends on its predecessors' files; stop at the first
    // error but keep everything written so far.
    let run_stage = |name: &str,
                         stages: &mut Vec<StageStatus>,
                         failed: &mut bool,
                         f: &mut dyn FnMut() -> Result<()>| {
        if *failed {
            stages.push(StageStatus {
                name: name.to_string(),
                status: "skipped".to_string(),
            });
            return;
        }
        match f() {
            Ok(()) => stages.push(StageStatus {
                name: name.to_string(),
                status: "ok".to_string(),
            }),
            Err(e) => {
                *failed = true;
                stages.push(StageStatus {
                    name: name.to_string(),
                    status: format!("failed: {e:#}"),
                });
            }
        }
    };

    run_stage("build", &mut stages, &mut failed_stage, &mut || {
        cmd_build(cfg).map(|_| ())
    });
    run_stage("sample", &mut stages, &mut failed_stage, &mut || {
        sample_rec = Some(cmd_sample(cfg)?);
        Ok(())
    });
    run_stage("push", &mut stages, &mut failed_stage, &mut || {
        cmd_push(cfg)
    });
    run_stage("spectrum", &mut stages, &mut failed_stage, &mut || {
        cmd_spectrum(cfg, "pushed.csv", "spectrum.csv")?;
        cmd_spectrum(cfg, "measure.csv", "spectrum_unperturbed.csv")
    });
    run_stage("fit", &mut stages, &mut failed_stage, &mut || {
        fit_rec = Some(cmd_dim(cfg, "spectrum.csv", "fit.json")?);
        fit_unpert = Some(cmd_dim(
            cfg,
            "spectrum_unperturbed.csv",
            "fit_unperturbed.json",
        )?);
        Ok(())
    });
    run_stage("verify-psi", &mut stages, &mut failed_stage, &mut || {
        psi_rec = Some(cmd_verify_psi(cfg)?);
        Ok(())
    });
    run_stage("modulus", &mut stages, &mut failed_stage, &mut || {
        modulus_rec = Some(cmd_modulus(cfg, modulus_pairs)?);
        Ok(())
    });
    run_stage("moments", &mut stages, &mut failed_stage, &mut || {
        moments_rec = Some(cmd_moments(cfg)?);
        Ok(())
    });

    let checks = Checks {
        diffeo: sample_rec.as_ref().map(|r| r.diffeo_pass),
        modulus: modulus_rec.as_ref().map(|r| r.pass),
        psi_feasible: psi_rec.as_ref().map(|r| r.feasible),
        moments: moments_rec.as_ref().map(|r| r.pass),
    };
    let all_present = !failed_stage;
    let pass = all_present
        && checks.diffeo == Some(true)
        && checks.modulus == Some(true)
        && checks.psi_feasible == Some(true)
        && checks.moments == Some(true);

    // Hash every artifact except config.json (records workers/out_dir,
    // which are execution details) and report.json itself.
    let mut artifacts = BTreeMap::new();
    if let Ok(entries) = std::fs::read_dir(&dir) {
        for entry in entries.flatten() {
            let name = entry.file_name().to_string_lossy().to_string();
            if name == "config.json" || name == "report.json" {
                continue;
            }
            if let Ok(bytes) = std::fs::read(entry.path()) {
                artifacts.insert(name, sha256_hex(&bytes));
            }
        }
    }

    let report = Report {
        config_hash: cfg.hash(),
        target: cfg.target(),
        s_hat: fit_rec.as_ref().map(|f| f.fit.s_hat),
        s_hat_unperturbed: fit_unpert.as_ref().map(|f| f.fit.s_hat),
        min_derivative: sample_rec.as_ref().map(|r| r.min_derivative),
        psi: psi_rec,
        modulus: modulus_rec,
        moments: moments_rec,
        checks,
        pass,
        stages,
        artifacts,
    };
    write_json(&dir, "report.json", &report)?;

    if failed_stage {
        Ok(2)
    } else if pass {
        Ok(0)
    } else {
        Ok(1)
    }
}
