use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use fdim_cli::config::RunConfig;
use fdim_cli::stages;

/// Deterministic laboratory for Fourier decay of fractal measures under
/// random smooth perturbations: constructions, random maps, spectra,
/// decay-exponent fits, and verification reports.
#[derive(Parser)]
#[command(name = "fdim", version)]
struct Cli {
    /// JSON config file; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default $FDIM_OUT_ROOT or ./out).
    #[arg(long, global = true)]
    out: Option<String>,
    /// Rayon worker count (0 = library default). Never affects outputs.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// "ifs", "fat-cantor", or a gap table CSV path.
    #[arg(long, global = true)]
    construction: Option<String>,
    #[arg(long, global = true)]
    depth: Option<u32>,
    /// Smoothness order m of the perturbation class C^(m+alpha).
    #[arg(long, global = true)]
    m: Option<u32>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Coefficient distribution: uniform | cosine.
    #[arg(long, global = true)]
    nu: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    j_min: Option<i32>,
    #[arg(long, global = true)]
    j_max: Option<i32>,
    #[arg(long, global = true)]
    points_per_band: Option<u32>,
    /// Moment orders, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    q: Option<Vec<u32>>,
    #[arg(long, global = true)]
    n_samples: Option<u32>,
    /// Frostman exponent (default: the construction's natural value).
    #[arg(long, global = true)]
    s: Option<f64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Construct the gap table and base measure.
    Build,
    /// Draw the random map realization for the configured seed.
    Sample,
    /// Push the base measure through the sampled map.
    Push,
    /// Transform a measure file on the configured frequency grid.
    Spectrum {
        /// Measure CSV inside the output directory.
        #[arg(long, default_value = "pushed.csv")]
        input: String,
        #[arg(long, default_value = "spectrum.csv")]
        output: String,
    },
    /// Fit the decay exponent of a stored spectrum.
    Dim {
        #[arg(long, default_value = "spectrum.csv")]
        input: String,
        #[arg(long, default_value = "fit.json")]
        output: String,
    },
    /// Certify the gap-counting lower bound on the standard grid.
    VerifyPsi,
    /// Check the derivative modulus of continuity of the sampled map.
    Modulus {
        #[arg(long, default_value_t = 100_000)]
        n_pairs: usize,
    },
    /// Monte-Carlo moments of the randomized spectrum.
    Moments,
    /// Run every stage and write report.json.
    Pipeline {
        #[arg(long, default_value_t = 100_000)]
        modulus_pairs: usize,
    },
}

fn merged_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &cli.out {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = cli.workers {
        cfg.workers = v;
    }
    if let Some(v) = &cli.construction {
        cfg.construction = v.clone();
    }
    if let Some(v) = cli.depth {
        cfg.depth = v;
    }
    if let Some(v) = cli.m {
        cfg.m = v;
    }
    if let Some(v) = cli.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = &cli.nu {
        cfg.nu = v.clone();
    }
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    if let Some(v) = cli.j_min {
        cfg.j_min = v;
    }
    if let Some(v) = cli.j_max {
        cfg.j_max = v;
    }
    if let Some(v) = cli.points_per_band {
        cfg.points_per_band = v;
    }
    if let Some(v) = &cli.q {
        cfg.q = v.clone();
    }
    if let Some(v) = cli.n_samples {
        cfg.n_samples = v;
    }
    if let Some(v) = cli.s {
        cfg.s = Some(v);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<u8> {
    let cfg = merged_config(&cli)?;
    if cfg.workers > 0 {
        // Outputs are worker-count independent by construction; this only
        // bounds parallelism.
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global()
            .ok();
    }
    let code = match cli.cmd {
        Cmd::Build => {
            let summary = stages::cmd_build(&cfg)?;
            println!(
                "built {} gaps, {} atoms, delta_sum {}, Frostman A {}",
                summary.gap_count, summary.atom_count, summary.delta_sum, summary.frostman_a
            );
            0
        }
        Cmd::Sample => {
            let rec = stages::cmd_sample(&cfg)?;
            println!(
                "sampled seed {} ({} coefficients), min f' = {}",
                rec.seed, rec.omega_count, rec.min_derivative
            );
            u8::from(!rec.diffeo_pass)
        }
        Cmd::Push => {
            stages::cmd_push(&cfg)?;
            println!("pushed measure written to pushed.csv");
            0
        }
        Cmd::Spectrum { input, output } => {
            stages::cmd_spectrum(&cfg, &input, &output)?;
            println!("spectrum of {input} written to {output}");
            0
        }
        Cmd::Dim { input, output } => {
            let rec = stages::cmd_dim(&cfg, &input, &output)?;
            println!("s_hat = {} (slope {})", rec.fit.s_hat, rec.fit.slope);
            0
        }
        Cmd::VerifyPsi => {
            let rec = stages::cmd_verify_psi(&cfg)?;
            println!(
                "psi bound: a = {}, b = {}, violations = {}",
                rec.a, rec.b, rec.n_violations
            );
            u8::from(!rec.feasible)
        }
        Cmd::Modulus { n_pairs } => {
            let rec = stages::cmd_modulus(&cfg, n_pairs)?;
            println!(
                "modulus: max ratio {} vs bound {} -> {}",
                rec.max_ratio,
                rec.bound,
                if rec.pass { "PASS" } else { "FAIL" }
            );
            u8::from(!rec.pass)
        }
        Cmd::Moments => {
            let rec = stages::cmd_moments(&cfg)?;
            for s in &rec.scans {
                println!("q = {}: slope {} (bound {})", s.q, s.slope, s.bound);
            }
            u8::from(!rec.pass)
        }
        Cmd::Pipeline { modulus_pairs } => {
            let code = stages::cmd_pipeline(&cfg, modulus_pairs)?;
            println!("pipeline exit {code}; report.json written");
            code as u8
        }
    };
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
