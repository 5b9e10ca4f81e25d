use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TERNARY_S: f64 = 0.6309297535714574; // log 2 / log 3

/// Full experiment configuration. Every field has a default; the defaulted
/// config runs the ternary middle-thirds pipeline end to end.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// "ifs" (ternary middle-thirds), "fat-cantor", or a path to a gap
    /// table CSV.
    pub construction: String,
    pub depth: u32,
    pub m: u32,
    pub alpha: f64,
    pub nu: String,
    pub seed: u64,
    pub j_min: i32,
    pub j_max: i32,
    pub points_per_band: u32,
    pub q: Vec<u32>,
    pub n_samples: u32,
    /// Frostman exponent; None picks the construction's natural value.
    pub s: Option<f64>,
    /// Output directory; empty means $FDIM_OUT_ROOT or ./out.
    pub out_dir: String,
    /// Rayon worker count; 0 leaves the default. Never affects outputs.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            construction: "ifs".into(),
            depth: 12,
            m: 1,
            alpha: 1.0,
            nu: "uniform".into(),
            seed: 1,
            j_min: 6,
            j_max: 16,
            points_per_band: 16,
            q: vec![1, 2],
            n_samples: 32,
            s: None,
            out_dir: String::new(),
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Construction {
    Ifs,
    FatCantor,
    GapTable(PathBuf),
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            bail!("m must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            bail!("alpha must lie in [0, 1]");
        }
        if self.depth < 1 {
            bail!("depth must be >= 1");
        }
        if self.j_min >= self.j_max {
            bail!("j_min must be < j_max");
        }
        if self.points_per_band < 1 {
            bail!("points_per_band must be >= 1");
        }
        if self.q.iter().any(|&q| q < 1) {
            bail!("moment orders must be >= 1");
        }
        Ok(())
    }

    pub fn construction(&self) -> Construction {
        match self.construction.as_str() {
            "ifs" | "ternary" => Construction::Ifs,
            "fat-cantor" => Construction::FatCantor,
            other => Construction::GapTable(PathBuf::from(other)),
        }
    }

    /// Frostman exponent to verify against: configured value, or the
    /// construction's natural dimension.
    pub fn s_value(&self) -> f64 {
        self.s.unwrap_or(match self.construction() {
            Construction::Ifs => TERNARY_S,
            _ => 1.0,
        })
    }

    /// Decay target s / (m + alpha).
    pub fn target(&self) -> f64 {
        self.s_value() / (self.m as f64 + self.alpha)
    }

    pub fn out_dir(&self) -> PathBuf {
        if !self.out_dir.is_empty() {
            return PathBuf::from(&self.out_dir);
        }
        match std::env::var("FDIM_OUT_ROOT") {
            Ok(root) if !root.is_empty() => PathBuf::from(root),
            _ => PathBuf::from("out"),
        }
    }

    /// Hash of the experiment content: out_dir and workers are execution
    /// details that must not change any result, so they are normalized away.
    pub fn hash(&self) -> String {
        let mut normalized = self.clone();
        normalized.out_dir = String::new();
        normalized.workers = 0;
        let json = serde_json::to_string(&normalized).expect("config serializes");
        sha256_hex(json.as_bytes())
    }

    /// Log-spaced frequency grid covering the dyadic bands [2^j, 2^(j+1))
    /// for j in [j_min, j_max].
    pub fn xi_grid(&self) -> Vec<f64> {
        let ppb = self.points_per_band as usize;
        let mut xi = Vec::with_capacity(((self.j_max - self.j_min + 1) as usize) * ppb);
        for j in self.j_min..=self.j_max {
            for k in 0..ppb {
                xi.push(2f64.powf(j as f64 + k as f64 / ppb as f64));
            }
        }
        xi
    }

    /// One frequency per dyadic band, for moment scans.
    pub fn xi_dyadic(&self) -> Vec<f64> {
        (self.j_min..=self.j_max).map(|j| 2f64.powi(j)).collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
