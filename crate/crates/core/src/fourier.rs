//! Fourier transforms of discrete measures, dyadic decay-exponent
//! estimation, and Monte-Carlo moment scans over random map realizations.
//!
//! Transforms are direct nonuniform sums with compensated accumulation in a
//! fixed order, parallel over frequencies, so results are bit-identical
//! regardless of worker count.

use std::f64::consts::TAU;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GapSet, PerturbationSchedule};
use crate::least_squares;
use crate::measures::{pushforward, DiscreteMeasure, MeasureError};
use crate::numeric::KahanSum;
use crate::randmap::{derive_seed, NuSpec, RandomMapSample};

#[derive(Debug, Error)]
pub enum FourierError {
    #[error("need at least {need} non-empty dyadic bands in [{j_min}, {j_max}], found {found}")]
    InsufficientBands {
        need: usize,
        found: usize,
        j_min: i32,
        j_max: i32,
    },
    #[error("moment scan needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Sampled values of the transform of a probability measure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Spectrum {
    pub xi: Vec<f64>,
    pub values: Vec<Complex64>,
    /// Frequencies beyond this are dominated by the atomic discretization
    /// and must not enter decay fits.
    pub xi_max_valid: f64,
}

impl Spectrum {
    pub fn abs(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }
}

/// `mu_hat(xi) = sum_k w_k exp(-2 pi i xi x_k)`, deterministic order with
/// compensated accumulation per frequency.
pub fn transform(measure: &DiscreteMeasure, xi: &[f64]) -> Spectrum {
    let atoms = measure.atoms();
    let values: Vec<Complex64> = xi
        .par_iter()
        .map(|&f| {
            let mut re = KahanSum::new();
            let mut im = KahanSum::new();
            for &(x, w) in atoms {
                let (s, c) = (-TAU * f * x).sin_cos();
                re.add(w * c);
                im.add(w * s);
            }
            Complex64::new(re.value(), im.value())
        })
        .collect();
    Spectrum {
        xi: xi.to_vec(),
        values,
        xi_max_valid: 1.0 / (4.0 * measure.resolution()),
    }
}

/// Fused pushforward-then-transform; identical arithmetic to pushing first
/// and transforming after.
pub fn spectrum_of_pushforward(
    measure: &DiscreteMeasure,
    sample: &RandomMapSample,
    xi: &[f64],
) -> Result<Spectrum, FourierError> {
    let pushed = pushforward(measure, |x| sample.eval_map(x))?;
    Ok(transform(&pushed, xi))
}

/// Per-band suprema of |mu_hat| over the dyadic bands [2^j, 2^(j+1)).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BandMax {
    pub j: i32,
    pub max_abs: f64,
    pub n_freqs: usize,
}

pub fn dyadic_band_maxima(spectrum: &Spectrum) -> Vec<BandMax> {
    let mut bands: Vec<BandMax> = Vec::new();
    let mut order: Vec<usize> = (0..spectrum.xi.len())
        .filter(|&i| spectrum.xi[i] > 0.0)
        .collect();
    order.sort_by(|&a, &b| spectrum.xi[a].total_cmp(&spectrum.xi[b]));
    for i in order {
        let j = spectrum.xi[i].log2().floor() as i32;
        let a = spectrum.values[i].norm();
        match bands.last_mut() {
            Some(last) if last.j == j => {
                last.max_abs = last.max_abs.max(a);
                last.n_freqs += 1;
            }
            _ => bands.push(BandMax {
                j,
                max_abs: a,
                n_freqs: 1,
            }),
        }
    }
    bands
}

/// A fitted polynomial decay exponent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayFit {
    /// Estimated Fourier dimension of the measure, `-2 * slope` clamped to
    /// [0, 1].
    pub s_hat: f64,
    /// Raw log2(band max) vs j slope.
    pub slope: f64,
    pub residual: f64,
    pub bands: Vec<BandMax>,
    pub xi_max_valid: f64,
}

/// Least-squares fit of log2(band max) against the band index over
/// `[j_min, j_max]`, using only bands whose upper edge stays inside the
/// trusted window.
pub fn estimate_fourier_dim(
    spectrum: &Spectrum,
    j_min: i32,
    j_max: i32,
) -> Result<DecayFit, FourierError> {
    let bands: Vec<BandMax> = dyadic_band_maxima(spectrum)
        .into_iter()
        .filter(|b| {
            b.j >= j_min && b.j <= j_max && 2f64.powi(b.j + 1) <= spectrum.xi_max_valid
        })
        .collect();
    if bands.len() < 4 {
        return Err(FourierError::InsufficientBands {
            need: 4,
            found: bands.len(),
            j_min,
            j_max,
        });
    }
    let xs: Vec<f64> = bands.iter().map(|b| b.j as f64).collect();
    let ys: Vec<f64> = bands.iter().map(|b| b.max_abs.log2()).collect();
    let (slope, _, residual) = least_squares(&xs, &ys);
    Ok(DecayFit {
        s_hat: (-2.0 * slope).clamp(0.0, 1.0),
        slope,
        residual,
        bands,
        xi_max_valid: spectrum.xi_max_valid,
    })
}

/// Empirical moment of the randomized spectrum at one frequency.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MomentPoint {
    pub xi: f64,
    pub mean: f64,
    pub stderr: f64,
}

/// Monte-Carlo estimate of `E |mu_hat_omega(xi)|^(2q)` over fresh map
/// realizations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentScan {
    pub q: u32,
    pub n_samples: usize,
    pub points: Vec<MomentPoint>,
    /// Fitted slope of log2(mean) against log2(xi).
    pub slope: f64,
}

/// Runs `n_samples` independent realizations (child seeds derived from the
/// root seed), pushes the measure through each map, and averages
/// `|mu_hat(xi)|^(2q)` per frequency. Sample order is fixed, so the result
/// does not depend on the worker count.
#[allow(clippy::too_many_arguments)]
pub fn moment_scan(
    gaps: &Arc<GapSet>,
    schedule: &Arc<PerturbationSchedule>,
    measure: &DiscreteMeasure,
    nu: NuSpec,
    q: u32,
    xi: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<MomentScan, FourierError> {
    if n_samples < 2 {
        return Err(FourierError::TooFewSamples(n_samples));
    }
    assert!(q >= 1);
    let per_sample: Vec<Vec<f64>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let sample = RandomMapSample::sample(
                gaps.clone(),
                schedule.clone(),
                nu,
                derive_seed(seed, i as u64),
            );
            let spectrum = spectrum_of_pushforward(measure, &sample, xi)?;
            Ok(spectrum
                .values
                .iter()
                .map(|v| v.norm_sqr().powi(q as i32))
                .collect())
        })
        .collect::<Result<_, FourierError>>()?;

    let n = n_samples as f64;
    let points: Vec<MomentPoint> = (0..xi.len())
        .map(|k| {
            let mut acc = KahanSum::new();
            for row in &per_sample {
                acc.add(row[k]);
            }
            let mean = acc.value() / n;
            let mut var = KahanSum::new();
            for row in &per_sample {
                var.add((row[k] - mean) * (row[k] - mean));
            }
            MomentPoint {
                xi: xi[k],
                mean,
                stderr: (var.value() / (n * (n - 1.0))).sqrt(),
            }
        })
        .collect();

    let fit_points: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.xi > 0.0 && p.mean > 0.0)
        .map(|p| (p.xi.log2(), p.mean.log2()))
        .collect();
    let xs: Vec<f64> = fit_points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = fit_points.iter().map(|p| p.1).collect();
    let (slope, _, _) = least_squares(&xs, &ys);

    Ok(MomentScan {
        q,
        n_samples,
        points,
        slope,
    })
}

/// |mu_hat(xi)| of the middle-thirds self-similar measure, via the
/// infinite cosine product truncated at machine precision. Test oracle and
/// reference value.
pub fn ternary_cantor_transform_abs(xi: f64) -> f64 {
    let mut acc = 1.0f64;
    let mut arg = TAU * xi / 3.0;
    // Once the argument is tiny the remaining factors are 1 - O(arg^2).
    for _ in 0..4000 {
        acc *= arg.cos().abs();
        arg /= 3.0;
        if arg.abs() < 1e-9 {
            // Close the tail with the quadratic approximation of log cos:
            // sum_{k>=1} arg^2 / 9^k * (-1/2) ... negligible below 1e-18.
            break;
        }
        if acc == 0.0 {
            break;
        }
    }
    acc
}
