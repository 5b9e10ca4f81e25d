//! Numerical laboratory for the Fourier decay of fractal measures under
//! random smooth perturbations of the real line.
//!
//! The crate is organized around one experiment: take a compact set given by
//! its gap structure, put a probability measure on it, widen every gap by a
//! random amount drawn from a smoothness-limited schedule, push the measure
//! through the resulting monotone map, and measure how fast the Fourier
//! transform of the image decays.
//!
//! * [`geometry`] — gap sets, perturbation schedules and gap-counting bounds.
//! * [`measures`] — Cantor-type constructions, Frostman checks, pushforward.
//! * [`randmap`] — the random map, its derivatives and modulus checks.
//! * [`fourier`] — spectra, decay-exponent fits and Monte-Carlo moments.

pub mod fourier;
pub mod geometry;
pub mod measures;
pub mod randmap;

mod numeric;

pub use numeric::{least_squares, KahanSum};
