//! Named initial conditions and forcing shapes.
//!
//! Analytic profiles are grid functions followed by the hydrostatic
//! projection; random profiles draw a fixed set of low modes in a fixed
//! order, so the same seed gives the same function at every resolution
//! that resolves those modes.

use std::f64::consts::PI;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::basis::SpectralBasis;
use crate::error::{Error, Result};
use crate::field::{RawField, VelocityField};

/// Highest horizontal index and vertical index drawn by random profiles.
pub const RANDOM_MAX_MODE: usize = 3;
pub const RANDOM_MAX_VERTICAL: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Zero,
    /// `∇⊥(sin²(πx/Lx) sin²(πy/Ly))`, independent of z.
    Barotropic,
    /// Two cosine-in-z modes with zero depth average.
    Baroclinic,
    Mixed,
    Random,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "zero" => Profile::Zero,
            "barotropic" => Profile::Barotropic,
            "baroclinic" => Profile::Baroclinic,
            "mixed" => Profile::Mixed,
            "random" => Profile::Random,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown profile {other:?} (expected zero, barotropic, baroclinic, mixed or random)"
                )))
            }
        })
    }
}

/// Random raw coefficients on modes `m, n ≤ 3`, `k ≤ 2`, damped by
/// `1/(m² + n² + k²)`. Draws are made for every mode in the fixed range,
/// so unresolved modes consume the same random numbers.
pub fn random_raw(basis: &SpectralBasis, amplitude: f64, seed: u64) -> RawField {
    let spec = basis.spec();
    let mut raw = RawField::zeros(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for c in 0..2 {
        for k in 0..=RANDOM_MAX_VERTICAL {
            for m in 1..=RANDOM_MAX_MODE {
                for n in 1..=RANDOM_MAX_MODE {
                    let z: f64 = rng.sample(StandardNormal);
                    if k <= spec.k && m <= spec.mx && n <= spec.my {
                        let i = (m - 1) * spec.my + (n - 1);
                        raw.coeffs_mut()[[c, k, i]] = amplitude * z / (m * m + n * n + k * k) as f64;
                    }
                }
            }
        }
    }
    raw
}

/// Single raw mode `e_c s_mn c_k` with the given amplitude (1-based `c, m, n`).
pub fn single_mode_raw(basis: &SpectralBasis, c: usize, k: usize, m: usize, n: usize, amplitude: f64) -> Result<RawField> {
    let spec = basis.spec();
    if !(1..=2).contains(&c) || k > spec.k || !(1..=spec.mx).contains(&m) || !(1..=spec.my).contains(&n) {
        return Err(Error::InvalidArgument(format!(
            "mode (c={c}, k={k}, m={m}, n={n}) is outside the resolved range"
        )));
    }
    let mut raw = RawField::zeros(spec);
    raw.coeffs_mut()[[c - 1, k, (m - 1) * spec.my + (n - 1)]] = amplitude;
    Ok(raw)
}

/// Random projected field: fluctuation modes as in [`random_raw`] with
/// `k ≥ 1`, depth average `∇⊥ψ` with `ψ` a random combination of the beam
/// products `C_a(x) C_b(y)`, `a, b ≤ 3`. Exactly representable once
/// `Mx, My ≥ 3` and `K ≥ 2`.
pub fn random_field(basis: &Arc<SpectralBasis>, amplitude: f64, seed: u64) -> Result<VelocityField> {
    let spec = *basis.spec();
    let mut raw = random_raw(basis, amplitude, seed);
    raw.coeffs_mut().slice_mut(s![.., 0, ..]).fill(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut psi = Array2::zeros((spec.mx, spec.my));
    for a in 1..=RANDOM_MAX_MODE {
        for b in 1..=RANDOM_MAX_MODE {
            let z: f64 = rng.sample(StandardNormal);
            if a <= spec.mx && b <= spec.my {
                psi[[a - 1, b - 1]] = amplitude * z / (PI * (a * a + b * b) as f64);
            }
        }
    }
    let t = basis.tables();
    let planes = [0, 1].map(|c| basis.stream_component(&psi, t, c, 0, 0));
    let grid = basis.sample_indexed(|i, j, _| [planes[0][[i, j]], planes[1][[i, j]]]);
    let mut coeffs = basis.analyze([&grid.components[0], &grid.components[1]]);
    coeffs.slice_mut(s![.., 1.., ..]).fill(0.0);
    let bar = VelocityField::from_coeffs(basis.clone(), coeffs)?;
    basis.hydrostatic_project(&raw)?.axpy(1.0, &bar)
}

pub fn initial_field(basis: &Arc<SpectralBasis>, profile: Profile, amplitude: f64, seed: u64) -> Result<VelocityField> {
    let s = *basis.spec();
    let (kx, ky) = (PI / s.lx, PI / s.ly);
    let barotropic = move |x: f64, y: f64| {
        let (sx, sy) = ((kx * x).sin(), (ky * y).sin());
        [
            -amplitude * sx * sx * ky * (2.0 * ky * y).sin(),
            amplitude * sy * sy * kx * (2.0 * kx * x).sin(),
        ]
    };
    let baroclinic = move |x: f64, y: f64, z: f64| {
        let zeta = PI * (z + s.h) / (2.0 * s.h);
        [
            amplitude * (kx * x).sin() * (ky * y).sin() * zeta.cos(),
            amplitude * (2.0 * kx * x).sin() * (ky * y).sin() * (2.0 * zeta).cos(),
        ]
    };
    match profile {
        Profile::Zero => Ok(VelocityField::zeros(basis.clone())),
        Profile::Barotropic => basis.hydrostatic_project_grid(&basis.sample(|x, y, _| barotropic(x, y))),
        Profile::Baroclinic => basis.hydrostatic_project_grid(&basis.sample(baroclinic)),
        Profile::Mixed => basis.hydrostatic_project_grid(&basis.sample(|x, y, z| {
            let (a, b) = (barotropic(x, y), baroclinic(x, y, z));
            [a[0] + b[0], a[1] + b[1]]
        })),
        Profile::Random => random_field(basis, amplitude, seed),
    }
}
