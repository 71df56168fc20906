//! Compactly supported envelopes, boosts and the momentum cutoff.

use crate::error::{Error, Result};
use crate::field::ComplexField;
use crate::geometry::{GridSpec, TubeSpec};
use crate::potentials::smoothstep;
use crate::spectral::Spectral;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Minimum number of cells across the envelope radius.
pub const MIN_CELLS_PER_RADIUS: f64 = 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeKind {
    /// `c·(1 − |x|²/R²)³` inside `B_R`.
    #[default]
    BumpC2,
}

#[derive(Debug, Clone)]
pub struct Envelope {
    pub radius: f64,
    pub kind: EnvelopeKind,
    pub normalization: f64,
    /// Peak value `c`.
    pub peak: f64,
    pub samples: ComplexField,
}

/// Envelope parameters as they appear in a run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvelopeSpec {
    #[serde(rename = "R")]
    pub radius: f64,
    pub kind: EnvelopeKind,
    pub normalization: f64,
}

impl Default for EnvelopeSpec {
    fn default() -> Self {
        Self {
            radius: 2.5,
            kind: EnvelopeKind::BumpC2,
            normalization: 1.0,
        }
    }
}

impl EnvelopeSpec {
    pub fn build(&self, grid: &GridSpec, tube: &TubeSpec) -> Result<Envelope> {
        make_envelope(self.radius, grid, tube, self.kind, self.normalization)
    }
}

fn bump_profile(r2_over_r2: f64) -> f64 {
    if r2_over_r2 >= 1.0 {
        0.0
    } else {
        (1.0 - r2_over_r2).powi(3)
    }
}

pub fn make_envelope(
    radius: f64,
    grid: &GridSpec,
    tube: &TubeSpec,
    kind: EnvelopeKind,
    normalization: f64,
) -> Result<Envelope> {
    let limit = tube.max_envelope_radius();
    if !(radius > 0.0) {
        return Err(Error::strict("0 < R", 0.0, radius));
    }
    if !(radius < limit) {
        return Err(Error::strict("R < L1 − L0", radius, limit));
    }
    let dx = grid.dx();
    let cells = radius / dx[0].max(dx[1]);
    if cells < MIN_CELLS_PER_RADIUS {
        return Err(Error::Resolution(format!(
            "envelope radius spans {cells:.1} cells, need at least {MIN_CELLS_PER_RADIUS}"
        )));
    }
    let inv_r2 = 1.0 / (radius * radius);
    let mut samples = ComplexField::from_fn(grid.n1(), grid.n2(), |i, j| {
        let [x1, x2] = grid.point(i, j);
        let value = match kind {
            EnvelopeKind::BumpC2 => bump_profile((x1 * x1 + x2 * x2) * inv_r2),
        };
        Complex64::new(value, 0.0)
    });
    let raw = samples.l2_norm(grid.cell_area());
    if raw == 0.0 {
        return Err(Error::Resolution(
            "envelope has no support on the grid".into(),
        ));
    }
    let peak = normalization / raw;
    samples.scale(Complex64::new(peak, 0.0));
    Ok(Envelope {
        radius,
        kind,
        normalization,
        peak,
        samples,
    })
}

/// Rounds `v` to the nearest velocity whose momentum `m·v` is a multiple of `2π/X2`.
pub fn commensurate_velocity(v: f64, mass: f64, extent2: f64) -> f64 {
    let quantum = TAU / extent2;
    (mass * v / quantum).round() * quantum / mass
}

/// True when `m·v` sits on the momentum lattice `2π/X2 · ℤ`.
pub fn is_commensurate(v: f64, mass: f64, extent2: f64) -> bool {
    let k = mass * v * extent2 / TAU;
    (k - k.round()).abs() <= 1e-9 * k.abs().max(1.0)
}

/// Multiplies by `e^{i m v x2}`.
pub fn boost(field: &ComplexField, grid: &GridSpec, mass: f64, v: f64) -> Result<ComplexField> {
    if !is_commensurate(v, mass, grid.extent[1]) {
        return Err(Error::Config(format!(
            "velocity {v} is not commensurate with the box: m·v·X2/2π = {}",
            mass * v * grid.extent[1] / TAU
        )));
    }
    Ok(boost_unchecked(field, grid, mass * v))
}

/// Multiplies by `e^{i k x2}` without the periodicity check.
pub(crate) fn boost_unchecked(field: &ComplexField, grid: &GridSpec, k: f64) -> ComplexField {
    let phases: Vec<Complex64> = (0..grid.n2())
        .map(|j| Complex64::from_polar(1.0, k * grid.x2(j)))
        .collect();
    let (n1, n2) = field.dims();
    let mut out = field.clone();
    for row in out.as_mut_slice().chunks_mut(n2) {
        for (z, p) in row.iter_mut().zip(&phases) {
            *z *= p;
        }
    }
    debug_assert_eq!(out.len(), n1 * n2);
    out
}

/// Radial window: 1 for `|p| ≤ plateau`, 0 for `|p| ≥ support`, smoothstep between.
pub fn plateau_window(p: f64, plateau: f64, support: f64) -> f64 {
    1.0 - smoothstep((p - plateau) / (support - plateau))
}

/// `φ̃ = g(p/v)φ` with plateau `m/32` and support `m/16` for `g`.
pub fn momentum_cutoff(
    field: &ComplexField,
    spectral: &Spectral,
    v: f64,
    mass: f64,
) -> ComplexField {
    let (plateau, support) = (mass * v / 32.0, mass * v / 16.0);
    let mut out = field.clone();
    spectral.apply_multiplier(&mut out, |p1, p2| {
        Complex64::new(
            plateau_window((p1 * p1 + p2 * p2).sqrt(), plateau, support),
            0.0,
        )
    });
    out
}

/// `‖(1 + |p|²) φ̂‖` with the discrete Parseval weight.
pub fn h2_norm(field: &ComplexField, spectral: &Spectral) -> f64 {
    let mut coeffs = field.clone();
    spectral.forward(&mut coeffs);
    let n2 = spectral.dims().1;
    for (k, z) in coeffs.as_mut_slice().iter_mut().enumerate() {
        let (p1, p2) = (spectral.p1[k / n2], spectral.p2[k % n2]);
        *z *= 1.0 + p1 * p1 + p2 * p2;
    }
    spectral.norm_sqr_from_coefficients(&coeffs).sqrt()
}

/// RMS spread of the `x2` momentum about its mean.
pub fn momentum_spread_x2(field: &ComplexField, spectral: &Spectral) -> f64 {
    let mut coeffs = field.clone();
    spectral.forward(&mut coeffs);
    let n2 = spectral.dims().1;
    let (mut w, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (k, z) in coeffs.as_slice().iter().enumerate() {
        let p = spectral.p2[k % n2];
        let a = z.norm_sqr();
        w += a;
        m1 += a * p;
        m2 += a * p * p;
    }
    if w == 0.0 {
        return 0.0;
    }
    (m2 / w - (m1 / w).powi(2)).max(0.0).sqrt()
}
