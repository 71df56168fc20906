//! Electric potential: the velocity-scaled pulse inside the hole plus an
//! optional decaying background, and the phases the pulse imprints.
//!
//! Units have ħ = 1, so potentials are already divided by ħ (and carry the
//! charge). The pulse seen by a particle of velocity `v` is
//! `v·Q0(v t)·w(x)` on the hole, which keeps the total phase
//! `Φ = ∫ Q0(z) dz` independent of `v`.

use crate::error::{Error, Result};
use crate::geometry::{is_inside_k0, Point, TubeSpec};
use crate::quadrature;
use serde::{Deserialize, Serialize};

/// Absolute tolerance for all pulse integrals.
pub const QUADRATURE_TOL: f64 = 1e-12;

/// C¹ smoothstep `3u² − 2u³` clamped to `[0, 1]`.
pub(crate) fn smoothstep(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        u * u * (3.0 - 2.0 * u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PulseShape {
    /// `A·(1 − (z/L0)²)²` on `|z| < L0`.
    #[default]
    QuarticBump,
    /// Flat top `A` on `|z| ≤ L0/2` with C¹ smoothstep shoulders.
    SmoothPlateau,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseProfile {
    pub amplitude: f64,
    pub l0: f64,
    pub shape: PulseShape,
}

impl PulseProfile {
    pub fn new(amplitude: f64, l0: f64, shape: PulseShape) -> Self {
        Self {
            amplitude,
            l0,
            shape,
        }
    }

    pub fn with_amplitude(&self, amplitude: f64) -> Self {
        Self { amplitude, ..*self }
    }

    /// Points where the profile is only C¹; integrals split there.
    fn breakpoints(&self) -> Vec<f64> {
        match self.shape {
            PulseShape::QuarticBump => vec![-self.l0, self.l0],
            PulseShape::SmoothPlateau => vec![-self.l0, -0.5 * self.l0, 0.5 * self.l0, self.l0],
        }
    }

    /// `∫_lo^hi Q0(z) dz`.
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        let (lo, hi) = (lo.max(-self.l0), hi.min(self.l0));
        if lo >= hi {
            return 0.0;
        }
        let mut cuts: Vec<f64> = vec![lo];
        cuts.extend(self.breakpoints().into_iter().filter(|&b| b > lo && b < hi));
        cuts.push(hi);
        let f = |z: f64| eval_q0(self, z);
        let tol = QUADRATURE_TOL / cuts.len() as f64;
        cuts.windows(2)
            .map(|w| quadrature::integrate(&f, w[0], w[1], tol))
            .sum()
    }
}

pub fn eval_q0(profile: &PulseProfile, z: f64) -> f64 {
    let l0 = profile.l0;
    if z.abs() >= l0 {
        return 0.0;
    }
    match profile.shape {
        PulseShape::QuarticBump => {
            let s = 1.0 - (z / l0).powi(2);
            profile.amplitude * s * s
        }
        PulseShape::SmoothPlateau => {
            profile.amplitude * smoothstep(2.0 + 2.0 * z / l0) * smoothstep(2.0 - 2.0 * z / l0)
        }
    }
}

/// `Φ = ∫_{−L0}^{L0} Q0(z) dz`.
pub fn total_flux_phi(profile: &PulseProfile) -> f64 {
    profile.integral(-profile.l0, profile.l0)
}

/// `F−(t) = v ∫_{−∞}^{t} Q0(v s) ds = ∫_{−L0}^{min(vt, L0)} Q0(z) dz`.
pub fn phase_f_minus(t: f64, v: f64, profile: &PulseProfile) -> f64 {
    profile.integral(-profile.l0, (v * t).min(profile.l0))
}

/// `F+(t) = v ∫_{t}^{∞} Q0(v s) ds = ∫_{max(vt, −L0)}^{L0} Q0(z) dz`.
pub fn phase_f_plus(t: f64, v: f64, profile: &PulseProfile) -> f64 {
    profile.integral((v * t).max(-profile.l0), profile.l0)
}

/// Rescales the amplitude so that the total flux equals `target_phi`.
pub fn calibrate_amplitude_for_phase(
    target_phi: f64,
    profile: &PulseProfile,
) -> Result<PulseProfile> {
    let unit = total_flux_phi(&profile.with_amplitude(1.0));
    if unit == 0.0 {
        return Err(Error::Config("pulse profile has zero unit flux".into()));
    }
    Ok(profile.with_amplitude(target_phi / unit))
}

/// Pulse plus its spatial extension over the hole.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ABPotentialSpec {
    pub profile: PulseProfile,
    /// Radius of the flat region, `L1`.
    pub taper_inner: f64,
    /// Radius where the spatial weight reaches zero.
    pub taper_outer: f64,
}

impl ABPotentialSpec {
    pub fn new(
        profile: PulseProfile,
        taper_inner: f64,
        taper_outer: f64,
        tube: &TubeSpec,
    ) -> Result<Self> {
        let limit = tube.a1.min(tube.length / 2.0);
        if !(taper_inner < taper_outer) {
            return Err(Error::strict(
                "taper_inner < taper_outer",
                taper_inner,
                taper_outer,
            ));
        }
        if taper_outer > limit {
            return Err(Error::Constraint(format!(
                "taper_outer ≤ min(a1, L/2) violated: {taper_outer} > {limit}"
            )));
        }
        Ok(Self {
            profile,
            taper_inner,
            taper_outer,
        })
    }

    /// Radial C¹ weight: 1 on `B_{L1}`, 0 outside `B_{taper_outer}`.
    pub fn weight(&self, x: Point) -> f64 {
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        1.0 - smoothstep((r - self.taper_inner) / (self.taper_outer - self.taper_inner))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBackground")]
pub struct BackgroundSpec {
    /// `C_V`.
    pub strength: f64,
    /// Spatial decay exponent.
    pub rho: f64,
    /// Temporal growth exponent.
    pub mu: f64,
    pub enabled: bool,
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawBackground {
    strength: f64,
    rho: f64,
    mu: f64,
    enabled: bool,
}

impl Default for RawBackground {
    fn default() -> Self {
        let d = BackgroundSpec::disabled();
        Self {
            strength: d.strength,
            rho: d.rho,
            mu: d.mu,
            enabled: d.enabled,
        }
    }
}

impl TryFrom<RawBackground> for BackgroundSpec {
    type Error = Error;
    fn try_from(r: RawBackground) -> Result<Self> {
        BackgroundSpec::new(r.strength, r.rho, r.mu, r.enabled)
    }
}

impl BackgroundSpec {
    pub fn new(strength: f64, rho: f64, mu: f64, enabled: bool) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::strict("0 < rho", 0.0, rho));
        }
        if !(rho - mu > 1.0) {
            return Err(Error::Constraint(format!(
                "rho − mu > 1 violated: {} − {} = {} ≤ 1",
                rho,
                mu,
                rho - mu
            )));
        }
        Ok(Self {
            strength,
            rho,
            mu,
            enabled,
        })
    }

    pub fn disabled() -> Self {
        Self {
            strength: 0.0,
            rho: 2.0,
            mu: 0.0,
            enabled: false,
        }
    }

    /// Time factor `C_V·(1+|t|)^μ`.
    pub fn time_factor(&self, t: f64) -> f64 {
        self.strength * (1.0 + t.abs()).powf(self.mu)
    }

    /// Space factor `(1+|x|)^{−ρ}`.
    pub fn space_factor(&self, x: Point) -> f64 {
        (1.0 + (x[0] * x[0] + x[1] * x[1]).sqrt()).powf(-self.rho)
    }
}

pub fn eval_v0(t: f64, x: Point, bg: &BackgroundSpec) -> f64 {
    bg.time_factor(t) * bg.space_factor(x)
}

/// Total potential `v·Q0(vt)·w(x)·[x ∈ K0] + V0(t, x)·[enabled]`.
pub fn eval_v(
    t: f64,
    x: Point,
    v: f64,
    ab: &ABPotentialSpec,
    bg: &BackgroundSpec,
    tube: &TubeSpec,
) -> f64 {
    let pulse = if is_inside_k0(x, tube) {
        v * eval_q0(&ab.profile, v * t) * ab.weight(x)
    } else {
        0.0
    };
    let background = if bg.enabled { eval_v0(t, x, bg) } else { 0.0 };
    pulse + background
}
