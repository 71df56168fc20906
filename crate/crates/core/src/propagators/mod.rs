//! Free and interacting evolution, the Ansatz, and the numerical wave and
//! scattering operators built from them.

mod interacting;
mod lines;

pub use interacting::{InteractingPropagator, PotentialContext, UniformPotential};
pub use lines::{LineSolver, Stencil};

use crate::error::{Error, Result};
use crate::field::ComplexField;
use crate::geometry::{build_masks, lambda_vhat_clearance, DomainMasks, GridSpec, TubeSpec};
use crate::potentials::{phase_f_minus, PulseProfile};
use crate::spectral::Spectral;
use crate::states::{boost, momentum_cutoff, Envelope};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Largest admissible kinetic phase per step, `dt·m·v²`.
pub const MAX_PHASE_PER_STEP: f64 = 0.05;

/// Tolerated relative norm drift over a run without absorber.
pub const NORM_DRIFT_TOL: f64 = 1e-8;

/// `e^{−itH0}` as the exact spectral multiplier `e^{−it|p|²/2m}`.
pub fn free_evolve(field: &ComplexField, t: f64, mass: f64, spectral: &Spectral) -> ComplexField {
    let mut out = field.clone();
    if t != 0.0 {
        spectral.apply_multiplier(&mut out, |p1, p2| {
            Complex64::from_polar(1.0, -t * (p1 * p1 + p2 * p2) / (2.0 * mass))
        });
    }
    out
}

/// `e^{−itH0}` for a state whose x2 momentum is centred at `carrier`.
///
/// Identical to [`free_evolve`] except that the FFT bins are labelled in the
/// momentum band around the carrier, so the multiplier follows the boost
/// instead of folding the far tail of the spectrum back across the band edge.
pub fn free_evolve_boosted(
    field: &ComplexField,
    t: f64,
    mass: f64,
    carrier: f64,
    spectral: &Spectral,
) -> ComplexField {
    let mut out = field.clone();
    if t != 0.0 {
        spectral.apply_multiplier_in_band(&mut out, carrier, |p1, p2| {
            Complex64::from_polar(1.0, -t * (p1 * p1 + p2 * p2) / (2.0 * mass))
        });
    }
    out
}

/// Max node-wise gap between `e^{−imvx2} e^{−itH0} e^{imvx2} φ` and
/// `e^{−imv²t/2} e^{−ip2·vt} e^{−itH0} φ`, with the boosted free evolution
/// labelled in the band around `mv`.
pub fn verify_boost_identity(
    env: &Envelope,
    grid: &GridSpec,
    spectral: &Spectral,
    mass: f64,
    v: f64,
    t: f64,
) -> Result<f64> {
    let phi = &env.samples;
    let boosted = boost(phi, grid, mass, v)?;
    let lhs = boost(
        &free_evolve_boosted(&boosted, t, mass, mass * v, spectral),
        grid,
        mass,
        -v,
    )?;
    let mut rhs = phi.clone();
    spectral.apply_multiplier(&mut rhs, |p1, p2| {
        Complex64::from_polar(
            1.0,
            -0.5 * mass * v * v * t - p2 * v * t - t * (p1 * p1 + p2 * p2) / (2.0 * mass),
        )
    });
    Ok(lhs.max_abs_diff(&rhs))
}

/// `e^{−iF−(t)} e^{−itH0} φ_v`, with `φ_v` carried at momentum `m·v`.
pub fn ansatz_evolve(
    phi_v: &ComplexField,
    t: f64,
    v: f64,
    profile: &PulseProfile,
    mass: f64,
    spectral: &Spectral,
) -> ComplexField {
    let phase = phase_f_minus(t, v, profile);
    let mut out = free_evolve_boosted(phi_v, t, mass, mass * v, spectral);
    if phase != 0.0 {
        out.scale(Complex64::from_polar(1.0, -phase));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    StrangCnAdi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    pub scheme: Scheme,
    /// Kinetic phase per step `dt·m·v²`; the step is derived from it.
    pub phase_per_step: f64,
    pub cap_strength: f64,
    /// Start distance `Z0`; the run starts at `t0 = −Z0/v`.
    pub t0_distance: f64,
    /// Stop distance `Z1`; the run ends at `t1 = Z1/v`.
    pub t1_distance: f64,
    pub probe_count: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            scheme: Scheme::StrangCnAdi,
            phase_per_step: MAX_PHASE_PER_STEP,
            cap_strength: 0.0,
            t0_distance: 8.0,
            t1_distance: 8.0,
            probe_count: 32,
        }
    }
}

impl SolverParams {
    pub fn validate(&self, tube: &TubeSpec, radius: f64) -> Result<()> {
        let reach = tube.l0 + radius;
        if !(self.t0_distance > reach) {
            return Err(Error::strict("L0 + R < Z0", reach, self.t0_distance));
        }
        if !(self.t1_distance > reach) {
            return Err(Error::strict("L0 + R < Z1", reach, self.t1_distance));
        }
        if !(self.phase_per_step > 0.0 && self.phase_per_step <= MAX_PHASE_PER_STEP) {
            return Err(Error::Constraint(format!(
                "dt·m·v² ≤ {MAX_PHASE_PER_STEP} violated: {}",
                self.phase_per_step
            )));
        }
        if self.probe_count < 2 {
            return Err(Error::Config("probe_count must be at least 2".into()));
        }
        if self.cap_strength < 0.0 {
            return Err(Error::Config("cap_strength must be non-negative".into()));
        }
        Ok(())
    }

    pub fn dt(&self, mass: f64, v: f64) -> f64 {
        self.phase_per_step / (mass * v * v)
    }

    pub fn window(&self, v: f64) -> (f64, f64) {
        (-self.t0_distance / v, self.t1_distance / v)
    }

    /// Uniform probe instants over the window, plus `t = 0`.
    pub fn probe_times(&self, v: f64) -> Vec<f64> {
        let (t0, t1) = self.window(v);
        let n = self.probe_count.max(2);
        let mut times: Vec<f64> = (0..n)
            .map(|k| t0 + (t1 - t0) * k as f64 / (n - 1) as f64)
            .collect();
        times[n - 1] = t1;
        if t0 < 0.0 && t1 > 0.0 && !times.iter().any(|&t| t.abs() < 1e-12 * (t1 - t0)) {
            times.push(0.0);
            times.sort_by(f64::total_cmp);
        }
        times
    }
}

/// Geometry, masks and transforms shared by every run on one grid.
pub struct Scene {
    pub grid: GridSpec,
    pub tube: TubeSpec,
    pub masks: DomainMasks,
    pub spectral: Spectral,
    pub mass: f64,
}

impl Scene {
    pub fn new(grid: GridSpec, tube: TubeSpec, cap_strength: f64, mass: f64) -> Result<Self> {
        if !(mass > 0.0) {
            return Err(Error::strict("0 < m", 0.0, mass));
        }
        let masks = build_masks(&grid, &tube, cap_strength)?;
        let spectral = Spectral::new(&grid);
        Ok(Self {
            grid,
            tube,
            masks,
            spectral,
            mass,
        })
    }

    /// Same box without obstacle or absorber.
    pub fn free(grid: GridSpec, tube: TubeSpec, mass: f64) -> Self {
        let masks = DomainMasks::free(&grid);
        let spectral = Spectral::new(&grid);
        Self {
            grid,
            tube,
            masks,
            spectral,
            mass,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub velocity: f64,
    pub times: Vec<f64>,
    pub norms: Vec<f64>,
    /// Lab-frame states at the probes; empty unless requested.
    pub fields: Vec<ComplexField>,
    pub steps: usize,
}

/// Runs the interacting dynamics for a boosted envelope and hands every probe
/// state (lab frame) to `observer`.
///
/// The run starts from the free state `e^{−it0H0}φ_v` at `t0 = −Z0/v`, which
/// stands in for the incoming wave operator applied to `φ_v`.
pub fn approx_psi_v(
    env: &Envelope,
    v: f64,
    params: &SolverParams,
    scene: &Scene,
    potential: PotentialContext,
    store_fields: bool,
    mut observer: impl FnMut(f64, &ComplexField) -> Result<()>,
) -> Result<Trajectory> {
    params.validate(&scene.tube, env.radius)?;
    if !lambda_vhat_clearance(&scene.tube, [0.0, 1.0], scene.tube.l1) {
        return Err(Error::Geometry(
            "B_L1 is not in the clear line-of-sight region along the beam".into(),
        ));
    }
    let phi_v = boost(&env.samples, &scene.grid, scene.mass, v)?;
    let times = params.probe_times(v);
    let t_start = times[0];
    let psi0 = free_evolve_boosted(&phi_v, t_start, scene.mass, scene.mass * v, &scene.spectral);

    let mut prop = InteractingPropagator::new(
        &scene.grid,
        &scene.tube,
        &scene.masks,
        scene.mass,
        v,
        potential,
    )?;
    let mut u = prop.to_carrier(&psi0);
    let cell = scene.grid.cell_area();
    let norm0 = u.l2_norm(cell);
    let dt_max = params.dt(scene.mass, v);
    let mut traj = Trajectory {
        velocity: v,
        ..Default::default()
    };
    let mut t = t_start;
    for &probe in &times {
        traj.steps += prop.advance(&mut u, t, probe, dt_max)?;
        t = probe;
        let norm = u.l2_norm(cell);
        if !norm.is_finite() {
            return Err(Error::Solver(format!(
                "state is no longer finite at t = {t}"
            )));
        }
        if !scene.masks.has_absorber() && (norm - norm0).abs() > NORM_DRIFT_TOL * norm0 {
            return Err(Error::Resolution(format!(
                "norm drifted from {norm0} to {norm} by t = {t} without absorber"
            )));
        }
        let psi = prop.from_carrier(&u, t - t_start);
        observer(t, &psi)?;
        traj.times.push(t);
        traj.norms.push(norm);
        if store_fields {
            traj.fields.push(psi);
        }
    }
    Ok(traj)
}

/// Numerical `Sφ_v`: interacting run to `t1`, then free evolution back to 0.
pub fn scattering_apply(
    env: &Envelope,
    v: f64,
    params: &SolverParams,
    scene: &Scene,
    potential: PotentialContext,
) -> Result<ComplexField> {
    let mut last = None;
    approx_psi_v(env, v, params, scene, potential, false, |t, psi| {
        last = Some((t, psi.clone()));
        Ok(())
    })?;
    let (t1, psi) = last.ok_or_else(|| Error::Solver("run produced no probes".into()))?;
    Ok(free_evolve_boosted(
        &psi,
        -t1,
        scene.mass,
        scene.mass * v,
        &scene.spectral,
    ))
}

/// Mass of the momentum-localized, free-evolved boosted packet outside the
/// cone ball `|x − vt·ê2| ≤ vt/4`.
///
/// Evaluated in the co-moving frame: the boost identity turns the packet into
/// `e^{−itH0}φ̃` translated by `vt`, so the ball is centred at the origin.
pub fn leakage_diagnostic(
    env: &Envelope,
    grid: &GridSpec,
    spectral: &Spectral,
    v: f64,
    t: f64,
    mass: f64,
) -> Result<f64> {
    if !(t > 0.0 && v > 0.0) {
        return Err(Error::Config(format!(
            "leakage needs t > 0 and v > 0, got t = {t}, v = {v}"
        )));
    }
    let reach = v * t;
    if env.radius > reach / 8.0 {
        return Err(Error::Constraint(format!(
            "R ≤ |vt|/8 violated: {} > {}",
            env.radius,
            reach / 8.0
        )));
    }
    let half = 0.5 * grid.extent[0].min(grid.extent[1]);
    if reach / 4.0 >= half {
        return Err(Error::Geometry(format!(
            "cone ball radius {} exceeds the box half-width {half}",
            reach / 4.0
        )));
    }
    let localized = momentum_cutoff(&env.samples, spectral, v, mass);
    let evolved = free_evolve(&localized, t, mass, spectral);
    let r2 = (reach / 4.0).powi(2);
    let n2 = grid.n2();
    let outside: f64 = evolved
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(k, _)| {
            let [x1, x2] = grid.point(k / n2, k % n2);
            x1 * x1 + x2 * x2 > r2
        })
        .map(|(_, z)| z.norm_sqr())
        .sum();
    Ok((outside * grid.cell_area()).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::PulseShape;
    use crate::states::{commensurate_velocity, make_envelope, EnvelopeKind};

    fn scene() -> (GridSpec, Spectral, Envelope) {
        let g = GridSpec::new([12.0, 24.0], [128, 256]);
        let sp = Spectral::new(&g);
        let e = make_envelope(2.5, &g, &TubeSpec::default(), EnvelopeKind::BumpC2, 1.0).unwrap();
        (g, sp, e)
    }

    #[test]
    fn free_evolve_identity_and_unitarity() {
        let (g, sp, e) = scene();
        assert_eq!(free_evolve(&e.samples, 0.0, 1.0, &sp), e.samples);
        for t in [-3.0, 0.1, 2.0] {
            let n = free_evolve(&e.samples, t, 1.0, &sp).l2_norm(g.cell_area());
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn free_gaussian_spreads_as_closed_form() {
        let g = GridSpec::new([40.0, 40.0], [256, 256]);
        let sp = Spectral::new(&g);
        let (sigma, m, t) = (1.0, 1.0, 3.0);
        let f = ComplexField::from_fn(256, 256, |i, j| {
            let [x1, x2] = g.point(i, j);
            Complex64::new((-(x1 * x1 + x2 * x2) / (4.0 * sigma * sigma)).exp(), 0.0)
        });
        let out = free_evolve(&f, t, m, &sp);
        let (mut w, mut s2) = (0.0, 0.0);
        for i in 0..256 {
            for j in 0..256 {
                let a = out[(i, j)].norm_sqr();
                w += a;
                s2 += a * g.x1(i).powi(2);
            }
        }
        let measured = (s2 / w).sqrt();
        let oracle = sigma * (1.0 + (t / (2.0 * m * sigma * sigma)).powi(2)).sqrt();
        assert!((measured - oracle).abs() < 1e-6, "{measured} {oracle}");
    }

    #[test]
    fn boost_identity_holds() {
        let (g, sp, e) = scene();
        let v = commensurate_velocity(4.0, 1.0, 24.0);
        assert_eq!(
            verify_boost_identity(&e, &g, &sp, 1.0, 0.0, 1.3).unwrap(),
            0.0
        );
        assert!(verify_boost_identity(&e, &g, &sp, 1.0, v, 0.0).unwrap() <= 1e-14);
        for t in [-2.0, 0.7, 5.0] {
            let d = verify_boost_identity(&e, &g, &sp, 1.0, v, t).unwrap();
            assert!(d <= 1e-12, "{d:e}");
        }
        assert!(verify_boost_identity(&e, &g, &sp, 1.0, 4.01, 0.7).is_err());
    }

    #[test]
    fn fixed_band_folding_is_small_but_visible() {
        // With the plain FFT labelling the tail that crosses the band edge
        // picks up the wrong kinetic phase; that gap is what the carrier
        // band removes.
        let (g, sp, e) = scene();
        let v = commensurate_velocity(4.0, 1.0, 24.0);
        let boosted = boost(&e.samples, &g, 1.0, v).unwrap();
        let plain = free_evolve(&boosted, 0.7, 1.0, &sp);
        let banded = free_evolve_boosted(&boosted, 0.7, 1.0, v, &sp);
        let gap = plain.max_abs_diff(&banded);
        assert!(gap > 1e-12 && gap < 1e-4, "{gap:e}");
        assert_eq!(
            free_evolve_boosted(&e.samples, 0.7, 1.0, 0.0, &sp),
            free_evolve(&e.samples, 0.7, 1.0, &sp)
        );
    }

    #[test]
    fn ansatz_examples() {
        let (g, sp, e) = scene();
        let v = commensurate_velocity(8.0, 1.0, 24.0);
        let phi_v = boost(&e.samples, &g, 1.0, v).unwrap();
        let zero = PulseProfile::new(0.0, 2.0, PulseShape::QuarticBump);
        let free = free_evolve_boosted(&phi_v, 0.3, 1.0, v, &sp);
        assert_eq!(ansatz_evolve(&phi_v, 0.3, v, &zero, 1.0, &sp), free);
        let p = PulseProfile::new(0.9, 2.0, PulseShape::QuarticBump);
        let phi = crate::potentials::total_flux_phi(&p);
        let t = 2.0 / v + 0.1;
        let expected =
            free_evolve_boosted(&phi_v, t, 1.0, v, &sp).scaled(Complex64::from_polar(1.0, -phi));
        assert!(ansatz_evolve(&phi_v, t, v, &p, 1.0, &sp).max_abs_diff(&expected) < 1e-13);
        let n = ansatz_evolve(&phi_v, 0.05, v, &p, 1.0, &sp).l2_norm(g.cell_area());
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn probe_times_cover_window_and_origin() {
        let p = SolverParams::default();
        let times = p.probe_times(8.0);
        assert_eq!(times.len(), 33);
        assert_eq!(times[0], -1.0);
        assert_eq!(*times.last().unwrap(), 1.0);
        assert!(times.contains(&0.0));
        assert!(times.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn solver_params_validation() {
        let tube = TubeSpec::default();
        let p = SolverParams {
            t0_distance: 4.5,
            ..Default::default()
        };
        assert!(p
            .validate(&tube, 2.5)
            .unwrap_err()
            .to_string()
            .contains("L0 + R < Z0"));
        let p = SolverParams {
            phase_per_step: 0.06,
            ..Default::default()
        };
        assert!(p.validate(&tube, 2.5).is_err());
        assert!(SolverParams::default().validate(&tube, 2.5).is_ok());
    }

    #[test]
    fn leakage_guards_and_bounds() {
        let g = GridSpec::new([64.0, 64.0], [512, 512]);
        let sp = Spectral::new(&g);
        let e = make_envelope(2.5, &g, &TubeSpec::default(), EnvelopeKind::BumpC2, 1.0).unwrap();
        assert!(leakage_diagnostic(&e, &g, &sp, 8.0, 0.0, 1.0).is_err());
        assert!(leakage_diagnostic(&e, &g, &sp, 4.0, 1.0, 1.0).is_err());
        let l = leakage_diagnostic(&e, &g, &sp, 8.0, 5.0, 1.0).unwrap();
        assert!((0.0..=1.0).contains(&l));
    }
}
