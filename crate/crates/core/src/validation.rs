//! Exact-identity suite: checks that hold to rounding on any resolution.
//! Runs in seconds on a reduced copy of the configured box.

use crate::error::{Error, Result};
use crate::experiments::Setup;
use crate::geometry::GridSpec;
use crate::potentials::{
    eval_q0, phase_f_minus, phase_f_plus, total_flux_phi, PulseProfile, PulseShape,
};
use crate::propagators::{verify_boost_identity, InteractingPropagator, PotentialContext, Scene};
use crate::states::{boost, commensurate_velocity};
use num_complex::Complex64;
use serde::Serialize;
use std::sync::Arc;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn new(name: &'static str, value: f64, tolerance: f64) -> Self {
        Self {
            name,
            value,
            tolerance,
            pass: value.is_finite() && value <= tolerance,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub velocity: f64,
    pub unitarity_steps: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            velocity: 8.0,
            unitarity_steps: 1000,
        }
    }
}

/// Half the nodes per axis, keeping the extent.
fn reduced(grid: &GridSpec) -> GridSpec {
    GridSpec {
        points: [grid.points[0] / 2, grid.points[1] / 2],
        ..*grid
    }
}

/// Composite Simpson on `n` panels; deliberately unrelated to the library quadrature.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n)
        .map(|k| f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 })
        .sum();
    (f(a) + f(b) + inner) * h / 3.0
}

pub fn run_suite(setup: &Setup, opts: &SuiteOptions) -> Result<Vec<Check>> {
    let mut checks = Vec::new();

    // closed form and an independent quadrature for the flux of the unit quartic bump
    let unit = PulseProfile::new(1.0, 1.0, PulseShape::QuarticBump);
    let phi = total_flux_phi(&unit);
    checks.push(Check::new(
        "flux_quartic_closed_form",
        (phi - 16.0 / 15.0).abs(),
        1e-10,
    ));
    let oracle = simpson(|z| eval_q0(&unit, z), -1.0, 1.0, 2000);
    checks.push(Check::new(
        "flux_quartic_vs_simpson",
        (phi - oracle).abs(),
        1e-10,
    ));

    let pulse = setup.pulse(setup.target_phi)?;
    let profile = pulse.profile;
    let total = total_flux_phi(&profile);
    let split = (-40..=40)
        .map(|k| {
            let t = 0.05 * k as f64;
            (phase_f_plus(t, opts.velocity, &profile) + phase_f_minus(t, opts.velocity, &profile)
                - total)
                .abs()
        })
        .fold(0.0, f64::max);
    checks.push(Check::new("f_plus_plus_f_minus", split, 1e-12));

    let mut small = setup.clone();
    small.grid = reduced(&setup.grid);
    let scene = Scene::new(small.grid, small.tube, 0.0, small.mass)?;
    let env = small.envelope.build(&small.grid, &small.tube)?;
    let v = commensurate_velocity(opts.velocity, small.mass, small.grid.extent[1]);
    small.grid.check_resolution(small.mass, v)?;
    let cell = small.grid.cell_area();

    let boost_gap = [0.05, 0.2, 0.5]
        .iter()
        .map(|&t| verify_boost_identity(&env, &small.grid, &scene.spectral, small.mass, v, t))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    checks.push(Check::new("boost_identity", boost_gap, 1e-12));

    let mut coeffs = env.samples.clone();
    scene.spectral.forward(&mut coeffs);
    let direct = env.samples.l2_norm(cell).powi(2);
    let parseval = (scene.spectral.norm_sqr_from_coefficients(&coeffs) - direct).abs() / direct;
    checks.push(Check::new("parseval", parseval, 1e-12));

    let mut psi = boost(&env.samples, &small.grid, small.mass, v)?;
    scene.masks.restrict(&mut psi);
    let dt = small.solver.dt(small.mass, v);

    let c = 0.7;
    let mut plain = InteractingPropagator::new(
        &small.grid,
        &small.tube,
        &scene.masks,
        small.mass,
        v,
        PotentialContext::free(),
    )?;
    let mut shifted = InteractingPropagator::new(
        &small.grid,
        &small.tube,
        &scene.masks,
        small.mass,
        v,
        PotentialContext::free().with_uniform(Arc::new(move |_| c)),
    )?;
    let (mut a, mut b) = (plain.to_carrier(&psi), shifted.to_carrier(&psi));
    let steps = 50;
    for s in 0..steps {
        let t = s as f64 * dt;
        plain.step(&mut a, t, dt)?;
        shifted.step(&mut b, t, dt)?;
    }
    let undone = b.scaled(Complex64::from_polar(1.0, c * dt * steps as f64));
    checks.push(Check::new("gauge_phase", undone.max_abs_diff(&a), 1e-12));

    let mut prop = InteractingPropagator::new(
        &small.grid,
        &small.tube,
        &scene.masks,
        small.mass,
        v,
        PotentialContext::free().with_pulse(pulse, v),
    )?;
    let mut u = prop.to_carrier(&psi);
    let n0 = u.l2_norm(cell);
    // centred on t = 0 so the pulse is switched on during the run
    let t0 = -0.5 * opts.unitarity_steps as f64 * dt;
    let mut last = n0;
    let mut worst: f64 = 0.0;
    for s in 0..opts.unitarity_steps {
        prop.step(&mut u, t0 + s as f64 * dt, dt)?;
        let n = u.l2_norm(cell);
        worst = worst.max((n - last).abs() / n0);
        last = n;
    }
    checks.push(Check::new("unitarity_per_step", worst, 1e-10));
    Ok(checks)
}

/// Fails with an invariant error naming every failed check.
pub fn require_all(checks: &[Check]) -> Result<()> {
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| format!("{} = {:e} > {:e}", c.name, c.value, c.tolerance))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Invariant(failed.join("; ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_is_exact_on_cubics() {
        let got = simpson(|x| x * x * x - 2.0 * x + 1.0, -1.0, 2.0, 6);
        assert!((got - 3.75).abs() < 1e-13, "{got}");
    }

    #[test]
    fn failures_are_named() {
        let checks = [
            Check::new("a", 1.0, 2.0),
            Check::new("b", 3.0, 2.0),
            Check::new("c", f64::NAN, 1.0),
        ];
        let err = require_all(&checks).unwrap_err();
        assert_eq!(err.exit_code(), 5);
        let msg = err.to_string();
        assert!(
            msg.contains("b = 3e0 > 2e0") && msg.contains("c = NaN") && !msg.contains("a ="),
            "{msg}"
        );
    }
}
