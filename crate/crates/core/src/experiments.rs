//! Velocity sweeps of the Ansatz error, the wave and scattering operator
//! limits, rate fits, and the two-arm fringe.
//!
//! Every measured point is paired with a control run at the same velocity and
//! resolution: no pulse and no background, compared against free evolution.
//! The control error is the floor below which the physical error cannot be
//! resolved, and a point only enters a rate fit when it clears 5× its floor.

use crate::error::{Error, Result};
use crate::field::ComplexField;
use crate::geometry::{l2_norm_on_domain, GridSpec, TubeSpec};
use crate::potentials::{
    calibrate_amplitude_for_phase, phase_f_minus, phase_f_plus, ABPotentialSpec, BackgroundSpec,
    PulseProfile, PulseShape,
};
use crate::propagators::{
    ansatz_evolve, approx_psi_v, free_evolve_boosted, leakage_diagnostic, PotentialContext, Scene,
    SolverParams,
};
use crate::spectral::Spectral;
use crate::states::{
    boost, commensurate_velocity, h2_norm, momentum_cutoff, momentum_spread_x2, Envelope,
    EnvelopeSpec,
};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI, SQRT_2, TAU};
use std::time::Instant;

/// Half-width of the slope acceptance band around the model exponent.
pub const SLOPE_BAND: f64 = 0.3;
/// A point enters a fit only when its error is at least this multiple of its floor.
pub const FLOOR_FACTOR: f64 = 5.0;
/// Relative rise tolerated between adjacent velocities in the monotone check.
pub const MONOTONE_SLACK: f64 = 0.05;

pub fn default_velocities() -> Vec<f64> {
    vec![4.0, 4.0 * SQRT_2, 8.0, 8.0 * SQRT_2, 16.0]
}

/// Error envelope `E(v)`: `v^−ρ` for `0 < ρ < 1`, `|ln v|/v` at `ρ = 1`, `1/v` beyond.
pub fn eval_error_bound_e(v: f64, rho: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::strict("0 < rho", 0.0, rho));
    }
    if !(v > 1.0) {
        return Err(Error::strict("1 < v", 1.0, v));
    }
    Ok(if rho < 1.0 {
        v.powf(-rho)
    } else if rho == 1.0 {
        v.ln().abs() / v
    } else {
        1.0 / v
    })
}

/// Least-squares line through `(ln v, ln err)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// RMS of the log residuals.
    pub residual: f64,
    /// Two standard errors of the slope.
    pub half_width: f64,
}

impl RateFit {
    pub fn within(&self, lo: f64, hi: f64) -> bool {
        self.slope >= lo && self.slope <= hi
    }
}

pub fn fit_rate(velocities: &[f64], errors: &[f64]) -> Result<RateFit> {
    if velocities.len() != errors.len() {
        return Err(Error::Config(format!(
            "fit needs one error per velocity, got {} and {}",
            velocities.len(),
            errors.len()
        )));
    }
    let n = velocities.len();
    if n < 4 {
        return Err(Error::Config(format!(
            "fit needs at least 4 points, got {n}"
        )));
    }
    if let Some(e) = errors.iter().find(|&&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::Config(format!("fit needs positive errors, got {e}")));
    }
    if let Some(v) = velocities.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Config(format!(
            "fit needs positive velocities, got {v}"
        )));
    }
    let xs: Vec<f64> = velocities.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Config(
            "fit needs at least two distinct velocities".into(),
        ));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let se = (ssr / (nf - 2.0) / sxx).sqrt();
    Ok(RateFit {
        slope,
        intercept,
        residual: (ssr / nf).sqrt(),
        half_width: 2.0 * se,
    })
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_phase(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundMode {
    #[default]
    Off,
    /// `ρ > 1`.
    RhoShort,
    /// `ρ = 1`.
    RhoOne,
    /// `0 < ρ < 1`.
    RhoFrac,
}

impl BackgroundMode {
    /// Default `(ρ, μ)` of the regime.
    pub fn preset(self) -> Option<(f64, f64)> {
        match self {
            Self::Off => None,
            Self::RhoShort => Some((2.0, 0.0)),
            Self::RhoOne => Some((1.0, -0.5)),
            Self::RhoFrac => Some((0.5, -0.75)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionTier {
    #[default]
    Base,
    /// Twice the nodes per axis and half the step.
    HalvedDxDt,
}

/// Time window of each run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Window {
    /// `[−Z0/v, Z1/v]` with the solver's distances.
    #[default]
    Distance,
    /// `[−T, T]` at every velocity.
    Time { half_width: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub velocities: Vec<f64>,
    pub bg_mode: BackgroundMode,
    /// Overrides the regime's `ρ`.
    pub rho: Option<f64>,
    /// Overrides the regime's `μ`.
    pub mu: Option<f64>,
    /// Overrides the pulse's flux phase.
    pub target_phi: Option<f64>,
    pub resolution_tier: ResolutionTier,
    pub window: Window,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            velocities: default_velocities(),
            bg_mode: BackgroundMode::Off,
            rho: None,
            mu: None,
            target_phi: None,
            resolution_tier: ResolutionTier::Base,
            window: Window::Distance,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.velocities.len() < 4 {
            return Err(Error::Config(format!(
                "a sweep needs at least 4 velocities, got {}",
                self.velocities.len()
            )));
        }
        for w in self.velocities.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::strict(
                    "velocities strictly increasing: v_k < v_k+1",
                    w[0],
                    w[1],
                ));
            }
        }
        if !(self.velocities[0] > 1.0) {
            return Err(Error::strict("1 < v", 1.0, self.velocities[0]));
        }
        if let Window::Time { half_width } = self.window {
            if !(half_width > 0.0) {
                return Err(Error::strict("0 < T", 0.0, half_width));
            }
        }
        if self.bg_mode != BackgroundMode::Off {
            self.background(0.0)?;
        }
        Ok(())
    }

    /// Background of the sweep's regime with strength `C_V`.
    pub fn background(&self, strength: f64) -> Result<BackgroundSpec> {
        match self.bg_mode.preset() {
            None => Ok(BackgroundSpec::disabled()),
            Some((rho, mu)) => BackgroundSpec::new(
                strength,
                self.rho.unwrap_or(rho),
                self.mu.unwrap_or(mu),
                true,
            ),
        }
    }

    /// `ρ` of the error model; without a background the short-range law applies.
    pub fn model_rho(&self) -> f64 {
        match self.bg_mode.preset() {
            None => 2.0,
            Some((rho, _)) => self.rho.unwrap_or(rho),
        }
    }

    pub fn v_max(&self) -> f64 {
        self.velocities.iter().copied().fold(0.0, f64::max)
    }
}

/// Physical and numerical inputs shared by all experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct Setup {
    pub tube: TubeSpec,
    pub grid: GridSpec,
    pub mass: f64,
    pub pulse_shape: PulseShape,
    pub target_phi: f64,
    /// Outer radius of the pulse's spatial taper; defaults to one cell inside the hole.
    pub taper_outer: Option<f64>,
    /// Background used by single runs and the fringe; sweeps pick theirs from the regime.
    pub background: BackgroundSpec,
    pub envelope: EnvelopeSpec,
    pub solver: SolverParams,
}

impl Default for Setup {
    fn default() -> Self {
        Self {
            tube: TubeSpec::default(),
            grid: GridSpec::default(),
            mass: 1.0,
            pulse_shape: PulseShape::QuarticBump,
            target_phi: FRAC_PI_2,
            taper_outer: None,
            background: BackgroundSpec::disabled(),
            envelope: EnvelopeSpec::default(),
            solver: SolverParams::default(),
        }
    }
}

impl Setup {
    pub fn validate(&self) -> Result<()> {
        self.tube.validate()?;
        self.grid.validate()?;
        if !(self.mass > 0.0) {
            return Err(Error::strict("0 < m", 0.0, self.mass));
        }
        let limit = self.tube.max_envelope_radius();
        if !(self.envelope.radius < limit) {
            return Err(Error::strict("R < L1 − L0", self.envelope.radius, limit));
        }
        self.solver.validate(&self.tube, self.envelope.radius)?;
        self.pulse(self.target_phi)?;
        Ok(())
    }

    pub fn taper_outer(&self) -> f64 {
        self.taper_outer
            .unwrap_or_else(|| self.tube.a1.min(0.5 * self.tube.length) - self.grid.dx()[0])
    }

    /// Pulse of the configured shape, calibrated to flux phase `phi`.
    pub fn pulse(&self, phi: f64) -> Result<ABPotentialSpec> {
        let profile = calibrate_amplitude_for_phase(
            phi,
            &PulseProfile::new(1.0, self.tube.l0, self.pulse_shape),
        )?;
        ABPotentialSpec::new(profile, self.tube.l1, self.taper_outer(), &self.tube)
    }

    /// Grid and step of a resolution tier.
    pub fn at_tier(&self, tier: ResolutionTier) -> Self {
        match tier {
            ResolutionTier::Base => self.clone(),
            ResolutionTier::HalvedDxDt => {
                let mut s = self.clone();
                s.grid = self.grid.refined(2);
                s.solver.phase_per_step *= 0.5;
                s
            }
        }
    }

    /// Solver parameters for one velocity under a window.
    pub fn solver_for(&self, window: Window, v: f64) -> SolverParams {
        let mut p = self.solver;
        if let Window::Time { half_width } = window {
            p.t0_distance = v * half_width;
            p.t1_distance = v * half_width;
        }
        p
    }

    /// Resolution and box containment for every velocity in `velocities`.
    pub fn check_box(
        &self,
        env: &Envelope,
        spectral: &Spectral,
        window: Window,
        velocities: &[f64],
    ) -> Result<()> {
        let v_max = velocities.iter().copied().fold(0.0, f64::max);
        self.grid.check_resolution(self.mass, v_max)?;
        let sigma_p = momentum_spread_x2(&env.samples, spectral);
        for &v in velocities {
            let p = self.solver_for(window, v);
            p.validate(&self.tube, env.radius)?;
            let reach = p.t0_distance.max(p.t1_distance);
            self.grid
                .check_containment(reach, env.radius, sigma_p * reach / (self.mass * v))?;
        }
        Ok(())
    }
}

/// Errors of one interacting run against an Ansatz.
#[derive(Debug, Clone)]
pub struct RunMeasurement {
    pub probe_times: Vec<f64>,
    pub probe_errors: Vec<f64>,
    pub sup_error: f64,
    /// Error of the `t = 0` probe.
    pub wave_error: f64,
    /// `Sφ_v`: the exit state evolved freely back to `t = 0`.
    pub scattered: ComplexField,
    pub steps: usize,
    pub runtime_s: f64,
}

/// Runs `approx_psi_v` and compares every probe with `e^{−iF−(t)} e^{−itH0} φ_v`
/// for `ansatz` on the interior nodes. `on_probe` sees each lab-frame state.
#[allow(clippy::too_many_arguments)]
pub fn measure_run(
    env: &Envelope,
    v: f64,
    params: &SolverParams,
    scene: &Scene,
    potential: PotentialContext,
    ansatz: &PulseProfile,
    mut on_probe: impl FnMut(f64, &ComplexField, f64) -> Result<()>,
) -> Result<RunMeasurement> {
    let start = Instant::now();
    let phi_v = boost(&env.samples, &scene.grid, scene.mass, v)?;
    let mut times = Vec::new();
    let mut errors = Vec::new();
    let mut wave_error = None;
    let mut last = None;
    let traj = approx_psi_v(env, v, params, scene, potential, false, |t, psi| {
        let reference = ansatz_evolve(&phi_v, t, v, ansatz, scene.mass, &scene.spectral);
        let err = l2_norm_on_domain(&psi.sub(&reference), &scene.masks);
        if t == 0.0 {
            wave_error = Some(err);
        }
        times.push(t);
        errors.push(err);
        on_probe(t, psi, err)?;
        last = Some((t, psi.clone()));
        Ok(())
    })?;
    let (t1, psi) = last.ok_or_else(|| Error::Solver("run produced no probes".into()))?;
    let scattered = free_evolve_boosted(&psi, -t1, scene.mass, scene.mass * v, &scene.spectral);
    let wave_error =
        wave_error.ok_or_else(|| Error::Solver("window does not contain t = 0".into()))?;
    Ok(RunMeasurement {
        sup_error: errors.iter().copied().fold(0.0, f64::max),
        probe_times: times,
        probe_errors: errors,
        wave_error,
        scattered,
        steps: traj.steps,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

/// Control-run errors at one velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Floors {
    pub sup: f64,
    pub wave: f64,
    pub scattering: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VelocityRun {
    pub v_requested: f64,
    pub v_actual: f64,
    pub sup_error: f64,
    pub wave_error: f64,
    /// `‖Sφ_v − e^{−iΦ}φ_v‖` over the box.
    pub scattering_distance: f64,
    /// `arg⟨φ_v, Sφ_v⟩`.
    pub scattering_phase: f64,
    /// `arg⟨φ_v, Sφ_v⟩ + Φ`, wrapped.
    pub phase_error: f64,
    pub floors: Option<Floors>,
    pub model_e: f64,
    pub probe_times: Vec<f64>,
    pub probe_errors: Vec<f64>,
    pub steps: usize,
    /// Wall time of the pulse and control runs together.
    pub runtime_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStatus {
    Fitted,
    FloorLimited,
    /// No control run, so the floor rule cannot be applied.
    Unchecked,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub velocity: f64,
    pub value: f64,
    pub floor: Option<f64>,
    pub status: PointStatus,
}

/// Measured values with their floor verdicts and, when at least four pass,
/// the fitted rate. `fit == None` means the series is inconclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSeries {
    pub points: Vec<RatePoint>,
    pub fit: Option<RateFit>,
}

impl RateSeries {
    pub fn new(points: impl IntoIterator<Item = (f64, f64, Option<f64>)>) -> Self {
        let points: Vec<RatePoint> = points
            .into_iter()
            .map(|(velocity, value, floor)| {
                let status = match floor {
                    None => PointStatus::Unchecked,
                    Some(f) if value > 0.0 && value >= FLOOR_FACTOR * f => PointStatus::Fitted,
                    Some(_) => PointStatus::FloorLimited,
                };
                RatePoint {
                    velocity,
                    value,
                    floor,
                    status,
                }
            })
            .collect();
        let (vs, es): (Vec<f64>, Vec<f64>) = points
            .iter()
            .filter(|p| p.status == PointStatus::Fitted)
            .map(|p| (p.velocity, p.value))
            .unzip();
        let fit = if vs.len() >= 4 {
            fit_rate(&vs, &es).ok()
        } else {
            None
        };
        Self { points, fit }
    }

    pub fn passing(&self) -> usize {
        self.points
            .iter()
            .filter(|p| p.status == PointStatus::Fitted)
            .count()
    }

    pub fn all_pass_floor(&self) -> bool {
        self.points.iter().all(|p| p.status == PointStatus::Fitted)
    }

    /// Slope, or `None` for an inconclusive series.
    pub fn slope(&self) -> Option<f64> {
        self.fit.map(|f| f.slope)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub series: RateSeries,
    /// Local slope of `E(v)` over the sweep.
    pub model_exponent: f64,
    pub band: (f64, f64),
    /// Smallest `C` with `sup_error ≤ C·‖φ‖_{H²}·E(v)` at every velocity.
    pub c_fit: f64,
    /// Largest over smallest ratio `sup_error / (‖φ‖_{H²} E(v))`.
    pub c_spread: f64,
    pub monotone: bool,
}

impl ErrorCurve {
    /// `Some(true)` when the fitted slope lies in the band, `None` if inconclusive.
    pub fn in_band(&self) -> Option<bool> {
        self.series.fit.map(|f| f.within(self.band.0, self.band.1))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: SweepConfig,
    pub background: BackgroundSpec,
    pub phi: f64,
    pub f_minus0: f64,
    pub f_plus0: f64,
    pub mass: f64,
    /// `‖φ‖_{H²}` of the unboosted envelope.
    pub h2_norm: f64,
    pub runs: Vec<VelocityRun>,
}

/// Local power-law exponent of `E(v)` over `velocities`.
pub fn model_exponent(velocities: &[f64], rho: f64) -> Result<f64> {
    let es = velocities
        .iter()
        .map(|&v| eval_error_bound_e(v, rho))
        .collect::<Result<Vec<_>>>()?;
    Ok(fit_rate(velocities, &es)?.slope)
}

/// Non-increasing up to `MONOTONE_SLACK` per adjacent pair.
pub fn is_monotone(values: &[f64]) -> bool {
    values
        .windows(2)
        .all(|w| w[1] <= w[0] * (1.0 + MONOTONE_SLACK))
}

impl SweepResult {
    fn velocities(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.v_actual).collect()
    }

    pub fn error_curve(&self) -> Result<ErrorCurve> {
        let series = RateSeries::new(
            self.runs
                .iter()
                .map(|r| (r.v_actual, r.sup_error, r.floors.map(|f| f.sup))),
        );
        let model = model_exponent(&self.velocities(), self.config.model_rho())?;
        let ratios: Vec<f64> = self
            .runs
            .iter()
            .map(|r| r.sup_error / (self.h2_norm * r.model_e))
            .collect();
        let c_fit = ratios.iter().copied().fold(0.0, f64::max);
        let c_min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let errs: Vec<f64> = self.runs.iter().map(|r| r.sup_error).collect();
        Ok(ErrorCurve {
            series,
            model_exponent: model,
            band: (model - SLOPE_BAND, model + SLOPE_BAND),
            c_fit,
            c_spread: c_fit / c_min,
            monotone: is_monotone(&errs),
        })
    }

    /// Errors of the `t = 0` slice.
    pub fn wave_operator(&self) -> RateSeries {
        RateSeries::new(
            self.runs
                .iter()
                .map(|r| (r.v_actual, r.wave_error, r.floors.map(|f| f.wave))),
        )
    }

    /// `d(v) = ‖Sφ_v − e^{−iΦ}φ_v‖` against the control's `‖S0φ_v − φ_v‖`.
    pub fn scattering(&self) -> RateSeries {
        RateSeries::new(self.runs.iter().map(|r| {
            (
                r.v_actual,
                r.scattering_distance,
                r.floors.map(|f| f.scattering),
            )
        }))
    }

    pub fn run_at(&self, v_requested: f64) -> Option<&VelocityRun> {
        self.runs.iter().find(|r| r.v_requested == v_requested)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepOptions {
    /// Run the zero-pulse control at every velocity.
    pub control: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { control: true }
    }
}

/// Interacting runs for every velocity of the sweep, each with its control.
/// Velocities run in parallel; results keep the configured order.
pub fn run_sweep(setup: &Setup, cfg: &SweepConfig, opts: SweepOptions) -> Result<SweepResult> {
    cfg.validate()?;
    run_velocities(setup, cfg, &cfg.velocities, opts)
}

fn run_velocities(
    setup: &Setup,
    cfg: &SweepConfig,
    velocities: &[f64],
    opts: SweepOptions,
) -> Result<SweepResult> {
    let setup = setup.at_tier(cfg.resolution_tier);
    setup.validate()?;
    let scene = Scene::new(
        setup.grid,
        setup.tube,
        setup.solver.cap_strength,
        setup.mass,
    )?;
    let env = setup.envelope.build(&setup.grid, &setup.tube)?;
    let actual: Vec<f64> = velocities
        .iter()
        .map(|&v| commensurate_velocity(v, setup.mass, setup.grid.extent[1]))
        .collect();
    setup.check_box(&env, &scene.spectral, cfg.window, &actual)?;

    let phi = cfg.target_phi.unwrap_or(setup.target_phi);
    let pulse = setup.pulse(phi)?;
    let background = cfg.background(setup.background.strength)?;
    let rho = cfg.model_rho();
    let h2 = h2_norm(&env.samples, &scene.spectral);

    let runs = velocities
        .par_iter()
        .zip(&actual)
        .map(|(&v_requested, &v)| {
            let params = setup.solver_for(cfg.window, v);
            let potential = PotentialContext::free()
                .with_pulse(pulse, v)
                .with_background(background);
            let run = measure_run(
                &env,
                v,
                &params,
                &scene,
                potential,
                &pulse.profile,
                |_, _, _| Ok(()),
            )?;
            let phi_v = boost(&env.samples, &scene.grid, scene.mass, v)?;
            let cell = scene.grid.cell_area();
            let overlap = phi_v.dot(&run.scattered);
            let scattering_phase = overlap.arg();
            let scattering_distance = run
                .scattered
                .sub(&phi_v.scaled(Complex64::from_polar(1.0, -phi)))
                .l2_norm(cell);
            let mut runtime_s = run.runtime_s;
            let floors = if opts.control {
                let free = pulse.profile.with_amplitude(0.0);
                let ctl = measure_run(
                    &env,
                    v,
                    &params,
                    &scene,
                    PotentialContext::free(),
                    &free,
                    |_, _, _| Ok(()),
                )?;
                runtime_s += ctl.runtime_s;
                Some(Floors {
                    sup: ctl.sup_error,
                    wave: ctl.wave_error,
                    scattering: ctl.scattered.sub(&phi_v).l2_norm(cell),
                })
            } else {
                None
            };
            Ok(VelocityRun {
                v_requested,
                v_actual: v,
                sup_error: run.sup_error,
                wave_error: run.wave_error,
                scattering_distance,
                scattering_phase,
                phase_error: wrap_phase(scattering_phase + phi),
                floors,
                model_e: eval_error_bound_e(v, rho)?,
                probe_times: run.probe_times,
                probe_errors: run.probe_errors,
                steps: run.steps,
                runtime_s,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SweepResult {
        config: cfg.clone(),
        background,
        phi,
        f_minus0: phase_f_minus(0.0, 1.0, &pulse.profile),
        f_plus0: phase_f_plus(0.0, 1.0, &pulse.profile),
        mass: setup.mass,
        h2_norm: h2,
        runs,
    })
}

pub fn uniform_error_curve(setup: &Setup, cfg: &SweepConfig) -> Result<ErrorCurve> {
    run_sweep(setup, cfg, SweepOptions::default())?.error_curve()
}

pub fn wave_operator_test(setup: &Setup, cfg: &SweepConfig) -> Result<RateSeries> {
    Ok(run_sweep(setup, cfg, SweepOptions::default())?.wave_operator())
}

/// Scattering distances and the extracted phases `arg⟨φ_v, Sφ_v⟩`.
pub fn scattering_phase_test(setup: &Setup, cfg: &SweepConfig) -> Result<(RateSeries, Vec<f64>)> {
    let sweep = run_sweep(setup, cfg, SweepOptions::default())?;
    Ok((
        sweep.scattering(),
        sweep.runs.iter().map(|r| r.scattering_phase).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloorCheck {
    pub v_requested: f64,
    pub base: f64,
    pub refined: f64,
    /// `|refined − base| / base`.
    pub relative_change: f64,
}

/// Reruns selected velocities of a base-tier sweep at halved `dx` and `dt`
/// and compares the sup errors.
pub fn floor_verification(
    setup: &Setup,
    base: &SweepResult,
    velocities: &[f64],
) -> Result<Vec<FloorCheck>> {
    let mut cfg = base.config.clone();
    cfg.resolution_tier = ResolutionTier::HalvedDxDt;
    let refined = run_velocities(setup, &cfg, velocities, SweepOptions { control: false })?;
    velocities
        .iter()
        .zip(&refined.runs)
        .map(|(&v, r)| {
            let b = base.run_at(v).ok_or_else(|| {
                Error::Config(format!("velocity {v} is not part of the base sweep"))
            })?;
            Ok(FloorCheck {
                v_requested: v,
                base: b.sup_error,
                refined: r.sup_error,
                relative_change: (r.sup_error - b.sup_error).abs() / b.sup_error,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FringeConfig {
    pub velocity: f64,
    pub theta_points: usize,
    /// Width of the absorbing layer at both ends of the beam axis.
    pub absorber_width: f64,
    pub cap_strength: f64,
    /// Overrides the pulse's flux phase for arm A.
    pub target_phi: Option<f64>,
}

impl Default for FringeConfig {
    fn default() -> Self {
        Self {
            velocity: 16.0,
            theta_points: 720,
            absorber_width: 2.0,
            cap_strength: 2.0,
            target_phi: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FringeResult {
    pub v_requested: f64,
    pub v_actual: f64,
    pub phi: f64,
    /// Maximizer of `I(θ) = ‖ψ_A + e^{−iθ}ψ_B‖²` on the scan grid.
    pub theta_star: f64,
    /// `arg⟨ψ_B, ψ_A⟩`.
    pub relative_phase: f64,
    pub visibility: f64,
    /// `(θ, I(θ))`.
    pub table: Vec<(f64, f64)>,
    pub runtime_s: f64,
}

/// `I(θ) = ‖a + e^{−iθ} b‖²` on `n` uniform angles over `[0, 2π)`.
pub fn interferogram(
    a: &ComplexField,
    b: &ComplexField,
    cell_area: f64,
    n: usize,
) -> Vec<(f64, f64)> {
    let aa = a.dot(a).re * cell_area;
    let bb = b.dot(b).re * cell_area;
    let ab = a.dot(b) * cell_area;
    (0..n)
        .map(|k| {
            let theta = TAU * k as f64 / n as f64;
            (
                theta,
                aa + bb + 2.0 * (Complex64::from_polar(1.0, -theta) * ab).re,
            )
        })
        .collect()
}

/// `(θ*, visibility)` of an interferogram table.
pub fn fringe_summary(table: &[(f64, f64)]) -> (f64, f64) {
    let (mut best, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
    for &(theta, i) in table {
        if i > hi {
            hi = i;
            best = theta;
        }
        lo = lo.min(i);
    }
    (best, (hi - lo) / (hi + lo))
}

/// Arm A with the pulse, arm B without, both through the hole; compares the
/// exit states at `t1`.
pub fn fringe_experiment(setup: &Setup, cfg: &FringeConfig) -> Result<FringeResult> {
    if cfg.theta_points < 4 {
        return Err(Error::Config(format!(
            "theta_points must be at least 4, got {}",
            cfg.theta_points
        )));
    }
    let start = Instant::now();
    let mut setup = setup.clone();
    setup.grid.absorber_width = cfg.absorber_width;
    setup.validate()?;
    let scene = Scene::new(setup.grid, setup.tube, cfg.cap_strength, setup.mass)?;
    let env = setup.envelope.build(&setup.grid, &setup.tube)?;
    let v = commensurate_velocity(cfg.velocity, setup.mass, setup.grid.extent[1]);
    setup.check_box(&env, &scene.spectral, Window::Distance, &[v])?;
    let phi = cfg.target_phi.unwrap_or(setup.target_phi);
    let pulse = setup.pulse(phi)?;

    let exit_state = |potential: PotentialContext| -> Result<ComplexField> {
        let mut last = None;
        approx_psi_v(
            &env,
            v,
            &setup.solver,
            &scene,
            potential,
            false,
            |_, psi| {
                last = Some(psi.clone());
                Ok(())
            },
        )?;
        last.ok_or_else(|| Error::Solver("run produced no probes".into()))
    };
    let bg = setup.background;
    let arms = [
        PotentialContext::free()
            .with_pulse(pulse, v)
            .with_background(bg),
        PotentialContext::free().with_background(bg),
    ];
    let mut states = arms
        .into_par_iter()
        .map(exit_state)
        .collect::<Result<Vec<_>>>()?;
    let b = states.pop().expect("two arms");
    let a = states.pop().expect("two arms");

    let table = interferogram(&a, &b, setup.grid.cell_area(), cfg.theta_points);
    let (theta_star, visibility) = fringe_summary(&table);
    Ok(FringeResult {
        v_requested: cfg.velocity,
        v_actual: v,
        phi,
        theta_star,
        relative_phase: b.dot(&a).arg(),
        visibility,
        table,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeakageConfig {
    pub time: f64,
    pub velocities: Vec<f64>,
    /// Side of the square box.
    pub extent: f64,
    /// Nodes per side.
    pub points: usize,
    /// Velocities of the momentum-cutoff bound.
    pub cutoff_velocities: Vec<f64>,
}

impl Default for LeakageConfig {
    fn default() -> Self {
        Self {
            time: 20.0,
            velocities: vec![4.0, 8.0, 16.0],
            extent: 256.0,
            points: 2048,
            cutoff_velocities: vec![4.0, 8.0, 16.0, 32.0],
        }
    }
}

impl LeakageConfig {
    pub fn grid(&self) -> GridSpec {
        GridSpec::new([self.extent; 2], [self.points; 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeakagePoint {
    pub velocity: f64,
    pub leakage: f64,
    /// Previous leakage over this one.
    pub decay: Option<f64>,
}

fn large_box(setup: &Setup, cfg: &LeakageConfig) -> Result<(GridSpec, Spectral, Envelope)> {
    let grid = cfg.grid();
    grid.validate()?;
    let spectral = Spectral::new(&grid);
    let env = setup.envelope.build(&grid, &setup.tube)?;
    Ok((grid, spectral, env))
}

/// Mass of the free, momentum-localized packet outside the ballistic cone
/// ball at a fixed time, per velocity.
pub fn leakage_sweep(setup: &Setup, cfg: &LeakageConfig) -> Result<Vec<LeakagePoint>> {
    let (grid, spectral, env) = large_box(setup, cfg)?;
    let mut out: Vec<LeakagePoint> = Vec::new();
    for &v in &cfg.velocities {
        let leakage = leakage_diagnostic(&env, &grid, &spectral, v, cfg.time, setup.mass)?;
        let decay = out.last().map(|p| p.leakage / leakage);
        out.push(LeakagePoint {
            velocity: v,
            leakage,
            decay,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffPoint {
    pub velocity: f64,
    /// `‖φ̃ − φ‖`.
    pub distance: f64,
    /// `‖φ̃ − φ‖·(1 + v²)/‖φ‖_{H²}`.
    pub scaled: f64,
}

/// The momentum-cutoff bound across velocities, and the ratio of the largest
/// to the smallest scaled distance.
pub fn cutoff_bound_sweep(setup: &Setup, cfg: &LeakageConfig) -> Result<(Vec<CutoffPoint>, f64)> {
    let (grid, spectral, env) = large_box(setup, cfg)?;
    let h2 = h2_norm(&env.samples, &spectral);
    let points: Vec<CutoffPoint> = cfg
        .cutoff_velocities
        .iter()
        .map(|&v| {
            let distance = momentum_cutoff(&env.samples, &spectral, v, setup.mass)
                .sub(&env.samples)
                .l2_norm(grid.cell_area());
            CutoffPoint {
                velocity: v,
                distance,
                scaled: distance * (1.0 + v * v) / h2,
            }
        })
        .collect();
    let hi = points.iter().map(|p| p.scaled).fold(0.0, f64::max);
    let lo = points
        .iter()
        .map(|p| p.scaled)
        .fold(f64::INFINITY, f64::min);
    Ok((points, hi / lo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::E;

    #[test]
    fn error_bound_regimes() {
        assert_relative_eq!(
            eval_error_bound_e(4.0, 2.0).unwrap(),
            0.25,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            eval_error_bound_e(E, 1.0).unwrap(),
            1.0 / E,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            eval_error_bound_e(100.0, 0.5).unwrap(),
            0.1,
            max_relative = 1e-15
        );
        assert!(eval_error_bound_e(4.0, 0.0).is_err());
        assert!(eval_error_bound_e(4.0, -1.0).is_err());
        assert!(eval_error_bound_e(1.0, 2.0).is_err());
    }

    #[test]
    fn log_corrected_law_fits_shallower_than_inverse_v() {
        // d ln(ln v / v) / d ln v = 1/ln v − 1, which runs from −0.28 to −0.64 over [4, 16]
        let vs = [4.0, 6.0, 8.0, 11.0, 16.0];
        let es: Vec<f64> = vs
            .iter()
            .map(|&v| eval_error_bound_e(v, 1.0).unwrap())
            .collect();
        let fit = fit_rate(&vs, &es).unwrap();
        let local = vs.iter().map(|v: &f64| 1.0 / v.ln() - 1.0).sum::<f64>() / vs.len() as f64;
        assert!(fit.slope > -1.0 && fit.slope < -0.28, "slope {}", fit.slope);
        assert!(
            (fit.slope - local).abs() < 0.02,
            "slope {} vs {local}",
            fit.slope
        );
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(fit_rate(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(fit_rate(&[1.0, 2.0, 3.0, 4.0], &[1.0, 0.0, 3.0, 4.0]).is_err());
        assert!(fit_rate(&[1.0, 2.0, 3.0, 4.0], &[1.0, -2.0, 3.0, 4.0]).is_err());
    }

    proptest! {
        #[test]
        fn fit_recovers_power_laws(
            p in prop::sample::select(vec![-0.5, -1.0, -2.0]),
            c in 1e-4f64..1e2,
            v0 in 1.5f64..8.0,
            ratio in 1.2f64..2.0,
        ) {
            let vs: Vec<f64> = (0..5).map(|k| v0 * ratio.powi(k)).collect();
            let es: Vec<f64> = vs.iter().map(|v| c * v.powf(p)).collect();
            let fit = fit_rate(&vs, &es).unwrap();
            prop_assert!((fit.slope - p).abs() < 1e-3);
            prop_assert!(fit.residual < 1e-9);
            prop_assert!((fit.intercept - c.ln()).abs() < 1e-9);
        }

        #[test]
        fn wrapped_phase_is_congruent(a in -50.0f64..50.0) {
            let w = wrap_phase(a);
            prop_assert!(w > -PI - 1e-12 && w <= PI + 1e-12);
            let k = (a - w) / TAU;
            prop_assert!((k - k.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn floor_rule_marks_points_and_goes_inconclusive() {
        let good = RateSeries::new((0..5).map(|k| {
            let v = 4.0 * 2f64.powf(k as f64 / 2.0);
            (v, 1.0 / v, Some(0.01 / v))
        }));
        assert!(good.all_pass_floor());
        assert_relative_eq!(good.slope().unwrap(), -1.0, epsilon = 1e-12);

        let bad = RateSeries::new((0..5).map(|k| {
            let v = 4.0 + k as f64;
            (v, 1.0, Some(if k < 2 { 0.3 } else { 0.01 }))
        }));
        assert_eq!(bad.passing(), 3);
        assert_eq!(bad.points[0].status, PointStatus::FloorLimited);
        assert!(bad.slope().is_none());
    }

    #[test]
    fn monotone_allows_small_noise() {
        assert!(is_monotone(&[1.0, 0.5, 0.52, 0.3]));
        assert!(!is_monotone(&[1.0, 0.5, 0.6]));
    }

    #[test]
    fn model_exponents() {
        let vs = default_velocities();
        assert_relative_eq!(model_exponent(&vs, 2.0).unwrap(), -1.0, epsilon = 1e-12);
        assert_relative_eq!(model_exponent(&vs, 0.5).unwrap(), -0.5, epsilon = 1e-12);
        // independent check of the log-law slope: ln E = ln ln v − ln v
        let local = vs.iter().map(|v| 1.0 / v.ln() - 1.0).sum::<f64>() / vs.len() as f64;
        let got = model_exponent(&vs, 1.0).unwrap();
        assert!((got - local).abs() < 0.02, "{got} vs {local}");
    }

    #[test]
    fn sweep_config_checks() {
        let mut cfg = SweepConfig::default();
        cfg.validate().unwrap();
        cfg.velocities = vec![4.0, 8.0, 16.0];
        assert!(cfg.validate().is_err());
        cfg.velocities = vec![4.0, 8.0, 8.0, 16.0];
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("strictly increasing"), "{msg}");
        cfg.velocities = default_velocities();
        cfg.bg_mode = BackgroundMode::RhoOne;
        cfg.mu = Some(0.5);
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("rho − mu > 1"), "{msg}");
        cfg.mu = None;
        let bg = cfg.background(0.3).unwrap();
        assert_eq!(
            (bg.rho, bg.mu, bg.strength, bg.enabled),
            (1.0, -0.5, 0.3, true)
        );
        assert_eq!(cfg.model_rho(), 1.0);
        cfg.bg_mode = BackgroundMode::Off;
        assert!(!cfg.background(0.3).unwrap().enabled);
        assert_eq!(cfg.model_rho(), 2.0);
    }

    #[test]
    fn presets_respect_decay_condition() {
        for mode in [
            BackgroundMode::RhoShort,
            BackgroundMode::RhoOne,
            BackgroundMode::RhoFrac,
        ] {
            let (rho, mu) = mode.preset().unwrap();
            assert!(rho - mu > 1.0 && rho > 0.0);
        }
    }

    #[test]
    fn window_sets_distances() {
        let setup = Setup::default();
        let p = setup.solver_for(Window::Time { half_width: 1.5 }, 8.0);
        assert_eq!((p.t0_distance, p.t1_distance), (12.0, 12.0));
        let p = setup.solver_for(Window::Distance, 8.0);
        assert_eq!((p.t0_distance, p.t1_distance), (8.0, 8.0));
    }

    #[test]
    fn halved_tier_refines_grid_and_step() {
        let s = Setup::default().at_tier(ResolutionTier::HalvedDxDt);
        assert_eq!(s.grid.points, [512, 4096]);
        assert_eq!(s.solver.phase_per_step, 0.025);
    }

    #[test]
    fn pulse_is_calibrated_to_target() {
        let setup = Setup::default();
        let pulse = setup.pulse(1.3).unwrap();
        let q = |z: f64| crate::potentials::eval_q0(&pulse.profile, z);
        let oracle = integrate(&q, -setup.tube.l0, setup.tube.l0, 1e-13);
        assert_relative_eq!(oracle, 1.3, max_relative = 1e-10);
        assert_eq!(pulse.taper_inner, setup.tube.l1);
        assert!(pulse.taper_outer < setup.tube.a1);
    }

    #[test]
    fn interferogram_matches_direct_sum() {
        let a = ComplexField::from_fn(4, 6, |i, j| {
            Complex64::new((i + 2 * j) as f64 * 0.1, (i as f64 - j as f64) * 0.2)
        });
        let b = ComplexField::from_fn(4, 6, |i, j| {
            Complex64::new((3 * i) as f64 * 0.05 - 0.3, (j as f64).sin())
        });
        let table = interferogram(&a, &b, 0.25, 16);
        for &(theta, i) in &table {
            let direct: f64 = a
                .as_slice()
                .iter()
                .zip(b.as_slice())
                .map(|(x, y)| (x + Complex64::from_polar(1.0, -theta) * y).norm_sqr())
                .sum::<f64>()
                * 0.25;
            assert_relative_eq!(i, direct, max_relative = 1e-12);
        }
    }

    #[test]
    fn identical_arms_peak_at_zero() {
        let a = ComplexField::from_fn(3, 5, |i, j| Complex64::new(i as f64 + 1.0, j as f64));
        let (theta, vis) = fringe_summary(&interferogram(&a, &a, 1.0, 720));
        assert_eq!(theta, 0.0);
        assert_relative_eq!(vis, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn shifted_arm_peaks_at_the_shift() {
        let b = ComplexField::from_fn(3, 5, |i, j| Complex64::new(i as f64 + 1.0, j as f64));
        let a = b.scaled(Complex64::from_polar(1.0, -FRAC_PI_2));
        let (theta, _) = fringe_summary(&interferogram(&a, &b, 1.0, 720));
        assert!((theta - FRAC_PI_2).abs() < 1e-12);
        assert!((b.dot(&a).arg() + FRAC_PI_2).abs() < 1e-12);
    }
}
