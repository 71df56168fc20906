//! Strang-split Cayley/ADI propagator on the box with Dirichlet obstacle.
//!
//! The state is carried in the co-moving gauge `u = e^{−ik x2} ψ` with
//! `k = m·v_carrier`. In that gauge the x2 kinetic operator is
//! `(P2² + 2kP2)/2m` and the constant `k²/2m` is applied as an exact global
//! phase on conversion. This removes the fast carrier oscillation from the
//! finite differences, so the stencil only has to resolve the envelope.

use super::lines::{
    lane_groups, sweep_columns, sweep_rows, LaneGroup, LineSolver, Stencil, SweepBuffer,
};
use crate::error::{Error, Result};
use crate::field::ComplexField;
use crate::geometry::{is_inside_k0, DomainMasks, GridSpec, TubeSpec};
use crate::potentials::{eval_q0, ABPotentialSpec, BackgroundSpec};
use crate::states::boost_unchecked;
use num_complex::Complex64;
use rayon::prelude::*;
use std::collections::HashMap;
use std::sync::Arc;
use wide::f64x4;

/// Nodes per parallel task in the phase loops; a multiple of the SIMD width.
const PHASE_CHUNK: usize = 4096;

/// Spatially uniform potential `c(t)`.
pub type UniformPotential = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Everything that enters the potential phase of a step.
#[derive(Clone, Default)]
pub struct PotentialContext {
    /// Pulse and the velocity it is scaled with.
    pub pulse: Option<(ABPotentialSpec, f64)>,
    pub background: Option<BackgroundSpec>,
    pub uniform: Option<UniformPotential>,
}

impl PotentialContext {
    pub fn free() -> Self {
        Self::default()
    }

    pub fn with_pulse(mut self, ab: ABPotentialSpec, v: f64) -> Self {
        if ab.profile.amplitude != 0.0 {
            self.pulse = Some((ab, v));
        }
        self
    }

    pub fn with_background(mut self, bg: BackgroundSpec) -> Self {
        if bg.enabled && bg.strength != 0.0 {
            self.background = Some(bg);
        }
        self
    }

    pub fn with_uniform(mut self, c: UniformPotential) -> Self {
        self.uniform = Some(c);
        self
    }
}

impl std::fmt::Debug for PotentialContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PotentialContext")
            .field("pulse", &self.pulse)
            .field("background", &self.background)
            .field("uniform", &self.uniform.is_some())
            .finish()
    }
}

struct Factors {
    dt: f64,
    x1: Vec<LineSolver>,
    x2: Vec<LineSolver>,
}

pub struct InteractingPropagator {
    grid: GridSpec,
    mass: f64,
    carrier: f64,
    potential: PotentialContext,
    x1_stencil: Stencil,
    x2_stencil: Stencil,
    x1_patterns: Vec<Vec<bool>>,
    x2_patterns: Vec<Vec<bool>>,
    /// Lane groups of columns (x1 lines) and rows (x2 lines) by obstacle pattern.
    x1_groups: Vec<LaneGroup>,
    x2_groups: Vec<LaneGroup>,
    obstacle: Vec<bool>,
    /// Pulse spatial weight on its support.
    pulse_support: Vec<(usize, f64)>,
    /// Distinct `(background, pulse weight)` inputs of the phase; empty
    /// without a background.
    phase_classes: PhaseClasses,
    /// Absorber rate on its support.
    absorber: Vec<(usize, f64)>,
    factors: Option<Factors>,
    buf: SweepBuffer,
    /// Per-step background phase factor of each class.
    phase_unique: Vec<Complex64>,
}

/// Nodes grouped by bit-identical phase inputs. Symmetric boxes have about a
/// quarter as many classes as nodes.
#[derive(Debug, Clone, Default)]
struct PhaseClasses {
    inputs: Vec<(f64, f64)>,
    of_node: Vec<u32>,
}

impl PhaseClasses {
    fn new(space: &[f64], weight: &[f64]) -> Self {
        let mut index = HashMap::new();
        let mut inputs = Vec::new();
        let of_node = space
            .iter()
            .enumerate()
            .map(|(k, &s)| {
                let w = weight.get(k).copied().unwrap_or(0.0);
                *index.entry((s.to_bits(), w.to_bits())).or_insert_with(|| {
                    inputs.push((s, w));
                    (inputs.len() - 1) as u32
                })
            })
            .collect();
        Self { inputs, of_node }
    }
}

impl InteractingPropagator {
    /// `carrier_velocity` fixes the gauge; pass the beam velocity.
    pub fn new(
        grid: &GridSpec,
        tube: &TubeSpec,
        masks: &DomainMasks,
        mass: f64,
        carrier_velocity: f64,
        potential: PotentialContext,
    ) -> Result<Self> {
        grid.validate()?;
        let (n1, n2) = (grid.n1(), grid.n2());
        if masks.n1 != n1 || masks.n2 != n2 {
            return Err(Error::Config("masks do not match the grid".into()));
        }
        let [dx1, dx2] = grid.dx();
        let k = mass * carrier_velocity;
        let x1_stencil = Stencil {
            diag: 1.0 / (mass * dx1 * dx1),
            hop: Complex64::new(-0.5 / (mass * dx1 * dx1), 0.0),
        };
        let x2_stencil = Stencil {
            diag: 1.0 / (mass * dx2 * dx2),
            hop: Complex64::new(-0.5 / (mass * dx2 * dx2), -0.5 * k / (mass * dx2)),
        };

        // x1 lines are columns; group equal obstacle columns.
        let mut x1_patterns: Vec<Vec<bool>> = Vec::new();
        let mut lookup: HashMap<Vec<bool>, usize> = HashMap::new();
        let col_pattern: Vec<usize> = (0..n2)
            .map(|j| {
                let col: Vec<bool> = (0..n1).map(|i| masks.obstacle[i * n2 + j]).collect();
                *lookup.entry(col.clone()).or_insert_with(|| {
                    x1_patterns.push(col);
                    x1_patterns.len() - 1
                })
            })
            .collect();
        let mut x2_patterns: Vec<Vec<bool>> = Vec::new();
        let mut lookup: HashMap<Vec<bool>, usize> = HashMap::new();
        let row_pattern: Vec<usize> = (0..n1)
            .map(|i| {
                let row = masks.obstacle[i * n2..(i + 1) * n2].to_vec();
                *lookup.entry(row.clone()).or_insert_with(|| {
                    x2_patterns.push(row);
                    x2_patterns.len() - 1
                })
            })
            .collect();

        let mut pulse_support = Vec::new();
        if let Some((ab, _)) = &potential.pulse {
            for i in 0..n1 {
                for j in 0..n2 {
                    let x = grid.point(i, j);
                    if is_inside_k0(x, tube) && !masks.obstacle[i * n2 + j] {
                        let w = ab.weight(x);
                        if w > 0.0 {
                            pulse_support.push((i * n2 + j, w));
                        }
                    }
                }
            }
        }
        let background_space = match &potential.background {
            Some(bg) => (0..n1 * n2)
                .map(|k| bg.space_factor(grid.point(k / n2, k % n2)))
                .collect(),
            None => Vec::new(),
        };
        let mut pulse_dense = Vec::new();
        if potential.background.is_some() && !pulse_support.is_empty() {
            pulse_dense = vec![0.0; n1 * n2];
            for &(k, w) in &pulse_support {
                pulse_dense[k] = w;
            }
        }
        let phase_classes = if potential.background.is_some() {
            PhaseClasses::new(&background_space, &pulse_dense)
        } else {
            PhaseClasses::default()
        };
        let absorber = masks
            .absorber
            .iter()
            .enumerate()
            .filter(|(_, &a)| a > 0.0)
            .map(|(k, &a)| (k, a))
            .collect();

        Ok(Self {
            grid: *grid,
            mass,
            carrier: k,
            potential,
            x1_stencil,
            x2_stencil,
            x1_patterns,
            x2_patterns,
            x1_groups: lane_groups(&col_pattern),
            x2_groups: lane_groups(&row_pattern),
            obstacle: masks.obstacle.clone(),
            pulse_support,
            phase_unique: vec![Complex64::new(1.0, 0.0); phase_classes.inputs.len()],
            phase_classes,
            absorber,
            factors: None,
            buf: SweepBuffer::new(),
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn carrier_momentum(&self) -> f64 {
        self.carrier
    }

    fn ensure_factors(&mut self, dt: f64) -> Result<()> {
        if self.factors.as_ref().is_some_and(|f| f.dt == dt) {
            return Ok(());
        }
        // Each of the four sweeps is a Cayley factor over dt/2: τ = dt/4.
        let tau = dt / 4.0;
        let x1 = self
            .x1_patterns
            .iter()
            .map(|p| LineSolver::new(self.x1_stencil, tau, p))
            .collect::<Result<_>>()?;
        let x2 = self
            .x2_patterns
            .iter()
            .map(|p| LineSolver::new(self.x2_stencil, tau, p))
            .collect::<Result<_>>()?;
        self.factors = Some(Factors { dt, x1, x2 });
        Ok(())
    }

    /// Lab-frame `ψ` into the carrier gauge at the start of a run.
    pub fn to_carrier(&self, psi: &ComplexField) -> ComplexField {
        let mut u = boost_unchecked(psi, &self.grid, -self.carrier);
        self.zero_obstacle(&mut u);
        u
    }

    /// Carrier-gauge `u` back to `ψ`, given the time elapsed since `to_carrier`.
    pub fn from_carrier(&self, u: &ComplexField, elapsed: f64) -> ComplexField {
        let mut psi = boost_unchecked(u, &self.grid, self.carrier);
        let k = self.carrier;
        psi.scale(Complex64::from_polar(
            1.0,
            -k * k * elapsed / (2.0 * self.mass),
        ));
        psi
    }

    fn zero_obstacle(&self, u: &mut ComplexField) {
        for (z, &b) in u.as_mut_slice().iter_mut().zip(&self.obstacle) {
            if b {
                *z = Complex64::new(0.0, 0.0);
            }
        }
    }

    /// Background phase factors `e^{−iV(tm, x)dt/2}` per input class. Both half
    /// steps of a Strang step share `tm`, so one evaluation per class serves
    /// the pair.
    fn fill_background_phase(&mut self, bg: &BackgroundSpec, tm: f64, dt: f64) {
        let h = 0.5 * dt;
        let b = bg.time_factor(tm);
        let uniform = self.potential.uniform.as_ref().map_or(0.0, |c| c(tm));
        let pulse = self
            .potential
            .pulse
            .as_ref()
            .map_or(0.0, |(ab, v)| v * eval_q0(&ab.profile, v * tm));
        let classes = &self.phase_classes;
        self.phase_unique
            .par_chunks_mut(PHASE_CHUNK)
            .zip(classes.inputs.par_chunks(PHASE_CHUNK))
            .for_each(|(out, inputs)| {
                for (zs, ins) in out.chunks_mut(4).zip(inputs.chunks(4)) {
                    let mut arg = [0.0; 4];
                    for (a, &(space, weight)) in arg.iter_mut().zip(ins) {
                        *a = -(uniform + b * space + pulse * weight) * h;
                    }
                    let (sin, cos) = f64x4::from(arg).sin_cos();
                    let (sin, cos) = (sin.to_array(), cos.to_array());
                    for (l, z) in zs.iter_mut().enumerate() {
                        *z = Complex64::new(cos[l], sin[l]);
                    }
                }
            });
    }

    /// Exact potential phase and absorber damping over `dt/2` at time `tm`.
    /// With a background, the factors come from `fill_background_phase`.
    fn half_phase(&self, u: &mut ComplexField, tm: f64, dt: f64) {
        let h = 0.5 * dt;
        let data = u.as_mut_slice();
        if self.potential.background.is_some() {
            let unique = &self.phase_unique;
            data.par_chunks_mut(PHASE_CHUNK)
                .zip(self.phase_classes.of_node.par_chunks(PHASE_CHUNK))
                .for_each(|(zs, idx)| {
                    for (z, &i) in zs.iter_mut().zip(idx) {
                        *z *= unique[i as usize];
                    }
                });
        } else {
            let uniform = self.potential.uniform.as_ref().map_or(0.0, |c| c(tm));
            if uniform != 0.0 {
                let g = Complex64::from_polar(1.0, -uniform * h);
                data.iter_mut().for_each(|z| *z *= g);
            }
            let pulse = self
                .potential
                .pulse
                .as_ref()
                .map_or(0.0, |(ab, v)| v * eval_q0(&ab.profile, v * tm));
            if pulse != 0.0 {
                for &(k, w) in &self.pulse_support {
                    data[k] *= Complex64::from_polar(1.0, -pulse * w * h);
                }
            }
        }
        for &(k, a) in &self.absorber {
            data[k] *= (-a * h).exp();
        }
    }

    /// One Strang step from `t` to `t + dt` in the carrier gauge.
    pub fn step(&mut self, u: &mut ComplexField, t: f64, dt: f64) -> Result<()> {
        self.ensure_factors(dt)?;
        let tm = t + 0.5 * dt;
        if let Some(bg) = self.potential.background {
            self.fill_background_phase(&bg, tm, dt);
        }
        self.half_phase(u, tm, dt);
        self.kinetic(u);
        self.half_phase(u, tm, dt);
        Ok(())
    }

    /// Symmetrized ADI kinetic factor: x1, x2, x2, x1 over dt/2 each.
    fn kinetic(&mut self, u: &mut ComplexField) {
        let n2 = self.grid.n2();
        let factors = self.factors.as_ref().expect("factors prepared by step");
        let data = u.as_mut_slice();
        sweep_columns(data, n2, &factors.x1, &self.x1_groups, &mut self.buf);
        sweep_rows(data, n2, &factors.x2, &self.x2_groups, &mut self.buf, 2);
        sweep_columns(data, n2, &factors.x1, &self.x1_groups, &mut self.buf);
    }

    /// Steps from `t_start` to `t_end` with equal steps no larger than `dt_max`.
    pub fn advance(
        &mut self,
        u: &mut ComplexField,
        t_start: f64,
        t_end: f64,
        dt_max: f64,
    ) -> Result<usize> {
        if t_end <= t_start {
            return Ok(0);
        }
        let steps = ((t_end - t_start) / dt_max).ceil().max(1.0) as usize;
        let dt = (t_end - t_start) / steps as f64;
        for s in 0..steps {
            self.step(u, t_start + s as f64 * dt, dt)?;
        }
        Ok(steps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_masks;
    use crate::propagators::free_evolve;
    use crate::spectral::Spectral;
    use crate::states::{boost, commensurate_velocity, make_envelope, EnvelopeKind};

    fn packet(grid: &GridSpec, v: f64) -> ComplexField {
        let env =
            make_envelope(2.5, grid, &TubeSpec::default(), EnvelopeKind::BumpC2, 1.0).unwrap();
        boost(&env.samples, grid, 1.0, v).unwrap()
    }

    #[test]
    fn free_step_matches_spectral_in_carrier_gauge() {
        // x2 spacing of the production grid; the carrier term's dispersion dominates
        let grid = GridSpec::new([10.0, 9.0], [256, 512]);
        let v = commensurate_velocity(16.0, 1.0, 9.0);
        let psi = packet(&grid, v);
        let masks = DomainMasks::free(&grid);
        let mut prop = InteractingPropagator::new(
            &grid,
            &TubeSpec::default(),
            &masks,
            1.0,
            v,
            PotentialContext::free(),
        )
        .unwrap();
        let dt = 0.05 / (v * v);
        let mut u = prop.to_carrier(&psi);
        prop.step(&mut u, 0.0, dt).unwrap();
        let num = prop.from_carrier(&u, dt);
        let exact = free_evolve(&psi, dt, 1.0, &Spectral::new(&grid));
        let rel = num.sub(&exact).l2_norm(grid.cell_area()) / exact.l2_norm(grid.cell_area());
        assert!(rel <= 1e-6, "relative one-step error {rel:e}");
    }

    #[test]
    fn uniform_potential_is_a_pure_phase() {
        let grid = GridSpec::new([20.0, 30.0], [128, 256]);
        let tube = TubeSpec::default();
        let masks = build_masks(&grid, &tube, 0.0).unwrap();
        let v = commensurate_velocity(3.0, 1.0, 30.0);
        let mut psi = packet(&grid, v);
        masks.restrict(&mut psi);
        let c = 0.7;
        let mut plain =
            InteractingPropagator::new(&grid, &tube, &masks, 1.0, v, PotentialContext::free())
                .unwrap();
        let mut shifted = InteractingPropagator::new(
            &grid,
            &tube,
            &masks,
            1.0,
            v,
            PotentialContext::free().with_uniform(Arc::new(move |_| c)),
        )
        .unwrap();
        let dt = 0.01;
        let mut a = plain.to_carrier(&psi);
        let mut b = shifted.to_carrier(&psi);
        plain.step(&mut a, 0.0, dt).unwrap();
        shifted.step(&mut b, 0.0, dt).unwrap();
        let undone = b.scaled(Complex64::from_polar(1.0, c * dt));
        assert!(undone.max_abs_diff(&a) < 1e-12);
    }

    #[test]
    fn obstacle_stays_zero_and_norm_is_kept() {
        let grid = GridSpec::new([8.0, 8.0], [64, 128]);
        let tube = TubeSpec {
            a1: 1.0,
            a2: 2.0,
            length: 3.0,
            l1: 0.9,
            l0: 0.4,
        };
        let masks = build_masks(&grid, &tube, 0.0).unwrap();
        let mut psi = ComplexField::from_fn(64, 128, |i, j| {
            let [x1, x2] = grid.point(i, j);
            Complex64::from_polar((-(x1 * x1 + (x2 + 1.0).powi(2))).exp(), 2.0 * x2)
        });
        masks.restrict(&mut psi);
        let mut prop =
            InteractingPropagator::new(&grid, &tube, &masks, 1.0, 0.0, PotentialContext::free())
                .unwrap();
        let mut u = prop.to_carrier(&psi);
        let n0 = u.l2_norm(grid.cell_area());
        for s in 0..50 {
            prop.step(&mut u, s as f64 * 0.01, 0.01).unwrap();
        }
        assert!((u.l2_norm(grid.cell_area()) - n0).abs() < 1e-12);
        for (z, &b) in u.as_slice().iter().zip(&masks.obstacle) {
            if b {
                assert_eq!(*z, Complex64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn absorber_only_removes_norm() {
        let grid = GridSpec {
            extent: [8.0, 16.0],
            points: [32, 128],
            absorber_width: 3.0,
        };
        let tube = TubeSpec {
            a1: 1.0,
            a2: 2.0,
            length: 3.0,
            l1: 0.9,
            l0: 0.4,
        };
        let masks = build_masks(&grid, &tube, 5.0).unwrap();
        let psi = ComplexField::from_fn(32, 128, |i, j| {
            let [x1, x2] = grid.point(i, j);
            let inside = x1.abs() < 0.9 || x1.abs() > 2.1;
            Complex64::from_polar(
                if inside {
                    (-(x1 * x1) - (x2 - 3.0).powi(2)).exp()
                } else {
                    0.0
                },
                4.0 * x2,
            )
        });
        let mut prop =
            InteractingPropagator::new(&grid, &tube, &masks, 1.0, 0.0, PotentialContext::free())
                .unwrap();
        let mut u = prop.to_carrier(&psi);
        let mut last = u.l2_norm(grid.cell_area());
        for s in 0..200 {
            prop.step(&mut u, s as f64 * 0.01, 0.01).unwrap();
            let n = u.l2_norm(grid.cell_area());
            assert!(n <= last * (1.0 + 1e-13));
            last = n;
        }
        assert!(last < 0.9 * psi.l2_norm(grid.cell_area()));
    }
}
