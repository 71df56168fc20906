//! Tube obstacle, its hole, the computational box and the node masks.
//!
//! The problem is posed in two dimensions. The tube `K` is a pair of wall
//! slabs `a1 ≤ |x1| ≤ a2`, `|x2| ≤ L/2`; the hole `K0` is the open channel
//! `|x1| < a1` between them. The beam travels along `+x2`.

use crate::error::{Error, Result};
use crate::field::ComplexField;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TubeSpec {
    /// Inner half-width of the hole.
    pub a1: f64,
    /// Outer half-width of the walls.
    pub a2: f64,
    /// Tube extent along the beam axis.
    #[serde(rename = "L")]
    pub length: f64,
    /// Radius of the ball on which the pulse is spatially flat.
    #[serde(rename = "L1")]
    pub l1: f64,
    /// Half-support of the pulse in the travelled distance `z = vt`.
    #[serde(rename = "L0")]
    pub l0: f64,
}

impl Default for TubeSpec {
    fn default() -> Self {
        Self {
            a1: 6.0,
            a2: 8.0,
            length: 24.0,
            l1: 5.0,
            l0: 2.0,
        }
    }
}

impl TubeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.a1 > 0.0) {
            return Err(Error::strict("0 < a1", 0.0, self.a1));
        }
        if !(self.a1 < self.a2) {
            return Err(Error::strict("a1 < a2", self.a1, self.a2));
        }
        if !(self.length > 0.0) {
            return Err(Error::strict("0 < L", 0.0, self.length));
        }
        if !(self.l0 > 0.0) {
            return Err(Error::strict("0 < L0", 0.0, self.l0));
        }
        if !(self.l1 < self.a1) {
            return Err(Error::strict("L1 < a1", self.l1, self.a1));
        }
        if !(self.l1 < self.length / 2.0) {
            return Err(Error::strict("L1 < L/2", self.l1, self.length / 2.0));
        }
        if !(self.l0 < self.l1) {
            return Err(Error::strict("L0 < L1", self.l0, self.l1));
        }
        Ok(())
    }

    /// Upper bound (exclusive) on the envelope radius: `L1 − L0`.
    pub fn max_envelope_radius(&self) -> f64 {
        self.l1 - self.l0
    }
}

pub fn is_inside_k(x: Point, spec: &TubeSpec) -> bool {
    let ax = x[0].abs();
    spec.a1 <= ax && ax <= spec.a2 && x[1].abs() <= spec.length / 2.0
}

pub fn is_inside_k0(x: Point, spec: &TubeSpec) -> bool {
    x[0].abs() < spec.a1 && x[1].abs() <= spec.length / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Box side lengths `(X1, X2)`; the box is `[−X1/2, X1/2) × [−X2/2, X2/2)`.
    pub extent: [f64; 2],
    /// Node counts `(N1, N2)`, both powers of two.
    pub points: [usize; 2],
    /// Width of the absorbing layer at each `±x2` end.
    #[serde(default)]
    pub absorber_width: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            extent: [18.0, 36.0],
            points: [256, 2048],
            absorber_width: 0.0,
        }
    }
}

impl GridSpec {
    pub fn new(extent: [f64; 2], points: [usize; 2]) -> Self {
        Self {
            extent,
            points,
            absorber_width: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for axis in 0..2 {
            let n = self.points[axis];
            if n < 4 || !n.is_power_of_two() {
                return Err(Error::Config(format!(
                    "grid.points[{axis}] = {n} must be a power of two ≥ 4"
                )));
            }
            if !(self.extent[axis] > 0.0) {
                return Err(Error::strict(
                    &format!("0 < grid.extent[{axis}]"),
                    0.0,
                    self.extent[axis],
                ));
            }
        }
        if !(self.absorber_width >= 0.0) || !(self.absorber_width < self.extent[1] / 2.0) {
            return Err(Error::Config(format!(
                "absorber_width {} must lie in [0, X2/2)",
                self.absorber_width
            )));
        }
        Ok(())
    }

    pub fn n1(&self) -> usize {
        self.points[0]
    }

    pub fn n2(&self) -> usize {
        self.points[1]
    }

    pub fn len(&self) -> usize {
        self.points[0] * self.points[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dx(&self) -> [f64; 2] {
        [
            self.extent[0] / self.points[0] as f64,
            self.extent[1] / self.points[1] as f64,
        ]
    }

    pub fn cell_area(&self) -> f64 {
        let [d1, d2] = self.dx();
        d1 * d2
    }

    pub fn x1(&self, i1: usize) -> f64 {
        -0.5 * self.extent[0] + i1 as f64 * self.dx()[0]
    }

    pub fn x2(&self, i2: usize) -> f64 {
        -0.5 * self.extent[1] + i2 as f64 * self.dx()[1]
    }

    pub fn point(&self, i1: usize, i2: usize) -> Point {
        [self.x1(i1), self.x2(i2)]
    }

    /// Same box with `factor`× as many nodes per axis.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            extent: self.extent,
            points: [self.points[0] * factor, self.points[1] * factor],
            absorber_width: self.absorber_width,
        }
    }

    /// Start of the absorbing layer in `|x2|`.
    pub fn absorber_start(&self) -> f64 {
        0.5 * self.extent[1] - self.absorber_width
    }

    /// Points-per-wavelength rule along the beam axis: `dx2·m·v ≤ 2π/10`.
    pub fn check_resolution(&self, mass: f64, v_max: f64) -> Result<()> {
        let lhs = self.dx()[1] * mass * v_max;
        let rhs = std::f64::consts::TAU / 10.0;
        if lhs > rhs {
            return Err(Error::Constraint(format!(
                "dx2·m·v_max ≤ 2π/10 violated: {lhs} > {rhs}"
            )));
        }
        Ok(())
    }

    /// Box containment along the beam: the physics region must hold the packet
    /// out to `reach + R + 4·spread`, where `spread` is its ballistic growth.
    pub fn check_containment(&self, reach: f64, radius: f64, spread: f64) -> Result<()> {
        let need = reach + radius + 4.0 * spread;
        let have = self.absorber_start();
        if need > have {
            return Err(Error::Constraint(format!(
                "Z + R + 4·σ_spread ≤ X2/2 − absorber_width violated: {need} > {have}"
            )));
        }
        Ok(())
    }
}

/// Node classification of the box.
#[derive(Debug, Clone)]
pub struct DomainMasks {
    pub n1: usize,
    pub n2: usize,
    pub cell_area: f64,
    /// Nodes inside the closed tube `K`.
    pub obstacle: Vec<bool>,
    /// Complement of `obstacle`: the discrete exterior domain.
    pub interior: Vec<bool>,
    /// Absorbing-layer rate per node; zero in the physics region.
    pub absorber: Vec<f64>,
}

impl DomainMasks {
    /// Masks for an empty box (no obstacle, no absorber).
    pub fn free(grid: &GridSpec) -> Self {
        let n = grid.len();
        Self {
            n1: grid.n1(),
            n2: grid.n2(),
            cell_area: grid.cell_area(),
            obstacle: vec![false; n],
            interior: vec![true; n],
            absorber: vec![0.0; n],
        }
    }

    pub fn obstacle_count(&self) -> usize {
        self.obstacle.iter().filter(|&&b| b).count()
    }

    pub fn has_absorber(&self) -> bool {
        self.absorber.iter().any(|&a| a != 0.0)
    }

    /// Zeroes the field on obstacle nodes.
    pub fn restrict(&self, field: &mut ComplexField) {
        for (z, &blocked) in field.as_mut_slice().iter_mut().zip(&self.obstacle) {
            if blocked {
                *z = num_complex::Complex64::new(0.0, 0.0);
            }
        }
    }
}

pub fn build_masks(grid: &GridSpec, tube: &TubeSpec, cap_strength: f64) -> Result<DomainMasks> {
    grid.validate()?;
    tube.validate()?;
    let x2_start = grid.absorber_start();
    if tube.length / 2.0 >= x2_start {
        return Err(Error::Geometry(format!(
            "tube end L/2 = {} reaches the absorber region starting at |x2| = {}",
            tube.length / 2.0,
            x2_start
        )));
    }
    if tube.a2 >= grid.extent[0] / 2.0 {
        return Err(Error::Geometry(format!(
            "tube wall a2 = {} does not fit inside X1/2 = {}",
            tube.a2,
            grid.extent[0] / 2.0
        )));
    }
    let (n1, n2) = (grid.n1(), grid.n2());
    let mut obstacle = vec![false; n1 * n2];
    obstacle
        .par_chunks_mut(n2)
        .enumerate()
        .for_each(|(i1, row)| {
            for (i2, o) in row.iter_mut().enumerate() {
                *o = is_inside_k(grid.point(i1, i2), tube);
            }
        });
    let interior = obstacle.iter().map(|&o| !o).collect();
    let width = grid.absorber_width;
    let mut absorber = vec![0.0; n1 * n2];
    if cap_strength != 0.0 && width > 0.0 {
        absorber.par_chunks_mut(n2).for_each(|row| {
            for (i2, a) in row.iter_mut().enumerate() {
                let excess = grid.x2(i2).abs() - x2_start;
                if excess > 0.0 {
                    *a = cap_strength * (excess / width).powi(2);
                }
            }
        });
    }
    Ok(DomainMasks {
        n1,
        n2,
        cell_area: grid.cell_area(),
        obstacle,
        interior,
        absorber,
    })
}

const CLEARANCE_SAMPLES: usize = 720;

/// Whether every line `{x + τ·vhat}` through the closed ball `|x| ≤ ball_radius`
/// misses the tube.
pub fn lambda_vhat_clearance(tube: &TubeSpec, vhat: Point, ball_radius: f64) -> bool {
    let norm = (vhat[0] * vhat[0] + vhat[1] * vhat[1]).sqrt();
    let d = [vhat[0] / norm, vhat[1] / norm];
    if d[0].abs() < 1e-15 {
        // Beam-axis lines are x1 = const; the walls start at |x1| = a1.
        return ball_radius < tube.a1;
    }
    // A line is fixed by its offset along the normal; the ball's lines span
    // offsets [−r, r], all attained on its boundary.
    let normal = [-d[1], d[0]];
    let hits = |p: Point| {
        let offset = p[0] * normal[0] + p[1] * normal[1];
        wall_rectangles(tube).iter().any(|rect| {
            let proj = rect_corners(rect).map(|c| c[0] * normal[0] + c[1] * normal[1]);
            let lo = proj.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = proj.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            lo <= offset && offset <= hi
        })
    };
    let extremes = [
        [ball_radius * normal[0], ball_radius * normal[1]],
        [-ball_radius * normal[0], -ball_radius * normal[1]],
    ];
    if extremes.iter().any(|&p| hits(p)) {
        return false;
    }
    (0..CLEARANCE_SAMPLES).all(|k| {
        let theta = std::f64::consts::TAU * k as f64 / CLEARANCE_SAMPLES as f64;
        !hits([ball_radius * theta.cos(), ball_radius * theta.sin()])
    })
}

/// The two closed wall slabs as `[x1_lo, x1_hi, x2_lo, x2_hi]`.
fn wall_rectangles(tube: &TubeSpec) -> [[f64; 4]; 2] {
    let h = tube.length / 2.0;
    [[tube.a1, tube.a2, -h, h], [-tube.a2, -tube.a1, -h, h]]
}

fn rect_corners(r: &[f64; 4]) -> [Point; 4] {
    [[r[0], r[2]], [r[0], r[3]], [r[1], r[2]], [r[1], r[3]]]
}

/// `L²(Λ)` norm: obstacle nodes are excluded from the sum.
pub fn l2_norm_on_domain(field: &ComplexField, masks: &DomainMasks) -> f64 {
    let sum: f64 = field
        .as_slice()
        .iter()
        .zip(&masks.interior)
        .filter(|(_, &inside)| inside)
        .map(|(z, _)| z.norm_sqr())
        .sum();
    (sum * masks.cell_area).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn small_tube() -> TubeSpec {
        TubeSpec {
            a1: 1.0,
            a2: 2.0,
            length: 4.0,
            l1: 0.9,
            l0: 0.4,
        }
    }

    #[test]
    fn k_membership() {
        let t = small_tube();
        assert!(!is_inside_k([0.0, 0.0], &t));
        assert!(is_inside_k([1.5, 0.0], &t));
        assert!(!is_inside_k([1.5, 3.0], &t));
        assert!(is_inside_k([-1.0, 2.0], &t));
    }

    #[test]
    fn k0_membership() {
        let t = TubeSpec::default();
        assert!(is_inside_k0([0.0, 0.0], &t));
        assert!(!is_inside_k0([t.a1, 0.0], &t));
        assert!(!is_inside_k0([0.0, t.length / 2.0 + 1e-9], &t));
    }

    #[test]
    fn hole_and_wall_disjoint() {
        let t = TubeSpec::default();
        for i in -60..=60 {
            for j in -40..=40 {
                let x = [i as f64 * 0.17, j as f64 * 0.41];
                assert!(!(is_inside_k0(x, &t) && is_inside_k(x, &t)));
            }
        }
    }

    #[test]
    fn tube_validation_names_inequality() {
        let t = TubeSpec {
            l1: 6.5,
            ..TubeSpec::default()
        };
        let msg = t.validate().unwrap_err().to_string();
        assert!(msg.contains("L1 < a1"), "{msg}");
        let t = TubeSpec {
            l0: 5.0,
            ..TubeSpec::default()
        };
        assert!(t.validate().unwrap_err().to_string().contains("L0 < L1"));
    }

    #[test]
    fn zero_cap_gives_zero_absorber() {
        let mut g = GridSpec::new([20.0, 40.0], [64, 128]);
        g.absorber_width = 4.0;
        let m = build_masks(&g, &TubeSpec::default(), 0.0).unwrap();
        assert!(m.absorber.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn absorber_vanishes_in_physics_region_and_ramps() {
        let mut g = GridSpec::new([20.0, 40.0], [64, 128]);
        g.absorber_width = 4.0;
        let m = build_masks(&g, &TubeSpec::default(), 2.5).unwrap();
        let mut max = 0.0_f64;
        for i1 in 0..g.n1() {
            for i2 in 0..g.n2() {
                let a = m.absorber[i1 * g.n2() + i2];
                if g.x2(i2).abs() <= g.absorber_start() {
                    assert_eq!(a, 0.0);
                }
                max = max.max(a);
            }
        }
        // the box edge x2 = −X2/2 sits exactly at full strength
        assert!((max - 2.5).abs() < 1e-12);
    }

    #[test]
    fn tube_in_absorber_is_rejected() {
        let mut g = GridSpec::new([20.0, 28.0], [64, 128]);
        g.absorber_width = 3.0;
        let err = build_masks(&g, &TubeSpec::default(), 1.0).unwrap_err();
        assert!(matches!(err, Error::Geometry(_)));
    }

    #[test]
    fn masks_partition_and_symmetry() {
        // N even with origin on a node: x → −x maps node i to (N − i) mod N.
        let g = GridSpec::new([20.0, 32.0], [128, 256]);
        let m = build_masks(&g, &TubeSpec::default(), 0.0).unwrap();
        let (n1, n2) = (g.n1(), g.n2());
        for k in 0..n1 * n2 {
            assert!(m.obstacle[k] ^ m.interior[k]);
        }
        for i1 in 1..n1 {
            for i2 in 1..n2 {
                let a = m.obstacle[i1 * n2 + i2];
                assert_eq!(a, m.obstacle[(n1 - i1) * n2 + i2]);
                assert_eq!(a, m.obstacle[i1 * n2 + (n2 - i2)]);
            }
        }
    }

    #[test]
    fn obstacle_area_converges_with_refinement() {
        let tube = TubeSpec::default();
        let exact = 2.0 * (tube.a2 - tube.a1) * tube.length;
        let mut prev = None;
        for g in [
            GridSpec::new([20.0, 32.0], [128, 256]),
            GridSpec::new([20.0, 32.0], [256, 512]),
        ] {
            let m = build_masks(&g, &tube, 0.0).unwrap();
            let area = m.obstacle_count() as f64 * g.cell_area();
            let [d1, d2] = g.dx();
            // one boundary layer of cells around both slabs
            let layer = 2.0 * (2.0 * (tube.a2 - tube.a1) + 2.0 * tube.length) * d1.max(d2);
            assert!((area - exact).abs() <= layer, "area {area} vs {exact}");
            if let Some(p) = prev {
                let diff: f64 = area - p;
                assert!(diff.abs() <= layer);
            }
            prev = Some(area);
        }
    }

    #[test]
    fn clearance_examples() {
        let t = TubeSpec::default();
        assert!(lambda_vhat_clearance(&t, [0.0, 1.0], t.l1));
        assert!(!lambda_vhat_clearance(&t, [1.0, 0.0], 0.1));
        assert!(!lambda_vhat_clearance(&t, [0.0, 1.0], t.a1));
        assert!(lambda_vhat_clearance(&t, [0.0, -1.0], 5.99));
    }

    #[test]
    fn clearance_oblique_lines() {
        let t = TubeSpec::default();
        // A slightly tilted beam axis still clears a small ball...
        let tilt = 0.05_f64;
        assert!(lambda_vhat_clearance(&t, [tilt.sin(), tilt.cos()], 1.0));
        // ...but not once the tilt carries the line into a wall within L/2.
        let tilt = 0.6_f64;
        assert!(!lambda_vhat_clearance(&t, [tilt.sin(), tilt.cos()], 1.0));
    }

    proptest! {
        #[test]
        fn clearance_is_monotone(theta in 0.0..std::f64::consts::PI, r in 0.01..7.0f64, s in 0.0..1.0f64) {
            let t = TubeSpec::default();
            let vhat = [theta.cos(), theta.sin()];
            if lambda_vhat_clearance(&t, vhat, r) {
                prop_assert!(lambda_vhat_clearance(&t, vhat, r * s));
            }
        }

        #[test]
        fn norm_homogeneous_and_triangle(
            seed in proptest::collection::vec(-1.0..1.0f64, 4 * 16 * 16),
            c_re in -3.0..3.0f64, c_im in -3.0..3.0f64,
        ) {
            let g = GridSpec::new([20.0, 20.0], [16, 16]);
            let m = DomainMasks::free(&g);
            let a = ComplexField::from_fn(16, 16, |i, j| Complex64::new(seed[i * 16 + j], seed[256 + i * 16 + j]));
            let b = ComplexField::from_fn(16, 16, |i, j| Complex64::new(seed[512 + i * 16 + j], seed[768 + i * 16 + j]));
            let c = Complex64::new(c_re, c_im);
            let na = l2_norm_on_domain(&a, &m);
            prop_assert!((l2_norm_on_domain(&a.scaled(c), &m) - c.norm() * na).abs() <= 1e-12 * (1.0 + na));
            let mut sum = a.clone();
            sum.as_mut_slice().iter_mut().zip(b.as_slice()).for_each(|(x, y)| *x += y);
            prop_assert!(l2_norm_on_domain(&sum, &m) <= na + l2_norm_on_domain(&b, &m) + 1e-12);
        }
    }

    #[test]
    fn norm_examples() {
        let g = GridSpec::new([4.0, 8.0], [16, 32]);
        let free = DomainMasks::free(&g);
        assert_eq!(l2_norm_on_domain(&ComplexField::zeros(16, 32), &free), 0.0);
        let ones = ComplexField::from_fn(16, 32, |_, _| Complex64::new(1.0, 0.0));
        assert!((l2_norm_on_domain(&ones, &free) - (4.0f64 * 8.0).sqrt()).abs() < 1e-12);

        let g = GridSpec::new([20.0, 32.0], [64, 128]);
        let m = build_masks(&g, &TubeSpec::default(), 0.0).unwrap();
        let wall = ComplexField::from_fn(64, 128, |i, j| {
            Complex64::new(if m.obstacle[i * 128 + j] { 1.0 } else { 0.0 }, 0.0)
        });
        assert_eq!(l2_norm_on_domain(&wall, &m), 0.0);
    }
}
