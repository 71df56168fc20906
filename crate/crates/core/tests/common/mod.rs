#![allow(dead_code)]

use abe_core::experiments::{Setup, SweepConfig};
use abe_core::geometry::{GridSpec, TubeSpec};
use abe_core::states::EnvelopeSpec;
use std::f64::consts::SQRT_2;

/// A narrow tube on a box with an eighth of the default node count.
pub fn small_setup() -> Setup {
    let mut s = Setup {
        tube: TubeSpec {
            a1: 3.0,
            a2: 4.0,
            length: 12.0,
            l1: 2.5,
            l0: 1.0,
        },
        grid: GridSpec::new([9.0, 20.0], [128, 512]),
        envelope: EnvelopeSpec {
            radius: 1.2,
            ..Default::default()
        },
        ..Default::default()
    };
    s.solver.t0_distance = 3.0;
    s.solver.t1_distance = 3.0;
    s
}

pub fn small_sweep() -> SweepConfig {
    SweepConfig {
        velocities: vec![4.0, 4.0 * SQRT_2, 8.0, 8.0 * SQRT_2],
        ..Default::default()
    }
}

/// The same setup as a config file.
pub const SMALL_CONFIG: &str = r#"
[geometry]
a1 = 3.0
a2 = 4.0
L = 12.0
L1 = 2.5
L0 = 1.0

[grid]
extent = [9.0, 20.0]
points = [128, 512]

[envelope]
R = 1.2

[solver]
t0_distance = 3.0
t1_distance = 3.0

[sweep]
velocities = [4.0, 5.656854249492381, 8.0, 11.313708498984761]

[single]
velocity = 8.0

[fringe]
velocity = 8.0
absorber_width = 0.5

[leakage]
time = 5.0
extent = 64.0
points = 1024
"#;
