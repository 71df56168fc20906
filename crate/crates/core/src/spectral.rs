//! Discrete Fourier transforms on the periodic box.

use crate::field::ComplexField;
use crate::geometry::GridSpec;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::TAU;
use std::sync::Arc;

/// Planned 2D transforms plus the momentum grid `p = 2π·fftfreq(N, dx)`.
pub struct Spectral {
    n1: usize,
    n2: usize,
    fwd1: Arc<dyn Fft<f64>>,
    inv1: Arc<dyn Fft<f64>>,
    fwd2: Arc<dyn Fft<f64>>,
    inv2: Arc<dyn Fft<f64>>,
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
    cell_area: f64,
}

pub fn fft_momenta(n: usize, dx: f64) -> Vec<f64> {
    let scale = TAU / (n as f64 * dx);
    (0..n)
        .map(|k| {
            let signed = if k < n.div_ceil(2) {
                k as isize
            } else {
                k as isize - n as isize
            };
            signed as f64 * scale
        })
        .collect()
}

impl Spectral {
    pub fn new(grid: &GridSpec) -> Self {
        let (n1, n2) = (grid.n1(), grid.n2());
        let mut planner = FftPlanner::new();
        let [d1, d2] = grid.dx();
        Self {
            n1,
            n2,
            fwd1: planner.plan_fft_forward(n1),
            inv1: planner.plan_fft_inverse(n1),
            fwd2: planner.plan_fft_forward(n2),
            inv2: planner.plan_fft_inverse(n2),
            p1: fft_momenta(n1, d1),
            p2: fft_momenta(n2, d2),
            cell_area: grid.cell_area(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    /// Unnormalized forward transform, in place.
    pub fn forward(&self, field: &mut ComplexField) {
        self.transform(field, &*self.fwd1, &*self.fwd2);
    }

    /// Inverse transform including the `1/(N1·N2)` normalization, in place.
    pub fn inverse(&self, field: &mut ComplexField) {
        self.transform(field, &*self.inv1, &*self.inv2);
        let s = 1.0 / (self.n1 * self.n2) as f64;
        field.as_mut_slice().iter_mut().for_each(|z| *z *= s);
    }

    fn transform(&self, field: &mut ComplexField, f1: &dyn Fft<f64>, f2: &dyn Fft<f64>) {
        assert_eq!(
            field.dims(),
            (self.n1, self.n2),
            "field does not match spectral plan"
        );
        let (n1, n2) = (self.n1, self.n2);
        let data = field.as_mut_slice();
        f2.process(data);
        let mut cols = vec![Complex64::new(0.0, 0.0); n1 * n2];
        transpose(data, &mut cols, n1, n2);
        f1.process(&mut cols);
        transpose(&cols, data, n2, n1);
    }

    /// Applies a momentum-space multiplier `f(p1, p2)`.
    pub fn apply_multiplier(&self, field: &mut ComplexField, f: impl Fn(f64, f64) -> Complex64) {
        self.forward(field);
        let n2 = self.n2;
        for (k, z) in field.as_mut_slice().iter_mut().enumerate() {
            *z *= f(self.p1[k / n2], self.p2[k % n2]);
        }
        self.inverse(field);
    }

    /// x2 momenta relabelled into the band `[center − π/dx2, center + π/dx2)`.
    ///
    /// A boosted state's spectrum sits around its carrier; labelling the FFT
    /// bins in the band around that carrier keeps multipliers covariant under
    /// the boost.
    pub fn p2_in_band(&self, center: f64) -> Vec<f64> {
        let width = self.band_width2();
        self.p2
            .iter()
            .map(|&p| p - width * ((p - center + 0.5 * width) / width).floor())
            .collect()
    }

    /// Width `2π/dx2` of the x2 momentum band.
    pub fn band_width2(&self) -> f64 {
        let n = self.n2 as f64;
        if self.n2 < 2 {
            return 0.0;
        }
        (self.p2[1] - self.p2[0]) * n
    }

    /// Applies a multiplier with x2 momenta taken from the band around `center`.
    pub fn apply_multiplier_in_band(
        &self,
        field: &mut ComplexField,
        center: f64,
        f: impl Fn(f64, f64) -> Complex64,
    ) {
        let p2 = self.p2_in_band(center);
        self.forward(field);
        let n2 = self.n2;
        for (k, z) in field.as_mut_slice().iter_mut().enumerate() {
            *z *= f(self.p1[k / n2], p2[k % n2]);
        }
        self.inverse(field);
    }

    /// `‖ψ‖²` evaluated from unnormalized coefficients (discrete Parseval).
    pub fn norm_sqr_from_coefficients(&self, coeffs: &ComplexField) -> f64 {
        let s: f64 = coeffs.as_slice().iter().map(|z| z.norm_sqr()).sum();
        s * self.cell_area / (self.n1 * self.n2) as f64
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    const B: usize = 32;
    for rb in (0..rows).step_by(B) {
        for cb in (0..cols).step_by(B) {
            for r in rb..(rb + B).min(rows) {
                for c in cb..(cb + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn momenta_layout() {
        let p = fft_momenta(8, 0.5);
        let s = TAU / 4.0;
        assert_eq!(
            p,
            vec![0.0, s, 2.0 * s, 3.0 * s, -4.0 * s, -3.0 * s, -2.0 * s, -s]
        );
    }

    #[test]
    fn band_relabelling() {
        let g = GridSpec::new([2.0, 8.0], [4, 8]);
        let sp = Spectral::new(&g);
        let w = sp.band_width2();
        assert!((w - TAU).abs() < 1e-12);
        assert_eq!(sp.p2_in_band(0.0), sp.p2);
        let c = 3.3;
        let shifted = sp.p2_in_band(c);
        for (a, b) in shifted.iter().zip(&sp.p2) {
            assert!(*a >= c - 0.5 * w - 1e-12 && *a < c + 0.5 * w);
            let k = (a - b) / w;
            assert!((k - k.round()).abs() < 1e-12);
        }
    }

    #[test]
    fn roundtrip_is_identity() {
        let g = GridSpec::new([3.0, 5.0], [8, 16]);
        let sp = Spectral::new(&g);
        let f = ComplexField::from_fn(8, 16, |i, j| {
            Complex64::new((i * 3 + j) as f64 * 0.1, (j as f64).sin())
        });
        let mut h = f.clone();
        sp.forward(&mut h);
        sp.inverse(&mut h);
        assert!(h.max_abs_diff(&f) < 1e-13);
    }

    #[test]
    fn single_mode_lands_in_single_bin() {
        let g = GridSpec::new([2.0, 4.0], [8, 16]);
        let sp = Spectral::new(&g);
        let (k1, k2) = (sp.p1[2], sp.p2[13]);
        let mut f = ComplexField::from_fn(8, 16, |i, j| {
            let [x1, x2] = g.point(i, j);
            Complex64::from_polar(1.0, k1 * x1 + k2 * x2)
        });
        sp.forward(&mut f);
        for (k, z) in f.as_slice().iter().enumerate() {
            if k == 2 * 16 + 13 {
                assert!((z.norm() - 128.0).abs() < 1e-10);
            } else {
                assert!(z.norm() < 1e-10);
            }
        }
    }
}
