//! Complex wave-function samples on the 2D box.
//!
//! Storage is row-major with `x2` fastest: node `(i1, i2)` lives at
//! `i1 * n2 + i2`. Rows are therefore lines of constant `x1` running along
//! the beam axis.

use num_complex::Complex64;
use std::ops::{Index, IndexMut};

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    n1: usize,
    n2: usize,
    data: Vec<Complex64>,
}

impl ComplexField {
    pub fn zeros(n1: usize, n2: usize) -> Self {
        Self {
            n1,
            n2,
            data: vec![Complex64::new(0.0, 0.0); n1 * n2],
        }
    }

    pub fn from_vec(n1: usize, n2: usize, data: Vec<Complex64>) -> Self {
        assert_eq!(data.len(), n1 * n2, "field data length does not match dims");
        Self { n1, n2, data }
    }

    pub fn from_fn(n1: usize, n2: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(n1 * n2);
        for i1 in 0..n1 {
            for i2 in 0..n2 {
                data.push(f(i1, i2));
            }
        }
        Self { n1, n2, data }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn row(&self, i1: usize) -> &[Complex64] {
        &self.data[i1 * self.n2..(i1 + 1) * self.n2]
    }

    pub fn scale(&mut self, c: Complex64) {
        self.data.iter_mut().for_each(|z| *z *= c);
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        let mut out = self.clone();
        out.scale(c);
        out
    }

    /// Pointwise difference `self - other`.
    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.dims(), other.dims());
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Self {
            n1: self.n1,
            n2: self.n2,
            data,
        }
    }

    /// Inner product `Σ conj(self)·other` without the cell-area weight.
    pub fn dot(&self, other: &Self) -> Complex64 {
        assert_eq!(self.dims(), other.dims());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Grid `L²` norm with quadrature weight `cell_area`.
    pub fn l2_norm(&self, cell_area: f64) -> f64 {
        (self.data.iter().map(|z| z.norm_sqr()).sum::<f64>() * cell_area).sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dims(), other.dims());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for ComplexField {
    type Output = Complex64;
    fn index(&self, (i1, i2): (usize, usize)) -> &Complex64 {
        &self.data[i1 * self.n2 + i2]
    }
}

impl IndexMut<(usize, usize)> for ComplexField {
    fn index_mut(&mut self, (i1, i2): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i1 * self.n2 + i2]
    }
}
