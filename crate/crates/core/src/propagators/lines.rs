//! Periodic tridiagonal line systems for the Cayley factors of the ADI step.
//!
//! Each one-dimensional factor is `A⁻¹B` with `A = I + iτH`, `B = I − iτH`
//! and `H` a Hermitian periodic tridiagonal operator. Since `B = 2I − A`,
//! the factor is applied as `2A⁻¹u − u`. Dirichlet obstacle nodes get
//! identity rows and all couplings touching them are removed, so the exterior
//! problem stays Hermitian and the factor stays unitary.
//!
//! The periodic corner is handled by Sherman–Morrison on top of a plain
//! Thomas factorization. Lines that share an obstacle pattern share one
//! factorization and are solved `LANES` at a time in split real/imaginary
//! SIMD registers, so the recurrences vectorize across lines.

use crate::error::{Error, Result};
use num_complex::Complex64;
use wide::f64x4;

const ONE: Complex64 = Complex64::new(1.0, 0.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Below this pivot magnitude the factorization is treated as broken.
const PIVOT_FLOOR: f64 = 1e-12;

/// Relative size below which seam-correction entries are dropped.
const NEGLIGIBLE: f64 = 1e-40;

/// Amplitudes below this are set to zero inside the recurrences. The exact
/// solution has exponentially small tails that otherwise sink into subnormal
/// range, where arithmetic is an order of magnitude slower.
const TINY: f64 = 1e-150;

#[inline(always)]
fn flush(x: f64) -> f64 {
    if x.abs() < TINY {
        0.0
    } else {
        x
    }
}

#[inline(always)]
fn flush_c(z: Complex64) -> Complex64 {
    Complex64::new(flush(z.re), flush(z.im))
}

/// Lines solved together; a multiple of four.
pub const LANES: usize = 8;

/// Hermitian periodic tridiagonal operator with constant stencil.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    /// `H[j][j]`.
    pub diag: f64,
    /// `H[j][j+1]`; `H[j][j−1]` is its conjugate.
    pub hop: Complex64,
}

/// Factorized `A = I + iτH` for one obstacle pattern.
#[derive(Debug, Clone)]
pub struct LineSolver {
    n: usize,
    sub: Vec<Complex64>,
    /// Kept only to rebuild the dense matrix in tests.
    #[cfg_attr(not(test), allow(dead_code))]
    diag: Vec<Complex64>,
    #[cfg_attr(not(test), allow(dead_code))]
    sup: Vec<Complex64>,
    /// Thomas upper coefficients of the corner-free matrix `A'`.
    cp: Vec<Complex64>,
    inv_den: Vec<Complex64>,
    /// First row of `A'⁻¹`.
    w: Vec<Complex64>,
    /// Sherman–Morrison column `A'⁻¹u`.
    z: Vec<Complex64>,
    /// Weight of the last entry in `v·y`.
    s: Complex64,
    /// `1/(1 + v·z)`.
    fac: Complex64,
}

impl LineSolver {
    pub fn new(stencil: Stencil, tau: f64, blocked: &[bool]) -> Result<Self> {
        let n = blocked.len();
        if n < 3 {
            return Err(Error::Solver(format!("line of length {n} is too short")));
        }
        let i = Complex64::new(0.0, tau);
        let mut sub = vec![ZERO; n];
        let mut diag = vec![ONE; n];
        let mut sup = vec![ZERO; n];
        for j in 0..n {
            if blocked[j] {
                continue;
            }
            diag[j] = ONE + i * stencil.diag;
            if !blocked[(j + 1) % n] {
                sup[j] = i * stencil.hop;
            }
            if !blocked[(j + n - 1) % n] {
                sub[j] = i * stencil.hop.conj();
            }
        }

        let gamma = -diag[0];
        let (beta, alpha) = (sub[0], sup[n - 1]);
        let mut dmod = diag.clone();
        dmod[0] -= gamma;
        dmod[n - 1] -= alpha * beta / gamma;

        let (cp, inv_den) = thomas_factor(&sub, &dmod, &sup)?;
        let mut u = vec![ZERO; n];
        u[0] = gamma;
        u[n - 1] = alpha;
        let z = thomas_solve(&sub, &cp, &inv_den, &u);
        let s = beta / gamma;
        let denom = ONE + z[0] + s * z[n - 1];
        if denom.norm() < PIVOT_FLOOR {
            return Err(Error::Solver("periodic correction is singular".into()));
        }

        // Row 0 of A'⁻¹ solves A'ᵀw = e0.
        let sub_t: Vec<Complex64> = (0..n)
            .map(|j| if j == 0 { ZERO } else { sup[j - 1] })
            .collect();
        let sup_t: Vec<Complex64> = (0..n)
            .map(|j| if j + 1 == n { ZERO } else { sub[j + 1] })
            .collect();
        let (cp_t, inv_t) = thomas_factor(&sub_t, &dmod, &sup_t)?;
        let mut e0 = vec![ZERO; n];
        e0[0] = ONE;
        let mut w = thomas_solve(&sub_t, &cp_t, &inv_t, &e0);
        let mut z = z;
        flush_negligible(&mut w);
        flush_negligible(&mut z);

        Ok(Self {
            n,
            sub,
            diag,
            sup,
            cp,
            inv_den,
            w,
            z,
            s,
            fac: ONE / denom,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place `u ← A⁻¹B u` on one contiguous line; `y` is scratch of length `n`.
    pub fn apply(&self, u: &mut [Complex64], y: &mut [Complex64]) {
        let n = self.n;
        assert!(u.len() == n && y.len() == n);
        let mut acc = ZERO;
        let mut prev = ZERO;
        for j in 0..n {
            acc += self.w[j] * u[j];
            prev = flush_c((u[j] - self.sub[j] * prev) * self.inv_den[j]);
            y[j] = prev;
        }
        let coef = (acc + self.s * prev) * self.fac;
        let mut next = ZERO;
        for j in (0..n).rev() {
            next = flush_c(y[j] - self.cp[j] * next);
            u[j] = 2.0 * (next - coef * self.z[j]) - u[j];
        }
    }

    /// Dense `A` for tests.
    #[cfg(test)]
    pub(crate) fn dense_a(&self) -> Vec<Vec<Complex64>> {
        let n = self.n;
        let mut a = vec![vec![ZERO; n]; n];
        for j in 0..n {
            a[j][j] = self.diag[j];
            a[j][(j + 1) % n] += self.sup[j];
            a[j][(j + n - 1) % n] += self.sub[j];
        }
        a
    }
}

/// `LANES` values in split real/imaginary form.
#[derive(Clone, Copy)]
struct Lane {
    re: [f64x4; HALVES],
    im: [f64x4; HALVES],
}

const HALVES: usize = LANES / 4;

impl Lane {
    const ZERO: Lane = Lane {
        re: [f64x4::ZERO; HALVES],
        im: [f64x4::ZERO; HALVES],
    };

    #[inline(always)]
    fn load(data: &[Complex64], idx: &[usize; LANES]) -> Self {
        let mut re = [0.0; LANES];
        let mut im = [0.0; LANES];
        for k in 0..LANES {
            let z = data[idx[k]];
            re[k] = z.re;
            im[k] = z.im;
        }
        Lane {
            re: split(re),
            im: split(im),
        }
    }

    #[inline(always)]
    fn store(self, data: &mut [Complex64], idx: &[usize; LANES], count: usize) {
        let (re, im) = (join(self.re), join(self.im));
        for k in 0..count {
            data[idx[k]] = Complex64::new(re[k], im[k]);
        }
    }
}

#[inline(always)]
fn split(x: [f64; LANES]) -> [f64x4; HALVES] {
    std::array::from_fn(|h| f64x4::from([x[4 * h], x[4 * h + 1], x[4 * h + 2], x[4 * h + 3]]))
}

#[inline(always)]
fn join(x: [f64x4; HALVES]) -> [f64; LANES] {
    let mut out = [0.0; LANES];
    for (h, v) in x.iter().enumerate() {
        out[4 * h..4 * h + 4].copy_from_slice(&v.to_array());
    }
    out
}

#[inline(always)]
fn flush_v(x: f64x4) -> f64x4 {
    x.abs()
        .simd_gt(f64x4::splat(TINY))
        .bitselect(x, f64x4::ZERO)
}

/// Complex scalar broadcast to every lane.
#[derive(Clone, Copy)]
struct Coef {
    re: f64x4,
    im: f64x4,
}

impl Coef {
    #[inline(always)]
    fn new(c: Complex64) -> Self {
        Coef {
            re: f64x4::splat(c.re),
            im: f64x4::splat(c.im),
        }
    }
}

/// Recurrence state of one lane group between positions along the line.
#[derive(Clone, Copy)]
struct Forward {
    acc: Lane,
    prev: Lane,
}

impl Forward {
    const START: Forward = Forward {
        acc: Lane::ZERO,
        prev: Lane::ZERO,
    };

    /// Eliminates position `j` and returns the stored pivot row value `y[j]`.
    #[inline(always)]
    fn step(&mut self, l: &LineSolver, j: usize, u: &Lane) -> Lane {
        let (w, a, inv) = (
            Coef::new(l.w[j]),
            Coef::new(l.sub[j]),
            Coef::new(l.inv_den[j]),
        );
        for h in 0..HALVES {
            let (ur, ui) = (u.re[h], u.im[h]);
            let (pr, pi) = (self.prev.re[h], self.prev.im[h]);
            self.acc.re[h] += w.re * ur - w.im * ui;
            self.acc.im[h] += w.re * ui + w.im * ur;
            let tr = ur - (a.re * pr - a.im * pi);
            let ti = ui - (a.re * pi + a.im * pr);
            self.prev.re[h] = flush_v(inv.re * tr - inv.im * ti);
            self.prev.im[h] = flush_v(inv.re * ti + inv.im * tr);
        }
        self.prev
    }

    /// Sherman–Morrison coefficient of the correction column.
    #[inline(always)]
    fn finish(&self, l: &LineSolver) -> Lane {
        let (s, f) = (Coef::new(l.s), Coef::new(l.fac));
        let mut c = Lane::ZERO;
        for h in 0..HALVES {
            let (pr, pi) = (self.prev.re[h], self.prev.im[h]);
            let tr = self.acc.re[h] + s.re * pr - s.im * pi;
            let ti = self.acc.im[h] + s.re * pi + s.im * pr;
            c.re[h] = f.re * tr - f.im * ti;
            c.im[h] = f.re * ti + f.im * tr;
        }
        c
    }
}

/// Back substitution at position `j`; returns `2x − u` for the new value.
#[inline(always)]
fn back_step(l: &LineSolver, j: usize, next: &mut Lane, y: &Lane, corr: &Lane, u: &Lane) -> Lane {
    let (c, z) = (Coef::new(l.cp[j]), Coef::new(l.z[j]));
    let two = f64x4::splat(2.0);
    let mut out = Lane::ZERO;
    for h in 0..HALVES {
        let (nr, ni) = (next.re[h], next.im[h]);
        let tr = y.re[h] - (c.re * nr - c.im * ni);
        let ti = y.im[h] - (c.re * ni + c.im * nr);
        next.re[h] = flush_v(tr);
        next.im[h] = flush_v(ti);
        let xr = tr - (corr.re[h] * z.re - corr.im[h] * z.im);
        let xi = ti - (corr.re[h] * z.im + corr.im[h] * z.re);
        out.re[h] = two * xr - u.re[h];
        out.im[h] = two * xi - u.im[h];
    }
    out
}

/// Lines sharing one solver, padded to `LANES` by repeating the last line.
#[derive(Debug, Clone)]
pub struct LaneGroup {
    pub solver: usize,
    lines: [usize; LANES],
    count: usize,
}

#[cfg(test)]
impl LaneGroup {
    pub fn lines(&self) -> &[usize] {
        &self.lines[..self.count]
    }
}

/// Groups of up to `LANES` lines that share one solver.
pub fn lane_groups(pattern_of_line: &[usize]) -> Vec<LaneGroup> {
    let mut by_pattern: Vec<Vec<usize>> = Vec::new();
    for (line, &p) in pattern_of_line.iter().enumerate() {
        if by_pattern.len() <= p {
            by_pattern.resize(p + 1, Vec::new());
        }
        by_pattern[p].push(line);
    }
    let mut groups = Vec::new();
    for (p, lines) in by_pattern.into_iter().enumerate() {
        for chunk in lines.chunks(LANES) {
            let last = *chunk.last().expect("chunks are non-empty");
            let lines = std::array::from_fn(|k| chunk.get(k).copied().unwrap_or(last));
            groups.push(LaneGroup {
                solver: p,
                lines,
                count: chunk.len(),
            });
        }
    }
    groups
}

/// Scratch for the pivot rows of the sweeps.
#[derive(Default)]
pub struct SweepBuffer {
    y: Vec<Lane>,
}

impl SweepBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    fn take(&mut self, len: usize) -> &mut [Lane] {
        if self.y.len() < len {
            self.y.resize(len, Lane::ZERO);
        }
        &mut self.y[..len]
    }
}

/// `A⁻¹B` along every x2 line (rows of the row-major `n1 × n2` array),
/// applied `repeat` times.
pub fn sweep_rows(
    data: &mut [Complex64],
    n2: usize,
    solvers: &[LineSolver],
    groups: &[LaneGroup],
    buf: &mut SweepBuffer,
    repeat: usize,
) {
    let y = buf.take(n2);
    for g in groups {
        let l = &solvers[g.solver];
        assert_eq!(l.len(), n2);
        let mut idx: [usize; LANES] = std::array::from_fn(|k| g.lines[k] * n2);
        let base = idx;
        for _ in 0..repeat {
            let mut fwd = Forward::START;
            for (j, yj) in y.iter_mut().enumerate() {
                *yj = fwd.step(l, j, &Lane::load(data, &idx));
                idx.iter_mut().for_each(|i| *i += 1);
            }
            let corr = fwd.finish(l);
            let mut next = Lane::ZERO;
            for j in (0..n2).rev() {
                idx.iter_mut().for_each(|i| *i -= 1);
                let u = Lane::load(data, &idx);
                back_step(l, j, &mut next, &y[j], &corr, &u).store(data, &idx, g.count);
            }
            debug_assert_eq!(idx, base);
        }
    }
}

/// `A⁻¹B` along every x1 line (columns of the row-major `n1 × n2` array).
///
/// All groups advance together one row at a time, so the field is read and
/// written in memory order.
pub fn sweep_columns(
    data: &mut [Complex64],
    n2: usize,
    solvers: &[LineSolver],
    groups: &[LaneGroup],
    buf: &mut SweepBuffer,
) {
    let n1 = data.len() / n2;
    let ng = groups.len();
    let y = buf.take(n1 * ng);
    let mut state = vec![Forward::START; ng];
    for i in 0..n1 {
        let row = i * n2;
        for (gi, g) in groups.iter().enumerate() {
            let idx = g.lines.map(|j| row + j);
            y[i * ng + gi] = state[gi].step(&solvers[g.solver], i, &Lane::load(data, &idx));
        }
    }
    let corr: Vec<Lane> = groups
        .iter()
        .zip(&state)
        .map(|(g, f)| f.finish(&solvers[g.solver]))
        .collect();
    let mut next = vec![Lane::ZERO; ng];
    for i in (0..n1).rev() {
        let row = i * n2;
        for (gi, g) in groups.iter().enumerate() {
            let idx = g.lines.map(|j| row + j);
            let u = Lane::load(data, &idx);
            back_step(
                &solvers[g.solver],
                i,
                &mut next[gi],
                &y[i * ng + gi],
                &corr[gi],
                &u,
            )
            .store(data, &idx, g.count);
        }
    }
}

/// `w` and `z` decay geometrically away from the seam; their far entries end
/// up subnormal, which is exact zero for our purposes and very slow to multiply.
fn flush_negligible(x: &mut [Complex64]) {
    let peak = x.iter().map(|c| c.norm()).fold(0.0, f64::max);
    for c in x.iter_mut() {
        if c.norm() < NEGLIGIBLE * peak {
            *c = ZERO;
        }
    }
}

fn thomas_factor(
    sub: &[Complex64],
    diag: &[Complex64],
    sup: &[Complex64],
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let n = diag.len();
    let mut cp = vec![ZERO; n];
    let mut inv = vec![ZERO; n];
    let mut prev_cp = ZERO;
    for j in 0..n {
        let den = diag[j] - if j == 0 { ZERO } else { sub[j] * prev_cp };
        if den.norm() < PIVOT_FLOOR {
            return Err(Error::Solver(format!("zero pivot at line index {j}")));
        }
        inv[j] = ONE / den;
        cp[j] = sup[j] * inv[j];
        prev_cp = cp[j];
    }
    Ok((cp, inv))
}

fn thomas_solve(
    sub: &[Complex64],
    cp: &[Complex64],
    inv: &[Complex64],
    rhs: &[Complex64],
) -> Vec<Complex64> {
    let n = rhs.len();
    let mut x = vec![ZERO; n];
    let mut prev = ZERO;
    for j in 0..n {
        prev = (rhs[j] - if j == 0 { ZERO } else { sub[j] * prev }) * inv[j];
        x[j] = prev;
    }
    for j in (0..n - 1).rev() {
        x[j] = x[j] - cp[j] * x[j + 1];
    }
    x
}
