//! Numerical kernels: dense hermitian eigensolves, Chebyshev expansions of
//! matrix functions on banded hermitian matrices, and banded solves.

use faer::{Mat, Side};
use rustfft::FftPlanner;

use crate::operator::Banded;
use crate::{Error, Result, C64, ZERO};

/// Eigenvalues (ascending) and eigenvectors (columns) of a hermitian matrix.
pub fn eigh(m: &Mat<C64>) -> Result<(Vec<f64>, Mat<C64>)> {
    let e = m.self_adjoint_eigen(Side::Lower).map_err(|_| Error::Eigen)?;
    let s = e.S().column_vector();
    let vals = (0..m.nrows()).map(|i| s[i].re).collect();
    Ok((vals, e.U().to_owned()))
}

pub fn eigvalsh(m: &Mat<C64>) -> Result<Vec<f64>> {
    let v = m.self_adjoint_eigenvalues(Side::Lower).map_err(|_| Error::Eigen)?;
    Ok(v)
}

/// `U diag(f) U^*`.
pub fn reassemble(u: &Mat<C64>, f: &[C64]) -> Mat<C64> {
    let n = u.nrows();
    let scaled = Mat::from_fn(n, f.len(), |i, j| u[(i, j)] * f[j]);
    &scaled * u.adjoint()
}

/// `U^* v`.
pub fn to_eigenbasis(u: &Mat<C64>, v: &[C64]) -> Vec<C64> {
    let n = u.nrows();
    (0..u.ncols())
        .map(|j| {
            let mut acc = ZERO;
            for i in 0..n {
                acc += u[(i, j)].conj() * v[i];
            }
            acc
        })
        .collect()
}

/// `U c`.
pub fn from_eigenbasis(u: &Mat<C64>, c: &[C64]) -> Vec<C64> {
    let n = u.nrows();
    let mut out = vec![ZERO; n];
    for (j, cj) in c.iter().enumerate() {
        if *cj == ZERO {
            continue;
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o += u[(i, j)] * cj;
        }
    }
    out
}

/// Chebyshev expansion `f(x) ~ sum_k a_k T_k((x - c) / h)` on `[c - h, c + h]`.
#[derive(Clone, Debug)]
pub struct ChebyshevSeries {
    pub center: f64,
    pub half_width: f64,
    pub coeffs: Vec<C64>,
}

impl ChebyshevSeries {
    /// Interpolates `f` at Chebyshev nodes on `[lo, hi]`, doubling the node
    /// count until the top quarter of the coefficients is below `tol`
    /// relative to the largest, then truncating.
    pub fn fit(f: impl Fn(f64) -> C64, lo: f64, hi: f64, tol: f64) -> Self {
        let center = 0.5 * (lo + hi);
        let half_width = (0.5 * (hi - lo)).max(f64::MIN_POSITIVE);
        let mut planner = FftPlanner::<f64>::new();
        let mut m = 32usize;
        loop {
            let coeffs = dct_coeffs(&f, center, half_width, m, &mut planner);
            let amax = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
            if amax == 0.0 {
                return Self { center, half_width, coeffs: Vec::new() };
            }
            let tail = coeffs[3 * m / 4..].iter().map(|c| c.norm()).fold(0.0, f64::max);
            if tail <= tol * amax || m >= 1 << 20 {
                if m >= 1 << 20 {
                    log::warn!("chebyshev fit did not converge (tail {:.2e})", tail / amax);
                }
                let keep = coeffs.iter().rposition(|c| c.norm() > 0.1 * tol * amax).map_or(0, |k| k + 1);
                let mut coeffs = coeffs;
                coeffs.truncate(keep);
                return Self { center, half_width, coeffs };
            }
            m *= 2;
        }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, x: f64) -> C64 {
        let y = (x - self.center) / self.half_width;
        let (mut t0, mut t1) = (1.0, y);
        let mut acc = ZERO;
        for (k, a) in self.coeffs.iter().enumerate() {
            let tk = match k {
                0 => 1.0,
                1 => y,
                _ => {
                    let t2 = 2.0 * y * t1 - t0;
                    t0 = t1;
                    t1 = t2;
                    t2
                }
            };
            acc += a * tk;
        }
        acc
    }

    /// `f(H) v` for a hermitian band whose spectrum lies in the fit interval.
    pub fn apply(&self, h: &Banded, v: &[C64]) -> Vec<C64> {
        let n = v.len();
        let mut out = vec![ZERO; n];
        if self.coeffs.is_empty() {
            return out;
        }
        let (c, s) = (self.center, 1.0 / self.half_width);
        let mut prev = v.to_vec();
        for (o, x) in out.iter_mut().zip(&prev) {
            *o = self.coeffs[0] * x;
        }
        if self.coeffs.len() == 1 {
            return out;
        }
        let mut cur = vec![ZERO; n];
        h.apply_into(&prev, &mut cur);
        for (y, x) in cur.iter_mut().zip(&prev) {
            *y = (*y - c * x) * s;
        }
        for (o, x) in out.iter_mut().zip(&cur) {
            *o += self.coeffs[1] * x;
        }
        let mut next = vec![ZERO; n];
        for a in &self.coeffs[2..] {
            h.apply_into(&cur, &mut next);
            for ((y, x), p) in next.iter_mut().zip(&cur).zip(&prev) {
                *y = 2.0 * (*y - c * x) * s - p;
            }
            for (o, x) in out.iter_mut().zip(&next) {
                *o += a * x;
            }
            std::mem::swap(&mut prev, &mut cur);
            std::mem::swap(&mut cur, &mut next);
        }
        out
    }
}

fn dct_coeffs(
    f: &impl Fn(f64) -> C64,
    center: f64,
    half_width: f64,
    m: usize,
    planner: &mut FftPlanner<f64>,
) -> Vec<C64> {
    let mut y = vec![ZERO; 2 * m];
    for j in 0..m {
        let theta = std::f64::consts::PI * (j as f64 + 0.5) / m as f64;
        let fj = f(center + half_width * theta.cos());
        y[j] = fj;
        y[2 * m - 1 - j] = fj;
    }
    planner.plan_fft_forward(2 * m).process(&mut y);
    let mut out: Vec<C64> = (0..m)
        .map(|k| {
            let ph = C64::from_polar(1.0, -std::f64::consts::PI * k as f64 / (2 * m) as f64);
            ph * y[k] / m as f64
        })
        .collect();
    out[0] *= 0.5;
    out
}

/// Spectral enclosure of a hermitian band, padded slightly.
pub fn spectral_bounds(h: &Banded) -> (f64, f64) {
    let (lo, hi) = h.gershgorin();
    let pad = 1e-8 * (hi - lo).abs().max(1.0);
    (lo - pad, hi + pad)
}

/// `f(H) v` by a Chebyshev expansion on the Gershgorin interval of `H`.
pub fn apply_function(h: &Banded, f: impl Fn(f64) -> f64, v: &[C64]) -> Vec<C64> {
    let (lo, hi) = spectral_bounds(h);
    ChebyshevSeries::fit(|x| C64::new(f(x), 0.0), lo, hi, 1e-14).apply(h, v)
}

/// Propagator `exp(-i tau H)` on a hermitian band, reusable for a fixed step.
#[derive(Clone, Debug)]
pub struct ChebyshevExp {
    series: ChebyshevSeries,
    pub tau: f64,
}

impl ChebyshevExp {
    pub fn new(tau: f64, lo: f64, hi: f64) -> Self {
        let series = ChebyshevSeries::fit(|x| C64::from_polar(1.0, -tau * x), lo, hi, 1e-15);
        Self { series, tau }
    }

    pub fn for_band(h: &Banded, tau: f64) -> Self {
        let (lo, hi) = spectral_bounds(h);
        Self::new(tau, lo, hi)
    }

    pub fn degree(&self) -> usize {
        self.series.degree()
    }

    pub fn apply(&self, h: &Banded, v: &[C64]) -> Vec<C64> {
        self.series.apply(h, v)
    }
}

/// LU factors of `H + z` for a hermitian band `H` and `Im z != 0`.
///
/// Every leading block of `H + z` has its spectrum off the real axis, so
/// the factorization exists without pivoting and the band is preserved.
#[derive(Clone, Debug)]
pub struct ShiftedBandLu {
    lu: Banded,
}

impl ShiftedBandLu {
    pub fn new(h: &Banded, z: C64) -> Result<Self> {
        let mut lu = h.shifted(z);
        let n = lu.dim();
        let bw = lu.bandwidth();
        for k in 0..n {
            let piv = lu.get(k, k);
            if piv.norm() < 1e-300 {
                return Err(Error::SingularPivot(k));
            }
            let end = (k + bw + 1).min(n);
            for i in k + 1..end {
                let l = lu.get(i, k) / piv;
                lu.set(i, k, l);
                if l == ZERO {
                    continue;
                }
                for j in k + 1..end {
                    let v = lu.get(i, j) - l * lu.get(k, j);
                    lu.set(i, j, v);
                }
            }
        }
        Ok(Self { lu })
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let n = self.lu.dim();
        let bw = self.lu.bandwidth();
        let mut x = b.to_vec();
        for i in 0..n {
            let mut acc = x[i];
            for j in i.saturating_sub(bw)..i {
                acc -= self.lu.get(i, j) * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..(i + bw + 1).min(n) {
                acc -= self.lu.get(i, j) * x[j];
            }
            x[i] = acc / self.lu.get(i, i);
        }
        x
    }
}

/// Resolvent solves for `(1 + A^2)^{-1} = (A - i)^{-1} (A + i)^{-1}`.
#[derive(Clone, Debug)]
pub struct JapaneseBracket {
    a: Banded,
    plus: ShiftedBandLu,
    minus: ShiftedBandLu,
}

impl JapaneseBracket {
    pub fn new(a: &Banded) -> Result<Self> {
        Ok(Self {
            a: a.clone(),
            plus: ShiftedBandLu::new(a, C64::new(0.0, 1.0))?,
            minus: ShiftedBandLu::new(a, C64::new(0.0, -1.0))?,
        })
    }

    /// `(1 + A^2)^{-1} w`.
    pub fn inverse_square(&self, w: &[C64]) -> Vec<C64> {
        self.minus.solve(&self.plus.solve(w))
    }

    /// `(1 + A^2) u`.
    pub fn square(&self, u: &[C64]) -> Vec<C64> {
        let au = self.a.apply(u);
        let aau = self.a.apply(&au);
        u.iter().zip(&aau).map(|(x, y)| x + y).collect()
    }

    /// `||<A>^{-k} w||` without square roots of `A`.
    pub fn neg_norm(&self, w: &[C64], k: usize) -> f64 {
        let mut y = w.to_vec();
        for _ in 0..k / 2 {
            y = self.inverse_square(&y);
        }
        if k % 2 == 0 {
            crate::basis::l2(&y)
        } else {
            let z = self.inverse_square(&y);
            dot(&y, &z).re.max(0.0).sqrt()
        }
    }

    /// `||<A>^{k} u||`.
    pub fn pos_norm(&self, u: &[C64], k: usize) -> f64 {
        let mut y = u.to_vec();
        for _ in 0..k / 2 {
            y = self.square(&y);
        }
        if k % 2 == 0 {
            crate::basis::l2(&y)
        } else {
            let ay = self.a.apply(&y);
            (dot(&y, &y).re + dot(&ay, &ay).re).sqrt()
        }
    }
}

/// `<x, y>` conjugate-linear in `x`.
pub fn dot(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}
