//! Spectral windows, functional calculus, conjugate operators and windowed
//! commutator positivity.

use std::collections::BTreeMap;
use std::sync::Arc;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisKind, BasisModel, StateVector};
use crate::operator::{
    commutator, fourier_multiplier, imag_part_coeffs, interior_indices, multiplication_op, shift_power,
    Banded, TruncatedOperator,
};
use crate::spectral::{self, eigh, eigvalsh};
use crate::{Error, Result, C64, I, ZERO};

/// Interval `[a, b]` with a smooth cutoff equal to 1 on it and supported
/// in `[a - delta, b + delta]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralWindow {
    pub a: f64,
    pub b: f64,
    pub delta: f64,
}

impl SpectralWindow {
    pub fn new(a: f64, b: f64, delta: f64) -> Result<Self> {
        if !(a < b) || !(delta > 0.0) || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidArgument(format!("bad window [{a}, {b}] with flank {delta}")));
        }
        Ok(Self { a, b, delta })
    }

    /// Flank width `0.2 |I|`.
    pub fn with_default_flank(a: f64, b: f64) -> Result<Self> {
        Self::new(a, b, 0.2 * (b - a))
    }

    pub fn support(&self) -> (f64, f64) {
        (self.a - self.delta, self.b + self.delta)
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.a + self.b)
    }

    pub fn contains_support_of(&self, other: &SpectralWindow) -> bool {
        let (lo, hi) = self.support();
        let (olo, ohi) = other.support();
        lo <= olo + 1e-12 && ohi <= hi + 1e-12
    }

    /// C-infinity cutoff: 1 on `[a, b]`, 0 off the support, smooth step on the flanks.
    pub fn bump(&self, x: f64) -> f64 {
        let s = (self.a - x).max(x - self.b) / self.delta;
        smooth_step(s)
    }

    /// Same window, interval and flank scaled by `factor` about the centre.
    pub fn shrunk(&self, factor: f64) -> Self {
        let c = self.center();
        let h = 0.5 * (self.b - self.a) * factor;
        Self { a: c - h, b: c + h, delta: self.delta * factor }
    }
}

/// 1 for `s <= 0`, 0 for `s >= 1`, `psi(1-s) / (psi(1-s) + psi(s))` between,
/// with `psi(x) = exp(-1/x)`.
pub fn smooth_step(s: f64) -> f64 {
    if s <= 0.0 {
        return 1.0;
    }
    if s >= 1.0 {
        return 0.0;
    }
    let p = |x: f64| (-1.0 / x).exp();
    let (u, v) = (p(1.0 - s), p(s));
    u / (u + v)
}

/// `U f(Lambda) U^*` for hermitian `H = U Lambda U^*`.
pub fn functional_calculus(h: &TruncatedOperator, f: impl Fn(f64) -> f64) -> Result<TruncatedOperator> {
    if !h.hermitian {
        return Err(Error::NotHermitian { defect: h.hermitian_defect() });
    }
    let (vals, u) = eigh(&h.matrix)?;
    let fv: Vec<C64> = vals.iter().map(|&x| C64::new(f(x), 0.0)).collect();
    let mut out = TruncatedOperator::new(h.basis.clone(), spectral::reassemble(&u, &fv), h.order_tag)?;
    out.hermitian = true;
    Ok(out)
}

/// `1/2 (V_k S^k + conj(V_k) S^{*k})` as a band.
pub fn transporter_band(n: usize, k: usize, vk: C64) -> Banded {
    Banded::from_fn(n, k, |i, j| {
        if i == j + k {
            0.5 * vk
        } else if j == i + k {
            0.5 * vk.conj()
        } else {
            ZERO
        }
    })
}

/// Dense `1/2 (V_k S^k + conj(V_k) S^{*k})`.
pub fn transporter_h0(basis: &Arc<BasisModel>, k: usize, vk: C64) -> Result<TruncatedOperator> {
    let s = shift_power(basis, k)?;
    let h = s.scale(0.5 * vk).add(&s.adjoint().scale(0.5 * vk.conj()))?;
    Ok(TruncatedOperator { order_tag: 0.0, ..h })
}

/// Conjugate operator for the harmonic transporter,
/// `(V/i) P S^k - (V*/i) S^{*k} P - (V*/i) P S^{*k} + (V/i) S^k P`, `P = K0 + 1/2`.
pub fn conjugate_operator_harmonic(basis: &Arc<BasisModel>, k: usize, vk: C64) -> Result<TruncatedOperator> {
    let s = shift_power(basis, k)?;
    let sa = s.adjoint();
    let p = TruncatedOperator::k0(basis.clone()).add(&TruncatedOperator::identity(basis.clone()).scale(C64::new(0.5, 0.0)))?;
    let a = vk / I;
    let b = vk.conj() / I;
    let out = p
        .matmul(&s)?
        .scale(a)
        .sub(&sa.matmul(&p)?.scale(b))?
        .sub(&p.matmul(&sa)?.scale(b))?
        .add(&s.matmul(&p)?.scale(a))?;
    let mut out = TruncatedOperator { order_tag: 1.0, ..out };
    out.hermitian = out.hermitian_defect() <= 1e-12;
    Ok(out)
}

/// Banded form of [`conjugate_operator_harmonic`]: `A_{n+k,n} = (V/i)(2n + k)`.
pub fn conjugate_band_harmonic(n: usize, k: usize, vk: C64) -> Banded {
    let a = vk / I;
    Banded::from_fn(n, k, |i, j| {
        if i == j + k {
            a * (2 * (j + 1) + k) as f64
        } else if j == i + k {
            (a * (2 * (i + 1) + k) as f64).conj()
        } else {
            ZERO
        }
    })
}

/// Conjugate operator `w(x) D/i + D/i w(x)`, `w = Im(v_j e^{ijx})`.
pub fn conjugate_operator_halfwave(basis: &Arc<BasisModel>, vj: C64, j: i64) -> Result<TruncatedOperator> {
    let w = multiplication_op(basis, &imag_part_coeffs(vj, j))?;
    let d = fourier_multiplier(basis, |m| m as f64)?;
    let out = w.matmul(&d)?.add(&d.matmul(&w)?)?;
    Ok(TruncatedOperator { order_tag: 1.0, ..out })
}

/// Banded form of [`conjugate_operator_halfwave`].
pub fn conjugate_band_halfwave(basis: &BasisModel, vj: C64, j: i64) -> Banded {
    let w = imag_part_coeffs(vj, j);
    let bw = (2 * j.unsigned_abs() as usize + 1).min(basis.dim() - 1);
    Banded::from_fn(basis.dim(), bw, |p, q| {
        let (m, n) = (basis.label(p), basis.label(q));
        w.get(&(m - n)).map_or(ZERO, |c| c * (m + n) as f64)
    })
}

/// Multiplication by `sum v_j e^{ijx}` as a band on the interleaved Fourier basis.
pub fn multiplication_band(basis: &BasisModel, coeffs: &BTreeMap<i64, C64>) -> Banded {
    let deg = coeffs.keys().map(|j| j.unsigned_abs() as usize).max().unwrap_or(0);
    let bw = (2 * deg + 1).min(basis.dim() - 1);
    Banded::from_fn(basis.dim(), bw, |p, q| {
        coeffs.get(&(basis.label(p) - basis.label(q))).copied().unwrap_or(ZERO)
    })
}

/// Knobs for [`mourre_check`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MourreOptions {
    /// Basis vectors removed at each truncation edge before certifying.
    pub edge_width: usize,
    /// Number of negative directions absorbed as the compact part.
    pub compact_rank: usize,
    /// Absolute eigenvalue tolerance, scaled by `1 + max|commutator|`.
    pub tol: f64,
    /// Halvings of the window tried when the strict estimate fails.
    pub shrink_steps: usize,
}

impl MourreOptions {
    /// Defaults for a transporter with shift or Fourier degree `k`.
    pub fn for_degree(k: usize) -> Self {
        Self { edge_width: 2 * k, compact_rank: 2 * k + 4, tol: 1e-10, shrink_steps: 3 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MourreReport {
    pub window: SpectralWindow,
    /// Certified constant allowing `compact_rank` negative directions.
    pub theta: f64,
    /// Certified constant with no compact part, on `strict_window`.
    pub theta_strict: f64,
    pub strict_window: SpectralWindow,
    /// Size of the negative part absorbed by the compact allowance at `theta`.
    pub defect_norm: f64,
    pub spectrum_in_window: Vec<f64>,
    /// Eigenvalues of `H` where the cutoff is nonzero.
    pub n_in_support: usize,
    pub dim: usize,
    pub options: MourreOptions,
    pub vacuous: bool,
    pub passed: bool,
}

struct Windowed {
    /// `U_r^* Q i[H, A] Q U_r` on the eigenvectors with `g > 0`.
    x: Mat<C64>,
    g: Vec<f64>,
    scale: f64,
}

fn windowed(vals: &[f64], u: &Mat<C64>, comm: &Mat<C64>, basis: &BasisModel, window: &SpectralWindow, edge: usize) -> Windowed {
    let keep: Vec<usize> = (0..vals.len()).filter(|&i| window.bump(vals[i]) > 0.0).collect();
    let g: Vec<f64> = keep.iter().map(|&i| window.bump(vals[i])).collect();
    let n = vals.len();
    let interior = interior_indices(basis, edge);
    let mut mask = vec![false; n];
    interior.iter().for_each(|&i| mask[i] = true);
    let qc = Mat::from_fn(n, n, |i, j| if mask[i] && mask[j] { comm[(i, j)] } else { ZERO });
    let ur = Mat::from_fn(n, keep.len(), |i, j| u[(i, keep[j])]);
    let x = ur.adjoint() * &qc * &ur;
    let scale = 1.0 + crate::operator::norm_max(&qc);
    Windowed { x, g, scale }
}

/// Eigenvalue `rank` (ascending) of `D (X - theta) D`.
fn shifted_eig(w: &Windowed, theta: f64, rank: usize) -> Result<f64> {
    let m = w.g.len();
    let mat = Mat::from_fn(m, m, |i, j| {
        let v = if i == j { w.x[(i, j)] - theta } else { w.x[(i, j)] };
        v * (w.g[i] * w.g[j])
    });
    let vals = eigvalsh(&mat)?;
    Ok(vals.get(rank).copied().unwrap_or(f64::INFINITY))
}

/// Largest `theta` with eigenvalue `rank` of `D (X - theta) D` above `-tol`:
/// geometric grid `1e-4 .. 10` (extended upward while it passes), then bisection.
fn certify(w: &Windowed, rank: usize, tol: f64) -> Result<f64> {
    let tol = tol * w.scale;
    let pass = |theta: f64| shifted_eig(w, theta, rank).map(|e| e >= -tol);
    let grid: Vec<f64> = (0..200).map(|i| 1e-4 * (1e5_f64).powf(i as f64 / 199.0)).collect();
    if !pass(grid[0])? {
        return Ok(0.0);
    }
    let mut lo = grid[0];
    let mut hi = None;
    for &t in &grid[1..] {
        if pass(t)? {
            lo = t;
        } else {
            hi = Some(t);
            break;
        }
    }
    let mut hi = match hi {
        Some(h) => h,
        None => {
            let mut t = lo;
            loop {
                t *= 10.0;
                if t > 1e12 {
                    return Ok(lo);
                }
                if pass(t)? {
                    lo = t;
                } else {
                    break t;
                }
            }
        }
    };
    while hi - lo > 1e-6 * lo {
        let mid = 0.5 * (lo + hi);
        if pass(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Windowed commutator positivity `g(H) i[H, A] g(H) >= theta g(H)^2 (+ K)`.
pub fn mourre_check(
    h: &TruncatedOperator,
    a: &TruncatedOperator,
    window: &SpectralWindow,
    opts: &MourreOptions,
) -> Result<MourreReport> {
    if !h.hermitian {
        return Err(Error::NotHermitian { defect: h.hermitian_defect() });
    }
    if !a.hermitian {
        return Err(Error::NotHermitian { defect: a.hermitian_defect() });
    }
    let comm = commutator(h, a)?.scale(I);
    let (vals, u) = eigh(&h.matrix)?;
    let w = windowed(&vals, &u, &comm.matrix, &h.basis, window, opts.edge_width);
    let n_in_support = w.g.len();
    if n_in_support == 0 {
        return Ok(MourreReport {
            window: *window,
            theta: 0.0,
            theta_strict: 0.0,
            strict_window: *window,
            defect_norm: 0.0,
            spectrum_in_window: Vec::new(),
            n_in_support,
            dim: h.dim(),
            options: *opts,
            vacuous: true,
            passed: true,
        });
    }
    let theta = certify(&w, opts.compact_rank.min(n_in_support - 1), opts.tol)?;
    let defect_norm = (-shifted_eig(&w, theta, 0)?).max(0.0);
    let mut strict_window = *window;
    let mut ws = w;
    let mut theta_strict = certify(&ws, 0, opts.tol)?;
    for _ in 0..opts.shrink_steps {
        if theta_strict > 0.0 {
            break;
        }
        strict_window = strict_window.shrunk(0.5);
        ws = windowed(&vals, &u, &comm.matrix, &h.basis, &strict_window, opts.edge_width);
        if ws.g.is_empty() {
            break;
        }
        theta_strict = certify(&ws, 0, opts.tol)?;
    }
    let spectrum_in_window = windowed_spectrum(&vals, window);
    Ok(MourreReport {
        window: *window,
        theta,
        theta_strict,
        strict_window,
        defect_norm,
        spectrum_in_window,
        n_in_support,
        dim: h.dim(),
        options: *opts,
        vacuous: false,
        passed: theta_strict > 0.0,
    })
}

fn windowed_spectrum(vals: &[f64], window: &SpectralWindow) -> Vec<f64> {
    vals.iter().copied().filter(|&x| x >= window.a && x <= window.b).collect()
}

/// `(1/sqrt n) sum_{l=1}^n e^{i rho l} e_l`.
pub fn weyl_sequence(basis: &Arc<BasisModel>, k: usize, rho: f64, n: usize) -> Result<StateVector> {
    if basis.kind() != BasisKind::Harmonic {
        return Err(Error::InvalidArgument("weyl sequence needs a Harmonic basis".into()));
    }
    if n == 0 || n + k > basis.dim() {
        return Err(Error::InvalidArgument(format!("n = {n} too large for dim {} and k = {k}", basis.dim())));
    }
    let mut s = StateVector::zeros(basis.clone());
    let c = 1.0 / (n as f64).sqrt();
    for l in 1..=n {
        s.coeffs[l - 1] = C64::from_polar(c, rho * l as f64);
    }
    Ok(s)
}

/// `Re(V_k e^{-i rho k})`, the approximate eigenvalue of the Weyl sequence.
pub fn weyl_energy(k: usize, vk: C64, rho: f64) -> f64 {
    (vk * C64::from_polar(1.0, -rho * k as f64)).re
}

/// Residual vector `(H0 - f(rho)) psi^(n)` for `H0 = 1/2 (V_k S^k + h.c.)`.
pub fn weyl_residual_vector(basis: &Arc<BasisModel>, k: usize, vk: C64, rho: f64, n: usize) -> Result<Vec<C64>> {
    let psi = weyl_sequence(basis, k, rho, n)?;
    let h = transporter_band(basis.dim(), k, vk);
    let e = weyl_energy(k, vk, rho);
    let mut r = h.apply(&psi.coeffs);
    r.iter_mut().zip(&psi.coeffs).for_each(|(x, p)| *x -= e * p);
    Ok(r)
}

pub fn weyl_residual(basis: &Arc<BasisModel>, k: usize, vk: C64, rho: f64, n: usize) -> Result<f64> {
    Ok(crate::basis::l2(&weyl_residual_vector(basis, k, vk, rho, n)?))
}

/// Windowed initial datum and the mass the window captured.
#[derive(Clone, Debug)]
pub struct CascadeDatum {
    pub state: StateVector,
    /// `||g_J(H) seed|| / ||seed||`.
    pub projection: f64,
}

/// `g_J(H) seed`, normalized.
pub fn cascade_initial_datum(h: &TruncatedOperator, window: &SpectralWindow, seed: &StateVector) -> Result<CascadeDatum> {
    if !h.hermitian {
        return Err(Error::NotHermitian { defect: h.hermitian_defect() });
    }
    let band = h.to_banded();
    if h.dim() > 256 && band.bandwidth() <= h.dim() / 8 {
        return cascade_initial_datum_banded(&band, &h.basis, window, seed);
    }
    let (vals, u) = eigh(&h.matrix)?;
    let c = spectral::to_eigenbasis(&u, &seed.coeffs);
    let gc: Vec<C64> = c.iter().zip(&vals).map(|(x, &l)| x * window.bump(l)).collect();
    finish_datum(spectral::from_eigenbasis(&u, &gc), &h.basis, window, seed)
}

/// [`cascade_initial_datum`] for a banded `H`, via a Chebyshev expansion of the cutoff.
pub fn cascade_initial_datum_banded(
    h: &Banded,
    basis: &Arc<BasisModel>,
    window: &SpectralWindow,
    seed: &StateVector,
) -> Result<CascadeDatum> {
    let v = spectral::apply_function(h, |x| window.bump(x), &seed.coeffs);
    finish_datum(v, basis, window, seed)
}

fn finish_datum(v: Vec<C64>, basis: &Arc<BasisModel>, window: &SpectralWindow, seed: &StateVector) -> Result<CascadeDatum> {
    let s = seed.norm();
    let m = crate::basis::l2(&v);
    let projection = if s > 0.0 { m / s } else { 0.0 };
    if projection < 1e-10 {
        let (lo, hi) = window.support();
        return Err(Error::ZeroProjection { mass: projection, lo, hi });
    }
    let coeffs = v.into_iter().map(|x| x / m).collect();
    Ok(CascadeDatum { state: StateVector::new(basis.clone(), coeffs)?, projection })
}
