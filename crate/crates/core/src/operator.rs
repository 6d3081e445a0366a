//! Dense truncated operators, their banded views, and the concrete
//! building blocks: shifts, Toeplitz matrices, multiplication operators
//! and Fourier multipliers.

use std::collections::BTreeMap;
use std::sync::Arc;

use faer::{Mat, Scale};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisKind, BasisModel};
use crate::{Error, Result, C64, I, ONE, ZERO};

/// Relative tolerance for the hermitian flag.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Dense `N x N` matrix `M[m][n] = <M e_n, e_m>` on a truncated basis.
#[derive(Clone, Debug)]
pub struct TruncatedOperator {
    pub basis: Arc<BasisModel>,
    pub matrix: Mat<C64>,
    pub hermitian: bool,
    /// Nominal pseudodifferential order. Metadata only.
    pub order_tag: f64,
}

impl TruncatedOperator {
    /// Wraps a matrix; the hermitian flag is set from the data.
    pub fn new(basis: Arc<BasisModel>, matrix: Mat<C64>, order_tag: f64) -> Result<Self> {
        let n = basis.dim();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::Dimension(format!(
                "matrix is {}x{}, basis has dim {n}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let hermitian = hermitian_defect(&matrix) <= HERMITIAN_TOL;
        Ok(Self { basis, matrix, hermitian, order_tag })
    }

    pub fn from_fn(
        basis: Arc<BasisModel>,
        order_tag: f64,
        f: impl FnMut(usize, usize) -> C64,
    ) -> Self {
        let n = basis.dim();
        let matrix = Mat::from_fn(n, n, f);
        Self::new(basis, matrix, order_tag).expect("shape matches by construction")
    }

    pub fn zeros(basis: Arc<BasisModel>) -> Self {
        let n = basis.dim();
        Self { basis, matrix: Mat::zeros(n, n), hermitian: true, order_tag: f64::NEG_INFINITY }
    }

    pub fn identity(basis: Arc<BasisModel>) -> Self {
        let n = basis.dim();
        Self { basis, matrix: Mat::identity(n, n), hermitian: true, order_tag: 0.0 }
    }

    /// `K0` itself.
    pub fn k0(basis: Arc<BasisModel>) -> Self {
        Self::diagonal(basis.clone(), basis.eigenvalues(), 1.0)
    }

    pub fn diagonal(basis: Arc<BasisModel>, diag: &[f64], order_tag: f64) -> Self {
        let n = basis.dim();
        let matrix = Mat::from_fn(n, n, |i, j| if i == j { C64::new(diag[i], 0.0) } else { ZERO });
        Self { basis, matrix, hermitian: true, order_tag }
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn get(&self, m: usize, n: usize) -> C64 {
        self.matrix[(m, n)]
    }

    pub fn adjoint(&self) -> Self {
        Self {
            basis: self.basis.clone(),
            matrix: self.matrix.adjoint().to_owned(),
            hermitian: self.hermitian,
            order_tag: self.order_tag,
        }
    }

    fn with(&self, matrix: Mat<C64>, order_tag: f64) -> Self {
        let hermitian = hermitian_defect(&matrix) <= HERMITIAN_TOL;
        Self { basis: self.basis.clone(), matrix, hermitian, order_tag }
    }

    fn same_basis(&self, other: &Self) -> Result<()> {
        if self.basis != other.basis {
            return Err(Error::BasisMismatch(format!(
                "{:?}/{} vs {:?}/{}",
                self.basis.kind(),
                self.dim(),
                other.basis.kind(),
                other.dim()
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_basis(other)?;
        Ok(self.with(&self.matrix + &other.matrix, self.order_tag.max(other.order_tag)))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_basis(other)?;
        Ok(self.with(&self.matrix - &other.matrix, self.order_tag.max(other.order_tag)))
    }

    pub fn scale(&self, c: C64) -> Self {
        self.with(Scale(c) * &self.matrix, self.order_tag)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.same_basis(other)?;
        Ok(self.with(&self.matrix * &other.matrix, self.order_tag + other.order_tag))
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        let n = self.dim();
        let mut out = vec![ZERO; n];
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = ZERO;
            for (j, x) in v.iter().enumerate() {
                acc += self.matrix[(i, j)] * x;
            }
            *o = acc;
        }
        out
    }

    pub fn norm_max(&self) -> f64 {
        norm_max(&self.matrix)
    }

    /// Spectral norm (largest singular value).
    pub fn norm_op(&self) -> Result<f64> {
        let sv = self.matrix.singular_values().map_err(|_| Error::Eigen)?;
        Ok(sv.iter().copied().fold(0.0, f64::max))
    }

    pub fn hermitian_defect(&self) -> f64 {
        hermitian_defect(&self.matrix)
    }

    /// `exp(i s K0) A exp(-i s K0)`, entrywise phase `exp(i s (lambda_m - lambda_n))`.
    pub fn conjugate_by_free_flow(&self, s: f64) -> Self {
        let l = self.basis.eigenvalues();
        let n = self.dim();
        let matrix =
            Mat::from_fn(n, n, |i, j| self.matrix[(i, j)] * C64::from_polar(1.0, s * (l[i] - l[j])));
        Self { basis: self.basis.clone(), matrix, hermitian: self.hermitian, order_tag: self.order_tag }
    }

    pub fn to_banded(&self) -> Banded {
        Banded::from_dense(&self.matrix)
    }

    /// Largest entry difference restricted to the interior mask of width `margin`.
    pub fn interior_diff(&self, other: &Self, margin: usize) -> f64 {
        let idx = interior_indices(&self.basis, margin);
        let mut worst = 0.0_f64;
        for &i in &idx {
            for &j in &idx {
                worst = worst.max((self.matrix[(i, j)] - other.matrix[(i, j)]).norm());
            }
        }
        worst
    }
}

pub fn norm_max(m: &Mat<C64>) -> f64 {
    let mut worst = 0.0_f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            worst = worst.max(m[(i, j)].norm());
        }
    }
    worst
}

/// `max|M - M^*| / max|M|` (0 for the zero matrix).
pub fn hermitian_defect(m: &Mat<C64>) -> f64 {
    let scale = norm_max(m);
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst / scale
}

/// Internal indices away from the truncation edge.
///
/// Harmonic: physical `margin < n <= N - margin`. Half-wave: modes with
/// `|j| <= N_half - margin` (the low modes are not an edge there).
pub fn interior_indices(basis: &BasisModel, margin: usize) -> Vec<usize> {
    let n = basis.dim();
    match basis.kind() {
        BasisKind::Harmonic => (margin..n.saturating_sub(margin)).collect(),
        BasisKind::HalfWave => (0..n.saturating_sub(2 * margin)).collect(),
    }
}

/// Diagonal values of a Toeplitz operator, keyed by offset `d = m - n`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ToeplitzSpec {
    pub diagonals: BTreeMap<i64, C64>,
    /// Asserted decay rate of `|V_d|` in `<d>`.
    pub decay_exponent: f64,
}

impl ToeplitzSpec {
    pub fn new(diagonals: impl IntoIterator<Item = (i64, C64)>) -> Self {
        Self { diagonals: diagonals.into_iter().collect(), decay_exponent: 0.0 }
    }

    pub fn get(&self, d: i64) -> C64 {
        self.diagonals.get(&d).copied().unwrap_or(ZERO)
    }

    pub fn is_hermitian(&self) -> bool {
        self.diagonals.iter().all(|(&d, &v)| {
            let w = self.get(-d);
            (v - w.conj()).norm() <= HERMITIAN_TOL * v.norm().max(1.0)
        })
    }

    /// Smallest `C` with `|V_d| <= C / <d>^decay_exponent`.
    pub fn decay_constant(&self) -> f64 {
        self.diagonals
            .iter()
            .map(|(&d, v)| v.norm() * (1.0 + (d * d) as f64).powf(0.5 * self.decay_exponent))
            .fold(0.0, f64::max)
    }
}

/// `S^k`, with `S e_n = e_{n+1}` on the Hermite basis.
pub fn shift_power(basis: &Arc<BasisModel>, k: usize) -> Result<TruncatedOperator> {
    require_kind(basis, BasisKind::Harmonic, "shift_power")?;
    let n = basis.dim();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!("shift power {k} needs 0 < k < {n}")));
    }
    let mut op = TruncatedOperator::from_fn(basis.clone(), 0.0, |i, j| if i == j + k { ONE } else { ZERO });
    op.hermitian = false;
    Ok(op)
}

pub fn toeplitz(basis: &Arc<BasisModel>, spec: &ToeplitzSpec) -> Result<TruncatedOperator> {
    require_kind(basis, BasisKind::Harmonic, "toeplitz")?;
    let n = basis.dim() as i64;
    for &d in spec.diagonals.keys() {
        if d.abs() >= n {
            log::warn!("toeplitz offset {d} outside a {n}x{n} truncation, ignored");
        }
    }
    Ok(TruncatedOperator::from_fn(basis.clone(), 0.0, |i, j| spec.get(i as i64 - j as i64)))
}

/// Multiplication by `v(x) = sum_j v_j e^{ijx}` on the Fourier basis.
pub fn multiplication_op(
    basis: &Arc<BasisModel>,
    coeffs: &BTreeMap<i64, C64>,
) -> Result<TruncatedOperator> {
    require_kind(basis, BasisKind::HalfWave, "multiplication_op")?;
    let b = basis.clone();
    Ok(TruncatedOperator::from_fn(basis.clone(), 0.0, move |i, j| {
        coeffs.get(&(b.label(i) - b.label(j))).copied().unwrap_or(ZERO)
    }))
}

/// Diagonal operator with symbol `rule(j)` on Fourier mode `j`.
pub fn fourier_multiplier(
    basis: &Arc<BasisModel>,
    rule: impl Fn(i64) -> f64,
) -> Result<TruncatedOperator> {
    require_kind(basis, BasisKind::HalfWave, "fourier_multiplier")?;
    let diag: Vec<f64> = basis.labels().iter().map(|&j| rule(j)).collect();
    Ok(TruncatedOperator::diagonal(basis.clone(), &diag, 0.0))
}

/// Coefficients of `Im(v_j e^{ijx})`.
pub fn imag_part_coeffs(vj: C64, j: i64) -> BTreeMap<i64, C64> {
    let two_i = 2.0 * I;
    let mut m = BTreeMap::new();
    m.insert(j, vj / two_i);
    m.insert(-j, -vj.conj() / two_i);
    m
}

/// Coefficients of `Re(v_j e^{ijx})`.
pub fn real_part_coeffs(vj: C64, j: i64) -> BTreeMap<i64, C64> {
    let mut m = BTreeMap::new();
    m.insert(j, vj / 2.0);
    m.insert(-j, vj.conj() / 2.0);
    m
}

pub fn commutator(a: &TruncatedOperator, b: &TruncatedOperator) -> Result<TruncatedOperator> {
    a.same_basis(b)?;
    let m = &(&a.matrix * &b.matrix) - &(&b.matrix * &a.matrix);
    Ok(a.with(m, a.order_tag + b.order_tag - 1.0))
}

/// `ad_A^n(B)`, iterating `B -> [B, A]`.
pub fn ad_power(a: &TruncatedOperator, b: &TruncatedOperator, n: usize) -> Result<TruncatedOperator> {
    let mut out = b.clone();
    for _ in 0..n {
        out = commutator(&out, a)?;
    }
    Ok(out)
}

/// Smallest `C` with `|M_pq| <= C (1+p+q)^m / <p-q>^2` over the interior,
/// physical labels `p, q` and the top `N/8` rows and columns excluded.
pub fn order_diagnostic(a: &TruncatedOperator, m: f64) -> Result<f64> {
    order_diagnostic_with_margin(a, m, (a.dim() / 8).max(1))
}

pub fn order_diagnostic_with_margin(a: &TruncatedOperator, m: f64, margin: usize) -> Result<f64> {
    require_kind(&a.basis, BasisKind::Harmonic, "order_diagnostic")?;
    let n = a.dim().saturating_sub(margin);
    let mut c = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            let v = a.matrix[(i, j)].norm();
            if v == 0.0 {
                continue;
            }
            let (p, q) = (a.basis.label(i) as f64, a.basis.label(j) as f64);
            let d = p - q;
            c = c.max(v * (1.0 + d * d) / (1.0 + p + q).powf(m));
        }
    }
    Ok(c)
}

fn require_kind(basis: &BasisModel, kind: BasisKind, what: &str) -> Result<()> {
    if basis.kind() != kind {
        return Err(Error::InvalidArgument(format!("{what} needs a {kind:?} basis")));
    }
    Ok(())
}

/// Square banded matrix with equal lower and upper bandwidth `bw`.
///
/// Row-major storage: entry `(i, j)` sits at `i * (2 bw + 1) + (j + bw - i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Banded {
    n: usize,
    bw: usize,
    data: Vec<C64>,
}

impl Banded {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self { n, bw, data: vec![ZERO; n * (2 * bw + 1)] }
    }

    pub fn from_dense(m: &Mat<C64>) -> Self {
        let n = m.nrows();
        let mut bw = 0;
        for j in 0..n {
            for i in 0..n {
                if m[(i, j)] != ZERO {
                    bw = bw.max(i.abs_diff(j));
                }
            }
        }
        let mut b = Self::zeros(n, bw);
        for i in 0..n {
            for j in i.saturating_sub(bw)..(i + bw + 1).min(n) {
                b.set(i, j, m[(i, j)]);
            }
        }
        b
    }

    /// Banded matrix with constant diagonals `diags[d]` at offset `d = i - j`.
    pub fn from_diagonals(n: usize, diags: &BTreeMap<i64, C64>) -> Self {
        let bw = diags.keys().map(|d| d.unsigned_abs() as usize).max().unwrap_or(0).min(n - 1);
        let mut b = Self::zeros(n, bw);
        for (&d, &v) in diags {
            for i in 0..n {
                let j = i as i64 - d;
                if j >= 0 && (j as usize) < n {
                    b.set(i, j as usize, v);
                }
            }
        }
        b
    }

    /// Band of width `bw` filled from `f(i, j)`.
    pub fn from_fn(n: usize, bw: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut b = Self::zeros(n, bw.min(n.saturating_sub(1)));
        for i in 0..n {
            let (lo, hi) = b.row_span(i);
            for j in lo..hi {
                b.set(i, j, f(i, j));
            }
        }
        b
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    fn width(&self) -> usize {
        2 * self.bw + 1
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        if i.abs_diff(j) > self.bw {
            return ZERO;
        }
        self.data[i * self.width() + j + self.bw - i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        assert!(i.abs_diff(j) <= self.bw, "({i}, {j}) outside bandwidth {}", self.bw);
        let w = self.width();
        self.data[i * w + j + self.bw - i] = v;
    }

    /// Column range of row `i`.
    #[inline]
    pub fn row_span(&self, i: usize) -> (usize, usize) {
        (i.saturating_sub(self.bw), (i + self.bw + 1).min(self.n))
    }

    pub fn row(&self, i: usize) -> &[C64] {
        let w = self.width();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn raw_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn raw(&self) -> &[C64] {
        &self.data
    }

    pub fn apply_into(&self, v: &[C64], out: &mut [C64]) {
        let w = self.width();
        for (i, o) in out.iter_mut().enumerate() {
            let (lo, hi) = self.row_span(i);
            let row = &self.data[i * w + lo + self.bw - i..i * w + hi + self.bw - i];
            let mut acc = ZERO;
            for (a, x) in row.iter().zip(&v[lo..hi]) {
                acc += a * x;
            }
            *o = acc;
        }
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        let mut out = vec![ZERO; self.n];
        self.apply_into(v, &mut out);
        out
    }

    pub fn to_dense(&self) -> Mat<C64> {
        Mat::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    pub fn scale(&self, c: C64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|x| *x *= c);
        out
    }

    /// `self + c * I`.
    pub fn shifted(&self, c: C64) -> Self {
        let mut out = self.clone();
        for i in 0..self.n {
            let v = out.get(i, i) + c;
            out.set(i, i, v);
        }
        out
    }

    /// Gershgorin enclosure `[lo, hi]` of the spectrum of a hermitian band.
    pub fn gershgorin(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.n {
            let (a, b) = self.row_span(i);
            let mut r = 0.0;
            for j in a..b {
                if j != i {
                    r += self.get(i, j).norm();
                }
            }
            let c = self.get(i, i).re;
            lo = lo.min(c - r);
            hi = hi.max(c + r);
        }
        (lo, hi)
    }

    pub fn hermitian_defect(&self) -> f64 {
        let mut worst = 0.0_f64;
        let mut scale = 0.0_f64;
        for i in 0..self.n {
            let (a, b) = self.row_span(i);
            for j in a..b {
                scale = scale.max(self.get(i, j).norm());
                worst = worst.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }
}
