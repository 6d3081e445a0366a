//! Truncated eigenbases of `K0` and the Sobolev scale built on them.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BasisKind {
    /// Hermite functions, `K0 e_n = (n - 1/2) e_n`, `n = 1..N`.
    Harmonic,
    /// Fourier modes on the circle, `K0 = |D| + 1`, modes ordered `0, 1, -1, 2, -2, ...`.
    HalfWave,
}

/// A truncated orthonormal eigenbasis of `K0`.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisModel {
    kind: BasisKind,
    eigenvalues: Vec<f64>,
    labels: Vec<i64>,
}

impl BasisModel {
    pub fn new(kind: BasisKind, dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Dimension(format!("need dim >= 2, got {dim}")));
        }
        let labels: Vec<i64> = match kind {
            BasisKind::Harmonic => (1..=dim as i64).collect(),
            BasisKind::HalfWave => {
                if dim % 2 == 0 {
                    return Err(Error::Dimension(format!("half-wave dim must be odd, got {dim}")));
                }
                (0..dim).map(halfwave_label).collect()
            }
        };
        let eigenvalues = labels
            .iter()
            .map(|&l| match kind {
                BasisKind::Harmonic => l as f64 - 0.5,
                BasisKind::HalfWave => l.unsigned_abs() as f64 + 1.0,
            })
            .collect();
        Ok(Self { kind, eigenvalues, labels })
    }

    pub fn shared(kind: BasisKind, dim: usize) -> Result<Arc<Self>> {
        Self::new(kind, dim).map(Arc::new)
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvalue(&self, idx: usize) -> f64 {
        self.eigenvalues[idx]
    }

    /// Physical label of internal index `idx` (Hermite index or Fourier mode).
    pub fn label(&self, idx: usize) -> i64 {
        self.labels[idx]
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    /// Internal index of a physical label, if it lies inside the truncation.
    pub fn index_of(&self, label: i64) -> Option<usize> {
        let idx = match self.kind {
            BasisKind::Harmonic => label.checked_sub(1)?,
            BasisKind::HalfWave => {
                if label > 0 {
                    2 * label - 1
                } else {
                    -2 * label
                }
            }
        };
        (idx >= 0 && (idx as usize) < self.dim()).then_some(idx as usize)
    }

    /// Offset `lambda` with `spec(K0)` inside `N + lambda`.
    pub fn spectral_offset(&self) -> f64 {
        match self.kind {
            BasisKind::Harmonic => 0.5,
            BasisKind::HalfWave => 0.0,
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest mode magnitude kept (Hermite: N, half-wave: (N-1)/2).
    pub fn max_mode(&self) -> i64 {
        self.labels.iter().map(|l| l.abs()).max().unwrap_or(0)
    }

    /// Integer gap `lambda_m - lambda_n` between two internal indices.
    pub fn gap(&self, m: usize, n: usize) -> f64 {
        self.eigenvalues[m] - self.eigenvalues[n]
    }

    /// Number of highest modes watched for truncation leakage (top 5%).
    pub fn boundary_width(&self) -> usize {
        (self.dim() as f64 * 0.05).ceil() as usize
    }
}

fn halfwave_label(idx: usize) -> i64 {
    if idx == 0 {
        0
    } else if idx % 2 == 1 {
        idx.div_ceil(2) as i64
    } else {
        -((idx / 2) as i64)
    }
}

/// Coefficient vector in a truncated basis.
#[derive(Clone, Debug)]
pub struct StateVector {
    pub basis: Arc<BasisModel>,
    pub coeffs: Vec<C64>,
}

impl StateVector {
    pub fn new(basis: Arc<BasisModel>, coeffs: Vec<C64>) -> Result<Self> {
        if coeffs.len() != basis.dim() {
            return Err(Error::Dimension(format!(
                "state has {} coefficients, basis has {}",
                coeffs.len(),
                basis.dim()
            )));
        }
        Ok(Self { basis, coeffs })
    }

    pub fn zeros(basis: Arc<BasisModel>) -> Self {
        let n = basis.dim();
        Self { basis, coeffs: vec![C64::new(0.0, 0.0); n] }
    }

    /// Unit vector on the mode with physical `label`.
    pub fn basis_vector(basis: Arc<BasisModel>, label: i64) -> Result<Self> {
        let idx = basis
            .index_of(label)
            .ok_or_else(|| Error::InvalidArgument(format!("mode {label} outside truncation")))?;
        let mut s = Self::zeros(basis);
        s.coeffs[idx] = C64::new(1.0, 0.0);
        Ok(s)
    }

    pub fn norm(&self) -> f64 {
        l2(&self.coeffs)
    }

    pub fn sobolev_norm(&self, r: f64) -> f64 {
        sobolev_norm(&self.basis, &self.coeffs, r)
    }

    pub fn free_flow(&self, t: f64) -> Self {
        let mut out = self.clone();
        free_flow_in_place(&self.basis, &mut out.coeffs, t);
        out
    }

    /// Fraction of `|psi|^2` carried by the top 5% of modes.
    pub fn boundary_mass(&self) -> f64 {
        boundary_mass(&self.basis, &self.coeffs)
    }
}

/// `sqrt(sum lambda_n^{2r} |psi_n|^2)`.
pub fn sobolev_norm(basis: &BasisModel, coeffs: &[C64], r: f64) -> f64 {
    if r == 0.0 {
        return l2(coeffs);
    }
    basis
        .eigenvalues()
        .iter()
        .zip(coeffs)
        .map(|(&l, c)| l.powf(2.0 * r) * c.norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Applies `exp(-i t K0)` entrywise.
pub fn free_flow_in_place(basis: &BasisModel, coeffs: &mut [C64], t: f64) {
    for (c, &l) in coeffs.iter_mut().zip(basis.eigenvalues()) {
        *c *= C64::from_polar(1.0, -t * l);
    }
}

pub fn boundary_mass(basis: &BasisModel, coeffs: &[C64]) -> f64 {
    let total: f64 = coeffs.iter().map(|c| c.norm_sqr()).sum();
    if total == 0.0 {
        return 0.0;
    }
    let w = basis.boundary_width();
    let tail: f64 = coeffs[coeffs.len() - w..].iter().map(|c| c.norm_sqr()).sum();
    tail / total
}

pub(crate) fn l2(v: &[C64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}
