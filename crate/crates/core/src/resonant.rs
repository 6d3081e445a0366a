//! Time-periodic potentials as finite Fourier series and their averages
//! along the free flow.

use std::sync::Arc;

use faer::Mat;

use crate::basis::BasisModel;
use crate::operator::TruncatedOperator;
use crate::{Error, Result, C64, ZERO};

/// `lambda_m - lambda_n + f` closer to zero than this counts as resonant.
pub const RESONANCE_TOL: f64 = 1e-9;

/// `V(t) = sum_f e^{i f t} V_f`.
///
/// Frequencies are stored as reals so that incommensurate drives can be
/// represented; averaging and the normal form need them integral.
#[derive(Clone, Debug)]
pub struct TimePeriodicOperator {
    pub basis: Arc<BasisModel>,
    pub terms: Vec<(f64, TruncatedOperator)>,
}

impl TimePeriodicOperator {
    pub fn new(basis: Arc<BasisModel>) -> Self {
        Self { basis, terms: Vec::new() }
    }

    pub fn push(&mut self, freq: f64, op: TruncatedOperator) -> Result<()> {
        if op.basis != self.basis {
            return Err(Error::BasisMismatch("harmonic on a different basis".into()));
        }
        if let Some((_, existing)) = self.terms.iter_mut().find(|(f, _)| *f == freq) {
            *existing = existing.add(&op)?;
        } else {
            self.terms.push((freq, op));
            self.terms.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        Ok(())
    }

    /// Time-independent `V`.
    pub fn constant(op: TruncatedOperator) -> Self {
        Self { basis: op.basis.clone(), terms: vec![(0.0, op)] }
    }

    /// `cos(omega t) V`.
    pub fn cos_drive(op: &TruncatedOperator, omega: f64) -> Self {
        let half = op.scale(C64::new(0.5, 0.0));
        let mut v = Self::new(op.basis.clone());
        v.push(omega, half.clone()).expect("same basis");
        v.push(-omega, half).expect("same basis");
        v
    }

    /// `exp(-i t K0) V exp(i t K0)`: entry `(m, n)` oscillates at `-(lambda_m - lambda_n)`.
    pub fn transported(op: &TruncatedOperator) -> Self {
        let basis = op.basis.clone();
        let n = basis.dim();
        let mut by_freq: Vec<(f64, Mat<C64>)> = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let v = op.matrix[(i, j)];
                if v == ZERO {
                    continue;
                }
                let f = -basis.gap(i, j);
                let slot = match by_freq.iter().position(|(g, _)| *g == f) {
                    Some(p) => p,
                    None => {
                        by_freq.push((f, Mat::zeros(n, n)));
                        by_freq.len() - 1
                    }
                };
                by_freq[slot].1[(i, j)] = v;
            }
        }
        by_freq.sort_by(|a, b| a.0.total_cmp(&b.0));
        let terms = by_freq
            .into_iter()
            .map(|(f, m)| (f, TruncatedOperator::new(basis.clone(), m, op.order_tag).expect("shape")))
            .collect();
        Self { basis, terms }
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        for (f, op) in &other.terms {
            out.push(*f, op.clone())?;
        }
        Ok(out)
    }

    pub fn scale(&self, c: C64) -> Self {
        Self {
            basis: self.basis.clone(),
            terms: self.terms.iter().map(|(f, op)| (*f, op.scale(c))).collect(),
        }
    }

    pub fn eval(&self, t: f64) -> TruncatedOperator {
        let n = self.dim();
        let mut m = Mat::<C64>::zeros(n, n);
        for (f, op) in &self.terms {
            let ph = C64::from_polar(1.0, f * t);
            m += faer::Scale(ph) * &op.matrix;
        }
        TruncatedOperator::new(self.basis.clone(), m, self.order_tag()).expect("shape")
    }

    /// `dV/dt` at time `t`.
    pub fn derivative(&self, t: f64) -> TruncatedOperator {
        let n = self.dim();
        let mut m = Mat::<C64>::zeros(n, n);
        for (f, op) in &self.terms {
            let ph = C64::new(0.0, *f) * C64::from_polar(1.0, f * t);
            m += faer::Scale(ph) * &op.matrix;
        }
        TruncatedOperator::new(self.basis.clone(), m, self.order_tag()).expect("shape")
    }

    pub fn order_tag(&self) -> f64 {
        self.terms.iter().map(|(_, op)| op.order_tag).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest `|V_{-f} - V_f^*|` entry over all listed frequencies.
    pub fn selfadjoint_defect(&self) -> f64 {
        let mut worst = 0.0_f64;
        for (f, op) in &self.terms {
            let partner = self.terms.iter().find(|(g, _)| *g == -f);
            let d = match partner {
                Some((_, p)) => p.sub(&op.adjoint()).map(|x| x.norm_max()).unwrap_or(f64::INFINITY),
                None => op.norm_max(),
            };
            worst = worst.max(d);
        }
        worst
    }

    pub fn is_selfadjoint(&self, tol: f64) -> bool {
        self.selfadjoint_defect() <= tol
    }

    /// Frequencies as integers; fails if any is not integral.
    pub fn integer_frequencies(&self) -> Result<Vec<i64>> {
        self.terms
            .iter()
            .map(|(f, _)| {
                if (f - f.round()).abs() < 1e-12 {
                    Ok(f.round() as i64)
                } else {
                    Err(Error::InvalidArgument(format!("frequency {f} is not an integer")))
                }
            })
            .collect()
    }

    /// Largest `|f + lambda_m - lambda_n|` over nonzero entries.
    pub fn phase_bandwidth(&self) -> f64 {
        let n = self.dim();
        let mut bw = 0.0_f64;
        for (f, op) in &self.terms {
            for j in 0..n {
                for i in 0..n {
                    if op.matrix[(i, j)] != ZERO {
                        bw = bw.max((f + self.basis.gap(i, j)).abs());
                    }
                }
            }
        }
        bw
    }

    /// Drops harmonics whose entries are all below `tol`.
    pub fn pruned(&self, tol: f64) -> Self {
        Self {
            basis: self.basis.clone(),
            terms: self.terms.iter().filter(|(_, op)| op.norm_max() > tol).cloned().collect(),
        }
    }

    pub fn max_entry(&self) -> f64 {
        self.terms.iter().map(|(_, op)| op.norm_max()).fold(0.0, f64::max)
    }
}

fn resonant_part(basis: &BasisModel, f: f64, op: &TruncatedOperator) -> TruncatedOperator {
    let n = basis.dim();
    let m = Mat::from_fn(n, n, |i, j| {
        if (basis.gap(i, j) + f).abs() < RESONANCE_TOL {
            op.matrix[(i, j)]
        } else {
            ZERO
        }
    });
    TruncatedOperator::new(op.basis.clone(), m, op.order_tag).expect("shape")
}

/// `<V>`: entry `(m, n)` keeps `(V_f)_{mn}` when `lambda_m - lambda_n + f = 0`.
pub fn resonant_avg(v: &TimePeriodicOperator) -> TruncatedOperator {
    let mut out = TruncatedOperator::zeros(v.basis.clone());
    out.order_tag = v.order_tag();
    for (f, op) in &v.terms {
        out = out.add(&resonant_part(&v.basis, *f, op)).expect("same basis");
    }
    out
}

/// `t -> V^(t)` as a time-periodic operator: the resonant entries of each harmonic.
pub fn averaged(v: &TimePeriodicOperator) -> TimePeriodicOperator {
    let mut out = TimePeriodicOperator::new(v.basis.clone());
    for (f, op) in &v.terms {
        let r = resonant_part(&v.basis, *f, op);
        if r.norm_max() > 0.0 {
            out.push(*f, r).expect("same basis");
        }
    }
    out
}

/// `V^(t) = (1/2pi) int_0^{2pi} e^{isK0} V(t+s) e^{-isK0} ds`.
pub fn averaged_op(v: &TimePeriodicOperator, t: f64) -> TruncatedOperator {
    averaged(v).eval(t)
}

/// `V - V^` as a time-periodic operator.
pub fn nonresonant(v: &TimePeriodicOperator) -> TimePeriodicOperator {
    let mut out = TimePeriodicOperator::new(v.basis.clone());
    for (f, op) in &v.terms {
        let r = op.sub(&resonant_part(&v.basis, *f, op)).expect("same basis");
        if r.norm_max() > 0.0 {
            out.push(*f, r).expect("same basis");
        }
    }
    out
}

/// Trapezoid rule for the free-flow average, independent of the closed form.
#[derive(Clone, Debug)]
pub struct QuadratureAverage {
    pub op: TruncatedOperator,
    pub n_steps: usize,
    /// Largest phase frequency in the integrand.
    pub bandwidth: f64,
    /// Set when some frequency is at least `n_steps`, so the rule can alias.
    pub aliased: bool,
}

pub fn quadrature_avg(v: &TimePeriodicOperator, t: f64, n_steps: usize) -> Result<QuadratureAverage> {
    if n_steps < 4 {
        return Err(Error::InvalidArgument(format!("need n_steps >= 4, got {n_steps}")));
    }
    let n = v.dim();
    let mut acc = Mat::<C64>::zeros(n, n);
    for k in 0..n_steps {
        let s = 2.0 * std::f64::consts::PI * k as f64 / n_steps as f64;
        let c = v.eval(t + s).conjugate_by_free_flow(s);
        acc += &c.matrix;
    }
    acc *= faer::Scale(C64::new(1.0 / n_steps as f64, 0.0));
    let bandwidth = v.phase_bandwidth();
    let aliased = bandwidth >= n_steps as f64 - RESONANCE_TOL;
    if aliased {
        log::warn!("quadrature with {n_steps} nodes aliases phase bandwidth {bandwidth}");
    }
    Ok(QuadratureAverage {
        op: TruncatedOperator::new(v.basis.clone(), acc, v.order_tag())?,
        n_steps,
        bandwidth,
        aliased,
    })
}
