//! Time evolution: exact flows of static hermitian operators and
//! interaction-picture stepping for `i d/dt psi = (K0 + V(t)) psi`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::basis::{free_flow_in_place, BasisModel, StateVector};
use crate::diagnostics::NormTrace;
use crate::operator::{Banded, TruncatedOperator};
use crate::resonant::TimePeriodicOperator;
use crate::spectral::{self, eigh, ChebyshevExp};
use crate::{Error, Result, C64, I, ZERO};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// Exact flow of a time-independent generator.
    ExactEig,
    /// `phi <- exp(-i h G(t + h/2)) phi`.
    InteractionMidpoint,
    /// Classical fourth-order Runge-Kutta on `phi' = -i G(t) phi`.
    InteractionRK4,
}

fn default_boundary_tol() -> f64 {
    1e-6
}

// JSON has no infinity and writes it as null.
fn null_as_inf<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    pub t_end: f64,
    /// Output spacing.
    pub dt: f64,
    /// Integrator step (rounded down so it divides `dt`).
    pub micro_dt: f64,
    pub method: Method,
    pub unitarity_tol: f64,
    /// Abort threshold for the mass in the top 5% of modes; `inf` disables.
    #[serde(default = "default_boundary_tol", deserialize_with = "null_as_inf")]
    pub boundary_tol: f64,
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.micro_dt > 0.0 && self.micro_dt <= self.dt && self.dt <= self.t_end && self.unitarity_tol > 0.0;
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "need 0 < micro_dt <= dt <= t_end and unitarity_tol > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn output_times(&self) -> Vec<f64> {
        let n = (self.t_end / self.dt).round() as usize;
        (0..=n).map(|k| k as f64 * self.dt).collect()
    }
}

/// `e^{-itH} psi0` at each of `times`.
///
/// Narrow bands go through Chebyshev steps between consecutive times; other
/// operators through a dense eigendecomposition.
pub fn evolve_static(h: &TruncatedOperator, psi0: &StateVector, times: &[f64]) -> Result<Vec<StateVector>> {
    if !h.hermitian {
        return Err(Error::NotHermitian { defect: h.hermitian_defect() });
    }
    let band = h.to_banded();
    if h.dim() > 256 && band.bandwidth() <= h.dim() / 8 {
        return evolve_static_banded(&band, &h.basis, psi0, times);
    }
    let (vals, u) = eigh(&h.matrix)?;
    let c = spectral::to_eigenbasis(&u, &psi0.coeffs);
    Ok(times
        .iter()
        .map(|&t| {
            let ct: Vec<C64> = c.iter().zip(&vals).map(|(x, &l)| x * C64::from_polar(1.0, -t * l)).collect();
            StateVector { basis: h.basis.clone(), coeffs: spectral::from_eigenbasis(&u, &ct) }
        })
        .collect())
}

/// Chebyshev time stepping for a banded hermitian `H`. `times` must be
/// non-decreasing; the flow starts at `t = 0`.
pub fn evolve_static_banded(
    h: &Banded,
    basis: &Arc<BasisModel>,
    psi0: &StateVector,
    times: &[f64],
) -> Result<Vec<StateVector>> {
    let mut out = Vec::with_capacity(times.len());
    let mut flow = StaticFlow::new(h, psi0.coeffs.clone());
    for &t in times {
        flow.advance_to(t)?;
        out.push(StateVector { basis: basis.clone(), coeffs: flow.state.clone() });
    }
    Ok(out)
}

/// Incremental `e^{-itH}` on a band, reusing the expansion for equal steps.
pub struct StaticFlow<'a> {
    h: &'a Banded,
    lo: f64,
    hi: f64,
    pub t: f64,
    pub state: Vec<C64>,
    stepper: Option<ChebyshevExp>,
}

impl<'a> StaticFlow<'a> {
    pub fn new(h: &'a Banded, state: Vec<C64>) -> Self {
        let (lo, hi) = spectral::spectral_bounds(h);
        Self { h, lo, hi, t: 0.0, state, stepper: None }
    }

    pub fn advance_to(&mut self, t: f64) -> Result<()> {
        let dt = t - self.t;
        if dt < 0.0 {
            return Err(Error::InvalidArgument(format!("time {t} before current {}", self.t)));
        }
        if dt == 0.0 {
            return Ok(());
        }
        let chunks = (dt * 0.5 * (self.hi - self.lo) / 40.0).ceil().max(1.0) as usize;
        let tau = dt / chunks as f64;
        if self.stepper.as_ref().is_none_or(|s| (s.tau - tau).abs() > 1e-14 * tau) {
            self.stepper = Some(ChebyshevExp::new(tau, self.lo, self.hi));
        }
        let s = self.stepper.as_ref().unwrap();
        for _ in 0..chunks {
            self.state = s.apply(self.h, &self.state);
        }
        self.t = t;
        Ok(())
    }
}

/// Interaction-picture generator `G(t) = e^{itK0} V(t) e^{-itK0}` in banded
/// form: entry `(m, n)` of harmonic `f` rotates at `f + lambda_m - lambda_n`.
pub struct InteractionGenerator {
    n: usize,
    bw: usize,
    omegas: Vec<f64>,
    /// `(slot in band storage, value, index into omegas)`.
    entries: Vec<(u32, C64, u32)>,
    /// Bound on the spectral radius of `G(t)` for every `t`.
    pub bound: f64,
}

impl InteractionGenerator {
    pub fn new(v: &TimePeriodicOperator) -> Self {
        let basis = &v.basis;
        let n = basis.dim();
        let bands: Vec<(f64, Banded)> = v.terms.iter().map(|(f, op)| (*f, op.to_banded())).collect();
        let bw = bands.iter().map(|(_, b)| b.bandwidth()).max().unwrap_or(0);
        let width = 2 * bw + 1;
        let mut omegas: Vec<f64> = Vec::new();
        let mut entries = Vec::new();
        let mut rows = vec![0.0_f64; n];
        for (f, b) in &bands {
            for (i, row) in rows.iter_mut().enumerate() {
                let (lo, hi) = b.row_span(i);
                for j in lo..hi {
                    let val = b.get(i, j);
                    if val == ZERO {
                        continue;
                    }
                    *row += val.norm();
                    let w = f + basis.gap(i, j);
                    let idx = match omegas.iter().position(|&o| o == w) {
                        Some(p) => p,
                        None => {
                            omegas.push(w);
                            omegas.len() - 1
                        }
                    };
                    let slot = i * width + j + bw - i;
                    entries.push((slot as u32, val, idx as u32));
                }
            }
        }
        entries.sort_by_key(|e| e.0);
        let bound = rows.iter().copied().fold(0.0, f64::max);
        Self { n, bw, omegas, entries, bound }
    }

    pub fn is_static(&self) -> bool {
        self.omegas.iter().all(|&w| w == 0.0)
    }

    pub fn eval_into(&self, t: f64, out: &mut Banded) {
        let phases: Vec<C64> = self.omegas.iter().map(|&w| C64::from_polar(1.0, w * t)).collect();
        let data = out.raw_mut();
        data.iter_mut().for_each(|x| *x = ZERO);
        for &(slot, val, idx) in &self.entries {
            data[slot as usize] += val * phases[idx as usize];
        }
    }

    pub fn eval(&self, t: f64) -> Banded {
        let mut b = Banded::zeros(self.n, self.bw);
        self.eval_into(t, &mut b);
        b
    }
}

/// One-step integrator for `phi' = -i G(t) phi`.
pub struct InteractionStepper {
    pub generator: InteractionGenerator,
    method: Method,
    scratch: Banded,
    exp_cache: Vec<ChebyshevExp>,
}

impl InteractionStepper {
    pub fn new(v: &TimePeriodicOperator, method: Method) -> Result<Self> {
        if method == Method::ExactEig {
            return Err(Error::InvalidArgument("ExactEig is for static generators; use evolve_static".into()));
        }
        let generator = InteractionGenerator::new(v);
        let scratch = Banded::zeros(generator.n, generator.bw);
        Ok(Self { generator, method, scratch, exp_cache: Vec::new() })
    }

    /// Advances `phi` from `t` to `t + h` (`h` may be negative).
    pub fn step(&mut self, phi: &mut Vec<C64>, t: f64, h: f64) {
        match self.method {
            Method::InteractionMidpoint => {
                self.generator.eval_into(t + 0.5 * h, &mut self.scratch);
                let b = self.generator.bound * (1.0 + 1e-8) + 1e-12;
                let e = match self.exp_cache.iter().position(|e| e.tau == h) {
                    Some(p) => &self.exp_cache[p],
                    None => {
                        self.exp_cache.push(ChebyshevExp::new(h, -b, b));
                        self.exp_cache.last().unwrap()
                    }
                };
                *phi = e.apply(&self.scratch, phi);
            }
            Method::InteractionRK4 => {
                let mut f = |s: f64, x: &[C64]| -> Vec<C64> {
                    self.generator.eval_into(s, &mut self.scratch);
                    let mut y = self.scratch.apply(x);
                    y.iter_mut().for_each(|v| *v *= -I);
                    y
                };
                let axpy = |a: &[C64], k: &[C64], c: f64| -> Vec<C64> { a.iter().zip(k).map(|(x, y)| x + y * c).collect() };
                let k1 = f(t, phi);
                let k2 = f(t + 0.5 * h, &axpy(phi, &k1, 0.5 * h));
                let k3 = f(t + 0.5 * h, &axpy(phi, &k2, 0.5 * h));
                let k4 = f(t + h, &axpy(phi, &k3, h));
                for (i, p) in phi.iter_mut().enumerate() {
                    *p += (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) * (h / 6.0);
                }
            }
            Method::ExactEig => unreachable!(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Evolution {
    pub trace: NormTrace,
    pub final_state: StateVector,
    pub micro_steps: usize,
}

/// Integrates `i d/dt psi = (K0 + V(t)) psi` in the interaction picture and
/// records `||psi(t)||_r` at every output time.
///
/// Aborts, without renormalizing, when the L2 norm drifts by more than
/// `unitarity_tol` or the boundary mass exceeds `boundary_tol`.
pub fn evolve_periodic(
    v: &TimePeriodicOperator,
    psi0: &StateVector,
    config: &EvolutionConfig,
    rs: &[f64],
) -> Result<Evolution> {
    config.validate()?;
    if !v.is_selfadjoint(1e-12 * v.max_entry().max(1.0)) {
        return Err(Error::NotHermitian { defect: v.selfadjoint_defect() });
    }
    let basis = psi0.basis.clone();
    let mut trace = NormTrace::new(rs);
    let mut phi = psi0.coeffs.clone();
    let norm0 = psi0.norm();
    trace.record(0.0, &basis, &phi);
    let times = config.output_times();
    let mut micro_steps = 0;
    if config.method == Method::ExactEig {
        let gen = InteractionGenerator::new(v);
        if !gen.is_static() {
            return Err(Error::InvalidArgument("ExactEig needs a static interaction generator".into()));
        }
        let g = gen.eval(0.0);
        let mut flow = StaticFlow::new(&g, phi);
        for &t in &times[1..] {
            flow.advance_to(t)?;
            watch(&mut trace, t, &basis, &flow.state, norm0, config)?;
        }
        phi = flow.state;
    } else {
        let mut stepper = InteractionStepper::new(v, config.method)?;
        let per = (config.dt / config.micro_dt).ceil().max(1.0) as usize;
        let h = config.dt / per as f64;
        let mut t = 0.0;
        for (k, &t_out) in times.iter().enumerate().skip(1) {
            for s in 0..per {
                stepper.step(&mut phi, times[k - 1] + s as f64 * h, h);
                micro_steps += 1;
            }
            t = t_out;
            watch(&mut trace, t, &basis, &phi, norm0, config)?;
        }
        debug_assert!((t - times[times.len() - 1]).abs() < 1e-9);
    }
    let t_final = *times.last().unwrap();
    free_flow_in_place(&basis, &mut phi, t_final);
    Ok(Evolution { trace, final_state: StateVector { basis, coeffs: phi }, micro_steps })
}

fn watch(trace: &mut NormTrace, t: f64, basis: &BasisModel, phi: &[C64], norm0: f64, config: &EvolutionConfig) -> Result<()> {
    trace.record(t, basis, phi);
    let drift = (trace.l2.last().unwrap() - norm0).abs();
    if drift > config.unitarity_tol {
        return Err(Error::UnitarityDrift { t, drift });
    }
    let mass = *trace.boundary_mass.last().unwrap();
    if mass > config.boundary_tol {
        return Err(Error::BoundaryMass { t, mass });
    }
    Ok(())
}
