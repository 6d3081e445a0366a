//! Homological equation, Lie-transform conjugation and the resonant normal
//! form up to two steps.

use std::collections::BTreeMap;

use faer::Mat;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::operator::{commutator, TruncatedOperator};
use crate::resonant::{averaged, nonresonant, TimePeriodicOperator, RESONANCE_TOL};
use crate::spectral::eigh;
use crate::{Error, Result, C64, I, ZERO};

/// Time samples used to re-expand conjugated generators into harmonics.
pub const DEFAULT_SAMPLES: usize = 64;

/// Solves `dX/dt + i[K0, X] = V - V^` with `X(0) = 0`.
pub fn solve_homological(v: &TimePeriodicOperator) -> Result<TimePeriodicOperator> {
    solve_homological_nonresonant(&nonresonant(v))
}

/// Same as [`solve_homological`] for an input that already has no resonant part.
///
/// Entry `(m, n)` of harmonic `f` contributes `W / (i (g + f))` at frequency `f`
/// and the opposite amount at frequency `-g`, `g = lambda_m - lambda_n`, which
/// pins `X(0) = 0` and keeps `X` 2pi-periodic.
pub fn solve_homological_nonresonant(w: &TimePeriodicOperator) -> Result<TimePeriodicOperator> {
    let freqs = w.integer_frequencies()?;
    let basis = w.basis.clone();
    let n = basis.dim();
    let mut out: BTreeMap<i64, Mat<C64>> = BTreeMap::new();
    let mut leftover = 0.0_f64;
    for (&f, (_, op)) in freqs.iter().zip(&w.terms) {
        for j in 0..n {
            for i in 0..n {
                let val = op.matrix[(i, j)];
                if val == ZERO {
                    continue;
                }
                let g = basis.gap(i, j);
                let denom = g + f as f64;
                if denom.abs() < RESONANCE_TOL {
                    leftover = leftover.max(val.norm());
                    continue;
                }
                let x = val / (I * denom);
                out.entry(f).or_insert_with(|| Mat::zeros(n, n))[(i, j)] += x;
                let h = -(g.round() as i64);
                out.entry(h).or_insert_with(|| Mat::zeros(n, n))[(i, j)] -= x;
            }
        }
    }
    if leftover > 0.0 {
        return Err(Error::ResonantPart(leftover));
    }
    let order = w.order_tag() - 1.0;
    let mut x = TimePeriodicOperator::new(basis.clone());
    for (f, m) in out {
        let op = TruncatedOperator::new(basis.clone(), m, order)?;
        if op.norm_max() > 0.0 {
            x.push(f as f64, op)?;
        }
    }
    Ok(x)
}

/// `max |(X(t+e) - X(t-e)) / 2e + i[K0, X(t)] - (V(t) - V^(t))|`.
pub fn homological_residual(v: &TimePeriodicOperator, x: &TimePeriodicOperator, t: f64, eps: f64) -> f64 {
    let k0 = TruncatedOperator::k0(v.basis.clone());
    let fd = x.eval(t + eps).sub(&x.eval(t - eps)).expect("basis").scale(C64::new(0.5 / eps, 0.0));
    let comm = commutator(&k0, &x.eval(t)).expect("basis").scale(I);
    let rhs = nonresonant(v).eval(t);
    fd.add(&comm).and_then(|l| l.sub(&rhs)).map(|d| d.norm_max()).unwrap_or(f64::INFINITY)
}

/// Output of [`conjugate_hamiltonian`]: the new potential `H+ - K0`.
#[derive(Clone, Debug)]
pub struct Conjugated {
    pub potential: TimePeriodicOperator,
    pub n_samples: usize,
    /// Largest harmonic at the Nyquist end relative to the largest overall.
    pub alias_tail: f64,
}

/// `H+ = e^{iX} H e^{-iX} - int_0^1 e^{isX} dX/dt e^{-isX} ds` for `H = K0 + V`.
///
/// Evaluated exactly at `n_samples` equispaced times in the eigenbasis of
/// `X(t)`, where the `s`-integral has the closed form `(e^{i d} - 1)/(i d)`,
/// then re-expanded into harmonics by FFT.
pub fn conjugate_hamiltonian(
    v: &TimePeriodicOperator,
    x: &TimePeriodicOperator,
    n_samples: usize,
) -> Result<Conjugated> {
    if x.terms.is_empty() {
        return Ok(Conjugated { potential: v.clone(), n_samples, alias_tail: 0.0 });
    }
    if !x.is_selfadjoint(1e-10 * x.max_entry().max(1.0)) {
        return Err(Error::NotHermitian { defect: x.selfadjoint_defect() });
    }
    let basis = v.basis.clone();
    let n = basis.dim();
    let k0 = TruncatedOperator::k0(basis.clone());
    let mut samples: Vec<Mat<C64>> = Vec::with_capacity(n_samples);
    for s in 0..n_samples {
        let t = 2.0 * std::f64::consts::PI * s as f64 / n_samples as f64;
        let h = k0.add(&v.eval(t))?;
        let (mu, q) = eigh(&x.eval(t).matrix)?;
        let qa = q.adjoint();
        let hq = qa * &h.matrix * &q;
        let dq = qa * &x.derivative(t).matrix * &q;
        let inner = Mat::from_fn(n, n, |a, b| {
            let d = mu[a] - mu[b];
            let rot = hq[(a, b)] * C64::from_polar(1.0, d);
            rot - dq[(a, b)] * phi1(d)
        });
        let mut out = &q * &inner * qa;
        for i in 0..n {
            out[(i, i)] -= C64::new(basis.eigenvalue(i), 0.0);
        }
        samples.push(out);
    }
    let (potential, alias_tail) = harmonics_from_samples(&basis, &samples, v.order_tag())?;
    if alias_tail > 1e-10 {
        log::warn!("conjugated generator not resolved by {n_samples} samples (tail {alias_tail:.2e})");
    }
    Ok(Conjugated { potential, n_samples, alias_tail })
}

/// `(e^{id} - 1) / (i d)`.
fn phi1(d: f64) -> C64 {
    if d.abs() < 1e-6 {
        C64::new(1.0 - d * d / 6.0, d / 2.0)
    } else {
        (C64::from_polar(1.0, d) - 1.0) / (I * d)
    }
}

fn harmonics_from_samples(
    basis: &std::sync::Arc<crate::BasisModel>,
    samples: &[Mat<C64>],
    order_tag: f64,
) -> Result<(TimePeriodicOperator, f64)> {
    let ns = samples.len();
    let n = basis.dim();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(ns);
    let mut coeffs: Vec<Mat<C64>> = (0..ns).map(|_| Mat::zeros(n, n)).collect();
    let mut buf = vec![ZERO; ns];
    for j in 0..n {
        for i in 0..n {
            for (b, s) in buf.iter_mut().zip(samples) {
                *b = s[(i, j)];
            }
            fft.process(&mut buf);
            for (c, b) in coeffs.iter_mut().zip(&buf) {
                c[(i, j)] = b / ns as f64;
            }
        }
    }
    let mut out = TimePeriodicOperator::new(basis.clone());
    let mut overall = 0.0_f64;
    let mut tail = 0.0_f64;
    for (k, c) in coeffs.into_iter().enumerate() {
        let f = if k < ns.div_ceil(2) { k as i64 } else { k as i64 - ns as i64 };
        let op = TruncatedOperator::new(basis.clone(), c, order_tag)?;
        let size = op.norm_max();
        overall = overall.max(size);
        if f.unsigned_abs() as usize >= ns / 2 - ns / 8 {
            tail = tail.max(size);
        }
        if size > 1e-14 {
            out.push(f as f64, op)?;
        }
    }
    let rel = if overall > 0.0 { tail / overall } else { 0.0 };
    Ok((out, rel))
}

#[derive(Clone, Debug)]
pub struct NormalFormResult {
    pub x_list: Vec<TimePeriodicOperator>,
    /// Normal-form part `Z(t)`.
    pub z: TimePeriodicOperator,
    pub remainder: TimePeriodicOperator,
    pub effective_h: TruncatedOperator,
    pub t_n: TruncatedOperator,
    pub steps: usize,
    pub summary: NormalFormSummary,
}

#[derive(Clone, Debug, Serialize)]
pub struct NormalFormSummary {
    pub steps: usize,
    pub n_samples: usize,
    /// Max entry of the remainder after each step, starting with `V - V^`.
    pub remainder_max: Vec<f64>,
    /// Homological residual of each generator at `t = 1`, `eps = 1e-4`.
    pub homological_residual: Vec<f64>,
    pub alias_tail: Vec<f64>,
    pub t_n_max: f64,
    pub composition: String,
}

/// Runs one or two normal-form steps on `K0 + V`.
pub fn normal_form(v: &TimePeriodicOperator, steps: usize) -> Result<NormalFormResult> {
    normal_form_with(v, steps, DEFAULT_SAMPLES)
}

pub fn normal_form_with(v: &TimePeriodicOperator, steps: usize, n_samples: usize) -> Result<NormalFormResult> {
    if !(1..=2).contains(&steps) {
        return Err(Error::InvalidArgument(format!("normal form depth {steps} not in {{1, 2}}")));
    }
    let avg = crate::resonant::resonant_avg(v);
    let mut z = averaged(v);
    let mut current = v.clone();
    let mut x_list = Vec::new();
    let mut remainder_max = vec![nonresonant(v).max_entry()];
    let mut residuals = Vec::new();
    let mut tails = Vec::new();
    let mut remainder = TimePeriodicOperator::new(v.basis.clone());
    for step in 1..=steps {
        z = averaged(&current);
        let x = solve_homological(&current)?;
        residuals.push(homological_residual(&current, &x, 1.0, 1e-4));
        let conj = conjugate_hamiltonian(&current, &x, n_samples)?;
        tails.push(conj.alias_tail);
        remainder = conj.potential.add(&z.scale(C64::new(-1.0, 0.0)))?.pruned(1e-14);
        let size = remainder.max_entry();
        if size >= *remainder_max.last().unwrap() {
            log::warn!("normal form step {step}: remainder {size:.3e} did not shrink");
        }
        remainder_max.push(size);
        x_list.push(x);
        current = conj.potential.pruned(1e-14);
    }
    let effective_h = z.eval(0.0);
    let t_n = effective_h.sub(&avg)?;
    let summary = NormalFormSummary {
        steps,
        n_samples,
        remainder_max,
        homological_residual: residuals,
        alias_tail: tails,
        t_n_max: t_n.norm_max(),
        composition: "psi = exp(-i X_1(t)) exp(-i X_2(t)) phi; X_2 solves the homological equation for the step-1 remainder".into(),
    };
    Ok(NormalFormResult { x_list, z, remainder, effective_h, t_n, steps, summary })
}
