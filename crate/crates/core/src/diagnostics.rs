//! Norm traces, power-law fits and decay checks.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{sobolev_norm, BasisModel, StateVector};
use crate::mourre::{MourreReport, SpectralWindow};
use crate::operator::{Banded, TruncatedOperator};
use crate::spectral::{self, ChebyshevExp, JapaneseBracket};
use crate::{Error, Result, C64};

pub const BOOTSTRAP_RESAMPLES: usize = 200;
pub const BOOTSTRAP_BLOCK: usize = 10;
pub const BOOTSTRAP_SEED: u64 = 0x5eed_2024;
pub const MIN_FIT_SAMPLES: usize = 10;

/// `||psi(t)||_r` over time for a fixed set of `r`, plus the L2 norm and
/// the boundary mass.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NormTrace {
    pub times: Vec<f64>,
    pub rs: Vec<f64>,
    /// `norms[i][k]` is `||psi(times[k])||_{rs[i]}`.
    pub norms: Vec<Vec<f64>>,
    pub l2: Vec<f64>,
    pub boundary_mass: Vec<f64>,
}

impl NormTrace {
    pub fn new(rs: &[f64]) -> Self {
        let rs: Vec<f64> = rs.iter().copied().filter(|&r| r != 0.0).collect();
        Self { norms: vec![Vec::new(); rs.len()], rs, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn record(&mut self, t: f64, basis: &BasisModel, coeffs: &[C64]) {
        self.times.push(t);
        self.l2.push(sobolev_norm(basis, coeffs, 0.0));
        for (r, col) in self.rs.iter().zip(self.norms.iter_mut()) {
            col.push(sobolev_norm(basis, coeffs, *r));
        }
        self.boundary_mass.push(crate::basis::boundary_mass(basis, coeffs));
    }

    pub fn record_state(&mut self, t: f64, s: &StateVector) {
        self.record(t, &s.basis, &s.coeffs);
    }

    /// Column for `r` (`r = 0` is the L2 norm).
    pub fn norm(&self, r: f64) -> Option<&[f64]> {
        if r == 0.0 {
            return Some(&self.l2);
        }
        self.rs.iter().position(|&x| x == r).map(|i| self.norms[i].as_slice())
    }

    pub fn max_l2_drift(&self) -> f64 {
        let Some(&first) = self.l2.first() else { return 0.0 };
        self.l2.iter().map(|x| (x - first).abs()).fold(0.0, f64::max)
    }

    pub fn max_boundary_mass(&self) -> f64 {
        self.boundary_mass.iter().copied().fold(0.0, f64::max)
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string(), "norm_0".to_string()];
        h.extend(self.rs.iter().map(|r| format!("norm_{r}")));
        h.push("boundary_mass".into());
        h
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.header())?;
        for k in 0..self.len() {
            let mut row = vec![format!("{:e}", self.times[k]), format!("{:e}", self.l2[k])];
            row.extend(self.norms.iter().map(|c| format!("{:e}", c[k])));
            row.push(format!("{:e}", self.boundary_mass[k]));
            out.write_record(row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let cols: Vec<&str> = header.iter().collect();
        if cols.len() < 3 || cols[0] != "t" || cols[1] != "norm_0" || cols[cols.len() - 1] != "boundary_mass" {
            return Err(Error::Format(format!("unexpected trace header {cols:?}")));
        }
        let rs = cols[2..cols.len() - 1]
            .iter()
            .map(|c| {
                c.strip_prefix("norm_")
                    .and_then(|x| x.parse::<f64>().ok())
                    .ok_or_else(|| Error::Format(format!("bad column {c}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut tr = NormTrace::new(&rs);
        for rec in rdr.records() {
            let rec = rec?;
            let v = rec
                .iter()
                .map(|x| x.parse::<f64>().map_err(|e| Error::Format(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            tr.times.push(v[0]);
            tr.l2.push(v[1]);
            for (i, col) in tr.norms.iter_mut().enumerate() {
                col.push(v[2 + i]);
            }
            tr.boundary_mass.push(v[v.len() - 1]);
        }
        tr.check()?;
        Ok(tr)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn check(&self) -> Result<()> {
        let n = self.times.len();
        if self.l2.len() != n || self.boundary_mass.len() != n || self.norms.iter().any(|c| c.len() != n) {
            return Err(Error::Format("trace columns differ in length".into()));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Format("trace times not strictly increasing".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub r: f64,
    pub fitted_exponent: f64,
    pub ci_halfwidth: f64,
    pub fit_window: (f64, f64),
    /// RMS residual of the log-log fit.
    pub residual: f64,
    pub n_samples: usize,
    pub intercept: f64,
}

/// Least-squares slope of `ln y` against `ln x` over `x` in `window`, with a
/// block-bootstrap 95% interval.
pub fn fit_power_law(x: &[f64], y: &[f64], window: (f64, f64), r: f64) -> Result<FitReport> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(&t, _)| t >= window.0 && t <= window.1)
        .map(|(&t, &v)| (t, v))
        .collect();
    if pts.len() < MIN_FIT_SAMPLES {
        return Err(Error::Fit(format!(
            "{} samples in [{}, {}], need {MIN_FIT_SAMPLES}",
            pts.len(),
            window.0,
            window.1
        )));
    }
    if pts.iter().any(|&(t, v)| t <= 0.0 || v <= 0.0 || !v.is_finite()) {
        return Err(Error::Fit("non-positive abscissa or value in window".into()));
    }
    let lx: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept) = least_squares(&lx, &ly);
    let residual = (lx
        .iter()
        .zip(&ly)
        .map(|(a, b)| (b - slope * a - intercept).powi(2))
        .sum::<f64>()
        / lx.len() as f64)
        .sqrt();
    let ci_halfwidth = block_bootstrap(&lx, &ly);
    Ok(FitReport {
        r,
        fitted_exponent: slope,
        ci_halfwidth,
        fit_window: window,
        residual,
        n_samples: lx.len(),
        intercept,
    })
}

fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

fn block_bootstrap(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let block = BOOTSTRAP_BLOCK.min(n / 2).max(1);
    let starts: Vec<usize> = (0..n).step_by(block).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(BOOTSTRAP_SEED);
    let mut slopes = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let (mut bx, mut by) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..BOOTSTRAP_RESAMPLES {
        bx.clear();
        by.clear();
        for _ in 0..starts.len() {
            let s = starts[rng.gen_range(0..starts.len())];
            let e = (s + block).min(n);
            bx.extend_from_slice(&x[s..e]);
            by.extend_from_slice(&y[s..e]);
        }
        slopes.push(least_squares(&bx, &by).0);
    }
    slopes.sort_by(f64::total_cmp);
    let q = |p: f64| slopes[((p * (slopes.len() - 1) as f64).round() as usize).min(slopes.len() - 1)];
    0.5 * (q(0.975) - q(0.025))
}

/// Growth exponent of `||psi(t)||_r` over `window`.
pub fn fit_growth_exponent(trace: &NormTrace, r: f64, window: (f64, f64)) -> Result<FitReport> {
    let col = trace.norm(r).ok_or_else(|| Error::Fit(format!("trace has no column for r = {r}")))?;
    fit_power_law(&trace.times, col, window, r)
}

/// Decay exponent of `||phi(t)||_{-r}` over `window` (negative when decaying).
pub fn fit_decay_exponent(trace: &NormTrace, r: f64, window: (f64, f64)) -> Result<FitReport> {
    let col = trace.norm(-r.abs()).ok_or_else(|| Error::Fit(format!("trace has no column for r = {}", -r.abs())))?;
    fit_power_law(&trace.times, col, window, -r.abs())
}

/// Default fit-window start, `0.1 t_end`.
pub fn default_window(t_end: f64) -> (f64, f64) {
    (0.1 * t_end, t_end)
}

/// Smallest `||phi||_r ||phi||_{-r} - ||phi(0)||_0^2` over the trace.
pub fn duality_margin(trace: &NormTrace, r: f64) -> Option<f64> {
    let p = trace.norm(r.abs())?;
    let m = trace.norm(-r.abs())?;
    let base = trace.l2.first()?.powi(2);
    Some(p.iter().zip(m).map(|(a, b)| a * b - base).fold(f64::INFINITY, f64::min))
}

#[derive(Clone, Debug, Serialize)]
pub struct LocalDecayReport {
    pub k: usize,
    pub times: Vec<f64>,
    /// `||<A>^{-k} e^{-iHt} g_J(H) phi||`.
    pub lhs: Vec<f64>,
    /// Value of the left side at `t = 0`.
    pub lhs0: f64,
    /// `||<A>^k g_J(H) phi||`.
    pub rhs: f64,
    pub ratio: Vec<f64>,
    pub fit: Option<FitReport>,
    pub vacuous: bool,
    pub passed: bool,
}

/// Checks `||<A>^{-k} e^{-iHt} g_J(H) phi|| <~ <t>^{-k} ||<A>^k g_J(H) phi||`.
///
/// `certificate` must be a passed strict Mourre report for the same model
/// whose strict window covers the support of `window`. It may have been
/// computed at a smaller truncation than `h`.
pub fn local_energy_decay_check(
    h: &Banded,
    a: &Banded,
    certificate: &MourreReport,
    window: &SpectralWindow,
    phi: &[C64],
    k: usize,
    times: &[f64],
) -> Result<LocalDecayReport> {
    if !certificate.passed || certificate.vacuous {
        return Err(Error::Uncertified("certificate did not pass a strict estimate".into()));
    }
    if !certificate.strict_window.contains_support_of(window) {
        return Err(Error::Uncertified(format!(
            "window support {:?} not inside certified {:?}",
            window.support(),
            certificate.strict_window.support()
        )));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) || times.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::InvalidArgument("times must be increasing and non-negative".into()));
    }
    let w0 = spectral::apply_function(h, |x| window.bump(x), phi);
    let jb = JapaneseBracket::new(a)?;
    let rhs = jb.pos_norm(&w0, k);
    let lhs0 = jb.neg_norm(&w0, k);
    let scale = crate::basis::l2(phi);
    if crate::basis::l2(&w0) <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Ok(LocalDecayReport {
            k,
            times: times.to_vec(),
            lhs: vec![0.0; times.len()],
            lhs0,
            rhs,
            ratio: vec![0.0; times.len()],
            fit: None,
            vacuous: true,
            passed: true,
        });
    }
    let (lo, hi) = spectral::spectral_bounds(h);
    let mut w = w0;
    let mut t_now = 0.0;
    let mut stepper: Option<ChebyshevExp> = None;
    let mut lhs = Vec::with_capacity(times.len());
    for &t in times {
        let dt = t - t_now;
        if dt > 0.0 {
            let chunks = (dt * 0.5 * (hi - lo) / 40.0).ceil().max(1.0) as usize;
            let tau = dt / chunks as f64;
            if stepper.as_ref().is_none_or(|s| (s.tau - tau).abs() > 1e-14 * tau) {
                stepper = Some(ChebyshevExp::new(tau, lo, hi));
            }
            let s = stepper.as_ref().unwrap();
            for _ in 0..chunks {
                w = s.apply(h, &w);
            }
            t_now = t;
        }
        lhs.push(jb.neg_norm(&w, k));
    }
    let ratio = lhs.iter().map(|l| l / rhs).collect();
    let positive: Vec<f64> = times.iter().copied().filter(|&t| t > 0.0).collect();
    let fit = match (positive.first(), positive.last()) {
        (Some(&a0), Some(&b0)) => Some(fit_power_law(times, &lhs, (a0, b0), -(k as f64))?),
        _ => None,
    };
    let passed = fit.as_ref().is_some_and(|f| f.fitted_exponent <= -(k as f64) + 0.3);
    Ok(LocalDecayReport { k, times: times.to_vec(), lhs, lhs0, rhs, ratio, fit, vacuous: false, passed })
}

/// Refinement study over increasing truncations.
#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub dims: Vec<usize>,
    /// Max relative trace difference between consecutive dims.
    pub differences: Vec<f64>,
    pub monotone: bool,
    pub converged: bool,
}

/// Compares traces computed at increasing `dims` on their common times.
pub fn compare_traces(dims: &[usize], traces: &[NormTrace]) -> Result<ConvergenceReport> {
    if dims.len() < 3 || dims.len() != traces.len() || dims.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("need at least 3 increasing dims, one trace each".into()));
    }
    let mut differences = Vec::new();
    for pair in traces.windows(2) {
        differences.push(trace_difference(&pair[0], &pair[1]));
    }
    let monotone = differences.windows(2).all(|w| w[1] <= w[0]);
    let converged = differences.last().is_some_and(|&d| d < 0.01);
    Ok(ConvergenceReport { dims: dims.to_vec(), differences, monotone, converged })
}

fn trace_difference(a: &NormTrace, b: &NormTrace) -> f64 {
    let mut worst = 0.0_f64;
    for (ka, t) in a.times.iter().enumerate() {
        let Some(kb) = b.times.iter().position(|s| (s - t).abs() <= 1e-9 * t.abs().max(1.0)) else {
            continue;
        };
        let mut cols: Vec<(f64, f64)> = vec![(a.l2[ka], b.l2[kb])];
        for (i, r) in a.rs.iter().enumerate() {
            if let Some(cb) = b.norm(*r) {
                cols.push((a.norms[i][ka], cb[kb]));
            }
        }
        for (x, y) in cols {
            let d = (x - y).abs() / y.abs().max(x.abs()).max(1e-300);
            worst = worst.max(d);
        }
    }
    worst
}

/// Decay exponent of operator entries away from mode 0 on the Fourier basis.
///
/// Shell `s` collects entries with `max(|m|, |n|) = s`. Returns `+inf` for a
/// matrix that vanishes, or whose entries stop before half the truncation.
pub fn entry_decay_exponent(r: &TruncatedOperator) -> f64 {
    let basis = &r.basis;
    let smax = basis.max_mode().max(1) as usize;
    let mut shells = vec![0.0_f64; smax + 1];
    for j in 0..r.dim() {
        for i in 0..r.dim() {
            let v = r.matrix[(i, j)].norm();
            let s = basis.label(i).abs().max(basis.label(j).abs()) as usize;
            shells[s] = shells[s].max(v);
        }
    }
    let top = shells.iter().copied().fold(0.0, f64::max);
    if top <= 1e-13 {
        return f64::INFINITY;
    }
    let last = shells.iter().rposition(|&v| v > 1e-13 * top.max(1.0)).unwrap_or(0);
    if last < smax / 2 {
        return f64::INFINITY;
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = shells
        .iter()
        .enumerate()
        .skip(1)
        .take(smax / 2)
        .filter(|(_, &v)| v > 0.0)
        .map(|(s, &v)| ((s as f64).ln(), v.ln()))
        .unzip();
    if xs.len() < 2 {
        return f64::INFINITY;
    }
    -least_squares(&xs, &ys).0
}

/// Fitted slope of the Weyl residual against `n` on a log-log scale.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    least_squares(&lx, &ly).0
}
