//! Named experiments driven by TOML configs, with on-disk artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisKind, BasisModel, StateVector};
use crate::diagnostics::{
    compare_traces, duality_margin, fit_power_law, local_energy_decay_check, ConvergenceReport, FitReport,
    LocalDecayReport, NormTrace,
};
use crate::io::save_operator;
use crate::mourre::{
    cascade_initial_datum, conjugate_band_harmonic, conjugate_band_halfwave, conjugate_operator_halfwave,
    conjugate_operator_harmonic, mourre_check, transporter_h0, MourreOptions, MourreReport, SpectralWindow,
};
use crate::normal_form::{normal_form_with, NormalFormSummary};
use crate::operator::{multiplication_op, toeplitz, ToeplitzSpec, TruncatedOperator};
use crate::propagator::{evolve_periodic, evolve_static, EvolutionConfig};
use crate::resonant::{resonant_avg, TimePeriodicOperator};
use crate::{Error, Result, C64};

/// Default bound on the perturbation seminorm proxy.
pub const DEFAULT_PERTURBATION_GUARD: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Model {
    /// `cos(k t) T` with `T` a hermitian Toeplitz operator on the Hermite basis.
    HarmonicTransporter,
    /// `exp(-itK0) H0 exp(itK0)`, `H0 = 1/2 (V_k S^k + h.c.)`.
    HarmonicUniversal,
    /// `cos(j t) v(x) - 1` on the Fourier basis.
    HalfWaveTransporter,
    /// The universal transporter plus `epsilon cos(t) B`, `B` random banded hermitian.
    PerturbedTransporter,
    /// `cos(omega t) T` with an irrational `omega`.
    NonResonantControl,
    /// Effective flow `exp(-it <V>)` of the universal transporter.
    EffectiveFlowDecay,
    /// One- and two-step normal forms of `cos(k t) T`.
    NormalFormAudit,
    /// Windowed commutator positivity for the universal transporter.
    MourreAudit,
}

impl Model {
    fn kind(self) -> BasisKind {
        match self {
            Model::HalfWaveTransporter => BasisKind::HalfWave,
            _ => BasisKind::Harmonic,
        }
    }

    fn evolves(self) -> bool {
        !matches!(self, Model::NormalFormAudit | Model::MourreAudit)
    }

    fn certifies(self) -> bool {
        !matches!(self, Model::NonResonantControl | Model::NormalFormAudit)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub epsilon: f64,
    pub seed: u64,
    /// Half bandwidth of `B`.
    pub band: usize,
    /// Upper bound allowed for `epsilon * max |B_d| <d>^2`.
    #[serde(default = "default_guard")]
    pub guard: f64,
}

fn default_guard() -> f64 {
    DEFAULT_PERTURBATION_GUARD
}

/// Model parameters. Complex numbers are `[re, im]`; coefficient lists are
/// `[index, re, im]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialParams {
    pub k: Option<usize>,
    pub vk: Option<[f64; 2]>,
    pub toeplitz: Option<Vec<[f64; 3]>>,
    pub j: Option<i64>,
    pub v: Option<Vec<[f64; 3]>>,
    pub omega: Option<f64>,
    pub perturbation: Option<Perturbation>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowParams {
    pub a: f64,
    pub b: f64,
    pub delta: Option<f64>,
}

impl WindowParams {
    pub fn window(&self) -> Result<SpectralWindow> {
        match self.delta {
            Some(d) => SpectralWindow::new(self.a, self.b, d),
            None => SpectralWindow::with_default_flank(self.a, self.b),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitParams {
    pub t_min: Option<f64>,
    pub t_max: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MourreParams {
    /// Truncation used for certification; defaults to `min(dim, 512)`.
    pub dim: Option<usize>,
    pub edge_width: Option<usize>,
    pub compact_rank: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalFormParams {
    pub steps: usize,
    pub samples: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalDecayParams {
    pub ks: Vec<usize>,
    pub t_min: f64,
    pub t_max: f64,
    pub samples: usize,
}

/// Expected range for a fitted exponent; violations give exit code 3.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    pub r: f64,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub model: Model,
    pub dim: usize,
    pub potential: PotentialParams,
    pub evolution: Option<EvolutionConfig>,
    #[serde(default)]
    pub r_values: Vec<f64>,
    pub output_dir: PathBuf,
    pub window: Option<WindowParams>,
    /// Physical label of the seed basis vector.
    pub seed_mode: Option<i64>,
    pub fit: Option<FitParams>,
    pub mourre: Option<MourreParams>,
    pub normal_form: Option<NormalFormParams>,
    pub local_decay: Option<LocalDecayParams>,
    #[serde(default)]
    pub checks: Vec<CheckSpec>,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a TOML config, or the config embedded in a `manifest.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            let m: serde_json::Value = serde_json::from_str(&text)?;
            let cfg = m.get("config").cloned().ok_or_else(|| Error::Config("manifest has no config".into()))?;
            return serde_json::from_value(cfg).map_err(|e| Error::Config(e.to_string()));
        }
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn fit_window(&self) -> Option<(f64, f64)> {
        let ev = self.evolution.as_ref()?;
        let f = self.fit.unwrap_or_default();
        Some((f.t_min.unwrap_or(0.1 * ev.t_end), f.t_max.unwrap_or(ev.t_end)))
    }

    pub fn mourre_dim(&self) -> usize {
        let d = self.mourre.and_then(|m| m.dim).unwrap_or(self.dim.min(512));
        if self.model.kind() == BasisKind::HalfWave && d % 2 == 0 {
            d + 1
        } else {
            d
        }
    }

    fn vk(&self) -> Option<C64> {
        self.potential.vk.map(|[re, im]| C64::new(re, im))
    }

    fn toeplitz_spec(&self) -> Option<ToeplitzSpec> {
        self.potential
            .toeplitz
            .as_ref()
            .map(|d| ToeplitzSpec::new(d.iter().map(|[o, re, im]| (*o as i64, C64::new(*re, *im)))))
    }

    fn fourier_coeffs(&self) -> Option<BTreeMap<i64, C64>> {
        self.potential
            .v
            .as_ref()
            .map(|d| d.iter().map(|[j, re, im]| (*j as i64, C64::new(*re, *im))).collect())
    }
}

/// One problem found by [`validate`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

/// Schema and cross-field checks, no computation. Empty means valid.
pub fn validate(cfg: &ScenarioConfig) -> Vec<FieldError> {
    let mut errs = Vec::new();
    let mut err = |f: &str, m: &str| errs.push(FieldError { field: f.into(), message: m.into() });
    if cfg.name.trim().is_empty() || cfg.name.contains(['/', '\\']) {
        err("name", "must be a non-empty file name");
    }
    if cfg.dim < 2 {
        err("dim", "must be at least 2");
    }
    if cfg.model.kind() == BasisKind::HalfWave && cfg.dim % 2 == 0 {
        err("dim", "half-wave truncation needs an odd dim");
    }
    let p = &cfg.potential;
    let need_k_vk = matches!(
        cfg.model,
        Model::HarmonicUniversal | Model::PerturbedTransporter | Model::EffectiveFlowDecay | Model::MourreAudit
    );
    let need_toeplitz =
        matches!(cfg.model, Model::HarmonicTransporter | Model::NonResonantControl | Model::NormalFormAudit);
    if (need_k_vk || need_toeplitz) && cfg.model != Model::NonResonantControl {
        match p.k {
            None => err("potential.k", "missing"),
            Some(k) if k == 0 || k >= cfg.dim => err("potential.k", "must satisfy 0 < k < dim"),
            _ => {}
        }
    }
    if need_k_vk {
        match p.vk {
            None => err("potential.vk", "missing"),
            Some([re, im]) if re == 0.0 && im == 0.0 => err("potential.vk", "must be nonzero"),
            _ => {}
        }
    }
    if need_toeplitz {
        match cfg.toeplitz_spec() {
            None => err("potential.toeplitz", "missing"),
            Some(s) if !s.is_hermitian() => err("potential.toeplitz", "diagonals must satisfy V_{-d} = conj(V_d)"),
            Some(s) => {
                if let (Some(k), true) = (p.k, cfg.model != Model::NonResonantControl) {
                    if s.get(k as i64).norm() == 0.0 {
                        err("potential.toeplitz", "diagonal k must be nonzero");
                    }
                }
            }
        }
    }
    if cfg.model == Model::NonResonantControl {
        match p.omega {
            None => err("potential.omega", "missing"),
            Some(w) if !w.is_finite() || w <= 0.0 => err("potential.omega", "must be positive"),
            _ => {}
        }
    }
    if cfg.model == Model::HalfWaveTransporter {
        match (p.j, cfg.fourier_coeffs()) {
            (None, _) => err("potential.j", "missing"),
            (_, None) => err("potential.v", "missing"),
            (Some(j), Some(v)) => {
                if j == 0 {
                    err("potential.j", "must be nonzero");
                }
                if v.get(&j).is_none_or(|c| c.norm() == 0.0) {
                    err("potential.v", "coefficient v_j must be nonzero");
                }
                if v.iter().any(|(k, c)| v.get(&-k).is_none_or(|d| (d - c.conj()).norm() > 1e-12)) {
                    err("potential.v", "v must be real: v_{-j} = conj(v_j)");
                }
            }
        }
    }
    if cfg.model == Model::PerturbedTransporter {
        match &p.perturbation {
            None => err("potential.perturbation", "missing"),
            Some(w) => {
                if !(w.epsilon >= 0.0) {
                    err("potential.perturbation.epsilon", "must be non-negative");
                }
                if w.epsilon > w.guard {
                    err("potential.perturbation.epsilon", "exceeds the smallness guard");
                }
            }
        }
    }
    if cfg.model.evolves() {
        match &cfg.evolution {
            None => err("evolution", "missing"),
            Some(ev) => {
                if ev.validate().is_err() {
                    err("evolution", "need 0 < micro_dt <= dt <= t_end and unitarity_tol > 0");
                }
            }
        }
        if cfg.seed_mode.is_none() {
            err("seed_mode", "missing");
        }
        if cfg.r_values.is_empty() {
            err("r_values", "missing");
        }
    }
    let needs_window = cfg.model.certifies() || cfg.model == Model::EffectiveFlowDecay;
    match &cfg.window {
        None if needs_window => err("window", "missing"),
        Some(w) if w.window().is_err() => err("window", "need a < b and delta > 0"),
        _ => {}
    }
    if cfg.model == Model::NormalFormAudit {
        match cfg.normal_form {
            None => err("normal_form", "missing"),
            Some(nf) if !(1..=2).contains(&nf.steps) => err("normal_form.steps", "must be 1 or 2"),
            _ => {}
        }
    }
    if let (Some(fw), Some(ev)) = (cfg.fit_window(), &cfg.evolution) {
        if !(fw.0 > 0.0 && fw.0 < fw.1 && fw.1 <= ev.t_end + 1e-9) {
            err("fit", "window must satisfy 0 < t_min < t_max <= t_end");
        }
    }
    if let Some(ld) = &cfg.local_decay {
        if ld.ks.is_empty() || ld.samples < 10 || !(ld.t_min > 0.0 && ld.t_min < ld.t_max) {
            err("local_decay", "need ks, samples >= 10 and 0 < t_min < t_max");
        }
    }
    errs
}

/// Random hermitian band with entries `xi <d>^{-2}`, `|xi| <= 1`, from a seeded stream.
pub fn random_banded_hermitian(basis: &Arc<BasisModel>, band: usize, seed: u64) -> TruncatedOperator {
    let n = basis.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = faer::Mat::<C64>::zeros(n, n);
    for i in 0..n {
        for j in i..(i + band + 1).min(n) {
            let d = (j - i) as f64;
            let env = 1.0 / (1.0 + d * d);
            let r = rng.gen::<f64>().sqrt();
            let th = rng.gen::<f64>() * std::f64::consts::TAU;
            let xi = if i == j { C64::new(2.0 * rng.gen::<f64>() - 1.0, 0.0) } else { C64::from_polar(r, th) };
            m[(i, j)] = xi * env;
            m[(j, i)] = (xi * env).conj();
        }
    }
    TruncatedOperator::new(basis.clone(), m, 0.0).expect("shape")
}

/// The time-periodic potential of a scenario at truncation `dim`.
pub fn build_potential(cfg: &ScenarioConfig, dim: usize) -> Result<TimePeriodicOperator> {
    let basis = BasisModel::shared(cfg.model.kind(), dim)?;
    let missing = |f: &str| Error::Config(format!("potential.{f} missing"));
    match cfg.model {
        Model::HarmonicTransporter | Model::NormalFormAudit => {
            let t = toeplitz(&basis, &cfg.toeplitz_spec().ok_or_else(|| missing("toeplitz"))?)?;
            let k = cfg.potential.k.ok_or_else(|| missing("k"))?;
            Ok(TimePeriodicOperator::cos_drive(&t, k as f64))
        }
        Model::NonResonantControl => {
            let t = toeplitz(&basis, &cfg.toeplitz_spec().ok_or_else(|| missing("toeplitz"))?)?;
            Ok(TimePeriodicOperator::cos_drive(&t, cfg.potential.omega.ok_or_else(|| missing("omega"))?))
        }
        Model::HarmonicUniversal | Model::EffectiveFlowDecay | Model::MourreAudit | Model::PerturbedTransporter => {
            let k = cfg.potential.k.ok_or_else(|| missing("k"))?;
            let h0 = transporter_h0(&basis, k, cfg.vk().ok_or_else(|| missing("vk"))?)?;
            let mut v = TimePeriodicOperator::transported(&h0);
            if cfg.model == Model::PerturbedTransporter {
                let w = cfg.potential.perturbation.as_ref().ok_or_else(|| missing("perturbation"))?;
                let b = random_banded_hermitian(&basis, w.band, w.seed).scale(C64::new(w.epsilon, 0.0));
                v = v.add(&TimePeriodicOperator::cos_drive(&b, 1.0))?;
            }
            Ok(v)
        }
        Model::HalfWaveTransporter => {
            let j = cfg.potential.j.ok_or_else(|| missing("j"))?;
            let m = multiplication_op(&basis, &cfg.fourier_coeffs().ok_or_else(|| missing("v"))?)?;
            let mut v = TimePeriodicOperator::cos_drive(&m, j as f64);
            v.push(0.0, TruncatedOperator::identity(basis.clone()).scale(C64::new(-1.0, 0.0)))?;
            Ok(v)
        }
    }
}

/// The model whose average carries the commutator estimate: a perturbed
/// transporter is certified (and windowed) through its unperturbed part.
fn certified_part(cfg: &ScenarioConfig) -> ScenarioConfig {
    let mut c = cfg.clone();
    if c.model == Model::PerturbedTransporter {
        c.model = Model::HarmonicUniversal;
        c.potential.perturbation = None;
    }
    c
}

/// Conjugate operator matching the scenario's effective Hamiltonian.
pub fn build_conjugate(cfg: &ScenarioConfig, basis: &Arc<BasisModel>) -> Result<TruncatedOperator> {
    match cfg.model {
        Model::HalfWaveTransporter => {
            let j = cfg.potential.j.unwrap_or(1);
            let vj = cfg.fourier_coeffs().and_then(|v| v.get(&j).copied()).unwrap_or_default();
            conjugate_operator_halfwave(basis, vj, j)
        }
        Model::HarmonicTransporter => {
            let k = cfg.potential.k.unwrap_or(1);
            let vk = cfg.toeplitz_spec().map(|s| s.get(k as i64)).unwrap_or_default();
            conjugate_operator_harmonic(basis, k, vk)
        }
        _ => conjugate_operator_harmonic(basis, cfg.potential.k.unwrap_or(1), cfg.vk().unwrap_or_default()),
    }
}

fn conjugate_band(cfg: &ScenarioConfig, basis: &BasisModel) -> crate::operator::Banded {
    match cfg.model {
        Model::HalfWaveTransporter => {
            let j = cfg.potential.j.unwrap_or(1);
            let vj = cfg.fourier_coeffs().and_then(|v| v.get(&j).copied()).unwrap_or_default();
            conjugate_band_halfwave(basis, vj, j)
        }
        Model::HarmonicTransporter => {
            let k = cfg.potential.k.unwrap_or(1);
            let vk = cfg.toeplitz_spec().map(|s| s.get(k as i64)).unwrap_or_default();
            conjugate_band_harmonic(basis.dim(), k, vk)
        }
        _ => conjugate_band_harmonic(basis.dim(), cfg.potential.k.unwrap_or(1), cfg.vk().unwrap_or_default()),
    }
}

fn shift_degree(cfg: &ScenarioConfig) -> usize {
    match cfg.model {
        Model::HalfWaveTransporter => cfg.potential.j.unwrap_or(1).unsigned_abs() as usize,
        _ => cfg.potential.k.unwrap_or(1),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub spec: CheckSpec,
    pub fitted_exponent: Option<f64>,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct FitsFile {
    pub fit_window: (f64, f64),
    pub fit_window_rule: String,
    pub fits: Vec<FitReport>,
    pub duality_margin: BTreeMap<String, f64>,
    pub l2_drift: f64,
    pub max_boundary_mass: f64,
    pub local_decay: Vec<LocalDecayReport>,
    pub checks: Vec<CheckResult>,
}

/// Everything a run produced, before or after writing.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub config: ScenarioConfig,
    pub out_dir: PathBuf,
    pub trace: Option<NormTrace>,
    pub fits: Option<FitsFile>,
    pub mourre: Option<MourreReport>,
    pub normal_form: Option<NormalFormSummary>,
    pub datum_projection: Option<f64>,
    pub effective_avg_max: f64,
    pub ops: Vec<(String, TruncatedOperator)>,
}

impl RunOutcome {
    pub fn checks_passed(&self) -> bool {
        self.fits.as_ref().is_none_or(|f| f.checks.iter().all(|c| c.passed))
    }

    /// 0 when every configured check passes, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.checks_passed() {
            0
        } else {
            3
        }
    }

    pub fn fit(&self, r: f64) -> Option<&FitReport> {
        self.fits.as_ref()?.fits.iter().find(|f| f.r == r)
    }
}

/// Options for [`run_in_memory`].
#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub skip_mourre: bool,
}

/// Runs the pipeline without touching the disk.
pub fn run_in_memory(cfg: &ScenarioConfig, opts: RunOptions) -> Result<RunOutcome> {
    let errs = validate(cfg);
    if !errs.is_empty() {
        let msg = errs.iter().map(|e| format!("{}: {}", e.field, e.message)).collect::<Vec<_>>().join("; ");
        return Err(Error::Config(msg).at("validate"));
    }
    let mut out = RunOutcome {
        config: cfg.clone(),
        out_dir: cfg.output_dir.join(&cfg.name),
        trace: None,
        fits: None,
        mourre: None,
        normal_form: None,
        datum_projection: None,
        effective_avg_max: 0.0,
        ops: Vec::new(),
    };

    if cfg.model == Model::NormalFormAudit {
        let v = build_potential(cfg, cfg.dim).map_err(|e| e.at("build"))?;
        let nf = cfg.normal_form.expect("validated");
        let res = normal_form_with(&v, nf.steps, nf.samples.unwrap_or(crate::normal_form::DEFAULT_SAMPLES))
            .map_err(|e| e.at("normal_form"))?;
        out.effective_avg_max = res.effective_h.norm_max();
        out.ops.push(("effective_h".into(), res.effective_h.clone()));
        out.ops.push(("t_n".into(), res.t_n.clone()));
        out.normal_form = Some(res.summary);
        return Ok(out);
    }

    let window = cfg.window.map(|w| w.window()).transpose().map_err(|e| e.at("window"))?;

    let mut certificate = None;
    if cfg.model.certifies() && !opts.skip_mourre {
        let mdim = cfg.mourre_dim();
        let vm = build_potential(&certified_part(cfg), mdim).map_err(|e| e.at("mourre"))?;
        let hm = resonant_avg(&vm);
        let am = build_conjugate(cfg, &hm.basis).map_err(|e| e.at("mourre"))?;
        let deg = shift_degree(cfg);
        let mut mo = MourreOptions::for_degree(deg);
        if let Some(p) = cfg.mourre {
            mo.edge_width = p.edge_width.unwrap_or(mo.edge_width);
            mo.compact_rank = p.compact_rank.unwrap_or(mo.compact_rank);
        }
        let rep = mourre_check(&hm, &am, window.as_ref().expect("validated"), &mo).map_err(|e| e.at("mourre"))?;
        out.ops.push(("effective_h".into(), hm));
        out.ops.push(("conjugate_a".into(), am));
        if !rep.passed {
            out.mourre = Some(rep.clone());
            return Err(Error::Uncertified(format!(
                "no strict estimate on {:?} (theta {:.3e}, strict {:.3e})",
                rep.strict_window, rep.theta, rep.theta_strict
            ))
            .at("mourre"));
        }
        certificate = Some(rep.clone());
        out.mourre = Some(rep);
    }
    if cfg.model == Model::MourreAudit {
        return Ok(out);
    }

    let v = build_potential(cfg, cfg.dim).map_err(|e| e.at("build"))?;
    let basis = v.basis.clone();
    let effective = resonant_avg(&v);
    out.effective_avg_max = effective.norm_max();

    let seed = StateVector::basis_vector(basis.clone(), cfg.seed_mode.expect("validated")).map_err(|e| e.at("datum"))?;
    let datum = match &window {
        Some(w) => {
            let d = if cfg.model == Model::PerturbedTransporter {
                let h0 = resonant_avg(&build_potential(&certified_part(cfg), cfg.dim).map_err(|e| e.at("datum"))?);
                cascade_initial_datum(&h0, w, &seed)
            } else {
                cascade_initial_datum(&effective, w, &seed)
            }
            .map_err(|e| e.at("datum"))?;
            out.datum_projection = Some(d.projection);
            d.state
        }
        None => seed.clone(),
    };

    let ev = cfg.evolution.as_ref().expect("validated");
    let trace = if cfg.model == Model::EffectiveFlowDecay {
        let times = ev.output_times();
        let states = evolve_static(&effective, &datum, &times).map_err(|e| e.at("evolve"))?;
        let mut tr = NormTrace::new(&cfg.r_values);
        for (t, s) in times.iter().zip(&states) {
            tr.record_state(*t, s);
        }
        tr
    } else {
        evolve_periodic(&v, &datum, ev, &cfg.r_values).map_err(|e| e.at("evolve"))?.trace
    };
    drop(v);

    let fw = cfg.fit_window().expect("validated");
    let mut fits = Vec::new();
    for &r in &cfg.r_values {
        if r == 0.0 {
            continue;
        }
        let col = trace.norm(r).expect("recorded");
        fits.push(fit_power_law(&trace.times, col, fw, r).map_err(|e| e.at("fit"))?);
    }
    let mut duality = BTreeMap::new();
    for &r in &cfg.r_values {
        if r > 0.0 {
            if let Some(m) = duality_margin(&trace, r) {
                duality.insert(format!("{r}"), m);
            }
        }
    }

    let mut local = Vec::new();
    if let (Some(ld), Some(cert), Some(w)) = (&cfg.local_decay, &certificate, &window) {
        let h = effective.to_banded();
        let a = conjugate_band(cfg, &basis);
        let times: Vec<f64> = (0..ld.samples)
            .map(|i| ld.t_min + (ld.t_max - ld.t_min) * i as f64 / (ld.samples - 1) as f64)
            .collect();
        for &k in &ld.ks {
            local.push(
                local_energy_decay_check(&h, &a, cert, w, &seed.coeffs, k, &times).map_err(|e| e.at("local_decay"))?,
            );
        }
    }

    let checks = cfg
        .checks
        .iter()
        .map(|c| {
            let f = fits.iter().find(|f| f.r == c.r).map(|f| f.fitted_exponent);
            let passed = f.is_some_and(|x| c.min.is_none_or(|m| x >= m) && c.max.is_none_or(|m| x <= m));
            CheckResult { spec: *c, fitted_exponent: f, passed }
        })
        .collect();
    let f = cfg.fit.unwrap_or_default();
    out.fits = Some(FitsFile {
        fit_window: fw,
        fit_window_rule: if f.t_min.is_some() { "configured".into() } else { "t_min = 0.1 t_end".into() },
        fits,
        duality_margin: duality,
        l2_drift: trace.max_l2_drift(),
        max_boundary_mass: trace.max_boundary_mass(),
        local_decay: local,
        checks,
    });
    out.trace = Some(trace);
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
struct Manifest<'a> {
    package: &'static str,
    version: &'static str,
    config: &'a ScenarioConfig,
    basis: BasisKind,
    mourre_dim: Option<usize>,
    fit_window: Option<(f64, f64)>,
    bootstrap: serde_json::Value,
    tolerances: serde_json::Value,
    datum_projection: Option<f64>,
    perturbation_seed: Option<u64>,
    normal_form_composition: Option<String>,
    outputs: Vec<String>,
}

/// Runs a scenario and writes `trace.csv`, `mourre.json`, `fits.json`,
/// `manifest.json` and `ops/*.mat` under `<output_dir>/<name>/`.
pub fn run(cfg: &ScenarioConfig) -> Result<RunOutcome> {
    let result = run_in_memory(cfg, RunOptions::default());
    let dir = cfg.output_dir.join(&cfg.name);
    std::fs::create_dir_all(dir.join("ops"))?;
    let out = result?;
    let mut outputs = Vec::new();
    if let Some(tr) = &out.trace {
        tr.save(&dir.join("trace.csv"))?;
        outputs.push("trace.csv".to_string());
    }
    if let Some(m) = &out.mourre {
        std::fs::write(dir.join("mourre.json"), serde_json::to_string_pretty(m)?)?;
        outputs.push("mourre.json".into());
    }
    if let Some(f) = &out.fits {
        std::fs::write(dir.join("fits.json"), serde_json::to_string_pretty(f)?)?;
        outputs.push("fits.json".into());
    }
    if let Some(nf) = &out.normal_form {
        std::fs::write(dir.join("normal_form.json"), serde_json::to_string_pretty(nf)?)?;
        outputs.push("normal_form.json".into());
    }
    for (name, op) in &out.ops {
        save_operator(op, &dir.join("ops").join(format!("{name}.mat")))?;
        outputs.push(format!("ops/{name}.mat"));
    }
    let manifest = Manifest {
        package: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        basis: cfg.model.kind(),
        mourre_dim: cfg.model.certifies().then(|| cfg.mourre_dim()),
        fit_window: cfg.fit_window(),
        bootstrap: serde_json::json!({
            "resamples": crate::diagnostics::BOOTSTRAP_RESAMPLES,
            "block": crate::diagnostics::BOOTSTRAP_BLOCK,
            "seed": crate::diagnostics::BOOTSTRAP_SEED,
        }),
        tolerances: serde_json::json!({
            "resonance": crate::resonant::RESONANCE_TOL,
            "hermitian": crate::operator::HERMITIAN_TOL,
            "unitarity": cfg.evolution.as_ref().map(|e| e.unitarity_tol),
            "boundary_mass": cfg.evolution.as_ref().map(|e| e.boundary_tol),
            "perturbation_guard": cfg.potential.perturbation.as_ref().map(|p| p.guard),
        }),
        datum_projection: out.datum_projection,
        perturbation_seed: cfg.potential.perturbation.as_ref().map(|p| p.seed),
        normal_form_composition: out.normal_form.as_ref().map(|n| n.composition.clone()),
        outputs,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(RunOutcome { out_dir: dir, ..out })
}

/// Reruns `cfg` at each of `dims` and compares the traces.
pub fn truncation_convergence(cfg: &ScenarioConfig, dims: &[usize]) -> Result<ConvergenceReport> {
    let mut traces = Vec::new();
    for &d in dims {
        let mut c = cfg.clone();
        c.dim = d;
        c.checks.clear();
        let o = run_in_memory(&c, RunOptions { skip_mourre: true })?;
        traces.push(o.trace.ok_or_else(|| Error::InvalidArgument("scenario has no trace".into()))?);
    }
    compare_traces(dims, &traces)
}
