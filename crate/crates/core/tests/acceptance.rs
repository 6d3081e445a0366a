//! Acceptance criteria 1-14. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use cascade_core::diagnostics::{entry_decay_exponent, local_energy_decay_check, log_log_slope};
use cascade_core::mourre::{
    conjugate_band_harmonic, conjugate_operator_harmonic, mourre_check, transporter_band, transporter_h0,
    weyl_residual, MourreOptions, SpectralWindow,
};
use cascade_core::normal_form::{homological_residual, normal_form_with, solve_homological};
use cascade_core::operator::{commutator, multiplication_op, order_diagnostic, real_part_coeffs, toeplitz};
use cascade_core::resonant::{quadrature_avg, resonant_avg};
use cascade_core::scenarios::{self, RunOptions, RunOutcome, ScenarioConfig};
use cascade_core::{BasisKind, BasisModel, StateVector, TimePeriodicOperator, ToeplitzSpec, TruncatedOperator, C64};

const TAU: f64 = std::f64::consts::TAU;

type Outcome = Result<(bool, String), String>;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn harmonic(n: usize) -> Arc<BasisModel> {
    BasisModel::shared(BasisKind::Harmonic, n).unwrap()
}

fn scenario(file: &str, out: &Path) -> ScenarioConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(file);
    let mut cfg = ScenarioConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    cfg.output_dir = out.to_path_buf();
    cfg
}

fn exponent(out: &RunOutcome, r: f64) -> Result<f64, String> {
    out.fit(r).map(|f| f.fitted_exponent).ok_or_else(|| format!("no fit for r={r}"))
}

fn smooth_toeplitz(b: &Arc<BasisModel>, scale: f64) -> TruncatedOperator {
    let mut d = vec![(0, c(0.2 * scale, 0.0))];
    for k in 1..5_i64 {
        let v = c(scale / (k * k) as f64, 0.3 * scale / (k * k * k) as f64);
        d.push((k, v));
        d.push((-k, v.conj()));
    }
    toeplitz(b, &ToeplitzSpec::new(d)).unwrap()
}

fn in_range(x: f64, lo: f64, hi: f64) -> bool {
    x >= lo && x <= hi
}

// 1
fn resonant_vs_quadrature() -> Outcome {
    let b = harmonic(128);
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    let s = toeplitz(&b, &ToeplitzSpec::new([(1, c(1.0, 0.0)), (-1, c(1.0, 0.0))])).unwrap();
    for v in [TimePeriodicOperator::cos_drive(&s, 1.0), TimePeriodicOperator::cos_drive(&smooth_toeplitz(&b, 1.0), 1.0)] {
        let exact = resonant_avg(&v);
        let q = quadrature_avg(&v, 0.0, 64).map_err(|e| e.to_string())?;
        if q.aliased {
            return Ok((false, "quadrature aliased".into()));
        }
        worst = worst.max(q.op.sub(&exact).unwrap().norm_max());
    }
    let secs = t0.elapsed().as_secs_f64();
    Ok((worst <= 1e-10 && secs < 1.0, format!("max diff {worst:.2e} (<= 1e-10), {secs:.3} s (< 1 s)")))
}

// 2
fn toeplitz_average_closed_form() -> Outcome {
    let b = harmonic(256);
    let mut d = Vec::new();
    for m in 1..6_i64 {
        let v = c(1.0 / m as f64, 0.5 / (m * m) as f64);
        d.push((m, v));
        d.push((-m, v.conj()));
    }
    let spec = ToeplitzSpec::new(d);
    let mut worst: f64 = 0.0;
    for k in 1..=3_i64 {
        let v = TimePeriodicOperator::cos_drive(&toeplitz(&b, &spec).unwrap(), k as f64);
        let avg = resonant_avg(&v);
        let want = toeplitz(&b, &ToeplitzSpec::new([(k, spec.get(k) * 0.5), (-k, spec.get(-k) * 0.5)])).unwrap();
        worst = worst.max(avg.interior_diff(&want, 2 * k as usize));
    }
    let tol = 4.0 * f64::EPSILON;
    Ok((worst <= tol, format!("max interior diff {worst:.2e} over k=1,2,3 (<= {tol:.1e})")))
}

// 3
fn commutator_identity() -> Outcome {
    let n = 256;
    let b = harmonic(n);
    let mut worst: f64 = 0.0;
    for k in [1usize, 2] {
        for vk in [c(2.0, 0.0), c(0.6, -1.1)] {
            let h = transporter_h0(&b, k, vk).unwrap();
            let a = conjugate_operator_harmonic(&b, k, vk).unwrap();
            let lhs = commutator(&h, &a).unwrap().scale(c(0.0, 1.0));
            let v2 = vk.norm_sqr();
            let id = TruncatedOperator::identity(b.clone());
            let k0 = TruncatedOperator::k0(b.clone());
            let low: Vec<f64> = (0..n).map(|i| if i < k { 1.0 } else { 0.0 }).collect();
            let pi_k = TruncatedOperator::diagonal(b.clone(), &low, 0.0);
            let shift = k0.add(&id.scale(c(0.5 - k as f64, 0.0))).unwrap();
            let rhs = id
                .scale(c(v2, 0.0))
                .sub(&h.matmul(&h).unwrap())
                .unwrap()
                .scale(c(4.0 * k as f64, 0.0))
                .add(&shift.matmul(&pi_k).unwrap().scale(c(2.0 * v2, 0.0)))
                .unwrap();
            worst = worst.max(lhs.interior_diff(&rhs, 2 * k));
        }
    }
    Ok((worst <= 1e-10, format!("max interior defect {worst:.2e} for k=1,2 (<= 1e-10)")))
}

// 4
fn mourre_across_truncations() -> Outcome {
    let w = SpectralWindow::with_default_flank(-0.5, 0.5).map_err(|e| e.to_string())?;
    let mut th = Vec::new();
    for n in [128, 256, 512] {
        let b = harmonic(n);
        let h = transporter_h0(&b, 1, c(2.0, 0.0)).unwrap();
        let a = conjugate_operator_harmonic(&b, 1, c(2.0, 0.0)).unwrap();
        let rep = mourre_check(&h, &a, &w, &MourreOptions::for_degree(1)).map_err(|e| e.to_string())?;
        th.push(if rep.passed && !rep.vacuous { rep.theta_strict } else { 0.0 });
    }
    let hi = th.iter().copied().fold(f64::MIN, f64::max);
    let lo = th.iter().copied().fold(f64::MAX, f64::min);
    let spread = (hi - lo) / hi;
    Ok((lo > 0.0 && spread <= 0.05, format!("theta' {th:.4?} at N=128,256,512, spread {:.2}% (<= 5%)", 100.0 * spread)))
}

// 5
fn weyl_slope() -> Outcome {
    let b = harmonic(4096);
    let ns: Vec<usize> = (6..=11).map(|p| 1 << p).collect();
    let res = ns.iter().map(|&n| weyl_residual(&b, 1, c(2.0, 0.0), 0.7, n)).collect::<Result<Vec<_>, _>>();
    let res = res.map_err(|e| e.to_string())?;
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let slope = log_log_slope(&xs, &res);
    Ok((in_range(slope, -0.55, -0.45), format!("slope {slope:.4} for n=64..2048 (-0.5 +- 0.05)")))
}

// 6
fn effective_flow_decay(dir: &Path) -> Outcome {
    let mut cfg = scenario("effective_decay.toml", dir);
    cfg.local_decay = None;
    let t0 = Instant::now();
    let out = scenarios::run_in_memory(&cfg, RunOptions::default()).map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();
    let r1 = exponent(&out, -1.0)?;
    let r2 = exponent(&out, -2.0)?;
    let fits = out.fits.as_ref().unwrap();
    let margin = fits.duality_margin.values().copied().fold(f64::INFINITY, f64::min);
    let ok = in_range(r1, -1.15, -0.7) && in_range(r2, -2.3, -1.5) && margin >= -1e-8 && secs < 120.0;
    Ok((
        ok,
        format!(
            "N=4096 fit [{}, {}]: r=-1 {r1:.3}, r=-2 {r2:.3}, duality margin {margin:.2e}, {secs:.1} s (< 120 s)",
            fits.fit_window.0, fits.fit_window.1
        ),
    ))
}

// 7
fn local_energy_decay() -> Outcome {
    let vk = c(2.0, 0.0);
    let w = SpectralWindow::new(-0.5, 0.5, 1.3).map_err(|e| e.to_string())?;
    let small = harmonic(512);
    let cert = mourre_check(
        &transporter_h0(&small, 1, vk).unwrap(),
        &conjugate_operator_harmonic(&small, 1, vk).unwrap(),
        &w,
        &MourreOptions::for_degree(1),
    )
    .map_err(|e| e.to_string())?;
    let times: Vec<f64> = (0..60).map(|i| 10.0 + 290.0 * i as f64 / 59.0).collect();
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, n) in [(1usize, 4096usize), (2, 8192)] {
        let b = harmonic(n);
        let phi = StateVector::basis_vector(b, 1).unwrap();
        let rep = local_energy_decay_check(
            &transporter_band(n, 1, vk),
            &conjugate_band_harmonic(n, 1, vk),
            &cert,
            &w,
            &phi.coeffs,
            k,
            &times,
        )
        .map_err(|e| e.to_string())?;
        let e = rep.fit.as_ref().map_or(f64::NAN, |f| f.fitted_exponent);
        ok &= rep.passed && !rep.vacuous && e <= -(k as f64) + 0.3;
        parts.push(format!("k={k} N={n}: exponent {e:.3} (<= {:.1})", -(k as f64) + 0.3));
    }
    Ok((ok, format!("{}; certificate N=512 theta' {:.3}", parts.join(", "), cert.theta_strict)))
}

// 8
fn harmonic_universal(dir: &Path) -> Result<(bool, String, Option<Vec<u8>>), String> {
    let cfg = scenario("harmonic_universal.toml", dir);
    let t0 = Instant::now();
    let out = scenarios::run(&cfg).map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();
    let r1 = exponent(&out, 1.0)?;
    let r2 = exponent(&out, 2.0)?;
    let fits = out.fits.as_ref().unwrap();
    let ok = in_range(r1, 0.85, 1.15)
        && in_range(r2, 1.75, 2.25)
        && fits.l2_drift <= 1e-8
        && fits.max_boundary_mass <= 1e-6
        && secs < 300.0;
    let csv = std::fs::read(out.out_dir.join("trace.csv")).ok();
    Ok((
        ok,
        format!(
            "N=2048: r=1 {r1:.3}, r=2 {r2:.3}, l2 drift {:.1e}, boundary mass {:.1e}, {secs:.1} s (< 300 s)",
            fits.l2_drift, fits.max_boundary_mass
        ),
        csv,
    ))
}

// 9
fn harmonic_transporter(dir: &Path) -> Outcome {
    let out = scenarios::run_in_memory(&scenario("harmonic_transporter.toml", dir), RunOptions::default())
        .map_err(|e| e.to_string())?;
    let r1 = exponent(&out, 1.0)?;
    Ok((in_range(r1, 0.8, 1.2), format!("N=2048: r=1 {r1:.3} (1 +- 0.2)")))
}

// 10
fn halfwave(dir: &Path) -> Outcome {
    let cfg = scenario("halfwave.toml", dir);
    let out = scenarios::run_in_memory(&cfg, RunOptions::default()).map_err(|e| e.to_string())?;
    let r1 = exponent(&out, 1.0)?;
    // <V> - (v~ - 1) for j = 1 at the scenario size and j = 2 on a smaller one
    let mut decays = Vec::new();
    for (j, n) in [(1_i64, cfg.dim), (2, 257)] {
        let b = BasisModel::shared(BasisKind::HalfWave, n).unwrap();
        let vj = c(1.0, 0.0);
        let coeffs = [(j, vj), (-j, vj.conj())].into_iter().collect();
        let mut v = TimePeriodicOperator::cos_drive(&multiplication_op(&b, &coeffs).unwrap(), j as f64);
        v.push(0.0, TruncatedOperator::identity(b.clone()).scale(c(-1.0, 0.0))).unwrap();
        let vt = multiplication_op(&b, &real_part_coeffs(vj, j)).unwrap();
        let want = vt.sub(&TruncatedOperator::identity(b.clone())).unwrap();
        let r = resonant_avg(&v).sub(&want).unwrap();
        decays.push((j, entry_decay_exponent(&r), r.norm_max()));
    }
    let ok = in_range(r1, 0.8, 1.2) && decays.iter().all(|d| d.1 >= 1.0);
    let desc: Vec<String> =
        decays.iter().map(|(j, e, m)| format!("j={j} remainder exponent {e} (max entry {m:.2e})")).collect();
    Ok((ok, format!("N={}: r=1 {r1:.3} (1 +- 0.2); {} (>= 1)", cfg.dim, desc.join(", "))))
}

// 11
fn perturbed(dir: &Path) -> Outcome {
    let base = scenario("perturbed.toml", dir);
    let results: Vec<Result<f64, String>> = std::thread::scope(|s| {
        let handles: Vec<_> = (1..=5_u64)
            .map(|seed| {
                let mut cfg = base.clone();
                cfg.name = format!("perturbed_{seed}");
                cfg.potential.perturbation.as_mut().unwrap().seed = seed;
                s.spawn(move || {
                    let out = scenarios::run_in_memory(&cfg, RunOptions::default()).map_err(|e| e.to_string())?;
                    exponent(&out, 1.0)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let rs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let ok = rs.iter().all(|&r| r >= 0.8);
    Ok((ok, format!("seeds 1..5 r=1 {rs:.3?} (>= 0.8)")))
}

// 12
fn nonresonant(dir: &Path) -> Outcome {
    let out = scenarios::run_in_memory(&scenario("nonresonant.toml", dir), RunOptions::default())
        .map_err(|e| e.to_string())?;
    let r1 = exponent(&out, 1.0)?;
    let avg = out.effective_avg_max;
    Ok((avg == 0.0 && r1 <= 0.15, format!("max |<V>| {avg:e} (== 0), r=1 {r1:.3} (<= 0.15)")))
}

// 13
fn normal_form_audit() -> Outcome {
    let b = harmonic(64);
    let v = TimePeriodicOperator::cos_drive(&smooth_toeplitz(&b, 1.0), 1.0);
    let x = solve_homological(&v).map_err(|e| e.to_string())?;
    let res = [0.0, 0.8, 2.5, 5.0].iter().map(|&t| homological_residual(&v, &x, t, 1e-4)).fold(0.0, f64::max);
    let period = x.eval(TAU).sub(&x.eval(0.0)).unwrap().norm_max();
    let nf1 = normal_form_with(&v, 1, 64).map_err(|e| e.to_string())?;
    let q = quadrature_avg(&v, 0.0, 64).map_err(|e| e.to_string())?;
    let t1 = nf1.t_n.norm_max().max(nf1.effective_h.sub(&q.op).unwrap().norm_max());
    let mut herm: f64 = 0.0;
    let mut consts = Vec::new();
    for n in [32, 64, 128] {
        let b = harmonic(n);
        let v = TimePeriodicOperator::cos_drive(&smooth_toeplitz(&b, 0.5), 1.0);
        let nf = normal_form_with(&v, 2, 64).map_err(|e| e.to_string())?;
        herm = herm.max(nf.t_n.hermitian_defect() / nf.t_n.norm_max().max(f64::MIN_POSITIVE));
        consts.push(order_diagnostic(&nf.t_n, -1.0).map_err(|e| e.to_string())?);
    }
    let bounded = consts.iter().all(|c| c.is_finite()) && consts[2] <= 1.5 * consts[0];
    let ok = res <= 1e-6 && period <= 1e-10 && t1 <= 1e-10 && herm <= 1e-10 && bounded;
    Ok((
        ok,
        format!(
            "N=1: residual {res:.1e} (<= 1e-6), |X(2pi)-X(0)| {period:.1e}, |T1| {t1:.1e} (<= 1e-10); \
             N=2: relative hermitian defect {herm:.1e}, order -1 constants {consts:.4?} at 32,64,128"
        ),
    ))
}

// 14
fn determinism(dir: &Path, first: Option<Vec<u8>>) -> Outcome {
    let first = first.ok_or("criterion 8 produced no trace")?;
    let cfg = scenario("harmonic_universal.toml", dir);
    let out = scenarios::run(&cfg).map_err(|e| e.to_string())?;
    let second = std::fs::read(out.out_dir.join("trace.csv")).map_err(|e| e.to_string())?;
    Ok((first == second, format!("trace.csv {} bytes, identical: {}", second.len(), first == second)))
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("tempdir");
    let dir = |s: &str| {
        let d = tmp.path().join(s);
        std::fs::create_dir_all(&d).unwrap();
        d
    };
    let mut failed = 0;
    let mut report = |id: usize, name: &str, o: Outcome| {
        let (ok, msg) = o.unwrap_or_else(|e| (false, format!("error: {e}")));
        if !ok {
            failed += 1;
        }
        println!("criterion {id:>2} {}  {name}: {msg}", if ok { "PASS" } else { "FAIL" });
    };

    report(1, "resonant average vs quadrature", resonant_vs_quadrature());
    report(2, "driven Toeplitz average", toeplitz_average_closed_form());
    report(3, "commutator identity", commutator_identity());
    report(4, "strict Mourre estimate across N", mourre_across_truncations());
    report(5, "Weyl sequence residual", weyl_slope());
    report(6, "effective flow negative-norm decay", effective_flow_decay(&dir("c6")));
    report(7, "local energy decay", local_energy_decay());
    let (c8, trace) = match harmonic_universal(&dir("c8")) {
        Ok((ok, msg, csv)) => (Ok((ok, msg)), csv),
        Err(e) => (Err(e), None),
    };
    report(8, "harmonic universal growth", c8);
    report(9, "harmonic transporter growth", harmonic_transporter(&dir("c9")));
    report(10, "half-wave transporter", halfwave(&dir("c10")));
    report(11, "perturbed transporter", perturbed(&dir("c11")));
    report(12, "non-resonant control", nonresonant(&dir("c12")));
    report(13, "normal form audit", normal_form_audit());
    report(14, "determinism", determinism(&dir("c14"), trace));

    if failed == 0 {
        println!("acceptance: all 14 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
