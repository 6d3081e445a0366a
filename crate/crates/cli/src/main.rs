use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use cascade_core::diagnostics::log_log_slope;
use cascade_core::io::{load_operator, save_operator};
use cascade_core::mourre::{mourre_check, weyl_energy, weyl_residual, MourreOptions, SpectralWindow};
use cascade_core::resonant::{quadrature_avg, resonant_avg};
use cascade_core::scenarios::{self, ScenarioConfig};
use cascade_core::{BasisKind, BasisModel, TimePeriodicOperator, C64};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

/// Exit status for a stage failure.
const EXIT_STAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "cascade", version, about = "Energy-cascade experiments for time-periodic Schrodinger operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more scenario configs.
    Run {
        configs: Vec<PathBuf>,
        /// Configs run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Overrides `output_dir` from the configs.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Check a config without computing anything.
    Validate { config: PathBuf },
    /// Resonant average of a driven operator file.
    Average {
        op: PathBuf,
        /// `cos:<omega>` for `cos(omega t) V`, or `transport` for `exp(-itK0) V exp(itK0)`.
        drive: String,
        /// Also compare against the trapezoid rule with this many nodes.
        #[arg(long)]
        quadrature: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Windowed commutator positivity for operator files.
    Mourre {
        h: PathBuf,
        a: PathBuf,
        /// `a,b` or `a,b,delta`.
        #[arg(allow_hyphen_values = true)]
        window: String,
        /// Shift degree used for the default edge width and compact rank.
        #[arg(long, default_value_t = 1)]
        degree: usize,
    },
    /// Weyl-sequence residuals for `1/2 (V_k S^k + h.c.)`.
    Weyl {
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// `re,im`.
        #[arg(long, default_value = "2,0")]
        vk: String,
        #[arg(long, default_value_t = 0.7)]
        rho: f64,
        #[arg(long, default_value_t = 4096)]
        dim: usize,
        #[arg(long, value_delimiter = ',', default_value = "64,128,256,512,1024,2048")]
        ns: Vec<usize>,
    },
    /// Rerun a scenario at several truncations and compare the traces.
    Converge {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
    },
}

fn parse_floats(s: &str) -> anyhow::Result<Vec<f64>> {
    s.split(',').map(|x| x.trim().parse::<f64>().with_context(|| format!("bad number {x:?}"))).collect()
}

fn run_configs(configs: &[PathBuf], jobs: usize, output_dir: Option<&PathBuf>) -> anyhow::Result<u8> {
    let loaded = configs
        .iter()
        .map(|p| {
            let mut c = ScenarioConfig::load(p).with_context(|| format!("loading {}", p.display()))?;
            if let Some(d) = output_dir {
                c.output_dir = d.clone();
            }
            Ok(c)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    let codes: Vec<u8> = pool.install(|| {
        loaded
            .par_iter()
            .map(|cfg| match scenarios::run(cfg) {
                Ok(out) => {
                    let mut line = format!("{}: ", cfg.name);
                    if let Some(f) = &out.fits {
                        for fit in &f.fits {
                            line += &format!("r={} exponent {:.3} +- {:.3}; ", fit.r, fit.fitted_exponent, fit.ci_halfwidth);
                        }
                        for c in f.checks.iter().filter(|c| !c.passed) {
                            line += &format!("check r={} failed ({:?}); ", c.spec.r, c.fitted_exponent);
                        }
                    }
                    if let Some(m) = &out.mourre {
                        line += &format!("theta' {:.4}; ", m.theta_strict);
                    }
                    println!("{line}-> {}", out.out_dir.display());
                    out.exit_code() as u8
                }
                Err(e) => {
                    eprintln!("{}: {e}", cfg.name);
                    EXIT_STAGE
                }
            })
            .collect()
    });
    Ok(codes.into_iter().max().unwrap_or(0))
}

fn average(op: &PathBuf, drive: &str, quadrature: Option<usize>, out: Option<&PathBuf>) -> anyhow::Result<u8> {
    let op = load_operator(op)?;
    let v = if drive == "transport" {
        TimePeriodicOperator::transported(&op)
    } else if let Some(w) = drive.strip_prefix("cos:") {
        TimePeriodicOperator::cos_drive(&op, w.parse().context("drive frequency")?)
    } else {
        bail!("drive must be cos:<omega> or transport");
    };
    let avg = resonant_avg(&v);
    let mut report = serde_json::json!({ "dim": avg.dim(), "max_entry": avg.norm_max(), "hermitian": avg.hermitian });
    if let Some(n) = quadrature {
        let q = quadrature_avg(&v, 0.0, n)?;
        report["quadrature"] = serde_json::json!({
            "n_steps": n,
            "difference": q.op.sub(&avg)?.norm_max(),
            "bandwidth": q.bandwidth,
            "aliased": q.aliased,
        });
    }
    if let Some(p) = out {
        save_operator(&avg, p)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(0)
}

fn mourre(h: &PathBuf, a: &PathBuf, window: &str, degree: usize) -> anyhow::Result<u8> {
    let h = load_operator(h)?;
    let a = load_operator(a)?;
    let w = match parse_floats(window)?.as_slice() {
        [a, b] => SpectralWindow::with_default_flank(*a, *b)?,
        [a, b, d] => SpectralWindow::new(*a, *b, *d)?,
        _ => bail!("window must be a,b or a,b,delta"),
    };
    let rep = mourre_check(&h, &a, &w, &MourreOptions::for_degree(degree))?;
    println!("{}", serde_json::to_string_pretty(&rep)?);
    Ok(if rep.passed { 0 } else { 3 })
}

fn weyl(k: usize, vk: &str, rho: f64, dim: usize, ns: &[usize]) -> anyhow::Result<u8> {
    let vk = match parse_floats(vk)?.as_slice() {
        [re, im] => C64::new(*re, *im),
        _ => bail!("vk must be re,im"),
    };
    let basis = BasisModel::shared(BasisKind::Harmonic, dim)?;
    let res = ns.iter().map(|&n| weyl_residual(&basis, k, vk, rho, n)).collect::<Result<Vec<_>, _>>()?;
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let report = serde_json::json!({
        "energy": weyl_energy(k, vk, rho),
        "n": ns,
        "residual": res,
        "slope": log_log_slope(&xs, &res),
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(0)
}

fn converge(config: &PathBuf, dims: &[usize]) -> anyhow::Result<u8> {
    let cfg = ScenarioConfig::load(config)?;
    let rep = scenarios::truncation_convergence(&cfg, dims)?;
    println!("{}", serde_json::to_string_pretty(&rep)?);
    Ok(if rep.monotone && rep.converged { 0 } else { 3 })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { configs, jobs, output_dir } => {
            let jobs = std::env::var("CASCADE_THREADS").ok().and_then(|v| v.parse().ok()).unwrap_or(*jobs);
            run_configs(configs, jobs, output_dir.as_ref())
        }
        Command::Validate { config } => ScenarioConfig::load(config).map_err(Into::into).and_then(|cfg| {
            let errs = scenarios::validate(&cfg);
            println!("{}", serde_json::to_string_pretty(&errs)?);
            Ok(if errs.is_empty() { 0 } else { EXIT_STAGE })
        }),
        Command::Average { op, drive, quadrature, out } => average(op, drive, *quadrature, out.as_ref()),
        Command::Mourre { h, a, window, degree } => mourre(h, a, window, *degree),
        Command::Weyl { k, vk, rho, dim, ns } => weyl(*k, vk, *rho, *dim, ns),
        Command::Converge { config, dims } => converge(config, dims),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_STAGE)
        }
    }
}
