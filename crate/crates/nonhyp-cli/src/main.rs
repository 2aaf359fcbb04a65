use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use nonhyp::codes::{count_decodings, CodeBook, CodeError, PeriodicStream, Symbol};
use nonhyp::config::{ConfigError, FamilySpec, RunConfig};
use nonhyp::fiber::lyapunov_upper;
use nonhyp::pipeline::{run_with, Prior, RunReport, Stage, EXIT_ASSERTION, EXIT_CONFIG, EXIT_PASS};
use nonhyp::seed;

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error(transparent)]
    Code(#[from] CodeError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Code(_) => EXIT_ASSERTION as u8,
            _ => EXIT_CONFIG as u8,
        }
    }
}

#[derive(Parser)]
#[command(name = "nonhyp", version, about = "Nonhyperbolic measures of circle-fibered step skew products")]
struct Cli {
    /// Worker threads; NONHYP_THREADS takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the resolved configuration and stop.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Code utilities.
    Codes {
        #[command(subcommand)]
        command: CodesCommand,
    },
    /// Top Lyapunov exponent of the cocycle along uniform random sequences (CSV).
    Lyapunov {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1_000_000)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: Out,
    },
    /// Blending constants.
    Blending {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        delta: Option<f64>,
        #[command(flatten)]
        out: Out,
    },
    /// Skeleton and initial CIFS.
    Skeleton {
        /// Run configuration; defaults to the one recorded in the blending report.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        blending: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long = "epsE")]
        eps_e: Option<f64>,
        #[arg(long = "epsH")]
        eps_h: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: Out,
    },
    /// Repeat-and-tail cascade with roof and entropy checks.
    Cascade {
        #[arg(long)]
        w0: PathBuf,
        #[arg(long)]
        blending: Option<PathBuf>,
        /// Schedule, e.g. `4,4`.
        #[arg(long, value_delimiter = ',')]
        m: Option<Vec<usize>>,
        #[command(flatten)]
        out: Out,
    },
    /// Suspension statistics and large deviations of the roofs.
    Suspension {
        #[arg(long)]
        cascade: PathBuf,
        #[arg(long)]
        ld_eps: Option<f64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: Out,
    },
    /// Exponents, weak-star diagnostic and Birkhoff concentration.
    Measures {
        #[arg(long)]
        cascade: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::All)]
        mode: Mode,
        #[arg(long)]
        ell: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Per-orbit Birkhoff averages.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        out: Out,
    },
    /// Every stage.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: Out,
    },
}

#[derive(Subcommand)]
enum CodesCommand {
    /// Disjointness, maximal length and decoding counts of sample streams.
    Check {
        file: PathBuf,
        #[arg(long, default_value_t = 8)]
        samples: usize,
        #[arg(long, default_value_t = 64)]
        window: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Concentration,
    Weakstar,
    Exponents,
    All,
}

#[derive(Args)]
struct Out {
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn open_out(out: &Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match out {
        Some(p) => Box::new(File::create(p).map_err(|source| CliError::Io { path: p.display().to_string(), source })?),
        None => Box::new(std::io::stdout()),
    })
}

fn write_json<T: Serialize>(value: &T, out: &Option<PathBuf>) -> Result<(), CliError> {
    let path = out.as_ref().map_or("<stdout>".to_string(), |p| p.display().to_string());
    let mut w = std::io::BufWriter::new(open_out(out)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| CliError::Json { path: path.clone(), source })?;
    writeln!(w).and_then(|_| w.flush()).map_err(|source| CliError::Io { path, source })
}

fn read_report(path: &Path) -> Result<RunReport, CliError> {
    let f = File::open(path).map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
    serde_json::from_reader(std::io::BufReader::new(f)).map_err(|source| CliError::Json { path: path.display().to_string(), source })
}

fn codes_check(file: &Path, samples: usize, window: usize, seed_root: u64) -> Result<(), CliError> {
    let f = File::open(file).map_err(|source| CliError::Io { path: file.display().to_string(), source })?;
    let code: CodeBook = serde_json::from_reader(f).map_err(|source| CliError::Json { path: file.display().to_string(), source })?;
    let disjoint = code.is_disjoint();
    println!("words {}", code.len());
    println!("disjoint {disjoint}");
    println!("R {}", code.max_len());
    if !disjoint {
        return Ok(());
    }
    // periodic concatenations on both sides of a random centre
    for i in 0..samples {
        let mut rng = seed::rng(seed_root, 0xc0de, i as u64);
        let mut concat = |k: usize| -> Vec<Symbol> {
            (0..k).flat_map(|_| code.word(rng.gen_range(0..code.len())).symbols().to_vec()).collect()
        };
        let (left, center, right) = (concat(2), concat(3), concat(2));
        let stream = PeriodicStream::new(left, center, right)?;
        let count = count_decodings(&code, &stream, window.max(code.max_len()))?;
        println!("sample {i} left {:?} center {:?} right {:?} decodings {count}", stream.left, stream.center, stream.right);
    }
    Ok(())
}

fn lyapunov(config: &Path, n: usize, trials: usize, seed_root: u64, out: &Option<PathBuf>) -> Result<(), CliError> {
    let family = match RunConfig::from_path(config) {
        Ok(c) => c.family,
        Err(_) => FamilySpec::from_path(config)?,
    };
    let cocycle = family.cocycle()?;
    if n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    let k = cocycle.len() as Symbol;
    let lambdas: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng(seed_root, 0x1a9, t as u64);
            lyapunov_upper(&cocycle, std::iter::repeat_with(move || rng.gen_range(1..=k)), n)
        })
        .collect();
    let mut w = csv::Writer::from_writer(open_out(out)?);
    w.write_record(["trial", "lambda1"])?;
    for (t, l) in lambdas.iter().enumerate() {
        w.write_record([t.to_string(), l.to_string()])?;
    }
    w.flush().map_err(|source| CliError::Io { path: "<csv>".into(), source })?;
    Ok(())
}

fn concentration_csv(report: &RunReport, path: &Path) -> Result<(), CliError> {
    let Some(m) = &report.measures else { return Ok(()) };
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["orbit".to_string()];
    header.extend(m.concentration.iter().map(|b| b.name.clone()));
    w.write_record(&header)?;
    let rows = m.concentration.first().map_or(0, |b| b.averages.len());
    for i in 0..rows {
        let mut rec = vec![i.to_string()];
        rec.extend(m.concentration.iter().map(|b| b.averages[i].to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
    Ok(())
}

fn summarize(report: &RunReport) {
    if let Some(f) = &report.failure {
        eprintln!("failed at {:?}: {}", f.stage, f.message);
    }
    for c in report.failed_checks() {
        eprintln!("check failed: {:?} {}: {} vs {} (margin {})", c.stage, c.name, c.inequality.lhs, c.inequality.rhs, c.inequality.margin);
    }
    eprintln!("{} checks, {} failed", report.checks.len(), report.failed_checks().count());
}

/// Runs stages through `last` and writes the report; returns its exit code.
fn stage(cfg: RunConfig, last: Stage, prior: &Prior, dry_run: bool, out: &Option<PathBuf>) -> Result<u8, CliError> {
    cfg.validate()?;
    if dry_run {
        write_json(&cfg, out)?;
        return Ok(EXIT_PASS as u8);
    }
    let report = run_with(&cfg, last, prior);
    write_json(&report, out)?;
    summarize(&report);
    Ok(report.exit_code() as u8)
}

fn run(cli: Cli) -> Result<u8, CliError> {
    let dry = cli.dry_run;
    match cli.command {
        Command::Codes { command: CodesCommand::Check { file, samples, window, seed } } => {
            codes_check(&file, samples, window, seed)?;
            Ok(EXIT_PASS as u8)
        }
        Command::Lyapunov { config, n, trials, seed, out } => {
            lyapunov(&config, n, trials, seed, &out.out)?;
            Ok(EXIT_PASS as u8)
        }
        Command::Blending { config, depth, grid, delta, out } => {
            let mut cfg = RunConfig::from_path(&config)?;
            if let Some(d) = depth {
                cfg.blending.depth_cap = d;
            }
            if let Some(g) = grid {
                cfg.blending.grid = g;
            }
            if delta.is_some() {
                cfg.blending.delta = delta;
            }
            stage_blending(cfg, &Prior::default(), dry, &out.out)
        }
        Command::Skeleton { config, blending, n, eps_e, eps_h, seed, out } => {
            let b = blending.as_deref().map(read_report).transpose()?;
            let mut cfg = match (&config, &b) {
                (Some(p), _) => RunConfig::from_path(p)?,
                (None, Some(r)) => r.config.clone(),
                (None, None) => return Err(CliError::Usage("skeleton needs --config or --blending".into())),
            };
            if let Some(n) = n {
                cfg.skeleton.n = n;
            }
            if let Some(e) = eps_e {
                cfg.skeleton.eps_e = e;
            }
            if let Some(e) = eps_h {
                cfg.skeleton.eps_h = e;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let prior = Prior { blending: b.and_then(|r| r.blending), ..Prior::default() };
            stage(cfg, Stage::W0, &prior, dry, &out.out)
        }
        Command::Cascade { w0, blending, m, out } => {
            let r = read_report(&w0)?;
            let mut cfg = r.config.clone();
            let mut prior = Prior::from_report(&r);
            prior.cascade = None;
            if let Some(b) = blending {
                prior.blending = read_report(&b)?.blending;
            }
            if let Some(m) = m {
                cfg.cascade.schedule = m;
                cfg.measures.n = cfg.measures.n.min(cfg.cascade.schedule.len());
                cfg.measures.ell = cfg.measures.ell.min(cfg.measures.n.saturating_sub(1));
            }
            stage(cfg, Stage::Suspension, &prior, dry, &out.out)
        }
        Command::Suspension { cascade, ld_eps, trials, seed, out } => {
            let r = read_report(&cascade)?;
            let mut cfg = r.config.clone();
            if let Some(e) = ld_eps {
                cfg.suspension.ld_eps = e;
            }
            if let Some(t) = trials {
                cfg.suspension.ld_trials = t;
            }
            if seed.is_some() {
                cfg.suspension.seed = seed;
            }
            stage(cfg, Stage::Suspension, &Prior::from_report(&r), dry, &out.out)
        }
        Command::Measures { cascade, mode, ell, n, eps, trials, seed, csv, out } => {
            let r = read_report(&cascade)?;
            let mut cfg = r.config.clone();
            let ms = &mut cfg.measures;
            if let Some(v) = ell {
                ms.ell = v;
            }
            if let Some(v) = n {
                ms.n = v;
            }
            if let Some(v) = eps {
                ms.eps = v;
            }
            if let Some(v) = trials {
                ms.trials = v;
            }
            if seed.is_some() {
                ms.seed = seed;
            }
            cfg.validate()?;
            if dry {
                write_json(&cfg, &out.out)?;
                return Ok(EXIT_PASS as u8);
            }
            let report = run_with(&cfg, Stage::Measures, &Prior::from_report(&r));
            if let (Some(p), true) = (&csv, matches!(mode, Mode::Concentration | Mode::All)) {
                concentration_csv(&report, p)?;
            }
            match (mode, &report.measures) {
                (Mode::All, _) | (_, None) => write_json(&report, &out.out)?,
                (Mode::Concentration, Some(m)) => write_json(
                    &json!({"ell": m.ell, "n": m.n, "horizon": m.horizon, "concentration": m.concentration, "note": m.note}),
                    &out.out,
                )?,
                (Mode::Weakstar, Some(m)) => write_json(&json!({"weakstar": m.weakstar, "note": m.note}), &out.out)?,
                (Mode::Exponents, Some(m)) => write_json(&json!({"exponents": m.exponents}), &out.out)?,
            }
            summarize(&report);
            Ok(report.exit_code() as u8)
        }
        Command::Run { config, seed, out } => {
            let mut cfg = RunConfig::from_path(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            stage(cfg, Stage::Measures, &Prior::default(), dry, &out.out)
        }
    }
}

fn stage_blending(cfg: RunConfig, prior: &Prior, dry: bool, out: &Option<PathBuf>) -> Result<u8, CliError> {
    cfg.validate()?;
    if dry {
        write_json(&cfg, out)?;
        return Ok(EXIT_PASS as u8);
    }
    let mut report = nonhyp::pipeline::run_blending(&cfg, prior);
    report.config = cfg;
    write_json(&report, out)?;
    summarize(&report);
    Ok(report.exit_code() as u8)
}

fn threads(flag: Option<usize>) -> Option<usize> {
    std::env::var("NONHYP_THREADS").ok().and_then(|v| v.parse().ok()).or(flag).filter(|&n| n > 0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = threads(cli.threads) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("thread pool: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
