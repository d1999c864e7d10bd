use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use ddlab::experiments::{
    check_masking_upper_bound, check_ttl_bound, default_corpus, run_convergence_sweep, run_identity_suite,
    sampler_output, write_json, write_sweep, ExperimentConfig, Mode,
};
use ddlab::forward::{propagate_forward, NoiseKind};
use ddlab::info_metrics::{correlations_quadrature, entropy, kl, phi_profile, tv};
use ddlab::samplers::SamplerKind;
use ddlab::score::ScoreField;
use ddlab::targets::{analytic_expectations, build, DistributionSpec};
use ddlab::{Error, Result};

#[derive(Parser)]
#[command(name = "ddlab", version, about = "Exact discrete diffusion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML or JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Paths per run in paths mode.
    #[arg(long, global = true, default_value_t = 100_000)]
    paths: usize,
    /// Relative quadrature tolerance for `metrics`.
    #[arg(long, global = true)]
    tolerance: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Pmf,
    Paths,
}

#[derive(Subcommand)]
enum Command {
    /// Propagate the target forward and dump q_t.
    Forward {
        #[arg(long)]
        time: f64,
    },
    /// Tabulate exact scores at forward time t.
    Score {
        #[arg(long)]
        time: f64,
    },
    /// One sampler run at the first (or given) step count.
    Sample {
        #[arg(long)]
        n: Option<usize>,
    },
    /// ℬ, 𝒞, 𝒟 and the φ profile of the target.
    Metrics,
    /// Convergence sweep over the configured step counts.
    Sweep,
    /// Identity suite, or the bound check matching an experiment config.
    Verify,
}

/// The parts of any config file that name a target law.
#[derive(Deserialize)]
struct TargetFile {
    target: DistributionSpec,
    #[serde(default = "default_kind")]
    kind: NoiseKind,
}

fn default_kind() -> NoiseKind {
    NoiseKind::Masking
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusFile {
    corpus: Vec<DistributionSpec>,
}

fn parse_file<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))
    } else {
        toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
    }
}

fn require_config(cli: &Cli) -> Result<&Path> {
    cli.config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))
}

fn experiment(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(require_config(cli)?)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.mode {
        Some(ModeArg::Pmf) => cfg.mode = Mode::Pmf,
        Some(ModeArg::Paths) => cfg.mode = Mode::Paths { n_paths: cli.paths },
        None => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct SampleOutput<'a> {
    config: &'a ExperimentConfig,
    n: usize,
    kl: f64,
    tv: f64,
    discarded_mass: f64,
    output: ddlab::state_space::DistributionFile,
}

#[derive(Serialize)]
struct ScoreOutput {
    kind: NoiseKind,
    time: f64,
    entries: Vec<ddlab::score::ScoreDumpEntry>,
}

/// Ok(true) when every hard assertion passed.
fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Forward { time } => {
            let tf: TargetFile = parse_file(require_config(cli)?)?;
            let qt = propagate_forward(&build(&tf.target)?, tf.kind, *time)?;
            let path = cli.out.join("forward.json");
            fs::create_dir_all(&cli.out)?;
            qt.save_json(&path)?;
            println!("q_t at t={time}: entropy {:.6}, support {}", entropy(&qt), qt.support_size());
            println!("wrote {}", path.display());
            Ok(true)
        }
        Command::Score { time } => {
            let tf: TargetFile = parse_file(require_config(cli)?)?;
            let field = ScoreField::exact(&build(&tf.target)?, tf.kind, *time)?;
            let out = ScoreOutput {
                kind: tf.kind,
                time: *time,
                entries: field.dump()?,
            };
            let path = cli.out.join("scores.json");
            write_json(&path, &out)?;
            println!("{} score entries, wrote {}", out.entries.len(), path.display());
            Ok(true)
        }
        Command::Sample { n } => {
            let cfg = experiment(cli)?;
            let n = n.unwrap_or(cfg.schedule.n_list[0]);
            let schedule = cfg.schedule_for(n)?;
            let provider = cfg.provider()?;
            let (out, discarded) = sampler_output(&cfg, &schedule, provider.as_ref(), &cfg.initial_law()?)?;
            let reference = cfg.reference_law()?;
            let result = SampleOutput {
                config: &cfg,
                n,
                kl: kl(&reference, &out)?.as_f64(),
                tv: tv(&reference, &out)?,
                discarded_mass: discarded,
                output: out.to_file(),
            };
            let path = cli.out.join("sample.json");
            write_json(&path, &result)?;
            println!("N={n}: KL {:.6e}, TV {:.6e}", result.kl, result.tv);
            println!("wrote {}", path.display());
            Ok(true)
        }
        Command::Metrics => {
            let tf: TargetFile = parse_file(require_config(cli)?)?;
            let q0 = build(&tf.target)?;
            let name = tf.target.name();
            let prof = correlations_quadrature(&q0, &name, cli.tolerance.unwrap_or(1e-4))?;
            let times: Vec<f64> = (1..=100).map(|j| 0.05 * j as f64).collect();
            let phi = phi_profile(&q0, &times)?;
            fs::create_dir_all(&cli.out)?;
            prof.write_csv(fs::File::create(cli.out.join("i_profile.csv"))?)?;
            write_json(&cli.out.join("correlations.json"), &prof)?;
            write_json(&cli.out.join("phi.json"), &phi)?;
            println!("{name}");
            println!("  B = {:.10} (quadrature {:.10})", prof.b_direct, prof.b_quad.value);
            println!("  C = {:.10} (quadrature {:.10})", prof.c_direct, prof.c_quad.value);
            println!("  D = {:.10} ± {:.1e}", prof.d_quad.value, prof.d_quad.error);
            let mut ok = true;
            if let Some(reference) = analytic_expectations(&tf.target) {
                let holds = match reference.kind {
                    ddlab::targets::ReferenceKind::Exact => (prof.b_direct - reference.b).abs() <= 1e-10,
                    ddlab::targets::ReferenceKind::UpperBound => prof.b_direct <= reference.b,
                };
                println!("  reference B {:?} {:.6}: {}", reference.kind, reference.b, pass(holds));
                ok &= holds;
            }
            Ok(ok)
        }
        Command::Sweep => {
            let cfg = experiment(cli)?;
            let result = run_convergence_sweep(&cfg)?;
            let dir = cfg.out.clone().unwrap_or_else(|| cli.out.clone());
            write_sweep(&result, &dir)?;
            println!("{:>6} {:>14} {:>12} {:>12}", "N", "KL", "TV", "eps_score");
            for r in &result.rows {
                println!("{:>6} {:>14.6e} {:>12.4e} {:>12.4e}", r.n, r.kl.as_f64(), r.tv, r.eps_score);
            }
            for w in &result.warnings {
                eprintln!("warning: {w}");
            }
            for (n, e) in &result.failures {
                eprintln!("N={n} failed: {e}");
            }
            println!("wrote {}", dir.join("sweep.csv").display());
            Ok(result.failures.is_empty())
        }
        Command::Verify => verify(cli),
    }
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn verify(cli: &Cli) -> Result<bool> {
    let Some(path) = cli.config.as_deref() else {
        return identity_suite(cli, &default_corpus());
    };
    if let Ok(corpus) = parse_file::<CorpusFile>(path) {
        return identity_suite(cli, &corpus.corpus);
    }
    // otherwise an experiment config selecting the matching bound check
    let cfg = experiment(cli)?;
    let lines: Vec<(String, bool)> = match (cfg.kind, cfg.sampler) {
        (NoiseKind::Masking, SamplerKind::ModifiedTruncated) => {
            let reps = check_masking_upper_bound(&cfg)?;
            write_json(&cli.out.join("bound.json"), &reps)?;
            reps.iter()
                .map(|r| {
                    let line = format!("N={:>5} {}: KL {:.4e} <= {} x {:.4e}", r.n, r.recipe, r.kl, r.slack, r.rhs);
                    (line, r.holds)
                })
                .collect()
        }
        (NoiseKind::Masking, SamplerKind::TruncatedTauLeaping) => {
            let reps = check_ttl_bound(&cfg)?;
            write_json(&cli.out.join("bound.json"), &reps)?;
            reps.iter()
                .map(|r| {
                    let line = format!("N={:>5} kappa {:.3}: KL {:.4e} <= {} x {:.4e}", r.n, r.kappa, r.kl, r.slack, r.rhs);
                    (line, r.holds)
                })
                .collect()
        }
        _ => {
            return Err(Error::Config(
                "verify needs a corpus file or a masking experiment config".into(),
            ))
        }
    };
    for (line, ok) in &lines {
        println!("{} {line}", pass(*ok));
    }
    Ok(lines.iter().all(|(_, ok)| *ok))
}

fn identity_suite(cli: &Cli, corpus: &[DistributionSpec]) -> Result<bool> {
    let report = run_identity_suite(corpus, cli.seed.unwrap_or(0))?;
    for r in &report.results {
        println!(
            "{} {:<28} {:<36} {:.2e} (tol {:.0e})",
            pass(r.passed),
            r.identity,
            r.target,
            r.max_deviation,
            r.tolerance
        );
    }
    write_json(&cli.out.join("identities.json"), &report)?;
    println!("{} checks, {} failed", report.results.len(), report.failures().count());
    Ok(report.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("ddlab: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
