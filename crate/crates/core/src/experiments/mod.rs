//! Convergence sweeps, theorem-inequality checks, the identity suite and
//! their CSV/JSON output.

mod bounds;
mod identities;

pub use bounds::{
    check_masking_upper_bound, check_ttl_bound, integrated_i_term, ttl_constant, MaskingBoundReport,
    TtlBoundReport,
};
pub use identities::{default_corpus, run_identity_suite, IdentityResult, IdentitySuiteReport};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{propagate_forward, to_process_alphabet, NoiseKind};
use crate::info_metrics::{kl, tv, Kl};
use crate::rng::hash_key;
use crate::samplers::{
    initial_distribution, run_sampler_paths, run_sampler_pmf, SamplerKind, DEFAULT_PRUNE,
};
use crate::schedule::{build_schedule, Recipe, Schedule};
use crate::score::{
    assumption1_total, CorruptedScores, CorruptionModel, CorruptionScope, ExactScores, ScoreProvider,
};
use crate::state_space::DensePmf;
use crate::targets::{build, DistributionSpec};

/// Default slack factor for inequalities whose constants are unstated.
pub const DEFAULT_SLACK: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub recipe: Recipe,
    pub horizon: f64,
    pub n_list: Vec<usize>,
    #[serde(default)]
    pub early_stop: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScoreConfig {
    #[default]
    Exact,
    Corrupted {
        model: CorruptionModel,
        #[serde(default)]
        scope: CorruptionScope,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Pmf,
    Paths { n_paths: usize },
}

fn default_prune() -> f64 {
    DEFAULT_PRUNE
}

fn default_slack() -> f64 {
    DEFAULT_SLACK
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub target: DistributionSpec,
    pub kind: NoiseKind,
    pub sampler: SamplerKind,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub score: ScoreConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_prune")]
    pub prune: f64,
    #[serde(default = "default_slack")]
    pub slack: f64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(
        target: DistributionSpec,
        kind: NoiseKind,
        sampler: SamplerKind,
        schedule: ScheduleConfig,
    ) -> Self {
        Self {
            target,
            kind,
            sampler,
            schedule,
            score: ScoreConfig::Exact,
            seed: 0,
            mode: Mode::Pmf,
            prune: DEFAULT_PRUNE,
            slack: DEFAULT_SLACK,
            out: None,
        }
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.schedule;
        if s.n_list.is_empty() {
            return Err(Error::Config("n_list must not be empty".into()));
        }
        if s.n_list.windows(2).any(|w| w[0] >= w[1]) || s.n_list[0] == 0 {
            return Err(Error::Config("n_list must be positive and strictly ascending".into()));
        }
        if !(s.horizon > 0.0) || !s.horizon.is_finite() {
            return Err(Error::Config(format!("horizon must be positive, got {}", s.horizon)));
        }
        if !(s.early_stop >= 0.0 && s.early_stop < s.horizon) {
            return Err(Error::Config(format!("early_stop must lie in [0, T), got {}", s.early_stop)));
        }
        if !(self.prune >= 0.0) || !(self.slack > 0.0) {
            return Err(Error::Config("prune must be ≥ 0 and slack > 0".into()));
        }
        if let Mode::Paths { n_paths: 0 } = self.mode {
            return Err(Error::Config("paths mode needs n_paths > 0".into()));
        }
        self.sampler.check(self.kind)
    }

    pub fn data(&self) -> Result<DensePmf> {
        build(&self.target)
    }

    pub fn exact_scores(&self) -> Result<ExactScores> {
        ExactScores::new(&self.data()?, self.kind)
    }

    /// The score provider the sampler runs with.
    pub fn provider(&self) -> Result<Box<dyn ScoreProvider>> {
        let exact = self.exact_scores()?;
        Ok(match self.score {
            ScoreConfig::Exact => Box::new(exact),
            ScoreConfig::Corrupted { model, scope } => Box::new(CorruptedScores { exact, model, scope }),
        })
    }

    pub fn schedule_for(&self, n: usize) -> Result<Schedule> {
        let s = &self.schedule;
        build_schedule(s.recipe.clone(), s.horizon, n, s.early_stop)
    }

    /// Law the sampler output is compared with: q_δ, or q_0 for the modified
    /// truncated sampler, whose final step unmasks every coordinate.
    pub fn reference_law(&self) -> Result<DensePmf> {
        let q0 = self.data()?;
        if self.sampler == SamplerKind::ModifiedTruncated {
            to_process_alphabet(&q0, self.kind)
        } else {
            propagate_forward(&q0, self.kind, self.schedule.early_stop)
        }
    }

    pub fn initial_law(&self) -> Result<DensePmf> {
        let q0 = self.data()?;
        let sp = q0.space();
        initial_distribution(self.kind, sp.dim(), sp.vocab_size(), self.schedule.horizon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub horizon: f64,
    pub early_stop: f64,
    pub kappa_eff: f64,
    pub eps_score: f64,
    pub kl: Kl,
    pub tv: f64,
    pub discarded_mass: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: ExperimentConfig,
    pub rows: Vec<ConvergenceRow>,
    /// Rows that failed, as (N, error message).
    pub failures: Vec<(usize, String)>,
    pub warnings: Vec<String>,
}

/// Output law of one sampler run, exact in pmf mode and empirical in paths mode.
pub fn sampler_output(
    cfg: &ExperimentConfig,
    schedule: &Schedule,
    provider: &dyn ScoreProvider,
    q_init: &DensePmf,
) -> Result<(DensePmf, f64)> {
    match cfg.mode {
        Mode::Pmf => {
            let run = run_sampler_pmf(q_init, cfg.sampler, schedule, provider, cfg.prune)?;
            Ok((run.output, run.discarded_mass))
        }
        Mode::Paths { n_paths } => {
            let seed = hash_key(&[cfg.seed, schedule.steps() as u64]);
            let run = run_sampler_paths(q_init, cfg.sampler, schedule, provider, n_paths, seed, 0)?;
            let emp = DensePmf::new(q_init.space().clone(), run.empirical())?;
            Ok((emp, 0.0))
        }
    }
}

fn sweep_row(
    cfg: &ExperimentConfig,
    n: usize,
    provider: &dyn ScoreProvider,
    exact: &ExactScores,
    q_init: &DensePmf,
    reference: &DensePmf,
) -> Result<ConvergenceRow> {
    let start = Instant::now();
    let schedule = cfg.schedule_for(n)?;
    let eps_score = match cfg.score {
        ScoreConfig::Exact => 0.0,
        ScoreConfig::Corrupted { .. } => assumption1_total(&schedule, provider, exact)?,
    };
    let (out, discarded) = sampler_output(cfg, &schedule, provider, q_init)?;
    Ok(ConvergenceRow {
        n,
        horizon: schedule.horizon(),
        early_stop: schedule.early_stop(),
        kappa_eff: schedule.kappa_eff(),
        eps_score,
        kl: kl(reference, &out)?,
        tv: tv(reference, &out)?,
        discarded_mass: discarded,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// One row per N, computed in parallel. A failing row is recorded and the
/// remaining rows are still returned.
pub fn run_convergence_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let provider = cfg.provider()?;
    let exact = cfg.exact_scores()?;
    let q_init = cfg.initial_law()?;
    let reference = cfg.reference_law()?;
    let results: Vec<(usize, Result<ConvergenceRow>)> = cfg
        .schedule
        .n_list
        .par_iter()
        .map(|&n| (n, sweep_row(cfg, n, provider.as_ref(), &exact, &q_init, &reference)))
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (n, r) in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => failures.push((n, e.to_string())),
        }
    }
    let mut warnings = Vec::new();
    if cfg.score == ScoreConfig::Exact && cfg.mode == Mode::Pmf {
        for w in rows.windows(2) {
            if w[1].kl.as_f64() > w[0].kl.as_f64() + 1e-10 {
                warnings.push(format!(
                    "KL increased from N={} to N={}: {:.3e} → {:.3e}",
                    w[0].n,
                    w[1].n,
                    w[0].kl.as_f64(),
                    w[1].kl.as_f64()
                ));
            }
        }
    }
    for n in &cfg.schedule.n_list {
        if let Ok(s) = cfg.schedule_for(*n) {
            warnings.extend(s.warnings().iter().map(|w| format!("N={n}: {w}")));
        }
    }
    Ok(SweepResult {
        config: cfg.clone(),
        rows,
        failures,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares y = slope·x + intercept.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Validation("need at least two paired points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Validation("x values are all equal".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LinearFit {
        slope,
        intercept: my - slope * mx,
        r2,
    })
}

/// Log-log slope of KL − KL_∞ against N, with KL_∞ taken as the KL of the
/// largest N and that row left out of the fit.
pub fn discretization_slope(rows: &[ConvergenceRow]) -> Result<LinearFit> {
    let last = rows
        .iter()
        .max_by_key(|r| r.n)
        .ok_or_else(|| Error::Validation("no rows".into()))?;
    let floor = last.kl.as_f64();
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.n < last.n)
        .map(|r| ((r.n as f64).ln(), (r.kl.as_f64() - floor).ln()))
        .unzip();
    if ys.iter().any(|y| !y.is_finite()) {
        return Err(Error::Validation("KL excess must be positive and finite below N_max".into()));
    }
    linear_fit(&xs, &ys)
}

#[derive(Serialize)]
struct CsvRow {
    n: usize,
    horizon: f64,
    early_stop: f64,
    kappa_eff: f64,
    eps_score: f64,
    kl: String,
    tv: f64,
    discarded_mass: f64,
    wall_time_s: f64,
}

/// Writes `sweep.csv` and `manifest.json` (config, seed, rows) into `dir`.
pub fn write_sweep(result: &SweepResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("sweep.csv")).map_err(csv_err)?;
    for r in &result.rows {
        w.serialize(CsvRow {
            n: r.n,
            horizon: r.horizon,
            early_stop: r.early_stop,
            kappa_eff: r.kappa_eff,
            eps_score: r.eps_score,
            kl: match r.kl {
                Kl::Finite(v) => v.to_string(),
                Kl::Infinite => "inf".into(),
            },
            tv: r.tv,
            discarded_mass: r.discarded_mass,
            wall_time_s: r.wall_time_s,
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    write_json(&dir.join("manifest.json"), result)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_cfg() -> ExperimentConfig {
        ExperimentConfig::new(
            DistributionSpec::Uniform { d: 2, s: 3 },
            NoiseKind::Uniform,
            SamplerKind::TauLeaping,
            ScheduleConfig {
                recipe: Recipe::Constant,
                horizon: 3.0,
                n_list: vec![4, 8, 16],
                early_stop: 0.0,
            },
        )
    }

    #[test]
    fn uniform_target_is_reproduced_exactly() {
        let res = run_convergence_sweep(&uniform_cfg()).unwrap();
        assert_eq!(res.rows.len(), 3);
        assert!(res.failures.is_empty());
        for r in &res.rows {
            assert!(r.kl.as_f64() <= 1e-10, "{r:?}");
        }
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        let mut c = uniform_cfg();
        c.schedule.n_list = vec![8, 4];
        assert!(c.validate().unwrap_err().is_config());
        let mut c = uniform_cfg();
        c.schedule.n_list.clear();
        assert!(c.validate().unwrap_err().is_config());
        let mut c = uniform_cfg();
        c.sampler = SamplerKind::ModifiedTruncated;
        assert!(c.validate().unwrap_err().is_config());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let mut c = uniform_cfg();
        c.score = ScoreConfig::Corrupted {
            model: CorruptionModel::log_normal(0.1, 3).unwrap(),
            scope: CorruptionScope::Fixed,
        };
        c.mode = Mode::Paths { n_paths: 100 };
        let text = toml::to_string(&c).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| -1.5 * x + 2.0).collect();
        let f = linear_fit(&xs, &ys).unwrap();
        assert!((f.slope + 1.5).abs() < 1e-14 && (f.intercept - 2.0).abs() < 1e-13);
        assert!((f.r2 - 1.0).abs() < 1e-14);
    }
}
