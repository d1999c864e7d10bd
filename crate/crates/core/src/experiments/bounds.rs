use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, Mode, ScoreConfig};
use crate::error::{Error, Result};
use crate::forward::NoiseKind;
use crate::info_metrics::{kl, SubsetEntropies};
use crate::quadrature::integrate;
use crate::samplers::{run_sampler_pmf, SamplerKind};
use crate::schedule::{Recipe, Schedule};
use crate::score::{assumption1_total, for_each_reverse_pair, ScoreProvider};

/// Σ_k h_k ∫_{T−t_{k+1}}^{T−t_k} I(t) dt.
pub fn integrated_i_term(schedule: &Schedule, se: &SubsetEntropies) -> Result<f64> {
    let t_big = schedule.horizon();
    let g = schedule.grid();
    let mut total = 0.0;
    for k in 0..schedule.steps() {
        let (lo, hi) = (t_big - g[k + 1], t_big - g[k]);
        let part = integrate(|t| se.i_of_t(t), lo, hi, 1e-15, 1e-10, 2000)?;
        total += (g[k + 1] - g[k]) * part.value;
    }
    Ok(total)
}

/// C = Σ_k h_k E_{x∼q_{T−t_k}} Σ_{i∈m(x)} Σ_c s |log(ŝ/s)| at forward time T − t_k.
pub fn ttl_constant(schedule: &Schedule, s_hat: &dyn ScoreProvider, exact: &dyn ScoreProvider) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..schedule.steps() {
        let time = schedule.horizon() - schedule.grid()[k];
        let sh = s_hat.field(k, time)?;
        let s = exact.field(k, time)?;
        let q = s.marginal();
        let mut step = 0.0;
        for (x, &p) in q.mass().iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            let mut err = None;
            let mut acc = 0.0;
            for_each_reverse_pair(q.space(), s.kind(), x, |i, b, _| {
                match (sh.value(x, i, b), s.value(x, i, b)) {
                    (Ok(a), Ok(v)) if v > 0.0 => acc += v * (a / v).ln().abs(),
                    (Ok(_), Ok(_)) => {}
                    (Err(e), _) | (_, Err(e)) => err = Some(e),
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
            step += p * acc;
        }
        total += schedule.step(k) * step;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskingBoundReport {
    pub n: usize,
    pub recipe: String,
    pub kappa_eff: f64,
    pub kl: f64,
    pub eps_score: f64,
    /// e^{−T} d log S.
    pub init_term: f64,
    /// Σ_k h_k ∫_{T−t_{k+1}}^{T−t_k} I(t) dt.
    pub discretization_term: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
}

fn require_pmf_masking(cfg: &ExperimentConfig, sampler: SamplerKind) -> Result<()> {
    cfg.validate()?;
    if cfg.kind != NoiseKind::Masking || cfg.sampler != sampler {
        return Err(Error::Config(format!("this check needs masking diffusion with {sampler:?}")));
    }
    if cfg.mode != Mode::Pmf {
        return Err(Error::Config("bound checks need exact KL, use pmf mode".into()));
    }
    Ok(())
}

fn eps_score(cfg: &ExperimentConfig, schedule: &Schedule, provider: &dyn ScoreProvider) -> Result<f64> {
    match cfg.score {
        ScoreConfig::Exact => Ok(0.0),
        ScoreConfig::Corrupted { .. } => assumption1_total(schedule, provider, &cfg.exact_scores()?),
    }
}

/// KL(q_0 ‖ p_output) of the modified truncated sampler against
/// ε_score + e^{−T} d log S + Σ_k h_k ∫ I, scaled by the slack factor.
pub fn check_masking_upper_bound(cfg: &ExperimentConfig) -> Result<Vec<MaskingBoundReport>> {
    require_pmf_masking(cfg, SamplerKind::ModifiedTruncated)?;
    let q0 = cfg.data()?;
    let se = SubsetEntropies::new(&q0)?;
    let provider = cfg.provider()?;
    let q_init = cfg.initial_law()?;
    let reference = cfg.reference_law()?;
    let (d, s) = (q0.space().dim() as f64, q0.space().vocab_size() as f64);
    let init_term = (-cfg.schedule.horizon).exp() * d * s.ln();
    cfg.schedule
        .n_list
        .par_iter()
        .map(|&n| {
            let schedule = cfg.schedule_for(n)?;
            let eps = eps_score(cfg, &schedule, provider.as_ref())?;
            let run = run_sampler_pmf(&q_init, cfg.sampler, &schedule, provider.as_ref(), cfg.prune)?;
            let kl_value = kl(&reference, &run.output)?.as_f64();
            let disc = integrated_i_term(&schedule, &se)?;
            let rhs = eps + init_term + disc;
            Ok(MaskingBoundReport {
                n,
                recipe: schedule.recipe().name().to_string(),
                kappa_eff: schedule.kappa_eff(),
                kl: kl_value,
                eps_score: eps,
                init_term,
                discretization_term: disc,
                rhs,
                slack: cfg.slack,
                holds: kl_value <= cfg.slack * rhs,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtlBoundReport {
    pub n: usize,
    pub kappa: f64,
    pub kl: f64,
    pub eps_score: f64,
    pub init_term: f64,
    pub discretization_term: f64,
    /// κ³ N d.
    pub kappa_term: f64,
    pub c_constant: f64,
    /// κ C.
    pub c_term: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
    /// KL(q_0 ‖ ·) of the modified truncated sampler on the same grid.
    pub modified_kl: f64,
    /// Whether the modified sampler did at least as well; reported, not enforced.
    pub modified_not_worse: bool,
}

/// KL(q_δ ‖ p_output) of truncated τ-leaping against
/// ε_score + e^{−T} d log S + Σ_k h_k ∫ I + κ³ N d + κ C, scaled by the slack.
pub fn check_ttl_bound(cfg: &ExperimentConfig) -> Result<Vec<TtlBoundReport>> {
    require_pmf_masking(cfg, SamplerKind::TruncatedTauLeaping)?;
    if !matches!(cfg.schedule.recipe, Recipe::ExpThenConst { .. }) {
        return Err(Error::Config("the truncated τ-leaping bound needs an exp_then_const schedule".into()));
    }
    if !(cfg.schedule.early_stop > 0.0) {
        return Err(Error::Config("the truncated τ-leaping bound needs early stopping δ > 0".into()));
    }
    let q0 = cfg.data()?;
    let se = SubsetEntropies::new(&q0)?;
    let provider = cfg.provider()?;
    let exact = cfg.exact_scores()?;
    let q_init = cfg.initial_law()?;
    let reference = cfg.reference_law()?;
    let full = crate::forward::to_process_alphabet(&q0, NoiseKind::Masking)?;
    let (d, s) = (q0.space().dim() as f64, q0.space().vocab_size() as f64);
    let init_term = (-cfg.schedule.horizon).exp() * d * s.ln();
    cfg.schedule
        .n_list
        .par_iter()
        .map(|&n| {
            let schedule = cfg.schedule_for(n)?;
            let kappa = schedule.kappa_eff();
            let eps = eps_score(cfg, &schedule, provider.as_ref())?;
            let run = run_sampler_pmf(&q_init, cfg.sampler, &schedule, provider.as_ref(), cfg.prune)?;
            let kl_value = kl(&reference, &run.output)?.as_f64();
            let disc = integrated_i_term(&schedule, &se)?;
            let c_constant = ttl_constant(&schedule, provider.as_ref(), &exact)?;
            let kappa_term = kappa.powi(3) * n as f64 * d;
            let c_term = kappa * c_constant;
            let rhs = eps + init_term + disc + kappa_term + c_term;
            let modified = run_sampler_pmf(
                &q_init,
                SamplerKind::ModifiedTruncated,
                &schedule,
                provider.as_ref(),
                cfg.prune,
            )?;
            let modified_kl = kl(&full, &modified.output)?.as_f64();
            Ok(TtlBoundReport {
                n,
                kappa,
                kl: kl_value,
                eps_score: eps,
                init_term,
                discretization_term: disc,
                kappa_term,
                c_constant,
                c_term,
                rhs,
                slack: cfg.slack,
                holds: kl_value <= cfg.slack * rhs,
                modified_kl,
                modified_not_worse: modified_kl <= kl_value,
            })
        })
        .collect()
}
