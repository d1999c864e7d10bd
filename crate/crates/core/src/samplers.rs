//! Reverse-time τ-bridging samplers: τ-leaping (uniform), truncated
//! τ-leaping, and modified truncated τ-leaping for masking diffusion. Each
//! runs either by exact pmf propagation or by sampling independent paths.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::forward::NoiseKind;
use crate::rng::{sample_index, substream};
use crate::schedule::{Recipe, Schedule};
use crate::score::{ProviderInfo, ScoreField, ScoreProvider};
use crate::state_space::{DensePmf, StateIndex, StateSpace};

/// States with mass at or below this are dropped during pmf propagation.
pub const DEFAULT_PRUNE: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Per-coordinate CTMC with frozen rates; uniform diffusion only.
    TauLeaping,
    /// At most one effective transition per coordinate per step.
    TruncatedTauLeaping,
    /// Truncated τ-leaping with in-step score rescaling; masking only.
    ModifiedTruncated,
}

impl SamplerKind {
    pub fn check(&self, kind: NoiseKind) -> Result<()> {
        match (self, kind) {
            (SamplerKind::TauLeaping, NoiseKind::Masking) => Err(Error::Config(
                "tau-leaping with multiple jumps is only defined for uniform diffusion".into(),
            )),
            (SamplerKind::ModifiedTruncated, NoiseKind::Uniform) => Err(Error::Config(
                "modified truncated tau-leaping requires masking diffusion".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Per-coordinate kernels for one step, conditioned on the step-start state.
#[derive(Debug, Clone, PartialEq)]
pub struct StepKernelSet {
    pub kernels: Vec<DMatrix<f64>>,
}

impl StepKernelSet {
    /// Max |row sum − 1| over all kernels.
    pub fn stochasticity_defect(&self) -> f64 {
        self.kernels
            .iter()
            .flat_map(|k| (0..k.nrows()).map(move |r| (k.row(r).sum() - 1.0).abs()))
            .fold(0.0, f64::max)
    }
}

/// τ-leaping: exp(h R_i) with R_i(a, a ⊕ c) = ŝ(x ⊕_i c, x)/S.
pub fn tau_leaping_step_uniform(x: StateIndex, s_hat: &ScoreField, h: f64) -> Result<StepKernelSet> {
    if s_hat.kind() != NoiseKind::Uniform {
        return Err(Error::Config("tau-leaping step needs a uniform score field".into()));
    }
    if !(h > 0.0) {
        return Err(Error::Domain("step length must be positive".into()));
    }
    let sp = s_hat.space();
    let s = sp.vocab_size();
    let mut kernels = Vec::with_capacity(sp.dim());
    for i in 0..sp.dim() {
        let mut r = DMatrix::zeros(s, s);
        for c in 1..s {
            let rate = s_hat.value_shift(x, i, c)? / s as f64;
            for a in 0..s {
                r[(a, (a + c) % s)] = rate;
                r[(a, a)] -= rate;
            }
        }
        kernels.push(clean_stochastic((r * h).exp()));
    }
    Ok(StepKernelSet { kernels })
}

/// Clamps round-off negatives and renormalizes rows.
fn clean_stochastic(mut k: DMatrix<f64>) -> DMatrix<f64> {
    for r in 0..k.nrows() {
        let mut total = 0.0;
        for c in 0..k.ncols() {
            if k[(r, c)] < 0.0 {
                k[(r, c)] = 0.0;
            }
            total += k[(r, c)];
        }
        for c in 0..k.ncols() {
            k[(r, c)] /= total;
        }
    }
    k
}

/// Identity kernels with the step-start row replaced by `row_for(i)`.
fn single_row_kernels(
    space: &StateSpace,
    x: StateIndex,
    mut row_for: impl FnMut(usize, usize) -> Result<Option<Vec<f64>>>,
) -> Result<StepKernelSet> {
    let n = space.n_symbols();
    let mut kernels = Vec::with_capacity(space.dim());
    for i in 0..space.dim() {
        let a = space.digit(x, i);
        let mut k = DMatrix::identity(n, n);
        if let Some(row) = row_for(i, a)? {
            for b in 0..n {
                k[(a, b)] = row[b];
            }
        }
        kernels.push(k);
    }
    Ok(StepKernelSet { kernels })
}

/// Rates ŝ(x ⊙_i b, x)·Q^tok out of the current symbol of coordinate `i`.
///
/// Under masking, a state outside the support of q_t has no defined score;
/// it unmasks each token at rate 1/(S(e^t − 1)), so the total matches the
/// unmasking rate of the process. Such states never lead back into the
/// support, so the choice does not affect KL(q ‖ p_output).
fn active_rates(s_hat: &ScoreField, x: StateIndex, i: usize) -> Result<Vec<f64>> {
    let sp = s_hat.space();
    let n = sp.n_symbols();
    let s = sp.vocab_size() as f64;
    let mut rates = vec![0.0; n];
    if s_hat.kind() == NoiseKind::Masking && s_hat.marginal().prob(x) <= 0.0 && s_hat.time() > 0.0 {
        let r = 1.0 / (s * s_hat.time().exp_m1());
        for (b, v) in rates.iter_mut().enumerate() {
            if s_hat.is_admissible(x, i, b) {
                *v = r;
            }
        }
        return Ok(rates);
    }
    for (b, r) in rates.iter_mut().enumerate() {
        if s_hat.is_admissible(x, i, b) {
            let v = s_hat.value(x, i, b)?;
            *r = match s_hat.kind() {
                NoiseKind::Uniform => v / s,
                NoiseKind::Masking => v,
            };
        }
    }
    Ok(rates)
}

/// Row that stays with probability `stay` and spreads the rest ∝ `rates`.
fn split_row(a: usize, rates: &[f64], stay: f64) -> Vec<f64> {
    let total: f64 = rates.iter().sum();
    let mut row = vec![0.0; rates.len()];
    if total <= 0.0 {
        row[a] = 1.0;
        return row;
    }
    for (b, &r) in rates.iter().enumerate() {
        row[b] = (1.0 - stay) * r / total;
    }
    row[a] += stay;
    row
}

/// Truncated τ-leaping: only transitions out of the step-start symbol.
pub fn truncated_ttl_step(x: StateIndex, s_hat: &ScoreField, h: f64) -> Result<StepKernelSet> {
    if !(h > 0.0) {
        return Err(Error::Domain("step length must be positive".into()));
    }
    single_row_kernels(s_hat.space(), x, |i, a| {
        let rates = active_rates(s_hat, x, i)?;
        let total: f64 = rates.iter().sum();
        if total == 0.0 {
            return Ok(None);
        }
        Ok(Some(split_row(a, &rates, (-h * total).exp())))
    })
}

/// Δ_k = (e^{T−t_k} − 1) · log((e^T − e^{t_k}) / (e^T − e^{t_{k+1}})).
pub fn delta_k(horizon: f64, tk: f64, tk1: f64) -> f64 {
    let num = (horizon - tk).exp_m1();
    // (e^T − e^{t_k})/(e^T − e^{t_{k+1}}) = (1 − e^{t_k−T})/(1 − e^{t_{k+1}−T})
    let ratio = (-(tk - horizon).exp_m1()) / (-(tk1 - horizon).exp_m1());
    num * ratio.ln()
}

/// One step of modified truncated τ-leaping for masking diffusion.
pub fn modified_ttl_step(
    x: StateIndex,
    s_hat: &ScoreField,
    tk: f64,
    tk1: f64,
    horizon: f64,
    is_last: bool,
) -> Result<StepKernelSet> {
    if s_hat.kind() != NoiseKind::Masking {
        return Err(Error::Config("modified truncated step needs a masking score field".into()));
    }
    if !(tk < tk1) || tk1 > horizon {
        return Err(Error::Domain(format!("need t_k < t_(k+1) ≤ T, got {tk}, {tk1}")));
    }
    if !is_last && tk1 >= horizon {
        return Err(Error::Config("t_(k+1) = T is only allowed on the final step".into()));
    }
    let delta = if is_last { f64::INFINITY } else { delta_k(horizon, tk, tk1) };
    single_row_kernels(s_hat.space(), x, |i, a| {
        if !s_hat.space().alphabet().is_mask(a) {
            return Ok(None);
        }
        let rates = active_rates(s_hat, x, i)?;
        let total: f64 = rates.iter().sum();
        let stay = if is_last { 0.0 } else { (-delta * total).exp() };
        if total == 0.0 {
            return Err(Error::SingularScore(format!(
                "all unmasking rates vanish at x={x}, i={i}"
            )));
        }
        Ok(Some(split_row(a, &rates, stay)))
    })
}

/// Kernels of `sampler` for step k of `schedule` from state `x`.
pub fn step_kernels(
    sampler: SamplerKind,
    schedule: &Schedule,
    k: usize,
    x: StateIndex,
    s_hat: &ScoreField,
) -> Result<StepKernelSet> {
    let (tk, tk1) = (schedule.grid()[k], schedule.grid()[k + 1]);
    match sampler {
        SamplerKind::TauLeaping => tau_leaping_step_uniform(x, s_hat, tk1 - tk),
        SamplerKind::TruncatedTauLeaping => truncated_ttl_step(x, s_hat, tk1 - tk),
        SamplerKind::ModifiedTruncated => modified_ttl_step(
            x,
            s_hat,
            tk,
            tk1,
            schedule.horizon(),
            k + 1 == schedule.steps(),
        ),
    }
}

/// Uniform law for uniform diffusion; for masking, each coordinate is MASK
/// with probability 1 − e^{−T} and a uniform token otherwise.
pub fn initial_distribution(kind: NoiseKind, dim: usize, vocab_size: usize, horizon: f64) -> Result<DensePmf> {
    let space = StateSpace::new(dim, kind.alphabet(vocab_size)?)?;
    match kind {
        NoiseKind::Uniform => Ok(DensePmf::uniform(space)),
        NoiseKind::Masking => {
            let e = (-horizon).exp();
            let mut row = vec![e / vocab_size as f64; vocab_size + 1];
            row[vocab_size] = -(-horizon).exp_m1();
            DensePmf::product(space, &vec![row; dim])
        }
    }
}

/// Reproducibility record written next to every sampler result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerManifest {
    pub sampler: SamplerKind,
    pub recipe: Recipe,
    pub horizon: f64,
    pub early_stop: f64,
    pub grid: Vec<f64>,
    pub seed: Option<u64>,
    pub score: ProviderInfo,
    pub prune_threshold: f64,
    pub discarded_mass: f64,
    pub n_paths: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct PmfRun {
    pub output: DensePmf,
    pub discarded_mass: f64,
    pub manifest: SamplerManifest,
}

fn check_setup(q_init: &DensePmf, sampler: SamplerKind, provider: &dyn ScoreProvider) -> Result<NoiseKind> {
    let kind = provider.provenance().kind;
    sampler.check(kind)?;
    kind.check(q_init.space().alphabet())?;
    Ok(kind)
}

fn fields_for(schedule: &Schedule, provider: &dyn ScoreProvider) -> Result<Vec<ScoreField>> {
    (0..schedule.steps())
        .map(|k| provider.field(k, schedule.horizon() - schedule.grid()[k]))
        .collect()
}

/// Exact law of the sampler output by propagating the whole pmf.
pub fn run_sampler_pmf(
    q_init: &DensePmf,
    sampler: SamplerKind,
    schedule: &Schedule,
    provider: &dyn ScoreProvider,
    prune: f64,
) -> Result<PmfRun> {
    check_setup(q_init, sampler, provider)?;
    let space = q_init.space().clone();
    let mut mass = q_init.mass().to_vec();
    let mut discarded = 0.0;
    for k in 0..schedule.steps() {
        let field = provider.field(k, schedule.horizon() - schedule.grid()[k])?;
        if field.space() != &space {
            return Err(Error::Validation("score field lives on a different space".into()));
        }
        let mut next = vec![0.0; space.len()];
        for (x, &p) in mass.iter().enumerate() {
            if p <= prune {
                discarded += p;
                continue;
            }
            let set = step_kernels(sampler, schedule, k, x, &field)?;
            let rows = active_rows(&space, x, &set);
            scatter_product(&space, &rows, p, &mut next);
        }
        let total: f64 = next.iter().sum();
        for m in next.iter_mut() {
            *m /= total;
        }
        mass = next;
    }
    let output = DensePmf::from_parts_unchecked(space, mass);
    let manifest = SamplerManifest {
        sampler,
        recipe: schedule.recipe().clone(),
        horizon: schedule.horizon(),
        early_stop: schedule.early_stop(),
        grid: schedule.grid().to_vec(),
        seed: None,
        score: provider.provenance(),
        prune_threshold: prune,
        discarded_mass: discarded,
        n_paths: None,
    };
    Ok(PmfRun {
        output,
        discarded_mass: discarded,
        manifest,
    })
}

/// Nonzero (symbol, probability) entries of the row used by each coordinate.
type ActiveRows = Vec<Vec<(usize, f64)>>;

fn active_rows(space: &StateSpace, x: StateIndex, set: &StepKernelSet) -> ActiveRows {
    set.kernels
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let a = space.digit(x, i);
            (0..k.ncols())
                .filter_map(|b| {
                    let v = k[(a, b)];
                    (v > 0.0).then_some((b, v))
                })
                .collect()
        })
        .collect()
}

/// Adds p · ⊗_i rows[i] into `out`.
fn scatter_product(space: &StateSpace, rows: &[Vec<(usize, f64)>], p: f64, out: &mut [f64]) {
    fn rec(space: &StateSpace, rows: &[Vec<(usize, f64)>], i: usize, idx: usize, w: f64, out: &mut [f64]) {
        if i == rows.len() {
            out[idx] += w;
            return;
        }
        let stride = space.stride(i);
        for &(b, v) in &rows[i] {
            rec(space, rows, i + 1, idx + b * stride, w * v, out);
        }
    }
    rec(space, rows, 0, 0, p, out);
}

#[derive(Debug, Clone)]
pub struct PathRun {
    /// Terminal state of each path.
    pub terminal: Vec<StateIndex>,
    /// Terminal counts per state.
    pub counts: Vec<u64>,
    /// Full grid trajectories of the first `keep_paths` paths.
    pub paths: Vec<Vec<StateIndex>>,
    pub manifest: SamplerManifest,
}

impl PathRun {
    pub fn empirical(&self) -> Vec<f64> {
        let n = self.terminal.len() as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }
}

/// Independent sampler paths; path `p` draws from substream `(seed, p)`.
pub fn run_sampler_paths(
    q_init: &DensePmf,
    sampler: SamplerKind,
    schedule: &Schedule,
    provider: &dyn ScoreProvider,
    n_paths: usize,
    seed: u64,
    keep_paths: usize,
) -> Result<PathRun> {
    check_setup(q_init, sampler, provider)?;
    let space = q_init.space().clone();
    let fields = fields_for(schedule, provider)?;
    let mut caches: Vec<HashMap<StateIndex, ActiveRows>> =
        vec![HashMap::new(); schedule.steps()];
    let mut terminal = Vec::with_capacity(n_paths);
    let mut counts = vec![0u64; space.len()];
    let mut paths = Vec::new();
    for p in 0..n_paths {
        let mut rng = substream(seed, p as u64);
        let mut x = sample_index(q_init.mass(), &mut rng);
        let mut traj = Vec::new();
        if p < keep_paths {
            traj.push(x);
        }
        for k in 0..schedule.steps() {
            let rows = match caches[k].get(&x) {
                Some(r) => r,
                None => {
                    let set = step_kernels(sampler, schedule, k, x, &fields[k])?;
                    caches[k].entry(x).or_insert(active_rows(&space, x, &set))
                }
            };
            let mut y = 0;
            for (i, row) in rows.iter().enumerate() {
                let w: Vec<f64> = row.iter().map(|&(_, v)| v).collect();
                let b = row[sample_index(&w, &mut rng)].0;
                y += b * space.stride(i);
            }
            x = y;
            if p < keep_paths {
                traj.push(x);
            }
        }
        counts[x] += 1;
        terminal.push(x);
        if p < keep_paths {
            paths.push(traj);
        }
    }
    let manifest = SamplerManifest {
        sampler,
        recipe: schedule.recipe().clone(),
        horizon: schedule.horizon(),
        early_stop: schedule.early_stop(),
        grid: schedule.grid().to_vec(),
        seed: Some(seed),
        score: provider.provenance(),
        prune_threshold: 0.0,
        discarded_mass: 0.0,
        n_paths: Some(n_paths),
    };
    Ok(PathRun {
        terminal,
        counts,
        paths,
        manifest,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson goodness of fit of `counts` against `probs`. Cells with expected
/// count below 5 are pooled; observations on zero-probability cells give p = 0.
pub fn chi_square_gof(counts: &[u64], probs: &[f64]) -> ChiSquareResult {
    let n: u64 = counts.iter().sum();
    let nf = n as f64;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut pool_obs, mut pool_exp) = (0.0, 0.0);
    for (&c, &p) in counts.iter().zip(probs) {
        if p <= 0.0 {
            if c > 0 {
                return ChiSquareResult {
                    statistic: f64::INFINITY,
                    dof: 0,
                    p_value: 0.0,
                };
            }
            continue;
        }
        let e = p * nf;
        if e < 5.0 {
            pool_obs += c as f64;
            pool_exp += e;
        } else {
            cells.push((c as f64, e));
        }
    }
    if pool_exp > 0.0 {
        cells.push((pool_obs, pool_exp));
    }
    let statistic: f64 = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = cells.len().saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        1.0 - ChiSquared::new(dof as f64).expect("dof > 0").cdf(statistic)
    };
    ChiSquareResult {
        statistic,
        dof,
        p_value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::forward_token_kernel;
    use crate::schedule::build_schedule;
    use crate::score::ExactScores;
    use crate::state_space::Alphabet;

    #[test]
    fn delta_example() {
        let d = delta_k(2.0, 0.5, 1.0);
        let direct = (1.5f64.exp() - 1.0)
            * ((2f64.exp() - 0.5f64.exp()) / (2f64.exp() - 1f64.exp())).ln();
        assert!((d - direct).abs() < 1e-13);
        assert!((d - 0.718).abs() < 5e-4, "{d}");
    }

    #[test]
    fn uniform_data_tau_leaping_matches_forward_kernel() {
        let sp = StateSpace::new(2, Alphabet::plain(3).unwrap()).unwrap();
        let q0 = DensePmf::uniform(sp.clone());
        let f = ScoreField::exact(&q0, NoiseKind::Uniform, 1.3).unwrap();
        let h = 0.37;
        let set = tau_leaping_step_uniform(4, &f, h).unwrap();
        let fk = forward_token_kernel(NoiseKind::Uniform, sp.alphabet(), h).unwrap();
        for k in &set.kernels {
            assert!((k - &fk.matrix).abs().max() < 1e-10);
        }
    }

    #[test]
    fn unmasked_coordinate_has_identity_row() {
        let sp = StateSpace::new(2, Alphabet::plain(2).unwrap()).unwrap();
        let q0 = DensePmf::uniform(sp);
        let f = ScoreField::exact(&q0, NoiseKind::Masking, 1.0).unwrap();
        let msp = f.space().clone();
        let x = msp.pack(&[1, 2]).unwrap();
        let set = truncated_ttl_step(x, &f, 0.2).unwrap();
        assert_eq!(set.kernels[0], DMatrix::identity(3, 3));
        let r = 2.0 / 1f64.exp_m1() / 2.0;
        assert!((set.kernels[1][(2, 2)] - (-0.2 * r).exp()).abs() < 1e-14);
    }

    #[test]
    fn last_step_leaves_no_mask() {
        let sp = StateSpace::new(2, Alphabet::plain(2).unwrap()).unwrap();
        let q0 = DensePmf::normalize(sp, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let f = ScoreField::exact(&q0, NoiseKind::Masking, 0.5).unwrap();
        let x = f.space().all_masked().unwrap();
        let set = modified_ttl_step(x, &f, 1.5, 2.0, 2.0, true).unwrap();
        for k in &set.kernels {
            assert_eq!(k[(2, 2)], 0.0);
        }
        assert!(modified_ttl_step(x, &f, 1.5, 2.0, 2.0, false).is_err());
    }

    #[test]
    fn identity_kernels_keep_pmf() {
        // A sampler run whose kernels are all identities: truncated τ-leaping
        // under masking from a fully unmasked start never moves.
        let sp = StateSpace::new(2, Alphabet::plain(2).unwrap()).unwrap();
        let q0 = DensePmf::normalize(sp, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let provider = ExactScores::new(&q0, NoiseKind::Masking).unwrap();
        let init = provider.data().clone();
        let sch = build_schedule(Recipe::Constant, 3.0, 5, 0.5).unwrap();
        let run = run_sampler_pmf(&init, SamplerKind::TruncatedTauLeaping, &sch, &provider, DEFAULT_PRUNE)
            .unwrap();
        assert_eq!(run.output.mass(), init.mass());
    }

    #[test]
    fn sampler_kind_compatibility() {
        assert!(SamplerKind::TauLeaping.check(NoiseKind::Masking).is_err());
        assert!(SamplerKind::ModifiedTruncated.check(NoiseKind::Uniform).is_err());
        assert!(SamplerKind::TruncatedTauLeaping.check(NoiseKind::Uniform).is_ok());
    }

    #[test]
    fn chi_square_basics() {
        let r = chi_square_gof(&[250, 250, 250, 250], &[0.25; 4]);
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        assert_eq!(chi_square_gof(&[1, 0], &[0.0, 1.0]).p_value, 0.0);
        assert!(chi_square_gof(&[900, 100], &[0.5, 0.5]).p_value < 1e-10);
    }

    #[test]
    fn masking_initial_distribution() {
        let p = initial_distribution(NoiseKind::Masking, 2, 3, 1.0).unwrap();
        let all = p.space().all_masked().unwrap();
        assert!((p.prob(all) - (1.0 - (-1f64).exp()).powi(2)).abs() < 1e-15);
        let u = initial_distribution(NoiseKind::Uniform, 2, 3, 1.0).unwrap();
        assert!((u.prob(0) - 1.0 / 9.0).abs() < 1e-16);
    }
}
