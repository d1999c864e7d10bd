//! Exact scores s_t(y, x) = q_t(y)/q_t(x) on Hamming-1 pairs, the score
//! entropy loss, and reproducible score-corruption models.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{alpha, propagate_forward, to_process_alphabet, NoiseKind};
use crate::rng::hash_key;
use crate::schedule::Schedule;
use crate::state_space::{DensePmf, StateIndex, StateSpace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CorruptionKind {
    /// Multiplies every score by exp(σ Z) with Z standard normal.
    LogNormal { sigma: f64 },
    /// Multiplies every score by a fixed factor.
    ConstantBias { factor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionModel {
    pub kind: CorruptionKind,
    pub seed: u64,
}

impl CorruptionModel {
    pub fn log_normal(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::Config(format!("sigma must be finite and nonnegative, got {sigma}")));
        }
        Ok(Self {
            kind: CorruptionKind::LogNormal { sigma },
            seed,
        })
    }

    pub fn constant_bias(factor: f64) -> Result<Self> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::Config(format!("bias factor must be positive, got {factor}")));
        }
        Ok(Self {
            kind: CorruptionKind::ConstantBias { factor },
            seed: 0,
        })
    }

    /// Multiplicative factor for one score entry; a pure function of its key.
    pub fn factor(&self, stream: u64, x: StateIndex, i: usize, b: usize) -> f64 {
        match self.kind {
            CorruptionKind::ConstantBias { factor } => factor,
            CorruptionKind::LogNormal { sigma } => {
                if sigma == 0.0 {
                    return 1.0;
                }
                let key = hash_key(&[self.seed, stream, x as u64, i as u64, b as u64]);
                let z: f64 = ChaCha8Rng::seed_from_u64(key).sample(StandardNormal);
                (sigma * z).exp()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Provenance {
    Exact,
    /// `stream` selects an independent draw of the corruption noise.
    Corrupted { model: CorruptionModel, stream: u64 },
}

/// Score evaluator at a fixed forward time.
#[derive(Debug, Clone)]
pub struct ScoreField {
    kind: NoiseKind,
    time: f64,
    qt: Arc<DensePmf>,
    provenance: Provenance,
}

impl ScoreField {
    /// Exact field at forward time `t`, backed by the propagated marginal q_t.
    pub fn exact(q0: &DensePmf, kind: NoiseKind, t: f64) -> Result<Self> {
        let qt = propagate_forward(q0, kind, t)?;
        Ok(Self {
            kind,
            time: t,
            qt: Arc::new(qt),
            provenance: Provenance::Exact,
        })
    }

    /// The same field with corruption applied on top of the exact values.
    pub fn corrupted(&self, model: CorruptionModel, stream: u64) -> Self {
        Self {
            provenance: Provenance::Corrupted { model, stream },
            ..self.clone()
        }
    }

    /// Exact counterpart of this field.
    pub fn exact_part(&self) -> Self {
        Self {
            provenance: Provenance::Exact,
            ..self.clone()
        }
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn marginal(&self) -> &DensePmf {
        &self.qt
    }

    pub fn space(&self) -> &StateSpace {
        self.qt.space()
    }

    /// Whether (x ⊙_i b, x) is a pair on which the reverse process can move.
    pub fn is_admissible(&self, x: StateIndex, i: usize, b: usize) -> bool {
        let sp = self.space();
        if i >= sp.dim() || b >= sp.n_symbols() {
            return false;
        }
        let a = sp.digit(x, i);
        match self.kind {
            NoiseKind::Uniform => a != b,
            NoiseKind::Masking => sp.alphabet().is_mask(a) && !sp.alphabet().is_mask(b),
        }
    }

    fn exact_value(&self, x: StateIndex, i: usize, b: usize) -> Result<f64> {
        if !self.is_admissible(x, i, b) {
            return Err(Error::Domain(format!(
                "pair (x={x}, i={i}, b={b}) is not a reverse transition"
            )));
        }
        let px = self.qt.prob(x);
        if px <= 0.0 {
            return Err(Error::SingularScore(format!(
                "q_t(x) = 0 at x={x}, t={}",
                self.time
            )));
        }
        let y = self.space().substitute_unchecked(x, i, b);
        Ok(self.qt.prob(y) / px)
    }

    /// s(x ⊙_i b, x). Under masking, coordinate `i` must be masked in `x`
    /// and `b` a token.
    pub fn value(&self, x: StateIndex, i: usize, b: usize) -> Result<f64> {
        let s = self.exact_value(x, i, b)?;
        Ok(match self.provenance {
            Provenance::Exact => s,
            Provenance::Corrupted { model, stream } => s * model.factor(stream, x, i, b),
        })
    }

    /// s(x ⊕_i c, x) on an additive alphabet.
    pub fn value_shift(&self, x: StateIndex, i: usize, c: usize) -> Result<f64> {
        let y = self.space().shift(x, i, c)?;
        self.value(x, i, self.space().digit(y, i))
    }

    /// Tabulates the field over every state with positive mass.
    pub fn dump(&self) -> Result<Vec<ScoreDumpEntry>> {
        let sp = self.space().clone();
        let mut out = Vec::new();
        for x in 0..sp.len() {
            if self.qt.prob(x) <= 0.0 {
                continue;
            }
            for i in 0..sp.dim() {
                for b in 0..sp.n_symbols() {
                    if self.is_admissible(x, i, b) {
                        out.push(ScoreDumpEntry {
                            state: sp.unpack(x),
                            coordinate: i,
                            target: b,
                            value: self.value(x, i, b)?,
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

/// One row of a tabulated score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDumpEntry {
    pub state: Vec<usize>,
    pub coordinate: usize,
    pub target: usize,
    pub value: f64,
}

/// Calls `f(i, b, rate)` for every y = x ⊙_i b with forward rate Q(y, x) > 0.
pub fn for_each_reverse_pair(
    space: &StateSpace,
    kind: NoiseKind,
    x: StateIndex,
    mut f: impl FnMut(usize, usize, f64),
) {
    let s = space.vocab_size();
    for i in 0..space.dim() {
        let a = space.digit(x, i);
        match kind {
            NoiseKind::Uniform => {
                for b in (0..s).filter(|&b| b != a) {
                    f(i, b, 1.0 / s as f64);
                }
            }
            NoiseKind::Masking => {
                if space.alphabet().is_mask(a) {
                    for b in 0..s {
                        f(i, b, 1.0);
                    }
                }
            }
        }
    }
}

/// Closed-form uniform score E α^{ham(y,x0)} / E α^{ham(x,x0)} with y = x ⊕_i c.
pub fn exact_score_uniform(
    q0: &DensePmf,
    t: f64,
    x: StateIndex,
    i: usize,
    c: usize,
) -> Result<f64> {
    let sp = q0.space();
    NoiseKind::Uniform.check(sp.alphabet())?;
    let y = sp.shift(x, i, c)?;
    let a = alpha(t, sp.vocab_size())?;
    let (mut num, mut den) = (0.0, 0.0);
    for (z, &p) in q0.mass().iter().enumerate() {
        if p > 0.0 {
            num += p * a.powi(sp.hamming(y, z) as i32);
            den += p * a.powi(sp.hamming(x, z) as i32);
        }
    }
    if den <= 0.0 {
        return Err(Error::SingularScore(format!("zero denominator at x={x}, t={t}")));
    }
    Ok(num / den)
}

/// Closed-form masking score (e^t − 1)^{-1} q0(x ⊙_i a)/q0(x), where q0 of a
/// partially masked state is the marginal of its unmasked coordinates.
pub fn exact_score_masking(
    q0: &DensePmf,
    t: f64,
    x: StateIndex,
    i: usize,
    a: usize,
) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain("masking score needs t > 0".into()));
    }
    let q = to_process_alphabet(q0, NoiseKind::Masking)?;
    let sp = q.space();
    let mask = sp.vocab_size();
    if sp.digit(x, i) != mask || a >= mask {
        return Err(Error::Domain("coordinate must be masked and target a token".into()));
    }
    let y = sp.substitute_unchecked(x, i, a);
    let den = masked_marginal(&q, x);
    if den <= 0.0 {
        return Err(Error::SingularScore(format!("data marginal of x={x} is zero")));
    }
    Ok(masked_marginal(&q, y) / den / t.exp_m1())
}

/// Data probability of the unmasked pattern of `x`.
fn masked_marginal(q: &DensePmf, x: StateIndex) -> f64 {
    let sp = q.space();
    let mask = sp.vocab_size();
    let fixed: Vec<(usize, usize)> = (0..sp.dim())
        .map(|i| (i, sp.digit(x, i)))
        .filter(|&(_, c)| c != mask)
        .collect();
    q.mass()
        .iter()
        .enumerate()
        .filter(|(z, &p)| p > 0.0 && fixed.iter().all(|&(i, c)| sp.digit(*z, i) == c))
        .map(|(_, &p)| p)
        .sum()
}

/// D(a, b) = a/b − 1 − log(a/b).
pub fn bregman(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0) || !(b > 0.0) {
        return Err(Error::Domain(format!("Bregman arguments must be positive, got ({a}, {b})")));
    }
    let r = a / b;
    Ok(r - 1.0 - r.ln())
}

/// s · D(ŝ, s), extended continuously to s = 0 (value ŝ) and ŝ = 0 (+∞).
pub fn weighted_bregman(s_hat: f64, s: f64) -> f64 {
    if s == 0.0 {
        s_hat
    } else if s_hat == 0.0 {
        f64::INFINITY
    } else {
        let r = s_hat / s;
        s * (r - 1.0 - r.ln())
    }
}

/// E_{x∼q_t} Σ_{y≠x} Q(y,x) s(y,x) D(ŝ(y,x), s(y,x)).
pub fn score_entropy_loss(s_hat: &ScoreField, s: &ScoreField, q_t: &DensePmf) -> Result<f64> {
    if s_hat.kind() != s.kind() || (s_hat.time() - s.time()).abs() > 1e-12 {
        return Err(Error::Validation("score fields disagree on kind or time".into()));
    }
    let sp = q_t.space();
    let mut total = 0.0;
    for (x, &p) in q_t.mass().iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        let mut err = None;
        let mut acc = 0.0;
        for_each_reverse_pair(sp, s.kind(), x, |i, b, rate| {
            match (s_hat.value(x, i, b), s.value(x, i, b)) {
                (Ok(sh), Ok(sv)) => acc += rate * weighted_bregman(sh, sv),
                (Err(e), _) | (_, Err(e)) => err = Some(e),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        total += p * acc;
    }
    Ok(total)
}

/// Supplies the score field used at each grid point of a sampler run.
pub trait ScoreProvider: Sync {
    /// Field for grid point `step`, evaluated at forward time `time`.
    fn field(&self, step: usize, time: f64) -> Result<ScoreField>;
    fn provenance(&self) -> ProviderInfo;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionScope {
    /// A fresh noise draw at every grid point.
    #[default]
    PerGridPoint,
    /// One noise draw shared by all grid points.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderInfo {
    pub kind: NoiseKind,
    pub corruption: Option<CorruptionModel>,
    pub scope: Option<CorruptionScope>,
}

/// Exact scores of a data distribution.
#[derive(Debug, Clone)]
pub struct ExactScores {
    q0: Arc<DensePmf>,
    kind: NoiseKind,
}

impl ExactScores {
    pub fn new(q0: &DensePmf, kind: NoiseKind) -> Result<Self> {
        Ok(Self {
            q0: Arc::new(to_process_alphabet(q0, kind)?),
            kind,
        })
    }

    pub fn data(&self) -> &DensePmf {
        &self.q0
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }
}

impl ScoreProvider for ExactScores {
    fn field(&self, _step: usize, time: f64) -> Result<ScoreField> {
        ScoreField::exact(&self.q0, self.kind, time)
    }

    fn provenance(&self) -> ProviderInfo {
        ProviderInfo {
            kind: self.kind,
            corruption: None,
            scope: None,
        }
    }
}

/// Exact scores passed through a corruption model.
#[derive(Debug, Clone)]
pub struct CorruptedScores {
    pub exact: ExactScores,
    pub model: CorruptionModel,
    pub scope: CorruptionScope,
}

impl ScoreProvider for CorruptedScores {
    fn field(&self, step: usize, time: f64) -> Result<ScoreField> {
        let stream = match self.scope {
            CorruptionScope::PerGridPoint => step as u64,
            CorruptionScope::Fixed => 0,
        };
        Ok(self.exact.field(step, time)?.corrupted(self.model, stream))
    }

    fn provenance(&self) -> ProviderInfo {
        ProviderInfo {
            kind: self.exact.kind,
            corruption: Some(self.model),
            scope: Some(self.scope),
        }
    }
}

/// ε_score = Σ_k (t_{k+1} − t_k) ℒ_SE(T − t_k, ŝ, s).
pub fn assumption1_total(
    schedule: &Schedule,
    s_hat: &dyn ScoreProvider,
    exact: &dyn ScoreProvider,
) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..schedule.steps() {
        let (tk, tk1) = (schedule.grid()[k], schedule.grid()[k + 1]);
        let time = schedule.horizon() - tk;
        let sh = s_hat.field(k, time)?;
        let s = exact.field(k, time)?;
        total += (tk1 - tk) * score_entropy_loss(&sh, &s, s.marginal())?;
    }
    Ok(total)
}
