use serde::{Deserialize, Serialize};

use super::{kl, xlogx_excess};
use crate::error::{Error, Result};
use crate::forward::{alpha, propagate_forward, NoiseKind};
use crate::state_space::DensePmf;

fn uniform_marginal(q0: &DensePmf, t: f64) -> Result<DensePmf> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("φ needs t > 0, got {t}")));
    }
    propagate_forward(q0, NoiseKind::Uniform, t)
}

/// Calls `f(q(x), q(x ⊕_i c))` for every state and every shift c ≠ 0.
fn for_each_shift_pair(q: &DensePmf, mut f: impl FnMut(f64, f64)) -> Result<()> {
    let sp = q.space();
    for (x, &p) in q.mass().iter().enumerate() {
        for i in 0..sp.dim() {
            for c in 1..sp.vocab_size() {
                f(p, q.prob(sp.shift(x, i, c)?));
            }
        }
    }
    Ok(())
}

/// φ(t) = (1/S) E_{x∼q_t} Σ_{ham(y,x)=1} −log s_t(y, x) for uniform noise.
///
/// Pairing the shifts c and −c gives ½ Σ (q(x) − q(y)) log(q(x)/q(y)), a sum
/// of nonnegative terms.
pub fn phi(q0: &DensePmf, t: f64) -> Result<f64> {
    let q = uniform_marginal(q0, t)?;
    let mut total = 0.0;
    for_each_shift_pair(&q, |px, py| total += (px - py) * ((px - py) / py).ln_1p())?;
    Ok(0.5 * total / q.space().vocab_size() as f64)
}

/// φ(t) as (1/S) Σ_{i,c} KL(q_t ‖ (N_{i,c})_# q_t), N_{i,c} the shift by c.
pub fn phi_pushforward(q0: &DensePmf, t: f64) -> Result<f64> {
    let q = uniform_marginal(q0, t)?;
    let sp = q.space().clone();
    let mut total = 0.0;
    for i in 0..sp.dim() {
        for c in 1..sp.vocab_size() {
            let mut pushed = vec![0.0; sp.len()];
            for (x, &p) in q.mass().iter().enumerate() {
                pushed[sp.shift(x, i, c)?] += p;
            }
            let pushed = DensePmf::new(sp.clone(), pushed)?;
            total += kl(&q, &pushed)?.as_f64();
        }
    }
    Ok(total / sp.vocab_size() as f64)
}

/// KL(q_t ‖ Unif) under uniform noise.
pub fn kl_to_uniform(q0: &DensePmf, t: f64) -> Result<f64> {
    let q = propagate_forward(q0, NoiseKind::Uniform, t)?;
    let u = DensePmf::uniform(q.space().clone());
    Ok(kl(&q, &u)?.as_f64())
}

/// KL(q_t ‖ Unif) ≤ e^{−t} KL(q_0 ‖ Unif) (1 + 1e-9).
pub fn log_sobolev_holds(q0: &DensePmf, t: f64) -> Result<bool> {
    let lhs = kl_to_uniform(q0, t)?;
    let rhs = (-t).exp() * kl_to_uniform(q0, 0.0)? * (1.0 + 1e-9);
    Ok(lhs <= rhs)
}

/// max |log s_t| − log(1/α_t); nonpositive when the score bound holds.
pub fn max_log_score_excess(q0: &DensePmf, t: f64) -> Result<f64> {
    let q = uniform_marginal(q0, t)?;
    let bound = -alpha(t, q.space().vocab_size())?.ln();
    let mut worst = f64::NEG_INFINITY;
    for_each_shift_pair(&q, |px, py| worst = worst.max((py / px).ln().abs()))?;
    Ok(worst - bound)
}

/// (E Σ h(s), E Σ −log s) with h(x) = x log x − x + 1, both exact.
pub fn t3_sim_sides(q0: &DensePmf, t: f64) -> Result<(f64, f64)> {
    let q = uniform_marginal(q0, t)?;
    let mut lhs = 0.0;
    for_each_shift_pair(&q, |px, py| lhs += px * xlogx_excess((py - px) / px))?;
    let rhs = phi(q0, t)? * q.space().vocab_size() as f64;
    Ok((lhs, rhs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiProfile {
    pub samples: Vec<(f64, f64)>,
    pub kl_trace: Vec<(f64, f64)>,
}

impl PhiProfile {
    /// Largest increase φ(t_{j+1}) − φ(t_j) between consecutive samples.
    pub fn max_increase(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| w[1].1 - w[0].1)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn phi_profile(q0: &DensePmf, times: &[f64]) -> Result<PhiProfile> {
    let mut samples = Vec::with_capacity(times.len());
    let mut kl_trace = Vec::with_capacity(times.len());
    for &t in times {
        samples.push((t, phi(q0, t)?));
        kl_trace.push((t, kl_to_uniform(q0, t)?));
    }
    Ok(PhiProfile { samples, kl_trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state_space::{Alphabet, StateSpace};

    fn skewed() -> DensePmf {
        let sp = StateSpace::new(2, Alphabet::plain(3).unwrap()).unwrap();
        DensePmf::normalize(sp, vec![5.0, 1.0, 0.0, 2.0, 0.5, 0.0, 0.0, 3.0, 1.0]).unwrap()
    }

    #[test]
    fn uniform_data_has_zero_phi() {
        let sp = StateSpace::new(3, Alphabet::plain(3).unwrap()).unwrap();
        let u = DensePmf::uniform(sp);
        for t in [0.1, 1.0, 4.0] {
            assert!(phi(&u, t).unwrap().abs() < 1e-14);
        }
        assert!(phi(&u, 0.0).is_err());
    }

    #[test]
    fn phi_is_minus_kl_derivative() {
        let q = skewed();
        for t in [0.2, 0.7, 2.0] {
            let h = 1e-4;
            let fd = -(kl_to_uniform(&q, t + h).unwrap() - kl_to_uniform(&q, t - h).unwrap()) / (2.0 * h);
            let p = phi(&q, t).unwrap();
            assert!((fd - p).abs() <= 1e-4 * p, "t={t}: {fd} vs {p}");
            let push = phi_pushforward(&q, t).unwrap();
            assert!((push - p).abs() <= 1e-10 * p);
            let (a, b) = t3_sim_sides(&q, t).unwrap();
            assert!((a - b).abs() <= 1e-10 * b);
            assert!(max_log_score_excess(&q, t).unwrap() <= 1e-12);
            assert!(log_sobolev_holds(&q, t).unwrap());
        }
    }

    #[test]
    fn profile_decreases() {
        let times: Vec<f64> = (1..=20).map(|j| 0.25 * j as f64).collect();
        let prof = phi_profile(&skewed(), &times).unwrap();
        assert!(prof.max_increase() <= 1e-9);
        assert!(prof.samples.iter().all(|&(_, v)| v >= 0.0));
    }
}
