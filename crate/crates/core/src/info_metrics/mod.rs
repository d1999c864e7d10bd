//! Exact information quantities over dense pmfs: entropy, KL, total
//! variation, conditional mutual information, the masking-process
//! correlation profile I(t) with ℬ, 𝒞, 𝒟, and the uniform-process φ(t).
//!
//! I(t) sums conditional mutual informations over ordered pairs i ≠ j, so
//! every unordered pair contributes twice.

mod correlation;
mod martingale;
mod phi;

pub use correlation::{
    correlations_direct, correlations_quadrature, i_of_masked, i_of_t, CorrelationProfile, IntegralEstimate,
    SubsetEntropies,
};
pub use martingale::{check_control_at_t, check_martingales, ControlReport, MartingaleReport};
pub use phi::{
    kl_to_uniform, log_sobolev_holds, max_log_score_excess, phi, phi_profile, phi_pushforward,
    t3_sim_sides, PhiProfile,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state_space::DensePmf;

/// −Σ p log p of a raw mass vector, with 0 log 0 = 0.
pub fn entropy_of(mass: &[f64]) -> f64 {
    mass.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}

/// Shannon entropy in nats.
pub fn entropy(p: &DensePmf) -> f64 {
    entropy_of(p.mass())
}

/// KL divergence value; `Infinite` marks mass of p on a q-null state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Kl {
    Finite(f64),
    Infinite,
}

impl Kl {
    pub fn is_finite(&self) -> bool {
        matches!(self, Kl::Finite(_))
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            Kl::Finite(v) => Some(*v),
            Kl::Infinite => None,
        }
    }

    /// The value with `Infinite` mapped to +∞.
    pub fn as_f64(&self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

fn check_same_space(p: &DensePmf, q: &DensePmf) -> Result<()> {
    if p.space() != q.space() {
        return Err(Error::Validation("pmfs live on different state spaces".into()));
    }
    Ok(())
}

/// h(1 + u) = (1 + u) log(1 + u) − u, accurate for small |u|.
pub(crate) fn xlogx_excess(u: f64) -> f64 {
    if u.abs() < 0.05 {
        // Σ_{n≥2} (−u)^n / (n(n−1))
        let mut term = u * u;
        let mut total = 0.0;
        for n in 2..14 {
            total += term / (n * (n - 1)) as f64;
            term *= -u;
        }
        total
    } else {
        (1.0 + u) * u.ln_1p() - u
    }
}

/// Σ p log(p/q), summed as Σ q h(p/q) + Σ_{p=0} q so every term is
/// nonnegative; both arguments are taken to be normalized.
pub fn kl(p: &DensePmf, q: &DensePmf) -> Result<Kl> {
    check_same_space(p, q)?;
    let mut total = 0.0;
    for (&a, &b) in p.mass().iter().zip(q.mass()) {
        if a > 0.0 {
            if b <= 0.0 {
                return Ok(Kl::Infinite);
            }
            total += b * xlogx_excess((a - b) / b);
        } else {
            total += b;
        }
    }
    Ok(Kl::Finite(total))
}

/// Total variation distance ½ Σ |p − q|.
pub fn tv(p: &DensePmf, q: &DensePmf) -> Result<f64> {
    check_same_space(p, q)?;
    Ok(0.5 * p.mass().iter().zip(q.mass()).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Entropy of the marginal on all coordinates except `excluded`.
pub fn entropy_excluding(p: &DensePmf, excluded: &[usize]) -> f64 {
    let coords: Vec<usize> = (0..p.space().dim()).filter(|i| !excluded.contains(i)).collect();
    entropy_of(&p.marginal(&coords))
}

/// I(x^i; x^j | x^{−(i,j)}) = H(x^{−i}) + H(x^{−j}) − H(x^{−(i,j)}) − H(x).
pub fn conditional_mi(p: &DensePmf, i: usize, j: usize) -> Result<f64> {
    let d = p.space().dim();
    if i == j || i >= d || j >= d {
        return Err(Error::Domain(format!("need distinct coordinates below {d}, got {i}, {j}")));
    }
    let v = entropy_excluding(p, &[i]) + entropy_excluding(p, &[j])
        - entropy_excluding(p, &[i, j])
        - entropy(p);
    Ok(v.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state_space::{Alphabet, StateSpace};
    use crate::targets::{build, DistributionSpec};

    fn bern(p: f64) -> DensePmf {
        let sp = StateSpace::new(1, Alphabet::plain(2).unwrap()).unwrap();
        DensePmf::new(sp, vec![1.0 - p, p]).unwrap()
    }

    #[test]
    fn entropy_examples() {
        let sp = StateSpace::new(3, Alphabet::plain(3).unwrap()).unwrap();
        assert_eq!(entropy(&DensePmf::point_mass(sp.clone(), 4).unwrap()), 0.0);
        assert!((entropy(&DensePmf::uniform(sp)) - 27f64.ln()).abs() < 1e-14);
        let h = -(0.3f64 * 0.3f64.ln() + 0.7 * 0.7f64.ln());
        assert!((entropy(&bern(0.3)) - h).abs() < 1e-15);
        assert!((h - 0.61086).abs() < 1e-5);
    }

    #[test]
    fn kl_examples() {
        let p = bern(0.3);
        assert_eq!(kl(&p, &p).unwrap(), Kl::Finite(0.0));
        let sp = StateSpace::new(2, Alphabet::plain(3).unwrap()).unwrap();
        let d = DensePmf::point_mass(sp.clone(), 2).unwrap();
        let u = DensePmf::uniform(sp);
        assert!((kl(&d, &u).unwrap().as_f64() - 9f64.ln()).abs() < 1e-14);
        assert_eq!(kl(&u, &d).unwrap(), Kl::Infinite);
        let v = 0.3 * (0.3f64 / 0.5).ln() + 0.7 * (0.7f64 / 0.5).ln();
        let got = kl(&bern(0.3), &bern(0.5)).unwrap().as_f64();
        assert!((got - v).abs() < 1e-15 && (got - 0.08228).abs() < 1e-5);
    }

    #[test]
    fn excess_series_matches_direct_form() {
        for u in [-0.049, -0.01, 0.02, 0.049] {
            let direct = (1.0 + u) * f64::ln_1p(u) - u;
            assert!((xlogx_excess(u) - direct).abs() <= 1e-11 * direct);
        }
        // where the direct form cancels, compare with the leading terms
        let u = 1e-6;
        let lead = u * u / 2.0 - u * u * u / 6.0;
        assert!((xlogx_excess(u) - lead).abs() <= 1e-12 * lead);
        assert!((xlogx_excess(8.0) - (9.0 * 9f64.ln() - 8.0)).abs() < 1e-14);
        assert_eq!(xlogx_excess(0.0), 0.0);
    }

    #[test]
    fn tv_and_space_mismatch() {
        assert!((tv(&bern(0.3), &bern(0.5)).unwrap() - 0.2).abs() < 1e-15);
        let sp = StateSpace::new(2, Alphabet::plain(2).unwrap()).unwrap();
        assert!(kl(&bern(0.3), &DensePmf::uniform(sp)).is_err());
    }

    #[test]
    fn cmi_examples() {
        let sp = StateSpace::new(3, Alphabet::plain(2).unwrap()).unwrap();
        let prod = DensePmf::product(sp, &[vec![0.3, 0.7], vec![0.5, 0.5], vec![0.9, 0.1]]).unwrap();
        for (i, j) in [(0, 1), (1, 2), (2, 0)] {
            assert!(conditional_mi(&prod, i, j).unwrap().abs() < 1e-14);
        }
        let pm = build(&DistributionSpec::p_m(4)).unwrap();
        assert!(conditional_mi(&pm, 0, 3).unwrap().abs() < 1e-15);
        assert!(conditional_mi(&pm, 1, 1).is_err());
        // XOR on 3 bits: any two coordinates are determined jointly given the third
        let x = build(&DistributionSpec::Xor { d: 3 }).unwrap();
        assert!((conditional_mi(&x, 0, 1).unwrap() - std::f64::consts::LN_2).abs() < 1e-14);
    }
}
