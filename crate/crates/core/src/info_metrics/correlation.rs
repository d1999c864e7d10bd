use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{conditional_mi, entropy, entropy_excluding, entropy_of};
use crate::error::{Error, Result};
use crate::forward::{propagate_forward, NoiseKind};
use crate::quadrature::integrate;
use crate::state_space::DensePmf;

/// Largest dimension for which all 2^d subset marginals are tabulated.
const SUBSET_MAX_DIM: usize = 20;
const QUAD_MAX_PANELS: usize = 4000;

fn data_pmf(q0: &DensePmf) -> Result<DensePmf> {
    q0.to_plain_alphabet()
}

/// I(t) by propagating q0 through the masking process and summing
/// conditional mutual informations over ordered pairs.
pub fn i_of_t(q0: &DensePmf, t: f64) -> Result<f64> {
    let qt = propagate_forward(q0, NoiseKind::Masking, t)?;
    let d = qt.space().dim();
    let h = entropy(&qt);
    let h_i: Vec<f64> = (0..d).map(|i| entropy_excluding(&qt, &[i])).collect();
    let mut total = 0.0;
    for i in 0..d {
        for j in i + 1..d {
            let v = h_i[i] + h_i[j] - entropy_excluding(&qt, &[i, j]) - h;
            total += 2.0 * v.max(0.0);
        }
    }
    Ok(total)
}

/// ℬ = H(x) − Σ_i H(x^i | x^{−i}) and 𝒞 = Σ_i H(x^i) − H(x) by enumeration.
pub fn correlations_direct(q0: &DensePmf) -> Result<(f64, f64)> {
    let q = data_pmf(q0)?;
    let d = q.space().dim();
    let h = entropy(&q);
    let cond: f64 = (0..d).map(|i| h - entropy_excluding(&q, &[i])).sum();
    let single: f64 = (0..d).map(|i| entropy_of(&q.marginal(&[i]))).sum();
    Ok((h - cond, single - h))
}

/// Entropies H0(U) of every coordinate subset of the data law.
///
/// Masking keeps each coordinate with probability r = e^{−t}, independently
/// of the data, so every entropy of the masked law is a binomial mixture of
/// the H0(U). Summing the four entropies of each conditional mutual
/// information over ordered pairs leaves, with S_m = Σ_{|U|=m} H0(U),
///
/// I = Σ_m S_m [2m(d−m) r^{m+1}(1−r)^{d−m−1} − (d−m)(d−m−1) r^{m+2}(1−r)^{d−m−2}
///              − m(m−1) r^m (1−r)^{d−m}].
#[derive(Debug, Clone)]
pub struct SubsetEntropies {
    dim: usize,
    vocab_size: usize,
    by_subset: Vec<f64>,
    level_sums: Vec<f64>,
}

impl SubsetEntropies {
    pub fn new(q0: &DensePmf) -> Result<Self> {
        let q = data_pmf(q0)?;
        let d = q.space().dim();
        if d > SUBSET_MAX_DIM {
            return Err(Error::Resource(format!("subset table for d = {d} is too large")));
        }
        let support: Vec<(Vec<usize>, f64)> = q
            .mass()
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(x, &p)| (q.space().unpack(x), p))
            .collect();
        let s = q.space().vocab_size();
        let mut by_subset = vec![0.0; 1 << d];
        let mut level_sums = vec![0.0; d + 1];
        let mut table = Vec::new();
        for (mask, slot) in by_subset.iter_mut().enumerate().skip(1) {
            let coords: Vec<usize> = (0..d).filter(|&i| mask >> i & 1 == 1).collect();
            table.clear();
            table.resize(s.pow(coords.len() as u32), 0.0);
            for (sym, p) in &support {
                let idx = coords.iter().rev().fold(0, |acc, &i| acc * s + sym[i]);
                table[idx] += p;
            }
            *slot = entropy_of(&table);
            level_sums[coords.len()] += *slot;
        }
        Ok(Self {
            dim: d,
            vocab_size: s,
            by_subset,
            level_sums,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// H0(U) for the subset encoded by the bitmask `mask`.
    pub fn subset_entropy(&self, mask: usize) -> f64 {
        self.by_subset[mask]
    }

    /// I as a function of the keep probability r = e^{−t}.
    pub fn i_of_keep(&self, r: f64) -> f64 {
        let d = self.dim as i32;
        let q = 1.0 - r;
        let mut total = 0.0;
        for (m, &sm) in self.level_sums.iter().enumerate() {
            if sm == 0.0 {
                continue;
            }
            let m = m as i32;
            let out = d - m;
            let mut w = -((m * (m - 1)) as f64) * r.powi(m) * q.powi(out);
            if out >= 1 {
                w += (2 * m * out) as f64 * r.powi(m + 1) * q.powi(out - 1);
            }
            if out >= 2 {
                w -= (out * (out - 1)) as f64 * r.powi(m + 2) * q.powi(out - 2);
            }
            total += sm * w;
        }
        total.max(0.0)
    }

    pub fn i_of_t(&self, t: f64) -> f64 {
        self.i_of_keep((-t).exp())
    }

    /// H(x_t) of the masked law.
    pub fn masked_entropy(&self, t: f64) -> f64 {
        let r = (-t).exp();
        let hb = entropy_of(&[r, 1.0 - r]);
        let d = self.dim as i32;
        let mix: f64 = (1..self.by_subset.len())
            .map(|mask| {
                let m = (mask as u32).count_ones() as i32;
                r.powi(m) * (1.0 - r).powi(d - m) * self.by_subset[mask]
            })
            .sum();
        self.dim as f64 * hb + mix
    }

    /// ℬ = S_{d−1} − (d − 1) H(x).
    pub fn b(&self) -> f64 {
        let d = self.dim;
        self.level_sums[d - 1] - (d as f64 - 1.0) * self.level_sums[d]
    }

    /// 𝒞 = S_1 − H(x).
    pub fn c(&self) -> f64 {
        self.level_sums[1] - self.level_sums[self.dim]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegralEstimate {
    pub value: f64,
    /// Quadrature error estimate plus the truncation tail bound.
    pub error: f64,
    pub panels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationProfile {
    pub target: String,
    pub i_samples: Vec<(f64, f64)>,
    pub b_direct: f64,
    pub c_direct: f64,
    pub b_quad: IntegralEstimate,
    pub c_quad: IntegralEstimate,
    pub d_quad: IntegralEstimate,
    pub t_max: f64,
    pub tail_bound: f64,
    pub rel_tol: f64,
}

impl CorrelationProfile {
    /// CSV with columns `t,value` holding the I(t) samples.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "t,value")?;
        for (t, v) in &self.i_samples {
            writeln!(w, "{t},{v}")?;
        }
        Ok(())
    }
}

/// ℬ, 𝒞 and 𝒟 as integrals of I after the substitution u = e^{−t}:
/// ℬ = ∫ I/u du, 𝒞 = ∫ (1−u) I/u² du, 𝒟 = ∫ min(1, −ln u) I/u du.
///
/// Conditional mutual information of a masked pair is at most
/// u² log S, so the part of 𝒞 below u_min is at most u_min·d(d−1)·log S;
/// u_min is chosen so that this tail stays below half the tolerance.
pub fn correlations_quadrature(q0: &DensePmf, target: &str, rel_tol: f64) -> Result<CorrelationProfile> {
    if !(rel_tol >= 1e-6) {
        return Err(Error::Config(format!("rel_tol must be at least 1e-6, got {rel_tol}")));
    }
    let se = SubsetEntropies::new(q0)?;
    let d = se.dim() as f64;
    let k = d * (d - 1.0) * (se.vocab_size() as f64).ln();
    let kink = (-1.0f64).exp();
    let f_b = |u: f64| se.i_of_keep(u) / u;
    let f_c = |u: f64| (1.0 - u) * se.i_of_keep(u) / (u * u);
    let f_d = |u: f64| (-u.ln()).min(1.0) * se.i_of_keep(u) / u;

    let abs_floor = 1e-14;
    let piecewise = |f: &dyn Fn(f64) -> f64, lo: f64| -> Result<IntegralEstimate> {
        let a = integrate(f, lo, kink, abs_floor, rel_tol * 0.25, QUAD_MAX_PANELS)?;
        let b = integrate(f, kink, 1.0, abs_floor, rel_tol * 0.25, QUAD_MAX_PANELS)?;
        Ok(IntegralEstimate {
            value: a.value + b.value,
            error: a.error + b.error,
            panels: a.panels + b.panels,
        })
    };

    let u_probe = (-10.0f64).exp();
    let c_partial = piecewise(&f_c, u_probe)?.value;
    let u_min = if c_partial > 0.0 {
        (0.5 * rel_tol * c_partial / k).min(u_probe).max(1e-300)
    } else {
        u_probe
    };
    let t_max = -u_min.ln();
    let tail_c = k * u_min;
    let tail_b = 0.5 * k * u_min * u_min;

    let mut b_quad = piecewise(&f_b, u_min)?;
    let mut c_quad = piecewise(&f_c, u_min)?;
    let mut d_quad = piecewise(&f_d, u_min)?;
    b_quad.error += tail_b;
    c_quad.error += tail_c;
    d_quad.error += tail_b;

    let n_samples = 40;
    let i_samples = (0..=n_samples)
        .map(|j| {
            let t = t_max * j as f64 / n_samples as f64;
            (t, se.i_of_t(t))
        })
        .collect();
    let (b_direct, c_direct) = correlations_direct(q0)?;
    Ok(CorrelationProfile {
        target: target.to_string(),
        i_samples,
        b_direct,
        c_direct,
        b_quad,
        c_quad,
        d_quad,
        t_max,
        tail_bound: tail_c,
        rel_tol,
    })
}

/// Ordered-pair sum of conditional mutual informations of a masked law.
pub fn i_of_masked(qt: &DensePmf) -> Result<f64> {
    let d = qt.space().dim();
    let mut total = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                total += conditional_mi(qt, i, j)?;
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state_space::{Alphabet, StateSpace};
    use crate::targets::{build, DistributionSpec};
    use std::f64::consts::LN_2;

    #[test]
    fn product_law_has_no_correlation() {
        let sp = StateSpace::new(3, Alphabet::plain(3).unwrap()).unwrap();
        let m = vec![vec![0.2, 0.3, 0.5], vec![0.6, 0.2, 0.2], vec![0.1, 0.1, 0.8]];
        let q = DensePmf::product(sp, &m).unwrap();
        for t in [0.1, 1.0, 3.0] {
            assert!(i_of_t(&q, t).unwrap() < 1e-13);
        }
        let (b, c) = correlations_direct(&q).unwrap();
        assert!(b.abs() < 1e-13 && c.abs() < 1e-13);
        let prof = correlations_quadrature(&q, "product", 1e-4).unwrap();
        for v in [prof.b_quad.value, prof.c_quad.value, prof.d_quad.value] {
            assert!(v.abs() < 1e-10);
        }
    }

    #[test]
    fn large_time_limit() {
        let q = build(&DistributionSpec::p_m(4)).unwrap();
        assert!(i_of_t(&q, 40.0).unwrap() < 1e-10);
    }

    #[test]
    fn subset_formula_matches_dense() {
        for spec in [
            DistributionSpec::p_m(4),
            DistributionSpec::Xor { d: 4 },
            DistributionSpec::p_ex(5, 2),
        ] {
            let q = build(&spec).unwrap();
            let se = SubsetEntropies::new(&q).unwrap();
            for t in [0.05, 0.3, 1.0, 2.5, 6.0] {
                let dense = i_of_t(&q, t).unwrap();
                let fast = se.i_of_t(t);
                assert!((dense - fast).abs() <= 1e-10 * dense.max(1e-3), "{spec:?} t={t}");
                let qt = propagate_forward(&q, NoiseKind::Masking, t).unwrap();
                assert!((entropy(&qt) - se.masked_entropy(t)).abs() < 1e-12);
                assert!((i_of_masked(&qt).unwrap() - dense).abs() < 1e-12);
            }
            let (b, c) = correlations_direct(&q).unwrap();
            assert!((b - se.b()).abs() < 1e-12 && (c - se.c()).abs() < 1e-12);
        }
    }

    #[test]
    fn two_point_mixture_values() {
        let q = build(&DistributionSpec::p_m(5)).unwrap();
        let (b, c) = correlations_direct(&q).unwrap();
        assert!((b - LN_2).abs() < 1e-14);
        assert!((c - 4.0 * LN_2).abs() < 1e-14);
        let prof = correlations_quadrature(&q, "p_m", 1e-4).unwrap();
        assert!((prof.b_quad.value - LN_2).abs() < 1e-3 * LN_2);
        assert!(prof.d_quad.value <= prof.b_quad.value.min(prof.c_quad.value) + 1e-4);
        assert!(correlations_quadrature(&q, "p_m", 1e-7).is_err());
    }
}
