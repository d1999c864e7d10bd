//! Example target distributions, built as exact dense pmfs.

use std::f64::consts::{LN_2, PI};
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::state_space::{Alphabet, DensePmf, StateSpace};

/// Largest vertex count for exact SBM enumeration.
pub const SBM_MAX_VERTICES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DistributionSpec {
    Uniform {
        d: usize,
        s: usize,
    },
    /// Weighted point masses; `weights` are normalized.
    DiracMixture {
        d: usize,
        s: usize,
        points: Vec<Vec<usize>>,
        weights: Vec<f64>,
    },
    /// x^1..x^{d−1} iid fair bits, x^d their parity.
    Xor {
        d: usize,
    },
    /// Coordinates in `i0` copy one fair bit b; the rest are fair bits except
    /// the last one, which makes the parity of the block plus b even.
    StructureWithNoise {
        d: usize,
        i0: Vec<usize>,
    },
    /// Latent chain on `z` states that switches with probability `p` to a
    /// uniformly chosen different state. Observations are `s`-ary (defaults
    /// to `z`): either `emission[z][x]`, or x = z with probability 1 − η and
    /// uniform otherwise.
    Hmm {
        d: usize,
        z: usize,
        p: f64,
        #[serde(default)]
        eta: f64,
        #[serde(default)]
        s: Option<usize>,
        #[serde(default)]
        emission: Option<Vec<Vec<f64>>>,
    },
    /// Adjacency bits of an r-block SBM on n vertices with uniform labels;
    /// edges (i, j), i < j, in lexicographic order.
    SbmAdjacency {
        n: usize,
        r: usize,
        #[serde(default = "default_sbm_p")]
        p: f64,
        #[serde(default = "default_sbm_q")]
        q: f64,
    },
    /// Quantized noisy image of a uniform latent on a `grid`^k lattice in [0,1]^k.
    QuantizedLatent {
        k: usize,
        d: usize,
        s: usize,
        #[serde(default = "default_map")]
        map: String,
        sigma: f64,
        grid: usize,
    },
}

fn default_sbm_p() -> f64 {
    0.8
}
fn default_sbm_q() -> f64 {
    0.2
}
fn default_map() -> String {
    "sinusoid".into()
}

impl DistributionSpec {
    /// ½δ_0 + ½δ_1 on {0,1}^d.
    pub fn p_m(d: usize) -> Self {
        DistributionSpec::DiracMixture {
            d,
            s: 2,
            points: vec![vec![0; d], vec![1; d]],
            weights: vec![0.5, 0.5],
        }
    }

    /// Structure-with-noise law with I0 = {0, …, n0 − 1}.
    pub fn p_ex(d: usize, n0: usize) -> Self {
        DistributionSpec::StructureWithNoise {
            d,
            i0: (0..n0).collect(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            DistributionSpec::Uniform { d, s } => format!("uniform(d={d},S={s})"),
            DistributionSpec::DiracMixture { d, points, .. } => {
                format!("dirac_mixture(d={d},k={})", points.len())
            }
            DistributionSpec::Xor { d } => format!("xor(d={d})"),
            DistributionSpec::StructureWithNoise { d, i0 } => {
                format!("structure_with_noise(d={d},|I0|={})", i0.len())
            }
            DistributionSpec::Hmm { d, z, p, .. } => format!("hmm(d={d},Z={z},p={p})"),
            DistributionSpec::SbmAdjacency { n, r, .. } => format!("sbm(n={n},r={r})"),
            DistributionSpec::QuantizedLatent { k, d, s, .. } => {
                format!("quantized_latent(k={k},d={d},S={s})")
            }
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "toml") {
            Ok(toml::from_str(&text)?)
        } else {
            Ok(serde_json::from_str(&text)?)
        }
    }
}

fn plain_space(d: usize, s: usize) -> Result<StateSpace> {
    StateSpace::new(d, Alphabet::plain(s)?)
}

/// Exact pmf of `spec`.
pub fn build(spec: &DistributionSpec) -> Result<DensePmf> {
    match spec {
        DistributionSpec::Uniform { d, s } => Ok(DensePmf::uniform(plain_space(*d, *s)?)),
        DistributionSpec::DiracMixture {
            d,
            s,
            points,
            weights,
        } => {
            if points.len() != weights.len() || points.is_empty() {
                return Err(Error::Config("points and weights must be nonempty and aligned".into()));
            }
            if weights.iter().any(|w| !(*w >= 0.0)) {
                return Err(Error::Config("weights must be nonnegative".into()));
            }
            let sp = plain_space(*d, *s)?;
            let mut raw = vec![0.0; sp.len()];
            for (pt, w) in points.iter().zip(weights) {
                raw[sp.pack(pt)?] += w;
            }
            DensePmf::normalize(sp, raw)
        }
        DistributionSpec::Xor { d } => {
            if *d < 2 {
                return Err(Error::Config("xor needs d ≥ 2".into()));
            }
            let sp = plain_space(*d, 2)?;
            let raw = (0..sp.len())
                .map(|x| if (x as u64).count_ones().is_multiple_of(2) { 1.0 } else { 0.0 })
                .collect();
            DensePmf::normalize(sp, raw)
        }
        DistributionSpec::StructureWithNoise { d, i0 } => build_p_ex(*d, i0),
        DistributionSpec::Hmm {
            d,
            z,
            p,
            eta,
            s,
            emission,
        } => build_hmm(*d, *z, *p, *eta, *s, emission.as_deref()),
        DistributionSpec::SbmAdjacency { n, r, p, q } => build_sbm(*n, *r, *p, *q),
        DistributionSpec::QuantizedLatent {
            k,
            d,
            s,
            map,
            sigma,
            grid,
        } => build_quantized(*k, *d, *s, map, *sigma, *grid),
    }
}

fn build_p_ex(d: usize, i0: &[usize]) -> Result<DensePmf> {
    let mut in0 = vec![false; d];
    for &i in i0 {
        if i >= d || in0[i] {
            return Err(Error::Config(format!("invalid or repeated index {i} in I0")));
        }
        in0[i] = true;
    }
    if i0.is_empty() || i0.len() == d {
        return Err(Error::Config("I0 must be a nonempty proper subset".into()));
    }
    let i1: Vec<usize> = (0..d).filter(|&i| !in0[i]).collect();
    let last = *i1.last().expect("I1 nonempty");
    let sp = plain_space(d, 2)?;
    let mut raw = vec![0.0; sp.len()];
    let free = i1.len() - 1;
    for b in 0..2usize {
        for bits in 0..(1usize << free) {
            let mut x = vec![0usize; d];
            for &i in i0 {
                x[i] = b;
            }
            let mut parity = b;
            for (j, &i) in i1[..free].iter().enumerate() {
                x[i] = (bits >> j) & 1;
                parity ^= x[i];
            }
            x[last] = parity;
            raw[sp.pack(&x)?] += 1.0;
        }
    }
    DensePmf::normalize(sp, raw)
}

fn build_hmm(
    d: usize,
    nz: usize,
    p: f64,
    eta: f64,
    s: Option<usize>,
    emission: Option<&[Vec<f64>]>,
) -> Result<DensePmf> {
    if nz < 2 {
        return Err(Error::Config("hmm needs at least two latent states".into()));
    }
    if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&eta) {
        return Err(Error::Config("p and eta must lie in [0, 1]".into()));
    }
    let s = s.unwrap_or(nz);
    let emit: Vec<Vec<f64>> = match emission {
        Some(table) => {
            if table.len() != nz || table.iter().any(|r| r.len() != s) {
                return Err(Error::Config("emission table must be Z × S".into()));
            }
            table
                .iter()
                .map(|r| {
                    let t: f64 = r.iter().sum();
                    if r.iter().any(|v| !(*v >= 0.0)) || !(t > 0.0) {
                        return Err(Error::Config("emission rows must be nonnegative".into()));
                    }
                    Ok(r.iter().map(|v| v / t).collect())
                })
                .collect::<Result<_>>()?
        }
        None => {
            if s < nz {
                return Err(Error::Config("default emission needs S ≥ |Z|".into()));
            }
            (0..nz)
                .map(|z| {
                    (0..s)
                        .map(|x| eta / s as f64 + if x == z { 1.0 - eta } else { 0.0 })
                        .collect()
                })
                .collect()
        }
    };
    let trans = |a: usize, b: usize| {
        if a == b {
            1.0 - p
        } else {
            p / (nz - 1) as f64
        }
    };
    let sp = plain_space(d, s)?;
    let mass = (0..sp.len())
        .map(|x| {
            // forward recursion over the latent chain
            let mut alpha: Vec<f64> = (0..nz)
                .map(|z| emit[z][sp.digit(x, 0)] / nz as f64)
                .collect();
            for i in 1..d {
                let xi = sp.digit(x, i);
                alpha = (0..nz)
                    .map(|b| {
                        (0..nz).map(|a| alpha[a] * trans(a, b)).sum::<f64>() * emit[b][xi]
                    })
                    .collect();
            }
            alpha.iter().sum()
        })
        .collect();
    DensePmf::normalize(sp, mass)
}

/// Lexicographic list of vertex pairs (i, j), i < j.
pub fn sbm_edges(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect()
}

fn build_sbm(n: usize, r: usize, p: f64, q: f64) -> Result<DensePmf> {
    if !(2..=SBM_MAX_VERTICES).contains(&n) {
        return Err(Error::Resource(format!(
            "SBM enumeration supports 2 ≤ n ≤ {SBM_MAX_VERTICES}, got {n}"
        )));
    }
    if r < 1 || !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&q) {
        return Err(Error::Config("SBM needs r ≥ 1 and p, q in [0, 1]".into()));
    }
    let edges = sbm_edges(n);
    let sp = plain_space(edges.len(), 2)?;
    let mut mass = vec![0.0; sp.len()];
    let n_labels = r.pow(n as u32);
    let w = 1.0 / n_labels as f64;
    for lab in 0..n_labels {
        let z: Vec<usize> = (0..n).map(|v| (lab / r.pow(v as u32)) % r).collect();
        let probs: Vec<f64> = edges
            .iter()
            .map(|&(i, j)| if z[i] == z[j] { p } else { q })
            .collect();
        for (x, m) in mass.iter_mut().enumerate() {
            let mut l = w;
            for (e, &pe) in probs.iter().enumerate() {
                l *= if (x >> e) & 1 == 1 { pe } else { 1.0 - pe };
            }
            *m += l;
        }
    }
    DensePmf::normalize(sp, mass)
}

/// Frequency of coordinate `i` along latent axis `j` in the sinusoid map.
fn sinusoid_freq(i: usize, j: usize, k: usize, d: usize) -> f64 {
    if i % k == j {
        1.0 + i as f64 / d as f64
    } else {
        0.0
    }
}

/// f_i(z) = (S/2)(1 + sin(2π Σ_j ω_ij z_j + i)).
pub fn sinusoid_map(z: &[f64], d: usize, s: usize) -> Vec<f64> {
    let k = z.len();
    (0..d)
        .map(|i| {
            let phase: f64 = (0..k).map(|j| sinusoid_freq(i, j, k, d) * z[j]).sum();
            0.5 * s as f64 * (1.0 + (2.0 * PI * phase + i as f64).sin())
        })
        .collect()
}

/// Lipschitz constant of [`sinusoid_map`] in the Euclidean norm: πS·‖ω‖_F.
pub fn sinusoid_lipschitz(k: usize, d: usize, s: usize) -> f64 {
    let fro: f64 = (0..d)
        .flat_map(|i| (0..k).map(move |j| sinusoid_freq(i, j, k, d).powi(2)))
        .sum();
    PI * s as f64 * fro.sqrt()
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn build_quantized(k: usize, d: usize, s: usize, map: &str, sigma: f64, grid: usize) -> Result<DensePmf> {
    if map != "sinusoid" {
        return Err(Error::Config(format!("unknown latent map '{map}'")));
    }
    if k == 0 || grid == 0 || !(sigma > 0.0) {
        return Err(Error::Config("need k ≥ 1, grid ≥ 1 and sigma > 0".into()));
    }
    let sp = plain_space(d, s)?;
    let n_latent = grid
        .checked_pow(k as u32)
        .filter(|&n| n <= 1 << 20)
        .ok_or_else(|| Error::Resource("latent grid too large".into()))?;
    let mut mass = vec![0.0; sp.len()];
    for l in 0..n_latent {
        let z: Vec<f64> = (0..k)
            .map(|j| ((l / grid.pow(j as u32)) % grid) as f64 / grid as f64 + 0.5 / grid as f64)
            .collect();
        let f = sinusoid_map(&z, d, s);
        // P(clip(floor(f_i + σε), 0, S−1) = m | z)
        let cell: Vec<Vec<f64>> = f
            .iter()
            .map(|&fi| {
                (0..s)
                    .map(|m| {
                        let lo = if m == 0 { 0.0 } else { normal_cdf((m as f64 - fi) / sigma) };
                        let hi = if m + 1 == s {
                            1.0
                        } else {
                            normal_cdf((m as f64 + 1.0 - fi) / sigma)
                        };
                        (hi - lo).max(0.0)
                    })
                    .collect()
            })
            .collect();
        for (x, m) in mass.iter_mut().enumerate() {
            *m += (0..d).map(|i| cell[i][sp.digit(x, i)]).product::<f64>();
        }
    }
    DensePmf::normalize(sp, mass)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    Exact,
    UpperBound,
}

/// Published reference values of ℬ and 𝒞 for a spec.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticReference {
    pub kind: ReferenceKind,
    pub b: f64,
    pub c: Option<f64>,
}

/// Exact ℬ/𝒞 for the two-point mixture, XOR and uniform laws; upper bounds
/// on ℬ for the HMM, SBM and quantized-latent families. `None` otherwise.
pub fn analytic_expectations(spec: &DistributionSpec) -> Option<AnalyticReference> {
    match spec {
        DistributionSpec::Uniform { .. } => Some(AnalyticReference {
            kind: ReferenceKind::Exact,
            b: 0.0,
            c: Some(0.0),
        }),
        DistributionSpec::DiracMixture { d, points, weights, .. } => {
            let is_pm = *d >= 2
                && points.len() == 2
                && weights.len() == 2
                && (weights[0] - weights[1]).abs() < 1e-15
                && points[0].iter().all(|&c| c == 0)
                && points[1].iter().all(|&c| c == 1);
            is_pm.then_some(AnalyticReference {
                kind: ReferenceKind::Exact,
                b: LN_2,
                c: Some((*d as f64 - 1.0) * LN_2),
            })
        }
        DistributionSpec::Xor { d } => Some(AnalyticReference {
            kind: ReferenceKind::Exact,
            b: (*d as f64 - 1.0) * LN_2,
            c: Some(LN_2),
        }),
        DistributionSpec::Hmm { d, z, p, .. } => Some(AnalyticReference {
            kind: ReferenceKind::UpperBound,
            b: p * *d as f64 * (*z as f64 / p).ln(),
            c: None,
        }),
        DistributionSpec::SbmAdjacency { n, r, .. } => Some(AnalyticReference {
            kind: ReferenceKind::UpperBound,
            b: *n as f64 * (*r as f64).ln(),
            c: None,
        }),
        DistributionSpec::QuantizedLatent { k, d, s, sigma, .. } => {
            let diameter = (*k as f64).sqrt();
            let lip = sinusoid_lipschitz(*k, *d, *s);
            Some(AnalyticReference {
                kind: ReferenceKind::UpperBound,
                b: *k as f64 * (2.0 + 2.0 * diameter * lip / sigma).ln(),
                c: None,
            })
        }
        DistributionSpec::StructureWithNoise { .. } => None,
    }
}
