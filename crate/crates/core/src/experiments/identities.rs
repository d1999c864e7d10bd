use nalgebra::{DMatrix, RowDVector};
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::forward::NoiseKind;
use crate::info_metrics::{
    check_control_at_t, check_martingales, correlations_direct, correlations_quadrature, kl_to_uniform,
    log_sobolev_holds, max_log_score_excess, phi, phi_profile, phi_pushforward, t3_sim_sides,
};
use crate::ode::rk4_row;
use crate::rng::substream;
use crate::samplers::modified_ttl_step;
use crate::schedule::{build_schedule, Recipe};
use crate::score::{CorruptedScores, CorruptionModel, CorruptionScope, ExactScores, ScoreProvider};
use crate::state_space::{Alphabet, DensePmf, StateSpace};
use crate::targets::{build, DistributionSpec};

const MARTINGALE_TOL: f64 = 1e-8;
const MARTINGALE_PAIRS: [(f64, f64); 5] = [(0.0, 0.5), (0.3, 1.0), (1.0, 1.5), (0.5, 2.5), (2.0, 2.9)];
const MARTINGALE_HORIZON: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityResult {
    pub identity: String,
    pub target: String,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IdentitySuiteReport {
    pub results: Vec<IdentityResult>,
}

impl IdentitySuiteReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &IdentityResult> {
        self.results.iter().filter(|r| !r.passed)
    }

    fn record(&mut self, identity: &str, target: &str, deviation: f64, tolerance: f64) {
        self.results.push(IdentityResult {
            identity: identity.to_string(),
            target: target.to_string(),
            max_deviation: deviation,
            tolerance,
            passed: deviation <= tolerance,
        });
    }
}

/// Small targets (d ≤ 4) covering every generator family.
pub fn default_corpus() -> Vec<DistributionSpec> {
    vec![
        DistributionSpec::Uniform { d: 3, s: 2 },
        DistributionSpec::p_m(3),
        DistributionSpec::p_m(4),
        DistributionSpec::Xor { d: 3 },
        DistributionSpec::Xor { d: 4 },
        DistributionSpec::p_ex(4, 2),
        DistributionSpec::Hmm {
            d: 4,
            z: 2,
            p: 0.2,
            eta: 0.1,
            s: None,
            emission: None,
        },
        DistributionSpec::SbmAdjacency {
            n: 3,
            r: 2,
            p: 0.8,
            q: 0.2,
        },
        DistributionSpec::QuantizedLatent {
            k: 1,
            d: 3,
            s: 3,
            map: "sinusoid".into(),
            sigma: 0.3,
            grid: 16,
        },
    ]
}

fn rel_dev(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Random full-support pmf with Exp(1) weights.
fn random_pmf(space: StateSpace, seed: u64, stream: u64) -> Result<DensePmf> {
    let mut rng = substream(seed, stream);
    let raw: Vec<f64> = (0..space.len()).map(|_| Exp1.sample(&mut rng)).collect();
    DensePmf::normalize(space, raw)
}

/// Largest gap between the modified truncated kernel and an RK4 solution of
/// its in-step CTMC, over every non-final step, state and masked coordinate.
fn alg_is_ctmc_deviation(q0: &DensePmf) -> Result<f64> {
    let horizon = 3.0;
    let schedule = build_schedule(Recipe::Constant, horizon, 6, 0.0)?;
    let exact = ExactScores::new(q0, NoiseKind::Masking)?;
    let mut worst: f64 = 0.0;
    for k in 0..schedule.steps() - 1 {
        let (tk, tk1) = (schedule.grid()[k], schedule.grid()[k + 1]);
        let field = exact.field(k, horizon - tk)?;
        let sp = field.space().clone();
        let n = sp.n_symbols();
        let mask = sp.vocab_size();
        for x in 0..sp.len() {
            if field.marginal().prob(x) <= 0.0 {
                continue;
            }
            let set = modified_ttl_step(x, &field, tk, tk1, horizon, false)?;
            for i in sp.masked_set(x)? {
                let rates: Vec<f64> = (0..mask).map(|c| field.value(x, i, c)).collect::<Result<_>>()?;
                let scale = (horizon - tk).exp_m1();
                let generator = |t: f64| {
                    let w = scale / (horizon - t).exp_m1();
                    let mut q = DMatrix::zeros(n, n);
                    for (c, &r) in rates.iter().enumerate() {
                        q[(mask, c)] = r * w;
                        q[(mask, mask)] -= r * w;
                    }
                    q
                };
                let mut p0 = RowDVector::zeros(n);
                p0[mask] = 1.0;
                let p = rk4_row(generator, &p0, tk, tk1, 400);
                for b in 0..n {
                    worst = worst.max((p[b] - set.kernels[i][(mask, b)]).abs());
                }
            }
        }
    }
    Ok(worst)
}

fn per_target(report: &mut IdentitySuiteReport, spec: &DistributionSpec) -> Result<()> {
    let name = spec.name();
    let q0 = build(spec)?;
    let d = q0.space().dim() as f64;
    let s = q0.space().vocab_size() as f64;

    let (b, c) = correlations_direct(&q0)?;
    let prof = correlations_quadrature(&q0, &name, 1e-4)?;
    let tol = 1e-3;
    // relative error, or absolute when the exact value is rounding noise
    let dev = |quad: f64, exact: f64| if exact > 1e-12 { rel_dev(quad, exact) } else { (quad - exact).abs() };
    let dev_b = dev(prof.b_quad.value, b);
    let dev_c = dev(prof.c_quad.value, c);
    report.record("dtc_quadrature", &name, dev_b, tol);
    report.record("tc_quadrature", &name, dev_c, tol);
    let d_excess = prof.d_quad.value - prof.b_quad.value.min(prof.c_quad.value);
    let quad_tol = prof.d_quad.error + prof.b_quad.error.max(prof.c_quad.error) + 1e-12;
    report.record("etc_below_min", &name, d_excess.max(0.0), quad_tol);
    let cap = d * s.ln();
    let worst = [b, c, prof.d_quad.value].into_iter().fold(f64::MIN, f64::max);
    report.record("correlations_below_dlogS", &name, (worst - cap).max(0.0), 1e-9);

    // uniform-noise potential
    let times: Vec<f64> = (0..50).map(|j| 0.01 + (5.0 - 0.01) * j as f64 / 49.0).collect();
    let pp = phi_profile(&q0, &times)?;
    let neg = pp.samples.iter().map(|&(_, v)| (-v).max(0.0)).fold(0.0, f64::max);
    report.record("phi_nonnegative", &name, neg, 0.0);
    // −φ' ≥ φ integrates to φ(t + Δ) ≤ e^{−Δ} φ(t)
    let decay = pp
        .samples
        .windows(2)
        .map(|w| w[1].1 - (-(w[1].0 - w[0].0)).exp() * w[0].1)
        .fold(0.0, f64::max);
    report.record("phi_decay", &name, decay, 1e-6);
    let mut fd_dev: f64 = 0.0;
    let mut push_dev: f64 = 0.0;
    let mut t3_dev: f64 = 0.0;
    let mut score_excess = f64::NEG_INFINITY;
    for t in [0.2, 0.7, 1.5, 3.0] {
        let p = phi(&q0, t)?;
        let h = 1e-4;
        let fd = -(kl_to_uniform(&q0, t + h)? - kl_to_uniform(&q0, t - h)?) / (2.0 * h);
        if p > 1e-9 {
            fd_dev = fd_dev.max(rel_dev(fd, p));
        }
        push_dev = push_dev.max(rel_dev(phi_pushforward(&q0, t)?, p));
        let (l, r) = t3_sim_sides(&q0, t)?;
        t3_dev = t3_dev.max(rel_dev(l, r));
        score_excess = score_excess.max(max_log_score_excess(&q0, t)?);
    }
    report.record("phi_kl_derivative", &name, fd_dev, 1e-4);
    report.record("phi_pushforward", &name, push_dev, 1e-10);
    report.record("t3_sim", &name, t3_dev, 1e-10);
    report.record("log_score_bound", &name, score_excess.max(0.0), 1e-12);
    let mut lsi_fail = 0.0;
    for t in [0.1, 0.5, 1.0, 2.0] {
        if !log_sobolev_holds(&q0, t)? {
            lsi_fail += 1.0;
        }
    }
    report.record("log_sobolev", &name, lsi_fail, 0.0);

    for kind in [NoiseKind::Uniform, NoiseKind::Masking] {
        let exact = ExactScores::new(&q0, kind)?;
        let mut worst: f64 = 0.0;
        for (ell, t) in MARTINGALE_PAIRS {
            let r = check_martingales(&q0, &exact, MARTINGALE_HORIZON, ell, t, MARTINGALE_TOL)?;
            worst = worst.max(r.max_abs_deviation);
        }
        let label = match kind {
            NoiseKind::Uniform => "uniform_martingale",
            NoiseKind::Masking => "masking_martingale",
        };
        report.record(label, &name, worst, MARTINGALE_TOL);
    }

    for (ell, t) in [(1.0, 1.5), (0.5, 2.0)] {
        let r = check_control_at_t(&q0, 3.0, ell, t)?;
        if r.rhs > 1e-10 {
            report.record("control_at_t", &name, r.rel_error, 1e-4);
        } else {
            report.record("control_at_t", &name, r.lhs.abs().max(r.rhs.abs()), 1e-10);
        }
    }

    report.record("alg_is_ctmc", &name, alg_is_ctmc_deviation(&q0)?, 1e-8);
    Ok(())
}

/// Every identity on every target; `seed` drives the random log-Sobolev laws
/// and the corruption of the negative control.
pub fn run_identity_suite(corpus: &[DistributionSpec], seed: u64) -> Result<IdentitySuiteReport> {
    let mut report = IdentitySuiteReport::default();
    if corpus.is_empty() {
        return Ok(report);
    }
    for spec in corpus {
        per_target(&mut report, spec)?;
    }

    let sp = StateSpace::new(3, Alphabet::plain(3)?)?;
    let mut failures = 0.0;
    for j in 0..20 {
        let q = random_pmf(sp.clone(), seed, j)?;
        for t in [0.1, 0.5, 1.0, 2.0] {
            if !log_sobolev_holds(&q, t)? {
                failures += 1.0;
            }
        }
    }
    report.record("log_sobolev", "random(d=3,S=3)x20", failures, 0.0);

    // negative control: a corrupted score must break the martingale identity
    let q0 = build(&corpus[0])?;
    let bad = CorruptedScores {
        exact: ExactScores::new(&q0, NoiseKind::Uniform)?,
        model: CorruptionModel::log_normal(0.3, seed)?,
        scope: CorruptionScope::PerGridPoint,
    };
    let r = check_martingales(&q0, &bad, MARTINGALE_HORIZON, 0.3, 1.0, MARTINGALE_TOL)?;
    let detected = if r.max_abs_deviation > 1e3 * MARTINGALE_TOL { 0.0 } else { 1.0 };
    report.record("martingale_negative_control", &corpus[0].name(), detected, 0.0);
    Ok(report)
}
