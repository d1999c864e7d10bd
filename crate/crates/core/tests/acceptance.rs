//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

use std::f64::consts::LN_2;
use std::process::ExitCode;
use std::time::Instant;

use ddlab::experiments::{
    check_masking_upper_bound, default_corpus, discretization_slope, linear_fit, run_convergence_sweep,
    run_identity_suite, ExperimentConfig, ScheduleConfig, ScoreConfig,
};
use ddlab::forward::NoiseKind;
use ddlab::info_metrics::{correlations_direct, correlations_quadrature, i_of_t};
use ddlab::samplers::{chi_square_gof, run_sampler_paths, run_sampler_pmf, SamplerKind};
use ddlab::schedule::Recipe;
use ddlab::score::{CorruptionModel, CorruptionScope};
use ddlab::targets::{analytic_expectations, build, DistributionSpec};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: ddlab::Error) -> String {
    format!("error: {e}")
}

fn masking_cfg(target: DistributionSpec, recipe: Recipe, horizon: f64, n_list: Vec<usize>) -> ExperimentConfig {
    ExperimentConfig::new(
        target,
        NoiseKind::Masking,
        SamplerKind::ModifiedTruncated,
        ScheduleConfig {
            recipe,
            horizon,
            n_list,
            early_stop: 0.0,
        },
    )
}

fn analytic_values() -> Outcome {
    let mut worst: f64 = 0.0;
    for d in [4, 6, 8] {
        let dm1 = (d - 1) as f64;
        let (b, c) = correlations_direct(&build(&DistributionSpec::p_m(d)).map_err(err)?).map_err(err)?;
        worst = worst.max((b - LN_2).abs()).max((c - dm1 * LN_2).abs());
        let (b, c) = correlations_direct(&build(&DistributionSpec::Xor { d }).map_err(err)?).map_err(err)?;
        worst = worst.max((b - dm1 * LN_2).abs()).max((c - LN_2).abs());
    }
    check(worst <= 1e-10, format!("max abs error {worst:.2e} (tol 1e-10)"))
}

fn quadrature() -> Outcome {
    let mut worst: f64 = 0.0;
    for spec in [DistributionSpec::p_m(8), DistributionSpec::Xor { d: 8 }, DistributionSpec::p_ex(8, 4)] {
        let q = build(&spec).map_err(err)?;
        let (b, c) = correlations_direct(&q).map_err(err)?;
        let p = correlations_quadrature(&q, &spec.name(), 1e-4).map_err(err)?;
        worst = worst.max((p.b_quad.value - b).abs() / b).max((p.c_quad.value - c).abs() / c);
    }
    let mut d_excess = f64::NEG_INFINITY;
    for spec in default_corpus() {
        let q = build(&spec).map_err(err)?;
        let p = correlations_quadrature(&q, &spec.name(), 1e-4).map_err(err)?;
        let tol = p.d_quad.error + p.b_quad.error.max(p.c_quad.error) + 1e-12;
        d_excess = d_excess.max(p.d_quad.value - p.b_quad.value.min(p.c_quad.value) - tol);
    }
    check(
        worst <= 1e-3 && d_excess <= 0.0,
        format!("max rel error {worst:.2e} (tol 1e-3); max D - min(B,C) - tol = {d_excess:.2e}"),
    )
}

fn adaptivity_contrast() -> Outcome {
    let dims = [6usize, 8, 10, 12];
    let (mut bs, mut cs, mut ds) = (vec![], vec![], vec![]);
    for &d in &dims {
        let q = build(&DistributionSpec::p_ex(d, d / 2)).map_err(err)?;
        let p = correlations_quadrature(&q, "p_ex", 1e-4).map_err(err)?;
        let (b, c) = correlations_direct(&q).map_err(err)?;
        bs.push(b);
        cs.push(c);
        ds.push(p.d_quad.value);
    }
    let xs: Vec<f64> = dims.iter().map(|&d| d as f64).collect();
    let rb = linear_fit(&xs, &bs).map_err(err)?.r2;
    let rc = linear_fit(&xs, &cs).map_err(err)?.r2;
    let ratio = ds.iter().cloned().fold(f64::MIN, f64::max) / ds.iter().cloned().fold(f64::MAX, f64::min);
    check(
        rb >= 0.99 && rc >= 0.99 && ratio <= 2.0,
        format!("R2(B) {rb:.6}, R2(C) {rc:.6}, D max/min {ratio:.4} (D = {ds:.4?})"),
    )
}

/// Pairwise conditional MI of p_ex summed over ordered pairs, case by case.
fn p_ex_case_sum(n0: usize, n1: usize, t: f64) -> f64 {
    let r = (-t).exp();
    let (a, b) = (n0 as f64, n1 as f64);
    let both_free = LN_2 * r * r * (1.0 - r).powi(n0 as i32 - 2) * (1.0 - r.powi(n1 as i32));
    let both_fixed = LN_2 * r.powi(n1 as i32) * (1.0 - (1.0 - r).powi(n0 as i32));
    let mixed = LN_2 * r.powi(n1 as i32 + 1) * (1.0 - r).powi(n0 as i32 - 1);
    a * (a - 1.0) * both_free + b * (b - 1.0) * both_fixed + 2.0 * a * b * mixed
}

fn i_of_t_cases() -> Outcome {
    let q = build(&DistributionSpec::p_ex(6, 3)).map_err(err)?;
    let mut worst: f64 = 0.0;
    for t in [0.25, 0.5, 1.0, 2.0] {
        let exact = i_of_t(&q, t).map_err(err)?;
        let cases = p_ex_case_sum(3, 3, t);
        worst = worst.max((exact - cases).abs() / cases);
    }
    check(worst <= 1e-8, format!("max rel error {worst:.2e} (tol 1e-8)"))
}

fn uniform_rate() -> Outcome {
    let horizon = (4.0 * 3f64.ln() / 0.01).ln();
    // two-point mixture on {0, 1, 2}^4
    let target = DistributionSpec::DiracMixture {
        d: 4,
        s: 3,
        points: vec![vec![0; 4], vec![1; 4]],
        weights: vec![0.5, 0.5],
    };
    let cfg = ExperimentConfig::new(
        target,
        NoiseKind::Uniform,
        SamplerKind::TauLeaping,
        ScheduleConfig {
            recipe: Recipe::Constant,
            horizon,
            n_list: vec![8, 16, 32, 64, 128, 256, 512],
            early_stop: 0.0,
        },
    );
    let sweep = run_convergence_sweep(&cfg).map_err(err)?;
    let fit = discretization_slope(&sweep.rows).map_err(err)?;
    check(
        (-1.2..=-0.8).contains(&fit.slope),
        format!("slope {:.4} (R2 {:.4}) in [-1.2, -0.8]", fit.slope, fit.r2),
    )
}

fn masking_adaptivity() -> Outcome {
    let horizon = 8.0;
    let product = masking_cfg(DistributionSpec::Uniform { d: 4, s: 3 }, Recipe::Constant, horizon, vec![8, 32, 128]);
    let reps = check_masking_upper_bound(&product).map_err(err)?;
    let kls: Vec<f64> = reps.iter().map(|r| r.kl).collect();
    let spread = kls.iter().cloned().fold(f64::MIN, f64::max) - kls.iter().cloned().fold(f64::MAX, f64::min);
    let (d, s) = (4.0, 3f64);
    let cap = 10.0 * (-horizon).exp() * d * (1.0 + s.ln() + horizon);
    let kl_max = kls.iter().cloned().fold(f64::MIN, f64::max);
    let mut ok = spread <= 1e-9 && kl_max <= cap;
    let mut detail = format!("product: KL spread {spread:.2e}, max KL {kl_max:.2e} <= {cap:.2e}");
    for recipe in [Recipe::Constant, Recipe::exp_then_const(0.5)] {
        let cfg = masking_cfg(DistributionSpec::p_ex(6, 3), recipe.clone(), 6.0, vec![8, 32, 128]);
        for r in check_masking_upper_bound(&cfg).map_err(err)? {
            ok &= r.holds;
            detail += &format!("; p_ex {} N={}: {:.3e} <= 10 x {:.3e}", r.recipe, r.n, r.kl, r.rhs);
        }
    }
    check(ok, detail)
}

fn identity_suite() -> Outcome {
    let report = run_identity_suite(&default_corpus(), 2024).map_err(err)?;
    let failures: Vec<String> = report
        .failures()
        .map(|f| format!("{} on {}: {:.2e} > {:.2e}", f.identity, f.target, f.max_deviation, f.tolerance))
        .collect();
    check(
        failures.is_empty(),
        format!("{} checks, {} failed {}", report.results.len(), failures.len(), failures.join("; ")),
    )
}

fn monte_carlo() -> Outcome {
    let n_paths = 100_000;
    let mut ok = true;
    let mut detail = Vec::new();
    let configs = [
        (NoiseKind::Uniform, SamplerKind::TauLeaping, DistributionSpec::p_m(2)),
        (NoiseKind::Masking, SamplerKind::ModifiedTruncated, DistributionSpec::p_ex(2, 1)),
    ];
    for (kind, sampler, target) in configs {
        let mut cfg = ExperimentConfig::new(
            target,
            kind,
            sampler,
            ScheduleConfig {
                recipe: Recipe::Constant,
                horizon: 3.0,
                n_list: vec![8],
                early_stop: 0.0,
            },
        );
        cfg.seed = 17;
        let schedule = cfg.schedule_for(8).map_err(err)?;
        let provider = cfg.provider().map_err(err)?;
        let q_init = cfg.initial_law().map_err(err)?;
        let pmf = run_sampler_pmf(&q_init, sampler, &schedule, provider.as_ref(), 0.0).map_err(err)?;
        let paths = run_sampler_paths(&q_init, sampler, &schedule, provider.as_ref(), n_paths, cfg.seed, 0).map_err(err)?;
        let gof = chi_square_gof(&paths.counts, pmf.output.mass());
        let again = run_sampler_paths(&q_init, sampler, &schedule, provider.as_ref(), n_paths, cfg.seed, 0).map_err(err)?;
        let pmf_again = run_sampler_pmf(&q_init, sampler, &schedule, provider.as_ref(), 0.0).map_err(err)?;
        let identical = again.terminal == paths.terminal
            && pmf
                .output
                .mass()
                .iter()
                .zip(pmf_again.output.mass())
                .all(|(a, b)| a.to_bits() == b.to_bits());
        ok &= gof.p_value > 0.01 && identical;
        detail.push(format!("{kind:?}: p = {:.4}, reruns identical = {identical}", gof.p_value));
    }
    check(ok, detail.join("; "))
}

fn corruption_sensitivity() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    let targets = [
        (DistributionSpec::Uniform { d: 4, s: 3 }, 8.0),
        (DistributionSpec::p_ex(6, 3), 6.0),
    ];
    for (target, horizon) in targets {
        let mut cfg = masking_cfg(target.clone(), Recipe::Constant, horizon, vec![128]);
        let exact_kl = run_convergence_sweep(&cfg).map_err(err)?.rows[0].kl.as_f64();
        for sigma in [0.02, 0.05, 0.1] {
            cfg.score = ScoreConfig::Corrupted {
                model: CorruptionModel::log_normal(sigma, 11).map_err(err)?,
                scope: CorruptionScope::PerGridPoint,
            };
            let row = run_convergence_sweep(&cfg).map_err(err)?.rows[0].clone();
            let degradation = row.kl.as_f64() - exact_kl;
            ok &= degradation <= 2.0 * row.eps_score;
            detail.push(format!(
                "{} sigma={sigma}: {degradation:.3e} <= 2 x {:.3e}",
                target.name(),
                row.eps_score
            ));
        }
    }
    check(ok, detail.join("; "))
}

fn appendix_bounds() -> Outcome {
    let specs = [
        DistributionSpec::Hmm {
            d: 6,
            z: 2,
            p: 0.2,
            eta: 0.0,
            s: None,
            emission: None,
        },
        DistributionSpec::SbmAdjacency {
            n: 4,
            r: 2,
            p: 0.8,
            q: 0.2,
        },
        DistributionSpec::QuantizedLatent {
            k: 1,
            d: 4,
            s: 4,
            map: "sinusoid".into(),
            sigma: 0.5,
            grid: 64,
        },
    ];
    let mut ok = true;
    let mut detail = Vec::new();
    for spec in specs {
        let (b, _) = correlations_direct(&build(&spec).map_err(err)?).map_err(err)?;
        let bound = analytic_expectations(&spec).ok_or("no reference bound")?.b;
        ok &= b <= bound;
        detail.push(format!("{}: B {b:.4} <= {bound:.4}", spec.name()));
    }
    check(ok, detail.join("; "))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("analytic correlation values", analytic_values),
        ("correlation quadrature", quadrature),
        ("adaptivity contrast", adaptivity_contrast),
        ("I(t) case formulas", i_of_t_cases),
        ("uniform diffusion rate", uniform_rate),
        ("masking adaptivity", masking_adaptivity),
        ("identity suite", identity_suite),
        ("Monte Carlo consistency", monte_carlo),
        ("score corruption sensitivity", corruption_sensitivity),
        ("structured target bounds", appendix_bounds),
    ];
    let mut failed = 0;
    for (j, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {:>2} PASS  {name} [{secs:.1}s]: {d}", j + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name} [{secs:.1}s]: {d}", j + 1)
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
