use serde::{Deserialize, Serialize};

use super::correlation::SubsetEntropies;
use crate::error::{Error, Result};
use crate::forward::{apply_coordinate_kernel, forward_token_kernel, propagate_forward, NoiseKind};
use crate::quadrature::integrate;
use crate::score::{weighted_bregman, ScoreField, ScoreProvider};
use crate::state_space::DensePmf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub kind: NoiseKind,
    pub horizon: f64,
    pub ell: f64,
    pub t: f64,
    pub checks: usize,
    pub max_abs_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlReport {
    pub horizon: f64,
    pub ell: f64,
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub rel_error: f64,
}

fn check_times(horizon: f64, ell: f64, t: f64) -> Result<()> {
    if !(0.0 <= ell && ell < t && t < horizon) {
        return Err(Error::Domain(format!(
            "need 0 ≤ ℓ < t < T, got ℓ={ell}, t={t}, T={horizon}"
        )));
    }
    Ok(())
}

/// Σ_b w(b) K_{t−ℓ}(b → a) for the forward kernel over `duration`.
fn push_forward(w: Vec<f64>, qt: &DensePmf, kind: NoiseKind, duration: f64) -> Result<Vec<f64>> {
    let sp = qt.space();
    let k = forward_token_kernel(kind, sp.alphabet(), duration)?;
    let mut v = w;
    for i in 0..sp.dim() {
        v = apply_coordinate_kernel(sp, &v, i, &k.matrix);
    }
    Ok(v)
}

/// Compares both sides of the reverse-process martingale identities at
/// reverse times ℓ < t, exactly through the reverse transition law
/// P(x_t = b | x_ℓ = a) = q_{T−t}(b) K_{t−ℓ}(b → a) / q_{T−ℓ}(a).
///
/// Uniform: E[ŝ_{T−t}(x_t ⊕_i c, x_t) | x_ℓ] = ŝ_{T−ℓ}(x_ℓ ⊕_i c, x_ℓ).
/// Masking: E[ŝ_{T−t}(x_t ⊙_i c, x_t) 1{i ∈ m(x_t)} | x_ℓ]
///          = e^{t−ℓ} ŝ_{T−ℓ}(x_ℓ ⊙_i c, x_ℓ) 1{i ∈ m(x_ℓ)}.
///
/// `s_hat` is queried at grid index 1 for time T−t and 0 for T−ℓ; with exact
/// scores every deviation is rounding error.
pub fn check_martingales(
    q0: &DensePmf,
    s_hat: &dyn ScoreProvider,
    horizon: f64,
    ell: f64,
    t: f64,
    tolerance: f64,
) -> Result<MartingaleReport> {
    check_times(horizon, ell, t)?;
    let kind = s_hat.provenance().kind;
    let q_late = propagate_forward(q0, kind, horizon - t)?;
    let q_early = propagate_forward(q0, kind, horizon - ell)?;
    let f_late = s_hat.field(1, horizon - t)?;
    let f_early = s_hat.field(0, horizon - ell)?;
    if f_late.space() != q_late.space() {
        return Err(Error::Validation("score provider and data live on different spaces".into()));
    }
    let sp = q_late.space().clone();
    let s = sp.vocab_size();
    let growth = (t - ell).exp();
    let mut checks = 0;
    let mut worst: f64 = 0.0;
    for i in 0..sp.dim() {
        let targets: Vec<usize> = match kind {
            NoiseKind::Uniform => (1..s).collect(),
            NoiseKind::Masking => (0..s).collect(),
        };
        for c in targets {
            let lhs_value = |f: &ScoreField, x: usize| -> Result<Option<f64>> {
                match kind {
                    NoiseKind::Uniform => f.value_shift(x, i, c).map(Some),
                    NoiseKind::Masking => {
                        if sp.alphabet().is_mask(sp.digit(x, i)) {
                            f.value(x, i, c).map(Some)
                        } else {
                            Ok(None)
                        }
                    }
                }
            };
            let mut w = vec![0.0; sp.len()];
            for (b, &p) in q_late.mass().iter().enumerate() {
                if p > 0.0 {
                    if let Some(v) = lhs_value(&f_late, b)? {
                        w[b] = p * v;
                    }
                }
            }
            let v = push_forward(w, &q_late, kind, t - ell)?;
            for (a, &pa) in q_early.mass().iter().enumerate() {
                if pa <= 0.0 {
                    continue;
                }
                let lhs = v[a] / pa;
                let rhs = match (kind, lhs_value(&f_early, a)?) {
                    (NoiseKind::Uniform, Some(r)) => r,
                    (NoiseKind::Masking, Some(r)) => growth * r,
                    (_, None) => 0.0,
                };
                worst = worst.max((lhs - rhs).abs());
                checks += 1;
            }
        }
    }
    Ok(MartingaleReport {
        kind,
        horizon,
        ell,
        t,
        checks,
        max_abs_deviation: worst,
        tolerance,
        passed: worst <= tolerance,
    })
}

/// Both sides of
/// E Σ_{i∈m(x_t)} Σ_c s(x_t⊙_i c, x_t) D(s(x_ℓ⊙_i c, x_ℓ), s(x_t⊙_i c, x_t))
///   = ∫_ℓ^t e^{t−v} I(T−v) dv
/// for masking diffusion, scores taken at forward time T−t. The left side
/// is an exact sum over the joint reverse law of (x_ℓ, x_t); the right side
/// is adaptive quadrature of I.
pub fn check_control_at_t(q0: &DensePmf, horizon: f64, ell: f64, t: f64) -> Result<ControlReport> {
    if ell == t && 0.0 <= t && t < horizon {
        return Ok(ControlReport {
            horizon,
            ell,
            t,
            lhs: 0.0,
            rhs: 0.0,
            rel_error: 0.0,
        });
    }
    check_times(horizon, ell, t)?;
    let kind = NoiseKind::Masking;
    let field = ScoreField::exact(q0, kind, horizon - t)?;
    let q_late = field.marginal();
    let sp = q_late.space().clone();
    let s = sp.vocab_size();
    let k = forward_token_kernel(kind, sp.alphabet(), t - ell)?;
    let score_or_zero = |x: usize, i: usize, c: usize| -> Result<f64> {
        if q_late.prob(x) > 0.0 {
            field.value(x, i, c)
        } else {
            // only reached for x_ℓ; the weight then vanishes unless the
            // numerator does as well
            Ok(0.0)
        }
    };

    let mut lhs = 0.0;
    for (b, &pb) in q_late.mass().iter().enumerate() {
        if pb <= 0.0 {
            continue;
        }
        let mut point = vec![0.0; sp.len()];
        point[b] = 1.0;
        for i in 0..sp.dim() {
            point = apply_coordinate_kernel(&sp, &point, i, &k.matrix);
        }
        let masked = sp.masked_set(b)?;
        for (a, &kab) in point.iter().enumerate() {
            if kab <= 0.0 {
                continue;
            }
            let mut acc = 0.0;
            for &i in &masked {
                for c in 0..s {
                    let s_t = field.value(b, i, c)?;
                    let s_l = score_or_zero(a, i, c)?;
                    acc += weighted_bregman(s_l, s_t);
                }
            }
            lhs += pb * kab * acc;
        }
    }

    let se = SubsetEntropies::new(q0)?;
    let rhs = integrate(
        |v| (t - v).exp() * se.i_of_t(horizon - v),
        ell,
        t,
        1e-15,
        1e-11,
        2000,
    )?
    .value;
    let rel_error = if rhs.abs() > 0.0 {
        (lhs - rhs).abs() / rhs.abs()
    } else {
        lhs.abs()
    };
    Ok(ControlReport {
        horizon,
        ell,
        t,
        lhs,
        rhs,
        rel_error,
    })
}
