//! Forward noising: token rate matrices, closed-form kernels, marginals and
//! exact path simulation for the uniform and masking processes.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::sample_index;
use crate::state_space::{Alphabet, DensePmf, StateIndex, StateSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Uniform,
    Masking,
}

impl NoiseKind {
    /// Uniform needs a plain alphabet, Masking a masked one.
    pub fn check(&self, alphabet: Alphabet) -> Result<()> {
        match (self, alphabet.has_mask) {
            (NoiseKind::Uniform, false) | (NoiseKind::Masking, true) => Ok(()),
            (NoiseKind::Uniform, true) => Err(Error::Validation(
                "uniform noise requires an alphabet without MASK".into(),
            )),
            (NoiseKind::Masking, false) => Err(Error::Validation(
                "masking noise requires an alphabet with MASK".into(),
            )),
        }
    }

    /// The alphabet this process runs on, given the token count.
    pub fn alphabet(&self, vocab_size: usize) -> Result<Alphabet> {
        Alphabet::new(vocab_size, *self == NoiseKind::Masking)
    }
}

/// Row-stochastic per-coordinate transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenKernel {
    pub matrix: DMatrix<f64>,
    pub t_from: f64,
    pub t_to: f64,
}

/// Per-coordinate generator: nonnegative off-diagonal, zero row sums.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrixTok {
    pub matrix: DMatrix<f64>,
}

/// α_t = (1 − e^{−t}) / (1 + (S − 1) e^{−t}).
pub fn alpha(t: f64, s: usize) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("time must be nonnegative, got {t}")));
    }
    let e = (-t).exp();
    Ok(-(-t).exp_m1() / (1.0 + (s as f64 - 1.0) * e))
}

pub fn rate_matrix_tok(kind: NoiseKind, alphabet: Alphabet) -> Result<RateMatrixTok> {
    kind.check(alphabet)?;
    let n = alphabet.n_symbols();
    let s = alphabet.vocab_size;
    let mut q = DMatrix::zeros(n, n);
    match kind {
        NoiseKind::Uniform => {
            for a in 0..s {
                for b in 0..s {
                    q[(a, b)] = if a == b {
                        -((s - 1) as f64) / s as f64
                    } else {
                        1.0 / s as f64
                    };
                }
            }
        }
        NoiseKind::Masking => {
            for a in 0..s {
                q[(a, s)] = 1.0;
                q[(a, a)] = -1.0;
            }
        }
    }
    Ok(RateMatrixTok { matrix: q })
}

pub fn forward_token_kernel(kind: NoiseKind, alphabet: Alphabet, t: f64) -> Result<TokenKernel> {
    kind.check(alphabet)?;
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("time must be nonnegative, got {t}")));
    }
    let n = alphabet.n_symbols();
    let s = alphabet.vocab_size;
    let e = (-t).exp();
    let mut k = DMatrix::zeros(n, n);
    match kind {
        NoiseKind::Uniform => {
            let stay = (1.0 + (s as f64 - 1.0) * e) / s as f64;
            let off = -(-t).exp_m1() / s as f64;
            for a in 0..s {
                for b in 0..s {
                    k[(a, b)] = if a == b { stay } else { off };
                }
            }
        }
        NoiseKind::Masking => {
            for a in 0..s {
                k[(a, a)] = e;
                k[(a, s)] = -(-t).exp_m1();
            }
            k[(s, s)] = 1.0;
        }
    }
    Ok(TokenKernel {
        matrix: k,
        t_from: 0.0,
        t_to: t,
    })
}

/// Applies `kernel` to coordinate `i` of a dense mass vector.
pub fn apply_coordinate_kernel(
    space: &StateSpace,
    mass: &[f64],
    i: usize,
    kernel: &DMatrix<f64>,
) -> Vec<f64> {
    let n = space.n_symbols();
    let stride = space.stride(i);
    let mut out = vec![0.0; mass.len()];
    for (x, &p) in mass.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let a = (x / stride) % n;
        let base = x - a * stride;
        for b in 0..n {
            let k = kernel[(a, b)];
            if k != 0.0 {
                out[base + b * stride] += p * k;
            }
        }
    }
    out
}

/// Brings a data pmf onto the alphabet the process runs on.
pub fn to_process_alphabet(q0: &DensePmf, kind: NoiseKind) -> Result<DensePmf> {
    match kind {
        NoiseKind::Uniform => {
            kind.check(q0.space().alphabet())?;
            Ok(q0.clone())
        }
        NoiseKind::Masking => {
            let q = q0.to_masked_alphabet()?;
            if !q.is_unmasked() {
                return Err(Error::Validation(
                    "masking process needs data supported on unmasked states".into(),
                ));
            }
            Ok(q)
        }
    }
}

/// q_t from q_0 by the d-fold product of closed-form token kernels.
///
/// A plain-alphabet `q0` is embedded into the masked alphabet for `Masking`.
pub fn propagate_forward(q0: &DensePmf, kind: NoiseKind, t: f64) -> Result<DensePmf> {
    let q = to_process_alphabet(q0, kind)?;
    if t == 0.0 {
        return Ok(q);
    }
    let space = q.space().clone();
    let k = forward_token_kernel(kind, space.alphabet(), t)?;
    let mut mass = q.into_mass();
    for i in 0..space.dim() {
        mass = apply_coordinate_kernel(&space, &mass, i, &k.matrix);
    }
    Ok(DensePmf::from_parts_unchecked(space, mass))
}

/// λ = d · max_a |Q^tok(a, a)|.
pub fn dominating_rate(kind: NoiseKind, alphabet: Alphabet, dim: usize) -> Result<f64> {
    let q = rate_matrix_tok(kind, alphabet)?;
    let max_exit = (0..q.matrix.nrows())
        .map(|a| q.matrix[(a, a)].abs())
        .fold(0.0, f64::max);
    Ok(dim as f64 * max_exit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    pub coordinate: usize,
    pub from: usize,
    pub to: usize,
    pub state: StateIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardPath {
    pub initial: StateIndex,
    pub horizon: f64,
    pub events: Vec<JumpEvent>,
}

impl ForwardPath {
    pub fn terminal(&self) -> StateIndex {
        self.events.last().map_or(self.initial, |e| e.state)
    }
}

/// Exact simulation of the forward chain on [0, T] by competing exponential clocks.
pub fn sample_forward_path<R: Rng + ?Sized>(
    q0: &DensePmf,
    kind: NoiseKind,
    horizon: f64,
    rng: &mut R,
) -> Result<ForwardPath> {
    if !(horizon > 0.0) {
        return Err(Error::Domain("horizon must be positive".into()));
    }
    let q = to_process_alphabet(q0, kind)?;
    let space = q.space().clone();
    let rates = rate_matrix_tok(kind, space.alphabet())?.matrix;
    let n = space.n_symbols();
    let initial = sample_index(q.mass(), rng);
    let mut x = initial;
    let mut t = 0.0;
    let mut events = Vec::new();
    loop {
        let exits: Vec<f64> = (0..space.dim())
            .map(|i| -rates[(space.digit(x, i), space.digit(x, i))])
            .collect();
        let total: f64 = exits.iter().sum();
        if total <= 0.0 {
            break;
        }
        t += Exp::new(total).expect("positive rate").sample(rng);
        if t > horizon {
            break;
        }
        let i = sample_index(&exits, rng);
        let a = space.digit(x, i);
        let row: Vec<f64> = (0..n)
            .map(|b| if b == a { 0.0 } else { rates[(a, b)] })
            .collect();
        let b = sample_index(&row, rng);
        x = space.substitute_unchecked(x, i, b);
        events.push(JumpEvent {
            time: t,
            coordinate: i,
            from: a,
            to: b,
            state: x,
        });
    }
    Ok(ForwardPath {
        initial,
        horizon,
        events,
    })
}

/// One exact draw from q_t by uniformization with rate λ = d·max|Q^tok(a,a)|.
pub fn uniformize_forward<R: Rng + ?Sized>(
    q0: &DensePmf,
    kind: NoiseKind,
    t: f64,
    rng: &mut R,
) -> Result<StateIndex> {
    if !(t >= 0.0) {
        return Err(Error::Domain("time must be nonnegative".into()));
    }
    let q = to_process_alphabet(q0, kind)?;
    let space = q.space().clone();
    let rates = rate_matrix_tok(kind, space.alphabet())?.matrix;
    let d = space.dim();
    let lambda = dominating_rate(kind, space.alphabet(), d)?;
    let per_coord = lambda / d as f64;
    let mut x = sample_index(q.mass(), rng);
    if t == 0.0 {
        return Ok(x);
    }
    let n_events = Poisson::new(lambda * t).expect("positive mean").sample(rng) as u64;
    let n = space.n_symbols();
    for _ in 0..n_events {
        let i = rng.random_range(0..d);
        let a = space.digit(x, i);
        // Thinning: a real jump to b happens with probability Q(a,b)/per_coord.
        let u = rng.random::<f64>() * per_coord;
        let mut acc = 0.0;
        for b in 0..n {
            if b == a {
                continue;
            }
            acc += rates[(a, b)];
            if u < acc {
                x = space.substitute_unchecked(x, i, b);
                break;
            }
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use std::f64::consts::LN_2;

    fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).abs().max()
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(alpha(0.0, 7).unwrap(), 0.0);
        assert!((alpha(LN_2, 2).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((alpha(50.0, 4).unwrap() - 1.0).abs() < 1e-12);
        assert!(alpha(-1.0, 2).is_err());
        let mut prev = 0.0;
        for k in 1..100 {
            let a = alpha(k as f64 * 0.1, 5).unwrap();
            assert!(a > prev && a < 1.0);
            prev = a;
        }
    }

    #[test]
    fn kernel_examples() {
        let u = Alphabet::plain(2).unwrap();
        let m = Alphabet::masked(3).unwrap();
        let k0 = forward_token_kernel(NoiseKind::Uniform, u, 0.0).unwrap();
        assert_eq!(k0.matrix, DMatrix::identity(2, 2));
        let k0m = forward_token_kernel(NoiseKind::Masking, m, 0.0).unwrap();
        assert_eq!(k0m.matrix, DMatrix::identity(4, 4));

        let k = forward_token_kernel(NoiseKind::Uniform, u, LN_2).unwrap();
        assert!((k.matrix[(0, 0)] - 0.75).abs() < 1e-15);
        assert!((k.matrix[(0, 1)] - 0.25).abs() < 1e-15);

        let k = forward_token_kernel(NoiseKind::Masking, m, LN_2).unwrap();
        assert!((k.matrix[(1, 3)] - 0.5).abs() < 1e-15);
        assert_eq!(k.matrix[(3, 3)], 1.0);
        assert!(forward_token_kernel(NoiseKind::Masking, u, 1.0).is_err());
    }

    #[test]
    fn kernels_are_stochastic_and_semigroup() {
        for (kind, a) in [
            (NoiseKind::Uniform, Alphabet::plain(4).unwrap()),
            (NoiseKind::Masking, Alphabet::masked(3).unwrap()),
        ] {
            for &(s, t) in &[(0.1, 0.7), (1.0, 2.5), (0.0, 3.0)] {
                let ks = forward_token_kernel(kind, a, s).unwrap().matrix;
                let kt = forward_token_kernel(kind, a, t).unwrap().matrix;
                let kst = forward_token_kernel(kind, a, s + t).unwrap().matrix;
                assert!(max_abs(&(&ks * &kt), &kst) < 1e-12);
                for r in 0..kst.nrows() {
                    assert!((kst.row(r).sum() - 1.0).abs() < 1e-12);
                    assert!(kst.row(r).iter().all(|&v| (0.0..=1.0).contains(&v)));
                }
            }
            let q = rate_matrix_tok(kind, a).unwrap().matrix;
            for r in 0..q.nrows() {
                assert!(q.row(r).sum().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dominating_rates() {
        let a = Alphabet::plain(4).unwrap();
        assert!((dominating_rate(NoiseKind::Uniform, a, 3).unwrap() - 9.0 / 4.0).abs() < 1e-15);
        let m = Alphabet::masked(4).unwrap();
        assert_eq!(dominating_rate(NoiseKind::Masking, m, 5).unwrap(), 5.0);
    }

    #[test]
    fn propagate_limits() {
        let sp = StateSpace::new(3, Alphabet::plain(3).unwrap()).unwrap();
        let q0 = DensePmf::normalize(sp.clone(), (0..27).map(|k| (k * k % 7) as f64 + 0.5).collect())
            .unwrap();
        assert_eq!(propagate_forward(&q0, NoiseKind::Uniform, 0.0).unwrap(), q0);
        let qt = propagate_forward(&q0, NoiseKind::Uniform, 50.0).unwrap();
        assert!(qt.mass().iter().all(|&p| (p - 1.0 / 27.0).abs() < 1e-10));

        let qm = propagate_forward(&q0, NoiseKind::Masking, 50.0).unwrap();
        let all = qm.space().all_masked().unwrap();
        assert!((qm.prob(all) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn masking_rejects_masked_support() {
        let sp = StateSpace::new(2, Alphabet::masked(2).unwrap()).unwrap();
        let x = sp.pack(&[0, 2]).unwrap();
        let q0 = DensePmf::point_mass(sp, x).unwrap();
        assert!(matches!(
            propagate_forward(&q0, NoiseKind::Masking, 1.0),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn forward_paths_have_valid_events() {
        let sp = StateSpace::new(3, Alphabet::plain(2).unwrap()).unwrap();
        let q0 = DensePmf::uniform(sp.clone());
        let mut rng = substream(3, 0);
        for kind in [NoiseKind::Uniform, NoiseKind::Masking] {
            for _ in 0..200 {
                let path = sample_forward_path(&q0, kind, 2.0, &mut rng).unwrap();
                let space = to_process_alphabet(&q0, kind).unwrap().space().clone();
                let mut prev = path.initial;
                let mut last_t = 0.0;
                for e in &path.events {
                    assert!(e.time > last_t && e.time <= 2.0);
                    assert_eq!(space.hamming(prev, e.state), 1);
                    if kind == NoiseKind::Masking {
                        assert_eq!(e.to, 2);
                        assert_ne!(e.from, 2);
                    }
                    prev = e.state;
                    last_t = e.time;
                }
            }
        }
    }
}
