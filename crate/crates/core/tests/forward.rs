use ddlab::forward::{
    forward_token_kernel, propagate_forward, rate_matrix_tok, sample_forward_path, to_process_alphabet,
    uniformize_forward, NoiseKind,
};
use ddlab::ode::rk4_row;
use ddlab::rng::substream;
use ddlab::samplers::chi_square_gof;
use ddlab::state_space::{Alphabet, DensePmf, StateSpace};
use nalgebra::{DMatrix, RowDVector};
use proptest::prelude::*;
use statrs::distribution::{Binomial, Discrete};

fn kind_of(masking: bool) -> NoiseKind {
    if masking {
        NoiseKind::Masking
    } else {
        NoiseKind::Uniform
    }
}

fn random_pmf(d: usize, s: usize, weights: &[f64]) -> DensePmf {
    let sp = StateSpace::new(d, Alphabet::plain(s).unwrap()).unwrap();
    let raw: Vec<f64> = (0..sp.len()).map(|x| weights[x % weights.len()] + 0.01).collect();
    DensePmf::normalize(sp, raw).unwrap()
}

/// Generator of the whole chain, built from the token generator.
fn full_generator(space: &StateSpace, kind: NoiseKind) -> DMatrix<f64> {
    let tok = rate_matrix_tok(kind, space.alphabet()).unwrap().matrix;
    let n = space.len();
    let mut q = DMatrix::zeros(n, n);
    for x in 0..n {
        for i in 0..space.dim() {
            let a = space.digit(x, i);
            for b in (0..space.n_symbols()).filter(|&b| b != a) {
                let r = tok[(a, b)];
                if r > 0.0 {
                    q[(x, space.substitute(x, i, b).unwrap())] += r;
                    q[(x, x)] -= r;
                }
            }
        }
    }
    q
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernels_compose(masking: bool, s in 2usize..6, a in 0.0f64..3.0, b in 0.0f64..3.0) {
        let kind = kind_of(masking);
        let alphabet = kind.alphabet(s).unwrap();
        let ka = forward_token_kernel(kind, alphabet, a).unwrap().matrix;
        let kb = forward_token_kernel(kind, alphabet, b).unwrap().matrix;
        let kab = forward_token_kernel(kind, alphabet, a + b).unwrap().matrix;
        prop_assert!((&ka * &kb - &kab).abs().max() <= 1e-12);
        for r in 0..ka.nrows() {
            prop_assert!((ka.row(r).sum() - 1.0).abs() <= 1e-12);
            prop_assert!(ka.row(r).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn propagation_preserves_mass(masking: bool, w in proptest::collection::vec(0.0f64..1.0, 1..9), t in 0.0f64..4.0) {
        let q = propagate_forward(&random_pmf(3, 2, &w), kind_of(masking), t).unwrap();
        prop_assert!((q.mass().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(q.mass().iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn propagation_matches_ode_solution() {
    for kind in [NoiseKind::Uniform, NoiseKind::Masking] {
        for (d, s) in [(2, 3), (3, 2), (2, 4)] {
            let q0 = random_pmf(d, s, &[0.3, 1.0, 0.1, 0.7, 0.2]);
            let full = to_process_alphabet(&q0, kind).unwrap();
            let gen = full_generator(full.space(), kind);
            let t = 1.3;
            let p0 = RowDVector::from_row_slice(full.mass());
            let ode = rk4_row(|_| gen.clone(), &p0, 0.0, t, (t / 1e-3).round() as usize);
            let exact = propagate_forward(&q0, kind, t).unwrap();
            let dev = exact.mass().iter().zip(ode.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(dev <= 1e-8, "{kind:?} d={d} S={s}: {dev:e}");
        }
    }
}

#[test]
fn mask_count_is_binomial() {
    let d = 5;
    let q0 = random_pmf(d, 3, &[0.5, 2.0, 0.1]);
    for t in [0.1, 0.7, 2.5] {
        let qt = propagate_forward(&q0, NoiseKind::Masking, t).unwrap();
        let mut counts = vec![0.0; d + 1];
        for (x, &p) in qt.mass().iter().enumerate() {
            counts[qt.space().mask_count(x)] += p;
        }
        let binom = Binomial::new(1.0 - (-t).exp(), d as u64).unwrap();
        for (k, &c) in counts.iter().enumerate() {
            assert!((c - binom.pmf(k as u64)).abs() <= 1e-12, "t={t} k={k}");
        }
    }
}

#[test]
fn path_sampler_matches_closed_form() {
    // d = 1, S = 2 uniform: P(flip by t) = (1 − e^{−t})/2
    let sp = StateSpace::new(1, Alphabet::plain(2).unwrap()).unwrap();
    let q0 = DensePmf::point_mass(sp, 0).unwrap();
    let t: f64 = 0.8;
    let mut counts = vec![0u64; 2];
    let mut rng = substream(5, 0);
    for _ in 0..100_000 {
        counts[sample_forward_path(&q0, NoiseKind::Uniform, t, &mut rng).unwrap().terminal()] += 1;
    }
    let flip = 0.5 * (1.0 - (-t).exp());
    let gof = chi_square_gof(&counts, &[1.0 - flip, flip]);
    assert!(gof.p_value > 0.01, "{gof:?}");
}

#[test]
fn uniformization_matches_propagation() {
    for kind in [NoiseKind::Uniform, NoiseKind::Masking] {
        let q0 = random_pmf(2, 2, &[0.1, 0.4, 0.2, 0.3]);
        let exact = propagate_forward(&q0, kind, 1.0).unwrap();
        let mut counts = vec![0u64; exact.space().len()];
        let mut rng = substream(3, kind as u64);
        for _ in 0..100_000 {
            counts[uniformize_forward(&q0, kind, 1.0, &mut rng).unwrap()] += 1;
        }
        let gof = chi_square_gof(&counts, exact.mass());
        assert!(gof.p_value > 0.01, "{kind:?}: {gof:?}");
    }
}
