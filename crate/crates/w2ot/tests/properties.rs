//! Property-based tests for the numerical core and the persistence layer.

use proptest::prelude::*;
use w2ot::activation::Activation;
use w2ot::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
use w2ot::data::RngStream;
use w2ot::eval::sorted_matching_w2;
use w2ot::icnn::{forward, init_params, IcnnConfig, IcnnParams};
use w2ot::tensor::Tensor;
use w2ot::train::Precision;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// 0.5 mean (sorted pairing) is invariant under permutations of either
    /// side and symmetric in its arguments.
    #[test]
    fn sorted_matching_is_permutation_invariant(
        mut a in proptest::collection::vec(-50.0f64..50.0, 1..40),
        shuffle_seed in 0u64..1000,
    ) {
        let b: Vec<f64> = a.iter().map(|v| v * 0.7 + 3.0).collect();
        let base = sorted_matching_w2(&a, &b).unwrap();
        // deterministic pseudo-shuffle of a
        let n = a.len();
        for i in 0..n {
            let j = ((shuffle_seed as usize).wrapping_mul(31).wrapping_add(i * 17)) % n;
            a.swap(i, j);
        }
        let shuffled = sorted_matching_w2(&a, &b).unwrap();
        prop_assert!((base - shuffled).abs() < 1e-9);
        let sym = sorted_matching_w2(&b, &a).unwrap();
        prop_assert!((base - sym).abs() < 1e-9);
        prop_assert!(base >= 0.0);
    }

    /// The squared leaky ReLU is convex (but not monotone: it decreases on
    /// the negative branch); the plain leaky ReLU is both convex and
    /// nondecreasing. Checked on sampled triples for any slope in (0, 1].
    #[test]
    fn activations_are_convex_and_leaky_relu_monotone(
        beta in 0.01f64..1.0,
        x in -10.0f64..10.0,
        y in -10.0f64..10.0,
        lam in 0.0f64..1.0,
    ) {
        for act in [Activation::squared_leaky_relu(beta), Activation::leaky_relu(beta)] {
            let mid = act.value(lam * x + (1.0 - lam) * y);
            let chord = lam * act.value(x) + (1.0 - lam) * act.value(y);
            prop_assert!(mid <= chord + 1e-9);
        }
        let act = Activation::leaky_relu(beta);
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        prop_assert!(act.value(lo) <= act.value(hi) + 1e-12);
    }

    /// ICNNs with projected weights satisfy midpoint convexity at random
    /// probe pairs.
    #[test]
    fn projected_icnn_midpoint_convexity(
        seed in 0u64..500,
        d in 1usize..4,
        m in 2usize..6,
    ) {
        let cfg = IcnnConfig::new(d, m, 3);
        let params: IcnnParams<f64> =
            init_params(&cfg, 1.0, RngStream::new(seed, "prop-init").rng()).project_nonneg();
        let mut stream = RngStream::new(seed, "prop-probe");
        use rand::Rng;
        let rng = stream.rng();
        for _ in 0..20 {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let y: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
            let fm = forward(&params, &cfg, &Tensor::vector(mid).unwrap()).unwrap();
            let fx = forward(&params, &cfg, &Tensor::vector(x).unwrap()).unwrap();
            let fy = forward(&params, &cfg, &Tensor::vector(y).unwrap()).unwrap();
            prop_assert!(fm <= 0.5 * (fx + fy) + 1e-9);
        }
    }

    /// Checkpoints round-trip bit-exactly for arbitrary architectures and
    /// random weights.
    #[test]
    fn checkpoint_round_trip(
        seed in 0u64..1000,
        d in 1usize..5,
        m in 1usize..6,
        l in 1usize..4,
    ) {
        let cfg = IcnnConfig::new(d, m, l);
        let make = |label: &str| -> IcnnParams<f64> {
            init_params(&cfg, 1.3, RngStream::new(seed, label).rng())
        };
        let ck = Checkpoint {
            precision: Precision::F64,
            iteration: seed as usize,
            f_cfg: cfg,
            f: make("prop-f"),
            g_cfg: cfg,
            g: make("prop-g"),
        };
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ck).unwrap();
        let back = read_checkpoint(&buf[..]).unwrap();
        for (a, b) in back.f.tensors().iter().zip(ck.f.tensors()) {
            prop_assert_eq!(a.data(), b.data());
        }
        for (a, b) in back.g.tensors().iter().zip(ck.g.tensors()) {
            prop_assert_eq!(a.data(), b.data());
        }
    }
}
