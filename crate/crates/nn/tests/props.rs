use contactnn::{
    gemm, grad_check, masked_softmax, weighted_cross_entropy, Adam, AdamConfig, Graph, Tensor,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn row_and_mask() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1usize..12).prop_flat_map(|n| {
        (
            prop::collection::vec(-30.0f64..30.0, n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

proptest! {
    #[test]
    fn masked_softmax_is_a_distribution_over_allowed((x, mut mask) in row_and_mask()) {
        mask[0] = false;
        let p = masked_softmax(&x, &mask).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (pi, &m) in p.iter().zip(&mask) {
            if m { prop_assert_eq!(*pi, 0.0); } else { prop_assert!(*pi > 0.0); }
        }
        let shifted: Vec<f64> = x.iter().map(|v| v + 123.0).collect();
        let q = masked_softmax(&shifted, &mask).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_entries_do_not_influence_the_rest((x, mut mask) in row_and_mask(), noise in -1e6f64..1e6) {
        mask[0] = false;
        let mut y = x.clone();
        for (v, &m) in y.iter_mut().zip(&mask) {
            if m { *v = noise; }
        }
        prop_assert_eq!(masked_softmax(&x, &mask).unwrap(), masked_softmax(&y, &mask).unwrap());
    }

    #[test]
    fn gemm_matches_naive(m in 1usize..9, n in 1usize..9, k in 1usize..9, ta: bool, tb: bool, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut c = vec![0.5; m * n];
        gemm(ta, tb, m, n, k, 2.0, &a, &b, 1.0, &mut c);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    let av = if ta { a[p * m + i] } else { a[i * k + p] };
                    let bv = if tb { b[j * k + p] } else { b[p * n + j] };
                    s += av * bv;
                }
                prop_assert!((c[i * n + j] - (0.5 + 2.0 * s)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loss_is_invariant_to_weight_scale(seed: u64, scale in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = Tensor::from_fn([5, 3], |_| rng.gen_range(-4.0..4.0));
        let labels: Vec<usize> = (0..5).map(|_| rng.gen_range(0..3)).collect();
        let w: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..3.0)).collect();
        let ws: Vec<f64> = w.iter().map(|v| v * scale).collect();
        let a = weighted_cross_entropy(&logits, &labels, &w);
        let b = weighted_cross_entropy(&logits, &labels, &ws);
        prop_assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
    }
}

#[test]
fn two_layer_network_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut t = |r, c| Tensor::from_fn([r, c], |_| rng.gen_range(-1.0..1.0));
    let params = vec![t(4, 6), t(6, 5), t(5, 3)];
    let x = Tensor::from_fn([4, 4], |i| (i as f64 * 0.37).sin());
    let err = grad_check(&params, 1e-5, |g, v| {
        let x = g.constant(x.clone());
        let h = g.matmul(x, v[0]);
        let h = g.relu(h);
        let h = g.matmul(h, v[1]);
        let bias = g.constant(Tensor::from_fn([5], |i| i as f64 * 0.1));
        let h = g.add_bias(h, bias);
        let logits = g.matmul(h, v[2]);
        g.weighted_cross_entropy(logits, &[0, 2, 1, 2], &[1.0, 2.0, 0.5])
    });
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn adam_minimises_a_quadratic() {
    let mut p = Tensor::from_fn([3], |i| i as f32 + 1.0);
    let mut adam = Adam::<f32>::new(AdamConfig {
        lr: 0.05,
        weight_decay: 0.0,
        ..AdamConfig::default()
    });
    for _ in 0..500 {
        let mut g = Graph::new();
        let v = g.param(p.clone());
        let sq = g.mul(v, v);
        let loss = g.sum(sq);
        let grads = g.backward(loss);
        let grad = grads.get(v).unwrap().clone();
        adam.step([(&mut p, &grad)]).unwrap();
    }
    assert!(p.data().iter().all(|v| v.abs() < 0.05), "{:?}", p.data());
    assert_eq!(adam.steps_taken(), 500);
}
