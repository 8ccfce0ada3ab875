//! Checks shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use contactformer::contact::ContactMap;
use contactformer::dataset::{batch_encode, AttentionMode, Entry, ALPHABET};
use contactformer::model::{encoder_forward, infer, ModelConfig, ModelParams};
use contactnn::{grad_check, Graph, Tensor};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn tiny_config(classes: usize) -> ModelConfig {
    ModelConfig {
        embed_dim: 8,
        n_heads: 2,
        n_layers: 1,
        ffn_dim: 32,
        n_classes: classes,
        max_len: 128,
        dropout: 0.0,
        ..ModelConfig::default()
    }
}

pub fn random_entry<R: Rng>(rng: &mut R, len: usize, p_contact: f64, classes: usize) -> Entry {
    let sequence: String = (0..len)
        .map(|_| ALPHABET[rng.gen_range(0..20)] as char)
        .collect();
    let mut pairs = Vec::new();
    for i in 0..len {
        for j in i + 1..len {
            if rng.gen_bool(p_contact) {
                pairs.push((i, j));
            }
        }
    }
    Entry {
        id: format!("r{}", rng.gen::<u32>()),
        superfamily: String::new(),
        sequence,
        contact_map: ContactMap::from_pairs(len, pairs).unwrap(),
        label: rng.gen_range(0..classes),
    }
}

/// Moves every parameter away from its structured initial value so that
/// norms and biases take part in the check.
pub fn jitter<R: Rng>(params: &mut ModelParams<f64>, rng: &mut R) {
    for p in params.iter_mut() {
        for v in p.tensor.data_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
}

/// Largest relative gradient error of the full tiny model (embed 8, 2 heads,
/// 1 layer, ffn 32, L = 6, C = 4) on a two-sample batch with padding.
pub fn full_model_grad_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = tiny_config(4);
    let mut params = ModelParams::<f64>::init(&cfg, seed).unwrap();
    jitter(&mut params, &mut rng);
    let a = random_entry(&mut rng, 6, 0.4, 4);
    let b = random_entry(&mut rng, 4, 0.4, 4);
    let batch = batch_encode(&[&a, &b], 6, AttentionMode::Contact).unwrap();
    let weights: Vec<f64> = (0..4).map(|_| rng.gen_range(0.5..2.0)).collect();
    let tensors: Vec<Tensor<f64>> = params.iter().map(|p| p.tensor.clone()).collect();
    grad_check(&tensors, 1e-5, |g, vars| {
        let bound = params.bind_vars(vars).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let out = encoder_forward(g, &bound, &batch, &cfg, false, &mut r).unwrap();
        g.weighted_cross_entropy(out.logits, &batch.labels, &weights)
    })
}

fn layer_output(params: &ModelParams<f64>, cfg: &ModelConfig, e: &Entry) -> Vec<f64> {
    let batch = batch_encode(&[e], cfg.max_len, cfg.attention_mode).unwrap();
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let out = encoder_forward(&mut g, &bound, &batch, cfg, false, &mut r).unwrap();
    g.value(out.layer_states[0]).data().to_vec()
}

/// One random one-layer instance: mutating residue `j` must move position
/// `i`'s output by more than `tol` exactly when `i` and `j` are in contact
/// (or equal). Returns the first violation.
pub fn locality_trial(seed: u64, tol: f64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig {
        embed_dim: 16,
        n_heads: 4,
        ffn_dim: 32,
        ..tiny_config(3)
    };
    let mut params = ModelParams::<f64>::init(&cfg, seed).unwrap();
    jitter(&mut params, &mut rng);
    let len = rng.gen_range(3..=12);
    let e = random_entry(&mut rng, len, 0.3, 3);
    let base = layer_output(&params, &cfg, &e);
    let d = cfg.embed_dim;
    for j in 0..len {
        let mut seq: Vec<u8> = e.sequence.clone().into_bytes();
        let old = seq[j];
        while seq[j] == old {
            seq[j] = ALPHABET[rng.gen_range(0..20)];
        }
        let changed = Entry {
            sequence: String::from_utf8(seq).unwrap(),
            ..e.clone()
        };
        let out = layer_output(&params, &cfg, &changed);
        for i in 0..len {
            let delta = (0..d)
                .map(|c| (out[i * d + c] - base[i * d + c]).abs())
                .fold(0.0, f64::max);
            let expected = e.contact_map.contains(i, j);
            if (delta > tol) != expected {
                return Err(format!(
                    "seed {seed}: i={i} j={j} contact={expected} delta={delta:e}"
                ));
            }
        }
    }
    Ok(())
}

/// Largest logit change of one sample when it is batched next to a longer
/// one, which pads it with `1..=64` extra tokens.
pub fn padding_trial(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig {
        embed_dim: 16,
        n_heads: 4,
        n_layers: 2,
        ffn_dim: 64,
        n_classes: 5,
        max_len: 128,
        dropout: 0.1,
        ..ModelConfig::default()
    };
    let params = ModelParams::<f32>::init(&cfg, seed).unwrap();
    let len = rng.gen_range(1..=40);
    let extra = rng.gen_range(1..=64);
    let e = random_entry(&mut rng, len, 0.2, 5);
    let long = random_entry(&mut rng, len + extra, 0.2, 5);
    let mode = if seed.is_multiple_of(2) {
        AttentionMode::Contact
    } else {
        AttentionMode::Full
    };
    let cfg = ModelConfig {
        attention_mode: mode,
        ..cfg
    };
    let alone = batch_encode(&[&e], cfg.max_len, mode).unwrap();
    let padded = batch_encode(&[&e, &long], cfg.max_len, mode).unwrap();
    assert_eq!(padded.width, len + extra);
    let (a, _) = infer(&params, &cfg, &alone).unwrap();
    let (b, _) = infer(&params, &cfg, &padded).unwrap();
    let c = cfg.n_classes;
    a.data()
        .iter()
        .zip(&b.data()[..c])
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f32, f32::max) as f64
}

/// Independent confusion-matrix computation of weighted P/R/F1.
pub fn prf_oracle(y_true: &[usize], y_pred: &[usize], classes: usize) -> (f64, f64, f64) {
    let mut cm = vec![vec![0usize; classes]; classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        cm[t][p] += 1;
    }
    let n = y_true.len() as f64;
    let (mut wp, mut wr, mut wf) = (0.0, 0.0, 0.0);
    for c in 0..classes {
        let tp = cm[c][c] as f64;
        let row: f64 = cm[c].iter().sum::<usize>() as f64;
        let col: f64 = (0..classes).map(|r| cm[r][c]).sum::<usize>() as f64;
        let p = if col == 0.0 { 1.0 } else { tp / col };
        let r = if row == 0.0 { 1.0 } else { tp / row };
        let f = if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        };
        wp += row * p;
        wr += row * r;
        wf += row * f;
    }
    if n == 0.0 {
        (1.0, 1.0, 1.0)
    } else {
        (wp / n, wr / n, wf / n)
    }
}

/// ROC area of one instance from its one-hot truth and score vector, by
/// sweeping thresholds and integrating with trapezoids.
pub fn roc_auc_oracle(scores: &[f64], label: usize) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let negatives = (scores.len() - 1) as f64;
    let mut points = vec![(0.0, 0.0)];
    for t in thresholds {
        let tp = if scores[label] >= t { 1.0 } else { 0.0 };
        let fp = scores
            .iter()
            .enumerate()
            .filter(|&(c, &s)| c != label && s >= t)
            .count() as f64;
        points.push((fp / negatives, tp));
    }
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Naive contact set, `i < j` only.
pub fn contact_oracle(xyz: &[[f64; 3]], threshold: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..xyz.len() {
        for j in i + 1..xyz.len() {
            let d2: f64 = (0..3).map(|k| (xyz[i][k] - xyz[j][k]).powi(2)).sum();
            if d2.sqrt() <= threshold {
                out.push((i, j));
            }
        }
    }
    out
}

/// Random point cloud whose pairwise distances all stay at least `margin`
/// away from `threshold`, so rounding under rigid motion cannot flip a pair.
pub fn point_cloud<R: Rng>(rng: &mut R, n: usize, threshold: f64, margin: f64) -> Vec<[f64; 3]> {
    let mut pts: Vec<[f64; 3]> = Vec::with_capacity(n);
    while pts.len() < n {
        let p = [
            rng.gen_range(-20.0..20.0),
            rng.gen_range(-20.0..20.0),
            rng.gen_range(-20.0..20.0),
        ];
        let ok = pts.iter().all(|q| {
            let d = (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>().sqrt();
            (d - threshold).abs() > margin
        });
        if ok {
            pts.push(p);
        }
    }
    pts
}

/// Uniformly random rotation (from a normalised quaternion) plus translation.
pub fn rigid_motion<R: Rng>(rng: &mut R, pts: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let mut q: [f64; 4] = [0.0; 4];
    loop {
        for v in &mut q {
            *v = rng.gen_range(-1.0..1.0);
        }
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            q.iter_mut().for_each(|v| *v /= n);
            break;
        }
    }
    let [w, x, y, z] = q;
    let r = [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ];
    let t = [
        rng.gen_range(-100.0..100.0),
        rng.gen_range(-100.0..100.0),
        rng.gen_range(-100.0..100.0),
    ];
    pts.iter()
        .map(|p| {
            let mut o = [0.0; 3];
            for (a, row) in r.iter().enumerate() {
                o[a] = row[0] * p[0] + row[1] * p[1] + row[2] * p[2] + t[a];
            }
            o
        })
        .collect()
}

pub struct OverfitRun {
    pub initial_loss: f64,
    pub epoch1_loss: f64,
    /// First epoch at which every training sample is classified correctly.
    pub perfect_at: Option<usize>,
}

/// Trains the tiny model on 32 composition-separable samples (4 classes),
/// scoring the training set itself after every epoch.
pub fn overfit_trial(max_epochs: usize) -> OverfitRun {
    use contactformer::synthetic::composition_dataset;
    use contactformer::train::{train, TrainConfig};
    let data = composition_dataset(32, 4, 12, 17);
    let refs: Vec<&Entry> = data.iter().collect();
    let cfg = ModelConfig {
        dropout: 0.1,
        ..tiny_config(4)
    };
    let tc = TrainConfig {
        lr: 1e-2,
        batch_size: 8,
        max_epochs,
        patience: 0,
        seed: 4,
        ..TrainConfig::default()
    };
    let mut epoch1 = f64::NAN;
    let mut perfect_at = None;
    let out = train(
        &cfg,
        ModelParams::init(&cfg, 4).unwrap(),
        &refs,
        &refs,
        &tc,
        None,
        |r| {
            if r.epoch == 1 {
                epoch1 = r.val_loss;
            }
            if r.val_accuracy == 1.0 {
                perfect_at = Some(r.epoch);
                return false;
            }
            true
        },
    )
    .unwrap();
    OverfitRun {
        initial_loss: out.initial_val_loss,
        epoch1_loss: epoch1,
        perfect_at,
    }
}
