//! Trains the default model on the topology-only task in both attention
//! modes and prints test accuracy.
//!
//! `cargo run --release -p contactformer --example structure_signal [max_epochs]`

use std::time::Instant;

use contactformer::dataset::{stratified_split, AttentionMode, SplitFractions, SplitName};
use contactformer::model::{ModelConfig, ModelParams};
use contactformer::synthetic::structure_signal_dataset;
use contactformer::train::{evaluate, train, TrainConfig};

fn main() {
    let max_epochs = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(300);
    let data = structure_signal_dataset(170, (10, 14), 11);
    let split = stratified_split(&data, SplitFractions::default(), 0).expect("split");
    let (tr, va, te) = (
        split.select(SplitName::Train, &data),
        split.select(SplitName::Val, &data),
        split.select(SplitName::Test, &data),
    );
    println!("train {} val {} test {}", tr.len(), va.len(), te.len());
    for mode in [AttentionMode::Contact, AttentionMode::Full] {
        let config = ModelConfig {
            attention_mode: mode,
            ..ModelConfig::with_dims(256, 4)
        };
        let tc = TrainConfig {
            max_epochs,
            ..TrainConfig::default()
        };
        let start = Instant::now();
        let params = ModelParams::init(&config, tc.seed).expect("init");
        let out = train(&config, params, &tr, &va, &tc, None, |r| {
            println!(
                "{mode:?} epoch {:3} train {:.4} val {:.4} acc {:.3} [{:.1}s]",
                r.epoch,
                r.train_loss,
                r.val_loss,
                r.val_accuracy,
                start.elapsed().as_secs_f64()
            );
            true
        })
        .expect("train");
        let acc = evaluate(&out.best_params, &config, &te, 64, &[1.0; 4])
            .expect("eval")
            .accuracy(4);
        println!(
            "{mode:?}: best epoch {} test accuracy {acc:.3} in {:.1}s",
            out.best_epoch,
            start.elapsed().as_secs_f64()
        );
    }
}
