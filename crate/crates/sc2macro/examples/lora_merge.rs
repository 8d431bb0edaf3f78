//! Attach a low-rank adapter, compare the adapter forward against the
//! merged forward, and count trainable parameters.
//!
//! ```bash
//! cargo run --example lora_merge
//! ```

use sc2macro::lora::{attach, merge, trainable_param_count, LoraConfig};
use sc2macro::model::{MicroLmParams, ModelConfig};
use sc2macro::net::forward;

fn main() -> sc2macro::Result<()> {
    let config = ModelConfig {
        n_layers: 3,
        d_model: 48,
        n_heads: 4,
        d_ff: 96,
        vocab_size: 50,
        max_seq_len: 32,
    };
    let params = MicroLmParams::<f32>::init(config, 11)?;
    let cfg = LoraConfig::new(4, 8.0);

    let (count, fraction) = trainable_param_count(&cfg, &params)?;
    println!(
        "adapter trains {count} of {} parameters ({:.2}%)",
        params.param_count(),
        fraction * 100.0
    );

    let mut adapter = attach(&params, &cfg, 5)?;
    let ids = [7u32, 3, 19, 42, 8, 1];

    // Fresh adapter: B = 0, so nothing changes yet.
    let base_logits = forward(&params, None, &ids)?;
    let fresh_logits = forward(&params, Some(&adapter), &ids)?;
    let max_fresh = max_abs_diff(&base_logits, &fresh_logits);
    println!("fresh adapter vs base: max |diff| = {max_fresh:e}");

    // Nudge the factors so the adapter actually does something, then
    // verify merged weights reproduce the adapter path.
    for (_, pair) in adapter.pairs_mut() {
        pair.b.mapv_inplace(|_| 0.02);
    }
    let adapted = forward(&params, Some(&adapter), &ids)?;
    let merged = merge(&adapter, &params)?;
    let merged_logits = forward(&merged, None, &ids)?;
    let mut max_rel = 0.0f64;
    for (a, b) in adapted.iter().zip(merged_logits.iter()) {
        let rel = (*a as f64 - *b as f64).abs() / (a.abs() as f64).max(b.abs() as f64).max(1.0);
        max_rel = max_rel.max(rel);
    }
    println!("adapter forward vs merged forward: max relative diff = {max_rel:e}");
    Ok(())
}

fn max_abs_diff(a: &ndarray::Array2<f32>, b: &ndarray::Array2<f32>) -> f32 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}
