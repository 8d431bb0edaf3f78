//! Quantize a weight matrix to int8 with per-row scales and measure the
//! reconstruction error, then run a quantized-base forward pass.
//!
//! ```bash
//! cargo run --example quantize_roundtrip
//! ```

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use sc2macro::model::{MicroLmParams, ModelConfig};
use sc2macro::net::forward;
use sc2macro::quant::{dequantize, quantize8, QuantizedBase};

fn main() -> sc2macro::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let w = Array2::from_shape_simple_fn((6, 16), || rng.gen::<f32>() * 2.0 - 1.0);
    let qt = quantize8(&w)?;
    let back: Array2<f32> = dequantize(&qt);

    let mut worst = 0.0f64;
    let mut worst_frac = 0.0f64;
    for r in 0..w.nrows() {
        for c in 0..w.ncols() {
            let err = (w[[r, c]] as f64 - back[[r, c]] as f64).abs();
            worst = worst.max(err);
            worst_frac = worst_frac.max(err / (qt.scales[r] * 0.5));
        }
    }
    println!("worst per-element error: {worst:e}");
    println!("as a fraction of scale/2: {worst_frac:.4} (never above 1)");

    // Whole-model path: dequantize-on-use forward equals the forward over
    // dequantized weights.
    let config = ModelConfig {
        n_layers: 2,
        d_model: 32,
        n_heads: 2,
        d_ff: 64,
        vocab_size: 40,
        max_seq_len: 24,
    };
    let params = MicroLmParams::<f32>::init(config, 9)?;
    let quantized = QuantizedBase::from_params(&params)?;
    let ids = [5u32, 17, 3, 30];
    let q_logits = quantized.quantized_forward(None, &ids)?;
    let d_logits = forward(&quantized.materialize()?, None, &ids)?;
    assert_eq!(q_logits, d_logits);
    println!("quantized forward matches dequantized forward bit-for-bit");

    let full_logits = forward(&params, None, &ids)?;
    let drift = q_logits
        .iter()
        .zip(full_logits.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    println!("max logit drift from full precision (informational): {drift:e}");
    Ok(())
}
