//! StarCraft II macromanagement prediction with a tiny decoder-only language
//! model, low-rank adapters, and 8-bit weight quantization.
//!
//! The pipeline turns match replays into text: per-step game features are
//! binned into categorical levels, combined with a building count read from
//! the spatial planes, and compiled into an instruction prompt. A small
//! trainable transformer answers with the next build-order actions and the
//! predicted match result. Fine-tuning runs in two stages (a question/answer
//! corpus, then compiled replay prompts) and touches only LoRA adapter
//! weights; the base model stays frozen and can be held in 8-bit form.
//!
//! Start with the runnable examples:
//!
//! ```text
//! cargo run --example synthesize_replays
//! cargo run --example compile_prompts
//! cargo run --example count_buildings
//! cargo run --example lora_merge
//! cargo run --example quantize_roundtrip
//! cargo run --example train_overfit
//! cargo run --example full_pipeline
//! ```
//!
//! The `sc2macro` binary wraps the same library calls behind batch
//! subcommands (`prepare-data`, `train-stage1`, `train-stage2`,
//! `merge-adapter`, `evaluate`, `zero-shot-eval`, `predict`).

pub mod catalog;
pub mod error;
pub mod eval;
pub mod lora;
pub mod model;
pub mod net;
pub mod pipeline;
pub mod prompt;
pub mod quant;
pub mod replay;
pub mod spatial;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
