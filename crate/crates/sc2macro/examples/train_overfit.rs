//! Overfit a match-up adapter on a handful of synthetic replays and score
//! it on its own training set. A correctly wired pipeline reaches perfect
//! build-order and global-state accuracy here; an untrained model parses
//! to almost nothing.
//!
//! ```bash
//! cargo run --release --example train_overfit
//! ```

use sc2macro::catalog::{MatchUp, Race, RaceCatalogs};
use sc2macro::eval::{evaluate, EvalConfig};
use sc2macro::lora::LoraConfig;
use sc2macro::model::{MicroLmParams, ModelConfig};
use sc2macro::pipeline::{build_tokenizer, compile_replays, embedded_qa_corpus};
use sc2macro::replay::{synthesize_replays_with, SynthesisOptions};
use sc2macro::spatial::DescriberConfig;
use sc2macro::train::{train_stage2, TrainConfig};

fn env1(name: &str, default: f64) -> f64 {
    std::env::var(name)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

fn main() -> sc2macro::Result<()> {
    let catalogs = RaceCatalogs::mini();
    let matchup = MatchUp::new(Race::Terran, Race::Terran);
    let opts = SynthesisOptions {
        steps_per_replay: env1("OVERFIT_STEPS_PER_REPLAY", 2.0) as usize,
        horizon: 4,
        building_plane: 0,
    };
    let replays = synthesize_replays_with(matchup, 8, 7, &catalogs, &opts);
    let describer = DescriberConfig::default();
    let prompts = compile_replays(&replays, &catalogs, &describer, opts.horizon)?;
    println!("compiled {} prompt pairs", prompts.len());

    let tokenizer = build_tokenizer(&catalogs, &embedded_qa_corpus(), &[], 64)?;
    println!("vocabulary: {} tokens", tokenizer.vocab_size());
    let longest = prompts
        .iter()
        .map(|p| {
            tokenizer.tokenize(&p.instruction).len() + tokenizer.tokenize(&p.target).len() + 3
        })
        .max()
        .unwrap();
    println!("longest encoded pair: {longest} tokens");

    let env = |name: &str, default: f64| -> f64 {
        std::env::var(name)
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(default)
    };
    let d_model = env("OVERFIT_DMODEL", 64.0) as usize;
    let model_cfg = ModelConfig {
        n_layers: env("OVERFIT_LAYERS", 2.0) as usize,
        d_model,
        n_heads: env("OVERFIT_HEADS", 4.0) as usize,
        d_ff: 4 * d_model,
        vocab_size: tokenizer.vocab_size(),
        max_seq_len: 288,
    };
    let base = MicroLmParams::<f32>::init(model_cfg, 1)?;
    let mut lora = LoraConfig::new(env("OVERFIT_R", 16.0) as usize, env("OVERFIT_ALPHA", 32.0));
    if env("OVERFIT_ALL_TARGETS", 1.0) > 0.0 {
        lora.targets = sc2macro::lora::LayerSelector::all();
    }
    let train_cfg = TrainConfig {
        peak_lr: env("OVERFIT_LR", 2e-2),
        epochs: env("OVERFIT_EPOCHS", 300.0) as usize,
        warmup_steps: env("OVERFIT_WARMUP", 20.0) as usize,
        grad_accum_steps: 4,
        batch_size: 4,
        max_tokens: 288,
        seed: 7,
        lora,
        quantize_base: false,
        ..TrainConfig::stage2_default(7)
    };

    let started = std::time::Instant::now();
    let (adapter, log) = train_stage2(&base, &tokenizer, &prompts, &train_cfg)?;
    println!(
        "trained {} steps in {:.1}s, loss {:.4} -> {:.4}",
        log.steps.len(),
        started.elapsed().as_secs_f64(),
        log.steps.first().unwrap().loss,
        log.final_loss
    );
    for rec in log.steps.iter().step_by(25) {
        println!("  step {:4}  lr {:.5}  loss {:.4}", rec.step, rec.lr, rec.loss);
    }

    let eval_cfg = EvalConfig {
        describer,
        ..EvalConfig::default()
    };
    let (untrained, _) = evaluate(&base, None, &replays, &tokenizer, &catalogs, &eval_cfg)?;
    println!(
        "untrained base:  BO {:.3}  GS {:.3}  parse failures {:.3}",
        untrained.bo_accuracy, untrained.gs_accuracy, untrained.parse_failure_rate
    );
    let (report, _) = evaluate(
        &base,
        Some(&adapter),
        &replays,
        &tokenizer,
        &catalogs,
        &eval_cfg,
    )?;
    println!(
        "trained adapter: BO {:.3}  GS {:.3}  parse failures {:.3}  ({} steps)",
        report.bo_accuracy, report.gs_accuracy, report.parse_failure_rate, report.n_steps
    );
    Ok(())
}
