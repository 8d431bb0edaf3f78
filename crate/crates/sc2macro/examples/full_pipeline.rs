//! The whole desk-scale run, end to end: prepare data, stage-1 fine-tune
//! on the text corpus, merge, stage-2 fine-tune on compiled prompts,
//! evaluate, and zero-shot a second match-up.
//!
//! ```bash
//! cargo run --release --example full_pipeline
//! ```

use sc2macro::catalog::MatchUp;
use sc2macro::lora::{merge, LoraAdapter, LoraConfig};
use sc2macro::model::{MicroLmParams, ModelConfig};
use sc2macro::eval::{evaluate, zero_shot_eval, EvalConfig};
use sc2macro::pipeline::{build_tokenizer, compile_replays, embedded_qa_corpus};
use sc2macro::replay::{synthesize_replays_with, SynthesisOptions};
use sc2macro::spatial::DescriberConfig;
use sc2macro::train::{train_stage1, train_stage2, TrainConfig};

fn main() -> sc2macro::Result<()> {
    let catalogs = sc2macro::catalog::RaceCatalogs::mini();
    let corpus = embedded_qa_corpus();
    let tokenizer = build_tokenizer(&catalogs, &corpus, &[], 64)?;
    println!("vocabulary: {} tokens", tokenizer.vocab_size());

    let model_cfg = ModelConfig {
        n_layers: 2,
        d_model: 64,
        n_heads: 4,
        d_ff: 256,
        vocab_size: tokenizer.vocab_size(),
        max_seq_len: 288,
    };
    let base = MicroLmParams::<f32>::init(model_cfg, 1)?;

    // Stage 1: question/answer corpus, quantized frozen base.
    let stage1_cfg = TrainConfig {
        peak_lr: 1e-2,
        epochs: 30,
        warmup_steps: 6,
        grad_accum_steps: 8,
        batch_size: 1,
        max_tokens: 288,
        quantize_base: true,
        lora: LoraConfig::new(8, 16.0),
        ..TrainConfig::stage1_default(3)
    };
    let (stage1_adapter, log1) = train_stage1(&base, &tokenizer, &corpus, &stage1_cfg)?;
    println!(
        "stage 1: {} steps, loss {:.3} -> {:.3}",
        log1.steps.len(),
        log1.steps.first().unwrap().loss,
        log1.final_loss
    );

    let merged = merge(&stage1_adapter, &base)?;

    // Stage 2: one adapter per match-up on compiled prompts.
    let opts = SynthesisOptions {
        steps_per_replay: 2,
        horizon: 4,
        building_plane: 0,
    };
    let describer = DescriberConfig::default();
    let matchup_a: MatchUp = "TvT".parse()?;
    let matchup_b: MatchUp = "TvZ".parse()?;
    let stage2_cfg = TrainConfig {
        peak_lr: 2e-2,
        epochs: 150,
        warmup_steps: 15,
        grad_accum_steps: 4,
        batch_size: 4,
        max_tokens: 288,
        lora: LoraConfig {
            targets: sc2macro::lora::LayerSelector::all(),
            ..LoraConfig::new(16, 32.0)
        },
        ..TrainConfig::stage2_default(11)
    };

    let mut adapters: Vec<(MatchUp, LoraAdapter<f32>)> = Vec::new();
    for matchup in [matchup_a, matchup_b] {
        let replays = synthesize_replays_with(matchup, 8, 21, &catalogs, &opts);
        let prompts = compile_replays(&replays, &catalogs, &describer, opts.horizon)?;
        let (adapter, log) = train_stage2(&merged, &tokenizer, &prompts, &stage2_cfg)?;
        println!(
            "stage 2 {matchup}: {} steps, final loss {:.4}",
            log.steps.len(),
            log.final_loss
        );
        adapters.push((matchup, adapter));
    }

    let eval_cfg = EvalConfig {
        describer,
        ..EvalConfig::default()
    };
    let replays_b = synthesize_replays_with(matchup_b, 8, 21, &catalogs, &opts);
    let (on_b, _) = evaluate(
        &merged,
        Some(&adapters[1].1),
        &replays_b,
        &tokenizer,
        &catalogs,
        &eval_cfg,
    )?;
    println!(
        "{matchup_b} adapter on {matchup_b}: BO {:.3} GS {:.3}",
        on_b.bo_accuracy, on_b.gs_accuracy
    );
    let (transfer, _) = zero_shot_eval(
        &merged,
        &adapters[0].1,
        &replays_b,
        &tokenizer,
        &catalogs,
        &eval_cfg,
    )?;
    println!(
        "{matchup_a} adapter zero-shot on {matchup_b}: BO {:.3} GS {:.3}",
        transfer.bo_accuracy, transfer.gs_accuracy
    );
    Ok(())
}
