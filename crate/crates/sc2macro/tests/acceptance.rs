//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its runtime. Run with:
//!
//! ```bash
//! cargo test -p sc2macro --test acceptance -- --nocapture
//! ```

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sc2macro::catalog::{MatchUp, Race, RaceCatalogs};
use sc2macro::eval::{evaluate, zero_shot_eval, EvalConfig};
use sc2macro::lora::{attach, merge, trainable_param_count, LayerSelector, LoraConfig, TargetKind};
use sc2macro::model::{MicroLmParams, ModelConfig};
use sc2macro::net::{forward, loss_and_grads, target_mask};
use sc2macro::prompt::{
    bin_value, compile_target, outcome_label, parse_generation, stage_of, CategoricalLevel,
    GameStage, Outcome,
};
use sc2macro::quant::{dequantize, quantize8};
use sc2macro::replay::{synthesize_replays_with, SynthesisOptions};
use sc2macro::spatial::DescriberConfig;
use sc2macro::tokenizer::Tokenizer;
use sc2macro::train::{lr_at, train_stage2, QaPair, TrainConfig};
use sc2macro::pipeline::{build_tokenizer, compile_replays, embedded_qa_corpus};

fn pass(criterion: &str, started: Instant) {
    println!(
        "[acceptance] {criterion}: PASS ({:.2}s)",
        started.elapsed().as_secs_f64()
    );
}

/// Relative difference with a unit floor, so tiny logits do not inflate
/// float noise into spurious failures.
fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

#[test]
fn criterion_1_merge_equivalence() {
    let started = Instant::now();
    let config = ModelConfig {
        n_layers: 4,
        d_model: 128,
        n_heads: 4,
        d_ff: 512,
        vocab_size: 300,
        max_seq_len: 288,
    };
    let mut worst = 0.0f64;
    for trial in 0..100u64 {
        let params = MicroLmParams::<f32>::init(config, trial).unwrap();
        let lora_cfg = LoraConfig::new(8, 16.0);
        let mut adapter = attach(&params, &lora_cfg, trial ^ 0xad).unwrap();
        // Random non-zero factors: the property must hold for arbitrary
        // trained adapters, not just the fresh zero state.
        let mut rng = ChaCha8Rng::seed_from_u64(trial ^ 0xb0);
        for (_, pair) in adapter.pairs_mut() {
            pair.b.mapv_inplace(|_| (rng.gen::<f32>() - 0.5) * 0.2);
        }

        let mut id_rng = ChaCha8Rng::seed_from_u64(trial ^ 0x1d5);
        let ids: Vec<u32> = (0..16)
            .map(|_| id_rng.gen_range(4..config.vocab_size as u32))
            .collect();

        let adapted = forward(&params, Some(&adapter), &ids).unwrap();
        let merged = merge(&adapter, &params).unwrap();
        let merged_logits = forward(&merged, None, &ids).unwrap();
        for (a, b) in adapted.iter().zip(merged_logits.iter()) {
            worst = worst.max(rel_diff(*a as f64, *b as f64));
        }
    }
    assert!(
        worst <= 1e-5,
        "max relative difference {worst:e} exceeds 1e-5"
    );
    pass(&format!("criterion 1 merge equivalence (max rel {worst:.2e})"), started);
}

#[test]
fn criterion_2_gradient_correctness() {
    let started = Instant::now();
    let config = ModelConfig {
        n_layers: 2,
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        vocab_size: 23,
        max_seq_len: 24,
    };
    let params = MicroLmParams::<f64>::init(config, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let ids: Vec<u32> = (0..14).map(|_| rng.gen_range(4..23)).collect();
    let mask = target_mask(4, ids.len());
    let (_, grads) = loss_and_grads(&params, None, &ids, &mask).unwrap();

    let mat_names: Vec<String> = params.mats().map(|(n, _)| n.to_string()).collect();
    let vec_names: Vec<String> = params.vecs().map(|(n, _)| n.to_string()).collect();
    let eps = 1e-5;
    let mut checked = 0usize;
    let mut worst = 0.0f64;

    // 200 matrix elements plus every-vector coverage.
    while checked < 200 {
        let name = &mat_names[rng.gen_range(0..mat_names.len())];
        let (rows, cols) = params.mat(name).unwrap().dim();
        let (r, c) = (rng.gen_range(0..rows), rng.gen_range(0..cols));
        let analytic = grads.mat(name).unwrap()[[r, c]];
        let mut plus = params.clone();
        plus.mat_mut(name).unwrap()[[r, c]] += eps;
        let mut minus = params.clone();
        minus.mat_mut(name).unwrap()[[r, c]] -= eps;
        let (lp, _) = loss_and_grads(&plus, None, &ids, &mask).unwrap();
        let (lm, _) = loss_and_grads(&minus, None, &ids, &mask).unwrap();
        let numeric = (lp - lm) / (2.0 * eps);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
        assert!(
            rel <= 1e-3,
            "{name}[{r},{c}]: analytic {analytic:e} vs numeric {numeric:e} (rel {rel:e})"
        );
        checked += 1;
    }
    for name in &vec_names {
        let len = params.vec(name).unwrap().len();
        let i = rng.gen_range(0..len);
        let analytic = grads.vec(name).unwrap()[i];
        let mut plus = params.clone();
        plus.vec_mut(name).unwrap()[i] += eps;
        let mut minus = params.clone();
        minus.vec_mut(name).unwrap()[i] -= eps;
        let (lp, _) = loss_and_grads(&plus, None, &ids, &mask).unwrap();
        let (lm, _) = loss_and_grads(&minus, None, &ids, &mask).unwrap();
        let numeric = (lp - lm) / (2.0 * eps);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
        assert!(rel <= 1e-3, "{name}[{i}]: rel {rel:e}");
        checked += 1;
    }

    // Adapter-mode trainables get the same treatment.
    let mut adapter = attach(&params, &LoraConfig::new(4, 8.0), 3).unwrap();
    for (_, pair) in adapter.pairs_mut() {
        pair.b.mapv_inplace(|_| 0.02);
    }
    let (_, ad_grads) = loss_and_grads(&params, Some(&adapter), &ids, &mask).unwrap();
    let layer_names: Vec<String> = adapter.pairs().map(|(n, _)| n.to_string()).collect();
    for _ in 0..40 {
        let layer = &layer_names[rng.gen_range(0..layer_names.len())];
        let pick_b = rng.gen_bool(0.5);
        let (rows, cols) = {
            let pair = adapter.pair(layer).unwrap();
            if pick_b { pair.b.dim() } else { pair.a.dim() }
        };
        let (r, c) = (rng.gen_range(0..rows), rng.gen_range(0..cols));
        let key = format!("{layer}.lora_{}", if pick_b { "b" } else { "a" });
        let analytic = ad_grads.mat(&key).unwrap()[[r, c]];
        let nudge = |delta: f64| {
            let mut ad = adapter.clone();
            for (name, pair) in ad.pairs_mut() {
                if name == layer {
                    let t = if pick_b { &mut pair.b } else { &mut pair.a };
                    t[[r, c]] += delta;
                }
            }
            let (l, _) = loss_and_grads(&params, Some(&ad), &ids, &mask).unwrap();
            l
        };
        let numeric = (nudge(eps) - nudge(-eps)) / (2.0 * eps);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
        assert!(rel <= 1e-3, "{key}[{r},{c}]: rel {rel:e}");
        checked += 1;
    }

    assert!(checked >= 240);
    pass(
        &format!("criterion 2 gradient correctness ({checked} elements, worst rel {worst:.2e})"),
        started,
    );
}

#[test]
fn criterion_3_quantization_bound() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    for i in 0..1000 {
        let rows = rng.gen_range(1..8);
        let cols = rng.gen_range(1..24);
        let magnitude: f64 = 10f64.powi(rng.gen_range(-4..5));
        let mut w = Array2::from_shape_simple_fn((rows, cols), || {
            (rng.gen::<f64>() * 2.0 - 1.0) * magnitude
        });
        if i % 10 == 0 {
            // Force an all-zero row.
            w.row_mut(0).fill(0.0);
        }
        let qt = quantize8(&w).unwrap();
        let back: Array2<f64> = dequantize(&qt);
        for r in 0..rows {
            let bound = qt.scales[r] * 0.5 * (1.0 + 1e-9);
            for c in 0..cols {
                let err = (w[[r, c]] - back[[r, c]]).abs();
                assert!(err <= bound, "matrix {i} [{r},{c}]: err {err:e} > {bound:e}");
            }
        }
        if i % 10 == 0 {
            for c in 0..cols {
                assert_eq!(back[[0, c]], 0.0, "zero row must reconstruct exactly");
            }
        }
    }
    pass("criterion 3 quantization bound (1000 matrices)", started);
}

#[test]
fn criterion_4_binning_staging_catalog() {
    let started = Instant::now();
    // Independent oracle in integer arithmetic over the same grid.
    for k in 0..=1000u32 {
        let v = k as f64 / 1000.0;
        let expected_level = if k <= 200 {
            CategoricalLevel::Low
        } else if k <= 700 {
            CategoricalLevel::Medium
        } else {
            CategoricalLevel::High
        };
        assert_eq!(bin_value(v).unwrap(), expected_level, "v = {v}");
        let expected_stage = if k < 250 {
            GameStage::Early
        } else if k <= 600 {
            GameStage::Mid
        } else if k <= 900 {
            GameStage::Late
        } else {
            GameStage::End
        };
        assert_eq!(stage_of(v).unwrap(), expected_stage, "v = {v}");
    }
    assert_eq!(outcome_label(0).unwrap(), Outcome::Loss);
    assert_eq!(outcome_label(1).unwrap(), Outcome::Win);
    assert!(outcome_label(2).is_err());

    let catalogs = RaceCatalogs::full();
    assert_eq!(
        catalogs.terran.action_name(75).unwrap(),
        "Build_Reactor_Factory_quick"
    );
    assert_eq!(catalogs.terran.len(), 75);
    assert_eq!(catalogs.protoss.len(), 61);
    assert_eq!(catalogs.zerg.len(), 74);
    pass("criterion 4 binning/staging/outcome and catalog", started);
}

#[test]
fn criterion_5_prompt_round_trip() {
    let started = Instant::now();
    let catalogs = RaceCatalogs::full();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let all_names: Vec<Vec<String>> = [&catalogs.terran, &catalogs.protoss, &catalogs.zerg]
        .iter()
        .map(|c| c.names().map(String::from).collect())
        .collect();
    for _ in 0..1000 {
        let names = &all_names[rng.gen_range(0..3)];
        let horizon = rng.gen_range(1..=6);
        let actions: Vec<String> = (0..horizon)
            .map(|_| names[rng.gen_range(0..names.len())].clone())
            .collect();
        let outcome = if rng.gen_bool(0.5) {
            Outcome::Win
        } else {
            Outcome::Loss
        };
        let parsed = parse_generation(&compile_target(&actions, outcome), horizon);
        assert_eq!(parsed.outcome, Some(outcome));
        let recovered: Vec<String> = parsed.actions.into_iter().map(Option::unwrap).collect();
        assert_eq!(recovered, actions);
    }

    // The published sample: generated actions repeat the corvid reactor
    // research in slot 4 where the ground truth has advanced ballistics,
    // so exactly three of four positions match.
    let generated = vec![
        "Research_RavenCorvidReactor_quick".to_string(),
        "Research_AdvancedBallistics_quick".to_string(),
        "Research_RavenCorvidReactor_quick".to_string(),
        "Research_RavenCorvidReactor_quick".to_string(),
    ];
    let truth = vec![
        "Research_RavenCorvidReactor_quick".to_string(),
        "Research_AdvancedBallistics_quick".to_string(),
        "Research_RavenCorvidReactor_quick".to_string(),
        "Research_AdvancedBallistics_quick".to_string(),
    ];
    let block = compile_target(&generated, Outcome::Win);
    let parsed = parse_generation(&block, 4);
    assert_eq!(parsed.outcome, Some(Outcome::Win));
    assert!(parsed.actions.iter().all(Option::is_some));
    let bo = sc2macro::eval::build_order_accuracy(&parsed, &truth).unwrap();
    assert_eq!(bo, 0.75);
    pass("criterion 5 prompt round-trip and sample block", started);
}

#[test]
fn criterion_8_trainable_parameter_accounting() {
    let started = Instant::now();
    let config = ModelConfig {
        n_layers: 3,
        d_model: 32,
        n_heads: 4,
        d_ff: 64,
        vocab_size: 50,
        max_seq_len: 32,
    };
    let params = MicroLmParams::<f32>::init(config, 2).unwrap();
    let selectors = [
        LayerSelector::attention_only(),
        LayerSelector::default_targets(),
        LayerSelector::all(),
        LayerSelector::new(vec![TargetKind::FfDown]),
    ];
    for selector in &selectors {
        let mut base_count = None;
        for r in [1usize, 2, 4, 8] {
            let cfg = LoraConfig {
                r,
                alpha: 2.0 * r as f64,
                targets: selector.clone(),
            };
            let (count, fraction) = trainable_param_count(&cfg, &params).unwrap();
            let adapter = attach(&params, &cfg, 7).unwrap();
            assert_eq!(
                count,
                adapter.trainable_elements(),
                "formula disagrees with element count"
            );
            assert!(fraction > 0.0 && fraction < 1.0);
            match base_count {
                None => base_count = Some(count),
                Some(c1) => assert_eq!(count, c1 * r, "count must be linear in r"),
            }
        }
    }
    pass("criterion 8 trainable parameter accounting", started);
}

#[test]
fn criterion_9_schedule_and_reproducibility() {
    let started = Instant::now();
    let mut cfg = TrainConfig::stage1_default(0);
    cfg.peak_lr = 3e-3;
    cfg.warmup_steps = 40;
    let total = 240;
    assert!(lr_at(0, total, &cfg).abs() <= 1e-12);
    assert!((lr_at(40, total, &cfg) - cfg.peak_lr).abs() <= 1e-12);
    assert!(lr_at(total, total, &cfg).abs() <= 1e-12);
    let mid = 40 + (total - 40) / 2;
    assert!((lr_at(mid, total, &cfg) - cfg.peak_lr / 2.0).abs() <= 1e-12);

    // Two identically seeded runs produce the same loss trace, bit for bit.
    let corpus = vec![
        QaPair {
            question: "what trains marines?".into(),
            answer: "the Barracks.".into(),
        },
        QaPair {
            question: "what morphs from larva?".into(),
            answer: "every Zerg unit.".into(),
        },
    ];
    let tokenizer = Tokenizer::from_texts([
        "Instruct: what trains marines? what morphs from larva?",
        "Output: the Barracks. every Zerg unit.",
    ]);
    let model_cfg = ModelConfig {
        n_layers: 2,
        d_model: 32,
        n_heads: 2,
        d_ff: 64,
        vocab_size: tokenizer.vocab_size(),
        max_seq_len: 64,
    };
    let base = MicroLmParams::<f32>::init(model_cfg, 4).unwrap();
    let mut train_cfg = TrainConfig::stage1_default(21);
    train_cfg.epochs = 30;
    train_cfg.warmup_steps = 3;
    train_cfg.grad_accum_steps = 1;
    let run = || {
        sc2macro::train::train_stage1(&base, &tokenizer, &corpus, &train_cfg)
            .unwrap()
            .1
    };
    let log1 = run();
    let log2 = run();
    let t1: Vec<(usize, f64, f64)> = log1.steps.iter().map(|r| (r.step, r.lr, r.loss)).collect();
    let t2: Vec<(usize, f64, f64)> = log2.steps.iter().map(|r| (r.step, r.lr, r.loss)).collect();
    assert_eq!(t1, t2, "same-seed loss traces must be identical");
    pass("criterion 9 schedule endpoints and reproducibility", started);
}

/// Shared desk setup for the overfit and transfer criteria.
struct DeskRun {
    catalogs: RaceCatalogs,
    tokenizer: Tokenizer,
    base: MicroLmParams<f32>,
    describer: DescriberConfig,
    opts: SynthesisOptions,
    train_cfg: TrainConfig,
    eval_cfg: EvalConfig,
}

fn desk_run() -> DeskRun {
    let catalogs = RaceCatalogs::mini();
    let tokenizer = build_tokenizer(&catalogs, &embedded_qa_corpus(), &[], 64).unwrap();
    let model_cfg = ModelConfig {
        n_layers: 2,
        d_model: 64,
        n_heads: 8,
        d_ff: 256,
        vocab_size: tokenizer.vocab_size(),
        max_seq_len: 288,
    };
    let base = MicroLmParams::<f32>::init(model_cfg, 1).unwrap();
    let describer = DescriberConfig::default();
    let opts = SynthesisOptions {
        steps_per_replay: 2,
        horizon: 4,
        building_plane: 0,
    };
    let train_cfg = TrainConfig {
        peak_lr: 1e-2,
        epochs: 400,
        warmup_steps: 40,
        grad_accum_steps: 4,
        batch_size: 4,
        max_tokens: 288,
        lora: LoraConfig {
            targets: LayerSelector::all(),
            ..LoraConfig::new(32, 64.0)
        },
        ..TrainConfig::stage2_default(7)
    };
    let eval_cfg = EvalConfig {
        describer,
        ..EvalConfig::default()
    };
    DeskRun {
        catalogs,
        tokenizer,
        base,
        describer,
        opts,
        train_cfg,
        eval_cfg,
    }
}

#[test]
fn criterion_6_overfit_reproduction() {
    let started = Instant::now();
    let run = desk_run();
    let matchup = MatchUp::new(Race::Terran, Race::Terran);
    let replays = synthesize_replays_with(matchup, 8, 7, &run.catalogs, &run.opts);

    // Untrained model first: effectively nothing parses.
    let (untrained, _) = evaluate(
        &run.base,
        None,
        &replays,
        &run.tokenizer,
        &run.catalogs,
        &run.eval_cfg,
    )
    .unwrap();
    assert!(
        untrained.parse_failure_rate >= 0.9,
        "untrained parse failure rate {} below 0.9",
        untrained.parse_failure_rate
    );

    let prompts = compile_replays(&replays, &run.catalogs, &run.describer, run.opts.horizon).unwrap();
    let (adapter, log) = train_stage2(&run.base, &run.tokenizer, &prompts, &run.train_cfg).unwrap();
    assert!(
        log.steps.len() <= 500,
        "training must stay within 500 optimizer steps, took {}",
        log.steps.len()
    );

    let (report, _) = evaluate(
        &run.base,
        Some(&adapter),
        &replays,
        &run.tokenizer,
        &run.catalogs,
        &run.eval_cfg,
    )
    .unwrap();
    assert_eq!(report.bo_accuracy, 1.0, "BO accuracy {}", report.bo_accuracy);
    assert_eq!(report.gs_accuracy, 1.0, "GS accuracy {}", report.gs_accuracy);
    pass(
        &format!(
            "criterion 6 overfit reproduction ({} steps, final loss {:.4})",
            log.steps.len(),
            log.final_loss
        ),
        started,
    );
}

#[test]
fn criterion_7_transfer_ordering() {
    let started = Instant::now();
    let run = desk_run();
    let matchup_a = MatchUp::new(Race::Terran, Race::Terran);
    let matchup_b = MatchUp::new(Race::Terran, Race::Zerg);

    let replays_a = synthesize_replays_with(matchup_a, 8, 7, &run.catalogs, &run.opts);
    let replays_b = synthesize_replays_with(matchup_b, 8, 9, &run.catalogs, &run.opts);

    let prompts_a =
        compile_replays(&replays_a, &run.catalogs, &run.describer, run.opts.horizon).unwrap();
    let prompts_b =
        compile_replays(&replays_b, &run.catalogs, &run.describer, run.opts.horizon).unwrap();
    let (adapter_a, _) =
        train_stage2(&run.base, &run.tokenizer, &prompts_a, &run.train_cfg).unwrap();
    let (adapter_b, _) =
        train_stage2(&run.base, &run.tokenizer, &prompts_b, &run.train_cfg).unwrap();

    let (on_b, _) = evaluate(
        &run.base,
        Some(&adapter_b),
        &replays_b,
        &run.tokenizer,
        &run.catalogs,
        &run.eval_cfg,
    )
    .unwrap();

    let hash_before = adapter_a.content_hash();
    let (transfer, _) = zero_shot_eval(
        &run.base,
        &adapter_a,
        &replays_b,
        &run.tokenizer,
        &run.catalogs,
        &run.eval_cfg,
    )
    .unwrap();
    assert_eq!(
        adapter_a.content_hash(),
        hash_before,
        "zero-shot evaluation must not touch adapter tensors"
    );

    assert!(
        on_b.bo_accuracy >= transfer.bo_accuracy + 0.3,
        "fine-tuned BO {} must beat zero-shot BO {} by >= 0.3",
        on_b.bo_accuracy,
        transfer.bo_accuracy
    );
    pass(
        &format!(
            "criterion 7 transfer ordering (fine-tuned {:.3} vs zero-shot {:.3})",
            on_b.bo_accuracy, transfer.bo_accuracy
        ),
        started,
    );
}
