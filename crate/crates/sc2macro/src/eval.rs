//! Scoring: build-order accuracy, global-state accuracy, per-match-up
//! reports, and zero-shot cross-match-up evaluation.
//!
//! Build-order accuracy is positional exact match over the prediction
//! horizon; global-state accuracy scores the parsed win/loss against the
//! match's final outcome at every evaluated step. Unfilled prediction
//! slots count as wrong.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{MatchUp, RaceCatalogs};
use crate::error::{Error, Result};
use crate::lora::LoraAdapter;
use crate::model::{Elem, MicroLmParams};
use crate::net::generate;
use crate::prompt::{compile_prompt, parse_generation, Outcome, Prediction};
use crate::replay::Replay;
use crate::spatial::{describe, DescriberConfig};
use crate::tokenizer::Tokenizer;
use crate::train::encode_prompt;

/// Accuracy summary for one adapter on one set of replays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Match-up of the evaluated replays.
    pub matchup: MatchUp,
    /// Match-up the adapter was trained on, when one is recorded.
    pub adapter_matchup: Option<MatchUp>,
    pub gs_accuracy: f64,
    pub bo_accuracy: f64,
    pub n_steps: usize,
    pub per_action_position_accuracy: Vec<f64>,
    pub parse_failure_rate: f64,
}

/// Per-step scoring record, one CSV row each.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepOutcome {
    pub replay_index: usize,
    pub step_index: usize,
    pub position_hits: Vec<bool>,
    pub outcome_hit: bool,
    pub parse_ok: bool,
}

/// Evaluation-time settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Tokens to decode per step; enough for the full output block.
    pub max_new: usize,
    /// Evaluate only this many randomly sampled steps per replay.
    #[serde(default)]
    pub steps_per_replay: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub describer: DescriberConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            max_new: 48,
            steps_per_replay: None,
            seed: 0,
            describer: DescriberConfig::default(),
        }
    }
}

/// Positional exact-match fraction against the ground-truth actions.
pub fn build_order_accuracy(pred: &Prediction, truth: &[String]) -> Result<f64> {
    if pred.actions.len() != truth.len() {
        return Err(Error::HorizonMismatch {
            pred: pred.actions.len(),
            truth: truth.len(),
        });
    }
    let hits = pred
        .actions
        .iter()
        .zip(truth)
        .filter(|(p, t)| p.as_deref() == Some(t.as_str()))
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Fraction of steps whose parsed outcome equals the match outcome.
pub fn global_state_accuracy(preds: &[Prediction], truths: &[Outcome]) -> Result<f64> {
    if preds.is_empty() || preds.len() != truths.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: truths.len(),
        });
    }
    let hits = preds
        .iter()
        .zip(truths)
        .filter(|(p, t)| p.outcome == Some(**t))
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Run the describe -> compile -> generate -> parse -> score pipeline over
/// every sampled step. Deterministic given the seed (greedy decoding).
/// Steps are scored in parallel; aggregation order is fixed.
pub fn evaluate<F: Elem>(
    params: &MicroLmParams<F>,
    adapter: Option<&LoraAdapter<F>>,
    replays: &[Replay],
    tokenizer: &Tokenizer,
    catalogs: &RaceCatalogs,
    cfg: &EvalConfig,
) -> Result<(EvalReport, Vec<StepOutcome>)> {
    if replays.is_empty() {
        return Err(Error::InvalidConfig("no replays to evaluate".into()));
    }
    let matchup = replays[0].matchup;
    if replays.iter().any(|r| r.matchup != matchup) {
        return Err(Error::InvalidConfig(
            "evaluation set mixes match-ups".into(),
        ));
    }
    let catalog = catalogs.for_race(matchup.player);

    // Select (replay, step) tasks up front so sampling is seed-stable.
    let mut tasks: Vec<(usize, usize)> = Vec::new();
    for (j, replay) in replays.iter().enumerate() {
        match cfg.steps_per_replay {
            Some(k) if k < replay.steps.len() => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (j as u64).wrapping_mul(0x9e37));
                let mut picked =
                    rand::seq::index::sample(&mut rng, replay.steps.len(), k).into_vec();
                picked.sort_unstable();
                tasks.extend(picked.into_iter().map(|t| (j, t)));
            }
            _ => tasks.extend((0..replay.steps.len()).map(|t| (j, t))),
        }
    }

    let horizon = replays[0].steps[0].next_actions.len();
    if replays
        .iter()
        .flat_map(|r| &r.steps)
        .any(|s| s.next_actions.len() != horizon)
    {
        return Err(Error::InvalidConfig(
            "replays mix prediction horizons".into(),
        ));
    }

    let results: Result<Vec<(StepOutcome, Prediction, Outcome, Vec<String>)>> = tasks
        .par_iter()
        .map(|&(j, t)| {
            let replay = &replays[j];
            let step = &replay.steps[t];
            let description = describe(&step.spatial, &cfg.describer)?;
            let instruction = compile_prompt(step, &description, matchup, horizon)?;
            let prompt_ids = encode_prompt(tokenizer, &instruction);
            let generated = generate(params, adapter, &prompt_ids, cfg.max_new)?;
            let text = tokenizer.detokenize(&generated);
            let pred = parse_generation(&text, horizon);

            let truth_outcome = if replay.outcome == 1 {
                Outcome::Win
            } else {
                Outcome::Loss
            };
            let truth_actions: Vec<String> = step
                .next_actions
                .iter()
                .map(|&id| catalog.action_name(id).map(String::from))
                .collect::<Result<_>>()?;

            let position_hits: Vec<bool> = pred
                .actions
                .iter()
                .zip(&truth_actions)
                .map(|(p, t)| p.as_deref() == Some(t.as_str()))
                .collect();
            let outcome = StepOutcome {
                replay_index: j,
                step_index: t,
                outcome_hit: pred.outcome == Some(truth_outcome),
                parse_ok: !pred.is_parse_failure(),
                position_hits,
            };
            Ok((outcome, pred, truth_outcome, truth_actions))
        })
        .collect();
    let results = results?;

    let n_steps = results.len();
    let mut position_hits = vec![0usize; horizon];
    let mut outcome_hits = 0usize;
    let mut parse_failures = 0usize;
    let mut flat_hits = 0usize;
    for (outcome, pred, truth_outcome, truth_actions) in &results {
        for (k, &hit) in outcome.position_hits.iter().enumerate() {
            if hit {
                position_hits[k] += 1;
                flat_hits += 1;
            }
        }
        if outcome.outcome_hit {
            outcome_hits += 1;
        }
        if !outcome.parse_ok {
            parse_failures += 1;
        }
        // Cross-check the aggregate paths against the scalar scorers.
        debug_assert_eq!(
            build_order_accuracy(pred, truth_actions).unwrap(),
            outcome.position_hits.iter().filter(|&&h| h).count() as f64 / horizon as f64
        );
        debug_assert_eq!(
            pred.outcome == Some(*truth_outcome),
            outcome.outcome_hit
        );
    }

    let report = EvalReport {
        matchup,
        adapter_matchup: adapter.and_then(|a| a.matchup),
        gs_accuracy: outcome_hits as f64 / n_steps as f64,
        bo_accuracy: flat_hits as f64 / (n_steps * horizon) as f64,
        n_steps,
        per_action_position_accuracy: position_hits
            .iter()
            .map(|&h| h as f64 / n_steps as f64)
            .collect(),
        parse_failure_rate: parse_failures as f64 / n_steps as f64,
    };
    Ok((report, results.into_iter().map(|(o, ..)| o).collect()))
}

/// Evaluate an adapter on a different match-up without any training.
/// The adapter is taken by shared reference and never written.
pub fn zero_shot_eval<F: Elem>(
    params: &MicroLmParams<F>,
    adapter: &LoraAdapter<F>,
    replays: &[Replay],
    tokenizer: &Tokenizer,
    catalogs: &RaceCatalogs,
    cfg: &EvalConfig,
) -> Result<(EvalReport, Vec<StepOutcome>)> {
    let trained_on = adapter.matchup.ok_or_else(|| {
        Error::InvalidConfig("adapter records no match-up; train stage 2 first".into())
    })?;
    if let Some(replay) = replays.first() {
        if replay.matchup == trained_on {
            return Err(Error::SameMatchup(trained_on.to_string()));
        }
    }
    evaluate(params, Some(adapter), replays, tokenizer, catalogs, cfg)
}

/// CSV rows for the per-step scoring records.
pub fn step_outcomes_csv(outcomes: &[StepOutcome]) -> String {
    let horizon = outcomes.first().map(|o| o.position_hits.len()).unwrap_or(0);
    let mut header = String::from("replay_index,step_index");
    for k in 1..=horizon {
        header.push_str(&format!(",hit_action_{k}"));
    }
    header.push_str(",outcome_hit,parse_ok\n");
    let mut out = header;
    for o in outcomes {
        out.push_str(&format!("{},{}", o.replay_index, o.step_index));
        for &h in &o.position_hits {
            out.push_str(if h { ",1" } else { ",0" });
        }
        out.push_str(&format!(
            ",{},{}\n",
            if o.outcome_hit { 1 } else { 0 },
            if o.parse_ok { 1 } else { 0 }
        ));
    }
    out
}
