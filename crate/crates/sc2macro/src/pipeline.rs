//! Batch entry points: the library functions behind the CLI subcommands
//! and the runnable examples. All pipeline math runs in f32.
//!
//! On-disk layout produced by a full run:
//!
//! ```text
//! out/
//!   replays/replay_0000.jsonl ...   synthesized replays
//!   prompts.jsonl                   compiled instruction/target pairs
//!   stage1_corpus.jsonl             question/answer corpus
//!   base/                           initialized base checkpoint
//!   adapter_stage1/                 stage-1 adapter + training log
//!   merged/                         base with stage-1 adapter folded in
//!   adapter_<matchup>/              stage-2 adapter + training log
//!   eval_report.json, eval_steps.csv
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::catalog::{MatchUp, RaceCatalogs};
use crate::error::{Error, Result};
use crate::eval::{evaluate, zero_shot_eval, EvalConfig, EvalReport};
use crate::lora::{merge, LoraAdapter};
use crate::model::{MicroLmParams, ModelConfig, TOKENIZER_FILE};
use crate::net::generate;
use crate::prompt::{compile_prompt, compile_target, outcome_label, PromptMeta, PromptPair};
use crate::replay::{
    load_replay, synthesize_replays_with, write_replay, Replay, SynthesisOptions,
};
use crate::spatial::{describe, DescriberConfig};
use crate::tokenizer::Tokenizer;
use crate::train::{
    load_qa_corpus, train_stage1, train_stage2, QaPair, TrainConfig, TrainLog,
};
use crate::{replay, train};

/// Architecture settings as they appear in a config file; the vocabulary
/// size is always derived from the tokenizer.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModelSettings {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            n_layers: 4,
            d_model: 128,
            n_heads: 4,
            d_ff: 512,
            max_seq_len: 288,
        }
    }
}

impl ModelSettings {
    pub fn with_vocab(self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            vocab_size,
            max_seq_len: self.max_seq_len,
        }
    }
}

/// Data preparation settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DataSettings {
    pub steps_per_replay: usize,
    pub horizon: usize,
    /// Use the 12-action mini catalogs instead of the full ones.
    pub mini_catalog: bool,
    /// Largest building count covered by the model vocabulary.
    pub max_building_count: usize,
}

impl Default for DataSettings {
    fn default() -> Self {
        Self {
            steps_per_replay: 4,
            horizon: 4,
            mini_catalog: true,
            max_building_count: 64,
        }
    }
}

/// Everything a pipeline run needs, loadable from TOML or JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default = "default_train")]
    pub train: TrainConfig,
    #[serde(default)]
    pub describer: DescriberConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub data: DataSettings,
}

fn default_train() -> TrainConfig {
    TrainConfig::stage2_default(0)
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            model: ModelSettings::default(),
            train: default_train(),
            describer: DescriberConfig::default(),
            eval: EvalConfig::default(),
            data: DataSettings::default(),
        }
    }
}

impl PipelineConfig {
    /// Read a config file; `.json` is parsed as JSON, anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Ok(serde_json::from_str(&text)?)
        } else {
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(e.to_string()))
        }
    }

    pub fn catalogs(&self) -> RaceCatalogs {
        if self.data.mini_catalog {
            RaceCatalogs::mini()
        } else {
            RaceCatalogs::full()
        }
    }
}

/// Compile every step of every replay into a prompt pair.
pub fn compile_replays(
    replays: &[Replay],
    catalogs: &RaceCatalogs,
    describer: &DescriberConfig,
    horizon: usize,
) -> Result<Vec<PromptPair>> {
    let mut pairs = Vec::new();
    for (j, replay) in replays.iter().enumerate() {
        let catalog = catalogs.for_race(replay.matchup.player);
        for (t, step) in replay.steps.iter().enumerate() {
            let description = describe(&step.spatial, describer)?;
            let instruction = compile_prompt(step, &description, replay.matchup, horizon)?;
            let truth_actions: Vec<String> = step
                .next_actions
                .iter()
                .map(|&id| catalog.action_name(id).map(String::from))
                .collect::<Result<_>>()?;
            let truth_outcome = outcome_label(replay.outcome as i64)?;
            let target = compile_target(&truth_actions, truth_outcome);
            pairs.push(PromptPair {
                instruction,
                target,
                meta: PromptMeta {
                    matchup: replay.matchup,
                    replay_index: j,
                    step_index: t,
                    truth_actions,
                    truth_outcome,
                },
            });
        }
    }
    Ok(pairs)
}

/// Build the closed prompt vocabulary: the given texts plus the template
/// rendered for every match-up, stage, and level, every catalog action
/// name in target position, and every building count up to the limit.
pub fn build_tokenizer(
    catalogs: &RaceCatalogs,
    qa_corpus: &[QaPair],
    extra_texts: &[String],
    max_building_count: usize,
) -> Result<Tokenizer> {
    let mut texts: Vec<String> = Vec::new();
    for pair in qa_corpus {
        texts.push(format!("Instruct: {}", pair.question));
        texts.push(format!("Output: {}", pair.answer));
    }
    texts.extend(extra_texts.iter().cloned());

    // Template closure over stages and levels.
    let probe = |progress: f64, level: f64| crate::replay::GlobalFeatures {
        progress,
        army_count: level,
        minerals_collected: level,
        minerals_used: level,
        vespene_collected: level,
        vespene_used: level,
        food_used: level,
        food_cap: level,
        food_army: level,
        food_workers: level,
        idle_workers: level,
        warp_gates: level,
        larva: level,
    };
    for matchup in MatchUp::all() {
        for (progress, level) in [(0.1, 0.1), (0.4, 0.5), (0.8, 0.9), (0.95, 0.0)] {
            let step = replay::ReplayStep {
                global: probe(progress, level),
                spatial: replay::SpatialFeatures::zeros(),
                next_actions: vec![],
            };
            texts.push(compile_prompt(&step, "no buildings", matchup, 4)?);
        }
    }
    for count in 0..=max_building_count {
        texts.push(format!("{count} buildings"));
    }

    // Every catalog action name in target position, both outcomes.
    for catalog in [&catalogs.terran, &catalogs.protoss, &catalogs.zerg] {
        let names: Vec<String> = catalog.names().map(String::from).collect();
        texts.push(compile_target(&names, crate::prompt::Outcome::Win));
        texts.push(compile_target(&names, crate::prompt::Outcome::Loss));
    }

    Ok(Tokenizer::from_texts(texts.iter().map(String::as_str)))
}

const EMBEDDED_QA_CORPUS: &str = include_str!("../data/corpus/sc2_text_sample.jsonl");

pub fn embedded_qa_corpus() -> Vec<QaPair> {
    EMBEDDED_QA_CORPUS
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("embedded corpus parses"))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct PrepareSummary {
    pub n_replays: usize,
    pub n_prompts: usize,
    pub replay_dir: PathBuf,
    pub prompts_path: PathBuf,
    pub corpus_path: PathBuf,
}

/// Synthesize replays, compile prompts, and write the stage-1 corpus.
pub fn prepare_data(
    cfg: &PipelineConfig,
    matchup: MatchUp,
    n: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<PrepareSummary> {
    if n == 0 {
        return Err(Error::InvalidConfig("replay count must be >= 1".into()));
    }
    let catalogs = cfg.catalogs();
    let opts = SynthesisOptions {
        steps_per_replay: cfg.data.steps_per_replay,
        horizon: cfg.data.horizon,
        building_plane: cfg.describer.building_plane,
    };
    let replays = synthesize_replays_with(matchup, n, seed, &catalogs, &opts);

    let replay_dir = out_dir.join("replays");
    std::fs::create_dir_all(&replay_dir)?;
    for (i, replay) in replays.iter().enumerate() {
        write_replay(&replay_dir.join(format!("replay_{i:04}.jsonl")), replay)?;
    }

    let pairs = compile_replays(&replays, &catalogs, &cfg.describer, cfg.data.horizon)?;
    let prompts_path = out_dir.join("prompts.jsonl");
    let mut prompt_lines = String::new();
    for pair in &pairs {
        prompt_lines.push_str(&serde_json::to_string(pair)?);
        prompt_lines.push('\n');
    }
    std::fs::write(&prompts_path, prompt_lines)?;

    let corpus_path = out_dir.join("stage1_corpus.jsonl");
    std::fs::write(&corpus_path, EMBEDDED_QA_CORPUS)?;

    Ok(PrepareSummary {
        n_replays: replays.len(),
        n_prompts: pairs.len(),
        replay_dir,
        prompts_path,
        corpus_path,
    })
}

pub fn load_prompts(path: &Path) -> Result<Vec<PromptPair>> {
    let text = std::fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        pairs.push(
            serde_json::from_str(line).map_err(|e| Error::MalformedFile {
                path: path.display().to_string(),
                line: i + 1,
                reason: e.to_string(),
            })?,
        );
    }
    Ok(pairs)
}

/// Load every `*.jsonl` replay in a directory, in file-name order.
pub fn load_replays_dir(dir: &Path, catalogs: &RaceCatalogs) -> Result<Vec<Replay>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_replay(p, catalogs)).collect()
}

/// A base checkpoint paired with its tokenizer.
pub struct Checkpoint {
    pub params: MicroLmParams<f32>,
    pub tokenizer: Tokenizer,
}

pub fn save_checkpoint(dir: &Path, params: &MicroLmParams<f32>, tokenizer: &Tokenizer) -> Result<()> {
    params.save(dir)?;
    tokenizer.save(&dir.join(TOKENIZER_FILE))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    Ok(Checkpoint {
        params: MicroLmParams::load(dir)?,
        tokenizer: Tokenizer::load(&dir.join(TOKENIZER_FILE))?,
    })
}

fn write_train_artifacts(dir: &Path, adapter: &LoraAdapter<f32>, log: &TrainLog) -> Result<()> {
    adapter.save(dir)?;
    std::fs::write(dir.join("train_log.csv"), log.to_csv())?;
    let summary = serde_json::json!({
        "final_loss": log.final_loss,
        "steps": log.steps.len(),
        "wall_secs": log.wall_secs,
    });
    std::fs::write(
        dir.join("train_summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(())
}

/// Stage-1 command: initialize (or load) the base model, fit the stage-1
/// adapter on the question/answer corpus, write both.
pub fn cmd_train_stage1(
    cfg: &PipelineConfig,
    base_dir: Option<&Path>,
    corpus_path: Option<&Path>,
    seed: u64,
    out_dir: &Path,
) -> Result<(PathBuf, PathBuf, TrainLog)> {
    let corpus = match corpus_path {
        Some(path) => load_qa_corpus(path)?,
        None => embedded_qa_corpus(),
    };

    let checkpoint = match base_dir {
        Some(dir) => load_checkpoint(dir)?,
        None => {
            let catalogs = cfg.catalogs();
            let tokenizer =
                build_tokenizer(&catalogs, &corpus, &[], cfg.data.max_building_count)?;
            let params = MicroLmParams::init(cfg.model.with_vocab(tokenizer.vocab_size()), seed)?;
            Checkpoint { params, tokenizer }
        }
    };

    let base_out = out_dir.join("base");
    save_checkpoint(&base_out, &checkpoint.params, &checkpoint.tokenizer)?;

    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = seed;
    let (adapter, log) = train_stage1(&checkpoint.params, &checkpoint.tokenizer, &corpus, &train_cfg)?;

    let adapter_out = out_dir.join("adapter_stage1");
    write_train_artifacts(&adapter_out, &adapter, &log)?;
    Ok((base_out, adapter_out, log))
}

/// Merge an adapter into a base checkpoint and write the result.
pub fn cmd_merge_adapter(base_dir: &Path, adapter_dir: &Path, out_dir: &Path) -> Result<()> {
    let checkpoint = load_checkpoint(base_dir)?;
    let adapter = LoraAdapter::<f32>::load(adapter_dir)?;
    let merged = merge(&adapter, &checkpoint.params)?;
    save_checkpoint(out_dir, &merged, &checkpoint.tokenizer)
}

/// Stage-2 command: fit a per-match-up adapter on compiled prompts.
pub fn cmd_train_stage2(
    cfg: &PipelineConfig,
    base_dir: &Path,
    prompts_path: &Path,
    seed: u64,
    out_dir: &Path,
) -> Result<(PathBuf, TrainLog)> {
    let checkpoint = load_checkpoint(base_dir)?;
    let prompts = load_prompts(prompts_path)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = seed;
    let (adapter, log) = train_stage2(&checkpoint.params, &checkpoint.tokenizer, &prompts, &train_cfg)?;
    let matchup = adapter.matchup.expect("stage-2 adapter records a match-up");
    let adapter_out = out_dir.join(format!("adapter_{matchup}"));
    write_train_artifacts(&adapter_out, &adapter, &log)?;
    Ok((adapter_out, log))
}

/// Evaluate a checkpoint (optionally with an adapter) on a replay directory.
pub fn cmd_evaluate(
    cfg: &PipelineConfig,
    base_dir: &Path,
    adapter_dir: Option<&Path>,
    replays_dir: &Path,
    out_dir: &Path,
    zero_shot: bool,
) -> Result<EvalReport> {
    let checkpoint = load_checkpoint(base_dir)?;
    let adapter = adapter_dir.map(LoraAdapter::<f32>::load).transpose()?;
    let catalogs = cfg.catalogs();
    let replays = load_replays_dir(replays_dir, &catalogs)?;
    let mut eval_cfg = cfg.eval.clone();
    eval_cfg.describer = cfg.describer;

    let (report, steps) = if zero_shot {
        let adapter = adapter.as_ref().ok_or_else(|| {
            Error::InvalidConfig("zero-shot evaluation requires an adapter".into())
        })?;
        zero_shot_eval(
            &checkpoint.params,
            adapter,
            &replays,
            &checkpoint.tokenizer,
            &catalogs,
            &eval_cfg,
        )?
    } else {
        evaluate(
            &checkpoint.params,
            adapter.as_ref(),
            &replays,
            &checkpoint.tokenizer,
            &catalogs,
            &eval_cfg,
        )?
    };

    std::fs::create_dir_all(out_dir)?;
    std::fs::write(
        out_dir.join("eval_report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    std::fs::write(
        out_dir.join("eval_steps.csv"),
        crate::eval::step_outcomes_csv(&steps),
    )?;
    Ok(report)
}

/// Generate a completion for an ad-hoc instruction.
pub fn cmd_predict(
    cfg: &PipelineConfig,
    base_dir: &Path,
    adapter_dir: Option<&Path>,
    instruction: &str,
) -> Result<String> {
    let checkpoint = load_checkpoint(base_dir)?;
    let adapter = adapter_dir.map(LoraAdapter::<f32>::load).transpose()?;
    let prompt = train::encode_prompt(&checkpoint.tokenizer, instruction);
    let generated = generate(
        &checkpoint.params,
        adapter.as_ref(),
        &prompt,
        cfg.eval.max_new,
    )?;
    Ok(checkpoint.tokenizer.detokenize(&generated))
}

/// Convenience wrapper used by examples and tests: attach + train stage 2
/// directly from in-memory replays.
pub fn train_matchup_adapter(
    base: &MicroLmParams<f32>,
    tokenizer: &Tokenizer,
    replays: &[Replay],
    catalogs: &RaceCatalogs,
    describer: &DescriberConfig,
    horizon: usize,
    train_cfg: &TrainConfig,
) -> Result<(LoraAdapter<f32>, TrainLog)> {
    let prompts = compile_replays(replays, catalogs, describer, horizon)?;
    train_stage2(base, tokenizer, &prompts, train_cfg)
}

#[allow(unused_imports)]
pub use crate::lora::merge as merge_adapter;
