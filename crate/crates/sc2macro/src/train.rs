//! Two-stage adapter fine-tuning: AdamW over LoRA factors, linear-warmup
//! cosine schedule, gradient accumulation, anomaly guarding, seeding.
//!
//! Stage 1 fits an adapter on a question/answer corpus; stage 2 starts
//! from the stage-1 merge and fits a per-match-up adapter on compiled
//! replay prompts. The base model is frozen throughout (optionally held
//! in int8), so training only ever writes adapter tensors.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::MatchUp;
use crate::error::{Error, Result};
use crate::lora::{attach, LoraAdapter, LoraConfig};
use crate::model::{Elem, MicroLmParams};
use crate::net::{loss_and_grads, target_mask, Gradients};
use crate::prompt::PromptPair;
use crate::quant::QuantizedBase;
use crate::tokenizer::{Tokenizer, BOS, EOS};

/// Hyperparameters for one fine-tuning run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub epochs: usize,
    pub warmup_steps: usize,
    pub grad_accum_steps: usize,
    pub batch_size: usize,
    /// Token budget per example; longer sequences lose their answer tail.
    pub max_tokens: usize,
    pub seed: u64,
    pub lora: LoraConfig,
    pub quantize_base: bool,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl TrainConfig {
    /// Stage-1 defaults: batch 1, 8 accumulation steps, 820-token budget.
    pub fn stage1_default(seed: u64) -> Self {
        Self {
            peak_lr: 5e-3,
            epochs: 40,
            warmup_steps: 4,
            grad_accum_steps: 8,
            batch_size: 1,
            max_tokens: 820,
            seed,
            lora: LoraConfig::new(8, 16.0),
            quantize_base: false,
            beta1: default_beta1(),
            beta2: default_beta2(),
            adam_eps: default_adam_eps(),
            weight_decay: 0.0,
        }
    }

    /// Stage-2 defaults: batch 4, 288-token budget.
    pub fn stage2_default(seed: u64) -> Self {
        Self {
            batch_size: 4,
            max_tokens: 288,
            ..Self::stage1_default(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("epochs", self.epochs),
            ("grad_accum_steps", self.grad_accum_steps),
            ("batch_size", self.batch_size),
            ("max_tokens", self.max_tokens),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if !(self.peak_lr > 0.0) {
            return Err(Error::InvalidConfig("peak_lr must be > 0".into()));
        }
        self.lora.validate()
    }
}

/// Learning rate at `step` of `total_steps`: linear ramp to `peak_lr` over
/// `warmup_steps`, then cosine decay to zero at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    debug_assert!(step <= total_steps);
    debug_assert!(cfg.warmup_steps < total_steps);
    if step < cfg.warmup_steps {
        cfg.peak_lr * step as f64 / cfg.warmup_steps as f64
    } else {
        let span = (total_steps - cfg.warmup_steps) as f64;
        let t = (step - cfg.warmup_steps) as f64 / span;
        cfg.peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// One AdamW element update with bias correction and decoupled decay.
#[allow(clippy::too_many_arguments)]
pub fn adamw_element<F: Elem>(
    w: &mut F,
    g: F,
    m: &mut F,
    v: &mut F,
    step: usize,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
) {
    let b1 = F::from_f64(beta1);
    let b2 = F::from_f64(beta2);
    *m = b1 * *m + (F::one() - b1) * g;
    *v = b2 * *v + (F::one() - b2) * g * g;
    let m_hat = *m / F::from_f64(1.0 - beta1.powi(step as i32));
    let v_hat = *v / F::from_f64(1.0 - beta2.powi(step as i32));
    let lr_f = F::from_f64(lr);
    *w = *w - lr_f * (m_hat / (v_hat.sqrt() + F::from_f64(eps)))
        - lr_f * F::from_f64(weight_decay) * *w;
}

/// AdamW state over the adapter factor tensors.
pub struct AdamW<F: Elem> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: usize,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Elem> AdamW<F> {
    pub fn new(cfg: &TrainConfig, adapter: &LoraAdapter<F>) -> Self {
        let sizes: Vec<usize> = adapter
            .pairs()
            .flat_map(|(_, p)| [p.a.len(), p.b.len()])
            .collect();
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            step: 0,
            m: sizes.iter().map(|&n| vec![F::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![F::zero(); n]).collect(),
        }
    }

    /// Apply one optimizer step to the adapter from accumulated gradients.
    pub fn step_adapter(
        &mut self,
        adapter: &mut LoraAdapter<F>,
        grads: &Gradients<F>,
        lr: f64,
    ) -> Result<()> {
        if let Some((tensor, index)) = grads.find_non_finite() {
            return Err(Error::AnomalyDetected {
                tensor,
                index,
                step: self.step,
            });
        }
        self.step += 1;
        let (beta1, beta2, eps, wd, step) =
            (self.beta1, self.beta2, self.eps, self.weight_decay, self.step);
        let mut slot = 0;
        for (name, pair) in adapter.pairs_mut() {
            let ga = grads
                .mat(&format!("{name}.lora_a"))
                .ok_or_else(|| Error::MissingLayer(format!("{name}.lora_a gradient")))?;
            for ((w, &g), (m, v)) in pair
                .a
                .iter_mut()
                .zip(ga.iter())
                .zip(self.m[slot].iter_mut().zip(self.v[slot].iter_mut()))
            {
                adamw_element(w, g, m, v, step, lr, beta1, beta2, eps, wd);
            }
            slot += 1;
            let gb = grads
                .mat(&format!("{name}.lora_b"))
                .ok_or_else(|| Error::MissingLayer(format!("{name}.lora_b gradient")))?;
            for ((w, &g), (m, v)) in pair
                .b
                .iter_mut()
                .zip(gb.iter())
                .zip(self.m[slot].iter_mut().zip(self.v[slot].iter_mut()))
            {
                adamw_element(w, g, m, v, step, lr, beta1, beta2, eps, wd);
            }
            slot += 1;
        }
        Ok(())
    }
}

/// Scan tensors for the first NaN/Inf and report it.
pub fn nan_guard<F: Elem>(
    params: &MicroLmParams<F>,
    adapter: Option<&LoraAdapter<F>>,
) -> Result<()> {
    if let Some((tensor, index)) = params.find_non_finite() {
        return Err(Error::AnomalyDetected {
            tensor,
            index,
            step: 0,
        });
    }
    if let Some(ad) = adapter {
        if let Some((tensor, index)) = ad.find_non_finite() {
            return Err(Error::AnomalyDetected {
                tensor,
                index,
                step: 0,
            });
        }
    }
    Ok(())
}

/// One question/answer pair of the stage-1 text corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
}

/// Load a JSONL corpus of question/answer objects.
pub fn load_qa_corpus(path: &Path) -> Result<Vec<QaPair>> {
    let text = std::fs::read_to_string(path)?;
    let mut corpus = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pair: QaPair = serde_json::from_str(line).map_err(|e| Error::MalformedFile {
            path: path.display().to_string(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        corpus.push(pair);
    }
    Ok(corpus)
}

/// A tokenized training example with its loss mask.
#[derive(Debug, Clone)]
pub struct EncodedExample {
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
    pub n_masked: usize,
}

/// Encode instruction + target as `BOS tokens EOS`, masking the loss onto
/// the target span. Sequences over the token budget lose their tail (the
/// answer end), keeping the terminating EOS.
pub fn encode_example(
    tokenizer: &Tokenizer,
    instruction: &str,
    target: &str,
    max_tokens: usize,
) -> Result<EncodedExample> {
    let prompt_ids = encode_prompt(tokenizer, instruction);
    let mut ids = prompt_ids.clone();
    ids.extend(tokenizer.tokenize(target));
    ids.push(EOS);
    if ids.len() > max_tokens {
        ids.truncate(max_tokens.saturating_sub(1));
        ids.push(EOS);
    }
    let n_prompt = prompt_ids.len();
    if n_prompt + 1 >= ids.len() {
        return Err(Error::InvalidConfig(format!(
            "token budget {max_tokens} leaves no target span (prompt alone is {n_prompt} tokens)"
        )));
    }
    let mask = target_mask(n_prompt, ids.len());
    let n_masked = mask.iter().filter(|&&m| m).count();
    Ok(EncodedExample {
        ids,
        mask,
        n_masked,
    })
}

/// `BOS` plus the instruction and the separating newline; what generation
/// is conditioned on.
pub fn encode_prompt(tokenizer: &Tokenizer, instruction: &str) -> Vec<u32> {
    let mut ids = vec![BOS];
    ids.extend(tokenizer.tokenize(instruction));
    ids.extend(tokenizer.tokenize("\n"));
    ids
}

/// Per-step training record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Loss/LR trace of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub final_loss: f64,
    pub wall_secs: f64,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,lr,loss\n");
        for rec in &self.steps {
            out.push_str(&format!("{},{},{}\n", rec.step, rec.lr, rec.loss));
        }
        out
    }
}

/// Stage 1: fit a fresh adapter on the question/answer corpus.
pub fn train_stage1<F: Elem>(
    base: &MicroLmParams<F>,
    tokenizer: &Tokenizer,
    corpus: &[QaPair],
    cfg: &TrainConfig,
) -> Result<(LoraAdapter<F>, TrainLog)> {
    if corpus.is_empty() {
        return Err(Error::InvalidConfig("stage-1 corpus is empty".into()));
    }
    let budget = cfg.max_tokens.min(base.config().max_seq_len);
    let examples = corpus
        .iter()
        .map(|pair| {
            encode_example(
                tokenizer,
                &format!("Instruct: {}", pair.question),
                &format!("Output: {}", pair.answer),
                budget,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    run_training(base, &examples, cfg, None)
}

/// Stage 2: fit a fresh per-match-up adapter on compiled replay prompts,
/// starting from the stage-1 merged base.
pub fn train_stage2<F: Elem>(
    merged_base: &MicroLmParams<F>,
    tokenizer: &Tokenizer,
    corpus: &[PromptPair],
    cfg: &TrainConfig,
) -> Result<(LoraAdapter<F>, TrainLog)> {
    if corpus.is_empty() {
        return Err(Error::InvalidConfig("stage-2 corpus is empty".into()));
    }
    let matchup = corpus[0].meta.matchup;
    if corpus.iter().any(|p| p.meta.matchup != matchup) {
        return Err(Error::InvalidConfig(
            "stage-2 corpus mixes match-ups; one adapter is trained per match-up".into(),
        ));
    }
    let budget = cfg.max_tokens.min(merged_base.config().max_seq_len);
    let examples = corpus
        .iter()
        .map(|pair| encode_example(tokenizer, &pair.instruction, &pair.target, budget))
        .collect::<Result<Vec<_>>>()?;
    run_training(merged_base, &examples, cfg, Some(matchup))
}

/// The shared training loop. Deterministic in `cfg.seed` at fixed thread
/// count (the loop itself is single-threaded).
pub fn run_training<F: Elem>(
    base: &MicroLmParams<F>,
    examples: &[EncodedExample],
    cfg: &TrainConfig,
    matchup: Option<MatchUp>,
) -> Result<(LoraAdapter<F>, TrainLog)> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::InvalidConfig("no training examples".into()));
    }
    for ex in examples {
        if ex.ids.len() > base.config().max_seq_len {
            return Err(Error::SequenceTooLong {
                len: ex.ids.len(),
                max: base.config().max_seq_len,
            });
        }
    }

    // A frozen base makes one-time dequantization equivalent to
    // dequantize-on-use, so materialize once up front.
    let owned_base;
    let base_ref: &MicroLmParams<F> = if cfg.quantize_base {
        owned_base = QuantizedBase::from_params(base)?.materialize()?;
        &owned_base
    } else {
        base
    };

    let mut adapter = attach(base_ref, &cfg.lora, cfg.seed)?;
    adapter.matchup = matchup;
    let mut optimizer = AdamW::new(cfg, &adapter);

    let chunk_size = cfg.batch_size * cfg.grad_accum_steps;
    let steps_per_epoch = examples.len().div_ceil(chunk_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    if cfg.warmup_steps >= total_steps {
        return Err(Error::InvalidConfig(format!(
            "warmup_steps {} must be below total steps {total_steps}",
            cfg.warmup_steps
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7ea1);
    let mut indices: Vec<usize> = (0..examples.len()).collect();
    let mut log_steps = Vec::with_capacity(total_steps);
    let started = Instant::now();
    let mut global_step = 0usize;

    for _epoch in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        for chunk in indices.chunks(chunk_size) {
            let lr = lr_at(global_step, total_steps, cfg);

            // Weighted accumulation over the chunk: the combined gradient
            // equals the gradient of the token-mean loss over every masked
            // position in the chunk, so accumulating micro-batches and
            // stepping once matches one step on the concatenated batch.
            let mut acc: Option<Gradients<F>> = None;
            let mut token_total = 0usize;
            let mut loss_sum = 0.0f64;
            for &i in chunk {
                let ex = &examples[i];
                let (loss, mut grads) = loss_and_grads(base_ref, Some(&adapter), &ex.ids, &ex.mask)
                    .map_err(|e| at_step(e, global_step))?;
                let w = F::from_f64(ex.n_masked as f64);
                loss_sum += loss.into_f64() * ex.n_masked as f64;
                token_total += ex.n_masked;
                grads.scale(w);
                match &mut acc {
                    None => acc = Some(grads),
                    Some(a) => a.add_scaled(&grads, F::one()),
                }
            }
            let mut grads = acc.expect("non-empty chunk");
            grads.scale(F::from_f64(1.0 / token_total as f64));
            let loss = loss_sum / token_total as f64;

            optimizer
                .step_adapter(&mut adapter, &grads, lr)
                .map_err(|e| at_step(e, global_step))?;
            nan_guard(base_ref, Some(&adapter)).map_err(|e| at_step(e, global_step))?;

            log_steps.push(StepRecord {
                step: global_step,
                lr,
                loss,
            });
            global_step += 1;
        }
    }

    let final_loss = log_steps.last().map(|r| r.loss).unwrap_or(f64::NAN);
    Ok((
        adapter,
        TrainLog {
            steps: log_steps,
            final_loss,
            wall_secs: started.elapsed().as_secs_f64(),
        },
    ))
}

fn at_step(err: Error, step: usize) -> Error {
    match err {
        Error::AnomalyDetected { tensor, index, .. } => Error::AnomalyDetected {
            tensor,
            index,
            step,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn cfg_with(total_hint: usize) -> TrainConfig {
        let mut cfg = TrainConfig::stage1_default(0);
        cfg.warmup_steps = total_hint / 10;
        cfg
    }

    #[test]
    fn lr_schedule_endpoints() {
        let mut cfg = cfg_with(100);
        cfg.peak_lr = 0.02;
        cfg.warmup_steps = 10;
        let total = 100;
        assert_eq!(lr_at(0, total, &cfg), 0.0);
        assert!((lr_at(10, total, &cfg) - 0.02).abs() < 1e-15);
        assert!(lr_at(100, total, &cfg).abs() < 1e-12);
        // Cosine midpoint: warmup + (total - warmup) / 2.
        assert!((lr_at(55, total, &cfg) - 0.01).abs() < 1e-12);
        // Warmup is linear.
        assert!((lr_at(5, total, &cfg) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        // w = 0, g = 1, lr = 0.1, no decay: bias-corrected m/sqrt(v) = 1.
        let mut w = 0.0f64;
        let mut m = 0.0;
        let mut v = 0.0;
        adamw_element(&mut w, 1.0, &mut m, &mut v, 1, 0.1, 0.9, 0.999, 1e-8, 0.0);
        assert!((w + 0.1).abs() < 1e-6);
    }

    #[test]
    fn adamw_zero_grads_leave_weights() {
        let mut w = 0.7f64;
        let mut m = 0.0;
        let mut v = 0.0;
        adamw_element(&mut w, 0.0, &mut m, &mut v, 1, 0.1, 0.9, 0.999, 1e-8, 0.0);
        assert_eq!(w, 0.7);
    }

    #[test]
    fn adamw_decay_is_decoupled() {
        // With zero gradient, the update reduces to w -= lr * wd * w.
        let mut w = 2.0f64;
        let mut m = 0.0;
        let mut v = 0.0;
        adamw_element(&mut w, 0.0, &mut m, &mut v, 1, 0.1, 0.9, 0.999, 1e-8, 0.01);
        assert!((w - (2.0 - 0.1 * 0.01 * 2.0)).abs() < 1e-12);
    }

    fn tiny_model_and_tokenizer() -> (MicroLmParams<f32>, Tokenizer) {
        let corpus = "Instruct: what trains marines? Output: the Barracks trains Marines.";
        let tokenizer = Tokenizer::from_texts([corpus]);
        let config = ModelConfig {
            n_layers: 2,
            d_model: 32,
            n_heads: 2,
            d_ff: 64,
            vocab_size: tokenizer.vocab_size(),
            max_seq_len: 64,
        };
        (MicroLmParams::init(config, 1).unwrap(), tokenizer)
    }

    #[test]
    fn stage1_memorizes_a_single_pair() {
        let (base, tokenizer) = tiny_model_and_tokenizer();
        let corpus = vec![QaPair {
            question: "what trains marines?".into(),
            answer: "the Barracks trains Marines.".into(),
        }];
        let mut cfg = TrainConfig::stage1_default(7);
        cfg.epochs = 300;
        cfg.grad_accum_steps = 1;
        cfg.warmup_steps = 10;
        cfg.peak_lr = 2e-2;
        cfg.lora = LoraConfig::new(8, 16.0);
        let (adapter, log) = train_stage1(&base, &tokenizer, &corpus, &cfg).unwrap();
        assert!(
            log.final_loss < 0.05,
            "memorization failed: final loss {}",
            log.final_loss
        );
        let first = log.steps.first().unwrap().loss;
        assert!(log.final_loss < first / 10.0);

        // Greedy decoding reproduces the memorized answer exactly.
        let prompt = encode_prompt(&tokenizer, "Instruct: what trains marines?");
        let generated =
            crate::net::generate(&base, Some(&adapter), &prompt, 40).unwrap();
        assert_eq!(
            tokenizer.detokenize(&generated),
            "Output: the Barracks trains Marines."
        );
    }

    #[test]
    fn same_seed_reproduces_the_loss_trace() {
        let (base, tokenizer) = tiny_model_and_tokenizer();
        let corpus = vec![
            QaPair {
                question: "what trains marines?".into(),
                answer: "the Barracks.".into(),
            },
            QaPair {
                question: "what trains marines?".into(),
                answer: "the Barracks trains Marines.".into(),
            },
        ];
        let mut cfg = TrainConfig::stage1_default(3);
        cfg.epochs = 5;
        cfg.warmup_steps = 1;
        let (ad1, log1) = train_stage1(&base, &tokenizer, &corpus, &cfg).unwrap();
        let (ad2, log2) = train_stage1(&base, &tokenizer, &corpus, &cfg).unwrap();
        assert_eq!(ad1.content_hash(), ad2.content_hash());
        let l1: Vec<f64> = log1.steps.iter().map(|r| r.loss).collect();
        let l2: Vec<f64> = log2.steps.iter().map(|r| r.loss).collect();
        assert_eq!(l1, l2);
    }

    #[test]
    fn different_seeds_give_different_adapters() {
        let (base, tokenizer) = tiny_model_and_tokenizer();
        let corpus = vec![QaPair {
            question: "what trains marines?".into(),
            answer: "the Barracks.".into(),
        }];
        let mut cfg = TrainConfig::stage1_default(1);
        cfg.epochs = 3;
        cfg.warmup_steps = 1;
        cfg.grad_accum_steps = 1;
        let (ad1, _) = train_stage1(&base, &tokenizer, &corpus, &cfg).unwrap();
        cfg.seed = 2;
        let (ad2, _) = train_stage1(&base, &tokenizer, &corpus, &cfg).unwrap();
        assert_ne!(ad1.content_hash(), ad2.content_hash());
    }

    #[test]
    fn base_weights_stay_bit_identical() {
        let (base, tokenizer) = tiny_model_and_tokenizer();
        let before = base.content_hash();
        let corpus = vec![QaPair {
            question: "what trains marines?".into(),
            answer: "the Barracks.".into(),
        }];
        let mut cfg = TrainConfig::stage1_default(5);
        cfg.epochs = 3;
        cfg.warmup_steps = 1;
        train_stage1(&base, &tokenizer, &corpus, &cfg).unwrap();
        assert_eq!(base.content_hash(), before);
    }

    #[test]
    fn accumulation_matches_concatenated_batch() {
        let (base, tokenizer) = tiny_model_and_tokenizer();
        let corpus = vec![
            QaPair {
                question: "what trains marines?".into(),
                answer: "the Barracks.".into(),
            },
            QaPair {
                question: "what trains marines?".into(),
                answer: "the Barracks trains Marines.".into(),
            },
        ];
        // Same chunking either way: 2 examples per optimizer step.
        let mut micro = TrainConfig::stage1_default(11);
        micro.epochs = 4;
        micro.warmup_steps = 1;
        micro.batch_size = 1;
        micro.grad_accum_steps = 2;
        let mut full = micro.clone();
        full.batch_size = 2;
        full.grad_accum_steps = 1;
        let (ad_micro, log_micro) = train_stage1(&base, &tokenizer, &corpus, &micro).unwrap();
        let (ad_full, log_full) = train_stage1(&base, &tokenizer, &corpus, &full).unwrap();
        for (a, b) in log_micro.steps.iter().zip(log_full.steps.iter()) {
            assert!((a.loss - b.loss).abs() <= 1e-5 * a.loss.abs().max(1.0));
        }
        assert_eq!(ad_micro.content_hash(), ad_full.content_hash());
    }

    #[test]
    fn lr_trace_matches_schedule_pointwise() {
        let (base, tokenizer) = tiny_model_and_tokenizer();
        let corpus = vec![QaPair {
            question: "what trains marines?".into(),
            answer: "the Barracks.".into(),
        }];
        let mut cfg = TrainConfig::stage1_default(13);
        cfg.epochs = 12;
        cfg.warmup_steps = 3;
        cfg.grad_accum_steps = 1;
        let (_, log) = train_stage1(&base, &tokenizer, &corpus, &cfg).unwrap();
        let total = log.steps.len();
        for rec in &log.steps {
            assert_eq!(rec.lr, lr_at(rec.step, total, &cfg));
        }
    }

    #[test]
    fn nan_guard_reports_location() {
        let (base, _) = tiny_model_and_tokenizer();
        assert!(nan_guard(&base, None).is_ok());
        let mut broken = base.clone();
        broken.mat_mut("lm_head").unwrap()[[2, 3]] = f32::INFINITY;
        match nan_guard(&broken, None) {
            Err(Error::AnomalyDetected { tensor, .. }) => assert_eq!(tensor, "lm_head"),
            other => panic!("expected anomaly, got {other:?}"),
        }
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let (base, tokenizer) = tiny_model_and_tokenizer();
        let cfg = TrainConfig::stage1_default(0);
        assert!(train_stage1(&base, &tokenizer, &[], &cfg).is_err());
        assert!(train_stage2(&base, &tokenizer, &[], &cfg).is_err());
    }
}
