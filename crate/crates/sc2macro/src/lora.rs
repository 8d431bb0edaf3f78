//! Low-rank adapters: layer targeting, attach, scaled low-rank forward,
//! merge-back, trainable-parameter accounting, and the adapter file format.
//!
//! Each targeted weight `W0 (d x k)` gets a pair `A (r x k)`, `B (d x r)`
//! with `B` zero-initialized, so a fresh adapter leaves the model output
//! untouched. The effective update is `dW = (alpha / r) * B * A`; merging
//! folds it into the base weight so inference needs no adapter path.

use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::MatchUp;
use crate::error::{Error, Result};
use crate::model::{hex, Elem, MicroLmParams};

/// Which per-layer weight matrices an adapter targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    AttnQ,
    AttnK,
    AttnV,
    AttnOut,
    FfUp,
    FfDown,
}

impl TargetKind {
    fn suffix(self) -> &'static str {
        match self {
            TargetKind::AttnQ => "attn_q",
            TargetKind::AttnK => "attn_k",
            TargetKind::AttnV => "attn_v",
            TargetKind::AttnOut => "attn_out",
            TargetKind::FfUp => "ff_up",
            TargetKind::FfDown => "ff_down",
        }
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.suffix())
    }
}

/// Predicate over layer names, as an explicit set of target kinds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LayerSelector {
    kinds: Vec<TargetKind>,
}

impl LayerSelector {
    pub fn new(mut kinds: Vec<TargetKind>) -> Self {
        kinds.sort();
        kinds.dedup();
        Self { kinds }
    }

    /// All attention projections, the attention out-projection, and the
    /// feed-forward up projection.
    pub fn default_targets() -> Self {
        Self::new(vec![
            TargetKind::AttnQ,
            TargetKind::AttnK,
            TargetKind::AttnV,
            TargetKind::AttnOut,
            TargetKind::FfUp,
        ])
    }

    pub fn attention_only() -> Self {
        Self::new(vec![
            TargetKind::AttnQ,
            TargetKind::AttnK,
            TargetKind::AttnV,
            TargetKind::AttnOut,
        ])
    }

    pub fn all() -> Self {
        Self::new(vec![
            TargetKind::AttnQ,
            TargetKind::AttnK,
            TargetKind::AttnV,
            TargetKind::AttnOut,
            TargetKind::FfUp,
            TargetKind::FfDown,
        ])
    }

    /// Whether a per-layer matrix name like "layers.3.ff_up" is targeted.
    pub fn matches(&self, name: &str) -> bool {
        if !name.starts_with("layers.") {
            return false;
        }
        match name.rsplit('.').next() {
            Some(suffix) => self.kinds.iter().any(|k| k.suffix() == suffix),
            None => false,
        }
    }
}

impl Default for LayerSelector {
    fn default() -> Self {
        Self::default_targets()
    }
}

/// Rank, scaling numerator, and layer targeting for one adapter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    pub r: usize,
    pub alpha: f64,
    #[serde(default)]
    pub targets: LayerSelector,
}

impl LoraConfig {
    pub fn new(r: usize, alpha: f64) -> Self {
        Self {
            r,
            alpha,
            targets: LayerSelector::default_targets(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 {
            return Err(Error::InvalidConfig("LoRA rank must be positive".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidConfig("LoRA alpha must be positive".into()));
        }
        Ok(())
    }

    /// The scaling factor alpha / r applied to B * A.
    pub fn scaling(&self) -> f64 {
        self.alpha / self.r as f64
    }
}

/// One low-rank factor pair wrapping a `d x k` base weight.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraPair<F: Elem> {
    /// `r x k`
    pub a: Array2<F>,
    /// `d x r`
    pub b: Array2<F>,
}

/// Per-layer low-rank factors plus the owning configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter<F: Elem> {
    config: LoraConfig,
    seed: u64,
    /// Match-up this adapter was fine-tuned on, once stage-2 sets it.
    pub matchup: Option<MatchUp>,
    pairs: IndexMap<String, LoraPair<F>>,
}

impl<F: Elem> LoraAdapter<F> {
    pub fn config(&self) -> &LoraConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn scale(&self) -> F {
        F::from_f64(self.config.scaling())
    }

    pub fn pair(&self, layer: &str) -> Option<&LoraPair<F>> {
        self.pairs.get(layer)
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &LoraPair<F>)> {
        self.pairs.iter().map(|(n, p)| (n.as_str(), p))
    }

    pub fn pairs_mut(&mut self) -> impl Iterator<Item = (&str, &mut LoraPair<F>)> {
        self.pairs.iter_mut().map(|(n, p)| (n.as_str(), p))
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// Actual element count of all A and B tensors.
    pub fn trainable_elements(&self) -> usize {
        self.pairs
            .values()
            .map(|p| p.a.len() + p.b.len())
            .sum()
    }

    /// SHA-256 over the factor tensors; changes iff training changed them.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, pair) in &self.pairs {
            hasher.update(name.as_bytes());
            for &v in pair.a.iter().chain(pair.b.iter()) {
                hasher.update((v.into_f64() as f32).to_le_bytes());
            }
        }
        hex(&hasher.finalize())
    }

    pub fn find_non_finite(&self) -> Option<(String, usize)> {
        for (name, pair) in &self.pairs {
            if let Some(i) = pair.a.iter().position(|v| !v.is_finite()) {
                return Some((format!("{name}.lora_a"), i));
            }
            if let Some(i) = pair.b.iter().position(|v| !v.is_finite()) {
                return Some((format!("{name}.lora_b"), i));
            }
        }
        None
    }
}

/// Attach a fresh adapter to every targeted layer.
///
/// `A ~ N(0, 1/r)` from the given seed, `B = 0`, so the wrapped forward
/// initially equals the base forward. Base parameters are not touched.
pub fn attach<F: Elem>(
    params: &MicroLmParams<F>,
    cfg: &LoraConfig,
    seed: u64,
) -> Result<LoraAdapter<F>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x10aa);
    let std = (1.0 / cfg.r as f64).sqrt();
    let mut pairs = IndexMap::new();
    for name in params.linear_layer_names() {
        if !cfg.targets.matches(&name) {
            continue;
        }
        let w = params.mat(&name)?;
        let (d, k) = w.dim();
        if cfg.r >= d.min(k) {
            return Err(Error::RankTooLarge {
                r: cfg.r,
                layer: name,
                min_dim: d.min(k),
            });
        }
        let a = Array2::from_shape_simple_fn((cfg.r, k), || {
            let z: f64 = StandardNormal.sample(&mut rng);
            F::from_f64(z * std)
        });
        let b = Array2::zeros((d, cfg.r));
        pairs.insert(name, LoraPair { a, b });
    }
    if pairs.is_empty() {
        return Err(Error::EmptySelection);
    }
    Ok(LoraAdapter {
        config: cfg.clone(),
        seed,
        matchup: None,
        pairs,
    })
}

/// Column-convention adapted linear map:
/// `h = W0 X + (alpha / r) * B * (A * X)` for `X` of shape `k x batch`.
pub fn lora_forward<F: Elem>(
    w0: &Array2<F>,
    a: &Array2<F>,
    b: &Array2<F>,
    alpha: f64,
    r: usize,
    x: &Array2<F>,
) -> Result<Array2<F>> {
    let (d, k) = w0.dim();
    if a.dim() != (r, k) || b.dim() != (d, r) || x.dim().0 != k {
        return Err(Error::ShapeMismatch {
            expected: format!("W0 {d}x{k}, A {r}x{k}, B {d}x{r}, X {k}xbatch"),
            got: format!(
                "A {:?}, B {:?}, X {:?}",
                a.dim(),
                b.dim(),
                x.dim()
            ),
        });
    }
    let scale = F::from_f64(alpha / r as f64);
    let mut h = w0.dot(x);
    h.scaled_add(scale, &b.dot(&a.dot(x)));
    Ok(h)
}

/// Fold an adapter into base weights: `W = W0 + (alpha / r) * B * A` for
/// each targeted layer, everything else unchanged.
pub fn merge<F: Elem>(
    adapter: &LoraAdapter<F>,
    params: &MicroLmParams<F>,
) -> Result<MicroLmParams<F>> {
    let mut merged = params.clone();
    let scale = adapter.scale();
    for (name, pair) in adapter.pairs() {
        let w = merged.mat_mut(name)?;
        let (d, k) = w.dim();
        if pair.b.dim().0 != d || pair.a.dim().1 != k {
            return Err(Error::ShapeMismatch {
                expected: format!("{name}: {d}x{k}"),
                got: format!("B {:?} x A {:?}", pair.b.dim(), pair.a.dim()),
            });
        }
        w.scaled_add(scale, &pair.b.dot(&pair.a));
    }
    Ok(merged)
}

/// Adapter parameter accounting: `sum over targets of r * (d + k)` and the
/// fraction of the base parameter count.
pub fn trainable_param_count<F: Elem>(
    cfg: &LoraConfig,
    params: &MicroLmParams<F>,
) -> Result<(usize, f64)> {
    cfg.validate()?;
    let mut count = 0usize;
    let mut matched = false;
    for name in params.linear_layer_names() {
        if !cfg.targets.matches(&name) {
            continue;
        }
        matched = true;
        let (d, k) = params.mat(&name)?.dim();
        if cfg.r >= d.min(k) {
            return Err(Error::RankTooLarge {
                r: cfg.r,
                layer: name,
                min_dim: d.min(k),
            });
        }
        count += cfg.r * (d + k);
    }
    if !matched {
        return Err(Error::EmptySelection);
    }
    Ok((count, count as f64 / params.param_count() as f64))
}

// --- adapter file format --------------------------------------------------

#[derive(Serialize, Deserialize)]
struct AdapterTensorEntry {
    layer: String,
    role: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct AdapterManifest {
    r: usize,
    alpha: f64,
    seed: u64,
    matchup: Option<MatchUp>,
    targets: LayerSelector,
    tensors: Vec<AdapterTensorEntry>,
}

pub const ADAPTER_MANIFEST_FILE: &str = "adapter.json";
pub const ADAPTER_TENSORS_FILE: &str = "adapter.bin";

impl<F: Elem> LoraAdapter<F> {
    /// Write `adapter.json` plus flat little-endian f32 tensors. The file
    /// is self-contained and loadable independently of a base checkpoint.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut data: Vec<u8> = Vec::new();
        let mut tensors = Vec::new();
        for (layer, pair) in &self.pairs {
            for (role, tensor) in [("a", &pair.a), ("b", &pair.b)] {
                tensors.push(AdapterTensorEntry {
                    layer: layer.clone(),
                    role: role.into(),
                    shape: tensor.shape().to_vec(),
                    offset: data.len(),
                });
                for &v in tensor.iter() {
                    data.extend_from_slice(&(v.into_f64() as f32).to_le_bytes());
                }
            }
        }
        let manifest = AdapterManifest {
            r: self.config.r,
            alpha: self.config.alpha,
            seed: self.seed,
            matchup: self.matchup,
            targets: self.config.targets.clone(),
            tensors,
        };
        std::fs::write(
            dir.join(ADAPTER_MANIFEST_FILE),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        std::fs::write(dir.join(ADAPTER_TENSORS_FILE), data)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: AdapterManifest = serde_json::from_str(&std::fs::read_to_string(
            dir.join(ADAPTER_MANIFEST_FILE),
        )?)?;
        let data = std::fs::read(dir.join(ADAPTER_TENSORS_FILE))?;
        let read = |offset: usize, count: usize| -> Result<Vec<F>> {
            let end = offset + count * 4;
            if end > data.len() {
                return Err(Error::InvalidConfig("adapter tensor out of bounds".into()));
            }
            Ok(data[offset..end]
                .chunks_exact(4)
                .map(|c| F::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
                .collect())
        };

        let mut pairs: IndexMap<String, LoraPair<F>> = IndexMap::new();
        let mut halves: IndexMap<String, (Option<Array2<F>>, Option<Array2<F>>)> = IndexMap::new();
        for entry in &manifest.tensors {
            let count = entry.shape.iter().product();
            let values = read(entry.offset, count)?;
            let tensor = Array2::from_shape_vec((entry.shape[0], entry.shape[1]), values)
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
            let slot = halves.entry(entry.layer.clone()).or_insert((None, None));
            match entry.role.as_str() {
                "a" => slot.0 = Some(tensor),
                "b" => slot.1 = Some(tensor),
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown adapter tensor role {other:?}"
                    )))
                }
            }
        }
        for (layer, (a, b)) in halves {
            match (a, b) {
                (Some(a), Some(b)) => {
                    pairs.insert(layer, LoraPair { a, b });
                }
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "adapter layer {layer} missing an A or B tensor"
                    )))
                }
            }
        }

        Ok(Self {
            config: LoraConfig {
                r: manifest.r,
                alpha: manifest.alpha,
                targets: manifest.targets,
            },
            seed: manifest.seed,
            matchup: manifest.matchup,
            pairs,
        })
    }
}
