//! The trainable decoder-only model: configuration, named parameters, and
//! checkpoint serialization.
//!
//! Every dense tensor is addressable by a stable name ("layers.2.attn_q",
//! "lm_head", ...), which is what adapter targeting, merging, optimizer
//! state, and the checkpoint manifest all key on. The math lives in
//! [`crate::net`].

use std::path::Path;

use indexmap::IndexMap;
use ndarray::{Array1, Array2, NdFloat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Float element of the model: f32 for training, f64 for gradient checks.
pub trait Elem: NdFloat {
    fn from_f64(x: f64) -> Self;
    fn into_f64(self) -> f64;
}

impl Elem for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn into_f64(self) -> f64 {
        self as f64
    }
}

impl Elem for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn into_f64(self) -> f64 {
        self
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
}

impl ModelConfig {
    /// Desk-scale default. The vocabulary size is filled in from the
    /// tokenizer when the model is created.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            n_layers: 4,
            d_model: 128,
            n_heads: 4,
            d_ff: 512,
            vocab_size,
            max_seq_len: 288,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Attention and feed-forward matrix names for layer `l`.
pub fn layer_mat_names(l: usize) -> [String; 6] {
    [
        format!("layers.{l}.attn_q"),
        format!("layers.{l}.attn_k"),
        format!("layers.{l}.attn_v"),
        format!("layers.{l}.attn_out"),
        format!("layers.{l}.ff_up"),
        format!("layers.{l}.ff_down"),
    ]
}

/// Canonical tensor layout: (matrix name, (rows, cols)) and (vector name, len).
/// Row count is the output dimension; a linear layer computes `x W^T + b`.
fn tensor_layout(cfg: &ModelConfig) -> (Vec<(String, (usize, usize))>, Vec<(String, usize)>) {
    let d = cfg.d_model;
    let mut mats = vec![
        ("tok_embedding".to_string(), (cfg.vocab_size, d)),
        ("pos_embedding".to_string(), (cfg.max_seq_len, d)),
    ];
    let mut vecs = Vec::new();
    for l in 0..cfg.n_layers {
        let [q, k, v, o, up, down] = layer_mat_names(l);
        for name in [q, k, v, o] {
            vecs.push((format!("{name}_bias"), d));
            mats.push((name, (d, d)));
        }
        vecs.push((format!("{up}_bias"), cfg.d_ff));
        mats.push((up, (cfg.d_ff, d)));
        vecs.push((format!("{down}_bias"), d));
        mats.push((down, (d, cfg.d_ff)));
    }
    mats.push(("lm_head".to_string(), (cfg.vocab_size, d)));
    vecs.push(("final_norm_gamma".to_string(), d));
    vecs.push(("final_norm_beta".to_string(), d));
    vecs.push(("lm_head_bias".to_string(), cfg.vocab_size));
    (mats, vecs)
}

/// All dense weights of the model, addressable per named tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroLmParams<F: Elem> {
    config: ModelConfig,
    mats: IndexMap<String, Array2<F>>,
    vecs: IndexMap<String, Array1<F>>,
}

impl<F: Elem> MicroLmParams<F> {
    /// Fresh random initialization, deterministic in `seed`.
    ///
    /// Embeddings are N(0, 0.02^2), linear weights Xavier-normal, biases
    /// zero, final norm gain one. Samples are drawn in f64 so the same
    /// seed produces the same values at either precision.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mat_layout, vec_layout) = tensor_layout(&config);

        let mut mats = IndexMap::new();
        for (name, (rows, cols)) in mat_layout {
            let std = if name.ends_with("embedding") {
                0.02
            } else {
                (2.0 / (rows + cols) as f64).sqrt()
            };
            let mat = Array2::from_shape_simple_fn((rows, cols), || {
                let z: f64 = StandardNormal.sample(&mut rng);
                F::from_f64(z * std)
            });
            mats.insert(name, mat);
        }

        let mut vecs = IndexMap::new();
        for (name, len) in vec_layout {
            let fill = if name == "final_norm_gamma" {
                F::one()
            } else {
                F::zero()
            };
            vecs.insert(name, Array1::from_elem(len, fill));
        }

        Ok(Self { config, mats, vecs })
    }

    /// Assemble parameters from raw tensor maps, validating the layout.
    pub(crate) fn from_parts(
        config: ModelConfig,
        mats: IndexMap<String, Array2<F>>,
        vecs: IndexMap<String, Array1<F>>,
    ) -> Result<Self> {
        let params = Self { config, mats, vecs };
        params.validate_layout()?;
        Ok(params)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mat(&self, name: &str) -> Result<&Array2<F>> {
        self.mats
            .get(name)
            .ok_or_else(|| Error::MissingLayer(name.to_string()))
    }

    pub fn mat_mut(&mut self, name: &str) -> Result<&mut Array2<F>> {
        self.mats
            .get_mut(name)
            .ok_or_else(|| Error::MissingLayer(name.to_string()))
    }

    pub fn vec(&self, name: &str) -> Result<&Array1<F>> {
        self.vecs
            .get(name)
            .ok_or_else(|| Error::MissingLayer(name.to_string()))
    }

    pub fn vec_mut(&mut self, name: &str) -> Result<&mut Array1<F>> {
        self.vecs
            .get_mut(name)
            .ok_or_else(|| Error::MissingLayer(name.to_string()))
    }

    pub fn mats(&self) -> impl Iterator<Item = (&str, &Array2<F>)> {
        self.mats.iter().map(|(n, m)| (n.as_str(), m))
    }

    pub fn vecs(&self) -> impl Iterator<Item = (&str, &Array1<F>)> {
        self.vecs.iter().map(|(n, v)| (n.as_str(), v))
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.mats.values().map(|m| m.len()).sum::<usize>()
            + self.vecs.values().map(|v| v.len()).sum::<usize>()
    }

    /// Names of the LoRA-targetable matrices (per-layer attention and
    /// feed-forward weights), in layer order.
    pub fn linear_layer_names(&self) -> Vec<String> {
        (0..self.config.n_layers)
            .flat_map(|l| layer_mat_names(l).into_iter())
            .collect()
    }

    /// SHA-256 of the serialized tensors; stable across runs.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, mat) in &self.mats {
            hasher.update(name.as_bytes());
            for &v in mat.iter() {
                hasher.update((v.into_f64() as f32).to_le_bytes());
            }
        }
        for (name, vec) in &self.vecs {
            hasher.update(name.as_bytes());
            for &v in vec.iter() {
                hasher.update((v.into_f64() as f32).to_le_bytes());
            }
        }
        hex(&hasher.finalize())
    }

    /// First non-finite entry, as (tensor name, flat index).
    pub fn find_non_finite(&self) -> Option<(String, usize)> {
        for (name, mat) in &self.mats {
            if let Some(i) = mat.iter().position(|v| !v.is_finite()) {
                return Some((name.clone(), i));
            }
        }
        for (name, vec) in &self.vecs {
            if let Some(i) = vec.iter().position(|v| !v.is_finite()) {
                return Some((name.clone(), i));
            }
        }
        None
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// --- checkpoint serialization -------------------------------------------

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    kind: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    scale_offset: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<ManifestEntry>,
}

pub const CONFIG_FILE: &str = "config.json";
pub const TOKENIZER_FILE: &str = "tokenizer.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSORS_FILE: &str = "tensors.bin";

fn push_f32s<F: Elem>(buf: &mut Vec<u8>, values: impl Iterator<Item = F>) {
    for v in values {
        buf.extend_from_slice(&(v.into_f64() as f32).to_le_bytes());
    }
}

fn read_f32s<F: Elem>(buf: &[u8], offset: usize, count: usize) -> Result<Vec<F>> {
    let end = offset + count * 4;
    if end > buf.len() {
        return Err(Error::InvalidConfig(format!(
            "tensor data out of bounds: {end} > {}",
            buf.len()
        )));
    }
    Ok(buf[offset..end]
        .chunks_exact(4)
        .map(|c| F::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect())
}

impl<F: Elem> MicroLmParams<F> {
    /// Write `config.json`, `manifest.json`, and `tensors.bin` into `dir`.
    /// Tensor data is stored as little-endian f32.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join(CONFIG_FILE),
            serde_json::to_string_pretty(&self.config)?,
        )?;

        let mut data = Vec::new();
        let mut entries = Vec::new();
        for (name, mat) in &self.mats {
            entries.push(ManifestEntry {
                name: name.clone(),
                kind: "mat".into(),
                shape: mat.shape().to_vec(),
                dtype: "f32".into(),
                offset: data.len(),
                scale_offset: None,
            });
            push_f32s(&mut data, mat.iter().copied());
        }
        for (name, vec) in &self.vecs {
            entries.push(ManifestEntry {
                name: name.clone(),
                kind: "vec".into(),
                shape: vec.shape().to_vec(),
                dtype: "f32".into(),
                offset: data.len(),
                scale_offset: None,
            });
            push_f32s(&mut data, vec.iter().copied());
        }

        std::fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&Manifest { tensors: entries })?,
        )?;
        std::fs::write(dir.join(TENSORS_FILE), data)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config: ModelConfig =
            serde_json::from_str(&std::fs::read_to_string(dir.join(CONFIG_FILE))?)?;
        config.validate()?;
        let manifest: Manifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        let data = std::fs::read(dir.join(TENSORS_FILE))?;

        let mut mats = IndexMap::new();
        let mut vecs = IndexMap::new();
        for entry in manifest.tensors {
            if entry.dtype != "f32" {
                return Err(Error::InvalidConfig(format!(
                    "checkpoint tensor {} has dtype {}, expected f32",
                    entry.name, entry.dtype
                )));
            }
            let count: usize = entry.shape.iter().product();
            let values = read_f32s::<F>(&data, entry.offset, count)?;
            match entry.kind.as_str() {
                "mat" => {
                    let mat = Array2::from_shape_vec((entry.shape[0], entry.shape[1]), values)
                        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
                    mats.insert(entry.name, mat);
                }
                "vec" => {
                    vecs.insert(entry.name, Array1::from_vec(values));
                }
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown tensor kind {other:?}"
                    )))
                }
            }
        }

        let params = Self { config, mats, vecs };
        params.validate_layout()?;
        Ok(params)
    }

    /// Check that the tensor set and shapes match the config exactly.
    fn validate_layout(&self) -> Result<()> {
        let (mat_layout, vec_layout) = tensor_layout(&self.config);
        if mat_layout.len() != self.mats.len() || vec_layout.len() != self.vecs.len() {
            return Err(Error::InvalidConfig("tensor count mismatch".into()));
        }
        for (name, (rows, cols)) in mat_layout {
            let mat = self.mat(&name)?;
            if mat.dim() != (rows, cols) {
                return Err(Error::ShapeMismatch {
                    expected: format!("{name}: {rows}x{cols}"),
                    got: format!("{:?}", mat.dim()),
                });
            }
        }
        for (name, len) in vec_layout {
            let vec = self.vec(&name)?;
            if vec.len() != len {
                return Err(Error::ShapeMismatch {
                    expected: format!("{name}: {len}"),
                    got: format!("{}", vec.len()),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            d_model: 16,
            n_heads: 2,
            d_ff: 32,
            vocab_size: 11,
            max_seq_len: 24,
        }
    }

    #[test]
    fn init_is_deterministic_and_named() {
        let a = MicroLmParams::<f32>::init(tiny(), 7).unwrap();
        let b = MicroLmParams::<f32>::init(tiny(), 7).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        assert!(a.mat("layers.1.ff_up").is_ok());
        assert!(a.vec("layers.0.attn_q_bias").is_ok());
        assert!(matches!(a.mat("layers.9.attn_q"), Err(Error::MissingLayer(_))));
    }

    #[test]
    fn same_seed_same_values_across_precisions() {
        let a = MicroLmParams::<f32>::init(tiny(), 3).unwrap();
        let b = MicroLmParams::<f64>::init(tiny(), 3).unwrap();
        let ma = a.mat("lm_head").unwrap();
        let mb = b.mat("lm_head").unwrap();
        for (x, y) in ma.iter().zip(mb.iter()) {
            assert!((x.into_f64() - y.into_f64()).abs() < 1e-7);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny();
        cfg.n_heads = 3;
        assert!(cfg.validate().is_err());
        cfg = tiny();
        cfg.d_ff = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let params = MicroLmParams::<f32>::init(tiny(), 5).unwrap();
        params.save(dir.path()).unwrap();
        let loaded = MicroLmParams::<f32>::load(dir.path()).unwrap();
        assert_eq!(params.content_hash(), loaded.content_hash());
        assert_eq!(params, loaded);
    }

    #[test]
    fn param_count_matches_layout() {
        let cfg = tiny();
        let params = MicroLmParams::<f32>::init(cfg, 0).unwrap();
        let d = cfg.d_model;
        let per_layer = 4 * d * d + 2 * cfg.d_ff * d + 4 * d + cfg.d_ff + d;
        let expected = cfg.vocab_size * d // tok
            + cfg.max_seq_len * d // pos
            + cfg.n_layers * per_layer
            + cfg.vocab_size * d // head
            + 2 * d // final norm
            + cfg.vocab_size; // head bias
        assert_eq!(params.param_count(), expected);
    }
}
