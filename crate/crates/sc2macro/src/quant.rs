//! Symmetric per-row int8 weight quantization.
//!
//! `scale_i = max(max_j |W_ij|, eps) / 127`, `q_ij = round(W_ij / scale_i)`
//! clamped to [-127, 127]. Dequantization reconstructs each element to
//! within `scale_i / 2` (plus rounding slack). A frozen base model can be
//! held in this form with full-precision adapters on top.

use std::path::Path;

use indexmap::IndexMap;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lora::LoraAdapter;
use crate::model::{Elem, MicroLmParams, ModelConfig};
use crate::net;

const Q_MAX: f64 = 127.0;
const SCALE_EPS: f64 = 1e-12;

/// Int8 matrix with one f64 scale per row.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub q: Array2<i8>,
    pub scales: Array1<f64>,
}

impl QuantizedTensor {
    pub fn shape(&self) -> (usize, usize) {
        self.q.dim()
    }
}

/// Quantize a matrix row by row.
pub fn quantize8<F: Elem>(w: &Array2<F>) -> Result<QuantizedTensor> {
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let (rows, cols) = w.dim();
    let mut scales = Array1::zeros(rows);
    let mut q = Array2::zeros((rows, cols));
    for r in 0..rows {
        let row = w.row(r);
        let max_abs = row
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.into_f64().abs()));
        let scale = max_abs.max(SCALE_EPS) / Q_MAX;
        scales[r] = scale;
        for c in 0..cols {
            let scaled = (w[[r, c]].into_f64() / scale).round();
            q[[r, c]] = scaled.clamp(-Q_MAX, Q_MAX) as i8;
        }
    }
    Ok(QuantizedTensor { q, scales })
}

/// Reconstruct the real-valued matrix `q_ij * scale_i`.
pub fn dequantize<F: Elem>(qt: &QuantizedTensor) -> Array2<F> {
    let (rows, cols) = qt.q.dim();
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        F::from_f64(qt.q[[r, c]] as f64 * qt.scales[r])
    })
}

/// A model whose per-layer linear weights and LM head are stored in int8;
/// embeddings, norms, and biases stay in full precision.
#[derive(Debug, Clone)]
pub struct QuantizedBase<F: Elem> {
    config: ModelConfig,
    quantized: IndexMap<String, QuantizedTensor>,
    dense_mats: IndexMap<String, Array2<F>>,
    vecs: IndexMap<String, Array1<F>>,
}

impl<F: Elem> QuantizedBase<F> {
    /// Quantize the frozen base weights of a model.
    pub fn from_params(params: &MicroLmParams<F>) -> Result<Self> {
        let quantize_names: Vec<String> = params
            .linear_layer_names()
            .into_iter()
            .chain(std::iter::once("lm_head".to_string()))
            .collect();

        let mut quantized = IndexMap::new();
        let mut dense_mats = IndexMap::new();
        for (name, mat) in params.mats() {
            if quantize_names.iter().any(|n| n == name) {
                quantized.insert(name.to_string(), quantize8(mat)?);
            } else {
                dense_mats.insert(name.to_string(), mat.clone());
            }
        }
        let vecs = params
            .vecs()
            .map(|(n, v)| (n.to_string(), v.clone()))
            .collect();
        Ok(Self {
            config: *params.config(),
            quantized,
            dense_mats,
            vecs,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn quantized_tensor(&self, name: &str) -> Option<&QuantizedTensor> {
        self.quantized.get(name)
    }

    /// Dequantize every int8 tensor and rebuild full-precision parameters.
    /// The base is frozen, so doing this on use and doing it once agree.
    pub fn materialize(&self) -> Result<MicroLmParams<F>> {
        let mut mats: IndexMap<String, Array2<F>> = IndexMap::new();
        // Preserve the canonical tensor order of the dense layout.
        for name in canonical_mat_order(&self.config) {
            if let Some(qt) = self.quantized.get(&name) {
                mats.insert(name, dequantize(qt));
            } else if let Some(m) = self.dense_mats.get(&name) {
                mats.insert(name, m.clone());
            } else {
                return Err(Error::MissingLayer(name));
            }
        }
        MicroLmParams::from_parts(self.config, mats, self.vecs.clone())
    }

    /// Forward pass with dequantize-on-use semantics: bit-for-bit equal to
    /// running the standard forward over the dequantized weights.
    pub fn quantized_forward(
        &self,
        adapter: Option<&LoraAdapter<F>>,
        ids: &[u32],
    ) -> Result<ndarray::Array2<F>> {
        net::forward(&self.materialize()?, adapter, ids)
    }
}

fn canonical_mat_order(config: &ModelConfig) -> Vec<String> {
    let mut names = vec!["tok_embedding".to_string(), "pos_embedding".to_string()];
    for l in 0..config.n_layers {
        names.extend(crate::model::layer_mat_names(l));
    }
    names.push("lm_head".to_string());
    names
}

// --- on-disk form -----------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct QManifestEntry {
    name: String,
    kind: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    scale_offset: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct QManifest {
    tensors: Vec<QManifestEntry>,
}

impl<F: Elem> QuantizedBase<F> {
    /// Checkpoint with int8 payloads: quantized tensors store their bytes
    /// at `offset` and per-row f64 scales at `scale_offset`; everything
    /// else is little-endian f32.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join(crate::model::CONFIG_FILE),
            serde_json::to_string_pretty(&self.config)?,
        )?;
        let mut data: Vec<u8> = Vec::new();
        let mut tensors = Vec::new();

        for name in canonical_mat_order(&self.config) {
            if let Some(qt) = self.quantized.get(&name) {
                let offset = data.len();
                data.extend(qt.q.iter().map(|&v| v as u8));
                let scale_offset = data.len();
                for &s in qt.scales.iter() {
                    data.extend_from_slice(&s.to_le_bytes());
                }
                tensors.push(QManifestEntry {
                    name,
                    kind: "mat".into(),
                    shape: qt.q.shape().to_vec(),
                    dtype: "i8+scale".into(),
                    offset,
                    scale_offset: Some(scale_offset),
                });
            } else {
                let m = &self.dense_mats[&name];
                let offset = data.len();
                for &v in m.iter() {
                    data.extend_from_slice(&(v.into_f64() as f32).to_le_bytes());
                }
                tensors.push(QManifestEntry {
                    name,
                    kind: "mat".into(),
                    shape: m.shape().to_vec(),
                    dtype: "f32".into(),
                    offset,
                    scale_offset: None,
                });
            }
        }
        for (name, v) in &self.vecs {
            let offset = data.len();
            for &x in v.iter() {
                data.extend_from_slice(&(x.into_f64() as f32).to_le_bytes());
            }
            tensors.push(QManifestEntry {
                name: name.clone(),
                kind: "vec".into(),
                shape: v.shape().to_vec(),
                dtype: "f32".into(),
                offset,
                scale_offset: None,
            });
        }

        std::fs::write(
            dir.join(crate::model::MANIFEST_FILE),
            serde_json::to_string_pretty(&QManifest { tensors })?,
        )?;
        std::fs::write(dir.join(crate::model::TENSORS_FILE), data)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config: ModelConfig = serde_json::from_str(&std::fs::read_to_string(
            dir.join(crate::model::CONFIG_FILE),
        )?)?;
        config.validate()?;
        let manifest: QManifest = serde_json::from_str(&std::fs::read_to_string(
            dir.join(crate::model::MANIFEST_FILE),
        )?)?;
        let data = std::fs::read(dir.join(crate::model::TENSORS_FILE))?;

        let mut quantized = IndexMap::new();
        let mut dense_mats = IndexMap::new();
        let mut vecs = IndexMap::new();
        for entry in manifest.tensors {
            let count: usize = entry.shape.iter().product();
            match (entry.kind.as_str(), entry.dtype.as_str()) {
                ("mat", "i8+scale") => {
                    let q_bytes = data
                        .get(entry.offset..entry.offset + count)
                        .ok_or_else(|| Error::InvalidConfig("int8 data out of bounds".into()))?;
                    let q = Array2::from_shape_vec(
                        (entry.shape[0], entry.shape[1]),
                        q_bytes.iter().map(|&b| b as i8).collect(),
                    )
                    .map_err(|e| Error::InvalidConfig(e.to_string()))?;
                    let so = entry.scale_offset.ok_or_else(|| {
                        Error::InvalidConfig(format!("{}: missing scale offset", entry.name))
                    })?;
                    let rows = entry.shape[0];
                    let bytes = data
                        .get(so..so + rows * 8)
                        .ok_or_else(|| Error::InvalidConfig("scales out of bounds".into()))?;
                    let scales = Array1::from_vec(
                        bytes
                            .chunks_exact(8)
                            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                            .collect(),
                    );
                    quantized.insert(entry.name, QuantizedTensor { q, scales });
                }
                ("mat", "f32") => {
                    let bytes = data
                        .get(entry.offset..entry.offset + count * 4)
                        .ok_or_else(|| Error::InvalidConfig("f32 data out of bounds".into()))?;
                    let values: Vec<F> = bytes
                        .chunks_exact(4)
                        .map(|c| F::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                        .collect();
                    let m = Array2::from_shape_vec((entry.shape[0], entry.shape[1]), values)
                        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
                    dense_mats.insert(entry.name, m);
                }
                ("vec", "f32") => {
                    let bytes = data
                        .get(entry.offset..entry.offset + count * 4)
                        .ok_or_else(|| Error::InvalidConfig("f32 data out of bounds".into()))?;
                    let values: Vec<F> = bytes
                        .chunks_exact(4)
                        .map(|c| F::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                        .collect();
                    vecs.insert(entry.name, Array1::from_vec(values));
                }
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unsupported tensor form {other:?}"
                    )))
                }
            }
        }
        Ok(Self {
            config,
            quantized,
            dense_mats,
            vecs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_rows_reconstruct_exactly() {
        let w = Array2::<f32>::zeros((3, 5));
        let qt = quantize8(&w).unwrap();
        assert!(qt.q.iter().all(|&q| q == 0));
        let back: Array2<f32> = dequantize(&qt);
        assert_eq!(back, w);
    }

    #[test]
    fn hand_computed_row() {
        // Row [0.5, -1.0]: scale = 1/127, q = [round(63.5), -127] = [64, -127].
        let w = array![[0.5f64, -1.0]];
        let qt = quantize8(&w).unwrap();
        assert!((qt.scales[0] - 1.0 / 127.0).abs() < 1e-15);
        assert_eq!(qt.q[[0, 0]], 64);
        assert_eq!(qt.q[[0, 1]], -127);
        let back: Array2<f64> = dequantize(&qt);
        assert!((back[[0, 0]] - 0.50394).abs() < 1e-4);
        assert!((back[[0, 1]] - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let w = array![[f32::NAN, 1.0]];
        assert!(matches!(quantize8(&w), Err(Error::NonFiniteInput)));
    }

    #[test]
    fn round_trip_error_bound_holds() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for _ in 0..200 {
            let rows = rng.gen_range(1..6);
            let cols = rng.gen_range(1..12);
            let scale_mag: f64 = 10f64.powi(rng.gen_range(-3..4));
            let w = Array2::from_shape_simple_fn((rows, cols), || {
                (rng.gen::<f64>() * 2.0 - 1.0) * scale_mag
            });
            let qt = quantize8(&w).unwrap();
            let back: Array2<f64> = dequantize(&qt);
            for r in 0..rows {
                let bound = qt.scales[r] * 0.5 * (1.0 + 1e-9);
                for c in 0..cols {
                    let err = (w[[r, c]] - back[[r, c]]).abs();
                    assert!(err <= bound, "err {err} > bound {bound}");
                }
            }
        }
    }

    #[test]
    fn one_round_trip_is_a_fixpoint() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let w = Array2::from_shape_simple_fn((4, 9), || rng.gen::<f64>() * 4.0 - 2.0);
        let once = dequantize::<f64>(&quantize8(&w).unwrap());
        let qt1 = quantize8(&once).unwrap();
        let twice = dequantize::<f64>(&qt1);
        let qt0 = quantize8(&w).unwrap();
        assert_eq!(qt0.q, qt1.q);
        for (a, b) in once.iter().zip(twice.iter()) {
            // Scales can wobble by one ulp through the rebuild.
            assert!((a - b).abs() <= a.abs() * 4.0 * f64::EPSILON);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(200))]

            #[test]
            fn per_element_bound(values in prop::collection::vec(-100.0f64..100.0, 1..40)) {
                let cols = values.len();
                let w = Array2::from_shape_vec((1, cols), values).unwrap();
                let qt = quantize8(&w).unwrap();
                let back: Array2<f64> = dequantize(&qt);
                let bound = qt.scales[0] * 0.5 * (1.0 + 1e-9);
                for c in 0..cols {
                    prop_assert!((w[[0, c]] - back[[0, c]]).abs() <= bound);
                }
            }
        }
    }
}
