//! Forward pass, cross-entropy loss with exact handwritten gradients, and
//! greedy decoding.
//!
//! Architecture: learned token + position embeddings, pre-norm residual
//! blocks (parameter-free RMS norm, causal multi-head attention, GELU
//! feed-forward), a learnable final layer norm, and a linear LM head.
//! Rows are sequence positions: a linear layer computes `x W^T + b`.
//!
//! With an adapter attached, each targeted linear adds the scaled low-rank
//! correction `(alpha/r) * (x A^T) B^T`; gradients then flow only into the
//! adapter factors and the base stays frozen. Without an adapter every
//! tensor is trainable.

use indexmap::IndexMap;
use ndarray::{s, Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::lora::LoraAdapter;
use crate::model::{layer_mat_names, Elem, MicroLmParams};
use crate::tokenizer;

const NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Gradients for the trainable tensor set, keyed like the parameters.
/// Adapter factors use the keys `<layer>.lora_a` / `<layer>.lora_b`.
#[derive(Debug, Clone)]
pub struct Gradients<F: Elem> {
    pub mats: IndexMap<String, Array2<F>>,
    pub vecs: IndexMap<String, Array1<F>>,
}

impl<F: Elem> Gradients<F> {
    fn zeros_for_base(params: &MicroLmParams<F>) -> Self {
        Self {
            mats: params
                .mats()
                .map(|(n, m)| (n.to_string(), Array2::zeros(m.dim())))
                .collect(),
            vecs: params
                .vecs()
                .map(|(n, v)| (n.to_string(), Array1::zeros(v.len())))
                .collect(),
        }
    }

    fn zeros_for_adapter(adapter: &LoraAdapter<F>) -> Self {
        let mut mats = IndexMap::new();
        for (name, pair) in adapter.pairs() {
            mats.insert(format!("{name}.lora_a"), Array2::zeros(pair.a.dim()));
            mats.insert(format!("{name}.lora_b"), Array2::zeros(pair.b.dim()));
        }
        Self {
            mats,
            vecs: IndexMap::new(),
        }
    }

    pub fn mat(&self, name: &str) -> Option<&Array2<F>> {
        self.mats.get(name)
    }

    pub fn vec(&self, name: &str) -> Option<&Array1<F>> {
        self.vecs.get(name)
    }

    /// First non-finite gradient entry, as (tensor name, flat index).
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

    /// Scale every gradient in place.
    pub fn scale(&mut self, factor: F) {
        for mat in self.mats.values_mut() {
            mat.mapv_inplace(|v| v * factor);
        }
        for vec in self.vecs.values_mut() {
            vec.mapv_inplace(|v| v * factor);
        }
    }

    /// Accumulate `other * factor` into self (same key set required).
    pub fn add_scaled(&mut self, other: &Gradients<F>, factor: F) {
        for (name, mat) in &mut self.mats {
            mat.scaled_add(factor, &other.mats[name]);
        }
        for (name, vec) in &mut self.vecs {
            vec.scaled_add(factor, &other.vecs[name]);
        }
    }
}

fn eps<F: Elem>() -> F {
    F::from_f64(NORM_EPS)
}

fn gelu<F: Elem>(x: F) -> F {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let u = c * (x + a * x * x * x);
    F::from_f64(0.5) * x * (F::one() + u.tanh())
}

fn gelu_prime<F: Elem>(x: F) -> F {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let half = F::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = F::one() - t * t;
    half * (F::one() + t) + half * x * sech2 * c * (F::one() + F::from_f64(3.0) * a * x * x)
}

/// Row-wise RMS normalization; returns the normalized rows and the
/// per-row inverse RMS needed by the backward pass.
fn rmsnorm<F: Elem>(x: &Array2<F>) -> (Array2<F>, Array1<F>) {
    let (n, d) = x.dim();
    let mut y = x.clone();
    let mut ri = Array1::zeros(n);
    let dn = F::from_f64(d as f64);
    for i in 0..n {
        let row = x.row(i);
        let ms = row.iter().map(|&v| v * v).fold(F::zero(), |a, b| a + b) / dn;
        let r = (ms + eps::<F>()).sqrt().recip();
        ri[i] = r;
        y.row_mut(i).mapv_inplace(|v| v * r);
    }
    (y, ri)
}

/// dL/dx for `y = x * ri(x)`.
fn rmsnorm_backward<F: Elem>(dy: &Array2<F>, x: &Array2<F>, ri: &Array1<F>) -> Array2<F> {
    let (n, d) = x.dim();
    let dn = F::from_f64(d as f64);
    let mut dx = Array2::zeros((n, d));
    for i in 0..n {
        let r = ri[i];
        let dot = dy
            .row(i)
            .iter()
            .zip(x.row(i).iter())
            .map(|(&g, &v)| g * v)
            .fold(F::zero(), |a, b| a + b);
        let coef = r * r * r / dn * dot;
        for j in 0..d {
            dx[[i, j]] = r * dy[[i, j]] - coef * x[[i, j]];
        }
    }
    dx
}

struct LinearGradKeys {
    weight: String,
    bias: String,
    lora_a: String,
    lora_b: String,
}

impl LinearGradKeys {
    fn for_layer(name: &str) -> Self {
        Self {
            weight: name.to_string(),
            bias: format!("{name}_bias"),
            lora_a: format!("{name}.lora_a"),
            lora_b: format!("{name}.lora_b"),
        }
    }
}

/// One adapted linear application with the caches backward needs.
struct LinearCtx<'p, F: Elem> {
    w: &'p Array2<F>,
    bias: &'p Array1<F>,
    lora: Option<(&'p Array2<F>, &'p Array2<F>, F)>, // (a, b, scale)
    keys: LinearGradKeys,
}

impl<'p, F: Elem> LinearCtx<'p, F> {
    fn new(
        params: &'p MicroLmParams<F>,
        adapter: Option<&'p LoraAdapter<F>>,
        name: &str,
    ) -> Result<Self> {
        let lora = adapter.and_then(|ad| {
            ad.pair(name)
                .map(|pair| (&pair.a, &pair.b, ad.scale()))
        });
        Ok(Self {
            w: params.mat(name)?,
            bias: params.vec(&format!("{name}_bias"))?,
            lora,
            keys: LinearGradKeys::for_layer(name),
        })
    }

    /// `y = x W^T + b (+ scale * (x A^T) B^T)`; also returns `x A^T`.
    fn forward(&self, x: &Array2<F>) -> (Array2<F>, Option<Array2<F>>) {
        let mut y = x.dot(&self.w.t());
        y += self.bias;
        match self.lora {
            Some((a, b, scale)) => {
                let xa = x.dot(&a.t());
                y.scaled_add(scale, &xa.dot(&b.t()));
                (y, Some(xa))
            }
            None => (y, None),
        }
    }

    /// Accumulate parameter gradients and return dL/dx.
    fn backward(
        &self,
        g: &Array2<F>,
        x: &Array2<F>,
        xa: Option<&Array2<F>>,
        grads: &mut Gradients<F>,
        train_base: bool,
    ) -> Array2<F> {
        if train_base {
            let dw = g.t().dot(x);
            grads.mats[&self.keys.weight] += &dw;
            grads.vecs[&self.keys.bias] += &g.sum_axis(Axis(0));
        }
        let mut dx = g.dot(self.w);
        if let Some((a, b, scale)) = self.lora {
            let xa = xa.expect("lora cache present when adapter attached");
            // dB += scale * g^T (x A^T); dA += (scale * g B)^T x
            let mut db = g.t().dot(xa);
            db.mapv_inplace(|v| v * scale);
            grads.mats[&self.keys.lora_b] += &db;
            let mut dxa = g.dot(b);
            dxa.mapv_inplace(|v| v * scale);
            grads.mats[&self.keys.lora_a] += &dxa.t().dot(x);
            dx += &dxa.dot(a);
        }
        dx
    }
}

struct LayerCache<F: Elem> {
    x_in: Array2<F>,
    n1: Array2<F>,
    ri1: Array1<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    probs: Vec<Array2<F>>,
    heads_out: Array2<F>,
    x_mid: Array2<F>,
    n2: Array2<F>,
    ri2: Array1<F>,
    z: Array2<F>,
    u: Array2<F>,
    xa_q: Option<Array2<F>>,
    xa_k: Option<Array2<F>>,
    xa_v: Option<Array2<F>>,
    xa_out: Option<Array2<F>>,
    xa_up: Option<Array2<F>>,
    xa_down: Option<Array2<F>>,
}

struct Cache<F: Elem> {
    layers: Vec<LayerCache<F>>,
    final_in: Array2<F>,
    xhat: Array2<F>,
    sinv: Array1<F>,
    norm_out: Array2<F>,
}

fn embed<F: Elem>(params: &MicroLmParams<F>, ids: &[u32]) -> Result<Array2<F>> {
    let cfg = params.config();
    if ids.len() > cfg.max_seq_len {
        return Err(Error::SequenceTooLong {
            len: ids.len(),
            max: cfg.max_seq_len,
        });
    }
    let tok = params.mat("tok_embedding")?;
    let pos = params.mat("pos_embedding")?;
    let mut x = Array2::zeros((ids.len(), cfg.d_model));
    for (t, &id) in ids.iter().enumerate() {
        if id as usize >= cfg.vocab_size {
            return Err(Error::OutOfRange {
                value: id as f64,
                lo: 0.0,
                hi: (cfg.vocab_size - 1) as f64,
            });
        }
        let mut row = x.row_mut(t);
        row.assign(&tok.row(id as usize));
        row += &pos.row(t);
    }
    Ok(x)
}

/// Causal softmax over the prefix of each row of `scores`, in place.
fn causal_softmax<F: Elem>(scores: &mut Array2<F>) {
    let n = scores.dim().0;
    for i in 0..n {
        let mut max = F::neg_infinity();
        for j in 0..=i {
            if scores[[i, j]] > max {
                max = scores[[i, j]];
            }
        }
        let mut sum = F::zero();
        for j in 0..=i {
            let e = (scores[[i, j]] - max).exp();
            scores[[i, j]] = e;
            sum = sum + e;
        }
        for j in 0..=i {
            scores[[i, j]] = scores[[i, j]] / sum;
        }
        for j in (i + 1)..n {
            scores[[i, j]] = F::zero();
        }
    }
}

fn forward_with_cache<F: Elem>(
    params: &MicroLmParams<F>,
    adapter: Option<&LoraAdapter<F>>,
    ids: &[u32],
) -> Result<(Array2<F>, Cache<F>)> {
    let cfg = params.config();
    let n = ids.len();
    let heads = cfg.n_heads;
    let hd = cfg.head_dim();
    let inv_sqrt = F::from_f64(1.0 / (hd as f64).sqrt());

    let mut x = embed(params, ids)?;
    let mut layers = Vec::with_capacity(cfg.n_layers);

    for l in 0..cfg.n_layers {
        let [qn, kn, vn, on, upn, downn] = layer_mat_names(l);
        let lin_q = LinearCtx::new(params, adapter, &qn)?;
        let lin_k = LinearCtx::new(params, adapter, &kn)?;
        let lin_v = LinearCtx::new(params, adapter, &vn)?;
        let lin_o = LinearCtx::new(params, adapter, &on)?;
        let lin_up = LinearCtx::new(params, adapter, &upn)?;
        let lin_down = LinearCtx::new(params, adapter, &downn)?;

        let x_in = x.clone();
        let (n1, ri1) = rmsnorm(&x_in);
        let (q, xa_q) = lin_q.forward(&n1);
        let (k, xa_k) = lin_k.forward(&n1);
        let (v, xa_v) = lin_v.forward(&n1);

        let mut probs = Vec::with_capacity(heads);
        let mut heads_out = Array2::zeros((n, cfg.d_model));
        for h in 0..heads {
            let cols = s![.., h * hd..(h + 1) * hd];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let vh = v.slice(cols);
            let mut scores = qh.dot(&kh.t());
            scores.mapv_inplace(|v| v * inv_sqrt);
            causal_softmax(&mut scores);
            let oh = scores.dot(&vh);
            heads_out.slice_mut(cols).assign(&oh);
            probs.push(scores);
        }

        let (attn, xa_out) = lin_o.forward(&heads_out);
        let x_mid = &x_in + &attn;

        let (n2, ri2) = rmsnorm(&x_mid);
        let (z, xa_up) = lin_up.forward(&n2);
        let u = z.mapv(gelu);
        let (m, xa_down) = lin_down.forward(&u);
        x = &x_mid + &m;

        layers.push(LayerCache {
            x_in,
            n1,
            ri1,
            q,
            k,
            v,
            probs,
            heads_out,
            x_mid,
            n2,
            ri2,
            z,
            u,
            xa_q,
            xa_k,
            xa_v,
            xa_out,
            xa_up,
            xa_down,
        });
    }

    // Final layer norm with learned gain and shift.
    let gamma = params.vec("final_norm_gamma")?;
    let beta = params.vec("final_norm_beta")?;
    let final_in = x;
    let (nrows, d) = final_in.dim();
    let dn = F::from_f64(d as f64);
    let mut xhat = Array2::zeros((nrows, d));
    let mut sinv = Array1::zeros(nrows);
    let mut norm_out = Array2::zeros((nrows, d));
    for i in 0..nrows {
        let row = final_in.row(i);
        let mean = row.iter().fold(F::zero(), |a, &b| a + b) / dn;
        let var = row
            .iter()
            .map(|&v| (v - mean) * (v - mean))
            .fold(F::zero(), |a, b| a + b)
            / dn;
        let si = (var + eps::<F>()).sqrt().recip();
        sinv[i] = si;
        for j in 0..d {
            let xh = (final_in[[i, j]] - mean) * si;
            xhat[[i, j]] = xh;
            norm_out[[i, j]] = gamma[j] * xh + beta[j];
        }
    }

    let head = LinearCtx::new_head(params)?;
    let (logits, _) = head.forward(&norm_out);

    Ok((
        logits,
        Cache {
            layers,
            final_in,
            xhat,
            sinv,
            norm_out,
        },
    ))
}

impl<'p, F: Elem> LinearCtx<'p, F> {
    fn new_head(params: &'p MicroLmParams<F>) -> Result<Self> {
        Ok(Self {
            w: params.mat("lm_head")?,
            bias: params.vec("lm_head_bias")?,
            lora: None,
            keys: LinearGradKeys::for_layer("lm_head"),
        })
    }
}

/// Causal logits for a token sequence: position `t` depends only on
/// `ids[0..=t]`. Shape `(len, vocab)`.
pub fn forward<F: Elem>(
    params: &MicroLmParams<F>,
    adapter: Option<&LoraAdapter<F>>,
    ids: &[u32],
) -> Result<Array2<F>> {
    forward_with_cache(params, adapter, ids).map(|(logits, _)| logits)
}

/// Mark the span whose next-token predictions contribute to the loss:
/// positions `prompt_len - 1 .. total_len - 1` predict the target tokens.
pub fn target_mask(prompt_len: usize, total_len: usize) -> Vec<bool> {
    (0..total_len)
        .map(|t| t + 1 >= prompt_len && t + 1 < total_len.max(1))
        .collect()
}

/// Mean next-token cross-entropy over masked positions, with exact
/// gradients for every trainable tensor.
///
/// `mask[t]` marks position `t` as predicting `ids[t + 1]`; the final
/// position cannot be masked. With an adapter attached only its factors
/// receive gradients; otherwise all base tensors do.
pub fn loss_and_grads<F: Elem>(
    params: &MicroLmParams<F>,
    adapter: Option<&LoraAdapter<F>>,
    ids: &[u32],
    mask: &[bool],
) -> Result<(F, Gradients<F>)> {
    let n = ids.len();
    if mask.len() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("mask of length {n}"),
            got: format!("{}", mask.len()),
        });
    }
    if n > 0 && mask[n - 1] {
        return Err(Error::InvariantViolation(
            "last position has no next token to predict".into(),
        ));
    }
    let n_masked = mask.iter().filter(|&&m| m).count();
    if n_masked == 0 {
        return Err(Error::EmptyTargetMask);
    }

    let (logits, cache) = forward_with_cache(params, adapter, ids)?;
    let vocab = logits.dim().1;
    let inv_nm = F::from_f64(1.0 / n_masked as f64);

    let mut loss = F::zero();
    let mut dlogits = Array2::zeros((n, vocab));
    for t in 0..n {
        if !mask[t] {
            continue;
        }
        let target = ids[t + 1] as usize;
        let row = logits.row(t);
        let max = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
        let mut sum = F::zero();
        for &v in row.iter() {
            sum = sum + (v - max).exp();
        }
        let lse = max + sum.ln();
        loss = loss + (lse - row[target]) * inv_nm;
        let mut drow = dlogits.row_mut(t);
        for j in 0..vocab {
            drow[j] = (row[j] - lse).exp() * inv_nm;
        }
        drow[target] = drow[target] - inv_nm;
    }

    if !loss.is_finite() {
        return Err(Error::AnomalyDetected {
            tensor: "loss".into(),
            index: 0,
            step: 0,
        });
    }

    let train_base = adapter.is_none();
    let mut grads = match adapter {
        Some(ad) => Gradients::zeros_for_adapter(ad),
        None => Gradients::zeros_for_base(params),
    };

    backward(params, adapter, ids, &cache, &dlogits, train_base, &mut grads)?;

    if let Some((tensor, index)) = grads.find_non_finite() {
        return Err(Error::AnomalyDetected {
            tensor,
            index,
            step: 0,
        });
    }
    Ok((loss, grads))
}

#[allow(clippy::too_many_arguments)]
fn backward<F: Elem>(
    params: &MicroLmParams<F>,
    adapter: Option<&LoraAdapter<F>>,
    ids: &[u32],
    cache: &Cache<F>,
    dlogits: &Array2<F>,
    train_base: bool,
    grads: &mut Gradients<F>,
) -> Result<()> {
    let cfg = params.config();
    let heads = cfg.n_heads;
    let hd = cfg.head_dim();
    let inv_sqrt = F::from_f64(1.0 / (hd as f64).sqrt());
    let d = cfg.d_model;
    let dn = F::from_f64(d as f64);

    // LM head.
    let head = LinearCtx::new_head(params)?;
    let d_norm_out = head.backward(dlogits, &cache.norm_out, None, grads, train_base);

    // Final layer norm.
    let gamma = params.vec("final_norm_gamma")?;
    let (n, _) = cache.final_in.dim();
    let mut dx = Array2::zeros((n, d));
    for i in 0..n {
        let mut mean_dxhat = F::zero();
        let mut mean_dxhat_xhat = F::zero();
        let mut dxhat_row = vec![F::zero(); d];
        for j in 0..d {
            let dy = d_norm_out[[i, j]];
            if train_base {
                grads.vecs["final_norm_beta"][j] = grads.vecs["final_norm_beta"][j] + dy;
                grads.vecs["final_norm_gamma"][j] =
                    grads.vecs["final_norm_gamma"][j] + dy * cache.xhat[[i, j]];
            }
            let dxh = dy * gamma[j];
            dxhat_row[j] = dxh;
            mean_dxhat = mean_dxhat + dxh;
            mean_dxhat_xhat = mean_dxhat_xhat + dxh * cache.xhat[[i, j]];
        }
        mean_dxhat = mean_dxhat / dn;
        mean_dxhat_xhat = mean_dxhat_xhat / dn;
        let si = cache.sinv[i];
        for j in 0..d {
            dx[[i, j]] =
                si * (dxhat_row[j] - mean_dxhat - cache.xhat[[i, j]] * mean_dxhat_xhat);
        }
    }

    // Transformer blocks, in reverse.
    for l in (0..cfg.n_layers).rev() {
        let lc = &cache.layers[l];
        let [qn, kn, vn, on, upn, downn] = layer_mat_names(l);
        let lin_q = LinearCtx::new(params, adapter, &qn)?;
        let lin_k = LinearCtx::new(params, adapter, &kn)?;
        let lin_v = LinearCtx::new(params, adapter, &vn)?;
        let lin_o = LinearCtx::new(params, adapter, &on)?;
        let lin_up = LinearCtx::new(params, adapter, &upn)?;
        let lin_down = LinearCtx::new(params, adapter, &downn)?;

        // Feed-forward branch: x = x_mid + down(gelu(up(n2))).
        let d_m = &dx;
        let d_u = lin_down.backward(d_m, &lc.u, lc.xa_down.as_ref(), grads, train_base);
        let mut d_z = d_u;
        d_z.zip_mut_with(&lc.z, |g, &z| *g = *g * gelu_prime(z));
        let d_n2 = lin_up.backward(&d_z, &lc.n2, lc.xa_up.as_ref(), grads, train_base);
        let mut d_x_mid = rmsnorm_backward(&d_n2, &lc.x_mid, &lc.ri2);
        d_x_mid += &dx; // residual

        // Attention branch: x_mid = x_in + out(heads).
        let d_heads = lin_o.backward(&d_x_mid, &lc.heads_out, lc.xa_out.as_ref(), grads, train_base);
        let seq = lc.x_in.dim().0;
        let mut d_q = Array2::zeros((seq, d));
        let mut d_k = Array2::zeros((seq, d));
        let mut d_v = Array2::zeros((seq, d));
        for h in 0..heads {
            let cols = s![.., h * hd..(h + 1) * hd];
            let p = &lc.probs[h];
            let d_oh = d_heads.slice(cols);
            let vh = lc.v.slice(cols);
            let qh = lc.q.slice(cols);
            let kh = lc.k.slice(cols);

            let d_p = d_oh.dot(&vh.t());
            d_v.slice_mut(cols).assign(&p.t().dot(&d_oh));

            // Softmax backward per causal row.
            let mut d_s = Array2::zeros((seq, seq));
            for i in 0..seq {
                let mut dot = F::zero();
                for j in 0..=i {
                    dot = dot + p[[i, j]] * d_p[[i, j]];
                }
                for j in 0..=i {
                    d_s[[i, j]] = p[[i, j]] * (d_p[[i, j]] - dot);
                }
            }

            let mut d_qh = d_s.dot(&kh);
            d_qh.mapv_inplace(|v| v * inv_sqrt);
            d_q.slice_mut(cols).assign(&d_qh);
            let mut d_kh = d_s.t().dot(&qh);
            d_kh.mapv_inplace(|v| v * inv_sqrt);
            d_k.slice_mut(cols).assign(&d_kh);
        }

        let mut d_n1 = lin_q.backward(&d_q, &lc.n1, lc.xa_q.as_ref(), grads, train_base);
        d_n1 += &lin_k.backward(&d_k, &lc.n1, lc.xa_k.as_ref(), grads, train_base);
        d_n1 += &lin_v.backward(&d_v, &lc.n1, lc.xa_v.as_ref(), grads, train_base);

        let mut d_x_in = rmsnorm_backward(&d_n1, &lc.x_in, &lc.ri1);
        d_x_in += &d_x_mid; // residual
        dx = d_x_in;
    }

    // Embeddings.
    if train_base {
        let d_tok = &mut grads.mats["tok_embedding"];
        for (t, &id) in ids.iter().enumerate() {
            let mut row = d_tok.row_mut(id as usize);
            row += &dx.row(t);
        }
        let d_pos = &mut grads.mats["pos_embedding"];
        for t in 0..ids.len() {
            let mut row = d_pos.row_mut(t);
            row += &dx.row(t);
        }
    }
    Ok(())
}

/// Greedy decoding: repeatedly forward the grown sequence and take the
/// argmax of the final position. Stops before emitting EOS. Returns only
/// the newly generated ids.
pub fn generate<F: Elem>(
    params: &MicroLmParams<F>,
    adapter: Option<&LoraAdapter<F>>,
    prompt: &[u32],
    max_new: usize,
) -> Result<Vec<u32>> {
    let max = params.config().max_seq_len;
    if prompt.len() + max_new > max {
        return Err(Error::SequenceTooLong {
            len: prompt.len() + max_new,
            max,
        });
    }
    if prompt.is_empty() {
        return Err(Error::InvariantViolation("empty prompt".into()));
    }
    let mut ids = prompt.to_vec();
    let mut out = Vec::new();
    for _ in 0..max_new {
        let logits = forward(params, adapter, &ids)?;
        let last = logits.row(logits.dim().0 - 1);
        let mut best = 0usize;
        let mut best_v = F::neg_infinity();
        for (j, &v) in last.iter().enumerate() {
            if v > best_v {
                best_v = v;
                best = j;
            }
        }
        let tok = best as u32;
        if tok == tokenizer::EOS {
            break;
        }
        ids.push(tok);
        out.push(tok);
    }
    Ok(out)
}
