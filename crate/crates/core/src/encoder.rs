//! Transformer encoder that maps a detection point cloud to per-detection
//! class probabilities.
//!
//! Pipeline: positions (normalized by the patch size) are projected to width
//! `h` and summed with a learned per-frame embedding; `n_l` post-norm encoder
//! layers (multi-head self-attention, residual, layer norm, ReLU feedforward,
//! residual, layer norm) follow; a three-layer head `h → h → h → B` with ReLU
//! after the first two layers and a row softmax produces the association
//! matrix.
//!
//! Every forward op has a cached variant so [`backward`] can compute exact
//! reverse-mode gradients for training.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, softmax_in_place, softmax_rows, softmax_rows_backward, Matrix};
use crate::model::{AssociationMatrix, DetectionTable};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    /// Hidden width `h`.
    pub hidden: usize,
    pub key_dim: usize,
    pub value_dim: usize,
    pub ffn_dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Output classes `B`, clutter column included.
    pub classes: usize,
    /// Largest frame index `T` the time table covers.
    pub max_frames: usize,
    /// Patch extent used to normalize positions into `[0, 1]`.
    pub x_lim: f64,
    pub y_lim: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            key_dim: 16,
            value_dim: 16,
            ffn_dim: 1024,
            layers: 6,
            heads: 8,
            classes: 20,
            max_frames: 100,
            x_lim: 30.0,
            y_lim: 30.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("hidden", self.hidden),
            ("key_dim", self.key_dim),
            ("value_dim", self.value_dim),
            ("ffn_dim", self.ffn_dim),
            ("layers", self.layers),
            ("heads", self.heads),
            ("classes", self.classes),
            ("max_frames", self.max_frames),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidParameter {
                    name,
                    reason: "must be positive".into(),
                });
            }
        }
        if self.heads * self.value_dim != self.hidden {
            return Err(Error::InvalidParameter {
                name: "heads",
                reason: format!(
                    "heads * value_dim = {} must equal hidden = {}",
                    self.heads * self.value_dim,
                    self.hidden
                ),
            });
        }
        if !(self.x_lim > 0.0 && self.y_lim > 0.0) {
            return Err(Error::InvalidParameter {
                name: "x_lim",
                reason: "patch extent must be positive".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: Vec<Matrix>,
    pub wk: Vec<Matrix>,
    pub wv: Vec<Matrix>,
    pub wo: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub ln1_gain: Matrix,
    pub ln1_bias: Matrix,
    pub ln2_gain: Matrix,
    pub ln2_bias: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub w3: Matrix,
    pub b3: Matrix,
}

/// All learned weights. The same type doubles as a gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub input_proj: Matrix,
    pub time_table: Matrix,
    pub layers: Vec<LayerParams>,
    pub head: HeadParams,
}

/// Name and shape of every tensor, in canonical order.
pub fn tensor_layout(c: &EncoderConfig) -> Vec<(String, usize, usize)> {
    let h = c.hidden;
    let mut out = vec![("input_proj".into(), 2, h), ("time_table".into(), c.max_frames, h)];
    for l in 0..c.layers {
        for j in 0..c.heads {
            out.push((format!("layers.{l}.wq.{j}"), h, c.key_dim));
        }
        for j in 0..c.heads {
            out.push((format!("layers.{l}.wk.{j}"), h, c.key_dim));
        }
        for j in 0..c.heads {
            out.push((format!("layers.{l}.wv.{j}"), h, c.value_dim));
        }
        out.push((format!("layers.{l}.wo"), c.heads * c.value_dim, h));
        out.push((format!("layers.{l}.w1"), h, c.ffn_dim));
        out.push((format!("layers.{l}.b1"), 1, c.ffn_dim));
        out.push((format!("layers.{l}.w2"), c.ffn_dim, h));
        out.push((format!("layers.{l}.b2"), 1, h));
        out.push((format!("layers.{l}.ln1_gain"), 1, h));
        out.push((format!("layers.{l}.ln1_bias"), 1, h));
        out.push((format!("layers.{l}.ln2_gain"), 1, h));
        out.push((format!("layers.{l}.ln2_bias"), 1, h));
    }
    out.push(("head.w1".into(), h, h));
    out.push(("head.b1".into(), 1, h));
    out.push(("head.w2".into(), h, h));
    out.push(("head.b2".into(), 1, h));
    out.push(("head.w3".into(), h, c.classes));
    out.push(("head.b3".into(), 1, c.classes));
    out
}

impl EncoderParams {
    /// Xavier-uniform weights, zero biases, unit layer-norm gains.
    pub fn init(c: &EncoderConfig, seed: u64) -> Result<Self> {
        c.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xavier = |rows: usize, cols: usize| -> Matrix {
            let bound = libm::sqrt(6.0 / (rows + cols) as f64);
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            let data = (0..rows * cols).map(|_| dist.sample(&mut rng)).collect();
            Matrix::from_vec(rows, cols, data).expect("shape")
        };
        let h = c.hidden;
        let input_proj = xavier(2, h);
        let time_table = xavier(c.max_frames, h);
        let mut layers = Vec::with_capacity(c.layers);
        for _ in 0..c.layers {
            let wq = (0..c.heads).map(|_| xavier(h, c.key_dim)).collect();
            let wk = (0..c.heads).map(|_| xavier(h, c.key_dim)).collect();
            let wv = (0..c.heads).map(|_| xavier(h, c.value_dim)).collect();
            layers.push(LayerParams {
                wq,
                wk,
                wv,
                wo: xavier(c.heads * c.value_dim, h),
                w1: xavier(h, c.ffn_dim),
                b1: Matrix::zeros(1, c.ffn_dim),
                w2: xavier(c.ffn_dim, h),
                b2: Matrix::zeros(1, h),
                ln1_gain: Matrix::filled(1, h, 1.0),
                ln1_bias: Matrix::zeros(1, h),
                ln2_gain: Matrix::filled(1, h, 1.0),
                ln2_bias: Matrix::zeros(1, h),
            });
        }
        let head = HeadParams {
            w1: xavier(h, h),
            b1: Matrix::zeros(1, h),
            w2: xavier(h, h),
            b2: Matrix::zeros(1, h),
            w3: xavier(h, c.classes),
            b3: Matrix::zeros(1, c.classes),
        };
        Ok(Self {
            input_proj,
            time_table,
            layers,
            head,
        })
    }

    /// All-zero tensors with the shapes of `c`.
    pub fn zeros(c: &EncoderConfig) -> Self {
        let layout = tensor_layout(c);
        let tensors = layout
            .into_iter()
            .map(|(name, r, k)| (name, Matrix::zeros(r, k)))
            .collect();
        Self::from_named_tensors(c, tensors).expect("layout is consistent")
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            t.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        }
        out
    }

    /// Tensors in canonical order (see [`tensor_layout`]).
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = vec![&self.input_proj, &self.time_table];
        for l in &self.layers {
            out.extend(l.wq.iter());
            out.extend(l.wk.iter());
            out.extend(l.wv.iter());
            out.extend([
                &l.wo,
                &l.w1,
                &l.b1,
                &l.w2,
                &l.b2,
                &l.ln1_gain,
                &l.ln1_bias,
                &l.ln2_gain,
                &l.ln2_bias,
            ]);
        }
        let h = &self.head;
        out.extend([&h.w1, &h.b1, &h.w2, &h.b2, &h.w3, &h.b3]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.input_proj, &mut self.time_table];
        for l in &mut self.layers {
            out.extend(l.wq.iter_mut());
            out.extend(l.wk.iter_mut());
            out.extend(l.wv.iter_mut());
            out.extend([
                &mut l.wo,
                &mut l.w1,
                &mut l.b1,
                &mut l.w2,
                &mut l.b2,
                &mut l.ln1_gain,
                &mut l.ln1_bias,
                &mut l.ln2_gain,
                &mut l.ln2_bias,
            ]);
        }
        let h = &mut self.head;
        out.extend([&mut h.w1, &mut h.b1, &mut h.w2, &mut h.b2, &mut h.w3, &mut h.b3]);
        out
    }

    /// Rebuilds parameters from named tensors, checking names and shapes
    /// against the layout of `c`.
    pub fn from_named_tensors(c: &EncoderConfig, tensors: Vec<(String, Matrix)>) -> Result<Self> {
        c.validate()?;
        let layout = tensor_layout(c);
        if layout.len() != tensors.len() {
            return Err(Error::LengthMismatch {
                expected: layout.len(),
                actual: tensors.len(),
            });
        }
        for ((name, r, k), (got_name, m)) in layout.iter().zip(&tensors) {
            if name != got_name || m.shape() != (*r, *k) {
                return Err(Error::ShapeMismatch {
                    what: got_name.clone(),
                    expected_rows: *r,
                    expected_cols: *k,
                    rows: m.rows(),
                    cols: m.cols(),
                });
            }
            if let Some((row, col)) = m.first_non_finite() {
                return Err(Error::InvalidParameter {
                    name: "tensor",
                    reason: format!("{got_name} has a non-finite entry at ({row}, {col})"),
                });
            }
        }
        let mut it = tensors.into_iter().map(|(_, m)| m);
        let mut next = || it.next().expect("length checked");
        let input_proj = next();
        let time_table = next();
        let mut layers = Vec::with_capacity(c.layers);
        for _ in 0..c.layers {
            let wq = (0..c.heads).map(|_| next()).collect();
            let wk = (0..c.heads).map(|_| next()).collect();
            let wv = (0..c.heads).map(|_| next()).collect();
            layers.push(LayerParams {
                wq,
                wk,
                wv,
                wo: next(),
                w1: next(),
                b1: next(),
                w2: next(),
                b2: next(),
                ln1_gain: next(),
                ln1_bias: next(),
                ln2_gain: next(),
                ln2_bias: next(),
            });
        }
        let head = HeadParams {
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
            w3: next(),
            b3: next(),
        };
        Ok(Self {
            input_proj,
            time_table,
            layers,
            head,
        })
    }

    /// Named tensors in canonical order.
    pub fn named_tensors(&self, c: &EncoderConfig) -> Vec<(String, &Matrix)> {
        tensor_layout(c)
            .into_iter()
            .map(|(name, _, _)| name)
            .zip(self.tensors())
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|m| m.as_slice().len()).sum()
    }
}

/// Positions scaled into `[0, 1]` by the patch extent, as an `n×2` matrix.
pub fn normalized_positions(d: &DetectionTable, c: &EncoderConfig) -> Matrix {
    let mut z = Matrix::zeros(d.len(), 2);
    for (i, det) in d.rows.iter().enumerate() {
        z[(i, 0)] = det.x / c.x_lim;
        z[(i, 1)] = det.y / c.y_lim;
    }
    z
}

/// `e⁰ = z·W + L(t)` row-wise.
pub fn embed(z: &Matrix, frames: &[u32], p: &EncoderParams) -> Result<Matrix> {
    if frames.len() != z.rows() {
        return Err(Error::LengthMismatch {
            expected: z.rows(),
            actual: frames.len(),
        });
    }
    let max = p.time_table.rows() as u32;
    let mut e = z.matmul(&p.input_proj);
    for (i, &t) in frames.iter().enumerate() {
        if t == 0 || t > max {
            return Err(Error::FrameOutOfRange { frame: t, max });
        }
        for (v, tv) in e.row_mut(i).iter_mut().zip(p.time_table.row(t as usize - 1)) {
            *v += tv;
        }
    }
    Ok(e)
}

/// `softmax(Q·Kᵀ/√d_k)·V`
pub fn attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Matrix {
    attention_weights(q, k).matmul(v)
}

fn attention_weights(q: &Matrix, k: &Matrix) -> Matrix {
    let scale = 1.0 / libm::sqrt(q.cols() as f64);
    let mut scores = q.matmul_t(k);
    scores.scale(scale);
    softmax_rows(&scores)
}

pub fn multi_head_attention(e: &Matrix, layer: &LayerParams) -> Matrix {
    mha_forward(e, layer).0
}

struct HeadCache {
    q: Matrix,
    k: Matrix,
    v: Matrix,
    weights: Matrix,
}

fn mha_forward(e: &Matrix, layer: &LayerParams) -> (Matrix, Vec<HeadCache>, Matrix) {
    let heads = layer.wq.len();
    let dv = layer.wv[0].cols();
    let mut concat = Matrix::zeros(e.rows(), heads * dv);
    let mut caches = Vec::with_capacity(heads);
    for j in 0..heads {
        let q = e.matmul(&layer.wq[j]);
        let k = e.matmul(&layer.wk[j]);
        let v = e.matmul(&layer.wv[j]);
        let weights = attention_weights(&q, &k);
        concat.set_columns(j * dv, &weights.matmul(&v));
        caches.push(HeadCache { q, k, v, weights });
    }
    (concat.matmul(&layer.wo), caches, concat)
}

struct NormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
}

fn layer_norm_forward(x: &Matrix, gain: &Matrix, bias: &Matrix) -> (Matrix, NormCache) {
    let (n, h) = x.shape();
    let mut normalized = Matrix::zeros(n, h);
    let mut out = Matrix::zeros(n, h);
    let mut inv_std = Vec::with_capacity(n);
    for r in 0..n {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / h as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
        let is = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
        inv_std.push(is);
        for c in 0..h {
            let xh = (row[c] - mean) * is;
            normalized[(r, c)] = xh;
            out[(r, c)] = xh * gain.as_slice()[c] + bias.as_slice()[c];
        }
    }
    (out, NormCache { normalized, inv_std })
}

/// Row-wise layer normalization (biased variance, ε = 1e-5).
pub fn layer_norm(x: &Matrix, gain: &Matrix, bias: &Matrix) -> Matrix {
    layer_norm_forward(x, gain, bias).0
}

fn layer_norm_backward(
    dy: &Matrix,
    cache: &NormCache,
    gain: &Matrix,
    dgain: &mut Matrix,
    dbias: &mut Matrix,
) -> Matrix {
    let (n, h) = dy.shape();
    let mut dx = Matrix::zeros(n, h);
    let g = gain.as_slice();
    for r in 0..n {
        let dyr = dy.row(r);
        let xh = cache.normalized.row(r);
        let mut dxhat = vec![0.0; h];
        for c in 0..h {
            dgain.as_mut_slice()[c] += dyr[c] * xh[c];
            dbias.as_mut_slice()[c] += dyr[c];
            dxhat[c] = dyr[c] * g[c];
        }
        let sum_d: f64 = dxhat.iter().sum();
        let sum_dx: f64 = dot(&dxhat, xh);
        let scale = cache.inv_std[r] / h as f64;
        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = scale * (h as f64 * dxhat[c] - sum_d - xh[c] * sum_dx);
        }
    }
    dx
}

fn relu(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    out.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

fn relu_backward(pre: &Matrix, d: &Matrix) -> Matrix {
    let mut out = d.clone();
    for (o, &p) in out.as_mut_slice().iter_mut().zip(pre.as_slice()) {
        if p <= 0.0 {
            *o = 0.0;
        }
    }
    out
}

fn affine(x: &Matrix, w: &Matrix, b: &Matrix) -> Matrix {
    let mut out = x.matmul(w);
    out.add_row_broadcast(b);
    out
}

struct LayerCache {
    input: Matrix,
    heads: Vec<HeadCache>,
    concat: Matrix,
    norm1: NormCache,
    norm_out: Matrix,
    ffn_pre: Matrix,
    ffn_act: Matrix,
    norm2: NormCache,
}

fn encoder_layer_forward(e: &Matrix, layer: &LayerParams) -> (Matrix, LayerCache) {
    let (mha, heads, concat) = mha_forward(e, layer);
    let mut ro = e.clone();
    ro.add_assign(&mha);
    let (no, norm1) = layer_norm_forward(&ro, &layer.ln1_gain, &layer.ln1_bias);
    let ffn_pre = affine(&no, &layer.w1, &layer.b1);
    let ffn_act = relu(&ffn_pre);
    let fo = affine(&ffn_act, &layer.w2, &layer.b2);
    let mut ro2 = no.clone();
    ro2.add_assign(&fo);
    let (out, norm2) = layer_norm_forward(&ro2, &layer.ln2_gain, &layer.ln2_bias);
    (
        out,
        LayerCache {
            input: e.clone(),
            heads,
            concat,
            norm1,
            norm_out: no,
            ffn_pre,
            ffn_act,
            norm2,
        },
    )
}

/// One post-norm encoder layer:
/// `NO = LN(E + MHA(E))`, `out = LN(NO + ReLU(NO·W₁ + b₁)·W₂ + b₂)`.
pub fn encoder_layer(e: &Matrix, layer: &LayerParams) -> Matrix {
    encoder_layer_forward(e, layer).0
}

fn encoder_layer_backward(dout: &Matrix, layer: &LayerParams, cache: &LayerCache, grad: &mut LayerParams) -> Matrix {
    let dro2 = layer_norm_backward(
        dout,
        &cache.norm2,
        &layer.ln2_gain,
        &mut grad.ln2_gain,
        &mut grad.ln2_bias,
    );
    // RO₂ = NO + FO
    let mut dno = dro2.clone();
    grad.w2.add_assign(&cache.ffn_act.t_matmul(&dro2));
    grad.b2.add_assign(&dro2.column_sums());
    let dact = dro2.matmul_t(&layer.w2);
    let dpre = relu_backward(&cache.ffn_pre, &dact);
    grad.w1.add_assign(&cache.norm_out.t_matmul(&dpre));
    grad.b1.add_assign(&dpre.column_sums());
    dno.add_assign(&dpre.matmul_t(&layer.w1));

    let dro = layer_norm_backward(
        &dno,
        &cache.norm1,
        &layer.ln1_gain,
        &mut grad.ln1_gain,
        &mut grad.ln1_bias,
    );
    // RO = E + MHA(E)
    let mut de = dro.clone();
    grad.wo.add_assign(&cache.concat.t_matmul(&dro));
    let dconcat = dro.matmul_t(&layer.wo);
    let dv_width = layer.wv[0].cols();
    let scale = 1.0 / libm::sqrt(layer.wq[0].cols() as f64);
    for (j, hc) in cache.heads.iter().enumerate() {
        let dhead = dconcat.columns(j * dv_width, dv_width);
        let dv = hc.weights.t_matmul(&dhead);
        let dweights = dhead.matmul_t(&hc.v);
        let mut dscores = softmax_rows_backward(&hc.weights, &dweights);
        dscores.scale(scale);
        let dq = dscores.matmul(&hc.k);
        let dk = dscores.t_matmul(&hc.q);
        grad.wq[j].add_assign(&cache.input.t_matmul(&dq));
        grad.wk[j].add_assign(&cache.input.t_matmul(&dk));
        grad.wv[j].add_assign(&cache.input.t_matmul(&dv));
        de.add_assign(&dq.matmul_t(&layer.wq[j]));
        de.add_assign(&dk.matmul_t(&layer.wk[j]));
        de.add_assign(&dv.matmul_t(&layer.wv[j]));
    }
    de
}

/// Intermediate values of one forward pass, kept for [`backward`].
pub struct ForwardTrace {
    positions: Matrix,
    frames: Vec<u32>,
    layers: Vec<LayerCache>,
    encoded: Matrix,
    head_pre1: Matrix,
    head_act1: Matrix,
    head_pre2: Matrix,
    head_act2: Matrix,
    /// Row-stochastic `n×B` output.
    pub probs: Matrix,
}

pub fn forward_trace(d: &DetectionTable, p: &EncoderParams, c: &EncoderConfig) -> Result<ForwardTrace> {
    let positions = normalized_positions(d, c);
    let frames: Vec<u32> = d.rows.iter().map(|r| r.t).collect();
    let mut e = embed(&positions, &frames, p)?;
    let mut layers = Vec::with_capacity(p.layers.len());
    for layer in &p.layers {
        let (out, cache) = encoder_layer_forward(&e, layer);
        layers.push(cache);
        e = out;
    }
    let head_pre1 = affine(&e, &p.head.w1, &p.head.b1);
    let head_act1 = relu(&head_pre1);
    let head_pre2 = affine(&head_act1, &p.head.w2, &p.head.b2);
    let head_act2 = relu(&head_pre2);
    let mut probs = affine(&head_act2, &p.head.w3, &p.head.b3);
    for r in 0..probs.rows() {
        softmax_in_place(probs.row_mut(r));
    }
    Ok(ForwardTrace {
        positions,
        frames,
        layers,
        encoded: e,
        head_pre1,
        head_act1,
        head_pre2,
        head_act2,
        probs,
    })
}

/// Gradients of a scalar loss w.r.t. every parameter, given `dL/dA` for the
/// association matrix of `trace`.
pub fn backward(trace: &ForwardTrace, dprobs: &Matrix, p: &EncoderParams) -> EncoderParams {
    let mut grad = p.zeros_like();
    let dlogits = softmax_rows_backward(&trace.probs, dprobs);

    grad.head.w3 = trace.head_act2.t_matmul(&dlogits);
    grad.head.b3 = dlogits.column_sums();
    let dact2 = dlogits.matmul_t(&p.head.w3);
    let dpre2 = relu_backward(&trace.head_pre2, &dact2);
    grad.head.w2 = trace.head_act1.t_matmul(&dpre2);
    grad.head.b2 = dpre2.column_sums();
    let dact1 = dpre2.matmul_t(&p.head.w2);
    let dpre1 = relu_backward(&trace.head_pre1, &dact1);
    grad.head.w1 = trace.encoded.t_matmul(&dpre1);
    grad.head.b1 = dpre1.column_sums();
    let mut de = dpre1.matmul_t(&p.head.w1);

    for ((layer, cache), g) in p.layers.iter().zip(&trace.layers).zip(grad.layers.iter_mut()).rev() {
        de = encoder_layer_backward(&de, layer, cache, g);
    }

    grad.input_proj = trace.positions.t_matmul(&de);
    for (i, &t) in trace.frames.iter().enumerate() {
        for (g, v) in grad.time_table.row_mut(t as usize - 1).iter_mut().zip(de.row(i)) {
            *g += v;
        }
    }
    grad
}

/// Association matrix `A ∈ ℝ^{n×B}` for a detection table.
pub fn forward_associate(d: &DetectionTable, p: &EncoderParams, c: &EncoderConfig) -> Result<AssociationMatrix> {
    let positions = normalized_positions(d, c);
    let frames: Vec<u32> = d.rows.iter().map(|r| r.t).collect();
    let mut e = embed(&positions, &frames, p)?;
    for layer in &p.layers {
        e = encoder_layer(&e, layer);
    }
    let h1 = relu(&affine(&e, &p.head.w1, &p.head.b1));
    let h2 = relu(&affine(&h1, &p.head.w2, &p.head.b2));
    let mut probs = affine(&h2, &p.head.w3, &p.head.b3);
    for r in 0..probs.rows() {
        softmax_in_place(probs.row_mut(r));
    }
    AssociationMatrix::new(probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Detection;
    use rand::Rng;

    fn small_config() -> EncoderConfig {
        EncoderConfig {
            hidden: 16,
            key_dim: 8,
            value_dim: 8,
            ffn_dim: 32,
            layers: 2,
            heads: 2,
            classes: 3,
            max_frames: 10,
            x_lim: 30.0,
            y_lim: 30.0,
        }
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_table(rng: &mut ChaCha8Rng, n: usize, frames: u32) -> DetectionTable {
        DetectionTable::new(
            (0..n)
                .map(|_| {
                    Detection::new(
                        rng.random_range(0.0..30.0),
                        rng.random_range(0.0..30.0),
                        rng.random_range(1..=frames),
                    )
                })
                .collect(),
        )
    }

    #[test]
    fn default_config_matches_table() {
        let c = EncoderConfig::default();
        assert_eq!((c.hidden, c.key_dim, c.value_dim, c.ffn_dim), (128, 16, 16, 1024));
        assert_eq!((c.layers, c.heads, c.classes, c.max_frames), (6, 8, 20, 100));
        c.validate().unwrap();
        let bad = EncoderConfig { heads: 3, ..c };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn embed_cases() {
        let c = small_config();
        let p = EncoderParams::init(&c, 1).unwrap();
        let z = Matrix::zeros(3, 2);
        let e = embed(&z, &[1, 4, 4], &p).unwrap();
        assert_eq!(e.row(0), p.time_table.row(0));
        assert_eq!(e.row(1), p.time_table.row(3));
        assert_eq!(e.row(1), e.row(2));
        assert_eq!(
            embed(&z, &[1, 11, 2], &p),
            Err(Error::FrameOutOfRange { frame: 11, max: 10 })
        );
        assert!(embed(&z, &[0, 1, 2], &p).is_err());

        let zero = EncoderParams::zeros(&c);
        let z = Matrix::from_rows(&[[0.3, 0.7], [0.1, 0.2]]);
        let e = embed(&z, &[2, 3], &zero).unwrap();
        assert_eq!(e.max_abs(), 0.0);
    }

    #[test]
    fn attention_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v1 = random_matrix(&mut rng, 1, 4);
        let out = attention(&random_matrix(&mut rng, 1, 3), &random_matrix(&mut rng, 1, 3), &v1);
        assert!(out
            .as_slice()
            .iter()
            .zip(v1.as_slice())
            .all(|(a, b)| (a - b).abs() < 1e-15));

        let v = random_matrix(&mut rng, 5, 4);
        let out = attention(&Matrix::zeros(2, 3), &random_matrix(&mut rng, 5, 3), &v);
        let mean = v.column_sums();
        for r in 0..2 {
            for c in 0..4 {
                assert!((out[(r, c)] - mean.as_slice()[c] / 5.0).abs() < 1e-12);
            }
        }

        // one aligned key dominates
        let q = Matrix::from_rows(&[[10.0, 0.0, 0.0, 0.0]]);
        let k = Matrix::from_rows(&[[10.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0], [-2.0, 0.0, 0.0, 0.0]]);
        // scaled logits: 50, 0, -10 → gap ≥ 40
        let v = random_matrix(&mut rng, 3, 2);
        let out = attention(&q, &k, &v);
        assert!((out[(0, 0)] - v[(0, 0)]).abs() < 1e-6);
        assert!((out[(0, 1)] - v[(0, 1)]).abs() < 1e-6);
    }

    #[test]
    fn mha_cases() {
        let c = small_config();
        let mut p = EncoderParams::init(&c, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e = random_matrix(&mut rng, 5, c.hidden);
        let out = multi_head_attention(&e, &p.layers[0]);
        assert_eq!(out.shape(), (5, c.hidden));

        // single token: each head returns its own V row
        let single = random_matrix(&mut rng, 1, c.hidden);
        let layer = &p.layers[0];
        let mut concat = Matrix::zeros(1, c.heads * c.value_dim);
        for j in 0..c.heads {
            concat.set_columns(j * c.value_dim, &single.matmul(&layer.wv[j]));
        }
        let expected = concat.matmul(&layer.wo);
        let got = multi_head_attention(&single, layer);
        for (a, b) in got.as_slice().iter().zip(expected.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }

        for w in &mut p.layers[0].wv {
            *w = Matrix::zeros(w.rows(), w.cols());
        }
        assert_eq!(multi_head_attention(&e, &p.layers[0]).max_abs(), 0.0);
    }

    #[test]
    fn mha_is_permutation_equivariant() {
        let c = small_config();
        let p = EncoderParams::init(&c, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let e = random_matrix(&mut rng, 6, c.hidden);
        let perm = [3usize, 0, 5, 1, 4, 2];
        let mut permuted = Matrix::zeros(6, c.hidden);
        for (i, &src) in perm.iter().enumerate() {
            permuted.row_mut(i).copy_from_slice(e.row(src));
        }
        let a = multi_head_attention(&e, &p.layers[0]);
        let b = multi_head_attention(&permuted, &p.layers[0]);
        for (i, &src) in perm.iter().enumerate() {
            for (x, y) in b.row(i).iter().zip(a.row(src)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encoder_layer_normalizes_rows() {
        let c = small_config();
        let p = EncoderParams::init(&c, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for n in [1usize, 7, 100] {
            let e = random_matrix(&mut rng, n, c.hidden);
            let out = encoder_layer(&e, &p.layers[0]);
            assert_eq!(out.shape(), (n, c.hidden));
            for r in 0..n {
                let row = out.row(r);
                let mean = row.iter().sum::<f64>() / c.hidden as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c.hidden as f64;
                assert!(mean.abs() < 1e-12);
                assert!((var - 1.0).abs() < 1e-3, "var {var}");
            }
        }
    }

    #[test]
    fn encoder_layer_with_zero_weights_is_double_layer_norm() {
        let c = small_config();
        let p = EncoderParams::zeros(&c);
        let mut layer = p.layers[0].clone();
        layer.ln1_gain = Matrix::filled(1, c.hidden, 1.0);
        layer.ln2_gain = Matrix::filled(1, c.hidden, 1.0);
        let e = Matrix::from_rows(&[
            (0..16).map(|i| i as f64).collect::<Vec<_>>(),
            (0..16).map(|i| libm::sin(i as f64)).collect::<Vec<_>>(),
        ]);
        // hand evaluation: MHA = 0 and FFN = 0, so out = LN(LN(E))
        let ln = |m: &Matrix| {
            let mut out = m.clone();
            for r in 0..m.rows() {
                let row = m.row(r);
                let mean = row.iter().sum::<f64>() / 16.0;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
                for (o, v) in out.row_mut(r).iter_mut().zip(row) {
                    *o = (v - mean) / libm::sqrt(var + 1e-5);
                }
            }
            out
        };
        let expected = ln(&ln(&e));
        let got = encoder_layer(&e, &layer);
        for (a, b) in got.as_slice().iter().zip(expected.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_rows_are_stochastic_and_deterministic() {
        let c = EncoderConfig {
            classes: 20,
            ..small_config()
        };
        let p = EncoderParams::init(&c, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut d = random_table(&mut rng, 12, 10);
        d.rows.push(d.rows[3]);
        let a = forward_associate(&d, &p, &c).unwrap();
        assert_eq!(a.classes(), 20);
        let m = a.matrix();
        for r in 0..m.rows() {
            assert!((m.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert_eq!(m.row(3), m.row(12));
    }

    #[test]
    fn associate_equals_traced_forward() {
        let c = small_config();
        let p = EncoderParams::init(&c, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = random_table(&mut rng, 14, 10);
        let a = forward_associate(&d, &p, &c).unwrap();
        assert_eq!(a.matrix(), &forward_trace(&d, &p, &c).unwrap().probs);
    }

    #[test]
    fn forward_is_permutation_equivariant() {
        let c = small_config();
        let p = EncoderParams::init(&c, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let d = random_table(&mut rng, 9, 10);
        let perm = [8usize, 2, 4, 0, 7, 1, 3, 6, 5];
        let permuted = DetectionTable::new(perm.iter().map(|&i| d.rows[i]).collect());
        let a = forward_associate(&d, &p, &c).unwrap();
        let b = forward_associate(&permuted, &p, &c).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            for (x, y) in b.matrix().row(i).iter().zip(a.matrix().row(src)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_outputs_finite_for_unit_inputs() {
        let c = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for seed in 0..20 {
            let p = EncoderParams::init(&c, seed).unwrap();
            let d = random_table(&mut rng, 15, 10);
            let a = forward_associate(&d, &p, &c).unwrap();
            assert!(a.matrix().is_finite());
        }
    }

    #[test]
    fn layout_roundtrip() {
        let c = small_config();
        let p = EncoderParams::init(&c, 1).unwrap();
        let named: Vec<(String, Matrix)> = p.named_tensors(&c).into_iter().map(|(n, m)| (n, m.clone())).collect();
        let rebuilt = EncoderParams::from_named_tensors(&c, named.clone()).unwrap();
        assert_eq!(rebuilt, p);

        let mut bad = named;
        bad[3].1 = Matrix::zeros(1, 1);
        assert!(matches!(
            EncoderParams::from_named_tensors(&c, bad),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
