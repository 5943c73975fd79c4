//! Transformer aggregation of histology patch embeddings.
//!
//! A patient's slide is represented as an unordered bag of precomputed patch
//! embedding vectors. A pre-norm transformer encoder runs self-attention over
//! [CLS ∥ projected patches] with no positional encoding, pools the final CLS
//! state into a 32-dimensional patient embedding, and maps that to a scalar
//! risk. Training minimizes the Cox loss over per-patient risks with a manual
//! reverse-mode pass; interpretability comes from residual-aware attention
//! rollout over the recorded per-layer attention tensors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cox::cox_partial_likelihood_loss;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::stats::SurvivalRecord;

/// Width of the pooled patient embedding produced by the output projection.
pub const PATIENT_EMBEDDING_DIM: usize = 32;

const LN_EPS: f64 = 1e-5;

/// One histology patch: embedding vector plus optional slide coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub patch_id: String,
    pub vector: Vec<f64>,
    pub slide_coords: Option<(i64, i64)>,
}

/// A patient's unordered set of patch embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBag {
    pub patient_id: String,
    pub patches: Vec<Patch>,
}

impl EmbeddingBag {
    pub fn new(patient_id: impl Into<String>, patches: Vec<Patch>) -> Result<Self> {
        if patches.is_empty() {
            return Err(Error::InvalidInput("embedding bag with no patches".into()));
        }
        let d = patches[0].vector.len();
        if let Some(p) = patches.iter().find(|p| p.vector.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: p.vector.len(),
            });
        }
        let mut seen = std::collections::HashSet::new();
        for p in &patches {
            if !seen.insert(p.patch_id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate patch_id {} in bag",
                    p.patch_id
                )));
            }
        }
        Ok(Self {
            patient_id: patient_id.into(),
            patches,
        })
    }

    pub fn dim(&self) -> usize {
        self.patches[0].vector.len()
    }
}

/// Architecture of the aggregator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub model_dim: usize,
    pub d_in: usize,
}

impl TransformerConfig {
    /// Small configuration for tests and synthetic experiments.
    pub fn desk_scale(d_in: usize) -> Self {
        Self {
            n_layers: 2,
            n_heads: 4,
            model_dim: 32,
            d_in,
        }
    }

    /// Full-size configuration: 12 layers of 8-head self-attention.
    pub fn full_scale(d_in: usize, model_dim: usize) -> Self {
        Self {
            n_layers: 12,
            n_heads: 8,
            model_dim,
            d_in,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.model_dim % self.n_heads != 0 {
            return Err(Error::InvalidInput(format!(
                "model_dim {} not divisible by n_heads {}",
                self.model_dim, self.n_heads
            )));
        }
        if self.n_layers == 0 || self.d_in == 0 {
            return Err(Error::InvalidInput("degenerate transformer config".into()));
        }
        Ok(())
    }
}

/// Weights of one pre-norm encoder layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub ln1_gamma: Vec<f64>,
    pub ln1_beta: Vec<f64>,
    pub wq: Mat,
    pub bq: Vec<f64>,
    pub wk: Mat,
    pub bk: Vec<f64>,
    pub wv: Mat,
    pub bv: Vec<f64>,
    pub wo: Mat,
    pub bo: Vec<f64>,
    pub ln2_gamma: Vec<f64>,
    pub ln2_beta: Vec<f64>,
    pub w_ff1: Mat,
    pub b_ff1: Vec<f64>,
    pub w_ff2: Mat,
    pub b_ff2: Vec<f64>,
}

/// Full aggregator weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerParams {
    pub config: TransformerConfig,
    /// d_in × model_dim input projection.
    pub w_in: Mat,
    pub b_in: Vec<f64>,
    pub cls: Vec<f64>,
    pub layers: Vec<LayerParams>,
    pub lnf_gamma: Vec<f64>,
    pub lnf_beta: Vec<f64>,
    /// model_dim × 32 output projection.
    pub w_out: Mat,
    pub b_out: Vec<f64>,
    pub w_risk: Vec<f64>,
    pub b_risk: f64,
}

/// Post-softmax attention, `layers × heads` of (T+1)×(T+1) row-stochastic
/// matrices; token 0 is CLS, tokens 1.. are the patches in bag order.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub layers: Vec<Vec<Mat>>,
}

/// Per-patch rollout weights: non-negative, summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapWeights {
    pub weights: Vec<f64>,
}

/// One row of a heatmap export: weight joined back to its patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchWeight {
    pub patch_id: String,
    pub weight: f64,
    pub slide_coords: Option<(i64, i64)>,
}

impl HeatmapWeights {
    /// Pair weights with the bag they were computed from.
    pub fn with_bag(&self, bag: &EmbeddingBag) -> Result<Vec<PatchWeight>> {
        if self.weights.len() != bag.patches.len() {
            return Err(Error::DimensionMismatch {
                expected: bag.patches.len(),
                got: self.weights.len(),
            });
        }
        Ok(bag
            .patches
            .iter()
            .zip(&self.weights)
            .map(|(p, &w)| PatchWeight {
                patch_id: p.patch_id.clone(),
                weight: w,
                slide_coords: p.slide_coords,
            })
            .collect())
    }
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654; // √(2/π)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

struct LnCache {
    xhat: Mat,
    inv_sigma: Vec<f64>,
}

fn layer_norm(x: &Mat, gamma: &[f64], beta: &[f64]) -> (Mat, LnCache) {
    let (t, d) = (x.rows(), x.cols());
    let mut out = Mat::zeros(t, d);
    let mut xhat = Mat::zeros(t, d);
    let mut inv_sigma = vec![0.0; t];
    for r in 0..t {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_sigma[r] = inv;
        for c in 0..d {
            let xh = (row[c] - mean) * inv;
            *xhat.at_mut(r, c) = xh;
            *out.at_mut(r, c) = gamma[c] * xh + beta[c];
        }
    }
    (out, LnCache { xhat, inv_sigma })
}

/// Backward through layer norm for the given upstream rows; rows not present
/// in `rows` carry zero gradient.
fn layer_norm_backward(
    dy: &Mat,
    gamma: &[f64],
    cache: &LnCache,
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Mat {
    let (t, d) = (dy.rows(), dy.cols());
    let mut dx = Mat::zeros(t, d);
    for r in 0..t {
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for c in 0..d {
            let g = dy.at(r, c);
            let xh = cache.xhat.at(r, c);
            dgamma[c] += g * xh;
            dbeta[c] += g;
            let dxh = g * gamma[c];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh;
        }
        let inv = cache.inv_sigma[r];
        for c in 0..d {
            let dxh = dy.at(r, c) * gamma[c];
            let xh = cache.xhat.at(r, c);
            *dx.at_mut(r, c) =
                inv * (dxh - sum_dxhat / d as f64 - xh * sum_dxhat_xhat / d as f64);
        }
    }
    dx
}

fn softmax_rows(m: &mut Mat) {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let max = row.iter().cloned().fold(f64::MIN, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Linear layer X·W + b broadcast over rows.
fn linear(x: &Mat, w: &Mat, b: &[f64]) -> Mat {
    let mut out = x.matmul(w);
    for r in 0..out.rows() {
        for (v, bias) in out.row_mut(r).iter_mut().zip(b) {
            *v += bias;
        }
    }
    out
}

fn head_slice(m: &Mat, head: usize, dh: usize) -> Mat {
    Mat::from_fn(m.rows(), dh, |r, c| m.at(r, head * dh + c))
}

struct LayerCache {
    y: Mat,
    ln1: LnCache,
    q: Mat,
    k: Mat,
    v: Mat,
    attn: Vec<Mat>,
    concat: Mat,
    z: Mat,
    ln2: LnCache,
    zpre: Mat,
    h: Mat,
}

struct ForwardPass {
    caches: Vec<LayerCache>,
    lnf: LnCache,
    xf_cls: Vec<f64>,
    embedding: Vec<f64>,
    risk: f64,
}

fn forward_tokens(params: &TransformerParams, patch_vectors: &[&[f64]]) -> ForwardPass {
    let d = params.config.model_dim;
    let nh = params.config.n_heads;
    let dh = d / nh;
    let t = patch_vectors.len() + 1;

    let mut x = Mat::zeros(t, d);
    x.row_mut(0).copy_from_slice(&params.cls);
    for (i, pv) in patch_vectors.iter().enumerate() {
        let proj = params.w_in.transpose().matvec(pv);
        for c in 0..d {
            *x.at_mut(i + 1, c) = proj[c] + params.b_in[c];
        }
    }
    let mut caches = Vec::with_capacity(params.layers.len());

    for layer in &params.layers {
        let (y, ln1) = layer_norm(&x, &layer.ln1_gamma, &layer.ln1_beta);
        let q = linear(&y, &layer.wq, &layer.bq);
        let k = linear(&y, &layer.wk, &layer.bk);
        let v = linear(&y, &layer.wv, &layer.bv);

        let mut concat = Mat::zeros(t, d);
        let mut attn = Vec::with_capacity(nh);
        let scale = 1.0 / (dh as f64).sqrt();
        for h in 0..nh {
            let qh = head_slice(&q, h, dh);
            let kh = head_slice(&k, h, dh);
            let vh = head_slice(&v, h, dh);
            let mut scores = qh.matmul(&kh.transpose());
            for s in scores.data_mut() {
                *s *= scale;
            }
            softmax_rows(&mut scores);
            let oh = scores.matmul(&vh);
            for r in 0..t {
                for c in 0..dh {
                    *concat.at_mut(r, h * dh + c) = oh.at(r, c);
                }
            }
            attn.push(scores);
        }
        let o = linear(&concat, &layer.wo, &layer.bo);
        let mut x_mid = x.clone();
        x_mid.add_scaled(&o, 1.0);

        let (z, ln2) = layer_norm(&x_mid, &layer.ln2_gamma, &layer.ln2_beta);
        let zpre = linear(&z, &layer.w_ff1, &layer.b_ff1);
        let mut hmat = zpre.clone();
        for v in hmat.data_mut() {
            *v = gelu(*v);
        }
        let f = linear(&hmat, &layer.w_ff2, &layer.b_ff2);
        let mut x_next = x_mid.clone();
        x_next.add_scaled(&f, 1.0);

        caches.push(LayerCache {
            y,
            ln1,
            q,
            k,
            v,
            attn,
            concat,
            z,
            ln2,
            zpre,
            h: hmat,
        });
        x = x_next;
    }

    let (xf, lnf) = layer_norm(&x, &params.lnf_gamma, &params.lnf_beta);
    let xf_cls = xf.row(0).to_vec();
    let embedding = {
        let mut e = params.w_out.transpose().matvec(&xf_cls);
        for (v, b) in e.iter_mut().zip(&params.b_out) {
            *v += b;
        }
        e
    };
    let risk = params
        .w_risk
        .iter()
        .zip(&embedding)
        .map(|(w, e)| w * e)
        .sum::<f64>()
        + params.b_risk;

    ForwardPass {
        caches,
        lnf,
        xf_cls,
        embedding,
        risk,
    }
}

/// Aggregate one patient's bag: 32-d embedding, scalar risk, and the full
/// attention trace. Deterministic — the full bag is always used.
pub fn aggregate(
    params: &TransformerParams,
    bag: &EmbeddingBag,
) -> Result<(Vec<f64>, f64, AttentionTrace)> {
    if bag.dim() != params.config.d_in {
        return Err(Error::DimensionMismatch {
            expected: params.config.d_in,
            got: bag.dim(),
        });
    }
    let patch_vectors: Vec<&[f64]> = bag.patches.iter().map(|p| p.vector.as_slice()).collect();
    let pass = forward_tokens(params, &patch_vectors);
    let trace = AttentionTrace {
        layers: pass.caches.iter().map(|c| c.attn.clone()).collect(),
    };
    Ok((pass.embedding, pass.risk, trace))
}

/// Residual-aware attention rollout.
///
/// Per layer the head-averaged attention gets the identity added (the
/// residual path) and rows renormalized; the per-layer matrices are then
/// multiplied in layer order and the CLS row, restricted to patch tokens and
/// renormalized, is the per-patch weight vector. A degenerate all-zero patch
/// mass falls back to uniform weights.
pub fn attention_rollout(trace: &AttentionTrace) -> HeatmapWeights {
    assert!(!trace.layers.is_empty(), "empty attention trace");
    let t = trace.layers[0][0].rows();
    let n_patches = t - 1;

    let mut rollout: Option<Mat> = None;
    for heads in &trace.layers {
        let mut avg = Mat::zeros(t, t);
        for head in heads {
            avg.add_scaled(head, 1.0 / heads.len() as f64);
        }
        for i in 0..t {
            *avg.at_mut(i, i) += 1.0;
        }
        for r in 0..t {
            let row = avg.row_mut(r);
            let sum: f64 = row.iter().sum();
            for v in row {
                *v /= sum;
            }
        }
        rollout = Some(match rollout {
            None => avg,
            Some(prev) => avg.matmul(&prev),
        });
    }

    let rollout = rollout.unwrap();
    let cls_row = rollout.row(0);
    let mass: f64 = cls_row[1..].iter().sum();
    let weights = if mass < 1e-12 {
        vec![1.0 / n_patches as f64; n_patches]
    } else {
        cls_row[1..].iter().map(|w| w / mass).collect()
    };
    HeatmapWeights { weights }
}

// ── Backward pass ───────────────────────────────────────────────────────────

fn zeros_like(params: &TransformerParams) -> TransformerParams {
    let zl = |m: &Mat| Mat::zeros(m.rows(), m.cols());
    let zv = |v: &Vec<f64>| vec![0.0; v.len()];
    TransformerParams {
        config: params.config,
        w_in: zl(&params.w_in),
        b_in: zv(&params.b_in),
        cls: zv(&params.cls),
        layers: params
            .layers
            .iter()
            .map(|l| LayerParams {
                ln1_gamma: zv(&l.ln1_gamma),
                ln1_beta: zv(&l.ln1_beta),
                wq: zl(&l.wq),
                bq: zv(&l.bq),
                wk: zl(&l.wk),
                bk: zv(&l.bk),
                wv: zl(&l.wv),
                bv: zv(&l.bv),
                wo: zl(&l.wo),
                bo: zv(&l.bo),
                ln2_gamma: zv(&l.ln2_gamma),
                ln2_beta: zv(&l.ln2_beta),
                w_ff1: zl(&l.w_ff1),
                b_ff1: zv(&l.b_ff1),
                w_ff2: zl(&l.w_ff2),
                b_ff2: zv(&l.b_ff2),
            })
            .collect(),
        lnf_gamma: zv(&params.lnf_gamma),
        lnf_beta: zv(&params.lnf_beta),
        w_out: zl(&params.w_out),
        b_out: zv(&params.b_out),
        w_risk: zv(&params.w_risk),
        b_risk: 0.0,
    }
}

/// Walk every scalar parameter in a fixed canonical order.
fn for_each_param(params: &mut TransformerParams, f: &mut impl FnMut(&mut f64)) {
    for v in params.w_in.data_mut() {
        f(v);
    }
    for v in &mut params.b_in {
        f(v);
    }
    for v in &mut params.cls {
        f(v);
    }
    for l in &mut params.layers {
        for v in &mut l.ln1_gamma {
            f(v);
        }
        for v in &mut l.ln1_beta {
            f(v);
        }
        for m in [&mut l.wq, &mut l.wk, &mut l.wv, &mut l.wo] {
            for v in m.data_mut() {
                f(v);
            }
        }
        for b in [&mut l.bq, &mut l.bk, &mut l.bv, &mut l.bo] {
            for v in b {
                f(v);
            }
        }
        for v in &mut l.ln2_gamma {
            f(v);
        }
        for v in &mut l.ln2_beta {
            f(v);
        }
        for v in l.w_ff1.data_mut() {
            f(v);
        }
        for v in &mut l.b_ff1 {
            f(v);
        }
        for v in l.w_ff2.data_mut() {
            f(v);
        }
        for v in &mut l.b_ff2 {
            f(v);
        }
    }
    for v in &mut params.lnf_gamma {
        f(v);
    }
    for v in &mut params.lnf_beta {
        f(v);
    }
    for v in params.w_out.data_mut() {
        f(v);
    }
    for v in &mut params.b_out {
        f(v);
    }
    for v in &mut params.w_risk {
        f(v);
    }
    f(&mut params.b_risk);
}

fn flatten(params: &TransformerParams) -> Vec<f64> {
    let mut copy = params.clone();
    let mut out = Vec::new();
    for_each_param(&mut copy, &mut |v| out.push(*v));
    out
}

/// Accumulate one patient's parameter gradients, given dLoss/drisk.
fn backward_tokens(
    params: &TransformerParams,
    patch_vectors: &[&[f64]],
    pass: &ForwardPass,
    upstream: f64,
    grads: &mut TransformerParams,
) {
    let d = params.config.model_dim;
    let nh = params.config.n_heads;
    let dh = d / nh;
    let t = patch_vectors.len() + 1;

    // Risk head.
    for (g, e) in grads.w_risk.iter_mut().zip(&pass.embedding) {
        *g += upstream * e;
    }
    grads.b_risk += upstream;
    let demb: Vec<f64> = params.w_risk.iter().map(|w| upstream * w).collect();

    // Output projection (only the CLS row of Xf feeds it).
    for r in 0..d {
        for c in 0..PATIENT_EMBEDDING_DIM {
            *grads.w_out.at_mut(r, c) += pass.xf_cls[r] * demb[c];
        }
    }
    for (g, de) in grads.b_out.iter_mut().zip(&demb) {
        *g += de;
    }
    let mut dxf = Mat::zeros(t, d);
    for r in 0..d {
        let mut acc = 0.0;
        for c in 0..PATIENT_EMBEDDING_DIM {
            acc += params.w_out.at(r, c) * demb[c];
        }
        *dxf.at_mut(0, r) = acc;
    }

    // Final layer norm.
    let mut dx = layer_norm_backward(
        &dxf,
        &params.lnf_gamma,
        &pass.lnf,
        &mut grads.lnf_gamma,
        &mut grads.lnf_beta,
    );

    // Encoder layers in reverse.
    for li in (0..params.layers.len()).rev() {
        let layer = &params.layers[li];
        let cache = &pass.caches[li];
        let glayer = &mut grads.layers[li];

        // FF block: x_next = x_mid + (gelu(z·W1+b1))·W2 + b2.
        let df = &dx; // gradient wrt F equals gradient wrt x_next
        let mut dh_mat = df.matmul(&layer.w_ff2.transpose());
        // dW2 += Hᵀ·dF, db2 += colsum(dF)
        let w_ff2_grad = cache.h.transpose().matmul(df);
        glayer.w_ff2.add_scaled(&w_ff2_grad, 1.0);
        for r in 0..t {
            for (g, v) in glayer.b_ff2.iter_mut().zip(df.row(r)) {
                *g += v;
            }
        }
        for (dv, z) in dh_mat.data_mut().iter_mut().zip(cache.zpre.data()) {
            *dv *= gelu_grad(*z);
        }
        let dz = dh_mat.matmul(&layer.w_ff1.transpose());
        let w_ff1_grad = cache.z.transpose().matmul(&dh_mat);
        glayer.w_ff1.add_scaled(&w_ff1_grad, 1.0);
        for r in 0..t {
            for (g, v) in glayer.b_ff1.iter_mut().zip(dh_mat.row(r)) {
                *g += v;
            }
        }
        let dx_mid_from_ln = layer_norm_backward(
            &dz,
            &layer.ln2_gamma,
            &cache.ln2,
            &mut glayer.ln2_gamma,
            &mut glayer.ln2_beta,
        );
        let mut dx_mid = dx.clone();
        dx_mid.add_scaled(&dx_mid_from_ln, 1.0);

        // Attention block: x_mid = x_in + (concat heads)·Wo + bo.
        let do_out = &dx_mid;
        let dconcat = do_out.matmul(&layer.wo.transpose());
        let wo_grad = cache.concat.transpose().matmul(do_out);
        glayer.wo.add_scaled(&wo_grad, 1.0);
        for r in 0..t {
            for (g, v) in glayer.bo.iter_mut().zip(do_out.row(r)) {
                *g += v;
            }
        }

        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Mat::zeros(t, d);
        let mut dk = Mat::zeros(t, d);
        let mut dv = Mat::zeros(t, d);
        for h in 0..nh {
            let qh = head_slice(&cache.q, h, dh);
            let kh = head_slice(&cache.k, h, dh);
            let vh = head_slice(&cache.v, h, dh);
            let ah = &cache.attn[h];
            let doh = head_slice(&dconcat, h, dh);

            let mut da = doh.matmul(&vh.transpose());
            let dvh = ah.transpose().matmul(&doh);
            // Softmax backward row-wise: ds = a ⊙ (da − Σ(da ⊙ a)).
            for r in 0..t {
                let dot: f64 = da
                    .row(r)
                    .iter()
                    .zip(ah.row(r))
                    .map(|(x, y)| x * y)
                    .sum();
                for c in 0..t {
                    *da.at_mut(r, c) = ah.at(r, c) * (da.at(r, c) - dot);
                }
            }
            let ds = da;
            let mut dqh = ds.matmul(&kh);
            for v in dqh.data_mut() {
                *v *= scale;
            }
            let mut dkh = ds.transpose().matmul(&qh);
            for v in dkh.data_mut() {
                *v *= scale;
            }
            for r in 0..t {
                for c in 0..dh {
                    *dq.at_mut(r, h * dh + c) += dqh.at(r, c);
                    *dk.at_mut(r, h * dh + c) += dkh.at(r, c);
                    *dv.at_mut(r, h * dh + c) += dvh.at(r, c);
                }
            }
        }

        // Back through the Q/K/V projections onto Y.
        let mut dy = dq.matmul(&layer.wq.transpose());
        dy.add_scaled(&dk.matmul(&layer.wk.transpose()), 1.0);
        dy.add_scaled(&dv.matmul(&layer.wv.transpose()), 1.0);
        let wq_grad = cache.y.transpose().matmul(&dq);
        glayer.wq.add_scaled(&wq_grad, 1.0);
        let wk_grad = cache.y.transpose().matmul(&dk);
        glayer.wk.add_scaled(&wk_grad, 1.0);
        let wv_grad = cache.y.transpose().matmul(&dv);
        glayer.wv.add_scaled(&wv_grad, 1.0);
        for r in 0..t {
            for (g, v) in glayer.bq.iter_mut().zip(dq.row(r)) {
                *g += v;
            }
            for (g, v) in glayer.bk.iter_mut().zip(dk.row(r)) {
                *g += v;
            }
            for (g, v) in glayer.bv.iter_mut().zip(dv.row(r)) {
                *g += v;
            }
        }

        let dx_in_from_ln = layer_norm_backward(
            &dy,
            &layer.ln1_gamma,
            &cache.ln1,
            &mut glayer.ln1_gamma,
            &mut glayer.ln1_beta,
        );
        let mut dx_in = dx_mid;
        dx_in.add_scaled(&dx_in_from_ln, 1.0);
        dx = dx_in;
    }

    // Input projection and CLS token.
    for (g, v) in grads.cls.iter_mut().zip(dx.row(0)) {
        *g += v;
    }
    for (i, pv) in patch_vectors.iter().enumerate() {
        let drow = dx.row(i + 1);
        for (r, &pvr) in pv.iter().enumerate() {
            for (c, &dv) in drow.iter().enumerate() {
                *grads.w_in.at_mut(r, c) += pvr * dv;
            }
        }
        for (g, &dv) in grads.b_in.iter_mut().zip(drow) {
            *g += dv;
        }
    }
}

// ── Training ────────────────────────────────────────────────────────────────

/// Options for [`fit_aggregator`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatorFitConfig {
    pub arch: TransformerConfig,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Bags larger than this are subsampled per training step; inference
    /// always sees the full bag.
    pub max_patches: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl AggregatorFitConfig {
    pub fn new(arch: TransformerConfig) -> Self {
        Self {
            arch,
            epochs: 60,
            learning_rate: 3e-3,
            max_patches: 64,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

/// Random initialization of the aggregator weights (normal, sd 0.02; layer
/// norms at identity).
pub fn init_transformer(config: &TransformerConfig, seed: u64) -> Result<TransformerParams> {
    config.validate()?;
    let d = config.model_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    const SD: f64 = 0.02;
    fn gauss(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen::<f64>();
        sd * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
    let mk = |rng: &mut ChaCha8Rng, r: usize, c: usize| {
        Mat::from_fn(r, c, |_, _| gauss(rng, SD))
    };
    let w_in = mk(&mut rng, config.d_in, d);
    let cls: Vec<f64> = (0..d).map(|_| gauss(&mut rng, SD)).collect();
    let layers: Vec<LayerParams> = (0..config.n_layers)
        .map(|_| LayerParams {
            ln1_gamma: vec![1.0; d],
            ln1_beta: vec![0.0; d],
            wq: mk(&mut rng, d, d),
            bq: vec![0.0; d],
            wk: mk(&mut rng, d, d),
            bk: vec![0.0; d],
            wv: mk(&mut rng, d, d),
            bv: vec![0.0; d],
            wo: mk(&mut rng, d, d),
            bo: vec![0.0; d],
            ln2_gamma: vec![1.0; d],
            ln2_beta: vec![0.0; d],
            w_ff1: mk(&mut rng, d, 2 * d),
            b_ff1: vec![0.0; 2 * d],
            w_ff2: mk(&mut rng, 2 * d, d),
            b_ff2: vec![0.0; d],
        })
        .collect();
    let w_out = mk(&mut rng, d, PATIENT_EMBEDDING_DIM);
    let w_risk: Vec<f64> = (0..PATIENT_EMBEDDING_DIM)
        .map(|_| gauss(&mut rng, SD))
        .collect();
    Ok(TransformerParams {
        config: *config,
        w_in,
        b_in: vec![0.0; d],
        cls,
        layers,
        lnf_gamma: vec![1.0; d],
        lnf_beta: vec![0.0; d],
        w_out,
        b_out: vec![0.0; PATIENT_EMBEDDING_DIM],
        w_risk,
        b_risk: 0.0,
    })
}

/// Train the aggregator on the Cox loss with Adam. Bags above
/// `config.max_patches` are subsampled per epoch from the step seed.
pub fn fit_aggregator(
    bags: &[EmbeddingBag],
    records: &[SurvivalRecord],
    config: &AggregatorFitConfig,
) -> Result<TransformerParams> {
    if bags.len() != records.len() || bags.is_empty() {
        return Err(Error::InvalidInput(format!(
            "fit_aggregator: {} bags for {} records",
            bags.len(),
            records.len()
        )));
    }
    if !records.iter().any(|r| r.event) {
        return Err(Error::NoEvents);
    }
    for bag in bags {
        if bag.dim() != config.arch.d_in {
            return Err(Error::DimensionMismatch {
                expected: config.arch.d_in,
                got: bag.dim(),
            });
        }
    }

    let mut params = init_transformer(&config.arch, config.seed)?;
    let n_params = flatten(&params).len();
    let mut adam_m = vec![0.0; n_params];
    let mut adam_v = vec![0.0; n_params];
    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);

    for epoch in 0..config.epochs {
        // Deterministic per-epoch subsampling of oversized bags.
        let selected: Vec<Vec<usize>> = bags
            .iter()
            .enumerate()
            .map(|(i, bag)| {
                let n = bag.patches.len();
                if n <= config.max_patches {
                    (0..n).collect()
                } else {
                    let mut idx: Vec<usize> = (0..n).collect();
                    let mut rng = ChaCha8Rng::seed_from_u64(
                        config
                            .seed
                            .wrapping_mul(0x9e3779b97f4a7c15)
                            .wrapping_add((epoch as u64) << 20)
                            .wrapping_add(i as u64),
                    );
                    for j in (1..n).rev() {
                        idx.swap(j, rng.gen_range(0..=j));
                    }
                    idx.truncate(config.max_patches);
                    idx
                }
            })
            .collect();

        let passes: Vec<ForwardPass> = bags
            .iter()
            .zip(&selected)
            .map(|(bag, idx)| {
                let vecs: Vec<&[f64]> =
                    idx.iter().map(|&j| bag.patches[j].vector.as_slice()).collect();
                forward_tokens(&params, &vecs)
            })
            .collect();
        let risks: Vec<f64> = passes.iter().map(|p| p.risk).collect();
        let lv = cox_partial_likelihood_loss(&risks, records, true)?;
        if !lv.value.is_finite() {
            return Err(Error::NonFinite("fit_aggregator loss".into()));
        }
        let g_risk = lv.gradient.expect("gradient requested");

        let mut grads = zeros_like(&params);
        for ((bag, idx), (pass, &g)) in bags
            .iter()
            .zip(&selected)
            .zip(passes.iter().zip(&g_risk))
        {
            let vecs: Vec<&[f64]> =
                idx.iter().map(|&j| bag.patches[j].vector.as_slice()).collect();
            backward_tokens(&params, &vecs, pass, g, &mut grads);
        }

        let mut flat_g = flatten(&grads);
        if config.weight_decay > 0.0 {
            let flat_p = flatten(&params);
            for (g, p) in flat_g.iter_mut().zip(&flat_p) {
                *g += config.weight_decay * p;
            }
        }

        let step = epoch as f64 + 1.0;
        let corr1 = 1.0 - beta1.powf(step);
        let corr2 = 1.0 - beta2.powf(step);
        let lr = config.learning_rate;
        let mut i = 0;
        for_each_param(&mut params, &mut |w| {
            let g = flat_g[i];
            adam_m[i] = beta1 * adam_m[i] + (1.0 - beta1) * g;
            adam_v[i] = beta2 * adam_v[i] + (1.0 - beta2) * g * g;
            let mhat = adam_m[i] / corr1;
            let vhat = adam_v[i] / corr2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
            i += 1;
        });
    }

    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::rec;

    fn random_bag(patient: &str, n_patches: usize, d_in: usize, seed: u64) -> EmbeddingBag {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let patches = (0..n_patches)
            .map(|i| Patch {
                patch_id: format!("{patient}_{i}"),
                vector: (0..d_in).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                slide_coords: Some((i as i64 * 224, 0)),
            })
            .collect();
        EmbeddingBag::new(patient, patches).unwrap()
    }

    #[test]
    fn bag_validation() {
        assert!(EmbeddingBag::new("p", vec![]).is_err());
        let p = |id: &str, d: usize| Patch {
            patch_id: id.into(),
            vector: vec![0.0; d],
            slide_coords: None,
        };
        assert!(EmbeddingBag::new("p", vec![p("a", 4), p("b", 5)]).is_err());
        assert!(EmbeddingBag::new("p", vec![p("a", 4), p("a", 4)]).is_err());
        assert!(EmbeddingBag::new("p", vec![p("a", 4), p("b", 4)]).is_ok());
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let cfg = TransformerConfig::desk_scale(8);
        let params = init_transformer(&cfg, 3).unwrap();
        let bag = random_bag("p1", 5, 8, 17);
        let (_, _, trace) = aggregate(&params, &bag).unwrap();
        assert_eq!(trace.layers.len(), 2);
        for heads in &trace.layers {
            assert_eq!(heads.len(), 4);
            for head in heads {
                for r in 0..head.rows() {
                    let sum: f64 = head.row(r).iter().sum();
                    assert!((sum - 1.0).abs() < 1e-6, "row sum {sum}");
                    assert!(head.row(r).iter().all(|&v| v >= 0.0));
                }
            }
        }
    }

    #[test]
    fn single_patch_gets_all_attention_mass() {
        let cfg = TransformerConfig::desk_scale(6);
        let params = init_transformer(&cfg, 5).unwrap();
        let bag = random_bag("p1", 1, 6, 2);
        let (_, _, trace) = aggregate(&params, &bag).unwrap();
        for heads in &trace.layers {
            for head in heads {
                // CLS row over patch tokens, after excluding CLS self-attention.
                let cls_to_patch = head.at(0, 1);
                let renorm = cls_to_patch / (1.0 - head.at(0, 0));
                assert!((renorm - 1.0).abs() < 1e-9);
            }
        }
        let weights = attention_rollout(&trace);
        assert_eq!(weights.weights.len(), 1);
        assert!((weights.weights[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn permutation_leaves_embedding_and_risk_unchanged() {
        let cfg = TransformerConfig::desk_scale(10);
        let params = init_transformer(&cfg, 11).unwrap();
        let bag = random_bag("p1", 7, 10, 23);
        let (emb, risk, trace) = aggregate(&params, &bag).unwrap();

        let perm = [3usize, 0, 6, 1, 5, 2, 4];
        let permuted = EmbeddingBag::new(
            "p1",
            perm.iter().map(|&i| bag.patches[i].clone()).collect(),
        )
        .unwrap();
        let (emb_p, risk_p, trace_p) = aggregate(&params, &permuted).unwrap();

        assert!((risk - risk_p).abs() < 1e-10);
        for (a, b) in emb.iter().zip(&emb_p) {
            assert!((a - b).abs() < 1e-10);
        }

        // Rollout weights permute along with the patches.
        let w = attention_rollout(&trace).weights;
        let w_p = attention_rollout(&trace_p).weights;
        for (slot, &orig) in perm.iter().enumerate() {
            assert!((w_p[slot] - w[orig]).abs() < 1e-10);
        }
    }

    /// Straight-line scalar re-implementation of the whole forward pass.
    fn reference_aggregate(params: &TransformerParams, bag: &EmbeddingBag) -> (Vec<f64>, f64) {
        let d = params.config.model_dim;
        let nh = params.config.n_heads;
        let dh = d / nh;
        let t = bag.patches.len() + 1;

        let gelu_ref = |x: f64| {
            let c = (2.0 / std::f64::consts::PI).sqrt();
            0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
        };
        let ln_ref = |x: &Vec<Vec<f64>>, gamma: &[f64], beta: &[f64]| -> Vec<Vec<f64>> {
            x.iter()
                .map(|row| {
                    let mean = row.iter().sum::<f64>() / d as f64;
                    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
                    row.iter()
                        .enumerate()
                        .map(|(c, v)| gamma[c] * (v - mean) / (var + 1e-5).sqrt() + beta[c])
                        .collect()
                })
                .collect()
        };

        let mut x: Vec<Vec<f64>> = Vec::with_capacity(t);
        x.push(params.cls.clone());
        for p in &bag.patches {
            let mut row = vec![0.0; d];
            for (c, slot) in row.iter_mut().enumerate() {
                let mut acc = params.b_in[c];
                for (r, &v) in p.vector.iter().enumerate() {
                    acc += v * params.w_in.at(r, c);
                }
                *slot = acc;
            }
            x.push(row);
        }

        for layer in &params.layers {
            let y = ln_ref(&x, &layer.ln1_gamma, &layer.ln1_beta);
            let proj = |w: &Mat, b: &[f64]| -> Vec<Vec<f64>> {
                y.iter()
                    .map(|row| {
                        (0..d)
                            .map(|c| {
                                b[c] + row.iter().enumerate().map(|(k, v)| v * w.at(k, c)).sum::<f64>()
                            })
                            .collect()
                    })
                    .collect()
            };
            let q = proj(&layer.wq, &layer.bq);
            let k = proj(&layer.wk, &layer.bk);
            let v = proj(&layer.wv, &layer.bv);

            let mut concat = vec![vec![0.0; d]; t];
            for h in 0..nh {
                for i in 0..t {
                    // scores row i for head h
                    let mut scores = vec![0.0; t];
                    for (j, srow) in scores.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for c in 0..dh {
                            acc += q[i][h * dh + c] * k[j][h * dh + c];
                        }
                        *srow = acc / (dh as f64).sqrt();
                    }
                    let max = scores.iter().cloned().fold(f64::MIN, f64::max);
                    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                    let denom: f64 = exps.iter().sum();
                    for c in 0..dh {
                        let mut acc = 0.0;
                        for j in 0..t {
                            acc += exps[j] / denom * v[j][h * dh + c];
            }
                        concat[i][h * dh + c] = acc;
                    }
                }
            }
            for i in 0..t {
                for c in 0..d {
                    let mut acc = layer.bo[c];
                    for k2 in 0..d {
                        acc += concat[i][k2] * layer.wo.at(k2, c);
                    }
                    x[i][c] += acc;
                }
            }

            let z = ln_ref(&x, &layer.ln2_gamma, &layer.ln2_beta);
            for i in 0..t {
                let mut hidden = vec![0.0; 2 * d];
                for (c, slot) in hidden.iter_mut().enumerate() {
                    let mut acc = layer.b_ff1[c];
                    for k2 in 0..d {
                        acc += z[i][k2] * layer.w_ff1.at(k2, c);
                    }
                    *slot = gelu_ref(acc);
                }
                for c in 0..d {
                    let mut acc = layer.b_ff2[c];
                    for (k2, &hv) in hidden.iter().enumerate() {
                        acc += hv * layer.w_ff2.at(k2, c);
                    }
                    x[i][c] += acc;
                }
            }
        }

        let xf = ln_ref(&x, &params.lnf_gamma, &params.lnf_beta);
        let emb: Vec<f64> = (0..PATIENT_EMBEDDING_DIM)
            .map(|c| {
                params.b_out[c]
                    + xf[0]
                        .iter()
                        .enumerate()
                        .map(|(r, v)| v * params.w_out.at(r, c))
                        .sum::<f64>()
            })
            .collect();
        let risk = params.b_risk
            + params
                .w_risk
                .iter()
                .zip(&emb)
                .map(|(w, e)| w * e)
                .sum::<f64>();
        (emb, risk)
    }

    #[test]
    fn aggregate_matches_straight_line_reimplementation() {
        let cfg = TransformerConfig {
            n_layers: 2,
            n_heads: 4,
            model_dim: 16,
            d_in: 12,
        };
        let params = init_transformer(&cfg, 91).unwrap();
        let bag = random_bag("p1", 3, 12, 37);
        let (emb, risk, _) = aggregate(&params, &bag).unwrap();
        let (emb_ref, risk_ref) = reference_aggregate(&params, &bag);
        assert!((risk - risk_ref).abs() < 1e-10, "{risk} vs {risk_ref}");
        for (a, b) in emb.iter().zip(&emb_ref) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn rollout_identity_attention_is_uniform() {
        let t = 5;
        let eye = Mat::from_fn(t, t, |r, c| if r == c { 1.0 } else { 0.0 });
        let trace = AttentionTrace {
            layers: vec![vec![eye.clone(), eye.clone()], vec![eye.clone()]],
        };
        let w = attention_rollout(&trace).weights;
        assert_eq!(w.len(), 4);
        for v in w {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn rollout_two_layer_hand_example() {
        // Averaged attentions B1, B2; rollout multiplies (B+I)/2 in layer
        // order and reads the CLS row: hand product gives (0.61, 0.39).
        let b1 = Mat::from_vec(
            3,
            3,
            vec![0.2, 0.5, 0.3, 0.1, 0.8, 0.1, 0.3, 0.3, 0.4],
        );
        let b2 = Mat::from_vec(
            3,
            3,
            vec![0.6, 0.2, 0.2, 0.25, 0.5, 0.25, 0.2, 0.3, 0.5],
        );
        let trace = AttentionTrace {
            layers: vec![vec![b1], vec![b2]],
        };
        let w = attention_rollout(&trace).weights;
        assert!((w[0] - 0.61).abs() < 1e-12, "{w:?}");
        assert!((w[1] - 0.39).abs() < 1e-12, "{w:?}");
    }

    #[test]
    fn rollout_weights_are_probability_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..200 {
            let t = rng.gen_range(2..8);
            let n_layers = rng.gen_range(1..4);
            let n_heads = rng.gen_range(1..4);
            let layers: Vec<Vec<Mat>> = (0..n_layers)
                .map(|_| {
                    (0..n_heads)
                        .map(|_| {
                            let mut m =
                                Mat::from_fn(t, t, |_, _| rng.gen_range(0.0..1.0));
                            for r in 0..t {
                                let s: f64 = m.row(r).iter().sum();
                                for v in m.row_mut(r) {
                                    *v /= s;
                                }
                            }
                            m
                        })
                        .collect()
                })
                .collect();
            let w = attention_rollout(&AttentionTrace { layers }).weights;
            let sum: f64 = w.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(w.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn duplicated_patch_keeps_rollout_mass() {
        let mut failures = 0;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d_in = 6;
            let cfg = TransformerConfig {
                n_layers: 2,
                n_heads: 2,
                model_dim: 8,
                d_in,
            };
            let params = init_transformer(&cfg, seed.wrapping_add(1000)).unwrap();
            let n = rng.gen_range(2..6);
            let bag = random_bag("p", n, d_in, seed.wrapping_add(5000));
            let (_, _, trace) = aggregate(&params, &bag).unwrap();
            let before = attention_rollout(&trace).weights;

            let dup = rng.gen_range(0..n);
            let mut patches = bag.patches.clone();
            let mut copy = patches[dup].clone();
            copy.patch_id = format!("{}_copy", copy.patch_id);
            patches.push(copy);
            let bag2 = EmbeddingBag::new("p", patches).unwrap();
            let (_, _, trace2) = aggregate(&params, &bag2).unwrap();
            let after = attention_rollout(&trace2).weights;

            let combined = after[dup] + after[n];
            if combined < before[dup] - 1e-9 {
                failures += 1;
            }
        }
        assert_eq!(failures, 0, "{failures} of 100 configs lost rollout mass");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = TransformerConfig {
            n_layers: 2,
            n_heads: 4,
            model_dim: 8,
            d_in: 5,
        };
        let params = init_transformer(&cfg, 7).unwrap();
        let bags: Vec<EmbeddingBag> = (0..3)
            .map(|i| random_bag(&format!("p{i}"), 2 + i, 5, 40 + i as u64))
            .collect();
        let records = vec![rec("p0", 2.0, true), rec("p1", 4.5, false), rec("p2", 6.0, true)];

        let loss_of = |p: &TransformerParams| -> f64 {
            let risks: Vec<f64> = bags
                .iter()
                .map(|b| {
                    let vecs: Vec<&[f64]> =
                        b.patches.iter().map(|pt| pt.vector.as_slice()).collect();
                    forward_tokens(p, &vecs).risk
                })
                .collect();
            cox_partial_likelihood_loss(&risks, &records, false)
                .unwrap()
                .value
        };

        let mut grads = zeros_like(&params);
        {
            let risks: Vec<f64> = bags
                .iter()
                .map(|b| {
                    let vecs: Vec<&[f64]> =
                        b.patches.iter().map(|pt| pt.vector.as_slice()).collect();
                    forward_tokens(&params, &vecs).risk
                })
                .collect();
            let lv = cox_partial_likelihood_loss(&risks, &records, true).unwrap();
            for (bag, &g) in bags.iter().zip(lv.gradient.as_ref().unwrap()) {
                let vecs: Vec<&[f64]> =
                    bag.patches.iter().map(|pt| pt.vector.as_slice()).collect();
                let pass = forward_tokens(&params, &vecs);
                backward_tokens(&params, &vecs, &pass, g, &mut grads);
            }
        }

        let flat_g = flatten(&grads);
        let flat_p = flatten(&params);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let eps = 1e-5;
        // Spot-check a random subset of coordinates plus the largest ones.
        let mut coords: Vec<usize> = (0..60).map(|_| rng.gen_range(0..flat_p.len())).collect();
        let mut by_mag: Vec<usize> = (0..flat_g.len()).collect();
        by_mag.sort_by(|&a, &b| flat_g[b].abs().partial_cmp(&flat_g[a].abs()).unwrap());
        coords.extend(&by_mag[..20]);

        for &ci in &coords {
            let bump = |delta: f64| -> f64 {
                let mut p2 = params.clone();
                let mut i = 0;
                for_each_param(&mut p2, &mut |w| {
                    if i == ci {
                        *w += delta;
                    }
                    i += 1;
                });
                loss_of(&p2)
            };
            let fd = (bump(eps) - bump(-eps)) / (2.0 * eps);
            let denom = fd.abs().max(1e-7);
            assert!(
                (flat_g[ci] - fd).abs() / denom < 1e-3,
                "coord {ci}: analytic {} vs fd {fd}",
                flat_g[ci]
            );
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let cfg = TransformerConfig::desk_scale(6);
        let bags: Vec<EmbeddingBag> = (0..4)
            .map(|i| random_bag(&format!("p{i}"), 3, 6, i as u64))
            .collect();
        let records = vec![
            rec("p0", 1.0, true),
            rec("p1", 2.0, false),
            rec("p2", 3.0, true),
            rec("p3", 4.0, false),
        ];
        let mut fit_cfg = AggregatorFitConfig::new(cfg);
        fit_cfg.epochs = 0;
        fit_cfg.seed = 123;
        let fitted = fit_aggregator(&bags, &records, &fit_cfg).unwrap();
        let init = init_transformer(&cfg, 123).unwrap();
        assert_eq!(fitted, init);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let cfg = TransformerConfig::desk_scale(8);
        let params = init_transformer(&cfg, 0).unwrap();
        let bag = random_bag("p1", 2, 9, 1);
        assert!(matches!(
            aggregate(&params, &bag),
            Err(Error::DimensionMismatch { expected: 8, got: 9 })
        ));
    }
}
