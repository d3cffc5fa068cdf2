//! A small decoder-only transformer in plain `f64`, with hand-derived
//! backpropagation.
//!
//! Architecture (fixed shape, configurable sizes): learned token and
//! positional embeddings; `layers` pre-norm blocks of
//! `x += Attn(LN₁(x)); x += FF(LN₂(x))` with multi-head causal attention
//! (no projection biases) and a GeLU (tanh form) feed-forward; a final
//! layer norm; an untied unembedding. Sequences are exactly
//! [`SEQ_LEN`] = 4 tokens and only the final position is decoded, so the
//! final norm and unembedding run on the last position alone — the
//! `unembed_inputs` that come back from [`Model::forward`] are precisely
//! the activation matrix the alignment analysis consumes.
//!
//! All reductions run in a fixed order; identical params and inputs give
//! bit-identical outputs and gradients. The backward pass is verified
//! against central finite differences in the tests.

use super::GrokError;
use crate::matrix::{matmul_slices, matmul_transa_slices, matmul_transb_slices, DenseMatrix};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub use super::tasks::SEQ_LEN;

/// Layer-norm variance floor.
pub const LN_EPSILON: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_A: f64 = 0.044_715;

/// GeLU (tanh form) and the inner tanh, which the derivative reuses.
fn gelu_with_tanh(x: f64) -> (f64, f64) {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    (0.5 * x * (1.0 + t), t)
}

fn gelu_prime_from(x: f64, t: f64) -> f64 {
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

// ───────────────────────────── architecture ────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arch {
    pub vocab: usize,
    pub embed: usize,
    pub ff: usize,
    pub heads: usize,
    pub layers: usize,
}

impl Arch {
    pub fn validate(&self) -> Result<(), GrokError> {
        if self.vocab == 0 || self.embed == 0 || self.ff == 0 || self.heads == 0
            || self.layers == 0
        {
            return Err(GrokError::InvalidConfig {
                detail: "all architecture dimensions must be positive".into(),
            });
        }
        if self.embed % self.heads != 0 {
            return Err(GrokError::InvalidConfig {
                detail: format!(
                    "embed dim {} must be divisible by {} heads",
                    self.embed, self.heads
                ),
            });
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed / self.heads
    }
}

// ───────────────────────────── parameters ──────────────────────────

/// One transformer block's parameters. Projection matrices are stored
/// out×in and applied as `y = x · Wᵀ`.
#[derive(Debug, Clone)]
pub struct BlockParams {
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub wq: DenseMatrix,
    pub wk: DenseMatrix,
    pub wv: DenseMatrix,
    pub wo: DenseMatrix,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
    /// ff×embed.
    pub w1: DenseMatrix,
    /// embed×ff.
    pub w2: DenseMatrix,
}

/// Every learned tensor of the model. The same structure serves as the
/// parameter set, the gradient accumulator, and each Adam moment buffer.
#[derive(Debug, Clone)]
pub struct ParamSet {
    /// vocab×embed.
    pub tok: DenseMatrix,
    /// SEQ_LEN×embed.
    pub pos: DenseMatrix,
    pub blocks: Vec<BlockParams>,
    pub fin_gain: Vec<f64>,
    pub fin_bias: Vec<f64>,
    /// vocab×embed, untied from `tok`.
    pub unembed: DenseMatrix,
}

impl ParamSet {
    /// All-zero parameter set for an architecture (gradients, moments).
    pub fn zeros(arch: &Arch) -> ParamSet {
        let d = arch.embed;
        let block = || BlockParams {
            ln1_gain: vec![0.0; d],
            ln1_bias: vec![0.0; d],
            wq: DenseMatrix::zeros(d, d),
            wk: DenseMatrix::zeros(d, d),
            wv: DenseMatrix::zeros(d, d),
            wo: DenseMatrix::zeros(d, d),
            ln2_gain: vec![0.0; d],
            ln2_bias: vec![0.0; d],
            w1: DenseMatrix::zeros(arch.ff, d),
            w2: DenseMatrix::zeros(d, arch.ff),
        };
        ParamSet {
            tok: DenseMatrix::zeros(arch.vocab, d),
            pos: DenseMatrix::zeros(SEQ_LEN, d),
            blocks: (0..arch.layers).map(|_| block()).collect(),
            fin_gain: vec![0.0; d],
            fin_bias: vec![0.0; d],
            unembed: DenseMatrix::zeros(arch.vocab, d),
        }
    }

    /// Named views of every tensor, in a fixed canonical order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("tok_embed".into(), self.tok.data()),
            ("pos_embed".into(), self.pos.data()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.ln1.gain"), &b.ln1_gain));
            out.push((format!("block{i}.ln1.bias"), &b.ln1_bias));
            out.push((format!("block{i}.wq"), b.wq.data()));
            out.push((format!("block{i}.wk"), b.wk.data()));
            out.push((format!("block{i}.wv"), b.wv.data()));
            out.push((format!("block{i}.wo"), b.wo.data()));
            out.push((format!("block{i}.ln2.gain"), &b.ln2_gain));
            out.push((format!("block{i}.ln2.bias"), &b.ln2_bias));
            out.push((format!("block{i}.w1"), b.w1.data()));
            out.push((format!("block{i}.w2"), b.w2.data()));
        }
        out.push(("final_ln.gain".into(), &self.fin_gain));
        out.push(("final_ln.bias".into(), &self.fin_bias));
        out.push(("unembed".into(), self.unembed.data()));
        out
    }

    /// Mutable twin of [`ParamSet::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = vec![
            ("tok_embed".into(), self.tok.data_mut()),
            ("pos_embed".into(), self.pos.data_mut()),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("block{i}.ln1.gain"), b.ln1_gain.as_mut_slice()));
            out.push((format!("block{i}.ln1.bias"), b.ln1_bias.as_mut_slice()));
            out.push((format!("block{i}.wq"), b.wq.data_mut()));
            out.push((format!("block{i}.wk"), b.wk.data_mut()));
            out.push((format!("block{i}.wv"), b.wv.data_mut()));
            out.push((format!("block{i}.wo"), b.wo.data_mut()));
            out.push((format!("block{i}.ln2.gain"), b.ln2_gain.as_mut_slice()));
            out.push((format!("block{i}.ln2.bias"), b.ln2_bias.as_mut_slice()));
            out.push((format!("block{i}.w1"), b.w1.data_mut()));
            out.push((format!("block{i}.w2"), b.w2.data_mut()));
        }
        out.push(("final_ln.gain".into(), self.fin_gain.as_mut_slice()));
        out.push(("final_ln.bias".into(), self.fin_bias.as_mut_slice()));
        out.push(("unembed".into(), self.unembed.data_mut()));
        out
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            for v in t {
                *v *= factor;
            }
        }
    }

    pub fn add_assign(&mut self, other: &ParamSet) {
        let others = other.tensors();
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(others) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
}

// ───────────────────────────── the model ───────────────────────────

#[derive(Debug, Clone)]
pub struct Model {
    pub arch: Arch,
    pub params: ParamSet,
}

impl Model {
    /// Uniform ±1/√fan_in initialization on every weight matrix; layer-norm
    /// gains start at 1 and biases at 0.
    pub fn init(arch: Arch, rng: &mut ChaCha8Rng) -> Result<Model, GrokError> {
        arch.validate()?;
        let d = arch.embed;
        let mut fill = |m: &mut DenseMatrix, fan_in: usize| {
            let limit = 1.0 / (fan_in as f64).sqrt();
            for v in m.data_mut() {
                *v = rng.gen_range(-limit..limit);
            }
        };
        let mut params = ParamSet::zeros(&arch);
        fill(&mut params.tok, d);
        fill(&mut params.pos, d);
        for b in &mut params.blocks {
            fill(&mut b.wq, d);
            fill(&mut b.wk, d);
            fill(&mut b.wv, d);
            fill(&mut b.wo, d);
            fill(&mut b.w1, d);
            fill(&mut b.w2, arch.ff);
            b.ln1_gain.fill(1.0);
            b.ln2_gain.fill(1.0);
        }
        params.fin_gain.fill(1.0);
        fill(&mut params.unembed, d);
        Ok(Model { arch, params })
    }

    fn check_tokens(&self, tokens: &[[u32; SEQ_LEN]]) -> Result<(), GrokError> {
        if tokens.is_empty() {
            return Err(GrokError::EmptyBatch);
        }
        for seq in tokens {
            for &t in seq {
                if t as usize >= self.arch.vocab {
                    return Err(GrokError::TokenOutOfRange {
                        token: t,
                        vocab: self.arch.vocab,
                    });
                }
            }
        }
        Ok(())
    }

    /// Full forward pass; returns the final-position logits (batch×vocab)
    /// and the unembedding inputs (batch×embed).
    pub fn forward(&self, tokens: &[[u32; SEQ_LEN]]) -> Result<ForwardOutput, GrokError> {
        let cache = self.forward_cached(tokens)?;
        Ok(ForwardOutput { logits: cache.logits, unembed_inputs: cache.yf })
    }

    fn forward_cached(&self, tokens: &[[u32; SEQ_LEN]]) -> Result<ForwardCache, GrokError> {
        self.check_tokens(tokens)?;
        let arch = &self.arch;
        let (b, t, d) = (tokens.len(), SEQ_LEN, arch.embed);
        let rows = b * t;

        // Embedding sum: x[bt] = tok[token] + pos[t].
        let mut x = DenseMatrix::zeros(rows, d);
        for (bi, seq) in tokens.iter().enumerate() {
            for (ti, &tok) in seq.iter().enumerate() {
                let row = x.row_mut(bi * t + ti);
                let e = self.params.tok.row(tok as usize);
                let p = self.params.pos.row(ti);
                for j in 0..d {
                    row[j] = e[j] + p[j];
                }
            }
        }

        let mut blocks = Vec::with_capacity(arch.layers);
        for bp in &self.params.blocks {
            let bc = block_forward(arch, bp, &mut x, b);
            blocks.push(bc);
        }

        // Only the last position is decoded: gather, final-norm, unembed.
        let mut xf = DenseMatrix::zeros(b, d);
        for bi in 0..b {
            xf.row_mut(bi).copy_from_slice(x.row(bi * t + t - 1));
        }
        let (yf, xhat_f, rstd_f) =
            layer_norm(&xf, &self.params.fin_gain, &self.params.fin_bias);
        let mut logits = DenseMatrix::zeros(b, arch.vocab);
        matmul_transb_slices(
            yf.data(),
            self.params.unembed.data(),
            b,
            d,
            arch.vocab,
            logits.data_mut(),
        );

        Ok(ForwardCache { x, blocks, xhat_f, rstd_f, yf, logits, batch: b })
    }

    /// Mean cross-entropy at the final position plus gradients for every
    /// parameter. Reductions are fixed-order, so the result is
    /// bit-deterministic for identical inputs.
    pub fn loss_and_gradients(
        &self,
        tokens: &[[u32; SEQ_LEN]],
        targets: &[u32],
    ) -> Result<(f64, ParamSet), GrokError> {
        let (loss_sum, grads) = self.loss_and_gradients_unscaled(tokens, targets)?;
        let mut grads = grads;
        let inv = 1.0 / tokens.len() as f64;
        grads.scale(inv);
        Ok((loss_sum * inv, grads))
    }

    /// Summed (not averaged) loss and gradients — the chunked-accumulation
    /// building block: sums over chunks add up exactly to the sum over the
    /// whole batch, and one final 1/N scale yields the mean.
    pub(crate) fn loss_and_gradients_unscaled(
        &self,
        tokens: &[[u32; SEQ_LEN]],
        targets: &[u32],
    ) -> Result<(f64, ParamSet), GrokError> {
        assert_eq!(tokens.len(), targets.len(), "one target per sequence");
        for &c in targets {
            if c as usize >= self.arch.vocab {
                return Err(GrokError::TokenOutOfRange { token: c, vocab: self.arch.vocab });
            }
        }
        let cache = self.forward_cached(tokens)?;
        let arch = &self.arch;
        let (b, t, d) = (cache.batch, SEQ_LEN, arch.embed);
        let rows = b * t;
        let mut grads = ParamSet::zeros(arch);

        // Softmax cross-entropy at the final position. dlogits = p − 1target
        // per row (unscaled); loss_sum = Σ −ln p[target].
        let mut dlogits = cache.logits.clone();
        let mut loss_sum = 0.0;
        for bi in 0..b {
            let row = dlogits.row_mut(bi);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                denom += *v;
            }
            let target = targets[bi] as usize;
            loss_sum += denom.ln() - row[target].ln();
            let inv = 1.0 / denom;
            for v in row.iter_mut() {
                *v *= inv;
            }
            row[target] -= 1.0;
        }

        // Unembedding: logits = yf·Uᵀ.
        matmul_transa_slices(
            dlogits.data(),
            cache.yf.data(),
            b,
            arch.vocab,
            d,
            grads.unembed.data_mut(),
        );
        let mut dyf = DenseMatrix::zeros(b, d);
        matmul_slices(dlogits.data(), self.params.unembed.data(), b, arch.vocab, d, dyf.data_mut());

        // Final layer norm, then scatter into the last position of the
        // residual stream.
        let dxf = layer_norm_backward(
            &dyf,
            &cache.xhat_f,
            &cache.rstd_f,
            &self.params.fin_gain,
            &mut grads.fin_gain,
            &mut grads.fin_bias,
        );
        let mut dx = DenseMatrix::zeros(rows, d);
        for bi in 0..b {
            dx.row_mut(bi * t + t - 1).copy_from_slice(dxf.row(bi));
        }

        // Blocks in reverse.
        for ((bp, bc), gb) in self
            .params
            .blocks
            .iter()
            .zip(&cache.blocks)
            .zip(&mut grads.blocks)
            .rev()
        {
            block_backward_at(arch, bp, bc, gb, &mut dx, b);
        }

        // Embedding scatter.
        for (bi, seq) in tokens.iter().enumerate() {
            for (ti, &tok) in seq.iter().enumerate() {
                let src = dx.row(bi * t + ti);
                let dst_tok = grads.tok.row_mut(tok as usize);
                for j in 0..d {
                    dst_tok[j] += src[j];
                }
                let dst_pos = grads.pos.row_mut(ti);
                for j in 0..d {
                    dst_pos[j] += src[j];
                }
            }
        }

        Ok((loss_sum, grads))
    }
}

/// Final-position logits and the matching unembedding inputs.
pub struct ForwardOutput {
    pub logits: DenseMatrix,
    pub unembed_inputs: DenseMatrix,
}

/// Index of the maximum logit per row (first occurrence on ties).
pub fn argmax_rows(logits: &DenseMatrix) -> Vec<u32> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best as u32
        })
        .collect()
}

// ───────────────────────────── forward pieces ──────────────────────

struct BlockCache {
    xhat1: DenseMatrix,
    rstd1: Vec<f64>,
    y1: DenseMatrix,
    q: DenseMatrix,
    k: DenseMatrix,
    v: DenseMatrix,
    /// Softmax probabilities, `[(b·H + h)·T + t1]·T + t2`, zero above the
    /// diagonal.
    att: Vec<f64>,
    z: DenseMatrix,
    xhat2: DenseMatrix,
    rstd2: Vec<f64>,
    y2: DenseMatrix,
    /// Pre-GeLU feed-forward activations.
    h1: DenseMatrix,
    /// The GeLU inner tanh at `h1`, reused by the derivative.
    h1_tanh: DenseMatrix,
    g: DenseMatrix,
}

struct ForwardCache {
    #[allow(dead_code)]
    x: DenseMatrix,
    blocks: Vec<BlockCache>,
    xhat_f: DenseMatrix,
    rstd_f: Vec<f64>,
    /// Final-norm outputs at the last position — the unembedding inputs.
    yf: DenseMatrix,
    logits: DenseMatrix,
    batch: usize,
}

/// Row-wise layer norm; returns (out, x̂, 1/std).
fn layer_norm(input: &DenseMatrix, gain: &[f64], bias: &[f64]) -> (DenseMatrix, DenseMatrix, Vec<f64>) {
    let (rows, d) = input.shape();
    let mut out = DenseMatrix::zeros(rows, d);
    let mut xhat = DenseMatrix::zeros(rows, d);
    let mut rstd = vec![0.0; rows];
    let inv_d = 1.0 / d as f64;
    for i in 0..rows {
        let row = input.row(i);
        let mean = row.iter().sum::<f64>() * inv_d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() * inv_d;
        let r = 1.0 / (var + LN_EPSILON).sqrt();
        rstd[i] = r;
        let xh = xhat.row_mut(i);
        for j in 0..d {
            xh[j] = (row[j] - mean) * r;
        }
        let o = out.row_mut(i);
        let xh = xhat.row(i);
        for j in 0..d {
            o[j] = gain[j] * xh[j] + bias[j];
        }
    }
    (out, xhat, rstd)
}

/// Row-wise layer-norm backward; accumulates gain/bias gradients and
/// returns dx.
fn layer_norm_backward(
    dy: &DenseMatrix,
    xhat: &DenseMatrix,
    rstd: &[f64],
    gain: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> DenseMatrix {
    let (rows, d) = dy.shape();
    let mut dx = DenseMatrix::zeros(rows, d);
    let inv_d = 1.0 / d as f64;
    for i in 0..rows {
        let dy_row = dy.row(i);
        let xh = xhat.row(i);
        for j in 0..d {
            dgain[j] += dy_row[j] * xh[j];
            dbias[j] += dy_row[j];
        }
        // dx̂ = dy⊙γ; dx = rstd·(dx̂ − mean(dx̂) − x̂·mean(dx̂⊙x̂)).
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for j in 0..d {
            let dxh = dy_row[j] * gain[j];
            m1 += dxh;
            m2 += dxh * xh[j];
        }
        m1 *= inv_d;
        m2 *= inv_d;
        let out = dx.row_mut(i);
        for j in 0..d {
            let dxh = dy_row[j] * gain[j];
            out[j] = rstd[i] * (dxh - m1 - xh[j] * m2);
        }
    }
    dx
}

/// One block forward; mutates `x` in place (residual stream) and returns
/// the caches backward needs.
fn block_forward(arch: &Arch, bp: &BlockParams, x: &mut DenseMatrix, batch: usize) -> BlockCache {
    let (rows, d) = x.shape();
    let (t, heads, dh) = (SEQ_LEN, arch.heads, arch.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();

    let (y1, xhat1, rstd1) = layer_norm(x, &bp.ln1_gain, &bp.ln1_bias);
    let mut q = DenseMatrix::zeros(rows, d);
    let mut k = DenseMatrix::zeros(rows, d);
    let mut v = DenseMatrix::zeros(rows, d);
    matmul_transb_slices(y1.data(), bp.wq.data(), rows, d, d, q.data_mut());
    matmul_transb_slices(y1.data(), bp.wk.data(), rows, d, d, k.data_mut());
    matmul_transb_slices(y1.data(), bp.wv.data(), rows, d, d, v.data_mut());

    let mut att = vec![0.0; batch * heads * t * t];
    let mut z = DenseMatrix::zeros(rows, d);
    for bi in 0..batch {
        let base = bi * t;
        for h in 0..heads {
            let hd = h * dh;
            for t1 in 0..t {
                let a_base = ((bi * heads + h) * t + t1) * t;
                let q_row = &q.row(base + t1)[hd..hd + dh];
                // Causal scores, stable softmax over t2 ≤ t1.
                let mut scores = [0.0f64; SEQ_LEN];
                let mut max = f64::NEG_INFINITY;
                for t2 in 0..=t1 {
                    let k_row = &k.row(base + t2)[hd..hd + dh];
                    let mut s = 0.0;
                    for j in 0..dh {
                        s += q_row[j] * k_row[j];
                    }
                    s *= scale;
                    scores[t2] = s;
                    if s > max {
                        max = s;
                    }
                }
                let mut denom = 0.0;
                for t2 in 0..=t1 {
                    scores[t2] = (scores[t2] - max).exp();
                    denom += scores[t2];
                }
                let inv = 1.0 / denom;
                for t2 in 0..=t1 {
                    att[a_base + t2] = scores[t2] * inv;
                }
                // Weighted value sum.
                let row_range = base + t1;
                for t2 in 0..=t1 {
                    let a = att[a_base + t2];
                    let v_row = &v.row(base + t2)[hd..hd + dh];
                    let z_row = &mut z.row_mut(row_range)[hd..hd + dh];
                    for j in 0..dh {
                        z_row[j] += a * v_row[j];
                    }
                }
            }
        }
    }

    let mut attn_out = DenseMatrix::zeros(rows, d);
    matmul_transb_slices(z.data(), bp.wo.data(), rows, d, d, attn_out.data_mut());
    for (xv, av) in x.data_mut().iter_mut().zip(attn_out.data()) {
        *xv += av;
    }

    let (y2, xhat2, rstd2) = layer_norm(x, &bp.ln2_gain, &bp.ln2_bias);
    let ffd = arch.ff;
    let mut h1 = DenseMatrix::zeros(rows, ffd);
    matmul_transb_slices(y2.data(), bp.w1.data(), rows, d, ffd, h1.data_mut());
    let mut g = DenseMatrix::zeros(rows, ffd);
    let mut h1_tanh = DenseMatrix::zeros(rows, ffd);
    for ((gv, tv), hv) in g.data_mut().iter_mut().zip(h1_tanh.data_mut()).zip(h1.data()) {
        let (gelu, tanh) = gelu_with_tanh(*hv);
        *gv = gelu;
        *tv = tanh;
    }
    let mut ff_out = DenseMatrix::zeros(rows, d);
    matmul_transb_slices(g.data(), bp.w2.data(), rows, ffd, d, ff_out.data_mut());
    for (xv, fv) in x.data_mut().iter_mut().zip(ff_out.data()) {
        *xv += fv;
    }

    BlockCache { xhat1, rstd1, y1, q, k, v, att, z, xhat2, rstd2, y2, h1, h1_tanh, g }
}

/// One block backward (see forward for the layout). `dx` holds ∂L/∂x_out
/// on entry and ∂L/∂x_in on exit; parameter gradients accumulate into `gb`.
fn block_backward_at(
    arch: &Arch,
    bp: &BlockParams,
    bc: &BlockCache,
    gb: &mut BlockParams,
    dx: &mut DenseMatrix,
    batch: usize,
) {
    let (rows, d) = dx.shape();
    let (t, heads, dh) = (SEQ_LEN, arch.heads, arch.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();
    let ffd = arch.ff;

    // ── feed-forward path: x_out = x_mid + W₂·gelu(W₁·LN₂(x_mid)) ──
    // dx is both the residual gradient and d(ff_out).
    let mut dg = DenseMatrix::zeros(rows, ffd);
    matmul_slices(dx.data(), bp.w2.data(), rows, d, ffd, dg.data_mut());
    matmul_transa_slices(dx.data(), bc.g.data(), rows, d, ffd, gb.w2.data_mut());
    let mut dh1 = dg;
    for ((dv, hv), tv) in dh1.data_mut().iter_mut().zip(bc.h1.data()).zip(bc.h1_tanh.data()) {
        *dv *= gelu_prime_from(*hv, *tv);
    }
    matmul_transa_slices(dh1.data(), bc.y2.data(), rows, ffd, d, gb.w1.data_mut());
    let mut dy2 = DenseMatrix::zeros(rows, d);
    matmul_slices(dh1.data(), bp.w1.data(), rows, ffd, d, dy2.data_mut());
    let dmid = layer_norm_backward(
        &dy2,
        &bc.xhat2,
        &bc.rstd2,
        &bp.ln2_gain,
        &mut gb.ln2_gain,
        &mut gb.ln2_bias,
    );
    for (xv, mv) in dx.data_mut().iter_mut().zip(dmid.data()) {
        *xv += mv;
    }

    // ── attention path: x_mid = x_in + Wo·z ──
    matmul_transa_slices(dx.data(), bc.z.data(), rows, d, d, gb.wo.data_mut());
    let mut dz = DenseMatrix::zeros(rows, d);
    matmul_slices(dx.data(), bp.wo.data(), rows, d, d, dz.data_mut());

    let mut dq = DenseMatrix::zeros(rows, d);
    let mut dk = DenseMatrix::zeros(rows, d);
    let mut dv = DenseMatrix::zeros(rows, d);
    for bi in 0..batch {
        let base = bi * t;
        for h in 0..heads {
            let hd = h * dh;
            for t1 in 0..t {
                let a_base = ((bi * heads + h) * t + t1) * t;
                let dz_row = &dz.row(base + t1)[hd..hd + dh];
                // da[t2] = dz·v[t2]; dv[t2] += a·dz.
                let mut da = [0.0f64; SEQ_LEN];
                for t2 in 0..=t1 {
                    let a = bc.att[a_base + t2];
                    let v_row = &bc.v.row(base + t2)[hd..hd + dh];
                    let mut acc = 0.0;
                    for j in 0..dh {
                        acc += dz_row[j] * v_row[j];
                    }
                    da[t2] = acc;
                    let dv_row = &mut dv.row_mut(base + t2)[hd..hd + dh];
                    for j in 0..dh {
                        dv_row[j] += a * dz_row[j];
                    }
                }
                // Softmax backward: ds = a⊙(da − Σ a·da), then the 1/√dh
                // score scale.
                let mut dot = 0.0;
                for t2 in 0..=t1 {
                    dot += bc.att[a_base + t2] * da[t2];
                }
                for t2 in 0..=t1 {
                    let ds = bc.att[a_base + t2] * (da[t2] - dot) * scale;
                    let k_row = &bc.k.row(base + t2)[hd..hd + dh];
                    let q_row = &bc.q.row(base + t1)[hd..hd + dh];
                    let dq_row = &mut dq.row_mut(base + t1)[hd..hd + dh];
                    for j in 0..dh {
                        dq_row[j] += ds * k_row[j];
                    }
                    let dk_row = &mut dk.row_mut(base + t2)[hd..hd + dh];
                    for j in 0..dh {
                        dk_row[j] += ds * q_row[j];
                    }
                }
            }
        }
    }

    // Projections back to the LN₁ output.
    matmul_transa_slices(dq.data(), bc.y1.data(), rows, d, d, gb.wq.data_mut());
    matmul_transa_slices(dk.data(), bc.y1.data(), rows, d, d, gb.wk.data_mut());
    matmul_transa_slices(dv.data(), bc.y1.data(), rows, d, d, gb.wv.data_mut());
    let mut dy1 = DenseMatrix::zeros(rows, d);
    matmul_slices(dq.data(), bp.wq.data(), rows, d, d, dy1.data_mut());
    let mut tmp = DenseMatrix::zeros(rows, d);
    matmul_slices(dk.data(), bp.wk.data(), rows, d, d, tmp.data_mut());
    for (av, bv) in dy1.data_mut().iter_mut().zip(tmp.data()) {
        *av += bv;
    }
    matmul_slices(dv.data(), bp.wv.data(), rows, d, d, tmp.data_mut());
    for (av, bv) in dy1.data_mut().iter_mut().zip(tmp.data()) {
        *av += bv;
    }

    let din = layer_norm_backward(
        &dy1,
        &bc.xhat1,
        &bc.rstd1,
        &bp.ln1_gain,
        &mut gb.ln1_gain,
        &mut gb.ln1_bias,
    );
    for (xv, iv) in dx.data_mut().iter_mut().zip(din.data()) {
        *xv += iv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_arch() -> Arch {
        Arch { vocab: 5, embed: 8, ff: 16, heads: 2, layers: 2 }
    }

    fn tiny_model(seed: u64) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Model::init(tiny_arch(), &mut rng).unwrap()
    }

    #[test]
    fn logits_have_batch_by_vocab_shape_and_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let arch = Arch { vocab: 99, embed: 16, ff: 32, heads: 4, layers: 2 };
        let model = Model::init(arch, &mut rng).unwrap();
        let tokens = vec![[1, 97, 5, 98], [90, 97, 3, 98], [0, 97, 0, 98]];
        let out = model.forward(&tokens).unwrap();
        assert_eq!(out.logits.shape(), (3, 99));
        assert_eq!(out.unembed_inputs.shape(), (3, 16));
        let again = model.forward(&tokens).unwrap();
        assert_eq!(out.logits.data(), again.logits.data(), "same input, same bits");

        assert!(matches!(
            model.forward(&[[99, 0, 0, 0]]),
            Err(GrokError::TokenOutOfRange { token: 99, vocab: 99 })
        ));
        assert!(matches!(
            model.forward(&[] as &[[u32; 4]]),
            Err(GrokError::EmptyBatch)
        ));
    }

    #[test]
    fn attention_is_causal_and_normalized() {
        let model = tiny_model(3);
        let tokens = vec![[0, 1, 2, 3], [4, 3, 2, 1]];
        let cache = model.forward_cached(&tokens).unwrap();
        let (t, heads) = (SEQ_LEN, model.arch.heads);
        for bc in &cache.blocks {
            for bi in 0..tokens.len() {
                for h in 0..heads {
                    for t1 in 0..t {
                        let a_base = ((bi * heads + h) * t + t1) * t;
                        let row = &bc.att[a_base..a_base + t];
                        for (t2, &a) in row.iter().enumerate() {
                            if t2 > t1 {
                                assert_eq!(a, 0.0, "future positions must be masked");
                            } else {
                                assert!(a >= 0.0);
                            }
                        }
                        let sum: f64 = row[..=t1].iter().sum();
                        assert!((sum - 1.0).abs() < 1e-12, "attention rows are distributions");
                    }
                }
            }
        }
    }

    #[test]
    fn changing_an_input_token_changes_the_logits() {
        let model = tiny_model(7);
        let a = model.forward(&[[0, 1, 2, 3]]).unwrap();
        let b = model.forward(&[[4, 1, 2, 3]]).unwrap();
        assert_ne!(a.logits.data(), b.logits.data(), "the first token must reach the output");
    }

    /// Central finite differences, per tensor: ‖g_analytic − g_fd‖ must be
    /// small relative to ‖g_fd‖ for every parameter tensor.
    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut model = tiny_model(42);
        let tokens = vec![[0, 3, 1, 4], [2, 3, 0, 4], [1, 3, 1, 4]];
        let targets = vec![2u32, 0, 1];
        let (_, analytic) = model.loss_and_gradients(&tokens, &targets).unwrap();

        let h = 1e-5;
        let tensor_count = model.params.tensors().len();
        for ti in 0..tensor_count {
            let len = model.params.tensors()[ti].1.len();
            let name = model.params.tensors()[ti].0.clone();
            let mut fd = vec![0.0f64; len];
            for j in 0..len {
                let original = model.params.tensors()[ti].1[j];
                model.params.tensors_mut()[ti].1[j] = original + h;
                let plus = model.loss_and_gradients(&tokens, &targets).unwrap().0;
                model.params.tensors_mut()[ti].1[j] = original - h;
                let minus = model.loss_and_gradients(&tokens, &targets).unwrap().0;
                model.params.tensors_mut()[ti].1[j] = original;
                fd[j] = (plus - minus) / (2.0 * h);
            }
            let got = analytic.tensors()[ti].1;
            let diff_norm: f64 =
                got.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let fd_norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
            let rel = diff_norm / fd_norm.max(1e-12);
            assert!(
                rel < 1e-4,
                "tensor {name}: analytic vs finite-difference relative error {rel:.3e}"
            );
        }
    }

    #[test]
    fn gradients_are_deterministic_and_loss_matches_forward() {
        let model = tiny_model(9);
        let tokens = vec![[0, 3, 1, 4], [2, 3, 0, 4]];
        let targets = vec![2u32, 0];
        let (loss_a, grads_a) = model.loss_and_gradients(&tokens, &targets).unwrap();
        let (loss_b, grads_b) = model.loss_and_gradients(&tokens, &targets).unwrap();
        assert_eq!(loss_a.to_bits(), loss_b.to_bits());
        for ((_, ga), (_, gb)) in grads_a.tensors().iter().zip(grads_b.tensors().iter()) {
            assert_eq!(*ga, *gb, "gradients must be bit-deterministic");
        }

        // Loss equals the mean −ln softmax[target] computed from the
        // forward logits independently.
        let out = model.forward(&tokens).unwrap();
        let mut expect = 0.0;
        for (bi, &tgt) in targets.iter().enumerate() {
            let row = out.logits.row(bi);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
            expect += denom.ln() - (row[tgt as usize] - max);
        }
        expect /= targets.len() as f64;
        assert!((loss_a - expect).abs() < 1e-12);
    }

    #[test]
    fn unscaled_chunks_recombine_to_the_full_batch() {
        let model = tiny_model(11);
        let tokens =
            vec![[0, 3, 1, 4], [2, 3, 0, 4], [1, 3, 1, 4], [4, 3, 2, 4], [3, 3, 3, 4]];
        let targets = vec![2u32, 0, 1, 4, 3];
        let (full_sum, mut full_grads) =
            model.loss_and_gradients_unscaled(&tokens, &targets).unwrap();

        let (sum_a, mut grads_a) =
            model.loss_and_gradients_unscaled(&tokens[..2], &targets[..2]).unwrap();
        let (sum_b, grads_b) =
            model.loss_and_gradients_unscaled(&tokens[2..], &targets[2..]).unwrap();
        grads_a.add_assign(&grads_b);

        assert!((full_sum - (sum_a + sum_b)).abs() < 1e-12);
        let n = tokens.len() as f64;
        full_grads.scale(1.0 / n);
        grads_a.scale(1.0 / n);
        for ((name, fg), (_, cg)) in full_grads.tensors().iter().zip(grads_a.tensors().iter())
        {
            for (a, b) in fg.iter().zip(cg.iter()) {
                assert!(
                    (a - b).abs() <= 1e-12 * a.abs().max(1.0),
                    "chunked gradients must recombine ({name})"
                );
            }
        }
    }

    #[test]
    fn argmax_takes_the_first_maximum() {
        let logits =
            DenseMatrix::from_vec(2, 3, vec![0.1, 0.9, 0.9, -1.0, -2.0, -0.5]).unwrap();
        assert_eq!(argmax_rows(&logits), vec![1, 2]);
    }

    #[test]
    fn init_respects_fan_in_limits() {
        let model = tiny_model(5);
        let d = model.arch.embed as f64;
        let limit = 1.0 / d.sqrt();
        for v in model.params.tok.data() {
            assert!(v.abs() < limit, "token embeddings are U(±1/√fan_in)");
        }
        let ff_limit = 1.0 / (model.arch.ff as f64).sqrt();
        for b in &model.params.blocks {
            for v in b.w2.data() {
                assert!(v.abs() < ff_limit, "w2 fan-in is the ff dim");
            }
            assert!(b.ln1_gain.iter().all(|&g| g == 1.0));
            assert!(b.ln1_bias.iter().all(|&g| g == 0.0));
        }
        assert!(model.params.fin_gain.iter().all(|&g| g == 1.0));

        let bad = Arch { vocab: 5, embed: 9, ff: 16, heads: 2, layers: 1 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(Model::init(bad, &mut rng).is_err(), "embed must divide into heads");
    }
}
