//! Attention variants over row-major matrices.
//!
//! `σ₂` normalizes each row (softmax along axis 1), `σ₁` normalizes each
//! column (softmax along axis 0). Linear attention groups the key/value
//! product first, so its cost stays linear in the number of rows. CBLA
//! inserts the query self-similarity bridge Q′ into that aggregation; the
//! `compact` reading keeps Q′ at d_k×d_k (and the O(N) cost), the `gram`
//! reading uses the N×N form with the literal operand order.

use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::{Tape, Tensor};
use crate::{config_err, dim_err};

/// Q, K, V operands: Q,K are N×d_k and V is N×d_v.
#[derive(Debug, Clone)]
pub struct AttentionInputs {
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
}

impl AttentionInputs {
    pub fn new(q: Tensor, k: Tensor, v: Tensor) -> Result<Self> {
        if q.rank() != 2 || k.rank() != 2 || v.rank() != 2 {
            return Err(dim_err!(
                "attention operands must be rank 2, got {:?}, {:?}, {:?}",
                q.shape(),
                k.shape(),
                v.shape()
            ));
        }
        let n = q.shape()[0];
        if n == 0 {
            return Err(dim_err!("attention needs at least one row"));
        }
        if k.shape()[0] != n || v.shape()[0] != n {
            return Err(dim_err!(
                "row counts differ: Q {:?}, K {:?}, V {:?}",
                q.shape(),
                k.shape(),
                v.shape()
            ));
        }
        if q.shape()[1] != k.shape()[1] {
            return Err(dim_err!(
                "Q and K feature extents differ: {:?} vs {:?}",
                q.shape(),
                k.shape()
            ));
        }
        Ok(Self { q, k, v })
    }

    pub fn rows(&self) -> usize {
        self.q.shape()[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionVariant {
    Dot,
    Linear,
    CblaCompact,
    CblaGram,
}

/// Which reading of the self-attention bridge to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BridgeForm {
    /// Q′ = σ₂(Q)ᵀσ₂(Q), shape d_k×d_k.
    Compact,
    /// Q′ = σ₂(Q)σ₂(Q)ᵀ, shape N×N.
    Gram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub variant: AttentionVariant,
    pub heads: usize,
    pub d_model: usize,
    pub d_k: usize,
    pub d_v: usize,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 {
            return Err(config_err!("attention heads must be ≥ 1"));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(config_err!(
                "d_model {} not divisible by {} heads",
                self.d_model,
                self.heads
            ));
        }
        Ok(())
    }

    /// Uniform per-stage setup: d_k = d_v = d_model / heads.
    pub fn for_width(variant: AttentionVariant, heads: usize, d_model: usize) -> Self {
        Self { variant, heads, d_model, d_k: d_model / heads, d_v: d_model / heads }
    }
}

/// Standard dot-product attention: softmax(QKᵀ/√d_k) V. The quadratic
/// oracle that the linear variants are measured against.
pub fn dot_attention(tape: &Tape, inputs: &AttentionInputs) -> Result<Tensor> {
    let d_k = inputs.q.shape()[1] as f64;
    let kt = tape.transpose2(&inputs.k)?;
    let scores = tape.scale(&tape.matmul(&inputs.q, &kt)?, 1.0 / Float::sqrt(d_k));
    let weights = tape.softmax_axis(&scores, 1)?;
    tape.matmul(&weights, &inputs.v)
}

/// Linear attention σ₂(Q)·(σ₁(K)ᵀV), evaluated key-first so the cost is
/// O(N·d_k·d_v).
pub fn linear_attention(tape: &Tape, inputs: &AttentionInputs) -> Result<Tensor> {
    let q_norm = tape.softmax_axis(&inputs.q, 1)?;
    let k_norm = tape.softmax_axis(&inputs.k, 0)?;
    let kv = tape.matmul(&tape.transpose2(&k_norm)?, &inputs.v)?;
    tape.matmul(&q_norm, &kv)
}

/// The query self-similarity bridge. Both forms are Gram matrices of
/// σ₂(Q), hence symmetric positive semidefinite.
pub fn q_bridge(tape: &Tape, q: &Tensor, form: BridgeForm) -> Result<Tensor> {
    let q_norm = tape.softmax_axis(q, 1)?;
    let qt = tape.transpose2(&q_norm)?;
    match form {
        BridgeForm::Compact => tape.matmul(&qt, &q_norm),
        BridgeForm::Gram => tape.matmul(&q_norm, &qt),
    }
}

/// Cross-bridge linear attention.
///
/// `Compact` evaluates σ₂(Q)·Q′·(σ₁(K)ᵀV) with the d_k×d_k bridge,
/// preserving linear cost in N. `Gram` evaluates the literal ordering
/// σ₂(Q)·σ₁(K)ᵀ·Q′·V with the N×N bridge at O(N²) cost.
pub fn cbla(tape: &Tape, inputs: &AttentionInputs, form: BridgeForm) -> Result<Tensor> {
    let q_norm = tape.softmax_axis(&inputs.q, 1)?;
    let k_norm = tape.softmax_axis(&inputs.k, 0)?;
    let kt = tape.transpose2(&k_norm)?;
    // The bridge shares the σ₂(Q) normalization with the outer factor.
    match form {
        BridgeForm::Compact => {
            let bridge = tape.matmul(&tape.transpose2(&q_norm)?, &q_norm)?;
            let kv = tape.matmul(&kt, &inputs.v)?;
            tape.matmul(&q_norm, &tape.matmul(&bridge, &kv)?)
        }
        BridgeForm::Gram => {
            let bridge = tape.matmul(&q_norm, &tape.transpose2(&q_norm)?)?;
            let qk = tape.matmul(&q_norm, &kt)?;
            tape.matmul(&tape.matmul(&qk, &bridge)?, &inputs.v)
        }
    }
}

/// Dispatch an attention variant over prepared inputs.
pub fn apply_variant(tape: &Tape, variant: AttentionVariant, inputs: &AttentionInputs) -> Result<Tensor> {
    match variant {
        AttentionVariant::Dot => dot_attention(tape, inputs),
        AttentionVariant::Linear => linear_attention(tape, inputs),
        AttentionVariant::CblaCompact => cbla(tape, inputs, BridgeForm::Compact),
        AttentionVariant::CblaGram => cbla(tape, inputs, BridgeForm::Gram),
    }
}

/// Projection weights of one multi-head block: per-head Q/K/V maps plus
/// the output projection over the concatenated heads.
#[derive(Debug, Clone)]
pub struct MultiHeadParams {
    pub wq: Vec<Tensor>,
    pub wk: Vec<Tensor>,
    pub wv: Vec<Tensor>,
    pub wo: Tensor,
}

/// Uniform(−1/√fan_in, 1/√fan_in) projection matrix.
pub fn uniform_projection(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / Float::sqrt(fan_in as f64);
    Tensor::rand_uniform([fan_in, fan_out], -bound, bound, rng)
}

impl MultiHeadParams {
    /// Uniform(−1/√fan_in, 1/√fan_in) initialization.
    pub fn init(config: &AttentionConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut wq = Vec::new();
        let mut wk = Vec::new();
        let mut wv = Vec::new();
        for _ in 0..config.heads {
            wq.push(uniform_projection(config.d_model, config.d_k, rng));
            wk.push(uniform_projection(config.d_model, config.d_k, rng));
            wv.push(uniform_projection(config.d_model, config.d_v, rng));
        }
        let concat = config.heads * config.d_v;
        Ok(Self { wq, wk, wv, wo: uniform_projection(concat, concat, rng) })
    }

    /// Identity projections; requires heads == 1 and d_k == d_v == d_model.
    pub fn identity(config: &AttentionConfig) -> Result<Self> {
        if config.heads != 1 || config.d_k != config.d_model || config.d_v != config.d_model {
            return Err(config_err!("identity projections need heads=1, d_k=d_v=d_model"));
        }
        let eye = Tensor::eye(config.d_model);
        Ok(Self { wq: alloc::vec![eye.clone()], wk: alloc::vec![eye.clone()], wv: alloc::vec![eye.clone()], wo: eye })
    }
}

/// Multi-head attention over an h×w×d_model feature map: flatten to
/// N=h·w rows, project per head, run the configured variant, concat the
/// heads, project, and reshape back to h×w×(heads·d_v).
pub fn multi_head(
    tape: &Tape,
    x: &Tensor,
    config: &AttentionConfig,
    params: &MultiHeadParams,
) -> Result<Tensor> {
    config.validate()?;
    if x.rank() != 3 || x.shape()[2] != config.d_model {
        return Err(dim_err!(
            "multi_head expects h×w×{}, got {:?}",
            config.d_model,
            x.shape()
        ));
    }
    if params.wq.len() != config.heads {
        return Err(config_err!(
            "parameter set has {} heads, config asks for {}",
            params.wq.len(),
            config.heads
        ));
    }
    let (h, w) = (x.shape()[0], x.shape()[1]);
    let flat = tape.reshape(x, [h * w, config.d_model])?;
    let mut heads_out: Option<Tensor> = None;
    for head in 0..config.heads {
        let inputs = AttentionInputs::new(
            tape.matmul(&flat, &params.wq[head])?,
            tape.matmul(&flat, &params.wk[head])?,
            tape.matmul(&flat, &params.wv[head])?,
        )?;
        let out = apply_variant(tape, config.variant, &inputs)?;
        heads_out = Some(match heads_out {
            None => out,
            Some(acc) => tape.concat_axis(&acc, &out, 1)?,
        });
    }
    let concat = heads_out.expect("heads ≥ 1 enforced by validate");
    let projected = tape.matmul(&concat, &params.wo)?;
    tape.reshape(&projected, [h, w, config.heads * config.d_v])
}
