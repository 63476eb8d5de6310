//! Composite diffusion training loss: MSE on the predicted noise
//! increment plus λ-weighted cross-entropy and (1−λ)-weighted soft Dice
//! on the class logits. All terms are taped and differentiable.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::{check_same_shape, Tape, Tensor};
use crate::{config_err, contract_err};

/// Clamp applied inside log terms.
pub const LOG_CLAMP: f64 = 1e-12;
/// Smoothing added to both sides of the Dice ratio.
pub const DICE_EPS: f64 = 1e-7;

/// Blend weight λ between cross-entropy and Dice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: f64,
}

impl LossWeights {
    /// The experimentally chosen default λ = 0.2.
    pub const DEFAULT_LAMBDA: f64 = 0.2;

    pub fn new(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(config_err!("lambda must lie in [0,1], got {lambda}"));
        }
        Ok(Self { lambda })
    }

    /// mse + λ·ce + (1−λ)·dice. The same combination rule backs
    /// [`composite_loss`]; exposed so reports and tests share it.
    pub fn combine(&self, mse: f64, ce: f64, dice: f64) -> f64 {
        mse + self.lambda * ce + (1.0 - self.lambda) * dice
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda: Self::DEFAULT_LAMBDA }
    }
}

/// Mean squared error over all elements.
pub fn mse_loss(tape: &Tape, pred: &Tensor, truth: &Tensor) -> Result<Tensor> {
    check_same_shape("mse_loss", pred, truth)?;
    let diff = tape.sub(pred, truth)?;
    let sq = tape.mul(&diff, &diff)?;
    Ok(tape.mean(&sq))
}

fn check_one_hot(what: &str, target: &Tensor) -> Result<()> {
    if target.rank() != 3 {
        return Err(contract_err!("{what}: target must be C×H×W, got {:?}", target.shape()));
    }
    let (c, h, w) = (target.shape()[0], target.shape()[1], target.shape()[2]);
    if c < 2 {
        return Err(contract_err!("{what}: need at least 2 classes, got {c}"));
    }
    for y in 0..h {
        for x in 0..w {
            let mut ones = 0;
            for ch in 0..c {
                let v = target.at(&[ch, y, x]);
                if v == 1.0 {
                    ones += 1;
                } else if v != 0.0 {
                    return Err(contract_err!(
                        "{what}: target value {v} at ({ch},{y},{x}) is not 0/1"
                    ));
                }
            }
            if ones != 1 {
                return Err(contract_err!(
                    "{what}: pixel ({y},{x}) has {ones} active classes, expected exactly 1"
                ));
            }
        }
    }
    Ok(())
}

/// Pixel-averaged cross-entropy of channel-softmaxed logits against a
/// one-hot target.
pub fn ce_loss(tape: &Tape, logits: &Tensor, target: &Tensor) -> Result<Tensor> {
    check_same_shape("ce_loss", logits, target)?;
    check_one_hot("ce_loss", target)?;
    let pixels = (logits.shape()[1] * logits.shape()[2]) as f64;
    let probs = tape.softmax_axis(logits, 0)?;
    let log_probs = tape.ln_clamped(&probs, LOG_CLAMP);
    let picked = tape.mul(&log_probs, target)?;
    Ok(tape.scale(&tape.sum(&picked), -1.0 / pixels))
}

/// Soft Dice loss, averaged over classes. `eps` smooths both sides of
/// the per-class ratio so empty classes contribute a perfect score when
/// the prediction is also empty.
pub fn dice_loss(tape: &Tape, probs: &Tensor, target: &Tensor, eps: f64) -> Result<Tensor> {
    check_same_shape("dice_loss", probs, target)?;
    if probs.rank() != 3 {
        return Err(contract_err!("dice_loss: expected C×H×W, got {:?}", probs.shape()));
    }
    if probs.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(contract_err!("dice_loss: probabilities must lie in [0,1]"));
    }
    let c = probs.shape()[0] as f64;
    let overlap = tape.channel_sum(&tape.mul(probs, target)?)?;
    let numer = tape.add_scalar(&tape.scale(&overlap, 2.0), eps);
    let p_sq = tape.channel_sum(&tape.mul(probs, probs)?)?;
    let t_sq = tape.channel_sum(&tape.mul(target, target)?)?;
    let denom = tape.add_scalar(&tape.add(&p_sq, &t_sq)?, eps);
    let per_class = tape.div(&numer, &denom)?;
    let mean = tape.scale(&tape.sum(&per_class), 1.0 / c);
    Ok(tape.add_scalar(&tape.scale(&mean, -1.0), 1.0))
}

/// The full training objective over one sample:
/// mse(pred, truth) + λ·ce(logits, target) + (1−λ)·dice(softmax(logits), target).
pub fn composite_loss(
    tape: &Tape,
    pred_noise: &Tensor,
    true_noise: &Tensor,
    logits: &Tensor,
    target: &Tensor,
    weights: LossWeights,
) -> Result<Tensor> {
    let mse = mse_loss(tape, pred_noise, true_noise)?;
    let ce = ce_loss(tape, logits, target)?;
    let probs = tape.softmax_axis(logits, 0)?;
    let dice = dice_loss(tape, &probs, target, DICE_EPS)?;
    let weighted = tape.add(
        &tape.scale(&ce, weights.lambda),
        &tape.scale(&dice, 1.0 - weights.lambda),
    )?;
    tape.add(&mse, &weighted)
}
