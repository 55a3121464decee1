//! Score-function gradients for the storyline model.

use crate::error::{Error, Result};
use crate::models::{SeqModel, Target, TokenId};

use super::optim::Optimizer;

/// Adds `(reward - baseline) * d log p(sampled | source)` to `grad`, the
/// ascent direction of the expected reward.
pub fn reinforce_gradient(
    model: &SeqModel,
    source: &[TokenId],
    sampled: &Target,
    reward: f64,
    baseline: f64,
    grad: &mut [f64],
) -> Result<()> {
    if !reward.is_finite() || !baseline.is_finite() {
        return Err(Error::NonFiniteReward);
    }
    let advantage = reward - baseline;
    if advantage == 0.0 {
        return Ok(());
    }
    model.accumulate_grad(source, sampled, advantage, grad, None)?;
    Ok(())
}

/// One gradient-ascent update of `model` on a single sampled storyline.
pub fn reinforce_gradient_step(
    model: &mut SeqModel,
    optimizer: &mut Optimizer,
    source: &[TokenId],
    sampled: &Target,
    reward: f64,
    baseline: f64,
) -> Result<()> {
    let mut grad = vec![0.0; model.n_params()];
    reinforce_gradient(model, source, sampled, reward, baseline, &mut grad)?;
    grad.iter_mut().for_each(|g| *g = -*g);
    optimizer.step(model.params_mut(), &grad);
    Ok(())
}
