//! Training regimes for the storyline and story models.

mod optim;
mod regimes;
mod reinforce;

use serde::{Deserialize, Serialize};

pub use optim::{Optimizer, OptimizerKind};
pub(crate) use regimes::derive_seed;
pub use regimes::{
    fit_supervised, pretrain_storyline, reference_perplexity, train, train_e2e_vanilla, train_rl,
    train_two_stage, Prepared, TrainOutcome,
};
pub use reinforce::{reinforce_gradient, reinforce_gradient_step};

use crate::error::{Error, Result};
use crate::models::SeqModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Storyline and story models trained separately on gold storylines.
    TwoStage,
    /// Story model trained on storylines predicted by the storyline model.
    E2e,
    /// As `E2e`, with the storyline model updated by REINFORCE only.
    Rl,
}

/// What the mixture schedule counts: optimizer steps, or completed epochs
/// (fractional, so the clock still advances within an epoch).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixtureClock {
    Step,
    Epoch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    None,
    MovingAverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub lr: f64,
    /// Step size of REINFORCE updates to the storyline model; `lr` if unset.
    pub policy_lr: Option<f64>,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub epochs: usize,
    pub rng_seed: u64,
    /// Mixture parameter; 0 always feeds predicted storylines.
    pub mu: f64,
    /// Unit of the mixture schedule's clock.
    pub mixture_clock: MixtureClock,
    pub baseline: Baseline,
    pub optimizer: OptimizerKind,
    pub grad_clip: Option<f64>,
    /// Standardize advantages within a batch.
    pub normalize_reward: bool,
    /// Sampled storylines per example in RL mode.
    pub rl_samples: usize,
    /// Supervised storyline epochs run before REINFORCE starts in RL mode.
    pub warmup_epochs: usize,
    /// Keep training the storyline model on its supervised loss during
    /// `E2e` training; when false it stays fixed there.
    pub e2e_storyline_loss: bool,
    /// Keep the story model fixed (RL diagnostics).
    pub freeze_story: bool,
    /// Temperature for storylines sampled during e2e training and for
    /// validation decoding. RL sampling always uses 1.
    pub temperature: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::TwoStage,
            lr: 5e-5,
            policy_lr: None,
            batch_size: 10,
            grad_accum: 1,
            epochs: 10,
            rng_seed: 5,
            mu: 0.0,
            mixture_clock: MixtureClock::Step,
            baseline: Baseline::None,
            optimizer: OptimizerKind::Sgd,
            grad_clip: None,
            normalize_reward: false,
            rl_samples: 1,
            warmup_epochs: 0,
            e2e_storyline_loss: true,
            freeze_story: false,
            temperature: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.lr > 0.0) || self.policy_lr.is_some_and(|lr| !(lr > 0.0)) {
            return bad("learning rates must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.grad_accum == 0 || self.rl_samples == 0
        {
            return bad("epochs, batch_size, grad_accum and rl_samples must be positive");
        }
        if !(self.mu >= 0.0) {
            return bad("mu must be non-negative");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        Ok(())
    }
}

/// Probability of feeding the gold storyline at training step `step`:
/// `mu / (mu + exp(step / mu))`, and 0 for `mu = 0`.
pub fn mixture_ratio(mu: f64, step: u64) -> f64 {
    mixture_ratio_at(mu, step as f64)
}

/// [`mixture_ratio`] on a continuous clock.
pub fn mixture_ratio_at(mu: f64, clock: f64) -> f64 {
    if mu <= 0.0 {
        return 0.0;
    }
    mu / (mu + (clock / mu).exp())
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub mode: TrainMode,
    pub loss_alpha: Option<f64>,
    pub loss_theta: Option<f64>,
    pub reward_mean: Option<f64>,
    pub p_mixture: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub loss_alpha: Option<f64>,
    pub loss_theta: Option<f64>,
    pub reward_mean: Option<f64>,
    /// Story perplexity on the validation records, when there are any.
    pub dev_perplexity: Option<f64>,
}

/// Receives training progress; checkpoints are written from `on_epoch`.
pub trait TrainObserver {
    fn on_step(&mut self, _metrics: &StepMetrics) -> Result<()> {
        Ok(())
    }

    fn on_epoch(
        &mut self,
        _report: &EpochReport,
        _storyline: &SeqModel,
        _story: &SeqModel,
    ) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixture_values() {
        assert_eq!(mixture_ratio(1.0, 0), 0.5);
        assert_eq!(mixture_ratio(0.0, 0), 0.0);
        assert_eq!(mixture_ratio(0.0, 1000), 0.0);
        let p = mixture_ratio(0.5, 1);
        assert!((p - 0.5 / (0.5 + 2f64.exp())).abs() < 1e-15);
        assert!((p - 0.0634).abs() < 1e-4);
        assert!(mixture_ratio(1e9, 10_000) > 0.999_999);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let c = TrainConfig {
            lr: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            mu: -1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
