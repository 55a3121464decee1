use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::optim::Optimizer;
use super::{
    mixture_ratio_at, Baseline, EpochReport, MixtureClock, StepMetrics, TrainConfig, TrainMode,
    TrainObserver,
};
use crate::corpus::StoryRecord;
use crate::error::{Error, Result};
use crate::models::vocab::SEP;
use crate::models::{
    perplexity, Codec, DecodePlan, DecodeStrategy, Example, SeqModel, Target, TokenId,
};
use crate::storyline::StructuredStoryline;

/// A record turned into everything the training loops score or decode.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub prefix_ids: Vec<TokenId>,
    /// Masked source and gold storyline target.
    pub storyline: Example,
    pub plan: DecodePlan,
    /// `prefix <sep> gold storyline`.
    pub gold_story_source: Vec<TokenId>,
    pub story_target: Target,
}

impl Prepared {
    pub fn new(codec: &Codec, record: &StoryRecord, max_storyline_len: usize) -> Result<Self> {
        if record.prompts.is_none() && record.events.len() > 1 {
            return Err(Error::InvalidConfig(format!(
                "record {} is not annotated",
                record.id
            )));
        }
        let gold = record.storyline()?;
        let skeleton = codec.plan_skeleton(gold.events(), gold.prompts().unwrap_or(&[]))?;
        let gold_text = codec.storyline_text(&gold);
        let prefix_ids = codec.encode(&record.prefix);
        // Sampled storylines must fit after `prefix <sep>` in the story source,
        // which the encoder closes with `<eos>`.
        let room = max_storyline_len.saturating_sub(prefix_ids.len() + 2);
        Ok(Prepared {
            storyline: codec.storyline_example(&record.prefix, &gold),
            plan: codec.storyline_plan(&skeleton, room),
            gold_story_source: codec.story_source(&record.prefix, Some(&gold_text)),
            story_target: codec.story_target(&record.continuation_text()),
            prefix_ids,
        })
    }

    /// `prefix <sep> storyline` from already-encoded storyline tokens.
    pub fn story_source_with(&self, storyline: &[TokenId]) -> Vec<TokenId> {
        let mut src = Vec::with_capacity(self.prefix_ids.len() + 1 + storyline.len());
        src.extend_from_slice(&self.prefix_ids);
        src.push(SEP);
        src.extend_from_slice(storyline);
        src
    }
}

fn prepare_all(codec: &Codec, records: &[StoryRecord], max_len: usize) -> Result<Vec<Prepared>> {
    records
        .iter()
        .map(|r| Prepared::new(codec, r, max_len))
        .collect()
}

/// SplitMix64 finalizer; derives independent per-call seeds.
pub(crate) fn derive_seed(parts: &[u64]) -> u64 {
    let mut x = 0x243F_6A88_85A3_08D3u64;
    for &p in parts {
        x ^= p;
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x = z ^ (z >> 31);
    }
    x
}

struct Learner {
    model: SeqModel,
    opt: Optimizer,
    grad: Vec<f64>,
    pending: usize,
    dropout_rng: ChaCha8Rng,
}

impl Learner {
    fn new(model: SeqModel, cfg: &TrainConfig, salt: u64) -> Self {
        let opt = Optimizer::for_model(cfg.optimizer, cfg.lr, cfg.grad_clip, &model);
        Learner {
            grad: vec![0.0; model.n_params()],
            opt,
            pending: 0,
            dropout_rng: ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.rng_seed, salt])),
            model,
        }
    }

    /// Accumulates the gradient of `weight * mean NLL` and returns the mean
    /// NLL.
    fn add_nll(&mut self, source: &[TokenId], target: &Target, weight: f64) -> Result<f64> {
        let n = target.scored_len().max(1) as f64;
        let lp = self.model.accumulate_grad(
            source,
            target,
            -weight / n,
            &mut self.grad,
            Some(&mut self.dropout_rng),
        )?;
        Ok(-lp / n)
    }

    /// Accumulates the descent direction of `-advantage * log p`, i.e.
    /// gradient ascent on the expected reward.
    fn add_policy(&mut self, source: &[TokenId], sampled: &Target, advantage: f64) -> Result<()> {
        super::reinforce_gradient(
            &self.model,
            source,
            sampled,
            -advantage,
            0.0,
            &mut self.grad,
        )
    }

    fn finish_batch(&mut self, accum: usize, force: bool) {
        self.pending += 1;
        if self.pending < accum && !force {
            return;
        }
        let k = self.pending as f64;
        if k > 1.0 {
            self.grad.iter_mut().for_each(|g| *g /= k);
        }
        self.opt.step(self.model.params_mut(), &self.grad);
        self.grad.iter_mut().for_each(|g| *g = 0.0);
        self.pending = 0;
    }

    fn flush(&mut self) {
        if self.pending > 0 {
            self.pending -= 1;
            self.finish_batch(1, true);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation models (final ones when there is no validation set).
    pub storyline: SeqModel,
    pub story: SeqModel,
    pub epochs: Vec<EpochReport>,
    pub best_epoch: usize,
    pub history: Vec<StepMetrics>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn check_finite(step: u64, xs: &[f64]) -> Result<()> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::DivergedLoss { step });
    }
    Ok(())
}

/// Story perplexity on `dev` with storylines decoded by the storyline model.
pub(crate) fn validation_perplexity(
    storyline: &SeqModel,
    story: &SeqModel,
    dev: &[Prepared],
    temperature: f64,
    seed: u64,
) -> Result<Option<f64>> {
    if dev.is_empty() {
        return Ok(None);
    }
    let mut examples = Vec::with_capacity(dev.len());
    for (j, ex) in dev.iter().enumerate() {
        let strategy = DecodeStrategy::Sample {
            temperature,
            seed: derive_seed(&[seed, j as u64]),
        };
        let source = ex.story_source_with(
            &storyline
                .decode(&ex.storyline.source, &ex.plan, &strategy)?
                .tokens,
        );
        examples.push(Example {
            source,
            target: ex.story_target.clone(),
        });
    }
    perplexity(story, &examples).map(Some)
}

/// Story perplexity of the gold continuations of `records`, given the
/// prefix and a storyline sampled from the storyline model.
pub fn reference_perplexity(
    codec: &Codec,
    storyline: &SeqModel,
    story: &SeqModel,
    records: &[StoryRecord],
    temperature: f64,
    seed: u64,
) -> Result<f64> {
    let prepared = prepare_all(
        codec,
        records,
        storyline.config().max_len.min(story.config().max_len),
    )?;
    validation_perplexity(storyline, story, &prepared, temperature, seed)?.ok_or(Error::EmptyInput)
}

/// Runs the regime selected by `cfg.mode`.
pub fn train(
    codec: &Codec,
    train_records: &[StoryRecord],
    dev_records: &[StoryRecord],
    storyline: SeqModel,
    story: SeqModel,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mode = cfg.mode;
    let max_len = storyline.config().max_len.min(story.config().max_len);
    let data = prepare_all(codec, train_records, max_len)?;
    let dev = prepare_all(codec, dev_records, max_len)?;

    let mut alpha = Learner::new(storyline, cfg, 1);
    let mut theta = Learner::new(story, cfg, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut mix_rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.rng_seed, 4]));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step: u64 = 0;
    let mut reward_baseline: Option<f64> = None;
    let mut history = Vec::new();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, SeqModel, SeqModel)> = None;
    let steps_per_epoch = data.len().div_ceil(cfg.batch_size) as f64;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let reinforce = mode == TrainMode::Rl && epoch >= cfg.warmup_epochs;
        if reinforce {
            alpha.opt.set_lr(cfg.policy_lr.unwrap_or(cfg.lr));
        }
        let supervise_alpha = !reinforce && (mode != TrainMode::E2e || cfg.e2e_storyline_loss);
        let (mut ep_alpha, mut ep_theta, mut ep_reward) = (Vec::new(), Vec::new(), Vec::new());
        for batch in order.chunks(cfg.batch_size) {
            let clock = match cfg.mixture_clock {
                MixtureClock::Step => step as f64,
                MixtureClock::Epoch => step as f64 / steps_per_epoch,
            };
            let p_gold = matches!(mode, TrainMode::E2e | TrainMode::Rl)
                .then(|| mixture_ratio_at(cfg.mu, clock));
            let samples = if reinforce { cfg.rl_samples } else { 1 };
            let w = 1.0 / (batch.len() * samples) as f64;
            let (mut la, mut lt, mut rewards) = (Vec::new(), Vec::new(), Vec::new());
            let mut policy: Vec<(usize, Target)> = Vec::new();
            for (bi, &i) in batch.iter().enumerate() {
                let ex = &data[i];
                let a = &mut alpha;
                if supervise_alpha {
                    la.push(a.add_nll(&ex.storyline.source, &ex.storyline.target, w)?);
                }
                if mode == TrainMode::TwoStage {
                    lt.push(theta.add_nll(&ex.gold_story_source, &ex.story_target, w)?);
                    continue;
                }
                for s in 0..samples {
                    let temperature = if reinforce { 1.0 } else { cfg.temperature };
                    let strategy = DecodeStrategy::Sample {
                        temperature,
                        seed: derive_seed(&[cfg.rng_seed, step, bi as u64, s as u64]),
                    };
                    let decoded = a.model.decode(&ex.storyline.source, &ex.plan, &strategy)?;
                    let sampled_source = ex.story_source_with(&decoded.tokens);
                    let use_gold = p_gold.is_some_and(|p| p > 0.0 && mix_rng.gen_bool(p.min(1.0)));
                    let fed = if use_gold {
                        &ex.gold_story_source
                    } else {
                        &sampled_source
                    };
                    let loss = if cfg.freeze_story {
                        let n = ex.story_target.scored_len().max(1) as f64;
                        -theta.model.log_prob(fed, &ex.story_target)? / n
                    } else {
                        theta.add_nll(fed, &ex.story_target, w)?
                    };
                    lt.push(loss);
                    if reinforce {
                        let reward_loss = if use_gold {
                            let n = ex.story_target.scored_len().max(1) as f64;
                            -theta.model.log_prob(&sampled_source, &ex.story_target)? / n
                        } else {
                            loss
                        };
                        rewards.push(-reward_loss);
                        policy.push((i, decoded.target));
                    }
                }
            }
            step += 1;
            check_finite(step, &la)?;
            check_finite(step, &lt)?;
            if reinforce {
                check_finite(step, &rewards).map_err(|_| Error::NonFiniteReward)?;
                let batch_mean = mean(&rewards).unwrap_or(0.0);
                let mut advantages: Vec<f64> = match (cfg.baseline, reward_baseline) {
                    (Baseline::MovingAverage, b) => {
                        let b = b.unwrap_or(batch_mean);
                        rewards.iter().map(|r| r - b).collect()
                    }
                    (Baseline::None, _) => rewards.clone(),
                };
                if cfg.normalize_reward && advantages.len() > 1 {
                    let m = mean(&advantages).unwrap_or(0.0);
                    let sd = (advantages.iter().map(|a| (a - m).powi(2)).sum::<f64>()
                        / advantages.len() as f64)
                        .sqrt();
                    if sd > 0.0 {
                        advantages.iter_mut().for_each(|a| *a = (*a - m) / sd);
                    }
                }
                for ((i, target), adv) in policy.iter().zip(&advantages) {
                    alpha.add_policy(&data[*i].storyline.source, target, adv * w)?;
                }
                if cfg.baseline == Baseline::MovingAverage {
                    reward_baseline =
                        Some(reward_baseline.map_or(batch_mean, |b| 0.9 * b + 0.1 * batch_mean));
                }
            }
            if supervise_alpha || reinforce {
                alpha.finish_batch(cfg.grad_accum, false);
            }
            if !(cfg.freeze_story && matches!(mode, TrainMode::E2e | TrainMode::Rl)) {
                theta.finish_batch(cfg.grad_accum, false);
            }
            let metrics = StepMetrics {
                step,
                mode,
                loss_alpha: mean(&la),
                loss_theta: mean(&lt),
                reward_mean: mean(&rewards),
                p_mixture: p_gold,
            };
            observer.on_step(&metrics)?;
            history.push(metrics);
            ep_alpha.extend(la);
            ep_theta.extend(lt);
            ep_reward.extend(rewards);
        }
        alpha.flush();
        theta.flush();
        let dev_ppl = validation_perplexity(
            &alpha.model,
            &theta.model,
            &dev,
            cfg.temperature,
            cfg.rng_seed,
        )?;
        let report = EpochReport {
            epoch: epoch + 1,
            loss_alpha: mean(&ep_alpha),
            loss_theta: mean(&ep_theta),
            reward_mean: mean(&ep_reward),
            dev_perplexity: dev_ppl,
        };
        log::info!(
            "epoch {} loss_alpha {:?} loss_theta {:?} reward {:?} dev_ppl {:?}",
            report.epoch,
            report.loss_alpha,
            report.loss_theta,
            report.reward_mean,
            report.dev_perplexity
        );
        observer.on_epoch(&report, &alpha.model, &theta.model)?;
        let score = dev_ppl.unwrap_or(f64::NEG_INFINITY);
        if best
            .as_ref()
            .is_none_or(|b| score < b.0 || dev_ppl.is_none())
        {
            best = Some((score, epoch + 1, alpha.model.clone(), theta.model.clone()));
        }
        epochs.push(report);
    }
    let (_, best_epoch, storyline, story) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        storyline,
        story,
        epochs,
        best_epoch,
        history,
    })
}

/// Trains the storyline model to reconstruct prompt-free storylines from
/// their first event. An empty set leaves the model unchanged.
pub fn pretrain_storyline(
    model: SeqModel,
    codec: &Codec,
    storylines: &[StructuredStoryline],
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<SeqModel> {
    if storylines.is_empty() {
        cfg.validate()?;
        log::warn!("empty pretraining set; storyline model left unchanged");
        return Ok(model);
    }
    let codec = Codec {
        keep_first_k: 1,
        ..codec.clone()
    };
    let data: Vec<Example> = storylines
        .iter()
        .map(|s| codec.storyline_example("", &s.clone().without_prompts()))
        .collect();
    fit_supervised(model, &data, cfg, observer)
}

/// Plain teacher-forced training on fixed examples; used for pretraining
/// and for reference scorers.
pub fn fit_supervised(
    model: SeqModel,
    data: &[Example],
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<SeqModel> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut learner = Learner::new(model, cfg, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        for batch in order.chunks(cfg.batch_size) {
            let w = 1.0 / batch.len() as f64;
            let mut la = Vec::with_capacity(batch.len());
            for &i in batch {
                la.push(learner.add_nll(&data[i].source, &data[i].target, w)?);
            }
            step += 1;
            check_finite(step, &la)?;
            learner.finish_batch(cfg.grad_accum, false);
            let metrics = StepMetrics {
                step,
                mode: cfg.mode,
                loss_alpha: mean(&la),
                loss_theta: None,
                reward_mean: None,
                p_mixture: None,
            };
            observer.on_step(&metrics)?;
            losses.extend(la);
        }
        learner.flush();
        let report = EpochReport {
            epoch: epoch + 1,
            loss_alpha: mean(&losses),
            loss_theta: None,
            reward_mean: None,
            dev_perplexity: None,
        };
        observer.on_epoch(&report, &learner.model, &learner.model)?;
    }
    Ok(learner.model)
}

pub fn train_two_stage(
    codec: &Codec,
    records: &[StoryRecord],
    dev: &[StoryRecord],
    storyline: SeqModel,
    story: SeqModel,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let cfg = TrainConfig {
        mode: TrainMode::TwoStage,
        ..cfg.clone()
    };
    train(codec, records, dev, storyline, story, &cfg, &mut ())
}

pub fn train_e2e_vanilla(
    codec: &Codec,
    records: &[StoryRecord],
    dev: &[StoryRecord],
    storyline: SeqModel,
    story: SeqModel,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let cfg = TrainConfig {
        mode: TrainMode::E2e,
        ..cfg.clone()
    };
    train(codec, records, dev, storyline, story, &cfg, &mut ())
}

pub fn train_rl(
    codec: &Codec,
    records: &[StoryRecord],
    dev: &[StoryRecord],
    storyline: SeqModel,
    story: SeqModel,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let cfg = TrainConfig {
        mode: TrainMode::Rl,
        ..cfg.clone()
    };
    train(codec, records, dev, storyline, story, &cfg, &mut ())
}
