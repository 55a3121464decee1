//! Desk-scale experiments on the synthetic corpus: prompt effectiveness,
//! RL against vanilla end-to-end training, and the mixture sweep.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    annotate_corpus, generate_synthetic_corpus, split_corpus, MarkerAnnotator, StoryRecord,
    SyntheticConfig,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    aligned_marker_relations, event_coverage, spearman, AfterCounts, RelationDistribution,
};
use crate::models::{
    Codec, DecodeStrategy, Generation, Pipeline, SeqModel, SeqModelConfig, Vocabulary,
};
use crate::storyline::{TemporalRelation, TokenConventions};
use crate::training::{
    derive_seed, reference_perplexity, train, TrainConfig, TrainMode, TrainOutcome,
};

/// Corpus, model and evaluation settings shared by the experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeskConfig {
    pub synthetic: SyntheticConfig,
    pub n_dev: usize,
    pub n_test: usize,
    pub model: SeqModelConfig,
    /// Training from scratch (two-stage by default).
    pub train: TrainConfig,
    /// Fine-tuning from a trained pair; `mode` and `rng_seed` are set per run.
    pub finetune: TrainConfig,
    /// Leading training records used for fine-tuning.
    pub n_finetune: usize,
    /// Sampling temperature for evaluation decodes.
    pub eval_temperature: f64,
    pub eval_seed: u64,
}

impl Default for DeskConfig {
    fn default() -> Self {
        DeskConfig {
            synthetic: SyntheticConfig {
                n_stories: 10_000,
                ..Default::default()
            },
            n_dev: 200,
            n_test: 400,
            model: SeqModelConfig {
                embed_dim: 24,
                hidden_dim: 48,
                max_len: 80,
                ..Default::default()
            },
            train: TrainConfig {
                lr: 3e-3,
                batch_size: 16,
                epochs: 3,
                optimizer: crate::training::OptimizerKind::Adam,
                grad_clip: Some(5.0),
                temperature: 0.7,
                ..Default::default()
            },
            finetune: TrainConfig {
                lr: 3e-3,
                policy_lr: Some(3e-4),
                batch_size: 16,
                epochs: 3,
                optimizer: crate::training::OptimizerKind::Adam,
                grad_clip: Some(5.0),
                temperature: 0.7,
                baseline: crate::training::Baseline::MovingAverage,
                ..Default::default()
            },
            n_finetune: 3000,
            eval_temperature: 0.7,
            eval_seed: 7,
        }
    }
}

/// Annotated synthetic splits with their codec.
#[derive(Debug, Clone)]
pub struct DeskData {
    pub codec: Codec,
    pub train: Vec<StoryRecord>,
    pub dev: Vec<StoryRecord>,
    pub test: Vec<StoryRecord>,
}

pub fn prepare_synthetic(cfg: &DeskConfig) -> Result<DeskData> {
    cfg.synthetic.validate()?;
    let mut records = generate_synthetic_corpus(&cfg.synthetic);
    annotate_corpus(&mut records, &MarkerAnnotator);
    let (train, dev, test) = split_corpus(&records, cfg.n_dev, cfg.n_test);
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let conv = TokenConventions::default();
    let vocab = Vocabulary::build(&records, &conv)?;
    Ok(DeskData {
        codec: Codec::new(vocab, conv, 1),
        train,
        dev,
        test,
    })
}

/// Freshly initialized storyline and story models.
pub fn fresh_models(
    codec: &Codec,
    cfg: &SeqModelConfig,
    seed: u64,
) -> Result<(SeqModel, SeqModel)> {
    let make = |salt| {
        SeqModel::new(
            SeqModelConfig {
                rng_seed: derive_seed(&[seed, salt]),
                ..cfg.clone()
            },
            codec.vocab.len(),
        )
    };
    Ok((make(1)?, make(2)?))
}

/// Trains a pipeline from scratch with `cfg.train`, optionally overriding
/// the regime and seed.
pub fn train_pipeline(
    data: &DeskData,
    cfg: &DeskConfig,
    codec: &Codec,
    train_cfg: &TrainConfig,
) -> Result<(Pipeline, TrainOutcome)> {
    let (a, b) = fresh_models(codec, &cfg.model, train_cfg.rng_seed)?;
    let out = train(codec, &data.train, &data.dev, a, b, train_cfg, &mut ())?;
    let pipeline = Pipeline::new(codec.clone(), out.storyline.clone(), out.story.clone())
        .with_n_events(cfg.synthetic.n_events);
    Ok((pipeline, out))
}

/// Generations for a fixed prompt assignment, with the relations read off
/// the generated stories.
#[derive(Debug, Clone)]
pub struct PromptRun {
    pub prompts: Vec<Vec<TemporalRelation>>,
    pub relations: Vec<Vec<TemporalRelation>>,
    pub generations: Vec<Generation>,
}

impl PromptRun {
    pub fn generate(
        pipeline: &Pipeline,
        records: &[StoryRecord],
        prompts: Vec<Vec<TemporalRelation>>,
        temperature: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut relations = Vec::with_capacity(records.len());
        let mut generations = Vec::with_capacity(records.len());
        for (i, (r, p)) in records.iter().zip(&prompts).enumerate() {
            let strategy = DecodeStrategy::Sample {
                temperature,
                seed: derive_seed(&[seed, i as u64]),
            };
            let g = pipeline.generate_story(&r.prefix, &r.events, p, &strategy)?;
            relations.push(aligned_marker_relations(
                &r.prefix,
                &g.story.continuation_text(),
                p.len(),
            ));
            generations.push(g);
        }
        Ok(PromptRun {
            prompts,
            relations,
            generations,
        })
    }

    pub fn distribution(&self) -> Result<RelationDistribution> {
        RelationDistribution::of(&self.relations.concat())
    }

    /// Share of stories whose relation at `positions[i]` is AFTER.
    pub fn after_rate_at(&self, positions: &[usize]) -> f64 {
        let hits = self
            .relations
            .iter()
            .zip(positions)
            .filter(|(rel, &k)| rel.get(k) == Some(&TemporalRelation::After))
            .count();
        hits as f64 / self.relations.len().max(1) as f64
    }

    pub fn after_counts(&self) -> AfterCounts {
        let count =
            |v: &[TemporalRelation]| v.iter().filter(|r| **r == TemporalRelation::After).count();
        let mut c = AfterCounts::default();
        for (p, r) in self.prompts.iter().zip(&self.relations) {
            c.push(count(p), count(r));
        }
        c
    }

    /// Mean trigger coverage over stories whose storyline parsed.
    pub fn coverage(&self) -> Option<f64> {
        let cov: Vec<f64> = self
            .generations
            .iter()
            .filter_map(|g| g.storyline.as_ref().map(|s| event_coverage(s, &g.story)))
            .collect();
        (!cov.is_empty()).then(|| cov.iter().sum::<f64>() / cov.len() as f64)
    }
}

/// One AFTER prompt at a seeded random position, BEFORE elsewhere.
pub fn single_after_prompts(
    n_records: usize,
    n_pairs: usize,
    seed: u64,
) -> (Vec<Vec<TemporalRelation>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_records)
        .map(|_| {
            let k = rng.gen_range(0..n_pairs);
            let mut p = vec![TemporalRelation::Before; n_pairs];
            p[k] = TemporalRelation::After;
            (p, k)
        })
        .unzip()
}

/// Results of the prompt-effectiveness experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Effectiveness {
    /// BEFORE share of the vanilla model under all-BEFORE prompts.
    pub vanilla_before_share: f64,
    /// AFTER rate at the designated positions without an AFTER prompt,
    /// for the vanilla and the prompt-conditioned model.
    pub vanilla_after_rate: f64,
    pub prompted_baseline_after_rate: f64,
    /// AFTER rate at the position carrying the single AFTER prompt.
    pub prompted_after_rate: f64,
    /// Per-story AFTER-count correlation under gold prompts.
    pub prompted_correlation: Option<f64>,
    pub vanilla_correlation: Option<f64>,
}

impl Effectiveness {
    /// Increase of the prompted AFTER rate over the larger baseline, in
    /// percentage points.
    pub fn after_lift_pp(&self) -> f64 {
        100.0
            * (self.prompted_after_rate
                - self
                    .vanilla_after_rate
                    .max(self.prompted_baseline_after_rate))
    }
}

pub fn measure_effectiveness(
    prompted: &Pipeline,
    vanilla: &Pipeline,
    records: &[StoryRecord],
    temperature: f64,
    seed: u64,
) -> Result<Effectiveness> {
    let n_pairs = records
        .first()
        .map(|r| r.events.len().saturating_sub(1))
        .ok_or(Error::EmptyInput)?;
    let all_before = vec![vec![TemporalRelation::Before; n_pairs]; records.len()];
    let (single, positions) = single_after_prompts(records.len(), n_pairs, derive_seed(&[seed, 1]));
    let gold: Vec<Vec<TemporalRelation>> = records
        .iter()
        .map(|r| {
            r.prompts
                .clone()
                .ok_or_else(|| Error::InvalidConfig(format!("record {} is not annotated", r.id)))
        })
        .collect::<Result<_>>()?;

    let vanilla_before =
        PromptRun::generate(vanilla, records, all_before.clone(), temperature, seed)?;
    let prompted_before = PromptRun::generate(prompted, records, all_before, temperature, seed)?;
    let prompted_single = PromptRun::generate(prompted, records, single, temperature, seed)?;
    let prompted_gold = PromptRun::generate(prompted, records, gold.clone(), temperature, seed)?;
    let vanilla_gold = PromptRun::generate(vanilla, records, gold, temperature, seed)?;

    Ok(Effectiveness {
        vanilla_before_share: vanilla_before.distribution()?.before,
        vanilla_after_rate: vanilla_before.after_rate_at(&positions),
        prompted_baseline_after_rate: prompted_before.after_rate_at(&positions),
        prompted_after_rate: prompted_single.after_rate_at(&positions),
        prompted_correlation: prompted_gold.after_counts().correlation().ok(),
        vanilla_correlation: vanilla_gold.after_counts().correlation().ok(),
    })
}

/// Continues training a trained pair with `cfg.finetune`, switched to
/// `mode`, on the first `cfg.n_finetune` training records.
pub fn finetune(
    data: &DeskData,
    cfg: &DeskConfig,
    warm: &TrainOutcome,
    mode: TrainMode,
    seed: u64,
    mu: f64,
) -> Result<TrainOutcome> {
    let tc = TrainConfig {
        mode,
        rng_seed: seed,
        mu,
        ..cfg.finetune.clone()
    };
    let subset = &data.train[..cfg.n_finetune.min(data.train.len())];
    train(
        &data.codec,
        subset,
        &data.dev,
        warm.storyline.clone(),
        warm.story.clone(),
        &tc,
        &mut (),
    )
}

pub fn test_perplexity(data: &DeskData, cfg: &DeskConfig, out: &TrainOutcome) -> Result<f64> {
    reference_perplexity(
        &data.codec,
        &out.storyline,
        &out.story,
        &data.test,
        cfg.eval_temperature,
        cfg.eval_seed,
    )
}

/// RL and vanilla end-to-end fine-tuning from the same trained pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRun {
    pub seed: u64,
    pub rl_perplexity: f64,
    pub e2e_perplexity: f64,
    /// End-to-end fine-tuning that leaves the storyline model fixed.
    pub e2e_fixed_storyline_perplexity: f64,
    pub rl_epoch_rewards: Vec<f64>,
    /// Rank correlation of the RL mean reward with the epoch index.
    pub reward_trend: Option<f64>,
}

pub fn compare_rl_e2e(
    data: &DeskData,
    cfg: &DeskConfig,
    warm: &TrainOutcome,
    seeds: &[u64],
) -> Result<Vec<PairedRun>> {
    seeds
        .iter()
        .map(|&seed| {
            let rl = finetune(data, cfg, warm, TrainMode::Rl, seed, cfg.finetune.mu)?;
            let e2e = finetune(data, cfg, warm, TrainMode::E2e, seed, cfg.finetune.mu)?;
            let fixed_cfg = DeskConfig {
                finetune: TrainConfig {
                    e2e_storyline_loss: false,
                    ..cfg.finetune.clone()
                },
                ..cfg.clone()
            };
            let fixed = finetune(
                data,
                &fixed_cfg,
                warm,
                TrainMode::E2e,
                seed,
                cfg.finetune.mu,
            )?;
            let rewards: Vec<f64> = rl.epochs.iter().filter_map(|e| e.reward_mean).collect();
            let epochs: Vec<f64> = (0..rewards.len()).map(|i| i as f64).collect();
            Ok(PairedRun {
                seed,
                rl_perplexity: test_perplexity(data, cfg, &rl)?,
                e2e_perplexity: test_perplexity(data, cfg, &e2e)?,
                e2e_fixed_storyline_perplexity: test_perplexity(data, cfg, &fixed)?,
                reward_trend: spearman(&epochs, &rewards).ok(),
                rl_epoch_rewards: rewards,
            })
        })
        .collect()
}

/// One point of the mixture sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub mu: f64,
    pub perplexity: f64,
    pub coverage: f64,
}

/// RL fine-tuning per mixture value with otherwise identical settings;
/// measures test perplexity and trigger coverage under gold prompts.
pub fn mixture_sweep(
    data: &DeskData,
    cfg: &DeskConfig,
    warm: &TrainOutcome,
    mus: &[f64],
) -> Result<Vec<SweepPoint>> {
    let gold: Vec<Vec<TemporalRelation>> = data
        .test
        .iter()
        .map(|r| r.prompts.clone().unwrap_or_default())
        .collect();
    mus.iter()
        .map(|&mu| {
            let out = finetune(data, cfg, warm, TrainMode::Rl, cfg.finetune.rng_seed, mu)?;
            let pipeline =
                Pipeline::new(data.codec.clone(), out.storyline.clone(), out.story.clone())
                    .with_n_events(cfg.synthetic.n_events);
            let run = PromptRun::generate(
                &pipeline,
                &data.test,
                gold.clone(),
                cfg.eval_temperature,
                cfg.eval_seed,
            )?;
            Ok(SweepPoint {
                mu,
                perplexity: test_perplexity(data, cfg, &out)?,
                coverage: run.coverage().unwrap_or(0.0),
            })
        })
        .collect()
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("mu,perplexity,coverage\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.mu, p.perplexity, p.coverage);
    }
    out
}
