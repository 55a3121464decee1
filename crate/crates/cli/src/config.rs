//! Run configuration: one TOML file plus `--set key=value` overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use flashback::corpus::{DatasetProfile, SyntheticConfig};
use flashback::models::SeqModelConfig;
use flashback::storyline::TokenConventions;
use flashback::training::{OptimizerKind, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub profile: DatasetProfile,
    /// Train on prompt-free storylines (the vanilla plan-and-write baseline).
    pub prompt_free: bool,
    pub paths: Paths,
    pub synthetic: SyntheticConfig,
    pub conventions: TokenConventions,
    pub split: Split,
    pub storyline_model: SeqModelConfig,
    pub story_model: SeqModelConfig,
    pub train: TrainConfig,
    pub pretrain: TrainConfig,
    pub generation: Generation,
    pub evaluation: Evaluation,
    pub sweep: Sweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Unannotated corpus JSONL; synthetic profiles generate one when unset.
    pub raw_corpus: Option<PathBuf>,
    /// Externally extracted events, one `{"id", "events"}` line per story.
    pub events: Option<PathBuf>,
    /// Relation votes, one `{"id", "pair_index", "votes"}` line per pair.
    pub votes: Option<PathBuf>,
    /// Plain-text sentences for storyline pretraining, one or more per line.
    pub pretrain_text: Option<PathBuf>,
    pub corpus: PathBuf,
    pub vocab: PathBuf,
    pub checkpoints: PathBuf,
    /// Storyline checkpoint to start training from.
    pub init_storyline: Option<PathBuf>,
    /// Story checkpoint to start training from.
    pub init_story: Option<PathBuf>,
    pub generations: PathBuf,
    pub reports: PathBuf,
    pub annotations: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub caters_gold: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        let work = PathBuf::from("work");
        Paths {
            raw_corpus: None,
            events: None,
            votes: None,
            pretrain_text: None,
            corpus: work.join("corpus.jsonl"),
            vocab: work.join("vocab.json"),
            checkpoints: work.join("checkpoints"),
            init_storyline: None,
            init_story: None,
            generations: work.join("generations.jsonl"),
            reports: work.join("reports"),
            annotations: None,
            predictions: None,
            caters_gold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Split {
    pub n_dev: usize,
    pub n_test: usize,
}

impl Default for Split {
    fn default() -> Self {
        Split {
            n_dev: 200,
            n_test: 400,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptSource {
    /// The corpus annotation.
    Gold,
    /// `{"id", "prompts"}` lines in `generation.prompts_file`.
    File,
    /// `generation.literal` for every record.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Generation {
    pub prompts: PromptSource,
    pub prompts_file: Option<PathBuf>,
    /// Space-separated relations, e.g. `after before before before`.
    pub literal: String,
    /// Keep only test records whose gold prompts contain exactly one AFTER.
    pub single_after: bool,
    /// Sample with this temperature; greedy when unset.
    pub temperature: Option<f64>,
    pub seed: u64,
    pub limit: Option<usize>,
}

impl Default for Generation {
    fn default() -> Self {
        Generation {
            prompts: PromptSource::Gold,
            prompts_file: None,
            literal: String::new(),
            single_after: false,
            temperature: Some(0.7),
            seed: 7,
            limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Evaluation {
    /// Score generations with the trained story model under an empty source.
    pub model_scorer: bool,
    /// Compute reference perplexity from the trained checkpoints.
    pub reference_perplexity: bool,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for Evaluation {
    fn default() -> Self {
        Evaluation {
            model_scorer: true,
            reference_perplexity: true,
            temperature: 0.7,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    pub mus: Vec<f64>,
    /// Fine-tuning settings; `mode` is forced to RL and `mu` set per point.
    pub finetune: TrainConfig,
    /// Leading training records used for fine-tuning.
    pub n_finetune: usize,
}

impl Default for Sweep {
    fn default() -> Self {
        Sweep {
            mus: vec![0.0, 1.0, 10.0, 1000.0],
            finetune: TrainConfig {
                policy_lr: Some(3e-4),
                baseline: flashback::training::Baseline::MovingAverage,
                ..desk_train()
            },
            n_finetune: 3000,
        }
    }
}

fn desk_train() -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        batch_size: 16,
        epochs: 3,
        optimizer: OptimizerKind::Adam,
        grad_clip: Some(5.0),
        temperature: 0.7,
        ..Default::default()
    }
}

fn desk_model() -> SeqModelConfig {
    SeqModelConfig {
        embed_dim: 24,
        hidden_dim: 48,
        max_len: 80,
        ..Default::default()
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            profile: DatasetProfile::Synthetic,
            prompt_free: false,
            paths: Paths::default(),
            synthetic: SyntheticConfig {
                n_stories: 10_000,
                ..Default::default()
            },
            conventions: TokenConventions::default(),
            split: Split::default(),
            storyline_model: desk_model(),
            story_model: SeqModelConfig {
                rng_seed: 18,
                ..desk_model()
            },
            train: desk_train(),
            pretrain: TrainConfig {
                epochs: 1,
                ..desk_train()
            },
            generation: Generation::default(),
            evaluation: Evaluation::default(),
            sweep: Sweep::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (or the defaults) and applies dotted overrides such as
    /// `train.lr=0.001`. Values are parsed as TOML, falling back to strings.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut root = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str::<toml::Table>(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for item in overrides {
            let Some((key, raw)) = item.split_once('=') else {
                bail!("override {item:?} is not of the form key=value");
            };
            set_dotted(&mut root, key.trim(), parse_value(raw.trim()))?;
        }
        let cfg: RunConfig = toml::Value::Table(root)
            .try_into()
            .context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.conventions.validate()?;
        self.storyline_model.validate()?;
        self.story_model.validate()?;
        self.train.validate()?;
        self.pretrain.validate()?;
        self.synthetic.validate()?;
        if let (Some(n), DatasetProfile::Synthetic) = (self.profile.n_events(), self.profile) {
            if self.synthetic.n_events != n {
                bail!(
                    "the synthetic profile has {n} events per story, got synthetic.n_events = {}",
                    self.synthetic.n_events
                );
            }
        }
        Ok(())
    }

    /// Events per story, when the profile fixes it.
    pub fn n_events(&self) -> Option<usize> {
        self.profile.n_events()
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_dotted(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .with_context(|| format!("empty override key {key:?}"))?;
    let mut table = root;
    for part in parts {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .with_context(|| format!("override {key:?}: {part:?} is not a table"))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_are_typed() {
        let cfg = RunConfig::load(
            None,
            &[
                "train.lr=0.5".into(),
                "train.mode=rl".into(),
                "paths.corpus=data/c.jsonl".into(),
                "sweep.mus=[0, 2.5]".into(),
                "generation.temperature=0.9".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.train.lr, 0.5);
        assert_eq!(cfg.train.mode, flashback::training::TrainMode::Rl);
        assert_eq!(cfg.paths.corpus, PathBuf::from("data/c.jsonl"));
        assert_eq!(cfg.sweep.mus, vec![0.0, 2.5]);
        assert_eq!(cfg.generation.temperature, Some(0.9));
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(RunConfig::load(None, &["train.mode=sideways".into()]).is_err());
        assert!(RunConfig::load(None, &["train.lr=0".into()]).is_err());
        assert!(RunConfig::load(None, &["nonsense".into()]).is_err());
        assert!(RunConfig::load(None, &["unknown_key=1".into()]).is_err());
    }
}
