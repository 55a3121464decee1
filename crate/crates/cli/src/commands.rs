use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use flashback::corpus::{
    annotate_corpus, benchmark_annotator, build_pretraining_storylines, generate_synthetic_corpus,
    load_caters_labels, load_corpus, load_external_events, read_jsonl, split_corpus,
    split_sentences, write_jsonl, DatasetProfile, MarkerAnnotator, RelationAnnotator, StoryRecord,
    VoteFileAnnotator,
};
use flashback::evaluation::{
    evaluate, load_annotations, ols_regress, regression_rows, summarize_by_model, AnnotationRecord,
    EvalInputs, LanguageScorer, ModelScorer, PREDICTORS,
};
use flashback::experiments::{mixture_sweep, sweep_csv, DeskConfig, DeskData};
use flashback::models::{
    load_checkpoint, save_checkpoint, Codec, DecodeStrategy, GenerationRecord, ModelRole, Pipeline,
    SeqModel, SeqModelConfig, Vocabulary,
};
use flashback::storyline::TemporalRelation;
use flashback::training::{
    pretrain_storyline, reference_perplexity, train, EpochReport, StepMetrics, TrainMode,
    TrainObserver, TrainOutcome,
};
use flashback::Error;
use serde::{Deserialize, Serialize};

use crate::config::{PromptSource, RunConfig};

const STORYLINE_FILE: &str = "storyline.fbgen";
const STORY_FILE: &str = "story.fbgen";
const PRETRAINED_FILE: &str = "storyline_pretrained.fbgen";

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    emit(&(serde_json::to_string_pretty(value)? + "\n"))
}

fn load_vocab(cfg: &RunConfig) -> Result<Vocabulary> {
    let path = &cfg.paths.vocab;
    let text = fs::read_to_string(path).with_context(|| {
        format!(
            "reading vocabulary {} (run preprocess first)",
            path.display()
        )
    })?;
    serde_json::from_str(&text).with_context(|| format!("parsing vocabulary {}", path.display()))
}

fn make_codec(cfg: &RunConfig, vocab: Vocabulary) -> Codec {
    let codec = Codec::new(vocab, cfg.conventions.clone(), cfg.profile.keep_first_k());
    if cfg.prompt_free {
        codec.without_prompts()
    } else {
        codec
    }
}

struct Splits {
    all: Vec<StoryRecord>,
    train: Vec<StoryRecord>,
    dev: Vec<StoryRecord>,
    test: Vec<StoryRecord>,
}

fn load_splits(cfg: &RunConfig) -> Result<Splits> {
    let path = &cfg.paths.corpus;
    let all = load_corpus(path)
        .with_context(|| format!("reading corpus {} (run preprocess first)", path.display()))?;
    let (train, dev, test) = split_corpus(&all, cfg.split.n_dev, cfg.split.n_test);
    Ok(Splits {
        all,
        train,
        dev,
        test,
    })
}

fn load_model(path: &Path, codec: &Codec) -> Result<SeqModel> {
    let ckpt = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    let (want, got) = (codec.vocab.fingerprint(), ckpt.codec.vocab.fingerprint());
    if want != got {
        return Err(Error::VocabularyMismatch(want, got))
            .with_context(|| path.display().to_string());
    }
    Ok(ckpt.model)
}

/// The trained pair from the checkpoint directory, with the codec stored in
/// the storyline checkpoint.
fn load_pipeline(cfg: &RunConfig) -> Result<(Pipeline, Codec)> {
    let dir = &cfg.paths.checkpoints;
    let path = dir.join(STORYLINE_FILE);
    let storyline = load_checkpoint(&path)
        .with_context(|| format!("loading {} (run train first)", path.display()))?;
    let story = load_model(&dir.join(STORY_FILE), &storyline.codec)?;
    let codec = storyline.codec;
    let mut pipeline = Pipeline::new(codec.clone(), storyline.model, story);
    if let Some(n) = cfg.n_events() {
        pipeline = pipeline.with_n_events(n);
    }
    Ok((pipeline, codec))
}

fn strategy(temperature: Option<f64>, seed: u64, index: usize) -> DecodeStrategy {
    match temperature {
        Some(temperature) => DecodeStrategy::Sample {
            temperature,
            seed: seed
                .wrapping_mul(0x2545_F491_4F6C_DD1D)
                .wrapping_add(index as u64),
        },
        None => DecodeStrategy::Greedy,
    }
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogLine<'a> {
    Step(&'a StepMetrics),
    Epoch(&'a EpochReport),
}

/// Writes the metrics JSONL and, when given a directory, per-epoch
/// checkpoints.
struct RunLog {
    out: BufWriter<File>,
    checkpoints: Option<(PathBuf, Codec)>,
    last_epoch: Option<usize>,
}

impl RunLog {
    fn create(path: &Path, checkpoints: Option<(PathBuf, Codec)>) -> Result<Self> {
        ensure_parent(path)?;
        let out = BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        );
        Ok(RunLog {
            out,
            checkpoints,
            last_epoch: None,
        })
    }

    fn line(&mut self, line: &LogLine) -> flashback::Result<()> {
        serde_json::to_writer(&mut self.out, line)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }
}

impl TrainObserver for RunLog {
    fn on_step(&mut self, metrics: &StepMetrics) -> flashback::Result<()> {
        self.line(&LogLine::Step(metrics))
    }

    fn on_epoch(
        &mut self,
        report: &EpochReport,
        storyline: &SeqModel,
        story: &SeqModel,
    ) -> flashback::Result<()> {
        self.line(&LogLine::Epoch(report))?;
        self.out.flush()?;
        if let Some((dir, codec)) = &self.checkpoints {
            let dir = dir.join(format!("epoch{}", report.epoch));
            fs::create_dir_all(&dir)?;
            save_checkpoint(
                &dir.join(STORYLINE_FILE),
                ModelRole::Storyline,
                storyline,
                codec,
            )?;
            save_checkpoint(&dir.join(STORY_FILE), ModelRole::Story, story, codec)?;
            self.last_epoch = Some(report.epoch);
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct PreprocessSummary {
    records: usize,
    dropped: usize,
    vocab_size: usize,
    annotation: flashback::corpus::AnnotationSummary,
}

pub fn preprocess(cfg: &RunConfig) -> Result<()> {
    let paths = &cfg.paths;
    let mut records = match &paths.raw_corpus {
        Some(path) => {
            let mut records = load_corpus(path)
                .with_context(|| format!("reading raw corpus {}", path.display()))?;
            let external = paths
                .events
                .as_deref()
                .map(load_external_events)
                .transpose()
                .context("reading external events")?;
            for r in &mut records {
                if external.is_some() || r.events.is_empty() {
                    r.extract_events(external.as_ref());
                }
            }
            records
        }
        None if cfg.profile == DatasetProfile::Synthetic => {
            generate_synthetic_corpus(&cfg.synthetic)
        }
        None => bail!(
            "paths.raw_corpus is required for the {:?} profile",
            cfg.profile
        ),
    };
    let before = records.len();
    if let Some(n) = cfg.n_events() {
        records.retain(|r| r.events.len() == n);
    }
    if let Some(max) = cfg.profile.max_story_words() {
        records.retain(|r| {
            r.sentences
                .iter()
                .map(|s| s.split_whitespace().count())
                .sum::<usize>()
                <= max
        });
    }
    let dropped = before - records.len();
    if dropped > 0 {
        log::warn!(
            "dropped {dropped} records that do not fit the {:?} profile",
            cfg.profile
        );
    }
    if records.is_empty() {
        bail!("no records left after preprocessing");
    }

    let annotator: Box<dyn RelationAnnotator> = match &paths.votes {
        Some(p) => Box::new(
            VoteFileAnnotator::load(p).with_context(|| format!("reading votes {}", p.display()))?,
        ),
        None => Box::new(MarkerAnnotator),
    };
    let annotation = annotate_corpus(&mut records, annotator.as_ref());

    let mut texts: Vec<String> = Vec::new();
    for r in &records {
        texts.push(r.prefix.clone());
        texts.extend(r.sentences.iter().cloned());
        if let Ok(s) = r.storyline() {
            texts.push(s.serialize(true, &cfg.conventions));
        }
    }
    if let Some(p) = &paths.pretrain_text {
        texts.push(fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?);
    }
    let vocab = Vocabulary::build_from_texts(texts.iter().map(String::as_str), &cfg.conventions)?;

    ensure_parent(&paths.corpus)?;
    write_jsonl(&paths.corpus, &records)?;
    write_json(&paths.vocab, &vocab)?;
    let summary = PreprocessSummary {
        records: records.len(),
        dropped,
        vocab_size: vocab.len(),
        annotation,
    };
    write_json(&paths.reports.join("preprocess.json"), &summary)?;
    print_json(&summary)
}

fn new_model(cfg: &SeqModelConfig, vocab_size: usize) -> Result<SeqModel> {
    Ok(SeqModel::new(cfg.clone(), vocab_size)?)
}

pub fn pretrain(cfg: &RunConfig) -> Result<()> {
    let path = cfg
        .paths
        .pretrain_text
        .as_ref()
        .context("paths.pretrain_text is not set")?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let sentences: Vec<String> = text.lines().flat_map(split_sentences).collect();
    let set = build_pretraining_storylines(&sentences, cfg.n_events().unwrap_or(5));
    let codec = make_codec(cfg, load_vocab(cfg)?);
    let model = new_model(&cfg.storyline_model, codec.vocab.len())?;
    let mut log = RunLog::create(&cfg.paths.reports.join("pretrain_metrics.jsonl"), None)?;
    let model = pretrain_storyline(model, &codec, &set.storylines, &cfg.pretrain, &mut log)?;
    log.out.flush()?;
    let out = cfg.paths.checkpoints.join(PRETRAINED_FILE);
    ensure_parent(&out)?;
    save_checkpoint(&out, ModelRole::Storyline, &model, &codec)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        storylines: usize,
        noisy_spans: usize,
        dropped_sentences: usize,
        placeholder_events: usize,
        checkpoint: &'a Path,
    }
    print_json(&Summary {
        storylines: set.storylines.len(),
        noisy_spans: set.noisy_spans,
        dropped_sentences: set.dropped_sentences,
        placeholder_events: set.placeholder_events,
        checkpoint: &out,
    })
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    mode: TrainMode,
    best_epoch: usize,
    best_checkpoint: String,
    epochs: &'a [EpochReport],
}

pub fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let codec = make_codec(cfg, load_vocab(cfg)?);
    let splits = load_splits(cfg)?;
    let storyline = match &cfg.paths.init_storyline {
        Some(p) => load_model(p, &codec)?,
        None => new_model(&cfg.storyline_model, codec.vocab.len())?,
    };
    let story = match &cfg.paths.init_story {
        Some(p) => load_model(p, &codec)?,
        None => new_model(&cfg.story_model, codec.vocab.len())?,
    };
    let dir = &cfg.paths.checkpoints;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut log = RunLog::create(
        &cfg.paths.reports.join("train_metrics.jsonl"),
        Some((dir.clone(), codec.clone())),
    )?;
    let out = match train(
        &codec,
        &splits.train,
        &splits.dev,
        storyline,
        story,
        &cfg.train,
        &mut log,
    ) {
        Ok(out) => out,
        Err(e) => {
            let _ = log.out.flush();
            let kept = log
                .last_epoch
                .map_or("none".to_string(), |e| format!("epoch{e}"));
            return Err(e)
                .with_context(|| format!("training failed; last good checkpoint: {kept}"));
        }
    };
    log.out.flush()?;
    save_checkpoint(
        &dir.join(STORYLINE_FILE),
        ModelRole::Storyline,
        &out.storyline,
        &codec,
    )?;
    save_checkpoint(&dir.join(STORY_FILE), ModelRole::Story, &out.story, &codec)?;
    let summary = TrainSummary {
        mode: cfg.train.mode,
        best_epoch: out.best_epoch,
        best_checkpoint: format!("epoch{}", out.best_epoch),
        epochs: &out.epochs,
    };
    write_json(&cfg.paths.reports.join("train_summary.json"), &summary)?;
    print_json(&summary)
}

/// One line of the generations file: a generation or a per-record failure.
#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GenLine {
    Ok(GenerationRecord),
    Failed { id: String, error: String },
}

#[derive(Deserialize)]
struct PromptLine {
    id: String,
    prompts: Vec<TemporalRelation>,
}

fn parse_relations(text: &str) -> Result<Vec<TemporalRelation>> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|w| !w.is_empty())
        .map(|w| w.parse().map_err(anyhow::Error::from))
        .collect()
}

pub fn generate(cfg: &RunConfig) -> Result<()> {
    let (pipeline, _) = load_pipeline(cfg)?;
    let splits = load_splits(cfg)?;
    let gen = &cfg.generation;
    let mut records: Vec<&StoryRecord> = splits
        .test
        .iter()
        .filter(|r| !gen.single_after || r.after_count() == 1)
        .collect();
    if let Some(limit) = gen.limit {
        records.truncate(limit);
    }
    let from_file: BTreeMap<String, Vec<TemporalRelation>> = match gen.prompts {
        PromptSource::File => {
            let path = gen
                .prompts_file
                .as_ref()
                .context("generation.prompts_file is not set")?;
            read_jsonl::<PromptLine>(path)?
                .into_iter()
                .map(|l| (l.id, l.prompts))
                .collect()
        }
        _ => BTreeMap::new(),
    };
    let literal = match gen.prompts {
        PromptSource::Literal => Some(parse_relations(&gen.literal)?),
        _ => None,
    };

    let mut lines = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let prompts = match gen.prompts {
            PromptSource::Gold => r
                .prompts
                .clone()
                .ok_or_else(|| "record has no annotated prompts".to_string()),
            PromptSource::File => from_file
                .get(&r.id)
                .cloned()
                .ok_or_else(|| "no prompts in the prompts file".to_string()),
            PromptSource::Literal => Ok(literal.clone().unwrap_or_default()),
        };
        let result = prompts.and_then(|p| {
            pipeline
                .generate_story(
                    &r.prefix,
                    &r.events,
                    &p,
                    &strategy(gen.temperature, gen.seed, i),
                )
                .map_err(|e| e.to_string())
        });
        lines.push(match result {
            Ok(g) => GenLine::Ok(g.to_record(&r.id)),
            Err(error) => {
                log::warn!("record {}: {error}", r.id);
                GenLine::Failed {
                    id: r.id.clone(),
                    error,
                }
            }
        });
    }
    ensure_parent(&cfg.paths.generations)?;
    write_jsonl(&cfg.paths.generations, &lines)?;
    let failed = lines
        .iter()
        .filter(|l| matches!(l, GenLine::Failed { .. }))
        .count();
    print_json(&serde_json::json!({
        "generations": lines.len() - failed,
        "failed": failed,
        "path": cfg.paths.generations,
    }))
}

/// The same model with a length bound that admits any decoded story,
/// since re-tokenizing a generation can exceed the decode limit.
fn unbounded(model: &SeqModel, decode_limit: usize) -> Result<SeqModel> {
    let config = SeqModelConfig {
        max_len: model.config().max_len.max(decode_limit) * 2,
        ..model.config().clone()
    };
    Ok(SeqModel::from_params(
        config,
        model.vocab_size(),
        model.params().to_vec(),
    )?)
}

pub fn evaluate_cmd(cfg: &RunConfig) -> Result<()> {
    let splits = load_splits(cfg)?;
    let path = &cfg.paths.generations;
    let generations: Vec<GenerationRecord> = read_jsonl::<GenLine>(path)
        .with_context(|| {
            format!(
                "reading generations {} (run generate first)",
                path.display()
            )
        })?
        .into_iter()
        .filter_map(|l| match l {
            GenLine::Ok(g) => Some(g),
            GenLine::Failed { .. } => None,
        })
        .collect();
    let annotations = cfg
        .paths
        .annotations
        .as_deref()
        .map(load_annotations)
        .transpose()?;

    let pipeline = match load_pipeline(cfg) {
        Ok((p, _)) => Some(p),
        Err(e) => {
            log::warn!("no trained checkpoints, model-based metrics absent: {e:#}");
            None
        }
    };
    let scorer = match pipeline.as_ref().filter(|_| cfg.evaluation.model_scorer) {
        Some(p) => Some(ModelScorer {
            model: unbounded(&p.story_model, p.max_story_len)?,
            codec: p.codec.clone(),
        }),
        None => None,
    };
    let ref_ppl = match pipeline
        .as_ref()
        .filter(|_| cfg.evaluation.reference_perplexity)
    {
        Some(p) => match reference_perplexity(
            &p.codec,
            &p.storyline_model,
            &p.story_model,
            &splits.test,
            cfg.evaluation.temperature,
            cfg.evaluation.seed,
        ) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("reference perplexity unavailable: {e}");
                None
            }
        },
        None => None,
    };
    let report = evaluate(&EvalInputs {
        records: &splits.all,
        generations: &generations,
        conv: &cfg.conventions,
        scorer: scorer.as_ref().map(|s| s as &dyn LanguageScorer),
        reference_perplexity: ref_ppl,
        annotations: annotations.as_deref(),
    })?;
    write_json(&cfg.paths.reports.join("metrics.json"), &report)?;
    fs::write(cfg.paths.reports.join("metrics.csv"), report.to_csv())?;
    print_json(&report)
}

/// Takes the AFTER prompt count of each annotated story from the
/// generations file, when it exists and the annotation lacks one.
fn fill_after_prompts(annotations: &mut [AnnotationRecord], generations: &Path) -> Result<()> {
    if !generations.exists() {
        return Ok(());
    }
    let counts: BTreeMap<String, usize> = read_jsonl::<GenLine>(generations)?
        .into_iter()
        .filter_map(|l| match l {
            GenLine::Ok(g) => Some((
                g.id,
                g.prompts
                    .iter()
                    .filter(|&&p| p == TemporalRelation::After)
                    .count(),
            )),
            GenLine::Failed { .. } => None,
        })
        .collect();
    for a in annotations.iter_mut().filter(|a| a.after_prompts.is_none()) {
        a.after_prompts = counts.get(&a.story_id).copied();
    }
    Ok(())
}

pub fn analyze(cfg: &RunConfig) -> Result<()> {
    let path = cfg
        .paths
        .annotations
        .as_ref()
        .context("paths.annotations is not set")?;
    let mut annotations = load_annotations(path)?;
    fill_after_prompts(&mut annotations, &cfg.paths.generations)?;
    let (y, x) = regression_rows(&annotations);
    let fit = match ols_regress(&y, &x, &PREDICTORS) {
        Ok(fit) => fit,
        Err(Error::RankDeficient) => bail!(
            "the design matrix is rank deficient: a predictor is constant or collinear with others \
             across the {} annotated stories; annotate stories with varying coherence, relations and AFTER counts",
            annotations.len()
        ),
        Err(Error::NotEnoughRows { rows, needed }) => {
            bail!("{rows} annotation rows; the regression needs at least {needed}")
        }
        Err(e) => return Err(e.into()),
    };
    emit(&fit.table())?;
    let summary = serde_json::json!({
        "fit": fit,
        "by_model": summarize_by_model(&annotations)?,
    });
    write_json(&cfg.paths.reports.join("ols.json"), &summary)
}

pub fn benchmark(cfg: &RunConfig) -> Result<()> {
    let pred_path = cfg
        .paths
        .predictions
        .as_ref()
        .context("paths.predictions is not set")?;
    let gold_path = cfg
        .paths
        .caters_gold
        .as_ref()
        .context("paths.caters_gold is not set")?;
    let predictions = fs::read_to_string(pred_path)
        .with_context(|| format!("reading {}", pred_path.display()))?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.parse::<TemporalRelation>())
        .collect::<flashback::Result<Vec<_>>>()?;
    let gold = load_caters_labels(gold_path)?;
    let report = benchmark_annotator(&predictions, &gold)?;
    write_json(&cfg.paths.reports.join("benchmark.json"), &report)?;
    print_json(&report)
}

pub fn sweep(cfg: &RunConfig) -> Result<()> {
    let (pipeline, codec) = load_pipeline(cfg)?;
    let splits = load_splits(cfg)?;
    let data = DeskData {
        codec,
        train: splits.train,
        dev: splits.dev,
        test: splits.test,
    };
    let desk = DeskConfig {
        synthetic: flashback::corpus::SyntheticConfig {
            n_events: cfg.n_events().unwrap_or(cfg.synthetic.n_events),
            ..cfg.synthetic.clone()
        },
        finetune: cfg.sweep.finetune.clone(),
        n_finetune: cfg.sweep.n_finetune,
        eval_temperature: cfg.evaluation.temperature,
        eval_seed: cfg.evaluation.seed,
        ..Default::default()
    };
    let warm = TrainOutcome {
        storyline: pipeline.storyline_model,
        story: pipeline.story_model,
        epochs: Vec::new(),
        best_epoch: 0,
        history: Vec::new(),
    };
    let points = mixture_sweep(&data, &desk, &warm, &cfg.sweep.mus)?;
    let csv = sweep_csv(&points);
    let path = cfg.paths.reports.join("sweep.csv");
    ensure_parent(&path)?;
    fs::write(&path, &csv)?;
    emit(&csv)
}
