//! Reproducible runs: configuration files, saved artifacts and the
//! streaming training loop over on-disk datasets.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::{
    read_dataset, read_labels, read_manifest, stream_epoch, DiskFetch, LoaderConfig,
    SyntheticSample, TaskMode, TrunkManifest, LABELS_FILE,
};
use crate::decode::{DecodeParams, TokenTrie};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalMode, EvalReport};
use crate::model::{GitModel, ModelConfig};
use crate::tasks::{self, Strategy};
use crate::train::{write_loss_csv, Example, LossRecord, TrainConfig, Trainer};
use crate::vocab::{Vocabulary, UNK};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const MODEL_CONFIG_FILE: &str = "model.toml";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const RUN_FILE: &str = "run.toml";
pub const LOSS_FILE: &str = "loss.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoaderSection {
    /// Permute the trunk visit order every epoch.
    pub reshuffle_trunks: bool,
}

impl Default for LoaderSection {
    fn default() -> Self {
        LoaderSection {
            reshuffle_trunks: false,
        }
    }
}

/// Everything a training or evaluation run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskMode,
    /// Dataset directories; several are streamed round-robin.
    pub train_data: Vec<PathBuf>,
    pub eval_data: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Start from a previous run directory instead of random weights.
    pub init_checkpoint: Option<PathBuf>,
    /// Passes over the training data; overrides `train.total_iters`.
    pub epochs: Option<usize>,
    /// VQA only: every sample also contributes its caption as an example.
    pub mix_caption: bool,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeParams,
    pub loader: LoaderSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: TaskMode::Caption,
            train_data: Vec::new(),
            eval_data: None,
            labels: None,
            out_dir: PathBuf::from("runs"),
            init_checkpoint: None,
            epochs: None,
            mix_caption: false,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            decode: DecodeParams::default(),
            loader: LoaderSection::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML without touching the filesystem.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format("run config", e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Checks the nested configs and that every referenced input exists.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.decode.validate()?;
        if self.epochs == Some(0) {
            return Err(Error::Validation("epochs must be at least 1".into()));
        }
        let must_exist = |p: &Path, what: &str| {
            if p.exists() {
                Ok(())
            } else {
                Err(Error::Validation(format!("{what} {} does not exist", p.display())))
            }
        };
        for d in &self.train_data {
            must_exist(&d.join(crate::data::MANIFEST_FILE), "training manifest")?;
        }
        if let Some(d) = &self.eval_data {
            must_exist(&d.join(crate::data::MANIFEST_FILE), "evaluation manifest")?;
        }
        if let Some(p) = &self.labels {
            must_exist(p, "labels file")?;
        }
        if let Some(p) = &self.init_checkpoint {
            must_exist(&p.join(CHECKPOINT_FILE), "checkpoint")?;
        }
        Ok(())
    }

    /// Validation for training, which additionally needs data.
    pub fn validate_for_training(&self) -> Result<()> {
        if self.train_data.is_empty() {
            return Err(Error::Validation("train_data lists no dataset".into()));
        }
        self.validate()
    }
}

/// A trained model with the vocabulary and task it was trained for.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: GitModel<f32>,
    pub vocab: Vocabulary,
    pub task: TaskMode,
}

impl TrainedModel {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        checkpoint::save(&dir.join(CHECKPOINT_FILE), self.model.params())?;
        let meta = ModelMeta {
            task: self.task,
            tokenizer: self.vocab.mode(),
            model: self.model.config().clone(),
        };
        let mpath = dir.join(MODEL_CONFIG_FILE);
        fs::write(&mpath, toml::to_string(&meta).expect("model meta serializes"))
            .map_err(|e| Error::io(&mpath, e))?;
        let vpath = dir.join(VOCAB_FILE);
        fs::write(&vpath, self.vocab.to_text()).map_err(|e| Error::io(&vpath, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MODEL_CONFIG_FILE);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let meta: ModelMeta =
            toml::from_str(&text).map_err(|e| Error::format("model config", e.message().to_string()))?;
        let vpath = dir.join(VOCAB_FILE);
        let vtext = fs::read_to_string(&vpath).map_err(|e| Error::io(&vpath, e))?;
        let vocab = Vocabulary::parse(&vtext, meta.tokenizer)?;
        if vocab.len() != meta.model.vocab_size {
            return Err(Error::format(
                "vocabulary",
                format!("{} tokens but the model expects {}", vocab.len(), meta.model.vocab_size),
            ));
        }
        let params = checkpoint::load(&dir.join(CHECKPOINT_FILE))?;
        Ok(TrainedModel {
            model: GitModel::from_params(meta.model, params)?,
            vocab,
            task: meta.task,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelMeta {
    task: TaskMode,
    tokenizer: crate::vocab::TokenizerMode,
    model: ModelConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps: usize,
    pub epochs: usize,
    /// Mean batch loss of every epoch, in order.
    pub epoch_losses: Vec<f64>,
    pub trace: Vec<LossRecord>,
    pub out_dir: PathBuf,
}

/// One training example per sample: VQA samples become question-prefixed
/// examples when the task is VQA; anything else trains on its caption text.
pub fn sample_example(
    sample: &SyntheticSample,
    vocab: &Vocabulary,
    task: TaskMode,
    max_frames: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Example> {
    let t = match (task, &sample.question) {
        (TaskMode::Vqa, None) => TaskMode::Caption,
        _ => task,
    };
    tasks::to_example(sample, vocab, t, max_frames, rng)
}

fn load_all(dirs: &[PathBuf]) -> Result<Vec<SyntheticSample>> {
    let mut out = Vec::new();
    for d in dirs {
        out.extend(read_dataset(d)?);
    }
    Ok(out)
}

/// Trains according to `cfg` and writes artifacts to `cfg.out_dir`.
pub fn run_training(cfg: &RunConfig) -> Result<(TrainedModel, TrainSummary)> {
    cfg.validate_for_training()?;
    let manifests: Vec<(PathBuf, TrunkManifest)> = cfg
        .train_data
        .iter()
        .map(|d| read_manifest(d).map(|m| (d.clone(), m)))
        .collect::<Result<_>>()?;
    // Vocabulary and model shape come from a first read of the text fields.
    let samples = load_all(&cfg.train_data)?;
    if samples.is_empty() {
        return Err(Error::Validation("training data is empty".into()));
    }
    let (model, vocab) = match &cfg.init_checkpoint {
        Some(dir) => {
            let prev = TrainedModel::load(dir)?;
            check_coverage(&prev.vocab, &samples)?;
            (prev.model, prev.vocab)
        }
        None => {
            let mut corpus = tasks::corpus(&samples);
            let extra = match &cfg.labels {
                Some(p) => read_labels(p)?,
                None => Vec::new(),
            };
            corpus.extend(extra.iter().map(String::as_str));
            let vocab = Vocabulary::build(&corpus, cfg.task.tokenizer())?;
            let mcfg = tasks::fit_model_config(&cfg.model, &samples, &vocab, cfg.task)?;
            (GitModel::new(mcfg, cfg.train.seed)?, vocab)
        }
    };
    let mixing = cfg.mix_caption && cfg.task == TaskMode::Vqa;
    let n = samples.len() * if mixing { 2 } else { 1 };
    drop(samples);
    let steps_per_epoch = n.div_ceil(cfg.train.batch_size);
    let mut tcfg = cfg.train.clone();
    if let Some(e) = cfg.epochs {
        tcfg.total_iters = e * steps_per_epoch;
        tcfg.warmup_iters = tcfg.warmup_iters.min(tcfg.total_iters);
    }
    let max_frames = model.config().max_frames;
    let mut trainer = Trainer::new(model, tcfg.clone())?;
    let mut epoch_losses = Vec::new();
    let mut epoch = 0u64;
    while !trainer.is_finished() {
        let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
        rng.set_stream(epoch);
        let mut streams = Vec::new();
        let mut handles = Vec::new();
        for (dir, m) in &manifests {
            let lcfg = LoaderConfig {
                epoch,
                reshuffle_trunks: cfg.loader.reshuffle_trunks,
                ..LoaderConfig::new(1, tcfg.seed)
            };
            let (mut s, h) = stream_epoch(m, lcfg, Arc::new(DiskFetch::new(dir)))?;
            streams.push(s.remove(0));
            handles.push(h);
        }
        let (mut sum, mut count) = (0.0, 0usize);
        let mut batch = Vec::with_capacity(tcfg.batch_size);
        let mut live = streams.len();
        let mut exhausted = vec![false; streams.len()];
        'epoch: while live > 0 {
            for (i, s) in streams.iter_mut().enumerate() {
                if exhausted[i] {
                    continue;
                }
                match s.next() {
                    None => {
                        exhausted[i] = true;
                        live -= 1;
                    }
                    Some(item) => {
                        let item = item?;
                        let mut tasks = vec![cfg.task];
                        if mixing && item.question.is_some() {
                            tasks.push(TaskMode::Caption);
                        }
                        for t in tasks {
                            batch.push(sample_example(&item, &vocab, t, max_frames, &mut rng)?);
                            if batch.len() == tcfg.batch_size {
                                sum += trainer.step(&batch)?;
                                count += 1;
                                batch.clear();
                                if trainer.is_finished() {
                                    break 'epoch;
                                }
                            }
                        }
                    }
                }
            }
        }
        if !batch.is_empty() && !trainer.is_finished() {
            sum += trainer.step(&batch)?;
            count += 1;
        }
        drop(streams);
        for h in handles {
            h.finish();
        }
        if count == 0 {
            break;
        }
        epoch_losses.push(sum / count as f64);
        epoch += 1;
    }
    let steps = trainer.steps_done();
    let (model, trace) = trainer.into_parts();
    let trained = TrainedModel {
        model,
        vocab,
        task: cfg.task,
    };
    trained.save(&cfg.out_dir)?;
    write_loss_csv(&cfg.out_dir.join(LOSS_FILE), &trace)?;
    let rpath = cfg.out_dir.join(RUN_FILE);
    fs::write(&rpath, cfg.to_toml()).map_err(|e| Error::io(&rpath, e))?;
    Ok((
        trained,
        TrainSummary {
            steps,
            epochs: epoch_losses.len(),
            epoch_losses,
            trace,
            out_dir: cfg.out_dir.clone(),
        },
    ))
}

fn check_coverage(vocab: &Vocabulary, samples: &[SyntheticSample]) -> Result<()> {
    for text in tasks::corpus(samples) {
        if vocab.encode(text).contains(&UNK) {
            return Err(Error::Validation(format!(
                "checkpoint vocabulary cannot encode {text:?}"
            )));
        }
    }
    Ok(())
}

/// Label set for constrained decoding: an explicit file, else the labels
/// file stored next to the data.
pub fn resolve_labels(explicit: Option<&Path>, data_dir: Option<&Path>) -> Result<Vec<String>> {
    match (explicit, data_dir) {
        (Some(p), _) => read_labels(p),
        (None, Some(d)) if d.join(LABELS_FILE).exists() => read_labels(&d.join(LABELS_FILE)),
        _ => Err(Error::Validation(
            "constrained decoding needs a labels file".into(),
        )),
    }
}

/// Generates predictions for `samples` and scores them in `mode`. Voc-prior
/// mode decodes under a trie over `labels`.
pub fn evaluate_model(
    trained: &TrainedModel,
    samples: &[SyntheticSample],
    mode: EvalMode,
    params: &DecodeParams,
    labels: Option<&[String]>,
    seed: u64,
) -> Result<EvalReport> {
    let trie;
    let strategy = if mode == EvalMode::VocPrior {
        let labels = labels
            .ok_or_else(|| Error::Validation("voc-prior evaluation needs a labels file".into()))?;
        trie = TokenTrie::build(labels, &trained.vocab)?;
        Strategy::Constrained(params.clone(), &trie)
    } else {
        Strategy::Free(params.clone())
    };
    let preds = tasks::predict_all(&trained.model, &trained.vocab, samples, trained.task, &strategy, seed)?;
    let gts = tasks::ground_truths(samples, trained.task)?;
    evaluate(&preds, &gts, mode, labels)
}
