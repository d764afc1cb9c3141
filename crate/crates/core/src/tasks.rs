//! Task adapters: turning samples into training examples and model outputs
//! into task answers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{sample_frames, SyntheticSample, TaskMode};
use crate::decode::{
    constrained_decode, generate_caption, prefix_generate, question_prefix, DecodeParams,
    ModelScorer, TokenTrie,
};
use crate::error::{Error, Result};
use crate::model::{GitModel, ModelConfig, Visual};
use crate::tensor::Scalar;
use crate::train::Example;
use crate::vocab::{Vocabulary, BOS};

/// Every text field that the model reads or writes.
pub fn corpus(samples: &[SyntheticSample]) -> Vec<&str> {
    let mut out = Vec::new();
    for s in samples {
        out.push(s.caption.as_str());
        out.extend(s.question.as_deref());
        out.extend(s.answer.as_deref());
        out.extend(s.label.as_deref());
    }
    out
}

pub fn build_vocab(samples: &[SyntheticSample], task: TaskMode) -> Result<Vocabulary> {
    Vocabulary::build(&corpus(samples), task.tokenizer())
}

/// The string a prediction for `sample` is scored against.
pub fn ground_truth(sample: &SyntheticSample, task: TaskMode) -> Result<&str> {
    let field = match task {
        TaskMode::Vqa => sample.answer.as_deref(),
        TaskMode::Classify => sample.label.as_deref().or(Some(sample.caption.as_str())),
        _ => Some(sample.caption.as_str()),
    };
    field.ok_or_else(|| Error::Input(format!("{task} sample has no answer")))
}

/// Clips longer than `max_frames` are cut to `max_frames` evenly spaced
/// frames starting at a random offset.
pub fn sample_visual(visual: &Visual, max_frames: usize, rng: &mut impl Rng) -> Visual {
    match visual {
        Visual::Video(frames) if frames.len() > max_frames => {
            let idx = sample_frames(frames.len(), max_frames, rng);
            Visual::Video(idx.into_iter().map(|i| frames[i].clone()).collect())
        }
        v => v.clone(),
    }
}

/// A teacher-forced example. VQA examples supervise only the answer.
pub fn to_example(
    sample: &SyntheticSample,
    vocab: &Vocabulary,
    task: TaskMode,
    max_frames: usize,
    rng: &mut impl Rng,
) -> Result<Example> {
    let visual = sample_visual(&sample.visual, max_frames, rng);
    match task {
        TaskMode::Vqa => {
            let (q, a) = match (&sample.question, &sample.answer) {
                (Some(q), Some(a)) => (q, a),
                _ => return Err(Error::Input("vqa sample lacks question or answer".into())),
            };
            Ok(Example::vqa(visual, &vocab.encode(q), &vocab.encode(a)))
        }
        _ => Ok(Example::caption(visual, &vocab.encode(ground_truth(sample, task)?))),
    }
}

/// Decoder input length needed to train on `samples` (BOS plus text).
pub fn required_text_len(samples: &[SyntheticSample], vocab: &Vocabulary, task: TaskMode) -> usize {
    samples
        .iter()
        .map(|s| match (task, &s.question, &s.answer) {
            (TaskMode::Vqa, Some(q), Some(a)) => 1 + vocab.encode(q).len() + vocab.encode(a).len(),
            _ => 1 + ground_truth(s, task).map_or(0, |t| vocab.encode(t).len()),
        })
        .max()
        .unwrap_or(1)
}

/// A model config sized for `samples`; other fields keep `base`.
pub fn fit_model_config(
    base: &ModelConfig,
    samples: &[SyntheticSample],
    vocab: &Vocabulary,
    task: TaskMode,
) -> Result<ModelConfig> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Input("no samples to size the model from".into()))?;
    let img = match &first.visual {
        Visual::Image(i) => i,
        Visual::Video(f) => f
            .first()
            .ok_or_else(|| Error::Input("video sample has no frames".into()))?,
    };
    let cfg = ModelConfig {
        vocab_size: vocab.len(),
        image_size: img.height(),
        channels: img.channels(),
        max_text_len: base.max_text_len.max(required_text_len(samples, vocab, task) + 1),
        ..base.clone()
    };
    cfg.validate()?;
    Ok(cfg)
}

/// How answers are produced at evaluation time.
#[derive(Debug, Clone)]
pub enum Strategy<'a> {
    /// Free generation with the given decoding parameters.
    Free(DecodeParams),
    /// Generation restricted to the labels of a trie.
    Constrained(DecodeParams, &'a TokenTrie),
}

/// Generates the task answer for `sample`. For VQA only the completion after
/// the question is returned.
pub fn predict<T: Scalar>(
    model: &GitModel<T>,
    vocab: &Vocabulary,
    sample: &SyntheticSample,
    task: TaskMode,
    strategy: &Strategy<'_>,
    rng: &mut impl Rng,
) -> Result<String> {
    let visual = sample_visual(&sample.visual, model.config().max_frames, rng);
    let scorer = ModelScorer::new(model, &visual)?;
    let prefix = match (task, &sample.question) {
        (TaskMode::Vqa, Some(q)) => question_prefix(vocab, q, model.config().max_text_len)?,
        (TaskMode::Vqa, None) => return Err(Error::Input("vqa sample has no question".into())),
        _ => vec![BOS],
    };
    match strategy {
        Strategy::Free(p) => match task {
            TaskMode::Vqa => prefix_generate(&scorer, vocab, sample.question.as_deref().unwrap(), p),
            _ => generate_caption(&scorer, vocab, p),
        },
        Strategy::Constrained(p, trie) => {
            Ok(constrained_decode(&scorer, &prefix, trie, p)?.to_string())
        }
    }
}

/// Predictions for every sample, with frame sampling seeded by `seed`.
pub fn predict_all<T: Scalar>(
    model: &GitModel<T>,
    vocab: &Vocabulary,
    samples: &[SyntheticSample],
    task: TaskMode,
    strategy: &Strategy<'_>,
    seed: u64,
) -> Result<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    samples
        .iter()
        .map(|s| predict(model, vocab, s, task, strategy, &mut rng))
        .collect()
}

/// Ground truths of `samples` for `task`.
pub fn ground_truths(samples: &[SyntheticSample], task: TaskMode) -> Result<Vec<String>> {
    samples
        .iter()
        .map(|s| ground_truth(s, task).map(String::from))
        .collect()
}

/// Examples for one pass over `samples` in a seeded random order.
pub fn epoch_examples(
    samples: &[SyntheticSample],
    vocab: &Vocabulary,
    task: TaskMode,
    max_frames: usize,
    seed: u64,
) -> Result<Vec<Example>> {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    order
        .into_iter()
        .map(|i| to_example(&samples[i], vocab, task, max_frames, &mut rng))
        .collect()
}
