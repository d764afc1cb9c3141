use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GitModel, ImageFeatures, Visual};
use crate::tensor::Scalar;
use crate::vocab::{TokenId, BOS, EOS, PAD};

/// Anything that can score the next token given the sequence so far.
pub trait NextTokenScorer {
    fn vocab_size(&self) -> usize;

    /// Log-probabilities over the vocabulary for the token after `tokens`
    /// (which start with BOS).
    fn log_probs(&self, tokens: &[TokenId]) -> Result<Vec<f64>>;

    /// Longest input the scorer accepts.
    fn max_input_len(&self) -> usize {
        usize::MAX
    }
}

/// Restricts which tokens may follow a partial generation.
pub trait Constraint {
    /// Allowed next ids after `generated` (tokens after the prefix).
    fn allowed(&self, generated: &[TokenId]) -> Vec<TokenId>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeParams {
    pub beam: usize,
    pub length_penalty: f64,
    pub max_steps: usize,
    /// Ids that are never generated.
    pub banned: Vec<TokenId>,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            beam: 4,
            length_penalty: 0.6,
            max_steps: 40,
            banned: vec![BOS, PAD],
        }
    }
}

impl DecodeParams {
    pub fn greedy() -> Self {
        DecodeParams {
            beam: 1,
            length_penalty: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 {
            return Err(Error::Validation("beam must be at least 1".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Validation("max_steps must be at least 1".into()));
        }
        if !self.length_penalty.is_finite() {
            return Err(Error::Validation("length_penalty must be finite".into()));
        }
        Ok(())
    }
}

/// `((5 + len) / 6)^alpha`
pub fn length_penalty(len: usize, alpha: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(alpha)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated ids after the prefix; a finished hypothesis ends in EOS.
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    pub finished: bool,
}

impl Hypothesis {
    pub fn score(&self, alpha: f64) -> f64 {
        self.logprob / length_penalty(self.tokens.len(), alpha)
    }

    /// Generated ids without the closing EOS.
    pub fn output(&self) -> &[TokenId] {
        if self.finished {
            &self.tokens[..self.tokens.len() - 1]
        } else {
            &self.tokens
        }
    }
}

/// Higher score first, then lexicographically smaller id sequence.
fn rank(a: &Hypothesis, b: &Hypothesis, alpha: f64) -> Ordering {
    b.score(alpha)
        .total_cmp(&a.score(alpha))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

fn candidates(
    log_probs: &[f64],
    banned: &[TokenId],
    allowed: Option<Vec<TokenId>>,
) -> Vec<TokenId> {
    let ids: Vec<TokenId> = match allowed {
        Some(ids) => ids,
        None => (0..log_probs.len() as TokenId).collect(),
    };
    ids.into_iter()
        .filter(|t| (*t as usize) < log_probs.len() && !banned.contains(t))
        .collect()
}

fn step_budget(scorer: &dyn NextTokenScorer, prefix: &[TokenId], max_steps: usize) -> usize {
    let room = scorer.max_input_len().saturating_add(1).saturating_sub(prefix.len());
    max_steps.min(room)
}

/// Argmax decoding (lowest id wins ties) until EOS or `max_steps`. Returns
/// the generated ids without EOS.
pub fn greedy_decode(
    scorer: &dyn NextTokenScorer,
    prefix: &[TokenId],
    params: &DecodeParams,
    constraint: Option<&dyn Constraint>,
) -> Result<Vec<TokenId>> {
    let mut tokens = prefix.to_vec();
    let mut out = Vec::new();
    for _ in 0..step_budget(scorer, prefix, params.max_steps) {
        let lp = scorer.log_probs(&tokens)?;
        let cands = candidates(&lp, &params.banned, constraint.map(|c| c.allowed(&out)));
        let Some(best) = cands
            .into_iter()
            .min_by(|&a, &b| lp[b as usize].total_cmp(&lp[a as usize]).then(a.cmp(&b)))
        else {
            break;
        };
        if best == EOS {
            break;
        }
        tokens.push(best);
        out.push(best);
    }
    Ok(out)
}

/// Beam search with length-normalized final ranking.
///
/// Each step expands every live hypothesis over its allowed tokens and sorts
/// the candidates by log-probability. Among the top `beam` candidates, those
/// ending in EOS move to a finished pool of at most `beam` entries; live
/// hypotheses are refilled from the best non-EOS candidates. The search stops
/// early once no live hypothesis can still beat the worst pooled one.
pub fn beam_search(
    scorer: &dyn NextTokenScorer,
    prefix: &[TokenId],
    params: &DecodeParams,
    constraint: Option<&dyn Constraint>,
) -> Result<Hypothesis> {
    params.validate()?;
    let alpha = params.length_penalty;
    let budget = step_budget(scorer, prefix, params.max_steps);
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        logprob: 0.0,
        finished: false,
    }];
    let mut pool: Vec<Hypothesis> = Vec::new();
    let mut seq = prefix.to_vec();

    for _ in 0..budget {
        let mut cands = Vec::new();
        for h in &live {
            seq.truncate(prefix.len());
            seq.extend_from_slice(&h.tokens);
            let lp = scorer.log_probs(&seq)?;
            for t in candidates(&lp, &params.banned, constraint.map(|c| c.allowed(&h.tokens))) {
                let mut tokens = h.tokens.clone();
                tokens.push(t);
                cands.push(Hypothesis {
                    tokens,
                    logprob: h.logprob + lp[t as usize],
                    finished: t == EOS,
                });
            }
        }
        // All candidates share one length, so log-probability orders them.
        cands.sort_by(|a, b| rank(a, b, 0.0));
        let mut next = Vec::with_capacity(params.beam);
        for (r, c) in cands.into_iter().enumerate() {
            if c.finished {
                if r < params.beam {
                    pool.push(c);
                }
            } else if next.len() < params.beam {
                next.push(c);
            } else if r >= params.beam {
                break;
            }
        }
        pool.sort_by(|a, b| rank(a, b, alpha));
        pool.truncate(params.beam);
        live = next;
        if live.is_empty() {
            break;
        }
        if pool.len() == params.beam {
            let worst = pool.last().map(|h| h.score(alpha)).unwrap();
            let best_possible = live
                .iter()
                .map(|h| {
                    let near = h.logprob / length_penalty(h.tokens.len() + 1, alpha);
                    let far = h.logprob / length_penalty(budget, alpha);
                    near.max(far)
                })
                .fold(f64::NEG_INFINITY, f64::max);
            if best_possible < worst {
                break;
            }
        }
    }

    if let Some(best) = pool.into_iter().next() {
        return Ok(best);
    }
    live.sort_by(|a, b| rank(a, b, alpha));
    live.into_iter()
        .next()
        .filter(|h| !h.tokens.is_empty())
        .ok_or_else(|| Error::Contract("beam search produced no hypothesis".into()))
}

/// Scores with a [`GitModel`] over fixed image features.
pub struct ModelScorer<'a, T> {
    model: &'a GitModel<T>,
    features: ImageFeatures<T>,
}

impl<'a, T: Scalar> ModelScorer<'a, T> {
    pub fn new(model: &'a GitModel<T>, visual: &Visual) -> Result<Self> {
        Ok(ModelScorer {
            model,
            features: model.encode_visual(visual)?,
        })
    }

    pub fn from_features(model: &'a GitModel<T>, features: ImageFeatures<T>) -> Self {
        ModelScorer { model, features }
    }
}

impl<T: Scalar> NextTokenScorer for ModelScorer<'_, T> {
    fn vocab_size(&self) -> usize {
        self.model.config().vocab_size
    }

    fn log_probs(&self, tokens: &[TokenId]) -> Result<Vec<f64>> {
        let logits = self.model.decoder_forward(&self.features, tokens)?;
        let last = logits.row(logits.rows() - 1);
        Ok(log_softmax(last.iter().map(|v| v.as_f64())))
    }

    fn max_input_len(&self) -> usize {
        self.model.config().max_text_len
    }
}

pub fn log_softmax(xs: impl Iterator<Item = f64>) -> Vec<f64> {
    let xs: Vec<f64> = xs.collect();
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    xs.into_iter().map(|x| x - lse).collect()
}
