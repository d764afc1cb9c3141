use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use crate::vocab::{TokenId, PAD};

/// Which target positions contribute to the loss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LossMask(Vec<bool>);

impl LossMask {
    pub fn new(bits: Vec<bool>) -> Self {
        LossMask(bits)
    }

    /// Every one of `len` predicted positions counts (captioning).
    pub fn all(len: usize) -> Self {
        LossMask(vec![true; len])
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

/// Loss mask for a question-prefixed answer: the positions predicting the
/// question are excluded; the answer tokens and the closing EOS count.
pub fn vqa_loss_mask(question_len: usize, answer_len: usize) -> LossMask {
    let mut bits = vec![false; question_len];
    bits.resize(question_len + answer_len + 1, true);
    LossMask(bits)
}

/// Label-smoothing setup: `q = (1 − ε)·onehot + ε·uniform`, where the uniform
/// part covers every class except an optional excluded id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelSmoothing {
    pub epsilon: f64,
    pub excluded: Option<TokenId>,
}

impl LabelSmoothing {
    /// Uniform mass over every class.
    pub fn uniform(epsilon: f64) -> Self {
        LabelSmoothing {
            epsilon,
            excluded: None,
        }
    }

    /// Uniform mass over every class but PAD, the training default.
    pub fn excluding_pad(epsilon: f64) -> Self {
        LabelSmoothing {
            epsilon,
            excluded: Some(PAD),
        }
    }

    /// The smoothed target distribution for one position.
    pub fn target_distribution(&self, target: TokenId, vocab: usize) -> Vec<f64> {
        let excluded = self.excluded.filter(|&e| (e as usize) < vocab && e != target);
        let support = vocab - usize::from(excluded.is_some());
        let share = self.epsilon / support as f64;
        let mut q = vec![share; vocab];
        if let Some(e) = excluded {
            q[e as usize] = 0.0;
        }
        q[target as usize] += 1.0 - self.epsilon;
        q
    }
}

/// Mean smoothed cross-entropy over the mask-true rows of `logits`.
///
/// `logits` is `[positions × vocab]`; row `i` is scored against `targets[i]`.
/// Rows outside the mask contribute neither value nor gradient.
pub fn lm_loss<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    targets: &[TokenId],
    mask: &LossMask,
    smoothing: LabelSmoothing,
) -> Result<Var> {
    let (rows, vocab) = tape.value(logits).as_matrix("lm_loss")?;
    if targets.len() != rows || mask.len() != rows {
        return Err(Error::Dimension {
            op: "lm_loss",
            lhs: vec![rows, vocab],
            rhs: vec![targets.len(), mask.len()],
        });
    }
    if !(0.0..1.0).contains(&smoothing.epsilon) {
        return Err(Error::Parameter(format!(
            "label smoothing must be in [0, 1), got {}",
            smoothing.epsilon
        )));
    }
    let count = mask.count();
    if count == 0 {
        return Err(Error::Contract("loss mask selects no positions".into()));
    }
    let mut weights = vec![T::zero(); rows * vocab];
    for (i, (&target, &on)) in targets.iter().zip(mask.as_slice()).enumerate() {
        if !on {
            continue;
        }
        if target as usize >= vocab {
            return Err(Error::Input(format!("target {target} outside vocabulary of {vocab}")));
        }
        let q = smoothing.target_distribution(target, vocab);
        for (w, qc) in weights[i * vocab..(i + 1) * vocab].iter_mut().zip(q) {
            *w = T::of(-qc / count as f64);
        }
    }
    let logp = tape.log_softmax(logits);
    let w = tape.constant(Tensor::from_parts(vec![rows, vocab], weights));
    let weighted = tape.mul(logp, w)?;
    Ok(tape.sum(weighted))
}
