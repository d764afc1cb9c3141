//! Caption generation: greedy, beam search, question-prefixed and
//! label-constrained decoding.

mod search;
mod trie;

pub use search::{
    beam_search, greedy_decode, length_penalty, log_softmax, Constraint, DecodeParams,
    Hypothesis, ModelScorer, NextTokenScorer,
};
pub use trie::{constrained_decode, TokenTrie};

use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary, BOS};

/// Encodes `question` behind BOS and checks it leaves room for an answer.
pub fn question_prefix(
    vocab: &Vocabulary,
    question: &str,
    max_text_len: usize,
) -> Result<Vec<TokenId>> {
    let mut prefix = vec![BOS];
    prefix.extend(vocab.encode(question));
    if prefix.len() > max_text_len {
        return Err(Error::Input(format!(
            "question takes {} tokens with BOS but the decoder accepts {max_text_len}",
            prefix.len()
        )));
    }
    Ok(prefix)
}

/// Generates an answer after `question` and returns it as text. `beam == 1`
/// with zero length penalty is greedy decoding.
pub fn prefix_generate(
    scorer: &dyn NextTokenScorer,
    vocab: &Vocabulary,
    question: &str,
    params: &DecodeParams,
) -> Result<String> {
    let prefix = question_prefix(vocab, question, scorer.max_input_len())?;
    let ids = generate_ids(scorer, &prefix, params)?;
    vocab.decode(&ids)
}

/// Generates a caption from BOS alone.
pub fn generate_caption(
    scorer: &dyn NextTokenScorer,
    vocab: &Vocabulary,
    params: &DecodeParams,
) -> Result<String> {
    let ids = generate_ids(scorer, &[BOS], params)?;
    vocab.decode(&ids)
}

/// Generated ids after `prefix`, without EOS.
pub fn generate_ids(
    scorer: &dyn NextTokenScorer,
    prefix: &[TokenId],
    params: &DecodeParams,
) -> Result<Vec<TokenId>> {
    params.validate()?;
    if params.beam == 1 && params.length_penalty == 0.0 {
        greedy_decode(scorer, prefix, params, None)
    } else {
        Ok(beam_search(scorer, prefix, params, None)?.output().to_vec())
    }
}
