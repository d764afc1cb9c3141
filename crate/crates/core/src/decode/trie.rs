use std::collections::BTreeMap;

use super::search::{beam_search, Constraint, DecodeParams, NextTokenScorer};
use crate::error::{Error, Result};
use crate::vocab::{normalize, TokenId, Vocabulary, EOS, UNK};

#[derive(Debug, Clone, Default)]
struct Node {
    children: BTreeMap<TokenId, usize>,
    /// Index into `labels` for the EOS node that closes a label.
    label: Option<usize>,
}

/// Prefix tree over tokenized labels; every label path ends with an EOS edge.
#[derive(Debug, Clone)]
pub struct TokenTrie {
    nodes: Vec<Node>,
    labels: Vec<String>,
    depth: usize,
}

impl TokenTrie {
    /// Builds the trie from `labels`. Duplicates (after normalization) are
    /// merged; a label that is empty or contains an unknown word is an error.
    pub fn build<S: AsRef<str>>(labels: &[S], vocab: &Vocabulary) -> Result<Self> {
        let mut trie = TokenTrie {
            nodes: vec![Node::default()],
            labels: Vec::new(),
            depth: 0,
        };
        for raw in labels {
            let label = normalize(raw.as_ref());
            let mut ids = vocab.encode(&label);
            if ids.is_empty() {
                return Err(Error::Input(format!("empty label {:?}", raw.as_ref())));
            }
            if ids.contains(&UNK) {
                return Err(Error::Input(format!(
                    "label {label:?} has tokens outside the vocabulary"
                )));
            }
            ids.push(EOS);
            trie.depth = trie.depth.max(ids.len());
            let mut at = 0;
            for &t in &ids {
                let next = trie.nodes.len();
                at = *trie.nodes[at].children.entry(t).or_insert(next);
                if at == next {
                    trie.nodes.push(Node::default());
                }
            }
            if trie.nodes[at].label.is_none() {
                trie.nodes[at].label = Some(trie.labels.len());
                trie.labels.push(label);
            }
        }
        if trie.labels.is_empty() {
            return Err(Error::Input("label set is empty".into()));
        }
        Ok(trie)
    }

    /// Distinct normalized labels in insertion order.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Longest path length in tokens, counting the closing EOS.
    pub fn depth(&self) -> usize {
        self.depth
    }

    fn walk(&self, ids: &[TokenId]) -> Option<usize> {
        ids.iter()
            .try_fold(0, |at, t| self.nodes[at].children.get(t).copied())
    }

    /// Children of the node reached by `prefix`; empty if `prefix` leaves the
    /// trie or is already complete.
    pub fn next_tokens(&self, prefix: &[TokenId]) -> Vec<TokenId> {
        self.walk(prefix)
            .map(|n| self.nodes[n].children.keys().copied().collect())
            .unwrap_or_default()
    }

    /// The label spelled by `ids`, which must end with EOS.
    pub fn label_of(&self, ids: &[TokenId]) -> Option<&str> {
        self.walk(ids)
            .and_then(|n| self.nodes[n].label)
            .map(|i| self.labels[i].as_str())
    }
}

impl Constraint for TokenTrie {
    fn allowed(&self, generated: &[TokenId]) -> Vec<TokenId> {
        self.next_tokens(generated)
    }
}

/// Beam search restricted to `trie`; always returns one of its labels.
pub fn constrained_decode<'t>(
    scorer: &dyn NextTokenScorer,
    prefix: &[TokenId],
    trie: &'t TokenTrie,
    params: &DecodeParams,
) -> Result<&'t str> {
    let params = DecodeParams {
        max_steps: params.max_steps.max(trie.depth()),
        ..params.clone()
    };
    let best = beam_search(scorer, prefix, &params, Some(trie))?;
    if !best.finished {
        return Err(Error::Contract(
            "constrained search ended without completing a label".into(),
        ));
    }
    trie.label_of(&best.tokens)
        .ok_or_else(|| Error::Contract("constrained search left the label trie".into()))
}
