use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{build_tokenizer, Dataset, Instance, Task, TokenizerModel};
use crate::error::{Error, Result};
use crate::lexicon::Lexicon;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    pub hrl_vocab_size: usize,
    pub lrl_vocab_size: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self { hrl_vocab_size: 600, lrl_vocab_size: 300 }
    }
}

/// Encoded datasets of both languages sharing one vocabulary.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub task: Task,
    pub label_set: Vec<String>,
    pub tokenizer: TokenizerModel,
    pub hrl: Dataset,
    pub lrl: Dataset,
    pub lexicon: Lexicon,
    /// Pieces produced by HRL training words.
    pub hrl_pieces: BTreeSet<usize>,
    pub tokenizer_config: TokenizerConfig,
    pub max_len: usize,
}

fn train_words(d: &Dataset) -> Vec<String> {
    d.train.iter().flat_map(|i| i.words.iter().cloned()).collect()
}

/// HRL pieces followed by the LRL pieces the HRL inventory lacks.
pub fn joint_tokenizer(hrl: &TokenizerModel, lrl: &TokenizerModel) -> Result<TokenizerModel> {
    let mut pieces = hrl.pieces().to_vec();
    for p in lrl.pieces() {
        if hrl.id(p).is_none() {
            pieces.push(p.clone());
        }
    }
    TokenizerModel::from_pieces(pieces)
}

impl PreparedData {
    pub fn new(mut hrl: Dataset, mut lrl: Dataset, lexicon: Lexicon, tok: &TokenizerConfig, max_len: usize) -> Result<Self> {
        if hrl.task != lrl.task || hrl.label_set != lrl.label_set {
            return Err(Error::Config("HRL and LRL datasets disagree on task or label set".into()));
        }
        let hrl_tok = build_tokenizer(&train_words(&hrl), tok.hrl_vocab_size)?;
        let lrl_tok = build_tokenizer(&train_words(&lrl), tok.lrl_vocab_size)?;
        let tokenizer = joint_tokenizer(&hrl_tok, &lrl_tok)?;
        hrl.encode_all(&tokenizer, max_len);
        lrl.encode_all(&tokenizer, max_len);
        let hrl_pieces = hrl.train.iter().flat_map(|i| i.token_ids[1..].iter().copied()).collect();
        Ok(Self {
            task: hrl.task,
            label_set: hrl.label_set.clone(),
            tokenizer,
            hrl,
            lrl,
            lexicon,
            hrl_pieces,
            tokenizer_config: *tok,
            max_len,
        })
    }

    /// LRL side of the lexicon, in lexicon order.
    pub fn lexicon_lrl_words(&self) -> Vec<String> {
        self.lexicon.iter().map(|(l, _)| l.to_string()).collect()
    }

    /// Rebuilds everything with the LRL training split cut to its first `n`
    /// instances.
    pub fn with_lrl_train_size(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.lrl.train.len() {
            return Err(Error::Config(format!("LRL train size {n} outside 1..={}", self.lrl.train.len())));
        }
        let mut lrl = self.lrl.clone();
        lrl.train.truncate(n);
        Self::new(self.hrl.clone(), lrl, self.lexicon.clone(), &self.tokenizer_config, self.max_len)
    }

    pub fn training_instances(&self) -> Vec<&Instance> {
        self.hrl.train.iter().chain(&self.lrl.train).collect()
    }
}
