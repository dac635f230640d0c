//! Labeled instances, the subword tokenizer, dataset files and the
//! synthetic bilingual corpus.

mod io;
mod synthetic;
mod tokenizer;

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use io::{load_dataset, load_tokenizer, save_dataset, save_tokenizer};
pub(crate) use io::write_file as io_write_file;
pub use synthetic::{generate_synthetic, majority_indicator_predict, SplitSizes, SyntheticCorpus, SyntheticSpec};
pub use tokenizer::{build_tokenizer, TokenizerModel, CLS, PAD, SPECIALS, UNK};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Language {
    #[serde(rename = "HRL")]
    Hrl,
    #[serde(rename = "LRL")]
    Lrl,
}

impl Language {
    pub fn other(self) -> Self {
        match self {
            Language::Hrl => Language::Lrl,
            Language::Lrl => Language::Hrl,
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Language::Hrl => "HRL",
            Language::Lrl => "LRL",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    SentenceClassification,
    SequenceLabeling,
}

/// One labeled text unit.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub id: String,
    pub language: Language,
    pub words: Vec<String>,
    /// `[CLS]` followed by the pieces of every kept word. Empty until encoded.
    pub token_ids: Vec<usize>,
    /// Position range of each kept word inside `token_ids`.
    pub word_spans: Vec<Range<usize>>,
    pub sentence_label: Option<usize>,
    pub token_labels: Option<Vec<usize>>,
}

impl Instance {
    pub fn sentence(id: impl Into<String>, language: Language, words: Vec<String>, label: usize) -> Self {
        Self {
            id: id.into(),
            language,
            words,
            token_ids: Vec::new(),
            word_spans: Vec::new(),
            sentence_label: Some(label),
            token_labels: None,
        }
    }

    pub fn tagged(id: impl Into<String>, language: Language, words: Vec<String>, tags: Vec<usize>) -> Self {
        Self {
            id: id.into(),
            language,
            words,
            token_ids: Vec::new(),
            word_spans: Vec::new(),
            sentence_label: None,
            token_labels: Some(tags),
        }
    }

    pub fn is_encoded(&self) -> bool {
        !self.token_ids.is_empty()
    }

    /// Tokenizes the words behind a leading `[CLS]`. Trailing words that do
    /// not fit in `max_len` positions are dropped whole.
    pub fn encode(&mut self, tok: &TokenizerModel, max_len: usize) {
        self.token_ids.clear();
        self.word_spans.clear();
        self.token_ids.push(CLS);
        for word in &self.words {
            let pieces = tok.encode_word(word);
            if self.token_ids.len() + pieces.len() > max_len {
                break;
            }
            let start = self.token_ids.len();
            self.token_ids.extend(pieces);
            self.word_spans.push(start..self.token_ids.len());
        }
    }

    /// Word tags replicated onto every piece, aligned with `token_ids[1..]`.
    pub fn piece_tags(&self) -> Option<Vec<usize>> {
        let tags = self.token_labels.as_ref()?;
        Some(expand_tags(tags, &self.word_spans))
    }
}

/// Replicates each word's tag onto its pieces. `spans` index `token_ids`,
/// whose position 0 is `[CLS]`.
pub fn expand_tags(tags: &[usize], spans: &[Range<usize>]) -> Vec<usize> {
    spans.iter().zip(tags).flat_map(|(span, &t)| std::iter::repeat_n(t, span.len())).collect()
}

/// Inverse of [`expand_tags`]: reads the tag of each word's first piece.
pub fn collapse_tags(piece_tags: &[usize], spans: &[Range<usize>]) -> Vec<usize> {
    spans.iter().map(|span| piece_tags[span.start - 1]).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub label_set: Vec<String>,
    pub train: Vec<Instance>,
    pub validation: Vec<Instance>,
    pub test: Vec<Instance>,
}

impl Dataset {
    pub fn empty(task: Task, label_set: Vec<String>) -> Self {
        Self { task, label_set, train: Vec::new(), validation: Vec::new(), test: Vec::new() }
    }

    pub fn splits(&self) -> [(&'static str, &[Instance]); 3] {
        [("train", &self.train), ("validation", &self.validation), ("test", &self.test)]
    }

    pub fn encode_all(&mut self, tok: &TokenizerModel, max_len: usize) {
        for inst in self.train.iter_mut().chain(&mut self.validation).chain(&mut self.test) {
            inst.encode(tok, max_len);
        }
    }
}
