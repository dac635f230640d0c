use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const UNK: usize = 2;
pub const SPECIALS: [&str; 3] = ["[PAD]", "[CLS]", "[UNK]"];

/// Piece inventory with greedy longest-match segmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenizerModel {
    pieces: Vec<String>,
    index: HashMap<String, usize>,
    max_piece_chars: usize,
}

impl TokenizerModel {
    /// Builds a model from an ordered piece list whose first three entries
    /// are the specials.
    pub fn from_pieces(pieces: Vec<String>) -> Result<Self> {
        if pieces.len() < 3 || pieces[..3] != SPECIALS {
            return Err(Error::Config(format!("piece list must start with {SPECIALS:?}")));
        }
        let mut index = HashMap::with_capacity(pieces.len());
        for (i, p) in pieces.iter().enumerate() {
            if p.is_empty() {
                return Err(Error::Config(format!("empty piece at id {i}")));
            }
            if index.insert(p.clone(), i).is_some() {
                return Err(Error::Config(format!("piece {p:?} listed twice")));
            }
        }
        let max_piece_chars = pieces[3..].iter().map(|p| p.chars().count()).max().unwrap_or(1);
        Ok(Self { pieces, index, max_piece_chars })
    }

    pub fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn piece(&self, id: usize) -> Option<&str> {
        self.pieces.get(id).map(String::as_str)
    }

    pub fn id(&self, piece: &str) -> Option<usize> {
        self.index.get(piece).copied()
    }

    pub fn max_piece_chars(&self) -> usize {
        self.max_piece_chars
    }

    /// Greedy longest match, left to right. Characters never seen at build
    /// time become `[UNK]`.
    pub fn encode_word(&self, word: &str) -> Vec<usize> {
        let chars: Vec<char> = word.chars().collect();
        let mut out = Vec::new();
        let mut i = 0;
        let mut buf = String::new();
        while i < chars.len() {
            let longest = self.max_piece_chars.min(chars.len() - i);
            let mut matched = None;
            for len in (1..=longest).rev() {
                buf.clear();
                buf.extend(&chars[i..i + len]);
                if let Some(&id) = self.index.get(buf.as_str()) {
                    if id >= SPECIALS.len() {
                        matched = Some((id, len));
                        break;
                    }
                }
            }
            match matched {
                Some((id, len)) => {
                    out.push(id);
                    i += len;
                }
                None => {
                    out.push(UNK);
                    i += 1;
                }
            }
        }
        out
    }
}

/// Frequency-greedy inventory: every character seen, then the most frequent
/// multi-character substrings (ties by first occurrence) until
/// `target_vocab_size` pieces exist.
pub fn build_tokenizer(words: &[String], target_vocab_size: usize) -> Result<TokenizerModel> {
    if words.is_empty() {
        return Err(Error::Config("cannot build a tokenizer from an empty corpus".into()));
    }
    let mut word_freq: Vec<(Vec<char>, usize)> = Vec::new();
    let mut word_pos: HashMap<&str, usize> = HashMap::new();
    for w in words {
        match word_pos.get(w.as_str()) {
            Some(&i) => word_freq[i].1 += 1,
            None => {
                word_pos.insert(w, word_freq.len());
                word_freq.push((w.chars().collect(), 1));
            }
        }
    }

    let mut chars: Vec<char> = Vec::new();
    let mut seen_chars = std::collections::HashSet::new();
    // substring -> (count, first-occurrence rank)
    let mut subs: HashMap<String, (usize, usize)> = HashMap::new();
    let mut rank = 0usize;
    for (w, f) in &word_freq {
        for &ch in w {
            if seen_chars.insert(ch) {
                chars.push(ch);
            }
        }
        for start in 0..w.len() {
            for end in start + 2..=w.len() {
                let s: String = w[start..end].iter().collect();
                let entry = subs.entry(s).or_insert_with(|| {
                    rank += 1;
                    (0, rank)
                });
                entry.0 += f;
            }
        }
    }

    let floor = chars.len() + SPECIALS.len();
    if target_vocab_size < floor {
        return Err(Error::Config(format!(
            "target vocabulary {target_vocab_size} is below {} characters + {} specials",
            chars.len(),
            SPECIALS.len()
        )));
    }
    let mut ranked: Vec<(String, usize, usize)> = subs.into_iter().map(|(s, (c, r))| (s, c, r)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));

    let mut pieces: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    pieces.extend(chars.iter().map(|c| c.to_string()));
    pieces.extend(ranked.into_iter().take(target_vocab_size - floor).map(|(s, _, _)| s));
    TokenizerModel::from_pieces(pieces)
}
