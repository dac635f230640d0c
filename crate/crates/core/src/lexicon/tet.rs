use std::collections::{BTreeMap, BTreeSet, HashSet};

use super::Lexicon;
use crate::corpus::{TokenizerModel, SPECIALS};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// How piece vectors are pooled across the words that contain them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TetMode {
    /// Mean of the translation averages of every translatable word that
    /// contains the piece. Independent of vocabulary order.
    #[default]
    Prose,
    /// Word-by-word overwrite: each piece ends up with the translation
    /// average of the last translatable word containing it.
    Literal,
}

#[derive(Clone, Debug, Default)]
pub struct TetOptions {
    pub mode: TetMode,
    /// Pieces that already have trained embeddings (e.g. pieces also used by
    /// HRL words); they are neither initialized nor counted for coverage.
    pub keep: BTreeSet<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TetResult {
    /// Initialized vector per covered piece id.
    pub vectors: BTreeMap<usize, Vec<f64>>,
    /// Every piece the procedure was responsible for.
    pub target_pieces: BTreeSet<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoverageReport {
    pub coverage: f64,
    pub uncovered: Vec<usize>,
}

/// Initializes LRL piece embeddings from the HRL embeddings of word
/// translations. `hrl_embeddings` is `[hrl vocab, d]`.
pub fn tet_initialize(
    lrl_words: &[String],
    lrl_tok: &TokenizerModel,
    hrl_tok: &TokenizerModel,
    hrl_embeddings: &Tensor<f64>,
    lex: &Lexicon,
    options: &TetOptions,
) -> Result<TetResult> {
    if hrl_embeddings.shape().len() != 2 {
        return Err(Error::Dimension(format!("HRL embeddings must be 2-D, got {:?}", hrl_embeddings.shape())));
    }
    let (rows, d) = (hrl_embeddings.shape()[0], hrl_embeddings.shape()[1]);
    let emb = hrl_embeddings.data();

    let mut seen = HashSet::new();
    let vocab: Vec<&String> = lrl_words.iter().filter(|w| seen.insert(w.as_str())).collect();

    let mut target_pieces = BTreeSet::new();
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    let mut last: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for w in vocab {
        let pieces: Vec<usize> = lrl_tok
            .encode_word(w)
            .into_iter()
            .filter(|&p| p >= SPECIALS.len() && !options.keep.contains(&p))
            .collect();
        target_pieces.extend(pieces.iter().copied());
        let Some(translation) = lex.translate(w) else { continue };
        let hrl_pieces = hrl_tok.encode_word(translation);
        let mut avg = vec![0.0; d];
        for &p in &hrl_pieces {
            if p >= rows {
                return Err(Error::Index { what: "HRL embedding rows", index: p, size: rows });
            }
            for (a, &e) in avg.iter_mut().zip(&emb[p * d..(p + 1) * d]) {
                *a += e;
            }
        }
        let n = hrl_pieces.len() as f64;
        avg.iter_mut().for_each(|a| *a /= n);

        let unique: BTreeSet<usize> = pieces.iter().copied().collect();
        for &p in &unique {
            match options.mode {
                TetMode::Prose => {
                    let entry = sums.entry(p).or_insert_with(|| (vec![0.0; d], 0));
                    for (s, &a) in entry.0.iter_mut().zip(&avg) {
                        *s += a;
                    }
                    entry.1 += 1;
                }
                TetMode::Literal => {
                    last.insert(p, avg.clone());
                }
            }
        }
    }

    let vectors = match options.mode {
        TetMode::Prose => sums
            .into_iter()
            .map(|(p, (s, n))| (p, s.into_iter().map(|v| v / n as f64).collect()))
            .collect(),
        TetMode::Literal => last,
    };
    Ok(TetResult { vectors, target_pieces })
}

/// Share of target pieces that received a vector. With no target pieces the
/// coverage is vacuously 1.
pub fn coverage_report(result: &TetResult) -> CoverageReport {
    let uncovered: Vec<usize> =
        result.target_pieces.iter().copied().filter(|p| !result.vectors.contains_key(p)).collect();
    let total = result.target_pieces.len();
    let coverage = if total == 0 { 1.0 } else { (total - uncovered.len()) as f64 / total as f64 };
    CoverageReport { coverage, uncovered }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TokenizerModel;

    fn tok(pieces: &[&str]) -> TokenizerModel {
        let mut all: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        all.extend(pieces.iter().map(|s| s.to_string()));
        TokenizerModel::from_pieces(all).unwrap()
    }

    fn emb(rows: &[[f64; 2]]) -> Tensor<f64> {
        Tensor::new(vec![rows.len(), 2], rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn single_path_copies_the_hrl_row() {
        let lrl = tok(&["w"]);
        let hrl = tok(&["v"]);
        let e = emb(&[[0.0; 2], [0.0; 2], [0.0; 2], [0.3, -0.7]]);
        let lex = Lexicon::parse("w\tv\n", "t").unwrap();
        let r = tet_initialize(&["w".into()], &lrl, &hrl, &e, &lex, &TetOptions::default()).unwrap();
        assert_eq!(r.vectors[&3], vec![0.3, -0.7]);
        assert_eq!(coverage_report(&r).coverage, 1.0);
    }

    #[test]
    fn worked_example_shares_a_piece_across_two_words() {
        let lrl = tok(&["antar", "bahu", "bhasika"]);
        let hrl = tok(&["cross", "lingual", "multi", "-"]);
        // ids: cross 3, lingual 4, multi 5, "-" 6
        let e = emb(&[[0.0; 2], [0.0; 2], [0.0; 2], [1.0, 0.0], [0.0, 1.0], [3.0, 3.0], [0.5, 0.5]]);
        let lex = Lexicon::parse("antarbhasika\tcrosslingual\nbahubhasika\tmultilingual\n", "t").unwrap();
        let words = vec!["antarbhasika".to_string(), "bahubhasika".to_string()];
        let r = tet_initialize(&words, &lrl, &hrl, &e, &lex, &TetOptions::default()).unwrap();
        let cross_lingual = [0.5, 0.5];
        let multi_lingual = [1.5, 2.0];
        let bhasika = lrl.id("bhasika").unwrap();
        let expect = [(cross_lingual[0] + multi_lingual[0]) / 2.0, (cross_lingual[1] + multi_lingual[1]) / 2.0];
        assert_eq!(r.vectors[&bhasika], expect.to_vec());
        assert_eq!(r.vectors[&lrl.id("antar").unwrap()], cross_lingual.to_vec());
        assert_eq!(r.vectors[&lrl.id("bahu").unwrap()], multi_lingual.to_vec());

        let literal = TetOptions { mode: TetMode::Literal, ..TetOptions::default() };
        let r = tet_initialize(&words, &lrl, &hrl, &e, &lex, &literal).unwrap();
        assert_eq!(r.vectors[&bhasika], multi_lingual.to_vec());
    }

    #[test]
    fn empty_lexicon_covers_nothing() {
        let lrl = tok(&["a", "b"]);
        let e = emb(&[[0.0; 2]; 5]);
        let r = tet_initialize(&["ab".into()], &lrl, &lrl, &e, &Lexicon::new(), &TetOptions::default()).unwrap();
        let rep = coverage_report(&r);
        assert_eq!(rep.coverage, 0.0);
        assert_eq!(rep.uncovered, vec![3, 4]);
    }

    #[test]
    fn half_translatable_with_disjoint_pieces() {
        let lrl = tok(&["a", "b", "c", "d"]);
        let hrl = tok(&["x"]);
        let e = emb(&[[0.0; 2], [0.0; 2], [0.0; 2], [1.0, 1.0]]);
        let lex = Lexicon::parse("ab\tx\n", "t").unwrap();
        let r = tet_initialize(&["ab".into(), "cd".into()], &lrl, &hrl, &e, &lex, &TetOptions::default()).unwrap();
        assert_eq!(coverage_report(&r).coverage, 0.5);
    }

    #[test]
    fn kept_pieces_are_left_alone() {
        let lrl = tok(&["a", "b"]);
        let e = emb(&[[0.0; 2], [0.0; 2], [0.0; 2], [1.0, 2.0], [3.0, 4.0]]);
        let lex = Lexicon::parse("ab\tab\n", "t").unwrap();
        let opts = TetOptions { keep: [3].into_iter().collect(), ..TetOptions::default() };
        let r = tet_initialize(&["ab".into()], &lrl, &lrl, &e, &lex, &opts).unwrap();
        assert_eq!(r.target_pieces, [4].into_iter().collect());
        assert_eq!(r.vectors[&4], vec![2.0, 3.0]);
    }
}
