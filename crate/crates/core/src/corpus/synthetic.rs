use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Instance, Language, Task};
use crate::error::{Error, Result};
use crate::lexicon::{LexSource, Lexicon};

const HRL_CONSONANTS: &str = "bdfgklmnprstvz";
const HRL_VOWELS: &str = "aeiou";
const LRL_CONSONANTS: &str = "βγδζθκλμνξπρστφχψ";
const LRL_VOWELS: &str = "αεηιοω";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

/// Parameters of the synthetic bilingual corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub task: Task,
    pub num_classes: usize,
    pub hrl_vocab_size: usize,
    pub lrl_vocab_size: usize,
    pub shared_surface_fraction: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a content word comes from the sentence's class.
    pub signal: f64,
    /// Probability that a position holds a function word.
    pub function_word_rate: f64,
    pub hrl: SplitSizes,
    pub lrl: SplitSizes,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            task: Task::SentenceClassification,
            num_classes: 3,
            hrl_vocab_size: 400,
            lrl_vocab_size: 400,
            shared_surface_fraction: 0.1,
            min_len: 6,
            max_len: 10,
            signal: 0.8,
            function_word_rate: 0.3,
            hrl: SplitSizes { train: 2000, validation: 200, test: 300 },
            lrl: SplitSizes { train: 100, validation: 100, test: 300 },
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.num_classes < 2 {
            return err(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.hrl_vocab_size == 0 || self.lrl_vocab_size == 0 {
            return err("vocabulary sizes must be at least 1".into());
        }
        if self.lrl_vocab_size > self.hrl_vocab_size {
            return err(format!(
                "lrl_vocab_size {} exceeds hrl_vocab_size {}; every LRL word needs its own HRL translation",
                self.lrl_vocab_size, self.hrl_vocab_size
            ));
        }
        for v in [self.hrl_vocab_size, self.lrl_vocab_size] {
            if Layout::new(v, self.num_classes).per_class == 0 {
                return err(format!("vocabulary of {v} words leaves no content words for {} classes", self.num_classes));
            }
        }
        if !(0.0..=1.0).contains(&self.shared_surface_fraction) {
            return err(format!("shared_surface_fraction {} outside [0, 1]", self.shared_surface_fraction));
        }
        if self.min_len < 2 || self.max_len < self.min_len {
            return err(format!("sentence length range [{}, {}] invalid (min ≥ 2)", self.min_len, self.max_len));
        }
        if !(self.signal > 0.0 && self.signal <= 1.0) {
            return err(format!("signal {} outside (0, 1]", self.signal));
        }
        if !(0.0..1.0).contains(&self.function_word_rate) {
            return err(format!("function_word_rate {} outside [0, 1)", self.function_word_rate));
        }
        for (lang, s) in [("hrl", self.hrl), ("lrl", self.lrl)] {
            if s.train == 0 || s.validation == 0 || s.test == 0 {
                return err(format!("{lang} split sizes must all be at least 1"));
            }
        }
        Ok(())
    }

    pub fn label_set(&self) -> Vec<String> {
        let mut labels: Vec<String> = (0..self.num_classes).map(|c| format!("class{c}")).collect();
        if self.task == Task::SequenceLabeling {
            labels.push("O".into());
        }
        labels
    }
}

/// Word budget: function words first, then `per_class` content words per class.
#[derive(Clone, Copy)]
struct Layout {
    function: usize,
    per_class: usize,
}

impl Layout {
    fn new(vocab: usize, classes: usize) -> Self {
        let per_class = (vocab - (vocab / 5).max(1).min(vocab)) / classes;
        Self { function: vocab - per_class * classes, per_class }
    }

    /// `None` for function words, else the class of word index `i`.
    fn class_of(&self, i: usize) -> Option<usize> {
        (i >= self.function).then(|| (i - self.function) / self.per_class)
    }

    fn index(&self, class: Option<usize>, k: usize) -> usize {
        match class {
            None => k,
            Some(c) => self.function + c * self.per_class + k,
        }
    }
}

struct Vocabulary {
    words: Vec<String>,
    layout: Layout,
}

pub struct SyntheticCorpus {
    pub hrl: Dataset,
    pub lrl: Dataset,
    pub lexicon: Lexicon,
    word_class: BTreeMap<(Language, String), Option<usize>>,
}

impl SyntheticCorpus {
    /// Generating class of a word: `Some(None)` for function words.
    pub fn word_class(&self, language: Language, word: &str) -> Option<Option<usize>> {
        self.word_class.get(&(language, word.to_string())).copied()
    }
}

/// Predicts the class with the most indicator words (ties to the lowest
/// class index). With full signal it is exact on sentence data.
pub fn majority_indicator_predict(corpus: &SyntheticCorpus, num_classes: usize, inst: &Instance) -> usize {
    let mut counts = vec![0usize; num_classes];
    for w in &inst.words {
        if let Some(Some(c)) = corpus.word_class(inst.language, w) {
            counts[c] += 1;
        }
    }
    let best = counts.iter().copied().max().unwrap_or(0);
    counts.iter().position(|&c| c == best).unwrap_or(0)
}

fn syllables(consonants: &str, vowels: &str) -> Vec<String> {
    consonants
        .chars()
        .flat_map(|c| vowels.chars().map(move |v| format!("{c}{v}")))
        .collect()
}

fn fresh_words(rng: &mut ChaCha8Rng, syl: &[String], count: usize, taken: &mut HashSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let n = rng.gen_range(2..=3);
        let w: String = (0..n).map(|_| syl[rng.gen_range(0..syl.len())].as_str()).collect();
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c = spec.num_classes;

    let mut taken = HashSet::new();
    let hrl_layout = Layout::new(spec.hrl_vocab_size, c);
    let hrl_vocab = Vocabulary {
        words: fresh_words(&mut rng, &syllables(HRL_CONSONANTS, HRL_VOWELS), spec.hrl_vocab_size, &mut taken),
        layout: hrl_layout,
    };

    // LRL word k of each category translates to HRL word k of the same category.
    let lrl_layout = Layout::new(spec.lrl_vocab_size, c);
    let translation_of: Vec<usize> = (0..spec.lrl_vocab_size)
        .map(|i| match lrl_layout.class_of(i) {
            None => hrl_layout.index(None, i),
            Some(cl) => hrl_layout.index(Some(cl), i - lrl_layout.index(Some(cl), 0)),
        })
        .collect();
    let mut order: Vec<usize> = (0..spec.lrl_vocab_size).collect();
    order.shuffle(&mut rng);
    let shared_count = (spec.shared_surface_fraction * spec.lrl_vocab_size as f64).round() as usize;
    let shared: HashSet<usize> = order[..shared_count].iter().copied().collect();
    let fresh = fresh_words(&mut rng, &syllables(LRL_CONSONANTS, LRL_VOWELS), spec.lrl_vocab_size - shared_count, &mut taken);
    let mut fresh = fresh.into_iter();
    let lrl_words: Vec<String> = (0..spec.lrl_vocab_size)
        .map(|i| {
            if shared.contains(&i) {
                hrl_vocab.words[translation_of[i]].clone()
            } else {
                fresh.next().expect("one fresh word per unshared entry")
            }
        })
        .collect();
    let lrl_vocab = Vocabulary { words: lrl_words, layout: lrl_layout };

    let mut lexicon = Lexicon::new();
    for (i, w) in lrl_vocab.words.iter().enumerate() {
        lexicon.insert(w, &hrl_vocab.words[translation_of[i]], LexSource::Synthetic, i + 1)?;
    }

    let mut word_class = BTreeMap::new();
    for (lang, vocab) in [(Language::Hrl, &hrl_vocab), (Language::Lrl, &lrl_vocab)] {
        for (i, w) in vocab.words.iter().enumerate() {
            word_class.insert((lang, w.clone()), vocab.layout.class_of(i));
        }
    }

    let hrl = make_dataset(spec, &mut rng, Language::Hrl, &hrl_vocab, spec.hrl);
    let lrl = make_dataset(spec, &mut rng, Language::Lrl, &lrl_vocab, spec.lrl);
    Ok(SyntheticCorpus { hrl, lrl, lexicon, word_class })
}

fn make_dataset(spec: &SyntheticSpec, rng: &mut ChaCha8Rng, lang: Language, vocab: &Vocabulary, sizes: SplitSizes) -> Dataset {
    let mut d = Dataset::empty(spec.task, spec.label_set());
    let prefix = match lang {
        Language::Hrl => "hrl",
        Language::Lrl => "lrl",
    };
    for (split, count) in [("train", sizes.train), ("validation", sizes.validation), ("test", sizes.test)] {
        let width = count.to_string().len().max(4);
        let list: Vec<Instance> = (0..count)
            .map(|i| sentence(spec, rng, format!("{prefix}-{split}-{i:0width$}"), lang, vocab))
            .collect();
        match split {
            "train" => d.train = list,
            "validation" => d.validation = list,
            _ => d.test = list,
        }
    }
    d
}

fn sentence(spec: &SyntheticSpec, rng: &mut ChaCha8Rng, id: String, lang: Language, vocab: &Vocabulary) -> Instance {
    let c = spec.num_classes;
    let layout = vocab.layout;
    loop {
        let y = rng.gen_range(0..c);
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let mut words = Vec::with_capacity(len);
        let mut tags = Vec::with_capacity(len);
        for _ in 0..len {
            let class = if rng.gen_bool(spec.function_word_rate) {
                None
            } else if rng.gen_bool(spec.signal) {
                Some(y)
            } else {
                let other = rng.gen_range(0..c - 1);
                Some(if other >= y { other + 1 } else { other })
            };
            let pool = if class.is_none() { layout.function } else { layout.per_class };
            let w = layout.index(class, rng.gen_range(0..pool));
            words.push(vocab.words[w].clone());
            tags.push(class.unwrap_or(c));
        }
        if tags.iter().all(|&t| t == c) {
            continue;
        }
        return match spec.task {
            Task::SentenceClassification => Instance::sentence(id, lang, words, y),
            Task::SequenceLabeling => Instance::tagged(id, lang, words, tags),
        };
    }
}
