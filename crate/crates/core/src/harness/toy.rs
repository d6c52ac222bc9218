//! A small synthetic script with a skewed class distribution, rendered as
//! word images by seeded "writers".

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::WordSample;
use super::train::stream_seed;
use crate::error::{Error, Result};
use crate::grapheme::{Grapheme, GraphemeInventory};
use crate::synthgen::{render_word, WriterStyle};

/// The twelve word classes. The last three are rare.
pub const TOY_CLASSES: [&str; 12] = ["ক", "খ", "গ", "ঘ", "চ", "ছ", "জ", "ঝ", "ট", "ঠ", "ড", "ঢ"];
/// Classes a super-teacher knows beyond [`TOY_CLASSES`].
pub const TOY_SUPER_EXTRA: [&str; 3] = ["ণ", "ত", "থ"];
pub const TOY_MINOR_WEIGHT: f64 = 0.02;

fn graphemes(raw: &[&str]) -> Vec<Grapheme> {
    raw.iter()
        .map(|g| Grapheme::new(*g).expect("non-empty literal"))
        .collect()
}

/// Major classes decay from 1.0 to 0.6; the last three sit at
/// [`TOY_MINOR_WEIGHT`], well under a tenth of the most frequent.
pub fn toy_weights(n: usize, minor: usize) -> Vec<f64> {
    let major = n - minor;
    (0..n)
        .map(|i| {
            if i < major {
                1.0 - 0.4 * i as f64 / (major.max(2) - 1) as f64
            } else {
                TOY_MINOR_WEIGHT
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyCorpusSpec {
    pub alphabet: Vec<Grapheme>,
    /// Sampling weight per alphabet entry.
    pub weights: Vec<f64>,
    pub train_words: usize,
    pub test_words: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub train_writers: usize,
    pub test_writers: usize,
    pub height: usize,
    pub width: usize,
    pub noise: f64,
    /// Resample a grapheme that equals its left neighbor.
    pub distinct_neighbors: bool,
    pub seed: u64,
}

impl ToyCorpusSpec {
    /// 2000 training words of 1 to 3 graphemes over [`TOY_CLASSES`]. On the
    /// 15-frame compact student that leaves 5 or more frames per grapheme,
    /// about what full-size words get from 31 frames.
    pub fn toy_script(seed: u64) -> Self {
        Self {
            alphabet: graphemes(&TOY_CLASSES),
            weights: toy_weights(TOY_CLASSES.len(), 3),
            train_words: 2000,
            test_words: 400,
            min_len: 1,
            max_len: 3,
            train_writers: 40,
            test_writers: 10,
            height: 16,
            width: 64,
            noise: 0.05,
            distinct_neighbors: true,
            seed,
        }
    }

    /// Every class of the toy script plus the super-only extras.
    pub fn super_alphabet() -> Vec<Grapheme> {
        let mut all = graphemes(&TOY_CLASSES);
        all.extend(graphemes(&TOY_SUPER_EXTRA));
        all
    }

    fn validate(&self) -> Result<()> {
        if self.alphabet.is_empty() || self.alphabet.len() != self.weights.len() {
            return Err(Error::InvalidConfig(
                "alphabet and weights must be non-empty and equally long".into(),
            ));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::InvalidConfig("need 1 <= min_len <= max_len".into()));
        }
        if self.distinct_neighbors && self.alphabet.len() < 2 && self.max_len > 1 {
            return Err(Error::InvalidConfig(
                "distinct neighbors need at least two graphemes".into(),
            ));
        }
        if self.train_writers == 0 || self.test_writers == 0 {
            return Err(Error::InvalidConfig("writer counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub train: Vec<WordSample>,
    pub test: Vec<WordSample>,
}

impl ToyCorpus {
    pub fn train_inventory(&self, tag: &str) -> GraphemeInventory {
        GraphemeInventory::build(self.train.iter().map(|s| s.label.as_str()), tag)
    }
}

fn writers(seed: u64, stream: &str, n: usize) -> Vec<WriterStyle> {
    (0..n)
        .map(|i| WriterStyle::sample(stream_seed(stream_seed(seed, stream), &i.to_string())))
        .collect()
}

fn words(spec: &ToyCorpusSpec, count: usize, writers: &[WriterStyle], stream: &str) -> Result<Vec<WordSample>> {
    let weights =
        WeightedIndex::new(&spec.weights).map_err(|e| Error::InvalidConfig(format!("bad class weights: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, stream));
    (0..count)
        .map(|i| {
            let len = rng.random_range(spec.min_len..=spec.max_len);
            let mut word: Vec<Grapheme> = Vec::with_capacity(len);
            while word.len() < len {
                let g = &spec.alphabet[weights.sample(&mut rng)];
                if !(spec.distinct_neighbors && word.last() == Some(g)) {
                    word.push(g.clone());
                }
            }
            let writer = &writers[i % writers.len()];
            let image = render_word(&word, spec.height, spec.width, writer, rng.random(), spec.noise)?;
            let label: String = word.iter().map(Grapheme::as_str).collect();
            Ok(WordSample::new(image, &label))
        })
        .collect()
}

/// Training and test words drawn from disjoint writer pools.
pub fn generate_toy_corpus(spec: &ToyCorpusSpec) -> Result<ToyCorpus> {
    spec.validate()?;
    let train_writers = writers(spec.seed, "train-writers", spec.train_writers);
    let test_writers = writers(spec.seed, "test-writers", spec.test_writers);
    if test_writers
        .iter()
        .any(|t| train_writers.iter().any(|w| w.writer_seed == t.writer_seed))
    {
        return Err(Error::InvalidConfig("train and test writer pools overlap".into()));
    }
    Ok(ToyCorpus {
        train: words(spec, spec.train_words, &train_writers, "train-words")?,
        test: words(spec, spec.test_words, &test_writers, "test-words")?,
    })
}

/// Two related toy corpora over overlapping 12-class alphabets drawn from
/// the 15-class super alphabet; the second is shifted by three classes and
/// rendered with its own seed.
pub fn toy_corpus_pair(train_words: usize, test_words: usize, seed: u64) -> Result<(ToyCorpus, ToyCorpus)> {
    let all = ToyCorpusSpec::super_alphabet();
    let base = ToyCorpusSpec {
        train_words,
        test_words,
        ..ToyCorpusSpec::toy_script(seed)
    };
    let a = generate_toy_corpus(&base)?;
    let b = generate_toy_corpus(&ToyCorpusSpec {
        alphabet: all[3..].to_vec(),
        seed: stream_seed(seed, "second-corpus"),
        ..base
    })?;
    Ok((a, b))
}
