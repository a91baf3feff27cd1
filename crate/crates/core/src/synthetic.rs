//! Seeded synthetic sentiment corpora with end-of-document twists.
//!
//! Every body sentence of a document shares one polarity; with the twist
//! probability the final sentence takes the opposite one. Class 0 is
//! negative and class 1 positive.

use std::collections::HashSet;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{multi_hot, normalize_sentence, Document, LabeledCorpus, RawRecord};
use crate::trainer::derive_seed;

pub const NEGATIVE: usize = 0;
pub const POSITIVE: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// Label is the polarity of the final sentence.
    LastSentence,
    /// Label is the majority polarity, positive on ties.
    Majority,
}

impl FromStr for LabelRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last_sentence" => Ok(Self::LastSentence),
            "majority" => Ok(Self::Majority),
            other => Err(Error::Config(format!(
                "unknown labeling rule `{other}` (expected last_sentence or majority)"
            ))),
        }
    }
}

const POSITIVE_POOL: [&str; 12] = [
    "great lovely superb",
    "delightful wonderful excellent",
    "charming pleasant great",
    "lovely delightful charming",
    "superb wonderful pleasant",
    "excellent great delightful",
    "wonderful charming lovely",
    "pleasant superb excellent",
    "great wonderful pleasant",
    "lovely excellent charming",
    "superb delightful great",
    "charming wonderful superb",
];

const NEGATIVE_POOL: [&str; 12] = [
    "awful terrible dreadful",
    "horrible miserable nasty",
    "gloomy lousy awful",
    "terrible horrible gloomy",
    "dreadful miserable lousy",
    "nasty awful horrible",
    "miserable gloomy terrible",
    "lousy dreadful nasty",
    "awful miserable lousy",
    "terrible nasty gloomy",
    "dreadful horrible awful",
    "gloomy miserable dreadful",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub positive_pool: Vec<String>,
    pub negative_pool: Vec<String>,
    pub num_documents: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub twist_probability: f64,
    pub rule: LabelRule,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            positive_pool: POSITIVE_POOL.iter().map(|s| s.to_string()).collect(),
            negative_pool: NEGATIVE_POOL.iter().map(|s| s.to_string()).collect(),
            num_documents: 1000,
            min_sentences: 4,
            max_sentences: 8,
            twist_probability: 0.5,
            rule: LabelRule::LastSentence,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.positive_pool.is_empty() || self.negative_pool.is_empty() {
            return Err(Error::Config("sentence pools must be non-empty".into()));
        }
        for s in self.positive_pool.iter().chain(&self.negative_pool) {
            if s.is_empty() || normalize_sentence(s) != *s {
                return Err(Error::Config(format!(
                    "pool sentence `{s}` is not in normalized form"
                )));
            }
        }
        let pos: HashSet<&String> = self.positive_pool.iter().collect();
        if let Some(s) = self.negative_pool.iter().find(|s| pos.contains(s)) {
            return Err(Error::Config(format!("`{s}` appears in both pools")));
        }
        if self.min_sentences == 0 || self.max_sentences < self.min_sentences {
            return Err(Error::Config(format!(
                "bad sentence range {}..={}",
                self.min_sentences, self.max_sentences
            )));
        }
        if !(0.0..=1.0).contains(&self.twist_probability) {
            return Err(Error::Config(format!(
                "twist probability {} outside [0, 1]",
                self.twist_probability
            )));
        }
        if self.twist_probability > 0.0 && self.min_sentences < 2 {
            return Err(Error::Config("twists need at least 2 sentences per document".into()));
        }
        Ok(())
    }

    /// Polarity of a pool sentence, `None` if it is in neither pool.
    pub fn polarity(&self, sentence: &str) -> Option<usize> {
        if self.positive_pool.iter().any(|s| s == sentence) {
            Some(POSITIVE)
        } else if self.negative_pool.iter().any(|s| s == sentence) {
            Some(NEGATIVE)
        } else {
            None
        }
    }
}

pub fn label_for(polarities: &[usize], rule: LabelRule) -> usize {
    match rule {
        LabelRule::LastSentence => *polarities.last().expect("non-empty document"),
        LabelRule::Majority => majority(polarities),
    }
}

fn majority(polarities: &[usize]) -> usize {
    let pos = polarities.iter().filter(|&&p| p == POSITIVE).count();
    if 2 * pos >= polarities.len() {
        POSITIVE
    } else {
        NEGATIVE
    }
}

pub fn generate(spec: &SynthSpec) -> Result<LabeledCorpus> {
    spec.validate()?;
    let documents = (0..spec.num_documents)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[i as u64]));
            let len = rng.gen_range(spec.min_sentences..=spec.max_sentences);
            let body = if rng.gen_bool(0.5) { POSITIVE } else { NEGATIVE };
            let twist = rng.gen_bool(spec.twist_probability);
            let polarities: Vec<usize> = (0..len)
                .map(|t| if twist && t == len - 1 { 1 - body } else { body })
                .collect();
            let sentences = polarities
                .iter()
                .map(|&p| {
                    let pool = if p == POSITIVE { &spec.positive_pool } else { &spec.negative_pool };
                    pool[rng.gen_range(0..pool.len())].clone()
                })
                .collect();
            Document {
                source_id: format!("synth{i}"),
                sentences,
                label: multi_hot(label_for(&polarities, spec.rule), 2),
            }
        })
        .collect();
    Ok(LabeledCorpus::new(documents, 2))
}

/// JSONL-ready records: sentences joined as `a. b. c.`.
pub fn to_records(corpus: &LabeledCorpus) -> Vec<RawRecord> {
    corpus
        .documents
        .iter()
        .map(|d| RawRecord {
            text: format!("{}.", d.sentences.join(". ")),
            label: d.class(),
        })
        .collect()
}

/// Accuracy of the order-free majority vote over pool polarities
/// (positive on ties). Sentences outside both pools are ignored.
pub fn majority_vote_accuracy(corpus: &LabeledCorpus, spec: &SynthSpec) -> f64 {
    if corpus.is_empty() {
        return 0.0;
    }
    let correct = corpus
        .documents
        .iter()
        .filter(|d| {
            let p: Vec<usize> = d.sentences.iter().filter_map(|s| spec.polarity(s)).collect();
            majority(&p) == d.class()
        })
        .count();
    correct as f64 / corpus.len() as f64
}
