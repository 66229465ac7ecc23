//! Synthetic tasks with known optima, used in place of GLUE at desk scale.
//!
//! Every label is a deterministic function of the text, so a perfect
//! predictor exists. `difficulty` (1..=3) lengthens the sentences and widens
//! the filler lexicon.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::task::{Dataset, Example, HeadKind, Label, Metric, Schema, Split, TaskSpec};
use crate::error::{Error, Result};

pub const MARKER: &str = "key";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SynthKind {
    /// Label 1 iff the marker word occurs.
    Keyword,
    /// Label = number of marker words mod 2.
    Parity,
    /// Two sentences with one topic word each; label 1 iff the topics agree.
    PairMatch,
    /// Score = marker count / word count.
    RegressionCount,
}

impl SynthKind {
    pub const ALL: [SynthKind; 4] = [SynthKind::Keyword, SynthKind::Parity, SynthKind::PairMatch, SynthKind::RegressionCount];

    pub fn name(&self) -> &'static str {
        match self {
            SynthKind::Keyword => "keyword",
            SynthKind::Parity => "parity",
            SynthKind::PairMatch => "pair-match",
            SynthKind::RegressionCount => "regression-count",
        }
    }

    pub fn spec(&self) -> TaskSpec {
        let binary = HeadKind::Classification { classes: 2 };
        let (head, metric, schema) = match self {
            SynthKind::Keyword | SynthKind::Parity => (binary, Metric::Accuracy, Schema::SingleSentence),
            SynthKind::PairMatch => (binary, Metric::Accuracy, Schema::SentencePair),
            SynthKind::RegressionCount => (HeadKind::Regression, Metric::Pearson, Schema::SingleSentence),
        };
        TaskSpec { id: self.name().to_string(), head, metric, schema }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SynthKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::input(format!("unknown synthetic task kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSizes {
    pub train: usize,
    pub dev: usize,
}

fn fillers(difficulty: u32) -> Vec<String> {
    (0..12 * difficulty as usize).map(|i| format!("w{i:02}")).collect()
}

fn topics(difficulty: u32) -> Vec<String> {
    (0..2 + 2 * difficulty as usize).map(|i| format!("t{i}")).collect()
}

struct Generator {
    kind: SynthKind,
    difficulty: usize,
    fillers: Vec<String>,
    topics: Vec<String>,
    rng: ChaCha8Rng,
}

impl Generator {
    fn filler_words(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.fillers.choose(&mut self.rng).unwrap().clone()).collect()
    }

    fn insert_at_random(&mut self, words: &mut Vec<String>, word: &str) {
        let pos = self.rng.gen_range(0..=words.len());
        words.insert(pos, word.to_string());
    }

    fn example(&mut self) -> Example {
        let d = self.difficulty;
        match self.kind {
            SynthKind::Keyword => {
                let n = self.rng.gen_range(3..=4 + 4 * d);
                let mut words = self.filler_words(n);
                let positive = self.rng.gen_bool(0.5);
                if positive {
                    self.insert_at_random(&mut words, MARKER);
                }
                Example { text_a: words.join(" "), text_b: None, label: Label::Class(positive as usize) }
            }
            SynthKind::Parity => {
                let n = self.rng.gen_range(3..=4 + 4 * d);
                let mut words = self.filler_words(n);
                let markers = self.rng.gen_range(0..=d + 1);
                for _ in 0..markers {
                    self.insert_at_random(&mut words, MARKER);
                }
                Example { text_a: words.join(" "), text_b: None, label: Label::Class(markers % 2) }
            }
            SynthKind::PairMatch => {
                let first = self.rng.gen_range(0..self.topics.len());
                let matched = self.rng.gen_bool(0.5);
                let second = if matched {
                    first
                } else {
                    let other = self.rng.gen_range(0..self.topics.len() - 1);
                    if other >= first {
                        other + 1
                    } else {
                        other
                    }
                };
                let mut sentences = [first, second].map(|t| {
                    let n = self.rng.gen_range(2..=2 + 2 * d);
                    let mut words = self.filler_words(n);
                    let topic = self.topics[t].clone();
                    self.insert_at_random(&mut words, &topic);
                    words.join(" ")
                });
                let text_b = std::mem::take(&mut sentences[1]);
                let text_a = std::mem::take(&mut sentences[0]);
                Example { text_a, text_b: Some(text_b), label: Label::Class(matched as usize) }
            }
            SynthKind::RegressionCount => {
                let n = self.rng.gen_range(4..=4 + 4 * d);
                let markers = self.rng.gen_range(0..=n / 2);
                let mut words = self.filler_words(n - markers);
                for _ in 0..markers {
                    self.insert_at_random(&mut words, MARKER);
                }
                let score = markers as f32 / n as f32;
                Example { text_a: words.join(" "), text_b: None, label: Label::Score(score) }
            }
        }
    }
}

/// Generates a task with `sizes.train` training and `sizes.dev` dev examples.
pub fn synth_task(kind: SynthKind, difficulty: u32, seed: u64, sizes: SynthSizes) -> Result<(TaskSpec, Dataset, Dataset)> {
    if sizes.train < 8 || sizes.dev < 8 {
        return Err(Error::input("synthetic splits need at least 8 examples"));
    }
    if !(1..=3).contains(&difficulty) {
        return Err(Error::input(format!("difficulty {difficulty} outside 1..=3")));
    }
    let mut gen = Generator {
        kind,
        difficulty: difficulty as usize,
        fillers: fillers(difficulty),
        topics: topics(difficulty),
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let train = Dataset { split: Split::Train, examples: (0..sizes.train).map(|_| gen.example()).collect() };
    let dev = Dataset { split: Split::Dev, examples: (0..sizes.dev).map(|_| gen.example()).collect() };
    Ok((kind.spec(), train, dev))
}

/// Every word any synthetic task can emit at `difficulty`.
pub fn synth_lexicon(difficulty: u32) -> Vec<String> {
    let mut words = fillers(difficulty);
    words.extend(topics(difficulty));
    words.push(MARKER.to_string());
    words
}
