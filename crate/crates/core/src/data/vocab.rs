use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const OOV_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;

const RESERVED: [&str; 4] = ["[PAD]", "[OOV]", "[CLS]", "[SEP]"];

/// Whitespace vocabulary with four reserved ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

/// Lowercased whitespace-separated words.
fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

/// Builds a vocabulary from training texts: most frequent first, ties in
/// lexicographic order, at most `max_size` words besides the reserved ids.
pub fn build_vocab<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: usize) -> Result<Vocab> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut seen_text = false;
    for text in texts {
        seen_text = true;
        for w in words(text) {
            *counts.entry(w).or_default() += 1;
        }
    }
    if !seen_text {
        return Err(Error::input("cannot build a vocabulary from an empty split"));
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().filter(|(w, _)| !RESERVED.contains(&w.as_str())).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size);
    let tokens = RESERVED.iter().map(|s| s.to_string()).chain(ranked.into_iter().map(|(w, _)| w)).collect();
    Vocab::from_tokens(tokens)
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::input("vocabulary must start with [PAD] [OOV] [CLS] [SEP]"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::input(format!("duplicate vocabulary entry `{t}`")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(OOV_ID)
    }

    fn push_words(&self, text: &str, out: &mut Vec<u32>) {
        out.extend(words(text).map(|w| self.id(&w)));
    }

    /// `[CLS] words [SEP]`.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let mut ids = vec![CLS_ID];
        self.push_words(text, &mut ids);
        ids.push(SEP_ID);
        ids
    }

    /// `[CLS] a [SEP]` or `[CLS] a [SEP] b [SEP]`, cut to `max_len` tokens
    /// with the final `[SEP]` kept.
    pub fn encode(&self, text_a: &str, text_b: Option<&str>, max_len: usize) -> Vec<u32> {
        let mut ids = self.tokenize(text_a);
        if let Some(b) = text_b {
            self.push_words(b, &mut ids);
            ids.push(SEP_ID);
        }
        if ids.len() > max_len && max_len >= 2 {
            ids.truncate(max_len - 1);
            ids.push(SEP_ID);
        }
        ids
    }
}
