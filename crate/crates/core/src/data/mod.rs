//! Task descriptions, datasets, tokenization and synthetic task generation.

mod synth;
mod task;
mod tsv;
mod vocab;

pub use synth::{synth_lexicon, synth_task, SynthKind, SynthSizes, MARKER};
pub use task::{Dataset, Example, HeadKind, Label, Metric, Schema, Split, TaskSpec};
pub use tsv::{load_task_dir, load_tsv, write_task_dir, write_tsv, DEV_FILE, TASK_FILE, TRAIN_FILE};
pub use vocab::{build_vocab, Vocab, CLS_ID, OOV_ID, PAD_ID, SEP_ID};

/// A tokenized example ready for batching.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub ids: Vec<u32>,
    pub label: Label,
}

/// Encodes every example of `dataset`, truncating to `max_len` tokens.
pub fn encode_dataset(dataset: &Dataset, vocab: &Vocab, max_len: usize) -> Vec<Encoded> {
    dataset
        .examples
        .iter()
        .map(|ex| Encoded { ids: vocab.encode(&ex.text_a, ex.text_b.as_deref(), max_len), label: ex.label })
        .collect()
}

/// Train and dev splits of one task, already encoded.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub train: Vec<Encoded>,
    pub dev: Vec<Encoded>,
}

impl TaskData {
    pub fn encode(train: &Dataset, dev: &Dataset, vocab: &Vocab, max_len: usize) -> Self {
        TaskData { train: encode_dataset(train, vocab, max_len), dev: encode_dataset(dev, vocab, max_len) }
    }
}
