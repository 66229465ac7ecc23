use std::path::Path;

use super::task::{Dataset, Example, HeadKind, Label, Schema, Split, TaskSpec};
use crate::error::{Error, Result};

/// Reads a tab-separated file with a header naming `sentence1`,
/// `sentence2` (pair tasks only) and `label`.
pub fn load_tsv(path: &Path, spec: &TaskSpec, split: Split) -> Result<Dataset> {
    let shown = path.display().to_string();
    let err = |row: usize, detail: String| Error::Data { path: shown.clone(), row, detail };

    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .has_headers(true)
        .from_path(path)
        .map_err(|e| err(0, e.to_string()))?;
    let headers = reader.headers().map_err(|e| err(1, e.to_string()))?.clone();
    if headers.iter().all(|h| h.trim().is_empty()) {
        return Err(err(1, "empty file".into()));
    }
    let column =
        |name: &str| headers.iter().position(|h| h.trim() == name).ok_or_else(|| err(1, format!("missing column `{name}`")));
    let a_col = column("sentence1")?;
    let b_col = match spec.schema {
        Schema::SentencePair => Some(column("sentence2")?),
        Schema::SingleSentence => None,
    };
    let label_col = column("label")?;

    let mut examples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| err(row, e.to_string()))?;
        let field = |c: usize| record.get(c).ok_or_else(|| err(row, format!("missing field {}", c + 1)));
        let raw = field(label_col)?.trim();
        let label = match spec.head {
            HeadKind::Classification { classes } => {
                let c: usize = raw.parse().map_err(|_| err(row, format!("unparsable label `{raw}`")))?;
                if c >= classes {
                    return Err(err(row, format!("label {c} outside [0, {classes})")));
                }
                Label::Class(c)
            }
            HeadKind::Regression => {
                let s: f32 = raw.parse().map_err(|_| err(row, format!("unparsable label `{raw}`")))?;
                if !s.is_finite() {
                    return Err(err(row, format!("non-finite label `{raw}`")));
                }
                Label::Score(s)
            }
        };
        examples.push(Example {
            text_a: field(a_col)?.to_string(),
            text_b: b_col.map(field).transpose()?.map(str::to_string),
            label,
        });
    }
    Ok(Dataset { split, examples })
}

/// Writes `dataset` in the layout [`load_tsv`] reads.
pub fn write_tsv(path: &Path, spec: &TaskSpec, dataset: &Dataset) -> Result<()> {
    let shown = path.display().to_string();
    let err = |e: csv::Error| Error::Data { path: shown.clone(), row: 0, detail: e.to_string() };
    let mut writer =
        csv::WriterBuilder::new().delimiter(b'\t').quote_style(csv::QuoteStyle::Never).from_path(path).map_err(err)?;
    let pair = spec.schema == Schema::SentencePair;
    let header: &[&str] = if pair { &["sentence1", "sentence2", "label"] } else { &["sentence1", "label"] };
    writer.write_record(header).map_err(err)?;
    for ex in &dataset.examples {
        let label = match ex.label {
            Label::Class(c) => c.to_string(),
            Label::Score(s) => s.to_string(),
        };
        let mut record = vec![ex.text_a.as_str()];
        if pair {
            record.push(ex.text_b.as_deref().unwrap_or(""));
        }
        record.push(&label);
        writer.write_record(&record).map_err(err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// File names inside a task directory.
pub const TASK_FILE: &str = "task.json";
pub const TRAIN_FILE: &str = "train.tsv";
pub const DEV_FILE: &str = "dev.tsv";

/// Loads `task.json`, `train.tsv` and `dev.tsv` from `dir`.
pub fn load_task_dir(dir: &Path) -> Result<(TaskSpec, Dataset, Dataset)> {
    let spec_path = dir.join(TASK_FILE);
    let text = std::fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
    let spec = TaskSpec::from_json(&text)?;
    let train = load_tsv(&dir.join(TRAIN_FILE), &spec, Split::Train)?;
    let dev = load_tsv(&dir.join(DEV_FILE), &spec, Split::Dev)?;
    Ok((spec, train, dev))
}

/// Writes a task directory readable by [`load_task_dir`].
pub fn write_task_dir(dir: &Path, spec: &TaskSpec, train: &Dataset, dev: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let spec_path = dir.join(TASK_FILE);
    let json = serde_json::to_string_pretty(spec)?;
    std::fs::write(&spec_path, json).map_err(|e| Error::io(&spec_path, e))?;
    write_tsv(&dir.join(TRAIN_FILE), spec, train)?;
    write_tsv(&dir.join(DEV_FILE), spec, dev)
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;
    use crate::data::task::Metric;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn task_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for kind in crate::data::SynthKind::ALL {
            let sizes = crate::data::SynthSizes { train: 8, dev: 8 };
            let (spec, train, dev) = crate::data::synth_task(kind, 1, 4, sizes).unwrap();
            let path = dir.path().join(kind.name());
            write_task_dir(&path, &spec, &train, &dev).unwrap();
            let (spec2, train2, dev2) = load_task_dir(&path).unwrap();
            assert_eq!((spec2, train2, dev2), (spec, train, dev));
        }
    }

    fn single() -> TaskSpec {
        TaskSpec::new("sst", HeadKind::Classification { classes: 2 }, Metric::Accuracy, Schema::SingleSentence).unwrap()
    }

    #[test]
    fn two_rows() {
        let f = write("sentence1\tlabel\ngood film\t1\nbad film\t0\n");
        let d = load_tsv(f.path(), &single(), Split::Train).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.examples[1].label, Label::Class(0));
    }

    #[test]
    fn label_out_of_range_names_the_row() {
        let f = write("sentence1\tlabel\ngood\t1\nbad\t2\n");
        let e = load_tsv(f.path(), &single(), Split::Train).unwrap_err();
        assert!(matches!(e, Error::Data { row: 3, .. }), "{e}");
    }

    #[test]
    fn missing_column_and_empty_file() {
        let f = write("sentence1\tscore\nx\t1\n");
        assert!(load_tsv(f.path(), &single(), Split::Train).is_err());
        let f = write("");
        assert!(load_tsv(f.path(), &single(), Split::Train).is_err());
    }

    #[test]
    fn pair_and_regression() {
        let spec = TaskSpec::new("sts", HeadKind::Regression, Metric::Pearson, Schema::SentencePair).unwrap();
        let f = write("sentence1\tsentence2\tlabel\na b\tc d\t3.5\n");
        let d = load_tsv(f.path(), &spec, Split::Dev).unwrap();
        assert_eq!(d.examples[0].text_b.as_deref(), Some("c d"));
        assert_eq!(d.examples[0].label, Label::Score(3.5));
        let f = write("sentence1\tsentence2\tlabel\na b\tc d\tmany\n");
        assert!(load_tsv(f.path(), &spec, Split::Dev).is_err());
    }
}
