//! Published layer sweeps, overhead descriptors and allocation ladders,
//! shipped as JSON under `fixtures/` and embedded at build time.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::alloc::{select_layers, tradeoff_report, PerformanceLadder};
use crate::error::{Error, Result};
use crate::merge::{overhead, Overhead, TaskShape};
use crate::trainer::{search_layer_count, SearchRange};

pub const TABLE1_FILE: &str = "table1.json";
pub const TABLE3_FILE: &str = "table3.json";
/// Suffixes of the `table2_<name>.json` descriptor files.
pub const TABLE2_NAMES: [&str; 6] = ["full_ft", "kd1", "kd2", "kd3", "wo_kd", "mixed"];

macro_rules! fixture {
    ($file:literal) => {
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/", $file))
    };
}

const EMBEDDED_TABLE1: &str = fixture!("table1.json");
const EMBEDDED_TABLE2: [&str; 6] = [
    fixture!("table2_full_ft.json"),
    fixture!("table2_kd1.json"),
    fixture!("table2_kd2.json"),
    fixture!("table2_kd3.json"),
    fixture!("table2_wo_kd.json"),
    fixture!("table2_mixed.json"),
];
const EMBEDDED_TABLE3: &str = fixture!("table3.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub layers: usize,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublishedChoice {
    pub frozen_depth: usize,
    pub layers: usize,
}

/// Dev score per fine-tuned layer count and task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSweep {
    pub tasks: Vec<String>,
    pub base_layers: usize,
    pub search: SearchRange,
    pub rows: Vec<SweepRow>,
    #[serde(default)]
    pub published: BTreeMap<String, PublishedChoice>,
}

impl LayerSweep {
    pub fn scores_for(&self, task: &str) -> Result<BTreeMap<usize, f64>> {
        let col = self.tasks.iter().position(|t| t == task).ok_or_else(|| Error::UnknownTask(task.to_string()))?;
        self.rows
            .iter()
            .map(|r| {
                let s = r.scores.get(col).ok_or_else(|| Error::input(format!("row L = {} is short", r.layers)))?;
                Ok((r.layers, *s))
            })
            .collect()
    }

    /// Searched `L*` for every task, in column order.
    pub fn select_all(&self) -> Result<Vec<(String, usize)>> {
        let range = SearchRange::new(self.search.min, self.search.max, self.base_layers)?;
        self.tasks.iter().map(|t| Ok((t.clone(), search_layer_count(&self.scores_for(t)?, range)?))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    pub task: String,
    #[serde(flatten)]
    pub shape: TaskShape,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublishedOverhead {
    pub layers: usize,
    pub overhead: String,
}

/// Per-task shapes of one deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptors {
    pub name: String,
    pub shared: bool,
    pub reference_layers_per_task: usize,
    pub tasks: Vec<TaskDescriptor>,
    #[serde(default)]
    pub published: Option<PublishedOverhead>,
}

impl Descriptors {
    pub fn overhead(&self) -> Overhead {
        let shapes: Vec<TaskShape> = self.tasks.iter().map(|t| t.shape).collect();
        overhead(&shapes, self.shared, self.reference_layers_per_task)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedTradeoff {
    pub c: f64,
    pub average: f64,
    pub layers: usize,
    pub overhead: String,
    /// Task → (frozen depth, task-specific layers).
    pub selections: BTreeMap<String, (usize, usize)>,
}

/// Ladders for every task, plus published allocations if known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderSet {
    #[serde(default = "default_reference")]
    pub reference_layers_per_task: usize,
    pub ladders: Vec<PerformanceLadder>,
    #[serde(default)]
    pub published: Vec<PublishedTradeoff>,
}

fn default_reference() -> usize {
    12
}

/// All bundled fixtures.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSet {
    pub table1: LayerSweep,
    pub table2: Vec<(String, Descriptors)>,
    pub table3: LadderSet,
}

fn parse<T: DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Format(format!("{what}: {e}")))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, &path.display().to_string())
}

impl FixtureSet {
    /// The copies compiled into the library.
    pub fn embedded() -> Self {
        let table2 = TABLE2_NAMES
            .iter()
            .zip(EMBEDDED_TABLE2)
            .map(|(n, text)| (n.to_string(), parse(text, n).expect("embedded fixture")))
            .collect();
        FixtureSet {
            table1: parse(EMBEDDED_TABLE1, TABLE1_FILE).expect("embedded fixture"),
            table2,
            table3: parse(EMBEDDED_TABLE3, TABLE3_FILE).expect("embedded fixture"),
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let table2 = TABLE2_NAMES
            .iter()
            .map(|n| Ok((n.to_string(), read_json(&dir.join(format!("table2_{n}.json")))?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(FixtureSet { table1: read_json(&dir.join(TABLE1_FILE))?, table2, table3: read_json(&dir.join(TABLE3_FILE))? })
    }

    pub fn descriptors(&self, name: &str) -> Result<&Descriptors> {
        self.table2
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d)
            .ok_or_else(|| Error::input(format!("no descriptor set `{name}`")))
    }
}

/// Splits `"33 (34.3%)"` into `(33, 34.3)`.
pub fn parse_overhead(text: &str) -> Result<(usize, f64)> {
    let bad = || Error::Format(format!("unparsable overhead `{text}`"));
    let (layers, rest) = text.trim().split_once(' ').ok_or_else(bad)?;
    let pct = rest.trim().strip_prefix('(').and_then(|r| r.strip_suffix("%)")).ok_or_else(bad)?;
    Ok((layers.parse().map_err(|_| bad())?, pct.parse().map_err(|_| bad())?))
}

/// Layer count equal, and the percentage rounded to one decimal equal to
/// the published figure.
pub fn overhead_matches(actual: &Overhead, published: &str) -> Result<bool> {
    let (layers, pct) = parse_overhead(published)?;
    let rounded: f64 = format!("{:.1}", actual.percent()).parse().expect("formatted float");
    Ok(layers == actual.layers() && (rounded - pct).abs() < 1e-9)
}

/// One comparison of a computed value against a published one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub expected: String,
    pub actual: String,
    pub pass: bool,
}

fn check(name: String, expected: String, actual: String, pass: bool) -> Check {
    Check { name, expected, actual, pass }
}

/// Recomputes every published figure the fixtures carry.
pub fn check_fixtures(set: &FixtureSet) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for (task, l) in set.table1.select_all()? {
        if let Some(p) = set.table1.published.get(&task) {
            let f = set.table1.base_layers - l;
            out.push(check(
                format!("search {task}"),
                format!("({}, {})", p.frozen_depth, p.layers),
                format!("({f}, {l})"),
                p.layers == l && p.frozen_depth == f,
            ));
        }
    }
    for (name, d) in &set.table2 {
        if let Some(p) = &d.published {
            let o = d.overhead();
            out.push(check(format!("overhead {name}"), p.overhead.clone(), o.to_string(), overhead_matches(&o, &p.overhead)?));
        }
    }
    let t3 = &set.table3;
    let cs: Vec<f64> = t3.published.iter().map(|p| p.c).collect();
    let rows = tradeoff_report(&t3.ladders, &cs, t3.reference_layers_per_task)?;
    for (p, row) in t3.published.iter().zip(&rows) {
        for s in &row.selections {
            if let Some(&(f, n)) = p.selections.get(&s.task) {
                out.push(check(
                    format!("allocate c={} {}", p.c, s.task),
                    format!("({f}, {n})"),
                    format!("({}, {})", s.frozen_depth, s.selection.layers),
                    f == s.frozen_depth && n == s.selection.layers,
                ));
            }
        }
        let avg = format!("{:.1}", row.average);
        out.push(check(
            format!("average c={}", p.c),
            format!("{:.1}", p.average),
            avg.clone(),
            avg == format!("{:.1}", p.average),
        ));
        out.push(check(
            format!("overhead c={}", p.c),
            p.overhead.clone(),
            row.overhead.to_string(),
            overhead_matches(&row.overhead, &p.overhead)?,
        ));
    }
    Ok(out)
}

/// Selection for one ladder of the set, by task id.
pub fn select_in(set: &LadderSet, task: &str, c: f64) -> Result<usize> {
    let ladder = set.ladders.iter().find(|l| l.task == task).ok_or_else(|| Error::UnknownTask(task.to_string()))?;
    Ok(select_layers(ladder, c)?.layers)
}
