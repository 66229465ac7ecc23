//! Argument parsing and one handler per subcommand.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use layerfork::alloc::tradeoff_report;
use layerfork::checkpoint::Checkpoint;
use layerfork::data::{build_vocab, load_task_dir, synth_task, write_task_dir, Label, SynthKind, SynthSizes, TaskData, TaskSpec};
use layerfork::distill::{build_base_student, build_student, distill_train, DistillConfig, StudentInit, StudentPlan};
use layerfork::encoder::EncoderConfig;
use layerfork::fixtures::{check_fixtures, read_json, Descriptors, FixtureSet, LadderSet};
use layerfork::merge::write_merged;
use layerfork::metrics;
use layerfork::tensor::AdamConfig;
use layerfork::trainer::{run_job, LayerChoice, SearchRange, TrainConfig, TrainJob};
use serde_json::{json, Value};

use crate::model::Model;
use crate::serve::{ServeConfig, Server};

/// Environment variable naming a fixtures directory; the bundled copies
/// are used when unset.
pub const FIXTURES_ENV: &str = "LAYERFORK_FIXTURES";

#[derive(Debug, Parser)]
#[command(name = "layerfork", version, about = "Partial fine-tuning, distillation and merging of shared-backbone task models")]
pub struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    /// Seed for every random stream of the command.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a seeded base checkpoint with a vocabulary built from task data.
    InitBase(InitBaseArgs),
    /// Write a synthetic task directory.
    Synth(SynthArgs),
    /// Partially fine-tune the top L layers of a base checkpoint.
    Train(TrainArgs),
    /// Pick the fine-tuned layer count from a score table or by training.
    SearchL(SearchArgs),
    /// Distill a teacher into fewer task-specific layers.
    Distill(DistillArgs),
    /// Merge task checkpoints that share a base into one model file.
    Merge(MergeArgs),
    /// Per-task layer allocation under marginal-benefit thresholds.
    Allocate(AllocateArgs),
    /// Score a model on a task's split.
    Eval(EvalArgs),
    /// Run a model on text.
    Infer(InferArgs),
    /// Serve a model over newline-delimited JSON.
    Serve(ServeArgs),
    /// Layer overhead of a set of task shapes or a model.
    ReportOverhead(OverheadArgs),
    /// Recompute every published figure the fixtures carry.
    FixturesCheck,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Cap on optimizer steps.
    #[arg(long)]
    pub steps: Option<usize>,
}

impl TrainFlags {
    fn apply(&self, mut cfg: TrainConfig, seed: u64) -> TrainConfig {
        if let Some(lr) = self.lr {
            cfg.adam = AdamConfig { lr, ..cfg.adam };
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if self.steps.is_some() {
            cfg.max_steps = self.steps;
        }
        cfg.seed = seed;
        cfg
    }
}

#[derive(Debug, Args)]
pub struct InitBaseArgs {
    /// Task directories whose training text builds the vocabulary.
    #[arg(long = "task", required = true)]
    pub tasks: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long, default_value_t = 64)]
    pub ffn: usize,
    #[arg(long, default_value_t = 32)]
    pub max_seq_len: usize,
    /// Most frequent words kept, besides the reserved tokens.
    #[arg(long, default_value_t = 1000)]
    pub max_words: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// keyword, parity, pair-match or regression-count.
    #[arg(long)]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 1)]
    pub difficulty: u32,
    #[arg(long, default_value_t = 512)]
    pub train: usize,
    #[arg(long, default_value_t = 256)]
    pub dev: usize,
    /// Override the task id.
    #[arg(long)]
    pub id: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Job manifest; replaces the other flags.
    #[arg(long, conflicts_with_all = ["base", "task", "layers", "out"])]
    pub job: Option<PathBuf>,
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<PathBuf>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seeded trials; the best dev score wins.
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Bundled layer sweep to search instead of training.
    #[arg(long, conflicts_with_all = ["base", "task", "out"])]
    pub fixtures: Option<String>,
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub min: usize,
    #[arg(long, default_value_t = 10)]
    pub max: usize,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    #[command(flatten)]
    pub train: TrainFlags,
}

fn parse_init(s: &str) -> std::result::Result<StudentInit, String> {
    match s {
        "teacher" => Ok(StudentInit::Teacher),
        "base" => Ok(StudentInit::Base),
        _ => Err(format!("expected `teacher` or `base`, got `{s}`")),
    }
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long)]
    pub task: PathBuf,
    /// Task-specific layers of the student.
    #[arg(long)]
    pub layers: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    pub temperature: f32,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f32,
    /// `teacher` or `base`.
    #[arg(long, value_parser = parse_init, default_value = "teacher")]
    pub init: StudentInit,
    /// Base checkpoint, needed for `--init base`.
    #[arg(long)]
    pub base: Option<PathBuf>,
    /// Compute teacher outputs for the training split once up front.
    #[arg(long)]
    pub cache_teacher: bool,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    #[arg(required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AllocateArgs {
    /// Bundled ladder set.
    #[arg(long, conflicts_with = "ladders")]
    pub fixtures: Option<String>,
    /// Ladder set file.
    #[arg(long)]
    pub ladders: Option<PathBuf>,
    /// Thresholds; defaults to those the ladder set publishes.
    #[arg(long = "c")]
    pub c: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub model: PathBuf,
    /// Task directory with the labelled data.
    #[arg(long)]
    pub task: PathBuf,
    /// `dev` or `train`.
    #[arg(long, default_value = "dev")]
    pub split: String,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    pub model: PathBuf,
    /// Tasks to run; all when omitted.
    #[arg(long = "task")]
    pub tasks: Vec<String>,
    #[arg(long, conflicts_with = "input")]
    pub text: Option<String>,
    #[arg(long, requires = "text")]
    pub text_b: Option<String>,
    /// One example per line, second sentence after a tab.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    pub model: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// 0 picks a free port.
    #[arg(long, default_value_t = 7878)]
    pub port: u16,
    /// Batching window in milliseconds.
    #[arg(long, default_value_t = 2)]
    pub window_ms: u64,
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
    #[arg(long, default_value_t = 32)]
    pub max_batch: usize,
}

#[derive(Debug, Args)]
pub struct OverheadArgs {
    /// Task-shape descriptor file.
    #[arg(long, conflicts_with_all = ["fixtures", "model"])]
    pub ladders: Option<PathBuf>,
    /// Bundled descriptor set, e.g. `mixed`.
    #[arg(long, conflicts_with = "model")]
    pub fixtures: Option<String>,
    /// Merged model or checkpoint.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

/// What a command prints: JSON under `--json`, text otherwise.
pub struct Output {
    pub json: Value,
    pub text: String,
}

impl Output {
    fn new(json: Value, text: impl Into<String>) -> Self {
        Output { json, text: text.into() }
    }
}

/// Parses `args` and runs the command. Returns the process exit code:
/// 2 for usage errors, 1 for failures.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let json = cli.json;
    match run(cli) {
        Ok(out) => {
            if json {
                println!("{}", out.json);
            } else if !out.text.is_empty() {
                println!("{}", out.text.trim_end());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<Output> {
    let seed = cli.seed;
    match cli.command {
        Command::InitBase(a) => init_base(a, seed),
        Command::Synth(a) => synth(a, seed),
        Command::Train(a) => train(a, seed),
        Command::SearchL(a) => search_l(a, seed),
        Command::Distill(a) => distill(a, seed),
        Command::Merge(a) => merge_cmd(a),
        Command::Allocate(a) => allocate(a),
        Command::Eval(a) => eval(a),
        Command::Infer(a) => infer(a),
        Command::Serve(a) => serve(a, cli.json),
        Command::ReportOverhead(a) => report_overhead(a),
        Command::FixturesCheck => fixtures_check(cli.json),
    }
}

pub fn fixture_set() -> Result<FixtureSet> {
    match std::env::var_os(FIXTURES_ENV) {
        Some(dir) => FixtureSet::load(Path::new(&dir)).with_context(|| format!("loading fixtures from {FIXTURES_ENV}")),
        None => Ok(FixtureSet::embedded()),
    }
}

fn load_data(dir: &Path, base: &Checkpoint) -> Result<(TaskSpec, TaskData)> {
    let (spec, train, dev) = load_task_dir(dir)?;
    Ok((spec, TaskData::encode(&train, &dev, &base.vocab, base.config.max_seq_len)))
}

fn require<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| anyhow!("missing --{flag}"))
}

fn init_base(a: InitBaseArgs, seed: u64) -> Result<Output> {
    let mut texts = Vec::new();
    for dir in &a.tasks {
        let (_, train, _) = load_task_dir(dir)?;
        texts.extend(train.examples.into_iter().flat_map(|e| std::iter::once(e.text_a).chain(e.text_b)));
    }
    let vocab = build_vocab(texts.iter().map(String::as_str), a.max_words)?;
    let cfg = EncoderConfig {
        num_layers: a.layers,
        hidden_dim: a.hidden,
        num_heads: a.heads,
        ffn_dim: a.ffn,
        vocab_size: vocab.len(),
        max_seq_len: a.max_seq_len,
    };
    cfg.validate()?;
    let base = Checkpoint::new_base(cfg, vocab, seed)?;
    base.write(&a.out)?;
    let hash = base.content_hash()?;
    Ok(Output::new(
        json!({ "out": a.out, "config": cfg, "vocab_size": cfg.vocab_size, "content_hash": hash }),
        format!("wrote base {} ({} layers, vocab {})", a.out.display(), cfg.num_layers, cfg.vocab_size),
    ))
}

fn synth(a: SynthArgs, seed: u64) -> Result<Output> {
    let (mut spec, train, dev) = synth_task(a.kind, a.difficulty, seed, SynthSizes { train: a.train, dev: a.dev })?;
    if let Some(id) = a.id {
        spec.id = id;
        spec.validate()?;
    }
    write_task_dir(&a.out, &spec, &train, &dev)?;
    Ok(Output::new(
        json!({ "out": a.out, "task": spec, "train": train.len(), "dev": dev.len() }),
        format!("wrote {} ({} train, {} dev) to {}", spec.id, train.len(), dev.len(), a.out.display()),
    ))
}

fn job_output(out: &Path, r: &layerfork::trainer::JobResult) -> Result<Output> {
    r.checkpoint.write(out)?;
    let scores: Vec<String> = r.scores.iter().map(|(l, s)| format!("L={l}: {s:.4}")).collect();
    Ok(Output::new(
        json!({
            "out": out,
            "task": r.checkpoint.task_id(),
            "layers": r.layers,
            "frozen_depth": r.checkpoint.frozen_depth,
            "seed": r.seed,
            "dev_score": r.dev_score,
            "scores": r.scores,
        }),
        format!(
            "{}: L = {} (f = {}), seed {}, dev {:.4}\n{}\nwrote {}",
            r.checkpoint.task_id(),
            r.layers,
            r.checkpoint.frozen_depth,
            r.seed,
            r.dev_score,
            scores.join("\n"),
            out.display()
        ),
    ))
}

fn train(a: TrainArgs, seed: u64) -> Result<Output> {
    let job = match &a.job {
        Some(path) => TrainJob::from_file(path)?,
        None => TrainJob {
            task: require(a.task.clone(), "task")?,
            base: require(a.base.clone(), "base")?,
            layers: LayerChoice::Fixed { layers: require(a.layers, "layers")? },
            trials: a.trials,
            seeds: None,
            output: require(a.out.clone(), "out")?,
            train: a.train.apply(TrainConfig::default(), seed),
        },
    };
    let base = Checkpoint::read(&job.base)?;
    let (spec, data) = load_data(&job.task, &base)?;
    let seeds = job.seed_list()?;
    let result = run_job(&base, &spec, &data, job.layers, &seeds, &job.train)?;
    job_output(&job.output, &result)
}

fn search_l(a: SearchArgs, seed: u64) -> Result<Output> {
    if let Some(name) = &a.fixtures {
        if name != "table1" {
            bail!("no layer sweep named `{name}` (expected `table1`)");
        }
        let set = fixture_set()?;
        let sweep = &set.table1;
        let mut sweep = sweep.clone();
        sweep.search = SearchRange::new(a.min, a.max, sweep.base_layers)?;
        let picks = sweep.select_all()?;
        let text: Vec<String> = picks.iter().map(|(t, l)| format!("{t}: L* = {l} (f = {})", sweep.base_layers - l)).collect();
        let json: serde_json::Map<String, Value> =
            picks.iter().map(|(t, l)| (t.clone(), json!({ "layers": l, "frozen_depth": sweep.base_layers - l }))).collect();
        return Ok(Output::new(Value::Object(json), text.join("\n")));
    }
    let base = Checkpoint::read(&require(a.base, "base")?)?;
    let (spec, data) = load_data(&require(a.task, "task")?, &base)?;
    let cfg = a.train.apply(TrainConfig::default(), seed);
    let search = SearchRange::new(a.min, a.max, base.config.num_layers)?;
    let seeds = layerfork::trainer::trial_seeds(seed, a.trials.max(1));
    let result = run_job(&base, &spec, &data, LayerChoice::Search { search }, &seeds, &cfg)?;
    job_output(&require(a.out, "out")?, &result)
}

fn distill(a: DistillArgs, seed: u64) -> Result<Output> {
    let teacher = Checkpoint::read(&a.teacher)?;
    let plan = StudentPlan { task_layers: a.layers, temperature: a.temperature, alpha: a.alpha };
    let student = match a.init {
        StudentInit::Teacher => build_student(&teacher, &plan)?,
        StudentInit::Base => {
            let base = Checkpoint::read(&require(a.base.clone(), "base")?)?;
            build_base_student(&base, &teacher, &plan, seed)?
        }
    };
    let (spec, data) = load_data(&a.task, &teacher)?;
    if &spec != teacher.task()? {
        bail!("task directory holds `{}`, teacher was trained on `{}`", spec.id, teacher.task_id());
    }
    let cfg = DistillConfig { train: a.train.apply(TrainConfig::default(), seed), cache_teacher: a.cache_teacher };
    let (trained, score) = distill_train(&teacher, student, &plan, &cfg, &data)?;
    trained.write(&a.out)?;
    let init = match a.init {
        StudentInit::Teacher => "teacher",
        StudentInit::Base => "base",
    };
    Ok(Output::new(
        json!({
            "out": a.out,
            "task": spec.id,
            "frozen_depth": trained.frozen_depth,
            "task_layers": trained.task_layers,
            "init": init,
            "dev_score": score,
        }),
        format!(
            "{}: student ({}, {}) from {init} init, dev {score:.4}\nwrote {}",
            spec.id,
            trained.frozen_depth,
            trained.task_layers,
            a.out.display()
        ),
    ))
}

fn merge_cmd(a: MergeArgs) -> Result<Output> {
    let manifest = write_merged(&a.out, &a.checkpoints)?;
    let model = Model::load(&a.out)?.into_merged()?;
    let o = model.overhead();
    let tasks: Vec<&str> = manifest.members.iter().map(|m| m.task.as_str()).collect();
    Ok(Output::new(
        json!({ "out": a.out, "tasks": tasks, "shared_depth": model.shared_depth(), "overhead": o.to_string() }),
        format!("merged {} tasks (shared depth {}), overhead {o}\nwrote {}", tasks.len(), model.shared_depth(), a.out.display()),
    ))
}

fn allocate(a: AllocateArgs) -> Result<Output> {
    let set: LadderSet = match (&a.fixtures, &a.ladders) {
        (Some(name), _) if name == "table3" => fixture_set()?.table3,
        (Some(name), _) => bail!("no ladder set named `{name}` (expected `table3`)"),
        (None, Some(path)) => read_json(path)?,
        (None, None) => bail!("give --fixtures or --ladders"),
    };
    let cs = if a.c.is_empty() { set.published.iter().map(|p| p.c).collect() } else { a.c.clone() };
    if cs.is_empty() {
        bail!("no thresholds given and the ladder set publishes none");
    }
    let rows = tradeoff_report(&set.ladders, &cs, set.reference_layers_per_task)?;
    let mut text = String::new();
    for r in &rows {
        let cells: Vec<String> =
            r.selections.iter().map(|s| format!("{} ({}, {})", s.task, s.frozen_depth, s.selection.layers)).collect();
        writeln!(text, "c = {:.1}: {} | avg {:.1} | overhead {}", r.c, cells.join(" "), r.average, r.overhead)?;
    }
    let json: Vec<Value> = rows
        .iter()
        .map(|r| {
            json!({
                "c": r.c,
                "selections": r.selections,
                "average": r.average,
                "layers": r.overhead.layers(),
                "overhead": r.overhead.to_string(),
            })
        })
        .collect();
    Ok(Output::new(Value::Array(json), text))
}

fn eval(a: EvalArgs) -> Result<Output> {
    let model = Model::load(&a.model)?;
    let (spec, train, dev) = load_task_dir(&a.task)?;
    let data = match a.split.as_str() {
        "dev" => dev,
        "train" => train,
        other => bail!("unknown split `{other}`"),
    };
    let model_spec = model.spec(&spec.id)?;
    if model_spec != &spec {
        bail!("model's `{}` head differs from the task directory's", spec.id);
    }
    let seqs: Vec<Vec<u32>> = data.examples.iter().map(|e| model.encode(&e.text_a, e.text_b.as_deref())).collect();
    let outputs = model.outputs(&seqs, &[spec.id.clone()], a.batch_size)?;
    let labels: Vec<Label> = data.examples.iter().map(|e| e.label).collect();
    let score = metrics::evaluate(&spec, &outputs[&spec.id], &labels)?;
    Ok(Output::new(
        json!({ "task": spec.id, "split": a.split, "metric": spec.metric, "score": score, "examples": labels.len() }),
        format!("{} {}: {:?} = {score:.4} over {} examples", spec.id, a.split, spec.metric, labels.len()),
    ))
}

fn infer(a: InferArgs) -> Result<Output> {
    let model = Model::load(&a.model)?;
    let examples: Vec<(String, Option<String>)> = match (&a.text, &a.input) {
        (Some(t), _) => vec![(t.clone(), a.text_b.clone())],
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| match l.split_once('\t') {
                    Some((x, y)) => (x.to_string(), Some(y.to_string())),
                    None => (l.to_string(), None),
                })
                .collect()
        }
        (None, None) => bail!("give --text or --input"),
    };
    let seqs: Vec<Vec<u32>> = examples.iter().map(|(x, y)| model.encode(x, y.as_deref())).collect();
    let outputs = model.outputs(&seqs, &a.tasks, a.batch_size)?;
    let mut json = Vec::new();
    let mut text = String::new();
    for (i, (x, _)) in examples.iter().enumerate() {
        let mut per_task = serde_json::Map::new();
        let mut cells = Vec::new();
        for (task, rows) in &outputs {
            let row = &rows[i];
            let prediction = match model.spec(task)?.head {
                layerfork::data::HeadKind::Regression => json!(row[0]),
                _ => json!(metrics::argmax(row)),
            };
            cells.push(format!("{task}={prediction} {row:?}"));
            per_task.insert(task.clone(), json!({ "output": row, "prediction": prediction }));
        }
        writeln!(text, "{x}\t{}", cells.join("\t"))?;
        json.push(json!({ "text_a": x, "outputs": per_task }));
    }
    Ok(Output::new(Value::Array(json), text))
}

fn serve(a: ServeArgs, json_mode: bool) -> Result<Output> {
    let model = Model::load(&a.model)?.into_merged()?;
    let cfg = ServeConfig { window: Duration::from_millis(a.window_ms), workers: a.workers, max_batch: a.max_batch };
    let server = Server::bind((a.host.as_str(), a.port), model, cfg)?;
    let addr = server.local_addr()?;
    if json_mode {
        println!("{}", json!({ "listening": addr.to_string() }));
    } else {
        println!("listening on {addr}");
    }
    std::io::stdout().flush()?;
    server.run()?;
    Ok(Output::new(json!({ "stopped": addr.to_string() }), "stopped"))
}

fn report_overhead(a: OverheadArgs) -> Result<Output> {
    let (name, o) = if let Some(path) = &a.ladders {
        let d: Descriptors = read_json(path)?;
        (d.name.clone(), d.overhead())
    } else if let Some(name) = &a.fixtures {
        let set = fixture_set()?;
        let d = set.descriptors(name)?;
        (d.name.clone(), d.overhead())
    } else if let Some(path) = &a.model {
        let m = Model::load(path)?.into_merged()?;
        (path.display().to_string(), m.overhead())
    } else {
        bail!("give --ladders, --fixtures or --model");
    };
    Ok(Output::new(
        json!({
            "name": name,
            "layers": o.layers(),
            "shared": o.shared,
            "task_specific": o.task_specific,
            "reference": o.reference,
            "percent": o.percent(),
            "overhead": o.to_string(),
        }),
        o.to_string(),
    ))
}

fn fixtures_check(json_mode: bool) -> Result<Output> {
    let checks = check_fixtures(&fixture_set()?)?;
    let failed = checks.iter().filter(|c| !c.pass).count();
    let mut text = String::new();
    for c in &checks {
        let mark = if c.pass { "PASS" } else { "FAIL" };
        writeln!(text, "{mark} {}: expected {}, got {}", c.name, c.expected, c.actual)?;
    }
    if failed > 0 {
        if json_mode {
            println!("{}", json!({ "checks": checks, "failed": failed }));
        } else {
            print!("{text}");
        }
        bail!("{failed} of {} fixture checks failed", checks.len());
    }
    writeln!(text, "all {} checks pass", checks.len())?;
    Ok(Output::new(json!({ "checks": checks, "failed": 0 }), text))
}
