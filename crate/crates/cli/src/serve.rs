//! Batched inference over newline-delimited JSON on a TCP socket.
//!
//! Request:  `{"id": .., "text_a": "..", "text_b": "..", "tasks": ["a", "b"]}`
//! Response: `{"id": .., "outputs": {"a": [..]}, "latency_us": 812, "layers_executed": 5}`
//! Commands: `{"cmd": "stats"}`, `{"cmd": "swap", "task": "a", "checkpoint": "a2.ckpt"}`,
//! `{"cmd": "shutdown"}`.
//!
//! A connection thread parses lines and queues requests. One batcher
//! collects requests for up to `window`, groups them by task set and hands
//! each group to the worker pool. Workers take a model snapshot per group,
//! so a swap never splits a batch.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use layerfork::checkpoint::Checkpoint;
use layerfork::encoder::Batch;
use layerfork::merge::{LiveModel, MergedModel};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::stats::ServeStats;

#[derive(Debug, Clone, Copy)]
pub struct ServeConfig {
    pub window: Duration,
    pub workers: usize,
    pub max_batch: usize,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig { window: Duration::from_millis(2), workers: 4, max_batch: 32 }
    }
}

#[derive(Debug, Deserialize)]
struct InferRequest {
    #[serde(default)]
    id: Value,
    text_a: String,
    #[serde(default)]
    text_b: Option<String>,
    tasks: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
enum Command {
    Stats,
    Swap { task: String, checkpoint: PathBuf },
    Shutdown,
}

#[derive(Debug, Serialize)]
struct InferResponse {
    id: Value,
    outputs: BTreeMap<String, Vec<f32>>,
    latency_us: u64,
    layers_executed: usize,
}

struct Pending {
    request: InferRequest,
    received: Instant,
    reply: Sender<String>,
}

struct Group {
    tasks: Vec<String>,
    items: Vec<Pending>,
}

struct Shared {
    live: LiveModel,
    stats: Mutex<ServeStats>,
    shutdown: AtomicBool,
}

pub struct Server {
    listener: TcpListener,
    shared: Arc<Shared>,
    cfg: ServeConfig,
}

fn error_line(id: &Value, msg: impl std::fmt::Display) -> String {
    json!({ "id": id, "error": msg.to_string() }).to_string()
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, model: MergedModel, cfg: ServeConfig) -> Result<Server> {
        let listener = TcpListener::bind(addr).context("binding listener")?;
        let shared = Arc::new(Shared {
            live: LiveModel::new(model),
            stats: Mutex::new(ServeStats::default()),
            shutdown: AtomicBool::new(false),
        });
        Ok(Server { listener, shared, cfg })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Accepts connections until a shutdown command arrives.
    pub fn run(self) -> Result<()> {
        let addr = self.local_addr()?;
        let (queue_tx, queue_rx) = mpsc::channel::<Pending>();
        let (work_tx, work_rx) = mpsc::channel::<Group>();
        let work_rx = Arc::new(Mutex::new(work_rx));
        let mut handles = Vec::new();
        for _ in 0..self.cfg.workers.max(1) {
            let rx = Arc::clone(&work_rx);
            let shared = Arc::clone(&self.shared);
            handles.push(thread::spawn(move || worker(rx, shared)));
        }
        let cfg = self.cfg;
        handles.push(thread::spawn(move || batcher(queue_rx, work_tx, cfg)));

        for stream in self.listener.incoming() {
            if self.shared.shutdown.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let shared = Arc::clone(&self.shared);
            let queue = queue_tx.clone();
            thread::spawn(move || {
                if let Err(e) = connection(stream, shared, queue, addr) {
                    eprintln!("connection closed: {e:#}");
                }
            });
        }
        drop(queue_tx);
        // Connection threads may still hold queue senders; workers finish
        // whatever reaches them and exit once every sender is gone.
        Ok(())
    }
}

fn connection(stream: TcpStream, shared: Arc<Shared>, queue: Sender<Pending>, addr: SocketAddr) -> Result<()> {
    let mut writer = stream.try_clone()?;
    let (reply_tx, reply_rx) = mpsc::channel::<String>();
    let out = thread::spawn(move || {
        for line in reply_rx {
            if writer.write_all(line.as_bytes()).and_then(|_| writer.write_all(b"\n")).is_err() {
                break;
            }
        }
    });
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let received = Instant::now();
        let value: Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                let _ = reply_tx.send(error_line(&Value::Null, format!("malformed request: {e}")));
                continue;
            }
        };
        if value.get("cmd").is_some() {
            let stop = matches!(value.get("cmd").and_then(Value::as_str), Some("shutdown"));
            let _ = reply_tx.send(command(value, &shared));
            if stop {
                shared.shutdown.store(true, Ordering::SeqCst);
                // Wake the accept loop so it sees the flag.
                let _ = TcpStream::connect(addr);
                break;
            }
            continue;
        }
        let id = value.get("id").cloned().unwrap_or(Value::Null);
        match serde_json::from_value::<InferRequest>(value) {
            Ok(request) => {
                if let Err(msg) = check_request(&request, &shared) {
                    let _ = reply_tx.send(error_line(&id, msg));
                    continue;
                }
                if queue.send(Pending { request, received, reply: reply_tx.clone() }).is_err() {
                    let _ = reply_tx.send(error_line(&id, "server is shutting down"));
                }
            }
            Err(e) => {
                let _ = reply_tx.send(error_line(&id, format!("malformed request: {e}")));
            }
        }
    }
    drop(reply_tx);
    let _ = out.join();
    Ok(())
}

fn check_request(r: &InferRequest, shared: &Shared) -> std::result::Result<(), String> {
    if r.tasks.is_empty() {
        return Err("request names no tasks".into());
    }
    let model = shared.live.snapshot();
    match r.tasks.iter().find(|t| model.branch(t).is_err()) {
        Some(t) => Err(format!("unknown task id `{t}`")),
        None => Ok(()),
    }
}

fn command(value: Value, shared: &Shared) -> String {
    match serde_json::from_value::<Command>(value) {
        Ok(Command::Stats) => {
            let summary = shared.stats.lock().expect("stats lock").summary();
            json!({ "stats": summary }).to_string()
        }
        Ok(Command::Swap { task, checkpoint }) => {
            let result =
                Checkpoint::read(&checkpoint).map_err(anyhow::Error::from).and_then(|c| Ok(shared.live.swap(&task, &c)?));
            match result {
                Ok(()) => json!({ "ok": true, "task": task }).to_string(),
                Err(e) => error_line(&Value::Null, format!("swap rejected: {e:#}")),
            }
        }
        Ok(Command::Shutdown) => json!({ "ok": true }).to_string(),
        Err(e) => error_line(&Value::Null, format!("bad command: {e}")),
    }
}

fn batcher(queue: Receiver<Pending>, work: Sender<Group>, cfg: ServeConfig) {
    while let Ok(first) = queue.recv() {
        let deadline = Instant::now() + cfg.window;
        let mut batch = vec![first];
        while batch.len() < cfg.max_batch.max(1) {
            let left = deadline.saturating_duration_since(Instant::now());
            match queue.recv_timeout(left) {
                Ok(p) => batch.push(p),
                Err(RecvTimeoutError::Timeout) => break,
                Err(RecvTimeoutError::Disconnected) => break,
            }
        }
        let mut groups: BTreeMap<BTreeSet<String>, Vec<Pending>> = BTreeMap::new();
        for p in batch {
            let key: BTreeSet<String> = p.request.tasks.iter().cloned().collect();
            groups.entry(key).or_default().push(p);
        }
        for (tasks, items) in groups {
            if work.send(Group { tasks: tasks.into_iter().collect(), items }).is_err() {
                return;
            }
        }
    }
}

fn worker(rx: Arc<Mutex<Receiver<Group>>>, shared: Arc<Shared>) {
    loop {
        let group = match rx.lock().expect("work queue lock").recv() {
            Ok(g) => g,
            Err(_) => return,
        };
        run_group(group, &shared);
    }
}

fn run_group(group: Group, shared: &Shared) {
    let model = shared.live.snapshot();
    let cfg = model.config();
    let seqs: Vec<Vec<u32>> = group
        .items
        .iter()
        .map(|p| model.vocab().encode(&p.request.text_a, p.request.text_b.as_deref(), cfg.max_seq_len))
        .collect();
    let tasks: Vec<&str> = group.tasks.iter().map(String::as_str).collect();
    let result = Batch::new(&seqs).map_err(anyhow::Error::from).and_then(|b| Ok(model.infer(&b, &tasks)?));
    let inference = match result {
        Ok(inf) => inf,
        Err(e) => {
            for p in group.items {
                let _ = p.reply.send(error_line(&p.request.id, format!("{e:#}")));
            }
            return;
        }
    };
    for (row, p) in group.items.into_iter().enumerate() {
        let outputs = inference
            .outputs
            .iter()
            .map(|(task, t)| {
                let k = t.last_dim();
                (task.clone(), t.data()[row * k..(row + 1) * k].to_vec())
            })
            .collect();
        let latency_us = p.received.elapsed().as_micros() as u64;
        shared.stats.lock().expect("stats lock").record(latency_us, inference.layers_executed);
        let resp = InferResponse { id: p.request.id, outputs, latency_us, layers_executed: inference.layers_executed };
        let _ = p.reply.send(serde_json::to_string(&resp).expect("response serializes"));
    }
}
