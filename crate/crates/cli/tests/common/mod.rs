//! An in-process server over toy checkpoints and a line-based client.

#![allow(dead_code)]

#[path = "../../../core/tests/support/toys.rs"]
pub mod toys;

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::thread::JoinHandle;

use layerfork::checkpoint::Checkpoint;
use layerfork::encoder::Batch;
use layerfork::merge::MergedModel;
use layerfork_cli::serve::{ServeConfig, Server};
use serde_json::{json, Value};

pub struct Running {
    pub addr: SocketAddr,
    handle: JoinHandle<()>,
}

impl Running {
    pub fn start(model: MergedModel, cfg: ServeConfig) -> Running {
        let server = Server::bind("127.0.0.1:0", model, cfg).unwrap();
        let addr = server.local_addr().unwrap();
        let handle = std::thread::spawn(move || server.run().unwrap());
        Running { addr, handle }
    }

    pub fn client(&self) -> Client {
        Client::connect(self.addr)
    }

    pub fn stop(self) {
        let mut c = self.client();
        assert_eq!(c.call(&json!({ "cmd": "shutdown" }))["ok"], true);
        self.handle.join().unwrap();
    }
}

pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Client {
    pub fn connect(addr: SocketAddr) -> Client {
        let writer = TcpStream::connect(addr).unwrap();
        Client { reader: BufReader::new(writer.try_clone().unwrap()), writer }
    }

    pub fn send_line(&mut self, line: &str) {
        self.writer.write_all(line.as_bytes()).unwrap();
        self.writer.write_all(b"\n").unwrap();
    }

    pub fn send(&mut self, v: &Value) {
        self.send_line(&v.to_string());
    }

    pub fn recv(&mut self) -> Value {
        let mut line = String::new();
        assert!(self.reader.read_line(&mut line).unwrap() > 0, "server closed the connection");
        serde_json::from_str(&line).unwrap()
    }

    pub fn call(&mut self, v: &Value) -> Value {
        self.send(v);
        self.recv()
    }
}

pub fn request(id: u64, text: &str, tasks: &[&str]) -> Value {
    json!({ "id": id, "text_a": text, "tasks": tasks })
}

/// The standalone output row for `text`, as the service encodes floats.
pub fn offline(ckpt: &Checkpoint, text: &str) -> Value {
    let seq = ckpt.encode_text(text, None);
    let logits = ckpt.logits(&Batch::new(&[seq]).unwrap()).unwrap();
    serde_json::from_str(&serde_json::to_string(logits.data()).unwrap()).unwrap()
}

/// Space-separated toy words.
pub fn toy_text(words: &[u32]) -> String {
    words.iter().map(|w| format!("w{}", w % 40)).collect::<Vec<_>>().join(" ")
}
