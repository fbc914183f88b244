//! Client for an external embedding service speaking newline-delimited JSON.
//!
//! On connect the service sends one handshake line
//! `{"protocol":"taps-embed/1","dimension":D,"model":"..."}`. Each request is
//! `{"id":N,"kind":"text"|"image","payload":"..."}` where image payloads are
//! base64-encoded PNG bytes; each response is `{"id":N,"embedding":[...]}` or
//! `{"id":N,"error":"..."}`.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;

use base64::Engine as _;
use serde_json::{json, Value};

use super::{check_text, l2_norm, EmbeddingProvider, EmbeddingVector, ProviderDescriptor};
use crate::digest::hash_bytes;
use crate::error::{Error, Result};
use crate::raster::Raster;

pub const PROTOCOL: &str = "taps-embed/1";
/// Service-side unit-norm tolerance; vectors are re-normalized on receipt.
const WIRE_NORM_TOLERANCE: f64 = 1e-4;

struct Connection {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    next_id: u64,
    _child: Option<Child>,
}

/// Non-differentiable provider backed by the service. Requests are
/// serialized over a single connection.
pub struct ServiceProvider {
    conn: Mutex<Connection>,
    dimension: usize,
    model: String,
}

fn unavailable(e: impl std::fmt::Display) -> Error {
    Error::ProviderUnavailable(e.to_string())
}

impl ServiceProvider {
    pub fn connect(addr: &str) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(|e| unavailable(format!("{addr}: {e}")))?;
        stream.set_nodelay(true).map_err(unavailable)?;
        let writer = stream.try_clone().map_err(unavailable)?;
        Self::handshake(Box::new(BufReader::new(stream)), Box::new(BufWriter::new(writer)), None)
    }

    /// Launches the service as a child process in pipe mode.
    pub fn spawn_stdio(program: &str, args: &[&str]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| unavailable(format!("{program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Self::handshake(Box::new(BufReader::new(stdout)), Box::new(BufWriter::new(stdin)), Some(child))
    }

    /// Wraps an arbitrary transport; the handshake is read immediately.
    pub fn from_transport(
        reader: Box<dyn BufRead + Send>,
        writer: Box<dyn Write + Send>,
    ) -> Result<Self> {
        Self::handshake(reader, writer, None)
    }

    fn handshake(
        mut reader: Box<dyn BufRead + Send>,
        writer: Box<dyn Write + Send>,
        child: Option<Child>,
    ) -> Result<Self> {
        let mut line = String::new();
        if reader.read_line(&mut line).map_err(unavailable)? == 0 {
            return Err(unavailable("connection closed before handshake"));
        }
        let v: Value = serde_json::from_str(&line)
            .map_err(|e| unavailable(format!("bad handshake: {e}")))?;
        if v["protocol"] != PROTOCOL {
            return Err(unavailable(format!(
                "unsupported protocol {}",
                v["protocol"]
            )));
        }
        let dimension = v["dimension"]
            .as_u64()
            .filter(|&d| d > 0)
            .ok_or_else(|| unavailable("handshake lacks a positive dimension"))?
            as usize;
        let model = v["model"].as_str().unwrap_or("unknown").to_string();
        Ok(Self {
            conn: Mutex::new(Connection {
                reader,
                writer,
                next_id: 1,
                _child: child,
            }),
            dimension,
            model,
        })
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    fn request(&self, kind: &str, payload: &str) -> Result<EmbeddingVector> {
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        let id = conn.next_id;
        conn.next_id += 1;
        let msg = json!({ "id": id, "kind": kind, "payload": payload });
        writeln!(conn.writer, "{msg}").map_err(unavailable)?;
        conn.writer.flush().map_err(unavailable)?;
        let mut line = String::new();
        if conn.reader.read_line(&mut line).map_err(unavailable)? == 0 {
            return Err(unavailable("connection closed"));
        }
        drop(conn);
        let v: Value = serde_json::from_str(&line)
            .map_err(|e| unavailable(format!("malformed response: {e}")))?;
        if v["id"].as_u64() != Some(id) {
            return Err(unavailable(format!(
                "response id {} does not echo request id {id}",
                v["id"]
            )));
        }
        if let Some(err) = v.get("error").and_then(Value::as_str) {
            return Err(Error::InvalidInput(format!("embedding service: {err}")));
        }
        let values: Vec<f64> = v["embedding"]
            .as_array()
            .ok_or_else(|| unavailable("response lacks an embedding"))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| unavailable("non-numeric embedding entry")))
            .collect::<Result<_>>()?;
        if values.len() != self.dimension {
            return Err(unavailable(format!(
                "embedding has dimension {}, handshake said {}",
                values.len(),
                self.dimension
            )));
        }
        let n = l2_norm(&values);
        if (n - 1.0).abs() > WIRE_NORM_TOLERANCE {
            return Err(unavailable(format!("embedding norm {n} is not 1")));
        }
        EmbeddingVector::normalize(values)
    }
}

impl EmbeddingProvider for ServiceProvider {
    fn descriptor(&self) -> ProviderDescriptor {
        ProviderDescriptor {
            name: format!("service:{}", self.model),
            dimension: self.dimension,
            differentiable: false,
            seed: None,
        }
    }

    fn encode_text(&self, text: &str) -> Result<EmbeddingVector> {
        let t = check_text(text)?;
        self.request("text", t)
    }

    fn encode_image(&self, image: &Raster) -> Result<EmbeddingVector> {
        image.validate()?;
        let payload = base64::engine::general_purpose::STANDARD.encode(image.to_png_bytes());
        self.request("image", &payload)
    }

    fn content_hash(&self) -> String {
        hash_bytes(format!("{PROTOCOL}|{}|{}", self.model, self.dimension).as_bytes())
    }
}
