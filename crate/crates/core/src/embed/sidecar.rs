//! Client for the external embedding server.
//!
//! The protocol is newline-delimited JSON over TCP or a child process's
//! stdio. The first exchange is `{"op":"hello"}`, answered by a
//! [`Handshake`]. Embedding requests carry an `id` and responses may arrive
//! in any order:
//!
//! ```text
//! → {"op":"embed","id":"7","granularity":"token","token_ids":[101,2023]}
//! ← {"id":"7","tokens":[[0.1,…],[…]]}
//! ← {"id":"8","error":"too long"}
//! ```
//!
//! Floats are decoded as 32-bit values.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{check_finite, check_len, EmbeddingMatrix, Embedder, Granularity};
use crate::error::{Error, Result};

const MAX_IN_FLIGHT: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    Stdio { program: String, args: Vec<String> },
}

impl Endpoint {
    /// Accepts `tcp://host:port`, bare `host:port`, or `stdio:<command line>`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(cmd) = s.strip_prefix("stdio:") {
            let mut parts = cmd.split_whitespace().map(String::from);
            let program = parts
                .next()
                .ok_or_else(|| Error::Config("stdio endpoint needs a command".into()))?;
            return Ok(Endpoint::Stdio {
                program,
                args: parts.collect(),
            });
        }
        let addr = s.strip_prefix("tcp://").unwrap_or(s);
        if addr.rsplit_once(':').is_none_or(|(h, p)| h.is_empty() || p.parse::<u16>().is_err()) {
            return Err(Error::Config(format!("bad sidecar endpoint {s:?}")));
        }
        Ok(Endpoint::Tcp(addr.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handshake {
    pub model: String,
    pub dim: usize,
    pub max_len: usize,
    pub vocab_sha256: String,
    pub granularities: Vec<Granularity>,
}

#[derive(Debug, Deserialize)]
struct Response {
    id: Option<String>,
    #[serde(default)]
    cls: Option<Vec<f32>>,
    #[serde(default)]
    tokens: Option<Vec<Vec<f32>>>,
    #[serde(default)]
    doc: Option<Vec<f32>>,
    #[serde(default)]
    truncated: Option<bool>,
    #[serde(default)]
    token_ids: Option<Vec<Vec<u32>>>,
    #[serde(default)]
    error: Option<String>,
}

struct Connection {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn transport(message: impl Into<String>) -> Error {
    Error::Transport {
        message: message.into(),
        retries: 0,
    }
}

impl Connection {
    fn open(endpoint: &Endpoint) -> std::io::Result<Self> {
        match endpoint {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr)?;
                stream.set_nodelay(true)?;
                Ok(Self {
                    reader: Box::new(BufReader::new(stream.try_clone()?)),
                    writer: Box::new(stream),
                    child: None,
                })
            }
            Endpoint::Stdio { program, args } => {
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Ok(Self {
                    reader: Box::new(BufReader::new(stdout)),
                    writer: Box::new(stdin),
                    child: Some(child),
                })
            }
        }
    }

    fn send(&mut self, value: &serde_json::Value) -> Result<()> {
        let mut line = value.to_string();
        line.push('\n');
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| transport(format!("write failed: {e}")))
    }

    fn recv(&mut self) -> Result<Response> {
        let mut line = String::new();
        let n = self
            .reader
            .read_line(&mut line)
            .map_err(|e| transport(format!("read failed: {e}")))?;
        if n == 0 {
            return Err(transport("sidecar closed the connection"));
        }
        serde_json::from_str(&line).map_err(|e| transport(format!("malformed response: {e}")))
    }
}

#[derive(Debug, Clone)]
enum Request<'a> {
    Embed { granularity: Granularity, token_ids: &'a [u32] },
    Tokenize { sentences: &'a [String] },
}

/// Thread-safe client; concurrent callers share the connection and their
/// requests are correlated by id.
pub struct SidecarClient {
    conn: Mutex<Connection>,
    handshake: Handshake,
    next_id: AtomicU64,
    truncations: AtomicU64,
}

impl std::fmt::Debug for SidecarClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SidecarClient").field("handshake", &self.handshake).finish()
    }
}

impl SidecarClient {
    /// Connects (retrying up to `retries` times), performs the handshake and,
    /// when `expected_vocab` is given, checks the served vocabulary digest.
    pub fn connect(endpoint: &Endpoint, retries: u32, expected_vocab: Option<&str>) -> Result<Self> {
        let mut attempt = 0;
        let mut conn = loop {
            match Connection::open(endpoint) {
                Ok(c) => break c,
                Err(e) if attempt >= retries => {
                    return Err(Error::Transport {
                        message: format!("cannot reach sidecar at {endpoint:?}: {e}"),
                        retries: attempt,
                    })
                }
                Err(_) => {
                    attempt += 1;
                    thread::sleep(Duration::from_millis(100 * u64::from(attempt)));
                }
            }
        };
        conn.send(&json!({"op": "hello"}))?;
        let mut line = String::new();
        conn.reader
            .read_line(&mut line)
            .map_err(|e| transport(format!("handshake read failed: {e}")))?;
        let handshake: Handshake =
            serde_json::from_str(&line).map_err(|e| transport(format!("malformed handshake: {e}")))?;
        if handshake.dim == 0 {
            return Err(transport("sidecar reported dim 0"));
        }
        if let Some(expected) = expected_vocab {
            if !handshake.vocab_sha256.eq_ignore_ascii_case(expected) {
                return Err(transport(format!(
                    "vocabulary digest mismatch: sidecar {} vs local {expected}",
                    handshake.vocab_sha256
                )));
            }
        }
        Ok(Self {
            conn: Mutex::new(conn),
            handshake,
            next_id: AtomicU64::new(0),
            truncations: AtomicU64::new(0),
        })
    }

    pub fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    fn request_json(id: &str, req: &Request<'_>) -> serde_json::Value {
        match req {
            Request::Embed { granularity, token_ids } => json!({
                "op": "embed", "id": id, "granularity": granularity.as_str(), "token_ids": token_ids
            }),
            Request::Tokenize { sentences } => json!({"op": "tokenize", "id": id, "sentences": sentences}),
        }
    }

    /// Sends the requests with at most `MAX_IN_FLIGHT` outstanding and
    /// returns the responses in request order.
    fn roundtrip(&self, requests: &[Request<'_>]) -> Result<Vec<Response>> {
        let mut conn = self.conn.lock().map_err(|_| transport("connection lock poisoned"))?;
        let ids: Vec<String> = requests
            .iter()
            .map(|_| self.next_id.fetch_add(1, Ordering::Relaxed).to_string())
            .collect();
        let position: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let mut out: Vec<Option<Response>> = (0..requests.len()).map(|_| None).collect();
        let mut sent = 0;
        let mut received = 0;
        while received < requests.len() {
            while sent < requests.len() && sent - received < MAX_IN_FLIGHT {
                conn.send(&Self::request_json(&ids[sent], &requests[sent]))?;
                sent += 1;
            }
            let resp = conn.recv()?;
            let id = resp.id.clone().unwrap_or_default();
            let slot = *position
                .get(id.as_str())
                .ok_or_else(|| transport(format!("response for unknown id {id:?}")))?;
            if out[slot].replace(resp).is_some() {
                return Err(transport(format!("duplicate response for id {id}")));
            }
            received += 1;
        }
        Ok(out.into_iter().map(|r| r.expect("all slots filled")).collect())
    }

    fn check_error(resp: &Response) -> Result<()> {
        match &resp.error {
            Some(e) => Err(transport(format!("sidecar error: {e}"))),
            None => Ok(()),
        }
    }

    fn check_vector(&self, v: Vec<f32>) -> Result<Vec<f32>> {
        if v.len() != self.handshake.dim {
            return Err(transport(format!(
                "vector of length {} from a dim-{} sidecar",
                v.len(),
                self.handshake.dim
            )));
        }
        check_finite(&v, "sidecar")?;
        Ok(v)
    }

    /// Embeds many sequences at one granularity in a single pipelined batch.
    pub fn embed_batch(&self, granularity: Granularity, batch: &[&[u32]]) -> Result<Vec<EmbedResult>> {
        if granularity != Granularity::Document {
            for ids in batch {
                check_len(ids.len(), self.handshake.max_len)?;
            }
        }
        let requests: Vec<Request<'_>> = batch
            .iter()
            .map(|ids| Request::Embed { granularity, token_ids: ids })
            .collect();
        let responses = self.roundtrip(&requests)?;
        responses
            .into_iter()
            .zip(batch)
            .map(|(resp, ids)| {
                Self::check_error(&resp)?;
                match granularity {
                    Granularity::Token => {
                        let rows = resp.tokens.ok_or_else(|| transport("response lacks `tokens`"))?;
                        if rows.len() != ids.len() {
                            return Err(transport(format!("{} rows for {} tokens", rows.len(), ids.len())));
                        }
                        let rows = rows.into_iter().map(|r| self.check_vector(r)).collect::<Result<Vec<_>>>()?;
                        Ok(EmbedResult::Tokens(EmbeddingMatrix::from_rows(&rows, self.handshake.dim)?))
                    }
                    Granularity::Cls => {
                        let v = resp.cls.ok_or_else(|| transport("response lacks `cls`"))?;
                        Ok(EmbedResult::Vector(self.check_vector(v)?))
                    }
                    Granularity::Document => {
                        let v = resp.doc.ok_or_else(|| transport("response lacks `doc`"))?;
                        if resp.truncated.unwrap_or(false) {
                            self.truncations.fetch_add(1, Ordering::Relaxed);
                        }
                        Ok(EmbedResult::Vector(self.check_vector(v)?))
                    }
                }
            })
            .collect()
    }

    fn embed_one(&self, granularity: Granularity, ids: &[u32]) -> Result<EmbedResult> {
        Ok(self.embed_batch(granularity, &[ids])?.remove(0))
    }

    /// The served model's own tokenizer output for each sentence.
    pub fn tokenize_check(&self, sentences: &[String]) -> Result<Vec<Vec<u32>>> {
        if sentences.is_empty() {
            return Ok(Vec::new());
        }
        let resp = self.roundtrip(&[Request::Tokenize { sentences }])?.remove(0);
        Self::check_error(&resp)?;
        let ids = resp.token_ids.ok_or_else(|| transport("response lacks `token_ids`"))?;
        if ids.len() != sentences.len() {
            return Err(transport(format!("{} id lists for {} sentences", ids.len(), sentences.len())));
        }
        Ok(ids)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbedResult {
    Tokens(EmbeddingMatrix),
    Vector(Vec<f32>),
}

impl EmbedResult {
    fn into_matrix(self) -> Result<EmbeddingMatrix> {
        match self {
            EmbedResult::Tokens(m) => Ok(m),
            EmbedResult::Vector(_) => Err(transport("expected token rows")),
        }
    }

    fn into_vector(self) -> Result<Vec<f32>> {
        match self {
            EmbedResult::Vector(v) => Ok(v),
            EmbedResult::Tokens(_) => Err(transport("expected a vector")),
        }
    }
}

impl Embedder for SidecarClient {
    fn dim(&self) -> usize {
        self.handshake.dim
    }

    fn max_len(&self) -> usize {
        self.handshake.max_len
    }

    fn embed_tokens(&self, token_ids: &[u32]) -> Result<EmbeddingMatrix> {
        if token_ids.is_empty() {
            return EmbeddingMatrix::new(0, self.handshake.dim, Vec::new());
        }
        self.embed_one(Granularity::Token, token_ids)?.into_matrix()
    }

    fn embed_cls(&self, token_ids: &[u32]) -> Result<Vec<f32>> {
        if token_ids.is_empty() {
            return Err(Error::invalid("cannot embed an empty chunk"));
        }
        self.embed_one(Granularity::Cls, token_ids)?.into_vector()
    }

    fn embed_document(&self, token_ids: &[u32]) -> Result<Vec<f32>> {
        if token_ids.is_empty() {
            return Err(Error::invalid("cannot embed an empty document"));
        }
        self.embed_one(Granularity::Document, token_ids)?.into_vector()
    }

    fn truncations(&self) -> u64 {
        self.truncations.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_parsing() {
        assert_eq!(Endpoint::parse("tcp://127.0.0.1:7000").unwrap(), Endpoint::Tcp("127.0.0.1:7000".into()));
        assert_eq!(Endpoint::parse("localhost:9").unwrap(), Endpoint::Tcp("localhost:9".into()));
        assert_eq!(
            Endpoint::parse("stdio:python3 server.py --stdio").unwrap(),
            Endpoint::Stdio {
                program: "python3".into(),
                args: vec!["server.py".into(), "--stdio".into()]
            }
        );
        assert!(Endpoint::parse("nonsense").is_err());
        assert!(Endpoint::parse("stdio:").is_err());
        assert!(Endpoint::parse("host:99999").is_err());
    }

    #[test]
    fn unreachable_reports_retries() {
        // Bind then drop to find a port with nothing listening.
        let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let err = SidecarClient::connect(&Endpoint::Tcp(format!("127.0.0.1:{port}")), 2, None).unwrap_err();
        match err {
            Error::Transport { retries, .. } => assert_eq!(retries, 2),
            e => panic!("unexpected {e:?}"),
        }
        assert_eq!(Error::Transport { message: String::new(), retries: 0 }.exit_code(), 3);
    }
}
