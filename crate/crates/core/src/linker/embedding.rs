//! Frozen base embedders.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_DIM: usize = 384;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed embedding response: {0}")]
    Response(String),
    #[error("expected {expected}-dimensional vectors, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("non-finite embedding for {0:?}")]
    NonFinite(String),
    #[error("no embedding for text {0:?}")]
    Missing(String),
    #[error("io error: {0}")]
    Io(String),
}

/// Deterministic text → vector map of fixed dimension.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError>;

    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }
}

fn check(texts: &[&str], vectors: &[Vec<f32>], dim: usize) -> Result<(), EmbedError> {
    if texts.len() != vectors.len() {
        return Err(EmbedError::Response(format!(
            "{} texts but {} vectors",
            texts.len(),
            vectors.len()
        )));
    }
    for (t, v) in texts.iter().zip(vectors) {
        if v.len() != dim {
            return Err(EmbedError::Dimension {
                expected: dim,
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(EmbedError::NonFinite((*t).to_string()));
        }
    }
    Ok(())
}

fn fnv1a(bytes: &[u8], salt: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Local embedder: signed feature hashing of word unigrams, word bigrams and
/// character trigrams, L2-normalized. Needs no model files.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dim: DEFAULT_DIM }
    }
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    fn add(&self, v: &mut [f32], feature: &str, weight: f32) {
        let h = fnv1a(feature.as_bytes(), 0);
        let idx = (h % self.dim as u64) as usize;
        let sign = if (h >> 63) == 1 { -1.0 } else { 1.0 };
        v[idx] += sign * weight;
    }

    fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0.0f32; self.dim];
        let lowered = text.to_lowercase();
        let words: Vec<&str> = lowered
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .collect();
        for w in &words {
            self.add(&mut v, &format!("w:{w}"), 1.0);
            let padded: Vec<char> = format!("<{w}>").chars().collect();
            for tri in padded.windows(3) {
                self.add(&mut v, &format!("c:{}", tri.iter().collect::<String>()), 0.5);
            }
        }
        for pair in words.windows(2) {
            self.add(&mut v, &format!("b:{} {}", pair[0], pair[1]), 0.5);
        }
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Precomputed vectors keyed by exact text.
#[derive(Debug, Clone, Default)]
pub struct TableEmbedder {
    dim: usize,
    table: HashMap<String, Vec<f32>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TableLine {
    text: String,
    vector: Vec<f32>,
}

impl TableEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            table: HashMap::new(),
        }
    }

    pub fn insert(&mut self, text: impl Into<String>, vector: Vec<f32>) {
        assert_eq!(vector.len(), self.dim, "vector dimension mismatch");
        self.table.insert(text.into(), vector);
    }

    /// Reads `{"text": str, "vector": [f32]}` lines.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbedError> {
        let text = fs::read_to_string(path).map_err(|e| EmbedError::Io(e.to_string()))?;
        let mut out: Option<Self> = None;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let rec: TableLine =
                serde_json::from_str(line).map_err(|e| EmbedError::Response(format!("line {}: {e}", i + 1)))?;
            let table = out.get_or_insert_with(|| Self::new(rec.vector.len()));
            if rec.vector.len() != table.dim {
                return Err(EmbedError::Dimension {
                    expected: table.dim,
                    found: rec.vector.len(),
                });
            }
            table.table.insert(rec.text, rec.vector);
        }
        Ok(out.unwrap_or_default())
    }
}

impl EmbeddingProvider for TableEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
        texts
            .iter()
            .map(|t| {
                self.table
                    .get(*t)
                    .cloned()
                    .ok_or_else(|| EmbedError::Missing((*t).to_string()))
            })
            .collect()
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

/// Remote embedder: POST `{"texts": [...]}` → `{"vectors": [[...]]}`.
pub struct HttpEmbedder {
    endpoint: String,
    dim: usize,
    batch: usize,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, dim: usize) -> Result<Self, EmbedError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            dim,
            batch: 256,
            client,
        })
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch.max(1)) {
            let resp = self
                .client
                .post(&self.endpoint)
                .json(&EmbedRequest { texts: chunk })
                .send()
                .map_err(|e| EmbedError::Transport(e.to_string()))?;
            if !resp.status().is_success() {
                return Err(EmbedError::Transport(format!("http status {}", resp.status())));
            }
            let body: EmbedResponse = resp.json().map_err(|e| EmbedError::Response(e.to_string()))?;
            check(chunk, &body.vectors, self.dim)?;
            out.extend(body.vectors);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    #[test]
    fn hashing_is_deterministic_and_normalized() {
        let e = HashingEmbedder::default();
        let a = e.embed("Dark humor elements").unwrap();
        assert_eq!(a.len(), 384);
        assert_eq!(a, e.embed("Dark humor elements").unwrap());
        let norm: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5);
        assert!(e.embed("!!!").unwrap().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn hashing_similarity_tracks_overlap() {
        let e = HashingEmbedder::default();
        let dot = |a: &str, b: &str| -> f32 {
            let (x, y) = (e.embed(a).unwrap(), e.embed(b).unwrap());
            x.iter().zip(&y).map(|(p, q)| p * q).sum()
        };
        assert!(dot("comedy movie", "a comedy movie") > dot("comedy movie", "tax reform bill"));
    }

    #[test]
    fn table_lookup() {
        let mut t = TableEmbedder::new(2);
        t.insert("a", vec![1.0, 0.0]);
        assert_eq!(t.embed("a").unwrap(), vec![1.0, 0.0]);
        assert!(matches!(t.embed("b"), Err(EmbedError::Missing(_))));
    }

    #[test]
    fn http_wire_format() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/embed", listener.local_addr().unwrap());
        let server = std::thread::spawn(move || {
            let (mut s, _) = listener.accept().unwrap();
            let mut buf = vec![0u8; 65536];
            let mut got = 0;
            loop {
                let n = s.read(&mut buf[got..]).unwrap();
                got += n;
                let text = String::from_utf8_lossy(&buf[..got]);
                if text.contains("\"texts\"") && text.trim_end().ends_with('}') {
                    break;
                }
            }
            let body = r#"{"vectors":[[0.5,0.25],[1.0,-1.0]]}"#;
            write!(
                s,
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            String::from_utf8_lossy(&buf[..got]).to_string()
        });
        let e = HttpEmbedder::new(url, 2).unwrap();
        let out = e.embed_batch(&["x", "y"]).unwrap();
        assert_eq!(out, vec![vec![0.5, 0.25], vec![1.0, -1.0]]);
        let req = server.join().unwrap();
        assert!(req.contains(r#"{"texts":["x","y"]}"#));
    }

    #[test]
    fn dimension_mismatch_detected() {
        assert!(matches!(
            check(&["a"], &[vec![1.0]], 2),
            Err(EmbedError::Dimension { expected: 2, found: 1 })
        ));
        assert!(matches!(
            check(&["a"], &[vec![f32::NAN]], 1),
            Err(EmbedError::NonFinite(_))
        ));
    }
}
