//! Dense sentence embeddings: file-backed tables, an HTTP provider and a
//! deterministic hashed bag-of-tokens mock.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{tokenize, Corpus};
use crate::error::{Error, Result};
use crate::http::JsonEndpoint;

pub const EMBEDDINGS_VERSION: u32 = 1;
pub const EMBED_API_KEY_ENV: &str = "HIRO_EMBED_API_KEY";

/// Embeddings keyed by sentence id, all of one dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    dim: usize,
    ids: Vec<String>,
    rows: Vec<Vec<f32>>,
    index: HashMap<String, usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    dim: usize,
    /// Always `"f32le"`.
    dtype: String,
    /// Binary file, relative to the manifest.
    data: String,
    ids: Vec<String>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, row: Vec<f32>) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::format("embedding", format!("row of length {} in a table of dimension {}", row.len(), self.dim)));
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::format("embedding", "non-finite value"));
        }
        let id = id.into();
        match self.index.get(&id) {
            Some(&i) => self.rows[i] = row,
            None => {
                self.index.insert(id.clone(), self.rows.len());
                self.ids.push(id);
                self.rows.push(row);
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| self.rows[i].as_slice())
    }

    pub fn get_f64(&self, id: &str) -> Option<Vec<f64>> {
        self.get(id).map(|r| r.iter().map(|&x| x as f64).collect())
    }

    /// Write `manifest` plus a raw little-endian f32 file next to it.
    pub fn save(&self, manifest: &Path) -> Result<()> {
        let stem = manifest
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "embeddings".into());
        let data_name = format!("{stem}.f32");
        let mut bytes = Vec::with_capacity(self.rows.len() * self.dim * 4);
        for row in &self.rows {
            for x in row {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
        let data_path = manifest.with_file_name(&data_name);
        crate::io::write_atomic(&data_path, &bytes)?;
        let m = Manifest {
            version: EMBEDDINGS_VERSION,
            dim: self.dim,
            dtype: "f32le".into(),
            data: data_name,
            ids: self.ids.clone(),
        };
        crate::io::write_atomic(manifest, serde_json::to_string_pretty(&m)?.as_bytes())
    }

    pub fn load(manifest: &Path) -> Result<Self> {
        let raw = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
        let m: Manifest = serde_json::from_str(&raw)?;
        if m.version != EMBEDDINGS_VERSION {
            return Err(Error::Version {
                what: "embedding manifest",
                found: m.version,
                expected: EMBEDDINGS_VERSION,
            });
        }
        if m.dtype != "f32le" {
            return Err(Error::format("embedding manifest", format!("unsupported dtype {}", m.dtype)));
        }
        let data_path = manifest.with_file_name(&m.data);
        let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
        if bytes.len() != m.ids.len() * m.dim * 4 {
            return Err(Error::format(
                "embedding data",
                format!("{} bytes for {} rows of dimension {}", bytes.len(), m.ids.len(), m.dim),
            ));
        }
        let mut table = Self::new(m.dim);
        for (id, chunk) in m.ids.into_iter().zip(bytes.chunks_exact((m.dim * 4).max(1))) {
            let row = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            table.insert(id, row)?;
        }
        Ok(table)
    }
}

/// Seeded pseudo-embedding: the normalised sum of one Gaussian vector per
/// token, each derived from a hash of `(seed, token)`. Texts sharing tokens
/// get correlated vectors; the same text always gets the same vector.
pub fn mock_embedding(text: &str, dim: usize, seed: u64) -> Vec<f32> {
    let mut tokens = tokenize(text);
    if tokens.is_empty() {
        tokens.push(text.to_string());
    }
    let mut acc = vec![0f64; dim];
    for t in &tokens {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(t.as_bytes());
        let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
        for a in acc.iter_mut() {
            let x: f64 = StandardNormal.sample(&mut rng);
            *a += x;
        }
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    acc.into_iter().map(|x| (x / norm) as f32).collect()
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f32>>,
}

/// Where sentence embeddings come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingSource {
    Mock {
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
    File {
        manifest: PathBuf,
    },
    Http {
        endpoint: String,
        #[serde(default = "default_embed_batch")]
        batch_size: usize,
        #[serde(default = "crate::nli::default_retries")]
        max_retries: usize,
        #[serde(default = "crate::nli::default_timeout")]
        timeout_secs: u64,
    },
}

fn default_embed_batch() -> usize {
    64
}

impl Default for EmbeddingSource {
    fn default() -> Self {
        EmbeddingSource::Mock { dim: 768, seed: 0 }
    }
}

impl EmbeddingSource {
    /// Embeddings for every sentence of `corpus`. Relative file paths are
    /// resolved against `base`.
    pub fn embed_corpus(&self, corpus: &Corpus, base: &Path) -> Result<EmbeddingTable> {
        match self {
            EmbeddingSource::Mock { dim, seed } => {
                let mut table = EmbeddingTable::new(*dim);
                for s in corpus.sentences() {
                    table.insert(s.id.to_string(), mock_embedding(&s.text, *dim, *seed))?;
                }
                Ok(table)
            }
            EmbeddingSource::File { manifest } => {
                let path = if manifest.is_absolute() { manifest.clone() } else { base.join(manifest) };
                EmbeddingTable::load(&path)
            }
            EmbeddingSource::Http {
                endpoint,
                batch_size,
                max_retries,
                timeout_secs,
            } => {
                let key = std::env::var(EMBED_API_KEY_ENV).ok();
                let client = JsonEndpoint::new("embedding", endpoint.clone(), key, *max_retries, Duration::from_secs(*timeout_secs))?;
                embed_http(&client, corpus, (*batch_size).max(1))
            }
        }
    }
}

pub(crate) fn embed_http(client: &JsonEndpoint, corpus: &Corpus, batch_size: usize) -> Result<EmbeddingTable> {
    let mut table: Option<EmbeddingTable> = None;
    for chunk in corpus.sentences().chunks(batch_size) {
        let texts: Vec<&str> = chunk.iter().map(|s| s.text.as_str()).collect();
        let resp: EmbedResponse = client.post(&EmbedRequest { texts: &texts })?;
        if resp.embeddings.len() != chunk.len() {
            return Err(Error::format(
                "embedding response",
                format!("{} embeddings for {} texts", resp.embeddings.len(), chunk.len()),
            ));
        }
        for (s, row) in chunk.iter().zip(resp.embeddings) {
            let t = table.get_or_insert_with(|| EmbeddingTable::new(row.len()));
            t.insert(s.id.to_string(), row)?;
        }
    }
    table.ok_or_else(|| Error::Precondition("no sentences to embed".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mock_is_deterministic_and_lexical() {
        let a = mock_embedding("The pool was great", 64, 1);
        assert_eq!(a, mock_embedding("the POOL was great!", 64, 1));
        assert_ne!(a, mock_embedding("The pool was great", 64, 2));
        let cos = |x: &[f32], y: &[f32]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f32>();
        let near = mock_embedding("The pool was really great", 64, 1);
        let far = mock_embedding("Parking costs extra downtown", 64, 1);
        assert!(cos(&a, &near) > cos(&a, &far));
        assert!((cos(&a, &a) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("emb.json");
        let mut t = EmbeddingTable::new(3);
        t.insert("a/r/0", vec![1.0, -2.5, 0.25]).unwrap();
        t.insert("b/r/0", vec![0.0, 1e-3, 7.0]).unwrap();
        t.save(&manifest).unwrap();
        let bytes = fs::read(dir.path().join("emb.f32")).unwrap();
        assert_eq!(bytes.len(), 24);
        assert_eq!(&bytes[..4], &1.0f32.to_le_bytes());
        let back = EmbeddingTable::load(&manifest).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.get("b/r/0").unwrap()[2], 7.0);
        assert!(back.get("missing").is_none());
    }

    #[test]
    fn truncated_data_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("emb.json");
        let mut t = EmbeddingTable::new(2);
        t.insert("x", vec![1.0, 2.0]).unwrap();
        t.save(&manifest).unwrap();
        fs::write(dir.path().join("emb.f32"), [0u8; 5]).unwrap();
        assert!(EmbeddingTable::load(&manifest).is_err());
    }

    #[test]
    fn rejects_bad_rows() {
        let mut t = EmbeddingTable::new(2);
        assert!(t.insert("x", vec![1.0]).is_err());
        assert!(t.insert("x", vec![1.0, f32::NAN]).is_err());
    }
}
