//! Intent text encoding, per-bucket mean pooling and the on-disk formats
//! for pooled intent embeddings and the text-vector cache.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::intent::IntentRecord;

/// Maps strings to fixed-width vectors. Implementations must be
/// deterministic for a fixed fingerprint.
pub trait TextEncoder: Send + Sync {
    fn dim(&self) -> usize;
    /// Identifies the model and its settings; part of every cache key.
    fn fingerprint(&self) -> String;
    fn encode_texts(&self, texts: &[String]) -> Result<Vec<Array1<f64>>>;
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Deterministic test double: a fixed random projection of hashed token
/// counts, scaled to unit length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashProjectionEncoder {
    pub dim: usize,
    pub buckets: usize,
    pub seed: u64,
}

impl HashProjectionEncoder {
    pub fn new(dim: usize, buckets: usize, seed: u64) -> Result<Self> {
        if dim == 0 || buckets == 0 {
            return Err(Error::EncoderUnavailable("hash encoder needs dim ≥ 1 and buckets ≥ 1".into()));
        }
        Ok(Self { dim, buckets, seed })
    }

    pub fn bucket(&self, token: &str) -> usize {
        (crate::seed::derive(self.seed, token) % self.buckets as u64) as usize
    }

    /// Column `bucket` of the projection matrix, entries uniform in [-1, 1].
    pub fn column(&self, bucket: usize) -> Array1<f64> {
        let mut rng = crate::seed::rng(self.seed, &format!("projection-column-{bucket}"));
        Array1::from_shape_simple_fn(self.dim, || rng.random_range(-1.0..=1.0))
    }

    pub fn encode_one(&self, text: &str) -> Array1<f64> {
        let mut counts: HashMap<usize, f64> = HashMap::new();
        for t in tokenize(text) {
            *counts.entry(self.bucket(&t)).or_default() += 1.0;
        }
        let mut keys: Vec<usize> = counts.keys().copied().collect();
        keys.sort_unstable();
        let mut v = Array1::zeros(self.dim);
        for b in keys {
            v.scaled_add(counts[&b], &self.column(b));
        }
        let n = v.dot(&v).sqrt();
        if n > 0.0 {
            v /= n;
        }
        v
    }
}

impl TextEncoder for HashProjectionEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        format!("hash-projection:v1:dim={}:buckets={}:seed={}", self.dim, self.buckets, self.seed)
    }

    fn encode_texts(&self, texts: &[String]) -> Result<Vec<Array1<f64>>> {
        Ok(texts.iter().map(|t| self.encode_one(t)).collect())
    }
}

/// Remote pretrained encoder behind an embeddings HTTP endpoint
/// (`POST {url}` with `{"model", "input": [...]}`, answering
/// `{"data": [{"embedding": [...]}, ...]}`).
#[derive(Debug, Clone)]
pub struct HttpEncoder {
    url: String,
    model: String,
    dim: usize,
    api_key: Option<String>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl HttpEncoder {
    /// Probes the endpoint once to learn the vector width. Any failure is
    /// an [`Error::EncoderUnavailable`].
    pub fn connect(url: &str, model: &str, api_key: Option<String>) -> Result<Self> {
        let mut enc = Self {
            url: url.to_string(),
            model: model.to_string(),
            dim: 0,
            api_key,
        };
        let probe = enc.request(&["probe".to_string()])?;
        enc.dim = probe.first().map(Array1::len).unwrap_or(0);
        if enc.dim == 0 {
            return Err(Error::EncoderUnavailable(format!("{url} returned an empty embedding")));
        }
        Ok(enc)
    }

    fn request(&self, texts: &[String]) -> Result<Vec<Array1<f64>>> {
        let body = serde_json::json!({ "model": self.model, "input": texts });
        let mut req = ureq::post(&self.url);
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let unavailable = |e: String| Error::EncoderUnavailable(format!("{}: {e}", self.url));
        let mut resp = req.send_json(&body).map_err(|e| unavailable(e.to_string()))?;
        let parsed: EmbeddingResponse = resp.body_mut().read_json().map_err(|e| unavailable(e.to_string()))?;
        if parsed.data.len() != texts.len() {
            return Err(unavailable(format!("{} vectors for {} inputs", parsed.data.len(), texts.len())));
        }
        Ok(parsed.data.into_iter().map(|d| Array1::from(d.embedding)).collect())
    }
}

impl TextEncoder for HttpEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        format!("http:{}:{}:dim={}", self.url, self.model, self.dim)
    }

    fn encode_texts(&self, texts: &[String]) -> Result<Vec<Array1<f64>>> {
        let out = self.request(texts)?;
        if let Some(v) = out.iter().find(|v| v.len() != self.dim) {
            return Err(Error::Validation(format!("encoder returned width {}, expected {}", v.len(), self.dim)));
        }
        Ok(out)
    }
}

/// Element-wise mean. An empty bucket gives the zero vector and `false`.
pub fn pool_bucket(vectors: &[Array1<f64>], dim: usize) -> (Array1<f64>, bool) {
    if vectors.is_empty() {
        return (Array1::zeros(dim), false);
    }
    let mut acc = Array1::zeros(dim);
    for v in vectors {
        acc += v;
    }
    acc /= vectors.len() as f64;
    (acc, true)
}

/// Pooled explicit and latent vectors of one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentEmbedding {
    pub session_id: String,
    pub e_explicit: Vec<f64>,
    pub e_latent: Vec<f64>,
    pub has_explicit: bool,
    pub has_latent: bool,
}

impl IntentEmbedding {
    pub fn explicit(&self) -> Option<ArrayView1<'_, f64>> {
        self.has_explicit.then(|| ArrayView1::from(&self.e_explicit[..]))
    }

    pub fn latent(&self) -> Option<ArrayView1<'_, f64>> {
        self.has_latent.then(|| ArrayView1::from(&self.e_latent[..]))
    }
}

/// `(encoder fingerprint, text) → vector` memo.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EncodingCache {
    pub fingerprint: String,
    pub dim: usize,
    entries: HashMap<String, Vec<f64>>,
    order: Vec<String>,
    pub hits: usize,
    pub misses: usize,
}

const CACHE_MAGIC: &[u8; 8] = b"DMSRECCH";

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    fingerprint: String,
    dim: usize,
    texts: Vec<String>,
}

impl EncodingCache {
    pub fn new(fingerprint: String, dim: usize) -> Self {
        Self {
            fingerprint,
            dim,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn get(&self, text: &str) -> Option<&[f64]> {
        self.entries.get(text).map(Vec::as_slice)
    }

    pub fn insert(&mut self, text: String, v: Vec<f64>) {
        if !self.entries.contains_key(&text) {
            self.order.push(text.clone());
        }
        self.entries.insert(text, v);
    }

    /// Encodes `texts`, computing only the ones not cached yet.
    pub fn encode(&mut self, encoder: &dyn TextEncoder, texts: &[String], exec: Exec) -> Result<Vec<Array1<f64>>> {
        if encoder.fingerprint() != self.fingerprint {
            return Err(Error::Config(format!(
                "cache built for encoder {:?}, got {:?}",
                self.fingerprint,
                encoder.fingerprint()
            )));
        }
        let mut missing: Vec<String> = Vec::new();
        for t in texts {
            if self.entries.contains_key(t) || missing.contains(t) {
                self.hits += 1;
            } else {
                missing.push(t.clone());
                self.misses += 1;
            }
        }
        if !missing.is_empty() {
            let chunks: Vec<&[String]> = missing.chunks(64).collect();
            let encoded = exec.map(&chunks, |c| encoder.encode_texts(c));
            for (chunk, vecs) in chunks.iter().zip(encoded) {
                for (t, v) in chunk.iter().zip(vecs?) {
                    self.insert(t.clone(), v.to_vec());
                }
            }
        }
        Ok(texts.iter().map(|t| Array1::from(self.entries[t].clone())).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_vec(&CacheHeader {
            fingerprint: self.fingerprint.clone(),
            dim: self.dim,
            texts: self.order.clone(),
        })?;
        let mut out = Vec::new();
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.order {
            for x in &self.entries[t] {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        write_atomic(path, &out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 12 || &bytes[..8] != CACHE_MAGIC {
            return Err(Error::Validation(format!("{} is not an encoding cache", path.display())));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let header: CacheHeader = serde_json::from_slice(
            bytes.get(12..12 + hlen).ok_or_else(|| Error::Validation("truncated cache header".into()))?,
        )?;
        let floats = read_f64s(&bytes[12 + hlen..])?;
        if floats.len() != header.texts.len() * header.dim {
            return Err(Error::Validation("cache payload size mismatch".into()));
        }
        let mut cache = Self::new(header.fingerprint, header.dim);
        for (t, chunk) in header.texts.into_iter().zip(floats.chunks(header.dim.max(1))) {
            cache.insert(t, chunk.to_vec());
        }
        Ok(cache)
    }
}

/// Encodes and pools every record's explicit and latent buckets.
pub fn encode_intents(
    records: &[IntentRecord],
    encoder: &dyn TextEncoder,
    cache: &mut EncodingCache,
    exec: Exec,
) -> Result<Vec<IntentEmbedding>> {
    let dim = encoder.dim();
    let all: Vec<String> = records
        .iter()
        .flat_map(|r| r.explicit.iter().chain(&r.latent).cloned())
        .collect();
    cache.encode(encoder, &all, exec)?;
    records
        .iter()
        .map(|r| {
            let ex = cache.encode(encoder, &r.explicit, Exec::Sequential)?;
            let la = cache.encode(encoder, &r.latent, Exec::Sequential)?;
            let (e_explicit, has_explicit) = pool_bucket(&ex, dim);
            let (e_latent, has_latent) = pool_bucket(&la, dim);
            for v in [&e_explicit, &e_latent] {
                crate::error::ensure_finite("pooled intent", v.as_slice().expect("contiguous"))?;
            }
            Ok(IntentEmbedding {
                session_id: r.session_id.clone(),
                e_explicit: e_explicit.to_vec(),
                e_latent: e_latent.to_vec(),
                has_explicit,
                has_latent,
            })
        })
        .collect()
}

pub const EMBEDDINGS_FILE: &str = "intent_embeddings.bin";
pub const EMBEDDINGS_INDEX: &str = "intent_embeddings.index.json";
const EMB_MAGIC: &[u8; 8] = b"DMSRIEMB";
const EMB_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingIndex {
    pub version: u32,
    pub d_text: usize,
    pub encoder_fingerprint: String,
    pub count: usize,
    pub session_ids: Vec<String>,
}

/// Writes `intent_embeddings.bin` (magic, version, `d_text`, count, then
/// per record a flag byte and both vectors as little-endian `f64`) and the
/// JSON index naming each record's session.
pub fn write_embeddings(dir: &Path, d_text: usize, fingerprint: &str, rows: &[IntentEmbedding]) -> Result<()> {
    let mut out = Vec::with_capacity(24 + rows.len() * (1 + 16 * d_text));
    out.extend_from_slice(EMB_MAGIC);
    out.extend_from_slice(&EMB_VERSION.to_le_bytes());
    out.extend_from_slice(&(d_text as u32).to_le_bytes());
    out.extend_from_slice(&(rows.len() as u64).to_le_bytes());
    for r in rows {
        if r.e_explicit.len() != d_text || r.e_latent.len() != d_text {
            return Err(Error::Validation(format!("embedding for {} has the wrong width", r.session_id)));
        }
        out.push(u8::from(r.has_explicit) | (u8::from(r.has_latent) << 1));
        for x in r.e_explicit.iter().chain(&r.e_latent) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    write_atomic(&dir.join(EMBEDDINGS_FILE), &out)?;
    let index = EmbeddingIndex {
        version: EMB_VERSION,
        d_text,
        encoder_fingerprint: fingerprint.to_string(),
        count: rows.len(),
        session_ids: rows.iter().map(|r| r.session_id.clone()).collect(),
    };
    let mut js = serde_json::to_vec_pretty(&index)?;
    js.push(b'\n');
    write_atomic(&dir.join(EMBEDDINGS_INDEX), &js)
}

pub fn read_embeddings(dir: &Path) -> Result<(EmbeddingIndex, Vec<IntentEmbedding>)> {
    let ipath = dir.join(EMBEDDINGS_INDEX);
    let index: EmbeddingIndex =
        serde_json::from_slice(&std::fs::read(&ipath).map_err(|e| Error::io(&ipath, e))?)?;
    let bpath = dir.join(EMBEDDINGS_FILE);
    let bytes = std::fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    let bad = |m: &str| Error::Validation(format!("{}: {m}", bpath.display()));
    if bytes.len() < 24 || &bytes[..8] != EMB_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4"));
    let d_text = u32::from_le_bytes(bytes[12..16].try_into().expect("4")) as usize;
    let count = u64::from_le_bytes(bytes[16..24].try_into().expect("8")) as usize;
    if version != EMB_VERSION || d_text != index.d_text || count != index.count || count != index.session_ids.len() {
        return Err(bad("header disagrees with index"));
    }
    let rec = 1 + 16 * d_text;
    if bytes.len() != 24 + count * rec {
        return Err(bad("payload size mismatch"));
    }
    let rows = index
        .session_ids
        .iter()
        .enumerate()
        .map(|(i, sid)| {
            let r = &bytes[24 + i * rec..24 + (i + 1) * rec];
            let v = read_f64s(&r[1..])?;
            Ok(IntentEmbedding {
                session_id: sid.clone(),
                e_explicit: v[..d_text].to_vec(),
                e_latent: v[d_text..].to_vec(),
                has_explicit: r[0] & 1 != 0,
                has_latent: r[0] & 2 != 0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((index, rows))
}

fn read_f64s(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Validation("float payload not a multiple of 8 bytes".into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

/// Write to a sibling temp file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
