//! Chunking, an exact cosine index, and rerank orchestration.
//!
//! # Splitter
//!
//! Text is first decomposed into atoms. A span longer than `chunk_size` is
//! cut at every occurrence of the coarsest separator it contains, trying
//! `"\n\n"`, `"\n"`, `" "` and finally single characters; pieces that are
//! still too long are cut again with the next separator. Separators at cut
//! points belong to no atom.
//!
//! Atoms are merged greedily: a chunk is the original substring from its
//! first atom's start to its last atom's end, and grows while that stays
//! within `chunk_size` characters. When an atom does not fit, the next chunk
//! starts with the trailing whole atoms of the previous chunk that lie within
//! `overlap` characters of its end. If no whole atom qualifies, up to
//! `overlap` raw characters are carried instead, limited so the new chunk
//! still fits. Offsets are in characters (Unicode scalar values).

use std::cmp::Ordering;
use std::io::{Read, Write};
use std::path::Path;

use futures::stream::{self, StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};

use crate::contexts::ContextBundle;
use crate::gateway::{Client, GatewayError};

pub const DEFAULT_CHUNK_SIZE: usize = 1000;
pub const DEFAULT_CHUNK_OVERLAP: usize = 200;
pub const DEFAULT_K_RETRIEVE: usize = 10;
pub const DEFAULT_K_KEEP: usize = 5;

const SEPARATORS: [&str; 4] = ["\n\n", "\n", " ", ""];
const MAGIC: &[u8; 4] = b"CGVX";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("chunk_size must be positive and greater than overlap (got {chunk_size}, {overlap})")]
    BadSplit { chunk_size: usize, overlap: usize },
    #[error("cannot build an index from zero chunks")]
    NoChunks,
    #[error("index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("k_keep {k_keep} exceeds k_retrieve {k_retrieve}")]
    KeepExceedsRetrieve { k_keep: usize, k_retrieve: usize },
    #[error("vector dimension {got} does not match index dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("index file {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChunkId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChunkSource {
    Generated,
    Kb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: ChunkId,
    pub doc_id: String,
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
    pub source: ChunkSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f32>>,
}

/// A chunk as character offsets into its document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splitter {
    pub chunk_size: usize,
    pub overlap: usize,
}

impl Default for Splitter {
    fn default() -> Self {
        Splitter {
            chunk_size: DEFAULT_CHUNK_SIZE,
            overlap: DEFAULT_CHUNK_OVERLAP,
        }
    }
}

fn find_all(chars: &[char], start: usize, end: usize, sep: &[char]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut i = start;
    while i + sep.len() <= end {
        if chars[i..i + sep.len()] == *sep {
            out.push(i);
            i += sep.len();
        } else {
            i += 1;
        }
    }
    out
}

impl Splitter {
    pub fn new(chunk_size: usize, overlap: usize) -> Result<Self, RetrievalError> {
        let s = Splitter { chunk_size, overlap };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.chunk_size == 0 || self.overlap >= self.chunk_size {
            return Err(RetrievalError::BadSplit {
                chunk_size: self.chunk_size,
                overlap: self.overlap,
            });
        }
        Ok(())
    }

    fn atoms(&self, chars: &[char], start: usize, end: usize, level: usize, out: &mut Vec<Span>) {
        if end - start <= self.chunk_size {
            if end > start {
                out.push(Span { start, end });
            }
            return;
        }
        let sep: Vec<char> = SEPARATORS[level].chars().collect();
        if sep.is_empty() {
            out.extend((start..end).map(|i| Span { start: i, end: i + 1 }));
            return;
        }
        let hits = find_all(chars, start, end, &sep);
        if hits.is_empty() {
            self.atoms(chars, start, end, level + 1, out);
            return;
        }
        let mut s = start;
        for h in hits.into_iter().chain(std::iter::once(end)) {
            if h > s {
                self.atoms(chars, s, h, level + 1, out);
            }
            s = h + sep.len();
        }
    }

    /// Chunk spans of `text` in document order.
    pub fn split_spans(&self, text: &str) -> Result<Vec<Span>, RetrievalError> {
        self.validate()?;
        let chars: Vec<char> = text.chars().collect();
        let mut atoms = Vec::new();
        self.atoms(&chars, 0, chars.len(), 0, &mut atoms);
        let mut chunks = Vec::new();
        let Some(first) = atoms.first() else {
            return Ok(chunks);
        };
        let mut cur_start = first.start;
        let mut cur_end = first.end;
        // atoms of the current chunk, for whole-atom overlap
        let mut members: Vec<Span> = vec![*first];
        for a in &atoms[1..] {
            if a.end - cur_start <= self.chunk_size {
                cur_end = a.end;
                members.push(*a);
                continue;
            }
            chunks.push(Span { start: cur_start, end: cur_end });
            let carried = members
                .iter()
                .position(|m| cur_end - m.start <= self.overlap && a.end - m.start <= self.chunk_size);
            match carried {
                Some(i) => {
                    cur_start = members[i].start;
                    members.drain(..i);
                }
                None => {
                    let room = self.chunk_size as isize - (a.end - cur_end) as isize;
                    let r = (self.overlap as isize).min(room).min((cur_end - cur_start) as isize);
                    cur_start = if r > 0 { cur_end - r as usize } else { a.start };
                    members.clear();
                }
            }
            cur_end = a.end;
            members.push(*a);
        }
        chunks.push(Span { start: cur_start, end: cur_end });
        Ok(chunks)
    }

    /// Chunk texts with their spans.
    pub fn split_text(&self, text: &str) -> Result<Vec<(Span, String)>, RetrievalError> {
        let spans = self.split_spans(text)?;
        let chars: Vec<char> = text.chars().collect();
        Ok(spans
            .into_iter()
            .map(|s| (s, chars[s.start..s.end].iter().collect()))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

/// Split documents into chunks with consecutive ids starting at `first_id`.
pub fn chunk_documents(
    docs: &[Document],
    source: ChunkSource,
    splitter: &Splitter,
    first_id: u64,
) -> Result<Vec<Chunk>, RetrievalError> {
    let mut out = Vec::new();
    let mut next = first_id;
    for d in docs {
        for (span, text) in splitter.split_text(&d.text)? {
            out.push(Chunk {
                id: ChunkId(next),
                doc_id: d.id.clone(),
                text,
                char_start: span.start,
                char_end: span.end,
                source,
                vector: None,
            });
            next += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusScope {
    KbOnly,
    KbPlusTest,
    KbPlusTrainAndTest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MixedCounts {
    pub kb_chunks: usize,
    pub generated_chunks: usize,
}

/// Knowledge-base chunks enriched with generated contexts according to `scope`.
pub fn mixed_corpus(
    kb: &[Chunk],
    test_bundles: &[ContextBundle],
    train_bundles: &[ContextBundle],
    scope: CorpusScope,
    splitter: &Splitter,
) -> Result<(Vec<Chunk>, MixedCounts), RetrievalError> {
    let bundles: Vec<&ContextBundle> = match scope {
        CorpusScope::KbOnly => Vec::new(),
        CorpusScope::KbPlusTest => test_bundles.iter().collect(),
        CorpusScope::KbPlusTrainAndTest => train_bundles.iter().chain(test_bundles).collect(),
    };
    let docs: Vec<Document> = bundles
        .iter()
        .flat_map(|b| {
            b.contexts.iter().map(|c| Document {
                id: format!("{}/{}/{}", c.record_id, view_tag(c.view), c.ordinal),
                text: c.text.clone(),
            })
        })
        .collect();
    let first = kb.iter().map(|c| c.id.0 + 1).max().unwrap_or(0);
    let generated = chunk_documents(&docs, ChunkSource::Generated, splitter, first)?;
    let counts = MixedCounts {
        kb_chunks: kb.len(),
        generated_chunks: generated.len(),
    };
    let mut all = kb.to_vec();
    all.extend(generated);
    Ok((all, counts))
}

fn view_tag(v: crate::prompt::ContextView) -> &'static str {
    match v {
        crate::prompt::ContextView::OptionFocused => "option-focused",
        crate::prompt::ContextView::OptionFree => "option-free",
        crate::prompt::ContextView::Retrieved => "retrieved",
    }
}

/// Exact cosine index over unit-norm vectors.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    pub dim: usize,
    chunks: Vec<Chunk>,
    vectors: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub chunk: Chunk,
    pub score: f32,
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl VectorIndex {
    /// Index chunks that already carry unit-norm vectors.
    pub fn from_embedded(chunks: Vec<Chunk>) -> Result<Self, RetrievalError> {
        let first = chunks.first().ok_or(RetrievalError::NoChunks)?;
        let dim = first.vector.as_ref().map(Vec::len).unwrap_or(0);
        let mut vectors = Vec::with_capacity(dim * chunks.len());
        let mut stored = Vec::with_capacity(chunks.len());
        for mut c in chunks {
            let v = c.vector.take().unwrap_or_default();
            if v.len() != dim || dim == 0 {
                return Err(RetrievalError::Dimension { expected: dim, got: v.len() });
            }
            vectors.extend_from_slice(&v);
            stored.push(c);
        }
        Ok(VectorIndex {
            dim,
            chunks: stored,
            vectors,
        })
    }

    /// Embed every chunk (batched) and build the index.
    pub async fn build(chunks: Vec<Chunk>, embedder: &Client, batch: usize) -> Result<Self, RetrievalError> {
        if chunks.is_empty() {
            return Err(RetrievalError::NoChunks);
        }
        let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
        let batches: Vec<Vec<String>> = texts.chunks(batch.max(1)).map(<[String]>::to_vec).collect();
        let vecs: Vec<Vec<Vec<f32>>> = stream::iter(batches.into_iter().map(|b| async move { embedder.embed(&b).await }))
            .buffered(embedder.profile.max_parallel.max(1))
            .try_collect()
            .await?;
        let mut chunks = chunks;
        for (c, v) in chunks.iter_mut().zip(vecs.into_iter().flatten()) {
            c.vector = Some(v);
        }
        Self::from_embedded(chunks)
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Exact top-k by cosine; ties go to the lower chunk id.
    pub fn search_vector(&self, query: &[f32], k: usize) -> Result<Vec<Hit>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        if self.chunks.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        if query.len() != self.dim {
            return Err(RetrievalError::Dimension {
                expected: self.dim,
                got: query.len(),
            });
        }
        let mut scored: Vec<(f32, usize)> = (0..self.chunks.len())
            .map(|i| (dot(self.vector(i), query).clamp(-1.0, 1.0), i))
            .collect();
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(self.chunks[a.1].id.cmp(&self.chunks[b.1].id))
        });
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(s, i)| Hit {
                chunk: self.chunks[i].clone(),
                score: s,
            })
            .collect())
    }

    pub async fn search(&self, embedder: &Client, query: &str, k: usize) -> Result<Vec<Hit>, RetrievalError> {
        let q = embedder.embed(&[query.to_string()]).await?;
        self.search_vector(&q[0], k)
    }

    /// Write `vectors.bin` and `chunks.jsonl` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), RetrievalError> {
        let io = |p: &Path, e: std::io::Error| RetrievalError::Io {
            path: p.display().to_string(),
            reason: e.to_string(),
        };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let vp = dir.join("vectors.bin");
        let mut buf = Vec::with_capacity(20 + self.vectors.len() * 4);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.chunks.len() as u64).to_le_bytes());
        for x in &self.vectors {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        std::fs::File::create(&vp)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(|e| io(&vp, e))?;
        let cp = dir.join("chunks.jsonl");
        let mut meta = String::new();
        for c in &self.chunks {
            meta.push_str(&serde_json::to_string(c).unwrap());
            meta.push('\n');
        }
        std::fs::write(&cp, meta).map_err(|e| io(&cp, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, RetrievalError> {
        let bad = |p: &Path, reason: String| RetrievalError::Io {
            path: p.display().to_string(),
            reason,
        };
        let vp = dir.join("vectors.bin");
        let mut bytes = Vec::new();
        std::fs::File::open(&vp)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| bad(&vp, e.to_string()))?;
        if bytes.len() < 20 || &bytes[..4] != MAGIC {
            return Err(bad(&vp, "bad header".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(&vp, format!("unsupported version {version}")));
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() != dim * count * 4 {
            return Err(bad(&vp, "truncated vector body".into()));
        }
        let vectors: Vec<f32> = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let cp = dir.join("chunks.jsonl");
        let text = std::fs::read_to_string(&cp).map_err(|e| bad(&cp, e.to_string()))?;
        let chunks: Vec<Chunk> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| bad(&cp, e.to_string())))
            .collect::<Result<_, _>>()?;
        if chunks.len() != count {
            return Err(bad(&cp, format!("{} chunks for {count} vectors", chunks.len())));
        }
        Ok(VectorIndex { dim, chunks, vectors })
    }
}

/// Cosine top-`k_retrieve`, rescored by the reranker, top-`k_keep` returned.
/// Equal rerank scores keep cosine order.
pub async fn retrieve_with_rerank(
    index: &VectorIndex,
    embedder: &Client,
    reranker: &Client,
    query: &str,
    k_retrieve: usize,
    k_keep: usize,
) -> Result<Vec<Hit>, RetrievalError> {
    if k_keep > k_retrieve {
        return Err(RetrievalError::KeepExceedsRetrieve { k_keep, k_retrieve });
    }
    let hits = index.search(embedder, query, k_retrieve).await?;
    let passages: Vec<String> = hits.iter().map(|h| h.chunk.text.clone()).collect();
    let scores = reranker.rerank_score(query, &passages).await?;
    Ok(rerank_order(hits, &scores, k_keep))
}

/// Order hits by rerank score (descending, stable on cosine rank) and keep `k_keep`.
pub fn rerank_order(hits: Vec<Hit>, scores: &[f32], k_keep: usize) -> Vec<Hit> {
    let mut order: Vec<usize> = (0..hits.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    let mut slots: Vec<Option<Hit>> = hits.into_iter().map(Some).collect();
    order
        .into_iter()
        .take(k_keep)
        .map(|i| {
            let mut h = slots[i].take().unwrap();
            h.score = scores[i];
            h
        })
        .collect()
}
