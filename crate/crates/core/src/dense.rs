//! Dual-encoder dense retrieval: embedding-bag encoders with linear
//! projections, offline passage encoding, and exact inner-product search.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{put_f32s, put_f64s, put_str, put_u32, put_u64, SnapshotReader};
use crate::corpus::{tokenize, MultiModalQuery, Passage};
use crate::error::{Error, Result};
use crate::ranking::{RankedEntry, RankedList};

pub const UNK_TOKEN: &str = "[UNK]";
pub const MAX_PASSAGE_TOKENS: usize = 384;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    fn random(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, std).expect("valid std");
        Matrix {
            rows,
            cols,
            data: (0..rows * cols).map(|_| normal.sample(rng)).collect(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// `y = x W + b` with `W` of shape `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Matrix::zeros(input, output),
            bias: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.weight.rows);
        let mut out = self.bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.weight.row(i)) {
                *o += xi * w;
            }
        }
        out
    }

    /// `W dy`, the gradient flowing back into the input.
    pub(crate) fn backward_input(&self, dy: &[f64]) -> Vec<f64> {
        (0..self.weight.rows)
            .map(|i| dot64(self.weight.row(i), dy))
            .collect()
    }

    /// Accumulates `x ⊗ dy` into the weight gradient and `dy` into the bias.
    pub(crate) fn accumulate(&mut self, x: &[f64], dy: &[f64]) {
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (g, d) in self.weight.row_mut(i).iter_mut().zip(dy) {
                *g += xi * d;
            }
        }
        for (g, d) in self.bias.iter_mut().zip(dy) {
            *g += d;
        }
    }
}

fn dot64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Token vocabulary; index 0 is the shared unknown-token row.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Collects every token of `texts` seen at least `min_count` times, in
    /// sorted order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for t in texts {
            for tok in tokenize(t) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut kept: Vec<String> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count.max(1))
            .map(|(t, _)| t)
            .collect();
        kept.sort();
        Self::from_tokens(kept)
    }

    /// Builds a vocabulary from an explicit token list (UNK is prepended).
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut all = vec![UNK_TOKEN.to_string()];
        all.extend(tokens.into_iter().filter(|t| t != UNK_TOKEN));
        Self::from_full_list(all)
    }

    fn from_full_list(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn ids(&self, text: &str, max_len: Option<usize>) -> Vec<u32> {
        let mut toks = tokenize(text);
        if let Some(m) = max_len {
            toks.truncate(m);
        }
        toks.iter().map(|t| self.id(t)).collect()
    }
}

/// All trainable tensors. Gradients use the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    /// `vocab × d_e`
    pub token_embeddings: Matrix,
    /// `d_e × n`
    pub query_text_projection: Linear,
    /// `d_v × n`
    pub query_visual_projection: Option<Linear>,
    /// `d_e × n`
    pub passage_projection: Linear,
}

impl Weights {
    pub fn zeros_like(other: &Weights) -> Self {
        let z = |l: &Linear| Linear::zeros(l.input_dim(), l.output_dim());
        Weights {
            token_embeddings: Matrix::zeros(
                other.token_embeddings.rows,
                other.token_embeddings.cols,
            ),
            query_text_projection: z(&other.query_text_projection),
            query_visual_projection: other.query_visual_projection.as_ref().map(z),
            passage_projection: z(&other.passage_projection),
        }
    }

    /// Every tensor as a flat slice, in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = vec![
            ("token_embeddings", &self.token_embeddings.data),
            ("query_text.weight", &self.query_text_projection.weight.data),
            ("query_text.bias", &self.query_text_projection.bias),
        ];
        if let Some(v) = &self.query_visual_projection {
            out.push(("query_visual.weight", &v.weight.data));
            out.push(("query_visual.bias", &v.bias));
        }
        out.push(("passage.weight", &self.passage_projection.weight.data));
        out.push(("passage.bias", &self.passage_projection.bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out: Vec<(&'static str, &mut [f64])> = vec![
            ("token_embeddings", &mut self.token_embeddings.data),
            (
                "query_text.weight",
                &mut self.query_text_projection.weight.data,
            ),
            ("query_text.bias", &mut self.query_text_projection.bias),
        ];
        if let Some(v) = &mut self.query_visual_projection {
            out.push(("query_visual.weight", &mut v.weight.data));
            out.push(("query_visual.bias", &mut v.bias));
        }
        out.push(("passage.weight", &mut self.passage_projection.weight.data));
        out.push(("passage.bias", &mut self.passage_projection.bias));
        out
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f64, other: &Weights) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualEncoderParams {
    pub vocab: Vocab,
    pub weights: Weights,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderShape {
    pub embedding_dim: usize,
    pub projection_size: usize,
    /// Region feature size; `None` builds a text-only query tower.
    pub visual_dim: Option<usize>,
}

impl DualEncoderParams {
    /// Gaussian initialization scaled by fan-in; biases start at zero.
    pub fn init(vocab: Vocab, shape: EncoderShape, seed: u64) -> Result<Self> {
        let EncoderShape {
            embedding_dim: de,
            projection_size: n,
            visual_dim,
        } = shape;
        if de == 0 || n == 0 || visual_dim == Some(0) {
            return Err(Error::InvalidArgument(
                "encoder dimensions must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let token_embeddings = Matrix::random(vocab.len(), de, 1.0, &mut rng);
        let mut linear = |input: usize| Linear {
            weight: Matrix::random(input, n, 1.0 / (input as f64).sqrt(), &mut rng),
            bias: vec![0.0; n],
        };
        let query_text_projection = linear(de);
        let query_visual_projection = visual_dim.map(&mut linear);
        let passage_projection = linear(de);
        Ok(DualEncoderParams {
            vocab,
            weights: Weights {
                token_embeddings,
                query_text_projection,
                query_visual_projection,
                passage_projection,
            },
        })
    }

    pub fn shape(&self) -> EncoderShape {
        EncoderShape {
            embedding_dim: self.weights.token_embeddings.cols,
            projection_size: self.projection_size(),
            visual_dim: self
                .weights
                .query_visual_projection
                .as_ref()
                .map(Linear::input_dim),
        }
    }

    pub fn projection_size(&self) -> usize {
        self.weights.passage_projection.output_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.weights.token_embeddings.cols
    }

    /// Mean embedding of a token id sequence; zeros when empty.
    pub(crate) fn mean_embedding(&self, ids: &[u32]) -> Vec<f64> {
        let mut out = vec![0.0; self.embedding_dim()];
        if ids.is_empty() {
            return out;
        }
        for &id in ids {
            for (o, e) in out
                .iter_mut()
                .zip(self.weights.token_embeddings.row(id as usize))
            {
                *o += e;
            }
        }
        let inv = 1.0 / ids.len() as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        out
    }

    pub(crate) fn passage_ids(&self, text: &str) -> Vec<u32> {
        self.vocab.ids(text, Some(MAX_PASSAGE_TOKENS))
    }

    pub(crate) fn question_ids(&self, text: &str) -> Vec<u32> {
        self.vocab.ids(text, None)
    }

    /// Checks and averages a query's region features for the visual tower.
    /// `None` means the query will be encoded from text alone.
    pub(crate) fn visual_input(
        &self,
        query: &MultiModalQuery,
        use_visual: bool,
    ) -> Result<Option<Vec<f64>>> {
        if !use_visual {
            return Ok(None);
        }
        let Some(proj) = &self.weights.query_visual_projection else {
            return Err(Error::InvalidArgument(
                "visual encoding requested but the model has no visual projection".into(),
            ));
        };
        let features = match &query.visual_features {
            Some(f) if !f.is_empty() => f,
            _ => {
                log::warn!(
                    "query `{}` has no region features; encoding the question only",
                    query.id
                );
                return Ok(None);
            }
        };
        let dim = proj.input_dim();
        let mut mean = vec![0.0; dim];
        for region in features {
            if region.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: region.len(),
                });
            }
            for (m, x) in mean.iter_mut().zip(region) {
                *m += x;
            }
        }
        let inv = 1.0 / features.len() as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
        Ok(Some(mean))
    }

    pub fn encode_passage(&self, passage: &Passage) -> PassageVector {
        self.encode_passage_text(&passage.text)
    }

    pub fn encode_passage_text(&self, text: &str) -> PassageVector {
        let x = self.mean_embedding(&self.passage_ids(text));
        PassageVector(self.weights.passage_projection.apply(&x))
    }

    /// Text tower plus, when requested and available, the visual tower.
    pub fn encode_query(&self, query: &MultiModalQuery, use_visual: bool) -> Result<QueryVector> {
        let t = self.mean_embedding(&self.question_ids(&query.question));
        let mut q = self.weights.query_text_projection.apply(&t);
        if let Some(v) = self.visual_input(query, use_visual)? {
            let proj = self
                .weights
                .query_visual_projection
                .as_ref()
                .expect("checked");
            for (a, b) in q.iter_mut().zip(proj.apply(&v)) {
                *a += b;
            }
        }
        Ok(QueryVector(q))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let shape = self.shape();
        put_u64(w, self.vocab.len() as u64)?;
        for t in self.vocab.tokens() {
            put_str(w, t)?;
        }
        put_u64(w, shape.embedding_dim as u64)?;
        put_u64(w, shape.projection_size as u64)?;
        put_u64(w, shape.visual_dim.unwrap_or(0) as u64)?;
        for (_, t) in self.weights.tensors() {
            put_f64s(w, t)?;
        }
        Ok(())
    }

    pub(crate) fn read_from<R: Read>(r: &mut SnapshotReader<R>) -> Result<Self> {
        let v = r.len()?;
        let mut tokens = Vec::with_capacity(v);
        for _ in 0..v {
            tokens.push(r.string()?);
        }
        if tokens.first().map(String::as_str) != Some(UNK_TOKEN) {
            return Err(Error::Snapshot(
                "vocabulary must start with the UNK token".into(),
            ));
        }
        let vocab = Vocab::from_full_list(tokens);
        let de = r.len()?;
        let n = r.len()?;
        let dv = r.len()?;
        let read_linear = |input: usize, r: &mut SnapshotReader<R>| -> Result<Linear> {
            let data = r.f64s(input * n)?;
            let bias = r.f64s(n)?;
            Ok(Linear {
                weight: Matrix {
                    rows: input,
                    cols: n,
                    data,
                },
                bias,
            })
        };
        let token_embeddings = Matrix {
            rows: v,
            cols: de,
            data: r.f64s(v * de)?,
        };
        let query_text_projection = read_linear(de, r)?;
        let query_visual_projection = if dv > 0 {
            Some(read_linear(dv, r)?)
        } else {
            None
        };
        let passage_projection = read_linear(de, r)?;
        let params = DualEncoderParams {
            vocab,
            weights: Weights {
                token_embeddings,
                query_text_projection,
                query_visual_projection,
                passage_projection,
            },
        };
        if !params.weights.all_finite() {
            return Err(Error::Snapshot("non-finite parameters".into()));
        }
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryVector(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct PassageVector(pub Vec<f64>);

const STORE_MAGIC: &[u8; 8] = b"VQRVSTOR";
const STORE_VERSION: u32 = 1;

/// Encoded passages as a row-major `f32` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    /// Ascending-id position of each row, for tie-breaking.
    id_order: Vec<u32>,
}

impl VectorStore {
    pub fn from_rows(ids: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != ids.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: ids.len() * dim,
                actual: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite vector entries".into()));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        let mut sorted: Vec<u32> = (0..ids.len() as u32).collect();
        sorted.sort_by(|&a, &b| ids[a as usize].cmp(&ids[b as usize]));
        let mut id_order = vec![0u32; ids.len()];
        for (pos, &row) in sorted.iter().enumerate() {
            id_order[row as usize] = pos as u32;
        }
        Ok(VectorStore {
            dim,
            ids,
            data,
            id_order,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Exact top-`k` by inner product using one worker.
    pub fn search(&self, query_id: &str, query: &QueryVector, k: usize) -> Result<RankedList> {
        self.search_with_threads(query_id, query, k, 1)
    }

    /// Exact top-`k` by inner product, scanning `threads` contiguous shards
    /// in parallel. The result does not depend on `threads`.
    pub fn search_with_threads(
        &self,
        query_id: &str,
        query: &QueryVector,
        k: usize,
        threads: usize,
    ) -> Result<RankedList> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if query.0.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.0.len(),
            });
        }
        let q: Vec<f32> = query.0.iter().map(|&x| x as f32).collect();
        let threads = threads.clamp(1, self.len().max(1));
        let shard = self.len().div_ceil(threads).max(1);
        let mut hits: Vec<Hit> = if threads == 1 {
            self.scan(&q, 0, self.len(), k)
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = (0..threads)
                    .map(|t| {
                        let q = &q;
                        let start = (t * shard).min(self.len());
                        let end = ((t + 1) * shard).min(self.len());
                        s.spawn(move || self.scan(q, start, end, k))
                    })
                    .collect();
                handles
                    .into_iter()
                    .flat_map(|h| h.join().expect("search worker panicked"))
                    .collect()
            })
        };
        hits.sort_unstable();
        hits.truncate(k);
        Ok(RankedList {
            query_id: query_id.to_string(),
            entries: hits
                .into_iter()
                .enumerate()
                .map(|(i, h)| RankedEntry {
                    passage_id: self.ids[h.row as usize].clone(),
                    score: h.score,
                    rank: i + 1,
                })
                .collect(),
        })
    }

    fn scan(&self, q: &[f32], start: usize, end: usize, k: usize) -> Vec<Hit> {
        const BLOCK: usize = 256;
        // max-heap on `Hit` ordering keeps the worst retained hit on top
        let mut heap: BinaryHeap<Hit> = BinaryHeap::with_capacity(k + 1);
        let mut block_start = start;
        while block_start < end {
            let block_end = (block_start + BLOCK).min(end);
            let rows = &self.data[block_start * self.dim..block_end * self.dim];
            for (offset, row) in rows.chunks_exact(self.dim).enumerate() {
                let r = block_start + offset;
                let hit = Hit {
                    score: dot32(q, row),
                    order: self.id_order[r],
                    row: r as u32,
                };
                if heap.len() < k {
                    heap.push(hit);
                } else if hit < *heap.peek().expect("non-empty") {
                    heap.pop();
                    heap.push(hit);
                }
            }
            block_start = block_end;
        }
        heap.into_vec()
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(STORE_MAGIC)?;
        put_u32(w, STORE_VERSION)?;
        put_u64(w, self.dim as u64)?;
        put_u64(w, self.ids.len() as u64)?;
        put_f32s(w, &self.data)?;
        for id in &self.ids {
            put_str(w, id)?;
        }
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = SnapshotReader::new(r);
        r.expect_header(STORE_MAGIC, STORE_VERSION)?;
        let dim = r.len()?;
        let count = r.len()?;
        let data = r.f32s(dim * count)?;
        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            ids.push(r.string()?);
        }
        r.expect_eof()?;
        Self::from_rows(ids, dim, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}

/// Inner product of `f32` vectors, accumulated in `f64` in index order.
pub fn dot32(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += f64::from(*x) * f64::from(*y);
    }
    acc
}

/// Ordered best-first: higher score, then smaller id.
#[derive(Debug, Clone, Copy)]
struct Hit {
    score: f64,
    order: u32,
    row: u32,
}

impl PartialEq for Hit {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Hit {}

impl PartialOrd for Hit {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Hit {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.order.cmp(&other.order))
    }
}

/// Encodes passages in input order (in parallel) into a store.
pub fn build_store<'a>(
    params: &DualEncoderParams,
    passages: impl IntoIterator<Item = &'a Passage>,
) -> Result<VectorStore> {
    let passages: Vec<&Passage> = passages.into_iter().collect();
    let mut seen = HashSet::with_capacity(passages.len());
    for p in &passages {
        if !seen.insert(p.id.as_str()) {
            return Err(Error::DuplicateId(p.id.clone()));
        }
    }
    let n = params.projection_size();
    let rows: Vec<Vec<f32>> = passages
        .par_iter()
        .map(|p| {
            params
                .encode_passage(p)
                .0
                .into_iter()
                .map(|x| x as f32)
                .collect()
        })
        .collect();
    VectorStore::from_rows(
        passages.iter().map(|p| p.id.clone()).collect(),
        n,
        rows.concat(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_params() -> DualEncoderParams {
        // vocab: [UNK], "a", "b"; d_e = 2; n = 2
        let vocab = Vocab::from_tokens(["a".to_string(), "b".to_string()]);
        DualEncoderParams {
            vocab,
            weights: Weights {
                token_embeddings: Matrix::from_rows(&[
                    vec![0.5, 0.5],
                    vec![1.0, 0.0],
                    vec![0.0, 2.0],
                ]),
                query_text_projection: Linear {
                    weight: Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]),
                    bias: vec![0.0, 0.0],
                },
                query_visual_projection: Some(Linear {
                    weight: Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, -1.0]]),
                    bias: vec![0.1, 0.2],
                }),
                passage_projection: Linear {
                    weight: Matrix::from_rows(&[vec![2.0, 1.0], vec![0.0, 3.0]]),
                    bias: vec![1.0, -1.0],
                },
            },
        }
    }

    #[test]
    fn passage_encoding_by_hand() {
        let p = tiny_params();
        // tokens a, b, zzz -> rows [1,0], [0,2], [0.5,0.5]; mean = [0.5, 0.8333..]
        let v = p.encode_passage(&Passage::new("p", "a b zzz").unwrap());
        let m0 = 1.5 / 3.0;
        let m1 = 2.5 / 3.0;
        let expected = [m0 * 2.0 + 1.0, m0 * 1.0 + m1 * 3.0 - 1.0];
        assert!((v.0[0] - expected[0]).abs() < 1e-12);
        assert!((v.0[1] - expected[1]).abs() < 1e-12);
        let again = p.encode_passage(&Passage::new("q", "a b zzz").unwrap());
        assert_eq!(v, again);
    }

    #[test]
    fn zero_weights_yield_bias() {
        let mut p = tiny_params();
        p.weights.token_embeddings = Matrix::zeros(3, 2);
        p.weights.passage_projection.weight = Matrix::zeros(2, 2);
        let v = p.encode_passage(&Passage::new("p", "a b").unwrap());
        assert_eq!(v.0, vec![1.0, -1.0]);
    }

    #[test]
    fn query_encoding_by_hand() {
        let p = tiny_params();
        let mut q = MultiModalQuery::new("q", "a");
        q.visual_features = Some(vec![vec![2.0, 1.0]]);
        // text: [1,0] -> [1,0]; visual: [2,1] -> [2+0.1, 2-1+0.2]
        let with = p.encode_query(&q, true).unwrap();
        assert!((with.0[0] - 3.1).abs() < 1e-12);
        assert!((with.0[1] - 1.2).abs() < 1e-12);
        let without = p.encode_query(&q, false).unwrap();
        assert_eq!(without.0, vec![1.0, 0.0]);

        // zero features: visual part reduces to its bias
        q.visual_features = Some(vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
        let z = p.encode_query(&q, true).unwrap();
        assert_eq!(z.0, vec![1.0 + 0.1, 0.0 + 0.2]);

        q.visual_features = Some(vec![vec![1.0, 2.0, 3.0]]);
        assert!(matches!(
            p.encode_query(&q, true),
            Err(Error::DimensionMismatch {
                expected: 2,
                actual: 3
            })
        ));
        // missing features fall back to text only
        q.visual_features = None;
        assert_eq!(p.encode_query(&q, true).unwrap(), without);
    }

    #[test]
    fn orthonormal_store() {
        let ids = vec!["p1".to_string(), "p2".to_string(), "p3".to_string()];
        let data = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let store = VectorStore::from_rows(ids, 3, data).unwrap();
        let r = store
            .search("q", &QueryVector(vec![0.0, 1.0, 0.0]), 1)
            .unwrap();
        assert_eq!(r.entries[0].passage_id, "p2");
        assert_eq!(r.entries[0].score, 1.0);
        let full = store
            .search("q", &QueryVector(vec![0.0, 1.0, 0.0]), 10)
            .unwrap();
        assert_eq!(full.ids().collect::<Vec<_>>(), ["p2", "p1", "p3"]);
        assert!(store.search("q", &QueryVector(vec![1.0]), 1).is_err());
    }

    #[test]
    fn store_rows_match_encoder_and_round_trip() {
        let p = tiny_params();
        let passages = vec![
            Passage::new("x", "a a").unwrap(),
            Passage::new("y", "b").unwrap(),
            Passage::new("z", "a b").unwrap(),
        ];
        let store = build_store(&p, &passages).unwrap();
        assert_eq!(store.len(), 3);
        for (i, ps) in passages.iter().enumerate() {
            let enc: Vec<f32> = p.encode_passage(ps).0.iter().map(|&x| x as f32).collect();
            assert_eq!(store.row(i), enc.as_slice());
        }
        let mut a = Vec::new();
        store.write_to(&mut a).unwrap();
        let back = VectorStore::read_from(a.as_slice()).unwrap();
        let mut b = Vec::new();
        back.write_to(&mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(back, store);

        let dup = vec![passages[0].clone(), passages[0].clone()];
        assert!(matches!(build_store(&p, &dup), Err(Error::DuplicateId(_))));
    }

    #[test]
    fn params_round_trip() {
        let p = tiny_params();
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        let back = DualEncoderParams::read_from(&mut SnapshotReader::new(buf.as_slice())).unwrap();
        assert_eq!(back, p);
    }
}
