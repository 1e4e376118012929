//! Inverted index and BM25 retrieval over expanded query sets.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::binio::{put_str, put_u32, put_u64, SnapshotReader};
use crate::corpus::{expand_query, tokenize, Collection, ExpansionMode, MultiModalQuery, Passage};
use crate::error::{Error, Result};
use crate::eval;
use crate::fusion::FusionMethod;
use crate::ranking::RankedList;

const INDEX_MAGIC: &[u8; 8] = b"VQRINDEX";
const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self> {
        if !(k1 >= 0.0 && k1.is_finite()) {
            return Err(Error::InvalidArgument(format!("k1 must be >= 0, got {k1}")));
        }
        if !(0.0..=1.0).contains(&b) {
            return Err(Error::InvalidArgument(format!(
                "b must be in [0,1], got {b}"
            )));
        }
        Ok(Bm25Params { k1, b })
    }

    /// The tuning grid: k1 in 0.5..=1.5 and b in 0.2..=0.8, both in steps of 0.2.
    pub fn grid() -> Vec<Bm25Params> {
        let mut out = Vec::with_capacity(24);
        for i in 0..6 {
            for j in 0..4 {
                out.push(Bm25Params {
                    k1: f64::from(5 + 2 * i) / 10.0,
                    b: f64::from(2 + 2 * j) / 10.0,
                });
            }
        }
        out
    }
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 0.9, b: 0.4 }
    }
}

/// `ln(1 + (N - df + 0.5) / (df + 0.5))`; never negative.
pub fn idf(num_docs: usize, df: usize) -> f64 {
    let n = num_docs as f64;
    let df = df as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub ordinal: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    ids: Vec<String>,
    ordinals: HashMap<String, u32>,
    /// Position of each ordinal's id in ascending id order, for tie-breaking.
    id_order: Vec<u32>,
    doc_lengths: Vec<u32>,
    avg_doc_len: f64,
    postings: HashMap<String, Vec<Posting>>,
}

pub fn build_index(passages: impl IntoIterator<Item = Result<Passage>>) -> Result<InvertedIndex> {
    let mut b = IndexBuilder::default();
    for p in passages {
        b.add(&p?)?;
    }
    b.finish()
}

#[derive(Default)]
struct IndexBuilder {
    ids: Vec<String>,
    ordinals: HashMap<String, u32>,
    doc_lengths: Vec<u32>,
    postings: HashMap<String, Vec<Posting>>,
}

impl IndexBuilder {
    fn add(&mut self, p: &Passage) -> Result<()> {
        if self.ordinals.contains_key(&p.id) {
            return Err(Error::DuplicateId(p.id.clone()));
        }
        let ordinal = self.ids.len() as u32;
        self.ordinals.insert(p.id.clone(), ordinal);
        self.ids.push(p.id.clone());
        let tokens = tokenize(&p.text);
        self.doc_lengths.push(tokens.len() as u32);
        let mut tf: HashMap<String, u32> = HashMap::new();
        for t in tokens {
            *tf.entry(t).or_default() += 1;
        }
        for (term, count) in tf {
            self.postings
                .entry(term)
                .or_default()
                .push(Posting { ordinal, tf: count });
        }
        Ok(())
    }

    fn finish(self) -> Result<InvertedIndex> {
        InvertedIndex::assemble(self.ids, self.doc_lengths, self.postings)
    }
}

impl InvertedIndex {
    pub fn from_passages<'a>(passages: impl IntoIterator<Item = &'a Passage>) -> Result<Self> {
        let mut b = IndexBuilder::default();
        for p in passages {
            b.add(p)?;
        }
        b.finish()
    }

    fn assemble(
        ids: Vec<String>,
        doc_lengths: Vec<u32>,
        postings: HashMap<String, Vec<Posting>>,
    ) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptyCollection);
        }
        let ordinals: HashMap<String, u32> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        if ordinals.len() != ids.len() {
            return Err(Error::Snapshot("duplicate passage ids".into()));
        }
        let mut sorted: Vec<u32> = (0..ids.len() as u32).collect();
        sorted.sort_by(|&a, &b| ids[a as usize].cmp(&ids[b as usize]));
        let mut id_order = vec![0u32; ids.len()];
        for (pos, &ord) in sorted.iter().enumerate() {
            id_order[ord as usize] = pos as u32;
        }
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        let avg_doc_len = total as f64 / ids.len() as f64;
        Ok(InvertedIndex {
            ids,
            ordinals,
            id_order,
            doc_lengths,
            avg_doc_len,
            postings,
        })
    }

    pub fn num_docs(&self) -> usize {
        self.ids.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn doc_len(&self, passage_id: &str) -> Option<u32> {
        self.ordinals
            .get(passage_id)
            .map(|&o| self.doc_lengths[o as usize])
    }

    pub fn doc_lengths(&self) -> impl Iterator<Item = (&str, u32)> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.doc_lengths.iter().copied())
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn num_terms(&self) -> usize {
        self.postings.len()
    }

    pub fn passage_id(&self, ordinal: u32) -> &str {
        &self.ids[ordinal as usize]
    }

    fn term_weight(&self, params: Bm25Params, idf: f64, tf: u32, ordinal: u32) -> f64 {
        let tf = f64::from(tf);
        let dl = f64::from(self.doc_lengths[ordinal as usize]);
        let norm = params.k1 * (1.0 - params.b + params.b * dl / self.avg_doc_len);
        idf * tf * (params.k1 + 1.0) / (tf + norm)
    }

    /// BM25 score of one passage. Repeated query tokens count once per
    /// occurrence.
    pub fn bm25_score(
        &self,
        params: Bm25Params,
        query_tokens: &[String],
        passage_id: &str,
    ) -> Result<f64> {
        let ordinal = *self
            .ordinals
            .get(passage_id)
            .ok_or_else(|| Error::UnknownPassage(passage_id.to_string()))?;
        let mut score = 0.0;
        for t in query_tokens {
            let list = self.postings(t);
            if let Ok(pos) = list.binary_search_by_key(&ordinal, |p| p.ordinal) {
                let w = idf(self.num_docs(), list.len());
                score += self.term_weight(params, w, list[pos].tf, ordinal);
            }
        }
        Ok(score)
    }

    /// Top-`k` passages for a token list; zero-scoring passages are omitted.
    pub fn search_tokens(
        &self,
        params: Bm25Params,
        query_id: &str,
        tokens: &[String],
        k: usize,
    ) -> RankedList {
        let mut acc = vec![0.0f64; self.num_docs()];
        let mut touched: Vec<u32> = Vec::new();
        for t in tokens {
            let list = self.postings(t);
            if list.is_empty() {
                continue;
            }
            let w = idf(self.num_docs(), list.len());
            for p in list {
                let slot = &mut acc[p.ordinal as usize];
                if *slot == 0.0 {
                    touched.push(p.ordinal);
                }
                *slot += self.term_weight(params, w, p.tf, p.ordinal);
            }
        }
        touched.retain(|&o| acc[o as usize] > 0.0);
        let cmp = |a: &u32, b: &u32| {
            acc[*b as usize]
                .total_cmp(&acc[*a as usize])
                .then_with(|| self.id_order[*a as usize].cmp(&self.id_order[*b as usize]))
        };
        if k < touched.len() {
            touched.select_nth_unstable_by(k, cmp);
            touched.truncate(k);
        }
        touched.sort_unstable_by(cmp);
        RankedList {
            query_id: query_id.to_string(),
            entries: touched
                .into_iter()
                .enumerate()
                .map(|(i, o)| crate::ranking::RankedEntry {
                    passage_id: self.ids[o as usize].clone(),
                    score: acc[o as usize],
                    rank: i + 1,
                })
                .collect(),
        }
    }

    pub fn search(
        &self,
        params: Bm25Params,
        query_id: &str,
        query_text: &str,
        k: usize,
    ) -> Result<RankedList> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        Ok(self.search_tokens(params, query_id, &tokenize(query_text), k))
    }

    /// Runs every expanded text query at depth `k` and fuses the lists.
    ///
    /// `Orig` yields a single list and is returned without fusion. The fused
    /// list is cut to `k`.
    pub fn retrieve(
        &self,
        params: Bm25Params,
        query: &MultiModalQuery,
        mode: ExpansionMode,
        fusion: FusionMethod,
        k: usize,
    ) -> Result<RankedList> {
        let texts = expand_query(query, mode);
        let lists = texts
            .iter()
            .map(|t| self.search(params, &query.id, t, k))
            .collect::<Result<Vec<_>>>()?;
        let mut fused = if mode == ExpansionMode::Orig {
            lists.into_iter().next().expect("expansion is never empty")
        } else {
            fusion.fuse(&lists)?
        };
        fused.truncate(k);
        Ok(fused)
    }

    pub fn retrieve_all(
        &self,
        params: Bm25Params,
        queries: &[MultiModalQuery],
        mode: ExpansionMode,
        fusion: FusionMethod,
        k: usize,
    ) -> Result<Vec<RankedList>> {
        queries
            .par_iter()
            .map(|q| self.retrieve(params, q, mode, fusion, k))
            .collect()
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(INDEX_MAGIC)?;
        put_u32(w, INDEX_VERSION)?;
        put_u64(w, self.ids.len() as u64)?;
        for (id, len) in self.ids.iter().zip(&self.doc_lengths) {
            put_str(w, id)?;
            put_u32(w, *len)?;
        }
        let mut terms: Vec<&String> = self.postings.keys().collect();
        terms.sort();
        put_u64(w, terms.len() as u64)?;
        for term in terms {
            let list = &self.postings[term];
            put_str(w, term)?;
            put_u64(w, list.len() as u64)?;
            for p in list {
                put_u32(w, p.ordinal)?;
                put_u32(w, p.tf)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = SnapshotReader::new(r);
        r.expect_header(INDEX_MAGIC, INDEX_VERSION)?;
        let n = r.len()?;
        let mut ids = Vec::with_capacity(n);
        let mut doc_lengths = Vec::with_capacity(n);
        for _ in 0..n {
            ids.push(r.string()?);
            doc_lengths.push(r.u32()?);
        }
        let num_terms = r.len()?;
        let mut postings = HashMap::with_capacity(num_terms);
        for _ in 0..num_terms {
            let term = r.string()?;
            let len = r.len()?;
            let mut list = Vec::with_capacity(len);
            for _ in 0..len {
                let ordinal = r.u32()?;
                let tf = r.u32()?;
                if ordinal as usize >= n {
                    return Err(Error::Snapshot(format!(
                        "posting ordinal {ordinal} out of range"
                    )));
                }
                list.push(Posting { ordinal, tf });
            }
            postings.insert(term, list);
        }
        r.expect_eof()?;
        Self::assemble(ids, doc_lengths, postings)
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

#[derive(Debug, Clone)]
pub struct TuneReport {
    pub best: Bm25Params,
    pub best_mrr: f64,
    /// Validation MRR@5 for every grid point, in grid order.
    pub grid: Vec<(Bm25Params, f64)>,
}

/// Grid search over [`Bm25Params::grid`] maximizing validation MRR@5; ties go
/// to the smaller `(k1, b)`.
pub fn tune_params(
    index: &InvertedIndex,
    queries: &[MultiModalQuery],
    passages: &Collection,
    mode: ExpansionMode,
    fusion: FusionMethod,
    depth: usize,
) -> Result<TuneReport> {
    if queries.is_empty() {
        return Err(Error::InvalidArgument("no validation queries".into()));
    }
    let grid = Bm25Params::grid();
    let scores = grid
        .par_iter()
        .map(|&params| -> Result<f64> {
            let mut total = 0.0;
            for q in queries {
                let list = index.retrieve(params, q, mode, fusion, depth)?;
                let rel = eval::judge(&list, q, passages)?;
                total += eval::mrr_at_k(&rel, 5);
            }
            Ok(total / queries.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        // grid is already in ascending (k1, b) order, so strict > keeps the smaller on ties
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(TuneReport {
        best: grid[best],
        best_mrr: scores[best],
        grid: grid.into_iter().zip(scores).collect(),
    })
}
