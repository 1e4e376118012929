//! Answer-containment relevance, MRR@k / P@k, and paired significance tests.

use std::collections::HashMap;
use std::io::Write;

use statrs::function::beta::beta_reg;

use crate::corpus::{contains_answer_tokens, tokenize, Collection, MultiModalQuery};
use crate::error::{Error, Result};
use crate::ranking::RankedList;

pub const DEFAULT_CUTOFF: usize = 5;

/// Relevance of each entry: does the passage contain a ground-truth answer?
pub fn judge(
    ranked: &RankedList,
    query: &MultiModalQuery,
    passages: &Collection,
) -> Result<Vec<bool>> {
    ranked
        .entries
        .iter()
        .map(|e| {
            let p = passages.require(&e.passage_id)?;
            Ok(contains_answer_tokens(&tokenize(&p.text), &query.answers))
        })
        .collect()
}

/// Reciprocal of the first relevant rank within the cutoff, else 0.
pub fn mrr_at_k(relevance: &[bool], k: usize) -> f64 {
    relevance
        .iter()
        .take(k)
        .position(|&r| r)
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

/// Fraction of the top `k` slots that are relevant; short lists count the
/// missing slots as non-relevant.
pub fn p_at_k(relevance: &[bool], k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    relevance.iter().take(k).filter(|&&r| r).count() as f64 / k as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryMetrics {
    pub query_id: String,
    pub mrr: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub cutoff: usize,
    pub mean_mrr_at_k: f64,
    pub mean_p_at_k: f64,
    /// In the order of the evaluated queries.
    pub per_query: Vec<QueryMetrics>,
}

impl EvalResult {
    pub fn get(&self, query_id: &str) -> Option<&QueryMetrics> {
        self.per_query.iter().find(|m| m.query_id == query_id)
    }

    pub fn mrr_values(&self) -> Vec<f64> {
        self.per_query.iter().map(|m| m.mrr).collect()
    }

    pub fn precision_values(&self) -> Vec<f64> {
        self.per_query.iter().map(|m| m.precision).collect()
    }

    pub fn summary_line(&self) -> String {
        format!(
            "MRR@{k}={:.4} P@{k}={:.4} n={}",
            self.mean_mrr_at_k,
            self.mean_p_at_k,
            self.per_query.len(),
            k = self.cutoff
        )
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "query_id,mrr@{k},p@{k}", k = self.cutoff)?;
        for m in &self.per_query {
            writeln!(w, "{},{},{}", m.query_id, m.mrr, m.precision)?;
        }
        Ok(())
    }
}

/// Scores a run against `queries`. Queries without a list score 0.
pub fn evaluate(
    run: &[RankedList],
    queries: &[MultiModalQuery],
    passages: &Collection,
    k: usize,
) -> Result<EvalResult> {
    if k == 0 {
        return Err(Error::InvalidArgument("cutoff must be at least 1".into()));
    }
    let known: HashMap<&str, &MultiModalQuery> =
        queries.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut lists: HashMap<&str, &RankedList> = HashMap::new();
    for l in run {
        if !known.contains_key(l.query_id.as_str()) {
            return Err(Error::UnknownQuery(l.query_id.clone()));
        }
        if lists.insert(&l.query_id, l).is_some() {
            return Err(Error::DuplicateId(l.query_id.clone()));
        }
    }
    let mut per_query = Vec::with_capacity(queries.len());
    for q in queries {
        let (mrr, precision) = match lists.get(q.id.as_str()) {
            Some(list) => {
                let mut top = (*list).clone();
                top.truncate(k);
                let rel = judge(&top, q, passages)?;
                (mrr_at_k(&rel, k), p_at_k(&rel, k))
            }
            None => (0.0, 0.0),
        };
        per_query.push(QueryMetrics {
            query_id: q.id.clone(),
            mrr,
            precision,
        });
    }
    let n = per_query.len().max(1) as f64;
    let mean_mrr_at_k = per_query.iter().map(|m| m.mrr).sum::<f64>() / n;
    let mean_p_at_k = per_query.iter().map(|m| m.precision).sum::<f64>() / n;
    Ok(EvalResult {
        cutoff: k,
        mean_mrr_at_k,
        mean_p_at_k,
        per_query,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    /// Two-sided.
    pub p: f64,
    pub df: usize,
}

/// Student's paired t-test on `a - b`.
///
/// All-zero differences give `t = 0, p = 1`. Constant non-zero differences
/// give an infinite `t` and `p = 0`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let df = n - 1;
    if d.iter().all(|&x| x == 0.0) {
        return Ok(TTest { t: 0.0, p: 1.0, df });
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / df as f64;
    let sd = var.sqrt();
    if sd == 0.0 {
        return Ok(TTest {
            t: f64::INFINITY.copysign(mean),
            p: 0.0,
            df,
        });
    }
    let t = mean / (sd / (n as f64).sqrt());
    Ok(TTest {
        t,
        p: t_two_sided_p(t, df as f64),
        df,
    })
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}
