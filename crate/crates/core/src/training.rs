//! Training-data construction, negative sampling, the softmax cross-entropy
//! objective with analytic gradients, and the SGD loop.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{put_str, put_u32, put_u64, SnapshotReader};
use crate::corpus::{contains_answer_tokens, tokenize, Collection, MultiModalQuery};
use crate::dense::{build_store, DualEncoderParams, EncoderShape, Vocab, Weights};
use crate::error::{Error, Result};
use crate::eval;
use crate::ranking::RankedList;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrainingInstance {
    #[serde(rename = "qid")]
    pub query_id: String,
    #[serde(rename = "pos")]
    pub positive_id: String,
    #[serde(rename = "neg")]
    pub negative_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NegativeSamplingStrategy {
    /// The instance's own retrieved negative only.
    RNeg,
    /// Plus every retrieved negative in the batch.
    RNegIbNeg,
    /// Plus the other instances' positives.
    RNegIbPos,
    /// Plus every other passage in the batch.
    RNegIbAll,
}

impl NegativeSamplingStrategy {
    pub const ALL: [NegativeSamplingStrategy; 4] = [
        NegativeSamplingStrategy::RNeg,
        NegativeSamplingStrategy::RNegIbNeg,
        NegativeSamplingStrategy::RNegIbPos,
        NegativeSamplingStrategy::RNegIbAll,
    ];
}

impl fmt::Display for NegativeSamplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NegativeSamplingStrategy::RNeg => "rneg",
            NegativeSamplingStrategy::RNegIbNeg => "rneg-ibneg",
            NegativeSamplingStrategy::RNegIbPos => "rneg-ibpos",
            NegativeSamplingStrategy::RNegIbAll => "rneg-iball",
        })
    }
}

impl FromStr for NegativeSamplingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "rneg" => Ok(NegativeSamplingStrategy::RNeg),
            "rnegibneg" => Ok(NegativeSamplingStrategy::RNegIbNeg),
            "rnegibpos" => Ok(NegativeSamplingStrategy::RNegIbPos),
            "rnegiball" => Ok(NegativeSamplingStrategy::RNegIbAll),
            _ => Err(Error::InvalidArgument(format!(
                "unknown negative sampling strategy `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub strategy: NegativeSamplingStrategy,
    pub seed: u64,
    pub eval_every_steps: usize,
    pub embedding_dim: usize,
    pub projection_size: usize,
    pub use_visual: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            learning_rate: 0.1,
            epochs: 2,
            strategy: NegativeSamplingStrategy::RNegIbAll,
            seed: 0,
            eval_every_steps: 500,
            embedding_dim: 64,
            projection_size: 128,
            use_visual: true,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || self.epochs == 0
            || self.eval_every_steps == 0
            || self.embedding_dim == 0
            || self.projection_size == 0
        {
            return Err(Error::InvalidArgument(
                "batch size, epochs, eval interval and dimensions must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub instances: Vec<TrainingInstance>,
    /// Queries that produced no instances (no positives or no negatives).
    pub skipped_queries: usize,
}

/// Builds `(query, positive, negative)` triples from a retrieval run.
///
/// Per query, the `top_pos` best-ranked answer-bearing passages are each
/// emitted `repeats` times, paired with retrieved negatives drawn uniformly
/// without replacement; if a query has fewer negatives than `repeats` the
/// pool is reshuffled and drawing continues.
pub fn build_training_data(
    run: &[RankedList],
    passages: &Collection,
    queries: &[MultiModalQuery],
    top_pos: usize,
    repeats: usize,
    seed: u64,
) -> Result<TrainingData> {
    let by_id: HashMap<&str, &MultiModalQuery> =
        queries.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instances = Vec::new();
    let mut skipped_queries = 0;
    for list in run {
        let query = by_id
            .get(list.query_id.as_str())
            .ok_or_else(|| Error::UnknownQuery(list.query_id.clone()))?;
        let mut positives = Vec::new();
        let mut negatives = Vec::new();
        for e in &list.entries {
            let p = passages.require(&e.passage_id)?;
            if contains_answer_tokens(&tokenize(&p.text), &query.answers) {
                positives.push(e.passage_id.as_str());
            } else {
                negatives.push(e.passage_id.as_str());
            }
        }
        if positives.is_empty() || negatives.is_empty() || query.answers.is_empty() {
            skipped_queries += 1;
            continue;
        }
        for pos in positives.iter().take(top_pos) {
            let mut pool: Vec<&str> = Vec::new();
            for _ in 0..repeats {
                if pool.is_empty() {
                    pool = negatives.clone();
                    pool.shuffle(&mut rng);
                }
                let neg = pool.pop().expect("refilled");
                instances.push(TrainingInstance {
                    query_id: list.query_id.clone(),
                    positive_id: (*pos).to_string(),
                    negative_id: neg.to_string(),
                });
            }
        }
    }
    Ok(TrainingData {
        instances,
        skipped_queries,
    })
}

/// Union of every query's top-`top` passage ids.
pub fn build_validation_collection(run: &[RankedList], top: usize) -> BTreeSet<String> {
    run.iter()
        .flat_map(|l| l.entries.iter().take(top).map(|e| e.passage_id.clone()))
        .collect()
}

/// Candidate passages for instance `i`: its positive first, then the
/// negatives the strategy admits. Negatives equal to the instance's own
/// positive are dropped; other duplicates are kept as separate slots.
pub fn candidates_for(
    batch: &[TrainingInstance],
    i: usize,
    strategy: NegativeSamplingStrategy,
) -> Vec<&str> {
    use NegativeSamplingStrategy::*;
    let me = &batch[i];
    let mut out = vec![me.positive_id.as_str()];
    let own_negative = std::iter::once(me.negative_id.as_str());
    let all_negatives = batch.iter().map(|b| b.negative_id.as_str());
    let other_positives = batch
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, b)| b.positive_id.as_str());
    let negatives: Vec<&str> = match strategy {
        RNeg => own_negative.collect(),
        RNegIbNeg => all_negatives.collect(),
        RNegIbPos => own_negative.chain(other_positives).collect(),
        RNegIbAll => all_negatives.chain(other_positives).collect(),
    };
    out.extend(negatives.into_iter().filter(|id| *id != me.positive_id));
    out
}

/// Token ids and averaged region features, computed once per vocabulary.
pub(crate) struct TokenCache {
    passages: HashMap<String, Vec<u32>>,
    queries: HashMap<String, (Vec<u32>, Option<Vec<f64>>)>,
}

impl TokenCache {
    fn new() -> Self {
        TokenCache {
            passages: HashMap::new(),
            queries: HashMap::new(),
        }
    }

    fn add_passage(
        &mut self,
        params: &DualEncoderParams,
        passages: &Collection,
        id: &str,
    ) -> Result<()> {
        if !self.passages.contains_key(id) {
            let p = passages.require(id)?;
            self.passages
                .insert(id.to_string(), params.passage_ids(&p.text));
        }
        Ok(())
    }

    fn add_query(
        &mut self,
        params: &DualEncoderParams,
        queries: &HashMap<&str, &MultiModalQuery>,
        id: &str,
        use_visual: bool,
    ) -> Result<()> {
        if !self.queries.contains_key(id) {
            let q = queries
                .get(id)
                .ok_or_else(|| Error::UnknownQuery(id.to_string()))?;
            let visual = params.visual_input(q, use_visual)?;
            self.queries
                .insert(id.to_string(), (params.question_ids(&q.question), visual));
        }
        Ok(())
    }

    fn for_instances(
        params: &DualEncoderParams,
        instances: &[TrainingInstance],
        queries: &[MultiModalQuery],
        passages: &Collection,
        use_visual: bool,
    ) -> Result<Self> {
        let qmap: HashMap<&str, &MultiModalQuery> =
            queries.iter().map(|q| (q.id.as_str(), q)).collect();
        let mut cache = TokenCache::new();
        for inst in instances {
            cache.add_query(params, &qmap, &inst.query_id, use_visual)?;
            cache.add_passage(params, passages, &inst.positive_id)?;
            cache.add_passage(params, passages, &inst.negative_id)?;
        }
        Ok(cache)
    }
}

/// Mean softmax cross-entropy over the batch and its exact gradient.
///
/// For instance `i` the logits are the inner products of its query vector
/// with each candidate from [`candidates_for`]; the loss is `-log` of the
/// positive's softmax probability.
pub fn batch_loss_and_grads(
    params: &DualEncoderParams,
    batch: &[TrainingInstance],
    strategy: NegativeSamplingStrategy,
    queries: &[MultiModalQuery],
    passages: &Collection,
    use_visual: bool,
) -> Result<(f64, Weights)> {
    let cache = TokenCache::for_instances(params, batch, queries, passages, use_visual)?;
    loss_and_grads(params, batch, strategy, &cache)
}

fn add_to_embedding_rows(grad: &mut Weights, ids: &[u32], dx: &[f64]) {
    if ids.is_empty() {
        return;
    }
    let inv = 1.0 / ids.len() as f64;
    for &id in ids {
        for (g, d) in grad
            .token_embeddings
            .row_mut(id as usize)
            .iter_mut()
            .zip(dx)
        {
            *g += d * inv;
        }
    }
}

fn loss_and_grads(
    params: &DualEncoderParams,
    batch: &[TrainingInstance],
    strategy: NegativeSamplingStrategy,
    cache: &TokenCache,
) -> Result<(f64, Weights)> {
    let w = &params.weights;
    let n = params.projection_size();

    // forward: each distinct passage once, in first-use order
    let mut slot_of: HashMap<&str, usize> = HashMap::new();
    let mut pass_ids: Vec<&[u32]> = Vec::new();
    let mut pass_mean: Vec<Vec<f64>> = Vec::new();
    let mut pass_vec: Vec<Vec<f64>> = Vec::new();
    let cands: Vec<Vec<usize>> = (0..batch.len())
        .map(|i| {
            candidates_for(batch, i, strategy)
                .into_iter()
                .map(|id| {
                    *slot_of.entry(id).or_insert_with(|| {
                        let ids = cache.passages[id].as_slice();
                        let x = params.mean_embedding(ids);
                        pass_vec.push(w.passage_projection.apply(&x));
                        pass_ids.push(ids);
                        pass_mean.push(x);
                        pass_vec.len() - 1
                    })
                })
                .collect()
        })
        .collect();

    let mut grad = Weights::zeros_like(w);
    let mut d_pass = vec![vec![0.0; n]; pass_vec.len()];
    let inv_b = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (i, inst) in batch.iter().enumerate() {
        let (q_ids, visual) = &cache.queries[&inst.query_id];
        let t = params.mean_embedding(q_ids);
        let mut q = w.query_text_projection.apply(&t);
        if let Some(v) = visual {
            let proj = w
                .query_visual_projection
                .as_ref()
                .expect("cache built with visual tower");
            for (a, b) in q.iter_mut().zip(proj.apply(v)) {
                *a += b;
            }
        }
        let logits: Vec<f64> = cands[i]
            .iter()
            .map(|&s| q.iter().zip(&pass_vec[s]).map(|(a, b)| a * b).sum())
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let loss = z.ln() + max - logits[0];
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                index: i,
                query_id: inst.query_id.clone(),
            });
        }
        total += loss;

        // dL/dlogit_c = (softmax_c - [c == positive]) / B
        let mut dq = vec![0.0; n];
        for (c, &s) in cands[i].iter().enumerate() {
            let g = (exps[c] / z - if c == 0 { 1.0 } else { 0.0 }) * inv_b;
            for ((dqk, pk), (dpk, qk)) in dq
                .iter_mut()
                .zip(&pass_vec[s])
                .zip(d_pass[s].iter_mut().zip(&q))
            {
                *dqk += g * pk;
                *dpk += g * qk;
            }
        }
        grad.query_text_projection.accumulate(&t, &dq);
        let dt = w.query_text_projection.backward_input(&dq);
        add_to_embedding_rows(&mut grad, q_ids, &dt);
        if let Some(v) = visual {
            grad.query_visual_projection
                .as_mut()
                .expect("same shape as weights")
                .accumulate(v, &dq);
        }
    }
    for (s, dp) in d_pass.iter().enumerate() {
        grad.passage_projection.accumulate(&pass_mean[s], dp);
        let dx = w.passage_projection.backward_input(dp);
        add_to_embedding_rows(&mut grad, pass_ids[s], &dx);
    }
    Ok((total * inv_b, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    /// Mean training loss since the previous evaluation.
    pub loss: f64,
    pub val_mrr: f64,
}

pub fn write_metrics_csv(mut w: impl Write, log: &[MetricsRow]) -> std::io::Result<()> {
    writeln!(w, "step,loss,val_mrr@5")?;
    for r in log {
        writeln!(w, "{},{},{}", r.step, r.loss, r.val_mrr)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the checkpoint with the best validation MRR@5.
    pub params: DualEncoderParams,
    pub best_step: usize,
    pub best_val_mrr: f64,
    pub log: Vec<MetricsRow>,
    pub total_steps: usize,
}

/// Validation inputs: queries with answers plus the ids of the passages
/// they are searched against.
pub struct Validation<'a> {
    pub queries: &'a [MultiModalQuery],
    pub collection: &'a [String],
}

/// Builds the vocabulary from the collection and training questions,
/// initializes parameters, and trains.
pub fn train(
    config: &TrainConfig,
    instances: &[TrainingInstance],
    queries: &[MultiModalQuery],
    passages: &Collection,
    validation: &Validation<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let vocab = Vocab::build(
        passages
            .iter()
            .map(|p| p.text.as_str())
            .chain(queries.iter().map(|q| q.question.as_str())),
        1,
    );
    let visual_dim = if config.use_visual {
        queries.iter().find_map(MultiModalQuery::visual_dim)
    } else {
        None
    };
    let shape = EncoderShape {
        embedding_dim: config.embedding_dim,
        projection_size: config.projection_size,
        visual_dim,
    };
    let params = DualEncoderParams::init(vocab, shape, config.seed)?;
    train_from(config, params, instances, queries, passages, validation)
}

/// Trains starting from `params`.
pub fn train_from(
    config: &TrainConfig,
    mut params: DualEncoderParams,
    instances: &[TrainingInstance],
    queries: &[MultiModalQuery],
    passages: &Collection,
    validation: &Validation<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if instances.is_empty() {
        return Err(Error::InvalidArgument("no training instances".into()));
    }
    let cache =
        TokenCache::for_instances(&params, instances, queries, passages, config.use_visual)?;
    let val_passages = validation
        .collection
        .iter()
        .map(|id| passages.require(id))
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, DualEncoderParams)> = None;
    let mut step = 0;
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;
    let mut batch = Vec::with_capacity(config.batch_size);

    let mut checkpoint = |step: usize,
                          loss: f64,
                          params: &DualEncoderParams,
                          log: &mut Vec<MetricsRow>|
     -> Result<()> {
        let val_mrr = validate(
            params,
            validation.queries,
            &val_passages,
            passages,
            config.use_visual,
        )?;
        log::info!("step {step}: loss {loss:.4} val MRR@5 {val_mrr:.4}");
        log.push(MetricsRow {
            step,
            loss,
            val_mrr,
        });
        if best.as_ref().is_none_or(|(b, _, _)| val_mrr > *b) {
            best = Some((val_mrr, step, params.clone()));
        }
        Ok(())
    };

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| instances[i].clone()));
            let (loss, grad) =
                loss_and_grads(&params, &batch, config.strategy, &cache).map_err(|e| match e {
                    Error::NonFiniteLoss { .. } => Error::Diverged { step: step + 1 },
                    other => other,
                })?;
            params.weights.add_scaled(-config.learning_rate, &grad);
            step += 1;
            if !params.weights.all_finite() {
                return Err(Error::Diverged { step });
            }
            loss_sum += loss;
            loss_count += 1;
            if step % config.eval_every_steps == 0 {
                checkpoint(step, loss_sum / loss_count as f64, &params, &mut log)?;
                loss_sum = 0.0;
                loss_count = 0;
            }
        }
    }
    if loss_count > 0 {
        checkpoint(step, loss_sum / loss_count as f64, &params, &mut log)?;
    }
    let (best_val_mrr, best_step, params) = best.expect("at least one checkpoint");
    Ok(TrainOutcome {
        params,
        best_step,
        best_val_mrr,
        log,
        total_steps: step,
    })
}

/// Mean MRR@5 of dense retrieval over the validation collection.
fn validate(
    params: &DualEncoderParams,
    queries: &[MultiModalQuery],
    val_passages: &[&crate::corpus::Passage],
    passages: &Collection,
    use_visual: bool,
) -> Result<f64> {
    if queries.is_empty() || val_passages.is_empty() {
        return Ok(0.0);
    }
    let store = build_store(params, val_passages.iter().copied())?;
    let run = dense_run(params, &store, queries, use_visual, eval::DEFAULT_CUTOFF)?;
    Ok(eval::evaluate(&run, queries, passages, eval::DEFAULT_CUTOFF)?.mean_mrr_at_k)
}

/// Encodes every query and searches the store.
pub fn dense_run(
    params: &DualEncoderParams,
    store: &crate::dense::VectorStore,
    queries: &[MultiModalQuery],
    use_visual: bool,
    k: usize,
) -> Result<Vec<RankedList>> {
    queries
        .par_iter()
        .map(|q| {
            let v = params.encode_query(q, use_visual)?;
            store.search(&q.id, &v, k)
        })
        .collect()
}

pub fn save_instances(path: impl AsRef<Path>, instances: &[TrainingInstance]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for inst in instances {
        let line = serde_json::to_string(inst).expect("serializable");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_instances(path: impl AsRef<Path>) -> Result<Vec<TrainingInstance>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: TrainingInstance = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if inst.positive_id == inst.negative_id {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "positive and negative are the same passage".into(),
            });
        }
        out.push(inst);
    }
    Ok(out)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"VQRCHKPT";
const CHECKPOINT_VERSION: u32 = 1;

/// Trained parameters with the configuration and step that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: DualEncoderParams,
    pub config: TrainConfig,
    pub step: usize,
}

impl Checkpoint {
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        put_u32(w, CHECKPOINT_VERSION)?;
        put_str(
            w,
            &serde_json::to_string(&self.config).expect("serializable"),
        )?;
        put_u64(w, self.step as u64)?;
        self.params.write_to(w)
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = SnapshotReader::new(r);
        r.expect_header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let config: TrainConfig = serde_json::from_str(&r.string()?)
            .map_err(|e| Error::Snapshot(format!("bad config: {e}")))?;
        let step = r.len()?;
        let params = DualEncoderParams::read_from(&mut r)?;
        r.expect_eof()?;
        Ok(Checkpoint {
            params,
            config,
            step,
        })
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
