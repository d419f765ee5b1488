//! Max-margin training with negative sampling: analytic gradients through
//! cosine similarity and the encoder, plain SGD, early stopping on dev top-k
//! recall.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::encoder::{CharagramModel, CompiledBag, KbEncodeOptions};
use crate::error::{Error, Result};
use crate::kb::{Kb, PairDataset};
use crate::retrieval::{retrieve_topk_query, KbIndex};

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Negatives sampled per positive.
    pub negatives: usize,
    pub margin: f64,
    /// Epochs without strict dev-recall improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    /// Dev recall is measured at this cutoff.
    pub top_k: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            learning_rate: 0.1,
            negatives: 32,
            margin: 1.0,
            patience: 50,
            max_epochs: 200,
            top_k: 30,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(
                "learning_rate must be finite and >= 0".into(),
            ));
        }
        if self.negatives == 0 {
            return Err(Error::InvalidArgument("negatives must be positive".into()));
        }
        if !(self.margin > 0.0) || !self.margin.is_finite() {
            return Err(Error::InvalidArgument(
                "margin must be finite and positive".into(),
            ));
        }
        if self.patience == 0 {
            return Err(Error::InvalidArgument("patience must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidArgument("max_epochs must be positive".into()));
        }
        if self.top_k == 0 {
            return Err(Error::InvalidArgument("top_k must be positive".into()));
        }
        Ok(())
    }
}

/// Sparse parameter delta: touched embedding rows plus the shared bias.
#[derive(Debug, Clone, Default)]
pub struct SparseGrad {
    /// Row id -> d-dimensional gradient, keyed in ascending id order.
    pub rows: BTreeMap<u32, Vec<f64>>,
    pub bias: Vec<f64>,
}

impl SparseGrad {
    pub fn new(dim: usize) -> SparseGrad {
        SparseGrad {
            rows: BTreeMap::new(),
            bias: vec![0.0; dim],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty() && self.bias.iter().all(|&x| x == 0.0)
    }

    /// Applies `params -= lr * grad`, rows in ascending id order.
    pub fn apply(&self, model: &mut CharagramModel, lr: f64) {
        for (&id, g) in &self.rows {
            for (w, gi) in model.row_mut(id).iter_mut().zip(g) {
                *w -= lr * gi;
            }
        }
        for (b, gi) in model.bias_mut().iter_mut().zip(&self.bias) {
            *b -= lr * gi;
        }
    }
}

/// Loss and gradient of one training pair.
#[derive(Debug, Clone)]
pub struct PairLoss {
    pub loss: f64,
    pub grad: SparseGrad,
    /// Hinge terms that were active (contributed loss).
    pub active_negatives: usize,
}

/// One encoded string's forward state, kept for the backward pass.
struct Forward<'a> {
    bag: &'a CompiledBag,
    v: Vec<f64>,
    norm: f64,
}

fn forward<'a>(model: &CharagramModel, bag: &'a CompiledBag, role: &str) -> Result<Forward<'a>> {
    let v = model.encode_bag(bag);
    let norm = v.iter().map(|&x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroNorm(format!("embedding of {role}")));
    }
    Ok(Forward { bag, v, norm })
}

/// d cos(u, w) / d u = w / (|u||w|) - cos(u, w) * u / |u|^2, scaled by `factor`
/// and accumulated into `out`.
fn add_cosine_grad(out: &mut [f64], u: &Forward, w: &Forward, cos: f64, factor: f64) {
    let inv_cross = 1.0 / (u.norm * w.norm);
    let self_coef = cos / (u.norm * u.norm);
    for ((o, &wi), &ui) in out.iter_mut().zip(&w.v).zip(&u.v) {
        *o += factor * (wi * inv_cross - self_coef * ui);
    }
}

/// Backpropagates d loss / d v through tanh into the string's rows and the bias.
fn accumulate_string(grad: &mut SparseGrad, dim: usize, f: &Forward, dv: &[f64]) {
    // dz = dv * (1 - v^2); bias receives dz from every encoded string.
    let dz: Vec<f64> = dv
        .iter()
        .zip(&f.v)
        .map(|(&d, &v)| d * (1.0 - v * v))
        .collect();
    for (b, &d) in grad.bias.iter_mut().zip(&dz) {
        *b += d;
    }
    for &(id, count) in f.bag.entries() {
        let row = grad.rows.entry(id).or_insert_with(|| vec![0.0; dim]);
        for (r, &d) in row.iter_mut().zip(&dz) {
            *r += count * d;
        }
    }
}

/// Loss and analytic gradient for one pair given precompiled bags.
///
/// loss = sum over negatives of max(0, margin - cos(m, pos) + cos(m, neg));
/// inactive hinge terms contribute zero loss and zero gradient. A zero-norm
/// embedding anywhere makes cosine undefined; the caller skips such pairs.
pub fn pair_loss_bags(
    model: &CharagramModel,
    bag_m: &CompiledBag,
    bag_pos: &CompiledBag,
    bags_neg: &[CompiledBag],
    margin: f64,
) -> Result<PairLoss> {
    if bags_neg.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one negative is required".into(),
        ));
    }
    if !(margin > 0.0) || !margin.is_finite() {
        return Err(Error::InvalidArgument(
            "margin must be finite and positive".into(),
        ));
    }
    let dim = model.dim();
    let m = forward(model, bag_m, "the mention")?;
    let pos = forward(model, bag_pos, "the positive entity name")?;
    let negs: Vec<Forward> = bags_neg
        .iter()
        .map(|b| forward(model, b, "a negative entity name"))
        .collect::<Result<_>>()?;

    let dot = |a: &Forward, b: &Forward| -> f64 {
        a.v.iter().zip(&b.v).map(|(&x, &y)| x * y).sum::<f64>() / (a.norm * b.norm)
    };
    let cos_pos = dot(&m, &pos);
    let cos_negs: Vec<f64> = negs.iter().map(|n| dot(&m, n)).collect();

    let mut loss = 0.0;
    let mut active: Vec<usize> = Vec::new();
    for (i, &c) in cos_negs.iter().enumerate() {
        let h = margin - cos_pos + c;
        if h > 0.0 {
            loss += h;
            active.push(i);
        }
    }

    let mut grad = SparseGrad::new(dim);
    if !active.is_empty() {
        let n_active = active.len() as f64;

        let mut dv_m = vec![0.0; dim];
        add_cosine_grad(&mut dv_m, &m, &pos, cos_pos, -n_active);
        for &i in &active {
            add_cosine_grad(&mut dv_m, &m, &negs[i], cos_negs[i], 1.0);
        }
        accumulate_string(&mut grad, dim, &m, &dv_m);

        let mut dv_pos = vec![0.0; dim];
        add_cosine_grad(&mut dv_pos, &pos, &m, cos_pos, -n_active);
        accumulate_string(&mut grad, dim, &pos, &dv_pos);

        for &i in &active {
            let mut dv_neg = vec![0.0; dim];
            add_cosine_grad(&mut dv_neg, &negs[i], &m, cos_negs[i], 1.0);
            accumulate_string(&mut grad, dim, &negs[i], &dv_neg);
        }
    }

    Ok(PairLoss {
        loss,
        grad,
        active_negatives: active.len(),
    })
}

/// Loss and analytic gradient for one `(mention, positive, negatives)` pair.
pub fn pair_loss(
    model: &CharagramModel,
    mention: &str,
    positive: &str,
    negatives: &[&str],
    margin: f64,
) -> Result<PairLoss> {
    let bag_m = model.compile(mention)?;
    let bag_pos = model.compile(positive)?;
    let bags_neg: Vec<CompiledBag> = negatives
        .iter()
        .map(|s| model.compile(s))
        .collect::<Result<_>>()?;
    pair_loss_bags(model, &bag_m, &bag_pos, &bags_neg, margin)
}

/// Indices of `b` entities drawn uniformly without replacement from
/// `0..n_entities`, excluding `positive`.
fn sample_negative_indices<R: Rng>(
    n_entities: usize,
    positive: usize,
    b: usize,
    rng: &mut R,
) -> Vec<u32> {
    let mut chosen: Vec<u32> = Vec::with_capacity(b);
    if b * 4 >= n_entities {
        // Dense draw: partial Fisher-Yates over all eligible indices.
        let mut pool: Vec<u32> = (0..n_entities as u32)
            .filter(|&i| i as usize != positive)
            .collect();
        for i in 0..b {
            let j = rng.random_range(i..pool.len());
            pool.swap(i, j);
        }
        pool.truncate(b);
        return pool;
    }
    // Sparse draw: rejection sampling; the duplicate scan is over <= b entries.
    while chosen.len() < b {
        let i = rng.random_range(0..n_entities) as u32;
        if i as usize == positive || chosen.contains(&i) {
            continue;
        }
        chosen.push(i);
    }
    chosen
}

/// `b` canonical entity names drawn uniformly without replacement from the KB,
/// excluding the positive entity. Deterministic for a fixed rng state.
pub fn sample_negatives<R: Rng>(
    kb: &Kb,
    positive_id: &str,
    b: usize,
    rng: &mut R,
) -> Result<Vec<String>> {
    if b == 0 {
        return Err(Error::InvalidArgument(
            "negative count must be positive".into(),
        ));
    }
    if kb.len() < b + 1 {
        return Err(Error::InvalidArgument(format!(
            "KB has {} entities; need at least {} to sample {b} negatives",
            kb.len(),
            b + 1
        )));
    }
    let positive = kb.index_of(positive_id).ok_or_else(|| {
        Error::InvalidArgument(format!("unknown positive entity id {positive_id:?}"))
    })?;
    Ok(sample_negative_indices(kb.len(), positive, b, rng)
        .into_iter()
        .map(|i| kb.entity(i as usize).canonical_name.clone())
        .collect())
}

/// Why training stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

/// One epoch's bookkeeping row.
#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    /// 1-based epoch index.
    pub epoch: usize,
    /// Mean pair loss over the pairs scored this epoch.
    pub mean_loss: f64,
    /// Dev top-k recall after this epoch's updates.
    pub dev_recall: f64,
    /// Best dev recall seen up to and including this epoch.
    pub best_so_far: f64,
}

/// Full training record; the best epoch's parameters end up in the model.
#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// 1-based index of the epoch whose parameters were installed.
    pub best_epoch: usize,
    pub best_dev_recall: f64,
    pub stop_reason: StopReason,
    /// Pairs skipped because an embedding was degenerate.
    pub skipped_pairs: usize,
}

/// Dev top-k recall of the current parameters, scored with the same
/// alias-aware and pivot-aware retrieval used at test time. Pairs whose
/// mention embedding is degenerate count as misses.
fn dev_recall(
    model: &CharagramModel,
    kb: &Kb,
    dev_bags: &[(CompiledBag, usize)],
    top_k: usize,
) -> Result<f64> {
    let index = KbIndex::build(model, kb, KbEncodeOptions::default())?;
    let mut hits = 0usize;
    for (bag, gold_idx) in dev_bags {
        let v = model.encode_bag(bag);
        let norm = v.iter().map(|&x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let query: Vec<f32> = v.iter().map(|&x| (x / norm) as f32).collect();
        let top = retrieve_topk_query(&index, &query, top_k)?;
        if top.iter().any(|&(e, _)| e as usize == *gold_idx) {
            hits += 1;
        }
    }
    Ok(hits as f64 / dev_bags.len() as f64)
}

/// Trains the model in place with plain SGD and installs the parameters of
/// the best dev-recall epoch.
///
/// Per epoch: shuffle the pairs, accumulate each minibatch's pair-loss
/// gradients into one delta, apply it, then measure dev recall. Stops when
/// recall has not strictly improved for `patience` epochs or at `max_epochs`.
/// All randomness derives from `cfg.seed`, so a rerun is bitwise identical.
pub fn train(
    model: &mut CharagramModel,
    train: &PairDataset,
    dev: &PairDataset,
    kb: &Kb,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training dataset is empty".into()));
    }
    if dev.is_empty() {
        return Err(Error::InvalidArgument("dev dataset is empty".into()));
    }
    if kb.len() < cfg.negatives + 1 {
        return Err(Error::InvalidArgument(format!(
            "KB has {} entities; need at least {} to sample {} negatives",
            kb.len(),
            cfg.negatives + 1,
            cfg.negatives
        )));
    }

    // Resolve and precompile everything the SGD loop touches. Pair sources and
    // canonical names are reused every epoch; compiling once avoids re-running
    // n-gram extraction in the hot path.
    let resolve = |pairs: &PairDataset| -> Result<Vec<(CompiledBag, usize)>> {
        pairs
            .pairs
            .iter()
            .map(|p| {
                let idx = kb.index_of(&p.entity_id).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "pair references unknown entity id {:?}",
                        p.entity_id
                    ))
                })?;
                Ok((model.compile(&p.source)?, idx))
            })
            .collect()
    };
    let train_bags = resolve(train)?;
    let dev_bags = resolve(dev)?;
    let canonical_bags: Vec<CompiledBag> = kb
        .entities()
        .iter()
        .map(|e| model.compile(&e.canonical_name))
        .collect::<Result<_>>()?;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut negatives_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    negatives_rng.set_stream(2);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs: Vec<EpochStats> = Vec::new();
    let mut best_recall = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = model.snapshot();
    let mut epochs_since_improvement = 0usize;
    let mut skipped_pairs = 0usize;
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut scored = 0usize;

        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut batch_grad = SparseGrad::new(model.dim());
            let mut batch_loss = 0.0;
            for &pair_idx in batch {
                let (bag_m, gold_idx) = &train_bags[pair_idx];
                let neg_idx =
                    sample_negative_indices(kb.len(), *gold_idx, cfg.negatives, &mut negatives_rng);
                let bags_neg: Vec<CompiledBag> = neg_idx
                    .iter()
                    .map(|&i| canonical_bags[i as usize].clone())
                    .collect();
                match pair_loss_bags(
                    model,
                    bag_m,
                    &canonical_bags[*gold_idx],
                    &bags_neg,
                    cfg.margin,
                ) {
                    Ok(pl) => {
                        batch_loss += pl.loss;
                        scored += 1;
                        merge_grad(&mut batch_grad, pl.grad);
                    }
                    Err(Error::ZeroNorm(what)) => {
                        log::warn!("skipping pair {pair_idx}: {what} has zero norm");
                        skipped_pairs += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss at epoch {epoch}, batch {}",
                    batch_no + 1
                )));
            }
            batch_grad.apply(model, cfg.learning_rate);
            epoch_loss += batch_loss;
        }

        if scored == 0 {
            return Err(Error::InvalidArgument(format!(
                "every pair was skipped as degenerate in epoch {epoch}"
            )));
        }
        model
            .check_finite()
            .map_err(|e| Error::NonFinite(format!("{e} after epoch {epoch}")))?;

        let recall = dev_recall(model, kb, &dev_bags, cfg.top_k)?;
        if recall > best_recall {
            best_recall = recall;
            best_epoch = epoch;
            best_params = model.snapshot();
            epochs_since_improvement = 0;
        } else {
            epochs_since_improvement += 1;
        }
        epochs.push(EpochStats {
            epoch,
            mean_loss: epoch_loss / scored as f64,
            dev_recall: recall,
            best_so_far: best_recall,
        });
        log::info!(
            "epoch {epoch}: mean loss {:.6}, dev recall {:.4} (best {:.4} at epoch {best_epoch})",
            epoch_loss / scored as f64,
            recall,
            best_recall
        );

        if epochs_since_improvement >= cfg.patience {
            stop_reason = StopReason::Patience;
            break;
        }
    }

    model.restore(&best_params);
    Ok(TrainReport {
        epochs,
        best_epoch,
        best_dev_recall: best_recall,
        stop_reason,
        skipped_pairs,
    })
}

fn merge_grad(into: &mut SparseGrad, from: SparseGrad) {
    for (id, g) in from.rows {
        match into.rows.entry(id) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(g);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                for (a, b) in e.get_mut().iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
    }
    for (a, b) in into.bias.iter_mut().zip(from.bias) {
        *a += b;
    }
}
