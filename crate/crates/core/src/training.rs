//! Full-softmax cross-entropy training with Adam, validation-based early
//! stopping, and grid search.

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{SplitDataset, TrainWindow};
use crate::encoders::{DropoutCtx, EncoderConfig, LAYER_NORM_EPS};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricReport, DEFAULT_K};
use crate::heads::MI_POSITIONS;
use crate::model::{ModelConfig, SeqRecModel};
use crate::numcore::{Gradients, Graph, ParamStore, Real};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Windows per unit of parallel work. Fixed so that the floating-point
/// summation order, and therefore every result, does not depend on the
/// number of threads.
pub const CHUNK_WINDOWS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    /// Epochs without a validation NDCG improvement before stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Cutoff of the validation metric used for model selection.
    #[serde(default = "default_k")]
    pub eval_k: usize,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    64
}
fn default_epochs() -> usize {
    300
}
fn default_patience() -> usize {
    10
}
pub fn default_seed() -> u64 {
    42
}
fn default_k() -> usize {
    DEFAULT_K
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            max_epochs: default_epochs(),
            patience: default_patience(),
            seed: default_seed(),
            eval_k: default_k(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be non-negative, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.eval_k == 0 {
            return Err(Error::Config("batch_size, max_epochs and eval_k must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct AdamState<F> {
    pub m: Gradients<F>,
    pub v: Gradients<F>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<F: Real> AdamState<F> {
    pub fn new(store: &ParamStore<F>) -> Self {
        AdamState {
            m: Gradients::zeros_like(store),
            v: Gradients::zeros_like(store),
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    /// Apply one update. Non-finite gradients abort before anything changes.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &Gradients<F>, lr: f64) -> Result<()> {
        if let Some((id, i)) = grads.first_non_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of {}[{i}] is {:?} at step {}",
                store.name(id),
                grads.get(id)[i],
                self.step + 1
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (F::of(self.beta1), F::of(self.beta2));
        let c1 = F::of(1.0 - self.beta1.powi(t));
        let c2 = F::of(1.0 - self.beta2.powi(t));
        let (lr, eps) = (F::of(lr), F::of(self.eps));
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let g = grads.get(id);
            let m = self.m.get_mut(id);
            let v = self.v.get_mut(id);
            let p = store.value_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (F::one() - b1) * g[i];
                v[i] = b2 * v[i] + (F::one() - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] = p[i] - lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Mean cross-entropy over every target position of `windows`, with its
/// gradient. `dropout_seed` switches the model to training mode; window `j`
/// then draws its masks from stream `j` of that seed.
pub fn loss_batch<F: Real>(
    model: &SeqRecModel<F>,
    windows: &[&TrainWindow],
    dropout_seed: Option<u64>,
) -> Result<(f64, Gradients<F>)> {
    let total: usize = windows.iter().map(|w| w.num_targets()).sum();
    if total == 0 {
        return Err(Error::Shape("batch has no target positions".into()));
    }
    let parts = windows
        .par_chunks(CHUNK_WINDOWS)
        .enumerate()
        .map(|(c, chunk)| -> Result<(f64, Gradients<F>)> {
            let mut grads = Gradients::zeros_like(&model.store);
            let mut loss = 0.0;
            for (j, w) in chunk.iter().enumerate() {
                let mut rng = dropout_seed.map(|s| {
                    let mut r = ChaCha8Rng::seed_from_u64(s);
                    r.set_stream((c * CHUNK_WINDOWS + j) as u64);
                    r
                });
                let mut drop = match rng.as_mut() {
                    Some(r) => DropoutCtx::train(r),
                    None => DropoutCtx::eval(),
                };
                let mut g = Graph::new();
                let ce = model.window_loss(&mut g, w.inputs(), w.targets(), &mut drop)?;
                let weight = w.num_targets() as f64 / total as f64;
                let l = g.scale(ce, F::of(weight));
                g.backward(l)?;
                loss += g.value(l).item().to_f64().unwrap_or(f64::NAN);
                grads.accumulate(&g);
            }
            Ok((loss, grads))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut iter = parts.into_iter();
    let (mut loss, mut grads) = iter.next().unwrap();
    for (l, g) in iter {
        loss += l;
        grads.add_assign(&g);
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid: MetricReport,
    pub stopped_early: bool,
}

/// Train in place. On return the model holds the parameters of the epoch
/// with the best validation NDCG (earliest on ties).
pub fn train<F: Real>(model: &mut SeqRecModel<F>, split: &SplitDataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::Config("no training windows".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam = AdamState::new(&model.store);
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut epochs = Vec::new();
    let mut best: Option<(usize, MetricReport, ParamStore<F>)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        let mut positions = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let windows: Vec<&TrainWindow> = batch.iter().map(|&i| &split.train[i]).collect();
            let n: usize = windows.iter().map(|w| w.num_targets()).sum();
            let seed = rng.next_u64();
            let (loss, grads) = loss_batch(model, &windows, Some(seed))?;
            adam.step(&mut model.store, &grads, cfg.learning_rate)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}: {e}")))?;
            weighted += loss * n as f64;
            positions += n;
        }
        let train_loss = weighted / positions as f64;
        let (_, valid) = evaluate(model, &split.valid, cfg.eval_k)?;
        log::info!(
            "epoch {epoch}: train loss {train_loss:.6}, valid NDCG@{} {:.6}",
            cfg.eval_k,
            valid.ndcg()
        );
        epochs.push(EpochRecord { epoch, train_loss, valid });
        let improved = best.as_ref().is_none_or(|(_, b, _)| valid.ndcg() > b.ndcg());
        if improved {
            best = Some((epoch, valid, model.store.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    let (best_epoch, best_valid, store) = best.expect("at least one epoch ran");
    model.store = store;
    Ok(TrainReport { epochs, best_epoch, best_valid, stopped_early })
}

/// Axes of a hyperparameter grid. An empty `dropout` axis keeps the
/// encoder's configured rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub learning_rate: Vec<f64>,
    pub batch_size: Vec<usize>,
    #[serde(default)]
    pub dropout: Vec<f64>,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_empty() || self.batch_size.is_empty() {
            return Err(Error::Config("grid needs at least one learning_rate and one batch_size".into()));
        }
        Ok(())
    }

    /// Every grid point, learning rate varying slowest.
    pub fn points(&self) -> Vec<GridPoint> {
        let drops: Vec<Option<f64>> =
            if self.dropout.is_empty() { vec![None] } else { self.dropout.iter().copied().map(Some).collect() };
        let mut out = Vec::new();
        for &learning_rate in &self.learning_rate {
            for &batch_size in &self.batch_size {
                for &dropout in &drops {
                    out.push(GridPoint { learning_rate, batch_size, dropout });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout: Option<f64>,
}

impl GridPoint {
    pub fn apply(&self, model: &ModelConfig, train: &TrainConfig) -> (ModelConfig, TrainConfig) {
        let mut m = model.clone();
        if let Some(p) = self.dropout {
            match &mut m.encoder {
                EncoderConfig::Gru(c) => c.dropout = p,
                EncoderConfig::Attention(c) => c.hidden_dropout = p,
            }
        }
        let t = TrainConfig { learning_rate: self.learning_rate, batch_size: self.batch_size, ..train.clone() };
        (m, t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub point: GridPoint,
    pub best_epoch: usize,
    pub valid_ndcg: f64,
    /// Test metrics, present only for the selected point.
    pub test: Option<MetricReport>,
}

pub struct GridOutcome<F> {
    pub rows: Vec<GridRow>,
    pub selected: usize,
    pub model: SeqRecModel<F>,
    pub report: TrainReport,
    pub test: MetricReport,
}

/// Train every grid point from the same seed, select by validation NDCG
/// (earliest point on ties) and evaluate only the winner on test.
pub fn grid_search<F: Real>(
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    grid: &GridSpec,
    split: &SplitDataset,
    item_count: usize,
) -> Result<GridOutcome<F>> {
    grid.validate()?;
    let mut rows = Vec::new();
    let mut best: Option<(usize, SeqRecModel<F>, TrainReport)> = None;
    for (i, point) in grid.points().into_iter().enumerate() {
        let (mcfg, tcfg) = point.apply(base, train_cfg);
        let mut model = SeqRecModel::<F>::new(mcfg, item_count, tcfg.seed)?;
        let report = train(&mut model, split, &tcfg)?;
        log::info!(
            "grid point {i}: lr {} batch {} dropout {:?} -> valid NDCG {:.6}",
            point.learning_rate,
            point.batch_size,
            point.dropout,
            report.best_valid.ndcg()
        );
        rows.push(GridRow { point, best_epoch: report.best_epoch, valid_ndcg: report.best_valid.ndcg(), test: None });
        if best.as_ref().is_none_or(|(_, _, b)| report.best_valid.ndcg() > b.best_valid.ndcg()) {
            best = Some((i, model, report));
        }
    }
    let (selected, model, report) = best.expect("grid has at least one point");
    let (_, test) = evaluate(&model, &split.test, train_cfg.eval_k)?;
    rows[selected].test = Some(test);
    Ok(GridOutcome { rows, selected, model, report, test })
}

/// Modelling choices that are not visible in the config but affect results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignFlags {
    pub layer_norm_eps: f64,
    pub norm_placement: String,
    pub gru_layers: usize,
    pub mi_positions: usize,
    pub mi_reducer_output: String,
    pub mi_short_window: String,
    pub mi_feeds_local_embeddings: bool,
    pub rerank_topk_over_all_items: bool,
    pub topk_tie_break: String,
    pub rank_tie_break: String,
    pub dedup_renormalized: bool,
    pub loss: String,
    pub optimizer: String,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub init_std: f64,
    pub chunk_windows: usize,
}

impl DesignFlags {
    pub fn for_model(model: &ModelConfig) -> Self {
        DesignFlags {
            layer_norm_eps: LAYER_NORM_EPS,
            norm_placement: "post".into(),
            gru_layers: 1,
            mi_positions: MI_POSITIONS,
            mi_reducer_output: "hidden_size".into(),
            mi_short_window: "zero_states".into(),
            mi_feeds_local_embeddings: true,
            rerank_topk_over_all_items: !model.head.exclude_context_before_topk,
            topk_tie_break: "ascending_id".into(),
            rank_tie_break: "ascending_id".into(),
            dedup_renormalized: false,
            loss: "full_softmax_cross_entropy_every_position".into(),
            optimizer: "adam".into(),
            adam_betas: (ADAM_BETA1, ADAM_BETA2),
            adam_eps: ADAM_EPS,
            init_std: model.init_std,
            chunk_windows: CHUNK_WINDOWS,
        }
    }
}
