//! Multi-task training: supervised log loss plus the weighted
//! self-supervised terms, optimized jointly with Adam under a plateau
//! learning-rate schedule and early stopping on validation AUC.

mod schedule;

use std::ops::Range;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use schedule::{early_stop, lr_schedule, EarlyStopper, LrSchedule, PlateauScheduler, StopDecision};

use crate::augment::{batch_views, AugmentError, MaskSpec};
use crate::data::EncodedDataset;
use crate::embedding::{EmbeddingError, EmbeddingTable, InitScheme};
use crate::fi_encoder::{EncoderConfig, EncoderError, SslModule};
use crate::metrics::{evaluate, EvalResult, MetricsError};
use crate::models::{CtrModel, ModelError, Predictor, PredictorConfig};
use crate::numcore::{adam_step, AdamConfig, AdamState, Graph, NodeId, NumError, Tensor};
use crate::seed;
use crate::ssl_loss::{contrastive_loss, feature_alignment, field_uniformity, BatchFieldIndex, SslError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("{0}")]
    Data(String),
    #[error("diverged at epoch {epoch}, batch {batch}: {source}")]
    Divergence {
        epoch: usize,
        batch: usize,
        source: NumError,
    },
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Ssl(#[from] SslError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Weight of the contrastive loss.
    pub alpha: f64,
    /// Weight of feature alignment plus field uniformity.
    pub beta: f64,
    pub mask: MaskSpec,
    pub encoder: EncoderConfig,
    pub predictor: PredictorConfig,
    pub embedding_dim: usize,
    pub init: InitScheme,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub early_stop_patience: usize,
    pub seed: u64,
    /// Global gradient-norm clip; off when absent.
    pub clip_norm: Option<f64>,
    /// Divide alignment and uniformity sums by their pair counts.
    pub ssl_normalize: bool,
    /// Compute alignment and uniformity over the whole vocabulary.
    pub ssl_full_vocab: bool,
    /// Seed of the masks drawn by [`epoch_losses`].
    pub eval_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            learning_rate: 0.001,
            max_epochs: 100,
            alpha: 1.0,
            beta: 0.01,
            mask: MaskSpec::default(),
            encoder: EncoderConfig::default(),
            predictor: PredictorConfig::default(),
            embedding_dim: 64,
            init: InitScheme::default(),
            plateau_patience: 4,
            plateau_factor: 10.0,
            early_stop_patience: 8,
            seed: 2022,
            clip_norm: None,
            ssl_normalize: true,
            ssl_full_vocab: false,
            eval_seed: 97,
        }
    }
}

impl TrainConfig {
    /// Every violated constraint, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                p.push(msg);
            }
        };
        need(self.batch_size >= 1, "batch_size must be >= 1".into());
        need(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            format!("learning_rate must be positive, got {}", self.learning_rate),
        );
        need(self.max_epochs >= 1, "max_epochs must be >= 1".into());
        need(
            self.alpha >= 0.0 && self.alpha.is_finite(),
            format!("alpha must be finite and >= 0, got {}", self.alpha),
        );
        need(
            self.beta >= 0.0 && self.beta.is_finite(),
            format!("beta must be finite and >= 0, got {}", self.beta),
        );
        need(self.embedding_dim >= 1, "embedding_dim must be >= 1".into());
        need(self.plateau_patience >= 1, "plateau_patience must be >= 1".into());
        need(
            self.plateau_factor > 1.0 && self.plateau_factor.is_finite(),
            format!("plateau_factor must exceed 1, got {}", self.plateau_factor),
        );
        need(self.early_stop_patience >= 1, "early_stop_patience must be >= 1".into());
        if let Some(c) = self.clip_norm {
            need(c > 0.0, format!("clip_norm must be positive, got {c}"));
        }
        if let InitScheme::Normal { std } = self.init {
            need(std > 0.0 && std.is_finite(), format!("init std must be positive, got {std}"));
        }
        if let Err(e) = self.mask.validate() {
            p.push(e.to_string());
        }
        if let Err(e) = self.encoder.validate(self.embedding_dim) {
            p.push(e.to_string());
        }
        if let Err(e) = self.predictor.validate() {
            p.push(e.to_string());
        }
        p
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(TrainError::Config(p))
        }
    }

    /// Both self-supervised weights are zero.
    pub fn ssl_frozen(&self) -> bool {
        self.alpha == 0.0 && self.beta == 0.0
    }
}

/// A loss value, or a marker for a term that carries zero weight and is
/// therefore neither computed nor trained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LossValue {
    Value(f64),
    Marker(Frozen),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frozen {
    Frozen,
}

impl LossValue {
    pub fn value(self) -> Option<f64> {
        match self {
            LossValue::Value(v) => Some(v),
            LossValue::Marker(_) => None,
        }
    }

    fn from_option(v: Option<f64>) -> Self {
        v.map_or(LossValue::Marker(Frozen::Frozen), LossValue::Value)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_ctr: f64,
    pub l_cl: LossValue,
    pub l_a: LossValue,
    pub l_u: LossValue,
    pub val_auc: f64,
    pub val_logloss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub ssl_frozen: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrEvent {
    pub epoch: usize,
    pub from: f64,
    pub to: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub lr_reductions: Vec<LrEvent>,
    pub stopped_epoch: usize,
    pub early_stopped: bool,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub test: Option<EvalResult>,
    /// Where the restored best parameters were written, if anywhere.
    pub checkpoint: Option<String>,
}

impl TrainReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Epoch-mean loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossMeans {
    pub l_ctr: f64,
    pub l_cl: f64,
    pub l_a: f64,
    pub l_u: f64,
}

/// Everything optimized during training. Only `model` is needed for
/// inference.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: CtrModel,
    pub ssl: SslModule,
}

impl TrainState {
    pub fn init(config: &TrainConfig, field_ranges: Vec<Range<usize>>) -> Result<Self, TrainError> {
        config.validate()?;
        let d = config.embedding_dim;
        let f = field_ranges.len();
        let table = EmbeddingTable::init(
            field_ranges,
            d,
            config.init,
            seed::derive_seed(config.seed, "embedding", 0, 0),
        )?;
        let m = table.num_features();
        let predictor = Predictor::init(
            config.predictor.clone(),
            m,
            f,
            d,
            seed::derive_seed(config.seed, "predictor", 0, 0),
        )?;
        let ssl = SslModule::init(config.encoder.clone(), f, d, seed::derive_seed(config.seed, "encoder", 0, 0))?;
        Ok(Self {
            model: CtrModel { table, predictor },
            ssl,
        })
    }

    fn base_params(&self) -> Vec<&Tensor> {
        let mut v = vec![self.model.table.weight()];
        v.extend(self.model.predictor.params());
        v
    }

    fn base_params_mut(&mut self) -> Vec<&mut Tensor> {
        let model = &mut self.model;
        let mut v = vec![model.table.weight_mut()];
        v.extend(model.predictor.params_mut());
        v
    }
}

struct BatchGraph {
    g: Graph,
    base: Vec<NodeId>,
    ssl: Vec<NodeId>,
    total: NodeId,
    l_ctr: NodeId,
    l_cl: Option<NodeId>,
    l_a: Option<NodeId>,
    l_u: Option<NodeId>,
}

struct BatchSpec<'a> {
    ids: &'a [usize],
    train: bool,
    mask_seed: u64,
    epoch: u64,
    batch_no: u64,
    with_cl: bool,
    with_au: bool,
}

fn build_batch(
    state: &TrainState,
    config: &TrainConfig,
    ds: &EncodedDataset,
    spec: &BatchSpec,
) -> Result<BatchGraph, TrainError> {
    let batch: Vec<&[u32]> = spec.ids.iter().map(|&i| ds.instance(i)).collect();
    let labels: Vec<f64> = spec.ids.iter().map(|&i| f64::from(ds.label(i))).collect();
    let mut g = Graph::new();
    let table = g.param(state.model.table.weight().clone());
    let bound = state.model.predictor.bind(&mut g);
    let mut base = vec![table, bound.bias, bound.linear];
    base.extend(bound.field_pair);
    for d in &bound.dnn {
        base.extend([d.weight, d.bias]);
    }
    let e = state.model.table.lookup_batch(&mut g, table, &batch)?;
    let mut drop_rng = seed::stream(config.seed, "dropout", spec.epoch, spec.batch_no);
    let z = bound.logits(&mut g, &config.predictor, e, &batch, spec.train, &mut drop_rng)?;
    let l_ctr = g.bce_with_logits(z, labels)?;
    let mut total = l_ctr;

    let mut ssl = Vec::new();
    let mut l_cl = None;
    if spec.with_cl {
        let first = g.len();
        let enc = state.ssl.bind(&mut g);
        ssl = g.params().iter().copied().filter(|p| p.index() >= first).collect();
        let ids: Vec<u64> = spec.ids.iter().map(|&i| i as u64).collect();
        let (v1, v2) = batch_views(&mut g, e, &config.mask, spec.mask_seed, spec.epoch, &ids)?;
        let h1 = enc.represent(&mut g, v1, 0)?;
        let h2 = enc.represent(&mut g, v2, 1)?;
        let cl = contrastive_loss(&mut g, h1, h2)?;
        let weighted = g.scale(cl, config.alpha)?;
        total = g.add(total, weighted)?;
        l_cl = Some(cl);
    }
    let (mut l_a, mut l_u) = (None, None);
    if spec.with_au {
        let index = if config.ssl_full_vocab {
            BatchFieldIndex::full(state.model.table.field_ranges())?
        } else {
            BatchFieldIndex::from_batch(&batch, ds.num_fields())
        };
        let a = feature_alignment(&mut g, table, &index, config.ssl_normalize)?;
        let u = field_uniformity(&mut g, table, &index, config.ssl_normalize)?;
        let au = g.add(a, u)?;
        let weighted = g.scale(au, config.beta)?;
        total = g.add(total, weighted)?;
        l_a = Some(a);
        l_u = Some(u);
    }
    Ok(BatchGraph {
        g,
        base,
        ssl,
        total,
        l_ctr,
        l_cl,
        l_a,
        l_u,
    })
}

fn scalar(g: &Graph, n: Option<NodeId>) -> Option<f64> {
    n.map(|id| g.value(id).data()[0])
}

fn clip(grads: &mut [Tensor], max_norm: f64) {
    let norm = grads.iter().flat_map(|t| t.data()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for t in grads {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

#[derive(Default)]
struct Accum {
    n: f64,
    ctr: f64,
    cl: f64,
    a: f64,
    u: f64,
}

impl Accum {
    fn add(&mut self, w: f64, b: &BatchGraph) {
        self.n += w;
        self.ctr += w * b.g.value(b.l_ctr).data()[0];
        self.cl += w * scalar(&b.g, b.l_cl).unwrap_or(0.0);
        self.a += w * scalar(&b.g, b.l_a).unwrap_or(0.0);
        self.u += w * scalar(&b.g, b.l_u).unwrap_or(0.0);
    }

    fn means(&self) -> LossMeans {
        let n = self.n.max(1.0);
        LossMeans {
            l_ctr: self.ctr / n,
            l_cl: self.cl / n,
            l_a: self.a / n,
            l_u: self.u / n,
        }
    }
}

/// Stateful trainer exposing single epochs, for callers that need to
/// observe the parameters between epochs.
pub struct Trainer {
    pub config: TrainConfig,
    pub state: TrainState,
    base_adam: AdamState,
    ssl_adam: AdamState,
    adam: AdamConfig,
    lr: f64,
    epoch: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, field_ranges: Vec<Range<usize>>) -> Result<Self, TrainError> {
        let state = TrainState::init(&config, field_ranges)?;
        let base_adam = AdamState::new(state.base_params());
        let ssl_adam = AdamState::new(state.ssl.params());
        let lr = config.learning_rate;
        Ok(Self {
            config,
            state,
            base_adam,
            ssl_adam,
            adam: AdamConfig::default(),
            lr,
            epoch: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One shuffled pass over `train` with an Adam step per batch. Returns
    /// the batch-size-weighted mean of each computed loss term.
    pub fn run_epoch(&mut self, train: &EncodedDataset) -> Result<LossMeans, TrainError> {
        self.epoch += 1;
        let epoch = self.epoch as u64;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seed::stream(self.config.seed, "shuffle", epoch, 0));
        let with_cl = self.config.alpha > 0.0;
        let with_au = self.config.beta > 0.0;
        let mut acc = Accum::default();
        for (batch_no, ids) in order.chunks(self.config.batch_size).enumerate() {
            let spec = BatchSpec {
                ids,
                train: true,
                mask_seed: self.config.seed,
                epoch,
                batch_no: batch_no as u64,
                with_cl,
                with_au,
            };
            let diverged = |source| TrainError::Divergence {
                epoch: self.epoch,
                batch: batch_no,
                source,
            };
            let bg = match build_batch(&self.state, &self.config, train, &spec) {
                Err(TrainError::Num(e @ NumError::NonFinite { .. })) => return Err(diverged(e)),
                other => other?,
            };
            let total = bg.g.value(bg.total).data()[0];
            if !total.is_finite() {
                return Err(diverged(NumError::NonFinite { op: "loss" }));
            }
            acc.add(ids.len() as f64, &bg);
            let mut grads = bg.g.backward(bg.total)?;
            let mut take = |ids: &[NodeId]| -> Vec<Tensor> {
                ids.iter().map(|&p| grads.remove(p).expect("every parameter has an adjoint")).collect()
            };
            let mut base_grads = take(&bg.base);
            let mut ssl_grads = take(&bg.ssl);
            if let Some(c) = self.config.clip_norm {
                let mut all: Vec<Tensor> = base_grads.drain(..).chain(ssl_grads.drain(..)).collect();
                clip(&mut all, c);
                ssl_grads = all.split_off(bg.base.len());
                base_grads = all;
            }
            let refs: Vec<&Tensor> = base_grads.iter().collect();
            adam_step(&mut self.state.base_params_mut(), &refs, &mut self.base_adam, self.lr, &self.adam)?;
            if with_cl {
                let refs: Vec<&Tensor> = ssl_grads.iter().collect();
                adam_step(&mut self.state.ssl.params_mut(), &refs, &mut self.ssl_adam, self.lr, &self.adam)?;
            }
        }
        Ok(acc.means())
    }
}

/// Evaluation-mode means of all four loss terms over `ds`: dropout off and
/// masks drawn from the fixed evaluation seed.
pub fn epoch_losses(state: &TrainState, ds: &EncodedDataset, config: &TrainConfig) -> Result<LossMeans, TrainError> {
    let mut acc = Accum::default();
    let order: Vec<usize> = (0..ds.len()).collect();
    for (batch_no, ids) in order.chunks(config.batch_size).enumerate() {
        let spec = BatchSpec {
            ids,
            train: false,
            mask_seed: config.eval_seed,
            epoch: 0,
            batch_no: batch_no as u64,
            with_cl: true,
            with_au: true,
        };
        let bg = build_batch(state, config, ds, &spec)?;
        acc.add(ids.len() as f64, &bg);
    }
    Ok(acc.means())
}

/// The training objective for one batch as in the first step of `epoch`:
/// a graph whose parameters are the base tensors followed by the SSL
/// tensors, and its scalar loss node.
pub fn batch_objective(
    state: &TrainState,
    config: &TrainConfig,
    ds: &EncodedDataset,
    ids: &[usize],
    epoch: u64,
) -> Result<(Graph, NodeId), TrainError> {
    let spec = BatchSpec {
        ids,
        train: true,
        mask_seed: config.seed,
        epoch,
        batch_no: 0,
        with_cl: config.alpha > 0.0,
        with_au: config.beta > 0.0,
    };
    let bg = build_batch(state, config, ds, &spec)?;
    Ok((bg.g, bg.total))
}

fn validation_metrics(model: &CtrModel, val: &EncodedDataset) -> Result<(f64, f64), TrainError> {
    let r = evaluate(model, val)?;
    let auc = r
        .auc
        .ok_or_else(|| TrainError::Data("validation labels contain a single class".into()))?;
    Ok((auc, r.logloss))
}

/// Trains to early stop or `max_epochs`, restores the parameters of the
/// best validation epoch, and scores `test` when given.
pub fn train(
    config: &TrainConfig,
    field_ranges: Vec<Range<usize>>,
    train: &EncodedDataset,
    val: &EncodedDataset,
    test: Option<&EncodedDataset>,
) -> Result<(TrainReport, TrainState), TrainError> {
    train_with(config, field_ranges, train, val, test, |_, _| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    config: &TrainConfig,
    field_ranges: Vec<Range<usize>>,
    train: &EncodedDataset,
    val: &EncodedDataset,
    test: Option<&EncodedDataset>,
    mut on_epoch: impl FnMut(&EpochRecord, &TrainState),
) -> Result<(TrainReport, TrainState), TrainError> {
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::Data("training and validation sets must be nonempty".into()));
    }
    let f = field_ranges.len();
    for (name, ds) in [("train", Some(train)), ("validation", Some(val)), ("test", test)] {
        if let Some(ds) = ds {
            if ds.num_fields() != f {
                return Err(TrainError::Data(format!(
                    "{name} set has {} fields, vocabulary has {f}",
                    ds.num_fields()
                )));
            }
        }
    }
    let mut trainer = Trainer::new(config.clone(), field_ranges)?;
    let mut plateau = PlateauScheduler::new(config.plateau_patience, config.plateau_factor);
    let mut stopper = EarlyStopper::new(config.early_stop_patience);
    let mut best = trainer.state.clone();
    let mut records = Vec::new();
    let mut reductions = Vec::new();
    let mut early_stopped = false;
    let frozen = |on: bool, v: f64| LossValue::from_option(on.then_some(v));
    for _ in 0..config.max_epochs {
        let lr = trainer.lr();
        let losses = trainer.run_epoch(train)?;
        let (val_auc, val_logloss) = validation_metrics(&trainer.state.model, val)?;
        let epoch = trainer.epoch();
        let record = EpochRecord {
            epoch,
            l_ctr: losses.l_ctr,
            l_cl: frozen(config.alpha > 0.0, losses.l_cl),
            l_a: frozen(config.beta > 0.0, losses.l_a),
            l_u: frozen(config.beta > 0.0, losses.l_u),
            val_auc,
            val_logloss,
            lr,
            ssl_frozen: config.ssl_frozen(),
        };
        on_epoch(&record, &trainer.state);
        records.push(record);
        let stop = stopper.observe(val_auc);
        if stopper.improved_last() {
            best = trainer.state.clone();
        }
        if let Some(next) = plateau.observe(val_auc, lr) {
            trainer.set_lr(next);
            reductions.push(LrEvent {
                epoch,
                from: lr,
                to: next,
            });
        }
        if stop {
            early_stopped = true;
            break;
        }
    }
    let test = test.map(|t| evaluate(&best.model, t)).transpose()?;
    let report = TrainReport {
        stopped_epoch: records.len(),
        epochs: records,
        lr_reductions: reductions,
        early_stopped,
        best_epoch: stopper.best_epoch(),
        best_val_auc: stopper.best(),
        test,
        checkpoint: None,
    };
    Ok((report, best))
}

#[cfg(test)]
mod tests;
