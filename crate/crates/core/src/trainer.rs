//! Two-stream, tied-weight pairwise training.
//!
//! Both members of a pair are scored by the same [`Network`]; the loss
//! gradient with respect to each stream output is backpropagated through
//! that stream's trace and the two parameter gradients are summed.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, PairSample};
use crate::error::{Error, Result};
use crate::loss::{pair_loss, LossConfig, PairTerms};
use crate::nn::{adam_step, init_network, load_model, save_model, Activation, AdamState, GradientBuffer, Network};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Consecutive epochs without a strict validation-loss decrease before stopping.
    pub patience: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossConfig::plain(),
            learning_rate: 0.001,
            batch_size: 64,
            max_epochs: 500,
            patience: 15,
            hidden: vec![512],
            activation: Activation::Relu,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config(
                "batch_size, max_epochs and patience must be positive".into(),
            ));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience ({}) exceeds max_epochs ({})",
                self.patience, self.max_epochs
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn layer_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden);
        dims.push(1);
        dims
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    /// Parameters restored to the best validation epoch.
    pub network: Network,
    pub history: Vec<EpochRecord>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub config: TrainConfig,
}

/// Anything that maps a feature vector to a preference score.
pub trait Scorer {
    fn score(&self, x: &[f64]) -> Result<f64>;
    fn input_dim(&self) -> usize;
}

impl Scorer for Network {
    fn score(&self, x: &[f64]) -> Result<f64> {
        Network::score(self, x)
    }

    fn input_dim(&self) -> usize {
        Network::input_dim(self)
    }
}

impl Scorer for TrainedModel {
    fn score(&self, x: &[f64]) -> Result<f64> {
        self.network.score(x)
    }

    fn input_dim(&self) -> usize {
        self.network.input_dim()
    }
}

/// Preference score of a single point.
pub fn score<S: Scorer + ?Sized>(model: &S, x: &[f64]) -> Result<f64> {
    model.score(x)
}

/// 1 iff `sigmoid(h(x) - h(x')) > 0.5`, i.e. iff `h(x) > h(x')`. Ties give 0.
pub fn predict_pair<S: Scorer + ?Sized>(model: &S, x: &[f64], xp: &[f64]) -> Result<u8> {
    if x.len() != xp.len() {
        return Err(Error::Input(format!(
            "pair members have dimensions {} and {}",
            x.len(),
            xp.len()
        )));
    }
    Ok(u8::from(model.score(x)? > model.score(xp)?))
}

fn terms(dataset: &Dataset, pair: &PairSample, hx: f64, hxp: f64) -> PairTerms {
    PairTerms {
        hx,
        hxp,
        t: pair.t,
        gz: dataset.score(pair.i),
        gzp: dataset.score(pair.j),
    }
}

fn check_pairs(dataset: &Dataset, pairs: &[PairSample]) -> Result<()> {
    for p in pairs {
        if p.i >= dataset.len() || p.j >= dataset.len() || p.i == p.j {
            return Err(Error::Input(format!(
                "pair ({}, {}) does not reference two dataset samples",
                p.i, p.j
            )));
        }
    }
    Ok(())
}

/// Mean pair loss and its parameter gradient over `pairs`: each pair adds
/// `backward(x, dL/dh(x)) + backward(x', dL/dh(x'))`, then the sum is
/// divided by the number of pairs.
pub fn batch_gradient(
    net: &Network,
    dataset: &Dataset,
    pairs: &[PairSample],
    loss: &LossConfig,
) -> Result<(f64, GradientBuffer)> {
    let mut grads = GradientBuffer::zeros_like(net);
    let total = accumulate_batch(net, dataset, pairs.iter(), loss, &mut grads)?;
    let n = pairs.len().max(1) as f64;
    grads.scale(1.0 / n);
    Ok((total / n, grads))
}

fn accumulate_batch<'a>(
    net: &Network,
    dataset: &Dataset,
    pairs: impl Iterator<Item = &'a PairSample>,
    loss: &LossConfig,
    grads: &mut GradientBuffer,
) -> Result<f64> {
    let mut total = 0.0;
    for pair in pairs {
        let (hx, trace_x) = net.forward(dataset.features(pair.i))?;
        let (hxp, trace_xp) = net.forward(dataset.features(pair.j))?;
        let r = pair_loss(&terms(dataset, pair, hx, hxp), loss)?;
        total += r.loss;
        net.backward_into(&trace_x, r.grad_hx, grads)?;
        net.backward_into(&trace_xp, r.grad_hxp, grads)?;
    }
    Ok(total)
}

/// Mean loss of `net` over `pairs` (forward passes only).
pub fn pair_risk(net: &Network, dataset: &Dataset, pairs: &[PairSample], loss: &LossConfig) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Input("cannot evaluate the loss of an empty pair set".into()));
    }
    let mut total = 0.0;
    for pair in pairs {
        let hx = net.score(dataset.features(pair.i))?;
        let hxp = net.score(dataset.features(pair.j))?;
        total += pair_loss(&terms(dataset, pair, hx, hxp), loss)?.loss;
    }
    Ok(total / pairs.len() as f64)
}

/// Source of the per-epoch validation loss that drives early stopping.
pub trait ValidationMonitor {
    fn validation_loss(&mut self, net: &Network, epoch: usize) -> Result<f64>;
}

/// Validation loss on held-out pairs with the training objective.
pub struct PairValidation<'a> {
    pub dataset: &'a Dataset,
    pub pairs: &'a [PairSample],
    pub loss: LossConfig,
}

impl ValidationMonitor for PairValidation<'_> {
    fn validation_loss(&mut self, net: &Network, _epoch: usize) -> Result<f64> {
        pair_risk(net, self.dataset, self.pairs, &self.loss)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience-based stopping on strict decreases of a monitored value.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, value: f64) -> StopDecision {
        if value < self.best {
            self.best = value;
            self.best_epoch = epoch;
            self.stale = 0;
            StopDecision::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_epoch, self.best)
    }
}

/// Train on `train_pairs`, monitoring the loss on `val_pairs`.
pub fn train(
    dataset: &Dataset,
    train_pairs: &[PairSample],
    val_pairs: &[PairSample],
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    if val_pairs.is_empty() {
        return Err(Error::Input("validation pair set is empty".into()));
    }
    check_pairs(dataset, val_pairs)?;
    let mut monitor = PairValidation {
        dataset,
        pairs: val_pairs,
        loss: cfg.loss,
    };
    train_with_monitor(dataset, train_pairs, &mut monitor, cfg, None)
}

/// Training loop with a caller-supplied validation monitor and an optional
/// per-epoch progress callback.
pub fn train_with_monitor(
    dataset: &Dataset,
    train_pairs: &[PairSample],
    monitor: &mut dyn ValidationMonitor,
    cfg: &TrainConfig,
    progress: Option<&(dyn Fn(&EpochRecord) + Sync)>,
) -> Result<TrainedModel> {
    cfg.validate()?;
    if train_pairs.is_empty() {
        return Err(Error::Input("training pair set is empty".into()));
    }
    check_pairs(dataset, train_pairs)?;

    let dims = cfg.layer_dims(dataset.feature_dim());
    let mut net = init_network(&dims, cfg.activation, crate::seed::derive(cfg.seed, "init", 0))?;
    let mut adam = AdamState::new(&net, cfg.learning_rate)?;
    let mut shuffle_rng = crate::seed::rng(crate::seed::derive(cfg.seed, "shuffle", 0));
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();
    let mut grads = GradientBuffer::zeros_like(&net);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_net = net.clone();
    let mut history = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let diverged = |message: String| Error::Training { epoch, batch, message };
            grads.fill_zero();
            let batch_loss = accumulate_batch(
                &net,
                dataset,
                chunk.iter().map(|&k| &train_pairs[k]),
                &cfg.loss,
                &mut grads,
            )
            .map_err(|e| diverged(e.to_string()))?;
            if !batch_loss.is_finite() {
                return Err(diverged(format!("batch loss is {batch_loss}")));
            }
            grads.scale(1.0 / chunk.len() as f64);
            adam_step(&mut net, &grads, &mut adam).map_err(|e| diverged(e.to_string()))?;
            epoch_loss += batch_loss;
        }
        let train_loss = epoch_loss / train_pairs.len() as f64;
        let validation_loss = monitor.validation_loss(&net, epoch)?;
        if !validation_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                batch: 0,
                message: format!("validation loss is {validation_loss}"),
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            validation_loss,
        };
        history.push(record);
        if let Some(cb) = progress {
            cb(&record);
        }
        match stopper.observe(epoch, validation_loss) {
            StopDecision::Improved => best_net.clone_from(&net),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }

    let (best_epoch, best_validation_loss) = stopper.best();
    Ok(TrainedModel {
        network: best_net,
        stopped_epoch: history.len(),
        history,
        best_epoch,
        best_validation_loss,
        config: cfg.clone(),
    })
}

/// Fraction of pairs whose label `predict_pair` reproduces.
pub fn pairwise_accuracy<S: Scorer + ?Sized>(model: &S, dataset: &Dataset, pairs: &[PairSample]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Input("no pairs to score".into()));
    }
    let mut hits = 0usize;
    for p in pairs {
        if predict_pair(model, dataset.features(p.i), dataset.features(p.j))? == p.t {
            hits += 1;
        }
    }
    Ok(hits as f64 / pairs.len() as f64)
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format_version: u32,
    model_file: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    manifest: Option<String>,
    stopped_epoch: usize,
    best_epoch: usize,
    best_validation_loss: f64,
    config: TrainConfig,
    history: Vec<EpochRecord>,
}

/// Sidecar path for a model file: `model.txt` -> `model.json`.
pub fn sidecar_path(model_path: &Path) -> PathBuf {
    model_path.with_extension("json")
}

/// Write the network file and its JSON sidecar next to it.
pub fn save_trained(model: &TrainedModel, model_path: impl AsRef<Path>, manifest: Option<&str>) -> Result<()> {
    let model_path = model_path.as_ref();
    let comment = manifest.map(|m| format!("manifest: {m}"));
    save_model(&model.network, model_path, comment.as_deref())?;
    let sidecar = Sidecar {
        format_version: crate::nn::FORMAT_VERSION,
        model_file: model_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        manifest: manifest.map(str::to_string),
        stopped_epoch: model.stopped_epoch,
        best_epoch: model.best_epoch,
        best_validation_loss: model.best_validation_loss,
        config: model.config.clone(),
        history: model.history.clone(),
    };
    let path = sidecar_path(model_path);
    fs::write(&path, serde_json::to_string_pretty(&sidecar)? + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_trained(model_path: impl AsRef<Path>) -> Result<TrainedModel> {
    let model_path = model_path.as_ref();
    let network = load_model(model_path)?;
    let path = sidecar_path(model_path);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text)?;
    Ok(TrainedModel {
        network,
        history: sidecar.history,
        stopped_epoch: sidecar.stopped_epoch,
        best_epoch: sidecar.best_epoch,
        best_validation_loss: sidecar.best_validation_loss,
        config: sidecar.config,
    })
}
