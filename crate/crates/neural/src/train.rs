//! Two-stage training: contrastive pre-training of encoder + projection head,
//! then classifier training with encoder fine-tuning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{CheckpointKind, EpochMetrics, ModelCheckpoint};
use crate::error::{NnError, Result};
use crate::loss::{argmax_rows, ce_loss, supcon_loss};
use crate::model::{EncoderConfig, HeadConfig, Network};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::{Module, Param, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub tau: f64,
    pub seed: u64,
    pub max_epochs: usize,
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self { lr: 1e-4, weight_decay: 1e-5, batch_size: 512, patience: 10, tau: 0.07, seed: 0, max_epochs: 200 }
    }

    pub fn desk() -> Self {
        Self { batch_size: 64, max_epochs: 40, ..Self::paper() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || self.patience == 0 || self.batch_size < 2 || !(self.lr > 0.0) {
            return Err(NnError::Config(format!("invalid training config {self:?}")));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, weight_decay: self.weight_decay, ..AdamConfig::default() }
    }
}

/// Flattened `[N, 2, L]` inputs with integer labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Samples {
    pub inputs: Vec<f32>,
    pub labels: Vec<usize>,
    pub input_len: usize,
}

impl Samples {
    pub fn new(inputs: Vec<f32>, labels: Vec<usize>, input_len: usize) -> Result<Self> {
        if inputs.len() != labels.len() * 2 * input_len {
            return Err(NnError::Shape {
                context: "Samples::new",
                expected: vec![labels.len(), 2, input_len],
                got: vec![inputs.len()],
            });
        }
        Ok(Self { inputs, labels, input_len })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn batch(&self, idx: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let w = 2 * self.input_len;
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend_from_slice(&self.inputs[i * w..(i + 1) * w]);
        }
        let t = Tensor::new(vec![idx.len(), 2, self.input_len], data).expect("batch shape");
        (t, idx.iter().map(|&i| self.labels[i]).collect())
    }
}

#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: Samples,
    pub val: Samples,
}

/// Patience-based early stopping on a metric where lower is better.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    epochs_seen: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: None, epochs_seen: 0, since_best: 0 }
    }

    /// Record the metric for the next epoch. Returns true on a strict improvement.
    pub fn observe(&mut self, metric: f64) -> bool {
        let epoch = self.epochs_seen;
        self.epochs_seen += 1;
        let improved = match self.best {
            None => true,
            Some((_, best)) => metric < best,
        };
        if improved {
            self.best = Some((epoch, metric));
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }

    pub fn epochs_seen(&self) -> usize {
        self.epochs_seen
    }
}

/// Configuration snapshot stored inside checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    pub train: TrainConfig,
    pub from_pretrained: bool,
    pub freeze_encoder: bool,
}

impl ModelSnapshot {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| NnError::Config(format!("bad config snapshot: {e}")))
    }
}

fn encoder_and_projection(net: &mut Network<f32>) -> Vec<&mut Param<f32>> {
    let mut out = Vec::new();
    net.encoder.params_mut(&mut out);
    net.projection.params_mut(&mut out);
    out
}

fn classifier_params(net: &mut Network<f32>, with_encoder: bool) -> Vec<&mut Param<f32>> {
    let mut out = Vec::new();
    if with_encoder {
        net.encoder.params_mut(&mut out);
    }
    net.classifier.params_mut(&mut out);
    out
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0000_0000_0000);
    rng.set_stream(epoch as u64 + 1);
    idx.shuffle(&mut rng);
    idx
}

fn has_positive(labels: &[usize]) -> bool {
    labels.iter().enumerate().any(|(i, a)| labels[i + 1..].contains(a))
}

fn check_finite(loss: f32, epoch: usize, what: &str) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(NnError::Diverged { epoch, detail: format!("{what} loss became {loss}") })
    }
}

/// Mean SupCon loss over the validation set in evaluation mode.
pub fn supcon_validation(net: &mut Network<f32>, val: &Samples, batch_size: usize, tau: f64) -> Result<f64> {
    let idx: Vec<usize> = (0..val.len()).collect();
    let (mut total, mut count) = (0.0, 0usize);
    for chunk in idx.chunks(batch_size) {
        let (x, y) = val.batch(chunk);
        if chunk.len() < 2 || !has_positive(&y) {
            continue;
        }
        let z = net.project(&x)?;
        total += supcon_loss(&z, &y, tau)?.value as f64;
        count += 1;
    }
    if count == 0 {
        return Err(NnError::Loss("validation split has no batch with positive pairs".into()));
    }
    Ok(total / count as f64)
}

/// Mean CE loss and accuracy (percent) over `data` in evaluation mode.
pub fn classify_validation(net: &mut Network<f32>, data: &Samples, batch_size: usize) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(NnError::Loss("empty validation split".into()));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let (mut total, mut correct) = (0.0, 0usize);
    for chunk in idx.chunks(batch_size) {
        let (x, y) = data.batch(chunk);
        let logits = net.logits(&x)?;
        total += ce_loss(&logits, &y)?.value as f64 * chunk.len() as f64;
        correct += argmax_rows(&logits).iter().zip(&y).filter(|(p, t)| p == t).count();
    }
    Ok((total / data.len() as f64, 100.0 * correct as f64 / data.len() as f64))
}

/// Contrastive pre-training. Returns the checkpoint of the best validation epoch.
pub fn train_stage1(
    data: &TrainData,
    enc: &EncoderConfig,
    head: &HeadConfig,
    cfg: &TrainConfig,
) -> Result<ModelCheckpoint> {
    cfg.validate()?;
    let mut net = Network::<f32>::new(enc.clone(), head.clone(), cfg.seed)?;
    let snapshot = ModelSnapshot {
        encoder: enc.clone(),
        head: head.clone(),
        train: cfg.clone(),
        from_pretrained: false,
        freeze_encoder: false,
    };
    let mut adam = Adam::new(cfg.adam());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = Vec::new();
    let mut best = None;
    for epoch in 0..cfg.max_epochs {
        let order = epoch_order(data.train.len(), cfg.seed, epoch);
        let (mut sum, mut batches) = (0.0f64, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = data.train.batch(chunk);
            if chunk.len() < 2 || !has_positive(&y) {
                continue;
            }
            net.zero_grad_all();
            let r = net.encoder.forward(&x, true)?;
            let z = net.projection.forward(&r)?;
            let loss = supcon_loss(&z, &y, cfg.tau)?;
            check_finite(loss.value, epoch, "training supcon")?;
            let dr = net.projection.backward(&loss.grad)?;
            net.encoder.backward(&dr)?;
            adam.step(&mut encoder_and_projection(&mut net))?;
            sum += loss.value as f64;
            batches += 1;
        }
        let val_loss = supcon_validation(&mut net, &data.val, cfg.batch_size, cfg.tau)?;
        if !val_loss.is_finite() {
            return Err(NnError::Diverged { epoch, detail: format!("validation supcon loss {val_loss}") });
        }
        let m = EpochMetrics {
            epoch: epoch as u32,
            train_loss: sum / batches.max(1) as f64,
            val_loss,
            val_accuracy: f64::NAN,
        };
        log::info!("stage1 epoch {epoch}: train {:.4} val {:.4}", m.train_loss, m.val_loss);
        history.push(m);
        if stopper.observe(val_loss) {
            best = Some(ModelCheckpoint::from_network(
                &mut net,
                CheckpointKind::Stage1,
                snapshot.to_json(),
                epoch as u32,
                Vec::new(),
            ));
        }
        if stopper.should_stop() {
            break;
        }
    }
    let mut ckpt = best.ok_or_else(|| NnError::Config("max_epochs must be at least 1".into()))?;
    ckpt.history = history;
    Ok(ckpt)
}

/// Classifier training. With `stage1 = Some(..)` the encoder starts from the
/// pre-trained parameters; with `None` it starts from random initialization.
pub fn train_stage2(
    stage1: Option<&ModelCheckpoint>,
    data: &TrainData,
    enc: &EncoderConfig,
    head: &HeadConfig,
    cfg: &TrainConfig,
    freeze_encoder: bool,
) -> Result<ModelCheckpoint> {
    cfg.validate()?;
    let mut net = Network::<f32>::new(enc.clone(), head.clone(), cfg.seed.wrapping_add(1))?;
    if let Some(ckpt) = stage1 {
        let snap = ModelSnapshot::from_json(&ckpt.config)?;
        if &snap.encoder != enc {
            return Err(NnError::Config(format!(
                "stage-1 encoder config {:?} differs from requested {:?}",
                snap.encoder, enc
            )));
        }
        ckpt.load_into(&mut net, "encoder.")?;
    }
    let snapshot = ModelSnapshot {
        encoder: enc.clone(),
        head: head.clone(),
        train: cfg.clone(),
        from_pretrained: stage1.is_some(),
        freeze_encoder,
    };
    let mut adam = Adam::new(cfg.adam());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = Vec::new();
    let mut best = None;
    for epoch in 0..cfg.max_epochs {
        let order = epoch_order(data.train.len(), cfg.seed.wrapping_add(1), epoch);
        let (mut sum, mut batches) = (0.0f64, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = data.train.batch(chunk);
            if chunk.len() < 2 {
                continue;
            }
            net.zero_grad_all();
            let r = net.encoder.forward(&x, !freeze_encoder)?;
            let logits = net.classifier.forward(&r)?;
            let loss = ce_loss(&logits, &y)?;
            check_finite(loss.value, epoch, "training cross-entropy")?;
            let dr = net.classifier.backward(&loss.grad)?;
            if !freeze_encoder {
                net.encoder.backward(&dr)?;
            }
            adam.step(&mut classifier_params(&mut net, !freeze_encoder))?;
            sum += loss.value as f64;
            batches += 1;
        }
        let (val_loss, val_acc) = classify_validation(&mut net, &data.val, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(NnError::Diverged { epoch, detail: format!("validation cross-entropy {val_loss}") });
        }
        let m = EpochMetrics {
            epoch: epoch as u32,
            train_loss: sum / batches.max(1) as f64,
            val_loss,
            val_accuracy: val_acc,
        };
        log::info!("stage2 epoch {epoch}: train {:.4} val {:.4} acc {:.2}%", m.train_loss, m.val_loss, val_acc);
        history.push(m);
        if stopper.observe(val_loss) {
            best = Some(ModelCheckpoint::from_network(
                &mut net,
                CheckpointKind::Stage2,
                snapshot.to_json(),
                epoch as u32,
                Vec::new(),
            ));
        }
        if stopper.should_stop() {
            break;
        }
    }
    let mut ckpt = best.ok_or_else(|| NnError::Config("max_epochs must be at least 1".into()))?;
    ckpt.history = history;
    Ok(ckpt)
}

/// Rebuild a network from a stage-1 or stage-2 checkpoint.
pub fn network_from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Network<f32>> {
    let snap = ModelSnapshot::from_json(&ckpt.config)?;
    let mut net = Network::<f32>::new(snap.encoder, snap.head, 0)?;
    ckpt.load_into(&mut net, "encoder.")?;
    ckpt.load_into(&mut net, "projection")?;
    if ckpt.kind == CheckpointKind::Stage2 {
        ckpt.load_into(&mut net, "classifier")?;
    }
    Ok(net)
}
