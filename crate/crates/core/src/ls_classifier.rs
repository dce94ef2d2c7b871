//! Fully connected classifier over LS fingerprint estimates.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use csirff_neural::checkpoint::NamedTensor;
use csirff_neural::layers::Linear;
use csirff_neural::{
    argmax_rows, ce_loss, Adam, AdamConfig, CheckpointKind, EarlyStopping, EpochMetrics, ModelCheckpoint, Module,
    Tensor,
};

use crate::error::{CoreError, Result};
use crate::ls::FingerprintEstimate;

/// Raw estimate components are clipped to this magnitude before standardization.
pub const FEATURE_CLIP: f32 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsTrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for LsTrainConfig {
    fn default() -> Self {
        Self { lr: 1e-3, weight_decay: 1e-5, batch_size: 64, max_epochs: 200, patience: 10, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LsSnapshot {
    n_features: usize,
    n_classes: usize,
    train: LsTrainConfig,
}

/// Trained classifier with its feature standardization.
#[derive(Debug, Clone)]
pub struct LsModel {
    fc: Linear<f32>,
    mean: Vec<f32>,
    std: Vec<f32>,
    pub n_classes: usize,
    pub checkpoint: ModelCheckpoint,
}

/// `[re..., im...]`, clipped.
pub fn ls_features(e: &FingerprintEstimate) -> Vec<f32> {
    let clip = |v: f64| (v as f32).clamp(-FEATURE_CLIP, FEATURE_CLIP);
    e.values.iter().map(|v| clip(v.re)).chain(e.values.iter().map(|v| clip(v.im))).collect()
}

fn labels_of(set: &[FingerprintEstimate], n_classes: usize, what: &str) -> Result<Vec<usize>> {
    set.iter()
        .map(|e| match e.source_label {
            Some(l) if (l as usize) < n_classes => Ok(l as usize),
            other => Err(CoreError::Config(format!("{what}: label {other:?} inconsistent with {n_classes} classes"))),
        })
        .collect()
}

impl LsModel {
    fn standardized(&self, set: &[FingerprintEstimate]) -> Tensor<f32> {
        let d = self.mean.len();
        let mut x = Vec::with_capacity(set.len() * d);
        for e in set {
            x.extend(ls_features(e).iter().enumerate().map(|(j, v)| (v - self.mean[j]) / self.std[j]));
        }
        Tensor::new(vec![set.len(), d], x).expect("consistent feature length")
    }

    pub fn logits(&mut self, set: &[FingerprintEstimate]) -> Result<Tensor<f32>> {
        if let Some(e) = set.iter().find(|e| 2 * e.values.len() != self.mean.len()) {
            return Err(CoreError::GridMismatch(format!("estimate with {} bins", e.values.len())));
        }
        Ok(self.fc.forward(&self.standardized(set))?)
    }

    pub fn predict(&mut self, set: &[FingerprintEstimate]) -> Result<Vec<usize>> {
        if set.is_empty() {
            return Ok(Vec::new());
        }
        let mut out = Vec::with_capacity(set.len());
        for chunk in set.chunks(1024) {
            out.extend(argmax_rows(&self.logits(chunk)?));
        }
        Ok(out)
    }

    /// Accuracy in percent over labeled estimates.
    pub fn accuracy(&mut self, set: &[FingerprintEstimate]) -> Result<f64> {
        let labels = labels_of(set, self.n_classes, "evaluation")?;
        let pred = self.predict(set)?;
        Ok(100.0 * pred.iter().zip(&labels).filter(|(p, t)| p == t).count() as f64 / set.len().max(1) as f64)
    }

    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self> {
        if ckpt.kind != CheckpointKind::LsClassifier {
            return Err(CoreError::Config(format!("expected an LS classifier checkpoint, got {:?}", ckpt.kind)));
        }
        let snap: LsSnapshot =
            serde_json::from_str(&ckpt.config).map_err(|e| CoreError::Config(format!("checkpoint config: {e}")))?;
        let get = |name: &str, len: usize| -> Result<Vec<f32>> {
            let t = ckpt.tensor(name).ok_or_else(|| CoreError::Config(format!("checkpoint lacks {name}")))?;
            if t.data.len() != len {
                return Err(CoreError::Config(format!("{name} has {} values, expected {len}", t.data.len())));
            }
            Ok(t.data.clone())
        };
        let mut fc = Linear::new("ls_fc", snap.n_features, snap.n_classes, true, &mut ChaCha8Rng::seed_from_u64(0))?;
        fc.weight.value.data_mut().copy_from_slice(&get("ls_fc.weight", snap.n_features * snap.n_classes)?);
        if let Some(b) = &mut fc.bias {
            b.value.data_mut().copy_from_slice(&get("ls_fc.bias", snap.n_classes)?);
        }
        Ok(Self {
            fc,
            mean: get("ls_fc.feature_mean", snap.n_features)?,
            std: get("ls_fc.feature_std", snap.n_features)?,
            n_classes: snap.n_classes,
            checkpoint: ckpt.clone(),
        })
    }

    fn snapshot_tensors(&self) -> Vec<NamedTensor> {
        let mut t = vec![NamedTensor {
            name: self.fc.weight.name.clone(),
            shape: self.fc.weight.value.shape().to_vec(),
            data: self.fc.weight.value.data().to_vec(),
        }];
        if let Some(b) = &self.fc.bias {
            t.push(NamedTensor {
                name: b.name.clone(),
                shape: b.value.shape().to_vec(),
                data: b.value.data().to_vec(),
            });
        }
        let d = self.mean.len();
        t.push(NamedTensor { name: "ls_fc.feature_mean".into(), shape: vec![d], data: self.mean.clone() });
        t.push(NamedTensor { name: "ls_fc.feature_std".into(), shape: vec![d], data: self.std.clone() });
        t
    }
}

/// Train the FC layer with cross-entropy and Adam, early-stopping on validation loss.
pub fn train_ls_classifier(
    train: &[FingerprintEstimate],
    val: &[FingerprintEstimate],
    n_classes: usize,
    cfg: &LsTrainConfig,
) -> Result<LsModel> {
    if train.is_empty() || val.is_empty() {
        return Err(CoreError::Insufficient("LS classifier needs non-empty train and validation sets".into()));
    }
    if n_classes < 2 || cfg.batch_size == 0 || cfg.patience == 0 || cfg.max_epochs == 0 {
        return Err(CoreError::Config(format!("LS classifier config {cfg:?} with {n_classes} classes")));
    }
    let y_train = labels_of(train, n_classes, "training")?;
    let y_val = labels_of(val, n_classes, "validation")?;
    let d = 2 * train[0].values.len();
    if train.iter().chain(val).any(|e| 2 * e.values.len() != d) {
        return Err(CoreError::GridMismatch("estimates have differing lengths".into()));
    }

    let feats: Vec<Vec<f32>> = train.iter().map(ls_features).collect();
    let n = feats.len() as f64;
    let mut mean = vec![0f32; d];
    let mut std = vec![0f32; d];
    for j in 0..d {
        let m = feats.iter().map(|f| f[j] as f64).sum::<f64>() / n;
        let v = feats.iter().map(|f| (f[j] as f64 - m).powi(2)).sum::<f64>() / n;
        mean[j] = m as f32;
        std[j] = if v > 1e-20 { v.sqrt() as f32 } else { 1.0 };
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let fc = Linear::new("ls_fc", d, n_classes, true, &mut rng)?;
    let snapshot = serde_json::to_string(&LsSnapshot { n_features: d, n_classes, train: cfg.clone() })
        .expect("serializable snapshot");
    let empty = ModelCheckpoint {
        kind: CheckpointKind::LsClassifier,
        config: snapshot.clone(),
        epoch: 0,
        history: Vec::new(),
        tensors: Vec::new(),
    };
    let mut model = LsModel { fc, mean, std, n_classes, checkpoint: empty };
    let x_train = model.standardized(train);
    let x_val = model.standardized(val);

    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..AdamConfig::default() });
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = Vec::new();
    let mut best: Option<(u32, Vec<NamedTensor>)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let mut xb = Vec::with_capacity(chunk.len() * d);
            for &i in chunk {
                xb.extend_from_slice(&x_train.data()[i * d..(i + 1) * d]);
            }
            let yb: Vec<usize> = chunk.iter().map(|&i| y_train[i]).collect();
            model.fc.zero_grad();
            let logits = model.fc.forward(&Tensor::new(vec![chunk.len(), d], xb)?)?;
            let loss = ce_loss(&logits, &yb)?;
            model.fc.backward(&loss.grad)?;
            let mut params = Vec::new();
            model.fc.params_mut(&mut params);
            adam.step(&mut params)?;
            sum += loss.value as f64;
            batches += 1;
        }
        let logits = model.fc.forward(&x_val)?;
        let val_loss = ce_loss(&logits, &y_val)?.value as f64;
        if !val_loss.is_finite() {
            return Err(
                csirff_neural::NnError::Diverged { epoch, detail: format!("LS validation loss {val_loss}") }.into()
            );
        }
        let correct = argmax_rows(&logits).iter().zip(&y_val).filter(|(p, t)| p == t).count();
        let val_accuracy = 100.0 * correct as f64 / val.len() as f64;
        history.push(EpochMetrics { epoch: epoch as u32, train_loss: sum / batches as f64, val_loss, val_accuracy });
        if stopper.observe(val_loss) {
            best = Some((epoch as u32, model.snapshot_tensors()));
        }
        if stopper.should_stop() {
            break;
        }
    }
    let (epoch, tensors) = best.expect("at least one epoch ran");
    let ckpt = ModelCheckpoint { kind: CheckpointKind::LsClassifier, config: snapshot, epoch, history, tensors };
    LsModel::from_checkpoint(&ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn est(label: u32, v: f64) -> FingerprintEstimate {
        FingerprintEstimate {
            values: vec![Complex64::new(v, -v), Complex64::new(10.0 * v, 0.0)],
            faded: vec![false; 2],
            source_label: Some(label),
            condition_tag: String::new(),
        }
    }

    #[test]
    fn features_are_clipped() {
        let f = ls_features(&est(0, 1.0));
        assert_eq!(f, vec![1.0, 5.0, -1.0, 0.0]);
    }

    #[test]
    fn separable_toy_is_learned_and_reloads() {
        let train: Vec<_> =
            (0..40).map(|i| est(i % 2, if i % 2 == 0 { 0.1 } else { -0.1 } + 0.001 * i as f64)).collect();
        let mut m = train_ls_classifier(&train, &train, 2, &LsTrainConfig { lr: 1e-2, ..Default::default() }).unwrap();
        assert_eq!(m.accuracy(&train).unwrap(), 100.0);
        let bytes = m.checkpoint.to_bytes();
        let mut back = LsModel::from_checkpoint(&ModelCheckpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.predict(&train).unwrap(), m.predict(&train).unwrap());
    }

    #[test]
    fn out_of_range_labels_are_rejected() {
        let train = vec![est(0, 0.1), est(5, 0.2)];
        assert!(train_ls_classifier(&train, &train, 2, &LsTrainConfig::default()).is_err());
    }
}
