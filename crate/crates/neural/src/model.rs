//! Encoder, projection head and classifier.
//!
//! The encoder takes a batch of amplitude/phase matrices `[N, 2, L]`:
//! a 1x3 stem convolves each row on its own, a 2x3 stem mixes the two rows
//! (height collapses to 1), then 1-D residual stages and global average
//! pooling produce the representation `r`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::layers::{global_avg_pool, global_avg_pool_backward, BatchNorm, Conv1d, Gelu, L2Normalize, Linear};
use crate::scalar::Scalar;
use crate::tensor::{Buffer, Module, Param, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Gelu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_len: usize,
    pub stem1_filters: usize,
    /// Height x width; must be 1x3.
    pub stem1_kernel: [usize; 2],
    /// One filter bank shared by the amplitude and phase rows, or one per row.
    pub stem1_shared: bool,
    pub stem2_filters: usize,
    /// Height x width; must be 2x3.
    pub stem2_kernel: [usize; 2],
    pub block_widths: Vec<usize>,
    pub blocks_per_stage: usize,
    pub activation: Activation,
    pub embed_dim: usize,
}

impl EncoderConfig {
    /// Full-size trunk: four stages up to a 512-wide representation.
    pub fn paper() -> Self {
        Self {
            input_len: 52,
            stem1_filters: 64,
            stem1_kernel: [1, 3],
            stem1_shared: true,
            stem2_filters: 64,
            stem2_kernel: [2, 3],
            block_widths: vec![64, 128, 256, 512],
            blocks_per_stage: 2,
            activation: Activation::Gelu,
            embed_dim: 512,
        }
    }

    /// Desk-scale trunk.
    pub fn desk() -> Self {
        Self { block_widths: vec![32, 64], blocks_per_stage: 1, embed_dim: 64, ..Self::paper() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stem1_kernel != [1, 3] || self.stem2_kernel != [2, 3] {
            return Err(NnError::Config(format!(
                "stem kernels must be 1x3 and 2x3, got {:?} and {:?}",
                self.stem1_kernel, self.stem2_kernel
            )));
        }
        if self.block_widths.is_empty() || self.blocks_per_stage == 0 || self.input_len == 0 {
            return Err(NnError::Config("encoder needs at least one stage with one block".into()));
        }
        if self.stem1_filters == 0 || self.stem2_filters == 0 || self.block_widths.contains(&0) {
            return Err(NnError::Config("filter counts must be positive".into()));
        }
        if self.block_widths.last() != Some(&self.embed_dim) {
            return Err(NnError::Config(format!(
                "embed_dim {} must equal the last stage width {:?}",
                self.embed_dim,
                self.block_widths.last()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub projection_dim: usize,
    pub projection_bias: bool,
    pub n_classes: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { projection_dim: 128, projection_bias: true, n_classes: 19 }
    }
}

#[derive(Debug, Clone)]
struct ResidualBlock<S> {
    conv1: Conv1d<S>,
    bn1: BatchNorm<S>,
    act1: Gelu<S>,
    conv2: Conv1d<S>,
    bn2: BatchNorm<S>,
    shortcut: Option<(Conv1d<S>, BatchNorm<S>)>,
    act_out: Gelu<S>,
}

impl<S: Scalar> ResidualBlock<S> {
    fn new(name: &str, in_ch: usize, out_ch: usize, stride: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let shortcut = if stride != 1 || in_ch != out_ch {
            Some((
                Conv1d::new(&format!("{name}.shortcut"), in_ch, out_ch, 1, stride, 0, 1, false, rng)?,
                BatchNorm::new(&format!("{name}.shortcut_bn"), out_ch),
            ))
        } else {
            None
        };
        Ok(Self {
            conv1: Conv1d::new(&format!("{name}.conv1"), in_ch, out_ch, 3, stride, 1, 1, false, rng)?,
            bn1: BatchNorm::new(&format!("{name}.bn1"), out_ch),
            act1: Gelu::new(),
            conv2: Conv1d::new(&format!("{name}.conv2"), out_ch, out_ch, 3, 1, 1, 1, false, rng)?,
            bn2: BatchNorm::new(&format!("{name}.bn2"), out_ch),
            shortcut,
            act_out: Gelu::new(),
        })
    }

    fn forward(&mut self, x: &Tensor<S>, train: bool) -> Result<Tensor<S>> {
        let h = self.conv1.forward(x)?;
        let h = self.bn1.forward(&h, train)?;
        let h = self.act1.forward(h)?;
        let h = self.conv2.forward(&h)?;
        let mut h = self.bn2.forward(&h, train)?;
        let skip = match &mut self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(x)?;
                bn.forward(&s, train)?
            }
            None => x.clone(),
        };
        h.data_mut().iter_mut().zip(skip.data()).for_each(|(a, &b)| *a += b);
        self.act_out.forward(h)
    }

    fn backward(&mut self, dy: &Tensor<S>) -> Result<Tensor<S>> {
        let d = self.act_out.backward(dy)?;
        let g = self.bn2.backward(&d)?;
        let g = self.conv2.backward(&g)?;
        let g = self.act1.backward(&g)?;
        let g = self.bn1.backward(&g)?;
        let mut dx = self.conv1.backward(&g)?;
        let dskip = match &mut self.shortcut {
            Some((conv, bn)) => {
                let s = bn.backward(&d)?;
                conv.backward(&s)?
            }
            None => d,
        };
        dx.data_mut().iter_mut().zip(dskip.data()).for_each(|(a, &b)| *a += b);
        Ok(dx)
    }
}

impl<S: Scalar> Module<S> for ResidualBlock<S> {
    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<S>>) {
        self.conv1.params_mut(out);
        self.bn1.params_mut(out);
        self.conv2.params_mut(out);
        self.bn2.params_mut(out);
        if let Some((c, b)) = &mut self.shortcut {
            c.params_mut(out);
            b.params_mut(out);
        }
    }
    fn buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Buffer<S>>) {
        self.bn1.buffers_mut(out);
        self.bn2.buffers_mut(out);
        if let Some((_, b)) = &mut self.shortcut {
            b.buffers_mut(out);
        }
    }
}

/// Residual CNN encoder.
#[derive(Debug, Clone)]
pub struct Encoder<S> {
    pub config: EncoderConfig,
    stem1: Conv1d<S>,
    stem1_bn: BatchNorm<S>,
    stem1_act: Gelu<S>,
    stem2: Conv1d<S>,
    stem2_bn: BatchNorm<S>,
    stem2_act: Gelu<S>,
    blocks: Vec<ResidualBlock<S>>,
    batch: usize,
    final_len: usize,
}

impl<S: Scalar> Encoder<S> {
    pub fn new(config: EncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let f1 = config.stem1_filters;
        let stem1 = if config.stem1_shared {
            Conv1d::new("encoder.stem1", 1, f1, 3, 1, 1, 1, true, rng)?
        } else {
            Conv1d::new("encoder.stem1", 2, 2 * f1, 3, 1, 1, 2, true, rng)?
        };
        let stem1_bn = BatchNorm::new("encoder.stem1_bn", if config.stem1_shared { f1 } else { 2 * f1 });
        // A 2x3 kernel over f1 channels x 2 rows is a width-3 kernel over 2*f1 channels.
        let stem2 = Conv1d::new("encoder.stem2", 2 * f1, config.stem2_filters, 3, 1, 1, 1, true, rng)?;
        let stem2_bn = BatchNorm::new("encoder.stem2_bn", config.stem2_filters);
        let mut blocks = Vec::new();
        let mut in_ch = config.stem2_filters;
        for (si, &width) in config.block_widths.iter().enumerate() {
            for bi in 0..config.blocks_per_stage {
                let stride = if si > 0 && bi == 0 { 2 } else { 1 };
                blocks.push(ResidualBlock::new(&format!("encoder.stage{si}.block{bi}"), in_ch, width, stride, rng)?);
                in_ch = width;
            }
        }
        Ok(Self {
            config,
            stem1,
            stem1_bn,
            stem1_act: Gelu::new(),
            stem2,
            stem2_bn,
            stem2_act: Gelu::new(),
            blocks,
            batch: 0,
            final_len: 0,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    /// `x`: `[N, 2, L]` amplitude/phase batch. Returns `[N, embed_dim]`.
    pub fn forward(&mut self, x: &Tensor<S>, train: bool) -> Result<Tensor<S>> {
        let len = self.config.input_len;
        let &[n, 2, l] = x.shape() else {
            return Err(NnError::Shape {
                context: "encoder input",
                expected: vec![0, 2, len],
                got: x.shape().to_vec(),
            });
        };
        if l != len || n == 0 {
            return Err(NnError::Shape {
                context: "encoder input",
                expected: vec![n.max(1), 2, len],
                got: x.shape().to_vec(),
            });
        }
        // [N, 2, L] -> [2, N, L]; shared stem treats it as one channel over 2N rows.
        let mut rows = vec![S::ZERO; x.len()];
        for b in 0..n {
            for r in 0..2 {
                rows[(r * n + b) * l..(r * n + b + 1) * l]
                    .copy_from_slice(&x.data()[(b * 2 + r) * l..(b * 2 + r + 1) * l]);
            }
        }
        let stem_in = if self.config.stem1_shared {
            Tensor::new(vec![1, 2 * n, l], rows)?
        } else {
            Tensor::new(vec![2, n, l], rows)?
        };
        let h = self.stem1.forward(&stem_in)?;
        let h = self.stem1_bn.forward(&h, train)?;
        let h = self.stem1_act.forward(h)?;
        let h = h.reshape(&[2 * self.config.stem1_filters, n, l])?;
        let h = self.stem2.forward(&h)?;
        let h = self.stem2_bn.forward(&h, train)?;
        let mut h = self.stem2_act.forward(h)?;
        for block in &mut self.blocks {
            h = block.forward(&h, train)?;
        }
        self.batch = n;
        self.final_len = h.shape()[2];
        global_avg_pool(&h)
    }

    /// Returns the gradient with respect to the `[N, 2, L]` input.
    pub fn backward(&mut self, dr: &Tensor<S>) -> Result<Tensor<S>> {
        let n = self.batch;
        if n == 0 {
            return Err(NnError::NoForwardCache("encoder"));
        }
        let l = self.config.input_len;
        let mut g = global_avg_pool_backward(dr, self.final_len)?;
        for block in self.blocks.iter_mut().rev() {
            g = block.backward(&g)?;
        }
        let g = self.stem2_act.backward(&g)?;
        let g = self.stem2_bn.backward(&g)?;
        let g = self.stem2.backward(&g)?;
        let g = if self.config.stem1_shared { g.reshape(&[self.config.stem1_filters, 2 * n, l])? } else { g };
        let g = self.stem1_act.backward(&g)?;
        let g = self.stem1_bn.backward(&g)?;
        let g = self.stem1.backward(&g)?;
        let mut dx = vec![S::ZERO; n * 2 * l];
        for b in 0..n {
            for r in 0..2 {
                dx[(b * 2 + r) * l..(b * 2 + r + 1) * l]
                    .copy_from_slice(&g.data()[(r * n + b) * l..(r * n + b + 1) * l]);
            }
        }
        Tensor::new(vec![n, 2, l], dx)
    }
}

impl<S: Scalar> Module<S> for Encoder<S> {
    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<S>>) {
        self.stem1.params_mut(out);
        self.stem1_bn.params_mut(out);
        self.stem2.params_mut(out);
        self.stem2_bn.params_mut(out);
        for b in &mut self.blocks {
            b.params_mut(out);
        }
    }
    fn buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Buffer<S>>) {
        self.stem1_bn.buffers_mut(out);
        self.stem2_bn.buffers_mut(out);
        for b in &mut self.blocks {
            b.buffers_mut(out);
        }
    }
}

/// Linear map to the contrastive space followed by L2 normalization.
#[derive(Debug, Clone)]
pub struct ProjectionHead<S> {
    pub linear: Linear<S>,
    norm: L2Normalize<S>,
    /// Set when the last forward pass hit the zero-norm guard.
    pub guard_hit: bool,
}

impl<S: Scalar> ProjectionHead<S> {
    pub fn new(embed_dim: usize, cfg: &HeadConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            linear: Linear::new("projection", embed_dim, cfg.projection_dim, cfg.projection_bias, rng)?,
            norm: L2Normalize::new(),
            guard_hit: false,
        })
    }

    pub fn forward(&mut self, r: &Tensor<S>) -> Result<Tensor<S>> {
        let p = self.linear.forward(r)?;
        let (z, guarded) = self.norm.forward(&p)?;
        self.guard_hit = guarded;
        Ok(z)
    }

    pub fn backward(&mut self, dz: &Tensor<S>) -> Result<Tensor<S>> {
        let dp = self.norm.backward(dz)?;
        self.linear.backward(&dp)
    }
}

impl<S: Scalar> Module<S> for ProjectionHead<S> {
    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<S>>) {
        self.linear.params_mut(out);
    }
}

/// Encoder plus both heads. Stage 1 uses the projection head, stage 2 the classifier.
#[derive(Debug, Clone)]
pub struct Network<S> {
    pub encoder: Encoder<S>,
    pub projection: ProjectionHead<S>,
    pub classifier: Linear<S>,
    pub head: HeadConfig,
}

impl<S: Scalar> Network<S> {
    pub fn new(enc: EncoderConfig, head: HeadConfig, seed: u64) -> Result<Self> {
        if head.n_classes < 2 || head.projection_dim == 0 {
            return Err(NnError::Config(format!("head config {head:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(enc, &mut rng)?;
        let projection = ProjectionHead::new(encoder.embed_dim(), &head, &mut rng)?;
        let classifier = Linear::new("classifier", encoder.embed_dim(), head.n_classes, true, &mut rng)?;
        Ok(Self { encoder, projection, classifier, head })
    }

    /// All parameters in a fixed order: encoder, projection, classifier.
    pub fn all_params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut out = Vec::new();
        self.encoder.params_mut(&mut out);
        self.projection.params_mut(&mut out);
        self.classifier.params_mut(&mut out);
        out
    }

    pub fn zero_grad_all(&mut self) {
        for p in self.all_params_mut() {
            p.zero_grad();
        }
    }

    pub fn all_buffers_mut(&mut self) -> Vec<&mut Buffer<S>> {
        let mut out = Vec::new();
        self.encoder.buffers_mut(&mut out);
        out
    }

    /// Representations in evaluation mode.
    pub fn represent(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.encoder.forward(x, false)
    }

    /// Normalized projections in evaluation mode.
    pub fn project(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let r = self.encoder.forward(x, false)?;
        self.projection.forward(&r)
    }

    /// Class logits in evaluation mode.
    pub fn logits(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let r = self.encoder.forward(x, false)?;
        self.classifier.forward(&r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stem_kernels_are_enforced() {
        let mut cfg = EncoderConfig::desk();
        cfg.stem2_kernel = [2, 5];
        assert!(cfg.validate().is_err());
        let mut cfg = EncoderConfig::desk();
        cfg.embed_dim = 128;
        assert!(cfg.validate().is_err());
        assert!(EncoderConfig::paper().validate().is_ok());
    }

    #[test]
    fn encoder_rejects_wrong_input_length() {
        let mut net = Network::<f32>::new(EncoderConfig::desk(), HeadConfig::default(), 1).unwrap();
        let x = Tensor::zeros(&[1, 2, 40]);
        assert!(matches!(net.represent(&x), Err(NnError::Shape { .. })));
    }

    #[test]
    fn paper_preset_embeds_to_512() {
        let mut net = Network::<f32>::new(EncoderConfig::paper(), HeadConfig::default(), 3).unwrap();
        let x = Tensor::new(vec![1, 2, 52], (0..104).map(|v| (v as f32 * 0.1).sin()).collect()).unwrap();
        let r = net.represent(&x).unwrap();
        assert_eq!(r.shape(), &[1, 512]);
        assert!(r.all_finite());
    }
}
