//! Central finite-difference checks against the analytic backward passes.
//!
//! The reference values come from forward evaluations only, so they are
//! independent of the backward code they check. Runs in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::loss::{ce_loss, supcon_loss};
use crate::model::{EncoderConfig, HeadConfig, Network};
use crate::tensor::Tensor;

/// Worst disagreement found by a check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
}

impl GradReport {
    fn new() -> Self {
        Self { max_rel_err: 0.0, worst: String::new(), checked: 0 }
    }

    fn record(&mut self, what: &str, analytic: f64, numeric: f64) {
        // Floor keeps near-zero gradients from dominating through rounding noise.
        let denom = analytic.abs().max(numeric.abs()).max(1e-6);
        let rel = (analytic - numeric).abs() / denom;
        self.checked += 1;
        if rel > self.max_rel_err {
            self.max_rel_err = rel;
            self.worst = format!("{what}: analytic {analytic:.6e} numeric {numeric:.6e}");
        }
    }
}

/// Which part of the network the scalar objective is built on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// Weighted sum of the representation `r`.
    Encoder,
    /// Weighted sum of the normalized projection `z`.
    Projection,
    /// Weighted sum of the classifier logits.
    Classifier,
}

/// Small encoder that still has both stems, a strided stage and a projection shortcut.
pub fn tiny_encoder(stem1_shared: bool) -> EncoderConfig {
    EncoderConfig {
        input_len: 8,
        stem1_filters: 2,
        stem1_shared,
        stem2_filters: 3,
        block_widths: vec![3, 4],
        blocks_per_stage: 1,
        embed_dim: 4,
        ..EncoderConfig::desk()
    }
}

fn objective(net: &mut Network<f64>, x: &Tensor<f64>, w: &[f64], target: Target) -> Result<f64> {
    let r = net.encoder.forward(x, true)?;
    let out = match target {
        Target::Encoder => r,
        Target::Projection => net.projection.forward(&r)?,
        Target::Classifier => net.classifier.forward(&r)?,
    };
    Ok(out.data().iter().zip(w).map(|(a, b)| a * b).sum())
}

/// Perturb every parameter and input element of `net` and compare.
pub fn check_network(
    enc: EncoderConfig,
    head: HeadConfig,
    batch: usize,
    target: Target,
    step: f64,
    seed: u64,
) -> Result<GradReport> {
    let mut net = Network::<f64>::new(enc.clone(), head.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF00D);
    let n_in = batch * 2 * enc.input_len;
    let x = Tensor::new(vec![batch, 2, enc.input_len], (0..n_in).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let out_dim = match target {
        Target::Encoder => enc.embed_dim,
        Target::Projection => head.projection_dim,
        Target::Classifier => head.n_classes,
    };
    let w: Vec<f64> = (0..batch * out_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();

    // Analytic pass.
    net.zero_grad_all();
    let r = net.encoder.forward(&x, true)?;
    let dr = match target {
        Target::Encoder => Tensor::new(r.shape().to_vec(), w.clone())?,
        Target::Projection => {
            let z = net.projection.forward(&r)?;
            net.projection.backward(&Tensor::new(z.shape().to_vec(), w.clone())?)?
        }
        Target::Classifier => {
            let s = net.classifier.forward(&r)?;
            net.classifier.backward(&Tensor::new(s.shape().to_vec(), w.clone())?)?
        }
    };
    let dx = net.encoder.backward(&dr)?;
    let grads: Vec<(String, Vec<f64>)> =
        net.all_params_mut().into_iter().map(|p| (p.name.clone(), p.grad.clone())).collect();

    let mut report = GradReport::new();
    let n_params = grads.len();
    for (pi, (name, grad)) in grads.iter().enumerate().take(n_params) {
        for e in 0..grad.len() {
            let orig = net.all_params_mut()[pi].value.data()[e];
            net.all_params_mut()[pi].value.data_mut()[e] = orig + step;
            let plus = objective(&mut net, &x, &w, target)?;
            net.all_params_mut()[pi].value.data_mut()[e] = orig - step;
            let minus = objective(&mut net, &x, &w, target)?;
            net.all_params_mut()[pi].value.data_mut()[e] = orig;
            report.record(&format!("{name}[{e}]"), grad[e], (plus - minus) / (2.0 * step));
        }
    }
    for e in 0..n_in {
        let mut xp = x.clone();
        xp.data_mut()[e] += step;
        let plus = objective(&mut net, &xp, &w, target)?;
        xp.data_mut()[e] -= 2.0 * step;
        let minus = objective(&mut net, &xp, &w, target)?;
        report.record(&format!("input[{e}]"), dx.data()[e], (plus - minus) / (2.0 * step));
    }
    Ok(report)
}

/// Gradient of the SupCon loss with respect to the embeddings.
pub fn check_supcon(z: &Tensor<f64>, labels: &[usize], tau: f64, step: f64) -> Result<GradReport> {
    let analytic = supcon_loss(z, labels, tau)?.grad;
    let mut report = GradReport::new();
    for e in 0..z.len() {
        let mut zp = z.clone();
        zp.data_mut()[e] += step;
        let plus = supcon_loss(&zp, labels, tau)?.value;
        zp.data_mut()[e] -= 2.0 * step;
        let minus = supcon_loss(&zp, labels, tau)?.value;
        report.record(&format!("z[{e}]"), analytic.data()[e], (plus - minus) / (2.0 * step));
    }
    Ok(report)
}

/// Gradient of the cross-entropy loss with respect to the logits.
pub fn check_ce(logits: &Tensor<f64>, labels: &[usize], step: f64) -> Result<GradReport> {
    let analytic = ce_loss(logits, labels)?.grad;
    let mut report = GradReport::new();
    for e in 0..logits.len() {
        let mut lp = logits.clone();
        lp.data_mut()[e] += step;
        let plus = ce_loss(&lp, labels)?.value;
        lp.data_mut()[e] -= 2.0 * step;
        let minus = ce_loss(&lp, labels)?.value;
        report.record(&format!("logit[{e}]"), analytic.data()[e], (plus - minus) / (2.0 * step));
    }
    Ok(report)
}
