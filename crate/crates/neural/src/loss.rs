//! Supervised contrastive and cross-entropy losses with analytic gradients.

use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Loss value together with its gradient with respect to the input.
#[derive(Debug, Clone)]
pub struct LossOutput<S> {
    pub value: S,
    pub grad: Tensor<S>,
}

/// Supervised contrastive loss over a batch of normalized embeddings `z` (`[B, D]`).
///
/// For each anchor `i` with at least one positive, the loss is the negative
/// mean over positives `j` of `log softmax_{k != i}(z_i . z_k / tau)` evaluated
/// at `j`. Anchors without positives are skipped; the result is the mean over
/// the remaining anchors.
pub fn supcon_loss<S: Scalar>(z: &Tensor<S>, labels: &[usize], tau: f64) -> Result<LossOutput<S>> {
    if !(tau > 0.0) {
        return Err(NnError::Loss(format!("temperature must be positive, got {tau}")));
    }
    let &[b, d] = z.shape() else {
        return Err(NnError::Shape {
            context: "supcon_loss",
            expected: vec![labels.len(), 0],
            got: z.shape().to_vec(),
        });
    };
    if b != labels.len() {
        return Err(NnError::Shape { context: "supcon_loss labels", expected: vec![b], got: vec![labels.len()] });
    }
    if b < 2 {
        return Err(NnError::Loss("batch needs at least two samples".into()));
    }
    let inv_tau = S::from_f64(1.0 / tau);
    let zd = z.data();
    let mut sim = vec![S::ZERO; b * b];
    for i in 0..b {
        for j in i..b {
            let s: S = zd[i * d..(i + 1) * d].iter().zip(&zd[j * d..(j + 1) * d]).map(|(&x, &y)| x * y).sum();
            sim[i * b + j] = s * inv_tau;
            sim[j * b + i] = s * inv_tau;
        }
    }
    // dL/dsim, later mapped back onto z.
    let mut gsim = vec![S::ZERO; b * b];
    let mut total = S::ZERO;
    let mut anchors = 0usize;
    let mut prob = vec![S::ZERO; b];
    for i in 0..b {
        let positives = (0..b).filter(|&j| j != i && labels[j] == labels[i]).count();
        if positives == 0 {
            continue;
        }
        anchors += 1;
        let row = &sim[i * b..(i + 1) * b];
        let max = (0..b).filter(|&k| k != i).map(|k| row[k]).fold(row[if i == 0 { 1 } else { 0 }], S::max);
        let mut denom = S::ZERO;
        for k in 0..b {
            prob[k] = if k == i { S::ZERO } else { (row[k] - max).exp() };
            denom += prob[k];
        }
        let log_denom = denom.ln() + max;
        let inv_p = S::ONE / S::from_f64(positives as f64);
        let mut li = S::ZERO;
        for j in 0..b {
            if j != i && labels[j] == labels[i] {
                li -= row[j] - log_denom;
            }
        }
        total += li * inv_p;
        for k in 0..b {
            if k == i {
                continue;
            }
            let mut g = prob[k] / denom;
            if labels[k] == labels[i] {
                g -= inv_p;
            }
            gsim[i * b + k] = g;
        }
    }
    if anchors == 0 {
        return Err(NnError::Loss("no anchor in the batch has a positive".into()));
    }
    let scale = S::ONE / S::from_f64(anchors as f64);
    let mut grad = vec![S::ZERO; b * d];
    for i in 0..b {
        for k in 0..b {
            let g = gsim[i * b + k];
            if g == S::ZERO {
                continue;
            }
            let g = g * scale * inv_tau;
            for t in 0..d {
                let zi = zd[i * d + t];
                let zk = zd[k * d + t];
                grad[i * d + t] += g * zk;
                grad[k * d + t] += g * zi;
            }
        }
    }
    Ok(LossOutput { value: total * scale, grad: Tensor::new(vec![b, d], grad)? })
}

/// Mean cross-entropy of `logits` (`[B, K]`) against integer labels.
pub fn ce_loss<S: Scalar>(logits: &Tensor<S>, labels: &[usize]) -> Result<LossOutput<S>> {
    let &[b, k] = logits.shape() else {
        return Err(NnError::Shape {
            context: "ce_loss",
            expected: vec![labels.len(), 0],
            got: logits.shape().to_vec(),
        });
    };
    if b != labels.len() || b == 0 {
        return Err(NnError::Shape { context: "ce_loss labels", expected: vec![b], got: vec![labels.len()] });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(NnError::Loss(format!("label {bad} out of range for {k} classes")));
    }
    let inv_b = S::ONE / S::from_f64(b as f64);
    let mut grad = vec![S::ZERO; b * k];
    let mut total = S::ZERO;
    for (i, row) in logits.data().chunks(k).enumerate() {
        let max = row.iter().copied().fold(row[0], S::max);
        let denom: S = row.iter().map(|&v| (v - max).exp()).sum();
        let log_denom = denom.ln() + max;
        total += log_denom - row[labels[i]];
        for (c, g) in grad[i * k..(i + 1) * k].iter_mut().enumerate() {
            let p = (row[c] - max).exp() / denom;
            *g = (p - if c == labels[i] { S::ONE } else { S::ZERO }) * inv_b;
        }
    }
    Ok(LossOutput { value: total * inv_b, grad: Tensor::new(vec![b, k], grad)? })
}

/// Index of the largest logit per row.
pub fn argmax_rows<S: Scalar>(logits: &Tensor<S>) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}
