//! Fused softmax and cross-entropy over N×S logit matrices, with the
//! usual max-subtraction so large logits cannot overflow the exponentials.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean loss, per-row class probabilities, and the logit gradient of the
/// mean loss: `(softmax - onehot) / N`.
pub struct XentOutput {
    pub loss: f64,
    pub probs: Tensor,
    pub logit_grad: Tensor,
}

pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<XentOutput> {
    let (n, s) = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::Dimension(format!(
            "{} labels for {n} logit rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= s) {
        return Err(Error::Data(format!(
            "label {bad} is out of range for {s} classes"
        )));
    }

    let mut probs = Tensor::zeros(vec![n, s]);
    let mut logit_grad = Tensor::zeros(vec![n, s]);
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;

    for (row, (&label, (p_row, g_row))) in logits.data().chunks(s).zip(
        labels
            .iter()
            .zip(probs.data_mut().chunks_mut(s).zip(logit_grad.data_mut().chunks_mut(s))),
    ) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for (p, &z) in p_row.iter_mut().zip(row) {
            *p = (z - max).exp();
            denom += *p;
        }
        for p in p_row.iter_mut() {
            *p /= denom;
        }
        // log p_label computed from the shifted logits directly, not from
        // the normalized probability, to avoid log of a rounded value.
        loss -= row[label] - max - denom.ln();
        for (g, &p) in g_row.iter_mut().zip(p_row.iter()) {
            *g = p * inv_n;
        }
        g_row[label] -= inv_n;
    }

    Ok(XentOutput {
        loss: loss * inv_n,
        probs,
        logit_grad,
    })
}
