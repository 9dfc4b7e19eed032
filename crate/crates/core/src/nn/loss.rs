use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean softmax cross-entropy over the batch and its gradient
/// `(softmax − onehot) / N` w.r.t. the logits.
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, classes) = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::mismatch(&[n], &[labels.len()]));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    logits.ensure_finite("logits")?;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.numel());
    for (row, &label) in logits.data().chunks(classes).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + total.ln();
        loss += log_z - row[label];
        for (j, &v) in row.iter().enumerate() {
            let p = (v - log_z).exp();
            let target = if j == label { 1.0 } else { 0.0 };
            grad.push((p - target) / n as f64);
        }
    }
    Ok((loss / n as f64, Tensor::new(logits.shape(), grad)?))
}

/// Row-wise argmax of an `N×Y` score matrix.
pub fn predictions(logits: &Tensor) -> Result<Vec<usize>> {
    let (_, classes) = logits.dims2()?;
    Ok(logits
        .data()
        .chunks(classes)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                .0
        })
        .collect())
}

/// Number of rows whose argmax differs from the label.
pub fn count_errors(logits: &Tensor, labels: &[usize]) -> Result<usize> {
    Ok(predictions(logits)?
        .iter()
        .zip(labels)
        .filter(|(p, l)| p != l)
        .count())
}
