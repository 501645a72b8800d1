use super::{NnError, Result};

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax cross-entropy and its gradient `softmax − one_hot(label)`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(NnError::BadLabel {
            label,
            classes: logits.len(),
        });
    }
    let (top, max) = logits
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, l)| if l > acc.1 { (i, l) } else { acc });
    // The max term contributes exactly 1; log1p keeps tiny remainders.
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .map(|(_, &l)| (l - max).exp())
        .sum();
    let log_sum = rest.ln_1p();
    let log_z = max + log_sum;
    let loss = (max - logits[label]) + log_sum;
    let mut grad: Vec<f64> = logits.iter().map(|&l| (l - log_z).exp()).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}
