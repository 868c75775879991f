/// Softmax cross-entropy for one sample. Returns the loss and its gradient
/// with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[label];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

/// Sum of squared differences and its gradient with respect to `output`.
pub fn squared_error(output: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let grad: Vec<f64> = output
        .iter()
        .zip(target)
        .map(|(o, t)| 2.0 * (o - t))
        .collect();
    let loss = output
        .iter()
        .zip(target)
        .map(|(o, t)| (o - t) * (o - t))
        .sum();
    (loss, grad)
}
