//! Loss functions and prediction rules.
//!
//! Classification uses weighted cross-entropy summed over heads and
//! samples; regression uses mean squared error summed over heads. Both
//! return the loss together with its gradient with respect to the logits,
//! which seeds the network backward pass.

use super::Scalar;
use crate::error::{Error, Result};

/// Per-head, per-class weights for the cross-entropy loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    /// `[head][class]`.
    pub weights: Vec<Vec<f64>>,
}

impl ClassWeights {
    /// Uniform weight 1 for every class.
    pub fn uniform(head_classes: &[usize]) -> Self {
        ClassWeights {
            weights: head_classes.iter().map(|&c| vec![1.0; c]).collect(),
        }
    }

    /// Inverse class frequency over training labels, normalized to mean 1
    /// per head. Every class must appear at least once.
    pub fn inverse_frequency(head_classes: &[usize], labels: &[Vec<usize>]) -> Result<Self> {
        let mut weights = Vec::with_capacity(head_classes.len());
        for (h, &classes) in head_classes.iter().enumerate() {
            let mut counts = vec![0usize; classes];
            for sample in labels {
                let y = sample[h];
                if y >= classes {
                    return Err(Error::ClassOutOfRange { index: y, classes });
                }
                counts[y] += 1;
            }
            if let Some(empty) = counts.iter().position(|&c| c == 0) {
                return Err(Error::InvalidConfig(format!(
                    "class {empty} of head {h} has no training samples; \
                     provide explicit class weights"
                )));
            }
            let raw: Vec<f64> = counts.iter().map(|&c| 1.0 / c as f64).collect();
            let mean = raw.iter().sum::<f64>() / classes as f64;
            weights.push(raw.into_iter().map(|w| w / mean).collect());
        }
        Ok(ClassWeights { weights })
    }
}

/// Weighted cross-entropy, summed over heads and samples:
/// `L = sum_w sum_s -phi_{w,y} * log softmax(logits_{s,w})[y_{s,w}]`.
///
/// `logits` is `[head][sample][class]`; `labels` is `[sample][head]`.
/// Returns the loss and `dL/dlogits` with the same shape as `logits`.
pub fn cross_entropy<F: Scalar>(
    logits: &[Vec<Vec<F>>],
    labels: &[Vec<usize>],
    class_weights: &ClassWeights,
) -> Result<(F, Vec<Vec<Vec<F>>>)> {
    let heads = logits.len();
    let mut loss = F::zero();
    let mut dlogits: Vec<Vec<Vec<F>>> = Vec::with_capacity(heads);
    for h in 0..heads {
        let mut dhead = Vec::with_capacity(logits[h].len());
        for (s_idx, sample_logits) in logits[h].iter().enumerate() {
            let classes = sample_logits.len();
            let y = labels[s_idx][h];
            if y >= classes {
                return Err(Error::ClassOutOfRange { index: y, classes });
            }
            let phi = super::s::<F>(class_weights.weights[h][y]);

            // Stable log-softmax via max shift.
            let max = sample_logits
                .iter()
                .cloned()
                .fold(F::neg_infinity(), F::max);
            let sum_exp: F = sample_logits.iter().map(|&z| (z - max).exp()).sum();
            let log_sum_exp = sum_exp.ln() + max;
            loss = loss + phi * (log_sum_exp - sample_logits[y]);

            let mut d = Vec::with_capacity(classes);
            for (j, &z) in sample_logits.iter().enumerate() {
                let softmax = (z - max).exp() / sum_exp;
                let delta = if j == y { F::one() } else { F::zero() };
                d.push(phi * (softmax - delta));
            }
            dhead.push(d);
        }
        dlogits.push(dhead);
    }
    Ok((loss, dlogits))
}

/// Mean squared error summed over heads:
/// `L = sum_w (1/S) sum_s (x_{s,w} - y_{s,w})^2`.
///
/// `outputs` is `[head][sample][1]`; `targets` is `[sample][head]`.
pub fn mean_squared_error<F: Scalar>(
    outputs: &[Vec<Vec<F>>],
    targets: &[Vec<F>],
) -> Result<(F, Vec<Vec<Vec<F>>>)> {
    let heads = outputs.len();
    let mut loss = F::zero();
    let mut dlogits: Vec<Vec<Vec<F>>> = Vec::with_capacity(heads);
    for h in 0..heads {
        let samples = outputs[h].len();
        if samples == 0 {
            return Err(Error::Other("mse needs at least one sample".into()));
        }
        let inv_s = F::one() / super::s::<F>(samples as f64);
        let mut dhead = Vec::with_capacity(samples);
        for (s_idx, sample_out) in outputs[h].iter().enumerate() {
            if sample_out.len() != 1 {
                return Err(Error::DimMismatch {
                    context: "regression head output".into(),
                    left: vec![sample_out.len()],
                    right: vec![1],
                });
            }
            let err = sample_out[0] - targets[s_idx][h];
            loss = loss + inv_s * err * err;
            dhead.push(vec![super::s::<F>(2.0) * err * inv_s]);
        }
        dlogits.push(dhead);
    }
    Ok((loss, dlogits))
}

/// Argmax class per head and sample; ties break toward the lowest index.
pub fn predict_class<F: Scalar>(logits: &[Vec<Vec<F>>]) -> Vec<Vec<usize>> {
    let samples = logits.first().map_or(0, |h| h.len());
    let mut out = vec![Vec::with_capacity(logits.len()); samples];
    for head in logits {
        for (s_idx, sample_logits) in head.iter().enumerate() {
            let mut best = 0;
            for (j, &z) in sample_logits.iter().enumerate() {
                if z > sample_logits[best] {
                    best = j;
                }
            }
            out[s_idx].push(best);
        }
    }
    out
}

/// Regression estimate: the head output itself. `[sample][head]`.
pub fn predict_value<F: Scalar>(outputs: &[Vec<Vec<F>>]) -> Vec<Vec<f64>> {
    let samples = outputs.first().map_or(0, |h| h.len());
    let mut out = vec![Vec::with_capacity(outputs.len()); samples];
    for head in outputs {
        for (s_idx, sample_out) in head.iter().enumerate() {
            out[s_idx].push(sample_out[0].to_f64());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_c() {
        // Two heads with 4 classes, three samples, all-zero logits.
        let logits = vec![vec![vec![0.0f64; 4]; 3]; 2];
        let labels = vec![vec![0, 1], vec![2, 3], vec![1, 0]];
        let weights = ClassWeights::uniform(&[4, 4]);
        let (loss, dlogits) = cross_entropy(&logits, &labels, &weights).unwrap();
        let expected = 2.0 * 3.0 * 4.0f64.ln();
        assert!((loss - expected).abs() < 1e-10, "{loss} vs {expected}");
        // Gradient of the true class is softmax - 1 = -3/4.
        assert!((dlogits[0][0][0] - (0.25 - 1.0)).abs() < 1e-12);
        assert!((dlogits[0][0][1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logit_drives_loss_to_zero() {
        let mut logits = vec![vec![vec![0.0f64; 4]; 1]];
        logits[0][0][2] = 50.0;
        let labels = vec![vec![2]];
        let weights = ClassWeights::uniform(&[4]);
        let (loss, _) = cross_entropy(&logits, &labels, &weights).unwrap();
        assert!(loss < 1e-10, "loss {loss}");
    }

    #[test]
    fn cross_entropy_matches_direct_formula() {
        // Independent log-sum-exp evaluation on a random batch.
        use rand::Rng;
        let mut rng = crate::rng::substream(31, crate::rng::Stream::Sample(0));
        let heads = [3usize, 4];
        let samples = 3;
        let logits: Vec<Vec<Vec<f64>>> = heads
            .iter()
            .map(|&c| {
                (0..samples)
                    .map(|_| (0..c).map(|_| rng.random_range(-2.0..2.0)).collect())
                    .collect()
            })
            .collect();
        let labels: Vec<Vec<usize>> = (0..samples)
            .map(|_| heads.iter().map(|&c| rng.random_range(0..c)).collect())
            .collect();
        let weights = ClassWeights {
            weights: vec![vec![0.5, 1.5, 1.0], vec![2.0, 0.25, 1.0, 0.75]],
        };
        let (loss, _) = cross_entropy(&logits, &labels, &weights).unwrap();

        let mut direct = 0.0;
        for (h, head_logits) in logits.iter().enumerate() {
            for (s, z) in head_logits.iter().enumerate() {
                let y = labels[s][h];
                let denom: f64 = z.iter().map(|&v| v.exp()).sum();
                direct += -weights.weights[h][y] * (z[y].exp() / denom).ln();
            }
        }
        assert!((loss - direct).abs() < 1e-10, "{loss} vs {direct}");
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let logits = vec![vec![vec![0.3f64, -1.2, 2.0]; 1]];
        let shifted = vec![vec![vec![0.3f64 + 100.0, -1.2 + 100.0, 2.0 + 100.0]; 1]];
        let labels = vec![vec![2]];
        let weights = ClassWeights::uniform(&[3]);
        let (a, _) = cross_entropy(&logits, &labels, &weights).unwrap();
        let (b, _) = cross_entropy(&shifted, &labels, &weights).unwrap();
        assert!((a - b).abs() < 1e-10);
        assert_eq!(predict_class(&logits), predict_class(&shifted));
    }

    #[test]
    fn out_of_range_label_rejected() {
        let logits = vec![vec![vec![0.0f64; 3]; 1]];
        let labels = vec![vec![3]];
        let weights = ClassWeights::uniform(&[3]);
        assert!(matches!(
            cross_entropy(&logits, &labels, &weights),
            Err(Error::ClassOutOfRange { index: 3, classes: 3 })
        ));
    }

    #[test]
    fn mse_zero_when_exact() {
        let outputs = vec![vec![vec![1.5f64], vec![-2.0]], vec![vec![0.0], vec![4.0]]];
        let targets = vec![vec![1.5, 0.0], vec![-2.0, 4.0]];
        let (loss, dl) = mean_squared_error(&outputs, &targets).unwrap();
        assert_eq!(loss, 0.0);
        assert!(dl.iter().flatten().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn mse_two_heads_single_sample() {
        // Errors (3, 4) with S = 1: loss = 9 + 16 = 25.
        let outputs = vec![vec![vec![3.0f64]], vec![vec![4.0]]];
        let targets = vec![vec![0.0, 0.0]];
        let (loss, _) = mean_squared_error(&outputs, &targets).unwrap();
        assert!((loss - 25.0).abs() < 1e-12);
    }

    #[test]
    fn mse_matches_direct_formula() {
        use rand::Rng;
        let mut rng = crate::rng::substream(32, crate::rng::Stream::Sample(1));
        let samples = 5;
        let outputs: Vec<Vec<Vec<f64>>> = (0..2)
            .map(|_| (0..samples).map(|_| vec![rng.random_range(-3.0..3.0)]).collect())
            .collect();
        let targets: Vec<Vec<f64>> = (0..samples)
            .map(|_| (0..2).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let (loss, _) = mean_squared_error(&outputs, &targets).unwrap();
        let mut direct = 0.0;
        for h in 0..2 {
            for s in 0..samples {
                direct += (outputs[h][s][0] - targets[s][h]).powi(2) / samples as f64;
            }
        }
        assert!((loss - direct).abs() < 1e-12);
    }

    #[test]
    fn duplicating_samples_doubles_summed_ce_gradients() {
        let logits = vec![vec![vec![0.4f64, -0.3], vec![1.0, 0.2]]];
        let labels = vec![vec![0], vec![1]];
        let weights = ClassWeights::uniform(&[2]);
        let (loss1, d1) = cross_entropy(&logits, &labels, &weights).unwrap();
        let doubled_logits = vec![[logits[0].clone(), logits[0].clone()].concat()];
        let doubled_labels = [labels.clone(), labels.clone()].concat();
        let (loss2, d2) = cross_entropy(&doubled_logits, &doubled_labels, &weights).unwrap();
        assert!((loss2 - 2.0 * loss1).abs() < 1e-12);
        // Per-sample gradients are unchanged; the batch contributes twice.
        let sum1: f64 = d1[0].iter().flatten().map(|g| g.abs()).sum();
        let sum2: f64 = d2[0].iter().flatten().map(|g| g.abs()).sum();
        assert!((sum2 - 2.0 * sum1).abs() < 1e-12);
    }

    #[test]
    fn argmax_prediction_and_ties() {
        let logits = vec![vec![vec![0.1f64, 2.0, -1.0], vec![7.0, 7.0, 3.0]]];
        let pred = predict_class(&logits);
        assert_eq!(pred[0][0], 1);
        assert_eq!(pred[1][0], 0); // tie toward the lowest index

        let outputs = vec![vec![vec![3.7f64]]];
        assert_eq!(predict_value(&outputs)[0][0], 3.7);
    }
}
