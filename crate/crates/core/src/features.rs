//! Feature engineering: four real channels from the co-pol and cross-pol
//! periodograms, plus channel-wise normalization statistics.
//!
//! Channel order is fixed: `[Re(co-pol), Im(co-pol), Re(cross-pol),
//! Im(cross-pol)]`. Normalization statistics are fit over the training set
//! only (every element of every training tensor, per channel, population
//! standard deviation) and frozen for test and inference.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ofdm::PolarizationPair;
use crate::radar::Periodogram;

pub const CHANNELS: usize = 4;

/// Real-valued network input of shape rows x cols x 4.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub values: Array3<f64>,
    pub normalized: bool,
}

impl FeatureTensor {
    pub fn dims(&self) -> (usize, usize, usize) {
        self.values.dim()
    }
}

/// Assemble the unnormalized feature tensor from the two polarization
/// periodograms of one frame.
pub fn assemble_features(copol: &Periodogram, crosspol: &Periodogram) -> Result<FeatureTensor> {
    if copol.values.dim() != crosspol.values.dim() {
        return Err(Error::DimMismatch {
            context: "co-pol vs cross-pol periodogram".into(),
            left: vec![copol.values.nrows(), copol.values.ncols()],
            right: vec![crosspol.values.nrows(), crosspol.values.ncols()],
        });
    }
    if copol.pair != PolarizationPair::CoPol || crosspol.pair != PolarizationPair::CrossPol {
        return Err(Error::Other(
            "assemble_features expects (co-pol, cross-pol) in that order".into(),
        ));
    }
    let (rows, cols) = copol.values.dim();
    let mut values = Array3::zeros((rows, cols, CHANNELS));
    for ((r, c), z) in copol.values.indexed_iter() {
        values[(r, c, 0)] = z.re;
        values[(r, c, 1)] = z.im;
    }
    for ((r, c), z) in crosspol.values.indexed_iter() {
        values[(r, c, 2)] = z.re;
        values[(r, c, 3)] = z.im;
    }
    Ok(FeatureTensor {
        values,
        normalized: false,
    })
}

/// Per-channel mean and population standard deviation over a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; CHANNELS],
    pub std: [f64; CHANNELS],
    pub sample_count: u64,
}

/// Streaming per-channel accumulator (Welford); partial accumulators merge,
/// so fitting can run over chunks.
#[derive(Debug, Clone, Default)]
pub struct NormAccumulator {
    count: [u64; CHANNELS],
    mean: [f64; CHANNELS],
    m2: [f64; CHANNELS],
    tensors: u64,
    dims: Option<(usize, usize)>,
}

impl NormAccumulator {
    pub fn update(&mut self, tensor: &FeatureTensor) -> Result<()> {
        if tensor.normalized {
            return Err(Error::Other(
                "normalization statistics must be fit on unnormalized features".into(),
            ));
        }
        let (rows, cols, channels) = tensor.dims();
        if channels != CHANNELS {
            return Err(Error::DimMismatch {
                context: "feature channels".into(),
                left: vec![channels],
                right: vec![CHANNELS],
            });
        }
        match self.dims {
            None => self.dims = Some((rows, cols)),
            Some(d) if d != (rows, cols) => {
                return Err(Error::DimMismatch {
                    context: "feature tensor dims".into(),
                    left: vec![rows, cols],
                    right: vec![d.0, d.1],
                })
            }
            _ => {}
        }
        for ((_, _, l), &x) in tensor.values.indexed_iter() {
            self.count[l] += 1;
            let delta = x - self.mean[l];
            self.mean[l] += delta / self.count[l] as f64;
            self.m2[l] += delta * (x - self.mean[l]);
        }
        self.tensors += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &NormAccumulator) -> Result<()> {
        match (self.dims, other.dims) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::DimMismatch {
                    context: "merging normalization accumulators".into(),
                    left: vec![a.0, a.1],
                    right: vec![b.0, b.1],
                })
            }
            (None, Some(b)) => self.dims = Some(b),
            _ => {}
        }
        for l in 0..CHANNELS {
            let (na, nb) = (self.count[l] as f64, other.count[l] as f64);
            if nb == 0.0 {
                continue;
            }
            let delta = other.mean[l] - self.mean[l];
            let n = na + nb;
            self.mean[l] = (na * self.mean[l] + nb * other.mean[l]) / n;
            self.m2[l] += other.m2[l] + delta * delta * na * nb / n;
            self.count[l] += other.count[l];
        }
        self.tensors += other.tensors;
        Ok(())
    }

    pub fn finish(self) -> Result<NormStats> {
        if self.tensors == 0 {
            return Err(Error::Other(
                "normalization statistics need at least one tensor".into(),
            ));
        }
        let mut mean = [0.0; CHANNELS];
        let mut std = [0.0; CHANNELS];
        for l in 0..CHANNELS {
            mean[l] = self.mean[l];
            let variance = self.m2[l] / self.count[l] as f64;
            std[l] = variance.sqrt();
            if !(std[l] > 0.0) {
                return Err(Error::ZeroVarianceChannel { channel: l });
            }
        }
        Ok(NormStats {
            mean,
            std,
            sample_count: self.tensors,
        })
    }
}

/// Fit normalization statistics over training tensors.
pub fn fit_norm_stats<'a>(
    tensors: impl IntoIterator<Item = &'a FeatureTensor>,
) -> Result<NormStats> {
    let mut acc = NormAccumulator::default();
    for t in tensors {
        acc.update(t)?;
    }
    acc.finish()
}

/// Apply frozen statistics: `(x - mean) / std` per channel.
pub fn apply_norm(tensor: &FeatureTensor, stats: &NormStats) -> Result<FeatureTensor> {
    if tensor.normalized {
        return Err(Error::Other("features are already normalized".into()));
    }
    let mut values = tensor.values.clone();
    for ((_, _, l), x) in values.indexed_iter_mut() {
        *x = (*x - stats.mean[l]) / stats.std[l];
    }
    Ok(FeatureTensor {
        values,
        normalized: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use num_complex::Complex64;

    fn periodogram(values: Array2<Complex64>, pair: PolarizationPair) -> Periodogram {
        Periodogram {
            values,
            range_bin_m: 1.0,
            speed_bin_mps: 1.0,
            pair,
        }
    }

    fn constant_features(rows: usize, cols: usize, ch: [f64; 4]) -> FeatureTensor {
        let mut values = Array3::zeros((rows, cols, CHANNELS));
        for ((_, _, l), x) in values.indexed_iter_mut() {
            *x = ch[l];
        }
        FeatureTensor {
            values,
            normalized: false,
        }
    }

    #[test]
    fn channel_order_is_fixed() {
        let copol = periodogram(
            Array2::from_elem((3, 2), Complex64::new(1.0, 2.0)),
            PolarizationPair::CoPol,
        );
        let crosspol = periodogram(
            Array2::from_elem((3, 2), Complex64::new(3.0, -4.0)),
            PolarizationPair::CrossPol,
        );
        let f = assemble_features(&copol, &crosspol).unwrap();
        assert_eq!(f.dims(), (3, 2, 4));
        for r in 0..3 {
            for c in 0..2 {
                assert_eq!(f.values[(r, c, 0)], 1.0);
                assert_eq!(f.values[(r, c, 1)], 2.0);
                assert_eq!(f.values[(r, c, 2)], 3.0);
                assert_eq!(f.values[(r, c, 3)], -4.0);
            }
        }
    }

    #[test]
    fn real_periodograms_have_zero_imaginary_channels() {
        let copol = periodogram(
            Array2::from_elem((2, 2), Complex64::new(0.5, 0.0)),
            PolarizationPair::CoPol,
        );
        let crosspol = periodogram(
            Array2::from_elem((2, 2), Complex64::new(-0.25, 0.0)),
            PolarizationPair::CrossPol,
        );
        let f = assemble_features(&copol, &crosspol).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                assert_eq!(f.values[(r, c, 1)], 0.0);
                assert_eq!(f.values[(r, c, 3)], 0.0);
            }
        }
    }

    #[test]
    fn mismatched_dims_and_wrong_order_rejected() {
        let copol = periodogram(Array2::zeros((2, 2)), PolarizationPair::CoPol);
        let small = periodogram(Array2::zeros((2, 1)), PolarizationPair::CrossPol);
        assert!(assemble_features(&copol, &small).is_err());
        let crosspol = periodogram(Array2::zeros((2, 2)), PolarizationPair::CrossPol);
        assert!(assemble_features(&crosspol, &copol).is_err());
    }

    #[test]
    fn constant_channel_is_degenerate() {
        let t = constant_features(2, 2, [1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(
            fit_norm_stats([&t]),
            Err(Error::ZeroVarianceChannel { channel: 0 })
        ));
    }

    #[test]
    fn two_point_distribution_has_unit_std() {
        let a = constant_features(2, 3, [0.0, 0.0, 0.0, 0.0]);
        let b = constant_features(2, 3, [2.0, 4.0, -2.0, 6.0]);
        let stats = fit_norm_stats([&a, &b]).unwrap();
        assert!((stats.mean[0] - 1.0).abs() < 1e-12);
        assert!((stats.std[0] - 1.0).abs() < 1e-12);
        assert!((stats.mean[1] - 2.0).abs() < 1e-12);
        assert!((stats.std[1] - 2.0).abs() < 1e-12);
        assert_eq!(stats.sample_count, 2);
    }

    #[test]
    fn renormalizing_training_set_is_self_consistent() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let tensors: Vec<FeatureTensor> = (0..100)
            .map(|_| {
                let mut values = Array3::zeros((6, 4, CHANNELS));
                for ((_, _, l), x) in values.indexed_iter_mut() {
                    *x = rng.random_range(-1.0..1.0) * (l + 1) as f64 + l as f64;
                }
                FeatureTensor {
                    values,
                    normalized: false,
                }
            })
            .collect();
        let stats = fit_norm_stats(tensors.iter()).unwrap();
        let normalized: Vec<FeatureTensor> = tensors
            .iter()
            .map(|t| apply_norm(t, &stats).unwrap())
            .collect();
        // Refit on normalized data (bypassing the flag check via raw copies).
        let raw: Vec<FeatureTensor> = normalized
            .iter()
            .map(|t| FeatureTensor {
                values: t.values.clone(),
                normalized: false,
            })
            .collect();
        let refit = fit_norm_stats(raw.iter()).unwrap();
        for l in 0..CHANNELS {
            assert!(refit.mean[l].abs() < 1e-6, "mean[{l}] = {}", refit.mean[l]);
            assert!(
                (refit.std[l] - 1.0).abs() < 1e-6,
                "std[{l}] = {}",
                refit.std[l]
            );
        }
    }

    #[test]
    fn double_normalization_rejected() {
        let a = constant_features(2, 2, [0.0; 4]);
        let b = constant_features(2, 2, [1.0, 2.0, 3.0, 4.0]);
        let stats = fit_norm_stats([&a, &b]).unwrap();
        let once = apply_norm(&a, &stats).unwrap();
        assert!(apply_norm(&once, &stats).is_err());
        assert!(fit_norm_stats([&once]).is_err());
    }

    #[test]
    fn merged_accumulators_match_single_pass() {
        let a = constant_features(1, 2, [0.0, 1.0, 2.0, 3.0]);
        let b = constant_features(1, 2, [4.0, -1.0, 0.0, 3.5]);
        let c = constant_features(1, 2, [2.0, 0.5, 1.0, -3.0]);
        let mut single = NormAccumulator::default();
        for t in [&a, &b, &c] {
            single.update(t).unwrap();
        }
        let mut left = NormAccumulator::default();
        left.update(&a).unwrap();
        let mut right = NormAccumulator::default();
        right.update(&b).unwrap();
        right.update(&c).unwrap();
        left.merge(&right).unwrap();
        let s = single.finish().unwrap();
        let m = left.finish().unwrap();
        for l in 0..CHANNELS {
            assert!((s.mean[l] - m.mean[l]).abs() < 1e-12);
            assert!((s.std[l] - m.std[l]).abs() < 1e-12);
        }
    }
}
