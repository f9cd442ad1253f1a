//! A small CNN, written out by hand: two 3x3 convolutions with ReLU and
//! 2x2 max pooling, a flatten, and one fully connected head per weather
//! metric. Exact analytic gradients, verified against central finite
//! differences.
//!
//! Layer stack (channels 4 -> 8 -> 16, stride 1, padding 1):
//!
//! ```text
//! input 4 x H x W
//!   -> conv 3x3 (8) -> ReLU -> maxpool 2x2/2
//!   -> conv 3x3 (16) -> ReLU -> maxpool 2x2/2
//!   -> flatten (16 * floor(H/4) * floor(W/4))
//!   -> dense head per metric (C_w outputs)
//! ```
//!
//! Everything is generic over the scalar type; training defaults to `f64`
//! so loss trajectories are bit-reproducible, with `f32` as an option.

pub mod adam;
pub mod loss;

use num_traits::Float;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::CHANNELS;
use crate::rng::{substream, Stream};

/// Scalar type the network computes in.
pub trait Scalar:
    Float + num_traits::FromPrimitive + std::iter::Sum + std::fmt::Debug + Send + Sync + 'static
{
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn to_f64(self) -> f64 {
        self
    }
}

#[inline]
fn s<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("f64 convertible to scalar")
}

pub const CONV1_CHANNELS: usize = 8;
pub const CONV2_CHANNELS: usize = 16;
pub const KERNEL: usize = 3;

/// Input extents and head sizes of a model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CnnConfig {
    pub input_rows: usize,
    pub input_cols: usize,
    /// Output classes per head; `[c_precipitation, c_wind]` for
    /// classification, `[1, 1]` for regression.
    pub head_classes: Vec<usize>,
}

impl CnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_rows < 4 || self.input_cols < 4 {
            return Err(Error::InvalidConfig(format!(
                "input {}x{} too small for two 2x2 poolings",
                self.input_rows, self.input_cols
            )));
        }
        if self.head_classes.is_empty() || self.head_classes.iter().any(|&c| c == 0) {
            return Err(Error::InvalidConfig("heads must have >= 1 output".into()));
        }
        Ok(())
    }

    /// Flattened feature length going into each head.
    pub fn dense_inputs(&self) -> usize {
        CONV2_CHANNELS * (self.input_rows / 4) * (self.input_cols / 4)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<F> {
    /// `[out][in][ky][kx]`, row-major.
    pub weights: Vec<F>,
    pub bias: Vec<F>,
    pub in_channels: usize,
    pub out_channels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    /// `[out][in]`, row-major.
    pub weights: Vec<F>,
    pub bias: Vec<F>,
    pub in_features: usize,
    pub out_features: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel<F> {
    pub config: CnnConfig,
    pub conv1: Conv2d<F>,
    pub conv2: Conv2d<F>,
    pub heads: Vec<Dense<F>>,
}

/// Gradients with the same group layout as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub conv1_weights: Vec<F>,
    pub conv1_bias: Vec<F>,
    pub conv2_weights: Vec<F>,
    pub conv2_bias: Vec<F>,
    pub heads: Vec<(Vec<F>, Vec<F>)>,
}

impl<F: Scalar> Gradients<F> {
    fn zeros_like(model: &CnnModel<F>) -> Self {
        Gradients {
            conv1_weights: vec![F::zero(); model.conv1.weights.len()],
            conv1_bias: vec![F::zero(); model.conv1.bias.len()],
            conv2_weights: vec![F::zero(); model.conv2.weights.len()],
            conv2_bias: vec![F::zero(); model.conv2.bias.len()],
            heads: model
                .heads
                .iter()
                .map(|h| (vec![F::zero(); h.weights.len()], vec![F::zero(); h.bias.len()]))
                .collect(),
        }
    }

    fn add_assign(&mut self, other: &Gradients<F>) {
        let add = |a: &mut [F], b: &[F]| {
            for (x, y) in a.iter_mut().zip(b) {
                *x = *x + *y;
            }
        };
        add(&mut self.conv1_weights, &other.conv1_weights);
        add(&mut self.conv1_bias, &other.conv1_bias);
        add(&mut self.conv2_weights, &other.conv2_weights);
        add(&mut self.conv2_bias, &other.conv2_bias);
        for ((w, b), (ow, ob)) in self.heads.iter_mut().zip(&other.heads) {
            add(w, ow);
            add(b, ob);
        }
    }

    /// Flat views in the fixed group order (matches
    /// [`CnnModel::param_groups`]).
    pub fn groups(&self) -> Vec<&[F]> {
        let mut g: Vec<&[F]> = vec![
            &self.conv1_weights,
            &self.conv1_bias,
            &self.conv2_weights,
            &self.conv2_bias,
        ];
        for (w, b) in &self.heads {
            g.push(w);
            g.push(b);
        }
        g
    }
}

/// Names of the parameter groups, aligned with [`CnnModel::param_groups`].
pub fn group_names(heads: usize) -> Vec<String> {
    let mut names = vec![
        "conv1.weights".to_string(),
        "conv1.bias".to_string(),
        "conv2.weights".to_string(),
        "conv2.bias".to_string(),
    ];
    for h in 0..heads {
        names.push(format!("head{h}.weights"));
        names.push(format!("head{h}.bias"));
    }
    names
}

impl<F: Scalar> CnnModel<F> {
    /// Initialize with uniform fan-in scaling (+-sqrt(1/fan_in)), seeded.
    /// Draw order: conv1 weights, conv1 bias, conv2 weights, conv2 bias,
    /// then each head's weights and bias.
    pub fn init(config: CnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = substream(seed, Stream::WeightInit);
        let mut draw = |count: usize, fan_in: usize| -> Vec<F> {
            let bound = (1.0 / fan_in as f64).sqrt();
            (0..count)
                .map(|_| s::<F>(rng.random_range(-bound..bound)))
                .collect()
        };
        let conv_fan1 = CHANNELS * KERNEL * KERNEL;
        let conv1 = Conv2d {
            weights: draw(CONV1_CHANNELS * conv_fan1, conv_fan1),
            bias: draw(CONV1_CHANNELS, conv_fan1),
            in_channels: CHANNELS,
            out_channels: CONV1_CHANNELS,
        };
        let conv_fan2 = CONV1_CHANNELS * KERNEL * KERNEL;
        let conv2 = Conv2d {
            weights: draw(CONV2_CHANNELS * conv_fan2, conv_fan2),
            bias: draw(CONV2_CHANNELS, conv_fan2),
            in_channels: CONV1_CHANNELS,
            out_channels: CONV2_CHANNELS,
        };
        let dense_in = config.dense_inputs();
        let heads = config
            .head_classes
            .iter()
            .map(|&c| Dense {
                weights: draw(c * dense_in, dense_in),
                bias: draw(c, dense_in),
                in_features: dense_in,
                out_features: c,
            })
            .collect();
        Ok(CnnModel {
            config,
            conv1,
            conv2,
            heads,
        })
    }

    /// Mutable flat views over all parameter groups, fixed order.
    pub fn param_groups_mut(&mut self) -> Vec<&mut [F]> {
        let mut g: Vec<&mut [F]> = vec![
            &mut self.conv1.weights,
            &mut self.conv1.bias,
            &mut self.conv2.weights,
            &mut self.conv2.bias,
        ];
        for h in &mut self.heads {
            g.push(&mut h.weights);
            g.push(&mut h.bias);
        }
        g
    }

    /// Immutable flat views over all parameter groups, fixed order.
    pub fn param_groups(&self) -> Vec<&[F]> {
        let mut g: Vec<&[F]> = vec![
            &self.conv1.weights,
            &self.conv1.bias,
            &self.conv2.weights,
            &self.conv2.bias,
        ];
        for h in &self.heads {
            g.push(&h.weights);
            g.push(&h.bias);
        }
        g
    }

    pub fn parameter_count(&self) -> usize {
        self.param_groups().iter().map(|g| g.len()).sum()
    }

    /// Forward pass over a batch. Inputs are CHW-flattened tensors of
    /// length `4 * rows * cols`. Returns logits as `[head][sample][class]`
    /// plus the caches backward needs. Samples run in parallel; outputs
    /// are in batch order regardless of scheduling.
    pub fn forward_batch(&self, inputs: &[&[F]]) -> Result<BatchForward<F>> {
        let expected = CHANNELS * self.config.input_rows * self.config.input_cols;
        for input in inputs {
            if input.len() != expected {
                return Err(Error::DimMismatch {
                    context: "network input".into(),
                    left: vec![input.len()],
                    right: vec![expected],
                });
            }
        }
        let caches: Vec<SampleCache<F>> = inputs
            .par_iter()
            .map(|input| self.forward_sample(input))
            .collect();
        let mut logits = vec![Vec::with_capacity(inputs.len()); self.heads.len()];
        for cache in &caches {
            for (h, head_logits) in cache.logits.iter().enumerate() {
                logits[h].push(head_logits.clone());
            }
        }
        Ok(BatchForward { logits, caches })
    }

    fn forward_sample(&self, input: &[F]) -> SampleCache<F> {
        let (h, w) = (self.config.input_rows, self.config.input_cols);
        let conv1_pre = conv_forward(input, h, w, &self.conv1);
        let act1 = relu(&conv1_pre);
        let (h1, w1) = (h / 2, w / 2);
        let (pool1_out, pool1_idx) = maxpool(&act1, self.conv1.out_channels, h, w);
        let conv2_pre = conv_forward(&pool1_out, h1, w1, &self.conv2);
        let act2 = relu(&conv2_pre);
        let (pool2_out, pool2_idx) = maxpool(&act2, self.conv2.out_channels, h1, w1);
        let logits = self
            .heads
            .iter()
            .map(|head| dense_forward(&pool2_out, head))
            .collect();
        SampleCache {
            conv1_pre,
            pool1_out,
            pool1_idx,
            conv2_pre,
            pool2_out,
            pool2_idx,
            logits,
        }
    }

    /// Backward pass: exact gradients of the loss whose per-logit
    /// derivatives are `dlogits` (`[head][sample][class]`), given the
    /// forward caches for the same batch. Per-sample gradients are reduced
    /// in batch order, so the result is deterministic.
    pub fn backward_batch(
        &self,
        inputs: &[&[F]],
        forward: &BatchForward<F>,
        dlogits: &[Vec<Vec<F>>],
    ) -> Result<Gradients<F>> {
        if dlogits.len() != self.heads.len() {
            return Err(Error::DimMismatch {
                context: "dlogits heads".into(),
                left: vec![dlogits.len()],
                right: vec![self.heads.len()],
            });
        }
        let per_sample: Vec<Gradients<F>> = inputs
            .par_iter()
            .enumerate()
            .map(|(i, input)| {
                let dl: Vec<&[F]> = dlogits.iter().map(|head| head[i].as_slice()).collect();
                self.backward_sample(input, &forward.caches[i], &dl)
            })
            .collect();
        let mut total = Gradients::zeros_like(self);
        for g in &per_sample {
            total.add_assign(g);
        }
        Ok(total)
    }

    fn backward_sample(&self, input: &[F], cache: &SampleCache<F>, dlogits: &[&[F]]) -> Gradients<F> {
        let (h, w) = (self.config.input_rows, self.config.input_cols);
        let (h1, w1) = (h / 2, w / 2);
        let (h2, w2) = (h1 / 2, w1 / 2);
        let mut grads = Gradients::zeros_like(self);

        // Heads and flatten.
        let mut dflat = vec![F::zero(); cache.pool2_out.len()];
        for (head_idx, head) in self.heads.iter().enumerate() {
            let dl = dlogits[head_idx];
            let (dw, db) = &mut grads.heads[head_idx];
            for o in 0..head.out_features {
                db[o] = db[o] + dl[o];
                let row = o * head.in_features;
                for i in 0..head.in_features {
                    dw[row + i] = dw[row + i] + dl[o] * cache.pool2_out[i];
                    dflat[i] = dflat[i] + head.weights[row + i] * dl[o];
                }
            }
        }

        // Pool2 and ReLU2.
        let mut dact2 = vec![F::zero(); self.conv2.out_channels * h1 * w1];
        for (out_idx, &src) in cache.pool2_idx.iter().enumerate() {
            dact2[src as usize] = dact2[src as usize] + dflat[out_idx];
        }
        let _ = (h2, w2);
        let dpre2: Vec<F> = dact2
            .iter()
            .zip(&cache.conv2_pre)
            .map(|(&g, &pre)| if pre > F::zero() { g } else { F::zero() })
            .collect();

        // Conv2.
        let dpool1 = conv_backward(
            &cache.pool1_out,
            h1,
            w1,
            &self.conv2,
            &dpre2,
            &mut grads.conv2_weights,
            &mut grads.conv2_bias,
            true,
        );
        let dpool1 = dpool1.expect("input gradient requested");

        // Pool1 and ReLU1.
        let mut dact1 = vec![F::zero(); self.conv1.out_channels * h * w];
        for (out_idx, &src) in cache.pool1_idx.iter().enumerate() {
            dact1[src as usize] = dact1[src as usize] + dpool1[out_idx];
        }
        let dpre1: Vec<F> = dact1
            .iter()
            .zip(&cache.conv1_pre)
            .map(|(&g, &pre)| if pre > F::zero() { g } else { F::zero() })
            .collect();

        // Conv1 (no input gradient needed).
        conv_backward(
            input,
            h,
            w,
            &self.conv1,
            &dpre1,
            &mut grads.conv1_weights,
            &mut grads.conv1_bias,
            false,
        );
        grads
    }
}

/// Forward result for a batch.
pub struct BatchForward<F> {
    /// `[head][sample][class]`.
    pub logits: Vec<Vec<Vec<F>>>,
    caches: Vec<SampleCache<F>>,
}

struct SampleCache<F> {
    conv1_pre: Vec<F>,
    pool1_out: Vec<F>,
    pool1_idx: Vec<u32>,
    conv2_pre: Vec<F>,
    pool2_out: Vec<F>,
    pool2_idx: Vec<u32>,
    logits: Vec<Vec<F>>,
}

fn relu<F: Scalar>(x: &[F]) -> Vec<F> {
    x.iter().map(|&v| if v > F::zero() { v } else { F::zero() }).collect()
}

fn conv_forward<F: Scalar>(input: &[F], h: usize, w: usize, conv: &Conv2d<F>) -> Vec<F> {
    let mut out = vec![F::zero(); conv.out_channels * h * w];
    let plane = h * w;
    for o in 0..conv.out_channels {
        let out_base = o * plane;
        for y in 0..h {
            for x in 0..w {
                let mut acc = conv.bias[o];
                for i in 0..conv.in_channels {
                    let in_base = i * plane;
                    let w_base = (o * conv.in_channels + i) * KERNEL * KERNEL;
                    for ky in 0..KERNEL {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let row = in_base + sy as usize * w;
                        let w_row = w_base + ky * KERNEL;
                        for kx in 0..KERNEL {
                            let sx = x as isize + kx as isize - 1;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            acc = acc + conv.weights[w_row + kx] * input[row + sx as usize];
                        }
                    }
                }
                out[out_base + y * w + x] = acc;
            }
        }
    }
    out
}

/// Accumulate weight/bias gradients of a convolution and optionally return
/// the gradient with respect to its input.
#[allow(clippy::too_many_arguments)]
fn conv_backward<F: Scalar>(
    input: &[F],
    h: usize,
    w: usize,
    conv: &Conv2d<F>,
    dout: &[F],
    dweights: &mut [F],
    dbias: &mut [F],
    need_dinput: bool,
) -> Option<Vec<F>> {
    let plane = h * w;
    let mut dinput = if need_dinput {
        Some(vec![F::zero(); conv.in_channels * plane])
    } else {
        None
    };
    for o in 0..conv.out_channels {
        let out_base = o * plane;
        for y in 0..h {
            for x in 0..w {
                let g = dout[out_base + y * w + x];
                if g == F::zero() {
                    continue;
                }
                dbias[o] = dbias[o] + g;
                for i in 0..conv.in_channels {
                    let in_base = i * plane;
                    let w_base = (o * conv.in_channels + i) * KERNEL * KERNEL;
                    for ky in 0..KERNEL {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let row = in_base + sy as usize * w;
                        let w_row = w_base + ky * KERNEL;
                        for kx in 0..KERNEL {
                            let sx = x as isize + kx as isize - 1;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let src = row + sx as usize;
                            dweights[w_row + kx] = dweights[w_row + kx] + g * input[src];
                            if let Some(di) = dinput.as_mut() {
                                di[src] = di[src] + g * conv.weights[w_row + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    dinput
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
/// Returns outputs and, per output cell, the flat index of its source.
/// Ties go to the first cell in scan order (top-left first).
fn maxpool<F: Scalar>(input: &[F], channels: usize, h: usize, w: usize) -> (Vec<F>, Vec<u32>) {
    let (h_out, w_out) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(channels * h_out * w_out);
    let mut idx = Vec::with_capacity(channels * h_out * w_out);
    for c in 0..channels {
        let base = c * h * w;
        for py in 0..h_out {
            for px in 0..w_out {
                let mut best_idx = base + (2 * py) * w + 2 * px;
                let mut best = input[best_idx];
                for dy in 0..2 {
                    for dx in 0..2 {
                        let i = base + (2 * py + dy) * w + 2 * px + dx;
                        if input[i] > best {
                            best = input[i];
                            best_idx = i;
                        }
                    }
                }
                out.push(best);
                idx.push(best_idx as u32);
            }
        }
    }
    (out, idx)
}

fn dense_forward<F: Scalar>(input: &[F], dense: &Dense<F>) -> Vec<F> {
    (0..dense.out_features)
        .map(|o| {
            let row = o * dense.in_features;
            let mut acc = dense.bias[o];
            for i in 0..dense.in_features {
                acc = acc + dense.weights[row + i] * input[i];
            }
            acc
        })
        .collect()
}

/// Convert a feature tensor (rows x cols x channels) into the CHW-flattened
/// network input layout.
pub fn input_from_features<F: Scalar>(features: &crate::features::FeatureTensor) -> Vec<F> {
    let (rows, cols, channels) = features.dims();
    let mut out = vec![F::zero(); rows * cols * channels];
    for ((r, c, l), &x) in features.values.indexed_iter() {
        out[l * rows * cols + r * cols + c] = s::<F>(x);
    }
    out
}
