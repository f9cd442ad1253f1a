//! Training loop, checkpoints, and batch prediction.
//!
//! Normalization statistics are fit on the training split only and frozen
//! into the checkpoint. Regression targets are standardized per head over
//! the training split (the loss runs in standardized space, predictions
//! are mapped back), which keeps Adam step sizes sane for labels spanning
//! tens of mm/h. Classification uses inverse-frequency class weights over
//! the training labels, normalized to mean one.
//!
//! With a fixed seed and single-theaded execution the loss trajectory is
//! bit-identical between runs; parallel batch execution reduces per-sample
//! gradients in batch order, so it too is reproducible run-to-run.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

use crate::config::FeaturesMeta;
use crate::dataset::{self, Split};
use crate::error::{Error, Result};
use crate::features::{apply_norm, FeatureTensor, NormAccumulator, NormStats};
use crate::labels::{BinEdges, WeatherLabel};
use crate::nn::adam::{AdamParams, AdamState};
use crate::nn::loss::{self, ClassWeights};
use crate::nn::{group_names, input_from_features, CnnConfig, CnnModel, Scalar};
use crate::tensorio::{self, DatasetManifest, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

/// Training hyperparameters (the `[train]` config section).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub epochs: usize,
    pub adam: AdamParams,
    pub batch_size: usize,
    pub rain_per_batch: usize,
    pub train_fraction: f64,
    pub precision: Precision,
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.rain_per_batch == 0 || self.rain_per_batch >= self.batch_size {
            return Err(Error::InvalidConfig(
                "rain_per_batch must be in [1, batch_size)".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.train_fraction) || self.train_fraction == 0.0 {
            return Err(Error::InvalidConfig(
                "train_fraction must be in (0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn norain_per_batch(&self) -> usize {
        self.batch_size - self.rain_per_batch
    }
}

/// A features directory loaded into memory: manifest plus one unnormalized
/// tensor per sample.
pub struct FeatureSet {
    pub manifest: DatasetManifest,
    pub features: HashMap<u64, FeatureTensor>,
    pub rows: usize,
    pub cols: usize,
}

impl FeatureSet {
    pub fn load(dir: &Path) -> Result<Self> {
        let meta = FeaturesMeta::load(dir)?;
        let manifest = DatasetManifest::read(&tensorio::manifest_path(dir))?;
        manifest.validate_unique_ids()?;
        if manifest.is_empty() {
            return Err(Error::Other(format!(
                "no feature entries in {}",
                dir.display()
            )));
        }
        let loaded: Result<Vec<(u64, FeatureTensor)>> = manifest
            .entries
            .par_iter()
            .map(|entry| {
                let tensor = tensorio::read_tensor(&dir.join(&entry.tensor_path))?;
                let values = tensor
                    .into_real()?
                    .into_dimensionality::<ndarray::Ix3>()
                    .map_err(|_| Error::Other("feature tensor must be 3-d".into()))?;
                Ok((
                    entry.frame_id,
                    FeatureTensor {
                        values,
                        normalized: false,
                    },
                ))
            })
            .collect();
        let features: HashMap<u64, FeatureTensor> = loaded?.into_iter().collect();
        for entry in &manifest.entries {
            if entry.label.is_none() {
                return Err(Error::Other(format!(
                    "feature entry {} has no label; pair labels first",
                    entry.frame_id
                )));
            }
            let dims = features[&entry.frame_id].dims();
            if dims != (meta.range_bins, meta.speed_bins, crate::features::CHANNELS) {
                return Err(Error::DimMismatch {
                    context: format!("feature tensor {}", entry.frame_id),
                    left: vec![dims.0, dims.1, dims.2],
                    right: vec![meta.range_bins, meta.speed_bins, crate::features::CHANNELS],
                });
            }
        }
        Ok(FeatureSet {
            manifest,
            features,
            rows: meta.range_bins,
            cols: meta.speed_bins,
        })
    }

    pub fn label_of(&self, id: u64) -> WeatherLabel {
        self.manifest
            .entries
            .iter()
            .find(|e| e.frame_id == id)
            .and_then(|e| e.label)
            .expect("validated at load")
    }
}

/// Per-head standardization of regression targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl TargetStats {
    fn fit(values: &[[f64; 2]]) -> Result<Self> {
        let n = values.len() as f64;
        let mut mean = [0.0; 2];
        let mut std = [0.0; 2];
        for h in 0..2 {
            let m = values.iter().map(|v| v[h]).sum::<f64>() / n;
            let var = values.iter().map(|v| (v[h] - m).powi(2)).sum::<f64>() / n;
            if var <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "regression target {h} is constant over the training split"
                )));
            }
            mean[h] = m;
            std[h] = var.sqrt();
        }
        Ok(TargetStats { mean, std })
    }

    pub fn standardize(&self, value: f64, head: usize) -> f64 {
        (value - self.mean[head]) / self.std[head]
    }

    pub fn unstandardize(&self, value: f64, head: usize) -> f64 {
        value * self.std[head] + self.mean[head]
    }
}

/// Everything needed to resume inference: parameters, optimizer state,
/// frozen statistics, and the data contract (bins, input extents).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub task: Task,
    pub precision: Precision,
    pub input_rows: usize,
    pub input_cols: usize,
    pub head_classes: Vec<usize>,
    /// Parameter groups in model order, widened to f64 for storage.
    pub params: Vec<Vec<f64>>,
    pub adam_first: Vec<Vec<f64>>,
    pub adam_second: Vec<Vec<f64>>,
    pub adam_hyper: AdamParams,
    pub adam_step: u64,
    pub norm_stats: NormStats,
    pub target_stats: Option<TargetStats>,
    pub class_weights: Option<Vec<Vec<f64>>>,
    pub bins: BinEdges,
    pub seed: u64,
    pub train_fraction: f64,
    pub epochs_trained: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    task: Task,
    precision: Precision,
    input_rows: usize,
    input_cols: usize,
    head_classes: Vec<usize>,
    group_names: Vec<String>,
    group_lengths: Vec<usize>,
    adam_step: u64,
    seed: u64,
    train_fraction: f64,
    epochs_trained: usize,
    adam_hyper: AdamParams,
    norm_mean: Vec<f64>,
    norm_std: Vec<f64>,
    norm_sample_count: u64,
    target_stats: Option<TargetStats>,
    class_weights: Option<Vec<Vec<f64>>>,
    bins: BinEdges,
}

fn flatten(groups: &[Vec<f64>]) -> Vec<f64> {
    groups.iter().flatten().copied().collect()
}

fn unflatten(flat: &[f64], lengths: &[usize]) -> Result<Vec<Vec<f64>>> {
    let total: usize = lengths.iter().sum();
    if flat.len() != total {
        return Err(Error::Checkpoint(format!(
            "parameter tensor has {} elements, metadata expects {total}",
            flat.len()
        )));
    }
    let mut out = Vec::with_capacity(lengths.len());
    let mut offset = 0;
    for &len in lengths {
        out.push(flat[offset..offset + len].to_vec());
        offset += len;
    }
    Ok(out)
}

impl Checkpoint {
    fn tensor_of(&self, flat: Vec<f64>) -> Tensor {
        match self.precision {
            Precision::F64 => Tensor::F64(ndarray::Array1::from_vec(flat).into_dyn()),
            Precision::F32 => Tensor::F32(
                ndarray::Array1::from_vec(flat.into_iter().map(|x| x as f32).collect()).into_dyn(),
            ),
        }
    }

    /// Write the checkpoint directory: three tensors plus `meta.toml`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        tensorio::write_tensor(&dir.join("params.tensor"), &self.tensor_of(flatten(&self.params)))?;
        tensorio::write_tensor(
            &dir.join("adam_m.tensor"),
            &self.tensor_of(flatten(&self.adam_first)),
        )?;
        tensorio::write_tensor(
            &dir.join("adam_v.tensor"),
            &self.tensor_of(flatten(&self.adam_second)),
        )?;
        let meta = CheckpointMeta {
            task: self.task,
            precision: self.precision,
            input_rows: self.input_rows,
            input_cols: self.input_cols,
            head_classes: self.head_classes.clone(),
            group_names: group_names(self.head_classes.len()),
            group_lengths: self.params.iter().map(Vec::len).collect(),
            adam_step: self.adam_step,
            seed: self.seed,
            train_fraction: self.train_fraction,
            epochs_trained: self.epochs_trained,
            adam_hyper: self.adam_hyper,
            norm_mean: self.norm_stats.mean.to_vec(),
            norm_std: self.norm_stats.std.to_vec(),
            norm_sample_count: self.norm_stats.sample_count,
            target_stats: self.target_stats,
            class_weights: self.class_weights.clone(),
            bins: self.bins.clone(),
        };
        let text = toml::to_string(&meta)
            .map_err(|e| Error::Checkpoint(format!("serialize metadata: {e}")))?;
        let path = dir.join("meta.toml");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("meta.toml");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: CheckpointMeta =
            toml::from_str(&text).map_err(|e| Error::Checkpoint(format!("parse metadata: {e}")))?;
        let read_groups = |name: &str| -> Result<Vec<Vec<f64>>> {
            let tensor = tensorio::read_tensor(&dir.join(name))?;
            let flat: Vec<f64> = tensor.into_real()?.into_iter().collect();
            unflatten(&flat, &meta.group_lengths)
        };
        let params = read_groups("params.tensor")?;
        let adam_first = read_groups("adam_m.tensor")?;
        let adam_second = read_groups("adam_v.tensor")?;
        let norm_stats = NormStats {
            mean: meta
                .norm_mean
                .try_into()
                .map_err(|_| Error::Checkpoint("norm mean must have 4 entries".into()))?,
            std: meta
                .norm_std
                .try_into()
                .map_err(|_| Error::Checkpoint("norm std must have 4 entries".into()))?,
            sample_count: meta.norm_sample_count,
        };
        Ok(Checkpoint {
            task: meta.task,
            precision: meta.precision,
            input_rows: meta.input_rows,
            input_cols: meta.input_cols,
            head_classes: meta.head_classes,
            params,
            adam_first,
            adam_second,
            adam_hyper: meta.adam_hyper,
            adam_step: meta.adam_step,
            norm_stats,
            target_stats: meta.target_stats,
            class_weights: meta.class_weights,
            bins: meta.bins,
            seed: meta.seed,
            train_fraction: meta.train_fraction,
            epochs_trained: meta.epochs_trained,
        })
    }

    pub fn cnn_config(&self) -> CnnConfig {
        CnnConfig {
            input_rows: self.input_rows,
            input_cols: self.input_cols,
            head_classes: self.head_classes.clone(),
        }
    }

    fn to_model<F: Scalar>(&self) -> Result<CnnModel<F>> {
        let mut model = CnnModel::<F>::init(self.cnn_config(), 0)?;
        let groups = model.param_groups_mut();
        if groups.len() != self.params.len() {
            return Err(Error::Checkpoint("parameter group count mismatch".into()));
        }
        for (target, source) in groups.into_iter().zip(&self.params) {
            if target.len() != source.len() {
                return Err(Error::Checkpoint("parameter group length mismatch".into()));
            }
            for (t, &s) in target.iter_mut().zip(source) {
                *t = F::from_f64(s).unwrap();
            }
        }
        Ok(model)
    }
}

/// Result of a training run.
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    /// Summed batch losses per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Train a model on a feature set. Deterministic in `seed` for fixed
/// settings and data.
pub fn train(
    set: &FeatureSet,
    bins: &BinEdges,
    task: Task,
    settings: &TrainSettings,
    seed: u64,
) -> Result<TrainOutput> {
    settings.validate()?;
    bins.validate()?;
    match settings.precision {
        Precision::F64 => run::<f64>(set, bins, task, settings, seed),
        Precision::F32 => run::<f32>(set, bins, task, settings, seed),
    }
}

fn run<F: Scalar>(
    set: &FeatureSet,
    bins: &BinEdges,
    task: Task,
    settings: &TrainSettings,
    seed: u64,
) -> Result<TrainOutput> {
    let split = dataset::split_train_test(&set.manifest, settings.train_fraction, seed)?;
    if split.train.is_empty() {
        return Err(Error::Other("empty training split".into()));
    }

    // Frozen statistics, fit on the training split only.
    let mut acc = NormAccumulator::default();
    for id in &split.train {
        acc.update(&set.features[id])?;
    }
    let norm_stats = acc.finish()?;

    let inputs: HashMap<u64, Vec<F>> = normalized_inputs(set, &norm_stats)?;

    let head_classes: Vec<usize> = match task {
        Task::Classification => bins.class_counts().to_vec(),
        Task::Regression => vec![1, 1],
    };
    let config = CnnConfig {
        input_rows: set.rows,
        input_cols: set.cols,
        head_classes: head_classes.clone(),
    };
    let mut model = CnnModel::<F>::init(config, seed)?;
    let group_lengths: Vec<usize> = model.param_groups().iter().map(|g| g.len()).collect();
    let mut adam = AdamState::<F>::new(settings.adam, &group_lengths);

    // Task-specific label tables.
    let class_labels: HashMap<u64, Vec<usize>> = set
        .manifest
        .entries
        .iter()
        .map(|e| (e.frame_id, e.label.unwrap().class_indices(bins).to_vec()))
        .collect();
    let class_weights = match task {
        Task::Classification => {
            let train_labels: Vec<Vec<usize>> = split
                .train
                .iter()
                .map(|id| class_labels[id].clone())
                .collect();
            Some(ClassWeights::inverse_frequency(&head_classes, &train_labels)?)
        }
        Task::Regression => None,
    };
    let target_stats = match task {
        Task::Regression => {
            let train_values: Vec<[f64; 2]> = split
                .train
                .iter()
                .map(|id| set.label_of(*id).values())
                .collect();
            Some(TargetStats::fit(&train_values)?)
        }
        Task::Classification => None,
    };

    let mut epoch_losses = Vec::with_capacity(settings.epochs);
    for epoch in 0..settings.epochs {
        let plan = dataset::build_batches(
            &set.manifest,
            &split.train,
            settings.rain_per_batch,
            settings.norain_per_batch(),
            seed,
            epoch as u64,
        )?;
        let mut epoch_loss = 0.0;
        for batch in &plan.batches {
            let batch_inputs: Vec<&[F]> = batch.iter().map(|id| inputs[id].as_slice()).collect();
            let forward = model.forward_batch(&batch_inputs)?;
            let (loss, dlogits) = match task {
                Task::Classification => {
                    let labels: Vec<Vec<usize>> =
                        batch.iter().map(|id| class_labels[id].clone()).collect();
                    loss::cross_entropy(&forward.logits, &labels, class_weights.as_ref().unwrap())?
                }
                Task::Regression => {
                    let stats = target_stats.as_ref().unwrap();
                    let targets: Vec<Vec<F>> = batch
                        .iter()
                        .map(|id| {
                            let v = set.label_of(*id).values();
                            (0..2)
                                .map(|h| F::from_f64(stats.standardize(v[h], h)).unwrap())
                                .collect()
                        })
                        .collect();
                    loss::mean_squared_error(&forward.logits, &targets)?
                }
            };
            let grads = model.backward_batch(&batch_inputs, &forward, &dlogits)?;
            adam.step(&mut model.param_groups_mut(), &grads)?;
            epoch_loss += loss.to_f64();
        }
        epoch_losses.push(epoch_loss);
    }

    let to_f64 = |groups: Vec<&[F]>| -> Vec<Vec<f64>> {
        groups
            .into_iter()
            .map(|g| g.iter().map(|&x| x.to_f64()).collect())
            .collect()
    };
    let checkpoint = Checkpoint {
        task,
        precision: settings.precision,
        input_rows: set.rows,
        input_cols: set.cols,
        head_classes,
        params: to_f64(model.param_groups()),
        adam_first: to_f64(adam.first_moment.iter().map(Vec::as_slice).collect()),
        adam_second: to_f64(adam.second_moment.iter().map(Vec::as_slice).collect()),
        adam_hyper: settings.adam,
        adam_step: adam.step,
        norm_stats,
        target_stats,
        class_weights: class_weights.map(|w| w.weights),
        bins: bins.clone(),
        seed,
        train_fraction: settings.train_fraction,
        epochs_trained: settings.epochs,
    };
    Ok(TrainOutput {
        checkpoint,
        epoch_losses,
    })
}

fn normalized_inputs<F: Scalar>(
    set: &FeatureSet,
    stats: &NormStats,
) -> Result<HashMap<u64, Vec<F>>> {
    let pairs: Result<Vec<(u64, Vec<F>)>> = set
        .manifest
        .entries
        .par_iter()
        .map(|entry| {
            let normalized = apply_norm(&set.features[&entry.frame_id], stats)?;
            Ok((entry.frame_id, input_from_features::<F>(&normalized)))
        })
        .collect();
    Ok(pairs?.into_iter().collect())
}

/// Predictions for a list of samples, `[sample][head]`.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictions {
    Classes(Vec<Vec<usize>>),
    Values(Vec<Vec<f64>>),
}

/// Run inference with a checkpoint over the given frame ids.
pub fn predict_set(
    checkpoint: &Checkpoint,
    set: &FeatureSet,
    ids: &[u64],
) -> Result<Predictions> {
    match checkpoint.precision {
        Precision::F64 => predict_impl::<f64>(checkpoint, set, ids),
        Precision::F32 => predict_impl::<f32>(checkpoint, set, ids),
    }
}

fn predict_impl<F: Scalar>(
    checkpoint: &Checkpoint,
    set: &FeatureSet,
    ids: &[u64],
) -> Result<Predictions> {
    if (set.rows, set.cols) != (checkpoint.input_rows, checkpoint.input_cols) {
        return Err(Error::DimMismatch {
            context: "features vs checkpoint input".into(),
            left: vec![set.rows, set.cols],
            right: vec![checkpoint.input_rows, checkpoint.input_cols],
        });
    }
    let model: CnnModel<F> = checkpoint.to_model()?;
    let mut class_out: Vec<Vec<usize>> = Vec::with_capacity(ids.len());
    let mut value_out: Vec<Vec<f64>> = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(128) {
        let inputs: Result<Vec<Vec<F>>> = chunk
            .par_iter()
            .map(|id| {
                let feature = set
                    .features
                    .get(id)
                    .ok_or_else(|| Error::Other(format!("frame id {id} not in feature set")))?;
                let normalized = apply_norm(feature, &checkpoint.norm_stats)?;
                Ok(input_from_features::<F>(&normalized))
            })
            .collect();
        let inputs = inputs?;
        let slices: Vec<&[F]> = inputs.iter().map(Vec::as_slice).collect();
        let forward = model.forward_batch(&slices)?;
        match checkpoint.task {
            Task::Classification => class_out.extend(loss::predict_class(&forward.logits)),
            Task::Regression => {
                let stats = checkpoint
                    .target_stats
                    .ok_or_else(|| Error::Checkpoint("regression checkpoint lacks target stats".into()))?;
                for raw in loss::predict_value(&forward.logits) {
                    value_out.push(
                        raw.iter()
                            .enumerate()
                            .map(|(h, &v)| stats.unstandardize(v, h))
                            .collect(),
                    );
                }
            }
        }
    }
    Ok(match checkpoint.task {
        Task::Classification => Predictions::Classes(class_out),
        Task::Regression => Predictions::Values(value_out),
    })
}

/// The test split a checkpoint was held out from (re-derived from the
/// seed recorded in the checkpoint).
pub fn test_split(checkpoint: &Checkpoint, set: &FeatureSet) -> Result<Split> {
    dataset::split_train_test(&set.manifest, checkpoint.train_fraction, checkpoint.seed)
}

/// Write the per-epoch loss log as CSV.
pub fn write_loss_log(path: &Path, losses: &[f64]) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
    );
    let io = |e| Error::io(path, e);
    writeln!(w, "epoch,loss").map_err(io)?;
    for (i, loss) in losses.iter().enumerate() {
        writeln!(w, "{i},{loss}").map_err(io)?;
    }
    w.flush().map_err(io)
}
