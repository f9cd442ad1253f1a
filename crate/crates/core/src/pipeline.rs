//! End-to-end stage orchestration over directories: simulate a campaign,
//! preprocess frames into feature tensors, train, evaluate, and render
//! periodogram reports. The CLI subcommands are thin wrappers over these
//! functions, and the integration suites drive them directly.

use ndarray::Ix3;
use rayon::prelude::*;
use std::path::{Path, PathBuf};

use crate::chansim::{sample_campaign, CampaignSpec, SimParams};
use crate::clutter::{fit_clutter_basis, remove_clutter};
use crate::config::{DatasetMeta, FeaturesMeta, PipelineConfig, PreprocessSettings};
use crate::csi::{estimate_csi, zero_pad, CsiMatrix};
use crate::dataset::select_calibration_day;
use crate::error::{Error, Result};
use crate::eval::{
    classification_report, regression_report, write_confusion_csv, write_error_cdf_csv,
    write_summary, EvalReport,
};
use crate::features::assemble_features;
use crate::labels::BinEdges;
use crate::ofdm::{OfdmFrame, Polarization, RadioConfig};
use crate::pgm::{render_periodogram, write_pgm};
use crate::radar::{crop_window, periodogram, CropConfig, Periodogram};
use crate::tensorio::{self, DatasetManifest, ManifestEntry, Tensor};
use crate::train::{
    predict_set, test_split, train, write_loss_log, Checkpoint, FeatureSet, Predictions, Task,
    TrainSettings,
};

/// Simulate a campaign into `out_dir`: TX tensor, RX tensors, manifest,
/// and the dataset metadata sidecar.
pub fn simulate_to_dir(
    radio: &RadioConfig,
    sim: &SimParams,
    spec: &CampaignSpec,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let manifest = sample_campaign(radio, sim, spec, seed, out_dir)?;
    DatasetMeta {
        radio: radio.clone(),
        sim: sim.clone(),
        seed,
        tx_path: "tx.tensor".into(),
    }
    .save(out_dir)?;
    Ok(manifest)
}

fn load_tx(dir: &Path, meta: &DatasetMeta) -> Result<OfdmFrame> {
    let tx = tensorio::read_tensor(&dir.join(&meta.tx_path))?
        .into_complex()?
        .into_dimensionality::<ndarray::Ix2>()
        .map_err(|_| Error::Other("tx tensor must be 2-d".into()))?;
    Ok(OfdmFrame {
        samples: tx,
        polarization: Polarization::Vertical,
    })
}

/// Read one sample's stacked RX tensor and split it into the two
/// polarization frames (co-pol first).
fn load_rx(dir: &Path, entry: &ManifestEntry) -> Result<(OfdmFrame, OfdmFrame)> {
    let stacked = tensorio::read_tensor(&dir.join(&entry.tensor_path))?
        .into_complex()?
        .into_dimensionality::<Ix3>()
        .map_err(|_| Error::Other("rx tensor must be 3-d".into()))?;
    if stacked.dim().0 != 2 {
        return Err(Error::DimMismatch {
            context: format!("rx tensor for frame {}", entry.frame_id),
            left: vec![stacked.dim().0],
            right: vec![2],
        });
    }
    let vertical = OfdmFrame {
        samples: stacked.index_axis(ndarray::Axis(0), 0).to_owned(),
        polarization: Polarization::Vertical,
    };
    let horizontal = OfdmFrame {
        samples: stacked.index_axis(ndarray::Axis(0), 1).to_owned(),
        polarization: Polarization::Horizontal,
    };
    Ok((vertical, horizontal))
}

/// Padded CSI for both polarization pairs of one sample.
fn padded_pair(
    dir: &Path,
    entry: &ManifestEntry,
    tx: &OfdmFrame,
) -> Result<(CsiMatrix, CsiMatrix)> {
    let (rx_v, rx_h) = load_rx(dir, entry)?;
    let copol = zero_pad(&estimate_csi(&rx_v, tx, entry.frame_id)?)?;
    let crosspol = zero_pad(&estimate_csi(&rx_h, tx, entry.frame_id)?)?;
    Ok((copol, crosspol))
}

/// Outcome of the preprocessing stage.
pub struct PreprocessOutcome {
    pub manifest: DatasetManifest,
    pub calibration_day: i64,
    pub calibration_ids: Vec<u64>,
    pub basis_copol_rank: usize,
    pub basis_crosspol_rank: usize,
}

/// Preprocess a dataset directory into a features directory: fit the
/// clutter bases on the calibration day, then per sample run
/// CSI estimation -> zero-padding -> clutter removal -> periodogram
/// (both polarization pairs) -> feature assembly, and write unnormalized
/// feature tensors plus provenance.
pub fn preprocess_dataset(
    data_dir: &Path,
    crop: &CropConfig,
    settings: &PreprocessSettings,
    out_dir: &Path,
) -> Result<PreprocessOutcome> {
    preprocess_manifest(data_dir, None, crop, settings, out_dir)
}

/// Like [`preprocess_dataset`], but with an explicit manifest (e.g. after
/// pairing labels from a weather CSV) instead of the one on disk.
pub fn preprocess_manifest(
    data_dir: &Path,
    manifest: Option<DatasetManifest>,
    crop: &CropConfig,
    settings: &PreprocessSettings,
    out_dir: &Path,
) -> Result<PreprocessOutcome> {
    let meta = DatasetMeta::load(data_dir)?;
    let radio = &meta.radio;
    let manifest = match manifest {
        Some(m) => m,
        None => DatasetManifest::read(&tensorio::manifest_path(data_dir))?,
    };
    manifest.validate_unique_ids()?;
    let tx = load_tx(data_dir, &meta)?;
    let (n_prime, m_prime) = crop_window(radio, crop)?;

    // Calibration day and clutter bases, one per polarization pair.
    let (calibration_day, mut calibration_ids) =
        select_calibration_day(&manifest, settings.calibration_day)?;
    calibration_ids.truncate(settings.max_calibration_snapshots);
    let calibration_entries: Vec<&ManifestEntry> = manifest
        .entries
        .iter()
        .filter(|e| calibration_ids.contains(&e.frame_id))
        .collect();
    let snapshots: Result<Vec<(CsiMatrix, CsiMatrix)>> = calibration_entries
        .par_iter()
        .map(|entry| padded_pair(data_dir, entry, &tx))
        .collect();
    let snapshots = snapshots?;
    let copol_snaps: Vec<CsiMatrix> = snapshots.iter().map(|(c, _)| c.clone()).collect();
    let crosspol_snaps: Vec<CsiMatrix> = snapshots.iter().map(|(_, x)| x.clone()).collect();
    let mut basis_copol =
        fit_clutter_basis(&copol_snaps, settings.energy_fraction, settings.max_rank)?;
    let mut basis_crosspol =
        fit_clutter_basis(&crosspol_snaps, settings.energy_fraction, settings.max_rank)?;
    basis_copol.meta.source_day = Some(calibration_day);
    basis_crosspol.meta.source_day = Some(calibration_day);

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    basis_copol.save(
        &out_dir.join("clutter_copol.tensor"),
        &out_dir.join("clutter_copol.toml"),
    )?;
    basis_crosspol.save(
        &out_dir.join("clutter_crosspol.tensor"),
        &out_dir.join("clutter_crosspol.toml"),
    )?;

    // Per-sample feature tensors.
    let entries: Result<Vec<ManifestEntry>> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let (copol, crosspol) = padded_pair(data_dir, entry, &tx)?;
            let copol = remove_clutter(&copol, &basis_copol)?;
            let crosspol = remove_clutter(&crosspol, &basis_crosspol)?;
            let p_co = periodogram(&copol, radio, n_prime, m_prime)?;
            let p_cross = periodogram(&crosspol, radio, n_prime, m_prime)?;
            let features = assemble_features(&p_co, &p_cross)?;
            let rel_path = format!("features/feat_{:06}.tensor", entry.frame_id);
            tensorio::write_tensor(
                &out_dir.join(&rel_path),
                &Tensor::F64(features.values.into_dyn()),
            )?;
            Ok(ManifestEntry {
                tensor_path: rel_path,
                ..entry.clone()
            })
        })
        .collect();
    let mut entries = entries?;
    entries.sort_by_key(|e| e.frame_id);
    let out_manifest = DatasetManifest { entries };
    out_manifest.write(&tensorio::manifest_path(out_dir))?;

    FeaturesMeta {
        radio: radio.clone(),
        range_bins: n_prime,
        speed_bins: m_prime,
        calibration_day,
        calibration_snapshots: snapshots.len(),
        clutter_rank_copol: basis_copol.rank(),
        clutter_rank_crosspol: basis_crosspol.rank(),
        energy_fraction: settings.energy_fraction,
    }
    .save(out_dir)?;

    Ok(PreprocessOutcome {
        manifest: out_manifest,
        calibration_day,
        calibration_ids,
        basis_copol_rank: basis_copol.rank(),
        basis_crosspol_rank: basis_crosspol.rank(),
    })
}

/// Train a model from a features directory; writes `checkpoint/` and
/// `loss_log.csv` under `out_dir` and returns the checkpoint.
pub fn train_to_dir(
    features_dir: &Path,
    bins: &BinEdges,
    task: Task,
    settings: &TrainSettings,
    seed: u64,
    out_dir: &Path,
) -> Result<Checkpoint> {
    let set = FeatureSet::load(features_dir)?;
    let output = train(&set, bins, task, settings, seed)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    output.checkpoint.save(&out_dir.join("checkpoint"))?;
    write_loss_log(&out_dir.join("loss_log.csv"), &output.epoch_losses)?;
    Ok(output.checkpoint)
}

/// Evaluate a checkpoint on its held-out test split; writes confusion
/// CSVs and heatmaps, error CDF CSVs, and the summary under `out_dir`.
pub fn evaluate_to_dir(
    checkpoint_dir: &Path,
    features_dir: &Path,
    out_dir: &Path,
) -> Result<EvalReport> {
    let checkpoint = Checkpoint::load(checkpoint_dir)?;
    let set = FeatureSet::load(features_dir)?;
    let split = test_split(&checkpoint, &set)?;
    let report = evaluate_split(&checkpoint, &set, &split.test)?;
    write_report(&report, out_dir)?;
    Ok(report)
}

/// Evaluate a checkpoint over explicit frame ids.
pub fn evaluate_split(
    checkpoint: &Checkpoint,
    set: &FeatureSet,
    ids: &[u64],
) -> Result<EvalReport> {
    let predictions = predict_set(checkpoint, set, ids)?;
    match predictions {
        Predictions::Classes(predicted) => {
            let truth: Vec<Vec<usize>> = ids
                .iter()
                .map(|id| set.label_of(*id).class_indices(&checkpoint.bins).to_vec())
                .collect();
            classification_report(&truth, &predicted, &checkpoint.head_classes)
        }
        Predictions::Values(predicted) => {
            let truth: Vec<Vec<f64>> = ids
                .iter()
                .map(|id| set.label_of(*id).values().to_vec())
                .collect();
            regression_report(&truth, &predicted, &checkpoint.bins)
        }
    }
}

/// Write the files of an evaluation report into `out_dir`.
pub fn write_report(report: &EvalReport, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for head in &report.heads {
        head.check_row_sums()?;
        let confusion_csv = out_dir.join(format!("confusion_{}.csv", head.name));
        write_confusion_csv(&confusion_csv, head)?;
        let matrix = ndarray::Array2::from_shape_fn(
            (head.confusion.len(), head.confusion.len()),
            |(r, c)| head.confusion[r][c],
        );
        write_pgm(
            &out_dir.join(format!("confusion_{}.pgm", head.name)),
            &matrix,
            0.0,
            1.0,
        )?;
        write_error_cdf_csv(
            &out_dir.join(format!("error_cdf_{}.csv", head.name)),
            &head.error_samples,
        )?;
    }
    write_summary(&out_dir.join("summary.txt"), report)
}

/// Compute the periodograms of one sample (by frame id) straight from a
/// dataset directory, with or without clutter removal.
pub fn sample_periodograms(
    data_dir: &Path,
    frame_id: u64,
    crop: &CropConfig,
    settings: &PreprocessSettings,
    with_clutter_removal: bool,
) -> Result<(Periodogram, Periodogram)> {
    let meta = DatasetMeta::load(data_dir)?;
    let manifest = DatasetManifest::read(&tensorio::manifest_path(data_dir))?;
    let entry = manifest
        .entries
        .iter()
        .find(|e| e.frame_id == frame_id)
        .ok_or_else(|| Error::Other(format!("frame id {frame_id} not in manifest")))?;
    let tx = load_tx(data_dir, &meta)?;
    let (n_prime, m_prime) = crop_window(&meta.radio, crop)?;
    let (mut copol, mut crosspol) = padded_pair(data_dir, entry, &tx)?;
    if with_clutter_removal {
        let (day, mut ids) = select_calibration_day(&manifest, settings.calibration_day)?;
        let _ = day;
        ids.truncate(settings.max_calibration_snapshots);
        let calibration: Result<Vec<(CsiMatrix, CsiMatrix)>> = manifest
            .entries
            .iter()
            .filter(|e| ids.contains(&e.frame_id))
            .map(|e| padded_pair(data_dir, e, &tx))
            .collect();
        let calibration = calibration?;
        let co: Vec<CsiMatrix> = calibration.iter().map(|(c, _)| c.clone()).collect();
        let cross: Vec<CsiMatrix> = calibration.iter().map(|(_, x)| x.clone()).collect();
        let basis_co = fit_clutter_basis(&co, settings.energy_fraction, settings.max_rank)?;
        let basis_cross = fit_clutter_basis(&cross, settings.energy_fraction, settings.max_rank)?;
        copol = remove_clutter(&copol, &basis_co)?;
        crosspol = remove_clutter(&crosspol, &basis_cross)?;
    }
    Ok((
        periodogram(&copol, &meta.radio, n_prime, m_prime)?,
        periodogram(&crosspol, &meta.radio, n_prime, m_prime)?,
    ))
}

/// Render the heatmap report (PGM + CSV per polarization pair) for one
/// sample.
pub fn report_periodogram_to_dir(
    data_dir: &Path,
    frame_id: u64,
    crop: &CropConfig,
    settings: &PreprocessSettings,
    with_clutter_removal: bool,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let (copol, crosspol) = sample_periodograms(
        data_dir,
        frame_id,
        crop,
        settings,
        with_clutter_removal,
    )?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for p in [&copol, &crosspol] {
        let stem = format!("periodogram_{:06}_{}", frame_id, p.pair.as_str());
        let pgm = out_dir.join(format!("{stem}.pgm"));
        let csv = out_dir.join(format!("{stem}.csv"));
        render_periodogram(&pgm, &csv, p, 60.0)?;
        written.push(pgm);
        written.push(csv);
    }
    Ok(written)
}

/// Convenience for tests and the CLI: run the whole pipeline
/// (simulate -> preprocess -> train -> evaluate) under one root.
#[allow(clippy::too_many_arguments)]
pub fn run_full_pipeline(
    config: &PipelineConfig,
    spec: &CampaignSpec,
    task: Task,
    seed: u64,
    root: &Path,
) -> Result<EvalReport> {
    let data_dir = root.join("data");
    let features_dir = root.join("features");
    let run_dir = root.join("run");
    simulate_to_dir(&config.radio, &config.sim, spec, seed, &data_dir)?;
    preprocess_dataset(&data_dir, &config.crop, &config.preprocess, &features_dir)?;
    train_to_dir(
        &features_dir,
        &config.bins,
        task,
        &config.train,
        seed,
        &run_dir,
    )?;
    evaluate_to_dir(&run_dir.join("checkpoint"), &features_dir, &run_dir.join("eval"))
}
