//! Dataset assembly: pairing captures with weather-station rows, picking
//! the calibration day, splitting train/test, and building balanced
//! batches.

use rand::seq::SliceRandom;
use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::labels::{Scenario, WeatherLabel};
use crate::rng::{substream, Stream};
use crate::tensorio::DatasetManifest;

/// One reference row from the weather station.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeatherRow {
    pub timestamp_s: f64,
    pub precipitation_mm_h: f64,
    pub wind_km_h: f64,
}

/// Read a weather CSV with column order (ISO-8601 timestamp,
/// precipitation mm/h, wind km/h); extra columns are ignored and a header
/// row is tolerated.
pub fn read_weather_csv(path: &Path) -> Result<Vec<WeatherRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Other(format!("open weather csv {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::WeatherCsv {
            path: path.to_path_buf(),
            line: idx + 1,
            reason: e.to_string(),
        })?;
        let field = |i: usize| -> Result<&str> {
            record.get(i).map(str::trim).ok_or_else(|| Error::WeatherCsv {
                path: path.to_path_buf(),
                line: idx + 1,
                reason: format!("missing column {i}"),
            })
        };
        let ts = field(0)?;
        let timestamp_s = match chrono::DateTime::parse_from_rfc3339(ts) {
            Ok(dt) => dt.timestamp_millis() as f64 / 1000.0,
            Err(_) if idx == 0 => continue, // header row
            Err(e) => {
                return Err(Error::WeatherCsv {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    reason: format!("bad timestamp {ts:?}: {e}"),
                })
            }
        };
        let parse_f64 = |i: usize| -> Result<f64> {
            field(i)?.parse().map_err(|_| Error::WeatherCsv {
                path: path.to_path_buf(),
                line: idx + 1,
                reason: format!("bad numeric value in column {i}"),
            })
        };
        rows.push(WeatherRow {
            timestamp_s,
            precipitation_mm_h: parse_f64(1)?,
            wind_km_h: parse_f64(2)?,
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyWeatherCsv(path.to_path_buf()));
    }
    Ok(rows)
}

/// A sample dropped during pairing, with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcludedSample {
    pub frame_id: u64,
    pub gap_s: f64,
    pub max_gap_s: f64,
}

/// Result of pairing a manifest with station rows.
#[derive(Debug, Clone)]
pub struct PairingOutcome {
    pub manifest: DatasetManifest,
    /// Samples whose nearest row was farther than the gap limit. Logged by
    /// callers; never silently dropped.
    pub excluded: Vec<ExcludedSample>,
    /// Pairing gap per kept sample, aligned with `manifest.entries`.
    pub gaps_s: Vec<f64>,
}

/// Pair each sample with the temporally nearest weather row. Ties break
/// toward the earlier row; samples with a gap beyond `max_gap_s` are
/// excluded and reported.
pub fn pair_labels(
    manifest: &DatasetManifest,
    rows: &[WeatherRow],
    max_gap_s: f64,
) -> Result<PairingOutcome> {
    if rows.is_empty() {
        return Err(Error::EmptyWeatherCsv("<memory>".into()));
    }
    let mut sorted: Vec<WeatherRow> = rows.to_vec();
    sorted.sort_by(|a, b| a.timestamp_s.total_cmp(&b.timestamp_s));

    let mut kept = Vec::new();
    let mut gaps = Vec::new();
    let mut excluded = Vec::new();
    for entry in &manifest.entries {
        let t = entry.timestamp_s;
        let idx = sorted.partition_point(|r| r.timestamp_s < t);
        // Candidates: the nearest row at/after t and the one before it.
        // On equal gaps the earlier row wins.
        let mut best: Option<(f64, &WeatherRow)> = None;
        for candidate in [idx.checked_sub(1), Some(idx)].into_iter().flatten() {
            if let Some(row) = sorted.get(candidate) {
                let gap = (row.timestamp_s - t).abs();
                let better = match best {
                    None => true,
                    Some((best_gap, best_row)) => {
                        gap < best_gap
                            || (gap == best_gap && row.timestamp_s < best_row.timestamp_s)
                    }
                };
                if better {
                    best = Some((gap, row));
                }
            }
        }
        let (gap, row) = best.expect("non-empty rows");
        if gap > max_gap_s {
            excluded.push(ExcludedSample {
                frame_id: entry.frame_id,
                gap_s: gap,
                max_gap_s,
            });
            continue;
        }
        let mut labeled = entry.clone();
        labeled.label = Some(WeatherLabel::new(row.precipitation_mm_h, row.wind_km_h));
        kept.push(labeled);
        gaps.push(gap);
    }
    Ok(PairingOutcome {
        manifest: DatasetManifest { entries: kept },
        excluded,
        gaps_s: gaps,
    })
}

/// Calendar day of a timestamp (days since the epoch).
pub fn day_of(timestamp_s: f64) -> i64 {
    (timestamp_s / 86_400.0).floor() as i64
}

/// Pick the calibration day: among labeled days strictly before
/// `target_day` (defaults to the latest day present), the one with the
/// lowest mean precipitation, then lowest mean wind. Returns the day and
/// its frame ids.
pub fn select_calibration_day(
    manifest: &DatasetManifest,
    target_day: Option<i64>,
) -> Result<(i64, Vec<u64>)> {
    let target_day = target_day
        .or_else(|| manifest.entries.iter().map(|e| day_of(e.timestamp_s)).max())
        .ok_or_else(|| Error::Other("empty manifest".into()))?;

    #[derive(Default)]
    struct DayStats {
        precip_sum: f64,
        wind_sum: f64,
        count: usize,
        ids: Vec<u64>,
    }
    let mut days: HashMap<i64, DayStats> = HashMap::new();
    for entry in &manifest.entries {
        let day = day_of(entry.timestamp_s);
        if day >= target_day {
            continue;
        }
        let Some(label) = entry.label else { continue };
        let stats = days.entry(day).or_default();
        stats.precip_sum += label.precipitation_mm_h;
        stats.wind_sum += label.wind_speed_km_h;
        stats.count += 1;
        stats.ids.push(entry.frame_id);
    }
    let best = days
        .into_iter()
        .min_by(|(da, a), (db, b)| {
            let mean = |s: &DayStats| (s.precip_sum / s.count as f64, s.wind_sum / s.count as f64);
            let (pa, wa) = mean(a);
            let (pb, wb) = mean(b);
            pa.total_cmp(&pb).then(wa.total_cmp(&wb)).then(da.cmp(db))
        })
        .ok_or(Error::NoPriorDay { target_day })?;
    let (day, mut stats) = best;
    stats.ids.sort_unstable();
    Ok((day, stats.ids))
}

/// Disjoint train/test frame ids, the split applied independently to the
/// rain and no-rain pools.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<u64>,
    pub test: Vec<u64>,
}

pub fn split_train_test(
    manifest: &DatasetManifest,
    train_fraction: f64,
    seed: u64,
) -> Result<Split> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::InvalidConfig(format!(
            "train fraction must be in [0, 1], got {train_fraction}"
        )));
    }
    let mut rng = substream(seed, Stream::Split);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for scenario in [Scenario::NoRain, Scenario::Rain] {
        let mut pool: Vec<u64> = manifest
            .entries
            .iter()
            .filter(|e| e.scenario == scenario)
            .map(|e| e.frame_id)
            .collect();
        pool.sort_unstable();
        pool.shuffle(&mut rng);
        let n_train = (pool.len() as f64 * train_fraction).floor() as usize;
        train.extend_from_slice(&pool[..n_train]);
        test.extend_from_slice(&pool[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

/// Balanced batches over one split.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    pub batches: Vec<Vec<u64>>,
    pub rain_per_batch: usize,
    pub norain_per_batch: usize,
}

impl BatchPlan {
    pub fn batch_size(&self) -> usize {
        self.rain_per_batch + self.norain_per_batch
    }
}

/// Build batches of `rain_per_batch + norain_per_batch` samples drawn
/// without replacement from seeded per-pool shuffles; trailing partial
/// batches are dropped. Reshuffling is deterministic in (seed, epoch).
pub fn build_batches(
    manifest: &DatasetManifest,
    ids: &[u64],
    rain_per_batch: usize,
    norain_per_batch: usize,
    seed: u64,
    epoch: u64,
) -> Result<BatchPlan> {
    if rain_per_batch == 0 || norain_per_batch == 0 {
        return Err(Error::InvalidConfig(
            "batch composition counts must be >= 1".into(),
        ));
    }
    let scenario_of: HashMap<u64, Scenario> = manifest
        .entries
        .iter()
        .map(|e| (e.frame_id, e.scenario))
        .collect();
    let mut rain: Vec<u64> = Vec::new();
    let mut norain: Vec<u64> = Vec::new();
    for &id in ids {
        match scenario_of.get(&id) {
            Some(Scenario::Rain) => rain.push(id),
            Some(Scenario::NoRain) => norain.push(id),
            None => return Err(Error::Other(format!("frame id {id} not in manifest"))),
        }
    }
    rain.sort_unstable();
    norain.sort_unstable();
    for (name, pool, need) in [
        ("rain", &rain, rain_per_batch),
        ("no_rain", &norain, norain_per_batch),
    ] {
        if pool.len() < need {
            return Err(Error::PoolTooSmall {
                pool: name.into(),
                need,
                have: pool.len(),
            });
        }
    }
    let mut rng = substream(seed, Stream::Shuffle(epoch));
    rain.shuffle(&mut rng);
    norain.shuffle(&mut rng);
    let n_batches = (rain.len() / rain_per_batch).min(norain.len() / norain_per_batch);
    let batches = (0..n_batches)
        .map(|b| {
            let mut batch = rain[b * rain_per_batch..(b + 1) * rain_per_batch].to_vec();
            batch.extend_from_slice(&norain[b * norain_per_batch..(b + 1) * norain_per_batch]);
            batch
        })
        .collect();
    Ok(BatchPlan {
        batches,
        rain_per_batch,
        norain_per_batch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorio::ManifestEntry;

    fn entry(id: u64, ts: f64, label: Option<(f64, f64)>, scenario: Scenario) -> ManifestEntry {
        ManifestEntry {
            frame_id: id,
            timestamp_s: ts,
            tensor_path: format!("frames/rx_{id:06}.tensor"),
            label: label.map(|(p, w)| WeatherLabel::new(p, w)),
            scenario,
        }
    }

    fn row(ts: f64, p: f64, w: f64) -> WeatherRow {
        WeatherRow {
            timestamp_s: ts,
            precipitation_mm_h: p,
            wind_km_h: w,
        }
    }

    #[test]
    fn pairs_with_nearest_row() {
        let manifest = DatasetManifest {
            entries: vec![entry(0, 100.0, None, Scenario::Rain)],
        };
        let rows = vec![row(90.0, 1.0, 2.0), row(130.0, 3.0, 4.0)];
        let outcome = pair_labels(&manifest, &rows, 600.0).unwrap();
        assert_eq!(
            outcome.manifest.entries[0].label,
            Some(WeatherLabel::new(1.0, 2.0))
        );
        assert_eq!(outcome.gaps_s[0], 10.0);
        assert!(outcome.excluded.is_empty());
    }

    #[test]
    fn equidistant_rows_pick_the_earlier() {
        let manifest = DatasetManifest {
            entries: vec![entry(0, 100.0, None, Scenario::Rain)],
        };
        let rows = vec![row(90.0, 1.0, 1.0), row(110.0, 2.0, 2.0)];
        let outcome = pair_labels(&manifest, &rows, 600.0).unwrap();
        assert_eq!(
            outcome.manifest.entries[0].label,
            Some(WeatherLabel::new(1.0, 1.0))
        );
    }

    #[test]
    fn over_gap_samples_are_excluded_with_reason() {
        let manifest = DatasetManifest {
            entries: vec![
                entry(0, 100.0, None, Scenario::Rain),
                entry(1, 5000.0, None, Scenario::Rain),
            ],
        };
        let rows = vec![row(90.0, 1.0, 1.0)];
        let outcome = pair_labels(&manifest, &rows, 600.0).unwrap();
        assert_eq!(outcome.manifest.len(), 1);
        assert_eq!(outcome.excluded.len(), 1);
        assert_eq!(outcome.excluded[0].frame_id, 1);
        assert_eq!(outcome.excluded[0].gap_s, 4910.0);
    }

    #[test]
    fn self_labeled_data_pairs_identically() {
        // Rows generated from the samples themselves: identity, gap 0.
        let manifest = DatasetManifest {
            entries: vec![
                entry(0, 100.0, Some((5.0, 10.0)), Scenario::Rain),
                entry(1, 700.0, Some((0.0, 1.0)), Scenario::NoRain),
            ],
        };
        let rows: Vec<WeatherRow> = manifest
            .entries
            .iter()
            .map(|e| {
                let l = e.label.unwrap();
                row(e.timestamp_s, l.precipitation_mm_h, l.wind_speed_km_h)
            })
            .collect();
        let outcome = pair_labels(&manifest, &rows, 600.0).unwrap();
        assert_eq!(outcome.manifest, manifest);
        assert!(outcome.gaps_s.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn weather_csv_parses_with_header_and_extra_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weather.csv");
        std::fs::write(
            &path,
            "timestamp,precipitation_mm_h,wind_km_h,station\n\
             2024-05-01T00:00:00Z,0.0,3.5,roof\n\
             2024-05-01T00:10:00+00:00,1.25,7.0,roof\n",
        )
        .unwrap();
        let rows = read_weather_csv(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].precipitation_mm_h, 1.25);
        assert_eq!(rows[1].timestamp_s - rows[0].timestamp_s, 600.0);
    }

    #[test]
    fn empty_weather_csv_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weather.csv");
        std::fs::write(&path, "").unwrap();
        assert!(matches!(
            read_weather_csv(&path),
            Err(Error::EmptyWeatherCsv(_))
        ));
    }

    fn day_ts(day: i64, offset: f64) -> f64 {
        day as f64 * 86_400.0 + offset
    }

    #[test]
    fn calibration_picks_lowest_precipitation_day() {
        let manifest = DatasetManifest {
            entries: vec![
                entry(0, day_ts(0, 0.0), Some((0.0, 5.0)), Scenario::NoRain),
                entry(1, day_ts(1, 0.0), Some((1.2, 1.0)), Scenario::Rain),
                entry(2, day_ts(2, 0.0), Some((9.0, 9.0)), Scenario::Rain),
            ],
        };
        let (day, ids) = select_calibration_day(&manifest, None).unwrap();
        assert_eq!(day, 0);
        assert_eq!(ids, vec![0]);
    }

    #[test]
    fn calibration_tie_breaks_on_wind() {
        let manifest = DatasetManifest {
            entries: vec![
                entry(0, day_ts(0, 0.0), Some((0.5, 5.0)), Scenario::NoRain),
                entry(1, day_ts(1, 0.0), Some((0.5, 3.0)), Scenario::NoRain),
                entry(2, day_ts(2, 0.0), Some((4.0, 1.0)), Scenario::Rain),
            ],
        };
        let (day, ids) = select_calibration_day(&manifest, None).unwrap();
        assert_eq!(day, 1);
        assert_eq!(ids, vec![1]);
    }

    #[test]
    fn calibration_needs_a_prior_day() {
        let manifest = DatasetManifest {
            entries: vec![entry(0, day_ts(3, 10.0), Some((0.0, 0.0)), Scenario::NoRain)],
        };
        assert!(matches!(
            select_calibration_day(&manifest, None),
            Err(Error::NoPriorDay { target_day: 3 })
        ));
    }

    fn pool_manifest(n_rain: usize, n_norain: usize) -> DatasetManifest {
        let mut entries = Vec::new();
        for i in 0..n_rain {
            entries.push(entry(
                i as u64,
                day_ts(1, i as f64),
                Some((5.0, 5.0)),
                Scenario::Rain,
            ));
        }
        for i in 0..n_norain {
            entries.push(entry(
                (n_rain + i) as u64,
                day_ts(1, (n_rain + i) as f64),
                Some((0.0, 1.0)),
                Scenario::NoRain,
            ));
        }
        DatasetManifest { entries }
    }

    #[test]
    fn split_is_disjoint_per_pool_and_deterministic() {
        let manifest = pool_manifest(40, 60);
        let split = split_train_test(&manifest, 0.8, 9).unwrap();
        assert_eq!(split.train.len(), 32 + 48);
        assert_eq!(split.test.len(), 8 + 12);
        let mut all: Vec<u64> = split.train.iter().chain(&split.test).copied().collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 100);
        assert_eq!(split, split_train_test(&manifest, 0.8, 9).unwrap());
        assert_ne!(split, split_train_test(&manifest, 0.8, 10).unwrap());
    }

    #[test]
    fn batches_honor_composition_exactly() {
        let manifest = pool_manifest(100, 100);
        let ids: Vec<u64> = manifest.entries.iter().map(|e| e.frame_id).collect();
        let plan = build_batches(&manifest, &ids, 50, 50, 1, 0).unwrap();
        assert_eq!(plan.batches.len(), 2);
        let scenario_of: HashMap<u64, Scenario> = manifest
            .entries
            .iter()
            .map(|e| (e.frame_id, e.scenario))
            .collect();
        for batch in &plan.batches {
            assert_eq!(batch.len(), 100);
            let rain = batch
                .iter()
                .filter(|id| scenario_of[id] == Scenario::Rain)
                .count();
            assert_eq!(rain, 50);
        }
        // No sample reused across batches.
        let mut used: Vec<u64> = plan.batches.iter().flatten().copied().collect();
        used.sort_unstable();
        used.dedup();
        assert_eq!(used.len(), 200);
    }

    #[test]
    fn trailing_partials_are_dropped() {
        // floor(min(7826, 7824) / 50) = 156 full balanced batches.
        let manifest = pool_manifest(7826, 7824);
        let ids: Vec<u64> = manifest.entries.iter().map(|e| e.frame_id).collect();
        let plan = build_batches(&manifest, &ids, 50, 50, 3, 0).unwrap();
        assert_eq!(plan.batches.len(), 156);
    }

    #[test]
    fn plans_are_seed_and_epoch_deterministic() {
        let manifest = pool_manifest(120, 120);
        let ids: Vec<u64> = manifest.entries.iter().map(|e| e.frame_id).collect();
        let a = build_batches(&manifest, &ids, 50, 50, 7, 0).unwrap();
        let b = build_batches(&manifest, &ids, 50, 50, 7, 0).unwrap();
        assert_eq!(a, b);
        let c = build_batches(&manifest, &ids, 50, 50, 7, 1).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn small_pool_is_an_error() {
        let manifest = pool_manifest(30, 100);
        let ids: Vec<u64> = manifest.entries.iter().map(|e| e.frame_id).collect();
        assert!(matches!(
            build_batches(&manifest, &ids, 50, 50, 1, 0),
            Err(Error::PoolTooSmall { .. })
        ));
    }
}
