//! Synthetic sensing channel: maps a scene (static clutter + weather) and
//! the TX test frame to RX frames per polarization, and generates whole
//! labeled capture campaigns on disk.
//!
//! The forward model is quasi mono-static: a scatterer at one-way range `r`
//! and radial speed `v` contributes round-trip delay `tau = 2r/c` and
//! Doppler `f_D = 2 v f_c / c`, applied per subcarrier and per symbol:
//!
//! ```text
//! RX[k, l] = sum_p a_p * e^{-j2π k Δf τ_p} * e^{+j2π f_D,p l T_sym} * TX[k, l]
//!            + noise[k, l]
//! ```
//!
//! Noise is complex white Gaussian with power
//! `noise_floor_power * (1 + noise_rain_lift * precipitation)`. Weather
//! scatterers are drawn per scene seed: ranges uniform over the evaluation
//! window, radial speeds Gaussian with standard deviation proportional to
//! wind speed, per-scatterer amplitudes complex Gaussian with mean power
//! proportional to precipitation rate. The proportionality coefficients are
//! calibration knobs ([`SimParams`]), not physical claims.

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::path::Path;

use crate::error::{Error, Result};
use crate::labels::{Scenario, WeatherLabel};
use crate::ofdm::{generate_test_frame, OfdmFrame, Polarization, RadioConfig, SPEED_OF_LIGHT};
use crate::rng::{substream, Stream};
use crate::tensorio::{self, DatasetManifest, ManifestEntry, Tensor};

/// One point reflector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scatterer {
    /// One-way range in meters, >= 0.
    pub range_m: f64,
    /// Radial speed in m/s; positive means moving away.
    pub radial_speed_mps: f64,
    /// Complex amplitude seen on the co-polarized RX port.
    pub amplitude_copol: Complex64,
    /// Complex amplitude seen on the cross-polarized RX port.
    pub amplitude_crosspol: Complex64,
}

impl Scatterer {
    /// Static reflector with the default cross-polarization leakage.
    pub fn still(range_m: f64, amplitude: Complex64, leakage: f64) -> Self {
        Self {
            range_m,
            radial_speed_mps: 0.0,
            amplitude_copol: amplitude,
            amplitude_crosspol: amplitude * leakage,
        }
    }

    fn validate(&self, radio: &RadioConfig) -> Result<()> {
        if self.range_m < 0.0 || self.range_m > radio.unambiguous_range_m() {
            return Err(Error::SceneOutOfBounds(format!(
                "scatterer range {} m outside [0, {:.1}] m",
                self.range_m,
                radio.unambiguous_range_m()
            )));
        }
        if self.radial_speed_mps.abs() > radio.unambiguous_speed_mps() {
            return Err(Error::SceneOutOfBounds(format!(
                "scatterer speed {} m/s beyond unambiguous {:.1} m/s",
                self.radial_speed_mps,
                radio.unambiguous_speed_mps()
            )));
        }
        Ok(())
    }
}

/// Calibration knobs of the synthetic channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    /// Thermal noise power per sample (complex variance).
    pub noise_floor_power: f64,
    /// Relative noise-power lift per mm/h of rain.
    pub noise_rain_lift: f64,
    /// Mean power of one weather scatterer per mm/h of rain.
    pub weather_power_per_mm_h: f64,
    /// Doppler-spread sigma in m/s per m/s of wind speed.
    pub doppler_spread_per_mps_wind: f64,
    /// Cross-polarization leakage in dB (applied as an amplitude factor).
    pub crosspol_leakage_db: f64,
    /// Number of weather scatterers drawn per scene.
    pub weather_scatterer_count: usize,
    /// Number of static reflectors in a generated campaign environment.
    pub static_scatterer_count: usize,
    /// Weather scatterer ranges are drawn uniformly over [0, this] meters.
    pub weather_range_window_m: f64,
    /// Relative jitter applied to stratum label values in campaigns.
    pub label_jitter: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            noise_floor_power: 1e-6,
            noise_rain_lift: 0.05,
            weather_power_per_mm_h: 2e-4,
            doppler_spread_per_mps_wind: 1.0,
            crosspol_leakage_db: -10.0,
            weather_scatterer_count: 48,
            static_scatterer_count: 6,
            weather_range_window_m: 450.0,
            label_jitter: 0.15,
        }
    }
}

impl SimParams {
    pub fn crosspol_leakage(&self) -> f64 {
        10f64.powf(self.crosspol_leakage_db / 20.0)
    }
}

/// Everything that varies between captured samples.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherScene {
    pub precipitation_mm_h: f64,
    pub wind_speed_km_h: f64,
    pub static_clutter: Vec<Scatterer>,
    pub noise_floor_power: f64,
    pub seed: u64,
}

impl WeatherScene {
    /// A scene with no reflectors and no noise; RX is exactly zero.
    pub fn empty(seed: u64) -> Self {
        Self {
            precipitation_mm_h: 0.0,
            wind_speed_km_h: 0.0,
            static_clutter: Vec::new(),
            noise_floor_power: 0.0,
            seed,
        }
    }

    fn validate(&self, radio: &RadioConfig) -> Result<()> {
        if self.precipitation_mm_h < 0.0 || self.wind_speed_km_h < 0.0 {
            return Err(Error::SceneOutOfBounds(
                "precipitation and wind must be >= 0".into(),
            ));
        }
        if self.noise_floor_power < 0.0 {
            return Err(Error::SceneOutOfBounds("noise power must be >= 0".into()));
        }
        for s in &self.static_clutter {
            s.validate(radio)?;
        }
        Ok(())
    }
}

/// Draw the weather scatterers of a scene. Deterministic in the scene seed,
/// shared by both RX polarizations. Returns an empty list when the
/// precipitation rate is zero: dry air reflects nothing.
pub fn draw_weather_scatterers(
    scene: &WeatherScene,
    params: &SimParams,
    radio: &RadioConfig,
) -> Vec<Scatterer> {
    if scene.precipitation_mm_h == 0.0 || params.weather_scatterer_count == 0 {
        return Vec::new();
    }
    let mut rng = substream(scene.seed, Stream::Sample(0));
    let wind_mps = scene.wind_speed_km_h / 3.6;
    let sigma_v = params.doppler_spread_per_mps_wind * wind_mps;
    let sigma_a = (params.weather_power_per_mm_h * scene.precipitation_mm_h / 2.0).sqrt();
    let leakage = params.crosspol_leakage();
    let speed_cap = radio.unambiguous_speed_mps();
    let range_cap = params.weather_range_window_m.min(radio.unambiguous_range_m());
    let normal = Normal::new(0.0, 1.0).unwrap();

    (0..params.weather_scatterer_count)
        .map(|_| {
            let range_m = rng.random_range(0.0..range_cap);
            let mut speed = normal.sample(&mut rng) * sigma_v;
            while speed.abs() > speed_cap {
                speed = normal.sample(&mut rng) * sigma_v;
            }
            let amplitude = Complex64::new(
                normal.sample(&mut rng) * sigma_a,
                normal.sample(&mut rng) * sigma_a,
            );
            Scatterer {
                range_m,
                radial_speed_mps: speed,
                amplitude_copol: amplitude,
                amplitude_crosspol: amplitude * leakage,
            }
        })
        .collect()
}

fn add_scatterer_response(
    rx: &mut Array2<Complex64>,
    tx: &Array2<Complex64>,
    scatterer: &Scatterer,
    radio: &RadioConfig,
    rx_polarization: Polarization,
) {
    let amplitude = match rx_polarization {
        Polarization::Vertical => scatterer.amplitude_copol,
        Polarization::Horizontal => scatterer.amplitude_crosspol,
    };
    if amplitude.norm_sqr() == 0.0 {
        return;
    }
    let (n, m) = tx.dim();
    let tau = 2.0 * scatterer.range_m / SPEED_OF_LIGHT;
    let doppler_hz = 2.0 * scatterer.radial_speed_mps * radio.carrier_frequency_hz / SPEED_OF_LIGHT;
    let row_step = Complex64::from_polar(1.0, -TAU * radio.subcarrier_spacing_hz * tau);
    let col_step = Complex64::from_polar(1.0, TAU * doppler_hz * radio.symbol_duration_s());

    // exp recurrences over both axes; rounding drift over a few thousand
    // steps stays far below the noise floor.
    let mut row_phase = Vec::with_capacity(n);
    let mut p = amplitude;
    for _ in 0..n {
        row_phase.push(p);
        p *= row_step;
    }
    let mut col_phase = Vec::with_capacity(m);
    let mut q = Complex64::new(1.0, 0.0);
    for _ in 0..m {
        col_phase.push(q);
        q *= col_step;
    }
    for k in 0..n {
        let rk = row_phase[k];
        for l in 0..m {
            rx[(k, l)] += rk * col_phase[l] * tx[(k, l)];
        }
    }
}

/// Simulate the received frame for one scene and RX polarization.
pub fn simulate_rx(
    tx: &OfdmFrame,
    scene: &WeatherScene,
    radio: &RadioConfig,
    params: &SimParams,
    rx_polarization: Polarization,
) -> Result<OfdmFrame> {
    radio.validate()?;
    scene.validate(radio)?;
    if tx.dims() != (radio.subcarriers, radio.symbols) {
        return Err(Error::DimMismatch {
            context: "tx frame vs radio config".into(),
            left: vec![tx.dims().0, tx.dims().1],
            right: vec![radio.subcarriers, radio.symbols],
        });
    }

    let mut rx = Array2::zeros(tx.samples.dim());
    for s in &scene.static_clutter {
        add_scatterer_response(&mut rx, &tx.samples, s, radio, rx_polarization);
    }
    for s in draw_weather_scatterers(scene, params, radio) {
        s.validate(radio)?;
        add_scatterer_response(&mut rx, &tx.samples, &s, radio, rx_polarization);
    }

    let noise_power =
        scene.noise_floor_power * (1.0 + params.noise_rain_lift * scene.precipitation_mm_h);
    if noise_power > 0.0 {
        let pol_idx = match rx_polarization {
            Polarization::Vertical => 0,
            Polarization::Horizontal => 1,
        };
        let mut rng = substream(scene.seed, Stream::Noise(0, pol_idx));
        let normal = Normal::new(0.0, (noise_power / 2.0).sqrt()).unwrap();
        for z in rx.iter_mut() {
            *z += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }

    Ok(OfdmFrame {
        samples: rx,
        polarization: rx_polarization,
    })
}

/// One homogeneous block of a capture campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    /// Synthetic capture day index; day 0 is conventionally the calm
    /// calibration day.
    pub day: u32,
    pub precipitation_mm_h: f64,
    pub wind_speed_km_h: f64,
    pub count: usize,
}

/// A campaign: how many samples to simulate per (precipitation, wind)
/// stratum, spread over synthetic capture days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSpec {
    pub strata: Vec<Stratum>,
}

impl CampaignSpec {
    pub fn total_samples(&self) -> usize {
        self.strata.iter().map(|s| s.count).sum()
    }

    /// Campaign mirroring the measurement campaign's near-50/50 rain split
    /// (9786 no-rain and 9780 rain samples at scale 1.0): a calm dry
    /// calibration day 0, dry samples on day 1, and rain spread over three
    /// precipitation levels times four wind levels.
    pub fn default_scaled(scale: f64) -> Self {
        let norain_total = (9786.0 * scale).round() as usize;
        let rain_total = (9780.0 * scale).round() as usize;
        let calibration = (norain_total / 5).clamp(4, 64);
        let mut strata = vec![
            Stratum {
                day: 0,
                precipitation_mm_h: 0.0,
                wind_speed_km_h: 1.5,
                count: calibration,
            },
            Stratum {
                day: 1,
                precipitation_mm_h: 0.0,
                wind_speed_km_h: 1.5,
                count: norain_total - calibration,
            },
        ];
        let precip_levels = [6.0, 20.0, 40.0];
        let wind_levels = [1.5, 9.0, 22.0, 40.0];
        let cells = precip_levels.len() * wind_levels.len();
        let per_cell = rain_total / cells;
        let mut remainder = rain_total % cells;
        for &p in &precip_levels {
            for &w in &wind_levels {
                let extra = if remainder > 0 {
                    remainder -= 1;
                    1
                } else {
                    0
                };
                strata.push(Stratum {
                    day: 1,
                    precipitation_mm_h: p,
                    wind_speed_km_h: w,
                    count: per_cell + extra,
                });
            }
        }
        CampaignSpec { strata }
    }
}

/// The fixed reflectors shared by every sample of a campaign.
pub fn campaign_environment(
    seed: u64,
    params: &SimParams,
    radio: &RadioConfig,
) -> Vec<Scatterer> {
    let mut rng = substream(seed, Stream::Environment);
    let leakage = params.crosspol_leakage();
    let max_range = params.weather_range_window_m.min(radio.unambiguous_range_m());
    (0..params.static_scatterer_count)
        .map(|_| {
            let range = rng.random_range(0.05 * max_range..0.9 * max_range);
            let phase = rng.random_range(0.0..TAU);
            let magnitude = rng.random_range(0.5..1.5);
            Scatterer::still(range, Complex64::from_polar(magnitude, phase), leakage)
        })
        .collect()
}

/// Capture cadence in seconds: rain checks every 2 minutes, dry captures
/// every 10 minutes.
fn cadence_s(scenario: Scenario) -> f64 {
    match scenario {
        Scenario::Rain => 120.0,
        Scenario::NoRain => 600.0,
    }
}

/// Simulate a whole campaign: writes the shared TX frame, one RX tensor of
/// dims `[2, N, M]` per sample (co-pol then cross-pol), and the labeled
/// manifest. Deterministic in `seed`; samples are simulated in parallel.
pub fn sample_campaign(
    radio: &RadioConfig,
    params: &SimParams,
    spec: &CampaignSpec,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    radio.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let tx = generate_test_frame(radio, seed)?;
    tensorio::write_tensor(
        &out_dir.join("tx.tensor"),
        &Tensor::C128(tx.samples.clone().into_dyn()),
    )?;

    let environment = campaign_environment(seed, params, radio);

    // Flatten strata into per-sample jobs with deterministic ids and
    // synthetic timestamps (one capture cadence per scenario per day).
    struct Job {
        frame_id: u64,
        timestamp_s: f64,
        label: WeatherLabel,
        scenario: Scenario,
    }
    let mut jobs = Vec::with_capacity(spec.total_samples());
    let mut per_day_elapsed: std::collections::BTreeMap<u32, f64> = Default::default();
    let mut frame_id = 0u64;
    for stratum in &spec.strata {
        let scenario = if stratum.precipitation_mm_h > 0.0 {
            Scenario::Rain
        } else {
            Scenario::NoRain
        };
        for _ in 0..stratum.count {
            let elapsed = per_day_elapsed.entry(stratum.day).or_insert(0.0);
            let timestamp_s = stratum.day as f64 * 86_400.0 + *elapsed;
            *elapsed += cadence_s(scenario);

            let mut rng = substream(seed, Stream::Sample(frame_id));
            let jitter = |v: f64, rng: &mut rand_chacha::ChaCha8Rng| {
                if v == 0.0 || params.label_jitter == 0.0 {
                    v
                } else {
                    v * (1.0 + rng.random_range(-params.label_jitter..params.label_jitter))
                }
            };
            let label = WeatherLabel::new(
                jitter(stratum.precipitation_mm_h, &mut rng),
                jitter(stratum.wind_speed_km_h, &mut rng),
            );
            jobs.push(Job {
                frame_id,
                timestamp_s,
                label,
                scenario,
            });
            frame_id += 1;
        }
    }

    let frames_dir = out_dir.join("frames");
    std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;

    let entries: Result<Vec<ManifestEntry>> = jobs
        .par_iter()
        .map(|job| {
            let scene = WeatherScene {
                precipitation_mm_h: job.label.precipitation_mm_h,
                wind_speed_km_h: job.label.wind_speed_km_h,
                static_clutter: environment.clone(),
                noise_floor_power: params.noise_floor_power,
                // Per-sample seed: all scene randomness flows from it.
                seed: seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(job.frame_id + 1)),
            };
            let rx_v = simulate_rx(&tx, &scene, radio, params, Polarization::Vertical)?;
            let rx_h = simulate_rx(&tx, &scene, radio, params, Polarization::Horizontal)?;

            let (n, m) = (radio.subcarriers, radio.symbols);
            let mut stacked = ndarray::Array3::zeros((2, n, m));
            stacked
                .index_axis_mut(ndarray::Axis(0), 0)
                .assign(&rx_v.samples.mapv(|z| num_complex::Complex32::new(z.re as f32, z.im as f32)));
            stacked
                .index_axis_mut(ndarray::Axis(0), 1)
                .assign(&rx_h.samples.mapv(|z| num_complex::Complex32::new(z.re as f32, z.im as f32)));

            let rel_path = format!("frames/rx_{:06}.tensor", job.frame_id);
            tensorio::write_tensor(&out_dir.join(&rel_path), &Tensor::C64(stacked.into_dyn()))?;
            Ok(ManifestEntry {
                frame_id: job.frame_id,
                timestamp_s: job.timestamp_s,
                tensor_path: rel_path,
                label: Some(job.label),
                scenario: job.scenario,
            })
        })
        .collect();
    let mut entries = entries?;
    entries.sort_by_key(|e| e.frame_id);

    let manifest = DatasetManifest { entries };
    manifest.write(&tensorio::manifest_path(out_dir))?;
    Ok(manifest)
}
