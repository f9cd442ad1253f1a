//! Radio parameterization and the QPSK test frame used as the TX reference.

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

/// Speed of light in m/s, exact.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Receive antenna polarization. Transmission is always on the vertical
/// port; the horizontal port sees cross-polarized reflections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarization {
    Vertical,
    Horizontal,
}

/// TX/RX polarization combination of a channel estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolarizationPair {
    CoPol,
    CrossPol,
}

impl PolarizationPair {
    pub fn rx(self) -> Polarization {
        match self {
            PolarizationPair::CoPol => Polarization::Vertical,
            PolarizationPair::CrossPol => Polarization::Horizontal,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PolarizationPair::CoPol => "copol",
            PolarizationPair::CrossPol => "crosspol",
        }
    }
}

/// OFDM frame and carrier parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadioConfig {
    /// Subcarriers per symbol (frequency axis).
    pub subcarriers: usize,
    /// OFDM symbols per frame (time axis).
    pub symbols: usize,
    /// Subcarrier spacing in Hz.
    pub subcarrier_spacing_hz: f64,
    /// Carrier frequency in Hz.
    pub carrier_frequency_hz: f64,
    /// Frame duration in seconds; the symbol duration is derived from it.
    pub frame_duration_s: f64,
}

impl Default for RadioConfig {
    /// The mmWave proof-of-concept profile: 1584 subcarriers at 120 kHz
    /// spacing, 1120 symbols in a 10 ms frame, 27.6 GHz carrier.
    fn default() -> Self {
        Self {
            subcarriers: 1584,
            symbols: 1120,
            subcarrier_spacing_hz: 120e3,
            carrier_frequency_hz: 27.6e9,
            frame_duration_s: 0.01,
        }
    }
}

impl RadioConfig {
    /// Reduced profile for desk-scale runs: 256x256 frames with the same
    /// subcarrier spacing, carrier, and symbol duration as the PoC profile.
    pub fn reduced() -> Self {
        Self {
            subcarriers: 256,
            symbols: 256,
            subcarrier_spacing_hz: 120e3,
            carrier_frequency_hz: 27.6e9,
            frame_duration_s: 0.01 * 256.0 / 1120.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.subcarriers == 0 || self.symbols == 0 {
            return Err(Error::InvalidConfig(
                "subcarriers and symbols must be >= 1".into(),
            ));
        }
        for (name, v) in [
            ("subcarrier_spacing_hz", self.subcarrier_spacing_hz),
            ("carrier_frequency_hz", self.carrier_frequency_hz),
            ("frame_duration_s", self.frame_duration_s),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Symbol duration in seconds (frame duration over symbol count).
    pub fn symbol_duration_s(&self) -> f64 {
        self.frame_duration_s / self.symbols as f64
    }

    /// Carrier wavelength in meters.
    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency_hz
    }

    /// Padded FFT lengths: next power of two of (subcarriers, symbols).
    pub fn padded_dims(&self) -> (usize, usize) {
        (
            self.subcarriers.next_power_of_two(),
            self.symbols.next_power_of_two(),
        )
    }

    /// Largest unambiguous one-way range in meters.
    pub fn unambiguous_range_m(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.subcarrier_spacing_hz)
    }

    /// Largest unambiguous radial speed magnitude in m/s.
    pub fn unambiguous_speed_mps(&self) -> f64 {
        self.wavelength_m() / (4.0 * self.symbol_duration_s())
    }
}

/// Width of one range bin in meters, for an FFT of length `n_pad` over
/// subcarriers.
pub fn range_resolution(config: &RadioConfig, n_pad: usize) -> Result<f64> {
    config.validate()?;
    if n_pad == 0 {
        return Err(Error::InvalidConfig("n_pad must be >= 1".into()));
    }
    Ok(SPEED_OF_LIGHT / (2.0 * n_pad as f64 * config.subcarrier_spacing_hz))
}

/// Width of one radial-speed bin in m/s, for an FFT of length `m_pad` over
/// symbols.
pub fn doppler_resolution(config: &RadioConfig, m_pad: usize) -> Result<f64> {
    config.validate()?;
    if m_pad == 0 {
        return Err(Error::InvalidConfig("m_pad must be >= 1".into()));
    }
    Ok(config.wavelength_m() / 2.0 / (m_pad as f64 * config.symbol_duration_s()))
}

/// One complex OFDM frame over subcarriers (rows) and symbols (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct OfdmFrame {
    pub samples: Array2<Complex64>,
    pub polarization: Polarization,
}

impl OfdmFrame {
    pub fn dims(&self) -> (usize, usize) {
        self.samples.dim()
    }
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// The four-point QPSK alphabet, unit magnitude.
pub const QPSK_ALPHABET: [Complex64; 4] = [
    Complex64::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2),
    Complex64::new(FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
    Complex64::new(-FRAC_1_SQRT_2, FRAC_1_SQRT_2),
    Complex64::new(-FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
];

/// Generate the pre-recorded TX test frame: every subcarrier/symbol cell
/// carries an i.i.d. random QPSK constellation point. Deterministic for a
/// fixed seed; entries are drawn in row-major order.
pub fn generate_test_frame(config: &RadioConfig, seed: u64) -> Result<OfdmFrame> {
    config.validate()?;
    let mut rng = substream(seed, Stream::TxFrame);
    let (n, m) = (config.subcarriers, config.symbols);
    let data: Vec<Complex64> = (0..n * m)
        .map(|_| QPSK_ALPHABET[rng.random_range(0..4usize)])
        .collect();
    Ok(OfdmFrame {
        samples: Array2::from_shape_vec((n, m), data).unwrap(),
        polarization: Polarization::Vertical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_profile_matches_poc() {
        let c = RadioConfig::default();
        assert_eq!(c.subcarriers, 1584);
        assert_eq!(c.symbols, 1120);
        assert_eq!(c.subcarrier_spacing_hz, 120e3);
        assert_eq!(c.carrier_frequency_hz, 27.6e9);
        assert_eq!(c.frame_duration_s, 0.01);
        assert_eq!(c.padded_dims(), (2048, 2048));
    }

    #[test]
    fn test_frame_entries_are_qpsk() {
        let c = RadioConfig {
            subcarriers: 2,
            symbols: 2,
            ..RadioConfig::default()
        };
        let frame = generate_test_frame(&c, 11).unwrap();
        assert_eq!(frame.dims(), (2, 2));
        for z in frame.samples.iter() {
            assert!(QPSK_ALPHABET.contains(z), "{z} not a QPSK point");
            assert!((z.norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn test_frame_is_deterministic() {
        let c = RadioConfig::reduced();
        let a = generate_test_frame(&c, 99).unwrap();
        let b = generate_test_frame(&c, 99).unwrap();
        assert_eq!(a, b);
        let other = generate_test_frame(&c, 100).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn full_size_frame_mean_is_near_zero() {
        let c = RadioConfig::default();
        let frame = generate_test_frame(&c, 7).unwrap();
        let mean = frame.samples.iter().sum::<Complex64>()
            / Complex64::new((c.subcarriers * c.symbols) as f64, 0.0);
        assert!(mean.norm() < 0.01, "mean {mean} too far from zero");
    }

    #[test]
    fn poc_resolutions() {
        let c = RadioConfig::default();
        let speed_bin = doppler_resolution(&c, 2048).unwrap();
        let range_bin = range_resolution(&c, 2048).unwrap();
        assert!((speed_bin - 0.297).abs() < 1e-3, "speed bin {speed_bin}");
        assert!((range_bin - 0.610).abs() < 1e-3, "range bin {range_bin}");
        // +-10 m/s spans 68 bins at this resolution.
        assert_eq!(2 * (10.0_f64 / speed_bin).ceil() as usize, 68);
    }

    #[test]
    fn resolutions_scale_inversely() {
        let c = RadioConfig::default();
        let mut doubled = c.clone();
        doubled.subcarrier_spacing_hz *= 2.0;
        assert_eq!(
            range_resolution(&doubled, 2048).unwrap(),
            range_resolution(&c, 2048).unwrap() / 2.0
        );
        let mut fc2 = c.clone();
        fc2.carrier_frequency_hz *= 2.0;
        assert!(
            (doppler_resolution(&fc2, 2048).unwrap()
                - doppler_resolution(&c, 2048).unwrap() / 2.0)
                .abs()
                < 1e-12
        );
    }

    #[test]
    fn invalid_config_rejected() {
        let mut c = RadioConfig::default();
        c.subcarrier_spacing_hz = 0.0;
        assert!(c.validate().is_err());
        assert!(doppler_resolution(&RadioConfig::default(), 0).is_err());
    }
}
