//! Range-Doppler periodogram computation.
//!
//! The complex map is computed from a padded (and usually clutter-cleaned)
//! CSI matrix as
//!
//! ```text
//! P[n, m] = 1/(N * M * N_pad) * sum_k e^{+j2πkn/N_pad}
//!                                 * sum_l H[k, l] e^{-j2πlm/M_pad}
//! ```
//!
//! i.e. an unnormalized forward FFT over the symbol axis (time -> Doppler),
//! an inverse FFT carrying `1/N_pad` over the subcarrier axis
//! (frequency -> delay), and an explicit `1/(N*M)` prefactor, where N and M
//! are the *unpadded* frame extents. With this convention the total power of
//! the full (uncropped) map obeys
//!
//! ```text
//! sum |P|^2 = ||H||_F^2 * M_pad / (N_pad * (N*M)^2)
//! ```
//!
//! The Doppler axis is circularly shifted so that, after cropping to the
//! centered `m'` columns, zero Doppler sits at column `(m' - 1) / 2`
//! (integer division). Row cropping keeps bins `[0, n')`, range zero first.

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::csi::{CsiMatrix, CsiStage};
use crate::error::{Error, Result};
use crate::ofdm::{doppler_resolution, range_resolution, PolarizationPair, RadioConfig};

/// Cropped complex range-Doppler map. Rows are range bins counted from
/// zero; columns are radial-speed bins centered on zero Doppler.
#[derive(Debug, Clone, PartialEq)]
pub struct Periodogram {
    pub values: Array2<Complex64>,
    pub range_bin_m: f64,
    pub speed_bin_mps: f64,
    pub pair: PolarizationPair,
}

impl Periodogram {
    /// Column holding zero Doppler.
    pub fn zero_doppler_col(&self) -> usize {
        (self.values.ncols() - 1) / 2
    }

    /// Grid cell where a scatterer at (`range_m`, `speed_mps`) lands,
    /// if inside the cropped window.
    pub fn bin_for(&self, range_m: f64, speed_mps: f64) -> Option<(usize, usize)> {
        let row = (range_m / self.range_bin_m).round();
        let col = self.zero_doppler_col() as f64 + (speed_mps / self.speed_bin_mps).round();
        if row < 0.0
            || row >= self.values.nrows() as f64
            || col < 0.0
            || col >= self.values.ncols() as f64
        {
            return None;
        }
        Some((row as usize, col as usize))
    }

    /// Cell with maximum power.
    pub fn argmax_power(&self) -> (usize, usize) {
        let mut best = (0, 0);
        let mut best_power = f64::MIN;
        for ((r, c), z) in self.values.indexed_iter() {
            let p = z.norm_sqr();
            if p > best_power {
                best_power = p;
                best = (r, c);
            }
        }
        best
    }

    /// Total power of the map.
    pub fn total_power(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Column offset of the centered crop: the crop keeps columns
/// `[offset, offset + m_prime)` of the shifted full map.
pub fn crop_col_offset(m_pad: usize, m_prime: usize) -> usize {
    (m_pad - m_prime) / 2
}

/// Shift amount placing zero Doppler at column
/// `crop_col_offset + (m_prime - 1) / 2` of the shifted map.
fn doppler_shift(m_pad: usize, m_prime: usize) -> usize {
    crop_col_offset(m_pad, m_prime) + (m_prime - 1) / 2
}

/// Compute the cropped complex periodogram of a padded or cleaned CSI
/// matrix. `radio` supplies the bin widths recorded on the result.
pub fn periodogram(
    csi: &CsiMatrix,
    radio: &RadioConfig,
    n_prime: usize,
    m_prime: usize,
) -> Result<Periodogram> {
    let (orig_n, orig_m) = match csi.stage {
        CsiStage::Padded { orig } | CsiStage::Cleaned { orig } => orig,
        CsiStage::Raw => {
            return Err(Error::Other(
                "periodogram expects a padded or cleaned CSI matrix".into(),
            ))
        }
    };
    let (n_pad, m_pad) = csi.values.dim();
    if !(1..=n_pad).contains(&n_prime) || !(1..=m_pad).contains(&m_prime) {
        return Err(Error::InvalidConfig(format!(
            "crop ({n_prime}, {m_prime}) outside padded extents ({n_pad}, {m_pad})"
        )));
    }

    let mut planner = FftPlanner::<f64>::new();
    let fft_cols = planner.plan_fft_forward(m_pad);
    let ifft_rows = planner.plan_fft_inverse(n_pad);

    // Symbol axis (rows are contiguous): time -> Doppler.
    let mut work = csi.values.clone();
    {
        let slice = work.as_slice_mut().expect("row-major layout");
        for row in slice.chunks_exact_mut(m_pad) {
            fft_cols.process(row);
        }
    }

    // Subcarrier axis: frequency -> delay, with 1/N_pad and the 1/(N*M)
    // prefactor folded into one scale.
    let scale = 1.0 / (n_pad as f64 * orig_n as f64 * orig_m as f64);
    let mut col_buf = vec![Complex64::new(0.0, 0.0); n_pad];
    let mut full = Array2::zeros((n_pad, m_pad));
    for c in 0..m_pad {
        for r in 0..n_pad {
            col_buf[r] = work[(r, c)];
        }
        ifft_rows.process(&mut col_buf);
        for r in 0..n_pad {
            full[(r, c)] = col_buf[r] * scale;
        }
    }

    // Center the Doppler axis and crop.
    let shift = doppler_shift(m_pad, m_prime);
    let offset = crop_col_offset(m_pad, m_prime);
    let mut cropped = Array2::zeros((n_prime, m_prime));
    for r in 0..n_prime {
        for c in 0..m_prime {
            let src_col = (offset + c + m_pad - shift) % m_pad;
            cropped[(r, c)] = full[(r, src_col)];
        }
    }

    Ok(Periodogram {
        values: cropped,
        range_bin_m: range_resolution(radio, n_pad)?,
        speed_bin_mps: doppler_resolution(radio, m_pad)?,
        pair: csi.pair,
    })
}

/// Evaluation window for periodogram cropping. Explicit bin counts
/// override the widths derived from the physical window.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CropConfig {
    pub max_range_m: f64,
    pub max_abs_speed_mps: f64,
    pub range_bins: Option<usize>,
    pub speed_bins: Option<usize>,
}

impl Default for CropConfig {
    /// The PoC evaluation window: [0, 450] m and [-10, +10] m/s, with the
    /// bin counts pinned to 746 x 68.
    fn default() -> Self {
        Self {
            max_range_m: 450.0,
            max_abs_speed_mps: 10.0,
            range_bins: Some(746),
            speed_bins: Some(68),
        }
    }
}

/// Resolve the crop window to `(n_prime, m_prime)` bin counts.
pub fn crop_window(radio: &RadioConfig, crop: &CropConfig) -> Result<(usize, usize)> {
    if !(crop.max_range_m > 0.0) || !(crop.max_abs_speed_mps > 0.0) {
        return Err(Error::InvalidConfig(
            "crop window extents must be positive".into(),
        ));
    }
    if crop.max_range_m > radio.unambiguous_range_m() {
        return Err(Error::InvalidConfig(format!(
            "max range {} m exceeds unambiguous range {:.1} m",
            crop.max_range_m,
            radio.unambiguous_range_m()
        )));
    }
    if crop.max_abs_speed_mps > radio.unambiguous_speed_mps() {
        return Err(Error::InvalidConfig(format!(
            "max speed {} m/s exceeds unambiguous speed {:.1} m/s",
            crop.max_abs_speed_mps,
            radio.unambiguous_speed_mps()
        )));
    }
    let (n_pad, m_pad) = radio.padded_dims();
    let n_prime = match crop.range_bins {
        Some(n) => n,
        None => (crop.max_range_m / range_resolution(radio, n_pad)?).ceil() as usize,
    };
    let m_prime = match crop.speed_bins {
        Some(m) => m,
        None => 2 * (crop.max_abs_speed_mps / doppler_resolution(radio, m_pad)?).ceil() as usize,
    };
    if !(1..=n_pad).contains(&n_prime) || !(1..=m_pad).contains(&m_prime) {
        return Err(Error::InvalidConfig(format!(
            "crop ({n_prime}, {m_prime}) outside padded extents ({n_pad}, {m_pad})"
        )));
    }
    Ok((n_prime, m_prime))
}
