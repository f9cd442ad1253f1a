//! Channel state information: estimation by element-wise division and
//! zero-padding to power-of-two extents.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::ofdm::{OfdmFrame, PolarizationPair};

/// Processing stage of a CSI matrix. Padded and cleaned matrices remember
/// the original (unpadded) extents, which the periodogram scaling needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsiStage {
    Raw,
    Padded { orig: (usize, usize) },
    Cleaned { orig: (usize, usize) },
}

/// A complex channel estimate between the TX reference and one RX port.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiMatrix {
    pub values: Array2<Complex64>,
    pub stage: CsiStage,
    pub source_frame_id: u64,
    pub pair: PolarizationPair,
}

impl CsiMatrix {
    /// Original (unpadded) extents of the estimate.
    pub fn original_dims(&self) -> (usize, usize) {
        match self.stage {
            CsiStage::Raw => self.values.dim(),
            CsiStage::Padded { orig } | CsiStage::Cleaned { orig } => orig,
        }
    }
}

/// Estimate the channel as the element-wise ratio of the received frame to
/// the transmitted reference frame.
pub fn estimate_csi(rx: &OfdmFrame, tx: &OfdmFrame, frame_id: u64) -> Result<CsiMatrix> {
    if rx.dims() != tx.dims() {
        return Err(Error::DimMismatch {
            context: "csi estimation".into(),
            left: vec![rx.dims().0, rx.dims().1],
            right: vec![tx.dims().0, tx.dims().1],
        });
    }
    let (rows, cols) = tx.dims();
    for k in 0..rows {
        for l in 0..cols {
            if tx.samples[(k, l)].norm_sqr() == 0.0 {
                return Err(Error::ZeroReferenceSample { row: k, col: l });
            }
        }
    }
    let values = &rx.samples / &tx.samples;
    let pair = match (tx.polarization, rx.polarization) {
        (a, b) if a == b => PolarizationPair::CoPol,
        _ => PolarizationPair::CrossPol,
    };
    Ok(CsiMatrix {
        values,
        stage: CsiStage::Raw,
        source_frame_id: frame_id,
        pair,
    })
}

/// Zero-pad a raw estimate to the next power of two in both extents. The
/// original block is preserved exactly in the top-left corner.
pub fn zero_pad(csi: &CsiMatrix) -> Result<CsiMatrix> {
    if csi.stage != CsiStage::Raw {
        return Err(Error::Other(format!(
            "zero_pad expects a raw CSI matrix, got {:?}",
            csi.stage
        )));
    }
    let (n, m) = csi.values.dim();
    let (n_pad, m_pad) = (n.next_power_of_two(), m.next_power_of_two());
    let mut padded = Array2::zeros((n_pad, m_pad));
    padded.slice_mut(ndarray::s![..n, ..m]).assign(&csi.values);
    Ok(CsiMatrix {
        values: padded,
        stage: CsiStage::Padded { orig: (n, m) },
        source_frame_id: csi.source_frame_id,
        pair: csi.pair,
    })
}
