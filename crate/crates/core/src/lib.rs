//! Weather sensing from OFDM channel estimates.
//!
//! A communication system run radar-style: the received frames of a
//! continuously transmitted QPSK test frame are turned into channel
//! estimates, cleaned of static clutter, transformed into range-Doppler
//! periodograms, and fed as four-channel images to a small CNN that jointly
//! classifies or regresses precipitation rate and wind speed.
//!
//! Modules follow the pipeline order:
//!
//! - [`tensorio`]: binary tensor container and dataset manifest
//! - [`ofdm`]: radio parameters and the TX test frame
//! - [`chansim`]: synthetic scene -> RX frame simulator and campaigns
//! - [`csi`]: channel estimation and zero-padding
//! - [`clutter`]: calibration-based clutter subspace projection
//! - [`radar`]: range-Doppler periodogram and cropping
//! - [`features`]: four-channel tensors and normalization
//! - [`nn`]: the CNN, its losses, backprop, and Adam
//! - [`dataset`]: label pairing, splits, balanced batches
//! - [`train`]: training loop and checkpoints
//! - [`eval`]: confusion matrices, error CDFs, report files

pub mod chansim;
pub mod clutter;
pub mod config;
pub mod csi;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod labels;
pub mod nn;
pub mod ofdm;
pub mod pgm;
pub mod pipeline;
pub mod radar;
pub mod rng;
pub mod tensorio;
pub mod train;

pub use error::{Error, Result};
