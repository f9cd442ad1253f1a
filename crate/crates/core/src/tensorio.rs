//! Binary tensor container and the dataset manifest.
//!
//! The container stores one n-dimensional real or complex tensor, always
//! little-endian regardless of host. Layout (see `docs/FORMATS.md`):
//!
//! - magic: 8 bytes `IWTENSR1`
//! - dtype: u32 (0 = f32, 1 = f64, 2 = c64, 3 = c128)
//! - ndim: u32
//! - dims: ndim * u64
//! - payload: row-major element data; complex elements interleaved (re, im)
//!
//! The manifest is a line-delimited text index of captured samples, one
//! tab-separated record per line, so capture campaigns can append to it and
//! diff it.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, IxDyn};
use num_complex::{Complex32, Complex64};

use crate::error::{Error, Result};
use crate::labels::{Scenario, WeatherLabel};

pub const MAGIC: [u8; 8] = *b"IWTENSR1";

/// Element type of a stored tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
    C64,
    C128,
}

impl Dtype {
    pub fn code(self) -> u32 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
            Dtype::C64 => 2,
            Dtype::C128 => 3,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            2 => Some(Dtype::C64),
            3 => Some(Dtype::C128),
            _ => None,
        }
    }

    pub fn element_size(self) -> u64 {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
            Dtype::C64 => 8,
            Dtype::C128 => 16,
        }
    }
}

/// An owned tensor of any supported dtype.
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    F32(ArrayD<f32>),
    F64(ArrayD<f64>),
    C64(ArrayD<Complex32>),
    C128(ArrayD<Complex64>),
}

impl Tensor {
    pub fn dtype(&self) -> Dtype {
        match self {
            Tensor::F32(_) => Dtype::F32,
            Tensor::F64(_) => Dtype::F64,
            Tensor::C64(_) => Dtype::C64,
            Tensor::C128(_) => Dtype::C128,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match self {
            Tensor::F32(a) => a.shape().to_vec(),
            Tensor::F64(a) => a.shape().to_vec(),
            Tensor::C64(a) => a.shape().to_vec(),
            Tensor::C128(a) => a.shape().to_vec(),
        }
    }

    /// Complex view widened to `Complex64`; accepts c64 and c128 tensors.
    pub fn into_complex(self) -> Result<ArrayD<Complex64>> {
        match self {
            Tensor::C64(a) => Ok(a.mapv(|z| Complex64::new(z.re as f64, z.im as f64))),
            Tensor::C128(a) => Ok(a),
            other => Err(Error::Other(format!(
                "expected complex tensor, found {:?}",
                other.dtype()
            ))),
        }
    }

    /// Real view widened to `f64`; accepts f32 and f64 tensors.
    pub fn into_real(self) -> Result<ArrayD<f64>> {
        match self {
            Tensor::F32(a) => Ok(a.mapv(|x| x as f64)),
            Tensor::F64(a) => Ok(a),
            other => Err(Error::Other(format!(
                "expected real tensor, found {:?}",
                other.dtype()
            ))),
        }
    }
}

fn validate_dims(dims: &[usize]) -> Result<u64> {
    if dims.is_empty() {
        return Err(Error::InvalidDims {
            dims: vec![],
            reason: "tensor must have at least one dimension".into(),
        });
    }
    let mut count: u64 = 1;
    for &d in dims {
        if d == 0 {
            return Err(Error::InvalidDims {
                dims: dims.iter().map(|&d| d as u64).collect(),
                reason: "all extents must be >= 1".into(),
            });
        }
        count = count.checked_mul(d as u64).ok_or_else(|| Error::InvalidDims {
            dims: dims.iter().map(|&d| d as u64).collect(),
            reason: "element count overflows u64".into(),
        })?;
    }
    Ok(count)
}

/// Write `tensor` to `path`, creating parent directories as needed.
pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    let dims = tensor.dims();
    let count = validate_dims(&dims)?;
    count
        .checked_mul(tensor.dtype().element_size())
        .ok_or_else(|| Error::InvalidDims {
            dims: dims.iter().map(|&d| d as u64).collect(),
            reason: "payload size overflows u64".into(),
        })?;

    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);

    w.write_all(&MAGIC).map_err(io)?;
    w.write_all(&tensor.dtype().code().to_le_bytes()).map_err(io)?;
    w.write_all(&(dims.len() as u32).to_le_bytes()).map_err(io)?;
    for &d in &dims {
        w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
    }
    match tensor {
        Tensor::F32(a) => {
            for &x in a.iter() {
                w.write_all(&x.to_le_bytes()).map_err(io)?;
            }
        }
        Tensor::F64(a) => {
            for &x in a.iter() {
                w.write_all(&x.to_le_bytes()).map_err(io)?;
            }
        }
        Tensor::C64(a) => {
            for z in a.iter() {
                w.write_all(&z.re.to_le_bytes()).map_err(io)?;
                w.write_all(&z.im.to_le_bytes()).map_err(io)?;
            }
        }
        Tensor::C128(a) => {
            for z in a.iter() {
                w.write_all(&z.re.to_le_bytes()).map_err(io)?;
                w.write_all(&z.im.to_le_bytes()).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

/// Read a tensor written by [`write_tensor`]. Bad magic, unknown dtype,
/// truncated payload, and trailing bytes are reported as distinct errors.
pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(path, e);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: MAGIC,
            found: magic,
        });
    }

    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(io)?;
    let dtype_code = u32::from_le_bytes(u32buf);
    let dtype = Dtype::from_code(dtype_code).ok_or(Error::UnknownDtype {
        path: path.to_path_buf(),
        code: dtype_code,
    })?;

    r.read_exact(&mut u32buf).map_err(io)?;
    let ndim = u32::from_le_bytes(u32buf) as usize;
    let mut dims = Vec::with_capacity(ndim);
    let mut u64buf = [0u8; 8];
    for _ in 0..ndim {
        r.read_exact(&mut u64buf).map_err(io)?;
        dims.push(u64::from_le_bytes(u64buf) as usize);
    }
    let count = validate_dims(&dims)?;
    let expected = count * dtype.element_size();

    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(io)?;
    let found = payload.len() as u64;
    if found < expected {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    if found > expected {
        return Err(Error::TrailingBytes {
            path: path.to_path_buf(),
            extra: found - expected,
        });
    }

    let shape = IxDyn(&dims);
    let tensor = match dtype {
        Dtype::F32 => {
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Tensor::F32(ArrayD::from_shape_vec(shape, data).unwrap())
        }
        Dtype::F64 => {
            let data: Vec<f64> = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Tensor::F64(ArrayD::from_shape_vec(shape, data).unwrap())
        }
        Dtype::C64 => {
            let data: Vec<Complex32> = payload
                .chunks_exact(8)
                .map(|c| {
                    Complex32::new(
                        f32::from_le_bytes(c[0..4].try_into().unwrap()),
                        f32::from_le_bytes(c[4..8].try_into().unwrap()),
                    )
                })
                .collect();
            Tensor::C64(ArrayD::from_shape_vec(shape, data).unwrap())
        }
        Dtype::C128 => {
            let data: Vec<Complex64> = payload
                .chunks_exact(16)
                .map(|c| {
                    Complex64::new(
                        f64::from_le_bytes(c[0..8].try_into().unwrap()),
                        f64::from_le_bytes(c[8..16].try_into().unwrap()),
                    )
                })
                .collect();
            Tensor::C128(ArrayD::from_shape_vec(shape, data).unwrap())
        }
    };
    Ok(tensor)
}

/// One captured (or simulated) sample in a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub frame_id: u64,
    /// Capture time, seconds since the Unix epoch.
    pub timestamp_s: f64,
    /// Tensor path relative to the manifest's directory.
    pub tensor_path: String,
    /// Reference weather values; `None` until paired with station data.
    pub label: Option<WeatherLabel>,
    pub scenario: Scenario,
}

/// Index of all samples in a dataset directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Frame ids must be unique; duplicates are a capture bug.
    pub fn validate_unique_ids(&self) -> Result<()> {
        let mut ids: Vec<u64> = self.entries.iter().map(|e| e.frame_id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Other(format!("duplicate frame id {}", w[0])));
        }
        Ok(())
    }

    /// Check that every tensor path resolves to a readable tensor with the
    /// given dims (when `expected_dims` is provided).
    pub fn validate_tensors(&self, base_dir: &Path, expected_dims: Option<&[usize]>) -> Result<()> {
        for entry in &self.entries {
            let tensor = read_tensor(&base_dir.join(&entry.tensor_path))?;
            if let Some(expected) = expected_dims {
                let dims = tensor.dims();
                if dims != expected {
                    return Err(Error::DimMismatch {
                        context: format!("tensor for frame {}", entry.frame_id),
                        left: dims,
                        right: expected.to_vec(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "# isac-weather manifest v1").map_err(io)?;
        writeln!(
            w,
            "# frame_id\ttimestamp_s\ttensor_path\tprecipitation_mm_h\twind_km_h\tscenario"
        )
        .map_err(io)?;
        for e in &self.entries {
            let (p, v) = match &e.label {
                Some(l) => (l.precipitation_mm_h.to_string(), l.wind_speed_km_h.to_string()),
                None => ("-".to_string(), "-".to_string()),
            };
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}",
                e.frame_id,
                e.timestamp_s,
                e.tensor_path,
                p,
                v,
                e.scenario.as_str()
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let mut entries = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |reason: &str| Error::ManifestParse {
                path: path.to_path_buf(),
                line: lineno + 1,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 6 {
                return Err(parse_err(&format!(
                    "expected 6 tab-separated fields, found {}",
                    fields.len()
                )));
            }
            let frame_id = fields[0].parse().map_err(|_| parse_err("bad frame id"))?;
            let timestamp_s = fields[1].parse().map_err(|_| parse_err("bad timestamp"))?;
            let label = match (fields[3], fields[4]) {
                ("-", "-") => None,
                (p, v) => Some(WeatherLabel::new(
                    p.parse().map_err(|_| parse_err("bad precipitation value"))?,
                    v.parse().map_err(|_| parse_err("bad wind value"))?,
                )),
            };
            let scenario =
                Scenario::parse(fields[5]).ok_or_else(|| parse_err("bad scenario"))?;
            entries.push(ManifestEntry {
                frame_id,
                timestamp_s,
                tensor_path: fields[2].to_string(),
                label,
                scenario,
            });
        }
        Ok(DatasetManifest { entries })
    }
}

/// Standard manifest filename inside a dataset directory.
pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.tsv")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use tempfile::tempdir;

    fn c64(re: f32, im: f32) -> Complex32 {
        Complex32::new(re, im)
    }

    #[test]
    fn identity_matrix_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("id.tensor");
        let t = Tensor::C64(
            arr2(&[[c64(1.0, 0.0), c64(0.0, 0.0)], [c64(0.0, 0.0), c64(1.0, 0.0)]]).into_dyn(),
        );
        write_tensor(&path, &t).unwrap();
        // header: 8 magic + 4 dtype + 4 ndim + 16 dims; payload: 4 * 8 bytes
        let len = std::fs::metadata(&path).unwrap().len();
        assert_eq!(len, 32 + 32);
        assert_eq!(read_tensor(&path).unwrap(), t);
    }

    #[test]
    fn smallest_legal_file_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("one.tensor");
        let t = Tensor::F32(ArrayD::from_shape_vec(IxDyn(&[1, 1]), vec![0.0f32]).unwrap());
        write_tensor(&path, &t).unwrap();
        assert_eq!(read_tensor(&path).unwrap(), t);
    }

    #[test]
    fn feature_tensor_payload_size() {
        // 746 x 68 x 4 f32 => 811,648 payload bytes after the header.
        let dir = tempdir().unwrap();
        let path = dir.path().join("feat.tensor");
        let t = Tensor::F32(ArrayD::zeros(IxDyn(&[746, 68, 4])));
        write_tensor(&path, &t).unwrap();
        let header = 8 + 4 + 4 + 3 * 8;
        let len = std::fs::metadata(&path).unwrap().len();
        assert_eq!(len - header, 746 * 68 * 4 * 4);
        let back = read_tensor(&path).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn corrupted_magic_is_distinct_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.tensor");
        let t = Tensor::F64(ArrayD::zeros(IxDyn(&[2, 2])));
        write_tensor(&path, &t).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        match read_tensor(&path) {
            Err(Error::BadMagic { .. }) => {}
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_reports_lengths() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("short.tensor");
        let t = Tensor::F32(ArrayD::zeros(IxDyn(&[3])));
        write_tensor(&path, &t).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        match read_tensor(&path) {
            Err(Error::TruncatedPayload { expected, found, .. }) => {
                assert_eq!(expected, 12);
                assert_eq!(found, 8);
            }
            other => panic!("expected TruncatedPayload, got {other:?}"),
        }
    }

    #[test]
    fn unknown_dtype_is_distinct_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("odd.tensor");
        let t = Tensor::F32(ArrayD::zeros(IxDyn(&[1])));
        write_tensor(&path, &t).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 42;
        std::fs::write(&path, &bytes).unwrap();
        match read_tensor(&path) {
            Err(Error::UnknownDtype { code: 42, .. }) => {}
            other => panic!("expected UnknownDtype, got {other:?}"),
        }
    }

    #[test]
    fn zero_extent_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("zero.tensor");
        let t = Tensor::F32(ArrayD::zeros(IxDyn(&[2, 0])));
        assert!(matches!(
            write_tensor(&path, &t),
            Err(Error::InvalidDims { .. })
        ));
    }

    mod roundtrip_property {
        use super::*;
        use proptest::prelude::*;

        fn arb_tensor() -> impl Strategy<Value = Tensor> {
            let dims = proptest::collection::vec(1usize..5, 1..4);
            (0u8..4, dims).prop_flat_map(|(kind, dims)| {
                let count: usize = dims.iter().product();
                let shape = IxDyn(&dims);
                match kind {
                    0 => proptest::collection::vec(any::<f32>(), count)
                        .prop_map(move |v| {
                            Tensor::F32(ArrayD::from_shape_vec(shape.clone(), v).unwrap())
                        })
                        .boxed(),
                    1 => proptest::collection::vec(any::<f64>(), count)
                        .prop_map(move |v| {
                            Tensor::F64(ArrayD::from_shape_vec(shape.clone(), v).unwrap())
                        })
                        .boxed(),
                    2 => proptest::collection::vec(any::<(f32, f32)>(), count)
                        .prop_map(move |v| {
                            let v = v.into_iter().map(|(re, im)| Complex32::new(re, im));
                            Tensor::C64(
                                ArrayD::from_shape_vec(shape.clone(), v.collect()).unwrap(),
                            )
                        })
                        .boxed(),
                    _ => proptest::collection::vec(any::<(f64, f64)>(), count)
                        .prop_map(move |v| {
                            let v = v.into_iter().map(|(re, im)| Complex64::new(re, im));
                            Tensor::C128(
                                ArrayD::from_shape_vec(shape.clone(), v.collect()).unwrap(),
                            )
                        })
                        .boxed(),
                }
            })
        }

        fn bits_equal(a: &Tensor, b: &Tensor) -> bool {
            // NaN-safe bit-exact comparison.
            match (a, b) {
                (Tensor::F32(x), Tensor::F32(y)) => {
                    x.shape() == y.shape()
                        && x.iter().zip(y.iter()).all(|(a, b)| a.to_bits() == b.to_bits())
                }
                (Tensor::F64(x), Tensor::F64(y)) => {
                    x.shape() == y.shape()
                        && x.iter().zip(y.iter()).all(|(a, b)| a.to_bits() == b.to_bits())
                }
                (Tensor::C64(x), Tensor::C64(y)) => {
                    x.shape() == y.shape()
                        && x.iter().zip(y.iter()).all(|(a, b)| {
                            a.re.to_bits() == b.re.to_bits() && a.im.to_bits() == b.im.to_bits()
                        })
                }
                (Tensor::C128(x), Tensor::C128(y)) => {
                    x.shape() == y.shape()
                        && x.iter().zip(y.iter()).all(|(a, b)| {
                            a.re.to_bits() == b.re.to_bits() && a.im.to_bits() == b.im.to_bits()
                        })
                }
                _ => false,
            }
        }

        proptest! {
            #[test]
            fn read_write_is_identity(t in arb_tensor()) {
                let dir = tempdir().unwrap();
                let path = dir.path().join("t.tensor");
                write_tensor(&path, &t).unwrap();
                let back = read_tensor(&path).unwrap();
                prop_assert!(bits_equal(&back, &t));
            }
        }
    }

    #[test]
    fn manifest_round_trips_with_and_without_labels() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("manifest.tsv");
        let manifest = DatasetManifest {
            entries: vec![
                ManifestEntry {
                    frame_id: 0,
                    timestamp_s: 1000.5,
                    tensor_path: "frames/rx_000000.tensor".into(),
                    label: Some(WeatherLabel::new(6.25, 9.0)),
                    scenario: Scenario::Rain,
                },
                ManifestEntry {
                    frame_id: 1,
                    timestamp_s: 1600.0,
                    tensor_path: "frames/rx_000001.tensor".into(),
                    label: None,
                    scenario: Scenario::NoRain,
                },
            ],
        };
        manifest.write(&path).unwrap();
        let back = DatasetManifest::read(&path).unwrap();
        assert_eq!(back, manifest);
        back.validate_unique_ids().unwrap();
    }
}
