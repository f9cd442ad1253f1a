//! Static-clutter suppression by subspace projection.
//!
//! Calibration snapshots (padded CSI matrices from a calm, dry day) are
//! vectorized into the columns of a tall matrix `A`. The clutter subspace is
//! spanned by the leading left singular vectors of `A`, retained until their
//! cumulative squared singular values reach the configured energy fraction.
//! Cleaning projects a CSI matrix onto the orthogonal complement:
//!
//! ```text
//! vec(H_clean) = vec(H) - B (B^H vec(H))
//! ```
//!
//! Static reflections shared by the calibration set are annihilated while
//! dynamic returns (raindrops, anything moving) pass through. The SVD is
//! computed through the Gram matrix `A^H A` (snapshot counts are small while
//! snapshots themselves are large), followed by a re-orthonormalization pass
//! over the lifted vectors.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::csi::{CsiMatrix, CsiStage};
use crate::error::{Error, Result};
use crate::tensorio::{self, Tensor};

/// Relative threshold below which squared singular values are treated as
/// numerically zero.
const RANK_EPS: f64 = 1e-12;

/// Provenance of a fitted clutter basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClutterMeta {
    /// Calendar day (days since the epoch) the calibration samples came
    /// from, when known.
    pub source_day: Option<i64>,
    pub sample_count: usize,
    pub energy_fraction: f64,
}

/// Orthonormal basis of the clutter subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct ClutterBasis {
    /// Basis vectors as columns; `n_pad * m_pad` rows, `rank` columns.
    pub vectors: Array2<Complex64>,
    /// Padded CSI extents the basis applies to.
    pub dims: (usize, usize),
    /// All squared-singular-value energies of the snapshot matrix,
    /// descending.
    pub energies: Vec<f64>,
    pub meta: ClutterMeta,
}

impl ClutterBasis {
    pub fn rank(&self) -> usize {
        self.vectors.ncols()
    }

    /// Largest absolute deviation of the basis Gram matrix from identity.
    pub fn orthonormality_error(&self) -> f64 {
        let r = self.rank();
        let mut worst: f64 = 0.0;
        for i in 0..r {
            for j in 0..r {
                let mut dot = Complex64::new(0.0, 0.0);
                for k in 0..self.vectors.nrows() {
                    dot += self.vectors[(k, i)].conj() * self.vectors[(k, j)];
                }
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).norm());
            }
        }
        worst
    }

    /// Persist as a tensor file plus a TOML metadata sidecar.
    pub fn save(&self, tensor_path: &Path, meta_path: &Path) -> Result<()> {
        tensorio::write_tensor(tensor_path, &Tensor::C128(self.vectors.clone().into_dyn()))?;
        #[derive(Serialize)]
        struct Sidecar<'a> {
            rows: usize,
            cols: usize,
            energies: &'a [f64],
            meta: &'a ClutterMeta,
        }
        let sidecar = Sidecar {
            rows: self.dims.0,
            cols: self.dims.1,
            energies: &self.energies,
            meta: &self.meta,
        };
        let text = toml::to_string(&sidecar)
            .map_err(|e| Error::Other(format!("serialize clutter metadata: {e}")))?;
        std::fs::write(meta_path, text).map_err(|e| Error::io(meta_path, e))
    }

    pub fn load(tensor_path: &Path, meta_path: &Path) -> Result<Self> {
        let vectors = tensorio::read_tensor(tensor_path)?.into_complex()?;
        let vectors = vectors
            .into_dimensionality::<ndarray::Ix2>()
            .map_err(|_| Error::Other("clutter basis tensor must be 2-d".into()))?;
        #[derive(Deserialize)]
        struct Sidecar {
            rows: usize,
            cols: usize,
            energies: Vec<f64>,
            meta: ClutterMeta,
        }
        let text = std::fs::read_to_string(meta_path).map_err(|e| Error::io(meta_path, e))?;
        let sidecar: Sidecar = toml::from_str(&text)
            .map_err(|e| Error::Other(format!("parse clutter metadata: {e}")))?;
        if sidecar.rows * sidecar.cols != vectors.nrows() {
            return Err(Error::DimMismatch {
                context: "clutter basis vs sidecar dims".into(),
                left: vec![vectors.nrows()],
                right: vec![sidecar.rows * sidecar.cols],
            });
        }
        Ok(ClutterBasis {
            vectors,
            dims: (sidecar.rows, sidecar.cols),
            energies: sidecar.energies,
            meta: sidecar.meta,
        })
    }
}

/// Eigendecomposition of a small Hermitian matrix by cyclic complex Jacobi
/// rotations. Returns eigenvalues (descending) and the matching unitary
/// eigenvector columns.
fn hermitian_eig(g: &Array2<Complex64>) -> (Vec<f64>, Array2<Complex64>) {
    let n = g.nrows();
    let mut a = g.clone();
    let mut v: Array2<Complex64> = Array2::eye(n);
    let norm: f64 = a.iter().map(|z| z.norm_sqr()).sum();
    let tol = (norm * 1e-30).max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let mut off: f64 = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)].norm_sqr();
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let gamma = a[(p, q)];
                if gamma.norm_sqr() <= tol / (n * n) as f64 {
                    continue;
                }
                let alpha = a[(p, p)].re;
                let beta = a[(q, q)].re;
                let phase = Complex64::from_polar(1.0, gamma.arg());
                let theta = 0.5 * (2.0 * gamma.norm()).atan2(alpha - beta);
                let (s, c) = theta.sin_cos();
                let sp = phase.conj() * s; // e^{-i phi} * s
                let cp = phase.conj() * c;

                // A <- J^H A J with J = [[c, -s], [e^{-i phi} s, e^{-i phi} c]]
                for i in 0..n {
                    let aip = a[(i, p)];
                    let aiq = a[(i, q)];
                    a[(i, p)] = aip * c + aiq * sp;
                    a[(i, q)] = -aip * s + aiq * cp;
                }
                for i in 0..n {
                    let api = a[(p, i)];
                    let aqi = a[(q, i)];
                    a[(p, i)] = api * c + aqi * sp.conj();
                    a[(q, i)] = -api * s + aqi * cp.conj();
                }
                for i in 0..n {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = vip * c + viq * sp;
                    v[(i, q)] = -vip * s + viq * cp;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].re.total_cmp(&a[(i, i)].re));
    let values: Vec<f64> = order.iter().map(|&i| a[(i, i)].re).collect();
    let mut vectors = Array2::zeros((n, n));
    for (new, &old) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, new)] = v[(r, old)];
        }
    }
    (values, vectors)
}

/// Fit the clutter subspace from calibration snapshots. The retained rank
/// is the smallest `r` whose cumulative energy reaches `energy_fraction` of
/// the numerically nonzero total, optionally capped by `max_rank`.
pub fn fit_clutter_basis(
    calibration: &[CsiMatrix],
    energy_fraction: f64,
    max_rank: Option<usize>,
) -> Result<ClutterBasis> {
    if calibration.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    if !(energy_fraction > 0.0 && energy_fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "energy fraction must be in (0, 1], got {energy_fraction}"
        )));
    }
    let dims = calibration[0].values.dim();
    for snap in calibration {
        if matches!(snap.stage, CsiStage::Raw) {
            return Err(Error::Other(
                "clutter calibration expects padded CSI matrices".into(),
            ));
        }
        if snap.values.dim() != dims {
            return Err(Error::DimMismatch {
                context: "calibration snapshot dims".into(),
                left: vec![snap.values.dim().0, snap.values.dim().1],
                right: vec![dims.0, dims.1],
            });
        }
    }

    let p = dims.0 * dims.1;
    let s = calibration.len();
    let columns: Vec<&[Complex64]> = calibration
        .iter()
        .map(|snap| snap.values.as_slice().expect("row-major layout"))
        .collect();

    // Gram matrix A^H A.
    let mut gram = Array2::zeros((s, s));
    for i in 0..s {
        for j in i..s {
            let mut dot = Complex64::new(0.0, 0.0);
            for k in 0..p {
                dot += columns[i][k].conj() * columns[j][k];
            }
            gram[(i, j)] = dot;
            gram[(j, i)] = dot.conj();
        }
    }

    let (eigenvalues, eigenvectors) = hermitian_eig(&gram);
    let energies: Vec<f64> = eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let threshold = energies[0] * RANK_EPS;
    if energies[0] <= 0.0 {
        return Err(Error::Other("calibration snapshots are all zero".into()));
    }
    let numerical_rank = energies.iter().take_while(|&&e| e > threshold).count();
    let total: f64 = energies[..numerical_rank].iter().sum();
    let mut rank = numerical_rank;
    let mut cumulative = 0.0;
    for (i, &e) in energies[..numerical_rank].iter().enumerate() {
        cumulative += e;
        if cumulative >= energy_fraction * total {
            rank = i + 1;
            break;
        }
    }
    if let Some(cap) = max_rank {
        rank = rank.min(cap.max(1));
    }

    // Lift: u_i = A v_i / sigma_i, then modified Gram-Schmidt to pin down
    // orthonormality against conditioning loss in the Gram route.
    let mut basis = Array2::zeros((p, rank));
    for i in 0..rank {
        let sigma = energies[i].sqrt();
        for k in 0..p {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, col) in columns.iter().enumerate() {
                acc += col[k] * eigenvectors[(j, i)];
            }
            basis[(k, i)] = acc / sigma;
        }
    }
    for i in 0..rank {
        for j in 0..i {
            let mut dot = Complex64::new(0.0, 0.0);
            for k in 0..p {
                dot += basis[(k, j)].conj() * basis[(k, i)];
            }
            for k in 0..p {
                let correction = basis[(k, j)] * dot;
                basis[(k, i)] -= correction;
            }
        }
        let norm: f64 = basis.column(i).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for k in 0..p {
            basis[(k, i)] /= norm;
        }
    }

    Ok(ClutterBasis {
        vectors: basis,
        dims,
        energies,
        meta: ClutterMeta {
            source_day: None,
            sample_count: s,
            energy_fraction,
        },
    })
}

/// Project a padded CSI matrix onto the orthogonal complement of the
/// clutter subspace.
pub fn remove_clutter(csi: &CsiMatrix, basis: &ClutterBasis) -> Result<CsiMatrix> {
    let orig = match csi.stage {
        CsiStage::Padded { orig } | CsiStage::Cleaned { orig } => orig,
        CsiStage::Raw => {
            return Err(Error::Other(
                "remove_clutter expects a padded CSI matrix".into(),
            ))
        }
    };
    if csi.values.dim() != basis.dims {
        return Err(Error::DimMismatch {
            context: "csi vs clutter basis".into(),
            left: vec![csi.values.dim().0, csi.values.dim().1],
            right: vec![basis.dims.0, basis.dims.1],
        });
    }
    let p = basis.vectors.nrows();
    let r = basis.rank();
    let x = csi.values.as_slice().expect("row-major layout");

    let mut coefficients: Array1<Complex64> = Array1::zeros(r);
    for i in 0..r {
        let mut dot = Complex64::new(0.0, 0.0);
        for k in 0..p {
            dot += basis.vectors[(k, i)].conj() * x[k];
        }
        coefficients[i] = dot;
    }
    let mut cleaned = csi.values.clone();
    {
        let y = cleaned.as_slice_mut().expect("row-major layout");
        for i in 0..r {
            let c = coefficients[i];
            for k in 0..p {
                let correction = basis.vectors[(k, i)] * c;
                y[k] -= correction;
            }
        }
    }
    Ok(CsiMatrix {
        values: cleaned,
        stage: CsiStage::Cleaned { orig },
        source_frame_id: csi.source_frame_id,
        pair: csi.pair,
    })
}
