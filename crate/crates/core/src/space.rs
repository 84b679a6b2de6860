//! The speaker variability space: an orthonormal eigenbasis of the
//! embedding covariance together with its spectrum.

use std::path::Path;

use crate::embeddings::EmbeddingSet;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// Fitted variability space.
///
/// Column `j` of [`basis`](Self::basis) is the eigenvector paired with
/// `eigenvalues[j]`; eigenvalues are non-negative and sorted descending.
#[derive(Debug, Clone, PartialEq)]
pub struct VariabilitySpace {
    mean: Vec<f64>,
    basis: Matrix,
    eigenvalues: Vec<f64>,
}

impl VariabilitySpace {
    /// Assembles a space from its parts, checking shapes, ordering and that
    /// the basis is orthonormal within `1e-8`.
    pub fn from_parts(mean: Vec<f64>, basis: Matrix, eigenvalues: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::Shape("zero-dimensional space".into()));
        }
        if basis.rows() != d || basis.cols() != d || eigenvalues.len() != d {
            return Err(Error::Shape(format!(
                "mean has {d} entries, basis is {}x{}, {} eigenvalues",
                basis.rows(),
                basis.cols(),
                eigenvalues.len()
            )));
        }
        if mean.iter().chain(&eigenvalues).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("space parameters".into()));
        }
        if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Invalid("eigenvalues must be sorted descending".into()));
        }
        if eigenvalues.iter().any(|&l| l < 0.0) {
            return Err(Error::Invalid("eigenvalues must be non-negative".into()));
        }
        let gram = basis.transpose().matmul(&basis)?;
        let dev = gram
            .as_slice()
            .iter()
            .enumerate()
            .map(|(k, &g)| (g - if k / d == k % d { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max);
        if dev > 1e-8 {
            return Err(Error::Invalid(format!(
                "basis is not orthonormal (max |VᵀV - I| = {dev:e})"
            )));
        }
        Ok(VariabilitySpace {
            mean,
            basis,
            eigenvalues,
        })
    }

    /// Fits the space of a set of embeddings.
    pub fn fit(embeddings: &EmbeddingSet) -> Result<Self> {
        Self::fit_vectors(&embeddings.vectors())
    }

    /// Fits the space of raw vectors: covariance, then a symmetric
    /// eigendecomposition.
    pub fn fit_vectors<V: AsRef<[f64]>>(vectors: &[V]) -> Result<Self> {
        let (mean, cov) = linalg::mean_and_covariance(vectors)?;
        let d = mean.len();
        if vectors.len() < d {
            log::warn!(
                "fitting a {d}-dimensional space on only {} embeddings; trailing eigenvalues will be zero",
                vectors.len()
            );
        }
        let eig = linalg::eig_sym(&cov)?;
        let eigenvalues = eig.values.into_iter().map(|l| l.max(0.0)).collect();
        Ok(VariabilitySpace {
            mean,
            basis: eig.vectors,
            eigenvalues,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Coefficients `c = Vᵀx` of a raw embedding.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.basis.tr_mul_vec(x)
    }

    /// Coefficients of `x - μ`.
    pub fn project_centered(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        self.basis.tr_mul_vec(&centered)
    }

    /// `x = V c`
    pub fn reconstruct(&self, c: &[f64]) -> Result<Vec<f64>> {
        self.basis.mul_vec(c)
    }

    /// `x = V c + μ`, the inverse of [`project_centered`](Self::project_centered).
    pub fn reconstruct_centered(&self, c: &[f64]) -> Result<Vec<f64>> {
        let mut x = self.basis.mul_vec(c)?;
        x.iter_mut().zip(&self.mean).for_each(|(a, m)| *a += m);
        Ok(x)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Eigenvalue floor applied before taking logarithms.
    pub fn log_floor(&self) -> f64 {
        let top = self.eigenvalues[0];
        if top > 0.0 {
            1e-12 * top
        } else {
            1e-300
        }
    }

    /// Natural log of each eigenvalue, floored at [`log_floor`](Self::log_floor).
    pub fn log_spectrum(&self) -> Vec<f64> {
        let floor = self.log_floor();
        self.eigenvalues.iter().map(|&l| l.max(floor).ln()).collect()
    }

    /// Successive differences of the log spectrum,
    /// `a_i = log λ_{i+1} - log λ_i` for `i = 1..D-1`.
    pub fn delta_spectrum(&self) -> Result<DeltaSpectrum> {
        if self.dim() < 2 {
            return Err(Error::Invalid("delta spectrum needs at least 2 dimensions".into()));
        }
        let logs = self.log_spectrum();
        Ok(DeltaSpectrum {
            values: logs.windows(2).map(|w| w[1] - w[0]).collect(),
            floor_epsilon: self.log_floor(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.dim();
        let mut out = Vec::with_capacity(12 + 8 * d * (d + 2));
        out.extend_from_slice(SPACE_MAGIC);
        out.extend_from_slice(&SPACE_VERSION.to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        for v in self
            .mean
            .iter()
            .chain(&self.eigenvalues)
            .chain(self.basis.as_slice())
        {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::Format("space file truncated before header end".into()));
        }
        if &bytes[..4] != SPACE_MAGIC {
            return Err(Error::Format("bad magic, expected VSP1".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != SPACE_VERSION {
            return Err(Error::Format(format!("unsupported space version {version}")));
        }
        let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if d == 0 {
            return Err(Error::Format("space dimension is zero".into()));
        }
        let expected = d
            .checked_mul(d)
            .and_then(|dd| dd.checked_add(2 * d))
            .and_then(|n| n.checked_mul(8))
            .and_then(|n| n.checked_add(12))
            .ok_or_else(|| Error::Format(format!("dimension {d} overflows")))?;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "header declares D={d} ({expected} bytes) but file has {} bytes",
                bytes.len()
            )));
        }
        let values: Vec<f64> = bytes[12..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("space file contains non-finite values".into()));
        }
        let mean = values[..d].to_vec();
        let eigenvalues = values[d..2 * d].to_vec();
        let basis = Matrix::from_row_major(d, d, values[2 * d..].to_vec())?;
        Ok(VariabilitySpace {
            mean,
            basis,
            eigenvalues,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }

    /// Spectrum table `index,log_eigenvalue,delta` with 1-based indices; the
    /// last row has an empty delta.
    pub fn spectrum_csv(&self) -> Result<String> {
        let logs = self.log_spectrum();
        let deltas = self.delta_spectrum()?;
        let mut out = String::from("index,log_eigenvalue,delta\n");
        for (k, l) in logs.iter().enumerate() {
            match deltas.values.get(k) {
                Some(a) => out.push_str(&format!("{},{l},{a}\n", k + 1)),
                None => out.push_str(&format!("{},{l},\n", k + 1)),
            }
        }
        Ok(out)
    }
}

const SPACE_MAGIC: &[u8; 4] = b"VSP1";
const SPACE_VERSION: u32 = 1;

/// Differences of consecutive log-eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSpectrum {
    pub values: Vec<f64>,
    pub floor_epsilon: f64,
}

impl DeltaSpectrum {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("delta spectrum".into()));
        }
        Ok(DeltaSpectrum {
            values,
            floor_epsilon: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TurningConfig {
    /// Number of deltas preceding the turning point that must oscillate.
    pub window: usize,
    /// Maximum deviation of each windowed delta from the window mean.
    pub oscillation_tol: f64,
}

impl Default for TurningConfig {
    fn default() -> Self {
        TurningConfig {
            window: 10,
            oscillation_tol: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TurningStrength {
    /// Oscillating window followed by a monotone tail.
    Strong,
    /// No index met the window criterion; the start of the monotone tail is
    /// reported instead.
    Weak,
}

impl std::fmt::Display for TurningStrength {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TurningStrength::Strong => "strong",
            TurningStrength::Weak => "weak",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurningPoint {
    /// 1-based dimension.
    pub dimension: usize,
    pub strength: TurningStrength,
    /// 1-based start of the longest suffix with non-decreasing `|a_j|`.
    pub monotone_start: usize,
    /// Candidates inside the monotone tail that were rejected, with the
    /// reason.
    pub rejected: Vec<(usize, &'static str)>,
}

/// Locates the turning dimension of a delta spectrum.
///
/// A 1-based index `t` qualifies when
///
/// * `|a_j|` is non-decreasing for all `j >= t`,
/// * the up to `window` deltas before `t` each lie within `oscillation_tol`
///   of their mean, and
/// * `a_t` itself lies outside that band (the growth has started).
///
/// The smallest qualifying `t` is returned as a strong candidate. Failing
/// that, the start of the monotone tail is returned as a weak one. Either
/// way the result is a candidate to be confirmed by a human.
pub fn detect_turning(deltas: &DeltaSpectrum, config: TurningConfig) -> Result<TurningPoint> {
    let a = &deltas.values;
    let n = a.len();
    if n < config.window + 2 {
        return Err(Error::Invalid(format!(
            "delta spectrum of length {n} is too short for window {} (need at least {})",
            config.window,
            config.window + 2
        )));
    }

    // Start of the longest non-decreasing-magnitude suffix (0-based).
    let mut tail = n - 1;
    while tail > 0 && a[tail - 1].abs() <= a[tail].abs() {
        tail -= 1;
    }

    let mut rejected = Vec::new();
    for t in tail..n {
        let window = &a[t.saturating_sub(config.window)..t];
        if window.is_empty() {
            return Ok(TurningPoint {
                dimension: t + 1,
                strength: TurningStrength::Strong,
                monotone_start: tail + 1,
                rejected,
            });
        }
        let mean = window.iter().sum::<f64>() / window.len() as f64;
        if window.iter().any(|v| (v - mean).abs() > config.oscillation_tol) {
            rejected.push((t + 1, "window does not oscillate within tolerance"));
        } else if (a[t] - mean).abs() <= config.oscillation_tol {
            rejected.push((t + 1, "delta still inside the oscillation band"));
        } else {
            return Ok(TurningPoint {
                dimension: t + 1,
                strength: TurningStrength::Strong,
                monotone_start: tail + 1,
                rejected,
            });
        }
    }
    Ok(TurningPoint {
        dimension: tail + 1,
        strength: TurningStrength::Weak,
        monotone_start: tail + 1,
        rejected,
    })
}
