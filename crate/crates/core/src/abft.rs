//! Checksum encoding and verification for matrices and vectors.
//!
//! A matrix is protected by appending a row of column sums (or a column of
//! row sums). Because plain sums are linear, matrix products of consistent
//! operands stay consistent, so a single corrupted output element shows up
//! as a residual between the recomputed sums and the carried checksum. The
//! scheme detects errors; it does not locate or correct them.

use crate::error::Result;
use crate::linalg::RealMatrix;

/// Where the checksum lives relative to the data block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// Checksum is an appended row holding column sums.
    RowAppended,
    /// Checksum is an appended column holding row sums.
    ColAppended,
}

/// A data block together with its checksum row or column.
#[derive(Debug, Clone, PartialEq)]
pub struct ChecksumMatrix {
    data: RealMatrix,
    checksum: Vec<f64>,
    orientation: Orientation,
}

/// Acceptance rule for checksum residuals:
/// `residual <= epsilon_abs + epsilon_rel * scale` where `scale` is the
/// max-abs magnitude of the checked block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TolerancePolicy {
    pub epsilon_abs: f64,
    pub epsilon_rel: f64,
}

impl TolerancePolicy {
    pub fn new(epsilon_abs: f64, epsilon_rel: f64) -> Self {
        assert!(epsilon_abs >= 0.0 && epsilon_abs.is_finite());
        assert!(epsilon_rel >= 0.0 && epsilon_rel.is_finite());
        Self {
            epsilon_abs,
            epsilon_rel,
        }
    }

    /// Default policy for checks whose sums run over `n` terms: purely
    /// relative, proportional to the rounding accumulated by the summation.
    pub fn for_summed_dim(n: usize) -> Self {
        Self {
            epsilon_abs: 0.0,
            epsilon_rel: 1e-6 * (n as f64).sqrt(),
        }
    }

    pub fn threshold(&self, scale: f64) -> f64 {
        self.epsilon_abs + self.epsilon_rel * scale
    }
}

/// Outcome of a checksum verification. A failed check is a report, never an
/// error: the caller decides what to do with it.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub ok: bool,
    pub max_residual: f64,
    /// Column index (row-appended), row index (column-appended), or element
    /// index (vector) of the largest residual.
    pub worst_index: usize,
    /// Number of positions whose residual exceeds the policy threshold.
    pub violations: usize,
}

impl VerificationReport {
    fn from_lanes(residuals: &[f64], thresholds: &[f64]) -> Self {
        let mut max_residual = 0.0;
        let mut worst_index = 0;
        let mut violations = 0;
        for (i, (&r, &t)) in residuals.iter().zip(thresholds).enumerate() {
            // NaN residuals come from injected faults; treat them as maximal.
            if !(r <= max_residual) {
                max_residual = r;
                worst_index = i;
            }
            // A non-finite residual is always a violation: an infinity in
            // the checked block would otherwise inflate the magnitude scale
            // (and with it the threshold) to infinity and mask itself.
            if !(r <= t) || !r.is_finite() {
                violations += 1;
            }
        }
        VerificationReport {
            ok: violations == 0,
            max_residual,
            worst_index,
            violations,
        }
    }
}

/// Append a checksum row of column sums.
pub fn encode_row_checksum(m: &RealMatrix) -> ChecksumMatrix {
    let checksum = (0..m.cols())
        .map(|c| (0..m.rows()).map(|r| m.get(r, c)).sum())
        .collect();
    ChecksumMatrix {
        data: m.clone(),
        checksum,
        orientation: Orientation::RowAppended,
    }
}

/// Append a checksum column of row sums.
pub fn encode_col_checksum(m: &RealMatrix) -> ChecksumMatrix {
    let checksum = (0..m.rows()).map(|r| m.row(r).iter().sum()).collect();
    ChecksumMatrix {
        data: m.clone(),
        checksum,
        orientation: Orientation::ColAppended,
    }
}

impl ChecksumMatrix {
    pub fn data(&self) -> &RealMatrix {
        &self.data
    }

    pub fn checksum(&self) -> &[f64] {
        &self.checksum
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    /// The augmented matrix with the checksum row/column in place, ready to
    /// be fed through a matrix backend as ordinary data.
    pub fn augmented(&self) -> RealMatrix {
        let (m, n) = (self.data.rows(), self.data.cols());
        match self.orientation {
            Orientation::RowAppended => RealMatrix::from_fn(m + 1, n, |r, c| {
                if r < m {
                    self.data.get(r, c)
                } else {
                    self.checksum[c]
                }
            }),
            Orientation::ColAppended => RealMatrix::from_fn(m, n + 1, |r, c| {
                if c < n {
                    self.data.get(r, c)
                } else {
                    self.checksum[r]
                }
            }),
        }
    }

    /// Reinterpret an augmented matrix whose last row is a checksum.
    pub fn split_last_row(aug: &RealMatrix) -> Result<Self> {
        let m = aug.rows() - 1;
        let data = aug.submatrix(m, aug.cols());
        let checksum = aug.row(m).to_vec();
        Ok(ChecksumMatrix {
            data,
            checksum,
            orientation: Orientation::RowAppended,
        })
    }

    /// Reinterpret an augmented matrix whose last column is a checksum.
    pub fn split_last_col(aug: &RealMatrix) -> Result<Self> {
        let n = aug.cols() - 1;
        let data = aug.submatrix(aug.rows(), n);
        let checksum = (0..aug.rows()).map(|r| aug.get(r, n)).collect();
        Ok(ChecksumMatrix {
            data,
            checksum,
            orientation: Orientation::ColAppended,
        })
    }
}

/// Recompute the sums over the data block and compare against the stored
/// checksum. Read-only; residuals are reported per column (row-appended)
/// or per row (column-appended).
///
/// Each lane is judged at its own magnitude scale (max-abs over the lane
/// and its checksum entry). A single corrupted entry of huge magnitude
/// then inflates only its own lane's threshold, where its equally huge
/// residual still trips it, instead of masking every other lane.
pub fn verify(c: &ChecksumMatrix, policy: &TolerancePolicy) -> VerificationReport {
    let lanes = match c.orientation {
        Orientation::RowAppended => c.data.cols(),
        Orientation::ColAppended => c.data.rows(),
    };
    let mut residuals = Vec::with_capacity(lanes);
    let mut thresholds = Vec::with_capacity(lanes);
    for lane in 0..lanes {
        let entries: Vec<f64> = match c.orientation {
            Orientation::RowAppended => (0..c.data.rows()).map(|r| c.data.get(r, lane)).collect(),
            Orientation::ColAppended => c.data.row(lane).to_vec(),
        };
        let sum: f64 = entries.iter().sum();
        let scale = entries
            .iter()
            .fold(c.checksum[lane].abs(), |m, v| m.max(v.abs()));
        residuals.push((c.checksum[lane] - sum).abs());
        thresholds.push(policy.threshold(scale));
    }
    VerificationReport::from_lanes(&residuals, &thresholds)
}

/// Verify a vector whose last entry is the checksum of the rest.
pub fn verify_vector(x: &[f64], policy: &TolerancePolicy) -> VerificationReport {
    assert!(x.len() >= 2, "checksummed vector needs at least two entries");
    let (data, chk) = x.split_at(x.len() - 1);
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let sum: f64 = data.iter().sum();
    let residual = (chk[0] - sum).abs();
    VerificationReport::from_lanes(&[residual], &[policy.threshold(scale)])
}
