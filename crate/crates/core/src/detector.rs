//! Checksum-protected Newton-iteration MIMO detector.
//!
//! The pipeline lifts the complex channel into the real domain, builds the
//! regularized Gram system with a checksum row, runs a fixed number of
//! Newton inverse iterations in a form that refreshes a checksum column as
//! a side effect of the arithmetic itself, and finally solves for the
//! symbol estimate with a checksum element attached. Two check stages gate
//! the output: one right after preprocessing, one after the solve. All
//! matrix multiplies, adds and subtracts go through a [`MatrixBackend`];
//! encoding, reciprocals and verification stay on the trusted software
//! path.
//!
//! The iteration update is
//!
//! ```text
//! X <- X_data * (E - A * X)        E = 2 * [I | 1]
//! ```
//!
//! where `X` carries an appended column of row sums. Left-multiplication
//! maps row-sum-consistent operands to row-sum-consistent results, so the
//! update rebuilds a valid checksum column every iteration without any
//! dedicated checksum arithmetic. The final solve stacks the checksum
//! column under the data block as an extra row, which makes the last
//! element of the solution the checksum of the rest; this relies on the
//! Gram matrix being symmetric (row sums and column sums of the iterate
//! agree up to rounding).

use num_complex::Complex64;

use crate::abft::{self, ChecksumMatrix, TolerancePolicy, VerificationReport};
use crate::backend::MatrixBackend;
use crate::error::{Error, Result};
use crate::linalg::{
    lift_complex_matrix, lift_complex_vector, unlift_vector, ComplexMatrix, ComplexVector,
    RealMatrix, RealVector,
};

/// Detector parameters. `iters` is a fixed count; there is no early-exit
/// convergence test, which keeps operation counts deterministic.
#[derive(Debug, Clone)]
pub struct DetectorConfig {
    pub nt: usize,
    pub nr: usize,
    pub sigma2: f64,
    pub iters: usize,
    pub tolerance: TolerancePolicy,
    pub abft_enabled: bool,
}

impl DetectorConfig {
    pub fn new(nt: usize, nr: usize, sigma2: f64, iters: usize) -> Result<Self> {
        if nt < 1 || nr < nt {
            return Err(Error::InvalidConfig(format!(
                "need nr >= nt >= 1, got nt={nt}, nr={nr}"
            )));
        }
        if iters < 1 {
            return Err(Error::InvalidConfig("need at least one iteration".into()));
        }
        if !(sigma2 >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise variance must be nonnegative, got {sigma2}"
            )));
        }
        Ok(Self {
            nt,
            nr,
            sigma2,
            iters,
            tolerance: TolerancePolicy::for_summed_dim(2 * nt),
            abft_enabled: true,
        })
    }

    pub fn with_tolerance(mut self, tolerance: TolerancePolicy) -> Self {
        self.tolerance = tolerance;
        self
    }
}

/// Regularized Gram system with checksums attached: `a_aug` is
/// `(2Nt+1) x 2Nt` with a checksum row, `b_aug` has a checksum element.
#[derive(Debug, Clone)]
pub struct PreprocessedSystem {
    pub a_aug: RealMatrix,
    pub b_aug: RealVector,
}

/// Three-way outcome of a protected detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionStatus {
    Ok,
    ErrorPreprocessing,
    ErrorIterative,
}

/// Verification reports from both check stages, plus the raw solve output
/// (when the pipeline got that far) for fault classification. The public
/// estimate `x_hat` is withheld whenever a check fails.
#[derive(Debug, Clone)]
pub struct DetectionDiagnostics {
    pub a_report: VerificationReport,
    pub b_report: VerificationReport,
    pub x_report: Option<VerificationReport>,
    pub raw_solution: Option<RealVector>,
}

#[derive(Debug, Clone)]
pub struct DetectionOutcome {
    pub status: DetectionStatus,
    pub x_hat: Option<ComplexVector>,
    pub diagnostics: DetectionDiagnostics,
}

/// State carried across Newton iterations.
#[derive(Debug, Clone)]
pub struct IterState {
    /// Truncated system matrix `A`, `2Nt x 2Nt`.
    pub a_trunc: RealMatrix,
    /// Current inverse estimate with checksum column, `2Nt x (2Nt+1)`.
    pub a_inv_p: RealMatrix,
    /// Constant `2 * [I | 1]`, `2Nt x (2Nt+1)`.
    pub e: RealMatrix,
}

/// Lift, encode and form the checksum-carrying normal equations:
/// `A_aug = Hr_abft * Hr + sigma2 * [I; 1']` and `b_aug = Hr_abft * yr`.
///
/// The regularizer adds `sigma2` to each data diagonal and `sigma2` per
/// column of the checksum row, so a fault-free `A_aug` stays consistent.
pub fn preprocess(
    h: &ComplexMatrix,
    y: &[Complex64],
    cfg: &DetectorConfig,
    backend: &mut dyn MatrixBackend,
) -> Result<PreprocessedSystem> {
    if h.rows() != cfg.nr || h.cols() != cfg.nt {
        return Err(Error::DimensionMismatch {
            op: "preprocess",
            lhs_rows: h.rows(),
            lhs_cols: h.cols(),
            rhs_rows: cfg.nr,
            rhs_cols: cfg.nt,
        });
    }
    if y.len() != cfg.nr {
        return Err(Error::LengthMismatch {
            what: "received vector",
            expected: cfg.nr,
            got: y.len(),
        });
    }
    let n = 2 * cfg.nt;
    let hr = lift_complex_matrix(h);
    let yr = lift_complex_vector(y);
    // Checksum encoding happens on the trusted side; the encoded operand
    // then rides through the backend as ordinary data.
    let hr_abft = abft::encode_row_checksum(&hr.transpose()).augmented();

    let product = backend.matmul(&hr_abft, &hr)?;
    let regularizer = RealMatrix::from_fn(n + 1, n, |r, c| {
        if r == c || r == n {
            cfg.sigma2
        } else {
            0.0
        }
    });
    let a_aug = backend.add(&product, &regularizer)?;
    let b_aug = backend
        .matmul(&hr_abft, &RealMatrix::from_column(&yr))?
        .into_column()?;
    Ok(PreprocessedSystem { a_aug, b_aug })
}

/// First check stage: verify the Gram checksum row and the matched-filter
/// checksum element.
pub fn check_preprocessing(
    sys: &PreprocessedSystem,
    tolerance: &TolerancePolicy,
) -> Result<(VerificationReport, VerificationReport, bool)> {
    let a_check = ChecksumMatrix::split_last_row(&sys.a_aug)?;
    let a_report = abft::verify(&a_check, tolerance);
    let b_report = abft::verify_vector(&sys.b_aug, tolerance);
    let ok = a_report.ok && b_report.ok;
    Ok((a_report, b_report, ok))
}

/// Initialize the Newton iteration from the reciprocal diagonal:
/// `X0 = [diag(1/a_ii) | 1/a_ii]`, which is exactly row-sum consistent.
pub fn newton_init(sys: &PreprocessedSystem, cfg: &DetectorConfig) -> Result<IterState> {
    let n = 2 * cfg.nt;
    let a_trunc = sys.a_aug.submatrix(n, n);
    let mut recip = Vec::with_capacity(n);
    for i in 0..n {
        let d = a_trunc.get(i, i);
        if d == 0.0 {
            return Err(Error::SingularInit { index: i });
        }
        recip.push(1.0 / d);
    }
    let a_inv_p = RealMatrix::from_fn(n, n + 1, |r, c| {
        if c == r || c == n {
            recip[r]
        } else {
            0.0
        }
    });
    let e = RealMatrix::from_fn(n, n + 1, |r, c| {
        if c == r || c == n {
            2.0
        } else {
            0.0
        }
    });
    Ok(IterState {
        a_trunc,
        a_inv_p,
        e,
    })
}

/// One Newton step: `X <- X_data * (E - A * X)`.
///
/// Only the data columns of the previous estimate feed the left factor;
/// the right factor keeps its checksum column, so the product carries a
/// freshly consistent checksum column.
pub fn newton_step(state: &IterState, backend: &mut dyn MatrixBackend) -> Result<IterState> {
    let n = state.a_trunc.rows();
    let ax = backend.matmul(&state.a_trunc, &state.a_inv_p)?;
    let residual = backend.sub(&state.e, &ax)?;
    let x_data = state.a_inv_p.submatrix(n, n);
    let a_inv_p = backend.matmul(&x_data, &residual)?;
    Ok(IterState {
        a_trunc: state.a_trunc.clone(),
        a_inv_p,
        e: state.e.clone(),
    })
}

/// Final solve and second check stage.
///
/// Stacks the checksum column under the data block, multiplies by the data
/// part of `b`, and verifies that the last element of the result checksums
/// the rest.
pub fn solve_and_check(
    state: &IterState,
    sys: &PreprocessedSystem,
    tolerance: &TolerancePolicy,
    backend: &mut dyn MatrixBackend,
) -> Result<(RealVector, VerificationReport)> {
    let n = state.a_trunc.rows();
    let stacked = RealMatrix::from_fn(n + 1, n, |r, c| {
        if r < n {
            state.a_inv_p.get(r, c)
        } else {
            state.a_inv_p.get(c, n)
        }
    });
    let b_data = RealMatrix::from_column(&sys.b_aug[..n]);
    let x = backend.matmul(&stacked, &b_data)?.into_column()?;
    let report = abft::verify_vector(&x, tolerance);
    Ok((x, report))
}

/// Full protected detection: preprocess, check, iterate, solve, check,
/// unlift. On a failed check the outcome carries the error status and no
/// symbol estimate.
pub fn detect(
    h: &ComplexMatrix,
    y: &[Complex64],
    cfg: &DetectorConfig,
    backend: &mut dyn MatrixBackend,
) -> Result<DetectionOutcome> {
    let sys = preprocess(h, y, cfg, backend)?;
    let (a_report, b_report, pre_ok) = check_preprocessing(&sys, &cfg.tolerance)?;
    if !pre_ok {
        return Ok(DetectionOutcome {
            status: DetectionStatus::ErrorPreprocessing,
            x_hat: None,
            diagnostics: DetectionDiagnostics {
                a_report,
                b_report,
                x_report: None,
                raw_solution: None,
            },
        });
    }
    let mut state = newton_init(&sys, cfg)?;
    for _ in 0..cfg.iters {
        state = newton_step(&state, backend)?;
    }
    let (x, x_report) = solve_and_check(&state, &sys, &cfg.tolerance, backend)?;
    let status = if x_report.ok {
        DetectionStatus::Ok
    } else {
        DetectionStatus::ErrorIterative
    };
    let x_hat = if x_report.ok {
        Some(unlift_vector(&x[..2 * cfg.nt])?)
    } else {
        None
    };
    Ok(DetectionOutcome {
        status,
        x_hat,
        diagnostics: DetectionDiagnostics {
            a_report,
            b_report,
            x_report: Some(x_report),
            raw_solution: Some(x),
        },
    })
}

/// Unprotected pipeline: same arithmetic with no checksum rows/columns and
/// no checks. The overhead-comparison reference.
pub fn detect_baseline(
    h: &ComplexMatrix,
    y: &[Complex64],
    cfg: &DetectorConfig,
    backend: &mut dyn MatrixBackend,
) -> Result<ComplexVector> {
    if h.rows() != cfg.nr || h.cols() != cfg.nt {
        return Err(Error::DimensionMismatch {
            op: "detect_baseline",
            lhs_rows: h.rows(),
            lhs_cols: h.cols(),
            rhs_rows: cfg.nr,
            rhs_cols: cfg.nt,
        });
    }
    let n = 2 * cfg.nt;
    let hr = lift_complex_matrix(h);
    let yr = lift_complex_vector(y);
    let hrt = hr.transpose();

    let product = backend.matmul(&hrt, &hr)?;
    let regularizer = RealMatrix::from_fn(n, n, |r, c| if r == c { cfg.sigma2 } else { 0.0 });
    let a = backend.add(&product, &regularizer)?;
    let b = backend
        .matmul(&hrt, &RealMatrix::from_column(&yr))?
        .into_column()?;

    let mut recip = Vec::with_capacity(n);
    for i in 0..n {
        let d = a.get(i, i);
        if d == 0.0 {
            return Err(Error::SingularInit { index: i });
        }
        recip.push(1.0 / d);
    }
    let mut x_inv = RealMatrix::from_fn(n, n, |r, c| if r == c { recip[r] } else { 0.0 });
    let e = RealMatrix::from_fn(n, n, |r, c| if r == c { 2.0 } else { 0.0 });
    for _ in 0..cfg.iters {
        let ax = backend.matmul(&a, &x_inv)?;
        let residual = backend.sub(&e, &ax)?;
        x_inv = backend.matmul(&x_inv, &residual)?;
    }
    let x = backend
        .matmul(&x_inv, &RealMatrix::from_column(&b))?
        .into_column()?;
    unlift_vector(&x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{CountingBackend, SingleFaultBackend, TrustedBackend};
    use crate::linalg::{exact_detect, solve_linear, trusted_matmul};
    use num_complex::Complex64;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn cplx(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_channel(nr: usize, nt: usize, rng: &mut ChaCha8Rng) -> ComplexMatrix {
        let scale = 0.5f64.sqrt();
        ComplexMatrix::from_fn(nr, nt, |_, _| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            cplx(re * scale, im * scale)
        })
    }

    fn random_received(nr: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
        (0..nr)
            .map(|_| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                cplx(re, im)
            })
            .collect()
    }

    #[test]
    fn preprocess_identity_channel_matches_hand_evaluation() {
        let h = ComplexMatrix::new(1, 1, vec![cplx(1.0, 0.0)]).unwrap();
        let y = vec![cplx(1.0, 0.0)];
        let cfg = DetectorConfig::new(1, 1, 0.0, 1).unwrap();
        let sys = preprocess(&h, &y, &cfg, &mut TrustedBackend).unwrap();
        assert_eq!(sys.a_aug.data(), &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(sys.b_aug, vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn regularizer_touches_diagonal_and_checksum_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = random_channel(4, 2, &mut rng);
        let y = random_received(4, &mut rng);
        let plain = {
            let cfg = DetectorConfig::new(2, 4, 0.0, 1).unwrap();
            preprocess(&h, &y, &cfg, &mut TrustedBackend).unwrap()
        };
        let sigma2 = 0.35;
        let reg = {
            let cfg = DetectorConfig::new(2, 4, sigma2, 1).unwrap();
            preprocess(&h, &y, &cfg, &mut TrustedBackend).unwrap()
        };
        let n = 4;
        for r in 0..=n {
            for c in 0..n {
                let expected = plain.a_aug.get(r, c)
                    + if r == c || r == n { sigma2 } else { 0.0 };
                assert!((reg.a_aug.get(r, c) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fault_free_preprocessing_passes_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = DetectorConfig::new(3, 12, 0.2, 2).unwrap();
        for _ in 0..20 {
            let h = random_channel(12, 3, &mut rng);
            let y = random_received(12, &mut rng);
            let sys = preprocess(&h, &y, &cfg, &mut TrustedBackend).unwrap();
            let (a_report, b_report, ok) = check_preprocessing(&sys, &cfg.tolerance).unwrap();
            assert!(ok, "a: {a_report:?}, b: {b_report:?}");
        }
    }

    #[test]
    fn preprocessing_check_catches_injected_faults() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cfg = DetectorConfig::new(2, 8, 0.1, 2).unwrap();
        let h = random_channel(8, 2, &mut rng);
        let y = random_received(8, &mut rng);
        let sys = preprocess(&h, &y, &cfg, &mut TrustedBackend).unwrap();

        // Fault in the data block.
        let mut corrupted = sys.clone();
        corrupted.a_aug.set(1, 1, corrupted.a_aug.get(1, 1) + 1.0);
        let (_, _, ok) = check_preprocessing(&corrupted, &cfg.tolerance).unwrap();
        assert!(!ok);

        // Fault in the checksum row itself: a false positive by
        // construction, still flagged.
        let mut chk_fault = sys.clone();
        chk_fault.a_aug.set(4, 0, chk_fault.a_aug.get(4, 0) + 1.0);
        let (a_report, _, ok) = check_preprocessing(&chk_fault, &cfg.tolerance).unwrap();
        assert!(!ok);
        assert_eq!(a_report.worst_index, 0);

        // Fault in the matched filter vector.
        let mut b_fault = sys.clone();
        b_fault.b_aug[0] += 1.0;
        let (_, b_report, ok) = check_preprocessing(&b_fault, &cfg.tolerance).unwrap();
        assert!(!ok);
        assert!(!b_report.ok);
    }

    #[test]
    fn newton_init_from_scaled_identity() {
        // A_trunc = 2I embedded in an augmented system.
        let a_aug = RealMatrix::new(3, 2, vec![2.0, 0.0, 0.0, 2.0, 2.0, 2.0]).unwrap();
        let sys = PreprocessedSystem {
            a_aug,
            b_aug: vec![1.0, 1.0, 2.0],
        };
        let cfg = DetectorConfig::new(1, 1, 0.0, 1).unwrap();
        let state = newton_init(&sys, &cfg).unwrap();
        assert_eq!(state.a_inv_p.data(), &[0.5, 0.0, 0.5, 0.0, 0.5, 0.5]);
        assert_eq!(state.e.data(), &[2.0, 0.0, 2.0, 0.0, 2.0, 2.0]);

        // The appended column of E is all twos, and the initial estimate is
        // exactly column-consistent.
        let report = abft::verify(
            &ChecksumMatrix::split_last_col(&state.a_inv_p).unwrap(),
            &TolerancePolicy::new(0.0, 0.0),
        );
        assert!(report.ok);
    }

    #[test]
    fn newton_init_rejects_zero_diagonal() {
        let a_aug = RealMatrix::new(3, 2, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let sys = PreprocessedSystem {
            a_aug,
            b_aug: vec![0.0, 0.0, 0.0],
        };
        let cfg = DetectorConfig::new(1, 1, 0.0, 1).unwrap();
        assert_eq!(
            newton_init(&sys, &cfg).unwrap_err(),
            Error::SingularInit { index: 1 }
        );
    }

    #[test]
    fn exact_inverse_is_a_fixed_point() {
        // A = I: starting from [I | 1] one step returns [I | 1].
        let n = 4;
        let a_aug = RealMatrix::from_fn(n + 1, n, |r, c| {
            if r == c || r == n {
                1.0
            } else {
                0.0
            }
        });
        let sys = PreprocessedSystem {
            a_aug,
            b_aug: vec![0.0; n + 1],
        };
        let cfg = DetectorConfig::new(2, 2, 0.0, 1).unwrap();
        let state = newton_init(&sys, &cfg).unwrap();
        let stepped = newton_step(&state, &mut TrustedBackend).unwrap();
        assert_eq!(stepped.a_inv_p, state.a_inv_p);
    }

    #[test]
    fn scaled_identity_converges_in_one_step() {
        let n = 2;
        let a_aug = RealMatrix::from_fn(n + 1, n, |r, c| {
            if r == c || r == n {
                2.0
            } else {
                0.0
            }
        });
        let sys = PreprocessedSystem {
            a_aug,
            b_aug: vec![0.0; n + 1],
        };
        let cfg = DetectorConfig::new(1, 1, 0.0, 1).unwrap();
        let state = newton_init(&sys, &cfg).unwrap();
        let stepped = newton_step(&state, &mut TrustedBackend).unwrap();
        for r in 0..n {
            for c in 0..n {
                let expected = if r == c { 0.5 } else { 0.0 };
                assert_eq!(stepped.a_inv_p.get(r, c), expected);
            }
        }
    }

    /// Build an augmented system around a given symmetric positive matrix.
    fn wrap_system(a: &RealMatrix) -> PreprocessedSystem {
        let aug = abft::encode_row_checksum(a).augmented();
        PreprocessedSystem {
            a_aug: aug,
            b_aug: vec![0.0; a.rows() + 1],
        }
    }

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> RealMatrix {
        // Diagonally dominant symmetric matrix: guaranteed Newton
        // convergence from the reciprocal-diagonal start.
        let mut m = RealMatrix::zeros(n, n);
        for r in 0..n {
            for c in 0..=r {
                let v: f64 = rng.sample::<f64, _>(StandardNormal) * 0.25;
                m.set(r, c, v);
                m.set(c, r, v);
            }
        }
        for i in 0..n {
            m.set(i, i, n as f64 + rng.gen::<f64>());
        }
        m
    }

    #[test]
    fn newton_converges_to_elimination_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let a = random_spd(4, &mut rng);
        let sys = wrap_system(&a);
        let cfg = DetectorConfig::new(2, 2, 0.0, 8).unwrap();
        let mut state = newton_init(&sys, &cfg).unwrap();
        for _ in 0..8 {
            state = newton_step(&state, &mut TrustedBackend).unwrap();
        }
        // Independent inverse: solve A x = e_i column by column.
        for col in 0..4 {
            let mut e = vec![0.0; 4];
            e[col] = 1.0;
            let x = solve_linear(&a, &e).unwrap();
            for row in 0..4 {
                assert!(
                    (state.a_inv_p.get(row, col) - x[row]).abs() <= 1e-8,
                    "inverse entry ({row},{col})"
                );
            }
        }
    }

    #[test]
    fn residual_squares_each_iteration_until_float_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let a = random_spd(6, &mut rng);
        let sys = wrap_system(&a);
        let cfg = DetectorConfig::new(3, 3, 0.0, 10).unwrap();
        let mut state = newton_init(&sys, &cfg).unwrap();
        let residual_norm = |state: &IterState| -> f64 {
            let x = state.a_inv_p.submatrix(6, 6);
            let ax = trusted_matmul(&a, &x).unwrap();
            let mut worst = 0.0f64;
            for r in 0..6 {
                for c in 0..6 {
                    let target = if r == c { 1.0 } else { 0.0 };
                    worst = worst.max((target - ax.get(r, c)).abs());
                }
            }
            worst
        };
        let mut prev = residual_norm(&state);
        for _ in 0..6 {
            state = newton_step(&state, &mut TrustedBackend).unwrap();
            let next = residual_norm(&state);
            if next < 1e-13 {
                break;
            }
            assert!(
                next <= 10.0 * prev * prev,
                "residual {next} not within 10x of squared {prev}"
            );
            prev = next;
        }
    }

    #[test]
    fn checksum_column_stays_consistent_across_iterations() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10 {
            let a = random_spd(8, &mut rng);
            let sys = wrap_system(&a);
            let cfg = DetectorConfig::new(4, 4, 0.0, 10).unwrap();
            let mut state = newton_init(&sys, &cfg).unwrap();
            for iter in 0..10 {
                state = newton_step(&state, &mut TrustedBackend).unwrap();
                let report = abft::verify(
                    &ChecksumMatrix::split_last_col(&state.a_inv_p).unwrap(),
                    &cfg.tolerance,
                );
                assert!(
                    report.ok,
                    "iteration {iter}: residual {}",
                    report.max_residual
                );
            }
        }
    }

    #[test]
    fn solve_produces_checksummed_vector() {
        // Exact-inverse state with A = I: x = [b; sum(b)].
        let n = 2;
        let a_aug = RealMatrix::from_fn(n + 1, n, |r, c| {
            if r == c || r == n {
                1.0
            } else {
                0.0
            }
        });
        let sys = PreprocessedSystem {
            a_aug,
            b_aug: vec![1.0, 2.0, 3.0],
        };
        let cfg = DetectorConfig::new(1, 1, 0.0, 1).unwrap();
        let state = newton_init(&sys, &cfg).unwrap();
        let (x, report) = solve_and_check(&state, &sys, &cfg.tolerance, &mut TrustedBackend).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
        assert!(report.ok);

        // Zero right-hand side: zero solution, check passes.
        let zero_sys = PreprocessedSystem {
            a_aug: sys.a_aug.clone(),
            b_aug: vec![0.0, 0.0, 0.0],
        };
        let (x0, report0) =
            solve_and_check(&state, &zero_sys, &cfg.tolerance, &mut TrustedBackend).unwrap();
        assert_eq!(x0, vec![0.0, 0.0, 0.0]);
        assert!(report0.ok);

        // Corrupting the inverse estimate before the solve fails the check.
        let mut corrupted = state.clone();
        corrupted.a_inv_p.set(0, 0, corrupted.a_inv_p.get(0, 0) + 1.0);
        let (_, bad) =
            solve_and_check(&corrupted, &sys, &cfg.tolerance, &mut TrustedBackend).unwrap();
        assert!(!bad.ok);
    }

    #[test]
    fn detect_matches_exact_oracle_on_well_conditioned_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let (nt, nr) = (8, 64);
        let sigma2 = nt as f64 / 10.0;
        let cfg = DetectorConfig::new(nt, nr, sigma2, 3).unwrap();
        let h = random_channel(nr, nt, &mut rng);
        let y = random_received(nr, &mut rng);
        let outcome = detect(&h, &y, &cfg, &mut TrustedBackend).unwrap();
        assert_eq!(outcome.status, DetectionStatus::Ok);
        let x_hat = outcome.x_hat.unwrap();
        let reference = exact_detect(&h, &y, sigma2).unwrap();
        for (a, b) in x_hat.iter().zip(&reference) {
            assert!((a - b).norm() <= 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn injected_faults_set_the_matching_status() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let cfg = DetectorConfig::new(2, 8, 0.2, 3).unwrap();
        let h = random_channel(8, 2, &mut rng);
        let y = random_received(8, &mut rng);

        // Op 0 is the Gram multiply: preprocessing stage.
        let mut pre_fault = SingleFaultBackend::new(TrustedBackend, 0, 0, 0, 50.0);
        let outcome = detect(&h, &y, &cfg, &mut pre_fault).unwrap();
        assert_eq!(outcome.status, DetectionStatus::ErrorPreprocessing);
        assert!(outcome.x_hat.is_none());

        // Op 3 is the first iteration multiply: iterative stage.
        let mut iter_fault = SingleFaultBackend::new(TrustedBackend, 3, 1, 1, 50.0);
        let outcome = detect(&h, &y, &cfg, &mut iter_fault).unwrap();
        assert_eq!(outcome.status, DetectionStatus::ErrorIterative);
        assert!(outcome.x_hat.is_none());
        assert!(outcome.diagnostics.raw_solution.is_some());
    }

    #[test]
    fn baseline_output_is_bit_identical_to_protected_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for &(nt, nr) in &[(2usize, 8usize), (3, 15), (4, 32)] {
            let cfg = DetectorConfig::new(nt, nr, 0.15, 3).unwrap();
            let h = random_channel(nr, nt, &mut rng);
            let y = random_received(nr, &mut rng);
            let protected = detect(&h, &y, &cfg, &mut TrustedBackend)
                .unwrap()
                .x_hat
                .unwrap();
            let baseline = detect_baseline(&h, &y, &cfg, &mut TrustedBackend).unwrap();
            for (a, b) in protected.iter().zip(&baseline) {
                assert_eq!(a.re.to_bits(), b.re.to_bits());
                assert_eq!(a.im.to_bits(), b.im.to_bits());
            }
        }
    }

    #[test]
    fn baseline_counts_fewer_flops_than_protected() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let (nt, nr, iters) = (8, 64, 3);
        let cfg = DetectorConfig::new(nt, nr, 0.8, iters).unwrap();
        let h = random_channel(nr, nt, &mut rng);
        let y = random_received(nr, &mut rng);

        let mut protected = CountingBackend::new(TrustedBackend);
        detect(&h, &y, &cfg, &mut protected).unwrap();
        let mut baseline = CountingBackend::new(TrustedBackend);
        detect_baseline(&h, &y, &cfg, &mut baseline).unwrap();

        let delta = protected.total_flops() - baseline.total_flops();
        assert!(baseline.total_flops() < protected.total_flops());

        // Closed-form enumeration of the extra work done by the augmented
        // shapes, frozen from the op-by-op shape difference.
        let (n, r2, k) = (2 * nt as u64, 2 * nr as u64, iters as u64);
        let expected = 2 * r2 * n // gram: one extra output row
            + n                   // regularizer add: extra row
            + 2 * r2              // matched filter: extra row
            + k * (2 * n * n + n + 2 * n * n) // per iteration
            + 2 * n; // solve: extra output row
        assert_eq!(delta, expected);

        // The counted delta tracks the closed-form overhead model within a
        // modest band (the model also prices checksum generation and
        // validation, which run outside the backend).
        let model = crate::costmodel::flops_overhead(nt, nr, iters, 1.0);
        let ratio = delta as f64 / model as f64;
        assert!((0.9..1.1).contains(&ratio), "delta {delta} vs model {model}");
    }

    #[test]
    fn one_iteration_baseline_reproduces_scaled_identity_step() {
        // detect_baseline on a channel whose Gram matrix is 2I: the single
        // Newton step lands exactly on the inverse, so x = b / 2.
        let h = ComplexMatrix::new(2, 1, vec![cplx(1.0, 0.0), cplx(1.0, 0.0)]).unwrap();
        let y = vec![cplx(3.0, 1.0), cplx(1.0, -1.0)];
        let cfg = DetectorConfig::new(1, 2, 0.0, 1).unwrap();
        let x = detect_baseline(&h, &y, &cfg, &mut TrustedBackend).unwrap();
        // b = Hr' yr = [4, 0]; A = 2I; x = [2, 0].
        assert_eq!(x, vec![cplx(2.0, 0.0)]);
    }

    #[test]
    fn small_injections_below_tolerance_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let cfg = DetectorConfig::new(2, 8, 0.2, 2).unwrap();
        let h = random_channel(8, 2, &mut rng);
        let y = random_received(8, &mut rng);
        // Scale of the Gram block is ~nr; a fault far below the tolerance
        // threshold is indistinguishable from rounding.
        let sys = preprocess(&h, &y, &cfg, &mut TrustedBackend).unwrap();
        let threshold = cfg.tolerance.threshold(sys.a_aug.max_abs());
        let mut tiny_fault = SingleFaultBackend::new(TrustedBackend, 0, 0, 0, threshold / 10.0);
        let outcome = detect(&h, &y, &cfg, &mut tiny_fault).unwrap();
        assert_eq!(outcome.status, DetectionStatus::Ok);
    }
}
