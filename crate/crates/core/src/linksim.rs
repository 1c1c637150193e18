//! Monte-Carlo uplink simulator.
//!
//! Per trial: draw a Rayleigh channel and random bits, modulate, add white
//! Gaussian noise at the target SNR, detect through the chosen backend and
//! demodulate with hard decisions. A trusted run of the same pipeline
//! provides the reference for rerun recovery and fault classification; the
//! exact direct-solve detector is also evaluated for comparison curves.
//!
//! On a checksum detection the trial's computation is re-run once on the
//! trusted path (which is guaranteed correct), and the rerun is counted.
//! An unprotected baseline run on separately seeded faulty hardware
//! provides the uncorrected error rate.
//!
//! SNR convention: unit-average-energy symbols and per-receive-antenna
//! total-signal SNR, so `sigma2 = Nt / 10^(snr_db / 10)`.

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::accel::{AccelEmulator, TileSpec};
use crate::backend::TrustedBackend;
use crate::detector::{detect, detect_baseline, DetectionStatus, DetectorConfig};
use crate::error::{Error, Result};
use crate::faults::{error_rate, BitDistribution, FaultModel, VoltageProfile};
use crate::linalg::{exact_detect, unlift_vector, ComplexMatrix, ComplexVector};

/// Supported constellations, Gray-labeled, unit average energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstellationKind {
    Qpsk,
    Qam16,
    Qam64,
}

impl ConstellationKind {
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "qpsk" => Some(Self::Qpsk),
            "qam16" | "16qam" => Some(Self::Qam16),
            "qam64" | "64qam" => Some(Self::Qam64),
            _ => None,
        }
    }
}

/// Constellation points indexed by bit label.
#[derive(Debug, Clone)]
pub struct Constellation {
    kind: ConstellationKind,
    points: Vec<Complex64>,
    bits_per_axis: u32,
}

impl Constellation {
    pub fn new(kind: ConstellationKind) -> Self {
        let bits_per_axis = match kind {
            ConstellationKind::Qpsk => 1,
            ConstellationKind::Qam16 => 2,
            ConstellationKind::Qam64 => 3,
        };
        let levels = 1usize << bits_per_axis;
        // Gray-coded PAM levels: label g sits at position p with g = p ^ (p >> 1),
        // level = 2p - (levels - 1), normalized to unit average symbol energy.
        let mut position = vec![0usize; levels];
        for p in 0..levels {
            position[p ^ (p >> 1)] = p;
        }
        let mean_square: f64 = (0..levels)
            .map(|p| {
                let l = (2 * p) as f64 - (levels - 1) as f64;
                l * l
            })
            .sum::<f64>()
            / levels as f64;
        let scale = 1.0 / (2.0 * mean_square).sqrt();
        let level = |label: usize| -> f64 {
            ((2 * position[label]) as f64 - (levels - 1) as f64) * scale
        };
        let points = (0..levels * levels)
            .map(|label| {
                let i_label = label >> bits_per_axis;
                let q_label = label & (levels - 1);
                Complex64::new(level(i_label), level(q_label))
            })
            .collect();
        Self {
            kind,
            points,
            bits_per_axis,
        }
    }

    pub fn kind(&self) -> ConstellationKind {
        self.kind
    }

    pub fn bits_per_symbol(&self) -> usize {
        2 * self.bits_per_axis as usize
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    /// Map bits (MSB-first within each symbol) to symbols.
    pub fn modulate(&self, bits: &[u8]) -> Result<ComplexVector> {
        let bps = self.bits_per_symbol();
        if bits.len() % bps != 0 {
            return Err(Error::LengthMismatch {
                what: "bit stream",
                expected: bits.len().div_ceil(bps) * bps,
                got: bits.len(),
            });
        }
        Ok(bits
            .chunks(bps)
            .map(|chunk| {
                let label = chunk.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize);
                self.points[label]
            })
            .collect())
    }

    /// Nearest-point hard decision. Ties break toward the smaller label.
    pub fn demodulate(&self, symbols: &[Complex64]) -> Vec<u8> {
        let bps = self.bits_per_symbol();
        let mut bits = Vec::with_capacity(symbols.len() * bps);
        for &z in symbols {
            let mut best_label = 0usize;
            let mut best_dist = f64::INFINITY;
            for (label, &p) in self.points.iter().enumerate() {
                let d = (z - p).norm_sqr();
                if d < best_dist {
                    best_dist = d;
                    best_label = label;
                }
            }
            for k in (0..bps).rev() {
                bits.push(((best_label >> k) & 1) as u8);
            }
        }
        bits
    }
}

/// Independent Rayleigh channel: i.i.d. circularly-symmetric complex
/// Gaussian entries with unit variance.
pub fn gen_channel(nr: usize, nt: usize, rng: &mut impl Rng) -> ComplexMatrix {
    let scale = 0.5f64.sqrt();
    ComplexMatrix::from_fn(nr, nt, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re * scale, im * scale)
    })
}

/// Noise variance for the SNR convention above.
pub fn noise_variance(snr_db: f64, nt: usize) -> f64 {
    nt as f64 / 10f64.powf(snr_db / 10.0)
}

/// Add complex white Gaussian noise at the target SNR; returns the noisy
/// vector together with the noise variance fed to the detector.
pub fn add_noise(
    y_clean: &[Complex64],
    snr_db: f64,
    nt: usize,
    rng: &mut impl Rng,
) -> (ComplexVector, f64) {
    let sigma2 = noise_variance(snr_db, nt);
    let scale = (sigma2 / 2.0).sqrt();
    let noisy = y_clean
        .iter()
        .map(|&z| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            z + Complex64::new(re * scale, im * scale)
        })
        .collect();
    (noisy, sigma2)
}

/// Which backend executes the matrix work.
#[derive(Debug, Clone)]
pub enum BackendChoice {
    Trusted,
    Emulated {
        tile: TileSpec,
        voltage: f64,
        profile: VoltageProfile,
    },
}

/// One Monte-Carlo run configuration.
#[derive(Debug, Clone)]
pub struct TrialConfig {
    pub nt: usize,
    pub nr: usize,
    pub snr_db: f64,
    pub constellation: ConstellationKind,
    pub trials: usize,
    pub iters: usize,
    pub backend: BackendChoice,
    pub seed: u64,
}

/// Aggregated counts from a Monte-Carlo run.
///
/// `ber` is the error rate of the protected system with reruns applied;
/// `uncorrected_ber` is the unprotected pipeline on equally faulty
/// hardware; `reference_ber` is the fault-free pipeline floor and
/// `exact_ber` the direct-solve detector on the same trials.
#[derive(Debug, Clone, PartialEq)]
pub struct BerReport {
    pub trials: u64,
    pub bits_total: u64,
    pub bit_errors: u64,
    pub ber: f64,
    pub uncorrected_bit_errors: u64,
    pub uncorrected_ber: f64,
    pub reference_bit_errors: u64,
    pub reference_ber: f64,
    pub exact_bit_errors: u64,
    pub exact_ber: f64,
    pub abft_detections: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub reruns: u64,
    /// Largest output deviation seen among false negatives.
    pub fn_max_deviation: f64,
}

fn count_bit_errors(a: &[u8], b: &[u8]) -> u64 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u64
}

fn max_deviation(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| {
        let d = (x - y).norm();
        if d.is_finite() {
            acc.max(d)
        } else {
            f64::INFINITY
        }
    })
}

fn derive_seed(seed: u64, trial: u64, salt: u64) -> u64 {
    // splitmix64 over a mixed key: independent per-trial fault streams.
    let mut z = seed
        .wrapping_add(trial.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(salt.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Run the Monte-Carlo trials. A voltage at or below the profile's crash
/// point aborts the whole sweep point with [`Error::DeviceCrash`].
pub fn run_trials(cfg: &TrialConfig) -> Result<BerReport> {
    if cfg.trials < 1 {
        return Err(Error::InvalidConfig("need at least one trial".into()));
    }
    let constellation = Constellation::new(cfg.constellation);
    let sigma2 = noise_variance(cfg.snr_db, cfg.nt);
    let det_cfg = DetectorConfig::new(cfg.nt, cfg.nr, sigma2, cfg.iters)?;

    // Resolve the fault probability up front so a crash voltage aborts
    // before any work is done.
    let emulated = match &cfg.backend {
        BackendChoice::Trusted => None,
        BackendChoice::Emulated {
            tile,
            voltage,
            profile,
        } => Some((*tile, error_rate(*voltage, profile)?)),
    };

    let bps = constellation.bits_per_symbol();
    let bits_per_trial = cfg.nt * bps;
    let mut report = BerReport {
        trials: cfg.trials as u64,
        bits_total: (cfg.trials * bits_per_trial) as u64,
        bit_errors: 0,
        ber: 0.0,
        uncorrected_bit_errors: 0,
        uncorrected_ber: 0.0,
        reference_bit_errors: 0,
        reference_ber: 0.0,
        exact_bit_errors: 0,
        exact_ber: 0.0,
        abft_detections: 0,
        false_positives: 0,
        false_negatives: 0,
        reruns: 0,
        fn_max_deviation: 0.0,
    };

    for trial in 0..cfg.trials as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(trial);

        let h = gen_channel(cfg.nr, cfg.nt, &mut rng);
        let tx_bits: Vec<u8> = (0..bits_per_trial).map(|_| rng.gen_range(0..2u8)).collect();
        let symbols = constellation.modulate(&tx_bits)?;
        let clean: Vec<Complex64> = (0..cfg.nr)
            .map(|r| {
                (0..cfg.nt)
                    .map(|c| h.get(r, c) * symbols[c])
                    .sum::<Complex64>()
            })
            .collect();
        let (y, _) = add_noise(&clean, cfg.snr_db, cfg.nt, &mut rng);

        // Fault-free reference of the same pipeline: rerun target and
        // classification baseline.
        let reference = detect(&h, &y, &det_cfg, &mut TrustedBackend)?;
        let x_ref = reference.x_hat.ok_or_else(|| {
            Error::InvalidConfig("trusted pipeline failed its own checksum check".into())
        })?;
        let ref_bits = constellation.demodulate(&x_ref);
        let ref_errors = count_bit_errors(&ref_bits, &tx_bits);
        report.reference_bit_errors += ref_errors;

        let x_exact = exact_detect(&h, &y, sigma2)?;
        report.exact_bit_errors += count_bit_errors(&constellation.demodulate(&x_exact), &tx_bits);

        let ref_scale = x_ref.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let class_threshold = det_cfg.tolerance.threshold(ref_scale);

        match emulated {
            None => {
                // Trusted run is the protected run; nothing to correct.
                report.bit_errors += ref_errors;
                report.uncorrected_bit_errors += ref_errors;
            }
            Some((tile, p_flip)) => {
                let model = FaultModel::new(
                    p_flip,
                    BitDistribution::uniform(),
                    derive_seed(cfg.seed, trial, 1),
                )?;
                let mut emu = AccelEmulator::new(tile, model);
                let outcome = detect(&h, &y, &det_cfg, &mut emu);

                let corrected_errors = match outcome {
                    Ok(outcome) => {
                        report.abft_detections += outcome.diagnostics.a_report.violations as u64
                            + outcome.diagnostics.b_report.violations as u64
                            + outcome
                                .diagnostics
                                .x_report
                                .as_ref()
                                .map_or(0, |r| r.violations as u64);
                        match outcome.status {
                            DetectionStatus::Ok => {
                                let x_hw = outcome.x_hat.expect("ok outcome carries estimate");
                                let deviation = max_deviation(&x_hw, &x_ref);
                                if deviation > class_threshold {
                                    report.false_negatives += 1;
                                    report.fn_max_deviation =
                                        report.fn_max_deviation.max(deviation);
                                }
                                count_bit_errors(&constellation.demodulate(&x_hw), &tx_bits)
                            }
                            _ => {
                                // Detected: rerun once on the trusted path.
                                report.reruns += 1;
                                if let Some(raw) = &outcome.diagnostics.raw_solution {
                                    let x_hw = unlift_vector(&raw[..2 * cfg.nt])?;
                                    if max_deviation(&x_hw, &x_ref) <= class_threshold {
                                        report.false_positives += 1;
                                    }
                                }
                                ref_errors
                            }
                        }
                    }
                    // A corrupted diagonal can zero out; the protected
                    // system observably failed, so rerun on trusted.
                    Err(Error::SingularInit { .. }) => {
                        report.reruns += 1;
                        ref_errors
                    }
                    Err(e) => return Err(e),
                };
                report.bit_errors += corrected_errors;

                // Unprotected pipeline on equally faulty hardware, with an
                // independent fault stream.
                let model = FaultModel::new(
                    p_flip,
                    BitDistribution::uniform(),
                    derive_seed(cfg.seed, trial, 2),
                )?;
                let mut emu = AccelEmulator::new(tile, model);
                let uncorrected_bits = match detect_baseline(&h, &y, &det_cfg, &mut emu) {
                    Ok(x) => constellation.demodulate(&x),
                    Err(Error::SingularInit { .. }) => {
                        constellation.demodulate(&vec![Complex64::default(); cfg.nt])
                    }
                    Err(e) => return Err(e),
                };
                report.uncorrected_bit_errors += count_bit_errors(&uncorrected_bits, &tx_bits);
            }
        }
    }

    let bits = report.bits_total as f64;
    report.ber = report.bit_errors as f64 / bits;
    report.uncorrected_ber = report.uncorrected_bit_errors as f64 / bits;
    report.reference_ber = report.reference_bit_errors as f64 / bits;
    report.exact_ber = report.exact_bit_errors as f64 / bits;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constellations_have_unit_average_energy_and_gray_labels() {
        for kind in [
            ConstellationKind::Qpsk,
            ConstellationKind::Qam16,
            ConstellationKind::Qam64,
        ] {
            let c = Constellation::new(kind);
            let mean: f64 = c.points().iter().map(|p| p.norm_sqr()).sum::<f64>()
                / c.points().len() as f64;
            assert!((mean - 1.0).abs() < 1e-12, "{kind:?}: mean energy {mean}");

            // Gray adjacency: points at the minimal grid spacing must
            // differ in exactly one label bit.
            let mut min_step = f64::INFINITY;
            for (la, &pa) in c.points().iter().enumerate() {
                for (lb, &pb) in c.points().iter().enumerate() {
                    let d = (pa - pb).norm();
                    if la != lb && d < min_step {
                        min_step = d;
                    }
                }
            }
            for (la, &pa) in c.points().iter().enumerate() {
                for (lb, &pb) in c.points().iter().enumerate() {
                    if la >= lb {
                        continue;
                    }
                    if ((pa - pb).norm() - min_step).abs() < 1e-9 {
                        assert_eq!(
                            (la ^ lb).count_ones(),
                            1,
                            "{kind:?}: neighboring labels {la:#b} / {lb:#b}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn qpsk_round_trips_all_patterns() {
        let c = Constellation::new(ConstellationKind::Qpsk);
        for b0 in 0..2u8 {
            for b1 in 0..2u8 {
                let bits = vec![b0, b1];
                let symbols = c.modulate(&bits).unwrap();
                assert_eq!(c.demodulate(&symbols), bits);
            }
        }
    }

    #[test]
    fn qam16_round_trips_all_labels() {
        let c = Constellation::new(ConstellationKind::Qam16);
        for label in 0..16usize {
            let bits: Vec<u8> = (0..4).rev().map(|k| ((label >> k) & 1) as u8).collect();
            let symbols = c.modulate(&bits).unwrap();
            assert_eq!(c.demodulate(&symbols), bits, "label {label}");
        }
    }

    #[test]
    fn qam64_round_trips_all_labels() {
        let c = Constellation::new(ConstellationKind::Qam64);
        for label in 0..64usize {
            let bits: Vec<u8> = (0..6).rev().map(|k| ((label >> k) & 1) as u8).collect();
            let symbols = c.modulate(&bits).unwrap();
            assert_eq!(c.demodulate(&symbols), bits, "label {label}");
        }
    }

    #[test]
    fn midway_points_break_ties_to_smaller_label() {
        let c = Constellation::new(ConstellationKind::Qpsk);
        // The origin is equidistant from all four points.
        let bits = c.demodulate(&[Complex64::default()]);
        assert_eq!(bits, vec![0, 0]);
    }

    #[test]
    fn modulate_rejects_ragged_bit_streams() {
        let c = Constellation::new(ConstellationKind::Qam16);
        assert!(c.modulate(&[1, 0, 1]).is_err());
    }

    #[test]
    fn channel_moments_match_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = gen_channel(100, 100, &mut rng);
        let n = (100 * 100) as f64;
        let mean_power: f64 = h.data().iter().map(|z| z.norm_sqr()).sum::<f64>() / n;
        assert!((mean_power - 1.0).abs() < 0.05, "power {mean_power}");
        let re_var: f64 = h.data().iter().map(|z| z.re * z.re).sum::<f64>() / n;
        let im_var: f64 = h.data().iter().map(|z| z.im * z.im).sum::<f64>() / n;
        assert!((re_var - 0.5).abs() < 0.05);
        assert!((im_var - 0.5).abs() < 0.05);
    }

    #[test]
    fn channel_is_deterministic_under_seed() {
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        let ha = gen_channel(8, 4, &mut a);
        let hb = gen_channel(8, 4, &mut b);
        assert_eq!(ha.data(), hb.data());
    }

    #[test]
    fn noise_variance_follows_the_convention() {
        assert!((noise_variance(10.0, 8) - 0.8).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let clean = vec![Complex64::default(); 100_000];
        let (noisy, sigma2) = add_noise(&clean, 10.0, 8, &mut rng);
        let measured: f64 =
            noisy.iter().map(|z| z.norm_sqr()).sum::<f64>() / noisy.len() as f64;
        assert!((measured - sigma2).abs() / sigma2 < 0.03);

        // Very high SNR leaves the signal untouched.
        let (quiet, s2) = add_noise(&[Complex64::new(1.0, 1.0)], 300.0, 8, &mut rng);
        assert!(s2 < 1e-20);
        assert!((quiet[0] - Complex64::new(1.0, 1.0)).norm() < 1e-9);
    }

    fn base_config(backend: BackendChoice) -> TrialConfig {
        TrialConfig {
            nt: 4,
            nr: 32,
            snr_db: 10.0,
            constellation: ConstellationKind::Qpsk,
            trials: 50,
            iters: 3,
            backend,
            seed: 2024,
        }
    }

    #[test]
    fn fault_free_emulation_is_equivalent_to_trusted() {
        let trusted = run_trials(&base_config(BackendChoice::Trusted)).unwrap();
        let emulated = run_trials(&base_config(BackendChoice::Emulated {
            tile: TileSpec::default(),
            voltage: 0.9,
            profile: VoltageProfile::mhz100(),
        }))
        .unwrap();
        assert_eq!(emulated.abft_detections, 0);
        assert_eq!(emulated.false_positives, 0);
        assert_eq!(emulated.false_negatives, 0);
        assert_eq!(emulated.reruns, 0);
        assert_eq!(emulated.bit_errors, trusted.bit_errors);
        assert_eq!(emulated.uncorrected_bit_errors, trusted.bit_errors);
        assert_eq!(emulated.ber, trusted.ber);
    }

    #[test]
    fn newton_pipeline_tracks_exact_detector_at_low_snr() {
        let mut cfg = base_config(BackendChoice::Trusted);
        cfg.snr_db = 0.0;
        cfg.trials = 400;
        let report = run_trials(&cfg).unwrap();
        assert!(report.exact_bit_errors > 0, "need a measurable error floor");
        let p = report.exact_ber;
        let se = (p * (1.0 - p) / report.bits_total as f64).sqrt();
        assert!(
            (report.ber - report.exact_ber).abs() <= 2.0 * se.max(1e-9),
            "newton {} vs exact {}",
            report.ber,
            report.exact_ber
        );
    }

    #[test]
    fn undervolting_triggers_detections_and_protection() {
        let report = run_trials(&base_config(BackendChoice::Emulated {
            tile: TileSpec::default(),
            voltage: 0.78,
            profile: VoltageProfile::mhz100(),
        }))
        .unwrap();
        assert!(report.abft_detections > 0);
        assert!(report.reruns > 0);
        // Reruns pin the corrected output to the fault-free floor.
        assert_eq!(report.bit_errors, report.reference_bit_errors);
        assert!(report.uncorrected_ber > report.reference_ber);

        // Deeper undervolting degrades the unprotected pipeline sharply
        // while the protected one stays at the floor.
        let deep = run_trials(&base_config(BackendChoice::Emulated {
            tile: TileSpec::default(),
            voltage: 0.75,
            profile: VoltageProfile::mhz100(),
        }))
        .unwrap();
        assert_eq!(deep.bit_errors, deep.reference_bit_errors);
        assert!(
            deep.uncorrected_ber > deep.reference_ber + 0.05,
            "uncorrected {} vs floor {}",
            deep.uncorrected_ber,
            deep.reference_ber
        );
    }

    #[test]
    fn crash_voltage_aborts_the_point() {
        let result = run_trials(&base_config(BackendChoice::Emulated {
            tile: TileSpec::default(),
            voltage: 0.70,
            profile: VoltageProfile::mhz100(),
        }));
        assert!(matches!(result, Err(Error::DeviceCrash { .. })));
    }

    #[test]
    fn degradation_is_monotone_across_the_sweep() {
        // Spearman rank correlation between voltage and uncorrected BER
        // must be negative: lower voltage, more errors.
        let voltages: Vec<f64> = (0..8).map(|i| 0.805 - 0.01 * i as f64).collect();
        let mut bers = Vec::new();
        for &v in &voltages {
            let mut cfg = base_config(BackendChoice::Emulated {
                tile: TileSpec::default(),
                voltage: v,
                profile: VoltageProfile::mhz100(),
            });
            cfg.trials = 60;
            bers.push(run_trials(&cfg).unwrap().uncorrected_ber);
        }
        let rank = |xs: &[f64]| -> Vec<f64> {
            let mut idx: Vec<usize> = (0..xs.len()).collect();
            idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
            let mut ranks = vec![0.0; xs.len()];
            for (r, &i) in idx.iter().enumerate() {
                ranks[i] = r as f64;
            }
            ranks
        };
        let rv = rank(&voltages);
        let rb = rank(&bers);
        let n = voltages.len() as f64;
        let mean = (n - 1.0) / 2.0;
        let mut num = 0.0;
        let mut dv = 0.0;
        let mut db = 0.0;
        for i in 0..voltages.len() {
            num += (rv[i] - mean) * (rb[i] - mean);
            dv += (rv[i] - mean).powi(2);
            db += (rb[i] - mean).powi(2);
        }
        let spearman = num / (dv * db).sqrt();
        assert!(spearman < -0.8, "spearman {spearman}, bers {bers:?}");
    }
}
