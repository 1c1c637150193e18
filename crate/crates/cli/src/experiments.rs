//! The experiment implementations: each produces CSV rows plus optional
//! charts. Sweep points run in parallel with per-point RNG substreams and
//! are emitted in sweep order, so the output does not depend on thread
//! scheduling.

use std::time::Instant;

use anyhow::{anyhow, Context};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use mimo_abft::accel::TileSpec;
use mimo_abft::backend::{CountingBackend, TrustedBackend};
use mimo_abft::costmodel::{flops_mimo, flops_overhead, overhead_ratio, tile_overhead_ratio};
use mimo_abft::detector::{detect, detect_baseline, DetectorConfig};
use mimo_abft::error::Error;
use mimo_abft::faults::power;
use mimo_abft::linksim::{gen_channel, noise_variance, run_trials, BackendChoice, TrialConfig};

use crate::config::{Config, ExperimentKind};
use crate::svg::Chart;

pub struct ExperimentOutput {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
    pub charts: Vec<Chart>,
    pub crashed: bool,
}

pub fn run(config: &Config) -> anyhow::Result<ExperimentOutput> {
    match config.kind().map_err(|e| anyhow!(e.to_string()))? {
        ExperimentKind::UndervoltSweep => undervolt_sweep(config),
        ExperimentKind::OverheadSweep => overhead_sweep(config),
        ExperimentKind::BerSnr => ber_snr(config),
        ExperimentKind::CostTable => cost_table(config),
    }
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Descending grid from `start` to `stop`, computed in integer micro-units
/// so the points land on clean decimals.
fn descending_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let to_micro = |v: f64| (v * 1e6).round() as i64;
    let (start, stop, step) = (to_micro(start), to_micro(stop), to_micro(step));
    let mut points = Vec::new();
    let mut v = start;
    while v >= stop {
        points.push(v as f64 / 1e6);
        v -= step;
    }
    points
}

fn undervolt_sweep(config: &Config) -> anyhow::Result<ExperimentOutput> {
    let profile = config.profile().map_err(|e| anyhow!(e.to_string()))?;
    let power_model = config.power_model().map_err(|e| anyhow!(e.to_string()))?;
    let constellation = config.constellation().map_err(|e| anyhow!(e.to_string()))?;
    let uv = &config.undervolt;
    let voltages = descending_grid(uv.v_start, uv.v_stop, uv.v_step);

    let results: Vec<(f64, Result<mimo_abft::linksim::BerReport, Error>)> = voltages
        .par_iter()
        .enumerate()
        .map(|(i, &v)| {
            let cfg = TrialConfig {
                nt: config.detector.nt,
                nr: config.detector.nr,
                snr_db: config.link.snr_db,
                constellation,
                trials: config.link.trials,
                iters: config.detector.iters,
                backend: BackendChoice::Emulated {
                    tile: TileSpec::new(config.accel.tile),
                    voltage: v,
                    profile,
                },
                seed: derive_seed(config.experiment.seed, i as u64),
            };
            (v, run_trials(&cfg))
        })
        .collect();

    let columns = vec![
        "voltage_v",
        "status",
        "power_mw",
        "detections",
        "false_positives",
        "false_negatives",
        "reruns",
        "trials",
        "bits",
        "ber_corrected",
        "ber_uncorrected",
        "ber_reference",
        "ber_exact",
    ];
    let mut rows = Vec::new();
    let mut crashed = false;
    let mut det_series = Vec::new();
    let mut ber_corr = Vec::new();
    let mut ber_unc = Vec::new();
    let mut ber_ref = Vec::new();
    let mut power_series = Vec::new();
    for (v, result) in results {
        match result {
            Ok(report) => {
                let p = power(v, profile.freq_mhz, &power_model);
                rows.push(vec![
                    fmt(v),
                    "ok".into(),
                    fmt(p),
                    report.abft_detections.to_string(),
                    report.false_positives.to_string(),
                    report.false_negatives.to_string(),
                    report.reruns.to_string(),
                    report.trials.to_string(),
                    report.bits_total.to_string(),
                    fmt(report.ber),
                    fmt(report.uncorrected_ber),
                    fmt(report.reference_ber),
                    fmt(report.exact_ber),
                ]);
                det_series.push((v, report.abft_detections as f64));
                ber_corr.push((v, report.ber));
                ber_unc.push((v, report.uncorrected_ber));
                ber_ref.push((v, report.reference_ber));
                power_series.push((v, p));
            }
            Err(Error::DeviceCrash { voltage }) => {
                rows.push(vec![
                    fmt(voltage),
                    "crash".into(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                ]);
                crashed = true;
                break;
            }
            Err(e) => return Err(e).context("undervolt sweep point failed"),
        }
    }

    let charts = vec![
        Chart {
            name: "detections".into(),
            title: "Checksum detections vs supply voltage".into(),
            x_label: "voltage (V)".into(),
            y_label: "detections".into(),
            log_y: false,
            series: vec![("detections".into(), det_series)],
        },
        Chart {
            name: "ber".into(),
            title: "Bit error rate vs supply voltage".into(),
            x_label: "voltage (V)".into(),
            y_label: "log10 BER".into(),
            log_y: true,
            series: vec![
                ("corrected".into(), ber_corr),
                ("uncorrected".into(), ber_unc),
                ("fault-free floor".into(), ber_ref),
            ],
        },
        Chart {
            name: "power".into(),
            title: "Modeled power vs supply voltage".into(),
            x_label: "voltage (V)".into(),
            y_label: "power (mW)".into(),
            log_y: false,
            series: vec![("power".into(), power_series)],
        },
    ];
    Ok(ExperimentOutput {
        columns,
        rows,
        charts,
        crashed,
    })
}

struct OverheadPoint {
    nt: usize,
    counted_protected: u64,
    counted_baseline: u64,
    time_ratio: f64,
}

fn overhead_sweep(config: &Config) -> anyhow::Result<ExperimentOutput> {
    let nr = config.detector.nr;
    let iters = config.detector.iters;
    let tile = TileSpec::new(config.accel.tile);
    let repeats = config.overhead.repeats;

    let points: Vec<anyhow::Result<OverheadPoint>> = config
        .overhead
        .nt_list
        .par_iter()
        .enumerate()
        .map(|(i, &nt)| -> anyhow::Result<OverheadPoint> {
            let sigma2 = noise_variance(config.link.snr_db, nt);
            let cfg = DetectorConfig::new(nt, nr, sigma2, iters)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.experiment.seed, i as u64));
            let h = gen_channel(nr, nt, &mut rng);
            let y: Vec<Complex64> = (0..nr)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();

            let mut protected = CountingBackend::new(TrustedBackend);
            detect(&h, &y, &cfg, &mut protected)?;
            let mut baseline = CountingBackend::new(TrustedBackend);
            detect_baseline(&h, &y, &cfg, &mut baseline)?;

            let timer = Instant::now();
            for _ in 0..repeats {
                detect(&h, &y, &cfg, &mut TrustedBackend)?;
            }
            let protected_time = timer.elapsed();
            let timer = Instant::now();
            for _ in 0..repeats {
                detect_baseline(&h, &y, &cfg, &mut TrustedBackend)?;
            }
            let baseline_time = timer.elapsed();
            let time_ratio = protected_time.as_secs_f64() / baseline_time.as_secs_f64();
            eprintln!(
                "overhead nt={nt}: wall-clock protected/baseline = {time_ratio:.4} over {repeats} runs"
            );
            Ok(OverheadPoint {
                nt,
                counted_protected: protected.total_flops(),
                counted_baseline: baseline.total_flops(),
                time_ratio,
            })
        })
        .collect();

    let mut columns = vec![
        "nt",
        "nr",
        "iters",
        "tile",
        "flop_total_alpha1",
        "flop_overhead_alpha1",
        "flop_ratio_alpha1",
        "flop_ratio_alpha0",
        "tile_ratio",
        "counted_flops_protected",
        "counted_flops_baseline",
        "counted_ratio",
    ];
    if config.overhead.record_timings {
        columns.push("time_ratio");
    }
    let mut rows = Vec::new();
    let mut flop_series = Vec::new();
    let mut tile_series = Vec::new();
    let mut counted_series = Vec::new();
    for point in points {
        let point = point?;
        let nt = point.nt;
        let total = flops_mimo(nt, nr, iters, 1.0).total;
        let overhead = flops_overhead(nt, nr, iters, 1.0);
        let ratio1 = overhead_ratio(nt, nr, iters, 1.0);
        let ratio0 = overhead_ratio(nt, nr, iters, 0.0);
        let tile_ratio = tile_overhead_ratio(nt, nr, iters, tile);
        let counted_ratio =
            (point.counted_protected as f64 - point.counted_baseline as f64)
                / point.counted_baseline as f64;
        let mut row = vec![
            nt.to_string(),
            nr.to_string(),
            iters.to_string(),
            tile.edge.to_string(),
            fmt(total),
            fmt(overhead),
            fmt(ratio1),
            fmt(ratio0),
            fmt(tile_ratio),
            point.counted_protected.to_string(),
            point.counted_baseline.to_string(),
            fmt(counted_ratio),
        ];
        if config.overhead.record_timings {
            row.push(fmt(point.time_ratio));
        }
        rows.push(row);
        flop_series.push((nt as f64, ratio1));
        tile_series.push((nt as f64, tile_ratio));
        counted_series.push((nt as f64, 1.0 + counted_ratio));
    }

    let charts = vec![Chart {
        name: "ratios".into(),
        title: "Checksum overhead vs user count".into(),
        x_label: "Nt".into(),
        y_label: "protected / baseline".into(),
        log_y: false,
        series: vec![
            ("flop model (1 + ratio, alpha=1)".into(), flop_series.iter().map(|&(x, y)| (x, 1.0 + y)).collect()),
            ("tile ops".into(), tile_series),
            ("counted backend flops".into(), counted_series),
        ],
    }];
    Ok(ExperimentOutput {
        columns,
        rows,
        charts,
        crashed: false,
    })
}

fn ber_snr(config: &Config) -> anyhow::Result<ExperimentOutput> {
    let constellation = config.constellation().map_err(|e| anyhow!(e.to_string()))?;
    let section = &config.ber_snr;
    let steps = ((section.snr_stop_db - section.snr_start_db) / section.snr_step_db + 1e-9).floor()
        as usize;
    let snrs: Vec<f64> = (0..=steps)
        .map(|i| section.snr_start_db + i as f64 * section.snr_step_db)
        .collect();

    let results: Vec<anyhow::Result<(f64, mimo_abft::linksim::BerReport)>> = snrs
        .par_iter()
        .enumerate()
        .map(|(i, &snr_db)| {
            let cfg = TrialConfig {
                nt: config.detector.nt,
                nr: config.detector.nr,
                snr_db,
                constellation,
                trials: config.link.trials,
                iters: config.detector.iters,
                backend: BackendChoice::Trusted,
                seed: derive_seed(config.experiment.seed, i as u64),
            };
            Ok((snr_db, run_trials(&cfg)?))
        })
        .collect();

    let columns = vec![
        "snr_db",
        "trials",
        "bits",
        "ber",
        "ber_exact",
        "bit_errors",
        "exact_bit_errors",
    ];
    let mut rows = Vec::new();
    let mut newton_series = Vec::new();
    let mut exact_series = Vec::new();
    for result in results {
        let (snr_db, report) = result?;
        rows.push(vec![
            fmt(snr_db),
            report.trials.to_string(),
            report.bits_total.to_string(),
            fmt(report.ber),
            fmt(report.exact_ber),
            report.bit_errors.to_string(),
            report.exact_bit_errors.to_string(),
        ]);
        newton_series.push((snr_db, report.ber));
        exact_series.push((snr_db, report.exact_ber));
    }
    let charts = vec![Chart {
        name: "ber".into(),
        title: "Bit error rate vs SNR".into(),
        x_label: "SNR (dB)".into(),
        y_label: "log10 BER".into(),
        log_y: true,
        series: vec![
            ("newton pipeline".into(), newton_series),
            ("exact solve".into(), exact_series),
        ],
    }];
    Ok(ExperimentOutput {
        columns,
        rows,
        charts,
        crashed: false,
    })
}

fn cost_table(config: &Config) -> anyhow::Result<ExperimentOutput> {
    let section = &config.cost_table;
    let iters = config.detector.iters;
    let tile = TileSpec::new(config.accel.tile);
    let columns = vec![
        "nt",
        "nr",
        "iters",
        "alpha",
        "gram",
        "matched_filter",
        "iterations",
        "backsub",
        "total",
        "overhead",
        "overhead_ratio",
        "tile_ratio",
    ];
    let mut rows = Vec::new();
    let mut series_per_alpha: Vec<(String, Vec<(f64, f64)>)> = section
        .alpha_list
        .iter()
        .map(|&alpha| (format!("alpha={alpha}"), Vec::new()))
        .collect();
    for &nt in &section.nt_list {
        let nr = nt * section.nr_ratio;
        for (ai, &alpha) in section.alpha_list.iter().enumerate() {
            let cost = flops_mimo(nt, nr, iters, alpha);
            let overhead = flops_overhead(nt, nr, iters, alpha);
            let ratio = overhead / cost.total;
            rows.push(vec![
                nt.to_string(),
                nr.to_string(),
                iters.to_string(),
                fmt(alpha),
                fmt(cost.gram),
                fmt(cost.matched_filter),
                fmt(cost.iterations),
                fmt(cost.backsub),
                fmt(cost.total),
                fmt(overhead),
                fmt(ratio),
                fmt(tile_overhead_ratio(nt, nr, iters, tile)),
            ]);
            series_per_alpha[ai].1.push((nt as f64, ratio));
        }
    }
    let charts = vec![Chart {
        name: "overhead_ratio".into(),
        title: "Modeled checksum overhead ratio vs user count".into(),
        x_label: "Nt".into(),
        y_label: "overhead / total".into(),
        log_y: false,
        series: series_per_alpha,
    }];
    Ok(ExperimentOutput {
        columns,
        rows,
        charts,
        crashed: false,
    })
}

/// Usable as a library entry for tests: render the CSV text, comment line
/// included.
pub fn render_csv(config: &Config, output: &ExperimentOutput) -> String {
    let mut text = format!(
        "# config_hash={} seed={}\n",
        config.hash(),
        config.experiment.seed
    );
    text.push_str(&output.columns.join(","));
    text.push('\n');
    for row in &output.rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    text
}
