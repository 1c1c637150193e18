//! Experiment configuration: a TOML file with sections, every field
//! defaulted, command-line flags overriding file values.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mimo_abft::faults::{PowerModel, VoltageProfile};
use mimo_abft::linksim::ConstellationKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    OverheadSweep,
    UndervoltSweep,
    BerSnr,
    CostTable,
}

impl ExperimentKind {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "overhead-sweep" => Some(Self::OverheadSweep),
            "undervolt-sweep" => Some(Self::UndervoltSweep),
            "ber-snr" => Some(Self::BerSnr),
            "cost-table" => Some(Self::CostTable),
            _ => None,
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Self::OverheadSweep => "overhead-sweep",
            Self::UndervoltSweep => "undervolt-sweep",
            Self::BerSnr => "ber-snr",
            Self::CostTable => "cost-table",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: String,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            kind: "undervolt-sweep".into(),
            seed: 1,
            out: PathBuf::from("experiment.csv"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub nt: usize,
    pub nr: usize,
    pub iters: usize,
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            nt: 8,
            nr: 64,
            iters: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkSection {
    pub snr_db: f64,
    pub constellation: String,
    pub trials: usize,
}

impl Default for LinkSection {
    fn default() -> Self {
        Self {
            snr_db: 10.0,
            constellation: "qpsk".into(),
            trials: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccelSection {
    pub tile: usize,
}

impl Default for AccelSection {
    fn default() -> Self {
        Self { tile: 16 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UndervoltSection {
    pub v_start: f64,
    pub v_stop: f64,
    pub v_step: f64,
    pub profile: String,
}

impl Default for UndervoltSection {
    fn default() -> Self {
        Self {
            v_start: 1.0,
            v_stop: 0.74,
            v_step: 0.01,
            profile: "100mhz".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverheadSection {
    pub nt_list: Vec<usize>,
    /// Timing repetitions per point; measured ratios go to stderr.
    pub repeats: usize,
    /// Adds a wall-clock column to the CSV. Off by default: timing is not
    /// reproducible byte for byte.
    pub record_timings: bool,
}

impl Default for OverheadSection {
    fn default() -> Self {
        Self {
            nt_list: vec![4, 6, 8, 10, 12],
            repeats: 10,
            record_timings: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BerSnrSection {
    pub snr_start_db: f64,
    pub snr_stop_db: f64,
    pub snr_step_db: f64,
}

impl Default for BerSnrSection {
    fn default() -> Self {
        Self {
            snr_start_db: -10.0,
            snr_stop_db: 10.0,
            snr_step_db: 2.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostTableSection {
    pub nt_list: Vec<usize>,
    pub nr_ratio: usize,
    pub alpha_list: Vec<f64>,
}

impl Default for CostTableSection {
    fn default() -> Self {
        Self {
            nt_list: vec![2, 4, 8, 16, 32, 64, 128],
            nr_ratio: 8,
            alpha_list: vec![0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    pub freq_mhz: f64,
    pub v_default: f64,
    pub v_poff: f64,
    pub v_crash: f64,
    pub p_max: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerSection {
    pub p_ref_mw: f64,
    pub v_ref: f64,
    pub f_ref_mhz: f64,
    pub static_mw: f64,
}

impl Default for PowerSection {
    fn default() -> Self {
        Self {
            p_ref_mw: 119.0,
            v_ref: 1.0,
            f_ref_mhz: 100.0,
            static_mw: 0.0,
        }
    }
}

/// The whole configuration file. Every section is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub experiment: ExperimentSection,
    pub detector: DetectorSection,
    pub link: LinkSection,
    pub accel: AccelSection,
    pub undervolt: UndervoltSection,
    pub overhead: OverheadSection,
    pub ber_snr: BerSnrSection,
    pub cost_table: CostTableSection,
    pub profiles: BTreeMap<String, ProfileSection>,
    pub power: PowerSection,
}

/// A field-level validation failure; maps to exit code 1.
#[derive(Debug)]
pub struct ValidationError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config at `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ValidationError {}

fn invalid(field: &str, message: impl Into<String>) -> ValidationError {
    ValidationError {
        field: field.into(),
        message: message.into(),
    }
}

impl Config {
    pub fn kind(&self) -> Result<ExperimentKind, ValidationError> {
        ExperimentKind::parse(&self.experiment.kind).ok_or_else(|| {
            invalid(
                "experiment.kind",
                format!(
                    "unknown experiment `{}` (expected overhead-sweep, undervolt-sweep, ber-snr or cost-table)",
                    self.experiment.kind
                ),
            )
        })
    }

    pub fn constellation(&self) -> Result<ConstellationKind, ValidationError> {
        ConstellationKind::by_name(&self.link.constellation).ok_or_else(|| {
            invalid(
                "link.constellation",
                format!(
                    "unknown constellation `{}` (expected qpsk, qam16 or qam64)",
                    self.link.constellation
                ),
            )
        })
    }

    /// Resolve the voltage profile by name: custom profiles from the file
    /// first, then the built-in presets.
    pub fn profile(&self) -> Result<VoltageProfile, ValidationError> {
        let name = &self.undervolt.profile;
        if let Some(p) = self.profiles.get(name) {
            return VoltageProfile::new(
                p.freq_mhz, p.v_default, p.v_poff, p.v_crash, p.p_max, p.gamma,
            )
            .map_err(|e| invalid(&format!("profiles.{name}"), e.to_string()));
        }
        VoltageProfile::by_name(name).ok_or_else(|| {
            invalid(
                "undervolt.profile",
                format!("unknown profile `{name}` (built-ins: 100mhz, 75mhz, 50mhz, 25mhz)"),
            )
        })
    }

    pub fn power_model(&self) -> Result<PowerModel, ValidationError> {
        PowerModel::new(self.power.p_ref_mw, self.power.v_ref, self.power.f_ref_mhz)
            .map(|m| m.with_static_floor(self.power.static_mw))
            .map_err(|e| invalid("power", e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let kind = self.kind()?;
        self.constellation()?;
        self.power_model()?;
        if self.detector.nt < 1 || self.detector.nr < self.detector.nt {
            return Err(invalid(
                "detector",
                format!(
                    "need nr >= nt >= 1, got nt={}, nr={}",
                    self.detector.nt, self.detector.nr
                ),
            ));
        }
        if self.detector.iters < 1 {
            return Err(invalid("detector.iters", "need at least one iteration"));
        }
        if self.accel.tile < 1 {
            return Err(invalid("accel.tile", "tile edge must be at least 1"));
        }
        if self.link.trials < 1 {
            return Err(invalid("link.trials", "need at least one trial"));
        }
        match kind {
            ExperimentKind::UndervoltSweep => {
                self.profile()?;
                if !(self.undervolt.v_step > 0.0) {
                    return Err(invalid("undervolt.v_step", "step must be positive"));
                }
                if self.undervolt.v_start < self.undervolt.v_stop {
                    return Err(invalid(
                        "undervolt",
                        "v_start must not be below v_stop (the sweep runs downward)",
                    ));
                }
            }
            ExperimentKind::OverheadSweep => {
                if self.overhead.nt_list.is_empty() {
                    return Err(invalid("overhead.nt_list", "sweep range is empty"));
                }
                if self.overhead.repeats < 1 {
                    return Err(invalid("overhead.repeats", "need at least one repeat"));
                }
                for &nt in &self.overhead.nt_list {
                    if nt < 1 || nt > self.detector.nr {
                        return Err(invalid(
                            "overhead.nt_list",
                            format!("nt={nt} out of range for nr={}", self.detector.nr),
                        ));
                    }
                }
            }
            ExperimentKind::BerSnr => {
                if !(self.ber_snr.snr_step_db > 0.0) {
                    return Err(invalid("ber_snr.snr_step_db", "step must be positive"));
                }
                if self.ber_snr.snr_stop_db < self.ber_snr.snr_start_db {
                    return Err(invalid("ber_snr", "snr_stop_db is below snr_start_db"));
                }
            }
            ExperimentKind::CostTable => {
                if self.cost_table.nt_list.is_empty() {
                    return Err(invalid("cost_table.nt_list", "sweep range is empty"));
                }
                if self.cost_table.alpha_list.is_empty() {
                    return Err(invalid("cost_table.alpha_list", "sweep range is empty"));
                }
                if self.cost_table.nr_ratio < 1 {
                    return Err(invalid("cost_table.nr_ratio", "ratio must be at least 1"));
                }
                for &alpha in &self.cost_table.alpha_list {
                    if !(0.0..=1.0).contains(&alpha) {
                        return Err(invalid(
                            "cost_table.alpha_list",
                            format!("alpha={alpha} outside [0, 1]"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Hash of the fully resolved configuration, recorded in every CSV so
    /// outputs are traceable to their inputs.
    pub fn hash(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(16);
        for byte in &digest[..8] {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }
}
