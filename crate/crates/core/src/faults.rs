//! Voltage-indexed fault model and the accelerator power model.
//!
//! Undervolted logic is modeled as a per-tile-output-element probability of
//! flipping one bit of the IEEE-754 interchange representation. The
//! probability is zero at and above the point of first failure, follows a
//! power-law cliff between that point and the crash voltage, and the
//! emulated device refuses to operate at or below the crash voltage.
//! Dynamic power scales linearly with clock frequency and quadratically
//! with supply voltage.

use rand::Rng;

use crate::error::{Error, Result};

/// Bit regions of an `f64` interchange value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitRegion {
    Sign,
    Exponent,
    MantissaHigh,
    MantissaLow,
}

impl BitRegion {
    pub const ALL: [BitRegion; 4] = [
        BitRegion::Sign,
        BitRegion::Exponent,
        BitRegion::MantissaHigh,
        BitRegion::MantissaLow,
    ];

    /// Inclusive bit range of the region, bit 0 = least significant.
    pub fn bit_range(self) -> (u32, u32) {
        match self {
            BitRegion::Sign => (63, 63),
            BitRegion::Exponent => (52, 62),
            BitRegion::MantissaHigh => (8, 51),
            BitRegion::MantissaLow => (0, 7),
        }
    }

    pub fn width(self) -> u32 {
        let (lo, hi) = self.bit_range();
        hi - lo + 1
    }
}

/// Categorical distribution over bit regions.
#[derive(Debug, Clone, PartialEq)]
pub struct BitDistribution {
    weights: [f64; 4],
}

impl BitDistribution {
    pub fn new(weights: [f64; 4]) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidConfig("bit weights must be nonnegative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "bit weights must sum to 1, got {sum}"
            )));
        }
        Ok(Self { weights })
    }

    /// Weights proportional to region widths: every one of the 64 bit
    /// positions is equally likely.
    pub fn uniform() -> Self {
        let weights = [
            BitRegion::Sign.width() as f64 / 64.0,
            BitRegion::Exponent.width() as f64 / 64.0,
            BitRegion::MantissaHigh.width() as f64 / 64.0,
            BitRegion::MantissaLow.width() as f64 / 64.0,
        ];
        Self { weights }
    }

    pub fn weights(&self) -> &[f64; 4] {
        &self.weights
    }

    fn sample_bit(&self, rng: &mut impl Rng) -> u32 {
        let mut u: f64 = rng.gen();
        let mut region = BitRegion::MantissaLow;
        for (i, &w) in self.weights.iter().enumerate() {
            if u < w {
                region = BitRegion::ALL[i];
                break;
            }
            u -= w;
        }
        let (lo, hi) = region.bit_range();
        rng.gen_range(lo..=hi)
    }
}

/// Per-element corruption model applied at tile-output registers.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultModel {
    pub p_flip: f64,
    pub bit_distribution: BitDistribution,
    pub seed: u64,
}

impl FaultModel {
    pub fn new(p_flip: f64, bit_distribution: BitDistribution, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_flip) {
            return Err(Error::InvalidConfig(format!(
                "flip probability must lie in [0, 1], got {p_flip}"
            )));
        }
        Ok(Self {
            p_flip,
            bit_distribution,
            seed,
        })
    }

    /// Fault-free model; the emulator degenerates to exact arithmetic.
    pub fn disabled(seed: u64) -> Self {
        Self {
            p_flip: 0.0,
            bit_distribution: BitDistribution::uniform(),
            seed,
        }
    }
}

/// With probability `p_flip`, flip one bit of `x` drawn from the model's
/// bit distribution; otherwise return `x` unchanged. NaN or infinity
/// produced by a flip is kept: such values are legitimately detectable
/// corruptions.
pub fn inject(x: f64, model: &FaultModel, rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.gen();
    if u >= model.p_flip {
        return x;
    }
    let bit = model.bit_distribution.sample_bit(rng);
    f64::from_bits(x.to_bits() ^ (1u64 << bit))
}

/// Operating envelope of the emulated device at one clock frequency.
/// Voltages in volts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoltageProfile {
    pub freq_mhz: f64,
    pub v_default: f64,
    pub v_poff: f64,
    pub v_crash: f64,
    /// Flip probability approached just above the crash voltage.
    pub p_max: f64,
    /// Exponent of the power-law cliff between `v_poff` and `v_crash`.
    pub gamma: f64,
}

impl VoltageProfile {
    pub fn new(
        freq_mhz: f64,
        v_default: f64,
        v_poff: f64,
        v_crash: f64,
        p_max: f64,
        gamma: f64,
    ) -> Result<Self> {
        if !(v_crash < v_poff && v_poff <= v_default) {
            return Err(Error::InvalidConfig(format!(
                "need v_crash < v_poff <= v_default, got {v_crash}/{v_poff}/{v_default}"
            )));
        }
        if !(p_max > 0.0 && p_max <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "p_max must lie in (0, 1], got {p_max}"
            )));
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        Ok(Self {
            freq_mhz,
            v_default,
            v_poff,
            v_crash,
            p_max,
            gamma,
        })
    }

    /// Measured operating points of the reference accelerator, with the
    /// default cliff parameters.
    pub fn mhz100() -> Self {
        Self::new(100.0, 1.0, 0.807, 0.730, 0.05, 2.0).unwrap()
    }

    pub fn mhz75() -> Self {
        Self::new(75.0, 1.0, 0.765, 0.680, 0.05, 2.0).unwrap()
    }

    pub fn mhz50() -> Self {
        Self::new(50.0, 1.0, 0.695, 0.670, 0.05, 2.0).unwrap()
    }

    pub fn mhz25() -> Self {
        Self::new(25.0, 1.0, 0.633, 0.620, 0.05, 2.0).unwrap()
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "100mhz" => Some(Self::mhz100()),
            "75mhz" => Some(Self::mhz75()),
            "50mhz" => Some(Self::mhz50()),
            "25mhz" => Some(Self::mhz25()),
            _ => None,
        }
    }
}

/// Per-element flip probability at supply voltage `v`:
/// zero from the point of first failure upward, then
/// `p_max * ((v_poff - v) / (v_poff - v_crash))^gamma`, monotone
/// nonincreasing in `v`. At or below the crash voltage the device no
/// longer operates at all.
pub fn error_rate(v: f64, profile: &VoltageProfile) -> Result<f64> {
    if v <= profile.v_crash {
        return Err(Error::DeviceCrash { voltage: v });
    }
    if v >= profile.v_poff {
        return Ok(0.0);
    }
    let depth = (profile.v_poff - v) / (profile.v_poff - profile.v_crash);
    Ok(profile.p_max * depth.powf(profile.gamma))
}

/// Dynamic power model anchored at a reference point:
/// `P = static + (p_ref - static) * (f / f_ref) * (v / v_ref)^2`.
/// The static floor defaults to zero (pure dynamic scaling).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerModel {
    pub p_ref_mw: f64,
    pub v_ref: f64,
    pub f_ref_mhz: f64,
    pub static_mw: f64,
}

impl PowerModel {
    pub fn new(p_ref_mw: f64, v_ref: f64, f_ref_mhz: f64) -> Result<Self> {
        if !(p_ref_mw > 0.0 && v_ref > 0.0 && f_ref_mhz > 0.0) {
            return Err(Error::InvalidConfig(
                "power model reference values must be positive".into(),
            ));
        }
        Ok(Self {
            p_ref_mw,
            v_ref,
            f_ref_mhz,
            static_mw: 0.0,
        })
    }

    /// Reference accelerator: 119 mW at 1.0 V and 100 MHz.
    pub fn reference() -> Self {
        Self::new(119.0, 1.0, 100.0).unwrap()
    }

    pub fn with_static_floor(mut self, static_mw: f64) -> Self {
        self.static_mw = static_mw;
        self
    }
}

/// Estimated power draw in milliwatts at voltage `v` and clock `f_mhz`.
pub fn power(v: f64, f_mhz: f64, model: &PowerModel) -> f64 {
    let scale = (f_mhz / model.f_ref_mhz) * (v / model.v_ref).powi(2);
    model.static_mw + (model.p_ref_mw - model.static_mw) * scale
}
