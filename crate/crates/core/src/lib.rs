//! Checksum-protected massive-MIMO detection on an emulated fixed-size
//! matrix accelerator, with voltage-dependent fault injection.
//!
//! The crate provides:
//!
//! - [`linalg`]: dense real/complex primitives, the complex-to-real
//!   lifting, and the trusted direct-solve reference detector;
//! - [`abft`]: checksum encoding and verification for matrices/vectors;
//! - [`backend`]: the matrix-operation backend abstraction (trusted
//!   software path, counting and fault-injection wrappers);
//! - [`detector`]: the protected Newton-iteration detection pipeline and
//!   its unprotected baseline;
//! - [`accel`]: the tiled fixed-size accelerator emulator;
//! - [`faults`]: voltage-indexed bit-flip fault model and power model;
//! - [`linksim`]: Monte-Carlo uplink simulation (modulation, channel,
//!   noise, BER and detection statistics);
//! - [`costmodel`]: closed-form FLOP and tile-operation cost model.

pub mod abft;
pub mod accel;
pub mod backend;
pub mod costmodel;
pub mod detector;
pub mod error;
pub mod faults;
pub mod linalg;
pub mod linksim;

pub use error::{Error, Result};
