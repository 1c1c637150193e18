//! Matrix-operation backends.
//!
//! The detector routes every matrix multiply, add and subtract through a
//! [`MatrixBackend`]. The trusted backend mirrors the software side of a
//! split deployment and never fails; the accelerator emulator (see
//! [`crate::accel`]) mirrors the hardware side and may corrupt results.
//! Wrapper backends provide operation counting and deterministic
//! single-fault injection for experiments and verification.

use crate::error::Result;
use crate::linalg::{self, RealMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Mul,
    Add,
    Sub,
}

pub trait MatrixBackend {
    fn matmul(&mut self, a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix>;
    fn add(&mut self, a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix>;
    fn sub(&mut self, a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix>;
}

/// Exact software path: plain IEEE double arithmetic, no faults ever.
#[derive(Debug, Default, Clone)]
pub struct TrustedBackend;

impl MatrixBackend for TrustedBackend {
    fn matmul(&mut self, a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
        linalg::trusted_matmul(a, b)
    }

    fn add(&mut self, a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
        linalg::trusted_add(a, b)
    }

    fn sub(&mut self, a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
        linalg::trusted_sub(a, b)
    }
}

/// Shape and kind of one backend call, in call order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpRecord {
    pub kind: OpKind,
    pub out_rows: usize,
    pub out_cols: usize,
    pub inner: usize,
}

impl OpRecord {
    /// FLOPs under the usual dense convention: 2mkn for a multiply
    /// (multiply + add per inner step), mn for an elementwise op.
    pub fn flops(&self) -> u64 {
        match self.kind {
            OpKind::Mul => 2 * (self.out_rows * self.out_cols * self.inner) as u64,
            OpKind::Add | OpKind::Sub => (self.out_rows * self.out_cols) as u64,
        }
    }
}

/// Wraps another backend and records every call's kind and shape.
pub struct CountingBackend<B> {
    inner: B,
    log: Vec<OpRecord>,
}

impl<B: MatrixBackend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            log: Vec::new(),
        }
    }

    pub fn log(&self) -> &[OpRecord] {
        &self.log
    }

    pub fn total_flops(&self) -> u64 {
        self.log.iter().map(OpRecord::flops).sum()
    }

    fn record(&mut self, kind: OpKind, a: &RealMatrix, b: &RealMatrix) {
        let inner = match kind {
            OpKind::Mul => a.cols(),
            _ => 0,
        };
        let out_cols = match kind {
            OpKind::Mul => b.cols(),
            _ => a.cols(),
        };
        self.log.push(OpRecord {
            kind,
            out_rows: a.rows(),
            out_cols,
            inner,
        });
    }
}

impl<B: MatrixBackend> MatrixBackend for CountingBackend<B> {
    fn matmul(&mut self, a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
        self.record(OpKind::Mul, a, b);
        self.inner.matmul(a, b)
    }

    fn add(&mut self, a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
        self.record(OpKind::Add, a, b);
        self.inner.add(a, b)
    }

    fn sub(&mut self, a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
        self.record(OpKind::Sub, a, b);
        self.inner.sub(a, b)
    }
}

/// Adds a chosen delta to one output element of one backend call.
///
/// Calls are numbered from zero in execution order; out-of-range targets
/// are silently skipped, so exhaustive injection sweeps can enumerate a
/// recorded op log without special cases.
pub struct SingleFaultBackend<B> {
    inner: B,
    target_op: usize,
    row: usize,
    col: usize,
    delta: f64,
    next_op: usize,
    pub injected: bool,
}

impl<B: MatrixBackend> SingleFaultBackend<B> {
    pub fn new(inner: B, target_op: usize, row: usize, col: usize, delta: f64) -> Self {
        Self {
            inner,
            target_op,
            row,
            col,
            delta,
            next_op: 0,
            injected: false,
        }
    }

    fn apply(&mut self, mut out: RealMatrix) -> RealMatrix {
        if self.next_op == self.target_op && self.row < out.rows() && self.col < out.cols() {
            out.set(self.row, self.col, out.get(self.row, self.col) + self.delta);
            self.injected = true;
        }
        self.next_op += 1;
        out
    }
}

impl<B: MatrixBackend> MatrixBackend for SingleFaultBackend<B> {
    fn matmul(&mut self, a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
        let out = self.inner.matmul(a, b)?;
        Ok(self.apply(out))
    }

    fn add(&mut self, a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
        let out = self.inner.add(a, b)?;
        Ok(self.apply(out))
    }

    fn sub(&mut self, a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
        let out = self.inner.sub(a, b)?;
        Ok(self.apply(out))
    }
}
