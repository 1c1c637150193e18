//! Emulator of a fixed-size matrix accelerator.
//!
//! The device accepts operand tiles of a fixed edge length (16 by default)
//! and supports multiply, add and subtract. Larger operands are split into
//! a tile grid; smaller ones are zero-padded up to a full tile and the
//! result is cropped. A multiply walks the inner tile index in ascending
//! order and accumulates into the output tile, so with faults disabled the
//! result is bit-identical to the trusted reference, which accumulates in
//! the same order.
//!
//! Faults model undervolted logic: after each tile operation every element
//! of the output register passes through the fault model exactly once.
//! Corruption is therefore confined to that tile's footprint.
//!
//! The emulator is stateful (operation counters, fault RNG) and must not
//! be shared across concurrent detections; give each worker its own
//! instance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backend::MatrixBackend;
use crate::error::{Error, Result};
use crate::faults::{self, FaultModel};
use crate::linalg::RealMatrix;

/// Tile edge length of the emulated device.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileSpec {
    pub edge: usize,
}

impl TileSpec {
    pub fn new(edge: usize) -> Self {
        assert!(edge >= 1, "tile edge must be at least 1");
        Self { edge }
    }
}

impl Default for TileSpec {
    fn default() -> Self {
        Self { edge: 16 }
    }
}

/// Tile grid and padding for one operation. For an `m x k` by `k x n`
/// product the grid is `grid_rows x grid_cols x grid_inner`; the padding
/// fields refer to the `m x n` output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TilePlan {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub grid_inner: usize,
    pub pad_rows: usize,
    pub pad_cols: usize,
}

/// Tile grid for an `m x k` times `k x n` product (use `k = 1` for
/// elementwise operations on `m x n` operands).
pub fn plan_tiles(m: usize, n: usize, k: usize, spec: TileSpec) -> TilePlan {
    let t = spec.edge;
    let grid_rows = m.div_ceil(t);
    let grid_cols = n.div_ceil(t);
    let grid_inner = k.div_ceil(t);
    TilePlan {
        grid_rows,
        grid_cols,
        grid_inner,
        pad_rows: grid_rows * t - m,
        pad_cols: grid_cols * t - n,
    }
}

/// Cumulative tile-operation counts per opcode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounters {
    pub mul: u64,
    pub add: u64,
    pub sub: u64,
}

impl OpCounters {
    pub fn total(&self) -> u64 {
        self.mul + self.add + self.sub
    }
}

/// The emulated accelerator. Identical seed and call sequence produce
/// identical outputs, including identical corruptions.
#[derive(Debug, Clone)]
pub struct AccelEmulator {
    spec: TileSpec,
    fault_model: FaultModel,
    counters: OpCounters,
    rng: ChaCha8Rng,
    faults_injected: u64,
}

impl AccelEmulator {
    pub fn new(spec: TileSpec, fault_model: FaultModel) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(fault_model.seed);
        Self {
            spec,
            fault_model,
            counters: OpCounters::default(),
            rng,
            faults_injected: 0,
        }
    }

    /// Fault-free emulator, still counting tile operations.
    pub fn exact(spec: TileSpec) -> Self {
        Self::new(spec, FaultModel::disabled(0))
    }

    pub fn spec(&self) -> TileSpec {
        self.spec
    }

    /// Read-only snapshot of the cumulative tile-op counts.
    pub fn snapshot_counters(&self) -> OpCounters {
        self.counters
    }

    /// Number of elements actually corrupted so far.
    pub fn faults_injected(&self) -> u64 {
        self.faults_injected
    }

    /// Fault hook at the tile output register.
    fn corrupt(&mut self, v: f64) -> f64 {
        let out = faults::inject(v, &self.fault_model, &mut self.rng);
        if out.to_bits() != v.to_bits() {
            self.faults_injected += 1;
        }
        out
    }

    /// Tiled multiply with zero padding. Each tile op accumulates one inner
    /// tile into the output tile and then passes the whole output register
    /// through the fault hook.
    pub fn matmul(&mut self, a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
        if a.cols() != b.rows() {
            return Err(Error::DimensionMismatch {
                op: "accel matmul",
                lhs_rows: a.rows(),
                lhs_cols: a.cols(),
                rhs_rows: b.rows(),
                rhs_cols: b.cols(),
            });
        }
        let t = self.spec.edge;
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let plan = plan_tiles(m, n, k, self.spec);
        let mut out = RealMatrix::zeros(plan.grid_rows * t, plan.grid_cols * t);
        let read = |mat: &RealMatrix, r: usize, c: usize| -> f64 {
            if r < mat.rows() && c < mat.cols() {
                mat.get(r, c)
            } else {
                0.0
            }
        };
        for tr in 0..plan.grid_rows {
            for tc in 0..plan.grid_cols {
                for tq in 0..plan.grid_inner {
                    for i in 0..t {
                        let gr = tr * t + i;
                        for j in 0..t {
                            let gc = tc * t + j;
                            let mut acc = out.get(gr, gc);
                            for s in 0..t {
                                let gk = tq * t + s;
                                acc += read(a, gr, gk) * read(b, gk, gc);
                            }
                            let v = self.corrupt(acc);
                            out.set(gr, gc, v);
                        }
                    }
                    self.counters.mul += 1;
                }
            }
        }
        Ok(out.submatrix(m, n))
    }

    pub fn add(&mut self, a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
        self.elementwise(a, b, false)
    }

    pub fn sub(&mut self, a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
        self.elementwise(a, b, true)
    }

    fn elementwise(&mut self, a: &RealMatrix, b: &RealMatrix, subtract: bool) -> Result<RealMatrix> {
        if a.rows() != b.rows() || a.cols() != b.cols() {
            return Err(Error::DimensionMismatch {
                op: if subtract { "accel sub" } else { "accel add" },
                lhs_rows: a.rows(),
                lhs_cols: a.cols(),
                rhs_rows: b.rows(),
                rhs_cols: b.cols(),
            });
        }
        let t = self.spec.edge;
        let (m, n) = (a.rows(), a.cols());
        let plan = plan_tiles(m, n, 1, self.spec);
        let mut out = RealMatrix::zeros(plan.grid_rows * t, plan.grid_cols * t);
        for tr in 0..plan.grid_rows {
            for tc in 0..plan.grid_cols {
                for i in 0..t {
                    let gr = tr * t + i;
                    for j in 0..t {
                        let gc = tc * t + j;
                        let v = if gr < m && gc < n {
                            if subtract {
                                a.get(gr, gc) - b.get(gr, gc)
                            } else {
                                a.get(gr, gc) + b.get(gr, gc)
                            }
                        } else {
                            0.0
                        };
                        let v = self.corrupt(v);
                        out.set(gr, gc, v);
                    }
                }
                if subtract {
                    self.counters.sub += 1;
                } else {
                    self.counters.add += 1;
                }
            }
        }
        Ok(out.submatrix(m, n))
    }
}

impl MatrixBackend for AccelEmulator {
    fn matmul(&mut self, a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
        AccelEmulator::matmul(self, a, b)
    }

    fn add(&mut self, a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
        AccelEmulator::add(self, a, b)
    }

    fn sub(&mut self, a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
        AccelEmulator::sub(self, a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faults::BitDistribution;
    use crate::linalg::{trusted_add, trusted_matmul, trusted_sub};
    use proptest::prelude::*;
    use rand::Rng;

    fn pseudo_matrix(rows: usize, cols: usize, salt: u64) -> RealMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(salt);
        RealMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn plan_exact_fit() {
        let plan = plan_tiles(16, 16, 16, TileSpec::default());
        assert_eq!(
            plan,
            TilePlan {
                grid_rows: 1,
                grid_cols: 1,
                grid_inner: 1,
                pad_rows: 0,
                pad_cols: 0
            }
        );
    }

    #[test]
    fn plan_one_past_the_boundary() {
        let plan = plan_tiles(17, 17, 17, TileSpec::default());
        assert_eq!(
            plan,
            TilePlan {
                grid_rows: 2,
                grid_cols: 2,
                grid_inner: 2,
                pad_rows: 15,
                pad_cols: 15
            }
        );
    }

    #[test]
    fn plan_rectangular() {
        let plan = plan_tiles(32, 8, 16, TileSpec::default());
        assert_eq!(plan.grid_rows, 2);
        assert_eq!(plan.grid_cols, 1);
        assert_eq!(plan.grid_inner, 1);
        assert_eq!(plan.pad_rows, 0);
        assert_eq!(plan.pad_cols, 8);
    }

    #[test]
    fn exact_emulator_matches_trusted_matmul_bitwise_in_single_inner_tile() {
        let a = pseudo_matrix(16, 16, 1);
        let b = pseudo_matrix(16, 16, 2);
        let mut emu = AccelEmulator::exact(TileSpec::default());
        let tiled = emu.matmul(&a, &b).unwrap();
        let reference = trusted_matmul(&a, &b).unwrap();
        assert_eq!(tiled.data(), reference.data());
        assert_eq!(emu.snapshot_counters().mul, 1);
    }

    #[test]
    fn identity_times_matrix_is_unchanged() {
        let b = pseudo_matrix(16, 16, 3);
        let mut emu = AccelEmulator::exact(TileSpec::default());
        let out = emu.matmul(&RealMatrix::identity(16), &b).unwrap();
        assert_eq!(out.data(), b.data());
    }

    #[test]
    fn large_operands_match_trusted_results_and_counters() {
        let a = pseudo_matrix(33, 33, 4);
        let b = pseudo_matrix(33, 33, 5);
        let mut emu = AccelEmulator::exact(TileSpec::default());
        let tiled = emu.matmul(&a, &b).unwrap();
        let reference = trusted_matmul(&a, &b).unwrap();
        let mut worst = 0.0f64;
        for r in 0..33 {
            for c in 0..33 {
                worst = worst.max((tiled.get(r, c) - reference.get(r, c)).abs());
            }
        }
        assert!(worst <= 1e-12, "max deviation {worst}");
        assert_eq!(emu.snapshot_counters().mul, 27);
    }

    #[test]
    fn add_and_sub_match_trusted_and_count_tiles() {
        let a = pseudo_matrix(17, 17, 6);
        let b = pseudo_matrix(17, 17, 7);
        let mut emu = AccelEmulator::exact(TileSpec::default());
        let sum = emu.add(&a, &b).unwrap();
        assert_eq!(sum.data(), trusted_add(&a, &b).unwrap().data());
        assert_eq!(emu.snapshot_counters().add, 4);

        let diff = emu.sub(&a, &a).unwrap();
        assert!(diff.data().iter().all(|&v| v == 0.0));
        assert_eq!(emu.snapshot_counters().sub, 4);
    }

    #[test]
    fn fresh_emulator_has_zero_counters() {
        let emu = AccelEmulator::exact(TileSpec::default());
        assert_eq!(emu.snapshot_counters(), OpCounters::default());
        assert_eq!(emu.faults_injected(), 0);
    }

    #[test]
    fn single_tile_matmul_counts_one_mul() {
        let a = pseudo_matrix(16, 16, 8);
        let mut emu = AccelEmulator::exact(TileSpec::default());
        emu.matmul(&a, &a).unwrap();
        let counters = emu.snapshot_counters();
        assert_eq!((counters.mul, counters.add, counters.sub), (1, 0, 0));
    }

    #[test]
    fn counter_deltas_match_plans_for_every_call() {
        let spec = TileSpec::default();
        let mut emu = AccelEmulator::exact(spec);
        for &(m, k, n) in &[(17usize, 128usize, 16usize), (5, 5, 5), (16, 16, 1), (40, 3, 33)] {
            let a = pseudo_matrix(m, k, m as u64);
            let b = pseudo_matrix(k, n, n as u64);
            let before = emu.snapshot_counters().mul;
            emu.matmul(&a, &b).unwrap();
            let plan = plan_tiles(m, n, k, spec);
            assert_eq!(
                emu.snapshot_counters().mul - before,
                (plan.grid_rows * plan.grid_cols * plan.grid_inner) as u64
            );
        }
    }

    #[test]
    fn same_seed_reproduces_identical_corruptions() {
        let a = pseudo_matrix(20, 20, 9);
        let b = pseudo_matrix(20, 20, 10);
        let model = FaultModel::new(0.05, BitDistribution::uniform(), 99).unwrap();
        let mut first = AccelEmulator::new(TileSpec::default(), model.clone());
        let mut second = AccelEmulator::new(TileSpec::default(), model);
        let out1 = first.matmul(&a, &b).unwrap();
        let out2 = second.matmul(&a, &b).unwrap();
        assert!(first.faults_injected() > 0);
        assert_eq!(first.faults_injected(), second.faults_injected());
        for (x, y) in out1.data().iter().zip(out2.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn faults_stay_inside_their_tile_footprint() {
        // Corrupt heavily, then check that clean tiles are bit-identical to
        // the trusted result. With per-tile injection the only tiles that
        // may deviate are those where the fault counter advanced; here we
        // use a model that corrupts every element of one specific call by
        // running a fresh emulator per tile probability.
        let a = pseudo_matrix(32, 16, 11);
        let b = pseudo_matrix(16, 32, 12);
        let reference = trusted_matmul(&a, &b).unwrap();
        let model = FaultModel::new(0.02, BitDistribution::uniform(), 7).unwrap();
        let mut emu = AccelEmulator::new(TileSpec::default(), model);
        let out = emu.matmul(&a, &b).unwrap();
        assert!(emu.faults_injected() > 0);
        // Every deviating element must differ by a single bit flip of the
        // reference value (single-fault-per-element at grid_inner = 1).
        let mut deviations = 0;
        for r in 0..32 {
            for c in 0..32 {
                let x = out.get(r, c);
                let y = reference.get(r, c);
                if x.to_bits() != y.to_bits() {
                    deviations += 1;
                    assert_eq!(
                        (x.to_bits() ^ y.to_bits()).count_ones(),
                        1,
                        "({r},{c}) differs by more than one bit"
                    );
                }
            }
        }
        assert_eq!(deviations as u64, emu.faults_injected());
    }

    #[test]
    fn forced_single_fault_changes_exactly_one_element() {
        use crate::backend::{MatrixBackend, SingleFaultBackend};
        let a = pseudo_matrix(17, 17, 13);
        let b = pseudo_matrix(17, 17, 14);
        let mut forced =
            SingleFaultBackend::new(AccelEmulator::exact(TileSpec::default()), 0, 3, 12, 5.0);
        let out = forced.add(&a, &b).unwrap();
        let reference = trusted_add(&a, &b).unwrap();
        let mut diffs = Vec::new();
        for r in 0..17 {
            for c in 0..17 {
                if out.get(r, c) != reference.get(r, c) {
                    diffs.push((r, c));
                }
            }
        }
        assert_eq!(diffs, vec![(3, 12)]);
        assert_eq!(out.get(3, 12), reference.get(3, 12) + 5.0);
    }

    #[test]
    fn padding_neutrality_on_boundary_shapes() {
        let spec = TileSpec::default();
        let edges = [1usize, 15, 16, 17, 33, 40];
        for &m in &edges {
            for &k in &edges {
                for &n in &edges {
                    let a = pseudo_matrix(m, k, (m * 41 + k) as u64);
                    let b = pseudo_matrix(k, n, (k * 43 + n) as u64);
                    let mut emu = AccelEmulator::exact(spec);
                    let tiled = emu.matmul(&a, &b).unwrap();
                    let reference = trusted_matmul(&a, &b).unwrap();
                    for r in 0..m {
                        for c in 0..n {
                            let d = (tiled.get(r, c) - reference.get(r, c)).abs();
                            assert!(d <= 1e-12, "({m},{k},{n}) at ({r},{c}): {d}");
                        }
                    }
                    let mut emu2 = AccelEmulator::exact(spec);
                    let sum = emu2.add(&a.submatrix(m, k), &a).unwrap();
                    assert_eq!(sum.data(), trusted_add(&a, &a).unwrap().data());
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn padding_neutrality_random_shapes(
            m in 1usize..40,
            k in 1usize..40,
            n in 1usize..40,
            salt in 0u64..1000,
        ) {
            let a = pseudo_matrix(m, k, salt);
            let b = pseudo_matrix(k, n, salt.wrapping_add(1));
            let mut emu = AccelEmulator::exact(TileSpec::default());
            let tiled = emu.matmul(&a, &b).unwrap();
            let reference = trusted_matmul(&a, &b).unwrap();
            for r in 0..m {
                for c in 0..n {
                    prop_assert!((tiled.get(r, c) - reference.get(r, c)).abs() <= 1e-12);
                }
            }
            let mut emu2 = AccelEmulator::exact(TileSpec::default());
            let diff = emu2.sub(&a, &a).unwrap();
            prop_assert!(diff.data().iter().all(|&v| v == 0.0));
        }
    }
}
