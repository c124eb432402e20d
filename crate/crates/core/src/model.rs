//! Closed-form model of a data-centric task farm.
//!
//! Everything here is a pure function of its arguments. The simulator uses the same
//! bandwidth and copy-time functions, and the workload-level formulas serve as the
//! analytical oracle that simulation results are checked against.
//!
//! Bandwidths are `f64` bits/second; `f64::INFINITY` stands for an unbounded link.
//! Durations are integer microseconds and sizes integer bits.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::types::{Bits, Micros, ObjectId, StoreId, TaskId, MICROS_PER_SEC};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("no-path: zero or invalid bandwidth between source and destination")]
    NoPath,
    #[error("invalid data object {0}: {1}")]
    InvalidObject(ObjectId, &'static str),
    #[error("invalid workload summary: {0}")]
    InvalidSummary(&'static str),
}

/// A data object with its size and the stores currently holding a copy.
#[derive(Clone, Debug, PartialEq)]
pub struct DataObject {
    pub id: ObjectId,
    pub size_bits: Bits,
    locations: BTreeSet<StoreId>,
}

impl DataObject {
    /// Creates an object that lives on the given persistent store.
    pub fn new(id: ObjectId, size_bits: Bits, home: u32) -> Result<Self, ModelError> {
        if size_bits == 0 {
            return Err(ModelError::InvalidObject(id, "size must be positive"));
        }
        Ok(Self { id, size_bits, locations: BTreeSet::from([StoreId::Persistent(home)]) })
    }

    pub fn locations(&self) -> &BTreeSet<StoreId> {
        &self.locations
    }

    pub fn add_location(&mut self, store: StoreId) {
        self.locations.insert(store);
    }

    /// Drops a location. Removing the last persistent copy is refused.
    pub fn remove_location(&mut self, store: StoreId) -> Result<(), ModelError> {
        if store.is_persistent() && self.locations.iter().filter(|s| s.is_persistent()).count() == 1 {
            return Err(ModelError::InvalidObject(self.id, "last persistent copy cannot be removed"));
        }
        self.locations.remove(&store);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PersistentStoreSpec {
    pub id: u32,
    pub capacity_bits: Bits,
    pub ideal_bandwidth_bps: f64,
    pub current_load: u32,
}

/// Provisioning and execution state of a transient resource.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransientState {
    Free,
    Busy,
    Pending,
    Allocating,
    Released,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransientStoreSpec {
    pub id: u32,
    pub capacity_bits: Bits,
    pub ideal_bandwidth_bps: f64,
    /// Multiplier on task compute time (1.0 = reference speed).
    pub compute_speed: f64,
    pub current_load: u32,
    pub state: TransientState,
}

/// Violations of the model's bandwidth assumptions. These are reported, not rejected.
#[derive(Clone, Debug, PartialEq)]
pub enum BandwidthWarning {
    /// A transient store is at least as fast as the persistent store.
    TransientNotSlower { transient: u32, transient_bps: f64, persistent_bps: f64 },
    /// The transient stores together cannot match the persistent stores.
    AggregateBelowPersistent { transient_sum_bps: f64, persistent_sum_bps: f64 },
}

/// Checks `ν(τ) < ν(π)` for every pair and `Σν(τ) ≥ Σν(π)` for the whole system.
/// Unbounded links on both sides are treated as compatible.
pub fn check_bandwidth_assumptions(
    persistent: &[PersistentStoreSpec],
    transient: &[TransientStoreSpec],
) -> Vec<BandwidthWarning> {
    let mut warnings = Vec::new();
    let fastest_persistent = persistent.iter().map(|p| p.ideal_bandwidth_bps).fold(0.0, f64::max);
    for t in transient {
        let both_unbounded = t.ideal_bandwidth_bps.is_infinite() && fastest_persistent.is_infinite();
        if !both_unbounded && t.ideal_bandwidth_bps >= fastest_persistent {
            warnings.push(BandwidthWarning::TransientNotSlower {
                transient: t.id,
                transient_bps: t.ideal_bandwidth_bps,
                persistent_bps: fastest_persistent,
            });
        }
    }
    let transient_sum: f64 = transient.iter().map(|t| t.ideal_bandwidth_bps).sum();
    let persistent_sum: f64 = persistent.iter().map(|p| p.ideal_bandwidth_bps).sum();
    if !transient.is_empty() && transient_sum < persistent_sum {
        warnings.push(BandwidthWarning::AggregateBelowPersistent {
            transient_sum_bps: transient_sum,
            persistent_sum_bps: persistent_sum,
        });
    }
    for w in &warnings {
        log::warn!("bandwidth assumption violated: {w:?}");
    }
    warnings
}

/// One task of the incoming stream.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub id: TaskId,
    pub required_objects: Vec<ObjectId>,
    pub compute_time_us: Micros,
    pub dispatch_overhead_us: Micros,
    pub arrival_time_us: Micros,
}

/// Workload-level aggregates feeding the efficiency formulas.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadSummary {
    pub task_count: u64,
    /// Average compute time (B).
    pub avg_exec_time_us: f64,
    /// Average time including dispatch and copy overheads (Y).
    pub avg_exec_with_overhead_us: f64,
    /// Constant-rate approximation of the arrival rate (A).
    pub arrival_rate_per_s: f64,
    pub executor_count: u32,
    pub working_set_bits: Bits,
}

impl WorkloadSummary {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.executor_count == 0 {
            return Err(ModelError::InvalidSummary("executor_count must be at least 1"));
        }
        if !(self.arrival_rate_per_s > 0.0) {
            return Err(ModelError::InvalidSummary("arrival rate must be positive"));
        }
        if self.avg_exec_time_us < 0.0 || self.avg_exec_with_overhead_us < self.avg_exec_time_us {
            return Err(ModelError::InvalidSummary("require Y >= B >= 0"));
        }
        Ok(())
    }

    /// Evaluates every closed-form metric for this summary.
    pub fn analyze(&self) -> Result<ModelReport, ModelError> {
        self.validate()?;
        let compute = self.avg_exec_time_us;
        let with_overhead = self.avg_exec_with_overhead_us;
        let executors = self.executor_count;
        let rate = self.arrival_rate_per_s;
        let eff = if with_overhead > 0.0 && compute > 0.0 { efficiency(compute, with_overhead, executors, rate) } else { 1.0 };
        Ok(ModelReport {
            intensity: computational_intensity(compute, rate),
            v_us: workload_execution_time(compute, executors, rate, self.task_count),
            w_us: workload_execution_time(with_overhead, executors, rate, self.task_count),
            efficiency: eff,
            speedup: speedup(eff, executors),
        })
    }
}

/// Closed-form results for one workload summary.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelReport {
    /// I = B·A.
    pub intensity: f64,
    /// Workload execution time without overheads (V).
    pub v_us: Micros,
    /// Workload execution time with overheads (W).
    pub w_us: Micros,
    pub efficiency: f64,
    pub speedup: f64,
}

/// Bandwidth available on a link with `load_count` concurrent transfers.
///
/// Fair share: the full ideal bandwidth when idle, `ideal / load` otherwise.
pub fn available_bandwidth(ideal_bps: f64, load_count: u32) -> f64 {
    ideal_bps / f64::from(load_count.max(1))
}

/// Time to move an object between two endpoints, rounded up to the next microsecond.
pub fn copy_time(object: &DataObject, src_avail_bps: f64, dst_avail_bps: f64) -> Result<Micros, ModelError> {
    copy_time_bits(object.size_bits, src_avail_bps, dst_avail_bps)
}

pub fn copy_time_bits(size_bits: Bits, src_avail_bps: f64, dst_avail_bps: f64) -> Result<Micros, ModelError> {
    let bw = src_avail_bps.min(dst_avail_bps);
    if !(bw > 0.0) {
        return Err(ModelError::NoPath);
    }
    if bw.is_infinite() {
        return Ok(0);
    }
    Ok(ceil_micros(size_bits as f64 * MICROS_PER_SEC as f64 / bw))
}

/// Rounds a non-negative microsecond quantity up, absorbing floating-point noise just
/// above an integer.
pub(crate) fn ceil_micros(us: f64) -> Micros {
    let nearest = us.round();
    if (us - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as Micros
    } else {
        us.ceil() as Micros
    }
}

/// Per-task cost: dispatch overhead plus compute, plus the copy when the data is not cached.
pub fn cost_per_task(task: &TaskSpec, cached: bool, copy_us: Micros) -> Micros {
    let base = task.dispatch_overhead_us + task.compute_time_us;
    if cached {
        base
    } else {
        base + copy_us
    }
}

/// Average compute time (microseconds) times arrival rate (tasks/second).
pub fn computational_intensity(compute_us: f64, rate_per_s: f64) -> f64 {
    compute_us / MICROS_PER_SEC as f64 * rate_per_s
}

/// `max(per_task/executors, 1/rate) · tasks`. Pass the overhead-inclusive per-task time to
/// get the time with overheads.
pub fn workload_execution_time(per_task_us: f64, executor_count: u32, rate_per_s: f64, task_count: u64) -> Micros {
    let per_task = (per_task_us / f64::from(executor_count)).max(MICROS_PER_SEC as f64 / rate_per_s);
    (per_task * task_count as f64).round() as Micros
}

/// Execution time without overheads over time with them, in its piecewise form, clamped to 1.
pub fn efficiency(compute_us: f64, with_overhead_us: f64, executor_count: u32, rate_per_s: f64) -> f64 {
    let executors = f64::from(executor_count);
    let inter_arrival_us = MICROS_PER_SEC as f64 / rate_per_s;
    if with_overhead_us / executors <= inter_arrival_us {
        return 1.0;
    }
    let by_overhead = compute_us / with_overhead_us;
    let by_arrivals = executors * inter_arrival_us / with_overhead_us;
    by_overhead.max(by_arrivals).min(1.0)
}

pub fn speedup(efficiency: f64, executor_count: u32) -> f64 {
    efficiency * f64::from(executor_count)
}

/// True when the transient stores together can hold the whole working set.
pub fn check_working_set_claim(aggregate_transient_capacity_bits: Bits, working_set_bits: Bits) -> bool {
    aggregate_transient_capacity_bits >= working_set_bits
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const GB_BITS: Bits = 8_000_000_000;

    fn object(bits: Bits) -> DataObject {
        DataObject::new(ObjectId(0), bits, 0).unwrap()
    }

    fn task(o: Micros, mu: Micros) -> TaskSpec {
        TaskSpec {
            id: TaskId(0),
            required_objects: vec![ObjectId(0)],
            compute_time_us: mu,
            dispatch_overhead_us: o,
            arrival_time_us: 0,
        }
    }

    #[test]
    fn available_bandwidth_examples() {
        assert_eq!(available_bandwidth(100e6, 0), 100e6);
        assert_eq!(available_bandwidth(100e6, 1), 100e6);
        assert_eq!(available_bandwidth(100e6, 2), 50e6);
        assert_eq!(available_bandwidth(100e6, 4), 25e6);
    }

    #[test]
    fn copy_time_examples() {
        assert_eq!(copy_time(&object(80_000_000), 80e6, 160e6), Ok(1_000_000));
        assert_eq!(copy_time(&object(80_000_000), 4.4e9, 1e12), Ok(18_182));
        assert_eq!(copy_time(&object(1), 1.0, 1.0), Ok(1_000_000));
        assert_eq!(copy_time(&object(1), 0.0, 1.0), Err(ModelError::NoPath));
        assert_eq!(copy_time(&object(1), f64::INFINITY, f64::INFINITY), Ok(0));
    }

    #[test]
    fn zero_sized_object_is_rejected() {
        assert!(DataObject::new(ObjectId(3), 0, 0).is_err());
    }

    #[test]
    fn persistent_copy_is_never_dropped() {
        let mut obj = object(8);
        obj.add_location(StoreId::Transient(crate::types::ExecutorId(1)));
        assert!(obj.remove_location(StoreId::Persistent(0)).is_err());
        obj.remove_location(StoreId::Transient(crate::types::ExecutorId(1))).unwrap();
        assert_eq!(obj.locations().len(), 1);
    }

    #[test]
    fn cost_per_task_examples() {
        assert_eq!(cost_per_task(&task(2_000, 10_000), true, 0), 12_000);
        assert_eq!(cost_per_task(&task(2_000, 10_000), false, 18_182), 30_182);
        assert_eq!(cost_per_task(&task(0, 0), true, 0), 0);
    }

    #[test]
    fn intensity_examples() {
        assert_relative_eq!(computational_intensity(1e6, 1.0), 1.0);
        assert_relative_eq!(computational_intensity(10_000.0, 1000.0), 10.0);
        assert_eq!(computational_intensity(0.0, 55.0), 0.0);
    }

    #[test]
    fn workload_execution_time_examples() {
        assert_eq!(workload_execution_time(10_000.0, 1, 1000.0, 250_000), 2_500_000_000);
        assert_eq!(workload_execution_time(10_000.0, 128, 1000.0, 250_000), 250_000_000);
    }

    #[test]
    fn efficiency_examples() {
        assert_eq!(efficiency(1e6, 1e6, 64, 1.0), 1.0);
        assert_relative_eq!(efficiency(1e6, 2e6, 1, 1000.0), 0.5);
        assert_eq!(efficiency(1e6, 2e6, 1000, 1.0), 1.0);
    }

    #[test]
    fn speedup_examples() {
        assert_eq!(speedup(0.5, 64), 32.0);
        assert_eq!(speedup(1.0, 64), 64.0);
        assert_relative_eq!(speedup(0.28, 64), 17.92, epsilon = 1e-9);
    }

    #[test]
    fn working_set_claim_examples() {
        assert!(check_working_set_claim(128 * GB_BITS, 100 * GB_BITS));
        assert!(!check_working_set_claim(64 * GB_BITS, 100 * GB_BITS));
        assert!(check_working_set_claim(0, 0));
    }

    #[test]
    fn bandwidth_assumption_warnings() {
        let p = PersistentStoreSpec { id: 0, capacity_bits: 0, ideal_bandwidth_bps: 4.4e9, current_load: 0 };
        let node = |id, bps| TransientStoreSpec {
            id,
            capacity_bits: 0,
            ideal_bandwidth_bps: bps,
            compute_speed: 1.0,
            current_load: 0,
            state: TransientState::Free,
        };
        assert!(check_bandwidth_assumptions(&[p.clone()], &[node(0, 1.6e9), node(1, 1.6e9), node(2, 1.6e9)])
            .is_empty());
        let w = check_bandwidth_assumptions(&[p.clone()], &[node(0, 1.6e9)]);
        assert!(matches!(w[..], [BandwidthWarning::AggregateBelowPersistent { .. }]));
        let w = check_bandwidth_assumptions(&[p], &[node(0, 5e9)]);
        assert!(matches!(w[..], [BandwidthWarning::TransientNotSlower { .. }]));
    }

    #[test]
    fn analyze_zero_overhead_is_fully_efficient() {
        let s = WorkloadSummary {
            task_count: 1000,
            avg_exec_time_us: 10_000.0,
            avg_exec_with_overhead_us: 10_000.0,
            arrival_rate_per_s: 100.0,
            executor_count: 8,
            working_set_bits: 0,
        };
        let r = s.analyze().unwrap();
        assert_eq!(r.efficiency, 1.0);
        assert_eq!(r.v_us, r.w_us);
        assert_eq!(r.speedup, 8.0);
    }

    #[test]
    fn efficiency_is_continuous_at_branch_boundary() {
        // |T| = 10, A = 100/s, Y = 100 ms puts Y/|T| exactly at 1/A.
        let service = 100_000.0;
        assert_eq!(efficiency(50_000.0, service, 10, 100.0), 1.0);
        let just_over = efficiency(50_000.0, service * (1.0 + 1e-9), 10, 100.0);
        assert!((just_over - 1.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn bandwidth_nonincreasing_in_load(ideal in 1.0f64..1e12, load in 0u32..10_000) {
            let here = available_bandwidth(ideal, load);
            prop_assert!(available_bandwidth(ideal, load + 1) <= here);
            prop_assert!(here <= ideal);
        }

        #[test]
        fn copy_time_monotone(size in 1u64..1_000_000_000, extra in 1u64..1_000_000,
                              src in 1.0f64..1e10, dst in 1.0f64..1e10, boost in 1.0f64..4.0) {
            let base = copy_time_bits(size, src, dst).unwrap();
            prop_assert!(copy_time_bits(size + extra, src, dst).unwrap() >= base);
            prop_assert!(copy_time_bits(size, src * boost, dst).unwrap() <= base);
            prop_assert!(copy_time_bits(size, src, dst * boost).unwrap() <= base);
        }

        #[test]
        fn efficiency_never_exceeds_one(compute in 1.0f64..1e7, extra in 0.0f64..1e7,
                                        executors in 1u32..2048, rate in 0.01f64..1e4) {
            let eff = efficiency(compute, compute + extra, executors, rate);
            prop_assert!(eff > 0.0 && eff <= 1.0);
        }

        #[test]
        fn zero_overhead_is_efficient_when_arrival_bound(compute in 1.0f64..1e6, executors in 1u32..512) {
            // A rate low enough that compute/executors <= 1/rate.
            let rate = 1e6 * f64::from(executors) / compute * 0.5;
            prop_assert_eq!(efficiency(compute, compute, executors, rate), 1.0);
        }

        /// Compute time exceeding dispatch plus copy time for every task keeps E above one half.
        #[test]
        fn compute_dominated_workloads_exceed_half_efficiency(
            tasks in proptest::collection::vec((1u64..50_000, 0u64..50_000, 1u64..200_000), 1..64),
            executors in 1u32..256, rate in 0.1f64..5000.0,
        ) {
            let mut compute = 0.0;
            let mut total = 0.0;
            for &(dispatch, copy, slack) in &tasks {
                let run = dispatch + copy + slack;
                compute += run as f64;
                total += (run + dispatch + copy) as f64;
            }
            let n = tasks.len() as f64;
            let eff = efficiency(compute / n, total / n, executors, rate);
            prop_assert!(eff > 0.5, "efficiency {}", eff);
        }
    }
}
