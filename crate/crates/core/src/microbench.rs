//! Decision-engine throughput benchmark.
//!
//! Replays a dispatch-only workload against the scheduler with no simulated I/O: every
//! executor has one slot, finished tasks leave their object cached on the executor that
//! ran them, and the oldest running task completes whenever all executors are busy or
//! the policy declines to dispatch.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scheduler::{DispatchPolicy, SchedulerConfig, SchedulerState, WindowSize};
use crate::types::{ExecutorId, ObjectId, TaskId};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchSetup {
    pub executors: u32,
    pub window: usize,
    pub files: u32,
    pub tasks: u32,
    pub seed: u64,
}

impl Default for BenchSetup {
    /// 32 executors, a window of 3200, 250K tasks over 10K objects.
    fn default() -> Self {
        Self { executors: 32, window: 3200, files: 10_000, tasks: 250_000, seed: 1 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub policy: DispatchPolicy,
    pub decisions: u64,
    pub elapsed: Duration,
    pub local_hits: u64,
}

impl BenchResult {
    pub fn decisions_per_sec(&self) -> f64 {
        self.decisions as f64 / self.elapsed.as_secs_f64().max(1e-9)
    }

    pub fn hit_rate(&self) -> f64 {
        self.local_hits as f64 / self.decisions.max(1) as f64
    }
}

/// Runs every queued task through `policy` and times the decisions.
pub fn run(policy: DispatchPolicy, setup: &BenchSetup) -> BenchResult {
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let files: Vec<ObjectId> = (0..setup.tasks).map(|_| ObjectId(rng.random_range(0..setup.files))).collect();
    let mut sched = SchedulerState::new(SchedulerConfig {
        policy,
        window: WindowSize::Fixed(setup.window),
        batch_size: 1,
        ..SchedulerConfig::default()
    })
    .expect("valid benchmark config");
    for e in 0..setup.executors {
        sched.register_executor(ExecutorId(e), 1);
    }
    for (i, f) in files.iter().enumerate() {
        sched.enqueue(TaskId(i as u32), vec![*f]).expect("fresh ids");
    }
    let track_index = policy != DispatchPolicy::FirstAvailable;
    let mut running: VecDeque<(ExecutorId, ObjectId)> = VecDeque::new();
    let mut decisions = 0u64;
    let mut local_hits = 0u64;
    let start = Instant::now();
    let complete_oldest = |sched: &mut SchedulerState, running: &mut VecDeque<(ExecutorId, ObjectId)>| -> Option<ExecutorId> {
        let (e, f) = running.pop_front()?;
        sched.task_finished(e).expect("registered");
        if track_index {
            sched.on_index_update(e, &[f], &[]);
        }
        Some(e)
    };
    while sched.queue_len() > 0 {
        let executor = match sched.notify_candidate(0) {
            Some(n) => n.executor,
            None => {
                // Nothing dispatchable now: let the oldest task finish and have its
                // executor ask for work.
                let e = complete_oldest(&mut sched, &mut running).expect("a declined dispatch implies a busy executor");
                if !sched.reserve_slot(e, 0) {
                    continue;
                }
                e
            }
        };
        let picked = sched.select_tasks_for_pickup(executor).expect("registered");
        for a in picked {
            decisions += 1;
            local_hits += a.local_hits as u64;
            running.push_back((executor, files[a.task.0 as usize]));
        }
        if !sched.has_free_executor() {
            complete_oldest(&mut sched, &mut running);
        }
    }
    BenchResult { policy, decisions, elapsed: start.elapsed(), local_hits }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_task_is_dispatched_once() {
        let setup = BenchSetup { executors: 4, window: 40, files: 50, tasks: 2000, seed: 3 };
        for p in DispatchPolicy::ALL {
            let r = run(p, &setup);
            assert_eq!(r.decisions, 2000, "{p}");
        }
    }

    #[test]
    fn data_aware_policies_find_hits() {
        let setup = BenchSetup { executors: 4, window: 40, files: 50, tasks: 2000, seed: 3 };
        assert_eq!(run(DispatchPolicy::FirstAvailable, &setup).local_hits, 0);
        assert!(run(DispatchPolicy::MaxCacheHit, &setup).hit_rate() > 0.8);
    }
}
