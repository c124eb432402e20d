//! Dynamic resource provisioning.
//!
//! Grows the executor pool when the wait queue outpaces the slots already registered or
//! on their way, with each allocation becoming usable after a sampled latency.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::types::{ExecutorId, Micros};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AllocationPolicy {
    OneAtATime,
    AllAtOnce,
    /// Grows the pool by `factor - 1` times its current size (at least one node).
    Exponential(f64),
    /// Requests just enough nodes to bring the queue back under the threshold.
    Demand,
}

impl AllocationPolicy {
    pub fn name(&self) -> String {
        match self {
            AllocationPolicy::OneAtATime => "one-at-a-time".into(),
            AllocationPolicy::AllAtOnce => "all-at-once".into(),
            AllocationPolicy::Exponential(f) => format!("exponential:{f}"),
            AllocationPolicy::Demand => "demand".into(),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "one-at-a-time" => Some(Self::OneAtATime),
            "all-at-once" => Some(Self::AllAtOnce),
            "demand" => Some(Self::Demand),
            _ => {
                let factor: f64 = s.strip_prefix("exponential:")?.parse().ok()?;
                (factor > 1.0).then_some(Self::Exponential(factor))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProvisionerConfig {
    pub min_nodes: u32,
    pub max_nodes: u32,
    pub policy: AllocationPolicy,
    /// Queued tasks per slot of pool capacity above which the pool grows.
    pub queue_threshold: f64,
    /// Allocation latency range, sampled uniformly per request.
    pub latency_us: (Micros, Micros),
    /// `None` keeps idle nodes forever.
    pub idle_release_us: Option<Micros>,
    /// Static pool: `min_nodes` are registered up front and nothing else happens.
    pub disabled: bool,
    pub slots_per_node: u32,
}

impl Default for ProvisionerConfig {
    fn default() -> Self {
        Self {
            min_nodes: 1,
            max_nodes: 64,
            policy: AllocationPolicy::Demand,
            queue_threshold: 1.0,
            latency_us: (30_000_000, 60_000_000),
            idle_release_us: None,
            disabled: false,
            slots_per_node: 2,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ProvisionerError {
    #[error("invalid provisioner config: {0}")]
    InvalidConfig(&'static str),
}

impl ProvisionerConfig {
    pub fn validate(&self) -> Result<(), ProvisionerError> {
        if self.min_nodes > self.max_nodes {
            return Err(ProvisionerError::InvalidConfig("min_nodes exceeds max_nodes"));
        }
        if self.max_nodes == 0 {
            return Err(ProvisionerError::InvalidConfig("max_nodes must be at least 1"));
        }
        if self.latency_us.0 > self.latency_us.1 {
            return Err(ProvisionerError::InvalidConfig("latency range is reversed"));
        }
        if !(self.queue_threshold >= 0.0) {
            return Err(ProvisionerError::InvalidConfig("queue_threshold must be non-negative"));
        }
        if self.slots_per_node == 0 {
            return Err(ProvisionerError::InvalidConfig("nodes need at least one slot"));
        }
        if let AllocationPolicy::Exponential(f) = self.policy {
            if !(f > 1.0) {
                return Err(ProvisionerError::InvalidConfig("exponential factor must exceed 1"));
            }
        }
        Ok(())
    }
}

/// Number of nodes to request given the current load. Never exceeds the headroom below
/// `max_nodes`.
pub fn evaluate(config: &ProvisionerConfig, queue_length: usize, registered: u32, pending: u32) -> u32 {
    if config.disabled {
        return 0;
    }
    let committed = registered + pending;
    let headroom = config.max_nodes.saturating_sub(committed);
    if headroom == 0 {
        return 0;
    }
    let slots = f64::from(config.slots_per_node);
    let trigger = config.queue_threshold * f64::from(committed) * slots;
    if queue_length as f64 <= trigger {
        return 0;
    }
    let wanted = match config.policy {
        AllocationPolicy::OneAtATime => 1,
        AllocationPolicy::AllAtOnce => headroom,
        AllocationPolicy::Exponential(factor) => {
            ((f64::from(committed) * (factor - 1.0)).ceil() as u32).max(1)
        }
        AllocationPolicy::Demand => {
            let per_node = (config.queue_threshold * slots).max(1.0);
            ((queue_length as f64 - trigger) / per_node).ceil() as u32
        }
    };
    wanted.clamp(1, headroom)
}

/// Pool bookkeeping: which nodes are registered, which allocations are in flight, and
/// since when each idle node has been idle.
#[derive(Clone, Debug)]
pub struct ProvisionerState {
    config: ProvisionerConfig,
    rng: ChaCha8Rng,
    next_id: u32,
    registered: BTreeMap<ExecutorId, Micros>,
    /// (ready time, request order) → node count.
    pending: BTreeMap<(Micros, u64), u32>,
    requests: u64,
    idle_since: BTreeMap<ExecutorId, Micros>,
}

impl ProvisionerState {
    pub fn new(config: ProvisionerConfig, seed: u64) -> Result<Self, ProvisionerError> {
        config.validate()?;
        Ok(Self {
            config,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5052_4f56),
            next_id: 0,
            registered: BTreeMap::new(),
            pending: BTreeMap::new(),
            requests: 0,
            idle_since: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &ProvisionerConfig {
        &self.config
    }

    pub fn registered_count(&self) -> u32 {
        self.registered.len() as u32
    }

    pub fn pending_count(&self) -> u32 {
        self.pending.values().sum()
    }

    pub fn registered(&self) -> impl Iterator<Item = ExecutorId> + '_ {
        self.registered.keys().copied()
    }

    /// Nodes present before the run starts: `min_nodes`, registered at `now`.
    pub fn initial_nodes(&mut self, now: Micros) -> Vec<ExecutorId> {
        (0..self.config.min_nodes).map(|_| self.register(now)).collect()
    }

    fn register(&mut self, now: Micros) -> ExecutorId {
        let id = ExecutorId(self.next_id);
        self.next_id += 1;
        self.registered.insert(id, now);
        self.idle_since.insert(id, now);
        id
    }

    /// Runs the growth rule and books any requested allocation. Returns the ready time of
    /// the new allocation, if one was made.
    pub fn evaluate(&mut self, queue_length: usize, now: Micros) -> Option<(u32, Micros)> {
        let count = evaluate(&self.config, queue_length, self.registered_count(), self.pending_count());
        if count == 0 {
            return None;
        }
        let (lo, hi) = self.config.latency_us;
        let latency = if lo == hi { lo } else { self.rng.random_range(lo..=hi) };
        let ready = now + latency;
        self.pending.insert((ready, self.requests), count);
        self.requests += 1;
        Some((count, ready))
    }

    /// Registers every allocation whose ready time has passed.
    pub fn on_allocation_ready(&mut self, now: Micros) -> Vec<ExecutorId> {
        let mut out = Vec::new();
        while let Some((&key, &count)) = self.pending.first_key_value() {
            if key.0 > now {
                break;
            }
            self.pending.remove(&key);
            for _ in 0..count {
                out.push(self.register(now));
            }
        }
        out
    }

    pub fn next_ready_time(&self) -> Option<Micros> {
        self.pending.keys().next().map(|k| k.0)
    }

    pub fn mark_busy(&mut self, e: ExecutorId) {
        self.idle_since.remove(&e);
    }

    pub fn mark_idle(&mut self, e: ExecutorId, now: Micros) {
        if self.registered.contains_key(&e) {
            self.idle_since.entry(e).or_insert(now);
        }
    }

    /// Deregisters nodes idle for at least the release timeout, oldest idle first, never
    /// going below `min_nodes`.
    pub fn release_idle(&mut self, now: Micros) -> Vec<ExecutorId> {
        let Some(timeout) = self.config.idle_release_us else {
            return Vec::new();
        };
        if self.config.disabled {
            return Vec::new();
        }
        let mut expired: Vec<(Micros, ExecutorId)> = self
            .idle_since
            .iter()
            .filter(|(_, &since)| now.saturating_sub(since) >= timeout)
            .map(|(&e, &since)| (since, e))
            .collect();
        expired.sort();
        let spare = self.registered_count().saturating_sub(self.config.min_nodes) as usize;
        expired.truncate(spare);
        expired
            .into_iter()
            .map(|(_, e)| {
                self.registered.remove(&e);
                self.idle_since.remove(&e);
                e
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(policy: AllocationPolicy) -> ProvisionerConfig {
        ProvisionerConfig { policy, ..Default::default() }
    }

    #[test]
    fn disabled_never_requests() {
        let c = ProvisionerConfig { disabled: true, ..Default::default() };
        assert_eq!(evaluate(&c, 100_000, 1, 0), 0);
    }

    #[test]
    fn growth_policy_examples() {
        assert_eq!(evaluate(&cfg(AllocationPolicy::OneAtATime), 100, 2, 0), 1);
        assert_eq!(evaluate(&cfg(AllocationPolicy::AllAtOnce), 100, 2, 0), 62);
        assert_eq!(evaluate(&cfg(AllocationPolicy::Exponential(2.0)), 100, 2, 0), 2);
        // 100 queued over 4 slots of capacity: 96 excess tasks at 2 per node.
        assert_eq!(evaluate(&cfg(AllocationPolicy::Demand), 100, 2, 0), 48);
    }

    #[test]
    fn no_growth_under_threshold_or_at_max() {
        assert_eq!(evaluate(&cfg(AllocationPolicy::AllAtOnce), 4, 2, 0), 0);
        assert_eq!(evaluate(&cfg(AllocationPolicy::AllAtOnce), 1000, 60, 4), 0);
        assert_eq!(evaluate(&cfg(AllocationPolicy::Demand), 1000, 60, 2), 2);
    }

    #[test]
    fn latency_is_sampled_in_range_and_resolves_in_order() {
        let mut p = ProvisionerState::new(cfg(AllocationPolicy::OneAtATime), 7).unwrap();
        p.initial_nodes(0);
        let (_, first) = p.evaluate(100, 0).unwrap();
        let (_, second) = p.evaluate(100, 1_000_000).unwrap();
        for r in [first, second] {
            assert!(r >= 30_000_000 && r <= 61_000_000);
        }
        assert!(p.on_allocation_ready(first.min(second) - 1).is_empty());
        assert_eq!(p.on_allocation_ready(first.min(second)).len(), 1);
        assert_eq!(p.on_allocation_ready(first.max(second)).len(), 1);
        assert_eq!(p.registered_count(), 3);
    }

    #[test]
    fn zero_latency_registers_same_tick() {
        let c = ProvisionerConfig { latency_us: (0, 0), policy: AllocationPolicy::OneAtATime, ..Default::default() };
        let mut p = ProvisionerState::new(c, 1).unwrap();
        let (_, ready) = p.evaluate(10, 5).unwrap();
        assert_eq!(ready, 5);
        assert_eq!(p.on_allocation_ready(5), vec![ExecutorId(0)]);
    }

    #[test]
    fn release_rules() {
        let c = ProvisionerConfig { min_nodes: 1, idle_release_us: Some(10), ..Default::default() };
        let mut p = ProvisionerState::new(c, 1).unwrap();
        let nodes = p.initial_nodes(0);
        assert_eq!(nodes.len(), 1);
        // Only node: releasing it would go below the minimum.
        assert!(p.release_idle(20).is_empty());

        let c = ProvisionerConfig { min_nodes: 0, idle_release_us: None, ..Default::default() };
        let mut p = ProvisionerState::new(c, 1).unwrap();
        p.evaluate(10, 0);
        p.on_allocation_ready(u64::MAX / 2);
        assert!(p.release_idle(u64::MAX - 1).is_empty());

        let c = ProvisionerConfig { min_nodes: 0, idle_release_us: Some(10), latency_us: (0, 0), ..Default::default() };
        let mut p = ProvisionerState::new(c, 1).unwrap();
        p.evaluate(10, 0);
        let ids = p.on_allocation_ready(0);
        p.mark_busy(ids[0]);
        assert_eq!(p.release_idle(20).len(), ids.len() - 1);
    }

    #[test]
    fn same_seed_same_timeline() {
        let run = |seed| {
            let mut p = ProvisionerState::new(cfg(AllocationPolicy::OneAtATime), seed).unwrap();
            (0..10).filter_map(|i| p.evaluate(1000, i * 1000)).collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    proptest! {
        #[test]
        fn pool_stays_within_bounds(
            policy in prop_oneof![
                Just(AllocationPolicy::OneAtATime),
                Just(AllocationPolicy::AllAtOnce),
                Just(AllocationPolicy::Demand),
                (1.1f64..4.0).prop_map(AllocationPolicy::Exponential),
            ],
            min in 0u32..5,
            extra in 0u32..40,
            queues in prop::collection::vec(0usize..5000, 1..50),
        ) {
            let c = ProvisionerConfig { min_nodes: min, max_nodes: min + extra.max(1), policy, latency_us: (0, 5), idle_release_us: Some(3), ..Default::default() };
            let max = c.max_nodes;
            let mut p = ProvisionerState::new(c, 9).unwrap();
            p.initial_nodes(0);
            let mut last = p.registered_count();
            for (i, q) in queues.into_iter().enumerate() {
                let now = i as u64 * 2;
                p.evaluate(q, now);
                p.on_allocation_ready(now);
                prop_assert!(p.registered_count() + p.pending_count() <= max);
                prop_assert!(p.registered_count() >= last, "no release configured for busy nodes");
                for e in p.registered().collect::<Vec<_>>() {
                    p.mark_busy(e);
                }
                last = p.registered_count();
            }
            for e in p.registered().collect::<Vec<_>>() {
                p.mark_idle(e, 1000);
            }
            p.release_idle(10_000);
            prop_assert!(p.registered_count() >= min);
        }
    }
}
