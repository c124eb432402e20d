//! Discrete-event simulation of a data-diffusion task farm.
//!
//! Tasks arrive at the dispatcher, wait in its queue, get handed to executors by the
//! scheduler, fetch their objects (local cache, a peer's cache, or the persistent store),
//! compute, and complete. The provisioner grows the pool as the queue builds up.
//!
//! All times are integer microseconds and events at equal times run in the order they
//! were scheduled, so a run is fully determined by its config and seed.

mod network;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use thiserror::Error;

pub use network::{Endpoint, Flow, FlowId, Network, SourceClass};

use crate::cache::{CacheState, EvictionPolicy};
use crate::config::RunConfig;
use crate::metrics::{MetricsLedger, ProvisioningRow, SeriesRow, TaskRecord};
use crate::model::TaskSpec;
use crate::provisioner::{ProvisionerError, ProvisionerState};
use crate::scheduler::{SchedulerError, SchedulerState, TraceRecord};
use crate::types::{Bits, ExecutorId, Micros, ObjectId, TaskId, MICROS_PER_SEC};
use crate::workload::{self, Workload, WorkloadError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Provisioner(#[from] ProvisionerError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stalled at {at_us} us with {completed} of {total} tasks complete")]
    Stalled { at_us: Micros, completed: usize, total: usize },
}

/// Per-node hardware.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeSpec {
    pub slots: u32,
    pub cache_bits: Bits,
    /// Disk/NIC bandwidth shared by every transfer touching the node. May be infinite.
    pub bandwidth_bps: f64,
    pub eviction: EvictionPolicy,
    /// Whether reading a locally cached object goes through the node's bandwidth.
    pub local_read_cost: bool,
}

impl Default for NodeSpec {
    fn default() -> Self {
        Self { slots: 2, cache_bits: 0, bandwidth_bps: 1.6e9, eviction: EvictionPolicy::Lru, local_read_cost: true }
    }
}

/// Simulation knobs that are not part of the workload, scheduler, or provisioner.
#[derive(Clone, Debug, PartialEq)]
pub struct SimParams {
    pub dispatch_overhead_us: Micros,
    /// Pickup decisions per second the dispatcher can make; 0 means unlimited.
    pub dispatch_rate_per_s: f64,
    pub index_staleness_us: Micros,
    /// Reservations older than this are dropped; 0 disables expiry.
    pub pending_timeout_us: Micros,
    pub store_bandwidth_bps: f64,
    /// Fixed setup delay before any peer or store transfer starts moving bits.
    pub transfer_latency_us: Micros,
    pub sample_interval_us: Micros,
    pub provisioner_tick_us: Micros,
    /// The run fails as stalled once simulated time exceeds this multiple of the ideal time.
    pub max_time_factor: f64,
    pub record_decisions: bool,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            dispatch_overhead_us: 2_000,
            dispatch_rate_per_s: 3000.0,
            index_staleness_us: 0,
            pending_timeout_us: 0,
            store_bandwidth_bps: 4.4e9,
            transfer_latency_us: 0,
            sample_interval_us: 60 * MICROS_PER_SEC,
            provisioner_tick_us: MICROS_PER_SEC,
            max_time_factor: 10.0,
            record_decisions: false,
        }
    }
}

/// Generates the workload for `config` and simulates it.
pub fn run(config: &RunConfig) -> Result<MetricsLedger, SimError> {
    let workload = workload::generate(&config.workload, config.sim.dispatch_overhead_us, config.seed)?;
    run_workload(config, &workload)
}

/// Simulates an already generated workload.
pub fn run_workload(config: &RunConfig, workload: &Workload) -> Result<MetricsLedger, SimError> {
    let mut engine = Engine::new(config, workload)?;
    engine.run()?;
    Ok(engine.ledger)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    Arrival(u32),
    Pickup(ExecutorId),
    TaskStart(u32),
    NetWake(u64),
    TaskComplete(u32),
    AllocationReady,
    ProvisionerTick,
    IndexAdd(ExecutorId, ObjectId),
    IndexEvict(ExecutorId, ObjectId),
    Sample,
}

struct Node {
    cache: CacheState,
    endpoint: Endpoint,
    /// Objects being written into this node's cache, by the flow carrying them.
    inflight: HashMap<ObjectId, FlowId>,
    running: u32,
    /// Peer transfers this node is currently serving.
    serving: u32,
    pickups_pending: u32,
}

struct Running {
    node: ExecutorId,
    pickup_us: Micros,
    start_us: Micros,
    outstanding: u32,
    pinned: Vec<ObjectId>,
}

struct FlowInfo {
    object: ObjectId,
    dst: ExecutorId,
    src: Option<ExecutorId>,
    cache_at_dst: bool,
    waiters: Vec<u32>,
}

struct Engine<'a> {
    cfg: &'a RunConfig,
    tasks: &'a [TaskSpec],
    file_bits: Bits,
    now: Micros,
    events: BinaryHeap<Reverse<(Micros, u64, Event)>>,
    seq: u64,
    sched: SchedulerState,
    prov: ProvisionerState,
    net: Network,
    net_gen: u64,
    store: Endpoint,
    nodes: BTreeMap<ExecutorId, Node>,
    replicas: HashMap<ObjectId, u32>,
    running: HashMap<u32, Running>,
    flows: HashMap<FlowId, FlowInfo>,
    dispatcher_free_at: Micros,
    outstanding_pickups: usize,
    completed: usize,
    deadline: Micros,
    ledger: MetricsLedger,
    acct_last: Micros,
    sample_last: Micros,
    sample_delivered: [f64; 3],
    sample_reg_us: u64,
    sample_run_us: u64,
    sample_arrived_bits: f64,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a RunConfig, workload: &'a Workload) -> Result<Self, SimError> {
        cfg.validate().map_err(|e| SimError::Config(e.to_string()))?;
        if workload.tasks.is_empty() {
            return Err(SimError::Config("workload has no tasks".into()));
        }
        let mut provisioner = cfg.provisioner.clone();
        provisioner.slots_per_node = cfg.node.slots;
        let prov = ProvisionerState::new(provisioner, cfg.seed)?;
        let sched = SchedulerState::new(cfg.scheduler.clone())?;
        let mut net = Network::default();
        let store = net.add_endpoint(cfg.sim.store_bandwidth_bps);
        // Both the measured and the ideal time run from the first arrival.
        let first = workload.tasks.first().map_or(0, |t| t.arrival_time_us);
        let ideal = workload.ideal_execution_time().saturating_sub(first).max(1);
        let mut intervals: Vec<(Micros, Micros)> = workload.schedule.intervals.iter().map(|i| (i.start_us, i.end_us)).collect();
        if intervals.is_empty() {
            intervals.push((0, ideal));
        }
        let ledger = MetricsLedger {
            policy: cfg.scheduler.policy.name().to_string(),
            cache_bits: cfg.node.cache_bits,
            ideal_wet_us: ideal,
            intervals,
            ..Default::default()
        };
        Ok(Self {
            cfg,
            tasks: &workload.tasks,
            file_bits: workload.file_size_bits,
            now: 0,
            events: BinaryHeap::new(),
            seq: 0,
            sched,
            prov,
            net,
            net_gen: 0,
            store,
            nodes: BTreeMap::new(),
            replicas: HashMap::new(),
            running: HashMap::new(),
            flows: HashMap::new(),
            dispatcher_free_at: 0,
            outstanding_pickups: 0,
            completed: 0,
            deadline: first + (ideal.max(60 * MICROS_PER_SEC) as f64 * cfg.sim.max_time_factor) as Micros,
            ledger,
            acct_last: 0,
            sample_last: 0,
            sample_delivered: [0.0; 3],
            sample_reg_us: 0,
            sample_run_us: 0,
            sample_arrived_bits: 0.0,
        })
    }

    fn push(&mut self, at: Micros, ev: Event) {
        debug_assert!(at >= self.now, "event scheduled in the past");
        self.seq += 1;
        self.events.push(Reverse((at, self.seq, ev)));
    }

    fn run(&mut self) -> Result<(), SimError> {
        for e in self.prov.initial_nodes(0) {
            self.add_node(e);
        }
        self.record_provisioning();
        self.push(0, Event::ProvisionerTick);
        self.push(self.cfg.sim.sample_interval_us, Event::Sample);
        self.push(self.tasks[0].arrival_time_us, Event::Arrival(0));
        let total = self.tasks.len();
        while self.completed < total {
            let Some(Reverse((at, _, ev))) = self.events.pop() else {
                return Err(SimError::Stalled { at_us: self.now, completed: self.completed, total });
            };
            if at > self.deadline {
                return Err(SimError::Stalled { at_us: at, completed: self.completed, total });
            }
            self.account(at);
            self.now = at;
            self.handle(ev);
        }
        self.finish();
        Ok(())
    }

    fn handle(&mut self, ev: Event) {
        match ev {
            Event::Arrival(i) => self.on_arrival(i),
            Event::Pickup(e) => self.on_pickup(e),
            Event::TaskStart(i) => self.on_task_start(i),
            Event::NetWake(generation) => {
                if generation == self.net_gen {
                    self.on_net_wake();
                }
            }
            Event::TaskComplete(i) => self.on_task_complete(i),
            Event::AllocationReady => {
                let ids = self.prov.on_allocation_ready(self.now);
                for e in ids {
                    self.add_node(e);
                }
                self.record_provisioning();
                self.dispatch_round();
            }
            Event::ProvisionerTick => self.on_tick(),
            Event::IndexAdd(e, f) => {
                if self.nodes.get(&e).is_some_and(|n| n.cache.contains(f)) {
                    self.sched.on_index_update(e, &[f], &[]);
                }
            }
            Event::IndexEvict(e, f) => {
                if self.nodes.contains_key(&e) {
                    self.sched.on_index_update(e, &[], &[f]);
                }
            }
            Event::Sample => {
                self.sample();
                self.push(self.now + self.cfg.sim.sample_interval_us, Event::Sample);
            }
        }
    }

    /// Integrates slot usage up to `until`.
    fn account(&mut self, until: Micros) {
        if until <= self.acct_last {
            return;
        }
        let dt = until - self.acct_last;
        let reg = u64::from(self.sched.total_slots()) * dt;
        let run = u64::from(self.sched.running_slots()) * dt;
        self.ledger.registered_slot_us += reg;
        self.ledger.running_slot_us += run;
        self.sample_reg_us += reg;
        self.sample_run_us += run;
        let busy = self.nodes.values().filter(|n| n.running > 0).count() as u64;
        self.ledger.registered_node_us += self.nodes.len() as u64 * dt;
        self.ledger.busy_node_us += busy * dt;
        if self.sched.queue_len() > 0 {
            self.ledger.backlog_registered_slot_us += reg;
            self.ledger.backlog_running_slot_us += run;
        }
        self.acct_last = until;
    }

    // ---- nodes and provisioning ----------------------------------------------------------

    fn add_node(&mut self, e: ExecutorId) {
        self.sched.register_executor(e, self.cfg.node.slots);
        let eviction = match self.cfg.node.eviction {
            EvictionPolicy::Random { seed } => EvictionPolicy::Random { seed: seed ^ (u64::from(e.0) << 32) ^ self.cfg.seed },
            other => other,
        };
        let endpoint = self.net.add_endpoint(self.cfg.node.bandwidth_bps);
        self.nodes.insert(
            e,
            Node { cache: CacheState::new(self.cfg.node.cache_bits, eviction), endpoint, inflight: HashMap::new(), running: 0, serving: 0, pickups_pending: 0 },
        );
        self.ledger.max_nodes_registered = self.ledger.max_nodes_registered.max(self.nodes.len() as u32);
        if self.sched.queue_len() > 0 {
            self.executor_asks_for_work(e);
        }
    }

    fn remove_node(&mut self, e: ExecutorId) {
        if let Ok(objects) = self.sched.deregister_executor(e) {
            debug_assert!(objects.iter().all(|f| self.nodes[&e].cache.contains(*f)) || self.cfg.sim.index_staleness_us > 0);
        }
        if let Some(node) = self.nodes.remove(&e) {
            for f in node.cache.resident() {
                self.drop_replica(f);
            }
        }
    }

    fn drop_replica(&mut self, f: ObjectId) {
        if let Some(c) = self.replicas.get_mut(&f) {
            *c -= 1;
            if *c == 0 {
                self.replicas.remove(&f);
            }
        }
    }

    fn refresh_idle(&mut self, e: ExecutorId) {
        if let Some(n) = self.nodes.get(&e) {
            if n.running == 0 && n.serving == 0 && n.pickups_pending == 0 {
                self.prov.mark_idle(e, self.now);
            } else {
                self.prov.mark_busy(e);
            }
        }
    }

    fn record_provisioning(&mut self) {
        self.ledger.provisioning.push(ProvisioningRow {
            time_us: self.now,
            registered: self.prov.registered_count(),
            pending: self.prov.pending_count(),
            queue_length: self.sched.queue_len(),
        });
    }

    fn on_tick(&mut self) {
        if let Some((_, ready)) = self.prov.evaluate(self.sched.queue_len(), self.now) {
            self.push(ready, Event::AllocationReady);
            self.record_provisioning();
        }
        let released: Vec<_> = self
            .prov
            .release_idle(self.now)
            .into_iter()
            .filter(|e| self.nodes.get(e).is_some_and(|n| n.running == 0 && n.serving == 0 && n.pickups_pending == 0))
            .collect();
        if !released.is_empty() {
            for e in released {
                self.remove_node(e);
            }
            self.record_provisioning();
        }
        if self.cfg.sim.pending_timeout_us > 0 {
            self.sched.expire_pending(self.now, self.cfg.sim.pending_timeout_us);
        }
        // Safety net: any idle executor gets a chance to look at the queue.
        if self.sched.queue_len() > 0 {
            let idle: Vec<_> = self.sched.free_executors().filter(|e| self.nodes[e].pickups_pending == 0).collect();
            for e in idle {
                self.executor_asks_for_work(e);
            }
        }
        self.push(self.now + self.cfg.sim.provisioner_tick_us, Event::ProvisionerTick);
    }

    // ---- dispatch ------------------------------------------------------------------------

    /// Books a pickup decision on the dispatcher, which serves them one at a time.
    fn request_pickup(&mut self, e: ExecutorId) {
        let rate = self.cfg.sim.dispatch_rate_per_s;
        let at = if rate > 0.0 {
            let service = (MICROS_PER_SEC as f64 / rate).ceil() as Micros;
            self.dispatcher_free_at.max(self.now) + service
        } else {
            self.now
        };
        self.dispatcher_free_at = at;
        self.outstanding_pickups += 1;
        if let Some(n) = self.nodes.get_mut(&e) {
            n.pickups_pending += 1;
        }
        self.prov.mark_busy(e);
        self.push(at, Event::Pickup(e));
    }

    fn executor_asks_for_work(&mut self, e: ExecutorId) {
        if self.sched.reserve_slot(e, self.now) {
            self.request_pickup(e);
        }
    }

    fn notify(&mut self, task: TaskId) -> bool {
        match self.sched.notify_for(task, self.now) {
            Some(n) => {
                self.request_pickup(n.executor);
                true
            }
            None => false,
        }
    }

    /// In slot-filling mode, keeps notifying free executors while queued work is not yet
    /// covered by an outstanding pickup.
    fn dispatch_round(&mut self) {
        if !self.sched.fills_idle_slots() {
            return;
        }
        while self.sched.has_free_executor() && self.sched.queue_len() > self.outstanding_pickups {
            let Some(task) = self.sched.task_at(self.outstanding_pickups) else {
                break;
            };
            if !self.notify(task) {
                break;
            }
        }
    }

    fn on_arrival(&mut self, i: u32) {
        let task = &self.tasks[i as usize];
        if let Some(next) = self.tasks.get(i as usize + 1) {
            self.push(next.arrival_time_us, Event::Arrival(i + 1));
        }
        self.sample_arrived_bits += (task.required_objects.len() as u64 * self.file_bits) as f64;
        self.sched.enqueue(task.id, task.required_objects.clone()).expect("task ids are unique");
        let len = self.sched.queue_len();
        self.ledger.peak_queue = self.ledger.peak_queue.max(len);
        if self.sched.fills_idle_slots() {
            self.dispatch_round();
        } else if len <= self.sched.window_size() {
            self.notify(task.id);
        }
    }

    fn on_pickup(&mut self, e: ExecutorId) {
        self.outstanding_pickups -= 1;
        let Some(node) = self.nodes.get_mut(&e) else {
            return;
        };
        node.pickups_pending -= 1;
        let window = self.sched.window_size();
        let assignments = self.sched.select_tasks_for_pickup(e).expect("node is registered");
        let o = self.cfg.sim.dispatch_overhead_us;
        for a in &assignments {
            let idx = a.task.0;
            if self.cfg.sim.record_decisions {
                self.ledger.decisions.push(TraceRecord {
                    time_us: self.now,
                    task: a.task,
                    executor: e,
                    policy: self.sched.policy(),
                    local_hits: a.local_hits,
                    misses: a.misses,
                });
            }
            self.running.insert(idx, Running { node: e, pickup_us: self.now, start_us: self.now + o, outstanding: 0, pinned: Vec::new() });
            self.nodes.get_mut(&e).expect("checked").running += 1;
            self.push(self.now + o, Event::TaskStart(idx));
        }
        self.refresh_idle(e);
        if !assignments.is_empty() && !self.sched.fills_idle_slots() {
            // Tasks that just slid into the window get their first notification.
            let k = assignments.len();
            for pos in window.saturating_sub(k)..window {
                if !self.sched.has_free_executor() {
                    break;
                }
                match self.sched.task_at(pos) {
                    Some(t) => {
                        self.notify(t);
                    }
                    None => break,
                }
            }
        }
        self.dispatch_round();
    }

    // ---- data and compute ----------------------------------------------------------------

    fn on_task_start(&mut self, idx: u32) {
        let e = self.running[&idx].node;
        let files = self.tasks[idx as usize].required_objects.clone();
        for f in files {
            self.fetch(idx, e, f);
        }
        if self.running[&idx].outstanding == 0 {
            let compute = self.tasks[idx as usize].compute_time_us;
            self.push(self.now + compute, Event::TaskComplete(idx));
        }
    }

    fn fetch(&mut self, idx: u32, e: ExecutorId, f: ObjectId) {
        let bits = self.file_bits;
        let node = self.nodes.get_mut(&e).expect("running tasks sit on registered nodes");
        if let Some(&fid) = node.inflight.get(&f) {
            // Already on its way here for another task: wait for it.
            self.ledger.hits.local += 1;
            node.cache.pin(f).expect("in-flight objects are resident");
            self.flows.get_mut(&fid).expect("in-flight flow").waiters.push(idx);
            let r = self.running.get_mut(&idx).expect("running");
            r.pinned.push(f);
            r.outstanding += 1;
            return;
        }
        if node.cache.contains(f) {
            self.ledger.hits.local += 1;
            node.cache.lookup(f);
            node.cache.pin(f).expect("resident");
            let endpoint = node.endpoint;
            let r = self.running.get_mut(&idx).expect("running");
            r.pinned.push(f);
            if self.cfg.node.local_read_cost {
                r.outstanding += 1;
                self.start_flow(vec![endpoint], bits, SourceClass::Local, FlowInfo { object: f, dst: e, src: None, cache_at_dst: false, waiters: vec![idx] });
            }
            return;
        }

        // The data-unaware baseline reads straight from the store and caches nothing.
        let data_aware = self.sched.policy().is_data_aware();
        let source = if data_aware { self.pick_peer(f, e) } else { None };
        let dst_endpoint = self.nodes[&e].endpoint;
        let copies = self.replicas.get(&f).copied().unwrap_or(0);
        let mut cache_here = false;
        if data_aware && self.cfg.node.cache_bits > 0 && (copies as usize) < self.cfg.scheduler.max_replication {
            let node = self.nodes.get_mut(&e).expect("registered");
            if let Ok(victims) = node.cache.insert(f, bits) {
                if node.cache.used_bits() > node.cache.capacity_bits() {
                    self.ledger.capacity_violations += 1;
                }
                node.cache.pin(f).expect("just inserted");
                cache_here = true;
                for v in victims {
                    self.drop_replica(v);
                    self.index_evict(e, v);
                }
                *self.replicas.entry(f).or_default() += 1;
            }
        }
        let (endpoints, class) = match source {
            Some(src) => {
                self.ledger.hits.remote += 1;
                let peer = self.nodes.get_mut(&src).expect("peer is registered");
                peer.cache.lookup(f);
                peer.cache.pin(f).expect("peer holds the object");
                peer.serving += 1;
                let ep = peer.endpoint;
                self.prov.mark_busy(src);
                (vec![ep, dst_endpoint], SourceClass::Remote)
            }
            None => {
                self.ledger.hits.persistent += 1;
                (vec![self.store, dst_endpoint], SourceClass::Persistent)
            }
        };
        let r = self.running.get_mut(&idx).expect("running");
        r.outstanding += 1;
        if cache_here {
            r.pinned.push(f);
        }
        let fid = self.start_flow(endpoints, bits, class, FlowInfo { object: f, dst: e, src: source, cache_at_dst: cache_here, waiters: vec![idx] });
        if cache_here {
            self.nodes.get_mut(&e).expect("registered").inflight.insert(f, fid);
        }
    }

    /// Peer that really holds `f` (the index may lag) with the fewest active transfers.
    fn pick_peer(&self, f: ObjectId, dst: ExecutorId) -> Option<ExecutorId> {
        least_loaded(self.sched.holders(f).filter(|&h| h != dst).filter_map(|h| {
            let n = self.nodes.get(&h)?;
            (n.cache.contains(f) && !n.inflight.contains_key(&f)).then(|| (self.net.load(n.endpoint), h))
        }))
    }

    fn start_flow(&mut self, endpoints: Vec<Endpoint>, bits: Bits, class: SourceClass, info: FlowInfo) -> FlowId {
        self.ledger.bits_requested += bits as f64;
        let delay = if class == SourceClass::Local { 0 } else { self.cfg.sim.transfer_latency_us };
        let fid = self.net.start_after(self.now, delay, endpoints, bits as f64, class);
        self.flows.insert(fid, info);
        self.network_changed();
        fid
    }

    fn network_changed(&mut self) {
        self.net_gen += 1;
        if let Some(t) = self.net.next_completion() {
            let g = self.net_gen;
            self.push(t.max(self.now), Event::NetWake(g));
        }
    }

    fn on_net_wake(&mut self) {
        let done = self.net.take_completed(self.now);
        for (fid, _) in done {
            let info = self.flows.remove(&fid).expect("flow bookkeeping");
            if let Some(src) = info.src {
                if let Some(peer) = self.nodes.get_mut(&src) {
                    peer.cache.unpin(info.object).expect("source copy was pinned");
                    peer.serving -= 1;
                }
                self.refresh_idle(src);
            }
            if info.cache_at_dst {
                if let Some(node) = self.nodes.get_mut(&info.dst) {
                    node.inflight.remove(&info.object);
                }
                self.index_add(info.dst, info.object);
            }
            for w in info.waiters {
                let r = self.running.get_mut(&w).expect("waiting task is running");
                r.outstanding -= 1;
                if r.outstanding == 0 {
                    let compute = self.tasks[w as usize].compute_time_us;
                    self.push(self.now + compute, Event::TaskComplete(w));
                }
            }
        }
        self.network_changed();
    }

    fn index_add(&mut self, e: ExecutorId, f: ObjectId) {
        let staleness = self.cfg.sim.index_staleness_us;
        if staleness == 0 {
            self.sched.on_index_update(e, &[f], &[]);
        } else {
            self.push(self.now + staleness, Event::IndexAdd(e, f));
        }
    }

    fn index_evict(&mut self, e: ExecutorId, f: ObjectId) {
        let staleness = self.cfg.sim.index_staleness_us;
        if staleness == 0 {
            self.sched.on_index_update(e, &[], &[f]);
        } else {
            self.push(self.now + staleness, Event::IndexEvict(e, f));
        }
    }

    fn on_task_complete(&mut self, idx: u32) {
        let r = self.running.remove(&idx).expect("completing task is running");
        let e = r.node;
        let node = self.nodes.get_mut(&e).expect("node outlives its tasks");
        for f in &r.pinned {
            node.cache.unpin(*f).expect("pinned at start");
        }
        node.running -= 1;
        self.sched.task_finished(e).expect("registered");
        let task = &self.tasks[idx as usize];
        self.ledger.tasks.push(TaskRecord {
            task: task.id,
            executor: e,
            arrival_us: task.arrival_time_us,
            wq_us: r.pickup_us - task.arrival_time_us,
            e_us: self.now - r.start_us,
            d_us: r.start_us - r.pickup_us,
            completion_us: self.now,
        });
        self.completed += 1;
        if self.sched.queue_len() > 0 {
            self.executor_asks_for_work(e);
        }
        self.refresh_idle(e);
        self.dispatch_round();
    }

    // ---- reporting -----------------------------------------------------------------------

    fn sample(&mut self) {
        self.net.advance(self.now);
        let dt = self.now - self.sample_last;
        if dt == 0 {
            return;
        }
        let secs = dt as f64 / MICROS_PER_SEC as f64;
        let d = self.net.delivered;
        let rate = |i: usize| (d[i] - self.sample_delivered[i]) / secs;
        let row = SeriesRow {
            time_us: self.now,
            throughput_local_bps: rate(0),
            throughput_remote_bps: rate(1),
            throughput_gpfs_bps: rate(2),
            ideal_bps: self.sample_arrived_bits / secs,
            queue_len: self.sched.queue_len(),
            nodes: self.nodes.len() as u32,
            busy: self.nodes.values().filter(|n| n.running > 0).count() as u32,
            cpu_util: if self.sample_reg_us > 0 { self.sample_run_us as f64 / self.sample_reg_us as f64 } else { 0.0 },
        };
        self.ledger.series.push(row);
        self.sample_delivered = d;
        self.sample_last = self.now;
        self.sample_reg_us = 0;
        self.sample_run_us = 0;
        self.sample_arrived_bits = 0.0;
        self.record_provisioning();
    }

    fn finish(&mut self) {
        self.sample();
        self.ledger.wet_us = self.now - self.tasks[0].arrival_time_us;
        self.ledger.bits_by_class = self.net.delivered;
        self.ledger.transfer_recalcs = self.net.recalcs;
        self.ledger.feasibility_violations = self.net.feasibility_violations;
    }
}

/// Candidate with the smallest load, ties broken by the lower id.
pub fn least_loaded(candidates: impl IntoIterator<Item = (u32, ExecutorId)>) -> Option<ExecutorId> {
    candidates.into_iter().min().map(|(_, e)| e)
}
