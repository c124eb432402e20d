//! Data-aware dispatcher.
//!
//! The dispatcher keeps the wait queue, the registered executors, and two inverse
//! indexes: object → executors caching it, and executor → cached objects. Dispatch is
//! split in two steps:
//!
//! 1. [`SchedulerState::notify_for`] looks at one queued task and picks a free executor
//!    to notify, preferring executors that cache the most of the task's objects.
//! 2. [`SchedulerState::select_tasks_for_pickup`] runs when a notified (or newly free)
//!    executor asks for work. It scores up to one window of queued tasks by how many of
//!    their objects the executor already caches and hands out at most `batch_size` of them.
//!
//! An executor here is a node with one or more CPU slots. It is free while it has an
//! idle slot that no outstanding notification has reserved.

mod queue;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

pub use queue::{Seq, WaitQueue};

use crate::types::{ExecutorId, Micros, ObjectId, TaskId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DispatchPolicy {
    FirstAvailable,
    FirstCacheAvailable,
    MaxCacheHit,
    MaxComputeUtil,
    GoodCacheCompute,
}

impl DispatchPolicy {
    pub const ALL: [DispatchPolicy; 5] = [
        DispatchPolicy::FirstAvailable,
        DispatchPolicy::FirstCacheAvailable,
        DispatchPolicy::MaxCacheHit,
        DispatchPolicy::MaxComputeUtil,
        DispatchPolicy::GoodCacheCompute,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DispatchPolicy::FirstAvailable => "first-available",
            DispatchPolicy::FirstCacheAvailable => "first-cache-available",
            DispatchPolicy::MaxCacheHit => "max-cache-hit",
            DispatchPolicy::MaxComputeUtil => "max-compute-util",
            DispatchPolicy::GoodCacheCompute => "good-cache-compute",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }

    /// Whether the policy consults the location indexes at all.
    pub fn is_data_aware(self) -> bool {
        self != DispatchPolicy::FirstAvailable
    }
}

impl fmt::Display for DispatchPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How many queued tasks one pickup may inspect.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WindowSize {
    Fixed(usize),
    /// A multiple of the number of registered executors, tracked as they join and leave.
    PerExecutor(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchedulerConfig {
    pub policy: DispatchPolicy,
    pub window: WindowSize,
    /// Maximum number of tasks handed to one executor per pickup (m).
    pub batch_size: usize,
    /// Utilization at or above which good-cache-compute seeks cache hits.
    pub cpu_threshold: f64,
    /// Cap on cached copies of one object; enforced by the data-fetch path.
    pub max_replication: usize,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            policy: DispatchPolicy::GoodCacheCompute,
            window: WindowSize::PerExecutor(100),
            batch_size: 1,
            cpu_threshold: 0.8,
            max_replication: 4,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<(), SchedulerError> {
        if !(0.0..=1.0).contains(&self.cpu_threshold) {
            return Err(SchedulerError::InvalidConfig("cpu_threshold must lie in [0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(SchedulerError::InvalidConfig("batch_size must be at least 1"));
        }
        if self.max_replication == 0 {
            return Err(SchedulerError::InvalidConfig("max_replication must be at least 1"));
        }
        match self.window {
            WindowSize::Fixed(0) | WindowSize::PerExecutor(0) => {
                Err(SchedulerError::InvalidConfig("window must be positive"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedulerError {
    #[error("no-executors: no executor is registered")]
    NoExecutors,
    #[error("invalid scheduler config: {0}")]
    InvalidConfig(&'static str),
    #[error("unknown executor {0}")]
    UnknownExecutor(ExecutorId),
    #[error("task {0} is already queued")]
    DuplicateTask(TaskId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExecutorState {
    Free,
    Busy,
    Pending,
}

#[derive(Clone, Debug)]
struct Executor {
    slots: u32,
    running: u32,
    reserved: u32,
    pending_since: Option<Micros>,
}

impl Executor {
    fn available(&self) -> u32 {
        self.slots - self.running - self.reserved
    }

    fn state(&self) -> ExecutorState {
        if self.available() > 0 {
            ExecutorState::Free
        } else if self.reserved > 0 {
            ExecutorState::Pending
        } else {
            ExecutorState::Busy
        }
    }
}

#[derive(Clone, Debug)]
struct QueuedTask {
    id: TaskId,
    files: Vec<ObjectId>,
    /// How many of `files` are cached on at least one executor.
    cached_anywhere: u32,
}

/// Local hit/miss split of a task's objects against one executor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct HitCount {
    pub local_hits: usize,
    pub misses: usize,
}

/// Partition of a task's objects by where they are cached.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct HitClassification {
    /// Cached on some registered executor.
    pub cache_hits: BTreeSet<ObjectId>,
    /// Cached nowhere.
    pub cache_misses: BTreeSet<ObjectId>,
    /// Cached on some free executor.
    pub free_hits: BTreeSet<ObjectId>,
    /// Cached nowhere, or only on executors that are not free.
    pub free_misses: BTreeSet<ObjectId>,
}

/// Why an executor was notified.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NotifyReason {
    /// It caches at least one of the task's objects.
    Candidate,
    /// No caching executor was free; it was simply the next free one.
    Fallback,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Notification {
    pub executor: ExecutorId,
    pub task: TaskId,
    pub reason: NotifyReason,
}

/// A task handed to an executor by a pickup.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub task: TaskId,
    pub local_hits: usize,
    pub misses: usize,
}

/// One dispatch decision, written as a tab-separated trace line.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub time_us: Micros,
    pub task: TaskId,
    pub executor: ExecutorId,
    pub policy: DispatchPolicy,
    pub local_hits: usize,
    pub misses: usize,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.time_us, self.task.0, self.executor.0, self.policy, self.local_hits, self.misses
        )
    }
}

/// Which fallback a data-aware policy takes when the window holds no cache hits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    SeekHits,
    FillSlots,
}

#[derive(Clone, Debug)]
pub struct SchedulerState {
    config: SchedulerConfig,
    executors: BTreeMap<ExecutorId, Executor>,
    free: BTreeSet<ExecutorId>,
    total_slots: u32,
    running_slots: u32,
    rr_cursor: Option<ExecutorId>,

    queue: WaitQueue,
    queued: HashMap<Seq, QueuedTask>,
    seq_of: HashMap<TaskId, Seq>,
    queued_by_file: HashMap<ObjectId, BTreeSet<Seq>>,
    no_file_tasks: BTreeSet<Seq>,
    orphans: BTreeSet<Seq>,

    file_index: HashMap<ObjectId, BTreeSet<ExecutorId>>,
    executor_index: BTreeMap<ExecutorId, BTreeSet<ObjectId>>,

    stats: SchedulerStats,
}

/// Counters of the work the decision engine performed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SchedulerStats {
    pub notifications: u64,
    pub pickups: u64,
    pub dispatched: u64,
    pub empty_pickups: u64,
    pub tasks_inspected: u64,
}

impl SchedulerState {
    pub fn new(config: SchedulerConfig) -> Result<Self, SchedulerError> {
        config.validate()?;
        Ok(Self {
            config,
            executors: BTreeMap::new(),
            free: BTreeSet::new(),
            total_slots: 0,
            running_slots: 0,
            rr_cursor: None,
            queue: WaitQueue::new(),
            queued: HashMap::new(),
            seq_of: HashMap::new(),
            queued_by_file: HashMap::new(),
            no_file_tasks: BTreeSet::new(),
            orphans: BTreeSet::new(),
            file_index: HashMap::new(),
            executor_index: BTreeMap::new(),
            stats: SchedulerStats::default(),
        })
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn policy(&self) -> DispatchPolicy {
        self.config.policy
    }

    pub fn stats(&self) -> &SchedulerStats {
        &self.stats
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn executor_count(&self) -> usize {
        self.executors.len()
    }

    pub fn total_slots(&self) -> u32 {
        self.total_slots
    }

    pub fn running_slots(&self) -> u32 {
        self.running_slots
    }

    pub fn free_executors(&self) -> impl Iterator<Item = ExecutorId> + '_ {
        self.free.iter().copied()
    }

    pub fn has_free_executor(&self) -> bool {
        !self.free.is_empty()
    }

    pub fn executor_state(&self, e: ExecutorId) -> Option<ExecutorState> {
        self.executors.get(&e).map(Executor::state)
    }

    pub fn window_size(&self) -> usize {
        match self.config.window {
            WindowSize::Fixed(n) => n,
            WindowSize::PerExecutor(mult) => mult * self.executors.len(),
        }
    }

    /// Queued task ids in queue order.
    pub fn queued_tasks(&self) -> Vec<TaskId> {
        self.queue.iter().map(|s| self.queued[&s].id).collect()
    }

    pub fn is_queued(&self, task: TaskId) -> bool {
        self.seq_of.contains_key(&task)
    }

    /// Zero-based queue position of a task.
    pub fn queue_position(&self, task: TaskId) -> Option<usize> {
        self.seq_of.get(&task).and_then(|&s| self.queue.position(s))
    }

    /// Task at zero-based queue position `pos`.
    pub fn task_at(&self, pos: usize) -> Option<TaskId> {
        self.queue.nth(pos).map(|seq| self.queued[&seq].id)
    }

    pub fn head(&self) -> Option<TaskId> {
        self.queue.head().map(|s| self.queued[&s].id)
    }

    /// Executors caching an object, in id order.
    pub fn holders(&self, object: ObjectId) -> impl Iterator<Item = ExecutorId> + '_ {
        self.file_index.get(&object).into_iter().flatten().copied()
    }

    pub fn holder_count(&self, object: ObjectId) -> usize {
        self.file_index.get(&object).map_or(0, BTreeSet::len)
    }

    pub fn cached_objects(&self, e: ExecutorId) -> Option<&BTreeSet<ObjectId>> {
        self.executor_index.get(&e)
    }

    // ---- executors -------------------------------------------------------------------

    pub fn register_executor(&mut self, e: ExecutorId, slots: u32) {
        assert!(slots > 0, "an executor needs at least one slot");
        if self.executors.contains_key(&e) {
            return;
        }
        self.executors.insert(e, Executor { slots, running: 0, reserved: 0, pending_since: None });
        self.executor_index.insert(e, BTreeSet::new());
        self.total_slots += slots;
        self.free.insert(e);
    }

    /// Removes an executor and purges it from both indexes. Returns the objects it cached.
    pub fn deregister_executor(&mut self, e: ExecutorId) -> Result<Vec<ObjectId>, SchedulerError> {
        let ex = self.executors.remove(&e).ok_or(SchedulerError::UnknownExecutor(e))?;
        self.total_slots -= ex.slots;
        self.running_slots -= ex.running;
        self.free.remove(&e);
        let objects: Vec<_> = self.executor_index.get(&e).map(|s| s.iter().copied().collect()).unwrap_or_default();
        for &f in &objects {
            self.unindex(e, f);
        }
        self.executor_index.remove(&e);
        Ok(objects)
    }

    fn refresh_free(&mut self, e: ExecutorId) {
        let free = self.executors.get(&e).is_some_and(|x| x.available() > 0);
        if free {
            self.free.insert(e);
        } else {
            self.free.remove(&e);
        }
    }

    /// Marks one running task on `e` as finished, freeing its slot.
    pub fn task_finished(&mut self, e: ExecutorId) -> Result<(), SchedulerError> {
        let ex = self.executors.get_mut(&e).ok_or(SchedulerError::UnknownExecutor(e))?;
        assert!(ex.running > 0, "task_finished on idle executor {e}");
        ex.running -= 1;
        self.running_slots -= 1;
        self.refresh_free(e);
        Ok(())
    }

    /// Fraction of registered CPU slots that are running a task.
    pub fn cpu_utilization(&self) -> Result<f64, SchedulerError> {
        if self.total_slots == 0 {
            return Err(SchedulerError::NoExecutors);
        }
        Ok(f64::from(self.running_slots) / f64::from(self.total_slots))
    }

    /// Releases notifications that have waited longer than `timeout` without a pickup.
    pub fn expire_pending(&mut self, now: Micros, timeout: Micros) -> Vec<ExecutorId> {
        let expired: Vec<_> = self
            .executors
            .iter()
            .filter(|(_, x)| x.pending_since.is_some_and(|t| now.saturating_sub(t) >= timeout))
            .map(|(e, _)| *e)
            .collect();
        for &e in &expired {
            let ex = self.executors.get_mut(&e).expect("listed above");
            ex.reserved = 0;
            ex.pending_since = None;
            self.refresh_free(e);
        }
        expired
    }

    // ---- queue -------------------------------------------------------------------------

    pub fn enqueue(&mut self, task: TaskId, mut files: Vec<ObjectId>) -> Result<(), SchedulerError> {
        if self.seq_of.contains_key(&task) {
            return Err(SchedulerError::DuplicateTask(task));
        }
        files.sort_unstable();
        files.dedup();
        let seq = self.queue.push_back();
        let mut cached_anywhere = 0;
        for &f in &files {
            self.queued_by_file.entry(f).or_default().insert(seq);
            if self.holder_count(f) > 0 {
                cached_anywhere += 1;
            }
        }
        if files.is_empty() {
            self.no_file_tasks.insert(seq);
        } else if cached_anywhere == 0 {
            self.orphans.insert(seq);
        }
        self.queued.insert(seq, QueuedTask { id: task, files, cached_anywhere });
        self.seq_of.insert(task, seq);
        Ok(())
    }

    fn dequeue(&mut self, seq: Seq) -> QueuedTask {
        let task = self.queued.remove(&seq).expect("dequeue of unknown seq");
        self.queue.remove(seq);
        self.seq_of.remove(&task.id);
        for f in &task.files {
            if let Some(set) = self.queued_by_file.get_mut(f) {
                set.remove(&seq);
                if set.is_empty() {
                    self.queued_by_file.remove(f);
                }
            }
        }
        self.no_file_tasks.remove(&seq);
        self.orphans.remove(&seq);
        task
    }

    /// Removes a task from the queue without dispatching it.
    pub fn cancel(&mut self, task: TaskId) -> bool {
        match self.seq_of.get(&task) {
            Some(&seq) => {
                self.dequeue(seq);
                true
            }
            None => false,
        }
    }

    // ---- index -------------------------------------------------------------------------

    /// Applies an executor's cache delta to both indexes. Unknown executors are ignored.
    pub fn on_index_update(&mut self, e: ExecutorId, added: &[ObjectId], evicted: &[ObjectId]) -> bool {
        if !self.executors.contains_key(&e) {
            log::warn!("index update from unknown executor {e} ignored");
            return false;
        }
        for &f in evicted {
            self.unindex(e, f);
        }
        for &f in added {
            self.index(e, f);
        }
        true
    }

    fn index(&mut self, e: ExecutorId, f: ObjectId) {
        if !self.executor_index.entry(e).or_default().insert(f) {
            return;
        }
        let holders = self.file_index.entry(f).or_default();
        holders.insert(e);
        if holders.len() == 1 {
            self.adjust_cached_anywhere(f, true);
        }
    }

    fn unindex(&mut self, e: ExecutorId, f: ObjectId) {
        if let Some(objs) = self.executor_index.get_mut(&e) {
            objs.remove(&f);
        }
        let Some(holders) = self.file_index.get_mut(&f) else {
            return;
        };
        if holders.remove(&e) && holders.is_empty() {
            self.file_index.remove(&f);
            self.adjust_cached_anywhere(f, false);
        }
    }

    fn adjust_cached_anywhere(&mut self, f: ObjectId, now_cached: bool) {
        let Some(seqs) = self.queued_by_file.get(&f) else {
            return;
        };
        for &seq in seqs {
            let t = self.queued.get_mut(&seq).expect("queued_by_file tracks queued tasks");
            if now_cached {
                t.cached_anywhere += 1;
                if t.cached_anywhere == 1 {
                    self.orphans.remove(&seq);
                }
            } else {
                t.cached_anywhere -= 1;
                if t.cached_anywhere == 0 {
                    self.orphans.insert(seq);
                }
            }
        }
    }

    // ---- classification ----------------------------------------------------------------

    pub fn classify_hit(&self, files: &[ObjectId], e: ExecutorId) -> HitCount {
        let cached = self.executor_index.get(&e);
        let local_hits = files.iter().filter(|f| cached.is_some_and(|c| c.contains(f))).count();
        HitCount { local_hits, misses: files.len() - local_hits }
    }

    /// Splits a task's objects into cache hits/misses and free-cache hits/misses.
    pub fn classify_free(&self, files: &[ObjectId]) -> HitClassification {
        let mut out = HitClassification::default();
        for &f in files {
            let holders = self.file_index.get(&f);
            if holders.is_some_and(|h| !h.is_empty()) {
                out.cache_hits.insert(f);
            } else {
                out.cache_misses.insert(f);
            }
            if holders.is_some_and(|h| h.iter().any(|e| self.free.contains(e))) {
                out.free_hits.insert(f);
            } else {
                out.free_misses.insert(f);
            }
        }
        out
    }

    fn mode(&self) -> Mode {
        match self.config.policy {
            DispatchPolicy::MaxCacheHit => Mode::SeekHits,
            DispatchPolicy::GoodCacheCompute => {
                let util = self.cpu_utilization().unwrap_or(0.0);
                if util >= self.config.cpu_threshold {
                    Mode::SeekHits
                } else {
                    Mode::FillSlots
                }
            }
            _ => Mode::FillSlots,
        }
    }

    /// Whether free executors should take any queued work rather than wait for hits.
    pub fn fills_idle_slots(&self) -> bool {
        self.mode() == Mode::FillSlots
    }

    // ---- part one: notification ----------------------------------------------------------

    /// Notification step for the task at the head of the queue.
    pub fn notify_candidate(&mut self, now: Micros) -> Option<Notification> {
        let head = self.head()?;
        self.notify_for(head, now)
    }

    /// Chooses a free executor to notify about `task` and reserves one of its slots.
    ///
    /// Returns `None` when no executor is free, or when the policy prefers to wait for a
    /// busy executor that caches the task's data.
    pub fn notify_for(&mut self, task: TaskId, now: Micros) -> Option<Notification> {
        let seq = *self.seq_of.get(&task)?;
        let chosen = if self.config.policy == DispatchPolicy::FirstAvailable {
            self.next_free().map(|e| (e, NotifyReason::Fallback))
        } else {
            let files = &self.queued[&seq].files;
            let mut counts: BTreeMap<ExecutorId, usize> = BTreeMap::new();
            for f in files {
                for &e in self.file_index.get(f).into_iter().flatten() {
                    *counts.entry(e).or_default() += 1;
                }
            }
            let preferred = if self.config.policy == DispatchPolicy::FirstCacheAvailable {
                counts.keys().copied().find(|e| self.free.contains(e))
            } else {
                let mut ranked: Vec<_> = counts.iter().map(|(e, c)| (*e, *c)).collect();
                // Stable on (count desc, id asc).
                ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
                ranked.into_iter().map(|(e, _)| e).find(|e| self.free.contains(e))
            };
            match preferred {
                Some(e) => Some((e, NotifyReason::Candidate)),
                None if counts.is_empty() || self.mode() == Mode::FillSlots => {
                    self.next_free().map(|e| (e, NotifyReason::Fallback))
                }
                None => None,
            }
        };
        let (executor, reason) = chosen?;
        let ex = self.executors.get_mut(&executor).expect("free executors are registered");
        ex.reserved += 1;
        ex.pending_since = Some(now);
        self.refresh_free(executor);
        self.stats.notifications += 1;
        Some(Notification { executor, task, reason })
    }

    /// Reserves an idle slot on `e` for a pickup the executor initiates itself, as when
    /// it finishes a task and asks for more work. Returns false if `e` has no idle slot.
    pub fn reserve_slot(&mut self, e: ExecutorId, now: Micros) -> bool {
        let Some(ex) = self.executors.get_mut(&e) else {
            return false;
        };
        if ex.available() == 0 {
            return false;
        }
        ex.reserved += 1;
        ex.pending_since = Some(now);
        self.refresh_free(e);
        true
    }

    /// Round-robin over free executors in id order.
    fn next_free(&mut self) -> Option<ExecutorId> {
        let after = self.rr_cursor.and_then(|c| self.free.range((std::ops::Bound::Excluded(c), std::ops::Bound::Unbounded)).next().copied());
        let next = after.or_else(|| self.free.first().copied())?;
        self.rr_cursor = Some(next);
        Some(next)
    }

    // ---- part two: pickup ----------------------------------------------------------------

    /// Chooses up to `batch_size` queued tasks for executor `e` and removes them from the
    /// queue. A pending notification on `e` is consumed by the call.
    ///
    /// An empty result means the executor goes back to the free pool.
    pub fn select_tasks_for_pickup(&mut self, e: ExecutorId) -> Result<Vec<Assignment>, SchedulerError> {
        let ex = self.executors.get_mut(&e).ok_or(SchedulerError::UnknownExecutor(e))?;
        if ex.reserved > 0 {
            ex.reserved -= 1;
        }
        if ex.reserved == 0 {
            ex.pending_since = None;
        }
        let capacity = (ex.available() as usize).min(self.config.batch_size);
        self.stats.pickups += 1;
        let picked = if capacity == 0 || self.queue.is_empty() {
            Vec::new()
        } else {
            self.choose(e, capacity)
        };
        if picked.is_empty() {
            self.stats.empty_pickups += 1;
        }
        let mut out = Vec::with_capacity(picked.len());
        for seq in picked {
            let task = self.dequeue(seq);
            let hits = self.classify_hit(&task.files, e);
            out.push(Assignment { task: task.id, local_hits: hits.local_hits, misses: hits.misses });
        }
        let ex = self.executors.get_mut(&e).expect("checked above");
        ex.running += out.len() as u32;
        self.running_slots += out.len() as u32;
        self.stats.dispatched += out.len() as u64;
        self.refresh_free(e);
        Ok(out)
    }

    fn head_seqs(&self, k: usize) -> Vec<Seq> {
        self.queue.iter().take(k).collect()
    }

    fn choose(&mut self, e: ExecutorId, k: usize) -> Vec<Seq> {
        if self.config.policy == DispatchPolicy::FirstAvailable {
            self.stats.tasks_inspected += k.min(self.queue.len()) as u64;
            return self.head_seqs(k);
        }
        let window = self.window_size().min(self.queue.len());
        if window == 0 {
            return Vec::new();
        }
        let scored = self.score_window(e, window);
        let mut picked: Vec<Seq> = scored.iter().filter(|s| s.is_full()).take(k).map(|s| s.seq).collect();
        if picked.len() < k {
            let mut partial: Vec<&Scored> = scored.iter().filter(|s| !s.is_full() && s.hits > 0).collect();
            // Highest local hit rate first, queue order among equals.
            partial.sort_by(|a, b| (b.hits * a.files).cmp(&(a.hits * b.files)).then(a.seq.cmp(&b.seq)));
            picked.extend(partial.into_iter().take(k - picked.len()).map(|s| s.seq));
        }
        if !picked.is_empty() {
            return picked;
        }
        match self.mode() {
            Mode::FillSlots => self.head_seqs(k),
            Mode::SeekHits => {
                // Tasks whose data is cached nowhere gain nothing by waiting.
                let last = self.queue.nth(window - 1).expect("window within queue");
                self.orphans.range(..=last).take(k).copied().collect()
            }
        }
    }

    /// Tasks in the first `window` queue positions that have at least one local hit on
    /// `e` or need no data, in queue order.
    fn score_window(&mut self, e: ExecutorId, window: usize) -> Vec<Scored> {
        let cached_count = self.executor_index.get(&e).map_or(0, BTreeSet::len);
        if window <= cached_count.saturating_mul(4) {
            self.score_by_scan(e, window)
        } else {
            self.score_by_index(e, window)
        }
    }

    /// Walks the window in queue order, intersecting each task's objects with the
    /// executor's cached set. Stops early once `batch_size` full hits are found.
    fn score_by_scan(&mut self, e: ExecutorId, window: usize) -> Vec<Scored> {
        let cached = self.executor_index.get(&e);
        let mut out = Vec::new();
        let mut full = 0;
        let mut inspected = 0u64;
        for seq in self.queue.iter().take(window) {
            inspected += 1;
            let t = &self.queued[&seq];
            let hits = t.files.iter().filter(|f| cached.is_some_and(|c| c.contains(f))).count();
            let s = Scored { seq, hits, files: t.files.len() };
            if s.is_full() {
                full += 1;
            }
            if s.hits > 0 || s.files == 0 {
                out.push(s);
            }
            if full >= self.config.batch_size {
                break;
            }
        }
        self.stats.tasks_inspected += inspected;
        out
    }

    /// Same result as [`Self::score_by_scan`], computed from the executor's cached objects
    /// and the object → queued-task index instead of walking the window.
    fn score_by_index(&mut self, e: ExecutorId, window: usize) -> Vec<Scored> {
        let last = self.queue.nth(window - 1).expect("window within queue");
        let mut hits: BTreeMap<Seq, usize> = BTreeMap::new();
        if let Some(cached) = self.executor_index.get(&e) {
            for f in cached {
                if let Some(seqs) = self.queued_by_file.get(f) {
                    for &seq in seqs.range(..=last) {
                        *hits.entry(seq).or_default() += 1;
                    }
                }
            }
        }
        for &seq in self.no_file_tasks.range(..=last) {
            hits.insert(seq, 0);
        }
        self.stats.tasks_inspected += hits.len() as u64;
        let mut out: Vec<Scored> = hits
            .into_iter()
            .map(|(seq, h)| Scored { seq, hits: h, files: self.queued[&seq].files.len() })
            .collect();
        // Match the scan's early exit so both routes return identical lists.
        let mut full = 0;
        if let Some(cut) = out.iter().position(|s| {
            if s.is_full() {
                full += 1;
            }
            full >= self.config.batch_size
        }) {
            out.truncate(cut + 1);
        }
        out
    }

    #[cfg(test)]
    fn score_both_routes(&mut self, e: ExecutorId) -> (Vec<Scored>, Vec<Scored>) {
        let window = self.window_size().min(self.queue.len());
        if window == 0 {
            return (Vec::new(), Vec::new());
        }
        (self.score_by_scan(e, window), self.score_by_index(e, window))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Scored {
    seq: Seq,
    hits: usize,
    files: usize,
}

impl Scored {
    fn is_full(&self) -> bool {
        self.hits == self.files
    }
}
