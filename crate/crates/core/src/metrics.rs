//! Run metrics: the ledger a simulation fills in, and the derived report.

use std::io::Write;

use thiserror::Error;

use crate::scheduler::TraceRecord;
use crate::types::{micros_to_secs, Bits, ExecutorId, Micros, TaskId, MICROS_PER_SEC};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no file accesses recorded")]
    NoAccesses,
    #[error("no completed tasks")]
    NoTasks,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where each file access was served from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct HitCounters {
    pub local: u64,
    pub remote: u64,
    pub persistent: u64,
}

impl HitCounters {
    pub fn total(&self) -> u64 {
        self.local + self.remote + self.persistent
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskRecord {
    pub task: TaskId,
    pub executor: ExecutorId,
    pub arrival_us: Micros,
    /// Wait in the queue until the dispatch decision.
    pub wq_us: Micros,
    /// Data fetch plus compute.
    pub e_us: Micros,
    /// Dispatch overhead.
    pub d_us: Micros,
    pub completion_us: Micros,
}

impl TaskRecord {
    pub fn response_us(&self) -> Micros {
        self.wq_us + self.e_us + self.d_us
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesRow {
    pub time_us: Micros,
    pub throughput_local_bps: f64,
    pub throughput_remote_bps: f64,
    pub throughput_gpfs_bps: f64,
    pub ideal_bps: f64,
    pub queue_len: usize,
    pub nodes: u32,
    pub busy: u32,
    pub cpu_util: f64,
}

impl SeriesRow {
    pub fn throughput_bps(&self) -> f64 {
        self.throughput_local_bps + self.throughput_remote_bps + self.throughput_gpfs_bps
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProvisioningRow {
    pub time_us: Micros,
    pub registered: u32,
    pub pending: u32,
    pub queue_length: usize,
}

/// Everything a run records.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLedger {
    pub policy: String,
    pub cache_bits: Bits,
    pub hits: HitCounters,
    pub series: Vec<SeriesRow>,
    pub tasks: Vec<TaskRecord>,
    pub provisioning: Vec<ProvisioningRow>,
    pub decisions: Vec<TraceRecord>,
    /// Registered slot-microseconds (CPU time charged).
    pub registered_slot_us: u64,
    /// Slot-microseconds spent running a task.
    pub running_slot_us: u64,
    /// The two integrals above, restricted to periods with a non-empty wait queue.
    pub backlog_registered_slot_us: u64,
    pub backlog_running_slot_us: u64,
    /// Registered node-microseconds, and the part of it with at least one task running.
    pub registered_node_us: u64,
    pub busy_node_us: u64,
    pub wet_us: Micros,
    pub ideal_wet_us: Micros,
    /// Bits delivered per source: local cache, peer cache, persistent store.
    pub bits_by_class: [f64; 3],
    /// Sum of object sizes over all transfers started.
    pub bits_requested: f64,
    pub peak_queue: usize,
    pub transfer_recalcs: u64,
    pub feasibility_violations: u64,
    /// Cache inserts that left a node above its capacity.
    pub capacity_violations: u64,
    pub max_nodes_registered: u32,
    /// (start, end) of each arrival-rate interval.
    pub intervals: Vec<(Micros, Micros)>,
}

/// (HR_L, HR_C, HR_S): local hits, peer-cache hits, and misses over all accesses.
pub fn hit_rates(h: &HitCounters) -> Result<(f64, f64, f64), MetricsError> {
    let total = h.total();
    if total == 0 {
        return Err(MetricsError::NoAccesses);
    }
    let t = total as f64;
    Ok((h.local as f64 / t, h.remote as f64 / t, h.persistent as f64 / t))
}

pub fn speedup_vs_baseline(baseline_wet_us: Micros, wet_us: Micros) -> f64 {
    baseline_wet_us as f64 / wet_us as f64
}

/// Speedup per CPU-hour, normalized by the best entry of the set.
pub fn performance_index(runs: &[(f64, f64)]) -> Vec<f64> {
    let raw: Vec<f64> = runs.iter().map(|&(sp, hours)| sp / hours).collect();
    let best = raw.iter().copied().fold(f64::MIN, f64::max);
    raw.into_iter().map(|r| r / best).collect()
}

/// Per-interval slowdown: time from interval start until its last task completed, over
/// the time its last task would complete with infinite resources.
pub fn slowdown_series(tasks: &[TaskRecord], intervals: &[(Micros, Micros)], compute_us: Micros) -> Vec<f64> {
    let mut last_done = vec![None::<Micros>; intervals.len()];
    let mut last_arrival = vec![None::<Micros>; intervals.len()];
    for t in tasks {
        let idx = intervals.partition_point(|&(start, _)| start <= t.arrival_us).saturating_sub(1);
        if intervals.is_empty() {
            break;
        }
        let done = &mut last_done[idx];
        *done = Some(done.map_or(t.completion_us, |d: Micros| d.max(t.completion_us)));
        let arr = &mut last_arrival[idx];
        *arr = Some(arr.map_or(t.arrival_us, |a: Micros| a.max(t.arrival_us)));
    }
    intervals
        .iter()
        .zip(last_done.iter().zip(&last_arrival))
        .filter_map(|(&(start, _), (done, arrival))| {
            let ideal = arrival.as_ref()? + compute_us - start;
            Some((done.as_ref()? - start) as f64 / ideal.max(1) as f64)
        })
        .collect()
}

pub fn average_response_time(tasks: &[TaskRecord]) -> Result<f64, MetricsError> {
    if tasks.is_empty() {
        return Err(MetricsError::NoTasks);
    }
    Ok(tasks.iter().map(|t| t.response_us() as f64).sum::<f64>() / tasks.len() as f64)
}

/// |sim − analytic| / analytic, in percent.
pub fn model_error(sim_wet_us: Micros, analytic_wet_us: Micros) -> f64 {
    (sim_wet_us as f64 - analytic_wet_us as f64).abs() / analytic_wet_us as f64 * 100.0
}

/// Nearest-rank percentile, `p` in [0, 100].
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub policy: String,
    pub cache_bits: Bits,
    pub wet_us: Micros,
    pub ideal_wet_us: Micros,
    pub hr_local: f64,
    pub hr_remote: f64,
    pub hr_persistent: f64,
    pub avg_throughput_bps: f64,
    pub peak_throughput_bps: f64,
    pub efficiency: f64,
    pub slowdown: f64,
    pub interval_slowdown: Vec<f64>,
    pub avg_response_us: f64,
    pub cpu_hours: f64,
    pub mean_cpu_util: f64,
    pub backlog_cpu_util: f64,
    /// Busy nodes over registered nodes, time-averaged.
    pub node_util: f64,
    pub peak_queue: usize,
    pub max_nodes: u32,
    pub persistent_bits_fraction: f64,
    pub speedup: Option<f64>,
    pub performance_index: Option<f64>,
    pub model_error_pct: Option<f64>,
}

impl RunReport {
    pub fn from_ledger(ledger: &MetricsLedger, compute_us: Micros) -> Result<Self, MetricsError> {
        let (hr_local, hr_remote, hr_persistent) = hit_rates(&ledger.hits)?;
        let total_bits: f64 = ledger.bits_by_class.iter().sum();
        let samples: Vec<f64> = ledger.series.iter().map(SeriesRow::throughput_bps).collect();
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let wet = ledger.wet_us.max(1);
        Ok(Self {
            policy: ledger.policy.clone(),
            cache_bits: ledger.cache_bits,
            wet_us: ledger.wet_us,
            ideal_wet_us: ledger.ideal_wet_us,
            hr_local,
            hr_remote,
            hr_persistent,
            avg_throughput_bps: total_bits / micros_to_secs(wet),
            peak_throughput_bps: percentile(&samples, 99.0),
            efficiency: ledger.ideal_wet_us as f64 / wet as f64,
            slowdown: wet as f64 / ledger.ideal_wet_us.max(1) as f64,
            interval_slowdown: slowdown_series(&ledger.tasks, &ledger.intervals, compute_us),
            avg_response_us: average_response_time(&ledger.tasks)?,
            cpu_hours: ledger.registered_slot_us as f64 / MICROS_PER_SEC as f64 / 3600.0,
            mean_cpu_util: ratio(ledger.running_slot_us, ledger.registered_slot_us),
            backlog_cpu_util: ratio(ledger.backlog_running_slot_us, ledger.backlog_registered_slot_us),
            node_util: ratio(ledger.busy_node_us, ledger.registered_node_us),
            peak_queue: ledger.peak_queue,
            max_nodes: ledger.max_nodes_registered,
            persistent_bits_fraction: if total_bits > 0.0 { ledger.bits_by_class[2] / total_bits } else { 0.0 },
            speedup: None,
            performance_index: None,
            model_error_pct: None,
        })
    }
}

/// Fills in speedup against `baseline_wet_us` and the performance index across `reports`.
pub fn compare(reports: &mut [RunReport], baseline_wet_us: Micros) {
    for r in reports.iter_mut() {
        r.speedup = Some(speedup_vs_baseline(baseline_wet_us, r.wet_us));
    }
    let pairs: Vec<(f64, f64)> = reports.iter().map(|r| (r.speedup.unwrap_or(1.0), r.cpu_hours)).collect();
    for (r, pi) in reports.iter_mut().zip(performance_index(&pairs)) {
        r.performance_index = Some(pi);
    }
}

pub fn write_series_csv(w: impl Write, rows: &[SeriesRow]) -> Result<(), MetricsError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "time_us",
        "throughput_local_bps",
        "throughput_remote_bps",
        "throughput_gpfs_bps",
        "ideal_bps",
        "queue_len",
        "nodes",
        "busy",
        "cpu_util",
    ])?;
    for r in rows {
        out.write_record([
            r.time_us.to_string(),
            format!("{:.0}", r.throughput_local_bps),
            format!("{:.0}", r.throughput_remote_bps),
            format!("{:.0}", r.throughput_gpfs_bps),
            format!("{:.0}", r.ideal_bps),
            r.queue_len.to_string(),
            r.nodes.to_string(),
            r.busy.to_string(),
            format!("{:.4}", r.cpu_util),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_tasks_csv(w: impl Write, rows: &[TaskRecord]) -> Result<(), MetricsError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["task_id", "arrival_us", "wq_us", "e_us", "d_us"])?;
    for r in rows {
        out.write_record([r.task.0.to_string(), r.arrival_us.to_string(), r.wq_us.to_string(), r.e_us.to_string(), r.d_us.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_provisioning_csv(w: impl Write, rows: &[ProvisioningRow]) -> Result<(), MetricsError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["time_us", "registered", "pending", "queue_length"])?;
    for r in rows {
        out.write_record([r.time_us.to_string(), r.registered.to_string(), r.pending.to_string(), r.queue_length.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

const SUMMARY_HEADER: [&str; 23] = [
    "policy",
    "cache_bits",
    "wet_us",
    "ideal_wet_us",
    "hr_local",
    "hr_remote",
    "hr_persistent",
    "avg_throughput_bps",
    "peak_throughput_bps",
    "efficiency",
    "slowdown",
    "avg_response_us",
    "cpu_hours",
    "mean_cpu_util",
    "backlog_cpu_util",
    "node_util",
    "peak_queue_len",
    "max_nodes",
    "persistent_bits_fraction",
    "speedup",
    "performance_index",
    "model_error_pct",
    "interval_slowdown",
];

fn summary_record(r: &RunReport) -> Vec<String> {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    vec![
        r.policy.clone(),
        r.cache_bits.to_string(),
        r.wet_us.to_string(),
        r.ideal_wet_us.to_string(),
        format!("{:.6}", r.hr_local),
        format!("{:.6}", r.hr_remote),
        format!("{:.6}", r.hr_persistent),
        format!("{:.0}", r.avg_throughput_bps),
        format!("{:.0}", r.peak_throughput_bps),
        format!("{:.6}", r.efficiency),
        format!("{:.6}", r.slowdown),
        format!("{:.0}", r.avg_response_us),
        format!("{:.4}", r.cpu_hours),
        format!("{:.4}", r.mean_cpu_util),
        format!("{:.4}", r.backlog_cpu_util),
        format!("{:.4}", r.node_util),
        r.peak_queue.to_string(),
        r.max_nodes.to_string(),
        format!("{:.6}", r.persistent_bits_fraction),
        opt(r.speedup),
        opt(r.performance_index),
        opt(r.model_error_pct),
        r.interval_slowdown.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>().join(";"),
    ]
}

/// One header row, then one row per report.
pub fn write_summary_csv(w: impl Write, reports: &[RunReport]) -> Result<(), MetricsError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SUMMARY_HEADER)?;
    for r in reports {
        out.write_record(summary_record(r))?;
    }
    out.flush()?;
    Ok(())
}

/// Short human-readable summary.
pub fn render_summary(r: &RunReport) -> String {
    let gb = |bits: f64| bits / 8e9;
    let mut s = String::new();
    s.push_str(&format!("policy            {}\n", r.policy));
    s.push_str(&format!("cache per node    {:.2} GB\n", gb(r.cache_bits as f64)));
    s.push_str(&format!("WET               {:.1} s (ideal {:.1} s, efficiency {:.1}%)\n", micros_to_secs(r.wet_us), micros_to_secs(r.ideal_wet_us), r.efficiency * 100.0));
    s.push_str(&format!("hit rates         local {:.3}  remote {:.3}  persistent {:.3}\n", r.hr_local, r.hr_remote, r.hr_persistent));
    s.push_str(&format!("throughput        avg {:.2} Gb/s  peak(p99) {:.2} Gb/s\n", r.avg_throughput_bps / 1e9, r.peak_throughput_bps / 1e9));
    s.push_str(&format!("response time     {:.2} s average\n", r.avg_response_us / 1e6));
    s.push_str(&format!("CPU               {:.2} hours, utilization {:.3} (while backlogged {:.3})\n", r.cpu_hours, r.mean_cpu_util, r.backlog_cpu_util));
    s.push_str(&format!("busy nodes        {:.3} of registered\n", r.node_util));
    s.push_str(&format!("queue             peak {}\n", r.peak_queue));
    s.push_str(&format!("nodes             max {}\n", r.max_nodes));
    if let Some(sp) = r.speedup {
        s.push_str(&format!("speedup           {sp:.2}\n"));
    }
    if let Some(pi) = r.performance_index {
        s.push_str(&format!("performance index {pi:.3}\n"));
    }
    if let Some(e) = r.model_error_pct {
        s.push_str(&format!("model error       {e:.2}%\n"));
    }
    s
}
