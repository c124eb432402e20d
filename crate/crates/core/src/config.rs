//! Run configuration: flat `key = value` text with dotted section prefixes, named
//! presets for the reference experiments, and a resolved echo that parses back to the
//! same config.
//!
//! ```text
//! preset = gcc-2gb
//! seed = 7
//! node.cache = 1.5GB
//! scheduler.window_multiplier = 100
//! ```
//!
//! Sizes, bandwidths, and durations must carry units (`10MB`, `80Mb`, `4.4Gbps`, `30s`).
//! Sizes are decimal: 1 GB = 8e9 bits.

use std::fmt::Write as _;
use std::path::PathBuf;

use thiserror::Error;

use crate::cache::EvictionPolicy;
use crate::provisioner::{AllocationPolicy, ProvisionerConfig};
use crate::scheduler::{DispatchPolicy, SchedulerConfig, WindowSize};
use crate::sim::{NodeSpec, SimParams};
use crate::types::{Bits, Micros};
use crate::workload::{ArrivalProcess, FileSelection, WorkloadSpec};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub seed: u64,
    pub workload: WorkloadSpec,
    pub scheduler: SchedulerConfig,
    pub node: NodeSpec,
    pub provisioner: ProvisionerConfig,
    pub sim: SimParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: None,
            seed: 1,
            workload: WorkloadSpec::default(),
            scheduler: SchedulerConfig::default(),
            node: NodeSpec { cache_bits: gb(4.0), ..NodeSpec::default() },
            provisioner: ProvisionerConfig::default(),
            sim: SimParams::default(),
        }
    }
}

fn gb(x: f64) -> Bits {
    (x * 8e9).round() as Bits
}

pub const PRESETS: [&str; 11] = [
    "baseline-gpfs",
    "gcc-1gb",
    "gcc-1.5gb",
    "gcc-2gb",
    "gcc-4gb",
    "mch-4gb",
    "mcu-4gb",
    "fa-4gb",
    "static-gcc-4gb",
    "microbench",
    "contention-free",
];

/// Config for a named preset.
pub fn preset(name: &str) -> Result<RunConfig, ConfigError> {
    let mut c = RunConfig { preset: Some(name.to_string()), ..RunConfig::default() };
    let policy_cache = |c: &mut RunConfig, p: DispatchPolicy, cache: f64| {
        c.scheduler.policy = p;
        c.node.cache_bits = gb(cache);
    };
    match name {
        "baseline-gpfs" => policy_cache(&mut c, DispatchPolicy::FirstAvailable, 0.0),
        "gcc-1gb" => policy_cache(&mut c, DispatchPolicy::GoodCacheCompute, 1.0),
        "gcc-1.5gb" => policy_cache(&mut c, DispatchPolicy::GoodCacheCompute, 1.5),
        "gcc-2gb" => policy_cache(&mut c, DispatchPolicy::GoodCacheCompute, 2.0),
        "gcc-4gb" => policy_cache(&mut c, DispatchPolicy::GoodCacheCompute, 4.0),
        "mch-4gb" => policy_cache(&mut c, DispatchPolicy::MaxCacheHit, 4.0),
        "mcu-4gb" => policy_cache(&mut c, DispatchPolicy::MaxComputeUtil, 4.0),
        "fa-4gb" => policy_cache(&mut c, DispatchPolicy::FirstAvailable, 4.0),
        "static-gcc-4gb" => {
            policy_cache(&mut c, DispatchPolicy::GoodCacheCompute, 4.0);
            c.provisioner.disabled = true;
            c.provisioner.min_nodes = 64;
            c.provisioner.max_nodes = 64;
        }
        "microbench" => {
            c.scheduler.policy = DispatchPolicy::FirstAvailable;
            c.workload.file_size_bits = 8;
            c.workload.compute_time_us = 0;
            c.workload.initial_rate_per_s = 1000;
            c.workload.max_rate_per_s = 1000;
            c.node.slots = 1;
            c.node.cache_bits = 10_000 * 8;
            c.provisioner.disabled = true;
            c.provisioner.min_nodes = 32;
            c.provisioner.max_nodes = 32;
            c.sim.dispatch_overhead_us = 0;
            c.sim.dispatch_rate_per_s = 0.0;
        }
        "contention-free" => {
            c.scheduler.policy = DispatchPolicy::FirstAvailable;
            c.workload.task_count = 2000;
            c.workload.initial_rate_per_s = 50;
            c.workload.max_rate_per_s = 50;
            c.node.bandwidth_bps = f64::INFINITY;
            c.node.slots = 1;
            c.sim.store_bandwidth_bps = f64::INFINITY;
            c.sim.dispatch_rate_per_s = 0.0;
            c.provisioner.disabled = true;
            c.provisioner.min_nodes = 4;
            c.provisioner.max_nodes = 4;
        }
        _ => return Err(ConfigError::UnknownPreset(name.to_string())),
    }
    Ok(c)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |m: String| Err(ConfigError::Invalid(m));
        self.workload.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.scheduler.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut prov = self.provisioner.clone();
        prov.slots_per_node = self.node.slots;
        prov.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.node.slots == 0 {
            return inv("node.slots must be at least 1".into());
        }
        if !(self.node.bandwidth_bps > 0.0) || !(self.sim.store_bandwidth_bps > 0.0) {
            return inv("bandwidths must be positive".into());
        }
        if self.sim.sample_interval_us == 0 || self.sim.provisioner_tick_us == 0 {
            return inv("sample interval and provisioner tick must be positive".into());
        }
        if !(self.sim.max_time_factor >= 1.0) {
            return inv("sim.max_time_factor must be at least 1".into());
        }
        if !(self.sim.dispatch_rate_per_s >= 0.0) {
            return inv("scheduler.dispatch_rate must be non-negative".into());
        }
        if self.provisioner.disabled && self.provisioner.min_nodes == 0 {
            return inv("a static pool needs provisioner.min_nodes >= 1".into());
        }
        Ok(())
    }

    /// Every key with its resolved value, in a form [`parse`] accepts.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        if let Some(p) = &self.preset {
            kv("preset", p.clone());
        }
        kv("seed", self.seed.to_string());
        let w = &self.workload;
        kv("workload.files", w.file_count.to_string());
        kv("workload.file_size", format!("{}b", w.file_size_bits));
        kv("workload.tasks", w.task_count.to_string());
        kv("workload.compute", format!("{}us", w.compute_time_us));
        kv("workload.initial_rate", w.initial_rate_per_s.to_string());
        kv("workload.growth", w.growth_factor.to_string());
        kv("workload.interval", format!("{}us", w.interval_us));
        kv("workload.max_rate", w.max_rate_per_s.to_string());
        kv(
            "workload.selection",
            match &w.selection {
                FileSelection::Uniform => "uniform".into(),
                FileSelection::Zipf { exponent } => format!("zipf:{exponent}"),
                FileSelection::Trace(p) => format!("trace:{}", p.display()),
            },
        );
        kv("workload.arrivals", if w.arrivals == ArrivalProcess::Poisson { "poisson" } else { "even" }.into());
        let sc = &self.scheduler;
        kv("scheduler.policy", sc.policy.name().into());
        match sc.window {
            WindowSize::PerExecutor(m) => kv("scheduler.window_multiplier", m.to_string()),
            WindowSize::Fixed(n) => kv("scheduler.window", n.to_string()),
        }
        kv("scheduler.batch", sc.batch_size.to_string());
        kv("scheduler.cpu_threshold", sc.cpu_threshold.to_string());
        kv("scheduler.max_replication", sc.max_replication.to_string());
        kv("scheduler.dispatch_overhead", format!("{}us", self.sim.dispatch_overhead_us));
        kv("scheduler.dispatch_rate", self.sim.dispatch_rate_per_s.to_string());
        kv("scheduler.pending_timeout", format!("{}us", self.sim.pending_timeout_us));
        kv("scheduler.index_staleness", format!("{}us", self.sim.index_staleness_us));
        kv("store.transfer_latency", format!("{}us", self.sim.transfer_latency_us));
        let n = &self.node;
        kv("node.slots", n.slots.to_string());
        kv("node.cache", format!("{}b", n.cache_bits));
        kv("node.bandwidth", bandwidth_string(n.bandwidth_bps));
        kv(
            "node.eviction",
            match n.eviction {
                EvictionPolicy::Random { seed } => format!("random:{seed}"),
                other => other.name().into(),
            },
        );
        kv("node.local_read_cost", n.local_read_cost.to_string());
        kv("store.bandwidth", bandwidth_string(self.sim.store_bandwidth_bps));
        let p = &self.provisioner;
        kv("provisioner.enabled", (!p.disabled).to_string());
        kv("provisioner.policy", p.policy.name());
        kv("provisioner.min_nodes", p.min_nodes.to_string());
        kv("provisioner.max_nodes", p.max_nodes.to_string());
        kv("provisioner.queue_threshold", p.queue_threshold.to_string());
        kv("provisioner.latency", format!("{}us..{}us", p.latency_us.0, p.latency_us.1));
        kv("provisioner.idle_release", p.idle_release_us.map_or("never".into(), |t| format!("{t}us")));
        kv("provisioner.tick", format!("{}us", self.sim.provisioner_tick_us));
        kv("sim.sample_interval", format!("{}us", self.sim.sample_interval_us));
        kv("sim.max_time_factor", self.sim.max_time_factor.to_string());
        kv("output.decision_trace", self.sim.record_decisions.to_string());
        s
    }
}

fn bandwidth_string(bps: f64) -> String {
    if bps.is_infinite() {
        "unbounded".into()
    } else {
        format!("{bps}bps")
    }
}

/// Splits `12.5MB` into (12.5, "MB").
fn split_unit(v: &str) -> Result<(f64, &str), String> {
    let v = v.trim();
    let end = v.find(|c: char| !(c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || c == '-' || c == '+')).unwrap_or(v.len());
    // An exponent marker directly before the unit ("5e") is not part of the number.
    let (mut num, mut unit) = v.split_at(end);
    if num.ends_with(['e', 'E']) {
        num = &v[..end - 1];
        unit = &v[end - 1..];
    }
    let x: f64 = num.parse().map_err(|_| format!("{v:?} does not start with a number"))?;
    if !(x >= 0.0) || !x.is_finite() {
        return Err(format!("{v:?} must be a non-negative number"));
    }
    Ok((x, unit.trim()))
}

const SIZE_UNITS: [(&str, f64); 12] = [
    ("b", 1.0),
    ("bit", 1.0),
    ("bits", 1.0),
    ("Kb", 1e3),
    ("Mb", 1e6),
    ("Gb", 1e9),
    ("Tb", 1e12),
    ("B", 8.0),
    ("KB", 8e3),
    ("MB", 8e6),
    ("GB", 8e9),
    ("TB", 8e12),
];

const TIME_UNITS: [(&str, f64); 5] = [("us", 1.0), ("ms", 1e3), ("s", 1e6), ("min", 6e7), ("h", 3.6e9)];

fn unit_kind(unit: &str) -> &'static str {
    if SIZE_UNITS.iter().any(|(u, _)| *u == unit) {
        "a size"
    } else if TIME_UNITS.iter().any(|(u, _)| *u == unit) {
        "a duration"
    } else if unit.ends_with("ps") || unit.ends_with("/s") {
        "a bandwidth"
    } else if unit.is_empty() {
        "a bare number"
    } else {
        "an unknown unit"
    }
}

pub fn parse_size(v: &str) -> Result<Bits, String> {
    let (x, unit) = split_unit(v)?;
    match SIZE_UNITS.iter().find(|(u, _)| *u == unit) {
        Some((_, m)) => Ok((x * m).round() as Bits),
        None => Err(format!("expected a size such as 10MB or 80Mb, found {} in {v:?}", unit_kind(unit))),
    }
}

pub fn parse_duration(v: &str) -> Result<Micros, String> {
    if v.trim() == "0" {
        return Ok(0);
    }
    let (x, unit) = split_unit(v)?;
    match TIME_UNITS.iter().find(|(u, _)| *u == unit) {
        Some((_, m)) => Ok((x * m).round() as Micros),
        None => Err(format!("expected a duration such as 30s or 2ms, found {} in {v:?}", unit_kind(unit))),
    }
}

pub fn parse_bandwidth(v: &str) -> Result<f64, String> {
    let t = v.trim();
    if matches!(t, "unbounded" | "inf" | "infinite") {
        return Ok(f64::INFINITY);
    }
    let (x, unit) = split_unit(t)?;
    let size_unit = unit.strip_suffix("ps").or_else(|| unit.strip_suffix("/s"));
    let base = size_unit.and_then(|u| {
        let u = if u.is_empty() { "b" } else { u };
        SIZE_UNITS.iter().find(|(s, _)| *s == u).map(|(_, m)| *m)
    });
    match base {
        Some(m) if x > 0.0 => Ok(x * m),
        Some(_) => Err(format!("bandwidth must be positive in {v:?}")),
        None => Err(format!("expected a bandwidth such as 4.4Gbps or 1.6Gb/s, found {} in {v:?}", unit_kind(unit))),
    }
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "on" => Ok(true),
        "false" | "no" | "off" => Ok(false),
        _ => Err(format!("expected true or false, found {v:?}")),
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("expected a number, found {v:?}"))
}

/// Parses config text. A `preset` line, if any, must come before other keys; it sets the
/// starting point that the remaining keys override.
pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
    let mut c = RunConfig::default();
    let mut seen_other = false;
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let err = |message: String| ConfigError::Line { line: line_no, message };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, found {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        if key == "preset" {
            if seen_other {
                return Err(err("preset must come before other keys".into()));
            }
            c = preset(value).map_err(|e| err(e.to_string()))?;
            continue;
        }
        seen_other = true;
        apply(&mut c, key, value).map_err(err)?;
    }
    c.validate()?;
    Ok(c)
}

/// Sets one key. Also used for command-line overrides.
pub fn apply(c: &mut RunConfig, key: &str, v: &str) -> Result<(), String> {
    match key {
        "seed" => c.seed = parse_num(v)?,
        "workload.files" => c.workload.file_count = parse_num(v)?,
        "workload.file_size" => c.workload.file_size_bits = parse_size(v)?,
        "workload.tasks" => c.workload.task_count = parse_num(v)?,
        "workload.compute" => c.workload.compute_time_us = parse_duration(v)?,
        "workload.initial_rate" => c.workload.initial_rate_per_s = parse_num(v)?,
        "workload.growth" => c.workload.growth_factor = parse_num(v)?,
        "workload.interval" => c.workload.interval_us = parse_duration(v)?,
        "workload.max_rate" => c.workload.max_rate_per_s = parse_num(v)?,
        "workload.selection" => {
            c.workload.selection = if v == "uniform" {
                FileSelection::Uniform
            } else if let Some(s) = v.strip_prefix("zipf:") {
                FileSelection::Zipf { exponent: parse_num(s)? }
            } else if let Some(p) = v.strip_prefix("trace:") {
                FileSelection::Trace(PathBuf::from(p))
            } else {
                return Err(format!("expected uniform, zipf:<s>, or trace:<path>, found {v:?}"));
            }
        }
        "workload.arrivals" => {
            c.workload.arrivals = match v {
                "even" => ArrivalProcess::Even,
                "poisson" => ArrivalProcess::Poisson,
                _ => return Err(format!("expected even or poisson, found {v:?}")),
            }
        }
        "scheduler.policy" => {
            c.scheduler.policy = DispatchPolicy::parse(v).ok_or_else(|| {
                let names: Vec<_> = DispatchPolicy::ALL.iter().map(|p| p.name()).collect();
                format!("unknown policy {v:?}; expected one of {}", names.join(", "))
            })?
        }
        "scheduler.window_multiplier" => c.scheduler.window = WindowSize::PerExecutor(parse_num(v)?),
        "scheduler.window" => c.scheduler.window = WindowSize::Fixed(parse_num(v)?),
        "scheduler.batch" => c.scheduler.batch_size = parse_num(v)?,
        "scheduler.cpu_threshold" => c.scheduler.cpu_threshold = parse_num(v)?,
        "scheduler.max_replication" => c.scheduler.max_replication = parse_num(v)?,
        "scheduler.dispatch_overhead" => c.sim.dispatch_overhead_us = parse_duration(v)?,
        "scheduler.dispatch_rate" => c.sim.dispatch_rate_per_s = parse_num(v)?,
        "scheduler.pending_timeout" => c.sim.pending_timeout_us = parse_duration(v)?,
        "scheduler.index_staleness" => c.sim.index_staleness_us = parse_duration(v)?,
        "store.transfer_latency" => c.sim.transfer_latency_us = parse_duration(v)?,
        "node.slots" => c.node.slots = parse_num(v)?,
        "node.cache" => c.node.cache_bits = parse_size(v)?,
        "node.bandwidth" => c.node.bandwidth_bps = parse_bandwidth(v)?,
        "node.eviction" => {
            c.node.eviction = match v {
                "lru" => EvictionPolicy::Lru,
                "fifo" => EvictionPolicy::Fifo,
                "lfu" => EvictionPolicy::Lfu,
                "random" => EvictionPolicy::Random { seed: 0 },
                _ => match v.strip_prefix("random:") {
                    Some(s) => EvictionPolicy::Random { seed: parse_num(s)? },
                    None => return Err(format!("expected lru, fifo, lfu, or random[:seed], found {v:?}")),
                },
            }
        }
        "node.local_read_cost" => c.node.local_read_cost = parse_bool(v)?,
        "store.bandwidth" => c.sim.store_bandwidth_bps = parse_bandwidth(v)?,
        "provisioner.enabled" => c.provisioner.disabled = !parse_bool(v)?,
        "provisioner.policy" => {
            c.provisioner.policy = AllocationPolicy::parse(v)
                .ok_or_else(|| format!("expected one-at-a-time, all-at-once, demand, or exponential:<factor>, found {v:?}"))?
        }
        "provisioner.min_nodes" => c.provisioner.min_nodes = parse_num(v)?,
        "provisioner.max_nodes" => c.provisioner.max_nodes = parse_num(v)?,
        "provisioner.queue_threshold" => c.provisioner.queue_threshold = parse_num(v)?,
        "provisioner.latency" => {
            let (lo, hi) = v.split_once("..").unwrap_or((v, v));
            c.provisioner.latency_us = (parse_duration(lo)?, parse_duration(hi)?);
        }
        "provisioner.idle_release" => {
            c.provisioner.idle_release_us = if v == "never" { None } else { Some(parse_duration(v)?) }
        }
        "provisioner.tick" => c.sim.provisioner_tick_us = parse_duration(v)?,
        "sim.sample_interval" => c.sim.sample_interval_us = parse_duration(v)?,
        "sim.max_time_factor" => c.sim.max_time_factor = parse_num(v)?,
        "output.decision_trace" => c.sim.record_decisions = parse_bool(v)?,
        _ => return Err(format!("unknown key {key:?}")),
    }
    Ok(())
}
