//! Task stream generation: the stepped arrival-rate ramp, the dataset, and which object
//! each task reads.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Zipf};
use thiserror::Error;

use crate::model::TaskSpec;
use crate::types::{Bits, Micros, ObjectId, TaskId, MICROS_PER_SEC};

#[derive(Clone, Debug, PartialEq)]
pub enum FileSelection {
    Uniform,
    Zipf { exponent: f64 },
    /// Arrival times, objects, and compute times all come from a trace file.
    Trace(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArrivalProcess {
    /// Evenly spaced at 1/rate within each interval.
    Even,
    Poisson,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadSpec {
    pub file_count: u32,
    pub file_size_bits: Bits,
    pub task_count: u64,
    pub compute_time_us: Micros,
    pub initial_rate_per_s: u32,
    pub growth_factor: f64,
    pub interval_us: Micros,
    pub max_rate_per_s: u32,
    pub selection: FileSelection,
    pub arrivals: ArrivalProcess,
}

impl Default for WorkloadSpec {
    /// 250K tasks over 10K files of 10 MB, ramping from 1 to 1000 tasks/s by ×1.3 per minute.
    fn default() -> Self {
        Self {
            file_count: 10_000,
            file_size_bits: 80_000_000,
            task_count: 250_000,
            compute_time_us: 10_000,
            initial_rate_per_s: 1,
            growth_factor: 1.3,
            interval_us: 60 * MICROS_PER_SEC,
            max_rate_per_s: 1000,
            selection: FileSelection::Uniform,
            arrivals: ArrivalProcess::Even,
        }
    }
}

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid workload: {0}")]
    Invalid(String),
    #[error("cannot read trace {path}: {source}")]
    TraceIo { path: PathBuf, source: std::io::Error },
    #[error("trace {path} line {line}: {message}")]
    TraceFormat { path: PathBuf, line: usize, message: String },
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: &str| Err(WorkloadError::Invalid(m.to_string()));
        if self.file_count == 0 || self.task_count == 0 {
            return bad("file and task counts must be positive");
        }
        if self.file_size_bits == 0 {
            return bad("file size must be positive");
        }
        if self.initial_rate_per_s == 0 || self.max_rate_per_s == 0 {
            return bad("arrival rates must be positive");
        }
        if !(self.growth_factor > 1.0) {
            return bad("growth factor must exceed 1");
        }
        if self.interval_us == 0 {
            return bad("interval must be positive");
        }
        if let FileSelection::Zipf { exponent } = self.selection {
            if !(exponent > 0.0) {
                return bad("zipf exponent must be positive");
            }
        }
        Ok(())
    }

    pub fn working_set_bits(&self) -> Bits {
        u64::from(self.file_count) * self.file_size_bits
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateInterval {
    pub index: usize,
    pub rate_per_s: u32,
    pub start_us: Micros,
    /// End of the interval; for the final, truncated interval this is its last arrival.
    pub end_us: Micros,
    pub task_count: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArrivalSchedule {
    pub intervals: Vec<RateInterval>,
    pub total_span_us: Micros,
}

/// Next rate of the ramp: `min(ceil(prev·growth), max)`.
pub fn next_rate(prev: u32, growth: f64, max: u32) -> u32 {
    // The small bias keeps exact products such as 10·1.3 from rounding up past 13.
    let grown = (f64::from(prev) * growth - 1e-9).ceil() as u32;
    grown.max(prev + 1).min(max)
}

fn arrival_offset(j: u64, rate: u32) -> Micros {
    (j + 1) * MICROS_PER_SEC / u64::from(rate)
}

/// Builds the stepped schedule. Within an interval task `j` arrives at
/// `start + (j+1)/rate`; once the rate reaches its cap the remaining tasks form a single
/// final interval.
pub fn build_schedule(spec: &WorkloadSpec) -> Result<ArrivalSchedule, WorkloadError> {
    spec.validate()?;
    let mut intervals = Vec::new();
    let mut remaining = spec.task_count;
    let mut rate = spec.initial_rate_per_s.min(spec.max_rate_per_s);
    let mut start = 0;
    while remaining > 0 {
        let capped = rate >= spec.max_rate_per_s;
        let full = spec.interval_us * u64::from(rate) / MICROS_PER_SEC;
        let count = if capped { remaining } else { full.min(remaining) };
        if count == 0 {
            return Err(WorkloadError::Invalid(format!("interval too short for rate {rate}/s")));
        }
        let end = if capped || count < full { start + arrival_offset(count - 1, rate) } else { start + spec.interval_us };
        intervals.push(RateInterval { index: intervals.len(), rate_per_s: rate, start_us: start, end_us: end, task_count: count });
        remaining -= count;
        start = end;
        rate = next_rate(rate, spec.growth_factor, spec.max_rate_per_s);
    }
    let last = intervals.last().expect("task_count > 0");
    let total_span_us = last.start_us + arrival_offset(last.task_count - 1, last.rate_per_s);
    Ok(ArrivalSchedule { intervals, total_span_us })
}

impl ArrivalSchedule {
    pub fn task_count(&self) -> u64 {
        self.intervals.iter().map(|i| i.task_count).sum()
    }

    pub fn rates(&self) -> Vec<u32> {
        self.intervals.iter().map(|i| i.rate_per_s).collect()
    }

    /// Evenly spaced arrival times for every task, in order.
    pub fn even_arrivals(&self) -> Vec<Micros> {
        let mut out = Vec::with_capacity(self.task_count() as usize);
        for iv in &self.intervals {
            out.extend((0..iv.task_count).map(|j| iv.start_us + arrival_offset(j, iv.rate_per_s)));
        }
        out
    }

    /// Poisson arrivals with the schedule's per-interval rates. Interval boundaries are
    /// kept; only the total task count is fixed.
    pub fn poisson_arrivals(&self, total: u64, rng: &mut impl Rng) -> Vec<Micros> {
        let mut out = Vec::with_capacity(total as usize);
        let mut t = 0.0f64;
        'outer: for (k, iv) in self.intervals.iter().enumerate() {
            let exp = Exp::new(f64::from(iv.rate_per_s)).expect("positive rate");
            let last = k + 1 == self.intervals.len();
            t = t.max(iv.start_us as f64);
            loop {
                t += exp.sample(rng) * MICROS_PER_SEC as f64;
                if !last && t >= iv.end_us as f64 {
                    t = iv.end_us as f64;
                    break;
                }
                out.push(t as Micros);
                if out.len() as u64 == total {
                    break 'outer;
                }
            }
        }
        out
    }

    /// Arrival rate in effect at time `t_us` (0 outside the schedule).
    pub fn rate_at(&self, t_us: Micros) -> u32 {
        self.intervals
            .iter()
            .find(|iv| t_us >= iv.start_us && t_us < iv.end_us.max(iv.start_us + 1))
            .map_or(0, |iv| iv.rate_per_s)
    }

    /// Arrival time of the last task plus one task's compute time.
    pub fn ideal_execution_time(&self, compute_us: Micros) -> Micros {
        self.total_span_us + compute_us
    }
}

/// Bandwidth needed to keep up with arrivals: rate × object size.
pub fn ideal_throughput(schedule: &ArrivalSchedule, file_size_bits: Bits, t_us: Micros) -> f64 {
    f64::from(schedule.rate_at(t_us)) * file_size_bits as f64
}

/// A generated task stream plus the schedule it follows.
#[derive(Clone, Debug)]
pub struct Workload {
    pub tasks: Vec<TaskSpec>,
    pub schedule: ArrivalSchedule,
    pub file_count: u32,
    pub file_size_bits: Bits,
}

impl Workload {
    /// Wraps an explicit task list, sorted by arrival.
    pub fn from_tasks(tasks: Vec<TaskSpec>, file_count: u32, file_size_bits: Bits) -> Self {
        let schedule = schedule_of_trace(&tasks);
        Self { tasks, schedule, file_count, file_size_bits }
    }

    pub fn working_set_bits(&self) -> Bits {
        u64::from(self.file_count) * self.file_size_bits
    }

    pub fn ideal_execution_time(&self) -> Micros {
        self.tasks.iter().map(|t| t.arrival_time_us + t.compute_time_us).max().unwrap_or(0)
    }
}

/// Generates the full task stream deterministically from `seed`.
pub fn generate(spec: &WorkloadSpec, dispatch_overhead_us: Micros, seed: u64) -> Result<Workload, WorkloadError> {
    if let FileSelection::Trace(path) = &spec.selection {
        let tasks = read_trace(path, spec.file_count, dispatch_overhead_us)?;
        let schedule = schedule_of_trace(&tasks);
        return Ok(Workload { tasks, schedule, file_count: spec.file_count, file_size_bits: spec.file_size_bits });
    }
    let schedule = build_schedule(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arrivals = match spec.arrivals {
        ArrivalProcess::Even => schedule.even_arrivals(),
        ArrivalProcess::Poisson => schedule.poisson_arrivals(spec.task_count, &mut rng),
    };
    let files = assign_files(spec, arrivals.len(), &mut rng)?;
    let tasks = arrivals
        .into_iter()
        .zip(files)
        .enumerate()
        .map(|(i, (arrival, file))| TaskSpec {
            id: TaskId(i as u32),
            required_objects: vec![file],
            compute_time_us: spec.compute_time_us,
            dispatch_overhead_us,
            arrival_time_us: arrival,
        })
        .collect();
    Ok(Workload { tasks, schedule, file_count: spec.file_count, file_size_bits: spec.file_size_bits })
}

/// Draws the object each task reads.
pub fn assign_files(spec: &WorkloadSpec, count: usize, rng: &mut impl Rng) -> Result<Vec<ObjectId>, WorkloadError> {
    match &spec.selection {
        FileSelection::Uniform => Ok((0..count).map(|_| ObjectId(rng.random_range(0..spec.file_count))).collect()),
        FileSelection::Zipf { exponent } => {
            let zipf = Zipf::new(f64::from(spec.file_count), *exponent)
                .map_err(|e| WorkloadError::Invalid(format!("zipf: {e}")))?;
            // Ranks are 1-based.
            Ok((0..count).map(|_| ObjectId(zipf.sample(rng) as u32 - 1)).collect())
        }
        FileSelection::Trace(_) => Err(WorkloadError::Invalid("trace selection has no generator".into())),
    }
}

/// Reads `arrival_us<TAB>file_id<TAB>compute_us` lines. Blank lines and `#` comments are skipped.
pub fn read_trace(path: &Path, file_count: u32, dispatch_overhead_us: Micros) -> Result<Vec<TaskSpec>, WorkloadError> {
    let text = std::fs::read_to_string(path).map_err(|source| WorkloadError::TraceIo { path: path.to_path_buf(), source })?;
    let err = |line: usize, message: String| WorkloadError::TraceFormat { path: path.to_path_buf(), line, message };
    let mut tasks = Vec::new();
    let mut last_arrival = 0;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(err(n + 1, format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let parse = |s: &str, what: &str| s.trim().parse::<u64>().map_err(|_| err(n + 1, format!("bad {what} {s:?}")));
        let arrival = parse(fields[0], "arrival_us")?;
        let file = parse(fields[1], "file_id")?;
        let compute = parse(fields[2], "compute_us")?;
        if file >= u64::from(file_count) {
            return Err(err(n + 1, format!("file_id {file} outside 0..{file_count}")));
        }
        if arrival < last_arrival {
            return Err(err(n + 1, "arrival times must be nondecreasing".into()));
        }
        last_arrival = arrival;
        tasks.push(TaskSpec {
            id: TaskId(tasks.len() as u32),
            required_objects: vec![ObjectId(file as u32)],
            compute_time_us: compute,
            dispatch_overhead_us,
            arrival_time_us: arrival,
        });
    }
    if tasks.is_empty() {
        return Err(err(0, "trace has no tasks".into()));
    }
    Ok(tasks)
}

/// One interval per second of trace time, with the rate observed in it.
fn schedule_of_trace(tasks: &[TaskSpec]) -> ArrivalSchedule {
    let span = tasks.last().map_or(0, |t| t.arrival_time_us);
    let mut intervals: Vec<RateInterval> = Vec::new();
    for t in tasks {
        let idx = (t.arrival_time_us / MICROS_PER_SEC) as usize;
        while intervals.len() <= idx {
            let i = intervals.len() as u64;
            intervals.push(RateInterval {
                index: i as usize,
                rate_per_s: 0,
                start_us: i * MICROS_PER_SEC,
                end_us: (i + 1) * MICROS_PER_SEC,
                task_count: 0,
            });
        }
        intervals[idx].task_count += 1;
        intervals[idx].rate_per_s += 1;
    }
    ArrivalSchedule { intervals, total_span_us: span }
}
