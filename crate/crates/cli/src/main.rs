use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use diffsim::config::{self, parse_size, ConfigError, RunConfig};
use diffsim::metrics::{self, RunReport};
use diffsim::microbench::{self, BenchSetup};
use diffsim::model::{copy_time_bits, WorkloadSummary};
use diffsim::scheduler::DispatchPolicy;
use diffsim::types::{micros_to_secs, MICROS_PER_SEC};
use diffsim::{workload, SimError};

#[derive(Parser)]
#[command(name = "diffsim", version, about = "Data-diffusion task farm simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one configuration and write its metrics.
    Run {
        #[command(flatten)]
        source: ConfigSource,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Simulate every (cache size, policy) pair plus a first-available baseline.
    Sweep {
        #[command(flatten)]
        source: ConfigSource,
        /// Comma-separated per-node cache sizes, e.g. `1GB,2GB,4GB`.
        #[arg(long, default_value = "1GB,1.5GB,2GB,4GB")]
        caches: String,
        /// Comma-separated policy names.
        #[arg(long, default_value = "good-cache-compute")]
        policies: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Parallel runs; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Evaluate the closed-form model for a configuration.
    Model {
        #[command(flatten)]
        source: ConfigSource,
        /// Executor count; defaults to max_nodes × slots.
        #[arg(long)]
        executors: Option<u32>,
        /// Fraction of tasks whose data is already cached.
        #[arg(long, default_value_t = 0.0)]
        hit_rate: f64,
    },
    /// Time the scheduler's decision engine for every policy.
    BenchScheduler {
        #[arg(long, default_value_t = 32)]
        executors: u32,
        #[arg(long, default_value_t = 3200)]
        window: usize,
        #[arg(long, default_value_t = 10_000)]
        files: u32,
        #[arg(long, default_value_t = 250_000)]
        tasks: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args)]
struct ConfigSource {
    /// Named preset to start from.
    #[arg(long)]
    preset: Option<String>,
    /// Config file (`key = value` lines); applied after the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigSource {
    fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let mut text = String::new();
        if let Some(p) = &self.preset {
            text.push_str(&format!("preset = {p}\n"));
        }
        if let Some(path) = &self.config {
            let body = fs::read_to_string(path).map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
            if self.preset.is_some() && body.lines().any(|l| l.split('#').next().unwrap_or("").trim_start().starts_with("preset")) {
                return Err(ConfigError::Invalid("give the preset either on the command line or in the file, not both".into()));
            }
            text.push_str(&body);
        }
        let mut c = config::parse(&text)?;
        if let Some(s) = self.seed {
            c.seed = s;
        }
        for o in &self.overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::Invalid(format!("override {o:?} is not KEY=VALUE")))?;
            config::apply(&mut c, k.trim(), v.trim()).map_err(ConfigError::Invalid)?;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Failure classes mapped to distinct exit codes.
enum Failure {
    Config(String),
    Stalled(String),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Stalled { .. } => Failure::Stalled(e.to_string()),
            SimError::Config(_) | SimError::Workload(_) | SimError::Scheduler(_) | SimError::Provisioner(_) => Failure::Config(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { source, out } => cmd_run(&source, &out),
        Command::Sweep { source, caches, policies, out, jobs } => cmd_sweep(&source, &caches, &policies, &out, jobs),
        Command::Model { source, executors, hit_rate } => cmd_model(&source, executors, hit_rate),
        Command::BenchScheduler { executors, window, files, tasks, seed } => {
            cmd_bench(&BenchSetup { executors, window, files, tasks, seed });
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Stalled(m)) => {
            eprintln!("{m}");
            ExitCode::from(3)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

fn cmd_run(source: &ConfigSource, out: &Path) -> Result<(), Failure> {
    let cfg = source.resolve()?;
    let ledger = diffsim::run(&cfg)?;
    let report = RunReport::from_ledger(&ledger, cfg.workload.compute_time_us).context("summarizing run")?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.resolved"), cfg.to_config_string()).context("writing config.resolved")?;
    metrics::write_series_csv(create(out, "series.csv")?, &ledger.series).context("writing series.csv")?;
    metrics::write_tasks_csv(create(out, "tasks.csv")?, &ledger.tasks).context("writing tasks.csv")?;
    metrics::write_provisioning_csv(create(out, "provisioning.csv")?, &ledger.provisioning).context("writing provisioning.csv")?;
    metrics::write_summary_csv(create(out, "summary.csv")?, std::slice::from_ref(&report)).context("writing summary.csv")?;
    if cfg.sim.record_decisions {
        let lines: String = ledger.decisions.iter().map(|d| format!("{d}\n")).collect();
        fs::write(out.join("decisions.tsv"), lines).context("writing decisions.tsv")?;
    }
    let text = metrics::render_summary(&report);
    fs::write(out.join("summary.txt"), &text).context("writing summary.txt")?;
    print!("{text}");
    Ok(())
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty())
}

fn cmd_sweep(source: &ConfigSource, caches: &str, policies: &str, out: &Path, jobs: usize) -> Result<(), Failure> {
    let base = source.resolve()?;
    let caches: Vec<u64> = split_list(caches).map(|c| parse_size(c).map_err(|e| Failure::Config(format!("--caches: {e}")))).collect::<Result<_, _>>()?;
    let policies: Vec<DispatchPolicy> =
        split_list(policies).map(|p| DispatchPolicy::parse(p).ok_or_else(|| Failure::Config(format!("unknown policy {p:?}")))).collect::<Result<_, _>>()?;
    let mut configs = vec![{
        let mut c = base.clone();
        c.scheduler.policy = DispatchPolicy::FirstAvailable;
        c.node.cache_bits = 0;
        c
    }];
    for &cache in &caches {
        for &p in &policies {
            let mut c = base.clone();
            c.scheduler.policy = p;
            c.node.cache_bits = cache;
            configs.push(c);
        }
    }
    for c in &configs {
        c.validate()?;
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().context("building thread pool")?;
    let results: Vec<Result<RunReport, Failure>> = pool.install(|| {
        configs
            .par_iter()
            .map(|c| {
                let ledger = diffsim::run(c)?;
                Ok(RunReport::from_ledger(&ledger, c.workload.compute_time_us).context("summarizing run")?)
            })
            .collect()
    });
    let mut reports = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let baseline = reports[0].wet_us;
    metrics::compare(&mut reports, baseline);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    metrics::write_summary_csv(create(out, "summary.csv")?, &reports).context("writing summary.csv")?;
    println!("{:<20} {:>9} {:>10} {:>7} {:>7} {:>7} {:>8} {:>6}", "policy", "cache GB", "WET s", "HR_L", "HR_C", "HR_S", "speedup", "PI");
    for r in &reports {
        println!(
            "{:<20} {:>9.2} {:>10.1} {:>7.3} {:>7.3} {:>7.3} {:>8.2} {:>6.3}",
            r.policy,
            r.cache_bits as f64 / 8e9,
            micros_to_secs(r.wet_us),
            r.hr_local,
            r.hr_remote,
            r.hr_persistent,
            r.speedup.unwrap_or(1.0),
            r.performance_index.unwrap_or(0.0),
        );
    }
    Ok(())
}

fn cmd_model(source: &ConfigSource, executors: Option<u32>, hit_rate: f64) -> Result<(), Failure> {
    let cfg = source.resolve()?;
    if !(0.0..=1.0).contains(&hit_rate) {
        return Err(Failure::Config("--hit-rate must lie in [0, 1]".into()));
    }
    let schedule = workload::build_schedule(&cfg.workload).map_err(|e| Failure::Config(e.to_string()))?;
    let spec = &cfg.workload;
    let copy = copy_time_bits(spec.file_size_bits, cfg.sim.store_bandwidth_bps, cfg.node.bandwidth_bps).context("copy time")?;
    let compute = spec.compute_time_us as f64;
    let with_overhead = cfg.sim.dispatch_overhead_us as f64 + compute + (1.0 - hit_rate) * copy as f64;
    let summary = WorkloadSummary {
        task_count: spec.task_count,
        avg_exec_time_us: compute,
        avg_exec_with_overhead_us: with_overhead,
        arrival_rate_per_s: spec.task_count as f64 * MICROS_PER_SEC as f64 / schedule.total_span_us.max(1) as f64,
        executor_count: executors.unwrap_or(cfg.provisioner.max_nodes * cfg.node.slots),
        working_set_bits: u64::from(spec.file_count) * spec.file_size_bits,
    };
    let r = summary.analyze().map_err(|e| Failure::Config(e.to_string()))?;
    println!("executors         {}", summary.executor_count);
    println!("arrival rate      {:.3} tasks/s", summary.arrival_rate_per_s);
    println!("per task          {compute:.1} us compute, {with_overhead:.1} us with overheads");
    println!("intensity         {:.4}", r.intensity);
    println!("V                 {:.3} s", micros_to_secs(r.v_us));
    println!("W                 {:.3} s", micros_to_secs(r.w_us));
    println!("efficiency        {:.4}", r.efficiency);
    println!("speedup           {:.2}", r.speedup);
    Ok(())
}

fn cmd_bench(setup: &BenchSetup) {
    println!("{:<20} {:>10} {:>14} {:>9}", "policy", "decisions", "decisions/s", "hit rate");
    for p in DispatchPolicy::ALL {
        let r = microbench::run(p, setup);
        println!("{:<20} {:>10} {:>14.0} {:>9.3}", p.name(), r.decisions, r.decisions_per_sec(), r.hit_rate());
    }
}
