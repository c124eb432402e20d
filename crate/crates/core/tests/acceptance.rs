//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion. Failures are
//! reported, not hidden; set `ACCEPTANCE_STRICT=1` to also turn them into a non-zero exit.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use diffsim::config::{self, RunConfig};
use diffsim::metrics::{self, MetricsLedger, RunReport};
use diffsim::microbench::{self, BenchSetup};
use diffsim::model;
use diffsim::scheduler::DispatchPolicy;
use diffsim::types::{micros_to_secs, MICROS_PER_SEC};
use diffsim::workload;

struct Outcome {
    name: &'static str,
    checks: Vec<(String, bool)>,
}

impl Outcome {
    fn new(name: &'static str) -> Self {
        Self { name, checks: Vec::new() }
    }

    fn check(&mut self, what: impl Into<String>, ok: bool) {
        self.checks.push((what.into(), ok));
    }

    fn passed(&self) -> bool {
        self.checks.iter().all(|(_, ok)| *ok)
    }

    fn print(&self) {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        let detail: Vec<String> = self.checks.iter().map(|(w, ok)| format!("{}{w}", if *ok { "" } else { "!" })).collect();
        println!("{} {verdict}: {}", self.name, detail.join("; "));
    }
}

struct Run {
    ledger: MetricsLedger,
    report: RunReport,
}

fn simulate(cfg: &RunConfig) -> Run {
    let ledger = diffsim::run(cfg).expect("simulation completes");
    let report = RunReport::from_ledger(&ledger, cfg.workload.compute_time_us).expect("report");
    Run { ledger, report }
}

fn preset_run(name: &str) -> Run {
    simulate(&config::preset(name).expect("known preset"))
}

fn secs(us: u64) -> f64 {
    micros_to_secs(us)
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol * target
}

fn ac1() -> Outcome {
    let mut o = Outcome::new("AC-1");
    let spec = workload::WorkloadSpec::default();
    let schedule = workload::build_schedule(&spec).expect("default schedule");
    let rates = schedule.rates();
    let generated = workload::generate(&spec, 2_000, 1).expect("default workload");
    o.check(format!("tasks={}", generated.tasks.len()), generated.tasks.len() == 250_000);
    for r in [59, 101, 132, 380] {
        o.check(format!("rate {r} present"), rates.contains(&r));
    }
    let max = rates.iter().copied().max().unwrap_or(0);
    o.check(format!("max rate={max}"), max == 1000 && *rates.last().unwrap() == 1000);
    let span = secs(schedule.total_span_us);
    o.check(format!("span={span:.3}s"), (span - 1414.9).abs() <= 0.1);
    o
}

fn ac2(base: &Run) -> Outcome {
    let mut o = Outcome::new("AC-2");
    let wet = secs(base.report.wet_us);
    o.check(format!("WET={wet:.1}s vs 5011s"), within(wet, 5011.0, 0.10));
    // Samples cover the minute ending at their timestamp; the minute whose ideal first
    // exceeds the store bandwidth starts the plateau.
    let series = &base.ledger.series;
    let saturate = series.iter().position(|s| s.ideal_bps > 4.4e9).expect("demand exceeds the store");
    let tracking = series[..saturate].iter().all(|s| within(s.throughput_bps(), s.ideal_bps, 0.05));
    o.check(format!("tracks ideal for {saturate} samples"), tracking);
    let plateau: Vec<f64> = series[saturate..series.len() - 1].iter().map(|s| s.throughput_bps()).collect();
    let mean = plateau.iter().sum::<f64>() / plateau.len() as f64;
    let all = plateau.iter().all(|&t| within(t, 4.4e9, 0.05));
    o.check(format!("plateau mean={:.3}Gb/s", mean / 1e9), within(mean, 4.4e9, 0.05) && all);
    o
}

fn ac3(gcc2: &Run) -> Outcome {
    let mut o = Outcome::new("AC-3");
    let wet = secs(gcc2.report.wet_us);
    o.check(format!("WET={wet:.1}s vs 1436s"), within(wet, 1436.0, 0.10));
    o.check(format!("HR_L={:.3} (need >=0.95)", gcc2.report.hr_local), gcc2.report.hr_local >= 0.95);
    o.check(format!("peak queue={}", gcc2.report.peak_queue), gcc2.report.peak_queue <= 15_000);
    o
}

fn ac4(gcc1: &Run, gcc2: &Run, base: &Run) -> Outcome {
    let mut o = Outcome::new("AC-4");
    let hr = gcc1.report.hr_local;
    o.check(format!("HR_L={hr:.3} (need in (0,0.64))"), hr > 0.0 && hr < 0.64);
    let frac = gcc1.report.persistent_bits_fraction;
    o.check(format!("store bytes={:.1}% (need >30%)", frac * 100.0), frac > 0.30);
    let (w1, w2, wb) = (gcc1.report.wet_us, gcc2.report.wet_us, base.report.wet_us);
    o.check(format!("WET {:.1} < {:.1} < {:.1}", secs(w2), secs(w1), secs(wb)), w2 < w1 && w1 < wb);
    o
}

fn ac5(gcc: &Run, mcu: &Run, mch: &Run, base: &Run) -> Outcome {
    let mut o = Outcome::new("AC-5");
    let wet = [gcc, mcu, mch, base].map(|r| r.report.wet_us);
    o.check(
        format!("WET gcc {:.3} < mcu {:.3} < mch {:.1} < fa {:.1}", secs(wet[0]), secs(wet[1]), secs(wet[2]), secs(wet[3])),
        wet.windows(2).all(|p| p[0] < p[1]),
    );
    let mch_util = mch.report.mean_cpu_util;
    o.check(format!("mch util={mch_util:.3} (need <0.6)"), mch_util < 0.6);
    let mcu_util = mcu.report.mean_cpu_util;
    o.check(format!("mcu util={mcu_util:.3} (need ~1.0, >=0.9)"), mcu_util >= 0.9);
    let hits = mch.report.hr_local + mch.report.hr_remote;
    o.check(format!("mch hit rate={hits:.3}"), hits >= 0.90);
    o
}

fn ac6(drp: &Run, fixed: &Run) -> Outcome {
    let mut o = Outcome::new("AC-6");
    let pi = metrics::performance_index(&[(3.5, 17.0), (3.5, 24.0)]);
    o.check(format!("PI=({:.3},{:.3})", pi[0], pi[1]), pi[0] == 1.0 && (pi[1] - 17.0 / 24.0).abs() < 1e-12);
    let (d, s) = (drp.report.cpu_hours, fixed.report.cpu_hours);
    o.check(format!("CPU-hours drp {d:.2} < static {s:.2}"), d < s);
    o
}

fn ac7() -> Outcome {
    let mut o = Outcome::new("AC-7");
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst_err: f64 = 0.0;
    let mut within_tick = 0;
    const CONFIGS: usize = 20;
    for i in 0..CONFIGS {
        let mut cfg = config::preset("contention-free").expect("preset");
        cfg.seed = i as u64;
        let rate = rng.random_range(5..=200);
        cfg.workload.initial_rate_per_s = rate;
        cfg.workload.max_rate_per_s = rate;
        cfg.workload.compute_time_us = rng.random_range(1_000..=200_000);
        cfg.sim.dispatch_overhead_us = rng.random_range(0..=5_000);
        cfg.node.slots = rng.random_range(1..=2);
        let nodes = rng.random_range(1..=8);
        cfg.provisioner.min_nodes = nodes;
        cfg.provisioner.max_nodes = nodes;
        let service = (cfg.workload.compute_time_us + cfg.sim.dispatch_overhead_us) as f64;
        // Enough tasks that one tick is well under 1% of the total.
        cfg.workload.task_count = 200 * (1 + (service * f64::from(rate) / MICROS_PER_SEC as f64).ceil() as u64);
        let ledger = diffsim::run(&cfg).expect("contention-free run");
        let executors = nodes * cfg.node.slots;
        let analytic = model::workload_execution_time(service, executors, f64::from(rate), cfg.workload.task_count);
        let tick = service + MICROS_PER_SEC as f64 / f64::from(rate);
        if (ledger.wet_us as f64 - analytic as f64).abs() <= tick {
            within_tick += 1;
        }
        worst_err = worst_err.max(metrics::model_error(ledger.wet_us, analytic));
    }
    o.check(format!("{within_tick}/{CONFIGS} within one tick"), within_tick == CONFIGS);
    o.check(format!("max model error={worst_err:.3}%"), worst_err <= 1.0);
    o
}

fn ac8() -> Outcome {
    let mut o = Outcome::new("AC-8");
    let setup = BenchSetup::default();
    let results: Vec<_> = DispatchPolicy::ALL.into_iter().map(|p| microbench::run(p, &setup)).collect();
    let rate = |p: DispatchPolicy| results.iter().find(|r| r.policy == p).expect("ran").decisions_per_sec();
    let fa = rate(DispatchPolicy::FirstAvailable);
    let aware = [DispatchPolicy::MaxCacheHit, DispatchPolicy::MaxComputeUtil, DispatchPolicy::GoodCacheCompute];
    for p in aware {
        o.check(format!("{}={:.0}/s", p.name(), rate(p)), rate(p) >= 1000.0);
    }
    o.check(format!("first-available={fa:.0}/s fastest"), aware.iter().all(|&p| fa > rate(p)));
    o
}

fn ac9() -> Outcome {
    let mut o = Outcome::new("AC-9");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut deterministic, mut conserved, mut capacity, mut feasible, mut hr_sum) = (true, true, true, true, true);
    const CASES: usize = 12;
    for i in 0..CASES {
        let mut cfg = RunConfig { seed: rng.random(), ..RunConfig::default() };
        cfg.scheduler.policy = DispatchPolicy::ALL[i % DispatchPolicy::ALL.len()];
        cfg.node.cache_bits = rng.random_range(1..=40) * 80_000_000;
        cfg.workload.file_count = rng.random_range(20..=400);
        cfg.workload.task_count = rng.random_range(200..=2000);
        cfg.workload.max_rate_per_s = rng.random_range(5..=60);
        cfg.workload.interval_us = 10 * MICROS_PER_SEC;
        cfg.provisioner.max_nodes = rng.random_range(1..=8);
        cfg.provisioner.latency_us = (MICROS_PER_SEC, 3 * MICROS_PER_SEC);
        let a = diffsim::run(&cfg).expect("small run");
        let b = diffsim::run(&cfg).expect("small run");
        deterministic &= a == b;
        conserved &= a.tasks.len() as u64 == cfg.workload.task_count;
        let delivered: f64 = a.bits_by_class.iter().sum();
        conserved &= (delivered - a.bits_requested).abs() <= 1e-6 * a.bits_requested.max(1.0);
        capacity &= a.capacity_violations == 0;
        feasible &= a.feasibility_violations == 0;
        let (l, c, s) = metrics::hit_rates(&a.hits).expect("accesses");
        hr_sum &= (l + c + s - 1.0).abs() < 1e-9;
    }
    o.check(format!("{CASES} configs deterministic"), deterministic);
    o.check("tasks and bits conserved", conserved);
    o.check("cache capacity respected", capacity);
    o.check("bandwidth feasible", feasible);
    o.check("hit rates sum to 1", hr_sum);
    o
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut outcomes = vec![ac1()];
    let base = preset_run("baseline-gpfs");
    outcomes.push(ac2(&base));
    let gcc2 = preset_run("gcc-2gb");
    outcomes.push(ac3(&gcc2));
    let gcc1 = preset_run("gcc-1gb");
    outcomes.push(ac4(&gcc1, &gcc2, &base));
    let gcc4 = preset_run("gcc-4gb");
    let mcu = preset_run("mcu-4gb");
    let mch = preset_run("mch-4gb");
    outcomes.push(ac5(&gcc4, &mcu, &mch, &base));
    let fixed = preset_run("static-gcc-4gb");
    outcomes.push(ac6(&gcc4, &fixed));
    outcomes.push(ac7());
    outcomes.push(ac8());
    outcomes.push(ac9());
    for o in &outcomes {
        o.print();
    }
    let failed = outcomes.iter().filter(|o| !o.passed()).count();
    println!("{} of {} criteria passed in {:.1}s", outcomes.len() - failed, outcomes.len(), start.elapsed().as_secs_f64());
    if failed == 0 || std::env::var_os("ACCEPTANCE_STRICT").is_none() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
