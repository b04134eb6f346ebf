//! `delta`: run the continual-learning simulator, the sampling oracle,
//! multi-seed benchmarks, and protocol transcript inspection.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use delta_core::cloud::SamplingConfig;
use delta_core::harness::oracle::{oracle_optimal_plan, random_small_instance};
use delta_core::harness::runner::CheckpointMode;
use delta_core::harness::{generate_scenario, run_continual_learning, ExperimentConfig, Method, MetricsReport};
use delta_core::protocol::decode_stream;

#[derive(Parser, Debug)]
#[command(name = "delta", version, about = "Cloud-assisted data enrichment simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one method on one scenario.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "delta")]
        method: Method,
        /// Evaluate after every epoch instead of after every context.
        #[arg(long)]
        per_epoch: bool,
    },
    /// Compare delta, random and vanilla over several seeds.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Brute-force check of the sampling plan on random small instances.
    Oracle {
        #[arg(long, default_value_t = 20)]
        instances: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode a protocol transcript.
    Inspect { path: PathBuf },
    /// Print a scenario config template.
    Gen {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    budget_per_class: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    clusters_per_label: Option<usize>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    /// Config file (or the default benchmark) with flags applied on top.
    fn experiment(&self, seed: Option<u64>) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                ExperimentConfig::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => ExperimentConfig::benchmark(0),
        };
        if let Some(s) = seed.or(self.seed) {
            cfg = cfg.with_seed(s);
        }
        if let Some(b) = self.budget_per_class {
            cfg.run.sampling.budget_per_class = b;
        }
        if let Some(a) = self.alpha {
            cfg.run.sampling.alpha = a;
        }
        if let Some(t) = self.tau {
            cfg.run.matching.temperature = t;
        }
        if let Some(k) = self.clusters_per_label {
            cfg.run.clusters_per_label = k;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        if self.jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        Ok(rayon::ThreadPoolBuilder::new().num_threads(self.jobs).build()?)
    }
}

fn metrics_record(method: Method, seed: u64, m: &MetricsReport) -> serde_json::Value {
    json!({
        "method": method.as_str(),
        "seed": seed,
        "overall": m.overall,
        "plasticity": m.plasticity,
        "stability": m.stability,
        "per_context_final": m.per_context_final,
        "bytes_uploaded": m.bytes_uploaded,
        "bytes_downloaded": m.bytes_downloaded,
    })
}

fn write_file(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn cmd_run(common: &Common, method: Method, per_epoch: bool) -> Result<()> {
    let mut cfg = common.experiment(None)?;
    if per_epoch {
        cfg.run.checkpoints = CheckpointMode::PerEpoch;
    }
    let scenario = generate_scenario(&cfg.scenario)?;
    let pool = common.pool()?;
    let out = pool.install(|| run_continual_learning(&scenario, method, &cfg.run))?;
    let m = &out.metrics;
    let seed = cfg.scenario.seed;

    let mut history = String::new();
    for (t, row) in out.history.acc.iter().enumerate() {
        writeln!(history, "{}", json!({"context": t + 1, "acc": row}))?;
    }
    let mut summary = String::new();
    writeln!(summary, "method      {method}")?;
    writeln!(summary, "seed        {seed}")?;
    writeln!(summary, "overall     {:.4}", m.overall)?;
    writeln!(summary, "plasticity  {:.4}", m.plasticity)?;
    writeln!(summary, "stability   {:.4}", m.stability)?;
    for (t, a) in m.per_context_final.iter().enumerate() {
        writeln!(summary, "context {:<3} {:.4}", t + 1, a)?;
    }
    writeln!(summary, "uploaded    {} bytes", m.bytes_uploaded)?;
    writeln!(summary, "downloaded  {} bytes", m.bytes_downloaded)?;

    write_file(
        &common.out,
        "metrics.jsonl",
        format!("{}\n", metrics_record(method, seed, m)),
    )?;
    write_file(&common.out, "history.jsonl", history)?;
    write_file(&common.out, "summary.txt", &summary)?;
    write_file(&common.out, "config.toml", cfg.to_toml())?;
    if !out.transcript.frames.is_empty() {
        write_file(&common.out, "transcript.bin", out.transcript.to_bytes())?;
    }
    print!("{summary}");
    Ok(())
}

fn cmd_bench(common: &Common, seeds: u64) -> Result<()> {
    if seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let jobs: Vec<(u64, Method)> = (0..seeds)
        .flat_map(|s| Method::ALL.into_iter().map(move |m| (s, m)))
        .collect();
    let pool = common.pool()?;
    // results come back in job order whatever the thread count
    let results: Vec<(u64, Method, MetricsReport)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(seed, method)| -> Result<_> {
                let cfg = common.experiment(Some(seed))?;
                let scenario = generate_scenario(&cfg.scenario)?;
                let out = run_continual_learning(&scenario, method, &cfg.run)?;
                Ok((seed, method, out.metrics))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut raw = String::new();
    for (seed, method, m) in &results {
        writeln!(raw, "{}", metrics_record(*method, *seed, m))?;
    }
    let mut table = String::new();
    writeln!(
        table,
        "{:<8} {:>8} {:>10} {:>9} {:>12} {:>14}",
        "method", "overall", "plasticity", "stability", "uploaded", "downloaded"
    )?;
    let mut summary = Vec::new();
    for method in Method::ALL {
        let rows: Vec<&MetricsReport> = results.iter().filter(|r| r.1 == method).map(|r| &r.2).collect();
        let n = rows.len() as f64;
        let mean = |f: fn(&MetricsReport) -> f64| rows.iter().map(|m| f(m)).sum::<f64>() / n;
        let overall = mean(|m| m.overall);
        writeln!(
            table,
            "{:<8} {:>8.4} {:>10.4} {:>9.4} {:>12.0} {:>14.0}",
            method.as_str(),
            overall,
            mean(|m| m.plasticity),
            mean(|m| m.stability),
            mean(|m| m.bytes_uploaded as f64),
            mean(|m| m.bytes_downloaded as f64),
        )?;
        summary.push(json!({"method": method.as_str(), "seeds": seeds, "mean_overall": overall}));
    }
    let mut summary_lines = String::new();
    for s in summary {
        writeln!(summary_lines, "{s}")?;
    }
    write_file(&common.out, "bench.jsonl", raw)?;
    write_file(&common.out, "bench_summary.jsonl", summary_lines)?;
    write_file(&common.out, "bench.txt", &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_oracle(instances: u64, seed: u64, out: Option<&Path>) -> Result<()> {
    let cfg = SamplingConfig::default();
    let mut lines = String::new();
    let mut table = String::from("instance  budget  clusters  best          analytical    rel_gap\n");
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let inst = random_small_instance(seed.wrapping_add(k));
        let r = oracle_optimal_plan(
            &inst.weights,
            &inst.directory,
            &inst.assignment,
            &inst.cloud,
            inst.budget,
            &cfg,
        )?;
        worst = worst.max(r.relative_gap);
        writeln!(
            table,
            "{:<9} {:<7} {:<9} {:<13.6e} {:<13.6e} {:.5}",
            k,
            inst.budget,
            inst.directory.len(),
            r.best_value,
            r.analytical_value,
            r.relative_gap
        )?;
        writeln!(
            lines,
            "{}",
            serde_json::to_string(&json!({"instance": k, "result": r}))?
        )?;
    }
    writeln!(table, "worst relative gap {worst:.5}")?;
    if let Some(dir) = out {
        write_file(dir, "oracle.jsonl", lines)?;
        write_file(dir, "oracle.txt", &table)?;
    }
    print!("{table}");
    Ok(())
}

fn cmd_inspect(path: &Path) -> Result<()> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    for (i, msg) in decode_stream(&bytes)?.iter().enumerate() {
        let body = serde_json::to_value(msg)?;
        println!("{}", json!({"frame": i, "type": msg.kind(), "message": body}));
    }
    Ok(())
}

fn cmd_gen(out: Option<&Path>, seed: u64) -> Result<()> {
    let text = ExperimentConfig::benchmark(seed).to_toml();
    match out {
        Some(p) => fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Run {
            common,
            method,
            per_epoch,
        } => cmd_run(common, *method, *per_epoch),
        Command::Bench { common, seeds } => cmd_bench(common, *seeds),
        Command::Oracle { instances, seed, out } => cmd_oracle(*instances, *seed, out.as_deref()),
        Command::Inspect { path } => cmd_inspect(path),
        Command::Gen { out, seed } => cmd_gen(out.as_deref(), *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
