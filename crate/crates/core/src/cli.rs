//! Command-line surface: proposition verification, training runs,
//! hyperparameter sweeps, run-directory reports, and the executable
//! quickstart walkthrough.
//!
//! Exit codes: 0 success, 1 a check or acceptance condition failed,
//! 2 usage or configuration error.

use crate::bench::corrupt::apply_corruption;
use crate::bench::eval::evaluate_policy;
use crate::bench::train::{write_weights_csv, Trainer, WeightSample};
use crate::bench::world::generate_world;
use crate::config::RunConfig;
use crate::error::{PtrError, Result};
use crate::metrics::{write_json, write_metrics_csv};
use crate::reweight::{effective_bounds, kl_bound};
use crate::theory::run_verification;
use clap::{Args, Parser, Subcommand};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Default output root when `--out` is not given.
pub const OUT_ROOT_ENV: &str = "PTR_OUT_ROOT";

#[derive(Debug, Parser)]
#[command(
    name = "ptr",
    about = "Posterior-transition reweighting: verification, training, and reports",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the Monte Carlo verification suite for the three propositions
    /// and the KL budget laws.
    Verify(CommonArgs),
    /// Train one policy; writes the resolved config, metrics CSV, weight
    /// dump, summary JSON, and a final checkpoint into the run directory.
    Train(TrainArgs),
    /// Train one run per parameter value with shared seeds; writes a
    /// combined CSV of success, final mean score, and weight stability.
    Sweep(SweepArgs),
    /// Aggregate a directory of finished runs into a paired comparison
    /// table and a weight histogram.
    Report(ReportArgs),
    /// Execute the walkthrough and regenerate docs/QUICKSTART.md,
    /// failing when previously embedded outputs drift.
    Quickstart(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override (single value; sweep accepts a comma list).
    #[arg(long)]
    seed: Option<String>,
    /// Output directory (default: $PTR_OUT_ROOT or ./runs).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// One of: tau0, beta0, w_max, alpha, gamma.
    #[arg(long)]
    param: String,
    /// Comma-separated parameter values.
    #[arg(long)]
    values: String,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Directory holding finished run subdirectories.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses argv and runs one command; returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with exit 0
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Verify(args) => cmd_verify(args),
        Command::Train(args) => cmd_train(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Report(args) => cmd_report(args),
        Command::Quickstart(args) => cmd_quickstart(args),
    };
    match outcome {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn out_root(flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| {
        std::env::var_os(OUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
    })
}

fn parse_single_seed(s: &Option<String>) -> Result<Option<u64>> {
    match s {
        None => Ok(None),
        Some(text) => text
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| PtrError::InvalidArgument(format!("bad seed '{text}'"))),
    }
}

fn parse_seed_list(s: &Option<String>) -> Result<Vec<u64>> {
    match s {
        None => Ok(vec![0, 1, 2]),
        Some(text) => text
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<u64>()
                    .map_err(|_| PtrError::InvalidArgument(format!("bad seed '{t}'")))
            })
            .collect(),
    }
}

fn load_config(path: &Option<PathBuf>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_verify(args: CommonArgs) -> Result<bool> {
    let cfg = load_config(&args.config, parse_single_seed(&args.seed)?)?;
    let out = out_root(args.out);
    std::fs::create_dir_all(&out)?;
    let report = run_verification(&cfg.verify, cfg.seed)?;
    for check in &report.checks {
        println!(
            "{} {:<42} observed {:>13.6e}  threshold {:>13.6e}",
            if check.pass { "PASS" } else { "FAIL" },
            check.name,
            check.observed,
            check.threshold
        );
    }
    println!(
        "verification: {} ({} checks, seed {})",
        if report.pass { "pass" } else { "FAIL" },
        report.checks.len(),
        report.seed
    );
    write_json(&out.join("verify_report.json"), &serde_json::to_value(&report)?)?;
    Ok(report.pass)
}

fn weight_std(samples: &[WeightSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let n = samples.len() as f64;
    let mean = samples.iter().map(|w| w.mixed).sum::<f64>() / n;
    (samples.iter().map(|w| (w.mixed - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Trains one run into `dir` and returns its summary.
fn train_into(cfg: &RunConfig, dir: &Path, resume: bool) -> Result<serde_json::Value> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.json"), cfg.resolved_json()?)?;
    let ds = generate_world(&cfg.world, cfg.seed)?;
    let ds = apply_corruption(&ds, &cfg.corruption, &cfg.world, cfg.seed)?;
    let resumed = resume && dir.join("checkpoint.json").exists();
    let mut trainer = if resumed {
        Trainer::resume(cfg, dir, "checkpoint")?
    } else {
        Trainer::new(cfg)?
    };
    trainer.train(&ds, Some(dir))?;
    trainer.save_checkpoint(dir, "checkpoint")?;
    let metrics_path = dir.join("metrics.csv");
    if resumed && metrics_path.exists() {
        // keep rows logged before the checkpoint; append the new ones
        let mut body = std::fs::read_to_string(&metrics_path)?;
        for row in &trainer.rows {
            body.push_str(&row.csv_line());
            body.push('\n');
        }
        std::fs::write(&metrics_path, body)?;
    } else {
        write_metrics_csv(&metrics_path, &trainer.rows)?;
    }
    let weights = trainer.weight_report(&ds)?;
    write_weights_csv(&dir.join("weights.csv"), &weights)?;
    let eval = evaluate_policy(&trainer.policy, &cfg.world, &cfg.eval, cfg.seed)?;
    let (_, w_upper) = effective_bounds(&cfg.weights);
    let summary = serde_json::json!({
        "kind": "train_run",
        "label": if cfg.train.force_uniform { "sft" } else { "ptr" },
        "seed": cfg.seed,
        "steps": trainer.step,
        "n_records": ds.records.len(),
        "success_rate": eval.success_rate,
        "mean_final_distance": eval.mean_final_distance,
        "chunk_mse": eval.chunk_mse,
        "final_ema_t": trainer.controller.ema_t,
        "final_tau": trainer.controller.tau,
        "final_beta": trainer.controller.beta,
        "weight_std": weight_std(&weights),
        "weight_upper_bound": w_upper,
        "kl_budget": kl_bound(&cfg.weights),
        "config_hash": cfg.config_hash(),
    });
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn cmd_train(args: TrainArgs) -> Result<bool> {
    let cfg = load_config(&args.common.config, parse_single_seed(&args.common.seed)?)?;
    let dir = out_root(args.common.out);
    let summary = train_into(&cfg, &dir, args.resume)?;
    println!(
        "trained {} steps (seed {}): success {} -> {}",
        summary["steps"],
        summary["seed"],
        summary["success_rate"],
        dir.display()
    );
    Ok(true)
}

fn apply_sweep_value(cfg: &mut RunConfig, param: &str, value: f64) -> Result<()> {
    match param {
        "tau0" => cfg.scorer.tau = value,
        "beta0" => cfg.weights.beta = value,
        "w_max" => cfg.weights.w_max = value,
        "alpha" => cfg.weights.alpha = value,
        "gamma" => cfg.pool.gamma = value,
        other => {
            return Err(PtrError::InvalidArgument(format!(
                "unknown sweep parameter '{other}' (expected tau0, beta0, w_max, alpha, gamma)"
            )))
        }
    }
    cfg.validate()
}

fn cmd_sweep(args: SweepArgs) -> Result<bool> {
    let base = load_config(&args.common.config, None)?;
    let seeds = parse_seed_list(&args.common.seed)?;
    let values: Vec<f64> = args
        .values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| PtrError::InvalidArgument(format!("bad value '{v}'")))
        })
        .collect::<Result<_>>()?;
    if values.is_empty() {
        return Err(PtrError::InvalidArgument("no sweep values given".into()));
    }
    // validate the parameter name before any training happens
    {
        let mut probe = base.clone();
        apply_sweep_value(&mut probe, &args.param, values[0])?;
    }
    let out = out_root(args.common.out);
    std::fs::create_dir_all(&out)?;
    let mut csv = String::from("param,value,seed,success_rate,final_mean_t,weight_stability\n");
    for &value in &values {
        for &seed in &seeds {
            let mut cfg = base.clone();
            cfg.seed = seed;
            apply_sweep_value(&mut cfg, &args.param, value)?;
            let ds = generate_world(&cfg.world, seed)?;
            let ds = apply_corruption(&ds, &cfg.corruption, &cfg.world, seed)?;
            let mut trainer = Trainer::new(&cfg)?;
            trainer.train(&ds, None)?;
            let eval = evaluate_policy(&trainer.policy, &cfg.world, &cfg.eval, seed)?;
            let weights = trainer.weight_report(&ds)?;
            let stability = 1.0 / weight_std(&weights).max(1e-12);
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                args.param, value, seed, eval.success_rate, trainer.controller.ema_t, stability
            );
            println!(
                "sweep {}={} seed {}: success {:.3}",
                args.param, value, seed, eval.success_rate
            );
        }
    }
    std::fs::write(out.join("sweep.csv"), csv)?;
    Ok(true)
}

struct RunArtifacts {
    label: String,
    seed: u64,
    success: f64,
    weight_upper: f64,
    mixed_weights: Vec<f64>,
}

fn read_run_dir(dir: &Path) -> Result<Option<RunArtifacts>> {
    let summary_path = dir.join("summary.json");
    if !summary_path.exists() {
        return Ok(None);
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&summary_path)?)?;
    if summary["kind"].as_str() != Some("train_run") {
        return Ok(None);
    }
    let mut mixed = Vec::new();
    let weights_path = dir.join("weights.csv");
    if weights_path.exists() {
        for (i, line) in std::fs::read_to_string(&weights_path)?.lines().enumerate() {
            if i == 0 {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() == 5 {
                if let Ok(v) = cols[3].parse::<f64>() {
                    mixed.push(v);
                }
            }
        }
    }
    Ok(Some(RunArtifacts {
        label: summary["label"].as_str().unwrap_or("ptr").to_string(),
        seed: summary["seed"].as_u64().unwrap_or(0),
        success: summary["success_rate"].as_f64().unwrap_or(0.0),
        weight_upper: summary["weight_upper_bound"].as_f64().unwrap_or(4.0),
        mixed_weights: mixed,
    }))
}

fn cmd_report(args: ReportArgs) -> Result<bool> {
    let root = out_root(args.out);
    let mut runs: Vec<RunArtifacts> = Vec::new();
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(&root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for dir in dirs {
        if let Some(run) = read_run_dir(&dir)? {
            runs.push(run);
        }
    }
    if runs.is_empty() {
        return Err(PtrError::EmptyInput("no finished runs under the report root"));
    }

    // paired deltas by seed
    let mut csv = String::from("seed,ptr_success,sft_success,delta\n");
    let mut seeds: Vec<u64> = runs.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    for seed in seeds {
        let ptr = runs.iter().find(|r| r.seed == seed && r.label == "ptr");
        let sft = runs.iter().find(|r| r.seed == seed && r.label == "sft");
        if let (Some(p), Some(s)) = (ptr, sft) {
            let _ = writeln!(
                csv,
                "{},{},{},{}",
                seed,
                p.success,
                s.success,
                p.success - s.success
            );
        }
    }
    std::fs::write(root.join("comparison.csv"), csv)?;

    // aggregated weight histogram over the reweighted runs: 40 fixed bins
    // spanning [0, clipped-weight upper bound]
    let upper = runs
        .iter()
        .filter(|r| r.label == "ptr")
        .map(|r| r.weight_upper)
        .fold(0.0f64, f64::max)
        .max(1.0);
    const BINS: usize = 40;
    let mut counts = [0u64; BINS];
    for run in runs.iter().filter(|r| r.label == "ptr") {
        for &w in &run.mixed_weights {
            let bin = ((w / upper) * BINS as f64).floor() as usize;
            counts[bin.min(BINS - 1)] += 1;
        }
    }
    let mut hist = String::from("bin_lo,bin_hi,count\n");
    for (i, &c) in counts.iter().enumerate() {
        let lo = upper * i as f64 / BINS as f64;
        let hi = upper * (i + 1) as f64 / BINS as f64;
        let _ = writeln!(hist, "{lo},{hi},{c}");
    }
    std::fs::write(root.join("weights_histogram.csv"), hist)?;
    println!("report written under {}", root.display());
    Ok(true)
}

/// Renders the walkthrough document from live command outputs.
fn quickstart_document(cfg: &RunConfig, scratch: &Path) -> Result<String> {
    let mut doc = String::new();
    doc.push_str("# Quickstart\n\n");
    doc.push_str(
        "Generated by `ptr quickstart`; every number below is produced by the\n\
         commands shown, never typed by hand. Rerunning the command checks the\n\
         document against fresh output and fails on drift.\n\n",
    );

    // 1. verification suite
    doc.push_str("## 1. Verify the propositions\n\n```text\n$ ptr verify --seed 0\n");
    let verify = run_verification(&cfg.verify, 0)?;
    for check in &verify.checks {
        let _ = writeln!(
            doc,
            "{} {}",
            if check.pass { "PASS" } else { "FAIL" },
            check.name
        );
    }
    let _ = writeln!(
        doc,
        "verification: {} ({} checks)\n```\n",
        if verify.pass { "pass" } else { "FAIL" },
        verify.checks.len()
    );

    // 2. the conservativeness budget at defaults
    let budget = kl_bound(&cfg.weights);
    doc.push_str("## 2. The weight-clipping KL budget\n\n");
    let _ = writeln!(
        doc,
        "With the default clip range [{}, {}], the implicit sampling\n\
         distribution can drift from uniform by at most\n\n```text\nkl_bound = {:.4} nats\n```\n",
        cfg.weights.w_min, cfg.weights.w_max, budget
    );

    // 3. a short training run
    doc.push_str("## 3. Train a short run\n\n```text\n$ ptr train --seed 0 --out runs/demo\n");
    let mut short = cfg.clone();
    short.seed = 0;
    short.train.steps = 500;
    short.train.checkpoint_interval = 0;
    let summary = train_into(&short, &scratch.join("demo"), false)?;
    let _ = writeln!(
        doc,
        "trained {} steps (seed 0): success {:.3}\nfinal mean score {:.4}, weight std {:.4}\n```\n",
        summary["steps"],
        summary["success_rate"].as_f64().unwrap_or(0.0),
        summary["final_ema_t"].as_f64().unwrap_or(0.0),
        summary["weight_std"].as_f64().unwrap_or(0.0)
    );

    // 4. uniform-fallback equivalence
    doc.push_str("## 4. Alpha = 0 equals uniform training bit-for-bit\n\n");
    let mut tiny = cfg.clone();
    tiny.seed = 0;
    tiny.world.trajs_per_pair = 3;
    tiny.world.n_tasks = 2;
    tiny.train.steps = 60;
    tiny.train.nce_warmup = 10;
    tiny.controller.log_interval = 20;
    tiny.weights.alpha = 0.0;
    let mut uniform = tiny.clone();
    uniform.train.force_uniform = true;
    let ds = generate_world(&tiny.world, tiny.seed)?;
    let ds = apply_corruption(&ds, &tiny.corruption, &tiny.world, tiny.seed)?;
    let mut a = Trainer::new(&tiny)?;
    a.train(&ds, None)?;
    let mut b = Trainer::new(&uniform)?;
    b.train(&ds, None)?;
    let identical = a.policy.params() == b.policy.params();
    let _ = writeln!(
        doc,
        "```text\nalpha=0 vs uniform over {} steps: {}\n```\n",
        tiny.train.steps,
        if identical { "pass (identical parameters)" } else { "FAIL" }
    );
    if !identical {
        return Err(PtrError::InvalidArgument(
            "alpha=0 equivalence failed while rendering the quickstart".into(),
        ));
    }

    doc.push_str(
        "## 5. Where to go next\n\n\
         - `ptr train --config my.json --out runs/full` for a full run\n\
         - `ptr sweep --param tau0 --values 0.06,0.12,0.20 --out runs/sweep`\n\
         - `ptr report --out runs` to aggregate paired runs\n",
    );
    Ok(doc)
}

fn cmd_quickstart(args: CommonArgs) -> Result<bool> {
    let cfg = load_config(&args.config, None)?;
    let doc_dir = args.out.unwrap_or_else(|| PathBuf::from("docs"));
    let scratch = tempdir_path()?;
    let rendered = quickstart_document(&cfg, &scratch)?;
    std::fs::remove_dir_all(&scratch).ok();
    std::fs::create_dir_all(&doc_dir)?;
    let target = doc_dir.join("QUICKSTART.md");
    if target.exists() {
        let existing = std::fs::read_to_string(&target)?;
        if existing != rendered {
            eprintln!(
                "quickstart drift: {} no longer matches live output; \
                 delete the file to regenerate",
                target.display()
            );
            return Ok(false);
        }
        println!("quickstart verified: {}", target.display());
    } else {
        std::fs::write(&target, rendered)?;
        println!("quickstart written: {}", target.display());
    }
    Ok(true)
}

fn tempdir_path() -> Result<PathBuf> {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.subsec_nanos())
        .unwrap_or(0);
    let base = std::env::temp_dir().join(format!(
        "ptr-quickstart-{}-{nanos}",
        std::process::id()
    ));
    std::fs::create_dir_all(&base)?;
    Ok(base)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_sweep_parameter_is_a_usage_error() {
        let mut cfg = RunConfig::default();
        assert!(apply_sweep_value(&mut cfg, "tau0", 0.1).is_ok());
        assert!(apply_sweep_value(&mut cfg, "temperature", 0.1).is_err());
    }

    #[test]
    fn seed_lists_parse() {
        assert_eq!(parse_seed_list(&None).unwrap(), vec![0, 1, 2]);
        assert_eq!(
            parse_seed_list(&Some("4, 5,6".into())).unwrap(),
            vec![4, 5, 6]
        );
        assert!(parse_seed_list(&Some("x".into())).is_err());
        assert_eq!(parse_single_seed(&Some("7".into())).unwrap(), Some(7));
        assert!(parse_single_seed(&Some("4,5".into())).is_err());
    }

    #[test]
    fn help_exits_zero_and_bad_flag_exits_two() {
        assert_eq!(run(["ptr", "--help"]), 0);
        assert_eq!(run(["ptr", "no-such-command"]), 2);
        assert_eq!(run(["ptr", "train", "--bogus-flag"]), 2);
    }
}
