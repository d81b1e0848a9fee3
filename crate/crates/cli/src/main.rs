//! `mecsim` command-line front end.
//!
//! Exit codes: 0 success, 1 bad input (arguments, config, trace, occupied
//! output directory), 2 runtime failure (I/O).

mod tables;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mecsim::engine::sweep;
use mecsim::evt::{fit_gpd_pot, parse_trace, peaks_over_threshold, write_trace};
use mecsim::par::{self, Execution};
use mecsim::report::{self, RowContext};
use mecsim::{run_simulation, PolicyKind, Scenario};

#[derive(Parser)]
#[command(name = "mecsim", version, about = "URLLC-aware edge computing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its metrics.
    Run(RunArgs),
    /// Run every point of the scenario's `[sweep]` grid.
    Sweep(SweepArgs),
    /// Fit a GPD to a trace of values, one per line.
    FitGpd(FitArgs),
    /// Check a scenario file without running it.
    ValidateConfig(ValidateArgs),
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML). Defaults to the reference deployment.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "MECSIM_OUT", default_value = "mecsim-out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    policy: Option<PolicyKind>,
    /// Horizon in slots.
    #[arg(long)]
    horizon: Option<u64>,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Worker threads; defaults to one per core.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Subtract this threshold and keep only values above it.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    config: PathBuf,
}

enum Failure {
    Input(String),
    Runtime(String),
}

type Outcome = Result<(), Failure>;

fn load(path: Option<&Path>) -> Result<Scenario, Failure> {
    let Some(path) = path else {
        return Ok(Scenario::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    Scenario::from_toml_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn apply_overrides(mut s: Scenario, c: &Common) -> Result<Scenario, Failure> {
    if let Some(seed) = c.seed {
        s.network.rng_seed = seed;
        if let Some(sw) = &mut s.sweep {
            sw.seeds = vec![seed];
        }
    }
    if let Some(policy) = c.policy {
        s.run.policy = policy;
        if let Some(sw) = &mut s.sweep {
            sw.policies = vec![policy];
        }
    }
    if let Some(h) = c.horizon {
        s.network.horizon_slots = h;
    }
    s.validate().map_err(|e| Failure::Input(format!("after overrides: {e}")))?;
    Ok(s)
}

fn prepare_out(dir: &Path, overwrite: bool) -> Outcome {
    if dir.exists() {
        let occupied = fs::read_dir(dir)
            .map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?
            .next()
            .is_some();
        if occupied && !overwrite {
            return Err(Failure::Input(format!(
                "{} is not empty; pass --overwrite to reuse it",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))
}

fn write(dir: &Path, name: &str, contents: &str) -> Outcome {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn run(args: RunArgs) -> Outcome {
    let s = apply_overrides(load(args.common.config.as_deref())?, &args.common)?;
    let net = s.build().map_err(|e| Failure::Input(e.to_string()))?;
    prepare_out(&args.common.out, args.common.overwrite)?;
    let rec = run_simulation(net, &s.options());
    let out = &args.common.out;
    let ctx = RowContext::for_scenario(0, &s, None);
    write(out, "metrics.csv", &report::metrics_csv([(ctx, &rec)]))?;
    write(out, "summary.json", &report::summary_json([(ctx, &rec)]))?;
    write(out, "matching.csv", &report::matching_csv(&rec))?;
    write(out, "virtual_queues.csv", &report::virtual_queue_csv(&rec))?;
    if !rec.decisions.is_empty() {
        write(out, "decisions.csv", &report::decision_log_csv(&rec))?;
    }
    if s.run.record_exceedances {
        write(out, "exceedances.txt", &write_trace(&rec.offload_exceedances))?;
    }
    write(out, "scenario.toml", &s.to_toml_string())?;
    println!(
        "{} UEs, {} slots, policy {}: mean delay {:.4} s, mean power {:.4} W, split ratio {:.3}",
        rec.num_ues, rec.horizon, rec.policy, rec.network.avg_delay_s, rec.network.avg_total_power_w, rec.network.split_ratio
    );
    Ok(())
}

fn run_sweep(args: SweepArgs) -> Outcome {
    let s = apply_overrides(load(args.common.config.as_deref())?, &args.common)?;
    let grid = s.sweep.clone().unwrap_or_default();
    prepare_out(&args.common.out, args.common.overwrite)?;
    let results = par::with_workers(args.workers, || sweep(&s, &grid, Execution::Parallel))
        .map_err(|e| Failure::Input(e.to_string()))?;
    let out = &args.common.out;
    let rows = report::sweep_rows(&results, &s);
    write(out, "metrics.csv", &report::metrics_csv(rows.iter().copied()))?;
    write(out, "summary.json", &report::summary_json(rows.iter().copied()))?;
    write(out, "split_ratio.csv", &tables::split_ratio(&rows))?;
    write(out, "power_vs_v.csv", &tables::power_vs_v(&rows))?;
    write(out, "delay_reliability.csv", &tables::delay_reliability(&rows))?;
    write(out, "snr_cdf.csv", &tables::snr_cdf(&rows))?;
    for r in &results {
        let dir = out.join("points").join(format!("{:04}", r.index));
        fs::create_dir_all(&dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
        write(&dir, "matching.csv", &report::matching_csv(&r.record))?;
        write(&dir, "virtual_queues.csv", &report::virtual_queue_csv(&r.record))?;
        if !r.record.decisions.is_empty() {
            write(&dir, "decisions.csv", &report::decision_log_csv(&r.record))?;
        }
    }
    write(out, "scenario.toml", &s.to_toml_string())?;
    println!("{} grid points written to {}", results.len(), out.display());
    Ok(())
}

fn fit(args: FitArgs) -> Outcome {
    let text = fs::read_to_string(&args.trace)
        .map_err(|e| Failure::Input(format!("{}: {e}", args.trace.display())))?;
    let values = parse_trace(&text).map_err(|e| Failure::Input(format!("{}: {e}", args.trace.display())))?;
    let threshold = args.threshold.unwrap_or(0.0);
    let excess = match args.threshold {
        Some(t) => peaks_over_threshold(&values, t),
        None => values,
    };
    let f = fit_gpd_pot(&excess, threshold).map_err(|e| Failure::Input(e.to_string()))?;
    println!("threshold {}", f.threshold);
    println!("exceedances {}", f.exceedance_count);
    println!("scale {}", f.gpd.scale);
    println!("shape {}", f.gpd.shape);
    println!("ks {}", f.ks_statistic);
    Ok(())
}

fn validate(args: ValidateArgs) -> Outcome {
    let s = load(Some(&args.config))?;
    let n = s.sweep.as_ref().map_or(1, |g| mecsim::engine::expand_grid(&s, g).len());
    println!("{}: ok ({} UEs, {} slots, {} run(s))", args.config.display(), s.network.num_ues, s.network.horizon_slots, n);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => run_sweep(a),
        Command::FitGpd(a) => fit(a),
        Command::ValidateConfig(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
