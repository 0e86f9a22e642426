use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sftdoa::harness::report::{self, toa_statistics};
use sftdoa::harness::{EstimatorSelection, Experiment, ExperimentConfig};
use sftdoa::parallel::Execution;
use sftdoa::Error;

#[derive(Parser)]
#[command(name = "sftdoa", version, about = "Sampling-free TDOA localization simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single-node arrival-time experiment at BS 1.
    SimulateToa(RunArgs),
    /// Full localization Monte Carlo run.
    SimulateTdoa(RunArgs),
    /// Localization run plus the per-estimator AEDE table.
    Sweep(RunArgs),
    /// Check a config without running any trials.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum)]
    estimator: Option<EstimatorSelection>,
    #[arg(long)]
    no_noise: bool,
    /// Write the received traces of position 0, run 0 under `traces/`.
    #[arg(long)]
    dump_traces: bool,
    /// Run trials on the calling thread only.
    #[arg(long)]
    sequential: bool,
}

impl RunArgs {
    fn config(&self) -> sftdoa::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(estimator) = self.estimator {
            cfg.estimator = estimator;
        }
        if self.no_noise {
            cfg.noise = false;
        }
        Ok(cfg)
    }

    fn execution(&self) -> Execution {
        if self.sequential { Execution::Sequential } else { Execution::Parallel }
    }
}

fn dump_traces(exp: &Experiment, out: &Path) -> sftdoa::Result<()> {
    let dir = out.join("traces");
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
    for (bs, trace) in exp.received_traces(0, 0)?.iter().enumerate() {
        trace.write_csv(&dir.join(format!("pos0_run0_bs{}.csv", bs + 1)))?;
    }
    exp.pulse().trace.write_csv(&dir.join("pulse.csv"))
}

fn create_out(out: &Path) -> sftdoa::Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::Io { path: out.to_path_buf(), source: e })
}

/// Validates everything and creates the output directory before any trial runs.
fn prepare_run(args: &RunArgs) -> sftdoa::Result<(ExperimentConfig, Experiment)> {
    let cfg = args.config()?;
    let exp = Experiment::prepare(&cfg)?;
    create_out(&args.out)?;
    if args.dump_traces {
        dump_traces(&exp, &args.out)?;
    }
    Ok((cfg, exp))
}

fn run(cli: Cli) -> sftdoa::Result<()> {
    match cli.command {
        Command::ValidateConfig { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let exp = Experiment::prepare(&cfg)?;
            println!(
                "config ok: T_p = {:.4e} s, {} estimators, {} trials",
                exp.pulse().duration,
                exp.estimators().len(),
                cfg.n_pos * cfg.n_run
            );
        }
        Command::SimulateToa(args) => {
            let (_, exp) = prepare_run(&args)?;
            let records = exp.toa_experiment(args.execution())?;
            report::write_rows(&args.out.join("toa.csv"), &records)?;
            let true_toa = records.first().map_or(0.0, |r| r.true_toa_s);
            println!("true TOA {true_toa:.6e} s");
            for (name, mean, sd) in toa_statistics(&records) {
                println!("{name:<22} mean {mean:.6e} s  bias {:+.3e} s  sd {sd:.3e} s", mean - true_toa);
            }
        }
        Command::SimulateTdoa(args) => {
            let (cfg, exp) = prepare_run(&args)?;
            let output = exp.run(args.execution())?;
            let summary = report::write_run_outputs(&args.out, &cfg, &output)?;
            for p in &summary.points {
                println!("{:<22} AEDE {:.4e} m", p.estimator, p.aede_m);
            }
        }
        Command::Sweep(args) => {
            let (cfg, exp) = prepare_run(&args)?;
            let output = exp.run(args.execution())?;
            report::write_run_outputs(&args.out, &cfg, &output)?;
            let rows = report::sweep_report(&output)?;
            report::write_rows(&args.out.join("sweep.csv"), &rows)?;
            println!("{:<22} {:>8} {:>12} {:>12} {:>10}", "estimator", "alpha", "f_s [Hz]", "AEDE [m]", "time [s]");
            for r in rows {
                let alpha = r.alpha.map_or("-".to_string(), |a| a.to_string());
                let rate = r.rate_hz.map_or("-".to_string(), |f| format!("{f:.3e}"));
                println!("{:<22} {alpha:>8} {rate:>12} {:>12.4e} {:>10.3}", r.estimator, r.aede_m, r.runtime_s);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
