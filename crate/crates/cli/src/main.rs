use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use cgluon::schedule::{expected_oracle_count, preset, PresetKind, ScheduleConstants};
use cgluon_cli::{compare, config::ExperimentConfig, experiment::run_experiment, selftest};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cgluon", version, about = "Simulate compressed Gluon optimizers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config.
    Run {
        config: PathBuf,
        /// Overrides output.dir and CGLUON_OUTPUT_DIR.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print the parameters a preset selects.
    Preset {
        kind: PresetKind,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        /// Only needed for the L1 step-size condition.
        #[arg(long)]
        l1: Option<f64>,
        /// Dimension for the analytic communication total.
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Uplink units each trace needs to reach a suboptimality threshold.
    Compare {
        #[arg(long)]
        threshold: f64,
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
    /// Quick internal consistency checks.
    Selftest,
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, output } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            for rep in run_experiment(&cfg, output.as_deref())? {
                println!(
                    "rep {} seed {}: loss {:.6e}, units {}, oracles {} -> {}",
                    rep.repetition,
                    rep.seed,
                    rep.final_loss,
                    rep.total_uplink_units,
                    rep.total_grad_oracles,
                    rep.csv.display()
                );
            }
            Ok(true)
        }
        Command::Preset { kind, eps, n, c, l1, dim } => {
            let mut constants = ScheduleConstants::single_layer();
            if let Some(l1) = l1 {
                constants.l1 = vec![l1];
            }
            let report = preset(kind, eps, n, c, &constants)?;
            let f = &report.fragment;
            println!("preset      {}", f.kind);
            println!("variant     {}", f.variant);
            println!("rounds K    {}", f.rounds);
            println!("q           {}", f.q);
            println!("big batch B {}", f.big_batch);
            println!("eta         {}", f.eta);
            println!("alpha       {}", f.alpha);
            println!("beta        {}", f.beta());
            println!("compressor  {}", f.compressor.kind);
            println!("oracles     {}", expected_oracle_count(f));
            if let Some(d) = dim {
                println!("uplink      {}", f.analytic_total_cost(d));
            }
            for cond in &report.conditions {
                println!("[{}] {}", if cond.holds { "ok" } else { "FAILS" }, cond.description);
            }
            for w in &report.warnings {
                println!("warning: {w}");
            }
            Ok(report.all_hold())
        }
        Command::Compare { threshold, traces } => {
            let rows = compare::compare(&traces, threshold)?;
            print!("{}", compare::render(&rows, threshold));
            Ok(true)
        }
        Command::Selftest => {
            let checks = selftest::run_selftest()?;
            let mut ok = true;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
