//! Running a config and writing its trace and summary.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use cgluon::engine::{RoundRecord, Simulation};
use cgluon::objective::solve_reference_optimum;
use cgluon::schedule::PresetReport;
use serde::Serialize;
use serde_json::json;

use crate::config::{ExperimentConfig, Resolved};

pub const CSV_HEADER: [&str; 9] = [
    "step",
    "u_flag",
    "loss",
    "suboptimality",
    "stationarity",
    "round_uplink_units",
    "cum_uplink_units",
    "cum_uplink_bytes",
    "grad_oracles",
];

pub const OUTPUT_DIR_ENV: &str = "CGLUON_OUTPUT_DIR";

#[derive(Debug, Clone, Serialize)]
pub struct RepetitionOutput {
    pub repetition: usize,
    pub seed: u64,
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub final_loss: f64,
    pub final_suboptimality: Option<f64>,
    pub final_stationarity: f64,
    pub total_uplink_units: u64,
    pub total_uplink_bytes: u64,
    pub total_grad_oracles: u64,
}

/// Seed of repetition `r`; repetition 0 keeps the configured seed.
pub fn repetition_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_add((r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn output_dir(config: &ExperimentConfig, override_dir: Option<&Path>) -> PathBuf {
    if let Some(d) = override_dir {
        return d.to_path_buf();
    }
    if let Some(d) = &config.output_dir {
        return d.clone();
    }
    std::env::var_os(OUTPUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("results"))
}

/// Reference optimum used for the suboptimality column, if available.
pub fn reference_value(config: &ExperimentConfig, resolved: &Resolved) -> Result<Option<f64>> {
    let obj = &resolved.objective;
    if let Some(v) = obj.known_minimum() {
        return Ok(Some(v));
    }
    if !config.report_f_star {
        return Ok(None);
    }
    let sol = solve_reference_optimum(
        obj,
        &obj.initial_point(),
        config.f_star_tolerance,
        config.f_star_max_iterations,
    )
    .context("computing the reference optimum")?;
    log::info!("f* = {} after {} iterations", sol.value, sol.iterations);
    Ok(Some(sol.value))
}

pub fn write_trace(path: &Path, records: &[RoundRecord], f_star: Option<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(CSV_HEADER)?;
    for r in records {
        let sub = f_star.map(|f| format!("{:e}", r.loss - f)).unwrap_or_default();
        w.write_record([
            r.step.to_string(),
            u8::from(r.u_flag).to_string(),
            format!("{:e}", r.loss),
            sub,
            format!("{:e}", r.stationarity),
            r.round_units.to_string(),
            r.cum_units.to_string(),
            r.cum_bytes.to_string(),
            r.grad_oracles.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn preset_json(report: &PresetReport) -> serde_json::Value {
    let f = &report.fragment;
    json!({
        "kind": f.kind.name(),
        "variant": f.variant.name(),
        "workers": f.workers,
        "rounds": f.rounds,
        "q": f.q,
        "big_batch": f.big_batch,
        "eta": f.eta,
        "alpha": f.alpha,
        "beta": f.beta(),
        "compressor": f.compressor.kind.to_string(),
        "omega": f.omega,
        "delta": f.delta,
        "conditions": report.conditions.iter().map(|c| json!({"condition": c.description, "holds": c.holds})).collect::<Vec<_>>(),
        "warnings": report.warnings,
    })
}

/// Run every repetition of `config`, writing `<name>.csv` and
/// `<name>.summary.json` (or `<name>.rep<r>.*` when repeated).
pub fn run_experiment(config: &ExperimentConfig, override_dir: Option<&Path>) -> Result<Vec<RepetitionOutput>> {
    let dir = output_dir(config, override_dir);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let resolved = config.resolve()?;
    let f_star = reference_value(config, &resolved)?;
    let d = resolved.run.dim();
    let n = resolved.run.workers;

    let mut outputs = Vec::with_capacity(config.repetitions);
    for rep in 0..config.repetitions {
        let seed = repetition_seed(config.seed, rep);
        let stem = if config.repetitions == 1 {
            config.name.clone()
        } else {
            format!("{}.rep{rep}", config.name)
        };
        let mut run = resolved.run.clone();
        run.seed = seed;
        let started = Instant::now();
        let mut sim = Simulation::new(run.clone(), resolved.objective.clone())?;
        let records = sim.run()?;
        let wall = started.elapsed().as_secs_f64();
        let last = records.last().expect("run always yields the initial row");

        let csv_path = dir.join(format!("{stem}.csv"));
        write_trace(&csv_path, &records, f_star)?;

        let total_oracles = last.grad_oracles;
        let monitor = sim.monitor_report();
        let summary = json!({
            "name": config.name,
            "repetition": rep,
            "seed": seed,
            "config": config.raw,
            "resolved": {
                "variant": run.variant.name(),
                "workers": n,
                "rounds": run.rounds,
                "q": run.q,
                "big_batch": run.big_batch,
                "minibatch": run.minibatch,
                "beta": run.beta,
                "step": format!("{:?}", run.step),
                "compressor": run.compressor.kind.to_string(),
                "accounting": format!("{:?}", run.compressor.accounting),
                "scale_y_by_inv_b": run.scale_y_by_inv_b,
                "layers": run.layers.iter().map(|l| json!({"norm": l.norm.name(), "weight": l.weight, "shape": l.shape.to_string()})).collect::<Vec<_>>(),
                "dimension": d,
            },
            "f_star": f_star,
            "final": {
                "loss": last.loss,
                "suboptimality": f_star.map(|f| last.loss - f),
                "stationarity": last.stationarity,
            },
            "total_uplink_units": last.cum_units,
            "total_uplink_bytes": last.cum_bytes,
            "total_grad_oracles": total_oracles,
            "normalization_nd": (n * d) as u64,
            "degenerate_lmo_steps": sim.degenerate_steps(),
            "ef_monitor": run.monitor.map(|_| json!({
                "checks": monitor.checks,
                "violations": monitor.violations,
                "worst_ratio": monitor.worst_ratio,
            })),
            "preset": resolved.preset.as_ref().map(preset_json),
            "wall_time_seconds": wall,
        });
        let summary_path = dir.join(format!("{stem}.summary.json"));
        fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)
            .with_context(|| format!("writing {}", summary_path.display()))?;

        outputs.push(RepetitionOutput {
            repetition: rep,
            seed,
            csv: csv_path,
            summary: summary_path,
            final_loss: last.loss,
            final_suboptimality: f_star.map(|f| last.loss - f),
            final_stationarity: last.stationarity,
            total_uplink_units: last.cum_units,
            total_uplink_bytes: last.cum_bytes,
            total_grad_oracles: total_oracles,
        });
    }
    Ok(outputs)
}
