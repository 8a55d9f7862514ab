//! Fast sanity checks runnable from the binary.

use std::sync::Arc;

use anyhow::Result;
use cgluon::compress::{compress_contraction, compress_unbiased, CompressorKind, CompressorSpec};
use cgluon::engine::{AlgorithmVariant, RunConfig, Simulation, StepSchedule};
use cgluon::lmo::{sharp, LmoMode};
use cgluon::objective::Objective;
use cgluon::rng::{Stream, StreamSeeder};
use cgluon::schedule::{preset, PresetKind, ScheduleConstants};
use cgluon::tensor::{dual_norm, layer_norm, LayerSpec, LayeredTensor, Layout, NormKind, Shape};
use rand::Rng;

pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn sharp_attains_dual() -> Result<Check> {
    let mut rng = StreamSeeder::new(1).rng(Stream::Problem, 0, 0);
    let shape = Shape::Matrix(6, 4);
    let mut worst: f64 = 0.0;
    for kind in [NormKind::Euclidean, NormKind::Spectral, NormKind::Infinity] {
        for _ in 0..20 {
            let m: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s = sharp(&m, shape, kind, LmoMode::exact())?;
            let dual = dual_norm(&m, shape, kind)?;
            let inner: f64 = m.iter().zip(&s.direction).map(|(a, b)| a * b).sum();
            worst = worst.max((inner - dual).abs() / dual);
            worst = worst.max(layer_norm(&s.direction, shape, kind)? - 1.0);
        }
    }
    Ok(check("sharp operator attains the dual norm", worst <= 1e-8, format!("worst gap {worst:e}")))
}

fn compressors_behave() -> Result<Check> {
    let mut rng = StreamSeeder::new(2).rng(Stream::Compress, 0, 0);
    let x: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
    let unbiased = CompressorSpec::new(CompressorKind::RandKUnbiased(0.25));
    let draws = 20_000;
    let mut mean = vec![0.0; 32];
    for _ in 0..draws {
        compress_unbiased(&x, &unbiased, &mut rng)?.add_into(&mut mean, 1.0 / draws as f64);
    }
    let bias = mean.iter().zip(&x).map(|(m, v)| (m - v).abs()).fold(0.0, f64::max);
    let top = CompressorSpec::new(CompressorKind::TopK(0.25));
    let c = compress_contraction(&x, &top, &mut rng)?.to_dense();
    let res: f64 = x.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum();
    let total: f64 = x.iter().map(|a| a * a).sum();
    let passed = bias <= 0.1 && res <= 0.75 * total;
    Ok(check(
        "rand_k is unbiased and top_k contracts",
        passed,
        format!("max bias {bias:.3e}, top_k residual {:.3}", res / total),
    ))
}

fn runs_are_reproducible() -> Result<Check> {
    let layout = Layout::new(vec![Shape::Vector(6)])?;
    let mut rng = StreamSeeder::new(3).rng(Stream::Problem, 0, 0);
    let star = LayeredTensor::from_flat(&layout, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let obj = Arc::new(Objective::quadratic(&layout, vec![1.0], star, 8, 0.3, &mut rng)?);
    let mut cfg = RunConfig::new(AlgorithmVariant::CompressedGluon, vec![LayerSpec::euclidean(6)]);
    cfg.workers = 2;
    cfg.rounds = 50;
    cfg.q = 0.3;
    cfg.beta = 0.5;
    cfg.step = StepSchedule::Constant { eta: 0.05 };
    cfg.compressor = CompressorSpec::new(CompressorKind::RandKUnbiased(0.5));
    let a = Simulation::new(cfg.clone(), obj.clone())?.run()?;
    let b = Simulation::new(cfg, obj)?.run()?;
    let same = a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.loss.to_bits() == y.loss.to_bits());
    Ok(check("identical seeds give identical runs", same, format!("{} rows", a.len())))
}

fn preset_tuple() -> Result<Check> {
    let r = preset(PresetKind::CommOptimalCg, 0.1, 4, 1.0, &ScheduleConstants::single_layer())?;
    let f = &r.fragment;
    let passed = f.rounds == 1250 && f.q == 0.04 && f.big_batch == 25 && f.eta == 0.008 && r.all_hold();
    Ok(check(
        "comm-optimal preset at eps 0.1, n 4",
        passed,
        format!("K {} q {} B {} eta {}", f.rounds, f.q, f.big_batch, f.eta),
    ))
}

pub fn run_selftest() -> Result<Vec<Check>> {
    Ok(vec![
        sharp_attains_dual()?,
        compressors_behave()?,
        runs_are_reproducible()?,
        preset_tuple()?,
    ])
}
