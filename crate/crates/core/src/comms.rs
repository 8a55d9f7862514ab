//! Uplink accounting and the analytic per-round cost model.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::compress::{compress, Accounting, CompressorKind, CompressorSpec};
use crate::engine::AlgorithmVariant;
use crate::error::{Error, Result};
use crate::rng::{Stream, StreamSeeder};

/// Exact uplink ledger in scalar units. Bytes are `units * bytes_per_scalar`.
#[derive(Debug, Clone)]
pub struct CommLedger {
    bytes_per_scalar: u64,
    pending: Vec<u64>,
    worker_totals: Vec<u64>,
    rounds: Vec<u64>,
    cumulative: u64,
}

impl CommLedger {
    pub fn new(workers: usize, bytes_per_scalar: u64) -> Self {
        CommLedger {
            bytes_per_scalar,
            pending: vec![0; workers],
            worker_totals: vec![0; workers],
            rounds: Vec::new(),
            cumulative: 0,
        }
    }

    pub fn workers(&self) -> usize {
        self.pending.len()
    }

    /// Charge `units` to `worker` in the open round.
    pub fn record_broadcast(&mut self, worker: usize, units: u64) {
        self.pending[worker] += units;
        self.worker_totals[worker] += units;
    }

    /// Units charged so far in the open round.
    pub fn open_round_units(&self) -> u64 {
        self.pending.iter().sum()
    }

    /// Close the open round and return its total.
    pub fn close_round(&mut self) -> u64 {
        let total = self.open_round_units();
        self.pending.iter_mut().for_each(|p| *p = 0);
        self.rounds.push(total);
        self.cumulative += total;
        total
    }

    pub fn round_totals(&self) -> &[u64] {
        &self.rounds
    }

    pub fn cumulative_units(&self) -> u64 {
        self.cumulative
    }

    pub fn cumulative_bytes(&self) -> u64 {
        self.cumulative * self.bytes_per_scalar
    }

    pub fn bytes_per_scalar(&self) -> u64 {
        self.bytes_per_scalar
    }

    pub fn worker_totals(&self) -> &[u64] {
        &self.worker_totals
    }
}

/// Everything that determines the size of one round's uplink traffic.
#[derive(Debug, Clone)]
pub struct RoundCostModel {
    pub variant: AlgorithmVariant,
    pub workers: usize,
    pub q: f64,
    pub layer_dims: Vec<usize>,
    pub compressor: CompressorSpec,
}

impl RoundCostModel {
    pub fn new(
        variant: AlgorithmVariant,
        workers: usize,
        q: f64,
        layer_dims: Vec<usize>,
        compressor: CompressorSpec,
    ) -> Result<Self> {
        if workers == 0 || layer_dims.is_empty() || layer_dims.contains(&0) {
            return Err(Error::Config("cost model needs workers and non-empty layers".into()));
        }
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::Config(format!("q must lie in [0, 1], got {q}")));
        }
        compressor.validate()?;
        variant.check_compressor(&compressor)?;
        Ok(RoundCostModel {
            variant,
            workers,
            q,
            layer_dims,
            compressor,
        })
    }

    pub fn dim(&self) -> usize {
        self.layer_dims.iter().sum()
    }

    /// Per-worker units of a compressed message, from `omega` or `delta` in
    /// theoretical accounting.
    fn sparse_payload(&self) -> f64 {
        let spec = &self.compressor;
        self.layer_dims
            .iter()
            .map(|&d| {
                let df = d as f64;
                match spec.accounting {
                    Accounting::Practical => spec.sparse_units(d) as f64,
                    Accounting::Theoretical => match (spec.omega(d), spec.delta(d)) {
                        (Some(omega), _) => df / (omega + 1.0),
                        (None, Some(delta)) => delta * df,
                        (None, None) => spec.sparse_units(d) as f64,
                    },
                }
            })
            .sum()
    }

    /// Per-worker units sent in a `u = 1` round.
    fn dense_payload(&self) -> f64 {
        let d = self.dim() as f64;
        match self.variant {
            AlgorithmVariant::CompressedGluonMvr => d + self.sparse_payload(),
            AlgorithmVariant::CompressedGluonEfMvr => 2.0 * d,
            _ => d,
        }
    }
}

/// Expected uplink units of one round:
/// `n (1 + q * dense + (1 - q) * sparse)`, where `dense = d` and
/// `sparse = d / (omega + 1)` (unbiased) or `delta * d` (contraction) for the
/// plain variants. The dense-only baseline pays `n d` with no coin.
pub fn expected_round_cost(model: &RoundCostModel) -> f64 {
    let n = model.workers as f64;
    if model.variant == AlgorithmVariant::GluonBaseline {
        return n * model.dim() as f64;
    }
    n * (1.0 + model.q * model.dense_payload() + (1.0 - model.q) * model.sparse_payload())
}

/// Simulate `rounds` rounds of message sizing only (fresh coin per round,
/// actual compressed messages of Gaussian vectors) and return
/// `|empirical mean - expected| / expected`.
pub fn ledger_vs_expected(model: &RoundCostModel, rounds: usize, seed: u64) -> Result<f64> {
    if rounds == 0 {
        return Err(Error::Config("ledger_vs_expected needs at least one round".into()));
    }
    let seeder = StreamSeeder::new(seed);
    let mut ledger = CommLedger::new(model.workers, 4);
    let dim = model.dim() as u64;
    let baseline = model.variant == AlgorithmVariant::GluonBaseline;
    for k in 0..rounds as u64 {
        let u = if baseline {
            true
        } else {
            draw_coin(&seeder, model.q, k)
        };
        for w in 0..model.workers {
            if !baseline {
                ledger.record_broadcast(w, 1);
            }
            let needs_sparse = !u || model.variant == AlgorithmVariant::CompressedGluonMvr;
            if u {
                let extra = if model.variant == AlgorithmVariant::CompressedGluonEfMvr { 2 } else { 1 };
                ledger.record_broadcast(w, extra * dim);
            }
            if needs_sparse && !baseline {
                let mut rng = seeder.rng(Stream::Compress, w, k);
                for &d in &model.layer_dims {
                    let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                    let msg = compress(&x, &model.compressor, &mut rng)?;
                    ledger.record_broadcast(w, msg.sent_units as u64);
                }
            }
        }
        ledger.close_round();
    }
    let expected = expected_round_cost(model);
    let mean = ledger.cumulative_units() as f64 / rounds as f64;
    if expected == 0.0 {
        return Ok(if mean == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok((mean - expected).abs() / expected)
}

/// The restart coin for round `k + 1`, drawn from the shared coin stream.
pub fn draw_coin(seeder: &StreamSeeder, q: f64, k: u64) -> bool {
    if q >= 1.0 {
        true
    } else if q <= 0.0 {
        false
    } else {
        seeder.rng(Stream::Coin, 0, k).random::<f64>() < q
    }
}

/// Shorthand used by tests and presets: single-layer rand-k cost model.
pub fn rand_k_model(workers: usize, q: f64, d: usize, k_fraction: f64) -> Result<RoundCostModel> {
    RoundCostModel::new(
        AlgorithmVariant::CompressedGluon,
        workers,
        q,
        vec![d],
        CompressorSpec::new(CompressorKind::RandKUnbiased(k_fraction)),
    )
}
