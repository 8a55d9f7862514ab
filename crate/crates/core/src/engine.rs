//! The round loop: compressed Gluon, its error-feedback and momentum
//! variance-reduction variants, and the two uncompressed baselines.
//!
//! Every worker keeps a full replica of `X`, `X_prev`, `M` and `g`, and applies
//! the same aggregation to the same broadcast messages. Replicas are compared
//! bitwise after every round.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::comms::{draw_coin, CommLedger};
use crate::compress::{compress_contraction, compress_unbiased, CompressorKind, CompressorSpec, Message};
use crate::data::{sample_batch, shard_dataset, Shard};
use crate::error::{Error, Result};
use crate::lmo::{lmo_update, LmoMode};
use crate::objective::Objective;
use crate::rng::{Stream, StreamSeeder};
use crate::tensor::{l2, stationarity, LayerSpec, LayeredTensor};

/// Round index used for the initialization big batch.
const INIT_ROUND: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AlgorithmVariant {
    CompressedGluon,
    CompressedGluonEf,
    CompressedGluonMvr,
    CompressedGluonEfMvr,
    /// Gluon with a batch of `B` samples per worker every round.
    GluonBaseline,
    /// Recursive estimator with a plain gradient step `X - eta t_i g`.
    VrMarinaBaseline,
}

impl AlgorithmVariant {
    pub const ALL: [AlgorithmVariant; 6] = [
        AlgorithmVariant::CompressedGluon,
        AlgorithmVariant::CompressedGluonEf,
        AlgorithmVariant::CompressedGluonMvr,
        AlgorithmVariant::CompressedGluonEfMvr,
        AlgorithmVariant::GluonBaseline,
        AlgorithmVariant::VrMarinaBaseline,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmVariant::CompressedGluon => "compressed_gluon",
            AlgorithmVariant::CompressedGluonEf => "compressed_gluon_ef",
            AlgorithmVariant::CompressedGluonMvr => "compressed_gluon_mvr",
            AlgorithmVariant::CompressedGluonEfMvr => "compressed_gluon_ef_mvr",
            AlgorithmVariant::GluonBaseline => "gluon_baseline",
            AlgorithmVariant::VrMarinaBaseline => "vr_marina_baseline",
        }
    }

    pub fn is_ef(&self) -> bool {
        matches!(
            self,
            AlgorithmVariant::CompressedGluonEf | AlgorithmVariant::CompressedGluonEfMvr
        )
    }

    pub fn is_mvr(&self) -> bool {
        matches!(
            self,
            AlgorithmVariant::CompressedGluonMvr | AlgorithmVariant::CompressedGluonEfMvr
        )
    }

    /// Whether rounds draw and pay for the restart coin.
    pub fn uses_coin(&self) -> bool {
        *self != AlgorithmVariant::GluonBaseline
    }

    pub fn check_compressor(&self, spec: &CompressorSpec) -> Result<()> {
        let ok = match self {
            AlgorithmVariant::GluonBaseline => spec.kind == CompressorKind::Identity,
            v if v.is_ef() => spec.is_contraction(),
            _ => spec.is_unbiased(),
        };
        if ok {
            Ok(())
        } else {
            let need = match self {
                AlgorithmVariant::GluonBaseline => "the identity compressor",
                v if v.is_ef() => "a contraction compressor (top_k, rand_k_contraction, zero, identity)",
                _ => "an unbiased compressor (rand_k, identity)",
            };
            Err(Error::Config(format!(
                "variant {} requires {need}, got {}",
                self.name(),
                spec.kind
            )))
        }
    }
}

impl fmt::Display for AlgorithmVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlgorithmVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AlgorithmVariant::ALL
            .into_iter()
            .find(|v| v.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown algorithm variant `{s}`")))
    }
}

/// LMO radius schedule. The radius of layer `i` is `t_i * eta` or
/// `t_i * gamma * ||M_i||_2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    Constant { eta: f64 },
    MomentumProportional { gamma: f64 },
}

impl StepSchedule {
    fn scalar(&self) -> f64 {
        match *self {
            StepSchedule::Constant { eta } => eta,
            StepSchedule::MomentumProportional { gamma } => gamma,
        }
    }
}

/// Constants for the error-buffer stability monitor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfMonitor {
    pub l_hat: f64,
    pub delta_hat: f64,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub variant: AlgorithmVariant,
    pub workers: usize,
    pub rounds: u64,
    pub q: f64,
    pub big_batch: usize,
    /// Examples per stochastic sample `xi`.
    pub minibatch: usize,
    pub beta: f64,
    pub step: StepSchedule,
    pub layers: Vec<LayerSpec>,
    pub compressor: CompressorSpec,
    pub lmo: LmoMode,
    pub scale_y_by_inv_b: bool,
    pub seed: u64,
    pub bytes_per_scalar: u64,
    pub monitor: Option<EfMonitor>,
    pub track_shadow: bool,
    pub initial_point: Option<LayeredTensor>,
}

impl RunConfig {
    /// Defaults: one worker, zero rounds, `q = 1`, `B = 1`, `beta = 0`,
    /// `eta = 0.01`, identity compressor, exact LMO.
    pub fn new(variant: AlgorithmVariant, layers: Vec<LayerSpec>) -> Self {
        RunConfig {
            variant,
            workers: 1,
            rounds: 0,
            q: 1.0,
            big_batch: 1,
            minibatch: 1,
            beta: 0.0,
            step: StepSchedule::Constant { eta: 0.01 },
            layers,
            compressor: CompressorSpec::default(),
            lmo: LmoMode::default(),
            scale_y_by_inv_b: false,
            seed: 0,
            bytes_per_scalar: 4,
            monitor: None,
            track_shadow: false,
            initial_point: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.q) {
            return Err(Error::Config(format!("q must lie in [0, 1], got {}", self.q)));
        }
        if self.big_batch == 0 {
            return Err(Error::Config("big_batch must be >= 1".into()));
        }
        if self.minibatch == 0 {
            return Err(Error::Config("minibatch must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must lie in [0, 1), got {}", self.beta)));
        }
        let s = self.step.scalar();
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::Config(format!("step size must be positive, got {s}")));
        }
        if self.layers.is_empty() {
            return Err(Error::Config("at least one layer is required".into()));
        }
        for l in &self.layers {
            l.validate()?;
        }
        if self.bytes_per_scalar == 0 {
            return Err(Error::Config("bytes_per_scalar must be >= 1".into()));
        }
        self.compressor.validate()?;
        self.lmo.validate()?;
        self.variant.check_compressor(&self.compressor)
    }

    pub fn dim(&self) -> usize {
        self.layers.iter().map(|l| l.shape.len()).sum()
    }
}

/// One row of the run trace. Step 0 is the initialization; the record of
/// round `k` has `step = k + 1` and reports `f(X^{k+1})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord {
    pub step: u64,
    /// Whether the round used the big-batch restart.
    pub u_flag: bool,
    pub loss: f64,
    pub stationarity: f64,
    pub round_units: u64,
    pub cum_units: u64,
    pub cum_bytes: u64,
    /// Cumulative stochastic samples drawn across all workers.
    pub grad_oracles: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MonitorReport {
    pub checks: u64,
    pub violations: u64,
    /// Largest observed `||e||^2 / bound`.
    pub worst_ratio: f64,
}

#[derive(Debug, Clone)]
struct Replica {
    x: LayeredTensor,
    x_prev: LayeredTensor,
    m: LayeredTensor,
    g: LayeredTensor,
}

impl Replica {
    fn bitwise_eq(&self, other: &Replica) -> bool {
        self.x.bitwise_eq(&other.x)
            && self.x_prev.bitwise_eq(&other.x_prev)
            && self.m.bitwise_eq(&other.m)
            && self.g.bitwise_eq(&other.g)
    }
}

/// What one worker broadcasts in a round.
struct WorkerOutput {
    big: Option<Vec<Message>>,
    y: Option<Vec<Message>>,
    error: Option<LayeredTensor>,
    big_batches: Vec<Vec<usize>>,
    single: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
struct ShadowIncrement {
    x: LayeredTensor,
    x_prev: LayeredTensor,
    batches: Vec<Vec<usize>>,
    scale: f64,
}

#[derive(Debug, Clone)]
struct ShadowLog {
    restart_x: LayeredTensor,
    restart_batches: Vec<Vec<Vec<usize>>>,
    increments: Vec<ShadowIncrement>,
}

/// A running simulation.
pub struct Simulation {
    config: RunConfig,
    objective: Arc<Objective>,
    seeder: StreamSeeder,
    shards: Vec<Shard>,
    replicas: Vec<Replica>,
    errors: Vec<LayeredTensor>,
    ledger: CommLedger,
    k: u64,
    u: bool,
    oracles: u64,
    last_aggregate: Option<LayeredTensor>,
    shadow: Option<ShadowLog>,
    monitor: MonitorReport,
    degenerate: u64,
    init_record: RoundRecord,
}

fn to_messages(t: &LayeredTensor) -> Vec<Message> {
    (0..t.num_layers()).map(|i| Message::dense(t.block(i).to_vec())).collect()
}

/// `sum_tau (1/n) decompress(messages_tau)`, summed in worker order.
fn aggregate<'a>(template: &LayeredTensor, parts: impl Iterator<Item = &'a [Message]>, n: usize) -> LayeredTensor {
    let mut acc = template.clone();
    acc.fill_zero();
    let inv = 1.0 / n as f64;
    for msgs in parts {
        for (i, msg) in msgs.iter().enumerate() {
            msg.add_into(acc.block_mut(i), inv);
        }
    }
    acc
}

/// `(1/B) sum_j grad f_{xi_j}(x)`.
fn big_batch_gradient(obj: &Objective, x: &LayeredTensor, batches: &[Vec<usize>]) -> LayeredTensor {
    let mut sum = LayeredTensor::zeros(x.layout());
    let mut scratch = LayeredTensor::zeros(x.layout());
    for batch in batches {
        obj.grad_into(x, batch, &mut scratch);
        sum.add_assign(&scratch);
    }
    sum.scale(1.0 / batches.len() as f64);
    sum
}

/// `grad f_xi(x) - grad f_xi(x_prev)`.
fn gradient_difference(obj: &Objective, x: &LayeredTensor, x_prev: &LayeredTensor, batch: &[usize]) -> LayeredTensor {
    let mut a = LayeredTensor::zeros(x.layout());
    let mut b = LayeredTensor::zeros(x.layout());
    obj.grad_into(x, batch, &mut a);
    obj.grad_into(x_prev, batch, &mut b);
    a.sub_assign(&b);
    a
}

impl Simulation {
    /// Validate the configuration, shard the data and bootstrap `M` from
    /// `B` samples per worker at `X^0`.
    pub fn new(config: RunConfig, objective: Arc<Objective>) -> Result<Self> {
        config.validate()?;
        let layout = objective.layout();
        if !layout.conforms(&config.layers) {
            return Err(Error::Shape(format!(
                "layer specs do not match the objective layout ({} parameters)",
                layout.dim()
            )));
        }
        let x0 = match &config.initial_point {
            Some(x) if x.layout().as_ref() == layout.as_ref() => x.clone(),
            Some(_) => return Err(Error::Shape("initial point does not match the layout".into())),
            None => objective.initial_point(),
        };
        if !x0.is_finite() {
            return Err(Error::NonFinite("initial point".into()));
        }
        let n = config.workers;
        let seeder = StreamSeeder::new(config.seed);
        let shards = shard_dataset(objective.num_examples(), n, &mut seeder.rng(Stream::Shard, 0, 0))?;

        let mut ledger = CommLedger::new(n, config.bytes_per_scalar);
        let mut init_batches = Vec::with_capacity(n);
        let mut parts = Vec::with_capacity(n);
        for (w, shard) in shards.iter().enumerate() {
            let batches = Self::draw_big_batch(&config, &seeder, shard, w, INIT_ROUND);
            let g = big_batch_gradient(&objective, &x0, &batches);
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("initial gradient of worker {w}")));
            }
            ledger.record_broadcast(w, x0.dim() as u64);
            parts.push(to_messages(&g));
            init_batches.push(batches);
        }
        let g = aggregate(&x0, parts.iter().map(|p| p.as_slice()), n);
        let round_units = ledger.close_round();
        let oracles = (config.big_batch * n) as u64;
        let replica = Replica {
            x: x0.clone(),
            x_prev: x0.clone(),
            m: g.clone(),
            g,
        };
        let (loss, grad) = objective.full_value_and_grad(&x0)?;
        let init_record = RoundRecord {
            step: 0,
            u_flag: true,
            loss,
            stationarity: stationarity(&grad, &config.layers)?,
            round_units,
            cum_units: ledger.cumulative_units(),
            cum_bytes: ledger.cumulative_bytes(),
            grad_oracles: oracles,
        };
        let shadow = config.track_shadow.then(|| ShadowLog {
            restart_x: x0.clone(),
            restart_batches: init_batches,
            increments: Vec::new(),
        });
        let errors = if config.variant.is_ef() {
            vec![LayeredTensor::zeros(layout); n]
        } else {
            Vec::new()
        };
        Ok(Simulation {
            replicas: vec![replica; n],
            errors,
            seeder,
            shards,
            ledger,
            k: 0,
            u: true,
            oracles,
            last_aggregate: None,
            shadow,
            monitor: MonitorReport::default(),
            degenerate: 0,
            init_record,
            objective,
            config,
        })
    }

    fn draw_big_batch(config: &RunConfig, seeder: &StreamSeeder, shard: &Shard, w: usize, k: u64) -> Vec<Vec<usize>> {
        let mut rng = seeder.rng(Stream::BigBatch, w, k);
        (0..config.big_batch)
            .map(|_| sample_batch(shard, config.minibatch, &mut rng))
            .collect()
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn objective(&self) -> &Arc<Objective> {
        &self.objective
    }

    pub fn shards(&self) -> &[Shard] {
        &self.shards
    }

    /// Number of rounds executed so far.
    pub fn round(&self) -> u64 {
        self.k
    }

    /// The flag `u^k` the next round will use.
    pub fn next_flag(&self) -> bool {
        self.u || self.config.variant == AlgorithmVariant::GluonBaseline
    }

    pub fn init_record(&self) -> RoundRecord {
        self.init_record
    }

    pub fn iterate(&self) -> &LayeredTensor {
        &self.replicas[0].x
    }

    pub fn previous_iterate(&self) -> &LayeredTensor {
        &self.replicas[0].x_prev
    }

    pub fn momentum(&self) -> &LayeredTensor {
        &self.replicas[0].m
    }

    pub fn estimator(&self) -> &LayeredTensor {
        &self.replicas[0].g
    }

    /// Error buffer of `worker` (ef variants only).
    pub fn error_buffer(&self, worker: usize) -> Option<&LayeredTensor> {
        self.errors.get(worker)
    }

    /// The (possibly `1/B`-scaled) average message of the last round.
    pub fn last_aggregate(&self) -> Option<&LayeredTensor> {
        self.last_aggregate.as_ref()
    }

    pub fn ledger(&self) -> &CommLedger {
        &self.ledger
    }

    pub fn monitor_report(&self) -> MonitorReport {
        self.monitor
    }

    /// Layer updates skipped because the momentum block was exactly zero.
    pub fn degenerate_steps(&self) -> u64 {
        self.degenerate
    }

    /// Replace `X` in every replica (used to freeze a trajectory).
    pub fn override_iterate(&mut self, x: &LayeredTensor) -> Result<()> {
        if !x.same_layout(self.iterate()) {
            return Err(Error::Shape("override iterate has the wrong layout".into()));
        }
        for r in &mut self.replicas {
            r.x = x.clone();
        }
        Ok(())
    }

    /// Add `eps` to the first coordinate of `g` in every replica. Test hook.
    pub fn perturb_estimator(&mut self, eps: f64) {
        for r in &mut self.replicas {
            r.g.as_mut_slice()[0] += eps;
        }
    }

    fn worker_round(&self, w: usize, u: bool) -> Result<WorkerOutput> {
        let cfg = &self.config;
        let variant = cfg.variant;
        let obj = &self.objective;
        let replica = &self.replicas[w];
        let sends_y = variant != AlgorithmVariant::GluonBaseline && (!u || variant.is_mvr());
        let mut out = WorkerOutput {
            big: None,
            y: None,
            error: None,
            big_batches: Vec::new(),
            single: None,
        };
        if u {
            let batches = Self::draw_big_batch(cfg, &self.seeder, &self.shards[w], w, self.k);
            let g = big_batch_gradient(obj, &replica.x, &batches);
            if !g.is_finite() {
                return Err(Error::NonFinite(format!(
                    "big-batch gradient of worker {w} in round {}",
                    self.k
                )));
            }
            out.big = Some(to_messages(&g));
            out.big_batches = batches;
        }
        if sends_y {
            let batch = sample_batch(&self.shards[w], cfg.minibatch, &mut self.seeder.rng(Stream::Single, w, self.k));
            let delta = gradient_difference(obj, &replica.x, &replica.x_prev, &batch);
            if !delta.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient difference of worker {w} in round {}",
                    self.k
                )));
            }
            let mut crng = self.seeder.rng(Stream::Compress, w, self.k);
            if variant.is_ef() {
                let mut v = delta;
                v.add_assign(&self.errors[w]);
                if u {
                    out.y = Some(to_messages(&v));
                } else {
                    let mut msgs = Vec::with_capacity(v.num_layers());
                    for i in 0..v.num_layers() {
                        msgs.push(compress_contraction(v.block(i), &cfg.compressor, &mut crng)?);
                    }
                    for (i, msg) in msgs.iter().enumerate() {
                        msg.add_into(v.block_mut(i), -1.0);
                    }
                    out.y = Some(msgs);
                    out.error = Some(v);
                }
            } else {
                let mut msgs = Vec::with_capacity(delta.num_layers());
                for i in 0..delta.num_layers() {
                    msgs.push(compress_unbiased(delta.block(i), &cfg.compressor, &mut crng)?);
                }
                out.y = Some(msgs);
            }
            out.single = Some(batch);
        }
        if u && variant.is_ef() {
            out.error = Some(LayeredTensor::zeros(replica.x.layout()));
        }
        Ok(out)
    }

    fn radii(&self, m: &LayeredTensor) -> Vec<f64> {
        self.config
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| match self.config.step {
                StepSchedule::Constant { eta } => l.weight * eta,
                StepSchedule::MomentumProportional { gamma } => l.weight * gamma * l2(m.block(i)),
            })
            .collect()
    }

    /// Execute one round and return its record.
    pub fn step(&mut self) -> Result<RoundRecord> {
        let cfg = &self.config;
        let variant = cfg.variant;
        let n = cfg.workers;
        let u = self.next_flag();
        let u_next = variant.uses_coin() && draw_coin(&self.seeder, cfg.q, self.k);

        let outputs = (0..n)
            .map(|w| self.worker_round(w, u))
            .collect::<Result<Vec<_>>>()?;

        for (w, out) in outputs.iter().enumerate() {
            if variant.uses_coin() {
                self.ledger.record_broadcast(w, 1);
            }
            for msgs in [&out.big, &out.y].into_iter().flatten() {
                let units: usize = msgs.iter().map(|m| m.sent_units).sum();
                self.ledger.record_broadcast(w, units as u64);
            }
        }
        let samples_per_worker = if u { cfg.big_batch } else { 0 } + usize::from(outputs[0].single.is_some());
        self.oracles += (samples_per_worker * n) as u64;

        let scale = if !u && cfg.scale_y_by_inv_b {
            1.0 / cfg.big_batch as f64
        } else {
            1.0
        };
        let beta = cfg.beta;
        let mut new_replicas = Vec::with_capacity(n);
        let mut aggregate_y = None;
        for r in &self.replicas {
            let mut g = if u {
                aggregate(&r.g, outputs.iter().map(|o| o.big.as_deref().unwrap_or(&[])), n)
            } else {
                r.g.clone()
            };
            let ybar = outputs[0].y.is_some().then(|| {
                let mut y = aggregate(&r.g, outputs.iter().map(|o| o.y.as_deref().unwrap_or(&[])), n);
                if scale != 1.0 {
                    y.scale(scale);
                }
                y
            });
            if !u {
                if let Some(y) = &ybar {
                    g.add_assign(y);
                }
            }
            let mut m = r.m.clone();
            {
                let ms = m.as_mut_slice();
                for (mj, gj) in ms.iter_mut().zip(g.as_slice()) {
                    *mj = beta * *mj + (1.0 - beta) * gj;
                }
                if variant.is_mvr() {
                    if let Some(y) = &ybar {
                        for (mj, yj) in ms.iter_mut().zip(y.as_slice()) {
                            *mj += beta * yj;
                        }
                    }
                }
            }
            let x_new = if variant == AlgorithmVariant::VrMarinaBaseline {
                let mut x = r.x.clone();
                for (i, l) in cfg.layers.iter().enumerate() {
                    let eta = l.weight * cfg.step.scalar();
                    for (xj, gj) in x.block_mut(i).iter_mut().zip(g.block(i)) {
                        *xj -= eta * gj;
                    }
                }
                x
            } else {
                let radii = self.radii(&m);
                let (x, degenerate) = lmo_update(&r.x, &m, &cfg.layers, &radii, cfg.lmo)?;
                if aggregate_y.is_none() {
                    self.degenerate += degenerate as u64;
                }
                x
            };
            if !x_new.is_finite() {
                return Err(Error::NonFinite(format!("iterate after round {}", self.k)));
            }
            if aggregate_y.is_none() {
                aggregate_y = Some(ybar);
            }
            new_replicas.push(Replica {
                x_prev: r.x.clone(),
                x: x_new,
                m,
                g,
            });
        }
        if let Some(first) = new_replicas.first() {
            if let Some(bad) = new_replicas.iter().position(|r| !r.bitwise_eq(first)) {
                return Err(Error::Integrity(format!(
                    "replica {bad} diverged from replica 0 in round {}",
                    self.k
                )));
            }
        }

        if self.config.track_shadow {
            let x = self.replicas[0].x.clone();
            let x_prev = self.replicas[0].x_prev.clone();
            let shadow = self.shadow.get_or_insert_with(|| ShadowLog {
                restart_x: x.clone(),
                restart_batches: Vec::new(),
                increments: Vec::new(),
            });
            if u {
                shadow.restart_x = x;
                shadow.restart_batches = outputs.iter().map(|o| o.big_batches.clone()).collect();
                shadow.increments.clear();
            } else {
                shadow.increments.push(ShadowIncrement {
                    x,
                    x_prev,
                    batches: outputs.iter().map(|o| o.single.clone().unwrap_or_default()).collect(),
                    scale,
                });
            }
        }

        for (w, out) in outputs.into_iter().enumerate() {
            if let Some(e) = out.error {
                self.errors[w] = e;
            }
        }
        self.replicas = new_replicas;
        self.last_aggregate = aggregate_y.flatten();
        self.check_monitor();

        self.u = u_next;
        self.k += 1;
        let round_units = self.ledger.close_round();
        let (loss, grad) = self.objective.full_value_and_grad(self.iterate())?;
        Ok(RoundRecord {
            step: self.k,
            u_flag: u,
            loss,
            stationarity: stationarity(&grad, &self.config.layers)?,
            round_units,
            cum_units: self.ledger.cumulative_units(),
            cum_bytes: self.ledger.cumulative_bytes(),
            grad_oracles: self.oracles,
        })
    }

    fn check_monitor(&mut self) {
        let Some(mon) = self.config.monitor else { return };
        let StepSchedule::Constant { eta } = self.config.step else { return };
        if self.errors.is_empty() {
            return;
        }
        let q = self.config.q;
        for (i, layer) in self.config.layers.iter().enumerate() {
            let d = layer.shape.len();
            let delta = self.config.compressor.delta(d).unwrap_or(1.0);
            let rate = q + delta - q * delta;
            if rate <= 0.0 {
                continue;
            }
            let bound = 4.0 * (1.0 - q) * (1.0 - delta)
                * (mon.l_hat * mon.l_hat + rate * mon.delta_hat * mon.delta_hat)
                * layer.weight
                * layer.weight
                * eta
                * eta
                / (rate * rate);
            for (w, e) in self.errors.iter().enumerate() {
                let sq = l2(e.block(i)).powi(2);
                self.monitor.checks += 1;
                let ratio = if bound > 0.0 {
                    sq / bound
                } else if sq == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                };
                self.monitor.worst_ratio = self.monitor.worst_ratio.max(ratio);
                if ratio > 1.0 {
                    self.monitor.violations += 1;
                    log::warn!(
                        "error buffer of worker {w}, layer {i} exceeds its bound in round {}: {sq:.3e} > {bound:.3e}",
                        self.k
                    );
                }
            }
        }
    }

    /// Run the configured number of rounds. The first record is the
    /// initialization row.
    pub fn run(&mut self) -> Result<Vec<RoundRecord>> {
        let mut records = Vec::with_capacity(self.config.rounds as usize + 1);
        records.push(self.init_record);
        while self.k < self.config.rounds {
            records.push(self.step()?);
        }
        Ok(records)
    }

    /// Recompute `g` from the last restart by re-evaluating the stored samples
    /// and compare bitwise with the maintained estimator. Needs
    /// `track_shadow`, a recursive-estimator variant and the identity
    /// compressor.
    pub fn shadow_check_g(&self) -> Result<bool> {
        let shadow = self
            .shadow
            .as_ref()
            .ok_or_else(|| Error::Config("shadow tracking is disabled".into()))?;
        if self.config.compressor.kind != CompressorKind::Identity {
            return Err(Error::Config("shadow check requires the identity compressor".into()));
        }
        if self.config.variant == AlgorithmVariant::GluonBaseline {
            return Err(Error::Config("gluon_baseline has no recursive estimator".into()));
        }
        let n = self.config.workers;
        let obj = &self.objective;
        let template = &shadow.restart_x;
        let parts: Vec<Vec<Message>> = shadow
            .restart_batches
            .iter()
            .map(|b| to_messages(&big_batch_gradient(obj, template, b)))
            .collect();
        let mut g = aggregate(template, parts.iter().map(|p| p.as_slice()), n);
        for inc in &shadow.increments {
            let parts: Vec<Vec<Message>> = inc
                .batches
                .iter()
                .map(|b| to_messages(&gradient_difference(obj, &inc.x, &inc.x_prev, b)))
                .collect();
            let mut y = aggregate(template, parts.iter().map(|p| p.as_slice()), n);
            if inc.scale != 1.0 {
                y.scale(inc.scale);
            }
            g.add_assign(&y);
        }
        Ok(g.bitwise_eq(self.estimator()))
    }
}

/// Convenience: build a simulation and run it to completion.
pub fn run(config: RunConfig, objective: Arc<Objective>) -> Result<Vec<RoundRecord>> {
    Simulation::new(config, objective)?.run()
}
