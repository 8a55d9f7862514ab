//! Flat `key = value` experiment configs with dotted keys.
//!
//! ```text
//! # comment
//! variant = compressed_gluon
//! workers = 4
//! compressor.kind = rand_k
//! compressor.k_fraction = 0.01
//! layers.0.norm = euclidean
//! problem.dataset = synthetic:a5a
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use cgluon::compress::{Accounting, CompressorKind, CompressorSpec};
use cgluon::data::{load_libsvm, synthetic_a5a_like, Dataset};
use cgluon::engine::{AlgorithmVariant, EfMonitor, RunConfig, StepSchedule};
use cgluon::lmo::LmoMode;
use cgluon::objective::Objective;
use cgluon::rng::{Stream, StreamSeeder};
use cgluon::schedule::{preset, PresetKind, PresetReport, ScheduleConstants};
use cgluon::tensor::{LayerSpec, LayeredTensor, Layout, NormKind, Shape};

const KNOWN_KEYS: &[&str] = &[
    "name",
    "output.dir",
    "repetitions",
    "report_f_star",
    "f_star.tolerance",
    "f_star.max_iterations",
    "variant",
    "workers",
    "rounds",
    "q",
    "big_batch",
    "minibatch",
    "beta",
    "eta",
    "step.gamma",
    "seed",
    "bytes_per_scalar",
    "scale_y_by_inv_b",
    "compressor.kind",
    "compressor.k_fraction",
    "compressor.accounting",
    "lmo.spectral",
    "lmo.iterations",
    "monitor.l_hat",
    "monitor.delta_hat",
    "problem.kind",
    "problem.dataset",
    "problem.synthetic_seed",
    "problem.features",
    "problem.weight_decay",
    "problem.curvatures",
    "problem.noise",
    "problem.samples",
    "problem.minimizer_scale",
    "problem.seed",
    "preset.kind",
    "preset.eps",
    "preset.c",
    "preset.l1",
];

/// Keys a preset determines; setting them next to `preset.kind` is an error.
const PRESET_OWNED: &[&str] = &[
    "variant",
    "rounds",
    "q",
    "big_batch",
    "beta",
    "eta",
    "step.gamma",
    "compressor.kind",
    "compressor.k_fraction",
];

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Libsvm { path: PathBuf, features: usize },
    SyntheticA5a { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemConfig {
    LogReg {
        dataset: DatasetSource,
        weight_decay: f64,
    },
    Quadratic {
        curvatures: Vec<f64>,
        noise: f64,
        samples: usize,
        minimizer_scale: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PresetInvocation {
    pub kind: PresetKind,
    pub eps: f64,
    pub c: f64,
    pub l1: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerEntry {
    pub norm: NormKind,
    pub weight: f64,
    pub shape: Option<Shape>,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// The key/value pairs as written, echoed into the summary.
    pub raw: BTreeMap<String, String>,
    pub name: String,
    pub output_dir: Option<PathBuf>,
    pub repetitions: usize,
    pub report_f_star: bool,
    pub f_star_tolerance: f64,
    pub f_star_max_iterations: usize,
    pub variant: AlgorithmVariant,
    pub workers: usize,
    pub rounds: u64,
    pub q: f64,
    pub big_batch: usize,
    pub minibatch: usize,
    pub beta: f64,
    pub step: StepSchedule,
    pub seed: u64,
    pub bytes_per_scalar: u64,
    pub scale_y_by_inv_b: bool,
    pub compressor: CompressorSpec,
    pub lmo: LmoMode,
    pub monitor: Option<EfMonitor>,
    pub layers: Vec<LayerEntry>,
    pub problem: ProblemConfig,
    pub preset: Option<PresetInvocation>,
}

/// A config resolved against its objective.
pub struct Resolved {
    pub run: RunConfig,
    pub objective: Arc<Objective>,
    pub preset: Option<PresetReport>,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse::<T>()
        .map_err(|e| anyhow!("invalid value `{value}` for `{key}`: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => bail!("invalid value `{other}` for `{key}`: expected true or false"),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| parse_value(key, v)).collect()
}

/// Split `text` into key/value pairs. Rejects duplicates and unknown keys.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected `key = value`", i + 1))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        let known = KNOWN_KEYS.contains(&key.as_str()) || layer_key(&key).is_some();
        if !known {
            bail!("line {}: unknown key `{key}`", i + 1);
        }
        if map.insert(key.clone(), value).is_some() {
            bail!("line {}: duplicate key `{key}`", i + 1);
        }
    }
    Ok(map)
}

/// `layers.<i>.<field>` with field in norm/weight/shape.
fn layer_key(key: &str) -> Option<(usize, &str)> {
    let rest = key.strip_prefix("layers.")?;
    let (idx, field) = rest.split_once('.')?;
    let idx = idx.parse().ok()?;
    matches!(field, "norm" | "weight" | "shape").then_some((idx, field))
}

fn compressor_kind(name: &str, fraction: Option<f64>) -> Result<CompressorKind> {
    let need = |f: Option<f64>| f.ok_or_else(|| anyhow!("compressor `{name}` needs compressor.k_fraction"));
    Ok(match name {
        "identity" => CompressorKind::Identity,
        "zero" => CompressorKind::Zero,
        "rand_k" | "rand_k_unbiased" => CompressorKind::RandKUnbiased(need(fraction)?),
        "top_k" => CompressorKind::TopK(need(fraction)?),
        "rand_k_contraction" => CompressorKind::RandKContraction(need(fraction)?),
        other => bail!("unknown compressor.kind `{other}`"),
    })
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).with_context(|| format!("in config {}", path.display()))
    }

    /// Parse config text; relative dataset paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let raw = parse_pairs(text)?;
        let get = |k: &str| raw.get(k).map(String::as_str);
        fn num<T: FromStr>(raw: &BTreeMap<String, String>, key: &str, default: T) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            raw.get(key).map_or(Ok(default), |v| parse_value(key, v))
        }

        let preset = match get("preset.kind") {
            None => {
                for k in ["preset.eps", "preset.c", "preset.l1"] {
                    if raw.contains_key(k) {
                        bail!("`{k}` requires preset.kind");
                    }
                }
                None
            }
            Some(kind) => {
                let clash: Vec<&str> = PRESET_OWNED.iter().copied().filter(|k| raw.contains_key(*k)).collect();
                if !clash.is_empty() {
                    bail!(
                        "preset.kind and explicit parameters are mutually exclusive; remove: {}",
                        clash.join(", ")
                    );
                }
                Some(PresetInvocation {
                    kind: kind.parse()?,
                    eps: parse_value("preset.eps", get("preset.eps").ok_or_else(|| anyhow!("preset.eps is required"))?)?,
                    c: num(&raw, "preset.c", 1.0)?,
                    l1: get("preset.l1").map(|v| parse_list("preset.l1", v)).transpose()?,
                })
            }
        };

        if raw.contains_key("eta") && raw.contains_key("step.gamma") {
            bail!("`eta` and `step.gamma` are mutually exclusive");
        }
        let step = match get("step.gamma") {
            Some(g) => StepSchedule::MomentumProportional {
                gamma: parse_value("step.gamma", g)?,
            },
            None => StepSchedule::Constant {
                eta: num(&raw, "eta", 0.01)?,
            },
        };

        let fraction = get("compressor.k_fraction")
            .map(|v| parse_value::<f64>("compressor.k_fraction", v))
            .transpose()?;
        let mut compressor = CompressorSpec::new(compressor_kind(get("compressor.kind").unwrap_or("identity"), fraction)?);
        if let Some(acc) = get("compressor.accounting") {
            compressor = compressor.with_accounting(match acc {
                "theoretical" => Accounting::Theoretical,
                "practical" => Accounting::Practical,
                other => bail!("unknown compressor.accounting `{other}`"),
            });
        }

        let lmo = match get("lmo.spectral").unwrap_or("exact_svd") {
            "exact_svd" | "exact" => LmoMode::exact(),
            "newton_schulz" => LmoMode::newton_schulz(num(&raw, "lmo.iterations", 5)?)?,
            other => bail!("unknown lmo.spectral `{other}`"),
        };

        let monitor = match (get("monitor.l_hat"), get("monitor.delta_hat")) {
            (None, None) => None,
            (Some(l), Some(d)) => Some(EfMonitor {
                l_hat: parse_value("monitor.l_hat", l)?,
                delta_hat: parse_value("monitor.delta_hat", d)?,
            }),
            _ => bail!("monitor.l_hat and monitor.delta_hat must be given together"),
        };

        let mut layers: BTreeMap<usize, (Option<NormKind>, Option<f64>, Option<Shape>)> = BTreeMap::new();
        for (key, value) in &raw {
            if let Some((idx, field)) = layer_key(key) {
                let entry = layers.entry(idx).or_default();
                match field {
                    "norm" => entry.0 = Some(value.parse()?),
                    "weight" => entry.1 = Some(parse_value(key, value)?),
                    _ => entry.2 = Some(value.parse()?),
                }
            }
        }
        if let Some((&last, _)) = layers.iter().next_back() {
            if last + 1 != layers.len() {
                bail!("layer indices must be contiguous from 0");
            }
        }
        let layers: Vec<LayerEntry> = layers
            .into_values()
            .map(|(norm, weight, shape)| LayerEntry {
                norm: norm.unwrap_or(NormKind::Euclidean),
                weight: weight.unwrap_or(1.0),
                shape,
            })
            .collect();

        let problem = match get("problem.kind").unwrap_or("logreg") {
            "logreg" => {
                let dataset = match get("problem.dataset") {
                    None => bail!("problem.dataset is required for logreg"),
                    Some("synthetic:a5a") => DatasetSource::SyntheticA5a {
                        seed: num(&raw, "problem.synthetic_seed", 2024)?,
                    },
                    Some(path) => DatasetSource::Libsvm {
                        path: base.join(path),
                        features: num(&raw, "problem.features", 0)?,
                    },
                };
                ProblemConfig::LogReg {
                    dataset,
                    weight_decay: num(&raw, "problem.weight_decay", 0.0)?,
                }
            }
            "quadratic" => ProblemConfig::Quadratic {
                curvatures: get("problem.curvatures")
                    .map(|v| parse_list("problem.curvatures", v))
                    .transpose()?
                    .unwrap_or_default(),
                noise: num(&raw, "problem.noise", 0.0)?,
                samples: num(&raw, "problem.samples", 16)?,
                minimizer_scale: num(&raw, "problem.minimizer_scale", 1.0)?,
                seed: num(&raw, "problem.seed", 0)?,
            },
            other => bail!("unknown problem.kind `{other}`"),
        };

        let repetitions = num(&raw, "repetitions", 1usize)?;
        if repetitions == 0 {
            bail!("repetitions must be >= 1");
        }

        Ok(ExperimentConfig {
            name: get("name").unwrap_or("run").to_string(),
            output_dir: get("output.dir").map(|d| base.join(d)),
            repetitions,
            report_f_star: get("report_f_star").map(|v| parse_bool("report_f_star", v)).transpose()?.unwrap_or(false),
            f_star_tolerance: num(&raw, "f_star.tolerance", 1e-8)?,
            f_star_max_iterations: num(&raw, "f_star.max_iterations", 100_000)?,
            variant: get("variant").unwrap_or("compressed_gluon").parse()?,
            workers: num(&raw, "workers", 1)?,
            rounds: num(&raw, "rounds", 100)?,
            q: num(&raw, "q", 1.0)?,
            big_batch: num(&raw, "big_batch", 1)?,
            minibatch: num(&raw, "minibatch", 1)?,
            beta: num(&raw, "beta", 0.0)?,
            step,
            seed: num(&raw, "seed", 0)?,
            bytes_per_scalar: num(&raw, "bytes_per_scalar", 4)?,
            scale_y_by_inv_b: get("scale_y_by_inv_b")
                .map(|v| parse_bool("scale_y_by_inv_b", v))
                .transpose()?
                .unwrap_or(false),
            compressor,
            lmo,
            monitor,
            layers,
            problem,
            preset,
            raw,
        })
    }

    fn load_dataset(source: &DatasetSource) -> Result<Dataset> {
        match source {
            DatasetSource::Libsvm { path, features } => {
                load_libsvm(path, *features).with_context(|| format!("loading dataset {}", path.display()))
            }
            DatasetSource::SyntheticA5a { seed } => Ok(synthetic_a5a_like(&mut ChaCha8Rng::seed_from_u64(*seed))),
        }
    }

    /// Build the objective, the layer specs and, for presets, the fragment.
    pub fn resolve(&self) -> Result<Resolved> {
        let (objective, specs) = match &self.problem {
            ProblemConfig::LogReg { dataset, weight_decay } => {
                let data = Arc::new(Self::load_dataset(dataset)?);
                let d = data.num_features();
                let specs = self.layer_specs(Some(d))?;
                let layout = Layout::from_specs(&specs)?;
                (Objective::logreg(data, *weight_decay, &layout)?, specs)
            }
            ProblemConfig::Quadratic {
                curvatures,
                noise,
                samples,
                minimizer_scale,
                seed,
            } => {
                let specs = self.layer_specs(None)?;
                let layout = Layout::from_specs(&specs)?;
                let curv = if curvatures.is_empty() {
                    vec![1.0; specs.len()]
                } else {
                    curvatures.clone()
                };
                let mut rng = StreamSeeder::new(*seed).rng(Stream::Problem, 0, 0);
                let star: Vec<f64> = (0..layout.dim())
                    .map(|_| minimizer_scale * rng.random_range(-1.0..1.0))
                    .collect();
                let star = LayeredTensor::from_flat(&layout, star)?;
                (Objective::quadratic(&layout, curv, star, *samples, *noise, &mut rng)?, specs)
            }
        };
        let mut run = RunConfig::new(self.variant, specs.clone());
        run.workers = self.workers;
        run.rounds = self.rounds;
        run.q = self.q;
        run.big_batch = self.big_batch;
        run.minibatch = self.minibatch;
        run.beta = self.beta;
        run.step = self.step;
        run.compressor = self.compressor;
        run.lmo = self.lmo;
        run.scale_y_by_inv_b = self.scale_y_by_inv_b;
        run.seed = self.seed;
        run.bytes_per_scalar = self.bytes_per_scalar;
        run.monitor = self.monitor;

        let report = match &self.preset {
            None => None,
            Some(p) => {
                let layers = specs.len();
                let mut constants = ScheduleConstants {
                    l0: vec![0.0; layers],
                    l1: vec![0.0; layers],
                    l: vec![0.0; layers],
                    sigma: 0.0,
                    rho: vec![1.0; layers],
                    hessian_delta: vec![0.0; layers],
                    delta0: 0.0,
                    t: specs.iter().map(|s| s.weight).collect(),
                };
                constants.l1 = match &p.l1 {
                    Some(v) if v.len() == layers => v.clone(),
                    Some(v) => bail!("preset.l1 has {} entries for {layers} layers", v.len()),
                    None => vec![0.0; layers],
                };
                let report = preset(p.kind, p.eps, self.workers, p.c, &constants)?;
                report.fragment.apply(&mut run);
                Some(report)
            }
        };
        run.validate()?;
        Ok(Resolved {
            run,
            objective: Arc::new(objective),
            preset: report,
        })
    }

    fn layer_specs(&self, dim: Option<usize>) -> Result<Vec<LayerSpec>> {
        if self.layers.is_empty() {
            let d = dim.ok_or_else(|| anyhow!("quadratic problems need layers.<i>.shape"))?;
            return Ok(vec![LayerSpec::euclidean(d)]);
        }
        let specs = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let shape = match (l.shape, dim) {
                    (Some(s), _) => s,
                    (None, Some(d)) if self.layers.len() == 1 => Shape::Vector(d),
                    _ => bail!("layers.{i}.shape is required"),
                };
                Ok(LayerSpec::new(l.norm, l.weight, shape)?)
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(d) = dim {
            let total: usize = specs.iter().map(|s| s.shape.len()).sum();
            if total != d {
                bail!("layer shapes cover {total} parameters but the dataset has {d} features");
            }
        }
        Ok(specs)
    }
}
