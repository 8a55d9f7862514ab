//! Parameter presets from the convergence recipes.
//!
//! Every recipe is a plug-in formula in `(eps, n, c)`. Constants hidden by
//! the asymptotic statements are taken to be 1. Values are computed from
//! `1/eps` with divisions only, so that decimal inputs give correctly rounded
//! outputs (e.g. `q = 4 / 100`).

use std::fmt;
use std::str::FromStr;

use crate::compress::{CompressorKind, CompressorSpec};
use crate::engine::{AlgorithmVariant, RunConfig, StepSchedule};
use crate::error::{Error, Result};

/// Problem constants, one entry per layer where indexed.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConstants {
    pub l0: Vec<f64>,
    pub l1: Vec<f64>,
    pub l: Vec<f64>,
    pub sigma: f64,
    pub rho: Vec<f64>,
    pub hessian_delta: Vec<f64>,
    pub delta0: f64,
    /// Radius weights `t_i`.
    pub t: Vec<f64>,
}

impl ScheduleConstants {
    /// Single layer, all smoothness constants zero, `t = 1`.
    pub fn single_layer() -> Self {
        ScheduleConstants {
            l0: vec![0.0],
            l1: vec![0.0],
            l: vec![0.0],
            sigma: 0.0,
            rho: vec![1.0],
            hessian_delta: vec![0.0],
            delta0: 0.0,
            t: vec![1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.t.len();
        if p == 0 {
            return Err(Error::Config("schedule constants need at least one layer".into()));
        }
        for (name, v) in [
            ("L0", &self.l0),
            ("L1", &self.l1),
            ("L", &self.l),
            ("rho", &self.rho),
            ("hessian_delta", &self.hessian_delta),
            ("t", &self.t),
        ] {
            if v.len() != p {
                return Err(Error::Config(format!("{name} has {} entries for {p} layers", v.len())));
            }
            if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::Config(format!("{name} entries must be finite and >= 0")));
            }
        }
        if self.t.iter().any(|&t| t == 0.0) {
            return Err(Error::Config("t entries must be positive".into()));
        }
        if !(self.sigma >= 0.0 && self.delta0 >= 0.0) {
            return Err(Error::Config("sigma and delta0 must be >= 0".into()));
        }
        Ok(())
    }

    /// `min_i 1 / (L1_i t_i)` over layers with `L1_i > 0`, or `None`.
    fn l1_limit(&self) -> Option<f64> {
        self.l1
            .iter()
            .zip(&self.t)
            .filter(|(l1, _)| **l1 > 0.0)
            .map(|(l1, t)| 1.0 / (l1 * t))
            .reduce(f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PresetKind {
    GluonMinibatch,
    NewVr,
    CommOptimalCg,
    /// Recipe for `L0 = 0`; the `c` argument is `c0`.
    CgL0Zero,
    CgMvr,
    LocalGluon,
    EfComm,
    EfMvr,
}

impl PresetKind {
    pub const ALL: [PresetKind; 8] = [
        PresetKind::GluonMinibatch,
        PresetKind::NewVr,
        PresetKind::CommOptimalCg,
        PresetKind::CgL0Zero,
        PresetKind::CgMvr,
        PresetKind::LocalGluon,
        PresetKind::EfComm,
        PresetKind::EfMvr,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PresetKind::GluonMinibatch => "gluon_minibatch",
            PresetKind::NewVr => "new_vr",
            PresetKind::CommOptimalCg => "comm_optimal_cg",
            PresetKind::CgL0Zero => "cg_L0_zero",
            PresetKind::CgMvr => "cg_mvr",
            PresetKind::LocalGluon => "local_gluon",
            PresetKind::EfComm => "ef_comm",
            PresetKind::EfMvr => "ef_mvr",
        }
    }

    pub fn variant(&self) -> AlgorithmVariant {
        match self {
            PresetKind::GluonMinibatch => AlgorithmVariant::GluonBaseline,
            PresetKind::NewVr | PresetKind::CommOptimalCg | PresetKind::CgL0Zero => {
                AlgorithmVariant::CompressedGluon
            }
            PresetKind::CgMvr => AlgorithmVariant::CompressedGluonMvr,
            PresetKind::LocalGluon | PresetKind::EfComm => AlgorithmVariant::CompressedGluonEf,
            PresetKind::EfMvr => AlgorithmVariant::CompressedGluonEfMvr,
        }
    }
}

impl fmt::Display for PresetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PresetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        PresetKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown preset `{s}`")))
    }
}

/// The run parameters a preset determines.
#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    pub kind: PresetKind,
    pub variant: AlgorithmVariant,
    pub workers: usize,
    pub rounds: u64,
    pub q: f64,
    pub big_batch: usize,
    pub eta: f64,
    /// `alpha = 1 - beta`.
    pub alpha: f64,
    pub compressor: CompressorSpec,
    pub omega: Option<f64>,
    pub delta: Option<f64>,
}

impl Fragment {
    pub fn beta(&self) -> f64 {
        1.0 - self.alpha
    }

    /// Copy the preset's parameters into `config`.
    pub fn apply(&self, config: &mut RunConfig) {
        config.variant = self.variant;
        config.workers = self.workers;
        config.rounds = self.rounds;
        config.q = self.q;
        config.big_batch = self.big_batch;
        config.beta = self.beta();
        config.step = StepSchedule::Constant { eta: self.eta };
        config.compressor = self.compressor;
    }

    /// Expected uplink units of one round under the analytic convention
    /// `d / (omega + 1)` or `delta d` for a compressed message (no rounding
    /// of the kept count).
    pub fn analytic_round_cost(&self, d: usize) -> f64 {
        let d = d as f64;
        let n = self.workers as f64;
        if self.variant == AlgorithmVariant::GluonBaseline {
            return n * d;
        }
        let sparse = match (self.omega, self.delta) {
            (Some(omega), _) => d / (omega + 1.0),
            (None, Some(delta)) => delta * d,
            (None, None) => d,
        };
        let dense = match self.variant {
            AlgorithmVariant::CompressedGluonMvr => d + sparse,
            AlgorithmVariant::CompressedGluonEfMvr => 2.0 * d,
            _ => d,
        };
        n * (1.0 + self.q * dense + (1.0 - self.q) * sparse)
    }

    /// Initialization plus `K` rounds at the analytic per-round cost.
    pub fn analytic_total_cost(&self, d: usize) -> f64 {
        self.workers as f64 * d as f64 + self.rounds as f64 * self.analytic_round_cost(d)
    }
}

/// One checked inequality.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub description: String,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PresetReport {
    pub fragment: Fragment,
    pub conditions: Vec<Condition>,
    pub warnings: Vec<String>,
}

impl PresetReport {
    pub fn all_hold(&self) -> bool {
        self.conditions.iter().all(|c| c.holds)
    }
}

struct Builder {
    conditions: Vec<Condition>,
    warnings: Vec<String>,
}

impl Builder {
    fn check(&mut self, holds: bool, description: impl Into<String>) {
        self.conditions.push(Condition {
            description: description.into(),
            holds,
        });
    }

    /// A range requirement on the inputs: violation is an error.
    fn require(&mut self, holds: bool, description: impl Into<String>) -> Result<()> {
        let description = description.into();
        if !holds {
            return Err(Error::Schedule(format!("violated: {description}")));
        }
        self.check(true, description);
        Ok(())
    }

    fn clamp_unit(&mut self, name: &str, v: f64) -> f64 {
        if v > 1.0 {
            let msg = format!("{name} = {v} exceeds 1; clamped to 1");
            log::warn!("{msg}");
            self.warnings.push(msg);
            1.0
        } else {
            v
        }
    }
}

/// `ceil(x)` with a relative slack so that `1250.0000000000002` rounds to 1250.
fn ceil_loose(x: f64) -> f64 {
    (x * (1.0 - 1e-12)).ceil().max(1.0)
}

/// Evaluate the recipe for `kind` at accuracy `eps` with `n` workers and
/// communication constant `c`.
pub fn preset(kind: PresetKind, eps: f64, n: usize, c: f64, constants: &ScheduleConstants) -> Result<PresetReport> {
    constants.validate()?;
    let mut b = Builder {
        conditions: Vec::new(),
        warnings: Vec::new(),
    };
    b.require(eps > 0.0 && eps < 1.0, format!("0 < eps < 1 (eps = {eps})"))?;
    b.require(n >= 1, "n >= 1")?;
    b.require(c > 0.0 && c.is_finite(), format!("c > 0 (c = {c})"))?;
    let inv = 1.0 / eps;
    let nf = n as f64;
    let n32 = nf * nf.sqrt();
    let c2 = c * c;

    // (K, q, B, eta, alpha, compressor parameter)
    let (k, q, big, eta, alpha, param): (f64, f64, f64, f64, f64, f64) = match kind {
        PresetKind::GluonMinibatch => {
            if nf <= inv * inv {
                b.check(true, "small-n regime: n <= 1/eps^2");
                (inv.powi(4) / nf, 1.0, 1.0, nf / inv.powi(3), nf / (inv * inv), 1.0)
            } else {
                b.check(true, "large-n regime: n > 1/eps^2");
                let k = inv * inv;
                (k, 1.0, 1.0, 1.0 / k.sqrt(), 1.0, 1.0)
            }
        }
        PresetKind::NewVr => {
            if nf <= inv {
                b.check(true, "small-n regime: n <= 1/eps");
                (inv.powi(3) / nf, nf / (inv * inv), inv * inv / nf, nf / (inv * inv), nf / inv, 1.0)
            } else {
                b.check(true, "large-n regime: n > 1/eps");
                (inv * inv, 1.0 / inv, inv, 1.0 / inv, 1.0, 1.0)
            }
        }
        PresetKind::CommOptimalCg | PresetKind::CgMvr => {
            let limit = inv * inv / n32;
            b.require(c2 <= limit, format!("c^2 <= 1/(eps^2 n^(3/2)) ({c2} <= {limit})"))?;
            let k = inv.powi(4) / (c2 * n32);
            let q = c2 * nf / (inv * inv);
            let alpha = if kind == PresetKind::CommOptimalCg {
                (c * n32 / (inv * inv)).max(c2 * n32 / inv.powi(4))
            } else {
                (c2 * nf / (inv * inv)).max(c2 * n32 / inv.powi(4))
            };
            (k, q, inv * inv / nf, c2 * n32 / inv.powi(3), alpha, q)
        }
        PresetKind::CgL0Zero => {
            let c0 = c;
            b.require(c0 <= 1.0, format!("c0 <= 1 (c0 = {c0})"))?;
            b.require(nf <= c0 * c0 * inv * inv, format!("n <= c0^2/eps^2 ({nf} <= {})", c0 * c0 * inv * inv))?;
            let q = (c0 * nf).powf(2.0 / 3.0) / inv.powf(4.0 / 3.0);
            (inv.powi(3) / (c0 * nf), q, 1.0 / q, c0 * nf / (inv * inv), nf / (inv * inv), q)
        }
        PresetKind::LocalGluon => (
            inv.powi(4) / nf,
            nf / (inv * inv),
            inv * inv / nf,
            nf / inv.powi(3),
            nf / (inv * inv),
            0.0,
        ),
        PresetKind::EfComm | PresetKind::EfMvr => {
            let limit = inv * inv / nf;
            b.require(c2 <= limit, format!("c^2 <= 1/(eps^2 n) ({c2} <= {limit})"))?;
            let k = inv.powi(4) / (c2 * nf);
            let q = c2 * c2 * nf / inv.powi(4);
            let delta = c2 * nf / (inv * inv);
            let alpha = if kind == PresetKind::EfComm {
                q.max(1.0 / k).max(delta)
            } else {
                q.max(1.0 / k)
            };
            (k, q, inv * inv / nf, c2 * nf / inv.powi(3), alpha, delta)
        }
    };

    let rounds = ceil_loose(k);
    let big_batch = ceil_loose(big);
    let q = b.clamp_unit("q", q);
    let alpha = b.clamp_unit("alpha", alpha);
    b.check(q > 0.0 && q <= 1.0, format!("0 < q <= 1 (q = {q})"));
    b.check(alpha > 0.0 && alpha <= 1.0, format!("0 < alpha <= 1 (alpha = {alpha})"));
    b.check(eta > 0.0, format!("eta > 0 (eta = {eta})"));

    let (compressor, omega, delta) = match kind {
        PresetKind::GluonMinibatch | PresetKind::NewVr => (CompressorSpec::new(CompressorKind::Identity), Some(0.0), None),
        PresetKind::CommOptimalCg | PresetKind::CgMvr | PresetKind::CgL0Zero => {
            let f = b.clamp_unit("k_fraction", param);
            (
                CompressorSpec::new(CompressorKind::RandKUnbiased(f)),
                Some(1.0 / f - 1.0),
                None,
            )
        }
        PresetKind::LocalGluon => (CompressorSpec::new(CompressorKind::Zero), None, Some(0.0)),
        PresetKind::EfComm | PresetKind::EfMvr => {
            let d = b.clamp_unit("delta", param);
            (CompressorSpec::new(CompressorKind::TopK(d)), None, Some(d))
        }
    };

    if kind == PresetKind::CommOptimalCg || kind == PresetKind::CgMvr {
        let bound = rounds.sqrt() / nf.powf(0.75);
        b.check(
            c <= bound * (1.0 + 1e-9),
            format!("c <= K^(1/2)/n^(3/4) ({c} <= {bound})"),
        );
    }
    if let Some(delta) = delta {
        let rate = q + delta - q * delta;
        b.check(rate > 0.0, format!("q + delta - q delta > 0 ({rate})"));
    }
    if let Some(limit) = constants.l1_limit() {
        if kind.variant().is_mvr() {
            b.require(eta <= limit, format!("eta <= min_i 1/(L1_i t_i) ({eta} <= {limit})"))?;
        } else {
            b.require(
                eta / alpha <= limit / 5.0,
                format!("eta/alpha <= min_i 1/(5 L1_i t_i) ({} <= {})", eta / alpha, limit / 5.0),
            )?;
        }
    }

    let fragment = Fragment {
        kind,
        variant: kind.variant(),
        workers: n,
        rounds: rounds as u64,
        q,
        big_batch: big_batch as usize,
        eta,
        alpha,
        compressor,
        omega,
        delta,
    };
    Ok(PresetReport {
        fragment,
        conditions: b.conditions,
        warnings: b.warnings,
    })
}

/// Expected number of stochastic samples over a run:
/// `B n + K n (q (B + m) + (1 - q))` with `m = 1` for the momentum
/// variance-reduced variants (they also draw the single sample in restart
/// rounds) and `m = 0` otherwise.
pub fn expected_oracle_count(fragment: &Fragment) -> f64 {
    let n = fragment.workers as f64;
    let b = fragment.big_batch as f64;
    let k = fragment.rounds as f64;
    let q = fragment.q;
    let m = if fragment.variant.is_mvr() { 1.0 } else { 0.0 };
    b * n + k * n * (q * (b + m) + (1.0 - q))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ScheduleConstants {
        ScheduleConstants::single_layer()
    }

    #[test]
    fn comm_optimal_tuple_is_exact() {
        let r = preset(PresetKind::CommOptimalCg, 0.1, 4, 1.0, &base()).unwrap();
        let f = &r.fragment;
        assert_eq!((f.q, f.big_batch, f.eta, f.rounds), (0.04, 25, 0.008, 1250));
        assert!(r.all_hold());
    }

    #[test]
    fn local_gluon_tuple_and_oracles() {
        let r = preset(PresetKind::LocalGluon, 0.1, 4, 1.0, &base()).unwrap();
        let f = &r.fragment;
        assert_eq!((f.rounds, f.q, f.big_batch, f.eta), (2500, 0.04, 25, 0.004));
        assert_eq!(f.compressor.kind, CompressorKind::Zero);
        assert!((expected_oracle_count(f) - 19_700.0).abs() < 1e-9);
    }

    #[test]
    fn gluon_minibatch_regimes_meet_at_boundary() {
        let r = preset(PresetKind::GluonMinibatch, 0.1, 100, 1.0, &base()).unwrap();
        let f = &r.fragment;
        assert_eq!(f.rounds, 100);
        assert!((f.eta - 0.1).abs() < 1e-15);
        assert_eq!(f.alpha, 1.0);
        let r = preset(PresetKind::GluonMinibatch, 0.1, 101, 1.0, &base()).unwrap();
        assert_eq!(r.fragment.rounds, 100);
        assert_eq!(r.fragment.eta, 0.1);
        assert_eq!(expected_oracle_count(&r.fragment), 101.0 + 100.0 * 101.0);
    }

    #[test]
    fn out_of_range_c_names_the_inequality() {
        let err = preset(PresetKind::CommOptimalCg, 0.1, 4, 4.0, &base()).unwrap_err();
        assert!(err.to_string().contains("c^2 <= 1/(eps^2 n^(3/2))"));
        assert!(preset(PresetKind::EfComm, 0.1, 4, 6.0, &base()).is_err());
        assert!(preset(PresetKind::CgL0Zero, 0.1, 4, 1.5, &base()).is_err());
    }

    #[test]
    fn l1_condition_can_fail() {
        let mut c = base();
        c.l1 = vec![1000.0];
        assert!(matches!(
            preset(PresetKind::CommOptimalCg, 0.1, 4, 1.0, &c),
            Err(Error::Schedule(_))
        ));
        c.l1 = vec![1.0];
        let r = preset(PresetKind::CommOptimalCg, 0.1, 4, 1.0, &c).unwrap();
        assert!(r.conditions.iter().any(|x| x.description.starts_with("eta/alpha")));
    }

    #[test]
    fn large_eps_clamps_and_warns() {
        let r = preset(PresetKind::NewVr, 0.5, 1, 1.0, &base()).unwrap();
        assert!(r.fragment.alpha <= 1.0);
        let r = preset(PresetKind::CgL0Zero, 0.9, 1, 1.0, &base()).unwrap();
        assert!(r.fragment.q <= 1.0 && r.all_hold());
    }

    #[test]
    fn names_parse() {
        for k in PresetKind::ALL {
            assert_eq!(k.name().parse::<PresetKind>().unwrap(), k);
        }
        assert_eq!("cg_l0_zero".parse::<PresetKind>().unwrap(), PresetKind::CgL0Zero);
    }
}
