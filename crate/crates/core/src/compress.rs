//! Block compressors and message sizing.
//!
//! Unbiased compressors `Q` satisfy `E[Q(x)] = x` and
//! `E||Q(x)||^2 <= (omega + 1)||x||^2`; contraction compressors `C` satisfy
//! `E||x - C(x)||^2 <= (1 - delta)||x||^2`. Every compressor is applied to one
//! layer block at a time and keeps `r = ceil(k_fraction * d)` coordinates,
//! never fewer than one.

use std::fmt;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CompressorKind {
    Identity,
    /// Rand-r with `d/r` rescaling (unbiased, `omega = d/r - 1`).
    RandKUnbiased(f64),
    /// Greedy largest-magnitude selection, unscaled (contraction).
    TopK(f64),
    /// Uniform selection, unscaled (contraction, `delta = r/d`).
    RandKContraction(f64),
    /// Sends nothing (contraction with `delta = 0`).
    Zero,
}

/// How transmitted scalars are counted in the ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Accounting {
    /// A sparse message costs `r` units regardless of index overhead.
    #[default]
    Theoretical,
    /// Random index sets are regenerated from the shared seed and cost
    /// nothing; top-k pays for its indices (`2r`).
    Practical,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressorSpec {
    pub kind: CompressorKind,
    pub accounting: Accounting,
}

impl Default for CompressorSpec {
    fn default() -> Self {
        CompressorSpec::new(CompressorKind::Identity)
    }
}

impl fmt::Display for CompressorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompressorKind::Identity => write!(f, "identity"),
            CompressorKind::RandKUnbiased(k) => write!(f, "rand_k_unbiased({k})"),
            CompressorKind::TopK(k) => write!(f, "top_k({k})"),
            CompressorKind::RandKContraction(k) => write!(f, "rand_k_contraction({k})"),
            CompressorKind::Zero => write!(f, "zero"),
        }
    }
}

/// Number of kept coordinates for a block of size `d`.
///
/// The product is nudged down by `1e-9` before rounding up so that fractions
/// such as `0.07 * 100` do not round to one extra coordinate.
pub fn kept_coordinates(k_fraction: f64, d: usize) -> usize {
    let r = (k_fraction * d as f64 - 1e-9).ceil();
    (r.max(1.0) as usize).min(d)
}

impl CompressorSpec {
    pub fn new(kind: CompressorKind) -> Self {
        CompressorSpec {
            kind,
            accounting: Accounting::Theoretical,
        }
    }

    pub fn with_accounting(mut self, accounting: Accounting) -> Self {
        self.accounting = accounting;
        self
    }

    pub fn k_fraction(&self) -> Option<f64> {
        match self.kind {
            CompressorKind::RandKUnbiased(k) | CompressorKind::TopK(k) | CompressorKind::RandKContraction(k) => Some(k),
            CompressorKind::Identity | CompressorKind::Zero => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(k) = self.k_fraction() {
            if !(k > 0.0 && k <= 1.0) {
                return Err(Error::Config(format!(
                    "compressor k_fraction must lie in (0, 1], got {k}"
                )));
            }
        }
        Ok(())
    }

    /// Identity counts as unbiased with `omega = 0`.
    pub fn is_unbiased(&self) -> bool {
        matches!(self.kind, CompressorKind::Identity | CompressorKind::RandKUnbiased(_))
    }

    /// Identity counts as a contraction with `delta = 1`.
    pub fn is_contraction(&self) -> bool {
        !matches!(self.kind, CompressorKind::RandKUnbiased(_))
    }

    /// Coordinates kept for a block of size `d` (`d` for identity, 0 for zero).
    pub fn kept(&self, d: usize) -> usize {
        match self.kind {
            CompressorKind::Identity => d,
            CompressorKind::Zero => 0,
            CompressorKind::RandKUnbiased(k) | CompressorKind::TopK(k) | CompressorKind::RandKContraction(k) => {
                kept_coordinates(k, d)
            }
        }
    }

    /// Variance parameter of an unbiased compressor on a block of size `d`.
    pub fn omega(&self, d: usize) -> Option<f64> {
        match self.kind {
            CompressorKind::Identity => Some(0.0),
            CompressorKind::RandKUnbiased(_) => Some(d as f64 / self.kept(d) as f64 - 1.0),
            _ => None,
        }
    }

    /// Contraction parameter on a block of size `d`. For top-k this is the
    /// input-independent lower bound `r/d`.
    pub fn delta(&self, d: usize) -> Option<f64> {
        match self.kind {
            CompressorKind::Identity => Some(1.0),
            CompressorKind::Zero => Some(0.0),
            CompressorKind::TopK(_) | CompressorKind::RandKContraction(_) => Some(self.kept(d) as f64 / d as f64),
            CompressorKind::RandKUnbiased(_) => None,
        }
    }

    /// Units charged for a sparse (non-dense) message on a block of size `d`.
    pub fn sparse_units(&self, d: usize) -> usize {
        let r = self.kept(d);
        match (self.kind, self.accounting) {
            (CompressorKind::Identity, _) => d,
            (CompressorKind::Zero, _) => 0,
            (CompressorKind::TopK(_), Accounting::Practical) => 2 * r,
            _ => r,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Dense(Vec<f64>),
    /// Ascending indices with their (already rescaled) values.
    Sparse { indices: Vec<usize>, values: Vec<f64> },
    Zero,
}

/// One compressed block as transmitted.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub payload: Payload,
    pub dim: usize,
    pub sent_units: usize,
}

impl Message {
    /// An uncompressed block, `d` units.
    pub fn dense(values: Vec<f64>) -> Self {
        let dim = values.len();
        Message {
            payload: Payload::Dense(values),
            dim,
            sent_units: dim,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.add_into(&mut out, 1.0);
        out
    }

    /// `acc += scale * decompress(self)`.
    pub fn add_into(&self, acc: &mut [f64], scale: f64) {
        debug_assert_eq!(acc.len(), self.dim);
        match &self.payload {
            Payload::Dense(v) => {
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += scale * x;
                }
            }
            Payload::Sparse { indices, values } => {
                for (&i, x) in indices.iter().zip(values) {
                    acc[i] += scale * x;
                }
            }
            Payload::Zero => {}
        }
    }
}

/// Units a message costs under `spec.accounting`.
pub fn message_size(msg: &Message, d: usize, spec: &CompressorSpec) -> usize {
    match &msg.payload {
        Payload::Dense(_) => d,
        Payload::Zero => 0,
        Payload::Sparse { indices, .. } => {
            let r = indices.len();
            match (spec.kind, spec.accounting) {
                (CompressorKind::TopK(_), Accounting::Practical) => 2 * r,
                _ => r,
            }
        }
    }
}

fn random_support<R: Rng + ?Sized>(rng: &mut R, d: usize, r: usize) -> Vec<usize> {
    let mut idx = index::sample(rng, d, r).into_vec();
    idx.sort_unstable();
    idx
}

/// Indices of the `r` largest-magnitude entries; ties go to the lower index.
pub fn top_k_support(x: &[f64], r: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    let by_magnitude = |a: &usize, b: &usize| x[*b].abs().total_cmp(&x[*a].abs()).then(a.cmp(b));
    if r < order.len() {
        order.select_nth_unstable_by(r, by_magnitude);
        order.truncate(r);
    }
    order.sort_unstable();
    order
}

fn sparse(x: &[f64], spec: &CompressorSpec, indices: Vec<usize>, scale: f64) -> Message {
    let values = indices.iter().map(|&i| scale * x[i]).collect();
    let mut msg = Message {
        payload: Payload::Sparse { indices, values },
        dim: x.len(),
        sent_units: 0,
    };
    msg.sent_units = message_size(&msg, x.len(), spec);
    msg
}

/// Apply an unbiased compressor (identity or rescaled rand-k).
pub fn compress_unbiased<R: Rng + ?Sized>(x: &[f64], spec: &CompressorSpec, rng: &mut R) -> Result<Message> {
    spec.validate()?;
    let d = x.len();
    match spec.kind {
        CompressorKind::Identity => Ok(Message::dense(x.to_vec())),
        CompressorKind::RandKUnbiased(_) => {
            let r = spec.kept(d);
            let support = random_support(rng, d, r);
            Ok(sparse(x, spec, support, d as f64 / r as f64))
        }
        other => Err(Error::Config(format!(
            "{other} is a contraction compressor; an unbiased compressor is required"
        ))),
    }
}

/// Apply a contraction compressor (top-k, unscaled rand-k, zero, or identity).
pub fn compress_contraction<R: Rng + ?Sized>(x: &[f64], spec: &CompressorSpec, rng: &mut R) -> Result<Message> {
    spec.validate()?;
    let d = x.len();
    match spec.kind {
        CompressorKind::Identity => Ok(Message::dense(x.to_vec())),
        CompressorKind::Zero => Ok(Message {
            payload: Payload::Zero,
            dim: d,
            sent_units: 0,
        }),
        CompressorKind::TopK(_) => Ok(sparse(x, spec, top_k_support(x, spec.kept(d)), 1.0)),
        CompressorKind::RandKContraction(_) => {
            let support = random_support(rng, d, spec.kept(d));
            Ok(sparse(x, spec, support, 1.0))
        }
        other => Err(Error::Config(format!(
            "{other} is an unbiased compressor; a contraction compressor is required"
        ))),
    }
}

/// Dispatch on the compressor family.
pub fn compress<R: Rng + ?Sized>(x: &[f64], spec: &CompressorSpec, rng: &mut R) -> Result<Message> {
    if spec.is_unbiased() {
        compress_unbiased(x, spec, rng)
    } else {
        compress_contraction(x, spec, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sq(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum()
    }

    #[test]
    fn kept_coordinates_rounds_up_and_never_zero() {
        assert_eq!(kept_coordinates(0.01, 100), 1);
        assert_eq!(kept_coordinates(0.01, 123), 2);
        assert_eq!(kept_coordinates(0.07, 100), 7);
        assert_eq!(kept_coordinates(1e-9, 10), 1);
        assert_eq!(kept_coordinates(1.0, 10), 10);
    }

    #[test]
    fn omega_and_delta() {
        let q = CompressorSpec::new(CompressorKind::RandKUnbiased(0.25));
        assert_eq!(q.omega(8), Some(3.0));
        assert_eq!(q.delta(8), None);
        let c = CompressorSpec::new(CompressorKind::TopK(0.25));
        assert_eq!(c.delta(8), Some(0.25));
        assert_eq!(CompressorSpec::new(CompressorKind::Zero).delta(8), Some(0.0));
        assert_eq!(CompressorSpec::new(CompressorKind::Identity).omega(8), Some(0.0));
    }

    #[test]
    fn rand_k_on_two_coordinates() {
        let spec = CompressorSpec::new(CompressorKind::RandKUnbiased(0.5));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (mut first, mut second) = (0, 0);
        for _ in 0..2000 {
            match compress_unbiased(&[2.0, 4.0], &spec, &mut rng).unwrap().to_dense().as_slice() {
                [a, b] if *a == 4.0 && *b == 0.0 => first += 1,
                [a, b] if *a == 0.0 && *b == 8.0 => second += 1,
                other => panic!("unexpected output {other:?}"),
            }
        }
        assert!((first as f64 / 2000.0 - 0.5).abs() < 0.05, "{first} vs {second}");
    }

    #[test]
    fn identity_is_lossless() {
        let spec = CompressorSpec::new(CompressorKind::Identity);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = [1.0, -2.5, 3.0];
        let msg = compress_unbiased(&x, &spec, &mut rng).unwrap();
        assert_eq!(msg.to_dense(), x);
        assert_eq!(msg.sent_units, 3);
    }

    #[test]
    fn top_one_example() {
        let spec = CompressorSpec::new(CompressorKind::TopK(1.0 / 3.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = [3.0, -4.0, 1.0];
        let out = compress_contraction(&x, &spec, &mut rng).unwrap().to_dense();
        assert_eq!(out, vec![0.0, -4.0, 0.0]);
        let residual: f64 = x.iter().zip(&out).map(|(a, b)| (a - b).powi(2)).sum();
        assert_eq!(residual, 10.0);
        assert!(residual <= (1.0 - 1.0 / 3.0) * sq(&x));
    }

    #[test]
    fn top_k_ties_prefer_low_index() {
        assert_eq!(top_k_support(&[1.0, -1.0, 1.0, 0.5], 2), vec![0, 1]);
        assert_eq!(top_k_support(&[0.0, 0.0, 0.0], 1), vec![0]);
    }

    #[test]
    fn zero_compressor_sends_nothing() {
        let spec = CompressorSpec::new(CompressorKind::Zero);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = [1.0, 2.0];
        let msg = compress_contraction(&x, &spec, &mut rng).unwrap();
        assert_eq!(msg.to_dense(), vec![0.0, 0.0]);
        assert_eq!(msg.sent_units, 0);
        assert!(sq(&x) <= (1.0 - 0.0) * sq(&x));
    }

    #[test]
    fn family_mismatch_is_a_configuration_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let top = CompressorSpec::new(CompressorKind::TopK(0.5));
        assert!(matches!(compress_unbiased(&[1.0], &top, &mut rng), Err(Error::Config(_))));
        let rand = CompressorSpec::new(CompressorKind::RandKUnbiased(0.5));
        assert!(matches!(compress_contraction(&[1.0], &rand, &mut rng), Err(Error::Config(_))));
        let bad = CompressorSpec::new(CompressorKind::TopK(0.0));
        assert!(bad.validate().is_err());
    }

    #[test]
    fn message_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..100).map(|i| i as f64 - 50.5).collect();

        let rand = CompressorSpec::new(CompressorKind::RandKUnbiased(0.01));
        let msg = compress_unbiased(&x, &rand, &mut rng).unwrap();
        assert_eq!(message_size(&msg, 100, &rand), 1);
        let practical = rand.with_accounting(Accounting::Practical);
        assert_eq!(message_size(&msg, 100, &practical), 1);

        let top = CompressorSpec::new(CompressorKind::TopK(0.01)).with_accounting(Accounting::Practical);
        let msg = compress_contraction(&x, &top, &mut rng).unwrap();
        assert_eq!(message_size(&msg, 100, &top), 2);
        assert_eq!(msg.sent_units, 2);
        let theoretical = CompressorSpec::new(CompressorKind::TopK(0.01));
        assert_eq!(message_size(&msg, 100, &theoretical), 1);

        let dense = Message::dense(x.clone());
        for acc in [Accounting::Theoretical, Accounting::Practical] {
            let id = CompressorSpec::new(CompressorKind::Identity).with_accounting(acc);
            assert_eq!(message_size(&dense, 100, &id), 100);
        }
    }

    #[test]
    fn shared_seed_reproduces_index_sets() {
        let spec = CompressorSpec::new(CompressorKind::RandKContraction(0.1));
        let x: Vec<f64> = (0..64).map(|i| (i as f64).sin()).collect();
        let a = compress_contraction(&x, &spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = compress_contraction(&x, &spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }
}
