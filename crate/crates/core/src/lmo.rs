//! Sharp operators and the per-layer LMO step.
//!
//! For a layer with norm `||.||` the LMO over the ball `{X : ||X - X^k|| <= r}`
//! applied to a momentum `M` is `X^k - r * sharp(M)`, where `sharp(M)` is a
//! unit-ball maximizer of `<M, D>`:
//!
//! ```text
//! euclidean : M / ||M||_2
//! infinity  : sign(M)            (sign(0) = 0)
//! spectral  : U V^T              (reduced SVD M = U S V^T)
//! ```
//!
//! The spectral case can also be approximated with a quintic Newton-Schulz
//! iteration, as done by Muon-type optimizers.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::{l2, to_matrix, LayerSpec, LayeredTensor, NormKind, Shape};

/// Quintic coefficients `(a, b, c)` of `X <- aX + b(XX^T)X + c(XX^T)^2 X`.
pub const NEWTON_SCHULZ_COEFFS: (f64, f64, f64) = (3.4445, -4.7750, 2.0315);

/// Accuracy bound on the singular values produced by Newton-Schulz:
/// they are expected to lie in `[1 - NS_ACCURACY, 1 + NS_ACCURACY]`.
pub const NS_ACCURACY: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectralMethod {
    ExactSvd,
    NewtonSchulz { iterations: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LmoMode {
    pub spectral: SpectralMethod,
}

impl Default for LmoMode {
    fn default() -> Self {
        LmoMode::exact()
    }
}

impl LmoMode {
    pub fn exact() -> Self {
        LmoMode {
            spectral: SpectralMethod::ExactSvd,
        }
    }

    pub fn newton_schulz(iterations: usize) -> Result<Self> {
        let mode = LmoMode {
            spectral: SpectralMethod::NewtonSchulz { iterations },
        };
        mode.validate()?;
        Ok(mode)
    }

    pub fn validate(&self) -> Result<()> {
        match self.spectral {
            SpectralMethod::NewtonSchulz { iterations: 0 } => {
                Err(Error::config("Newton-Schulz needs at least one iteration"))
            }
            _ => Ok(()),
        }
    }
}

/// Output of [`sharp`]. `degenerate` is set when `M = 0`, in which case the
/// direction is the zero block and the LMO step does not move.
#[derive(Debug, Clone, PartialEq)]
pub struct Sharp {
    pub direction: Vec<f64>,
    pub degenerate: bool,
}

/// Unit-ball direction maximizing `<M, D>` for the given norm.
pub fn sharp(m: &[f64], shape: Shape, kind: NormKind, mode: LmoMode) -> Result<Sharp> {
    if m.len() != shape.len() {
        return Err(Error::Shape(format!(
            "momentum block has {} entries, shape {shape} expects {}",
            m.len(),
            shape.len()
        )));
    }
    if kind == NormKind::Spectral && !shape.is_matrix() {
        return Err(Error::Config(format!(
            "spectral sharp operator needs a matrix shape, got {shape}"
        )));
    }
    if m.iter().all(|&v| v == 0.0) {
        return Ok(Sharp {
            direction: vec![0.0; m.len()],
            degenerate: true,
        });
    }
    let direction = match kind {
        NormKind::Euclidean => {
            let norm = l2(m);
            m.iter().map(|v| v / norm).collect()
        }
        NormKind::Infinity => m.iter().map(|&v| sign(v)).collect(),
        NormKind::Spectral => match mode.spectral {
            SpectralMethod::ExactSvd => polar_factor(m, shape),
            SpectralMethod::NewtonSchulz { iterations } => {
                mode.validate()?;
                newton_schulz(m, shape, iterations)
            }
        },
    };
    Ok(Sharp {
        direction,
        degenerate: false,
    })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

/// `U V^T` from the reduced SVD, row-major.
pub fn polar_factor(m: &[f64], shape: Shape) -> Vec<f64> {
    let svd = to_matrix(m, shape).svd(true, true);
    let u = svd.u.expect("SVD requested U");
    let v_t = svd.v_t.expect("SVD requested V^T");
    to_row_major(&(u * v_t))
}

/// Approximate polar factor by the quintic Newton-Schulz iteration on the
/// Frobenius-normalized input. Tall inputs are transposed so the Gram
/// product uses the smaller dimension.
pub fn newton_schulz(m: &[f64], shape: Shape, iterations: usize) -> Vec<f64> {
    let (a, b, c) = NEWTON_SCHULZ_COEFFS;
    let mut x = to_matrix(m, shape);
    let norm = x.norm();
    if norm == 0.0 {
        return vec![0.0; m.len()];
    }
    x /= norm;
    let transposed = x.nrows() > x.ncols();
    if transposed {
        x = x.transpose();
    }
    for _ in 0..iterations {
        let gram = &x * x.transpose();
        let poly = &gram * b + &gram * &gram * c;
        x = &x * a + poly * &x;
    }
    if transposed {
        x = x.transpose();
    }
    to_row_major(&x)
}

/// One LMO step on a single block: `X - radius * sharp(M)`.
pub fn lmo_step(
    x: &[f64],
    m: &[f64],
    radius: f64,
    shape: Shape,
    kind: NormKind,
    mode: LmoMode,
) -> Result<Vec<f64>> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::Config(format!("LMO radius must be positive, got {radius}")));
    }
    if x.len() != m.len() {
        return Err(Error::Shape("iterate and momentum blocks differ in size".into()));
    }
    let s = sharp(m, shape, kind, mode)?;
    if s.degenerate {
        return Ok(x.to_vec());
    }
    Ok(x.iter()
        .zip(&s.direction)
        .map(|(xi, di)| xi - radius * di)
        .collect())
}

/// Apply the LMO step to every layer. Returns the new iterate and the number
/// of layers whose momentum block was zero.
pub fn lmo_update(
    x: &LayeredTensor,
    m: &LayeredTensor,
    specs: &[LayerSpec],
    radii: &[f64],
    mode: LmoMode,
) -> Result<(LayeredTensor, usize)> {
    if !x.same_layout(m) || !x.layout().conforms(specs) || radii.len() != specs.len() {
        return Err(Error::Shape("LMO update arguments do not conform".into()));
    }
    let mut out = x.clone();
    let mut degenerate = 0;
    for (i, spec) in specs.iter().enumerate() {
        let mi = m.block(i);
        if mi.iter().all(|&v| v == 0.0) {
            degenerate += 1;
            continue;
        }
        let step = lmo_step(x.block(i), mi, radii[i], spec.shape, spec.norm, mode)?;
        out.block_mut(i).copy_from_slice(&step);
    }
    Ok((out, degenerate))
}
