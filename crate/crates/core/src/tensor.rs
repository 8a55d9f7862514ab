//! Layered parameter containers and per-layer geometry.
//!
//! A [`LayeredTensor`] is the concatenation `X = [X_1, ..., X_p]` of dense
//! row-major blocks. Every layer carries a [`LayerSpec`] naming the norm used
//! by the linear minimization oracle for that block and its radius weight.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Geometry of one layer block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shape {
    Vector(usize),
    /// Row-major `rows x cols` matrix.
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_matrix(&self) -> bool {
        matches!(self, Shape::Matrix(..))
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Vector(n) => write!(f, "{n}"),
            Shape::Matrix(r, c) => write!(f, "{r}x{c}"),
        }
    }
}

impl std::str::FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::config(format!("invalid shape `{s}`")))
        };
        let shape = match s.split_once(['x', 'X']) {
            Some((r, c)) => Shape::Matrix(parse(r)?, parse(c)?),
            None => Shape::Vector(parse(s)?),
        };
        if shape.is_empty() {
            return Err(Error::config(format!("shape `{s}` has no entries")));
        }
        Ok(shape)
    }
}

/// Norm family used for a layer's trust region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormKind {
    /// Frobenius / l2 norm of the flattened block. Self-dual.
    Euclidean,
    /// Largest singular value. Dual: nuclear norm.
    Spectral,
    /// Max absolute entry. Dual: entrywise l1.
    Infinity,
}

impl NormKind {
    pub fn name(&self) -> &'static str {
        match self {
            NormKind::Euclidean => "euclidean",
            NormKind::Spectral => "spectral",
            NormKind::Infinity => "infinity",
        }
    }
}

impl std::str::FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "euclidean" | "l2" | "frobenius" => Ok(NormKind::Euclidean),
            "spectral" => Ok(NormKind::Spectral),
            "infinity" | "linf" | "max" => Ok(NormKind::Infinity),
            other => Err(Error::config(format!("unknown norm kind `{other}`"))),
        }
    }
}

/// Per-layer geometry: norm, radius weight `t_i` and block shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub norm: NormKind,
    pub weight: f64,
    pub shape: Shape,
}

impl LayerSpec {
    pub fn new(norm: NormKind, weight: f64, shape: Shape) -> Result<Self> {
        let spec = LayerSpec { norm, weight, shape };
        spec.validate()?;
        Ok(spec)
    }

    pub fn euclidean(len: usize) -> Self {
        LayerSpec {
            norm: NormKind::Euclidean,
            weight: 1.0,
            shape: Shape::Vector(len),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight.is_finite() && self.weight > 0.0) {
            return Err(Error::config(format!(
                "layer weight must be positive, got {}",
                self.weight
            )));
        }
        if self.shape.is_empty() {
            return Err(Error::config("layer shape has no entries"));
        }
        check_kind(self.norm, self.shape)
    }
}

fn check_kind(kind: NormKind, shape: Shape) -> Result<()> {
    if kind == NormKind::Spectral && !shape.is_matrix() {
        return Err(Error::config(format!(
            "spectral norm requires a matrix-shaped layer, got shape {shape}"
        )));
    }
    Ok(())
}

/// Shapes and flat offsets of every layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    shapes: Vec<Shape>,
    offsets: Vec<usize>,
    dim: usize,
}

impl Layout {
    pub fn new(shapes: Vec<Shape>) -> Result<Arc<Self>> {
        if shapes.is_empty() {
            return Err(Error::config("a layout needs at least one layer"));
        }
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut dim = 0;
        for s in &shapes {
            if s.is_empty() {
                return Err(Error::config("layer shape has no entries"));
            }
            offsets.push(dim);
            dim += s.len();
        }
        Ok(Arc::new(Layout {
            shapes,
            offsets,
            dim,
        }))
    }

    pub fn from_specs(specs: &[LayerSpec]) -> Result<Arc<Self>> {
        Layout::new(specs.iter().map(|s| s.shape).collect())
    }

    pub fn num_layers(&self) -> usize {
        self.shapes.len()
    }

    /// Total number of scalars `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self, layer: usize) -> Shape {
        self.shapes[layer]
    }

    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn range(&self, layer: usize) -> std::ops::Range<usize> {
        let start = self.offsets[layer];
        start..start + self.shapes[layer].len()
    }

    pub fn conforms(&self, specs: &[LayerSpec]) -> bool {
        specs.len() == self.shapes.len() && specs.iter().zip(&self.shapes).all(|(s, t)| s.shape == *t)
    }
}

/// Dense parameter/gradient value over a [`Layout`].
#[derive(Debug, Clone)]
pub struct LayeredTensor {
    layout: Arc<Layout>,
    data: Vec<f64>,
}

impl PartialEq for LayeredTensor {
    fn eq(&self, other: &Self) -> bool {
        self.layout == other.layout && self.data == other.data
    }
}

impl LayeredTensor {
    pub fn zeros(layout: &Arc<Layout>) -> Self {
        LayeredTensor {
            layout: Arc::clone(layout),
            data: vec![0.0; layout.dim()],
        }
    }

    pub fn from_flat(layout: &Arc<Layout>, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.dim() {
            return Err(Error::shape(format!(
                "flat data has {} entries, layout expects {}",
                data.len(),
                layout.dim()
            )));
        }
        check_finite(&data)?;
        Ok(LayeredTensor {
            layout: Arc::clone(layout),
            data,
        })
    }

    pub fn from_blocks(layout: &Arc<Layout>, blocks: Vec<Vec<f64>>) -> Result<Self> {
        if blocks.len() != layout.num_layers() {
            return Err(Error::shape(format!(
                "{} blocks given, layout has {} layers",
                blocks.len(),
                layout.num_layers()
            )));
        }
        let mut data = Vec::with_capacity(layout.dim());
        for (i, b) in blocks.into_iter().enumerate() {
            if b.len() != layout.shape(i).len() {
                return Err(Error::shape(format!(
                    "block {i} has {} entries, shape {} expects {}",
                    b.len(),
                    layout.shape(i),
                    layout.shape(i).len()
                )));
            }
            data.extend(b);
        }
        LayeredTensor::from_flat(layout, data)
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn num_layers(&self) -> usize {
        self.layout.num_layers()
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn block(&self, layer: usize) -> &[f64] {
        &self.data[self.layout.range(layer)]
    }

    pub fn block_mut(&mut self, layer: usize) -> &mut [f64] {
        let r = self.layout.range(layer);
        &mut self.data[r]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_layout(&self, other: &LayeredTensor) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    fn check_same(&self, other: &LayeredTensor) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::shape("layered tensors have different layouts"))
        }
    }

    /// `self += a * other`, entry by entry in index order.
    pub fn add_scaled(&mut self, a: f64, other: &LayeredTensor) {
        debug_assert!(self.same_layout(other));
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn add_assign(&mut self, other: &LayeredTensor) {
        debug_assert!(self.same_layout(other));
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += y;
        }
    }

    pub fn sub_assign(&mut self, other: &LayeredTensor) {
        debug_assert!(self.same_layout(other));
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x -= y;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for x in &mut self.data {
            *x *= a;
        }
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|x| *x = 0.0);
    }

    pub fn dot(&self, other: &LayeredTensor) -> f64 {
        debug_assert!(self.same_layout(other));
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Euclidean norm of the flattened tensor.
    pub fn norm_l2(&self) -> f64 {
        l2(&self.data)
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Equality of the underlying bit patterns (distinguishes `-0.0` from `0.0`).
    pub fn bitwise_eq(&self, other: &LayeredTensor) -> bool {
        self.same_layout(other)
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Block-wise `a X + b Y`.
pub fn combine(a: f64, x: &LayeredTensor, b: f64, y: &LayeredTensor) -> Result<LayeredTensor> {
    x.check_same(y)?;
    let data: Vec<f64> = x.data.iter().zip(&y.data).map(|(u, v)| a * u + b * v).collect();
    LayeredTensor::from_flat(&x.layout, data)
}

fn check_finite(data: &[f64]) -> Result<()> {
    match data.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("entry {i} is {}", data[i]))),
        None => Ok(()),
    }
}

pub(crate) fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_block(block: &[f64], shape: Shape, kind: NormKind) -> Result<()> {
    if block.len() != shape.len() {
        return Err(Error::shape(format!(
            "block has {} entries, shape {shape} expects {}",
            block.len(),
            shape.len()
        )));
    }
    check_kind(kind, shape)
}

pub(crate) fn to_matrix(block: &[f64], shape: Shape) -> DMatrix<f64> {
    match shape {
        Shape::Matrix(r, c) => DMatrix::from_row_slice(r, c, block),
        Shape::Vector(n) => DMatrix::from_row_slice(n, 1, block),
    }
}

/// Singular values of a matrix block, in no particular order.
pub fn singular_values(block: &[f64], shape: Shape) -> Vec<f64> {
    to_matrix(block, shape).singular_values().iter().copied().collect()
}

/// The primal norm `||block||_(i)`.
pub fn layer_norm(block: &[f64], shape: Shape, kind: NormKind) -> Result<f64> {
    check_block(block, shape, kind)?;
    Ok(match kind {
        NormKind::Euclidean => l2(block),
        NormKind::Spectral => singular_values(block, shape)
            .into_iter()
            .fold(0.0, f64::max),
        NormKind::Infinity => block.iter().fold(0.0, |m, x| m.max(x.abs())),
    })
}

/// The dual norm `||block||_(i)*`: l2, nuclear or l1.
pub fn dual_norm(block: &[f64], shape: Shape, kind: NormKind) -> Result<f64> {
    check_block(block, shape, kind)?;
    Ok(match kind {
        NormKind::Euclidean => l2(block),
        NormKind::Spectral => singular_values(block, shape).into_iter().sum(),
        NormKind::Infinity => block.iter().map(|x| x.abs()).sum(),
    })
}

/// `sum_i t_i ||grad_i||_(i)*`, the stationarity measure for layer-wise geometry.
pub fn stationarity(grad: &LayeredTensor, specs: &[LayerSpec]) -> Result<f64> {
    if !grad.layout.conforms(specs) {
        return Err(Error::shape("gradient does not conform to the layer specs"));
    }
    let mut total = 0.0;
    for (i, spec) in specs.iter().enumerate() {
        total += spec.weight * dual_norm(grad.block(i), spec.shape, spec.norm)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_layout(lens: &[usize]) -> Arc<Layout> {
        Layout::new(lens.iter().map(|&n| Shape::Vector(n)).collect()).unwrap()
    }

    #[test]
    fn norms_on_small_blocks() {
        let v = [3.0, 4.0];
        assert_eq!(layer_norm(&v, Shape::Vector(2), NormKind::Euclidean).unwrap(), 5.0);
        assert_eq!(dual_norm(&v, Shape::Vector(2), NormKind::Euclidean).unwrap(), 5.0);

        let d = [2.0, 0.0, 0.0, 0.5];
        let s = Shape::Matrix(2, 2);
        assert!((layer_norm(&d, s, NormKind::Spectral).unwrap() - 2.0).abs() < 1e-12);
        assert!((dual_norm(&d, s, NormKind::Spectral).unwrap() - 2.5).abs() < 1e-12);

        let w = [1.0, -7.0, 2.0];
        assert_eq!(layer_norm(&w, Shape::Vector(3), NormKind::Infinity).unwrap(), 7.0);
        assert_eq!(dual_norm(&w, Shape::Vector(3), NormKind::Infinity).unwrap(), 10.0);
    }

    #[test]
    fn zero_block_has_zero_norm() {
        let z = [0.0; 6];
        for (kind, shape) in [
            (NormKind::Euclidean, Shape::Vector(6)),
            (NormKind::Spectral, Shape::Matrix(2, 3)),
            (NormKind::Infinity, Shape::Matrix(3, 2)),
        ] {
            assert_eq!(layer_norm(&z, shape, kind).unwrap(), 0.0);
            assert_eq!(dual_norm(&z, shape, kind).unwrap(), 0.0);
        }
    }

    #[test]
    fn spectral_on_vector_shape_is_rejected() {
        let err = layer_norm(&[1.0, 2.0], Shape::Vector(2), NormKind::Spectral).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = dual_norm(&[1.0, 2.0, 3.0], Shape::Matrix(2, 2), NormKind::Euclidean).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn layer_spec_invariants() {
        assert!(LayerSpec::new(NormKind::Euclidean, 0.0, Shape::Vector(3)).is_err());
        assert!(LayerSpec::new(NormKind::Euclidean, -1.0, Shape::Vector(3)).is_err());
        assert!(LayerSpec::new(NormKind::Spectral, 1.0, Shape::Vector(3)).is_err());
        assert!(LayerSpec::new(NormKind::Spectral, 1.0, Shape::Matrix(3, 2)).is_ok());
        assert!(LayerSpec::new(NormKind::Infinity, 2.0, Shape::Vector(3)).is_ok());
    }

    #[test]
    fn stationarity_examples() {
        let layout = vec_layout(&[2, 2]);
        let specs = [
            LayerSpec::new(NormKind::Euclidean, 1.0, Shape::Vector(2)).unwrap(),
            LayerSpec::new(NormKind::Euclidean, 2.0, Shape::Vector(2)).unwrap(),
        ];
        let zero = LayeredTensor::zeros(&layout);
        assert_eq!(stationarity(&zero, &specs).unwrap(), 0.0);
        let g = LayeredTensor::from_blocks(&layout, vec![vec![3.0, 4.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(stationarity(&g, &specs).unwrap(), 7.0);

        let single = vec_layout(&[2]);
        let g = LayeredTensor::from_flat(&single, vec![3.0, 4.0]).unwrap();
        assert_eq!(stationarity(&g, &[LayerSpec::euclidean(2)]).unwrap(), 5.0);
        assert!(stationarity(&g, &specs).is_err());
    }

    #[test]
    fn combine_examples() {
        let layout = vec_layout(&[3, 1]);
        let x = LayeredTensor::from_flat(&layout, vec![1.5, -2.0, 0.25, 8.0]).unwrap();
        let y = LayeredTensor::from_flat(&layout, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(combine(1.0, &x, 0.0, &y).unwrap(), x);
        assert_eq!(combine(0.5, &x, 0.5, &x).unwrap(), x);
        assert!(combine(1.0, &x, -1.0, &x).unwrap().is_zero());

        let other = LayeredTensor::zeros(&vec_layout(&[4]));
        assert!(combine(1.0, &x, 1.0, &other).is_err());
    }

    #[test]
    fn construction_rejects_bad_input() {
        let layout = vec_layout(&[2]);
        assert!(LayeredTensor::from_flat(&layout, vec![1.0]).is_err());
        assert!(matches!(
            LayeredTensor::from_flat(&layout, vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(LayeredTensor::from_blocks(&layout, vec![vec![1.0], vec![2.0]]).is_err());
    }

    #[test]
    fn shape_parsing() {
        assert_eq!("123".parse::<Shape>().unwrap(), Shape::Vector(123));
        assert_eq!("3x41".parse::<Shape>().unwrap(), Shape::Matrix(3, 41));
        assert!("0".parse::<Shape>().is_err());
        assert!("ax3".parse::<Shape>().is_err());
    }

    #[test]
    fn bitwise_equality_distinguishes_signed_zero() {
        let layout = vec_layout(&[1]);
        let a = LayeredTensor::from_flat(&layout, vec![0.0]).unwrap();
        let b = LayeredTensor::from_flat(&layout, vec![-0.0]).unwrap();
        assert_eq!(a, b);
        assert!(!a.bitwise_eq(&b));
    }
}
