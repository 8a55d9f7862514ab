//! Differentiable objectives `f = mean_xi f_xi` over layered parameters.

use std::sync::Arc;

use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::{LayeredTensor, Layout};

#[derive(Debug, Clone)]
pub enum ObjectiveKind {
    /// `mean_j log(1 + exp(-y_j <w, x_j>)) + (weight_decay / 2) ||w||^2`, with
    /// `w` the flattened parameter.
    LogReg { data: Arc<Dataset>, weight_decay: f64 },
    /// `f_j(X) = sum_i (c_i / 2)||X_i - X_i*||^2 - c_i <z_{j,i}, X_i>` with
    /// zero-mean perturbations `z_j`, so that `f = sum_i (c_i / 2)||X_i - X_i*||^2`.
    Quadratic {
        curvatures: Vec<f64>,
        minimizer: LayeredTensor,
        perturbations: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone)]
pub struct Objective {
    layout: Arc<Layout>,
    kind: ObjectiveKind,
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Objective {
    pub fn logreg(data: Arc<Dataset>, weight_decay: f64, layout: &Arc<Layout>) -> Result<Self> {
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay must be >= 0, got {weight_decay}")));
        }
        if layout.dim() != data.num_features() {
            return Err(Error::Shape(format!(
                "layout has {} parameters, dataset `{}` has {} features",
                layout.dim(),
                data.name(),
                data.num_features()
            )));
        }
        Ok(Objective {
            layout: Arc::clone(layout),
            kind: ObjectiveKind::LogReg { data, weight_decay },
        })
    }

    /// Quadratic with `samples` stochastic components whose perturbations are
    /// Gaussian with standard deviation `noise`, re-centred to mean zero.
    pub fn quadratic<R: Rng + ?Sized>(
        layout: &Arc<Layout>,
        curvatures: Vec<f64>,
        minimizer: LayeredTensor,
        samples: usize,
        noise: f64,
        rng: &mut R,
    ) -> Result<Self> {
        use rand_distr::{Distribution, StandardNormal};
        if curvatures.len() != layout.num_layers() {
            return Err(Error::Config(format!(
                "{} curvatures for {} layers",
                curvatures.len(),
                layout.num_layers()
            )));
        }
        if curvatures.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::Config("quadratic curvatures must be positive".into()));
        }
        if minimizer.layout().as_ref() != layout.as_ref() {
            return Err(Error::Shape("minimizer does not match the layout".into()));
        }
        if samples == 0 || !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::Config("quadratic needs samples >= 1 and noise >= 0".into()));
        }
        let d = layout.dim();
        let mut perturbations: Vec<Vec<f64>> = (0..samples)
            .map(|_| (0..d).map(|_| { let z: f64 = StandardNormal.sample(rng); noise * z }).collect::<Vec<f64>>())
            .collect();
        if noise > 0.0 {
            let mut mean = vec![0.0; d];
            for z in &perturbations {
                for (m, v) in mean.iter_mut().zip(z) {
                    *m += v / samples as f64;
                }
            }
            for z in &mut perturbations {
                for (v, m) in z.iter_mut().zip(&mean) {
                    *v -= m;
                }
            }
        }
        Ok(Objective {
            layout: Arc::clone(layout),
            kind: ObjectiveKind::Quadratic {
                curvatures,
                minimizer,
                perturbations,
            },
        })
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn kind(&self) -> &ObjectiveKind {
        &self.kind
    }

    /// Number of sample indices `xi` the objective averages over.
    pub fn num_examples(&self) -> usize {
        match &self.kind {
            ObjectiveKind::LogReg { data, .. } => data.len(),
            ObjectiveKind::Quadratic { perturbations, .. } => perturbations.len(),
        }
    }

    /// Convex objectives admit a reference optimum.
    pub fn is_convex(&self) -> bool {
        match &self.kind {
            ObjectiveKind::LogReg { weight_decay, .. } => *weight_decay > 0.0,
            ObjectiveKind::Quadratic { .. } => true,
        }
    }

    /// Known minimum value, when available in closed form.
    pub fn known_minimum(&self) -> Option<f64> {
        match &self.kind {
            ObjectiveKind::Quadratic { .. } => Some(0.0),
            ObjectiveKind::LogReg { .. } => None,
        }
    }

    fn check(&self, x: &LayeredTensor) -> Result<()> {
        if x.layout().as_ref() != self.layout.as_ref() {
            return Err(Error::Shape("parameter does not match the objective layout".into()));
        }
        Ok(())
    }

    /// Minibatch value and gradient, averaged over `batch` (repeats allowed).
    pub fn value_and_grad(&self, x: &LayeredTensor, batch: &[usize]) -> Result<(f64, LayeredTensor)> {
        self.check(x)?;
        if batch.is_empty() {
            return Err(Error::Empty("gradient batch is empty".into()));
        }
        if let Some(&bad) = batch.iter().find(|&&i| i >= self.num_examples()) {
            return Err(Error::Config(format!("sample index {bad} out of range")));
        }
        let mut grad = LayeredTensor::zeros(&self.layout);
        let value = self.accumulate(x, batch.iter().copied(), batch.len(), &mut grad, true);
        Ok((value, grad))
    }

    /// Minibatch gradient written into `out`. Indices must be in range.
    pub fn grad_into(&self, x: &LayeredTensor, batch: &[usize], out: &mut LayeredTensor) {
        debug_assert!(!batch.is_empty());
        out.fill_zero();
        self.accumulate(x, batch.iter().copied(), batch.len(), out, false);
    }

    /// Full objective value and gradient.
    pub fn full_value_and_grad(&self, x: &LayeredTensor) -> Result<(f64, LayeredTensor)> {
        self.check(x)?;
        let mut grad = LayeredTensor::zeros(&self.layout);
        let value = match &self.kind {
            ObjectiveKind::LogReg { .. } => {
                let n = self.num_examples();
                self.accumulate(x, 0..n, n, &mut grad, true)
            }
            ObjectiveKind::Quadratic { curvatures, minimizer, .. } => {
                let mut value = 0.0;
                for (i, &c) in curvatures.iter().enumerate() {
                    let g = grad.block_mut(i);
                    for ((gj, xj), sj) in g.iter_mut().zip(x.block(i)).zip(minimizer.block(i)) {
                        let diff = xj - sj;
                        *gj = c * diff;
                        value += 0.5 * c * diff * diff;
                    }
                }
                value
            }
        };
        Ok((value, grad))
    }

    pub fn full_value(&self, x: &LayeredTensor) -> Result<f64> {
        self.full_value_and_grad(x).map(|(v, _)| v)
    }

    fn accumulate<I: Iterator<Item = usize>>(
        &self,
        x: &LayeredTensor,
        batch: I,
        count: usize,
        grad: &mut LayeredTensor,
        with_value: bool,
    ) -> f64 {
        let inv = 1.0 / count as f64;
        match &self.kind {
            ObjectiveKind::LogReg { data, weight_decay } => {
                let w = x.as_slice();
                let g = grad.as_mut_slice();
                let mut loss = 0.0;
                for i in batch {
                    let y = data.label(i);
                    let z = -y * data.margin(i, w);
                    if with_value {
                        loss += softplus(z);
                    }
                    let coeff = -y * sigmoid(z) * inv;
                    let (idx, val) = data.row(i);
                    for (&j, v) in idx.iter().zip(val) {
                        g[j] += coeff * v;
                    }
                }
                let mut reg = 0.0;
                for (gj, wj) in g.iter_mut().zip(w) {
                    *gj += weight_decay * wj;
                    reg += wj * wj;
                }
                loss * inv + 0.5 * weight_decay * reg
            }
            ObjectiveKind::Quadratic {
                curvatures,
                minimizer,
                perturbations,
            } => {
                let mut zbar = vec![0.0; x.dim()];
                for j in batch {
                    for (m, z) in zbar.iter_mut().zip(&perturbations[j]) {
                        *m += z;
                    }
                }
                zbar.iter_mut().for_each(|m| *m *= inv);
                let mut value = 0.0;
                for (i, &c) in curvatures.iter().enumerate() {
                    let range = self.layout.range(i);
                    let g = grad.block_mut(i);
                    for (k, gk) in g.iter_mut().enumerate() {
                        let xj = x.as_slice()[range.start + k];
                        let diff = xj - minimizer.as_slice()[range.start + k];
                        let z = zbar[range.start + k];
                        *gk = c * (diff - z);
                        value += 0.5 * c * diff * diff - c * z * xj;
                    }
                }
                value
            }
        }
    }

    /// Default starting point: zeros for logistic regression, the origin for quadratics.
    pub fn initial_point(&self) -> LayeredTensor {
        LayeredTensor::zeros(&self.layout)
    }
}

/// Result of [`solve_reference_optimum`].
#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    pub value: f64,
    pub point: LayeredTensor,
    pub iterations: usize,
    pub grad_norm: f64,
}

/// Full-batch gradient descent with Armijo backtracking until `||grad f|| <= tolerance`.
///
/// Trial steps use the Barzilai-Borwein length, falling back to the last
/// accepted step. Errors if `max_iterations` is exhausted.
pub fn solve_reference_optimum(
    objective: &Objective,
    start: &LayeredTensor,
    tolerance: f64,
    max_iterations: usize,
) -> Result<ReferenceSolution> {
    if !objective.is_convex() {
        return Err(Error::Config(
            "reference optimum requires a convex objective (weight_decay > 0 or quadratic)".into(),
        ));
    }
    let mut x = start.clone();
    let (mut fx, mut g) = objective.full_value_and_grad(&x)?;
    let mut gnorm = g.norm_l2();
    let mut step = 1.0;
    let mut prev: Option<(LayeredTensor, LayeredTensor)> = None;
    let mut iterations = 0;
    while gnorm > tolerance {
        if iterations == max_iterations {
            return Err(Error::NoConvergence {
                iterations,
                grad_norm: gnorm,
            });
        }
        if let Some((px, pg)) = &prev {
            let mut s = x.clone();
            s.sub_assign(px);
            let mut y = g.clone();
            y.sub_assign(pg);
            let sy = s.dot(&y);
            if sy > 0.0 {
                step = s.dot(&s) / sy;
            }
        }
        let g2 = gnorm * gnorm;
        let (x_new, f_new) = loop {
            let mut trial = x.clone();
            trial.add_scaled(-step, &g);
            let f_trial = objective.full_value(&trial)?;
            if f_trial <= fx - 1e-4 * step * g2 {
                break (trial, f_trial);
            }
            step *= 0.5;
            if step < 1e-20 {
                return Err(Error::NoConvergence {
                    iterations,
                    grad_norm: gnorm,
                });
            }
        };
        let (_, g_new) = objective.full_value_and_grad(&x_new)?;
        prev = Some((std::mem::replace(&mut x, x_new), std::mem::replace(&mut g, g_new)));
        fx = f_new;
        gnorm = g.norm_l2();
        iterations += 1;
    }
    Ok(ReferenceSolution {
        value: fx,
        point: x,
        iterations,
        grad_norm: gnorm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vec_layout(n: usize) -> Arc<Layout> {
        Layout::new(vec![Shape::Vector(n)]).unwrap()
    }

    fn tiny_logreg(weight_decay: f64) -> Objective {
        let rows = vec![
            (1.0, vec![(0, 1.0), (1, 2.0)]),
            (-1.0, vec![(0, -1.0), (1, 0.5)]),
            (1.0, vec![(1, 1.5)]),
            (-1.0, vec![(0, -2.0)]),
        ];
        let ds = Arc::new(Dataset::from_rows("tiny", 2, rows).unwrap());
        Objective::logreg(ds, weight_decay, &vec_layout(2)).unwrap()
    }

    #[test]
    fn logreg_at_origin_is_ln2() {
        let obj = tiny_logreg(0.0);
        let x = obj.initial_point();
        let (v, _) = obj.value_and_grad(&x, &[0, 1]).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((obj.full_value(&x).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn quadratic_closed_form() {
        let layout = vec_layout(2);
        let obj = Objective::quadratic(
            &layout,
            vec![1.0],
            LayeredTensor::zeros(&layout),
            4,
            0.0,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        let x = LayeredTensor::from_flat(&layout, vec![1.0, 0.0]).unwrap();
        let (v, g) = obj.value_and_grad(&x, &[0]).unwrap();
        assert_eq!(v, 0.5);
        assert_eq!(g.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn quadratic_perturbations_average_to_full_gradient() {
        let layout = vec_layout(3);
        let obj = Objective::quadratic(
            &layout,
            vec![2.0],
            LayeredTensor::from_flat(&layout, vec![1.0, -1.0, 0.5]).unwrap(),
            5,
            0.3,
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
        let x = LayeredTensor::from_flat(&layout, vec![0.2, 0.1, -0.4]).unwrap();
        let (_, g_all) = obj.value_and_grad(&x, &[0, 1, 2, 3, 4]).unwrap();
        let (_, g_full) = obj.full_value_and_grad(&x).unwrap();
        for (a, b) in g_all.as_slice().iter().zip(g_full.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        let (_, g0) = obj.value_and_grad(&x, &[0]).unwrap();
        assert_ne!(g0.as_slice(), g_full.as_slice());
    }

    #[test]
    fn empty_batch_and_bad_index_are_errors() {
        let obj = tiny_logreg(0.0);
        let x = obj.initial_point();
        assert!(matches!(obj.value_and_grad(&x, &[]), Err(Error::Empty(_))));
        assert!(obj.value_and_grad(&x, &[4]).is_err());
    }

    #[test]
    fn layout_must_match_features() {
        let ds = Arc::new(Dataset::from_rows("d", 3, vec![(1.0, vec![])]).unwrap());
        assert!(Objective::logreg(ds.clone(), 0.0, &vec_layout(2)).is_err());
        assert!(Objective::logreg(ds, -1.0, &vec_layout(3)).is_err());
    }

    #[test]
    fn reference_optimum_of_quadratic_is_zero() {
        let layout = vec_layout(3);
        let obj = Objective::quadratic(
            &layout,
            vec![3.0],
            LayeredTensor::zeros(&layout),
            2,
            0.0,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        let start = LayeredTensor::from_flat(&layout, vec![1.0, -2.0, 0.5]).unwrap();
        let sol = solve_reference_optimum(&obj, &start, 1e-10, 1000).unwrap();
        assert!(sol.value.abs() < 1e-12);
    }

    #[test]
    fn infinite_tolerance_returns_start_value() {
        let obj = tiny_logreg(1e-4);
        let sol = solve_reference_optimum(&obj, &obj.initial_point(), f64::INFINITY, 0).unwrap();
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.value, obj.full_value(&obj.initial_point()).unwrap());
    }

    #[test]
    fn non_convex_and_non_converging_cases() {
        let obj = tiny_logreg(0.0);
        assert!(solve_reference_optimum(&obj, &obj.initial_point(), 1e-6, 10).is_err());
        let obj = tiny_logreg(1e-4);
        assert!(matches!(
            solve_reference_optimum(&obj, &obj.initial_point(), 1e-12, 2),
            Err(Error::NoConvergence { iterations: 2, .. })
        ));
    }
}
