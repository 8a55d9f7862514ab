use std::sync::Arc;

use cgluon::data::{sample_batch, shard_dataset, synthetic_a5a_like, Dataset, Shard};
use cgluon::objective::{solve_reference_optimum, Objective};
use cgluon::tensor::{LayeredTensor, Layout, Shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `||a - b|| / max(||a||, ||b||)`, the usual gradient-check error.
fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn finite_difference(obj: &Objective, x: &LayeredTensor, batch: &[usize], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.dim());
    for j in 0..x.dim() {
        let mut plus = x.clone();
        plus.as_mut_slice()[j] += h;
        let mut minus = x.clone();
        minus.as_mut_slice()[j] -= h;
        let fp = obj.value_and_grad(&plus, batch).unwrap().0;
        let fm = obj.value_and_grad(&minus, batch).unwrap().0;
        out.push((fp - fm) / (2.0 * h));
    }
    out
}

#[test]
fn logreg_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data = Arc::new(synthetic_a5a_like(&mut rng));
    let layout = Layout::new(vec![Shape::Vector(123)]).unwrap();
    let obj = Objective::logreg(data.clone(), 1e-4, &layout).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let w: Vec<f64> = (0..123).map(|_| rng.random_range(-0.5..0.5)).collect();
        let x = LayeredTensor::from_flat(&layout, w).unwrap();
        let batch: Vec<usize> = (0..64).map(|_| rng.random_range(0..data.len())).collect();
        let (_, g) = obj.value_and_grad(&x, &batch).unwrap();
        let fd = finite_difference(&obj, &x, &batch, 1e-5);
        worst = worst.max(relative_error(g.as_slice(), &fd));
    }
    assert!(worst <= 1e-5, "worst relative error {worst:e}");
}

#[test]
fn quadratic_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let layout = Layout::new(vec![Shape::Matrix(3, 4), Shape::Vector(5)]).unwrap();
    let star = LayeredTensor::from_flat(&layout, (0..17).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let obj = Objective::quadratic(&layout, vec![0.5, 3.0], star, 10, 0.7, &mut rng).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let x = LayeredTensor::from_flat(&layout, (0..17).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let batch: Vec<usize> = (0..3).map(|_| rng.random_range(0..10)).collect();
        let (_, g) = obj.value_and_grad(&x, &batch).unwrap();
        let fd = finite_difference(&obj, &x, &batch, 1e-5);
        worst = worst.max(relative_error(g.as_slice(), &fd));
    }
    assert!(worst <= 1e-5, "worst relative error {worst:e}");
}

fn four_separable_points() -> Arc<Dataset> {
    Arc::new(
        Dataset::from_rows(
            "separable4",
            2,
            vec![
                (1.0, vec![(0, 1.0), (1, 0.5)]),
                (1.0, vec![(0, 2.0), (1, -0.5)]),
                (-1.0, vec![(0, -1.0), (1, 0.2)]),
                (-1.0, vec![(0, -0.5), (1, -1.0)]),
            ],
        )
        .unwrap(),
    )
}

/// Fixed-step gradient descent written against the raw data, sharing no code
/// with the objective module.
fn independent_gd(data: &Dataset, lambda: f64, tol: f64) -> f64 {
    let rows: Vec<(f64, [f64; 2])> = (0..data.len())
        .map(|i| {
            let (idx, val) = data.row(i);
            let mut x = [0.0; 2];
            for (&j, &v) in idx.iter().zip(val) {
                x[j] = v;
            }
            (data.label(i), x)
        })
        .collect();
    let max_sq = rows.iter().map(|(_, x)| x[0] * x[0] + x[1] * x[1]).fold(0.0, f64::max);
    let step = 1.0 / (max_sq / 4.0 + lambda);
    let mut w = [0.0f64; 2];
    let value = |w: &[f64; 2]| {
        rows.iter()
            .map(|(y, x)| (1.0 + (-y * (w[0] * x[0] + w[1] * x[1])).exp()).ln())
            .sum::<f64>()
            / rows.len() as f64
            + 0.5 * lambda * (w[0] * w[0] + w[1] * w[1])
    };
    for _ in 0..20_000_000 {
        let mut g = [lambda * w[0], lambda * w[1]];
        for (y, x) in &rows {
            let z = y * (w[0] * x[0] + w[1] * x[1]);
            let s = -y / (1.0 + z.exp()) / rows.len() as f64;
            g[0] += s * x[0];
            g[1] += s * x[1];
        }
        if (g[0] * g[0] + g[1] * g[1]).sqrt() <= tol {
            return value(&w);
        }
        w[0] -= step * g[0];
        w[1] -= step * g[1];
    }
    panic!("independent gradient descent did not converge");
}

#[test]
fn reference_optimum_matches_independent_descent() {
    let data = four_separable_points();
    let layout = Layout::new(vec![Shape::Vector(2)]).unwrap();
    let obj = Objective::logreg(data.clone(), 1e-4, &layout).unwrap();
    let sol = solve_reference_optimum(&obj, &obj.initial_point(), 1e-8, 100_000).unwrap();
    let oracle = independent_gd(&data, 1e-4, 1e-9);
    assert!((sol.value - oracle).abs() <= 1e-8, "{} vs {oracle}", sol.value);
}

#[test]
fn single_sample_gradients_are_unbiased() {
    let data = Arc::new(
        Dataset::from_rows(
            "tiny",
            3,
            vec![
                (1.0, vec![(0, 1.0), (2, -0.5)]),
                (-1.0, vec![(1, 2.0)]),
                (1.0, vec![(0, -1.0), (1, 1.0), (2, 1.0)]),
                (-1.0, vec![(2, 3.0)]),
                (1.0, vec![(0, 0.3)]),
            ],
        )
        .unwrap(),
    );
    let layout = Layout::new(vec![Shape::Vector(3)]).unwrap();
    let obj = Objective::logreg(data, 0.01, &layout).unwrap();
    let x = LayeredTensor::from_flat(&layout, vec![0.2, -0.4, 0.1]).unwrap();
    let shard = Shard {
        worker: 0,
        indices: (0..5).collect(),
    };
    let (_, full) = obj.full_value_and_grad(&x).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws = 100_000;
    let mut sum = [0.0; 3];
    let mut sum_sq = [0.0; 3];
    for _ in 0..draws {
        let batch = sample_batch(&shard, 1, &mut rng);
        let (_, g) = obj.value_and_grad(&x, &batch).unwrap();
        for j in 0..3 {
            sum[j] += g.as_slice()[j];
            sum_sq[j] += g.as_slice()[j].powi(2);
        }
    }
    let n = draws as f64;
    for j in 0..3 {
        let mean = sum[j] / n;
        let se = ((sum_sq[j] / n - mean * mean) / n).sqrt();
        assert!((mean - full.as_slice()[j]).abs() <= 5.0 * se, "coordinate {j}");
    }
}

#[test]
fn batch_sampling_is_uniform() {
    let shard = Shard {
        worker: 0,
        indices: vec![3, 7, 11, 19, 23],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let draws = 100_000;
    let batch = sample_batch(&shard, draws, &mut rng);
    let p = 0.2;
    let se = (p * (1.0 - p) / draws as f64).sqrt();
    for idx in &shard.indices {
        let freq = batch.iter().filter(|&&b| b == *idx).count() as f64 / draws as f64;
        assert!((freq - p).abs() <= 5.0 * se);
    }
    let one = Shard {
        worker: 0,
        indices: vec![42],
    };
    assert_eq!(sample_batch(&one, 1, &mut rng), vec![42]);
}

#[test]
fn shards_partition_any_split() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (n_ex, workers) in [(10, 2), (10, 3), (6414, 4), (7, 7), (5, 1)] {
        let shards = shard_dataset(n_ex, workers, &mut rng).unwrap();
        let mut all: Vec<usize> = shards.iter().flat_map(|s| s.indices.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..n_ex).collect::<Vec<_>>());
    }
    assert!(shard_dataset(3, 4, &mut rng).is_err());
}

#[test]
fn libsvm_file_loads_with_declared_width() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("small.libsvm");
    std::fs::write(&path, "+1 1:1 3:0.5\n-1 2:2\n# trailing comment\n0 1:-1\n").unwrap();
    let data = cgluon::data::load_libsvm(&path, 0).unwrap();
    assert_eq!((data.len(), data.num_features()), (3, 3));
    assert_eq!(data.labels(), &[1.0, -1.0, -1.0]);
    assert_eq!(data.row(0), (&[0usize, 2][..], &[1.0, 0.5][..]));
    let wide = cgluon::data::load_libsvm(&path, 123).unwrap();
    assert_eq!(wide.num_features(), 123);
    assert!(cgluon::data::load_libsvm(dir.path().join("missing"), 0).is_err());
}
