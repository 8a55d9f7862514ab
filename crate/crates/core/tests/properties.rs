use cgluon::compress::{compress_contraction, compress_unbiased, CompressorKind, CompressorSpec};
use cgluon::lmo::{lmo_step, sharp, LmoMode};
use cgluon::tensor::{dual_norm, layer_norm, NormKind, Shape};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KINDS: [NormKind; 3] = [NormKind::Euclidean, NormKind::Spectral, NormKind::Infinity];

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, rows * cols)
}

fn kind() -> impl Strategy<Value = NormKind> {
    prop::sample::select(KINDS.to_vec())
}

/// A random direction with unit primal norm.
fn unit_direction(rng: &mut ChaCha8Rng, shape: Shape, kind: NormKind) -> Vec<f64> {
    let mut d: Vec<f64> = (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    if kind == NormKind::Infinity {
        // push some coordinates onto the boundary so the cube's corners are sampled
        for v in d.iter_mut() {
            if rng.random_bool(0.5) {
                *v = v.signum();
            }
        }
    }
    let norm = layer_norm(&d, shape, kind).unwrap();
    d.iter().map(|v| v / norm).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn norm_homogeneity(b in matrix(4, 3), c in -5.0f64..5.0, k in kind()) {
        let shape = Shape::Matrix(4, 3);
        let scaled: Vec<f64> = b.iter().map(|v| c * v).collect();
        let n = layer_norm(&b, shape, k).unwrap();
        let ns = layer_norm(&scaled, shape, k).unwrap();
        prop_assert!((ns - c.abs() * n).abs() <= 1e-10 * c.abs() * n + 1e-300);
    }

    #[test]
    fn norm_triangle(a in matrix(3, 5), b in matrix(3, 5), k in kind()) {
        let shape = Shape::Matrix(3, 5);
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        for f in [layer_norm, dual_norm] {
            let lhs = f(&sum, shape, k).unwrap();
            let rhs = f(&a, shape, k).unwrap() + f(&b, shape, k).unwrap();
            prop_assert!(lhs <= rhs * (1.0 + 1e-12));
        }
    }

    #[test]
    fn sharp_is_scale_invariant(m in matrix(5, 4), c in 0.01f64..100.0, k in kind()) {
        let shape = Shape::Matrix(5, 4);
        let scaled: Vec<f64> = m.iter().map(|v| c * v).collect();
        let a = sharp(&m, shape, k, LmoMode::exact()).unwrap().direction;
        let b = sharp(&scaled, shape, k, LmoMode::exact()).unwrap().direction;
        match k {
            NormKind::Infinity => prop_assert_eq!(a, b),
            NormKind::Euclidean => {
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() <= 1e-15);
                }
            }
            NormKind::Spectral => {
                let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                prop_assert!(diff <= 1e-8);
            }
        }
    }

    #[test]
    fn sharp_has_unit_norm_and_attains_dual(m in matrix(4, 6), k in kind()) {
        let shape = Shape::Matrix(4, 6);
        let s = sharp(&m, shape, k, LmoMode::exact()).unwrap();
        prop_assert!(layer_norm(&s.direction, shape, k).unwrap() <= 1.0 + 1e-6);
        let dual = dual_norm(&m, shape, k).unwrap();
        prop_assert!((dot(&m, &s.direction) - dual).abs() <= 1e-8 * dual.max(1.0));
    }

    #[test]
    fn lmo_step_stays_in_ball(x in matrix(3, 3), m in matrix(3, 3), r in 0.01f64..3.0, k in kind()) {
        let shape = Shape::Matrix(3, 3);
        let out = lmo_step(&x, &m, r, shape, k, LmoMode::exact()).unwrap();
        let moved: Vec<f64> = out.iter().zip(&x).map(|(a, b)| a - b).collect();
        prop_assert!(layer_norm(&moved, shape, k).unwrap() <= r + 1e-6);
    }

    #[test]
    fn top_k_contracts(x in prop::collection::vec(-100.0f64..100.0, 1..80), f in 0.01f64..1.0) {
        let spec = CompressorSpec::new(CompressorKind::TopK(f));
        let msg = compress_contraction(&x, &spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let c = msg.to_dense();
        let d = x.len();
        let r = spec.kept(d) as f64;
        let res: f64 = x.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum();
        let total: f64 = x.iter().map(|a| a * a).sum();
        prop_assert!(res <= (1.0 - r / d as f64) * total);
    }
}

#[test]
fn dual_norm_bounds_random_unit_directions() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let shape = Shape::Matrix(6, 5);
    for k in KINDS {
        for _ in 0..5 {
            let b: Vec<f64> = (0..30).map(|_| rng.random_range(-3.0..3.0)).collect();
            let dual = dual_norm(&b, shape, k).unwrap();
            for _ in 0..1000 {
                let d = unit_direction(&mut rng, shape, k);
                assert!(dot(&b, &d) <= dual + 1e-8, "{k:?}");
            }
            let s = sharp(&b, shape, k, LmoMode::exact()).unwrap();
            assert!((dot(&b, &s.direction) - dual).abs() <= 1e-8);
        }
    }
}

#[test]
fn rand_k_mean_and_second_moment() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = 64;
    let spec = CompressorSpec::new(CompressorKind::RandKUnbiased(8.0 / 64.0));
    let omega = spec.omega(d).unwrap();
    assert_eq!(omega, 7.0);
    let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let draws = 100_000;
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    let mut second = 0.0;
    let mut second_sq = 0.0;
    for _ in 0..draws {
        let q = compress_unbiased(&x, &spec, &mut rng).unwrap().to_dense();
        let mut norm_sq = 0.0;
        for j in 0..d {
            sum[j] += q[j];
            sum_sq[j] += q[j] * q[j];
            norm_sq += q[j] * q[j];
        }
        second += norm_sq;
        second_sq += norm_sq * norm_sq;
    }
    let nd = draws as f64;
    for j in 0..d {
        let mean = sum[j] / nd;
        let se = ((sum_sq[j] / nd - mean * mean) / nd).sqrt();
        assert!((mean - x[j]).abs() <= 5.0 * se + 1e-12, "coordinate {j}");
    }
    let mean2 = second / nd;
    let se2 = ((second_sq / nd - mean2 * mean2) / nd).sqrt() / mean2;
    let bound = (omega + 1.0) * x.iter().map(|v| v * v).sum::<f64>();
    assert!(mean2 <= bound * (1.0 + 5.0 * se2));
}

#[test]
fn rand_k_on_two_coordinates_is_fair() {
    let spec = CompressorSpec::new(CompressorKind::RandKUnbiased(0.5));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let draws = 100_000;
    let mut first = 0usize;
    for _ in 0..draws {
        let q = compress_unbiased(&[2.0, 4.0], &spec, &mut rng).unwrap().to_dense();
        assert!(q == [4.0, 0.0] || q == [0.0, 8.0]);
        first += usize::from(q[0] != 0.0);
    }
    let p = first as f64 / draws as f64;
    let se = (0.25 / draws as f64).sqrt();
    assert!((p - 0.5).abs() <= 5.0 * se);
}
