//! Binary classification datasets, sharding across workers and batch sampling.

use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Sparse (CSR) example matrix with `+1/-1` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    num_features: usize,
    labels: Vec<f64>,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

/// One example: 0-based feature indices with their values.
pub type SparseRow = Vec<(usize, f64)>;

impl Dataset {
    /// Build from `(label, row)` pairs. `num_features` is raised to cover every index seen.
    pub fn from_rows(name: impl Into<String>, num_features: usize, rows: Vec<(f64, SparseRow)>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("dataset has no examples".into()));
        }
        let mut ds = Dataset {
            name: name.into(),
            num_features,
            labels: Vec::with_capacity(rows.len()),
            indptr: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        };
        for (i, (label, row)) in rows.into_iter().enumerate() {
            if label != 1.0 && label != -1.0 {
                return Err(Error::Config(format!("example {i} has label {label}, expected +1 or -1")));
            }
            ds.labels.push(label);
            for (j, v) in row {
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("example {i}, feature {j}")));
                }
                ds.num_features = ds.num_features.max(j + 1);
                ds.indices.push(j);
                ds.values.push(v);
            }
            ds.indptr.push(ds.indices.len());
        }
        Ok(ds)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[r.clone()], &self.values[r])
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `<w, x_i>`.
    pub fn margin(&self, i: usize, w: &[f64]) -> f64 {
        let (idx, val) = self.row(i);
        idx.iter().zip(val).map(|(&j, v)| w[j] * v).sum()
    }
}

/// Parse libsvm text (`label idx:val ...`, 1-based indices).
///
/// Labels `0`/`-1` map to `-1` and `1`/`+1` to `+1`. Blank lines and `#`
/// comments are skipped. The feature dimension is the largest index seen or
/// `min_features`, whichever is larger (sparse files may omit trailing
/// features).
pub fn parse_libsvm<R: BufRead>(reader: R, name: &str, min_features: usize) -> Result<Dataset> {
    let mut rows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = lineno + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { line: line_no, message };
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a token");
        let label: f64 = label_tok
            .parse()
            .map_err(|_| err(format!("invalid label `{label_tok}`")))?;
        let label = if label == 1.0 {
            1.0
        } else if label == 0.0 || label == -1.0 {
            -1.0
        } else {
            return Err(err(format!("label `{label_tok}` is not binary")));
        };
        let mut row: SparseRow = Vec::new();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("expected `index:value`, got `{tok}`")))?;
            let idx: usize = idx.parse().map_err(|_| err(format!("invalid feature index `{idx}`")))?;
            if idx == 0 {
                return Err(err("feature indices are 1-based".into()));
            }
            let val: f64 = val.parse().map_err(|_| err(format!("invalid feature value `{val}`")))?;
            if !val.is_finite() {
                return Err(err(format!("non-finite feature value `{val}`")));
            }
            if row.iter().any(|&(j, _)| j == idx - 1) {
                return Err(err(format!("duplicate feature index {idx}")));
            }
            row.push((idx - 1, val));
        }
        rows.push((label, row));
    }
    if rows.is_empty() {
        return Err(Error::Empty(format!("libsvm input `{name}` has no examples")));
    }
    Dataset::from_rows(name, min_features, rows)
}

pub fn load_libsvm(path: impl AsRef<Path>, min_features: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    parse_libsvm(BufReader::new(file), &name, min_features)
}

/// Group sizes of a one-hot encoding with 14 categorical attributes over
/// 123 binary features, the layout of the adult-derived `a*a` benchmarks.
pub const A5A_LIKE_GROUPS: [usize; 14] = [9, 9, 9, 9, 9, 9, 9, 9, 9, 9, 9, 8, 8, 8];
pub const A5A_EXAMPLES: usize = 6414;

/// Linearly separable one-hot dataset: every example activates exactly one
/// feature per group, and labels are thresholded scores of a random linear
/// model. The threshold is placed at the `1 - positive_fraction` quantile.
pub fn synthetic_onehot<R: Rng + ?Sized>(
    name: &str,
    examples: usize,
    groups: &[usize],
    positive_fraction: f64,
    rng: &mut R,
) -> Result<Dataset> {
    use rand_distr::{Distribution, StandardNormal};
    if examples == 0 || groups.is_empty() || groups.contains(&0) {
        return Err(Error::Config("synthetic dataset needs examples and non-empty groups".into()));
    }
    let num_features: usize = groups.iter().sum();
    let truth: Vec<f64> = (0..num_features).map(|_| StandardNormal.sample(rng)).collect();
    let mut rows = Vec::with_capacity(examples);
    let mut scores = Vec::with_capacity(examples);
    for _ in 0..examples {
        let mut row = Vec::with_capacity(groups.len());
        let mut offset = 0;
        let mut score = 0.0;
        for &g in groups {
            let j = offset + rng.random_range(0..g);
            row.push((j, 1.0));
            score += truth[j];
            offset += g;
        }
        rows.push(row);
        scores.push(score);
    }
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    let q = ((1.0 - positive_fraction.clamp(0.0, 1.0)) * (examples - 1) as f64).round() as usize;
    let threshold = sorted[q];
    let labelled = rows
        .into_iter()
        .zip(scores)
        .map(|(row, s)| (if s > threshold { 1.0 } else { -1.0 }, row))
        .collect();
    Dataset::from_rows(name, num_features, labelled)
}

/// Synthetic stand-in with the shape of a5a: 6414 examples, 123 binary
/// features, 14 active per row, about 24% positives.
pub fn synthetic_a5a_like<R: Rng + ?Sized>(rng: &mut R) -> Dataset {
    synthetic_onehot("synthetic-a5a", A5A_EXAMPLES, &A5A_LIKE_GROUPS, 0.24, rng)
        .expect("static synthetic parameters are valid")
}

/// Example indices owned by one worker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shard {
    pub worker: usize,
    pub indices: Vec<usize>,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Split `0..examples` into `workers` contiguous chunks of a random
/// permutation. Sizes differ by at most one; the first `examples % workers`
/// workers get the larger size.
pub fn shard_dataset<R: Rng + ?Sized>(examples: usize, workers: usize, rng: &mut R) -> Result<Vec<Shard>> {
    if workers == 0 {
        return Err(Error::Config("at least one worker is required".into()));
    }
    if workers > examples {
        return Err(Error::Config(format!(
            "cannot split {examples} examples across {workers} workers"
        )));
    }
    let mut perm: Vec<usize> = (0..examples).collect();
    perm.shuffle(rng);
    let base = examples / workers;
    let extra = examples % workers;
    let mut start = 0;
    Ok((0..workers)
        .map(|w| {
            let len = base + usize::from(w < extra);
            let indices = perm[start..start + len].to_vec();
            start += len;
            Shard { worker: w, indices }
        })
        .collect())
}

/// `size` indices drawn uniformly with replacement from the shard.
pub fn sample_batch<R: Rng + ?Sized>(shard: &Shard, size: usize, rng: &mut R) -> Vec<usize> {
    (0..size)
        .map(|_| shard.indices[rng.random_range(0..shard.indices.len())])
        .collect()
}
