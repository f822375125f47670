//! Datasets, synthetic blobs, Dirichlet non-iid partitioning, development
//! subsets, and CSV ingestion.

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::tensor::Tensor;

/// Feature rows with integer class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.shape().len() != 2 || features.rows() != labels.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![labels.len()],
                actual: features.shape().to_vec(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Rows `idx` in the given order. `idx` must be non-empty.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Splits off a uniformly sampled held-out part of `⌊fraction·N⌋` rows.
    /// Returns `(rest, held_out)`, both in original row order.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        let n = self.len();
        let k = (fraction * n as f64).floor() as usize;
        if !(0.0..1.0).contains(&fraction) || k == 0 || k >= n {
            return Err(Error::InvalidArgument(format!(
                "split fraction {fraction} leaves an empty side for {n} rows"
            )));
        }
        let mut r = rng::rng_for(seed, &[stream::SPLIT]);
        let mut held: Vec<usize> = index::sample(&mut r, n, k).into_vec();
        held.sort_unstable();
        let mut is_held = vec![false; n];
        for &i in &held {
            is_held[i] = true;
        }
        let rest: Vec<usize> = (0..n).filter(|&i| !is_held[i]).collect();
        Ok((self.subset(&rest), self.subset(&held)))
    }

    /// Concatenates datasets with the same width and class count.
    pub fn concat(parts: &[Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or(Error::EmptyDataset("nothing to concatenate"))?;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.dim() != first.dim() || p.classes != first.classes {
                return Err(Error::ShapeMismatch {
                    expected: vec![first.dim(), first.classes],
                    actual: vec![p.dim(), p.classes],
                });
            }
            data.extend_from_slice(p.features.data());
            labels.extend_from_slice(&p.labels);
        }
        let features = Tensor::new(vec![labels.len(), first.dim()], data)?;
        Dataset::new(features, labels, first.classes)
    }
}

/// Gaussian class clusters. Class means are drawn from a standard normal;
/// samples add isotropic noise of standard deviation `spread`. Rows are
/// ordered by class.
pub fn make_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::InvalidArgument("blob counts must be positive".into()));
    }
    if !(spread >= 0.0) {
        return Err(Error::InvalidArgument(format!("spread must be non-negative, got {spread}")));
    }
    let mut r = rng::rng_for(seed, &[stream::DATA]);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            (0..dim)
                .map(|_| StandardNormal.sample(&mut r))
                .collect::<Vec<f64>>()
        })
        .collect();
    let mut data = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            for &m in mean {
                let z: f64 = StandardNormal.sample(&mut r);
                data.push(m + spread * z);
            }
            labels.push(c);
        }
    }
    Dataset::new(Tensor::new(vec![labels.len(), dim], data)?, labels, classes)
}

/// Client count, Dirichlet concentration, and seed for non-iid partitioning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub clients: usize,
    pub alpha: f64,
    pub seed: u64,
}

const PARTITION_ATTEMPTS: usize = 100;

fn dirichlet(alpha: f64, k: usize, r: &mut rng::Rng) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| Error::InvalidArgument(format!("Dirichlet concentration: {e}")))?;
    loop {
        let g: Vec<f64> = (0..k).map(|_| gamma.sample(r)).collect();
        let sum: f64 = g.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            return Ok(g.into_iter().map(|v| v / sum).collect());
        }
    }
}

/// Splits `ds` across `spec.clients` clients. For each class, proportions
/// `p ~ Dir(α·1_K)` decide how that class's (shuffled) samples are cut
/// between clients. Draws are repeated until every client holds at least one
/// sample, up to a fixed number of attempts.
pub fn dirichlet_partition(ds: &Dataset, spec: &PartitionSpec) -> Result<Vec<Dataset>> {
    let k = spec.clients;
    if k == 0 {
        return Err(Error::InvalidArgument("client count must be at least 1".into()));
    }
    if !(spec.alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Dirichlet concentration must be positive, got {}",
            spec.alpha
        )));
    }
    if k > ds.len() {
        return Err(Error::PartitionFailed {
            clients: k,
            attempts: 0,
        });
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.classes];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut r = rng::rng_for(spec.seed, &[stream::PARTITION]);
    for _ in 0..PARTITION_ATTEMPTS {
        let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); k];
        for members in &by_class {
            if members.is_empty() {
                continue;
            }
            let mut idx = members.clone();
            idx.shuffle(&mut r);
            let p = dirichlet(spec.alpha, k, &mut r)?;
            let n = idx.len();
            let mut start = 0;
            let mut cum = 0.0;
            for (client, pk) in p.iter().enumerate() {
                cum += pk;
                let end = if client + 1 == k {
                    n
                } else {
                    ((cum * n as f64).round() as usize).clamp(start, n)
                };
                assigned[client].extend_from_slice(&idx[start..end]);
                start = end;
            }
        }
        if assigned.iter().all(|a| !a.is_empty()) {
            return Ok(assigned
                .into_iter()
                .map(|mut a| {
                    a.sort_unstable();
                    ds.subset(&a)
                })
                .collect());
        }
    }
    Err(Error::PartitionFailed {
        clients: k,
        attempts: PARTITION_ATTEMPTS,
    })
}

/// Uniform subset of `max(1, ⌊ratio·N⌋)` rows without replacement, kept in
/// original row order.
pub fn dev_split(ds: &Dataset, ratio: f64, seed: u64) -> Result<Dataset> {
    dev_indices(ds, ratio, seed).map(|idx| ds.subset(&idx))
}

/// Row indices chosen by [`dev_split`].
pub fn dev_indices(ds: &Dataset, ratio: f64, seed: u64) -> Result<Vec<usize>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "development ratio must lie in (0, 1], got {ratio}"
        )));
    }
    if ds.is_empty() {
        return Err(Error::EmptyDataset("development split of an empty dataset"));
    }
    let n = ds.len();
    let k = ((ratio * n as f64).floor() as usize).clamp(1, n);
    let mut r = rng::rng_for(seed, &[stream::DEV]);
    let mut idx = index::sample(&mut r, n, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Reads comma-separated rows whose last column is an integer label.
/// The class count is the largest label plus one.
pub fn load_csv(path: &Path, skip_header: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(skip_header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, 0, e.to_string()))?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_error(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() < 2 {
            return Err(csv_error(path, line, "need at least one feature and a label".into()));
        }
        let dim = record.len() - 1;
        if *width.get_or_insert(dim) != dim {
            return Err(csv_error(path, line, format!("expected {} features, got {dim}", width.unwrap())));
        }
        for field in record.iter().take(dim) {
            let v: f64 = field
                .parse()
                .map_err(|_| csv_error(path, line, format!("non-numeric feature `{field}`")))?;
            if !v.is_finite() {
                return Err(csv_error(path, line, format!("non-finite feature `{field}`")));
            }
            data.push(v);
        }
        let raw = &record[dim];
        let label: usize = raw
            .parse()
            .map_err(|_| csv_error(path, line, format!("label `{raw}` is not a non-negative integer")))?;
        labels.push(label);
    }
    let dim = width.ok_or(Error::EmptyDataset("CSV file has no rows"))?;
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(Tensor::new(vec![labels.len(), dim], data)?, labels, classes)
}

fn csv_error(path: &Path, line: u64, message: String) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        line,
        message,
    }
}

/// Total-variation distance between a client's label distribution and the
/// global one.
pub fn label_tv_distance(client: &Dataset, global: &Dataset) -> f64 {
    let c = client.class_counts();
    let g = global.class_counts();
    let (nc, ng) = (client.len() as f64, global.len() as f64);
    0.5 * c
        .iter()
        .zip(&g)
        .map(|(&a, &b)| (a as f64 / nc - b as f64 / ng).abs())
        .sum::<f64>()
}

/// Splits `n` shuffled indices into training batches of `batch` rows. A
/// trailing batch of one row is merged into the previous batch so that
/// batch statistics stay defined.
pub fn batch_indices(n: usize, batch: usize, r: &mut rng::Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(r);
    chunk_indices(idx, batch)
}

pub(crate) fn chunk_indices(idx: Vec<usize>, batch: usize) -> Vec<Vec<usize>> {
    let batch = batch.max(2);
    let mut out: Vec<Vec<usize>> = idx.chunks(batch).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().extend(last);
    }
    out
}

/// Uniform sample of `k` client ids out of `n`, sorted.
pub fn sample_clients(n: usize, k: usize, r: &mut rng::Rng) -> Vec<usize> {
    let k = k.clamp(1, n);
    if k == n {
        return (0..n).collect();
    }
    let mut v = index::sample(r, n, k).into_vec();
    v.sort_unstable();
    v
}
