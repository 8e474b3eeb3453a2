//! Labeled datasets, synthetic Gaussian blobs and client partitioning.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Features with a current label per sample and the label it was generated with.
///
/// `labels` is what training sees; after relabeling for unlearning it differs from
/// `original_labels` on the forgotten samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    features: Matrix,
    labels: Vec<usize>,
    original_labels: Vec<usize>,
    class_count: usize,
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Config(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Config(
                "dataset must contain at least one sample".into(),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::Config(format!(
                "label {bad} outside [0, {class_count})"
            )));
        }
        if !features.is_finite() {
            return Err(Error::Config("features must be finite".into()));
        }
        Ok(Self {
            features,
            original_labels: labels.clone(),
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn original_labels(&self) -> &[usize] {
        &self.original_labels
    }

    /// Subset in the given index order, keeping both label columns.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            original_labels: indices.iter().map(|&i| self.original_labels[i]).collect(),
            class_count: self.class_count,
        }
    }

    /// Indices whose original label satisfies `pred`.
    pub fn indices_where(&self, pred: impl Fn(usize) -> bool) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| pred(self.original_labels[i]))
            .collect()
    }

    /// Per-class sample counts of the current labels.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }

    /// Overwrites the current label of one sample.
    pub fn set_label(&mut self, index: usize, label: usize) {
        self.labels[index] = label;
    }

    /// Current labels reset to the original ones.
    pub fn restore_original(&self) -> LabeledDataset {
        let mut out = self.clone();
        out.labels = out.original_labels.clone();
        out
    }
}

/// Client datasets as index lists into a parent dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub client_indices: Vec<Vec<usize>>,
}

impl Partition {
    pub fn client_count(&self) -> usize {
        self.client_indices.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.client_indices.iter().map(Vec::len).collect()
    }

    /// Checks that the lists are disjoint, cover `0..n` and contain no empty list.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for (k, list) in self.client_indices.iter().enumerate() {
            if list.is_empty() {
                return Err(Error::Protocol(format!("client {k} has no samples")));
            }
            for &i in list {
                if i >= n || seen[i] {
                    return Err(Error::Protocol(format!(
                        "index {i} out of range or assigned twice"
                    )));
                }
                seen[i] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::Protocol(format!("index {missing} not assigned")));
        }
        Ok(())
    }

    pub fn client_datasets(&self, parent: &LabeledDataset) -> Vec<LabeledDataset> {
        self.client_indices
            .iter()
            .map(|idx| parent.subset(idx))
            .collect()
    }
}

/// Isotropic Gaussian clusters around fixed class centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub class_count: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    /// One row per class.
    pub centers: Matrix,
    pub sigma: f64,
    pub seed: u64,
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::Config(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if self.centers.rows() != self.class_count || self.centers.cols() != self.input_dim {
            return Err(Error::Config(format!(
                "centers are {}x{}, expected {}x{}",
                self.centers.rows(),
                self.centers.cols(),
                self.class_count,
                self.input_dim
            )));
        }
        if self.samples_per_class == 0 {
            return Err(Error::Config("samples_per_class must be > 0".into()));
        }
        for a in 0..self.class_count {
            for b in a + 1..self.class_count {
                if self.centers.row(a) == self.centers.row(b) {
                    return Err(Error::Config(format!("centers {a} and {b} coincide")));
                }
            }
        }
        Ok(())
    }

    /// Same geometry with a different sample count and a seed derived from this one,
    /// used for the held-out test split.
    pub fn test_split(&self, samples_per_class: usize) -> BlobSpec {
        BlobSpec {
            samples_per_class,
            seed: self.seed ^ 0x7E57_5EED_0000_0001,
            ..self.clone()
        }
    }
}

/// Class whose center is placed nearest to `class` by [`neighbor_layout`].
pub fn designated_neighbor(class: usize, class_count: usize) -> usize {
    if class_count % 2 == 1 && class == class_count - 1 {
        class_count - 2
    } else {
        class ^ 1
    }
}

/// Dimensions [`neighbor_layout`] needs for `class_count` classes.
pub fn neighbor_layout_min_dim(class_count: usize) -> usize {
    class_count / 2 + 1 + class_count % 2
}

/// Centers in which every class has a single designated nearest neighbor.
///
/// Classes are paired `(0,1), (2,3), ...`. Each pair sits on its own axis at
/// distance `far / sqrt(2)` from the origin and its two members are `near` apart
/// along a shared offset axis, so pairs are at least `far` apart. With an odd class
/// count the last class is placed `1.5 * near` from class `C-2`.
pub fn neighbor_layout(
    class_count: usize,
    input_dim: usize,
    near: f64,
    far: f64,
) -> Result<Matrix> {
    let needed = neighbor_layout_min_dim(class_count);
    if input_dim < needed {
        return Err(Error::Config(format!(
            "{class_count} classes need input_dim >= {needed}, got {input_dim}"
        )));
    }
    if !(near > 0.0) || !(far > 2.0 * near) {
        return Err(Error::Config(format!(
            "need 0 < near and far > 2*near, got near={near} far={far}"
        )));
    }
    let pairs = class_count / 2;
    let offset_axis = pairs;
    let radius = far / std::f64::consts::SQRT_2;
    let mut centers = Matrix::zeros(class_count, input_dim);
    for c in 0..2 * pairs {
        let row = centers.row_mut(c);
        row[c / 2] = radius;
        row[offset_axis] = if c % 2 == 0 { -near / 2.0 } else { near / 2.0 };
    }
    if class_count % 2 == 1 {
        let last = class_count - 1;
        let anchor = centers.row(last - 1).to_vec();
        let row = centers.row_mut(last);
        row.copy_from_slice(&anchor);
        row[offset_axis + 1] = 1.5 * near;
    }
    Ok(centers)
}

/// Samples `samples_per_class` points around every center, grouped by class.
pub fn generate_blobs(spec: &BlobSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise =
        Normal::new(0.0, spec.sigma).map_err(|e| Error::Config(format!("invalid sigma: {e}")))?;
    let n = spec.class_count * spec.samples_per_class;
    let mut features = Matrix::zeros(n, spec.input_dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..spec.class_count {
        for s in 0..spec.samples_per_class {
            let row = features.row_mut(c * spec.samples_per_class + s);
            for (x, &m) in row.iter_mut().zip(spec.centers.row(c)) {
                *x = m + noise.sample(&mut rng);
            }
            labels.push(c);
        }
    }
    LabeledDataset::new(features, labels, spec.class_count)
}

/// Shuffled split into `clients` lists whose sizes differ by at most one.
pub fn partition_iid(dataset: &LabeledDataset, clients: usize, seed: u64) -> Result<Partition> {
    let n = dataset.len();
    if clients == 0 || clients > n {
        return Err(Error::Config(format!(
            "cannot split {n} samples across {clients} clients"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / clients;
    let extra = n % clients;
    let mut client_indices = Vec::with_capacity(clients);
    let mut start = 0;
    for k in 0..clients {
        let len = base + usize::from(k < extra);
        client_indices.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(Partition { client_indices })
}

/// Label-skewed split: for each class, client shares are drawn from a symmetric
/// Dirichlet with concentration `delta`. Clients that end up empty receive one
/// random sample taken from the currently largest client.
pub fn partition_dirichlet(
    dataset: &LabeledDataset,
    clients: usize,
    delta: f64,
    seed: u64,
) -> Result<Partition> {
    let n = dataset.len();
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Config(format!(
            "dirichlet delta must be > 0, got {delta}"
        )));
    }
    if clients == 0 || clients > n {
        return Err(Error::Config(format!(
            "cannot split {n} samples across {clients} clients"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(delta, 1.0).map_err(|e| Error::Config(format!("{e}")))?;
    let mut client_indices: Vec<Vec<usize>> = vec![Vec::new(); clients];

    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in dataset.labels().iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    for (_, mut members) in by_class {
        members.shuffle(&mut rng);
        let mut shares: Vec<f64> = (0..clients).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = shares.iter().sum();
        if total > 0.0 && total.is_finite() {
            shares.iter_mut().for_each(|s| *s /= total);
        } else {
            shares.iter_mut().for_each(|s| *s = 0.0);
            shares[rng.random_range(0..clients)] = 1.0;
        }
        let m = members.len();
        let mut cumulative = 0.0;
        let mut start = 0;
        for (k, share) in shares.iter().enumerate() {
            cumulative += share;
            let end = if k + 1 == clients {
                m
            } else {
                ((cumulative * m as f64).round() as usize).clamp(start, m)
            };
            client_indices[k].extend_from_slice(&members[start..end]);
            start = end;
        }
    }

    for k in 0..clients {
        if client_indices[k].is_empty() {
            let donor = (0..clients)
                .max_by(|&a, &b| {
                    client_indices[a]
                        .len()
                        .cmp(&client_indices[b].len())
                        .then(b.cmp(&a))
                })
                .expect("at least one client");
            let pick = rng.random_range(0..client_indices[donor].len());
            let moved = client_indices[donor].swap_remove(pick);
            client_indices[k].push(moved);
        }
    }
    for list in &mut client_indices {
        list.sort_unstable();
    }
    Ok(Partition { client_indices })
}

/// Replaces the labels of forgotten samples with their assigned classes.
///
/// `assignments` must name every sample whose original label is in `forget`, and
/// nothing else. Assigning a sample to a forgotten class is a protocol error.
pub fn relabel_for_unlearning(
    dataset: &LabeledDataset,
    forget: &[usize],
    assignments: &[(usize, usize)],
) -> Result<LabeledDataset> {
    let expected = dataset.indices_where(|y| forget.contains(&y));
    let mut given: Vec<usize> = assignments.iter().map(|&(i, _)| i).collect();
    given.sort_unstable();
    if given != expected {
        return Err(Error::Protocol(
            "assignments must cover exactly the samples of the forgotten classes".into(),
        ));
    }
    let mut out = dataset.clone();
    for &(i, class) in assignments {
        if forget.contains(&class) || class >= dataset.class_count() {
            return Err(Error::Protocol(format!(
                "sample {i} assigned to class {class}, which is forgotten or out of range"
            )));
        }
        out.labels[i] = class;
    }
    Ok(out)
}

/// Mean over clients of the L1 distance between the client's class distribution
/// and the global one.
pub fn mean_label_skew(dataset: &LabeledDataset, partition: &Partition) -> f64 {
    let global = normalized_histogram(dataset.labels(), dataset.class_count());
    let total: f64 = partition
        .client_indices
        .iter()
        .map(|idx| {
            let labels: Vec<usize> = idx.iter().map(|&i| dataset.labels()[i]).collect();
            let local = normalized_histogram(&labels, dataset.class_count());
            local
                .iter()
                .zip(&global)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
        })
        .sum();
    total / partition.client_count() as f64
}

pub(crate) fn normalized_histogram(labels: &[usize], class_count: usize) -> Vec<f64> {
    let mut h = vec![0.0; class_count];
    for &y in labels {
        h[y] += 1.0;
    }
    let n = labels.len().max(1) as f64;
    h.iter_mut().for_each(|v| *v /= n);
    h
}
