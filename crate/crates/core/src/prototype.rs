//! Class prototypes: per-class mean representations on a client and their
//! server-side aggregate.

use serde::{Deserialize, Serialize};

use crate::matrix::{l2_norm, Matrix};

/// Means with a norm below this are considered degenerate.
pub const DEGENERATE_NORM: f64 = 1e-9;

/// One normalized vector per class plus a presence mask.
///
/// An absent class keeps whatever vector it last had (zero if it was never
/// observed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBank {
    vectors: Matrix,
    present: Vec<bool>,
    round: usize,
}

impl PrototypeBank {
    pub fn empty(class_count: usize, rep_dim: usize) -> Self {
        Self {
            vectors: Matrix::zeros(class_count, rep_dim),
            present: vec![false; class_count],
            round: 0,
        }
    }

    pub fn class_count(&self) -> usize {
        self.present.len()
    }

    pub fn rep_dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn with_round(mut self, round: usize) -> Self {
        self.round = round;
        self
    }

    pub fn vector(&self, class: usize) -> &[f64] {
        self.vectors.row(class)
    }

    pub fn is_present(&self, class: usize) -> bool {
        self.present[class]
    }

    /// Whether the class has a usable (non-zero) vector, present or carried forward.
    pub fn has_vector(&self, class: usize) -> bool {
        self.present[class] || self.vectors.row(class).iter().any(|&v| v != 0.0)
    }

    /// Stores `vector` as given and marks the class present.
    pub fn set(&mut self, class: usize, vector: &[f64]) {
        self.vectors.row_mut(class).copy_from_slice(vector);
        self.present[class] = true;
    }

    pub fn present_classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.present
            .iter()
            .enumerate()
            .filter_map(|(c, &p)| p.then_some(c))
    }

    /// Size of the bank when uploaded: every class vector as 64-bit floats.
    pub fn byte_size(&self) -> usize {
        self.class_count() * self.rep_dim() * std::mem::size_of::<f64>()
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }
}

/// Result of [`class_prototypes`]: the bank and the classes whose mean collapsed
/// to (near) zero and fell back to their first sample's direction.
#[derive(Debug, Clone)]
pub struct LocalPrototypes {
    pub bank: PrototypeBank,
    pub degenerate: Vec<usize>,
}

/// Per-class mean of normalized representations, re-normalized.
///
/// `normalized_reps` must already be row-normalized.
pub fn class_prototypes(
    normalized_reps: &Matrix,
    labels: &[usize],
    class_count: usize,
) -> LocalPrototypes {
    let dim = normalized_reps.cols();
    let mut sums = Matrix::zeros(class_count, dim);
    let mut first: Vec<Option<usize>> = vec![None; class_count];
    for (i, &y) in labels.iter().enumerate() {
        first[y].get_or_insert(i);
        for (s, v) in sums.row_mut(y).iter_mut().zip(normalized_reps.row(i)) {
            *s += v;
        }
    }
    let mut bank = PrototypeBank::empty(class_count, dim);
    let mut degenerate = Vec::new();
    for c in 0..class_count {
        let Some(first_idx) = first[c] else { continue };
        let sum = sums.row(c);
        let norm = l2_norm(sum);
        // the mean's norm is norm / count; compare that against the threshold
        let count = labels.iter().filter(|&&y| y == c).count() as f64;
        if norm / count < DEGENERATE_NORM {
            log::warn!("class {c} prototype mean is degenerate; using first sample direction");
            degenerate.push(c);
            bank.set(c, normalized_reps.row(first_idx));
        } else {
            let v: Vec<f64> = sum.iter().map(|s| s / norm).collect();
            bank.set(c, &v);
        }
    }
    LocalPrototypes { bank, degenerate }
}

/// Server-side prototype aggregation.
///
/// Each class is averaged over the clients where it is present, then
/// re-normalized. Classes no client reported keep the previous global vector and
/// are marked absent.
pub fn aggregate_prototypes(
    locals: &[PrototypeBank],
    previous: Option<&PrototypeBank>,
    round: usize,
) -> PrototypeBank {
    let (classes, dim) = match (locals.first(), previous) {
        (Some(b), _) | (None, Some(b)) => (b.class_count(), b.rep_dim()),
        (None, None) => return PrototypeBank::empty(0, 0),
    };
    let mut out = PrototypeBank::empty(classes, dim).with_round(round);
    for c in 0..classes {
        let contributors: Vec<&PrototypeBank> = locals.iter().filter(|b| b.is_present(c)).collect();
        if contributors.is_empty() {
            if let Some(prev) = previous {
                out.vectors.row_mut(c).copy_from_slice(prev.vector(c));
            }
            continue;
        }
        let mut mean = vec![0.0; dim];
        for b in &contributors {
            for (m, v) in mean.iter_mut().zip(b.vector(c)) {
                *m += v;
            }
        }
        let k = contributors.len() as f64;
        mean.iter_mut().for_each(|m| *m /= k);
        let norm = l2_norm(&mean);
        if norm < DEGENERATE_NORM {
            log::warn!("aggregated prototype for class {c} is degenerate; using first client");
            out.set(c, contributors[0].vector(c));
        } else {
            mean.iter_mut().for_each(|m| *m /= norm);
            out.set(c, &mean);
        }
    }
    out
}
