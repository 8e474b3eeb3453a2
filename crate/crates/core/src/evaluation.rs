//! Group accuracy/F1, membership inference, and representation-space diagnostics.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::losses::log_sum_exp;
use crate::matrix::{dot, l2_norm, Matrix};
use crate::nn::{self, ModelParams};
use crate::tcs::GlobalTs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Unlearning,
    Remaining,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub support: usize,
    /// Percent of this class's samples predicted as the class.
    pub accuracy: f64,
    /// One-vs-rest F1 over the whole test set, in percent.
    pub f1: f64,
}

/// Accuracy and macro F1 (both percent) over one class group. Absent when the
/// group has no test samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: Group,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub per_class: Vec<ClassMetrics>,
}

/// Splits classes into the forgotten group and the rest, then scores predictions
/// against the original labels.
pub fn group_metrics_from_predictions(
    predictions: &[usize],
    labels: &[usize],
    class_count: usize,
    forget: &[usize],
) -> (GroupMetrics, GroupMetrics) {
    let mut tp = vec![0usize; class_count];
    let mut predicted = vec![0usize; class_count];
    let mut support = vec![0usize; class_count];
    for (&p, &y) in predictions.iter().zip(labels) {
        support[y] += 1;
        predicted[p] += 1;
        if p == y {
            tp[y] += 1;
        }
    }
    let class_metrics = |c: usize| {
        let denom = predicted[c] + support[c];
        ClassMetrics {
            class: c,
            support: support[c],
            accuracy: if support[c] == 0 {
                0.0
            } else {
                100.0 * tp[c] as f64 / support[c] as f64
            },
            f1: if denom == 0 {
                0.0
            } else {
                100.0 * 2.0 * tp[c] as f64 / denom as f64
            },
        }
    };
    let build = |group: Group, members: Vec<usize>| {
        let per_class: Vec<ClassMetrics> = members
            .into_iter()
            .filter(|&c| support[c] > 0)
            .map(class_metrics)
            .collect();
        let total: usize = per_class.iter().map(|m| m.support).sum();
        let (accuracy, f1) = if total == 0 {
            (None, None)
        } else {
            let correct: usize = per_class.iter().map(|m| tp[m.class]).sum();
            let f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / per_class.len() as f64;
            (Some(100.0 * correct as f64 / total as f64), Some(f1))
        };
        GroupMetrics {
            group,
            accuracy,
            f1,
            per_class,
        }
    };
    let (unlearning, remaining): (Vec<usize>, Vec<usize>) =
        (0..class_count).partition(|c| forget.contains(c));
    (
        build(Group::Unlearning, unlearning),
        build(Group::Remaining, remaining),
    )
}

/// Scores `model` on `test` using its original labels.
pub fn group_metrics(
    model: &ModelParams,
    test: &LabeledDataset,
    forget: &[usize],
) -> Result<(GroupMetrics, GroupMetrics)> {
    let out = nn::forward(model, test.features())?;
    Ok(group_metrics_from_predictions(
        &out.predictions(),
        test.original_labels(),
        test.class_count(),
        forget,
    ))
}

/// Outcome of the confidence-threshold membership attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaReport {
    /// Balanced accuracy on the attacked pools, percent.
    pub asr: f64,
    /// Log-odds of the top-class probability above which a sample is called a member.
    pub threshold: f64,
    pub members: usize,
    pub non_members: usize,
    /// Balanced accuracy reached on the calibration pools, percent.
    pub calibration_accuracy: f64,
}

/// Minimum pool size accepted by the attack.
pub const MIN_POOL: usize = 10;

/// Attack score of one sample: `ln(p_max / (1 - p_max))`, computed from logits.
///
/// It orders samples exactly like the top-class probability but does not
/// saturate at 1.0 in floating point.
pub fn confidence_scores(model: &ModelParams, features: &Matrix) -> Result<Vec<f64>> {
    if features.rows() == 0 {
        return Ok(Vec::new());
    }
    let out = nn::forward(model, features)?;
    Ok(out
        .logits
        .iter_rows()
        .map(|row| {
            let top = nn::argmax(row);
            let rest = row
                .iter()
                .enumerate()
                .filter(|&(c, _)| c != top)
                .map(|(_, &v)| v);
            row[top] - log_sum_exp(rest)
        })
        .collect())
}

fn balance(mut a: Vec<f64>, mut b: Vec<f64>, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    // sort first so the result does not depend on the caller's ordering
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let m = a.len().min(b.len());
    for pool in [&mut a, &mut b] {
        if pool.len() > m {
            pool.shuffle(rng);
            pool.truncate(m);
        }
    }
    (a, b)
}

fn balanced_accuracy(members: &[f64], non_members: &[f64], threshold: f64) -> f64 {
    let tpr = members.iter().filter(|&&s| s > threshold).count() as f64 / members.len() as f64;
    let tnr =
        non_members.iter().filter(|&&s| s <= threshold).count() as f64 / non_members.len() as f64;
    50.0 * (tpr + tnr)
}

/// Threshold attack: the threshold maximizing balanced accuracy on the
/// calibration pools is applied to the target pools.
pub fn threshold_attack(
    members: Vec<f64>,
    non_members: Vec<f64>,
    calibration_members: Vec<f64>,
    calibration_non_members: Vec<f64>,
    seed: u64,
) -> Result<MiaReport> {
    for (name, pool) in [
        ("member", &members),
        ("non-member", &non_members),
        ("calibration member", &calibration_members),
        ("calibration non-member", &calibration_non_members),
    ] {
        if pool.len() < MIN_POOL {
            return Err(Error::InsufficientData(format!(
                "{name} pool has {} samples, need at least {MIN_POOL}",
                pool.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cal_in, cal_out) = balance(calibration_members, calibration_non_members, &mut rng);
    let (pool_in, pool_out) = balance(members, non_members, &mut rng);

    let mut candidates: Vec<f64> = cal_in.iter().chain(&cal_out).copied().collect();
    candidates.push(f64::NEG_INFINITY);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &t in &candidates {
        let acc = balanced_accuracy(&cal_in, &cal_out, t);
        if acc > best.1 {
            best = (t, acc);
        }
    }
    Ok(MiaReport {
        asr: balanced_accuracy(&pool_in, &pool_out, best.0),
        threshold: best.0,
        members: pool_in.len(),
        non_members: pool_out.len(),
        calibration_accuracy: best.1,
    })
}

/// Membership attack on the forgotten classes: training samples are members,
/// test samples non-members; calibration uses the remaining classes.
pub fn mia_asr(
    model: &ModelParams,
    train: &LabeledDataset,
    test: &LabeledDataset,
    forget: &[usize],
    seed: u64,
) -> Result<MiaReport> {
    let pick = |ds: &LabeledDataset, forgotten: bool| {
        let idx = ds.indices_where(|y| forget.contains(&y) == forgotten);
        ds.features().select_rows(&idx)
    };
    threshold_attack(
        confidence_scores(model, &pick(train, true))?,
        confidence_scores(model, &pick(test, true))?,
        confidence_scores(model, &pick(train, false))?,
        confidence_scores(model, &pick(test, false))?,
        seed,
    )
}

/// Writes one CSV row per sample: id, original label, current label and the
/// normalized representation.
pub fn export_embeddings(model: &ModelParams, dataset: &LabeledDataset, path: &Path) -> Result<()> {
    let reps = nn::forward(model, dataset.features())?.normalized_representations();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let mut header = String::from("sample_id,original_label,current_label");
    for d in 0..reps.cols() {
        header.push_str(&format!(",z{d}"));
    }
    writeln!(w, "{header}").map_err(io)?;
    for i in 0..dataset.len() {
        let mut line = format!(
            "{i},{},{}",
            dataset.original_labels()[i],
            dataset.labels()[i]
        );
        for v in reps.row(i) {
            line.push_str(&format!(",{v}"));
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Rows of an embedding CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub sample_ids: Vec<usize>,
    pub original_labels: Vec<usize>,
    pub current_labels: Vec<usize>,
    pub representations: Matrix,
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or(Error::Format {
            offset: 0,
            detail: "empty embedding file".into(),
        })?
        .map_err(|e| Error::io(path, e))?;
    let width = header.split(',').count().saturating_sub(3);
    let mut table = EmbeddingTable {
        sample_ids: Vec::new(),
        original_labels: Vec::new(),
        current_labels: Vec::new(),
        representations: Matrix::zeros(0, width),
    };
    let mut values = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let bad = || Error::Format {
            offset: n + 2,
            detail: format!("malformed embedding row on line {}", n + 2),
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width + 3 {
            return Err(bad());
        }
        let ints: Vec<usize> = fields[..3]
            .iter()
            .map(|f| f.parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        table.sample_ids.push(ints[0]);
        table.original_labels.push(ints[1]);
        table.current_labels.push(ints[2]);
        for f in &fields[3..] {
            values.push(f.parse::<f64>().map_err(|_| bad())?);
        }
    }
    table.representations = Matrix::from_vec(table.sample_ids.len(), width, values)?;
    Ok(table)
}

/// Where a forgotten class's test representations ended up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeReport {
    pub class: usize,
    /// Remaining class whose centroid is cosine-nearest to this class's mean.
    pub nearest_remaining: usize,
    pub cosine: f64,
    /// `1 - cosine`; smaller means more merged.
    pub margin: f64,
    pub in_transformation_set: bool,
}

/// Unit-norm mean of normalized representations per original class (`None` when
/// the class has no samples).
pub fn class_centroids(
    model: &ModelParams,
    dataset: &LabeledDataset,
) -> Result<Vec<Option<Vec<f64>>>> {
    let reps = nn::forward(model, dataset.features())?.normalized_representations();
    let mut sums = vec![vec![0.0; reps.cols()]; dataset.class_count()];
    let mut counts = vec![0usize; dataset.class_count()];
    for (i, &y) in dataset.original_labels().iter().enumerate() {
        counts[y] += 1;
        for (s, v) in sums[y].iter_mut().zip(reps.row(i)) {
            *s += v;
        }
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, n)| {
            (n > 0).then(|| {
                let norm = l2_norm(&s).max(f64::MIN_POSITIVE);
                s.iter().map(|v| v / norm).collect()
            })
        })
        .collect())
}

pub fn merge_diagnostic(
    model: &ModelParams,
    test: &LabeledDataset,
    forget: &[usize],
    global_ts: &GlobalTs,
) -> Result<Vec<MergeReport>> {
    let centroids = class_centroids(model, test)?;
    merge_from_centroids(&centroids, forget, global_ts)
}

pub fn merge_from_centroids(
    centroids: &[Option<Vec<f64>>],
    forget: &[usize],
    global_ts: &GlobalTs,
) -> Result<Vec<MergeReport>> {
    let mut out = Vec::new();
    for &u in forget {
        let Some(mean) = centroids.get(u).and_then(Option::as_ref) else {
            continue;
        };
        let best = centroids
            .iter()
            .enumerate()
            .filter(|(c, v)| !forget.contains(c) && v.is_some())
            .map(|(c, v)| (c, dot(mean, v.as_ref().expect("filtered"))))
            .fold(None, |acc: Option<(usize, f64)>, (c, cos)| match acc {
                Some((_, best)) if best >= cos => acc,
                _ => Some((c, cos)),
            })
            .ok_or_else(|| Error::InsufficientData("no remaining class centroids".into()))?;
        out.push(MergeReport {
            class: u,
            nearest_remaining: best.0,
            cosine: best.1,
            margin: 1.0 - best.1,
            in_transformation_set: global_ts.get(u).is_some_and(|s| s.contains(&best.0)),
        });
    }
    Ok(out)
}
