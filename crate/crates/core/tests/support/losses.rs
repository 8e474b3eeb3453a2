//! Loss references written straight from the formulas.

use fucrt_core::losses::{cross_entropy, global_contrastive, local_contrastive, softmax};
use fucrt_core::{Matrix, PrototypeBank};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn normalize(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn naive_cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.iter().zip(labels) {
        let mut z = 0.0;
        for v in row {
            z += v.exp();
        }
        total += -(row[y].exp() / z).ln();
    }
    total / logits.len() as f64
}

pub fn naive_local(reps: &[Vec<f64>], labels: &[usize], tau: f64) -> f64 {
    let z: Vec<Vec<f64>> = reps.iter().map(|r| normalize(r)).collect();
    let n = z.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut positives = 0;
        for j in 0..n {
            if j != i && labels[j] == labels[i] {
                positives += 1;
            }
        }
        if positives == 0 {
            continue;
        }
        let mut denom = 0.0;
        for k in 0..n {
            if k != i {
                denom += (dot(&z[i], &z[k]) / tau).exp();
            }
        }
        let mut inner = 0.0;
        for j in 0..n {
            if j != i && labels[j] == labels[i] {
                inner += ((dot(&z[i], &z[j]) / tau).exp() / denom).ln();
            }
        }
        total += -inner / positives as f64;
    }
    total / n as f64
}

/// `present[c] == false` means class `c` has no prototype at all.
pub fn naive_global(
    reps: &[Vec<f64>],
    labels: &[usize],
    protos: &[Vec<f64>],
    present: &[bool],
    tau: f64,
) -> f64 {
    let n = reps.len();
    let mut total = 0.0;
    for i in 0..n {
        let y = labels[i];
        if !present[y] {
            continue;
        }
        let z = normalize(&reps[i]);
        let mut denom = 0.0;
        let mut any = false;
        for k in 0..protos.len() {
            if k != y && present[k] {
                denom += (dot(&z, &protos[k]) / tau).exp();
                any = true;
            }
        }
        if !any {
            continue;
        }
        total += -((dot(&z, &protos[y]) / tau).exp() / denom).ln();
    }
    total / n as f64
}

pub struct Case {
    pub reps: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub protos: Vec<Vec<f64>>,
    pub present: Vec<bool>,
    pub tau: f64,
}

/// At most 8 samples and 4 classes.
pub fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let n = rng.random_range(1..=8);
    let classes = rng.random_range(2..=4);
    let dim = rng.random_range(2..=5);
    let vec = |rng: &mut ChaCha8Rng, d: usize| -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()
    };
    let reps = (0..n).map(|_| vec(rng, dim)).collect();
    let logits = (0..n).map(|_| vec(rng, classes)).collect();
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let present: Vec<bool> = (0..classes).map(|_| rng.random_bool(0.8)).collect();
    let protos = present
        .iter()
        .map(|&p| {
            if p {
                normalize(&vec(rng, dim))
            } else {
                vec![0.0; dim]
            }
        })
        .collect();
    Case {
        reps,
        logits,
        labels,
        protos,
        present,
        tau: rng.random_range(0.1..2.0),
    }
}

pub fn bank(protos: &[Vec<f64>], present: &[bool]) -> PrototypeBank {
    let mut bank = PrototypeBank::empty(protos.len(), protos[0].len());
    for (c, p) in protos.iter().enumerate() {
        if present[c] {
            bank.set(c, p);
        }
    }
    bank
}

pub fn probabilities(logits: &[Vec<f64>]) -> Matrix {
    Matrix::from_rows(&logits.iter().map(|l| softmax(l)).collect::<Vec<_>>()).unwrap()
}

/// Largest absolute gap between the implementations and the references over
/// `batches` random batches.
pub fn max_deviation(batches: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..batches {
        let c = random_case(&mut rng);
        let reps = Matrix::from_rows(&c.reps).unwrap();

        let ce = cross_entropy(&probabilities(&c.logits), &c.labels);
        worst = worst.max((ce - naive_cross_entropy(&c.logits, &c.labels)).abs());

        let local = local_contrastive(&reps, &c.labels, c.tau).unwrap();
        worst = worst.max((local - naive_local(&c.reps, &c.labels, c.tau)).abs());

        let global = global_contrastive(&reps, &c.labels, &bank(&c.protos, &c.present), c.tau)
            .unwrap()
            .value;
        let global_ref = naive_global(&c.reps, &c.labels, &c.protos, &c.present, c.tau);
        worst = worst.max((global - global_ref).abs());
    }
    worst
}

/// The two hand-evaluated values: one sample sitting on its own prototype with
/// the other prototype orthogonal, and two identical samples sharing a label.
pub fn hand_evaluated() -> (f64, f64) {
    let mut protos = PrototypeBank::empty(2, 2);
    protos.set(0, &[1.0, 0.0]);
    protos.set(1, &[0.0, 1.0]);
    let reps = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
    let global = global_contrastive(&reps, &[0], &protos, 1.0).unwrap().value;

    let reps = Matrix::from_rows(&[vec![0.6, 0.8], vec![0.6, 0.8]]).unwrap();
    let local = local_contrastive(&reps, &[1, 1], 1.0).unwrap();
    (global, local)
}
