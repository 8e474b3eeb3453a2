//! Class selection references over random probability tables.

use std::collections::HashMap;

use fucrt_core::tcs::{
    aggregate_global_ts, assign_transformation_class, local_ts_from_probabilities, LocalTs,
};
use fucrt_core::{Matrix, TsThresholds};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Reference local proposal: (candidates strongest first, mass per class, support).
pub fn brute_local(
    rows: &[Vec<f64>],
    u: usize,
    forget: &[usize],
    tau_p: f64,
    tau_s: usize,
) -> Option<(Vec<usize>, Vec<f64>, usize)> {
    let classes = rows.first().map_or(0, Vec::len);
    let mut kept = Vec::new();
    for r in rows {
        // argmax with the lower id winning ties
        let mut order: Vec<usize> = (0..classes).collect();
        order.sort_by(|&a, &b| r[b].partial_cmp(&r[a]).unwrap().then(a.cmp(&b)));
        if order[0] == u {
            kept.push(r);
        }
    }
    if kept.len() < tau_s {
        return None;
    }
    let mut mass = vec![0.0; classes];
    for r in &kept {
        let mut eligible: Vec<usize> = (0..classes)
            .filter(|c| *c != u && !forget.contains(c))
            .collect();
        eligible.sort_by(|&a, &b| r[b].partial_cmp(&r[a]).unwrap().then(a.cmp(&b)));
        mass[eligible[0]] += r[eligible[0]];
    }
    let top = mass.iter().cloned().fold(f64::MIN, f64::max);
    let mut candidates: Vec<usize> = (0..classes)
        .filter(|&c| mass[c] > 0.0 && mass[c] >= tau_p * top)
        .collect();
    candidates.sort_by(|&a, &b| mass[b].partial_cmp(&mass[a]).unwrap().then(a.cmp(&b)));
    Some((candidates, mass, kept.len()))
}

/// Reference merge for one forgotten class.
pub fn brute_aggregate(reports: &[&LocalTs]) -> Vec<usize> {
    let mut size_votes: HashMap<usize, usize> = HashMap::new();
    for r in reports {
        *size_votes.entry(r.candidates.len()).or_insert(0) += 1;
    }
    let best_votes = *size_votes.values().max().unwrap();
    let size = *size_votes
        .iter()
        .filter(|(_, &v)| v == best_votes)
        .map(|(s, _)| s)
        .min()
        .unwrap();
    let mut stats: HashMap<usize, (usize, f64)> = HashMap::new();
    for r in reports {
        for &c in &r.candidates {
            let e = stats.entry(c).or_insert((0, 0.0));
            e.0 += 1;
            e.1 += r.mass[c];
        }
    }
    let mut classes: Vec<usize> = stats.keys().copied().collect();
    classes.sort_by(|a, b| {
        let (fa, ma) = stats[a];
        let (fb, mb) = stats[b];
        fb.cmp(&fa)
            .then(mb.partial_cmp(&ma).unwrap())
            .then(a.cmp(b))
    });
    classes.truncate(size);
    classes
}

pub fn brute_assign(p: &[f64], label: usize, set: &[usize]) -> usize {
    let mut members: Vec<usize> = set.iter().copied().filter(|&c| c != label).collect();
    members.sort_by(|&a, &b| p[b].partial_cmp(&p[a]).unwrap().then(a.cmp(&b)));
    members[0]
}

/// A probability row. Coarse rows repeat values so ties actually occur.
pub fn random_row(rng: &mut ChaCha8Rng, classes: usize, favored: usize) -> Vec<f64> {
    let mut raw: Vec<f64> = if rng.random_bool(0.3) {
        (0..classes)
            .map(|_| rng.random_range(1..=4) as f64)
            .collect()
    } else {
        (0..classes)
            .map(|_| rng.random_range(-2.0f64..2.0).exp())
            .collect()
    };
    if rng.random_bool(0.7) {
        raw[favored] *= 4.0;
    }
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

pub struct Instance {
    pub classes: usize,
    pub forget: Vec<usize>,
    pub thresholds: TsThresholds,
    /// Probability rows per client and forgotten class.
    pub tables: Vec<Vec<(usize, Vec<Vec<f64>>)>>,
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let classes = rng.random_range(3..=7);
    let mut ids: Vec<usize> = (0..classes).collect();
    ids.shuffle(rng);
    let forget: Vec<usize> = ids[..rng.random_range(1..classes - 1)].to_vec();
    let thresholds = TsThresholds {
        tau_p: rng.random_range(0.05..=1.0),
        tau_s: rng.random_range(1..=4),
    };
    let clients = rng.random_range(1..=5);
    let tables = (0..clients)
        .map(|_| {
            forget
                .iter()
                .map(|&u| {
                    let n = rng.random_range(0..=10);
                    (u, (0..n).map(|_| random_row(rng, classes, u)).collect())
                })
                .collect()
        })
        .collect();
    Instance {
        classes,
        forget,
        thresholds,
        tables,
    }
}

/// Compares local proposals, aggregation and assignment with the references on
/// `instances` random tables. Returns how many instances reached aggregation, or
/// the first disagreement.
pub fn check_against_references(instances: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut aggregated = 0;
    for n in 0..instances {
        let inst = random_instance(&mut rng);
        let mut reports = Vec::new();
        for client in &inst.tables {
            for (u, rows) in client {
                let expected = brute_local(
                    rows,
                    *u,
                    &inst.forget,
                    inst.thresholds.tau_p,
                    inst.thresholds.tau_s,
                );
                let got = if rows.is_empty() {
                    None
                } else {
                    let m = Matrix::from_rows(rows).unwrap();
                    local_ts_from_probabilities(&m, *u, &inst.forget, &inst.thresholds)
                        .map_err(|e| format!("instance {n}: {e}"))?
                };
                match (expected, got) {
                    (None, None) => {}
                    (Some((cands, mass, support)), Some(ts)) => {
                        let mass_ok =
                            (0..inst.classes).all(|c| (ts.mass[c] - mass[c]).abs() < 1e-12);
                        if ts.candidates != cands || ts.support != support || !mass_ok {
                            return Err(format!(
                                "instance {n}: local proposal {:?} != reference {cands:?}",
                                ts.candidates
                            ));
                        }
                        reports.push(ts);
                    }
                    (e, g) => {
                        return Err(format!("instance {n}: presence differs: {e:?} vs {g:?}"))
                    }
                }
            }
        }

        let all_reported = inst
            .forget
            .iter()
            .all(|u| reports.iter().any(|r| r.class == *u));
        let global = aggregate_global_ts(&reports, &inst.forget);
        let global = match (all_reported, global) {
            (false, Err(_)) => continue,
            (false, Ok(_)) => return Err(format!("instance {n}: missing report not rejected")),
            (true, Err(e)) => return Err(format!("instance {n}: {e}")),
            (true, Ok(g)) => g,
        };
        aggregated += 1;
        for &u in &inst.forget {
            let mine: Vec<&LocalTs> = reports.iter().filter(|r| r.class == u).collect();
            let set = global.get(u).unwrap();
            let reference = brute_aggregate(&mine);
            if set != reference.as_slice() {
                return Err(format!("instance {n}: global set {set:?} != {reference:?}"));
            }
            for _ in 0..5 {
                let p = random_row(&mut rng, inst.classes, set[0]);
                let (a, b) = (
                    assign_transformation_class(&p, u, set),
                    brute_assign(&p, u, set),
                );
                if a != b {
                    return Err(format!("instance {n}: assigned {a}, reference {b}"));
                }
            }
        }
    }
    Ok(aggregated)
}

fn report(class: usize, candidates: &[usize], mass: &[f64]) -> LocalTs {
    LocalTs {
        class,
        candidates: candidates.to_vec(),
        mass: mass.to_vec(),
        support: 5,
    }
}

/// Reports {0,2}, {0}, {0,2} for class 1; the merged set.
pub fn worked_aggregation() -> Vec<usize> {
    let mass = [1.0, 0.0, 0.8, 0.1];
    let reports = vec![
        report(1, &[0, 2], &mass),
        report(1, &[0], &mass),
        report(1, &[0, 2], &mass),
    ];
    aggregate_global_ts(&reports, &[1])
        .unwrap()
        .get(1)
        .unwrap()
        .to_vec()
}
