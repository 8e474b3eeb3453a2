//! Transformation class selection.
//!
//! Each client looks at its correctly classified samples of a forgotten class,
//! accumulates the probability of the strongest eligible runner-up class, and
//! proposes every class whose accumulated mass is within `tau_p` of the best. The
//! server merges the proposals into one set per forgotten class, and each forgotten
//! sample is then mapped to the member of that set the current model finds most
//! likely.
//!
//! Eligible classes exclude every forgotten class, not only the sample's own. All
//! ties resolve deterministically: smaller set size, then larger accumulated mass,
//! then lower class id.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{self, argmax, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsThresholds {
    /// Relative mass threshold in `(0, 1]`.
    pub tau_p: f64,
    /// Minimum number of correctly classified samples before a client reports.
    pub tau_s: usize,
}

impl TsThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_p > 0.0 && self.tau_p <= 1.0) {
            return Err(Error::Config(format!(
                "tau_p must be in (0, 1], got {}",
                self.tau_p
            )));
        }
        if self.tau_s == 0 {
            return Err(Error::Config("tau_s must be a positive integer".into()));
        }
        Ok(())
    }
}

/// One client's proposal for a forgotten class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalTs {
    pub class: usize,
    /// Proposed classes, strongest first.
    pub candidates: Vec<usize>,
    /// Accumulated runner-up probability per class.
    pub mass: Vec<f64>,
    /// Correctly classified samples that contributed.
    pub support: usize,
}

/// Server-side transformation sets keyed by forgotten class.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GlobalTs {
    pub sets: BTreeMap<usize, Vec<usize>>,
}

impl GlobalTs {
    pub fn get(&self, class: usize) -> Option<&[usize]> {
        self.sets.get(&class).map(Vec::as_slice)
    }
}

fn eligible(class_count: usize, forget: &[usize]) -> Vec<bool> {
    (0..class_count).map(|c| !forget.contains(&c)).collect()
}

/// Builds a client's proposal from the probability rows of its samples of `class`.
///
/// Returns `None` when fewer than `tau_s` samples are classified correctly.
pub fn local_ts_from_probabilities(
    probabilities: &Matrix,
    class: usize,
    forget: &[usize],
    thresholds: &TsThresholds,
) -> Result<Option<LocalTs>> {
    thresholds.validate()?;
    let classes = probabilities.cols();
    let mut forget_all = forget.to_vec();
    if !forget_all.contains(&class) {
        forget_all.push(class);
    }
    let ok = eligible(classes, &forget_all);
    if !ok.iter().any(|&e| e) {
        return Err(Error::Protocol(format!(
            "no class is eligible as a transformation target for class {class}"
        )));
    }
    let correct: Vec<&[f64]> = probabilities
        .iter_rows()
        .filter(|p| argmax(p) == class)
        .collect();
    if correct.len() < thresholds.tau_s {
        return Ok(None);
    }
    let mut mass = vec![0.0; classes];
    let mut hits = vec![0usize; classes];
    for p in &correct {
        let mut best: Option<usize> = None;
        for c in (0..classes).filter(|&c| ok[c]) {
            if best.is_none_or(|b| p[c] > p[b]) {
                best = Some(c);
            }
        }
        let b = best.expect("eligible class exists");
        mass[b] += p[b];
        hits[b] += 1;
    }
    let top = mass.iter().copied().fold(0.0, f64::max);
    let mut candidates: Vec<usize> = (0..classes)
        .filter(|&c| hits[c] > 0 && mass[c] >= thresholds.tau_p * top)
        .collect();
    candidates.sort_by(|&a, &b| mass[b].total_cmp(&mass[a]).then(a.cmp(&b)));
    Ok(Some(LocalTs {
        class,
        candidates,
        mass,
        support: correct.len(),
    }))
}

/// Runs the model over `samples` (all originally labeled `class`) and builds the proposal.
pub fn local_ts(
    model: &ModelParams,
    samples: &Matrix,
    class: usize,
    forget: &[usize],
    thresholds: &TsThresholds,
) -> Result<Option<LocalTs>> {
    if samples.rows() == 0 {
        thresholds.validate()?;
        return Ok(None);
    }
    let out = nn::forward(model, samples)?;
    local_ts_from_probabilities(&out.probabilities, class, forget, thresholds)
}

/// Merges client proposals into one set per forgotten class.
///
/// The set size is the most common proposal size; members are the classes
/// proposed most often.
pub fn aggregate_global_ts(reports: &[LocalTs], forget: &[usize]) -> Result<GlobalTs> {
    let mut sets = BTreeMap::new();
    for &u in forget {
        let mine: Vec<&LocalTs> = reports.iter().filter(|r| r.class == u).collect();
        if mine.is_empty() {
            return Err(Error::Protocol(format!(
                "no client reported a transformation set for class {u}; lower tau_s"
            )));
        }
        let mut size_counts: BTreeMap<usize, usize> = BTreeMap::new();
        for r in &mine {
            *size_counts.entry(r.candidates.len()).or_default() += 1;
        }
        // BTreeMap iterates sizes ascending, so the first maximum is the smaller size
        let size = size_counts
            .iter()
            .fold(
                (0, 0),
                |best, (&s, &n)| if n > best.1 { (s, n) } else { best },
            )
            .0;

        let mut freq: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
        for r in &mine {
            for &c in &r.candidates {
                let e = freq.entry(c).or_insert((0, 0.0));
                e.0 += 1;
                e.1 += r.mass[c];
            }
        }
        let mut ranked: Vec<(usize, usize, f64)> =
            freq.into_iter().map(|(c, (n, m))| (c, n, m)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(b.2.total_cmp(&a.2)).then(a.0.cmp(&b.0)));
        let set: Vec<usize> = ranked.into_iter().take(size).map(|(c, _, _)| c).collect();
        if set.is_empty() || set.iter().any(|c| forget.contains(c)) {
            return Err(Error::Protocol(format!(
                "reports for class {u} contain no eligible candidates"
            )));
        }
        sets.insert(u, set);
    }
    Ok(GlobalTs { sets })
}

/// Member of `set` with the highest probability, ignoring the original label;
/// the lower class id wins ties.
pub fn assign_transformation_class(probabilities: &[f64], label: usize, set: &[usize]) -> usize {
    let mut best: Option<usize> = None;
    for &c in set.iter().filter(|&&c| c != label) {
        best = match best {
            Some(b) if probabilities[c] < probabilities[b] => Some(b),
            Some(b) if probabilities[c] == probabilities[b] && b < c => Some(b),
            _ => Some(c),
        };
    }
    best.expect("transformation set has a member other than the original label")
}
