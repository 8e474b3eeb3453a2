//! Flat TOML experiment recipes.
//!
//! Every field has a default except `dataset` and the forget set (`forget` or
//! `forget_proportion`).

use std::path::{Path, PathBuf};

use fucrt_core::data::{
    generate_blobs, neighbor_layout, partition_dirichlet, partition_iid, BlobSpec,
};
use fucrt_core::federation::{Reassignment, TransformStrategy};
use fucrt_core::{
    derive_seed_for, Dims, Federation, LabeledDataset, LossConfig, Partition, TsThresholds,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Blobs,
    Idx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionKind {
    Iid,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `blobs` (synthetic Gaussian clusters) or `idx` (image files).
    pub dataset: DatasetKind,

    // synthetic blobs
    #[serde(default = "defaults::samples_per_class")]
    pub samples_per_class: usize,
    #[serde(default = "defaults::test_samples_per_class")]
    pub test_samples_per_class: usize,
    #[serde(default = "defaults::sigma")]
    pub sigma: f64,
    /// Distance between a class and its designated neighbor.
    #[serde(default = "defaults::near")]
    pub near: f64,
    /// Minimum distance between classes of different pairs.
    #[serde(default = "defaults::far")]
    pub far: f64,

    // IDX files
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_labels: Option<PathBuf>,
    /// Read at most this many records from each IDX file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idx_limit: Option<usize>,

    // federation
    #[serde(default = "defaults::clients")]
    pub clients: usize,
    #[serde(default = "defaults::partition")]
    pub partition: PartitionKind,
    #[serde(default = "defaults::dirichlet_delta")]
    pub dirichlet_delta: f64,

    // model
    #[serde(default = "defaults::input_dim")]
    pub input_dim: usize,
    #[serde(default = "defaults::hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "defaults::rep_dim")]
    pub rep_dim: usize,
    #[serde(default = "defaults::classes")]
    pub classes: usize,

    // schedule
    #[serde(default = "defaults::pretrain_rounds")]
    pub pretrain_rounds: usize,
    /// Round budget `R` for unlearning, fine-tuning and gradient ascent.
    #[serde(default = "defaults::unlearn_rounds")]
    pub unlearn_rounds: usize,
    /// Rounds for the from-scratch baseline; defaults to `pretrain_rounds`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scratch_rounds: Option<usize>,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    /// Learning rate for gradient ascent; defaults to `lr`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ascent_lr: Option<f64>,
    /// Cap on the per-step gradient norm during gradient ascent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ascent_grad_clip: Option<f64>,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,

    // unlearning
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forget: Option<Vec<usize>>,
    /// Forget the `ceil(p * classes)` lowest class ids.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forget_proportion: Option<f64>,
    #[serde(default = "defaults::tau_p")]
    pub tau_p: f64,
    #[serde(default = "defaults::tau_s")]
    pub tau_s: usize,
    #[serde(default = "defaults::tau_t")]
    pub tau_t: f64,
    #[serde(default = "defaults::lambda")]
    pub lambda_local: f64,
    #[serde(default = "defaults::lambda")]
    pub lambda_global: f64,
    #[serde(default)]
    pub disable_tcs: bool,
    #[serde(default)]
    pub disable_local: bool,
    #[serde(default)]
    pub disable_global: bool,
    #[serde(default)]
    pub reassign_per_batch: bool,

    // run
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::out_dir")]
    pub out_dir: PathBuf,
    /// Write `checkpoint_<round>.bin` every this many rounds; 0 disables.
    #[serde(default)]
    pub checkpoint_every: usize,
    /// A from-scratch run directory used to compute the efficiency ratio.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scratch_reference: Option<PathBuf>,
}

mod defaults {
    use super::PartitionKind;
    use std::path::PathBuf;

    pub fn samples_per_class() -> usize {
        200
    }
    pub fn test_samples_per_class() -> usize {
        100
    }
    pub fn sigma() -> f64 {
        1.0
    }
    pub fn near() -> f64 {
        3.0
    }
    pub fn far() -> f64 {
        10.0
    }
    pub fn clients() -> usize {
        8
    }
    pub fn partition() -> PartitionKind {
        PartitionKind::Iid
    }
    pub fn dirichlet_delta() -> f64 {
        0.5
    }
    pub fn input_dim() -> usize {
        16
    }
    pub fn hidden() -> Vec<usize> {
        vec![32]
    }
    pub fn rep_dim() -> usize {
        16
    }
    pub fn classes() -> usize {
        10
    }
    pub fn pretrain_rounds() -> usize {
        30
    }
    pub fn unlearn_rounds() -> usize {
        20
    }
    pub fn lr() -> f64 {
        0.01
    }
    pub fn batch_size() -> usize {
        64
    }
    pub fn tau_p() -> f64 {
        0.8
    }
    pub fn tau_s() -> usize {
        5
    }
    pub fn tau_t() -> f64 {
        0.5
    }
    pub fn lambda() -> f64 {
        1.0
    }
    pub fn out_dir() -> PathBuf {
        PathBuf::from("runs/default")
    }
}

fn invalid(field: &str, detail: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {detail}"))
}

impl ExperimentConfig {
    /// A config with every default filled in.
    pub fn blobs(forget: Vec<usize>) -> Self {
        toml::from_str::<Self>("dataset = \"blobs\"")
            .map(|mut c| {
                c.forget = Some(forget);
                c
            })
            .expect("defaults parse")
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let config: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Canonical TOML form: every field spelled out in declaration order.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.classes < 2 {
            return Err(invalid("classes", "need at least 2 classes"));
        }
        if self.clients == 0 {
            return Err(invalid("clients", "must be > 0"));
        }
        if self.input_dim == 0 || self.rep_dim == 0 || self.hidden.contains(&0) {
            return Err(invalid("hidden", "layer widths must be > 0"));
        }
        if !(self.dirichlet_delta > 0.0) {
            return Err(invalid("dirichlet_delta", "must be > 0"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(invalid("lr", "must be a finite value >= 0"));
        }
        if let Some(a) = self.ascent_lr {
            if !(a >= 0.0) || !a.is_finite() {
                return Err(invalid("ascent_lr", "must be a finite value >= 0"));
            }
        }
        if let Some(c) = self.ascent_grad_clip {
            if !(c > 0.0) {
                return Err(invalid("ascent_grad_clip", "must be > 0"));
            }
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be > 0"));
        }
        if !(self.tau_p > 0.0 && self.tau_p <= 1.0) {
            return Err(invalid("tau_p", "must lie in (0, 1]"));
        }
        if !(self.tau_t > 0.0) {
            return Err(invalid("tau_t", "must be > 0"));
        }
        if !(self.lambda_local >= 0.0) {
            return Err(invalid("lambda_local", "must be >= 0"));
        }
        if !(self.lambda_global >= 0.0) {
            return Err(invalid("lambda_global", "must be >= 0"));
        }
        if self.unlearn_rounds == 0 {
            return Err(invalid("unlearn_rounds", "must be >= 1"));
        }
        match self.dataset {
            DatasetKind::Blobs => {
                if !(self.sigma > 0.0) {
                    return Err(invalid("sigma", "must be > 0"));
                }
                if !(self.near > 0.0) || !(self.far > 2.0 * self.near) {
                    return Err(invalid("far", "need far > 2 * near > 0"));
                }
                if self.samples_per_class == 0 {
                    return Err(invalid("samples_per_class", "must be > 0"));
                }
                if self.test_samples_per_class == 0 {
                    return Err(invalid("test_samples_per_class", "must be > 0"));
                }
            }
            DatasetKind::Idx => {
                for (name, v) in [
                    ("train_images", &self.train_images),
                    ("train_labels", &self.train_labels),
                    ("test_images", &self.test_images),
                    ("test_labels", &self.test_labels),
                ] {
                    if v.is_none() {
                        return Err(invalid(name, "required when dataset = \"idx\""));
                    }
                }
            }
        }
        self.forget_classes().map(|_| ())
    }

    /// The resolved forget set, sorted.
    pub fn forget_classes(&self) -> Result<Vec<usize>, CliError> {
        let mut forget = match (&self.forget, self.forget_proportion) {
            (Some(list), _) => list.clone(),
            (None, Some(p)) => {
                if !(p > 0.0 && p < 1.0) {
                    return Err(invalid("forget_proportion", "must lie in (0, 1)"));
                }
                let count = (p * self.classes as f64 - 1e-9).ceil() as usize;
                (0..count.max(1)).collect()
            }
            (None, None) => {
                return Err(invalid(
                    "forget",
                    "missing; set `forget` or `forget_proportion`",
                ))
            }
        };
        forget.sort_unstable();
        forget.dedup();
        if forget.is_empty() {
            return Err(invalid("forget", "must name at least one class"));
        }
        if let Some(&c) = forget.iter().find(|&&c| c >= self.classes) {
            return Err(invalid(
                "forget",
                format!("class {c} outside [0, {})", self.classes),
            ));
        }
        if forget.len() >= self.classes {
            return Err(invalid("forget", "cannot forget every class"));
        }
        Ok(forget)
    }

    pub fn dims(&self) -> Dims {
        Dims::new(
            self.input_dim,
            self.hidden.clone(),
            self.rep_dim,
            self.classes,
        )
    }

    pub fn scratch_rounds(&self) -> usize {
        self.scratch_rounds.unwrap_or(self.pretrain_rounds)
    }

    pub fn thresholds(&self) -> TsThresholds {
        TsThresholds {
            tau_p: self.tau_p,
            tau_s: self.tau_s,
        }
    }

    /// Loss weights after applying the ablation switches.
    pub fn loss(&self) -> LossConfig {
        LossConfig {
            lambda_local: if self.disable_local {
                0.0
            } else {
                self.lambda_local
            },
            lambda_global: if self.disable_global {
                0.0
            } else {
                self.lambda_global
            },
            temperature: self.tau_t,
        }
    }

    pub fn strategy(&self) -> TransformStrategy {
        if self.disable_tcs {
            TransformStrategy::RandomClass
        } else {
            TransformStrategy::Tcs
        }
    }

    pub fn reassignment(&self) -> Reassignment {
        if self.reassign_per_batch {
            Reassignment::PerBatch
        } else {
            Reassignment::PerEpoch
        }
    }

    /// Stream seed for one named purpose (`data`, `partition`, `init`, `mia`, ...).
    pub fn seed_for(&self, purpose: &str) -> u64 {
        derive_seed_for(self.seed, purpose)
    }

    /// Train and test sets described by this config.
    pub fn load_data(&self) -> Result<(LabeledDataset, LabeledDataset), CliError> {
        match self.dataset {
            DatasetKind::Blobs => {
                let centers = neighbor_layout(self.classes, self.input_dim, self.near, self.far)?;
                let spec = BlobSpec {
                    class_count: self.classes,
                    samples_per_class: self.samples_per_class,
                    input_dim: self.input_dim,
                    centers,
                    sigma: self.sigma,
                    seed: self.seed_for("data"),
                };
                let train = generate_blobs(&spec)?;
                let test = generate_blobs(&spec.test_split(self.test_samples_per_class))?;
                Ok((train, test))
            }
            DatasetKind::Idx => {
                let path = |p: &Option<PathBuf>| p.clone().expect("validated");
                let train = fucrt_core::idx::load_idx(
                    &path(&self.train_images),
                    &path(&self.train_labels),
                    self.classes,
                    self.idx_limit,
                )?;
                let test = fucrt_core::idx::load_idx(
                    &path(&self.test_images),
                    &path(&self.test_labels),
                    self.classes,
                    self.idx_limit,
                )?;
                if train.input_dim() != self.input_dim {
                    return Err(invalid(
                        "input_dim",
                        format!("IDX images have {} pixels", train.input_dim()),
                    ));
                }
                Ok((train, test))
            }
        }
    }

    pub fn partition(&self, train: &LabeledDataset) -> Result<Partition, CliError> {
        let seed = self.seed_for("partition");
        Ok(match self.partition {
            PartitionKind::Iid => partition_iid(train, self.clients, seed)?,
            PartitionKind::Dirichlet => {
                partition_dirichlet(train, self.clients, self.dirichlet_delta, seed)?
            }
        })
    }

    pub fn federation(&self) -> Result<Federation, CliError> {
        let (train, test) = self.load_data()?;
        let partition = self.partition(&train)?;
        Ok(Federation::new(train, test, partition)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_toml("dataset = \"blobs\"\nforget = [3]\n").unwrap();
        assert_eq!(c.clients, 8);
        assert_eq!(c.unlearn_rounds, 20);
        assert_eq!(c.forget_classes().unwrap(), vec![3]);
    }

    #[test]
    fn missing_required_fields_are_reported() {
        let e = ExperimentConfig::from_toml("forget = [1]").unwrap_err();
        assert!(e.to_string().contains("dataset"), "{e}");
        let e = ExperimentConfig::from_toml("dataset = \"blobs\"").unwrap_err();
        assert!(e.to_string().contains("forget"), "{e}");
    }

    #[test]
    fn errors_name_the_field() {
        let e = ExperimentConfig::from_toml("dataset = \"blobs\"\nforget = [0]\ntau_p = 1.5\n")
            .unwrap_err();
        assert!(e.to_string().starts_with("tau_p"), "{e}");
        let e = ExperimentConfig::from_toml("dataset = \"blobs\"\nforget = [10]\n").unwrap_err();
        assert!(e.to_string().starts_with("forget"), "{e}");
        let e = ExperimentConfig::from_toml("dataset = \"blobs\"\nforget = [1]\nbogus = 1\n")
            .unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
    }

    #[test]
    fn proportions_pick_lowest_ids() {
        let mut c = ExperimentConfig::blobs(vec![]);
        c.forget = None;
        for (p, n) in [(0.1, 1), (0.3, 3), (0.5, 5)] {
            c.forget_proportion = Some(p);
            assert_eq!(c.forget_classes().unwrap(), (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn canonical_form_round_trips() {
        let text = "dataset = \"blobs\"\nforget = [2]\nhidden = [8, 4]\nseed = 7\n";
        let c = ExperimentConfig::from_toml(text).unwrap();
        let canon = c.to_toml();
        let again = ExperimentConfig::from_toml(&canon).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.to_toml(), canon);
    }

    #[test]
    fn ablation_flags_shape_the_loss() {
        let mut c = ExperimentConfig::blobs(vec![0]);
        c.disable_local = true;
        assert_eq!(c.loss().lambda_local, 0.0);
        assert_eq!(c.loss().lambda_global, 1.0);
        c.disable_tcs = true;
        assert_eq!(c.strategy(), TransformStrategy::RandomClass);
    }
}
