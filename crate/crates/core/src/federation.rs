//! Synchronous federated rounds: FedAvg pretraining, the class-aware
//! representation transformation unlearning loop, and the retrain / fine-tune /
//! gradient-ascent baselines.
//!
//! Every client draws its batch order from a stream seeded by
//! `(run seed, client id, round)`, and the server always aggregates in client
//! order, so a run gives identical results under sequential and parallel
//! execution.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{relabel_for_unlearning, LabeledDataset, Partition};
use crate::error::{Error, Result};
use crate::evaluation::{group_metrics, GroupMetrics};
use crate::losses::{LossBreakdown, LossConfig};
use crate::matrix::Matrix;
use crate::nn::{self, init_params, Dims, ModelParams};
use crate::parallel::Execution;
use crate::prototype::{aggregate_prototypes, class_prototypes, LocalPrototypes, PrototypeBank};
use crate::tcs::{self, GlobalTs, LocalTs, TsThresholds};

/// Mixes a run seed with two stream coordinates (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for a named purpose (`"data"`, `"partition"`, ...) derived from a run seed.
pub fn derive_seed_for(seed: u64, purpose: &str) -> u64 {
    let tag = purpose.bytes().fold(0xCBF2_9CE4_8422_2325_u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01B3)
    });
    derive_seed(seed, tag, 0)
}

/// Seed of client `client`'s batch-order stream in round `round`.
pub fn client_stream_seed(seed: u64, client: usize, round: usize) -> u64 {
    derive_seed(seed, client as u64 + 1, round as u64)
}

/// Batch order of one local epoch: a seeded shuffle cut into chunks, last partial kept.
pub fn epoch_batches(len: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

/// Sample-weighted elementwise mean, accumulated in input order as
/// `m0 + sum_k w_k (m_k - m0)`.
pub fn fedavg(models: &[ModelParams], weights: &[usize]) -> Result<ModelParams> {
    let first = models
        .first()
        .ok_or_else(|| Error::Protocol("fedavg needs at least one model".into()))?;
    if models.len() != weights.len() {
        return Err(Error::Protocol(format!(
            "{} models but {} weights",
            models.len(),
            weights.len()
        )));
    }
    if weights.contains(&0) {
        return Err(Error::Protocol("fedavg weights must be positive".into()));
    }
    for m in models {
        if m.dims() != first.dims() {
            return Err(Error::Protocol(
                "fedavg received models of different shapes".into(),
            ));
        }
    }
    let total: usize = weights.iter().sum();
    let mut out = first.clone();
    for (m, &w) in models.iter().zip(weights).skip(1) {
        let share = w as f64 / total as f64;
        for ((dst, src), base) in out
            .layers_mut()
            .iter_mut()
            .zip(m.layers())
            .zip(first.layers())
        {
            for ((d, s), b) in dst.weights.iter_mut().zip(&src.weights).zip(&base.weights) {
                *d += share * (s - b);
            }
            for ((d, s), b) in dst.bias.iter_mut().zip(&src.bias).zip(&base.bias) {
                *d += share * (s - b);
            }
        }
    }
    Ok(out)
}

/// Client-side prototypes of `model` over the current labels of `dataset`.
pub fn local_prototypes(model: &ModelParams, dataset: &LabeledDataset) -> Result<LocalPrototypes> {
    let out = nn::forward(model, dataset.features())?;
    Ok(class_prototypes(
        &out.normalized_representations(),
        dataset.labels(),
        model.class_count(),
    ))
}

/// Settings shared by pretraining and the baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub rounds: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Classes to forget (baselines) or to report separately (pretraining).
    pub forget: Vec<usize>,
    /// Rescale each step's gradient to at most this Euclidean norm.
    pub grad_clip: Option<f64>,
}

impl TrainConfig {
    fn validate(&self, classes: usize) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be >= 0, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be > 0".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("gradient clip must be > 0, got {c}")));
            }
        }
        validate_forget(&self.forget, classes, true)
    }
}

fn validate_forget(forget: &[usize], classes: usize, allow_empty: bool) -> Result<()> {
    if !allow_empty && forget.is_empty() {
        return Err(Error::Config(
            "the set of classes to forget is empty".into(),
        ));
    }
    if let Some(&c) = forget.iter().find(|&&c| c >= classes) {
        return Err(Error::Config(format!(
            "forget class {c} outside [0, {classes})"
        )));
    }
    if forget.len() >= classes {
        return Err(Error::Config("cannot forget every class".into()));
    }
    Ok(())
}

/// How forgotten samples are given their new labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformStrategy {
    /// Runner-up based class selection aggregated across clients.
    Tcs,
    /// One uniformly random remaining class per forgotten class (ablation).
    RandomClass,
}

/// When per-sample transformation classes are recomputed during local training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reassignment {
    PerEpoch,
    PerBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnConfig {
    pub forget: Vec<usize>,
    pub thresholds: TsThresholds,
    pub loss: LossConfig,
    /// Round budget `R`; `R - 1` training rounds run after the bootstrap.
    pub rounds: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub strategy: TransformStrategy,
    pub reassignment: Reassignment,
}

impl UnlearnConfig {
    fn validate(&self, classes: usize) -> Result<()> {
        self.thresholds.validate()?;
        self.loss.validate()?;
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be >= 0, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be > 0".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Config(
                "unlearning needs a round budget of at least 1".into(),
            ));
        }
        validate_forget(&self.forget, classes, false)
    }
}

/// Bytes exchanged per client in one round.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CommBytes {
    pub model_bytes: usize,
    pub prototype_bytes: usize,
    pub participants: usize,
}

impl CommBytes {
    pub fn total(&self) -> usize {
        self.participants * (self.model_bytes + self.prototype_bytes)
    }

    /// Prototype upload size relative to model upload size.
    pub fn prototype_ratio(&self) -> f64 {
        self.prototype_bytes as f64 / self.model_bytes as f64
    }
}

/// Everything known about one completed round.
#[derive(Debug, Clone, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    #[serde(skip)]
    pub model: ModelParams,
    #[serde(skip)]
    pub prototypes: Option<PrototypeBank>,
    pub client_samples: Vec<usize>,
    pub duration_ms: f64,
    pub comm: CommBytes,
    pub losses: LossBreakdown,
    pub unlearning: GroupMetrics,
    pub remaining: GroupMetrics,
}

/// Result of a federated run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub model: ModelParams,
    pub records: Vec<RoundRecord>,
    /// Present for unlearning runs that performed class selection.
    pub global_ts: Option<GlobalTs>,
    pub local_reports: Vec<LocalTs>,
    /// Training labels at the end of an unlearning run, in parent-dataset order.
    pub final_labels: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    FromScratch,
    FineTune,
    GradientAscent,
}

pub type Observer<'a> = &'a mut dyn FnMut(&RoundRecord) -> Result<()>;

/// Partitioned training data, held-out test data, and how clients are scheduled.
#[derive(Debug, Clone)]
pub struct Federation {
    train: LabeledDataset,
    test: LabeledDataset,
    clients: Vec<LabeledDataset>,
    partition: Partition,
    pub execution: Execution,
}

struct ClientUpdate {
    model: ModelParams,
    samples: usize,
    losses: LossBreakdown,
    batches: usize,
    prototypes: Option<PrototypeBank>,
    labels: Vec<usize>,
}

/// Per-client transformation bookkeeping for the unlearning loop.
struct Transform<'a> {
    global_ts: &'a GlobalTs,
    reassignment: Reassignment,
}

impl Federation {
    pub fn new(train: LabeledDataset, test: LabeledDataset, partition: Partition) -> Result<Self> {
        partition.validate(train.len())?;
        if train.input_dim() != test.input_dim() || train.class_count() != test.class_count() {
            return Err(Error::Config(
                "train and test sets disagree on shape".into(),
            ));
        }
        let clients = partition.client_datasets(&train);
        Ok(Self {
            train,
            test,
            clients,
            partition,
            execution: Execution::default(),
        })
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn train(&self) -> &LabeledDataset {
        &self.train
    }

    pub fn test(&self) -> &LabeledDataset {
        &self.test
    }

    pub fn clients(&self) -> &[LabeledDataset] {
        &self.clients
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    fn check_model(&self, model: &ModelParams) -> Result<()> {
        if model.input_dim() != self.train.input_dim()
            || model.class_count() != self.train.class_count()
        {
            return Err(Error::Config(format!(
                "model expects {} features / {} classes, data has {} / {}",
                model.input_dim(),
                model.class_count(),
                self.train.input_dim(),
                self.train.class_count()
            )));
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        round: usize,
        model: &ModelParams,
        prototypes: Option<PrototypeBank>,
        client_samples: Vec<usize>,
        started: Instant,
        losses: LossBreakdown,
        forget: &[usize],
    ) -> Result<RoundRecord> {
        let (unlearning, remaining) = group_metrics(model, &self.test, forget)?;
        let comm = CommBytes {
            model_bytes: model.byte_size(),
            prototype_bytes: prototypes.as_ref().map_or(0, PrototypeBank::byte_size),
            participants: client_samples.len(),
        };
        Ok(RoundRecord {
            round,
            model: model.clone(),
            prototypes,
            client_samples,
            duration_ms: started.elapsed().as_secs_f64() * 1e3,
            comm,
            losses,
            unlearning,
            remaining,
        })
    }

    /// Plain FedAvg with cross-entropy from a fresh initialization.
    pub fn pretrain(
        &self,
        dims: &Dims,
        config: &TrainConfig,
        observer: Observer<'_>,
    ) -> Result<RunOutput> {
        config.validate(self.train.class_count())?;
        let init = init_params(dims, config.seed)?;
        self.check_model(&init)?;
        let all: Vec<Vec<usize>> = self
            .clients
            .iter()
            .map(|c| (0..c.len()).collect())
            .collect();
        self.fedavg_rounds(init, &all, false, config, observer)
    }

    /// One of the comparison methods. `origin` is ignored by `FromScratch`, which
    /// only needs `dims`.
    pub fn run_baseline(
        &self,
        kind: BaselineKind,
        origin: Option<&ModelParams>,
        dims: &Dims,
        config: &TrainConfig,
        observer: Observer<'_>,
    ) -> Result<RunOutput> {
        config.validate(self.train.class_count())?;
        let forget = &config.forget;
        let select = |keep_forgotten: bool| -> Vec<Vec<usize>> {
            self.clients
                .iter()
                .map(|c| c.indices_where(|y| forget.contains(&y) == keep_forgotten))
                .collect()
        };
        let need_origin = || {
            origin
                .cloned()
                .ok_or_else(|| Error::Config(format!("{kind:?} needs the original model")))
        };
        match kind {
            BaselineKind::FromScratch => {
                let init = init_params(dims, config.seed)?;
                self.check_model(&init)?;
                self.fedavg_rounds(init, &select(false), false, config, observer)
            }
            BaselineKind::FineTune => {
                let start = need_origin()?;
                self.check_model(&start)?;
                self.fedavg_rounds(start, &select(false), false, config, observer)
            }
            BaselineKind::GradientAscent => {
                let start = need_origin()?;
                self.check_model(&start)?;
                self.fedavg_rounds(start, &select(true), true, config, observer)
            }
        }
    }

    /// Cross-entropy FedAvg over per-client sample subsets. Clients with an empty
    /// subset sit the round out. `ascent` negates the gradient.
    fn fedavg_rounds(
        &self,
        mut model: ModelParams,
        subsets: &[Vec<usize>],
        ascent: bool,
        config: &TrainConfig,
        observer: Observer<'_>,
    ) -> Result<RunOutput> {
        let participants: Vec<(usize, LabeledDataset)> = subsets
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.is_empty())
            .map(|(k, s)| (k, self.clients[k].subset(s)))
            .collect();
        if participants.is_empty() && config.rounds > 0 {
            return Err(Error::Protocol("no client holds data for this run".into()));
        }
        let loss = LossConfig::cross_entropy_only();
        let mut records = Vec::with_capacity(config.rounds);
        for round in 1..=config.rounds {
            let started = Instant::now();
            let updates = self.execution.map(&participants, |_, (k, data)| {
                let mut data = data.clone();
                local_epoch(
                    &model,
                    &mut data,
                    &loss,
                    None,
                    None,
                    config.lr,
                    config.batch_size,
                    client_stream_seed(config.seed, *k, round),
                    Step {
                        ascent,
                        clip: config.grad_clip,
                    },
                    false,
                )
            });
            let updates = collect_updates(updates, round)?;
            model = aggregate_models(&updates, round)?;
            let rec = self.record(
                round,
                &model,
                None,
                updates.iter().map(|u| u.samples).collect(),
                started,
                mean_losses(&updates),
                &config.forget,
            )?;
            observer(&rec)?;
            records.push(rec);
        }
        Ok(RunOutput {
            model,
            records,
            global_ts: None,
            local_reports: Vec::new(),
            final_labels: None,
        })
    }

    /// Class-selection phase: every client proposes transformation classes with
    /// the original model and the server merges the proposals.
    pub fn select_transformation_classes(
        &self,
        origin: &ModelParams,
        forget: &[usize],
        thresholds: &TsThresholds,
    ) -> Result<(GlobalTs, Vec<LocalTs>)> {
        let per_client = self
            .execution
            .map(&self.clients, |_, data| -> Result<Vec<LocalTs>> {
                let mut out = Vec::new();
                for &u in forget {
                    let idx = data.indices_where(|y| y == u);
                    let samples = data.features().select_rows(&idx);
                    if let Some(ts) = tcs::local_ts(origin, &samples, u, forget, thresholds)? {
                        out.push(ts);
                    }
                }
                Ok(out)
            });
        let mut reports = Vec::new();
        for r in per_client {
            reports.extend(r?);
        }
        let global = tcs::aggregate_global_ts(&reports, forget)?;
        Ok((global, reports))
    }

    /// One fixed random remaining class per forgotten class.
    pub fn random_transformation_classes(&self, forget: &[usize], seed: u64) -> Result<GlobalTs> {
        let classes = self.train.class_count();
        let remaining: Vec<usize> = (0..classes).filter(|c| !forget.contains(c)).collect();
        if remaining.is_empty() {
            return Err(Error::Protocol("no remaining class to map onto".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, u64::MAX));
        let mut global = GlobalTs::default();
        for &u in forget {
            let pick = remaining[rng.random_range(0..remaining.len())];
            global.sets.insert(u, vec![pick]);
        }
        Ok(global)
    }

    /// The full unlearning protocol starting from `origin`.
    ///
    /// Emits a round-0 record for the prototype bootstrap (computed with `origin`
    /// on the relabeled client data), then one record per training round.
    pub fn run_fucrt(
        &self,
        origin: &ModelParams,
        config: &UnlearnConfig,
        observer: Observer<'_>,
    ) -> Result<RunOutput> {
        self.check_model(origin)?;
        config.validate(self.train.class_count())?;
        let forget = &config.forget;
        let started = Instant::now();

        let (global_ts, local_reports) = match config.strategy {
            TransformStrategy::Tcs => {
                self.select_transformation_classes(origin, forget, &config.thresholds)?
            }
            TransformStrategy::RandomClass => (
                self.random_transformation_classes(forget, config.seed)?,
                Vec::new(),
            ),
        };

        // relabel every client's forgotten samples with the original model
        let relabeled: Vec<LabeledDataset> = self
            .execution
            .map(&self.clients, |_, data| {
                assign_all(origin, data, forget, &global_ts)
            })
            .into_iter()
            .collect::<Result<_>>()?;

        let locals: Vec<PrototypeBank> = self
            .execution
            .map(&relabeled, |_, data| {
                local_prototypes(origin, data).map(|p| p.bank)
            })
            .into_iter()
            .collect::<Result<_>>()?;
        let mut bank = aggregate_prototypes(&locals, None, 1);

        let mut model = origin.clone();
        let mut records = Vec::with_capacity(config.rounds);
        let bootstrap = self.record(
            0,
            &model,
            Some(bank.clone()),
            relabeled.iter().map(LabeledDataset::len).collect(),
            started,
            LossBreakdown::default(),
            forget,
        )?;
        observer(&bootstrap)?;
        records.push(bootstrap);

        let transform = Transform {
            global_ts: &global_ts,
            reassignment: config.reassignment,
        };
        let mut datasets = relabeled;
        for round in 1..config.rounds {
            let started = Instant::now();
            let updates = self.execution.map(&datasets, |k, data| {
                let mut data = data.clone();
                let mut update = local_epoch(
                    &model,
                    &mut data,
                    &config.loss,
                    Some(&bank),
                    Some((&transform, forget.as_slice())),
                    config.lr,
                    config.batch_size,
                    client_stream_seed(config.seed, k, round),
                    Step::default(),
                    true,
                )?;
                update.labels = data.labels().to_vec();
                Ok(update)
            });
            let updates = collect_updates(updates, round)?;
            for (data, u) in datasets.iter_mut().zip(&updates) {
                for (i, &y) in u.labels.iter().enumerate() {
                    data.set_label(i, y);
                }
            }
            model = aggregate_models(&updates, round)?;
            let local_banks: Vec<PrototypeBank> = updates
                .iter()
                .map(|u| {
                    u.prototypes
                        .clone()
                        .expect("unlearning clients return prototypes")
                })
                .collect();
            bank = aggregate_prototypes(&local_banks, Some(&bank), round + 1);
            let rec = self.record(
                round,
                &model,
                Some(bank.clone()),
                updates.iter().map(|u| u.samples).collect(),
                started,
                mean_losses(&updates),
                forget,
            )?;
            observer(&rec)?;
            records.push(rec);
        }
        let mut final_labels = self.train.labels().to_vec();
        for (indices, data) in self.partition.client_indices.iter().zip(&datasets) {
            for (&parent, &y) in indices.iter().zip(data.labels()) {
                final_labels[parent] = y;
            }
        }
        Ok(RunOutput {
            model,
            records,
            global_ts: Some(global_ts),
            local_reports,
            final_labels: Some(final_labels),
        })
    }
}

/// Relabels every forgotten sample of `data` with its transformation class under `model`.
fn assign_all(
    model: &ModelParams,
    data: &LabeledDataset,
    forget: &[usize],
    global_ts: &GlobalTs,
) -> Result<LabeledDataset> {
    let idx = data.indices_where(|y| forget.contains(&y));
    let assignments = assign_indices(model, data, &idx, global_ts)?;
    relabel_for_unlearning(data, forget, &assignments)
}

fn assign_indices(
    model: &ModelParams,
    data: &LabeledDataset,
    idx: &[usize],
    global_ts: &GlobalTs,
) -> Result<Vec<(usize, usize)>> {
    if idx.is_empty() {
        return Ok(Vec::new());
    }
    let probs = nn::forward(model, &data.features().select_rows(idx))?.probabilities;
    idx.iter()
        .enumerate()
        .map(|(row, &i)| {
            let y = data.original_labels()[i];
            let set = global_ts
                .get(y)
                .ok_or_else(|| Error::Protocol(format!("no transformation set for class {y}")))?;
            Ok((i, tcs::assign_transformation_class(probs.row(row), y, set)))
        })
        .collect()
}

/// How a local gradient becomes a parameter update.
#[derive(Debug, Clone, Copy, Default)]
struct Step {
    /// Negate the gradient.
    ascent: bool,
    clip: Option<f64>,
}

/// One local epoch of SGD on `data`.
///
/// With `transform`, forgotten samples are reassigned (per epoch or per batch)
/// before being used.
#[allow(clippy::too_many_arguments)]
fn local_epoch(
    global: &ModelParams,
    data: &mut LabeledDataset,
    loss: &LossConfig,
    bank: Option<&PrototypeBank>,
    transform: Option<(&Transform<'_>, &[usize])>,
    lr: f64,
    batch_size: usize,
    stream_seed: u64,
    step: Step,
    with_prototypes: bool,
) -> Result<ClientUpdate> {
    let mut model = global.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
    let forgotten: Vec<usize> = match transform {
        Some((_, forget)) => data.indices_where(|y| forget.contains(&y)),
        None => Vec::new(),
    };
    if let Some((t, _)) = transform {
        if t.reassignment == Reassignment::PerEpoch {
            for (i, c) in assign_indices(&model, data, &forgotten, t.global_ts)? {
                data.set_label(i, c);
            }
        }
    }
    let mut sum = LossBreakdown::default();
    let batches = epoch_batches(data.len(), batch_size, &mut rng);
    for batch in &batches {
        if let Some((t, forget)) = transform {
            if t.reassignment == Reassignment::PerBatch {
                let in_batch: Vec<usize> = batch
                    .iter()
                    .copied()
                    .filter(|&i| forget.contains(&data.original_labels()[i]))
                    .collect();
                for (i, c) in assign_indices(&model, data, &in_batch, t.global_ts)? {
                    data.set_label(i, c);
                }
            }
        }
        let features: Matrix = data.features().select_rows(batch);
        let labels: Vec<usize> = batch.iter().map(|&i| data.labels()[i]).collect();
        let (b, mut grads) = nn::backward(&model, &features, &labels, loss, bank)?;
        if let Some(max) = step.clip {
            let norm = grads.norm();
            if norm > max {
                grads.scale(max / norm);
            }
        }
        if step.ascent {
            grads.scale(-1.0);
        }
        model.apply_sgd(&grads, lr)?;
        sum.cross_entropy += b.cross_entropy;
        sum.local += b.local;
        sum.global += b.global;
        sum.total += b.total;
        sum.skipped_global += b.skipped_global;
    }
    let prototypes = if with_prototypes {
        Some(local_prototypes(&model, data)?.bank)
    } else {
        None
    };
    Ok(ClientUpdate {
        model,
        samples: data.len(),
        losses: sum,
        batches: batches.len(),
        prototypes,
        labels: Vec::new(),
    })
}

fn collect_updates(updates: Vec<Result<ClientUpdate>>, round: usize) -> Result<Vec<ClientUpdate>> {
    updates
        .into_iter()
        .map(|u| {
            u.map_err(|e| match e {
                Error::Numeric { layer, detail } => Error::Diverged {
                    round,
                    detail: format!("layer {layer}: {detail}"),
                },
                other => other,
            })
        })
        .collect()
}

fn aggregate_models(updates: &[ClientUpdate], round: usize) -> Result<ModelParams> {
    let models: Vec<ModelParams> = updates.iter().map(|u| u.model.clone()).collect();
    let weights: Vec<usize> = updates.iter().map(|u| u.samples).collect();
    let model = fedavg(&models, &weights)?;
    if !model.is_finite() {
        return Err(Error::Diverged {
            round,
            detail: "aggregated model has non-finite parameters".into(),
        });
    }
    Ok(model)
}

fn mean_losses(updates: &[ClientUpdate]) -> LossBreakdown {
    let batches: usize = updates.iter().map(|u| u.batches).sum();
    let mut out = LossBreakdown::default();
    if batches == 0 {
        return out;
    }
    for u in updates {
        out.cross_entropy += u.losses.cross_entropy;
        out.local += u.losses.local;
        out.global += u.losses.global;
        out.total += u.losses.total;
        out.skipped_global += u.losses.skipped_global;
    }
    let n = batches as f64;
    out.cross_entropy /= n;
    out.local /= n;
    out.global /= n;
    out.total /= n;
    out
}

/// First round (>= 1) whose remaining-class accuracy reaches `target`, plus
/// `extra_rounds` of overhead; `None` if never reached.
pub fn rounds_to_target(
    records: &[RoundRecord],
    target: f64,
    extra_rounds: usize,
) -> Option<usize> {
    records
        .iter()
        .filter(|r| r.round >= 1)
        .find(|r| r.remaining.accuracy.is_some_and(|a| a >= target))
        .map(|r| r.round + extra_rounds)
}
