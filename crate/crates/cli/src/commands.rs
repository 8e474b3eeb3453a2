//! The `pretrain`, `unlearn` and `report` subcommands and the artifacts they write.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fucrt_core::evaluation::{export_embeddings, merge_diagnostic, mia_asr, MergeReport};
use fucrt_core::federation::{CommBytes, RoundRecord, RunOutput};
use fucrt_core::{
    checkpoint, BaselineKind, Dims, Execution, Federation, GlobalTs, GroupMetrics, LabeledDataset,
    MiaReport, ModelParams, TrainConfig, UnlearnConfig,
};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const MODEL_FILE: &str = "model.bin";
pub const ROUNDS_FILE: &str = "rounds.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const EMBEDDINGS_PRE: &str = "embeddings_pre.csv";
pub const EMBEDDINGS_POST: &str = "embeddings_post.csv";
pub const GLOBAL_TS_FILE: &str = "global_ts.json";
pub const REPORT_CSV: &str = "report.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Method {
    Fucrt,
    FromScratch,
    FineTune,
    GradientAscent,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Fucrt => "fucrt",
            Method::FromScratch => "from_scratch",
            Method::FineTune => "fine_tune",
            Method::GradientAscent => "gradient_ascent",
        }
    }
}

/// One line of `rounds.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: usize,
    /// Communication rounds used so far, counting the prototype bootstrap.
    pub comm_round: usize,
    pub remaining_acc: Option<f64>,
    pub unlearning_acc: Option<f64>,
    pub remaining_f1: Option<f64>,
    pub unlearning_f1: Option<f64>,
    pub loss: f64,
    pub loss_ce: f64,
    pub loss_local: f64,
    pub loss_global: f64,
    pub skipped_global: usize,
    pub participants: usize,
    pub model_bytes: usize,
    pub prototype_bytes: usize,
    pub comm_bytes: usize,
    pub duration_ms: f64,
}

impl RoundRow {
    fn new(rec: &RoundRecord, comm_offset: usize) -> Self {
        Self {
            round: rec.round,
            comm_round: rec.round + comm_offset,
            remaining_acc: rec.remaining.accuracy,
            unlearning_acc: rec.unlearning.accuracy,
            remaining_f1: rec.remaining.f1,
            unlearning_f1: rec.unlearning.f1,
            loss: rec.losses.total,
            loss_ce: rec.losses.cross_entropy,
            loss_local: rec.losses.local,
            loss_global: rec.losses.global,
            skipped_global: rec.losses.skipped_global,
            participants: rec.comm.participants,
            model_bytes: rec.comm.model_bytes,
            prototype_bytes: rec.comm.prototype_bytes,
            comm_bytes: rec.comm.total(),
            duration_ms: rec.duration_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub comm_round: usize,
    pub remaining_acc: Option<f64>,
    pub unlearning_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommSummary {
    pub model_bytes: usize,
    pub prototype_bytes: usize,
    pub prototype_model_ratio: f64,
    pub total_bytes: usize,
}

/// Rounds a run needed to match a from-scratch reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Efficiency {
    /// Reference final remaining accuracy minus one point.
    pub target_remaining_acc: f64,
    /// Reference final unlearning accuracy, which must also be matched.
    pub target_unlearning_acc: f64,
    pub rounds_to_target: Option<usize>,
    pub scratch_rounds: usize,
    /// `rounds_to_target / scratch_rounds`.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    /// Method plus ablation suffixes, e.g. `fucrt_wo_local`.
    pub variant: String,
    pub seed: u64,
    pub forget: Vec<usize>,
    /// `list` or `proportion`; proportions resolve to the lowest class ids.
    pub forget_source: String,
    pub dims: Dims,
    pub param_count: usize,
    pub comm_rounds: usize,
    pub overall_accuracy: f64,
    pub unlearning: GroupMetrics,
    pub remaining: GroupMetrics,
    pub mia: Option<MiaReport>,
    pub merge: Vec<MergeReport>,
    pub global_ts: Option<GlobalTs>,
    pub comm: CommSummary,
    pub efficiency: Option<Efficiency>,
    /// Global prototypes average only over clients that hold the class.
    pub prototype_averaging: String,
    pub curve: Vec<CurvePoint>,
}

impl Summary {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Artifact {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }

    fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("summary serializes");
        std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }
}

/// First point that matches the reference's final unlearning accuracy and comes
/// within one point of its final remaining accuracy.
pub fn efficiency(curve: &[CurvePoint], reference: &Summary) -> Option<Efficiency> {
    let target_remaining = reference.remaining.accuracy? - 1.0;
    let target_unlearning = reference.unlearning.accuracy.unwrap_or(0.0);
    let rounds_to_target = curve
        .iter()
        .find(|p| {
            p.remaining_acc.is_some_and(|a| a >= target_remaining)
                && p.unlearning_acc.is_none_or(|a| a <= target_unlearning)
        })
        .map(|p| p.comm_round);
    Some(Efficiency {
        target_remaining_acc: target_remaining,
        target_unlearning_acc: target_unlearning,
        rounds_to_target,
        scratch_rounds: reference.comm_rounds,
        ratio: rounds_to_target.map(|r| r as f64 / reference.comm_rounds as f64),
    })
}

/// Streams `rounds.jsonl` and writes periodic checkpoints as rounds complete.
struct RoundSink {
    jsonl: BufWriter<File>,
    path: PathBuf,
    dir: PathBuf,
    checkpoint_every: usize,
    comm_offset: usize,
}

impl RoundSink {
    fn create(dir: &Path, checkpoint_every: usize, comm_offset: usize) -> Result<Self, CliError> {
        let path = dir.join(ROUNDS_FILE);
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(Self {
            jsonl: BufWriter::new(file),
            path,
            dir: dir.to_path_buf(),
            checkpoint_every,
            comm_offset,
        })
    }

    fn push(&mut self, rec: &RoundRecord) -> fucrt_core::Result<()> {
        let line = serde_json::to_string(&RoundRow::new(rec, self.comm_offset))
            .expect("round row serializes");
        writeln!(self.jsonl, "{line}").map_err(|e| fucrt_core::Error::Io {
            path: self.path.clone(),
            source: e,
        })?;
        if self.checkpoint_every > 0
            && rec.round > 0
            && rec.round.is_multiple_of(self.checkpoint_every)
        {
            checkpoint::save(
                &rec.model,
                &self.dir.join(format!("checkpoint_{}.bin", rec.round)),
            )?;
        }
        info!(
            "round {}: remaining {:.2}%, unlearning {:.2}%, loss {:.4}",
            rec.round,
            rec.remaining.accuracy.unwrap_or(f64::NAN),
            rec.unlearning.accuracy.unwrap_or(f64::NAN),
            rec.losses.total
        );
        Ok(())
    }

    fn finish(mut self) -> Result<(), CliError> {
        self.jsonl.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn variant(config: &ExperimentConfig, method: Method) -> String {
    let mut name = method.name().to_string();
    if method == Method::Fucrt {
        for (flag, suffix) in [
            (config.disable_tcs, "_wo_tcs"),
            (config.disable_local, "_wo_local"),
            (config.disable_global, "_wo_global"),
        ] {
            if flag {
                name.push_str(suffix);
            }
        }
    }
    name
}

fn overall_accuracy(model: &ModelParams, test: &LabeledDataset) -> Result<f64, CliError> {
    let preds = fucrt_core::nn::forward(model, test.features())?.predictions();
    let hits = preds
        .iter()
        .zip(test.labels())
        .filter(|(p, y)| p == y)
        .count();
    Ok(100.0 * hits as f64 / test.len().max(1) as f64)
}

struct Finished<'a> {
    config: &'a ExperimentConfig,
    method: &'a str,
    variant: String,
    federation: &'a Federation,
    output: &'a RunOutput,
    comm_offset: usize,
    efficiency: Option<Efficiency>,
}

impl Finished<'_> {
    fn summary(self) -> Result<Summary, CliError> {
        let forget = self.config.forget_classes()?;
        let model = &self.output.model;
        let test = self.federation.test();
        let (unlearning, remaining) = fucrt_core::evaluation::group_metrics(model, test, &forget)?;
        let mia = match mia_asr(
            model,
            self.federation.train(),
            test,
            &forget,
            self.config.seed_for("mia"),
        ) {
            Ok(r) => Some(r),
            Err(fucrt_core::Error::InsufficientData(msg)) => {
                warn!("membership attack skipped: {msg}");
                None
            }
            Err(e) => return Err(e.into()),
        };
        let empty = GlobalTs::default();
        let ts = self.output.global_ts.as_ref().unwrap_or(&empty);
        let merge = merge_diagnostic(model, test, &forget, ts)?;
        let comm = self
            .output
            .records
            .iter()
            .fold(CommBytes::default(), |acc, r| CommBytes {
                model_bytes: acc.model_bytes.max(r.comm.model_bytes),
                prototype_bytes: acc.prototype_bytes.max(r.comm.prototype_bytes),
                participants: acc.participants + r.comm.participants,
            });
        let total_bytes = self.output.records.iter().map(|r| r.comm.total()).sum();
        let prototype_bytes = if self.method == Method::Fucrt.name() {
            self.config.classes * self.config.rep_dim * 8
        } else {
            comm.prototype_bytes
        };
        let curve = self
            .output
            .records
            .iter()
            .map(|r| CurvePoint {
                comm_round: r.round + self.comm_offset,
                remaining_acc: r.remaining.accuracy,
                unlearning_acc: r.unlearning.accuracy,
            })
            .collect::<Vec<_>>();
        Ok(Summary {
            method: self.method.to_string(),
            variant: self.variant,
            seed: self.config.seed,
            forget,
            forget_source: if self.config.forget.is_some() {
                "list"
            } else {
                "proportion"
            }
            .into(),
            dims: model.dims(),
            param_count: model.param_count(),
            comm_rounds: curve.last().map_or(0, |p| p.comm_round),
            overall_accuracy: overall_accuracy(model, test)?,
            unlearning,
            remaining,
            mia,
            merge,
            global_ts: self.output.global_ts.clone(),
            comm: CommSummary {
                model_bytes: model.byte_size(),
                prototype_bytes,
                prototype_model_ratio: prototype_bytes as f64 / model.byte_size() as f64,
                total_bytes,
            },
            efficiency: self.efficiency,
            prototype_averaging: "present_clients".into(),
            curve,
        })
    }
}

/// Trains the original model and writes `model.bin`, `rounds.jsonl` and `summary.json`.
pub fn cmd_pretrain(config: &ExperimentConfig, execution: Execution) -> Result<Summary, CliError> {
    config.validate()?;
    let federation = config.federation()?.with_execution(execution);
    let dir = &config.out_dir;
    create_dir(dir)?;
    let train = TrainConfig {
        rounds: config.pretrain_rounds,
        lr: config.lr,
        batch_size: config.batch_size,
        seed: config.seed_for("init"),
        forget: config.forget_classes()?,
        grad_clip: None,
    };
    let mut sink = RoundSink::create(dir, config.checkpoint_every, 0)?;
    let output = federation.pretrain(&config.dims(), &train, &mut |r| sink.push(r))?;
    sink.finish()?;
    checkpoint::save(&output.model, &dir.join(MODEL_FILE))?;
    let summary = Finished {
        config,
        method: "pretrain",
        variant: "pretrain".into(),
        federation: &federation,
        output: &output,
        comm_offset: 0,
        efficiency: None,
    }
    .summary()?;
    summary.write(&dir.join(SUMMARY_FILE))?;
    Ok(summary)
}

fn load_origin(path: &Path, dims: &Dims) -> Result<ModelParams, CliError> {
    let model = checkpoint::load(path)?;
    if &model.dims() != dims {
        return Err(CliError::Artifact {
            path: path.to_path_buf(),
            detail: format!(
                "checkpoint dims {:?} do not match the config's {:?}",
                model.dims(),
                dims
            ),
        });
    }
    Ok(model)
}

/// Runs one unlearning method and writes its artifacts under the output directory.
pub fn cmd_unlearn(
    config: &ExperimentConfig,
    method: Method,
    origin: Option<&Path>,
    execution: Execution,
) -> Result<Summary, CliError> {
    config.validate()?;
    let forget = config.forget_classes()?;
    let dims = config.dims();
    let origin = match (method, origin) {
        (Method::FromScratch, _) => None,
        (_, Some(path)) => Some(load_origin(path, &dims)?),
        (_, None) => {
            return Err(CliError::Usage(format!(
                "--origin is required for {}",
                method.name()
            )))
        }
    };
    let federation = config.federation()?.with_execution(execution);
    let dir = &config.out_dir;
    create_dir(dir)?;

    let comm_offset = usize::from(method == Method::Fucrt);
    let mut sink = RoundSink::create(dir, config.checkpoint_every, comm_offset)?;
    let mut observer = |r: &RoundRecord| sink.push(r);
    let output = match method {
        Method::Fucrt => {
            let unlearn = UnlearnConfig {
                forget: forget.clone(),
                thresholds: config.thresholds(),
                loss: config.loss(),
                rounds: config.unlearn_rounds,
                lr: config.lr,
                batch_size: config.batch_size,
                seed: config.seed_for("unlearn"),
                strategy: config.strategy(),
                reassignment: config.reassignment(),
            };
            let origin = origin.as_ref().expect("loaded above");
            federation.run_fucrt(origin, &unlearn, &mut observer)?
        }
        baseline => {
            let (kind, rounds, lr, seed) = match baseline {
                Method::FromScratch => (
                    BaselineKind::FromScratch,
                    config.scratch_rounds(),
                    config.lr,
                    config.seed_for("init"),
                ),
                Method::FineTune => (
                    BaselineKind::FineTune,
                    config.unlearn_rounds,
                    config.lr,
                    config.seed_for("unlearn"),
                ),
                _ => (
                    BaselineKind::GradientAscent,
                    config.unlearn_rounds,
                    config.ascent_lr.unwrap_or(config.lr),
                    config.seed_for("unlearn"),
                ),
            };
            let train = TrainConfig {
                rounds,
                lr,
                batch_size: config.batch_size,
                seed,
                forget: forget.clone(),
                grad_clip: (kind == BaselineKind::GradientAscent)
                    .then_some(config.ascent_grad_clip)
                    .flatten(),
            };
            federation.run_baseline(kind, origin.as_ref(), &dims, &train, &mut observer)?
        }
    };
    sink.finish()?;
    checkpoint::save(&output.model, &dir.join(MODEL_FILE))?;

    if let Some(origin) = &origin {
        export_embeddings(origin, federation.train(), &dir.join(EMBEDDINGS_PRE))?;
    }
    let mut relabeled = federation.train().clone();
    if let Some(labels) = &output.final_labels {
        for (i, &y) in labels.iter().enumerate() {
            relabeled.set_label(i, y);
        }
    }
    export_embeddings(&output.model, &relabeled, &dir.join(EMBEDDINGS_POST))?;
    if let Some(ts) = &output.global_ts {
        let path = dir.join(GLOBAL_TS_FILE);
        let audit = serde_json::json!({
            "global": ts,
            "local_reports": output.local_reports,
            "strategy": config.strategy(),
        });
        std::fs::write(
            &path,
            serde_json::to_string_pretty(&audit).expect("json") + "\n",
        )
        .map_err(|e| CliError::io(&path, e))?;
    }

    let mut finished = Finished {
        config,
        method: method.name(),
        variant: variant(config, method),
        federation: &federation,
        output: &output,
        comm_offset,
        efficiency: None,
    };
    if let Some(reference_dir) = &config.scratch_reference {
        let reference = Summary::read(&reference_dir.join(SUMMARY_FILE))?;
        let curve: Vec<CurvePoint> = output
            .records
            .iter()
            .map(|r| CurvePoint {
                comm_round: r.round + comm_offset,
                remaining_acc: r.remaining.accuracy,
                unlearning_acc: r.unlearning.accuracy,
            })
            .collect();
        finished.efficiency = efficiency(&curve, &reference);
    }
    let summary = finished.summary()?;
    summary.write(&dir.join(SUMMARY_FILE))?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub run: String,
    pub variant: String,
    pub seed: u64,
    pub unlearning_acc: Option<f64>,
    pub unlearning_f1: Option<f64>,
    pub remaining_acc: Option<f64>,
    pub remaining_f1: Option<f64>,
    pub asr: Option<f64>,
    pub comm_rounds: usize,
    pub comm_bytes: usize,
    pub efficiency_ratio: Option<f64>,
}

pub const REPORT_COLUMNS: [&str; 11] = [
    "run",
    "variant",
    "seed",
    "unlearning_acc",
    "unlearning_f1",
    "remaining_acc",
    "remaining_f1",
    "asr",
    "comm_rounds",
    "comm_bytes",
    "efficiency_ratio",
];

/// Collects the summaries of `dirs`, ordered by directory name. Unreadable
/// summaries are skipped with a warning; it is an error only if none load.
///
/// Unlearning runs are compared against a `from_scratch` run with the same seed
/// and forget set when one is among the inputs.
pub fn cmd_report(dirs: &[PathBuf]) -> Result<Vec<ReportRow>, CliError> {
    let mut sorted: Vec<&PathBuf> = dirs.iter().collect();
    sorted.sort();
    let mut loaded = Vec::new();
    for dir in sorted {
        match Summary::read(&dir.join(SUMMARY_FILE)) {
            Ok(s) => loaded.push((dir, s)),
            Err(e) => warn!("skipping {}: {e}", dir.display()),
        }
    }
    if loaded.is_empty() {
        return Err(CliError::Usage(
            "no readable summary.json among the given runs".into(),
        ));
    }
    let rows = loaded
        .iter()
        .map(|(dir, s)| {
            let reference = loaded.iter().map(|(_, r)| r).find(|r| {
                r.method == Method::FromScratch.name() && r.seed == s.seed && r.forget == s.forget
            });
            let ratio = match (&s.efficiency, reference) {
                (Some(e), _) => e.ratio,
                (None, Some(r)) if s.method != r.method && s.method != "pretrain" => {
                    efficiency(&s.curve, r).and_then(|e| e.ratio)
                }
                _ => None,
            };
            ReportRow {
                run: dir
                    .file_name()
                    .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into()),
                variant: s.variant.clone(),
                seed: s.seed,
                unlearning_acc: s.unlearning.accuracy,
                unlearning_f1: s.unlearning.f1,
                remaining_acc: s.remaining.accuracy,
                remaining_f1: s.remaining.f1,
                asr: s.mia.as_ref().map(|m| m.asr),
                comm_rounds: s.comm_rounds,
                comm_bytes: s.comm.total_bytes,
                efficiency_ratio: ratio,
            }
        })
        .collect();
    Ok(rows)
}

fn cells(row: &ReportRow, precision: Option<usize>) -> Vec<String> {
    let num = |v: Option<f64>| match (v, precision) {
        (None, _) => String::new(),
        (Some(v), Some(p)) => format!("{v:.p$}"),
        (Some(v), None) => format!("{v}"),
    };
    vec![
        row.run.clone(),
        row.variant.clone(),
        row.seed.to_string(),
        num(row.unlearning_acc),
        num(row.unlearning_f1),
        num(row.remaining_acc),
        num(row.remaining_f1),
        num(row.asr),
        row.comm_rounds.to_string(),
        row.comm_bytes.to_string(),
        num(row.efficiency_ratio),
    ]
}

/// Column-aligned text table with two decimals.
pub fn render_table(rows: &[ReportRow]) -> String {
    let mut table: Vec<Vec<String>> = vec![REPORT_COLUMNS.iter().map(|c| c.to_string()).collect()];
    table.extend(rows.iter().map(|r| {
        cells(r, Some(2))
            .into_iter()
            .map(|c| if c.is_empty() { "-".into() } else { c })
            .collect()
    }));
    let widths: Vec<usize> = (0..REPORT_COLUMNS.len())
        .map(|i| table.iter().map(|r| r[i].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &table {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| {
                if i < 2 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Full-precision CSV; absent values are empty cells.
pub fn render_csv(rows: &[ReportRow]) -> String {
    let mut out = REPORT_COLUMNS.join(",") + "\n";
    for r in rows {
        let line: Vec<String> = cells(r, None).iter().map(|c| csv_field(c)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

fn split_csv_line(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', _) => quoted = !quoted,
            (',', false) => fields.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    fields.push(cur);
    fields
}

/// Inverse of [`render_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<ReportRow>, CliError> {
    let bad = |detail: String| CliError::Artifact {
        path: PathBuf::from(REPORT_CSV),
        detail,
    };
    let mut lines = text.lines();
    if lines.next() != Some(REPORT_COLUMNS.join(",").as_str()) {
        return Err(bad("unexpected header".into()));
    }
    lines
        .enumerate()
        .map(|(n, line)| {
            let f = split_csv_line(line);
            if f.len() != REPORT_COLUMNS.len() {
                return Err(bad(format!(
                    "line {}: expected {} fields",
                    n + 2,
                    REPORT_COLUMNS.len()
                )));
            }
            let opt = |s: &str| -> Result<Option<f64>, CliError> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse()
                        .map(Some)
                        .map_err(|_| bad(format!("line {}: bad number {s:?}", n + 2)))
                }
            };
            let int = |s: &str| -> Result<usize, CliError> {
                s.parse()
                    .map_err(|_| bad(format!("line {}: bad integer {s:?}", n + 2)))
            };
            Ok(ReportRow {
                run: f[0].clone(),
                variant: f[1].clone(),
                seed: f[2]
                    .parse()
                    .map_err(|_| bad(format!("line {}: bad seed", n + 2)))?,
                unlearning_acc: opt(&f[3])?,
                unlearning_f1: opt(&f[4])?,
                remaining_acc: opt(&f[5])?,
                remaining_f1: opt(&f[6])?,
                asr: opt(&f[7])?,
                comm_rounds: int(&f[8])?,
                comm_bytes: int(&f[9])?,
                efficiency_ratio: opt(&f[10])?,
            })
        })
        .collect()
}
