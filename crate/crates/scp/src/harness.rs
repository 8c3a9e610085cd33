//! Experiment orchestration: batch attacks over a dataset, report
//! aggregation, subset-size sweeps, cooperation histograms, and checkpoint
//! evaluation. The CLI binary is a thin argument layer over these functions.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{optimize_subset, AttackConfig, RoundRecord};
use crate::classifier::{Loss, PointClassifier};
use crate::error::{Error, Result};
use crate::metrics::{cooperation_stats, MetricBundle};
use crate::objective::ClassifierObjective;
use crate::pointset_io::{LoadedDataset, PointCloud, Split};
use crate::selection::{select, SelectionConfig};

/// Everything one batch run needs besides the model and the data.
#[derive(Debug, Clone)]
pub struct BatchOptions {
    pub selection: SelectionConfig,
    pub attack: AttackConfig,
    pub loss: Loss,
    /// Parallel sample workers; 1 keeps the run strictly sequential.
    pub workers: usize,
    /// Attack at most this many correctly-classified test samples.
    pub limit: Option<usize>,
    /// Tag for the report row; defaults to the selection mode name.
    pub method: Option<String>,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions {
            selection: SelectionConfig::default(),
            attack: AttackConfig::default(),
            loss: Loss::default(),
            workers: 1,
            limit: None,
            method: None,
        }
    }
}

/// One line of `results.jsonl`. Deliberately timing-free so reruns with the
/// same seeds produce byte-identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub label: usize,
    /// Selection mode tag the subset came from.
    pub mode: String,
    pub subset: Vec<usize>,
    /// Selection could not certify a seed point and fell back to the top
    /// gradient point.
    pub fallback: bool,
    /// Minimum eigenvalue of the seed point's own curvature block.
    pub init_lambda: Option<f64>,
    pub success: bool,
    /// Model's class for the returned (attacked) cloud.
    pub predicted: usize,
    pub weight_final: f64,
    pub rounds: Vec<RoundRecord>,
    pub metrics: MetricBundle,
    /// Displacements in subset order.
    pub delta: Vec<[f64; 3]>,
    /// Populated when this sample's pipeline failed; the batch keeps going.
    pub error: Option<String>,
}

/// One line of `report.csv`. Metric means are over successful attacks; the
/// wall-clock mean is over every attacked sample.
#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub method: String,
    pub asr_percent: f64,
    pub mean_chamfer: f64,
    pub mean_hausdorff: f64,
    pub mean_l2: f64,
    pub mean_emd: f64,
    pub mean_points_modified: f64,
    pub mean_seconds: f64,
}

impl ReportRow {
    pub const CSV_HEADER: &'static str =
        "method,asr_percent,mean_chamfer,mean_hausdorff,mean_l2,mean_emd,mean_points_modified,mean_seconds";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.method,
            self.asr_percent,
            self.mean_chamfer,
            self.mean_hausdorff,
            self.mean_l2,
            self.mean_emd,
            self.mean_points_modified,
            self.mean_seconds
        )
    }
}

#[derive(Debug, Clone)]
pub struct BatchSummary {
    pub records: Vec<SampleRecord>,
    /// Test samples the clean model already got wrong; never attacked and
    /// absent from the success-rate denominator.
    pub skipped_misclassified: usize,
    pub attacked: usize,
    pub successes: usize,
    pub report: ReportRow,
}

/// Test-split samples the clean model classifies correctly, in manifest
/// order, stopping once `limit` targets are gathered.
fn attack_targets(
    model: &PointClassifier,
    data: &LoadedDataset,
    limit: Option<usize>,
) -> Result<(Vec<usize>, usize)> {
    let mut targets = Vec::new();
    let mut skipped = 0usize;
    for idx in data.indices_of(Split::Test) {
        if limit.is_some_and(|l| targets.len() >= l) {
            break;
        }
        let cloud = &data.clouds[idx];
        if model.predict(&cloud.points)? == cloud.label as usize {
            targets.push(idx);
        } else {
            skipped += 1;
        }
    }
    Ok((targets, skipped))
}

fn failed_record(cloud: &PointCloud, opts: &BatchOptions, err: &Error) -> SampleRecord {
    SampleRecord {
        id: cloud.id.clone(),
        label: cloud.label as usize,
        mode: opts.selection.mode.name().to_string(),
        subset: Vec::new(),
        fallback: false,
        init_lambda: None,
        success: false,
        predicted: cloud.label as usize,
        weight_final: opts.attack.weight_init,
        rounds: Vec::new(),
        metrics: MetricBundle {
            chamfer: 0.0,
            hausdorff: 0.0,
            l2: 0.0,
            emd: 0.0,
            points_modified: 0,
        },
        delta: Vec::new(),
        error: Some(err.to_string()),
    }
}

fn try_attack(
    model: &PointClassifier,
    cloud: &PointCloud,
    opts: &BatchOptions,
) -> Result<SampleRecord> {
    let obj = ClassifierObjective::new(model, cloud, opts.loss)?;
    let subset = select(&obj, &opts.selection)?;
    let result = optimize_subset(&obj, &subset.indices, &opts.attack)?;
    let metrics = MetricBundle::compute(&cloud.points, &result.adv_points)?;
    let delta = subset.indices.iter().map(|&row| result.delta[row]).collect();
    Ok(SampleRecord {
        id: cloud.id.clone(),
        label: cloud.label as usize,
        mode: subset.mode.name().to_string(),
        subset: subset.indices,
        fallback: subset.fallback,
        init_lambda: subset.init_lambda,
        success: result.success,
        predicted: result.predicted,
        weight_final: result.weight_final,
        rounds: result.rounds,
        metrics,
        delta,
        error: None,
    })
}

/// Run the whole pipeline on one sample: objective, subset selection, joint
/// optimization, distortion metrics. A failure becomes an error record so
/// the batch never aborts.
fn attack_one(
    model: &PointClassifier,
    cloud: &PointCloud,
    opts: &BatchOptions,
) -> (SampleRecord, f64) {
    let started = Instant::now();
    let record = try_attack(model, cloud, opts)
        .unwrap_or_else(|err| failed_record(cloud, opts, &err));
    (record, started.elapsed().as_secs_f64())
}

/// Attack every correctly-classified test sample and aggregate a report row.
///
/// With `workers > 1`, samples fan out over a worker pool sharing the
/// read-only model; results are merged in input order, so the record order
/// never depends on the worker count.
pub fn run_attack_batch(
    model: &PointClassifier,
    data: &LoadedDataset,
    opts: &BatchOptions,
) -> Result<BatchSummary> {
    if opts.workers == 0 {
        return Err(Error::InvalidArgument("workers must be >= 1".into()));
    }
    let (targets, skipped_misclassified) = attack_targets(model, data, opts.limit)?;
    let outcomes: Vec<(SampleRecord, f64)> = if opts.workers == 1 {
        targets.iter().map(|&i| attack_one(model, &data.clouds[i], opts)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
        pool.install(|| {
            targets
                .par_iter()
                .map(|&i| attack_one(model, &data.clouds[i], opts))
                .collect()
        })
    };

    let attacked = outcomes.len();
    let mean_seconds = if attacked == 0 {
        0.0
    } else {
        outcomes.iter().map(|(_, s)| s).sum::<f64>() / attacked as f64
    };
    let records: Vec<SampleRecord> = outcomes.into_iter().map(|(r, _)| r).collect();
    let successes = records.iter().filter(|r| r.success).count();
    let mean_over_successes = |f: &dyn Fn(&SampleRecord) -> f64| -> f64 {
        if successes == 0 {
            f64::NAN
        } else {
            records.iter().filter(|r| r.success).map(|r| f(r)).sum::<f64>() / successes as f64
        }
    };
    let report = ReportRow {
        method: opts
            .method
            .clone()
            .unwrap_or_else(|| opts.selection.mode.name().to_string()),
        asr_percent: if attacked == 0 {
            0.0
        } else {
            100.0 * successes as f64 / attacked as f64
        },
        mean_chamfer: mean_over_successes(&|r| r.metrics.chamfer),
        mean_hausdorff: mean_over_successes(&|r| r.metrics.hausdorff),
        mean_l2: mean_over_successes(&|r| r.metrics.l2),
        mean_emd: mean_over_successes(&|r| r.metrics.emd),
        mean_points_modified: mean_over_successes(&|r| r.metrics.points_modified as f64),
        mean_seconds,
    };
    Ok(BatchSummary { records, skipped_misclassified, attacked, successes, report })
}

/// Rerun a batch at each subset-size cap, tagging rows `<mode>_t<size>`.
pub fn run_size_sweep(
    model: &PointClassifier,
    data: &LoadedDataset,
    base: &BatchOptions,
    sizes: &[usize],
) -> Result<Vec<(usize, BatchSummary)>> {
    if sizes.is_empty() {
        return Err(Error::InvalidArgument("empty size sweep".into()));
    }
    sizes
        .iter()
        .map(|&t| {
            let mut opts = base.clone();
            opts.selection.t_max = t;
            opts.method = Some(format!("{}_t{}", base.selection.mode.name(), t));
            run_attack_batch(model, data, &opts).map(|s| (t, s))
        })
        .collect()
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

/// Write records as JSON lines. The whole file is built in memory first so a
/// rerun with identical records yields identical bytes.
pub fn write_results(records: &[SampleRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::Json { path: path.to_path_buf(), source: e })?;
        out.push_str(&line);
        out.push('\n');
    }
    ensure_parent(path)?;
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_report(rows: &[ReportRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from(ReportRow::CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.csv_line());
        out.push('\n');
    }
    ensure_parent(path)?;
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Frequency of each partner-count value across all attacked subset points,
/// split by interaction direction. Index = count value, entry = how many
/// subset points had that many cooperative (resp. counteractive) partners.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoopHistogram {
    pub cooperative: Vec<u64>,
    pub counteractive: Vec<u64>,
}

impl CoopHistogram {
    fn bump(bins: &mut Vec<u64>, value: usize) {
        if bins.len() <= value {
            bins.resize(value + 1, 0);
        }
        bins[value] += 1;
    }

    /// Total (ordered) cooperative and counteractive pair counts.
    pub fn totals(&self) -> (u64, u64) {
        let weigh = |bins: &[u64]| {
            bins.iter().enumerate().map(|(value, &freq)| value as u64 * freq).sum()
        };
        (weigh(&self.cooperative), weigh(&self.counteractive))
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("count_value,cooperative_freq,counteractive_freq\n");
        let len = self.cooperative.len().max(self.counteractive.len());
        for value in 0..len {
            let coop = self.cooperative.get(value).copied().unwrap_or(0);
            let counter = self.counteractive.get(value).copied().unwrap_or(0);
            out.push_str(&format!("{value},{coop},{counter}\n"));
        }
        out
    }
}

/// Re-probe every successful record's subset for pairwise interaction
/// directions and histogram the per-point partner counts.
pub fn cooperation_histogram(
    model: &PointClassifier,
    data: &LoadedDataset,
    records: &[SampleRecord],
    loss: Loss,
    draws: usize,
    seed: u64,
) -> Result<CoopHistogram> {
    let by_id: HashMap<&str, usize> = data
        .clouds
        .iter()
        .enumerate()
        .map(|(i, c)| (c.id.as_str(), i))
        .collect();
    let mut hist = CoopHistogram::default();
    for record in records.iter().filter(|r| r.success && r.error.is_none()) {
        let &idx = by_id
            .get(record.id.as_str())
            .ok_or_else(|| Error::Manifest(format!("result id {:?} not in dataset", record.id)))?;
        let obj = ClassifierObjective::new(model, &data.clouds[idx], loss)?;
        let stats = cooperation_stats(&obj, &record.subset, &record.delta, draws, seed)?;
        for &count in &stats.cooperative {
            CoopHistogram::bump(&mut hist.cooperative, count);
        }
        for &count in &stats.counteractive {
            CoopHistogram::bump(&mut hist.counteractive, count);
        }
    }
    Ok(hist)
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// (class name, test samples, accuracy) per class.
    pub per_class_test: Vec<(String, usize, f64)>,
}

/// Accuracy of a checkpoint over both splits, broken down by class on test.
pub fn evaluate_model(model: &PointClassifier, data: &LoadedDataset) -> Result<EvalReport> {
    let train_accuracy = model.accuracy(data, Split::Train)?;
    let test_accuracy = model.accuracy(data, Split::Test)?;
    let classes = &data.manifest.classes;
    let mut totals = vec![0usize; classes.len()];
    let mut correct = vec![0usize; classes.len()];
    for idx in data.indices_of(Split::Test) {
        let cloud = &data.clouds[idx];
        let label = cloud.label as usize;
        totals[label] += 1;
        if model.predict(&cloud.points)? == label {
            correct[label] += 1;
        }
    }
    let per_class_test = classes
        .iter()
        .zip(totals.iter().zip(&correct))
        .map(|(name, (&total, &good))| {
            let acc = if total == 0 { f64::NAN } else { good as f64 / total as f64 };
            (name.clone(), total, acc)
        })
        .collect();
    Ok(EvalReport { train_accuracy, test_accuracy, per_class_test })
}
