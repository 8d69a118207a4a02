//! End-to-end pipeline: train with per-epoch snapshots, measure test AUC,
//! explain every test instance with every method at every snapshot, compute
//! the agreement grid and correlate it with AUC across epochs.
//!
//! The pipeline is split into four stages (`train`, `explain`, `agree`,
//! `correlate`). Each stage reads its inputs from the files written by the
//! previous one, so running the stages one by one produces the same output
//! tree as a single [`run_experiment`] followed by [`emit_outputs`].
//!
//! Output tree:
//!
//! ```text
//! manifest.json            run description, config and input hashes
//! dataset.json             feature names, scaler, split indices
//! snapshots/epoch_NNNN.json
//! auc.csv                  epoch, test_auc, val_auc, train_loss
//! attributions.csv         epoch, instance_id, method, feature_name, score
//! results.csv              epoch, auc, metric, k, overall_mean
//! heatmaps/heatmap_<epoch>_<metric>_<k>.csv
//! boxplot.csv              per-instance pair values at the best epoch
//! correlations.csv         metric, k, rho, n_epochs, status
//! scatter.csv              metric, k, epoch, auc, mean_agreement
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agreement::{AgreementRecord, AgreementSummary, Metric, RankingGrid};
use crate::attribution::{self, AttributionConfig, AttributionVector, Method};
use crate::dataset::{self, DataSplits, Dataset, DatasetManifest, Scaler};
use crate::evaluation::{self, CorrelationReport, EpochPoint, RhoStatus};
use crate::model::{self, Architecture, EpochSnapshot, SnapshotFile, TrainingConfig};
use crate::{format_f64, parse_f64, Error, Result};

/// Maps `f` over `items`, in parallel when the `parallel` feature is on.
/// Output order always matches input order.
pub fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        n: usize,
        features: usize,
        separation: f64,
        /// Generator seed; defaults to the master seed.
        #[serde(default)]
        seed: Option<u64>,
    },
    /// The public student-performance table with its fixed recipe.
    Amrieh { path: PathBuf },
    Csv {
        path: PathBuf,
        target_column: String,
        positive_label: String,
        #[serde(default)]
        drop_columns: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeatmapEpochs {
    #[default]
    All,
    Best,
    None,
}

fn default_hidden() -> Vec<usize> {
    vec![16, 8]
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_metrics() -> Vec<Metric> {
    Metric::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default = "default_hidden")]
    pub hidden_dims: Vec<usize>,
    /// `training.seed` is replaced by the master seed.
    #[serde(default)]
    pub training: TrainingConfig,
    /// `attribution.rng_seed` is replaced by the master seed.
    #[serde(default)]
    pub attribution: AttributionConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    /// Inclusive `[min, max]`; defaults to `[1, K]`.
    #[serde(default)]
    pub k_range: Option<[usize; 2]>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub heatmaps: HeatmapEpochs,
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
    /// Worker threads for the explain stage; does not affect results.
    #[serde(default, skip_serializing)]
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn synthetic(n: usize, features: usize, separation: f64) -> Self {
        Self {
            dataset: DatasetSpec::Synthetic {
                n,
                features,
                separation,
                seed: None,
            },
            hidden_dims: default_hidden(),
            training: TrainingConfig::default(),
            attribution: AttributionConfig::default(),
            methods: default_methods(),
            metrics: default_metrics(),
            k_range: None,
            seed: 0,
            heatmaps: HeatmapEpochs::All,
            output_dir: None,
            threads: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| Error::Json {
            context: "experiment config".into(),
            source,
        })
    }

    /// Reads a config file; relative dataset paths are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        match &mut cfg.dataset {
            DatasetSpec::Amrieh { path } | DatasetSpec::Csv { path, .. } if path.is_relative() => {
                *path = base.join(&*path);
            }
            _ => {}
        }
        Ok(cfg)
    }

    /// Fills seeds from the master seed and checks static constraints.
    pub fn resolved(&self) -> Result<Self> {
        let mut cfg = self.clone();
        cfg.training.seed = cfg.seed;
        cfg.attribution.rng_seed = cfg.seed;
        if let DatasetSpec::Synthetic { seed, .. } = &mut cfg.dataset {
            seed.get_or_insert(self.seed);
        }
        if cfg.methods.is_empty() {
            return Err(Error::InvalidArgument("methods list is empty".into()));
        }
        if cfg.metrics.is_empty() {
            return Err(Error::InvalidArgument("metrics list is empty".into()));
        }
        let mut seen = cfg.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != cfg.methods.len() {
            return Err(Error::InvalidArgument("methods list has duplicates".into()));
        }
        cfg.metrics.sort();
        cfg.metrics.dedup();
        cfg.attribution.validate()?;
        Ok(cfg)
    }

    pub fn k_values(&self, k_features: usize) -> Result<Vec<usize>> {
        let [lo, hi] = self.k_range.unwrap_or([1, k_features]);
        if lo == 0 || lo > hi || hi > k_features {
            return Err(Error::InvalidArgument(format!(
                "k_range [{lo}, {hi}] must lie within [1, {k_features}]"
            )));
        }
        Ok((lo..=hi).collect())
    }

    /// Method order used everywhere downstream.
    pub fn sorted_methods(&self) -> Vec<Method> {
        let mut m = self.methods.clone();
        m.sort();
        m
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Standardized dataset plus the split it was fitted on.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub dataset: Dataset,
    pub splits: DataSplits,
    pub scaler: Scaler,
    pub manifest: DatasetManifest,
    pub input_hash: String,
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let (raw, source, input_hash) = match &cfg.dataset {
        DatasetSpec::Synthetic {
            n,
            features,
            separation,
            seed,
        } => {
            let seed = seed.unwrap_or(cfg.seed);
            let d = dataset::synthetic_blobs(*n, *features, *separation, seed)?;
            let desc = format!("synthetic_blobs(n={n}, k={features}, separation={separation}, seed={seed})");
            let hash = sha256_hex(desc.as_bytes());
            (d, desc, hash)
        }
        DatasetSpec::Amrieh { path } => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            let d = dataset::preprocess_amrieh(&dataset::parse_csv(&bytes)?)?;
            (d, format!("amrieh:{}", path.display()), sha256_hex(&bytes))
        }
        DatasetSpec::Csv {
            path,
            target_column,
            positive_label,
            drop_columns,
        } => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            let table = dataset::parse_csv(&bytes)?;
            let d = dataset::preprocess_generic(&table, target_column, positive_label, drop_columns)?;
            (d, format!("csv:{}", path.display()), sha256_hex(&bytes))
        }
    };
    let splits = dataset::make_splits(raw.n(), cfg.seed)?;
    let (dataset, scaler) = raw.standardized(&splits)?;
    let manifest = DatasetManifest {
        source,
        n: dataset.n(),
        feature_names: dataset.feature_names.clone(),
        positive_class_name: dataset.positive_class_name.clone(),
        means: scaler.means.clone(),
        stds: scaler.stds.clone(),
        splits: splits.clone(),
    };
    Ok(PreparedData {
        dataset,
        splits,
        scaler,
        manifest,
        input_hash,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochAuc {
    pub epoch: usize,
    pub test_auc: f64,
    pub val_auc: Option<f64>,
    pub train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub input_hash: String,
    pub seed: u64,
    pub n_features: usize,
    pub n_test_instances: usize,
    pub config: ExperimentConfig,
}

impl RunManifest {
    fn new(cfg: &ExperimentConfig, data: &PreparedData) -> Result<Self> {
        let config_json = serde_json::to_vec(cfg).map_err(|source| Error::Json {
            context: "config hash".into(),
            source,
        })?;
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: sha256_hex(&config_json),
            input_hash: data.input_hash.clone(),
            seed: cfg.seed,
            n_features: data.dataset.k(),
            n_test_instances: data.splits.test_idx.len(),
            config: cfg.clone(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub manifest: RunManifest,
    pub dataset: DatasetManifest,
    pub architecture: Architecture,
    pub snapshots: Vec<EpochSnapshot>,
    pub epochs: Vec<EpochAuc>,
    pub attributions: Vec<AttributionVector>,
    pub summaries: Vec<AgreementSummary>,
    /// Per-instance pair values at the best-AUC epoch.
    pub boxplot: Vec<AgreementRecord>,
    pub correlations: Vec<CorrelationReport>,
    pub notices: Vec<String>,
}

impl ExperimentReport {
    pub fn best_epoch(&self) -> Option<usize> {
        best_epoch(&self.epochs)
    }
}

/// Earliest epoch with the highest test AUC.
pub fn best_epoch(epochs: &[EpochAuc]) -> Option<usize> {
    epochs
        .iter()
        .fold(None::<&EpochAuc>, |best, e| match best {
            Some(b) if b.test_auc >= e.test_auc => Some(b),
            _ => Some(e),
        })
        .map(|e| e.epoch)
}

fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        return Ok(pool.install(f));
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(f())
}

pub fn train_stage(cfg: &ExperimentConfig, data: &PreparedData) -> Result<(Architecture, Vec<EpochSnapshot>, Vec<EpochAuc>)> {
    let arch = Architecture::new(data.dataset.k(), cfg.hidden_dims.clone())?;
    let snapshots = model::train(&data.dataset, &data.splits, &arch, &cfg.training)
        .map_err(|e| {
            let epoch = match &e {
                Error::Diverged { epoch, .. } => Some(*epoch),
                _ => None,
            };
            e.in_stage("train", epoch, None)
        })?;
    let epochs = test_aucs(data, &snapshots)?;
    Ok((arch, snapshots, epochs))
}

fn test_aucs(data: &PreparedData, snapshots: &[EpochSnapshot]) -> Result<Vec<EpochAuc>> {
    let x = data.dataset.features.select_rows(&data.splits.test_idx);
    let y = data.dataset.labels_at(&data.splits.test_idx);
    snapshots
        .iter()
        .map(|s| {
            let scores = model::predict_batch(&s.params, &x).map_err(|e| e.in_stage("predict", Some(s.epoch), None))?;
            let test_auc = evaluation::auc(&scores, &y).map_err(|e| e.in_stage("predict", Some(s.epoch), None))?;
            Ok(EpochAuc {
                epoch: s.epoch,
                test_auc,
                val_auc: s.val_auc,
                train_loss: s.train_loss,
            })
        })
        .collect()
}

pub fn explain_stage(cfg: &ExperimentConfig, data: &PreparedData, snapshots: &[EpochSnapshot]) -> Result<Vec<AttributionVector>> {
    let methods = cfg.sorted_methods();
    let test = &data.splits.test_idx;
    let mut tasks = Vec::with_capacity(snapshots.len() * test.len() * methods.len());
    for s in 0..snapshots.len() {
        for &i in test {
            tasks.extend(methods.iter().map(|&m| (s, i, m)));
        }
    }
    let results = with_threads(cfg.threads, || {
        par_map(&tasks, |&(s, i, m)| {
            let snap = &snapshots[s];
            attribution::explain(m, &snap.params, snap.epoch, data.dataset.features.row(i), i, &cfg.attribution)
                .map_err(|e| e.in_stage("explain", Some(snap.epoch), Some(i)))
        })
    })?;
    results.into_iter().collect()
}

/// Agreement summaries for every (epoch, metric, k), plus per-instance pair
/// values at `boxplot_epoch`.
pub fn agree_stage(
    cfg: &ExperimentConfig,
    attributions: &[AttributionVector],
    k_features: usize,
    boxplot_epoch: Option<usize>,
) -> Result<(Vec<AgreementSummary>, Vec<AgreementRecord>, Vec<String>)> {
    let mut notices = Vec::new();
    if cfg.methods.len() < 2 {
        notices.push(format!(
            "agreement stage skipped: {} method(s) selected, no method pairs to compare",
            cfg.methods.len()
        ));
        return Ok((Vec::new(), Vec::new(), notices));
    }
    let k_values = cfg.k_values(k_features)?;
    let mut by_epoch: BTreeMap<usize, Vec<AttributionVector>> = BTreeMap::new();
    for a in attributions {
        by_epoch.entry(a.epoch).or_default().push(a.clone());
    }
    if by_epoch.is_empty() {
        return Err(Error::MissingAttributions("no attribution vectors".into()));
    }
    let epochs: Vec<(usize, Vec<AttributionVector>)> = by_epoch.into_iter().collect();
    let per_epoch = with_threads(cfg.threads, || {
        par_map(&epochs, |(epoch, attrs)| -> Result<(Vec<AgreementSummary>, Vec<AgreementRecord>)> {
            let grid = RankingGrid::new(attrs).map_err(|e| e.in_stage("agree", Some(*epoch), None))?;
            if grid.methods.len() != cfg.methods.len() {
                return Err(Error::MissingAttributions(format!(
                    "epoch {epoch} has {} of {} methods",
                    grid.methods.len(),
                    cfg.methods.len()
                )));
            }
            let mut summaries = Vec::new();
            let mut records = Vec::new();
            for &metric in &cfg.metrics {
                for &k in &k_values {
                    summaries.push(grid.summary(metric, k)?);
                    if Some(*epoch) == boxplot_epoch {
                        records.extend(grid.records(metric, k)?);
                    }
                }
            }
            Ok((summaries, records))
        })
    })?;
    let mut summaries = Vec::new();
    let mut records = Vec::new();
    for r in per_epoch {
        let (s, b) = r?;
        summaries.extend(s);
        records.extend(b);
    }
    Ok((summaries, records, notices))
}

/// One row of `results.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResultRow {
    pub epoch: usize,
    pub auc: f64,
    pub metric: Metric,
    pub k: usize,
    pub overall_mean: f64,
}

fn result_rows(epochs: &[EpochAuc], summaries: &[AgreementSummary]) -> Result<Vec<ResultRow>> {
    let auc: BTreeMap<usize, f64> = epochs.iter().map(|e| (e.epoch, e.test_auc)).collect();
    summaries
        .iter()
        .map(|s| {
            Ok(ResultRow {
                epoch: s.epoch,
                auc: *auc
                    .get(&s.epoch)
                    .ok_or_else(|| Error::InvalidArgument(format!("no AUC recorded for epoch {}", s.epoch)))?,
                metric: s.metric,
                k: s.k,
                overall_mean: s.overall_mean,
            })
        })
        .collect()
}

pub fn correlate_stage(rows: &[ResultRow]) -> Vec<CorrelationReport> {
    let mut cells: BTreeMap<(Metric, usize), Vec<EpochPoint>> = BTreeMap::new();
    for r in rows {
        cells.entry((r.metric, r.k)).or_default().push(EpochPoint {
            epoch: r.epoch,
            auc: r.auc,
            mean_agreement: r.overall_mean,
        });
    }
    cells
        .into_iter()
        .map(|((metric, k), mut points)| {
            points.sort_by_key(|p| p.epoch);
            evaluation::correlate_agreement_auc(&points, metric, k).unwrap_or(CorrelationReport {
                metric,
                k,
                rho: None,
                status: RhoStatus::TooFewEpochs,
                points,
            })
        })
        .collect()
}

/// Runs every stage in memory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let cfg = cfg.resolved()?;
    let data = prepare_data(&cfg)?;
    let k_features = data.dataset.k();
    cfg.k_values(k_features)?;
    let manifest = RunManifest::new(&cfg, &data)?;
    let (architecture, snapshots, epochs) = train_stage(&cfg, &data)?;
    let attributions = explain_stage(&cfg, &data, &snapshots)?;
    let best = best_epoch(&epochs);
    let (summaries, boxplot, notices) = agree_stage(&cfg, &attributions, k_features, best)?;
    let correlations = correlate_stage(&result_rows(&epochs, &summaries)?);
    Ok(ExperimentReport {
        manifest,
        dataset: data.manifest,
        architecture,
        snapshots,
        epochs,
        attributions,
        summaries,
        boxplot,
        correlations,
        notices,
    })
}

// ---------------------------------------------------------------------------
// File output

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, missing: impl FnOnce() -> Error) -> Result<T> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(missing()),
        Err(e) => return Err(Error::io(path, e)),
    };
    serde_json::from_str(&text).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })
}

struct CsvOut {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl CsvOut {
    fn create(path: PathBuf, header: &[&str]) -> Result<Self> {
        let writer = csv::Writer::from_path(&path).map_err(|source| Error::Csv {
            context: path.display().to_string(),
            source,
        })?;
        let mut out = Self { path, writer };
        out.row(header)?;
        Ok(out)
    }

    fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).map_err(|source| Error::Csv {
            context: self.path.display().to_string(),
            source,
        })
    }

    fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn read_csv(path: &Path, missing: impl FnOnce() -> Error) -> Result<Vec<csv::StringRecord>> {
    let mut reader = match csv::Reader::from_path(path) {
        Ok(r) => r,
        Err(e) if matches!(e.kind(), csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound) => {
            return Err(missing())
        }
        Err(source) => {
            return Err(Error::Csv {
                context: path.display().to_string(),
                source,
            })
        }
    };
    reader
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|source| Error::Csv {
            context: path.display().to_string(),
            source,
        })
}

fn field<'a>(rec: &'a csv::StringRecord, i: usize, path: &Path) -> Result<&'a str> {
    rec.get(i)
        .ok_or_else(|| Error::Schema(format!("{}: row has no column {i}", path.display())))
}

fn float_field(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<f64> {
    let s = field(rec, i, path)?;
    parse_f64(s).ok_or_else(|| Error::Schema(format!("{}: '{s}' is not a number", path.display())))
}

fn int_field(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<usize> {
    let s = field(rec, i, path)?;
    s.parse()
        .map_err(|_| Error::Schema(format!("{}: '{s}' is not an integer", path.display())))
}

fn snapshot_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join("snapshots").join(format!("epoch_{epoch:04}.json"))
}

fn write_train_outputs(
    dir: &Path,
    manifest: &RunManifest,
    dataset: &DatasetManifest,
    arch: &Architecture,
    seed: u64,
    snapshots: &[EpochSnapshot],
    epochs: &[EpochAuc],
) -> Result<()> {
    create_dir(&dir.join("snapshots"))?;
    write_json(&dir.join("manifest.json"), manifest)?;
    write_json(&dir.join("dataset.json"), dataset)?;
    for s in snapshots {
        SnapshotFile::new(arch, seed, s).save(&snapshot_path(dir, s.epoch))?;
    }
    let mut out = CsvOut::create(dir.join("auc.csv"), &["epoch", "test_auc", "val_auc", "train_loss"])?;
    for e in epochs {
        out.row([
            e.epoch.to_string(),
            format_f64(e.test_auc),
            e.val_auc.map(format_f64).unwrap_or_default(),
            format_f64(e.train_loss),
        ])?;
    }
    out.finish()
}

fn write_attributions(dir: &Path, feature_names: &[String], attrs: &[AttributionVector]) -> Result<()> {
    let mut out = CsvOut::create(
        dir.join("attributions.csv"),
        &["epoch", "instance_id", "method", "feature_name", "score"],
    )?;
    for a in attrs {
        let epoch = a.epoch.to_string();
        let instance = a.instance_id.to_string();
        for (name, score) in feature_names.iter().zip(&a.scores) {
            out.row([epoch.as_str(), instance.as_str(), a.method.as_str(), name.as_str(), format_f64(*score).as_str()])?;
        }
    }
    out.finish()
}

fn write_agreement(
    dir: &Path,
    heatmaps: HeatmapEpochs,
    best: Option<usize>,
    rows: &[ResultRow],
    summaries: &[AgreementSummary],
    boxplot: &[AgreementRecord],
) -> Result<()> {
    let mut out = CsvOut::create(dir.join("results.csv"), &["epoch", "auc", "metric", "k", "overall_mean"])?;
    for r in rows {
        out.row([
            r.epoch.to_string(),
            format_f64(r.auc),
            r.metric.to_string(),
            r.k.to_string(),
            format_f64(r.overall_mean),
        ])?;
    }
    out.finish()?;

    let selected: Vec<&AgreementSummary> = match heatmaps {
        HeatmapEpochs::All => summaries.iter().collect(),
        HeatmapEpochs::Best => summaries.iter().filter(|s| Some(s.epoch) == best).collect(),
        HeatmapEpochs::None => Vec::new(),
    };
    if !selected.is_empty() {
        create_dir(&dir.join("heatmaps"))?;
    }
    for s in selected {
        let path = dir
            .join("heatmaps")
            .join(format!("heatmap_{}_{}_{}.csv", s.epoch, s.metric, s.k));
        let mut header = vec!["method"];
        header.extend(s.methods.iter().map(|m| m.as_str()));
        let mut out = CsvOut::create(path, &header)?;
        for (m, row) in s.methods.iter().zip(&s.pair_matrix) {
            let mut fields = vec![m.to_string()];
            fields.extend(row.iter().map(|v| format_f64(*v)));
            out.row(fields)?;
        }
        out.finish()?;
    }

    let mut out = CsvOut::create(
        dir.join("boxplot.csv"),
        &["epoch", "metric", "k", "pair", "instance_id", "value"],
    )?;
    for r in boxplot {
        out.row([
            r.epoch.to_string(),
            r.metric.to_string(),
            r.k.to_string(),
            format!("{}|{}", r.pair.0, r.pair.1),
            r.instance_id.to_string(),
            format_f64(r.value),
        ])?;
    }
    out.finish()
}

fn write_correlations(dir: &Path, reports: &[CorrelationReport]) -> Result<()> {
    let mut out = CsvOut::create(dir.join("correlations.csv"), &["metric", "k", "rho", "n_epochs", "status"])?;
    for r in reports {
        out.row([
            r.metric.to_string(),
            r.k.to_string(),
            r.rho.map(format_f64).unwrap_or_default(),
            r.points.len().to_string(),
            r.status.as_str().to_string(),
        ])?;
    }
    out.finish()?;
    let mut out = CsvOut::create(dir.join("scatter.csv"), &["metric", "k", "epoch", "auc", "mean_agreement"])?;
    for r in reports {
        for p in &r.points {
            out.row([
                r.metric.to_string(),
                r.k.to_string(),
                p.epoch.to_string(),
                format_f64(p.auc),
                format_f64(p.mean_agreement),
            ])?;
        }
    }
    out.finish()
}

/// Writes the complete output tree of a report.
pub fn emit_outputs(report: &ExperimentReport, out_dir: &Path) -> Result<()> {
    create_dir(out_dir)?;
    write_train_outputs(
        out_dir,
        &report.manifest,
        &report.dataset,
        &report.architecture,
        report.manifest.seed,
        &report.snapshots,
        &report.epochs,
    )?;
    write_attributions(out_dir, &report.dataset.feature_names, &report.attributions)?;
    if report.manifest.config.methods.len() >= 2 {
        let rows = result_rows(&report.epochs, &report.summaries)?;
        write_agreement(
            out_dir,
            report.manifest.config.heatmaps,
            report.best_epoch(),
            &rows,
            &report.summaries,
            &report.boxplot,
        )?;
        write_correlations(out_dir, &report.correlations)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Stage-wise execution over an output directory

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Train,
    Explain,
    Agree,
    Correlate,
}

/// Outcome of a stage, for reporting on the command line.
#[derive(Debug, Clone, Default)]
pub struct StageOutcome {
    pub notices: Vec<String>,
    pub correlations: Vec<CorrelationReport>,
}

fn load_snapshots(dir: &Path, epochs: &[EpochAuc]) -> Result<Vec<EpochSnapshot>> {
    epochs
        .iter()
        .map(|e| {
            let path = snapshot_path(dir, e.epoch);
            if !path.exists() {
                return Err(Error::InvalidArgument(format!(
                    "missing snapshot {}; run the train stage first",
                    path.display()
                )));
            }
            Ok(SnapshotFile::load(&path)?.into_snapshot())
        })
        .collect()
}

fn load_aucs(dir: &Path) -> Result<Vec<EpochAuc>> {
    let path = dir.join("auc.csv");
    let rows = read_csv(&path, || {
        Error::InvalidArgument(format!("missing {}; run the train stage first", path.display()))
    })?;
    rows.iter()
        .map(|r| {
            let val = field(r, 2, &path)?;
            Ok(EpochAuc {
                epoch: int_field(r, 0, &path)?,
                test_auc: float_field(r, 1, &path)?,
                val_auc: if val.is_empty() { None } else { Some(float_field(r, 2, &path)?) },
                train_loss: float_field(r, 3, &path)?,
            })
        })
        .collect()
}

fn load_attributions(dir: &Path, feature_names: &[String]) -> Result<Vec<AttributionVector>> {
    let path = dir.join("attributions.csv");
    let rows = read_csv(&path, || {
        Error::MissingAttributions(format!("{} not found; run the explain stage first", path.display()))
    })?;
    let position: BTreeMap<&str, usize> = feature_names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let k = feature_names.len();
    let mut out: Vec<AttributionVector> = Vec::new();
    let mut index: BTreeMap<(usize, usize, Method), usize> = BTreeMap::new();
    let mut filled: Vec<usize> = Vec::new();
    for r in &rows {
        let epoch = int_field(r, 0, &path)?;
        let instance_id = int_field(r, 1, &path)?;
        let method: Method = field(r, 2, &path)?.parse()?;
        let name = field(r, 3, &path)?;
        let j = *position
            .get(name)
            .ok_or_else(|| Error::Schema(format!("{}: unknown feature '{name}'", path.display())))?;
        let score = float_field(r, 4, &path)?;
        let slot = *index.entry((epoch, instance_id, method)).or_insert_with(|| {
            out.push(AttributionVector {
                scores: vec![f64::NAN; k],
                method,
                instance_id,
                epoch,
            });
            filled.push(0);
            out.len() - 1
        });
        out[slot].scores[j] = score;
        filled[slot] += 1;
    }
    if let Some(bad) = out.iter().zip(&filled).find(|(_, &f)| f != k) {
        return Err(Error::MissingAttributions(format!(
            "epoch {} instance {} method {} has {} of {k} features",
            bad.0.epoch, bad.0.instance_id, bad.0.method, bad.1
        )));
    }
    Ok(out)
}

fn load_results(dir: &Path) -> Result<Vec<ResultRow>> {
    let path = dir.join("results.csv");
    let rows = read_csv(&path, || {
        Error::InvalidArgument(format!("missing {}; run the agree stage first", path.display()))
    })?;
    rows.iter()
        .map(|r| {
            Ok(ResultRow {
                epoch: int_field(r, 0, &path)?,
                auc: float_field(r, 1, &path)?,
                metric: field(r, 2, &path)?.parse()?,
                k: int_field(r, 3, &path)?,
                overall_mean: float_field(r, 4, &path)?,
            })
        })
        .collect()
}

/// Data rebuilt from the config must match what the train stage recorded.
fn prepare_checked(cfg: &ExperimentConfig, dir: &Path) -> Result<PreparedData> {
    let data = prepare_data(cfg)?;
    let path = dir.join("dataset.json");
    let recorded: DatasetManifest = read_json(&path, || {
        Error::InvalidArgument(format!("missing {}; run the train stage first", path.display()))
    })?;
    if recorded != data.manifest {
        return Err(Error::InvalidArgument(format!(
            "{} does not match the dataset described by the config",
            path.display()
        )));
    }
    Ok(data)
}

/// Runs one stage, reading the previous stage's files from `dir`.
pub fn run_stage(stage: Stage, cfg: &ExperimentConfig, dir: &Path) -> Result<StageOutcome> {
    let cfg = cfg.resolved()?;
    create_dir(dir)?;
    let mut outcome = StageOutcome::default();
    match stage {
        Stage::Train => {
            let data = prepare_data(&cfg)?;
            cfg.k_values(data.dataset.k())?;
            let manifest = RunManifest::new(&cfg, &data)?;
            let (arch, snapshots, epochs) = train_stage(&cfg, &data)?;
            write_train_outputs(dir, &manifest, &data.manifest, &arch, cfg.seed, &snapshots, &epochs)?;
        }
        Stage::Explain => {
            let data = prepare_checked(&cfg, dir)?;
            let epochs = load_aucs(dir)?;
            let snapshots = load_snapshots(dir, &epochs)?;
            let attrs = explain_stage(&cfg, &data, &snapshots)?;
            write_attributions(dir, &data.manifest.feature_names, &attrs)?;
        }
        Stage::Agree => {
            let path = dir.join("dataset.json");
            let dataset: DatasetManifest = read_json(&path, || {
                Error::InvalidArgument(format!("missing {}; run the train stage first", path.display()))
            })?;
            let attrs = load_attributions(dir, &dataset.feature_names)?;
            let epochs = load_aucs(dir)?;
            let best = best_epoch(&epochs);
            let (summaries, boxplot, notices) = agree_stage(&cfg, &attrs, dataset.feature_names.len(), best)?;
            outcome.notices = notices;
            if cfg.methods.len() >= 2 {
                let rows = result_rows(&epochs, &summaries)?;
                write_agreement(dir, cfg.heatmaps, best, &rows, &summaries, &boxplot)?;
            }
        }
        Stage::Correlate => {
            if cfg.methods.len() < 2 {
                outcome
                    .notices
                    .push("correlation stage skipped: no method pairs".to_string());
                return Ok(outcome);
            }
            let rows = load_results(dir)?;
            let reports = correlate_stage(&rows);
            write_correlations(dir, &reports)?;
            outcome.correlations = reports;
        }
    }
    Ok(outcome)
}
