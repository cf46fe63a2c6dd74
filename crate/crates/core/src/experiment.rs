//! Manifest-driven runs: simulate, featurize, train/evaluate, antenna sweeps and
//! the early/late control.
//!
//! Every stage writes into a content-addressed directory below `output_dir`
//! (`dataset-<hash>`, `features-<hash>`, ...), where the hash covers exactly the
//! settings that stage depends on. A stage whose directory already carries a
//! completion marker is not recomputed, so reruns of identical manifests are
//! cheap and produce byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{simulate_record, ActivityKind, SimConfig, SimulatedRecord};
use crate::classifier::{
    early_late_control, evaluate, save_checkpoint, split, train, ConfusionMatrix, LabeledDataset, TrainConfig,
};
use crate::cp::AlsConfig;
use crate::features::{assemble_input, extract_features, input_width, FeatureSet, FeatureTable, WindowStatus};
use crate::preprocess::{interpolate_lost_frames, segment};
use crate::rng::derive_seed;
use crate::{Error, Result};

const COMPLETE: &str = ".complete";

/// ALS settings shared by every window; the rank comes from the manifest's `r_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlsOptions {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for AlsOptions {
    fn default() -> Self {
        let d = AlsConfig::default();
        Self { max_iters: d.max_iters, rel_tol: d.rel_tol, seed: d.seed }
    }
}

/// Slow event-power ramp added to the records of some activities, to check
/// that the early/late control detects drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftInjection {
    pub activities: Vec<ActivityKind>,
    pub ramp_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub sim: SimConfig,
    pub t_w: usize,
    pub r_max: usize,
    #[serde(default)]
    pub als: AlsOptions,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_counts")]
    pub experiments_per_activity: BTreeMap<ActivityKind, usize>,
    #[serde(default = "default_sweep")]
    pub antenna_sweep: Vec<usize>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_true")]
    pub drop_largest: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftInjection>,
}

/// 36 static experiments and 18 per dynamic activity.
pub fn default_counts() -> BTreeMap<ActivityKind, usize> {
    ActivityKind::ALL.iter().map(|&k| (k, if k == ActivityKind::A1Static { 36 } else { 18 })).collect()
}

pub fn default_sweep() -> Vec<usize> {
    vec![3, 10, 25, 50, 75, 100]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_true() -> bool {
    true
}

impl ExperimentManifest {
    pub fn new(sim: SimConfig, t_w: usize, r_max: usize) -> Self {
        let full = sim.antennas;
        Self {
            sim,
            t_w,
            r_max,
            als: AlsOptions::default(),
            train: TrainConfig::default(),
            experiments_per_activity: default_counts(),
            antenna_sweep: default_sweep().into_iter().filter(|&m| m <= full).collect(),
            output_dir: default_output_dir(),
            drop_largest: true,
            drift: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.train.validate()?;
        self.als_config().validate()?;
        if self.t_w == 0 || self.t_w > self.sim.snapshots {
            return Err(Error::Config(format!("t_w must lie in 1..={}, got {}", self.sim.snapshots, self.t_w)));
        }
        if self.r_max < 1 + usize::from(self.drop_largest) {
            return Err(Error::Config("r_max leaves no features after dropping the largest weight".into()));
        }
        if self.antenna_sweep.windows(2).any(|w| w[0] >= w[1])
            || self.antenna_sweep.iter().any(|&m| m == 0 || m > self.sim.antennas)
        {
            return Err(Error::Config(format!(
                "antenna_sweep {:?} must be strictly increasing within 1..={}",
                self.antenna_sweep, self.sim.antennas
            )));
        }
        if self.experiments_per_activity.values().all(|&n| n == 0) {
            return Err(Error::Config("experiments_per_activity requests no records".into()));
        }
        Ok(())
    }

    pub fn als_config(&self) -> AlsConfig {
        AlsConfig { r_max: self.r_max, max_iters: self.als.max_iters, rel_tol: self.als.rel_tol, seed: self.als.seed }
    }

    /// `(activity, index within activity)` of every record in dataset order.
    pub fn record_plan(&self) -> Vec<(ActivityKind, usize)> {
        ActivityKind::ALL
            .iter()
            .flat_map(|&k| (0..self.experiments_per_activity.get(&k).copied().unwrap_or(0)).map(move |i| (k, i)))
            .collect()
    }

    /// Simulation settings of one record; its seed depends only on the manifest
    /// seed, the activity and the index within that activity. All records share
    /// the room seed.
    pub fn record_config(&self, kind: ActivityKind, index: usize) -> SimConfig {
        let mut cfg = self.sim.clone();
        cfg.seed = derive_seed(self.sim.seed, ((kind.label() as u64) << 32) | index as u64);
        // One room and one receiver for the whole campaign.
        cfg.room_seed.get_or_insert(self.sim.seed);
        if let Some(drift) = &self.drift {
            if drift.activities.contains(&kind) {
                cfg.event_ramp_db = Some(drift.ramp_db);
            }
        }
        cfg
    }

    pub fn windows_per_record(&self) -> usize {
        self.sim.snapshots / self.t_w
    }

    fn resolve_antennas(&self, antennas: Option<usize>) -> Option<usize> {
        antennas.filter(|&m| m != self.sim.antennas)
    }
}

fn short_hash<T: Serialize>(value: &T) -> Result<String> {
    let digest = Sha256::digest(serde_json::to_vec(value)?);
    let mut s = String::with_capacity(16);
    for b in &digest[..8] {
        let _ = write!(s, "{b:02x}");
    }
    Ok(s)
}

#[derive(Serialize)]
struct DatasetKey<'a> {
    sim: &'a SimConfig,
    counts: &'a BTreeMap<ActivityKind, usize>,
    drift: &'a Option<DriftInjection>,
}

#[derive(Serialize)]
struct FeatureKey {
    dataset: String,
    t_w: usize,
    als: AlsConfig,
    antennas: Option<usize>,
}

#[derive(Serialize)]
struct TrainKey<'a> {
    features: String,
    train: &'a TrainConfig,
    drop_largest: bool,
}

pub fn dataset_dir(m: &ExperimentManifest) -> Result<PathBuf> {
    let key = DatasetKey { sim: &m.sim, counts: &m.experiments_per_activity, drift: &m.drift };
    Ok(m.output_dir.join(format!("dataset-{}", short_hash(&key)?)))
}

/// Feature directory for the manifest's own dataset.
pub fn features_dir(m: &ExperimentManifest, antennas: Option<usize>) -> Result<PathBuf> {
    features_dir_for(&dataset_dir(m)?, m, antennas)
}

/// Stage directories are content-addressed, so their name identifies them.
fn dir_name(dataset: &Path) -> String {
    dataset.file_name().map_or_else(|| dataset.display().to_string(), |n| n.to_string_lossy().into_owned())
}

pub fn features_dir_for(dataset: &Path, m: &ExperimentManifest, antennas: Option<usize>) -> Result<PathBuf> {
    let key = FeatureKey {
        dataset: dir_name(dataset),
        t_w: m.t_w,
        als: m.als_config(),
        antennas: m.resolve_antennas(antennas),
    };
    Ok(m.output_dir.join(format!("features-{}", short_hash(&key)?)))
}

pub fn train_dir(m: &ExperimentManifest, antennas: Option<usize>) -> Result<PathBuf> {
    let key = TrainKey {
        features: dir_name(&features_dir(m, antennas)?),
        train: &m.train,
        drop_largest: m.drop_largest,
    };
    Ok(m.output_dir.join(format!("train-{}", short_hash(&key)?)))
}

fn is_complete(dir: &Path) -> bool {
    dir.join(COMPLETE).is_file()
}

fn mark_complete(dir: &Path) -> Result<()> {
    fs::write(dir.join(COMPLETE), b"")?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Maps `f` over `items`, in parallel when the `parallel` feature is on; the
/// output order always matches the input order.
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
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

pub fn record_stem(kind: ActivityKind, index: usize) -> String {
    format!("{}_{index:03}", kind.short_name())
}

/// Generates every record of the manifest in memory.
pub fn simulate_records(m: &ExperimentManifest) -> Result<Vec<SimulatedRecord>> {
    m.validate()?;
    par_map(&m.record_plan(), |&(kind, i)| simulate_record(&m.record_config(kind, i), kind))
        .into_iter()
        .collect()
}

/// Writes the dataset (one `.mmt3` + `.json` pair per record under `records/`)
/// and returns its directory.
pub fn cmd_simulate(m: &ExperimentManifest) -> Result<PathBuf> {
    m.validate()?;
    let dir = dataset_dir(m)?;
    if is_complete(&dir) {
        log::info!("dataset {} already complete", dir.display());
        return Ok(dir);
    }
    let records_dir = dir.join("records");
    fs::create_dir_all(&records_dir)?;
    let plan = m.record_plan();
    let results = par_map(&plan, |&(kind, i)| -> Result<()> {
        let rec = simulate_record(&m.record_config(kind, i), kind)?;
        rec.save(&records_dir, &record_stem(kind, i))
    });
    results.into_iter().collect::<Result<Vec<_>>>()?;
    write_json(&dir.join("manifest.json"), m)?;
    mark_complete(&dir)?;
    log::info!("wrote {} records to {}", plan.len(), dir.display());
    Ok(dir)
}

/// Per-window features of one record, in window order.
pub fn record_features(
    rec: &SimulatedRecord,
    m: &ExperimentManifest,
    antennas: Option<usize>,
) -> Result<Vec<FeatureSet>> {
    let tensor = match m.resolve_antennas(antennas) {
        Some(n) => rec.tensor.truncate_mode3(n)?,
        None => rec.tensor.clone(),
    };
    let repaired = interpolate_lost_frames(&tensor, &rec.mask)?;
    let windows = segment(&repaired, m.t_w, rec.label)?;
    let als = m.als_config();
    par_map(&windows.windows, |g| extract_features(g, &als)).into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub rows: usize,
    pub rows_per_class: BTreeMap<ActivityKind, usize>,
    pub k_count: usize,
    pub t_w: usize,
    pub r_max: usize,
    pub antennas: usize,
    pub input_width: usize,
    pub skipped_records: Vec<String>,
    pub invalid_windows: Vec<u64>,
    pub degenerate_windows: Vec<u64>,
}

/// Featurizes records given in dataset order. `None` entries are records that
/// could not be read; they are skipped, and more than 10 % of them is an error.
pub fn featurize_records(
    records: &[(String, Option<SimulatedRecord>)],
    m: &ExperimentManifest,
    antennas: Option<usize>,
) -> Result<(FeatureTable, FeatureSummary)> {
    m.validate()?;
    let k_count = m.windows_per_record();
    let skipped: Vec<String> = records.iter().filter(|(_, r)| r.is_none()).map(|(s, _)| s.clone()).collect();
    if skipped.len() * 10 > records.len() {
        return Err(Error::DegenerateDataset(format!(
            "{} of {} records unreadable (limit 10 %)",
            skipped.len(),
            records.len()
        )));
    }
    let mut rows = Vec::new();
    let mut invalid = Vec::new();
    let mut degenerate = Vec::new();
    let mut per_class: BTreeMap<ActivityKind, usize> = BTreeMap::new();
    let mut used_antennas = m.resolve_antennas(antennas).unwrap_or(m.sim.antennas);
    for (r, (stem, rec)) in records.iter().enumerate() {
        let Some(rec) = rec else { continue };
        if rec.tensor.dims()[0] != m.sim.snapshots {
            return Err(Error::DegenerateDataset(format!("{stem}: record length differs from the manifest")));
        }
        used_antennas = m.resolve_antennas(antennas).unwrap_or(rec.tensor.dims()[2]);
        for (k, mut fs) in record_features(rec, m, antennas)?.into_iter().enumerate() {
            fs.window_id = (r * k_count + k) as u64;
            fs.label = Some(rec.label);
            match fs.status {
                WindowStatus::Invalid => {
                    log::warn!("{stem}: window {k} excluded (decomposition failed)");
                    invalid.push(fs.window_id);
                    continue;
                }
                WindowStatus::Degenerate => degenerate.push(fs.window_id),
                WindowStatus::Valid => {}
            }
            *per_class.entry(rec.label).or_default() += 1;
            rows.push(fs);
        }
    }
    let summary = FeatureSummary {
        rows: rows.len(),
        rows_per_class: per_class,
        k_count,
        t_w: m.t_w,
        r_max: m.r_max,
        antennas: used_antennas,
        input_width: input_width(m.r_max, m.drop_largest),
        skipped_records: skipped,
        invalid_windows: invalid,
        degenerate_windows: degenerate,
    };
    Ok((FeatureTable { r_max: m.r_max, rows }, summary))
}

/// Record stems of a dataset directory in dataset order.
pub fn list_records(dataset: &Path) -> Result<Vec<String>> {
    let mut stems: Vec<String> = fs::read_dir(dataset.join("records"))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_suffix(".json").map(str::to_string)
        })
        .collect();
    stems.sort_by_key(|s| {
        let kind = ActivityKind::parse(s.split('_').next().unwrap_or("")).map_or(usize::MAX, |k| k.label());
        (kind, s.clone())
    });
    Ok(stems)
}

fn load_records(dataset: &Path) -> Result<Vec<(String, Option<SimulatedRecord>)>> {
    let dir = dataset.join("records");
    Ok(list_records(dataset)?
        .into_iter()
        .map(|stem| {
            let rec = SimulatedRecord::load(&dir, &stem)
                .inspect_err(|e| log::warn!("skipping record {stem}: {e}"))
                .ok();
            (stem, rec)
        })
        .collect())
}

/// Featurizes a dataset directory, optionally keeping only the first
/// `antennas` antennas; returns the feature directory.
pub fn cmd_featurize(dataset: &Path, m: &ExperimentManifest, antennas: Option<usize>) -> Result<PathBuf> {
    m.validate()?;
    if !dataset.join("records").is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} is not a dataset directory (run `simulate` first)", dataset.display()),
        )));
    }
    let dir = features_dir_for(dataset, m, antennas)?;
    if is_complete(&dir) {
        return Ok(dir);
    }
    let records = load_records(dataset)?;
    let (table, summary) = featurize_records(&records, m, antennas)?;
    fs::create_dir_all(&dir)?;
    table.save(&dir)?;
    write_json(&dir.join("summary.json"), &summary)?;
    mark_complete(&dir)?;
    log::info!("{} feature rows written to {}", table.rows.len(), dir.display());
    Ok(dir)
}

/// Network inputs of a feature table, labelled by activity.
pub fn table_dataset(table: &FeatureTable, drop_largest: bool) -> Result<LabeledDataset> {
    let mut inputs = Vec::with_capacity(table.rows.len());
    let mut labels = Vec::with_capacity(table.rows.len());
    let mut ids = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let label = row.label.ok_or_else(|| Error::contract(format!("window {} has no label", row.window_id)))?;
        inputs.push(assemble_input(row, drop_largest)?);
        labels.push(label.label());
        ids.push(row.window_id);
    }
    LabeledDataset::new(inputs, labels, ActivityKind::ALL.len(), ids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub activity: ActivityKind,
    pub test_count: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub accuracy: f64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
    pub loss_history: Vec<f64>,
}

/// Split, train and evaluate in memory.
pub fn train_eval_table(table: &FeatureTable, m: &ExperimentManifest) -> Result<(TrainReport, crate::classifier::MlpModel)> {
    let ds = table_dataset(table, m.drop_largest)?;
    let (train_set, test_set) = split(&ds, &m.train)?;
    let (model, history) = train(&train_set, &m.train)?;
    let cm = evaluate(&model, &test_set)?;
    let rows = cm.row_sums();
    let per_class = ActivityKind::ALL
        .iter()
        .map(|&k| ClassMetrics {
            activity: k,
            test_count: rows[k.label()],
            precision: cm.precision(k.label()),
            recall: cm.recall(k.label()),
        })
        .collect();
    let report = TrainReport {
        accuracy: cm.accuracy(),
        train_samples: train_set.len(),
        test_samples: test_set.len(),
        per_class,
        confusion: cm,
        loss_history: history,
    };
    Ok((report, model))
}

fn activity_names() -> Vec<&'static str> {
    ActivityKind::ALL.iter().map(|k| k.name()).collect()
}

/// Writes `report.json`, `confusion.csv`, `loss.csv` and `model.mmnn`.
pub fn cmd_train_eval(features: &Path, m: &ExperimentManifest) -> Result<PathBuf> {
    m.validate()?;
    let key = TrainKey { features: dir_name(features), train: &m.train, drop_largest: m.drop_largest };
    let dir = m.output_dir.join(format!("train-{}", short_hash(&key)?));
    if is_complete(&dir) {
        return Ok(dir);
    }
    let table = FeatureTable::load(features)?;
    let (report, model) = train_eval_table(&table, m)?;
    fs::create_dir_all(&dir)?;
    write_json(&dir.join("report.json"), &report)?;
    let mut cm = BufWriter::new(File::create(dir.join("confusion.csv"))?);
    report.confusion.write_csv(&mut cm, &activity_names())?;
    cm.flush()?;
    let mut loss = BufWriter::new(File::create(dir.join("loss.csv"))?);
    writeln!(loss, "epoch,mean_loss")?;
    for (e, l) in report.loss_history.iter().enumerate() {
        writeln!(loss, "{e},{l:e}")?;
    }
    loss.flush()?;
    save_checkpoint(&dir.join("model.mmnn"), &model, Some(&m.train))?;
    mark_complete(&dir)?;
    log::info!("accuracy {:.4} on {} test windows", report.accuracy, report.test_samples);
    Ok(dir)
}

pub fn read_report(train_dir: &Path) -> Result<TrainReport> {
    serde_json::from_slice(&fs::read(train_dir.join("report.json"))?)
        .map_err(|e| Error::Format(format!("{}: {e}", train_dir.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub antennas: usize,
    pub accuracy: f64,
}

/// For every `M` of the sweep: featurize with the first `M` antennas, train and
/// evaluate. Writes `sweep.csv` and returns the sweep directory.
pub fn cmd_sweep_antennas(dataset: &Path, m: &ExperimentManifest) -> Result<PathBuf> {
    m.validate()?;
    let mut rows = Vec::with_capacity(m.antenna_sweep.len());
    let mut parts = Vec::new();
    for &n in &m.antenna_sweep {
        let features = cmd_featurize(dataset, m, Some(n))?;
        let train = cmd_train_eval(&features, m)?;
        let report = read_report(&train)?;
        log::info!("M = {n}: accuracy {:.4}", report.accuracy);
        parts.push(dir_name(&train));
        rows.push(SweepRow { antennas: n, accuracy: report.accuracy });
    }
    let dir = m.output_dir.join(format!("sweep-{}", short_hash(&parts)?));
    fs::create_dir_all(&dir)?;
    let mut w = BufWriter::new(File::create(dir.join("sweep.csv"))?);
    writeln!(w, "antennas,accuracy")?;
    for r in &rows {
        writeln!(w, "{},{}", r.antennas, r.accuracy)?;
    }
    w.flush()?;
    write_json(&dir.join("sweep.json"), &rows)?;
    Ok(dir)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlRow {
    pub activity: ActivityKind,
    pub windows: usize,
    pub accuracy: f64,
    pub within_band: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlReport {
    pub band: [f64; 2],
    pub rows: Vec<ControlRow>,
    pub pass: bool,
}

pub const CONTROL_BAND: [f64; 2] = [0.35, 0.65];

/// Groups a feature table by record: `out[activity][record][k]` is the network
/// input of window `k`.
pub fn windows_by_record(
    table: &FeatureTable,
    k_count: usize,
    drop_largest: bool,
) -> Result<BTreeMap<ActivityKind, Vec<Vec<Vec<f64>>>>> {
    let mut grouped: BTreeMap<(ActivityKind, u64), Vec<(u64, Vec<f64>)>> = BTreeMap::new();
    for row in &table.rows {
        let label = row.label.ok_or_else(|| Error::contract("unlabelled window"))?;
        let record = row.window_id / k_count as u64;
        grouped.entry((label, record)).or_default().push((row.window_id, assemble_input(row, drop_largest)?));
    }
    let mut out: BTreeMap<ActivityKind, Vec<Vec<Vec<f64>>>> = BTreeMap::new();
    for ((label, _), mut windows) in grouped {
        // Records with excluded windows would break the early/late pairing.
        if windows.len() != k_count {
            continue;
        }
        windows.sort_by_key(|(id, _)| *id);
        out.entry(label).or_default().push(windows.into_iter().map(|(_, x)| x).collect());
    }
    Ok(out)
}

/// Early/late control per activity, in memory.
pub fn control_table(table: &FeatureTable, k_count: usize, m: &ExperimentManifest) -> Result<ControlReport> {
    let grouped = windows_by_record(table, k_count, m.drop_largest)?;
    let mut rows = Vec::new();
    for (activity, records) in &grouped {
        let accuracy = early_late_control(records, &m.train)?;
        let within_band = (CONTROL_BAND[0]..=CONTROL_BAND[1]).contains(&accuracy);
        rows.push(ControlRow { activity: *activity, windows: records.len() * k_count, accuracy, within_band });
    }
    if rows.is_empty() {
        return Err(Error::DegenerateDataset("no complete records for the early/late control".into()));
    }
    let pass = rows.iter().all(|r| r.within_band);
    Ok(ControlReport { band: CONTROL_BAND, rows, pass })
}

/// Writes `control.csv` and `control.json`; returns the directory.
pub fn cmd_control(dataset: &Path, m: &ExperimentManifest) -> Result<PathBuf> {
    m.validate()?;
    let features = cmd_featurize(dataset, m, None)?;
    let table = FeatureTable::load(&features)?;
    let report = control_table(&table, m.windows_per_record(), m)?;
    let key = TrainKey { features: dir_name(&features), train: &m.train, drop_largest: m.drop_largest };
    let dir = m.output_dir.join(format!("control-{}", short_hash(&key)?));
    fs::create_dir_all(&dir)?;
    let mut w = BufWriter::new(File::create(dir.join("control.csv"))?);
    writeln!(w, "activity,windows,accuracy,within_band")?;
    for r in &report.rows {
        writeln!(w, "{},{},{},{}", r.activity.name(), r.windows, r.accuracy, r.within_band)?;
    }
    writeln!(w, "verdict,,,{}", if report.pass { "pass" } else { "fail" })?;
    w.flush()?;
    write_json(&dir.join("control.json"), &report)?;
    for r in &report.rows {
        log::info!("{}: early/late accuracy {:.3}", r.activity.name(), r.accuracy);
    }
    Ok(dir)
}
