//! Experiment files, run orchestration and CSV output behind the `dslab`
//! binary.
//!
//! Value precedence, lowest first: built-in defaults, the experiment file,
//! `--set section.key=value` overrides, then the dedicated `--seed`,
//! `--method` and `--epochs` flags.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    ema_convergence_check, lagged_correlation, prediction_distance, stable_sample_report, track_trace,
};
use crate::data::{domain_shift, gaussian_blobs, make_ssl_split, read_csv, two_moons, AugmentPolicy, Dataset};
use crate::error::{Error, Result};
use crate::gradcheck::{run_suite, CheckResult, GradcheckOptions};
use crate::models::{load_checkpoint, save_checkpoint, weight_distance, MlpSpec};
use crate::numcore::RngState;
use crate::trainers::{run_domain_adaptation, train, Method, MetricsRow, RunResult, TrainConfig};

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "DSLAB_OUT";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RESOLVED_FILE: &str = "config.resolved";
pub const CHECKPOINT_DIR: &str = "checkpoints";

const DATA_STREAM: u64 = 0xDA7A;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    TwoMoons,
    Blobs,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub generator: Generator,
    /// Training rows (labeled + unlabeled), or source rows under domain adaptation.
    pub n_train: usize,
    pub n_test: usize,
    /// Labeled rows drawn from the training set.
    pub labels: usize,
    pub noise: f64,
    pub n_classes: usize,
    pub separation: f64,
    /// Seed for data generation; the run seed when absent.
    pub seed: Option<u64>,
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
    /// Feature count of CSV data (generators are 2-D).
    pub dim: usize,
    // domain adaptation: target = shifted draw of the same generator
    pub n_target: usize,
    pub shift_rotation: f64,
    pub shift_scale: f64,
    pub shift_translate: [f64; 2],
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            generator: Generator::TwoMoons,
            n_train: 504,
            n_test: 1000,
            labels: 4,
            noise: 0.1,
            n_classes: 2,
            separation: 3.0,
            seed: None,
            train_csv: None,
            test_csv: None,
            dim: 2,
            n_target: 500,
            shift_rotation: 0.6,
            shift_scale: 1.2,
            shift_translate: [0.0, 0.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub activation_slope: f64,
    pub dropout: f64,
    pub input_noise: f64,
    /// Hidden widths of the stronger student (imbalanced_student).
    pub strong_hidden: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden: vec![64, 64],
            activation_slope: 0.1,
            dropout: 0.0,
            input_noise: 0.0,
            strong_hidden: vec![128, 128],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub method: Method,
    pub lambda1: f64,
    pub lambda2: f64,
    pub xi: f64,
    pub alpha: f64,
    pub gamma0: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub labeled_per_batch: usize,
    pub ramp_epochs: usize,
    pub ramp_consistency: bool,
    pub weight_decay: f64,
    pub momentum: f64,
    pub seed: u64,
    pub slot: usize,
    pub n_students: usize,
    pub aug_noise: f64,
    pub aug_jitter: f64,
    pub track_sample: Option<usize>,
    pub adapt_with: Method,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            method: d.method,
            lambda1: d.lambda1,
            lambda2: d.lambda2,
            xi: d.xi,
            alpha: d.alpha,
            gamma0: d.gamma0,
            epochs: d.epochs,
            batch_size: d.batch_size,
            labeled_per_batch: d.labeled_per_batch,
            ramp_epochs: d.ramp_epochs,
            ramp_consistency: d.ramp_consistency,
            weight_decay: d.weight_decay,
            momentum: d.momentum,
            seed: d.seed,
            slot: d.slot,
            n_students: d.n_students,
            aug_noise: d.augment.noise_std,
            aug_jitter: d.augment.jitter,
            track_sample: d.track_sample,
            adapt_with: d.adapt_with,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    /// Threshold for stable reports; the training ξ when absent.
    pub xi: Option<f64>,
    /// Augmentation noise for stable reports; the training noise when absent.
    pub aug_noise: Option<f64>,
    /// Seed of the single augmentation draw in stable reports.
    pub seed: u64,
    pub ema_alpha: f64,
    pub ema_ratio: f64,
    pub ema_steps: usize,
    pub max_lag: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            xi: None,
            aug_noise: None,
            seed: 0,
            ema_alpha: 0.99,
            ema_ratio: 0.9,
            ema_steps: 2000,
            max_lag: 10,
        }
    }
}

/// A full experiment description; every key has a default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentFile {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub analysis: AnalysisSection,
}

/// Datasets for one run. Under domain adaptation `train` is the labeled
/// source and `target` the unlabeled shifted domain.
#[derive(Clone, Debug)]
pub struct RunData {
    pub train: Dataset,
    pub test: Dataset,
    pub target: Option<Dataset>,
}

fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key was just parsed"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl ExperimentFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    /// Reads `path`, applies `--set` overrides and the dedicated flags.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        // parse once for errors with line numbers
        Self::from_toml(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let mut table: toml::Table = toml::from_str(&text).map_err(|e| Error::config(e.to_string()))?;
        for set in &overrides.set {
            apply_override(&mut table, set)?;
        }
        let mut file: ExperimentFile = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(format!("after --set overrides: {}", e.message())))?;
        if let Some(seed) = overrides.seed {
            file.train.seed = seed;
        }
        if let Some(m) = overrides.method {
            file.train.method = m;
        }
        if let Some(e) = overrides.epochs {
            file.train.epochs = e;
        }
        Ok(file)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment files always serialize")
    }

    pub fn spec(&self) -> MlpSpec {
        self.spec_with(&self.model.hidden)
    }

    fn spec_with(&self, hidden: &[usize]) -> MlpSpec {
        let mut widths = vec![self.input_dim()];
        widths.extend_from_slice(hidden);
        widths.push(self.data.n_classes);
        MlpSpec {
            layer_widths: widths,
            activation_slope: self.model.activation_slope,
            dropout_p: self.model.dropout,
            input_noise_std: self.model.input_noise,
        }
    }

    fn input_dim(&self) -> usize {
        match self.data.generator {
            Generator::TwoMoons | Generator::Blobs => 2,
            Generator::Csv => self.data.dim,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            method: t.method,
            lambda1: t.lambda1,
            lambda2: t.lambda2,
            xi: t.xi,
            alpha: t.alpha,
            gamma0: t.gamma0,
            epochs: t.epochs,
            batch_size: t.batch_size,
            labeled_per_batch: t.labeled_per_batch,
            ramp_epochs: t.ramp_epochs,
            ramp_consistency: t.ramp_consistency,
            weight_decay: t.weight_decay,
            momentum: t.momentum,
            seed: t.seed,
            slot: t.slot,
            spec: self.spec(),
            strong_spec: Some(self.spec_with(&self.model.strong_hidden)),
            n_students: t.n_students,
            augment: AugmentPolicy {
                noise_std: t.aug_noise,
                jitter: t.aug_jitter,
            },
            track_sample: t.track_sample,
            adapt_with: t.adapt_with,
            run_id: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn generate(&self, m: usize, rng: &mut RngState) -> Result<Dataset> {
        let d = &self.data;
        match d.generator {
            Generator::TwoMoons => {
                if d.n_classes != 2 {
                    return Err(Error::config("two_moons has exactly 2 classes; set data.n_classes = 2"));
                }
                two_moons(m, d.noise, rng)
            }
            Generator::Blobs => gaussian_blobs(m, d.n_classes, d.separation, rng),
            Generator::Csv => Err(Error::config("csv data cannot be generated")),
        }
    }

    /// Builds the datasets deterministically from the data seed.
    pub fn datasets(&self) -> Result<RunData> {
        let d = &self.data;
        let root = RngState::new(d.seed.unwrap_or(self.train.seed)).fork(&[DATA_STREAM]);
        let adapt = self.train.method == Method::DomainAdapt;
        if d.generator == Generator::Csv {
            let (Some(tr), Some(te)) = (&d.train_csv, &d.test_csv) else {
                return Err(Error::config("csv generator needs data.train_csv and data.test_csv"));
            };
            let train = read_csv(tr, Some(d.n_classes))?;
            let test = read_csv(te, Some(d.n_classes))?;
            return Ok(RunData { train, test, target: None });
        }
        let full = self.generate(d.n_train, &mut root.fork(&[1]))?;
        if adapt {
            let shift = |ds: &Dataset| domain_shift(ds, d.shift_rotation, d.shift_scale, d.shift_translate);
            let target = shift(&self.generate(d.n_target, &mut root.fork(&[3]))?)?;
            let test = shift(&self.generate(d.n_test, &mut root.fork(&[4]))?)?;
            return Ok(RunData {
                train: full.with_all_labeled(true),
                test,
                target: Some(target),
            });
        }
        let train = make_ssl_split(&full, d.labels, &mut root.fork(&[2]))?;
        let test = self.generate(d.n_test, &mut root.fork(&[4]))?;
        Ok(RunData {
            train,
            test,
            target: None,
        })
    }

    /// Trains according to the file; `run_id` names the run in metrics.
    pub fn run(&self, run_id: Option<String>) -> Result<(RunResult, RunData)> {
        let mut cfg = self.train_config()?;
        cfg.run_id = run_id;
        let data = self.datasets()?;
        let result = if cfg.method == Method::DomainAdapt {
            run_domain_adaptation(&cfg, &data.train, data.target.as_ref(), &data.test)?
        } else {
            train(&cfg, &data.train, &data.test)?
        };
        Ok((result, data))
    }
}

pub fn apply_override(table: &mut toml::Table, set: &str) -> Result<()> {
    let bad = || Error::config(format!("--set expects section.key=value, got {set:?}"));
    let (path, raw) = set.split_once('=').ok_or_else(bad)?;
    let (section, key) = path.trim().split_once('.').ok_or_else(bad)?;
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let sec = entry
        .as_table_mut()
        .ok_or_else(|| Error::config(format!("{section} is not a section")))?;
    sec.insert(key.to_string(), parse_value(raw.trim()));
    Ok(())
}

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub set: Vec<String>,
    pub seed: Option<u64>,
    pub method: Option<Method>,
    pub epochs: Option<usize>,
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let io = |e| csv_err(path, e);
    w.write_record(["run_id", "method", "seed", "epoch", "metric", "value"])
        .map_err(io)?;
    for r in rows {
        w.write_record([
            r.run_id.as_str(),
            r.method.as_str(),
            &r.seed.to_string(),
            &r.epoch.to_string(),
            r.metric.as_str(),
            &fmt_f64(r.value),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = || Error::input(format!("{}: malformed metrics row {}", path.display(), i + 2));
        if rec.len() != 6 {
            return Err(bad());
        }
        rows.push(MetricsRow {
            run_id: rec[0].to_string(),
            method: rec[1].to_string(),
            seed: rec[2].parse().map_err(|_| bad())?,
            epoch: rec[3].parse().map_err(|_| bad())?,
            metric: rec[4].to_string(),
            value: rec[5].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::input(format!("{}: {e}", path.display()))
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Default output root: `$DSLAB_OUT`, else `runs`.
pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn run_id_for(file: &ExperimentFile) -> String {
    format!("{}-seed{}", file.train.method.name(), file.train.seed)
}

/// Writes metrics, the resolved config and final checkpoints into `out`.
pub fn write_run(out: &Path, file: &ExperimentFile, result: &RunResult) -> Result<()> {
    create_dir(out)?;
    write_file(&out.join(RESOLVED_FILE), &file.to_toml())?;
    write_metrics(&out.join(METRICS_FILE), &result.metrics)?;
    let ck = out.join(CHECKPOINT_DIR);
    create_dir(&ck)?;
    for m in &result.models {
        save_checkpoint(&ck.join(format!("{}.ckpt", m.name)), &m.spec, &m.params)?;
    }
    Ok(())
}

pub fn cmd_train(file: &ExperimentFile, out: &Path) -> Result<RunResult> {
    let (result, _) = file.run(Some(run_id_for(file)))?;
    write_run(out, file, &result)?;
    Ok(result)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub runs: usize,
    pub mean: f64,
    pub std: f64,
}

/// Sample mean and standard deviation (0 for a single run).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn safe_component(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

/// One run per `(value, seed)` under `out/<key>=<value>/seed<seed>`, then
/// `out/summary.csv` with the mean and standard deviation of final test
/// accuracy per value.
pub fn cmd_sweep(
    base: &ExperimentFile,
    key: &str,
    values: &[String],
    seeds: &[u64],
    jobs: usize,
    out: &Path,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    if seeds.is_empty() {
        return Err(Error::config("sweep needs at least one seed"));
    }
    let mut members = Vec::new();
    for v in values {
        let mut table: toml::Table = toml::from_str(&base.to_toml()).expect("resolved config parses");
        apply_override(&mut table, &format!("{key}={v}"))?;
        let file: ExperimentFile = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(format!("sweep {key}={v}: {}", e.message())))?;
        for &s in seeds {
            let mut f = file.clone();
            f.train.seed = s;
            f.train_config()?;
            members.push((v.clone(), s, f));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    let finals: Vec<f64> = pool.install(|| {
        members
            .par_iter()
            .map(|(v, s, f)| {
                let dir = out.join(format!("{}={}", safe_component(key), safe_component(v))).join(format!("seed{s}"));
                let id = format!("{key}={v}-seed{s}");
                let (result, _) = f.run(Some(id))?;
                write_run(&dir, f, &result)?;
                Ok(result.final_accuracy())
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let rows: Vec<SweepRow> = values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let accs = &finals[i * seeds.len()..(i + 1) * seeds.len()];
            let (mean, std) = mean_std(accs);
            SweepRow {
                value: v.clone(),
                runs: accs.len(),
                mean,
                std,
            }
        })
        .collect();
    create_dir(out)?;
    let path = out.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record(["key", "value", "runs", "mean_test_acc", "std_test_acc"])
        .map_err(|e| csv_err(&path, e))?;
    for r in &rows {
        w.write_record([key, &r.value, &r.runs.to_string(), &fmt_f64(r.mean), &fmt_f64(r.std)])
            .map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

/// Runs the finite-difference suite and writes `gradcheck.csv`. Returns a
/// numeric error naming every failing case.
pub fn cmd_gradcheck(out: &Path, opts: &GradcheckOptions) -> Result<Vec<CheckResult>> {
    let results = run_suite(opts)?;
    create_dir(out)?;
    let path = out.join("gradcheck.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record(["case", "kind", "entries", "max_rel_error", "threshold", "passed"])
        .map_err(|e| csv_err(&path, e))?;
    for r in &results {
        w.write_record([
            r.name.as_str(),
            r.kind.name(),
            &r.entries.to_string(),
            &fmt_f64(r.max_rel_error),
            &fmt_f64(r.threshold),
            if r.passed() { "true" } else { "false" },
        ])
        .map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("{} ({:.3e} >= {:.0e})", r.name, r.max_rel_error, r.threshold))
        .collect();
    if !failed.is_empty() {
        return Err(Error::Gradcheck(failed.join(", ")));
    }
    Ok(results)
}

pub const ANALYSES: [&str; 4] = ["stable-report", "ema-check", "coupling", "track"];

#[derive(Clone, Debug, Default)]
pub struct AnalyzeArgs {
    pub runs: Vec<PathBuf>,
    pub out: Option<PathBuf>,
    pub xi: Option<f64>,
    pub alpha: Option<f64>,
    pub ratio: Option<f64>,
    pub steps: Option<usize>,
}

/// A finished run directory.
pub struct RunDir {
    pub path: PathBuf,
    pub file: ExperimentFile,
    pub metrics: Vec<MetricsRow>,
}

impl RunDir {
    pub fn open(path: &Path) -> Result<Self> {
        let file = ExperimentFile::load(&path.join(RESOLVED_FILE), &Overrides::default())?;
        let metrics = read_metrics(&path.join(METRICS_FILE))?;
        Ok(RunDir {
            path: path.to_path_buf(),
            file,
            metrics,
        })
    }

    /// Names of the stored checkpoints, sorted.
    pub fn models(&self) -> Result<Vec<String>> {
        let dir = self.path.join(CHECKPOINT_DIR);
        let mut names: Vec<String> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str()?.strip_suffix(".ckpt").map(String::from))
            .collect();
        names.sort();
        Ok(names)
    }

    pub fn checkpoint(&self, model: &str) -> Result<(MlpSpec, crate::models::ModelParams)> {
        load_checkpoint(&self.path.join(CHECKPOINT_DIR).join(format!("{model}.ckpt")))
    }

    fn run_id(&self) -> String {
        self.metrics.first().map_or_else(|| run_id_for(&self.file), |r| r.run_id.clone())
    }

    fn final_epoch(&self) -> usize {
        self.metrics.iter().map(|r| r.epoch).max().unwrap_or(0)
    }

    fn row(&self, run_id: String, metric: impl Into<String>, value: f64) -> MetricsRow {
        MetricsRow {
            run_id,
            method: self.file.train.method.name().into(),
            seed: self.file.train.seed,
            epoch: self.final_epoch(),
            metric: metric.into(),
            value,
        }
    }
}

/// Dispatches an analysis by name and returns the CSV path written.
pub fn cmd_analyze(name: &str, args: &AnalyzeArgs) -> Result<PathBuf> {
    let first_run = || {
        args.runs
            .first()
            .ok_or_else(|| Error::config(format!("{name} needs --run DIR")))
    };
    let out_dir = |default: &Path| args.out.clone().unwrap_or_else(|| default.to_path_buf());
    match name {
        "stable-report" => {
            let run = RunDir::open(first_run()?)?;
            let data = run.file.datasets()?;
            let xi = args.xi.or(run.file.analysis.xi).unwrap_or(run.file.train.xi);
            let policy = AugmentPolicy {
                noise_std: run.file.analysis.aug_noise.unwrap_or(run.file.train.aug_noise),
                jitter: run.file.train.aug_jitter,
            };
            let mut rows = Vec::new();
            for model in run.models()? {
                let (spec, params) = run.checkpoint(&model)?;
                let mut rng = RngState::new(run.file.analysis.seed);
                let rep = stable_sample_report(&params, &spec, &data.test, xi, &policy, &mut rng)?;
                let id = format!("{}:{model}", run.run_id());
                rows.push(run.row(id.clone(), "stable_ratio", rep.stable_ratio));
                rows.push(run.row(id.clone(), "acc_all", rep.acc_all));
                rows.push(run.row(id.clone(), "acc_stable", rep.acc_stable.unwrap_or(f64::NAN)));
                for c in &rep.per_class {
                    let k = c.class;
                    rows.push(run.row(id.clone(), format!("stable_ratio_class{k}"), c.stable as f64 / c.count.max(1) as f64));
                    rows.push(run.row(id.clone(), format!("acc_all_class{k}"), c.acc_all));
                    rows.push(run.row(id.clone(), format!("acc_stable_class{k}"), c.acc_stable.unwrap_or(f64::NAN)));
                }
            }
            let dir = out_dir(&run.path);
            create_dir(&dir)?;
            let path = dir.join("stable_report.csv");
            write_metrics(&path, &rows)?;
            Ok(path)
        }
        "ema-check" => {
            let a = AnalysisSection::default();
            let alpha = args.alpha.unwrap_or(a.ema_alpha);
            let ratio = args.ratio.unwrap_or(a.ema_ratio);
            let steps = args.steps.unwrap_or(a.ema_steps);
            let seq: Vec<f64> = (1..=steps).map(|t| ratio.powi(t as i32)).collect();
            let check = ema_convergence_check(&seq, alpha, 1.0, 0.0)?;
            let dir = out_dir(&default_out_root());
            create_dir(&dir)?;
            let path = dir.join("ema_check.csv");
            let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
            w.write_record(["step", "sequence", "ema", "gap"]).map_err(|e| csv_err(&path, e))?;
            for t in 0..check.values.len() {
                let s = if t == 0 { 1.0 } else { seq[t - 1] };
                w.write_record([&t.to_string(), &fmt_f64(s), &fmt_f64(check.values[t]), &fmt_f64(check.gaps[t])])
                    .map_err(|e| csv_err(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            Ok(path)
        }
        "coupling" => {
            let runs = args.runs.iter().map(|p| RunDir::open(p)).collect::<Result<Vec<_>>>()?;
            if runs.is_empty() {
                return Err(Error::config("coupling needs at least one --run DIR"));
            }
            let mut rows: Vec<MetricsRow> = runs
                .iter()
                .flat_map(|r| {
                    r.metrics
                        .iter()
                        .filter(|m| m.metric == "weight_dist" || m.metric == "pred_dist")
                        .cloned()
                })
                .collect();
            // final models across each consecutive pair of runs
            for pair in runs.windows(2) {
                let (a, b) = (&pair[0], &pair[1]);
                let (ma, mb) = (&a.models()?[0], &b.models()?[0]);
                let (sa, pa) = a.checkpoint(ma)?;
                let (sb, pb) = b.checkpoint(mb)?;
                let data = a.file.datasets()?;
                let id = format!("{}:{ma}|{}:{mb}", a.run_id(), b.run_id());
                if pa.same_shapes(&pb) {
                    rows.push(a.row(id.clone(), "weight_dist", weight_distance(&pa, &pb)?));
                }
                rows.push(a.row(id, "pred_dist", prediction_distance(&pa, &sa, &pb, &sb, &data.test)?));
            }
            let dir = out_dir(&runs[0].path);
            create_dir(&dir)?;
            let path = dir.join("coupling.csv");
            write_metrics(&path, &rows)?;
            Ok(path)
        }
        "track" => {
            let run = RunDir::open(first_run()?)?;
            let result = RunResult {
                run_id: run.run_id(),
                method: run.file.train.method,
                seed: run.file.train.seed,
                metrics: run.metrics.clone(),
                models: Vec::new(),
                stable_ratio_trace: Vec::new(),
                steps_per_epoch: 0,
                sta_terms: Vec::new(),
            };
            let mut rows: Vec<MetricsRow> = run
                .metrics
                .iter()
                .filter(|m| m.metric.starts_with("track_p_true"))
                .cloned()
                .collect();
            if rows.is_empty() {
                return Err(Error::input(format!(
                    "{} has no tracked sample; set train.track_sample",
                    run.path.display()
                )));
            }
            if run.file.train.method == Method::MeanTeacher {
                let teacher = track_trace(&result, "teacher")?;
                let student = track_trace(&result, &format!("s{}", run.file.train.slot))?;
                let lag = run.file.analysis.max_lag.min(teacher.len().saturating_sub(2));
                for (k, c) in lagged_correlation(&teacher, &student, lag)?.into_iter().enumerate() {
                    rows.push(MetricsRow {
                        epoch: k,
                        ..run.row(result.run_id.clone(), "lag_corr_teacher_student", c)
                    });
                }
            }
            let dir = out_dir(&run.path);
            create_dir(&dir)?;
            let path = dir.join("track.csv");
            write_metrics(&path, &rows)?;
            Ok(path)
        }
        other => Err(Error::config(format!(
            "unknown analysis {other:?}; valid names: {}",
            ANALYSES.join(", ")
        ))),
    }
}

/// Parses `"0-4"` (inclusive) or `"0,3,7"`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::config(format!("cannot parse seeds {s:?}; use 0-4 or 0,1,2"));
    if let Some((a, b)) = s.split_once('-') {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if b < a {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse().map_err(|_| bad()))
        .collect()
}
