//! Offline/online evaluation of learned and classical imputers over a list
//! of missing-data scenarios.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::baselines::{baseline_knn, baseline_linear};
use super::metrics::rmse_mae;
use crate::data::{split_index, synthesize_dataset, window_split, SynthConfig, TrafficDataset};
use crate::error::{PastError, Result};
use crate::masking::{MaskMatrix, ScenarioConfig};
use crate::model::{PastConfig, PastModel, TrainConfig, TrainHistory, Variant};
use crate::numcore::NumArray;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Past,
    PastWoCgm,
    PastWoGim,
    Linear,
    Knn,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Past => "past",
            Method::PastWoCgm => "past_wo_cgm",
            Method::PastWoGim => "past_wo_gim",
            Method::Linear => "linear",
            Method::Knn => "knn",
        }
    }

    pub fn variant(self) -> Option<Variant> {
        match self {
            Method::Past => Some(Variant::Full),
            Method::PastWoCgm => Some(Variant::WithoutCgm),
            Method::PastWoGim => Some(Variant::WithoutGim),
            Method::Linear | Method::Knn => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Offline scores the training span, online the held-out span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Offline,
    Online,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Setting::Offline => "offline",
            Setting::Online => "online",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic(SynthConfig),
    Files { values: PathBuf, graph: PathBuf },
}

impl DatasetSpec {
    pub fn load(&self) -> Result<TrafficDataset> {
        match self {
            DatasetSpec::Synthetic(cfg) => synthesize_dataset(cfg),
            DatasetSpec::Files { values, graph } => TrafficDataset::from_files(values, graph),
        }
    }
}

fn default_stride() -> usize {
    24
}

fn default_fraction() -> f64 {
    0.8
}

fn default_k() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub downsample_minutes: Option<u32>,
    pub scenarios: Vec<ScenarioConfig>,
    pub methods: Vec<Method>,
    /// `n_nodes` and `variant` are filled in per run.
    #[serde(default)]
    pub model: PastConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_stride")]
    pub window_stride: usize,
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_k")]
    pub knn_k: usize,
    /// Score in the original units instead of the normalized space.
    #[serde(default)]
    pub raw_metrics: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentPlan {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let plan: Self = serde_json::from_str(&text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() || self.methods.is_empty() {
            return Err(PastError::InvalidConfig("plan needs at least one scenario and one method".into()));
        }
        for s in &self.scenarios {
            s.validate()?;
        }
        if self.window_stride == 0 || self.knn_k == 0 {
            return Err(PastError::InvalidConfig("window_stride and knn_k must be >= 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(PastError::InvalidConfig(format!(
                "train_fraction {} not in (0, 1)",
                self.train_fraction
            )));
        }
        if self.methods.iter().any(|m| m.variant().is_some()) {
            self.train.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub scenario: String,
    pub method: Method,
    pub setting: Setting,
    pub rmse: f64,
    pub mae: f64,
    pub runtime_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    pub scenario: String,
    pub method: Option<Method>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub scenario: String,
    pub method: Method,
    pub history: TrainHistory,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub results: Vec<EvalResult>,
    pub errors: Vec<CellError>,
    pub training: Vec<TrainingRecord>,
}

impl ExperimentReport {
    pub fn find(&self, scenario: &str, method: Method, setting: Setting) -> Option<&EvalResult> {
        self.results
            .iter()
            .find(|r| r.scenario == scenario && r.method == method && r.setting == setting)
    }
}

pub const RESULTS_HEADER: [&str; 6] = ["scenario", "method", "setting", "rmse", "mae", "runtime_seconds"];

fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Prepared inputs shared by every method of one scenario.
struct Case {
    label: String,
    truth: TrafficDataset,
    /// Normalized values with every unobserved entry replaced by 0.
    observed: TrafficDataset,
    mask: MaskMatrix,
    split: usize,
}

impl Case {
    fn span(&self, setting: Setting) -> (usize, usize) {
        match setting {
            Setting::Offline => (0, self.split),
            Setting::Online => (self.split, self.truth.n_steps()),
        }
    }

    fn slice(a: &NumArray, lo: usize, hi: usize) -> Result<NumArray> {
        let n = a.cols();
        NumArray::from_vec(&[hi - lo, n], a.data()[lo * n..hi * n].to_vec())
    }
}

fn prepare_case(plan: &ExperimentPlan, base: &TrafficDataset, index: usize, scenario: &ScenarioConfig) -> Result<Case> {
    let (t, n) = (base.n_steps(), base.n_nodes());
    let adjacency = base.adjacency()?;
    let mask = scenario.generate(t, n, Some(&adjacency), derive_seed(plan.seed, 1, index as u64))?;
    let truth = base.normalize(plan.train_fraction, &mask)?;
    let mut observed = truth.clone();
    for (v, m) in observed.values.data_mut().iter_mut().zip(mask.bits().data()) {
        if *m != 1.0 {
            *v = 0.0;
        }
    }
    Ok(Case { label: scenario.label(), truth, observed, mask, split: split_index(t, plan.train_fraction) })
}

/// Imputed series for each setting of one method.
type Imputations = Vec<(Setting, NumArray, f64)>;

fn run_baseline(case: &Case, method: Method, knn_k: usize) -> Result<Imputations> {
    [Setting::Offline, Setting::Online]
        .into_iter()
        .map(|setting| {
            let start = Instant::now();
            let (lo, hi) = case.span(setting);
            let x = Case::slice(&case.observed.values, lo, hi)?;
            let m = Case::slice(case.mask.bits(), lo, hi)?;
            let y = match method {
                Method::Knn => baseline_knn(&x, &m, knn_k)?,
                _ => baseline_linear(&x, &m)?,
            };
            Ok((setting, y, start.elapsed().as_secs_f64()))
        })
        .collect()
}

fn run_learned(plan: &ExperimentPlan, case: &Case, method: Method, index: usize) -> Result<(Imputations, TrainHistory)> {
    let variant = method.variant().expect("learned method");
    let config = PastConfig { n_nodes: case.truth.n_nodes(), variant, ..plan.model };
    let seed = derive_seed(plan.seed, 2, index as u64);
    let mut model = PastModel::new(config, &case.truth.adjacency()?, seed)?;
    model.norm_stats = case.truth.norm_stats;
    let (train, _) = window_split(&case.observed, config.seq_len, plan.window_stride, plan.train_fraction, &case.mask)?;
    let start = Instant::now();
    let history = model.train(&train, &plan.train)?;
    let train_secs = start.elapsed().as_secs_f64();
    log::info!(
        "{} / {}: trained {} epochs on {} windows in {train_secs:.1}s",
        case.label,
        method,
        history.epochs.len(),
        train.len()
    );
    let out = [Setting::Offline, Setting::Online]
        .into_iter()
        .map(|setting| {
            let start = Instant::now();
            let (lo, hi) = case.span(setting);
            let y = model.impute_span(&case.observed, &case.mask, lo, hi)?;
            Ok((setting, y, train_secs + start.elapsed().as_secs_f64()))
        })
        .collect::<Result<_>>()?;
    Ok((out, history))
}

fn score(plan: &ExperimentPlan, case: &Case, setting: Setting, y: &NumArray) -> Result<(f64, f64)> {
    let (lo, hi) = case.span(setting);
    let truth = Case::slice(&case.truth.values, lo, hi)?;
    let eval = Case::slice(case.mask.bits(), lo, hi)?.map(|m| 1.0 - m);
    match (plan.raw_metrics, case.truth.norm_stats) {
        (true, Some(ns)) => rmse_mae(&y.map(|v| ns.invert(v)), &truth.map(|v| ns.invert(v)), &eval),
        _ => rmse_mae(y, &truth, &eval),
    }
}

fn sanitize(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '-' }).collect()
}

/// Run every (scenario, method) cell. A failing cell is recorded in
/// `errors` and the remaining cells still run. Files are written when the
/// plan names an output directory.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    plan.validate()?;
    let mut base = plan.dataset.load()?;
    if let Some(minutes) = plan.downsample_minutes {
        base = base.downsample_window_average(minutes)?;
    }
    let out_dir = plan.output_dir.as_deref();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir.join("dumps"))?;
        std::fs::create_dir_all(dir.join("masks"))?;
    }

    let mut report = ExperimentReport::default();
    for (si, scenario) in plan.scenarios.iter().enumerate() {
        let case = match prepare_case(plan, &base, si, scenario) {
            Ok(c) => c,
            Err(e) => {
                log::error!("scenario {}: {e}", scenario.label());
                report.errors.push(CellError { scenario: scenario.label(), method: None, message: e.to_string() });
                continue;
            }
        };
        if let Some(dir) = out_dir {
            case.mask.write_csv(&dir.join("masks").join(format!("{}.csv", sanitize(&case.label))))?;
        }
        for (mi, &method) in plan.methods.iter().enumerate() {
            let outcome = if method.variant().is_some() {
                run_learned(plan, &case, method, si * plan.methods.len() + mi).map(|(imp, history)| {
                    report.training.push(TrainingRecord { scenario: case.label.clone(), method, history });
                    imp
                })
            } else {
                run_baseline(&case, method, plan.knn_k)
            };
            let scored = outcome.and_then(|imps| {
                imps.into_iter()
                    .map(|(setting, y, secs)| {
                        let (rmse, mae) = score(plan, &case, setting, &y)?;
                        if let Some(dir) = out_dir {
                            let ns = case.truth.norm_stats.expect("normalized");
                            let name = format!("{}__{}__{}.csv", sanitize(&case.label), method, setting.name());
                            crate::data::write_values_csv(
                                &dir.join("dumps").join(name),
                                &y.map(|v| ns.invert(v)),
                                Some(&case.truth.node_ids),
                            )?;
                        }
                        Ok(EvalResult {
                            scenario: case.label.clone(),
                            method,
                            setting,
                            rmse,
                            mae,
                            runtime_seconds: secs,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            });
            match scored {
                Ok(rs) => {
                    for r in &rs {
                        log::info!("{} {} {}: rmse={:.4} mae={:.4}", r.scenario, r.method, r.setting.name(), r.rmse, r.mae);
                    }
                    report.results.extend(rs);
                }
                Err(e) => {
                    log::error!("{} / {method}: {e}", case.label);
                    report.errors.push(CellError { scenario: case.label.clone(), method: Some(method), message: e.to_string() });
                }
            }
        }
        if let Some(dir) = out_dir {
            write_reports(plan, &report, dir)?;
        }
    }
    report.results.sort_by(|a, b| {
        (a.scenario.as_str(), a.method.name(), a.setting).cmp(&(b.scenario.as_str(), b.method.name(), b.setting))
    });
    if let Some(dir) = out_dir {
        write_reports(plan, &report, dir)?;
    }
    Ok(report)
}

pub fn write_results_csv(path: &Path, results: &[EvalResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RESULTS_HEADER)?;
    for r in results {
        w.write_record([
            r.scenario.clone(),
            r.method.name().to_string(),
            r.setting.name().to_string(),
            format!("{}", r.rmse),
            format!("{}", r.mae),
            format!("{:.3}", r.runtime_seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_reports(plan: &ExperimentPlan, report: &ExperimentReport, dir: &Path) -> Result<()> {
    write_results_csv(&dir.join("results.csv"), &report.results)?;
    let doc = serde_json::json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": plan.seed,
        "plan": plan,
        "results": report.results,
        "errors": report.errors,
        "training": report.training,
    });
    std::fs::write(dir.join("results.json"), serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}
