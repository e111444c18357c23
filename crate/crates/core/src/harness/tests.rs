use super::*;
use crate::data::SynthConfig;
use crate::masking::ScenarioConfig;
use crate::model::{PastConfig, TrainConfig};

fn plan(methods: Vec<Method>, seed: u64) -> ExperimentPlan {
    serde_json::from_value(serde_json::json!({
        "dataset": {"synthetic": {"n_nodes": 6, "n_days": 4, "seed": 2}},
        "scenarios": [ScenarioConfig::random(0.4), ScenarioConfig::fiber(0.3, 12)],
        "methods": methods,
        "seed": seed,
    }))
    .unwrap()
}

#[test]
fn plan_defaults_and_validation() {
    let p = plan(vec![Method::Linear], 0);
    assert_eq!(p.window_stride, 24);
    assert_eq!(p.train_fraction, 0.8);
    assert_eq!(p.model, PastConfig::default());
    assert_eq!(p.train, TrainConfig::default());
    assert_eq!(p.dataset, DatasetSpec::Synthetic(SynthConfig { n_nodes: 6, n_days: 4, seed: 2, ..Default::default() }));
    assert!(ExperimentPlan { methods: vec![], ..p.clone() }.validate().is_err());
    assert!(ExperimentPlan { scenarios: vec![], ..p.clone() }.validate().is_err());
    assert!(ExperimentPlan { train_fraction: 1.0, ..p }.validate().is_err());
}

#[test]
fn baseline_plan_reports_both_settings() {
    let report = run_experiment(&plan(vec![Method::Linear, Method::Knn], 0)).unwrap();
    assert!(report.errors.is_empty(), "{:?}", report.errors);
    assert_eq!(report.results.len(), 2 * 2 * 2);
    for r in &report.results {
        assert!(r.rmse >= r.mae && r.mae > 0.0, "{r:?}");
    }
    assert!(report.find("random_r0.4", Method::Linear, Setting::Online).is_some());
    // sorted by scenario, method, setting
    let keys: Vec<_> = report.results.iter().map(|r| (r.scenario.clone(), r.method.name(), r.setting)).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
}

#[test]
fn results_depend_on_the_plan_seed_only() {
    let strip = |rep: ExperimentReport| -> Vec<(String, Method, Setting, u64, u64)> {
        rep.results.into_iter().map(|r| (r.scenario, r.method, r.setting, r.rmse.to_bits(), r.mae.to_bits())).collect()
    };
    let a = strip(run_experiment(&plan(vec![Method::Linear], 3)).unwrap());
    let b = strip(run_experiment(&plan(vec![Method::Linear], 3)).unwrap());
    let c = strip(run_experiment(&plan(vec![Method::Linear], 4)).unwrap());
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.len(), c.len());
}

#[test]
fn learned_method_writes_reports() {
    let mut p = plan(vec![Method::Past, Method::Linear], 1);
    p.scenarios.truncate(1);
    p.model = PastConfig { seq_len: 24, d: 4, n_layers: 1, k_order: 1, ..PastConfig::default() };
    p.train = TrainConfig { epochs: 2, batch_size: 4, lr: 1e-3, ..TrainConfig::default() };
    let dir = tempfile::tempdir().unwrap();
    p.output_dir = Some(dir.path().to_path_buf());
    let report = run_experiment(&p).unwrap();
    assert!(report.errors.is_empty(), "{:?}", report.errors);
    assert_eq!(report.training.len(), 1);
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "scenario,method,setting,rmse,mae,runtime_seconds");
    assert_eq!(csv.lines().count(), 1 + 4);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("results.json")).unwrap()).unwrap();
    assert_eq!(json["seed"], 1);
    assert_eq!(json["results"].as_array().unwrap().len(), 4);
    let dumps = std::fs::read_dir(dir.path().join("dumps")).unwrap().count();
    assert_eq!(dumps, 4);
}

#[test]
fn failing_cells_are_recorded() {
    let mut p = plan(vec![Method::Past, Method::Linear], 1);
    p.scenarios.truncate(1);
    // window longer than the training span
    p.model = PastConfig { seq_len: 1000, d: 4, n_layers: 1, ..PastConfig::default() };
    let report = run_experiment(&p).unwrap();
    assert_eq!(report.errors.len(), 1);
    assert_eq!(report.errors[0].method, Some(Method::Past));
    assert_eq!(report.results.len(), 2);
}
