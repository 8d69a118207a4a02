//! Browser bindings. Every export takes and returns JSON text so the page
//! needs no generated type glue.

use explain_agree::agreement::{Metric, Ranking};
use explain_agree::attribution::{AttributionConfig, Method};
use explain_agree::evaluation::RhoStatus;
use explain_agree::experiment::{run_experiment, ExperimentConfig, HeatmapEpochs};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoConfig {
    pub n: usize,
    pub features: usize,
    pub separation: f64,
    pub epochs: usize,
    pub hidden_dims: Vec<usize>,
    pub seed: u64,
    pub lime_samples: usize,
    pub sg_samples: usize,
    pub ig_steps: usize,
    /// Position within the test split of the instance whose attributions
    /// are returned.
    pub instance: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            n: 200,
            features: 6,
            separation: 1.5,
            epochs: 30,
            hidden_dims: vec![8, 4],
            seed: 0,
            lime_samples: 300,
            sg_samples: 20,
            ig_steps: 30,
            instance: 0,
        }
    }
}

impl DemoConfig {
    fn experiment(&self) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::synthetic(self.n, self.features, self.separation);
        cfg.seed = self.seed;
        cfg.hidden_dims = self.hidden_dims.clone();
        cfg.training.epochs = self.epochs;
        cfg.attribution = AttributionConfig {
            lime_samples: self.lime_samples,
            sg_samples: self.sg_samples,
            ig_steps: self.ig_steps,
            ..AttributionConfig::default()
        };
        cfg.heatmaps = HeatmapEpochs::None;
        cfg
    }
}

fn parse_scores(text: &str) -> Result<Vec<f64>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("'{s}' is not a number")))
        .collect()
}

/// Top-k sets of two score lists and all four agreement values.
pub fn compare(a: &str, b: &str, k: usize) -> Result<Value, String> {
    let (a, b) = (parse_scores(a)?, parse_scores(b)?);
    if a.len() != b.len() {
        return Err(format!("vectors have {} and {} entries", a.len(), b.len()));
    }
    let (ta, tb) = (
        Ranking::new(&a).top_k(k).map_err(|e| e.to_string())?,
        Ranking::new(&b).top_k(k).map_err(|e| e.to_string())?,
    );
    let mut values = serde_json::Map::new();
    for m in Metric::ALL {
        values.insert(m.to_string(), json!(m.evaluate(&ta, &tb).map_err(|e| e.to_string())?));
    }
    Ok(json!({ "k": k, "top_a": ta.entries, "top_b": tb.entries, "agreement": values }))
}

/// Trains on synthetic data and returns the AUC trajectory, per-epoch
/// agreement matrices, correlations and one instance's attributions.
pub fn demo(config: &str) -> Result<Value, String> {
    let cfg: DemoConfig = if config.trim().is_empty() {
        DemoConfig::default()
    } else {
        serde_json::from_str(config).map_err(|e| format!("config: {e}"))?
    };
    let report = run_experiment(&cfg.experiment()).map_err(|e| e.to_string())?;
    let test_ids = &report.dataset.splits.test_idx;
    let instance = *test_ids
        .get(cfg.instance)
        .ok_or_else(|| format!("instance {} out of range (test split has {})", cfg.instance, test_ids.len()))?;

    let epochs: Vec<Value> = report
        .epochs
        .iter()
        .map(|e| json!({ "epoch": e.epoch, "test_auc": e.test_auc, "train_loss": e.train_loss }))
        .collect();
    let agreement: Vec<Value> = report
        .summaries
        .iter()
        .map(|s| json!({ "epoch": s.epoch, "metric": s.metric, "k": s.k, "mean": s.overall_mean, "matrix": s.pair_matrix }))
        .collect();
    let correlations: Vec<Value> = report
        .correlations
        .iter()
        .map(|c| {
            json!({
                "metric": c.metric,
                "k": c.k,
                "rho": c.rho,
                "status": c.status.as_str(),
                "defined": c.status == RhoStatus::Defined,
            })
        })
        .collect();
    let attributions: Vec<Value> = report
        .attributions
        .iter()
        .filter(|a| a.instance_id == instance)
        .map(|a| json!({ "epoch": a.epoch, "method": a.method, "scores": a.scores }))
        .collect();
    Ok(json!({
        "feature_names": report.dataset.feature_names,
        "methods": Method::ALL,
        "metrics": Metric::ALL,
        "test_instances": test_ids.len(),
        "instance_id": instance,
        "best_epoch": report.best_epoch(),
        "epochs": epochs,
        "agreement": agreement,
        "correlations": correlations,
        "attributions": attributions,
    }))
}

fn to_js(v: Result<Value, String>) -> Result<String, JsError> {
    v.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn compare_vectors(a: &str, b: &str, k: usize) -> Result<String, JsError> {
    to_js(compare(a, b, k))
}

#[wasm_bindgen]
pub fn run_demo(config: &str) -> Result<String, JsError> {
    to_js(demo(config))
}

#[wasm_bindgen]
pub fn default_config() -> String {
    serde_json::to_string(&DemoConfig::default()).expect("plain struct")
}
