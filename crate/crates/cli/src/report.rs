//! Machine-readable outputs: the metrics JSON document, sweep summaries, and
//! the CSV exports.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use dcc_core::copula::TraceRow;
use dcc_core::metrics::EvalReport;
use dcc_core::Result;

/// One model's scalar metrics plus its calibration parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelRow {
    pub name: String,
    pub accuracy: f64,
    pub roc_auc: f64,
    pub pr_auc: f64,
    pub ece: f64,
    pub platt: PlattAb,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PlattAb {
    pub a: f64,
    pub b: f64,
}

/// Top-level metrics document for one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsJson {
    pub experiment: String,
    pub seed: u64,
    pub config_hash: String,
    pub models: Vec<ModelRow>,
}

/// Sweep aggregation: per-model mean and standard deviation over seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryJson {
    pub experiment: String,
    pub seeds: Vec<u64>,
    pub config_hash: String,
    pub models: Vec<SummaryRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub mean: MetricQuad,
    pub std: MetricQuad,
    pub per_seed: Vec<MetricQuad>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetricQuad {
    pub accuracy: f64,
    pub roc_auc: f64,
    pub pr_auc: f64,
    pub ece: f64,
}

impl MetricQuad {
    pub fn from_row(r: &ModelRow) -> Self {
        MetricQuad {
            accuracy: r.accuracy,
            roc_auc: r.roc_auc,
            pr_auc: r.pr_auc,
            ece: r.ece,
        }
    }
}

/// Aggregate per-seed rows (one `Vec<ModelRow>` per seed, same model order)
/// into mean/std summaries.
pub fn summarize(
    experiment: &str,
    seeds: &[u64],
    config_hash: &str,
    per_seed: &[Vec<ModelRow>],
) -> SummaryJson {
    let n_models = per_seed.first().map_or(0, Vec::len);
    let mut models = Vec::with_capacity(n_models);
    for m in 0..n_models {
        let quads: Vec<MetricQuad> = per_seed.iter().map(|rows| MetricQuad::from_row(&rows[m])).collect();
        let mean = |f: fn(&MetricQuad) -> f64| -> f64 {
            quads.iter().map(f).sum::<f64>() / quads.len() as f64
        };
        let std = |f: fn(&MetricQuad) -> f64, mu: f64| -> f64 {
            if quads.len() < 2 {
                return 0.0;
            }
            (quads.iter().map(|q| (f(q) - mu).powi(2)).sum::<f64>() / (quads.len() - 1) as f64)
                .sqrt()
        };
        let mu = MetricQuad {
            accuracy: mean(|q| q.accuracy),
            roc_auc: mean(|q| q.roc_auc),
            pr_auc: mean(|q| q.pr_auc),
            ece: mean(|q| q.ece),
        };
        models.push(SummaryRow {
            name: per_seed[0][m].name.clone(),
            mean: mu,
            std: MetricQuad {
                accuracy: std(|q| q.accuracy, mu.accuracy),
                roc_auc: std(|q| q.roc_auc, mu.roc_auc),
                pr_auc: std(|q| q.pr_auc, mu.pr_auc),
                ece: std(|q| q.ece, mu.ece),
            },
            per_seed: quads,
        });
    }
    SummaryJson {
        experiment: experiment.to_string(),
        seeds: seeds.to_vec(),
        config_hash: config_hash.to_string(),
        models,
    }
}

/// SHA-256 of the resolved config's canonical JSON encoding.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let canonical = serde_json::to_string(cfg).expect("config serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// `index,true_label,score_raw,score_calibrated,pred_label` rows.
pub fn write_predictions_csv(
    path: &Path,
    rows: &[(usize, usize, f64, f64, usize)],
) -> Result<()> {
    let mut w = fs::File::create(path)?;
    writeln!(w, "index,true_label,score_raw,score_calibrated,pred_label")?;
    for (idx, label, raw, cal, pred) in rows {
        writeln!(w, "{idx},{label},{raw},{cal},{pred}")?;
    }
    Ok(())
}

/// ROC (`fpr,tpr,threshold`) or PR (`recall,precision,threshold`) points.
pub fn write_curve_csv(
    path: &Path,
    header: &str,
    points: &[dcc_core::metrics::CurvePoint<f64>],
) -> Result<()> {
    let mut w = fs::File::create(path)?;
    writeln!(w, "{header}")?;
    for p in points {
        writeln!(w, "{},{},{}", p.x, p.y, p.threshold)?;
    }
    Ok(())
}

/// `bin_lo,bin_hi,conf,acc,count` rows.
pub fn write_reliability_csv(path: &Path, report: &EvalReport<f64>) -> Result<()> {
    let mut w = fs::File::create(path)?;
    writeln!(w, "bin_lo,bin_hi,conf,acc,count")?;
    for b in &report.reliability {
        writeln!(w, "{},{},{},{},{}", b.lo, b.hi, b.confidence, b.accuracy, b.count)?;
    }
    Ok(())
}

/// `x1,x2,pred,posterior` decision-region rows.
pub fn write_region_csv(path: &Path, rows: &[(f64, f64, usize, f64)]) -> Result<()> {
    let mut w = fs::File::create(path)?;
    writeln!(w, "x1,x2,pred,posterior")?;
    for (x1, x2, pred, post) in rows {
        writeln!(w, "{x1},{x2},{pred},{post}")?;
    }
    Ok(())
}

/// `u1,u2,density` copula probe rows.
pub fn write_probe_csv(path: &Path, rows: &[(f32, f32, f32)]) -> Result<()> {
    let mut w = fs::File::create(path)?;
    writeln!(w, "u1,u2,density")?;
    for (u1, u2, dens) in rows {
        writeln!(w, "{u1},{u2},{dens}")?;
    }
    Ok(())
}

pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let w = fs::File::create(path)?;
    dcc_core::copula::write_trace_csv(trace, w)
}
