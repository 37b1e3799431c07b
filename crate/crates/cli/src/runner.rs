//! Experiment orchestration: data -> splits -> models -> calibration ->
//! one-shot test evaluation, with all artifacts written under the output
//! directory.
//!
//! Model fitting runs at `f32` (the copula trainings are the compute
//! bottleneck); scores are widened to `f64` for the shared calibration and
//! metrics stages.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dcc_core::baselines::{fit_gnb, fit_logreg, GnbModel, LogisticModel};
use dcc_core::calibration::{fit_platt, PlattModel};
use dcc_core::classifier::{bayes_llr_synthetic, fit_dcc, DccConfig, DccModel};
use dcc_core::copula::TraceRow;
use dcc_core::dataset::{
    apply_preprocess, fit_preprocess, gen_synthetic, load_pima, make_splits, mark_zeros_missing,
    Dataset, SplitPlan,
};
use dcc_core::marginals::MarginalMode;
use dcc_core::metrics::{evaluate_binary, EvalReport};
use dcc_core::{Error, Result};

use crate::config::ExperimentConfig;
use crate::report::{self, MetricsJson, ModelRow, PlattAb, SummaryJson};

/// Scalar type of the fitted models.
pub type ModelScalar = f32;

const PLATT_MAX_ITERS: usize = 100;
const PLATT_TOL: f64 = 1e-10;
const LOGREG_MAX_ITERS: usize = 500;
const LOGREG_LR: f64 = 1.0;
const GNB_VAR_FLOOR: f64 = 1e-9;

/// One calibrated model evaluated once on the test split.
#[derive(Debug, Clone)]
pub struct ModelOutcome {
    pub name: String,
    pub report: EvalReport<f64>,
    pub platt: PlattModel<f64>,
    /// Whether calibration preserved the score ranking.
    pub order_preserving: bool,
    /// Raw test scores, in test-index order.
    pub raw_scores: Vec<f64>,
    /// Calibrated test probabilities, in test-index order.
    pub probs: Vec<f64>,
    /// How many times each test row was scored (exactly one each by
    /// construction; exposed so tests can assert the discipline).
    pub test_eval_counts: Vec<u32>,
}

/// Everything a synthetic run produces, plus wall-clock training times.
pub struct SyntheticOutcome {
    pub metrics: MetricsJson,
    pub models: Vec<ModelOutcome>,
    pub plan: SplitPlan,
    /// Seconds spent fitting each requested mode, in mode order.
    pub fit_seconds: Vec<f64>,
    pub traces: Vec<Vec<Vec<TraceRow>>>,
    pub out_dir: PathBuf,
}

/// One seed of the clinical experiment.
pub struct PimaSeedOutcome {
    pub seed: u64,
    pub metrics: MetricsJson,
    pub models: Vec<ModelOutcome>,
    pub dcc_traces: Vec<Vec<TraceRow>>,
}

pub struct PimaOutcome {
    pub summary: SummaryJson,
    pub per_seed: Vec<PimaSeedOutcome>,
    pub out_dir: PathBuf,
}

fn dcc_config(cfg: &ExperimentConfig, mode: MarginalMode, seed: u64) -> DccConfig {
    DccConfig {
        marginal_mode: mode,
        bandwidth_scale: cfg.bandwidth_scale,
        bandwidth_exponent: cfg.bandwidth_exponent,
        smoothness_r: cfg.smoothness_r,
        width_const: cfg.width_const,
        normalizer: cfg.normalizer,
        lambda: cfg.lambda,
        penalty_bins: cfg.penalty_bins,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        tau: cfg.tau,
        seed,
    }
}

/// Calibrate raw scores on the calibration split and evaluate once on the
/// test split. `scorer` is called exactly once per row index handed to it.
fn calibrate_and_evaluate<F>(
    name: &str,
    ds: &Dataset<ModelScalar>,
    plan: &SplitPlan,
    mut scorer: F,
) -> Result<ModelOutcome>
where
    F: FnMut(usize) -> Result<f64>,
{
    let cal_scores: Vec<f64> = plan
        .cal_idx
        .iter()
        .map(|&i| scorer(i))
        .collect::<Result<_>>()?;
    let cal_labels: Vec<usize> = plan.cal_idx.iter().map(|&i| ds.label(i)).collect();
    let platt = fit_platt(&cal_scores, &cal_labels, PLATT_MAX_ITERS, PLATT_TOL)?;
    if !platt.is_order_preserving() {
        eprintln!(
            "warning: calibration slope for {name} is not positive (a = {}); \
             calibrated probabilities reverse the score ranking",
            platt.a
        );
    }

    let mut test_eval_counts = vec![0u32; plan.test_idx.len()];
    let mut raw_scores = Vec::with_capacity(plan.test_idx.len());
    for (k, &i) in plan.test_idx.iter().enumerate() {
        test_eval_counts[k] += 1;
        raw_scores.push(scorer(i)?);
    }
    let probs: Vec<f64> = raw_scores.iter().map(|&s| platt.apply(s)).collect();
    // Calibrated 0.5 threshold; an exact tie keeps the smaller class.
    let preds: Vec<usize> = probs.iter().map(|&p| usize::from(p > 0.5)).collect();
    let labels: Vec<usize> = plan.test_idx.iter().map(|&i| ds.label(i)).collect();
    let report = evaluate_binary(&preds, &probs, &labels)?;
    Ok(ModelOutcome {
        name: name.to_string(),
        report,
        order_preserving: platt.is_order_preserving(),
        platt,
        raw_scores,
        probs,
        test_eval_counts,
    })
}

fn model_row(m: &ModelOutcome) -> ModelRow {
    ModelRow {
        name: m.name.clone(),
        accuracy: m.report.accuracy,
        roc_auc: m.report.roc_auc,
        pr_auc: m.report.pr_auc,
        ece: m.report.ece,
        platt: PlattAb {
            a: m.platt.a,
            b: m.platt.b,
        },
    }
}

fn write_model_artifacts(dir: &Path, m: &ModelOutcome, ds: &Dataset<ModelScalar>, plan: &SplitPlan) -> Result<()> {
    let rows: Vec<(usize, usize, f64, f64, usize)> = plan
        .test_idx
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            (
                i,
                ds.label(i),
                m.raw_scores[k],
                m.probs[k],
                usize::from(m.probs[k] > 0.5),
            )
        })
        .collect();
    report::write_predictions_csv(&dir.join(format!("predictions_{}.csv", m.name)), &rows)?;
    report::write_curve_csv(
        &dir.join(format!("roc_{}.csv", m.name)),
        "fpr,tpr,threshold",
        &m.report.roc_curve,
    )?;
    report::write_curve_csv(
        &dir.join(format!("pr_{}.csv", m.name)),
        "recall,precision,threshold",
        &m.report.pr_curve,
    )?;
    report::write_reliability_csv(&dir.join(format!("reliability_{}.csv", m.name)), &m.report)?;
    Ok(())
}

/// Run the synthetic-dependence experiment for every requested marginal mode
/// and the analytic decision rule, writing all artifacts under `out_dir`.
pub fn run_synthetic(cfg: &ExperimentConfig, out_dir: &Path) -> Result<SyntheticOutcome> {
    fs::create_dir_all(out_dir)?;
    let seed = cfg.seed;
    let ds: Dataset<ModelScalar> = gen_synthetic(cfg.n_per_class, cfg.rho, seed)
        .map_err(|e| stage(e, "generating synthetic data"))?;
    let plan = make_splits(&ds, seed).map_err(|e| stage(e, "splitting"))?;
    plan.write_csv(fs::File::create(out_dir.join("splits.csv"))?)?;

    let mut models = Vec::new();
    let mut fit_seconds = Vec::new();
    let mut traces = Vec::new();
    for &mode in &cfg.modes {
        let t0 = Instant::now();
        let (model, trace) = fit_dcc(&ds, &plan, &dcc_config(cfg, mode, seed))
            .map_err(|e| stage(e, &format!("fitting ({} marginals)", mode.as_str())))?;
        fit_seconds.push(t0.elapsed().as_secs_f64());

        let name = format!("dcc_{}", mode.as_str());
        let outcome = calibrate_and_evaluate(&name, &ds, &plan, |i| {
            Ok(model
                .predict(ds.row(i))?
                .score
                .expect("binary score")
                .into())
        })
        .map_err(|e| stage(e, &format!("evaluating ({} marginals)", mode.as_str())))?;
        write_model_artifacts(out_dir, &outcome, &ds, &plan)?;
        for (y, class_trace) in trace.iter().enumerate() {
            report::write_trace_csv(
                &out_dir.join(format!("loss_trace_{}_class{}.csv", mode.as_str(), y)),
                class_trace,
            )?;
        }
        for y in 0..model.n_classes() {
            let probe = model.copula(y).density_grid(cfg.probe_resolution)?;
            report::write_probe_csv(
                &out_dir.join(format!("copula_probe_{}_class{}.csv", mode.as_str(), y)),
                &probe,
            )?;
        }
        write_region_grid(cfg, &model, &outcome, out_dir, mode.as_str())?;
        fs::write(
            out_dir.join(format!("dcc_model_{}.json", mode.as_str())),
            model.to_json()?,
        )?;
        models.push(outcome);
        traces.push(trace);
    }

    // Analytic decision rule on the same test split, through the same
    // calibration path. The closed-form ratio favors class 0, so its sign is
    // flipped to match the pipeline's positive-class-1 score convention.
    let rho = cfg.rho;
    let bayes = calibrate_and_evaluate("bayes_rule", &ds, &plan, |i| {
        Ok(-f64::from(bayes_llr_synthetic::<ModelScalar>(rho, ds.row(i))))
    })?;
    write_model_artifacts(out_dir, &bayes, &ds, &plan)?;
    models.push(bayes);

    let metrics = MetricsJson {
        experiment: "synthetic".to_string(),
        seed,
        config_hash: report::config_hash(cfg),
        models: models.iter().map(model_row).collect(),
    };
    report::write_json(&out_dir.join("metrics.json"), &metrics)?;
    Ok(SyntheticOutcome {
        metrics,
        models,
        plan,
        fit_seconds,
        traces,
        out_dir: out_dir.to_path_buf(),
    })
}

fn write_region_grid(
    cfg: &ExperimentConfig,
    model: &DccModel<ModelScalar>,
    outcome: &ModelOutcome,
    out_dir: &Path,
    mode: &str,
) -> Result<()> {
    let res = cfg.region_grid;
    let lim = 4.0f64;
    let mut rows = Vec::with_capacity(res * res);
    let platt64 = &outcome.platt;
    for i in 0..res {
        let x1 = -lim + 2.0 * lim * i as f64 / (res - 1) as f64;
        for j in 0..res {
            let x2 = -lim + 2.0 * lim * j as f64 / (res - 1) as f64;
            let p = model.predict(&[x1 as ModelScalar, x2 as ModelScalar])?;
            let posterior = platt64.apply(f64::from(p.score.expect("binary score")));
            rows.push((x1, x2, usize::from(posterior > 0.5), posterior));
        }
    }
    report::write_region_csv(&out_dir.join(format!("decision_region_{mode}.csv")), &rows)
}

/// Run the clinical benchmark over the configured seeds: zeros to missing,
/// stratified splits, fit-split preprocessing, the copula classifier plus
/// both baselines, shared calibration, and a single test evaluation per seed.
pub fn run_pima(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PimaOutcome> {
    fs::create_dir_all(out_dir)?;
    let path = Path::new(&cfg.input_csv);
    if !path.exists() {
        return Err(Error::InvalidInput(format!(
            "input CSV {:?} does not exist",
            cfg.input_csv
        )));
    }
    let raw: Dataset<ModelScalar> = load_pima(path).map_err(|e| stage(e, "loading the CSV"))?;
    let masked = mark_zeros_missing(&raw).map_err(|e| stage(e, "marking missing values"))?;

    let hash = report::config_hash(cfg);
    let mut per_seed = Vec::new();
    let mut per_seed_rows = Vec::new();
    for &seed in &cfg.seeds {
        let seed_dir = out_dir.join(format!("seed_{seed}"));
        fs::create_dir_all(&seed_dir)?;
        let plan = make_splits(&raw, seed).map_err(|e| stage(e, "splitting"))?;
        plan.write_csv(fs::File::create(seed_dir.join("splits.csv"))?)?;
        let stats = fit_preprocess(&masked, &plan).map_err(|e| stage(e, "fitting preprocessing"))?;
        let ds = apply_preprocess(&masked, &stats).map_err(|e| stage(e, "applying preprocessing"))?;

        let mode = cfg.modes[0];
        let (dcc, dcc_traces) = fit_dcc(&ds, &plan, &dcc_config(cfg, mode, seed))
            .map_err(|e| stage(e, "fitting the copula classifier"))?;
        let logreg: LogisticModel<ModelScalar> =
            fit_logreg(&ds, &plan, None, LOGREG_MAX_ITERS, LOGREG_LR)
                .map_err(|e| stage(e, "fitting logistic regression"))?;
        let gnb: GnbModel<ModelScalar> =
            fit_gnb(&ds, &plan, GNB_VAR_FLOOR).map_err(|e| stage(e, "fitting naive Bayes"))?;

        let mut models = Vec::new();
        let dcc_outcome = calibrate_and_evaluate("dcc", &ds, &plan, |i| {
            Ok(dcc.predict(ds.row(i))?.score.expect("binary score").into())
        })?;
        for (y, class_trace) in dcc_traces.iter().enumerate() {
            report::write_trace_csv(&seed_dir.join(format!("loss_trace_class{y}.csv")), class_trace)?;
        }
        models.push(dcc_outcome);
        models.push(calibrate_and_evaluate("logreg", &ds, &plan, |i| {
            Ok(f64::from(logreg.score(ds.row(i))))
        })?);
        models.push(calibrate_and_evaluate("gnb", &ds, &plan, |i| {
            Ok(f64::from(gnb.score(ds.row(i))))
        })?);
        for m in &models {
            write_model_artifacts(&seed_dir, m, &ds, &plan)?;
        }

        let metrics = MetricsJson {
            experiment: "pima".to_string(),
            seed,
            config_hash: hash.clone(),
            models: models.iter().map(model_row).collect(),
        };
        report::write_json(&seed_dir.join("metrics.json"), &metrics)?;
        per_seed_rows.push(metrics.models.clone());
        per_seed.push(PimaSeedOutcome {
            seed,
            metrics,
            models,
            dcc_traces,
        });
    }

    let summary = report::summarize("pima", &cfg.seeds, &hash, &per_seed_rows);
    report::write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(PimaOutcome {
        summary,
        per_seed,
        out_dir: out_dir.to_path_buf(),
    })
}

/// Add the failing stage's name while keeping the error's usage/internal
/// classification intact.
fn stage(e: Error, what: &str) -> Error {
    match e {
        Error::InvalidInput(m) => Error::InvalidInput(format!("while {what}: {m}")),
        Error::Parse { .. } => e, // already names the row and column
        other => Error::Data(format!("while {what}: {other}")),
    }
}
