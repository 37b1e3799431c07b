//! The plug-in generative classifier: class priors, per-class copula
//! densities over PIT-transformed features, temperature, and the analytic
//! decision rule for the synthetic study.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::copula::{CopulaNet, NormalizerKind, TraceRow, TrainOptions};
use crate::dataset::{Dataset, SplitPlan};
use crate::error::{Error, Result};
use crate::marginals::{fit_marginals, MarginalMode, MarginalModel};
use crate::nn::build_net;
use crate::scalar::Scalar;
use crate::DENSITY_FLOOR;

/// Everything needed to fit a model: marginal strategy, bandwidth rule,
/// network recipe, normalizer, penalty, optimizer, and temperature.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DccConfig {
    pub marginal_mode: MarginalMode,
    pub bandwidth_scale: f64,
    pub bandwidth_exponent: f64,
    pub smoothness_r: f64,
    pub width_const: f64,
    pub normalizer: NormalizerKind,
    pub lambda: f64,
    pub penalty_bins: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub tau: f64,
    pub seed: u64,
}

/// Fitted model: priors, marginal estimators, and one copula network per
/// class. Immutable after fitting; prediction is pure.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct DccModel<T: Scalar> {
    priors: Vec<T>,
    marginals: MarginalModel<T>,
    copulas: Vec<CopulaNet<T>>,
    tau: T,
    n_classes: usize,
    d: usize,
}

/// Output of [`DccModel::predict`].
#[derive(Debug, Clone)]
pub struct Prediction<T: Scalar> {
    /// Argmax class; exact ties resolve to the smallest index.
    pub label: usize,
    pub log_joints: Vec<T>,
    /// Two-class decision score `log_joint(1) - log_joint(0)`.
    pub score: Option<T>,
}

fn class_seed(base: u64, class: usize) -> u64 {
    // splitmix-style decorrelation of per-class streams
    base ^ (class as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Fit the full model on the fit split of `plan`: marginals first, then one
/// penalized-MLE copula per class on that class's pseudo-observations.
/// Returns the model and the per-class training traces.
pub fn fit_dcc<T: Scalar>(
    ds: &Dataset<T>,
    plan: &SplitPlan,
    cfg: &DccConfig,
) -> Result<(DccModel<T>, Vec<Vec<TraceRow>>)> {
    let d = ds.n_cols();
    let k = ds.n_classes();
    if !(cfg.tau.is_finite() && cfg.tau >= 0.0) {
        return Err(Error::InvalidInput(format!("bad tau {}", cfg.tau)));
    }
    let marginals = fit_marginals(
        ds,
        plan,
        cfg.marginal_mode,
        cfg.bandwidth_scale,
        cfg.bandwidth_exponent,
    )?;

    let mut class_rows: Vec<Vec<usize>> = vec![Vec::new(); k];
    for &i in &plan.fit_idx {
        class_rows[ds.label(i)].push(i);
    }
    let n_fit: usize = class_rows.iter().map(Vec::len).sum();
    let priors: Vec<T> = class_rows
        .iter()
        .map(|rows| T::of(rows.len() as f64 / n_fit as f64))
        .collect();
    if priors.iter().any(|&p| p <= T::zero()) {
        return Err(Error::Data("a class has no fit rows".into()));
    }

    // Per-class trainings are independent; run them concurrently and collect
    // in class order so results stay deterministic.
    let fitted: Vec<(CopulaNet<T>, Vec<TraceRow>)> = class_rows
        .par_iter()
        .enumerate()
        .map(|(y, rows)| {
            let n_y = rows.len();
            let mut pseudo = Vec::with_capacity(n_y * d);
            for &i in rows {
                pseudo.extend(marginals.pit_transform(ds.row(i), y));
            }
            let net =
                build_net::<T>(d, n_y, cfg.smoothness_r, cfg.width_const, class_seed(cfg.seed, y))?;
            let mut copula = CopulaNet::new(net, cfg.normalizer, d, cfg.penalty_bins, cfg.lambda)?;
            let trace = copula.train(
                &pseudo,
                n_y,
                &TrainOptions {
                    epochs: cfg.epochs,
                    batch_size: cfg.batch_size,
                    lr: cfg.lr,
                    seed: class_seed(cfg.seed, y),
                },
            )?;
            Ok((copula, trace))
        })
        .collect::<Result<_>>()?;
    let (copulas, traces): (Vec<_>, Vec<_>) = fitted.into_iter().unzip();
    Ok((
        DccModel {
            priors,
            marginals,
            copulas,
            tau: T::of(cfg.tau),
            n_classes: k,
            d,
        },
        traces,
    ))
}

impl<T: Scalar> DccModel<T> {
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn priors(&self) -> &[T] {
        &self.priors
    }

    pub fn marginals(&self) -> &MarginalModel<T> {
        &self.marginals
    }

    pub fn copula(&self, y: usize) -> &CopulaNet<T> {
        &self.copulas[y]
    }

    /// `log pi_y + tau * log c_y(u*) + sum_j log f_{j|y}(x_j)` with all
    /// densities floored, so the result is always finite.
    pub fn log_joint(&self, x: &[T], y: usize) -> Result<T> {
        debug_assert_eq!(x.len(), self.d);
        let u = self.marginals.pit_transform(x, y);
        let copula_term = self.copulas[y].density(&u)?.ln();
        let mut acc = self.priors[y].ln() + self.tau * copula_term;
        for (j, &xj) in x.iter().enumerate() {
            acc = acc + self.marginals.pdf(j, y, xj).ln();
        }
        Ok(acc)
    }

    /// Evaluate every class and take the argmax; exact ties return the
    /// smallest class index. For two classes the score is the log-joint
    /// difference (class 1 minus class 0).
    pub fn predict(&self, x: &[T]) -> Result<Prediction<T>> {
        let log_joints: Vec<T> = (0..self.n_classes)
            .map(|y| self.log_joint(x, y))
            .collect::<Result<_>>()?;
        let mut label = 0;
        for (y, &lj) in log_joints.iter().enumerate().skip(1) {
            if lj > log_joints[label] {
                label = y;
            }
        }
        let score = (self.n_classes == 2).then(|| log_joints[1] - log_joints[0]);
        Ok(Prediction {
            label,
            log_joints,
            score,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Exact log-likelihood ratio of the two synthetic classes (class 0 against
/// class 1) at `x`: `2 rho x1 x2 / (1 - rho^2)`.
pub fn bayes_llr_synthetic<T: Scalar>(rho: f64, x: &[T]) -> T {
    debug_assert!(rho.abs() < 1.0);
    let r = T::of(rho);
    T::of(2.0) * r * x[0] * x[1] / (T::one() - r * r)
}

/// Bayes rule for the synthetic classes under equal priors: class 0 (the
/// positively correlated one) whenever `rho * x1 * x2 > 0`; exact ties take
/// the smallest index.
pub fn bayes_rule_synthetic<T: Scalar>(rho: f64, x: &[T]) -> usize {
    debug_assert!(rho.abs() < 1.0);
    if T::of(rho) * x[0] * x[1] < T::zero() {
        1
    } else {
        0
    }
}

/// The floored-log evaluation used when the copula term is disabled:
/// `log pi_y + sum_j log f_{j|y}(x_j)`; a reference path for temperature
/// checks.
pub fn log_joint_marginals_only<T: Scalar>(model: &DccModel<T>, x: &[T], y: usize) -> T {
    let mut acc = model.priors[y].ln();
    for (j, &xj) in x.iter().enumerate() {
        acc = acc + model.marginals.pdf(j, y, xj).ln();
    }
    let _ = DENSITY_FLOOR;
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_synthetic, make_splits};
    use crate::rng;

    fn quick_config(mode: MarginalMode, seed: u64) -> DccConfig {
        DccConfig {
            marginal_mode: mode,
            bandwidth_scale: 10.0,
            bandwidth_exponent: -0.51,
            smoothness_r: 2.0,
            width_const: 1.0,
            normalizer: NormalizerKind::Grid { resolution: 24 },
            lambda: 0.1,
            penalty_bins: 4,
            epochs: 2,
            batch_size: 128,
            lr: 1e-3,
            tau: 1.0,
            seed,
        }
    }

    fn quick_model(seed: u64) -> DccModel<f64> {
        let ds: Dataset<f64> = gen_synthetic(150, 0.9, seed).unwrap();
        let plan = make_splits(&ds, seed).unwrap();
        fit_dcc(&ds, &plan, &quick_config(MarginalMode::OracleNormal, seed))
            .unwrap()
            .0
    }

    #[test]
    fn balanced_fit_gives_equal_priors() {
        let model = quick_model(3);
        assert_eq!(model.priors(), &[0.5, 0.5]);
    }

    #[test]
    fn fitting_is_deterministic() {
        let ds: Dataset<f64> = gen_synthetic(100, 0.8, 5).unwrap();
        let plan = make_splits(&ds, 5).unwrap();
        let cfg = quick_config(MarginalMode::PerClass, 5);
        let (a, _) = fit_dcc(&ds, &plan, &cfg).unwrap();
        let (b, _) = fit_dcc(&ds, &plan, &cfg).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn log_joint_matches_direct_product() {
        // exp(log_joint) ratio against the directly multiplied densities.
        let model = quick_model(7);
        let x = [0.4, -0.8];
        let mut direct = Vec::new();
        for y in 0..2 {
            let u = model.marginals().pit_transform(&x, y);
            let c = model.copula(y).density(&u).unwrap();
            let l = model.priors()[y]
                * c
                * model.marginals().pdf(0, y, x[0])
                * model.marginals().pdf(1, y, x[1]);
            direct.push(l);
        }
        let lj0 = model.log_joint(&x, 0).unwrap();
        let lj1 = model.log_joint(&x, 1).unwrap();
        let ratio = (lj1 - lj0).exp();
        let expect = direct[1] / direct[0];
        assert!(
            ((ratio - expect) / expect).abs() < 1e-12,
            "{ratio} vs {expect}"
        );
    }

    #[test]
    fn tie_breaks_to_smallest_index() {
        // tau = 0 with oracle marginals and equal priors: both classes share
        // every term, so all inputs tie.
        let ds: Dataset<f64> = gen_synthetic(150, 0.9, 11).unwrap();
        let plan = make_splits(&ds, 11).unwrap();
        let mut cfg = quick_config(MarginalMode::OracleNormal, 11);
        cfg.tau = 0.0;
        let (model, _) = fit_dcc(&ds, &plan, &cfg).unwrap();
        for x in [[0.0, 0.0], [1.4, -0.3], [-2.0, 2.0]] {
            let p = model.predict(&x).unwrap();
            assert_eq!(p.log_joints[0], p.log_joints[1]);
            assert_eq!(p.label, 0);
        }
    }

    #[test]
    fn tau_zero_equals_marginals_only_path() {
        let ds: Dataset<f64> = gen_synthetic(150, 0.9, 13).unwrap();
        let plan = make_splits(&ds, 13).unwrap();
        let mut cfg = quick_config(MarginalMode::PerClass, 13);
        cfg.tau = 0.0;
        let (model, _) = fit_dcc(&ds, &plan, &cfg).unwrap();
        for x in [[0.3, 0.3], [-1.0, 2.0]] {
            for y in 0..2 {
                assert_eq!(
                    model.log_joint(&x, y).unwrap(),
                    log_joint_marginals_only(&model, &x, y)
                );
            }
        }
    }

    #[test]
    fn score_antisymmetry_under_relabeling() {
        // The binary score is the log-joint difference, so presenting the
        // same two classes in swapped order negates it exactly.
        let model = quick_model(17);
        for x in [[0.5, 0.5], [0.7, -0.2], [-1.3, 0.4]] {
            let p = model.predict(&x).unwrap();
            let score = p.score.unwrap();
            assert_eq!(score, p.log_joints[1] - p.log_joints[0]);
            let swapped = p.log_joints[0] - p.log_joints[1];
            assert_eq!(swapped, -score);
        }
    }

    #[test]
    fn prediction_invariant_to_shared_log_offset() {
        let model = quick_model(19);
        let x = [1.2, 0.9];
        let p = model.predict(&x).unwrap();
        // Adding a constant to every log-joint cannot change the argmax.
        let offset = 3.7;
        let shifted: Vec<f64> = p.log_joints.iter().map(|l| l + offset).collect();
        let mut label = 0;
        for (y, &lj) in shifted.iter().enumerate().skip(1) {
            if lj > shifted[label] {
                label = y;
            }
        }
        assert_eq!(label, p.label);
    }

    #[test]
    fn bayes_rule_signs() {
        assert_eq!(bayes_rule_synthetic(0.995, &[1.0, 1.0]), 0);
        assert_eq!(bayes_rule_synthetic(0.995, &[-1.0, -1.0]), 0);
        assert_eq!(bayes_rule_synthetic(0.995, &[1.0, -1.0]), 1);
        assert_eq!(bayes_rule_synthetic(0.995, &[0.0, 3.0]), 0); // tie on the axis
        assert!(bayes_llr_synthetic(0.995, &[2.0, 2.0]) > 0.0);
    }

    #[test]
    fn bayes_ceiling_matches_orthant_probability() {
        // P(x1 x2 > 0) under the positively correlated class equals
        // 1/2 + arcsin(rho)/pi; Monte Carlo accuracy check of the rule.
        let rho = 0.995;
        let n = 200_000;
        let ds: Dataset<f64> = gen_synthetic(n, rho, 23).unwrap();
        let correct = (0..2 * n)
            .filter(|&i| bayes_rule_synthetic(rho, ds.row(i)) == ds.label(i))
            .count();
        let acc = correct as f64 / (2 * n) as f64;
        let ceiling = 0.5 + rho.asin() / std::f64::consts::PI;
        assert!((ceiling - 0.96817).abs() < 1e-4);
        assert!((acc - ceiling).abs() < 0.002, "acc {acc} vs {ceiling}");
    }

    #[test]
    fn oracle_model_predicts_quadrants() {
        // With near-singular correlation, a trained model must put (2,2) in
        // the positively correlated class.
        let ds: Dataset<f64> = gen_synthetic(400, 0.95, 29).unwrap();
        let plan = make_splits(&ds, 29).unwrap();
        let mut cfg = quick_config(MarginalMode::OracleNormal, 29);
        cfg.epochs = 30;
        cfg.width_const = 2.0;
        let (model, _) = fit_dcc(&ds, &plan, &cfg).unwrap();
        assert_eq!(model.predict(&[2.0, 2.0]).unwrap().label, 0);
        assert_eq!(model.predict(&[-2.0, 2.0]).unwrap().label, 1);
    }

    #[test]
    fn log_joints_finite_on_extreme_inputs() {
        let model = quick_model(31);
        for x in [
            [1e6, -1e6],
            [f64::MAX.sqrt(), 0.0],
            [-300.0, 300.0],
            [0.0, 0.0],
        ] {
            for y in 0..2 {
                let lj = model.log_joint(&x, y).unwrap();
                assert!(lj.is_finite(), "x {x:?} class {y}: {lj}");
            }
        }
        let _ = rng::rng(0, 0);
    }

    #[test]
    fn floored_copula_contributes_floor_log() {
        // A density clamped at the floor contributes exactly ln(floor).
        let model = quick_model(37);
        let dens = model.copula(0).density(&[1e-300, 1.0 - 1e-16]);
        // Not necessarily at the floor for this net; assert the bound only.
        assert!(dens.unwrap() >= DENSITY_FLOOR);
        assert_eq!(DENSITY_FLOOR.ln(), (1e-12f64).ln());
    }

    #[test]
    fn model_serialization_round_trips_predictions() {
        let model = quick_model(41);
        let json = model.to_json().unwrap();
        let back = DccModel::<f64>::from_json(&json).unwrap();
        for x in [[0.1, 0.2], [-1.0, 1.5]] {
            let a = model.predict(&x).unwrap();
            let b = back.predict(&x).unwrap();
            assert_eq!(a.label, b.label);
            assert_eq!(a.log_joints, b.log_joints);
        }
    }
}
