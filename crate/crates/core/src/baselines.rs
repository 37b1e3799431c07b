//! Reference classifiers fitted on the same splits as the main model:
//! logistic regression with feature standardization, and Gaussian naive
//! Bayes.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, SplitPlan};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-feature standardization learned on the fit split.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct StandardScaler<T: Scalar> {
    mean: Vec<T>,
    std: Vec<T>,
}

impl<T: Scalar> StandardScaler<T> {
    pub fn fit(ds: &Dataset<T>, rows: &[usize]) -> Result<Self> {
        let d = ds.n_cols();
        let n = rows.len();
        if n < 2 {
            return Err(Error::Data("need at least 2 rows to standardize".into()));
        }
        let nf = T::of(n as f64);
        let mut mean = vec![T::zero(); d];
        for &i in rows {
            for (j, &v) in ds.row(i).iter().enumerate() {
                mean[j] = mean[j] + v;
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / nf);
        let mut var = vec![T::zero(); d];
        for &i in rows {
            for (j, &v) in ds.row(i).iter().enumerate() {
                let dlt = v - mean[j];
                var[j] = var[j] + dlt * dlt;
            }
        }
        let std: Vec<T> = var.iter().map(|&v| (v / nf).sqrt()).collect();
        if let Some(j) = std.iter().position(|&s| s <= T::zero()) {
            return Err(Error::Data(format!("feature {j} has zero variance")));
        }
        Ok(StandardScaler { mean, std })
    }

    pub fn transform(&self, x: &[T]) -> Vec<T> {
        x.iter()
            .enumerate()
            .map(|(j, &v)| (v - self.mean[j]) / self.std[j])
            .collect()
    }
}

/// L2-regularized logistic regression trained by full-batch gradient descent
/// with a backtracking line search.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct LogisticModel<T: Scalar> {
    scaler: StandardScaler<T>,
    weights: Vec<T>,
    bias: T,
    loss_trace: Vec<T>,
}

/// Fit on the fit split of `plan`. `l2` is the per-sample ridge strength;
/// `None` selects `1 / n_fit`, the common unit-C convention. Descends until
/// the gradient norm falls below `1e-8` or `max_iters` steps.
pub fn fit_logreg<T: Scalar>(
    ds: &Dataset<T>,
    plan: &SplitPlan,
    l2: Option<f64>,
    max_iters: usize,
    lr: f64,
) -> Result<LogisticModel<T>> {
    if ds.n_classes() != 2 {
        return Err(Error::InvalidInput("logistic baseline is binary".into()));
    }
    let rows = &plan.fit_idx;
    let scaler = StandardScaler::fit(ds, rows)?;
    let d = ds.n_cols();
    let n = rows.len();
    let l2 = T::of(l2.unwrap_or(1.0 / n as f64));
    let x: Vec<Vec<T>> = rows.iter().map(|&i| scaler.transform(ds.row(i))).collect();
    // Labels in {-1, +1}.
    let y: Vec<T> = rows
        .iter()
        .map(|&i| if ds.label(i) == 1 { T::one() } else { -T::one() })
        .collect();

    let loss_and_grad = |w: &[T], b: T| -> (T, Vec<T>, T) {
        let nf = T::of(n as f64);
        let mut loss = T::zero();
        let mut gw = vec![T::zero(); d];
        let mut gb = T::zero();
        for (xi, &yi) in x.iter().zip(&y) {
            let mut z = b;
            for (wj, &xj) in w.iter().zip(xi) {
                z = z + *wj * xj;
            }
            let m = -yi * z;
            // softplus(m) = log(1 + exp(-y z))
            loss = loss + m.max(T::zero()) + (-m.abs()).exp().ln_1p();
            // d/dz = -y * sigma(-y z)
            let s = if m >= T::zero() {
                T::one() / (T::one() + (-m).exp())
            } else {
                let e = m.exp();
                e / (T::one() + e)
            };
            let coeff = -yi * s;
            for (g, &xj) in gw.iter_mut().zip(xi) {
                *g = *g + coeff * xj;
            }
            gb = gb + coeff;
        }
        loss = loss / nf;
        gw.iter_mut().for_each(|g| *g = *g / nf);
        gb = gb / nf;
        // Ridge on the weights only.
        let half = T::of(0.5);
        for (g, &wj) in gw.iter_mut().zip(w) {
            loss = loss + half * l2 * wj * wj;
            *g = *g + l2 * wj;
        }
        (loss, gw, gb)
    };

    let mut w = vec![T::zero(); d];
    let mut b = T::zero();
    let (mut loss, mut gw, mut gb) = loss_and_grad(&w, b);
    let mut trace = vec![loss];
    let tol = T::of(1e-8);
    let armijo = T::of(1e-4);
    for _ in 0..max_iters {
        let gnorm2 = gw.iter().map(|&g| g * g).sum::<T>() + gb * gb;
        if gnorm2.sqrt() < tol {
            break;
        }
        let mut step = T::of(lr);
        let mut accepted = false;
        for _ in 0..60 {
            let wt: Vec<T> = w.iter().zip(&gw).map(|(&wj, &g)| wj - step * g).collect();
            let bt = b - step * gb;
            let (lt, gwt, gbt) = loss_and_grad(&wt, bt);
            if lt <= loss - armijo * step * gnorm2 {
                w = wt;
                b = bt;
                loss = lt;
                gw = gwt;
                gb = gbt;
                accepted = true;
                break;
            }
            step = step / T::of(2.0);
        }
        if !accepted {
            return Err(Error::NoConvergence(
                "logistic line search stalled".into(),
            ));
        }
        trace.push(loss);
    }
    Ok(LogisticModel {
        scaler,
        weights: w,
        bias: b,
        loss_trace: trace,
    })
}

impl<T: Scalar> LogisticModel<T> {
    /// Decision score: the logit `w . x_std + b`.
    pub fn score(&self, x: &[T]) -> T {
        let xs = self.scaler.transform(x);
        let mut z = self.bias;
        for (wj, xj) in self.weights.iter().zip(&xs) {
            z = z + *wj * *xj;
        }
        z
    }

    pub fn weights(&self) -> (&[T], T) {
        (&self.weights, self.bias)
    }

    pub fn loss_trace(&self) -> &[T] {
        &self.loss_trace
    }
}

/// Gaussian naive Bayes with a variance floor.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct GnbModel<T: Scalar> {
    /// class-major `[y * d + j]`
    means: Vec<T>,
    vars: Vec<T>,
    priors: Vec<T>,
    d: usize,
}

/// Fit per-(class, feature) means and variances on the fit split, flooring
/// each variance at `var_floor` times the largest pooled feature variance.
pub fn fit_gnb<T: Scalar>(
    ds: &Dataset<T>,
    plan: &SplitPlan,
    var_floor: f64,
) -> Result<GnbModel<T>> {
    let d = ds.n_cols();
    let k = ds.n_classes();
    let rows = &plan.fit_idx;
    // Largest pooled variance sets the floor scale.
    let n = rows.len() as f64;
    let mut pooled_mean = vec![0.0f64; d];
    for &i in rows {
        for (j, &v) in ds.row(i).iter().enumerate() {
            pooled_mean[j] += v.as_f64();
        }
    }
    pooled_mean.iter_mut().for_each(|m| *m /= n);
    let mut pooled_var = vec![0.0f64; d];
    for &i in rows {
        for (j, &v) in ds.row(i).iter().enumerate() {
            let dlt = v.as_f64() - pooled_mean[j];
            pooled_var[j] += dlt * dlt / n;
        }
    }
    let vmax = pooled_var.iter().cloned().fold(0.0f64, f64::max);
    if vmax <= 0.0 {
        return Err(Error::Data("all features are constant".into()));
    }
    let floor = T::of(var_floor * vmax);

    let mut means = vec![T::zero(); k * d];
    let mut vars = vec![T::zero(); k * d];
    let mut priors = vec![T::zero(); k];
    for y in 0..k {
        let members: Vec<usize> = rows.iter().copied().filter(|&i| ds.label(i) == y).collect();
        if members.len() < 2 {
            return Err(Error::Data(format!("class {y} has fewer than 2 fit rows")));
        }
        let m = T::of(members.len() as f64);
        priors[y] = m / T::of(rows.len() as f64);
        for j in 0..d {
            let mut mean = T::zero();
            for &i in &members {
                mean = mean + ds.value(i, j);
            }
            mean = mean / m;
            let mut var = T::zero();
            for &i in &members {
                let dlt = ds.value(i, j) - mean;
                var = var + dlt * dlt;
            }
            var = (var / m).max(floor);
            means[y * d + j] = mean;
            vars[y * d + j] = var;
        }
    }
    Ok(GnbModel {
        means,
        vars,
        priors,
        d,
    })
}

impl<T: Scalar> GnbModel<T> {
    fn class_log_joint(&self, x: &[T], y: usize) -> T {
        // Log-space evaluation keeps the result finite for any finite input.
        let half_ln_2pi = T::of(0.9189385332046727);
        let mut acc = self.priors[y].ln();
        for (j, &xj) in x.iter().enumerate() {
            let var = self.vars[y * self.d + j];
            let dlt = xj - self.means[y * self.d + j];
            acc = acc - half_ln_2pi - var.ln() / T::of(2.0) - dlt * dlt / (T::of(2.0) * var);
        }
        acc
    }

    /// Log-posterior-odds of class 1 against class 0.
    pub fn score(&self, x: &[T]) -> T {
        self.class_log_joint(x, 1) - self.class_log_joint(x, 0)
    }

    pub fn priors(&self) -> &[T] {
        &self.priors
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_synthetic, make_splits};
    use crate::rng;
    use rand::Rng;

    fn plan_all(n: usize) -> SplitPlan {
        SplitPlan {
            fit_idx: (0..n).collect(),
            cal_idx: vec![],
            test_idx: vec![],
            seed: 0,
        }
    }

    fn two_blob_dataset(n: usize, mu: [f64; 2], seed: u64) -> Dataset<f64> {
        let mut r = rng::rng(seed, 85);
        let mut features = Vec::with_capacity(n * 4);
        let mut labels = Vec::with_capacity(n * 2);
        for class in 0..2usize {
            let sign = if class == 0 { -1.0 } else { 1.0 };
            for _ in 0..n {
                let (z1, z2): (f64, f64) = rng::normal_pair(&mut r);
                features.push(sign * mu[0] + z1);
                features.push(sign * mu[1] + z2);
                labels.push(class);
            }
        }
        Dataset::new(features, 2, labels, vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn scaler_normalizes_fit_rows() {
        let ds = two_blob_dataset(400, [1.0, 0.5], 1);
        let plan = plan_all(800);
        let scaler = StandardScaler::fit(&ds, &plan.fit_idx).unwrap();
        let n = ds.n_rows() as f64;
        let mut mean = [0.0f64; 2];
        let mut var = [0.0f64; 2];
        for i in 0..ds.n_rows() {
            let t = scaler.transform(ds.row(i));
            mean[0] += t[0];
            mean[1] += t[1];
            var[0] += t[0] * t[0];
            var[1] += t[1] * t[1];
        }
        for j in 0..2 {
            assert!((mean[j] / n).abs() < 1e-9);
            assert!((var[j] / n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn logreg_separable_reaches_full_training_accuracy() {
        // 1-d, linearly separable.
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            features.push(if i < 20 { -1.0 - 0.05 * i as f64 } else { 1.0 + 0.05 * i as f64 });
            labels.push(usize::from(i >= 20));
        }
        let ds = Dataset::new(features, 1, labels, vec!["v".into()]).unwrap();
        let plan = plan_all(40);
        let model = fit_logreg(&ds, &plan, Some(1.0 / 40.0), 500, 1.0).unwrap();
        let correct = (0..40)
            .filter(|&i| usize::from(model.score(ds.row(i)) > 0.0) == ds.label(i))
            .count();
        assert_eq!(correct, 40);
    }

    #[test]
    fn logreg_symmetric_data_zero_bias() {
        // x and -x duplicated with opposite labels force bias toward zero.
        let ds = two_blob_dataset(500, [1.0, 0.0], 3);
        let plan = plan_all(1000);
        let model = fit_logreg(&ds, &plan, None, 300, 1.0).unwrap();
        let (_, bias) = model.weights();
        assert!(bias.abs() < 0.15, "bias {bias}");
    }

    #[test]
    fn logreg_direction_close_to_oracle() {
        // Known class means with identity covariance: the population decision
        // boundary normal is the mean-difference direction.
        let mu = [1.0, 0.5];
        let ds = two_blob_dataset(3000, mu, 5);
        let plan = plan_all(6000);
        let model = fit_logreg(&ds, &plan, None, 400, 1.0).unwrap();
        let (w, _) = model.weights();
        let dot = w[0] * mu[0] + w[1] * mu[1];
        let cos = dot / ((w[0] * w[0] + w[1] * w[1]).sqrt() * (mu[0] * mu[0] + mu[1] * mu[1]).sqrt());
        assert!(cos.acos().to_degrees() < 5.0, "angle {}", cos.acos().to_degrees());
    }

    #[test]
    fn logreg_loss_trace_non_increasing() {
        let ds = two_blob_dataset(300, [0.7, -0.4], 7);
        let plan = plan_all(600);
        let model = fit_logreg(&ds, &plan, None, 200, 1.0).unwrap();
        for pair in model.loss_trace().windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
    }

    #[test]
    fn gnb_symmetric_midpoint() {
        let ds = two_blob_dataset(2000, [1.0, 0.0], 9);
        let plan = plan_all(4000);
        let model = fit_gnb(&ds, &plan, 1e-9).unwrap();
        // Overall mean is the midpoint: posterior should be near half.
        let s: f64 = model.score(&[0.0, 0.0]);
        assert!(s.abs() < 0.1, "score {s}");
    }

    #[test]
    fn gnb_prior_only_odds() {
        // Equal likelihoods leave only the prior ratio.
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut r = rng::rng(4, 86);
        for i in 0..1000usize {
            let (z, _): (f64, f64) = rng::normal_pair(&mut r);
            features.push(z);
            labels.push(usize::from(i >= 700));
        }
        let ds = Dataset::new(features, 1, labels, vec!["v".into()]).unwrap();
        let plan = plan_all(1000);
        let model = fit_gnb(&ds, &plan, 1e-9).unwrap();
        // Score at a point where class likelihoods nearly coincide: with the
        // same sampling distribution for both classes, means and variances
        // match closely, so the score approaches log(0.3 / 0.7).
        let s: f64 = model.score(&[0.0]);
        assert!((s - (0.3f64 / 0.7).ln()).abs() < 0.1, "score {s}");
    }

    #[test]
    fn gnb_cannot_separate_pure_dependence() {
        // Identical marginals, opposite correlations: accuracy stays near
        // chance.
        let ds: Dataset<f64> = gen_synthetic(2000, 0.995, 13).unwrap();
        let plan = make_splits(&ds, 13).unwrap();
        let model = fit_gnb(&ds, &plan, 1e-9).unwrap();
        let correct = plan
            .test_idx
            .iter()
            .filter(|&&i| usize::from(model.score(ds.row(i)) > 0.0) == ds.label(i))
            .count();
        let acc = correct as f64 / plan.test_idx.len() as f64;
        assert!(acc <= 0.60, "accuracy {acc}");
    }

    #[test]
    fn gnb_scores_finite_everywhere() {
        let ds = two_blob_dataset(100, [0.5, 0.5], 15);
        let plan = plan_all(200);
        let model = fit_gnb(&ds, &plan, 1e-9).unwrap();
        for x in [[1e9, -1e9], [0.0, 0.0], [-1e30, 1e30]] {
            assert!(model.score(&x).is_finite());
        }
    }

    #[test]
    fn logreg_score_sign_flips_with_labels() {
        let ds = two_blob_dataset(400, [1.0, 0.2], 17);
        let flipped = Dataset::new(
            (0..ds.n_rows()).flat_map(|i| ds.row(i).to_vec()).collect(),
            2,
            ds.labels().iter().map(|&y| 1 - y).collect(),
            ds.feature_names().to_vec(),
        )
        .unwrap();
        let plan = plan_all(800);
        let m1 = fit_logreg(&ds, &plan, None, 200, 1.0).unwrap();
        let m2 = fit_logreg(&flipped, &plan, None, 200, 1.0).unwrap();
        let x = [0.8, 0.1];
        let mut r = rng::rng(1, 87);
        let _ = r.random::<f64>();
        assert!((m1.score(&x) + m2.score(&x)).abs() < 1e-6);
    }
}
