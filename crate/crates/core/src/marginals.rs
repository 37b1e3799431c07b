//! Univariate marginal estimation and the probability integral transform.
//!
//! Phase one of model fitting: per (feature, class) — or pooled across
//! classes, or the oracle standard normal — store a smoothed empirical CDF
//! and a Gaussian-kernel density estimate, then map feature vectors to
//! pseudo-observations on the open unit cube.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, SplitPlan};
use crate::error::{Error, Result};
use crate::scalar::{normal_cdf, normal_pdf, Scalar};

use crate::DENSITY_FLOOR;

/// Density floor applied before any logarithm.
pub const PDF_FLOOR: f64 = DENSITY_FLOOR;

/// Marginal estimation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginalMode {
    /// True standard-normal marginals (synthetic study only).
    OracleNormal,
    /// One estimator per feature, fit on all classes together.
    Pooled,
    /// One estimator per (feature, class).
    PerClass,
}

impl MarginalMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            MarginalMode::OracleNormal => "oracle_normal",
            MarginalMode::Pooled => "pooled",
            MarginalMode::PerClass => "per_class",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "oracle_normal" => Ok(MarginalMode::OracleNormal),
            "pooled" => Ok(MarginalMode::Pooled),
            "per_class" => Ok(MarginalMode::PerClass),
            other => Err(Error::InvalidInput(format!(
                "unknown marginal mode {other:?} (expected oracle_normal, pooled, or per_class)"
            ))),
        }
    }
}

/// One fitted (feature, class-or-pooled) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
struct Cell<T: Scalar> {
    /// Sorted fit-split sample values.
    samples: Vec<T>,
    /// Distinct sample values, ascending.
    distinct: Vec<T>,
    /// Cumulative count at each distinct value (strictly increasing).
    cum: Vec<u32>,
    bandwidth: T,
    /// CDF clip: outputs live in `[delta, 1 - delta]`.
    delta: T,
}

impl<T: Scalar> Cell<T> {
    fn fit(mut values: Vec<T>, scale: f64, exponent: f64) -> Result<Self> {
        let m = values.len();
        if m < 2 {
            return Err(Error::Data(format!(
                "need at least 2 samples to fit a marginal, got {m}"
            )));
        }
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mf = m as f64;
        let mean = values.iter().map(|v| v.as_f64()).sum::<f64>() / mf;
        let var = values
            .iter()
            .map(|v| {
                let d = v.as_f64() - mean;
                d * d
            })
            .sum::<f64>()
            / (mf - 1.0);
        let mut distinct = Vec::new();
        let mut cum = Vec::new();
        for (i, &v) in values.iter().enumerate() {
            if distinct.last() == Some(&v) {
                *cum.last_mut().unwrap() = (i + 1) as u32;
            } else {
                distinct.push(v);
                cum.push((i + 1) as u32);
            }
        }
        Ok(Cell {
            samples: values,
            distinct,
            cum,
            bandwidth: T::of(bandwidth(scale, var.sqrt(), m, exponent)),
            delta: T::of(1.0 / (2.0 * (mf + 1.0))),
        })
    }

    /// Interpolated-rank CDF: `F(v_(r)) = r/(m+1)` with linear interpolation
    /// between consecutive distinct order statistics and saturation at the
    /// clip bounds outside the sample range. Tied samples take the highest
    /// rank of the tie block so the function stays single-valued.
    fn cdf(&self, x: T) -> T {
        let m1 = T::of(self.samples.len() as f64 + 1.0);
        let first = self.distinct[0];
        let last = *self.distinct.last().unwrap();
        if x < first {
            return self.delta;
        }
        if x > last {
            return T::one() - self.delta;
        }
        let k = match self
            .distinct
            .binary_search_by(|v| v.partial_cmp(&x).unwrap())
        {
            Ok(k) => return T::of(self.cum[k] as f64) / m1,
            Err(k) => k, // distinct[k-1] < x < distinct[k]
        };
        let (x0, x1) = (self.distinct[k - 1], self.distinct[k]);
        let (f0, f1) = (
            T::of(self.cum[k - 1] as f64) / m1,
            T::of(self.cum[k] as f64) / m1,
        );
        f0 + (x - x0) / (x1 - x0) * (f1 - f0)
    }

    /// Gaussian-kernel density estimate, floored at [`PDF_FLOOR`].
    fn pdf(&self, x: T) -> T {
        let h = self.bandwidth;
        let mut acc = T::zero();
        for &xi in &self.samples {
            acc = acc + normal_pdf((x - xi) / h);
        }
        let val = acc / (T::of(self.samples.len() as f64) * h);
        val.max(T::of(PDF_FLOOR))
    }
}

/// `h = scale * sigma_hat * m^exponent`.
pub fn bandwidth(scale: f64, sigma_hat: f64, m: usize, exponent: f64) -> f64 {
    scale * sigma_hat * (m as f64).powf(exponent)
}

/// Fitted marginal CDFs/PDFs for every feature and class under a
/// [`MarginalMode`]. Immutable after fitting; evaluation is pure.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct MarginalModel<T: Scalar> {
    mode: MarginalMode,
    n_features: usize,
    n_classes: usize,
    /// Layout: per-class `[y * n_features + j]`, pooled `[j]`, oracle empty.
    cells: Vec<Cell<T>>,
}

/// Default bandwidth rule: `h = 10 * sigma_hat * m^-0.51`.
pub const DEFAULT_BANDWIDTH_SCALE: f64 = 10.0;
pub const DEFAULT_BANDWIDTH_EXPONENT: f64 = -0.51;

/// Fit marginal estimators on the fit split of `plan`.
pub fn fit_marginals<T: Scalar>(
    ds: &Dataset<T>,
    plan: &SplitPlan,
    mode: MarginalMode,
    bandwidth_scale: f64,
    bandwidth_exponent: f64,
) -> Result<MarginalModel<T>> {
    if bandwidth_scale <= 0.0 || !bandwidth_scale.is_finite() {
        return Err(Error::InvalidInput(format!(
            "bandwidth scale must be positive, got {bandwidth_scale}"
        )));
    }
    let (d, k) = (ds.n_cols(), ds.n_classes());
    let mut cells = Vec::new();
    match mode {
        MarginalMode::OracleNormal => {}
        MarginalMode::Pooled => {
            for j in 0..d {
                let values: Vec<T> = plan.fit_idx.iter().map(|&i| ds.value(i, j)).collect();
                let cell = Cell::fit(values, bandwidth_scale, bandwidth_exponent)
                    .map_err(|e| annotate_cell(e, None, j))?;
                if cell.distinct.len() < 2 {
                    return Err(Error::EmptyCell {
                        class: 0,
                        feature: j,
                        message: "zero variance in pooled fit values".into(),
                    });
                }
                cells.push(cell);
            }
        }
        MarginalMode::PerClass => {
            for y in 0..k {
                for j in 0..d {
                    let values: Vec<T> = plan
                        .fit_idx
                        .iter()
                        .filter(|&&i| ds.label(i) == y)
                        .map(|&i| ds.value(i, j))
                        .collect();
                    let cell = Cell::fit(values, bandwidth_scale, bandwidth_exponent)
                        .map_err(|e| annotate_cell(e, Some(y), j))?;
                    if cell.distinct.len() < 2 {
                        return Err(Error::EmptyCell {
                            class: y,
                            feature: j,
                            message: "zero variance in fit values".into(),
                        });
                    }
                    cells.push(cell);
                }
            }
        }
    }
    Ok(MarginalModel {
        mode,
        n_features: d,
        n_classes: k,
        cells,
    })
}

fn annotate_cell(e: Error, class: Option<usize>, feature: usize) -> Error {
    match e {
        Error::Data(msg) => Error::EmptyCell {
            class: class.unwrap_or(0),
            feature,
            message: msg,
        },
        other => other,
    }
}

impl<T: Scalar> MarginalModel<T> {
    pub fn mode(&self) -> MarginalMode {
        self.mode
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    fn cell(&self, j: usize, y: usize) -> &Cell<T> {
        match self.mode {
            MarginalMode::Pooled => &self.cells[j],
            MarginalMode::PerClass => &self.cells[y * self.n_features + j],
            MarginalMode::OracleNormal => unreachable!("oracle mode has no cells"),
        }
    }

    /// Smoothed CDF value in `[delta, 1 - delta]` for feature `j` under class
    /// `y` (ignored in pooled and oracle modes).
    pub fn cdf(&self, j: usize, y: usize, x: T) -> T {
        match self.mode {
            MarginalMode::OracleNormal => {
                let delta = T::of(PDF_FLOOR);
                normal_cdf(x).max(delta).min(T::one() - delta)
            }
            _ => self.cell(j, y).cdf(x),
        }
    }

    /// Kernel density estimate (or oracle normal pdf), floored at
    /// [`PDF_FLOOR`].
    pub fn pdf(&self, j: usize, y: usize, x: T) -> T {
        match self.mode {
            MarginalMode::OracleNormal => normal_pdf(x).max(T::of(PDF_FLOOR)),
            _ => self.cell(j, y).pdf(x),
        }
    }

    /// Componentwise probability integral transform of `x` under class `y`.
    pub fn pit_transform(&self, x: &[T], y: usize) -> Vec<T> {
        debug_assert_eq!(x.len(), self.n_features);
        x.iter()
            .enumerate()
            .map(|(j, &xj)| self.cdf(j, y, xj))
            .collect()
    }

    /// Bandwidth of a fitted cell (for inspection and tests).
    pub fn cell_bandwidth(&self, j: usize, y: usize) -> Option<T> {
        match self.mode {
            MarginalMode::OracleNormal => None,
            _ => Some(self.cell(j, y).bandwidth),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::gen_synthetic;
    use crate::rng;

    fn plan_all(n: usize) -> SplitPlan {
        SplitPlan {
            fit_idx: (0..n).collect(),
            cal_idx: vec![],
            test_idx: vec![],
            seed: 0,
        }
    }

    fn cell_from(values: &[f64]) -> Cell<f64> {
        Cell::fit(values.to_vec(), 10.0, -0.51).unwrap()
    }

    #[test]
    fn bandwidth_rule_direct_evaluation() {
        // h = scale * sigma * m^exponent evaluated directly.
        let h = bandwidth(10.0, 1.0, 4000, -0.51);
        let expected = 10.0 * (4000f64).powf(-0.51);
        assert_eq!(h, expected);
        assert!((h - 0.14552).abs() < 1e-3, "h = {h}");
    }

    #[test]
    fn cdf_rank_convention_and_clipping() {
        let cell = cell_from(&[1.0, 2.0, 3.0]);
        assert_eq!(cell.cdf(2.0), 0.5); // rank 2 of m+1 = 4
        assert_eq!(cell.cdf(0.0), cell.delta);
        assert_eq!(cell.cdf(9.0), 1.0 - cell.delta);
        assert_eq!(cell.cdf(1.5), 0.375); // halfway between 1/4 and 2/4
    }

    #[test]
    fn cdf_handles_ties() {
        let cell = cell_from(&[1.0, 2.0, 2.0, 3.0]);
        assert_eq!(cell.cdf(2.0), 3.0 / 5.0); // highest rank of the tie block
        assert!(cell.cdf(1.9) < cell.cdf(2.0));
        assert!(cell.cdf(2.0) < cell.cdf(2.1));
    }

    #[test]
    fn cdf_monotone_on_random_sets() {
        let mut r = rng::rng(3, 50);
        for _ in 0..20 {
            let values: Vec<f64> = rng::standard_normals(&mut r, 41);
            let cell = cell_from(&values);
            let probes: Vec<f64> = rng::standard_normals(&mut r, 100);
            let mut sorted = probes.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut prev = 0.0;
            for &x in &sorted {
                let u = cell.cdf(x);
                assert!(u >= prev, "cdf not monotone at {x}");
                assert!(u > 0.0 && u < 1.0);
                prev = u;
            }
        }
    }

    #[test]
    fn cdf_of_standard_normal_sample_near_phi() {
        let xs: Vec<f64> = rng::standard_normals(&mut rng::rng(8, 51), 2000);
        let cell = cell_from(&xs);
        assert!((cell.cdf(0.0) - 0.5).abs() < 0.03);
    }

    #[test]
    fn kde_single_kernel_at_center() {
        // One sample at zero with h = 1 evaluates to the standard normal peak.
        let mut cell = cell_from(&[0.0, 1.0]);
        cell.samples = vec![0.0];
        cell.bandwidth = 1.0;
        assert!((cell.pdf(0.0) - 0.39894228040143267).abs() < 1e-12);
    }

    #[test]
    fn kde_floor_far_from_samples() {
        let cell = cell_from(&[0.0, 0.5, 1.0]);
        assert_eq!(cell.pdf(1e6), PDF_FLOOR);
    }

    #[test]
    fn kde_consistency_at_zero() {
        let xs: Vec<f64> = rng::standard_normals(&mut rng::rng(4, 52), 2000);
        let cell = cell_from(&xs);
        assert!((cell.pdf(0.0) - 0.3989).abs() < 0.05);
    }

    #[test]
    fn kde_mass_integrates_to_one() {
        let xs: Vec<f64> = rng::standard_normals(&mut rng::rng(5, 53), 500);
        let cell = cell_from(&xs);
        let h = cell.bandwidth;
        let lo = cell.samples[0] - 5.0 * h;
        let hi = *cell.samples.last().unwrap() + 5.0 * h;
        let steps = 4000;
        let dx = (hi - lo) / steps as f64;
        let mut mass = 0.0;
        for i in 0..=steps {
            let x = lo + i as f64 * dx;
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            mass += w * cell.pdf(x);
        }
        mass *= dx;
        assert!((0.995..=1.005).contains(&mass), "mass {mass}");
    }

    #[test]
    fn oracle_mode_uses_phi() {
        let ds: Dataset<f64> = gen_synthetic(50, 0.2, 1).unwrap();
        let plan = plan_all(100);
        let model =
            fit_marginals(&ds, &plan, MarginalMode::OracleNormal, 10.0, -0.51).unwrap();
        let u = model.pit_transform(&[0.0, 0.0], 0);
        assert_eq!(u, vec![0.5, 0.5]);
        assert!((model.pdf(0, 0, 0.0) - 0.3989422804014327).abs() < 1e-12);
    }

    #[test]
    fn pooled_mode_ignores_class() {
        let ds: Dataset<f64> = gen_synthetic(200, 0.4, 7).unwrap();
        let plan = plan_all(400);
        let model = fit_marginals(&ds, &plan, MarginalMode::Pooled, 10.0, -0.51).unwrap();
        let x = [0.3, -1.2];
        assert_eq!(model.pit_transform(&x, 0), model.pit_transform(&x, 1));
    }

    #[test]
    fn per_class_pit_is_nearly_uniform() {
        // Kolmogorov-Smirnov statistic of the PIT of a cell's own fit sample
        // against Uniform(0,1), compared to the 1% critical value.
        let ds: Dataset<f64> = gen_synthetic(1190, 0.995, 13).unwrap();
        let plan = plan_all(2380);
        let model = fit_marginals(&ds, &plan, MarginalMode::PerClass, 10.0, -0.51).unwrap();
        for y in 0..2 {
            for j in 0..2 {
                let mut us: Vec<f64> = plan
                    .fit_idx
                    .iter()
                    .filter(|&&i| ds.label(i) == y)
                    .map(|&i| model.cdf(j, y, ds.value(i, j)))
                    .collect();
                us.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let m = us.len() as f64;
                let mut ks: f64 = 0.0;
                for (i, &u) in us.iter().enumerate() {
                    let upper = (i + 1) as f64 / m - u;
                    let lower = u - i as f64 / m;
                    ks = ks.max(upper.max(lower));
                }
                let critical = 1.628 / m.sqrt(); // 1% level
                assert!(ks <= critical, "feature {j} class {y}: ks {ks} > {critical}");
                assert!(ks <= 0.05);
            }
        }
    }

    #[test]
    fn zero_variance_cell_is_an_error() {
        let features = vec![1.0f64, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0];
        let ds = Dataset::new(
            features,
            2,
            vec![0, 0, 1, 1],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let plan = plan_all(4);
        match fit_marginals(&ds, &plan, MarginalMode::PerClass, 10.0, -0.51) {
            Err(Error::EmptyCell { class, feature, .. }) => {
                assert_eq!((class, feature), (0, 0))
            }
            other => panic!("expected EmptyCell, got {other:?}"),
        }
    }

    #[test]
    fn per_class_cell_sizes_from_split() {
        let ds: Dataset<f64> = gen_synthetic(2000, 0.5, 3).unwrap();
        let plan = crate::dataset::make_splits(&ds, 3).unwrap();
        let model = fit_marginals(&ds, &plan, MarginalMode::PerClass, 10.0, -0.51).unwrap();
        // 2380 fit rows split evenly over two classes.
        assert_eq!(model.cell(0, 0).samples.len(), 1190);
        assert_eq!(model.cell(0, 1).samples.len(), 1190);
    }

    #[test]
    fn serialization_round_trip_preserves_evaluations() {
        let ds: Dataset<f64> = gen_synthetic(100, 0.6, 5).unwrap();
        let plan = plan_all(200);
        let model = fit_marginals(&ds, &plan, MarginalMode::PerClass, 10.0, -0.51).unwrap();
        let json = model.to_json().unwrap();
        let back = MarginalModel::<f64>::from_json(&json).unwrap();
        for &x in &[-1.3, 0.0, 0.7] {
            assert_eq!(model.cdf(0, 1, x), back.cdf(0, 1, x));
            assert_eq!(model.pdf(1, 0, x), back.pdf(1, 0, x));
        }
    }
}
