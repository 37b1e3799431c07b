//! Dataset containers, synthetic data generation, PIMA ingestion,
//! preprocessing statistics, and stratified splits.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::scalar::Scalar;

/// Header the PIMA CSV must carry, in order.
pub const PIMA_COLUMNS: [&str; 9] = [
    "Pregnancies",
    "Glucose",
    "BloodPressure",
    "SkinThickness",
    "Insulin",
    "BMI",
    "DiabetesPedigreeFunction",
    "Age",
    "Outcome",
];

/// Columns in which a literal zero denotes a missing measurement.
pub const PIMA_ZERO_MISSING: [&str; 5] = [
    "Glucose",
    "BloodPressure",
    "SkinThickness",
    "Insulin",
    "BMI",
];

/// Feature matrix with integer class labels.
///
/// Rows are stored contiguously (row-major). Construction validates that every
/// label in `0..n_classes` occurs and that all feature values are finite.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct Dataset<T: Scalar> {
    features: Vec<T>,
    n_cols: usize,
    labels: Vec<usize>,
    feature_names: Vec<String>,
    n_classes: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(
        features: Vec<T>,
        n_cols: usize,
        labels: Vec<usize>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if n_cols == 0 {
            return Err(Error::Data("dataset needs at least one feature".into()));
        }
        if features.len() % n_cols != 0 {
            return Err(Error::Data(format!(
                "feature buffer length {} is not a multiple of {} columns",
                features.len(),
                n_cols
            )));
        }
        let n_rows = features.len() / n_cols;
        if n_rows != labels.len() {
            return Err(Error::Data(format!(
                "{} feature rows but {} labels",
                n_rows,
                labels.len()
            )));
        }
        if n_rows == 0 {
            return Err(Error::Data("dataset is empty".into()));
        }
        if feature_names.len() != n_cols {
            return Err(Error::Data(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                n_cols
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite feature value".into()));
        }
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; n_classes];
        for &y in &labels {
            seen[y] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Data(format!("class {missing} has no members")));
        }
        Ok(Self {
            features,
            n_cols,
            labels,
            feature_names,
            n_classes,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn value(&self, i: usize, j: usize) -> T {
        self.features[i * self.n_cols + j]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Index of a named column.
    pub fn column(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }
}

/// Dataset variant in which cells may be missing. Missing values are explicit
/// (`None`), never a sentinel float.
#[derive(Debug, Clone)]
pub struct MaskedDataset<T: Scalar> {
    cells: Vec<Option<T>>,
    n_cols: usize,
    labels: Vec<usize>,
    feature_names: Vec<String>,
    n_classes: usize,
}

impl<T: Scalar> MaskedDataset<T> {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn cell(&self, i: usize, j: usize) -> Option<T> {
        self.cells[i * self.n_cols + j]
    }

    pub fn set_cell(&mut self, i: usize, j: usize, v: Option<T>) {
        self.cells[i * self.n_cols + j] = v;
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }
}

/// Split ratios used by every experiment: 70% train / 30% test, with 15% of
/// train carved out for calibration.
pub const TRAIN_FRACTION: f64 = 0.70;
pub const CAL_OF_TRAIN_FRACTION: f64 = 0.15;
pub const TEST_FRACTION: f64 = 0.30;

/// Disjoint fit / calibration / test index lists covering `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub fit_idx: Vec<usize>,
    pub cal_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub seed: u64,
}

impl SplitPlan {
    pub fn n_total(&self) -> usize {
        self.fit_idx.len() + self.cal_idx.len() + self.test_idx.len()
    }

    /// Audit export: `index,split` rows in index order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut tagged: Vec<(usize, &str)> = Vec::with_capacity(self.n_total());
        tagged.extend(self.fit_idx.iter().map(|&i| (i, "fit")));
        tagged.extend(self.cal_idx.iter().map(|&i| (i, "cal")));
        tagged.extend(self.test_idx.iter().map(|&i| (i, "test")));
        tagged.sort_unstable();
        writeln!(w, "index,split")?;
        for (i, tag) in tagged {
            writeln!(w, "{i},{tag}")?;
        }
        Ok(())
    }
}

/// Per-(class, feature) medians and winsor bounds learned on the fit split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct PreprocessStats<T: Scalar> {
    n_classes: usize,
    n_cols: usize,
    /// class-major: entry `[y * n_cols + j]`
    medians: Vec<T>,
    lo: Vec<T>,
    hi: Vec<T>,
}

impl<T: Scalar> PreprocessStats<T> {
    pub fn median(&self, class: usize, feature: usize) -> T {
        self.medians[class * self.n_cols + feature]
    }

    pub fn bounds(&self, class: usize, feature: usize) -> (T, T) {
        let k = class * self.n_cols + feature;
        (self.lo[k], self.hi[k])
    }
}

/// Two-class correlated Gaussians: class 0 has feature covariance
/// `[[1, rho], [rho, 1]]`, class 1 the sign-flipped `[[1, -rho], [-rho, 1]]`.
pub fn gen_synthetic<T: Scalar>(n_per_class: usize, rho: f64, seed: u64) -> Result<Dataset<T>> {
    if !(rho.is_finite() && rho.abs() < 1.0) {
        return Err(Error::InvalidInput(format!(
            "rho must satisfy |rho| < 1, got {rho}"
        )));
    }
    if n_per_class == 0 {
        return Err(Error::InvalidInput("n_per_class must be positive".into()));
    }
    let mut r = rng::rng(seed, streams::SYNTH_DATA);
    let n = 2 * n_per_class;
    let mut features = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    // Cholesky factor of [[1, c], [c, 1]] is [[1, 0], [c, sqrt(1 - c^2)]].
    for (class, c) in [(0usize, rho), (1usize, -rho)] {
        let root = (1.0 - c * c).sqrt();
        for _ in 0..n_per_class {
            let (z1, z2): (f64, f64) = rng::normal_pair(&mut r);
            features.push(T::of(z1));
            features.push(T::of(c * z1 + root * z2));
            labels.push(class);
        }
    }
    Dataset::new(
        features,
        2,
        labels,
        vec!["x1".to_string(), "x2".to_string()],
    )
}

/// Load the PIMA CSV: header row, nine columns, last column `Outcome` with
/// values in {0, 1}.
pub fn load_pima<T: Scalar>(path: &Path) -> Result<Dataset<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("cannot read header: {e}")))?
        .clone();
    if headers.len() != 9 {
        return Err(Error::Data(format!(
            "expected 9 columns, found {}",
            headers.len()
        )));
    }
    if &headers[8] != "Outcome" {
        return Err(Error::Data(format!(
            "last column must be named Outcome, found {:?}",
            &headers[8]
        )));
    }
    let feature_names: Vec<String> = headers.iter().take(8).map(str::to_string).collect();

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let row = row_idx + 1;
        let record = record.map_err(|e| Error::Data(format!("row {row}: {e}")))?;
        if record.len() != 9 {
            return Err(Error::Parse {
                row,
                col: record.len(),
                message: format!("expected 9 columns, found {}", record.len()),
            });
        }
        for (col_idx, cell) in record.iter().take(8).enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                col: col_idx + 1,
                message: format!("non-numeric cell {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    col: col_idx + 1,
                    message: format!("non-finite cell {cell:?}"),
                });
            }
            features.push(T::of(v));
        }
        let label_cell = &record[8];
        match label_cell {
            "0" => labels.push(0),
            "1" => labels.push(1),
            other => {
                return Err(Error::Parse {
                    row,
                    col: 9,
                    message: format!("unknown label value {other:?}, expected 0 or 1"),
                })
            }
        }
    }
    Dataset::new(features, 8, labels, feature_names)
}

/// Turn literal zeros in the five physiological PIMA columns into missing
/// markers. Other columns (notably `Pregnancies`) are untouched.
pub fn mark_zeros_missing<T: Scalar>(ds: &Dataset<T>) -> Result<MaskedDataset<T>> {
    let zero_cols: Vec<usize> = PIMA_ZERO_MISSING
        .iter()
        .map(|name| {
            ds.column(name).ok_or_else(|| {
                Error::Data(format!("column {name} not present; not a PIMA dataset"))
            })
        })
        .collect::<Result<_>>()?;
    let n_cols = ds.n_cols();
    let mut cells = Vec::with_capacity(ds.n_rows() * n_cols);
    for i in 0..ds.n_rows() {
        for (j, &v) in ds.row(i).iter().enumerate() {
            if zero_cols.contains(&j) && v == T::zero() {
                cells.push(None);
            } else {
                cells.push(Some(v));
            }
        }
    }
    Ok(MaskedDataset {
        cells,
        n_cols,
        labels: ds.labels().to_vec(),
        feature_names: ds.feature_names().to_vec(),
        n_classes: ds.n_classes(),
    })
}

/// Type-7 quantile (linear interpolation between order statistics) of a
/// sorted, nonempty slice.
pub fn quantile_type7<T: Scalar>(sorted: &[T], q: f64) -> T {
    debug_assert!(!sorted.is_empty());
    debug_assert!((0.0..=1.0).contains(&q));
    let m = sorted.len();
    if m == 1 {
        return sorted[0];
    }
    let h = (m - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = lo.min(m - 2) + 1;
    let frac = T::of(h - lo as f64);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

const WINSOR_Q: f64 = 0.005;

/// Learn per-(class, feature) medians and winsor bounds from the fit rows of
/// `plan` only. Bounds are the 0.005/0.995 type-7 quantiles of the
/// median-imputed fit values.
pub fn fit_preprocess<T: Scalar>(
    ds: &MaskedDataset<T>,
    plan: &SplitPlan,
) -> Result<PreprocessStats<T>> {
    let (k, d) = (ds.n_classes(), ds.n_cols());
    let mut medians = vec![T::zero(); k * d];
    let mut lo = vec![T::zero(); k * d];
    let mut hi = vec![T::zero(); k * d];
    for class in 0..k {
        for feat in 0..d {
            let mut observed: Vec<T> = plan
                .fit_idx
                .iter()
                .filter(|&&i| ds.label(i) == class)
                .filter_map(|&i| ds.cell(i, feat))
                .collect();
            let n_total = plan
                .fit_idx
                .iter()
                .filter(|&&i| ds.label(i) == class)
                .count();
            if observed.is_empty() {
                return Err(Error::EmptyCell {
                    class,
                    feature: feat,
                    message: "no observed fit values to impute from".into(),
                });
            }
            observed.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let med = quantile_type7(&observed, 0.5);
            // Imputed fit values = observed values plus one median per missing cell.
            let mut imputed = observed;
            imputed.resize(n_total, med);
            imputed.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let idx = class * d + feat;
            medians[idx] = med;
            lo[idx] = quantile_type7(&imputed, WINSOR_Q);
            hi[idx] = quantile_type7(&imputed, 1.0 - WINSOR_Q);
            debug_assert!(lo[idx] <= med && med <= hi[idx]);
        }
    }
    Ok(PreprocessStats {
        n_classes: k,
        n_cols: d,
        medians,
        lo,
        hi,
    })
}

/// Impute missing cells with the class-conditional median of the row's label,
/// then clip every value to that (class, feature) winsor interval. Applied
/// uniformly to fit, calibration, and test rows.
pub fn apply_preprocess<T: Scalar>(
    ds: &MaskedDataset<T>,
    stats: &PreprocessStats<T>,
) -> Result<Dataset<T>> {
    if stats.n_classes != ds.n_classes() || stats.n_cols != ds.n_cols() {
        return Err(Error::InvalidInput(
            "preprocess stats shape does not match dataset".into(),
        ));
    }
    let d = ds.n_cols();
    let mut features = Vec::with_capacity(ds.n_rows() * d);
    for i in 0..ds.n_rows() {
        let y = ds.label(i);
        for j in 0..d {
            let raw = ds.cell(i, j).unwrap_or_else(|| stats.median(y, j));
            let (lo, hi) = stats.bounds(y, j);
            features.push(raw.max(lo).min(hi));
        }
    }
    Dataset::new(
        features,
        d,
        ds.labels().to_vec(),
        ds.feature_names().to_vec(),
    )
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Deterministic stratified split: 70% train / 30% test, with a 15% stratified
/// calibration subset carved out of train. Fit = train minus calibration.
pub fn make_splits<T: Scalar>(ds: &Dataset<T>, seed: u64) -> Result<SplitPlan> {
    let counts = ds.class_counts();
    if let Some((class, &c)) = counts.iter().enumerate().find(|(_, &c)| c < 3) {
        return Err(Error::Data(format!(
            "class {class} has only {c} members; need at least 3 to stratify"
        )));
    }
    let mut r = rng::rng(seed, streams::SPLITS);
    let mut fit_idx = Vec::new();
    let mut cal_idx = Vec::new();
    let mut test_idx = Vec::new();
    for class in 0..ds.n_classes() {
        let members: Vec<usize> = (0..ds.n_rows()).filter(|&i| ds.label(i) == class).collect();
        let order = rng::shuffled_indices(&mut r, members.len());
        let n_y = members.len();
        let n_test = round_half_up(TEST_FRACTION * n_y as f64).min(n_y - 1).max(1);
        let n_train = n_y - n_test;
        let n_cal = round_half_up(CAL_OF_TRAIN_FRACTION * n_train as f64).min(n_train - 1);
        for (pos, &slot) in order.iter().enumerate() {
            let idx = members[slot];
            if pos < n_test {
                test_idx.push(idx);
            } else if pos < n_test + n_cal {
                cal_idx.push(idx);
            } else {
                fit_idx.push(idx);
            }
        }
    }
    fit_idx.sort_unstable();
    cal_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok(SplitPlan {
        fit_idx,
        cal_idx,
        test_idx,
        seed,
    })
}

/// Copy the rows named by `idx` into a standalone dataset.
pub fn subset<T: Scalar>(ds: &Dataset<T>, idx: &[usize]) -> Result<Dataset<T>> {
    let d = ds.n_cols();
    let mut features = Vec::with_capacity(idx.len() * d);
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        features.extend_from_slice(ds.row(i));
        labels.push(ds.label(i));
    }
    Dataset::new(features, d, labels, ds.feature_names().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy_masked(cells: Vec<Option<f64>>, n_cols: usize, labels: Vec<usize>) -> MaskedDataset<f64> {
        let n_classes = labels.iter().max().unwrap() + 1;
        MaskedDataset {
            cells,
            n_cols,
            feature_names: (0..n_cols).map(|j| format!("f{j}")).collect(),
            labels,
            n_classes,
        }
    }

    #[test]
    fn synthetic_shape_and_determinism() {
        let ds: Dataset<f64> = gen_synthetic(2000, 0.995, 11).unwrap();
        assert_eq!(ds.n_rows(), 4000);
        assert_eq!(ds.n_cols(), 2);
        assert_eq!(ds.class_counts(), vec![2000, 2000]);
        let again: Dataset<f64> = gen_synthetic(2000, 0.995, 11).unwrap();
        assert_eq!(ds.row(17), again.row(17));
    }

    #[test]
    fn synthetic_single_row_per_class() {
        let ds: Dataset<f64> = gen_synthetic(1, 0.0, 3).unwrap();
        assert_eq!(ds.n_rows(), 2);
        assert!(ds.row(0).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn synthetic_rejects_bad_rho() {
        assert!(gen_synthetic::<f64>(10, 1.0, 0).is_err());
        assert!(gen_synthetic::<f64>(10, -1.5, 0).is_err());
    }

    #[test]
    fn synthetic_sample_correlation_matches_rho() {
        // Monte Carlo estimate of the class-0 feature correlation.
        let ds: Dataset<f64> = gen_synthetic(100_000, 0.9, 21).unwrap();
        let rows: Vec<&[f64]> = (0..100_000).map(|i| ds.row(i)).collect();
        let n = rows.len() as f64;
        let (mut m1, mut m2) = (0.0, 0.0);
        for r in &rows {
            m1 += r[0];
            m2 += r[1];
        }
        m1 /= n;
        m2 /= n;
        let (mut c11, mut c22, mut c12) = (0.0, 0.0, 0.0);
        for r in &rows {
            c11 += (r[0] - m1) * (r[0] - m1);
            c22 += (r[1] - m2) * (r[1] - m2);
            c12 += (r[0] - m1) * (r[1] - m2);
        }
        let corr = c12 / (c11.sqrt() * c22.sqrt());
        assert!((corr - 0.9).abs() < 0.01, "corr {corr}");
        // Class 1 carries the opposite sign.
        let rows1: Vec<&[f64]> = (100_000..200_000).map(|i| ds.row(i)).collect();
        let mut c12_1 = 0.0;
        for r in &rows1 {
            c12_1 += r[0] * r[1];
        }
        assert!(c12_1 / 100_000.0 < -0.85);
    }

    #[test]
    fn splits_sizes_balanced_4000() {
        let ds: Dataset<f64> = gen_synthetic(2000, 0.5, 1).unwrap();
        let plan = make_splits(&ds, 1).unwrap();
        assert_eq!(plan.test_idx.len(), 1200);
        assert_eq!(plan.cal_idx.len(), 420);
        assert_eq!(plan.fit_idx.len(), 2380);
    }

    #[test]
    fn splits_partition_and_determinism() {
        let ds: Dataset<f64> = gen_synthetic(151, 0.3, 9).unwrap();
        let plan = make_splits(&ds, 9).unwrap();
        let plan2 = make_splits(&ds, 9).unwrap();
        assert_eq!(plan, plan2);
        let mut all: Vec<usize> = plan
            .fit_idx
            .iter()
            .chain(&plan.cal_idx)
            .chain(&plan.test_idx)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..ds.n_rows()).collect::<Vec<_>>());
    }

    #[test]
    fn splits_stratified_within_one_sample() {
        // 768 rows, 500/268 class balance as in the clinical data.
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..768usize {
            features.push(i as f64);
            labels.push(usize::from(i >= 500));
        }
        let ds = Dataset::new(features, 1, labels, vec!["v".into()]).unwrap();
        let plan = make_splits(&ds, 4).unwrap();
        let global = 268.0 / 768.0;
        for split in [&plan.fit_idx, &plan.cal_idx, &plan.test_idx] {
            let pos = split.iter().filter(|&&i| ds.label(i) == 1).count() as f64;
            assert!(
                (pos - split.len() as f64 * global).abs() <= 1.0,
                "split of {} rows has {} positives",
                split.len(),
                pos
            );
        }
    }

    #[test]
    fn split_too_small_class_errors() {
        let ds = Dataset::new(
            vec![0.0f64, 1.0, 2.0, 3.0],
            1,
            vec![0, 0, 0, 1],
            vec!["v".into()],
        )
        .unwrap();
        assert!(make_splits(&ds, 0).is_err());
    }

    #[test]
    fn quantile_conventions() {
        let v = [1.0f64, 2.0, 100.0];
        assert_eq!(quantile_type7(&v, 0.5), 2.0);
        let constant = [5.0f64, 5.0, 5.0, 5.0];
        assert_eq!(quantile_type7(&constant, WINSOR_Q), 5.0);
        assert_eq!(quantile_type7(&constant, 1.0 - WINSOR_Q), 5.0);
    }

    #[test]
    fn quantile_uniform_tail_bounds() {
        let mut r = rng::rng(5, 77);
        let mut v: Vec<f64> = (0..1000).map(|_| r.random::<f64>()).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let lo = quantile_type7(&v, 0.005);
        let hi = quantile_type7(&v, 0.995);
        assert!((lo - 0.005).abs() < 0.01, "lo {lo}");
        assert!((hi - 0.995).abs() < 0.01, "hi {hi}");
    }

    #[test]
    fn mark_zeros_only_in_designated_columns() {
        let names: Vec<String> = PIMA_COLUMNS[..8].iter().map(|s| s.to_string()).collect();
        // Row 0: zeros everywhere. Row 1: all nonzero.
        let mut features = vec![0.0f64; 8];
        features.extend_from_slice(&[1.0, 120.0, 70.0, 20.0, 80.0, 30.0, 0.5, 40.0]);
        let ds = Dataset::new(features, 8, vec![0, 1], names).unwrap();
        let masked = mark_zeros_missing(&ds).unwrap();
        assert_eq!(masked.cell(0, 0), Some(0.0)); // Pregnancies stays
        for j in 1..=5 {
            assert_eq!(masked.cell(0, j), None, "col {j}");
        }
        assert_eq!(masked.cell(0, 6), Some(0.0)); // DiabetesPedigreeFunction stays
        for j in 0..8 {
            assert!(masked.cell(1, j).is_some());
        }
    }

    #[test]
    fn preprocess_median_imputation_and_clipping() {
        // One feature, one class; fit rows carry {1, 2, 100} plus a missing.
        let cells = vec![
            Some(1.0),
            Some(2.0),
            Some(100.0),
            None,
            Some(500.0),
            Some(-3.0),
        ];
        let ds = toy_masked(cells, 1, vec![0; 6]);
        let plan = SplitPlan {
            fit_idx: vec![0, 1, 2, 3],
            cal_idx: vec![4],
            test_idx: vec![5],
            seed: 0,
        };
        let stats = fit_preprocess(&ds, &plan).unwrap();
        assert_eq!(stats.median(0, 0), 2.0); // median of the observed {1,2,100}
        let out = apply_preprocess(&ds, &stats).unwrap();
        // Missing cell imputed with the median, inside bounds afterwards.
        let (lo, hi) = stats.bounds(0, 0);
        assert!(lo <= out.value(3, 0) && out.value(3, 0) <= hi);
        // Out-of-range values are clipped to the bounds.
        assert_eq!(out.value(4, 0), hi);
        assert_eq!(out.value(5, 0), lo);
    }

    #[test]
    fn preprocess_median_odd_count() {
        let cells = vec![Some(1.0), Some(2.0), Some(100.0)];
        let ds = toy_masked(cells, 1, vec![0; 3]);
        let plan = SplitPlan {
            fit_idx: vec![0, 1, 2],
            cal_idx: vec![],
            test_idx: vec![],
            seed: 0,
        };
        let stats = fit_preprocess(&ds, &plan).unwrap();
        assert_eq!(stats.median(0, 0), 2.0);
    }

    #[test]
    fn preprocess_errors_on_all_missing_cell() {
        let cells = vec![None, None, Some(1.0)];
        let ds = toy_masked(cells, 1, vec![0, 0, 0]);
        let plan = SplitPlan {
            fit_idx: vec![0, 1],
            cal_idx: vec![],
            test_idx: vec![2],
            seed: 0,
        };
        match fit_preprocess(&ds, &plan) {
            Err(Error::EmptyCell { class, feature, .. }) => {
                assert_eq!((class, feature), (0, 0));
            }
            other => panic!("expected EmptyCell, got {other:?}"),
        }
    }

    #[test]
    fn preprocess_reads_only_fit_rows() {
        let cells = vec![Some(1.0), Some(2.0), Some(3.0), Some(4.0), Some(5.0)];
        let ds = toy_masked(cells.clone(), 1, vec![0; 5]);
        let plan = SplitPlan {
            fit_idx: vec![0, 1, 2],
            cal_idx: vec![3],
            test_idx: vec![4],
            seed: 0,
        };
        let stats = fit_preprocess(&ds, &plan).unwrap();
        let mut perturbed = ds.clone();
        perturbed.set_cell(3, 0, Some(99.0));
        perturbed.set_cell(4, 0, None);
        let stats2 = fit_preprocess(&perturbed, &plan).unwrap();
        assert_eq!(stats, stats2);
    }

    #[test]
    fn apply_preprocess_is_idempotent() {
        let cells = vec![
            Some(10.0),
            None,
            Some(-20.0),
            Some(3.0),
            Some(4.0),
            Some(5.0),
            Some(6.0),
            Some(7.0),
        ];
        let ds = toy_masked(cells, 1, vec![0; 8]);
        let plan = SplitPlan {
            fit_idx: (0..8).collect(),
            cal_idx: vec![],
            test_idx: vec![],
            seed: 0,
        };
        let stats = fit_preprocess(&ds, &plan).unwrap();
        let once = apply_preprocess(&ds, &stats).unwrap();
        // Re-wrap the clean output and apply again.
        let rewrapped = toy_masked(
            (0..8).map(|i| Some(once.value(i, 0))).collect(),
            1,
            once.labels().to_vec(),
        );
        let twice = apply_preprocess(&rewrapped, &stats).unwrap();
        for i in 0..8 {
            assert_eq!(once.value(i, 0), twice.value(i, 0));
        }
    }

    #[test]
    fn split_csv_export() {
        let plan = SplitPlan {
            fit_idx: vec![0, 3],
            cal_idx: vec![2],
            test_idx: vec![1],
            seed: 0,
        };
        let mut buf = Vec::new();
        plan.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "index,split\n0,fit\n1,test\n2,cal\n3,fit\n");
    }
}
