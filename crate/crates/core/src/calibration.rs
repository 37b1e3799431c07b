//! Platt sigmoid calibration, fit on held-out scores by Newton iteration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Calibrated probability map `sigma(a * score + b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct PlattModel<T: Scalar> {
    pub a: T,
    pub b: T,
}

fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Fit `(a, b)` by maximizing the Bernoulli likelihood of the smoothed
/// targets `(N+ + 1)/(N+ + 2)` and `1/(N- + 2)` (the smoothing keeps the
/// optimum finite even for perfectly separated scores), via Newton steps
/// with halving until the gradient norm drops below `tol`.
pub fn fit_platt<T: Scalar>(
    scores: &[T],
    labels: &[usize],
    max_iters: usize,
    tol: f64,
) -> Result<PlattModel<T>> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::InvalidInput(
            "scores and labels must be nonempty and equal length".into(),
        ));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidInput(
            "calibration needs both classes present".into(),
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidInput("non-finite calibration score".into()));
    }
    let t_pos = T::of((n_pos as f64 + 1.0) / (n_pos as f64 + 2.0));
    let t_neg = T::of(1.0 / (n_neg as f64 + 2.0));
    let targets: Vec<T> = labels
        .iter()
        .map(|&y| if y == 1 { t_pos } else { t_neg })
        .collect();

    // Mean negative log-likelihood of sigma(a s + b) against the smoothed
    // targets; the mean keeps the gradient tolerance size-independent.
    let nf = T::of(scores.len() as f64);
    let nll = |a: T, b: T| -> T {
        let mut acc = T::zero();
        for (&s, &t) in scores.iter().zip(&targets) {
            let z = a * s + b;
            // -(t log p + (1-t) log(1-p)) = -t z + softplus(z)
            let softplus = z.max(T::zero()) + (-z.abs()).exp().ln_1p();
            acc = acc - t * z + softplus;
        }
        acc / nf
    };

    let mut a = T::zero();
    let mut b = ((T::of(n_pos as f64) + T::one()) / (T::of(n_neg as f64) + T::one())).ln();
    let mut f = nll(a, b);
    let tol = T::of(tol);
    for iter in 0..max_iters {
        // Gradient and Hessian of the NLL in (a, b).
        let (mut ga, mut gb) = (T::zero(), T::zero());
        let (mut haa, mut hab, mut hbb) = (T::zero(), T::zero(), T::zero());
        for (&s, &t) in scores.iter().zip(&targets) {
            let p = sigmoid(a * s + b);
            let r = p - t;
            let w = (p * (T::one() - p)).max(T::of(1e-300));
            ga = ga + r * s;
            gb = gb + r;
            haa = haa + w * s * s;
            hab = hab + w * s;
            hbb = hbb + w;
        }
        ga = ga / nf;
        gb = gb / nf;
        haa = haa / nf;
        hab = hab / nf;
        hbb = hbb / nf;
        let grad_norm = (ga * ga + gb * gb).sqrt();
        if grad_norm < tol {
            return Ok(PlattModel { a, b });
        }
        let det = haa * hbb - hab * hab;
        if !det.is_finite() || det <= T::zero() {
            return Err(Error::NoConvergence(format!(
                "singular Hessian at iteration {iter} (det {det})"
            )));
        }
        let da = (hbb * ga - hab * gb) / det;
        let db = (haa * gb - hab * ga) / det;
        // Step halving on the NLL; the slack admits full Newton steps whose
        // improvement falls below the rounding floor near the optimum.
        let slack = T::of(1e-15) * (T::one() + f.abs());
        let mut step = T::one();
        let mut accepted = false;
        for _ in 0..50 {
            let (na, nb) = (a - step * da, b - step * db);
            let nf = nll(na, nb);
            if nf.is_finite() && nf <= f + slack {
                a = na;
                b = nb;
                f = nf;
                accepted = true;
                break;
            }
            step = step / T::of(2.0);
        }
        if !accepted {
            return Err(Error::NoConvergence(format!(
                "no descent at iteration {iter}: nll {f}, gradient norm {grad_norm}"
            )));
        }
    }
    Err(Error::NoConvergence(format!(
        "gradient norm still above {tol} after {max_iters} Newton iterations"
    )))
}

impl<T: Scalar> PlattModel<T> {
    /// Calibrated probability in (0, 1).
    pub fn apply(&self, score: T) -> T {
        sigmoid(self.a * score + self.b)
    }

    /// Whether calibration preserves the score ranking (positive slope).
    pub fn is_order_preserving(&self) -> bool {
        self.a > T::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng;
    use rand::Rng;

    fn fit(scores: &[f64], labels: &[usize]) -> PlattModel<f64> {
        fit_platt(scores, labels, 100, 1e-10).unwrap()
    }

    #[test]
    fn recovers_true_logits() {
        // Scores that already are true logits: the fitted map should be close
        // to the identity (a ~ 1, b ~ 0).
        let mut r = rng(3, 80);
        let n = 20_000;
        let mut scores = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let s: f64 = r.random_range(-4.0..4.0);
            let p = 1.0 / (1.0 + (-s).exp());
            scores.push(s);
            labels.push(usize::from(r.random::<f64>() < p));
        }
        let m = fit(&scores, &labels);
        assert!((m.a - 1.0).abs() < 0.05, "a = {}", m.a);
        assert!(m.b.abs() < 0.05, "b = {}", m.b);
    }

    #[test]
    fn separated_scores_stay_finite() {
        let scores: Vec<f64> = (0..40).map(|i| if i < 20 { -1.0 } else { 1.0 }).collect();
        let labels: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
        let m = fit(&scores, &labels);
        assert!(m.a.is_finite() && m.b.is_finite());
        assert!(m.is_order_preserving());
        assert!(m.apply(1.0) > 0.9 && m.apply(-1.0) < 0.1);
    }

    #[test]
    fn independent_labels_give_base_rate() {
        let mut r = rng(5, 81);
        let n = 4000;
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let labels: Vec<usize> = (0..n).map(|_| usize::from(r.random::<f64>() < 0.3)).collect();
        let base = labels.iter().filter(|&&y| y == 1).count() as f64 / n as f64;
        let m = fit(&scores, &labels);
        assert!(m.a.abs() < 0.1, "a = {}", m.a);
        assert!((m.apply(0.0) - base).abs() < 0.03);
    }

    #[test]
    fn midpoint_of_the_sigmoid() {
        let m = PlattModel { a: 2.0f64, b: -1.0 };
        assert!((m.apply(0.5) - 0.5).abs() < 1e-15); // s = -b/a
    }

    #[test]
    fn anti_correlated_scores_flip_the_slope() {
        let scores: Vec<f64> = (0..100).map(|i| i as f64 / 50.0 - 1.0).collect();
        let labels: Vec<usize> = (0..100).map(|i| usize::from(i < 50)).collect();
        let m = fit(&scores, &labels);
        assert!(m.a < 0.0);
        assert!(!m.is_order_preserving());
    }

    #[test]
    fn rejects_single_class() {
        assert!(fit_platt(&[0.1f64, 0.2], &[1, 1], 100, 1e-10).is_err());
    }

    #[test]
    fn works_in_f32() {
        let scores: Vec<f32> = (0..200).map(|i| i as f32 / 100.0 - 1.0).collect();
        let labels: Vec<usize> = (0..200).map(|i| usize::from(i >= 100)).collect();
        let m = fit_platt(&scores, &labels, 100, 1e-4).unwrap();
        assert!(m.is_order_preserving());
    }
}
