//! The normalized neural copula density: normalizer estimation over a grid or
//! Sobol point set, the binned uniform-marginal penalty, and the penalized
//! maximum-likelihood training loop.

pub mod sobol;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamState, BatchBuffers, DenseNet, Gradients};
use crate::rng::{self, streams};
use crate::scalar::Scalar;
use crate::DENSITY_FLOOR;

/// Point set used to estimate the normalizing constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NormalizerKind {
    /// Cell centers of a `resolution^d` tensor grid.
    Grid { resolution: usize },
    /// First `points` Sobol points after the origin.
    Sobol { points: usize },
}

/// Rows processed per batched network pass; sized so a full activation chain
/// stays cache-resident.
const PASS_CHUNK: usize = 1024;

/// Fixed point set on `[0,1]^d` with cached network outputs, the cached
/// normalizer value, and the per-axis bin assignment used by the penalty.
#[derive(Debug, Clone)]
pub struct Normalizer<T: Scalar> {
    kind: NormalizerKind,
    d: usize,
    n_bins: usize,
    /// `n_points x d`, row-major.
    points: Vec<T>,
    /// Bin index of each point along each axis: `bin_idx[axis][point]`.
    bin_idx: Vec<Vec<u16>>,
    /// Points per (axis, bin).
    bin_counts: Vec<Vec<u32>>,
    /// Raw network outputs at `points`, valid for `version`.
    outputs: Vec<T>,
    z_hat: Option<T>,
    version: Option<u64>,
}

impl<T: Scalar> Normalizer<T> {
    pub fn build(kind: NormalizerKind, d: usize, n_bins: usize) -> Result<Self> {
        if n_bins == 0 || n_bins > u16::MAX as usize {
            return Err(Error::InvalidInput(format!("bad bin count {n_bins}")));
        }
        let points: Vec<T> = match kind {
            NormalizerKind::Grid { resolution } => {
                if resolution < 2 {
                    return Err(Error::InvalidInput("grid resolution must be >= 2".into()));
                }
                let total = resolution
                    .checked_pow(d as u32)
                    .filter(|&t| t <= 1 << 24)
                    .ok_or_else(|| {
                        Error::InvalidInput(format!(
                            "grid {resolution}^{d} is too large; use a Sobol normalizer"
                        ))
                    })?;
                let mut pts = Vec::with_capacity(total * d);
                let mut index = vec![0usize; d];
                let res = T::of(resolution as f64);
                loop {
                    for &i in &index {
                        pts.push((T::of(i as f64) + T::of(0.5)) / res);
                    }
                    let mut axis = d;
                    loop {
                        if axis == 0 {
                            break;
                        }
                        axis -= 1;
                        index[axis] += 1;
                        if index[axis] < resolution {
                            break;
                        }
                        index[axis] = 0;
                        if axis == 0 {
                            return Self::finish(kind, d, n_bins, pts);
                        }
                    }
                }
            }
            NormalizerKind::Sobol { points } => {
                if points == 0 {
                    return Err(Error::InvalidInput("need at least one Sobol point".into()));
                }
                sobol::sobol_points(d, points, true)?
            }
        };
        Self::finish(kind, d, n_bins, points)
    }

    fn finish(kind: NormalizerKind, d: usize, n_bins: usize, points: Vec<T>) -> Result<Self> {
        let m = points.len() / d;
        let bf = T::of(n_bins as f64);
        let mut bin_idx = vec![vec![0u16; m]; d];
        let mut bin_counts = vec![vec![0u32; n_bins]; d];
        for p in 0..m {
            for axis in 0..d {
                let u = points[p * d + axis];
                let b = (u * bf).to_usize().unwrap_or(0).min(n_bins - 1);
                bin_idx[axis][p] = b as u16;
                bin_counts[axis][b] += 1;
            }
        }
        for (axis, counts) in bin_counts.iter().enumerate() {
            if let Some(bin) = counts.iter().position(|&c| c == 0) {
                return Err(Error::EmptyBin { axis, bin });
            }
        }
        Ok(Normalizer {
            kind,
            d,
            n_bins,
            points,
            bin_idx,
            bin_counts,
            outputs: Vec::new(),
            z_hat: None,
            version: None,
        })
    }

    pub fn kind(&self) -> NormalizerKind {
        self.kind
    }

    pub fn n_points(&self) -> usize {
        self.points.len() / self.d
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }
}

/// Per-epoch training trace: mean minibatch log-likelihood of the normalized
/// density and the raw (pre-lambda) uniformity penalty.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub loglik: f64,
    pub penalty: f64,
}

/// Write a `epoch,loglik,penalty` CSV.
pub fn write_trace_csv<W: std::io::Write>(trace: &[TraceRow], mut w: W) -> Result<()> {
    writeln!(w, "epoch,loglik,penalty")?;
    for row in trace {
        writeln!(w, "{},{},{}", row.epoch, row.loglik, row.penalty)?;
    }
    Ok(())
}

/// Training hyperparameters for one copula fit.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

/// Positive network plus normalizer: the normalized copula density
/// `c(u) = NN(u) / Z`, floored at [`DENSITY_FLOOR`] when evaluated.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(
    bound(serialize = "", deserialize = ""),
    try_from = "CopulaNetRepr<T>",
    into = "CopulaNetRepr<T>"
)]
pub struct CopulaNet<T: Scalar> {
    net: DenseNet<T>,
    normalizer: Normalizer<T>,
    /// Weight of the uniform-marginal penalty in the training objective.
    lambda: f64,
}

/// Serialized form: the point set is rebuilt from its parameters.
#[derive(Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
struct CopulaNetRepr<T: Scalar> {
    net: DenseNet<T>,
    kind: NormalizerKind,
    d: usize,
    n_bins: usize,
    lambda: f64,
    z_hat: Option<T>,
    version: Option<u64>,
}

impl<T: Scalar> From<CopulaNet<T>> for CopulaNetRepr<T> {
    fn from(c: CopulaNet<T>) -> Self {
        CopulaNetRepr {
            kind: c.normalizer.kind,
            d: c.normalizer.d,
            n_bins: c.normalizer.n_bins,
            lambda: c.lambda,
            z_hat: c.normalizer.z_hat,
            version: c.normalizer.version,
            net: c.net,
        }
    }
}

impl<T: Scalar> TryFrom<CopulaNetRepr<T>> for CopulaNet<T> {
    type Error = Error;

    fn try_from(r: CopulaNetRepr<T>) -> Result<Self> {
        let mut c = CopulaNet::new(r.net, r.kind, r.d, r.n_bins, r.lambda)?;
        if r.version == Some(c.net.version()) && r.z_hat.is_some() {
            // Restore the cache by recomputing outputs for the same weights.
            c.refresh_normalizer();
        }
        Ok(c)
    }
}

impl<T: Scalar> CopulaNet<T> {
    pub fn new(
        net: DenseNet<T>,
        kind: NormalizerKind,
        d: usize,
        n_bins: usize,
        lambda: f64,
    ) -> Result<Self> {
        if net.input_dim() != d {
            return Err(Error::InvalidInput(format!(
                "network input dim {} does not match d = {d}",
                net.input_dim()
            )));
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidInput(format!("bad lambda {lambda}")));
        }
        Ok(CopulaNet {
            normalizer: Normalizer::build(kind, d, n_bins)?,
            net,
            lambda,
        })
    }

    pub fn net(&self) -> &DenseNet<T> {
        &self.net
    }

    pub fn normalizer(&self) -> &Normalizer<T> {
        &self.normalizer
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.normalizer.d
    }

    /// Run the network over the normalizer point set, cache the outputs, and
    /// return the refreshed normalizer estimate (the mean output).
    pub fn refresh_normalizer(&mut self) -> T {
        let m = self.normalizer.n_points();
        self.normalizer.outputs.resize(m, T::zero());
        let mut buf = BatchBuffers::new();
        forward_over(
            &self.net,
            &self.normalizer.points,
            self.normalizer.d,
            &mut buf,
            &mut self.normalizer.outputs,
        );
        let z = mean(&self.normalizer.outputs);
        self.normalizer.z_hat = Some(z);
        self.normalizer.version = Some(self.net.version());
        z
    }

    fn fresh_z(&self) -> Result<T> {
        match (self.normalizer.z_hat, self.normalizer.version) {
            (Some(z), Some(v)) if v == self.net.version() => Ok(z),
            (_, Some(v)) => Err(Error::StaleNormalizer {
                cached: v,
                current: self.net.version(),
            }),
            _ => Err(Error::NotFitted("copula normalizer cache")),
        }
    }

    /// Cached normalizer estimate; errors if stale.
    pub fn z_hat(&self) -> Result<T> {
        self.fresh_z()
    }

    /// Normalized density at `u`, floored at [`DENSITY_FLOOR`]. Errors when
    /// the cached normalizer does not match the current parameters.
    pub fn density(&self, u: &[T]) -> Result<T> {
        let z = self.fresh_z()?;
        Ok((self.net.forward_one(u) / z).max(T::of(DENSITY_FLOOR)))
    }

    /// Mean of the (pre-floor) normalized density over the normalizer's own
    /// point set; equals one up to round-off right after a refresh.
    pub fn mean_density_on_points(&self) -> Result<T> {
        let z = self.fresh_z()?;
        Ok(mean(&self.normalizer.outputs) / z)
    }

    /// Mean log-density of a sample (`n x d`, row-major), using the floored
    /// density.
    pub fn mean_log_density(&self, obs: &[T], n: usize) -> Result<T> {
        let d = self.normalizer.d;
        let mut acc = T::zero();
        for i in 0..n {
            acc = acc + self.density(&obs[i * d..(i + 1) * d])?.ln();
        }
        Ok(acc / T::of(n as f64))
    }

    /// Uniform-marginal penalty scaled by lambda.
    pub fn penalty(&self) -> Result<T> {
        Ok(T::of(self.lambda) * self.penalty_raw()?)
    }

    /// The discretized marginal-uniformity defect before the lambda weight:
    /// for each axis, points are partitioned into equal-width bins by that
    /// coordinate; the estimated one-dimensional marginal in a bin is the
    /// mean normalized density of the points falling in it, and the defect is
    /// the mean squared deviation of those bin marginals from one, summed
    /// over axes.
    pub fn penalty_raw(&self) -> Result<T> {
        let z = self.fresh_z()?;
        let stats = PenaltyStats::compute(&self.normalizer, &self.normalizer.outputs, z);
        Ok(stats.raw)
    }

    /// Objective value and exact parameter gradient of the per-step training
    /// loss (negated objective) at the current parameters, for the given
    /// pseudo-observation minibatch. Refreshes the normalizer cache.
    pub fn step_objective(
        &mut self,
        batch: &[T],
        rows: usize,
    ) -> Result<(StepStats<T>, Gradients<T>)> {
        let mut grads = Gradients::zeros_like(&self.net);
        let mut buf = BatchBuffers::new();
        let mut upstream = vec![T::zero(); self.normalizer.n_points()];
        let mut batch_out = vec![T::zero(); rows];
        let stats = self.step_gradient(
            batch,
            rows,
            &mut buf,
            &mut upstream,
            &mut batch_out,
            &mut grads,
        )?;
        Ok((stats, grads))
    }

    /// Shared step computation: refresh Z over the point set, evaluate the
    /// minibatch, and accumulate the gradient of
    /// `-(mean log NN(u) - log Z - lambda * penalty_raw)` into `grads`.
    #[allow(clippy::too_many_arguments)]
    fn step_gradient(
        &mut self,
        batch: &[T],
        rows: usize,
        buf: &mut BatchBuffers<T>,
        upstream: &mut Vec<T>,
        batch_out: &mut Vec<T>,
        grads: &mut Gradients<T>,
    ) -> Result<StepStats<T>> {
        let d = self.normalizer.d;
        let m = self.normalizer.n_points();
        debug_assert_eq!(batch.len(), rows * d);

        // Phase 1: refresh the normalizer outputs and global penalty stats.
        let z = self.refresh_normalizer();
        if !z.is_finite() || z <= T::zero() {
            return Err(Error::NonFinite(format!("normalizer estimate {z}")));
        }
        let stats = PenaltyStats::compute(&self.normalizer, &self.normalizer.outputs, z);
        let lambda = T::of(self.lambda);

        // Upstream for every normalizer point, for the loss
        // -(... - log Z - lambda P):
        //   d(log Z)/ds_p               = 1 / (M Z)
        //   d(P)/ds_p via its bin means = sum_axes gamma[axis][bin(p)] - K/(M Z)
        let mf = T::of(m as f64);
        let t0 = (T::one() - lambda * stats.k_total) / (mf * z);
        let mut gamma = Vec::with_capacity(d);
        for axis in 0..d {
            let coeffs: Vec<T> = (0..self.normalizer.n_bins)
                .map(|b| {
                    lambda
                        * T::of(2.0 / self.normalizer.n_bins as f64)
                        * (stats.bin_means[axis][b] - T::one())
                        / (T::of(self.normalizer.bin_counts[axis][b] as f64) * z)
                })
                .collect();
            gamma.push(coeffs);
        }
        upstream.resize(m, T::zero());
        for p in 0..m {
            let mut g = t0;
            for axis in 0..d {
                g = g + gamma[axis][self.normalizer.bin_idx[axis][p] as usize];
            }
            upstream[p] = g;
        }

        // Minibatch term.
        batch_out.resize(rows, T::zero());
        forward_over(&self.net, batch, d, buf, batch_out);
        let mut loglik = T::zero();
        for &s in batch_out.iter() {
            if !(s.is_finite() && s > T::zero()) {
                return Err(Error::NonFinite(format!("network output {s} on a batch row")));
            }
            loglik = loglik + s.ln();
        }
        let loglik = loglik / T::of(rows as f64) - z.ln();

        // Phase 2: backward over the point set (recomputing activations
        // chunkwise) and over the minibatch.
        grads.clear();
        let mut r0 = 0;
        while r0 < m {
            let n = PASS_CHUNK.min(m - r0);
            self.net
                .forward_batch(&self.normalizer.points[r0 * d..(r0 + n) * d], n, buf);
            self.net.backward_batch(buf, &upstream[r0..r0 + n], grads);
            r0 += n;
        }
        let inv = -T::one() / T::of(rows as f64);
        let batch_upstream: Vec<T> = batch_out.iter().map(|&s| inv / s).collect();
        let mut r0 = 0;
        while r0 < rows {
            let n = PASS_CHUNK.min(rows - r0);
            self.net.forward_batch(&batch[r0 * d..(r0 + n) * d], n, buf);
            self.net.backward_batch(buf, &batch_upstream[r0..r0 + n], grads);
            r0 += n;
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("parameter gradient".into()));
        }
        Ok(StepStats {
            loglik,
            penalty_raw: stats.raw,
        })
    }

    /// Penalized maximum-likelihood training: minibatch ascent on the mean
    /// log normalized density minus `lambda` times the uniformity penalty,
    /// with the normalizer refreshed and differentiated through at every
    /// step, spectral normalization, then Adam. Returns the per-epoch trace.
    pub fn train(&mut self, pseudo_obs: &[T], n: usize, opts: &TrainOptions) -> Result<Vec<TraceRow>> {
        let d = self.normalizer.d;
        if pseudo_obs.len() != n * d || n == 0 {
            return Err(Error::InvalidInput("bad pseudo-observation matrix".into()));
        }
        if opts.epochs == 0 || opts.batch_size == 0 {
            return Err(Error::InvalidInput("epochs and batch_size must be positive".into()));
        }
        for (i, &u) in pseudo_obs.iter().enumerate() {
            if !(u > T::zero() && u < T::one()) {
                return Err(Error::InvalidInput(format!(
                    "pseudo-observation {u} at flat index {i} is outside (0,1)"
                )));
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = rng::rng(opts.seed, streams::TRAIN_SHUFFLE);
        let mut state = AdamState::new(&self.net);
        let mut buf = BatchBuffers::new();
        let mut upstream = Vec::new();
        let mut batch_out = Vec::new();
        let mut batch_buf = vec![T::zero(); opts.batch_size * d];
        let mut grads = Gradients::zeros_like(&self.net);
        let mut trace = Vec::with_capacity(opts.epochs);
        let lr = T::of(opts.lr);

        for epoch in 0..opts.epochs {
            order.shuffle(&mut shuffle_rng);
            let mut epoch_loglik = 0.0;
            let mut epoch_penalty = 0.0;
            let mut n_steps = 0usize;
            for batch_idx in order.chunks(opts.batch_size) {
                let rows = batch_idx.len();
                for (r, &i) in batch_idx.iter().enumerate() {
                    batch_buf[r * d..(r + 1) * d].copy_from_slice(&pseudo_obs[i * d..(i + 1) * d]);
                }
                let stats = self
                    .step_gradient(
                        &batch_buf[..rows * d],
                        rows,
                        &mut buf,
                        &mut upstream,
                        &mut batch_out,
                        &mut grads,
                    )
                    .map_err(|e| {
                        Error::NonFinite(format!("epoch {epoch}, step {n_steps}: {e}"))
                    })?;
                self.net.spectral_normalize(1);
                adam_step(&mut self.net, &grads, &mut state, lr);
                epoch_loglik += stats.loglik.as_f64();
                epoch_penalty += stats.penalty_raw.as_f64();
                n_steps += 1;
            }
            trace.push(TraceRow {
                epoch,
                loglik: epoch_loglik / n_steps as f64,
                penalty: epoch_penalty / n_steps as f64,
            });
        }
        // Leave the model ready for evaluation.
        self.refresh_normalizer();
        Ok(trace)
    }

    /// Density over a `resolution x resolution` grid of cell centers
    /// (two-dimensional copulas only): rows of `(u1, u2, density)`.
    pub fn density_grid(&self, resolution: usize) -> Result<Vec<(T, T, T)>> {
        if self.normalizer.d != 2 {
            return Err(Error::InvalidInput(
                "density grids are only defined for d = 2".into(),
            ));
        }
        let res = T::of(resolution as f64);
        let mut out = Vec::with_capacity(resolution * resolution);
        for i in 0..resolution {
            let u1 = (T::of(i as f64) + T::of(0.5)) / res;
            for j in 0..resolution {
                let u2 = (T::of(j as f64) + T::of(0.5)) / res;
                out.push((u1, u2, self.density(&[u1, u2])?));
            }
        }
        Ok(out)
    }
}

/// Loss components of a training step.
#[derive(Debug, Clone, Copy)]
pub struct StepStats<T: Scalar> {
    /// Mean log normalized density of the minibatch.
    pub loglik: T,
    /// Raw uniformity defect (before lambda).
    pub penalty_raw: T,
}

struct PenaltyStats<T: Scalar> {
    bin_means: Vec<Vec<T>>,
    /// `sum_axes (2/B) sum_bins (M_ib - 1) * M_ib`, reused by the gradient.
    k_total: T,
    raw: T,
}

impl<T: Scalar> PenaltyStats<T> {
    fn compute(norm: &Normalizer<T>, outputs: &[T], z: T) -> Self {
        let (d, n_bins) = (norm.d, norm.n_bins);
        let inv_b = T::of(1.0 / n_bins as f64);
        let mut bin_means = Vec::with_capacity(d);
        let mut raw = T::zero();
        let mut k_total = T::zero();
        for axis in 0..d {
            let idx = &norm.bin_idx[axis];
            let mut sums = vec![T::zero(); n_bins];
            for (p, &s) in outputs.iter().enumerate() {
                sums[idx[p] as usize] = sums[idx[p] as usize] + s;
            }
            let means: Vec<T> = sums
                .iter()
                .zip(&norm.bin_counts[axis])
                .map(|(&s, &c)| s / (T::of(c as f64) * z))
                .collect();
            for &mval in &means {
                let dev = mval - T::one();
                raw = raw + inv_b * dev * dev;
                k_total = k_total + T::of(2.0) * inv_b * dev * mval;
            }
            bin_means.push(means);
        }
        PenaltyStats {
            bin_means,
            k_total,
            raw,
        }
    }
}

fn mean<T: Scalar>(values: &[T]) -> T {
    values.iter().copied().sum::<T>() / T::of(values.len() as f64)
}

/// Chunked batched forward over `n x d` inputs, writing softplus outputs.
fn forward_over<T: Scalar>(
    net: &DenseNet<T>,
    data: &[T],
    d: usize,
    buf: &mut BatchBuffers<T>,
    outputs: &mut [T],
) {
    let n = outputs.len();
    debug_assert!(data.len() >= n * d);
    let mut r0 = 0;
    while r0 < n {
        let rows = PASS_CHUNK.min(n - r0);
        net.forward_batch(&data[r0 * d..(r0 + rows) * d], rows, buf);
        outputs[r0..r0 + rows].copy_from_slice(buf.outputs());
        r0 += rows;
    }
}
