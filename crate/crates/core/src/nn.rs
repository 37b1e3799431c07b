//! Dense feed-forward network with a softplus-positive output, exact
//! reverse-mode gradients, spectral normalization, and Adam.
//!
//! The network maps `[0,1]^d` to `(0, inf)`: ReLU hidden layers, an affine
//! scalar output, softplus on top. Batched evaluation runs layer-by-layer as
//! dense matrix products so the copula training loop can push the full
//! normalizer point set through in one call.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::scalar::Scalar;
use crate::simd::{gemm_bstream, padded, PostOp};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
struct Layer<T: Scalar> {
    /// Row-major `(out, in)` weight matrix.
    w: Vec<T>,
    b: Vec<T>,
    out: usize,
    inp: usize,
    /// Persistent power-iteration estimates of the top singular pair.
    sn_u: Vec<T>,
    sn_v: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    /// One or more power-iteration sweeps; returns the current spectral-norm
    /// estimate.
    fn power_iterate(&mut self, iters: usize) -> T {
        let (m, n) = (self.out, self.inp);
        let tiny = T::of(1e-30);
        let mut wv = vec![T::zero(); m];
        for _ in 0..iters {
            // v <- normalize(W^T u)
            for j in 0..n {
                let mut acc = T::zero();
                for i in 0..m {
                    acc = acc + self.w[i * n + j] * self.sn_u[i];
                }
                self.sn_v[j] = acc;
            }
            normalize(&mut self.sn_v, tiny);
            // u <- normalize(W v)
            for i in 0..m {
                let row = &self.w[i * n..(i + 1) * n];
                let mut acc = T::zero();
                for j in 0..n {
                    acc = acc + row[j] * self.sn_v[j];
                }
                self.sn_u[i] = acc;
            }
            normalize(&mut self.sn_u, tiny);
        }
        for i in 0..m {
            let row = &self.w[i * n..(i + 1) * n];
            let mut acc = T::zero();
            for j in 0..n {
                acc = acc + row[j] * self.sn_v[j];
            }
            wv[i] = acc;
        }
        let mut sigma = T::zero();
        for i in 0..m {
            sigma = sigma + self.sn_u[i] * wv[i];
        }
        sigma
    }
}

fn normalize<T: Scalar>(v: &mut [T], tiny: T) {
    let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt().max(tiny);
    for x in v.iter_mut() {
        *x = *x / norm;
    }
}

/// Feed-forward density network. Mutation bumps `version`, which the copula
/// normalizer cache uses to detect staleness.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct DenseNet<T: Scalar> {
    layers: Vec<Layer<T>>,
    input_dim: usize,
    version: u64,
}

/// Depth/width recipe: `L = ceil(log2 n_y)` ReLU layers of width
/// `max(8, round(width_const * n_y^(d / (2r + d))))`, He-uniform init,
/// spectrally normalized with 30 warm-up power iterations.
pub fn build_net<T: Scalar>(
    input_dim: usize,
    n_y: usize,
    smoothness_r: f64,
    width_const: f64,
    seed: u64,
) -> Result<DenseNet<T>> {
    if n_y < 2 {
        return Err(Error::InvalidInput(format!(
            "need n_y >= 2 to size the network, got {n_y}"
        )));
    }
    if input_dim == 0 {
        return Err(Error::InvalidInput("input_dim must be positive".into()));
    }
    if smoothness_r <= 0.0 || width_const <= 0.0 {
        return Err(Error::InvalidInput(
            "smoothness r and width_const must be positive".into(),
        ));
    }
    let d = input_dim as f64;
    let depth = (n_y as f64).log2().ceil() as usize;
    let exponent = d / (2.0 * smoothness_r + d);
    let width = (width_const * (n_y as f64).powf(exponent)).round().max(8.0) as usize;

    let mut r = rng::rng(seed, streams::NET_INIT);
    let mut dims = Vec::with_capacity(depth + 2);
    dims.push(input_dim);
    dims.extend(std::iter::repeat(width).take(depth));
    dims.push(1);

    let mut layers = Vec::with_capacity(dims.len() - 1);
    for win in dims.windows(2) {
        let (inp, out) = (win[0], win[1]);
        let bound = (6.0 / inp as f64).sqrt();
        let w: Vec<T> = (0..out * inp)
            .map(|_| {
                use rand::Rng;
                T::of(r.random_range(-bound..bound))
            })
            .collect();
        let mut sn_u: Vec<T> = rng::standard_normals(&mut r, out);
        let mut sn_v: Vec<T> = rng::standard_normals(&mut r, inp);
        normalize(&mut sn_u, T::of(1e-30));
        normalize(&mut sn_v, T::of(1e-30));
        layers.push(Layer {
            w,
            b: vec![T::zero(); out],
            out,
            inp,
            sn_u,
            sn_v,
        });
    }
    let mut net = DenseNet {
        layers,
        input_dim,
        version: 0,
    };
    net.spectral_normalize(30);
    Ok(net)
}

/// Reusable activation / delta workspace for batched passes.
///
/// Matrix rows are padded to the scalar type's SIMD lane multiple so the
/// matmul kernels can stream them with full vector loads; pad lanes are
/// zero-initialized and never written.
#[derive(Debug)]
pub struct BatchBuffers<T: Scalar> {
    /// `acts[0]` is the input copy; `acts[l]` the post-ReLU output of hidden
    /// layer `l`; each `rows x padded(width)`.
    acts: Vec<Vec<T>>,
    /// Pre-softplus output, one per row.
    z_out: Vec<T>,
    /// Softplus output, one per row.
    out: Vec<T>,
    delta_a: Vec<T>,
    delta_b: Vec<T>,
    /// Row stride shared by the delta buffers.
    delta_rs: usize,
    /// Lane-padded `W^T` per layer (forward) and `W` per layer (backward),
    /// cached against the network parameter version.
    packed_fwd: Vec<Vec<T>>,
    packed_bwd: Vec<Vec<T>>,
    packed_version: Option<u64>,
    rows: usize,
}

impl<T: Scalar> BatchBuffers<T> {
    pub fn new() -> Self {
        Self {
            acts: Vec::new(),
            z_out: Vec::new(),
            out: Vec::new(),
            delta_a: Vec::new(),
            delta_b: Vec::new(),
            delta_rs: 0,
            packed_fwd: Vec::new(),
            packed_bwd: Vec::new(),
            packed_version: None,
            rows: 0,
        }
    }

    pub fn outputs(&self) -> &[T] {
        &self.out
    }

    fn reserve(&mut self, net: &DenseNet<T>, rows: usize) {
        let n_hidden = net.layers.len() - 1;
        let mut resize = |v: &mut Vec<T>, len: usize| {
            if v.len() != len {
                v.clear();
                v.resize(len, T::zero());
            }
        };
        self.acts.resize_with(n_hidden + 1, Vec::new);
        resize(&mut self.acts[0], rows * padded::<T>(net.input_dim));
        let mut max_pad = padded::<T>(net.input_dim);
        for (l, layer) in net.layers[..n_hidden].iter().enumerate() {
            let pw = padded::<T>(layer.out);
            resize(&mut self.acts[l + 1], rows * pw);
            max_pad = max_pad.max(pw);
        }
        resize(&mut self.z_out, rows);
        resize(&mut self.out, rows);
        resize(&mut self.delta_a, rows * max_pad);
        resize(&mut self.delta_b, rows * max_pad);
        self.delta_rs = max_pad;
        self.rows = rows;
        self.ensure_packed(net);
    }

    fn ensure_packed(&mut self, net: &DenseNet<T>) {
        if self.packed_version == Some(net.version) {
            return;
        }
        self.packed_fwd.resize_with(net.layers.len(), Vec::new);
        self.packed_bwd.resize_with(net.layers.len(), Vec::new);
        for (l, layer) in net.layers.iter().enumerate() {
            let npo = padded::<T>(layer.out);
            self.packed_fwd[l].clear();
            self.packed_fwd[l].resize(layer.inp * npo, T::zero());
            for o in 0..layer.out {
                for kk in 0..layer.inp {
                    self.packed_fwd[l][kk * npo + o] = layer.w[o * layer.inp + kk];
                }
            }
            let npi = padded::<T>(layer.inp);
            self.packed_bwd[l].clear();
            self.packed_bwd[l].resize(layer.out * npi, T::zero());
            for o in 0..layer.out {
                self.packed_bwd[l][o * npi..o * npi + layer.inp]
                    .copy_from_slice(&layer.w[o * layer.inp..(o + 1) * layer.inp]);
            }
        }
        self.packed_version = Some(net.version);
    }

}

fn softplus<T: Scalar>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> DenseNet<T> {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// `(out, in)` per layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.out, l.inp)).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Flat parameter vector (weights then biases, layer by layer).
    pub fn params_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[T]) {
        assert_eq!(params.len(), self.num_params());
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&params[k..k + nw]);
            k += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&params[k..k + nb]);
            k += nb;
        }
        self.version += 1;
    }

    /// Evaluate a single input.
    pub fn forward_one(&self, x: &[T]) -> T {
        debug_assert_eq!(x.len(), self.input_dim);
        let mut cur = x.to_vec();
        let n_hidden = self.layers.len() - 1;
        for layer in &self.layers[..n_hidden] {
            let mut next = vec![T::zero(); layer.out];
            for i in 0..layer.out {
                let row = &layer.w[i * layer.inp..(i + 1) * layer.inp];
                let mut acc = layer.b[i];
                for (wj, xj) in row.iter().zip(&cur) {
                    acc = acc + *wj * *xj;
                }
                next[i] = acc.max(T::zero());
            }
            cur = next;
        }
        let out_layer = self.layers.last().unwrap();
        let mut z = out_layer.b[0];
        for (wj, xj) in out_layer.w.iter().zip(&cur) {
            z = z + *wj * *xj;
        }
        softplus(z)
    }

    /// Batched forward pass over `rows` inputs (`x` is `rows x input_dim`,
    /// row-major). Keeps every layer activation in `buf` for the backward
    /// pass; outputs land in `buf.outputs()`.
    pub fn forward_batch(&self, x: &[T], rows: usize, buf: &mut BatchBuffers<T>) {
        debug_assert_eq!(x.len(), rows * self.input_dim);
        buf.reserve(self, rows);
        let in_pad = padded::<T>(self.input_dim);
        for r in 0..rows {
            buf.acts[0][r * in_pad..r * in_pad + self.input_dim]
                .copy_from_slice(&x[r * self.input_dim..(r + 1) * self.input_dim]);
        }
        let n_hidden = self.layers.len() - 1;
        for (l, layer) in self.layers[..n_hidden].iter().enumerate() {
            let (prev, rest) = buf.acts.split_at_mut(l + 1);
            let a_prev = &prev[l];
            let a_rs = padded::<T>(layer.inp);
            let z = &mut rest[0];
            let c_rs = padded::<T>(layer.out);
            // z = relu(a_prev * W^T + b), fused in the writeback.
            gemm_bstream(
                rows, layer.inp, layer.out,
                a_prev, a_rs, 1,
                &buf.packed_fwd[l], c_rs,
                false,
                z, c_rs,
                PostOp::BiasRelu(&layer.b),
            );
        }
        let out_layer = self.layers.last().unwrap();
        let a_last = &buf.acts[n_hidden];
        let a_rs = padded::<T>(out_layer.inp);
        for r in 0..rows {
            let row = &a_last[r * a_rs..r * a_rs + out_layer.inp];
            let mut z = out_layer.b[0];
            for (wj, aj) in out_layer.w.iter().zip(row) {
                z = z + *wj * *aj;
            }
            buf.z_out[r] = z;
            buf.out[r] = softplus(z);
        }
    }

    /// Accumulate exact reverse-mode gradients into `grads`.
    ///
    /// `upstream[r]` is the loss derivative with respect to the softplus
    /// output of row `r`; `buf` must hold the activations of the matching
    /// forward pass. Spectral-norm state is treated as constant.
    pub fn backward_batch(
        &self,
        buf: &mut BatchBuffers<T>,
        upstream: &[T],
        grads: &mut Gradients<T>,
    ) {
        let rows = buf.rows;
        debug_assert_eq!(upstream.len(), rows);
        debug_assert_eq!(grads.dw.len(), self.layers.len());
        let n_hidden = self.layers.len() - 1;
        let out_layer = self.layers.last().unwrap();

        // Output layer: dz = upstream * sigmoid(z_out).
        let a_last = &buf.acts[n_hidden];
        let a_rs = padded::<T>(out_layer.inp);
        let d_rs = buf.delta_rs;
        let width = out_layer.inp;
        {
            let dw = &mut grads.dw[n_hidden];
            let mut db = T::zero();
            for r in 0..rows {
                let dz = upstream[r] * sigmoid(buf.z_out[r]);
                db = db + dz;
                let arow = &a_last[r * a_rs..r * a_rs + width];
                for j in 0..width {
                    dw[j] = dw[j] + dz * arow[j];
                }
                // Seed the hidden-layer delta: dz * w_out, masked by ReLU.
                let drow = &mut buf.delta_a[r * d_rs..r * d_rs + width];
                for j in 0..width {
                    drow[j] = if arow[j] > T::zero() {
                        dz * out_layer.w[j]
                    } else {
                        T::zero()
                    };
                }
            }
            grads.db[n_hidden][0] = grads.db[n_hidden][0] + db;
        }

        // Hidden layers, top down. delta_a currently holds dZ of layer l.
        for l in (0..n_hidden).rev() {
            let layer = &self.layers[l];
            let a_prev = &buf.acts[l];
            let prev_rs = padded::<T>(layer.inp);
            // dW_l += dZ^T * a_prev
            gemm_bstream(
                layer.out, rows, layer.inp,
                &buf.delta_a, 1, d_rs,
                a_prev, prev_rs,
                true,
                &mut grads.dw[l], layer.inp,
                PostOp::None,
            );
            let db = &mut grads.db[l];
            for r in 0..rows {
                let drow = &buf.delta_a[r * d_rs..r * d_rs + layer.out];
                for (j, &d) in drow.iter().enumerate() {
                    db[j] = db[j] + d;
                }
            }
            if l > 0 {
                // dA_{l-1} = dZ * W_l, then ReLU mask of layer l-1.
                let prev_width = layer.inp;
                gemm_bstream(
                    rows, layer.out, prev_width,
                    &buf.delta_a, d_rs, 1,
                    &buf.packed_bwd[l], prev_rs,
                    false,
                    &mut buf.delta_b, d_rs,
                    PostOp::ReluMask {
                        acts: a_prev,
                        stride: prev_rs,
                    },
                );
                std::mem::swap(&mut buf.delta_a, &mut buf.delta_b);
            }
        }
    }

    /// Power-iterate each layer's top singular value and project weights so
    /// the estimate stays at or below one. Biases are untouched; the
    /// persistent `u`/`v` vectors warm-start the next call.
    pub fn spectral_normalize(&mut self, n_iters: usize) {
        debug_assert!(n_iters >= 1);
        let mut changed = false;
        for layer in &mut self.layers {
            let sigma = layer.power_iterate(n_iters);
            if sigma > T::one() {
                let inv = T::one() / sigma;
                for w in layer.w.iter_mut() {
                    *w = *w * inv;
                }
                changed = true;
            }
        }
        if changed {
            self.version += 1;
        }
    }

    /// Current spectral-norm estimates without modifying weights.
    pub fn spectral_norm_estimates(&mut self, n_iters: usize) -> Vec<T> {
        self.layers
            .iter_mut()
            .map(|l| l.power_iterate(n_iters))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    #[cfg(test)]
    fn zero_weights(&mut self) {
        for l in &mut self.layers {
            l.w.iter_mut().for_each(|w| *w = T::zero());
            l.b.iter_mut().for_each(|b| *b = T::zero());
        }
        self.version += 1;
    }
}

/// Parameter gradients, same shapes as the network layers.
#[derive(Debug, Clone)]
pub struct Gradients<T: Scalar> {
    dw: Vec<Vec<T>>,
    db: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &DenseNet<T>) -> Self {
        Gradients {
            dw: net.layers.iter().map(|l| vec![T::zero(); l.w.len()]).collect(),
            db: net.layers.iter().map(|l| vec![T::zero(); l.b.len()]).collect(),
        }
    }

    pub fn clear(&mut self) {
        for v in self.dw.iter_mut().chain(self.db.iter_mut()) {
            v.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    /// Flat view matching [`DenseNet::params_flat`] ordering.
    pub fn flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        for (dw, db) in self.dw.iter().zip(&self.db) {
            out.extend_from_slice(dw);
            out.extend_from_slice(db);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.dw
            .iter()
            .chain(self.db.iter())
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Adam accumulators (`beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`).
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar> {
    mw: Vec<Vec<T>>,
    vw: Vec<Vec<T>>,
    mb: Vec<Vec<T>>,
    vb: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(net: &DenseNet<T>) -> Self {
        AdamState {
            mw: net.layers.iter().map(|l| vec![T::zero(); l.w.len()]).collect(),
            vw: net.layers.iter().map(|l| vec![T::zero(); l.w.len()]).collect(),
            mb: net.layers.iter().map(|l| vec![T::zero(); l.b.len()]).collect(),
            vb: net.layers.iter().map(|l| vec![T::zero(); l.b.len()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// One bias-corrected Adam descent step.
pub fn adam_step<T: Scalar>(
    net: &mut DenseNet<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    lr: T,
) {
    state.step += 1;
    let b1 = T::of(ADAM_BETA1);
    let b2 = T::of(ADAM_BETA2);
    let eps = T::of(ADAM_EPS);
    let t = state.step as i32;
    let corr1 = T::one() - b1.powi(t);
    let corr2 = T::one() - b2.powi(t);

    let update = |params: &mut [T], g: &[T], m: &mut [T], v: &mut [T]| {
        for i in 0..params.len() {
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let m_hat = m[i] / corr1;
            let v_hat = v[i] / corr2;
            params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    };
    for (l, layer) in net.layers.iter_mut().enumerate() {
        update(&mut layer.w, &grads.dw[l], &mut state.mw[l], &mut state.vw[l]);
        update(&mut layer.b, &grads.db[l], &mut state.mb[l], &mut state.vb[l]);
    }
    net.version += 1;
}
