use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FrameFeatures, KeyframeError};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"AKFH";
pub const WEIGHTS_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;
const LN_EPS: f64 = 1e-5;

/// Shape of a scoring head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            dim: 256,
        }
    }
}

impl HeadConfig {
    fn validate(&self) -> Result<(), KeyframeError> {
        if self.heads == 0 || self.dim == 0 || self.dim % self.heads != 0 {
            return Err(KeyframeError::BadConfig(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.layers > u16::MAX as usize || self.heads > u16::MAX as usize || self.dim > u32::MAX as usize {
            return Err(KeyframeError::BadConfig("dimensions exceed the weights header".into()));
        }
        Ok(())
    }

    fn per_layer(&self) -> usize {
        4 * self.dim * self.dim + 6 * self.dim
    }

    /// Number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.layers * self.per_layer() + self.dim + 1
    }
}

/// Stacked self-attention blocks, `x <- LayerNorm(x + MHSA(x))`, then a
/// linear map to one score per frame. No positional encoding.
///
/// Parameters live in one flat vector, per layer
/// `Wq bq Wk bk Wv bv Wo bo gamma beta`, followed by `w_out b_out`. Every
/// value is representable as `f32`, so the weights file is lossless.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoringHead {
    config: HeadConfig,
    params: Vec<f64>,
    seed: u64,
}

struct LayerRef<'a> {
    wq: ArrayView2<'a, f64>,
    bq: ArrayView1<'a, f64>,
    wk: ArrayView2<'a, f64>,
    bk: ArrayView1<'a, f64>,
    wv: ArrayView2<'a, f64>,
    bv: ArrayView1<'a, f64>,
    wo: ArrayView2<'a, f64>,
    bo: ArrayView1<'a, f64>,
    gamma: ArrayView1<'a, f64>,
    beta: ArrayView1<'a, f64>,
}

fn split_layer(p: &[f64], d: usize) -> LayerRef<'_> {
    let (wq, p) = p.split_at(d * d);
    let (bq, p) = p.split_at(d);
    let (wk, p) = p.split_at(d * d);
    let (bk, p) = p.split_at(d);
    let (wv, p) = p.split_at(d * d);
    let (bv, p) = p.split_at(d);
    let (wo, p) = p.split_at(d * d);
    let (bo, p) = p.split_at(d);
    let (gamma, beta) = p.split_at(d);
    let m = |s| ArrayView2::from_shape((d, d), s).expect("square block");
    LayerRef {
        wq: m(wq),
        bq: ArrayView1::from(bq),
        wk: m(wk),
        bk: ArrayView1::from(bk),
        wv: m(wv),
        bv: ArrayView1::from(bv),
        wo: m(wo),
        bo: ArrayView1::from(bo),
        gamma: ArrayView1::from(gamma),
        beta: ArrayView1::from(&beta[..d]),
    }
}

struct LayerCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    concat: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

/// Per-layer gradients in the same order as the parameters.
struct LayerGrad {
    wq: Array2<f64>,
    bq: Array1<f64>,
    wk: Array2<f64>,
    bk: Array1<f64>,
    wv: Array2<f64>,
    bv: Array1<f64>,
    wo: Array2<f64>,
    bo: Array1<f64>,
    gamma: Array1<f64>,
    beta: Array1<f64>,
}

impl LayerGrad {
    fn add_into(&self, out: &mut [f64]) {
        let mut at = 0;
        let mut add = |values: ndarray::iter::Iter<'_, f64, ndarray::IxDyn>| {
            for v in values {
                out[at] += v;
                at += 1;
            }
        };
        // logical (row-major) order, whatever the memory layout
        add(self.wq.view().into_dyn().iter());
        add(self.bq.view().into_dyn().iter());
        add(self.wk.view().into_dyn().iter());
        add(self.bk.view().into_dyn().iter());
        add(self.wv.view().into_dyn().iter());
        add(self.bv.view().into_dyn().iter());
        add(self.wo.view().into_dyn().iter());
        add(self.bo.view().into_dyn().iter());
        add(self.gamma.view().into_dyn().iter());
        add(self.beta.view().into_dyn().iter());
    }
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// `x` stacks whole sequences of `n` rows; attention stays within a sequence.
fn layer_forward(p: &LayerRef, x: Array2<f64>, n: usize, heads: usize) -> (Array2<f64>, LayerCache) {
    let (rows, d) = x.dim();
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let q = x.dot(&p.wq) + &p.bq;
    let k = x.dot(&p.wk) + &p.bk;
    let v = x.dot(&p.wv) + &p.bv;
    let mut concat = Array2::zeros((rows, d));
    let mut attn = Vec::with_capacity(heads * rows / n);
    for b in 0..rows / n {
        for h in 0..heads {
            let block = s![b * n..(b + 1) * n, h * dk..(h + 1) * dk];
            let mut a = q.slice(block).dot(&k.slice(block).t()) * scale;
            softmax_rows(&mut a);
            concat.slice_mut(block).assign(&a.dot(&v.slice(block)));
            attn.push(a);
        }
    }
    let y = &x + &(concat.dot(&p.wo) + &p.bo);
    let mean = y.mean_axis(Axis(1)).expect("d > 0");
    let centred = &y - &mean.view().insert_axis(Axis(1));
    let var = centred.mapv(|c| c * c).mean_axis(Axis(1)).expect("d > 0");
    let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = &centred * &inv_std.view().insert_axis(Axis(1));
    let out = &xhat * &p.gamma + &p.beta;
    (
        out,
        LayerCache {
            x,
            q,
            k,
            v,
            attn,
            concat,
            xhat,
            inv_std,
        },
    )
}

/// Returns the gradient with respect to the layer input.
fn layer_backward(
    p: &LayerRef,
    c: &LayerCache,
    dout: &Array2<f64>,
    n: usize,
    heads: usize,
) -> (Array2<f64>, LayerGrad) {
    let (rows, d) = c.x.dim();
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();

    let gamma_grad = (dout * &c.xhat).sum_axis(Axis(0));
    let beta_grad = dout.sum_axis(Axis(0));
    let dxhat = dout * &p.gamma;
    let mean_dxhat = dxhat.mean_axis(Axis(1)).expect("d > 0");
    let mean_dxhat_xhat = (&dxhat * &c.xhat).mean_axis(Axis(1)).expect("d > 0");
    let dy = (&dxhat
        - &mean_dxhat.view().insert_axis(Axis(1))
        - &(&c.xhat * &mean_dxhat_xhat.view().insert_axis(Axis(1))))
        * &c.inv_std.view().insert_axis(Axis(1));

    let wo_grad = c.concat.t().dot(&dy);
    let bo_grad = dy.sum_axis(Axis(0));
    let dconcat = dy.dot(&p.wo.t());

    let mut dq = Array2::zeros((rows, d));
    let mut dk_ = Array2::zeros((rows, d));
    let mut dv = Array2::zeros((rows, d));
    for b in 0..rows / n {
        for h in 0..heads {
            let block = s![b * n..(b + 1) * n, h * dk..(h + 1) * dk];
            let a = &c.attn[b * heads + h];
            let dc = dconcat.slice(block);
            let da = dc.dot(&c.v.slice(block).t());
            dv.slice_mut(block).assign(&a.t().dot(&dc));
            let row_dot = (&da * a).sum_axis(Axis(1));
            let ds = (&da - &row_dot.insert_axis(Axis(1))) * a * scale;
            dq.slice_mut(block).assign(&ds.dot(&c.k.slice(block)));
            dk_.slice_mut(block).assign(&ds.t().dot(&c.q.slice(block)));
        }
    }

    let xt = c.x.t();
    let grad = LayerGrad {
        wq: xt.dot(&dq),
        bq: dq.sum_axis(Axis(0)),
        wk: xt.dot(&dk_),
        bk: dk_.sum_axis(Axis(0)),
        wv: xt.dot(&dv),
        bv: dv.sum_axis(Axis(0)),
        wo: wo_grad,
        bo: bo_grad,
        gamma: gamma_grad,
        beta: beta_grad,
    };
    let dx = dy + dq.dot(&p.wq.t()) + dk_.dot(&p.wk.t()) + dv.dot(&p.wv.t());
    (dx, grad)
}

fn round_f32(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = *x as f32 as f64);
}

/// Numerically stable binary cross-entropy on a logit.
fn bce_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl ScoringHead {
    /// Seeded initialization: Xavier-uniform projections, zero biases, unit
    /// layer-norm gain.
    pub fn new(config: HeadConfig, seed: u64) -> Result<Self, KeyframeError> {
        config.validate()?;
        let d = config.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (6.0 / (2 * d) as f64).sqrt();
        let mut params = Vec::with_capacity(config.param_count());
        for _ in 0..config.layers {
            for _ in 0..4 {
                params.extend((0..d * d).map(|_| rng.random_range(-bound..bound)));
                params.extend(std::iter::repeat_n(0.0, d));
            }
            params.extend(std::iter::repeat_n(1.0, d));
            params.extend(std::iter::repeat_n(0.0, d));
        }
        let out_bound = (6.0 / (d + 1) as f64).sqrt();
        params.extend((0..d).map(|_| rng.random_range(-out_bound..out_bound)));
        params.push(0.0);
        round_f32(&mut params);
        Ok(Self { config, params, seed })
    }

    pub fn config(&self) -> HeadConfig {
        self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    fn layer(&self, l: usize) -> LayerRef<'_> {
        let per = self.config.per_layer();
        split_layer(&self.params[l * per..(l + 1) * per], self.config.dim)
    }

    fn output(&self) -> (ArrayView1<'_, f64>, f64) {
        let at = self.config.layers * self.config.per_layer();
        let d = self.config.dim;
        (ArrayView1::from(&self.params[at..at + d]), self.params[at + d])
    }

    fn check_dim(&self, feats: &FrameFeatures) -> Result<(), KeyframeError> {
        if feats.dim() != self.config.dim {
            return Err(KeyframeError::DimensionMismatch {
                expected: self.config.dim,
                got: feats.dim(),
            });
        }
        Ok(())
    }

    fn forward_cached(&self, x: &Array2<f64>, n: usize) -> (Array1<f64>, Vec<LayerCache>, Array2<f64>) {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            let (next, cache) = layer_forward(&self.layer(l), h, n, self.config.heads);
            caches.push(cache);
            h = next;
        }
        let (w, b) = self.output();
        (h.dot(&w) + b, caches, h)
    }

    /// Scores in input row order.
    ///
    /// Rows are processed in a canonical (bitwise lexicographic) order and the
    /// scores mapped back, so permuting the rows permutes the scores exactly.
    pub fn score(&self, feats: &FrameFeatures) -> Result<Vec<f64>, KeyframeError> {
        self.check_dim(feats)?;
        let m = feats.matrix();
        let mut order: Vec<usize> = (0..m.nrows()).collect();
        order.sort_by(|&a, &b| {
            m.row(a)
                .iter()
                .zip(m.row(b).iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let sorted = m.select(Axis(0), &order);
        let scores = self.forward_cached(&sorted, sorted.nrows()).0;
        let mut out = vec![0.0; order.len()];
        for (pos, &row) in order.iter().enumerate() {
            out[row] = scores[pos];
        }
        Ok(out)
    }

    /// Mean over sequences of the per-frame BCE against two-hot targets; the
    /// gradient of that mean is added into `grad`.
    fn loss_and_grad(
        &self,
        x: &Array2<f64>,
        targets: &[(usize, usize)],
        positive_weight: f64,
        grad: Option<&mut [f64]>,
    ) -> f64 {
        let rows = x.nrows();
        let n = rows / targets.len();
        let (z, caches, top) = self.forward_cached(x, n);
        let y = |r: usize| {
            let (s, e) = targets[r / n];
            if r % n == s || r % n == e {
                1.0
            } else {
                0.0
            }
        };
        let w = |r: usize| if y(r) == 1.0 { positive_weight } else { 1.0 };
        let loss = z
            .iter()
            .enumerate()
            .map(|(r, &zr)| w(r) * bce_logit(zr, y(r)))
            .sum::<f64>()
            / rows as f64;
        let Some(grad) = grad else {
            return loss;
        };
        let dz = Array1::from_iter(
            z.iter()
                .enumerate()
                .map(|(r, &zr)| w(r) * (sigmoid(zr) - y(r)) / rows as f64),
        );
        let (w, _) = self.output();
        let out_at = self.config.layers * self.config.per_layer();
        let d = self.config.dim;
        for (g, v) in grad[out_at..out_at + d].iter_mut().zip(top.t().dot(&dz).iter()) {
            *g += v;
        }
        grad[out_at + d] += dz.sum();
        let mut dh = dz.view().insert_axis(Axis(1)).dot(&w.view().insert_axis(Axis(0)));
        let per = self.config.per_layer();
        for l in (0..self.config.layers).rev() {
            let (dx, lg) = layer_backward(&self.layer(l), &caches[l], &dh, n, self.config.heads);
            lg.add_into(&mut grad[l * per..(l + 1) * per]);
            dh = dx;
        }
        loss
    }

    /// Mean training loss over `samples`, keyframe terms weighted by `positive_weight`.
    pub fn mean_loss(
        &self,
        samples: &[(FrameFeatures, (usize, usize))],
        positive_weight: f64,
    ) -> Result<f64, KeyframeError> {
        if samples.is_empty() {
            return Err(KeyframeError::NoSamples);
        }
        let mut total = 0.0;
        for (f, t) in samples {
            self.check_dim(f)?;
            total += self.loss_and_grad(f.matrix(), &[*t], positive_weight, None);
        }
        Ok(total / samples.len() as f64)
    }

    /// Little-endian weights file: 16-byte header then `f32` parameters.
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = self.config;
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.params.len());
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        out.extend_from_slice(&(c.layers as u16).to_le_bytes());
        out.extend_from_slice(&(c.heads as u16).to_le_bytes());
        out.extend_from_slice(&(c.dim as u32).to_le_bytes());
        for &p in &self.params {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, KeyframeError> {
        let bad = |m: &str| KeyframeError::BadWeights(m.to_string());
        if bytes.len() < HEADER_LEN || &bytes[..4] != WEIGHTS_MAGIC {
            return Err(bad("missing AKFH header"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let u16_at = |i: usize| u16::from_le_bytes(bytes[i..i + 2].try_into().expect("2 bytes"));
        let version = u32_at(4);
        if version != WEIGHTS_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let config = HeadConfig {
            layers: u16_at(8) as usize,
            heads: u16_at(10) as usize,
            dim: u32_at(12) as usize,
        };
        config.validate()?;
        let body = &bytes[HEADER_LEN..];
        if body.len() != 4 * config.param_count() {
            return Err(bad(&format!(
                "expected {} parameters, found {} bytes",
                config.param_count(),
                body.len()
            )));
        }
        let params: Vec<f64> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        if params.iter().any(|p| !p.is_finite()) {
            return Err(KeyframeError::NonFinite);
        }
        Ok(Self { config, params, seed: 0 })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), KeyframeError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KeyframeError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Same parameters, ignoring the seed (not stored in the weights file).
    pub fn same_weights(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

/// Score every frame of `feats`.
pub fn score_frames(head: &ScoringHead, feats: &FrameFeatures) -> Result<Vec<f64>, KeyframeError> {
    head.score(feats)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub head: HeadConfig,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Weight of the two keyframe terms in the loss; `None` balances them
    /// against the `N - 2` other frames, `(N - 2) / 2`.
    pub positive_weight: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            head: HeadConfig::default(),
            epochs: 40,
            learning_rate: 6e-4,
            batch_size: 16,
            positive_weight: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub head: ScoringHead,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Adam on the mean per-frame BCE against two-hot targets; single-threaded
/// and fully determined by `config.seed`.
pub fn train_head(
    samples: &[(FrameFeatures, (usize, usize))],
    config: &TrainConfig,
) -> Result<TrainOutcome, KeyframeError> {
    if samples.is_empty() {
        return Err(KeyframeError::NoSamples);
    }
    let mut head = ScoringHead::new(config.head, config.seed)?;
    let n = samples[0].0.frames();
    for (f, (s, e)) in samples {
        head.check_dim(f)?;
        if f.frames() != n {
            return Err(KeyframeError::BadConfig(format!(
                "training sequences must share one length, found {n} and {}",
                f.frames()
            )));
        }
        if !(s < e && *e < f.frames()) {
            return Err(KeyframeError::BadTarget {
                s: *s,
                e: *e,
                n: f.frames(),
            });
        }
    }
    let pos_weight = config
        .positive_weight
        .unwrap_or(((n as f64 - 2.0) / 2.0).max(1.0));
    let initial_loss = head.mean_loss(samples, pos_weight)?;
    if config.epochs == 0 {
        return Ok(TrainOutcome {
            head,
            initial_loss,
            final_loss: initial_loss,
        });
    }

    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let count = head.params.len();
    let mut m = vec![0.0; count];
    let mut v = vec![0.0; count];
    let mut grad = vec![0.0; count];
    let mut step = 0i32;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let batch = config.batch_size.max(1);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let views: Vec<_> = chunk.iter().map(|&i| samples[i].0.matrix().view()).collect();
            let targets: Vec<_> = chunk.iter().map(|&i| samples[i].1).collect();
            let x = ndarray::concatenate(Axis(0), &views).expect("equal widths");
            head.loss_and_grad(&x, &targets, pos_weight, Some(&mut grad));
            step += 1;
            let c1 = 1.0 - beta1.powi(step);
            let c2 = 1.0 - beta2.powi(step);
            for j in 0..count {
                let g = grad[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                head.params[j] -= config.learning_rate * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            }
        }
    }
    round_f32(&mut head.params);
    let final_loss = head.mean_loss(samples, pos_weight)?;
    Ok(TrainOutcome {
        head,
        initial_loss,
        final_loss,
    })
}
