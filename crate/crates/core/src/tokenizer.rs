//! Vector-quantized 1D-convolutional autoencoder over joint-angle windows.
//!
//! Activations are stored as `(batch * length, channels)` matrices so every
//! convolution becomes one im2col matrix product.

use std::collections::VecDeque;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{ChannelMask, RmseReport, NUM_JOINTS};
use crate::seed::SeedDeriver;

pub const MODEL_FORMAT_VERSION: u32 = 1;

const CODE_EPS: f64 = 1e-5;
const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub downsample_l: usize,
    pub codebook_size_k: usize,
    pub code_dim_d: usize,
    /// Width of the hidden convolution layers.
    pub hidden_channels: usize,
    pub beta_commit: f64,
    pub ema_decay: f64,
    /// Codes used fewer times than this over the usage window are reset.
    pub reset_threshold: f64,
    pub reset_window_steps: usize,
    pub window_frames: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub train_steps: usize,
    pub seed: u64,
}

impl TokenizerConfig {
    pub fn paper() -> Self {
        TokenizerConfig {
            downsample_l: 4,
            codebook_size_k: 512,
            code_dim_d: 512,
            hidden_channels: 512,
            beta_commit: 0.02,
            ema_decay: 0.99,
            reset_threshold: 1.0,
            reset_window_steps: 500,
            window_frames: 64,
            learning_rate: 2e-4,
            batch_size: 32,
            train_steps: 20_000,
            seed: 0,
        }
    }

    pub fn desk() -> Self {
        TokenizerConfig {
            codebook_size_k: 128,
            code_dim_d: 64,
            hidden_channels: 64,
            train_steps: 3_000,
            ..Self::paper()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::Config(format!(
                "unknown tokenizer profile {other:?} (expected paper or desk)"
            ))),
        }
    }

    pub fn levels(&self) -> usize {
        self.downsample_l.trailing_zeros() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !self.downsample_l.is_power_of_two() {
            return fail(format!(
                "downsample_l must be a power of two, got {}",
                self.downsample_l
            ));
        }
        if self.window_frames == 0 || self.window_frames % self.downsample_l != 0 {
            return fail(format!(
                "window_frames {} not divisible by downsample_l {}",
                self.window_frames, self.downsample_l
            ));
        }
        if self.codebook_size_k == 0 || self.code_dim_d == 0 || self.hidden_channels == 0 {
            return fail("codebook size, code dimension and hidden width must be positive".into());
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return fail(format!(
                "ema_decay must lie in (0, 1), got {}",
                self.ema_decay
            ));
        }
        if !(self.beta_commit >= 0.0) || !(self.reset_threshold >= 0.0) {
            return fail("beta_commit and reset_threshold must be non-negative".into());
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.reset_window_steps == 0 {
            return fail("learning rate, batch size and reset window must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Conv1d {
    k: usize,
    stride: usize,
    pad: usize,
    cin: usize,
    cout: usize,
    /// `(k * cin, cout)`, row index `tap * cin + channel`.
    w: Array2<f64>,
    b: Array1<f64>,
}

#[derive(Debug, Clone)]
struct ConvGrad {
    w: Array2<f64>,
    b: Array1<f64>,
}

impl ConvGrad {
    fn zeros_like(c: &Conv1d) -> Self {
        ConvGrad {
            w: Array2::zeros(c.w.dim()),
            b: Array1::zeros(c.b.len()),
        }
    }
}

impl Conv1d {
    fn new(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = gain * (3.0 / (k * cin) as f64).sqrt();
        Conv1d {
            k,
            stride,
            pad,
            cin,
            cout,
            w: Array2::from_shape_fn((k * cin, cout), |_| rng.random_range(-bound..=bound)),
            b: Array1::zeros(cout),
        }
    }

    fn out_len(&self, l: usize) -> usize {
        (l + 2 * self.pad - self.k) / self.stride + 1
    }

    fn im2col(&self, x: &Array2<f64>, batch: usize, l: usize) -> (Array2<f64>, usize) {
        let lo = self.out_len(l);
        let width = self.k * self.cin;
        let mut cols = Array2::zeros((batch * lo, width));
        let xs = x.as_standard_layout();
        let xs = xs.as_slice().expect("standard layout");
        let cs = cols.as_slice_mut().expect("fresh array");
        for bi in 0..batch {
            for t in 0..lo {
                let row = (bi * lo + t) * width;
                for tap in 0..self.k {
                    let src = (t * self.stride + tap) as isize - self.pad as isize;
                    if src >= 0 && (src as usize) < l {
                        let s = (bi * l + src as usize) * self.cin;
                        cs[row + tap * self.cin..row + (tap + 1) * self.cin]
                            .copy_from_slice(&xs[s..s + self.cin]);
                    }
                }
            }
        }
        (cols, lo)
    }

    fn forward(
        &self,
        x: &Array2<f64>,
        batch: usize,
        l: usize,
    ) -> (Array2<f64>, Array2<f64>, usize) {
        let (cols, lo) = self.im2col(x, batch, l);
        let mut out = cols.dot(&self.w);
        out += &self.b;
        (out, cols, lo)
    }

    /// Accumulates parameter gradients into `grad`; returns the input
    /// gradient when `need_dx`.
    fn backward(
        &self,
        cols: &Array2<f64>,
        dout: &Array2<f64>,
        batch: usize,
        l: usize,
        grad: &mut ConvGrad,
        need_dx: bool,
    ) -> Option<Array2<f64>> {
        grad.w += &cols.t().dot(dout);
        grad.b += &dout.sum_axis(Axis(0));
        if !need_dx {
            return None;
        }
        let dcols = dout.dot(&self.w.t());
        let lo = self.out_len(l);
        let width = self.k * self.cin;
        let mut dx = Array2::<f64>::zeros((batch * l, self.cin));
        let ds = dcols.as_slice().expect("standard layout");
        let xs = dx.as_slice_mut().expect("fresh array");
        for bi in 0..batch {
            for t in 0..lo {
                let row = (bi * lo + t) * width;
                for tap in 0..self.k {
                    let src = (t * self.stride + tap) as isize - self.pad as isize;
                    if src >= 0 && (src as usize) < l {
                        let s = (bi * l + src as usize) * self.cin;
                        let from = &ds[row + tap * self.cin..row + (tap + 1) * self.cin];
                        for (d, v) in xs[s..s + self.cin].iter_mut().zip(from) {
                            *d += v;
                        }
                    }
                }
            }
        }
        Some(dx)
    }
}

fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// `dy * 1[x > 0]`
fn relu_grad(dy: &Array2<f64>, x: &Array2<f64>) -> Array2<f64> {
    let mut out = dy.clone();
    out.zip_mut_with(x, |d, &v| {
        if v <= 0.0 {
            *d = 0.0;
        }
    });
    out
}

fn upsample2(x: &Array2<f64>, batch: usize, l: usize) -> Array2<f64> {
    let c = x.ncols();
    let mut out = Array2::zeros((batch * l * 2, c));
    for bi in 0..batch {
        for t in 0..l {
            let src = x.row(bi * l + t);
            out.row_mut(bi * 2 * l + 2 * t).assign(&src);
            out.row_mut(bi * 2 * l + 2 * t + 1).assign(&src);
        }
    }
    out
}

fn upsample2_backward(d: &Array2<f64>, batch: usize, l: usize) -> Array2<f64> {
    let c = d.ncols();
    let mut out = Array2::zeros((batch * l, c));
    for bi in 0..batch {
        for t in 0..l {
            let mut row = out.row_mut(bi * l + t);
            row.assign(&d.row(bi * 2 * l + 2 * t));
            row += &d.row(bi * 2 * l + 2 * t + 1);
        }
    }
    out
}

/// Encoder: per level a stride-2 kernel-4 convolution with ReLU and a
/// residual block, then a pointwise projection to the code dimension.
/// Decoder mirrors it with nearest-neighbour upsampling.
#[derive(Debug, Clone, PartialEq)]
struct Network {
    enc_down: Vec<Conv1d>,
    enc_res: Vec<Conv1d>,
    enc_out: Conv1d,
    dec_in: Conv1d,
    dec_res: Vec<Conv1d>,
    dec_up: Vec<Conv1d>,
    dec_out: Conv1d,
}

impl Network {
    fn new(cfg: &TokenizerConfig, rng: &mut impl Rng) -> Self {
        let h = cfg.hidden_channels;
        let levels = cfg.levels();
        let mut enc_down = Vec::new();
        let mut enc_res = Vec::new();
        let mut cin = NUM_JOINTS;
        for _ in 0..levels {
            enc_down.push(Conv1d::new(cin, h, 4, 2, 1, 1.0, rng));
            enc_res.push(Conv1d::new(h, h, 3, 1, 1, 0.3, rng));
            cin = h;
        }
        let enc_out = Conv1d::new(cin, cfg.code_dim_d, 1, 1, 0, 1.0, rng);
        let dec_in = Conv1d::new(cfg.code_dim_d, h, 3, 1, 1, 1.0, rng);
        let mut dec_res = Vec::new();
        let mut dec_up = Vec::new();
        for _ in 0..levels {
            dec_res.push(Conv1d::new(h, h, 3, 1, 1, 0.3, rng));
            dec_up.push(Conv1d::new(h, h, 3, 1, 1, 1.0, rng));
        }
        let dec_out = Conv1d::new(h, NUM_JOINTS, 3, 1, 1, 1.0, rng);
        Network {
            enc_down,
            enc_res,
            enc_out,
            dec_in,
            dec_res,
            dec_up,
            dec_out,
        }
    }

    fn convs(&self) -> Vec<&Conv1d> {
        let mut v = Vec::new();
        for (d, r) in self.enc_down.iter().zip(&self.enc_res) {
            v.push(d);
            v.push(r);
        }
        v.push(&self.enc_out);
        v.push(&self.dec_in);
        for (r, u) in self.dec_res.iter().zip(&self.dec_up) {
            v.push(r);
            v.push(u);
        }
        v.push(&self.dec_out);
        v
    }

    fn convs_mut(&mut self) -> Vec<&mut Conv1d> {
        let mut v = Vec::new();
        for (d, r) in self.enc_down.iter_mut().zip(self.enc_res.iter_mut()) {
            v.push(d);
            v.push(r);
        }
        v.push(&mut self.enc_out);
        v.push(&mut self.dec_in);
        for (r, u) in self.dec_res.iter_mut().zip(self.dec_up.iter_mut()) {
            v.push(r);
            v.push(u);
        }
        v.push(&mut self.dec_out);
        v
    }

    fn zero_grads(&self) -> Vec<ConvGrad> {
        self.convs().into_iter().map(ConvGrad::zeros_like).collect()
    }

    fn levels(&self) -> usize {
        self.enc_down.len()
    }

    // gradient slots follow the order of `convs`
    fn enc_slot(&self, level: usize, res: bool) -> usize {
        2 * level + usize::from(res)
    }

    fn enc_out_slot(&self) -> usize {
        2 * self.levels()
    }

    fn dec_in_slot(&self) -> usize {
        2 * self.levels() + 1
    }

    fn dec_slot(&self, level: usize, up: bool) -> usize {
        2 * self.levels() + 2 + 2 * level + usize::from(up)
    }

    fn dec_out_slot(&self) -> usize {
        4 * self.levels() + 2
    }
}

struct EncLevel {
    len_in: usize,
    cols_down: Array2<f64>,
    a: Array2<f64>,
    h: Array2<f64>,
    cols_res: Array2<f64>,
}

struct EncCache {
    levels: Vec<EncLevel>,
    cols_out: Array2<f64>,
    len_out: usize,
}

struct DecLevel {
    len_in: usize,
    h: Array2<f64>,
    cols_res: Array2<f64>,
    cols_up: Array2<f64>,
    a: Array2<f64>,
}

struct DecCache {
    cols_in: Array2<f64>,
    a_in: Array2<f64>,
    levels: Vec<DecLevel>,
    cols_out: Array2<f64>,
    len_out: usize,
}

impl Network {
    fn encode(&self, x: &Array2<f64>, batch: usize, l: usize) -> (Array2<f64>, EncCache) {
        let mut h = x.clone();
        let mut len = l;
        let mut levels = Vec::with_capacity(self.levels());
        for (down, res) in self.enc_down.iter().zip(&self.enc_res) {
            let (a, cols_down, lo) = down.forward(&h, batch, len);
            let hh = relu(&a);
            let (r, cols_res, _) = res.forward(&relu(&hh), batch, lo);
            levels.push(EncLevel {
                len_in: len,
                cols_down,
                a,
                h: hh.clone(),
                cols_res,
            });
            h = hh + r;
            len = lo;
        }
        let (z, cols_out, _) = self.enc_out.forward(&h, batch, len);
        (
            z,
            EncCache {
                levels,
                cols_out,
                len_out: len,
            },
        )
    }

    fn encode_backward(
        &self,
        cache: &EncCache,
        dz: &Array2<f64>,
        batch: usize,
        grads: &mut [ConvGrad],
    ) {
        let mut dh = self
            .enc_out
            .backward(
                &cache.cols_out,
                dz,
                batch,
                cache.len_out,
                &mut grads[self.enc_out_slot()],
                true,
            )
            .expect("dx requested");
        let mut len = cache.len_out;
        for (i, lv) in cache.levels.iter().enumerate().rev() {
            let dres = self.enc_res[i]
                .backward(
                    &lv.cols_res,
                    &dh,
                    batch,
                    len,
                    &mut grads[self.enc_slot(i, true)],
                    true,
                )
                .expect("dx requested");
            let dhh = dh + relu_grad(&dres, &lv.h);
            let da = relu_grad(&dhh, &lv.a);
            let need_dx = i > 0;
            match self.enc_down[i].backward(
                &lv.cols_down,
                &da,
                batch,
                lv.len_in,
                &mut grads[self.enc_slot(i, false)],
                need_dx,
            ) {
                Some(d) => dh = d,
                None => return,
            }
            len = lv.len_in;
        }
    }

    fn decode(&self, q: &Array2<f64>, batch: usize, t: usize) -> (Array2<f64>, DecCache) {
        let (a_in, cols_in, _) = self.dec_in.forward(q, batch, t);
        let mut h = relu(&a_in);
        let mut len = t;
        let mut levels = Vec::with_capacity(self.levels());
        for (res, up) in self.dec_res.iter().zip(&self.dec_up) {
            let (r, cols_res, _) = res.forward(&relu(&h), batch, len);
            let h_in = h;
            let h2 = &h_in + &r;
            let u = upsample2(&h2, batch, len);
            let (a, cols_up, _) = up.forward(&u, batch, 2 * len);
            h = relu(&a);
            levels.push(DecLevel {
                len_in: len,
                h: h_in,
                cols_res,
                cols_up,
                a,
            });
            len *= 2;
        }
        let (out, cols_out, _) = self.dec_out.forward(&h, batch, len);
        (
            out,
            DecCache {
                cols_in,
                a_in,
                levels,
                cols_out,
                len_out: len,
            },
        )
    }

    fn decode_backward(
        &self,
        cache: &DecCache,
        dout: &Array2<f64>,
        batch: usize,
        grads: &mut [ConvGrad],
    ) -> Array2<f64> {
        let mut dh = self
            .dec_out
            .backward(
                &cache.cols_out,
                dout,
                batch,
                cache.len_out,
                &mut grads[self.dec_out_slot()],
                true,
            )
            .expect("dx requested");
        for (i, lv) in cache.levels.iter().enumerate().rev() {
            let da = relu_grad(&dh, &lv.a);
            let du = self.dec_up[i]
                .backward(
                    &lv.cols_up,
                    &da,
                    batch,
                    2 * lv.len_in,
                    &mut grads[self.dec_slot(i, true)],
                    true,
                )
                .expect("dx requested");
            let dh2 = upsample2_backward(&du, batch, lv.len_in);
            let dres = self.dec_res[i]
                .backward(
                    &lv.cols_res,
                    &dh2,
                    batch,
                    lv.len_in,
                    &mut grads[self.dec_slot(i, false)],
                    true,
                )
                .expect("dx requested");
            dh = dh2 + relu_grad(&dres, &lv.h);
        }
        let t = cache.levels.first().map_or(cache.len_out, |lv| lv.len_in);
        let da_in = relu_grad(&dh, &cache.a_in);
        self.dec_in
            .backward(
                &cache.cols_in,
                &da_in,
                batch,
                t,
                &mut grads[self.dec_in_slot()],
                true,
            )
            .expect("dx requested")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    /// `K x D`
    pub codes: Array2<f64>,
    pub ema_cluster_count: Array1<f64>,
    pub ema_cluster_sum: Array2<f64>,
}

impl Codebook {
    pub fn new(codes: Array2<f64>) -> Result<Self> {
        if codes.nrows() == 0 || codes.ncols() == 0 {
            return Err(Error::EmptyInput("codebook needs at least one code".into()));
        }
        if codes.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract(
                "codebook contains non-finite values".into(),
            ));
        }
        Ok(Codebook {
            ema_cluster_count: Array1::ones(codes.nrows()),
            ema_cluster_sum: codes.clone(),
            codes,
        })
    }

    pub fn size(&self) -> usize {
        self.codes.nrows()
    }

    pub fn dim(&self) -> usize {
        self.codes.ncols()
    }

    fn nearest(&self, z: ndarray::ArrayView1<f64>) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, e) in self.codes.outer_iter().enumerate() {
            let d: f64 = z.iter().zip(e.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    /// One EMA step: `N <- gN + (1-g)n`, `m <- gm + (1-g) sum z`, `e = m / max(N, eps)`.
    pub fn ema_update(&mut self, latents: &Array2<f64>, indices: &[usize], decay: f64) {
        let k = self.size();
        let mut counts = Array1::<f64>::zeros(k);
        let mut sums = Array2::<f64>::zeros((k, self.dim()));
        for (z, &i) in latents.outer_iter().zip(indices) {
            counts[i] += 1.0;
            let mut row = sums.row_mut(i);
            row += &z;
        }
        self.ema_cluster_count *= decay;
        self.ema_cluster_count.scaled_add(1.0 - decay, &counts);
        self.ema_cluster_sum *= decay;
        self.ema_cluster_sum.scaled_add(1.0 - decay, &sums);
        for (mut e, (m, n)) in self.codes.outer_iter_mut().zip(
            self.ema_cluster_sum
                .outer_iter()
                .zip(self.ema_cluster_count.iter()),
        ) {
            e.assign(&(&m / n.max(CODE_EPS)));
        }
    }

    fn reset_code(&mut self, k: usize, z: ndarray::ArrayView1<f64>) {
        self.codes.row_mut(k).assign(&z);
        self.ema_cluster_sum.row_mut(k).assign(&z);
        self.ema_cluster_count[k] = 1.0;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub indices: Vec<usize>,
    pub quantized: Array2<f64>,
    pub commit_loss: f64,
}

/// Nearest code per latent row (Euclidean, lowest index on ties).
pub fn quantize(codebook: &Codebook, latents: &Array2<f64>) -> Result<Quantized> {
    if latents.nrows() == 0 {
        return Err(Error::EmptyInput("no latents to quantize".into()));
    }
    if latents.ncols() != codebook.dim() {
        return Err(Error::Contract(format!(
            "latent dimension {} does not match code dimension {}",
            latents.ncols(),
            codebook.dim()
        )));
    }
    let indices: Vec<usize> = latents.outer_iter().map(|z| codebook.nearest(z)).collect();
    let mut quantized = Array2::zeros(latents.dim());
    for (mut row, &i) in quantized.outer_iter_mut().zip(&indices) {
        row.assign(&codebook.codes.row(i));
    }
    let commit_loss = (latents - &quantized).mapv(|v| v * v).mean().unwrap_or(0.0);
    Ok(Quantized {
        indices,
        quantized,
        commit_loss,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity() -> Self {
        NormStats {
            mean: vec![0.0; NUM_JOINTS],
            std: vec![1.0; NUM_JOINTS],
        }
    }

    /// Per-channel mean and population std over every frame; constant
    /// channels get std 1.
    pub fn from_trials(trials: &[Array2<f64>]) -> Result<Self> {
        let rows: usize = trials.iter().map(|t| t.nrows()).sum();
        if rows == 0 {
            return Err(Error::EmptyInput("no frames for normalization".into()));
        }
        let mut sum = vec![0.0; NUM_JOINTS];
        for t in trials {
            check_width(t)?;
            for row in t.outer_iter() {
                for (s, v) in sum.iter_mut().zip(row.iter()) {
                    *s += v;
                }
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / rows as f64).collect();
        let mut ss = vec![0.0; NUM_JOINTS];
        for t in trials {
            for row in t.outer_iter() {
                for ((s, v), m) in ss.iter_mut().zip(row.iter()).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let std = ss
            .iter()
            .map(|s| {
                let sd = (s / rows as f64).sqrt();
                if sd < STD_FLOOR {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(NormStats { mean, std })
    }

    fn normalize(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for mut row in out.outer_iter_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    fn denormalize(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for mut row in out.outer_iter_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
        out
    }
}

fn check_width(x: &Array2<f64>) -> Result<()> {
    if x.ncols() != NUM_JOINTS {
        return Err(Error::Contract(format!(
            "expected {NUM_JOINTS} joint channels, got {}",
            x.ncols()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizerModel {
    pub config: TokenizerConfig,
    pub norm: NormStats,
    pub masked_channels: Vec<usize>,
    pub codebook: Codebook,
    net: Network,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub commit: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(recon: f64, commit: f64, beta_commit: f64) -> Self {
        LossBreakdown {
            recon,
            commit,
            total: recon + beta_commit * commit,
        }
    }
}

/// How the bottleneck is resolved in a forward pass. `Frozen` replaces the
/// nearest-code lookup by `q = z + offsets` with a fixed commitment target,
/// which makes the loss differentiable for finite-difference checks while
/// keeping the straight-through gradient exact.
enum Bottleneck<'a> {
    Nearest,
    Frozen {
        offsets: &'a Array2<f64>,
        targets: &'a Array2<f64>,
    },
}

struct Pass {
    loss: LossBreakdown,
    grads: Vec<ConvGrad>,
    latents: Array2<f64>,
    indices: Vec<usize>,
}

impl TokenizerModel {
    pub fn new(config: TokenizerConfig, norm: NormStats, mask: &ChannelMask) -> Result<Self> {
        config.validate()?;
        if norm.mean.len() != NUM_JOINTS || norm.std.len() != NUM_JOINTS {
            return Err(Error::Contract(
                "normalization stats must cover 34 channels".into(),
            ));
        }
        let mut rng = SeedDeriver::new(config.seed).str("init").rng();
        let net = Network::new(&config, &mut rng);
        let codes = Array2::from_shape_fn((config.codebook_size_k, config.code_dim_d), |_| {
            rng.random_range(-1.0..1.0)
        });
        Ok(TokenizerModel {
            codebook: Codebook::new(codes)?,
            norm,
            masked_channels: mask.channels().collect(),
            config,
            net,
        })
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        check_width(x)?;
        if x.nrows() == 0 {
            return Err(Error::EmptyInput("window has no frames".into()));
        }
        if x.nrows() % self.config.downsample_l != 0 {
            return Err(Error::Contract(format!(
                "window length {} not divisible by {}",
                x.nrows(),
                self.config.downsample_l
            )));
        }
        Ok(())
    }

    /// Latents `(L/l) x D` for one raw (radian) window.
    pub fn encode(&self, window: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(window)?;
        let x = self.norm.normalize(window);
        Ok(self.net.encode(&x, 1, x.nrows()).0)
    }

    /// Reconstruction `(l * T) x 34` in radians.
    pub fn decode(&self, quantized: &Array2<f64>) -> Result<Array2<f64>> {
        if quantized.ncols() != self.config.code_dim_d {
            return Err(Error::Contract(format!(
                "quantized width {} does not match code dimension {}",
                quantized.ncols(),
                self.config.code_dim_d
            )));
        }
        if quantized.nrows() == 0 {
            return Err(Error::EmptyInput("nothing to decode".into()));
        }
        let (out, _) = self.net.decode(quantized, 1, quantized.nrows());
        Ok(self.norm.denormalize(&out))
    }

    pub fn decode_indices(&self, tokens: &[u32]) -> Result<Array2<f64>> {
        let k = self.codebook.size();
        let mut q = Array2::zeros((tokens.len(), self.config.code_dim_d));
        for (mut row, &t) in q.outer_iter_mut().zip(tokens) {
            let t = t as usize;
            if t >= k {
                return Err(Error::Contract(format!(
                    "token {t} outside codebook of size {k}"
                )));
            }
            row.assign(&self.codebook.codes.row(t));
        }
        self.decode(&q)
    }

    /// Stacks raw windows into one normalized `(B*L, 34)` matrix.
    /// Worst relative error between analytic and central finite-difference
    /// gradients over every network parameter, with the code assignment of
    /// `batch` frozen. Leaves the parameters unchanged.
    pub fn gradient_check(&mut self, batch: &[Array2<f64>], h: f64) -> Result<f64> {
        let (x, l) = self.stack(batch)?;
        let n = batch.len();
        let (z, _) = self.net.encode(&x, n, l);
        let q = quantize(&self.codebook, &z)?;
        let offsets = &q.quantized - &z;
        let targets = q.quantized.clone();
        let mode = || Bottleneck::Frozen {
            offsets: &offsets,
            targets: &targets,
        };
        let analytic = self.pass(&x, n, l, mode())?.grads;
        let mut worst: f64 = 0.0;
        for (ci, g) in analytic.iter().enumerate() {
            let n_w = g.w.len();
            for p in 0..n_w + g.b.len() {
                let orig = *self.param(ci, p);
                *self.param(ci, p) = orig + h;
                let up = self.pass(&x, n, l, mode())?.loss.total;
                *self.param(ci, p) = orig - h;
                let down = self.pass(&x, n, l, mode())?.loss.total;
                *self.param(ci, p) = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = if p < n_w {
                    g.w.iter().nth(p).copied().unwrap_or(0.0)
                } else {
                    g.b[p - n_w]
                };
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        Ok(worst)
    }

    fn param(&mut self, conv: usize, p: usize) -> &mut f64 {
        let c = self.net.convs_mut().swap_remove(conv);
        let n_w = c.w.len();
        if p < n_w {
            c.w.iter_mut().nth(p).expect("weight index")
        } else {
            &mut c.b[p - n_w]
        }
    }

    fn stack(&self, batch: &[Array2<f64>]) -> Result<(Array2<f64>, usize)> {
        let first = batch
            .first()
            .ok_or_else(|| Error::EmptyInput("empty training batch".into()))?;
        let l = first.nrows();
        let mut x = Array2::zeros((batch.len() * l, NUM_JOINTS));
        for (i, w) in batch.iter().enumerate() {
            self.check_input(w)?;
            if w.nrows() != l {
                return Err(Error::Contract(
                    "windows in a batch must share a length".into(),
                ));
            }
            x.slice_mut(ndarray::s![i * l..(i + 1) * l, ..])
                .assign(&self.norm.normalize(w));
        }
        Ok((x, l))
    }

    fn pass(&self, x: &Array2<f64>, batch: usize, l: usize, mode: Bottleneck<'_>) -> Result<Pass> {
        let (z, enc_cache) = self.net.encode(x, batch, l);
        let t = enc_cache.len_out;
        let (q, target, indices) = match mode {
            Bottleneck::Nearest => {
                let qz = quantize(&self.codebook, &z)?;
                (qz.quantized.clone(), qz.quantized, qz.indices)
            }
            Bottleneck::Frozen { offsets, targets } => (&z + offsets, targets.clone(), Vec::new()),
        };
        let (xhat, dec_cache) = self.net.decode(&q, batch, t);
        let diff = &xhat - x;
        let n = diff.len() as f64;
        let recon = diff.mapv(|v| v * v).sum() / n;
        let zdiff = &z - &target;
        let m = zdiff.len() as f64;
        let commit = zdiff.mapv(|v| v * v).sum() / m;
        let loss = LossBreakdown::new(recon, commit, self.config.beta_commit);

        let mut grads = self.net.zero_grads();
        let dxhat = diff * (2.0 / n);
        // straight-through: the decoder input gradient passes to z unchanged
        let dq = self
            .net
            .decode_backward(&dec_cache, &dxhat, batch, &mut grads);
        let dz = dq + zdiff * (2.0 * self.config.beta_commit / m);
        self.net.encode_backward(&enc_cache, &dz, batch, &mut grads);
        Ok(Pass {
            loss,
            grads,
            latents: z,
            indices,
        })
    }

    /// Full-length tokenization of a masked L×34 radian matrix, padded at the
    /// end by repeating the last frame up to a multiple of `l`.
    pub fn tokenize_matrix(&self, trial_id: &str, mat: &Array2<f64>) -> Result<TokenSequence> {
        if mat.nrows() == 0 {
            return Err(Error::EmptyInput(format!("{trial_id}: no frames")));
        }
        check_width(mat)?;
        let padded = self.pad_and_mask(mat);
        let z = self.encode(&padded)?;
        let q = quantize(&self.codebook, &z)?;
        Ok(TokenSequence {
            trial_id: trial_id.to_string(),
            tokens: q.indices.iter().map(|&i| i as u32).collect(),
            source_frames: mat.nrows(),
        })
    }

    fn pad_and_mask(&self, mat: &Array2<f64>) -> Array2<f64> {
        let l = self.config.downsample_l;
        let frames = mat.nrows();
        let padded_len = frames.div_ceil(l) * l;
        let mut out = Array2::zeros((padded_len, NUM_JOINTS));
        out.slice_mut(ndarray::s![..frames, ..]).assign(mat);
        let last = mat.row(frames - 1).to_owned();
        for r in frames..padded_len {
            out.row_mut(r).assign(&last);
        }
        for &c in &self.masked_channels {
            out.column_mut(c).fill(0.0);
        }
        out
    }

    pub fn tokenize_trial(&self, traj: &crate::motion::Trajectory) -> Result<TokenSequence> {
        let mat = crate::motion::strip_to_joint_matrix(traj)?;
        self.tokenize_matrix(&traj.trial_id, &mat)
    }

    /// Encode, quantize and decode a whole trial; cropped to its frame count.
    pub fn reconstruct(&self, mat: &Array2<f64>) -> Result<Array2<f64>> {
        if mat.nrows() == 0 {
            return Err(Error::EmptyInput("no frames".into()));
        }
        check_width(mat)?;
        let padded = self.pad_and_mask(mat);
        let z = self.encode(&padded)?;
        let q = quantize(&self.codebook, &z)?;
        let out = self.decode(&q.quantized)?;
        Ok(out.slice(ndarray::s![..mat.nrows(), ..]).to_owned())
    }

    /// Reconstruction RMSE in degrees over the unmasked channels, pooled
    /// across all frames of all trials.
    pub fn reconstruction_rmse(&self, trials: &[Array2<f64>]) -> Result<RmseReport> {
        let mut sse = vec![0.0; NUM_JOINTS];
        let mut rows = 0usize;
        for t in trials {
            let rec = self.reconstruct(t)?;
            let target = self.pad_and_mask(t);
            for (ra, rb) in rec.outer_iter().zip(target.outer_iter()) {
                for (j, (a, b)) in ra.iter().zip(rb.iter()).enumerate() {
                    sse[j] += (a - b) * (a - b);
                }
            }
            rows += t.nrows();
        }
        if rows == 0 {
            return Err(Error::EmptyInput("no frames to evaluate".into()));
        }
        let per_joint_deg: Vec<f64> = sse
            .iter()
            .map(|s| (s / rows as f64).sqrt().to_degrees())
            .collect();
        let active: Vec<f64> = per_joint_deg
            .iter()
            .enumerate()
            .filter(|(j, _)| !self.masked_channels.contains(j))
            .map(|(_, v)| *v)
            .collect();
        let overall_deg = if active.is_empty() {
            0.0
        } else {
            active.iter().sum::<f64>() / active.len() as f64
        };
        Ok(RmseReport {
            overall_deg,
            per_joint_deg,
        })
    }
}

struct Adam {
    m: Vec<ConvGrad>,
    v: Vec<ConvGrad>,
    t: i32,
}

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(net: &Network) -> Self {
        Adam {
            m: net.zero_grads(),
            v: net.zero_grads(),
            t: 0,
        }
    }

    fn step(&mut self, net: &mut Network, grads: &[ConvGrad], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_B1.powi(self.t);
        let c2 = 1.0 - ADAM_B2.powi(self.t);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = ADAM_B1 * *m + (1.0 - ADAM_B1) * g;
            *v = ADAM_B2 * *v + (1.0 - ADAM_B2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        };
        for (((conv, g), m), v) in net
            .convs_mut()
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            ndarray::Zip::from(&mut conv.w)
                .and(&g.w)
                .and(&mut m.w)
                .and(&mut v.w)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut conv.b)
                .and(&g.b)
                .and(&mut m.b)
                .and(&mut v.b)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
    }
}

/// Training state: the model plus optimizer moments, code usage history and
/// the reset RNG.
pub struct Trainer {
    pub model: TokenizerModel,
    adam: Adam,
    usage: VecDeque<Vec<u32>>,
    usage_sum: Vec<u64>,
    rng: ChaCha8Rng,
    step: usize,
}

impl Trainer {
    pub fn new(model: TokenizerModel) -> Self {
        let k = model.codebook.size();
        let rng = SeedDeriver::new(model.config.seed).str("train").rng();
        Trainer {
            adam: Adam::new(&model.net),
            usage: VecDeque::new(),
            usage_sum: vec![0; k],
            rng,
            step: 0,
            model,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Replaces the codebook with latents sampled from one batch.
    pub fn init_codebook_from(&mut self, batch: &[Array2<f64>]) -> Result<()> {
        let (x, l) = self.model.stack(batch)?;
        let (z, _) = self.model.net.encode(&x, batch.len(), l);
        let k = self.model.codebook.size();
        let mut codes = Array2::zeros((k, z.ncols()));
        for mut row in codes.outer_iter_mut() {
            let pick = self.rng.random_range(0..z.nrows());
            row.assign(&z.row(pick));
            // tiny jitter keeps duplicate picks apart
            row.mapv_inplace(|v| v + self.rng.random_range(-1e-3..1e-3));
        }
        self.model.codebook = Codebook::new(codes)?;
        Ok(())
    }

    /// One optimization step on a batch of raw (radian) windows.
    pub fn train_step(&mut self, batch: &[Array2<f64>]) -> Result<LossBreakdown> {
        let (x, l) = self.model.stack(batch)?;
        let pass = self.model.pass(&x, batch.len(), l, Bottleneck::Nearest)?;
        if !pass.loss.total.is_finite() {
            return Err(Error::Divergence { step: self.step });
        }
        let cfg = &self.model.config;
        let (lr, decay) = (cfg.learning_rate, cfg.ema_decay);
        let (window, threshold) = (cfg.reset_window_steps, cfg.reset_threshold);
        self.adam.step(&mut self.model.net, &pass.grads, lr);
        self.model
            .codebook
            .ema_update(&pass.latents, &pass.indices, decay);

        let mut counts = vec![0u32; self.model.codebook.size()];
        for &i in &pass.indices {
            counts[i] += 1;
        }
        for (s, c) in self.usage_sum.iter_mut().zip(&counts) {
            *s += u64::from(*c);
        }
        self.usage.push_back(counts);
        if self.usage.len() > window {
            let old = self.usage.pop_front().expect("non-empty window");
            for (s, c) in self.usage_sum.iter_mut().zip(&old) {
                *s -= u64::from(*c);
            }
        }
        for k in 0..self.model.codebook.size() {
            if (self.usage_sum[k] as f64) < threshold {
                let pick = self.rng.random_range(0..pass.latents.nrows());
                self.model.codebook.reset_code(k, pass.latents.row(pick));
            }
        }
        self.step += 1;
        Ok(pass.loss)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub steps: Vec<LossBreakdown>,
}

/// Samples training windows uniformly over all window start positions of
/// all trials; trials shorter than a window are edge-padded.
pub struct WindowSampler<'a> {
    trials: &'a [Array2<f64>],
    cumulative: Vec<usize>,
    window: usize,
}

impl<'a> WindowSampler<'a> {
    pub fn new(trials: &'a [Array2<f64>], window: usize) -> Result<Self> {
        let mut cumulative = Vec::with_capacity(trials.len());
        let mut acc = 0;
        for t in trials {
            check_width(t)?;
            if t.nrows() == 0 {
                return Err(Error::EmptyInput("trial with no frames".into()));
            }
            acc += t.nrows().saturating_sub(window) + 1;
            cumulative.push(acc);
        }
        if acc == 0 {
            return Err(Error::EmptyInput("no training trials".into()));
        }
        Ok(WindowSampler {
            trials,
            cumulative,
            window,
        })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Array2<f64> {
        let total = *self.cumulative.last().expect("non-empty");
        let u = rng.random_range(0..total);
        let ti = self.cumulative.partition_point(|&c| c <= u);
        let before = if ti == 0 { 0 } else { self.cumulative[ti - 1] };
        let start = u - before;
        let trial = &self.trials[ti];
        let mut w = Array2::zeros((self.window, NUM_JOINTS));
        for r in 0..self.window {
            let src = (start + r).min(trial.nrows() - 1);
            w.row_mut(r).assign(&trial.row(src));
        }
        w
    }
}

/// Trains a tokenizer on masked L×34 radian matrices of training trials.
pub fn fit(
    trials: &[Array2<f64>],
    mask: &ChannelMask,
    config: &TokenizerConfig,
) -> Result<(TokenizerModel, TrainingCurve)> {
    fit_with_progress(trials, mask, config, |_, _| {})
}

pub fn fit_with_progress(
    trials: &[Array2<f64>],
    mask: &ChannelMask,
    config: &TokenizerConfig,
    mut progress: impl FnMut(usize, &LossBreakdown),
) -> Result<(TokenizerModel, TrainingCurve)> {
    config.validate()?;
    if trials.is_empty() {
        return Err(Error::EmptyInput("no training trials".into()));
    }
    let masked: Vec<Array2<f64>> = trials
        .iter()
        .map(|t| {
            let mut t = t.clone();
            for c in mask.channels() {
                t.column_mut(c).fill(0.0);
            }
            t
        })
        .collect();
    let norm = NormStats::from_trials(&masked)?;
    let model = TokenizerModel::new(config.clone(), norm, mask)?;
    let sampler = WindowSampler::new(&masked, config.window_frames)?;
    let mut rng = SeedDeriver::new(config.seed).str("windows").rng();
    let mut trainer = Trainer::new(model);
    let mut curve = TrainingCurve::default();
    for step in 0..config.train_steps {
        let batch: Vec<Array2<f64>> = (0..config.batch_size)
            .map(|_| sampler.sample(&mut rng))
            .collect();
        if step == 0 {
            trainer.init_codebook_from(&batch)?;
        }
        let loss = trainer.train_step(&batch)?;
        progress(step, &loss);
        curve.steps.push(loss);
    }
    Ok((trainer.model, curve))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub trial_id: String,
    pub tokens: Vec<u32>,
    pub source_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookStats {
    pub usage_counts: Vec<u64>,
    pub entropy_bits: f64,
    pub perplexity: f64,
}

pub fn codebook_stats(corpus: &[TokenSequence], codebook_size: usize) -> Result<CodebookStats> {
    let mut usage_counts = vec![0u64; codebook_size];
    let mut total = 0u64;
    for seq in corpus {
        for &t in &seq.tokens {
            let slot = usage_counts.get_mut(t as usize).ok_or_else(|| {
                Error::Contract(format!(
                    "token {t} outside codebook of size {codebook_size}"
                ))
            })?;
            *slot += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptyInput("token corpus is empty".into()));
    }
    let entropy_bits: f64 = usage_counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.log2()
        })
        .sum();
    Ok(CodebookStats {
        usage_counts,
        entropy_bits,
        perplexity: entropy_bits.exp2(),
    })
}

#[derive(Serialize, Deserialize)]
struct ConvFile {
    k: usize,
    stride: usize,
    pad: usize,
    cin: usize,
    cout: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CodebookFile {
    codes: Vec<f64>,
    ema_cluster_count: Vec<f64>,
    ema_cluster_sum: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    config: TokenizerConfig,
    norm: NormStats,
    masked_channels: Vec<usize>,
    convs: Vec<ConvFile>,
    codebook: CodebookFile,
}

fn flat(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

impl TokenizerModel {
    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            config: self.config.clone(),
            norm: self.norm.clone(),
            masked_channels: self.masked_channels.clone(),
            convs: self
                .net
                .convs()
                .into_iter()
                .map(|c| ConvFile {
                    k: c.k,
                    stride: c.stride,
                    pad: c.pad,
                    cin: c.cin,
                    cout: c.cout,
                    w: flat(&c.w),
                    b: c.b.to_vec(),
                })
                .collect(),
            codebook: CodebookFile {
                codes: flat(&self.codebook.codes),
                ema_cluster_count: self.codebook.ema_cluster_count.to_vec(),
                ema_cluster_sum: flat(&self.codebook.ema_cluster_sum),
            },
        };
        serde_json::to_string(&file).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::json(origin, e))?;
        let bad = |m: String| Error::Contract(format!("{}: {m}", origin.display()));
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(bad(format!(
                "unsupported model format version {}",
                file.format_version
            )));
        }
        let mask = ChannelMask::new(file.masked_channels.iter().copied())?;
        let mut model = TokenizerModel::new(file.config, file.norm, &mask)?;
        let convs = model.net.convs_mut();
        if convs.len() != file.convs.len() {
            return Err(bad("layer count does not match configuration".into()));
        }
        for (c, f) in convs.into_iter().zip(file.convs) {
            if (c.k, c.stride, c.pad, c.cin, c.cout) != (f.k, f.stride, f.pad, f.cin, f.cout) {
                return Err(bad("layer shape does not match configuration".into()));
            }
            c.w = Array2::from_shape_vec(c.w.dim(), f.w).map_err(|e| bad(e.to_string()))?;
            c.b = Array1::from_vec(f.b);
            if c.b.len() != c.cout {
                return Err(bad("bias length mismatch".into()));
            }
        }
        let (k, d) = (model.config.codebook_size_k, model.config.code_dim_d);
        let codes =
            Array2::from_shape_vec((k, d), file.codebook.codes).map_err(|e| bad(e.to_string()))?;
        let mut codebook = Codebook::new(codes)?;
        codebook.ema_cluster_sum = Array2::from_shape_vec((k, d), file.codebook.ema_cluster_sum)
            .map_err(|e| bad(e.to_string()))?;
        if file.codebook.ema_cluster_count.len() != k
            || file.codebook.ema_cluster_count.iter().any(|n| !(*n >= 0.0))
        {
            return Err(bad("invalid EMA cluster counts".into()));
        }
        codebook.ema_cluster_count = Array1::from_vec(file.codebook.ema_cluster_count);
        model.codebook = codebook;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }
}

pub fn write_token_corpus(path: &Path, corpus: &[TokenSequence]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for seq in corpus {
        let line = serde_json::to_string(seq).map_err(|e| Error::json(path, e))?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn read_token_corpus(path: &Path) -> Result<Vec<TokenSequence>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::json(path, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn tiny_config() -> TokenizerConfig {
        TokenizerConfig {
            codebook_size_k: 4,
            code_dim_d: 4,
            hidden_channels: 4,
            window_frames: 8,
            batch_size: 2,
            train_steps: 10,
            seed: 3,
            ..TokenizerConfig::desk()
        }
    }

    fn tiny_model() -> TokenizerModel {
        TokenizerModel::new(tiny_config(), NormStats::identity(), &ChannelMask::empty()).unwrap()
    }

    fn smooth_window(len: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng_from_seed(seed);
        let phases: Vec<f64> = (0..NUM_JOINTS)
            .map(|_| rng.random_range(0.0..6.3))
            .collect();
        Array2::from_shape_fn((len, NUM_JOINTS), |(t, j)| {
            0.4 * (t as f64 * 0.2 + phases[j]).sin()
        })
    }

    #[test]
    fn profiles_and_validation() {
        let d = TokenizerConfig::desk();
        assert_eq!(
            (d.codebook_size_k, d.code_dim_d, d.window_frames),
            (128, 64, 64)
        );
        let p = TokenizerConfig::paper();
        assert_eq!(
            (p.downsample_l, p.codebook_size_k, p.code_dim_d),
            (4, 512, 512)
        );
        assert_eq!(p.beta_commit, 0.02);
        assert!(TokenizerConfig::profile("laptop").is_err());
        let bad = TokenizerConfig {
            window_frames: 62,
            ..d.clone()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = TokenizerConfig {
            ema_decay: 1.0,
            ..d
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn encode_shape_and_divisibility() {
        let m = TokenizerModel::new(
            TokenizerConfig::paper(),
            NormStats::identity(),
            &ChannelMask::empty(),
        )
        .unwrap();
        let z = m.encode(&smooth_window(64, 1)).unwrap();
        assert_eq!(z.dim(), (16, 512));
        assert!(matches!(
            m.encode(&smooth_window(63, 1)),
            Err(Error::Contract(_))
        ));
        let q = quantize(&m.codebook, &z).unwrap();
        assert_eq!(m.decode(&q.quantized).unwrap().dim(), (64, 34));
    }

    #[test]
    fn zero_encoder_gives_zero_latents() {
        let mut m = tiny_model();
        let levels = m.net.levels();
        for (i, c) in m.net.convs_mut().into_iter().enumerate() {
            if i <= 2 * levels {
                c.w.fill(0.0);
                c.b.fill(0.0);
            }
        }
        let z = m.encode(&smooth_window(16, 2)).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_decoder_outputs_bias() {
        let mut m = tiny_model();
        m.norm = NormStats {
            mean: vec![0.5; NUM_JOINTS],
            std: vec![2.0; NUM_JOINTS],
        };
        let levels = m.net.levels();
        for (i, c) in m.net.convs_mut().into_iter().enumerate() {
            if i > 2 * levels {
                c.w.fill(0.0);
            }
        }
        m.net.dec_out.b = Array1::from_shape_fn(NUM_JOINTS, |j| j as f64 * 0.01);
        let out = m.decode(&Array2::from_elem((3, 4), 0.7)).unwrap();
        assert_eq!(out.nrows(), 12);
        for row in out.outer_iter() {
            for (j, v) in row.iter().enumerate() {
                assert!((v - (j as f64 * 0.01 * 2.0 + 0.5)).abs() < 1e-12);
            }
        }
        assert!(m.decode(&Array2::zeros((3, 5))).is_err());
    }

    fn two_code_book(d: usize) -> Codebook {
        let mut codes = Array2::zeros((2, d));
        codes.row_mut(1).fill(1.0);
        Codebook::new(codes).unwrap()
    }

    #[test]
    fn quantize_nearest_and_ties() {
        let cb = two_code_book(3);
        let q = quantize(&cb, &Array2::from_elem((1, 3), 0.9)).unwrap();
        assert_eq!(q.indices, vec![1]);
        let q = quantize(&cb, &Array2::from_elem((1, 3), 0.5)).unwrap();
        assert_eq!(q.indices, vec![0]);
        let q = quantize(&two_code_book(2), &array![[0.9, 0.9]]).unwrap();
        assert!((q.commit_loss - 0.01).abs() < 1e-12);
        assert!(matches!(
            quantize(&cb, &Array2::zeros((0, 3))),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn total_loss_arithmetic() {
        let l = LossBreakdown::new(1.0, 0.5, 0.02);
        assert!((l.total - 1.01).abs() < 1e-15);
    }

    #[test]
    fn single_ema_step() {
        let mut cb = Codebook::new(Array2::zeros((1, 2))).unwrap();
        cb.ema_cluster_count[0] = 1.0;
        cb.ema_update(&array![[1.0, 1.0]], &[0], 0.99);
        assert!((cb.ema_cluster_count[0] - 1.0).abs() < 1e-15);
        for v in cb.codes.row(0) {
            assert!((v - 0.01).abs() < 1e-15);
        }
    }

    #[test]
    fn ema_converges_to_assigned_mean_in_closed_form() {
        // three steps, same latents every step, all assigned to code 0
        let z = array![[1.0, 3.0], [3.0, 5.0]];
        let g: f64 = 0.9;
        let mut cb = Codebook::new(Array2::zeros((2, 2))).unwrap();
        cb.ema_cluster_count[0] = 1.0;
        cb.ema_cluster_sum.row_mut(0).fill(0.0);
        for _ in 0..3 {
            cb.ema_update(&z, &[0, 0], g);
        }
        // N_3 = g^3 + 2(1-g^3), m_3 = (1-g^3) * (4, 8)
        let g3 = g.powi(3);
        let n3 = g3 + 2.0 * (1.0 - g3);
        let expect = [(1.0 - g3) * 4.0 / n3, (1.0 - g3) * 8.0 / n3];
        for (v, e) in cb.codes.row(0).iter().zip(expect) {
            assert!((v - e).abs() < 1e-12);
        }
        // with the prior weight gone the code sits at the mean
        for _ in 0..500 {
            cb.ema_update(&z, &[0, 0], g);
        }
        assert!((cb.codes[[0, 0]] - 2.0).abs() < 1e-9);
        assert!((cb.codes[[0, 1]] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut model = tiny_model();
        let batch = vec![smooth_window(8, 11), smooth_window(8, 12)];
        let worst = model.gradient_check(&batch, 1e-5).unwrap();
        assert!(worst <= 1e-4, "worst relative gradient error {worst}");
    }

    #[test]
    fn overfits_fixed_batch() {
        let cfg = TokenizerConfig {
            window_frames: 32,
            hidden_channels: 16,
            code_dim_d: 8,
            codebook_size_k: 16,
            learning_rate: 2e-3,
            ..tiny_config()
        };
        let batch: Vec<Array2<f64>> = (0..8).map(|i| smooth_window(32, 100 + i)).collect();
        let norm = NormStats::from_trials(&batch).unwrap();
        let model = TokenizerModel::new(cfg, norm, &ChannelMask::empty()).unwrap();
        let mut trainer = Trainer::new(model);
        trainer.init_codebook_from(&batch).unwrap();
        let first = trainer.train_step(&batch).unwrap();
        let mut last = first;
        for _ in 1..200 {
            last = trainer.train_step(&batch).unwrap();
        }
        assert!(
            last.recon < first.recon,
            "{} !< {}",
            last.recon,
            first.recon
        );
    }

    #[test]
    fn divergence_reports_step() {
        let mut trainer = Trainer::new(tiny_model());
        let mut bad = smooth_window(8, 1);
        bad[[0, 0]] = f64::NAN;
        assert!(matches!(
            trainer.train_step(&[bad]),
            Err(Error::Divergence { step: 0 })
        ));
        assert!(matches!(trainer.train_step(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn dead_codes_move_to_batch_latents() {
        let mut trainer = Trainer::new(tiny_model());
        let far = Array2::from_elem((4, 4), 1e6);
        trainer.model.codebook = Codebook::new(far).unwrap();
        let batch = vec![smooth_window(8, 5)];
        trainer.train_step(&batch).unwrap();
        // every code except the single one used is reset into latent range
        let used = trainer.usage_sum.iter().filter(|&&c| c > 0).count();
        assert_eq!(used, 1);
        let resets = trainer
            .model
            .codebook
            .codes
            .outer_iter()
            .filter(|r| r.iter().all(|v| v.abs() < 1e3))
            .count();
        assert!(resets >= 3);
    }

    #[test]
    fn token_lengths_and_padding() {
        let m = tiny_model();
        let s = m.tokenize_matrix("a", &smooth_window(300, 1)).unwrap();
        assert_eq!(s.tokens.len(), 75);
        let s = m.tokenize_matrix("a", &smooth_window(301, 1)).unwrap();
        assert_eq!(s.tokens.len(), 76);
        assert_eq!(s.source_frames, 301);
        assert_eq!(s, m.tokenize_matrix("a", &smooth_window(301, 1)).unwrap());
        assert!(m.tokenize_matrix("a", &Array2::zeros((0, 34))).is_err());
    }

    #[test]
    fn codebook_stats_examples() {
        let seq = |tokens: Vec<u32>| TokenSequence {
            trial_id: "t".into(),
            source_frames: tokens.len() * 4,
            tokens,
        };
        let s = codebook_stats(&[seq((0..512).collect())], 512).unwrap();
        assert!((s.entropy_bits - 9.0).abs() < 1e-12);
        assert!((s.perplexity - 512.0).abs() < 1e-9);
        let s = codebook_stats(&[seq(vec![7, 7, 7])], 512).unwrap();
        assert_eq!(s.entropy_bits, 0.0);
        assert_eq!(s.perplexity, 1.0);
        let s = codebook_stats(&[seq(vec![0, 0, 1])], 4).unwrap();
        // -(2/3)log2(2/3) - (1/3)log2(1/3)
        assert!((s.entropy_bits - 0.918_295_834_054_489_6).abs() < 1e-12);
        assert!(codebook_stats(&[], 4).is_err());
        assert!(codebook_stats(&[seq(vec![9])], 4).is_err());
    }

    #[test]
    fn model_json_round_trip() {
        let m = tiny_model();
        let text = m.to_json();
        let back = TokenizerModel::from_json(&text, Path::new("m.json")).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json(), text);
        let bumped = text.replacen("\"format_version\":1", "\"format_version\":9", 1);
        assert!(TokenizerModel::from_json(&bumped, Path::new("m.json")).is_err());
    }

    #[test]
    fn fit_is_deterministic_and_rejects_empty_corpus() {
        let trials: Vec<Array2<f64>> = (0..3).map(|i| smooth_window(40, i)).collect();
        let cfg = tiny_config();
        let mask = ChannelMask::default_zeroed();
        let (a, curve) = fit(&trials, &mask, &cfg).unwrap();
        let (b, _) = fit(&trials, &mask, &cfg).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(curve.steps.len(), cfg.train_steps);
        assert!(matches!(fit(&[], &mask, &cfg), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn constant_channels_get_unit_std() {
        let mut t = smooth_window(20, 1);
        t.column_mut(5).fill(0.0);
        let n = NormStats::from_trials(&[t]).unwrap();
        assert_eq!(n.std[5], 1.0);
        assert_eq!(n.mean[5], 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn quantize_is_idempotent(
            codes in proptest::collection::vec(-3.0f64..3.0, 12),
            lat in proptest::collection::vec(-3.0f64..3.0, 15),
        ) {
            let cb = Codebook::new(Array2::from_shape_vec((4, 3), codes).unwrap()).unwrap();
            let z = Array2::from_shape_vec((5, 3), lat).unwrap();
            let q = quantize(&cb, &z).unwrap();
            let again = quantize(&cb, &q.quantized).unwrap();
            prop_assert_eq!(&again.quantized, &q.quantized);
            prop_assert_eq!(again.commit_loss, 0.0);
            // same code vector means same index unless two codes coincide
            for (a, b) in again.indices.iter().zip(&q.indices) {
                prop_assert_eq!(cb.codes.row(*a), cb.codes.row(*b));
            }
        }

        #[test]
        fn token_length_law(frames in 1usize..130) {
            let m = tiny_model();
            let s = m.tokenize_matrix("t", &smooth_window(frames, 3)).unwrap();
            prop_assert_eq!(s.tokens.len(), frames.div_ceil(4));
            prop_assert!(s.tokens.iter().all(|&t| (t as usize) < 4));
        }
    }
}
