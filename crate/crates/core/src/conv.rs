//! Depthwise convolutions over the time axis, kernel normalizers, weight
//! sharing across channel groups, DropConnect, and lightweight convolution.
//!
//! Sequences are laid out as `[.., n, d]` (time, channels). A kernel of width
//! `k` is applied independently to every channel:
//!
//! ```text
//! out[i, c] = Σ_j w[c, j] · x[i + j + start, c]      j = 0..k
//! ```
//!
//! with `start = -(k-1)/2` for centered windows and `start = -(k-1)` for
//! causal ones. Reads outside the sequence contribute zero.
//!
//! With weight sharing, `H` kernel rows serve `d` channels: channel `c`
//! (0-based) uses row `⌊c·H/d⌋`, i.e. channels form `H` contiguous groups of
//! `d/H`. This is the same partition as the 1-based `⌈c·H/d⌉`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::{sign, sigmoid, Graph, Var};
use crate::linalg;
use crate::rng::Rng;
use crate::tensor::{self, numel, Tensor};

/// Placement of the convolution window relative to the output position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Window centered on `i`; `k` must be odd.
    Centered,
    /// Window `i-k+1 ..= i`; output never sees the future.
    Causal,
}

impl Padding {
    /// Offset of window slot 0 relative to the output position.
    pub fn start(self, k: usize) -> isize {
        match self {
            Padding::Centered => -(((k - 1) / 2) as isize),
            Padding::Causal => -((k - 1) as isize),
        }
    }
}

impl FromStr for Padding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centered" => Ok(Padding::Centered),
            "causal" => Ok(Padding::Causal),
            other => Err(Error::config(format!("unknown padding mode {other:?}"))),
        }
    }
}

/// Kernel normalizers: softmax plus the alternatives compared against it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NormalizerKind {
    None,
    Softmax,
    Sigmoid,
    Tanh,
    L1,
    L2,
    Square,
    Abs,
    AbsL1,
    AbsL2,
}

impl NormalizerKind {
    pub const ALL: [NormalizerKind; 10] = [
        NormalizerKind::None,
        NormalizerKind::Softmax,
        NormalizerKind::Sigmoid,
        NormalizerKind::Tanh,
        NormalizerKind::L1,
        NormalizerKind::L2,
        NormalizerKind::Square,
        NormalizerKind::Abs,
        NormalizerKind::AbsL1,
        NormalizerKind::AbsL2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NormalizerKind::None => "none",
            NormalizerKind::Softmax => "softmax",
            NormalizerKind::Sigmoid => "sigmoid",
            NormalizerKind::Tanh => "tanh",
            NormalizerKind::L1 => "l1",
            NormalizerKind::L2 => "l2",
            NormalizerKind::Square => "square",
            NormalizerKind::Abs => "abs",
            NormalizerKind::AbsL1 => "abs_l1",
            NormalizerKind::AbsL2 => "abs_l2",
        }
    }
}

impl fmt::Display for NormalizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NormalizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NormalizerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown normalizer kind {s:?}")))
    }
}

/// Epsilon added to the norms of the `l1`/`l2` normalizers.
pub const NORMALIZER_EPSILON: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizerConfig {
    pub kind: NormalizerKind,
    pub epsilon: f64,
}

impl NormalizerConfig {
    pub fn new(kind: NormalizerKind) -> Self {
        NormalizerConfig {
            kind,
            epsilon: NORMALIZER_EPSILON,
        }
    }
}

impl Default for NormalizerConfig {
    fn default() -> Self {
        NormalizerConfig::new(NormalizerKind::Softmax)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvConfig {
    /// Model dimension `d` (number of channels).
    pub channels: usize,
    /// Number of weight-sharing groups `H`.
    pub heads: usize,
    pub kernel_width: usize,
    pub padding: Padding,
    pub normalizer: NormalizerConfig,
    pub dropconnect_p: f64,
}

impl ConvConfig {
    /// Softmax-normalized kernel without DropConnect.
    pub fn new(channels: usize, heads: usize, kernel_width: usize, padding: Padding) -> Result<Self> {
        let cfg = ConvConfig {
            channels,
            heads,
            kernel_width,
            padding,
            normalizer: NormalizerConfig::default(),
            dropconnect_p: 0.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_normalizer(mut self, kind: NormalizerKind) -> Self {
        self.normalizer = NormalizerConfig::new(kind);
        self
    }

    pub fn with_dropconnect(mut self, p: f64) -> Result<Self> {
        self.dropconnect_p = p;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.heads == 0 || self.channels % self.heads != 0 {
            return Err(Error::config(format!(
                "heads ({}) must divide the channel count ({})",
                self.heads, self.channels
            )));
        }
        check_kernel_width(self.kernel_width, self.padding)?;
        if !(0.0..1.0).contains(&self.dropconnect_p) {
            return Err(Error::config(format!(
                "dropconnect probability must lie in [0, 1), got {}",
                self.dropconnect_p
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_kernel_width(k: usize, padding: Padding) -> Result<()> {
    if k == 0 {
        return Err(Error::config("kernel width must be positive"));
    }
    if padding == Padding::Centered && k % 2 == 0 {
        return Err(Error::config(format!(
            "centered convolution needs an odd kernel width, got {k}"
        )));
    }
    Ok(())
}

/// Raw (unnormalized) shared kernel weights of shape `H×k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel {
    weights: Tensor,
}

impl ConvKernel {
    pub fn new(weights: Tensor) -> Result<Self> {
        if weights.rank() != 2 {
            return Err(Error::contract(format!(
                "kernel weights must be H×k, got shape {:?}",
                weights.shape()
            )));
        }
        if let Some(i) = weights.data().iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFinite {
                what: "kernel weights".into(),
                index: i,
            });
        }
        Ok(ConvKernel { weights })
    }

    pub fn random(heads: usize, k: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / (heads + k) as f64).sqrt();
        ConvKernel {
            weights: Tensor::from_fn(&[heads, k], |_| rng.uniform_range(-bound, bound)),
        }
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn heads(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.weights.shape()[1]
    }

    fn check(&self, cfg: &ConvConfig) -> Result<()> {
        cfg.validate()?;
        if self.weights.shape() != [cfg.heads, cfg.kernel_width] {
            return Err(Error::shape(
                "lightconv kernel",
                self.weights.shape(),
                &[cfg.heads, cfg.kernel_width],
            ));
        }
        Ok(())
    }
}

// -------------------------------------------------------------------------
// Normalizers

fn normalize_row(w: &[f64], out: &mut [f64], kind: NormalizerKind, eps: f64) {
    match kind {
        NormalizerKind::None => out.copy_from_slice(w),
        NormalizerKind::Softmax => {
            let max = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, x) in out.iter_mut().zip(w) {
                *o = (x - max).exp();
                sum += *o;
            }
            out.iter_mut().for_each(|o| *o /= sum);
        }
        NormalizerKind::Sigmoid => out.iter_mut().zip(w).for_each(|(o, x)| *o = sigmoid(*x)),
        NormalizerKind::Tanh => out.iter_mut().zip(w).for_each(|(o, x)| *o = x.tanh()),
        NormalizerKind::Square => out.iter_mut().zip(w).for_each(|(o, x)| *o = x * x),
        NormalizerKind::Abs => out.iter_mut().zip(w).for_each(|(o, x)| *o = x.abs()),
        NormalizerKind::L1 | NormalizerKind::AbsL1 => {
            let denom = w.iter().map(|x| x.abs()).sum::<f64>() + eps;
            let take_abs = kind == NormalizerKind::AbsL1;
            for (o, x) in out.iter_mut().zip(w) {
                *o = if take_abs { x.abs() } else { *x } / denom;
            }
        }
        NormalizerKind::L2 | NormalizerKind::AbsL2 => {
            let denom = w.iter().map(|x| x * x).sum::<f64>().sqrt() + eps;
            let take_abs = kind == NormalizerKind::AbsL2;
            for (o, x) in out.iter_mut().zip(w) {
                *o = if take_abs { x.abs() } else { *x } / denom;
            }
        }
    }
}

fn normalize_row_backward(
    w: &[f64],
    y: &[f64],
    g: &[f64],
    dw: &mut [f64],
    kind: NormalizerKind,
    eps: f64,
) {
    match kind {
        NormalizerKind::None => dw.copy_from_slice(g),
        NormalizerKind::Softmax => {
            let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
            for ((d, gi), yi) in dw.iter_mut().zip(g).zip(y) {
                *d = yi * (gi - dot);
            }
        }
        NormalizerKind::Sigmoid => {
            for ((d, gi), yi) in dw.iter_mut().zip(g).zip(y) {
                *d = gi * yi * (1.0 - yi);
            }
        }
        NormalizerKind::Tanh => {
            for ((d, gi), yi) in dw.iter_mut().zip(g).zip(y) {
                *d = gi * (1.0 - yi * yi);
            }
        }
        NormalizerKind::Square => {
            for ((d, gi), wi) in dw.iter_mut().zip(g).zip(w) {
                *d = 2.0 * gi * wi;
            }
        }
        NormalizerKind::Abs => {
            for ((d, gi), wi) in dw.iter_mut().zip(g).zip(w) {
                *d = gi * sign(*wi);
            }
        }
        NormalizerKind::L1 | NormalizerKind::AbsL1 => {
            // y = a / (S + ε), S = Σ|w|, a = w or |w|
            let denom = w.iter().map(|x| x.abs()).sum::<f64>() + eps;
            let ga: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / denom;
            for (j, d) in dw.iter_mut().enumerate() {
                let s = sign(w[j]);
                let direct = g[j] / denom;
                *d = if kind == NormalizerKind::AbsL1 {
                    s * direct - s * ga
                } else {
                    direct - s * ga
                };
            }
        }
        NormalizerKind::L2 | NormalizerKind::AbsL2 => {
            // y = a / (N + ε), N = ‖w‖₂, ∂N/∂w = w / N
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            let denom = norm + eps;
            let ga: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / denom;
            for (j, d) in dw.iter_mut().enumerate() {
                let dn = if norm > 0.0 { w[j] / norm } else { 0.0 };
                let direct = g[j] / denom;
                *d = if kind == NormalizerKind::AbsL2 {
                    sign(w[j]) * direct - dn * ga
                } else {
                    direct - dn * ga
                };
            }
        }
    }
}

/// Normalize every row of `w` over its last (kernel) axis.
pub fn normalize_kernel_values(w: &Tensor, cfg: NormalizerConfig) -> Tensor {
    let k = *w.shape().last().unwrap_or(&1);
    let mut out = vec![0.0; w.len()];
    for (src, dst) in w.data().chunks(k).zip(out.chunks_mut(k)) {
        normalize_row(src, dst, cfg.kind, cfg.epsilon);
    }
    Tensor::from_parts(w.shape().to_vec(), out)
}

/// Differentiable kernel normalization over the last axis.
pub fn normalize_kernel(g: &mut Graph, w: Var, cfg: NormalizerConfig) -> Result<Var> {
    if g.shape(w).is_empty() {
        return Err(Error::contract("normalize_kernel needs at least one axis"));
    }
    if let Some(i) = g.value(w).data().iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            what: "kernel weights".into(),
            index: i,
        });
    }
    if cfg.kind == NormalizerKind::None {
        return Ok(w);
    }
    let value = normalize_kernel_values(g.value(w), cfg);
    let k = *value.shape().last().unwrap();
    Ok(g.push(
        value,
        vec![w],
        Box::new(move |grad, y, parents| {
            let wv = parents[0].data();
            let mut dw = vec![0.0; wv.len()];
            for (((wr, yr), gr), dr) in wv
                .chunks(k)
                .zip(y.data().chunks(k))
                .zip(grad.data().chunks(k))
                .zip(dw.chunks_mut(k))
            {
                normalize_row_backward(wr, yr, gr, dr, cfg.kind, cfg.epsilon);
            }
            vec![Some(Tensor::from_parts(parents[0].shape().to_vec(), dw))]
        }),
    ))
}

// -------------------------------------------------------------------------
// Weight sharing

/// Sharing group (kernel row) used by 0-based channel `c`.
pub fn group_of(c: usize, channels: usize, heads: usize) -> usize {
    c * heads / channels
}

/// Expand `H×k` shared rows to one row per channel (`d×k`).
pub fn expand_shared_weights(g: &mut Graph, w: Var, channels: usize) -> Result<Var> {
    let shape = g.shape(w).to_vec();
    if shape.len() != 2 {
        return Err(Error::contract(format!("expected H×k weights, got {shape:?}")));
    }
    let (heads, k) = (shape[0], shape[1]);
    if heads == 0 || channels % heads != 0 {
        return Err(Error::config(format!(
            "heads ({heads}) must divide the channel count ({channels})"
        )));
    }
    let wv = g.value(w).data();
    let mut out = Vec::with_capacity(channels * k);
    for c in 0..channels {
        let h = group_of(c, channels, heads);
        out.extend_from_slice(&wv[h * k..(h + 1) * k]);
    }
    Ok(g.push(
        Tensor::from_parts(vec![channels, k], out),
        vec![w],
        Box::new(move |grad, _, _| {
            let mut dw = vec![0.0; heads * k];
            for c in 0..channels {
                let h = group_of(c, channels, heads);
                for j in 0..k {
                    dw[h * k + j] += grad.data()[c * k + j];
                }
            }
            vec![Some(Tensor::from_parts(vec![heads, k], dw))]
        }),
    ))
}

// -------------------------------------------------------------------------
// Depthwise convolution

fn seq_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::contract(format!("{op}: expected [.., n, d], got {shape:?}")));
    }
    let (n, d) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    Ok((numel(shape) / (n * d), n, d))
}

/// Input position read by window slot `j` for output `i`, if inside the sequence.
#[inline]
fn source(i: usize, j: usize, start: isize, n: usize) -> Option<usize> {
    let s = i as isize + j as isize + start;
    (s >= 0 && s < n as isize).then_some(s as usize)
}

/// Direct-loop depthwise convolution of `x: [.., n, d]` with `w: [d, k]`.
pub fn depthwise_conv_values(x: &Tensor, w: &Tensor, padding: Padding) -> Result<Tensor> {
    let (batch, n, d) = seq_dims("depthwise_conv", x.shape())?;
    if w.rank() != 2 || w.shape()[0] != d {
        return Err(Error::shape("depthwise_conv", x.shape(), w.shape()));
    }
    let k = w.shape()[1];
    check_kernel_width(k, padding)?;
    let start = padding.start(k);
    let wt = linalg::transpose(w.data(), d, k);
    let xv = x.data();
    let mut out = vec![0.0; xv.len()];
    for b in 0..batch {
        let base = b * n * d;
        for i in 0..n {
            let orow = base + i * d;
            for j in 0..k {
                let Some(s) = source(i, j, start, n) else { continue };
                let xrow = &xv[base + s * d..base + (s + 1) * d];
                let wrow = &wt[j * d..(j + 1) * d];
                for ((o, xc), wc) in out[orow..orow + d].iter_mut().zip(xrow).zip(wrow) {
                    *o += wc * xc;
                }
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Differentiable depthwise convolution of `x: [.., n, d]` with per-channel
/// kernels `w: [d, k]`.
pub fn depthwise_conv(g: &mut Graph, x: Var, w: Var, padding: Padding) -> Result<Var> {
    let value = depthwise_conv_values(g.value(x), g.value(w), padding)?;
    let (batch, n, d) = seq_dims("depthwise_conv", g.shape(x))?;
    let k = g.shape(w)[1];
    let start = padding.start(k);
    Ok(g.push(
        value,
        vec![x, w],
        Box::new(move |grad, _, parents| {
            let (xv, wv, gv) = (parents[0].data(), parents[1].data(), grad.data());
            let wt = linalg::transpose(wv, d, k);
            let mut dx = vec![0.0; xv.len()];
            let mut dwt = vec![0.0; k * d];
            for b in 0..batch {
                let base = b * n * d;
                for i in 0..n {
                    let grow = &gv[base + i * d..base + (i + 1) * d];
                    for j in 0..k {
                        let Some(s) = source(i, j, start, n) else { continue };
                        let xrow = &xv[base + s * d..base + (s + 1) * d];
                        let wrow = &wt[j * d..(j + 1) * d];
                        let dxrow = &mut dx[base + s * d..base + (s + 1) * d];
                        for c in 0..d {
                            dxrow[c] += grow[c] * wrow[c];
                        }
                        let dwrow = &mut dwt[j * d..(j + 1) * d];
                        for c in 0..d {
                            dwrow[c] += grow[c] * xrow[c];
                        }
                    }
                }
            }
            vec![
                Some(Tensor::from_parts(parents[0].shape().to_vec(), dx)),
                Some(Tensor::from_parts(vec![d, k], linalg::transpose(&dwt, k, d))),
            ]
        }),
    ))
}

// -------------------------------------------------------------------------
// DropConnect

/// Zero each entry of the normalized weights with probability `p` and scale
/// survivors by `1/(1-p)`. Identity outside training or when `p == 0`.
pub fn dropconnect(g: &mut Graph, wn: Var, p: f64, rng: &mut Rng, training: bool) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::config(format!(
            "dropconnect probability must lie in [0, 1), got {p}"
        )));
    }
    if !training || p == 0.0 {
        return Ok(wn);
    }
    let keep = 1.0 / (1.0 - p);
    let mask = Tensor::from_fn(g.shape(wn), |_| if rng.bernoulli(p) { 0.0 } else { keep });
    let mask = g.constant(mask);
    g.mul(wn, mask)
}

// -------------------------------------------------------------------------
// Lightweight convolution

/// `normalize → dropconnect → expand groups → depthwise conv` on `x: [.., n, d]`
/// with raw shared weights `w: [H, k]`.
pub fn lightconv(
    g: &mut Graph,
    x: Var,
    w: Var,
    cfg: &ConvConfig,
    rng: &mut Rng,
    training: bool,
) -> Result<Var> {
    cfg.validate()?;
    if g.shape(w) != [cfg.heads, cfg.kernel_width] {
        return Err(Error::shape("lightconv", g.shape(w), &[cfg.heads, cfg.kernel_width]));
    }
    let (_, _, d) = seq_dims("lightconv", g.shape(x))?;
    if d != cfg.channels {
        return Err(Error::shape("lightconv", g.shape(x), &[cfg.channels]));
    }
    let wn = normalize_kernel(g, w, cfg.normalizer)?;
    let wn = dropconnect(g, wn, cfg.dropconnect_p, rng, training)?;
    let wd = expand_shared_weights(g, wn, cfg.channels)?;
    depthwise_conv(g, x, wd, cfg.padding)
}

/// Inference-mode lightweight convolution without a tape.
pub fn lightconv_values(x: &Tensor, kernel: &ConvKernel, cfg: &ConvConfig) -> Result<Tensor> {
    kernel.check(cfg)?;
    let wn = normalize_kernel_values(kernel.weights(), cfg.normalizer);
    let k = cfg.kernel_width;
    let mut wd = Vec::with_capacity(cfg.channels * k);
    for c in 0..cfg.channels {
        let h = group_of(c, cfg.channels, cfg.heads);
        wd.extend_from_slice(&wn.data()[h * k..(h + 1) * k]);
    }
    depthwise_conv_values(x, &Tensor::from_parts(vec![cfg.channels, k], wd), cfg.padding)
}

/// `H` band matrices of size `n×n`: row `i` holds the normalized kernel of
/// its head on the columns its window reads.
pub fn band_matrices(normalized: &Tensor, n: usize, padding: Padding) -> Result<Tensor> {
    if normalized.rank() != 2 {
        return Err(Error::contract("band matrices need H×k weights"));
    }
    let (heads, k) = (normalized.shape()[0], normalized.shape()[1]);
    check_kernel_width(k, padding)?;
    let start = padding.start(k);
    let mut out = vec![0.0; heads * n * n];
    for h in 0..heads {
        for i in 0..n {
            for j in 0..k {
                if let Some(s) = source(i, j, start, n) {
                    out[(h * n + i) * n + s] = normalized.data()[h * k + j];
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![heads, n, n], out))
}

/// Group channels into heads: `[B, n, d] → [B·H, n, d/H]`.
pub(crate) fn split_heads(x: &Tensor, heads: usize) -> Result<Tensor> {
    let (b, n, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let grouped = x.reshape(&[b, n, heads, d / heads])?;
    tensor::permute(&grouped, &[0, 2, 1, 3])?.reshape(&[b * heads, n, d / heads])
}

/// Inverse of [`split_heads`].
pub(crate) fn merge_heads(y: &Tensor, batch: usize, heads: usize) -> Result<Tensor> {
    let (n, dh) = (y.shape()[1], y.shape()[2]);
    let y = y.reshape(&[batch, heads, n, dh])?;
    tensor::permute(&y, &[0, 2, 1, 3])?.reshape(&[batch, n, heads * dh])
}

/// Lightweight convolution as one batched matrix product: the normalized
/// kernel is copied into `B·H` band matrices of size `n×n` and multiplied with
/// the inputs regrouped to `B·H × n × d/H`. Inference only (no DropConnect).
pub fn lightconv_band_matrix(x: &Tensor, kernel: &ConvKernel, cfg: &ConvConfig) -> Result<Tensor> {
    kernel.check(cfg)?;
    if x.rank() != 3 || x.shape()[2] != cfg.channels {
        return Err(Error::shape("lightconv_band_matrix", x.shape(), &[cfg.channels]));
    }
    let (b, n) = (x.shape()[0], x.shape()[1]);
    let wn = normalize_kernel_values(kernel.weights(), cfg.normalizer);
    let bands = band_matrices(&wn, n, cfg.padding)?;
    let mut batched = Vec::with_capacity(b * bands.len());
    for _ in 0..b {
        batched.extend_from_slice(bands.data());
    }
    let bands = Tensor::from_parts(vec![b * cfg.heads, n, n], batched);
    let y = tensor::matmul(&bands, &split_heads(x, cfg.heads)?)?;
    merge_heads(&y, b, cfg.heads)
}

/// Kernel weight counts for one convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCounts {
    /// Regular convolution, `d²·k`.
    pub non_separable: u64,
    /// Depthwise convolution, `d·k`.
    pub depthwise: u64,
    /// Depthwise with `H` shared rows, `H·k`.
    pub shared: u64,
}

pub fn count_params(d: u64, k: u64, heads: u64) -> ParamCounts {
    ParamCounts {
        non_separable: d * d * k,
        depthwise: d * k,
        shared: heads * k,
    }
}
