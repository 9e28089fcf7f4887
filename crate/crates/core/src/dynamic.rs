//! Dynamic convolutions: a lightweight convolution whose kernel at position
//! `i` is predicted from the input vector at `i` alone by a bias-free linear
//! map `W^Q ∈ ℝ^{H×k×d}`.

use crate::conv::{
    self, check_kernel_width, normalize_kernel, normalize_kernel_values, ConvConfig,
    Padding,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::rng::Rng;
use crate::tensor::{self, numel, Tensor};

/// Kernel predictor weights `W^Q` of shape `H×k×d`.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicKernelPredictor {
    weights: Tensor,
}

impl DynamicKernelPredictor {
    pub fn new(weights: Tensor) -> Result<Self> {
        if weights.rank() != 3 {
            return Err(Error::contract(format!(
                "predictor weights must be H×k×d, got {:?}",
                weights.shape()
            )));
        }
        if let Some(i) = weights.data().iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFinite {
                what: "predictor weights".into(),
                index: i,
            });
        }
        Ok(DynamicKernelPredictor { weights })
    }

    pub fn random(heads: usize, k: usize, d: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / (d + heads * k) as f64).sqrt();
        DynamicKernelPredictor {
            weights: Tensor::from_fn(&[heads, k, d], |_| rng.uniform_range(-bound, bound)),
        }
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }
}

fn predictor_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() != 3 {
        return Err(Error::contract(format!(
            "predictor weights must be H×k×d, got {shape:?}"
        )));
    }
    Ok((shape[0], shape[1], shape[2]))
}

/// Raw kernels `[.., n, H, k]` for every position of `x: [.., n, d]`.
pub fn predict_kernels(g: &mut Graph, x: Var, wq: Var) -> Result<Var> {
    let (heads, k, d) = predictor_dims(g.shape(wq))?;
    let xs = g.shape(x).to_vec();
    if xs.len() < 2 || xs[xs.len() - 1] != d {
        return Err(Error::shape("predict_kernels", &xs, g.shape(wq)));
    }
    let flat = g.reshape(wq, &[heads * k, d])?;
    let proj = g.transpose_last(flat)?;
    let raw = g.matmul(x, proj)?;
    let mut shape = xs[..xs.len() - 1].to_vec();
    shape.extend([heads, k]);
    g.reshape(raw, &shape)
}

/// Tape-free kernel prediction.
pub fn predict_kernels_values(x: &Tensor, wq: &Tensor) -> Result<Tensor> {
    let (heads, k, d) = predictor_dims(wq.shape())?;
    let xs = x.shape();
    if xs.len() < 2 || xs[xs.len() - 1] != d {
        return Err(Error::shape("predict_kernels", xs, wq.shape()));
    }
    let proj = tensor::permute(&wq.reshape(&[heads * k, d])?, &[1, 0])?;
    let raw = tensor::matmul(x, &proj)?;
    let mut shape = xs[..xs.len() - 1].to_vec();
    shape.extend([heads, k]);
    raw.reshape(&shape)
}

fn dynamic_dims(xs: &[usize], ks: &[usize]) -> Result<(usize, usize, usize, usize, usize)> {
    if xs.len() < 2 || ks.len() != xs.len() + 1 || xs[..xs.len() - 1] != ks[..ks.len() - 2] {
        return Err(Error::shape("dynamic_depthwise_conv", xs, ks));
    }
    let (n, d) = (xs[xs.len() - 2], xs[xs.len() - 1]);
    let (heads, k) = (ks[ks.len() - 2], ks[ks.len() - 1]);
    if d % heads != 0 {
        return Err(Error::config(format!(
            "heads ({heads}) must divide the channel count ({d})"
        )));
    }
    Ok((numel(xs) / (n * d), n, d, heads, k))
}

/// Depthwise convolution with a separate (already normalized) kernel per
/// position: `x: [.., n, d]`, `kernels: [.., n, H, k]`.
pub fn dynamic_depthwise_conv_values(x: &Tensor, kernels: &Tensor, padding: Padding) -> Result<Tensor> {
    let (batch, n, d, heads, k) = dynamic_dims(x.shape(), kernels.shape())?;
    check_kernel_width(k, padding)?;
    let start = padding.start(k);
    let group = d / heads;
    let (xv, kv) = (x.data(), kernels.data());
    let mut out = vec![0.0; xv.len()];
    for b in 0..batch {
        let base = b * n * d;
        for i in 0..n {
            let krow = &kv[((b * n + i) * heads) * k..((b * n + i + 1) * heads) * k];
            let orow = base + i * d;
            for j in 0..k {
                let s = i as isize + j as isize + start;
                if s < 0 || s >= n as isize {
                    continue;
                }
                let xrow = &xv[base + s as usize * d..base + (s as usize + 1) * d];
                for h in 0..heads {
                    let w = krow[h * k + j];
                    let cs = h * group..(h + 1) * group;
                    for (o, xc) in out[orow + cs.start..orow + cs.end].iter_mut().zip(&xrow[cs]) {
                        *o += w * xc;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Differentiable position-dependent depthwise convolution.
pub fn dynamic_depthwise_conv(g: &mut Graph, x: Var, kernels: Var, padding: Padding) -> Result<Var> {
    let value = dynamic_depthwise_conv_values(g.value(x), g.value(kernels), padding)?;
    let (batch, n, d, heads, k) = dynamic_dims(g.shape(x), g.shape(kernels))?;
    let start = padding.start(k);
    let group = d / heads;
    Ok(g.push(
        value,
        vec![x, kernels],
        Box::new(move |grad, _, parents| {
            let (xv, kv, gv) = (parents[0].data(), parents[1].data(), grad.data());
            let mut dx = vec![0.0; xv.len()];
            let mut dk = vec![0.0; kv.len()];
            for b in 0..batch {
                let base = b * n * d;
                for i in 0..n {
                    let kbase = ((b * n + i) * heads) * k;
                    let grow = &gv[base + i * d..base + (i + 1) * d];
                    for j in 0..k {
                        let s = i as isize + j as isize + start;
                        if s < 0 || s >= n as isize {
                            continue;
                        }
                        let s = s as usize;
                        for h in 0..heads {
                            let w = kv[kbase + h * k + j];
                            let mut acc = 0.0;
                            for c in h * group..(h + 1) * group {
                                dx[base + s * d + c] += grow[c] * w;
                                acc += grow[c] * xv[base + s * d + c];
                            }
                            dk[kbase + h * k + j] += acc;
                        }
                    }
                }
            }
            vec![
                Some(Tensor::from_parts(parents[0].shape().to_vec(), dx)),
                Some(Tensor::from_parts(parents[1].shape().to_vec(), dk)),
            ]
        }),
    ))
}

/// Dynamic convolution of `x: [.., n, d]` with predictor weights `wq: [H, k, d]`:
/// predict per-position kernels, normalize over `k`, optionally DropConnect,
/// then convolve each position with its own kernel.
pub fn dynamic_conv(
    g: &mut Graph,
    x: Var,
    wq: Var,
    cfg: &ConvConfig,
    rng: &mut Rng,
    training: bool,
) -> Result<Var> {
    cfg.validate()?;
    if g.shape(wq) != [cfg.heads, cfg.kernel_width, cfg.channels] {
        return Err(Error::shape(
            "dynamic_conv",
            g.shape(wq),
            &[cfg.heads, cfg.kernel_width, cfg.channels],
        ));
    }
    let raw = predict_kernels(g, x, wq)?;
    let kernels = normalize_kernel(g, raw, cfg.normalizer)?;
    let kernels = conv::dropconnect(g, kernels, cfg.dropconnect_p, rng, training)?;
    dynamic_depthwise_conv(g, x, kernels, cfg.padding)
}

/// Inference-mode dynamic convolution without a tape.
pub fn dynamic_conv_values(x: &Tensor, pred: &DynamicKernelPredictor, cfg: &ConvConfig) -> Result<Tensor> {
    cfg.validate()?;
    let raw = predict_kernels_values(x, pred.weights())?;
    let kernels = normalize_kernel_values(&raw, cfg.normalizer);
    dynamic_depthwise_conv_values(x, &kernels, cfg.padding)
}

/// Dynamic convolution through `B·H` band matrices of size `n×n` in which row
/// `i` carries position `i`'s normalized kernel, followed by one batched
/// matrix product against the inputs regrouped to `B·H × n × d/H`.
pub fn dynamic_conv_band_matrix(
    x: &Tensor,
    pred: &DynamicKernelPredictor,
    cfg: &ConvConfig,
) -> Result<Tensor> {
    cfg.validate()?;
    if x.rank() != 3 || x.shape()[2] != cfg.channels {
        return Err(Error::shape("dynamic_conv_band_matrix", x.shape(), &[cfg.channels]));
    }
    let (b, n, heads, k) = (x.shape()[0], x.shape()[1], cfg.heads, cfg.kernel_width);
    let raw = predict_kernels_values(x, pred.weights())?;
    let kernels = normalize_kernel_values(&raw, cfg.normalizer);
    let start = cfg.padding.start(k);
    let mut bands = vec![0.0; b * heads * n * n];
    for bi in 0..b {
        for h in 0..heads {
            for i in 0..n {
                for j in 0..k {
                    let s = i as isize + j as isize + start;
                    if s < 0 || s >= n as isize {
                        continue;
                    }
                    let w = kernels.data()[((bi * n + i) * heads + h) * k + j];
                    bands[((bi * heads + h) * n + i) * n + s as usize] = w;
                }
            }
        }
    }
    let bands = Tensor::from_parts(vec![b * heads, n, n], bands);
    let y = tensor::matmul(&bands, &conv::split_heads(x, heads)?)?;
    conv::merge_heads(&y, b, heads)
}

/// Multiply-accumulates of one dynamic convolution layer: kernel prediction
/// `n·H·k·d` plus the convolution itself `n·k·d`.
pub fn count_ops_dynamic(n: u64, d: u64, heads: u64, k: u64) -> u64 {
    n * heads * k * d + n * k * d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::{NormalizerConfig, NormalizerKind};

    #[test]
    fn zero_input_gives_uniform_kernel() {
        let mut rng = Rng::new(3);
        let pred = DynamicKernelPredictor::random(2, 5, 4, &mut rng);
        let x = Tensor::zeros(&[3, 4]);
        let raw = predict_kernels_values(&x, pred.weights()).unwrap();
        assert!(raw.data().iter().all(|&v| v == 0.0));
        let k = normalize_kernel_values(&raw, NormalizerConfig::default());
        assert!(k.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn single_channel_contraction() {
        // d=1, W^Q[h, j, 0] = j (1-based), x = 2 → raw row [2, 4, .., 2k]
        let k = 4;
        let wq = Tensor::from_fn(&[1, k, 1], |j| (j + 1) as f64);
        let x = Tensor::new(&[1, 1], vec![2.0]).unwrap();
        let raw = predict_kernels_values(&x, &wq).unwrap();
        assert_eq!(raw.shape(), &[1, 1, k]);
        assert_eq!(raw.data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn identical_positions_identical_kernels() {
        let mut rng = Rng::new(5);
        let pred = DynamicKernelPredictor::random(2, 3, 4, &mut rng);
        let row = [0.3, -0.7, 1.2, 0.05];
        let x = Tensor::new(&[2, 4], [row, row].concat()).unwrap();
        let raw = predict_kernels_values(&x, pred.weights()).unwrap();
        assert_eq!(raw.data()[..6], raw.data()[6..]);
    }

    #[test]
    fn zero_predictor_on_constant_input_averages() {
        let cfg = ConvConfig::new(4, 2, 3, Padding::Centered).unwrap();
        let pred = DynamicKernelPredictor::new(Tensor::zeros(&[2, 3, 4])).unwrap();
        let x = Tensor::full(&[1, 6, 4], -1.5);
        let y = dynamic_conv_values(&x, &pred, &cfg).unwrap();
        for i in 1..5 {
            for c in 0..4 {
                assert!((y.get(&[0, i, c]).unwrap() + 1.5).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn single_position_causal_uses_last_slot() {
        let cfg = ConvConfig::new(2, 1, 3, Padding::Causal).unwrap();
        let wq = Tensor::new(&[1, 3, 2], vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6]).unwrap();
        let pred = DynamicKernelPredictor::new(wq.clone()).unwrap();
        let x = Tensor::new(&[1, 1, 2], vec![1.5, -0.5]).unwrap();
        let y = dynamic_conv_values(&x, &pred, &cfg).unwrap();
        let raw: Vec<f64> = (0..3)
            .map(|j| wq.data()[j * 2] * 1.5 + wq.data()[j * 2 + 1] * -0.5)
            .collect();
        let e: Vec<f64> = raw.iter().map(|r| r.exp()).collect();
        let last = e[2] / e.iter().sum::<f64>();
        assert!((y.data()[0] - last * 1.5).abs() < 1e-14);
        assert!((y.data()[1] + last * 0.5).abs() < 1e-14);
    }

    #[test]
    fn unnormalized_variant_is_constructible() {
        let cfg = ConvConfig::new(4, 2, 3, Padding::Causal)
            .unwrap()
            .with_normalizer(NormalizerKind::None);
        let mut rng = Rng::new(9);
        let pred = DynamicKernelPredictor::random(2, 3, 4, &mut rng);
        let x = Tensor::from_fn(&[1, 5, 4], |i| (i as f64).sin());
        assert!(dynamic_conv_values(&x, &pred, &cfg).is_ok());
    }

    #[test]
    fn op_counts() {
        assert_eq!(count_ops_dynamic(1024, 1024, 16, 31), 520_093_696 + 32_505_856);
        assert_eq!(count_ops_dynamic(7, 5, 1, 1), 7 * 5 + 7 * 5);
        for n in [1u64, 3, 100, 4096] {
            assert_eq!(count_ops_dynamic(2 * n, 64, 4, 7), 2 * count_ops_dynamic(n, 64, 4, 7));
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[3, 4]));
        let wq = g.constant(Tensor::zeros(&[2, 3, 5]));
        assert!(predict_kernels(&mut g, x, wq).is_err());
    }
}
