//! Encoder-decoder sequence models whose blocks mix context with
//! self-attention, lightweight convolutions, dynamic convolutions or plain
//! CNN layers.

pub mod checkpoint;
pub mod config;
pub mod decode;
mod incremental;
pub mod loss;
pub mod params;
pub mod positions;
pub mod vocab;

pub use config::{default_kernel_schedule, Mechanism, ModelConfig};
pub use decode::{BeamConfig, Hypothesis, StepDecoder};
pub use incremental::IncrementalState;
pub use loss::{label_smoothed_nll, label_smoothed_nll_values, token_accuracy};
pub use params::ParamStore;
pub use positions::sinusoidal_positions;
pub use vocab::{TokenBatch, Vocab, BOS, EOS, PAD};

use crate::attention::{self, AttentionVars};
use crate::conv::{self, ConvConfig, Padding};
use crate::dynamic;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// RNG stream used for parameter initialization.
pub const INIT_STREAM: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Encoder,
    Decoder,
}

impl Side {
    fn prefix(self) -> &'static str {
        match self {
            Side::Encoder => "enc",
            Side::Decoder => "dec",
        }
    }

    pub fn padding(self) -> Padding {
        match self {
            Side::Encoder => Padding::Centered,
            Side::Decoder => Padding::Causal,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Norm {
    gain: usize,
    bias: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Attn {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Mixer {
    Attention(Attn),
    /// `kernel` is `H×k` shared weights, or the `H×k×d` predictor for
    /// dynamic convolutions.
    Conv { w_in: usize, kernel: usize, w_out: usize },
    /// `k×d×d` non-separable kernel.
    Dense { kernel: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Block {
    norm: Norm,
    mixer: Mixer,
    cross: Option<(Norm, Attn)>,
    ffn_norm: Norm,
    ffn: [usize; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Layout {
    src_embed: usize,
    tgt_embed: usize,
    encoder: Vec<Block>,
    decoder: Vec<Block>,
    enc_norm: Norm,
    dec_norm: Norm,
    out_proj: usize,
}

/// Optional context shared by the blocks of one forward pass.
#[derive(Clone, Copy, Debug, Default)]
pub struct BlockContext<'a> {
    /// Per batch element, `true` marks padded positions of the block input.
    pub padding: Option<&'a [Vec<bool>]>,
    /// Encoder output for decoder blocks.
    pub memory: Option<Var>,
    pub memory_padding: Option<&'a [Vec<bool>]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

fn uniform(shape: &[usize], bound: f64, rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.uniform_range(-bound, bound))
}

fn xavier(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    uniform(&[rows, cols], (6.0 / (rows + cols) as f64).sqrt(), rng)
}

struct Builder<'a> {
    cfg: &'a ModelConfig,
    store: ParamStore,
    rng: Rng,
}

impl Builder<'_> {
    fn add(&mut self, name: String, t: Tensor) -> usize {
        self.store.push(name, t)
    }

    fn norm(&mut self, prefix: &str) -> Norm {
        let d = self.cfg.d;
        Norm {
            gain: self.add(format!("{prefix}.gain"), Tensor::ones(&[d])),
            bias: self.add(format!("{prefix}.bias"), Tensor::zeros(&[d])),
        }
    }

    fn attn(&mut self, prefix: &str) -> Attn {
        let d = self.cfg.d;
        let mat = |s: &mut Self, n: &str| {
            let t = xavier(d, d, &mut s.rng);
            s.add(format!("{prefix}.{n}"), t)
        };
        Attn {
            wq: mat(self, "wq"),
            wk: mat(self, "wk"),
            wv: mat(self, "wv"),
            wo: mat(self, "wo"),
        }
    }

    fn embedding(&mut self, name: &str, vocab: usize) -> usize {
        let d = self.cfg.d;
        let mut t = uniform(&[vocab, d], (3.0 / d as f64).sqrt(), &mut self.rng);
        t.data_mut()[PAD * d..(PAD + 1) * d].fill(0.0);
        self.add(name.into(), t)
    }

    fn block(&mut self, side: Side, layer: usize) -> Block {
        let cfg = self.cfg;
        let (d, p) = (cfg.d, format!("{}.{layer}", side.prefix()));
        let k = match side {
            Side::Encoder => cfg.encoder_kernels[layer],
            Side::Decoder => cfg.decoder_kernels[layer],
        };
        let norm = self.norm(&format!("{p}.norm"));
        let mixer = match cfg.mechanism {
            Mechanism::SelfAttention => Mixer::Attention(self.attn(&format!("{p}.attn"))),
            Mechanism::CnnNonSeparable => {
                let t = uniform(&[k, d, d], (3.0 / (k * d) as f64).sqrt(), &mut self.rng);
                Mixer::Dense {
                    kernel: self.add(format!("{p}.conv.kernel"), t),
                }
            }
            mech => {
                let width = if cfg.use_glu { 2 * d } else { d };
                let w_in = xavier(d, width, &mut self.rng);
                let w_in = self.add(format!("{p}.conv.w_in"), w_in);
                let h = cfg.conv_heads();
                let kernel = if mech == Mechanism::DynamicConv {
                    let t = uniform(&[h, k, d], (6.0 / (d + h * k) as f64).sqrt(), &mut self.rng);
                    self.add(format!("{p}.conv.predictor"), t)
                } else {
                    let t = uniform(&[h, k], (3.0 / k as f64).sqrt(), &mut self.rng);
                    self.add(format!("{p}.conv.kernel"), t)
                };
                let w_out = xavier(d, d, &mut self.rng);
                let w_out = self.add(format!("{p}.conv.w_out"), w_out);
                Mixer::Conv { w_in, kernel, w_out }
            }
        };
        let cross = (side == Side::Decoder)
            .then(|| (self.norm(&format!("{p}.cross_norm")), self.attn(&format!("{p}.cross"))));
        let ffn_norm = self.norm(&format!("{p}.ffn_norm"));
        let w1 = xavier(d, cfg.d_ff, &mut self.rng);
        let w2 = xavier(cfg.d_ff, d, &mut self.rng);
        let ffn = [
            self.add(format!("{p}.ffn.w1"), w1),
            self.add(format!("{p}.ffn.b1"), Tensor::zeros(&[cfg.d_ff])),
            self.add(format!("{p}.ffn.w2"), w2),
            self.add(format!("{p}.ffn.b2"), Tensor::zeros(&[d])),
        ];
        Block {
            norm,
            mixer,
            cross,
            ffn_norm,
            ffn,
        }
    }
}

/// `a ⊙ σ(b)` where `a` and `b` are the two halves of the last axis.
pub fn glu(g: &mut Graph, x: Var) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let axis = shape.len().checked_sub(1).ok_or_else(|| Error::contract("glu on a scalar"))?;
    if shape[axis] % 2 != 0 {
        return Err(Error::contract(format!("glu needs an even last axis, got {shape:?}")));
    }
    let half = shape[axis] / 2;
    let a = g.slice_axis(x, axis, 0, half)?;
    let b = g.slice_axis(x, axis, half, half)?;
    let gate = g.sigmoid(b);
    g.mul(a, gate)
}

/// Non-separable convolution `y_i = Σ_j x_{i+start+j} · W_j` of
/// `x: [.., n, d]` with `kernel: [k, d, d]`.
pub fn dense_conv(g: &mut Graph, x: Var, kernel: Var, padding: Padding) -> Result<Var> {
    let ks = g.shape(kernel).to_vec();
    if ks.len() != 3 || ks[1] != ks[2] || g.shape(x).last() != Some(&ks[1]) {
        return Err(Error::shape("dense_conv", g.shape(x), &ks));
    }
    let (k, d) = (ks[0], ks[1]);
    let start = padding.start(k);
    let mut acc: Option<Var> = None;
    for j in 0..k {
        let shifted = g.shift_time(x, start + j as isize)?;
        let w = g.slice_axis(kernel, 0, j, 1)?;
        let w = g.reshape(w, &[d, d])?;
        let term = g.matmul(shifted, w)?;
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    acc.ok_or_else(|| Error::config("kernel width must be positive"))
}

/// Constant `[B, n, d]` with zeros on padded rows.
fn keep_mask(padding: &[Vec<bool>], d: usize) -> Tensor {
    let (b, n) = (padding.len(), padding.first().map_or(0, Vec::len));
    let mut data = Vec::with_capacity(b * n * d);
    for row in padding {
        for &pad in row {
            data.extend(std::iter::repeat(if pad { 0.0 } else { 1.0 }).take(d));
        }
    }
    Tensor::new(&[b, n, d], data).expect("mask size")
}

fn dropout(g: &mut Graph, x: Var, p: f64, rng: &mut Rng, training: bool) -> Result<Var> {
    if !training || p == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - p);
    let mask = Tensor::from_fn(g.shape(x), |_| if rng.bernoulli(p) { 0.0 } else { keep });
    let mask = g.constant(mask);
    g.mul(x, mask)
}

impl Model {
    /// Build a model with parameters drawn from `seed` (stream [`INIT_STREAM`]).
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            cfg: &config,
            store: ParamStore::new(),
            rng: Rng::with_stream(seed, INIT_STREAM),
        };
        let src_embed = b.embedding("src_embed", config.src_vocab);
        let tgt_embed = b.embedding("tgt_embed", config.tgt_vocab);
        let encoder = (0..config.encoder_layers).map(|l| b.block(Side::Encoder, l)).collect();
        let enc_norm = b.norm("enc.norm");
        let decoder = (0..config.decoder_layers).map(|l| b.block(Side::Decoder, l)).collect();
        let dec_norm = b.norm("dec.norm");
        let bound = 0.1 * (3.0 / config.d as f64).sqrt();
        let out = uniform(&[config.d, config.tgt_vocab], bound, &mut b.rng);
        let out_proj = b.add("out_proj".into(), out);
        let layout = Layout {
            src_embed,
            tgt_embed,
            encoder,
            decoder,
            enc_norm,
            dec_norm,
            out_proj,
        };
        let params = b.store;
        Ok(Model {
            config,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Register every parameter on `g`; the result is indexed like [`ParamStore`].
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params.bind(g, trainable)
    }

    fn blocks(&self, side: Side) -> &[Block] {
        match side {
            Side::Encoder => &self.layout.encoder,
            Side::Decoder => &self.layout.decoder,
        }
    }

    pub fn kernel_width(&self, side: Side, layer: usize) -> usize {
        match side {
            Side::Encoder => self.config.encoder_kernels[layer],
            Side::Decoder => self.config.decoder_kernels[layer],
        }
    }

    /// Parameters per block of `side`, plus embeddings and output layers.
    pub fn param_report(&self) -> Vec<(String, usize)> {
        let mut groups: Vec<(String, usize)> = Vec::new();
        for (name, t) in self.params.iter() {
            let mut parts = name.split('.');
            let head = parts.next().unwrap_or_default();
            let group = match (head, parts.next()) {
                ("enc" | "dec", Some(l)) if l.parse::<usize>().is_ok() => format!("{head}.{l}"),
                _ => head.to_string(),
            };
            match groups.iter_mut().find(|(g, _)| *g == group) {
                Some((_, n)) => *n += t.len(),
                None => groups.push((group, t.len())),
            }
        }
        groups
    }

    pub fn block_param_count(&self, side: Side, layer: usize) -> usize {
        let prefix = format!("{}.{layer}.", side.prefix());
        self.params.iter().filter(|(n, _)| n.starts_with(&prefix)).map(|(_, t)| t.len()).sum()
    }

    fn norm(&self, g: &mut Graph, v: &[Var], x: Var, n: Norm) -> Result<Var> {
        g.layer_norm(x, v[n.gain], v[n.bias])
    }

    pub(crate) fn attention_vars(&self, v: &[Var], a: Attn, window: Option<usize>) -> AttentionVars {
        AttentionVars {
            wq: v[a.wq],
            wk: v[a.wk],
            wv: v[a.wv],
            wo: v[a.wo],
            heads: self.config.heads,
            window,
        }
    }

    pub(crate) fn conv_config(&self, side: Side, layer: usize) -> Result<ConvConfig> {
        ConvConfig::new(
            self.config.d,
            self.config.conv_heads(),
            self.kernel_width(side, layer),
            side.padding(),
        )?
        .with_normalizer(self.config.conv_normalizer())
        .with_dropconnect(self.config.dropconnect_p)
    }

    fn window(&self, side: Side, layer: usize) -> Option<usize> {
        self.config.windowed_attention.then(|| self.kernel_width(side, layer))
    }

    /// Token embeddings scaled by `√d` plus sinusoidal positions starting at
    /// `offset`: `[B, n, d]`.
    pub(crate) fn embed(&self, g: &mut Graph, v: &[Var], side: Side, tokens: &TokenBatch, offset: usize) -> Result<Var> {
        let d = self.config.d;
        if offset + tokens.len > self.config.max_positions {
            return Err(Error::contract(format!(
                "sequence of length {} exceeds {} positions",
                offset + tokens.len,
                self.config.max_positions
            )));
        }
        let table = match side {
            Side::Encoder => v[self.layout.src_embed],
            Side::Decoder => v[self.layout.tgt_embed],
        };
        let e = g.embedding(table, &tokens.ids, &[tokens.batch, tokens.len], Some(PAD))?;
        let e = g.scale(e, (d as f64).sqrt());
        let pe = g.constant(positions::position_rows(offset, tokens.len, d));
        g.add(e, pe)
    }

    /// Convolution input after the projection and optional GLU: `[B, n, d]`.
    fn conv_input(&self, g: &mut Graph, h: Var, w_in: Var) -> Result<Var> {
        let u = g.matmul(h, w_in)?;
        if self.config.use_glu {
            glu(g, u)
        } else {
            Ok(u)
        }
    }

    fn conv_core(
        &self,
        g: &mut Graph,
        u: Var,
        kernel: Var,
        cfg: &ConvConfig,
        rng: &mut Rng,
        training: bool,
    ) -> Result<Var> {
        if self.config.mechanism == Mechanism::DynamicConv {
            dynamic::dynamic_conv(g, u, kernel, cfg, rng, training)
        } else {
            conv::lightconv(g, u, kernel, cfg, rng, training)
        }
    }

    /// Context-mixing sub-layer on normalized input `h: [B, n, d]`.
    fn mixer(
        &self,
        g: &mut Graph,
        v: &[Var],
        side: Side,
        layer: usize,
        h: Var,
        padding: Option<&[Vec<bool>]>,
        rng: &mut Rng,
        training: bool,
    ) -> Result<Var> {
        let d = self.config.d;
        let mask = |g: &mut Graph, x: Var| -> Result<Var> {
            match padding {
                Some(p) if p.iter().flatten().any(|&b| b) => {
                    let m = g.constant(keep_mask(p, d));
                    g.mul(x, m)
                }
                _ => Ok(x),
            }
        };
        match self.blocks(side)[layer].mixer {
            Mixer::Attention(a) => {
                let av = self.attention_vars(v, a, self.window(side, layer));
                attention::multi_head_self_attention(g, h, &av, side == Side::Decoder, padding)
            }
            Mixer::Conv { w_in, kernel, w_out } => {
                let cfg = self.conv_config(side, layer)?;
                let u = self.conv_input(g, h, v[w_in])?;
                let u = mask(g, u)?;
                let c = self.conv_core(g, u, v[kernel], &cfg, rng, training)?;
                g.matmul(c, v[w_out])
            }
            Mixer::Dense { kernel } => {
                let h = mask(g, h)?;
                dense_conv(g, h, v[kernel], side.padding())
            }
        }
    }

    fn feed_forward(&self, g: &mut Graph, v: &[Var], h: Var, ffn: [usize; 4]) -> Result<Var> {
        let a = g.matmul(h, v[ffn[0]])?;
        let a = g.add(a, v[ffn[1]])?;
        let a = g.relu(a);
        let o = g.matmul(a, v[ffn[2]])?;
        g.add(o, v[ffn[3]])
    }

    /// One pre-norm residual block:
    /// `x + Drop(Mixer(LN(x)))`, then for decoders `x + Drop(Cross(LN(x), memory))`,
    /// then `x + Drop(FFN(LN(x)))`.
    #[allow(clippy::too_many_arguments)]
    pub fn block_forward(
        &self,
        g: &mut Graph,
        v: &[Var],
        side: Side,
        layer: usize,
        x: Var,
        ctx: BlockContext<'_>,
        rng: &mut Rng,
        training: bool,
    ) -> Result<Var> {
        let block = self
            .blocks(side)
            .get(layer)
            .ok_or_else(|| Error::contract(format!("no {side:?} block {layer}")))?;
        let p = self.config.dropout_p;
        let h = self.norm(g, v, x, block.norm)?;
        let m = self.mixer(g, v, side, layer, h, ctx.padding, rng, training)?;
        let m = dropout(g, m, p, rng, training)?;
        let mut x = g.add(x, m)?;
        if let Some((norm, a)) = block.cross {
            let memory = ctx
                .memory
                .ok_or_else(|| Error::contract("decoder blocks need the encoder output"))?;
            let h = self.norm(g, v, x, norm)?;
            let av = self.attention_vars(v, a, None);
            let c = attention::source_target_attention(g, h, memory, &av, ctx.memory_padding)?;
            let c = dropout(g, c, p, rng, training)?;
            x = g.add(x, c)?;
        }
        let h = self.norm(g, v, x, block.ffn_norm)?;
        let f = self.feed_forward(g, v, h, block.ffn)?;
        let f = dropout(g, f, p, rng, training)?;
        g.add(x, f)
    }

    /// Encoder states `[B, n, d]` after the final layer norm.
    pub fn encode(&self, g: &mut Graph, v: &[Var], src: &TokenBatch, rng: &mut Rng, training: bool) -> Result<Var> {
        let padding = src.padding_mask();
        let mut x = self.embed(g, v, Side::Encoder, src, 0)?;
        for layer in 0..self.config.encoder_layers {
            let ctx = BlockContext {
                padding: Some(&padding),
                ..BlockContext::default()
            };
            x = self.block_forward(g, v, Side::Encoder, layer, x, ctx, rng, training)?;
        }
        self.norm(g, v, x, self.layout.enc_norm)
    }

    /// Decoder logits `[B, m, V]` for inputs `tgt_in` attending to `memory`.
    #[allow(clippy::too_many_arguments)]
    pub fn decode(
        &self,
        g: &mut Graph,
        v: &[Var],
        tgt_in: &TokenBatch,
        memory: Var,
        memory_padding: &[Vec<bool>],
        rng: &mut Rng,
        training: bool,
    ) -> Result<Var> {
        let mut x = self.embed(g, v, Side::Decoder, tgt_in, 0)?;
        for layer in 0..self.config.decoder_layers {
            let ctx = BlockContext {
                padding: None,
                memory: Some(memory),
                memory_padding: Some(memory_padding),
            };
            x = self.block_forward(g, v, Side::Decoder, layer, x, ctx, rng, training)?;
        }
        let x = self.norm(g, v, x, self.layout.dec_norm)?;
        g.matmul(x, v[self.layout.out_proj])
    }

    /// Label-smoothed loss of predicting `tgt eos` from `bos tgt` given `src`.
    #[allow(clippy::too_many_arguments)]
    pub fn loss(
        &self,
        g: &mut Graph,
        v: &[Var],
        src: &TokenBatch,
        tgt: &TokenBatch,
        smoothing: f64,
        rng: &mut Rng,
        training: bool,
    ) -> Result<(Var, Var)> {
        if src.batch != tgt.batch {
            return Err(Error::contract("source and target batches differ in size"));
        }
        let (tin, tout) = tgt.teacher_forcing()?;
        let memory = self.encode(g, v, src, rng, training)?;
        let logits = self.decode(g, v, &tin, memory, &src.padding_mask(), rng, training)?;
        let loss = label_smoothed_nll(g, logits, &tout.ids, smoothing, PAD)?;
        Ok((loss, logits))
    }

    /// Inference-mode logits `[B, m, V]` for decoder inputs `tgt_in`.
    pub fn logits(&self, src: &TokenBatch, tgt_in: &TokenBatch) -> Result<Tensor> {
        let mut g = Graph::new();
        let v = self.bind(&mut g, false);
        let mut rng = Rng::new(0);
        let memory = self.encode(&mut g, &v, src, &mut rng, false)?;
        let out = self.decode(&mut g, &v, tgt_in, memory, &src.padding_mask(), &mut rng, false)?;
        Ok(g.value(out).clone())
    }

    /// Encoder output `[n, d]` for one source sequence.
    pub fn encoder_forward(&self, src: &[usize]) -> Result<Tensor> {
        let mut g = Graph::new();
        let v = self.bind(&mut g, false);
        let src = TokenBatch::single(src)?;
        let out = self.encode(&mut g, &v, &src, &mut Rng::new(0), false)?;
        g.value(out).reshape(&[src.len, self.config.d])
    }

    /// Logits `[m, V]` for decoder inputs attending to `encoder_out: [n, d]`.
    pub fn decoder_forward(&self, tgt_in: &[usize], encoder_out: &Tensor) -> Result<Tensor> {
        let d = self.config.d;
        if encoder_out.rank() != 2 || encoder_out.shape()[1] != d {
            return Err(Error::shape("decoder_forward", encoder_out.shape(), &[d]));
        }
        let n = encoder_out.shape()[0];
        let mut g = Graph::new();
        let v = self.bind(&mut g, false);
        let memory = g.constant(encoder_out.reshape(&[1, n, d])?);
        let tin = TokenBatch::single(tgt_in)?;
        let out = self.decode(&mut g, &v, &tin, memory, &[vec![false; n]], &mut Rng::new(0), false)?;
        g.value(out).reshape(&[tin.len, self.config.tgt_vocab])
    }
}
