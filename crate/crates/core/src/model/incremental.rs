//! Step-by-step decoding: each decoder layer caches either its attention
//! keys and values or a rolling window of its last `k` convolution inputs.

use super::{Attn, Mixer, Model, Side, TokenBatch};
use crate::attention::{self, AttentionMask, MaskSpec};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
enum LayerCache {
    /// Projected keys and values `[B, H, t, d/H]`.
    Attention { keys: Option<Tensor>, values: Option<Tensor> },
    /// Last `k` convolution inputs `[B, k, d]`, oldest first, zero before
    /// the sequence start.
    Window(Tensor),
}

/// Decoder state after consuming a prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct IncrementalState {
    batch: usize,
    position: usize,
    memory_padding: Vec<Vec<bool>>,
    /// Per decoder layer, source keys and values `[B, H, n, d/H]`.
    cross: Vec<(Tensor, Tensor)>,
    layers: Vec<LayerCache>,
}

impl IncrementalState {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Number of tokens consumed so far.
    pub fn position(&self) -> usize {
        self.position
    }

    /// Rows held by the cache of decoder layer `layer`.
    pub fn cache_len(&self, layer: usize) -> usize {
        match &self.layers[layer] {
            LayerCache::Attention { keys, .. } => keys.as_ref().map_or(0, |k| k.shape()[2]),
            LayerCache::Window(w) => w.shape()[1],
        }
    }
}

/// Concatenate along the time axis (second to last).
fn append_time(cache: Option<&Tensor>, new: &Tensor) -> Tensor {
    let Some(cache) = cache else { return new.clone() };
    let s = cache.shape();
    let r = s.len();
    let (t, d) = (s[r - 2], s[r - 1]);
    let outer = cache.len() / (t * d);
    let mut data = Vec::with_capacity(cache.len() + new.len());
    for o in 0..outer {
        data.extend_from_slice(&cache.data()[o * t * d..(o + 1) * t * d]);
        data.extend_from_slice(&new.data()[o * d..(o + 1) * d]);
    }
    let mut shape = s.to_vec();
    shape[r - 2] = t + 1;
    Tensor::new(&shape, data).expect("concatenated size")
}

/// Drop the oldest row of `window: [B, k, d]` and append `new: [B, 1, d]`.
fn roll_in(window: &Tensor, new: &Tensor) -> Tensor {
    let (b, k, d) = (window.shape()[0], window.shape()[1], window.shape()[2]);
    let mut data = Vec::with_capacity(window.len());
    for bi in 0..b {
        data.extend_from_slice(&window.data()[(bi * k + 1) * d..(bi + 1) * k * d]);
        data.extend_from_slice(&new.data()[bi * d..(bi + 1) * d]);
    }
    Tensor::new(window.shape(), data).expect("window size")
}

impl Model {
    /// Encode `src` and prepare empty decoder caches.
    pub fn start_decoding(&self, src: &TokenBatch) -> Result<IncrementalState> {
        let mut g = Graph::new();
        let v = self.bind(&mut g, false);
        let memory = self.encode(&mut g, &v, src, &mut Rng::new(0), false)?;
        let heads = self.config.heads;
        let mut cross = Vec::with_capacity(self.config.decoder_layers);
        let mut layers = Vec::with_capacity(self.config.decoder_layers);
        for (layer, block) in self.layout.decoder.iter().enumerate() {
            let (_, a) = block.cross.expect("decoder blocks have cross attention");
            let k = attention::project_heads(&mut g, memory, v[a.wk], heads)?;
            let val = attention::project_heads(&mut g, memory, v[a.wv], heads)?;
            cross.push((g.value(k).clone(), g.value(val).clone()));
            layers.push(match block.mixer {
                Mixer::Attention(_) => LayerCache::Attention {
                    keys: None,
                    values: None,
                },
                _ => {
                    let k = self.kernel_width(Side::Decoder, layer);
                    LayerCache::Window(Tensor::zeros(&[src.batch, k, self.config.d]))
                }
            });
        }
        Ok(IncrementalState {
            batch: src.batch,
            position: 0,
            memory_padding: src.padding_mask(),
            cross,
            layers,
        })
    }

    fn step_attention(
        &self,
        g: &mut Graph,
        v: &[Var],
        h: Var,
        a: Attn,
        layer: usize,
        state: &mut IncrementalState,
    ) -> Result<Var> {
        let heads = self.config.heads;
        let av = self.attention_vars(v, a, self.window(Side::Decoder, layer));
        let q = attention::project_heads(g, h, av.wq, heads)?;
        let k = attention::project_heads(g, h, av.wk, heads)?;
        let val = attention::project_heads(g, h, av.wv, heads)?;
        let LayerCache::Attention { keys, values } = &mut state.layers[layer] else {
            unreachable!("attention layers keep key/value caches")
        };
        let new_keys = append_time(keys.as_ref(), g.value(k));
        let new_values = append_time(values.as_ref(), g.value(val));
        *keys = Some(new_keys.clone());
        *values = Some(new_values.clone());
        let t = new_keys.shape()[2];
        let mask = AttentionMask::build(
            state.batch,
            1,
            t,
            MaskSpec {
                causal: true,
                window: av.window,
                query_offset: state.position,
                key_padding: None,
            },
        )?;
        let kc = g.constant(new_keys);
        let vc = g.constant(new_values);
        let y = attention::scaled_dot_attention(g, q, kc, vc, Some(&mask))?;
        attention::combine_heads(g, y, av.wo)
    }

    /// Push `input: [B, 1, d]` into the layer window and return the window.
    fn push_window(g: &mut Graph, input: Var, layer: usize, state: &mut IncrementalState) -> Var {
        let LayerCache::Window(w) = &mut state.layers[layer] else {
            unreachable!("convolution layers keep input windows")
        };
        *w = roll_in(w, g.value(input));
        g.constant(w.clone())
    }

    /// Feed one token per batch element and return next-token logits `[B, V]`.
    pub fn decode_step(&self, state: &mut IncrementalState, tokens: &[usize]) -> Result<Tensor> {
        if tokens.len() != state.batch {
            return Err(Error::contract(format!(
                "{} tokens for a batch of {}",
                tokens.len(),
                state.batch
            )));
        }
        let mut g = Graph::new();
        let v = self.bind(&mut g, false);
        let mut rng = Rng::new(0);
        let batch = TokenBatch {
            ids: tokens.to_vec(),
            batch: state.batch,
            len: 1,
            lengths: vec![1; state.batch],
        };
        let mut x = self.embed(&mut g, &v, Side::Decoder, &batch, state.position)?;
        for (layer, block) in self.layout.decoder.iter().enumerate() {
            let h = self.norm(&mut g, &v, x, block.norm)?;
            let m = match block.mixer {
                Mixer::Attention(a) => self.step_attention(&mut g, &v, h, a, layer, state)?,
                Mixer::Conv { w_in, kernel, w_out } => {
                    let cfg = self.conv_config(Side::Decoder, layer)?;
                    let u = self.conv_input(&mut g, h, v[w_in])?;
                    let window = Self::push_window(&mut g, u, layer, state);
                    let c = self.conv_core(&mut g, window, v[kernel], &cfg, &mut rng, false)?;
                    let last = g.slice_axis(c, 1, cfg.kernel_width - 1, 1)?;
                    g.matmul(last, v[w_out])?
                }
                Mixer::Dense { kernel } => {
                    let k = self.kernel_width(Side::Decoder, layer);
                    let window = Self::push_window(&mut g, h, layer, state);
                    let c = super::dense_conv(&mut g, window, v[kernel], Side::Decoder.padding())?;
                    g.slice_axis(c, 1, k - 1, 1)?
                }
            };
            x = g.add(x, m)?;
            let (norm, a) = block.cross.expect("decoder blocks have cross attention");
            let h = self.norm(&mut g, &v, x, norm)?;
            let q = attention::project_heads(&mut g, h, v[a.wq], self.config.heads)?;
            let (ck, cv) = &state.cross[layer];
            let n = ck.shape()[2];
            let mask = AttentionMask::build(
                state.batch,
                1,
                n,
                MaskSpec {
                    key_padding: Some(&state.memory_padding),
                    ..MaskSpec::default()
                },
            )?;
            let kc = g.constant(ck.clone());
            let vc = g.constant(cv.clone());
            let y = attention::scaled_dot_attention(&mut g, q, kc, vc, Some(&mask))?;
            let c = attention::combine_heads(&mut g, y, v[a.wo])?;
            x = g.add(x, c)?;
            let h = self.norm(&mut g, &v, x, block.ffn_norm)?;
            let f = self.feed_forward(&mut g, &v, h, block.ffn)?;
            x = g.add(x, f)?;
        }
        let x = self.norm(&mut g, &v, x, self.layout.dec_norm)?;
        let logits = g.matmul(x, v[self.layout.out_proj])?;
        state.position += 1;
        g.value(logits).reshape(&[state.batch, self.config.tgt_vocab])
    }
}
