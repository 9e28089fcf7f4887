//! Multi-head scaled dot-product attention.
//!
//! Projections are bias-free and use the row-vector convention
//! (`q = x · W_Q`). Masked logits receive [`MASK_VALUE`] before the softmax;
//! at double precision `exp(MASK_VALUE - max)` underflows to exactly zero.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::linalg;
use crate::rng::Rng;
use crate::tensor::{numel, Tensor};

/// Additive logit for disallowed query/key pairs.
pub const MASK_VALUE: f64 = -1e30;

/// Projection weights of one attention module.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub heads: usize,
    /// Bounded context: `None` attends everywhere allowed.
    pub window: Option<usize>,
}

impl AttentionParams {
    pub fn random(d: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        let bound = (6.0 / (2 * d) as f64).sqrt();
        let mut mat = || Tensor::from_fn(&[d, d], |_| rng.uniform_range(-bound, bound));
        let p = AttentionParams {
            wq: mat(),
            wk: mat(),
            wv: mat(),
            wo: mat(),
            heads,
            window: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.wq.shape()[0];
        for w in [&self.wq, &self.wk, &self.wv, &self.wo] {
            if w.shape() != [d, d] {
                return Err(Error::shape("attention params", w.shape(), &[d, d]));
            }
        }
        check_heads(d, self.heads)?;
        if self.window == Some(0) {
            return Err(Error::config("attention window must be at least 1"));
        }
        Ok(())
    }

    /// Register the weights on a graph.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> AttentionVars {
        let mut leaf = |t: &Tensor| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        AttentionVars {
            wq: leaf(&self.wq),
            wk: leaf(&self.wk),
            wv: leaf(&self.wv),
            wo: leaf(&self.wo),
            heads: self.heads,
            window: self.window,
        }
    }
}

fn check_heads(d: usize, heads: usize) -> Result<()> {
    if heads == 0 || d % heads != 0 {
        return Err(Error::config(format!(
            "heads ({heads}) must divide the model dimension ({d})"
        )));
    }
    Ok(())
}

/// Attention weights as graph variables.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub heads: usize,
    pub window: Option<usize>,
}

/// Which key positions each query may attend to.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMask {
    batch: usize,
    queries: usize,
    keys: usize,
    allowed: Vec<bool>,
}

/// Geometry used to build an [`AttentionMask`].
#[derive(Clone, Copy, Debug, Default)]
pub struct MaskSpec<'a> {
    /// Keys after the query are hidden.
    pub causal: bool,
    /// Bounded context: causal masks keep the `w-1` previous keys and the
    /// query position, non-causal ones keep `⌊w/2⌋` on each side.
    pub window: Option<usize>,
    /// Absolute position of the first query (for incremental decoding).
    pub query_offset: usize,
    /// Per batch element, `true` marks padded keys.
    pub key_padding: Option<&'a [Vec<bool>]>,
}

impl AttentionMask {
    pub fn build(batch: usize, queries: usize, keys: usize, spec: MaskSpec<'_>) -> Result<Self> {
        if let Some(pad) = spec.key_padding {
            if pad.len() != batch || pad.iter().any(|row| row.len() != keys) {
                return Err(Error::contract("key padding must be batch × keys"));
            }
        }
        let mut allowed = vec![true; batch * queries * keys];
        for b in 0..batch {
            for qi in 0..queries {
                let i = (qi + spec.query_offset) as isize;
                for j in 0..keys {
                    let jj = j as isize;
                    let mut ok = !(spec.causal && jj > i);
                    if let Some(w) = spec.window {
                        let w = w as isize;
                        ok &= if spec.causal {
                            i - jj < w
                        } else {
                            (i - jj).abs() <= w / 2
                        };
                    }
                    if let Some(pad) = spec.key_padding {
                        // A padded query of self-attention sees itself so its row stays finite.
                        let own = queries == keys && spec.query_offset == 0 && qi == j && pad[b][qi];
                        ok = (ok && !pad[b][j]) || own;
                    }
                    allowed[(b * queries + qi) * keys + j] = ok;
                }
            }
        }
        let mask = AttentionMask {
            batch,
            queries,
            keys,
            allowed,
        };
        mask.check_rows()?;
        Ok(mask)
    }

    pub fn allowed(&self, b: usize, i: usize, j: usize) -> bool {
        self.allowed[(b * self.queries + i) * self.keys + j]
    }

    fn check_rows(&self) -> Result<()> {
        for (r, row) in self.allowed.chunks(self.keys).enumerate() {
            if !row.iter().any(|&a| a) {
                return Err(Error::contract(format!(
                    "query {} of batch element {} has every key masked",
                    r % self.queries,
                    r / self.queries
                )));
            }
        }
        Ok(())
    }

    /// Additive mask for logits with leading axes of total size `lead`
    /// (`batch · heads`, or anything when `batch == 1`).
    fn additive(&self, lead: usize) -> Result<Tensor> {
        if self.batch != 1 && lead % self.batch != 0 {
            return Err(Error::contract("attention mask batch does not match the logits"));
        }
        let per = if self.batch == 1 { lead } else { lead / self.batch };
        let plane = self.queries * self.keys;
        let mut data = Vec::with_capacity(lead * plane);
        for l in 0..lead {
            let b = if self.batch == 1 { 0 } else { l / per };
            data.extend(
                self.allowed[b * plane..(b + 1) * plane]
                    .iter()
                    .map(|&a| if a { 0.0 } else { MASK_VALUE }),
            );
        }
        Ok(Tensor::from_parts(vec![lead, self.queries, self.keys], data))
    }
}

/// `softmax(Q·Kᵀ/√d_k + mask)·V` over the last two axes of `q: [.., n_q, d_k]`,
/// `k, v: [.., n_k, d_k]`.
pub fn scaled_dot_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&AttentionMask>,
) -> Result<Var> {
    let qs = g.shape(q).to_vec();
    let ks = g.shape(k).to_vec();
    if qs.len() < 2 || ks.len() != qs.len() || qs[qs.len() - 1] != ks[ks.len() - 1] {
        return Err(Error::shape("scaled_dot_attention", &qs, &ks));
    }
    if g.shape(v)[..ks.len() - 1] != ks[..ks.len() - 1] {
        return Err(Error::shape("scaled_dot_attention", &ks, g.shape(v)));
    }
    let dk = qs[qs.len() - 1];
    let kt = g.transpose_last(k)?;
    let logits = g.matmul(q, kt)?;
    let mut logits = g.scale(logits, 1.0 / (dk as f64).sqrt());
    if let Some(mask) = mask {
        let ls = g.shape(logits).to_vec();
        let (nq, nk) = (ls[ls.len() - 2], ls[ls.len() - 1]);
        if mask.queries != nq || mask.keys != nk {
            return Err(Error::shape("attention mask", &[mask.queries, mask.keys], &[nq, nk]));
        }
        let add = mask.additive(numel(&ls[..ls.len() - 2]))?.reshape(&ls)?;
        let add = g.constant(add);
        logits = g.add(logits, add)?;
    }
    let last = g.shape(logits).len() - 1;
    let weights = g.softmax(logits, last)?;
    g.matmul(weights, v)
}

/// `x: [B, n, d] · W → [B, H, n, d/H]`.
pub(crate) fn project_heads(g: &mut Graph, x: Var, w: Var, heads: usize) -> Result<Var> {
    let xs = g.shape(x).to_vec();
    let (b, n, d) = (xs[0], xs[1], xs[2]);
    let p = g.matmul(x, w)?;
    let p = g.reshape(p, &[b, n, heads, d / heads])?;
    g.permute(p, &[0, 2, 1, 3])
}

/// `[B, H, n, d_k] → [B, n, d] · W^O`.
pub(crate) fn combine_heads(g: &mut Graph, y: Var, wo: Var) -> Result<Var> {
    let ys = g.shape(y).to_vec();
    let (b, h, n, dk) = (ys[0], ys[1], ys[2], ys[3]);
    let y = g.permute(y, &[0, 2, 1, 3])?;
    let y = g.reshape(y, &[b, n, h * dk])?;
    g.matmul(y, wo)
}

/// Lift `[n, d]` to `[1, n, d]`; returns whether the input was unbatched.
fn batched(g: &mut Graph, x: Var) -> Result<(Var, bool)> {
    match g.shape(x).len() {
        3 => Ok((x, false)),
        2 => {
            let s = g.shape(x).to_vec();
            Ok((g.reshape(x, &[1, s[0], s[1]])?, true))
        }
        _ => Err(Error::contract(format!(
            "attention expects [B, n, d] or [n, d], got {:?}",
            g.shape(x)
        ))),
    }
}

fn unbatched(g: &mut Graph, y: Var, squeeze: bool) -> Result<Var> {
    if !squeeze {
        return Ok(y);
    }
    let s = g.shape(y).to_vec();
    g.reshape(y, &s[1..])
}

fn check_model_dim(g: &Graph, x: Var, p: &AttentionVars) -> Result<()> {
    let d = g.shape(p.wq)[0];
    if *g.shape(x).last().unwrap_or(&0) != d {
        return Err(Error::shape("attention input", g.shape(x), g.shape(p.wq)));
    }
    check_heads(d, p.heads)
}

/// Self-attention over `x: [B, n, d]` (or `[n, d]`). With `causal`, position
/// `i` only sees keys `≤ i`; `p.window` bounds the context further.
pub fn multi_head_self_attention(
    g: &mut Graph,
    x: Var,
    p: &AttentionVars,
    causal: bool,
    key_padding: Option<&[Vec<bool>]>,
) -> Result<Var> {
    check_model_dim(g, x, p)?;
    let (x, squeeze) = batched(g, x)?;
    let (b, n) = (g.shape(x)[0], g.shape(x)[1]);
    let q = project_heads(g, x, p.wq, p.heads)?;
    let k = project_heads(g, x, p.wk, p.heads)?;
    let v = project_heads(g, x, p.wv, p.heads)?;
    let mask = AttentionMask::build(
        b,
        n,
        n,
        MaskSpec {
            causal,
            window: p.window,
            query_offset: 0,
            key_padding,
        },
    )?;
    let y = scaled_dot_attention(g, q, k, v, Some(&mask))?;
    let y = combine_heads(g, y, p.wo)?;
    unbatched(g, y, squeeze)
}

/// Attention from decoder states `x: [B, m, d]` to encoder states
/// `memory: [B, n, d]`; keys and values are projections of the memory.
pub fn source_target_attention(
    g: &mut Graph,
    x: Var,
    memory: Var,
    p: &AttentionVars,
    source_padding: Option<&[Vec<bool>]>,
) -> Result<Var> {
    check_model_dim(g, x, p)?;
    check_model_dim(g, memory, p)?;
    let (x, squeeze) = batched(g, x)?;
    let (memory, _) = batched(g, memory)?;
    let (b, m) = (g.shape(x)[0], g.shape(x)[1]);
    let n = g.shape(memory)[1];
    if g.shape(memory)[0] != b {
        return Err(Error::shape("source_target_attention", g.shape(x), g.shape(memory)));
    }
    let q = project_heads(g, x, p.wq, p.heads)?;
    let k = project_heads(g, memory, p.wk, p.heads)?;
    let v = project_heads(g, memory, p.wv, p.heads)?;
    let mask = AttentionMask::build(
        b,
        m,
        n,
        MaskSpec {
            key_padding: source_padding,
            ..MaskSpec::default()
        },
    )?;
    let y = scaled_dot_attention(g, q, k, v, Some(&mask))?;
    let y = combine_heads(g, y, p.wo)?;
    unbatched(g, y, squeeze)
}

/// Context-dependent multiply-accumulates of self-attention: `Q·Kᵀ` plus the
/// weighted sum over `V`, `2·n²·d`. Projections are excluded.
pub fn count_ops_attention(n: u64, d: u64, _heads: u64) -> u64 {
    2 * n * n * d
}

/// Tape-free unmasked multi-head attention core on already projected
/// `q, k, v: [n, d]`, one head at a time.
pub fn attention_context_values(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Result<Tensor> {
    if q.rank() != 2 || q.shape() != k.shape() || k.shape() != v.shape() {
        return Err(Error::shape("attention_context", q.shape(), k.shape()));
    }
    let (n, d) = (q.shape()[0], q.shape()[1]);
    check_heads(d, heads)?;
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut out = vec![0.0; n * d];
    let mut qh = vec![0.0; n * dk];
    let mut kt = vec![0.0; dk * n];
    let mut vh = vec![0.0; n * dk];
    let mut logits = vec![0.0; n * n];
    let mut oh = vec![0.0; n * dk];
    for h in 0..heads {
        for i in 0..n {
            for c in 0..dk {
                qh[i * dk + c] = q.data()[i * d + h * dk + c] * scale;
                kt[c * n + i] = k.data()[i * d + h * dk + c];
                vh[i * dk + c] = v.data()[i * d + h * dk + c];
            }
        }
        logits.iter_mut().for_each(|x| *x = 0.0);
        linalg::gemm_nn(&qh, &kt, &mut logits, n, dk, n);
        for row in logits.chunks_mut(n) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            let inv = 1.0 / sum;
            row.iter_mut().for_each(|x| *x *= inv);
        }
        oh.iter_mut().for_each(|x| *x = 0.0);
        linalg::gemm_nn(&logits, &vh, &mut oh, n, n, dk);
        for i in 0..n {
            out[i * d + h * dk..i * d + (h + 1) * dk].copy_from_slice(&oh[i * dk..(i + 1) * dk]);
        }
    }
    Ok(Tensor::from_parts(vec![n, d], out))
}
