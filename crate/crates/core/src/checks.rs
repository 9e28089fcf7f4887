//! Finite-difference gradient checks for every differentiable operation and
//! for a tiny end-to-end model. Every check reduces its output to a scalar
//! with fixed random read-out weights so all output entries matter.

use crate::attention::{
    multi_head_self_attention, scaled_dot_attention, source_target_attention, AttentionMask, AttentionVars,
    MaskSpec,
};
use crate::conv::{
    depthwise_conv, dropconnect, expand_shared_weights, lightconv, normalize_kernel, ConvConfig, NormalizerConfig,
    NormalizerKind, Padding,
};
use crate::dynamic::{dynamic_conv, dynamic_depthwise_conv, predict_kernels};
use crate::error::{Error, Result};
use crate::gradcheck::{grad_check, GradCheckReport};
use crate::graph::{Graph, Var};
use crate::model::{dense_conv, glu, label_smoothed_nll, Mechanism, Model, ModelConfig, TokenBatch, PAD};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const MODULES: [&str; 5] = ["numeric-core", "conv-kernels", "dynamic-conv", "attention", "seq-model"];
pub const TOLERANCE: f64 = 1e-4;
pub const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

type CheckFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

pub struct Check {
    pub module: &'static str,
    pub name: String,
    pub inputs: Vec<Tensor>,
    f: CheckFn,
}

impl Check {
    /// The scalar function under test.
    pub fn function(&self) -> &dyn Fn(&mut Graph, &[Var]) -> Result<Var> {
        &*self.f
    }

    pub fn run(&self) -> Result<GradCheckReport> {
        grad_check(&*self.f, &self.inputs, TOLERANCE)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub module: &'static str,
    pub name: String,
    pub seed: u64,
    pub report: GradCheckReport,
}

impl CheckOutcome {
    pub fn line(&self) -> String {
        format!(
            "{} {} seed={} max_rel_error={:.3e} {}",
            self.module,
            self.name,
            self.seed,
            self.report.max_rel_error,
            if self.report.passed { "PASS" } else { "FAIL" }
        )
    }
}

fn uniform(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.uniform_range(-1.0, 1.0))
}

/// Entries with magnitude in `[0.2, 1]`, keeping finite differences away
/// from the kinks of `relu`, `abs` and the l1 norms.
fn away_from_zero(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.uniform_range(0.2, 1.0);
        if rng.bernoulli(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `Σ y ⊙ r` for a fixed tensor `r` shaped like `y`.
fn readout(g: &mut Graph, y: Var, r: &Tensor) -> Result<Var> {
    let r = g.constant(r.clone());
    let p = g.mul(y, r)?;
    Ok(g.sum_all(p))
}

struct Builder<'a> {
    module: &'static str,
    rng: &'a mut Rng,
    checks: Vec<Check>,
}

impl Builder<'_> {
    /// Register a check of `op` whose output has shape `out`.
    fn add(
        &mut self,
        name: impl Into<String>,
        inputs: Vec<Tensor>,
        out: &[usize],
        op: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static,
    ) {
        let r = uniform(out, self.rng);
        self.checks.push(Check {
            module: self.module,
            name: name.into(),
            inputs,
            f: Box::new(move |g, v| {
                let y = op(g, v)?;
                readout(g, y, &r)
            }),
        });
    }

    /// Register a check of an op that already returns a scalar.
    fn add_scalar(
        &mut self,
        name: impl Into<String>,
        inputs: Vec<Tensor>,
        f: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static,
    ) {
        self.checks.push(Check {
            module: self.module,
            name: name.into(),
            inputs,
            f: Box::new(f),
        });
    }
}

fn numeric_core(b: &mut Builder) {
    let u = |shape: &[usize], rng: &mut Rng| uniform(shape, rng);
    let i = vec![u(&[2, 3, 4], b.rng), u(&[4, 5], b.rng)];
    b.add("matmul_broadcast", i, &[2, 3, 5], |g, v| g.matmul(v[0], v[1]));
    let i = vec![u(&[2, 3, 4], b.rng), u(&[2, 4, 2], b.rng)];
    b.add("matmul_batched", i, &[2, 3, 2], |g, v| g.matmul(v[0], v[1]));
    let i = vec![u(&[3, 4], b.rng), u(&[4], b.rng)];
    b.add("add_broadcast", i, &[3, 4], |g, v| g.add(v[0], v[1]));
    let i = vec![u(&[2, 3, 4], b.rng), u(&[3, 4], b.rng)];
    b.add("mul_broadcast", i, &[2, 3, 4], |g, v| g.mul(v[0], v[1]));
    let i = vec![u(&[3, 4], b.rng)];
    b.add("scale", i, &[3, 4], |g, v| Ok(g.scale(v[0], -2.5)));
    let i = vec![u(&[3, 4], b.rng)];
    b.add("sigmoid", i, &[3, 4], |g, v| Ok(g.sigmoid(v[0])));
    let i = vec![u(&[3, 4], b.rng)];
    b.add("tanh", i, &[3, 4], |g, v| Ok(g.tanh(v[0])));
    let i = vec![away_from_zero(&[3, 4], b.rng)];
    b.add("relu", i, &[3, 4], |g, v| Ok(g.relu(v[0])));
    let i = vec![away_from_zero(&[3, 4], b.rng)];
    b.add("abs", i, &[3, 4], |g, v| Ok(g.abs(v[0])));
    let i = vec![u(&[3, 4], b.rng)];
    b.add("square", i, &[3, 4], |g, v| Ok(g.square(v[0])));
    let i = vec![u(&[2, 3, 4], b.rng)];
    b.add("sum_axis", i, &[2, 4], |g, v| g.sum_axis(v[0], 1));
    let i = vec![u(&[2, 3, 4], b.rng)];
    b.add("mean_axis", i, &[3, 4], |g, v| g.mean_axis(v[0], 0));
    let i = vec![u(&[2, 3, 4], b.rng)];
    b.add_scalar("mean_all", i, |g, v| {
        let s = g.square(v[0]);
        Ok(g.mean_all(s))
    });
    for axis in [1, 2] {
        let i = vec![u(&[2, 3, 4], b.rng)];
        b.add(format!("softmax_axis{axis}"), i, &[2, 3, 4], move |g, v| g.softmax(v[0], axis));
    }
    let i = vec![u(&[3, 6], b.rng), u(&[6], b.rng), u(&[6], b.rng)];
    b.add("layer_norm", i, &[3, 6], |g, v| g.layer_norm(v[0], v[1], v[2]));
    let i = vec![u(&[2, 3, 4], b.rng)];
    b.add("reshape_permute", i, &[3, 2, 4], |g, v| {
        let r = g.reshape(v[0], &[4, 3, 2])?;
        g.permute(r, &[1, 2, 0])
    });
    let i = vec![u(&[2, 3, 4], b.rng)];
    b.add("transpose_last", i, &[2, 4, 3], |g, v| g.transpose_last(v[0]));
    let i = vec![u(&[2, 5, 3], b.rng)];
    b.add("slice_axis", i, &[2, 2, 3], |g, v| g.slice_axis(v[0], 1, 1, 2));
    for offset in [1isize, -2] {
        let i = vec![u(&[2, 5, 3], b.rng)];
        b.add(format!("shift_time{offset:+}"), i, &[2, 5, 3], move |g, v| g.shift_time(v[0], offset));
    }
    let i = vec![u(&[6, 4], b.rng)];
    b.add("embedding", i, &[5, 4], |g, v| g.embedding(v[0], &[1, 3, 3, 0, 5], &[5], None));
}

fn conv_kernels(b: &mut Builder) {
    for kind in NormalizerKind::ALL {
        let i = vec![away_from_zero(&[3, 5], b.rng)];
        b.add(format!("normalize_{}", kind.name()), i, &[3, 5], move |g, v| {
            normalize_kernel(g, v[0], NormalizerConfig::new(kind))
        });
    }
    let i = vec![uniform(&[2, 3], b.rng)];
    b.add("expand_shared_weights", i, &[6, 3], |g, v| expand_shared_weights(g, v[0], 6));
    for padding in [Padding::Centered, Padding::Causal] {
        let i = vec![uniform(&[2, 5, 4], b.rng), uniform(&[4, 3], b.rng)];
        b.add(format!("depthwise_conv_{padding:?}"), i, &[2, 5, 4], move |g, v| {
            depthwise_conv(g, v[0], v[1], padding)
        });
        for kind in [NormalizerKind::Softmax, NormalizerKind::None] {
            let cfg = ConvConfig::new(4, 2, 3, padding).expect("valid").with_normalizer(kind);
            let i = vec![uniform(&[2, 5, 4], b.rng), uniform(&[2, 3], b.rng)];
            b.add(format!("lightconv_{padding:?}_{}", kind.name()), i, &[2, 5, 4], move |g, v| {
                lightconv(g, v[0], v[1], &cfg, &mut Rng::new(0), false)
            });
        }
    }
    let seed = b.rng.seed();
    let i = vec![uniform(&[2, 3], b.rng)];
    b.add("dropconnect", i, &[2, 3], move |g, v| {
        dropconnect(g, v[0], 0.3, &mut Rng::new(seed), true)
    });
    let cfg = ConvConfig::new(4, 2, 3, Padding::Causal)
        .expect("valid")
        .with_dropconnect(0.25)
        .expect("valid");
    let i = vec![uniform(&[2, 5, 4], b.rng), uniform(&[2, 3], b.rng)];
    b.add("lightconv_dropconnect", i, &[2, 5, 4], move |g, v| {
        lightconv(g, v[0], v[1], &cfg, &mut Rng::new(seed), true)
    });
}

fn dynamic_convs(b: &mut Builder) {
    let i = vec![uniform(&[2, 4, 6], b.rng), uniform(&[2, 3, 6], b.rng)];
    b.add("predict_kernels", i, &[2, 4, 2, 3], |g, v| predict_kernels(g, v[0], v[1]));
    for padding in [Padding::Centered, Padding::Causal] {
        let i = vec![uniform(&[2, 5, 4], b.rng), uniform(&[2, 5, 2, 3], b.rng)];
        b.add(format!("dynamic_depthwise_conv_{padding:?}"), i, &[2, 5, 4], move |g, v| {
            dynamic_depthwise_conv(g, v[0], v[1], padding)
        });
        for kind in [NormalizerKind::Softmax, NormalizerKind::None] {
            let cfg = ConvConfig::new(4, 2, 3, padding).expect("valid").with_normalizer(kind);
            let i = vec![uniform(&[2, 5, 4], b.rng), uniform(&[2, 3, 4], b.rng)];
            b.add(format!("dynamic_conv_{padding:?}_{}", kind.name()), i, &[2, 5, 4], move |g, v| {
                dynamic_conv(g, v[0], v[1], &cfg, &mut Rng::new(0), false)
            });
        }
    }
}

fn attention_vars(v: &[Var], window: Option<usize>) -> AttentionVars {
    AttentionVars {
        wq: v[1],
        wk: v[2],
        wv: v[3],
        wo: v[4],
        heads: 2,
        window,
    }
}

fn attentions(b: &mut Builder) {
    let i = vec![uniform(&[2, 3, 4], b.rng), uniform(&[2, 5, 4], b.rng), uniform(&[2, 5, 4], b.rng)];
    b.add("scaled_dot_attention", i, &[2, 3, 4], |g, v| scaled_dot_attention(g, v[0], v[1], v[2], None));
    let i = vec![uniform(&[2, 4, 4], b.rng), uniform(&[2, 4, 4], b.rng), uniform(&[2, 4, 4], b.rng)];
    b.add("scaled_dot_attention_causal", i, &[2, 4, 4], |g, v| {
        let spec = MaskSpec {
            causal: true,
            ..MaskSpec::default()
        };
        let mask = AttentionMask::build(2, 4, 4, spec)?;
        scaled_dot_attention(g, v[0], v[1], v[2], Some(&mask))
    });
    let weights = |rng: &mut Rng, x: &[usize]| {
        let mut i = vec![uniform(x, rng)];
        i.extend((0..4).map(|_| uniform(&[8, 8], rng)));
        i
    };
    for (name, causal, window) in [
        ("self_attention_causal", true, None),
        ("self_attention_centered", false, None),
        ("self_attention_window_causal", true, Some(3)),
        ("self_attention_window_centered", false, Some(3)),
    ] {
        let i = weights(b.rng, &[2, 5, 8]);
        b.add(name, i, &[2, 5, 8], move |g, v| {
            multi_head_self_attention(g, v[0], &attention_vars(v, window), causal, None)
        });
    }
    let pad = vec![vec![false; 5], vec![false, false, false, true, true]];
    let i = weights(b.rng, &[2, 5, 8]);
    let rows = pad.clone();
    b.add("self_attention_key_padding", i, &[2, 5, 8], move |g, v| {
        multi_head_self_attention(g, v[0], &attention_vars(v, None), false, Some(&rows))
    });
    let mut i = weights(b.rng, &[2, 3, 8]);
    i.push(uniform(&[2, 5, 8], b.rng));
    b.add("source_target_attention", i, &[2, 3, 8], move |g, v| {
        source_target_attention(g, v[0], v[5], &attention_vars(v, None), Some(&pad))
    });
}

/// One encoder and one decoder block, d=8, H=2, k=3, V=11. The end-to-end
/// checks read out the logits rather than the loss: the loss sits near
/// `ln V` at initialization, and its rounding noise swamps the smallest
/// gradient entries at the fixed finite-difference step.
pub fn tiny_model_config(mechanism: Mechanism) -> ModelConfig {
    let mut cfg = ModelConfig::tiny(mechanism, 1, 8, 2, 11);
    cfg.d_ff = 16;
    cfg.max_positions = 16;
    cfg
}

/// Smallest distance from a ReLU kink accepted at a check's base point.
pub const KINK_MARGIN: f64 = 1e-3;

/// Draw length-4 source/target pairs until no FFN ReLU input lies within
/// [`KINK_MARGIN`] of zero, where central differences would straddle the
/// kink.
fn kink_free_batch(model: &Model, rng: &mut Rng) -> Result<(TokenBatch, TokenBatch)> {
    let tokens = |rng: &mut Rng| (0..4).map(|_| rng.below(3, 11)).collect::<Vec<_>>();
    for _ in 0..1000 {
        let src = TokenBatch::from_sequences(&[tokens(rng), tokens(rng)])?;
        let tgt = TokenBatch::from_sequences(&[tokens(rng), tokens(rng)])?;
        let mut g = Graph::new();
        let v = model.bind(&mut g, false);
        model.loss(&mut g, &v, &src, &tgt, 0.1, &mut Rng::new(0), false)?;
        if g.kink_margin() >= KINK_MARGIN {
            return Ok((src, tgt));
        }
    }
    Err(Error::contract("no kink-free batch found"))
}

fn seq_model(b: &mut Builder) -> Result<()> {
    let i = vec![uniform(&[2, 3, 8], b.rng)];
    b.add("glu", i, &[2, 3, 4], |g, v| glu(g, v[0]));
    for padding in [Padding::Centered, Padding::Causal] {
        let i = vec![uniform(&[2, 5, 4], b.rng), uniform(&[3, 4, 4], b.rng)];
        b.add(format!("dense_conv_{padding:?}"), i, &[2, 5, 4], move |g, v| {
            dense_conv(g, v[0], v[1], padding)
        });
    }
    let i = vec![uniform(&[6, 7], b.rng)];
    b.add_scalar("label_smoothed_nll", i, |g, v| {
        label_smoothed_nll(g, v[0], &[3, 1, 6, PAD, 4, 2], 0.1, PAD)
    });
    let mut mechanisms: Vec<(String, ModelConfig)> = Mechanism::ALL
        .iter()
        .map(|&m| (format!("model_{m}"), tiny_model_config(m)))
        .collect();
    let mut windowed = tiny_model_config(Mechanism::SelfAttention);
    windowed.windowed_attention = true;
    mechanisms.push(("model_windowed_attention".into(), windowed));
    for (name, cfg) in mechanisms {
        let model = Model::new(cfg, b.rng.seed())?;
        let (src, tgt) = kink_free_batch(&model, b.rng)?;
        let inputs: Vec<Tensor> = model.params().iter().map(|(_, t)| t.clone()).collect();
        let out = [2, tgt.len + 1, 11];
        b.add(name, inputs, &out, move |g, v| {
            let (_, logits) = model.loss(g, v, &src, &tgt, 0.1, &mut Rng::new(0), false)?;
            Ok(logits)
        });
    }
    Ok(())
}

/// The checks of one module, with inputs drawn from `seed`.
pub fn checks(module: &str, seed: u64) -> Result<Vec<Check>> {
    let mut rng = Rng::new(seed);
    let module = *MODULES
        .iter()
        .find(|&&m| m == module)
        .ok_or_else(|| Error::config(format!("unknown module {module:?}; expected one of {MODULES:?}")))?;
    let mut b = Builder {
        module,
        rng: &mut rng,
        checks: Vec::new(),
    };
    match module {
        "numeric-core" => numeric_core(&mut b),
        "conv-kernels" => conv_kernels(&mut b),
        "dynamic-conv" => dynamic_convs(&mut b),
        "attention" => attentions(&mut b),
        _ => seq_model(&mut b)?,
    }
    Ok(b.checks)
}

/// Run every check of `modules` for each seed, in order.
pub fn run_checks(modules: &[&str], seeds: &[u64]) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for &module in modules {
        for &seed in seeds {
            for check in checks(module, seed)? {
                out.push(CheckOutcome {
                    module: check.module,
                    name: check.name.clone(),
                    seed,
                    report: check.run()?,
                });
            }
        }
    }
    Ok(out)
}
