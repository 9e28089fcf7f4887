use convseq::attention::{attention_context_values, count_ops_attention};
use convseq::conv::{
    count_params, lightconv_values, normalize_kernel_values, ConvConfig, ConvKernel, NormalizerConfig,
    NormalizerKind, Padding,
};
use convseq::dynamic::{count_ops_dynamic, dynamic_conv_values, predict_kernels_values, DynamicKernelPredictor};
use convseq::gradcheck::analytic_gradient;
use convseq::model::{checkpoint, Mechanism, Model, ModelConfig};
use convseq::tensor::{matmul, softmax};
use convseq::train::optim::clip_gradients;
use convseq::train::{ScheduleKind, ScheduleSpec, TaskKind, TaskSpec};
use convseq::{Graph, Result, Rng, Tensor, Var};
use proptest::prelude::*;

fn tensor(shape: &[usize], seed: u64, scale: f64) -> Tensor {
    let mut rng = Rng::new(seed);
    Tensor::from_fn(shape, |_| rng.uniform_range(-scale, scale))
}

/// `(channels, heads)` with heads dividing channels.
fn channels_heads() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=4, 1usize..=3).prop_map(|(h, per)| (h * per, h))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn offset_and_unravel_are_inverse(shape in prop::collection::vec(1usize..5, 1..5), pick in any::<prop::sample::Index>()) {
        let t = Tensor::zeros(&shape);
        prop_assert_eq!(t.len(), shape.iter().product::<usize>());
        let flat = pick.index(t.len());
        prop_assert_eq!(t.offset(&t.unravel(flat)).unwrap(), flat);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(rows in 1usize..5, cols in 1usize..9, seed in any::<u64>(), c in -100.0f64..100.0) {
        let x = tensor(&[rows, cols], seed, 50.0);
        let s = softmax(&x, 1).unwrap();
        for row in s.data().chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let shifted = softmax(&x.map(|v| v + c), 1).unwrap();
        prop_assert!(s.max_abs_diff(&shifted).unwrap() < 1e-12);
    }

    #[test]
    fn identity_is_neutral_for_matmul(r in 1usize..7, c in 1usize..7, seed in any::<u64>()) {
        let a = tensor(&[r, c], seed, 10.0);
        prop_assert!(matmul(&a, &Tensor::eye(c)).unwrap().max_abs_diff(&a).unwrap() < 1e-12);
        prop_assert!(matmul(&Tensor::eye(r), &a).unwrap().max_abs_diff(&a).unwrap() < 1e-12);
    }

    #[test]
    fn backward_is_deterministic_and_additive(n in 1usize..6, seed in any::<u64>()) {
        let x = tensor(&[n, n], seed, 1.0);
        // x is consumed three times: the gradient of Σ tanh(x·x) + Σ x is the sum of all paths.
        let f = |g: &mut Graph, v: &[Var]| -> Result<Var> {
            let p = g.matmul(v[0], v[0])?;
            let t = g.tanh(p);
            let a = g.sum_all(t);
            let b = g.sum_all(v[0]);
            g.add(a, b)
        };
        let g1 = analytic_gradient(&f, &[x.clone()]).unwrap();
        let g2 = analytic_gradient(&f, &[x.clone()]).unwrap();
        prop_assert_eq!(g1[0].data(), g2[0].data());
        let only_sum = |g: &mut Graph, v: &[Var]| -> Result<Var> { Ok(g.sum_all(v[0])) };
        let twice = |g: &mut Graph, v: &[Var]| -> Result<Var> {
            let a = g.sum_all(v[0]);
            let b = g.sum_all(v[0]);
            g.add(a, b)
        };
        let one = analytic_gradient(&only_sum, &[x.clone()]).unwrap();
        let two = analytic_gradient(&twice, &[x]).unwrap();
        prop_assert!(two[0].data().iter().zip(one[0].data()).all(|(a, b)| *a == 2.0 * b));
    }

    #[test]
    fn equal_seeds_give_equal_streams(seed in any::<u64>(), stream in 0u64..4) {
        let mut a = Rng::with_stream(seed, stream);
        let mut b = Rng::with_stream(seed, stream);
        for _ in 0..32 {
            prop_assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn softmax_kernels_sum_to_one(heads in 1usize..5, k in 1usize..9, seed in any::<u64>()) {
        let w = tensor(&[heads, k], seed, 20.0);
        let n = normalize_kernel_values(&w, NormalizerConfig::new(NormalizerKind::Softmax));
        for row in n.data().chunks(k) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn lightconv_ignores_kernel_row_shifts((d, heads) in channels_heads(), half in 0usize..3, n in 1usize..8, seed in any::<u64>(), c in -5.0f64..5.0, row in any::<prop::sample::Index>()) {
        let k = 2 * half + 1;
        let cfg = ConvConfig::new(d, heads, k, Padding::Centered).unwrap();
        let x = tensor(&[2, n, d], seed, 1.0);
        let w = tensor(&[heads, k], seed ^ 1, 1.0);
        let mut shifted = w.clone();
        let r = row.index(heads);
        shifted.data_mut()[r * k..(r + 1) * k].iter_mut().for_each(|v| *v += c);
        let a = lightconv_values(&x, &ConvKernel::new(w).unwrap(), &cfg).unwrap();
        let b = lightconv_values(&x, &ConvKernel::new(shifted).unwrap(), &cfg).unwrap();
        prop_assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    }

    #[test]
    fn causal_convs_never_see_the_future((d, heads) in channels_heads(), k in 1usize..6, n in 2usize..9, seed in any::<u64>(), pos in any::<prop::sample::Index>()) {
        let cfg = ConvConfig::new(d, heads, k, Padding::Causal).unwrap();
        let mut rng = Rng::new(seed);
        let kernel = ConvKernel::random(heads, k, &mut rng);
        let pred = DynamicKernelPredictor::random(heads, k, d, &mut rng);
        let x = tensor(&[1, n, d], seed ^ 2, 1.0);
        let p = 1 + pos.index(n - 1);
        let mut y = x.clone();
        y.data_mut()[p * d..].iter_mut().for_each(|v| *v += 3.0);
        let keep = p * d;
        let l = (lightconv_values(&x, &kernel, &cfg).unwrap(), lightconv_values(&y, &kernel, &cfg).unwrap());
        prop_assert_eq!(&l.0.data()[..keep], &l.1.data()[..keep]);
        let dy = (dynamic_conv_values(&x, &pred, &cfg).unwrap(), dynamic_conv_values(&y, &pred, &cfg).unwrap());
        prop_assert_eq!(&dy.0.data()[..keep], &dy.1.data()[..keep]);
    }

    #[test]
    fn lightconv_commutes_with_permutations_inside_a_group(heads in 1usize..4, per in 2usize..4, n in 1usize..7, seed in any::<u64>(), g in any::<prop::sample::Index>()) {
        let d = heads * per;
        let cfg = ConvConfig::new(d, heads, 3, Padding::Centered).unwrap();
        let kernel = ConvKernel::random(heads, 3, &mut Rng::new(seed));
        let x = tensor(&[1, n, d], seed ^ 3, 1.0);
        // Reverse the channels of one sharing group.
        let group = g.index(heads);
        let perm: Vec<usize> = (0..d)
            .map(|c| if c / per == group { group * per + (per - 1 - c % per) } else { c })
            .collect();
        let permute = |t: &Tensor| {
            Tensor::from_fn(t.shape(), |i| t.data()[i - i % d + perm[i % d]])
        };
        let a = permute(&lightconv_values(&x, &kernel, &cfg).unwrap());
        let b = lightconv_values(&permute(&x), &kernel, &cfg).unwrap();
        prop_assert_eq!(a.data(), b.data());
    }

    #[test]
    fn predicted_kernels_depend_only_on_their_position((d, heads) in channels_heads(), k in 1usize..6, n in 2usize..7, seed in any::<u64>(), j in any::<prop::sample::Index>()) {
        let pred = DynamicKernelPredictor::random(heads, k, d, &mut Rng::new(seed));
        let x = tensor(&[1, n, d], seed ^ 4, 1.0);
        let j = j.index(n);
        let mut y = x.clone();
        y.data_mut()[j * d..(j + 1) * d].iter_mut().for_each(|v| *v -= 2.0);
        let a = predict_kernels_values(&x, pred.weights()).unwrap();
        let b = predict_kernels_values(&y, pred.weights()).unwrap();
        let per = heads * k;
        for i in (0..n).filter(|&i| i != j) {
            prop_assert_eq!(&a.data()[i * per..(i + 1) * per], &b.data()[i * per..(i + 1) * per]);
        }
        let soft = normalize_kernel_values(&a, NormalizerConfig::new(NormalizerKind::Softmax));
        for row in soft.data().chunks(k) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unmasked_attention_is_permutation_equivariant((d, heads) in channels_heads(), n in 1usize..7, seed in any::<u64>(), shift in 0usize..7) {
        let (q, k, v) = (tensor(&[n, d], seed, 1.0), tensor(&[n, d], seed ^ 5, 1.0), tensor(&[n, d], seed ^ 6, 1.0));
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let rows = |t: &Tensor| Tensor::from_fn(t.shape(), |i| t.data()[perm[i / d] * d + i % d]);
        let a = rows(&attention_context_values(&q, &k, &v, heads).unwrap());
        let b = attention_context_values(&rows(&q), &rows(&k), &rows(&v), heads).unwrap();
        prop_assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    }

    #[test]
    fn cost_counts_scale_with_length(n in 1u64..100_000, d in 1u64..2048, heads in 1u64..32, k in 1u64..64) {
        prop_assert_eq!(count_ops_attention(2 * n, d, heads), 4 * count_ops_attention(n, d, heads));
        prop_assert_eq!(count_ops_dynamic(2 * n, d, heads, k), 2 * count_ops_dynamic(n, d, heads, k));
        let c = count_params(d, k, heads);
        prop_assert_eq!((c.non_separable, c.depthwise, c.shared), (d * d * k, d * k, heads * k));
    }

    #[test]
    fn clipping_keeps_direction(n in 1usize..20, seed in any::<u64>(), max_norm in 1e-3f64..10.0) {
        let original = vec![tensor(&[n], seed, 5.0), tensor(&[2, n], seed ^ 7, 5.0)];
        let mut clipped = original.clone();
        let before = clip_gradients(&mut clipped, max_norm);
        let scale = if before > max_norm { max_norm / before } else { 1.0 };
        prop_assert!(scale > 0.0);
        for (a, b) in original.iter().zip(&clipped) {
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x * scale - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
        let after = convseq::train::optim::global_norm(&clipped);
        prop_assert!(after <= max_norm * (1.0 + 1e-12));
    }

    #[test]
    fn learning_rate_is_positive_and_continuous(warmup in 1.0f64..20_000.0, period in 1.0f64..50_000.0, inverse in any::<bool>(), t in 0.0f64..1e6) {
        let s = ScheduleSpec {
            kind: if inverse { ScheduleKind::InverseSqrt } else { ScheduleKind::CosineWarmup },
            lr_min: 1e-7,
            lr_max: 1e-3,
            warmup,
            period,
        };
        prop_assert!(s.lr_at(t) > 0.0);
        let gap = (s.lr_at(warmup) - s.lr_at(warmup - 1e-9 * warmup)).abs();
        prop_assert!(gap <= 1e-12);
    }

    #[test]
    fn tasks_are_deterministic_and_length_preserving(seed in any::<u64>(), kind in prop::sample::select(vec![TaskKind::Copy, TaskKind::Reverse, TaskKind::Sort])) {
        let task = TaskSpec { kind, ..TaskSpec::copy(12, 1, 9) };
        let (mut a, mut b) = (Rng::new(seed), Rng::new(seed));
        for _ in 0..8 {
            let (src, tgt) = task.sample(&mut a);
            prop_assert_eq!(src.len(), tgt.len());
            prop_assert!(src.iter().all(|&t| (3..12).contains(&t)));
            prop_assert_eq!((src, tgt), task.sample(&mut b));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn checkpoints_round_trip(mech in prop::sample::select(Mechanism::ALL.to_vec()), seed in any::<u64>(), glu in any::<bool>()) {
        let mut cfg = ModelConfig::tiny(mech, 1, 8, 2, 9);
        cfg.use_glu = glu;
        let model = Model::new(cfg, seed).unwrap();
        let bytes = checkpoint::to_bytes(&model);
        let back = checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.config(), model.config());
        prop_assert_eq!(checkpoint::to_bytes(&back), bytes);
    }
}
