//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Run with `cargo test -p convseq-cli --test acceptance`.

use std::process::{Command, ExitCode};
use std::time::Instant;

use convseq::bench::{run_complexity_sweep, BenchMechanism};
use convseq::checks::{run_checks, MODULES, SEEDS};
use convseq::conv::{
    lightconv_band_matrix, lightconv_values, normalize_kernel_values, ConvConfig, ConvKernel, NormalizerKind,
    Padding, NORMALIZER_EPSILON,
};
use convseq::dynamic::{dynamic_conv_band_matrix, dynamic_conv_values, DynamicKernelPredictor};
use convseq::model::decode::{beam_search, TableDecoder};
use convseq::model::{BeamConfig, Mechanism, Model, ModelConfig, TokenBatch, BOS};
use convseq::train::{train, ScheduleSpec, TrainConfig};
use convseq::{Rng, Tensor};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn convseq(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_convseq"))
        .args(args)
        .output()
        .expect("run convseq")
}

fn parameter_counts() -> Outcome {
    let out = convseq(&["params", "--d", "1024", "--k", "7", "--heads", "16"]);
    let stdout = String::from_utf8_lossy(&out.stdout).trim().to_string();
    ensure(
        out.status.success() && stdout == "7340032 7168 112",
        format!("printed {stdout:?}"),
    )
}

fn gradients() -> Outcome {
    let outcomes = run_checks(&MODULES, &SEEDS).map_err(|e| e.to_string())?;
    let failed: Vec<String> = outcomes.iter().filter(|o| !o.report.passed).map(|o| o.line()).collect();
    let worst = outcomes.iter().map(|o| o.report.max_rel_error).fold(0.0, f64::max);
    ensure(
        failed.is_empty(),
        format!(
            "{} checks, worst max_rel_error {worst:.2e}{}",
            outcomes.len(),
            failed.iter().map(|l| format!("\n    {l}")).collect::<String>()
        ),
    )
}

fn band_matrix() -> Outcome {
    let mut rng = Rng::new(3);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let heads = [1, 2, 4][rng.below(0, 3)];
        let d = heads * rng.below(1, 4);
        let k = 2 * rng.below(0, 4) + 1;
        let (b, n) = (rng.below(1, 3), rng.below(1, 12));
        let padding = if rng.bernoulli(0.5) { Padding::Causal } else { Padding::Centered };
        let kind = NormalizerKind::ALL[rng.below(0, 10)];
        let cfg = ConvConfig::new(d, heads, k, padding)
            .map_err(|e| e.to_string())?
            .with_normalizer(kind);
        let x = Tensor::from_fn(&[b, n, d], |_| rng.uniform_range(-1.0, 1.0));
        let kernel = ConvKernel::random(heads, k, &mut rng);
        let light = lightconv_values(&x, &kernel, &cfg)
            .and_then(|a| a.max_abs_diff(&lightconv_band_matrix(&x, &kernel, &cfg)?))
            .map_err(|e| e.to_string())?;
        let pred = DynamicKernelPredictor::random(heads, k, d, &mut rng);
        let dynamic = dynamic_conv_values(&x, &pred, &cfg)
            .and_then(|a| a.max_abs_diff(&dynamic_conv_band_matrix(&x, &pred, &cfg)?))
            .map_err(|e| e.to_string())?;
        worst = worst.max(light).max(dynamic);
    }
    ensure(worst <= 1e-10, format!("20 configs, max abs diff {worst:.2e}"))
}

fn normalizers() -> Outcome {
    let mut rng = Rng::new(4);
    let (heads, k) = (4, 7);
    let w = Tensor::from_fn(&[heads, k], |_| rng.uniform_range(-3.0, 3.0));
    let mut problems = Vec::new();
    for kind in NormalizerKind::ALL {
        let cfg = convseq::conv::NormalizerConfig::new(kind);
        if cfg.epsilon != 1e-6 {
            problems.push(format!("{kind} epsilon {}", cfg.epsilon));
        }
        let out = normalize_kernel_values(&w, cfg);
        for row in out.data().chunks(k) {
            let l1: f64 = row.iter().map(|v| v.abs()).sum();
            let l2: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ok = match kind {
                NormalizerKind::Softmax => (row.iter().sum::<f64>() - 1.0).abs() <= 1e-12,
                NormalizerKind::L1 | NormalizerKind::AbsL1 => l1 <= 1.0 + NORMALIZER_EPSILON,
                NormalizerKind::L2 | NormalizerKind::AbsL2 => l2 <= 1.0 + NORMALIZER_EPSILON,
                NormalizerKind::Sigmoid => row.iter().all(|&v| v > 0.0 && v < 1.0),
                _ => row.iter().all(|v| v.is_finite()),
            };
            if !ok {
                problems.push(format!("{kind} row {row:?}"));
            }
        }
    }
    ensure(
        problems.is_empty() && NormalizerKind::ALL.len() == 10,
        if problems.is_empty() {
            "10 kinds, epsilon 1e-6".to_string()
        } else {
            problems.join("; ")
        },
    )
}

fn complexity() -> Outcome {
    let ns = [256, 512, 1024, 2048];
    let report = run_complexity_sweep(&ns, 256, 16, 31, 11, 1).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut parts = Vec::new();
    for mech in BenchMechanism::ALL {
        let analytic = report.doubling_ratios(mech, |r| r.context_macs as f64);
        let wall = report.doubling_ratios(mech, |r| r.wall_ns_median);
        let expected = if mech == BenchMechanism::Attention { 4.0 } else { 2.0 };
        ok &= analytic.len() == 3 && analytic.iter().all(|&(_, r)| r == expected);
        ok &= wall.len() == 3
            && wall.iter().all(|&(_, r)| {
                if mech == BenchMechanism::Attention {
                    r >= 3.0
                } else {
                    r > 0.0 && r <= 2.6
                }
            });
        let fmt = |v: &[(usize, f64)]| v.iter().map(|(_, r)| format!("{r:.2}")).collect::<Vec<_>>().join("/");
        parts.push(format!("{mech} macs {} wall {}", fmt(&analytic), fmt(&wall)));
    }
    ensure(ok, parts.join("; "))
}

fn model_variants() -> Vec<(String, ModelConfig)> {
    let mut out: Vec<(String, ModelConfig)> = Mechanism::ALL
        .iter()
        .map(|&m| (m.to_string(), ModelConfig::tiny(m, 2, 8, 2, 11)))
        .collect();
    let mut windowed = ModelConfig::tiny(Mechanism::SelfAttention, 2, 8, 2, 11);
    windowed.windowed_attention = true;
    out.push(("self_attention(windowed)".into(), windowed));
    out
}

fn causality() -> Outcome {
    let mut rng = Rng::new(6);
    let src = TokenBatch::from_sequences(&[vec![4, 5, 6, 7, 8]]).map_err(|e| e.to_string())?;
    let m = 10;
    let mut failures = Vec::new();
    for (name, cfg) in model_variants() {
        let model = Model::new(cfg, 6).map_err(|e| e.to_string())?;
        let mut tgt: Vec<usize> = (0..m).map(|_| rng.below(3, 11)).collect();
        tgt[0] = BOS;
        let base = model
            .logits(&src, &TokenBatch::single(&tgt).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        for p in 1..m {
            let mut changed = tgt.clone();
            changed[p] = 3 + (tgt[p] - 3 + 1 + rng.below(0, 7)) % 8;
            let out = model
                .logits(&src, &TokenBatch::single(&changed).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            let v = 11;
            if base.data()[..p * v] != out.data()[..p * v] {
                failures.push(format!("{name} position {p}"));
            }
        }
    }
    // The causal kernels on their own, perturbing raw inputs.
    let cfg = ConvConfig::new(8, 2, 5, Padding::Causal).map_err(|e| e.to_string())?;
    let kernel = ConvKernel::random(2, 5, &mut rng);
    let pred = DynamicKernelPredictor::random(2, 5, 8, &mut rng);
    let x = Tensor::from_fn(&[1, m, 8], |_| rng.uniform_range(-1.0, 1.0));
    for p in 1..m {
        let mut y = x.clone();
        for c in 0..8 {
            y.data_mut()[p * 8 + c] += 1.0;
        }
        let same = |a: Tensor, b: Tensor| a.data()[..p * 8] == b.data()[..p * 8];
        let l = same(
            lightconv_values(&x, &kernel, &cfg).unwrap(),
            lightconv_values(&y, &kernel, &cfg).unwrap(),
        );
        let d = same(
            dynamic_conv_values(&x, &pred, &cfg).unwrap(),
            dynamic_conv_values(&y, &pred, &cfg).unwrap(),
        );
        if !(l && d) {
            failures.push(format!("causal kernel position {p}"));
        }
    }
    ensure(
        failures.is_empty(),
        if failures.is_empty() {
            "6 decoder variants and 2 kernels, every future position".into()
        } else {
            failures.join(", ")
        },
    )
}

fn incremental() -> Outcome {
    let mut rng = Rng::new(7);
    let mut worst = 0.0f64;
    for (_, cfg) in model_variants() {
        let model = Model::new(cfg, 7).map_err(|e| e.to_string())?;
        let seqs = |len: usize, rng: &mut Rng| -> Vec<usize> { (0..len).map(|_| rng.below(3, 11)).collect() };
        let src = TokenBatch::from_sequences(&[seqs(9, &mut rng), seqs(4, &mut rng)]).map_err(|e| e.to_string())?;
        let mut rows = [seqs(16, &mut rng), seqs(16, &mut rng)];
        for r in &mut rows {
            r[0] = BOS;
        }
        let tgt = TokenBatch::from_sequences(&rows).map_err(|e| e.to_string())?;
        let full = model.logits(&src, &tgt).map_err(|e| e.to_string())?;
        let mut state = model.start_decoding(&src).map_err(|e| e.to_string())?;
        for t in 0..16 {
            let step = model
                .decode_step(&mut state, &[rows[0][t], rows[1][t]])
                .map_err(|e| e.to_string())?;
            for b in 0..2 {
                for c in 0..11 {
                    let f = full.get(&[b, t, c]).unwrap();
                    let s = step.get(&[b, c]).unwrap();
                    worst = worst.max((f - s).abs());
                }
            }
        }
    }
    ensure(worst <= 1e-10, format!("6 variants, length 16, max abs diff {worst:.2e}"))
}

fn convergence() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for mech in [Mechanism::LightConv, Mechanism::DynamicConv, Mechanism::SelfAttention] {
        let mut cfg = TrainConfig::copy_task(mech, 1);
        cfg.target_accuracy = Some(0.99);
        let report = train(&cfg).map_err(|e| e.to_string())?;
        let pass = report.final_accuracy >= 0.99 && report.steps_run <= 5000 && report.wall_time.as_secs() < 15 * 60;
        ok &= pass;
        parts.push(format!(
            "{mech} acc {:.4} at step {} in {:.0}s",
            report.final_accuracy,
            report.steps_run,
            report.wall_time.as_secs_f64()
        ));
    }
    ensure(ok, parts.join("; "))
}

fn schedule() -> Outcome {
    let s = ScheduleSpec::cosine_default(40_000.0);
    let (start, peak) = (s.lr_at(0.0), s.lr_at(10_000.0));
    let left = s.lr_at(10_000.0 - 1e-6);
    let right = s.lr_at(10_000.0 + 1e-6);
    let gap = (left - peak).abs().max((right - peak).abs());
    ensure(
        start == 1e-7 && peak == 1e-3 && gap <= 1e-12,
        format!("lr(0)={start:e} lr(10000)={peak:e} boundary gap {gap:.1e}"),
    )
}

fn beam_oracle() -> Outcome {
    let mut rng = Rng::new(10);
    let mut cases = 0;
    let mut cfg = BeamConfig::new(3, 2);
    cfg.alpha = 0.0;
    cfg.eos = None;
    let all: Vec<Vec<usize>> = (0..9).map(|i| vec![i / 3, i % 3]).collect();
    let best_of = |score: &dyn Fn(&[usize]) -> f64| {
        all.iter()
            .max_by(|a, b| score(a).total_cmp(&score(b)))
            .cloned()
            .unwrap()
    };
    for seed in 0..5 {
        let model = Model::new(ModelConfig::tiny(Mechanism::LightConv, 1, 8, 2, 3), seed).map_err(|e| e.to_string())?;
        let src = [1, 2, 0, 1];
        let hyp = model.beam_decode(&src, &cfg).map_err(|e| e.to_string())?;
        let brute = best_of(&|t| model.sequence_log_prob(&src, t).unwrap());
        if hyp.tokens != brute {
            return Err(format!("model seed {seed}: beam {:?} brute force {brute:?}", hyp.tokens));
        }
        cases += 1;
    }
    for case in 0..20 {
        let logits = Tensor::from_fn(&[3, 3], |_| rng.uniform_range(-3.0, 3.0));
        let table = convseq::tensor::log_softmax_last(&logits);
        let dec = TableDecoder { table: table.clone() };
        let mut tcfg = cfg.clone();
        tcfg.bos = 0;
        let hyp = beam_search(&dec, (), &tcfg).map_err(|e| e.to_string())?;
        let lp = |t: &[usize]| table.data()[t[0]] + table.data()[t[0] * 3 + t[1]];
        let brute = best_of(&lp);
        if hyp.tokens != brute {
            return Err(format!("table {case}: beam {:?} brute force {brute:?}", hyp.tokens));
        }
        cases += 1;
    }
    Ok(format!("{cases} toy models, all 9 sequences enumerated"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |tag: &str| -> Result<(Vec<u8>, Vec<u8>), String> {
        let log = dir.path().join(format!("{tag}.csv"));
        let ckpt = dir.path().join(format!("{tag}.ckpt"));
        let out = convseq(&[
            "train",
            "--mechanism",
            "dynamicconv",
            "--steps",
            "200",
            "--warmup",
            "50",
            "--eval-every",
            "50",
            "--dropout",
            "0.1",
            "--dropconnect",
            "0.1",
            "--seed",
            "11",
            "--log",
            log.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
        ]);
        if !out.status.success() {
            return Err(String::from_utf8_lossy(&out.stderr).into_owned());
        }
        Ok((std::fs::read(log).unwrap(), std::fs::read(ckpt).unwrap()))
    };
    let (log_a, ckpt_a) = run("a")?;
    let (log_b, ckpt_b) = run("b")?;
    ensure(
        log_a == log_b && ckpt_a == ckpt_b,
        format!(
            "logs identical: {}, checkpoints identical: {} ({} bytes)",
            log_a == log_b,
            ckpt_a == ckpt_b,
            ckpt_a.len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("parameter counts", parameter_counts),
        ("gradient checks", gradients),
        ("band-matrix equivalence", band_matrix),
        ("normalizer catalog", normalizers),
        ("complexity scaling", complexity),
        ("causality", causality),
        ("incremental decoding", incremental),
        ("copy-task convergence", convergence),
        ("schedule endpoints", schedule),
        ("beam-search oracle", beam_oracle),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} criterion {:>2} {name} ({secs:.1}s): {detail}", i + 1);
        failed += usize::from(outcome.is_err());
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
