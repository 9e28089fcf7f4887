use std::fs;
use std::io::Write;
use std::path::Path;

use convseq::ablation::{ablation_csv, ablation_grid, run_ablation};
use convseq::bench::run_complexity_sweep;
use convseq::checks::{run_checks, MODULES};
use convseq::conv::count_params;
use convseq::model::{checkpoint, BeamConfig, Mechanism};
use convseq::train::{format_log, train, TrainConfig, TrainStatus};
use convseq::{Error, Result};

use crate::args::{
    AblateArgs, BenchArgs, Cli, Command, DecodeArgs, GradcheckArgs, ModelArgs, OptimArgs, ParamsArgs, TaskArgs,
    TrainArgs,
};
use crate::{NUMERIC, USAGE};

/// Window, in steps, of the training-loss trend warning.
const TREND_WINDOW: usize = 200;

pub fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Train(a) => train_cmd(a),
        Command::Decode(a) => decode_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Params(a) => params_cmd(a),
        Command::Ablate(a) => ablate_cmd(a),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

/// Copy-task defaults with every given flag applied on top.
fn build_config(seed: u64, m: &ModelArgs, t: &TaskArgs, o: &OptimArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::copy_task(m.mechanism.unwrap_or(Mechanism::LightConv), seed);
    let mc = &mut cfg.model;
    if let Some(l) = m.layers {
        mc.encoder_layers = l;
        mc.decoder_layers = l;
    }
    if let Some(l) = m.encoder_layers {
        mc.encoder_layers = l;
    }
    if let Some(l) = m.decoder_layers {
        mc.decoder_layers = l;
    }
    if let Some(ks) = &m.kernels {
        mc.encoder_kernels = ks.clone();
        mc.decoder_kernels = ks.clone();
    } else {
        mc.encoder_kernels = convseq::model::default_kernel_schedule(mc.encoder_layers);
        mc.decoder_kernels = convseq::model::default_kernel_schedule(mc.decoder_layers);
    }
    if let Some(ks) = &m.encoder_kernels {
        mc.encoder_kernels = ks.clone();
    }
    if let Some(ks) = &m.decoder_kernels {
        mc.decoder_kernels = ks.clone();
    }
    set(&mut mc.d, m.d);
    set(&mut mc.d_ff, m.d_ff);
    set(&mut mc.heads, m.heads);
    set(&mut mc.use_glu, m.glu);
    set(&mut mc.dropconnect_p, m.dropconnect);
    set(&mut mc.dropout_p, m.dropout);
    set(&mut mc.normalizer, m.normalizer);
    set(&mut mc.windowed_attention, m.windowed_attention);
    set(&mut mc.max_positions, m.max_positions);

    set(&mut cfg.task.kind, t.task);
    if let Some(v) = t.vocab {
        cfg.task.vocab = v;
        cfg.model.src_vocab = v;
        cfg.model.tgt_vocab = v;
    }
    set(&mut cfg.task.min_len, t.min_len);
    set(&mut cfg.task.max_len, t.max_len);
    set(&mut cfg.task.batch_size, t.batch_size);
    set(&mut cfg.task.heldout, t.heldout);

    if let Some(steps) = o.steps {
        cfg.steps = steps;
        let warmup = o.warmup.unwrap_or(cfg.schedule.warmup).min(steps as f64);
        cfg.schedule.period = (steps as f64 - warmup).max(1.0);
    }
    set(&mut cfg.schedule.kind, o.schedule);
    set(&mut cfg.schedule.lr_min, o.lr_min);
    set(&mut cfg.schedule.lr_max, o.lr_max);
    set(&mut cfg.schedule.warmup, o.warmup);
    set(&mut cfg.schedule.period, o.period);
    set(&mut cfg.optimizer.kind, o.optimizer);
    set(&mut cfg.optimizer.momentum, o.momentum);
    if o.clip_norm.is_some() {
        cfg.optimizer.clip_norm = o.clip_norm;
    }
    set(&mut cfg.label_smoothing, o.label_smoothing);
    set(&mut cfg.eval_every, o.eval_every);
    if o.target_accuracy.is_some() {
        cfg.target_accuracy = o.target_accuracy;
    }
    set(&mut cfg.accumulate, o.accumulate);
    cfg.validate()?;
    Ok(cfg)
}

fn set<T>(field: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *field = v;
    }
}

/// Mean training loss per consecutive window; warns when a window is
/// higher than the one before it.
fn trend_warnings(losses: &[f64]) -> Vec<String> {
    let means: Vec<f64> = losses
        .chunks_exact(TREND_WINDOW)
        .map(|w| w.iter().sum::<f64>() / w.len() as f64)
        .collect();
    means
        .windows(2)
        .enumerate()
        .filter(|(_, p)| p[1] > p[0])
        .map(|(i, p)| {
            format!(
                "warning: mean training loss rose from {:.4} to {:.4} over steps {}..{}",
                p[0],
                p[1],
                (i + 1) * TREND_WINDOW + 1,
                (i + 2) * TREND_WINDOW
            )
        })
        .collect()
}

fn train_cmd(a: TrainArgs) -> Result<u8> {
    let cfg = build_config(a.common.seed, &a.model, &a.task, &a.optim)?;
    let report = train(&cfg)?;
    emit(a.log.as_deref(), &format_log(&report.log))?;
    for w in trend_warnings(&report.train_losses) {
        eprintln!("{w}");
    }
    if let Some(path) = &a.checkpoint {
        checkpoint::save(&report.model, path)?;
    }
    eprintln!(
        "{} after {} steps, held-out token accuracy {:.4}",
        match report.status {
            TrainStatus::Completed => "completed".to_string(),
            TrainStatus::ReachedTarget { step } => format!("reached target at step {step}"),
            TrainStatus::Diverged { step } => format!("diverged at step {step}"),
        },
        report.steps_run,
        report.final_accuracy
    );
    Ok(match report.status {
        TrainStatus::Diverged { .. } => NUMERIC,
        _ => 0,
    })
}

fn decode_cmd(a: DecodeArgs) -> Result<u8> {
    let model = checkpoint::load(&a.checkpoint)?;
    let src = a
        .input
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::Config(format!("bad token id {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cfg = BeamConfig::new(a.beam, a.max_len.unwrap_or(2 * src.len() + 10));
    cfg.alpha = a.alpha;
    let hyp = if a.greedy {
        model.greedy_decode(&src, &cfg)?
    } else {
        model.beam_decode(&src, &cfg)?
    };
    let ids: Vec<String> = hyp.tokens.iter().map(|t| t.to_string()).collect();
    println!("{}", ids.join(" "));
    eprintln!("log_prob {:.6} score {:.6}", hyp.log_prob, hyp.score);
    Ok(0)
}

fn bench_cmd(a: BenchArgs) -> Result<u8> {
    let report = run_complexity_sweep(&a.n, a.d, a.heads, a.k, a.repeats, a.common.seed)?;
    emit(a.out.as_deref(), &report.to_csv())?;
    Ok(0)
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<u8> {
    let modules: Vec<&str> = if a.all {
        MODULES.to_vec()
    } else if a.module.is_empty() {
        eprintln!("error: pass --all or --module <name> (one of {})", MODULES.join(", "));
        return Ok(USAGE);
    } else {
        a.module.iter().map(String::as_str).collect()
    };
    let seeds: Vec<u64> = (a.common.seed..a.common.seed + a.seeds.max(1)).collect();
    let outcomes = run_checks(&modules, &seeds)?;
    for o in &outcomes {
        println!("{}", o.line());
    }
    let failed = outcomes.iter().filter(|o| !o.report.passed).count();
    eprintln!("{} checks, {} failed", outcomes.len(), failed);
    Ok(if failed == 0 { 0 } else { NUMERIC })
}

fn params_cmd(a: ParamsArgs) -> Result<u8> {
    let c = count_params(a.d, a.k, a.heads);
    println!("{} {} {}", c.non_separable, c.depthwise, c.shared);
    Ok(0)
}

fn ablate_cmd(a: AblateArgs) -> Result<u8> {
    let template = build_config(a.common.seed, &a.model, &a.task, &a.optim)?;
    let grid = ablation_grid(&template.model, a.kernel, a.model.dropconnect.unwrap_or(0.1));
    let rows = run_ablation(&grid, &template)?;
    emit(a.out.as_deref(), &ablation_csv(&rows))?;
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trend_warns_only_on_rising_windows() {
        let mut losses = vec![2.0; TREND_WINDOW];
        losses.extend(vec![1.0; TREND_WINDOW]);
        assert!(trend_warnings(&losses).is_empty());
        losses.extend(vec![1.5; TREND_WINDOW]);
        let w = trend_warnings(&losses);
        assert_eq!(w.len(), 1);
        assert!(w[0].contains("401..600"));
    }

    #[test]
    fn steps_rescale_the_cosine_period() {
        let o = OptimArgs {
            steps: Some(300),
            warmup: Some(50.0),
            ..Default::default()
        };
        let cfg = build_config(1, &ModelArgs::default(), &TaskArgs::default(), &o).unwrap();
        assert_eq!(cfg.steps, 300);
        assert_eq!(cfg.schedule.period, 250.0);
    }
}
