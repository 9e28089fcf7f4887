use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{log_softmax_last, Tensor};

fn check(shape: &[usize], targets: &[usize], smoothing: f64, pad: usize) -> Result<(usize, usize)> {
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::config(format!("label smoothing must lie in [0, 1), got {smoothing}")));
    }
    let v = *shape.last().ok_or_else(|| Error::contract("logits need a vocabulary axis"))?;
    let rows = shape.iter().product::<usize>() / v.max(1);
    if rows != targets.len() {
        return Err(Error::contract(format!(
            "{} targets for {rows} logit rows",
            targets.len()
        )));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= v) {
        return Err(Error::contract(format!("target {t} out of range for {v} classes")));
    }
    let count = targets.iter().filter(|&&t| t != pad).count();
    if count == 0 {
        return Err(Error::contract("every target is padding"));
    }
    Ok((v, count))
}

fn row_loss(lp: &[f64], target: usize, smoothing: f64) -> f64 {
    let mean: f64 = lp.iter().sum::<f64>() / lp.len() as f64;
    -(1.0 - smoothing) * lp[target] - smoothing * mean
}

/// `(1−s)·NLL(target) + s·mean over the vocabulary of NLL`, averaged over
/// non-pad targets.
pub fn label_smoothed_nll_values(logits: &Tensor, targets: &[usize], smoothing: f64, pad: usize) -> Result<f64> {
    let (v, count) = check(logits.shape(), targets, smoothing, pad)?;
    let lp = log_softmax_last(logits);
    let total: f64 = lp
        .data()
        .chunks(v)
        .zip(targets)
        .filter(|(_, &t)| t != pad)
        .map(|(row, &t)| row_loss(row, t, smoothing))
        .sum();
    Ok(total / count as f64)
}

/// Differentiable [`label_smoothed_nll_values`] over `logits: [.., V]`.
pub fn label_smoothed_nll(g: &mut Graph, logits: Var, targets: &[usize], smoothing: f64, pad: usize) -> Result<Var> {
    let value = label_smoothed_nll_values(g.value(logits), targets, smoothing, pad)?;
    let (v, count) = check(g.shape(logits), targets, smoothing, pad)?;
    let targets = targets.to_vec();
    Ok(g.push(
        Tensor::scalar(value),
        vec![logits],
        Box::new(move |grad, _, parents| {
            let scale = grad.data()[0] / count as f64;
            let lp = log_softmax_last(parents[0]);
            let mut dz = vec![0.0; lp.len()];
            for ((row, out), &t) in lp.data().chunks(v).zip(dz.chunks_mut(v)).zip(&targets) {
                if t == pad {
                    continue;
                }
                for (o, l) in out.iter_mut().zip(row) {
                    *o = (l.exp() - smoothing / v as f64) * scale;
                }
                out[t] -= (1.0 - smoothing) * scale;
            }
            vec![Some(Tensor::new(parents[0].shape(), dz).expect("same size as logits"))]
        }),
    ))
}

/// Fraction of non-pad positions where the arg-max of `logits` hits the target.
pub fn token_accuracy(logits: &Tensor, targets: &[usize], pad: usize) -> f64 {
    let v = *logits.shape().last().unwrap_or(&1);
    let (mut hit, mut total) = (0usize, 0usize);
    for (row, &t) in logits.data().chunks(v).zip(targets) {
        if t == pad {
            continue;
        }
        total += 1;
        if argmax(row) == t {
            hit += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

/// First index of the largest entry.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}
