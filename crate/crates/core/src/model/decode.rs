//! Greedy and beam search over any step-wise scorer.

use std::cmp::Ordering;

use super::loss::argmax;
use super::{Model, TokenBatch, BOS, EOS};
use crate::error::{Error, Result};
use crate::tensor::{log_softmax_last, Tensor};

/// Anything that scores the next token given a cloneable prefix state.
pub trait StepDecoder {
    type State: Clone;

    /// Consume `token` and return log-probabilities of the next token.
    fn step(&self, state: &mut Self::State, token: usize) -> Result<Vec<f64>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamConfig {
    pub beam: usize,
    pub max_len: usize,
    /// Exponent of the length penalty `((5 + len) / 6)^α`.
    pub alpha: f64,
    pub bos: usize,
    /// Token that finishes a hypothesis; `None` decodes exactly `max_len` tokens.
    pub eos: Option<usize>,
    /// Tokens never emitted.
    pub banned: Vec<usize>,
}

impl BeamConfig {
    pub fn new(beam: usize, max_len: usize) -> Self {
        BeamConfig {
            beam,
            max_len,
            alpha: 1.0,
            bos: BOS,
            eos: Some(EOS),
            banned: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens, including a final eos if one was produced.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// `log_prob / ((5 + len) / 6)^α`.
    pub score: f64,
}

pub fn length_penalty(len: usize, alpha: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(alpha)
}

fn finish(tokens: Vec<usize>, log_prob: f64, alpha: f64) -> Hypothesis {
    let score = log_prob / length_penalty(tokens.len(), alpha);
    Hypothesis {
        tokens,
        log_prob,
        score,
    }
}

fn by_score_desc(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

struct Live<S> {
    tokens: Vec<usize>,
    log_prob: f64,
    state: S,
    next: Vec<f64>,
}

/// Beam search: keep the `beam` best prefixes by total log-probability,
/// retire those that emit eos, and return the best finished hypothesis by
/// length-normalized score. Hypotheses still alive at `max_len` are
/// finished by truncation.
pub fn beam_search<D: StepDecoder>(dec: &D, init: D::State, cfg: &BeamConfig) -> Result<Hypothesis> {
    if cfg.beam == 0 {
        return Err(Error::config("beam must be at least 1"));
    }
    let mut state = init;
    let next = dec.step(&mut state, cfg.bos)?;
    let mut live = vec![Live {
        tokens: Vec::new(),
        log_prob: 0.0,
        state,
        next,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for len in 1..=cfg.max_len {
        let mut cand: Vec<(usize, usize, f64)> = Vec::new();
        for (h, hyp) in live.iter().enumerate() {
            for (tok, &lp) in hyp.next.iter().enumerate() {
                if !cfg.banned.contains(&tok) {
                    cand.push((h, tok, hyp.log_prob + lp));
                }
            }
        }
        cand.sort_by(|a, b| by_score_desc(a.2, b.2));
        cand.truncate(cfg.beam);
        let mut next_live = Vec::with_capacity(cand.len());
        for (h, tok, lp) in cand {
            let mut tokens = live[h].tokens.clone();
            tokens.push(tok);
            if Some(tok) == cfg.eos || len == cfg.max_len {
                finished.push(finish(tokens, lp, cfg.alpha));
            } else {
                let mut state = live[h].state.clone();
                let next = dec.step(&mut state, tok)?;
                next_live.push(Live {
                    tokens,
                    log_prob: lp,
                    state,
                    next,
                });
            }
        }
        live = next_live;
        if live.is_empty() || finished.len() >= cfg.beam {
            break;
        }
    }
    if finished.is_empty() {
        finished.extend(live.into_iter().map(|h| finish(h.tokens, h.log_prob, cfg.alpha)));
    }
    finished.sort_by(|a, b| by_score_desc(a.score, b.score));
    finished
        .into_iter()
        .next()
        .ok_or_else(|| Error::contract("beam search produced no hypothesis"))
}

/// Arg-max decoding until eos or `max_len` tokens.
pub fn greedy_search<D: StepDecoder>(dec: &D, init: D::State, cfg: &BeamConfig) -> Result<Hypothesis> {
    let mut state = init;
    let mut next = dec.step(&mut state, cfg.bos)?;
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    while tokens.len() < cfg.max_len {
        let mut masked = next.clone();
        for &b in &cfg.banned {
            if let Some(x) = masked.get_mut(b) {
                *x = f64::NEG_INFINITY;
            }
        }
        let tok = argmax(&masked);
        log_prob += next[tok];
        tokens.push(tok);
        if Some(tok) == cfg.eos {
            break;
        }
        next = dec.step(&mut state, tok)?;
    }
    Ok(finish(tokens, log_prob, cfg.alpha))
}

impl StepDecoder for Model {
    type State = super::IncrementalState;

    fn step(&self, state: &mut Self::State, token: usize) -> Result<Vec<f64>> {
        let logits = self.decode_step(state, &[token])?;
        Ok(log_softmax_last(&logits).into_data())
    }
}

impl Model {
    pub fn beam_decode(&self, src: &[usize], cfg: &BeamConfig) -> Result<Hypothesis> {
        let state = self.start_decoding(&TokenBatch::single(src)?)?;
        beam_search(self, state, cfg)
    }

    pub fn greedy_decode(&self, src: &[usize], cfg: &BeamConfig) -> Result<Hypothesis> {
        let state = self.start_decoding(&TokenBatch::single(src)?)?;
        greedy_search(self, state, cfg)
    }

    /// Batched arg-max decoding of exactly `steps` tokens per source.
    pub fn greedy_batch(&self, src: &TokenBatch, steps: usize) -> Result<Vec<Vec<usize>>> {
        let mut state = self.start_decoding(src)?;
        let mut tokens = vec![BOS; src.batch];
        let mut out = vec![Vec::with_capacity(steps); src.batch];
        for _ in 0..steps {
            let logits = self.decode_step(&mut state, &tokens)?;
            let v = self.config.tgt_vocab;
            for (b, row) in logits.data().chunks(v).enumerate() {
                tokens[b] = argmax(row);
                out[b].push(tokens[b]);
            }
        }
        Ok(out)
    }

    /// `log p(tokens | src)` from one full forward pass with teacher forcing.
    pub fn sequence_log_prob(&self, src: &[usize], tokens: &[usize]) -> Result<f64> {
        if tokens.is_empty() {
            return Ok(0.0);
        }
        let mut input = vec![BOS];
        input.extend_from_slice(&tokens[..tokens.len() - 1]);
        let logits = self.logits(&TokenBatch::single(src)?, &TokenBatch::single(&input)?)?;
        let lp = log_softmax_last(&logits);
        let v = self.config.tgt_vocab;
        Ok(tokens.iter().enumerate().map(|(t, &tok)| lp.data()[t * v + tok]).sum())
    }
}

/// Decoder whose next-token distribution depends only on the previous token.
#[derive(Clone, Debug)]
pub struct TableDecoder {
    /// Row `prev` holds log-probabilities of the next token.
    pub table: Tensor,
}

impl StepDecoder for TableDecoder {
    type State = ();

    fn step(&self, _: &mut (), token: usize) -> Result<Vec<f64>> {
        let v = self.table.shape()[1];
        if token >= self.table.shape()[0] {
            return Err(Error::contract(format!("token {token} outside the table")));
        }
        Ok(self.table.data()[token * v..(token + 1) * v].to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[[f64; 3]]) -> TableDecoder {
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().map(|p| p.ln())).collect();
        TableDecoder {
            table: Tensor::new(&[rows.len(), 3], data).unwrap(),
        }
    }

    #[test]
    fn beam_finds_what_greedy_misses() {
        // From 0: token 1 looks best (0.5) but leads to a flat 1/3 row;
        // token 2 (0.4) leads to a confident 0.9.
        let dec = table(&[
            [0.1, 0.5, 0.4],
            [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            [0.9, 0.05, 0.05],
        ]);
        let mut cfg = BeamConfig::new(1, 2);
        cfg.bos = 0;
        cfg.eos = None;
        cfg.alpha = 0.0;
        let greedy = greedy_search(&dec, (), &cfg).unwrap();
        assert_eq!(greedy.tokens, vec![1, 0]);
        let b1 = beam_search(&dec, (), &cfg).unwrap();
        assert_eq!(b1.tokens, greedy.tokens);
        cfg.beam = 3;
        let b3 = beam_search(&dec, (), &cfg).unwrap();
        assert_eq!(b3.tokens, vec![2, 0]);
        assert!((b3.log_prob - (0.4f64 * 0.9).ln()).abs() < 1e-12);
    }

    #[test]
    fn eos_finishes_and_length_penalty_applies() {
        let dec = table(&[[0.2, 0.3, 0.5], [0.1, 0.1, 0.8], [0.6, 0.2, 0.2]]);
        let mut cfg = BeamConfig::new(2, 5);
        cfg.bos = 0;
        cfg.eos = Some(1);
        cfg.alpha = 0.0;
        let h = beam_search(&dec, (), &cfg).unwrap();
        assert_eq!(h.score, h.log_prob);
        assert_eq!(*h.tokens.last().unwrap(), 1);
        assert!((length_penalty(1, 1.0) - 1.0).abs() < 1e-15);
        assert!((length_penalty(7, 0.5) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_beam_is_rejected() {
        let dec = table(&[[0.2, 0.3, 0.5]]);
        assert!(beam_search(&dec, (), &BeamConfig::new(0, 2)).is_err());
    }
}
