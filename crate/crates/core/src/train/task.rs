use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::vocab::{TokenBatch, EOS};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Copy,
    Reverse,
    Sort,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Copy => "copy",
            TaskKind::Reverse => "reverse",
            TaskKind::Sort => "sort",
        }
    }

    /// Target sequence for `source`.
    pub fn target(self, source: &[usize]) -> Vec<usize> {
        let mut t = source.to_vec();
        match self {
            TaskKind::Copy => {}
            TaskKind::Reverse => t.reverse(),
            TaskKind::Sort => t.sort_unstable(),
        }
        t
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(TaskKind::Copy),
            "reverse" => Ok(TaskKind::Reverse),
            "sort" => Ok(TaskKind::Sort),
            _ => Err(Error::config(format!("unknown task {s:?}"))),
        }
    }
}

/// Synthetic sequence transduction task over symbols `3..vocab`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub vocab: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Sequences per training batch.
    pub batch_size: usize,
    /// Size of the held-out evaluation set.
    pub heldout: usize,
}

impl TaskSpec {
    pub fn copy(vocab: usize, min_len: usize, max_len: usize) -> Self {
        TaskSpec {
            kind: TaskKind::Copy,
            vocab,
            min_len,
            max_len,
            batch_size: 32,
            heldout: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab <= EOS + 1 {
            return Err(Error::config(format!(
                "vocabulary of {} leaves no symbols after the reserved ids",
                self.vocab
            )));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::config(format!(
                "invalid length range {}..={}",
                self.min_len, self.max_len
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut Rng) -> (Vec<usize>, Vec<usize>) {
        let len = rng.below(self.min_len, self.max_len + 1);
        let src: Vec<usize> = (0..len).map(|_| rng.below(EOS + 1, self.vocab)).collect();
        let tgt = self.kind.target(&src);
        (src, tgt)
    }
}

/// Draw `count` examples and pad them into source and target batches.
pub fn generate_examples(task: &TaskSpec, count: usize, rng: &mut Rng) -> Result<(TokenBatch, TokenBatch)> {
    task.validate()?;
    let (src, tgt): (Vec<_>, Vec<_>) = (0..count).map(|_| task.sample(rng)).unzip();
    Ok((TokenBatch::from_sequences(&src)?, TokenBatch::from_sequences(&tgt)?))
}

/// One training batch of `task.batch_size` examples.
pub fn generate_batch(task: &TaskSpec, rng: &mut Rng) -> Result<(TokenBatch, TokenBatch)> {
    generate_examples(task, task.batch_size, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn targets() {
        assert_eq!(TaskKind::Copy.target(&[5, 3, 7]), vec![5, 3, 7]);
        assert_eq!(TaskKind::Reverse.target(&[5, 3, 7]), vec![7, 3, 5]);
        assert_eq!(TaskKind::Sort.target(&[5, 3, 7]), vec![3, 5, 7]);
    }

    #[test]
    fn batches_respect_the_spec_and_are_deterministic() {
        let mut task = TaskSpec::copy(20, 4, 16);
        task.kind = TaskKind::Reverse;
        let (s1, t1) = generate_batch(&task, &mut Rng::new(9)).unwrap();
        let (s2, t2) = generate_batch(&task, &mut Rng::new(9)).unwrap();
        assert_eq!((&s1, &t1), (&s2, &t2));
        assert_eq!(s1.batch, 32);
        for b in 0..s1.batch {
            let row = s1.row(b);
            assert!((4..=16).contains(&row.len()));
            assert!(row.iter().all(|&t| (3..20).contains(&t)));
            let mut rev = row.to_vec();
            rev.reverse();
            assert_eq!(t1.row(b), rev.as_slice());
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(TaskSpec::copy(3, 1, 2).validate().is_err());
        assert!(TaskSpec::copy(10, 5, 2).validate().is_err());
        assert!("shuffle".parse::<TaskKind>().is_err());
    }
}
