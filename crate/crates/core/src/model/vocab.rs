use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;

/// Token table with the reserved ids [`PAD`], [`BOS`] and [`EOS`] first.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    pub fn new<I, S>(symbols: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = ["<pad>", "<s>", "</s>"].map(String::from).to_vec();
        tokens.extend(symbols.into_iter().map(Into::into));
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::config(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocab { tokens, ids })
    }

    /// Reserved ids followed by the symbols `"3"`, `"4"`, …, `"size-1"`.
    pub fn numbered(size: usize) -> Result<Self> {
        if size < 3 {
            return Err(Error::config("a vocabulary needs at least the three reserved ids"));
        }
        Vocab::new((3..size).map(|i| i.to_string()))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace()
            .map(|t| self.id(t).ok_or_else(|| Error::contract(format!("unknown token {t:?}"))))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// A right-padded batch of token sequences, row-major `[batch, len]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    pub ids: Vec<usize>,
    pub batch: usize,
    pub len: usize,
    pub lengths: Vec<usize>,
}

impl TokenBatch {
    pub fn from_sequences(seqs: &[Vec<usize>]) -> Result<Self> {
        if seqs.is_empty() || seqs.iter().any(Vec::is_empty) {
            return Err(Error::contract("a batch needs at least one non-empty sequence"));
        }
        let len = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(seqs.len() * len);
        for s in seqs {
            ids.extend_from_slice(s);
            ids.extend(std::iter::repeat(PAD).take(len - s.len()));
        }
        Ok(TokenBatch {
            ids,
            batch: seqs.len(),
            len,
            lengths: seqs.iter().map(Vec::len).collect(),
        })
    }

    pub fn single(seq: &[usize]) -> Result<Self> {
        TokenBatch::from_sequences(&[seq.to_vec()])
    }

    pub fn row(&self, b: usize) -> &[usize] {
        &self.ids[b * self.len..b * self.len + self.lengths[b]]
    }

    /// `true` marks padded positions.
    pub fn padding_mask(&self) -> Vec<Vec<bool>> {
        self.lengths.iter().map(|&l| (0..self.len).map(|i| i >= l).collect()).collect()
    }

    pub fn has_padding(&self) -> bool {
        self.lengths.iter().any(|&l| l < self.len)
    }

    /// Decoder input `bos y` and output `y eos` for targets `y`.
    pub fn teacher_forcing(&self) -> Result<(TokenBatch, TokenBatch)> {
        let mut inputs = Vec::with_capacity(self.batch);
        let mut outputs = Vec::with_capacity(self.batch);
        for b in 0..self.batch {
            let y = self.row(b);
            let mut i = Vec::with_capacity(y.len() + 1);
            i.push(BOS);
            i.extend_from_slice(y);
            let mut o = y.to_vec();
            o.push(EOS);
            inputs.push(i);
            outputs.push(o);
        }
        Ok((TokenBatch::from_sequences(&inputs)?, TokenBatch::from_sequences(&outputs)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_distinct_and_first() {
        let v = Vocab::numbered(6).unwrap();
        assert_eq!(v.id("<pad>"), Some(PAD));
        assert_eq!(v.id("<s>"), Some(BOS));
        assert_eq!(v.id("</s>"), Some(EOS));
        assert_eq!(v.len(), 6);
        assert_eq!(v.encode("3 5").unwrap(), vec![3, 5]);
        assert_eq!(v.decode(&[4, 2]), "4 </s>");
        assert!(Vocab::new(["a", "a"]).is_err());
        assert!(Vocab::new(["<s>"]).is_err());
    }

    #[test]
    fn padding_and_teacher_forcing() {
        let b = TokenBatch::from_sequences(&[vec![5, 3, 7], vec![4]]).unwrap();
        assert_eq!(b.ids, vec![5, 3, 7, 4, PAD, PAD]);
        assert_eq!(b.padding_mask()[1], vec![false, true, true]);
        let (i, o) = b.teacher_forcing().unwrap();
        assert_eq!(i.row(0), &[BOS, 5, 3, 7]);
        assert_eq!(o.row(0), &[5, 3, 7, EOS]);
        assert_eq!(o.row(1), &[4, EOS]);
        assert_eq!(o.len, 4);
    }
}
