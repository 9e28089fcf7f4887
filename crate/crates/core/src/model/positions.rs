use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sinusoidal position table `[n, d]`: even slot `2i` holds
/// `sin(pos / 10000^(2i/d))`, odd slot `2i+1` the matching cosine.
pub fn sinusoidal_positions(n: usize, d: usize) -> Result<Tensor> {
    if d % 2 != 0 {
        return Err(Error::config(format!("position embeddings need an even width, got {d}")));
    }
    Ok(position_rows(0, n, d))
}

pub(crate) fn position_rows(start: usize, n: usize, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * d);
    for pos in start..start + n {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            data.push(angle.sin());
            data.push(angle.cos());
        }
    }
    Tensor::new(&[n, d], data).expect("n·d values")
}
