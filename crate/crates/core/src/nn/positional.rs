use crate::error::{Result, StoneError};
use crate::tensor::Tensor;

/// Sinusoidal table `[len×q]`: `PE[pos,2i] = sin(pos/10000^(2i/q))`,
/// `PE[pos,2i+1] = cos(pos/10000^(2i/q))`.
pub fn positional_encoding(len: usize, q: usize) -> Result<Tensor> {
    if q == 0 || !q.is_multiple_of(2) {
        return Err(StoneError::config("model.q", format!("positional encoding needs an even width, got {q}")));
    }
    let mut data = vec![0.0; len * q];
    for pos in 0..len {
        for i in 0..q / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / q as f64);
            data[pos * q + 2 * i] = angle.sin();
            data[pos * q + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::from_vec(&[len, q], data)
}
