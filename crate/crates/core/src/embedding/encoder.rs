use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{PhdError, Result};

/// A frozen per-view feature extractor. Implementations expose no way to
/// mutate their parameters, and `checksum` lets callers verify that.
pub trait ViewEncoder: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn encode(&self, view: &[f32]) -> Result<Vec<f32>>;
    fn checksum(&self) -> String;
}

fn check_dim(view: &[f32], expected: usize) -> Result<()> {
    if view.len() != expected {
        return Err(PhdError::invalid(format!(
            "view has dim {}, encoder expects {expected}",
            view.len()
        )));
    }
    Ok(())
}

/// Passthrough for cohorts that already carry view features.
#[derive(Debug, Clone)]
pub struct IdentityEncoder {
    dim: usize,
}

impl IdentityEncoder {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl ViewEncoder for IdentityEncoder {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, view: &[f32]) -> Result<Vec<f32>> {
        check_dim(view, self.dim)?;
        Ok(view.to_vec())
    }

    fn checksum(&self) -> String {
        format!("identity-{}", self.dim)
    }
}

/// Fixed random projection followed by `tanh`, standing in for a pretrained
/// image backbone whose weights stay frozen.
#[derive(Debug, Clone)]
pub struct FrozenProjectionEncoder {
    weight: Array2<f64>,
    bias: Array1<f64>,
}

impl FrozenProjectionEncoder {
    pub fn new(input_dim: usize, output_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = (1.0 / input_dim.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let weight = Array2::from_shape_fn((input_dim, output_dim), |_| normal.sample(&mut rng));
        let bias = Array1::from_shape_fn(output_dim, |_| normal.sample(&mut rng) * 0.1);
        Self { weight, bias }
    }
}

impl ViewEncoder for FrozenProjectionEncoder {
    fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    fn encode(&self, view: &[f32]) -> Result<Vec<f32>> {
        check_dim(view, self.input_dim())?;
        let x = Array1::from_iter(view.iter().map(|&v| v as f64));
        let y = x.dot(&self.weight) + &self.bias;
        Ok(y.iter().map(|v| v.tanh() as f32).collect())
    }

    fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in self.weight.iter().chain(self.bias.iter()) {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_returns_input() {
        let enc = IdentityEncoder::new(3);
        assert_eq!(enc.encode(&[1.0, -2.0, 0.5]).unwrap(), vec![1.0, -2.0, 0.5]);
        assert!(enc.encode(&[1.0]).is_err());
    }

    #[test]
    fn projection_is_deterministic_and_sized() {
        let enc = FrozenProjectionEncoder::new(5, 3, 9);
        let view = [0.1, 0.2, -0.3, 0.4, 1.0];
        let a = enc.encode(&view).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a, enc.encode(&view).unwrap());
        assert_eq!(enc.checksum(), FrozenProjectionEncoder::new(5, 3, 9).checksum());
        assert!(matches!(enc.encode(&[0.0; 4]), Err(PhdError::InvalidArgument(_))));
    }
}
