use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::kernels::{gemm_nn, gemm_nt};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Single-head self-attention, forward only, with seeded projections.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
}

/// Operation counts of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AttentionFlops {
    /// Q, K and V projections: `3 · 2·L·d²`.
    pub projections: u64,
    /// Multiply-accumulates of `Q·Kᵀ` alone: `L²·d`.
    pub score_macs: u64,
    /// Terms growing with `L²`: scores, softmax and the weighted sum of V.
    pub quadratic: u64,
}

impl AttentionFlops {
    pub fn total(&self) -> u64 {
        self.projections + self.quadratic
    }

    pub fn count(len: usize, d: usize) -> Self {
        let (l, d) = (len as u64, d as u64);
        Self {
            projections: 3 * 2 * l * d * d,
            score_macs: l * l * d,
            // QKᵀ and PV at 2 flops per MAC, plus scale, max-subtract,
            // exponentiate and normalize per score.
            quadratic: 2 * l * l * d + 2 * l * l * d + 4 * l * l,
        }
    }
}

impl AttentionBlock {
    pub fn new(d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = (1.0 / d as f64).sqrt();
        Self {
            wq: Tensor::randn(&[d, d], std, &mut rng),
            wk: Tensor::randn(&[d, d], std, &mut rng),
            wv: Tensor::randn(&[d, d], std, &mut rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.wq.rows()
    }

    /// `softmax(Q·Kᵀ/√d)·V`, softmax row-wise with the row maximum
    /// subtracted first.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, AttentionFlops)> {
        let d = self.dim();
        if x.shape().len() != 2 || x.cols() != d || x.rows() == 0 {
            return Err(Error::Shape {
                op: "attention_block_forward",
                lhs: x.shape().to_vec(),
                rhs: vec![d],
            });
        }
        let l = x.rows();
        let project = |w: &Tensor| {
            let mut out = vec![0.0; l * d];
            gemm_nn(x.data(), w.data(), &mut out, l, d, d);
            out
        };
        let q = project(&self.wq);
        let k = project(&self.wk);
        let v = project(&self.wv);

        let mut scores = vec![0.0; l * l];
        gemm_nt(&q, &k, &mut scores, l, d, l);
        let scale = 1.0 / (d as f64).sqrt();
        for row in scores.chunks_mut(l) {
            let mut max = f64::NEG_INFINITY;
            for s in row.iter_mut() {
                *s *= scale;
                max = max.max(*s);
            }
            let mut z = 0.0;
            for s in row.iter_mut() {
                *s = (*s - max).exp();
                z += *s;
            }
            for s in row.iter_mut() {
                *s /= z;
            }
        }
        let mut out = vec![0.0; l * d];
        gemm_nn(&scores, &v, &mut out, l, l, d);
        Ok((Tensor::new(vec![l, d], out)?, AttentionFlops::count(l, d)))
    }
}

/// Forward pass of `block` on `x`.
pub fn attention_block_forward(block: &AttentionBlock, x: &Tensor) -> Result<Tensor> {
    Ok(block.forward(x)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn project(x: &Tensor, w: &Tensor) -> Vec<f64> {
        let mut out = vec![0.0; x.rows() * w.cols()];
        gemm_nn(x.data(), w.data(), &mut out, x.rows(), x.cols(), w.cols());
        out
    }

    #[test]
    fn zero_queries_average_values() {
        let mut block = AttentionBlock::new(4, 1);
        block.wq = Tensor::zeros(&[4, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::randn(&[6, 4], 1.0, &mut rng);
        let out = attention_block_forward(&block, &x).unwrap();
        let v = project(&x, &block.wv);
        for j in 0..4 {
            let mean = (0..6).map(|i| v[i * 4 + j]).sum::<f64>() / 6.0;
            for i in 0..6 {
                assert!((out.at(&[i, j]) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_row_is_value_projection() {
        let block = AttentionBlock::new(3, 5);
        let x = Tensor::matrix(1, 3, vec![0.3, -1.0, 2.0]).unwrap();
        let out = attention_block_forward(&block, &x).unwrap();
        let v = project(&x, &block.wv);
        for (a, b) in out.data().iter().zip(&v) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_by_one_by_hand() {
        let block = AttentionBlock {
            wq: Tensor::matrix(1, 1, vec![1.0]).unwrap(),
            wk: Tensor::matrix(1, 1, vec![2.0]).unwrap(),
            wv: Tensor::matrix(1, 1, vec![3.0]).unwrap(),
        };
        let x = Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap();
        // q = [1, 2], k = [2, 4], v = [3, 6]; scores q_i·k_j.
        let row = |q: f64| {
            let (a, b) = ((q * 2.0f64).exp(), (q * 4.0f64).exp());
            (3.0 * a + 6.0 * b) / (a + b)
        };
        let out = attention_block_forward(&block, &x).unwrap();
        assert!((out.data()[0] - row(1.0)).abs() < 1e-12);
        assert!((out.data()[1] - row(2.0)).abs() < 1e-12);
    }

    #[test]
    fn large_scores_stay_finite() {
        let block = AttentionBlock {
            wq: Tensor::matrix(1, 1, vec![100.0]).unwrap(),
            wk: Tensor::matrix(1, 1, vec![100.0]).unwrap(),
            wv: Tensor::matrix(1, 1, vec![1.0]).unwrap(),
        };
        let x = Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap();
        let out = attention_block_forward(&block, &x).unwrap();
        assert!(out.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn counts() {
        assert_eq!(AttentionFlops::count(1024, 64).score_macs, 67_108_864);
        let a = AttentionFlops::count(512, 64).total();
        let b = AttentionFlops::count(1024, 64).total();
        assert!(b as f64 / a as f64 >= 3.6);
        let q = AttentionFlops::count(1024, 64).quadratic as f64 / AttentionFlops::count(512, 64).quadratic as f64;
        assert_eq!(q, 4.0);
    }
}
