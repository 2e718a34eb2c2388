//! Small neural-network kernel with hand-written gradients: embedding
//! lookup, dense layers, an LSTM cell, softmax cross-entropy and Adam.
//!
//! Everything runs in `f64`; the graphs are small and fixed, so explicit
//! backward passes stay readable and can be checked against finite
//! differences with [`grad_check`].

mod adam;
mod gradcheck;
mod lstm;
mod tensor;

use rand::Rng;
use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport, FD_STEP};
pub use lstm::{LstmCache, LstmParams};
pub use tensor::Tensor;
pub(crate) use tensor::{axpy, dot};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("token {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Affine layer `y = W x + b` with `W` stored as `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Tensor,
    pub b: Tensor,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            w: Tensor::zeros(&[output, input]),
            b: Tensor::zeros(&[output]),
        }
    }

    /// Weights uniform in `±1/sqrt(input)`, zero bias.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Dense {
            w: Tensor::uniform(&[output, input], 1.0 / (input as f64).sqrt(), rng),
            b: Tensor::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        if x.len() != self.input_dim() {
            return Err(NnError::ShapeMismatch(format!(
                "dense expects {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        let y: Vec<f64> = (0..self.output_dim())
            .map(|r| dot(self.w.row(r), x) + self.b.data()[r])
            .collect();
        debug_assert!(y.iter().all(|v| v.is_finite()));
        Ok(y)
    }

    /// Accumulates parameter gradients into `grad` and, when requested,
    /// the input gradient into `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense, dx: Option<&mut [f64]>) {
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            axpy(g, x, grad.w.row_mut(r));
            grad.b.data_mut()[r] += g;
        }
        if let Some(dx) = dx {
            for (r, &g) in dy.iter().enumerate() {
                if g != 0.0 {
                    axpy(g, self.w.row(r), dx);
                }
            }
        }
    }
}

/// Row `token` of an embedding table.
pub fn embedding_lookup(table: &Tensor, token: usize) -> Result<&[f64], NnError> {
    if token >= table.rows() {
        return Err(NnError::TokenOutOfRange {
            token,
            vocab: table.rows(),
        });
    }
    Ok(table.row(token))
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of `softmax(logits)` against `label`, and its gradient
/// with respect to the logits.
pub fn softmax_xent(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>), NnError> {
    if label >= logits.len() {
        return Err(NnError::BadLabel {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    let loss = -(logits[label] - max - log_sum);
    let mut d = softmax(logits);
    d[label] -= 1.0;
    Ok((loss, d))
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_identity() {
        let mut d = Dense::zeros(3, 3);
        for i in 0..3 {
            d.w.row_mut(i)[i] = 1.0;
        }
        assert_eq!(d.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![1.0, -2.0, 0.5]);
        assert!(d.forward(&[1.0]).is_err());
    }

    #[test]
    fn lookup() {
        let t = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(embedding_lookup(&t, 0).unwrap(), &[1.0, 2.0]);
        assert_eq!(embedding_lookup(&t, 2), Err(NnError::TokenOutOfRange { token: 2, vocab: 2 }));
    }

    #[test]
    fn xent_cases() {
        let (loss, d) = softmax_xent(&[0.3, 0.3], 1).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert!((d.iter().sum::<f64>()).abs() < 1e-15);
        let (loss, d) = softmax_xent(&[1000.0, 0.0], 0).unwrap();
        assert!(loss.is_finite() && loss < 1e-300_f64.max(1e-12));
        assert!(d.iter().all(|x| x.is_finite()));
        assert!(softmax_xent(&[1.0, 2.0], 2).is_err());
        let (loss, _) = softmax_xent(&[1000.0, 0.0], 1).unwrap();
        assert!((loss - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn dense_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Dense::init(5, 3, &mut rng);
        let x: Vec<f64> = (0..5).map(|i| (i as f64 * 0.7).sin()).collect();
        let target = [0.2, -0.4, 1.0];
        // scalar loss: 0.5 * |y - target|^2
        let mut flat: Vec<f64> = d.w.data().to_vec();
        flat.extend_from_slice(d.b.data());
        flat.extend_from_slice(&x);
        let f = |p: &[f64]| {
            let mut dd = d.clone();
            dd.w.data_mut().copy_from_slice(&p[..15]);
            dd.b.data_mut().copy_from_slice(&p[15..18]);
            let x = &p[18..];
            let y = dd.forward(x).unwrap();
            let dy: Vec<f64> = y.iter().zip(&target).map(|(a, b)| a - b).collect();
            let loss = 0.5 * dy.iter().map(|v| v * v).sum::<f64>();
            let mut g = Dense::zeros(5, 3);
            let mut dx = vec![0.0; 5];
            dd.backward(x, &dy, &mut g, Some(&mut dx));
            let mut grad = g.w.data().to_vec();
            grad.extend_from_slice(g.b.data());
            grad.extend_from_slice(&dx);
            (loss, grad)
        };
        let report = grad_check(f, &flat, 1e-6);
        assert!(report.passed, "{report:?}");
        assert!(report.max_rel_err < 1e-6);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_is_a_distribution(logits in prop::collection::vec(-1000.0f64..1000.0, 1..12), pick in any::<prop::sample::Index>()) {
                let p = softmax(&logits);
                let s: f64 = p.iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-12);
                prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
                let label = pick.index(logits.len());
                let (loss, d) = softmax_xent(&logits, label).unwrap();
                prop_assert!(loss.is_finite() && loss >= 0.0);
                prop_assert!(d.iter().sum::<f64>().abs() <= 1e-12);
            }
        }
    }
}
