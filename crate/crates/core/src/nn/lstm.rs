use rand::Rng;

use super::tensor::{axpy, dot};
use super::{sigmoid, NnError, Tensor};

/// LSTM weights with the four gates stacked row-wise in the order
/// input, forget, output, candidate:
/// `w: [4H, I]`, `u: [4H, H]`, `b: [4H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w: Tensor,
    pub u: Tensor,
    pub b: Tensor,
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Post-activation gates `[i | f | o | g]`.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmParams {
            w: Tensor::zeros(&[4 * hidden, input]),
            u: Tensor::zeros(&[4 * hidden, hidden]),
            b: Tensor::zeros(&[4 * hidden]),
        }
    }

    /// Uniform `±1/sqrt(fan_in)` weights, forget-gate bias 1.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut b = Tensor::zeros(&[4 * hidden]);
        b.data_mut()[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        LstmParams {
            w: Tensor::uniform(&[4 * hidden, input], 1.0 / (input as f64).sqrt(), rng),
            u: Tensor::uniform(&[4 * hidden, hidden], 1.0 / (hidden as f64).sqrt(), rng),
            b,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.u.cols()
    }

    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<LstmCache, NnError> {
        let hd = self.hidden_dim();
        if x.len() != self.input_dim() || h_prev.len() != hd || c_prev.len() != hd {
            return Err(NnError::ShapeMismatch(format!(
                "lstm({}, {hd}) got x={}, h={}, c={}",
                self.input_dim(),
                x.len(),
                h_prev.len(),
                c_prev.len()
            )));
        }
        let bias = self.b.data();
        let mut gates: Vec<f64> = (0..4 * hd)
            .map(|r| dot(self.w.row(r), x) + dot(self.u.row(r), h_prev) + bias[r])
            .collect();
        for (r, a) in gates.iter_mut().enumerate() {
            *a = if r < 3 * hd { sigmoid(*a) } else { a.tanh() };
        }
        let (i, rest) = gates.split_at(hd);
        let (f, rest) = rest.split_at(hd);
        let (o, g) = rest.split_at(hd);
        let c: Vec<f64> = (0..hd).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<f64> = (0..hd).map(|k| o[k] * tanh_c[k]).collect();
        debug_assert!(h.iter().chain(&c).all(|v| v.is_finite()));
        Ok(LstmCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gates,
            c,
            tanh_c,
            h,
        })
    }

    /// Backpropagates `dh`/`dc` (gradients w.r.t. this step's outputs).
    /// Parameter gradients accumulate into `grad`; input gradients are
    /// added to `dx`, `dh_prev`, `dc_prev`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        cache: &LstmCache,
        dh: &[f64],
        dc: &[f64],
        grad: &mut LstmParams,
        dx: &mut [f64],
        dh_prev: &mut [f64],
        dc_prev: &mut [f64],
    ) {
        let hd = self.hidden_dim();
        let g = &cache.gates;
        let mut da = vec![0.0; 4 * hd];
        for k in 0..hd {
            let (i, f, o, cand) = (g[k], g[hd + k], g[2 * hd + k], g[3 * hd + k]);
            let tc = cache.tanh_c[k];
            let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
            da[k] = dct * cand * i * (1.0 - i);
            da[hd + k] = dct * cache.c_prev[k] * f * (1.0 - f);
            da[2 * hd + k] = dh[k] * tc * o * (1.0 - o);
            da[3 * hd + k] = dct * i * (1.0 - cand * cand);
            dc_prev[k] += dct * f;
        }
        let gb = grad.b.data_mut();
        for (r, &d) in da.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            gb[r] += d;
            axpy(d, &cache.x, grad.w.row_mut(r));
            axpy(d, &cache.h_prev, grad.u.row_mut(r));
            axpy(d, self.w.row(r), dx);
            axpy(d, self.u.row(r), dh_prev);
        }
    }
}
