use rand::Rng;

use super::ops::sigmoid;
use super::tensor::{matvec_acc, matvec_t_acc, outer_acc, Tensor};
use super::ParamSet;
use crate::error::{Error, Result};

pub const INIT_BOUND: f64 = 0.08;
pub const FORGET_BIAS: f64 = 1.0;

/// Single LSTM cell. Gate blocks are stacked in the order input, forget,
/// candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_x: Tensor,
    pub w_h: Tensor,
    pub b: Tensor,
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone)]
pub struct LstmCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Activated gates `[i; f; g; o]`.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmParams {
            w_x: Tensor::zeros(&[4 * hidden, input]),
            w_h: Tensor::zeros(&[4 * hidden, hidden]),
            b: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut b = Tensor::uniform(&[4 * hidden], INIT_BOUND, rng);
        b.data_mut()[hidden..2 * hidden].fill(FORGET_BIAS);
        LstmParams {
            w_x: Tensor::uniform(&[4 * hidden, input], INIT_BOUND, rng),
            w_h: Tensor::uniform(&[4 * hidden, hidden], INIT_BOUND, rng),
            b,
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_x.cols()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_h.cols()
    }

    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<LstmCache> {
        let hs = self.hidden_size();
        if x.len() != self.input_size() || h_prev.len() != hs || c_prev.len() != hs {
            return Err(Error::Shape(format!(
                "lstm step expects x[{}], h[{hs}], c[{hs}]; got x[{}], h[{}], c[{}]",
                self.input_size(),
                x.len(),
                h_prev.len(),
                c_prev.len()
            )));
        }
        let mut gates = self.b.data().to_vec();
        matvec_acc(self.w_x.data(), x, &mut gates);
        matvec_acc(self.w_h.data(), h_prev, &mut gates);
        for (k, a) in gates.iter_mut().enumerate() {
            *a = if (2 * hs..3 * hs).contains(&k) {
                a.tanh()
            } else {
                sigmoid(*a)
            };
        }
        let mut c = vec![0.0; hs];
        let mut tanh_c = vec![0.0; hs];
        let mut h = vec![0.0; hs];
        for j in 0..hs {
            let (i, f, g, o) = (
                gates[j],
                gates[hs + j],
                gates[2 * hs + j],
                gates[3 * hs + j],
            );
            c[j] = f * c_prev[j] + i * g;
            tanh_c[j] = c[j].tanh();
            h[j] = o * tanh_c[j];
        }
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

    /// Backpropagates `dh`, `dc` (gradients on this step's outputs) through
    /// the cell. Parameter gradients accumulate into `grads`; returns
    /// `(dx, dh_prev, dc_prev)`.
    pub fn backward(
        &self,
        cache: &LstmCache,
        dh: &[f64],
        dc: &[f64],
        grads: &mut LstmParams,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hs = self.hidden_size();
        let g = &cache.gates;
        let mut da = vec![0.0; 4 * hs];
        let mut dc_prev = vec![0.0; hs];
        for j in 0..hs {
            let (i, f, cand, o) = (g[j], g[hs + j], g[2 * hs + j], g[3 * hs + j]);
            let tc = cache.tanh_c[j];
            let d_o = dh[j] * tc;
            let dct = dc[j] + dh[j] * o * (1.0 - tc * tc);
            let d_i = dct * cand;
            let d_g = dct * i;
            let d_f = dct * cache.c_prev[j];
            dc_prev[j] = dct * f;
            da[j] = d_i * i * (1.0 - i);
            da[hs + j] = d_f * f * (1.0 - f);
            da[2 * hs + j] = d_g * (1.0 - cand * cand);
            da[3 * hs + j] = d_o * o * (1.0 - o);
        }
        outer_acc(grads.w_x.data_mut(), &da, &cache.x);
        outer_acc(grads.w_h.data_mut(), &da, &cache.h_prev);
        for (gb, d) in grads.b.data_mut().iter_mut().zip(&da) {
            *gb += d;
        }
        let mut dx = vec![0.0; self.input_size()];
        matvec_t_acc(self.w_x.data(), &da, &mut dx);
        let mut dh_prev = vec![0.0; hs];
        matvec_t_acc(self.w_h.data(), &da, &mut dh_prev);
        (dx, dh_prev, dc_prev)
    }
}

impl ParamSet for LstmParams {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w_x, &self.w_h, &self.b]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w_x, &mut self.w_h, &mut self.b]
    }

    fn names(&self) -> Vec<&'static str> {
        vec!["lstm.w_x", "lstm.w_h", "lstm.b"]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::finite_diff_check;
    use crate::rng;

    #[test]
    fn zero_cell_outputs_zero() {
        let p = LstmParams::zeros(3, 4);
        let out = p.step(&[1.0, -1.0, 2.0], &[0.0; 4], &[0.0; 4]).unwrap();
        assert_eq!(out.h, vec![0.0; 4]);
        assert_eq!(out.c, vec![0.0; 4]);
    }

    #[test]
    fn forget_bias_is_one() {
        let mut r = rng::substream(1, "t");
        let p = LstmParams::init(3, 4, &mut r);
        assert!(p.b.data()[4..8].iter().all(|&v| v == 1.0));
        assert!(p.w_x.data().iter().all(|v| v.abs() <= INIT_BOUND));
    }

    #[test]
    fn deterministic_and_shape_checked() {
        let mut r = rng::substream(2, "t");
        let p = LstmParams::init(3, 4, &mut r);
        let a = p.step(&[0.1, 0.2, 0.3], &[0.5; 4], &[0.1; 4]).unwrap();
        let b = p.step(&[0.1, 0.2, 0.3], &[0.5; 4], &[0.1; 4]).unwrap();
        assert_eq!(a.h, b.h);
        assert_eq!(a.c, b.c);
        assert!(matches!(
            p.step(&[0.1], &[0.0; 4], &[0.0; 4]),
            Err(Error::Shape(_))
        ));
    }

    // Loss over a short unrolled sequence: sum_t w_t . h_t + 0.5 |c_T|^2
    fn unrolled_loss(p: &LstmParams, xs: &[Vec<f64>], w: &[Vec<f64>]) -> f64 {
        let hs = p.hidden_size();
        let (mut h, mut c) = (vec![0.2; hs], vec![-0.1; hs]);
        let mut loss = 0.0;
        for (x, wt) in xs.iter().zip(w) {
            let out = p.step(x, &h, &c).unwrap();
            loss += out.h.iter().zip(wt).map(|(a, b)| a * b).sum::<f64>();
            h = out.h;
            c = out.c;
        }
        loss + 0.5 * c.iter().map(|v| v * v).sum::<f64>()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng::substream(11, "lstm-grad");
        let (input, hidden, steps) = (5, 4, 4);
        let mut p = LstmParams::init(input, hidden, &mut r);
        // larger weights exercise the nonlinearities
        for t in p.tensors_mut() {
            for v in t.data_mut() {
                *v *= 8.0;
            }
        }
        let xs: Vec<Vec<f64>> = (0..steps)
            .map(|_| Tensor::uniform(&[input], 1.0, &mut r).data().to_vec())
            .collect();
        let w: Vec<Vec<f64>> = (0..steps)
            .map(|_| Tensor::uniform(&[hidden], 1.0, &mut r).data().to_vec())
            .collect();

        let mut caches = Vec::new();
        let (mut h, mut c) = (vec![0.2; hidden], vec![-0.1; hidden]);
        for x in &xs {
            let out = p.step(x, &h, &c).unwrap();
            h = out.h.clone();
            c = out.c.clone();
            caches.push(out);
        }
        let mut grads = LstmParams::zeros(input, hidden);
        let mut dh_next = vec![0.0; hidden];
        let mut dc_next = c.clone();
        for (t, cache) in caches.iter().enumerate().rev() {
            let dh: Vec<f64> = w[t].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
            let (_, dh_prev, dc_prev) = p.backward(cache, &dh, &dc_next, &mut grads);
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        let err = finite_diff_check(|q| unrolled_loss(q, &xs, &w), &p, &grads, 1e-5);
        assert!(err < 1e-4, "max relative error {err}");
    }
}
