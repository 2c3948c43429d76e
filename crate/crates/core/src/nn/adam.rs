use super::ParamSet;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam with bias correction. Moments mirror the parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<P: ParamSet>(lr: f64, params: &P) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|t| vec![0.0; t.len()])
            .collect();
        AdamState {
            lr,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }

    pub(crate) fn restore(&mut self, step: u64, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> Result<()> {
        let same = |a: &[Vec<f64>], b: &[Vec<f64>]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.len() == y.len())
        };
        if !same(&m, &self.m) || !same(&v, &self.v) {
            return Err(Error::Shape(
                "optimizer moments do not match parameters".into(),
            ));
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }

    /// One update. With `maximize` the step climbs the gradient instead of
    /// descending it.
    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P, maximize: bool) -> Result<()> {
        let grads = grads.tensors();
        let mut params = params.tensors_mut();
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(&grads).zip(&self.m) {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::Shape(format!(
                    "tensor of {} values, gradient of {}, moments of {}",
                    p.len(),
                    g.len(),
                    m.len()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let sign = if maximize { 1.0 } else { -1.0 };
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(&grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv += sign * self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let before = p.clone();
        let mut opt = AdamState::new(0.1, &p);
        for _ in 0..5 {
            opt.step(&mut p, &Tensor::zeros(&[2]), false).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for maximize in [false, true] {
            let mut p = Tensor::vector(vec![0.0]);
            let mut opt = AdamState::new(0.01, &p);
            opt.step(&mut p, &Tensor::vector(vec![3.0]), maximize)
                .unwrap();
            let expect = if maximize { 0.01 } else { -0.01 };
            assert!((p.data()[0] - expect).abs() < 1e-9, "{}", p.data()[0]);
        }
    }

    #[test]
    fn descends_a_parabola() {
        let mut p = Tensor::vector(vec![1.0]);
        let mut opt = AdamState::new(0.01, &p);
        for _ in 0..500 {
            let g = Tensor::vector(vec![2.0 * p.data()[0]]);
            opt.step(&mut p, &g, false).unwrap();
        }
        assert!(p.data()[0].abs() < 0.05, "{}", p.data()[0]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut p = Tensor::vector(vec![0.0, 0.0]);
        let mut opt = AdamState::new(0.01, &p);
        assert!(matches!(
            opt.step(&mut p, &Tensor::vector(vec![1.0]), false),
            Err(Error::Shape(_))
        ));
    }
}
