//! Labeling policy: states, actions, rewards and the REINFORCE update.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::lstm::INIT_BOUND;
use crate::nn::ops::{cosine, embed, embed_backward, linear_backward, linear_softmax};
use crate::nn::{AdamState, ParamSet, Tensor};
use crate::rsrnet::Dims;
use crate::trajio::Label;

pub const DEFAULT_LR: f64 = 0.001;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    /// Embedding of the previous segment's label.
    pub label_emb: Tensor,
    pub w_p: Tensor,
    pub b_p: Tensor,
}

impl PolicyParams {
    pub fn zeros(dims: Dims) -> Self {
        PolicyParams {
            label_emb: Tensor::zeros(&[2, dims.label]),
            w_p: Tensor::zeros(&[2, dims.z() + dims.label]),
            b_p: Tensor::zeros(&[2]),
        }
    }

    pub fn init<R: Rng>(dims: Dims, rng: &mut R) -> Self {
        PolicyParams {
            label_emb: Tensor::uniform(&[2, dims.label], INIT_BOUND, rng),
            w_p: Tensor::uniform(&[2, dims.z() + dims.label], INIT_BOUND, rng),
            b_p: Tensor::zeros(&[2]),
        }
    }

    pub fn z_dim(&self) -> usize {
        self.w_p.cols() - self.label_emb.cols()
    }

    /// `s = [z ; v(prev_label)]`.
    pub fn make_state(&self, z: &[f64], prev_label: Label) -> Result<Vec<f64>> {
        if z.len() != self.z_dim() {
            return Err(Error::Shape(format!(
                "policy expects z of length {}, got {}",
                self.z_dim(),
                z.len()
            )));
        }
        let v = embed(&self.label_emb, prev_label as usize)?;
        let mut s = Vec::with_capacity(z.len() + v.len());
        s.extend_from_slice(z);
        s.extend_from_slice(v);
        Ok(s)
    }

    pub fn probs(&self, state: &[f64]) -> Result<Vec<f64>> {
        linear_softmax(&self.w_p, &self.b_p, state)
    }

    /// Greedy action: the more probable label, ties to 0.
    pub fn greedy(&self, state: &[f64]) -> Result<(Label, f64)> {
        let p = self.probs(state)?;
        let a = if p[1] > p[0] { 1 } else { 0 };
        Ok((a, p[a as usize].ln()))
    }

    pub fn sample<R: Rng>(&self, state: &[f64], rng: &mut R) -> Result<(Label, f64)> {
        let p = self.probs(state)?;
        let a = if rng.gen::<f64>() < p[1] { 1 } else { 0 };
        Ok((a, p[a as usize].ln()))
    }

    pub fn log_prob(&self, z: &[f64], prev_label: Label, action: Label) -> Result<f64> {
        let s = self.make_state(z, prev_label)?;
        Ok(self.probs(&s)?[action as usize].ln())
    }

    /// Adds `scale * grad ln pi(action | [z ; v(prev_label)])` into `grads`.
    pub fn accumulate_log_prob_grad(
        &self,
        z: &[f64],
        prev_label: Label,
        action: Label,
        scale: f64,
        grads: &mut PolicyParams,
    ) -> Result<()> {
        let s = self.make_state(z, prev_label)?;
        let p = self.probs(&s)?;
        let d_logits: Vec<f64> = (0..2)
            .map(|k| scale * (f64::from(u8::from(k == action as usize)) - p[k]))
            .collect();
        let ds = linear_backward(&self.w_p, &s, &d_logits, &mut grads.w_p, &mut grads.b_p);
        embed_backward(&mut grads.label_emb, prev_label as usize, &ds[z.len()..]);
        Ok(())
    }
}

impl ParamSet for PolicyParams {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.label_emb, &self.w_p, &self.b_p]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.label_emb, &mut self.w_p, &mut self.b_p]
    }

    fn names(&self) -> Vec<&'static str> {
        vec!["policy.label_emb", "policy.w_p", "policy.b_p"]
    }
}

/// Continuity reward between consecutive positions:
/// `+cos(z_prev, z_cur)` when the labels agree, `-cos` otherwise.
pub fn local_reward(
    prev_label: Label,
    cur_label: Label,
    z_prev: &[f64],
    z_cur: &[f64],
) -> Result<f64> {
    let sign = if prev_label == cur_label { 1.0 } else { -1.0 };
    Ok(sign * cosine(z_prev, z_cur)?)
}

/// `1 / (1 + loss)` where `loss` is the representation network's
/// cross-entropy on the refined labels.
pub fn global_reward(loss: f64) -> Result<f64> {
    if loss.is_nan() || loss < 0.0 {
        return Err(Error::Contract(format!(
            "loss must be non-negative, got {loss}"
        )));
    }
    Ok(1.0 / (1.0 + loss))
}

/// Mean local reward plus the global reward.
pub fn episode_return(locals: &[f64], global: f64) -> Result<f64> {
    if locals.is_empty() {
        return Err(Error::Contract("episode has no transitions".into()));
    }
    Ok(locals.iter().sum::<f64>() / locals.len() as f64 + global)
}

/// A policy decision recorded during a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyStep {
    pub position: usize,
    pub z: Vec<f64>,
    pub prev_label: Label,
    pub action: Label,
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Episode {
    /// Only positions the policy decided; rule-decided and forced positions
    /// carry no action.
    pub steps: Vec<PolicyStep>,
    /// One entry per position 1..n (0-indexed), `n - 1` in total.
    pub local_rewards: Vec<f64>,
    pub global_reward: f64,
    pub ret: f64,
}

impl Episode {
    pub fn recompute_return(&self) -> Result<f64> {
        episode_return(&self.local_rewards, self.global_reward)
    }

    /// Sets rewards from labels, representations and a loss.
    pub fn set_rewards(&mut self, labels: &[Label], zs: &[Vec<f64>], loss: f64) -> Result<()> {
        if labels.len() != zs.len() {
            return Err(Error::Shape(
                "labels and representations differ in length".into(),
            ));
        }
        self.local_rewards = (1..labels.len())
            .map(|i| local_reward(labels[i - 1], labels[i], &zs[i - 1], &zs[i]))
            .collect::<Result<_>>()?;
        self.global_reward = global_reward(loss)?;
        self.ret = self.recompute_return()?;
        Ok(())
    }

    pub fn total_log_prob(&self, policy: &PolicyParams) -> Result<f64> {
        self.steps
            .iter()
            .map(|s| policy.log_prob(&s.z, s.prev_label, s.action))
            .sum()
    }
}

/// Gradient of `sum_i R ln pi(a_i | s_i)` over the episode's policy steps.
pub fn reinforce_grad(policy: &PolicyParams, episode: &Episode) -> Result<PolicyParams> {
    let mut grads = PolicyParams {
        label_emb: Tensor::zeros(policy.label_emb.shape()),
        w_p: Tensor::zeros(policy.w_p.shape()),
        b_p: Tensor::zeros(policy.b_p.shape()),
    };
    for s in &episode.steps {
        policy.accumulate_log_prob_grad(&s.z, s.prev_label, s.action, episode.ret, &mut grads)?;
    }
    Ok(grads)
}

/// One gradient-ascent step on the REINFORCE objective. Episodes with a zero
/// return or without policy decisions leave the parameters untouched.
pub fn reinforce_update(
    policy: &mut PolicyParams,
    episode: &Episode,
    opt: &mut AdamState,
) -> Result<bool> {
    if episode.ret == 0.0 || episode.steps.is_empty() {
        return Ok(false);
    }
    let grads = reinforce_grad(policy, episode)?;
    opt.step(policy, &grads, true)?;
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::finite_diff_check;
    use crate::rng;

    const SMALL: Dims = Dims {
        segment: 3,
        hidden: 4,
        label: 3,
    };

    fn random_z<R: Rng>(r: &mut R) -> Vec<f64> {
        (0..SMALL.z()).map(|_| r.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn state_layout() {
        let mut r = rng::substream(1, "pol");
        let p = PolicyParams::init(SMALL, &mut r);
        let z = random_z(&mut r);
        let s0 = p.make_state(&z, 0).unwrap();
        let s1 = p.make_state(&z, 1).unwrap();
        assert_eq!(s0.len(), SMALL.z() + SMALL.label);
        assert_eq!(s0[..z.len()], z[..]);
        assert_eq!(s0[..z.len()], s1[..z.len()]);
        assert_ne!(s0[z.len()..], s1[z.len()..]);
        assert!(matches!(p.make_state(&z[1..], 0), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_policy_ties_to_normal() {
        let p = PolicyParams::zeros(SMALL);
        let s = p.make_state(&vec![0.3; SMALL.z()], 1).unwrap();
        assert_eq!(p.probs(&s).unwrap(), vec![0.5, 0.5]);
        assert_eq!(p.greedy(&s).unwrap().0, 0);
    }

    #[test]
    fn sampling_is_seeded() {
        let mut r = rng::substream(2, "pol");
        let p = PolicyParams::init(SMALL, &mut r);
        let s = p.make_state(&random_z(&mut r), 0).unwrap();
        let draw = |seed| {
            let mut g = rng::substream(seed, "sample");
            (0..50)
                .map(|_| p.sample(&s, &mut g).unwrap().0)
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
    }

    #[test]
    fn reward_formulas() {
        let z = [0.5, -1.0, 2.0];
        assert!((local_reward(1, 1, &z, &z).unwrap() - 1.0).abs() < 1e-15);
        assert!((local_reward(0, 1, &z, &z).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(global_reward(0.0).unwrap(), 1.0);
        assert_eq!(global_reward(1.0).unwrap(), 0.5);
        assert!(global_reward(-0.1).is_err());
        assert_eq!(episode_return(&[1.0, 1.0], 0.5).unwrap(), 1.5);
        assert_eq!(episode_return(&[0.0, 0.0, 0.0], 0.25).unwrap(), 0.25);
        assert!(episode_return(&[], 0.5).is_err());
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        let mut r = rng::substream(3, "pol-grad");
        let mut p = PolicyParams::init(SMALL, &mut r);
        for t in p.tensors_mut() {
            for v in t.data_mut() {
                *v *= 10.0;
            }
        }
        let z = random_z(&mut r);
        for (prev, action) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let mut grads = PolicyParams::zeros(SMALL);
            p.accumulate_log_prob_grad(&z, prev, action, 1.0, &mut grads)
                .unwrap();
            let err =
                finite_diff_check(|q| q.log_prob(&z, prev, action).unwrap(), &p, &grads, 1e-5);
            assert!(err < 1e-4, "max relative error {err}");
        }
    }

    #[test]
    fn zero_return_is_a_no_op() {
        let mut r = rng::substream(4, "pol");
        let mut p = PolicyParams::init(SMALL, &mut r);
        let before = p.clone();
        let ep = Episode {
            steps: vec![PolicyStep {
                position: 1,
                z: random_z(&mut r),
                prev_label: 0,
                action: 1,
                log_prob: 0.0,
            }],
            local_rewards: vec![0.0],
            global_reward: 0.0,
            ret: 0.0,
        };
        let mut opt = AdamState::new(DEFAULT_LR, &p);
        assert!(!reinforce_update(&mut p, &ep, &mut opt).unwrap());
        assert_eq!(p, before);
    }

    #[test]
    fn positive_return_raises_taken_action_probability() {
        let mut r = rng::substream(5, "pol");
        let mut p = PolicyParams::init(SMALL, &mut r);
        let z = random_z(&mut r);
        let ep = Episode {
            steps: vec![PolicyStep {
                position: 1,
                z: z.clone(),
                prev_label: 1,
                action: 1,
                log_prob: 0.0,
            }],
            local_rewards: vec![0.2],
            global_reward: 0.5,
            ret: 0.7,
        };
        let before = p.log_prob(&z, 1, 1).unwrap();
        let mut opt = AdamState::new(DEFAULT_LR, &p);
        reinforce_update(&mut p, &ep, &mut opt).unwrap();
        assert!(p.log_prob(&z, 1, 1).unwrap() > before);
    }
}
