//! Rollouts, pretraining on noisy labels, and joint training of the
//! representation network with the policy.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use serde::Serialize;

use super::policy::{reinforce_update, Episode, PolicyStep};
use crate::detector::{ActionMode, Decision, OnlineLabeler};
use crate::error::{Error, Result};
use crate::groupstats::StatsStore;
use crate::model::{Model, Optimizers};
use crate::nn::ops::cross_entropy;
use crate::rng;
use crate::roadnet::RoadNetwork;
use crate::rsrnet::RsrExample;
use crate::trajio::{Label, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub lr_rsr: f64,
    pub lr_policy: f64,
    /// Trajectories sampled from the dataset for pretraining (all if fewer).
    pub pretrain_trajectories: usize,
    /// Supervised epochs of the representation network on noisy labels.
    pub pretrain_rsr_epochs: usize,
    /// Teacher-forced epochs of the policy on noisy labels.
    pub pretrain_policy_epochs: usize,
    pub epochs_per_traj: usize,
    /// Evaluate every this many training trajectories.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_rsr: crate::rsrnet::DEFAULT_LR,
            lr_policy: super::policy::DEFAULT_LR,
            pretrain_trajectories: 2000,
            pretrain_rsr_epochs: 5,
            pretrain_policy_epochs: 50,
            epochs_per_traj: 5,
            eval_every: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub labels: Vec<Label>,
    pub nrf: Vec<Label>,
    pub zs: Vec<Vec<f64>>,
    /// Cross-entropy of the representation network on `labels`.
    pub loss: f64,
    pub episode: Episode,
}

/// Labels `traj` the way the online detector would (before delayed
/// labeling), recording policy decisions and rewards.
pub fn rollout_refined_labels(
    model: &Model,
    store: &StatsStore,
    net: &RoadNetwork,
    traj: &Trajectory,
    mode: ActionMode,
) -> Result<Rollout> {
    let group = store.group(&store.key_of(traj))?;
    let mut labeler = OnlineLabeler::new(model, net, Some(group), mode);
    let n = traj.len();
    let mut labels = Vec::with_capacity(n);
    let mut nrf = Vec::with_capacity(n);
    let mut zs = Vec::with_capacity(n);
    let mut steps = Vec::new();
    let mut loss = 0.0;
    for (i, seg) in traj.stream() {
        let st = labeler.push(seg, i + 1 == n)?;
        if let Decision::Policy { log_prob } = st.decision {
            steps.push(PolicyStep {
                position: i,
                z: st.z.clone(),
                prev_label: st.prev_label,
                action: st.label,
                log_prob,
            });
        }
        loss += cross_entropy(&st.probs, st.label as usize)?;
        labels.push(st.label);
        nrf.push(st.nrf);
        zs.push(st.z);
    }
    loss /= n as f64;
    let mut episode = Episode {
        steps,
        ..Episode::default()
    };
    episode.set_rewards(&labels, &zs, loss)?;
    Ok(Rollout {
        labels,
        nrf,
        zs,
        loss,
        episode,
    })
}

/// One training record per line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRecord {
    pub phase: &'static str,
    pub step: usize,
    pub loss: f64,
    pub mean_return: f64,
    pub eval_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointReport {
    pub initial_f1: f64,
    pub best_f1: f64,
    /// Trajectories seen when the best model was recorded (0 = initial).
    pub best_step: usize,
    pub log: Vec<LogRecord>,
}

/// Warm start on noisy labels: the representation network is trained
/// supervised, then the policy is trained by forcing its actions to the
/// noisy labels and applying the policy-gradient step with the episode's
/// return.
pub fn pretrain(
    model: &mut Model,
    opts: &mut Optimizers,
    store: &StatsStore,
    net: &RoadNetwork,
    dataset: &[Trajectory],
    cfg: &TrainConfig,
) -> Result<Vec<LogRecord>> {
    let mut log = Vec::new();
    if dataset.is_empty() {
        return Ok(log);
    }
    let mut sample: Vec<usize> = (0..dataset.len()).collect();
    sample.shuffle(&mut rng::substream(cfg.seed, "pretrain/sample"));
    sample.truncate(cfg.pretrain_trajectories);
    sample.sort_unstable();
    let dataset: Vec<&Trajectory> = sample.iter().map(|&i| &dataset[i]).collect();
    let examples = dataset
        .iter()
        .map(|t| {
            Ok(RsrExample {
                segments: t.segments.clone(),
                nrf: store.nrf(t)?,
                labels: store.noisy_labels(t)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut shuffle = rng::substream(cfg.seed, "pretrain/shuffle");
    for epoch in 0..cfg.pretrain_rsr_epochs {
        let loss = model
            .rsr
            .train_epoch(&examples, &mut opts.rsr, &mut shuffle)?;
        log::info!("pretrain rsr epoch {epoch}: loss {loss:.4}");
        log.push(LogRecord {
            phase: "pretrain_rsr",
            step: epoch + 1,
            loss,
            mean_return: 0.0,
            eval_f1: None,
        });
    }

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..cfg.pretrain_policy_epochs {
        order.shuffle(&mut shuffle);
        let (mut total_ret, mut total_loss) = (0.0, 0.0);
        for &i in &order {
            let teacher = examples[i].labels.clone();
            let r = rollout_refined_labels(
                model,
                store,
                net,
                dataset[i],
                ActionMode::Teacher(teacher),
            )?;
            reinforce_update(&mut model.policy, &r.episode, &mut opts.policy)?;
            total_ret += r.episode.ret;
            total_loss += r.loss;
        }
        let n = dataset.len() as f64;
        log::info!(
            "pretrain policy epoch {epoch}: mean return {:.4}",
            total_ret / n
        );
        log.push(LogRecord {
            phase: "pretrain_policy",
            step: epoch + 1,
            loss: total_loss / n,
            mean_return: total_ret / n,
            eval_f1: None,
        });
    }
    Ok(log)
}

/// Joint training. For every trajectory and epoch: roll out refined labels
/// with the sampling policy, take a representation-network step on them,
/// recompute the rewards with the updated network, and take a
/// policy-gradient step. `eval` scores a model (higher is better); the best
/// scoring model seen, including the starting one, is left in `model`.
pub fn joint_train(
    model: &mut Model,
    opts: &mut Optimizers,
    store: &StatsStore,
    net: &RoadNetwork,
    dataset: &[Trajectory],
    cfg: &TrainConfig,
    eval: &mut dyn FnMut(&Model) -> Result<f64>,
) -> Result<JointReport> {
    let initial_f1 = eval(model)?;
    let mut best = (initial_f1, 0usize, model.clone());
    let mut log = Vec::new();
    if dataset.is_empty() {
        return Ok(JointReport {
            initial_f1,
            best_f1: initial_f1,
            best_step: 0,
            log,
        });
    }
    if cfg.eval_every == 0 {
        return Err(Error::Config("eval_every must be positive".into()));
    }

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng::substream(cfg.seed, "joint/shuffle"));
    let mut sampler = rng::substream(cfg.seed, "joint/rollout");
    let (mut window_loss, mut window_ret, mut window_n) = (0.0, 0.0, 0usize);

    for (k, &i) in order.iter().enumerate() {
        let traj = &dataset[i];
        for _ in 0..cfg.epochs_per_traj {
            let r = rollout_refined_labels(
                model,
                store,
                net,
                traj,
                ActionMode::Sample(Box::new(rng::Rng::seed_from_u64(sampler.gen()))),
            )?;

            let ex = RsrExample {
                segments: traj.segments.clone(),
                nrf: r.nrf.clone(),
                labels: r.labels.clone(),
            };
            model.rsr.train_step(&ex, &mut opts.rsr)?;

            let post = model.rsr.forward(&traj.segments, &r.nrf)?;
            let post_loss = post
                .iter()
                .zip(&r.labels)
                .map(|(s, &l)| cross_entropy(&s.probs, l as usize))
                .sum::<Result<f64>>()?
                / post.len() as f64;
            let zs: Vec<Vec<f64>> = post.into_iter().map(|s| s.z).collect();
            let mut episode = r.episode;
            episode.set_rewards(&r.labels, &zs, post_loss)?;
            reinforce_update(&mut model.policy, &episode, &mut opts.policy)?;

            window_loss += post_loss;
            window_ret += episode.ret;
            window_n += 1;
        }

        let seen = k + 1;
        if seen % cfg.eval_every == 0 || seen == order.len() {
            let f1 = eval(model)?;
            let rec = LogRecord {
                phase: "joint",
                step: seen,
                loss: window_loss / window_n.max(1) as f64,
                mean_return: window_ret / window_n.max(1) as f64,
                eval_f1: Some(f1),
            };
            log::info!(
                "joint step {seen}: loss {:.4} return {:.4} f1 {f1:.4}",
                rec.loss,
                rec.mean_return
            );
            log.push(rec);
            (window_loss, window_ret, window_n) = (0.0, 0.0, 0);
            if f1 > best.0 {
                best = (f1, seen, model.clone());
            }
        }
    }

    *model = best.2;
    Ok(JointReport {
        initial_f1,
        best_f1: best.0,
        best_step: best.1,
        log,
    })
}

/// Continues training on a newer partition with its own statistics: a warm
/// start on the partition's noisy labels, then joint training.
pub fn fine_tune(
    model: &mut Model,
    opts: &mut Optimizers,
    store: &StatsStore,
    net: &RoadNetwork,
    partition: &[Trajectory],
    cfg: &TrainConfig,
    eval: &mut dyn FnMut(&Model) -> Result<f64>,
) -> Result<JointReport> {
    let warm = pretrain(model, opts, store, net, partition, cfg)?;
    let mut report = joint_train(model, opts, store, net, partition, cfg, eval)?;
    report.log.splice(0..0, warm);
    Ok(report)
}
