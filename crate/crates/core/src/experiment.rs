//! End-to-end protocols: training from a corpus, evaluation against ground
//! truth, the frequency baseline, history drop (cold start), partitioned
//! online learning (concept drift), and per-point latency.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::asdnet::{fine_tune, joint_train, pretrain, JointReport, LogRecord, TrainConfig};
use crate::detector::{
    detect_frequency_baseline, detect_trajectory, DetectionSession, DetectorConfig,
};
use crate::error::{Error, Result};
use crate::groupstats::{StatsStore, DEFAULT_ALPHA, DEFAULT_DELTA};
use crate::metrics::{evaluate, EvalReport, LabeledCorpus, DEFAULT_PHI};
use crate::model::{Model, Optimizers};
use crate::rng;
use crate::roadnet::RoadNetwork;
use crate::rsrnet::Dims;
use crate::trajio::{SlotClock, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub alpha: f64,
    pub delta: f64,
    pub slots_per_day: usize,
    pub phi: f64,
    pub dims: Dims,
    pub detector: DetectorSettings,
    pub train: TrainConfig,
    /// Share of the labeled training trajectories held back for model
    /// selection during joint training.
    pub valid_frac: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorSettings {
    pub delay: usize,
}

impl PipelineConfig {
    pub fn detector_config(&self) -> DetectorConfig {
        DetectorConfig {
            delay: self.detector.delay,
            ..DetectorConfig::default()
        }
    }

    pub fn clock(&self) -> Result<SlotClock> {
        SlotClock::new(self.slots_per_day, 0)
    }

    pub fn build_store(&self, history: &[Trajectory]) -> Result<StatsStore> {
        StatsStore::build(history, self.clock()?, self.alpha, self.delta)
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            alpha: DEFAULT_ALPHA,
            delta: DEFAULT_DELTA,
            slots_per_day: 24,
            phi: DEFAULT_PHI,
            dims: Dims::DESK,
            detector: DetectorSettings {
                delay: crate::detector::DEFAULT_DELAY,
            },
            train: TrainConfig::default(),
            valid_frac: 0.1,
        }
    }
}

/// Seeded shuffle, then the first `frac` share goes to the second half.
pub fn split(
    trajs: &[Trajectory],
    frac: f64,
    seed: u64,
    name: &str,
) -> (Vec<Trajectory>, Vec<Trajectory>) {
    let mut order: Vec<usize> = (0..trajs.len()).collect();
    order.shuffle(&mut rng::substream(seed, name));
    let k = ((trajs.len() as f64) * frac).round() as usize;
    let (held, kept) = order.split_at(k.min(trajs.len()));
    let pick = |idx: &[usize]| {
        let mut v: Vec<usize> = idx.to_vec();
        v.sort_unstable();
        v.into_iter().map(|i| trajs[i].clone()).collect::<Vec<_>>()
    };
    (pick(kept), pick(held))
}

fn truth(t: &Trajectory) -> Result<Vec<u8>> {
    t.labels.clone().ok_or_else(|| {
        Error::Validation(format!("trajectory {:?} has no ground-truth labels", t.id))
    })
}

/// Runs the online detector over `trajs` and scores it against their labels.
pub fn evaluate_model(
    model: &Model,
    store: &StatsStore,
    net: &RoadNetwork,
    trajs: &[Trajectory],
    cfg: DetectorConfig,
    phi: f64,
) -> Result<EvalReport> {
    let mut corpus = LabeledCorpus::new();
    for t in trajs {
        let d = detect_trajectory(model, store, net, t, cfg)?;
        corpus.push(t.id.clone(), truth(t)?, d.labels)?;
    }
    evaluate(&corpus, phi)
}

/// Scores the transition-frequency baseline (noisy labels as detections).
pub fn evaluate_baseline(
    store: &StatsStore,
    net: &RoadNetwork,
    trajs: &[Trajectory],
    phi: f64,
) -> Result<EvalReport> {
    let mut corpus = LabeledCorpus::new();
    for t in trajs {
        let d = detect_frequency_baseline(store, net, t)?;
        corpus.push(t.id.clone(), truth(t)?, d.labels)?;
    }
    evaluate(&corpus, phi)
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Model,
    pub optimizers: Optimizers,
    pub pretrain_log: Vec<LogRecord>,
    pub joint: JointReport,
}

/// Initializes a model, pretrains it on noisy labels of `train` and trains
/// it jointly, selecting the best F1 on `valid` (labeled).
pub fn train_model(
    net: &RoadNetwork,
    store: &StatsStore,
    train: &[Trajectory],
    valid: &[Trajectory],
    cfg: &PipelineConfig,
) -> Result<Trained> {
    let mut init = rng::substream(cfg.train.seed, "init");
    let mut model = Model::init(net.num_segments(), cfg.dims, &mut init);
    let mut opts = Optimizers::new(&model, cfg.train.lr_rsr, cfg.train.lr_policy);
    let pretrain_log = pretrain(&mut model, &mut opts, store, net, train, &cfg.train)?;
    let joint = continue_training(&mut model, &mut opts, store, net, train, valid, cfg)?;
    Ok(Trained {
        model,
        optimizers: opts,
        pretrain_log,
        joint,
    })
}

/// Joint training from the current state, model selection on `valid`.
pub fn continue_training(
    model: &mut Model,
    opts: &mut Optimizers,
    store: &StatsStore,
    net: &RoadNetwork,
    train: &[Trajectory],
    valid: &[Trajectory],
    cfg: &PipelineConfig,
) -> Result<JointReport> {
    let det = cfg.detector_config();
    let mut eval = |m: &Model| -> Result<f64> {
        if valid.is_empty() {
            return Ok(0.0);
        }
        Ok(evaluate_model(m, store, net, valid, det, cfg.phi)?.f1)
    };
    joint_train(model, opts, store, net, train, &cfg.train, &mut eval)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColdStartRow {
    pub drop_rate: f64,
    pub f1: f64,
    pub tf1: f64,
    /// Evaluated trajectories whose group vanished from the history.
    pub cold_trajectories: usize,
}

/// Re-evaluates `model` with history thinned at each rate.
#[allow(clippy::too_many_arguments)]
pub fn cold_start_table(
    model: &Model,
    store: &StatsStore,
    net: &RoadNetwork,
    test: &[Trajectory],
    rates: &[f64],
    seed: u64,
    cfg: DetectorConfig,
    phi: f64,
) -> Result<Vec<ColdStartRow>> {
    rates
        .iter()
        .map(|&rate| {
            let thinned = store.drop_history(rate, seed)?;
            let report = evaluate_model(model, &thinned, net, test, cfg, phi)?;
            let cold = test
                .iter()
                .filter(|t| thinned.group(&thinned.key_of(t)).is_err())
                .count();
            Ok(ColdStartRow {
                drop_rate: rate,
                f1: report.f1,
                tf1: report.tf1,
                cold_trajectories: cold,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftRow {
    pub part: usize,
    pub trajectories: usize,
    pub frozen_f1: f64,
    pub fine_tuned_f1: f64,
}

/// Splits `trajs` by start time into `xi` equal partitions. Each partition
/// is divided into a training and a test share (`test_frac`). A model is
/// trained on partition 1; the frozen copy keeps partition 1's history,
/// while the fine-tuned copy rebuilds history from each later partition
/// and continues training on it. Both are scored on every partition's test
/// share.
pub fn drift_experiment(
    net: &RoadNetwork,
    trajs: &[Trajectory],
    xi: usize,
    test_frac: f64,
    cfg: &PipelineConfig,
) -> Result<Vec<DriftRow>> {
    if xi < 1 {
        return Err(Error::Config("xi must be at least 1".into()));
    }
    if trajs.len() < xi {
        return Err(Error::Config(format!(
            "cannot split {} trajectories into {xi} partitions",
            trajs.len()
        )));
    }
    let mut sorted = trajs.to_vec();
    sorted.sort_by(|a, b| a.start.cmp(&b.start).then_with(|| a.id.cmp(&b.id)));
    let size = sorted.len() / xi;
    let parts: Vec<&[Trajectory]> = (0..xi)
        .map(|k| {
            let end = if k + 1 == xi {
                sorted.len()
            } else {
                (k + 1) * size
            };
            &sorted[k * size..end]
        })
        .collect();

    let det = cfg.detector_config();
    let mut rows = Vec::with_capacity(xi);
    let mut frozen: Option<(Model, StatsStore)> = None;
    let mut tuned: Option<(Model, Optimizers)> = None;
    for (k, part) in parts.iter().enumerate() {
        let (train, test) = split(part, test_frac, cfg.train.seed, &format!("drift/test/{k}"));
        let (fit, valid) = split(
            &train,
            cfg.valid_frac,
            cfg.train.seed,
            &format!("drift/valid/{k}"),
        );
        let store = cfg.build_store(part)?;
        let ft_model = match (&frozen, tuned.take()) {
            (None, _) => {
                let t = train_model(net, &store, &fit, &valid, cfg)?;
                frozen = Some((t.model.clone(), store.clone()));
                tuned = Some((t.model.clone(), t.optimizers));
                t.model
            }
            (Some(_), Some((mut m, mut o))) => {
                let mut part_cfg = cfg.clone();
                part_cfg.train.seed = rng::derive_seed(cfg.train.seed, &format!("drift/{k}"));
                let det = part_cfg.detector_config();
                let mut eval = |m: &Model| -> Result<f64> {
                    if valid.is_empty() {
                        return Ok(0.0);
                    }
                    Ok(evaluate_model(m, &store, net, &valid, det, cfg.phi)?.f1)
                };
                fine_tune(
                    &mut m,
                    &mut o,
                    &store,
                    net,
                    &fit,
                    &part_cfg.train,
                    &mut eval,
                )?;
                tuned = Some((m.clone(), o));
                m
            }
            (Some(_), None) => unreachable!("fine-tuned state exists after partition 1"),
        };
        let (fm, fs) = frozen.as_ref().expect("set on partition 1");
        let frozen_f1 = evaluate_model(fm, fs, net, &test, det, cfg.phi)?.f1;
        let fine_tuned_f1 = evaluate_model(&ft_model, &store, net, &test, det, cfg.phi)?.f1;
        log::info!(
            "partition {}: frozen f1 {frozen_f1:.4}, fine-tuned f1 {fine_tuned_f1:.4}",
            k + 1
        );
        rows.push(DriftRow {
            part: k + 1,
            trajectories: part.len(),
            frozen_f1,
            fine_tuned_f1,
        });
    }
    Ok(rows)
}

/// Trajectory length groups: G1 < 15 <= G2 < 30 <= G3 < 45 <= G4.
pub fn length_group(len: usize) -> usize {
    match len {
        0..=14 => 0,
        15..=29 => 1,
        30..=44 => 2,
        _ => 3,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyGroup {
    pub group: String,
    pub trajectories: usize,
    pub points: usize,
    pub median_us: f64,
    pub p99_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub groups: Vec<LatencyGroup>,
    pub median_us: f64,
    pub p99_us: f64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

/// Wall-clock time per pushed point, grouped by trajectory length. Every
/// trajectory is replayed `repeats` times; the first replay warms caches
/// and is discarded.
pub fn bench(
    model: &Model,
    store: &StatsStore,
    net: &RoadNetwork,
    trajs: &[Trajectory],
    cfg: DetectorConfig,
    repeats: usize,
) -> Result<BenchReport> {
    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); 4];
    let mut counts = [0usize; 4];
    for t in trajs {
        let g = length_group(t.len());
        counts[g] += 1;
        for rep in 0..=repeats {
            let mut s = DetectionSession::open(model, store, net, &t.id, t.sd_pair(), t.start, cfg);
            let n = t.len();
            for (i, seg) in t.stream() {
                let t0 = Instant::now();
                let ev = s.push_point(seg, i + 1 == n)?;
                let dt = t0.elapsed();
                std::hint::black_box(ev);
                if rep > 0 {
                    samples[g].push(dt.as_secs_f64() * 1e6);
                }
            }
        }
    }
    let mut all = Vec::new();
    let groups = samples
        .into_iter()
        .enumerate()
        .map(|(g, mut v)| {
            v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            all.extend_from_slice(&v);
            LatencyGroup {
                group: format!("G{}", g + 1),
                trajectories: counts[g],
                points: v.len(),
                median_us: percentile(&v, 0.5),
                p99_us: percentile(&v, 0.99),
            }
        })
        .collect();
    all.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    Ok(BenchReport {
        groups,
        median_us: percentile(&all, 0.5),
        p99_us: percentile(&all, 0.99),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_groups_follow_boundaries() {
        assert_eq!(
            [1, 14, 15, 29, 30, 44, 45, 200].map(length_group),
            [0, 0, 1, 1, 2, 2, 3, 3]
        );
    }

    #[test]
    fn split_is_a_seeded_partition() {
        let trajs: Vec<Trajectory> = (0..10)
            .map(|i| Trajectory {
                id: format!("t{i}"),
                start: i,
                segments: vec![],
                labels: None,
            })
            .collect();
        let (a, b) = split(&trajs, 0.3, 4, "x");
        assert_eq!((a.len(), b.len()), (7, 3));
        let (a2, b2) = split(&trajs, 0.3, 4, "x");
        assert_eq!((a, b), (a2, b2));
    }
}
