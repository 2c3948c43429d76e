//! Online anomalous-subtrajectory detection.
//!
//! A [`DetectionSession`] consumes one trajectory point by point. Each point
//! is labeled immediately (source/destination forced to 0, road-network rules
//! where they apply, the policy otherwise); labels then pass through the
//! delay filter, and closed anomalous runs are emitted as events.

pub mod delay;
pub mod labeler;
pub mod rnel;

use std::fmt;
use std::str::FromStr;

pub use delay::{apply_delay, runs_of_ones, DelayFilter, Run};
pub use labeler::{ActionMode, Decision, LabelStep, OnlineLabeler};
pub use rnel::{rnel_decide, rnel_rule};

use crate::error::{Error, Result};
use crate::groupstats::StatsStore;
use crate::model::Model;
use crate::rng;
use crate::roadnet::{RoadNetwork, SegmentId};
use crate::trajio::{DetectionEvent, Label, SdPair, Trajectory};

pub const DEFAULT_DELAY: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectMode {
    Greedy,
    Sample { seed: u64 },
}

impl FromStr for DetectMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(DetectMode::Greedy),
            "sample" => Ok(DetectMode::Sample { seed: 0 }),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

impl fmt::Display for DetectMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DetectMode::Greedy => f.write_str("greedy"),
            DetectMode::Sample { .. } => f.write_str("sample"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectorConfig {
    pub delay: usize,
    pub mode: DetectMode,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            delay: DEFAULT_DELAY,
            mode: DetectMode::Greedy,
        }
    }
}

pub struct DetectionSession<'a> {
    traj: String,
    sd: SdPair,
    net: &'a RoadNetwork,
    labeler: OnlineLabeler<'a>,
    filter: DelayFilter,
    segments: Vec<SegmentId>,
    raw: Vec<Label>,
    cold_start: bool,
    anomalies: usize,
    finished: bool,
}

impl<'a> DetectionSession<'a> {
    /// Opens a session for a trip whose SD pair and start time are known up
    /// front. A missing history group is not an error: the session falls
    /// back to all-anomalous interior features and emits a warning.
    pub fn open(
        model: &'a Model,
        store: &'a StatsStore,
        net: &'a RoadNetwork,
        traj: impl Into<String>,
        sd: SdPair,
        start: i64,
        cfg: DetectorConfig,
    ) -> Self {
        let traj = traj.into();
        let group = store.group(&store.key_for(sd, start)).ok();
        let mode = match cfg.mode {
            DetectMode::Greedy => ActionMode::Greedy,
            DetectMode::Sample { seed } => {
                ActionMode::Sample(Box::new(rng::substream(seed, &format!("detect/{traj}"))))
            }
        };
        DetectionSession {
            sd,
            net,
            labeler: OnlineLabeler::new(model, net, group, mode),
            filter: DelayFilter::new(cfg.delay),
            segments: Vec::new(),
            raw: Vec::new(),
            cold_start: group.is_none(),
            anomalies: 0,
            finished: false,
            traj,
        }
    }

    pub fn traj(&self) -> &str {
        &self.traj
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn is_cold_start(&self) -> bool {
        self.cold_start
    }

    /// Labels before delayed labeling.
    pub fn raw_labels(&self) -> &[Label] {
        &self.raw
    }

    /// Labels that are final (after delayed labeling).
    pub fn final_labels(&self) -> &[Label] {
        self.filter.finalized()
    }

    pub fn push_point(&mut self, seg: SegmentId, is_last: bool) -> Result<Vec<DetectionEvent>> {
        if self.finished {
            return Err(Error::Stream(format!(
                "trajectory {:?} already ended",
                self.traj
            )));
        }
        let position = self.segments.len();
        if position == 0 && seg != self.sd.source {
            return Err(Error::Stream(format!(
                "trajectory {:?} must start at its declared source",
                self.traj
            )));
        }
        if is_last && (position == 0 || seg != self.sd.destination) {
            return Err(Error::Stream(format!(
                "trajectory {:?} must end at its declared destination after at least two points",
                self.traj
            )));
        }
        let step = self.labeler.push(seg, is_last)?;
        self.segments.push(seg);
        self.raw.push(step.label);

        let mut events = Vec::new();
        if position == 0 && self.cold_start {
            events.push(DetectionEvent::Warning {
                traj: self.traj.clone(),
                code: "cold_start".into(),
                message: "no history for this SD pair and time slot".into(),
            });
        }
        if let Some(run) = self.filter.push(step.label) {
            events.push(self.anomaly(run)?);
        }
        if is_last {
            self.finished = true;
            if let Some(run) = self.filter.finish() {
                events.push(self.anomaly(run)?);
            }
            if self.anomalies == 0 {
                events.push(DetectionEvent::Normal {
                    traj: self.traj.clone(),
                });
            }
        }
        Ok(events)
    }

    fn anomaly(&mut self, run: Run) -> Result<DetectionEvent> {
        self.anomalies += 1;
        Ok(DetectionEvent::Anomaly {
            traj: self.traj.clone(),
            start_idx: run.start,
            end_idx: run.end,
            segments: self.segments[run.start..=run.end]
                .iter()
                .map(|&s| self.net.segment_name(s).map(String::from))
                .collect::<Result<_>>()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub raw_labels: Vec<Label>,
    pub labels: Vec<Label>,
    pub events: Vec<DetectionEvent>,
}

/// Pushes every point of `traj` through a fresh session.
pub fn detect_trajectory(
    model: &Model,
    store: &StatsStore,
    net: &RoadNetwork,
    traj: &Trajectory,
    cfg: DetectorConfig,
) -> Result<Detection> {
    let mut session =
        DetectionSession::open(model, store, net, &traj.id, traj.sd_pair(), traj.start, cfg);
    let n = traj.len();
    let mut events = Vec::new();
    for (i, seg) in traj.stream() {
        events.extend(session.push_point(seg, i + 1 == n)?);
    }
    Ok(Detection {
        raw_labels: session.raw,
        labels: session.filter.finalized().to_vec(),
        events,
    })
}

/// Events for a finished label sequence, one anomaly per maximal run.
pub fn events_from_labels(
    net: &RoadNetwork,
    traj: &Trajectory,
    labels: &[Label],
) -> Result<Vec<DetectionEvent>> {
    let runs = runs_of_ones(labels);
    if runs.is_empty() {
        return Ok(vec![DetectionEvent::Normal {
            traj: traj.id.clone(),
        }]);
    }
    runs.into_iter()
        .map(|r| {
            Ok(DetectionEvent::Anomaly {
                traj: traj.id.clone(),
                start_idx: r.start,
                end_idx: r.end,
                segments: traj.segments[r.start..=r.end]
                    .iter()
                    .map(|&s| net.segment_name(s).map(String::from))
                    .collect::<Result<_>>()?,
            })
        })
        .collect()
}

/// Transition-frequency baseline: the noisy labels themselves, split into
/// maximal runs without delayed labeling.
pub fn detect_frequency_baseline(
    store: &StatsStore,
    net: &RoadNetwork,
    traj: &Trajectory,
) -> Result<Detection> {
    let labels = store.noisy_labels(traj)?;
    let events = events_from_labels(net, traj, &labels)?;
    Ok(Detection {
        raw_labels: labels.clone(),
        labels,
        events,
    })
}
