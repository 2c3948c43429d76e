//! Per-trajectory online labeling, shared by detection and training
//! rollouts so that both produce labels the same way.

use super::rnel::rnel_decide;
use crate::error::{Error, Result};
use crate::groupstats::{nrf_interior, GroupStats};
use crate::model::Model;
use crate::rng::Rng;
use crate::roadnet::{RoadNetwork, SegmentId};
use crate::rsrnet::RsrState;
use crate::trajio::Label;

/// How the policy turns a state into a label.
#[derive(Debug, Clone)]
pub enum ActionMode {
    Greedy,
    Sample(Box<Rng>),
    /// Take the given label at every policy position (pretraining).
    Teacher(Vec<Label>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decision {
    /// Source or destination.
    Forced,
    Rule,
    Policy {
        log_prob: f64,
    },
}

#[derive(Debug, Clone)]
pub struct LabelStep {
    pub position: usize,
    pub label: Label,
    pub prev_label: Label,
    pub nrf: Label,
    pub decision: Decision,
    pub z: Vec<f64>,
    /// Representation network's label distribution at this position.
    pub probs: Vec<f64>,
}

pub struct OnlineLabeler<'a> {
    model: &'a Model,
    net: &'a RoadNetwork,
    group: Option<&'a GroupStats>,
    mode: ActionMode,
    state: RsrState,
    prev: Option<(SegmentId, Label)>,
    position: usize,
}

impl<'a> OnlineLabeler<'a> {
    /// `group = None` runs without history: interior features default to 1.
    pub fn new(
        model: &'a Model,
        net: &'a RoadNetwork,
        group: Option<&'a GroupStats>,
        mode: ActionMode,
    ) -> Self {
        OnlineLabeler {
            model,
            net,
            group,
            mode,
            state: model.rsr.initial_state(),
            prev: None,
            position: 0,
        }
    }

    pub fn position(&self) -> usize {
        self.position
    }

    pub fn push(&mut self, seg: SegmentId, is_last: bool) -> Result<LabelStep> {
        let position = self.position;
        let (nrf, prev_label, rule) = match self.prev {
            None => (0, 0, None),
            Some((prev, prev_label)) => {
                if !self.net.is_adjacent(prev, seg)? {
                    return Err(Error::Stream(format!(
                        "segment {seg} at position {position} does not follow {prev}"
                    )));
                }
                let nrf = if is_last {
                    0
                } else {
                    nrf_interior(self.group, prev, seg)
                };
                let rule = if is_last {
                    None
                } else {
                    rnel_decide(self.net, prev, seg, prev_label)?
                };
                (nrf, prev_label, rule)
            }
        };
        let step = self.model.rsr.forward_step(seg, nrf, &self.state)?;

        let (label, decision) = if position == 0 || is_last {
            (0, Decision::Forced)
        } else if let Some(l) = rule {
            (l, Decision::Rule)
        } else {
            let policy = &self.model.policy;
            let s = policy.make_state(&step.z, prev_label)?;
            let (a, log_prob) = match &mut self.mode {
                ActionMode::Greedy => policy.greedy(&s)?,
                ActionMode::Sample(rng) => policy.sample(&s, rng)?,
                ActionMode::Teacher(labels) => {
                    let a = *labels.get(position).ok_or(Error::Index {
                        index: position,
                        len: labels.len(),
                    })?;
                    (a, policy.probs(&s)?[a as usize].ln())
                }
            };
            (a, Decision::Policy { log_prob })
        };

        self.state = step.state;
        self.prev = Some((seg, label));
        self.position += 1;
        Ok(LabelStep {
            position,
            label,
            prev_label,
            nrf,
            decision,
            z: step.z,
            probs: step.probs,
        })
    }
}
