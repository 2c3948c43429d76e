//! Historical statistics per (SD pair, time slot) group.
//!
//! A group keeps the exact routes of its member trajectories. Transition
//! counts, noisy labels, inferred normal routes and normal-route features are
//! all derived from those route counts.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::roadnet::{RoadNetwork, SegmentId};
use crate::trajio::{Label, SdPair, SlotClock, Trajectory};

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_DELTA: f64 = 0.4;

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupKey {
    pub sd: SdPair,
    pub slot: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    traj_count: usize,
    transitions: HashMap<(SegmentId, SegmentId), usize>,
    routes: BTreeMap<Vec<SegmentId>, usize>,
    // transitions occurring in at least one route with fraction > delta
    normal_transitions: HashSet<(SegmentId, SegmentId)>,
}

impl GroupStats {
    fn from_routes(routes: BTreeMap<Vec<SegmentId>, usize>, delta: f64) -> Self {
        let traj_count = routes.values().sum();
        let mut transitions = HashMap::new();
        for (route, &count) in &routes {
            let distinct: HashSet<_> = route.windows(2).map(|w| (w[0], w[1])).collect();
            for t in distinct {
                *transitions.entry(t).or_insert(0) += count;
            }
        }
        let mut g = GroupStats {
            traj_count,
            transitions,
            routes,
            normal_transitions: HashSet::new(),
        };
        g.refresh_normal(delta);
        g
    }

    fn refresh_normal(&mut self, delta: f64) {
        self.normal_transitions = self
            .normal_routes(delta)
            .flat_map(|r| r.windows(2).map(|w| (w[0], w[1])))
            .collect();
    }

    pub fn traj_count(&self) -> usize {
        self.traj_count
    }

    /// Number of member trajectories that traverse `prev -> cur` at least once.
    pub fn transition_count(&self, prev: SegmentId, cur: SegmentId) -> usize {
        self.transitions.get(&(prev, cur)).copied().unwrap_or(0)
    }

    pub fn transitions(&self) -> &HashMap<(SegmentId, SegmentId), usize> {
        &self.transitions
    }

    pub fn routes(&self) -> &BTreeMap<Vec<SegmentId>, usize> {
        &self.routes
    }

    pub fn route_fraction(&self, route: &[SegmentId]) -> f64 {
        self.routes.get(route).copied().unwrap_or(0) as f64 / self.traj_count as f64
    }

    /// Routes whose share of the group's trajectories is strictly above `delta`.
    pub fn normal_routes(&self, delta: f64) -> impl Iterator<Item = &[SegmentId]> + '_ {
        let total = self.traj_count as f64;
        self.routes
            .iter()
            .filter(move |(_, &c)| c as f64 / total > delta)
            .map(|(r, _)| r.as_slice())
    }

    /// Normal-route feature of the transition `prev -> cur` at an interior
    /// position: 0 if some inferred normal route contains it, else 1.
    #[inline]
    pub fn nrf_at(&self, prev: SegmentId, cur: SegmentId) -> Label {
        if self.normal_transitions.contains(&(prev, cur)) {
            0
        } else {
            1
        }
    }
}

/// Predecessor of a segment in a trajectory; the source is padded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prev {
    SourcePad,
    Segment(SegmentId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsStore {
    groups: BTreeMap<GroupKey, GroupStats>,
    clock: SlotClock,
    alpha: f64,
    delta: f64,
}

fn check_fraction(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in [0,1], got {v}")))
    }
}

impl StatsStore {
    pub fn build(
        trajectories: &[Trajectory],
        clock: SlotClock,
        alpha: f64,
        delta: f64,
    ) -> Result<Self> {
        check_fraction("alpha", alpha)?;
        check_fraction("delta", delta)?;
        let mut raw: BTreeMap<GroupKey, BTreeMap<Vec<SegmentId>, usize>> = BTreeMap::new();
        for t in trajectories {
            if t.segments.len() < 2 {
                return Err(Error::Validation(format!(
                    "trajectory {:?} too short",
                    t.id
                )));
            }
            let key = GroupKey {
                sd: t.sd_pair(),
                slot: clock.slot(t.start),
            };
            *raw.entry(key)
                .or_default()
                .entry(t.segments.clone())
                .or_insert(0) += 1;
        }
        Ok(Self::from_raw(raw, clock, alpha, delta))
    }

    fn from_raw(
        raw: BTreeMap<GroupKey, BTreeMap<Vec<SegmentId>, usize>>,
        clock: SlotClock,
        alpha: f64,
        delta: f64,
    ) -> Self {
        let groups = raw
            .into_iter()
            .filter(|(_, routes)| routes.values().any(|&c| c > 0))
            .map(|(k, mut routes)| {
                routes.retain(|_, c| *c > 0);
                (k, GroupStats::from_routes(routes, delta))
            })
            .collect();
        StatsStore {
            groups,
            clock,
            alpha,
            delta,
        }
    }

    /// Same statistics under different thresholds.
    pub fn with_thresholds(&self, alpha: f64, delta: f64) -> Result<Self> {
        check_fraction("alpha", alpha)?;
        check_fraction("delta", delta)?;
        let mut out = self.clone();
        out.alpha = alpha;
        out.delta = delta;
        for g in out.groups.values_mut() {
            g.refresh_normal(delta);
        }
        Ok(out)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn clock(&self) -> SlotClock {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn groups(&self) -> impl Iterator<Item = (&GroupKey, &GroupStats)> {
        self.groups.iter()
    }

    pub fn key_for(&self, sd: SdPair, start: i64) -> GroupKey {
        GroupKey {
            sd,
            slot: self.clock.slot(start),
        }
    }

    pub fn key_of(&self, traj: &Trajectory) -> GroupKey {
        self.key_for(traj.sd_pair(), traj.start)
    }

    pub fn group(&self, key: &GroupKey) -> Result<&GroupStats> {
        self.groups.get(key).ok_or_else(|| Error::GroupNotFound {
            source_id: key.sd.source.to_string(),
            destination_id: key.sd.destination.to_string(),
            slot: key.slot,
        })
    }

    pub fn transition_fraction(
        &self,
        key: &GroupKey,
        prev: Prev,
        cur: SegmentId,
        is_terminal: bool,
    ) -> Result<f64> {
        let g = self.group(key)?;
        Ok(match prev {
            Prev::SourcePad => 1.0,
            _ if is_terminal => 1.0,
            Prev::Segment(p) => g.transition_count(p, cur) as f64 / g.traj_count as f64,
        })
    }

    pub fn fractions(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        let key = self.key_of(traj);
        let n = traj.len();
        (0..n)
            .map(|i| {
                let prev = if i == 0 {
                    Prev::SourcePad
                } else {
                    Prev::Segment(traj.segments[i - 1])
                };
                self.transition_fraction(&key, prev, traj.segments[i], i == n - 1)
            })
            .collect()
    }

    /// 0 where the transition fraction is strictly above alpha, 1 otherwise.
    pub fn noisy_labels(&self, traj: &Trajectory) -> Result<Vec<Label>> {
        Ok(self
            .fractions(traj)?
            .into_iter()
            .map(|f| if f > self.alpha { 0 } else { 1 })
            .collect())
    }

    pub fn normal_routes(&self, key: &GroupKey) -> Result<Vec<Vec<SegmentId>>> {
        Ok(self
            .group(key)?
            .normal_routes(self.delta)
            .map(<[_]>::to_vec)
            .collect())
    }

    pub fn nrf(&self, traj: &Trajectory) -> Result<Vec<Label>> {
        let g = self.group(&self.key_of(traj))?;
        Ok(nrf_with(Some(g), &traj.segments))
    }

    /// Rebuilds the store after removing `floor(rate * count)` trajectories
    /// from every group, chosen uniformly at random under `seed`.
    pub fn drop_history(&self, rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::Config(format!(
                "drop rate must lie in [0,1], got {rate}"
            )));
        }
        let mut raw = BTreeMap::new();
        for (gi, (key, g)) in self.groups.iter().enumerate() {
            // 1e-9 absorbs products such as 0.7 * 10 = 6.9999...
            let drop = ((rate * g.traj_count as f64) + 1e-9).floor() as usize;
            let mut members: Vec<&Vec<SegmentId>> = g
                .routes
                .iter()
                .flat_map(|(r, &c)| std::iter::repeat_n(r, c))
                .collect();
            let mut r = rng::substream(seed, &format!("drop/{gi}"));
            members.shuffle(&mut r);
            let mut kept: BTreeMap<Vec<SegmentId>, usize> = BTreeMap::new();
            for route in members.into_iter().skip(drop.min(g.traj_count)) {
                *kept.entry(route.clone()).or_insert(0) += 1;
            }
            raw.insert(*key, kept);
        }
        Ok(Self::from_raw(raw, self.clock, self.alpha, self.delta))
    }

    pub fn save<W: Write>(&self, mut writer: W, net: &RoadNetwork) -> Result<()> {
        writer.write_all(self.to_json(net)?.as_bytes())?;
        Ok(())
    }

    pub fn to_json(&self, net: &RoadNetwork) -> Result<String> {
        let name = |s: SegmentId| net.segment_name(s).map(String::from);
        let groups = self
            .groups
            .iter()
            .map(|(k, g)| {
                Ok(GroupRecord {
                    source: name(k.sd.source)?,
                    destination: name(k.sd.destination)?,
                    slot: k.slot,
                    routes: g
                        .routes
                        .iter()
                        .map(|(r, &count)| {
                            Ok(RouteRecord {
                                count,
                                segments: r.iter().map(|&s| name(s)).collect::<Result<_>>()?,
                            })
                        })
                        .collect::<Result<_>>()?,
                })
            })
            .collect::<Result<_>>()?;
        let file = StatsFile {
            version: CHECKPOINT_VERSION,
            slots_per_day: self.clock.slots_per_day(),
            offset_secs: self.clock.offset_secs(),
            alpha: self.alpha,
            delta: self.delta,
            groups,
        };
        Ok(serde_json::to_string_pretty(&file)? + "\n")
    }

    pub fn load<R: Read>(reader: R, net: &RoadNetwork) -> Result<Self> {
        let file: StatsFile = serde_json::from_reader(reader).map_err(|e| Error::parse(&e, 0))?;
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported stats checkpoint version {}",
                file.version
            )));
        }
        check_fraction("alpha", file.alpha)?;
        check_fraction("delta", file.delta)?;
        let clock = SlotClock::new(file.slots_per_day, file.offset_secs)?;
        let mut raw = BTreeMap::new();
        for g in file.groups {
            let key = GroupKey {
                sd: SdPair {
                    source: net.segment_id(&g.source)?,
                    destination: net.segment_id(&g.destination)?,
                },
                slot: g.slot,
            };
            if key.slot >= clock.slots_per_day() {
                return Err(Error::Validation(format!("slot {} out of range", key.slot)));
            }
            let mut routes = BTreeMap::new();
            for r in g.routes {
                let segs = r
                    .segments
                    .iter()
                    .map(|s| net.segment_id(s))
                    .collect::<Result<Vec<_>>>()?;
                if segs.first() != Some(&key.sd.source) || segs.last() != Some(&key.sd.destination)
                {
                    return Err(Error::Validation(
                        "route endpoints disagree with its group".into(),
                    ));
                }
                *routes.entry(segs).or_insert(0) += r.count;
            }
            raw.insert(key, routes);
        }
        Ok(Self::from_raw(raw, clock, file.alpha, file.delta))
    }
}

/// Interior normal-route feature; unknown groups default to 1.
pub(crate) fn nrf_interior(group: Option<&GroupStats>, prev: SegmentId, cur: SegmentId) -> Label {
    match group {
        Some(g) => g.nrf_at(prev, cur),
        None => 1,
    }
}

pub(crate) fn nrf_with(group: Option<&GroupStats>, segments: &[SegmentId]) -> Vec<Label> {
    let n = segments.len();
    (0..n)
        .map(|i| {
            if i == 0 || i == n - 1 {
                0
            } else {
                nrf_interior(group, segments[i - 1], segments[i])
            }
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct RouteRecord {
    count: usize,
    segments: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct GroupRecord {
    source: String,
    destination: String,
    slot: usize,
    routes: Vec<RouteRecord>,
}

#[derive(Serialize, Deserialize)]
struct StatsFile {
    version: u32,
    slots_per_day: usize,
    offset_secs: i64,
    alpha: f64,
    delta: f64,
    groups: Vec<GroupRecord>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(i: u32) -> SegmentId {
        SegmentId(i)
    }

    fn traj(id: &str, segs: &[u32]) -> Trajectory {
        Trajectory {
            id: id.into(),
            start: 9 * 3600,
            segments: segs.iter().map(|&i| s(i)).collect(),
            labels: None,
        }
    }

    fn clock() -> SlotClock {
        SlotClock::new(24, 0).unwrap()
    }

    #[test]
    fn single_trajectory_group_is_fully_normal() {
        let t = traj("a", &[1, 2, 3, 4]);
        let store = StatsStore::build(std::slice::from_ref(&t), clock(), 0.5, 0.4).unwrap();
        assert_eq!(store.fractions(&t).unwrap(), vec![1.0; 4]);
        assert_eq!(store.noisy_labels(&t).unwrap(), vec![0; 4]);
        assert_eq!(store.nrf(&t).unwrap(), vec![0; 4]);
    }

    #[test]
    fn unseen_transition_has_zero_fraction() {
        let store = StatsStore::build(&[traj("a", &[1, 2, 3])], clock(), 0.5, 0.4).unwrap();
        let key = store.key_of(&traj("b", &[1, 7, 3]));
        let f = store
            .transition_fraction(&key, Prev::Segment(s(1)), s(7), false)
            .unwrap();
        assert_eq!(f, 0.0);
        assert_eq!(
            store
                .transition_fraction(&key, Prev::SourcePad, s(1), false)
                .unwrap(),
            1.0
        );
    }

    #[test]
    fn loops_count_once_per_trajectory() {
        let t = traj("a", &[1, 2, 1, 2, 3]);
        let store = StatsStore::build(std::slice::from_ref(&t), clock(), 0.5, 0.4).unwrap();
        let g = store.group(&store.key_of(&t)).unwrap();
        assert_eq!(g.transition_count(s(1), s(2)), 1);
        assert_eq!(g.traj_count(), 1);
    }

    #[test]
    fn missing_group_is_an_error() {
        let store = StatsStore::build(&[traj("a", &[1, 2, 3])], clock(), 0.5, 0.4).unwrap();
        let other = traj("b", &[5, 6]);
        assert!(matches!(
            store.noisy_labels(&other),
            Err(Error::GroupNotFound { .. })
        ));
        assert!(matches!(
            store.nrf(&other),
            Err(Error::GroupNotFound { .. })
        ));
    }

    #[test]
    fn empty_input_gives_empty_store() {
        let store = StatsStore::build(&[], clock(), 0.5, 0.4).unwrap();
        assert!(store.is_empty());
    }

    #[test]
    fn thresholds_are_validated() {
        assert!(matches!(
            StatsStore::build(&[], clock(), 1.5, 0.4),
            Err(Error::Config(_))
        ));
        let store = StatsStore::build(&[], clock(), 0.5, 0.4).unwrap();
        assert!(matches!(store.drop_history(-0.1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn high_delta_can_leave_no_normal_route() {
        let ts = vec![traj("a", &[1, 2, 3]), traj("b", &[1, 4, 3])];
        let store = StatsStore::build(&ts, clock(), 0.5, 0.95).unwrap();
        assert!(store
            .normal_routes(&store.key_of(&ts[0]))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn drop_history_edges() {
        let ts: Vec<_> = (0..10)
            .map(|i| {
                traj(
                    &format!("t{i}"),
                    if i < 6 { &[1, 2, 3] } else { &[1, 4, 3] },
                )
            })
            .collect();
        let store = StatsStore::build(&ts, clock(), 0.5, 0.4).unwrap();
        assert_eq!(store.drop_history(0.0, 1).unwrap(), store);
        assert!(store.drop_history(1.0, 1).unwrap().is_empty());
        let a = store.drop_history(0.5, 7).unwrap();
        let b = store.drop_history(0.5, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.groups().next().unwrap().1.traj_count(), 5);
    }
}
