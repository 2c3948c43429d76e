//! Map-matched trajectories: data model, JSONL ingestion, streaming replay,
//! and the detection-output record format.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roadnet::{RoadNetwork, SegmentId};

/// Per-segment label: 0 = normal, 1 = anomalous.
pub type Label = u8;

pub const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SdPair {
    pub source: SegmentId,
    pub destination: SegmentId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    /// Start time, epoch seconds.
    pub start: i64,
    pub segments: Vec<SegmentId>,
    /// Ground truth, evaluation only.
    pub labels: Option<Vec<Label>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn sd_pair(&self) -> SdPair {
        SdPair {
            source: self.segments[0],
            destination: *self.segments.last().expect("trajectory has segments"),
        }
    }

    /// Yields `(index, segment)` one at a time, in order.
    pub fn stream(&self) -> impl Iterator<Item = (usize, SegmentId)> + '_ {
        self.segments.iter().copied().enumerate()
    }

    /// Checks length, adjacency and ground-truth shape against `net`.
    pub fn validate(&self, net: &RoadNetwork) -> Result<()> {
        if self.segments.len() < 2 {
            return Err(Error::Validation(format!(
                "trajectory {:?} too short ({} segments)",
                self.id,
                self.segments.len()
            )));
        }
        for (i, w) in self.segments.windows(2).enumerate() {
            if !net.is_adjacent(w[0], w[1])? {
                return Err(Error::Validation(format!(
                    "trajectory {:?}: segments at {} and {} are not adjacent",
                    self.id,
                    i,
                    i + 1
                )));
            }
        }
        if let Some(labels) = &self.labels {
            let n = self.segments.len();
            if labels.len() != n {
                return Err(Error::Validation(format!(
                    "trajectory {:?}: {} labels for {} segments",
                    self.id,
                    labels.len(),
                    n
                )));
            }
            if labels.iter().any(|&l| l > 1) {
                return Err(Error::Validation(format!(
                    "trajectory {:?}: labels must be 0 or 1",
                    self.id
                )));
            }
            if labels[0] != 0 || labels[n - 1] != 0 {
                return Err(Error::Validation(format!(
                    "trajectory {:?}: source and destination labels must be 0",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// Maps an epoch timestamp to a slot of the (offset-shifted) UTC day.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotClock {
    slots_per_day: usize,
    offset_secs: i64,
}

impl SlotClock {
    pub fn new(slots_per_day: usize, offset_secs: i64) -> Result<Self> {
        if !(1..=24).contains(&slots_per_day) || 24 % slots_per_day != 0 {
            return Err(Error::Config(format!(
                "slots_per_day must divide 24, got {slots_per_day}"
            )));
        }
        Ok(SlotClock {
            slots_per_day,
            offset_secs,
        })
    }

    pub fn slots_per_day(&self) -> usize {
        self.slots_per_day
    }

    pub fn offset_secs(&self) -> i64 {
        self.offset_secs
    }

    pub fn slot(&self, t: i64) -> usize {
        let width = SECONDS_PER_DAY / self.slots_per_day as i64;
        ((t + self.offset_secs).rem_euclid(SECONDS_PER_DAY) / width) as usize
    }
}

/// Slot index of `t` within a UTC day split into `slots_per_day` slots.
pub fn time_slot(t: i64, slots_per_day: usize) -> Result<usize> {
    Ok(SlotClock::new(slots_per_day, 0)?.slot(t))
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRecord {
    id: String,
    start: i64,
    segments: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<Label>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejected {
    pub line: usize,
    pub id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct LoadReport {
    pub trajectories: Vec<Trajectory>,
    pub rejected: Vec<Rejected>,
}

fn parse_record(line: &str, lineno: usize, net: &RoadNetwork) -> Result<Trajectory> {
    let rec: TrajectoryRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: lineno,
        message: e.to_string(),
    })?;
    let segments = rec
        .segments
        .iter()
        .map(|s| net.segment_id(s))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Validation(format!("trajectory {:?}: {e}", rec.id)))?;
    let traj = Trajectory {
        id: rec.id,
        start: rec.start,
        segments,
        labels: rec.labels,
    };
    traj.validate(net)?;
    Ok(traj)
}

/// Reads trajectory JSONL. With `strict`, the first bad record is fatal;
/// otherwise bad records are skipped and reported.
pub fn load_trajectories<R: BufRead>(
    reader: R,
    net: &RoadNetwork,
    strict: bool,
) -> Result<LoadReport> {
    let mut report = LoadReport::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(&line, lineno, net) {
            Ok(t) => report.trajectories.push(t),
            Err(e) if strict => return Err(e),
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|s| s.as_str()).map(String::from));
                log::warn!("skipping trajectory record at line {lineno}: {e}");
                report.rejected.push(Rejected {
                    line: lineno,
                    id,
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok(report)
}

pub fn trajectory_to_json(traj: &Trajectory, net: &RoadNetwork) -> Result<String> {
    let rec = TrajectoryRecord {
        id: traj.id.clone(),
        start: traj.start,
        segments: traj
            .segments
            .iter()
            .map(|&s| net.segment_name(s).map(String::from))
            .collect::<Result<_>>()?,
        labels: traj.labels.clone(),
    };
    Ok(serde_json::to_string(&rec)?)
}

pub fn write_trajectories<W: Write>(
    mut writer: W,
    trajectories: &[Trajectory],
    net: &RoadNetwork,
) -> Result<()> {
    for t in trajectories {
        writeln!(writer, "{}", trajectory_to_json(t, net)?)?;
    }
    Ok(())
}

/// Output of the online detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum DetectionEvent {
    Anomaly {
        traj: String,
        start_idx: usize,
        end_idx: usize,
        segments: Vec<String>,
    },
    Normal {
        traj: String,
    },
    Warning {
        traj: String,
        code: String,
        message: String,
    },
}

impl DetectionEvent {
    pub fn traj(&self) -> &str {
        match self {
            DetectionEvent::Anomaly { traj, .. }
            | DetectionEvent::Normal { traj }
            | DetectionEvent::Warning { traj, .. } => traj,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roadnet::Vertex;

    fn chain() -> RoadNetwork {
        let vs = ["a", "b", "c", "d"]
            .into_iter()
            .map(|id| Vertex {
                id: id.into(),
                x: 0.0,
                y: 0.0,
            })
            .collect();
        RoadNetwork::from_records(
            vs,
            [
                ("e1", "a", "b", 1.0),
                ("e2", "b", "c", 1.0),
                ("e3", "c", "d", 1.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn slot_examples() {
        assert_eq!(time_slot(32_400, 24).unwrap(), 9);
        assert_eq!(time_slot(32_400 + 600, 24).unwrap(), 9);
        assert_eq!(time_slot(32_400 + 1_800, 24).unwrap(), 9);
        for s in [1, 2, 3, 4, 6, 8, 12, 24] {
            assert_eq!(time_slot(0, s).unwrap(), 0);
        }
        assert!(matches!(time_slot(0, 5), Err(Error::Config(_))));
        assert!(matches!(time_slot(0, 0), Err(Error::Config(_))));
        assert!(matches!(time_slot(0, 48), Err(Error::Config(_))));
    }

    #[test]
    fn slot_offset_shifts_day() {
        let clock = SlotClock::new(24, 8 * 3600).unwrap();
        assert_eq!(clock.slot(3600), 9);
        assert_eq!(clock.slot(-3600), 7);
    }

    #[test]
    fn accepts_adjacent_and_rejects_short() {
        let net = chain();
        let text = "{\"id\":\"t1\",\"start\":0,\"segments\":[\"e1\",\"e2\"]}\n\
                    {\"id\":\"t2\",\"start\":0,\"segments\":[\"e1\"]}\n\
                    {\"id\":\"t3\",\"start\":0,\"segments\":[\"e1\",\"e3\"]}\n";
        let report = load_trajectories(text.as_bytes(), &net, false).unwrap();
        assert_eq!(report.trajectories.len(), 1);
        assert_eq!(report.rejected.len(), 2);
        assert!(report.rejected[0].reason.contains("too short"));
        assert_eq!(report.rejected[1].id.as_deref(), Some("t3"));
        assert!(load_trajectories(text.as_bytes(), &net, true).is_err());
    }

    #[test]
    fn rejects_bad_ground_truth() {
        let net = chain();
        let text =
            "{\"id\":\"t\",\"start\":0,\"segments\":[\"e1\",\"e2\",\"e3\"],\"labels\":[1,0,0]}";
        assert!(load_trajectories(text.as_bytes(), &net, true).is_err());
        let text =
            "{\"id\":\"t\",\"start\":0,\"segments\":[\"e1\",\"e2\",\"e3\"],\"labels\":[0,0]}";
        assert!(load_trajectories(text.as_bytes(), &net, true).is_err());
    }

    #[test]
    fn stream_is_lazy_and_ordered() {
        let net = chain();
        let t = Trajectory {
            id: "t".into(),
            start: 0,
            segments: vec![
                net.segment_id("e1").unwrap(),
                net.segment_id("e2").unwrap(),
                net.segment_id("e3").unwrap(),
            ],
            labels: None,
        };
        let items: Vec<_> = t.stream().collect();
        assert_eq!(
            items,
            vec![(0, t.segments[0]), (1, t.segments[1]), (2, t.segments[2])]
        );

        let mut produced = 0;
        let mut it = t.stream().inspect(|_| produced += 1);
        it.next();
        drop(it);
        assert_eq!(produced, 1);
    }

    #[test]
    fn event_wire_format() {
        let e = DetectionEvent::Anomaly {
            traj: "t".into(),
            start_idx: 1,
            end_idx: 2,
            segments: vec!["e2".into(), "e3".into()],
        };
        assert_eq!(
            e.to_json(),
            r#"{"event":"anomaly","traj":"t","start_idx":1,"end_idx":2,"segments":["e2","e3"]}"#
        );
        let n = DetectionEvent::Normal { traj: "t".into() };
        assert_eq!(n.to_json(), r#"{"event":"normal","traj":"t"}"#);
        let back: DetectionEvent = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(back, e);
    }
}
