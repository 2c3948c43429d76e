//! Deterministic labeling from road-network degrees.

use crate::error::{Error, Result};
use crate::roadnet::{RoadNetwork, SegmentId};
use crate::trajio::Label;

/// The rule table over `(out degree of the previous segment, in degree of the
/// current segment, previous label)`. `None` means the rules do not decide.
///
/// 1. out = 1, in = 1: the label carries over.
/// 2. out = 1, in > 1, previous 0: stays 0.
/// 3. out > 1, in = 1, previous 1: stays 1.
#[inline]
pub fn rnel_rule(out_prev: usize, in_cur: usize, prev_label: Label) -> Option<Label> {
    match (out_prev, in_cur, prev_label) {
        (1, 1, l) => Some(l),
        (1, i, 0) if i > 1 => Some(0),
        (o, 1, 1) if o > 1 => Some(1),
        _ => None,
    }
}

pub fn rnel_decide(
    net: &RoadNetwork,
    prev: SegmentId,
    cur: SegmentId,
    prev_label: Label,
) -> Result<Option<Label>> {
    if !net.is_adjacent(prev, cur)? {
        return Err(Error::Contract(format!(
            "segments {prev} and {cur} are not adjacent"
        )));
    }
    Ok(rnel_rule(
        net.out_degree(prev)?,
        net.in_degree(cur)?,
        prev_label,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roadnet::Vertex;

    #[test]
    fn rule_examples() {
        assert_eq!(rnel_rule(1, 1, 1), Some(1));
        assert_eq!(rnel_rule(1, 1, 0), Some(0));
        assert_eq!(rnel_rule(1, 3, 0), Some(0));
        assert_eq!(rnel_rule(1, 3, 1), None);
        assert_eq!(rnel_rule(2, 1, 1), Some(1));
        assert_eq!(rnel_rule(2, 1, 0), None);
        assert_eq!(rnel_rule(2, 2, 0), None);
        assert_eq!(rnel_rule(2, 2, 1), None);
    }

    #[test]
    fn decide_on_network() {
        let vs = ["a", "b", "c", "d"]
            .into_iter()
            .map(|id| Vertex {
                id: id.into(),
                x: 0.0,
                y: 0.0,
            })
            .collect();
        let net = RoadNetwork::from_records(
            vs,
            [
                ("ab", "a", "b", 1.0),
                ("bc", "b", "c", 1.0),
                ("cd", "c", "d", 1.0),
            ],
        )
        .unwrap();
        let id = |s| net.segment_id(s).unwrap();
        assert_eq!(rnel_decide(&net, id("ab"), id("bc"), 1).unwrap(), Some(1));
        assert!(matches!(
            rnel_decide(&net, id("ab"), id("cd"), 0),
            Err(Error::Contract(_))
        ));
    }
}
