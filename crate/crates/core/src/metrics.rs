//! Subtrajectory-level evaluation: per-trajectory Jaccard, precision,
//! recall, F1 and the thresholded TF1.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::detector::runs_of_ones;
use crate::error::{Error, Result};
use crate::trajio::Label;

pub const DEFAULT_PHI: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub id: String,
    pub truth: Vec<Label>,
    pub detected: Vec<Label>,
}

/// Ground-truth and detected label sequences, one entry per trajectory.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabeledCorpus {
    pairs: Vec<LabeledPair>,
}

impl LabeledCorpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(
        &mut self,
        id: impl Into<String>,
        truth: Vec<Label>,
        detected: Vec<Label>,
    ) -> Result<()> {
        let pair = LabeledPair {
            id: id.into(),
            truth,
            detected,
        };
        validate(&pair)?;
        self.pairs.push(pair);
        Ok(())
    }

    pub fn pairs(&self) -> &[LabeledPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn validate(p: &LabeledPair) -> Result<()> {
    if p.truth.len() != p.detected.len() {
        return Err(Error::Validation(format!(
            "trajectory {:?}: ground truth has {} labels, detection has {}",
            p.id,
            p.truth.len(),
            p.detected.len()
        )));
    }
    for (what, seq) in [("ground truth", &p.truth), ("detection", &p.detected)] {
        if let Some(&bad) = seq.iter().find(|&&l| l > 1) {
            return Err(Error::Validation(format!(
                "trajectory {:?}: {what} label {bad} is not 0 or 1",
                p.id
            )));
        }
        if seq.first() == Some(&1) || seq.last() == Some(&1) {
            return Err(Error::Validation(format!(
                "trajectory {:?}: {what} marks an endpoint anomalous",
                p.id
            )));
        }
    }
    Ok(())
}

/// |a ∩ b| / |a ∪ b|; 0 when both are empty.
pub fn jaccard(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn ones(labels: &[Label]) -> BTreeSet<usize> {
    labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == 1)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajScore {
    pub id: String,
    pub jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub j: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tf1: f64,
    pub phi: f64,
    pub c_g: usize,
    pub c_o: usize,
    pub per_traj: Vec<TrajScore>,
}

fn prf(j: f64, c_g: usize, c_o: usize) -> (f64, f64, f64) {
    let p = if c_o == 0 { 0.0 } else { j / c_o as f64 };
    let r = if c_g == 0 { 0.0 } else { j / c_g as f64 };
    let f = if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    (p, r, f)
}

pub fn evaluate(corpus: &LabeledCorpus, phi: f64) -> Result<EvalReport> {
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::Config(format!("phi must be in [0,1], got {phi}")));
    }
    let (mut j, mut jt) = (0.0, 0.0);
    let (mut c_g, mut c_o) = (0, 0);
    let mut per_traj = Vec::new();
    for p in corpus.pairs() {
        c_g += runs_of_ones(&p.truth).len();
        c_o += runs_of_ones(&p.detected).len();
        let gt = ones(&p.truth);
        if gt.is_empty() {
            continue;
        }
        let jj = jaccard(&gt, &ones(&p.detected));
        j += jj;
        if jj > phi {
            jt += 1.0;
        }
        per_traj.push(TrajScore {
            id: p.id.clone(),
            jaccard: jj,
        });
    }
    let (precision, recall, f1) = prf(j, c_g, c_o);
    let tf1 = prf(jt, c_g, c_o).2;
    Ok(EvalReport {
        j,
        precision,
        recall,
        f1,
        tf1,
        phi,
        c_g,
        c_o,
        per_traj,
    })
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>10}", "metric", "value")?;
        for (name, v) in [
            ("J", self.j),
            ("precision", self.precision),
            ("recall", self.recall),
            ("F1", self.f1),
            ("TF1", self.tf1),
        ] {
            writeln!(f, "{name:<10} {v:>10.4}")?;
        }
        writeln!(f, "{:<10} {:>10}", "|C_g|", self.c_g)?;
        write!(f, "{:<10} {:>10}", "|C_o|", self.c_o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard(&set(&[3, 4, 5]), &set(&[3, 4, 5])), 1.0);
        assert_eq!(jaccard(&set(&[3, 4, 5]), &set(&[4, 5])), 2.0 / 3.0);
        assert_eq!(jaccard(&set(&[3, 4, 5]), &set(&[])), 0.0);
    }

    #[test]
    fn fragmented_detection() {
        let mut c = LabeledCorpus::new();
        c.push("t", vec![0, 0, 0, 1, 1, 1, 0], vec![0, 0, 0, 1, 0, 1, 0])
            .unwrap();
        let r = evaluate(&c, 0.5).unwrap();
        assert_eq!((r.c_g, r.c_o), (1, 2));
        assert!((r.j - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.precision - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.f1 - 4.0 / 9.0).abs() < 1e-12);
        assert!((r.tf1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_silent() {
        let mut c = LabeledCorpus::new();
        c.push("a", vec![0, 1, 1, 0], vec![0, 1, 1, 0]).unwrap();
        c.push("b", vec![0, 0, 0], vec![0, 0, 0]).unwrap();
        let r = evaluate(&c, 0.5).unwrap();
        assert_eq!((r.precision, r.recall, r.f1, r.tf1), (1.0, 1.0, 1.0, 1.0));

        let mut s = LabeledCorpus::new();
        s.push("a", vec![0, 1, 1, 0], vec![0, 0, 0, 0]).unwrap();
        let r = evaluate(&s, 0.5).unwrap();
        assert_eq!((r.recall, r.f1), (0.0, 0.0));
    }

    #[test]
    fn length_mismatch_names_trajectory() {
        let mut c = LabeledCorpus::new();
        let err = c.push("trip-9", vec![0, 0, 0], vec![0, 0]).unwrap_err();
        assert!(err.to_string().contains("trip-9"));
    }
}
