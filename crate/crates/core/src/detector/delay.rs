//! Delayed labeling as a bounded streaming post-processor.
//!
//! When a run of 1s ends at position `b`, the run is held open while the
//! next `D` positions arrive. If any of them is labeled 1, the 0s in between
//! are rewritten to 1 and the run continues; otherwise the run is emitted.
//! At most `D` labels are pending at any time.

use crate::trajio::Label;

/// Inclusive index range of a maximal anomalous run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Run {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone)]
pub struct DelayFilter {
    delay: usize,
    finals: Vec<Label>,
    open: Option<Run>,
    // zeros after the open run's last 1, not yet final
    pending: usize,
}

impl DelayFilter {
    pub fn new(delay: usize) -> Self {
        DelayFilter {
            delay,
            finals: Vec::new(),
            open: None,
            pending: 0,
        }
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    /// Labels that can no longer change.
    pub fn finalized(&self) -> &[Label] {
        &self.finals
    }

    /// Number of labels received but not yet final.
    pub fn pending(&self) -> usize {
        self.pending
    }

    /// Feeds the next raw label; returns a run if one was closed.
    pub fn push(&mut self, label: Label) -> Option<Run> {
        let pos = self.finals.len() + self.pending;
        match (label, self.open.as_mut()) {
            (1, Some(run)) => {
                self.finals.extend(std::iter::repeat_n(1, self.pending + 1));
                self.pending = 0;
                run.end = pos;
                None
            }
            (1, None) => {
                self.finals.push(1);
                self.open = Some(Run {
                    start: pos,
                    end: pos,
                });
                None
            }
            (_, Some(_)) => {
                self.pending += 1;
                if self.pending >= self.delay {
                    self.close()
                } else {
                    None
                }
            }
            (_, None) => {
                self.finals.push(0);
                None
            }
        }
    }

    /// End of stream: every pending label becomes final.
    pub fn finish(&mut self) -> Option<Run> {
        self.close()
    }

    fn close(&mut self) -> Option<Run> {
        self.finals.extend(std::iter::repeat_n(0, self.pending));
        self.pending = 0;
        self.open.take()
    }
}

/// Runs a whole label sequence through a filter.
pub fn apply_delay(labels: &[Label], delay: usize) -> (Vec<Label>, Vec<Run>) {
    let mut f = DelayFilter::new(delay);
    let mut runs: Vec<Run> = labels.iter().filter_map(|&l| f.push(l)).collect();
    runs.extend(f.finish());
    (f.finals, runs)
}

/// Maximal runs of 1s.
pub fn runs_of_ones(labels: &[Label]) -> Vec<Run> {
    apply_delay(labels, 0).1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_delay_extracts_raw_runs() {
        let (finals, runs) = apply_delay(&[0, 1, 1, 0, 0], 0);
        assert_eq!(finals, vec![0, 1, 1, 0, 0]);
        assert_eq!(runs, vec![Run { start: 1, end: 2 }]);
    }

    #[test]
    fn short_gap_is_filled() {
        let (finals, runs) = apply_delay(&[0, 1, 0, 0, 1, 0], 3);
        assert_eq!(finals, vec![0, 1, 1, 1, 1, 0]);
        assert_eq!(runs, vec![Run { start: 1, end: 4 }]);
    }

    #[test]
    fn gap_at_window_edge() {
        // boundary at 1, window covers positions 2..=3; the 1 at 4 is outside
        let (finals, runs) = apply_delay(&[0, 1, 0, 0, 1, 0], 2);
        assert_eq!(finals, vec![0, 1, 0, 0, 1, 0]);
        assert_eq!(runs.len(), 2);
    }

    #[test]
    fn pending_is_bounded() {
        let mut f = DelayFilter::new(4);
        for l in [0, 1, 0, 0, 0] {
            f.push(l);
            assert!(f.pending() <= 4);
        }
        assert_eq!(f.finalized(), &[0, 1]);
        assert_eq!(f.push(0), Some(Run { start: 1, end: 1 }));
        assert_eq!(f.finalized(), &[0, 1, 0, 0, 0, 0]);
    }
}
