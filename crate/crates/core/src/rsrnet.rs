//! Road segment representation network.
//!
//! Each segment is embedded (traffic context), fed through an LSTM, and the
//! hidden state is concatenated with a one-hot normal-route feature that does
//! not pass through the LSTM: `z_i = [h_i ; onehot(nrf_i)]`. A single affine
//! layer with softmax predicts the segment's label from `z_i`.

use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::lstm::INIT_BOUND;
use crate::nn::ops::{
    cross_entropy, embed, embed_backward, linear_backward, linear_softmax, softmax_xent_grad,
};
use crate::nn::{AdamState, LstmCache, LstmParams, ParamSet, Tensor};
use crate::roadnet::{RoadNetwork, SegmentId};
use crate::trajio::Label;

pub const NRF_DIM: usize = 2;
pub const DEFAULT_LR: f64 = 0.01;

/// Layer widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub segment: usize,
    pub hidden: usize,
    pub label: usize,
}

impl Dims {
    pub const DESK: Dims = Dims {
        segment: 32,
        hidden: 32,
        label: 32,
    };
    pub const PAPER: Dims = Dims {
        segment: 128,
        hidden: 128,
        label: 128,
    };

    pub fn z(&self) -> usize {
        self.hidden + NRF_DIM
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RsrParams {
    pub embedding: Tensor,
    pub lstm: LstmParams,
    pub w_c: Tensor,
    pub b_c: Tensor,
}

/// Running LSTM state of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RsrState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl RsrState {
    pub fn zeros(hidden: usize) -> Self {
        RsrState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

#[derive(Debug, Clone)]
pub struct RsrStep {
    pub z: Vec<f64>,
    pub probs: Vec<f64>,
    pub state: RsrState,
    pub(crate) cache: LstmCache,
}

/// One supervised sequence: segments, their normal-route features, targets.
#[derive(Debug, Clone, PartialEq)]
pub struct RsrExample {
    pub segments: Vec<SegmentId>,
    pub nrf: Vec<Label>,
    pub labels: Vec<Label>,
}

fn onehot(bit: Label) -> [f64; NRF_DIM] {
    if bit == 0 {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    }
}

impl RsrParams {
    pub fn zeros(num_segments: usize, dims: Dims) -> Self {
        RsrParams {
            embedding: Tensor::zeros(&[num_segments, dims.segment]),
            lstm: LstmParams::zeros(dims.segment, dims.hidden),
            w_c: Tensor::zeros(&[2, dims.z()]),
            b_c: Tensor::zeros(&[2]),
        }
    }

    pub fn init<R: Rng>(num_segments: usize, dims: Dims, rng: &mut R) -> Self {
        RsrParams {
            embedding: Tensor::uniform(&[num_segments, dims.segment], INIT_BOUND, rng),
            lstm: LstmParams::init(dims.segment, dims.hidden, rng),
            w_c: Tensor::uniform(&[2, dims.z()], INIT_BOUND, rng),
            b_c: Tensor::zeros(&[2]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.lstm.hidden_size()
    }

    pub fn num_segments(&self) -> usize {
        self.embedding.rows()
    }

    pub fn initial_state(&self) -> RsrState {
        RsrState::zeros(self.hidden())
    }

    /// Advances one segment.
    pub fn forward_step(&self, seg: SegmentId, nrf: Label, state: &RsrState) -> Result<RsrStep> {
        let x = embed(&self.embedding, seg.index())?;
        let cache = self.lstm.step(x, &state.h, &state.c)?;
        let mut z = Vec::with_capacity(cache.h.len() + NRF_DIM);
        z.extend_from_slice(&cache.h);
        z.extend_from_slice(&onehot(nrf));
        let probs = linear_softmax(&self.w_c, &self.b_c, &z)?;
        Ok(RsrStep {
            z,
            probs,
            state: RsrState {
                h: cache.h.clone(),
                c: cache.c.clone(),
            },
            cache,
        })
    }

    /// Runs a whole sequence from the zero state.
    pub fn forward(&self, segments: &[SegmentId], nrf: &[Label]) -> Result<Vec<RsrStep>> {
        if segments.len() != nrf.len() {
            return Err(Error::Shape(format!(
                "{} segments but {} features",
                segments.len(),
                nrf.len()
            )));
        }
        let mut state = self.initial_state();
        let mut out = Vec::with_capacity(segments.len());
        for (&s, &f) in segments.iter().zip(nrf) {
            let step = self.forward_step(s, f, &state)?;
            state = step.state.clone();
            out.push(step);
        }
        Ok(out)
    }

    /// Mean cross-entropy over all positions.
    pub fn sequence_loss(
        &self,
        segments: &[SegmentId],
        nrf: &[Label],
        labels: &[Label],
    ) -> Result<f64> {
        check_labels(segments, labels)?;
        let steps = self.forward(segments, nrf)?;
        mean_loss(&steps, labels)
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(
        &self,
        segments: &[SegmentId],
        nrf: &[Label],
        labels: &[Label],
    ) -> Result<(f64, RsrParams)> {
        check_labels(segments, labels)?;
        let steps = self.forward(segments, nrf)?;
        let loss = mean_loss(&steps, labels)?;
        let n = steps.len() as f64;
        let hs = self.hidden();
        let mut grads = RsrParams {
            embedding: Tensor::zeros(self.embedding.shape()),
            lstm: LstmParams::zeros(self.lstm.input_size(), hs),
            w_c: Tensor::zeros(self.w_c.shape()),
            b_c: Tensor::zeros(self.b_c.shape()),
        };
        let mut dh_next = vec![0.0; hs];
        let mut dc_next = vec![0.0; hs];
        for (i, step) in steps.iter().enumerate().rev() {
            let mut d_logits = softmax_xent_grad(&step.probs, labels[i] as usize);
            d_logits.iter_mut().for_each(|v| *v /= n);
            let dz = linear_backward(
                &self.w_c,
                &step.z,
                &d_logits,
                &mut grads.w_c,
                &mut grads.b_c,
            );
            let dh: Vec<f64> = dz[..hs].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
            let (dx, dh_prev, dc_prev) =
                self.lstm
                    .backward(&step.cache, &dh, &dc_next, &mut grads.lstm);
            embed_backward(&mut grads.embedding, segments[i].index(), &dx);
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        Ok((loss, grads))
    }

    /// One gradient step on one sequence; returns the pre-step loss.
    pub fn train_step(&mut self, ex: &RsrExample, opt: &mut AdamState) -> Result<f64> {
        let (loss, grads) = self.loss_and_grad(&ex.segments, &ex.nrf, &ex.labels)?;
        opt.step(self, &grads, false)?;
        Ok(loss)
    }

    /// One pass over `dataset` in shuffled order, one step per sequence.
    /// Returns the mean pre-step loss.
    pub fn train_epoch<R: Rng>(
        &mut self,
        dataset: &[RsrExample],
        opt: &mut AdamState,
        rng: &mut R,
    ) -> Result<f64> {
        if dataset.is_empty() {
            return Err(Error::Contract("training on an empty dataset".into()));
        }
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(rng);
        let mut total = 0.0;
        for i in order {
            total += self.train_step(&dataset[i], opt)?;
        }
        Ok(total / dataset.len() as f64)
    }

    /// Overwrites embedding rows from JSONL `{"id": segment, "vec": [..]}`
    /// records. Returns the number of rows set.
    pub fn load_embeddings<R: BufRead>(&mut self, reader: R, net: &RoadNetwork) -> Result<usize> {
        #[derive(Deserialize)]
        struct Row {
            id: String,
            vec: Vec<f64>,
        }
        let width = self.embedding.cols();
        let mut count = 0;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Row = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            let seg = net.segment_id(&row.id)?;
            if row.vec.len() != width || row.vec.iter().any(|v| !v.is_finite()) {
                return Err(Error::Shape(format!(
                    "embedding for {:?} must hold {width} finite values",
                    row.id
                )));
            }
            self.embedding
                .row_mut(seg.index())
                .copy_from_slice(&row.vec);
            count += 1;
        }
        Ok(count)
    }
}

fn check_labels(segments: &[SegmentId], labels: &[Label]) -> Result<()> {
    if segments.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} segments but {} labels",
            segments.len(),
            labels.len()
        )));
    }
    if segments.is_empty() {
        return Err(Error::Shape("empty sequence".into()));
    }
    Ok(())
}

fn mean_loss(steps: &[RsrStep], labels: &[Label]) -> Result<f64> {
    let mut total = 0.0;
    for (s, &l) in steps.iter().zip(labels) {
        total += cross_entropy(&s.probs, l as usize)?;
    }
    Ok(total / steps.len() as f64)
}

impl ParamSet for RsrParams {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.embedding];
        v.extend(self.lstm.tensors());
        v.push(&self.w_c);
        v.push(&self.b_c);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.embedding];
        v.extend(self.lstm.tensors_mut());
        v.push(&mut self.w_c);
        v.push(&mut self.b_c);
        v
    }

    fn names(&self) -> Vec<&'static str> {
        let mut v = vec!["rsr.embedding"];
        v.extend(["rsr.lstm.w_x", "rsr.lstm.w_h", "rsr.lstm.b"]);
        v.extend(["rsr.w_c", "rsr.b_c"]);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::finite_diff_check;
    use crate::rng;

    const SMALL: Dims = Dims {
        segment: 4,
        hidden: 5,
        label: 3,
    };

    fn segs(ids: &[u32]) -> Vec<SegmentId> {
        ids.iter().map(|&i| SegmentId(i)).collect()
    }

    #[test]
    fn zero_params_predict_uniform() {
        let p = RsrParams::zeros(6, SMALL);
        let steps = p.forward(&segs(&[0, 3, 5]), &[0, 1, 0]).unwrap();
        for s in &steps {
            assert_eq!(s.probs, vec![0.5, 0.5]);
        }
        let loss = p
            .sequence_loss(&segs(&[0, 3, 5]), &[0, 1, 0], &[0, 1, 1])
            .unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn nrf_bypasses_the_lstm() {
        let mut r = rng::substream(1, "rsr");
        let p = RsrParams::init(6, SMALL, &mut r);
        let st = p.initial_state();
        let a = p.forward_step(SegmentId(2), 0, &st).unwrap();
        let b = p.forward_step(SegmentId(2), 1, &st).unwrap();
        let hs = SMALL.hidden;
        assert_eq!(a.z[..hs], b.z[..hs]);
        assert_eq!(a.state, b.state);
        assert_eq!(&a.z[hs..], &[1.0, 0.0]);
        assert_eq!(&b.z[hs..], &[0.0, 1.0]);
    }

    #[test]
    fn incremental_equals_full_sequence() {
        let mut r = rng::substream(2, "rsr");
        let p = RsrParams::init(8, SMALL, &mut r);
        let s = segs(&[1, 4, 2, 7, 0]);
        let f = [0, 1, 1, 0, 0];
        let full = p.forward(&s, &f).unwrap();
        let mut state = p.initial_state();
        for (i, (&seg, &bit)) in s.iter().zip(&f).enumerate() {
            let step = p.forward_step(seg, bit, &state).unwrap();
            assert_eq!(step.z, full[i].z);
            assert_eq!(step.probs, full[i].probs);
            state = step.state;
        }
    }

    #[test]
    fn invalid_index_and_length_mismatch() {
        let p = RsrParams::zeros(3, SMALL);
        assert!(matches!(
            p.forward_step(SegmentId(3), 0, &p.initial_state()),
            Err(Error::Index { .. })
        ));
        assert!(matches!(
            p.sequence_loss(&segs(&[0, 1]), &[0, 0], &[0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn loss_equals_direct_average() {
        let mut r = rng::substream(3, "rsr");
        let p = RsrParams::init(8, SMALL, &mut r);
        let s = segs(&[1, 4, 2, 7]);
        let f = [0, 1, 0, 0];
        let y = [0, 1, 1, 0];
        let steps = p.forward(&s, &f).unwrap();
        let direct: f64 = steps
            .iter()
            .zip(&y)
            .map(|(st, &l)| -st.probs[l as usize].ln())
            .sum::<f64>()
            / 4.0;
        let loss = p.sequence_loss(&s, &f, &y).unwrap();
        assert!((loss - direct).abs() < 1e-14);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = rng::substream(4, "rsr-grad");
        let mut p = RsrParams::init(6, SMALL, &mut r);
        for t in p.tensors_mut() {
            for v in t.data_mut() {
                *v *= 10.0;
            }
        }
        let s = segs(&[0, 3, 5, 3, 1]);
        let f = [0, 1, 1, 0, 0];
        let y = [0, 1, 1, 1, 0];
        let (_, grads) = p.loss_and_grad(&s, &f, &y).unwrap();
        let err = finite_diff_check(|q| q.sequence_loss(&s, &f, &y).unwrap(), &p, &grads, 1e-5);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut r = rng::substream(5, "rsr");
        let mut p = RsrParams::init(6, SMALL, &mut r);
        let before = p.clone();
        let ex = RsrExample {
            segments: segs(&[0, 1, 2]),
            nrf: vec![0, 1, 0],
            labels: vec![0, 1, 0],
        };
        let mut opt = AdamState::new(0.0, &p);
        let l1 = p
            .train_epoch(std::slice::from_ref(&ex), &mut opt, &mut r)
            .unwrap();
        let l2 = p.train_epoch(&[ex], &mut opt, &mut r).unwrap();
        assert_eq!(p, before);
        assert_eq!(l1, l2);
    }

    #[test]
    fn embedding_file_sets_rows() {
        use crate::roadnet::Vertex;
        let net = RoadNetwork::from_records(
            ["a", "b"]
                .into_iter()
                .map(|id| Vertex {
                    id: id.into(),
                    x: 0.0,
                    y: 0.0,
                })
                .collect(),
            [("s0", "a", "b", 1.0), ("s1", "b", "a", 1.0)],
        )
        .unwrap();
        let mut p = RsrParams::zeros(2, SMALL);
        let text = "{\"id\":\"s1\",\"vec\":[1,2,3,4]}\n";
        assert_eq!(p.load_embeddings(text.as_bytes(), &net).unwrap(), 1);
        assert_eq!(p.embedding.row(1), &[1.0, 2.0, 3.0, 4.0]);
        let bad = "{\"id\":\"s1\",\"vec\":[1,2]}\n";
        assert!(p.load_embeddings(bad.as_bytes(), &net).is_err());
    }
}
