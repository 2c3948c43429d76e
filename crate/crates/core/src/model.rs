//! The trainable model (representation network + policy) and its checkpoint
//! format.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::asdnet::PolicyParams;
use crate::error::{Error, Result};
use crate::nn::{AdamState, ParamSet, Tensor};
use crate::rsrnet::{Dims, RsrParams};

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub dims: Dims,
    pub rsr: RsrParams,
    pub policy: PolicyParams,
}

impl Model {
    pub fn init<R: Rng>(num_segments: usize, dims: Dims, rng: &mut R) -> Self {
        let rsr = RsrParams::init(num_segments, dims, rng);
        let policy = PolicyParams::init(dims, rng);
        Model { dims, rsr, policy }
    }

    pub fn zeros(num_segments: usize, dims: Dims) -> Self {
        Model {
            dims,
            rsr: RsrParams::zeros(num_segments, dims),
            policy: PolicyParams::zeros(dims),
        }
    }

    pub fn num_segments(&self) -> usize {
        self.rsr.num_segments()
    }
}

/// Optimizer state for both networks.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizers {
    pub rsr: AdamState,
    pub policy: AdamState,
}

impl Optimizers {
    pub fn new(model: &Model, lr_rsr: f64, lr_policy: f64) -> Self {
        Optimizers {
            rsr: AdamState::new(lr_rsr, &model.rsr),
            policy: AdamState::new(lr_policy, &model.policy),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerRecord {
    lr: f64,
    steps: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointConfig {
    dims: Dims,
    num_segments: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    optimizers: Option<BTreeMap<String, OptimizerRecord>>,
    #[serde(default)]
    meta: BTreeMap<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    config: CheckpointConfig,
    tensors: BTreeMap<String, TensorRecord>,
}

/// A model plus optional optimizer state and free-form metadata
/// (thresholds, seeds, delay) recorded alongside it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizers: Option<Optimizers>,
    pub meta: BTreeMap<String, Value>,
}

fn put<P: ParamSet>(out: &mut BTreeMap<String, TensorRecord>, prefix: &str, p: &P) {
    for (name, t) in p.names().into_iter().zip(p.tensors()) {
        out.insert(
            format!("{prefix}{name}"),
            TensorRecord {
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            },
        );
    }
}

fn put_moments<P: ParamSet>(
    out: &mut BTreeMap<String, TensorRecord>,
    tag: &str,
    p: &P,
    opt: &AdamState,
) {
    let (m, v) = opt.moments();
    for ((name, t), (mm, vv)) in p.names().into_iter().zip(p.tensors()).zip(m.iter().zip(v)) {
        for (kind, data) in [("m", mm), ("v", vv)] {
            out.insert(
                format!("adam.{tag}.{kind}/{name}"),
                TensorRecord {
                    shape: t.shape().to_vec(),
                    data: data.clone(),
                },
            );
        }
    }
}

fn take<P: ParamSet>(
    tensors: &mut BTreeMap<String, TensorRecord>,
    prefix: &str,
    p: &mut P,
) -> Result<()> {
    let names = p.names();
    for (name, slot) in names.into_iter().zip(p.tensors_mut()) {
        let key = format!("{prefix}{name}");
        let rec = tensors
            .remove(&key)
            .ok_or_else(|| Error::Validation(format!("checkpoint lacks tensor {key:?}")))?;
        let t = Tensor::new(rec.shape, rec.data)?;
        if t.shape() != slot.shape() {
            return Err(Error::Shape(format!(
                "tensor {key:?} has shape {:?}, expected {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    Ok(())
}

fn take_moments<P: ParamSet>(
    tensors: &mut BTreeMap<String, TensorRecord>,
    tag: &str,
    p: &P,
    rec: &OptimizerRecord,
) -> Result<AdamState> {
    let mut opt = AdamState::new(rec.lr, p);
    let (mut m, mut v) = (Vec::new(), Vec::new());
    for name in p.names() {
        for (kind, dst) in [("m", &mut m), ("v", &mut v)] {
            let key = format!("adam.{tag}.{kind}/{name}");
            let r = tensors
                .remove(&key)
                .ok_or_else(|| Error::Validation(format!("checkpoint lacks tensor {key:?}")))?;
            dst.push(Tensor::new(r.shape, r.data)?.data().to_vec());
        }
    }
    opt.restore(rec.steps, m, v)?;
    Ok(opt)
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Checkpoint {
            model,
            optimizers: None,
            meta: BTreeMap::new(),
        }
    }

    /// Serializes to the versioned JSON format. Keys are sorted and floats use
    /// shortest round-trip formatting, so identical state gives identical bytes.
    pub fn to_json(&self) -> Result<String> {
        let mut tensors = BTreeMap::new();
        put(&mut tensors, "", &self.model.rsr);
        put(&mut tensors, "", &self.model.policy);
        let optimizers = self.optimizers.as_ref().map(|o| {
            put_moments(&mut tensors, "rsr", &self.model.rsr, &o.rsr);
            put_moments(&mut tensors, "policy", &self.model.policy, &o.policy);
            BTreeMap::from([
                (
                    "rsr".to_string(),
                    OptimizerRecord {
                        lr: o.rsr.lr,
                        steps: o.rsr.steps(),
                    },
                ),
                (
                    "policy".to_string(),
                    OptimizerRecord {
                        lr: o.policy.lr,
                        steps: o.policy.steps(),
                    },
                ),
            ])
        });
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            config: CheckpointConfig {
                dims: self.model.dims,
                num_segments: self.model.num_segments(),
                optimizers,
                meta: self.meta.clone(),
            },
            tensors,
        };
        Ok(serde_json::to_string(&file)? + "\n")
    }

    pub fn save<W: Write>(&self, mut writer: W) -> Result<()> {
        writer.write_all(self.to_json()?.as_bytes())?;
        Ok(())
    }

    pub fn load<R: Read>(reader: R) -> Result<Self> {
        let file: CheckpointFile =
            serde_json::from_reader(reader).map_err(|e| Error::parse(&e, 0))?;
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported model checkpoint version {}",
                file.version
            )));
        }
        let cfg = file.config;
        let mut tensors = file.tensors;
        let mut model = Model::zeros(cfg.num_segments, cfg.dims);
        take(&mut tensors, "", &mut model.rsr)?;
        take(&mut tensors, "", &mut model.policy)?;
        let optimizers = match &cfg.optimizers {
            None => None,
            Some(recs) => {
                let get = |k: &str| {
                    recs.get(k)
                        .ok_or_else(|| Error::Validation(format!("missing optimizer {k:?}")))
                };
                Some(Optimizers {
                    rsr: take_moments(&mut tensors, "rsr", &model.rsr, get("rsr")?)?,
                    policy: take_moments(&mut tensors, "policy", &model.policy, get("policy")?)?,
                })
            }
        };
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Validation(format!(
                "unexpected tensor {extra:?} in checkpoint"
            )));
        }
        Ok(Checkpoint {
            model,
            optimizers,
            meta: cfg.meta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    const SMALL: Dims = Dims {
        segment: 3,
        hidden: 4,
        label: 2,
    };

    #[test]
    fn round_trip_is_exact_and_byte_stable() {
        let mut r = rng::substream(1, "ckpt");
        let model = Model::init(5, SMALL, &mut r);
        let mut opts = Optimizers::new(&model, 0.01, 0.001);
        let mut m2 = model.clone();
        let grads = m2.rsr.clone();
        opts.rsr.step(&mut m2.rsr, &grads, false).unwrap();
        let mut ck = Checkpoint::new(m2);
        ck.optimizers = Some(opts);
        ck.meta.insert("alpha".into(), Value::from(0.5));

        let text = ck.to_json().unwrap();
        let back = Checkpoint::load(text.as_bytes()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn rejects_wrong_version_and_non_finite() {
        let model = Model::zeros(2, SMALL);
        let text = Checkpoint::new(model).to_json().unwrap();
        let bumped = text.replacen("\"version\":1", "\"version\":2", 1);
        assert!(Checkpoint::load(bumped.as_bytes()).is_err());
        let truncated = &text[..text.len() / 2];
        assert!(matches!(
            Checkpoint::load(truncated.as_bytes()),
            Err(Error::Parse { .. })
        ));
    }
}
