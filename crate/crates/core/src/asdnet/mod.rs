//! Anomalous subtrajectory detection network: the labeling policy and its
//! training against the representation network.

pub mod policy;
pub mod training;

pub use policy::{
    episode_return, global_reward, local_reward, reinforce_grad, reinforce_update, Episode,
    PolicyParams, PolicyStep,
};
pub use training::{
    fine_tune, joint_train, pretrain, rollout_refined_labels, JointReport, LogRecord, Rollout,
    TrainConfig,
};
