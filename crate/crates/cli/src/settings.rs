//! Run settings: defaults, then the `--config` file, then flags.

use std::fs;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use oasd::asdnet::TrainConfig;
use oasd::detector::{DetectMode, DetectorConfig, DEFAULT_DELAY};
use oasd::experiment::{DetectorSettings, PipelineConfig};
use oasd::groupstats::{DEFAULT_ALPHA, DEFAULT_DELTA};
use oasd::metrics::DEFAULT_PHI;
use oasd::rsrnet::Dims;
use oasd::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

impl Profile {
    pub fn dims(self) -> Dims {
        match self {
            Profile::Desk => Dims::DESK,
            Profile::Paper => Dims::PAPER,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Greedy,
    Sample,
}

/// Flags shared by every command.
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// JSON settings file; flags override it
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    /// Delayed-labeling window D
    #[arg(long = "delay-d", global = true)]
    pub delay_d: Option<usize>,
    #[arg(long, global = true)]
    pub phi: Option<f64>,
    /// Time slots per day
    #[arg(long, global = true)]
    pub slots: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub profile: Option<Profile>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of time partitions for `drift`
    #[arg(long, global = true)]
    pub xi: Option<usize>,
    /// Comma-separated drop rates for `coldstart`
    #[arg(long = "drop-rates", global = true, value_delimiter = ',')]
    pub drop_rates: Option<Vec<f64>>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
}

/// Contents of a `--config` file. Every key is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileSettings {
    pub alpha: Option<f64>,
    pub delta: Option<f64>,
    pub delay_d: Option<usize>,
    pub phi: Option<f64>,
    pub slots: Option<usize>,
    pub profile: Option<Profile>,
    pub seed: Option<u64>,
    pub xi: Option<usize>,
    pub drop_rates: Option<Vec<f64>>,
    pub mode: Option<ModeArg>,
    pub lr_rsr: Option<f64>,
    pub lr_asd: Option<f64>,
    pub pretrain_trajectories: Option<usize>,
    pub pretrain_rsr_epochs: Option<usize>,
    pub pretrain_policy_epochs: Option<usize>,
    pub epochs_per_traj: Option<usize>,
    pub eval_every: Option<usize>,
    pub valid_frac: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub alpha: f64,
    pub delta: f64,
    /// True when α or δ came from a flag or the config file rather than
    /// the defaults; stored statistics are then re-thresholded.
    #[serde(skip)]
    pub thresholds_explicit: bool,
    pub delay_d: usize,
    pub phi: f64,
    pub slots: usize,
    pub profile: Profile,
    pub seed: u64,
    pub xi: usize,
    pub drop_rates: Vec<f64>,
    pub mode: ModeArg,
    pub lr_rsr: f64,
    pub lr_asd: f64,
    pub pretrain_trajectories: usize,
    pub pretrain_rsr_epochs: usize,
    pub pretrain_policy_epochs: usize,
    pub epochs_per_traj: usize,
    pub eval_every: usize,
    pub valid_frac: f64,
}

fn in_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in [0,1], got {v}")))
    }
}

impl Settings {
    pub fn resolve(g: &GlobalArgs) -> Result<Self> {
        let file = match &g.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::NotFound(format!("{}: {e}", path.display())))?;
                serde_json::from_str::<FileSettings>(&text).map_err(|e| Error::Parse {
                    line: e.line(),
                    message: format!("{}: {e}", path.display()),
                })?
            }
            None => FileSettings::default(),
        };
        let train = TrainConfig::default();
        let alpha = g.alpha.or(file.alpha);
        let delta = g.delta.or(file.delta);
        let s = Settings {
            alpha: alpha.unwrap_or(DEFAULT_ALPHA),
            delta: delta.unwrap_or(DEFAULT_DELTA),
            thresholds_explicit: alpha.is_some() || delta.is_some(),
            delay_d: g.delay_d.or(file.delay_d).unwrap_or(DEFAULT_DELAY),
            phi: g.phi.or(file.phi).unwrap_or(DEFAULT_PHI),
            slots: g.slots.or(file.slots).unwrap_or(24),
            profile: g.profile.or(file.profile).unwrap_or(Profile::Desk),
            seed: g.seed.or(file.seed).unwrap_or(0),
            xi: g.xi.or(file.xi).unwrap_or(2),
            drop_rates: g
                .drop_rates
                .clone()
                .or(file.drop_rates)
                .unwrap_or_else(|| vec![0.0, 0.2, 0.4, 0.6, 0.8]),
            mode: g.mode.or(file.mode).unwrap_or(ModeArg::Greedy),
            lr_rsr: file.lr_rsr.unwrap_or(train.lr_rsr),
            lr_asd: file.lr_asd.unwrap_or(train.lr_policy),
            pretrain_trajectories: file
                .pretrain_trajectories
                .unwrap_or(train.pretrain_trajectories),
            pretrain_rsr_epochs: file
                .pretrain_rsr_epochs
                .unwrap_or(train.pretrain_rsr_epochs),
            pretrain_policy_epochs: file
                .pretrain_policy_epochs
                .unwrap_or(train.pretrain_policy_epochs),
            epochs_per_traj: file.epochs_per_traj.unwrap_or(train.epochs_per_traj),
            eval_every: file.eval_every.unwrap_or(train.eval_every),
            valid_frac: file.valid_frac.unwrap_or(0.1),
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        in_unit("alpha", self.alpha)?;
        in_unit("delta", self.delta)?;
        in_unit("phi", self.phi)?;
        in_unit("valid_frac", self.valid_frac)?;
        for &r in &self.drop_rates {
            in_unit("drop rate", r)?;
        }
        if self.slots == 0 || 24 % self.slots != 0 {
            return Err(Error::Config(format!(
                "slots must divide 24, got {}",
                self.slots
            )));
        }
        if self.xi < 1 {
            return Err(Error::Config("xi must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        for (name, lr) in [("lr_rsr", self.lr_rsr), ("lr_asd", self.lr_asd)] {
            if !lr.is_finite() || lr <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        Ok(())
    }

    pub fn detector(&self) -> DetectorConfig {
        DetectorConfig {
            delay: self.delay_d,
            mode: match self.mode {
                ModeArg::Greedy => DetectMode::Greedy,
                ModeArg::Sample => DetectMode::Sample { seed: self.seed },
            },
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            alpha: self.alpha,
            delta: self.delta,
            slots_per_day: self.slots,
            phi: self.phi,
            dims: self.profile.dims(),
            detector: DetectorSettings {
                delay: self.delay_d,
            },
            train: TrainConfig {
                lr_rsr: self.lr_rsr,
                lr_policy: self.lr_asd,
                pretrain_trajectories: self.pretrain_trajectories,
                pretrain_rsr_epochs: self.pretrain_rsr_epochs,
                pretrain_policy_epochs: self.pretrain_policy_epochs,
                epochs_per_traj: self.epochs_per_traj,
                eval_every: self.eval_every,
                seed: self.seed,
            },
            valid_frac: self.valid_frac,
        }
    }
}
