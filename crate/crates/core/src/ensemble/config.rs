use serde::{Deserialize, Serialize};

use crate::envs::{EnvKind, EnvSpec, DEFAULT_MAX_EPISODE_STEPS};
use crate::error::{HedError, Result};
use crate::learner::{LearnerSpec, NoiseSpec};
use crate::nn::Activation;

/// When high-level training sessions run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HighLevelMode {
    /// One session after every episode.
    PerEpisode,
    /// One session every `update_interval` environment steps.
    FixedInterval,
}

/// How bootstrap peers `(p, q)` are drawn for a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSampling {
    /// Independent `(p, q)` for every learner.
    PerLearner,
    /// One `(p, q)` shared by all learners in the session.
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub env: EnvKind,
    pub max_episode_steps: usize,
    #[serde(alias = "N")]
    pub n_learners: usize,
    pub hidden_dims: Vec<usize>,
    pub hidden_activation: Activation,
    pub gamma: f64,
    pub adam_lr: f64,
    pub batch_size: usize,
    pub update_interval: usize,
    pub buffer_capacity: usize,
    pub rho0: f64,
    pub h_highlevel: f64,
    pub tau: f64,
    pub exploration_std: f64,
    pub smoothing_std: f64,
    /// Critic iterations per low-level policy update.
    pub policy_delay: usize,
    pub max_episodes: usize,
    pub high_level_mode: HighLevelMode,
    /// High-level iterations per sampled step; `None` means `1 / update_interval`.
    pub high_level_fraction: Option<f64>,
    pub single_step_ablation: bool,
    pub pair_sampling: PairSampling,
    pub exclude_self: bool,
    /// Episodes between evaluation rows in `progress.csv`.
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::Pendulum,
            max_episode_steps: DEFAULT_MAX_EPISODE_STEPS,
            n_learners: 5,
            hidden_dims: vec![64, 64],
            hidden_activation: Activation::Relu,
            gamma: 0.99,
            adam_lr: 5e-4,
            batch_size: 100,
            update_interval: 50,
            buffer_capacity: 1_000_000,
            rho0: 1e-4,
            h_highlevel: 5e-4,
            tau: 0.995,
            exploration_std: 0.1,
            smoothing_std: 0.1,
            policy_delay: 2,
            max_episodes: 300,
            high_level_mode: HighLevelMode::PerEpisode,
            high_level_fraction: None,
            single_step_ablation: false,
            pair_sampling: PairSampling::PerLearner,
            exclude_self: false,
            eval_interval: 10,
            eval_episodes: 50,
            seed: 0,
        }
    }
}

fn invalid(field: &'static str, message: impl Into<String>) -> HedError {
    HedError::InvalidConfig {
        field,
        message: message.into(),
    }
}

fn positive_int(field: &'static str, v: usize) -> Result<()> {
    if v == 0 {
        Err(invalid(field, "must be >= 1"))
    } else {
        Ok(())
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        positive_int("max_episode_steps", self.max_episode_steps)?;
        positive_int("n_learners", self.n_learners)?;
        positive_int("batch_size", self.batch_size)?;
        positive_int("update_interval", self.update_interval)?;
        positive_int("buffer_capacity", self.buffer_capacity)?;
        positive_int("policy_delay", self.policy_delay)?;
        positive_int("eval_interval", self.eval_interval)?;
        positive_int("eval_episodes", self.eval_episodes)?;
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(invalid(
                "hidden_dims",
                "need at least one layer, all widths >= 1",
            ));
        }
        if self.hidden_activation == Activation::Identity {
            return Err(invalid("hidden_activation", "must be relu or tanh"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(invalid(
                "gamma",
                format!("must lie in [0, 1), got {}", self.gamma),
            ));
        }
        if !(self.adam_lr > 0.0 && self.adam_lr.is_finite()) {
            return Err(invalid("adam_lr", "must be positive"));
        }
        if !(self.rho0 > 0.0 && self.rho0 < 0.5) {
            return Err(invalid(
                "rho0",
                format!(
                    "must lie in (0, 1/2) for a zero-stable update, got {}",
                    self.rho0
                ),
            ));
        }
        if !(self.h_highlevel > 0.0 && self.h_highlevel.is_finite()) {
            return Err(invalid("h_highlevel", "must be positive"));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(invalid(
                "tau",
                format!("must lie in (0, 1), got {}", self.tau),
            ));
        }
        if !(self.exploration_std >= 0.0 && self.exploration_std.is_finite()) {
            return Err(invalid("exploration_std", "must be >= 0"));
        }
        if !(self.smoothing_std >= 0.0 && self.smoothing_std.is_finite()) {
            return Err(invalid("smoothing_std", "must be >= 0"));
        }
        if let Some(f) = self.high_level_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(invalid(
                    "high_level_fraction",
                    format!("must lie in (0, 1], got {f}"),
                ));
            }
        }
        Ok(())
    }

    pub fn env_spec(&self) -> EnvSpec {
        EnvSpec::new(self.env, self.max_episode_steps)
    }

    pub fn learner_spec(&self) -> LearnerSpec {
        let env = self.env_spec();
        LearnerSpec {
            state_dim: env.state_dim,
            action_dim: env.action_dim,
            hidden_dims: self.hidden_dims.clone(),
            hidden_activation: self.hidden_activation,
            action_low: env.action_low,
            action_high: env.action_high,
            lr: self.adam_lr,
        }
    }

    pub fn noise(&self) -> NoiseSpec {
        NoiseSpec {
            exploration_std: self.exploration_std,
            smoothing_std: self.smoothing_std,
        }
    }

    pub fn high_level_fraction(&self) -> f64 {
        self.high_level_fraction
            .unwrap_or(1.0 / self.update_interval as f64)
    }

    /// Number of high-level iterations for a block covering `steps` samples.
    pub fn high_level_iterations(&self, steps: usize) -> usize {
        // Small slack so e.g. 200 * (1/50) does not round up to 5.
        (self.high_level_fraction() * steps as f64 - 1e-9)
            .ceil()
            .max(0.0) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let cfg: TrainConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, TrainConfig::default());
        assert_eq!(cfg.gamma, 0.99);
        assert_eq!(cfg.batch_size, 100);
        assert_eq!(cfg.update_interval, 50);
        assert_eq!(cfg.buffer_capacity, 1_000_000);
        assert_eq!(cfg.n_learners, 5);
        assert_eq!(cfg.adam_lr, 5e-4);
        assert_eq!(cfg.rho0, 1e-4);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_unstable_rho0() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"rho0": 0.6}"#).unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("rho0") && err.contains("(0, 1/2)"), "{err}");
    }

    #[test]
    fn rejects_unknown_fields_and_bad_values() {
        assert!(serde_json::from_str::<TrainConfig>(r#"{"gama": 0.9}"#).is_err());
        for bad in [
            r#"{"n_learners": 0}"#,
            r#"{"tau": 1.0}"#,
            r#"{"gamma": 1.5}"#,
            r#"{"hidden_dims": []}"#,
            r#"{"high_level_fraction": 0.0}"#,
            r#"{"exploration_std": -0.1}"#,
        ] {
            let cfg: TrainConfig = serde_json::from_str(bad).unwrap();
            assert!(cfg.validate().is_err(), "{bad}");
        }
    }

    #[test]
    fn capital_n_alias() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"N": 3}"#).unwrap();
        assert_eq!(cfg.n_learners, 3);
    }

    #[test]
    fn high_level_iteration_count() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.high_level_iterations(200), 4);
        assert_eq!(cfg.high_level_iterations(50), 1);
        assert_eq!(cfg.high_level_iterations(51), 2);
        assert_eq!(cfg.high_level_iterations(0), 0);
    }
}
