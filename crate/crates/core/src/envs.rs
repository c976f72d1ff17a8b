//! Small deterministic continuous-control environments.
//!
//! Dynamics are pure functions of `(state, action)`; the observation is the
//! full state. Episode time limits are tracked by [`Episode`], which marks
//! time-limit cutoffs as `truncated` rather than `terminated`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, HedError, Result};

pub const DEFAULT_MAX_EPISODE_STEPS: usize = 200;

const PENDULUM_G: f64 = 10.0;
const PENDULUM_M: f64 = 1.0;
const PENDULUM_L: f64 = 1.0;
const PENDULUM_DT: f64 = 0.05;
const PENDULUM_MAX_SPEED: f64 = 8.0;
const PENDULUM_MAX_TORQUE: f64 = 2.0;

const POINT_DT: f64 = 0.1;
const POINT_GOAL_RADIUS: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Pendulum,
    Pointmass2d,
    DoubleIntegrator,
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::Pendulum => "pendulum",
            EnvKind::Pointmass2d => "pointmass2d",
            EnvKind::DoubleIntegrator => "double_integrator",
        })
    }
}

impl FromStr for EnvKind {
    type Err = HedError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(EnvKind::Pendulum),
            "pointmass2d" => Ok(EnvKind::Pointmass2d),
            "double_integrator" => Ok(EnvKind::DoubleIntegrator),
            other => Err(HedError::InvalidConfig {
                field: "env",
                message: format!("unknown environment `{other}`"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub max_episode_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
}

/// Maps an angle to `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

impl EnvSpec {
    pub fn new(kind: EnvKind, max_episode_steps: usize) -> Self {
        let (state_dim, action_dim, bound) = match kind {
            EnvKind::Pendulum => (3, 1, PENDULUM_MAX_TORQUE),
            EnvKind::Pointmass2d => (4, 2, 1.0),
            EnvKind::DoubleIntegrator => (2, 1, 1.0),
        };
        Self {
            kind,
            state_dim,
            action_dim,
            action_low: vec![-bound; action_dim],
            action_high: vec![bound; action_dim],
            max_episode_steps,
        }
    }

    pub fn pendulum() -> Self {
        Self::new(EnvKind::Pendulum, DEFAULT_MAX_EPISODE_STEPS)
    }

    pub fn pointmass2d() -> Self {
        Self::new(EnvKind::Pointmass2d, DEFAULT_MAX_EPISODE_STEPS)
    }

    pub fn double_integrator() -> Self {
        Self::new(EnvKind::DoubleIntegrator, DEFAULT_MAX_EPISODE_STEPS)
    }

    pub fn validate(&self) -> Result<()> {
        check_len("EnvSpec action_low", self.action_dim, self.action_low.len())?;
        check_len(
            "EnvSpec action_high",
            self.action_dim,
            self.action_high.len(),
        )?;
        let bounds_ok = self
            .action_low
            .iter()
            .zip(&self.action_high)
            .all(|(l, h)| l.is_finite() && h.is_finite() && l < h);
        if !bounds_ok {
            return Err(HedError::InvalidConfig {
                field: "env",
                message: "action bounds must be finite with low < high".into(),
            });
        }
        if self.max_episode_steps == 0 {
            return Err(HedError::InvalidConfig {
                field: "max_episode_steps",
                message: "must be >= 1".into(),
            });
        }
        Ok(())
    }

    pub fn clip_action(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(&a, (&lo, &hi))| a.clamp(lo, hi))
            .collect()
    }

    pub fn reset_seeded(&self, seed: u64) -> Vec<f64> {
        self.reset(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Initial state drawn from the environment's start distribution.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self.kind {
            EnvKind::Pendulum => {
                let theta: f64 = rng.gen_range(-PI..PI);
                let omega: f64 = rng.gen_range(-1.0..1.0);
                vec![theta.cos(), theta.sin(), omega]
            }
            EnvKind::Pointmass2d => {
                let px = rng.gen_range(-1.0..1.0);
                let py = rng.gen_range(-1.0..1.0);
                vec![px, py, 0.0, 0.0]
            }
            EnvKind::DoubleIntegrator => vec![rng.gen_range(-1.0..1.0), 0.0],
        }
    }

    /// Pure transition function. The action is clipped to bounds first; the
    /// returned result is never `truncated` (see [`Episode`]).
    pub fn step(&self, state: &[f64], action: &[f64]) -> Result<StepResult> {
        check_len("EnvSpec::step state", self.state_dim, state.len())?;
        check_len("EnvSpec::step action", self.action_dim, action.len())?;
        if !state.iter().all(|x| x.is_finite()) {
            return Err(HedError::NonFinite("environment state"));
        }
        if !action.iter().all(|x| x.is_finite()) {
            return Err(HedError::NonFinite("action"));
        }
        let a = self.clip_action(action);
        let result = match self.kind {
            EnvKind::Pendulum => pendulum_step(state, a[0]),
            EnvKind::Pointmass2d => point_step::<2>(state, &a),
            EnvKind::DoubleIntegrator => point_step::<1>(state, &a),
        };
        Ok(result)
    }
}

fn pendulum_step(state: &[f64], torque: f64) -> StepResult {
    let theta = state[1].atan2(state[0]);
    let omega = state[2];
    let cost = wrap_angle(theta).powi(2) + 0.1 * omega * omega + 0.001 * torque * torque;
    let accel = 3.0 * PENDULUM_G / (2.0 * PENDULUM_L) * theta.sin()
        + 3.0 / (PENDULUM_M * PENDULUM_L * PENDULUM_L) * torque;
    let new_omega = (omega + accel * PENDULUM_DT).clamp(-PENDULUM_MAX_SPEED, PENDULUM_MAX_SPEED);
    let new_theta = theta + new_omega * PENDULUM_DT;
    StepResult {
        next_state: vec![new_theta.cos(), new_theta.sin(), new_omega],
        reward: -cost,
        terminated: false,
        truncated: false,
    }
}

/// Semi-implicit Euler point mass in `D` dimensions; state is `(p, v)`.
fn point_step<const D: usize>(state: &[f64], a: &[f64]) -> StepResult {
    let mut next = vec![0.0; 2 * D];
    for d in 0..D {
        let v = state[D + d] + POINT_DT * a[d];
        next[D + d] = v;
        next[d] = state[d] + POINT_DT * v;
    }
    let dist_sq: f64 = next[..D].iter().map(|p| p * p).sum();
    let effort: f64 = a.iter().map(|u| u * u).sum();
    StepResult {
        reward: -dist_sq - 0.01 * effort,
        terminated: dist_sq.sqrt() < POINT_GOAL_RADIUS,
        truncated: false,
        next_state: next,
    }
}

/// One running episode: current state plus the time-limit bookkeeping.
#[derive(Debug, Clone)]
pub struct Episode<'a> {
    spec: &'a EnvSpec,
    state: Vec<f64>,
    t: usize,
    done: bool,
}

impl<'a> Episode<'a> {
    pub fn start<R: Rng + ?Sized>(spec: &'a EnvSpec, rng: &mut R) -> Self {
        Self {
            spec,
            state: spec.reset(rng),
            t: 0,
            done: false,
        }
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn steps(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let mut res = self.spec.step(&self.state, action)?;
        self.t += 1;
        if !res.terminated && self.t >= self.spec.max_episode_steps {
            res.truncated = true;
        }
        self.done = res.terminated || res.truncated;
        self.state = res.next_state.clone();
        Ok(res)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_is_deterministic_and_on_circle() {
        let spec = EnvSpec::pendulum();
        assert_eq!(spec.reset_seeded(5), spec.reset_seeded(5));
        for seed in 0..100 {
            let s = spec.reset_seeded(seed);
            assert!((s[0] * s[0] + s[1] * s[1] - 1.0).abs() < 1e-12);
            assert!(s[2].abs() <= 1.0);
        }
    }

    #[test]
    fn reset_angle_is_centered() {
        // U(-pi, pi): mean 0, std pi/sqrt(3); 3 sigma band on the sample mean
        let spec = EnvSpec::pendulum();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|_| {
                let s = spec.reset(&mut rng);
                s[1].atan2(s[0])
            })
            .sum::<f64>()
            / n as f64;
        let sigma = PI / 3f64.sqrt() / (n as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn upright_rest_has_zero_reward() {
        let spec = EnvSpec::pendulum();
        let r = spec.step(&[1.0, 0.0, 0.0], &[0.0]).unwrap();
        assert_eq!(r.reward, 0.0);
        assert!(!r.terminated && !r.truncated);
    }

    #[test]
    fn hanging_pendulum_matches_hand_euler() {
        let spec = EnvSpec::pendulum();
        let theta = PI;
        let state = [theta.cos(), theta.sin(), 0.0];
        let r = spec.step(&state, &[0.0]).unwrap();
        // omega' = 0 + dt * (3g/2l) sin(pi); theta' = pi + dt * omega'
        let th = state[1].atan2(state[0]);
        let accel = 3.0 * 10.0 / 2.0 * th.sin();
        let omega = 0.0 + accel * 0.05;
        let th_next = th + 0.05 * omega;
        assert_eq!(r.next_state, vec![th_next.cos(), th_next.sin(), omega]);
        assert!((r.reward + PI * PI).abs() < 1e-12);
    }

    #[test]
    fn torque_drives_acceleration() {
        let spec = EnvSpec::pendulum();
        // upright, torque 1 -> omega' = dt * 3 = 0.15; out of range torque is clipped
        let r = spec.step(&[1.0, 0.0, 0.0], &[1.0]).unwrap();
        assert!((r.next_state[2] - 0.15).abs() < 1e-12);
        let r = spec.step(&[1.0, 0.0, 0.0], &[50.0]).unwrap();
        assert!((r.next_state[2] - 0.3).abs() < 1e-12);
        assert!((r.reward + 0.004).abs() < 1e-12);
    }

    #[test]
    fn pendulum_reward_bounds() {
        let spec = EnvSpec::pendulum();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let floor = -(PI * PI + 0.1 * 64.0 + 0.001 * 4.0);
        let mut ep = Episode::start(&spec, &mut rng);
        for _ in 0..5_000 {
            if ep.is_done() {
                ep = Episode::start(&spec, &mut rng);
            }
            let a = [rng.gen_range(-3.0..3.0)];
            let r = ep.step(&a).unwrap();
            assert!(r.reward <= 0.0 && r.reward >= floor);
        }
    }

    #[test]
    fn pointmass_goal_terminates() {
        let spec = EnvSpec::pointmass2d();
        let r = spec.step(&[0.0; 4], &[0.0, 0.0]).unwrap();
        assert!(r.terminated);
        assert_eq!(r.reward, 0.0);
        let r = spec.step(&[0.5, 0.0, 0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!(!r.terminated);
        assert!((r.next_state[2] - 0.1).abs() < 1e-15);
        assert!((r.next_state[0] - 0.51).abs() < 1e-15);
        assert!((r.reward + (0.51 * 0.51 + 0.01)).abs() < 1e-12);
    }

    #[test]
    fn double_integrator_step() {
        let spec = EnvSpec::double_integrator();
        let r = spec.step(&[1.0, 0.0], &[-1.0]).unwrap();
        assert!((r.next_state[1] + 0.1).abs() < 1e-15);
        assert!((r.next_state[0] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn step_is_pure() {
        let spec = EnvSpec::pendulum();
        let s = spec.reset_seeded(3);
        let a = spec.step(&s, &[0.7]).unwrap();
        let b = spec.step(&s, &[0.7]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_non_finite_and_bad_dims() {
        let spec = EnvSpec::pendulum();
        assert!(spec.step(&[1.0, 0.0, f64::NAN], &[0.0]).is_err());
        assert!(spec.step(&[1.0, 0.0, 0.0], &[f64::INFINITY]).is_err());
        assert!(spec.step(&[1.0, 0.0], &[0.0]).is_err());
    }

    #[test]
    fn episode_truncates_at_time_limit() {
        let spec = EnvSpec::new(EnvKind::Pendulum, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ep = Episode::start(&spec, &mut rng);
        assert!(!ep.step(&[0.0]).unwrap().truncated);
        assert!(!ep.step(&[0.0]).unwrap().truncated);
        let last = ep.step(&[0.0]).unwrap();
        assert!(last.truncated && !last.terminated);
        assert!(ep.is_done());
    }

    #[test]
    fn random_policy_baseline() {
        let spec = EnvSpec::pendulum();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let episodes = 100;
        let mut total = 0.0;
        for _ in 0..episodes {
            let mut ep = Episode::start(&spec, &mut rng);
            while !ep.is_done() {
                let a = [rng.gen_range(-2.0..2.0)];
                total += ep.step(&a).unwrap().reward;
            }
        }
        let mean = total / episodes as f64;
        assert!((-1700.0..=-900.0).contains(&mean), "mean return {mean}");
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(0.3) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn env_names_parse() {
        for kind in [
            EnvKind::Pendulum,
            EnvKind::Pointmass2d,
            EnvKind::DoubleIntegrator,
        ] {
            assert_eq!(kind.to_string().parse::<EnvKind>().unwrap(), kind);
        }
        assert!("cartpole".parse::<EnvKind>().is_err());
    }
}
