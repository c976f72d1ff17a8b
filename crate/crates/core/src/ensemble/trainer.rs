//! The training loop: acting, shared replay, low-level bursts, central critic
//! training and high-level sessions.

use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Ensemble, HighLevelMode, SessionOptions, TrainConfig};
use crate::envs::EnvSpec;
use crate::error::{HedError, Result};
use crate::learner::gaussian_noise;
use crate::multistep::MultiStepCoefficients;
use crate::replay::{Batch, ReplayBuffer, Transition};

/// Environment variable selecting the number of worker threads.
pub const THREADS_ENV: &str = "HED_THREADS";

/// One seeded generator per purpose so that no consumer can shift another's
/// draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngStreams {
    pub env: ChaCha8Rng,
    pub acting: ChaCha8Rng,
    pub exploration: ChaCha8Rng,
    pub batch: ChaCha8Rng,
    pub smoothing: ChaCha8Rng,
    pub session: ChaCha8Rng,
    pub eval: ChaCha8Rng,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k);
            rng
        };
        Self {
            env: stream(1),
            acting: stream(2),
            exploration: stream(3),
            batch: stream(4),
            smoothing: stream(5),
            session: stream(6),
            eval: stream(7),
        }
    }

    /// Seed for network initialization, kept apart from every stream.
    pub fn init_seed(seed: u64) -> u64 {
        ChaCha8Rng::seed_from_u64(seed).gen()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub env_steps: u64,
    pub episodes: u64,
    /// Mini-batch iterations of the low-level burst loop.
    pub critic_iterations: u64,
    pub critic_updates: Vec<u64>,
    pub low_level_updates: Vec<u64>,
    pub central_updates: u64,
    pub high_level_sessions: u64,
    pub high_level_iterations: u64,
}

impl Counters {
    fn new(n: usize) -> Self {
        Self {
            critic_updates: vec![0; n],
            low_level_updates: vec![0; n],
            ..Self::default()
        }
    }
}

/// Running loss sums between two progress rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossMeter {
    pub critic_sum: f64,
    pub central_sum: f64,
    pub count: u64,
}

impl LossMeter {
    fn take(&mut self) -> (f64, f64) {
        let out = if self.count == 0 {
            (f64::NAN, f64::NAN)
        } else {
            let n = self.count as f64;
            (self.critic_sum / n, self.central_sum / n)
        };
        *self = Self::default();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProgressRow {
    pub episode: u64,
    pub env_steps: u64,
    pub eval_mean: f64,
    pub eval_std: f64,
    pub critic_loss: f64,
    pub central_loss: f64,
}

impl ProgressRow {
    pub const HEADER: &'static str =
        "episode,env_steps,eval_mean,eval_std,critic_loss,central_loss";

    /// CSV line including the trailing newline.
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}\n",
            self.episode,
            self.env_steps,
            self.eval_mean,
            self.eval_std,
            self.critic_loss,
            self.central_loss
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub rows: Vec<ProgressRow>,
    pub counters: Counters,
}

impl TrainReport {
    pub fn final_eval(&self) -> Option<(f64, f64)> {
        self.rows.last().map(|r| (r.eval_mean, r.eval_std))
    }
}

/// Mean and population standard deviation of undiscounted returns of the
/// noise-free ensemble policy. Episodes run in lockstep so the policies see
/// one batch per time step.
pub fn evaluate(e: &Ensemble, env: &EnvSpec, episodes: usize, seed: u64) -> Result<(f64, f64)> {
    if episodes == 0 {
        return Err(HedError::InvalidConfig {
            field: "eval_episodes",
            message: "must be >= 1".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states: Vec<Vec<f64>> = (0..episodes).map(|_| env.reset(&mut rng)).collect();
    let mut returns = vec![0.0; episodes];
    let mut active: Vec<usize> = (0..episodes).collect();
    let sd = env.state_dim;
    for _ in 0..env.max_episode_steps {
        if active.is_empty() {
            break;
        }
        let flat: Vec<f64> = active
            .iter()
            .flat_map(|&k| states[k].iter().copied())
            .collect();
        let actions = e.ensemble_actions(&flat, active.len())?;
        let mut still = Vec::with_capacity(active.len());
        for (&k, a) in active.iter().zip(actions.chunks_exact(env.action_dim)) {
            let res = env.step(&states[k], a)?;
            returns[k] += res.reward;
            states[k] = res.next_state;
            debug_assert_eq!(states[k].len(), sd);
            if !res.terminated {
                still.push(k);
            }
        }
        active = still;
    }
    let n = episodes as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Applies `f` to every item, spreading contiguous chunks over `threads`
/// scoped threads. Each item is processed by the same code path whatever the
/// thread count, so results do not depend on it.
fn fan_out<T, U, F>(items: &mut [T], threads: usize, f: F) -> Result<Vec<U>>
where
    T: Send,
    U: Send,
    F: Fn(usize, &mut T) -> Result<U> + Sync,
{
    if threads <= 1 || items.len() <= 1 {
        return items.iter_mut().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    let parts: Vec<Result<Vec<U>>> = thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks_mut(chunk)
            .enumerate()
            .map(|(c, part)| {
                scope.spawn(move || {
                    part.iter_mut()
                        .enumerate()
                        .map(|(j, t)| f(c * chunk + j, t))
                        .collect::<Result<Vec<U>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("learner worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Worker count from `HED_THREADS`; absent, zero or unparsable means one.
pub fn threads_from_env() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub(crate) cfg: TrainConfig,
    pub(crate) env: EnvSpec,
    pub(crate) ensemble: Ensemble,
    pub(crate) buffer: ReplayBuffer,
    pub(crate) rngs: RngStreams,
    pub(crate) counters: Counters,
    pub(crate) losses: LossMeter,
    pub(crate) steps_since_burst: usize,
    threads: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let env = cfg.env_spec();
        env.validate()?;
        let ensemble = Ensemble::new(
            cfg.n_learners,
            &cfg.learner_spec(),
            RngStreams::init_seed(cfg.seed),
        )?;
        let buffer = ReplayBuffer::new(cfg.buffer_capacity, env.state_dim, env.action_dim);
        Ok(Self {
            rngs: RngStreams::new(cfg.seed),
            counters: Counters::new(cfg.n_learners),
            losses: LossMeter::default(),
            steps_since_burst: 0,
            threads: 1,
            cfg,
            env,
            ensemble,
            buffer,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_state(
        cfg: TrainConfig,
        ensemble: Ensemble,
        buffer: ReplayBuffer,
        rngs: RngStreams,
        counters: Counters,
        losses: LossMeter,
        steps_since_burst: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        let env = cfg.env_spec();
        if ensemble.n() != cfg.n_learners
            || counters.critic_updates.len() != cfg.n_learners
            || counters.low_level_updates.len() != cfg.n_learners
        {
            return Err(HedError::Checkpoint(
                "learner count differs from config".into(),
            ));
        }
        if buffer.state_dim() != env.state_dim || buffer.action_dim() != env.action_dim {
            return Err(HedError::Checkpoint(
                "replay buffer dims differ from env".into(),
            ));
        }
        Ok(Self {
            cfg,
            env,
            ensemble,
            buffer,
            rngs,
            counters,
            losses,
            steps_since_burst,
            threads: 1,
        })
    }

    /// Worker threads for per-learner work; 1 is fully sequential.
    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads.max(1);
        self
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn env(&self) -> &EnvSpec {
        &self.env
    }

    pub fn ensemble(&self) -> &Ensemble {
        &self.ensemble
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn is_finished(&self) -> bool {
        self.counters.episodes >= self.cfg.max_episodes as u64
    }

    fn coefficients(&self) -> Result<MultiStepCoefficients> {
        if self.cfg.single_step_ablation {
            MultiStepCoefficients::single_step(self.cfg.h_highlevel)
        } else {
            MultiStepCoefficients::from_rho0(self.cfg.rho0, self.cfg.h_highlevel)
        }
    }

    /// Runs episodes until `max_episodes`, handing every progress row to
    /// `on_row` as soon as it exists.
    pub fn run(&mut self, on_row: impl FnMut(&ProgressRow) -> Result<()>) -> Result<TrainReport> {
        self.run_until(self.cfg.max_episodes as u64, on_row)
    }

    /// Like [`run`](Self::run) but stops after `episodes` in total (capped by
    /// `max_episodes`), leaving the trainer resumable.
    pub fn run_until(
        &mut self,
        episodes: u64,
        mut on_row: impl FnMut(&ProgressRow) -> Result<()>,
    ) -> Result<TrainReport> {
        let stop = episodes.min(self.cfg.max_episodes as u64);
        let mut rows = Vec::new();
        while self.counters.episodes < stop {
            self.run_episode()?;
            if let Some(row) = self.maybe_progress_row()? {
                on_row(&row)?;
                rows.push(row);
            }
        }
        Ok(TrainReport {
            rows,
            counters: self.counters.clone(),
        })
    }

    fn maybe_progress_row(&mut self) -> Result<Option<ProgressRow>> {
        let ep = self.counters.episodes;
        if !ep.is_multiple_of(self.cfg.eval_interval as u64) && ep != self.cfg.max_episodes as u64 {
            return Ok(None);
        }
        let seed = self.rngs.eval.gen();
        let (eval_mean, eval_std) =
            evaluate(&self.ensemble, &self.env, self.cfg.eval_episodes, seed)?;
        let (critic_loss, central_loss) = self.losses.take();
        Ok(Some(ProgressRow {
            episode: ep,
            env_steps: self.counters.env_steps,
            eval_mean,
            eval_std,
            critic_loss,
            central_loss,
        }))
    }

    /// One episode of acting with a uniformly drawn learner plus the updates
    /// it triggers. Returns the episode length.
    pub fn run_episode(&mut self) -> Result<usize> {
        let n = self.ensemble.n();
        let actor = self.rngs.acting.gen_range(0..n);
        let mut state = self.env.reset(&mut self.rngs.env);
        let mut steps = 0;
        loop {
            let mut a = self.ensemble.learners[actor].policy_action(&state)?;
            let noise = gaussian_noise(
                1,
                a.len(),
                self.cfg.exploration_std,
                &mut self.rngs.exploration,
            );
            for (x, e) in a.iter_mut().zip(&noise) {
                *x += e;
            }
            let a = self.env.clip_action(&a);
            let res = self.env.step(&state, &a)?;
            steps += 1;
            self.buffer.push(Transition {
                s: state,
                a,
                r: res.reward,
                s_next: res.next_state.clone(),
                terminated: res.terminated,
            })?;
            self.counters.env_steps += 1;
            self.steps_since_burst += 1;
            if self.steps_since_burst == self.cfg.update_interval {
                self.burst()?;
                if self.cfg.high_level_mode == HighLevelMode::FixedInterval {
                    let k = self.cfg.high_level_iterations(self.cfg.update_interval);
                    self.high_level_block(k)?;
                }
            }
            state = res.next_state;
            if res.terminated || steps >= self.env.max_episode_steps {
                break;
            }
        }
        // leftover steps of a short episode are trained on now
        if self.steps_since_burst > 0 {
            self.burst()?;
        }
        if self.cfg.high_level_mode == HighLevelMode::PerEpisode {
            let k = self.cfg.high_level_iterations(steps);
            self.high_level_block(k)?;
        }
        self.counters.episodes += 1;
        Ok(steps)
    }

    /// One critic iteration per step sampled since the last burst.
    fn burst(&mut self) -> Result<()> {
        let k = std::mem::take(&mut self.steps_since_burst);
        for _ in 0..k {
            let batch = self
                .buffer
                .sample_batch(self.cfg.batch_size, &mut self.rngs.batch)?;
            self.critic_iteration(&batch)?;
        }
        Ok(())
    }

    fn critic_iteration(&mut self, batch: &Batch) -> Result<()> {
        let n = self.ensemble.n();
        let gamma = self.cfg.gamma;
        let tau = self.cfg.tau;
        let ad = self.env.action_dim;
        // smoothing noise is drawn up front so workers never touch an rng
        let noise: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                gaussian_noise(
                    batch.len,
                    ad,
                    self.cfg.smoothing_std,
                    &mut self.rngs.smoothing,
                )
            })
            .collect();
        self.counters.critic_iterations += 1;
        let policy_step = self
            .counters
            .critic_iterations
            .is_multiple_of(self.cfg.policy_delay as u64);

        let next: Vec<Vec<f64>> = fan_out(&mut self.ensemble.learners, self.threads, |_, l| {
            l.policy_actions(&batch.next_states, batch.len)
                .map(|(_, a)| a)
        })?;
        let central_targets =
            self.ensemble
                .central_td_targets_from(batch, &Ensemble::mean_actions(&next), gamma)?;

        let losses = fan_out(&mut self.ensemble.learners, self.threads, |i, l| {
            let targets = l.td_targets_from(batch, &next[i], &noise[i], gamma)?;
            let loss = l.critic_update(batch, &targets)?;
            if policy_step {
                l.low_level_policy_update(batch)?;
            }
            l.target_sync(tau)?;
            Ok(loss)
        })?;
        let central_loss =
            self.ensemble
                .central_update_with_targets(batch, &central_targets, tau)?;

        for i in 0..n {
            self.counters.critic_updates[i] += 1;
            if policy_step {
                self.counters.low_level_updates[i] += 1;
            }
        }
        self.counters.central_updates += 1;
        self.losses.critic_sum += losses.iter().sum::<f64>() / n as f64;
        self.losses.central_sum += central_loss;
        self.losses.count += 1;
        Ok(())
    }

    /// A high-level session of `iterations` sweeps, each on a fresh batch.
    fn high_level_block(&mut self, iterations: usize) -> Result<()> {
        if iterations == 0 || self.buffer.is_empty() {
            return Ok(());
        }
        let options = SessionOptions {
            pairing: self.cfg.pair_sampling,
            exclude_self: self.cfg.exclude_self,
        };
        let mut session = self.ensemble.start_high_level_session(
            self.coefficients()?,
            options,
            &mut self.rngs.session,
        )?;
        self.counters.high_level_sessions += 1;
        for _ in 0..iterations {
            let batch = self
                .buffer
                .sample_batch(self.cfg.batch_size, &mut self.rngs.batch)?;
            self.ensemble
                .high_level_update(&mut session, &batch, self.cfg.single_step_ablation)?;
            self.counters.high_level_iterations += 1;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvKind;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            n_learners: 3,
            hidden_dims: vec![16, 16],
            batch_size: 32,
            max_episodes: 3,
            max_episode_steps: 60,
            update_interval: 25,
            eval_interval: 2,
            eval_episodes: 4,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn rng_streams_are_distinct_and_reproducible() {
        let mut a = RngStreams::new(3);
        let mut b = RngStreams::new(3);
        assert_eq!(a, b);
        let x: u64 = a.env.gen();
        let y: u64 = a.batch.gen();
        assert_ne!(x, y);
        assert_eq!(x, b.env.gen::<u64>());
    }

    #[test]
    fn zero_episodes_is_empty_report() {
        let cfg = TrainConfig {
            max_episodes: 0,
            ..small_cfg()
        };
        let mut t = Trainer::new(cfg).unwrap();
        let report = t.run(|_| Ok(())).unwrap();
        assert!(report.rows.is_empty());
        assert_eq!(report.counters.env_steps, 0);
        assert!(t.buffer().is_empty());
    }

    #[test]
    fn counters_after_one_full_episode() {
        let cfg = TrainConfig {
            n_learners: 2,
            hidden_dims: vec![8],
            batch_size: 8,
            max_episodes: 1,
            eval_episodes: 1,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(cfg).unwrap();
        assert_eq!(t.run_episode().unwrap(), 200);
        let c = t.counters();
        assert_eq!(c.env_steps, 200);
        assert_eq!(c.critic_updates, vec![200, 200]);
        assert_eq!(c.low_level_updates, vec![100, 100]);
        assert_eq!(c.central_updates, 200);
        assert_eq!(c.high_level_sessions, 1);
        assert_eq!(c.high_level_iterations, 4);
        assert_eq!(t.buffer().len(), 200);
    }

    #[test]
    fn short_episodes_flush_their_burst() {
        let cfg = TrainConfig {
            max_episode_steps: 30,
            ..small_cfg()
        };
        let mut t = Trainer::new(cfg).unwrap();
        t.run_episode().unwrap();
        assert_eq!(t.counters().critic_iterations, 30);
        // ceil(30 / 25)
        assert_eq!(t.counters().high_level_iterations, 2);
        assert_eq!(t.steps_since_burst, 0);
    }

    #[test]
    fn fixed_interval_mode_runs_sessions_inside_episodes() {
        let cfg = TrainConfig {
            high_level_mode: HighLevelMode::FixedInterval,
            max_episode_steps: 100,
            ..small_cfg()
        };
        let mut t = Trainer::new(cfg).unwrap();
        t.run_episode().unwrap();
        assert_eq!(t.counters().high_level_sessions, 4);
        assert_eq!(t.counters().high_level_iterations, 4);
    }

    #[test]
    fn rows_at_interval_and_last_episode() {
        let mut t = Trainer::new(small_cfg()).unwrap();
        let mut seen = Vec::new();
        let report = t
            .run(|r| {
                seen.push(r.episode);
                Ok(())
            })
            .unwrap();
        assert_eq!(seen, vec![2, 3]);
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rows[1].env_steps, 180);
        assert!(report
            .rows
            .iter()
            .all(|r| r.critic_loss.is_finite() && r.central_loss.is_finite()));
        assert!(t.is_finished());
    }

    #[test]
    fn same_seed_same_rows_and_threads_do_not_matter() {
        let run = |threads| {
            let mut t = Trainer::new(small_cfg()).unwrap().with_threads(threads);
            let rows = t.run(|_| Ok(())).unwrap().rows;
            (
                rows.iter().map(|r| r.to_csv()).collect::<String>(),
                t.ensemble().clone(),
            )
        };
        let (a, ea) = run(1);
        let (b, eb) = run(1);
        let (c, ec) = run(3);
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(ea, eb);
        assert_eq!(ea, ec);
    }

    #[test]
    fn split_run_equals_straight_run() {
        let mut straight = Trainer::new(small_cfg()).unwrap();
        let full = straight.run(|_| Ok(())).unwrap();
        let mut split = Trainer::new(small_cfg()).unwrap();
        let mut rows = split.run_until(1, |_| Ok(())).unwrap().rows;
        rows.extend(split.run(|_| Ok(())).unwrap().rows);
        assert_eq!(rows, full.rows);
    }

    #[test]
    fn evaluate_single_episode_has_zero_std() {
        let t = Trainer::new(small_cfg()).unwrap();
        let (_, std) = evaluate(t.ensemble(), t.env(), 1, 0).unwrap();
        assert_eq!(std, 0.0);
        assert!(evaluate(t.ensemble(), t.env(), 0, 0).is_err());
    }

    #[test]
    fn evaluate_identical_learners_matches_single_policy() {
        let mut t = Trainer::new(small_cfg()).unwrap();
        let p = t.ensemble.learners[0].policy.clone();
        let env = t.env().clone();
        let single = {
            let mut e = t.ensemble.clone();
            e.learners.truncate(1);
            evaluate(&e, &env, 5, 9).unwrap()
        };
        for l in &mut t.ensemble.learners {
            l.policy = p.clone();
        }
        let (m, s) = evaluate(&t.ensemble, &env, 5, 9).unwrap();
        assert!((m - single.0).abs() < 1e-9 * single.0.abs().max(1.0));
        assert!((s - single.1).abs() < 1e-9 * single.1.abs().max(1.0));
    }

    #[test]
    fn evaluate_handles_terminating_env() {
        let cfg = TrainConfig {
            env: EnvKind::Pointmass2d,
            ..small_cfg()
        };
        let t = Trainer::new(cfg).unwrap();
        let (m, s) = evaluate(t.ensemble(), t.env(), 6, 1).unwrap();
        assert!(m.is_finite() && s >= 0.0);
    }

    #[test]
    fn fan_out_keeps_order() {
        let mut xs: Vec<usize> = (0..7).collect();
        let out = fan_out(&mut xs, 3, |i, x| {
            *x *= 2;
            Ok(i)
        })
        .unwrap();
        assert_eq!(out, (0..7).collect::<Vec<_>>());
        assert_eq!(xs, (0..7).map(|x| 2 * x).collect::<Vec<_>>());
    }
}
