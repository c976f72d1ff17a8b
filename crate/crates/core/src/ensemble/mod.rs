//! The ensemble: `N` base learners, the central critic for the averaged
//! policy, and high-level multi-step policy training.

mod config;
mod trainer;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{HighLevelMode, PairSampling, TrainConfig};
pub use trainer::{
    evaluate, threads_from_env, Counters, LossMeter, ProgressRow, RngStreams, TrainReport, Trainer,
    THREADS_ENV,
};

use crate::error::{check_len, HedError, Result};
use crate::learner::{action_upstream, mse_and_grad, BaseLearner, LearnerSpec};
use crate::multistep::{multistep_update, BootstrapWindow, MultiStepCoefficients};
use crate::nn::{polyak_update, AdamState, Direction, Mlp, ParamVector};
use crate::replay::{concat_rows, Batch};

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub learners: Vec<BaseLearner>,
    pub central: Mlp,
    pub central_target: Mlp,
    pub central_opt: AdamState,
    spec: LearnerSpec,
}

/// Bootstrap windows and peer draws for one block of high-level updates.
#[derive(Debug, Clone, PartialEq)]
pub struct HighLevelSession {
    pub windows: Vec<BootstrapWindow>,
    /// `(p, q)` peers of every learner, zero-based.
    pub pairs: Vec<(usize, usize)>,
    pub coeffs: MultiStepCoefficients,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionOptions {
    pub pairing: PairSampling,
    pub exclude_self: bool,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self {
            pairing: PairSampling::PerLearner,
            exclude_self: false,
        }
    }
}

fn draw_peer<R: Rng + ?Sized>(n: usize, i: usize, exclude_self: bool, rng: &mut R) -> usize {
    if exclude_self && n > 1 {
        let k = rng.gen_range(0..n - 1);
        if k >= i {
            k + 1
        } else {
            k
        }
    } else {
        rng.gen_range(0..n)
    }
}

impl Ensemble {
    pub fn new(n: usize, spec: &LearnerSpec, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(HedError::InvalidConfig {
                field: "n_learners",
                message: "must be >= 1".into(),
            });
        }
        let mut seeds = ChaCha8Rng::seed_from_u64(seed);
        let learners = (0..n)
            .map(|i| BaseLearner::new(i, spec, seeds.gen()))
            .collect::<Result<Vec<_>>>()?;
        let central = Mlp::new(spec.critic_spec(), seeds.gen())?;
        Self::from_parts(learners, central, spec)
    }

    /// Central target starts as a copy of the central critic.
    pub fn from_parts(
        learners: Vec<BaseLearner>,
        central: Mlp,
        spec: &LearnerSpec,
    ) -> Result<Self> {
        if learners.is_empty() {
            return Err(HedError::InvalidConfig {
                field: "n_learners",
                message: "must be >= 1".into(),
            });
        }
        for l in &learners {
            if l.policy.spec() != &spec.policy_spec() || l.critic1.spec() != &spec.critic_spec() {
                return Err(HedError::InvalidSpec(
                    "learner networks differ from ensemble spec".into(),
                ));
            }
        }
        if central.spec() != &spec.critic_spec() {
            return Err(HedError::InvalidSpec(
                "central critic does not match ensemble spec".into(),
            ));
        }
        Ok(Self {
            central_opt: AdamState::new(central.num_params(), spec.lr),
            central_target: central.clone(),
            central,
            learners,
            spec: spec.clone(),
        })
    }

    pub fn spec(&self) -> &LearnerSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.learners.len()
    }

    /// Mean of per-learner action matrices, summed in learner order.
    pub fn mean_actions(per_learner: &[Vec<f64>]) -> Vec<f64> {
        let n = per_learner.len() as f64;
        let mut sum = per_learner[0].clone();
        for a in &per_learner[1..] {
            for (s, x) in sum.iter_mut().zip(a) {
                *s += x;
            }
        }
        sum.iter_mut().for_each(|s| *s /= n);
        sum
    }

    /// `pi^e(s) = (1/N) sum_i pi^i(s)`
    pub fn ensemble_action(&self, s: &[f64]) -> Result<Vec<f64>> {
        let per: Vec<Vec<f64>> = self
            .learners
            .iter()
            .map(|l| l.policy_action(s))
            .collect::<Result<_>>()?;
        Ok(Self::mean_actions(&per))
    }

    pub fn ensemble_actions(&self, states: &[f64], n: usize) -> Result<Vec<f64>> {
        let per: Vec<Vec<f64>> = self
            .learners
            .iter()
            .map(|l| l.policy_actions(states, n).map(|(_, a)| a))
            .collect::<Result<_>>()?;
        Ok(Self::mean_actions(&per))
    }

    /// Central critic targets `r + gamma Q^e'(s', a_e')` from precomputed
    /// ensemble next actions; no smoothing noise, single target network.
    pub fn central_td_targets_from(
        &self,
        batch: &Batch,
        next_ensemble_actions: &[f64],
        gamma: f64,
    ) -> Result<Vec<f64>> {
        check_len(
            "central targets next actions",
            batch.len * batch.action_dim,
            next_ensemble_actions.len(),
        )?;
        let sa = concat_rows(
            &batch.next_states,
            batch.state_dim,
            next_ensemble_actions,
            batch.action_dim,
        );
        let q = self.central_target.forward_batch(&sa, batch.len)?;
        Ok(batch
            .rewards
            .iter()
            .zip(&batch.terminated)
            .zip(q.output())
            .map(|((&r, &done), &qn)| if done { r } else { r + gamma * qn })
            .collect())
    }

    pub fn central_td_targets(&self, batch: &Batch, gamma: f64) -> Result<Vec<f64>> {
        let next = self.ensemble_actions(&batch.next_states, batch.len)?;
        self.central_td_targets_from(batch, &next, gamma)
    }

    /// MSE of the central critic against fixed targets and its gradient.
    pub fn central_loss_gradient(
        &self,
        batch: &Batch,
        targets: &[f64],
    ) -> Result<(f64, ParamVector)> {
        check_len("central targets", batch.len, targets.len())?;
        let sa = batch.state_actions(&batch.actions);
        let tape = self.central.forward_batch(&sa, batch.len)?;
        let (loss, dq) = mse_and_grad(tape.output(), targets);
        let (grad, _) = self.central.backward_batch(&tape, &dq)?;
        Ok((loss, grad))
    }

    pub(crate) fn central_update_with_targets(
        &mut self,
        batch: &Batch,
        targets: &[f64],
        tau: f64,
    ) -> Result<f64> {
        let (loss, grad) = self.central_loss_gradient(batch, targets)?;
        self.central_opt
            .step(self.central.params_mut(), &grad, Direction::Descent)?;
        polyak_update(self.central_target.params_mut(), self.central.params(), tau)?;
        Ok(loss)
    }

    /// One Adam step of the central critic followed by a Polyak sync of its
    /// target. Returns the loss before the step.
    pub fn central_critic_update(&mut self, batch: &Batch, gamma: f64, tau: f64) -> Result<f64> {
        let targets = self.central_td_targets(batch, gamma)?;
        self.central_update_with_targets(batch, &targets, tau)
    }

    /// Ensemble policy gradient for every learner, all evaluated at the
    /// current parameters.
    pub fn ensemble_policy_gradients(&self, batch: &Batch) -> Result<Vec<ParamVector>> {
        let b = batch.len;
        if b == 0 {
            return Err(HedError::EmptyBuffer);
        }
        let mut tapes = Vec::with_capacity(self.n());
        let mut actions = Vec::with_capacity(self.n());
        for l in &self.learners {
            let (tape, a) = l.policy_actions(&batch.states, b)?;
            tapes.push(tape);
            actions.push(a);
        }
        let a_e = Self::mean_actions(&actions);
        let qtape = self.central.forward_batch(&batch.state_actions(&a_e), b)?;
        let dq = vec![1.0 / b as f64; b];
        let dsa = self.central.input_gradient_batch(&qtape, &dq)?;
        // d pi^e / d a_i = I / N
        let scale = self.learners[0].scale();
        let upstream = action_upstream(&dsa, batch.state_dim, scale, 1.0 / self.n() as f64);
        self.learners
            .iter()
            .zip(&tapes)
            .map(|(l, tape)| l.policy.backward_batch(tape, &upstream).map(|(g, _)| g))
            .collect()
    }

    pub fn ensemble_policy_gradient(&self, batch: &Batch, i: usize) -> Result<ParamVector> {
        if i >= self.n() {
            return Err(HedError::SessionMismatch(format!(
                "learner index {i} out of range"
            )));
        }
        Ok(self.ensemble_policy_gradients(batch)?.swap_remove(i))
    }

    /// Sets up `(theta_p, theta_q, theta_i)` windows for every learner.
    pub fn start_high_level_session<R: Rng + ?Sized>(
        &self,
        coeffs: MultiStepCoefficients,
        options: SessionOptions,
        rng: &mut R,
    ) -> Result<HighLevelSession> {
        let n = self.n();
        let pairs: Vec<(usize, usize)> = match options.pairing {
            PairSampling::PerLearner => (0..n)
                .map(|i| {
                    let p = draw_peer(n, i, options.exclude_self, rng);
                    let q = draw_peer(n, i, options.exclude_self, rng);
                    (p, q)
                })
                .collect(),
            PairSampling::Shared => {
                let p = rng.gen_range(0..n);
                let q = rng.gen_range(0..n);
                vec![(p, q); n]
            }
        };
        let windows = pairs
            .iter()
            .enumerate()
            .map(|(i, &(p, q))| {
                BootstrapWindow::new(
                    self.learners[p].policy.flatten(),
                    self.learners[q].policy.flatten(),
                    self.learners[i].policy.flatten(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(HighLevelSession {
            windows,
            pairs,
            coeffs,
        })
    }

    /// One synchronous sweep: every learner's gradient is taken at the current
    /// parameters before any learner is written.
    pub fn high_level_update(
        &mut self,
        session: &mut HighLevelSession,
        batch: &Batch,
        single_step: bool,
    ) -> Result<()> {
        if session.windows.len() != self.n() {
            return Err(HedError::SessionMismatch(format!(
                "{} windows for {} learners",
                session.windows.len(),
                self.n()
            )));
        }
        let grads = self.ensemble_policy_gradients(batch)?;
        let h = session.coeffs.h;
        for ((learner, window), grad) in self
            .learners
            .iter_mut()
            .zip(&mut session.windows)
            .zip(&grads)
        {
            let next = if single_step {
                let mut theta = learner.policy.flatten();
                theta.axpy(h, grad)?;
                theta
            } else {
                multistep_update(window, grad, &session.coeffs)?
            };
            learner.policy.unflatten(&next)?;
            window.push(next)?;
        }
        Ok(())
    }
}
