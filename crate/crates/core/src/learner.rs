//! TD3-style base learner: deterministic policy, twin critics and their
//! target copies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_len, HedError, Result};
use crate::nn::{polyak_update, Activation, AdamState, Direction, Mlp, MlpSpec, ParamVector, Tape};
use crate::replay::{concat_rows, Batch};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub exploration_std: f64,
    pub smoothing_std: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        // variance 0.01
        Self {
            exploration_std: 0.1,
            smoothing_std: 0.1,
        }
    }
}

/// Affine map from the policy's `tanh` output in `[-1, 1]` to action bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionScale {
    low: Vec<f64>,
    high: Vec<f64>,
    half_range: Vec<f64>,
}

impl ActionScale {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        check_len("ActionScale", low.len(), high.len())?;
        if low
            .iter()
            .zip(&high)
            .any(|(l, h)| !l.is_finite() || !h.is_finite() || l >= h)
        {
            return Err(HedError::InvalidSpec(
                "action bounds must satisfy low < high".into(),
            ));
        }
        let half_range = low.iter().zip(&high).map(|(l, h)| 0.5 * (h - l)).collect();
        Ok(Self {
            low,
            high,
            half_range,
        })
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }

    /// `da / dy` per action dimension.
    pub fn half_range(&self) -> &[f64] {
        &self.half_range
    }

    /// Maps row-major `tanh` outputs to actions in place.
    pub fn squash_in_place(&self, ys: &mut [f64]) {
        for row in ys.chunks_exact_mut(self.dim()) {
            for (j, y) in row.iter_mut().enumerate() {
                *y = self.low[j] + (*y + 1.0) * self.half_range[j];
            }
        }
    }

    pub fn clip_in_place(&self, actions: &mut [f64]) {
        for row in actions.chunks_exact_mut(self.dim()) {
            for (j, a) in row.iter_mut().enumerate() {
                *a = a.clamp(self.low[j], self.high[j]);
            }
        }
    }
}

/// Network shapes and optimizer settings shared by every learner.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub hidden_activation: Activation,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub lr: f64,
}

impl LearnerSpec {
    pub fn policy_spec(&self) -> MlpSpec {
        MlpSpec::new(self.state_dim, self.hidden_dims.clone(), self.action_dim)
            .with_activations(self.hidden_activation, Activation::Tanh)
    }

    pub fn critic_spec(&self) -> MlpSpec {
        MlpSpec::new(
            self.state_dim + self.action_dim,
            self.hidden_dims.clone(),
            1,
        )
        .with_activations(self.hidden_activation, Activation::Identity)
    }

    pub fn action_scale(&self) -> Result<ActionScale> {
        ActionScale::new(self.action_low.clone(), self.action_high.clone())
    }
}

/// `std * N(0, 1)` draws, row-major `n x dim`.
pub fn gaussian_noise<R: Rng + ?Sized>(n: usize, dim: usize, std: f64, rng: &mut R) -> Vec<f64> {
    (0..n * dim)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Mean squared error `(1/n) sum (q - y)^2` and its gradient w.r.t. `q`.
pub(crate) fn mse_and_grad(q: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
    let n = q.len() as f64;
    let mut loss = 0.0;
    let grad = q
        .iter()
        .zip(y)
        .map(|(qv, yv)| {
            let d = qv - yv;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    (loss / n, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseLearner {
    pub index: usize,
    pub policy: Mlp,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub target1: Mlp,
    pub target2: Mlp,
    pub policy_opt: AdamState,
    pub critic1_opt: AdamState,
    pub critic2_opt: AdamState,
    scale: ActionScale,
}

impl BaseLearner {
    pub fn new(index: usize, spec: &LearnerSpec, seed: u64) -> Result<Self> {
        let mut seeds = ChaCha8Rng::seed_from_u64(seed);
        let policy = Mlp::new(spec.policy_spec(), seeds.gen())?;
        let critic1 = Mlp::new(spec.critic_spec(), seeds.gen())?;
        let critic2 = Mlp::new(spec.critic_spec(), seeds.gen())?;
        Self::from_parts(index, spec, policy, critic1, critic2)
    }

    /// Builds a learner from existing networks; targets start as copies of
    /// the critics and optimizers start fresh.
    pub fn from_parts(
        index: usize,
        spec: &LearnerSpec,
        policy: Mlp,
        critic1: Mlp,
        critic2: Mlp,
    ) -> Result<Self> {
        if policy.spec() != &spec.policy_spec() {
            return Err(HedError::InvalidSpec(
                "policy network does not match learner spec".into(),
            ));
        }
        if critic1.spec() != &spec.critic_spec() || critic2.spec() != &spec.critic_spec() {
            return Err(HedError::InvalidSpec(
                "critic network does not match learner spec".into(),
            ));
        }
        Ok(Self {
            index,
            policy_opt: AdamState::new(policy.num_params(), spec.lr),
            critic1_opt: AdamState::new(critic1.num_params(), spec.lr),
            critic2_opt: AdamState::new(critic2.num_params(), spec.lr),
            target1: critic1.clone(),
            target2: critic2.clone(),
            policy,
            critic1,
            critic2,
            scale: spec.action_scale()?,
        })
    }

    pub fn scale(&self) -> &ActionScale {
        &self.scale
    }

    pub fn state_dim(&self) -> usize {
        self.policy.spec().input_dim
    }

    pub fn action_dim(&self) -> usize {
        self.scale.dim()
    }

    /// Deterministic action `pi^i(s)` within the action bounds.
    pub fn policy_action(&self, s: &[f64]) -> Result<Vec<f64>> {
        let mut a = self.policy.forward(s)?;
        self.scale.squash_in_place(&mut a);
        Ok(a)
    }

    /// Batched actions together with the policy tape for backpropagation.
    pub fn policy_actions(&self, states: &[f64], n: usize) -> Result<(Tape, Vec<f64>)> {
        let tape = self.policy.forward_batch(states, n)?;
        let mut a = tape.output().to_vec();
        self.scale.squash_in_place(&mut a);
        Ok((tape, a))
    }

    /// Clipped double-Q targets from precomputed `pi^i(s')` and smoothing
    /// noise (both row-major `batch x action_dim`).
    pub fn td_targets_from(
        &self,
        batch: &Batch,
        next_actions: &[f64],
        noise: &[f64],
        gamma: f64,
    ) -> Result<Vec<f64>> {
        let ad = self.action_dim();
        check_len(
            "td_targets next actions",
            batch.len * ad,
            next_actions.len(),
        )?;
        check_len("td_targets noise", batch.len * ad, noise.len())?;
        let mut a: Vec<f64> = next_actions.iter().zip(noise).map(|(a, e)| a + e).collect();
        self.scale.clip_in_place(&mut a);
        let sa = concat_rows(&batch.next_states, batch.state_dim, &a, ad);
        let q1 = self.target1.forward_batch(&sa, batch.len)?;
        let q2 = self.target2.forward_batch(&sa, batch.len)?;
        Ok(batch
            .rewards
            .iter()
            .zip(&batch.terminated)
            .zip(q1.output().iter().zip(q2.output()))
            .map(
                |((&r, &done), (&t1, &t2))| {
                    if done {
                        r
                    } else {
                        r + gamma * t1.min(t2)
                    }
                },
            )
            .collect())
    }

    /// Targets `y = r + gamma * min_k Q_k'(s', clip(pi^i(s') + eps))`, with no
    /// bootstrap on true termination.
    pub fn critic_td_target<R: Rng + ?Sized>(
        &self,
        batch: &Batch,
        gamma: f64,
        smoothing_std: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let (_, next) = self.policy_actions(&batch.next_states, batch.len)?;
        let noise = gaussian_noise(batch.len, self.action_dim(), smoothing_std, rng);
        self.td_targets_from(batch, &next, &noise, gamma)
    }

    /// Loss of one critic against fixed targets and its parameter gradient.
    pub fn critic_loss_gradient(
        critic: &Mlp,
        batch: &Batch,
        targets: &[f64],
    ) -> Result<(f64, ParamVector)> {
        check_len("critic targets", batch.len, targets.len())?;
        let sa = batch.state_actions(&batch.actions);
        let tape = critic.forward_batch(&sa, batch.len)?;
        let (loss, dq) = mse_and_grad(tape.output(), targets);
        let (grad, _) = critic.backward_batch(&tape, &dq)?;
        Ok((loss, grad))
    }

    /// One Adam descent step on both critics towards the same targets.
    /// Returns critic 1's loss before the step.
    pub fn critic_update(&mut self, batch: &Batch, targets: &[f64]) -> Result<f64> {
        let (loss1, g1) = Self::critic_loss_gradient(&self.critic1, batch, targets)?;
        let (_, g2) = Self::critic_loss_gradient(&self.critic2, batch, targets)?;
        self.critic1_opt
            .step(self.critic1.params_mut(), &g1, Direction::Descent)?;
        self.critic2_opt
            .step(self.critic2.params_mut(), &g2, Direction::Descent)?;
        Ok(loss1)
    }

    /// Deterministic policy gradient `(1/|B|) sum grad_a Q1(s,a)|_{a=pi(s)} grad_theta pi(s)`.
    pub fn policy_gradient(&self, batch: &Batch) -> Result<ParamVector> {
        let n = batch.len;
        if n == 0 {
            return Err(HedError::EmptyBuffer);
        }
        let (ptape, actions) = self.policy_actions(&batch.states, n)?;
        let sa = batch.state_actions(&actions);
        let qtape = self.critic1.forward_batch(&sa, n)?;
        let dq = vec![1.0 / n as f64; n];
        let dsa = self.critic1.input_gradient_batch(&qtape, &dq)?;
        let upstream = action_upstream(&dsa, batch.state_dim, &self.scale, 1.0);
        let (grad, _) = self.policy.backward_batch(&ptape, &upstream)?;
        Ok(grad)
    }

    /// One Adam ascent step of the policy along [`policy_gradient`](Self::policy_gradient).
    pub fn low_level_policy_update(&mut self, batch: &Batch) -> Result<()> {
        let grad = self.policy_gradient(batch)?;
        self.policy_opt
            .step(self.policy.params_mut(), &grad, Direction::Ascent)
    }

    pub fn target_sync(&mut self, tau: f64) -> Result<()> {
        polyak_update(self.target1.params_mut(), self.critic1.params(), tau)?;
        polyak_update(self.target2.params_mut(), self.critic2.params(), tau)
    }
}

/// Extracts the action columns of a `(state ‖ action)` input gradient and
/// maps them through the squash Jacobian, times `factor`.
pub(crate) fn action_upstream(
    dsa: &[f64],
    state_dim: usize,
    scale: &ActionScale,
    factor: f64,
) -> Vec<f64> {
    let ad = scale.dim();
    let mut out = Vec::with_capacity(dsa.len() / (state_dim + ad) * ad);
    for row in dsa.chunks_exact(state_dim + ad) {
        for (j, g) in row[state_dim..].iter().enumerate() {
            out.push(factor * g * scale.half_range()[j]);
        }
    }
    out
}
