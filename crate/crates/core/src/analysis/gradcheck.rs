//! Central finite-difference checks of the analytic gradients used in
//! training.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ensemble::Ensemble;
use crate::error::{HedError, Result};
use crate::learner::{gaussian_noise, mse_and_grad, BaseLearner, LearnerSpec};
use crate::nn::{Activation, Mlp, ParamVector};
use crate::replay::{Batch, Transition};

/// Relative errors use `max(|a|, |b|, REL_FLOOR)` in the denominator so
/// that near-zero components compare absolutely.
const REL_FLOOR: f64 = 1e-3;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradFn {
    /// Deterministic policy gradient of one learner through its own critic.
    LowLevel,
    /// Ensemble policy gradient through the central critic.
    EnsembleLevel,
    /// Learner critic MSE against clipped double-Q targets.
    CriticLoss,
    /// Central critic MSE against its bootstrap targets.
    CentralLoss,
}

impl GradFn {
    pub const ALL: [GradFn; 4] = [
        GradFn::LowLevel,
        GradFn::EnsembleLevel,
        GradFn::CriticLoss,
        GradFn::CentralLoss,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GradFn::LowLevel => "low_level",
            GradFn::EnsembleLevel => "ensemble_level",
            GradFn::CriticLoss => "critic_loss",
            GradFn::CentralLoss => "central_loss",
        }
    }
}

impl fmt::Display for GradFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GradFn {
    type Err = HedError;

    fn from_str(s: &str) -> Result<Self> {
        GradFn::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| HedError::UnknownGradFn(s.to_string()))
    }
}

/// A small random ensemble with one batch and fixed smoothing noise.
#[derive(Debug, Clone)]
pub struct GradCheckCase {
    pub ensemble: Ensemble,
    pub batch: Batch,
    pub noise: Vec<f64>,
    pub gamma: f64,
}

impl GradCheckCase {
    /// `n` learners with `tanh` hidden layers (smooth, so no kinks near the
    /// probe points), 3-d states and 2-d actions.
    pub fn random(n: usize, seed: u64) -> Result<Self> {
        let spec = LearnerSpec {
            state_dim: 3,
            action_dim: 2,
            hidden_dims: vec![8, 6],
            hidden_activation: Activation::Tanh,
            action_low: vec![-2.0, -1.0],
            action_high: vec![2.0, 0.5],
            lr: 1e-3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ensemble = Ensemble::new(n, &spec, rng.gen())?;
        let mut v = |k: usize, lo: f64, hi: f64| {
            (0..k).map(|_| rng.gen_range(lo..hi)).collect::<Vec<f64>>()
        };
        let ts: Vec<Transition> = (0..6)
            .map(|k| Transition {
                s: v(3, -1.0, 1.0),
                a: vec![v(1, -2.0, 2.0)[0], v(1, -1.0, 0.5)[0]],
                r: v(1, -1.0, 1.0)[0],
                s_next: v(3, -1.0, 1.0),
                terminated: k == 2,
            })
            .collect();
        let batch = Batch::from_transitions(&ts)?;
        let noise = gaussian_noise(batch.len, 2, 0.1, &mut rng);
        Ok(Self {
            ensemble,
            batch,
            noise,
            gamma: 0.99,
        })
    }

    fn learner(&self) -> &BaseLearner {
        &self.ensemble.learners[0]
    }

    fn critic_targets(&self) -> Result<Vec<f64>> {
        let b = &self.batch;
        let (_, next) = self.learner().policy_actions(&b.next_states, b.len)?;
        self.learner()
            .td_targets_from(b, &next, &self.noise, self.gamma)
    }

    /// The network being differentiated and its analytic gradient.
    fn subject(&self, f: GradFn) -> Result<(Mlp, ParamVector)> {
        let b = &self.batch;
        Ok(match f {
            GradFn::LowLevel => (
                self.learner().policy.clone(),
                self.learner().policy_gradient(b)?,
            ),
            GradFn::EnsembleLevel => (
                self.learner().policy.clone(),
                self.ensemble.ensemble_policy_gradient(b, 0)?,
            ),
            GradFn::CriticLoss => {
                let y = self.critic_targets()?;
                let (_, g) = BaseLearner::critic_loss_gradient(&self.learner().critic1, b, &y)?;
                (self.learner().critic1.clone(), g)
            }
            GradFn::CentralLoss => {
                let y = self.ensemble.central_td_targets(b, self.gamma)?;
                let (_, g) = self.ensemble.central_loss_gradient(b, &y)?;
                (self.ensemble.central.clone(), g)
            }
        })
    }

    /// Scalar objective with `net` standing in for the subject network.
    /// Targets stay fixed at their unperturbed values.
    fn objective(&self, f: GradFn, net: &Mlp, targets: &[f64]) -> Result<f64> {
        let b = &self.batch;
        let mean_q = |critic: &Mlp, actions: &[f64]| -> Result<f64> {
            let q = critic.forward_batch(&b.state_actions(actions), b.len)?;
            Ok(q.output().iter().sum::<f64>() / b.len as f64)
        };
        let squashed = |policy: &Mlp| -> Result<Vec<f64>> {
            let mut a = policy.forward_batch(&b.states, b.len)?.output().to_vec();
            self.learner().scale().squash_in_place(&mut a);
            Ok(a)
        };
        match f {
            GradFn::LowLevel => mean_q(&self.learner().critic1, &squashed(net)?),
            GradFn::EnsembleLevel => {
                let mut per = vec![squashed(net)?];
                for l in &self.ensemble.learners[1..] {
                    per.push(squashed(&l.policy)?);
                }
                mean_q(&self.ensemble.central, &Ensemble::mean_actions(&per))
            }
            GradFn::CriticLoss | GradFn::CentralLoss => {
                let q = net.forward_batch(&b.state_actions(&b.actions), b.len)?;
                Ok(mse_and_grad(q.output(), targets).0)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub params_checked: usize,
}

/// Compares the analytic gradient of `f` with central differences of step
/// `step` over every parameter of the differentiated network.
pub fn grad_check(f: GradFn, case: &GradCheckCase, step: f64) -> Result<GradCheckReport> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(HedError::InvalidStepSize(step));
    }
    let (mut net, grad) = case.subject(f)?;
    let targets = match f {
        GradFn::CriticLoss => case.critic_targets()?,
        GradFn::CentralLoss => case.ensemble.central_td_targets(&case.batch, case.gamma)?,
        GradFn::LowLevel | GradFn::EnsembleLevel => Vec::new(),
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        params_checked: net.num_params(),
    };
    for j in 0..net.num_params() {
        let orig = net.params()[j];
        net.params_mut()[j] = orig + step;
        let fp = case.objective(f, &net, &targets)?;
        net.params_mut()[j] = orig - step;
        let fm = case.objective(f, &net, &targets)?;
        net.params_mut()[j] = orig;
        let fd = (fp - fm) / (2.0 * step);
        report.max_rel_error = report.max_rel_error.max(rel_err(grad[j], fd));
        report.max_abs_error = report.max_abs_error.max((grad[j] - fd).abs());
    }
    Ok(report)
}

/// Largest relative mismatch between the finite-difference response of the
/// ensemble action and `1/N` times that of learner `i`, over every parameter
/// of learner `i` and every action component of `states`.
pub fn jacobian_factor_error(
    e: &Ensemble,
    states: &[f64],
    n_states: usize,
    i: usize,
    step: f64,
) -> Result<f64> {
    if i >= e.n() {
        return Err(HedError::SessionMismatch(format!(
            "learner index {i} out of range"
        )));
    }
    let inv_n = 1.0 / e.n() as f64;
    let mut probe = e.clone();
    let mut worst = 0.0f64;
    for j in 0..e.learners[i].policy.num_params() {
        let orig = e.learners[i].policy.params()[j];
        let mut eval = |x: f64| -> Result<(Vec<f64>, Vec<f64>)> {
            probe.learners[i].policy.params_mut()[j] = x;
            let ens = probe.ensemble_actions(states, n_states)?;
            let (_, own) = probe.learners[i].policy_actions(states, n_states)?;
            Ok((ens, own))
        };
        let (ep, ip) = eval(orig + step)?;
        let (em, im) = eval(orig - step)?;
        probe.learners[i].policy.params_mut()[j] = orig;
        for k in 0..ep.len() {
            let de = (ep[k] - em[k]) / (2.0 * step);
            let di = (ip[k] - im[k]) / (2.0 * step);
            worst = worst.max(rel_err(de, inv_n * di));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for g in GradFn::ALL {
            assert_eq!(g.to_string().parse::<GradFn>().unwrap(), g);
        }
        assert!(matches!(
            "bogus".parse::<GradFn>(),
            Err(HedError::UnknownGradFn(_))
        ));
    }

    #[test]
    fn all_gradients_match_finite_differences() {
        for seed in 0..3 {
            let case = GradCheckCase::random(3, seed).unwrap();
            for g in GradFn::ALL {
                let r = grad_check(g, &case, 1e-6).unwrap();
                assert!(r.max_rel_error < 1e-5, "{g} seed {seed}: {r:?}");
                assert!(r.params_checked > 0);
            }
        }
    }

    #[test]
    fn constant_critic_gives_zero_error() {
        let mut case = GradCheckCase::random(2, 5).unwrap();
        case.ensemble.learners[0].critic1.params_mut().scale(0.0);
        case.ensemble.central.params_mut().scale(0.0);
        for g in [GradFn::LowLevel, GradFn::EnsembleLevel] {
            assert_eq!(grad_check(g, &case, 1e-6).unwrap().max_rel_error, 0.0);
        }
    }

    #[test]
    fn halving_the_step_quarters_truncation_error() {
        let case = GradCheckCase::random(2, 6).unwrap();
        for g in GradFn::ALL {
            let coarse = grad_check(g, &case, 2e-2).unwrap().max_abs_error;
            let fine = grad_check(g, &case, 1e-2).unwrap().max_abs_error;
            let ratio = coarse / fine;
            assert!((3.0..5.0).contains(&ratio), "{g}: {ratio}");
        }
    }

    #[test]
    fn ensemble_response_is_one_nth_of_learner_response() {
        for n in [2, 5] {
            let case = GradCheckCase::random(n, 7).unwrap();
            let b = &case.batch;
            for i in [0, n - 1] {
                let err = jacobian_factor_error(&case.ensemble, &b.states, b.len, i, 1e-6).unwrap();
                assert!(err < 1e-6, "n {n} i {i}: {err}");
            }
        }
    }

    #[test]
    fn bad_step_is_rejected() {
        let case = GradCheckCase::random(2, 8).unwrap();
        assert!(grad_check(GradFn::LowLevel, &case, 0.0).is_err());
    }
}
