//! One high-level iteration on linear scalar-action policies
//! `pi^i(s) = Phi(s)^T theta_i` with a constant critic slope `C`.

use rand::Rng;

use crate::error::{HedError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearPolicyScenario {
    /// Feature vector `Phi(s)` at the state under study.
    pub phi: Vec<f64>,
    /// One parameter vector per learner, each of length `phi.len()`.
    pub thetas: Vec<Vec<f64>>,
    /// `grad_a Q^e(s, a)` at the ensemble action.
    pub c: f64,
    pub rho0: f64,
    pub h: f64,
}

impl LinearPolicyScenario {
    pub fn n(&self) -> usize {
        self.thetas.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.thetas.is_empty() || self.phi.is_empty() {
            return Err(HedError::InvalidSpec(
                "scenario needs N >= 1 and d >= 1".into(),
            ));
        }
        for t in &self.thetas {
            crate::error::check_len("LinearPolicyScenario theta", self.phi.len(), t.len())?;
        }
        Ok(())
    }

    /// Random scenario with entries uniform in `[-1, 1]`.
    pub fn random<R: Rng + ?Sized>(n: usize, d: usize, rho0: f64, rng: &mut R) -> Self {
        let mut v = |k: usize| {
            (0..k)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect::<Vec<f64>>()
        };
        let phi = v(d);
        let thetas = (0..n).map(|_| v(d)).collect();
        let c = v(1)[0];
        let h = v(1)[0].abs() + 0.01;
        Self {
            phi,
            thetas,
            c,
            rho0,
            h,
        }
    }

    /// `pi^i(s)` for every learner.
    pub fn actions(&self) -> Vec<f64> {
        self.thetas
            .iter()
            .map(|t| t.iter().zip(&self.phi).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn ensemble_action(&self) -> f64 {
        mean(&self.actions())
    }

    /// Action shift `(h C / N) Phi^T Phi` common to every learner.
    pub fn shift(&self) -> f64 {
        let norm2: f64 = self.phi.iter().map(|x| x * x).sum();
        self.h * self.c / self.n() as f64 * norm2
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Per-learner and ensemble actions after one single-step update.
pub fn sin_actions(sc: &LinearPolicyScenario) -> Result<(Vec<f64>, f64)> {
    sc.validate()?;
    let shift = sc.shift();
    let per: Vec<f64> = sc.actions().iter().map(|a| a + shift).collect();
    Ok((per, sc.ensemble_action() + shift))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MulStats {
    /// `E[Mul(pi^i)]` for every learner.
    pub expected_actions: Vec<f64>,
    pub expected_ensemble: f64,
    /// `sum_i E[(Mul(pi^i) - E[Mul(pi^e)])^2]`.
    pub variance_sum: f64,
}

/// Exact expectations over all `N^2` equally likely `(p, q)` draws of each
/// learner after one multi-step update.
pub fn mul_action_stats(sc: &LinearPolicyScenario) -> Result<MulStats> {
    sc.validate()?;
    let pi = sc.actions();
    let n = sc.n();
    let shift = sc.shift();
    let rho0 = sc.rho0;
    let mul = |i: usize, p: usize, q: usize| {
        (1.0 - rho0) * pi[i] + 2.0 * rho0 * pi[q] - rho0 * pi[p] + shift
    };
    let pairs = (n * n) as f64;
    let expected_actions: Vec<f64> = (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for p in 0..n {
                for q in 0..n {
                    acc += mul(i, p, q);
                }
            }
            acc / pairs
        })
        .collect();
    // Mul(pi^e) is the mean of the Mul(pi^i), so its expectation is the mean
    // of the expectations.
    let expected_ensemble = mean(&expected_actions);
    let mut variance_sum = 0.0;
    for i in 0..n {
        let mut acc = 0.0;
        for p in 0..n {
            for q in 0..n {
                acc += (mul(i, p, q) - expected_ensemble).powi(2);
            }
        }
        variance_sum += acc / pairs;
    }
    Ok(MulStats {
        expected_actions,
        expected_ensemble,
        variance_sum,
    })
}

/// Closed-form contraction factor `1 - 2 rho0 + 6 rho0^2`.
pub fn predicted_variance_ratio(rho0: f64) -> f64 {
    1.0 - 2.0 * rho0 + 6.0 * rho0 * rho0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prop2Report {
    /// `|E[Mul(pi^e)] - Sin(pi^e)|`.
    pub identity_residual: f64,
    pub variance_ratio: f64,
    pub predicted_ratio: f64,
    pub passed: bool,
}

/// Ensemble-mean identity and variance contraction for one scenario.
pub fn prop2_check(sc: &LinearPolicyScenario) -> Result<Prop2Report> {
    let pi = sc.actions();
    let pe = mean(&pi);
    let delta: f64 = pi.iter().map(|a| (a - pe).powi(2)).sum();
    if delta.is_nan() || delta <= 0.0 {
        return Err(HedError::Degenerate(
            "all learner actions coincide, spread is zero",
        ));
    }
    let stats = mul_action_stats(sc)?;
    let (_, sin_e) = sin_actions(sc)?;
    let identity_residual = (stats.expected_ensemble - sin_e).abs();
    let variance_ratio = stats.variance_sum / delta;
    let predicted_ratio = predicted_variance_ratio(sc.rho0);
    let third = 1.0 / 3.0;
    let side_ok = if (sc.rho0 - third).abs() < 1e-9 {
        (variance_ratio - 1.0).abs() < 1e-10
    } else {
        (variance_ratio < 1.0) == (sc.rho0 > 0.0 && sc.rho0 < third)
    };
    let passed =
        identity_residual < 1e-12 && (variance_ratio - predicted_ratio).abs() < 1e-10 && side_ok;
    Ok(Prop2Report {
        identity_residual,
        variance_ratio,
        predicted_ratio,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scenario(
        thetas: Vec<Vec<f64>>,
        phi: Vec<f64>,
        c: f64,
        rho0: f64,
        h: f64,
    ) -> LinearPolicyScenario {
        LinearPolicyScenario {
            phi,
            thetas,
            c,
            rho0,
            h,
        }
    }

    #[test]
    fn sin_with_zero_slope_keeps_actions() {
        let sc = scenario(
            vec![vec![1.0, 2.0], vec![-1.0, 0.5]],
            vec![0.3, -0.2],
            0.0,
            0.1,
            0.5,
        );
        let (per, e) = sin_actions(&sc).unwrap();
        assert_eq!(per, sc.actions());
        assert_eq!(e, sc.ensemble_action());
    }

    #[test]
    fn sin_single_unit_case() {
        let sc = scenario(vec![vec![0.0]], vec![1.0], 1.0, 0.1, 1.0);
        let (per, e) = sin_actions(&sc).unwrap();
        assert_eq!(per, vec![1.0]);
        assert_eq!(e, 1.0);
    }

    #[test]
    fn sin_ensemble_is_mean_of_learners() {
        let sc = LinearPolicyScenario::random(6, 4, 0.1, &mut ChaCha8Rng::seed_from_u64(0));
        let (per, e) = sin_actions(&sc).unwrap();
        assert!((mean(&per) - e).abs() < 1e-14);
    }

    #[test]
    fn zero_rho0_reduces_to_single_step() {
        let sc = LinearPolicyScenario::random(5, 3, 0.0, &mut ChaCha8Rng::seed_from_u64(1));
        let stats = mul_action_stats(&sc).unwrap();
        let (per, e) = sin_actions(&sc).unwrap();
        for (a, b) in stats.expected_actions.iter().zip(&per) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!((stats.expected_ensemble - e).abs() < 1e-14);
        let pi = sc.actions();
        let delta: f64 = pi.iter().map(|a| (a - mean(&pi)).powi(2)).sum();
        assert!((stats.variance_sum - delta).abs() < 1e-13);
    }

    #[test]
    fn equal_learners_have_no_spread() {
        let theta = vec![0.4, -0.3, 0.9];
        let sc = scenario(vec![theta.clone(); 4], vec![1.0, 0.5, -0.5], 0.7, 0.2, 0.1);
        let stats = mul_action_stats(&sc).unwrap();
        assert!(stats.variance_sum.abs() < 1e-28);
        let (per, _) = sin_actions(&sc).unwrap();
        for (a, b) in stats.expected_actions.iter().zip(&per) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(matches!(prop2_check(&sc), Err(HedError::Degenerate(_))));
    }

    #[test]
    fn expected_learner_action_closed_form() {
        let sc = LinearPolicyScenario::random(4, 2, 0.15, &mut ChaCha8Rng::seed_from_u64(2));
        let stats = mul_action_stats(&sc).unwrap();
        let pi = sc.actions();
        let pe = mean(&pi);
        for (i, got) in stats.expected_actions.iter().enumerate() {
            let want = (1.0 - 0.15) * pi[i] + 0.15 * pe + sc.shift();
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn predicted_ratio_values() {
        assert!((predicted_variance_ratio(0.2) - 0.84).abs() < 1e-15);
        assert!((predicted_variance_ratio(1.0 / 3.0) - 1.0).abs() < 1e-15);
        assert!((predicted_variance_ratio(0.1) - 0.86).abs() < 1e-15);
    }

    #[test]
    fn enumerated_ratio_at_rho0_one_tenth() {
        let sc = LinearPolicyScenario::random(5, 4, 0.1, &mut ChaCha8Rng::seed_from_u64(3));
        let r = prop2_check(&sc).unwrap();
        assert!((r.variance_ratio - 0.86).abs() < 1e-10, "{r:?}");
        assert!(r.identity_residual < 1e-12);
        assert!(r.passed);
    }

    #[test]
    fn ratio_crosses_one_at_one_third() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (rho0, side) in [(0.30, -1.0), (1.0 / 3.0, 0.0), (0.36, 1.0)] {
            let sc = LinearPolicyScenario::random(6, 3, rho0, &mut rng);
            let r = prop2_check(&sc).unwrap();
            assert!(r.passed, "{rho0} {r:?}");
            let d = r.variance_ratio - 1.0;
            if side == 0.0 {
                assert!(d.abs() < 1e-10);
            } else {
                assert!(d * side > 1e-6);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let sc = scenario(
            vec![vec![1.0, 2.0], vec![1.0]],
            vec![0.3, -0.2],
            1.0,
            0.1,
            0.5,
        );
        assert!(mul_action_stats(&sc).is_err());
    }
}
