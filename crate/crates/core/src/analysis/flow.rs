//! The three-step rule as an integrator of the scalar gradient flow
//! `dx/dt = -lambda (x - theta*)`.

use crate::error::Result;
use crate::multistep::{check_absolute_stability, MultiStepCoefficients};

/// Half-width of the `lambda h` band around `2 - 4 rho0` where the three
/// stability verdicts are not compared.
pub const BOUNDARY_BAND: f64 = 0.01;

/// Iterates grow past this multiple of the initial error count as diverged.
const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticProblem {
    pub lambda: f64,
    pub theta_star: f64,
    pub x0: f64,
    pub x1: f64,
    pub x2: f64,
    pub h: f64,
    pub rho0: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl QuadraticProblem {
    /// Starts from `x0 = x1 = x2 = 0` towards `theta* = 3` with `lambda = 1`,
    /// so `h` equals `lambda h`.
    pub fn unit(rho0: f64, lambda_h: f64) -> Self {
        Self {
            lambda: 1.0,
            theta_star: 3.0,
            x0: 0.0,
            x1: 0.0,
            x2: 0.0,
            h: lambda_h,
            rho0,
            max_iters: 200_000,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOutcome {
    pub converged: bool,
    pub diverged: bool,
    pub iterations: usize,
    /// `|x - theta*|` at the newest iterate.
    pub final_error: f64,
}

/// Runs `x[k+3] = (1 - rho0) x[k+2] + 2 rho0 x[k+1] - rho0 x[k] - h lambda (x[k+2] - theta*)`
/// until the whole window is within `tol` of `theta*`, the error blows up,
/// or `max_iters` is reached.
pub fn quadratic_flow_run(p: &QuadraticProblem) -> Result<FlowOutcome> {
    let c = MultiStepCoefficients::from_rho0_allow_unstable(p.rho0, p.h)?;
    let (mut a, mut b, mut x) = (
        p.x0 - p.theta_star,
        p.x1 - p.theta_star,
        p.x2 - p.theta_star,
    );
    let initial = a.abs().max(b.abs()).max(x.abs());
    let limit = DIVERGENCE_FACTOR * initial;
    for k in 0..=p.max_iters {
        let window = a.abs().max(b.abs()).max(x.abs());
        if window < p.tol {
            return Ok(FlowOutcome {
                converged: true,
                diverged: false,
                iterations: k,
                final_error: x.abs(),
            });
        }
        // NaN counts as diverged
        if window.is_nan() || window > limit {
            return Ok(FlowOutcome {
                converged: false,
                diverged: true,
                iterations: k,
                final_error: x.abs(),
            });
        }
        if k == p.max_iters {
            break;
        }
        // the error obeys the same linear recurrence as the iterate
        let next = c.step_scalar(a, b, x, -p.lambda * x);
        (a, b, x) = (b, x, next);
    }
    Ok(FlowOutcome {
        converged: false,
        diverged: false,
        iterations: p.max_iters,
        final_error: x.abs(),
    })
}

/// Stability verdicts at one `(rho0, lambda h)` grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub rho0: f64,
    pub lambda_h: f64,
    pub a: [f64; 4],
    pub routh_ok: bool,
    pub pi_root_max: f64,
    pub empirical_converged: bool,
    /// Within [`BOUNDARY_BAND`] of `lambda h = 2 - 4 rho0`.
    pub in_band: bool,
}

impl GridPoint {
    pub fn verdicts_agree(&self) -> bool {
        let roots_ok = self.pi_root_max < 1.0;
        self.routh_ok == roots_ok && roots_ok == self.empirical_converged
    }
}

pub fn stability_grid(rho0s: &[f64], lambda_hs: &[f64]) -> Result<Vec<GridPoint>> {
    let mut out = Vec::with_capacity(rho0s.len() * lambda_hs.len());
    for &rho0 in rho0s {
        for &lambda_h in lambda_hs {
            let abs = check_absolute_stability(rho0, lambda_h);
            let run = quadratic_flow_run(&QuadraticProblem::unit(rho0, lambda_h))?;
            out.push(GridPoint {
                rho0,
                lambda_h,
                a: abs.a,
                routh_ok: abs.routh_ok,
                pi_root_max: abs.pi_root_max,
                empirical_converged: run.converged,
                in_band: (lambda_h - (2.0 - 4.0 * rho0)).abs() < BOUNDARY_BAND,
            });
        }
    }
    Ok(out)
}

/// Simulated convergence boundary along `lambda h` for one `rho0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryBracket {
    pub rho0: f64,
    /// Largest `lambda h` whose run converged.
    pub last_converged: f64,
    /// Smallest `lambda h` whose run did not converge.
    pub first_unconverged: f64,
}

impl BoundaryBracket {
    /// Both sides lie within `tol` of `2 - 4 rho0` and on the correct side.
    pub fn brackets_edge(&self, tol: f64) -> bool {
        let edge = 2.0 - 4.0 * self.rho0;
        let slack = 1e-9;
        self.last_converged <= edge + slack
            && self.first_unconverged >= edge - slack
            && edge - self.last_converged <= tol + slack
            && self.first_unconverged - edge <= tol + slack
    }
}

/// One bracket per distinct `rho0`, in order of first appearance.
pub fn boundary_brackets(points: &[GridPoint]) -> Vec<BoundaryBracket> {
    let mut out: Vec<BoundaryBracket> = Vec::new();
    for p in points {
        let idx = match out.iter().position(|b| b.rho0 == p.rho0) {
            Some(i) => i,
            None => {
                out.push(BoundaryBracket {
                    rho0: p.rho0,
                    last_converged: f64::NEG_INFINITY,
                    first_unconverged: f64::INFINITY,
                });
                out.len() - 1
            }
        };
        let b = &mut out[idx];
        if p.empirical_converged {
            b.last_converged = b.last_converged.max(p.lambda_h);
        } else {
            b.first_unconverged = b.first_unconverged.min(p.lambda_h);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_point_converges_immediately() {
        let p = QuadraticProblem {
            x0: 3.0,
            x1: 3.0,
            x2: 3.0,
            ..QuadraticProblem::unit(0.1, 1.0)
        };
        let out = quadratic_flow_run(&p).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn stable_point_converges() {
        let out = quadratic_flow_run(&QuadraticProblem::unit(0.1, 1.0)).unwrap();
        assert!(out.converged && out.final_error < 1e-6, "{out:?}");
    }

    #[test]
    fn unstable_point_diverges() {
        // A0 = 2 - 1.7 - 0.4 < 0
        let out = quadratic_flow_run(&QuadraticProblem::unit(0.1, 1.7)).unwrap();
        assert!(out.diverged && !out.converged, "{out:?}");
    }

    #[test]
    fn recurrence_matches_hand_iteration() {
        let p = QuadraticProblem {
            max_iters: 5,
            tol: 0.0,
            ..QuadraticProblem::unit(0.2, 0.3)
        };
        let out = quadratic_flow_run(&p).unwrap();
        let mut xs = vec![0.0f64, 0.0, 0.0];
        for _ in 0..5 {
            let k = xs.len();
            let g = -(xs[k - 1] - 3.0);
            xs.push(0.8 * xs[k - 1] + 0.4 * xs[k - 2] - 0.2 * xs[k - 3] + 0.3 * g);
        }
        assert!((out.final_error - (xs[7] - 3.0).abs()).abs() < 1e-14);
        assert!(!out.converged && !out.diverged);
    }

    #[test]
    fn single_step_limit_recovers_gradient_descent_bound() {
        for lh in [0.1, 0.5, 1.0, 1.5, 1.9] {
            assert!(
                quadratic_flow_run(&QuadraticProblem::unit(0.0, lh))
                    .unwrap()
                    .converged,
                "{lh}"
            );
        }
        for lh in [2.1, 2.5, 3.0] {
            assert!(
                quadratic_flow_run(&QuadraticProblem::unit(0.0, lh))
                    .unwrap()
                    .diverged,
                "{lh}"
            );
        }
    }

    #[test]
    fn small_grid_agrees_off_band() {
        let pts = stability_grid(&[0.1, 0.3], &[0.5, 0.8, 1.0, 1.5, 2.0]).unwrap();
        assert_eq!(pts.len(), 10);
        for p in pts.iter().filter(|p| !p.in_band) {
            assert!(p.verdicts_agree(), "{p:?}");
        }
        assert!(pts.iter().any(|p| p.in_band));
        let b = boundary_brackets(&pts);
        assert_eq!(b.len(), 2);
        assert_eq!((b[0].last_converged, b[0].first_unconverged), (1.5, 2.0));
        assert!(!b[0].brackets_edge(0.05));
        assert!(b[0].brackets_edge(0.5));
    }
}
