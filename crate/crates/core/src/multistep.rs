//! Linear three-step integration rule for high-level policy training.
//!
//! The rule integrates the gradient flow `dx/dt = g(x)` with
//!
//! ```text
//! x[k+3] = -rho2 * x[k+2] - rho1 * x[k+1] - rho0 * x[k] + h * g(x[k+2])
//! ```
//!
//! i.e. characteristic polynomials `rho(F) = F^3 + rho2 F^2 + rho1 F + rho0`
//! and `sigma(F) = F^2`. Consistency (`rho(1) = 0`, `rho'(1) = sigma(1)`)
//! pins `rho1 = -2 rho0` and `rho2 = rho0 - 1`, leaving `rho0` free. The rule
//! is zero-stable for `0 < rho0 < 1/2` and absolutely stable on a quadratic
//! objective with curvature `lambda` when `0 < lambda h < 2 - 4 rho0`.

use nalgebra::Matrix3;
use num_complex::Complex64;

use crate::error::{check_len, HedError, Result};
use crate::nn::ParamVector;

/// Tolerance on `|root|` for deciding that a root lies on the unit circle.
pub const UNIT_CIRCLE_TOL: f64 = 1e-12;

/// Coefficients of the three-step rule plus the step size `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiStepCoefficients {
    pub rho0: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub h: f64,
}

impl MultiStepCoefficients {
    /// Consistent coefficients `(rho0, -2 rho0, rho0 - 1)`; rejects `rho0`
    /// outside the zero-stable range `(0, 1/2)`.
    pub fn from_rho0(rho0: f64, h: f64) -> Result<Self> {
        if !(rho0 > 0.0 && rho0 < 0.5) {
            return Err(HedError::UnstableRho0(rho0));
        }
        Self::from_rho0_allow_unstable(rho0, h)
    }

    /// Like [`from_rho0`](Self::from_rho0) but accepts any finite `rho0`, for
    /// probing the unstable region and the `rho0 = 0` single-step limit.
    pub fn from_rho0_allow_unstable(rho0: f64, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(HedError::InvalidStepSize(h));
        }
        if !rho0.is_finite() {
            return Err(HedError::NonFinite("rho0"));
        }
        Ok(Self {
            rho0,
            rho1: -2.0 * rho0,
            rho2: rho0 - 1.0,
            h,
        })
    }

    /// Plain gradient ascent `x[k+3] = x[k+2] + h g`.
    pub fn single_step(h: f64) -> Result<Self> {
        Self::from_rho0_allow_unstable(0.0, h)
    }

    /// `(rho(1), rho'(1) - sigma(1))`; both vanish for a consistent method.
    pub fn consistency_residuals(&self) -> (f64, f64) {
        let rho_at_1 = 1.0 + self.rho2 + self.rho1 + self.rho0;
        let drho_at_1 = 3.0 + 2.0 * self.rho2 + self.rho1;
        (rho_at_1, drho_at_1 - 1.0)
    }

    /// One step of the recurrence on scalars.
    #[inline]
    pub fn step_scalar(&self, x_prev2: f64, x_prev1: f64, x_curr: f64, grad: f64) -> f64 {
        -self.rho2 * x_curr - self.rho1 * x_prev1 - self.rho0 * x_prev2 + self.h * grad
    }
}

/// Evaluates the monic cubic `F^3 + b F^2 + c F + d`.
pub fn eval_monic_cubic(b: f64, c: f64, d: f64, z: Complex64) -> Complex64 {
    ((z + b) * z + c) * z + d
}

/// Roots of `F^3 + b F^2 + c F + d` as eigenvalues of the companion matrix,
/// refined with a few Newton steps.
pub fn monic_cubic_roots(b: f64, c: f64, d: f64) -> [Complex64; 3] {
    let companion = Matrix3::new(-b, -c, -d, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
    let eig = companion.complex_eigenvalues();
    let mut roots = [eig[0], eig[1], eig[2]];
    for r in &mut roots {
        for _ in 0..3 {
            let p = eval_monic_cubic(b, c, d, *r);
            let dp = (*r * 3.0 + 2.0 * b) * *r + c;
            if dp.norm() == 0.0 || p.norm() == 0.0 {
                break;
            }
            let next = *r - p / dp;
            if eval_monic_cubic(b, c, d, next).norm() < p.norm() {
                *r = next;
            } else {
                break;
            }
        }
    }
    roots
}

/// Roots of `rho(F)` from the closed forms `1` and
/// `(-rho0 ± sqrt(rho0 (rho0 + 4))) / 2`.
pub fn characteristic_roots(c: &MultiStepCoefficients) -> [Complex64; 3] {
    let disc = Complex64::new(c.rho0 * (c.rho0 + 4.0), 0.0).sqrt();
    let minus = Complex64::new(-c.rho0, 0.0);
    let roots = [
        Complex64::new(1.0, 0.0),
        (minus + disc) * 0.5,
        (minus - disc) * 0.5,
    ];
    debug_assert!(roots
        .iter()
        .all(|&r| eval_monic_cubic(c.rho2, c.rho1, c.rho0, r).norm() < 1e-10));
    roots
}

/// Zero-stability: every root of `rho(F)` in the closed unit disk and any
/// root on the unit circle simple.
pub fn check_zero_stability(c: &MultiStepCoefficients) -> bool {
    let roots = monic_cubic_roots(c.rho2, c.rho1, c.rho0);
    roots.iter().enumerate().all(|(i, r)| {
        let m = r.norm();
        if m > 1.0 + UNIT_CIRCLE_TOL {
            return false;
        }
        if m < 1.0 - UNIT_CIRCLE_TOL {
            return true;
        }
        // On the circle: no other root may coincide with this one.
        roots
            .iter()
            .enumerate()
            .all(|(j, s)| i == j || (r - s).norm() > 1e-6)
    })
}

/// Result of the absolute-stability analysis at one `(rho0, lambda h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbsoluteStability {
    /// Routh-Hurwitz coefficients `A0..A3` of the transformed polynomial.
    pub a: [f64; 4],
    pub routh_ok: bool,
    /// Largest root magnitude of `Pi(F) = rho(F) + lambda h sigma(F)`.
    pub pi_root_max: f64,
}

/// Routh-Hurwitz test on `Pi(F) = F^3 + (rho0 - 1 + lambda h) F^2 - 2 rho0 F + rho0`
/// together with a direct root computation for cross-checking.
pub fn check_absolute_stability(rho0: f64, lambda_h: f64) -> AbsoluteStability {
    let a0 = 2.0 - lambda_h - 4.0 * rho0;
    let a1 = 4.0 - lambda_h - 2.0 * rho0;
    let a2 = 2.0 + lambda_h;
    let a3 = lambda_h;
    let a = [a0, a1, a2, a3];
    let routh_ok = a.iter().all(|&x| x > 0.0) && a1 * a2 > a0 * a3;
    let pi_root_max = monic_cubic_roots(rho0 - 1.0 + lambda_h, -2.0 * rho0, rho0)
        .iter()
        .map(|r| r.norm())
        .fold(0.0, f64::max);
    AbsoluteStability {
        a,
        routh_ok,
        pi_root_max,
    }
}

/// Full stability picture for one coefficient set and one `lambda h`.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub rho_roots: [Complex64; 3],
    pub zero_stable: bool,
    pub absolute: AbsoluteStability,
}

pub fn stability_report(c: &MultiStepCoefficients, lambda_h: f64) -> StabilityReport {
    StabilityReport {
        rho_roots: characteristic_roots(c),
        zero_stable: check_zero_stability(c),
        absolute: check_absolute_stability(c.rho0, lambda_h),
    }
}

/// The three most recent iterates `x[k], x[k+1], x[k+2]` of one learner.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapWindow {
    prev2: ParamVector,
    prev1: ParamVector,
    curr: ParamVector,
}

impl BootstrapWindow {
    pub fn new(prev2: ParamVector, prev1: ParamVector, curr: ParamVector) -> Result<Self> {
        check_len("BootstrapWindow prev1", prev2.len(), prev1.len())?;
        check_len("BootstrapWindow curr", prev2.len(), curr.len())?;
        Ok(Self { prev2, prev1, curr })
    }

    pub fn prev2(&self) -> &ParamVector {
        &self.prev2
    }

    pub fn prev1(&self) -> &ParamVector {
        &self.prev1
    }

    pub fn curr(&self) -> &ParamVector {
        &self.curr
    }

    pub fn len(&self) -> usize {
        self.curr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curr.is_empty()
    }

    /// Slides the window forward, dropping the oldest point.
    pub fn push(&mut self, x_new: ParamVector) -> Result<()> {
        check_len("BootstrapWindow::push", self.curr.len(), x_new.len())?;
        let old_curr = std::mem::replace(&mut self.curr, x_new);
        let old_prev1 = std::mem::replace(&mut self.prev1, old_curr);
        self.prev2 = old_prev1;
        Ok(())
    }
}

/// Next iterate from the window and the gradient evaluated at `w.curr()`.
pub fn multistep_update(
    w: &BootstrapWindow,
    grad: &[f64],
    c: &MultiStepCoefficients,
) -> Result<ParamVector> {
    check_len("multistep_update grad", w.len(), grad.len())?;
    let out: Vec<f64> = w
        .prev2
        .iter()
        .zip(w.prev1.iter())
        .zip(w.curr.iter())
        .zip(grad)
        .map(|(((&x0, &x1), &x2), &g)| c.step_scalar(x0, x1, x2, g))
        .collect();
    Ok(ParamVector::from(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::from(v.to_vec())
    }

    #[test]
    fn coefficients_from_rho0() {
        let c = MultiStepCoefficients::from_rho0(0.0001, 1e-3).unwrap();
        assert!((c.rho1 + 0.0002).abs() < 1e-18);
        assert!((c.rho2 + 0.9999).abs() < 1e-15);

        let c = MultiStepCoefficients::from_rho0(0.25, 1.0).unwrap();
        assert_eq!((c.rho0, c.rho1, c.rho2), (0.25, -0.5, -0.75));

        let s = MultiStepCoefficients::single_step(0.1).unwrap();
        assert_eq!((s.rho0, s.rho1, s.rho2), (0.0, 0.0, -1.0));
    }

    #[test]
    fn rejects_unstable_rho0_and_bad_h() {
        for rho0 in [0.0, 0.5, 0.6, -0.1, f64::NAN] {
            assert!(matches!(
                MultiStepCoefficients::from_rho0(rho0, 0.1),
                Err(HedError::UnstableRho0(_))
            ));
        }
        assert!(MultiStepCoefficients::from_rho0_allow_unstable(0.6, 0.1).is_ok());
        assert!(MultiStepCoefficients::from_rho0(0.1, 0.0).is_err());
        assert!(MultiStepCoefficients::from_rho0(0.1, -1.0).is_err());
    }

    #[test]
    fn characteristic_roots_closed_form() {
        let c = MultiStepCoefficients::from_rho0(0.25, 1.0).unwrap();
        let r = characteristic_roots(&c);
        assert!((r[0].re - 1.0).abs() < 1e-15);
        assert!((r[1].re - 0.390388).abs() < 1e-6);
        assert!((r[2].re + 0.640388).abs() < 1e-6);
        let product = r[0] * r[1] * r[2];
        assert!((product.re + 0.25).abs() < 1e-14 && product.im.abs() < 1e-14);

        let c = MultiStepCoefficients::from_rho0_allow_unstable(0.6, 1.0).unwrap();
        let r = characteristic_roots(&c);
        assert!((r[2].norm() - 1.130_662_386).abs() < 1e-8);
        assert!(r[2].norm() > 1.0);
    }

    #[test]
    fn companion_roots_agree_with_closed_form() {
        for k in 1..50 {
            let rho0 = k as f64 * 0.015;
            let c = MultiStepCoefficients::from_rho0_allow_unstable(rho0, 1.0).unwrap();
            let mut closed: Vec<f64> = characteristic_roots(&c).iter().map(|r| r.re).collect();
            let mut numeric: Vec<f64> = monic_cubic_roots(c.rho2, c.rho1, c.rho0)
                .iter()
                .map(|r| r.re)
                .collect();
            closed.sort_by(f64::total_cmp);
            numeric.sort_by(f64::total_cmp);
            for (a, b) in closed.iter().zip(&numeric) {
                assert!((a - b).abs() < 1e-10, "rho0 {rho0}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_stability_examples() {
        let at = |rho0| {
            check_zero_stability(
                &MultiStepCoefficients::from_rho0_allow_unstable(rho0, 1.0).unwrap(),
            )
        };
        assert!(at(0.1));
        assert!(!at(0.6));
        assert!(at(0.4999));
        assert!(!at(0.5001));
    }

    #[test]
    fn zero_stability_rejects_double_unit_root() {
        // (F - 1)^2 F: double root on the unit circle
        let c = MultiStepCoefficients {
            rho0: 0.0,
            rho1: 1.0,
            rho2: -2.0,
            h: 1.0,
        };
        assert!(!check_zero_stability(&c));
    }

    #[test]
    fn absolute_stability_examples() {
        let s = check_absolute_stability(0.1, 1.0);
        let want = [0.6, 2.8, 3.0, 1.0];
        for (a, w) in s.a.iter().zip(want) {
            assert!((a - w).abs() < 1e-12);
        }
        assert!((s.a[1] * s.a[2] - 8.4).abs() < 1e-12);
        assert!(s.routh_ok);
        assert!(s.pi_root_max < 1.0);

        let s = check_absolute_stability(0.1, 1.7);
        assert!((s.a[0] + 0.1).abs() < 1e-12);
        assert!(!s.routh_ok);
        assert!(s.pi_root_max > 1.0);

        for rho0 in [0.01, 0.2, 0.45] {
            let s = check_absolute_stability(rho0, 0.0);
            assert_eq!(s.a[3], 0.0);
            assert!(!s.routh_ok);
        }
    }

    #[test]
    fn update_examples() {
        let w = BootstrapWindow::new(pv(&[0.0]), pv(&[0.0]), pv(&[1.0])).unwrap();
        let c = MultiStepCoefficients::from_rho0(0.1, 0.5).unwrap();
        let x = multistep_update(&w, &[0.0], &c).unwrap();
        assert!((x[0] - 0.9).abs() < 1e-15);

        let s = MultiStepCoefficients::single_step(0.5).unwrap();
        let w = BootstrapWindow::new(pv(&[3.0, 1.0]), pv(&[-2.0, 4.0]), pv(&[1.0, 2.0])).unwrap();
        let x = multistep_update(&w, &[2.0, -4.0], &s).unwrap();
        assert_eq!(x.as_slice(), &[2.0, 0.0]);

        let v = pv(&[1.5, -2.5, 7.0]);
        let w = BootstrapWindow::new(v.clone(), v.clone(), v.clone()).unwrap();
        let x = multistep_update(&w, &[0.0; 3], &c).unwrap();
        for (a, b) in x.iter().zip(v.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(multistep_update(&w, &[0.0; 2], &c).is_err());
    }

    #[test]
    fn window_push_semantics() {
        let mut w = BootstrapWindow::new(pv(&[0.0]), pv(&[1.0]), pv(&[2.0])).unwrap();
        w.push(pv(&[3.0])).unwrap();
        assert_eq!(w.curr().as_slice(), &[3.0]);
        assert_eq!(w.prev1().as_slice(), &[2.0]);
        assert_eq!(w.prev2().as_slice(), &[1.0]);
        for x in [10.0, 11.0, 12.0] {
            w.push(pv(&[x])).unwrap();
        }
        assert_eq!(
            (w.prev2()[0], w.prev1()[0], w.curr()[0]),
            (10.0, 11.0, 12.0)
        );
        assert!(w.push(pv(&[1.0, 2.0])).is_err());
        assert!(BootstrapWindow::new(pv(&[0.0]), pv(&[1.0, 2.0]), pv(&[2.0])).is_err());
    }

    #[test]
    fn repeated_updates_follow_scalar_recurrence() {
        // oracle: hand-rolled recurrence on plain floats
        let (rho0, h, lambda, target) = (0.2, 0.3, 1.5, -1.0);
        let mut xs = vec![2.0, 0.5, 1.0];
        for k in 0..40 {
            let g = -lambda * (xs[k + 2] - target);
            xs.push((1.0 - rho0) * xs[k + 2] + 2.0 * rho0 * xs[k + 1] - rho0 * xs[k] + h * g);
        }
        let c = MultiStepCoefficients::from_rho0(rho0, h).unwrap();
        let mut w = BootstrapWindow::new(pv(&[2.0]), pv(&[0.5]), pv(&[1.0])).unwrap();
        for k in 0..40 {
            let g = -lambda * (w.curr()[0] - target);
            let next = multistep_update(&w, &[g], &c).unwrap();
            w.push(next).unwrap();
            assert_eq!(w.curr()[0], xs[k + 3]);
        }
    }

    proptest! {
        #[test]
        fn consistency_holds(rho0 in 1e-6f64..0.5, h in 1e-6f64..10.0) {
            let c = MultiStepCoefficients::from_rho0(rho0, h).unwrap();
            let (r1, r2) = c.consistency_residuals();
            prop_assert!(r1.abs() < 1e-12 && r2.abs() < 1e-12);
            let roots = characteristic_roots(&c);
            prop_assert!((roots[0] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
            let prod = roots[0] * roots[1] * roots[2];
            prop_assert!((prod.re + rho0).abs() < 1e-12);
        }

        #[test]
        fn update_is_linear(
            a in -3.0f64..3.0, b in -3.0f64..3.0,
            w1 in proptest::collection::vec(-5.0f64..5.0, 12),
            w2 in proptest::collection::vec(-5.0f64..5.0, 12),
            rho0 in 0.001f64..0.49,
        ) {
            let c = MultiStepCoefficients::from_rho0(rho0, 0.7).unwrap();
            let split = |v: &[f64]| {
                BootstrapWindow::new(pv(&v[0..3]), pv(&v[3..6]), pv(&v[6..9])).unwrap()
            };
            let mix: Vec<f64> = w1.iter().zip(&w2).map(|(x, y)| a * x + b * y).collect();
            let u1 = multistep_update(&split(&w1), &w1[9..12], &c).unwrap();
            let u2 = multistep_update(&split(&w2), &w2[9..12], &c).unwrap();
            let um = multistep_update(&split(&mix), &mix[9..12], &c).unwrap();
            for j in 0..3 {
                let lhs = um[j];
                let rhs = a * u1[j] + b * u2[j];
                prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + rhs.abs()));
            }
        }
    }
}
