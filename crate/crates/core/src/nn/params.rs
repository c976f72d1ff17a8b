use std::ops::{Deref, DerefMut};

use crate::error::{check_len, HedError, Result};

/// Flat, ordered parameter vector of a network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &[f64]) -> Result<()> {
        check_len("axpy", self.len(), other.len())?;
        for (x, y) in self.0.iter_mut().zip(other) {
            *x += alpha * y;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.0.iter_mut().for_each(|x| *x *= alpha);
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Soft target update: `target <- tau * target + (1 - tau) * online`.
pub fn polyak_update(target: &mut [f64], online: &[f64], tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(HedError::InvalidTau(tau));
    }
    check_len("polyak_update", target.len(), online.len())?;
    for (t, o) in target.iter_mut().zip(online) {
        *t = tau * *t + (1.0 - tau) * o;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polyak_fixed_point() {
        let mut t = vec![0.3, -1.2, 5.0];
        let o = t.clone();
        polyak_update(&mut t, &o, 0.7).unwrap();
        assert_eq!(t, o);
    }

    #[test]
    fn polyak_scalar() {
        let mut t = vec![1.0];
        polyak_update(&mut t, &[0.0], 0.995).unwrap();
        assert!((t[0] - 0.995).abs() < 1e-15);
    }

    #[test]
    fn polyak_contracts_to_online() {
        let mut t = vec![10.0, -4.0];
        let o = [1.5, 2.5];
        for _ in 0..20_000 {
            polyak_update(&mut t, &o, 0.995).unwrap();
        }
        assert!((t[0] - 1.5).abs() < 1e-12);
        assert!((t[1] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn polyak_rejects_bad_tau() {
        let mut t = vec![0.0];
        for tau in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(
                polyak_update(&mut t, &[1.0], tau),
                Err(HedError::InvalidTau(_))
            ));
        }
        assert!(polyak_update(&mut t, &[1.0, 2.0], 0.5).is_err());
    }
}
