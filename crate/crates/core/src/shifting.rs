//! Objective shifting: the sigmoid mixture weight between target learning and
//! knowledge recall.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Annealing-rate values searched by default sweeps.
pub const K_GRID: [f64; 5] = [0.05, 0.1, 0.2, 0.5, 1.0];
/// Annealing-midpoint values searched by default sweeps.
pub const T0_GRID: [u64; 4] = [100, 250, 500, 1000];

/// `lambda(t) = 1 / (1 + exp(-k (t - t0)))`.
///
/// `k = 0` gives the constant `0.5` (equal-weight multi-task objective); a very
/// large `k` gives plain fine-tuning for every `t > t0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub k: f64,
    pub t0: u64,
}

impl AnnealSchedule {
    pub fn new(k: f64, t0: u64) -> Result<Self> {
        let s = AnnealSchedule { k, t0 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.k.is_finite() || self.k < 0.0 {
            return Err(Error::invalid(format!("annealing rate k must be finite and >= 0, got {}", self.k)));
        }
        Ok(())
    }

    pub fn lambda_at(&self, t: u64) -> Result<f64> {
        lambda_at(self, t)
    }
}

/// Mixture weight at optimizer step `t >= 1`.
pub fn lambda_at(sched: &AnnealSchedule, t: u64) -> Result<f64> {
    sched.validate()?;
    if t < 1 {
        return Err(Error::invalid("lambda_at: step counter starts at 1"));
    }
    if sched.k == 0.0 {
        return Ok(0.5);
    }
    Ok(stable_sigmoid(sched.k * (t as f64 - sched.t0 as f64)))
}

// Branch on the sign so exp never sees a large positive argument.
pub(crate) fn stable_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `lambda * loss_t + (1 - lambda) * loss_s`, for trace logging.
pub fn composite_loss(lambda_t: f64, loss_t: f64, loss_s: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda_t) {
        return Err(Error::invalid(format!("lambda must lie in [0, 1], got {lambda_t}")));
    }
    Ok(lambda_t * loss_t + (1.0 - lambda_t) * loss_s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched(k: f64, t0: u64) -> AnnealSchedule {
        AnnealSchedule::new(k, t0).unwrap()
    }

    #[test]
    fn midpoint_is_one_half() {
        for k in [0.0, 0.05, 1.0, 1e3] {
            for t0 in [1, 250, 1000] {
                assert_eq!(lambda_at(&sched(k, t0), t0).unwrap(), 0.5);
            }
        }
    }

    #[test]
    fn zero_rate_is_constant() {
        let s = sched(0.0, 250);
        for t in [1, 2, 249, 251, 10_000_000] {
            assert_eq!(lambda_at(&s, t).unwrap(), 0.5);
        }
    }

    #[test]
    fn reference_values() {
        // mpmath, 30 digits: 1/(1+e^-5) = 0.9933071490757151444, e^-24.9/(1+e^-24.9) = 1.5348551671189788e-11
        let s = sched(0.1, 250);
        assert!((lambda_at(&s, 300).unwrap() - 0.993_307_149_075_715_1).abs() < 1e-15);
        let early = lambda_at(&s, 1).unwrap();
        assert!((early - 1.534_855_167_118_978_8e-11).abs() < 1e-22, "{early}");
    }

    #[test]
    fn invalid_inputs() {
        assert!(AnnealSchedule::new(-0.1, 10).is_err());
        assert!(AnnealSchedule::new(f64::NAN, 10).is_err());
        assert!(lambda_at(&AnnealSchedule { k: -1.0, t0: 0 }, 5).is_err());
        assert!(lambda_at(&sched(0.1, 10), 0).is_err());
    }

    #[test]
    fn monotone_in_t() {
        // Strict while the increment is representable; near 1.0 consecutive
        // values round to the same double, so only non-decrease can hold.
        for k in [0.05, 0.2, 1.0] {
            let s = sched(k, 500);
            let mut prev = lambda_at(&s, 1).unwrap();
            for t in 2..3000 {
                let cur = lambda_at(&s, t).unwrap();
                assert!(cur >= prev, "k={k} t={t}");
                if 1.0 - prev > 1e-13 {
                    assert!(cur > prev, "k={k} t={t}");
                }
                prev = cur;
            }
        }
    }

    #[test]
    fn symmetric_about_midpoint() {
        let t0 = 20_000;
        for k in [0.05, 0.1, 1.0, 1e3] {
            let s = sched(k, t0);
            for delta in (0..=10_000).step_by(7) {
                let sum = lambda_at(&s, t0 + delta).unwrap() + lambda_at(&s, t0 - delta).unwrap();
                assert!((sum - 1.0).abs() <= 1e-15, "k={k} delta={delta}");
            }
        }
    }

    #[test]
    fn fine_tuning_limit() {
        let s = sched(1e3, 10);
        for t in 11..200 {
            assert_eq!(lambda_at(&s, t).unwrap(), 1.0);
        }
    }

    #[test]
    fn no_overflow() {
        for k in [0.0, 1e-3, 0.5, 1e3] {
            for t0 in [0, 1000, 10_000_000] {
                for t in [1, 2, 1000, 5_000_000, 10_000_000] {
                    let l = lambda_at(&sched(k, t0), t).unwrap();
                    assert!(l.is_finite() && (0.0..=1.0).contains(&l));
                }
            }
        }
    }

    #[test]
    fn composite_examples() {
        assert_eq!(composite_loss(1.0, 2.0, 4.0).unwrap(), 2.0);
        assert_eq!(composite_loss(0.0, 2.0, 4.0).unwrap(), 4.0);
        assert_eq!(composite_loss(0.5, 2.0, 4.0).unwrap(), 3.0);
        assert!(composite_loss(1.5, 2.0, 4.0).is_err());
        assert!(composite_loss(-0.1, 2.0, 4.0).is_err());
    }
}
