use serde::{Deserialize, Serialize};

/// `a + t (b − a)`, exact at `t = 1` and when `a == b`.
pub fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 1.0 {
        b
    } else if a == b {
        a
    } else {
        a + t * (b - a)
    }
}

/// Moving averages of the KL coefficients driven by batch TD errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaTracker {
    /// Previous (slow) coefficient λ.
    pub lambda: f64,
    /// Current (fast) coefficient λ′.
    pub lambda_prime: f64,
    pub nu: f64,
    pub nu_slow: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl LambdaTracker {
    /// `λ′ ← (1−ν)λ′ + ν max(α₁ td_max, α₂ λ)`, then `λ ← (1−ν_slow)λ + ν_slow λ′`.
    pub fn update(&mut self, td_max: f64) {
        let goal = (self.alpha1 * td_max).max(self.alpha2 * self.lambda);
        self.lambda_prime = lerp(self.lambda_prime, goal, self.nu);
        self.lambda = lerp(self.lambda, self.lambda_prime, self.nu_slow);
    }
}

pub fn update_lambdas(tracker: &LambdaTracker, td_max: f64) -> LambdaTracker {
    let mut next = tracker.clone();
    next.update(td_max);
    next
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tracker(nu: f64, nu_slow: f64) -> LambdaTracker {
        LambdaTracker {
            lambda: 10.0,
            lambda_prime: 10.0,
            nu,
            nu_slow,
            alpha1: 2.0,
            alpha2: 0.9,
        }
    }

    #[test]
    fn unit_rates() {
        let t = update_lambdas(&tracker(1.0, 1.0), 0.0);
        assert_eq!(t.lambda_prime, 9.0);
        assert_eq!(t.lambda, 9.0);
        let t = update_lambdas(&tracker(1.0, 1.0), 7.0);
        assert_eq!((t.lambda_prime, t.lambda), (14.0, 14.0));
    }

    #[test]
    fn converges_to_fixed_point() {
        // With constant td_max, λ′ and λ settle where λ = max(α₁ td, α₂ λ) = α₁ td.
        let mut t = tracker(0.1, 0.1);
        for _ in 0..1000 {
            t.update(3.0);
        }
        assert!((t.lambda_prime - 6.0).abs() < 1e-9);
        assert!((t.lambda - 6.0).abs() < 1e-9);
    }

    #[test]
    fn frozen_rule_keeps_values() {
        let mut t = LambdaTracker {
            alpha1: 0.0,
            alpha2: 1.0,
            ..tracker(0.05, 0.005)
        };
        for td in [0.0, 5.0, 1e6] {
            t.update(td);
            assert_eq!((t.lambda, t.lambda_prime), (10.0, 10.0));
        }
    }
}
