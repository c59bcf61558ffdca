use serde::{Deserialize, Serialize};

use super::mlp::MlpParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first: MlpParams,
    pub second: MlpParams,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &MlpParams, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
            learning_rate,
            beta1,
            beta2,
            epsilon,
        }
    }

    /// One bias-corrected Adam update of `params` along `grads`.
    pub fn apply(&mut self, params: &mut MlpParams, grads: &MlpParams) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let (lr, eps) = (self.learning_rate, self.epsilon);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        };
        for (((p, g), m), v) in params
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.first.layers.iter_mut())
            .zip(self.second.layers.iter_mut())
        {
            update(
                p.weight.as_mut_slice(),
                g.weight.as_slice(),
                m.weight.as_mut_slice(),
                v.weight.as_mut_slice(),
            );
            update(
                p.bias.as_mut_slice(),
                g.bias.as_slice(),
                m.bias.as_mut_slice(),
                v.bias.as_mut_slice(),
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = MlpParams::zeros(&[2, 1]);
        let mut g = p.zeros_like();
        g.layers[0].weight[0] = 3.0;
        g.layers[0].bias[0] = -0.5;
        let mut adam = AdamState::new(&p, 1e-3, 0.9, 0.999, 1e-8);
        adam.apply(&mut p, &g);
        assert!((p.layers[0].weight[0] + 1e-3).abs() < 1e-9);
        assert!((p.layers[0].bias[0] - 1e-3).abs() < 1e-9);
        assert_eq!(p.layers[0].weight[1], 0.0);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = MlpParams::zeros(&[1, 1]);
        let mut adam = AdamState::new(&p, 0.05, 0.9, 0.999, 1e-8);
        for _ in 0..2000 {
            let mut g = p.zeros_like();
            g.layers[0].weight[0] = 2.0 * (p.layers[0].weight[0] - 3.0);
            adam.apply(&mut p, &g);
        }
        assert!((p.layers[0].weight[0] - 3.0).abs() < 1e-3);
    }
}
