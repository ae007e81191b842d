use serde::{Deserialize, Serialize};

use super::mlp::ModelParams;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Apply weight decay directly to the parameters instead of folding it
    /// into the gradient.
    pub decoupled_weight_decay: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            decoupled_weight_decay: false,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidParameter("betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::InvalidParameter(
                "eps must be positive and weight decay nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// One Adam update over every tensor in `params`, using the accumulated
/// gradients. Biases are not decayed. Gradients are zeroed afterwards and the
/// step counter advances.
pub fn adam_step(params: &mut ModelParams, cfg: &AdamConfig) -> Result<()> {
    cfg.validate()?;
    let t = (params.step + 1) as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (_, net) in params.iter_mut() {
        for layer in net.layers.iter_mut() {
            for (tensor, decay) in [(&mut layer.weight, cfg.weight_decay), (&mut layer.bias, 0.0)] {
                for i in 0..tensor.value.len() {
                    let mut g = tensor.grad[i];
                    if !cfg.decoupled_weight_decay {
                        g += decay * tensor.value[i];
                    }
                    tensor.m[i] = cfg.beta1 * tensor.m[i] + (1.0 - cfg.beta1) * g;
                    tensor.v[i] = cfg.beta2 * tensor.v[i] + (1.0 - cfg.beta2) * g * g;
                    let m_hat = tensor.m[i] / bc1;
                    let v_hat = tensor.v[i] / bc2;
                    let mut update = m_hat / (v_hat.sqrt() + cfg.eps);
                    if cfg.decoupled_weight_decay {
                        update += decay * tensor.value[i];
                    }
                    tensor.value[i] -= cfg.learning_rate * update;
                    tensor.grad[i] = 0.0;
                }
            }
        }
    }
    params.step += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::{Activation, Mlp, MlpSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_params(theta: f64) -> ModelParams {
        let mut p = ModelParams::new();
        let mut mlp = Mlp::zeros(MlpSpec::new(&[1, 1], Activation::None).unwrap());
        mlp.layers[0].weight.value[0] = theta;
        p.insert("scalar", mlp);
        p
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = ModelParams::new();
        p.insert(
            "a",
            Mlp::init(MlpSpec::new(&[5, 7, 2], Activation::Sigmoid).unwrap(), &mut rng),
        );
        let before = p.clone();
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        adam_step(&mut p, &cfg).unwrap();
        for c in p.coordinates() {
            assert_eq!(p.value(c), before.value(c));
        }
        assert_eq!(p.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient() {
        let mut p = scalar_params(1.0);
        p.net_mut(crate::nn::NetId(0)).layers[0].weight.grad[0] = 1.0;
        let cfg = AdamConfig::default();
        adam_step(&mut p, &cfg).unwrap();

        // Hand-evaluated step 1: g = 1 + wd·θ, m̂ = g, v̂ = g², Δ = lr·g/(|g| + eps)
        let g = 1.0 + cfg.weight_decay * 1.0;
        let expected = 1.0 - cfg.learning_rate * g / (g.abs() + cfg.eps);
        let theta = p.net(crate::nn::NetId(0)).layers[0].weight.value[0];
        assert!((theta - expected).abs() < 1e-15);
        assert!(theta < 1.0);
        assert!(((1.0 - theta) - cfg.learning_rate).abs() < 1e-9);
        assert_eq!(p.net(crate::nn::NetId(0)).layers[0].weight.grad[0], 0.0);
    }

    #[test]
    fn identical_inputs_give_identical_updates() {
        let mut a = scalar_params(0.3);
        let mut b = scalar_params(0.3);
        for p in [&mut a, &mut b] {
            p.net_mut(crate::nn::NetId(0)).layers[0].weight.grad[0] = -0.7;
            p.net_mut(crate::nn::NetId(0)).layers[0].bias.grad[0] = 0.2;
            adam_step(p, &AdamConfig::default()).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn bias_is_not_decayed() {
        let mut p = scalar_params(0.0);
        p.net_mut(crate::nn::NetId(0)).layers[0].bias.value[0] = 5.0;
        adam_step(&mut p, &AdamConfig::default()).unwrap();
        assert_eq!(p.net(crate::nn::NetId(0)).layers[0].bias.value[0], 5.0);
    }

    #[test]
    fn rejects_nonpositive_learning_rate() {
        let mut p = scalar_params(1.0);
        let cfg = AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        };
        assert!(adam_step(&mut p, &cfg).is_err());
    }
}
