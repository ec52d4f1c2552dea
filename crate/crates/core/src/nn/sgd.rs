use serde::{Deserialize, Serialize};

use super::sequential::{Gradients, Sequential};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Rescale the gradient when its global norm exceeds this value.
    pub clip_norm: Option<f64>,
}

/// Plain SGD with optional heavy-ball momentum.
#[derive(Debug, Clone)]
pub struct Sgd {
    config: SgdConfig,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(config: SgdConfig, model: &Sequential) -> Self {
        let velocity = model.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { config, velocity }
    }

    pub fn step(&mut self, model: &mut Sequential, grads: &Gradients) {
        let mut scale = 1.0;
        if let Some(limit) = self.config.clip_norm {
            let norm = grads.norm();
            if norm > limit {
                scale = limit / norm;
            }
        }
        let SgdConfig {
            learning_rate,
            momentum,
            ..
        } = self.config;
        for ((p, v), g) in model
            .params_mut()
            .into_iter()
            .zip(&mut self.velocity)
            .zip(&grads.tensors)
        {
            for ((w, vel), &gi) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vel = momentum * *vel - learning_rate * scale * gi;
                *w += *vel;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::LayerSpec;
    use crate::rng::SeedStream;

    #[test]
    fn plain_step_moves_against_gradient() {
        let mut model =
            Sequential::from_specs(vec![2], &[LayerSpec::Dense { inputs: 2, outputs: 1 }], &mut SeedStream::new(0).rng("x"))
                .unwrap();
        let before = model.flat_params();
        let mut grads = model.zero_gradients();
        grads.tensors[1].data_mut()[0] = 2.0;
        let mut sgd = Sgd::new(
            SgdConfig {
                learning_rate: 0.5,
                momentum: 0.0,
                clip_norm: None,
            },
            &model,
        );
        sgd.step(&mut model, &grads);
        let after = model.flat_params();
        assert_eq!(after[2], before[2] - 1.0);
        assert_eq!(after[0], before[0]);
    }
}
