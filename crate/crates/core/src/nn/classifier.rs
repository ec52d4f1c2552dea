use rand::Rng;

use super::layers::{Layer, LayerSpec};
use super::sequential::Sequential;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Feed-forward classifier whose final layer is a softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredClassifier {
    body: Sequential,
    class_count: usize,
}

impl LayeredClassifier {
    pub fn new(body: Sequential) -> Result<Self> {
        match body.layers().last() {
            Some(Layer::Softmax) => {}
            _ => return Err(Error::Shape("classifier must end in a softmax layer".into())),
        }
        let out = body.output_shape();
        if out.len() != 1 || out[0] < 2 {
            return Err(Error::Shape(format!("classifier output must be a vector of ≥2 classes, got {out:?}")));
        }
        let class_count = out[0];
        Ok(Self { body, class_count })
    }

    pub fn from_specs<R: Rng + ?Sized>(input_shape: Vec<usize>, specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        Self::new(Sequential::from_specs(input_shape, specs, rng)?)
    }

    pub fn body(&self) -> &Sequential {
        &self.body
    }

    pub fn body_mut(&mut self) -> &mut Sequential {
        &mut self.body
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn input_shape(&self) -> &[usize] {
        self.body.input_shape()
    }

    /// Per-layer activations for a batch whose leading axis indexes items.
    /// Each returned tensor carries the same leading batch axis.
    pub fn forward_pass(&self, batch: &Tensor) -> Result<Vec<Tensor>> {
        let input = self.body.input_shape();
        let shape = batch.shape();
        if shape.len() != input.len() + 1 || &shape[1..] != input {
            return Err(Error::Shape(format!(
                "batch shape {shape:?} does not match network input [N, {input:?}]"
            )));
        }
        let n = shape[0];
        let item = batch.len() / n;
        let mut stacked: Vec<Vec<f64>> = self
            .body
            .shapes()
            .iter()
            .map(|s| Vec::with_capacity(n * s.iter().product::<usize>()))
            .collect();
        for b in 0..n {
            let x = Tensor::new(input.to_vec(), batch.data()[b * item..(b + 1) * item].to_vec())?;
            for (acc, a) in stacked.iter_mut().zip(self.body.forward(&x)?) {
                acc.extend_from_slice(a.data());
            }
        }
        stacked
            .into_iter()
            .zip(self.body.shapes())
            .map(|(data, s)| {
                let mut shape = vec![n];
                shape.extend_from_slice(s);
                Tensor::new(shape, data)
            })
            .collect()
    }

    /// Output distribution for one instance.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.body.output_from(0, x)?.into_data())
    }
}
