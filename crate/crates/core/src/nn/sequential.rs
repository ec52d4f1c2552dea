use rand::Rng;

use super::layers::{Layer, LayerSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameter gradients aligned with [`Sequential::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }
}

/// A chain of layers with statically checked shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    shapes: Vec<Vec<usize>>,
    offsets: Vec<usize>,
}

impl Sequential {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let mut shapes = Vec::with_capacity(layers.len());
        let mut offsets = Vec::with_capacity(layers.len());
        let mut current = input_shape.clone();
        let mut offset = 0;
        for (i, layer) in layers.iter().enumerate() {
            current = layer
                .spec()
                .output_shape(&current)
                .map_err(|e| Error::Shape(format!("layer {i}: {e}")))?;
            for (p, expected) in layer.params().iter().zip(param_shapes(&layer.spec())) {
                p.check_shape(&expected, &format!("layer {i} parameter"))?;
            }
            shapes.push(current.clone());
            offsets.push(offset);
            offset += layer.param_tensor_count();
        }
        Ok(Self {
            input_shape,
            layers,
            shapes,
            offsets,
        })
    }

    pub fn from_specs<R: Rng + ?Sized>(input_shape: Vec<usize>, specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        let layers = specs.iter().map(|s| Layer::init(s, rng)).collect();
        Self::new(input_shape, layers)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().map(Vec::as_slice).unwrap_or(&self.input_shape)
    }

    /// Output shape of each layer.
    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Shape accepted by layer `index` (the input shape for index 0).
    pub fn input_shape_of(&self, index: usize) -> &[usize] {
        if index == 0 {
            &self.input_shape
        } else {
            &self.shapes[index - 1]
        }
    }

    /// Outputs of every layer for a single instance.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.forward_from(0, x)
    }

    /// Outputs of layers `start..` given the input to layer `start`.
    pub fn forward_from(&self, start: usize, x: &Tensor) -> Result<Vec<Tensor>> {
        x.check_shape(self.input_shape_of(start), &format!("input to layer {start}"))?;
        let mut outs: Vec<Tensor> = Vec::with_capacity(self.layers.len() - start);
        for layer in &self.layers[start..] {
            let y = layer.forward(outs.last().unwrap_or(x));
            outs.push(y);
        }
        Ok(outs)
    }

    /// Final output only, dropping intermediates as it goes.
    pub fn output_from(&self, start: usize, x: &Tensor) -> Result<Tensor> {
        x.check_shape(self.input_shape_of(start), &format!("input to layer {start}"))?;
        let mut cur = x.clone();
        for layer in &self.layers[start..] {
            cur = layer.forward(&cur);
        }
        Ok(cur)
    }

    /// Backpropagates through layers `start..`. `outputs` are the retained
    /// outputs of those layers (as returned by [`Sequential::forward_from`]).
    pub fn backward_from(
        &self,
        start: usize,
        input: &Tensor,
        outputs: &[Tensor],
        grad_out: Tensor,
        mut grads: Option<&mut Gradients>,
    ) -> Tensor {
        assert_eq!(outputs.len(), self.layers.len() - start, "retained outputs");
        let mut g = grad_out;
        for i in (start..self.layers.len()).rev() {
            let local = i - start;
            let x = if local == 0 { input } else { &outputs[local - 1] };
            let layer = &self.layers[i];
            let slot = grads.as_deref_mut().map(|gr| {
                let o = self.offsets[i];
                &mut gr.tensors[o..o + layer.param_tensor_count()]
            });
            g = layer.backward(x, &outputs[local], &g, slot);
        }
        g
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            tensors: self.params().iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                values.len()
            )));
        }
        let mut at = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.data_mut().copy_from_slice(&values[at..at + n]);
            at += n;
        }
        Ok(())
    }

    pub fn quantize_f32(&mut self) {
        for p in self.params_mut() {
            p.quantize_f32();
        }
    }
}

pub(crate) fn param_shapes(spec: &LayerSpec) -> Vec<Vec<usize>> {
    match *spec {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            ..
        } => vec![vec![out_channels, in_channels, kernel, kernel], vec![out_channels]],
        LayerSpec::Dense { inputs, outputs } => vec![vec![outputs, inputs], vec![outputs]],
        _ => Vec::new(),
    }
}
