use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, LayeredClassifier, Sequential};
use crate::tensor::Tensor;

/// Encoder/decoder pair attached after one layer of the host network.
///
/// Both halves are three stride-1 "same" convolutions, so the code keeps the
/// spatial extent of the host activation. The encoder ends in a ReLU, giving
/// nonnegative codes where zero means "concept absent".
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptAutoencoder {
    /// Index of the host layer whose output is encoded.
    pub host_layer: usize,
    pub encoder: Sequential,
    pub decoder: Sequential,
}

impl ConceptAutoencoder {
    pub fn encoder_specs(host_channels: usize, hidden: usize, code: usize) -> Vec<LayerSpec> {
        vec![
            LayerSpec::conv_same(host_channels, hidden, 3),
            LayerSpec::Relu,
            LayerSpec::conv_same(hidden, hidden, 3),
            LayerSpec::Relu,
            LayerSpec::conv_same(hidden, code, 3),
            LayerSpec::Relu,
        ]
    }

    pub fn decoder_specs(host_channels: usize, hidden: usize, code: usize) -> Vec<LayerSpec> {
        vec![
            LayerSpec::conv_same(code, hidden, 3),
            LayerSpec::Relu,
            LayerSpec::conv_same(hidden, hidden, 3),
            LayerSpec::Relu,
            LayerSpec::conv_same(hidden, host_channels, 3),
        ]
    }

    pub fn init<R: Rng + ?Sized>(
        host_layer: usize,
        host_shape: &[usize],
        hidden: usize,
        code_channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let &[c, h, w] = host_shape else {
            return Err(Error::Shape(format!(
                "autoencoders attach to C×H×W activations, got {host_shape:?}"
            )));
        };
        let encoder = Sequential::from_specs(host_shape.to_vec(), &Self::encoder_specs(c, hidden, code_channels), rng)?;
        let decoder = Sequential::from_specs(vec![code_channels, h, w], &Self::decoder_specs(c, hidden, code_channels), rng)?;
        Self::new(host_layer, encoder, decoder)
    }

    pub fn new(host_layer: usize, encoder: Sequential, decoder: Sequential) -> Result<Self> {
        if encoder.output_shape() != decoder.input_shape() {
            return Err(Error::Shape(format!(
                "encoder output {:?} does not feed decoder input {:?}",
                encoder.output_shape(),
                decoder.input_shape()
            )));
        }
        if decoder.output_shape() != encoder.input_shape() {
            return Err(Error::Shape(format!(
                "decoder output {:?} differs from host activation {:?}",
                decoder.output_shape(),
                encoder.input_shape()
            )));
        }
        let code = encoder.output_shape();
        if code.len() != 3 || code[1..] != encoder.input_shape()[1..] {
            return Err(Error::Shape(format!(
                "code {code:?} must keep the host spatial extent {:?}",
                encoder.input_shape()
            )));
        }
        Ok(Self {
            host_layer,
            encoder,
            decoder,
        })
    }

    pub fn host_shape(&self) -> &[usize] {
        self.encoder.input_shape()
    }

    pub fn code_shape(&self) -> &[usize] {
        self.encoder.output_shape()
    }

    pub fn code_channels(&self) -> usize {
        self.code_shape()[0]
    }

    pub fn encode(&self, a: &Tensor) -> Result<Tensor> {
        self.encoder.output_from(0, a)
    }

    pub fn decode(&self, code: &Tensor) -> Result<Tensor> {
        self.decoder.output_from(0, code)
    }
}

/// One code channel of one autoencoder, the unit of intervention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptFeatureImage {
    /// Position of the autoencoder in the stack, shallowest first.
    pub level: usize,
    pub channel: usize,
    /// `H×W` code values.
    pub map: Tensor,
}

impl ConceptFeatureImage {
    pub fn name(&self) -> String {
        concept_name(self.level, self.channel)
    }
}

pub fn concept_name(level: usize, channel: usize) -> String {
    format!("level{level}_feat{channel}")
}

/// Sets every entry of channel `channel` of a `C×H×W` code to zero.
pub fn intervene_zero_channel(code: &Tensor, channel: usize) -> Result<Tensor> {
    let channels = *code
        .shape()
        .first()
        .ok_or_else(|| Error::Shape("empty code shape".into()))?;
    if channel >= channels {
        return Err(Error::InvalidArgument(format!(
            "channel {channel} out of range for {channels} code channels"
        )));
    }
    let mut out = code.clone();
    out.channel_mut(channel).fill(0.0);
    Ok(out)
}

/// Channels to zero, per stack level.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InterventionMask {
    pub zeroed: Vec<Vec<bool>>,
}

impl InterventionMask {
    pub fn none(model: &AutoencodedModel) -> Self {
        Self {
            zeroed: model.stack.iter().map(|ae| vec![false; ae.code_channels()]).collect(),
        }
    }

    pub fn from_pairs(model: &AutoencodedModel, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut mask = Self::none(model);
        for &(level, channel) in pairs {
            let row = mask
                .zeroed
                .get_mut(level)
                .ok_or_else(|| Error::InvalidArgument(format!("level {level} out of range")))?;
            let slot = row
                .get_mut(channel)
                .ok_or_else(|| Error::InvalidArgument(format!("channel {channel} out of range at level {level}")))?;
            *slot = true;
        }
        Ok(mask)
    }

    pub fn is_empty(&self) -> bool {
        self.zeroed.iter().flatten().all(|z| !z)
    }

    /// Shallowest level with any zeroed channel.
    pub fn first_level(&self) -> Option<usize> {
        self.zeroed.iter().position(|row| row.iter().any(|&z| z))
    }
}

/// Result of one pass through the autoencoded network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelTrace {
    /// Codes per stack level, after interventions.
    pub codes: Vec<Tensor>,
    pub output: Vec<f64>,
}

/// A frozen classifier with trained autoencoders spliced into its forward
/// path. The stack is ordered by host layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencodedModel {
    pub net: LayeredClassifier,
    pub stack: Vec<ConceptAutoencoder>,
}

impl AutoencodedModel {
    pub fn new(net: LayeredClassifier, stack: Vec<ConceptAutoencoder>) -> Result<Self> {
        for (i, ae) in stack.iter().enumerate() {
            if i > 0 && stack[i - 1].host_layer >= ae.host_layer {
                return Err(Error::InvalidArgument("autoencoder host layers must be strictly increasing".into()));
            }
            let host = net
                .body()
                .shapes()
                .get(ae.host_layer)
                .ok_or_else(|| Error::InvalidArgument(format!("host layer {} out of range", ae.host_layer)))?;
            if host.as_slice() != ae.host_shape() {
                return Err(Error::Shape(format!(
                    "autoencoder {i} expects {:?} but layer {} outputs {host:?}",
                    ae.host_shape(),
                    ae.host_layer
                )));
            }
        }
        Ok(Self { net, stack })
    }

    pub fn levels(&self) -> usize {
        self.stack.len()
    }

    /// Forward pass with every autoencoder inserted and `mask` channels zeroed.
    pub fn forward(&self, x: &Tensor, mask: Option<&InterventionMask>) -> Result<ModelTrace> {
        self.forward_upto(x, mask, self.stack.len())
    }

    /// Like [`AutoencodedModel::forward`] but only the first `inserted`
    /// autoencoders are spliced in.
    pub fn forward_upto(&self, x: &Tensor, mask: Option<&InterventionMask>, inserted: usize) -> Result<ModelTrace> {
        let body = self.net.body();
        x.check_shape(body.input_shape(), "model input")?;
        let mut cur = x.clone();
        let mut next_layer = 0;
        let mut codes = Vec::with_capacity(inserted);
        for (level, ae) in self.stack.iter().take(inserted).enumerate() {
            for layer in &body.layers()[next_layer..=ae.host_layer] {
                cur = layer.forward(&cur);
            }
            next_layer = ae.host_layer + 1;
            let mut code = ae.encode(&cur)?;
            if let Some(row) = mask.and_then(|m| m.zeroed.get(level)) {
                for (ch, &z) in row.iter().enumerate() {
                    if z {
                        code.channel_mut(ch).fill(0.0);
                    }
                }
            }
            cur = ae.decode(&code)?;
            codes.push(code);
        }
        for layer in &body.layers()[next_layer..] {
            cur = layer.forward(&cur);
        }
        Ok(ModelTrace {
            codes,
            output: cur.into_data(),
        })
    }

    /// Host activation for stack level `level`, with shallower autoencoders
    /// inserted.
    pub fn host_activation(&self, x: &Tensor, level: usize) -> Result<Tensor> {
        let ae = self
            .stack
            .get(level)
            .ok_or_else(|| Error::InvalidArgument(format!("level {level} is not trained")))?;
        self.layer_output(x, ae.host_layer)
    }

    /// Output of host layer `layer` with every autoencoder attached strictly
    /// before it inserted.
    pub fn layer_output(&self, x: &Tensor, layer: usize) -> Result<Tensor> {
        let body = self.net.body();
        if layer >= body.len() {
            return Err(Error::InvalidArgument(format!("layer {layer} out of range")));
        }
        x.check_shape(body.input_shape(), "model input")?;
        let mut cur = x.clone();
        let mut next_layer = 0;
        for prev in self.stack.iter().take_while(|ae| ae.host_layer < layer) {
            for l in &body.layers()[next_layer..=prev.host_layer] {
                cur = l.forward(&cur);
            }
            next_layer = prev.host_layer + 1;
            cur = prev.decode(&prev.encode(&cur)?)?;
        }
        for l in &body.layers()[next_layer..=layer] {
            cur = l.forward(&cur);
        }
        Ok(cur)
    }

    /// Concept feature images of `x` at stack level `level`, in channel order.
    pub fn encode(&self, x: &Tensor, level: usize) -> Result<Vec<ConceptFeatureImage>> {
        let a = self.host_activation(x, level)?;
        let code = self.stack[level].encode(&a)?;
        let (h, w) = (code.shape()[1], code.shape()[2]);
        (0..code.shape()[0])
            .map(|channel| {
                Ok(ConceptFeatureImage {
                    level,
                    channel,
                    map: Tensor::new(vec![h, w], code.channel(channel).to_vec())?,
                })
            })
            .collect()
    }
}
