#![allow(dead_code)]

use conceptcause::autoencoder::ConceptAutoencoder;
use conceptcause::nn::{Layer, LayerSpec, LayeredClassifier};
use conceptcause::rng::SeedStream;
use conceptcause::Tensor;
use rand::Rng;

/// Values bounded away from zero, so ReLU and |·| kinks sit far outside ±ε.
pub fn off_zero(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = SeedStream::new(seed).rng("off-zero");
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = 0.1 + rng.random::<f64>();
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn output_weights(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = SeedStream::new(seed).rng("output-weights");
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn init_layer(spec: LayerSpec, seed: u64) -> Layer {
    let mut layer = Layer::init(&spec, &mut SeedStream::new(seed).rng("layer"));
    // nonzero biases so their gradients are exercised
    let mut rng = SeedStream::new(seed).rng("bias");
    if let Some(bias) = layer.params_mut().into_iter().nth(1) {
        bias.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    }
    layer
}

/// One instance of every layer type, with an input for it.
pub fn layer_cases() -> Vec<(&'static str, Layer, Tensor)> {
    let conv = |stride, padding| LayerSpec::Conv2d {
        in_channels: 2,
        out_channels: 3,
        kernel: 3,
        stride,
        padding,
    };
    vec![
        ("conv2d same", init_layer(conv(1, 1), 1), off_zero(&[2, 6, 6], 1)),
        ("conv2d valid", init_layer(conv(1, 0), 2), off_zero(&[2, 6, 6], 2)),
        ("conv2d stride 2", init_layer(conv(2, 1), 3), off_zero(&[2, 7, 7], 3)),
        ("relu", Layer::Relu, off_zero(&[2, 4, 4], 4)),
        ("maxpool", Layer::MaxPool2, off_zero(&[2, 6, 6], 5)),
        ("maxpool odd", Layer::MaxPool2, off_zero(&[1, 5, 7], 6)),
        ("global average pool", Layer::GlobalAvgPool, off_zero(&[3, 4, 5], 7)),
        (
            "dense",
            init_layer(LayerSpec::Dense { inputs: 5, outputs: 3 }, 8),
            off_zero(&[5], 8),
        ),
        ("softmax", Layer::Softmax, off_zero(&[4], 9)),
    ]
}

/// Small classifier covering every layer type on a 1×8×8 input.
pub fn tiny_specs() -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv_same(1, 3, 3),
        LayerSpec::Relu,
        LayerSpec::MaxPool2,
        LayerSpec::Conv2d {
            in_channels: 3,
            out_channels: 4,
            kernel: 3,
            stride: 2,
            padding: 1,
        },
        LayerSpec::Relu,
        LayerSpec::GlobalAvgPool,
        LayerSpec::Dense { inputs: 4, outputs: 2 },
        LayerSpec::Softmax,
    ]
}

pub fn tiny_classifier(seed: u64) -> LayeredClassifier {
    LayeredClassifier::from_specs(vec![1, 8, 8], &tiny_specs(), &mut SeedStream::new(seed).rng("tiny")).unwrap()
}

/// A tiny classifier with an autoencoder after its first ReLU, plus a host
/// activation and the network's output for it.
pub fn ae_case(seed: u64) -> (LayeredClassifier, ConceptAutoencoder, Tensor, Vec<f64>) {
    let net = tiny_classifier(seed);
    let host_layer = 1;
    let host_shape = net.body().shapes()[host_layer].clone();
    let ae = ConceptAutoencoder::init(host_layer, &host_shape, 4, 3, &mut SeedStream::new(seed).rng("ae")).unwrap();
    let x = off_zero(&[1, 8, 8], seed);
    let a = net.body().forward(&x).unwrap()[host_layer].clone();
    let target = net.body().output_from(host_layer + 1, &a).unwrap().into_data();
    (net, ae, a, target)
}
