//! The classifier under explanation: architecture, training and evaluation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, LayeredClassifier, OutputLoss, Sgd, SgdConfig};
use crate::rng::SeedStream;
use crate::synth::Dataset;
use crate::tensor::Tensor;

/// Six 3×3 convolutions (8, 8, 16, 16, 32, 32 channels) with ReLU, 2× max
/// pooling after the second and fourth, then global average pooling, a dense
/// layer and softmax.
pub fn jn6_mini(input_channels: usize, class_count: usize) -> Vec<LayerSpec> {
    let widths = [8, 8, 16, 16, 32, 32];
    let mut specs = Vec::new();
    let mut prev = input_channels;
    for (i, &w) in widths.iter().enumerate() {
        specs.push(LayerSpec::conv_same(prev, w, 3));
        specs.push(LayerSpec::Relu);
        if i == 1 || i == 3 {
            specs.push(LayerSpec::MaxPool2);
        }
        prev = w;
    }
    specs.push(LayerSpec::GlobalAvgPool);
    specs.push(LayerSpec::Dense {
        inputs: prev,
        outputs: class_count,
    });
    specs.push(LayerSpec::Softmax);
    specs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            batch_size: 16,
            sgd: SgdConfig {
                learning_rate: 0.02,
                momentum: 0.9,
                clip_norm: Some(5.0),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    /// Mean training cross-entropy per epoch.
    pub epoch_losses: Vec<f64>,
    /// Epochs whose loss rose more than 5% above the previous epoch.
    pub loss_increase_flags: Vec<usize>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// `confusion[true][predicted]` on the held-out split.
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    pub distributions: Vec<Vec<f64>>,
}

impl Evaluation {
    pub fn confusion(&self, labels: &[usize], classes: usize) -> Vec<Vec<usize>> {
        let mut m = vec![vec![0; classes]; classes];
        for (&t, &p) in labels.iter().zip(&self.predictions) {
            m[t][p] += 1;
        }
        m
    }
}

/// Runs `net` over labeled samples.
pub fn evaluate(net: &LayeredClassifier, samples: &[(&Tensor, usize)]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::NoInstances);
    }
    let mut predictions = Vec::with_capacity(samples.len());
    let mut distributions = Vec::with_capacity(samples.len());
    let mut correct = 0;
    for &(x, label) in samples {
        let p = net.predict(x)?;
        let pred = argmax(&p);
        correct += usize::from(pred == label);
        predictions.push(pred);
        distributions.push(p);
    }
    Ok(Evaluation {
        accuracy: correct as f64 / samples.len() as f64,
        predictions,
        distributions,
    })
}

pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Trains a fresh classifier with architecture `arch` by minibatch SGD on
/// cross-entropy. Weights are rounded to `f32` at the end so the returned net
/// equals what a checkpoint round trip yields.
pub fn train_classifier(
    train: &[(&Tensor, usize)],
    test: &[(&Tensor, usize)],
    input_shape: &[usize],
    arch: &[LayerSpec],
    config: &TrainConfig,
    seed: u64,
) -> Result<(LayeredClassifier, TrainReport)> {
    if train.is_empty() {
        return Err(Error::NoInstances);
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let streams = SeedStream::new(seed).child("target");
    let mut net = LayeredClassifier::from_specs(input_shape.to_vec(), arch, &mut streams.rng("init"))?;
    let mut sgd = Sgd::new(config.sgd, net.body());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut loss_increase_flags = Vec::new();

    for epoch in 0..config.epochs {
        order.shuffle(&mut streams.rng_at("shuffle", &[epoch as u64]));
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let body = net.body();
            let mut grads = body.zero_gradients();
            for &i in batch {
                let (x, label) = train[i];
                let outs = body.forward(x)?;
                let p = outs.last().expect("non-empty network");
                let loss = OutputLoss::CrossEntropy { label };
                let value = loss.value(p.data())?;
                if !value.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        detail: format!("non-finite loss on training sample {i}"),
                    });
                }
                total += value;
                let gy = Tensor::new(p.shape().to_vec(), loss.grad(p.data()))?;
                body.backward_from(0, x, &outs, gy, Some(&mut grads));
            }
            if !grads.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: "non-finite gradient".into(),
                });
            }
            grads.scale(1.0 / batch.len() as f64);
            sgd.step(net.body_mut(), &grads);
        }
        let mean = total / train.len() as f64;
        if let Some(&prev) = epoch_losses.last() {
            if mean > prev * 1.05 {
                loss_increase_flags.push(epoch);
            }
        }
        log::info!("target epoch {epoch}: loss {mean:.5}");
        epoch_losses.push(mean);
    }

    net.body_mut().quantize_f32();
    let train_eval = evaluate(&net, train)?;
    let (test_accuracy, confusion) = if test.is_empty() {
        (f64::NAN, Vec::new())
    } else {
        let eval = evaluate(&net, test)?;
        let labels: Vec<usize> = test.iter().map(|s| s.1).collect();
        (eval.accuracy, eval.confusion(&labels, net.class_count()))
    };
    Ok((
        net,
        TrainReport {
            seed,
            epoch_losses,
            loss_increase_flags,
            train_accuracy: train_eval.accuracy,
            test_accuracy,
            confusion,
        },
    ))
}

/// Trains the target classifier on a synthetic dataset's splits.
pub fn train_target(
    dataset: &Dataset,
    arch: &[LayerSpec],
    config: &TrainConfig,
    seed: u64,
) -> Result<(LayeredClassifier, TrainReport)> {
    let train: Vec<(&Tensor, usize)> = dataset.train_instances().map(|i| (&i.image, i.label)).collect();
    let test: Vec<(&Tensor, usize)> = dataset.test_instances().map(|i| (&i.image, i.label)).collect();
    let shape = vec![1, dataset.config.height, dataset.config.width];
    train_classifier(&train, &test, &shape, arch, config, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Bright blob in the left or right half of a noisy 8×8 image.
    fn blobs(n: usize, seed: u64) -> Vec<(Tensor, usize)> {
        let mut rng = SeedStream::new(seed).rng("blobs");
        (0..n)
            .map(|i| {
                let label = i % 2;
                let mut px = vec![0.0; 64];
                for v in px.iter_mut() {
                    *v = rng.random_range(0.0..0.1);
                }
                let x0 = if label == 0 { 1 } else { 5 };
                let y0 = rng.random_range(1..5);
                for y in y0..y0 + 2 {
                    for x in x0..x0 + 2 {
                        px[y * 8 + x] = 1.0;
                    }
                }
                (Tensor::new(vec![1, 8, 8], px).unwrap(), label)
            })
            .collect()
    }

    fn toy_arch() -> Vec<LayerSpec> {
        vec![
            LayerSpec::conv_same(1, 4, 3),
            LayerSpec::Relu,
            LayerSpec::MaxPool2,
            LayerSpec::Dense { inputs: 64, outputs: 2 },
            LayerSpec::Softmax,
        ]
    }

    fn refs(v: &[(Tensor, usize)]) -> Vec<(&Tensor, usize)> {
        v.iter().map(|(t, l)| (t, *l)).collect()
    }

    #[test]
    fn separable_blobs_reach_full_train_accuracy() {
        let data = blobs(40, 1);
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 8,
            sgd: SgdConfig {
                learning_rate: 0.05,
                momentum: 0.9,
                clip_norm: None,
            },
        };
        let (_, report) = train_classifier(&refs(&data), &[], &[1, 8, 8], &toy_arch(), &cfg, 3).unwrap();
        assert_eq!(report.train_accuracy, 1.0, "{report:?}");
    }

    #[test]
    fn zero_epochs_is_near_chance() {
        let data = blobs(200, 2);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (_, report) = train_classifier(&refs(&data[..100]), &refs(&data[100..]), &[1, 8, 8], &toy_arch(), &cfg, 4).unwrap();
        assert!(report.epoch_losses.is_empty());
        // balanced classes: an untrained net sits within 3σ of 0.5 or
        // predicts a single class
        let sigma = (0.25f64 / 100.0).sqrt();
        assert!((report.test_accuracy - 0.5).abs() <= 3.0 * sigma, "{report:?}");
    }

    #[test]
    fn training_is_reproducible() {
        let data = blobs(24, 5);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let a = train_classifier(&refs(&data), &refs(&data), &[1, 8, 8], &toy_arch(), &cfg, 9).unwrap();
        let b = train_classifier(&refs(&data), &refs(&data), &[1, 8, 8], &toy_arch(), &cfg, 9).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn evaluate_contracts() {
        let data = blobs(2, 6);
        let net = LayeredClassifier::from_specs(vec![1, 8, 8], &toy_arch(), &mut SeedStream::new(1).rng("n")).unwrap();
        assert!(matches!(evaluate(&net, &[]), Err(Error::NoInstances)));
        let eval = evaluate(&net, &refs(&data[..1])).unwrap();
        assert_eq!(eval.distributions.len(), 1);
        assert!((eval.distributions[0].iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn jn6_mini_shapes() {
        let net = LayeredClassifier::from_specs(vec![1, 32, 32], &jn6_mini(1, 2), &mut SeedStream::new(1).rng("n")).unwrap();
        let convs = net.body().specs().iter().filter(|s| matches!(s, LayerSpec::Conv2d { .. })).count();
        assert_eq!(convs, 6);
        assert_eq!(net.body().shapes()[4], vec![8, 16, 16]);
        assert_eq!(net.body().shapes()[9], vec![16, 8, 8]);
        assert_eq!(net.body().shapes()[13], vec![32, 8, 8]);
    }
}
