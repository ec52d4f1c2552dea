mod common;

use common::{off_zero, tiny_classifier};
use conceptcause::autoencoder::{deep_loss, train_autoencoder_stack, AeTrainConfig, LossWeights};
use conceptcause::nn::{Layer, LayerSpec, LayeredClassifier, Sequential};
use conceptcause::Tensor;

fn logits_then_softmax() -> LayeredClassifier {
    let dense = Layer::zeroed(&LayerSpec::Dense { inputs: 2, outputs: 2 });
    LayeredClassifier::new(Sequential::new(vec![2], vec![dense, Layer::Softmax]).unwrap()).unwrap()
}

#[test]
fn deep_loss_examples() {
    let net = logits_then_softmax();
    let a = Tensor::from_vec(vec![0.0, 0.0]);
    assert_eq!(deep_loss(&net, 0, &[(&a, &a)]).unwrap(), 0.0);

    // softmax([0, ln 3]) = [0.25, 0.75]
    let shifted = Tensor::from_vec(vec![0.0, 3f64.ln()]);
    let kl = deep_loss(&net, 0, &[(&a, &shifted)]).unwrap();
    let oracle = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
    assert!((kl - oracle).abs() < 1e-12);
    assert!((kl - 0.143841).abs() < 5e-7);

    let batch = deep_loss(&net, 0, &[(&a, &shifted), (&a, &a)]).unwrap();
    assert!((batch - oracle / 2.0).abs() < 1e-12);
}

#[test]
fn deep_loss_level_out_of_range() {
    let net = logits_then_softmax();
    let a = Tensor::from_vec(vec![0.0, 0.0]);
    assert!(deep_loss(&net, 1, &[(&a, &a)]).is_err());
    assert!(deep_loss(&net, 0, &[]).is_err());
}

fn inputs(n: usize, seed: u64) -> Vec<Tensor> {
    (0..n).map(|i| off_zero(&[1, 8, 8], seed + i as u64)).collect()
}

#[test]
fn empty_levels_rejected() {
    let net = tiny_classifier(1);
    let xs = inputs(4, 0);
    let refs: Vec<&Tensor> = xs.iter().collect();
    let err = train_autoencoder_stack(&net, &refs, &refs, &[], &LossWeights::default(), &AeTrainConfig::default(), 1);
    assert!(err.is_err());
    let err = train_autoencoder_stack(&net, &refs, &refs, &[3, 1], &LossWeights::default(), &AeTrainConfig::default(), 1);
    assert!(err.is_err());
}

#[test]
fn shallow_only_training_beats_untrained_baseline() {
    let net = tiny_classifier(2);
    let train = inputs(64, 1000);
    let heldout = inputs(16, 5000);
    let train: Vec<&Tensor> = train.iter().collect();
    let heldout: Vec<&Tensor> = heldout.iter().collect();
    let weights = LossWeights {
        lambda_shallow: 1.0,
        lambda_deep: 0.0,
        lambda_sparsity: 0.0,
        lambda_tv: 0.0,
        lambda_entropy: 0.0,
    };
    let config = AeTrainConfig {
        epochs: 8,
        batch_size: 8,
        hidden_channels: 4,
        code_channels: 4,
        ..AeTrainConfig::default()
    };
    let untrained = AeTrainConfig { epochs: 0, ..config.clone() };
    let (_, base) = train_autoencoder_stack(&net, &train, &heldout, &[1], &weights, &untrained, 9).unwrap();
    let (_, fit) = train_autoencoder_stack(&net, &train, &heldout, &[1], &weights, &config, 9).unwrap();
    let before = base.levels[0].heldout_terms.shallow;
    let after = fit.levels[0].heldout_terms.shallow;
    assert!(after < before, "trained {after} vs untrained {before}");
}

#[test]
fn stack_training_is_deterministic() {
    let net = tiny_classifier(3);
    let xs = inputs(16, 200);
    let refs: Vec<&Tensor> = xs.iter().collect();
    let config = AeTrainConfig {
        epochs: 1,
        batch_size: 4,
        hidden_channels: 3,
        code_channels: 3,
        ..AeTrainConfig::default()
    };
    let run = || train_autoencoder_stack(&net, &refs, &refs, &[1, 4], &LossWeights::default(), &config, 5).unwrap();
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    assert_eq!(ra.levels.len(), 2);
    assert!(ra.levels.iter().all(|l| (0.0..=1.0).contains(&l.agreement)));
}
