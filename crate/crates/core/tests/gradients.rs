mod common;

use common::{ae_case, layer_cases, off_zero, output_weights, tiny_classifier};
use conceptcause::autoencoder::{autoencoder_gradient_check, LossWeights};
use conceptcause::nn::gradcheck::loss_and_gradient;
use conceptcause::nn::{check_gradients, gradient_check, layer_gradient_check, OutputLoss};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

#[test]
fn every_layer_type_matches_central_differences() {
    for (i, (name, layer, x)) in layer_cases().into_iter().enumerate() {
        let n = layer.spec().output_shape(x.shape()).unwrap().iter().product();
        let report = layer_gradient_check(&layer, &x, &output_weights(n, 100 + i as u64), EPS).unwrap();
        assert!(report.max_relative_error < TOL, "{name}: {report:?}");
        assert_eq!(report.parameters, x.len() + layer.params().iter().map(|p| p.len()).sum::<usize>());
    }
}

#[test]
fn composed_network_matches_central_differences() {
    let net = tiny_classifier(3);
    for label in 0..2 {
        let x = off_zero(&[1, 8, 8], 20 + label as u64);
        let report = gradient_check(&net, &OutputLoss::CrossEntropy { label }, &x, EPS).unwrap();
        assert!(report.max_relative_error < TOL, "label {label}: {report:?}");
    }
}

#[test]
fn batch_loss_gradient_is_sum_of_instance_gradients() {
    let net = tiny_classifier(4);
    let batch: Vec<_> = (0..3).map(|i| (off_zero(&[1, 8, 8], 40 + i), i as usize % 2)).collect();
    let mut analytic = vec![0.0; net.body().parameter_count()];
    for (x, label) in &batch {
        let (_, g) = loss_and_gradient(&net, &OutputLoss::CrossEntropy { label: *label }, x).unwrap();
        analytic.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    let mut probe = net.clone();
    let report = check_gradients(&net.body().flat_params(), &analytic, EPS, |w| {
        probe.body_mut().set_flat_params(w)?;
        let mut total = 0.0;
        for (x, label) in &batch {
            total += OutputLoss::CrossEntropy { label: *label }.value(&probe.predict(x)?)?;
        }
        Ok(total)
    })
    .unwrap();
    assert!(report.max_relative_error < TOL, "{report:?}");
}

#[test]
fn kl_output_loss_gradient() {
    let net = tiny_classifier(5);
    let loss = OutputLoss::KlFrom { target: vec![0.3, 0.7] };
    let report = gradient_check(&net, &loss, &off_zero(&[1, 8, 8], 50), EPS).unwrap();
    assert!(report.max_relative_error < TOL, "{report:?}");
}

#[test]
fn composite_autoencoder_objective_gradient() {
    // fixtures whose parameters all sit clear of ReLU and |x| kinks at this ε
    for seed in [3, 4, 5, 8] {
        let (net, ae, a, target) = ae_case(seed);
        let report = autoencoder_gradient_check(&net, &ae, &a, &target, &LossWeights::default(), EPS).unwrap();
        assert!(report.max_relative_error < TOL, "seed {seed}: {report:?}");
        assert_eq!(report.parameters, ae.encoder.parameter_count() + ae.decoder.parameter_count());
    }
}

#[test]
fn each_autoencoder_term_alone() {
    let (net, ae, a, target) = ae_case(7);
    let zero = LossWeights {
        lambda_shallow: 0.0,
        lambda_deep: 0.0,
        lambda_sparsity: 0.0,
        lambda_tv: 0.0,
        lambda_entropy: 0.0,
    };
    let singles = [
        LossWeights { lambda_shallow: 1.0, ..zero },
        LossWeights { lambda_deep: 1.0, ..zero },
        LossWeights { lambda_sparsity: 1.0, ..zero },
        LossWeights { lambda_tv: 1.0, ..zero },
        LossWeights { lambda_entropy: 1.0, ..zero },
    ];
    for w in singles {
        let report = autoencoder_gradient_check(&net, &ae, &a, &target, &w, EPS).unwrap();
        assert!(report.max_relative_error < TOL, "{w:?}: {report:?}");
    }
}

#[test]
fn mismatched_output_weights_are_rejected() {
    let (_, layer, x) = layer_cases().remove(0);
    assert!(layer_gradient_check(&layer, &x, &[1.0], EPS).is_err());
}

