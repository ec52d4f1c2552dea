//! Staged training of the autoencoder stack, shallowest level first.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{deep_grad, interpretability_grad, interpretability_loss, shallow_grad, shallow_loss, LossWeights};
use super::model::{AutoencodedModel, ConceptAutoencoder};
use crate::error::{Error, Result};
use crate::nn::loss::kl_divergence;
use crate::nn::{check_gradients, GradCheck, Gradients, LayeredClassifier, Sgd, SgdConfig};
use crate::rng::SeedStream;
use crate::target::argmax;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
    pub hidden_channels: usize,
    pub code_channels: usize,
    /// Levels whose held-out agreement falls below this are flagged.
    pub agreement_floor: f64,
}

impl Default for AeTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            batch_size: 16,
            sgd: SgdConfig {
                learning_rate: 0.01,
                momentum: 0.9,
                clip_norm: Some(5.0),
            },
            hidden_channels: 16,
            code_channels: 16,
            agreement_floor: 0.9,
        }
    }
}

/// Per-term breakdown of the composite objective for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub shallow: f64,
    pub deep: f64,
    pub sparsity: f64,
    pub tv: f64,
    pub entropy: f64,
    pub total: f64,
}

impl LossTerms {
    fn accumulate(&mut self, o: &LossTerms) {
        self.shallow += o.shallow;
        self.deep += o.deep;
        self.sparsity += o.sparsity;
        self.tv += o.tv;
        self.entropy += o.entropy;
        self.total += o.total;
    }

    fn scaled(mut self, k: f64) -> Self {
        self.shallow *= k;
        self.deep *= k;
        self.sparsity *= k;
        self.tv *= k;
        self.entropy *= k;
        self.total *= k;
        self
    }
}

/// Composite objective of `ae` on host activation `a`, where `target` is the
/// frozen network's output distribution for `a`. Returns the loss terms and
/// the encoder and decoder parameter gradients.
pub fn autoencoder_objective(
    net: &LayeredClassifier,
    ae: &ConceptAutoencoder,
    a: &Tensor,
    target: &[f64],
    weights: &LossWeights,
) -> Result<(LossTerms, Gradients, Gradients)> {
    let body = net.body();
    let rest = ae.host_layer + 1;
    let enc_outs = ae.encoder.forward(a)?;
    let code = enc_outs.last().expect("encoder layers");
    let dec_outs = ae.decoder.forward(code)?;
    let a_hat = dec_outs.last().expect("decoder layers");
    let rest_outs = body.forward_from(rest, a_hat)?;
    let q = rest_outs.last().expect("network layers");

    let interp = interpretability_loss(code)?;
    let mut terms = LossTerms {
        shallow: shallow_loss(a, a_hat)?,
        deep: kl_divergence(target, q.data())?,
        sparsity: interp.sparsity,
        tv: interp.tv,
        entropy: interp.entropy,
        total: 0.0,
    };
    terms.total = weights.lambda_shallow * terms.shallow + weights.lambda_deep * terms.deep + interp.weighted(weights);

    let gq: Vec<f64> = deep_grad(target, q.data())
        .into_iter()
        .map(|g| g * weights.lambda_deep)
        .collect();
    let gq = Tensor::new(q.shape().to_vec(), gq)?;
    let mut g_hat = body.backward_from(rest, a_hat, &rest_outs, gq, None);
    let gs = shallow_grad(a, a_hat);
    for (g, s) in g_hat.data_mut().iter_mut().zip(gs.data()) {
        *g += weights.lambda_shallow * s;
    }
    let mut dec_grads = ae.decoder.zero_gradients();
    let mut g_code = ae.decoder.backward_from(0, code, &dec_outs, g_hat, Some(&mut dec_grads));
    let gi = interpretability_grad(code, weights)?;
    for (g, s) in g_code.data_mut().iter_mut().zip(gi.data()) {
        *g += s;
    }
    let mut enc_grads = ae.encoder.zero_gradients();
    ae.encoder.backward_from(0, a, &enc_outs, g_code, Some(&mut enc_grads));
    Ok((terms, enc_grads, dec_grads))
}

/// Value of [`autoencoder_objective`] without gradients.
pub fn autoencoder_objective_value(
    net: &LayeredClassifier,
    ae: &ConceptAutoencoder,
    a: &Tensor,
    target: &[f64],
    weights: &LossWeights,
) -> Result<f64> {
    let code = ae.encode(a)?;
    let a_hat = ae.decode(&code)?;
    let q = net.body().output_from(ae.host_layer + 1, &a_hat)?;
    let interp = interpretability_loss(&code)?;
    Ok(weights.lambda_shallow * shallow_loss(a, &a_hat)?
        + weights.lambda_deep * kl_divergence(target, q.data())?
        + interp.weighted(weights))
}

/// Compares the gradients of [`autoencoder_objective`] with central
/// differences of [`autoencoder_objective_value`], encoder parameters first.
pub fn autoencoder_gradient_check(
    net: &LayeredClassifier,
    ae: &ConceptAutoencoder,
    a: &Tensor,
    target: &[f64],
    weights: &LossWeights,
    epsilon: f64,
) -> Result<GradCheck> {
    let (_, enc, dec) = autoencoder_objective(net, ae, a, target, weights)?;
    let mut analytic = enc.flatten();
    analytic.extend(dec.flatten());
    let split = ae.encoder.parameter_count();
    let mut point = ae.encoder.flat_params();
    point.extend(ae.decoder.flat_params());
    let mut probe = ae.clone();
    check_gradients(&point, &analytic, epsilon, |v| {
        probe.encoder.set_flat_params(&v[..split])?;
        probe.decoder.set_flat_params(&v[split..])?;
        autoencoder_objective_value(net, &probe, a, target, weights)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: usize,
    pub host_layer: usize,
    /// Mean training objective per epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean held-out loss terms after training.
    pub heldout_terms: LossTerms,
    /// Fraction of held-out instances where the network with autoencoders
    /// `0..=level` inserted predicts the original network's class.
    pub agreement: f64,
    /// Median `KL(original ‖ inserted)` over the held-out instances.
    pub median_kl: f64,
    /// Largest held-out `KL(original ‖ inserted)`.
    pub max_kl: f64,
    pub below_agreement_floor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackReport {
    pub seed: u64,
    pub weights: LossWeights,
    pub levels: Vec<LevelReport>,
}

impl StackReport {
    pub fn final_agreement(&self) -> f64 {
        self.levels.last().map_or(f64::NAN, |l| l.agreement)
    }
}

/// Held-out agreement and KL statistics of `model` against its bare network.
pub fn insertion_agreement(model: &AutoencodedModel, heldout: &[&Tensor]) -> Result<(f64, f64, f64)> {
    if heldout.is_empty() {
        return Err(Error::NoInstances);
    }
    let mut agree = 0;
    let mut kls = Vec::with_capacity(heldout.len());
    for &x in heldout {
        let orig = model.net.predict(x)?;
        let ins = model.forward(x, None)?.output;
        agree += usize::from(argmax(&orig) == argmax(&ins));
        kls.push(kl_divergence(&orig, &ins)?);
    }
    kls.sort_by(f64::total_cmp);
    let n = kls.len();
    let median = if n % 2 == 1 {
        kls[n / 2]
    } else {
        0.5 * (kls[n / 2 - 1] + kls[n / 2])
    };
    Ok((agree as f64 / n as f64, median, kls[n - 1]))
}

/// Mean held-out loss terms of the last autoencoder in `model`.
pub fn heldout_terms(model: &AutoencodedModel, heldout: &[&Tensor], weights: &LossWeights) -> Result<LossTerms> {
    let level = model.levels().checked_sub(1).ok_or(Error::InvalidArgument("empty stack".into()))?;
    if heldout.is_empty() {
        return Err(Error::NoInstances);
    }
    let ae = &model.stack[level];
    let mut acc = LossTerms::default();
    for &x in heldout {
        let a = model.host_activation(x, level)?;
        let target = model.net.body().output_from(ae.host_layer + 1, &a)?;
        let code = ae.encode(&a)?;
        let a_hat = ae.decode(&code)?;
        let q = model.net.body().output_from(ae.host_layer + 1, &a_hat)?;
        let interp = interpretability_loss(&code)?;
        let mut t = LossTerms {
            shallow: shallow_loss(&a, &a_hat)?,
            deep: kl_divergence(target.data(), q.data())?,
            sparsity: interp.sparsity,
            tv: interp.tv,
            entropy: interp.entropy,
            total: 0.0,
        };
        t.total = weights.lambda_shallow * t.shallow + weights.lambda_deep * t.deep + interp.weighted(weights);
        acc.accumulate(&t);
    }
    Ok(acc.scaled(1.0 / heldout.len() as f64))
}

/// Trains one autoencoder per entry of `levels` (host layer indices, strictly
/// increasing). Each level is trained with every shallower, already trained
/// autoencoder inserted in the forward path; the classifier stays frozen.
pub fn train_autoencoder_stack(
    net: &LayeredClassifier,
    train: &[&Tensor],
    heldout: &[&Tensor],
    levels: &[usize],
    weights: &LossWeights,
    config: &AeTrainConfig,
    seed: u64,
) -> Result<(Vec<ConceptAutoencoder>, StackReport)> {
    if levels.is_empty() {
        return Err(Error::InvalidArgument("no autoencoder levels requested".into()));
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(format!("levels {levels:?} must be strictly increasing")));
    }
    let body_len = net.body().len();
    if let Some(&bad) = levels.iter().find(|&&l| l + 1 >= body_len) {
        return Err(Error::InvalidArgument(format!("level {bad} leaves no downstream layers")));
    }
    if train.is_empty() || heldout.is_empty() {
        return Err(Error::NoInstances);
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    weights.validate()?;

    let streams = SeedStream::new(seed).child("autoencoders");
    let mut model = AutoencodedModel::new(net.clone(), Vec::new())?;
    let mut reports = Vec::with_capacity(levels.len());
    for (level, &host_layer) in levels.iter().enumerate() {
        let host_shape = net.body().shapes()[host_layer].clone();
        let mut ae = ConceptAutoencoder::init(
            host_layer,
            &host_shape,
            config.hidden_channels,
            config.code_channels,
            &mut streams.rng_at("init", &[level as u64]),
        )?;
        let inputs: Vec<Tensor> = train
            .iter()
            .map(|x| model.layer_output(x, host_layer))
            .collect::<Result<_>>()?;
        let targets: Vec<Vec<f64>> = inputs
            .iter()
            .map(|a| Ok(net.body().output_from(host_layer + 1, a)?.into_data()))
            .collect::<Result<_>>()?;

        let mut enc_opt = Sgd::new(config.sgd, &ae.encoder);
        let mut dec_opt = Sgd::new(config.sgd, &ae.decoder);
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        let mut epoch_losses = Vec::with_capacity(config.epochs);
        for epoch in 0..config.epochs {
            order.shuffle(&mut streams.rng_at("shuffle", &[level as u64, epoch as u64]));
            let mut total = 0.0;
            for batch in order.chunks(config.batch_size) {
                let mut enc_g = ae.encoder.zero_gradients();
                let mut dec_g = ae.decoder.zero_gradients();
                for &i in batch {
                    let (terms, eg, dg) = autoencoder_objective(net, &ae, &inputs[i], &targets[i], weights)?;
                    if !terms.total.is_finite() {
                        return Err(Error::Diverged {
                            epoch,
                            detail: format!("autoencoder level {level}: non-finite loss on sample {i}"),
                        });
                    }
                    total += terms.total;
                    enc_g.add_assign(&eg);
                    dec_g.add_assign(&dg);
                }
                let k = 1.0 / batch.len() as f64;
                enc_g.scale(k);
                dec_g.scale(k);
                enc_opt.step(&mut ae.encoder, &enc_g);
                dec_opt.step(&mut ae.decoder, &dec_g);
            }
            let mean = total / inputs.len() as f64;
            log::info!("autoencoder level {level} epoch {epoch}: loss {mean:.5}");
            epoch_losses.push(mean);
        }
        ae.encoder.quantize_f32();
        ae.decoder.quantize_f32();
        model.stack.push(ae);

        let (agreement, median_kl, max_kl) = insertion_agreement(&model, heldout)?;
        let terms = heldout_terms(&model, heldout, weights)?;
        let below = agreement < config.agreement_floor;
        if below {
            log::warn!("autoencoder level {level}: agreement {agreement:.3} below floor {}", config.agreement_floor);
        }
        reports.push(LevelReport {
            level,
            host_layer,
            epoch_losses,
            heldout_terms: terms,
            agreement,
            median_kl,
            max_kl,
            below_agreement_floor: below,
        });
    }
    Ok((
        model.stack,
        StackReport {
            seed,
            weights: *weights,
            levels: reports,
        },
    ))
}
