//! Central-difference gradient verification.

use serde::Serialize;

use super::classifier::LayeredClassifier;
use super::layers::Layer;
use super::loss::OutputLoss;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub parameters: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / scale
}

/// Compares `analytic` against `(f(x+ε) − f(x−ε)) / 2ε` coordinate-wise.
pub fn check_gradients<F>(x: &[f64], analytic: &[f64], epsilon: f64, mut f: F) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-3) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside (0, 1e-3]")));
    }
    if x.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "{} parameters but {} analytic gradients",
            x.len(),
            analytic.len()
        )));
    }
    let mut probe = x.to_vec();
    let mut report = GradCheck {
        max_relative_error: 0.0,
        worst_index: 0,
        parameters: x.len(),
    };
    for i in 0..x.len() {
        probe[i] = x[i] + epsilon;
        let plus = f(&probe)?;
        probe[i] = x[i] - epsilon;
        let minus = f(&probe)?;
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss at parameter index {i}")));
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst_index = i;
        }
    }
    Ok(report)
}

/// Loss value and parameter gradient of `loss(net(input))`.
pub fn loss_and_gradient(net: &LayeredClassifier, loss: &OutputLoss, input: &Tensor) -> Result<(f64, Vec<f64>)> {
    let body = net.body();
    let outs = body.forward(input)?;
    let p = outs.last().expect("non-empty network");
    let value = loss.value(p.data())?;
    let gy = Tensor::new(p.shape().to_vec(), loss.grad(p.data()))?;
    let mut grads = body.zero_gradients();
    body.backward_from(0, input, &outs, gy, Some(&mut grads));
    Ok((value, grads.flatten()))
}

/// Maximum relative error over every parameter of `net`.
pub fn gradient_check(net: &LayeredClassifier, loss: &OutputLoss, input: &Tensor, epsilon: f64) -> Result<GradCheck> {
    let (_, analytic) = loss_and_gradient(net, loss, input)?;
    let x = net.body().flat_params();
    let mut probe = net.clone();
    check_gradients(&x, &analytic, epsilon, |params| {
        probe.body_mut().set_flat_params(params)?;
        let p = probe.predict(input)?;
        loss.value(&p)
    })
}

/// Checks one layer on the scalar `Σ wᵢ·yᵢ` of its output. The checked
/// coordinates are the input followed by the layer parameters, if any.
pub fn layer_gradient_check(layer: &Layer, x: &Tensor, weights: &[f64], epsilon: f64) -> Result<GradCheck> {
    let out_shape = layer.spec().output_shape(x.shape())?;
    let y = layer.forward(x);
    if weights.len() != y.len() || y.shape() != out_shape.as_slice() {
        return Err(Error::Shape(format!(
            "{} output weights for output shape {:?}",
            weights.len(),
            out_shape
        )));
    }
    let gy = Tensor::new(y.shape().to_vec(), weights.to_vec())?;
    let mut grads: Vec<Tensor> = layer.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
    let gx = layer.backward(x, &y, &gy, Some(&mut grads));
    let mut analytic = gx.into_data();
    let mut point = x.data().to_vec();
    for (g, p) in grads.iter().zip(layer.params()) {
        analytic.extend_from_slice(g.data());
        point.extend_from_slice(p.data());
    }
    let n = x.len();
    let mut probe_x = x.clone();
    let mut probe = layer.clone();
    check_gradients(&point, &analytic, epsilon, |v| {
        probe_x.data_mut().copy_from_slice(&v[..n]);
        let mut offset = n;
        for p in probe.params_mut() {
            let len = p.len();
            p.data_mut().copy_from_slice(&v[offset..offset + len]);
            offset += len;
        }
        let y = probe.forward(&probe_x);
        Ok(y.data().iter().zip(weights).map(|(a, b)| a * b).sum())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_square() {
        let report = check_gradients(&[3.0], &[6.0], 1e-5, |w| Ok(w[0] * w[0])).unwrap();
        assert!(report.max_relative_error < 1e-9, "{report:?}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let report = check_gradients(&[1.0, -2.0], &[0.0, 0.0], 1e-5, |_| Ok(4.0)).unwrap();
        assert_eq!(report.max_relative_error, 0.0);
    }

    #[test]
    fn epsilon_out_of_range() {
        assert!(check_gradients(&[1.0], &[0.0], 1e-2, |_| Ok(0.0)).is_err());
        assert!(check_gradients(&[1.0], &[0.0], 0.0, |_| Ok(0.0)).is_err());
    }

    #[test]
    fn non_finite_loss_names_parameter() {
        let err = check_gradients(&[1.0, 2.0], &[0.0, 0.0], 1e-5, |x| {
            Ok(if x[1] > 2.0 { f64::NAN } else { 0.0 })
        })
        .unwrap_err();
        assert!(err.to_string().contains("index 1"), "{err}");
    }
}
