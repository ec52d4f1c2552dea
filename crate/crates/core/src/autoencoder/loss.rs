//! Reconstruction and interpretability losses for concept autoencoders.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::loss::{kl_divergence, kl_grad_q};
use crate::nn::LayeredClassifier;
use crate::tensor::Tensor;

/// Locations whose total code mass is below this contribute no entropy.
pub const ENTROPY_MASS_FLOOR: f64 = 1e-8;

/// Weights of the composite autoencoder objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_shallow: f64,
    pub lambda_deep: f64,
    pub lambda_sparsity: f64,
    pub lambda_tv: f64,
    pub lambda_entropy: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_shallow: 1.0,
            lambda_deep: 100.0,
            lambda_sparsity: 0.1,
            lambda_tv: 0.1,
            lambda_entropy: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_shallow,
            self.lambda_deep,
            self.lambda_sparsity,
            self.lambda_tv,
            self.lambda_entropy,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument(format!("loss weights must be finite and nonnegative: {self:?}")));
        }
        Ok(())
    }

    /// Concept training requires the deep term to dominate the shallow one
    /// by at least a factor of ten.
    pub fn validate_for_concepts(&self) -> Result<()> {
        self.validate()?;
        if self.lambda_deep < 10.0 * self.lambda_shallow {
            return Err(Error::InvalidArgument(format!(
                "lambda_deep ({}) must be at least 10× lambda_shallow ({})",
                self.lambda_deep, self.lambda_shallow
            )));
        }
        Ok(())
    }
}

/// Mean absolute difference between an activation and its reconstruction.
pub fn shallow_loss(a: &Tensor, a_hat: &Tensor) -> Result<f64> {
    same_shape(a, a_hat)?;
    let sum: f64 = a.data().iter().zip(a_hat.data()).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum / a.len() as f64)
}

/// Gradient of [`shallow_loss`] with respect to `a_hat`.
pub fn shallow_grad(a: &Tensor, a_hat: &Tensor) -> Tensor {
    let n = a.len() as f64;
    let data = a
        .data()
        .iter()
        .zip(a_hat.data())
        .map(|(x, y)| sign(y - x) / n)
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `KL(r(a) ‖ r(a_hat))` where `r` runs `net` from the layer after `level`.
/// For a batch, the mean over pairs.
pub fn deep_loss(net: &LayeredClassifier, level: usize, pairs: &[(&Tensor, &Tensor)]) -> Result<f64> {
    let layers = net.body().len();
    if level + 1 >= layers {
        return Err(Error::InvalidArgument(format!(
            "level {level} out of range for a {layers}-layer network"
        )));
    }
    if pairs.is_empty() {
        return Err(Error::NoInstances);
    }
    let mut total = 0.0;
    for (a, a_hat) in pairs {
        same_shape(a, a_hat)?;
        let p = net.body().output_from(level + 1, a)?;
        let q = net.body().output_from(level + 1, a_hat)?;
        total += kl_divergence(p.data(), q.data())?;
    }
    Ok(total / pairs.len() as f64)
}

/// Gradient of `KL(p ‖ q)` with respect to `q`, re-exported for training.
pub(crate) fn deep_grad(p: &[f64], q: &[f64]) -> Vec<f64> {
    kl_grad_q(p, q)
}

/// The three interpretability terms of a `C×H×W` code.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interpretability {
    pub sparsity: f64,
    pub tv: f64,
    pub entropy: f64,
}

impl Interpretability {
    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.lambda_sparsity * self.sparsity + w.lambda_tv * self.tv + w.lambda_entropy * self.entropy
    }
}

fn code_dims(code: &Tensor) -> Result<(usize, usize, usize)> {
    match code.shape() {
        &[c, h, w] => Ok((c, h, w)),
        s => Err(Error::Shape(format!("code must be C×H×W, got {s:?}"))),
    }
}

fn tv_pairs(c: usize, h: usize, w: usize) -> usize {
    c * (h * (w - 1) + (h - 1) * w)
}

/// Sparsity is the mean absolute code value; total variation the mean
/// absolute difference over horizontally and vertically adjacent pixel pairs
/// within each channel; entropy the mean over locations of the Shannon
/// entropy of `|code|` normalized across channels.
pub fn interpretability_loss(code: &Tensor) -> Result<Interpretability> {
    let (c, h, w) = code_dims(code)?;
    let d = code.data();
    let sparsity = d.iter().map(|v| v.abs()).sum::<f64>() / d.len() as f64;

    let pairs = tv_pairs(c, h, w);
    let mut tv = 0.0;
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..h {
            for x in 0..w {
                let i = base + y * w + x;
                if x + 1 < w {
                    tv += (d[i] - d[i + 1]).abs();
                }
                if y + 1 < h {
                    tv += (d[i] - d[i + w]).abs();
                }
            }
        }
    }
    let tv = if pairs == 0 { 0.0 } else { tv / pairs as f64 };

    let plane = h * w;
    let mut entropy = 0.0;
    for loc in 0..plane {
        let mass: f64 = (0..c).map(|ch| d[ch * plane + loc].abs()).sum();
        if mass < ENTROPY_MASS_FLOOR {
            continue;
        }
        for ch in 0..c {
            let q = d[ch * plane + loc].abs() / mass;
            if q > 0.0 {
                entropy -= q * q.ln();
            }
        }
    }
    Ok(Interpretability {
        sparsity,
        tv,
        entropy: entropy / plane as f64,
    })
}

/// Gradient of `weights`-weighted [`interpretability_loss`] with respect to
/// the code.
pub fn interpretability_grad(code: &Tensor, weights: &LossWeights) -> Result<Tensor> {
    let (c, h, w) = code_dims(code)?;
    let d = code.data();
    let n = d.len() as f64;
    let mut g: Vec<f64> = d.iter().map(|&v| weights.lambda_sparsity * sign(v) / n).collect();

    let pairs = tv_pairs(c, h, w);
    if pairs > 0 && weights.lambda_tv != 0.0 {
        let k = weights.lambda_tv / pairs as f64;
        for ch in 0..c {
            let base = ch * h * w;
            for y in 0..h {
                for x in 0..w {
                    let i = base + y * w + x;
                    if x + 1 < w {
                        let s = k * sign(d[i] - d[i + 1]);
                        g[i] += s;
                        g[i + 1] -= s;
                    }
                    if y + 1 < h {
                        let s = k * sign(d[i] - d[i + w]);
                        g[i] += s;
                        g[i + w] -= s;
                    }
                }
            }
        }
    }

    if weights.lambda_entropy != 0.0 {
        let plane = h * w;
        let k = weights.lambda_entropy / plane as f64;
        for loc in 0..plane {
            let mass: f64 = (0..c).map(|ch| d[ch * plane + loc].abs()).sum();
            if mass < ENTROPY_MASS_FLOOR {
                continue;
            }
            let ent: f64 = (0..c)
                .map(|ch| d[ch * plane + loc].abs() / mass)
                .filter(|&q| q > 0.0)
                .map(|q| -q * q.ln())
                .sum();
            for ch in 0..c {
                let v = d[ch * plane + loc];
                let q = v.abs() / mass;
                if q > 0.0 {
                    // ∂H/∂m_k = −(ln q_k + H) / Σm
                    g[ch * plane + loc] += k * sign(v) * (-(q.ln() + ent) / mass);
                }
            }
        }
    }
    Tensor::new(code.shape().to_vec(), g)
}
