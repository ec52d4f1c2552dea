//! Losses defined on a classifier's output distribution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp applied to the second argument of the KL divergence.
pub const KL_CLAMP: f64 = 1e-12;

/// `KL(p ‖ q)` in nats, with `q` clamped below at [`KL_CLAMP`].
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!(
            "KL arguments differ in length: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("p sums to {total}, not 1")));
    }
    let kl = p
        .iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi.ln() - qi.max(KL_CLAMP).ln()))
        .sum::<f64>();
    // rounding can leave a tiny negative residue on identical inputs
    Ok(kl.max(0.0))
}

/// Gradient of `KL(p ‖ q)` with respect to `q`.
pub fn kl_grad_q(p: &[f64], q: &[f64]) -> Vec<f64> {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| if pi > 0.0 && qi >= KL_CLAMP { -pi / qi } else { 0.0 })
        .collect()
}

/// Loss applied to a probability vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputLoss {
    /// `-ln p[label]`
    CrossEntropy { label: usize },
    /// `KL(target ‖ p)`
    KlFrom { target: Vec<f64> },
    /// Loss that ignores its input.
    Constant { value: f64 },
}

impl OutputLoss {
    pub fn value(&self, p: &[f64]) -> Result<f64> {
        match self {
            OutputLoss::CrossEntropy { label } => {
                let pl = *p
                    .get(*label)
                    .ok_or_else(|| Error::InvalidArgument(format!("label {label} out of range")))?;
                Ok(-pl.max(1e-300).ln())
            }
            OutputLoss::KlFrom { target } => kl_divergence(target, p),
            OutputLoss::Constant { value } => Ok(*value),
        }
    }

    /// Gradient of [`OutputLoss::value`] with respect to `p`.
    pub fn grad(&self, p: &[f64]) -> Vec<f64> {
        match self {
            OutputLoss::CrossEntropy { label } => {
                let mut g = vec![0.0; p.len()];
                g[*label] = -1.0 / p[*label].max(1e-300);
                g
            }
            OutputLoss::KlFrom { target } => kl_grad_q(target, p),
            OutputLoss::Constant { .. } => vec![0.0; p.len()],
        }
    }
}
