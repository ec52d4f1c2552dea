//! Random code-channel zeroing and the resulting interventional records.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{concept_name, AutoencodedModel, InterventionMask};
use crate::error::{Error, Result};
use crate::io;
use crate::rng::SeedStream;
use crate::target::argmax;
use crate::tensor::Tensor;

/// One forward pass of the autoencoded network under a random mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionRecord {
    pub instance_id: usize,
    pub pass: usize,
    /// `intervened[level][channel]`
    pub intervened: Vec<Vec<bool>>,
    /// Mean-pooled code value, `pooled[level][channel]`.
    pub pooled: Vec<Vec<f64>>,
    pub true_label: usize,
    pub predicted: usize,
    pub predicted_distribution: Vec<f64>,
}

impl InterventionRecord {
    pub fn intervened_count(&self) -> usize {
        self.intervened.iter().flatten().filter(|&&z| z).count()
    }
}

/// Input to the generator: an instance id, its image and its true label.
#[derive(Debug, Clone, Copy)]
pub struct LabeledInput<'a> {
    pub id: usize,
    pub image: &'a Tensor,
    pub label: usize,
}

/// Arithmetic mean of a feature map.
pub fn mean_pool(map: &Tensor) -> f64 {
    map.data().iter().sum::<f64>() / map.len() as f64
}

/// Mean of every channel of a C×H×W code.
pub fn pool_code(code: &Tensor) -> Vec<f64> {
    let plane = code.len() / code.shape()[0];
    (0..code.shape()[0])
        .map(|c| code.channel(c).iter().sum::<f64>() / plane as f64)
        .collect()
}

/// Mask for `(pass, instance_id)`: every channel of every level is zeroed
/// independently with probability `p`. Depends only on its arguments.
pub fn sample_mask(model: &AutoencodedModel, p: f64, seed: u64, pass: usize, instance_id: usize) -> InterventionMask {
    let mut rng = SeedStream::new(seed).rng_at("intervention-mask", &[pass as u64, instance_id as u64]);
    let mut mask = InterventionMask::none(model);
    for row in &mut mask.zeroed {
        for z in row.iter_mut() {
            *z = rng.random_bool(p);
        }
    }
    mask
}

/// Records for a single pass over `instances`, one per instance.
pub fn generate_pass(
    model: &AutoencodedModel,
    instances: &[LabeledInput<'_>],
    p: f64,
    seed: u64,
    pass: usize,
) -> Result<Vec<InterventionRecord>> {
    generate_passes(model, instances, p, seed, pass..pass + 1)
}

/// `passes` passes over `instances`, ordered pass-major then by input order.
/// Each pass draws fresh masks from `(seed, pass, instance_id)`, so the
/// result does not depend on evaluation order.
pub fn generate_interventional_dataset(
    model: &AutoencodedModel,
    instances: &[LabeledInput<'_>],
    p: f64,
    passes: usize,
    seed: u64,
) -> Result<Vec<InterventionRecord>> {
    generate_passes(model, instances, p, seed, 0..passes)
}

fn generate_passes(
    model: &AutoencodedModel,
    instances: &[LabeledInput<'_>],
    p: f64,
    seed: u64,
    passes: std::ops::Range<usize>,
) -> Result<Vec<InterventionRecord>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("intervention probability {p} not in [0, 1]")));
    }
    if model.stack.is_empty() {
        return Err(Error::InvalidArgument("no trained autoencoders".into()));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = instances.iter().find(|i| !seen.insert(i.id)) {
        return Err(Error::InvalidArgument(format!("instance id {} repeats", dup.id)));
    }
    let n_passes = passes.len();
    let mut per_instance: Vec<Vec<InterventionRecord>> = Vec::with_capacity(instances.len());
    for inst in instances {
        let resume = ResumeCache::new(model, inst.image)?;
        let mut recs = Vec::with_capacity(n_passes);
        for pass in passes.clone() {
            let mask = sample_mask(model, p, seed, pass, inst.id);
            let (codes, output) = resume.run(model, &mask)?;
            let predicted = argmax(&output);
            recs.push(InterventionRecord {
                instance_id: inst.id,
                pass,
                pooled: codes.iter().map(pool_code).collect(),
                intervened: mask.zeroed,
                true_label: inst.label,
                predicted,
                predicted_distribution: output,
            });
        }
        per_instance.push(recs);
    }
    let mut out = Vec::with_capacity(instances.len() * n_passes);
    for k in 0..n_passes {
        for recs in &per_instance {
            out.push(recs[k].clone());
        }
    }
    Ok(out)
}

/// Observational codes and host activations of one instance, so a masked
/// pass can restart at its shallowest intervened level.
struct ResumeCache {
    host: Vec<Tensor>,
    codes: Vec<Tensor>,
    output: Vec<f64>,
}

impl ResumeCache {
    fn new(model: &AutoencodedModel, x: &Tensor) -> Result<Self> {
        let body = model.net.body();
        x.check_shape(body.input_shape(), "model input")?;
        let mut cur = x.clone();
        let mut next = 0;
        let mut host = Vec::with_capacity(model.levels());
        let mut codes = Vec::with_capacity(model.levels());
        for ae in &model.stack {
            for layer in &body.layers()[next..=ae.host_layer] {
                cur = layer.forward(&cur);
            }
            next = ae.host_layer + 1;
            let code = ae.encode(&cur)?;
            host.push(cur);
            cur = ae.decode(&code)?;
            codes.push(code);
        }
        for layer in &body.layers()[next..] {
            cur = layer.forward(&cur);
        }
        Ok(Self {
            host,
            codes,
            output: cur.into_data(),
        })
    }

    fn run(&self, model: &AutoencodedModel, mask: &InterventionMask) -> Result<(Vec<Tensor>, Vec<f64>)> {
        let Some(first) = mask.first_level() else {
            return Ok((self.codes.clone(), self.output.clone()));
        };
        let body = model.net.body();
        let mut codes: Vec<Tensor> = self.codes[..first].to_vec();
        let mut cur = self.host[first].clone();
        let mut next = model.stack[first].host_layer;
        for (level, ae) in model.stack.iter().enumerate().skip(first) {
            if level > first {
                for layer in &body.layers()[next..=ae.host_layer] {
                    cur = layer.forward(&cur);
                }
            }
            next = ae.host_layer + 1;
            let mut code = ae.encode(&cur)?;
            for (ch, &z) in mask.zeroed[level].iter().enumerate() {
                if z {
                    code.channel_mut(ch).fill(0.0);
                }
            }
            cur = ae.decode(&code)?;
            codes.push(code);
        }
        for layer in &body.layers()[next..] {
            cur = layer.forward(&cur);
        }
        Ok((codes, cur.into_data()))
    }
}

/// `(level, channel)` → concept name entry of the dataset header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub level: usize,
    pub channel: usize,
    pub name: String,
}

pub fn channel_registry(model: &AutoencodedModel) -> Vec<RegistryEntry> {
    model
        .stack
        .iter()
        .enumerate()
        .flat_map(|(level, ae)| {
            (0..ae.code_channels()).map(move |channel| RegistryEntry {
                level,
                channel,
                name: concept_name(level, channel),
            })
        })
        .collect()
}

pub const INTERVENTION_FORMAT: &str = "conceptcause-interventions/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionHeader {
    pub format: String,
    pub seed: u64,
    pub probability: f64,
    pub passes: usize,
    pub instances: usize,
    pub registry: Vec<RegistryEntry>,
}

/// JSON lines: the header object first, then one record per line.
pub fn save_interventions(path: &Path, header: &InterventionHeader, records: &[InterventionRecord]) -> Result<()> {
    let mut out = serde_json::to_string(header)?;
    out.push('\n');
    for r in records {
        writeln!(out, "{}", serde_json::to_string(r)?).expect("string write");
    }
    io::write_bytes(path, out.as_bytes())
}

pub fn load_interventions(path: &Path) -> Result<(InterventionHeader, Vec<InterventionRecord>)> {
    let text = String::from_utf8(io::read_bytes(path)?)
        .map_err(|e| Error::Validation(format!("{} is not UTF-8: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: InterventionHeader = serde_json::from_str(
        lines
            .next()
            .ok_or_else(|| Error::Validation(format!("{} is empty", path.display())))?,
    )?;
    if header.format != INTERVENTION_FORMAT {
        return Err(Error::Validation(format!("unsupported interventions format `{}`", header.format)));
    }
    let records = lines.map(serde_json::from_str).collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((header, records))
}
