//! Explanation queries over a fitted concept Bayes net and the
//! autoencoded network it describes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autoencoder::{AutoencodedModel, InterventionMask};
use crate::bn::{CausalBayesNet, DoAssignment, EffectVariant, Evidence, LABEL, PREDICTION};
use crate::concepts::{ConceptId, DiscretizationSpec};
use crate::error::{Error, Result};
use crate::intervention::pool_code;
use crate::target::argmax;
use crate::tensor::Tensor;

pub const REPORT_TITLE: &str = "Expected Causal Effect";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub name: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    pub variant: EffectVariant,
    pub seed: u64,
    /// Node name → observed value.
    pub evidence: BTreeMap<String, usize>,
    /// Value of the prediction node whose probability is explained.
    pub target_class: usize,
    /// Descending by score, ties by name.
    pub rows: Vec<EffectRow>,
}

impl EffectReport {
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
        let mut out = format!("{REPORT_TITLE}\n");
        for r in &self.rows {
            out.push_str(&format_row(&r.name, r.score, width));
            out.push('\n');
        }
        out
    }
}

/// `name  score` with nine decimals, name padded to `width`.
pub fn format_row(name: &str, score: f64, width: usize) -> String {
    format!("{name:<width$}  {score:.9}")
}

fn sort_rows(rows: &mut [EffectRow]) {
    rows.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.name.cmp(&b.name)));
}

/// Every node except the label root and the prediction sink.
pub fn concept_nodes(bn: &CausalBayesNet) -> Vec<usize> {
    bn.nodes()
        .iter()
        .enumerate()
        .filter(|(_, n)| n.name != LABEL && n.name != PREDICTION)
        .map(|(i, _)| i)
        .collect()
}

fn named(bn: &CausalBayesNet, evidence: &Evidence) -> BTreeMap<String, usize> {
    evidence.iter().map(|(&k, &v)| (bn.nodes()[k].name.clone(), v)).collect()
}

/// Scores every concept node against the most probable prediction under
/// `evidence`.
pub fn rank_concepts(bn: &CausalBayesNet, evidence: &Evidence, variant: EffectVariant, seed: u64) -> Result<EffectReport> {
    let pred = bn.index_of(PREDICTION)?;
    let target_class = argmax(&bn.infer(pred, evidence)?);
    let mut rows = concept_nodes(bn)
        .into_iter()
        .map(|i| {
            Ok(EffectRow {
                name: bn.nodes()[i].name.clone(),
                score: bn.expected_causal_effect(i, pred, target_class, evidence, variant)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    sort_rows(&mut rows);
    Ok(EffectReport {
        variant,
        seed,
        evidence: named(bn, evidence),
        target_class,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceEffect {
    pub name: String,
    /// Posterior-weighted signed effect.
    pub effect: f64,
    /// Posterior-weighted |effect|; the sort key.
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceEffects {
    pub target_class: usize,
    /// The instance evidence was impossible under the net and the prior
    /// was used instead.
    pub fell_back_to_prior: bool,
    pub rows: Vec<InstanceEffect>,
}

/// The `k` concepts with the largest effect on `target_class` given the
/// instance evidence.
pub fn instance_top_effects(bn: &CausalBayesNet, evidence: &Evidence, target_class: usize, k: usize) -> Result<InstanceEffects> {
    let pred = bn.index_of(PREDICTION)?;
    let score = |z: &Evidence| -> Result<Vec<InstanceEffect>> {
        concept_nodes(bn)
            .into_iter()
            .map(|i| {
                Ok(InstanceEffect {
                    name: bn.nodes()[i].name.clone(),
                    effect: bn.expected_causal_effect(i, pred, target_class, z, EffectVariant::Signed)?,
                    magnitude: bn.expected_causal_effect(i, pred, target_class, z, EffectVariant::ExpectedAbs)?,
                })
            })
            .collect()
    };
    let (mut rows, fell_back_to_prior) = match score(evidence) {
        Ok(rows) => (rows, false),
        Err(Error::ImpossibleEvidence) => {
            log::warn!("instance evidence is impossible under the net; using the prior");
            (score(&Evidence::new())?, true)
        }
        Err(e) => return Err(e),
    };
    rows.sort_by(|a, b| b.magnitude.total_cmp(&a.magnitude).then_with(|| a.name.cmp(&b.name)));
    rows.truncate(k);
    Ok(InstanceEffects {
        target_class,
        fell_back_to_prior,
        rows,
    })
}

/// Code tensors of a set of instances, `codes[i][level]`.
#[derive(Debug, Clone)]
pub struct EncodedCorpus {
    pub ids: Vec<usize>,
    pub codes: Vec<Vec<Tensor>>,
    pub outputs: Vec<Vec<f64>>,
}

impl EncodedCorpus {
    pub fn encode<'a>(model: &AutoencodedModel, instances: impl IntoIterator<Item = (usize, &'a Tensor)>) -> Result<Self> {
        let mut corpus = Self {
            ids: Vec::new(),
            codes: Vec::new(),
            outputs: Vec::new(),
        };
        for (id, x) in instances {
            let trace = model.forward(x, None)?;
            corpus.ids.push(id);
            corpus.codes.push(trace.codes);
            corpus.outputs.push(trace.output);
        }
        Ok(corpus)
    }

    pub fn position(&self, id: usize) -> Option<usize> {
        self.ids.iter().position(|&i| i == id)
    }

    pub fn map(&self, index: usize, concept: ConceptId) -> &[f64] {
        self.codes[index][concept.level].channel(concept.channel)
    }

    /// Mean-pooled value of every code channel, `[level][channel]`.
    pub fn pooled(&self, index: usize) -> Vec<Vec<f64>> {
        self.codes[index].iter().map(pool_code).collect()
    }
}

/// Sum of absolute elementwise differences.
pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: usize,
    pub distance: f64,
}

/// The query first, then its `k` nearest instances in ℓ1 distance over
/// one concept feature map; ties break by instance id.
pub fn concept_nearest_neighbors(corpus: &EncodedCorpus, spec: &DiscretizationSpec, concept: ConceptId, query_id: usize, k: usize) -> Result<Vec<Neighbor>> {
    if spec.position(concept).is_none() {
        return Err(Error::InvalidArgument(format!("concept {} was pruned", concept.name())));
    }
    let q = corpus
        .position(query_id)
        .ok_or_else(|| Error::InvalidArgument(format!("instance {query_id} is not in the corpus")))?;
    if k > corpus.ids.len() {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds corpus size {}", corpus.ids.len())));
    }
    let query = corpus.map(q, concept);
    let mut others: Vec<Neighbor> = (0..corpus.ids.len())
        .filter(|&i| i != q)
        .map(|i| Neighbor {
            id: corpus.ids[i],
            distance: l1_distance(query, corpus.map(i, concept)),
        })
        .collect();
    others.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id)));
    others.truncate(k);
    let mut out = vec![Neighbor {
        id: query_id,
        distance: 0.0,
    }];
    out.extend(others);
    Ok(out)
}

/// Bins of an instance's pooled codes as evidence on the concept nodes.
pub fn instance_evidence(bn: &CausalBayesNet, spec: &DiscretizationSpec, pooled: &[Vec<f64>]) -> Result<Evidence> {
    let mut z = Evidence::new();
    for (i, id) in spec.active.iter().enumerate() {
        let node = bn.index_of(&id.name())?;
        z.insert(node, spec.bin_of(i, pooled[id.level][id.channel])?);
    }
    Ok(z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputShift {
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIf {
    /// `P(prediction | Z')` and `P(prediction | do(zeroed), Z')`, where Z'
    /// keeps the instance evidence on nodes that are neither forced nor
    /// downstream of a forced node.
    pub bn: OutputShift,
    /// The autoencoded network without and with the channels zeroed.
    pub network: OutputShift,
    /// Concept → bin that zeroing forces.
    pub forced: BTreeMap<String, usize>,
    /// Zeroed channels that are not Bayes-net variables.
    pub not_in_bn: Vec<String>,
}

/// Zeroes `interventions` in the instance's codes and reports the output
/// distribution the Bayes net predicts next to the one the network produces.
pub fn what_if(model: &AutoencodedModel, spec: &DiscretizationSpec, bn: &CausalBayesNet, image: &Tensor, interventions: &[ConceptId]) -> Result<WhatIf> {
    let pairs: Vec<(usize, usize)> = interventions.iter().map(|c| (c.level, c.channel)).collect();
    let mask = InterventionMask::from_pairs(model, &pairs)?;
    let pre = model.forward(image, None)?;
    let post = model.forward(image, Some(&mask))?;
    let pooled: Vec<Vec<f64>> = pre.codes.iter().map(pool_code).collect();
    let z = instance_evidence(bn, spec, &pooled)?;
    let mut forced = DoAssignment::new();
    let mut not_in_bn = Vec::new();
    for c in interventions {
        match spec.position(*c) {
            Some(i) => {
                forced.insert(bn.index_of(&c.name())?, spec.bin_of(i, 0.0)?);
            }
            None => not_in_bn.push(c.name()),
        }
    }
    not_in_bn.sort();
    not_in_bn.dedup();
    let mut kept = z.clone();
    for &node in forced.keys() {
        kept = bn.non_descendant_evidence(node, &kept);
    }
    let pred = bn.index_of(PREDICTION)?;
    Ok(WhatIf {
        bn: OutputShift {
            pre: bn.infer(pred, &kept)?,
            post: bn.do_infer(pred, &forced, &kept)?,
        },
        network: OutputShift {
            pre: pre.output,
            post: post.output,
        },
        forced: forced.iter().map(|(&k, &v)| (bn.nodes()[k].name.clone(), v)).collect(),
        not_in_bn,
    })
}

/// Mean |ΔP(predicted class)| over `images` when each concept's channel is
/// zeroed alone in the autoencoded network.
pub fn direct_ablation_effects(model: &AutoencodedModel, images: &[&Tensor], concepts: &[ConceptId]) -> Result<Vec<f64>> {
    if images.is_empty() {
        return Err(Error::NoInstances);
    }
    let mut sums = vec![0.0; concepts.len()];
    for x in images {
        let base = model.forward(x, None)?.output;
        let class = argmax(&base);
        for (s, &c) in sums.iter_mut().zip(concepts) {
            let mask = InterventionMask::from_pairs(model, &[(c.level, c.channel)])?;
            let out = model.forward(x, Some(&mask))?.output;
            *s += (out[class] - base[class]).abs();
        }
    }
    Ok(sums.into_iter().map(|s| s / images.len() as f64).collect())
}
