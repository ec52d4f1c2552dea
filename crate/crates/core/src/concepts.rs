//! Discrete concept variables: variance pruning and quantile binning of
//! pooled code values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autoencoder::concept_name;
use crate::error::{Error, Result};
use crate::intervention::InterventionRecord;
use crate::io;

/// A code channel kept as a causal variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConceptId {
    pub level: usize,
    pub channel: usize,
}

impl ConceptId {
    pub fn new(level: usize, channel: usize) -> Self {
        Self { level, channel }
    }

    pub fn name(&self) -> String {
        concept_name(self.level, self.channel)
    }
}

/// Pooled values of one channel over the records where it was not zeroed.
fn observed_values(records: &[InterventionRecord], id: ConceptId) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let (Some(flags), Some(vals)) = (r.intervened.get(id.level), r.pooled.get(id.level)) else {
            return Err(Error::Validation(format!("record {i} has no level {}", id.level)));
        };
        let (Some(&zeroed), Some(&v)) = (flags.get(id.channel), vals.get(id.channel)) else {
            return Err(Error::Validation(format!("record {i} has no channel {}", id.name())));
        };
        if !zeroed {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("{} in record {i}", id.name())));
            }
            out.push(v);
        }
    }
    Ok(out)
}

fn sample_variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

fn channel_layout(records: &[InterventionRecord]) -> Result<Vec<usize>> {
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidArgument("pruning needs at least 2 records".into()))?;
    if records.len() < 2 {
        return Err(Error::InvalidArgument("pruning needs at least 2 records".into()));
    }
    Ok(first.pooled.iter().map(Vec::len).collect())
}

/// Channel variance over non-intervened occurrences, in (level, channel) order.
pub fn channel_variances(records: &[InterventionRecord]) -> Result<Vec<(ConceptId, f64)>> {
    let layout = channel_layout(records)?;
    let mut out = Vec::new();
    for (level, &n) in layout.iter().enumerate() {
        for channel in 0..n {
            let id = ConceptId::new(level, channel);
            out.push((id, sample_variance(&observed_values(records, id)?)));
        }
    }
    Ok(out)
}

/// Channels whose variance exceeds `threshold`, in (level, channel) order.
pub fn prune_by_variance(records: &[InterventionRecord], threshold: f64) -> Result<Vec<ConceptId>> {
    if threshold.is_nan() {
        return Err(Error::InvalidArgument("variance threshold is NaN".into()));
    }
    let active: Vec<ConceptId> = channel_variances(records)?
        .into_iter()
        .filter(|&(_, v)| v > threshold)
        .map(|(id, _)| id)
        .collect();
    if active.is_empty() {
        return Err(Error::NoActiveConcepts);
    }
    Ok(active)
}

/// `relative × (max |pooled|)²` over non-intervened values.
pub fn relative_threshold(records: &[InterventionRecord], relative: f64) -> f64 {
    let max = records
        .iter()
        .flat_map(|r| {
            r.pooled
                .iter()
                .zip(&r.intervened)
                .flat_map(|(vals, flags)| vals.iter().zip(flags).filter(|(_, &z)| !z).map(|(v, _)| v.abs()))
        })
        .fold(0.0, f64::max);
    relative * max * max
}

/// Keeps at most `cap` variables per level, highest variance first, and
/// returns them in (level, channel) order.
pub fn select_active(records: &[InterventionRecord], threshold: f64, cap: usize) -> Result<Vec<ConceptId>> {
    let variances = channel_variances(records)?;
    let active = prune_by_variance(records, threshold)?;
    let mut chosen = Vec::new();
    let levels = active.iter().map(|c| c.level).max().map_or(0, |l| l + 1);
    for level in 0..levels {
        let mut here: Vec<(ConceptId, f64)> = variances
            .iter()
            .copied()
            .filter(|(id, _)| id.level == level && active.contains(id))
            .collect();
        here.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        chosen.extend(here.into_iter().take(cap).map(|(id, _)| id));
    }
    chosen.sort();
    Ok(chosen)
}

/// Bin edges for each active variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationSpec {
    pub active: Vec<ConceptId>,
    /// Strictly increasing edges per active variable.
    pub bin_edges: Vec<Vec<f64>>,
    /// Requested bin count.
    pub k: usize,
}

impl DiscretizationSpec {
    /// Bins actually available to variable `i`; fewer than `k` when
    /// duplicate quantiles collapsed.
    pub fn bins(&self, i: usize) -> usize {
        self.bin_edges[i].len() + 1
    }

    pub fn collapsed(&self) -> Vec<ConceptId> {
        self.active
            .iter()
            .zip(&self.bin_edges)
            .filter(|(_, e)| e.len() + 1 < self.k)
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn position(&self, id: ConceptId) -> Option<usize> {
        self.active.iter().position(|&a| a == id)
    }

    /// Variables grouped by level, skipping levels with no active variable.
    pub fn level_groups(&self) -> Vec<(usize, Vec<usize>)> {
        let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
        for (i, id) in self.active.iter().enumerate() {
            match groups.last_mut() {
                Some((level, members)) if *level == id.level => members.push(i),
                _ => groups.push((id.level, vec![i])),
            }
        }
        groups
    }

    pub fn bin_of(&self, i: usize, value: f64) -> Result<usize> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("pooled value of {}", self.active[i].name())));
        }
        Ok(bin_index(&self.bin_edges[i], value))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let spec: Self = io::read_json(path)?;
        if spec.active.len() != spec.bin_edges.len() {
            return Err(Error::Validation("discretization has mismatched edge lists".into()));
        }
        if spec.bin_edges.iter().any(|e| e.windows(2).any(|w| w[0] >= w[1])) {
            return Err(Error::Validation("bin edges must be strictly increasing".into()));
        }
        Ok(spec)
    }
}

/// Number of edges at or below `value`: a value equal to an edge goes to
/// the upper bin.
pub fn bin_index(edges: &[f64], value: f64) -> usize {
    edges.partition_point(|&e| e <= value)
}

/// Equal-frequency edges for `k` bins. Each edge sits at the midpoint of
/// the gap between two distinct sorted values closest to its target rank;
/// quantiles that would fall inside a run of ties collapse onto the same
/// gap, so fewer than `k - 1` edges may come back.
pub fn quantile_edges(values: &[f64], k: usize) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k = {k}, need at least 2 bins")));
    }
    let mut sorted = values.to_vec();
    if sorted.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("value passed to binning".into()));
    }
    sorted.sort_by(f64::total_cmp);
    // positions i where sorted[i - 1] < sorted[i]
    let gaps: Vec<usize> = (1..sorted.len()).filter(|&i| sorted[i - 1] < sorted[i]).collect();
    if gaps.is_empty() {
        return Err(Error::Validation("constant column cannot be binned".into()));
    }
    let n = sorted.len() as f64;
    let mut chosen: Vec<usize> = Vec::with_capacity(k - 1);
    for j in 1..k {
        let target = j as f64 * n / k as f64;
        let &best = gaps
            .iter()
            .min_by(|&&a, &&b| (a as f64 - target).abs().total_cmp(&(b as f64 - target).abs()).then(a.cmp(&b)))
            .expect("nonempty");
        if chosen.last() != Some(&best) {
            chosen.push(best);
        }
    }
    Ok(chosen.into_iter().map(|i| 0.5 * (sorted[i - 1] + sorted[i])).collect())
}

/// Fits edges from non-intervened occurrences of each active variable.
pub fn fit_bins(records: &[InterventionRecord], active: &[ConceptId], k: usize) -> Result<DiscretizationSpec> {
    if active.is_empty() {
        return Err(Error::NoActiveConcepts);
    }
    let mut bin_edges = Vec::with_capacity(active.len());
    for &id in active {
        let values = observed_values(records, id)?;
        let edges = quantile_edges(&values, k).map_err(|e| match e {
            Error::Validation(_) => Error::Validation(format!("{} is constant; it should have been pruned", id.name())),
            other => other,
        })?;
        bin_edges.push(edges);
    }
    let spec = DiscretizationSpec {
        active: active.to_vec(),
        bin_edges,
        k,
    };
    let collapsed = spec.collapsed();
    if !collapsed.is_empty() {
        log::warn!("{} variables have fewer than {k} distinct bins", collapsed.len());
    }
    Ok(spec)
}

/// One record in bin space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscreteRecord {
    pub instance_id: usize,
    pub pass: usize,
    pub label: usize,
    pub prediction: usize,
    /// Bin per active variable.
    pub bins: Vec<usize>,
    /// Intervention flag per active variable.
    pub intervened: Vec<bool>,
}

pub fn discretize(record: &InterventionRecord, spec: &DiscretizationSpec) -> Result<DiscreteRecord> {
    let mut bins = Vec::with_capacity(spec.active.len());
    let mut intervened = Vec::with_capacity(spec.active.len());
    for (i, id) in spec.active.iter().enumerate() {
        let value = record
            .pooled
            .get(id.level)
            .and_then(|l| l.get(id.channel))
            .ok_or_else(|| Error::Validation(format!("record lacks {}", id.name())))?;
        bins.push(spec.bin_of(i, *value)?);
        intervened.push(record.intervened[id.level][id.channel]);
    }
    Ok(DiscreteRecord {
        instance_id: record.instance_id,
        pass: record.pass,
        label: record.true_label,
        prediction: record.predicted,
        bins,
        intervened,
    })
}

pub fn discretize_all(records: &[InterventionRecord], spec: &DiscretizationSpec) -> Result<Vec<DiscreteRecord>> {
    records.iter().map(|r| discretize(r, spec)).collect()
}

pub fn save_discrete(path: &Path, records: &[DiscreteRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    io::write_bytes(path, out.as_bytes())
}

pub fn load_discrete(path: &Path) -> Result<Vec<DiscreteRecord>> {
    let bytes = io::read_bytes(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
