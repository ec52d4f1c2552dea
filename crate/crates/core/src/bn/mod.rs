//! Layered discrete causal Bayes net over concept variables.
//!
//! CPTs are stored row-major: the row is the parent assignment in mixed
//! radix with the first listed parent most significant, and the column is
//! the node's own value.

mod factor;
mod infer;
mod persist;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use infer::{brute_force_joint, JointTable, MAX_JOINT_STATES};
pub use persist::{load_bn, save_bn, BN_FORMAT};

pub const LABEL: &str = "label";
pub const PREDICTION: &str = "prediction";

/// Node → value.
pub type Assignment = BTreeMap<usize, usize>;
/// Observed values.
pub type Evidence = Assignment;
/// Forced values.
pub type DoAssignment = Assignment;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub cardinality: usize,
    pub parents: Vec<usize>,
}

/// Nodes and edges without probabilities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BnStructure {
    nodes: Vec<Node>,
}

impl BnStructure {
    pub fn new(nodes: Vec<Node>) -> Result<Self> {
        let n = nodes.len();
        let mut names = BTreeSet::new();
        for (i, node) in nodes.iter().enumerate() {
            if node.cardinality == 0 {
                return Err(Error::InvalidArgument(format!("node `{}` has cardinality 0", node.name)));
            }
            if !names.insert(node.name.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate node name `{}`", node.name)));
            }
            let mut seen = BTreeSet::new();
            for &p in &node.parents {
                if p >= n || p == i || !seen.insert(p) {
                    return Err(Error::InvalidArgument(format!("bad parent {p} for node `{}`", node.name)));
                }
            }
        }
        let s = Self { nodes };
        s.topological_order()?;
        Ok(s)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.nodes
            .iter()
            .position(|n| n.name == name)
            .ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.iter().map(|n| n.parents.len()).sum()
    }

    pub fn children(&self, node: usize) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&c| self.nodes[c].parents.contains(&node)).collect()
    }

    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let n = self.nodes.len();
        let mut indegree: Vec<usize> = self.nodes.iter().map(|x| x.parents.len()).collect();
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(&i) = ready.iter().next() {
            ready.remove(&i);
            order.push(i);
            for c in self.children(i) {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() != n {
            return Err(Error::InvalidArgument("graph has a cycle".into()));
        }
        Ok(order)
    }

    /// Nodes reachable from `node` along directed edges, excluding itself.
    pub fn descendants(&self, node: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        let mut stack = vec![node];
        while let Some(i) = stack.pop() {
            for c in self.children(i) {
                if out.insert(c) {
                    stack.push(c);
                }
            }
        }
        out
    }

    fn rows(&self, node: usize) -> usize {
        self.nodes[node].parents.iter().map(|&p| self.nodes[p].cardinality).product()
    }

    /// Mixed-radix row of `node`'s CPT for a full assignment `values`.
    pub fn row_index(&self, node: usize, values: &[usize]) -> usize {
        self.nodes[node]
            .parents
            .iter()
            .fold(0, |acc, &p| acc * self.nodes[p].cardinality + values[p])
    }

    fn check_assignment(&self, a: &Assignment, what: &str) -> Result<()> {
        for (&node, &value) in a {
            let n = self
                .nodes
                .get(node)
                .ok_or_else(|| Error::UnknownNode(format!("#{node} in {what}")))?;
            if value >= n.cardinality {
                return Err(Error::InvalidArgument(format!(
                    "{what} sets `{}` = {value}, cardinality {}",
                    n.name, n.cardinality
                )));
            }
        }
        Ok(())
    }
}

/// Label root, one layer per concept level with full bipartite edges
/// between consecutive layers, and a prediction sink.
pub fn layered_structure(levels: &[Vec<(String, usize)>], label_cardinality: usize, prediction_cardinality: usize) -> Result<BnStructure> {
    if levels.is_empty() {
        return Err(Error::InvalidArgument("no concept levels".into()));
    }
    if let Some(i) = levels.iter().position(Vec::is_empty) {
        return Err(Error::InvalidArgument(format!("concept level {i} is empty")));
    }
    let mut nodes = vec![Node {
        name: LABEL.into(),
        cardinality: label_cardinality,
        parents: Vec::new(),
    }];
    let mut previous = vec![0];
    for level in levels {
        let mut current = Vec::with_capacity(level.len());
        for (name, card) in level {
            current.push(nodes.len());
            nodes.push(Node {
                name: name.clone(),
                cardinality: *card,
                parents: previous.clone(),
            });
        }
        previous = current;
    }
    nodes.push(Node {
        name: PREDICTION.into(),
        cardinality: prediction_cardinality,
        parents: previous,
    });
    BnStructure::new(nodes)
}

/// `layered_structure` with binary concepts named `levelL_featN`.
pub fn build_layered_structure(level_sizes: &[usize], label_cardinality: usize, prediction_cardinality: usize) -> Result<BnStructure> {
    let levels: Vec<Vec<(String, usize)>> = level_sizes
        .iter()
        .enumerate()
        .map(|(l, &n)| (0..n).map(|c| (crate::autoencoder::concept_name(l, c), 2)).collect())
        .collect();
    layered_structure(&levels, label_cardinality, prediction_cardinality)
}

/// A structure with one conditional probability table per node.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalBayesNet {
    structure: BnStructure,
    /// `cpts[node][row * cardinality + value]`
    cpts: Vec<Vec<f64>>,
}

const ROW_SUM_TOLERANCE: f64 = 1e-12;

impl CausalBayesNet {
    pub fn new(structure: BnStructure, cpts: Vec<Vec<f64>>) -> Result<Self> {
        if cpts.len() != structure.len() {
            return Err(Error::InvalidArgument(format!(
                "{} CPTs for {} nodes",
                cpts.len(),
                structure.len()
            )));
        }
        for (i, table) in cpts.iter().enumerate() {
            let node = &structure.nodes[i];
            let card = node.cardinality;
            if table.len() != structure.rows(i) * card {
                return Err(Error::InvalidArgument(format!(
                    "CPT of `{}` has {} entries, expected {}",
                    node.name,
                    table.len(),
                    structure.rows(i) * card
                )));
            }
            for (r, row) in table.chunks(card).enumerate() {
                let sum: f64 = row.iter().sum();
                if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                    return Err(Error::Validation(format!("CPT row {r} of `{}` is not a distribution", node.name)));
                }
            }
        }
        Ok(Self { structure, cpts })
    }

    /// Independent Dirichlet(1,..,1) rows.
    pub fn with_random_cpts<R: Rng + ?Sized>(structure: BnStructure, rng: &mut R) -> Self {
        let cpts = (0..structure.len())
            .map(|i| {
                let card = structure.nodes[i].cardinality;
                let mut t = Vec::with_capacity(structure.rows(i) * card);
                for _ in 0..structure.rows(i) {
                    let w: Vec<f64> = (0..card).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
                    let s: f64 = w.iter().sum();
                    let mut row: Vec<f64> = w.iter().map(|x| x / s).collect();
                    // absorb rounding so the row sums to 1 to the last bit
                    let rest: f64 = row[1..].iter().sum();
                    row[0] = 1.0 - rest;
                    t.extend(row);
                }
                t
            })
            .collect();
        Self { structure, cpts }
    }

    pub fn structure(&self) -> &BnStructure {
        &self.structure
    }

    pub fn nodes(&self) -> &[Node] {
        &self.structure.nodes
    }

    pub fn cpt(&self, node: usize) -> &[f64] {
        &self.cpts[node]
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.structure.index_of(name)
    }

    /// `P(node = value | parents as in values)`.
    pub fn conditional(&self, node: usize, values: &[usize]) -> f64 {
        let card = self.structure.nodes[node].cardinality;
        self.cpts[node][self.structure.row_index(node, values) * card + values[node]]
    }

    /// The net with each forced node's parents cut and its CPT replaced by
    /// a point mass at the forced value.
    pub fn mutilated(&self, forced: &DoAssignment) -> Result<Self> {
        self.structure.check_assignment(forced, "do")?;
        let mut nodes = self.structure.nodes.clone();
        let mut cpts = self.cpts.clone();
        for (&node, &value) in forced {
            nodes[node].parents.clear();
            let mut t = vec![0.0; nodes[node].cardinality];
            t[value] = 1.0;
            cpts[node] = t;
        }
        Ok(Self {
            structure: BnStructure { nodes },
            cpts,
        })
    }
}

/// One fitting row: a value per node and whether that node was forced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub values: Vec<usize>,
    pub intervened: Vec<bool>,
}

/// Smoothed-count CPTs. A node's own table ignores rows where it was
/// intervened on; those rows still count as parent values for its
/// children. Rows with no data and `alpha = 0` fall back to uniform.
pub fn fit_cpds(structure: &BnStructure, data: &[Observation], alpha: f64) -> Result<CausalBayesNet> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("smoothing alpha {alpha} must be finite and ≥ 0")));
    }
    let n = structure.len();
    let mut counts: Vec<Vec<f64>> = (0..n)
        .map(|i| vec![0.0; structure.rows(i) * structure.nodes[i].cardinality])
        .collect();
    for (k, obs) in data.iter().enumerate() {
        if obs.values.len() != n || obs.intervened.len() != n {
            return Err(Error::InvalidArgument(format!("observation {k} does not cover all {n} nodes")));
        }
        for (i, node) in structure.nodes.iter().enumerate() {
            if obs.values[i] >= node.cardinality {
                return Err(Error::InvalidArgument(format!(
                    "observation {k} has `{}` = {}",
                    node.name, obs.values[i]
                )));
            }
        }
        for (i, node) in structure.nodes.iter().enumerate() {
            if !obs.intervened[i] {
                counts[i][structure.row_index(i, &obs.values) * node.cardinality + obs.values[i]] += 1.0;
            }
        }
    }
    let mut empty_rows = 0usize;
    let cpts = counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let card = structure.nodes[i].cardinality;
            let mut t = Vec::with_capacity(c.len());
            for row in c.chunks(card) {
                let total: f64 = row.iter().sum::<f64>() + alpha * card as f64;
                if total > 0.0 {
                    t.extend(row.iter().map(|x| (x + alpha) / total));
                } else {
                    empty_rows += 1;
                    t.extend(std::iter::repeat_n(1.0 / card as f64, card));
                }
            }
            t
        })
        .collect();
    if empty_rows > 0 {
        log::warn!("{empty_rows} CPT rows had no data and were set uniform");
    }
    CausalBayesNet::new(structure.clone(), cpts)
}

/// How per-value effects are folded into a single score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectVariant {
    /// Posterior-weighted mean of |effect|.
    #[default]
    ExpectedAbs,
    /// Posterior-weighted mean of the signed effect.
    Signed,
    /// Largest |effect| over the intervened node's values.
    Max,
}

impl EffectVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            EffectVariant::ExpectedAbs => "expected_abs",
            EffectVariant::Signed => "signed",
            EffectVariant::Max => "max",
        }
    }
}

impl std::str::FromStr for EffectVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expected_abs" => Ok(Self::ExpectedAbs),
            "signed" => Ok(Self::Signed),
            "max" => Ok(Self::Max),
            other => Err(Error::InvalidArgument(format!(
                "unknown variant `{other}` (expected_abs, signed, max)"
            ))),
        }
    }
}

impl CausalBayesNet {
    /// `P(query | evidence)`.
    pub fn infer(&self, query: usize, evidence: &Evidence) -> Result<Vec<f64>> {
        self.do_infer(query, &DoAssignment::new(), evidence)
    }

    /// `P(query | do(forced), evidence)` on the mutilated net.
    pub fn do_infer(&self, query: usize, forced: &DoAssignment, evidence: &Evidence) -> Result<Vec<f64>> {
        if query >= self.structure.len() {
            return Err(Error::UnknownNode(format!("#{query}")));
        }
        self.structure.check_assignment(evidence, "evidence")?;
        self.structure.check_assignment(forced, "do")?;
        if let Some(n) = forced.keys().find(|n| evidence.contains_key(n)) {
            return Err(Error::InvalidArgument(format!(
                "`{}` is both forced and observed",
                self.structure.nodes[*n].name
            )));
        }
        infer::eliminate(self, query, forced, evidence)
    }

    /// Evidence restricted to non-descendants of `node`, without `node`.
    pub fn non_descendant_evidence(&self, node: usize, evidence: &Evidence) -> Evidence {
        let desc = self.structure.descendants(node);
        evidence
            .iter()
            .filter(|(n, _)| **n != node && !desc.contains(n))
            .map(|(&n, &v)| (n, v))
            .collect()
    }

    /// `P(target = t | do(xi = v), Z_xi) − P(target = t | Z_xi)`.
    ///
    /// When `evidence` observes the target at a value other than `t`, that
    /// outcome cannot occur and the effect is 0.
    pub fn causal_effect(&self, xi: usize, value: usize, target: usize, target_value: usize, evidence: &Evidence) -> Result<f64> {
        self.check_effect_query(xi, target, target_value, evidence)?;
        self.structure.check_assignment(&Assignment::from([(xi, value)]), "effect query")?;
        Ok(self.effects(xi, &[value], target, target_value, evidence)?[0])
    }

    fn check_effect_query(&self, xi: usize, target: usize, target_value: usize, evidence: &Evidence) -> Result<()> {
        if xi == target {
            return Err(Error::InvalidArgument("intervened node equals target".into()));
        }
        self.structure.check_assignment(&Assignment::from([(xi, 0), (target, target_value)]), "effect query")?;
        self.structure.check_assignment(evidence, "evidence")
    }

    /// Effects of forcing `xi` to each of `values`, sharing the baseline.
    fn effects(&self, xi: usize, values: &[usize], target: usize, target_value: usize, evidence: &Evidence) -> Result<Vec<f64>> {
        if evidence.get(&target).is_some_and(|&v| v != target_value) || !self.structure.descendants(xi).contains(&target) {
            return Ok(vec![0.0; values.len()]);
        }
        let z = self.non_descendant_evidence(xi, evidence);
        let pre = self.infer(target, &z)?[target_value];
        values
            .iter()
            .map(|&v| Ok(self.do_infer(target, &DoAssignment::from([(xi, v)]), &z)?[target_value] - pre))
            .collect()
    }

    /// Aggregates `causal_effect` over every value of `xi`, weighted by
    /// `P(xi | evidence)` using all of the evidence.
    pub fn expected_causal_effect(&self, xi: usize, target: usize, target_value: usize, evidence: &Evidence, variant: EffectVariant) -> Result<f64> {
        self.check_effect_query(xi, target, target_value, evidence)?;
        let weights = self.infer(xi, evidence)?;
        let values: Vec<usize> = (0..weights.len())
            .filter(|&v| variant == EffectVariant::Max || weights[v] > 0.0)
            .collect();
        let effects = self.effects(xi, &values, target, target_value, evidence)?;
        Ok(values.iter().zip(&effects).fold(0.0, |acc: f64, (&v, &e)| match variant {
            EffectVariant::ExpectedAbs => acc + weights[v] * e.abs(),
            EffectVariant::Signed => acc + weights[v] * e,
            EffectVariant::Max => acc.max(e.abs()),
        }))
    }
}

#[cfg(test)]
mod tests;
