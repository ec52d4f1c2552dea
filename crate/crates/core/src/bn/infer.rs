use std::collections::BTreeSet;

use super::factor::Factor;
use super::{Assignment, CausalBayesNet, DoAssignment, Evidence};
use crate::error::{Error, Result};

/// Variable elimination with a min-degree order. Forced nodes lose their
/// CPT and act as fixed values; nodes that are not ancestors of the query,
/// the evidence or the forced set are dropped before elimination.
pub(super) fn eliminate(bn: &CausalBayesNet, query: usize, forced: &DoAssignment, evidence: &Evidence) -> Result<Vec<f64>> {
    let nodes = bn.nodes();
    let n = nodes.len();

    let mut relevant = vec![false; n];
    let mut stack: Vec<usize> = std::iter::once(query)
        .chain(evidence.keys().copied())
        .chain(forced.keys().copied())
        .collect();
    while let Some(i) = stack.pop() {
        if relevant[i] {
            continue;
        }
        relevant[i] = true;
        if !forced.contains_key(&i) {
            stack.extend(nodes[i].parents.iter().copied());
        }
    }

    let mut fixed: Vec<Option<usize>> = vec![None; n];
    for (&k, &v) in evidence.iter().chain(forced.iter()) {
        fixed[k] = Some(v);
    }
    let query_fixed = fixed[query];
    let mut factors: Vec<Factor> = Vec::new();
    for i in (0..n).filter(|&i| relevant[i] && !forced.contains_key(&i)) {
        let mut vars = nodes[i].parents.clone();
        vars.push(i);
        let cards = vars.iter().map(|&v| nodes[v].cardinality).collect();
        let f = Factor {
            vars,
            cards,
            values: bn.cpt(i).to_vec(),
        };
        factors.push(f.reduce(&fixed));
    }

    let mut free: BTreeSet<usize> = factors.iter().flat_map(|f| f.vars.iter().copied()).collect();
    free.remove(&query);
    while !free.is_empty() {
        let var = min_degree(&factors, &free);
        free.remove(&var);
        let (touching, rest): (Vec<Factor>, Vec<Factor>) = factors.into_iter().partition(|f| f.vars.contains(&var));
        let refs: Vec<&Factor> = touching.iter().collect();
        factors = rest;
        factors.push(Factor::combine(&refs, Some(var)));
    }

    let refs: Vec<&Factor> = factors.iter().collect();
    let last = if refs.is_empty() { Factor::scalar(1.0) } else { Factor::combine(&refs, None) };
    let card = nodes[query].cardinality;
    let mut dist = match (query_fixed, last.vars.as_slice()) {
        (Some(v), _) => {
            let mass = last.values.iter().sum::<f64>();
            let mut d = vec![0.0; card];
            d[v] = mass;
            d
        }
        (None, [q]) if *q == query => last.values,
        // the query's own factor was dropped: only possible when it is isolated
        (None, _) => {
            let mass = last.values.iter().sum::<f64>();
            vec![mass / card as f64; card]
        }
    };
    let z: f64 = dist.iter().sum();
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::ImpossibleEvidence);
    }
    for p in &mut dist {
        *p /= z;
    }
    Ok(dist)
}

fn min_degree(factors: &[Factor], free: &BTreeSet<usize>) -> usize {
    let mut best = (usize::MAX, usize::MAX);
    for &v in free {
        let mut neighbours = BTreeSet::new();
        for f in factors.iter().filter(|f| f.vars.contains(&v)) {
            neighbours.extend(f.vars.iter().copied());
        }
        neighbours.remove(&v);
        if neighbours.len() < best.0 {
            best = (neighbours.len(), v);
        }
    }
    best.1
}

pub const MAX_JOINT_STATES: usize = 1 << 20;

/// Explicit joint over every node, row-major in node order.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    pub cards: Vec<usize>,
    pub values: Vec<f64>,
}

impl JointTable {
    fn decode(&self, mut index: usize, out: &mut [usize]) {
        for i in (0..self.cards.len()).rev() {
            out[i] = index % self.cards[i];
            index /= self.cards[i];
        }
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// `P(query | evidence)` by summation over the table.
    pub fn conditional(&self, query: usize, evidence: &Assignment) -> Result<Vec<f64>> {
        let mut dist = vec![0.0; self.cards[query]];
        let mut state = vec![0; self.cards.len()];
        for (i, &p) in self.values.iter().enumerate() {
            self.decode(i, &mut state);
            if evidence.iter().all(|(&k, &v)| state[k] == v) {
                dist[state[query]] += p;
            }
        }
        let z: f64 = dist.iter().sum();
        if z <= 0.0 {
            return Err(Error::ImpossibleEvidence);
        }
        Ok(dist.into_iter().map(|p| p / z).collect())
    }
}

/// The joint as the product of all CPT entries; for small test nets.
pub fn brute_force_joint(bn: &CausalBayesNet) -> Result<JointTable> {
    let cards: Vec<usize> = bn.nodes().iter().map(|n| n.cardinality).collect();
    let total = cards
        .iter()
        .try_fold(1usize, |acc, &c| acc.checked_mul(c).filter(|&t| t <= MAX_JOINT_STATES))
        .ok_or_else(|| Error::InvalidArgument(format!("joint state space exceeds {MAX_JOINT_STATES}")))?;
    let mut table = JointTable {
        cards,
        values: Vec::with_capacity(total),
    };
    let mut state = vec![0; table.cards.len()];
    for i in 0..total {
        table.decode(i, &mut state);
        let p = (0..state.len()).map(|node| bn.conditional(node, &state)).product();
        table.values.push(p);
    }
    Ok(table)
}
