use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BnStructure, CausalBayesNet, Node};
use crate::error::{Error, Result};
use crate::io;

pub const BN_FORMAT: &str = "conceptcause-bn/1";

#[derive(Serialize, Deserialize)]
struct NodeFile {
    name: String,
    cardinality: usize,
    parents: Vec<String>,
    /// One row per parent assignment, first parent most significant.
    cpt: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct BnFile {
    format: String,
    nodes: Vec<NodeFile>,
}

pub fn save_bn(path: &Path, bn: &CausalBayesNet) -> Result<()> {
    let nodes = bn
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, n)| NodeFile {
            name: n.name.clone(),
            cardinality: n.cardinality,
            parents: n.parents.iter().map(|&p| bn.nodes()[p].name.clone()).collect(),
            cpt: bn.cpt(i).chunks(n.cardinality).map(<[f64]>::to_vec).collect(),
        })
        .collect();
    io::write_json(
        path,
        &BnFile {
            format: BN_FORMAT.into(),
            nodes,
        },
    )
}

pub fn load_bn(path: &Path) -> Result<CausalBayesNet> {
    let file: BnFile = io::read_json(path)?;
    if file.format != BN_FORMAT {
        return Err(Error::Validation(format!("unsupported Bayes net format `{}`", file.format)));
    }
    let names: Vec<&str> = file.nodes.iter().map(|n| n.name.as_str()).collect();
    let mut nodes = Vec::with_capacity(file.nodes.len());
    let mut cpts = Vec::with_capacity(file.nodes.len());
    for n in &file.nodes {
        let parents = n
            .parents
            .iter()
            .map(|p| {
                names
                    .iter()
                    .position(|m| m == p)
                    .ok_or_else(|| Error::UnknownNode(p.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        if n.cpt.iter().any(|r| r.len() != n.cardinality) {
            return Err(Error::Validation(format!("CPT rows of `{}` have the wrong width", n.name)));
        }
        nodes.push(Node {
            name: n.name.clone(),
            cardinality: n.cardinality,
            parents,
        });
        cpts.push(n.cpt.concat());
    }
    CausalBayesNet::new(BnStructure::new(nodes)?, cpts)
}
