//! On-disk form of compressions: tables keyed by common-state and history
//! strings so files are readable and independent of node numbering.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CommonCompression, CommonUpdateKey, MeasuredParams, PrivateCompression, UpdateKey, Witness};
use crate::error::{Error, Result};
use crate::histories::{FcsKey, FcsTree, NodeId, PrivateHistory};

/// Measured parameters with the witnesses that attain them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub params: MeasuredParams,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub witnesses: BTreeMap<String, Witness>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivateUpdateRow {
    pub parent: String,
    pub label: u32,
    pub prescription: u64,
    pub o0: u16,
    pub action: u16,
    pub obs: u16,
    pub next: u32,
}

/// One (agent, time) slice of a private compression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivateTable {
    pub agent: usize,
    pub t: usize,
    pub alphabet: u32,
    /// common state → private history → label
    pub labels: BTreeMap<String, BTreeMap<String, u32>>,
    /// Updates into this slice (empty at t = 1).
    pub updates: Vec<PrivateUpdateRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivateDocument {
    pub kind: String,
    pub id: String,
    pub tables: Vec<PrivateTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measured: Option<Measured>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommonUpdateRow {
    pub label: u32,
    pub prescription: u64,
    pub o0: u16,
    pub next: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommonTable {
    pub t: usize,
    pub alphabet: u32,
    pub labels: BTreeMap<String, u32>,
    /// Updates out of this level.
    pub updates: Vec<CommonUpdateRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommonDocument {
    pub kind: String,
    pub id: String,
    pub mu: String,
    pub tables: Vec<CommonTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measured: Option<Measured>,
}

fn field(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Field {
        field: field.into(),
        message: message.into(),
    }
}

fn node_of(tree: &FcsTree, key: &str, locus: &str) -> Result<NodeId> {
    let parsed: FcsKey = key
        .parse()
        .map_err(|_| field(locus, format!("`{key}` is not a common-state key")))?;
    tree.lookup(&parsed)
        .ok_or_else(|| field(locus, format!("`{key}` is not reachable in this model")))
}

fn pretty<T: Serialize>(doc: &T) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("serialisable");
    s.push('\n');
    s
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str, kind: &str) -> Result<T> {
    let doc: T = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let found: serde_json::Value = serde_json::from_str(text).unwrap();
    if found.get("kind").and_then(|k| k.as_str()) != Some(kind) {
        return Err(field("kind", format!("expected `{kind}`")));
    }
    Ok(doc)
}

impl PrivateDocument {
    pub fn from_compression(tree: &FcsTree, pc: &PrivateCompression, measured: Option<Measured>) -> Self {
        let n_agents = tree.model().num_agents();
        let mut tables = Vec::new();
        for t in 1..=tree.horizon() {
            for n in 0..n_agents {
                let mut labels = BTreeMap::new();
                for &id in tree.level(t) {
                    let node = tree.node(id);
                    let row = node
                        .domain(n)
                        .iter()
                        .zip(&pc.labels(id)[n])
                        .map(|(h, &z)| (h.to_string(), z))
                        .collect();
                    labels.insert(node.key.to_string(), row);
                }
                let updates = pc
                    .updates()
                    .iter()
                    .filter(|(k, _)| k.agent as usize == n && tree.node(k.parent).t + 1 == t)
                    .map(|(k, &next)| PrivateUpdateRow {
                        parent: tree.node(k.parent).key.to_string(),
                        label: k.label,
                        prescription: k.prescription,
                        o0: k.o0,
                        action: k.action,
                        obs: k.obs,
                        next,
                    })
                    .collect();
                tables.push(PrivateTable {
                    agent: n,
                    t,
                    alphabet: pc.alphabet(t, n),
                    labels,
                    updates,
                });
            }
        }
        PrivateDocument {
            kind: "private".to_string(),
            id: pc.id.clone(),
            tables,
            measured,
        }
    }

    pub fn to_compression(&self, tree: &FcsTree) -> Result<PrivateCompression> {
        let n_agents = tree.model().num_agents();
        let mut labels: Vec<Vec<Vec<Option<u32>>>> = tree
            .nodes()
            .iter()
            .map(|node| (0..n_agents).map(|n| vec![None; node.domain(n).len()]).collect())
            .collect();
        let mut alphabet = vec![vec![0u32; n_agents]; tree.horizon()];
        let mut updates = BTreeMap::new();
        for (i, tab) in self.tables.iter().enumerate() {
            let locus = format!("tables[{i}]");
            if tab.agent >= n_agents || tab.t == 0 || tab.t > tree.horizon() {
                return Err(field(locus, "agent or time out of range"));
            }
            alphabet[tab.t - 1][tab.agent] = tab.alphabet;
            for (key, row) in &tab.labels {
                let id = node_of(tree, key, &format!("{locus}.labels"))?;
                let node = tree.node(id);
                for (h, &z) in row {
                    let h: PrivateHistory = h
                        .parse()
                        .map_err(|_| field(format!("{locus}.labels.{key}"), format!("bad history `{h}`")))?;
                    let pos = node.domain(tab.agent).binary_search(&h).map_err(|_| {
                        field(format!("{locus}.labels.{key}"), format!("history {h} is not reachable"))
                    })?;
                    labels[id.idx()][tab.agent][pos] = Some(z);
                }
            }
            for u in &tab.updates {
                let parent = node_of(tree, &u.parent, &format!("{locus}.updates"))?;
                updates.insert(
                    UpdateKey {
                        parent,
                        agent: tab.agent as u16,
                        label: u.label,
                        prescription: u.prescription,
                        o0: u.o0,
                        action: u.action,
                        obs: u.obs,
                    },
                    u.next,
                );
            }
        }
        let mut full = Vec::with_capacity(labels.len());
        for (node, l) in tree.nodes().iter().zip(labels) {
            let mut per_agent = Vec::new();
            for (n, row) in l.into_iter().enumerate() {
                let row: Option<Vec<u32>> = row.into_iter().collect();
                per_agent.push(row.ok_or_else(|| {
                    field("tables", format!("agent {n} has unlabelled histories at `{}`", node.key))
                })?);
            }
            full.push(per_agent);
        }
        Ok(PrivateCompression::from_parts(self.id.clone(), full, alphabet, updates))
    }

    pub fn to_json(&self) -> String {
        pretty(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        parse(text, "private")
    }
}

impl CommonDocument {
    pub fn from_compression(tree: &FcsTree, cc: &CommonCompression, measured: Option<Measured>) -> Self {
        let mut tables: Vec<CommonTable> = (1..=tree.horizon())
            .map(|t| CommonTable {
                t,
                alphabet: cc.alphabet()[t - 1],
                labels: BTreeMap::new(),
                updates: Vec::new(),
            })
            .collect();
        for (&id, &z) in cc.labels() {
            let node = tree.node(id);
            tables[node.t - 1].labels.insert(node.key.to_string(), z);
        }
        for (k, &next) in cc.updates() {
            tables[k.t as usize - 1].updates.push(CommonUpdateRow {
                label: k.label,
                prescription: k.prescription,
                o0: k.o0,
                next,
            });
        }
        CommonDocument {
            kind: "common".to_string(),
            id: cc.id.clone(),
            mu: cc.mu.clone(),
            tables,
            measured,
        }
    }

    pub fn to_compression(&self, tree: &FcsTree) -> Result<CommonCompression> {
        let mut labels = BTreeMap::new();
        let mut alphabet = vec![0u32; tree.horizon()];
        let mut updates = BTreeMap::new();
        for (i, tab) in self.tables.iter().enumerate() {
            let locus = format!("tables[{i}]");
            if tab.t == 0 || tab.t > tree.horizon() {
                return Err(field(locus, "time out of range"));
            }
            alphabet[tab.t - 1] = tab.alphabet;
            for (key, &z) in &tab.labels {
                let id = node_of(tree, key, &format!("{locus}.labels"))?;
                labels.insert(id, z);
            }
            for u in &tab.updates {
                updates.insert(
                    CommonUpdateKey {
                        t: tab.t as u16,
                        label: u.label,
                        prescription: u.prescription,
                        o0: u.o0,
                    },
                    u.next,
                );
            }
        }
        Ok(CommonCompression::from_parts(
            self.id.clone(),
            self.mu.clone(),
            labels,
            alphabet,
            updates,
        ))
    }

    pub fn to_json(&self) -> String {
        pretty(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        parse(text, "common")
    }
}
