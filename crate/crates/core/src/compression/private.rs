use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;

use super::{tv_distance, EdgeViolation, RecursionReport, Witness};
use crate::error::{Error, Result};
use crate::histories::{FcsTree, NodeId, PrivateHistory};

/// Argument tuple of the private update: the parent common state, the
/// agent's label there, the prescription, the next common observation, and
/// the agent's own action and private observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct UpdateKey {
    pub parent: NodeId,
    pub agent: u16,
    pub label: u32,
    pub prescription: u64,
    pub o0: u16,
    pub action: u16,
    pub obs: u16,
}

/// Private-history labels per common state and agent, with the recursive
/// update table that reproduces them.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivateCompression {
    pub id: String,
    /// `[node][agent][domain position]`
    labels: Vec<Vec<Vec<u32>>>,
    /// `[t - 1][agent]`
    alphabet: Vec<Vec<u32>>,
    updates: BTreeMap<UpdateKey, u32>,
}

/// A reachable one-step transition of one agent's private history.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Edge {
    pub parent: NodeId,
    pub child: NodeId,
    pub agent: usize,
    pub pos: usize,
    pub child_pos: usize,
    pub g: u64,
    pub o0: usize,
    pub action: usize,
    pub obs: usize,
}

pub(crate) fn for_each_edge(tree: &FcsTree, mut f: impl FnMut(Edge)) {
    let model = tree.model();
    for t in 1..tree.horizon() {
        for &id in tree.level(t) {
            let node = tree.node(id);
            for g in 0..node.space.len() as u64 {
                let gamma = node.space.decode(g);
                for b in tree.children(id, g) {
                    let child = tree.node(b.child);
                    for n in 0..model.num_agents() {
                        for (k, h) in node.domain(n).iter().enumerate() {
                            let a = gamma.tables[n][k] as usize;
                            for o in 0..model.num_private_obs(n) {
                                if let Ok(k2) = child.domain(n).binary_search(&h.extend(a, o)) {
                                    f(Edge {
                                        parent: id,
                                        child: b.child,
                                        agent: n,
                                        pos: k,
                                        child_pos: k2,
                                        g,
                                        o0: b.o0,
                                        action: a,
                                        obs: o,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

impl PrivateCompression {
    /// Builds a compression from labels, deriving the update table from
    /// reachable edges. Fails if two edges with equal arguments disagree.
    pub fn from_labels(
        tree: &FcsTree,
        id: impl Into<String>,
        labels: Vec<Vec<Vec<u32>>>,
    ) -> Result<Self> {
        let id = id.into();
        let n_agents = tree.model().num_agents();
        if labels.len() != tree.len() {
            return Err(Error::Compression {
                id,
                message: format!("labels cover {} of {} nodes", labels.len(), tree.len()),
            });
        }
        let mut alphabet = vec![vec![0u32; n_agents]; tree.horizon()];
        for node in tree.nodes() {
            let l = &labels[node.id.idx()];
            for n in 0..n_agents {
                if l.len() != n_agents || l[n].len() != node.domain(n).len() {
                    return Err(Error::Compression {
                        id,
                        message: format!("labels at `{}` do not cover its domain", node.key),
                    });
                }
                for &x in &l[n] {
                    alphabet[node.t - 1][n] = alphabet[node.t - 1][n].max(x + 1);
                }
            }
        }
        let mut pc = PrivateCompression {
            id,
            labels,
            alphabet,
            updates: BTreeMap::new(),
        };
        let mut conflicts = Vec::new();
        let mut updates = BTreeMap::new();
        for_each_edge(tree, |e| {
            let key = pc.edge_key(&e);
            let next = pc.labels[e.child.idx()][e.agent][e.child_pos];
            match updates.insert(key, next) {
                Some(prev) if prev != next => conflicts.push(EdgeViolation {
                    edge: describe(tree, &e),
                    expected: Some(prev),
                    found: next,
                }),
                _ => {}
            }
        });
        pc.updates = updates;
        RecursionReport {
            id: pc.id.clone(),
            edges_checked: 0,
            violations: conflicts,
        }
        .into_result()?;
        Ok(pc)
    }

    /// Assembles a compression from explicit tables without deriving anything.
    pub fn from_parts(
        id: impl Into<String>,
        labels: Vec<Vec<Vec<u32>>>,
        alphabet: Vec<Vec<u32>>,
        updates: BTreeMap<UpdateKey, u32>,
    ) -> Self {
        PrivateCompression {
            id: id.into(),
            labels,
            alphabet,
            updates,
        }
    }

    /// Each private history is its own label, numbered per (agent, time).
    pub fn identity(tree: &FcsTree) -> Self {
        let n_agents = tree.model().num_agents();
        let mut labels = vec![Vec::new(); tree.len()];
        for t in 1..=tree.horizon() {
            for n in 0..n_agents {
                let all: BTreeSet<&PrivateHistory> = tree
                    .level(t)
                    .iter()
                    .flat_map(|&id| tree.node(id).domain(n))
                    .collect();
                let all: Vec<&PrivateHistory> = all.into_iter().collect();
                for &id in tree.level(t) {
                    let l: Vec<u32> = tree
                        .node(id)
                        .domain(n)
                        .iter()
                        .map(|h| all.binary_search(&h).unwrap() as u32)
                        .collect();
                    labels[id.idx()].push(l);
                }
            }
        }
        Self::from_labels(tree, "identity", labels).expect("identity is recursive")
    }

    /// A single label per (agent, common state).
    pub fn constant(tree: &FcsTree) -> Self {
        let labels = tree
            .nodes()
            .iter()
            .map(|node| {
                node.belief
                    .domains
                    .iter()
                    .map(|d| vec![0u32; d.len()])
                    .collect()
            })
            .collect();
        Self::from_labels(tree, "constant", labels).expect("constant is recursive")
    }

    pub fn labels(&self, node: NodeId) -> &[Vec<u32>] {
        &self.labels[node.idx()]
    }

    pub fn label(&self, node: NodeId, agent: usize, pos: usize) -> u32 {
        self.labels[node.idx()][agent][pos]
    }

    pub fn joint_label(&self, node: NodeId, hist: &[u32]) -> Vec<u32> {
        hist.iter()
            .enumerate()
            .map(|(n, &k)| self.labels[node.idx()][n][k as usize])
            .collect()
    }

    /// Sorted labels in use at `node`, per agent.
    pub fn label_domain(&self, node: NodeId) -> Vec<Vec<u32>> {
        self.labels[node.idx()]
            .iter()
            .map(|l| {
                let mut d = l.clone();
                d.sort_unstable();
                d.dedup();
                d
            })
            .collect()
    }

    pub fn alphabet(&self, t: usize, agent: usize) -> u32 {
        self.alphabet[t - 1][agent]
    }

    pub fn alphabets(&self) -> &[Vec<u32>] {
        &self.alphabet
    }

    pub fn updates(&self) -> &BTreeMap<UpdateKey, u32> {
        &self.updates
    }

    pub fn update(&self, key: &UpdateKey) -> Option<u32> {
        self.updates.get(key).copied()
    }

    /// Overwrites a single label without touching the update table.
    pub fn set_label(&mut self, node: NodeId, agent: usize, pos: usize, label: u32) {
        self.labels[node.idx()][agent][pos] = label;
    }

    #[cfg(test)]
    pub(crate) fn all_labels(&self) -> &[Vec<Vec<u32>>] {
        &self.labels
    }

    fn edge_key(&self, e: &Edge) -> UpdateKey {
        UpdateKey {
            parent: e.parent,
            agent: e.agent as u16,
            label: self.labels[e.parent.idx()][e.agent][e.pos],
            prescription: e.g,
            o0: e.o0 as u16,
            action: e.action as u16,
            obs: e.obs as u16,
        }
    }

    /// Checks every reachable edge: the child's label must equal the update
    /// applied to the parent's label, and all labels must be in their alphabet.
    pub fn check_recursive(&self, tree: &FcsTree) -> RecursionReport {
        let mut violations = Vec::new();
        for node in tree.nodes() {
            for (n, l) in self.labels[node.id.idx()].iter().enumerate() {
                for (k, &x) in l.iter().enumerate() {
                    if x >= self.alphabet[node.t - 1][n] {
                        violations.push(EdgeViolation {
                            edge: format!(
                                "`{}` agent {n} history {} outside alphabet",
                                node.key,
                                node.domain(n)[k]
                            ),
                            expected: None,
                            found: x,
                        });
                    }
                }
            }
        }
        let mut checked = 0;
        for_each_edge(tree, |e| {
            checked += 1;
            let want = self.update(&self.edge_key(&e));
            let found = self.labels[e.child.idx()][e.agent][e.child_pos];
            if want != Some(found) {
                violations.push(EdgeViolation {
                    edge: describe(tree, &e),
                    expected: want,
                    found,
                });
            }
        });
        RecursionReport {
            id: self.id.clone(),
            edges_checked: checked,
            violations,
        }
    }
}

fn describe(tree: &FcsTree, e: &Edge) -> String {
    let parent = tree.node(e.parent);
    let child = tree.node(e.child);
    format!(
        "`{}` agent {} history {} --(prescription {}, o0 {}, action {}, obs {})--> `{}` history {}",
        parent.key,
        e.agent,
        parent.domain(e.agent)[e.pos],
        e.g,
        e.o0,
        e.action,
        e.obs,
        child.key,
        child.domain(e.agent)[e.child_pos]
    )
}

/// Measured private-side parameters, scaled (×4 and ×8), with witnesses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrivateMeasure {
    pub eps_p: f64,
    pub delta_p: f64,
    pub eps_witness: Option<Witness>,
    pub delta_witness: Option<Witness>,
}

/// P(s | h0, ẑ) for the label class of FPS position `k` at `node`.
fn class_state_dist(tree: &FcsTree, pc: &PrivateCompression, node: NodeId, k: usize) -> Vec<f64> {
    let n = tree.node(node);
    let z = pc.joint_label(node, &n.fps[k].hist);
    let mut joint = vec![0.0; tree.model().num_states()];
    let mut w = 0.0;
    for f in &n.fps {
        if pc.joint_label(node, &f.hist) == z {
            w += f.p;
            for (x, y) in joint.iter_mut().zip(&f.joint) {
                *x += y;
            }
        }
    }
    joint.iter().map(|x| x / w).collect()
}

fn next_obs(tree: &FcsTree, dist: &[f64], ja: usize) -> Vec<f64> {
    let model = tree.model();
    let mut out = vec![0.0; model.num_joint_obs()];
    for (s, &p) in dist.iter().enumerate() {
        if p != 0.0 {
            for (x, y) in out.iter_mut().zip(model.next_obs_row(s, ja)) {
                *x += p * y;
            }
        }
    }
    out
}

/// Unscaled discrepancies at one (node, FPS, joint action): the reward gap
/// |E[R | h0, h, a] − E[R | h0, ẑ, a]| and, before the horizon, the total
/// variation between next joint observation laws.
pub fn private_discrepancy(
    tree: &FcsTree,
    pc: &PrivateCompression,
    node: NodeId,
    k: usize,
    ja: usize,
) -> (f64, Option<f64>) {
    let model = tree.model();
    let n = tree.node(node);
    let dh = n.fps[k].state_dist();
    let dz = class_state_dist(tree, pc, node, k);
    let rh: f64 = dh.iter().enumerate().map(|(s, p)| p * model.reward(s, ja)).sum();
    let rz: f64 = dz.iter().enumerate().map(|(s, p)| p * model.reward(s, ja)).sum();
    let tv = (n.t < tree.horizon())
        .then(|| tv_distance(&next_obs(tree, &dh, ja), &next_obs(tree, &dz, ja)).unwrap());
    ((rh - rz).abs(), tv)
}

fn better(best: &mut Option<(f64, Witness)>, cand: (f64, Witness)) {
    if best.as_ref().map_or(true, |(v, _)| cand.0 > *v) {
        *best = Some(cand);
    }
}

/// Measures (ε_p, δ_p) exactly over every reachable common state, joint
/// private history, and joint action.
pub fn measure_private(tree: &FcsTree, pc: &PrivateCompression) -> Result<PrivateMeasure> {
    pc.check_recursive(tree).into_result()?;
    let model = tree.model();
    let per_node: Vec<(Option<(f64, Witness)>, Option<(f64, Witness)>)> = tree
        .nodes()
        .par_iter()
        .map(|node| {
            let mut eps: Option<(f64, Witness)> = None;
            let mut delta: Option<(f64, Witness)> = None;
            for (k, f) in node.fps.iter().enumerate() {
                for ja in 0..model.num_joint_actions() {
                    let (r, tv) = private_discrepancy(tree, pc, node.id, k, ja);
                    let wit = |raw| Witness {
                        t: node.t,
                        fcs: node.key.to_string(),
                        detail: node
                            .belief
                            .joint_history(&f.hist)
                            .iter()
                            .map(|h| h.to_string())
                            .collect::<Vec<_>>()
                            .join(","),
                        choice: ja as u64,
                        raw,
                    };
                    better(&mut eps, (r, wit(r)));
                    if let Some(tv) = tv {
                        better(&mut delta, (tv, wit(tv)));
                    }
                }
            }
            (eps, delta)
        })
        .collect();
    let mut eps = None;
    let mut delta = None;
    for (e, d) in per_node {
        if let Some(e) = e {
            better(&mut eps, e);
        }
        if let Some(d) = d {
            better(&mut delta, d);
        }
    }
    Ok(PrivateMeasure {
        eps_p: 4.0 * eps.as_ref().map_or(0.0, |x| x.0),
        delta_p: 8.0 * delta.as_ref().map_or(0.0, |x| x.0),
        eps_witness: eps.map(|x| x.1),
        delta_witness: delta.map(|x| x.1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::histories::FcsTree;
    use crate::model::{coin2, signal2};
    use crate::Budget;

    #[test]
    fn identity_is_recursive_and_exact() {
        for m in [coin2(), signal2()] {
            let tree = FcsTree::build(&m, Budget::default()).unwrap();
            let pc = PrivateCompression::identity(&tree);
            let report = pc.check_recursive(&tree);
            assert!(report.pass());
            assert!(report.edges_checked > 0);
            let meas = measure_private(&tree, &pc).unwrap();
            assert_eq!(meas.eps_p, 0.0);
            assert_eq!(meas.delta_p, 0.0);
        }
    }

    #[test]
    fn swapped_child_labels_are_caught() {
        let m = signal2();
        let tree = FcsTree::build(&m, Budget::default()).unwrap();
        let mut pc = PrivateCompression::identity(&tree);
        let id = tree.level(2)[0];
        let (a, b) = (pc.label(id, 0, 0), pc.label(id, 0, 1));
        pc.set_label(id, 0, 0, b);
        pc.set_label(id, 0, 1, a);
        let report = pc.check_recursive(&tree);
        assert!(!report.pass());
        assert!(report.violations.iter().all(|v| v.edge.contains(&tree.node(id).key.to_string())));
        assert!(matches!(
            measure_private(&tree, &pc),
            Err(Error::NotRecursive { .. })
        ));
    }

    #[test]
    fn constant_compression_loses_reward_information() {
        let m = signal2();
        let tree = FcsTree::build(&m, Budget::default()).unwrap();
        let pc = PrivateCompression::constant(&tree);
        let meas = measure_private(&tree, &pc).unwrap();
        assert!(meas.eps_p > 0.0);
        let w = meas.eps_witness.unwrap();
        let node = tree.lookup(&w.fcs.parse().unwrap()).unwrap();
        let n = tree.node(node);
        let k = n
            .fps
            .iter()
            .position(|f| {
                n.belief
                    .joint_history(&f.hist)
                    .iter()
                    .map(|h| h.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
                    == w.detail
            })
            .unwrap();
        let (r, _) = private_discrepancy(&tree, &pc, node, k, w.choice as usize);
        assert_eq!(r, w.raw);
        assert_eq!(4.0 * r, meas.eps_p);
    }

    #[test]
    fn merging_two_histories_matches_hand_mixture() {
        // Agent 0 forgets its first observation: the two root histories merge
        // and, at t=2, only the latest observation is kept.
        let m = signal2();
        let tree = FcsTree::build(&m, Budget::default()).unwrap();
        let labels: Vec<Vec<Vec<u32>>> = tree
            .nodes()
            .iter()
            .map(|n| {
                let mut l: Vec<Vec<u32>> = n
                    .belief
                    .domains
                    .iter()
                    .map(|d| (0..d.len() as u32).collect())
                    .collect();
                l[0] = if n.t == 1 {
                    vec![0; l[0].len()]
                } else {
                    n.domain(0).iter().map(|h| h.last_obs() as u32).collect()
                };
                l
            })
            .collect();
        let pc = PrivateCompression::from_labels(&tree, "merge", labels).unwrap();
        let meas = measure_private(&tree, &pc).unwrap();

        // Mixtures by hand: group joint histories by (agent-0 label, agent-1 history).
        let mut want_r: f64 = 0.0;
        let mut want_o: f64 = 0.0;
        for n in tree.nodes() {
            let key = |f: &crate::histories::FpsTuple| {
                let h0 = &n.domain(0)[f.hist[0] as usize];
                let l0 = if n.t == 1 { 0 } else { h0.last_obs() };
                (l0, f.hist[1])
            };
            for f in &n.fps {
                let members: Vec<_> = n.fps.iter().filter(|g| key(g) == key(f)).collect();
                let w: f64 = members.iter().map(|g| g.p).sum();
                for ja in 0..4 {
                    let mix: Vec<f64> =
                        (0..2).map(|s| members.iter().map(|g| g.joint[s]).sum::<f64>() / w).collect();
                    let own: Vec<f64> = (0..2).map(|s| f.joint[s] / f.p).collect();
                    let r = |d: &[f64]| (0..2).map(|s| d[s] * m.reward(s, ja)).sum::<f64>();
                    want_r = want_r.max((r(&own) - r(&mix)).abs());
                    if n.t < 2 {
                        let o = |d: &[f64]| {
                            (0..m.num_joint_obs())
                                .map(|jo| {
                                    (0..2)
                                        .map(|s| {
                                            d[s] * (0..2)
                                                .map(|s2| {
                                                    m.transition_row(s, ja)[s2]
                                                        * m.observation_row(s2)[jo]
                                                })
                                                .sum::<f64>()
                                        })
                                        .sum::<f64>()
                                })
                                .collect::<Vec<_>>()
                        };
                        let (a, b) = (o(&own), o(&mix));
                        let tv: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0;
                        want_o = want_o.max(tv);
                    }
                }
            }
        }
        assert!((meas.eps_p - 4.0 * want_r).abs() < 1e-12);
        assert!((meas.delta_p - 8.0 * want_o).abs() < 1e-12);
        assert!(meas.eps_p > 0.0 && meas.delta_p > 0.0);
    }
}
