//! Construction of private compressions by merging histories within each
//! common state and then splitting blocks until the recursive update is
//! well defined.
//!
//! Merging compares two histories of one agent *pointwise*: for every
//! completion by the other agents' histories, the one-step reward and next
//! observation statistics of the two joint histories must be close (and both
//! completions admissible, or neither). Blocks are formed by complete-linkage
//! first-fit in canonical order, so every pair inside a block is close.
//! Closure splitting works backwards from the horizon: two histories may
//! share a label only if, under every prescription giving them the same
//! action, each observation leads to equally labelled successors.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;

use super::{tv_distance, PrivateCompression};
use crate::histories::{FcsNode, FcsTree, Prescription};

/// Slack added to merge tolerances so floating-point round-off does not
/// split statistically identical histories.
pub const MERGE_SLACK: f64 = 1e-11;

/// Conditional one-step statistics per joint FPS at one node.
struct NodeStats {
    /// `[fps][ja]`: E[R | h0, h, a]
    reward: Vec<Vec<f64>>,
    /// `[fps][ja]`: P(O_{t+1} | h0, h, a); empty at the horizon
    obs: Vec<Vec<Vec<f64>>>,
}

fn node_stats(tree: &FcsTree, node: &FcsNode) -> NodeStats {
    let model = tree.model();
    let na = model.num_joint_actions();
    let last = node.t == tree.horizon();
    let mut reward = Vec::with_capacity(node.fps.len());
    let mut obs = Vec::new();
    for f in &node.fps {
        let d = f.state_dist();
        reward.push(
            (0..na)
                .map(|ja| d.iter().enumerate().map(|(s, p)| p * model.reward(s, ja)).sum())
                .collect(),
        );
        if !last {
            obs.push(
                (0..na)
                    .map(|ja| {
                        let mut o = vec![0.0; model.num_joint_obs()];
                        for (s, &p) in d.iter().enumerate() {
                            for (x, y) in o.iter_mut().zip(model.next_obs_row(s, ja)) {
                                *x += p * y;
                            }
                        }
                        o
                    })
                    .collect(),
            );
        }
    }
    NodeStats { reward, obs }
}

/// For each domain position of `agent`, the FPS index of each completion.
fn completions(node: &FcsNode, agent: usize) -> Vec<BTreeMap<Vec<u32>, usize>> {
    let mut out = vec![BTreeMap::new(); node.domain(agent).len()];
    for (i, f) in node.fps.iter().enumerate() {
        let mut others = f.hist.clone();
        others.remove(agent);
        out[f.hist[agent] as usize].insert(others, i);
    }
    out
}

/// Pointwise (reward, observation) discrepancy between two histories.
fn pointwise(
    stats: &NodeStats,
    comp: &[BTreeMap<Vec<u32>, usize>],
    k1: usize,
    k2: usize,
) -> (f64, f64) {
    let (a, b) = (&comp[k1], &comp[k2]);
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        return (f64::INFINITY, f64::INFINITY);
    }
    let mut rd = 0.0f64;
    let mut od = 0.0f64;
    for (i, j) in a.values().zip(b.values()) {
        for (x, y) in stats.reward[*i].iter().zip(&stats.reward[*j]) {
            rd = rd.max((x - y).abs());
        }
        if !stats.obs.is_empty() {
            for (x, y) in stats.obs[*i].iter().zip(&stats.obs[*j]) {
                od = od.max(tv_distance(x, y).unwrap());
            }
        }
    }
    (rd, od)
}

/// Complete-linkage first-fit grouping of `items` under `compatible`.
fn first_fit(items: &[usize], mut compatible: impl FnMut(usize, usize) -> bool) -> Vec<Vec<usize>> {
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    for &k in items {
        match blocks
            .iter_mut()
            .find(|b| b.iter().all(|&m| compatible(m, k)))
        {
            Some(b) => b.push(k),
            None => blocks.push(vec![k]),
        }
    }
    blocks
}

fn tolerance_blocks(tree: &FcsTree, node: &FcsNode, tol_r: f64, tol_o: f64) -> Vec<Vec<Vec<usize>>> {
    let stats = node_stats(tree, node);
    (0..tree.model().num_agents())
        .map(|n| {
            let comp = completions(node, n);
            let items: Vec<usize> = (0..node.domain(n).len()).collect();
            first_fit(&items, |a, b| {
                let (rd, od) = pointwise(&stats, &comp, a, b);
                rd <= tol_r + MERGE_SLACK && od <= tol_o + MERGE_SLACK
            })
        })
        .collect()
}

/// Splits `blocks` of `agent` at `node` so that the update is well defined,
/// given final labels at the next level.
fn close_blocks(
    tree: &FcsTree,
    node: &FcsNode,
    agent: usize,
    gammas: &[Prescription],
    labels: &[Vec<Vec<u32>>],
    blocks: Vec<Vec<usize>>,
) -> Vec<Vec<usize>> {
    let model = tree.model();
    let dom = node.domain(agent);
    let succ = |k: usize, _g: usize, child: &FcsNode, a: usize, o: usize| -> Option<u32> {
        child
            .domain(agent)
            .binary_search(&dom[k].extend(a, o))
            .ok()
            .map(|k2| labels[child.id.idx()][agent][k2])
    };
    let compatible = |k1: usize, k2: usize| -> bool {
        for (g, gamma) in gammas.iter().enumerate() {
            let a = gamma.tables[agent][k1] as usize;
            if gamma.tables[agent][k2] as usize != a {
                continue;
            }
            for b in tree.children(node.id, g as u64) {
                let child = tree.node(b.child);
                for o in 0..model.num_private_obs(agent) {
                    if let (Some(x), Some(y)) = (succ(k1, g, child, a, o), succ(k2, g, child, a, o)) {
                        if x != y {
                            return false;
                        }
                    }
                }
            }
        }
        true
    };
    blocks
        .into_iter()
        .flat_map(|b| first_fit(&b, &compatible))
        .collect()
}

fn blocks_to_labels(size: usize, mut blocks: Vec<Vec<usize>>) -> Vec<u32> {
    blocks.iter_mut().for_each(|b| b.sort_unstable());
    blocks.sort_by_key(|b| b[0]);
    let mut out = vec![0; size];
    for (l, b) in blocks.iter().enumerate() {
        for &k in b {
            out[k] = l as u32;
        }
    }
    out
}

/// Refines per-node initial blocks (from `initial(node)`, one partition per
/// agent) into a recursive compression, working backwards from the horizon.
pub fn refine_private<F>(tree: &FcsTree, id: impl Into<String>, initial: F) -> PrivateCompression
where
    F: Fn(&FcsNode) -> Vec<Vec<Vec<usize>>> + Sync,
{
    let n_agents = tree.model().num_agents();
    let mut labels: Vec<Vec<Vec<u32>>> = vec![Vec::new(); tree.len()];
    for t in (1..=tree.horizon()).rev() {
        let level = tree.level(t);
        let done = &labels;
        let computed: Vec<Vec<Vec<u32>>> = level
            .par_iter()
            .map(|&nid| {
                let node = tree.node(nid);
                let init = initial(node);
                let gammas: Vec<Prescription> = if t < tree.horizon() {
                    node.space.iter().collect()
                } else {
                    Vec::new()
                };
                (0..n_agents)
                    .map(|n| {
                        let blocks = if t < tree.horizon() {
                            close_blocks(tree, node, n, &gammas, done, init[n].clone())
                        } else {
                            init[n].clone()
                        };
                        blocks_to_labels(node.domain(n).len(), blocks)
                    })
                    .collect()
            })
            .collect();
        for (&nid, l) in level.iter().zip(computed) {
            labels[nid.idx()] = l;
        }
    }
    PrivateCompression::from_labels(tree, id, labels).expect("refinement output is closed")
}

/// The lossless compression: merge only statistically identical histories.
pub fn build_exact_private(tree: &FcsTree) -> PrivateCompression {
    refine_private(tree, "exact", |node| tolerance_blocks(tree, node, 0.0, 0.0))
}

/// Lossy merging within the given reward and observation tolerances.
pub fn build_greedy(tree: &FcsTree, tol_r: f64, tol_o: f64) -> PrivateCompression {
    refine_private(tree, format!("greedy(tol_r={tol_r},tol_o={tol_o})"), |node| {
        tolerance_blocks(tree, node, tol_r, tol_o)
    })
}

/// Random merges (each history joins a random earlier block with
/// probability `p_merge`), followed by closure splitting.
pub fn random_private<R: Rng>(
    tree: &FcsTree,
    rng: &mut R,
    p_merge: f64,
    id: impl Into<String>,
) -> PrivateCompression {
    let n_agents = tree.model().num_agents();
    let initial: Vec<Vec<Vec<Vec<usize>>>> = tree
        .nodes()
        .iter()
        .map(|node| {
            (0..n_agents)
                .map(|n| {
                    let mut blocks: Vec<Vec<usize>> = Vec::new();
                    for k in 0..node.domain(n).len() {
                        if !blocks.is_empty() && rng.gen_bool(p_merge) {
                            let b = rng.gen_range(0..blocks.len());
                            blocks[b].push(k);
                        } else {
                            blocks.push(vec![k]);
                        }
                    }
                    blocks
                })
                .collect()
        })
        .collect();
    refine_private(tree, id, |node| initial[node.id.idx()].clone())
}
