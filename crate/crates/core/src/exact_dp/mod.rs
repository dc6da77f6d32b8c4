//! The exact coordinator DP over full common states, the supervisor's Q
//! function, and a brute-force policy-enumeration oracle.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::belief::Fingerprint;
use crate::error::{Error, Result};
use crate::histories::{FcsTree, NodeId, Prescription};

mod oracle;

pub use oracle::brute_force_value;

/// Key of a DP table entry.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum StateKey {
    Node(NodeId),
    Belief(Fingerprint),
    Label(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueEntry {
    pub value: f64,
    /// Canonical index of the maximising prescription.
    pub argmax: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
}

/// Per-time tables of values; `levels[t - 1]`. Values past the horizon are 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValueTable {
    pub levels: Vec<BTreeMap<StateKey, ValueEntry>>,
}

impl ValueTable {
    pub fn new(horizon: usize) -> Self {
        ValueTable {
            levels: vec![BTreeMap::new(); horizon],
        }
    }

    pub fn get(&self, t: usize, key: &StateKey) -> Option<&ValueEntry> {
        if t > self.levels.len() {
            return None;
        }
        self.levels[t - 1].get(key)
    }

    /// V_t(key), with V_{T+1} = 0.
    pub fn value(&self, t: usize, key: &StateKey) -> Option<f64> {
        if t > self.levels.len() {
            return Some(0.0);
        }
        self.get(t, key).map(|e| e.value)
    }

    pub fn insert(&mut self, t: usize, key: StateKey, entry: ValueEntry) {
        self.levels[t - 1].insert(key, entry);
    }
}

/// Index of the first maximum; ties go to the smallest index.
pub(crate) fn argmax(q: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &x) in q.iter().enumerate() {
        if x > q[best] {
            best = i;
        }
    }
    (best, q[best])
}

/// The coordinator's prescription choice (index in the node's space) per node.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinatorPolicy {
    choice: Vec<Option<u64>>,
}

impl CoordinatorPolicy {
    pub fn empty(tree: &FcsTree) -> Self {
        CoordinatorPolicy {
            choice: vec![None; tree.len()],
        }
    }
    pub fn set(&mut self, node: NodeId, g: u64) {
        self.choice[node.idx()] = Some(g);
    }
    pub fn get(&self, node: NodeId) -> Option<u64> {
        self.choice[node.idx()]
    }
    pub fn prescription(&self, tree: &FcsTree, node: NodeId) -> Option<Prescription> {
        self.get(node).map(|g| tree.node(node).space.decode(g))
    }
}

/// Result of the exact DP over full common states.
#[derive(Debug, Clone)]
pub struct FcsSolution {
    /// V_t by node.
    pub v: Vec<f64>,
    /// Q_t(node, ·) by node, indexed by prescription.
    pub q: Vec<Vec<f64>>,
    pub policy: CoordinatorPolicy,
    /// Σ_{o0} P(o0) V_1(o0).
    pub j: f64,
}

impl FcsSolution {
    pub fn value(&self, node: NodeId) -> f64 {
        self.v[node.idx()]
    }

    pub fn table(&self, tree: &FcsTree, with_q: bool) -> ValueTable {
        let mut table = ValueTable::new(tree.horizon());
        for node in tree.nodes() {
            table.insert(
                node.t,
                StateKey::Node(node.id),
                ValueEntry {
                    value: self.v[node.id.idx()],
                    argmax: self.policy.get(node.id).unwrap_or(0),
                    q: with_q.then(|| self.q[node.id.idx()].clone()),
                },
            );
        }
        table
    }
}

/// Q_t(h0, γ) = E[R_t + V_{t+1}(h0, γ, O0_{t+1}) | h0, γ] given next-step values.
pub(crate) fn q_value(tree: &FcsTree, node: NodeId, g: u64, v: &[f64]) -> f64 {
    let n = tree.node(node);
    let gamma = n.space.decode(g);
    let mut q = n.immediate_reward(tree.model(), &gamma);
    if n.t < tree.horizon() {
        for b in tree.children(node, g) {
            q += b.p * v[b.child.idx()];
        }
    }
    q
}

/// Backward induction over every reachable common state and prescription.
pub fn solve_fcs_fps(tree: &FcsTree) -> FcsSolution {
    let mut v = vec![0.0; tree.len()];
    let mut q = vec![Vec::new(); tree.len()];
    let mut policy = CoordinatorPolicy::empty(tree);
    for t in (1..=tree.horizon()).rev() {
        let level = tree.level(t);
        let rows: Vec<Vec<f64>> = level
            .par_iter()
            .map(|&id| {
                (0..tree.node(id).space.len() as u64)
                    .map(|g| q_value(tree, id, g, &v))
                    .collect()
            })
            .collect();
        for (&id, row) in level.iter().zip(rows) {
            let (best, val) = argmax(&row);
            v[id.idx()] = val;
            policy.set(id, best as u64);
            q[id.idx()] = row;
        }
    }
    let j = tree.roots().iter().map(|b| b.p * v[b.child.idx()]).sum();
    FcsSolution { v, q, policy, j }
}

/// Value of following `policy` from every node where it is defined.
/// Nodes without a choice (off the policy's support) get `NaN`.
pub fn evaluate_policy(tree: &FcsTree, policy: &CoordinatorPolicy) -> (Vec<f64>, f64) {
    let mut v = vec![f64::NAN; tree.len()];
    for t in (1..=tree.horizon()).rev() {
        for &id in tree.level(t) {
            if let Some(g) = policy.get(id) {
                v[id.idx()] = q_value(tree, id, g, &v);
            }
        }
    }
    let j = tree.roots().iter().map(|b| b.p * v[b.child.idx()]).sum();
    (v, j)
}

/// The supervisor's Q: expected reward-to-go given the common state, the
/// joint private history `hist` (domain positions), and prescription `g`,
/// with `continuation` applied afterwards.
pub fn supervisor_q(
    tree: &FcsTree,
    node: NodeId,
    hist: &[u32],
    g: &Prescription,
    continuation: &CoordinatorPolicy,
) -> Result<f64> {
    let n = tree.node(node);
    n.space.check(g, &n.key.to_string())?;
    let Some(k) = n.fps_position(hist) else {
        return Err(Error::Inadmissible {
            fcs: n.key.to_string(),
            history: format!("{hist:?}"),
        });
    };
    let dist = n.fps[k].state_dist();
    supervisor_rec(tree, node, hist, &dist, g, continuation)
}

/// The supervisor's V under `policy`'s own choice at `node`.
pub fn supervisor_v(
    tree: &FcsTree,
    node: NodeId,
    hist: &[u32],
    policy: &CoordinatorPolicy,
) -> Result<f64> {
    let g = policy
        .prescription(tree, node)
        .ok_or_else(|| Error::Unreachable(tree.node(node).key.to_string()))?;
    supervisor_q(tree, node, hist, &g, policy)
}

fn supervisor_rec(
    tree: &FcsTree,
    node: NodeId,
    hist: &[u32],
    dist: &[f64],
    g: &Prescription,
    policy: &CoordinatorPolicy,
) -> Result<f64> {
    let model = tree.model();
    let n = tree.node(node);
    let ja = g.joint_action(model, hist);
    let mut q: f64 = dist
        .iter()
        .enumerate()
        .map(|(s, &p)| p * model.reward(s, ja))
        .sum();
    if n.t == tree.horizon() {
        return Ok(q);
    }
    let a = g.actions(hist);
    let gi = n.space.index(g);
    let branches = tree.children(node, gi);
    let ns = model.num_states();
    // P(s', o | s, a) aggregated over the current state
    let mut next: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (s, &p) in dist.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (s2, &pt) in model.transition_row(s, ja).iter().enumerate() {
            if pt == 0.0 {
                continue;
            }
            for (jo, &po) in model.observation_row(s2).iter().enumerate() {
                if po > 0.0 {
                    next.entry(jo).or_insert_with(|| vec![0.0; ns])[s2] += p * pt * po;
                }
            }
        }
    }
    for (jo, joint) in next {
        let mass: f64 = joint.iter().sum();
        let o = model.decode_joint_obs(jo);
        let Some(b) = branches.iter().find(|b| b.o0 == o.common) else {
            continue; // branch of negligible probability
        };
        let child = tree.node(b.child);
        let hists: Vec<_> = (0..a.len())
            .map(|m| n.domain(m)[hist[m] as usize].extend(a[m], o.private[m]))
            .collect();
        let Some(h2) = child.positions_of(&hists) else {
            continue;
        };
        if child.fps_position(&h2).is_none() {
            continue;
        }
        let d2: Vec<f64> = joint.iter().map(|x| x / mass).collect();
        let g2 = policy
            .prescription(tree, b.child)
            .ok_or_else(|| Error::Unreachable(child.key.to_string()))?;
        q += mass * supervisor_rec(tree, b.child, &h2, &d2, &g2, policy)?;
    }
    Ok(q)
}

/// Structured solve report: per-time rows plus the overall value.
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub algorithm: String,
    pub j: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub compressions: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<String>,
    pub rows: Vec<SolveRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveRow {
    pub t: usize,
    pub key: String,
    pub value: f64,
    pub argmax: u64,
}

impl SolveReport {
    pub fn table(&self) -> String {
        let mut s = format!("algorithm {}  J = {:.12}\n", self.algorithm, self.j);
        if !self.compressions.is_empty() {
            s += &format!("compressions: {}\n", self.compressions.join(", "));
        }
        if let Some(mu) = &self.mu {
            s += &format!("mu: {mu}\n");
        }
        s += &format!("{:>3}  {:<40} {:>18} {:>10}\n", "t", "state", "value", "argmax");
        for r in &self.rows {
            s += &format!("{:>3}  {:<40} {:>18.12} {:>10}\n", r.t, r.key, r.value, r.argmax);
        }
        s
    }
}

/// Rows of a node-keyed solution in level order.
pub fn node_rows(tree: &FcsTree, v: &[f64], policy: &CoordinatorPolicy) -> Vec<SolveRow> {
    let mut rows = Vec::new();
    for t in 1..=tree.horizon() {
        for &id in tree.level(t) {
            if let Some(g) = policy.get(id) {
                rows.push(SolveRow {
                    t,
                    key: tree.node(id).key.to_string(),
                    value: v[id.idx()],
                    argmax: g,
                });
            }
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::histories::FcsTree;
    use crate::model::{coin2, signal2, DecPomdp};
    use crate::Budget;

    fn one_step() -> DecPomdp {
        DecPomdp::from_json(
            r#"{"num_agents":1,"states":["s"],"actions":[["a0","a1"]],"common_obs":["o"],
            "private_obs":[["p"]],"transition":[[[1.0],[1.0]]],"observation":[[[1.0]]],
            "reward":[[0.0,1.0]],"initial":[1.0],"horizon":1}"#,
        )
        .unwrap()
    }

    #[test]
    fn one_step_max() {
        let m = one_step();
        let tree = FcsTree::build(&m, Budget::default()).unwrap();
        let sol = solve_fcs_fps(&tree);
        assert_eq!(sol.j, 1.0);
        assert_eq!(sol.policy.get(tree.roots()[0].child), Some(1));
        assert_eq!(brute_force_value(&m, Budget::default()).unwrap(), 1.0);
    }

    #[test]
    fn zero_reward() {
        let mut parts = signal2().parts();
        parts.reward.iter_mut().for_each(|r| *r = 0.0);
        parts.reward_bound = None;
        let m = DecPomdp::new(parts).unwrap();
        let tree = FcsTree::build(&m, Budget::default()).unwrap();
        let sol = solve_fcs_fps(&tree);
        assert_eq!(sol.j, 0.0);
        assert!(sol.q.iter().flatten().all(|&x| x == 0.0));
        assert_eq!(brute_force_value(&m, Budget::default()).unwrap(), 0.0);
    }

    #[test]
    fn coin2_matches_oracle() {
        let m = coin2();
        let tree = FcsTree::build(&m, Budget::default()).unwrap();
        let sol = solve_fcs_fps(&tree);
        let bf = brute_force_value(&m, Budget::default()).unwrap();
        assert!((sol.j - bf).abs() < 1e-9, "{} vs {}", sol.j, bf);
    }

    #[test]
    fn coin2_by_hand() {
        // Stationary best response at t=2: heads -> (stay,stay) pays 1, tails ->
        // (flip,flip) pays 0.5; with no information, the coordinator picks the
        // better expected pair at each belief.
        let m = coin2();
        let tree = FcsTree::build(&m, Budget::default()).unwrap();
        let sol = solve_fcs_fps(&tree);
        let r2 = |ph: f64| {
            let pairs = [(1.0, -1.0), (0.0, 0.0), (0.0, 0.0), (-0.5, 0.5)];
            pairs
                .iter()
                .map(|(h, t)| ph * h + (1.0 - ph) * t)
                .fold(f64::MIN, f64::max)
        };
        let moves = [(0.9, 0.1), (0.5, 0.5), (0.5, 0.5), (0.2, 0.8)];
        let rewards = [(1.0, -1.0), (0.0, 0.0), (0.0, 0.0), (-0.5, 0.5)];
        let mut best = f64::MIN;
        for k in 0..4 {
            let (h, t) = rewards[k];
            let now = 0.6 * h + 0.4 * t;
            let (hh, th) = moves[k]; // P(heads' | heads), P(heads' | tails)
            let ph = 0.6 * hh + 0.4 * th;
            best = best.max(now + r2(ph));
        }
        assert!((sol.j - best).abs() < 1e-12, "{} vs {best}", sol.j);
    }

    #[test]
    fn supervisor_expectation_recovers_q() {
        for m in [coin2(), signal2()] {
            let tree = FcsTree::build(&m, Budget::default()).unwrap();
            let sol = solve_fcs_fps(&tree);
            for node in tree.nodes() {
                for g in 0..node.space.len() as u64 {
                    let gamma = node.space.decode(g);
                    let mut total = 0.0;
                    for f in &node.fps {
                        total +=
                            f.p * supervisor_q(&tree, node.id, &f.hist, &gamma, &sol.policy)
                                .unwrap();
                    }
                    let q = sol.q[node.id.idx()][g as usize];
                    assert!((total - q).abs() < 1e-9, "{}: {total} vs {q}", node.key);
                }
            }
        }
    }

    #[test]
    fn supervisor_at_horizon_is_immediate() {
        let m = signal2();
        let tree = FcsTree::build(&m, Budget::default()).unwrap();
        let sol = solve_fcs_fps(&tree);
        let id = tree.level(2)[3];
        let node = tree.node(id);
        let g = node.space.decode(77);
        for f in &node.fps {
            let d = f.state_dist();
            let ja = g.joint_action(&m, &f.hist);
            let want: f64 = (0..2).map(|s| d[s] * m.reward(s, ja)).sum();
            let got = supervisor_q(&tree, id, &f.hist, &g, &sol.policy).unwrap();
            assert!((got - want).abs() < 1e-12);
        }
        assert!(matches!(
            supervisor_q(&tree, id, &[9, 9], &g, &sol.policy),
            Err(Error::Inadmissible { .. })
        ));
    }

    #[test]
    fn optimal_policy_evaluates_to_j() {
        let m = signal2();
        let tree = FcsTree::build(&m, Budget::default()).unwrap();
        let sol = solve_fcs_fps(&tree);
        let (_, j) = evaluate_policy(&tree, &sol.policy);
        assert!((j - sol.j).abs() < 1e-12);
    }

    #[test]
    fn oracle_respects_budget() {
        let m = signal2();
        assert!(brute_force_value(&m, Budget(1000)).unwrap_err().is_budget());
    }
}
