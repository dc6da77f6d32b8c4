//! The coordinator's tree of full common states and prescription spaces.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::belief::{successors, BeliefState};
use crate::compression::PrivateCompression;
use crate::error::{Error, Result};
use crate::model::DecPomdp;
use crate::Budget;

pub mod trajectory;

/// One agent's action-observation history `(o_1, a_1, o_2, ..., o_t)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PrivateHistory(pub Vec<u16>);

impl PrivateHistory {
    pub fn initial(o: usize) -> Self {
        PrivateHistory(vec![o as u16])
    }

    pub fn extend(&self, a: usize, o: usize) -> Self {
        let mut v = Vec::with_capacity(self.0.len() + 2);
        v.extend_from_slice(&self.0);
        v.push(a as u16);
        v.push(o as u16);
        PrivateHistory(v)
    }

    pub fn time(&self) -> usize {
        (self.0.len() + 1) / 2
    }

    /// The last action taken, if any.
    pub fn last_action(&self) -> Option<usize> {
        (self.0.len() >= 3).then(|| self.0[self.0.len() - 2] as usize)
    }

    pub fn last_obs(&self) -> usize {
        self.0[self.0.len() - 1] as usize
    }

    pub fn prefix(&self) -> Option<PrivateHistory> {
        (self.0.len() >= 3).then(|| PrivateHistory(self.0[..self.0.len() - 2].to_vec()))
    }
}

impl fmt::Display for PrivateHistory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_dotted(f, &self.0)
    }
}

impl FromStr for PrivateHistory {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let v = parse_dotted(s, "private history")?;
        if v.len() % 2 == 0 {
            return Err(Error::Field {
                field: "history".into(),
                message: format!("`{s}` has even length"),
            });
        }
        Ok(PrivateHistory(v.into_iter().map(|x| x as u16).collect()))
    }
}

fn write_dotted<T: fmt::Display>(f: &mut fmt::Formatter<'_>, xs: &[T]) -> fmt::Result {
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            f.write_str(".")?;
        }
        write!(f, "{x}")?;
    }
    Ok(())
}

fn parse_dotted(s: &str, what: &str) -> Result<Vec<u64>> {
    s.split('.')
        .map(|p| {
            p.parse::<u64>().map_err(|_| Error::Field {
                field: what.into(),
                message: format!("`{s}` is not a dotted index sequence"),
            })
        })
        .collect()
}

/// Full common state `(o0_1, g_1, o0_2, ..., o0_t)` as a flat sequence of
/// common observations interleaved with prescription indices. Each
/// prescription index is relative to the parent's prescription space.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FcsKey(pub Vec<u64>);

impl FcsKey {
    pub fn root(o0: usize) -> Self {
        FcsKey(vec![o0 as u64])
    }
    pub fn child(&self, gamma: u64, o0: usize) -> Self {
        let mut v = self.0.clone();
        v.push(gamma);
        v.push(o0 as u64);
        FcsKey(v)
    }
    pub fn time(&self) -> usize {
        (self.0.len() + 1) / 2
    }
    pub fn common_obs(&self, t: usize) -> usize {
        self.0[2 * (t - 1)] as usize
    }
    pub fn prescription(&self, t: usize) -> u64 {
        self.0[2 * t - 1]
    }
}

impl fmt::Display for FcsKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_dotted(f, &self.0)
    }
}

impl FromStr for FcsKey {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let v = parse_dotted(s, "common state")?;
        if v.len() % 2 == 0 {
            return Err(Error::Field {
                field: "fcs".into(),
                message: format!("`{s}` has even length"),
            });
        }
        Ok(FcsKey(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct NodeId(pub u32);

impl NodeId {
    /// Marker for nodes built outside a tree.
    pub const DETACHED: NodeId = NodeId(u32::MAX);
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

/// A joint private history with its conditional weight under a common state.
#[derive(Debug, Clone, PartialEq)]
pub struct FpsTuple {
    /// Position of each agent's history in the node's per-agent domain.
    pub hist: Vec<u32>,
    /// P(h | h0).
    pub p: f64,
    /// P(s, h | h0) for each state s; sums to `p`.
    pub joint: Vec<f64>,
}

impl FpsTuple {
    /// P(s | h0, h).
    pub fn state_dist(&self) -> Vec<f64> {
        self.joint.iter().map(|x| x / self.p).collect()
    }
}

/// A prescription: for each agent, an action per position of its domain.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Prescription {
    pub tables: Vec<Vec<u16>>,
}

impl Prescription {
    /// Joint action for the joint domain position `h`.
    pub fn joint_action(&self, model: &DecPomdp, h: &[u32]) -> usize {
        self.tables
            .iter()
            .zip(h)
            .enumerate()
            .fold(0, |acc, (n, (tab, &k))| {
                acc * model.num_actions(n) + tab[k as usize] as usize
            })
    }

    pub fn actions(&self, h: &[u32]) -> Vec<usize> {
        self.tables
            .iter()
            .zip(h)
            .map(|(tab, &k)| tab[k as usize] as usize)
            .collect()
    }
}

/// All prescriptions over per-agent domains of the given sizes, in canonical
/// (lexicographic: agent, then domain position, then action) order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrescriptionSpace {
    pub radices: Vec<usize>,
    pub sizes: Vec<usize>,
}

impl PrescriptionSpace {
    pub fn new(model: &DecPomdp, sizes: Vec<usize>) -> Self {
        PrescriptionSpace {
            radices: (0..model.num_agents()).map(|n| model.num_actions(n)).collect(),
            sizes,
        }
    }

    /// Number of prescriptions; saturates rather than overflowing.
    pub fn len(&self) -> u128 {
        let mut total: u128 = 1;
        for (&r, &k) in self.radices.iter().zip(&self.sizes) {
            for _ in 0..k {
                total = total.saturating_mul(r as u128);
            }
        }
        total
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.iter().any(|&k| k == 0)
    }

    pub fn decode(&self, mut index: u64) -> Prescription {
        let mut tables: Vec<Vec<u16>> = self.sizes.iter().map(|&k| vec![0; k]).collect();
        for n in (0..tables.len()).rev() {
            let r = self.radices[n] as u64;
            for slot in tables[n].iter_mut().rev() {
                *slot = (index % r) as u16;
                index /= r;
            }
        }
        Prescription { tables }
    }

    pub fn index(&self, g: &Prescription) -> u64 {
        let mut idx: u64 = 0;
        for (n, tab) in g.tables.iter().enumerate() {
            for &a in tab {
                idx = idx * self.radices[n] as u64 + a as u64;
            }
        }
        idx
    }

    /// Checks shape and action ranges of `g` against this space.
    pub fn check(&self, g: &Prescription, locus: &str) -> Result<()> {
        let ok = g.tables.len() == self.sizes.len()
            && g.tables.iter().zip(&self.sizes).all(|(t, &k)| t.len() == k)
            && g
                .tables
                .iter()
                .zip(&self.radices)
                .all(|(t, &r)| t.iter().all(|&a| (a as usize) < r));
        if ok {
            Ok(())
        } else {
            Err(Error::DomainMismatch {
                locus: locus.to_string(),
                message: format!(
                    "expected domain sizes {:?}, got {:?}",
                    self.sizes,
                    g.tables.iter().map(Vec::len).collect::<Vec<_>>()
                ),
            })
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Prescription> + '_ {
        let len = self.len();
        (0..len as u64).map(move |i| self.decode(i))
    }
}

/// A node of the full-common-state tree, with its conditional belief.
#[derive(Debug, Clone)]
pub struct FcsNode {
    pub id: NodeId,
    pub t: usize,
    pub key: FcsKey,
    pub parent: Option<NodeId>,
    pub belief: BeliefState,
    pub fps: Vec<FpsTuple>,
    pub space: PrescriptionSpace,
    /// Σ_s P(s, h | h0) r(s, ja), flattened `[fps][ja]`.
    fps_reward: Vec<f64>,
    n_joint_actions: usize,
}

impl FcsNode {
    pub(crate) fn new(
        model: &DecPomdp,
        id: NodeId,
        key: FcsKey,
        parent: Option<NodeId>,
        belief: BeliefState,
    ) -> Self {
        let fps = belief.fps(model.num_states());
        let na = model.num_joint_actions();
        let mut fps_reward = vec![0.0; fps.len() * na];
        for (k, f) in fps.iter().enumerate() {
            for ja in 0..na {
                fps_reward[k * na + ja] = f
                    .joint
                    .iter()
                    .enumerate()
                    .map(|(s, &p)| p * model.reward(s, ja))
                    .sum();
            }
        }
        let space = PrescriptionSpace::new(model, belief.domains.iter().map(Vec::len).collect());
        FcsNode {
            id,
            t: key.time(),
            key,
            parent,
            belief,
            fps,
            space,
            fps_reward,
            n_joint_actions: na,
        }
    }

    /// Σ_s P(s, h | h0) r(s, ja) for FPS position `k`.
    pub fn fps_reward(&self, k: usize, ja: usize) -> f64 {
        self.fps_reward[k * self.n_joint_actions + ja]
    }

    /// E[R_t | h0, γ].
    pub fn immediate_reward(&self, model: &DecPomdp, g: &Prescription) -> f64 {
        self.fps
            .iter()
            .enumerate()
            .map(|(k, f)| self.fps_reward(k, g.joint_action(model, &f.hist)))
            .sum()
    }

    pub fn domain(&self, agent: usize) -> &[PrivateHistory] {
        &self.belief.domains[agent]
    }

    /// Position of the joint history `h` among this node's FPS tuples.
    pub fn fps_position(&self, h: &[u32]) -> Option<usize> {
        self.fps.binary_search_by(|f| f.hist.as_slice().cmp(h)).ok()
    }

    /// Domain positions of concrete private histories, if all are present.
    pub fn positions_of(&self, hists: &[PrivateHistory]) -> Option<Vec<u32>> {
        hists
            .iter()
            .enumerate()
            .map(|(n, h)| {
                self.belief.domains[n]
                    .binary_search(h)
                    .ok()
                    .map(|k| k as u32)
            })
            .collect()
    }
}

/// A branch of the tree: common observation, child, and its probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub o0: usize,
    pub child: NodeId,
    pub p: f64,
}

/// The fully expanded tree of reachable full common states.
pub struct FcsTree<'m> {
    model: &'m DecPomdp,
    nodes: Vec<FcsNode>,
    levels: Vec<Vec<NodeId>>,
    roots: Vec<Branch>,
    /// `[node][γ]`, empty at the horizon.
    children: Vec<Vec<Vec<Branch>>>,
    index: HashMap<FcsKey, NodeId>,
}

/// One row of a level dump.
#[derive(Debug, Clone, Serialize)]
pub struct LevelRow {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub fcs: String,
    pub reachable_fps: usize,
}

impl<'m> FcsTree<'m> {
    /// Expands every reachable common state under every prescription.
    pub fn build(model: &'m DecPomdp, budget: Budget) -> Result<Self> {
        let mut tree = FcsTree {
            model,
            nodes: Vec::new(),
            levels: vec![Vec::new(); model.horizon()],
            roots: Vec::new(),
            children: Vec::new(),
            index: HashMap::new(),
        };
        for (o0, p, belief) in BeliefState::initial(model) {
            let id = tree.insert(FcsKey::root(o0), None, belief);
            tree.roots.push(Branch { o0, child: id, p });
        }
        let mut spent: u128 = 0;
        for t in 1..model.horizon() {
            let level = tree.levels[t - 1].clone();
            for &id in &level {
                let node = &tree.nodes[id.idx()];
                spent += node.space.len();
                budget.check(|| node.key.to_string(), spent)?;
            }
            let expanded: Vec<Vec<Vec<(usize, f64, BeliefState)>>> = level
                .par_iter()
                .map(|&id| {
                    let node = &tree.nodes[id.idx()];
                    node.space
                        .iter()
                        .map(|g| successors(model, &node.belief, &g))
                        .collect()
                })
                .collect();
            for (&id, per_gamma) in level.iter().zip(expanded) {
                let mut rows = Vec::with_capacity(per_gamma.len());
                for (g, succ) in per_gamma.into_iter().enumerate() {
                    let mut row = Vec::with_capacity(succ.len());
                    for (o0, p, belief) in succ {
                        let key = tree.nodes[id.idx()].key.child(g as u64, o0);
                        let child = tree.insert(key, Some(id), belief);
                        row.push(Branch { o0, child, p });
                    }
                    rows.push(row);
                }
                tree.children[id.idx()] = rows;
            }
        }
        Ok(tree)
    }

    fn insert(&mut self, key: FcsKey, parent: Option<NodeId>, belief: BeliefState) -> NodeId {
        if let Some(&id) = self.index.get(&key) {
            return id;
        }
        let id = NodeId(self.nodes.len() as u32);
        let node = FcsNode::new(self.model, id, key.clone(), parent, belief);
        self.levels[node.t - 1].push(id);
        self.nodes.push(node);
        self.children.push(Vec::new());
        self.index.insert(key, id);
        id
    }

    pub fn model(&self) -> &'m DecPomdp {
        self.model
    }
    pub fn horizon(&self) -> usize {
        self.model.horizon()
    }
    pub fn node(&self, id: NodeId) -> &FcsNode {
        &self.nodes[id.idx()]
    }
    pub fn nodes(&self) -> &[FcsNode] {
        &self.nodes
    }
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
    /// Nodes at time `t` (1-based) in canonical order.
    pub fn level(&self, t: usize) -> &[NodeId] {
        &self.levels[t - 1]
    }
    pub fn roots(&self) -> &[Branch] {
        &self.roots
    }
    /// Branches after prescription index `g` at `id`.
    pub fn children(&self, id: NodeId, g: u64) -> &[Branch] {
        &self.children[id.idx()][g as usize]
    }
    pub fn lookup(&self, key: &FcsKey) -> Option<NodeId> {
        self.index.get(key).copied()
    }

    pub fn level_report(&self, t: usize) -> Vec<LevelRow> {
        self.level(t)
            .iter()
            .map(|&id| {
                let n = self.node(id);
                LevelRow {
                    id,
                    parent: n.parent,
                    fcs: n.key.to_string(),
                    reachable_fps: n.fps.len(),
                }
            })
            .collect()
    }
}

/// Admissible joint private histories under `fcs`, by forward enumeration of
/// joint trajectories consistent with its embedded observations and
/// prescriptions.
pub fn reachable_fps(model: &DecPomdp, fcs: &FcsNode) -> Result<Vec<FpsTuple>> {
    let belief = trajectory::conditional(model, &fcs.key)?;
    Ok(belief.fps(model.num_states()))
}

/// What a prescription is defined over.
pub enum Domain<'a> {
    Fps,
    Labels(&'a PrivateCompression),
}

/// The ordered prescription list at `fcs`.
pub fn enumerate_prescriptions(
    model: &DecPomdp,
    fcs: &FcsNode,
    domain: Domain<'_>,
    budget: Budget,
) -> Result<Vec<Prescription>> {
    let sizes = match domain {
        Domain::Fps => fcs.belief.domains.iter().map(Vec::len).collect(),
        Domain::Labels(pc) => pc
            .label_domain(fcs.id)
            .iter()
            .map(Vec::len)
            .collect::<Vec<_>>(),
    };
    let space = PrescriptionSpace::new(model, sizes);
    if space.is_empty() {
        return Err(Error::Unreachable(fcs.key.to_string()));
    }
    budget.check(|| fcs.key.to_string(), space.len())?;
    Ok(space.iter().collect())
}

/// One-step growth of a detached node: `(o0, child, P(o0 | fcs, γ))`.
pub fn expand_fcs(
    model: &DecPomdp,
    fcs: &FcsNode,
    g: &Prescription,
) -> Result<Vec<(usize, FcsNode, f64)>> {
    fcs.space.check(g, &fcs.key.to_string())?;
    if fcs.t >= model.horizon() {
        return Err(Error::DomainMismatch {
            locus: fcs.key.to_string(),
            message: "node is at the horizon".into(),
        });
    }
    let gi = fcs.space.index(g);
    Ok(successors(model, &fcs.belief, g)
        .into_iter()
        .map(|(o0, p, belief)| {
            let key = fcs.key.child(gi, o0);
            let child = FcsNode::new(model, NodeId::DETACHED, key, Some(fcs.id), belief);
            (o0, child, p)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{coin2, signal2, DecPomdp};

    #[test]
    fn prescription_counting() {
        let m = signal2();
        let space = PrescriptionSpace::new(&m, vec![2, 2]);
        assert_eq!(space.len(), 16);
        let one = DecPomdp::from_json(
            r#"{"num_agents":1,"states":["s"],"actions":[["a","b"]],"common_obs":["o"],
            "private_obs":[["p"]],"transition":[[[1.0],[1.0]]],"observation":[[[1.0]]],
            "reward":[[0.0,1.0]],"initial":[1.0],"horizon":1}"#,
        )
        .unwrap();
        assert_eq!(PrescriptionSpace::new(&one, vec![1]).len(), 2);
    }

    #[test]
    fn canonical_order_is_lexicographic() {
        let m = signal2();
        let space = PrescriptionSpace::new(&m, vec![2, 1]);
        let all: Vec<_> = space.iter().collect();
        assert_eq!(all[0].tables, vec![vec![0, 0], vec![0]]);
        assert_eq!(all[1].tables, vec![vec![0, 0], vec![1]]);
        assert_eq!(all[2].tables, vec![vec![0, 1], vec![0]]);
        assert_eq!(all[7].tables, vec![vec![1, 1], vec![1]]);
        for (i, g) in all.iter().enumerate() {
            assert_eq!(space.index(g), i as u64);
        }
    }

    #[test]
    fn dotted_keys_round_trip() {
        let k: FcsKey = "0.13.1".parse().unwrap();
        assert_eq!(k.time(), 2);
        assert_eq!(k.prescription(1), 13);
        assert_eq!(k.to_string(), "0.13.1");
        assert!("0.1".parse::<FcsKey>().is_err());
        let h: PrivateHistory = "1.0.1".parse().unwrap();
        assert_eq!(h.prefix().unwrap().to_string(), "1");
        assert_eq!(h.last_action(), Some(0));
    }

    #[test]
    fn roots_cover_private_observations() {
        let m = signal2();
        let tree = FcsTree::build(&m, Budget::default()).unwrap();
        assert_eq!(tree.roots().len(), 2);
        for b in tree.roots() {
            let node = tree.node(b.child);
            assert_eq!(node.fps.len(), 4);
            let total: f64 = node.fps.iter().map(|f| f.p).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
        let p: f64 = tree.roots().iter().map(|b| b.p).sum();
        assert!((p - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_private_symbol_gives_one_fps() {
        let m = coin2();
        let tree = FcsTree::build(&m, Budget::default()).unwrap();
        for node in tree.nodes() {
            assert_eq!(node.fps.len(), 1);
            assert!((node.fps[0].p - 1.0).abs() < 1e-12);
        }
        // |O0| = 1: exactly one child per prescription
        let root = tree.roots()[0].child;
        for g in 0..tree.node(root).space.len() as u64 {
            let ch = tree.children(root, g);
            assert_eq!(ch.len(), 1);
            assert!((ch[0].p - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn branch_probabilities_sum_to_one() {
        let m = signal2();
        let tree = FcsTree::build(&m, Budget::default()).unwrap();
        for &id in tree.level(1) {
            for g in 0..tree.node(id).space.len() as u64 {
                let s: f64 = tree.children(id, g).iter().map(|b| b.p).sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn histories_are_prefix_closed_and_action_determined() {
        let m = signal2();
        let tree = FcsTree::build(&m, Budget::default()).unwrap();
        for &id in tree.level(2) {
            let node = tree.node(id);
            let parent = tree.node(node.parent.unwrap());
            let g = parent.space.decode(node.key.prescription(1));
            for n in 0..2 {
                for h in node.domain(n) {
                    let pre = h.prefix().unwrap();
                    let k = parent.domain(n).binary_search(&pre).expect("prefix reachable");
                    assert_eq!(h.last_action(), Some(g.tables[n][k] as usize));
                }
                // actions are determined, so observation sequences index histories
                assert!(node.domain(n).len() <= 4);
            }
        }
    }

    #[test]
    fn budget_names_the_node() {
        let m = signal2();
        let err = FcsTree::build(&m, Budget(10)).err().unwrap();
        match err {
            Error::Budget { locus, .. } => assert_eq!(locus, "0"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn expand_rejects_wrong_domain() {
        let m = signal2();
        let tree = FcsTree::build(&m, Budget::default()).unwrap();
        let root = tree.node(tree.roots()[0].child);
        let bad = Prescription {
            tables: vec![vec![0], vec![0, 0]],
        };
        assert!(matches!(
            expand_fcs(&m, root, &bad),
            Err(Error::DomainMismatch { .. })
        ));
        let g = root.space.decode(5);
        let out = expand_fcs(&m, root, &g).unwrap();
        let tree_children = tree.children(root.id, 5);
        assert_eq!(out.len(), tree_children.len());
        for ((o0, child, p), b) in out.iter().zip(tree_children) {
            assert_eq!(*o0, b.o0);
            assert_eq!(*p, b.p);
            assert_eq!(child.key, tree.node(b.child).key);
        }
    }
}
