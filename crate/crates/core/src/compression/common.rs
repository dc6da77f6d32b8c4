use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{tv_distance, EdgeViolation, PrivateCompression, RecursionReport, Witness};
use crate::approx_dp::{AspsTree, MU_UNIFORM};
use crate::belief::{label_fingerprint, Fingerprint};
use crate::error::{Error, Result};
use crate::histories::{FcsTree, NodeId, PrescriptionSpace};
use crate::Budget;

/// Argument tuple of the common update: time, label, label-domain
/// prescription index, next common observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct CommonUpdateKey {
    pub t: u16,
    pub label: u32,
    pub prescription: u64,
    pub o0: u16,
}

/// Labels for the common states reachable under extended label-based
/// prescriptions, with the update table reproducing them.
#[derive(Debug, Clone, PartialEq)]
pub struct CommonCompression {
    pub id: String,
    /// Reference measure used for conditioning on a label.
    pub mu: String,
    labels: BTreeMap<NodeId, u32>,
    /// `[t - 1]`
    alphabet: Vec<u32>,
    updates: BTreeMap<CommonUpdateKey, u32>,
}

/// One preimage node of a label, with its μ-weight within the class and
/// the position of each of its private labels in the class domain.
#[derive(Debug, Clone)]
pub struct Member {
    pub id: NodeId,
    pub w: f64,
    map: Vec<Vec<usize>>,
}

/// All nodes sharing a common label at one time, and the label-based
/// prescriptions available there (over the union of their label domains).
#[derive(Debug, Clone)]
pub struct LabelClass {
    pub t: usize,
    pub label: u32,
    pub members: Vec<Member>,
    pub domain: Vec<Vec<u32>>,
    pub space: PrescriptionSpace,
}

/// Immediate reward and next-common-observation law.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub reward: f64,
    /// `(o0, probability)`, only positive branches, ascending o0.
    pub common_obs: Vec<(usize, f64)>,
}

impl LabelClass {
    /// FPS prescription index at member `m` extending λ̂ number `l`.
    pub fn member_prescription(&self, tree: &FcsTree, m: usize, l: u64) -> u64 {
        let lambda = self.space.decode(l);
        let member = &self.members[m];
        let tables = member
            .map
            .iter()
            .enumerate()
            .map(|(n, row)| row.iter().map(|&i| lambda.tables[n][i]).collect())
            .collect();
        tree.node(member.id)
            .space
            .index(&crate::histories::Prescription { tables })
    }

    pub fn member_outcome(&self, tree: &FcsTree, m: usize, l: u64) -> Outcome {
        let id = self.members[m].id;
        let g = self.member_prescription(tree, m, l);
        let node = tree.node(id);
        let reward = node.immediate_reward(tree.model(), &node.space.decode(g));
        let common_obs = if self.t < tree.horizon() {
            tree.children(id, g).iter().map(|b| (b.o0, b.p)).collect()
        } else {
            Vec::new()
        };
        Outcome { reward, common_obs }
    }

    /// The μ-mixture of member outcomes: the law given only the label.
    pub fn outcomes(&self, tree: &FcsTree, l: u64) -> Outcome {
        let outs: Vec<Outcome> = (0..self.members.len()).map(|m| self.member_outcome(tree, m, l)).collect();
        self.mixture(&outs)
    }

    fn mixture(&self, outs: &[Outcome]) -> Outcome {
        let mut reward = 0.0;
        let mut obs: BTreeMap<usize, f64> = BTreeMap::new();
        for (member, out) in self.members.iter().zip(outs) {
            reward += member.w * out.reward;
            for &(o0, p) in &out.common_obs {
                *obs.entry(o0).or_default() += member.w * p;
            }
        }
        Outcome {
            reward,
            common_obs: obs.into_iter().collect(),
        }
    }

    /// Discrepancies of every member under λ̂ number `l` (see
    /// [`common_discrepancy`]).
    pub fn discrepancies(&self, tree: &FcsTree, l: u64) -> Vec<(f64, Option<f64>)> {
        let outs: Vec<Outcome> = (0..self.members.len()).map(|m| self.member_outcome(tree, m, l)).collect();
        let mix = self.mixture(&outs);
        let n0 = tree.model().num_common_obs();
        let dense = |v: &[(usize, f64)]| {
            let mut d = vec![0.0; n0];
            for &(o, p) in v {
                d[o] += p;
            }
            d
        };
        let mix_obs = dense(&mix.common_obs);
        outs.iter()
            .map(|own| {
                let tv = (self.t < tree.horizon())
                    .then(|| tv_distance(&dense(&own.common_obs), &mix_obs).unwrap());
                ((own.reward - mix.reward).abs(), tv)
            })
            .collect()
    }
}

fn classes_of(
    tree: &FcsTree,
    pc: &PrivateCompression,
    asps: &AspsTree,
    t: usize,
    labels: &BTreeMap<NodeId, u32>,
) -> Vec<LabelClass> {
    let n_agents = tree.model().num_agents();
    let mut groups: BTreeMap<u32, Vec<NodeId>> = BTreeMap::new();
    for &id in asps.level(t) {
        if let Some(&z) = labels.get(&id) {
            groups.entry(z).or_default().push(id);
        }
    }
    groups
        .into_iter()
        .map(|(label, ids)| {
            let mut domain = vec![Vec::new(); n_agents];
            for &id in &ids {
                for (n, d) in pc.label_domain(id).into_iter().enumerate() {
                    domain[n].extend(d);
                }
            }
            for d in &mut domain {
                d.sort_unstable();
                d.dedup();
            }
            let total: f64 = ids.iter().map(|id| asps.mu[id.idx()]).sum();
            let members = ids
                .iter()
                .map(|&id| Member {
                    id,
                    w: asps.mu[id.idx()] / total,
                    map: pc
                        .labels(id)
                        .iter()
                        .enumerate()
                        .map(|(n, row)| {
                            row.iter()
                                .map(|x| domain[n].binary_search(x).unwrap())
                                .collect()
                        })
                        .collect(),
                })
                .collect();
            let space = PrescriptionSpace::new(tree.model(), domain.iter().map(Vec::len).collect());
            LabelClass {
                t,
                label,
                members,
                domain,
                space,
            }
        })
        .collect()
}

fn class_work(classes: &[LabelClass]) -> u128 {
    classes
        .iter()
        .map(|c| c.space.len().saturating_mul(c.members.len() as u128))
        .sum()
}

/// Calls `f(key, child)` for every reachable common edge out of `classes`.
fn for_each_edge(
    tree: &FcsTree,
    classes: &[LabelClass],
    mut f: impl FnMut(CommonUpdateKey, NodeId),
) {
    for c in classes {
        for l in 0..c.space.len() as u64 {
            for m in 0..c.members.len() {
                let g = c.member_prescription(tree, m, l);
                for b in tree.children(c.members[m].id, g) {
                    f(
                        CommonUpdateKey {
                            t: c.t as u16,
                            label: c.label,
                            prescription: l,
                            o0: b.o0 as u16,
                        },
                        b.child,
                    );
                }
            }
        }
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut y = x;
        while self.0[y] != r {
            y = std::mem::replace(&mut self.0[y], r);
        }
        r
    }

    /// Keeps the smaller root so that roots are block minima.
    fn union(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        if a != b {
            let (lo, hi) = (a.min(b), a.max(b));
            self.0[hi] = lo;
        }
    }
}

impl CommonCompression {
    /// Builds from labels, deriving the update table. Every node of the
    /// extended-prescription subtree must be labelled, and nothing else.
    pub fn from_labels(
        tree: &FcsTree,
        pc: &PrivateCompression,
        id: impl Into<String>,
        labels: BTreeMap<NodeId, u32>,
        budget: Budget,
    ) -> Result<Self> {
        let id = id.into();
        let asps = AspsTree::build(tree, pc);
        let mut alphabet = vec![0u32; tree.horizon()];
        for (&node, &z) in &labels {
            if node.idx() >= tree.len() || !asps.contains(node) {
                return Err(Error::Compression {
                    id,
                    message: format!("node {} is not reachable under label-based prescriptions", node.0),
                });
            }
            let t = tree.node(node).t;
            alphabet[t - 1] = alphabet[t - 1].max(z + 1);
        }
        for t in 1..=tree.horizon() {
            if let Some(&missing) = asps.level(t).iter().find(|n| !labels.contains_key(n)) {
                return Err(Error::Compression {
                    id,
                    message: format!("`{}` has no common label", tree.node(missing).key),
                });
            }
        }
        let mut updates = BTreeMap::new();
        let mut spent = 0;
        for t in 1..tree.horizon() {
            let classes = classes_of(tree, pc, &asps, t, &labels);
            spent += class_work(&classes);
            budget.check(|| format!("common update table, t={t}"), spent)?;
            let mut conflict = None;
            let mut count = 0;
            for_each_edge(tree, &classes, |key, child| {
                let z = labels[&child];
                match updates.insert(key, z) {
                    Some(prev) if prev != z => {
                        count += 1;
                        conflict.get_or_insert(format!(
                            "t={} label {} prescription {} o0 {} -> {} and {}",
                            key.t, key.label, key.prescription, key.o0, prev, z
                        ));
                    }
                    _ => {}
                }
            });
            if let Some(first) = conflict {
                return Err(Error::NotRecursive { id, count, first });
            }
        }
        Ok(CommonCompression {
            id,
            mu: MU_UNIFORM.to_string(),
            labels,
            alphabet,
            updates,
        })
    }

    pub fn from_parts(
        id: String,
        mu: String,
        labels: BTreeMap<NodeId, u32>,
        alphabet: Vec<u32>,
        updates: BTreeMap<CommonUpdateKey, u32>,
    ) -> Self {
        CommonCompression {
            id,
            mu,
            labels,
            alphabet,
            updates,
        }
    }

    /// One label per node.
    pub fn identity(tree: &FcsTree, pc: &PrivateCompression, budget: Budget) -> Result<Self> {
        Self::close_forward(tree, pc, "identity", budget, |id| id.0 as u64)
    }

    /// Nodes with equal beliefs over (state, joint private history) share a
    /// label, merged further only where the update would be ill-defined.
    pub fn bcs(tree: &FcsTree, pc: &PrivateCompression, budget: Budget) -> Result<Self> {
        let mut keys: BTreeMap<String, u64> = BTreeMap::new();
        let base: Vec<u64> = tree
            .nodes()
            .iter()
            .map(|n| {
                let next = keys.len() as u64;
                *keys.entry(n.belief.fingerprint().0).or_insert(next)
            })
            .collect();
        Self::close_forward(tree, pc, "bcs", budget, |id| base[id.idx()])
    }

    /// Nodes with equal beliefs over (state, joint private label) share a
    /// label; lossy in general.
    pub fn label_belief(tree: &FcsTree, pc: &PrivateCompression, budget: Budget) -> Result<Self> {
        let mut keys: BTreeMap<Fingerprint, u64> = BTreeMap::new();
        let base: Vec<u64> = tree
            .nodes()
            .iter()
            .map(|n| {
                let next = keys.len() as u64;
                *keys.entry(label_fingerprint(n, pc)).or_insert(next)
            })
            .collect();
        Self::close_forward(tree, pc, "label-belief", budget, |id| base[id.idx()])
    }

    /// Coarsest labelling refining `base` on each level's merges that makes
    /// the update well defined: children of same-label nodes under the same
    /// label-based prescription and common observation are merged.
    /// Labels are numbered by first appearance in canonical node order.
    pub fn close_forward(
        tree: &FcsTree,
        pc: &PrivateCompression,
        id: impl Into<String>,
        budget: Budget,
        base: impl Fn(NodeId) -> u64,
    ) -> Result<Self> {
        let id = id.into();
        let asps = AspsTree::build(tree, pc);
        let mut labels: BTreeMap<NodeId, u32> = BTreeMap::new();
        let mut forced: Vec<(NodeId, NodeId)> = Vec::new();
        let mut spent = 0;
        for t in 1..=tree.horizon() {
            let level = asps.level(t);
            let mut uf = UnionFind::new(level.len());
            let mut first: BTreeMap<u64, usize> = BTreeMap::new();
            for (i, &n) in level.iter().enumerate() {
                let j = *first.entry(base(n)).or_insert(i);
                uf.union(i, j);
            }
            for (a, b) in forced.drain(..) {
                let i = level.binary_search(&a).unwrap();
                let j = level.binary_search(&b).unwrap();
                uf.union(i, j);
            }
            let mut numbering: BTreeMap<usize, u32> = BTreeMap::new();
            for (i, &n) in level.iter().enumerate() {
                let r = uf.find(i);
                let next = numbering.len() as u32;
                labels.insert(n, *numbering.entry(r).or_insert(next));
            }
            if t < tree.horizon() {
                let classes = classes_of(tree, pc, &asps, t, &labels);
                spent += class_work(&classes);
                budget.check(|| format!("common closure, t={t}"), spent)?;
                let mut target: BTreeMap<CommonUpdateKey, NodeId> = BTreeMap::new();
                for_each_edge(tree, &classes, |key, child| {
                    let rep = *target.entry(key).or_insert(child);
                    if rep != child {
                        forced.push((rep, child));
                    }
                });
            }
        }
        Self::from_labels(tree, pc, id, labels, budget)
    }

    pub fn label(&self, node: NodeId) -> Option<u32> {
        self.labels.get(&node).copied()
    }

    pub fn labels(&self) -> &BTreeMap<NodeId, u32> {
        &self.labels
    }

    pub fn alphabet(&self) -> &[u32] {
        &self.alphabet
    }

    pub fn updates(&self) -> &BTreeMap<CommonUpdateKey, u32> {
        &self.updates
    }

    pub fn update(&self, key: &CommonUpdateKey) -> Option<u32> {
        self.updates.get(key).copied()
    }

    /// Label classes per level (`[t - 1]`), weighted by μ.
    pub fn classes(&self, tree: &FcsTree, pc: &PrivateCompression) -> Vec<Vec<LabelClass>> {
        let asps = AspsTree::build(tree, pc);
        (1..=tree.horizon())
            .map(|t| classes_of(tree, pc, &asps, t, &self.labels))
            .collect()
    }

    /// Checks coverage of the reachable subtree, alphabets, and that every
    /// reachable edge's child label equals the update of its parent label.
    pub fn check_recursive(
        &self,
        tree: &FcsTree,
        pc: &PrivateCompression,
        budget: Budget,
    ) -> Result<RecursionReport> {
        let asps = AspsTree::build(tree, pc);
        let mut violations = Vec::new();
        if self.mu != MU_UNIFORM {
            violations.push(EdgeViolation {
                edge: format!("unknown reference measure `{}`", self.mu),
                expected: None,
                found: 0,
            });
        }
        for t in 1..=tree.horizon() {
            for &n in asps.level(t) {
                match self.labels.get(&n) {
                    None => violations.push(EdgeViolation {
                        edge: format!("`{}` unlabelled", tree.node(n).key),
                        expected: None,
                        found: u32::MAX,
                    }),
                    Some(&z) if self.alphabet.get(t - 1).map_or(true, |&a| z >= a) => {
                        violations.push(EdgeViolation {
                            edge: format!("`{}` label outside alphabet", tree.node(n).key),
                            expected: None,
                            found: z,
                        })
                    }
                    _ => {}
                }
            }
        }
        let mut checked = 0;
        let mut spent = 0;
        for t in 1..tree.horizon() {
            let classes = classes_of(tree, pc, &asps, t, &self.labels);
            spent += class_work(&classes);
            budget.check(|| format!("common recursion check, t={t}"), spent)?;
            for_each_edge(tree, &classes, |key, child| {
                checked += 1;
                let want = self.update(&key);
                let found = self.labels.get(&child).copied().unwrap_or(u32::MAX);
                if want != Some(found) {
                    violations.push(EdgeViolation {
                        edge: format!(
                            "t={} label {} --(prescription {}, o0 {})--> `{}`",
                            key.t,
                            key.label,
                            key.prescription,
                            key.o0,
                            tree.node(child).key
                        ),
                        expected: want,
                        found,
                    });
                }
            });
        }
        Ok(RecursionReport {
            id: self.id.clone(),
            edges_checked: checked,
            violations,
        })
    }
}

/// Random base labels (up to `k` per level) followed by forward closure.
pub fn random_common(
    tree: &FcsTree,
    pc: &PrivateCompression,
    rng: &mut impl Rng,
    k: u32,
    budget: Budget,
) -> Result<CommonCompression> {
    let base: Vec<u64> = (0..tree.len()).map(|_| rng.gen_range(0..k.max(1)) as u64).collect();
    CommonCompression::close_forward(tree, pc, format!("random(k={k})"), budget, |id| {
        base[id.idx()]
    })
}

/// Measured common-side parameters, scaled (δ ×2), with witnesses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommonMeasure {
    pub eps_c: f64,
    pub delta_c: f64,
    pub eps_witness: Option<Witness>,
    pub delta_witness: Option<Witness>,
    pub mu: String,
}

/// Unscaled discrepancies for member `m` of `class` under λ̂ number `l`:
/// the reward gap to the class mixture and, before the horizon, the total
/// variation between next-common-observation laws.
pub fn common_discrepancy(
    tree: &FcsTree,
    class: &LabelClass,
    m: usize,
    l: u64,
) -> (f64, Option<f64>) {
    class.discrepancies(tree, l)[m]
}

fn better(best: &mut Option<(f64, Witness)>, cand: (f64, Witness)) {
    if best.as_ref().map_or(true, |(v, _)| cand.0 > *v) {
        *best = Some(cand);
    }
}

/// Measures (ε_c, δ_c) exactly over every labelled common state and every
/// label-based prescription of its class.
pub fn measure_common(
    tree: &FcsTree,
    pc: &PrivateCompression,
    cc: &CommonCompression,
    budget: Budget,
) -> Result<CommonMeasure> {
    cc.check_recursive(tree, pc, budget)?.into_result()?;
    let classes: Vec<LabelClass> = cc.classes(tree, pc).into_iter().flatten().collect();
    budget.check(|| "common measurement".to_string(), class_work(&classes))?;
    let per_class: Vec<(Option<(f64, Witness)>, Option<(f64, Witness)>)> = classes
        .par_iter()
        .map(|c| {
            let mut eps = None;
            let mut delta = None;
            for l in 0..c.space.len() as u64 {
                for (m, (r, tv)) in c.discrepancies(tree, l).into_iter().enumerate() {
                    let wit = |raw| Witness {
                        t: c.t,
                        fcs: tree.node(c.members[m].id).key.to_string(),
                        detail: format!("z{}", c.label),
                        choice: l,
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
    for (e, d) in per_class {
        if let Some(e) = e {
            better(&mut eps, e);
        }
        if let Some(d) = d {
            better(&mut delta, d);
        }
    }
    Ok(CommonMeasure {
        eps_c: eps.as_ref().map_or(0.0, |x| x.0),
        delta_c: 2.0 * delta.as_ref().map_or(0.0, |x| x.0),
        eps_witness: eps.map(|x| x.1),
        delta_witness: delta.map(|x| x.1),
        mu: cc.mu.clone(),
    })
}
