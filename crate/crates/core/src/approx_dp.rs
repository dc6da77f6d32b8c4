//! DPs over label-based prescriptions: on the full common-state tree
//! (values V̂) and on compressed common states (values V̌).

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::compression::{CommonCompression, CommonUpdateKey, PrivateCompression};
use crate::error::{Error, Result};
use crate::exact_dp::{argmax, supervisor_v, CoordinatorPolicy, SolveRow, StateKey, ValueEntry, ValueTable};
use crate::histories::{FcsTree, NodeId, Prescription, PrescriptionSpace};
use crate::Budget;

/// Lifts label-based prescriptions at one common state to prescriptions
/// over its private histories: γ(h) = λ̂(ϑ̂(h0, h)).
pub struct ExtensionContext<'a> {
    pub node: NodeId,
    labels: &'a [Vec<u32>],
    /// Sorted labels in use at the node, per agent.
    pub domain: Vec<Vec<u32>>,
    /// Prescriptions over `domain`.
    pub space: PrescriptionSpace,
    fps_space: &'a PrescriptionSpace,
}

impl<'a> ExtensionContext<'a> {
    pub fn new(tree: &'a FcsTree, pc: &'a PrivateCompression, node: NodeId) -> Self {
        let domain = pc.label_domain(node);
        let space = PrescriptionSpace::new(tree.model(), domain.iter().map(Vec::len).collect());
        ExtensionContext {
            node,
            labels: pc.labels(node),
            domain,
            space,
            fps_space: &tree.node(node).space,
        }
    }

    /// Extends λ̂ given over this node's own label domain.
    pub fn extend(&self, lambda: &Prescription) -> Result<Prescription> {
        self.extend_over(&self.domain, lambda)
    }

    /// Extends λ̂ given over any label domain covering this node's labels.
    pub fn extend_over(&self, domain: &[Vec<u32>], lambda: &Prescription) -> Result<Prescription> {
        let mut tables = Vec::with_capacity(self.labels.len());
        for (n, l) in self.labels.iter().enumerate() {
            if lambda.tables[n].len() != domain[n].len() {
                return Err(Error::DomainMismatch {
                    locus: format!("node {}", self.node.0),
                    message: format!("agent {n} prescription does not match its label domain"),
                });
            }
            let mut row = Vec::with_capacity(l.len());
            for &x in l {
                let pos = domain[n].binary_search(&x).map_err(|_| Error::DomainMismatch {
                    locus: format!("node {}", self.node.0),
                    message: format!("label {x} of agent {n} is outside the prescription's domain"),
                })?;
                row.push(lambda.tables[n][pos]);
            }
            tables.push(row);
        }
        Ok(Prescription { tables })
    }

    /// Index in the node's FPS prescription space of the extension of λ̂
    /// (λ̂ given by its index over `domain`).
    pub fn extended_index(&self, domain: &[Vec<u32>], space: &PrescriptionSpace, lambda: u64) -> u64 {
        let g = self
            .extend_over(domain, &space.decode(lambda))
            .expect("domain covers node labels");
        self.fps_space.index(&g)
    }
}

/// Common states reachable when the coordinator only uses extended
/// label-based prescriptions, with the reference measure μ that draws the
/// prescription uniformly at every step.
#[derive(Debug, Clone)]
pub struct AspsTree {
    pub levels: Vec<Vec<NodeId>>,
    /// μ by node; zero off the subtree.
    pub mu: Vec<f64>,
}

pub const MU_UNIFORM: &str = "uniform";

impl AspsTree {
    pub fn build(tree: &FcsTree, pc: &PrivateCompression) -> Self {
        let mut mu = vec![0.0; tree.len()];
        let mut levels = vec![Vec::new(); tree.horizon()];
        for b in tree.roots() {
            mu[b.child.idx()] = b.p;
            levels[0].push(b.child);
        }
        for t in 1..tree.horizon() {
            let mut next = Vec::new();
            for &id in &levels[t - 1] {
                let ctx = ExtensionContext::new(tree, pc, id);
                let count = ctx.space.len() as u64;
                for l in 0..count {
                    let g = ctx.extended_index(&ctx.domain, &ctx.space, l);
                    for b in tree.children(id, g) {
                        if mu[b.child.idx()] == 0.0 {
                            next.push(b.child);
                        }
                        mu[b.child.idx()] += mu[id.idx()] / count as f64 * b.p;
                    }
                }
            }
            next.sort_unstable();
            next.dedup();
            levels[t] = next;
        }
        AspsTree { levels, mu }
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.mu[id.idx()] > 0.0
    }

    pub fn level(&self, t: usize) -> &[NodeId] {
        &self.levels[t - 1]
    }
}

/// Values of the DP restricted to extended prescriptions, on the full tree.
#[derive(Debug, Clone)]
pub struct AspsSolution {
    /// V̂ by node.
    pub v: Vec<f64>,
    /// Maximising λ̂ index (over the node's label domain) by node.
    pub lambda: Vec<u64>,
    /// The same choice as a coordinator policy over FPS prescriptions.
    pub policy: CoordinatorPolicy,
    pub j: f64,
}

impl AspsSolution {
    pub fn table(&self, tree: &FcsTree) -> ValueTable {
        let mut table = ValueTable::new(tree.horizon());
        for node in tree.nodes() {
            table.insert(
                node.t,
                StateKey::Node(node.id),
                ValueEntry {
                    value: self.v[node.id.idx()],
                    argmax: self.lambda[node.id.idx()],
                    q: None,
                },
            );
        }
        table
    }

    pub fn rows(&self, tree: &FcsTree) -> Vec<SolveRow> {
        let mut rows = Vec::new();
        for t in 1..=tree.horizon() {
            for &id in tree.level(t) {
                rows.push(SolveRow {
                    t,
                    key: tree.node(id).key.to_string(),
                    value: self.v[id.idx()],
                    argmax: self.lambda[id.idx()],
                });
            }
        }
        rows
    }
}

/// Backward induction over every common state, maximising only over
/// extensions of label-based prescriptions.
pub fn solve_fcs_asps(tree: &FcsTree, pc: &PrivateCompression, budget: Budget) -> Result<AspsSolution> {
    pc.check_recursive(tree).into_result()?;
    let mut spent: u128 = 0;
    for node in tree.nodes() {
        spent += ExtensionContext::new(tree, pc, node.id).space.len();
        budget.check(|| node.key.to_string(), spent)?;
    }
    let mut v = vec![0.0; tree.len()];
    let mut lambda = vec![0; tree.len()];
    let mut policy = CoordinatorPolicy::empty(tree);
    for t in (1..=tree.horizon()).rev() {
        let level = tree.level(t);
        let rows: Vec<(usize, f64, u64)> = level
            .par_iter()
            .map(|&id| {
                let ctx = ExtensionContext::new(tree, pc, id);
                let gs: Vec<u64> = (0..ctx.space.len() as u64)
                    .map(|l| ctx.extended_index(&ctx.domain, &ctx.space, l))
                    .collect();
                let q: Vec<f64> = gs
                    .iter()
                    .map(|&g| crate::exact_dp::q_value(tree, id, g, &v))
                    .collect();
                let (best, val) = argmax(&q);
                (best, val, gs[best])
            })
            .collect();
        for (&id, (best, val, g)) in level.iter().zip(rows) {
            v[id.idx()] = val;
            lambda[id.idx()] = best as u64;
            policy.set(id, g);
        }
    }
    let j = tree.roots().iter().map(|b| b.p * v[b.child.idx()]).sum();
    Ok(AspsSolution { v, lambda, policy, j })
}

/// Values of the DP over compressed common states.
#[derive(Debug, Clone)]
pub struct AscsSolution {
    /// `[t - 1]`: label → (V̌, maximising λ̂ index over the label's domain).
    pub levels: Vec<BTreeMap<u32, (f64, u64)>>,
    /// Σ_{o0} P(o0) V̌_1(ϑ̂0(o0)).
    pub j: f64,
    pub mu: String,
}

impl AscsSolution {
    pub fn value(&self, t: usize, label: u32) -> f64 {
        if t > self.levels.len() {
            return 0.0;
        }
        self.levels[t - 1][&label].0
    }

    pub fn table(&self) -> ValueTable {
        let mut table = ValueTable::new(self.levels.len());
        for (i, level) in self.levels.iter().enumerate() {
            for (&l, &(v, a)) in level {
                table.insert(
                    i + 1,
                    StateKey::Label(l),
                    ValueEntry {
                        value: v,
                        argmax: a,
                        q: None,
                    },
                );
            }
        }
        table
    }

    pub fn rows(&self) -> Vec<SolveRow> {
        let mut rows = Vec::new();
        for (i, level) in self.levels.iter().enumerate() {
            for (&l, &(v, a)) in level {
                rows.push(SolveRow {
                    t: i + 1,
                    key: format!("z{l}"),
                    value: v,
                    argmax: a,
                });
            }
        }
        rows
    }
}

/// Backward induction over common labels, with rewards and label
/// transitions given by μ-weighted mixtures over each label's preimage.
pub fn solve_ascs_asps(
    tree: &FcsTree,
    pc: &PrivateCompression,
    cc: &CommonCompression,
    budget: Budget,
) -> Result<AscsSolution> {
    pc.check_recursive(tree).into_result()?;
    cc.check_recursive(tree, pc, budget)?.into_result()?;
    let classes = cc.classes(tree, pc);
    let mut levels: Vec<BTreeMap<u32, (f64, u64)>> = vec![BTreeMap::new(); tree.horizon()];
    for t in (1..=tree.horizon()).rev() {
        let next = if t < tree.horizon() { Some(&levels[t]) } else { None };
        let solved: Vec<(u32, f64, u64)> = classes[t - 1]
            .par_iter()
            .map(|class| {
                let q: Vec<f64> = (0..class.space.len() as u64)
                    .map(|l| {
                        let out = class.outcomes(tree, l);
                        let mut q = out.reward;
                        if let Some(next) = next {
                            for (o0, p) in out.common_obs {
                                let key = CommonUpdateKey {
                                    t: t as u16,
                                    label: class.label,
                                    prescription: l,
                                    o0: o0 as u16,
                                };
                                let z = cc.update(&key).expect("update total on reachable edges");
                                q += p * next[&z].0;
                            }
                        }
                        q
                    })
                    .collect();
                let (best, val) = argmax(&q);
                (class.label, val, best as u64)
            })
            .collect();
        for (l, v, a) in solved {
            levels[t - 1].insert(l, (v, a));
        }
    }
    let j = tree
        .roots()
        .iter()
        .map(|b| b.p * levels[0][&cc.label(b.child).expect("roots are labelled")].0)
        .sum();
    Ok(AscsSolution {
        levels,
        j,
        mu: cc.mu.clone(),
    })
}

/// The compressed-state policy executed on the real tree: at every common
/// state it reaches, the chosen λ̂ of its label, extended through the
/// private compression.
pub fn ascs_policy(
    tree: &FcsTree,
    pc: &PrivateCompression,
    cc: &CommonCompression,
    sol: &AscsSolution,
) -> CoordinatorPolicy {
    let classes = cc.classes(tree, pc);
    let mut policy = CoordinatorPolicy::empty(tree);
    let mut frontier: Vec<NodeId> = tree.roots().iter().map(|b| b.child).collect();
    for t in 1..=tree.horizon() {
        let mut next = Vec::new();
        for id in frontier {
            let z = cc.label(id).expect("reached nodes are labelled");
            let class = classes[t - 1].iter().find(|c| c.label == z).unwrap();
            let lambda = sol.levels[t - 1][&z].1;
            let ctx = ExtensionContext::new(tree, pc, id);
            let g = ctx.extended_index(&class.domain, &class.space, lambda);
            policy.set(id, g);
            if t < tree.horizon() {
                next.extend(tree.children(id, g).iter().map(|b| b.child));
            }
        }
        next.sort_unstable();
        next.dedup();
        frontier = next;
    }
    policy
}

/// Value of `policy` computed the supervisor's way: averaging, at each
/// root, the per-history expected return over the root's private histories.
pub fn supervisor_policy_value(tree: &FcsTree, policy: &CoordinatorPolicy) -> Result<f64> {
    let mut j = 0.0;
    for b in tree.roots() {
        let node = tree.node(b.child);
        for f in &node.fps {
            j += b.p * f.p * supervisor_v(tree, b.child, &f.hist, policy)?;
        }
    }
    Ok(j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compression::build_exact_private;
    use crate::exact_dp::{evaluate_policy, solve_fcs_fps};
    use crate::model::{coin2, signal2};

    #[test]
    fn identity_extension_is_verbatim() {
        let m = signal2();
        let tree = FcsTree::build(&m, Budget::default()).unwrap();
        let pc = PrivateCompression::identity(&tree);
        for node in tree.nodes().iter().take(3) {
            let ctx = ExtensionContext::new(&tree, &pc, node.id);
            for l in 0..ctx.space.len() as u64 {
                let lam = ctx.space.decode(l);
                assert_eq!(ctx.extend(&lam).unwrap(), lam);
            }
        }
    }

    #[test]
    fn constant_extension_is_constant() {
        let m = signal2();
        let tree = FcsTree::build(&m, Budget::default()).unwrap();
        let pc = PrivateCompression::constant(&tree);
        let node = tree.roots()[1].child;
        let ctx = ExtensionContext::new(&tree, &pc, node);
        assert_eq!(ctx.space.len(), 4);
        let lam = Prescription {
            tables: vec![vec![1], vec![0]],
        };
        let g = ctx.extend(&lam).unwrap();
        assert!(g.tables[0].iter().all(|&a| a == 1));
        assert!(g.tables[1].iter().all(|&a| a == 0));
        let outside = Prescription {
            tables: vec![vec![1, 1], vec![0]],
        };
        assert!(ctx.extend_over(&[vec![1, 2], vec![0]], &outside).is_err());
    }

    #[test]
    fn merged_pair_gets_equal_actions() {
        let m = signal2();
        let tree = FcsTree::build(&m, Budget::default()).unwrap();
        let pc = crate::compression::build_greedy(&tree, 0.3, 0.3);
        for node in tree.nodes() {
            let ctx = ExtensionContext::new(&tree, &pc, node.id);
            for l in 0..ctx.space.len() as u64 {
                let g = ctx.extend(&ctx.space.decode(l)).unwrap();
                for n in 0..2 {
                    let labels = &pc.labels(node.id)[n];
                    for i in 0..labels.len() {
                        for j in 0..labels.len() {
                            if labels[i] == labels[j] {
                                assert_eq!(g.tables[n][i], g.tables[n][j]);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn identity_compression_recovers_exact_values() {
        let m = signal2();
        let tree = FcsTree::build(&m, Budget::default()).unwrap();
        let exact = solve_fcs_fps(&tree);
        let sol = solve_fcs_asps(&tree, &PrivateCompression::identity(&tree), Budget::default()).unwrap();
        for node in tree.nodes() {
            assert!((sol.v[node.id.idx()] - exact.v[node.id.idx()]).abs() < 1e-12);
        }
    }

    #[test]
    fn restricted_values_never_exceed_exact() {
        let m = signal2();
        let tree = FcsTree::build(&m, Budget::default()).unwrap();
        let exact = solve_fcs_fps(&tree);
        let sol = solve_fcs_asps(&tree, &PrivateCompression::constant(&tree), Budget::default()).unwrap();
        for node in tree.nodes() {
            assert!(sol.v[node.id.idx()] <= exact.v[node.id.idx()] + 1e-12);
        }
    }

    #[test]
    fn exact_compression_on_coin2_is_lossless() {
        let m = coin2();
        let tree = FcsTree::build(&m, Budget::default()).unwrap();
        let exact = solve_fcs_fps(&tree);
        let pc = build_exact_private(&tree);
        let sol = solve_fcs_asps(&tree, &pc, Budget::default()).unwrap();
        assert!((sol.j - exact.j).abs() < 1e-9);
    }

    #[test]
    fn mu_is_a_probability_per_level() {
        let m = signal2();
        let tree = FcsTree::build(&m, Budget::default()).unwrap();
        let pc = crate::compression::build_greedy(&tree, 0.2, 0.2);
        let asps = AspsTree::build(&tree, &pc);
        for t in 1..=2 {
            let total: f64 = asps.level(t).iter().map(|&id| asps.mu[id.idx()]).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn compressed_policy_value_agrees_across_evaluators() {
        let m = signal2();
        let tree = FcsTree::build(&m, Budget::default()).unwrap();
        let pc = crate::compression::build_greedy(&tree, 0.2, 0.2);
        let cc = CommonCompression::bcs(&tree, &pc, Budget::default()).unwrap();
        let sol = solve_ascs_asps(&tree, &pc, &cc, Budget::default()).unwrap();
        let policy = ascs_policy(&tree, &pc, &cc, &sol);
        let (_, j) = evaluate_policy(&tree, &policy);
        let j2 = supervisor_policy_value(&tree, &policy).unwrap();
        assert!((j - j2).abs() < 1e-9);
    }
}
