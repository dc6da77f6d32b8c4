use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{check_spi, label_fingerprint, successors, BeliefState, Fingerprint};
use crate::approx_dp::{AspsTree, ExtensionContext};
use crate::compression::PrivateCompression;
use crate::error::{Error, Result};
use crate::exact_dp::{argmax, SolveRow, StateKey, ValueEntry, ValueTable};
use crate::histories::{FcsTree, NodeId, PrescriptionSpace};
use crate::model::DecPomdp;
use crate::{Budget, EQ_TOL};

/// Values keyed by belief fingerprints.
#[derive(Debug, Clone)]
pub struct BeliefSolution {
    pub table: ValueTable,
    /// `(o0, P(o0), root fingerprint)`
    pub roots: Vec<(usize, f64, Fingerprint)>,
    pub j: f64,
}

impl BeliefSolution {
    pub fn value(&self, t: usize, fp: &Fingerprint) -> Option<f64> {
        self.table.value(t, &StateKey::Belief(fp.clone()))
    }

    /// Distinct beliefs per level.
    pub fn level_sizes(&self) -> Vec<usize> {
        self.table.levels.iter().map(|l| l.len()).collect()
    }

    pub fn rows(&self) -> Vec<SolveRow> {
        let mut rows = Vec::new();
        for (i, level) in self.table.levels.iter().enumerate() {
            for (k, e) in level {
                if let StateKey::Belief(fp) = k {
                    rows.push(SolveRow {
                        t: i + 1,
                        key: fp.0.clone(),
                        value: e.value,
                        argmax: e.argmax,
                    });
                }
            }
        }
        rows
    }
}

/// One prescription's immediate reward and `(probability, successor)` branches.
type Moves = Vec<(f64, Vec<(f64, Fingerprint)>)>;

fn belief_reward(model: &DecPomdp, pi: &BeliefState, g: &crate::histories::Prescription) -> f64 {
    pi.atoms
        .iter()
        .map(|a| a.p * model.reward(a.state, g.joint_action(model, &a.hist)))
        .sum()
}

/// Backward induction over beliefs reached by forward Bayesian updates from
/// the prior. Common states with equal beliefs share one entry.
pub fn solve_bcs_fps(model: &DecPomdp, budget: Budget) -> Result<BeliefSolution> {
    let horizon = model.horizon();
    let roots: Vec<(usize, f64, BeliefState)> = BeliefState::initial(model);
    let mut levels: Vec<BTreeMap<Fingerprint, BeliefState>> = vec![BTreeMap::new(); horizon];
    for (_, _, b) in &roots {
        levels[0].entry(b.fingerprint()).or_insert_with(|| b.clone());
    }
    let mut moves: Vec<BTreeMap<Fingerprint, Moves>> = vec![BTreeMap::new(); horizon];
    let mut spent: u128 = 0;
    for t in 1..=horizon {
        for (fp, pi) in &levels[t - 1] {
            let sizes = pi.domains.iter().map(Vec::len).collect();
            spent += PrescriptionSpace::new(model, sizes).len();
            budget.check(|| format!("belief {} at t={t}", fp.0), spent)?;
        }
        let expanded: Vec<(Fingerprint, Moves, Vec<BeliefState>)> = levels[t - 1]
            .par_iter()
            .map(|(fp, pi)| {
                let space = PrescriptionSpace::new(model, pi.domains.iter().map(Vec::len).collect());
                let mut mv = Vec::new();
                let mut next = Vec::new();
                for g in space.iter() {
                    let r = belief_reward(model, pi, &g);
                    let mut branches = Vec::new();
                    if t < horizon {
                        for (_, p, b) in successors(model, pi, &g) {
                            branches.push((p, b.fingerprint()));
                            next.push(b);
                        }
                    }
                    mv.push((r, branches));
                }
                (fp.clone(), mv, next)
            })
            .collect();
        for (fp, mv, next) in expanded {
            moves[t - 1].insert(fp, mv);
            if t < horizon {
                for b in next {
                    levels[t].entry(b.fingerprint()).or_insert(b);
                }
            }
        }
    }
    let mut table = ValueTable::new(horizon);
    for t in (1..=horizon).rev() {
        for (fp, mv) in &moves[t - 1] {
            let q: Vec<f64> = mv
                .iter()
                .map(|(r, branches)| {
                    r + branches
                        .iter()
                        .map(|(p, c)| p * table.value(t + 1, &StateKey::Belief(c.clone())).unwrap_or(0.0))
                        .sum::<f64>()
                })
                .collect();
            let (best, val) = argmax(&q);
            table.insert(
                t,
                StateKey::Belief(fp.clone()),
                ValueEntry {
                    value: val,
                    argmax: best as u64,
                    q: Some(q),
                },
            );
        }
    }
    let roots: Vec<(usize, f64, Fingerprint)> =
        roots.into_iter().map(|(o, p, b)| (o, p, b.fingerprint())).collect();
    let j = roots
        .iter()
        .map(|(_, p, fp)| p * table.value(1, &StateKey::Belief(fp.clone())).unwrap())
        .sum();
    Ok(BeliefSolution { table, roots, j })
}

/// Backward induction over beliefs on (state, joint private label), with
/// prescriptions over labels. Each belief is expanded at the first common
/// state (in canonical order) that carries it.
///
/// Rejects maps failing any sufficiency condition.
pub fn solve_bcs_spi(
    tree: &FcsTree,
    spi: &PrivateCompression,
    budget: Budget,
) -> Result<BeliefSolution> {
    let report = check_spi(tree, spi, EQ_TOL);
    if !report.pass() {
        let failed: Vec<&str> = report
            .conditions
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.id.as_str())
            .collect();
        return Err(Error::SpiRejected {
            id: spi.id.clone(),
            conditions: failed.join(", "),
        });
    }
    let asps = AspsTree::build(tree, spi);
    let horizon = tree.horizon();
    let key = |id: NodeId| label_fingerprint(tree.node(id), spi);
    let mut reps: Vec<BTreeMap<Fingerprint, NodeId>> = vec![BTreeMap::new(); horizon];
    let mut spent = 0;
    for t in 1..=horizon {
        for &id in asps.level(t) {
            reps[t - 1].entry(key(id)).or_insert(id);
        }
        for &id in reps[t - 1].values() {
            spent += ExtensionContext::new(tree, spi, id).space.len();
        }
        budget.check(|| format!("label beliefs at t={t}"), spent)?;
    }
    let mut table = ValueTable::new(horizon);
    for t in (1..=horizon).rev() {
        let solved: Vec<(Fingerprint, usize, f64)> = reps[t - 1]
            .par_iter()
            .map(|(fp, &id)| {
                let ctx = ExtensionContext::new(tree, spi, id);
                let node = tree.node(id);
                let q: Vec<f64> = (0..ctx.space.len() as u64)
                    .map(|l| {
                        let g = ctx.extended_index(&ctx.domain, &ctx.space, l);
                        let mut q = node.immediate_reward(tree.model(), &node.space.decode(g));
                        if t < horizon {
                            for b in tree.children(id, g) {
                                q += b.p
                                    * table
                                        .value(t + 1, &StateKey::Belief(key(b.child)))
                                        .expect("successor beliefs are solved");
                            }
                        }
                        q
                    })
                    .collect();
                let (best, val) = argmax(&q);
                (fp.clone(), best, val)
            })
            .collect();
        for (fp, best, val) in solved {
            table.insert(
                t,
                StateKey::Belief(fp),
                ValueEntry {
                    value: val,
                    argmax: best as u64,
                    q: None,
                },
            );
        }
    }
    let roots: Vec<(usize, f64, Fingerprint)> =
        tree.roots().iter().map(|b| (b.o0, b.p, key(b.child))).collect();
    let j = roots
        .iter()
        .map(|(_, p, fp)| p * table.value(1, &StateKey::Belief(fp.clone())).unwrap())
        .sum();
    Ok(BeliefSolution { table, roots, j })
}
