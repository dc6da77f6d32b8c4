//! Exhaustive policy enumeration, sharing no code with the DP or the tree.
//!
//! Under each first common observation the coordinator's policies are
//! independent, so the optimum is the sum over roots of the best policy in
//! each root's subtree. Within a subtree, every assignment of a prescription
//! to every reachable node is valued, and the largest value is kept.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::model::DecPomdp;
use crate::{Budget, ADMISSIBLE};

#[derive(Clone)]
struct Atom {
    s: usize,
    h: Vec<Vec<u16>>,
    /// Unnormalised joint probability of the atom and the common path.
    p: f64,
}

struct Counter {
    used: u128,
    budget: Budget,
}

impl Counter {
    fn spend(&mut self, n: u128) -> Result<()> {
        self.used += n;
        self.budget.check(|| "policy enumeration".to_string(), self.used)
    }
}

/// Optimal expected cumulative reward by exhaustive policy enumeration.
pub fn brute_force_value(model: &DecPomdp, budget: Budget) -> Result<f64> {
    let mut roots: BTreeMap<usize, Vec<Atom>> = BTreeMap::new();
    for (s, &pi) in model.initial().iter().enumerate() {
        for (jo, &po) in model.observation_row(s).iter().enumerate() {
            if pi * po > 0.0 {
                let o = model.decode_joint_obs(jo);
                roots.entry(o.common).or_default().push(Atom {
                    s,
                    h: o.private.iter().map(|&x| vec![x as u16]).collect(),
                    p: pi * po,
                });
            }
        }
    }
    let mut counter = Counter { used: 0, budget };
    let mut j = 0.0;
    for atoms in roots.into_values() {
        if atoms.iter().map(|a| a.p).sum::<f64>() <= ADMISSIBLE {
            continue;
        }
        let all = policy_values(model, atoms, 1, &mut counter)?;
        j += all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    Ok(j)
}

/// The value of every policy of the subtree whose common path produced `atoms`.
fn policy_values(
    model: &DecPomdp,
    atoms: Vec<Atom>,
    t: usize,
    counter: &mut Counter,
) -> Result<Vec<f64>> {
    let n_agents = model.num_agents();
    let total: f64 = atoms.iter().map(|a| a.p).sum();
    let mut marginal: BTreeMap<Vec<Vec<u16>>, f64> = BTreeMap::new();
    for a in &atoms {
        *marginal.entry(a.h.clone()).or_default() += a.p;
    }
    let atoms: Vec<Atom> = atoms
        .into_iter()
        .filter(|a| marginal[&a.h] / total > ADMISSIBLE)
        .collect();
    let mut domains: Vec<Vec<Vec<u16>>> = vec![Vec::new(); n_agents];
    for a in &atoms {
        for n in 0..n_agents {
            if !domains[n].contains(&a.h[n]) {
                domains[n].push(a.h[n].clone());
            }
        }
    }
    // one odometer digit per (agent, reachable history)
    let slots: Vec<(usize, usize)> = (0..n_agents)
        .flat_map(|n| (0..domains[n].len()).map(move |k| (n, k)))
        .collect();
    let lookup: Vec<Vec<usize>> = atoms
        .iter()
        .map(|a| {
            (0..n_agents)
                .map(|n| {
                    let k = domains[n].iter().position(|x| *x == a.h[n]).unwrap();
                    slots.iter().position(|&sl| sl == (n, k)).unwrap()
                })
                .collect()
        })
        .collect();
    let mut digits = vec![0usize; slots.len()];
    let mut out = Vec::new();
    loop {
        let mut now = 0.0;
        let mut children: BTreeMap<usize, Vec<Atom>> = BTreeMap::new();
        for (atom, slot) in atoms.iter().zip(&lookup) {
            let a: Vec<usize> = slot.iter().map(|&i| digits[i]).collect();
            let ja = model.joint_action_index(&a);
            now += atom.p * model.reward(atom.s, ja);
            if t == model.horizon() {
                continue;
            }
            for (s2, &pt) in model.transition_row(atom.s, ja).iter().enumerate() {
                for (jo, &po) in model.observation_row(s2).iter().enumerate() {
                    if pt * po <= 0.0 {
                        continue;
                    }
                    let o = model.decode_joint_obs(jo);
                    let h = atom
                        .h
                        .iter()
                        .enumerate()
                        .map(|(n, hn)| {
                            let mut x = hn.clone();
                            x.push(a[n] as u16);
                            x.push(o.private[n] as u16);
                            x
                        })
                        .collect();
                    children.entry(o.common).or_default().push(Atom {
                        s: s2,
                        h,
                        p: atom.p * pt * po,
                    });
                }
            }
        }
        let mut sums = vec![now];
        for kids in children.into_values() {
            let mass: f64 = kids.iter().map(|a| a.p).sum();
            if mass / total <= ADMISSIBLE {
                continue;
            }
            let sub = policy_values(model, kids, t + 1, counter)?;
            counter.spend((sums.len() * sub.len()) as u128)?;
            sums = sums
                .iter()
                .flat_map(|&x| sub.iter().map(move |&y| x + y))
                .collect();
        }
        counter.spend(sums.len() as u128)?;
        out.extend(sums);

        // advance the odometer; the last slot is the least significant digit
        let mut i = slots.len();
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            let radix = model.num_actions(slots[i].0);
            digits[i] += 1;
            if digits[i] < radix {
                break;
            }
            digits[i] = 0;
        }
    }
}
