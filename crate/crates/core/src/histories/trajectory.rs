//! Forward enumeration of joint trajectories consistent with a common state.
//!
//! This is deliberately independent of the recursive belief update: it keeps
//! whole trajectories and conditions only at the end, so it serves as the
//! reference the tree's beliefs are checked against.

use std::collections::BTreeMap;

use super::{FcsKey, PrescriptionSpace, PrivateHistory};
use crate::belief::BeliefState;
use crate::error::{Error, Result};
use crate::model::DecPomdp;
use crate::ADMISSIBLE;

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub hists: Vec<PrivateHistory>,
    /// Joint probability of the trajectory and the common observations so
    /// far, given the embedded prescriptions.
    pub p: f64,
}

/// Per-agent sorted domains of admissible private histories.
fn domains(trajs: &[Trajectory], n_agents: usize) -> Vec<Vec<PrivateHistory>> {
    let total: f64 = trajs.iter().map(|x| x.p).sum();
    let mut joint: BTreeMap<&[PrivateHistory], f64> = BTreeMap::new();
    for x in trajs {
        *joint.entry(&x.hists).or_default() += x.p;
    }
    let mut out = vec![Vec::new(); n_agents];
    for (h, p) in joint {
        if p / total > ADMISSIBLE {
            for (n, hn) in h.iter().enumerate() {
                out[n].push(hn.clone());
            }
        }
    }
    for d in &mut out {
        d.sort();
        d.dedup();
    }
    out
}

/// All trajectories consistent with `key`.
pub fn enumerate(model: &DecPomdp, key: &FcsKey) -> Result<Vec<Trajectory>> {
    let unreachable = || Error::Unreachable(key.to_string());
    let n = model.num_agents();
    let first = key.common_obs(1);
    if first >= model.num_common_obs() {
        return Err(unreachable());
    }
    let mut trajs: Vec<Trajectory> = model
        .initial_atoms()
        .into_iter()
        .filter(|(_, o, _)| o.common == first)
        .map(|(s, o, p)| Trajectory {
            states: vec![s],
            hists: o.private.iter().map(|&x| PrivateHistory::initial(x)).collect(),
            p,
        })
        .collect();
    if trajs.iter().map(|x| x.p).sum::<f64>() <= ADMISSIBLE {
        return Err(unreachable());
    }
    for t in 1..key.time() {
        let dom = domains(&trajs, n);
        let space = PrescriptionSpace::new(model, dom.iter().map(Vec::len).collect());
        let gi = key.prescription(t);
        if gi as u128 >= space.len() {
            return Err(unreachable());
        }
        let g = space.decode(gi);
        let o0 = key.common_obs(t + 1);
        let mut next = Vec::new();
        for x in &trajs {
            let pos: Option<Vec<usize>> = x
                .hists
                .iter()
                .zip(&dom)
                .map(|(h, d)| d.binary_search(h).ok())
                .collect();
            // inadmissible histories carry negligible mass and are dropped
            let Some(pos) = pos else { continue };
            let a: Vec<usize> = pos
                .iter()
                .enumerate()
                .map(|(m, &k)| g.tables[m][k] as usize)
                .collect();
            let s = *x.states.last().unwrap();
            let step = model.next_joint_distribution(s, &crate::model::JointAction(a.clone()))?;
            for ((s2, obs), p) in step {
                if obs.common != o0 {
                    continue;
                }
                let mut states = x.states.clone();
                states.push(s2);
                next.push(Trajectory {
                    states,
                    hists: x
                        .hists
                        .iter()
                        .enumerate()
                        .map(|(m, h)| h.extend(a[m], obs.private[m]))
                        .collect(),
                    p: x.p * p,
                });
            }
        }
        let before: f64 = trajs.iter().map(|x| x.p).sum();
        if next.iter().map(|x| x.p).sum::<f64>() / before <= ADMISSIBLE {
            return Err(unreachable());
        }
        trajs = next;
    }
    Ok(trajs)
}

/// P(S_t, H_t | h0) obtained by aggregating [`enumerate`].
pub fn conditional(model: &DecPomdp, key: &FcsKey) -> Result<BeliefState> {
    let trajs = enumerate(model, key)?;
    let mut masses: BTreeMap<(Vec<PrivateHistory>, usize), f64> = BTreeMap::new();
    for x in trajs {
        *masses
            .entry((x.hists, *x.states.last().unwrap()))
            .or_default() += x.p;
    }
    BeliefState::from_masses(key.time(), masses)
        .map(|(_, b)| b)
        .ok_or_else(|| Error::Unreachable(key.to_string()))
}
