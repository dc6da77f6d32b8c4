//! Belief common states: the conditional law of (state, joint private
//! history) given the common state, its Bayesian update, and the DPs and
//! sufficiency checks built on it.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::compression::PrivateCompression;
use crate::histories::{trajectory, FcsKey, FcsNode, FpsTuple, Prescription, PrivateHistory};
use crate::model::DecPomdp;
use crate::ADMISSIBLE;

mod dp;
mod spi;

pub use dp::{solve_bcs_fps, solve_bcs_spi, BeliefSolution};
pub use spi::{
    check_spi, verify_propositions, ConditionReport, ConditionResult, PropositionReport,
    PropositionResult,
};

/// One atom `P(s, h | h0)` of a belief, with `h` given as domain positions.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefAtom {
    pub state: usize,
    pub hist: Vec<u32>,
    pub p: f64,
}

/// A distribution over (state, joint private history), with per-agent
/// sorted domains. Atoms are sorted by history, then state.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    pub t: usize,
    pub domains: Vec<Vec<PrivateHistory>>,
    pub atoms: Vec<BeliefAtom>,
}

/// Canonical hashable form of a belief: sorted support with probabilities
/// rounded to multiples of [`FINGERPRINT_QUANTUM`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Fingerprint(pub String);

pub const FINGERPRINT_QUANTUM: f64 = 1e-9;

pub(crate) fn quantize(p: f64) -> i64 {
    (p / FINGERPRINT_QUANTUM).round() as i64
}

impl BeliefState {
    /// Normalises unnormalised masses, drops joint histories whose
    /// conditional probability is not admissible, and renormalises.
    /// Returns the pre-normalisation total alongside the belief.
    pub fn from_masses(
        t: usize,
        masses: BTreeMap<(Vec<PrivateHistory>, usize), f64>,
    ) -> Option<(f64, BeliefState)> {
        let total: f64 = masses.values().sum();
        if total <= ADMISSIBLE {
            return None;
        }
        let mut marginal: BTreeMap<&[PrivateHistory], f64> = BTreeMap::new();
        for ((h, _), p) in &masses {
            *marginal.entry(h.as_slice()).or_default() += p;
        }
        let n_agents = masses.keys().next().map(|(h, _)| h.len()).unwrap_or(0);
        let mut domains = vec![Vec::new(); n_agents];
        let mut kept_total = 0.0;
        for (h, p) in &marginal {
            if p / total > ADMISSIBLE {
                kept_total += p;
                for (n, hn) in h.iter().enumerate() {
                    domains[n].push(hn.clone());
                }
            }
        }
        for d in &mut domains {
            d.sort();
            d.dedup();
        }
        let mut atoms = Vec::new();
        for ((h, s), p) in &masses {
            if marginal[h.as_slice()] / total <= ADMISSIBLE {
                continue;
            }
            let hist = h
                .iter()
                .zip(&domains)
                .map(|(x, d)| d.binary_search(x).unwrap() as u32)
                .collect();
            atoms.push(BeliefAtom {
                state: *s,
                hist,
                p: p / kept_total,
            });
        }
        atoms.sort_by(|a, b| a.hist.cmp(&b.hist).then(a.state.cmp(&b.state)));
        Some((total, BeliefState { t, domains, atoms }))
    }

    /// The root beliefs, one per admissible first common observation.
    pub fn initial(model: &DecPomdp) -> Vec<(usize, f64, BeliefState)> {
        let mut by_o0: BTreeMap<usize, BTreeMap<(Vec<PrivateHistory>, usize), f64>> =
            BTreeMap::new();
        for (s, o, p) in model.initial_atoms() {
            let h = o.private.iter().map(|&x| PrivateHistory::initial(x)).collect();
            *by_o0.entry(o.common).or_default().entry((h, s)).or_default() += p;
        }
        by_o0
            .into_iter()
            .filter_map(|(o0, m)| BeliefState::from_masses(1, m).map(|(p, b)| (o0, p, b)))
            .collect()
    }

    /// Groups atoms into FPS tuples, in canonical history order.
    pub fn fps(&self, n_states: usize) -> Vec<FpsTuple> {
        let mut out: Vec<FpsTuple> = Vec::new();
        for a in &self.atoms {
            match out.last_mut() {
                Some(f) if f.hist == a.hist => {
                    f.p += a.p;
                    f.joint[a.state] += a.p;
                }
                _ => {
                    let mut joint = vec![0.0; n_states];
                    joint[a.state] = a.p;
                    out.push(FpsTuple {
                        hist: a.hist.clone(),
                        p: a.p,
                        joint,
                    });
                }
            }
        }
        out
    }

    pub fn joint_history(&self, hist: &[u32]) -> Vec<PrivateHistory> {
        hist.iter()
            .zip(&self.domains)
            .map(|(&k, d)| d[k as usize].clone())
            .collect()
    }

    /// Atom masses keyed by concrete histories.
    pub fn masses(&self) -> BTreeMap<(Vec<PrivateHistory>, usize), f64> {
        self.atoms
            .iter()
            .map(|a| ((self.joint_history(&a.hist), a.state), a.p))
            .collect()
    }

    pub fn fingerprint(&self) -> Fingerprint {
        let mut s = String::new();
        write!(s, "t{}", self.t).unwrap();
        for a in &self.atoms {
            s.push('|');
            write!(s, "{}:", a.state).unwrap();
            for (n, &k) in a.hist.iter().enumerate() {
                if n > 0 {
                    s.push(',');
                }
                write!(s, "{}", self.domains[n][k as usize]).unwrap();
            }
            write!(s, ":{}", quantize(a.p)).unwrap();
        }
        Fingerprint(s)
    }

    /// Largest atom-wise difference to `other`, matching atoms by concrete
    /// histories; an atom missing on one side counts with its full mass.
    pub fn max_atom_diff(&self, other: &BeliefState) -> f64 {
        let a = self.masses();
        let b = other.masses();
        let mut worst = 0.0f64;
        for (k, p) in &a {
            worst = worst.max((p - b.get(k).copied().unwrap_or(0.0)).abs());
        }
        for (k, q) in &b {
            if !a.contains_key(k) {
                worst = worst.max(q.abs());
            }
        }
        worst
    }
}

/// All children of `pi` under `g`: `(o0, P(o0 | pi, g), updated belief)`.
pub fn successors(
    model: &DecPomdp,
    pi: &BeliefState,
    g: &Prescription,
) -> Vec<(usize, f64, BeliefState)> {
    let obs: Vec<_> = (0..model.num_joint_obs())
        .map(|jo| model.decode_joint_obs(jo))
        .collect();
    let mut by_o0: BTreeMap<usize, BTreeMap<(Vec<PrivateHistory>, usize), f64>> = BTreeMap::new();
    for atom in &pi.atoms {
        let a = g.actions(&atom.hist);
        let ja = g.joint_action(model, &atom.hist);
        for (s2, &pt) in model.transition_row(atom.state, ja).iter().enumerate() {
            if pt <= 0.0 {
                continue;
            }
            for (jo, &po) in model.observation_row(s2).iter().enumerate() {
                if po <= 0.0 {
                    continue;
                }
                let o = &obs[jo];
                let h: Vec<PrivateHistory> = (0..a.len())
                    .map(|n| pi.domains[n][atom.hist[n] as usize].extend(a[n], o.private[n]))
                    .collect();
                *by_o0
                    .entry(o.common)
                    .or_default()
                    .entry((h, s2))
                    .or_default() += atom.p * pt * po;
            }
        }
    }
    by_o0
        .into_iter()
        .filter_map(|(o0, m)| BeliefState::from_masses(pi.t + 1, m).map(|(p, b)| (o0, p, b)))
        .collect()
}

/// The Bayesian update of `pi` after prescription `g` and common observation `o0`.
pub fn bayes_update(
    model: &DecPomdp,
    pi: &BeliefState,
    g: &Prescription,
    o0: usize,
) -> Result<BeliefState> {
    for (n, tab) in g.tables.iter().enumerate() {
        if tab.len() != pi.domains[n].len() {
            return Err(Error::DomainMismatch {
                locus: format!("belief at t={}", pi.t),
                message: format!(
                    "agent {n} prescription covers {} histories, belief has {}",
                    tab.len(),
                    pi.domains[n].len()
                ),
            });
        }
    }
    successors(model, pi, g)
        .into_iter()
        .find(|(o, _, _)| *o == o0)
        .map(|(_, _, b)| b)
        .ok_or(Error::ZeroBranch {
            fcs: format!("belief at t={}", pi.t),
            o0,
        })
}

/// Fingerprint of P(S_t, Ẑ_t | h0): the node's belief pushed through the
/// private labels.
pub fn label_fingerprint(node: &FcsNode, pc: &PrivateCompression) -> Fingerprint {
    let mut mass: BTreeMap<(Vec<u32>, usize), f64> = BTreeMap::new();
    for f in &node.fps {
        let z = pc.joint_label(node.id, &f.hist);
        for (s, &p) in f.joint.iter().enumerate() {
            if p > 0.0 {
                *mass.entry((z.clone(), s)).or_default() += p;
            }
        }
    }
    let mut out = format!("t{}", node.t);
    for ((z, s), p) in mass {
        let z: Vec<String> = z.iter().map(|x| x.to_string()).collect();
        write!(out, "|{s}:{}:{}", z.join(","), quantize(p)).unwrap();
    }
    Fingerprint(out)
}

/// P(S_t, H_t | h0) by direct forward enumeration.
pub fn compute_bcs(model: &DecPomdp, fcs: &FcsKey) -> Result<BeliefState> {
    trajectory::conditional(model, fcs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::histories::{FcsTree, PrescriptionSpace};
    use crate::model::{coin2, signal2, ModelParts};
    use crate::Budget;

    fn two_state_uniform() -> DecPomdp {
        DecPomdp::new(ModelParts {
            states: vec!["x".into(), "y".into()],
            actions: vec![vec!["a".into()]],
            common_obs: vec!["o".into()],
            private_obs: vec![vec!["p".into()]],
            transition: vec![0.0, 1.0, 1.0, 0.0],
            observation: vec![1.0, 1.0],
            reward: vec![0.0, 0.0],
            initial: vec![0.5, 0.5],
            horizon: 2,
            reward_bound: None,
        })
        .unwrap()
    }

    #[test]
    fn uniform_prior_identical_observations() {
        let m = two_state_uniform();
        let b = compute_bcs(&m, &FcsKey::root(0)).unwrap();
        assert_eq!(b.atoms.len(), 2);
        assert!(b.atoms.iter().all(|a| (a.p - 0.5).abs() < 1e-15));
    }

    #[test]
    fn sure_observation_is_pure_push_forward() {
        let m = two_state_uniform();
        let roots = BeliefState::initial(&m);
        let g = PrescriptionSpace::new(&m, vec![1]).decode(0);
        let next = bayes_update(&m, &roots[0].2, &g, 0).unwrap();
        // swap dynamics: both atoms move, masses preserved
        assert_eq!(next.atoms.len(), 2);
        assert_eq!(next.atoms[0].state, 0);
        assert!((next.atoms[0].p - 0.5).abs() < 1e-15);
        assert!(bayes_update(&m, &roots[0].2, &g, 1).is_err());
    }

    #[test]
    fn point_mass_stays_point_mass() {
        let mut parts = two_state_uniform().parts();
        parts.initial = vec![1.0, 0.0];
        let m = DecPomdp::new(parts).unwrap();
        let b = compute_bcs(&m, &FcsKey(vec![0, 0, 0])).unwrap();
        assert_eq!(b.atoms.len(), 1);
        assert_eq!(b.atoms[0].state, 1);
        assert_eq!(b.atoms[0].p, 1.0);
    }

    #[test]
    fn recursive_matches_direct_on_fixtures() {
        for m in [coin2(), signal2()] {
            let tree = FcsTree::build(&m, Budget::default()).unwrap();
            for node in tree.nodes() {
                let direct = compute_bcs(&m, &node.key).unwrap();
                assert!(direct.max_atom_diff(&node.belief) < 1e-9, "{}", node.key);
                assert_eq!(direct.domains, node.belief.domains);
            }
        }
    }

    #[test]
    fn fingerprint_rounds_probabilities() {
        let m = signal2();
        let mut b = compute_bcs(&m, &FcsKey::root(1)).unwrap();
        let f = b.fingerprint();
        b.atoms[0].p += 1e-13;
        assert_eq!(b.fingerprint(), f);
        b.atoms[0].p += 1e-6;
        assert_ne!(b.fingerprint(), f);
    }
}
