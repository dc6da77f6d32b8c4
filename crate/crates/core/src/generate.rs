//! Random small models for property testing.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{DecPomdp, ModelParts};

/// Shape limits of generated models. Sizes are drawn uniformly from
/// `1..=max` (at least 2 states).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    pub agents: usize,
    pub max_states: usize,
    pub actions: usize,
    pub max_common_obs: usize,
    pub max_private_obs: usize,
    pub horizon: usize,
    /// Probability that a distribution entry is forced to zero.
    pub sparsity: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            agents: 2,
            max_states: 3,
            actions: 2,
            max_common_obs: 2,
            max_private_obs: 2,
            horizon: 2,
            sparsity: 0.25,
        }
    }
}

/// A random distribution of length `n` with some exact zeros, rounded to
/// three decimals so documents stay readable.
fn distribution(rng: &mut impl Rng, n: usize, sparsity: f64) -> Vec<f64> {
    let mut w: Vec<u32> = (0..n)
        .map(|_| if rng.gen_bool(sparsity) { 0 } else { rng.gen_range(1..=20) })
        .collect();
    if w.iter().all(|&x| x == 0) {
        w[rng.gen_range(0..n)] = 1;
    }
    let total: u32 = w.iter().sum();
    let mut p: Vec<f64> = w.iter().map(|&x| (x as f64 / total as f64 * 1000.0).round() / 1000.0).collect();
    // push rounding residue onto the largest entry
    let residue = 1.0 - p.iter().sum::<f64>();
    let (imax, _) = p
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |b, (i, &x)| if x > b.1 { (i, x) } else { b });
    p[imax] = ((p[imax] + residue) * 1000.0).round() / 1000.0;
    p
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn random_model(rng: &mut impl Rng, cfg: &GenConfig) -> DecPomdp {
    let n_states = rng.gen_range(2..=cfg.max_states.max(2));
    let n_common = rng.gen_range(1..=cfg.max_common_obs.max(1));
    let n_private: Vec<usize> = (0..cfg.agents)
        .map(|_| rng.gen_range(1..=cfg.max_private_obs.max(1)))
        .collect();
    let n_joint_actions = cfg.actions.pow(cfg.agents as u32);
    let n_joint_obs = n_common * n_private.iter().product::<usize>();

    let mut transition = Vec::new();
    for _ in 0..n_states * n_joint_actions {
        transition.extend(distribution(rng, n_states, cfg.sparsity));
    }
    let mut observation = Vec::new();
    for _ in 0..n_states {
        observation.extend(distribution(rng, n_joint_obs, cfg.sparsity));
    }
    let reward = (0..n_states * n_joint_actions)
        .map(|_| (rng.gen_range(-1.0..=1.0f64) * 100.0).round() / 100.0)
        .collect();
    let parts = ModelParts {
        states: names("s", n_states),
        actions: (0..cfg.agents).map(|_| names("a", cfg.actions)).collect(),
        common_obs: names("c", n_common),
        private_obs: n_private.iter().map(|&k| names("o", k)).collect(),
        transition,
        observation,
        reward,
        initial: distribution(rng, n_states, 0.0),
        horizon: cfg.horizon,
        reward_bound: None,
    };
    DecPomdp::new(parts).expect("generated distributions are valid")
}

/// The model generated from `seed`; the same seed always gives the same model.
pub fn seeded_model(seed: u64, cfg: &GenConfig) -> DecPomdp {
    random_model(&mut ChaCha8Rng::seed_from_u64(seed), cfg)
}
