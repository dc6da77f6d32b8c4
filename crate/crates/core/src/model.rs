//! The Dec-POMDP tuple, its document format, and its one-step kernels.
//!
//! Joint actions and private-observation tuples are flattened in mixed radix
//! with agent 1 as the most significant digit; a joint observation index is
//! `o0 * prod(|O^n|) + private index`, matching the nesting `[o0][o1]..[oN]`
//! of the document's `observation` tensor.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result, Violation};
use crate::{ADMISSIBLE, EQ_TOL};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JointAction(pub Vec<usize>);

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JointObservation {
    pub common: usize,
    pub private: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecPomdp {
    states: Vec<String>,
    actions: Vec<Vec<String>>,
    common_obs: Vec<String>,
    private_obs: Vec<Vec<String>>,
    /// `[s][ja][s']`
    transition: Vec<f64>,
    /// `[s][jo]`
    observation: Vec<f64>,
    /// `[s][ja]`
    reward: Vec<f64>,
    initial: Vec<f64>,
    horizon: usize,
    reward_bound: f64,
    n_joint_actions: usize,
    n_private_joint: usize,
    /// `[s][ja][jo]`: P(O_{t+1} = jo | S_t = s, A_t = ja)
    next_obs: Vec<f64>,
}

/// On-disk layout. Tensors stay as raw JSON so shape errors can name their path.
#[derive(Serialize, Deserialize)]
struct Document {
    num_agents: usize,
    states: Vec<String>,
    actions: Vec<Vec<String>>,
    common_obs: Vec<String>,
    private_obs: Vec<Vec<String>>,
    transition: Value,
    observation: Value,
    reward: Value,
    initial: Vec<f64>,
    horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reward_bound: Option<f64>,
}

/// Raw model contents, before validation.
#[derive(Debug, Clone)]
pub struct ModelParts {
    pub states: Vec<String>,
    pub actions: Vec<Vec<String>>,
    pub common_obs: Vec<String>,
    pub private_obs: Vec<Vec<String>>,
    pub transition: Vec<f64>,
    pub observation: Vec<f64>,
    pub reward: Vec<f64>,
    pub initial: Vec<f64>,
    pub horizon: usize,
    pub reward_bound: Option<f64>,
}

fn product(xs: impl IntoIterator<Item = usize>) -> usize {
    xs.into_iter().product()
}

fn flatten(value: &Value, shape: &[usize], path: &str, out: &mut Vec<f64>) -> Result<()> {
    match shape.split_first() {
        None => match value.as_f64() {
            Some(x) => {
                out.push(x);
                Ok(())
            }
            None => Err(Error::Field {
                field: path.to_string(),
                message: format!("expected a number, found {value}"),
            }),
        },
        Some((&len, rest)) => {
            let arr = value.as_array().ok_or_else(|| Error::Field {
                field: path.to_string(),
                message: "expected an array".into(),
            })?;
            if arr.len() != len {
                return Err(Error::Field {
                    field: path.to_string(),
                    message: format!("expected {len} entries, found {}", arr.len()),
                });
            }
            for (i, v) in arr.iter().enumerate() {
                flatten(v, rest, &format!("{path}[{i}]"), out)?;
            }
            Ok(())
        }
    }
}

fn nest(data: &[f64], shape: &[usize]) -> Value {
    match shape.split_first() {
        None => number(data[0]),
        Some((&len, rest)) => {
            let stride = product(rest.iter().copied());
            Value::Array(
                (0..len)
                    .map(|i| nest(&data[i * stride..(i + 1) * stride], rest))
                    .collect(),
            )
        }
    }
}

fn number(x: f64) -> Value {
    serde_json::Number::from_f64(x)
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

fn push(v: &mut Vec<Violation>, locus: String, message: String) {
    v.push(Violation { locus, message });
}

impl DecPomdp {
    /// Validates `parts`, reporting every violated invariant at once.
    pub fn new(parts: ModelParts) -> Result<Self> {
        let mut v = Vec::new();

        if parts.actions.is_empty() {
            push(&mut v, "actions".into(), "at least one agent is required".into());
        }
        if parts.actions.len() != parts.private_obs.len() {
            push(&mut v, 
                "private_obs".into(),
                format!(
                    "{} agents declared by actions but {} private alphabets",
                    parts.actions.len(),
                    parts.private_obs.len()
                ),
            );
        }
        if parts.states.is_empty() {
            push(&mut v, "states".into(), "must be nonempty".into());
        }
        if parts.common_obs.is_empty() {
            push(&mut v, "common_obs".into(), "must be nonempty".into());
        }
        for (n, a) in parts.actions.iter().enumerate() {
            if a.is_empty() {
                push(&mut v, format!("actions[{n}]"), "must be nonempty".into());
            }
        }
        for (n, o) in parts.private_obs.iter().enumerate() {
            if o.is_empty() {
                push(&mut v, format!("private_obs[{n}]"), "must be nonempty".into());
            }
        }
        if parts.horizon == 0 {
            push(&mut v, "horizon".into(), "must be at least 1".into());
        }
        if !v.is_empty() {
            return Err(Error::Validation(v));
        }

        let ns = parts.states.len();
        let na = product(parts.actions.iter().map(Vec::len));
        let npriv = product(parts.private_obs.iter().map(Vec::len));
        let no = parts.common_obs.len() * npriv;

        let sizes = [
            ("transition", parts.transition.len(), ns * na * ns),
            ("observation", parts.observation.len(), ns * no),
            ("reward", parts.reward.len(), ns * na),
            ("initial", parts.initial.len(), ns),
        ];
        for (field, got, want) in sizes {
            if got != want {
                push(&mut v, field.into(), format!("expected {want} entries, found {got}"));
            }
        }
        if !v.is_empty() {
            return Err(Error::Validation(v));
        }

        let action_names = |ja: usize| -> String {
            decode(ja, &radices(&parts.actions))
                .iter()
                .map(|a| a.to_string())
                .collect::<Vec<_>>()
                .join("][")
        };
        let mut check_row = |locus: String, row: &[f64]| {
            let mut sum = 0.0;
            for (i, &p) in row.iter().enumerate() {
                if !p.is_finite() || p < 0.0 {
                    push(&mut v, format!("{locus}[{i}]"), format!("invalid probability {p}"));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > EQ_TOL {
                push(&mut v, locus, format!("sums to {sum}, expected 1"));
            }
        };
        check_row("initial".into(), &parts.initial);
        for s in 0..ns {
            for ja in 0..na {
                let row = &parts.transition[(s * na + ja) * ns..(s * na + ja + 1) * ns];
                check_row(format!("transition[{s}][{}]", action_names(ja)), row);
            }
            check_row(
                format!("observation[{s}]"),
                &parts.observation[s * no..(s + 1) * no],
            );
        }

        let max_abs = parts.reward.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        for (i, r) in parts.reward.iter().enumerate() {
            if !r.is_finite() {
                push(&mut v, 
                    format!("reward[{}][{}]", i / na, action_names(i % na)),
                    format!("non-finite reward {r}"),
                );
            }
        }
        let reward_bound = match parts.reward_bound {
            None => max_abs,
            Some(b) => {
                if !(b >= 0.0) || !b.is_finite() {
                    push(&mut v, "reward_bound".into(), format!("must be a nonnegative real, got {b}"));
                } else if max_abs > b + EQ_TOL {
                    push(&mut v, 
                        "reward_bound".into(),
                        format!("{b} is below max |reward| = {max_abs}"),
                    );
                }
                b
            }
        };
        if !v.is_empty() {
            return Err(Error::Validation(v));
        }

        let mut next_obs = vec![0.0; ns * na * no];
        for s in 0..ns {
            for ja in 0..na {
                let base = (s * na + ja) * no;
                for s2 in 0..ns {
                    let pt = parts.transition[(s * na + ja) * ns + s2];
                    if pt == 0.0 {
                        continue;
                    }
                    for jo in 0..no {
                        next_obs[base + jo] += pt * parts.observation[s2 * no + jo];
                    }
                }
            }
        }

        Ok(DecPomdp {
            states: parts.states,
            actions: parts.actions,
            common_obs: parts.common_obs,
            private_obs: parts.private_obs,
            transition: parts.transition,
            observation: parts.observation,
            reward: parts.reward,
            initial: parts.initial,
            horizon: parts.horizon,
            reward_bound,
            n_joint_actions: na,
            n_private_joint: npriv,
            next_obs,
        })
    }

    pub fn parts(&self) -> ModelParts {
        ModelParts {
            states: self.states.clone(),
            actions: self.actions.clone(),
            common_obs: self.common_obs.clone(),
            private_obs: self.private_obs.clone(),
            transition: self.transition.clone(),
            observation: self.observation.clone(),
            reward: self.reward.clone(),
            initial: self.initial.clone(),
            horizon: self.horizon,
            reward_bound: Some(self.reward_bound),
        }
    }

    pub fn num_agents(&self) -> usize {
        self.actions.len()
    }
    pub fn num_states(&self) -> usize {
        self.states.len()
    }
    pub fn num_actions(&self, agent: usize) -> usize {
        self.actions[agent].len()
    }
    pub fn num_joint_actions(&self) -> usize {
        self.n_joint_actions
    }
    pub fn num_common_obs(&self) -> usize {
        self.common_obs.len()
    }
    pub fn num_private_obs(&self, agent: usize) -> usize {
        self.private_obs[agent].len()
    }
    pub fn num_joint_obs(&self) -> usize {
        self.common_obs.len() * self.n_private_joint
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn reward_bound(&self) -> f64 {
        self.reward_bound
    }
    pub fn initial(&self) -> &[f64] {
        &self.initial
    }
    pub fn state_names(&self) -> &[String] {
        &self.states
    }
    pub fn action_radices(&self) -> Vec<usize> {
        radices(&self.actions)
    }

    /// Mixed-radix flattening of a joint action (agent 1 most significant).
    pub fn joint_action_index(&self, a: &[usize]) -> usize {
        a.iter()
            .zip(&self.actions)
            .fold(0, |acc, (&x, alpha)| acc * alpha.len() + x)
    }

    pub fn decode_joint_action(&self, ja: usize) -> JointAction {
        JointAction(decode(ja, &radices(&self.actions)))
    }

    pub fn joint_obs_index(&self, o: &JointObservation) -> usize {
        let p = o
            .private
            .iter()
            .zip(&self.private_obs)
            .fold(0, |acc, (&x, alpha)| acc * alpha.len() + x);
        o.common * self.n_private_joint + p
    }

    pub fn decode_joint_obs(&self, jo: usize) -> JointObservation {
        JointObservation {
            common: jo / self.n_private_joint,
            private: decode(jo % self.n_private_joint, &radices(&self.private_obs)),
        }
    }

    /// P_T(· | s, ja) over next states.
    pub fn transition_row(&self, s: usize, ja: usize) -> &[f64] {
        let ns = self.states.len();
        let base = (s * self.n_joint_actions + ja) * ns;
        &self.transition[base..base + ns]
    }

    /// P_O(· | s) over flattened joint observations.
    pub fn observation_row(&self, s: usize) -> &[f64] {
        let no = self.num_joint_obs();
        &self.observation[s * no..(s + 1) * no]
    }

    /// P(O_{t+1} | S_t = s, A_t = ja), marginalising the next state.
    pub fn next_obs_row(&self, s: usize, ja: usize) -> &[f64] {
        let no = self.num_joint_obs();
        let base = (s * self.n_joint_actions + ja) * no;
        &self.next_obs[base..base + no]
    }

    pub fn reward(&self, s: usize, ja: usize) -> f64 {
        self.reward[s * self.n_joint_actions + ja]
    }

    fn check_state(&self, s: usize) -> Result<()> {
        if s >= self.states.len() {
            return Err(Error::Index {
                what: "state",
                index: s,
                size: self.states.len(),
            });
        }
        Ok(())
    }

    fn check_action(&self, a: &JointAction) -> Result<usize> {
        if a.0.len() != self.num_agents() {
            return Err(Error::Index {
                what: "agent",
                index: a.0.len(),
                size: self.num_agents(),
            });
        }
        for (n, &x) in a.0.iter().enumerate() {
            if x >= self.actions[n].len() {
                return Err(Error::Index {
                    what: "action",
                    index: x,
                    size: self.actions[n].len(),
                });
            }
        }
        Ok(self.joint_action_index(&a.0))
    }

    /// All `(s', o)` with positive probability P_T(s'|s,a) P_O(o|s').
    pub fn next_joint_distribution(
        &self,
        s: usize,
        a: &JointAction,
    ) -> Result<Vec<((usize, JointObservation), f64)>> {
        self.check_state(s)?;
        let ja = self.check_action(a)?;
        let mut out = Vec::new();
        for (s2, &pt) in self.transition_row(s, ja).iter().enumerate() {
            if pt <= 0.0 {
                continue;
            }
            for (jo, &po) in self.observation_row(s2).iter().enumerate() {
                if po > 0.0 {
                    out.push(((s2, self.decode_joint_obs(jo)), pt * po));
                }
            }
        }
        Ok(out)
    }

    pub fn expected_reward(&self, s: usize, a: &JointAction) -> Result<f64> {
        self.check_state(s)?;
        let ja = self.check_action(a)?;
        Ok(self.reward(s, ja))
    }

    /// Joint observations with positive probability at t=1, grouped by common part.
    pub fn initial_atoms(&self) -> Vec<(usize, JointObservation, f64)> {
        let mut out = Vec::new();
        for (s, &p) in self.initial.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            for (jo, &po) in self.observation_row(s).iter().enumerate() {
                if p * po > 0.0 {
                    out.push((s, self.decode_joint_obs(jo), p * po));
                }
            }
        }
        out
    }

    /// Parses and validates a model document.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Document = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if doc.num_agents != doc.actions.len() {
            return Err(Error::Validation(vec![Violation {
                locus: "num_agents".into(),
                message: format!(
                    "declares {} agents but `actions` lists {}",
                    doc.num_agents,
                    doc.actions.len()
                ),
            }]));
        }
        let ns = doc.states.len();
        let mut a_shape: Vec<usize> = doc.actions.iter().map(Vec::len).collect();
        let mut o_shape = vec![doc.common_obs.len()];
        o_shape.extend(doc.private_obs.iter().map(Vec::len));

        let mut t_shape = vec![ns];
        t_shape.append(&mut a_shape.clone());
        t_shape.push(ns);
        let mut transition = Vec::new();
        flatten(&doc.transition, &t_shape, "transition", &mut transition)?;

        let mut obs_shape = vec![ns];
        obs_shape.append(&mut o_shape);
        let mut observation = Vec::new();
        flatten(&doc.observation, &obs_shape, "observation", &mut observation)?;

        let mut r_shape = vec![ns];
        r_shape.append(&mut a_shape);
        let mut reward = Vec::new();
        flatten(&doc.reward, &r_shape, "reward", &mut reward)?;

        DecPomdp::new(ModelParts {
            states: doc.states,
            actions: doc.actions,
            common_obs: doc.common_obs,
            private_obs: doc.private_obs,
            transition,
            observation,
            reward,
            initial: doc.initial,
            horizon: doc.horizon,
            reward_bound: doc.reward_bound,
        })
    }

    /// Canonical document form; `from_json(to_json(m)) == m`.
    pub fn to_json(&self) -> String {
        let ns = self.states.len();
        let a_shape: Vec<usize> = self.actions.iter().map(Vec::len).collect();
        let mut t_shape = vec![ns];
        t_shape.extend(&a_shape);
        t_shape.push(ns);
        let mut o_shape = vec![ns, self.common_obs.len()];
        o_shape.extend(self.private_obs.iter().map(Vec::len));
        let mut r_shape = vec![ns];
        r_shape.extend(&a_shape);
        let doc = Document {
            num_agents: self.num_agents(),
            states: self.states.clone(),
            actions: self.actions.clone(),
            common_obs: self.common_obs.clone(),
            private_obs: self.private_obs.clone(),
            transition: nest(&self.transition, &t_shape),
            observation: nest(&self.observation, &o_shape),
            reward: nest(&self.reward, &r_shape),
            initial: self.initial.clone(),
            horizon: self.horizon,
            reward_bound: Some(self.reward_bound),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("model serialises");
        s.push('\n');
        s
    }

    /// Whether a probability counts as reachable.
    pub fn admissible(p: f64) -> bool {
        p > ADMISSIBLE
    }
}

fn radices(alphabets: &[Vec<String>]) -> Vec<usize> {
    alphabets.iter().map(Vec::len).collect()
}

/// Mixed-radix decoding, most significant digit first.
pub fn decode(mut index: usize, radices: &[usize]) -> Vec<usize> {
    let mut out = vec![0; radices.len()];
    for (slot, &r) in out.iter_mut().zip(radices).rev() {
        *slot = index % r;
        index /= r;
    }
    out
}

/// The two-agent, two-state fixture shipped with the crate.
pub fn coin2() -> DecPomdp {
    DecPomdp::from_json(include_str!("../fixtures/coin2.json")).expect("coin2 fixture is valid")
}

/// A two-agent fixture with informative private observations.
pub fn signal2() -> DecPomdp {
    DecPomdp::from_json(include_str!("../fixtures/signal2.json"))
        .expect("signal2 fixture is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trivial() -> &'static str {
        r#"{"num_agents":1,"states":["s"],"actions":[["a"]],"common_obs":["o"],
            "private_obs":[["p"]],"transition":[[[1.0]]],"observation":[[[1.0]]],
            "reward":[[0.0]],"initial":[1.0],"horizon":1}"#
    }

    #[test]
    fn degenerate_model_defaults_reward_bound() {
        let m = DecPomdp::from_json(trivial()).unwrap();
        assert_eq!(m.reward_bound(), 0.0);
        assert_eq!(m.num_agents(), 1);
    }

    #[test]
    fn short_transition_row_is_named() {
        let text = coin2().to_json().replacen("0.9", "0.8", 1);
        let err = DecPomdp::from_json(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("transition[0][0][0]"), "{msg}");
        assert!(msg.contains("sums to 0.9"), "{msg}");
    }

    #[test]
    fn all_violations_reported() {
        let mut parts = coin2().parts();
        parts.initial = vec![0.5, 0.4];
        parts.transition[0] = -0.1;
        parts.reward_bound = Some(0.1);
        let Err(Error::Validation(v)) = DecPomdp::new(parts) else {
            panic!("expected validation error")
        };
        let loci: Vec<_> = v.iter().map(|x| x.locus.as_str()).collect();
        assert!(loci.contains(&"initial"));
        assert!(loci.contains(&"transition[0][0][0][0]"));
        assert!(loci.contains(&"transition[0][0][0]"));
        assert!(loci.contains(&"reward_bound"));
    }

    #[test]
    fn shape_errors_name_the_path() {
        let text = trivial().replace(r#""reward":[[0.0]]"#, r#""reward":[[0.0, 1.0]]"#);
        let msg = DecPomdp::from_json(&text).unwrap_err().to_string();
        assert!(msg.contains("reward[0]"), "{msg}");
    }

    #[test]
    fn malformed_text_has_line() {
        let err = DecPomdp::from_json("{\n \"num_agents\": ,}").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn coin2_shape_and_round_trip() {
        let m = coin2();
        assert_eq!(m.num_states(), 2);
        assert_eq!(m.num_agents(), 2);
        assert_eq!(m.num_common_obs(), 1);
        assert_eq!(m.num_private_obs(0), 1);
        assert_eq!(m.horizon(), 2);
        let text = m.to_json();
        let back = DecPomdp::from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn coin2_reward_bound_is_max_abs() {
        let m = coin2();
        let mut max = 0.0f64;
        for s in 0..m.num_states() {
            for a0 in 0..2 {
                for a1 in 0..2 {
                    let r = m.expected_reward(s, &JointAction(vec![a0, a1])).unwrap();
                    max = max.max(r.abs());
                }
            }
        }
        assert_eq!(max, m.reward_bound());
    }

    #[test]
    fn coin2_next_distribution_by_hand() {
        // Raw tensors read straight from the fixture document.
        let doc: serde_json::Value =
            serde_json::from_str(include_str!("../fixtures/coin2.json")).unwrap();
        let m = coin2();
        for s in 0..2 {
            for a0 in 0..2 {
                for a1 in 0..2 {
                    let got = m
                        .next_joint_distribution(s, &JointAction(vec![a0, a1]))
                        .unwrap();
                    let mut total = 0.0;
                    for s2 in 0..2 {
                        let pt = doc["transition"][s][a0][a1][s2].as_f64().unwrap();
                        let po = doc["observation"][s2][0][0][0].as_f64().unwrap();
                        let want = pt * po;
                        let found = got
                            .iter()
                            .find(|((x, _), _)| *x == s2)
                            .map(|(_, p)| *p)
                            .unwrap_or(0.0);
                        assert!((found - want).abs() < 1e-12);
                        total += found;
                    }
                    assert!((total - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn deterministic_and_uniform_kernels() {
        let mut parts = DecPomdp::from_json(trivial()).unwrap().parts();
        parts.states = vec!["x".into(), "y".into()];
        parts.transition = vec![0.5, 0.5, 0.0, 1.0];
        parts.observation = vec![1.0, 1.0];
        parts.reward = vec![0.0, 0.0];
        parts.initial = vec![1.0, 0.0];
        let m = DecPomdp::new(parts).unwrap();
        let d = m.next_joint_distribution(0, &JointAction(vec![0])).unwrap();
        assert_eq!(d.len(), 2);
        assert!(d.iter().all(|(_, p)| (*p - 0.5).abs() < 1e-15));
        let d = m.next_joint_distribution(1, &JointAction(vec![0])).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].1, 1.0);
        assert!(m.next_joint_distribution(2, &JointAction(vec![0])).is_err());
        assert!(m.expected_reward(0, &JointAction(vec![1])).is_err());
    }

    #[test]
    fn index_round_trips() {
        let m = signal2();
        for ja in 0..m.num_joint_actions() {
            assert_eq!(m.joint_action_index(&m.decode_joint_action(ja).0), ja);
        }
        for jo in 0..m.num_joint_obs() {
            assert_eq!(m.joint_obs_index(&m.decode_joint_obs(jo)), jo);
        }
    }
}
