//! Subcommand bodies. Each returns the reports it produced; `main` writes
//! them and maps the outcome to an exit status.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use ciplan_core::approx_dp::{solve_ascs_asps, solve_fcs_asps};
use ciplan_core::belief::{
    check_spi, solve_bcs_fps, solve_bcs_spi, ConditionReport, PropositionReport,
};
use ciplan_core::compression::{
    build_exact_private, build_greedy, measure_common, measure_private, CommonCompression,
    CommonDocument, Measured, MeasuredParams, PrivateCompression, PrivateDocument,
    RecursionReport, Witness,
};
use ciplan_core::exact_dp::{brute_force_value, node_rows, solve_fcs_fps, SolveReport};
use ciplan_core::histories::FcsTree;
use ciplan_core::model::DecPomdp;
use ciplan_core::verify::{check_lemmas, verify_gaps, LemmaReport};
use ciplan_core::{belief, Budget, Error, Result, EQ_TOL};

use crate::{CommonArgs, Mode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Failed,
    Budget,
}

/// One report, in both forms.
#[derive(Debug)]
pub struct Report {
    pub name: String,
    pub json: String,
    pub table: String,
}

#[derive(Debug)]
pub struct Outcome {
    pub reports: Vec<Report>,
    pub status: Status,
}

impl Outcome {
    fn single(name: &str, value: &impl Serialize, table: String, status: Status) -> Self {
        Outcome {
            reports: vec![Report {
                name: name.to_string(),
                json: json(value),
                table,
            }],
            status,
        }
    }

    /// Writes `<name>.json` and `<name>.txt` for every report.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        for r in &self.reports {
            fs::write(dir.join(format!("{}.json", r.name)), &r.json)?;
            fs::write(dir.join(format!("{}.txt", r.name)), &r.table)?;
        }
        Ok(())
    }

    pub fn table(&self) -> String {
        self.reports
            .iter()
            .map(|r| r.table.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn structured(&self) -> String {
        self.reports
            .iter()
            .map(|r| r.json.as_str())
            .collect::<Vec<_>>()
            .join("")
    }
}

fn json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialise");
    s.push('\n');
    s
}

fn missing(flag: &str, why: &str) -> Error {
    Error::Field {
        field: flag.to_string(),
        message: why.to_string(),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Field {
        field: path.display().to_string(),
        message: e.to_string(),
    })
}

fn load_model(args: &CommonArgs) -> Result<DecPomdp> {
    let path = args
        .model
        .as_deref()
        .ok_or_else(|| missing("--model", "a model document is required"))?;
    DecPomdp::from_json(&read(path)?).map_err(|e| Error::Field {
        field: path.display().to_string(),
        message: e.to_string(),
    })
}

fn budget(args: &CommonArgs) -> Budget {
    Budget(args.budget)
}

struct Loaded {
    private: Option<PrivateCompression>,
    common: Option<CommonCompression>,
}

fn load_compressions(args: &CommonArgs, tree: &FcsTree) -> Result<Loaded> {
    let mut loaded = Loaded {
        private: None,
        common: None,
    };
    for path in &args.compressions {
        let text = read(path)?;
        let locus = path.display().to_string();
        let wrap = |e: Error| Error::Field {
            field: locus.clone(),
            message: e.to_string(),
        };
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
            wrap(Error::Parse {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })
        })?;
        match value.get("kind").and_then(|k| k.as_str()) {
            Some("private") if loaded.private.is_none() => {
                let doc = PrivateDocument::from_json(&text).map_err(wrap)?;
                loaded.private = Some(doc.to_compression(tree).map_err(wrap)?);
            }
            Some("common") if loaded.common.is_none() => {
                let doc = CommonDocument::from_json(&text).map_err(wrap)?;
                if doc.mu != args.mu.as_str() {
                    return Err(wrap(missing(
                        "mu",
                        &format!("built under `{}`, but --mu is `{}`", doc.mu, args.mu.as_str()),
                    )));
                }
                loaded.common = Some(doc.to_compression(tree).map_err(wrap)?);
            }
            Some(kind @ ("private" | "common")) => {
                return Err(wrap(missing("kind", &format!("a second `{kind}` compression was given"))));
            }
            _ => return Err(wrap(missing("kind", "expected `private` or `common`"))),
        }
    }
    Ok(loaded)
}

fn need_private(l: &Loaded) -> Result<&PrivateCompression> {
    l.private
        .as_ref()
        .ok_or_else(|| missing("--compression", "a private compression is required"))
}

fn need_common(l: &Loaded) -> Result<&CommonCompression> {
    l.common
        .as_ref()
        .ok_or_else(|| missing("--compression", "a common compression is required"))
}

fn params_line(p: &MeasuredParams) -> String {
    format!(
        "eps_p={:.9e} delta_p={:.9e} eps_c={:.9e} delta_c={:.9e}\n",
        p.eps_p, p.delta_p, p.eps_c, p.delta_c
    )
}

#[derive(Serialize)]
struct ValidateReport {
    valid: bool,
    agents: usize,
    states: usize,
    actions: Vec<usize>,
    common_obs: usize,
    private_obs: Vec<usize>,
    horizon: usize,
    reward_bound: f64,
}

pub fn validate(args: &CommonArgs) -> Result<Outcome> {
    let m = load_model(args)?;
    let n = m.num_agents();
    let rep = ValidateReport {
        valid: true,
        agents: n,
        states: m.num_states(),
        actions: (0..n).map(|i| m.num_actions(i)).collect(),
        common_obs: m.num_common_obs(),
        private_obs: (0..n).map(|i| m.num_private_obs(i)).collect(),
        horizon: m.horizon(),
        reward_bound: m.reward_bound(),
    };
    let table = format!(
        "valid model: {} agent(s), {} state(s), actions {:?}, {} common / {:?} private observation(s), T={}, R={}\n",
        rep.agents, rep.states, rep.actions, rep.common_obs, rep.private_obs, rep.horizon, rep.reward_bound
    );
    Ok(Outcome::single("validate", &rep, table, Status::Ok))
}

pub fn solve(args: &CommonArgs, alg: u8) -> Result<Outcome> {
    let m = load_model(args)?;
    let report = if alg == 4 {
        let sol = solve_bcs_fps(&m, budget(args))?;
        SolveReport {
            algorithm: "4 (beliefs, full private histories)".to_string(),
            j: sol.j,
            compressions: Vec::new(),
            mu: None,
            rows: sol.rows(),
        }
    } else {
        let tree = FcsTree::build(&m, budget(args))?;
        let loaded = load_compressions(args, &tree)?;
        match alg {
            1 => {
                let sol = solve_fcs_fps(&tree);
                SolveReport {
                    algorithm: "1 (full common states, full private histories)".to_string(),
                    j: sol.j,
                    compressions: Vec::new(),
                    mu: None,
                    rows: node_rows(&tree, &sol.v, &sol.policy),
                }
            }
            2 => {
                let pc = need_private(&loaded)?;
                let sol = solve_fcs_asps(&tree, pc, budget(args))?;
                SolveReport {
                    algorithm: "2 (full common states, private labels)".to_string(),
                    j: sol.j,
                    compressions: vec![pc.id.clone()],
                    mu: None,
                    rows: sol.rows(&tree),
                }
            }
            3 => {
                let pc = need_private(&loaded)?;
                let cc = need_common(&loaded)?;
                let sol = solve_ascs_asps(&tree, pc, cc, budget(args))?;
                SolveReport {
                    algorithm: "3 (common labels, private labels)".to_string(),
                    j: sol.j,
                    compressions: vec![pc.id.clone(), cc.id.clone()],
                    mu: Some(sol.mu.clone()),
                    rows: sol.rows(),
                }
            }
            _ => {
                let pc = need_private(&loaded)?;
                let sol = solve_bcs_spi(&tree, pc, budget(args))?;
                SolveReport {
                    algorithm: "5 (beliefs, private labels)".to_string(),
                    j: sol.j,
                    compressions: vec![pc.id.clone()],
                    mu: None,
                    rows: sol.rows(),
                }
            }
        }
    };
    let table = report.table();
    Ok(Outcome::single(&format!("solve-alg{alg}"), &report, table, Status::Ok))
}

fn witnesses(pairs: [(&str, &Option<Witness>); 2]) -> BTreeMap<String, Witness> {
    pairs
        .into_iter()
        .filter_map(|(k, w)| w.clone().map(|w| (k.to_string(), w)))
        .collect()
}

pub fn compress(args: &CommonArgs, mode: Mode) -> Result<Outcome> {
    let m = load_model(args)?;
    let tree = FcsTree::build(&m, budget(args))?;
    let pc = match mode {
        Mode::Exact => build_exact_private(&tree),
        Mode::Greedy => build_greedy(&tree, args.tol_r, args.tol_o),
    };
    let pm = measure_private(&tree, &pc)?;
    let cc = CommonCompression::label_belief(&tree, &pc, budget(args))?;
    let cm = measure_common(&tree, &pc, &cc, budget(args))?;
    let private = PrivateDocument::from_compression(
        &tree,
        &pc,
        Some(Measured {
            params: MeasuredParams::private(pm.eps_p, pm.delta_p),
            witnesses: witnesses([("eps_p", &pm.eps_witness), ("delta_p", &pm.delta_witness)]),
            mu: None,
        }),
    );
    let all = MeasuredParams {
        eps_p: pm.eps_p,
        delta_p: pm.delta_p,
        eps_c: cm.eps_c,
        delta_c: cm.delta_c,
    };
    let common = CommonDocument::from_compression(
        &tree,
        &cc,
        Some(Measured {
            params: all,
            witnesses: witnesses([("eps_c", &cm.eps_witness), ("delta_c", &cm.delta_witness)]),
            mu: Some(cm.mu.clone()),
        }),
    );
    let mut ptable = format!("private compression `{}`\n", pc.id);
    for tab in &private.tables {
        let histories: usize = tab.labels.values().map(|r| r.len()).sum();
        let _ = writeln!(
            ptable,
            "  t={} agent={}: {} label(s) for {} (state, history) pair(s)",
            tab.t, tab.agent, tab.alphabet, histories
        );
    }
    ptable += &params_line(&MeasuredParams::private(pm.eps_p, pm.delta_p));
    let mut ctable = format!("common compression `{}` (mu {})\n", cc.id, cc.mu);
    for tab in &common.tables {
        let _ = writeln!(
            ctable,
            "  t={}: {} label(s) for {} common state(s)",
            tab.t,
            tab.alphabet,
            tab.labels.len()
        );
    }
    ctable += &params_line(&all);
    Ok(Outcome {
        reports: vec![
            Report {
                name: "private".to_string(),
                json: private.to_json(),
                table: ptable,
            },
            Report {
                name: "common".to_string(),
                json: common.to_json(),
                table: ctable,
            },
        ],
        status: Status::Ok,
    })
}

#[derive(Serialize)]
struct MeasureReport {
    private: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    common: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mu: Option<String>,
    params: MeasuredParams,
    witnesses: BTreeMap<String, Witness>,
}

pub fn measure(args: &CommonArgs) -> Result<Outcome> {
    let m = load_model(args)?;
    let tree = FcsTree::build(&m, budget(args))?;
    let loaded = load_compressions(args, &tree)?;
    let pc = need_private(&loaded)?;
    let pm = measure_private(&tree, pc)?;
    let mut rep = MeasureReport {
        private: pc.id.clone(),
        common: None,
        mu: None,
        params: MeasuredParams::private(pm.eps_p, pm.delta_p),
        witnesses: witnesses([("eps_p", &pm.eps_witness), ("delta_p", &pm.delta_witness)]),
    };
    if let Some(cc) = &loaded.common {
        let cm = measure_common(&tree, pc, cc, budget(args))?;
        rep.common = Some(cc.id.clone());
        rep.mu = Some(cm.mu.clone());
        rep.params.eps_c = cm.eps_c;
        rep.params.delta_c = cm.delta_c;
        rep.witnesses
            .extend(witnesses([("eps_c", &cm.eps_witness), ("delta_c", &cm.delta_witness)]));
    }
    let mut table = format!("private `{}`", rep.private);
    if let Some(c) = &rep.common {
        let _ = write!(table, "  common `{c}`");
    }
    table.push('\n');
    table += &params_line(&rep.params);
    for (k, w) in &rep.witnesses {
        let _ = writeln!(
            table,
            "  {k} attained at t={} `{}` [{}] choice {} (raw {:.9e})",
            w.t, w.fcs, w.detail, w.choice, w.raw
        );
    }
    Ok(Outcome::single("measure", &rep, table, Status::Ok))
}

pub fn verify_gap(args: &CommonArgs) -> Result<Outcome> {
    let m = load_model(args)?;
    let tree = FcsTree::build(&m, budget(args))?;
    let loaded = load_compressions(args, &tree)?;
    let pc = need_private(&loaded)?;
    let cc = need_common(&loaded)?;
    let rep = verify_gaps(&tree, pc, cc, budget(args))?;
    let status = if rep.incomplete.is_some() {
        Status::Budget
    } else if rep.pass {
        Status::Ok
    } else {
        Status::Failed
    };
    let table = rep.table();
    Ok(Outcome::single("verify-gap", &rep, table, status))
}

#[derive(Serialize)]
struct OracleReport {
    algorithm: &'static str,
    j: f64,
}

pub fn oracle(args: &CommonArgs) -> Result<Outcome> {
    let m = load_model(args)?;
    let rep = OracleReport {
        algorithm: "brute-force",
        j: brute_force_value(&m, budget(args))?,
    };
    let table = format!("algorithm {}  J = {:.12}\n", rep.algorithm, rep.j);
    Ok(Outcome::single("oracle", &rep, table, Status::Ok))
}

#[derive(Serialize)]
struct ConditionsReport {
    private_recursion: RecursionReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    common_recursion: Option<RecursionReport>,
    spi: ConditionReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    params: Option<MeasuredParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lemmas: Option<LemmaReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    propositions: Option<PropositionReport>,
    pass: bool,
}

fn recursion_line(r: &RecursionReport) -> String {
    let mut s = format!(
        "recursion `{}`: {} edge(s), {} violation(s)\n",
        r.id,
        r.edges_checked,
        r.violations.len()
    );
    if let Some(v) = r.violations.first() {
        let _ = writeln!(s, "  first: {}", v.edge);
    }
    s
}

pub fn check_conditions(args: &CommonArgs) -> Result<Outcome> {
    let m = load_model(args)?;
    let tree = FcsTree::build(&m, budget(args))?;
    let loaded = load_compressions(args, &tree)?;
    let pc = need_private(&loaded)?;
    let cc = loaded.common.as_ref();
    let private_recursion = pc.check_recursive(&tree);
    let common_recursion = match cc {
        Some(cc) if private_recursion.pass() => Some(cc.check_recursive(&tree, pc, budget(args))?),
        _ => None,
    };
    let spi = check_spi(&tree, pc, EQ_TOL);
    let recursive = private_recursion.pass() && common_recursion.as_ref().map_or(true, |r| r.pass());
    let (params, lemmas, propositions) = if recursive {
        let lemmas = check_lemmas(&tree, pc, cc, budget(args))?;
        let props = belief::verify_propositions(&tree, pc, budget(args))?;
        (Some(lemmas.params), Some(lemmas), Some(props))
    } else {
        (None, None, None)
    };
    let pass = recursive
        && lemmas.as_ref().map_or(false, |l| l.pass())
        && propositions.as_ref().map_or(false, |p| p.counterexamples() == 0);
    let rep = ConditionsReport {
        private_recursion,
        common_recursion,
        spi,
        params,
        lemmas,
        propositions,
        pass,
    };

    let mut table = recursion_line(&rep.private_recursion);
    if let Some(r) = &rep.common_recursion {
        table += &recursion_line(r);
    }
    let _ = writeln!(table, "sufficiency of `{}` (tolerance {:e}):", rep.spi.map, rep.spi.tolerance);
    for c in &rep.spi.conditions {
        let _ = writeln!(
            table,
            "  {:<5} {:>8} case(s)  max violation {:.9e}  {}",
            c.id,
            c.checked,
            c.max_violation,
            if c.pass { "pass" } else { "fail" }
        );
        if let Some(w) = &c.witness {
            let _ = writeln!(table, "        witness: {w}");
        }
        if let Some(n) = &c.note {
            let _ = writeln!(table, "        note: {n}");
        }
    }
    if let Some(p) = &rep.params {
        table += &params_line(p);
    }
    if let Some(l) = &rep.lemmas {
        table += &l.table();
    }
    if let Some(p) = &rep.propositions {
        for r in &p.results {
            let _ = writeln!(
                table,
                "{:<14} premise {:<5} conclusion {:<5} violation {:.9e}{}",
                r.id,
                r.premise,
                r.conclusion,
                r.violation,
                if r.counterexample() { "  COUNTEREXAMPLE" } else { "" }
            );
        }
    }
    let _ = writeln!(table, "overall: {}", if rep.pass { "pass" } else { "FAIL" });
    let status = if rep.pass { Status::Ok } else { Status::Failed };
    Ok(Outcome::single("check-conditions", &rep, table, status))
}
