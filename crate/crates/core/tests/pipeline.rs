//! End-to-end runs on the bundled fixtures, with the exact DP and the
//! enumeration oracle as references.

use ciplan_core::approx_dp::{
    ascs_policy, solve_ascs_asps, solve_fcs_asps, supervisor_policy_value, AspsTree,
};
use ciplan_core::belief::{check_spi, solve_bcs_fps, solve_bcs_spi};
use ciplan_core::compression::{
    build_exact_private, build_greedy, measure_common, measure_private, CommonCompression,
    CommonDocument, PrivateCompression, PrivateDocument,
};
use ciplan_core::exact_dp::{brute_force_value, evaluate_policy, solve_fcs_fps};
use ciplan_core::histories::FcsTree;
use ciplan_core::model::{coin2, signal2};
use ciplan_core::verify::{verify_gaps, BoundKind};
use ciplan_core::{Budget, EQ_TOL};

#[test]
fn fixtures_agree_with_enumeration() {
    for m in [coin2(), signal2()] {
        let tree = FcsTree::build(&m, Budget::default()).unwrap();
        let dp = solve_fcs_fps(&tree);
        let oracle = brute_force_value(&m, Budget(1 << 40)).unwrap();
        assert!((dp.j - oracle).abs() < EQ_TOL, "{} vs {}", dp.j, oracle);
        let (_, j) = evaluate_policy(&tree, &dp.policy);
        assert!((j - dp.j).abs() < EQ_TOL);
    }
}

#[test]
fn belief_programs_match_the_exact_value() {
    for m in [coin2(), signal2()] {
        let tree = FcsTree::build(&m, Budget::default()).unwrap();
        let exact = solve_fcs_fps(&tree).j;
        assert!((solve_bcs_fps(&m, Budget::default()).unwrap().j - exact).abs() < EQ_TOL);
        let pc = build_exact_private(&tree);
        assert!(check_spi(&tree, &pc, EQ_TOL).pass());
        assert!((solve_bcs_spi(&tree, &pc, Budget::default()).unwrap().j - exact).abs() < EQ_TOL);
    }
}

#[test]
fn exact_private_compression_on_coin2_is_lossless() {
    let m = coin2();
    let tree = FcsTree::build(&m, Budget::default()).unwrap();
    let pc = build_exact_private(&tree);
    let meas = measure_private(&tree, &pc).unwrap();
    assert_eq!((meas.eps_p, meas.delta_p), (0.0, 0.0));
    let exact = solve_fcs_fps(&tree);
    let restricted = solve_fcs_asps(&tree, &pc, Budget::default()).unwrap();
    for node in tree.nodes() {
        assert!((exact.v[node.id.idx()] - restricted.v[node.id.idx()]).abs() < EQ_TOL);
    }
}

#[test]
fn lossless_pipeline_on_signal2() {
    let m = signal2();
    let tree = FcsTree::build(&m, Budget::default()).unwrap();
    let pc = build_exact_private(&tree);
    let cc = CommonCompression::bcs(&tree, &pc, Budget::default()).unwrap();
    let cm = measure_common(&tree, &pc, &cc, Budget::default()).unwrap();
    assert!(cm.eps_c < EQ_TOL && cm.delta_c < EQ_TOL);
    let exact = solve_fcs_fps(&tree);
    let compressed = solve_ascs_asps(&tree, &pc, &cc, Budget::default()).unwrap();
    assert!((compressed.j - exact.j).abs() < EQ_TOL);
    let asps = AspsTree::build(&tree, &pc);
    for t in 1..=tree.horizon() {
        for &id in asps.level(t) {
            let z = cc.label(id).unwrap();
            assert!((compressed.value(t, z) - exact.v[id.idx()]).abs() < EQ_TOL);
        }
    }
    let policy = ascs_policy(&tree, &pc, &cc, &compressed);
    let achieved = supervisor_policy_value(&tree, &policy).unwrap();
    assert!((achieved - exact.j).abs() < EQ_TOL);
}

#[test]
fn lossy_pipeline_respects_every_bound() {
    let m = signal2();
    let tree = FcsTree::build(&m, Budget::default()).unwrap();
    for tol in [0.05, 0.2, 0.5] {
        let pc = build_greedy(&tree, tol, tol);
        let cc = CommonCompression::label_belief(&tree, &pc, Budget::default()).unwrap();
        let rep = verify_gaps(&tree, &pc, &cc, Budget::default()).unwrap();
        assert!(rep.pass, "{}", rep.table());
        assert!(rep.rows.iter().any(|r| r.kind == BoundKind::Thm3));
        assert!(rep.j_private <= rep.j_exact + EQ_TOL);
    }
}

#[test]
fn documents_survive_a_round_trip_through_disk() {
    let m = signal2();
    let tree = FcsTree::build(&m, Budget::default()).unwrap();
    let pc = build_greedy(&tree, 0.2, 0.2);
    let cc = CommonCompression::label_belief(&tree, &pc, Budget::default()).unwrap();
    let dir = std::env::temp_dir().join(format!("ciplan-docs-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let (pp, cp) = (dir.join("private.json"), dir.join("common.json"));
    std::fs::write(&pp, PrivateDocument::from_compression(&tree, &pc, None).to_json()).unwrap();
    std::fs::write(&cp, CommonDocument::from_compression(&tree, &cc, None).to_json()).unwrap();
    let pc2: PrivateCompression = PrivateDocument::from_json(&std::fs::read_to_string(&pp).unwrap())
        .unwrap()
        .to_compression(&tree)
        .unwrap();
    let cc2 = CommonDocument::from_json(&std::fs::read_to_string(&cp).unwrap())
        .unwrap()
        .to_compression(&tree)
        .unwrap();
    std::fs::remove_dir_all(&dir).unwrap();
    assert_eq!(pc2, pc);
    assert_eq!(cc2, cc);
}

#[test]
fn budget_caps_are_reported() {
    let m = signal2();
    match FcsTree::build(&m, Budget(10)) {
        Err(e) => assert!(e.is_budget(), "{e}"),
        Ok(_) => panic!("a cap of 10 evaluations cannot cover signal2"),
    }
    assert!(brute_force_value(&m, Budget(10)).unwrap_err().is_budget());
}
