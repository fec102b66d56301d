mod common;

use std::collections::BTreeMap;

use bpopt_core::orchestrator::{optimize, LayoutResult, RunConfig, RunOutcome};
use bpopt_core::validator::{inserter_counts, validate_structure};
use common::*;

fn in_out_counts(inst: &bpopt_core::ProblemInstance) -> (u32, u32) {
    let report = optimize(inst, &RunConfig::default());
    let bp = report.blueprint().expect("blueprint");
    assert!(validate_structure(bp, inst).is_empty());
    let counts = inserter_counts(bp, inst);
    assert_eq!(counts.len(), 1);
    let (_, ins, outs) = &counts[0];
    (ins.values().sum(), *outs)
}

#[test]
fn inserters_follow_recipe_ratio() {
    assert_eq!(in_out_counts(&ratio_strip(1, 1, 50)), (1, 1));
    assert_eq!(in_out_counts(&ratio_strip(2, 1, 50)), (2, 1));
    assert_eq!(in_out_counts(&ratio_strip(1, 2, 100)), (1, 2));
}

#[test]
fn one_to_one_predicts_recipe_rate() {
    let inst = ratio_strip(1, 1, 50);
    let report = optimize(&inst, &RunConfig::default());
    let bp = report.blueprint().unwrap();
    assert_eq!(bp.predicted_rate, 50);
    assert_eq!(bp.placements().len(), 1);
    assert_eq!(bp.inserter_count(), 2);
}

#[test]
fn second_assembler_rejected_on_small_grid() {
    let inst = two_fit_one_works();
    let report = optimize(&inst, &RunConfig::default());
    let bp = report.blueprint().expect("blueprint");
    assert_eq!(bp.placements().len(), 1);
    assert!(validate_structure(bp, &inst).is_empty());
    let rejected_pair = report
        .attempts
        .iter()
        .filter(|a| a.solution.active().count() == 2)
        .any(|a| a.packings.iter().all(|p| p.result != LayoutResult::Accepted));
    assert!(rejected_pair, "{:#?}", report.attempts);
}

#[test]
fn tiny_grid_is_infeasible() {
    let inst = instance((1, 1), 2, 2, &[], (1, 1), vec![recipe(2, 1, 50, &[(1, 1)])]);
    let report = optimize(&inst, &RunConfig::default());
    assert_eq!(report.outcome, RunOutcome::Infeasible);
}

#[test]
fn pass_through_without_recipes() {
    let inst = strip(3);
    let report = optimize(&inst, &RunConfig::default());
    let bp = report.blueprint().expect("blueprint");
    assert!(bp.placements().is_empty());
    assert!(validate_structure(bp, &inst).is_empty());
}

#[test]
fn attempt_caps_end_in_limit() {
    let inst = two_fit_one_works();
    let cfg = RunConfig {
        max_stage1_attempts: 1,
        ..RunConfig::default()
    };
    let report = optimize(&inst, &cfg);
    if report.blueprint().is_none() {
        assert_eq!(report.outcome, RunOutcome::LimitReached);
        assert!(report.limit_hit);
    }
}

fn dump_files(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn dumps_are_reproducible() {
    let inst = ratio_strip(2, 1, 50);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let cfg = RunConfig {
            dump_dir: Some(dir.path().to_path_buf()),
            ..RunConfig::default()
        };
        optimize(&inst, &cfg);
    }
    let (fa, fb) = (dump_files(a.path()), dump_files(b.path()));
    assert!(fa.contains_key("report.json") && fa.contains_key("blueprint.json"));
    assert_eq!(fa, fb);
}

#[test]
fn parallel_layout_matches_sequential() {
    let inst = two_fit_one_works();
    let seq = optimize(&inst, &RunConfig::default());
    let par = optimize(
        &inst,
        &RunConfig {
            workers: 4,
            ..RunConfig::default()
        },
    );
    assert_eq!(seq.outcome, par.outcome);
}
