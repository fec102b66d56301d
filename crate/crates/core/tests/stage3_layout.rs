mod common;

use bpopt_core::domain::Grid;
use bpopt_core::stage1::Stage1Solution;
use bpopt_core::stage2::PackingLayout;
use bpopt_core::stage3::{
    build_stage3_model, check_route_grids, Penalties, solve_stage3, Stage3Config, Stage3Outcome, ViolationKind,
};
use common::*;

fn routing_only(inst: &bpopt_core::domain::ProblemInstance, penalties: Penalties) -> Stage3Outcome {
    let s1 = Stage1Solution::empty(0, inst.num_items as usize);
    let packing = PackingLayout::empty(inst.width, inst.height);
    let cfg = Stage3Config {
        penalties,
        ..Default::default()
    };
    let mut m = build_stage3_model(inst, &s1, &packing, &cfg).unwrap();
    solve_stage3(&mut m).0
}

#[test]
fn two_source_grids_are_accepted() {
    let inst = two_source_routing();
    let (c, i, r, k) = two_source_routing_grids();
    let v = check_route_grids(&c, &i, &r, &k, &inst, &[]);
    assert!(v.is_empty(), "{v:?}");
}

#[test]
fn two_source_solver_matches_hand_layout_cost() {
    let inst = two_source_routing();
    let Stage3Outcome::Solved(sol) = routing_only(&inst, Penalties::default()) else {
        panic!()
    };
    assert_eq!(sol.objective_value, 10);
    let v = check_route_grids(&sol.conveyors, &sol.inserters, &sol.routes, &sol.carrying, &inst, &[]);
    assert!(v.is_empty(), "{v:?}");
}

#[test]
fn strip_of_three_bridges_with_an_inserter() {
    // The middle conveyor is replaced by a cheaper belt-to-belt inserter.
    let inst = strip(3);
    let Stage3Outcome::Solved(sol) = routing_only(&inst, Penalties::default()) else {
        panic!()
    };
    assert_eq!(sol.objective_value, 5);
    assert_eq!(sol.inserters.cells(), &[0, 3, 0]);
    assert_eq!(sol.routes.cells(), &[1, 2, 3]);
}

#[test]
fn strip_of_three_with_costly_inserters_is_all_conveyors() {
    let inst = strip(3);
    let penalties = Penalties {
        conveyor: 2,
        inserter: 3,
    };
    let Stage3Outcome::Solved(sol) = routing_only(&inst, penalties) else {
        panic!()
    };
    assert_eq!(sol.objective_value, 6);
    assert_eq!(sol.conveyors.cells()[..2], [3, 3]);
    assert_eq!(sol.routes.cells(), &[1, 2, 3]);
}

#[test]
fn conveyor_cycle_is_rejected() {
    let inst = instance((2, 2), 1, 1, &[], (2, 2), vec![]);
    let (c, i) = objects(&["ES", "NW"]);
    let r = numbers(&[&[1, 2], &[4, 3]]);
    let k = numbers(&[&[1, 1], &[1, 1]]);
    let v = check_route_grids(&c, &i, &r, &k, &inst, &[]);
    assert!(!v.is_empty());
    assert!(v.iter().any(|v| matches!(
        v.kind,
        ViolationKind::NoRouteStart | ViolationKind::RouteNotIncreasing { .. }
    )));
}

#[test]
fn two_assembler_carrying_is_accepted() {
    let inst = two_assembler_square();
    let (c, i, r, k, p) = two_assembler_square_layout();
    let v = check_route_grids(&c, &i, &r, &k, &inst, &p);
    assert!(v.is_empty(), "{v:?}");
}

#[test]
fn empty_instance_solves_to_nothing() {
    let mut inst = strip(2);
    inst.sources.clear();
    inst.out_item = 1;
    let Stage3Outcome::Solved(sol) = routing_only(&inst, Penalties::default()) else {
        panic!()
    };
    assert_eq!(sol.objective_value, 0);
    assert_eq!(sol.conveyors, Grid::filled(2, 1, 0));
}
