mod common;

use std::collections::BTreeSet;

use bpopt_core::domain::{Direction, Grid};
use bpopt_core::fdsolver::{Cmp, Constraint, Lit, Model, Objective, SearchConfig, SearchMode, Var, VarOrder};
use bpopt_core::io::{export_blueprint_string, import_blueprint_string, render_ascii, render_legend, NameTable, RenderStyle};
use bpopt_core::stage1::{record_attempt, Stage1Ledger, Stage1Solution};
use bpopt_core::stage3::Placement;
use bpopt_core::validator::Blueprint;
use common::*;
use proptest::prelude::*;

const VARS: usize = 3;
const LO: i32 = -2;
const HI: i32 = 2;

/// A constraint over the first `VARS` variables, checked independently of
/// the solver.
#[derive(Clone, Debug)]
enum Rule {
    Linear(Vec<i64>, Cmp, i64),
    Half(usize, i32, Vec<i64>, i64),
    Clause(Vec<(usize, bool, i32)>),
    Element(usize, Vec<i32>, usize),
    Table(Vec<[i32; 2]>),
    Distinct,
}

fn lit(v: Var, eq: bool, c: i32) -> Lit {
    if eq {
        Lit::Eq(v, c)
    } else {
        Lit::Ge(v, c)
    }
}

impl Rule {
    fn holds(&self, x: &[i32]) -> bool {
        let dot = |c: &[i64]| c.iter().zip(x).map(|(&a, &b)| a * b as i64).sum::<i64>();
        match self {
            Rule::Linear(c, Cmp::Le, r) => dot(c) <= *r,
            Rule::Linear(c, Cmp::Eq, r) => dot(c) == *r,
            Rule::Linear(c, Cmp::Ge, r) => dot(c) >= *r,
            Rule::Half(v, k, c, r) => x[*v] != *k || dot(c) <= *r,
            Rule::Clause(ls) => ls.iter().any(|&(v, eq, c)| if eq { x[v] == c } else { x[v] >= c }),
            Rule::Element(i, arr, r) => {
                let idx = x[*i];
                idx >= 0 && (idx as usize) < arr.len() && arr[idx as usize] == x[*r]
            }
            Rule::Table(ts) => ts.iter().any(|t| t[0] == x[0] && t[1] == x[1]),
            Rule::Distinct => (0..VARS).all(|a| (a + 1..VARS).all(|b| x[a] == 0 || x[a] != x[b])),
        }
    }

    fn post(&self, m: &mut Model, vs: &[Var]) {
        let terms = |c: &[i64]| c.iter().zip(vs).map(|(&a, &v)| (a, v)).collect::<Vec<_>>();
        let c = match self {
            Rule::Linear(c, cmp, r) => Constraint::Linear {
                terms: terms(c),
                cmp: *cmp,
                rhs: *r,
            },
            Rule::Half(v, k, c, r) => Constraint::implies_le(Lit::Eq(vs[*v], *k), terms(c), *r),
            Rule::Clause(ls) => Constraint::Clause(ls.iter().map(|&(v, eq, c)| lit(vs[v], eq, c)).collect()),
            Rule::Element(i, arr, r) => Constraint::Element {
                index: vs[*i],
                array: arr.clone(),
                result: vs[*r],
            },
            Rule::Table(ts) => Constraint::Table {
                vars: vs[..2].to_vec(),
                tuples: ts.iter().map(|t| t.to_vec()).collect(),
            },
            Rule::Distinct => Constraint::AllDifferentExcept0(vs.to_vec()),
        };
        m.post(c).unwrap();
    }
}

fn rule() -> impl Strategy<Value = Rule> {
    let coefs = prop::collection::vec(-3i64..=3, VARS);
    let cmp = prop_oneof![Just(Cmp::Le), Just(Cmp::Eq), Just(Cmp::Ge)];
    let val = LO..=HI;
    prop_oneof![
        (coefs.clone(), cmp, -4i64..=4).prop_map(|(c, k, r)| Rule::Linear(c, k, r)),
        (0..VARS, val.clone(), coefs, -4i64..=4).prop_map(|(v, k, c, r)| Rule::Half(v, k, c, r)),
        prop::collection::vec((0..VARS, any::<bool>(), val.clone()), 1..3).prop_map(Rule::Clause),
        (0..VARS, prop::collection::vec(val.clone(), 1..4), 0..VARS).prop_map(|(i, a, r)| Rule::Element(i, a, r)),
        prop::collection::vec([val.clone(), val], 0..5).prop_map(Rule::Table),
        Just(Rule::Distinct),
    ]
}

fn all_points() -> Vec<Vec<i32>> {
    let mut pts = vec![Vec::new()];
    for _ in 0..VARS {
        pts = pts
            .into_iter()
            .flat_map(|p| {
                (LO..=HI).map(move |v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    pts
}

fn build(rules: &[Rule]) -> (Model, Vec<Var>) {
    let mut m = Model::new();
    let vs: Vec<Var> = (0..VARS).map(|_| m.int(LO, HI)).collect();
    for r in rules {
        r.post(&mut m, &vs);
    }
    (m, vs)
}

fn blueprint(w: u32, h: u32, codes: &[u8], rate: u64, recipe: Option<u32>) -> Blueprint {
    let mut conv = Grid::filled(w, h, 0u8);
    let mut ins = Grid::filled(w, h, 0u8);
    for (i, &c) in codes.iter().enumerate() {
        let at = bpopt_core::GridCoord::from_index(i, w);
        match c {
            1..=4 => conv.set(at, c),
            5..=8 => ins.set(at, c - 4),
            _ => {}
        }
    }
    let blocks: Vec<Placement> = recipe
        .filter(|_| w >= 3 && h >= 3)
        .map(|recipe| Placement { anchor: at(1, 1), recipe })
        .into_iter()
        .collect();
    Blueprint::from_parts(&conv, &ins, &blocks, rate)
}

fn blueprint_strategy() -> impl Strategy<Value = Blueprint> {
    (1u32..=6, 1u32..=6)
        .prop_flat_map(|(w, h)| {
            (
                Just((w, h)),
                prop::collection::vec(0u8..9, (w * h) as usize),
                0u64..500,
                prop::option::of(1u32..30),
            )
        })
        .prop_map(|((w, h), codes, rate, recipe)| blueprint(w, h, &codes, rate, recipe))
}

/// Two blueprints of the same size that differ in a few cells.
fn blueprint_pair() -> impl Strategy<Value = (Blueprint, Blueprint)> {
    (1u32..=5, 1u32..=5)
        .prop_flat_map(|(w, h)| {
            let n = (w * h) as usize;
            (
                Just((w, h)),
                prop::collection::vec(0u8..9, n),
                prop::collection::vec((0..n, 0u8..9), 0..3),
                prop::option::of(1u32..30),
                prop::option::of(1u32..30),
                0u64..3,
            )
        })
        .prop_map(|((w, h), codes, edits, ra, rb, rate)| {
            let mut other = codes.clone();
            for (i, c) in edits {
                other[i] = c;
            }
            (blueprint(w, h, &codes, 1, ra), blueprint(w, h, &other, rate, rb))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn enumeration_finds_exactly_the_models(rules in prop::collection::vec(rule(), 1..4), min_dom in any::<bool>()) {
        let expected: BTreeSet<Vec<i32>> = all_points().into_iter().filter(|x| rules.iter().all(|r| r.holds(x))).collect();
        let (mut m, vs) = build(&rules);
        let cfg = SearchConfig {
            mode: SearchMode::Enumerate,
            var_order: if min_dom { VarOrder::MinDomain } else { VarOrder::Input },
            ..Default::default()
        };
        let found: Vec<Vec<i32>> = m.solve(&cfg).solutions.iter().map(|s| vs.iter().map(|&v| s.value(v)).collect()).collect();
        let unique: BTreeSet<Vec<i32>> = found.iter().cloned().collect();
        prop_assert_eq!(unique.len(), found.len(), "duplicate solutions");
        prop_assert_eq!(unique, expected);
    }

    #[test]
    fn optimisation_reaches_the_enumerated_optimum(
        rules in prop::collection::vec(rule(), 1..4),
        weights in prop::collection::vec(-3i64..=3, VARS),
        maximize in any::<bool>(),
    ) {
        let value = |x: &Vec<i32>| weights.iter().zip(x).map(|(&w, &v)| w * v as i64).sum::<i64>();
        let feasible = all_points().into_iter().filter(|x| rules.iter().all(|r| r.holds(x)));
        let best = if maximize { feasible.map(|x| value(&x)).max() } else { feasible.map(|x| value(&x)).min() };
        let (mut m, vs) = build(&rules);
        let terms: Vec<(i64, Var)> = weights.iter().copied().zip(vs.iter().copied()).collect();
        let cfg = SearchConfig {
            objective: if maximize { Objective::Maximize(terms) } else { Objective::Minimize(terms) },
            ..Default::default()
        };
        let got = m.solve(&cfg).outcome.solution().map(|s| {
            let x: Vec<i32> = vs.iter().map(|&v| s.value(v)).collect();
            assert!(rules.iter().all(|r| r.holds(&x)));
            assert_eq!(s.objective, Some(value(&x)));
            value(&x)
        });
        prop_assert_eq!(got, best);
    }

    #[test]
    fn exported_strings_import_back(bp in blueprint_strategy()) {
        let names = NameTable::default();
        let s = export_blueprint_string(&bp, &names);
        prop_assert_eq!(import_blueprint_string(&s, &names).unwrap(), bp);
    }

    #[test]
    fn rendering_tells_blueprints_apart((a, b) in blueprint_pair(), arrows in any::<bool>()) {
        let style = if arrows { RenderStyle::Arrows } else { RenderStyle::Letters };
        let names = NameTable::default();
        let text = |bp: &Blueprint| format!("{}{}", render_ascii(bp, style), render_legend(bp, style, &names));
        prop_assert_eq!(a == b, text(&a) == text(&b));
        let grid = render_ascii(&a, style);
        prop_assert_eq!(grid.lines().count() as u32, a.height);
        prop_assert!(grid.lines().all(|l| l.chars().count() as u32 == a.width));
    }

    #[test]
    fn direction_codes_round_trip(code in 1u8..=4) {
        let d = Direction::from_code(code).unwrap();
        prop_assert_eq!(d.code(), code);
        prop_assert_eq!(d.opposite().opposite(), d);
    }

    #[test]
    fn ledger_never_admits_a_repeat(
        picks in prop::collection::vec((0u32..3, 0u32..3, 0u32..4, 0u32..4), 1..20),
    ) {
        let mut ledger = Stage1Ledger::default();
        let mut seen = BTreeSet::new();
        for (r0, r1, t0, t1) in picks {
            let mut s = Stage1Solution::empty(2, 2);
            s.assembler_recipes = vec![r0, r1];
            s.inserters_out = vec![t0, t1];
            let key = (r0, r1, t0, t1);
            match record_attempt(&ledger, &s) {
                Ok(next) => {
                    prop_assert!(seen.insert(key));
                    prop_assert_eq!(next.len(), ledger.len() + 1);
                    ledger = next;
                }
                Err(_) => prop_assert!(seen.contains(&key)),
            }
        }
    }
}
