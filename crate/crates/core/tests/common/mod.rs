#![allow(dead_code, clippy::type_complexity)]

pub mod stage1_enum;

use std::collections::BTreeMap;

use bpopt_core::domain::{Direction, Grid, GridCoord, ItemId, ProblemInstance, Recipe, Source};
use bpopt_core::stage3::Placement;

pub fn at(x: u32, y: u32) -> GridCoord {
    GridCoord::new(x, y)
}

pub fn recipe(product: ItemId, qty_produced: u32, rate: u32, ingredients: &[(ItemId, u32)]) -> Recipe {
    Recipe {
        product,
        qty_produced,
        rate,
        ingredients: ingredients.iter().copied().collect::<BTreeMap<_, _>>(),
    }
}

pub fn instance(
    (width, height): (u32, u32),
    num_items: u32,
    out_item: ItemId,
    sources: &[(u32, u32, ItemId, u32)],
    destination: (u32, u32),
    recipes: Vec<Recipe>,
) -> ProblemInstance {
    ProblemInstance {
        width,
        height,
        num_items,
        out_item,
        inserter_rate: 50,
        conveyor_capacity: 450,
        sources: sources
            .iter()
            .map(|&(x, y, item, rate)| Source {
                at: at(x, y),
                item,
                rate,
            })
            .collect(),
        destination: at(destination.0, destination.1),
        recipes,
    }
}

/// Object grids from text rows: `NSEW` conveyors, `nsew` inserters, anything
/// else empty.
pub fn objects(rows: &[&str]) -> (Grid<u8>, Grid<u8>) {
    let mut conv = Vec::new();
    let mut ins = Vec::new();
    for row in rows {
        let mut c = Vec::new();
        let mut i = Vec::new();
        for ch in row.chars() {
            let up = Direction::from_letter(ch).map_or(0, |d| d.code());
            let low = if ch.is_ascii_lowercase() {
                Direction::from_letter(ch.to_ascii_uppercase()).map_or(0, |d| d.code())
            } else {
                0
            };
            c.push(up);
            i.push(low);
        }
        conv.push(c);
        ins.push(i);
    }
    (Grid::from_rows(conv).unwrap(), Grid::from_rows(ins).unwrap())
}

pub fn numbers(rows: &[&[u32]]) -> Grid<u32> {
    Grid::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
}

/// Two item-1 sources (top centre, bottom left) feeding a destination on the
/// right edge of a 3×3 grid.
pub fn two_source_routing() -> ProblemInstance {
    instance((3, 3), 1, 1, &[(2, 1, 1, 100), (1, 3, 1, 100)], (3, 2), vec![])
}

pub fn two_source_routing_grids() -> (Grid<u8>, Grid<u8>, Grid<u32>, Grid<u32>) {
    let (c, i) = objects(&[".S.", "EEE", "N.."]);
    let routes = numbers(&[&[0, 1, 0], &[2, 3, 4], &[1, 0, 0]]);
    let carrying = numbers(&[&[0, 1, 0], &[1, 1, 1], &[1, 0, 0]]);
    (c, i, routes, carrying)
}

/// Source and destination at the two ends of a 1-tile-high strip.
pub fn strip(len: u32) -> ProblemInstance {
    instance((len, 1), 1, 1, &[(1, 1, 1, 100)], (len, 1), vec![])
}

/// Two assemblers in a 6×6 grid: item 1 → 2 on the left, 1 + 2 → 3 on the
/// right, one item-1 source bottom left, destination bottom right.
pub fn two_assembler_square() -> ProblemInstance {
    instance(
        (6, 6),
        3,
        3,
        &[(1, 6, 1, 200)],
        (6, 6),
        vec![recipe(2, 1, 50, &[(1, 1)]), recipe(3, 1, 50, &[(1, 1), (2, 1)])],
    )
}

pub fn two_assembler_square_layout() -> (Grid<u8>, Grid<u8>, Grid<u32>, Grid<u32>, Vec<Placement>) {
    let (c, i) = objects(&[
        "......", //
        "......",
        "......",
        "n.snns",
        "n.ENnS",
        "EEEENE",
    ]);
    let routes = numbers(&[
        &[0, 0, 0, 0, 0, 0],
        &[0, 0, 0, 0, 0, 0],
        &[0, 0, 0, 0, 0, 0],
        &[3, 0, 1, 4, 7, 1],
        &[2, 0, 2, 3, 6, 2],
        &[1, 2, 3, 4, 5, 3],
    ]);
    let carrying = numbers(&[
        &[2, 2, 2, 3, 3, 3],
        &[2, 2, 2, 3, 3, 3],
        &[2, 2, 2, 3, 3, 3],
        &[1, 0, 2, 2, 1, 3],
        &[1, 0, 2, 2, 1, 3],
        &[1, 1, 1, 1, 1, 3],
    ]);
    let placements = vec![
        Placement {
            anchor: at(1, 1),
            recipe: 2,
        },
        Placement {
            anchor: at(4, 1),
            recipe: 3,
        },
    ];
    (c, i, routes, carrying, placements)
}

/// A 3-wide, 5-high strip with one single-ingredient recipe, as used to
/// show inserter counts following the recipe ratio.
pub fn ratio_strip(qty_in: u32, qty_out: u32, rate: u32) -> ProblemInstance {
    instance(
        (3, 5),
        2,
        2,
        &[(1, 1, 1, 400)],
        (3, 1),
        vec![recipe(2, qty_out, rate, &[(1, qty_in)])],
    )
}

/// 5×6 grid where two assemblers fit geometrically but only one can be wired.
pub fn two_fit_one_works() -> ProblemInstance {
    instance((5, 6), 2, 2, &[(1, 1, 1, 400)], (5, 1), vec![recipe(2, 1, 50, &[(1, 2)])])
}

/// Two assemblers stacked in a 5×8 grid sharing one item-2 belt: the lower
/// assembler (3 ← 2×1 + 1×2) picks from the belt first, the upper one
/// (4 ← 3 + 2) further downstream. `item2_rate` sets the belt supply.
pub fn shared_belt(item2_rate: u32) -> ProblemInstance {
    instance(
        (5, 8),
        4,
        4,
        &[(3, 4, 1, 100), (5, 8, 2, item2_rate)],
        (5, 1),
        vec![recipe(3, 1, 25, &[(1, 2), (2, 1)]), recipe(4, 1, 25, &[(3, 1), (2, 1)])],
    )
}

pub fn shared_belt_blueprint() -> bpopt_core::validator::Blueprint {
    let (c, i) = objects(&[
        "###eE", //
        "###wW",
        "###.N",
        "nSW.N",
        "ns..N",
        "###wN",
        "###.N",
        "###.N",
    ]);
    let placements = [
        Placement {
            anchor: at(1, 1),
            recipe: 4,
        },
        Placement {
            anchor: at(1, 6),
            recipe: 3,
        },
    ];
    bpopt_core::validator::Blueprint::from_parts(&c, &i, &placements, 25)
}

/// One layout-stage case: instance, a fixed stage-1 answer and packing, and
/// the same assemblers in the form the brute-force oracle takes.
pub struct LayoutCase {
    pub inst: ProblemInstance,
    pub stage1: bpopt_core::stage1::Stage1Solution,
    pub packing: bpopt_core::stage2::PackingLayout,
    pub assemblers: Vec<bpopt_core::validator::OracleAssembler>,
}

pub fn packing_with(width: u32, height: u32, anchors: &[GridCoord]) -> bpopt_core::stage2::PackingLayout {
    let mut p = bpopt_core::stage2::PackingLayout::empty(width, height);
    for &a in anchors {
        p.assembler_layout.set(a, 1);
        p.anchors.push(a);
        p.positions.push(Vec::new());
    }
    p
}

/// Random small layout cases (at most 12 tiles, at most 2 items). Roughly a
/// third place one assembler turning item 1 into item 2 on one of
/// `block_shapes` instead.
pub fn layout_corpus(seed: u64, count: usize, block_shapes: &[(u32, u32)]) -> Vec<LayoutCase> {
    use bpopt_core::stage1::Stage1Solution;
    use bpopt_core::validator::OracleAssembler;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let shapes: Vec<(u32, u32)> = (1..=12u32)
        .flat_map(|w| (1..=12u32).map(move |h| (w, h)))
        .filter(|&(w, h)| w * h <= 12 && w * h >= 2)
        .collect();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let with_block = rng.gen_bool(0.35);
        let (w, h) = if with_block {
            *block_shapes.choose(&mut rng).unwrap()
        } else {
            *shapes.choose(&mut rng).unwrap()
        };
        let mut tiles: Vec<GridCoord> = (1..=h).flat_map(|y| (1..=w).map(move |x| at(x, y))).collect();
        let mut anchors = Vec::new();
        if with_block {
            let a = at(rng.gen_range(1..=w - 2), rng.gen_range(1..=h - 2));
            tiles.retain(|&c| !bpopt_core::stage2::block_contains(a, c));
            anchors.push(a);
        }
        tiles.shuffle(&mut rng);
        let num_items = if with_block { 2 } else { rng.gen_range(1..=2) };
        let n_sources = rng.gen_range(1..=2.min(tiles.len() - 1));
        let sources: Vec<(u32, u32, ItemId, u32)> = tiles[..n_sources]
            .iter()
            .map(|c| {
                let item = if with_block { 1 } else { rng.gen_range(1..=num_items) };
                (c.x, c.y, item, 100)
            })
            .collect();
        let dest = tiles[n_sources];
        let out_item = if with_block { 2 } else { rng.gen_range(1..=num_items) };
        let recipes = if with_block { vec![recipe(2, 1, 50, &[(1, 1)])] } else { Vec::new() };
        let inst = instance((w, h), num_items, out_item, &sources, (dest.x, dest.y), recipes);

        let mut stage1 = Stage1Solution::empty(anchors.len(), num_items as usize);
        let mut assemblers = Vec::new();
        for (k, &a) in anchors.iter().enumerate() {
            let ins = rng.gen_range(1..=2u32);
            let outs = rng.gen_range(1..=2u32);
            stage1.num_assemblers += 1;
            stage1.assembler_recipes[k] = 2;
            stage1.assembler_rates[k] = 50;
            stage1.inserters_in[k][0] = ins;
            stage1.inserters_out[k] = outs;
            stage1.consuming[k][0] = 50;
            assemblers.push(OracleAssembler {
                placement: Placement { anchor: a, recipe: 2 },
                inserters_in: BTreeMap::from([(1, ins)]),
                inserters_out: outs,
            });
        }
        out.push(LayoutCase {
            packing: packing_with(w, h, &anchors),
            inst,
            stage1,
            assemblers,
        });
    }
    out
}

/// Solves each case with the layout model and checks it against the
/// brute-force oracle, the structural validator and the route bound.
/// Returns (feasible cases, feasible cases with an assembler).
pub fn compare_layouts(cases: &[LayoutCase], penalties: bpopt_core::Penalties) -> Result<(usize, usize), String> {
    use bpopt_core::orchestrator::assemble_blueprint;
    use bpopt_core::stage3::{build_stage3_model, solve_stage3, Stage3Config, Stage3Outcome};
    use bpopt_core::validator::{brute_force_layout_oracle, validate_structure};

    let (mut sat, mut with_block) = (0, 0);
    for (n, case) in cases.iter().enumerate() {
        let cfg = Stage3Config {
            penalties,
            ..Default::default()
        };
        let mut m = build_stage3_model(&case.inst, &case.stage1, &case.packing, &cfg)
            .map_err(|e| format!("case {n}: {e:?}"))?;
        let model = match solve_stage3(&mut m).0 {
            Stage3Outcome::Solved(l) => {
                let bp = assemble_blueprint(&case.stage1, &l, &case.inst).map_err(|e| format!("case {n}: {e:?}"))?;
                let v = validate_structure(&bp, &case.inst);
                if !v.is_empty() {
                    return Err(format!("case {n}: {v:?}"));
                }
                let bound = case.inst.width + case.inst.height;
                if l.routes.cells().iter().any(|&r| r > bound) {
                    return Err(format!("case {n}: route value above {bound}"));
                }
                if l.cost(penalties) != l.objective_value {
                    return Err(format!("case {n}: objective {} but cost {}", l.objective_value, l.cost(penalties)));
                }
                Some(l.objective_value)
            }
            Stage3Outcome::Infeasible => None,
            Stage3Outcome::LimitReached(_) => return Err(format!("case {n}: unbounded search hit a limit")),
        };
        let oracle = brute_force_layout_oracle(&case.inst, &case.assemblers, penalties).map_err(|e| format!("case {n}: {e}"))?;
        if model != oracle {
            return Err(format!("case {n}: model {model:?} vs oracle {oracle:?} on {:?}", case.inst));
        }
        if model.is_some() {
            sat += 1;
            with_block += usize::from(!case.assemblers.is_empty());
        }
    }
    Ok((sat, with_block))
}

/// Three items in an 8×8 square: 2 ← 1 and 3 ← 2, with one item-1 source
/// in the bottom-left corner and the destination top right.
pub fn chain_square() -> ProblemInstance {
    instance(
        (8, 8),
        3,
        3,
        &[(1, 8, 1, 400)],
        (8, 1),
        vec![recipe(2, 1, 50, &[(1, 1)]), recipe(3, 1, 50, &[(2, 1)])],
    )
}
