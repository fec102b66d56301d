//! Solver-independent checks of finished blueprints.

mod flow;
mod oracle;

pub use flow::{simulate_flow, FlowError, FlowReport, Rate};
pub use oracle::{brute_force_layout_oracle, OracleAssembler, OracleError, ORACLE_MAX_ITEMS, ORACLE_MAX_TILES};

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::domain::{Direction, Grid, GridCoord, ItemId, ProblemInstance};
use crate::stage2::block_cells;
use crate::stage3::{check_route_grids, feed_graph, tile_kinds, Placement, TileKind, Violation, ViolationKind};

/// One tile of a blueprint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Cell {
    Empty,
    Conveyor { dir: Direction },
    Inserter { dir: Direction },
    /// Every cell of a block names the block's anchor and recipe.
    Assembler { anchor: GridCoord, recipe: ItemId },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Blueprint {
    pub width: u32,
    pub height: u32,
    pub cells: Grid<Cell>,
    /// Items per minute the optimiser expects at the destination.
    pub predicted_rate: u64,
}

impl Blueprint {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            cells: Grid::filled(width, height, Cell::Empty),
            predicted_rate: 0,
        }
    }

    /// Builds a blueprint from object grids (direction codes, 0 = none).
    /// Blocks are written first; transport objects never overwrite them.
    pub fn from_parts(
        conveyors: &Grid<u8>,
        inserters: &Grid<u8>,
        placements: &[Placement],
        predicted_rate: u64,
    ) -> Self {
        let mut bp = Blueprint::empty(conveyors.width(), conveyors.height());
        bp.predicted_rate = predicted_rate;
        for p in placements {
            for c in block_cells(p.anchor) {
                if c.x <= bp.width && c.y <= bp.height {
                    bp.cells.set(
                        c,
                        Cell::Assembler {
                            anchor: p.anchor,
                            recipe: p.recipe,
                        },
                    );
                }
            }
        }
        for c in bp.cells.coords().collect::<Vec<_>>() {
            if *bp.cells.get(c) != Cell::Empty {
                continue;
            }
            if let Some(dir) = Direction::from_code(*conveyors.get(c)) {
                bp.cells.set(c, Cell::Conveyor { dir });
            } else if let Some(dir) = Direction::from_code(*inserters.get(c)) {
                bp.cells.set(c, Cell::Inserter { dir });
            }
        }
        bp
    }

    /// Blocks whose anchor cell names itself, in row-major order.
    pub fn placements(&self) -> Vec<Placement> {
        self.cells
            .coords()
            .filter_map(|c| match *self.cells.get(c) {
                Cell::Assembler { anchor, recipe } if anchor == c => Some(Placement { anchor, recipe }),
                _ => None,
            })
            .collect()
    }

    pub fn object_grids(&self) -> (Grid<u8>, Grid<u8>) {
        let mut conv = Grid::filled(self.width, self.height, 0);
        let mut ins = Grid::filled(self.width, self.height, 0);
        for c in self.cells.coords() {
            match *self.cells.get(c) {
                Cell::Conveyor { dir } => conv.set(c, dir.code()),
                Cell::Inserter { dir } => ins.set(c, dir.code()),
                _ => {}
            }
        }
        (conv, ins)
    }

    pub fn count(&self, pred: impl Fn(&Cell) -> bool) -> usize {
        self.cells.cells().iter().filter(|c| pred(c)).count()
    }

    pub fn conveyor_count(&self) -> usize {
        self.count(|c| matches!(c, Cell::Conveyor { .. }))
    }

    pub fn inserter_count(&self) -> usize {
        self.count(|c| matches!(c, Cell::Inserter { .. }))
    }
}

/// Route values and carried items recomputed from the objects alone.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DerivedGrids {
    pub routes: Grid<u32>,
    pub carrying: Grid<u32>,
    /// Transport tiles left on a cycle, in row-major order.
    pub cyclic: Vec<GridCoord>,
}

/// Longest-path route labels over the feed relation plus item propagation.
/// Tiles on cycles keep route 0.
pub fn derive_grids(bp: &Blueprint, inst: &ProblemInstance) -> DerivedGrids {
    let (w, h) = (bp.width, bp.height);
    let (conv, ins) = bp.object_grids();
    let placements = bp.placements();
    let mut scratch = Vec::new();
    let kinds = tile_kinds(&conv, &ins, inst, &placements, &mut scratch);
    let (feeders, succ) = feed_graph(&kinds, inst);
    let mut routes = Grid::filled(w, h, 0u32);
    let mut carrying = Grid::filled(w, h, 0u32);

    for c in kinds.coords() {
        if let TileKind::Block(k) = *kinds.get(c) {
            carrying.set(c, placements[k].recipe);
        }
    }

    let n = (w * h) as usize;
    let mut indeg: Vec<usize> = (0..n).map(|i| feeders[i].len()).collect();
    let mut queue: VecDeque<usize> = (0..n)
        .filter(|&i| indeg[i] == 0 && kinds.cells()[i].is_transport())
        .collect();
    let mut done = vec![false; n];
    while let Some(i) = queue.pop_front() {
        done[i] = true;
        let t = GridCoord::from_index(i, w);
        let best = feeders[i].iter().map(|&u| *routes.get(u)).max().unwrap_or(0);
        routes.set(t, best + 1);
        let item = if let Some(src) = inst.source_at(t) {
            src.item
        } else if let Some(&u) = feeders[i].first() {
            *carrying.get(u)
        } else {
            match *kinds.get(t) {
                TileKind::Inserter(d) => t
                    .step(d.opposite(), w, h)
                    .map(|i| match *kinds.get(i) {
                        TileKind::Block(k) => placements[k].recipe,
                        _ => 0,
                    })
                    .unwrap_or(0),
                _ => 0,
            }
        };
        carrying.set(t, item);
        for &s in &succ[i] {
            let si = s.index(w);
            indeg[si] -= 1;
            if indeg[si] == 0 {
                queue.push_back(si);
            }
        }
    }
    let cyclic = (0..n)
        .filter(|&i| !done[i] && kinds.cells()[i].is_transport())
        .map(|i| GridCoord::from_index(i, w))
        .collect();
    DerivedGrids {
        routes,
        carrying,
        cyclic,
    }
}

/// Every game rule the layout model encodes, checked on a finished
/// blueprint. Empty iff the blueprint is legal.
pub fn validate_structure(bp: &Blueprint, inst: &ProblemInstance) -> Vec<Violation> {
    if (bp.width, bp.height) != (inst.width, inst.height)
        || (bp.cells.width(), bp.cells.height()) != (bp.width, bp.height)
    {
        return vec![Violation {
            at: None,
            kind: ViolationKind::DimensionMismatch,
        }];
    }
    let mut out = Vec::new();
    // Block shape: each assembler cell must lie in the block it names, and
    // each named block must be complete.
    for c in bp.cells.coords() {
        if let Cell::Assembler { anchor, recipe } = *bp.cells.get(c) {
            let inside = c.x >= anchor.x && c.x < anchor.x + 3 && c.y >= anchor.y && c.y < anchor.y + 3;
            if !inside {
                out.push(Violation {
                    at: Some(c),
                    kind: ViolationKind::BlockOverlap,
                });
            }
            if anchor == c {
                for b in block_cells(anchor) {
                    let ok = b.x <= bp.width
                        && b.y <= bp.height
                        && *bp.cells.get(b) == Cell::Assembler { anchor, recipe };
                    if !ok {
                        out.push(Violation {
                            at: Some(anchor),
                            kind: ViolationKind::BlockOutsideGrid,
                        });
                        break;
                    }
                }
            }
        }
    }
    if !out.is_empty() {
        return out;
    }

    let derived = derive_grids(bp, inst);
    if let Some(&first) = derived.cyclic.first() {
        out.push(Violation {
            at: Some(first),
            kind: ViolationKind::CycleDetected,
        });
        return out;
    }
    let (conv, ins) = bp.object_grids();
    let placements = bp.placements();
    out.extend(check_route_grids(
        &conv,
        &ins,
        &derived.routes,
        &derived.carrying,
        inst,
        &placements,
    ));

    // Each assembler needs every ingredient and somewhere to put its product.
    let (w, h) = (bp.width, bp.height);
    for p in &placements {
        let Some(recipe) = inst.recipe_for(p.recipe) else { continue };
        let mut outs = 0;
        let mut ins_by_item = std::collections::BTreeMap::new();
        for c in bp.cells.coords() {
            let Cell::Inserter { dir } = *bp.cells.get(c) else { continue };
            let from = c.step(dir.opposite(), w, h);
            let to = c.step(dir, w, h);
            let in_block = |t: Option<GridCoord>| t.is_some_and(|t| crate::stage2::block_contains(p.anchor, t));
            if in_block(from) {
                outs += 1;
            }
            if in_block(to) {
                *ins_by_item.entry(*derived.carrying.get(c)).or_insert(0) += 1;
            }
        }
        for &item in recipe.ingredients.keys() {
            if ins_by_item.get(&item).copied().unwrap_or(0) == 0 {
                out.push(Violation {
                    at: Some(p.anchor),
                    kind: ViolationKind::MissingIngredient { anchor: p.anchor, item },
                });
            }
        }
        if outs == 0 {
            out.push(Violation {
                at: Some(p.anchor),
                kind: ViolationKind::MissingOutput { anchor: p.anchor },
            });
        }
    }
    out
}

/// Per-assembler inserter counts of a blueprint: (in per item, out).
pub fn inserter_counts(bp: &Blueprint, inst: &ProblemInstance) -> Vec<(Placement, std::collections::BTreeMap<ItemId, u32>, u32)> {
    let derived = derive_grids(bp, inst);
    let (w, h) = (bp.width, bp.height);
    bp.placements()
        .into_iter()
        .map(|p| {
            let mut ins = std::collections::BTreeMap::new();
            let mut outs = 0;
            for c in bp.cells.coords() {
                let Cell::Inserter { dir } = *bp.cells.get(c) else { continue };
                let hit = |t: Option<GridCoord>| t.is_some_and(|t| crate::stage2::block_contains(p.anchor, t));
                if hit(c.step(dir.opposite(), w, h)) {
                    outs += 1;
                }
                if hit(c.step(dir, w, h)) {
                    *ins.entry(*derived.carrying.get(c)).or_insert(0) += 1;
                }
            }
            (p, ins, outs)
        })
        .collect()
}
