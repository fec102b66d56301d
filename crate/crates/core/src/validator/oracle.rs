//! Exhaustive layout search for tiny instances, used to cross-check the
//! layout model. Shares nothing with the model except the legality rules.

use std::collections::BTreeMap;

use thiserror::Error;

use super::{inserter_counts, validate_structure, Blueprint};
use crate::domain::{Direction, Grid, GridCoord, ItemId, ProblemInstance};
use crate::stage2::block_cells;
use crate::stage3::{destination_required, feeds, Penalties, Placement, TileKind};

/// Limit on tiles outside assembler blocks; block cells are not branched on.
pub const ORACLE_MAX_TILES: u32 = 12;
pub const ORACLE_MAX_ITEMS: u32 = 2;

/// A fixed assembler block with the exact inserter counts it must get.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleAssembler {
    pub placement: Placement,
    pub inserters_in: BTreeMap<ItemId, u32>,
    pub inserters_out: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("instance too large for enumeration: {tiles} free tiles, {items} items")]
    TooLarge { tiles: u32, items: u32 },
}

struct Search<'a> {
    inst: &'a ProblemInstance,
    assemblers: &'a [OracleAssembler],
    placements: Vec<Placement>,
    penalties: Penalties,
    options: Vec<Vec<TileKind>>,
    kinds: Grid<TileKind>,
    best: Option<i64>,
}

/// Best objective over every legal object grid, or `None` if no grid is legal.
pub fn brute_force_layout_oracle(
    inst: &ProblemInstance,
    assemblers: &[OracleAssembler],
    penalties: Penalties,
) -> Result<Option<i64>, OracleError> {
    let blocked: u32 = assemblers
        .iter()
        .map(|a| block_cells(a.placement.anchor).filter(|c| c.x <= inst.width && c.y <= inst.height).count() as u32)
        .sum();
    let tiles = (inst.width * inst.height).saturating_sub(blocked);
    if tiles > ORACLE_MAX_TILES || inst.num_items > ORACLE_MAX_ITEMS {
        return Err(OracleError::TooLarge {
            tiles,
            items: inst.num_items,
        });
    }
    let (w, h) = (inst.width, inst.height);
    let placements: Vec<Placement> = assemblers.iter().map(|a| a.placement).collect();
    let mut kinds = Grid::filled(w, h, TileKind::Empty);
    for (k, p) in placements.iter().enumerate() {
        for c in block_cells(p.anchor) {
            if c.x <= w && c.y <= h {
                kinds.set(c, TileKind::Block(k));
            }
        }
    }
    let required = destination_required(inst, placements.iter().map(|p| p.recipe));
    let options = kinds
        .coords()
        .map(|c| {
            if let TileKind::Block(k) = *kinds.get(c) {
                return vec![TileKind::Block(k)];
            }
            let conveyors = Direction::ALL.map(TileKind::Conveyor);
            if c == inst.destination {
                return if required { conveyors.to_vec() } else { vec![TileKind::Empty] };
            }
            if inst.source_at(c).is_some() {
                return conveyors.to_vec();
            }
            let mut v = vec![TileKind::Empty];
            v.extend(conveyors);
            v.extend(Direction::ALL.map(TileKind::Inserter));
            v
        })
        .collect();
    let mut s = Search {
        inst,
        assemblers,
        placements,
        penalties,
        options,
        kinds,
        best: None,
    };
    s.dfs(0, 0);
    Ok(s.best)
}

impl Search<'_> {
    fn dfs(&mut self, i: usize, cost: i64) {
        if self.best.is_some_and(|b| cost >= b) {
            return;
        }
        let (w, h) = (self.inst.width, self.inst.height);
        let n = (w * h) as usize;
        if i == n {
            if self.complete_ok() {
                self.best = Some(cost);
            }
            return;
        }
        let at = GridCoord::from_index(i, w);
        for o in 0..self.options[i].len() {
            let kind = self.options[i][o];
            self.kinds.set(at, kind);
            let step = match kind {
                TileKind::Conveyor(_) => self.penalties.conveyor,
                TileKind::Inserter(_) => self.penalties.inserter,
                _ => 0,
            };
            let settled = (i.saturating_sub(w as usize)..=i)
                .map(|j| GridCoord::from_index(j, w))
                .filter(|&c| last_neighbour(c, w, h) == i)
                .all(|c| self.local_ok(c));
            if settled {
                self.dfs(i + 1, cost + step);
            }
        }
        self.kinds.set(at, TileKind::Empty);
    }

    /// Wiring rules that only look at a tile and its neighbours.
    fn local_ok(&self, t: GridCoord) -> bool {
        let (w, h) = (self.inst.width, self.inst.height);
        let inst = self.inst;
        let kinds = &self.kinds;
        let nbrs = || Direction::ALL.into_iter().filter_map(move |d| t.step(d, w, h));
        let fed = nbrs().any(|u| feeds(kinds, inst, u, t));
        let mut start = inst.source_at(t).is_some();
        if start && fed {
            return false;
        }
        match *kinds.get(t) {
            TileKind::Conveyor(d) if t != inst.destination => {
                let out_ok = t.step(d, w, h).is_some_and(|o| {
                    matches!(kinds.get(o), TileKind::Block(_)) || feeds(kinds, inst, t, o)
                });
                if !out_ok || !nbrs().any(|o| feeds(kinds, inst, t, o)) {
                    return false;
                }
            }
            TileKind::Inserter(d) => {
                let (Some(i), Some(o)) = (t.step(d.opposite(), w, h), t.step(d, w, h)) else {
                    return false;
                };
                match (*kinds.get(i), *kinds.get(o)) {
                    (TileKind::Block(a), TileKind::Block(b)) if a == b => return false,
                    (TileKind::Block(_), _) => start = true,
                    _ if feeds(kinds, inst, i, t) => {}
                    _ => return false,
                }
                if !matches!(kinds.get(o), TileKind::Block(_)) && !feeds(kinds, inst, t, o) {
                    return false;
                }
            }
            _ => {}
        }
        if kinds.get(t).is_transport() && !start && !fed {
            return false;
        }
        true
    }

    fn complete_ok(&self) -> bool {
        let (w, h) = (self.inst.width, self.inst.height);
        let mut conv = Grid::filled(w, h, 0u8);
        let mut ins = Grid::filled(w, h, 0u8);
        for c in self.kinds.coords() {
            match *self.kinds.get(c) {
                TileKind::Conveyor(d) => conv.set(c, d.code()),
                TileKind::Inserter(d) => ins.set(c, d.code()),
                _ => {}
            }
        }
        let bp = Blueprint::from_parts(&conv, &ins, &self.placements, 0);
        if !validate_structure(&bp, self.inst).is_empty() {
            return false;
        }
        let counts = inserter_counts(&bp, self.inst);
        self.assemblers.iter().all(|a| {
            counts.iter().any(|(p, ins, outs)| {
                let ins: BTreeMap<ItemId, u32> = ins.iter().filter(|e| *e.1 > 0).map(|(&k, &v)| (k, v)).collect();
                let want: BTreeMap<ItemId, u32> = a
                    .inserters_in
                    .iter()
                    .filter(|e| *e.1 > 0)
                    .map(|(&k, &v)| (k, v))
                    .collect();
                *p == a.placement && ins == want && *outs == a.inserters_out
            })
        })
    }
}

/// Index of the last (row-major) tile among `c` and its neighbours.
fn last_neighbour(c: GridCoord, w: u32, h: u32) -> usize {
    if c.y < h {
        c.index(w) + w as usize
    } else if c.x < w {
        c.index(w) + 1
    } else {
        c.index(w)
    }
}
