//! Packing stage: place 3×3 assembler blocks and enough inserter slots
//! around each one. Item types are never looked at here.

use serde::{Deserialize, Serialize};

use crate::domain::{Direction, Grid, GridCoord};
use crate::fdsolver::{Constraint, Lit, Model, Outcome, SearchConfig, SearchMode, SearchStats, Var};
use crate::stage1::DuplicateAttempt;

pub const AXIS_HORIZONTAL: u8 = 1;
pub const AXIS_VERTICAL: u8 = 2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackingLayout {
    /// 1 at the top-left tile of every assembler block.
    pub assembler_layout: Grid<u8>,
    /// 0, [`AXIS_HORIZONTAL`] or [`AXIS_VERTICAL`].
    pub inserter_layout: Grid<u8>,
    /// Inserter tiles per stage-1 assembler, in active-assembler order.
    pub positions: Vec<Vec<GridCoord>>,
    /// Anchor of each stage-1 assembler, in active-assembler order.
    pub anchors: Vec<GridCoord>,
}

impl PackingLayout {
    /// A layout without assemblers.
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            assembler_layout: Grid::filled(width, height, 0),
            inserter_layout: Grid::filled(width, height, 0),
            positions: Vec::new(),
            anchors: Vec::new(),
        }
    }

    /// Anchors in row-major order.
    pub fn anchor_tiles(&self) -> Vec<GridCoord> {
        self.assembler_layout
            .coords()
            .filter(|&c| *self.assembler_layout.get(c) == 1)
            .collect()
    }

    pub fn flatten(&self) -> Vec<u8> {
        self.assembler_layout.cells().to_vec()
    }
}

/// The 9 tiles of the block anchored at `anchor`.
pub fn block_cells(anchor: GridCoord) -> impl Iterator<Item = GridCoord> {
    (0..3).flat_map(move |dy| (0..3).map(move |dx| GridCoord::new(anchor.x + dx, anchor.y + dy)))
}

pub fn block_contains(anchor: GridCoord, at: GridCoord) -> bool {
    at.x >= anchor.x && at.x < anchor.x + 3 && at.y >= anchor.y && at.y < anchor.y + 3
}

/// Tiles bordering the block whose far side (away from the block) is still
/// in the grid, with the direction pointing away from the block.
pub fn perimeter_slots(anchor: GridCoord, width: u32, height: u32) -> Vec<(GridCoord, Direction)> {
    let mut out = Vec::new();
    for (dir, cells) in [
        (Direction::North, (0..3).map(|i| (anchor.x + i, anchor.y as i64 - 1)).collect::<Vec<_>>()),
        (Direction::South, (0..3).map(|i| (anchor.x + i, anchor.y as i64 + 3)).collect()),
        (Direction::East, (0..3).map(|i| (anchor.x + 3, anchor.y as i64 + i as i64)).collect()),
        (Direction::West, (0..3).map(|i| (anchor.x.wrapping_sub(1), anchor.y as i64 + i as i64)).collect()),
    ] {
        for (x, y) in cells {
            if x == 0 || x > width || y < 1 || y > height as i64 {
                continue;
            }
            let t = GridCoord::new(x, y as u32);
            if t.step(dir, width, height).is_some() {
                out.push((t, dir));
            }
        }
    }
    out
}

/// Previously attempted assembler grids, flattened row-major.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage2Ledger {
    pub attempts: Vec<Vec<u8>>,
}

impl Stage2Ledger {
    pub fn len(&self) -> usize {
        self.attempts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attempts.is_empty()
    }
}

pub fn record_packing(ledger: &Stage2Ledger, layout: &PackingLayout) -> Result<Stage2Ledger, DuplicateAttempt> {
    let flat = layout.flatten();
    if ledger.attempts.contains(&flat) {
        return Err(DuplicateAttempt);
    }
    let mut next = ledger.clone();
    next.attempts.push(flat);
    Ok(next)
}

pub struct Stage2Model {
    pub model: Model,
    width: u32,
    height: u32,
    anchors: Vec<GridCoord>,
    occ: Vec<Var>,
    who: Vec<Var>,
    layout: Vec<Var>,
    attach: Vec<(usize, usize, Var)>,
    num_assemblers: usize,
    node_limit: u64,
    time_limit: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Stage2Outcome {
    Solved(PackingLayout),
    Infeasible,
    LimitReached,
}

pub fn build_stage2_model(
    width: u32,
    height: u32,
    reserved: &Grid<bool>,
    inserter_totals: &[u32],
    ledger: &Stage2Ledger,
) -> Stage2Model {
    let n = inserter_totals.len();
    let mut m = Model::new();

    let anchors: Vec<GridCoord> = if width >= 3 && height >= 3 {
        (1..=height - 2)
            .flat_map(|y| (1..=width - 2).map(move |x| GridCoord::new(x, y)))
            .filter(|&a| block_cells(a).all(|c| !*reserved.get(c)))
            .collect()
    } else {
        Vec::new()
    };

    let occ: Vec<Var> = anchors.iter().map(|_| m.boolean()).collect();
    for i in 0..anchors.len() {
        for j in i + 1..anchors.len() {
            let (a, b) = (anchors[i], anchors[j]);
            if a.x.abs_diff(b.x) < 3 && a.y.abs_diff(b.y) < 3 {
                m.post(Constraint::Clause(vec![Lit::is_false(occ[i]), Lit::is_false(occ[j])]))
                    .unwrap();
            }
        }
    }
    m.post(Constraint::eq(occ.iter().map(|&v| (1, v)).collect(), n as i64)).unwrap();

    let mut counts = vec![0];
    counts.extend(inserter_totals.iter().map(|&t| t as i32));
    let who: Vec<Var> = anchors.iter().map(|_| m.int(0, n as i32)).collect();
    let mut cnt = Vec::with_capacity(anchors.len());
    for (k, &w) in who.iter().enumerate() {
        m.post(Constraint::ReifGt { b: occ[k], x: w, value: 0 }).unwrap();
        let c = m.int(0, *counts.iter().max().unwrap());
        m.post(Constraint::Element {
            index: w,
            array: counts.clone(),
            result: c,
        })
        .unwrap();
        cnt.push(c);
    }
    if !who.is_empty() {
        m.post(Constraint::AllDifferentExcept0(who.clone())).unwrap();
    }

    let tiles = (width * height) as usize;
    let layout: Vec<Var> = (0..tiles)
        .map(|i| {
            let c = GridCoord::from_index(i, width);
            if *reserved.get(c) {
                m.constant(0)
            } else {
                m.int(0, AXIS_VERTICAL as i32)
            }
        })
        .collect();
    let present: Vec<Var> = layout
        .iter()
        .map(|&l| {
            let b = m.boolean();
            m.post(Constraint::ReifGt { b, x: l, value: 0 }).unwrap();
            b
        })
        .collect();

    let mut attach: Vec<(usize, usize, Var)> = Vec::new();
    let mut per_tile: Vec<Vec<Var>> = vec![Vec::new(); tiles];
    for (k, &a) in anchors.iter().enumerate() {
        for c in block_cells(a) {
            m.post(Constraint::Implies(Lit::is_true(occ[k]), Lit::Eq(layout[c.index(width)], 0)))
                .unwrap();
        }
        let mut mine = Vec::new();
        for (t, dir) in perimeter_slots(a, width, height) {
            if *reserved.get(t) {
                continue;
            }
            let axis = match dir {
                Direction::East | Direction::West => AXIS_HORIZONTAL,
                Direction::North | Direction::South => AXIS_VERTICAL,
            };
            let v = m.boolean();
            let ti = t.index(width);
            m.post(Constraint::Implies(Lit::is_true(v), Lit::is_true(occ[k]))).unwrap();
            m.post(Constraint::Implies(Lit::is_true(v), Lit::Eq(layout[ti], axis as i32))).unwrap();
            attach.push((k, ti, v));
            per_tile[ti].push(v);
            mine.push((1, v));
        }
        mine.push((-1, cnt[k]));
        m.post(Constraint::eq(mine, 0)).unwrap();
    }
    for (ti, vs) in per_tile.iter().enumerate() {
        let mut terms: Vec<(i64, Var)> = vs.iter().map(|&v| (1, v)).collect();
        terms.push((-1, present[ti]));
        m.post(Constraint::eq(terms, 0)).unwrap();
    }

    for attempt in &ledger.attempts {
        let outside = attempt
            .iter()
            .enumerate()
            .any(|(i, &v)| v == 1 && !anchors.contains(&GridCoord::from_index(i, width)));
        if outside || attempt.len() != tiles {
            continue;
        }
        let lits = anchors
            .iter()
            .zip(&occ)
            .map(|(a, &o)| Lit::Ne(o, attempt[a.index(width)] as i32))
            .collect::<Vec<_>>();
        m.post(Constraint::Clause(lits)).unwrap();
    }

    let mut branching = occ.clone();
    branching.extend(&who);
    branching.extend(attach.iter().map(|a| a.2));
    m.set_branching(branching);

    Stage2Model {
        model: m,
        width,
        height,
        anchors,
        occ,
        who,
        layout,
        attach,
        num_assemblers: n,
        node_limit: 0,
        time_limit: 0.0,
    }
}

impl Stage2Model {
    pub fn with_limits(mut self, node_limit: u64, time_limit: f64) -> Self {
        self.node_limit = node_limit;
        self.time_limit = time_limit;
        self
    }

    fn decode(&self, sol: &crate::fdsolver::Solution) -> PackingLayout {
        let mut out = PackingLayout::empty(self.width, self.height);
        out.positions = vec![Vec::new(); self.num_assemblers];
        out.anchors = vec![GridCoord::new(0, 0); self.num_assemblers];
        for (k, &a) in self.anchors.iter().enumerate() {
            if sol.value(self.occ[k]) == 1 {
                out.assembler_layout.set(a, 1);
                out.anchors[sol.value(self.who[k]) as usize - 1] = a;
            }
        }
        for (i, &l) in self.layout.iter().enumerate() {
            out.inserter_layout
                .set(GridCoord::from_index(i, self.width), sol.value(l) as u8);
        }
        for &(k, ti, v) in &self.attach {
            if sol.value(v) == 1 {
                let a = sol.value(self.who[k]) as usize - 1;
                out.positions[a].push(GridCoord::from_index(ti, self.width));
            }
        }
        out
    }
}

pub fn solve_stage2(model: &mut Stage2Model) -> (Stage2Outcome, SearchStats) {
    let cfg = SearchConfig {
        mode: SearchMode::First,
        node_limit: model.node_limit,
        time_limit: model.time_limit,
        ..Default::default()
    };
    let r = model.model.solve(&cfg);
    let outcome = match r.outcome {
        Outcome::Sat(s) => Stage2Outcome::Solved(model.decode(&s)),
        Outcome::Unsat => Stage2Outcome::Infeasible,
        Outcome::LimitReached(Some(s)) => Stage2Outcome::Solved(model.decode(&s)),
        Outcome::LimitReached(None) => Stage2Outcome::LimitReached,
    };
    (outcome, r.stats)
}

/// Checks the packing invariants directly; returns human-readable problems.
pub fn check_packing(layout: &PackingLayout, reserved: &Grid<bool>, inserter_totals: &[u32]) -> Vec<String> {
    let w = layout.assembler_layout.width();
    let h = layout.assembler_layout.height();
    let mut problems = Vec::new();
    let anchors = layout.anchor_tiles();
    let mut owner: Grid<Option<usize>> = Grid::filled(w, h, None);
    for (i, &a) in anchors.iter().enumerate() {
        if a.x + 2 > w || a.y + 2 > h {
            problems.push(format!("block at {a} leaves the grid"));
            continue;
        }
        for c in block_cells(a) {
            if *reserved.get(c) {
                problems.push(format!("block at {a} covers reserved tile {c}"));
            }
            if owner.get(c).is_some() {
                problems.push(format!("blocks overlap at {c}"));
            }
            owner.set(c, Some(i));
        }
    }
    if anchors.len() != inserter_totals.len() {
        problems.push(format!(
            "{} blocks placed for {} assemblers",
            anchors.len(),
            inserter_totals.len()
        ));
    }
    let mut seen = std::collections::BTreeSet::new();
    for (a, tiles) in layout.positions.iter().enumerate() {
        let anchor = layout.anchors.get(a).copied();
        if inserter_totals.get(a).copied() != Some(tiles.len() as u32) {
            problems.push(format!("assembler {a} has {} inserters", tiles.len()));
        }
        for &t in tiles {
            if !seen.insert(t) {
                problems.push(format!("inserter tile {t} used twice"));
            }
            if *reserved.get(t) || owner.get(t).is_some() {
                problems.push(format!("inserter at {t} on a blocked tile"));
            }
            let Some(anchor) = anchor else { continue };
            match perimeter_slots(anchor, w, h).into_iter().find(|s| s.0 == t) {
                Some((_, dir)) => {
                    let axis = match dir {
                        Direction::East | Direction::West => AXIS_HORIZONTAL,
                        _ => AXIS_VERTICAL,
                    };
                    if *layout.inserter_layout.get(t) != axis {
                        problems.push(format!("inserter at {t} has the wrong axis"));
                    }
                }
                None => problems.push(format!("inserter at {t} is not beside its assembler")),
            }
        }
    }
    problems
}

#[cfg(test)]
mod tests {
    use super::*;

    fn free(w: u32, h: u32) -> Grid<bool> {
        Grid::filled(w, h, false)
    }

    fn solve(w: u32, h: u32, reserved: &Grid<bool>, totals: &[u32], ledger: &Stage2Ledger) -> Stage2Outcome {
        let mut m = build_stage2_model(w, h, reserved, totals, ledger);
        solve_stage2(&mut m).0
    }

    #[test]
    fn single_placement_in_three_by_three() {
        let r = free(3, 3);
        let Stage2Outcome::Solved(p) = solve(3, 3, &r, &[0], &Stage2Ledger::default()) else {
            panic!()
        };
        assert_eq!(p.anchor_tiles(), vec![GridCoord::new(1, 1)]);
        let ledger = record_packing(&Stage2Ledger::default(), &p).unwrap();
        assert_eq!(solve(3, 3, &r, &[0], &ledger), Stage2Outcome::Infeasible);
        assert_eq!(record_packing(&ledger, &p), Err(DuplicateAttempt));
    }

    #[test]
    fn area_bound() {
        assert_eq!(
            solve(5, 5, &free(5, 5), &[0, 0], &Stage2Ledger::default()),
            Stage2Outcome::Infeasible
        );
    }

    #[test]
    fn strip_with_reserved_ends() {
        let mut r = free(3, 5);
        r.set(GridCoord::new(1, 1), true);
        r.set(GridCoord::new(3, 1), true);
        let Stage2Outcome::Solved(p) = solve(3, 5, &r, &[3], &Stage2Ledger::default()) else {
            panic!()
        };
        assert!(check_packing(&p, &r, &[3]).is_empty());
    }

    #[test]
    fn inserter_layout_only_variants_share_a_ledger_entry() {
        let r = free(3, 5);
        let Stage2Outcome::Solved(p) = solve(3, 5, &r, &[1], &Stage2Ledger::default()) else {
            panic!()
        };
        let mut q = p.clone();
        q.inserter_layout = Grid::filled(3, 5, 0);
        let ledger = record_packing(&Stage2Ledger::default(), &p).unwrap();
        assert_eq!(record_packing(&ledger, &q), Err(DuplicateAttempt));
    }

    #[test]
    fn two_blocks_side_by_side() {
        let r = free(6, 6);
        let Stage2Outcome::Solved(p) = solve(6, 6, &r, &[3, 3], &Stage2Ledger::default()) else {
            panic!()
        };
        assert!(check_packing(&p, &r, &[3, 3]).is_empty());
    }
}
