//! Layout stage: assign assemblers to packed blocks, place inserters and
//! route conveyors. Also hosts the solver-independent route/carrying checker.

mod reach;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{Direction, Grid, GridCoord, ItemId, ProblemInstance};
use crate::fdsolver::{
    Constraint, Global, Lit, Model, Objective, Outcome, SearchConfig, SearchStats, Solution, Var, VarOrder,
};
use crate::stage1::Stage1Solution;
use crate::stage2::{block_cells, block_contains, perimeter_slots, PackingLayout};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Placement {
    pub anchor: GridCoord,
    pub recipe: ItemId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Penalties {
    pub conveyor: i64,
    pub inserter: i64,
}

impl Default for Penalties {
    fn default() -> Self {
        Self { conveyor: 2, inserter: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutSolution {
    /// 0 = none, else a direction code.
    pub conveyors: Grid<u8>,
    pub inserters: Grid<u8>,
    pub routes: Grid<u32>,
    pub carrying: Grid<u32>,
    /// Stage-1 slot index → anchor of the block it runs in.
    pub assignments: BTreeMap<usize, GridCoord>,
    pub objective_value: i64,
}

impl LayoutSolution {
    pub fn placements(&self, stage1: &Stage1Solution) -> Vec<Placement> {
        self.assignments
            .iter()
            .map(|(&a, &anchor)| Placement {
                anchor,
                recipe: stage1.assembler_recipes[a],
            })
            .collect()
    }

    pub fn cost(&self, penalties: Penalties) -> i64 {
        let c = self.conveyors.cells().iter().filter(|&&d| d != 0).count() as i64;
        let i = self.inserters.cells().iter().filter(|&&d| d != 0).count() as i64;
        c * penalties.conveyor + i * penalties.inserter
    }
}

/// What occupies one tile, after merging the object grids.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TileKind {
    Empty,
    Conveyor(Direction),
    Inserter(Direction),
    /// Cell of the block with this index into the placement list.
    Block(usize),
}

impl TileKind {
    pub fn is_transport(self) -> bool {
        matches!(self, TileKind::Conveyor(_) | TileKind::Inserter(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    DimensionMismatch,
    BadDirection(u8),
    BlockOutsideGrid,
    BlockOverlap,
    BlockOnReserved,
    UnknownRecipe(ItemId),
    SharedTile,
    RouteWithoutObject,
    ObjectWithoutRoute,
    CarryWithoutObject,
    ObjectWithoutCarry,
    WrongBlockItem { expected: ItemId, found: u32 },
    SourceNotConveyor,
    SourceFed,
    SourceWrongItem { expected: ItemId, found: u32 },
    DestinationMissing,
    DestinationUnexpected,
    DestinationNotConveyor,
    DestinationWrongItem { expected: ItemId, found: u32 },
    DanglingOutput,
    NoSuccessor,
    BadInput,
    SameBlock,
    StartNotOne(u32),
    NoRouteStart,
    RouteNotIncreasing { from: GridCoord },
    RouteNotExact { expected: u32, found: u32 },
    RouteTooLong(u32),
    MixedItems { from: GridCoord },
    WrongProduct { expected: ItemId, found: u32 },
    NotAnIngredient(u32),
    CycleDetected,
    MissingIngredient { anchor: GridCoord, item: ItemId },
    MissingOutput { anchor: GridCoord },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub at: Option<GridCoord>,
    pub kind: ViolationKind,
}

impl Violation {
    fn at(at: GridCoord, kind: ViolationKind) -> Self {
        Self { at: Some(at), kind }
    }
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ViolationKind::*;
        match self {
            DimensionMismatch => write!(f, "grid dimensions do not match the instance"),
            BadDirection(v) => write!(f, "invalid direction code {v}"),
            BlockOutsideGrid => write!(f, "assembler block leaves the grid"),
            BlockOverlap => write!(f, "assembler blocks overlap"),
            BlockOnReserved => write!(f, "assembler block covers a source or destination"),
            UnknownRecipe(r) => write!(f, "no recipe produces item {r}"),
            SharedTile => write!(f, "tile hosts more than one object"),
            RouteWithoutObject => write!(f, "route value on an empty tile"),
            ObjectWithoutRoute => write!(f, "transport object without a route value"),
            CarryWithoutObject => write!(f, "item carried on an empty tile"),
            ObjectWithoutCarry => write!(f, "object carries no item"),
            WrongBlockItem { expected, found } => {
                write!(f, "assembler cell carries {found}, expected {expected}")
            }
            SourceNotConveyor => write!(f, "source tile has no conveyor"),
            SourceFed => write!(f, "source conveyor is fed by another tile"),
            SourceWrongItem { expected, found } => {
                write!(f, "source carries {found}, expected {expected}")
            }
            DestinationMissing => write!(f, "destination has no conveyor"),
            DestinationUnexpected => write!(f, "destination occupied but the output item is unavailable"),
            DestinationNotConveyor => write!(f, "destination hosts a non-conveyor object"),
            DestinationWrongItem { expected, found } => {
                write!(f, "destination carries {found}, expected {expected}")
            }
            DanglingOutput => write!(f, "output tile cannot accept items"),
            NoSuccessor => write!(f, "conveyor delivers to nothing"),
            BadInput => write!(f, "inserter input tile provides nothing"),
            SameBlock => write!(f, "inserter moves items within one assembler"),
            StartNotOne(v) => write!(f, "route start has value {v}, expected 1"),
            NoRouteStart => write!(f, "no route start / non-increasing route value"),
            RouteNotIncreasing { from } => write!(f, "non-increasing route value from {from}"),
            RouteNotExact { expected, found } => {
                write!(f, "route value {found}, expected {expected}")
            }
            RouteTooLong(v) => write!(f, "route value {v} exceeds width + height"),
            MixedItems { from } => write!(f, "mixed items on conveyor (feeder {from})"),
            WrongProduct { expected, found } => {
                write!(f, "output inserter carries {found}, expected {expected}")
            }
            NotAnIngredient(i) => write!(f, "item {i} delivered to an assembler that does not use it"),
            CycleDetected => write!(f, "cycle detected"),
            MissingIngredient { anchor, item } => {
                write!(f, "assembler at {anchor} receives no item {item}")
            }
            MissingOutput { anchor } => write!(f, "assembler at {anchor} has no output inserter"),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.at {
            Some(at) => write!(f, "{at}: {}", self.kind),
            None => write!(f, "{}", self.kind),
        }
    }
}

/// Merges placements and object grids. Conflicts become violations; the
/// first object found wins.
pub fn tile_kinds(
    conveyors: &Grid<u8>,
    inserters: &Grid<u8>,
    inst: &ProblemInstance,
    placements: &[Placement],
    out: &mut Vec<Violation>,
) -> Grid<TileKind> {
    let (w, h) = (inst.width, inst.height);
    let mut kinds = Grid::filled(w, h, TileKind::Empty);
    for (k, p) in placements.iter().enumerate() {
        if inst.recipe_for(p.recipe).is_none() {
            out.push(Violation::at(p.anchor, ViolationKind::UnknownRecipe(p.recipe)));
        }
        if p.anchor.x < 1 || p.anchor.y < 1 || p.anchor.x + 2 > w || p.anchor.y + 2 > h {
            out.push(Violation::at(p.anchor, ViolationKind::BlockOutsideGrid));
            continue;
        }
        for c in block_cells(p.anchor) {
            if inst.is_reserved(c) {
                out.push(Violation::at(c, ViolationKind::BlockOnReserved));
            }
            if *kinds.get(c) != TileKind::Empty {
                out.push(Violation::at(c, ViolationKind::BlockOverlap));
                continue;
            }
            kinds.set(c, TileKind::Block(k));
        }
    }
    for c in kinds.coords().collect::<Vec<_>>() {
        let objects = [
            (*conveyors.get(c), TileKind::Conveyor as fn(Direction) -> TileKind),
            (*inserters.get(c), TileKind::Inserter),
        ];
        for (code, make) in objects {
            if code == 0 {
                continue;
            }
            match Direction::from_code(code) {
                Some(d) if *kinds.get(c) == TileKind::Empty => kinds.set(c, make(d)),
                Some(_) => out.push(Violation::at(c, ViolationKind::SharedTile)),
                None => out.push(Violation::at(c, ViolationKind::BadDirection(code))),
            }
        }
    }
    kinds
}

/// Whether `u` passes items to its neighbour `t`.
pub fn feeds(kinds: &Grid<TileKind>, inst: &ProblemInstance, u: GridCoord, t: GridCoord) -> bool {
    if u == inst.destination {
        return false;
    }
    let Some(d) = Direction::between(u, t) else {
        return false;
    };
    state_feeds(*kinds.get(u), *kinds.get(t), d)
}

fn state_feeds(u: TileKind, t: TileKind, d: Direction) -> bool {
    match (u, t) {
        (TileKind::Conveyor(du), TileKind::Conveyor(_)) => du == d,
        (TileKind::Conveyor(_), TileKind::Inserter(dt)) => dt == d,
        (TileKind::Inserter(du), TileKind::Conveyor(_)) => du == d,
        (TileKind::Inserter(du), TileKind::Inserter(dt)) => du == d && dt == d,
        _ => false,
    }
}

fn neighbours(at: GridCoord, w: u32, h: u32) -> impl Iterator<Item = GridCoord> {
    Direction::ALL.into_iter().filter_map(move |d| at.step(d, w, h))
}

/// Whether the output item can reach the destination at all: it is either
/// supplied directly or made by one of the placed assemblers.
pub fn destination_required(inst: &ProblemInstance, products: impl IntoIterator<Item = ItemId>) -> bool {
    inst.supply_of(inst.out_item) > 0 || products.into_iter().any(|p| p == inst.out_item)
}

/// The feed relation over a merged grid, as (feeders, successors) per tile index.
pub fn feed_graph(kinds: &Grid<TileKind>, inst: &ProblemInstance) -> (Vec<Vec<GridCoord>>, Vec<Vec<GridCoord>>) {
    let (w, h) = (inst.width, inst.height);
    let n = (w * h) as usize;
    let mut feeders = vec![Vec::new(); n];
    let mut succ = vec![Vec::new(); n];
    for u in kinds.coords() {
        for t in neighbours(u, w, h) {
            if feeds(kinds, inst, u, t) {
                feeders[t.index(w)].push(u);
                succ[u.index(w)].push(t);
            }
        }
    }
    (feeders, succ)
}

/// Checks the route and carrying rules on explicit grids. Empty result iff
/// every rule holds.
pub fn check_route_grids(
    conveyors: &Grid<u8>,
    inserters: &Grid<u8>,
    routes: &Grid<u32>,
    carrying: &Grid<u32>,
    inst: &ProblemInstance,
    placements: &[Placement],
) -> Vec<Violation> {
    let (w, h) = (inst.width, inst.height);
    let mut out = Vec::new();
    for (gw, gh) in [
        (conveyors.width(), conveyors.height()),
        (inserters.width(), inserters.height()),
        (routes.width(), routes.height()),
        (carrying.width(), carrying.height()),
    ] {
        if (gw, gh) != (w, h) {
            return vec![Violation {
                at: None,
                kind: ViolationKind::DimensionMismatch,
            }];
        }
    }
    let kinds = tile_kinds(conveyors, inserters, inst, placements, &mut out);
    let (feeders, succ) = feed_graph(&kinds, inst);
    let product = |k: usize| placements[k].recipe;
    let uses = |k: usize, item: u32| {
        inst.recipe_for(placements[k].recipe)
            .is_some_and(|r| r.ingredients.contains_key(&item))
    };
    let required = destination_required(inst, placements.iter().map(|p| p.recipe));
    let limit = w + h;

    for t in kinds.coords() {
        let ti = t.index(w);
        let kind = *kinds.get(t);
        let route = *routes.get(t);
        let carry = *carrying.get(t);
        let mut bad = |k: ViolationKind| out.push(Violation::at(t, k));

        match kind {
            TileKind::Empty => {
                if route != 0 {
                    bad(ViolationKind::RouteWithoutObject);
                }
                if carry != 0 {
                    bad(ViolationKind::CarryWithoutObject);
                }
            }
            TileKind::Block(k) => {
                if route != 0 {
                    bad(ViolationKind::RouteWithoutObject);
                }
                if carry != product(k) {
                    bad(ViolationKind::WrongBlockItem {
                        expected: product(k),
                        found: carry,
                    });
                }
            }
            TileKind::Conveyor(_) | TileKind::Inserter(_) => {
                if route == 0 {
                    bad(ViolationKind::ObjectWithoutRoute);
                }
                if carry == 0 {
                    bad(ViolationKind::ObjectWithoutCarry);
                }
                if route > limit {
                    bad(ViolationKind::RouteTooLong(route));
                }
            }
        }

        if let Some(src) = inst.source_at(t) {
            if !matches!(kind, TileKind::Conveyor(_)) {
                bad(ViolationKind::SourceNotConveyor);
            }
            if carry != src.item && kind.is_transport() {
                bad(ViolationKind::SourceWrongItem {
                    expected: src.item,
                    found: carry,
                });
            }
            if !feeders[ti].is_empty() {
                bad(ViolationKind::SourceFed);
            }
        }
        if t == inst.destination {
            match kind {
                TileKind::Empty if required => bad(ViolationKind::DestinationMissing),
                TileKind::Empty => {}
                TileKind::Conveyor(_) if !required => bad(ViolationKind::DestinationUnexpected),
                TileKind::Conveyor(_) => {
                    if carry != inst.out_item {
                        bad(ViolationKind::DestinationWrongItem {
                            expected: inst.out_item,
                            found: carry,
                        });
                    }
                }
                _ => bad(ViolationKind::DestinationNotConveyor),
            }
        }

        // Local wiring.
        let mut is_start = inst.source_at(t).is_some();
        match kind {
            TileKind::Conveyor(d) if t != inst.destination => {
                let ok = match t.step(d, w, h) {
                    None => false,
                    Some(o) => match *kinds.get(o) {
                        TileKind::Empty => false,
                        TileKind::Block(_) => true,
                        _ => feeds(&kinds, inst, t, o),
                    },
                };
                if !ok {
                    bad(ViolationKind::DanglingOutput);
                }
                if succ[ti].is_empty() {
                    bad(ViolationKind::NoSuccessor);
                }
            }
            TileKind::Inserter(d) => {
                let input = t.step(d.opposite(), w, h);
                let output = t.step(d, w, h);
                match input.map(|i| (i, *kinds.get(i))) {
                    Some((_, TileKind::Block(k))) => {
                        is_start = true;
                        if carry != product(k) {
                            bad(ViolationKind::WrongProduct {
                                expected: product(k),
                                found: carry,
                            });
                        }
                        if let Some(TileKind::Block(k2)) = output.map(|o| *kinds.get(o)) {
                            if k2 == k {
                                bad(ViolationKind::SameBlock);
                            }
                        }
                    }
                    Some((i, _)) if feeds(&kinds, inst, i, t) => {}
                    _ => bad(ViolationKind::BadInput),
                }
                match output.map(|o| (o, *kinds.get(o))) {
                    Some((_, TileKind::Block(k))) => {
                        if !uses(k, carry) {
                            bad(ViolationKind::NotAnIngredient(carry));
                        }
                    }
                    Some((o, _)) if feeds(&kinds, inst, t, o) => {}
                    _ => bad(ViolationKind::DanglingOutput),
                }
            }
            _ => {}
        }

        if !kind.is_transport() {
            continue;
        }
        if is_start {
            if route != 1 {
                bad(ViolationKind::StartNotOne(route));
            }
        } else if feeders[ti].is_empty() {
            bad(ViolationKind::NoRouteStart);
        } else {
            let best = feeders[ti].iter().map(|&u| *routes.get(u)).max().unwrap();
            if best.saturating_add(1) != route {
                bad(ViolationKind::RouteNotExact {
                    expected: best.saturating_add(1),
                    found: route,
                });
            }
        }
        for &u in &feeders[ti] {
            if *routes.get(u) >= route {
                bad(ViolationKind::RouteNotIncreasing { from: u });
            }
            if *carrying.get(u) != carry {
                bad(ViolationKind::MixedItems { from: u });
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct Stage3Config {
    pub penalties: Penalties,
    pub node_limit: u64,
    pub time_limit: f64,
    pub var_order: VarOrder,
}

impl Default for Stage3Config {
    fn default() -> Self {
        Self {
            penalties: Penalties::default(),
            node_limit: 0,
            time_limit: 0.0,
            var_order: VarOrder::Input,
        }
    }
}

// Tile states: 0 empty, 1..=4 conveyor, 5..=8 inserter (direction code + 4).
const INSERTER_BASE: i32 = 4;

fn state_kind(s: i32) -> TileKind {
    match s {
        1..=4 => TileKind::Conveyor(Direction::from_code(s as u8).unwrap()),
        5..=8 => TileKind::Inserter(Direction::from_code((s - INSERTER_BASE) as u8).unwrap()),
        _ => TileKind::Empty,
    }
}

fn conveyor_state(d: Direction) -> i32 {
    d.code() as i32
}

fn inserter_state(d: Direction) -> i32 {
    d.code() as i32 + INSERTER_BASE
}

/// Direction given to a destination conveyor: the first one leaving the grid.
pub fn destination_direction(inst: &ProblemInstance) -> Direction {
    Direction::ALL
        .into_iter()
        .find(|&d| inst.destination.step(d, inst.width, inst.height).is_none())
        .unwrap_or(Direction::North)
}

pub struct Stage3Model {
    pub model: Model,
    width: u32,
    height: u32,
    anchors: Vec<GridCoord>,
    block_of: Vec<Option<usize>>,
    /// Active stage-1 slots in order.
    active: Vec<usize>,
    state: Vec<Option<Var>>,
    route: Vec<Option<Var>>,
    carry: Vec<Option<Var>>,
    who: Vec<Var>,
    products: Vec<ItemId>,
    objective: Vec<(i64, Var)>,
    config: Stage3Config,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Stage3Outcome {
    Solved(LayoutSolution),
    Infeasible,
    LimitReached(Option<LayoutSolution>),
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("packing has {anchors} blocks for {assemblers} active assemblers")]
pub struct PackingMismatch {
    pub anchors: usize,
    pub assemblers: usize,
}

pub fn build_stage3_model(
    inst: &ProblemInstance,
    stage1: &Stage1Solution,
    packing: &PackingLayout,
    config: &Stage3Config,
) -> Result<Stage3Model, PackingMismatch> {
    let (w, h) = (inst.width, inst.height);
    let tiles = (w * h) as usize;
    let anchors = packing.anchor_tiles();
    let active: Vec<usize> = stage1.active().collect();
    if anchors.len() != active.len() {
        return Err(PackingMismatch {
            anchors: anchors.len(),
            assemblers: active.len(),
        });
    }
    let mut block_of = vec![None; tiles];
    for (k, &a) in anchors.iter().enumerate() {
        for c in block_cells(a) {
            block_of[c.index(w)] = Some(k);
        }
    }
    let coord = |i: usize| GridCoord::from_index(i, w);
    let free = |c: GridCoord| block_of[c.index(w)].is_none();
    let products: Vec<ItemId> = active.iter().map(|&a| stage1.assembler_recipes[a]).collect();
    let required = destination_required(inst, products.iter().copied());
    let is_source = |c: GridCoord| inst.source_at(c).is_some();

    // Candidate states per free tile.
    let mut dom: Vec<Vec<i32>> = vec![Vec::new(); tiles];
    for (i, d) in dom.iter_mut().enumerate() {
        let t = coord(i);
        if !free(t) {
            continue;
        }
        if t == inst.destination {
            d.push(if required {
                conveyor_state(destination_direction(inst))
            } else {
                0
            });
            continue;
        }
        if !is_source(t) {
            d.push(0);
        }
        for dir in Direction::ALL {
            if let Some(o) = t.step(dir, w, h) {
                if !is_source(o) && (required || o != inst.destination) {
                    d.push(conveyor_state(dir));
                }
            }
        }
        if inst.is_reserved(t) {
            continue;
        }
        for dir in Direction::ALL {
            let (Some(i), Some(o)) = (t.step(dir.opposite(), w, h), t.step(dir, w, h)) else {
                continue;
            };
            let (bi, bo) = (block_of[i.index(w)], block_of[o.index(w)]);
            if (bi.is_some() && bi == bo) || i == inst.destination || is_source(o) {
                continue;
            }
            if o == inst.destination && !required {
                continue;
            }
            d.push(inserter_state(dir));
        }
        d.sort_unstable();
    }

    let mut m = Model::new();
    let limit = (w + h) as i32;
    let mut state = vec![None; tiles];
    let mut route = vec![None; tiles];
    let mut carry = vec![None; tiles];
    let mut objective = Vec::new();
    let p = config.penalties;
    let costs = vec![0, p.conveyor, p.conveyor, p.conveyor, p.conveyor, p.inserter, p.inserter, p.inserter, p.inserter];
    let cost_hi = costs.iter().copied().max().unwrap_or(0).max(0) as i32;
    let cost_lo = costs.iter().copied().min().unwrap_or(0).min(0) as i32;
    for i in 0..tiles {
        if dom[i].is_empty() {
            if free(coord(i)) {
                // A source with nowhere to send its items.
                let z = m.constant(0);
                m.post(Constraint::fix(z, 1)).unwrap();
            }
            continue;
        }
        let lo = dom[i][0];
        let hi = *dom[i].last().unwrap();
        let s = m.int(lo, hi);
        for v in lo..=hi {
            if !dom[i].contains(&v) {
                m.post(Constraint::Clause(vec![Lit::Ne(s, v)])).unwrap();
            }
        }
        state[i] = Some(s);
    }
    for i in 0..tiles {
        let Some(s) = state[i] else { continue };
        let r = m.int(0, limit);
        let c = m.int(0, inst.num_items as i32);
        m.post(Constraint::Implies(Lit::Eq(s, 0), Lit::Eq(r, 0))).unwrap();
        m.post(Constraint::Implies(Lit::Ne(s, 0), Lit::Ge(r, 1))).unwrap();
        m.post(Constraint::Implies(Lit::Eq(s, 0), Lit::Eq(c, 0))).unwrap();
        m.post(Constraint::Implies(Lit::Ne(s, 0), Lit::Ge(c, 1))).unwrap();
        let cost = m.int(cost_lo, cost_hi);
        m.post(Constraint::Element {
            index: s,
            array: costs.iter().map(|&x| x as i32).collect(),
            result: cost,
        })
        .unwrap();
        objective.push((1, cost));
        route[i] = Some(r);
        carry[i] = Some(c);
    }

    // Feed indicators between neighbouring free tiles.
    let mut feed: HashMap<(usize, usize), Var> = HashMap::new();
    for u in 0..tiles {
        let Some(su) = state[u] else { continue };
        let uc = coord(u);
        if uc == inst.destination {
            continue;
        }
        for tc in neighbours(uc, w, h) {
            let t = tc.index(w);
            let Some(st) = state[t] else { continue };
            if is_source(tc) {
                continue;
            }
            let d = Direction::between(uc, tc).unwrap();
            let mut tuples = Vec::new();
            let mut any = false;
            for &a in &dom[u] {
                for &b in &dom[t] {
                    let f = state_feeds(state_kind(a), state_kind(b), d);
                    any |= f;
                    tuples.push(vec![a, b, f as i32]);
                }
            }
            if !any {
                continue;
            }
            let f = m.boolean();
            m.post(Constraint::Table {
                vars: vec![su, st, f],
                tuples,
            })
            .unwrap();
            let (ru, rt) = (route[u].unwrap(), route[t].unwrap());
            let (cu, ct) = (carry[u].unwrap(), carry[t].unwrap());
            m.post(Constraint::implies_le(Lit::is_true(f), vec![(1, ru), (-1, rt)], -1)).unwrap();
            m.post(Constraint::implies_eq(Lit::is_true(f), vec![(1, cu), (-1, ct)], 0)).unwrap();
            feed.insert((u, t), f);
        }
    }
    if inst.num_items < 64 {
        let bits = |items: &mut dyn Iterator<Item = ItemId>| items.fold(0u64, |m, j| m | 1 << j);
        let product_mask = bits(&mut products.iter().copied());
        let ingredient_mask = bits(
            &mut products
                .iter()
                .filter_map(|&p| inst.recipe_for(p))
                .flat_map(|r| r.ingredients.keys().copied()),
        );
        let mut compact = vec![usize::MAX; tiles];
        let mut reach_tiles = Vec::new();
        for i in 0..tiles {
            let Some(s) = state[i] else { continue };
            let t = coord(i);
            let source = inst.source_at(t).map_or(0, |src| 1u64 << src.item);
            let mut values = Vec::new();
            for &v in &dom[i] {
                let (mut start, mut sink) = (0, 0);
                match state_kind(v) {
                    TileKind::Conveyor(_) => {
                        start = source;
                        if t == inst.destination {
                            sink = 1 << inst.out_item;
                        }
                    }
                    TileKind::Inserter(d) => {
                        if !free(t.step(d.opposite(), w, h).unwrap()) {
                            start = product_mask;
                        }
                        if !free(t.step(d, w, h).unwrap()) {
                            sink = ingredient_mask;
                        }
                    }
                    _ => continue,
                }
                values.push((v, start, sink));
            }
            compact[i] = reach_tiles.len();
            reach_tiles.push(reach::ReachTile {
                state: s,
                carry: carry[i].unwrap(),
                values,
            });
        }
        let mut links: Vec<((usize, usize), Var)> = feed.iter().map(|(&k, &f)| (k, f)).collect();
        links.sort_unstable_by_key(|e| e.0);
        let links = links
            .into_iter()
            .map(|((u, t), f)| {
                let d = Direction::between(coord(u), coord(t)).unwrap();
                let mut combos = Vec::new();
                for &a in &dom[u] {
                    for &b in &dom[t] {
                        if state_feeds(state_kind(a), state_kind(b), d) {
                            combos.push((compact[u], a, compact[t], b));
                        }
                    }
                }
                (f, combos)
            })
            .collect();
        let global = reach::Reachability::new(inst.num_items, reach_tiles, links);
        m.post(Constraint::Global(Global(Arc::new(global)))).unwrap();
    }
    let feed_lit = |u: GridCoord, t: GridCoord| feed.get(&(u.index(w), t.index(w))).map(|&f| Lit::is_true(f));

    for i in 0..tiles {
        let Some(s) = state[i] else { continue };
        let t = coord(i);
        let r = route[i].unwrap();
        let c = carry[i].unwrap();
        if let Some(src) = inst.source_at(t) {
            m.post(Constraint::fix(r, 1)).unwrap();
            m.post(Constraint::fix(c, src.item as i32)).unwrap();
        }
        if t == inst.destination && required {
            m.post(Constraint::fix(c, inst.out_item as i32)).unwrap();
        }
        let successors: Vec<Lit> = neighbours(t, w, h).filter_map(|o| feed_lit(t, o)).collect();
        let feeders: Vec<GridCoord> = neighbours(t, w, h).filter(|&u| feed_lit(u, t).is_some()).collect();
        // Exactness witnesses: e[u] → u feeds t and route(t) = route(u) + 1.
        let exact: Vec<Lit> = feeders
            .iter()
            .map(|&u| {
                let e = m.boolean();
                m.post(Constraint::Implies(Lit::is_true(e), feed_lit(u, t).unwrap())).unwrap();
                m.post(Constraint::implies_le(
                    Lit::is_true(e),
                    vec![(1, r), (-1, route[u.index(w)].unwrap())],
                    1,
                ))
                .unwrap();
                Lit::is_true(e)
            })
            .collect();

        for &v in &dom[i] {
            let is_v = Lit::Ne(s, v);
            let mut starts = is_source(t);
            match state_kind(v) {
                TileKind::Conveyor(d) if t != inst.destination => {
                    let o = t.step(d, w, h).unwrap();
                    if free(o) {
                        let mut cl = vec![is_v];
                        cl.extend(feed_lit(t, o));
                        m.post(Constraint::Clause(cl)).unwrap();
                    }
                    let mut cl = vec![is_v];
                    cl.extend(successors.iter().copied());
                    m.post(Constraint::Clause(cl)).unwrap();
                }
                TileKind::Inserter(d) => {
                    let input = t.step(d.opposite(), w, h).unwrap();
                    let output = t.step(d, w, h).unwrap();
                    if free(input) {
                        let mut cl = vec![is_v];
                        cl.extend(feed_lit(input, t));
                        m.post(Constraint::Clause(cl)).unwrap();
                    } else {
                        starts = true;
                        m.post(Constraint::Implies(Lit::Eq(s, v), Lit::Eq(r, 1))).unwrap();
                    }
                    if free(output) {
                        let mut cl = vec![is_v];
                        cl.extend(feed_lit(t, output));
                        m.post(Constraint::Clause(cl)).unwrap();
                    }
                }
                _ => {}
            }
            if v != 0 && !starts {
                let mut cl = vec![is_v];
                cl.extend(exact.iter().copied());
                m.post(Constraint::Clause(cl)).unwrap();
            }
        }
    }

    // Assembler assignment and inserter counts.
    let n = active.len();
    let mut who = Vec::new();
    if n > 0 {
        let ingredients: BTreeSet<ItemId> = products
            .iter()
            .filter_map(|&p| inst.recipe_for(p))
            .flat_map(|r| r.ingredients.keys().copied())
            .collect();
        let mut prod_arr = vec![0];
        prod_arr.extend(products.iter().map(|&p| p as i32));
        let mut out_arr = vec![0];
        out_arr.extend(active.iter().map(|&a| stage1.inserters_out[a] as i32));
        let in_arr: BTreeMap<ItemId, Vec<i32>> = ingredients
            .iter()
            .map(|&j| {
                let mut v = vec![0];
                v.extend(active.iter().map(|&a| stage1.inserters_in_for(a, j) as i32));
                (j, v)
            })
            .collect();
        let element = |m: &mut Model, array: &Vec<i32>, index: Var| {
            let lo = *array.iter().min().unwrap();
            let hi = *array.iter().max().unwrap();
            let r = m.int(lo, hi);
            m.post(Constraint::Element {
                index,
                array: array.clone(),
                result: r,
            })
            .unwrap();
            r
        };
        for _ in 0..n {
            who.push(m.int(1, n as i32));
        }
        m.post(Constraint::AllDifferentExcept0(who.clone())).unwrap();

        // Interchangeable assemblers keep their slot order across anchors.
        let pos: Vec<Var> = (0..n).map(|_| m.int(0, n as i32 - 1)).collect();
        for (k, &wk) in who.iter().enumerate() {
            for (a, &pa) in pos.iter().enumerate() {
                m.post(Constraint::Implies(Lit::Eq(wk, a as i32 + 1), Lit::Eq(pa, k as i32))).unwrap();
                m.post(Constraint::Implies(Lit::Eq(pa, k as i32), Lit::Eq(wk, a as i32 + 1))).unwrap();
            }
        }
        for a in 0..n {
            for b in a + 1..n {
                let (sa, sb) = (active[a], active[b]);
                let same = stage1.assembler_recipes[sa] == stage1.assembler_recipes[sb]
                    && stage1.inserters_in[sa] == stage1.inserters_in[sb]
                    && stage1.inserters_out[sa] == stage1.inserters_out[sb];
                if same {
                    m.post(Constraint::less(pos[a], pos[b])).unwrap();
                    break;
                }
            }
        }

        for (k, &anchor) in anchors.iter().enumerate() {
            let prod = element(&mut m, &prod_arr, who[k]);
            let need_out = element(&mut m, &out_arr, who[k]);
            let need_in: BTreeMap<ItemId, Var> = in_arr
                .iter()
                .map(|(&j, arr)| (j, element(&mut m, arr, who[k])))
                .collect();
            let mut outs: Vec<(i64, Var)> = Vec::new();
            let mut into: BTreeMap<ItemId, Vec<(i64, Var)>> = BTreeMap::new();
            for (t, away) in perimeter_slots(anchor, w, h) {
                let ti = t.index(w);
                let Some(s) = state[ti] else { continue };
                let c = carry[ti].unwrap();
                let vo = inserter_state(away);
                if dom[ti].contains(&vo) {
                    let b = m.boolean();
                    m.post(Constraint::ReifEq { b, x: s, value: vo }).unwrap();
                    m.post(Constraint::implies_eq(Lit::is_true(b), vec![(1, c), (-1, prod)], 0)).unwrap();
                    outs.push((1, b));
                }
                let vi = inserter_state(away.opposite());
                if dom[ti].contains(&vi) {
                    let pin = m.boolean();
                    m.post(Constraint::ReifEq { b: pin, x: s, value: vi }).unwrap();
                    let mut some = vec![Lit::is_false(pin)];
                    for &j in &ingredients {
                        let e = m.boolean();
                        m.post(Constraint::Implies(Lit::is_true(e), Lit::is_true(pin))).unwrap();
                        m.post(Constraint::Implies(Lit::is_true(e), Lit::Eq(c, j as i32))).unwrap();
                        m.post(Constraint::Clause(vec![
                            Lit::is_false(pin),
                            Lit::Ne(c, j as i32),
                            Lit::is_true(e),
                        ]))
                        .unwrap();
                        some.push(Lit::is_true(e));
                        into.entry(j).or_default().push((1, e));
                    }
                    m.post(Constraint::Clause(some)).unwrap();
                }
            }
            outs.push((-1, need_out));
            m.post(Constraint::eq(outs, 0)).unwrap();
            for (&j, &need) in &need_in {
                let mut terms = into.remove(&j).unwrap_or_default();
                terms.push((-1, need));
                m.post(Constraint::eq(terms, 0)).unwrap();
            }
        }
    }

    let mut branching = who.clone();
    branching.extend(state.iter().flatten().copied());
    m.set_branching(branching);

    Ok(Stage3Model {
        model: m,
        width: w,
        height: h,
        anchors,
        block_of,
        active,
        state,
        route,
        carry,
        who,
        products,
        objective,
        config: config.clone(),
    })
}

impl Stage3Model {
    fn decode(&self, sol: &Solution) -> LayoutSolution {
        let (w, h) = (self.width, self.height);
        let mut out = LayoutSolution {
            conveyors: Grid::filled(w, h, 0),
            inserters: Grid::filled(w, h, 0),
            routes: Grid::filled(w, h, 0),
            carrying: Grid::filled(w, h, 0),
            assignments: BTreeMap::new(),
            objective_value: sol.objective.unwrap_or(0),
        };
        let mut block_item = vec![0; self.anchors.len()];
        for (k, &wk) in self.who.iter().enumerate() {
            let a = sol.value(wk) as usize - 1;
            out.assignments.insert(self.active[a], self.anchors[k]);
            block_item[k] = self.products[a];
        }
        for i in 0..(w * h) as usize {
            let t = GridCoord::from_index(i, w);
            if let Some(k) = self.block_of[i] {
                out.carrying.set(t, block_item[k]);
                continue;
            }
            let Some(s) = self.state[i] else { continue };
            match state_kind(sol.value(s)) {
                TileKind::Conveyor(d) => out.conveyors.set(t, d.code()),
                TileKind::Inserter(d) => out.inserters.set(t, d.code()),
                _ => {}
            }
            out.routes.set(t, sol.value(self.route[i].unwrap()) as u32);
            out.carrying.set(t, sol.value(self.carry[i].unwrap()) as u32);
        }
        out
    }
}

pub fn solve_stage3(model: &mut Stage3Model) -> (Stage3Outcome, SearchStats) {
    let cfg = SearchConfig {
        objective: Objective::Minimize(model.objective.clone()),
        node_limit: model.config.node_limit,
        time_limit: model.config.time_limit,
        var_order: model.config.var_order,
        ..Default::default()
    };
    let r = model.model.solve(&cfg);
    let outcome = match r.outcome {
        Outcome::Sat(s) => Stage3Outcome::Solved(model.decode(&s)),
        Outcome::Unsat => Stage3Outcome::Infeasible,
        Outcome::LimitReached(s) => Stage3Outcome::LimitReached(s.map(|s| model.decode(&s))),
    };
    (outcome, r.stats)
}

/// Whether `at` lies inside any of the given blocks.
pub fn in_any_block(anchors: &[GridCoord], at: GridCoord) -> bool {
    anchors.iter().any(|&a| block_contains(a, at))
}
