//! Problem instances: blueprint area, item sources, the destination tile and
//! the recipe book, plus the finite-domain bounds every stage model derives
//! from them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Item types are numbered `1..=num_items`; `0` means "no item".
pub type ItemId = u32;

/// Hard cap on inserters around one assembler (three per side).
pub const MAX_INSERTERS_PER_ASSEMBLER: u32 = 12;
pub const DEFAULT_INSERTER_RATE: u32 = 50;
pub const DEFAULT_CONVEYOR_CAPACITY: u32 = 450;

/// A 1-based tile coordinate. `x` grows eastwards, `y` grows southwards and
/// `(1, 1)` is the top-left tile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridCoord {
    pub x: u32,
    pub y: u32,
}

impl GridCoord {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }

    /// The neighbouring tile in `dir`, if it lies inside a `width`×`height` grid.
    pub fn step(self, dir: Direction, width: u32, height: u32) -> Option<GridCoord> {
        let (dx, dy) = dir.delta();
        let x = self.x as i64 + dx as i64;
        let y = self.y as i64 + dy as i64;
        if x < 1 || y < 1 || x > width as i64 || y > height as i64 {
            None
        } else {
            Some(GridCoord::new(x as u32, y as u32))
        }
    }

    /// Row-major index, `(y - 1) * width + (x - 1)`.
    pub fn index(self, width: u32) -> usize {
        ((self.y - 1) * width + (self.x - 1)) as usize
    }

    pub fn from_index(index: usize, width: u32) -> GridCoord {
        let i = index as u32;
        GridCoord::new(i % width + 1, i / width + 1)
    }
}

impl fmt::Display for GridCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// Transport direction. The numeric codes are the ones used in every
/// direction grid: `1..=4` for North, South, East, West and `0` for absent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    North = 1,
    South = 2,
    East = 3,
    West = 4,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::North,
        Direction::South,
        Direction::East,
        Direction::West,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Direction> {
        match code {
            1 => Some(Direction::North),
            2 => Some(Direction::South),
            3 => Some(Direction::East),
            4 => Some(Direction::West),
            _ => None,
        }
    }

    pub fn delta(self) -> (i32, i32) {
        match self {
            Direction::North => (0, -1),
            Direction::South => (0, 1),
            Direction::East => (1, 0),
            Direction::West => (-1, 0),
        }
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::North => Direction::South,
            Direction::South => Direction::North,
            Direction::East => Direction::West,
            Direction::West => Direction::East,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Direction::North => 'N',
            Direction::South => 'S',
            Direction::East => 'E',
            Direction::West => 'W',
        }
    }

    pub fn from_letter(c: char) -> Option<Direction> {
        match c {
            'N' => Some(Direction::North),
            'S' => Some(Direction::South),
            'E' => Some(Direction::East),
            'W' => Some(Direction::West),
            _ => None,
        }
    }

    /// Direction of the step from `from` to an orthogonally adjacent `to`.
    pub fn between(from: GridCoord, to: GridCoord) -> Option<Direction> {
        let dx = to.x as i64 - from.x as i64;
        let dy = to.y as i64 - from.y as i64;
        match (dx, dy) {
            (0, -1) => Some(Direction::North),
            (0, 1) => Some(Direction::South),
            (1, 0) => Some(Direction::East),
            (-1, 0) => Some(Direction::West),
            _ => None,
        }
    }
}

impl Serialize for Direction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.letter().to_string())
    }
}

impl<'de> Deserialize<'de> for Direction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let mut chars = s.chars();
        match (chars.next().and_then(Direction::from_letter), chars.next()) {
            (Some(dir), None) => Ok(dir),
            _ => Err(serde::de::Error::custom(format!("invalid direction `{s}`"))),
        }
    }
}

/// Dense row-major grid. Serialized as a list of rows.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Grid<T> {
    width: u32,
    height: u32,
    cells: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(width: u32, height: u32, value: T) -> Self {
        Self {
            width,
            height,
            cells: vec![value; (width * height) as usize],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_rows(rows: Vec<Vec<T>>) -> Option<Self> {
        let height = rows.len() as u32;
        let width = rows.first().map_or(0, |r| r.len() as u32);
        if rows.iter().any(|r| r.len() as u32 != width) {
            return None;
        }
        Some(Self {
            width,
            height,
            cells: rows.into_iter().flatten().collect(),
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, at: GridCoord) -> &T {
        &self.cells[at.index(self.width)]
    }

    pub fn get_mut(&mut self, at: GridCoord) -> &mut T {
        let w = self.width;
        &mut self.cells[at.index(w)]
    }

    pub fn set(&mut self, at: GridCoord, value: T) {
        *self.get_mut(at) = value;
    }

    pub fn cells(&self) -> &[T] {
        &self.cells
    }

    pub fn coords(&self) -> impl Iterator<Item = GridCoord> {
        let w = self.width;
        (0..self.cells.len()).map(move |i| GridCoord::from_index(i, w))
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.cells.chunks(self.width.max(1) as usize)
    }
}

impl<T: Serialize> Serialize for Grid<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeSeq;
        let mut seq = s.serialize_seq(Some(self.height as usize))?;
        for row in self.rows() {
            seq.serialize_element(row)?;
        }
        seq.end()
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for Grid<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<T>>::deserialize(d)?;
        Grid::from_rows(rows).ok_or_else(|| serde::de::Error::custom("ragged grid rows"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recipe {
    pub product: ItemId,
    pub qty_produced: u32,
    /// Product items per minute at full utilization.
    pub rate: u32,
    /// Ingredient item → quantity consumed per craft.
    pub ingredients: BTreeMap<ItemId, u32>,
}

impl Recipe {
    /// Per-minute consumption of `item` at production rate `rate`, rounded
    /// down to whole items.
    pub fn consumption_at(&self, item: ItemId, rate: u32) -> u32 {
        let qty = self.ingredients.get(&item).copied().unwrap_or(0) as u64;
        (qty * rate as u64 / self.qty_produced as u64) as u32
    }

    /// Per-minute consumption of `item` at full rate, rounded up.
    pub fn max_consumption(&self, item: ItemId) -> u32 {
        let qty = self.ingredients.get(&item).copied().unwrap_or(0) as u64;
        (qty * self.rate as u64).div_ceil(self.qty_produced as u64) as u32
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Source {
    #[serde(flatten)]
    pub at: GridCoord,
    pub item: ItemId,
    /// Items per minute entering the blueprint on this tile.
    pub rate: u32,
}

fn default_inserter_rate() -> u32 {
    DEFAULT_INSERTER_RATE
}

fn default_conveyor_capacity() -> u32 {
    DEFAULT_CONVEYOR_CAPACITY
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub width: u32,
    pub height: u32,
    pub num_items: u32,
    pub out_item: ItemId,
    #[serde(default = "default_inserter_rate")]
    pub inserter_rate: u32,
    #[serde(default = "default_conveyor_capacity")]
    pub conveyor_capacity: u32,
    pub sources: Vec<Source>,
    pub destination: GridCoord,
    pub recipes: Vec<Recipe>,
}

impl ProblemInstance {
    pub fn recipe_for(&self, item: ItemId) -> Option<&Recipe> {
        self.recipes.iter().find(|r| r.product == item)
    }

    pub fn source_at(&self, at: GridCoord) -> Option<&Source> {
        self.sources.iter().find(|s| s.at == at)
    }

    pub fn in_bounds(&self, at: GridCoord) -> bool {
        at.x >= 1 && at.y >= 1 && at.x <= self.width && at.y <= self.height
    }

    /// Source and destination tiles.
    pub fn is_reserved(&self, at: GridCoord) -> bool {
        at == self.destination || self.source_at(at).is_some()
    }

    pub fn reserved_grid(&self) -> Grid<bool> {
        let mut g = Grid::filled(self.width, self.height, false);
        for s in &self.sources {
            if self.in_bounds(s.at) {
                g.set(s.at, true);
            }
        }
        if self.in_bounds(self.destination) {
            g.set(self.destination, true);
        }
        g
    }

    /// Aggregate per-minute supply of `item` over all source tiles.
    pub fn supply_of(&self, item: ItemId) -> u64 {
        self.sources
            .iter()
            .filter(|s| s.item == item)
            .map(|s| s.rate as u64)
            .sum()
    }

    pub fn tile_count(&self) -> usize {
        (self.width * self.height) as usize
    }
}

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown item id {item} in {context}")]
    UnknownItem { item: ItemId, context: String },
    #[error("duplicate recipe for product {0}")]
    DuplicateRecipe(ItemId),
    #[error("empty recipe book: no bounds derivable")]
    EmptyRecipeBook,
}

/// Parses an instance document. Structural problems (bad JSON, missing
/// fields, dangling item ids, duplicate recipes) are errors; semantic
/// problems are left to [`validate_instance`].
pub fn parse_instance(text: &str) -> Result<ProblemInstance, InstanceError> {
    let inst: ProblemInstance = serde_json::from_str(text).map_err(|e| InstanceError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;

    let known = |item: ItemId| item >= 1 && item <= inst.num_items;
    if !known(inst.out_item) {
        return Err(InstanceError::UnknownItem {
            item: inst.out_item,
            context: "out_item".into(),
        });
    }
    for s in &inst.sources {
        if !known(s.item) {
            return Err(InstanceError::UnknownItem {
                item: s.item,
                context: format!("source at {}", s.at),
            });
        }
    }
    let mut seen = BTreeSet::new();
    for r in &inst.recipes {
        if !known(r.product) {
            return Err(InstanceError::UnknownItem {
                item: r.product,
                context: "recipe product".into(),
            });
        }
        if let Some(&bad) = r.ingredients.keys().find(|&&i| !known(i)) {
            return Err(InstanceError::UnknownItem {
                item: bad,
                context: format!("ingredients of recipe {}", r.product),
            });
        }
        if !seen.insert(r.product) {
            return Err(InstanceError::DuplicateRecipe(r.product));
        }
    }
    Ok(inst)
}

/// A broken instance invariant. Violations are data; an instance is usable
/// iff [`validate_instance`] returns none.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InstanceViolation {
    EmptyGrid,
    ZeroInserterRate,
    ZeroConveyorCapacity,
    OutOfBounds(GridCoord),
    DuplicateSource(GridCoord),
    SourceOverlapsDestination(GridCoord),
    UnknownItem(ItemId),
    DuplicateRecipe(ItemId),
    SelfIngredient(ItemId),
    ZeroQuantity(ItemId),
    ZeroRecipeRate(ItemId),
    RecipeCycle(ItemId),
    OutItemUnproducible,
}

impl fmt::Display for InstanceViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyGrid => write!(f, "grid must be at least 1x1"),
            Self::ZeroInserterRate => write!(f, "inserter_rate must be positive"),
            Self::ZeroConveyorCapacity => write!(f, "conveyor_capacity must be positive"),
            Self::OutOfBounds(at) => write!(f, "tile {at} lies outside the grid"),
            Self::DuplicateSource(at) => write!(f, "two sources share tile {at}"),
            Self::SourceOverlapsDestination(at) => write!(f, "source overlaps destination at {at}"),
            Self::UnknownItem(i) => write!(f, "unknown item id {i}"),
            Self::DuplicateRecipe(i) => write!(f, "duplicate recipe for item {i}"),
            Self::SelfIngredient(i) => write!(f, "recipe {i} consumes its own product"),
            Self::ZeroQuantity(i) => write!(f, "recipe {i} has a zero quantity"),
            Self::ZeroRecipeRate(i) => write!(f, "recipe {i} has zero rate"),
            Self::RecipeCycle(i) => write!(f, "recipe cycle through item {i}"),
            Self::OutItemUnproducible => write!(f, "out_item unproducible"),
        }
    }
}

pub fn validate_instance(inst: &ProblemInstance) -> Vec<InstanceViolation> {
    use InstanceViolation as V;
    let mut out = Vec::new();
    if inst.width == 0 || inst.height == 0 {
        out.push(V::EmptyGrid);
    }
    if inst.inserter_rate == 0 {
        out.push(V::ZeroInserterRate);
    }
    if inst.conveyor_capacity == 0 {
        out.push(V::ZeroConveyorCapacity);
    }
    let known = |item: ItemId| item >= 1 && item <= inst.num_items;
    if !known(inst.out_item) {
        out.push(V::UnknownItem(inst.out_item));
    }
    if !inst.in_bounds(inst.destination) {
        out.push(V::OutOfBounds(inst.destination));
    }
    let mut seen = BTreeSet::new();
    for s in &inst.sources {
        if !inst.in_bounds(s.at) {
            out.push(V::OutOfBounds(s.at));
        }
        if !seen.insert(s.at) {
            out.push(V::DuplicateSource(s.at));
        }
        if s.at == inst.destination {
            out.push(V::SourceOverlapsDestination(s.at));
        }
        if !known(s.item) {
            out.push(V::UnknownItem(s.item));
        }
    }
    let mut products = BTreeSet::new();
    for r in &inst.recipes {
        if !known(r.product) {
            out.push(V::UnknownItem(r.product));
        }
        if !products.insert(r.product) {
            out.push(V::DuplicateRecipe(r.product));
        }
        if r.ingredients.contains_key(&r.product) {
            out.push(V::SelfIngredient(r.product));
        }
        if r.qty_produced == 0 || r.ingredients.values().any(|&q| q == 0) {
            out.push(V::ZeroQuantity(r.product));
        }
        if r.rate == 0 {
            out.push(V::ZeroRecipeRate(r.product));
        }
        for &i in r.ingredients.keys() {
            if !known(i) {
                out.push(V::UnknownItem(i));
            }
        }
    }
    if let Some(item) = find_recipe_cycle(inst) {
        out.push(V::RecipeCycle(item));
    }
    if !producible_items(inst).contains(&inst.out_item) {
        out.push(V::OutItemUnproducible);
    }
    out
}

/// Items obtainable from the sources by repeatedly applying recipes whose
/// ingredients are all obtainable.
pub fn producible_items(inst: &ProblemInstance) -> BTreeSet<ItemId> {
    let mut have: BTreeSet<ItemId> = inst.sources.iter().map(|s| s.item).collect();
    loop {
        let before = have.len();
        for r in &inst.recipes {
            if r.ingredients.keys().all(|i| have.contains(i)) {
                have.insert(r.product);
            }
        }
        if have.len() == before {
            return have;
        }
    }
}

fn find_recipe_cycle(inst: &ProblemInstance) -> Option<ItemId> {
    // 0 = unvisited, 1 = on stack, 2 = done
    fn visit(inst: &ProblemInstance, item: ItemId, state: &mut BTreeMap<ItemId, u8>) -> Option<ItemId> {
        match state.get(&item) {
            Some(1) => return Some(item),
            Some(2) => return None,
            _ => {}
        }
        state.insert(item, 1);
        if let Some(r) = inst.recipe_for(item) {
            for &i in r.ingredients.keys() {
                if i == item {
                    continue;
                }
                if let Some(c) = visit(inst, i, state) {
                    return Some(c);
                }
            }
        }
        state.insert(item, 2);
        None
    }
    let mut state = BTreeMap::new();
    inst.recipes
        .iter()
        .find_map(|r| visit(inst, r.product, &mut state))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelBounds {
    pub max_rate: u32,
    pub max_assemblers: u32,
    pub max_consumption: u32,
    pub max_inserters_in: u32,
    pub max_inserters_out: u32,
}

/// Finite-domain bounds shared by the stage models.
pub fn derive_bounds(inst: &ProblemInstance) -> Result<ModelBounds, InstanceError> {
    if inst.recipes.is_empty() {
        return Err(InstanceError::EmptyRecipeBook);
    }
    let max_rate = inst.recipes.iter().map(|r| r.rate).max().unwrap_or(0);
    let max_consumption = inst
        .recipes
        .iter()
        .flat_map(|r| r.ingredients.keys().map(move |&i| r.max_consumption(i)))
        .max()
        .unwrap_or(0);
    let per_inserter = inst.inserter_rate.max(1);
    let clamp = |v: u32| v.clamp(1, MAX_INSERTERS_PER_ASSEMBLER);
    Ok(ModelBounds {
        max_rate,
        max_assemblers: (inst.width / 3) * (inst.height / 3),
        max_consumption,
        max_inserters_in: clamp(max_consumption.div_ceil(per_inserter)),
        max_inserters_out: clamp(max_rate.div_ceil(per_inserter)),
    })
}
