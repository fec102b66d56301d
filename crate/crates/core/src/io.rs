//! Blueprint files, ASCII rendering and the game's blueprint-string format.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Direction, GridCoord, ItemId};
use crate::validator::{Blueprint, Cell};

pub const CONVEYOR_ENTITY: &str = "transport-belt";
pub const INSERTER_ENTITY: &str = "inserter";
pub const ASSEMBLER_ENTITY: &str = "assembling-machine-1";
/// Version number written into exported strings (game 1.1).
pub const BLUEPRINT_VERSION: u64 = 281_479_275_675_648;
const STRING_VERSION: char = '0';
const RATE_PREFIX: &str = "predicted_rate=";

#[derive(Debug, Error)]
pub enum BlueprintFileError {
    #[error("cannot read blueprint: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed blueprint document: {0}")]
    Json(#[from] serde_json::Error),
}

pub fn blueprint_to_json(bp: &Blueprint) -> String {
    serde_json::to_string_pretty(bp).expect("blueprint serializes") + "\n"
}

pub fn blueprint_from_json(text: &str) -> Result<Blueprint, BlueprintFileError> {
    Ok(serde_json::from_str(text)?)
}

pub fn read_blueprint(path: &std::path::Path) -> Result<Blueprint, BlueprintFileError> {
    blueprint_from_json(&std::fs::read_to_string(path)?)
}

pub fn write_blueprint(path: &std::path::Path, bp: &Blueprint) -> Result<(), BlueprintFileError> {
    std::fs::write(path, blueprint_to_json(bp))?;
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RenderStyle {
    /// `N S E W` conveyors, `n s e w` inserters, `#` assembler cells.
    #[default]
    Letters,
    /// `^ v > <` conveyors, inserters as letters, assembler cells show the
    /// recipe's last digit.
    Arrows,
}

/// One line per row, top row first.
pub fn render_ascii(bp: &Blueprint, style: RenderStyle) -> String {
    let mut out = String::new();
    for row in bp.cells.rows() {
        for cell in row {
            let ch = match (*cell, style) {
                (Cell::Empty, _) => '.',
                (Cell::Conveyor { dir }, RenderStyle::Letters) => dir.letter(),
                (Cell::Conveyor { dir }, RenderStyle::Arrows) => match dir {
                    Direction::North => '^',
                    Direction::South => 'v',
                    Direction::East => '>',
                    Direction::West => '<',
                },
                (Cell::Inserter { dir }, _) => dir.letter().to_ascii_lowercase(),
                (Cell::Assembler { .. }, RenderStyle::Letters) => '#',
                (Cell::Assembler { recipe, .. }, RenderStyle::Arrows) => {
                    char::from_digit(recipe % 10, 10).unwrap_or('#')
                }
            };
            out.push(ch);
        }
        out.push('\n');
    }
    out
}

/// Lines to print under [`render_ascii`]: the glyph key, each block's
/// anchor and recipe, and the predicted rate. Grid plus legend identifies
/// the blueprint exactly.
pub fn render_legend(bp: &Blueprint, style: RenderStyle, names: &NameTable) -> String {
    let mut out = String::from(match style {
        RenderStyle::Letters => "key: NSEW conveyor, nsew inserter, # assembler, . empty\n",
        RenderStyle::Arrows => "key: ^v>< conveyor, nsew inserter, digit assembler (recipe mod 10), . empty\n",
    });
    for p in bp.placements() {
        out.push_str(&format!("assembler at {}: {} (item {})\n", p.anchor, names.name(p.recipe), p.recipe));
    }
    out.push_str(&format!("predicted rate: {}\n", bp.predicted_rate));
    out
}

/// Game names for recipes, by item id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NameTable {
    names: BTreeMap<ItemId, String>,
}

impl NameTable {
    pub fn new(names: BTreeMap<ItemId, String>) -> Self {
        Self { names }
    }

    pub fn name(&self, item: ItemId) -> String {
        self.names.get(&item).cloned().unwrap_or_else(|| format!("item-{item}"))
    }

    pub fn item(&self, name: &str) -> Option<ItemId> {
        if let Some((&id, _)) = self.names.iter().find(|(_, n)| n.as_str() == name) {
            return Some(id);
        }
        name.strip_prefix("item-")?.parse().ok().filter(|id| !self.names.contains_key(id))
    }
}

#[derive(Debug, Error)]
pub enum ImportError {
    #[error("unsupported blueprint string version {0:?}")]
    BadVersion(Option<char>),
    #[error("blueprint string is not valid base64: {0}")]
    Base64(#[from] base64::DecodeError),
    #[error("blueprint string payload is not valid zlib data: {0}")]
    Decompress(std::io::Error),
    #[error("blueprint payload is not a blueprint document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported entity {0:?}")]
    UnsupportedEntity(String),
    #[error("unknown recipe {0:?}")]
    UnknownRecipe(String),
    #[error("entity {0} has direction {1}, expected 0, 2, 4 or 6")]
    BadDirection(u64, u8),
    #[error("entity {0} sits off the tile grid")]
    BadPosition(u64),
    #[error("entity {0} overlaps another entity")]
    Overlap(u64),
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    blueprint: Document,
}

#[derive(Serialize, Deserialize)]
struct Document {
    item: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    label: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    description: String,
    #[serde(default)]
    entities: Vec<Entity>,
    /// Grid size, so that empty border rows and columns survive a round trip.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid: Option<GridSize>,
    version: u64,
}

#[derive(Serialize, Deserialize)]
struct GridSize {
    width: u32,
    height: u32,
}

#[derive(Serialize, Deserialize)]
struct Entity {
    entity_number: u64,
    name: String,
    position: Position,
    #[serde(default)]
    direction: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    recipe: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct Position {
    x: f64,
    y: f64,
}

fn game_direction(d: Direction) -> u8 {
    match d {
        Direction::North => 0,
        Direction::East => 2,
        Direction::South => 4,
        Direction::West => 6,
    }
}

fn from_game_direction(code: u8) -> Option<Direction> {
    match code {
        0 => Some(Direction::North),
        2 => Some(Direction::East),
        4 => Some(Direction::South),
        6 => Some(Direction::West),
        _ => None,
    }
}

/// Encodes a blueprint as a game blueprint string. Inserters are written
/// facing their pickup side, as the game expects.
pub fn export_blueprint_string(bp: &Blueprint, names: &NameTable) -> String {
    let mut entities = Vec::new();
    for c in bp.cells.coords() {
        let (name, direction, recipe, x, y) = match *bp.cells.get(c) {
            Cell::Empty => continue,
            Cell::Conveyor { dir } => (CONVEYOR_ENTITY, game_direction(dir), None, c.x as f64 - 0.5, c.y as f64 - 0.5),
            Cell::Inserter { dir } => (
                INSERTER_ENTITY,
                game_direction(dir.opposite()),
                None,
                c.x as f64 - 0.5,
                c.y as f64 - 0.5,
            ),
            Cell::Assembler { anchor, recipe } if anchor == c => (
                ASSEMBLER_ENTITY,
                0,
                Some(names.name(recipe)),
                c.x as f64 + 0.5,
                c.y as f64 + 0.5,
            ),
            Cell::Assembler { .. } => continue,
        };
        entities.push(Entity {
            entity_number: entities.len() as u64 + 1,
            name: name.to_string(),
            position: Position { x, y },
            direction,
            recipe,
        });
    }
    let doc = Envelope {
        blueprint: Document {
            item: "blueprint".into(),
            label: String::new(),
            description: format!("{RATE_PREFIX}{}", bp.predicted_rate),
            entities,
            grid: Some(GridSize {
                width: bp.width,
                height: bp.height,
            }),
            version: BLUEPRINT_VERSION,
        },
    };
    let json = serde_json::to_vec(&doc).expect("document serializes");
    let mut enc = ZlibEncoder::new(Vec::new(), Compression::best());
    enc.write_all(&json).expect("in-memory write");
    let packed = enc.finish().expect("in-memory write");
    format!("{STRING_VERSION}{}", STANDARD.encode(packed))
}

/// Decodes a game blueprint string. Without a recorded grid size the grid
/// is the bounding box of the entities, anchored at tile (1,1).
pub fn import_blueprint_string(text: &str, names: &NameTable) -> Result<Blueprint, ImportError> {
    let text = text.trim();
    let mut chars = text.chars();
    match chars.next() {
        Some(STRING_VERSION) => {}
        other => return Err(ImportError::BadVersion(other)),
    }
    let packed = STANDARD.decode(chars.as_str())?;
    let mut json = Vec::new();
    ZlibDecoder::new(packed.as_slice())
        .read_to_end(&mut json)
        .map_err(ImportError::Decompress)?;
    let doc: Envelope = serde_json::from_slice(&json)?;
    let doc = doc.blueprint;

    enum Placed {
        Conveyor(Direction),
        Inserter(Direction),
        Assembler(ItemId),
    }
    let mut placed = Vec::new();
    for e in &doc.entities {
        let n = e.entity_number;
        let dir = || from_game_direction(e.direction).ok_or(ImportError::BadDirection(n, e.direction));
        let (kind, corner) = match e.name.as_str() {
            CONVEYOR_ENTITY => (Placed::Conveyor(dir()?), (e.position.x + 0.5, e.position.y + 0.5)),
            INSERTER_ENTITY => (Placed::Inserter(dir()?.opposite()), (e.position.x + 0.5, e.position.y + 0.5)),
            ASSEMBLER_ENTITY => {
                let name = e.recipe.clone().unwrap_or_default();
                let item = names.item(&name).ok_or(ImportError::UnknownRecipe(name))?;
                (Placed::Assembler(item), (e.position.x - 0.5, e.position.y - 0.5))
            }
            other => return Err(ImportError::UnsupportedEntity(other.to_string())),
        };
        let (fx, fy) = corner;
        if fx.fract() != 0.0 || fy.fract() != 0.0 {
            return Err(ImportError::BadPosition(n));
        }
        placed.push((n, kind, fx as i64, fy as i64));
    }

    let extent = |p: &Placed| if matches!(p, Placed::Assembler(_)) { 2 } else { 0 };
    let (w, h, dx, dy) = match &doc.grid {
        Some(g) => (g.width, g.height, 0, 0),
        None if placed.is_empty() => (0, 0, 0, 0),
        None => {
            let min_x = placed.iter().map(|p| p.2).min().unwrap_or(1);
            let min_y = placed.iter().map(|p| p.3).min().unwrap_or(1);
            let max_x = placed.iter().map(|p| p.2 + extent(&p.1)).max().unwrap_or(1);
            let max_y = placed.iter().map(|p| p.3 + extent(&p.1)).max().unwrap_or(1);
            ((max_x - min_x + 1) as u32, (max_y - min_y + 1) as u32, 1 - min_x, 1 - min_y)
        }
    };
    let mut bp = Blueprint::empty(w, h);
    bp.predicted_rate = doc
        .description
        .strip_prefix(RATE_PREFIX)
        .and_then(|r| r.trim().parse().ok())
        .unwrap_or(0);
    for (n, kind, x, y) in placed {
        let (x, y) = (x + dx, y + dy);
        let span = extent(&kind);
        if x < 1 || y < 1 || x + span > w as i64 || y + span > h as i64 {
            return Err(ImportError::BadPosition(n));
        }
        let at = GridCoord::new(x as u32, y as u32);
        let (cells, cell): (Vec<GridCoord>, Cell) = match kind {
            Placed::Conveyor(dir) => (vec![at], Cell::Conveyor { dir }),
            Placed::Inserter(dir) => (vec![at], Cell::Inserter { dir }),
            Placed::Assembler(recipe) => (crate::stage2::block_cells(at).collect(), Cell::Assembler { anchor: at, recipe }),
        };
        for c in cells {
            if *bp.cells.get(c) != Cell::Empty {
                return Err(ImportError::Overlap(n));
            }
            bp.cells.set(c, cell);
        }
    }
    Ok(bp)
}
