//! Blueprint optimisation: a three-stage constraint pipeline that turns a
//! recipe book and a grid into a verified factory layout.

pub mod domain;
pub mod fdsolver;
pub mod io;
pub mod orchestrator;
pub mod stage1;
pub mod stage2;
pub mod stage3;
pub mod validator;

pub use domain::{parse_instance, validate_instance, Direction, Grid, GridCoord, ItemId, ProblemInstance, Recipe, Source};
pub use orchestrator::{optimize, RunConfig, RunOutcome, RunReport};
pub use stage3::{Penalties, Placement};
pub use validator::{simulate_flow, validate_structure, Blueprint, Cell, FlowReport, Rate};
