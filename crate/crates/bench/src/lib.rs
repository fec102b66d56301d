//! Instances shared by the benchmarks, loaded from the repository's
//! `instances/` directory at compile time.

use bpopt_core::{parse_instance, ProblemInstance};

pub const STRIP_1TO1: &str = include_str!("../../../instances/strip_1to1.json");
pub const STRIP_2TO1: &str = include_str!("../../../instances/strip_2to1.json");
pub const ONE_FITS_5X6: &str = include_str!("../../../instances/one_fits_5x6.json");
pub const SHARED_BELT_5X8: &str = include_str!("../../../instances/shared_belt_5x8.json");
pub const CHAIN_8X8: &str = include_str!("../../../instances/chain_8x8.json");

pub fn load(text: &str) -> ProblemInstance {
    parse_instance(text).expect("bundled instance parses")
}
