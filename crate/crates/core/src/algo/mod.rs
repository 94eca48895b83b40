//! The algorithm family: descriptors such as `B3A2C0`, their structural
//! rules, blocksize fitting and derivation, and shape-based selection.

mod blocksizes;
mod derive;
mod descriptor;
mod select;

pub(crate) use blocksizes::nesting_violations;
pub use blocksizes::{validate_blocksizes, BlocksizeSet, BlocksizeViolation, FitCondition};
pub use derive::{derive_blocksizes, square_root_rule, AccessCosts, DeriveOptions, DEFAULT_SLACK};
pub use descriptor::{
    format_name, parse_name, skip_level, validate_structure, AlgorithmDescriptor, LevelPlan, StructureRule,
    StructureViolation,
};
pub use select::{select_algorithm, select_algorithm_with, SelectOptions};
