//! Multilevel cache-blocked matrix-matrix multiplication.
//!
//! The crate is organised around a family of blocked algorithms for
//! `C += A * B`, each identified by the operand kept resident at every level
//! of cache it optimizes for (`B3A2C0`, `A2C0`, ...).
//!
//! * [`algo`] parses and validates algorithm descriptors and derives
//!   blocksizes that respect the capacity of each cache level.
//! * [`costmodel`] predicts the number of elements moved across every cache
//!   boundary, plus I/O lower bounds, roofline bounds and Pareto sweeps.
//! * [`exec`] turns a descriptor into a loop nest and runs it numerically.
//! * [`cachesim`] replays the element-access trace of a loop nest through a
//!   multilevel LRU simulator, the ground truth for every analytical count.
//!
//! Shared vocabulary ([`Shape`], [`Operand`], [`Dim`], [`CacheHierarchy`],
//! [`MatrixBuffer`]) lives at the crate root.

pub mod algo;
pub mod cachesim;
pub mod costmodel;
mod error;
pub mod exec;
mod hierarchy;
mod shape;
mod storage;

pub use error::{Error, Result};
pub use hierarchy::{CacheHierarchy, CacheLevel, ReplacementPolicy};
pub use shape::{Dim, Operand, Shape};
pub use storage::{element_address, pack, unpack, Axis, HierarchicalLayout, Layout, MatrixBuffer, Split};

pub use algo::{AlgorithmDescriptor, BlocksizeSet, LevelPlan};
pub use cachesim::{SimResult, TraceEvent};
pub use costmodel::CostReport;
pub use exec::LoopNest;
