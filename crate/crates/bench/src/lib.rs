//! Fixtures shared by the benchmarks.

use cachemm::algo::{derive_blocksizes, parse_name, DeriveOptions};
use cachemm::exec::build_plan;
use cachemm::{CacheHierarchy, LoopNest, MatrixBuffer, Operand, Shape};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Capacities in doubles of a 4-core desktop part: registers, 64KB L1,
/// 256KB L2, 6MB shared L3.
pub fn desktop_hierarchy() -> CacheHierarchy {
    CacheHierarchy::from_capacities(&[64, 8192, 32768, 786432]).expect("valid capacities")
}

/// Scaled-down hierarchy small enough to simulate quickly.
pub fn desk_hierarchy() -> CacheHierarchy {
    CacheHierarchy::from_capacities(&[32, 256, 512, 12288]).expect("valid capacities")
}

/// The nest for `name` with blocksizes derived for `hierarchy`.
pub fn derived_nest(name: &str, hierarchy: &CacheHierarchy, shape: Shape, register_tile: (usize, usize)) -> LoopNest {
    let d = parse_name(name).expect("valid name");
    let options = DeriveOptions { register_tile, ..DeriveOptions::default() };
    let bs = derive_blocksizes(&d, hierarchy, shape, &options).expect("feasible");
    build_plan(&d, &bs, shape).expect("valid plan")
}

pub fn operands(shape: Shape, seed: u64) -> (MatrixBuffer, MatrixBuffer, MatrixBuffer) {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut fill = |op, rows, cols| MatrixBuffer::from_fn(op, rows, cols, |_, _| rng.random_range(-1.0..1.0));
    (fill(Operand::A, shape.m, shape.k), fill(Operand::B, shape.k, shape.n), fill(Operand::C, shape.m, shape.n))
}
