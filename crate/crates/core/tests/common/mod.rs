#![allow(dead_code)]

use cachemm::algo::{AlgorithmDescriptor, BlocksizeSet};
use cachemm::{CacheHierarchy, MatrixBuffer, Operand, Shape};
use rand::rngs::StdRng;
use rand::Rng;

/// A descriptor built the way the family is defined: pick residents outermost
/// first, each different from the one before, and let the loops follow.
pub fn random_descriptor(rng: &mut StdRng, max_level: usize, allow_non_c: bool) -> AlgorithmDescriptor {
    loop {
        let plans = rng.random_range(1..=max_level.min(4) + 1);
        let mut levels: Vec<usize> = (1..=max_level).collect();
        while levels.len() > plans - 1 {
            let drop = rng.random_range(0..levels.len());
            levels.remove(drop);
        }
        levels.reverse();
        levels.push(0);
        let non_c = allow_non_c && rng.random_bool(0.3);
        let mut residents: Vec<(usize, Operand)> = Vec::new();
        let mut ok = true;
        for (pos, &level) in levels.iter().enumerate() {
            let prev = residents.last().map(|r| r.1);
            let choices: Vec<Operand> = Operand::ALL
                .into_iter()
                .filter(|&op| Some(op) != prev)
                .filter(|&op| pos + 1 < levels.len() || non_c || op == Operand::C)
                .collect();
            if choices.is_empty() {
                ok = false;
                break;
            }
            residents.push((level, choices[rng.random_range(0..choices.len())]));
        }
        if !ok {
            continue;
        }
        let mut d = AlgorithmDescriptor::from_residents(&residents).allow_non_c_registers(non_c);
        if rng.random_bool(0.3) {
            let first = d.plans[0];
            d = d.with_outermost_order(first.inner, first.outer);
        }
        return d;
    }
}

/// Nested blocksizes: each one a small multiple of the nearest enclosed
/// blocksize along the same dimension.
pub fn random_blocksizes(rng: &mut StdRng, d: &AlgorithmDescriptor, leaf_max: usize, factor_max: usize) -> BlocksizeSet {
    let mut bs = BlocksizeSet::new();
    for (index, plan) in d.plans.iter().enumerate().rev() {
        for dim in [plan.outer, plan.inner] {
            let grain = d.plans[index + 1..]
                .iter()
                .find(|p| p.outer == dim || p.inner == dim)
                .and_then(|p| bs.get(p.level, dim));
            let size = match grain {
                Some(g) => g * rng.random_range(1..=factor_max),
                None => rng.random_range(1..=leaf_max),
            };
            bs.set(plan.level, dim, size);
        }
    }
    bs
}

pub fn random_shape(rng: &mut StdRng, lo: usize, hi: usize) -> Shape {
    Shape::new(rng.random_range(lo..=hi), rng.random_range(lo..=hi), rng.random_range(lo..=hi)).unwrap()
}

/// `levels` capacities starting at `first`, each 2 to `max_ratio` times the
/// previous one.
pub fn random_hierarchy(rng: &mut StdRng, levels: usize, first: usize, max_ratio: usize) -> CacheHierarchy {
    let mut caps = vec![first];
    while caps.len() < levels {
        let last = *caps.last().unwrap();
        caps.push(last * rng.random_range(2..=max_ratio));
    }
    CacheHierarchy::from_capacities(&caps).unwrap()
}

pub fn random_matrix(rng: &mut StdRng, op: Operand, rows: usize, cols: usize) -> MatrixBuffer {
    MatrixBuffer::from_fn(op, rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn operands(rng: &mut StdRng, shape: Shape) -> (MatrixBuffer, MatrixBuffer, MatrixBuffer) {
    (
        random_matrix(rng, Operand::A, shape.m, shape.k),
        random_matrix(rng, Operand::B, shape.k, shape.n),
        random_matrix(rng, Operand::C, shape.m, shape.n),
    )
}
