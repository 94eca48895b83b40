use std::fmt;

use serde::Serialize;

use crate::algo::{nesting_violations, validate_blocksizes, validate_structure, AlgorithmDescriptor, BlocksizeSet};
use crate::{CacheHierarchy, Dim, Error, Operand, Result, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LoopRole {
    Outer,
    Inner,
}

/// One loop of the nest: `dim` is walked in steps of `size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Partition {
    pub level: usize,
    pub dim: Dim,
    pub size: usize,
    pub role: LoopRole,
}

/// Subproblem `C[m] += A[m, k] * B[k, n]` given as `(start, len)` per
/// dimension, indexed by `Dim as usize`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub start: [usize; 3],
    pub len: [usize; 3],
}

impl Region {
    pub fn whole(shape: Shape) -> Self {
        Region { start: [0; 3], len: [shape.m, shape.n, shape.k] }
    }

    pub fn start(&self, d: Dim) -> usize {
        self.start[d as usize]
    }

    pub fn len(&self, d: Dim) -> usize {
        self.len[d as usize]
    }

    pub fn is_empty(&self) -> bool {
        self.len.contains(&0)
    }

    /// Top-left corner and extents of the operand block inside this region.
    pub fn block(&self, op: Operand) -> (usize, usize, usize, usize) {
        let (r, c) = op.dims();
        (self.start(r), self.start(c), self.len(r), self.len(c))
    }
}

/// The loops of a descriptor, outermost first, ending in a kernel that
/// keeps `leaf` resident.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LoopNest {
    pub shape: Shape,
    pub partitions: Vec<Partition>,
    pub leaf: Operand,
    #[serde(skip)]
    pub descriptor: AlgorithmDescriptor,
    #[serde(skip)]
    pub blocksizes: BlocksizeSet,
}

/// Builds the loop nest. Structure, presence and nesting of blocksizes are
/// checked here; cache fit needs a hierarchy, see [`build_plan_checked`].
pub fn build_plan(descriptor: &AlgorithmDescriptor, blocksizes: &BlocksizeSet, shape: Shape) -> Result<LoopNest> {
    let structure = validate_structure(descriptor);
    if !structure.is_empty() {
        return Err(Error::Structure(structure));
    }
    blocksizes.covers(descriptor)?;
    let nesting = nesting_violations(descriptor, blocksizes);
    if !nesting.is_empty() {
        return Err(Error::Blocksizes(nesting));
    }
    let mut partitions = Vec::with_capacity(2 * descriptor.plans.len());
    for plan in &descriptor.plans {
        for (dim, role) in [(plan.outer, LoopRole::Outer), (plan.inner, LoopRole::Inner)] {
            partitions.push(Partition { level: plan.level, dim, size: blocksizes.require(plan.level, dim)?, role });
        }
    }
    Ok(LoopNest {
        shape,
        partitions,
        leaf: descriptor.innermost().expect("validated").resident,
        descriptor: descriptor.clone(),
        blocksizes: blocksizes.clone(),
    })
}

/// [`build_plan`] plus every fit condition against `hierarchy`.
pub fn build_plan_checked(
    descriptor: &AlgorithmDescriptor,
    blocksizes: &BlocksizeSet,
    shape: Shape,
    hierarchy: &CacheHierarchy,
) -> Result<LoopNest> {
    let nest = build_plan(descriptor, blocksizes, shape)?;
    let violations = validate_blocksizes(descriptor, blocksizes, hierarchy, shape);
    if !violations.is_empty() {
        return Err(Error::Blocksizes(violations));
    }
    Ok(nest)
}

impl LoopNest {
    pub fn len(&self) -> usize {
        self.partitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partitions.is_empty()
    }

    /// Default loop to parallelize: the second loop around the kernel.
    pub fn default_parallel_loop(&self) -> usize {
        self.partitions.len().saturating_sub(2)
    }

    /// Calls `f` with every kernel subproblem in nest order.
    pub fn for_each_leaf(&self, mut f: impl FnMut(&Region)) {
        self.walk(0, Region::whole(self.shape), None, &mut f);
    }

    /// Like [`for_each_leaf`](Self::for_each_leaf), but loop `par` only runs
    /// chunk `worker` of `workers` contiguous chunks of its iterations.
    pub fn for_each_leaf_chunk(&self, par: usize, worker: usize, workers: usize, mut f: impl FnMut(&Region)) {
        self.walk(0, Region::whole(self.shape), Some((par, worker, workers)), &mut f);
    }

    fn walk(&self, depth: usize, region: Region, chunk: Option<(usize, usize, usize)>, f: &mut impl FnMut(&Region)) {
        let Some(p) = self.partitions.get(depth) else {
            f(&region);
            return;
        };
        let d = p.dim as usize;
        let blocks = region.len[d].div_ceil(p.size);
        let (first, last) = match chunk {
            Some((par, w, workers)) if par == depth => (w * blocks / workers, (w + 1) * blocks / workers),
            _ => (0, blocks),
        };
        for t in first..last {
            let mut sub = region;
            sub.start[d] += t * p.size;
            sub.len[d] = p.size.min(region.len[d] - t * p.size);
            self.walk(depth + 1, sub, chunk, f);
        }
    }
}

impl fmt::Display for LoopNest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.partitions {
            write!(f, "{}/{} -> ", p.dim, p.size)?;
        }
        write!(f, "kernel({} resident)", self.leaf)
    }
}
