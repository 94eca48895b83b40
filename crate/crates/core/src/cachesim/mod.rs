//! Element-access traces of loop nests and the cache simulator that replays
//! them.

mod lru;
mod sim;

use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

pub use sim::{simulate, LevelStats, SimOptions, SimResult, Simulator};

use crate::costmodel::CostReport;
use crate::exec::{LoopNest, Region};
use crate::{Dim, Error, HierarchicalLayout, Layout, Operand, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccessKind {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TraceEvent {
    pub operand: Operand,
    pub index: usize,
    pub kind: AccessKind,
}

impl TraceEvent {
    pub fn read(operand: Operand, index: usize) -> Self {
        TraceEvent { operand, index, kind: AccessKind::Read }
    }

    pub fn write(operand: Operand, index: usize) -> Self {
        TraceEvent { operand, index, kind: AccessKind::Write }
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            AccessKind::Read => 'R',
            AccessKind::Write => 'W',
        };
        write!(f, "{} {} {}", self.operand, self.index, kind)
    }
}

/// Layouts used to turn `(i, j)` into trace indices.
#[derive(Debug, Clone)]
pub struct TraceLayouts {
    layouts: [Layout; 3],
}

impl TraceLayouts {
    pub fn column_major(nest: &LoopNest) -> Self {
        TraceLayouts {
            layouts: Operand::ALL.map(|op| {
                let (rows, cols) = nest.shape.operand_dims(op);
                Layout::ColumnMajor { rows, cols }
            }),
        }
    }

    /// The hierarchical layouts the nest packs its operands into.
    pub fn packed(nest: &LoopNest) -> Result<Self> {
        let mut layouts = Self::column_major(nest).layouts;
        for op in Operand::ALL {
            let (rows, cols) = nest.shape.operand_dims(op);
            layouts[op.index()] = Layout::Hierarchical(HierarchicalLayout::for_operand(
                &nest.descriptor,
                &nest.blocksizes,
                op,
                rows,
                cols,
            )?);
        }
        Ok(TraceLayouts { layouts })
    }

    fn addr(&self, op: Operand, i: usize, j: usize) -> usize {
        self.layouts[op.index()].address_of(i, j)
    }
}

/// Number of events [`generate_trace`] emits for one kernel subproblem.
pub fn leaf_event_count(leaf: Operand, region: &Region) -> u64 {
    let (m, n, k) = (region.len(Dim::M) as u64, region.len(Dim::N) as u64, region.len(Dim::K) as u64);
    match leaf {
        Operand::C => 2 * m * n + k * (m + n),
        Operand::A => m * k + n * (k + 2 * m),
        Operand::B => k * n + m * (k + 2 * n),
    }
}

/// Streams the accesses of `nest` to `sink` with column-major indices.
///
/// Per kernel call with C resident: the C tile is read, then for every `p`
/// a column fragment of A and a row fragment of B, then the tile is written.
/// An A-resident kernel reads its block once, then per column of C reads a
/// column of B and reads and writes that column of C; B-resident kernels
/// mirror it row by row.
pub fn generate_trace(nest: &LoopNest, sink: impl FnMut(TraceEvent)) {
    generate_trace_with(nest, &TraceLayouts::column_major(nest), sink)
}

pub fn generate_trace_with(nest: &LoopNest, layouts: &TraceLayouts, mut sink: impl FnMut(TraceEvent)) {
    let leaf = nest.leaf;
    nest.for_each_leaf(|r| {
        let (i0, j0, p0) = (r.start(Dim::M), r.start(Dim::N), r.start(Dim::K));
        let (m, n, k) = (r.len(Dim::M), r.len(Dim::N), r.len(Dim::K));
        let mut ev = |op: Operand, i: usize, j: usize, kind: AccessKind| {
            sink(TraceEvent { operand: op, index: layouts.addr(op, i, j), kind })
        };
        match leaf {
            Operand::C => {
                for j in j0..j0 + n {
                    for i in i0..i0 + m {
                        ev(Operand::C, i, j, AccessKind::Read);
                    }
                }
                for p in p0..p0 + k {
                    for i in i0..i0 + m {
                        ev(Operand::A, i, p, AccessKind::Read);
                    }
                    for j in j0..j0 + n {
                        ev(Operand::B, p, j, AccessKind::Read);
                    }
                }
                for j in j0..j0 + n {
                    for i in i0..i0 + m {
                        ev(Operand::C, i, j, AccessKind::Write);
                    }
                }
            }
            Operand::A => {
                for p in p0..p0 + k {
                    for i in i0..i0 + m {
                        ev(Operand::A, i, p, AccessKind::Read);
                    }
                }
                for j in j0..j0 + n {
                    for p in p0..p0 + k {
                        ev(Operand::B, p, j, AccessKind::Read);
                    }
                    for i in i0..i0 + m {
                        ev(Operand::C, i, j, AccessKind::Read);
                    }
                    for i in i0..i0 + m {
                        ev(Operand::C, i, j, AccessKind::Write);
                    }
                }
            }
            Operand::B => {
                for j in j0..j0 + n {
                    for p in p0..p0 + k {
                        ev(Operand::B, p, j, AccessKind::Read);
                    }
                }
                for i in i0..i0 + m {
                    for p in p0..p0 + k {
                        ev(Operand::A, i, p, AccessKind::Read);
                    }
                    for j in j0..j0 + n {
                        ev(Operand::C, i, j, AccessKind::Read);
                    }
                    for j in j0..j0 + n {
                        ev(Operand::C, i, j, AccessKind::Write);
                    }
                }
            }
        }
    });
}

/// Writes the trace as `OPERAND index R|W` lines.
pub fn dump_trace(nest: &LoopNest, layouts: &TraceLayouts, out: &mut impl Write) -> io::Result<()> {
    let mut result = Ok(());
    generate_trace_with(nest, layouts, |e| {
        if result.is_ok() {
            result = writeln!(out, "{e}");
        }
    });
    result
}

/// Runs the trace of `nest` through `hierarchy`.
pub fn simulate_nest(
    nest: &LoopNest,
    layouts: &TraceLayouts,
    hierarchy: &crate::CacheHierarchy,
    options: SimOptions,
) -> SimResult {
    let mut sim = Simulator::new(hierarchy, options);
    generate_trace_with(nest, layouts, |e| sim.access(e));
    sim.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelComparison {
    pub level: usize,
    /// `(misses + writebacks) * granularity`
    pub simulated: u64,
    /// Model reads + writes.
    pub modeled: u64,
    pub relative_error: f64,
    pub simulated_reads: u64,
    pub modeled_reads: u64,
    pub read_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelComparison {
    pub levels: Vec<LevelComparison>,
}

impl ModelComparison {
    pub fn max_relative_error(&self) -> f64 {
        self.levels.iter().map(|l| l.relative_error).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("level,simulated,modeled,relative_error,simulated_reads,modeled_reads,read_relative_error\n");
        for l in &self.levels {
            out.push_str(&format!(
                "{},{},{},{:.6},{},{},{:.6}\n",
                l.level, l.simulated, l.modeled, l.relative_error, l.simulated_reads, l.modeled_reads, l.read_relative_error
            ));
        }
        out
    }
}

fn relative(sim: u64, model: u64) -> f64 {
    if model == 0 {
        if sim == 0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (sim as f64 - model as f64).abs() / model as f64
    }
}

/// `|sim - model| / model` per simulated level. Both must describe the
/// same levels with the same capacities.
pub fn compare_model(sim: &SimResult, model: &CostReport) -> Result<ModelComparison> {
    let mut levels = Vec::with_capacity(sim.levels.len());
    for s in &sim.levels {
        let Some(m) = model.level(s.level) else {
            return Err(Error::Provenance(format!("the model has no level {}", s.level)));
        };
        if let Some(&cap) = model.capacities.get(s.level) {
            if cap != s.capacity {
                return Err(Error::Provenance(format!(
                    "L{} holds {} elements in the simulation but {cap} in the model",
                    s.level, s.capacity
                )));
            }
        }
        let g = s.granularity as u64;
        let simulated = (s.misses + s.writebacks) * g;
        let simulated_reads = s.read_misses * g;
        levels.push(LevelComparison {
            level: s.level,
            simulated,
            modeled: m.total_elements,
            relative_error: relative(simulated, m.total_elements),
            simulated_reads,
            modeled_reads: m.reads(),
            read_relative_error: relative(simulated_reads, m.reads()),
        });
    }
    Ok(ModelComparison { levels })
}
