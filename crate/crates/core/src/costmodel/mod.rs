//! Closed-form I/O counts for the blocked algorithms.
//!
//! Traffic at level `h` is the number of elements moved between `L_h` and
//! the next slower level (main memory for the outermost cache).

mod multilevel;
mod pareto;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::{Error, Operand, Result, Shape};

pub use multilevel::multilevel_cost;
pub use pareto::{pareto_sweep, ParetoPoint};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperandTraffic {
    pub reads: u64,
    pub writes: u64,
}

impl OperandTraffic {
    pub fn new(reads: u64, writes: u64) -> Self {
        OperandTraffic { reads, writes }
    }

    pub fn total(&self) -> u64 {
        self.reads + self.writes
    }
}

impl std::ops::AddAssign for OperandTraffic {
    fn add_assign(&mut self, rhs: Self) {
        self.reads += rhs.reads;
        self.writes += rhs.writes;
    }
}

/// Traffic across one boundary, split by operand.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelTraffic {
    pub level: usize,
    pub a: OperandTraffic,
    pub b: OperandTraffic,
    pub c: OperandTraffic,
    pub total_elements: u64,
    pub total_bytes: u64,
}

impl LevelTraffic {
    pub fn new(level: usize, a: OperandTraffic, b: OperandTraffic, c: OperandTraffic) -> Self {
        let total_elements = a.total() + b.total() + c.total();
        LevelTraffic { level, a, b, c, total_elements, total_bytes: 8 * total_elements }
    }

    pub fn operand(&self, op: Operand) -> OperandTraffic {
        match op {
            Operand::A => self.a,
            Operand::B => self.b,
            Operand::C => self.c,
        }
    }

    pub fn reads(&self) -> u64 {
        self.a.reads + self.b.reads + self.c.reads
    }

    pub fn writes(&self) -> u64 {
        self.a.writes + self.b.writes + self.c.writes
    }

    fn operand_mut(&mut self, op: Operand) -> &mut OperandTraffic {
        match op {
            Operand::A => &mut self.a,
            Operand::B => &mut self.b,
            Operand::C => &mut self.c,
        }
    }

    fn retotal(mut self) -> Self {
        self.total_elements = self.a.total() + self.b.total() + self.c.total();
        self.total_bytes = 8 * self.total_elements;
        self
    }
}

/// Predicted traffic at every level plus the intensity at one boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub shape: Shape,
    pub flops: u64,
    pub levels: Vec<LevelTraffic>,
    /// Capacity of each level, when the report was computed for a hierarchy.
    #[serde(default)]
    pub capacities: Vec<usize>,
    /// Level whose outward traffic defines the intensity.
    pub boundary: usize,
    pub intensity_flops_per_byte: f64,
}

impl CostReport {
    pub fn new(shape: Shape, levels: Vec<LevelTraffic>) -> Self {
        let boundary = levels.last().map_or(0, |l| l.level);
        let mut report =
            CostReport { shape, flops: shape.flops(), levels, capacities: Vec::new(), boundary, intensity_flops_per_byte: 0.0 };
        report.intensity_flops_per_byte = efficiency(&report).flops_per_byte;
        report
    }

    /// Moves the intensity boundary to `level`.
    pub fn at_boundary(mut self, level: usize) -> Result<Self> {
        if self.level(level).is_none() {
            return Err(Error::Invalid(format!("the report has no level {level}")));
        }
        self.boundary = level;
        self.intensity_flops_per_byte = efficiency(&self).flops_per_byte;
        Ok(self)
    }

    pub fn level(&self, level: usize) -> Option<&LevelTraffic> {
        self.levels.iter().find(|l| l.level == level)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    /// Rows `level,operand,reads,writes`, one per level and operand.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,operand,reads,writes\n");
        for l in &self.levels {
            for op in Operand::ALL {
                let t = l.operand(op);
                writeln!(out, "{},{},{},{}", l.level, op, t.reads, t.writes).expect("string write");
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Efficiency {
    pub flops_per_element: f64,
    pub flops_per_byte: f64,
}

impl Efficiency {
    fn from_traffic(flops: u64, elements: f64) -> Self {
        if elements == 0.0 {
            return Efficiency { flops_per_element: f64::INFINITY, flops_per_byte: f64::INFINITY };
        }
        let per_element = flops as f64 / elements;
        Efficiency { flops_per_element: per_element, flops_per_byte: per_element / 8.0 }
    }
}

/// Flops per element and per byte at the report's boundary. No traffic
/// gives infinity.
pub fn efficiency(report: &CostReport) -> Efficiency {
    efficiency_at(report, report.boundary, 1.0)
}

/// Efficiency at `level` with writes counted `write_weight` times.
pub fn efficiency_at(report: &CostReport, level: usize, write_weight: f64) -> Efficiency {
    let elements = report.level(level).map_or(0.0, |l| l.reads() as f64 + write_weight * l.writes() as f64);
    Efficiency::from_traffic(report.flops, elements)
}

/// Minimum traffic between a cache of `capacity` elements and slow memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LowerBound {
    pub reads: u64,
    pub writes: u64,
}

impl LowerBound {
    pub fn total(&self) -> u64 {
        self.reads + self.writes
    }
}

/// `reads >= 2mnk / sqrt(M) - 2M`, `writes >= mn - M`, clamped at zero.
pub fn io_lower_bound(shape: Shape, capacity: usize) -> LowerBound {
    let mnk = shape.m as f64 * shape.n as f64 * shape.k as f64;
    let m = capacity.max(1) as f64;
    let reads = (2.0 * mnk / m.sqrt()).ceil() - 2.0 * m;
    let writes = shape.m as i128 * shape.n as i128 - capacity as i128;
    LowerBound { reads: reads.max(0.0) as u64, writes: writes.max(0) as u64 }
}

/// Dimensions of one resident block in the operand's own `(rows, cols)`
/// orientation: `m_c x n_c` for C, `m_c x k_c` for A, `k_c x n_c` for B.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResidentBlock {
    pub rows: usize,
    pub cols: usize,
}

/// Two-level traffic of the single-cache algorithm keeping `variant`
/// resident, with every partitioned loop's trip count rounded up.
pub fn resident_cost(variant: Operand, shape: Shape, block: ResidentBlock) -> Result<LevelTraffic> {
    if block.rows == 0 || block.cols == 0 {
        return Err(Error::Invalid(format!("zero blocksize in a {}x{} block", block.rows, block.cols)));
    }
    Ok(resident_traffic(variant, shape, block, 0))
}

pub(crate) fn resident_traffic(variant: Operand, shape: Shape, block: ResidentBlock, level: usize) -> LevelTraffic {
    let (m, n, k) = (shape.m as u64, shape.n as u64, shape.k as u64);
    let trips = |extent: u64, b: usize| extent.div_ceil(b as u64);
    let (a, b, c) = match variant {
        Operand::C => {
            let (mc, nc) = (block.rows, block.cols);
            (
                OperandTraffic::new(m * k * trips(n, nc), 0),
                OperandTraffic::new(n * k * trips(m, mc), 0),
                OperandTraffic::new(m * n, m * n),
            )
        }
        Operand::A => {
            let (mc, kc) = (block.rows, block.cols);
            let cc = m * n * trips(k, kc);
            (OperandTraffic::new(m * k, 0), OperandTraffic::new(n * k * trips(m, mc), 0), OperandTraffic::new(cc, cc))
        }
        Operand::B => {
            let (kc, nc) = (block.rows, block.cols);
            let cc = m * n * trips(k, kc);
            (OperandTraffic::new(m * k * trips(n, nc), 0), OperandTraffic::new(k * n, 0), OperandTraffic::new(cc, cc))
        }
    };
    LevelTraffic::new(level, a, b, c)
}

/// `(1/k_c + 1/(2 n_c))^-1` flops per element.
pub fn goto_efficiency(k_c: usize, n_c: usize) -> f64 {
    1.0 / (1.0 / k_c as f64 + 1.0 / (2.0 * n_c as f64))
}

/// Flops per element of a square `b x b` resident block of A or B whose
/// two streamed operands are moved once per block (C both ways): `2b/3`.
pub fn streaming_efficiency(b: usize) -> f64 {
    2.0 * b as f64 / 3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RooflineParams {
    pub peak_flops_per_s: f64,
    pub bandwidth_bytes_per_s: f64,
}

impl RooflineParams {
    pub fn new(peak_flops_per_s: f64, bandwidth_bytes_per_s: f64) -> Result<Self> {
        for (name, v) in [("peak", peak_flops_per_s), ("bandwidth", bandwidth_bytes_per_s)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(RooflineParams { peak_flops_per_s, bandwidth_bytes_per_s })
    }

    /// Intensity at which the two roofs meet.
    pub fn breakpoint(&self) -> f64 {
        self.peak_flops_per_s / self.bandwidth_bytes_per_s
    }
}

pub fn roofline_bound(intensity_flops_per_byte: f64, params: &RooflineParams) -> f64 {
    (intensity_flops_per_byte * params.bandwidth_bytes_per_s).min(params.peak_flops_per_s)
}

/// One algorithm placed on the roofline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RooflineRow {
    pub name: String,
    pub intensity_flops_per_byte: f64,
    pub bound_flops_per_s: f64,
    /// `bandwidth`, `compute`, or `breakpoint` for the intersection row.
    pub regime: &'static str,
}

/// Bounds for each `(name, intensity)` followed by the intersection of the
/// two roofs; no rows at all when `points` is empty.
pub fn roofline_rows(params: &RooflineParams, points: &[(String, f64)]) -> Vec<RooflineRow> {
    let knee = params.breakpoint();
    let mut rows: Vec<_> = points
        .iter()
        .map(|(name, intensity)| RooflineRow {
            name: name.clone(),
            intensity_flops_per_byte: *intensity,
            bound_flops_per_s: roofline_bound(*intensity, params),
            regime: if *intensity >= knee { "compute" } else { "bandwidth" },
        })
        .collect();
    if !rows.is_empty() {
        rows.push(RooflineRow {
            name: "breakpoint".into(),
            intensity_flops_per_byte: knee,
            bound_flops_per_s: params.peak_flops_per_s,
            regime: "breakpoint",
        });
    }
    rows
}

pub fn roofline_csv(params: &RooflineParams, points: &[(String, f64)]) -> String {
    let mut out = String::from("name,intensity_flops_per_byte,bound_flops_per_s,regime\n");
    for r in roofline_rows(params, points) {
        writeln!(out, "{},{},{},{}", r.name, r.intensity_flops_per_byte, r.bound_flops_per_s, r.regime).expect("string write");
    }
    out
}

pub(crate) fn replace_operand(mut t: LevelTraffic, op: Operand, with: OperandTraffic) -> LevelTraffic {
    *t.operand_mut(op) = with;
    t.retotal()
}
