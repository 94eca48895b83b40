use super::{replace_operand, resident_traffic, CostReport, LevelTraffic, OperandTraffic, ResidentBlock};
use crate::algo::{validate_blocksizes, validate_structure, AlgorithmDescriptor, BlocksizeSet, LevelPlan};
use crate::{CacheHierarchy, Error, Operand, Result, Shape};

/// Distinct subproblem extents along one dimension with their multiplicity.
type Extents = Vec<(usize, u64)>;

/// Extents of the subproblems left after applying the loops of `plans`.
fn subproblems(shape: Shape, plans: &[LevelPlan], bs: &BlocksizeSet) -> [Extents; 3] {
    let mut dims: [Extents; 3] = [vec![(shape.m, 1)], vec![(shape.n, 1)], vec![(shape.k, 1)]];
    for plan in plans {
        for d in [plan.outer, plan.inner] {
            let b = bs.get(plan.level, d).expect("validated");
            let mut next: Extents = Vec::new();
            for &(size, count) in &dims[d as usize] {
                for (s, c) in [(b, (size / b) as u64 * count), (size % b, count)] {
                    if s == 0 || c == 0 {
                        continue;
                    }
                    match next.iter_mut().find(|e| e.0 == s) {
                        Some(e) => e.1 += c,
                        None => next.push((s, c)),
                    }
                }
            }
            dims[d as usize] = next;
        }
    }
    dims
}

fn for_each_subproblem(dims: &[Extents; 3], mut f: impl FnMut(Shape, u64)) {
    for &(m, cm) in &dims[0] {
        for &(n, cn) in &dims[1] {
            for &(k, ck) in &dims[2] {
                f(Shape { m, n, k }, cm * cn * ck);
            }
        }
    }
}

fn scaled(t: LevelTraffic, c: u64) -> [OperandTraffic; 3] {
    [t.a, t.b, t.c].map(|o| OperandTraffic::new(o.reads * c, o.writes * c))
}

/// Traffic into the cache of plan `index`, summed over the subproblems its
/// enclosing plans produce.
fn plan_traffic(descriptor: &AlgorithmDescriptor, bs: &BlocksizeSet, shape: Shape, index: usize, level: usize) -> LevelTraffic {
    let plan = descriptor.plans[index];
    let (rows, cols) = plan.resident.dims();
    let block = ResidentBlock { rows: bs.get(plan.level, rows).expect("validated"), cols: bs.get(plan.level, cols).expect("validated") };
    let mut sum = [OperandTraffic::default(); 3];
    for_each_subproblem(&subproblems(shape, &descriptor.plans[..index], bs), |sub, count| {
        for (acc, t) in sum.iter_mut().zip(scaled(resident_traffic(plan.resident, sub, block, level), count)) {
            *acc += t;
        }
    });
    LevelTraffic::new(level, sum[0], sum[1], sum[2])
}

/// Total size of `op` over the subproblems left after `plans`, once each.
fn footprint(shape: Shape, plans: &[LevelPlan], bs: &BlocksizeSet, op: Operand) -> OperandTraffic {
    let mut elements = 0;
    for_each_subproblem(&subproblems(shape, plans, bs), |sub, count| {
        elements += sub.operand_len(op) as u64 * count;
    });
    OperandTraffic::new(elements, if op == Operand::C { elements } else { 0 })
}

/// Predicted traffic at every level of `hierarchy`.
///
/// A level with a plan receives, per subproblem of its enclosing plans, the
/// traffic of the single-cache algorithm keeping its resident. A skipped
/// level sees the traffic of the next plan down, except that the guest panel
/// of the plan above stays in it and is loaded once per subproblem of that
/// plan. Levels above the outermost plan do the same with the guest of main
/// memory, loaded once in full.
pub fn multilevel_cost(
    descriptor: &AlgorithmDescriptor,
    blocksizes: &BlocksizeSet,
    shape: Shape,
    hierarchy: &CacheHierarchy,
) -> Result<CostReport> {
    let structure = validate_structure(descriptor);
    if !structure.is_empty() {
        return Err(Error::Structure(structure));
    }
    let violations = validate_blocksizes(descriptor, blocksizes, hierarchy, shape);
    if !violations.is_empty() {
        return Err(Error::Blocksizes(violations));
    }
    let mut report = unchecked_cost(descriptor, blocksizes, shape, hierarchy.len());
    report.capacities = hierarchy.levels().iter().map(|l| l.capacity).collect();
    Ok(report)
}

/// Same as [`multilevel_cost`] for `levels` levels without fit checks;
/// blocksizes must cover the descriptor.
pub(crate) fn unchecked_cost(descriptor: &AlgorithmDescriptor, bs: &BlocksizeSet, shape: Shape, levels: usize) -> CostReport {
    let plans = &descriptor.plans;
    let mut out = Vec::with_capacity(levels);
    for level in 0..levels {
        let traffic = if let Some(index) = plans.iter().position(|p| p.level == level) {
            plan_traffic(descriptor, bs, shape, index, level)
        } else if level > plans[0].level {
            let guest = plans[0].inner.missing_from();
            let base = plan_traffic(descriptor, bs, shape, 0, level);
            replace_operand(base, guest, footprint(shape, &[], bs, guest))
        } else {
            let above = plans.iter().rposition(|p| p.level > level).expect("some plan encloses the level");
            let guest = plans[above + 1].inner.missing_from();
            let base = plan_traffic(descriptor, bs, shape, above + 1, level);
            replace_operand(base, guest, footprint(shape, &plans[..=above], bs, guest))
        };
        out.push(traffic);
    }
    CostReport::new(shape, out)
}
