use serde::{Deserialize, Serialize};

use super::blocksizes::{nesting_violations, plan_checks, BlocksizeSet};
use super::descriptor::{validate_structure, AlgorithmDescriptor};
use crate::{CacheHierarchy, Dim, Error, Operand, Result, Shape};

/// Fraction of every cache kept free for the fringes of streamed panels.
pub const DEFAULT_SLACK: f64 = 1.0 / 16.0;

/// Relative cost of moving one element of each operand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccessCosts {
    pub beta_a: f64,
    pub beta_b: f64,
    pub beta_c: f64,
}

impl Default for AccessCosts {
    fn default() -> Self {
        AccessCosts { beta_a: 1.0, beta_b: 1.0, beta_c: 1.0 }
    }
}

impl AccessCosts {
    pub fn new(beta_a: f64, beta_b: f64, beta_c: f64) -> Result<Self> {
        let costs = AccessCosts { beta_a, beta_b, beta_c };
        costs.check()?;
        Ok(costs)
    }

    pub fn check(&self) -> Result<()> {
        for (name, v) in [("beta_a", self.beta_a), ("beta_b", self.beta_b), ("beta_c", self.beta_c)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Invalid(format!("{name} must be a positive number, got {v}")));
            }
        }
        Ok(())
    }

    pub fn of(&self, op: Operand) -> f64 {
        match op {
            Operand::A => self.beta_a,
            Operand::B => self.beta_b,
            Operand::C => self.beta_c,
        }
    }

    /// Weight of a block dimension: the cost of the streamed operand whose
    /// traffic shrinks as that dimension grows.
    pub fn weight(&self, dim: Dim) -> f64 {
        self.of(dim.missing_from())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        AccessCosts { beta_a: self.beta_a * factor, beta_b: self.beta_b * factor, beta_c: self.beta_c * factor }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeriveOptions {
    pub costs: AccessCosts,
    pub slack: f64,
    /// `(m_r, n_r)` for a register-resident C.
    pub register_tile: (usize, usize),
}

impl Default for DeriveOptions {
    fn default() -> Self {
        DeriveOptions { costs: AccessCosts::default(), slack: DEFAULT_SLACK, register_tile: (4, 12) }
    }
}

/// Largest block `b1 x b2 <= budget` with `b1 / b2 = w1 / w2`, so that
/// `b1 = sqrt(budget * w1 / w2)`.
pub fn square_root_rule(budget: usize, w1: f64, w2: f64) -> (usize, usize) {
    let x = budget as f64;
    let b1 = ((x * w1 / w2).sqrt() + 1e-9).floor() as usize;
    let b2 = ((x * w2 / w1).sqrt() + 1e-9).floor() as usize;
    (b1.max(1), b2.max(1))
}

/// Chooses blocksizes level by level from the registers outward.
///
/// Each resident block is the largest one, along the aspect ratio set by the
/// access costs, for which every fit condition of its plan holds with
/// `(1 - slack) * M_h` in place of `M_h`. Extents of enclosing subproblems
/// are taken to be the whole matrix, so later choices only relax the terms
/// already checked. Each blocksize is a multiple of the nearest enclosed
/// blocksize along the same dimension.
pub fn derive_blocksizes(
    descriptor: &AlgorithmDescriptor,
    hierarchy: &CacheHierarchy,
    shape: Shape,
    options: &DeriveOptions,
) -> Result<BlocksizeSet> {
    let structure = validate_structure(descriptor);
    if !structure.is_empty() {
        return Err(Error::Structure(structure));
    }
    options.costs.check()?;
    if !(0.0..1.0).contains(&options.slack) {
        return Err(Error::Invalid(format!("slack must lie in [0, 1), got {}", options.slack)));
    }
    if options.register_tile.0 == 0 || options.register_tile.1 == 0 {
        return Err(Error::Invalid("register tile dimensions must be >= 1".into()));
    }
    if let Some(plan) = descriptor.plans.iter().find(|p| hierarchy.level(p.level).is_none()) {
        return Err(Error::Invalid(format!("L{} is not in the {}-level hierarchy", plan.level, hierarchy.len())));
    }
    let budget = |l: usize| ((1.0 - options.slack) * hierarchy.capacity(l) as f64).floor() as u64;

    let mut bs = BlocksizeSet::new();
    for index in (0..descriptor.plans.len()).rev() {
        let plan = descriptor.plans[index];
        let feasible = |bs: &BlocksizeSet| {
            plan_checks(descriptor, bs, shape, hierarchy, index, budget).iter().all(|&(_, _, lhs, cap)| lhs <= cap)
        };

        if plan.level == 0 && plan.resident == Operand::C {
            let (m_r, n_r) = options.register_tile;
            bs.set(0, Dim::M, m_r);
            bs.set(0, Dim::N, n_r);
            // the tile is given, so it is held to the full register file
            let fits = plan_checks(descriptor, &bs, shape, hierarchy, index, |l| hierarchy.capacity(l) as u64)
                .iter()
                .all(|&(_, _, lhs, cap)| lhs <= cap);
            if !fits {
                return Err(Error::Infeasible {
                    level: 0,
                    reason: format!("a {m_r}x{n_r} register tile does not fit {} elements", hierarchy.capacity(0)),
                });
            }
            continue;
        }

        let dims = [plan.outer, plan.inner];
        let grain = dims.map(|d| {
            descriptor.plans[index + 1..]
                .iter()
                .find(|p| p.outer == d || p.inner == d)
                .and_then(|p| bs.get(p.level, d))
                .unwrap_or(1)
        });
        let cap = [0, 1].map(|i| shape.extent(dims[i]).max(grain[i]));
        let (w1, w2) = (options.costs.weight(dims[0]), options.costs.weight(dims[1]));
        let ratio = [(w1 / w2).sqrt(), (w2 / w1).sqrt()];
        let at = |x: f64| {
            let mut out = bs.clone();
            for i in 0..2 {
                let raw = ((x * ratio[i]).floor() as usize).min(cap[i]);
                out.set(plan.level, dims[i], (raw / grain[i] * grain[i]).max(grain[i]));
            }
            out
        };

        let mut lo = 0.0;
        if !feasible(&at(lo)) {
            let failing: Vec<_> = plan_checks(descriptor, &at(lo), shape, hierarchy, index, budget)
                .into_iter()
                .filter(|c| c.2 > c.3)
                .map(|(cond, level, lhs, cap)| format!("{cond} at L{level} needs {lhs} of {cap} elements"))
                .collect();
            return Err(Error::Infeasible {
                level: plan.level,
                reason: format!("even a {}x{} block fails ({})", grain[0], grain[1], failing.join(", ")),
            });
        }
        let mut hi = (0..2).map(|i| (cap[i] + 1) as f64 / ratio[i]).fold(0.0, f64::max) + 1.0;
        if feasible(&at(hi)) {
            lo = hi;
        } else {
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if feasible(&at(mid)) {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-9 {
                    break;
                }
            }
        }
        let extent = dims.map(|d| shape.extent(d));
        bs = refine(&at(lo), plan.level, dims, grain, cap, extent, [w1, w2], &feasible);
    }
    debug_assert!(nesting_violations(descriptor, &bs).is_empty());
    Ok(bs)
}

/// Largest feasible multiple of `grain` not above `cap`, if any, for a
/// feasibility that is monotone in the size.
fn largest_feasible(grain: usize, cap: usize, feasible: impl Fn(usize) -> bool) -> Option<usize> {
    let (mut lo, mut hi) = (1, cap / grain);
    if hi == 0 || !feasible(grain) {
        return None;
    }
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if feasible(mid * grain) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    Some(lo * grain)
}

/// Walks the first dimension around the bisection result and, for each
/// size, grows the second as far as it fits. Keeps the pair minimizing the
/// streamed traffic `sqrt(w1) ceil(E1/b1)/E1 + sqrt(w2) ceil(E2/b2)/E2`,
/// which without margins is `sqrt(w1)/b1 + sqrt(w2)/b2` and has the aspect
/// ratio of the square-root rule as its continuous optimum. Ties go to the
/// margin-free form, then to the larger block. Coarse grains make the
/// bisection drop one dimension by a whole grain; this recovers the area.
#[allow(clippy::too_many_arguments)]
fn refine(
    start: &BlocksizeSet,
    level: usize,
    dims: [Dim; 2],
    grain: [usize; 2],
    cap: [usize; 2],
    extent: [usize; 2],
    weights: [f64; 2],
    feasible: &impl Fn(&BlocksizeSet) -> bool,
) -> BlocksizeSet {
    const MAX_STEPS: usize = 4096;
    let base = start.get(level, dims[0]).expect("set by the bisection");
    let lo = (base / 4).max(grain[0]) / grain[0];
    let hi = (base.saturating_mul(4).min(cap[0])) / grain[0];
    let stride = (hi.saturating_sub(lo) + 1).div_ceil(MAX_STEPS).max(1);
    let w = weights.map(f64::sqrt);
    let streamed = |b: [usize; 2]| {
        (0..2).map(|i| w[i] * extent[i].div_ceil(b[i]) as f64 / extent[i] as f64).sum::<f64>()
    };
    let smooth = |b: [usize; 2]| w[0] / b[0] as f64 + w[1] / b[1] as f64;
    let key = |b: [usize; 2]| (streamed(b), smooth(b), std::cmp::Reverse(b[0] * b[1]));
    let better = |x: [usize; 2], y: [usize; 2]| {
        let (kx, ky) = (key(x), key(y));
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
        if !close(kx.0, ky.0) {
            return kx.0 < ky.0;
        }
        if !close(kx.1, ky.1) {
            return kx.1 < ky.1;
        }
        kx.2 < ky.2
    };
    let with = |b: [usize; 2]| start.clone().with(level, dims[0], b[0]).with(level, dims[1], b[1]);
    // stay within one grain of the square-root aspect unless a dimension is
    // clamped to its extent
    let ratio = [(weights[0] / weights[1]).sqrt(), (weights[1] / weights[0]).sqrt()];
    let tolerance = (0..2).map(|i| grain[i] as f64 / ratio[i]).fold(0.0, f64::max) * (1.0 + 1e-9);
    let clamped = |b: [usize; 2]| (0..2).any(|i| b[i] == cap[i] / grain[i] * grain[i]);
    let balanced = |b: [usize; 2]| clamped(b) || (b[0] as f64 / ratio[0] - b[1] as f64 / ratio[1]).abs() <= tolerance;

    let mut best = [base, start.get(level, dims[1]).expect("set by the bisection")];
    let mut q = lo;
    while q <= hi {
        let b0 = q * grain[0];
        if let Some(b1) = largest_feasible(grain[1], cap[1], |b1| feasible(&with([b0, b1]))) {
            // the tallest fitting column may be too tall; the best balanced
            // pair for this width is then at the aspect limit
            let b1 = if balanced([b0, b1]) {
                b1
            } else {
                let limit = ((b0 as f64 / ratio[0] + tolerance) * ratio[1]).floor() as usize;
                (limit / grain[1] * grain[1]).min(b1)
            };
            if b1 >= grain[1] && balanced([b0, b1]) && better([b0, b1], best) {
                best = [b0, b1];
            }
        }
        q += stride;
    }
    with(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algo::{parse_name, validate_blocksizes};

    #[test]
    fn square_root_rule_examples() {
        assert_eq!(square_root_rule(9216, 1.0, 1.0), (96, 96));
        // resident A, m weighted by B, k weighted by C
        assert_eq!(square_root_rule(1024, 4.0, 1.0), (64, 16));
    }

    fn i7() -> CacheHierarchy {
        CacheHierarchy::from_capacities(&[64, 4096, 32768, 786432]).unwrap()
    }

    #[test]
    fn b3a2c0_on_i7_like_hierarchy() {
        let d = parse_name("B3A2C0").unwrap();
        let shape = Shape::square(3000).unwrap();
        let bs = derive_blocksizes(&d, &i7(), shape, &DeriveOptions::default()).unwrap();
        assert_eq!((bs.get(0, Dim::M), bs.get(0, Dim::N)), (Some(4), Some(12)));
        let (mc, kc) = (bs.get(2, Dim::M).unwrap(), bs.get(2, Dim::K).unwrap());
        assert_eq!(mc % 4, 0);
        assert!((60..=240).contains(&mc) && (96..=384).contains(&kc), "{mc}x{kc}");
        let (nb, kb) = (bs.get(3, Dim::N).unwrap(), bs.get(3, Dim::K).unwrap());
        assert_eq!(nb % 12, 0);
        assert_eq!(kb % kc, 0);
        assert!((384..=1536).contains(&nb) && (384..=1536).contains(&kb), "{nb}x{kb}");
        assert!(validate_blocksizes(&d, &bs, &i7(), shape).is_empty());
    }

    #[test]
    fn small_shapes_clamp_to_extent() {
        let d = parse_name("C3A2C0").unwrap();
        let shape = Shape::new(10, 7, 5).unwrap();
        let bs = derive_blocksizes(&d, &i7(), shape, &DeriveOptions::default()).unwrap();
        assert!(bs.get(2, Dim::K).unwrap() <= 5);
        assert!(validate_blocksizes(&d, &bs, &i7(), shape).is_empty());
    }

    #[test]
    fn infeasible_suggests_skipping() {
        // a 1x1 block of A plus a one-element guest panel exceed 15/16 of 2
        let d = parse_name("A1C0").unwrap();
        let h = CacheHierarchy::from_capacities(&[1, 2]).unwrap();
        let opts = DeriveOptions { register_tile: (1, 1), ..Default::default() };
        let e = derive_blocksizes(&d, &h, Shape::square(100).unwrap(), &opts).unwrap_err();
        assert!(matches!(e, Error::Infeasible { level: 1, .. }), "{e}");
        assert!(e.to_string().contains("consider skipping L1"));
    }

    #[test]
    fn rejects_bad_options() {
        let d = parse_name("A1C0").unwrap();
        let h = CacheHierarchy::from_capacities(&[64, 4096]).unwrap();
        let s = Shape::square(50).unwrap();
        let bad_slack = DeriveOptions { slack: 1.0, ..Default::default() };
        assert!(derive_blocksizes(&d, &h, s, &bad_slack).is_err());
        let bad_cost = DeriveOptions { costs: AccessCosts { beta_a: 0.0, beta_b: 1.0, beta_c: 1.0 }, ..Default::default() };
        assert!(derive_blocksizes(&d, &h, s, &bad_cost).is_err());
    }
}
