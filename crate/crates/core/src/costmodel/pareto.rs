use serde::Serialize;

use super::efficiency_at;
use super::multilevel::unchecked_cost;
use crate::algo::{AlgorithmDescriptor, BlocksizeSet};
use crate::{Dim, Error, Operand, Result, Shape};

/// One point of the trade-off between two adjacent caches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParetoPoint {
    pub ratio: f64,
    pub inner_capacity: usize,
    pub outer_block: usize,
    pub inner_block: usize,
    /// Flops per element moved between the outer cache and memory.
    pub efficiency_outer: f64,
    /// Flops per element moved between the two caches.
    pub efficiency_inner: f64,
}

fn isqrt(x: f64) -> usize {
    (x.max(0.0).sqrt() + 1e-9).floor() as usize
}

/// For each `ratio = M_h / M_{h-1}`, sizes a square block of A for the inner
/// cache and the largest square block of B for the outer cache that still
/// leaves room for the panels streamed by the inner loop
/// (`b^2 + 2 b' b <= M_h`), then evaluates `B2A1C0` on `shape`.
pub fn pareto_sweep(outer_capacity: usize, ratios: &[f64], shape: Shape, slack: f64) -> Result<Vec<ParetoPoint>> {
    if !(0.0..1.0).contains(&slack) {
        return Err(Error::Invalid(format!("slack must lie in [0, 1), got {slack}")));
    }
    let mut ratios = ratios.to_vec();
    if let Some(r) = ratios.iter().find(|r| !(r.is_finite() && **r > 1.0)) {
        return Err(Error::Invalid(format!("capacity ratios must exceed 1, got {r}")));
    }
    ratios.sort_by(f64::total_cmp);
    let descriptor = AlgorithmDescriptor::from_residents(&[(2, Operand::B), (1, Operand::A), (0, Operand::C)]);
    let usable = (1.0 - slack) * outer_capacity as f64;
    let mut out = Vec::with_capacity(ratios.len());
    for ratio in ratios {
        let inner_capacity = (outer_capacity as f64 / ratio).floor() as usize;
        let inner = isqrt((1.0 - slack) * inner_capacity as f64);
        if inner == 0 {
            return Err(Error::Infeasible {
                level: 1,
                reason: format!("ratio {ratio} leaves {inner_capacity} elements, not even a 1x1 block"),
            });
        }
        let bi = inner as f64;
        let mut outer = (isqrt(bi * bi + usable) as f64 - bi).max(0.0) as usize;
        while ((outer + 1) * (outer + 1) + 2 * inner * (outer + 1)) as f64 <= usable {
            outer += 1;
        }
        while outer > 0 && (outer * outer + 2 * inner * outer) as f64 > usable {
            outer -= 1;
        }
        if outer == 0 {
            return Err(Error::Infeasible { level: 2, reason: format!("ratio {ratio} leaves no room for an outer block") });
        }
        let bs = BlocksizeSet::new()
            .with(2, Dim::N, outer)
            .with(2, Dim::K, outer)
            .with(1, Dim::M, inner)
            .with(1, Dim::K, inner.min(outer))
            .with(0, Dim::N, 1)
            .with(0, Dim::M, 1);
        let report = unchecked_cost(&descriptor, &bs, shape, 3);
        out.push(ParetoPoint {
            ratio,
            inner_capacity,
            outer_block: outer,
            inner_block: inner,
            efficiency_outer: efficiency_at(&report, 2, 1.0).flops_per_element,
            efficiency_inner: efficiency_at(&report, 1, 1.0).flops_per_element,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dominates(p: &ParetoPoint, q: &ParetoPoint) -> bool {
        p.efficiency_outer >= q.efficiency_outer
            && p.efficiency_inner >= q.efficiency_inner
            && (p.efficiency_outer > q.efficiency_outer || p.efficiency_inner > q.efficiency_inner)
    }

    #[test]
    fn ratio_trades_levels() {
        let shape = Shape::square(1024).unwrap();
        let pts = pareto_sweep(32768, &[64.0, 4.0], shape, 0.0).unwrap();
        assert_eq!(pts[0].ratio, 4.0);
        let (r4, r64) = (pts[0], pts[1]);
        assert!(r4.efficiency_inner > r64.efficiency_inner);
        assert!(r64.efficiency_outer > r4.efficiency_outer);
    }

    #[test]
    fn sweep_is_non_dominated() {
        let ratios: Vec<f64> = (1..=8).map(|e| f64::from(1u32 << e)).collect();
        let pts = pareto_sweep(32768, &ratios, Shape::square(8192).unwrap(), 1.0 / 16.0).unwrap();
        for p in &pts {
            for q in &pts {
                assert!(!dominates(p, q), "{p:?} dominates {q:?}");
            }
        }
    }

    #[test]
    fn large_ratio_approaches_single_level() {
        let m = 32768;
        let shape = Shape::square(2048).unwrap();
        let p = pareto_sweep(m, &[(m / 2) as f64], shape, 0.0).unwrap()[0];
        // with a 1x1 inner block the outer block tends to sqrt(M) and the
        // outer efficiency to 2 sqrt(M) / 3
        let single = 2.0 * (m as f64).sqrt() / 3.0;
        assert!(p.efficiency_outer > 0.9 * single, "{} vs {single}", p.efficiency_outer);
    }

    #[test]
    fn infeasible_ratio() {
        assert!(matches!(pareto_sweep(100, &[200.0], Shape::square(8).unwrap(), 0.0), Err(Error::Infeasible { .. })));
        assert!(pareto_sweep(100, &[1.0], Shape::square(8).unwrap(), 0.0).is_err());
    }
}
