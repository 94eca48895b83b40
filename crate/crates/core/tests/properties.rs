mod common;

use std::collections::BTreeSet;

use cachemm::algo::{
    derive_blocksizes, format_name, parse_name, validate_blocksizes, validate_structure, AccessCosts,
    DeriveOptions,
};
use cachemm::cachesim::{generate_trace, leaf_event_count, simulate, SimOptions, Simulator, TraceLayouts};
use cachemm::costmodel::{
    io_lower_bound, multilevel_cost, resident_cost, roofline_bound, ResidentBlock, RooflineParams,
};
use cachemm::exec::{build_plan, execute, execute_with_packing, reference_gemm, Parallel};
use cachemm::{CacheHierarchy, CacheLevel, Dim, MatrixBuffer, Operand, Shape, TraceEvent};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig { cases: n, failure_persistence: None, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(cases(256))]

    #[test]
    fn generated_descriptors_round_trip(seed in any::<u64>()) {
        let d = common::random_descriptor(&mut rng(seed), 6, false);
        prop_assert!(validate_structure(&d).is_empty(), "{d:?}");
        let name = format_name(&d);
        let parsed = parse_name(&name).unwrap();
        prop_assert_eq!(parsed.residents(), d.residents());
        prop_assert_eq!(format_name(&parsed), name);
    }

    #[test]
    fn mutated_descriptors_are_rejected(seed in any::<u64>(), which in 0usize..3) {
        let mut r = rng(seed);
        let mut d = common::random_descriptor(&mut r, 6, false);
        let i = r.random_range(0..d.plans.len());
        match which {
            0 => {
                let others: Vec<Operand> = Operand::ALL.into_iter().filter(|&o| o != d.plans[i].resident).collect();
                d.plans[i].resident = others[r.random_range(0..2)];
            }
            1 if i > 0 => {
                let p = &mut d.plans[i];
                std::mem::swap(&mut p.outer, &mut p.inner);
            }
            _ if d.plans.len() > 1 => {
                let j = if i == 0 { 1 } else { i - 1 };
                d.plans[i].level = d.plans[j].level;
            }
            _ => d.plans[i].level += 1,
        }
        prop_assert!(!validate_structure(&d).is_empty(), "{d:?}");
    }

    #[test]
    fn resident_cost_is_symmetric_in_a_and_b(m in 1usize..300, n in 1usize..300, k in 1usize..300, r in 1usize..64, c in 1usize..64) {
        let shape = Shape::new(m, n, k).unwrap();
        let mirrored = Shape::new(n, m, k).unwrap();
        // B block is k x n_c, A block is m_c x k; swap m and n
        let b = resident_cost(Operand::B, shape, ResidentBlock { rows: r, cols: c }).unwrap();
        let a = resident_cost(Operand::A, mirrored, ResidentBlock { rows: c, cols: r }).unwrap();
        prop_assert_eq!(b.b, a.a);
        prop_assert_eq!(b.a, a.b);
        prop_assert_eq!(b.c, a.c);
        prop_assert_eq!(b.total_elements, a.total_elements);
    }

    #[test]
    fn larger_resident_blocks_stream_less(op in 0usize..3, m in 1usize..300, n in 1usize..300, k in 1usize..300,
                                          r in 1usize..64, c in 1usize..64, dr in 0usize..16, dc in 0usize..16) {
        let op = Operand::ALL[op];
        let shape = Shape::new(m, n, k).unwrap();
        let small = resident_cost(op, shape, ResidentBlock { rows: r, cols: c }).unwrap();
        let large = resident_cost(op, shape, ResidentBlock { rows: r + dr, cols: c + dc }).unwrap();
        for other in Operand::ALL.into_iter().filter(|&o| o != op) {
            prop_assert!(large.operand(other).total() <= small.operand(other).total());
        }
    }

    #[test]
    fn lower_bound_is_monotone_in_capacity(m in 1usize..5000, n in 1usize..5000, k in 1usize..5000,
                                           cap in 1usize..100_000, extra in 0usize..100_000) {
        let shape = Shape::new(m, n, k).unwrap();
        let small = io_lower_bound(shape, cap);
        let large = io_lower_bound(shape, cap + extra);
        prop_assert!(large.total() <= small.total());
        prop_assert!(large.reads <= small.reads);
    }

    #[test]
    fn roofline_is_lipschitz_and_capped(peak in 1.0e6f64..1.0e12, bw in 1.0e6f64..1.0e11, x in 0.0f64..1000.0, y in 0.0f64..1000.0) {
        let p = RooflineParams::new(peak, bw).unwrap();
        let (bx, by) = (roofline_bound(x, &p), roofline_bound(y, &p));
        prop_assert!(bx <= peak && by <= peak);
        prop_assert!((bx - by).abs() <= bw * (x - y).abs() * (1.0 + 1e-12));
    }
}

proptest! {
    #![proptest_config(cases(128))]

    #[test]
    fn derived_blocksizes_validate(seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = common::random_descriptor(&mut r, 3, false);
        let levels = d.plans[0].level + 1 + r.random_range(0..=1);
        let h = common::random_hierarchy(&mut r, levels, 48, 16);
        let shape = common::random_shape(&mut r, 1, 3000);
        if let Ok(bs) = derive_blocksizes(&d, &h, shape, &DeriveOptions::default()) {
            let v = validate_blocksizes(&d, &bs, &h, shape);
            prop_assert!(v.is_empty(), "{} {bs} {v:?}", d.name());
        }
    }

    #[test]
    fn equal_costs_give_square_blocks(resident in 0usize..2, capacity in 2000usize..200_000) {
        let d = parse_name(["A1C0", "B1C0"][resident]).unwrap();
        let h = CacheHierarchy::from_capacities(&[64, capacity]).unwrap();
        // large enough that partial blocks at the margins do not matter
        let shape = Shape::square(1 << 20).unwrap();
        let options = DeriveOptions { register_tile: (1, 1), ..DeriveOptions::default() };
        let bs = derive_blocksizes(&d, &h, shape, &options).unwrap();
        let (o, i) = d.plans[0].block_dims();
        let (bo, bi) = (bs.get(1, o).unwrap(), bs.get(1, i).unwrap());
        prop_assert!(bo.abs_diff(bi) <= 1, "{bs}");
    }

    #[test]
    fn scaling_costs_keeps_blocksizes(seed in any::<u64>(), a in 0.1f64..10.0, b in 0.1f64..10.0, c in 0.1f64..10.0,
                                      factor in 0.01f64..100.0) {
        let mut r = rng(seed);
        let d = common::random_descriptor(&mut r, 3, false);
        let h = common::random_hierarchy(&mut r, d.plans[0].level + 1, 48, 16);
        let shape = common::random_shape(&mut r, 1, 3000);
        let costs = AccessCosts::new(a, b, c).unwrap();
        let base = DeriveOptions { costs, ..DeriveOptions::default() };
        let scaled = DeriveOptions { costs: costs.scaled(factor), ..DeriveOptions::default() };
        let x = derive_blocksizes(&d, &h, shape, &base).ok();
        let y = derive_blocksizes(&d, &h, shape, &scaled).ok();
        prop_assert_eq!(x, y);
    }

    #[test]
    fn model_dominates_lower_bound(seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = common::random_descriptor(&mut r, 3, false);
        let levels = d.plans[0].level + 1 + r.random_range(0..=1);
        let h = common::random_hierarchy(&mut r, levels, 48, 16);
        let shape = common::random_shape(&mut r, 1, 2000);
        if let Ok(bs) = derive_blocksizes(&d, &h, shape, &DeriveOptions::default()) {
            let report = multilevel_cost(&d, &bs, shape, &h).unwrap();
            for level in &report.levels {
                let lb = io_lower_bound(shape, h.capacity(level.level));
                prop_assert!(level.total_elements >= lb.total(), "L{} {} < {}", level.level, level.total_elements, lb.total());
            }
        }
    }
}

fn plan_and_operands(seed: u64, hi: usize) -> (cachemm::LoopNest, MatrixBuffer, MatrixBuffer, MatrixBuffer) {
    let mut r = rng(seed);
    let shape = common::random_shape(&mut r, 1, hi);
    let d = common::random_descriptor(&mut r, 4, true);
    let bs = common::random_blocksizes(&mut r, &d, 6, 3);
    let nest = build_plan(&d, &bs, shape).unwrap();
    let (a, b, c) = common::operands(&mut r, shape);
    (nest, a, b, c)
}

proptest! {
    #![proptest_config(cases(96))]

    #[test]
    fn execute_matches_reference(seed in any::<u64>(), packed in any::<bool>()) {
        let (nest, a, b, c) = plan_and_operands(seed, 48);
        let mut want = c.clone();
        reference_gemm(&a, &b, &mut want).unwrap();
        let mut got = c;
        if packed {
            execute_with_packing(&nest, &a, &b, &mut got, None).unwrap();
        } else {
            execute(&nest, &a, &b, &mut got, None).unwrap();
        }
        prop_assert!(got.relative_error(&want).unwrap() <= 1e-12);
    }

    #[test]
    fn workers_do_not_change_results(seed in any::<u64>(), workers in 2usize..6) {
        let (nest, a, b, c) = plan_and_operands(seed, 48);
        let mut serial = c.clone();
        execute(&nest, &a, &b, &mut serial, None).unwrap();
        for loop_index in 0..nest.len() {
            if nest.partitions[loop_index].dim == Dim::K {
                continue;
            }
            let mut parallel = c.clone();
            execute(&nest, &a, &b, &mut parallel, Some(Parallel { loop_index, workers })).unwrap();
            prop_assert_eq!(parallel.data(), serial.data());
        }
    }

    #[test]
    fn repeated_execution_accumulates(seed in any::<u64>()) {
        let (nest, a, b, x) = plan_and_operands(seed, 32);
        let mut ab = MatrixBuffer::zeros(Operand::C, x.rows(), x.cols());
        reference_gemm(&a, &b, &mut ab).unwrap();
        let mut want = x.clone();
        for (w, v) in want.data_mut().iter_mut().zip(ab.data()) {
            *w += 2.0 * v;
        }
        let mut got = x;
        execute(&nest, &a, &b, &mut got, None).unwrap();
        execute(&nest, &a, &b, &mut got, None).unwrap();
        prop_assert!(got.relative_error(&want).unwrap() <= 1e-12);
    }

    #[test]
    fn leaves_cover_the_iteration_space_once(seed in any::<u64>()) {
        let (nest, ..) = plan_and_operands(seed, 24);
        let s = nest.shape;
        let mut hits = vec![0u8; s.m * s.n * s.k];
        nest.for_each_leaf(|region| {
            for p in region.start(Dim::K)..region.start(Dim::K) + region.len(Dim::K) {
                for j in region.start(Dim::N)..region.start(Dim::N) + region.len(Dim::N) {
                    for i in region.start(Dim::M)..region.start(Dim::M) + region.len(Dim::M) {
                        hits[(p * s.n + j) * s.m + i] += 1;
                    }
                }
            }
        });
        prop_assert!(hits.iter().all(|&h| h == 1));
    }

    #[test]
    fn trace_touches_exactly_the_executed_elements(seed in any::<u64>()) {
        let (nest, ..) = plan_and_operands(seed, 24);
        let mut expected = BTreeSet::new();
        let mut count = 0;
        nest.for_each_leaf(|region| {
            count += leaf_event_count(nest.leaf, region);
            for op in Operand::ALL {
                let (r0, c0, rows, cols) = region.block(op);
                let ld = nest.shape.operand_dims(op).0;
                for j in c0..c0 + cols {
                    for i in r0..r0 + rows {
                        expected.insert((op, i + j * ld));
                    }
                }
            }
        });
        let mut seen = BTreeSet::new();
        let mut events = 0;
        generate_trace(&nest, |e| {
            events += 1;
            seen.insert((e.operand, e.index));
        });
        prop_assert_eq!(events, count);
        prop_assert_eq!(seen, expected);
    }
}

fn random_trace(r: &mut StdRng, len: usize, span: usize) -> Vec<TraceEvent> {
    (0..len)
        .map(|_| {
            let op = Operand::ALL[r.random_range(0..3)];
            let index = r.random_range(0..span);
            if op == Operand::C && r.random_bool(0.5) {
                TraceEvent::write(op, index)
            } else {
                TraceEvent::read(op, index)
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(cases(128))]

    #[test]
    fn inclusive_levels_contain_inner_levels(seed in any::<u64>()) {
        let mut r = rng(seed);
        let trace = random_trace(&mut r, 2000, 120);
        let h = common::random_hierarchy(&mut r, 4, 2, 4).with_inclusive(true);
        let mut sim = Simulator::new(&h, SimOptions::default());
        for e in trace {
            sim.access(e);
            prop_assert!(sim.inclusion_holds());
        }
    }

    #[test]
    fn misses_never_undercut_cold_misses(seed in any::<u64>(), inclusive in any::<bool>()) {
        let mut r = rng(seed);
        let trace = random_trace(&mut r, 2000, 300);
        let distinct = trace.iter().map(|e| (e.operand, e.index)).collect::<BTreeSet<_>>().len() as u64;
        let h = common::random_hierarchy(&mut r, 4, 2, 6).with_inclusive(inclusive);
        let result = simulate(trace, &h, SimOptions::default());
        for level in &result.levels {
            prop_assert!(level.misses >= distinct);
        }
    }

    #[test]
    fn larger_capacity_never_misses_more(seed in any::<u64>(), which in 1usize..3, extra in 1usize..200) {
        let mut r = rng(seed);
        let trace = random_trace(&mut r, 3000, 250);
        let caps = [1usize, 16, 64, 1024];
        let build = |bump: usize| {
            let levels = caps
                .iter()
                .enumerate()
                .map(|(i, &c)| CacheLevel::new(i, if i == which { c + bump } else { c }))
                .collect();
            CacheHierarchy::new(levels).unwrap()
        };
        let small = simulate(trace.iter().copied(), &build(0), SimOptions::default());
        let large = simulate(trace.iter().copied(), &build(extra.min([0, 47, 959][which])), SimOptions::default());
        prop_assert!(large.level(which).unwrap().misses <= small.level(which).unwrap().misses);
    }

    #[test]
    fn simulated_nest_dominates_lower_bound(seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = common::random_descriptor(&mut r, 2, false);
        let levels = (d.plans[0].level + 1 + r.random_range(0..=1)).max(2);
        let h = common::random_hierarchy(&mut r, levels, 16, 8);
        let shape = common::random_shape(&mut r, 1, 40);
        if let Ok(bs) = derive_blocksizes(&d, &h, shape, &DeriveOptions::default()) {
            let nest = build_plan(&d, &bs, shape).unwrap();
            let result = cachemm::cachesim::simulate_nest(&nest, &TraceLayouts::column_major(&nest), &h, SimOptions::default());
            let lb = io_lower_bound(shape, h.outermost().capacity);
            let o = result.outermost();
            prop_assert!(o.misses + o.writebacks >= lb.total());
        }
    }
}
