use std::collections::hash_map::DefaultHasher;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};
use std::io::{BufWriter, Write as _};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use cachemm::algo::{
    derive_blocksizes, select_algorithm, validate_blocksizes, validate_structure, AlgorithmDescriptor,
};
use cachemm::cachesim::{compare_model, dump_trace, simulate_nest, SimOptions, TraceLayouts};
use cachemm::costmodel::{
    efficiency, io_lower_bound, multilevel_cost, pareto_sweep, roofline_csv, roofline_rows, CostReport, RooflineParams,
};
use cachemm::exec::{build_plan, execute, execute_with_packing, reference_gemm, Parallel};
use cachemm::{BlocksizeSet, CacheHierarchy, MatrixBuffer, Operand, Shape};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::json;

use crate::args::{self, AnalyzeArgs, ParetoArgs, PlanArgs, RooflineArgs, RunArgs, SimulateArgs};
use crate::report::{classify, CheckFailed, Report};

fn check_structure(d: &AlgorithmDescriptor) -> Result<()> {
    let violations = validate_structure(d);
    if violations.is_empty() {
        return Ok(());
    }
    let list: Vec<String> = violations.iter().map(|v| format!("  {v}")).collect();
    Err(CheckFailed(format!("{} is not a valid descriptor:\n{}", d.name(), list.join("\n"))).into())
}

fn check_fit(d: &AlgorithmDescriptor, bs: &BlocksizeSet, h: &CacheHierarchy, shape: Shape) -> Result<()> {
    let violations = validate_blocksizes(d, bs, h, shape);
    if violations.is_empty() {
        return Ok(());
    }
    let list: Vec<String> = violations.iter().map(|v| format!("  {v}")).collect();
    Err(CheckFailed(format!("blocksizes {bs} do not fit for {}:\n{}", d.name(), list.join("\n"))).into())
}

struct Setup {
    descriptor: AlgorithmDescriptor,
    hierarchy: CacheHierarchy,
    blocksizes: BlocksizeSet,
}

fn setup(a: &AnalyzeArgs) -> Result<Setup> {
    let hierarchy = args::hierarchy(&a.hier)?;
    let descriptor = a.algorithm.load()?;
    check_structure(&descriptor)?;
    let blocksizes = a.blocksizes.resolve(&descriptor, Some(&hierarchy), a.shape)?;
    check_fit(&descriptor, &blocksizes, &hierarchy, a.shape)?;
    Ok(Setup { descriptor, hierarchy, blocksizes })
}

fn traffic_table(report: &CostReport) -> String {
    let mut out = format!(
        "{:>5} {:>14} {:>14} {:>14} {:>14} {:>16}\n",
        "level", "A reads", "B reads", "C reads", "C writes", "total elements"
    );
    for l in &report.levels {
        writeln!(
            out,
            "{:>5} {:>14} {:>14} {:>14} {:>14} {:>16}",
            format!("L{}", l.level),
            l.a.reads,
            l.b.reads,
            l.c.reads,
            l.c.writes,
            l.total_elements
        )
        .unwrap();
    }
    out
}

pub fn analyze(a: &AnalyzeArgs) -> Result<Report> {
    let s = setup(a)?;
    let mut report = multilevel_cost(&s.descriptor, &s.blocksizes, a.shape, &s.hierarchy).map_err(classify)?;
    if let Some(level) = a.boundary {
        report = report.at_boundary(level)?;
    }
    let eff = efficiency(&report);
    let mut human = format!(
        "algorithm   {}\nshape       {}\nblocksizes  {}\n\n{}",
        s.descriptor.name(),
        a.shape,
        s.blocksizes,
        traffic_table(&report)
    );
    writeln!(
        human,
        "\nintensity across L{}: {:.2} flops/byte ({:.2} flops/element)",
        report.boundary, eff.flops_per_byte, eff.flops_per_element
    )?;
    Ok(Report {
        json: json!({
            "descriptor": s.descriptor.name(),
            "blocksizes": s.blocksizes,
            "report": report,
            "efficiency": eff,
        }),
        csv: report.to_csv(),
        human,
        failure: None,
    })
}

pub fn simulate(a: &SimulateArgs) -> Result<Report> {
    let s = setup(&a.analyze)?;
    let shape = a.analyze.shape;
    let nest = build_plan(&s.descriptor, &s.blocksizes, shape).map_err(classify)?;
    let layouts = if a.packed { TraceLayouts::packed(&nest)? } else { TraceLayouts::column_major(&nest) };
    if let Some(path) = &a.trace_dump {
        let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut out = BufWriter::new(file);
        dump_trace(&nest, &layouts, &mut out).and_then(|()| out.flush()).with_context(|| format!("writing {}", path.display()))?;
    }
    let options = SimOptions { include_registers: a.include_registers };
    let result = simulate_nest(&nest, &layouts, &s.hierarchy, options);
    let model = multilevel_cost(&s.descriptor, &s.blocksizes, shape, &s.hierarchy).map_err(classify)?;
    let comparison = compare_model(&result, &model)?;

    let mut human = format!(
        "algorithm   {}\nshape       {shape}\nblocksizes  {}\nevents      {}\n\n{:>5} {:>12} {:>14} {:>12} {:>14} {:>14} {:>10}\n",
        s.descriptor.name(),
        s.blocksizes,
        result.events,
        "level",
        "capacity",
        "accesses",
        "misses",
        "writebacks",
        "modeled",
        "rel.err"
    );
    for (l, c) in result.levels.iter().zip(&comparison.levels) {
        writeln!(
            human,
            "{:>5} {:>12} {:>14} {:>12} {:>14} {:>14} {:>10.4}",
            format!("L{}", l.level),
            l.capacity,
            l.accesses,
            l.misses,
            l.writebacks,
            c.modeled,
            c.relative_error
        )?;
    }
    let worst = comparison.max_relative_error();
    let failure = a
        .tolerance
        .filter(|&t| worst > t)
        .map(|t| format!("simulated traffic differs from the model by {worst:.4} (tolerance {t})"));
    Ok(Report {
        json: json!({
            "descriptor": s.descriptor.name(),
            "blocksizes": s.blocksizes,
            "shape": shape,
            "packed": a.packed,
            "simulation": result,
            "model": model,
            "comparison": comparison,
        }),
        csv: comparison.to_csv(),
        human,
        failure,
    })
}

fn random_matrix(rng: &mut StdRng, op: Operand, rows: usize, cols: usize) -> MatrixBuffer {
    MatrixBuffer::from_fn(op, rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn digest(m: &MatrixBuffer) -> String {
    let mut h = DefaultHasher::new();
    for x in m.to_col_major() {
        x.to_bits().hash(&mut h);
    }
    format!("{:016x}", h.finish())
}

pub fn run(a: &RunArgs) -> Result<Report> {
    let hierarchy = a.hier.as_deref().map(args::hierarchy).transpose()?;
    let descriptor = a.algorithm.load()?;
    check_structure(&descriptor)?;
    let bs = a.blocksizes.resolve(&descriptor, hierarchy.as_ref(), a.shape)?;
    if let Some(h) = &hierarchy {
        check_fit(&descriptor, &bs, h, a.shape)?;
    }
    let nest = build_plan(&descriptor, &bs, a.shape).map_err(classify)?;
    if a.workers == 0 {
        bail!("--workers must be at least 1");
    }
    let parallel = (a.workers > 1 || a.par_loop.is_some()).then(|| Parallel {
        loop_index: a.par_loop.unwrap_or_else(|| nest.default_parallel_loop()),
        workers: a.workers,
    });

    let shape = a.shape;
    let mut rng = StdRng::seed_from_u64(a.seed);
    let am = random_matrix(&mut rng, Operand::A, shape.m, shape.k);
    let bm = random_matrix(&mut rng, Operand::B, shape.k, shape.n);
    let c0 = random_matrix(&mut rng, Operand::C, shape.m, shape.n);
    let mut c = c0.clone();
    let start = Instant::now();
    if a.packed {
        execute_with_packing(&nest, &am, &bm, &mut c, parallel)?;
    } else {
        execute(&nest, &am, &bm, &mut c, parallel)?;
    }
    let seconds = start.elapsed().as_secs_f64();
    let rate = shape.flops() as f64 / seconds.max(1e-12);

    let checked = shape.flops() as f64 <= a.reference_limit;
    let error = if checked {
        let mut want = c0;
        reference_gemm(&am, &bm, &mut want)?;
        Some(c.relative_error(&want)?)
    } else {
        eprintln!("note: reference check skipped, {} flops exceed --reference-limit", shape.flops());
        None
    };
    let failure = error
        .filter(|&e| e.is_nan() || e > a.tolerance)
        .map(|e| format!("relative error {e:.3e} exceeds the tolerance {:.1e}", a.tolerance));

    let digest = digest(&c);
    let error_text = error.map_or("skipped".to_string(), |e| format!("{e:.3e}"));
    let human = format!(
        "algorithm   {}\nshape       {shape}\nblocksizes  {bs}\nloops       {nest}\nworkers     {}\nelapsed     {seconds:.3} s\nrate        {:.3} GFLOP/s\nrel. error  {error_text}\ndigest      {digest}\n",
        descriptor.name(),
        a.workers,
        rate / 1e9
    );
    let mut json = json!({
        "descriptor": descriptor.name(),
        "blocksizes": bs,
        "shape": shape,
        "workers": a.workers,
        "packed": a.packed,
        "reference": if checked { "checked" } else { "skipped" },
        "max_relative_error": error,
        "digest": digest,
    });
    let mut csv_head = String::from("descriptor,shape,workers,packed,reference,max_relative_error,digest");
    let mut csv_row = format!(
        "{},{shape},{},{},{},{},{digest}",
        descriptor.name(),
        a.workers,
        a.packed,
        if checked { "checked" } else { "skipped" },
        error.map_or(String::new(), |e| format!("{e:e}"))
    );
    if a.timing {
        json["elapsed_seconds"] = json!(seconds);
        json["flops_per_second"] = json!(rate);
        csv_head.push_str(",elapsed_seconds,flops_per_second");
        write!(csv_row, ",{seconds},{rate}")?;
    }
    Ok(Report { json, csv: format!("{csv_head}\n{csv_row}\n"), human, failure })
}

/// Every descriptor with `first` resident in cache `top`, any subset of the
/// caches below it, and C in the registers. When no such descriptor exists
/// (C in the only cache), the registers may hold another operand.
fn candidates(top: usize, first: Operand) -> Vec<AlgorithmDescriptor> {
    let out = enumerate(top, first, false);
    if out.is_empty() {
        enumerate(top, first, true)
    } else {
        out
    }
}

fn enumerate(top: usize, first: Operand, non_c: bool) -> Vec<AlgorithmDescriptor> {
    fn assign(levels: &[usize], residents: &mut Vec<(usize, Operand)>, out: &mut Vec<AlgorithmDescriptor>, non_c: bool) {
        let pos = residents.len();
        if pos == levels.len() {
            let d = AlgorithmDescriptor::from_residents(residents).allow_non_c_registers(non_c);
            if validate_structure(&d).is_empty() {
                out.push(d);
            }
            return;
        }
        let prev = residents.last().map(|r| r.1);
        for op in Operand::ALL {
            if Some(op) == prev || (pos + 1 == levels.len() && op != Operand::C && !non_c) {
                continue;
            }
            residents.push((levels[pos], op));
            assign(levels, residents, out, non_c);
            residents.pop();
        }
    }
    let mut out = Vec::new();
    let middle: Vec<usize> = (1..top).rev().collect();
    for mask in 0..1usize << middle.len() {
        let mut levels = vec![top];
        levels.extend(middle.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &l)| l));
        levels.push(0);
        assign(&levels, &mut vec![(top, first)], &mut out, non_c);
    }
    out
}

pub fn plan(a: &PlanArgs) -> Result<Report> {
    let hierarchy = args::hierarchy(&a.hier)?;
    if hierarchy.len() < 2 {
        bail!("planning needs at least one cache level above the registers");
    }
    let options = a.derive.options()?;
    let shape = a.shape;
    let top = hierarchy.len() - 1;
    let first = select_algorithm(shape, hierarchy.capacity(top));

    // score: the worst ratio, over all cache boundaries, of predicted
    // traffic to the lower bound for that cache
    let mut scored = Vec::new();
    let mut first_error = None;
    for d in candidates(top, first) {
        match derive_blocksizes(&d, &hierarchy, shape, &options) {
            Ok(bs) => {
                let report = multilevel_cost(&d, &bs, shape, &hierarchy).map_err(classify)?;
                let score = report
                    .levels
                    .iter()
                    .filter(|l| l.level > 0)
                    .map(|l| l.total_elements as f64 / io_lower_bound(shape, hierarchy.capacity(l.level)).total() as f64)
                    .fold(0.0, f64::max);
                scored.push((score, d, bs, report));
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    scored.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.plans.len().cmp(&y.1.plans.len())).then(x.1.name().cmp(&y.1.name())));
    let Some((score, best, bs, report)) = scored.first() else {
        return Err(match first_error {
            Some(e) => classify(e),
            None => anyhow::anyhow!("no descriptor keeps {first} resident in L{top}"),
        });
    };
    let eff = efficiency(report);

    let mut human = format!(
        "shape       {shape}\noutermost   {first} resident in L{top}\nalgorithm   {}\nblocksizes  {bs}\nintensity   {:.2} flops/byte across L{top}\n\n{:<12} {:>10}\n",
        best.name(),
        eff.flops_per_byte,
        "candidate",
        "score"
    );
    for (s, d, ..) in &scored {
        writeln!(human, "{:<12} {:>10.4}", d.name(), s)?;
    }
    let mut csv = String::from("descriptor,score,blocksizes\n");
    for (s, d, b, _) in &scored {
        writeln!(csv, "{},{s:.6},\"{b}\"", d.name())?;
    }
    Ok(Report {
        json: json!({
            "shape": shape,
            "outermost_resident": first,
            "descriptor": best.name(),
            "plans": best.plans,
            "blocksizes": bs,
            "score": score,
            "intensity_flops_per_byte": eff.flops_per_byte,
            "candidates": scored.iter().map(|(s, d, ..)| json!({"descriptor": d.name(), "score": s})).collect::<Vec<_>>(),
        }),
        csv,
        human,
        failure: None,
    })
}

pub fn roofline(a: &RooflineArgs) -> Result<Report> {
    let params = RooflineParams::new(a.peak, a.bandwidth)?;
    let points = a.parsed_points()?;
    let rows = roofline_rows(&params, &points);
    let mut human = format!("{:<20} {:>12} {:>16} {:>10}\n", "name", "flops/byte", "bound GFLOP/s", "regime");
    for r in &rows {
        writeln!(
            human,
            "{:<20} {:>12.2} {:>16.3} {:>10}",
            r.name,
            r.intensity_flops_per_byte,
            r.bound_flops_per_s / 1e9,
            r.regime
        )?;
    }
    Ok(Report {
        json: json!({
            "peak_flops_per_s": a.peak,
            "bandwidth_bytes_per_s": a.bandwidth,
            "breakpoint_flops_per_byte": params.breakpoint(),
            "rows": rows,
        }),
        csv: roofline_csv(&params, &points),
        human,
        failure: None,
    })
}

pub fn pareto(a: &ParetoArgs) -> Result<Report> {
    let outer = match (a.outer_capacity, &a.hier) {
        (Some(c), _) => c,
        (None, Some(path)) => {
            let h = args::hierarchy(path)?;
            let level = a.level.unwrap_or(h.len() - 1);
            h.level(level).with_context(|| format!("the hierarchy has no level {level}"))?.capacity
        }
        (None, None) => bail!("one of --outer-capacity or --hier is required"),
    };
    let ratios = a.ratio_list()?;
    let points = pareto_sweep(outer, &ratios, a.shape, a.slack).map_err(classify)?;
    let mut csv = String::from("ratio,inner_capacity,outer_block,inner_block,efficiency_outer,efficiency_inner\n");
    let mut human = format!(
        "outer capacity {outer}, shape {}\n\n{:>10} {:>14} {:>12} {:>12} {:>18} {:>18}\n",
        a.shape, "ratio", "inner cap.", "outer block", "inner block", "outer flops/elem", "inner flops/elem"
    );
    for p in &points {
        writeln!(
            csv,
            "{},{},{},{},{:.6},{:.6}",
            p.ratio, p.inner_capacity, p.outer_block, p.inner_block, p.efficiency_outer, p.efficiency_inner
        )?;
        writeln!(
            human,
            "{:>10.3} {:>14} {:>12} {:>12} {:>18.3} {:>18.3}",
            p.ratio, p.inner_capacity, p.outer_block, p.inner_block, p.efficiency_outer, p.efficiency_inner
        )?;
    }
    Ok(Report {
        json: json!({ "outer_capacity": outer, "shape": a.shape, "points": points }),
        csv,
        human,
        failure: None,
    })
}
