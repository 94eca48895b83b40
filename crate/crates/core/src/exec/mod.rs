//! Executable loop nests for the blocked algorithms.

mod kernel;
mod nest;

use std::thread;

pub use kernel::micro_kernel;
pub use nest::{build_plan, build_plan_checked, LoopNest, LoopRole, Partition, Region};

use kernel::{kernel_a, kernel_b, kernel_c, View, ViewMut};

use crate::{pack, unpack, Dim, Error, HierarchicalLayout, Layout, MatrixBuffer, Operand, Result};

/// Which loop of the nest is split across workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Parallel {
    pub loop_index: usize,
    pub workers: usize,
}

/// Naive `C += A * B` in `i, j, p` order.
pub fn reference_gemm(a: &MatrixBuffer, b: &MatrixBuffer, c: &mut MatrixBuffer) -> Result<()> {
    let (m, k) = (a.rows(), a.cols());
    let n = b.cols();
    if b.rows() != k || c.rows() != m || c.cols() != n {
        return Err(Error::DimensionMismatch(format!(
            "A is {m}x{k}, B is {}x{n}, C is {}x{}",
            b.rows(),
            c.rows(),
            c.cols()
        )));
    }
    let (al, bl, cl) = (a.layout().clone(), b.layout().clone(), c.layout().clone());
    let (ad, bd) = (a.data(), b.data());
    let cd = c.data_mut();
    for i in 0..m {
        for j in 0..n {
            let mut acc = cd[cl.address_of(i, j)];
            for p in 0..k {
                acc += ad[al.address_of(i, p)] * bd[bl.address_of(p, j)];
            }
            cd[cl.address_of(i, j)] = acc;
        }
    }
    Ok(())
}

fn check_operand(nest: &LoopNest, buf: &MatrixBuffer, op: Operand) -> Result<()> {
    let (rows, cols) = nest.shape.operand_dims(op);
    if (buf.rows(), buf.cols()) != (rows, cols) {
        return Err(Error::DimensionMismatch(format!(
            "{op} is {}x{}, the plan needs {rows}x{cols}",
            buf.rows(),
            buf.cols()
        )));
    }
    if let Layout::Hierarchical(h) = buf.layout() {
        let expected = HierarchicalLayout::for_operand(&nest.descriptor, &nest.blocksizes, op, rows, cols)?;
        if *h != expected {
            return Err(Error::Layout(format!("{op} was packed for a different plan")));
        }
    }
    Ok(())
}

/// Base offset and strides of an operand block starting at `(i, j)`.
#[inline]
fn locate(layout: &Layout, i: usize, j: usize, rows: usize, cols: usize) -> (usize, usize, usize) {
    match layout {
        Layout::ColumnMajor { rows: ld, .. } => (i + j * ld, 1, *ld),
        Layout::Hierarchical(h) => {
            let (rs, cs) = h.leaf_strides(rows, cols);
            (h.address_of(i, j), rs, cs)
        }
    }
}

struct SharedC(*mut f64, usize);

// SAFETY: workers only write the C elements of their own chunk of an m or n
// loop, which are disjoint.
unsafe impl Send for SharedC {}
unsafe impl Sync for SharedC {}

impl SharedC {
    fn view(&self, base: usize, rs: usize, cs: usize) -> ViewMut {
        ViewMut { ptr: self.0, len: self.1, base, rs, cs }
    }
}

/// `C += A * B` following `nest`. Buffers may be column-major or packed for
/// this plan. With `parallel`, the designated m or n loop is split into
/// contiguous chunks, one per worker; every element of C is then updated in
/// the same order as serially, so results do not depend on the worker count.
pub fn execute(
    nest: &LoopNest,
    a: &MatrixBuffer,
    b: &MatrixBuffer,
    c: &mut MatrixBuffer,
    parallel: Option<Parallel>,
) -> Result<()> {
    check_operand(nest, a, Operand::A)?;
    check_operand(nest, b, Operand::B)?;
    check_operand(nest, c, Operand::C)?;
    if let Some(p) = parallel {
        let Some(part) = nest.partitions.get(p.loop_index) else {
            return Err(Error::Parallel(format!("loop {} does not exist in a {}-loop nest", p.loop_index, nest.len())));
        };
        if part.dim == Dim::K {
            return Err(Error::Parallel(format!(
                "loop {} runs along k; splitting it would accumulate into C concurrently",
                p.loop_index
            )));
        }
        if p.workers == 0 {
            return Err(Error::Parallel("at least one worker is required".into()));
        }
    }

    let c_layout = c.layout().clone();
    let c_data = c.data_mut();
    let shared = SharedC(c_data.as_mut_ptr(), c_data.len());
    let run = |leaf: &Region| {
        let (m, n, k) = (leaf.len(Dim::M), leaf.len(Dim::N), leaf.len(Dim::K));
        let (i0, j0, p0) = (leaf.start(Dim::M), leaf.start(Dim::N), leaf.start(Dim::K));
        let (ab, ars, acs) = locate(a.layout(), i0, p0, m, k);
        let (bb, brs, bcs) = locate(b.layout(), p0, j0, k, n);
        let (cb, crs, ccs) = locate(&c_layout, i0, j0, m, n);
        let av = View { data: a.data(), base: ab, rs: ars, cs: acs };
        let bv = View { data: b.data(), base: bb, rs: brs, cs: bcs };
        let cv = shared.view(cb, crs, ccs);
        // SAFETY: C outlives the call and each leaf's elements belong to one
        // worker.
        unsafe {
            match nest.leaf {
                Operand::C => kernel_c(m, n, k, av, bv, cv),
                Operand::A => kernel_a(m, n, k, av, bv, cv),
                Operand::B => kernel_b(m, n, k, av, bv, cv),
            }
        }
    };
    match parallel {
        Some(p) if p.workers > 1 => thread::scope(|s| {
            for w in 0..p.workers {
                let run = &run;
                s.spawn(move || nest.for_each_leaf_chunk(p.loop_index, w, p.workers, run));
            }
        }),
        _ => nest.for_each_leaf(run),
    }
    Ok(())
}

/// Packs column-major operands for `nest`, runs it and writes C back in
/// column-major order.
pub fn execute_with_packing(
    nest: &LoopNest,
    a: &MatrixBuffer,
    b: &MatrixBuffer,
    c: &mut MatrixBuffer,
    parallel: Option<Parallel>,
) -> Result<()> {
    if !(a.is_column_major() && b.is_column_major() && c.is_column_major()) {
        return Err(Error::Layout("execute_with_packing expects column-major buffers".into()));
    }
    let pa = pack(a, &nest.descriptor, &nest.blocksizes)?;
    let pb = pack(b, &nest.descriptor, &nest.blocksizes)?;
    let mut pc = pack(c, &nest.descriptor, &nest.blocksizes)?;
    execute(nest, &pa, &pb, &mut pc, parallel)?;
    *c = unpack(&pc)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algo::{parse_name, BlocksizeSet};
    use crate::Shape;

    fn filled(op: Operand, rows: usize, cols: usize, seed: usize) -> MatrixBuffer {
        MatrixBuffer::from_fn(op, rows, cols, |i, j| (((i * 131 + j * 71 + seed * 17) % 199) as f64) / 99.0 - 1.0)
    }

    #[test]
    fn reference_examples() {
        let a = MatrixBuffer::from_col_major(Operand::A, 1, 1, vec![3.0]).unwrap();
        let b = MatrixBuffer::from_col_major(Operand::B, 1, 1, vec![4.0]).unwrap();
        let mut c = MatrixBuffer::from_col_major(Operand::C, 1, 1, vec![2.0]).unwrap();
        reference_gemm(&a, &b, &mut c).unwrap();
        assert_eq!(c.data(), &[14.0]);

        let eye = MatrixBuffer::from_fn(Operand::A, 5, 5, |i, j| if i == j { 1.0 } else { 0.0 });
        let b = filled(Operand::B, 5, 3, 1);
        let mut c = MatrixBuffer::zeros(Operand::C, 5, 3);
        reference_gemm(&eye, &b, &mut c).unwrap();
        assert_eq!(c.data(), b.data());
        assert!(reference_gemm(&eye, &filled(Operand::B, 4, 3, 0), &mut c).is_err());
    }

    fn plans() -> Vec<(&'static str, BlocksizeSet)> {
        vec![
            (
                "B3A2C0",
                BlocksizeSet::new()
                    .with(3, Dim::N, 12)
                    .with(3, Dim::K, 10)
                    .with(2, Dim::M, 8)
                    .with(2, Dim::K, 5)
                    .with(0, Dim::N, 3)
                    .with(0, Dim::M, 4),
            ),
            ("A2C0", BlocksizeSet::new().with(2, Dim::K, 6).with(2, Dim::M, 6).with(0, Dim::N, 5).with(0, Dim::M, 3)),
            ("A1B0", BlocksizeSet::new().with(1, Dim::K, 6).with(1, Dim::M, 6).with(0, Dim::N, 4).with(0, Dim::K, 3)),
            ("B1A0", BlocksizeSet::new().with(1, Dim::N, 6).with(1, Dim::K, 7).with(0, Dim::M, 4).with(0, Dim::K, 3)),
        ]
    }

    #[test]
    fn matches_reference_on_margins() {
        let shape = Shape::new(13, 9, 17).unwrap();
        for (name, bs) in plans() {
            let d = parse_name(name).unwrap().allow_non_c_registers(true);
            let nest = build_plan(&d, &bs, shape).unwrap();
            let a = filled(Operand::A, 13, 17, 1);
            let b = filled(Operand::B, 17, 9, 2);
            let c0 = filled(Operand::C, 13, 9, 3);
            let mut want = c0.clone();
            reference_gemm(&a, &b, &mut want).unwrap();
            let mut got = c0.clone();
            execute(&nest, &a, &b, &mut got, None).unwrap();
            assert!(got.relative_error(&want).unwrap() < 1e-12, "{name}");
            let mut packed = c0.clone();
            execute_with_packing(&nest, &a, &b, &mut packed, None).unwrap();
            assert!(packed.relative_error(&want).unwrap() < 1e-12, "{name} packed");
        }
    }

    #[test]
    fn workers_do_not_change_bits() {
        let shape = Shape::new(41, 37, 23).unwrap();
        let (_, bs) = plans().remove(0);
        let nest = build_plan(&parse_name("B3A2C0").unwrap(), &bs, shape).unwrap();
        let a = filled(Operand::A, 41, 23, 4);
        let b = filled(Operand::B, 23, 37, 5);
        let mut one = MatrixBuffer::zeros(Operand::C, 41, 37);
        execute(&nest, &a, &b, &mut one, None).unwrap();
        for loop_index in [0, 2, 4, 5] {
            let mut four = MatrixBuffer::zeros(Operand::C, 41, 37);
            execute(&nest, &a, &b, &mut four, Some(Parallel { loop_index, workers: 4 })).unwrap();
            assert_eq!(one.data(), four.data(), "loop {loop_index}");
        }
        let mut c = MatrixBuffer::zeros(Operand::C, 41, 37);
        let e = execute(&nest, &a, &b, &mut c, Some(Parallel { loop_index: 1, workers: 4 })).unwrap_err();
        assert!(matches!(e, Error::Parallel(_)));
    }

    #[test]
    fn zero_a_leaves_c() {
        let (_, bs) = plans().remove(1);
        let nest = build_plan(&parse_name("A2C0").unwrap(), &bs, Shape::new(7, 8, 9).unwrap()).unwrap();
        let c0 = filled(Operand::C, 7, 8, 1);
        let mut c = c0.clone();
        execute(&nest, &MatrixBuffer::zeros(Operand::A, 7, 9), &filled(Operand::B, 9, 8, 2), &mut c, None).unwrap();
        assert_eq!(c, c0);
    }

    #[test]
    fn packed_for_another_plan() {
        let all = plans();
        let shape = Shape::new(13, 9, 17).unwrap();
        let nest = build_plan(&parse_name("A2C0").unwrap(), &all[1].1, shape).unwrap();
        let other = build_plan(&parse_name("B3A2C0").unwrap(), &all[0].1, shape).unwrap();
        let a = pack(&filled(Operand::A, 13, 17, 1), &other.descriptor, &other.blocksizes).unwrap();
        let mut c = MatrixBuffer::zeros(Operand::C, 13, 9);
        let e = execute(&nest, &a, &filled(Operand::B, 17, 9, 2), &mut c, None).unwrap_err();
        assert!(matches!(e, Error::Layout(_)));
    }
}
