//! Column-major and hierarchical ("prepacked") matrix storage.

use crate::algo::{AlgorithmDescriptor, BlocksizeSet};
use crate::{Dim, Error, Operand, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    Row,
    Col,
}

/// One partitioning step: the current region is cut along `axis` into blocks
/// of `size` (the last one possibly smaller), stored one after another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Split {
    pub axis: Axis,
    pub size: usize,
}

/// Block tree of a matrix, outermost partition first. The region left after
/// the last split is stored column-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HierarchicalLayout {
    rows: usize,
    cols: usize,
    splits: Vec<Split>,
}

impl HierarchicalLayout {
    pub fn new(rows: usize, cols: usize, splits: Vec<Split>) -> Result<Self> {
        let layout = HierarchicalLayout { rows, cols, splits };
        layout.check()?;
        Ok(layout)
    }

    /// Layout of `operand` following every partition of `descriptor` that
    /// cuts one of its dimensions, in loop-nest order. When the innermost
    /// kernel walks the operand row by row, a final unit split makes each
    /// row contiguous.
    pub fn for_operand(
        descriptor: &AlgorithmDescriptor,
        blocksizes: &BlocksizeSet,
        operand: Operand,
        rows: usize,
        cols: usize,
    ) -> Result<Self> {
        let (row_dim, col_dim) = operand.dims();
        let axis_of = |d: Dim| {
            if d == row_dim {
                Some(Axis::Row)
            } else if d == col_dim {
                Some(Axis::Col)
            } else {
                None
            }
        };
        let mut splits = Vec::new();
        let mut enclosing: [Option<usize>; 3] = [None; 3];
        for plan in &descriptor.plans {
            for d in [plan.outer, plan.inner] {
                let size = blocksizes.require(plan.level, d)?;
                if let Some(outer) = enclosing[d as usize] {
                    if size > outer {
                        return Err(Error::Layout(format!(
                            "L{} blocksize {size} along {d} exceeds the enclosing blocksize {outer}",
                            plan.level
                        )));
                    }
                }
                enclosing[d as usize] = Some(size);
                if let Some(axis) = axis_of(d) {
                    splits.push(Split { axis, size });
                }
            }
        }
        if let Some(leaf) = descriptor.innermost() {
            if leaf.resident != operand && axis_of(leaf.resident.long_dim()) == Some(Axis::Row) {
                splits.push(Split { axis: Axis::Row, size: 1 });
            }
        }
        HierarchicalLayout::new(rows, cols, splits)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    fn check(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Layout(format!("empty {}x{} region", self.rows, self.cols)));
        }
        if let Some(s) = self.splits.iter().find(|s| s.size == 0) {
            return Err(Error::Layout(format!("zero-sized {:?} split", s.axis)));
        }
        Ok(())
    }

    /// Whether the leaf regions are single rows.
    pub fn row_leaves(&self) -> bool {
        matches!(self.splits.last(), Some(Split { axis: Axis::Row, size: 1 }))
    }

    /// `(row stride, column stride)` inside a leaf-level block of the given
    /// dimensions.
    pub fn leaf_strides(&self, block_rows: usize, block_cols: usize) -> (usize, usize) {
        if self.row_leaves() {
            (block_cols, 1)
        } else {
            (1, block_rows)
        }
    }

    /// Address of `(i, j)`; both must be in range.
    pub fn address_of(&self, mut i: usize, mut j: usize) -> usize {
        let (mut rows, mut cols) = (self.rows, self.cols);
        let mut base = 0;
        for s in &self.splits {
            match s.axis {
                Axis::Row => {
                    let t = i / s.size;
                    base += t * s.size * cols;
                    i -= t * s.size;
                    rows = s.size.min(rows - t * s.size);
                }
                Axis::Col => {
                    let t = j / s.size;
                    base += t * s.size * rows;
                    j -= t * s.size;
                    cols = s.size.min(cols - t * s.size);
                }
            }
        }
        base + i + j * rows
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Layout {
    ColumnMajor { rows: usize, cols: usize },
    Hierarchical(HierarchicalLayout),
}

impl Layout {
    pub fn rows(&self) -> usize {
        match self {
            Layout::ColumnMajor { rows, .. } => *rows,
            Layout::Hierarchical(h) => h.rows,
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Layout::ColumnMajor { cols, .. } => *cols,
            Layout::Hierarchical(h) => h.cols,
        }
    }

    /// Unchecked address; callers guarantee the indices are in range.
    #[inline]
    pub fn address_of(&self, i: usize, j: usize) -> usize {
        match self {
            Layout::ColumnMajor { rows, .. } => i + j * rows,
            Layout::Hierarchical(h) => h.address_of(i, j),
        }
    }
}

/// Flat position of element `(i, j)`.
pub fn element_address(layout: &Layout, i: usize, j: usize) -> Result<usize> {
    let (rows, cols) = (layout.rows(), layout.cols());
    if i >= rows || j >= cols {
        return Err(Error::OutOfRange { i, j, rows, cols });
    }
    Ok(layout.address_of(i, j))
}

/// A dense `f64` matrix playing one operand role.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixBuffer {
    operand: Operand,
    layout: Layout,
    data: Vec<f64>,
}

impl MatrixBuffer {
    pub fn zeros(operand: Operand, rows: usize, cols: usize) -> Self {
        MatrixBuffer { operand, layout: Layout::ColumnMajor { rows, cols }, data: vec![0.0; rows * cols] }
    }

    pub fn from_col_major(operand: Operand, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} elements given for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(MatrixBuffer { operand, layout: Layout::ColumnMajor { rows, cols }, data })
    }

    /// Column-major matrix with entries `f(i, j)`.
    pub fn from_fn(operand: Operand, rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        MatrixBuffer { operand, layout: Layout::ColumnMajor { rows, cols }, data }
    }

    /// Reassembles a buffer from stored parts, checking the metadata.
    pub fn from_parts(operand: Operand, layout: Layout, data: Vec<f64>) -> Result<Self> {
        if let Layout::Hierarchical(h) = &layout {
            h.check()?;
        }
        if data.len() != layout.rows() * layout.cols() {
            return Err(Error::Layout(format!(
                "{} elements stored for a {}x{} layout",
                data.len(),
                layout.rows(),
                layout.cols()
            )));
        }
        Ok(MatrixBuffer { operand, layout, data })
    }

    pub fn operand(&self) -> Operand {
        self.operand
    }

    pub fn rows(&self) -> usize {
        self.layout.rows()
    }

    pub fn cols(&self) -> usize {
        self.layout.cols()
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_column_major(&self) -> bool {
        matches!(self.layout, Layout::ColumnMajor { .. })
    }

    pub fn get(&self, i: usize, j: usize) -> Result<f64> {
        Ok(self.data[element_address(&self.layout, i, j)?])
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) -> Result<()> {
        let a = element_address(&self.layout, i, j)?;
        self.data[a] = value;
        Ok(())
    }

    /// Column-major copy of the values.
    pub fn to_col_major(&self) -> Vec<f64> {
        match &self.layout {
            Layout::ColumnMajor { .. } => self.data.clone(),
            Layout::Hierarchical(h) => {
                let mut out = Vec::with_capacity(self.data.len());
                for j in 0..h.cols {
                    for i in 0..h.rows {
                        out.push(self.data[h.address_of(i, j)]);
                    }
                }
                out
            }
        }
    }

    /// Relative Frobenius distance `|self - other| / |other|` (absolute when
    /// `other` is zero).
    pub fn relative_error(&self, other: &MatrixBuffer) -> Result<f64> {
        if (self.rows(), self.cols()) != (other.rows(), other.cols()) {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows(),
                self.cols(),
                other.rows(),
                other.cols()
            )));
        }
        let (a, b) = (self.to_col_major(), other.to_col_major());
        let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        let norm: f64 = b.iter().map(|y| y * y).sum();
        Ok(if norm == 0.0 { diff.sqrt() } else { (diff / norm).sqrt() })
    }
}

/// Stores a column-major matrix in the block order of `descriptor`.
pub fn pack(src: &MatrixBuffer, descriptor: &AlgorithmDescriptor, blocksizes: &BlocksizeSet) -> Result<MatrixBuffer> {
    let Layout::ColumnMajor { rows, cols } = src.layout else {
        return Err(Error::Layout("pack expects a column-major source".into()));
    };
    let layout = HierarchicalLayout::for_operand(descriptor, blocksizes, src.operand, rows, cols)?;
    let mut data = vec![0.0; rows * cols];
    for j in 0..cols {
        for i in 0..rows {
            data[layout.address_of(i, j)] = src.data[i + j * rows];
        }
    }
    Ok(MatrixBuffer { operand: src.operand, layout: Layout::Hierarchical(layout), data })
}

/// Inverse of [`pack`]; column-major inputs are returned unchanged.
pub fn unpack(src: &MatrixBuffer) -> Result<MatrixBuffer> {
    if let Layout::Hierarchical(h) = &src.layout {
        h.check()?;
        if src.data.len() != h.rows * h.cols {
            return Err(Error::Layout(format!("{} elements stored for a {}x{} layout", src.data.len(), h.rows, h.cols)));
        }
    }
    MatrixBuffer::from_col_major(src.operand, src.rows(), src.cols(), src.to_col_major())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algo::parse_name;
    use proptest::prelude::*;

    fn c0_tile2() -> (AlgorithmDescriptor, BlocksizeSet) {
        let d = parse_name("C0").unwrap();
        (d, BlocksizeSet::new().with(0, Dim::M, 2).with(0, Dim::N, 2))
    }

    #[test]
    fn column_major_addresses() {
        let l = Layout::ColumnMajor { rows: 3, cols: 4 };
        assert_eq!(element_address(&l, 1, 2).unwrap(), 7);
        assert_eq!(element_address(&l, 0, 0).unwrap(), 0);
        assert!(matches!(element_address(&l, 3, 0), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn four_by_four_blocks_of_two() {
        let (d, bs) = c0_tile2();
        let h = HierarchicalLayout::for_operand(&d, &bs, Operand::C, 4, 4).unwrap();
        let l = Layout::Hierarchical(h);
        // walk the block tree by hand: column blocks outermost, then row
        // blocks, each 2x2 block column-major
        let mut expected = vec![vec![0; 4]; 4];
        let mut next = 0;
        for jb in 0..2 {
            for ib in 0..2 {
                for j in 0..2 {
                    for i in 0..2 {
                        expected[ib * 2 + i][jb * 2 + j] = next;
                        next += 1;
                    }
                }
            }
        }
        for (i, row) in expected.iter().enumerate() {
            for (j, &a) in row.iter().enumerate() {
                assert_eq!(element_address(&l, i, j).unwrap(), a);
            }
        }
        assert_eq!(element_address(&l, 2, 0).unwrap(), 4);

        let src = MatrixBuffer::from_fn(Operand::C, 4, 4, |i, j| (i * 4 + j) as f64);
        let packed = pack(&src, &d, &bs).unwrap();
        assert_eq!(&packed.data()[4..8], &[8.0, 12.0, 9.0, 13.0]);
        assert_eq!(unpack(&packed).unwrap(), src);
    }

    #[test]
    fn single_element() {
        let (d, bs) = c0_tile2();
        let src = MatrixBuffer::from_col_major(Operand::A, 1, 1, vec![3.5]).unwrap();
        let packed = pack(&src, &d, &bs).unwrap();
        assert_eq!(packed.data(), &[3.5]);
        assert_eq!(unpack(&packed).unwrap(), src);
    }

    #[test]
    fn kernel_panels_are_contiguous() {
        let d = parse_name("A2C0").unwrap();
        let bs = BlocksizeSet::new().with(2, Dim::K, 4).with(2, Dim::M, 4).with(0, Dim::N, 3).with(0, Dim::M, 2);
        // B is walked row by row by the kernel
        let h = HierarchicalLayout::for_operand(&d, &bs, Operand::B, 8, 6).unwrap();
        assert!(h.row_leaves());
        assert_eq!(h.leaf_strides(4, 3), (3, 1));
        // rows 0..4 of columns 0..3 occupy addresses 0..12, row after row
        for p in 0..4 {
            for j in 0..3 {
                assert_eq!(h.address_of(p, j), p * 3 + j);
            }
        }
        let a = HierarchicalLayout::for_operand(&d, &bs, Operand::A, 8, 8).unwrap();
        assert!(!a.row_leaves());
    }

    #[test]
    fn rejects_bad_input() {
        let d = parse_name("A2C0").unwrap();
        let not_nested = BlocksizeSet::new().with(2, Dim::K, 4).with(2, Dim::M, 2).with(0, Dim::N, 3).with(0, Dim::M, 4);
        let src = MatrixBuffer::zeros(Operand::A, 8, 8);
        assert!(matches!(pack(&src, &d, &not_nested), Err(Error::Layout(_))));
        let missing = BlocksizeSet::new().with(2, Dim::K, 4);
        assert!(pack(&src, &d, &missing).is_err());
        let bad = HierarchicalLayout { rows: 2, cols: 2, splits: vec![Split { axis: Axis::Row, size: 0 }] };
        assert!(MatrixBuffer::from_parts(Operand::A, Layout::Hierarchical(bad), vec![0.0; 4]).is_err());
        let ok = HierarchicalLayout::new(2, 2, vec![]).unwrap();
        assert!(MatrixBuffer::from_parts(Operand::A, Layout::Hierarchical(ok), vec![0.0; 3]).is_err());
    }

    fn splits() -> impl Strategy<Value = Vec<Split>> {
        prop::collection::vec(
            (prop::bool::ANY, 1usize..6).prop_map(|(row, size)| Split { axis: if row { Axis::Row } else { Axis::Col }, size }),
            0..5,
        )
    }

    proptest! {
        #[test]
        fn addresses_are_a_bijection(rows in 1usize..12, cols in 1usize..12, splits in splits()) {
            let h = HierarchicalLayout::new(rows, cols, splits).unwrap();
            let mut seen = vec![false; rows * cols];
            for i in 0..rows {
                for j in 0..cols {
                    let a = h.address_of(i, j);
                    prop_assert!(a < rows * cols);
                    prop_assert!(!seen[a]);
                    seen[a] = true;
                }
            }
        }

        #[test]
        fn pack_unpack_round_trip(rows in 1usize..15, cols in 1usize..15, mr in 1usize..5, nr in 1usize..5, mc in 1usize..4, kc in 1usize..9) {
            let d = parse_name("A2C0").unwrap();
            let bs = BlocksizeSet::new().with(2, Dim::K, kc).with(2, Dim::M, mc * mr).with(0, Dim::N, nr).with(0, Dim::M, mr);
            for op in Operand::ALL {
                let src = MatrixBuffer::from_fn(op, rows, cols, |i, j| (i * 31 + j * 7) as f64 + 0.25);
                let packed = pack(&src, &d, &bs).unwrap();
                prop_assert_eq!(unpack(&packed).unwrap(), src.clone());
            }
        }
    }
}
