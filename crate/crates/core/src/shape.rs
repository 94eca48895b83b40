use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Problem dimensions of `C(m x n) += A(m x k) * B(k x n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub m: usize,
    pub n: usize,
    pub k: usize,
}

impl Shape {
    pub fn new(m: usize, n: usize, k: usize) -> Result<Self> {
        if m == 0 || n == 0 || k == 0 {
            return Err(Error::Shape(format!("all dimensions must be >= 1, got {m}x{n}x{k}")));
        }
        Ok(Shape { m, n, k })
    }

    pub fn square(size: usize) -> Result<Self> {
        Self::new(size, size, size)
    }

    pub fn extent(&self, dim: Dim) -> usize {
        match dim {
            Dim::M => self.m,
            Dim::N => self.n,
            Dim::K => self.k,
        }
    }

    pub fn with_extent(mut self, dim: Dim, value: usize) -> Self {
        match dim {
            Dim::M => self.m = value,
            Dim::N => self.n = value,
            Dim::K => self.k = value,
        }
        self
    }

    /// `2mnk`, one multiply and one add per inner-product term.
    pub fn flops(&self) -> u64 {
        2 * self.m as u64 * self.n as u64 * self.k as u64
    }

    /// `(rows, cols)` of an operand for this problem.
    pub fn operand_dims(&self, op: Operand) -> (usize, usize) {
        let (r, c) = op.dims();
        (self.extent(r), self.extent(c))
    }

    pub fn operand_len(&self, op: Operand) -> usize {
        let (r, c) = self.operand_dims(op);
        r * c
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.m, self.n, self.k)
    }
}

/// Parses `MxNxK`, or a single integer for a square problem.
impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Shape(format!("expected MxNxK or a single integer, got {s:?}"));
        let parts = s
            .trim()
            .split(['x', 'X'])
            .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        match parts[..] {
            [size] => Shape::square(size),
            [m, n, k] => Shape::new(m, n, k),
            _ => Err(bad()),
        }
    }
}

/// Problem dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dim {
    M,
    N,
    K,
}

impl Dim {
    pub const ALL: [Dim; 3] = [Dim::M, Dim::N, Dim::K];

    pub fn letter(self) -> char {
        match self {
            Dim::M => 'm',
            Dim::N => 'n',
            Dim::K => 'k',
        }
    }

    pub fn from_letter(c: char) -> Option<Dim> {
        match c.to_ascii_lowercase() {
            'm' => Some(Dim::M),
            'n' => Some(Dim::N),
            'k' => Some(Dim::K),
            _ => None,
        }
    }

    /// The operand that does not contain this dimension, i.e. the operand
    /// whose long dimension this is.
    pub fn missing_from(self) -> Operand {
        match self {
            Dim::M => Operand::B,
            Dim::N => Operand::A,
            Dim::K => Operand::C,
        }
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// One of the three matrices of the multiplication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Operand {
    A,
    B,
    C,
}

impl Operand {
    pub const ALL: [Operand; 3] = [Operand::A, Operand::B, Operand::C];

    /// `(row dim, column dim)`.
    pub fn dims(self) -> (Dim, Dim) {
        match self {
            Operand::A => (Dim::M, Dim::K),
            Operand::B => (Dim::K, Dim::N),
            Operand::C => (Dim::M, Dim::N),
        }
    }

    pub fn has_dim(self, dim: Dim) -> bool {
        let (r, c) = self.dims();
        r == dim || c == dim
    }

    /// The dimension this operand does not span; resident blocks of this
    /// operand are amortized along it.
    pub fn long_dim(self) -> Dim {
        match self {
            Operand::A => Dim::N,
            Operand::B => Dim::M,
            Operand::C => Dim::K,
        }
    }

    /// The dimension of this operand other than `dim`.
    pub fn other_dim(self, dim: Dim) -> Option<Dim> {
        let (r, c) = self.dims();
        if r == dim {
            Some(c)
        } else if c == dim {
            Some(r)
        } else {
            None
        }
    }

    pub fn letter(self) -> char {
        match self {
            Operand::A => 'A',
            Operand::B => 'B',
            Operand::C => 'C',
        }
    }

    pub fn from_letter(c: char) -> Option<Operand> {
        match c {
            'A' => Some(Operand::A),
            'B' => Some(Operand::B),
            'C' => Some(Operand::C),
            _ => None,
        }
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}
