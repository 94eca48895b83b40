use serde::{Deserialize, Serialize};

use crate::{Operand, Shape};

/// Thresholds for classifying a dimension against `sqrt(M)` of the outermost
/// cache.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectOptions {
    /// A dimension is close to `sqrt(M)` when within this factor of it.
    pub near_factor: f64,
    /// A dimension is large when at least this multiple of `sqrt(M)`.
    pub large_factor: f64,
    /// Answer when no dimension stands out.
    pub fallback: Operand,
}

impl Default for SelectOptions {
    fn default() -> Self {
        SelectOptions { near_factor: 2.0, large_factor: 4.0, fallback: Operand::C }
    }
}

pub fn select_algorithm(shape: Shape, outer_capacity: usize) -> Operand {
    select_algorithm_with(shape, outer_capacity, &SelectOptions::default())
}

/// Picks the operand to keep resident in the outermost cache: the one that
/// does not span the single large dimension, when the other two dimensions
/// are about `sqrt(M)`.
pub fn select_algorithm_with(shape: Shape, outer_capacity: usize, options: &SelectOptions) -> Operand {
    let root = (outer_capacity as f64).sqrt();
    let near = |x: usize| {
        let x = x as f64;
        x >= root / options.near_factor && x <= root * options.near_factor
    };
    let large = |x: usize| x as f64 >= root * options.large_factor;
    let (m, n, k) = (shape.m, shape.n, shape.k);
    if near(m) && near(k) && large(n) {
        Operand::A
    } else if near(n) && near(k) && large(m) {
        Operand::B
    } else if near(m) && near(n) && large(k) {
        Operand::C
    } else {
        options.fallback
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_rules() {
        let m3 = 589824;
        assert_eq!(select_algorithm(Shape::new(768, 30000, 768).unwrap(), m3), Operand::A);
        assert_eq!(select_algorithm(Shape::new(30000, 768, 768).unwrap(), m3), Operand::B);
        assert_eq!(select_algorithm(Shape::new(768, 768, 30000).unwrap(), m3), Operand::C);
        assert_eq!(select_algorithm(Shape::square(10000).unwrap(), m3), Operand::C);
        let opts = SelectOptions { fallback: Operand::B, ..Default::default() };
        assert_eq!(select_algorithm_with(Shape::square(10000).unwrap(), m3, &opts), Operand::B);
    }
}
