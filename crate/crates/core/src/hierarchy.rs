use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplacementPolicy {
    #[default]
    Lru,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

/// A single level of the memory hierarchy. Level 0 is the register file.
///
/// Capacities and granularities are counted in matrix elements, not bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheLevel {
    pub index: usize,
    #[serde(rename = "capacity_elements")]
    pub capacity: usize,
    /// Elements per transfer line.
    #[serde(default = "one")]
    pub granularity: usize,
    #[serde(default)]
    pub policy: ReplacementPolicy,
    #[serde(default)]
    pub inclusive: bool,
    #[serde(default = "yes")]
    pub write_allocate: bool,
    #[serde(default = "yes")]
    pub write_back: bool,
}

impl CacheLevel {
    /// Non-inclusive, write-allocate, write-back LRU level with unit lines.
    pub fn new(index: usize, capacity: usize) -> Self {
        CacheLevel {
            index,
            capacity,
            granularity: 1,
            policy: ReplacementPolicy::Lru,
            inclusive: false,
            write_allocate: true,
            write_back: true,
        }
    }

    pub fn inclusive(mut self, inclusive: bool) -> Self {
        self.inclusive = inclusive;
        self
    }

    pub fn with_granularity(mut self, granularity: usize) -> Self {
        self.granularity = granularity;
        self
    }

    /// Number of lines the level holds.
    pub fn lines(&self) -> usize {
        self.capacity / self.granularity
    }
}

/// Ordered cache levels from the registers outward, with an implicit
/// unbounded main memory past the last level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CacheHierarchy {
    levels: Vec<CacheLevel>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HierarchyFile {
    levels: Vec<CacheLevel>,
}

impl<'de> Deserialize<'de> for CacheHierarchy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = HierarchyFile::deserialize(d)?;
        CacheHierarchy::new(file.levels).map_err(serde::de::Error::custom)
    }
}

impl CacheHierarchy {
    pub fn new(levels: Vec<CacheLevel>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Hierarchy("at least the register level is required".into()));
        }
        for (pos, level) in levels.iter().enumerate() {
            if level.index != pos {
                return Err(Error::Hierarchy(format!(
                    "level indices must be 0..{} in order, found {} at position {pos}",
                    levels.len(),
                    level.index
                )));
            }
            if level.capacity == 0 || level.granularity == 0 {
                return Err(Error::Hierarchy(format!("L{pos}: capacity and granularity must be >= 1")));
            }
            if level.capacity < level.granularity {
                return Err(Error::Hierarchy(format!("L{pos}: capacity is smaller than one line")));
            }
        }
        for pair in levels.windows(2) {
            let (inner, outer) = (&pair[0], &pair[1]);
            if outer.capacity <= inner.capacity {
                return Err(Error::Hierarchy(format!(
                    "capacities must strictly increase: L{} holds {} but L{} holds {}",
                    inner.index, inner.capacity, outer.index, outer.capacity
                )));
            }
            if outer.granularity % inner.granularity != 0 {
                return Err(Error::Hierarchy(format!(
                    "L{} granularity {} is not a multiple of L{} granularity {}",
                    outer.index, outer.granularity, inner.index, inner.granularity
                )));
            }
        }
        Ok(CacheHierarchy { levels })
    }

    /// Builds a non-inclusive hierarchy from element capacities, registers first.
    pub fn from_capacities(capacities: &[usize]) -> Result<Self> {
        Self::new(capacities.iter().enumerate().map(|(i, &c)| CacheLevel::new(i, c)).collect())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Hierarchy(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("hierarchy serializes")
    }

    pub fn levels(&self) -> &[CacheLevel] {
        &self.levels
    }

    pub fn level(&self, index: usize) -> Option<&CacheLevel> {
        self.levels.get(index)
    }

    pub fn capacity(&self, index: usize) -> usize {
        self.levels[index].capacity
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn outermost(&self) -> &CacheLevel {
        self.levels.last().expect("non-empty")
    }

    /// The same hierarchy with every level marked inclusive (or not).
    pub fn with_inclusive(mut self, inclusive: bool) -> Self {
        for level in &mut self.levels {
            level.inclusive = inclusive;
        }
        self
    }
}
