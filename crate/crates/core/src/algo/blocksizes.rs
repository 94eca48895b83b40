use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::descriptor::{AlgorithmDescriptor, LevelPlan};
use crate::{CacheHierarchy, Dim, Error, Result, Shape};

/// Blocksizes keyed by `(cache level, dimension)`. The register-level
/// entries are the micro-tile `m_r`, `n_r`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "Vec<BlocksizeEntry>", try_from = "Vec<BlocksizeEntry>")]
pub struct BlocksizeSet {
    sizes: BTreeMap<(usize, Dim), usize>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlocksizeEntry {
    level: usize,
    dim: Dim,
    size: usize,
}

impl From<BlocksizeSet> for Vec<BlocksizeEntry> {
    fn from(set: BlocksizeSet) -> Self {
        set.sizes.into_iter().map(|((level, dim), size)| BlocksizeEntry { level, dim, size }).collect()
    }
}

impl TryFrom<Vec<BlocksizeEntry>> for BlocksizeSet {
    type Error = String;

    fn try_from(entries: Vec<BlocksizeEntry>) -> std::result::Result<Self, String> {
        let mut set = BlocksizeSet::new();
        for e in entries {
            if e.size == 0 {
                return Err(format!("blocksize for L{} {} must be >= 1", e.level, e.dim));
            }
            if set.sizes.insert((e.level, e.dim), e.size).is_some() {
                return Err(format!("duplicate blocksize for L{} {}", e.level, e.dim));
            }
        }
        Ok(set)
    }
}

impl BlocksizeSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builder-style insert.
    pub fn with(mut self, level: usize, dim: Dim, size: usize) -> Self {
        self.set(level, dim, size);
        self
    }

    pub fn set(&mut self, level: usize, dim: Dim, size: usize) {
        self.sizes.insert((level, dim), size);
    }

    pub fn get(&self, level: usize, dim: Dim) -> Option<usize> {
        self.sizes.get(&(level, dim)).copied()
    }

    pub fn require(&self, level: usize, dim: Dim) -> Result<usize> {
        match self.get(level, dim) {
            Some(0) | None => Err(Error::MissingBlocksize { level, dim }),
            Some(v) => Ok(v),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, Dim, usize)> + '_ {
        self.sizes.iter().map(|(&(l, d), &s)| (l, d, s))
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    /// Every plan has both of its loop blocksizes, all non-zero.
    pub fn covers(&self, descriptor: &AlgorithmDescriptor) -> Result<()> {
        for plan in &descriptor.plans {
            self.require(plan.level, plan.outer)?;
            self.require(plan.level, plan.inner)?;
        }
        Ok(())
    }

    /// Copy with every dimension scaled by `factor` (rounded, at least 1).
    pub fn scaled(&self, factor: f64) -> Self {
        let sizes = self.sizes.iter().map(|(&key, &s)| (key, ((s as f64 * factor).round() as usize).max(1))).collect();
        BlocksizeSet { sizes }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

impl fmt::Display for BlocksizeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<_> = self.iter().map(|(l, d, s)| format!("{l}:{d}={s}")).collect();
        f.write_str(&parts.join(","))
    }
}

/// Parses the display form: comma-separated `level:dim=size` entries, e.g.
/// `3:n=768,3:k=768,0:m=4`. Zero and repeated entries are rejected.
impl FromStr for BlocksizeSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut bs = BlocksizeSet::new();
        for entry in s.split(',').map(str::trim).filter(|e| !e.is_empty()) {
            let bad = |why: &str| Error::Invalid(format!("blocksize entry {entry:?}: {why}, expected level:dim=size"));
            let (level, rest) = entry.split_once(':').ok_or_else(|| bad("missing ':'"))?;
            let (dim, size) = rest.split_once('=').ok_or_else(|| bad("missing '='"))?;
            let level = level.trim().trim_start_matches(['L', 'l']).parse().map_err(|_| bad("bad level"))?;
            let mut letters = dim.trim().chars();
            let dim = match (letters.next(), letters.next()) {
                (Some(c), None) => Dim::from_letter(c).ok_or_else(|| bad("dimension must be m, n or k"))?,
                _ => return Err(bad("dimension must be m, n or k")),
            };
            let size: usize = size.trim().parse().map_err(|_| bad("bad size"))?;
            if size == 0 {
                return Err(bad("sizes must be >= 1"));
            }
            if bs.get(level, dim).is_some() {
                return Err(bad("repeated entry"));
            }
            bs.set(level, dim, size);
        }
        Ok(bs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitCondition {
    MissingBlocksize,
    LevelNotInHierarchy,
    NotNested,
    /// resident block + guest panel
    ResidentAndGuest,
    /// + the next level's resident block, for inclusive caches
    InclusiveInnerResident,
    /// resident block + both streamed partitions of one inner outer-loop
    /// iteration, for inclusive LRU caches
    LruExposedPartitions,
    SkippedGuest,
    SkippedLruResidentPanel,
    SkippedInclusiveResident,
    /// levels above the outermost plan, which hold the guest of main memory
    AboveGuest,
    AboveLruResident,
}

impl fmt::Display for FitCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("serializes");
        f.write_str(s.as_str().expect("string"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlocksizeViolation {
    pub condition: FitCondition,
    pub level: usize,
    /// Elements required.
    pub lhs: u64,
    /// Elements available (or the enclosing blocksize for `not_nested`).
    pub rhs: u64,
}

impl fmt::Display for BlocksizeViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at L{}: {} > {}", self.condition, self.level, self.lhs, self.rhs)
    }
}

/// Extents of every dimension as the loop nest is entered plan by plan.
/// Plans without blocksizes leave the extents untouched, which makes the
/// terms computed from them upper bounds.
#[derive(Clone, Copy)]
pub(crate) struct Extents([usize; 3]);

impl Extents {
    pub(crate) fn of(shape: Shape) -> Self {
        Extents([shape.m, shape.n, shape.k])
    }

    pub(crate) fn get(&self, d: Dim) -> usize {
        self.0[d as usize]
    }

    fn block(&self, bs: &BlocksizeSet, plan: &LevelPlan, d: Dim) -> usize {
        let ext = self.get(d);
        bs.get(plan.level, d).filter(|&b| b > 0).map_or(ext, |b| b.min(ext))
    }

    fn enter(&self, bs: &BlocksizeSet, plan: &LevelPlan) -> Self {
        let mut next = *self;
        for d in [plan.outer, plan.inner] {
            next.0[d as usize] = self.block(bs, plan, d);
        }
        next
    }
}

/// Sizes (in elements) of the partitions the fit conditions talk about, for
/// one plan of a structurally valid descriptor.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct PlanTerms {
    pub resident: u64,
    /// Guest panel of this level (0 at the innermost plan).
    pub guest: u64,
    /// The streamed partition other than the guest exposed by one iteration
    /// of the next plan's outer loop.
    pub other_streamed: u64,
    pub next_resident: u64,
    /// Partition of this resident exposed by the next plan's inner loop.
    pub resident_panel: u64,
    /// Guest panel of main memory, outermost plan only.
    pub above_guest: u64,
}

pub(crate) fn plan_terms(
    descriptor: &AlgorithmDescriptor,
    bs: &BlocksizeSet,
    shape: Shape,
    index: usize,
) -> PlanTerms {
    let plans = &descriptor.plans;
    let mut ext = Extents::of(shape);
    for plan in &plans[..index] {
        ext = ext.enter(bs, plan);
    }
    let plan = &plans[index];
    let b_outer = ext.block(bs, plan, plan.outer) as u64;
    let b_inner = ext.block(bs, plan, plan.inner) as u64;
    let mut terms = PlanTerms { resident: b_outer * b_inner, ..Default::default() };
    if index == 0 {
        let long = shape.extent(plan.resident.long_dim()) as u64;
        terms.above_guest = b_outer * long;
    }
    if let Some(next) = plans.get(index + 1) {
        let after = ext.enter(bs, plan);
        let step = after.block(bs, next, next.outer) as u64;
        let next_inner = after.block(bs, next, next.inner) as u64;
        let Some(other_dim) = plan.resident.other_dim(next.inner) else {
            return terms;
        };
        let b_other = after.get(other_dim) as u64;
        let b_shared = after.get(next.inner) as u64;
        terms.guest = step * b_other;
        terms.other_streamed = step * b_shared;
        terms.next_resident = step * next_inner;
        terms.resident_panel = b_other * next_inner;
    }
    terms
}

/// All fit checks owned by plan `index`: its own level, the skipped levels
/// between it and the next plan, and (for the outermost plan) the levels
/// above it. Each entry is `(condition, level, lhs, capacity)`.
pub(crate) fn plan_checks(
    descriptor: &AlgorithmDescriptor,
    bs: &BlocksizeSet,
    shape: Shape,
    hierarchy: &CacheHierarchy,
    index: usize,
    budget: impl Fn(usize) -> u64,
) -> Vec<(FitCondition, usize, u64, u64)> {
    let plans = &descriptor.plans;
    let plan = &plans[index];
    let t = plan_terms(descriptor, bs, shape, index);
    let mut checks = Vec::new();
    let Some(level) = hierarchy.level(plan.level) else {
        return checks;
    };
    let cap = budget(plan.level);
    checks.push((FitCondition::ResidentAndGuest, plan.level, t.resident + t.guest, cap));
    if level.inclusive && index + 1 < plans.len() {
        checks.push((FitCondition::InclusiveInnerResident, plan.level, t.resident + t.guest + t.next_resident, cap));
        checks.push((FitCondition::LruExposedPartitions, plan.level, t.resident + t.guest + t.other_streamed, cap));
    }
    if let Some(next) = plans.get(index + 1) {
        for s in (next.level + 1)..plan.level {
            let Some(skipped) = hierarchy.level(s) else { continue };
            let cap = budget(s);
            checks.push((FitCondition::SkippedGuest, s, t.guest, cap));
            checks.push((FitCondition::SkippedLruResidentPanel, s, t.guest + t.resident_panel, cap));
            if skipped.inclusive {
                checks.push((
                    FitCondition::SkippedInclusiveResident,
                    s,
                    t.guest + t.resident_panel + t.next_resident,
                    cap,
                ));
            }
        }
    }
    if index == 0 {
        for s in (plan.level + 1)..hierarchy.len() {
            let cap = budget(s);
            checks.push((FitCondition::AboveGuest, s, t.above_guest, cap));
            checks.push((FitCondition::AboveLruResident, s, t.above_guest + t.resident, cap));
        }
    }
    checks
}

/// Checks that every level's working set fits its cache.
///
/// For a plan at `L_h` with next plan at `L_h'`:
/// * the resident block plus the guest panel fit in `L_h`;
/// * inclusive `L_h` also holds the `L_h'` resident block, and (being LRU)
///   every partition exposed by one iteration of the `L_h'` outer loop;
/// * each skipped level between them holds the `L_h` guest panel, plus a
///   panel of the `L_h` resident (LRU), plus the `L_h'` resident block when
///   inclusive;
/// * levels above the outermost plan hold the guest panel of main memory
///   and, LRU, the outermost resident block next to it.
///
/// The structure must already be valid.
pub fn validate_blocksizes(
    descriptor: &AlgorithmDescriptor,
    blocksizes: &BlocksizeSet,
    hierarchy: &CacheHierarchy,
    shape: Shape,
) -> Vec<BlocksizeViolation> {
    let mut out = Vec::new();
    for plan in &descriptor.plans {
        if hierarchy.level(plan.level).is_none() {
            out.push(BlocksizeViolation {
                condition: FitCondition::LevelNotInHierarchy,
                level: plan.level,
                lhs: plan.level as u64,
                rhs: hierarchy.len() as u64,
            });
        }
        for d in [plan.outer, plan.inner] {
            if blocksizes.require(plan.level, d).is_err() {
                out.push(BlocksizeViolation { condition: FitCondition::MissingBlocksize, level: plan.level, lhs: 0, rhs: 0 });
            }
        }
    }
    if !out.is_empty() {
        return out;
    }
    out.extend(nesting_violations(descriptor, blocksizes));
    for index in 0..descriptor.plans.len() {
        for (condition, level, lhs, rhs) in
            plan_checks(descriptor, blocksizes, shape, hierarchy, index, |l| hierarchy.capacity(l) as u64)
        {
            if lhs > rhs {
                out.push(BlocksizeViolation { condition, level, lhs, rhs });
            }
        }
    }
    out
}

/// A blocksize larger than the one enclosing it on the same dimension can
/// never be a full interior block.
pub(crate) fn nesting_violations(descriptor: &AlgorithmDescriptor, blocksizes: &BlocksizeSet) -> Vec<BlocksizeViolation> {
    let mut out = Vec::new();
    let mut last: [Option<usize>; 3] = [None; 3];
    for plan in &descriptor.plans {
        for d in [plan.outer, plan.inner] {
            let Some(b) = blocksizes.get(plan.level, d) else { continue };
            if let Some(enclosing) = last[d as usize] {
                if b > enclosing {
                    out.push(BlocksizeViolation {
                        condition: FitCondition::NotNested,
                        level: plan.level,
                        lhs: b as u64,
                        rhs: enclosing as u64,
                    });
                }
            }
            last[d as usize] = Some(b);
        }
    }
    out
}
