use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Dim, Error, Operand, Result};

/// The two loops that expose the resident block of one cache level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelPlan {
    pub level: usize,
    pub outer: Dim,
    pub inner: Dim,
    pub resident: Operand,
}

impl LevelPlan {
    /// Dimensions of the resident block, outer loop first.
    pub fn block_dims(&self) -> (Dim, Dim) {
        (self.outer, self.inner)
    }
}

/// Per-level plans ordered from the outermost cache down to the registers.
///
/// Levels are strictly decreasing; a gap between two consecutive plans means
/// the levels in between are skipped.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmDescriptor {
    pub plans: Vec<LevelPlan>,
    #[serde(default)]
    pub allow_non_c_registers: bool,
}

/// Loop order for a plan enclosed by a plan with resident `enclosing`: first
/// along the enclosing block's long dimension, then along the remaining
/// dimension of the new resident. `None` if `resident` cannot follow.
fn forced_loops(enclosing: Operand, resident: Operand) -> Option<(Dim, Dim)> {
    let outer = enclosing.long_dim();
    resident.other_dim(outer).map(|inner| (outer, inner))
}

/// Loop order for the outermost plan, where nothing forces it: the resident
/// dimension that the next plan does not partition with its inner loop goes
/// first, so the next plan's inner loop tiles the outermost inner loop.
fn default_outermost_loops(resident: Operand, next: Option<Operand>) -> (Dim, Dim) {
    if let Some(next) = next {
        if let Some((_, next_inner)) = forced_loops(resident, next) {
            let outer = resident.other_dim(next_inner).expect("next inner dim lies in the resident");
            return (outer, next_inner);
        }
    }
    let (rows, cols) = resident.dims();
    (cols, rows)
}

impl AlgorithmDescriptor {
    /// Builds a descriptor from `(level, resident)` pairs, outermost first,
    /// inferring every loop. Structural problems are left for
    /// [`validate_structure`].
    pub fn from_residents(residents: &[(usize, Operand)]) -> Self {
        let mut plans = Vec::with_capacity(residents.len());
        for (pos, &(level, resident)) in residents.iter().enumerate() {
            let (outer, inner) = if pos == 0 {
                default_outermost_loops(resident, residents.get(1).map(|r| r.1))
            } else {
                let enclosing = residents[pos - 1].1;
                forced_loops(enclosing, resident).unwrap_or_else(|| {
                    // consecutive equal residents; keep the dims consistent so
                    // only the residency rule fires
                    let (r, c) = resident.dims();
                    (c, r)
                })
            };
            plans.push(LevelPlan { level, outer, inner, resident });
        }
        AlgorithmDescriptor { plans, allow_non_c_registers: false }
    }

    pub fn allow_non_c_registers(mut self, allow: bool) -> Self {
        self.allow_non_c_registers = allow;
        self
    }

    /// Swaps the loop order of the outermost plan, the only free choice.
    pub fn with_outermost_order(mut self, outer: Dim, inner: Dim) -> Self {
        if let Some(first) = self.plans.first_mut() {
            first.outer = outer;
            first.inner = inner;
        }
        self
    }

    pub fn name(&self) -> String {
        format_name(self)
    }

    pub fn plan_at(&self, level: usize) -> Option<&LevelPlan> {
        self.plans.iter().find(|p| p.level == level)
    }

    pub fn outermost(&self) -> Option<&LevelPlan> {
        self.plans.first()
    }

    pub fn innermost(&self) -> Option<&LevelPlan> {
        self.plans.last()
    }

    pub fn residents(&self) -> Vec<(usize, Operand)> {
        self.plans.iter().map(|p| (p.level, p.resident)).collect()
    }

    /// Structural check returning the descriptor itself when valid.
    pub fn validated(self) -> Result<Self> {
        let violations = validate_structure(&self);
        if violations.is_empty() {
            Ok(self)
        } else {
            Err(Error::Structure(violations))
        }
    }
}

impl fmt::Display for AlgorithmDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_name(self))
    }
}

/// Parses names such as `B3A2C0`: one resident operand and cache level per
/// token, levels strictly decreasing and ending at the registers.
pub fn parse_name(text: &str) -> Result<AlgorithmDescriptor> {
    let err = |reason: String| Error::Parse { text: text.to_string(), reason };
    let chars: Vec<char> = text.trim().chars().collect();
    if chars.is_empty() {
        return Err(err("empty name".into()));
    }
    if !chars.len().is_multiple_of(2) {
        return Err(err("expected pairs of operand letter and level digit".into()));
    }
    let mut residents: Vec<(usize, Operand)> = Vec::with_capacity(chars.len() / 2);
    for pair in chars.chunks(2) {
        let op = Operand::from_letter(pair[0])
            .ok_or_else(|| err(format!("{:?} is not one of A, B, C", pair[0])))?;
        let level = pair[1]
            .to_digit(10)
            .ok_or_else(|| err(format!("{:?} is not a level digit", pair[1])))? as usize;
        if let Some(&(prev_level, prev_op)) = residents.last() {
            if level >= prev_level {
                return Err(err(format!(
                    "{}: levels must strictly decrease, L{level} follows L{prev_level}",
                    StructureRule::LevelsNotDecreasing
                )));
            }
            if op == prev_op {
                return Err(err(format!(
                    "{}: {op} is resident at both L{prev_level} and L{level}",
                    StructureRule::ConsecutiveResidentEqual
                )));
            }
        }
        residents.push((level, op));
    }
    if residents.last().map(|r| r.0) != Some(0) {
        return Err(err(format!("{}: the last token must be at level 0", StructureRule::MissingRegisterLevel)));
    }
    Ok(AlgorithmDescriptor::from_residents(&residents))
}

pub fn format_name(descriptor: &AlgorithmDescriptor) -> String {
    descriptor.plans.iter().map(|p| format!("{}{}", p.resident, p.level)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureRule {
    Empty,
    OuterEqualsInner,
    ResidentDimsMismatch,
    LevelsNotDecreasing,
    MissingRegisterLevel,
    ConsecutiveResidentEqual,
    OuterNotLongDim,
    InnerNotInEnclosingResident,
    RegistersNotResidentC,
}

impl fmt::Display for StructureRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("serializes");
        f.write_str(s.as_str().expect("string"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureViolation {
    pub rule: StructureRule,
    pub level: Option<usize>,
}

impl fmt::Display for StructureViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.level {
            Some(level) => write!(f, "{} at L{level}", self.rule),
            None => write!(f, "{}", self.rule),
        }
    }
}

/// Checks the loop and residency rules. An empty list means the descriptor
/// can be built by repeatedly partitioning each level's subproblem first
/// along the enclosing resident's long dimension.
pub fn validate_structure(descriptor: &AlgorithmDescriptor) -> Vec<StructureViolation> {
    let mut out = Vec::new();
    let mut push = |rule, level| out.push(StructureViolation { rule, level });
    let plans = &descriptor.plans;
    if plans.is_empty() {
        push(StructureRule::Empty, None);
        return out;
    }
    for plan in plans {
        if plan.outer == plan.inner {
            push(StructureRule::OuterEqualsInner, Some(plan.level));
        } else if !(plan.resident.has_dim(plan.outer) && plan.resident.has_dim(plan.inner)) {
            push(StructureRule::ResidentDimsMismatch, Some(plan.level));
        }
    }
    for pair in plans.windows(2) {
        let (enclosing, plan) = (&pair[0], &pair[1]);
        if plan.level >= enclosing.level {
            push(StructureRule::LevelsNotDecreasing, Some(plan.level));
        }
        if plan.resident == enclosing.resident {
            push(StructureRule::ConsecutiveResidentEqual, Some(plan.level));
        }
        if plan.outer != enclosing.resident.long_dim() {
            push(StructureRule::OuterNotLongDim, Some(plan.level));
        }
        if !enclosing.resident.has_dim(plan.inner) {
            push(StructureRule::InnerNotInEnclosingResident, Some(plan.level));
        }
    }
    let last = plans.last().expect("non-empty");
    if last.level != 0 {
        push(StructureRule::MissingRegisterLevel, Some(last.level));
    } else if last.resident != Operand::C && !descriptor.allow_non_c_registers {
        push(StructureRule::RegistersNotResidentC, Some(0));
    }
    out
}

/// Drops the plan at `level`, so that the cache is skipped: the enclosing
/// guest panel is then expected to be reused from it instead.
pub fn skip_level(descriptor: &AlgorithmDescriptor, level: usize) -> Result<AlgorithmDescriptor> {
    if level == 0 {
        return Err(Error::Invalid("the register level cannot be skipped".into()));
    }
    let top = descriptor.outermost().map(|p| p.level).unwrap_or(0);
    if level > top {
        return Err(Error::Invalid(format!("L{level} lies outside the descriptor (outermost plan is L{top})")));
    }
    let Some(pos) = descriptor.plans.iter().position(|p| p.level == level) else {
        // already skipped
        return Ok(descriptor.clone());
    };
    let residents: Vec<_> =
        descriptor.residents().into_iter().enumerate().filter(|(i, _)| *i != pos).map(|(_, r)| r).collect();
    if pos > 0 && pos + 1 < descriptor.plans.len() && residents[pos - 1].1 == residents[pos].1 {
        return Err(Error::Invalid(format!(
            "skipping L{level} would make {} resident in two consecutive levels",
            residents[pos].1
        )));
    }
    let mut out = AlgorithmDescriptor::from_residents(&residents).allow_non_c_registers(descriptor.allow_non_c_registers);
    if pos != 0 {
        let first = descriptor.plans[0];
        out = out.with_outermost_order(first.outer, first.inner);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rules(d: &AlgorithmDescriptor) -> Vec<StructureRule> {
        validate_structure(d).into_iter().map(|v| v.rule).collect()
    }

    #[test]
    fn parse_goto() {
        let d = parse_name("A2C0").unwrap();
        assert_eq!(d.residents(), vec![(2, Operand::A), (0, Operand::C)]);
        assert!(validate_structure(&d).is_empty());
    }

    #[test]
    fn parse_b3a2c0_loops() {
        let d = parse_name("B3A2C0").unwrap();
        assert_eq!(d.residents(), vec![(3, Operand::B), (2, Operand::A), (0, Operand::C)]);
        // n/768 -> k/768 -> m/120 -> k/192 -> n/12 -> m/4
        let loops: Vec<_> = d.plans.iter().map(|p| (p.outer, p.inner)).collect();
        assert_eq!(loops, vec![(Dim::N, Dim::K), (Dim::M, Dim::K), (Dim::N, Dim::M)]);
        assert!(validate_structure(&d).is_empty());
    }

    #[test]
    fn parse_errors_name_the_rule() {
        let e = parse_name("A3A2C0").unwrap_err().to_string();
        assert!(e.contains("consecutive_resident_equal"), "{e}");
        let e = parse_name("A2B3C0").unwrap_err().to_string();
        assert!(e.contains("levels_not_decreasing"), "{e}");
        let e = parse_name("B3A2C1").unwrap_err().to_string();
        assert!(e.contains("missing_register_level"), "{e}");
        assert!(parse_name("").is_err());
        assert!(parse_name("D2C0").is_err());
        assert!(parse_name("A2C").is_err());
    }

    #[test]
    fn format_names() {
        let d = AlgorithmDescriptor::from_residents(&[(4, Operand::C), (2, Operand::A), (0, Operand::C)]);
        assert_eq!(format_name(&d), "C4A2C0");
        assert_eq!(format_name(&parse_name("A2C0").unwrap()), "A2C0");
    }

    #[test]
    fn structural_violations() {
        // L2 loops of B3A2C0 given explicitly: outer m, inner k
        let d = parse_name("B3A2C0").unwrap();
        assert_eq!(d.plans[1].outer, Dim::M);
        assert_eq!(d.plans[1].inner, Dim::K);

        let mut bad = d.clone();
        bad.plans[1].outer = Dim::K;
        bad.plans[1].inner = Dim::M;
        assert!(rules(&bad).contains(&StructureRule::OuterNotLongDim));

        let same = AlgorithmDescriptor::from_residents(&[(2, Operand::A), (1, Operand::A), (0, Operand::C)]);
        assert!(rules(&same).contains(&StructureRule::ConsecutiveResidentEqual));

        let regs_b = AlgorithmDescriptor::from_residents(&[(2, Operand::A), (0, Operand::B)]);
        assert_eq!(rules(&regs_b), vec![StructureRule::RegistersNotResidentC]);
        assert!(rules(&regs_b.clone().allow_non_c_registers(true)).is_empty());

        let mut bad_dims = parse_name("A2C0").unwrap();
        bad_dims.plans[0].inner = bad_dims.plans[0].outer;
        assert!(rules(&bad_dims).contains(&StructureRule::OuterEqualsInner));

        let mut wrong_res = parse_name("A2C0").unwrap();
        wrong_res.plans[0].resident = Operand::B;
        assert!(rules(&wrong_res).contains(&StructureRule::ResidentDimsMismatch));

        assert_eq!(rules(&AlgorithmDescriptor { plans: vec![], allow_non_c_registers: false }), vec![StructureRule::Empty]);
    }

    #[test]
    fn skipping_levels() {
        let d = parse_name("B3A2C0").unwrap();
        assert_eq!(skip_level(&d, 1).unwrap(), d);
        assert!(skip_level(&d, 0).is_err());
        assert!(skip_level(&d, 5).is_err());

        let four = parse_name("C4B3A2C0").unwrap();
        let skipped = skip_level(&four, 3).unwrap();
        assert_eq!(skipped.name(), "C4A2C0");
        assert!(validate_structure(&skipped).is_empty());

        let goto = skip_level(&d, 3).unwrap();
        assert_eq!(goto.name(), "A2C0");
        assert!(validate_structure(&goto).is_empty());

        // would leave A resident at L4 and L2
        let clash = parse_name("A4B3A2C0").unwrap();
        assert!(skip_level(&clash, 3).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let d = parse_name("C4A2C0").unwrap();
        let text = serde_json::to_string(&d).unwrap();
        let back: AlgorithmDescriptor = serde_json::from_str(&text).unwrap();
        assert_eq!(back, d);
    }
}
