use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use cachemm::algo::{derive_blocksizes, parse_name, AccessCosts, AlgorithmDescriptor, DeriveOptions, DEFAULT_SLACK};
use cachemm::{BlocksizeSet, CacheHierarchy, Shape};
use clap::Args;

use crate::report::classify;

/// Where the algorithm comes from: a name such as `B3A2C0` or a JSON
/// descriptor file.
#[derive(Args)]
pub struct AlgorithmSource {
    /// Algorithm name, e.g. B3A2C0.
    #[arg(long, required_unless_present = "descriptor", conflicts_with = "descriptor")]
    pub alg: Option<String>,
    /// JSON descriptor file (list of level plans).
    #[arg(long, value_name = "FILE")]
    pub descriptor: Option<PathBuf>,
    /// Let the register level keep A or B resident instead of C.
    #[arg(long)]
    pub allow_non_c_registers: bool,
}

impl AlgorithmSource {
    pub fn load(&self) -> Result<AlgorithmDescriptor> {
        let d: AlgorithmDescriptor = match (&self.alg, &self.descriptor) {
            (Some(name), _) => parse_name(name)?,
            (None, Some(path)) => {
                let text = read(path)?;
                serde_json::from_str(&text).with_context(|| format!("parsing descriptor {}", path.display()))?
            }
            (None, None) => bail!("one of --alg or --descriptor is required"),
        };
        Ok(if self.allow_non_c_registers { d.allow_non_c_registers(true) } else { d })
    }
}

#[derive(Args)]
pub struct DeriveArgs {
    /// Fraction of every cache left unused when deriving blocksizes.
    #[arg(long, default_value_t = DEFAULT_SLACK)]
    pub slack: f64,
    /// Relative access costs of A, B and C as `a,b,c`.
    #[arg(long, value_name = "A,B,C")]
    pub costs: Option<String>,
    /// Register tile `m_r x n_r` for a register-resident C.
    #[arg(long, value_name = "MRxNR", default_value = "4x12")]
    pub register_tile: String,
}

impl DeriveArgs {
    pub fn options(&self) -> Result<DeriveOptions> {
        let costs = match &self.costs {
            None => AccessCosts::default(),
            Some(text) => {
                let v = text
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .with_context(|| format!("--costs {text:?}"))?;
                let [a, b, c] = v[..] else { bail!("--costs takes three numbers, got {text:?}") };
                AccessCosts::new(a, b, c)?
            }
        };
        let (m_r, n_r) = self
            .register_tile
            .split_once(['x', 'X'])
            .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)))
            .ok_or_else(|| anyhow!("--register-tile expects MRxNR, got {:?}", self.register_tile))?;
        Ok(DeriveOptions { costs, slack: self.slack, register_tile: (m_r, n_r) })
    }
}

#[derive(Args)]
pub struct BlocksizeArgs {
    /// Blocksizes as `level:dim=size` entries, e.g. `3:n=768,3:k=768`.
    /// Entries missing from a complete set are derived.
    #[arg(long, value_name = "ENTRIES")]
    pub bs: Option<String>,
    /// JSON blocksize file: a list of {level, dim, size}.
    #[arg(long, value_name = "FILE")]
    pub bs_file: Option<PathBuf>,
    #[command(flatten)]
    pub derive: DeriveArgs,
}

impl BlocksizeArgs {
    fn given(&self) -> Result<BlocksizeSet> {
        let mut bs = match &self.bs_file {
            Some(path) => BlocksizeSet::from_json(&read(path)?).with_context(|| format!("parsing {}", path.display()))?,
            None => BlocksizeSet::new(),
        };
        if let Some(text) = &self.bs {
            for (level, dim, size) in text.parse::<BlocksizeSet>()?.iter() {
                bs.set(level, dim, size);
            }
        }
        Ok(bs)
    }

    /// The given blocksizes if they cover `descriptor`, otherwise derived
    /// ones with the given entries laid over them.
    pub fn resolve(
        &self,
        descriptor: &AlgorithmDescriptor,
        hierarchy: Option<&CacheHierarchy>,
        shape: Shape,
    ) -> Result<BlocksizeSet> {
        let given = self.given()?;
        if given.covers(descriptor).is_ok() {
            return Ok(given);
        }
        let Some(hierarchy) = hierarchy else {
            bail!("blocksizes are incomplete ({}); pass --hier to derive the rest", given.covers(descriptor).unwrap_err());
        };
        let mut bs = derive_blocksizes(descriptor, hierarchy, shape, &self.derive.options()?).map_err(classify)?;
        for (level, dim, size) in given.iter() {
            bs.set(level, dim, size);
        }
        Ok(bs)
    }
}

#[derive(Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub algorithm: AlgorithmSource,
    /// Cache hierarchy JSON file.
    #[arg(long, value_name = "FILE")]
    pub hier: PathBuf,
    /// Problem shape `MxNxK`, or one integer for a square problem.
    #[arg(long)]
    pub shape: Shape,
    #[command(flatten)]
    pub blocksizes: BlocksizeArgs,
    /// Level whose outward traffic defines the intensity (default: outermost).
    #[arg(long)]
    pub boundary: Option<usize>,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub analyze: AnalyzeArgs,
    /// Lay the operands out in the packed hierarchical order.
    #[arg(long)]
    pub packed: bool,
    /// Simulate the register level too.
    #[arg(long)]
    pub include_registers: bool,
    /// Write the access trace, one `OPERAND index R|W` line per event.
    #[arg(long, value_name = "FILE")]
    pub trace_dump: Option<PathBuf>,
    /// Fail (exit 1) when any level's relative error exceeds this.
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub algorithm: AlgorithmSource,
    /// Cache hierarchy JSON file; needed to derive missing blocksizes.
    #[arg(long, value_name = "FILE")]
    pub hier: Option<PathBuf>,
    #[arg(long)]
    pub shape: Shape,
    #[command(flatten)]
    pub blocksizes: BlocksizeArgs,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Loop to parallelize, counted from the outermost (default: the second
    /// loop around the kernel).
    #[arg(long)]
    pub par_loop: Option<usize>,
    /// Pack A, B and C before running.
    #[arg(long)]
    pub packed: bool,
    /// Seed for the random operands.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest relative Frobenius error accepted against the reference.
    #[arg(long, default_value_t = 1e-12)]
    pub tolerance: f64,
    /// Skip the reference product above this many flops.
    #[arg(long, default_value_t = 1e10)]
    pub reference_limit: f64,
    /// Include elapsed time and flop rate in JSON and CSV output.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Args)]
pub struct PlanArgs {
    #[arg(long, value_name = "FILE")]
    pub hier: PathBuf,
    #[arg(long)]
    pub shape: Shape,
    #[command(flatten)]
    pub derive: DeriveArgs,
}

#[derive(Args)]
pub struct RooflineArgs {
    /// Peak compute rate in flops per second.
    #[arg(long)]
    pub peak: f64,
    /// Memory bandwidth in bytes per second.
    #[arg(long)]
    pub bandwidth: f64,
    /// Algorithm as `NAME=INTENSITY` in flops per byte; repeatable.
    #[arg(long = "point", value_name = "NAME=INTENSITY")]
    pub points: Vec<String>,
}

impl RooflineArgs {
    pub fn parsed_points(&self) -> Result<Vec<(String, f64)>> {
        self.points
            .iter()
            .map(|p| {
                let (name, x) = p.rsplit_once('=').ok_or_else(|| anyhow!("--point expects NAME=INTENSITY, got {p:?}"))?;
                let x: f64 = x.trim().parse().with_context(|| format!("--point {p:?}"))?;
                if !(x.is_finite() && x >= 0.0) {
                    bail!("--point {p:?}: intensity must be a non-negative number");
                }
                Ok((name.trim().to_string(), x))
            })
            .collect()
    }
}

#[derive(Args)]
pub struct ParetoArgs {
    /// Capacity of the outer cache in elements.
    #[arg(long, conflicts_with = "hier", required_unless_present = "hier")]
    pub outer_capacity: Option<usize>,
    /// Take the outer capacity from this hierarchy instead.
    #[arg(long, value_name = "FILE")]
    pub hier: Option<PathBuf>,
    /// Level of `--hier` used as the outer cache (default: outermost).
    #[arg(long, requires = "hier")]
    pub level: Option<usize>,
    /// Comma-separated capacity ratios outer/inner.
    #[arg(long, value_name = "R1,R2,...", conflicts_with = "ratio_range")]
    pub ratios: Option<String>,
    /// Geometric range `LO:HI:COUNT` of capacity ratios.
    #[arg(long, value_name = "LO:HI:COUNT", default_value = "2:256:8")]
    pub ratio_range: String,
    #[arg(long)]
    pub shape: Shape,
    #[arg(long, default_value_t = DEFAULT_SLACK)]
    pub slack: f64,
}

impl ParetoArgs {
    pub fn ratio_list(&self) -> Result<Vec<f64>> {
        if let Some(text) = &self.ratios {
            return text
                .split(',')
                .map(|r| r.trim().parse::<f64>().with_context(|| format!("--ratios {text:?}")))
                .collect();
        }
        let parts: Vec<&str> = self.ratio_range.split(':').collect();
        let [lo, hi, count] = parts[..] else { bail!("--ratio-range expects LO:HI:COUNT, got {:?}", self.ratio_range) };
        let (lo, hi): (f64, f64) = (lo.parse()?, hi.parse()?);
        let count: usize = count.parse()?;
        if count == 0 || lo > hi {
            bail!("--ratio-range needs LO <= HI and COUNT >= 1");
        }
        if count == 1 {
            return Ok(vec![lo]);
        }
        let step = (hi / lo).powf(1.0 / (count - 1) as f64);
        Ok((0..count).map(|i| lo * step.powi(i as i32)).collect())
    }
}

pub fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn hierarchy(path: &Path) -> Result<CacheHierarchy> {
    CacheHierarchy::from_json(&read(path)?).with_context(|| format!("loading hierarchy {}", path.display()))
}
