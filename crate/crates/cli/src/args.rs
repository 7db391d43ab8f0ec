//! Command-line surface. Every subcommand's arguments double as the resolved
//! config embedded in its JSON output.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "fraclab", version, about = "Discrete modulus, energy and singularity computations on self-similar fractals")]
pub struct Cli {
    /// Worker threads; defaults to the available parallelism. Results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory for `<command>.json`, `<command>.csv` and `<command>.svg`.
    #[arg(long, global = true, default_value = "fraclab-out")]
    pub out: PathBuf,
    /// Also write an SVG plot where the command has one.
    #[arg(long, global = true)]
    pub emit_svg: bool,
    /// Graph cache directory; overrides FRACLAB_CACHE_DIR.
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Build (or load from cache) the level-n graph of a spec.
    #[command(after_help = "CSV columns: spec,level,cells,edges,max_degree,content_hash")]
    Build(BuildArgs),
    /// Discrete p-modulus of a curve family, one row per (level, p).
    #[command(after_help = "CSV columns: spec,level,family,p,value,iterations,slack,duality_gap,lower_bound,method")]
    Modulus(ModulusArgs),
    /// Annular-modulus scaling fits across levels.
    #[command(after_help = "CSV columns: spec,p,level,eps_over_r,modulus,slack")]
    Scaling(ScalingArgs),
    /// Critical exponent of the modulus scaling (conformal dimension estimate).
    #[command(after_help = "CSV columns: p,slope,slope_stderr")]
    Confdim(ConfdimArgs),
    /// Energy and per-cell energy measure of a test function.
    #[command(after_help = "CSV columns: cell,energy")]
    Energy(EnergyArgs),
    /// Seeded axiom suite for the energy form of a spec.
    #[command(after_help = "CSV columns: axiom,samples,violations,worst_residual")]
    Axioms(AxiomArgs),
    /// Energy-measure concentration of harmonic functions across levels.
    #[command(after_help = "CSV columns: spec,p,level,energy,max_cell_ratio,gini,tv_distance")]
    Singularity(SingularityArgs),
    /// Mutual total variation of the two product energy measures.
    #[command(after_help = "CSV columns: spec_x,spec_y,p,level,mutual_tv,tv_lambda_x_vs_uniform,tv_lambda_y_vs_uniform")]
    ProductDemo(ProductDemoArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Build(_) => "build",
            Command::Modulus(_) => "modulus",
            Command::Scaling(_) => "scaling",
            Command::Confdim(_) => "confdim",
            Command::Energy(_) => "energy",
            Command::Axioms(_) => "axioms",
            Command::Singularity(_) => "singularity",
            Command::ProductDemo(_) => "product-demo",
        }
    }
}

/// Inclusive level range written `a..b`, `a..=b` or `a`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct LevelRange {
    pub start: u32,
    pub end: u32,
}

impl LevelRange {
    pub fn range(self) -> std::ops::RangeInclusive<u32> {
        self.start..=self.end
    }
}

pub fn parse_levels(s: &str) -> Result<LevelRange, String> {
    let num = |t: &str| t.trim().parse::<u32>().map_err(|e| format!("bad level `{t}`: {e}"));
    let (start, end) = match s.split_once("..") {
        Some((a, b)) => (num(a)?, num(b.strip_prefix('=').unwrap_or(b))?),
        None => {
            let n = num(s)?;
            (n, n)
        }
    };
    if end < start {
        return Err(format!("empty level range {start}..{end}"));
    }
    Ok(LevelRange { start, end })
}

pub fn parse_positive(s: &str) -> Result<f64, String> {
    match s.trim().parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be a positive finite number, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

pub fn parse_exponent(s: &str) -> Result<f64, String> {
    match s.trim().parse::<f64>() {
        Ok(v) if v > 1.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("exponent must exceed 1, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

pub fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `lo,hi`, got `{s}`"))?;
    let lo: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    if !(lo < hi) {
        return Err(format!("bracket needs lo < hi, got {lo},{hi}"));
    }
    Ok((lo, hi))
}

#[derive(Debug, Args, Serialize)]
pub struct BuildArgs {
    #[arg(long)]
    pub spec: String,
    #[arg(long, alias = "level", value_parser = parse_levels)]
    pub levels: LevelRange,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyArg {
    /// All paths from `--from` to `--to`.
    #[value(name = "point2point")]
    PointToPoint,
    /// Crossings of the annulus `B(center, 2r) \ B(center, r)`.
    Annulus,
    /// Paths joining `B(x, r)` and `B(y, r)` of bounded diameter.
    #[value(name = "ball2ball")]
    BallToBall,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyArg {
    Auto,
    ConstraintGeneration,
    PotentialProgram,
}

#[derive(Debug, Args, Serialize)]
pub struct ModulusArgs {
    #[arg(long)]
    pub spec: String,
    #[arg(long, alias = "level", value_parser = parse_levels)]
    pub levels: LevelRange,
    #[arg(long, value_enum)]
    pub family: FamilyArg,
    /// Exponents, comma separated.
    #[arg(long, value_delimiter = ',', required = true, value_parser = parse_exponent)]
    pub p: Vec<f64>,
    #[arg(long, default_value_t = 1e-8, value_parser = parse_positive)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = StrategyArg::Auto)]
    pub strategy: StrategyArg,
    /// Cutting-plane rounds before giving up with exit code 3.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Source cell of point2point (default: cell 0).
    #[arg(long)]
    pub from: Option<usize>,
    /// Target cell of point2point (default: the last cell).
    #[arg(long)]
    pub to: Option<usize>,
    /// Annulus center cell (default: cell N/2).
    #[arg(long)]
    pub center: Option<usize>,
    /// Inner radius of the annulus or ball radius (default: diameter/4, or 2 cell diameters for balls).
    #[arg(long, value_parser = parse_positive)]
    pub r: Option<f64>,
    /// First and second ball centers of ball2ball (default: first and last cell).
    #[arg(long)]
    pub x: Option<usize>,
    #[arg(long)]
    pub y: Option<usize>,
    /// Ball separation bound `A`, in units of r.
    #[arg(long, default_value_t = 4.0, value_parser = parse_positive)]
    pub separation: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct ScalingArgs {
    #[arg(long)]
    pub spec: String,
    #[arg(long, value_parser = parse_levels)]
    pub levels: LevelRange,
    #[arg(long, value_delimiter = ',', required = true, value_parser = parse_exponent)]
    pub p: Vec<f64>,
    /// Annulus inner radius (default: coarsest cell diameter).
    #[arg(long, value_parser = parse_positive)]
    pub radius: Option<f64>,
    #[arg(long, default_value_t = 5)]
    pub centers: usize,
    /// Modulus solver tolerance.
    #[arg(long, default_value_t = 1e-5, value_parser = parse_positive)]
    pub tol: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct ConfdimArgs {
    #[arg(long)]
    pub spec: String,
    #[arg(long, value_parser = parse_levels)]
    pub levels: LevelRange,
    #[arg(long, default_value = "1.5,3", value_parser = parse_pair)]
    pub bracket: (f64, f64),
    /// Bisection tolerance on p.
    #[arg(long, default_value_t = 0.01, value_parser = parse_positive)]
    pub tol: f64,
    #[arg(long, default_value_t = 1e-5, value_parser = parse_positive)]
    pub solver_tol: f64,
    #[arg(long, value_parser = parse_positive)]
    pub radius: Option<f64>,
    #[arg(long, default_value_t = 5)]
    pub centers: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunction {
    /// First coordinate of the cell center.
    Ramp,
    /// Seeded uniform values in [0, 1).
    Random,
}

#[derive(Debug, Args, Serialize)]
pub struct EnergyArgs {
    #[arg(long)]
    pub spec: String,
    #[arg(long)]
    pub level: u32,
    #[arg(long, default_value_t = 2.0, value_parser = parse_exponent)]
    pub p: f64,
    #[arg(long, value_enum, default_value_t = TestFunction::Ramp)]
    pub function: TestFunction,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct AxiomArgs {
    #[arg(long)]
    pub spec: String,
    #[arg(long)]
    pub level: u32,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2.0, value_parser = parse_exponent)]
    pub p: f64,
    /// Residual above which a sample counts as a violation.
    #[arg(long, default_value_t = 1e-9, value_parser = parse_positive)]
    pub tol: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternArg {
    /// Value 1 at `--corner`, 0 at the other corners.
    Corner,
    /// 0 on the first face, 1 on the opposite one.
    Ramp,
}

#[derive(Debug, Args, Serialize)]
pub struct SingularityArgs {
    #[arg(long)]
    pub spec: String,
    #[arg(long, value_parser = parse_levels)]
    pub levels: LevelRange,
    #[arg(long, value_delimiter = ',', default_value = "2", value_parser = parse_exponent)]
    pub p: Vec<f64>,
    #[arg(long, value_enum, default_value_t = PatternArg::Corner)]
    pub pattern: PatternArg,
    #[arg(long, default_value_t = 0)]
    pub corner: usize,
    /// Per-level conductance factor; estimated from energy ratios when omitted.
    #[arg(long, value_parser = parse_positive)]
    pub conductance: Option<f64>,
    #[arg(long, default_value_t = 1e-10, value_parser = parse_positive)]
    pub tol: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKindArg {
    FirstCorner,
    AllCorners,
}

#[derive(Debug, Args, Serialize)]
pub struct ProductDemoArgs {
    /// Product expression `X*Y`; the first factor is X.
    #[arg(long)]
    pub spec: String,
    #[arg(long, value_parser = parse_levels)]
    pub levels: LevelRange,
    #[arg(long, default_value_t = 2.0, value_parser = parse_exponent)]
    pub p: f64,
    #[arg(long, value_enum, default_value_t = FamilyKindArg::FirstCorner)]
    pub family: FamilyKindArg,
    #[arg(long, default_value_t = 1e-12, value_parser = parse_positive)]
    pub tol: f64,
}
