//! Subcommand implementations. Each returns the JSON result, the CSV table and
//! an optional plot; failures are classified for the exit code.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use fraclab_core::cache::GraphCache;
use fraclab_core::energy::{axiom_suite, product_energy, EnergyForm, ProductEnergyForm};
use fraclab_core::modulus::{
    default_cap_factor, solve_modulus_with, CurveFamily, ModulusResult, SolverOptions, SolverStrategy,
};
use fraclab_core::report::{self, ModulusRecord, Series};
use fraclab_core::scaling::{estimate_confdim_on, ScalingConfig, ScalingFit, ScalingStudy};
use fraclab_core::singularity::{
    concentration_scan, product_singularity_demo, BoundaryPattern, ConcentrationReport, DominantFamily,
    ScanConductance,
};
use fraclab_core::{
    ApproximationGraph, CellNetwork, EnergyError, Execution, FractalSpec, GraphError, ModulusError, ScalingError,
    SingularityError, SpecError,
};

use crate::args::*;

/// Why a command could not finish.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    NonConvergence(String),
    Io(String),
}

impl Failure {
    pub fn kind(&self) -> &'static str {
        match self {
            Failure::Validation(_) => "validation",
            Failure::NonConvergence(_) => "non_convergence",
            Failure::Io(_) => "io",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::NonConvergence(m) | Failure::Io(m) => m,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::NonConvergence(_) => 3,
            _ => 2,
        }
    }
}

impl From<SpecError> for Failure {
    fn from(e: SpecError) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<GraphError> for Failure {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Io(_) | GraphError::Cache(_) => Failure::Io(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<ModulusError> for Failure {
    fn from(e: ModulusError) -> Self {
        match e {
            ModulusError::NonConvergence { .. } => Failure::NonConvergence(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<ScalingError> for Failure {
    fn from(e: ScalingError) -> Self {
        match e {
            ScalingError::Modulus(m) => m.into(),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<EnergyError> for Failure {
    fn from(e: EnergyError) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<SingularityError> for Failure {
    fn from(e: SingularityError) -> Self {
        match e {
            SingularityError::NonConvergence { .. } => Failure::NonConvergence(e.to_string()),
            SingularityError::Graph(g) => g.into(),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<report::ReportError> for Failure {
    fn from(e: report::ReportError) -> Self {
        Failure::Io(e.to_string())
    }
}

/// Finished artifacts of one command.
pub struct Artifacts {
    pub json: String,
    pub csv: String,
    pub svg: Option<String>,
    /// The first failure that cut the run short, when results are partial.
    pub partial: Option<Failure>,
}

pub struct Context {
    pub cache: GraphCache,
    pub exec: Execution,
}

impl Context {
    fn graph(&self, spec: &FractalSpec, level: u32) -> Result<ApproximationGraph, Failure> {
        Ok(self.cache.get_or_build(spec, level)?.0)
    }

    fn graphs(&self, spec: &FractalSpec, levels: LevelRange) -> Result<Vec<ApproximationGraph>, Failure> {
        levels.range().map(|n| self.graph(spec, n)).collect()
    }
}

/// A result item that failed, kept in the JSON next to the finished ones.
#[derive(Debug, Serialize)]
struct FailedItem {
    level: Option<u32>,
    p: Option<f64>,
    kind: &'static str,
    message: String,
}

fn envelope<C: Serialize, R: Serialize>(
    command: &str,
    config: &C,
    result: &R,
    partial: bool,
) -> Result<String, Failure> {
    Ok(report::Envelope::new(command, config, result).partial(partial).to_json()?)
}

pub fn run(command: &Command, ctx: &Context) -> Result<Artifacts, Failure> {
    match command {
        Command::Build(a) => build(a, ctx),
        Command::Modulus(a) => modulus(a, ctx),
        Command::Scaling(a) => scaling(a, ctx),
        Command::Confdim(a) => confdim(a, ctx),
        Command::Energy(a) => energy(a, ctx),
        Command::Axioms(a) => axioms(a, ctx),
        Command::Singularity(a) => singularity(a, ctx),
        Command::ProductDemo(a) => product_demo(a, ctx),
    }
}

#[derive(Debug, Serialize)]
struct BuildRecord {
    spec: String,
    level: u32,
    cells: usize,
    edges: usize,
    max_degree: usize,
    content_hash: String,
}

fn build(a: &BuildArgs, ctx: &Context) -> Result<Artifacts, Failure> {
    let spec = FractalSpec::from_name(&a.spec)?;
    let records: Vec<BuildRecord> = ctx
        .graphs(&spec, a.levels)?
        .iter()
        .map(|g| BuildRecord {
            spec: spec.name.clone(),
            level: g.level(),
            cells: g.cell_count(),
            edges: g.edge_count(),
            max_degree: g.max_degree(),
            content_hash: format!("{:016x}", spec.content_hash()),
        })
        .collect();
    Ok(Artifacts { json: envelope("build", a, &records, false)?, csv: report::to_csv(&records)?, svg: None, partial: None })
}

fn modulus_family<'g>(
    a: &ModulusArgs,
    graph: &'g ApproximationGraph,
) -> Result<(CurveFamily<'g>, String), Failure> {
    let n = graph.cell_count();
    match a.family {
        FamilyArg::PointToPoint => {
            let (from, to) = (a.from.unwrap_or(0), a.to.unwrap_or(n - 1));
            let fam = CurveFamily::point_to_point(graph, &[from as u32], &[to as u32])?;
            Ok((fam, format!("point2point(from={from},to={to})")))
        }
        FamilyArg::Annulus => {
            let center = a.center.unwrap_or(n / 2);
            if center >= n {
                return Err(Failure::Validation(format!("center cell {center} out of range (graph has {n} cells)")));
            }
            let r = a.r.unwrap_or(graph.diameter() / 4.0);
            let fam = CurveFamily::annulus(graph, graph.center(center), r, 2.0 * r)?;
            Ok((fam, format!("annulus(center={center},r={r})")))
        }
        FamilyArg::BallToBall => {
            let (Some(x), Some(y)) = (a.x, a.y) else {
                return Err(Failure::Validation("ball2ball needs --x and --y".into()));
            };
            if x >= n || y >= n {
                return Err(Failure::Validation(format!("ball centers must be below {n}")));
            }
            let r = a.r.unwrap_or(2.0 * graph.cell_diameter());
            let gap = graph.distance(x, y) - 2.0 * r;
            if gap > a.separation * r * (1.0 + 1e-12) {
                return Err(Failure::Validation(format!(
                    "balls are {gap} apart, more than separation * r = {}",
                    a.separation * r
                )));
            }
            let cap = default_cap_factor(a.separation) * r;
            let fam = CurveFamily::ball_to_ball(graph, x, y, r)?.with_diameter_cap(graph, cap);
            Ok((fam, format!("ball2ball(x={x},y={y},r={r},cap={cap})")))
        }
    }
}

fn modulus(a: &ModulusArgs, ctx: &Context) -> Result<Artifacts, Failure> {
    let spec = FractalSpec::from_name(&a.spec)?;
    let mut opts = SolverOptions::new(a.tol);
    opts.strategy = match a.strategy {
        StrategyArg::Auto => SolverStrategy::Auto,
        StrategyArg::ConstraintGeneration => SolverStrategy::ConstraintGeneration,
        StrategyArg::PotentialProgram => SolverStrategy::PotentialProgram,
    };
    if let Some(m) = a.max_iter {
        opts.max_iter = m;
    }
    let mut records = Vec::new();
    let mut failed = Vec::new();
    let mut first_failure = None;
    for level in a.levels.range() {
        let graph = ctx.graph(&spec, level)?;
        let (family, label) = modulus_family(a, &graph)?;
        let solved: Vec<Result<ModulusResult, ModulusError>> =
            fraclab_core::par::map(ctx.exec, &a.p, |&p| solve_modulus_with(&family, p, &opts));
        for (&p, res) in a.p.iter().zip(solved) {
            match res {
                Ok(r) => records.push(ModulusRecord::new(&spec.name, level, &label, &r)),
                Err(e) => {
                    let f: Failure = e.into();
                    if !matches!(f, Failure::NonConvergence(_)) {
                        return Err(f);
                    }
                    failed.push(FailedItem { level: Some(level), p: Some(p), kind: f.kind(), message: f.message().into() });
                    first_failure.get_or_insert(f);
                }
            }
        }
    }
    #[derive(Serialize)]
    struct Out<'a> {
        records: &'a [ModulusRecord],
        failed: &'a [FailedItem],
    }
    let json = envelope("modulus", a, &Out { records: &records, failed: &failed }, first_failure.is_some())?;
    Ok(Artifacts { json, csv: report::to_csv(&records)?, svg: None, partial: first_failure })
}

fn scaling_config(radius: Option<f64>, centers: usize, tol: f64) -> ScalingConfig {
    ScalingConfig { radius, centers, tol }
}

fn scaling(a: &ScalingArgs, ctx: &Context) -> Result<Artifacts, Failure> {
    let spec = FractalSpec::from_name(&a.spec)?;
    let study = ScalingStudy::from_graphs(ctx.graphs(&spec, a.levels)?, &scaling_config(a.radius, a.centers, a.tol), ctx.exec)?;
    let mut fits: Vec<ScalingFit> = Vec::new();
    let mut failed = Vec::new();
    let mut first_failure = None;
    for &p in &a.p {
        match study.fit(p) {
            Ok(f) => fits.push(f),
            Err(e) => {
                let f: Failure = e.into();
                if !matches!(f, Failure::NonConvergence(_)) {
                    return Err(f);
                }
                failed.push(FailedItem { level: None, p: Some(p), kind: f.kind(), message: f.message().into() });
                first_failure.get_or_insert(f);
            }
        }
    }
    #[derive(Serialize)]
    struct Out<'a> {
        radius: f64,
        center_cells: Vec<usize>,
        fits: &'a [ScalingFit],
        failed: &'a [FailedItem],
    }
    let out = Out { radius: study.radius(), center_cells: study.center_cells(), fits: &fits, failed: &failed };
    Ok(Artifacts {
        json: envelope("scaling", a, &out, first_failure.is_some())?,
        csv: report::to_csv(&report::scaling_rows(&fits))?,
        svg: Some(report::scaling_svg(&fits)),
        partial: first_failure,
    })
}

fn confdim(a: &ConfdimArgs, ctx: &Context) -> Result<Artifacts, Failure> {
    let spec = FractalSpec::from_name(&a.spec)?;
    let study = ScalingStudy::from_graphs(
        ctx.graphs(&spec, a.levels)?,
        &scaling_config(a.radius, a.centers, a.solver_tol),
        ctx.exec,
    )?;
    let est = estimate_confdim_on(&study, a.bracket, a.tol)?;
    let series = vec![Series { name: spec.name.clone(), points: est.per_p_slopes.iter().map(|s| (s.p, s.slope)).collect() }];
    Ok(Artifacts {
        json: envelope("confdim", a, &est, false)?,
        csv: report::to_csv(&est.per_p_slopes)?,
        svg: Some(report::line_plot_svg("modulus scaling slope", "p", "slope", &series)),
        partial: None,
    })
}

fn test_function(graph: &ApproximationGraph, kind: TestFunction, seed: u64) -> Vec<f64> {
    match kind {
        TestFunction::Ramp => (0..graph.cell_count()).map(|c| graph.center(c)[0]).collect(),
        TestFunction::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..graph.cell_count()).map(|_| rng.gen::<f64>()).collect()
        }
    }
}

fn energy(a: &EnergyArgs, ctx: &Context) -> Result<Artifacts, Failure> {
    let spec = FractalSpec::from_name(&a.spec)?;
    let graph = ctx.graph(&spec, a.level)?;
    let f = test_function(&graph, a.function, a.seed);
    let (total, cells) = if spec.is_product() {
        let form = ProductEnergyForm::from_spec(&spec, a.level, a.p)?;
        (product_energy(&form, &f)?, form.cell_masses(&f)?)
    } else {
        let form = EnergyForm::on_cells(&graph, a.p)?;
        (form.energy(&f)?, form.energy_measure(&f)?.cell_mass)
    };
    let measure = fraclab_core::energy::EnergyMeasure { level: a.level, cell_mass: cells };
    #[derive(Serialize)]
    struct Out {
        energy: f64,
        measure_total: f64,
        cells: usize,
    }
    let out = Out { energy: total, measure_total: measure.total(), cells: graph.cell_count() };
    Ok(Artifacts {
        json: envelope("energy", a, &out, false)?,
        csv: report::to_csv(&report::energy_rows(&measure))?,
        svg: None,
        partial: None,
    })
}

fn axioms(a: &AxiomArgs, ctx: &Context) -> Result<Artifacts, Failure> {
    let spec = FractalSpec::from_name(&a.spec)?;
    let rep = if spec.is_product() {
        let form = ProductEnergyForm::from_spec(&spec, a.level, a.p)?;
        axiom_suite(&form, a.samples, a.seed, a.tol, ctx.exec)
    } else {
        let graph = ctx.graph(&spec, a.level)?;
        let form = EnergyForm::on_cells(&graph, a.p)?;
        axiom_suite(&form, a.samples, a.seed, a.tol, ctx.exec)
    };
    Ok(Artifacts {
        json: envelope("axioms", a, &rep, false)?,
        csv: report::to_csv(&report::axiom_rows(&rep))?,
        svg: None,
        partial: None,
    })
}

fn singularity(a: &SingularityArgs, ctx: &Context) -> Result<Artifacts, Failure> {
    let spec = FractalSpec::from_name(&a.spec)?;
    let pattern = match a.pattern {
        PatternArg::Corner => BoundaryPattern::Corner(a.corner),
        PatternArg::Ramp => BoundaryPattern::Ramp,
    };
    let conductance = a.conductance.map_or(ScanConductance::Estimated, ScanConductance::Fixed);
    let mut reports: Vec<ConcentrationReport> = Vec::new();
    let mut failed = Vec::new();
    let mut first_failure = None;
    for &p in &a.p {
        match concentration_scan(&spec, p, pattern, a.levels.range(), conductance, a.tol, ctx.exec) {
            Ok(r) => reports.push(r),
            Err(e) => {
                let f: Failure = e.into();
                if !matches!(f, Failure::NonConvergence(_)) {
                    return Err(f);
                }
                failed.push(FailedItem { level: None, p: Some(p), kind: f.kind(), message: f.message().into() });
                first_failure.get_or_insert(f);
            }
        }
    }
    #[derive(Serialize)]
    struct Out<'a> {
        reports: &'a [ConcentrationReport],
        failed: &'a [FailedItem],
    }
    Ok(Artifacts {
        json: envelope("singularity", a, &Out { reports: &reports, failed: &failed }, first_failure.is_some())?,
        csv: report::to_csv(&report::concentration_rows(&reports))?,
        svg: Some(report::tv_svg(&reports)),
        partial: first_failure,
    })
}

fn product_demo(a: &ProductDemoArgs, ctx: &Context) -> Result<Artifacts, Failure> {
    let spec = FractalSpec::from_name(&a.spec)?;
    if spec.factors.len() != 2 {
        return Err(Failure::Validation(format!("`{}` must be a product of two primitives", a.spec)));
    }
    let x = FractalSpec::primitive(spec.factors[0].clone());
    let y = FractalSpec::primitive(spec.factors[1].clone());
    let family = match a.family {
        FamilyKindArg::FirstCorner => DominantFamily::FirstCorner,
        FamilyKindArg::AllCorners => DominantFamily::AllCorners,
    };
    let rep = product_singularity_demo(&x, &y, a.p, a.levels.range(), family, a.tol, ctx.exec)?;
    Ok(Artifacts {
        json: envelope("product-demo", a, &rep, false)?,
        csv: report::to_csv(&report::product_demo_rows(&rep))?,
        svg: Some(report::product_demo_svg(&rep)),
        partial: None,
    })
}
