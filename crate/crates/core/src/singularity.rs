//! Discrete p-harmonic problems and energy-measure concentration diagnostics.
//!
//! Singularity of energy measures cannot be certified at a finite level.
//! What is computed here is its finite-level shadow: the total-variation
//! distance between normalized energy measures and the self-similar measure,
//! tracked across levels.

use serde::{Deserialize, Serialize};

use crate::energy::{geometric_weights, minimal_energy_dominant, ConductanceRule, EnergyForm, NodeKind};
use crate::error::SingularityError;
use crate::graph::{build_graph, pack_product_index, ApproximationGraph, CellNetwork, MeasureVector};
use crate::par::{self, Execution};
use crate::spec::{product_spec, FractalSpec};

/// Boundary data on the nodes of a form, plus a gradient tolerance.
#[derive(Clone, Debug)]
pub struct HarmonicProblem<'a> {
    pub form: &'a EnergyForm,
    pub boundary: Vec<(usize, f64)>,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl<'a> HarmonicProblem<'a> {
    pub fn new(form: &'a EnergyForm, boundary: Vec<(usize, f64)>, tol: f64) -> Self {
        Self { form, boundary, tol, max_sweeps: 200_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicSolution {
    pub values: Vec<f64>,
    pub energy: f64,
    pub sweeps: usize,
    /// Scale-free gradient norm at exit.
    pub residual: f64,
}

/// Max over free nodes of `|dE/df_v|` scaled by `p * sum_u c_vu * range^{p-1}`.
fn scaled_residual(grad: &[f64], wsum: &[f64], free: &[usize], p: f64, range: f64) -> f64 {
    let scale = p * range.powf(p - 1.0);
    free.iter()
        .filter(|&&v| wsum[v] > 0.0)
        .map(|&v| grad[v].abs() / (wsum[v] * scale))
        .fold(0.0, f64::max)
}

/// Edge data of a form with the renormalization folded into the conductances.
struct EdgeSystem {
    edges: Vec<(usize, usize)>,
    weight: Vec<f64>,
    fixed: Vec<bool>,
    /// Sum of incident conductances per node.
    wsum: Vec<f64>,
}

impl EdgeSystem {
    fn new(form: &EnergyForm, fixed: Vec<bool>) -> Self {
        let edges: Vec<(usize, usize)> = form.edges().iter().map(|&(a, b)| (a as usize, b as usize)).collect();
        let weight: Vec<f64> = form.conductances().iter().map(|c| c * form.renormalization()).collect();
        let mut wsum = vec![0.0; fixed.len()];
        for (&(a, b), &w) in edges.iter().zip(&weight) {
            wsum[a] += w;
            wsum[b] += w;
        }
        Self { edges, weight, fixed, wsum }
    }

    fn energy(&self, f: &[f64], p: f64) -> f64 {
        self.edges.iter().zip(&self.weight).map(|(&(a, b), w)| w * (f[a] - f[b]).abs().powf(p)).sum()
    }

    fn gradient(&self, f: &[f64], p: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        for (&(a, b), &w) in self.edges.iter().zip(&self.weight) {
            let d = f[a] - f[b];
            let g = w * p * d.abs().powf(p - 1.0) * d.signum();
            out[a] += g;
            out[b] -= g;
        }
        for (g, &fx) in out.iter_mut().zip(&self.fixed) {
            if fx {
                *g = 0.0;
            }
        }
    }

    /// Solves `L_h x = rhs` on free nodes (zero on fixed ones) by Jacobi-preconditioned CG,
    /// where `L_h` is the Laplacian with edge weights `h`.
    fn solve(&self, h: &[f64], rhs: &[f64], rel_tol: f64, max_iter: usize) -> Vec<f64> {
        let n = rhs.len();
        let mut diag = vec![0.0; n];
        for (&(a, b), &w) in self.edges.iter().zip(h) {
            diag[a] += w;
            diag[b] += w;
        }
        let apply = |x: &[f64], out: &mut [f64]| {
            out.iter_mut().for_each(|o| *o = 0.0);
            for (&(a, b), &w) in self.edges.iter().zip(h) {
                let d = w * (x[a] - x[b]);
                out[a] += d;
                out[b] -= d;
            }
            for (o, &fx) in out.iter_mut().zip(&self.fixed) {
                if fx {
                    *o = 0.0;
                }
            }
        };
        let precond = |r: &[f64], z: &mut [f64]| {
            for i in 0..n {
                z[i] = if self.fixed[i] || diag[i] <= 0.0 { 0.0 } else { r[i] / diag[i] };
            }
        };
        let mut x = vec![0.0; n];
        let mut r: Vec<f64> = rhs.iter().zip(&self.fixed).map(|(&v, &fx)| if fx { 0.0 } else { v }).collect();
        let bnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if bnorm == 0.0 {
            return x;
        }
        let mut z = vec![0.0; n];
        precond(&r, &mut z);
        let mut d = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let mut ad = vec![0.0; n];
        for _ in 0..max_iter {
            apply(&d, &mut ad);
            let dad: f64 = d.iter().zip(&ad).map(|(a, b)| a * b).sum();
            if !(dad > 0.0) {
                break;
            }
            let alpha = rz / dad;
            for i in 0..n {
                x[i] += alpha * d[i];
                r[i] -= alpha * ad[i];
            }
            if r.iter().map(|v| v * v).sum::<f64>().sqrt() <= rel_tol * bnorm {
                break;
            }
            precond(&r, &mut z);
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                d[i] = z[i] + beta * d[i];
            }
        }
        x
    }
}

/// Newton steps allowed before the problem is declared stalled.
const MAX_NEWTON: usize = 500;

/// Relative Newton decrement treated as converged.
const ROUNDOFF_GAP: f64 = 1e-15;

/// Unique minimizer of `E` subject to the boundary values.
///
/// Starts at the boundary average and solves the `p = 2` problem exactly by
/// conjugate gradients. For other `p` this warm-starts damped Newton: each
/// step solves the Hessian system (a Laplacian with weights
/// `p (p-1) c |df|^{p-2}`) by conjugate gradients, then backtracks on the
/// energy. Stops when the scale-free gradient norm drops below `tol` or the
/// predicted energy decrease falls under rounding (`1e-15 E`).
pub fn solve_p_harmonic(problem: &HarmonicProblem) -> Result<HarmonicSolution, SingularityError> {
    let form = problem.form;
    if problem.boundary.is_empty() {
        return Err(SingularityError::EmptyBoundary);
    }
    let n = form.node_count();
    let mut fixed = vec![false; n];
    let mut f = vec![0.0; n];
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(v, val) in &problem.boundary {
        if v >= n || !val.is_finite() {
            return Err(crate::error::EnergyError::GraphMismatch(format!("bad boundary entry ({v}, {val})")).into());
        }
        fixed[v] = true;
        f[v] = val;
        lo = lo.min(val);
        hi = hi.max(val);
    }
    let avg = problem.boundary.iter().map(|b| b.1).sum::<f64>() / problem.boundary.len() as f64;
    let free: Vec<usize> = (0..n).filter(|&v| !fixed[v]).collect();
    for &v in &free {
        f[v] = avg;
    }
    let range = hi - lo;
    let p = form.p();
    if range == 0.0 || free.is_empty() {
        let energy = form.energy(&f)?;
        return Ok(HarmonicSolution { values: f, energy, sweeps: 0, residual: 0.0 });
    }
    let sys = EdgeSystem::new(form, fixed);
    let mut grad = vec![0.0; n];
    let cg_iters = 20 * n + 100;

    // p = 2 start: one exact Newton step from the average
    sys.gradient(&f, 2.0, &mut grad);
    let h2: Vec<f64> = sys.weight.iter().map(|w| 2.0 * w).collect();
    let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
    let step = sys.solve(&h2, &neg, 1e-14, cg_iters);
    for v in &free {
        f[*v] = (f[*v] + step[*v]).clamp(lo, hi);
    }
    sys.gradient(&f, p, &mut grad);
    let mut residual = scaled_residual(&grad, &sys.wsum, &free, p, range);
    let mut steps = 0;
    let floor = 1e-12 * range;
    while residual > problem.tol {
        if steps >= MAX_NEWTON.min(problem.max_sweeps) {
            return Err(SingularityError::NonConvergence { iterations: steps, residual });
        }
        let h: Vec<f64> = sys
            .edges
            .iter()
            .zip(&sys.weight)
            .map(|(&(a, b), w)| w * p * (p - 1.0) * (f[a] - f[b]).abs().max(floor).powf(p - 2.0))
            .collect();
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        let dir = sys.solve(&h, &neg, 1e-10, cg_iters);
        let slope: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        let e0 = sys.energy(&f, p);
        // Predicted decrease below rounding in E: f is optimal to machine precision.
        // For p < 2 the gradient on edges whose exact difference is zero cannot
        // shrink below eps^{p-1}, so this is the only reachable stop there.
        if -slope <= ROUNDOFF_GAP * e0.max(f64::MIN_POSITIVE) {
            break;
        }
        let mut t = 1.0;
        let mut trial = f.clone();
        loop {
            for &v in &free {
                trial[v] = (f[v] + t * dir[v]).clamp(lo, hi);
            }
            let e = sys.energy(&trial, p);
            if e <= e0 + 1e-4 * t * slope || t < 1e-12 {
                break;
            }
            t *= 0.5;
        }
        f.copy_from_slice(&trial);
        sys.gradient(&f, p, &mut grad);
        residual = scaled_residual(&grad, &sys.wsum, &free, p, range);
        steps += 1;
    }
    let energy = form.energy(&f)?;
    Ok(HarmonicSolution { values: f, energy, sweeps: steps, residual })
}

/// Boundary data used by scans.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "corner")]
pub enum BoundaryPattern {
    /// First reference corner at 0, last at 1 (cube specs: the faces `x_0 = 0` and `x_0 = 1`).
    Ramp,
    /// One reference corner at 1, the others at 0.
    Corner(usize),
}

/// Junction form for finitely ramified specs, cell form otherwise.
pub fn harmonic_form(
    graph: &ApproximationGraph,
    p: f64,
    rule: ConductanceRule,
) -> Result<EnergyForm, SingularityError> {
    Ok(if graph.spec().finitely_ramified() {
        EnergyForm::on_junctions(graph, p, rule)?
    } else {
        EnergyForm::on_cells_with(graph, p, rule)?
    })
}

/// Boundary node values realizing `pattern` on `form`.
pub fn boundary_values(
    graph: &ApproximationGraph,
    form: &EnergyForm,
    pattern: BoundaryPattern,
) -> Result<Vec<(usize, f64)>, SingularityError> {
    let corners: Vec<usize> = match form.kind() {
        NodeKind::Junctions => form.boundary_nodes().iter().map(|&v| v as usize).collect(),
        NodeKind::Cells => {
            let k = graph.spec().coord_dim();
            (0..1usize << k)
                .map(|mask| {
                    let target: Vec<f64> = (0..k).map(|d| ((mask >> d) & 1) as f64).collect();
                    (0..graph.cell_count())
                        .min_by(|&a, &b| {
                            let da = ApproximationGraph::distance_points(graph.center(a), &target);
                            let db = ApproximationGraph::distance_points(graph.center(b), &target);
                            da.total_cmp(&db).then(a.cmp(&b))
                        })
                        .expect("non-empty graph")
                })
                .collect()
        }
    };
    match pattern {
        BoundaryPattern::Corner(i) => {
            if i >= corners.len() {
                return Err(SingularityError::EmptyBoundary);
            }
            let mut out: Vec<(usize, f64)> = corners.iter().map(|&v| (v, 0.0)).collect();
            out[i].1 = 1.0;
            out.sort_by_key(|e| e.0);
            out.dedup_by_key(|e| e.0);
            Ok(out)
        }
        BoundaryPattern::Ramp => match form.kind() {
            NodeKind::Junctions => {
                let last = corners.len() - 1;
                Ok(corners.iter().enumerate().map(|(j, &v)| (v, j as f64 / last as f64)).collect())
            }
            NodeKind::Cells => {
                let h = graph.cell_diameter();
                let mut out = Vec::new();
                for c in 0..graph.cell_count() {
                    let x = graph.center(c)[0];
                    if x < h {
                        out.push((c, 0.0));
                    } else if x > 1.0 - h {
                        out.push((c, 1.0));
                    }
                }
                Ok(out)
            }
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    pub level: u32,
    pub energy: f64,
    pub max_cell_ratio: f64,
    pub gini: f64,
    pub tv_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub spec: String,
    pub p: f64,
    pub pattern: BoundaryPattern,
    pub conductance_factor: f64,
    pub rows: Vec<ConcentrationRow>,
}

impl ConcentrationReport {
    pub fn tv_series(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.tv_distance).collect()
    }
}

/// `(max ratio, gini, tv)` of normalized cell energies against normalized `mu`.
pub fn concentration_statistics(cell_energy: &[f64], mu: &[f64]) -> (f64, f64, f64) {
    let te: f64 = cell_energy.iter().sum();
    let tm: f64 = mu.iter().sum();
    if te <= 0.0 || tm <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let mut max_ratio: f64 = 0.0;
    let mut tv = 0.0;
    for (e, m) in cell_energy.iter().zip(mu) {
        let (a, b) = (e / te, m / tm);
        if b > 0.0 {
            max_ratio = max_ratio.max(a / b);
        }
        tv += (a - b).abs();
    }
    (max_ratio, gini(cell_energy, mu), 0.5 * tv)
}

/// Gini coefficient of the density `e/mu` under the probability `mu`.
pub fn gini(cell_energy: &[f64], mu: &[f64]) -> f64 {
    let te: f64 = cell_energy.iter().sum();
    let tm: f64 = mu.iter().sum();
    let mut items: Vec<(f64, f64)> = cell_energy
        .iter()
        .zip(mu)
        .filter(|(_, &m)| m > 0.0)
        .map(|(&e, &m)| ((e / te) / (m / tm), m / tm))
        .collect();
    items.sort_by(|a, b| a.0.total_cmp(&b.0));
    // 1 - 2 * area under the Lorenz curve
    let mut area = 0.0;
    let mut cum = 0.0;
    for (density, w) in items {
        let next = cum + density * w;
        area += w * (cum + next) / 2.0;
        cum = next;
    }
    (1.0 - 2.0 * area).clamp(0.0, 1.0)
}

/// Harmonic solution of `pattern` at one level, with its cell energies.
pub fn harmonic_energy_profile(
    spec: &FractalSpec,
    level: u32,
    p: f64,
    pattern: BoundaryPattern,
    rule: ConductanceRule,
    tol: f64,
) -> Result<(HarmonicSolution, Vec<f64>), SingularityError> {
    let graph = build_graph(spec, level)?;
    let form = harmonic_form(&graph, p, rule)?;
    let boundary = boundary_values(&graph, &form, pattern)?;
    let sol = solve_p_harmonic(&HarmonicProblem::new(&form, boundary, tol))?;
    let cells = form.energy_measure(&sol.values)?.cell_mass;
    Ok((sol, cells))
}

/// Per-level energy renormalization factors `E_{n-1} / E_n` at unit conductance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenormalizationReport {
    pub spec: String,
    pub p: f64,
    pub levels: Vec<u32>,
    pub unit_energies: Vec<f64>,
    pub factors: Vec<f64>,
}

impl RenormalizationReport {
    /// Geometric mean of the per-level factors.
    pub fn mean_factor(&self) -> f64 {
        let n = self.factors.len().max(1) as f64;
        (self.factors.iter().map(|f| f.ln()).sum::<f64>() / n).exp()
    }
}

pub fn renormalization_factors(
    spec: &FractalSpec,
    p: f64,
    pattern: BoundaryPattern,
    levels: std::ops::RangeInclusive<u32>,
    tol: f64,
    exec: Execution,
) -> Result<RenormalizationReport, SingularityError> {
    let lv: Vec<u32> = levels.collect();
    let energies = par::try_map(exec, &lv, |&n| {
        harmonic_energy_profile(spec, n, p, pattern, ConductanceRule::default(), tol).map(|(s, _)| s.energy)
    })?;
    let factors = energies.windows(2).map(|w| w[0] / w[1]).collect();
    Ok(RenormalizationReport { spec: spec.name.clone(), p, levels: lv, unit_energies: energies, factors })
}

/// How the scan sets per-level edge conductances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "factor")]
pub enum ScanConductance {
    Fixed(f64),
    /// Geometric mean of unit-conductance energy ratios over the scanned levels.
    Estimated,
}

pub fn concentration_scan(
    spec: &FractalSpec,
    p: f64,
    pattern: BoundaryPattern,
    levels: std::ops::RangeInclusive<u32>,
    conductance: ScanConductance,
    tol: f64,
    exec: Execution,
) -> Result<ConcentrationReport, SingularityError> {
    let factor = match conductance {
        ScanConductance::Fixed(f) => f,
        ScanConductance::Estimated => {
            let lo = (*levels.start()).max(1) - 1;
            renormalization_factors(spec, p, pattern, lo..=*levels.end(), tol, exec)?.mean_factor()
        }
    };
    let rule = ConductanceRule::per_level(factor);
    let lv: Vec<u32> = levels.collect();
    let rows = par::try_map(exec, &lv, |&n| {
        let (sol, cells) = harmonic_energy_profile(spec, n, p, pattern, rule, tol)?;
        let mu = vec![1.0; cells.len()];
        let (max_cell_ratio, gini, tv_distance) = concentration_statistics(&cells, &mu);
        Ok::<_, SingularityError>(ConcentrationRow { level: n, energy: sol.energy, max_cell_ratio, gini, tv_distance })
    })?;
    Ok(ConcentrationReport { spec: spec.name.clone(), p, pattern, conductance_factor: factor, rows })
}

/// Harmonic functions whose energy measures are combined into `Lambda`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "corner")]
pub enum DominantFamily {
    /// The single corner problem `h_i`; `Lambda` is then `Gamma<h_i>` itself.
    #[default]
    FirstCorner,
    /// One corner problem per boundary corner, weighted `2^-(i+1)`.
    AllCorners,
}

/// `Lambda = sum_i w_i Gamma<h_i>` over corner harmonic functions `h_i`.
pub fn corner_dominant_measure(
    spec: &FractalSpec,
    level: u32,
    p: f64,
    family_kind: DominantFamily,
    tol: f64,
) -> Result<MeasureVector, SingularityError> {
    let graph = build_graph(spec, level)?;
    let form = harmonic_form(&graph, p, ConductanceRule::default())?;
    let corners = match family_kind {
        DominantFamily::FirstCorner => 1,
        DominantFamily::AllCorners => match form.kind() {
            NodeKind::Junctions => form.boundary_nodes().len(),
            NodeKind::Cells => 1 << graph.spec().coord_dim(),
        },
    };
    let mut family = Vec::with_capacity(corners);
    for i in 0..corners {
        let boundary = boundary_values(&graph, &form, BoundaryPattern::Corner(i))?;
        family.push(solve_p_harmonic(&HarmonicProblem::new(&form, boundary, tol))?.values);
    }
    Ok(minimal_energy_dominant(&form, &family, &geometric_weights(corners))?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductDemoRow {
    pub level: u32,
    /// `tv(Lambda_X x mu_Y, mu_X x Lambda_Y)`.
    pub mutual_tv: f64,
    pub tv_lambda_x_vs_uniform: f64,
    pub tv_lambda_y_vs_uniform: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductDemoReport {
    pub spec_x: String,
    pub spec_y: String,
    pub p: f64,
    pub family: DominantFamily,
    pub rows: Vec<ProductDemoRow>,
}

fn normalized(w: &[f64]) -> Vec<f64> {
    let t: f64 = w.iter().sum();
    if t > 0.0 {
        w.iter().map(|x| x / t).collect()
    } else {
        vec![1.0 / w.len() as f64; w.len()]
    }
}

fn tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// The measures `Lambda_X x mu_Y` and `mu_X x Lambda_Y` on the product graph.
pub fn product_measures(
    product: &ApproximationGraph,
    spec_x: &FractalSpec,
    lambda_x: &[f64],
    lambda_y: &[f64],
) -> (MeasureVector, MeasureVector) {
    let level = product.level();
    let split = spec_x.factors.len();
    let a = normalized(lambda_x);
    let b = normalized(lambda_y);
    let (mx, my) = (1.0 / a.len() as f64, 1.0 / b.len() as f64);
    let spec_y = FractalSpec { name: String::new(), factors: product.spec().factors[split..].to_vec() };
    let mut left = vec![0.0; product.cell_count()];
    let mut right = vec![0.0; product.cell_count()];
    for c in 0..product.cell_count() {
        let xs: Vec<usize> = (0..split).map(|j| product.factor_cell(j, c)).collect();
        let ys: Vec<usize> = (split..product.spec().factors.len()).map(|j| product.factor_cell(j, c)).collect();
        let x = pack_product_index(spec_x, level, &xs);
        let y = pack_product_index(&spec_y, level, &ys);
        left[c] = a[x] * my;
        right[c] = mx * b[y];
    }
    (MeasureVector::new(level, left), MeasureVector::new(level, right))
}

pub fn product_singularity_demo(
    spec_x: &FractalSpec,
    spec_y: &FractalSpec,
    p: f64,
    levels: std::ops::RangeInclusive<u32>,
    family: DominantFamily,
    tol: f64,
    exec: Execution,
) -> Result<ProductDemoReport, SingularityError> {
    let product = product_spec(spec_x, spec_y)?;
    let lv: Vec<u32> = levels.collect();
    let rows = par::try_map(exec, &lv, |&n| {
        let lx = corner_dominant_measure(spec_x, n, p, family, tol)?;
        let ly = corner_dominant_measure(spec_y, n, p, family, tol)?;
        let graph = build_graph(&product, n)?;
        let (left, right) = product_measures(&graph, spec_x, &lx.weights, &ly.weights);
        let uniform = vec![1.0 / graph.cell_count() as f64; graph.cell_count()];
        Ok::<_, SingularityError>(ProductDemoRow {
            level: n,
            mutual_tv: tv(&left.weights, &right.weights),
            tv_lambda_x_vs_uniform: tv(&left.weights, &uniform),
            tv_lambda_y_vs_uniform: tv(&right.weights, &uniform),
        })
    })?;
    Ok(ProductDemoReport { spec_x: spec_x.name.clone(), spec_y: spec_y.name.clone(), p, family, rows })
}
