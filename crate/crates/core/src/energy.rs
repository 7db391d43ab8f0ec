//! Graph p-energies, their cell energy measures and product forms.
//!
//! Two kinds of networks carry an [`EnergyForm`]:
//!
//! * cell forms: nodes are the level-n cells, edges the cell adjacency, and
//!   each edge term is split evenly between its two endpoint cells;
//! * junction forms (finitely ramified specs only): nodes are cell corners,
//!   every cell contributes the complete graph on its corners, and each edge
//!   term belongs to the cell that owns it.
//!
//! In both cases the energy measure has total mass equal to the energy.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::EnergyError;
use crate::graph::{build_graph, ApproximationGraph, CellNetwork, MeasureVector};
use crate::par::{self, Execution};

/// Per-level edge conductance `factor^level` times a global constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConductanceRule {
    pub factor: f64,
    pub renormalization: f64,
}

impl Default for ConductanceRule {
    fn default() -> Self {
        Self { factor: 1.0, renormalization: 1.0 }
    }
}

impl ConductanceRule {
    /// `ratio^{-level (beta_ref - d_H)}` per level-n edge.
    pub fn from_beta(spec: &crate::spec::FractalSpec, beta_ref: f64) -> Self {
        let factor = (spec.denominator() as f64).powf(beta_ref - spec.hausdorff_dim());
        Self { factor, renormalization: 1.0 }
    }

    pub fn per_level(factor: f64) -> Self {
        Self { factor, renormalization: 1.0 }
    }

    pub fn conductance(&self, level: u32) -> f64 {
        self.factor.powi(level as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Cells,
    Junctions,
}

/// A graph p-energy `E(f) = renorm * sum_e c_e |f(a) - f(b)|^p`.
#[derive(Clone, Debug)]
pub struct EnergyForm {
    p: f64,
    level: u32,
    kind: NodeKind,
    node_count: usize,
    cell_count: usize,
    edges: Vec<(u32, u32)>,
    conductance: Vec<f64>,
    /// Owning cell of each edge (junction forms only).
    owner: Vec<u32>,
    renormalization: f64,
    node_adj: Vec<Vec<u32>>,
    /// Junction forms: corner nodes of each cell.
    cell_nodes: Vec<Vec<u32>>,
    /// Junction forms: integer node coordinates (units of `m^-level`).
    node_coords: Vec<Vec<i64>>,
    boundary: Vec<u32>,
}

/// Corners of the level-0 cell, in the order `FactorGeometry::corners` uses.
fn reference_corners(primitive: &crate::spec::Primitive) -> Vec<Vec<i64>> {
    let dim = primitive.dim;
    match primitive.shape {
        crate::spec::CellShape::Cube => (0..1usize << dim)
            .map(|mask| (0..dim).map(|d| ((mask >> d) & 1) as i64).collect())
            .collect(),
        crate::spec::CellShape::Simplex => (0..dim)
            .map(|j| (0..dim).map(|d| i64::from(d == j)).collect())
            .collect(),
    }
}

fn check_p(p: f64) -> Result<(), EnergyError> {
    if p > 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(EnergyError::BadExponent(p))
    }
}

impl EnergyForm {
    /// Cell form with unit conductances.
    pub fn on_cells(graph: &ApproximationGraph, p: f64) -> Result<Self, EnergyError> {
        Self::on_cells_with(graph, p, ConductanceRule::default())
    }

    pub fn on_cells_with(
        graph: &ApproximationGraph,
        p: f64,
        rule: ConductanceRule,
    ) -> Result<Self, EnergyError> {
        check_p(p)?;
        let edges = graph.edges();
        let c = rule.conductance(graph.level());
        let node_adj = (0..graph.cell_count()).map(|i| graph.neighbors(i).to_vec()).collect();
        Ok(Self {
            p,
            level: graph.level(),
            kind: NodeKind::Cells,
            node_count: graph.cell_count(),
            cell_count: graph.cell_count(),
            conductance: vec![c; edges.len()],
            edges,
            owner: Vec::new(),
            renormalization: rule.renormalization,
            node_adj,
            cell_nodes: Vec::new(),
            node_coords: Vec::new(),
            boundary: Vec::new(),
        })
    }

    /// Junction form on the corners of the level-n cells.
    pub fn on_junctions(
        graph: &ApproximationGraph,
        p: f64,
        rule: ConductanceRule,
    ) -> Result<Self, EnergyError> {
        check_p(p)?;
        let spec = graph.spec();
        if !spec.finitely_ramified() {
            return Err(EnergyError::NotFinitelyRamified(spec.name.clone()));
        }
        let geom = &graph.factors()[0];
        let mut index: HashMap<Vec<i64>, u32> = HashMap::new();
        let mut node_coords = Vec::new();
        let mut cell_nodes = Vec::with_capacity(graph.cell_count());
        for cell in 0..graph.cell_count() {
            let ids: Vec<u32> = geom
                .corners(cell)
                .into_iter()
                .map(|corner| {
                    *index.entry(corner.clone()).or_insert_with(|| {
                        node_coords.push(corner);
                        (node_coords.len() - 1) as u32
                    })
                })
                .collect();
            cell_nodes.push(ids);
        }
        let mut edges = Vec::new();
        let mut owner = Vec::new();
        for (cell, ids) in cell_nodes.iter().enumerate() {
            for i in 0..ids.len() {
                for j in i + 1..ids.len() {
                    edges.push((ids[i].min(ids[j]), ids[i].max(ids[j])));
                    owner.push(cell as u32);
                }
            }
        }
        let node_count = node_coords.len();
        let mut node_adj = vec![Vec::new(); node_count];
        for &(a, b) in &edges {
            node_adj[a as usize].push(b);
            node_adj[b as usize].push(a);
        }
        for l in node_adj.iter_mut() {
            l.sort_unstable();
            l.dedup();
        }
        // corners of the level-0 cell, in reference-corner order
        let scale = (spec.denominator() as i64).pow(graph.level());
        let boundary = reference_corners(&geom.primitive)
            .iter()
            .map(|c| {
                let scaled: Vec<i64> = c.iter().map(|x| x * scale).collect();
                index[&scaled]
            })
            .collect();
        let c = rule.conductance(graph.level());
        Ok(Self {
            p,
            level: graph.level(),
            kind: NodeKind::Junctions,
            node_count,
            cell_count: graph.cell_count(),
            conductance: vec![c; edges.len()],
            edges,
            owner,
            renormalization: rule.renormalization,
            node_adj,
            cell_nodes,
            node_coords,
            boundary,
        })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn kind(&self) -> NodeKind {
        self.kind
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn cell_count(&self) -> usize {
        self.cell_count
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn conductances(&self) -> &[f64] {
        &self.conductance
    }

    pub fn renormalization(&self) -> f64 {
        self.renormalization
    }

    pub fn node_neighbors(&self, node: usize) -> &[u32] {
        &self.node_adj[node]
    }

    /// Level-0 corner nodes (junction forms); empty for cell forms.
    pub fn boundary_nodes(&self) -> &[u32] {
        &self.boundary
    }

    pub fn node_coords(&self, node: usize) -> Option<&[i64]> {
        self.node_coords.get(node).map(Vec::as_slice)
    }

    /// Node carrying the given integer coordinates (junction forms).
    pub fn node_at(&self, coords: &[i64]) -> Option<usize> {
        self.node_coords.iter().position(|c| c == coords)
    }

    /// Corner nodes of a cell (junction forms); empty for cell forms.
    pub fn cell_nodes(&self, cell: usize) -> &[u32] {
        self.cell_nodes.get(cell).map(Vec::as_slice).unwrap_or(&[])
    }

    fn check(&self, f: &[f64]) -> Result<(), EnergyError> {
        if f.len() != self.node_count {
            return Err(EnergyError::GraphMismatch(format!(
                "function has {} values, form has {} nodes",
                f.len(),
                self.node_count
            )));
        }
        Ok(())
    }

    #[inline]
    fn edge_term(&self, e: usize, f: &[f64]) -> f64 {
        let (a, b) = self.edges[e];
        self.renormalization * self.conductance[e] * (f[a as usize] - f[b as usize]).abs().powf(self.p)
    }

    /// Returns `Err` only when `f` is not defined on this form's nodes.
    pub fn energy(&self, f: &[f64]) -> Result<f64, EnergyError> {
        self.check(f)?;
        Ok((0..self.edges.len()).map(|e| self.edge_term(e, f)).sum())
    }

    /// Cell-indexed energy measure of `f`.
    pub fn energy_measure(&self, f: &[f64]) -> Result<EnergyMeasure, EnergyError> {
        self.check(f)?;
        let mut mass = vec![0.0; self.cell_count];
        for e in 0..self.edges.len() {
            let t = self.edge_term(e, f);
            match self.kind {
                NodeKind::Cells => {
                    let (a, b) = self.edges[e];
                    mass[a as usize] += 0.5 * t;
                    mass[b as usize] += 0.5 * t;
                }
                NodeKind::Junctions => mass[self.owner[e] as usize] += t,
            }
        }
        Ok(EnergyMeasure { level: self.level, cell_mass: mass })
    }

    /// Euclidean gradient of `E` in the node values.
    pub fn gradient(&self, f: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            let d = f[a as usize] - f[b as usize];
            let g = self.renormalization * self.conductance[e] * self.p * d.abs().powf(self.p - 1.0) * d.signum();
            out[a as usize] += g;
            out[b as usize] -= g;
        }
    }

    /// Edge list `(neighbor, weight)` around a node, for local solves.
    pub fn weighted_neighbors(&self) -> Vec<Vec<(u32, f64)>> {
        let mut out = vec![Vec::new(); self.node_count];
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            let w = self.renormalization * self.conductance[e];
            out[a as usize].push((b, w));
            out[b as usize].push((a, w));
        }
        out
    }
}

/// Cell-indexed energy measure `Gamma<f>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyMeasure {
    pub level: u32,
    pub cell_mass: Vec<f64>,
}

impl EnergyMeasure {
    pub fn total(&self) -> f64 {
        self.cell_mass.iter().sum()
    }

    pub fn of_set(&self, cells: &[u32]) -> f64 {
        cells.iter().map(|&c| self.cell_mass[c as usize]).sum()
    }

    pub fn as_measure(&self) -> MeasureVector {
        MeasureVector::new(self.level, self.cell_mass.clone())
    }
}

pub fn energy(form: &EnergyForm, f: &[f64]) -> Result<f64, EnergyError> {
    form.energy(f)
}

pub fn energy_measure(form: &EnergyForm, f: &[f64]) -> Result<EnergyMeasure, EnergyError> {
    form.energy_measure(f)
}

/// Cartesian product of two cell forms on the product graph.
///
/// `E(u) = sum_x mu_X(x) E_Y(u(x,.)) + sum_y mu_Y(y) E_X(u(.,y))`.
#[derive(Clone, Debug)]
pub struct ProductEnergyForm {
    pub factor_x: EnergyForm,
    pub factor_y: EnergyForm,
    /// x- and y-cell of each product cell.
    split: Vec<(u32, u32)>,
    /// Product cell of `(x, y)` at `x * ny + y`.
    joined: Vec<u32>,
    /// King-move neighbors in the product graph.
    product_adj: Vec<Vec<u32>>,
}

impl ProductEnergyForm {
    /// Splits `spec` into its first factor and the rest and builds unit-conductance
    /// cell forms on both.
    pub fn from_spec(spec: &crate::spec::FractalSpec, level: u32, p: f64) -> Result<Self, EnergyError> {
        use crate::spec::{product_spec, FractalSpec};
        if spec.factors.len() < 2 {
            return Err(EnergyError::GraphMismatch(format!("`{}` is not a product", spec.name)));
        }
        let mismatch = |e: &dyn std::fmt::Display| EnergyError::GraphMismatch(e.to_string());
        let x = FractalSpec::primitive(spec.factors[0].clone());
        let mut y = FractalSpec::primitive(spec.factors[1].clone());
        for f in &spec.factors[2..] {
            y = product_spec(&y, &FractalSpec::primitive(f.clone())).map_err(|e| mismatch(&e))?;
        }
        let gx = build_graph(&x, level).map_err(|e| mismatch(&e))?;
        let gy = build_graph(&y, level).map_err(|e| mismatch(&e))?;
        let g = build_graph(spec, level).map_err(|e| mismatch(&e))?;
        Self::new(EnergyForm::on_cells(&gx, p)?, EnergyForm::on_cells(&gy, p)?, &gx, &gy, &g)
    }

    pub fn new(
        factor_x: EnergyForm,
        factor_y: EnergyForm,
        x_graph: &ApproximationGraph,
        y_graph: &ApproximationGraph,
        graph: &ApproximationGraph,
    ) -> Result<Self, EnergyError> {
        if factor_x.kind != NodeKind::Cells || factor_y.kind != NodeKind::Cells {
            return Err(EnergyError::GraphMismatch("product factors must be cell forms".into()));
        }
        if factor_x.level != factor_y.level || factor_x.level != graph.level() {
            return Err(EnergyError::GraphMismatch("factor levels differ".into()));
        }
        if factor_x.p != factor_y.p {
            return Err(EnergyError::GraphMismatch("factor exponents differ".into()));
        }
        let nx_f = x_graph.spec().factors.len();
        let ny_f = y_graph.spec().factors.len();
        if graph.spec().factors.len() != nx_f + ny_f
            || graph.spec().factors[..nx_f] != x_graph.spec().factors[..]
            || graph.spec().factors[nx_f..] != y_graph.spec().factors[..]
            || x_graph.cell_count() != factor_x.node_count
            || y_graph.cell_count() != factor_y.node_count
        {
            return Err(EnergyError::GraphMismatch("product graph does not match the factors".into()));
        }
        let level = graph.level();
        let ny = y_graph.cell_count();
        let mut split = Vec::with_capacity(graph.cell_count());
        let mut joined = vec![0u32; graph.cell_count()];
        for c in 0..graph.cell_count() {
            let xs: Vec<usize> = (0..nx_f).map(|j| graph.factor_cell(j, c)).collect();
            let ys: Vec<usize> = (nx_f..nx_f + ny_f).map(|j| graph.factor_cell(j, c)).collect();
            let x = crate::graph::pack_product_index(x_graph.spec(), level, &xs);
            let y = crate::graph::pack_product_index(y_graph.spec(), level, &ys);
            split.push((x as u32, y as u32));
            joined[x * ny + y] = c as u32;
        }
        let product_adj = (0..graph.cell_count()).map(|c| graph.neighbors(c).to_vec()).collect();
        Ok(Self { factor_x, factor_y, split, joined, product_adj })
    }

    pub fn p(&self) -> f64 {
        self.factor_x.p
    }

    pub fn cell_count(&self) -> usize {
        self.split.len()
    }

    pub fn split(&self, cell: usize) -> (usize, usize) {
        let (x, y) = self.split[cell];
        (x as usize, y as usize)
    }

    pub fn cell_of(&self, x: usize, y: usize) -> usize {
        self.joined[x * self.factor_y.node_count + y] as usize
    }

    fn check(&self, u: &[f64]) -> Result<(), EnergyError> {
        if u.len() != self.cell_count() {
            return Err(EnergyError::GraphMismatch(format!(
                "function has {} values, product graph has {} cells",
                u.len(),
                self.cell_count()
            )));
        }
        Ok(())
    }

    /// Section `u(x, .)`.
    pub fn section_at_x(&self, u: &[f64], x: usize) -> Vec<f64> {
        (0..self.factor_y.node_count).map(|y| u[self.cell_of(x, y)]).collect()
    }

    /// Section `u(., y)`.
    pub fn section_at_y(&self, u: &[f64], y: usize) -> Vec<f64> {
        (0..self.factor_x.node_count).map(|x| u[self.cell_of(x, y)]).collect()
    }

    /// Product-cell energy masses from the slice decomposition.
    pub fn cell_masses(&self, u: &[f64]) -> Result<Vec<f64>, EnergyError> {
        self.check(u)?;
        let nx = self.factor_x.node_count;
        let ny = self.factor_y.node_count;
        let (mu_x, mu_y) = (1.0 / nx as f64, 1.0 / ny as f64);
        let mut mass = vec![0.0; u.len()];
        for x in 0..nx {
            let gy = self.factor_y.energy_measure(&self.section_at_x(u, x))?;
            for (y, m) in gy.cell_mass.iter().enumerate() {
                mass[self.cell_of(x, y)] += mu_x * m;
            }
        }
        for y in 0..ny {
            let gx = self.factor_x.energy_measure(&self.section_at_y(u, y))?;
            for (x, m) in gx.cell_mass.iter().enumerate() {
                mass[self.cell_of(x, y)] += mu_y * m;
            }
        }
        Ok(mass)
    }
}

/// Two-term slice sum with factor cell measures as weights.
pub fn product_energy(form: &ProductEnergyForm, u: &[f64]) -> Result<f64, EnergyError> {
    form.check(u)?;
    let nx = form.factor_x.node_count;
    let ny = form.factor_y.node_count;
    let mut total = 0.0;
    for x in 0..nx {
        total += form.factor_y.energy(&form.section_at_x(u, x))? / nx as f64;
    }
    for y in 0..ny {
        total += form.factor_x.energy(&form.section_at_y(u, y))? / ny as f64;
    }
    Ok(total)
}

/// `Gamma<u>(Omega)` through the slices `Omega_x` and `Omega^y`.
pub fn product_energy_measure(
    form: &ProductEnergyForm,
    u: &[f64],
    cells: &[u32],
) -> Result<f64, EnergyError> {
    form.check(u)?;
    let nx = form.factor_x.node_count;
    let ny = form.factor_y.node_count;
    let mut in_set = vec![false; form.cell_count()];
    for &c in cells {
        let c = c as usize;
        if c >= in_set.len() {
            return Err(EnergyError::GraphMismatch(format!("cell {c} not in product graph")));
        }
        in_set[c] = true;
    }
    let mut total = 0.0;
    for x in 0..nx {
        let slice: Vec<u32> =
            (0..ny as u32).filter(|&y| in_set[form.cell_of(x, y as usize)]).collect();
        if !slice.is_empty() {
            total += form.factor_y.energy_measure(&form.section_at_x(u, x))?.of_set(&slice) / nx as f64;
        }
    }
    for y in 0..ny {
        let slice: Vec<u32> =
            (0..nx as u32).filter(|&x| in_set[form.cell_of(x as usize, y)]).collect();
        if !slice.is_empty() {
            total += form.factor_x.energy_measure(&form.section_at_y(u, y))?.of_set(&slice) / ny as f64;
        }
    }
    Ok(total)
}

/// Common surface of [`EnergyForm`] and [`ProductEnergyForm`] for the axiom suite.
pub trait EnergyModel: Sync {
    fn exponent(&self) -> f64;
    /// Length of the function vectors.
    fn dof(&self) -> usize;
    fn cells(&self) -> usize;
    fn masses(&self, f: &[f64]) -> Vec<f64>;
    fn total(&self, f: &[f64]) -> f64;
    /// Nodes on which `f` must be constant for `Gamma<f>(A) = 0`.
    fn locality_nodes(&self, cells: &[bool]) -> Vec<usize>;
}

impl EnergyModel for EnergyForm {
    fn exponent(&self) -> f64 {
        self.p
    }

    fn dof(&self) -> usize {
        self.node_count
    }

    fn cells(&self) -> usize {
        self.cell_count
    }

    fn masses(&self, f: &[f64]) -> Vec<f64> {
        self.energy_measure(f).expect("sized").cell_mass
    }

    fn total(&self, f: &[f64]) -> f64 {
        self.energy(f).expect("sized")
    }

    fn locality_nodes(&self, cells: &[bool]) -> Vec<usize> {
        let mut keep = vec![false; self.node_count];
        for (c, &inside) in cells.iter().enumerate() {
            if !inside {
                continue;
            }
            match self.kind {
                NodeKind::Cells => {
                    keep[c] = true;
                    for &v in &self.node_adj[c] {
                        keep[v as usize] = true;
                    }
                }
                NodeKind::Junctions => {
                    for &v in &self.cell_nodes[c] {
                        keep[v as usize] = true;
                    }
                }
            }
        }
        (0..self.node_count).filter(|&v| keep[v]).collect()
    }
}

impl EnergyModel for ProductEnergyForm {
    fn exponent(&self) -> f64 {
        self.p()
    }

    fn dof(&self) -> usize {
        self.cell_count()
    }

    fn cells(&self) -> usize {
        self.cell_count()
    }

    fn masses(&self, f: &[f64]) -> Vec<f64> {
        self.cell_masses(f).expect("sized")
    }

    fn total(&self, f: &[f64]) -> f64 {
        product_energy(self, f).expect("sized")
    }

    fn locality_nodes(&self, cells: &[bool]) -> Vec<usize> {
        let mut keep = vec![false; self.cell_count()];
        for (c, &inside) in cells.iter().enumerate() {
            if inside {
                keep[c] = true;
                for &v in &self.product_adj[c] {
                    keep[v as usize] = true;
                }
            }
        }
        (0..keep.len()).filter(|&v| keep[v]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axiom {
    Homogeneity,
    TriangleInequality,
    Contractivity,
    StrongLocality,
    MassConservation,
    LowerSemicontinuity,
}

impl Axiom {
    pub const ALL: [Axiom; 6] = [
        Axiom::Homogeneity,
        Axiom::TriangleInequality,
        Axiom::Contractivity,
        Axiom::StrongLocality,
        Axiom::MassConservation,
        Axiom::LowerSemicontinuity,
    ];

    fn id(self) -> u64 {
        self as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxiomResult {
    pub axiom: Axiom,
    pub samples: usize,
    pub violations: usize,
    pub worst_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub tol: f64,
    pub seed: u64,
    pub results: Vec<AxiomResult>,
}

impl AxiomReport {
    pub fn total_violations(&self) -> usize {
        self.results.iter().map(|r| r.violations).sum()
    }

    pub fn get(&self, axiom: Axiom) -> Option<&AxiomResult> {
        self.results.iter().find(|r| r.axiom == axiom)
    }
}

/// The 1-Lipschitz maps with `phi(0) = 0` used by the contractivity check.
pub fn lipschitz_family(index: usize) -> fn(f64) -> f64 {
    const FAMILY: [fn(f64) -> f64; 3] = [
        |x| x.clamp(0.0, 0.5),
        f64::abs,
        |x| x.signum() * (x.abs() - 0.25).max(0.0),
    ];
    FAMILY[index % FAMILY.len()]
}

fn sample_rng(seed: u64, axiom: Axiom, sample: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (axiom.id() << 48) ^ (sample as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn random_function(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn random_cells(rng: &mut ChaCha8Rng, n: usize) -> Vec<bool> {
    let density: f64 = rng.gen_range(0.05..0.6);
    let mut v: Vec<bool> = (0..n).map(|_| rng.gen_bool(density)).collect();
    let forced: usize = rng.gen_range(0..n);
    v[forced] = true;
    v
}

fn set_mass(masses: &[f64], set: &[bool]) -> f64 {
    masses.iter().zip(set).filter(|(_, &s)| s).map(|(m, _)| m).sum()
}

/// Residual of one sample; positive values beyond `tol` are violations.
fn axiom_residual(model: &dyn EnergyModel, axiom: Axiom, rng: &mut ChaCha8Rng, sample: usize) -> f64 {
    let n = model.dof();
    let p = model.exponent();
    let f = random_function(rng, n);
    match axiom {
        Axiom::Homogeneity => {
            let lambda = if sample == 0 { -2.0 } else { rng.gen_range(-3.0..3.0) };
            let scaled: Vec<f64> = f.iter().map(|x| lambda * x).collect();
            let a = model.masses(&scaled);
            let b = model.masses(&f);
            let k = lambda.abs().powf(p);
            let scale = 1.0 + k * b.iter().sum::<f64>();
            a.iter().zip(&b).map(|(x, y)| (x - k * y).abs()).fold(0.0, f64::max) / scale
        }
        Axiom::TriangleInequality => {
            let g = random_function(rng, n);
            let set = random_cells(rng, model.cells());
            let sum: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a + b).collect();
            let lhs = set_mass(&model.masses(&sum), &set).powf(1.0 / p);
            let rhs = set_mass(&model.masses(&f), &set).powf(1.0 / p)
                + set_mass(&model.masses(&g), &set).powf(1.0 / p);
            (lhs - rhs) / (1.0 + rhs)
        }
        Axiom::Contractivity => {
            let phi = lipschitz_family(sample);
            let mapped: Vec<f64> = f.iter().map(|&x| phi(x)).collect();
            let a = model.masses(&mapped);
            let b = model.masses(&f);
            a.iter().zip(&b).map(|(x, y)| x - y).fold(f64::NEG_INFINITY, f64::max)
                / (1.0 + b.iter().sum::<f64>())
        }
        Axiom::StrongLocality => {
            let set = random_cells(rng, model.cells());
            let c: f64 = rng.gen_range(-1.0..1.0);
            let mut g = f;
            for v in model.locality_nodes(&set) {
                g[v] = c;
            }
            set_mass(&model.masses(&g), &set)
        }
        Axiom::MassConservation => {
            let total = model.total(&f);
            (model.masses(&f).iter().sum::<f64>() - total).abs() / (1.0 + total)
        }
        Axiom::LowerSemicontinuity => {
            let g = random_function(rng, n);
            let set = random_cells(rng, model.cells());
            let base = set_mass(&model.masses(&f), &set).powf(1.0 / p);
            let dir = set_mass(&model.masses(&g), &set).powf(1.0 / p);
            let mut worst: f64 = f64::NEG_INFINITY;
            for k in 1..=20 {
                let delta = 0.5f64.powi(k);
                let moved: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a + delta * b).collect();
                let val = set_mass(&model.masses(&moved), &set).powf(1.0 / p);
                worst = worst.max(((val - base).abs() - delta * dir) / (1.0 + base));
            }
            worst
        }
    }
}

/// Runs every axiom over `samples` seeded draws.
pub fn axiom_suite(
    model: &dyn EnergyModel,
    samples: usize,
    seed: u64,
    tol: f64,
    exec: Execution,
) -> AxiomReport {
    let results = Axiom::ALL
        .iter()
        .map(|&axiom| {
            let idx: Vec<usize> = (0..samples).collect();
            let residuals = par::map(exec, &idx, |&s| {
                let mut rng = sample_rng(seed, axiom, s);
                axiom_residual(model, axiom, &mut rng, s)
            });
            AxiomResult {
                axiom,
                samples,
                violations: residuals.iter().filter(|&&r| r > tol).count(),
                worst_residual: residuals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();
    AxiomReport { tol, seed, results }
}

/// Weights `2^-(i+1)` for a family of `k` functions.
pub fn geometric_weights(k: usize) -> Vec<f64> {
    (0..k).map(|i| 0.5f64.powi(i as i32 + 1)).collect()
}

/// `Lambda = sum_i w_i Gamma<f_i>`, dominating every member's energy measure.
pub fn minimal_energy_dominant(
    form: &EnergyForm,
    family: &[Vec<f64>],
    weights: &[f64],
) -> Result<MeasureVector, EnergyError> {
    if family.is_empty() {
        return Err(EnergyError::EmptyFamily);
    }
    if weights.len() != family.len() || weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(EnergyError::GraphMismatch("need one positive weight per function".into()));
    }
    let mut lambda = vec![0.0; form.cell_count()];
    for (f, w) in family.iter().zip(weights) {
        for (l, m) in lambda.iter_mut().zip(form.energy_measure(f)?.cell_mass) {
            *l += w * m;
        }
    }
    Ok(MeasureVector::new(form.level(), lambda))
}

/// Whether `gamma << lambda` cellwise: every charged cell of `gamma` is charged by `lambda`.
pub fn is_dominated(gamma: &[f64], lambda: &MeasureVector) -> bool {
    gamma.iter().zip(&lambda.weights).all(|(&g, &l)| g <= 0.0 || l > 0.0)
}

/// Korevaar-Schoen type energy: max over radii of
/// `sum_x nu(x) avg_{y in B(x,r)} |f(x) - f(y)|^p / nu(B(x,r))`.
pub fn ks_energy(
    graph: &ApproximationGraph,
    measure: &MeasureVector,
    f: &[f64],
    p: f64,
    radii: &[f64],
) -> Result<f64, EnergyError> {
    if f.len() != graph.cell_count() || measure.weights.len() != graph.cell_count() {
        return Err(EnergyError::GraphMismatch("function or measure size".into()));
    }
    let mut best: f64 = 0.0;
    for &r in radii {
        let mut total = 0.0;
        for x in 0..graph.cell_count() {
            let ball = crate::graph::metric_ball(graph, x, r);
            let vb = measure.mass_of(&ball);
            if vb <= 0.0 {
                return Err(EnergyError::EmptyBall(x));
            }
            let inner: f64 = ball
                .iter()
                .map(|&y| measure.weights[y as usize] * (f[x] - f[y as usize]).abs().powf(p))
                .sum();
            total += measure.weights[x] * inner / vb;
        }
        best = best.max(total);
    }
    Ok(best)
}

/// Sampled lower estimate of the Poincare constant
/// `int_B |f - f_B|^p dmu <= C r^beta Gamma<f>(sigma B)` over uniform measure.
pub fn poincare_constant(
    model: &dyn EnergyModel,
    graph: &ApproximationGraph,
    beta: f64,
    sigma: f64,
    samples: usize,
    seed: u64,
) -> f64 {
    assert_eq!(model.cells(), graph.cell_count());
    assert_eq!(model.dof(), graph.cell_count(), "Poincare estimates need cell-valued functions");
    let p = model.exponent();
    let mu = 1.0 / graph.cell_count() as f64;
    let mut radii = Vec::new();
    let mut r = graph.cell_diameter();
    while r <= graph.diameter() {
        radii.push(r);
        r *= 2.0;
    }
    let dim = graph.spec().coord_dim();
    let mut best: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stride = (graph.cell_count() / 16).max(1);
    for _ in 0..samples {
        // smooth test functions: random affine plus quadratic in the centers
        let a: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f: Vec<f64> = (0..graph.cell_count())
            .map(|c| {
                graph.center(c).iter().zip(&a).zip(&q).map(|((x, a), q)| a * x + q * x * x).sum()
            })
            .collect();
        let masses = model.masses(&f);
        for x in (0..graph.cell_count()).step_by(stride) {
            for &r in &radii {
                let ball = crate::graph::metric_ball(graph, x, r);
                let mean: f64 = ball.iter().map(|&c| f[c as usize]).sum::<f64>() / ball.len() as f64;
                let lhs: f64 = ball.iter().map(|&c| mu * (f[c as usize] - mean).abs().powf(p)).sum();
                let big = crate::graph::metric_ball(graph, x, sigma * r);
                let rhs: f64 = big.iter().map(|&c| masses[c as usize]).sum::<f64>() * r.powf(beta);
                if rhs > 0.0 {
                    best = best.max(lhs / rhs);
                }
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use crate::spec::FractalSpec;

    #[test]
    fn constant_has_zero_energy() {
        let g = build_graph(&FractalSpec::carpet(), 2).unwrap();
        let form = EnergyForm::on_cells(&g, 2.0).unwrap();
        let f = vec![3.5; g.cell_count()];
        assert_eq!(form.energy(&f).unwrap(), 0.0);
        assert!(form.energy_measure(&f).unwrap().cell_mass.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn interval_ramp_on_junctions() {
        let g = build_graph(&FractalSpec::interval(), 3).unwrap();
        let form = EnergyForm::on_junctions(&g, 2.0, ConductanceRule::default()).unwrap();
        assert_eq!(form.node_count(), 9);
        let f: Vec<f64> = (0..9).map(|v| form.node_coords(v).unwrap()[0] as f64 / 8.0).collect();
        assert!((form.energy(&f).unwrap() - 1.0 / 8.0).abs() < 1e-15);
        let m = form.energy_measure(&f).unwrap();
        for x in m.cell_mass {
            assert!((x - 1.0 / 64.0).abs() < 1e-15);
        }
    }

    #[test]
    fn interval_ramp_on_cells_splits_edges() {
        let g = build_graph(&FractalSpec::interval(), 2).unwrap();
        let form = EnergyForm::on_cells(&g, 2.0).unwrap();
        let f = [0.0, 0.25, 0.5, 0.75];
        let m = form.energy_measure(&f).unwrap();
        let e = 1.0 / 16.0;
        assert_eq!(m.cell_mass, vec![e / 2.0, e, e, e / 2.0]);
        assert!((m.total() - form.energy(&f).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn homogeneity_exact_for_minus_two() {
        let g = build_graph(&FractalSpec::gasket(), 2).unwrap();
        let form = EnergyForm::on_cells(&g, 2.0).unwrap();
        let f: Vec<f64> = (0..9).map(|i| (i * i) as f64 * 0.1).collect();
        let scaled: Vec<f64> = f.iter().map(|x| -2.0 * x).collect();
        let a = form.energy_measure(&f).unwrap();
        let b = form.energy_measure(&scaled).unwrap();
        for (x, y) in a.cell_mass.iter().zip(&b.cell_mass) {
            assert_eq!(4.0 * x, *y);
        }
    }

    #[test]
    fn locality_support() {
        let g = build_graph(&FractalSpec::interval(), 3).unwrap();
        let form = EnergyForm::on_cells(&g, 2.0).unwrap();
        let mut f: Vec<f64> = (0..8).map(|i| i as f64).collect();
        // one cell set, f constant on it and its neighbors
        f[2] = 1.0;
        f[3] = 1.0;
        f[4] = 1.0;
        let m = form.energy_measure(&f).unwrap();
        assert_eq!(m.cell_mass[3], 0.0);
        assert_eq!(m.cell_mass[2], 0.0);
        assert!(m.cell_mass[1] > 0.0);
    }

    #[test]
    fn dominant_measure_of_single_function() {
        let g = build_graph(&FractalSpec::carpet(), 1).unwrap();
        let form = EnergyForm::on_cells(&g, 2.0).unwrap();
        let f: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let lam = minimal_energy_dominant(&form, &[f.clone()], &[1.0]).unwrap();
        assert_eq!(lam.weights, form.energy_measure(&f).unwrap().cell_mass);
        assert!(matches!(minimal_energy_dominant(&form, &[], &[]), Err(EnergyError::EmptyFamily)));
    }

    #[test]
    fn junctions_need_finite_ramification() {
        let g = build_graph(&FractalSpec::carpet(), 1).unwrap();
        assert!(matches!(
            EnergyForm::on_junctions(&g, 2.0, ConductanceRule::default()),
            Err(EnergyError::NotFinitelyRamified(_))
        ));
    }

    #[test]
    fn ks_half_indicator_by_hand() {
        // N = 4, f = 1 on the left half, r = cell diameter:
        // balls are {k-1, k, k+1} with nu = 1/4 per cell.
        let g = build_graph(&FractalSpec::interval(), 2).unwrap();
        let nu = MeasureVector::uniform(&g);
        let f = [1.0, 1.0, 0.0, 0.0];
        let v = ks_energy(&g, &nu, &f, 2.0, &[0.25]).unwrap();
        // x = 1 and x = 2 each see one differing neighbor in a 3-cell ball
        let expect = 2.0 * 0.25 * 0.25 / 0.75;
        assert!((v - expect).abs() < 1e-15);
        assert_eq!(ks_energy(&g, &nu, &[2.0; 4], 2.0, &[0.25]).unwrap(), 0.0);
    }
}
