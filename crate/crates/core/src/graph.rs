//! Level-n cell graphs of a [`FractalSpec`].
//!
//! Cells are indexed by their address word read as a base-`|alphabet|`
//! number, so index order is lexicographic word order. Adjacency is decided
//! on integer coordinates: cube cells are boxes `[b, b+1]^d` in units of
//! `m^-n`, simplex cells have corners `b + e_j`.

use std::collections::HashMap;
use std::ops::Range;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::GraphError;
use crate::spec::{CellShape, FractalSpec, Primitive};

pub const DEFAULT_CELL_CAP: u64 = 10_000_000;

/// Relative slack used when comparing center distances to radii.
const METRIC_SLACK: f64 = 1e-9;

/// Finite word over the alphabet: the composition `Phi_{w_1} o ... o Phi_{w_n}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellAddress {
    pub word: Vec<u32>,
}

impl CellAddress {
    pub fn new(word: Vec<u32>) -> Self {
        Self { word }
    }

    pub fn level(&self) -> u32 {
        self.word.len() as u32
    }

    pub fn from_index(mut index: usize, level: u32, alphabet: usize) -> Self {
        let mut word = vec![0u32; level as usize];
        for slot in word.iter_mut().rev() {
            *slot = (index % alphabet) as u32;
            index /= alphabet;
        }
        Self { word }
    }

    pub fn index(&self, alphabet: usize) -> Result<usize, GraphError> {
        self.word.iter().try_fold(0usize, |acc, &l| {
            if (l as usize) < alphabet {
                Ok(acc * alphabet + l as usize)
            } else {
                Err(GraphError::BadAddress(format!("letter {l} >= {alphabet}")))
            }
        })
    }
}

/// Per-factor cell data: integer base points and closed-cell adjacency.
#[derive(Clone, Debug)]
pub struct FactorGeometry {
    pub primitive: Primitive,
    pub cell_count: usize,
    /// `cell_count * dim` integer base coordinates in units of `m^-level`.
    pub bases: Vec<i64>,
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
}

impl FactorGeometry {
    fn build(primitive: &Primitive, level: u32) -> Self {
        let dim = primitive.dim;
        let k = primitive.alphabet_size();
        let m = primitive.denominator as i64;
        let mut bases: Vec<i64> = vec![0; dim];
        for _ in 0..level {
            let mut next = Vec::with_capacity(bases.len() * k);
            for parent in bases.chunks(dim) {
                for t in &primitive.digits {
                    next.extend(parent.iter().zip(t).map(|(b, d)| m * b + d));
                }
            }
            bases = next;
        }
        let cell_count = bases.len() / dim;
        let side = (m as u64).pow(level) as i64 + 2;
        let key = |c: &[i64]| -> u64 {
            c.iter().fold(0u64, |acc, &x| acc * side as u64 + (x + 1) as u64)
        };

        let mut lists: Vec<Vec<u32>> = vec![Vec::new(); cell_count];
        match primitive.shape {
            CellShape::Cube => {
                let lookup: HashMap<u64, u32> = bases
                    .chunks(dim)
                    .enumerate()
                    .map(|(i, c)| (key(c), i as u32))
                    .collect();
                let offsets_3d: Vec<Vec<i64>> = (0..3usize.pow(dim as u32))
                    .map(|mut code| {
                        (0..dim)
                            .map(|_| {
                                let d = (code % 3) as i64 - 1;
                                code /= 3;
                                d
                            })
                            .collect::<Vec<i64>>()
                    })
                    .filter(|o| o.iter().any(|&x| x != 0))
                    .collect();
                let mut probe = vec![0i64; dim];
                for (i, c) in bases.chunks(dim).enumerate() {
                    for o in &offsets_3d {
                        for d in 0..dim {
                            probe[d] = c[d] + o[d];
                        }
                        if probe.iter().any(|&x| x < 0 || x >= side - 2) {
                            continue;
                        }
                        if let Some(&j) = lookup.get(&key(&probe)) {
                            lists[i].push(j);
                        }
                    }
                }
            }
            CellShape::Simplex => {
                let mut by_corner: HashMap<u64, Vec<u32>> = HashMap::new();
                let mut corner = vec![0i64; dim];
                for (i, c) in bases.chunks(dim).enumerate() {
                    for j in 0..dim {
                        corner.copy_from_slice(c);
                        corner[j] += 1;
                        by_corner.entry(key(&corner)).or_default().push(i as u32);
                    }
                }
                for cells in by_corner.values() {
                    for &a in cells {
                        for &b in cells {
                            if a != b {
                                lists[a as usize].push(b);
                            }
                        }
                    }
                }
            }
        }
        let (offsets, neighbors) = to_csr(lists);
        Self { primitive: primitive.clone(), cell_count, bases, offsets, neighbors }
    }

    pub fn neighbors(&self, cell: usize) -> &[u32] {
        &self.neighbors[self.offsets[cell]..self.offsets[cell + 1]]
    }

    pub fn base(&self, cell: usize) -> &[i64] {
        let d = self.primitive.dim;
        &self.bases[cell * d..(cell + 1) * d]
    }

    /// Integer corners of a cell (same units as the bases).
    pub fn corners(&self, cell: usize) -> Vec<Vec<i64>> {
        let b = self.base(cell);
        let dim = self.primitive.dim;
        match self.primitive.shape {
            CellShape::Cube => (0..1usize << dim)
                .map(|mask| (0..dim).map(|d| b[d] + ((mask >> d) & 1) as i64).collect())
                .collect(),
            CellShape::Simplex => (0..dim)
                .map(|j| {
                    let mut c = b.to_vec();
                    c[j] += 1;
                    c
                })
                .collect(),
        }
    }
}

fn to_csr(mut lists: Vec<Vec<u32>>) -> (Vec<usize>, Vec<u32>) {
    let mut offsets = Vec::with_capacity(lists.len() + 1);
    let mut neighbors = Vec::new();
    offsets.push(0);
    for l in lists.iter_mut() {
        l.sort_unstable();
        l.dedup();
        neighbors.extend_from_slice(l);
        offsets.push(neighbors.len());
    }
    (offsets, neighbors)
}

/// Anything with a finite cell set and a symmetric adjacency relation.
pub trait CellNetwork: Sync {
    fn cell_count(&self) -> usize;
    fn neighbors(&self, cell: usize) -> &[u32];

    fn edge_count(&self) -> usize {
        (0..self.cell_count()).map(|c| self.neighbors(c).len()).sum::<usize>() / 2
    }

    fn max_degree(&self) -> usize {
        (0..self.cell_count()).map(|c| self.neighbors(c).len()).max().unwrap_or(0)
    }

    /// Undirected edges `(a, b)` with `a < b`, sorted.
    fn edges(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for a in 0..self.cell_count() {
            for &b in self.neighbors(a) {
                if (a as u32) < b {
                    out.push((a as u32, b));
                }
            }
        }
        out
    }
}

/// A plain adjacency-list network, for hand-built instances.
#[derive(Clone, Debug)]
pub struct AdjacencyGraph {
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
}

impl AdjacencyGraph {
    pub fn from_edges(cells: usize, edges: &[(usize, usize)]) -> Self {
        let mut lists = vec![Vec::new(); cells];
        for &(a, b) in edges {
            assert!(a < cells && b < cells && a != b, "bad edge ({a}, {b})");
            lists[a].push(b as u32);
            lists[b].push(a as u32);
        }
        let (offsets, neighbors) = to_csr(lists);
        Self { offsets, neighbors }
    }

    /// Disjoint union; cells of `other` are shifted by `self.cell_count()`.
    pub fn disjoint_union(&self, other: &impl CellNetwork) -> Self {
        let shift = self.cell_count();
        let mut edges: Vec<(usize, usize)> =
            self.edges().into_iter().map(|(a, b)| (a as usize, b as usize)).collect();
        edges.extend(other.edges().into_iter().map(|(a, b)| (a as usize + shift, b as usize + shift)));
        Self::from_edges(shift + other.cell_count(), &edges)
    }
}

impl CellNetwork for AdjacencyGraph {
    fn cell_count(&self) -> usize {
        self.offsets.len() - 1
    }

    fn neighbors(&self, cell: usize) -> &[u32] {
        &self.neighbors[self.offsets[cell]..self.offsets[cell + 1]]
    }
}

/// Level-n cell graph: the discrete stand-in for the space and its covering.
#[derive(Clone, Debug)]
pub struct ApproximationGraph {
    spec: FractalSpec,
    level: u32,
    cell_count: usize,
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
    /// `cell_count * coord_dim` reference-geometry centers.
    centers: Vec<f64>,
    factors: Vec<FactorGeometry>,
    /// For products: factor cell index per product cell, one vector per factor.
    factor_cells: Vec<Vec<u32>>,
}

/// Build-time options.
#[derive(Clone, Copy, Debug)]
pub struct BuildOptions {
    pub cell_cap: u64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { cell_cap: DEFAULT_CELL_CAP }
    }
}

pub fn cell_count_for(spec: &FractalSpec, level: u32) -> u128 {
    (spec.alphabet_size() as u128).saturating_pow(level)
}

/// Builds the level-`level` graph with the default cell cap.
pub fn build_graph(spec: &FractalSpec, level: u32) -> Result<ApproximationGraph, GraphError> {
    build_graph_with(spec, level, BuildOptions::default())
}

pub fn build_graph_with(
    spec: &FractalSpec,
    level: u32,
    options: BuildOptions,
) -> Result<ApproximationGraph, GraphError> {
    let cells = cell_count_for(spec, level);
    if cells > options.cell_cap as u128 {
        return Err(GraphError::CapExceeded { level, cells, cap: options.cell_cap });
    }
    for f in &spec.factors {
        // re-validate in case the spec was assembled by hand
        Primitive::new(&f.name, f.denominator, f.shape, f.digits.clone())?;
    }
    let factors: Vec<FactorGeometry> =
        spec.factors.iter().map(|f| FactorGeometry::build(f, level)).collect();
    let graph = assemble(spec.clone(), level, factors, None);
    Ok(graph)
}

fn assemble(
    spec: FractalSpec,
    level: u32,
    factors: Vec<FactorGeometry>,
    adjacency: Option<(Vec<usize>, Vec<u32>)>,
) -> ApproximationGraph {
    let cell_count: usize = factors.iter().map(|f| f.cell_count).product();
    let factor_cells = if factors.len() > 1 {
        product_factor_cells(&spec, level, cell_count)
    } else {
        Vec::new()
    };
    let (offsets, neighbors) = match adjacency {
        Some(adj) => adj,
        None if factors.len() == 1 => (factors[0].offsets.clone(), factors[0].neighbors.clone()),
        None => product_adjacency(&spec, level, &factors, &factor_cells),
    };
    let coord_dim = spec.coord_dim();
    let mut centers = Vec::with_capacity(cell_count * coord_dim);
    for c in 0..cell_count {
        for (j, f) in factors.iter().enumerate() {
            let fc = if factors.len() > 1 { factor_cells[j][c] as usize } else { c };
            push_center(f, fc, level, &mut centers);
        }
    }
    ApproximationGraph { spec, level, cell_count, offsets, neighbors, centers, factors, factor_cells }
}

fn push_center(f: &FactorGeometry, cell: usize, level: u32, out: &mut Vec<f64>) {
    let m = f.primitive.denominator as f64;
    let scale = m.powi(level as i32);
    let shift = match f.primitive.shape {
        CellShape::Cube => 0.5,
        CellShape::Simplex => 1.0 / f.primitive.dim as f64,
    };
    out.extend(f.base(cell).iter().map(|&b| (b as f64 + shift) / scale));
}

fn product_factor_cells(spec: &FractalSpec, level: u32, cell_count: usize) -> Vec<Vec<u32>> {
    let nf = spec.factors.len();
    let k = spec.alphabet_size();
    let mut out = vec![vec![0u32; cell_count]; nf];
    let mut letters = vec![0usize; nf];
    for c in 0..cell_count {
        let word = CellAddress::from_index(c, level, k);
        let mut idx = vec![0usize; nf];
        for &l in &word.word {
            spec.split_letter(l as usize, &mut letters);
            for j in 0..nf {
                idx[j] = idx[j] * spec.factors[j].alphabet_size() + letters[j];
            }
        }
        for j in 0..nf {
            out[j][c] = idx[j] as u32;
        }
    }
    out
}

/// Packs per-factor cell indices into the product cell index.
pub fn pack_product_index(spec: &FractalSpec, level: u32, factor_cells: &[usize]) -> usize {
    let nf = spec.factors.len();
    let sizes: Vec<usize> = spec.factors.iter().map(Primitive::alphabet_size).collect();
    let mut rem: Vec<usize> = factor_cells.to_vec();
    let mut letters = vec![0usize; nf];
    let mut digits = vec![0usize; level as usize];
    for slot in digits.iter_mut().rev() {
        for j in 0..nf {
            letters[j] = rem[j] % sizes[j];
            rem[j] /= sizes[j];
        }
        *slot = spec.join_letters(&letters);
    }
    let k = spec.alphabet_size();
    digits.iter().fold(0, |acc, &d| acc * k + d)
}

fn product_adjacency(
    spec: &FractalSpec,
    level: u32,
    factors: &[FactorGeometry],
    factor_cells: &[Vec<u32>],
) -> (Vec<usize>, Vec<u32>) {
    let cell_count = factor_cells[0].len();
    let nf = factors.len();
    let mut lists = vec![Vec::new(); cell_count];
    let mut choice = vec![0usize; nf];
    for c in 0..cell_count {
        let closed: Vec<Vec<usize>> = (0..nf)
            .map(|j| {
                let fc = factor_cells[j][c] as usize;
                let mut v = vec![fc];
                v.extend(factors[j].neighbors(fc).iter().map(|&x| x as usize));
                v
            })
            .collect();
        let total: usize = closed.iter().map(Vec::len).product();
        for code in 1..total {
            let mut r = code;
            for j in 0..nf {
                choice[j] = closed[j][r % closed[j].len()];
                r /= closed[j].len();
            }
            lists[c].push(pack_product_index(spec, level, &choice) as u32);
        }
    }
    to_csr(lists)
}

impl CellNetwork for ApproximationGraph {
    fn cell_count(&self) -> usize {
        self.cell_count
    }

    fn neighbors(&self, cell: usize) -> &[u32] {
        &self.neighbors[self.offsets[cell]..self.offsets[cell + 1]]
    }
}

impl ApproximationGraph {
    pub fn spec(&self) -> &FractalSpec {
        &self.spec
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn factors(&self) -> &[FactorGeometry] {
        &self.factors
    }

    /// Factor cell index of product cell `cell` in factor `factor`.
    pub fn factor_cell(&self, factor: usize, cell: usize) -> usize {
        if self.factors.len() == 1 {
            cell
        } else {
            self.factor_cells[factor][cell] as usize
        }
    }

    pub fn address(&self, cell: usize) -> CellAddress {
        CellAddress::from_index(cell, self.level, self.spec.alphabet_size())
    }

    pub fn index_of(&self, address: &CellAddress) -> Result<usize, GraphError> {
        if address.level() != self.level {
            return Err(GraphError::LevelMismatch { expected: self.level, got: address.level() });
        }
        address.index(self.spec.alphabet_size())
    }

    /// Reference diameter of the whole space (1 for every shipped primitive).
    pub fn diameter(&self) -> f64 {
        1.0
    }

    pub fn cell_diameter(&self) -> f64 {
        self.spec.ratio_f64().powi(self.level as i32)
    }

    /// Uniform self-similar cell measure `|alphabet|^-level`, exactly.
    pub fn uniform_cell_measure(&self) -> Ratio<u64> {
        Ratio::new(1, self.cell_count as u64)
    }

    pub fn cell_measure(&self, _cell: usize) -> f64 {
        1.0 / self.cell_count as f64
    }

    pub fn center(&self, cell: usize) -> &[f64] {
        let d = self.spec.coord_dim();
        &self.centers[cell * d..(cell + 1) * d]
    }

    /// l-infinity distance between reference-geometry points.
    pub fn distance_points(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        Self::distance_points(self.center(a), self.center(b))
    }

    fn slack(&self) -> f64 {
        METRIC_SLACK * self.cell_diameter()
    }

    /// Cells whose center lies within `radius` (closed) of `point`.
    pub fn closed_ball_around(&self, point: &[f64], radius: f64) -> Vec<u32> {
        let lim = radius + self.slack();
        (0..self.cell_count)
            .filter(|&c| Self::distance_points(self.center(c), point) <= lim)
            .map(|c| c as u32)
            .collect()
    }

    /// Cells whose center lies strictly within `radius` of `point`.
    pub fn open_ball_around(&self, point: &[f64], radius: f64) -> Vec<u32> {
        let lim = radius - self.slack();
        (0..self.cell_count)
            .filter(|&c| Self::distance_points(self.center(c), point) < lim)
            .map(|c| c as u32)
            .collect()
    }

    /// Largest degree over all cells of the graph.
    pub fn degree_bound(&self) -> usize {
        self.max_degree()
    }

    /// For graphs read back from a cache: replaces the adjacency.
    fn with_adjacency(
        spec: &FractalSpec,
        level: u32,
        offsets: Vec<usize>,
        neighbors: Vec<u32>,
    ) -> ApproximationGraph {
        let factors: Vec<FactorGeometry> =
            spec.factors.iter().map(|f| FactorGeometry::build(f, level)).collect();
        assemble(spec.clone(), level, factors, Some((offsets, neighbors)))
    }
}

/// Closed metric ball around the center of `center_cell`.
///
/// Monotone in `radius`; radius 0 returns just the center cell.
pub fn metric_ball(graph: &ApproximationGraph, center_cell: usize, radius: f64) -> Vec<u32> {
    let radius = radius.max(0.0);
    graph.closed_ball_around(graph.center(center_cell), radius)
}

/// Finite measure indexed by the cells of one graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureVector {
    pub level: u32,
    pub weights: Vec<f64>,
}

impl MeasureVector {
    pub fn uniform(graph: &ApproximationGraph) -> Self {
        let n = graph.cell_count();
        Self { level: graph.level(), weights: vec![1.0 / n as f64; n] }
    }

    pub fn new(level: u32, weights: Vec<f64>) -> Self {
        debug_assert!(weights.iter().all(|w| *w >= 0.0 && w.is_finite()));
        Self { level, weights }
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn mass_of(&self, cells: &[u32]) -> f64 {
        cells.iter().map(|&c| self.weights[c as usize]).sum()
    }

    /// Probability-normalized copy; `None` for the zero measure.
    pub fn normalized(&self) -> Option<Self> {
        let t = self.total();
        (t > 0.0).then(|| Self {
            level: self.level,
            weights: self.weights.iter().map(|w| w / t).collect(),
        })
    }
}

/// Restriction to the cell `target_cell` rescaled to the full level-(n-k) graph.
#[derive(Clone, Debug)]
pub struct CellMap {
    pub target_cell: CellAddress,
    /// Level `n` of the graph the target cell lives in.
    pub graph_level: u32,
    alphabet: usize,
}

impl CellMap {
    pub fn new(graph: &ApproximationGraph, target_cell: CellAddress) -> Result<Self, GraphError> {
        if target_cell.level() > graph.level() {
            return Err(GraphError::BadAddress(format!(
                "target level {} exceeds graph level {}",
                target_cell.level(),
                graph.level()
            )));
        }
        target_cell.index(graph.spec().alphabet_size())?;
        Ok(Self {
            target_cell,
            graph_level: graph.level(),
            alphabet: graph.spec().alphabet_size(),
        })
    }

    pub fn source_level(&self) -> u32 {
        self.graph_level - self.target_cell.level()
    }

    /// Level-n image cells of the source graph, in source index order.
    pub fn image_range(&self) -> Range<usize> {
        let block = self.alphabet.pow(self.source_level());
        let start = self.target_cell.index(self.alphabet).expect("validated") * block;
        start..start + block
    }

    pub fn image(&self, source_cell: usize) -> usize {
        self.image_range().start + source_cell
    }
}

/// Normalized push-forward of `measure` restricted to the map's target cell.
pub fn cell_pushforward(measure: &MeasureVector, map: &CellMap) -> Result<MeasureVector, GraphError> {
    if measure.level != map.graph_level {
        return Err(GraphError::LevelMismatch { expected: map.graph_level, got: measure.level });
    }
    let range = map.image_range();
    let slice = &measure.weights[range];
    let mass: f64 = slice.iter().sum();
    if mass <= 0.0 {
        return Err(GraphError::ZeroMass);
    }
    Ok(MeasureVector { level: map.source_level(), weights: slice.iter().map(|w| w / mass).collect() })
}

/// Empirical Ahlfors-regularity constant: the smallest `C` with
/// `C^-1 r^d <= mu(B(x,r)) <= C r^d` over sampled cells and dyadic-in-ratio radii.
pub fn ahlfors_constant(graph: &ApproximationGraph, sample_stride: usize) -> f64 {
    let d = graph.spec().hausdorff_dim();
    let mut radii = Vec::new();
    let mut r = graph.cell_diameter();
    while r <= graph.diameter() * (1.0 + 1e-12) {
        radii.push(r);
        r *= 2.0;
    }
    radii.push(graph.diameter());
    let mut worst: f64 = 1.0;
    let mu = MeasureVector::uniform(graph);
    for x in (0..graph.cell_count()).step_by(sample_stride.max(1)) {
        for &r in &radii {
            let mass = mu.mass_of(&metric_ball(graph, x, r));
            let ratio = mass / r.powf(d);
            worst = worst.max(ratio).max(1.0 / ratio);
        }
    }
    worst
}

pub(crate) fn rebuild_from_cache(
    spec: &FractalSpec,
    level: u32,
    cell_count: usize,
    edges: &[(u64, u64)],
) -> ApproximationGraph {
    let mut lists = vec![Vec::new(); cell_count];
    for &(a, b) in edges {
        lists[a as usize].push(b as u32);
        lists[b as usize].push(a as u32);
    }
    let (offsets, neighbors) = to_csr(lists);
    ApproximationGraph::with_adjacency(spec, level, offsets, neighbors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::product_spec;

    #[test]
    fn interval_level_three_is_a_path() {
        let g = build_graph(&FractalSpec::interval(), 3).unwrap();
        assert_eq!(g.cell_count(), 8);
        assert_eq!(g.edge_count(), 7);
        for c in 0..7 {
            assert!(g.neighbors(c).contains(&(c as u32 + 1)));
        }
    }

    #[test]
    fn carpet_level_one_ring() {
        let g = build_graph(&FractalSpec::carpet(), 1).unwrap();
        assert_eq!(g.cell_count(), 8);
        // 3x3 king graph minus the center: 20 king edges, 8 of them touch the center.
        assert_eq!(g.edge_count(), 12);
        // corner cell (0,0) meets (0,1) and (1,0) only
        assert_eq!(g.neighbors(0).len(), 2);
    }

    #[test]
    fn gasket_level_two_contacts() {
        let g = build_graph(&FractalSpec::gasket(), 2).unwrap();
        assert_eq!(g.cell_count(), 9);
        // 3 contacts inside each level-1 triangle, 3 between level-1 triangles
        assert_eq!(g.edge_count(), 12);
        let inner: usize = g
            .edges()
            .iter()
            .filter(|(a, b)| a / 3 == b / 3)
            .count();
        assert_eq!(inner, 9);
        assert!(g.max_degree() <= 3);
    }

    #[test]
    fn square_is_king_graph() {
        let sq = FractalSpec::square();
        let g = build_graph(&sq, 2).unwrap();
        assert_eq!(g.cell_count(), 16);
        // 4x4 king graph: 2*4*3 orthogonal + 2*3*3 diagonal
        assert_eq!(g.edge_count(), 24 + 18);
    }

    #[test]
    fn cap_exceeded() {
        let err = build_graph_with(&FractalSpec::carpet(), 5, BuildOptions { cell_cap: 1000 })
            .unwrap_err();
        assert!(matches!(err, GraphError::CapExceeded { .. }));
    }

    #[test]
    fn metric_ball_examples() {
        let g = build_graph(&FractalSpec::interval(), 3).unwrap();
        assert_eq!(metric_ball(&g, 0, 0.0), vec![0]);
        assert_eq!(metric_ball(&g, 0, 0.3), vec![0, 1, 2]);
        assert_eq!(metric_ball(&g, 3, 1.0).len(), 8);
    }

    #[test]
    fn pushforward_examples() {
        let g = build_graph(&FractalSpec::carpet(), 2).unwrap();
        let mu = MeasureVector::uniform(&g);
        for t in 0..8u32 {
            let map = CellMap::new(&g, CellAddress::new(vec![t])).unwrap();
            let pushed = cell_pushforward(&mu, &map).unwrap();
            assert_eq!(pushed.weights.len(), 8);
            for w in pushed.weights {
                assert!((w - 0.125).abs() < 1e-15);
            }
        }
        let mut point = vec![0.0; 64];
        point[8 * 5 + 3] = 1.0;
        let m = MeasureVector::new(2, point);
        let map = CellMap::new(&g, CellAddress::new(vec![5])).unwrap();
        let pushed = cell_pushforward(&m, &map).unwrap();
        assert_eq!(pushed.weights[3], 1.0);
        assert_eq!(pushed.total(), 1.0);
        let other = CellMap::new(&g, CellAddress::new(vec![4])).unwrap();
        assert!(matches!(cell_pushforward(&m, &other), Err(GraphError::ZeroMass)));
    }

    #[test]
    fn product_cells_decompose() {
        let spec = product_spec(&FractalSpec::interval(), &FractalSpec::gasket()).unwrap();
        let g = build_graph(&spec, 2).unwrap();
        assert_eq!(g.cell_count(), 36);
        for c in 0..g.cell_count() {
            let parts = [g.factor_cell(0, c), g.factor_cell(1, c)];
            assert_eq!(pack_product_index(&spec, 2, &parts), c);
        }
    }

    #[test]
    fn address_roundtrip() {
        let a = CellAddress::from_index(37, 3, 8);
        assert_eq!(a.word, vec![0, 4, 5]);
        assert_eq!(a.index(8).unwrap(), 37);
        assert!(CellAddress::new(vec![9]).index(8).is_err());
    }
}
