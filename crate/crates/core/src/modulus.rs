//! Discrete p-modulus of path families on cell graphs.
//!
//! `Mod_p` is the minimum of `sum_c rho(c)^p` over weights `rho >= 0` that
//! give every path of the family total weight at least one. The solver uses
//! constraint generation: a restricted problem over an active path set is
//! solved through its smooth concave dual, and a rho-shortest-path search
//! finds the most violated path of the full family.
//!
//! For the restricted dual with multipliers `lambda_g >= 0`, stationarity
//! gives `rho(c) = (s_c / p)^(1/(p-1))` with `s_c = sum_{g ∋ c} lambda_g`,
//! and the dual objective is `sum lambda - (p-1) sum rho^p`. Any
//! nonnegative `lambda` gives a lower bound on the full modulus, so every
//! result carries a two-sided certificate.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::ModulusError;
use crate::graph::{ApproximationGraph, CellNetwork};

pub const DEFAULT_MAX_ITER: usize = 10_000;
pub const DEFAULT_BATCH: usize = 32;
/// Active-set size from which restricted solves start from an interior-point solution.
const CONIC_THRESHOLD: usize = 2;
/// Networks above this size use the potential program under `SolverStrategy::Auto`.
pub const POTENTIAL_MIN_CELLS: usize = 256;
/// Ascent sweeps tried before falling back to the interior-point solve.
const CHEAP_SWEEPS: usize = 20;
/// Ascent sweeps allowed after an interior-point solve before its multipliers are accepted.
const POLISH_SWEEPS: usize = 200;

/// Which of the three supported path families this is.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FamilyKind {
    /// Paths from the open ball `B(x, r)` to the complement of `B(x, R)`.
    /// Only cells strictly between the two sets carry weight.
    AnnulusCrossing { center: Vec<f64>, inner_radius: f64, outer_radius: f64 },
    /// Paths joining two disjoint balls, optionally capped in diameter.
    BallToBall { x: usize, y: usize, radius: f64 },
    /// Paths from cell set `A` to cell set `B`.
    PointToPoint,
}

/// A family of paths in a cell network, described by source, target and
/// chargeable cells plus an optional set of diameter-cap windows.
#[derive(Clone)]
pub struct CurveFamily<'a> {
    network: &'a dyn CellNetwork,
    pub kind: FamilyKind,
    sources: Vec<u32>,
    targets: Vec<u32>,
    chargeable: Vec<bool>,
    /// Every path of a capped family lies inside one of these cell windows.
    windows: Option<Vec<Vec<u32>>>,
    diameter_cap: Option<f64>,
}

impl std::fmt::Debug for CurveFamily<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CurveFamily")
            .field("kind", &self.kind)
            .field("sources", &self.sources.len())
            .field("targets", &self.targets.len())
            .field("windows", &self.windows.as_ref().map(Vec::len))
            .finish()
    }
}

impl<'a> CurveFamily<'a> {
    /// All paths from a cell of `a` to a cell of `b`; every cell carries weight.
    pub fn point_to_point(
        network: &'a dyn CellNetwork,
        a: &[u32],
        b: &[u32],
    ) -> Result<Self, ModulusError> {
        let n = network.cell_count();
        if a.is_empty() || b.is_empty() {
            return Err(ModulusError::InvalidFamily("empty source or target set".into()));
        }
        if a.iter().chain(b).any(|&c| c as usize >= n) {
            return Err(ModulusError::InvalidFamily("cell index out of range".into()));
        }
        Ok(Self {
            network,
            kind: FamilyKind::PointToPoint,
            sources: sorted(a),
            targets: sorted(b),
            chargeable: vec![true; n],
            windows: None,
            diameter_cap: None,
        })
    }

    /// Annulus crossings around a reference point.
    ///
    /// Sources are the cells with center distance `< inner`, targets those
    /// with distance `>= outer`; weight lives only on the cells in between.
    pub fn annulus(
        graph: &'a ApproximationGraph,
        center: &[f64],
        inner: f64,
        outer: f64,
    ) -> Result<Self, ModulusError> {
        if !(inner > 0.0 && inner < outer && outer <= graph.diameter()) {
            return Err(ModulusError::RadiusOutOfRange(format!(
                "need 0 < r < R <= diam, got r = {inner}, R = {outer}"
            )));
        }
        let sources = graph.open_ball_around(center, inner);
        let inside_outer = graph.open_ball_around(center, outer);
        let mut in_outer = vec![false; graph.cell_count()];
        for &c in &inside_outer {
            in_outer[c as usize] = true;
        }
        let targets: Vec<u32> =
            (0..graph.cell_count() as u32).filter(|&c| !in_outer[c as usize]).collect();
        if sources.is_empty() || targets.is_empty() {
            return Err(ModulusError::RadiusOutOfRange(format!(
                "annulus r = {inner}, R = {outer} has an empty inner ball or outer complement"
            )));
        }
        let mut chargeable = in_outer;
        for &c in &sources {
            chargeable[c as usize] = false;
        }
        Ok(Self {
            network: graph,
            kind: FamilyKind::AnnulusCrossing {
                center: center.to_vec(),
                inner_radius: inner,
                outer_radius: outer,
            },
            sources,
            targets,
            chargeable,
            windows: None,
            diameter_cap: None,
        })
    }

    /// Paths joining the open balls `B(x, r)` and `B(y, r)`.
    pub fn ball_to_ball(
        graph: &'a ApproximationGraph,
        x: usize,
        y: usize,
        radius: f64,
    ) -> Result<Self, ModulusError> {
        let n = graph.cell_count();
        if x >= n || y >= n {
            return Err(ModulusError::InvalidFamily("cell index out of range".into()));
        }
        let bx = graph.open_ball_around(graph.center(x), radius);
        let by = graph.open_ball_around(graph.center(y), radius);
        let set: HashSet<u32> = bx.iter().copied().collect();
        if by.iter().any(|c| set.contains(c)) {
            return Err(ModulusError::BallsOverlap(format!(
                "B({x}, {radius}) and B({y}, {radius}) share cells"
            )));
        }
        Ok(Self {
            network: graph,
            kind: FamilyKind::BallToBall { x, y, radius },
            sources: bx,
            targets: by,
            chargeable: vec![true; n],
            windows: None,
            diameter_cap: None,
        })
    }

    /// Restricts the family to paths of diameter at most about `cap`.
    ///
    /// Cells are bucketed on a grid of side `cap / 4`; the lowest-index cell
    /// of each bucket anchors a window `B(anchor, cap / 2)`. The restricted
    /// family contains every path of diameter `<= cap / 4` and only paths of
    /// diameter `<= cap`.
    pub fn with_diameter_cap(mut self, graph: &ApproximationGraph, cap: f64) -> Self {
        assert_eq!(graph.cell_count(), self.network.cell_count(), "family lives on another graph");
        let side = cap / 4.0;
        let mut seen = HashSet::new();
        let mut windows: Vec<Vec<u32>> = Vec::new();
        let mut is_source = vec![false; graph.cell_count()];
        let mut is_target = vec![false; graph.cell_count()];
        for &s in &self.sources {
            is_source[s as usize] = true;
        }
        for &t in &self.targets {
            is_target[t as usize] = true;
        }
        for c in 0..graph.cell_count() {
            let key: Vec<i64> = graph.center(c).iter().map(|x| (x / side).floor() as i64).collect();
            if !seen.insert(key) {
                continue;
            }
            let w = graph.closed_ball_around(graph.center(c), cap / 2.0);
            let has_s = w.iter().any(|&v| is_source[v as usize]);
            let has_t = w.iter().any(|&v| is_target[v as usize]);
            if has_s && has_t && !windows.contains(&w) {
                windows.push(w);
            }
        }
        self.windows = Some(windows);
        self.diameter_cap = Some(cap);
        self
    }

    pub fn network(&self) -> &'a dyn CellNetwork {
        self.network
    }

    pub fn sources(&self) -> &[u32] {
        &self.sources
    }

    pub fn targets(&self) -> &[u32] {
        &self.targets
    }

    pub fn is_chargeable(&self, cell: usize) -> bool {
        self.chargeable[cell]
    }

    pub fn windows(&self) -> Option<&[Vec<u32>]> {
        self.windows.as_deref()
    }

    pub fn diameter_cap(&self) -> Option<f64> {
        self.diameter_cap
    }

    /// Chargeable cells of a path, sorted and deduplicated.
    pub fn charged_cells(&self, path: &[u32]) -> Vec<u32> {
        let mut v: Vec<u32> =
            path.iter().copied().filter(|&c| self.chargeable[c as usize]).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn short_label(&self) -> &'static str {
        match self.kind {
            FamilyKind::AnnulusCrossing { .. } => "annulus",
            FamilyKind::BallToBall { .. } => "ball2ball",
            FamilyKind::PointToPoint => "point2point",
        }
    }
}

fn sorted(v: &[u32]) -> Vec<u32> {
    let mut v = v.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// Nonnegative weights on cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightFunction {
    pub rho: Vec<f64>,
}

impl WeightFunction {
    pub fn zeros(n: usize) -> Self {
        Self { rho: vec![0.0; n] }
    }

    pub fn p_mass(&self, p: f64) -> f64 {
        self.rho.iter().map(|r| r.powf(p)).sum()
    }
}

/// Optimality data attached to a [`ModulusResult`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// Shortest rho-length of a family path minus one, before the final rescale.
    pub slack: f64,
    /// Dual lower bound on `Mod_p`.
    pub lower_bound: f64,
    /// Reported value minus the lower bound.
    pub duality_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulusResult {
    /// `sum rho^p` of the exactly admissible reported weights (an upper bound).
    pub value: f64,
    pub optimal_rho: WeightFunction,
    pub p: f64,
    pub certificate: Certificate,
    pub iterations: usize,
    pub active_paths: usize,
    pub method: SolveMethod,
}

/// Which formulation produced a [`ModulusResult`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    /// Active path set grown by the shortest-path oracle.
    ConstraintGeneration,
    /// One conic solve of the potential formulation of a connecting family.
    PotentialProgram,
}

/// How [`solve_modulus_with`] picks a formulation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStrategy {
    /// Potential program for uncapped families above `POTENTIAL_MIN_CELLS` cells.
    #[default]
    Auto,
    ConstraintGeneration,
    PotentialProgram,
}

impl ModulusResult {
    pub fn relative_gap(&self) -> f64 {
        if self.value > 0.0 {
            self.certificate.duality_gap / self.value
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Coordinate-ascent sweeps allowed per restricted solve.
    pub max_sweeps: usize,
    /// Paths (as cell lists) put into the active set before the first solve.
    pub warm_start: Vec<Vec<u32>>,
    /// Most cuts added per oracle call.
    pub batch: usize,
    pub strategy: SolverStrategy,
}

impl SolverOptions {
    pub fn new(tol: f64) -> Self {
        Self { tol, max_iter: DEFAULT_MAX_ITER, max_sweeps: 100_000, warm_start: Vec::new(), batch: DEFAULT_BATCH, strategy: SolverStrategy::Auto }
    }
}

/// Solves `Mod_p` of the family to relative accuracy `tol`.
pub fn solve_modulus(family: &CurveFamily<'_>, p: f64, tol: f64) -> Result<ModulusResult, ModulusError> {
    solve_modulus_with(family, p, &SolverOptions::new(tol))
}

pub fn solve_modulus_with(
    family: &CurveFamily<'_>,
    p: f64,
    options: &SolverOptions,
) -> Result<ModulusResult, ModulusError> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(ModulusError::BadExponent(p));
    }
    if !(options.tol > 0.0) {
        return Err(ModulusError::BadTolerance(options.tol));
    }
    let n = family.network.cell_count();
    let use_potential = family.windows.is_none()
        && match options.strategy {
            SolverStrategy::Auto => n > POTENTIAL_MIN_CELLS && options.warm_start.is_empty(),
            SolverStrategy::ConstraintGeneration => false,
            SolverStrategy::PotentialProgram => true,
        };
    if use_potential {
        if let Some(result) = solve_potential_program(family, p)? {
            return Ok(result);
        }
    }
    let tol = options.tol;
    let inner_tol = (tol * 0.1).max(1e-15);
    let mut dual = RestrictedDual::new(n, p);
    let mut oracle = PathOracle::new(family);
    let mut known: HashSet<Vec<u32>> = HashSet::new();

    for path in &options.warm_start {
        let charged = family.charged_cells(path);
        if charged.is_empty() {
            return Err(ModulusError::Unbounded);
        }
        if known.insert(charged.clone()) {
            dual.push(charged);
        }
    }

    let mut iterations = 0;
    let mut stalls = 0;
    // the restricted problem is solved loosely while many cuts are missing
    let mut target = inner_tol.max(0.05);
    loop {
        dual.solve(target, options.max_sweeps);
        let rho = dual.rho();
        let Some((length, cuts)) = oracle.violated(&rho, 1.0 - tol, options.batch.max(1)) else {
            // no path joins the source side to the target side
            return Ok(ModulusResult {
                value: 0.0,
                optimal_rho: WeightFunction::zeros(n),
                p,
                certificate: Certificate { slack: f64::INFINITY, lower_bound: 0.0, duality_gap: 0.0 },
                iterations,
                active_paths: 0,
                method: SolveMethod::ConstraintGeneration,
            });
        };
        if length >= 1.0 - tol {
            if target > inner_tol {
                target = inner_tol;
                continue;
            }
            return Ok(finish(&dual, rho, length, iterations, p));
        }
        iterations += 1;
        if iterations > options.max_iter {
            let r = finish(&dual, rho, length, iterations, p);
            return Err(ModulusError::NonConvergence {
                max_iter: options.max_iter,
                lower: r.certificate.lower_bound,
                upper: r.value,
            });
        }
        let mut added = 0;
        for path in cuts {
            let charged = family.charged_cells(&path);
            if charged.is_empty() {
                return Err(ModulusError::Unbounded);
            }
            if known.insert(charged.clone()) {
                dual.push(charged);
                added += 1;
            }
        }
        if added == 0 {
            // the violated paths are already active: solve more accurately
            if target > inner_tol {
                target = inner_tol;
            } else {
                stalls += 1;
                if stalls > 3 {
                    let r = finish(&dual, rho, length, iterations, p);
                    return Err(ModulusError::NonConvergence {
                        max_iter: iterations,
                        lower: r.certificate.lower_bound,
                        upper: r.value,
                    });
                }
            }
        } else {
            stalls = 0;
            target = target.min(0.25 * (1.0 - length)).max(inner_tol);
        }
    }
}

/// Modulus of an uncapped connecting family from its potential formulation:
/// `min sum rho^p` over `(rho, u)` with `u_s <= rho_s` on sources,
/// `u_b <= u_a + rho_b` along edges and `u_a + rho_t >= 1` into targets.
/// Any feasible `u` is below the rho-distance from the sources, so the
/// constraints hold exactly when every family path has length at least 1.
///
/// Returns `Ok(None)` when the conic solve fails, so the caller can fall back.
fn solve_potential_program(family: &CurveFamily<'_>, p: f64) -> Result<Option<ModulusResult>, ModulusError> {
    let net = family.network;
    let n = net.cell_count();
    let mut oracle = PathOracle::new(family);
    // rho = 1 on chargeable cells: zero length means an uncharged path
    let ones: Vec<f64> = vec![1.0; n];
    match oracle.violated(&ones, 0.0, 0) {
        None => {
            return Ok(Some(ModulusResult {
                value: 0.0,
                optimal_rho: WeightFunction::zeros(n),
                p,
                certificate: Certificate { slack: f64::INFINITY, lower_bound: 0.0, duality_gap: 0.0 },
                iterations: 0,
                active_paths: 0,
                method: SolveMethod::PotentialProgram,
            }))
        }
        Some((len, _)) if len <= 0.0 => return Err(ModulusError::Unbounded),
        Some(_) => {}
    }
    let mut rho_col = vec![usize::MAX; n];
    let mut charged = Vec::new();
    for c in 0..n {
        if family.chargeable[c] {
            rho_col[c] = charged.len();
            charged.push(c);
        }
    }
    let mut u_col = vec![usize::MAX; n];
    let mut nu = 0;
    for c in 0..n {
        if !oracle.is_target[c] {
            u_col[c] = nu;
            nu += 1;
        }
    }
    let mut prog = crate::conic::PowerProgram::new(charged.len(), nu);
    let rho_of = |c: usize, coeff: f64| (rho_col[c] != usize::MAX).then(|| (rho_col[c], coeff));
    for &s in &family.sources {
        let s = s as usize;
        if oracle.is_target[s] {
            prog.add_le(&rho_of(s, -1.0).into_iter().collect::<Vec<_>>(), -1.0);
        } else {
            let mut row = vec![(prog.free(u_col[s]), 1.0)];
            row.extend(rho_of(s, -1.0));
            prog.add_le(&row, 0.0);
        }
    }
    for a in 0..n {
        if oracle.is_target[a] {
            continue;
        }
        for &b in net.neighbors(a) {
            let b = b as usize;
            let mut row = vec![(prog.free(u_col[a]), -1.0)];
            row.extend(rho_of(b, -1.0));
            if oracle.is_target[b] {
                prog.add_le(&row, -1.0);
            } else {
                row.push((prog.free(u_col[b]), 1.0));
                prog.add_le(&row, 0.0);
            }
        }
    }
    let Some(sol) = prog.solve(p) else {
        return Ok(None);
    };
    let mut rho = vec![0.0; n];
    for (j, &c) in charged.iter().enumerate() {
        rho[c] = sol.rho[j];
    }
    let Some((length, _)) = oracle.violated(&rho, 0.0, 0) else {
        return Ok(None);
    };
    if !(length > 0.0) {
        return Ok(None);
    }
    let rho: Vec<f64> = rho.into_iter().map(|r| r / length).collect();
    let value: f64 = rho.iter().map(|r| r.powf(p)).sum();
    let lower = sol.dual_objective.clamp(0.0, value);
    Ok(Some(ModulusResult {
        value,
        optimal_rho: WeightFunction { rho },
        p,
        certificate: Certificate { slack: length - 1.0, lower_bound: lower, duality_gap: value - lower },
        iterations: sol.iterations,
        active_paths: 0,
        method: SolveMethod::PotentialProgram,
    }))
}

fn finish(dual: &RestrictedDual, rho: Vec<f64>, length: f64, iterations: usize, p: f64) -> ModulusResult {
    let scale = if length > 0.0 { 1.0 / length } else { 1.0 };
    let rho: Vec<f64> = rho.into_iter().map(|r| r * scale).collect();
    let value: f64 = rho.iter().map(|r| r.powf(p)).sum();
    let lower = dual.objective().max(0.0);
    ModulusResult {
        value,
        optimal_rho: WeightFunction { rho },
        p,
        certificate: Certificate { slack: length - 1.0, lower_bound: lower, duality_gap: value - lower },
        iterations,
        active_paths: dual.paths.len(),
        method: SolveMethod::ConstraintGeneration,
    }
}

/// Dual of the modulus problem restricted to the active paths.
struct RestrictedDual {
    p: f64,
    q: f64,
    paths: Vec<Vec<u32>>,
    lambda: Vec<f64>,
    /// `s_c = sum of lambda over active paths through c`.
    load: Vec<f64>,
    scratch: Vec<f64>,
    /// Active-set size at the last interior-point solve.
    conic_paths: usize,
    /// Interior-point primal weights and dual objective, used when the ascent
    /// cannot polish the multipliers to tolerance.
    primal: Option<(Vec<f64>, f64)>,
}

impl RestrictedDual {
    fn new(n: usize, p: f64) -> Self {
        Self { p, q: 1.0 / (p - 1.0), paths: Vec::new(), lambda: Vec::new(), load: vec![0.0; n], scratch: Vec::new(), conic_paths: 0, primal: None }
    }

    fn push(&mut self, path: Vec<u32>) {
        self.paths.push(path);
        self.lambda.push(0.0);
        self.primal = None;
    }

    #[inline]
    fn weight(&self, load: f64) -> f64 {
        if load <= 0.0 {
            0.0
        } else {
            (load / self.p).powf(self.q)
        }
    }

    fn rho(&self) -> Vec<f64> {
        match &self.primal {
            Some((rho, _)) => rho.clone(),
            None => self.load.iter().map(|&s| self.weight(s)).collect(),
        }
    }

    fn objective(&self) -> f64 {
        let total: f64 = self.lambda.iter().sum();
        let mass: f64 = self.load.iter().map(|&s| self.weight(s).powf(self.p)).sum();
        let ascent = total - (self.p - 1.0) * mass;
        match &self.primal {
            Some((_, conic)) => ascent.max(*conic),
            None => ascent,
        }
    }

    /// Cyclic exact coordinate ascent; returns whether the sweep limit was avoided.
    ///
    /// Large active sets are first solved by an interior-point method; its
    /// multipliers seed the ascent, which then certifies the result.
    fn solve(&mut self, tol: f64, max_sweeps: usize) -> bool {
        if self.paths.is_empty() {
            return true;
        }
        let mut polish_left = usize::MAX;
        let mut sw = 0;
        while sw < max_sweeps && polish_left > 0 {
            let mut worst: f64 = 0.0;
            for k in 0..self.paths.len() {
                worst = worst.max(self.update(k));
            }
            sw += 1;
            polish_left = polish_left.saturating_sub(1);
            if worst <= tol {
                self.primal = None;
                return true;
            }
            if sw == CHEAP_SWEEPS && self.paths.len() >= CONIC_THRESHOLD {
                if self.paths.len() != self.conic_paths {
                    self.conic_warm_start();
                    self.conic_paths = self.paths.len();
                }
                polish_left = POLISH_SWEEPS;
            }
        }
        false
    }

    /// Replaces `lambda` by the multipliers of the restricted primal
    /// `min sum rho^p` s.t. `sum_{c in path} rho_c >= 1`.
    fn conic_warm_start(&mut self) {
        let mut local = std::collections::HashMap::new();
        let mut rows = Vec::with_capacity(self.paths.len());
        for path in &self.paths {
            let row: Vec<(usize, f64)> = path
                .iter()
                .map(|&c| {
                    let next = local.len();
                    (*local.entry(c).or_insert(next), -1.0)
                })
                .collect();
            rows.push(row);
        }
        let mut prog = crate::conic::PowerProgram::new(local.len(), 0);
        for row in &rows {
            prog.add_le(row, -1.0);
        }
        let Some(sol) = prog.solve(self.p) else {
            return;
        };
        let mut rho = vec![0.0; self.load.len()];
        for (&c, &j) in &local {
            rho[c as usize] = sol.rho[j];
        }
        self.primal = Some((rho, sol.dual_objective));
        self.lambda = sol.multipliers;
        self.load.iter_mut().for_each(|s| *s = 0.0);
        for (path, &lam) in self.paths.iter().zip(&self.lambda) {
            for &c in path {
                self.load[c as usize] += lam;
            }
        }
    }

    /// Maximizes the dual in `lambda_k`; returns the pre-update violation.
    fn update(&mut self, k: usize) -> f64 {
        let lam = self.lambda[k];
        let path = std::mem::take(&mut self.paths[k]);
        self.scratch.clear();
        for &c in &path {
            self.scratch.push(self.load[c as usize] - lam);
        }
        let (p, q) = (self.p, self.q);
        let len_at = |t: f64, base: &[f64]| -> f64 {
            base.iter().map(|&b| if b + t > 0.0 { ((b + t) / p).powf(q) } else { 0.0 }).sum()
        };
        let current = len_at(lam, &self.scratch);
        let violation = if lam > 0.0 { (current - 1.0).abs() } else { (1.0 - current).max(0.0) };

        let new_lam = if len_at(0.0, &self.scratch) >= 1.0 {
            0.0
        } else {
            solve_unit_length(&self.scratch, p, q, lam)
        };
        for &c in &path {
            let s = &mut self.load[c as usize];
            *s += new_lam - lam;
            if *s < 0.0 {
                *s = 0.0;
            }
        }
        self.lambda[k] = new_lam;
        self.paths[k] = path;
        violation
    }
}

/// Root `t > 0` of `sum ((b + t)/p)^q = 1`, by safeguarded Newton.
fn solve_unit_length(base: &[f64], p: f64, q: f64, guess: f64) -> f64 {
    let f = |t: f64| -> (f64, f64) {
        let mut h = 0.0;
        let mut dh = 0.0;
        for &b in base {
            let x = b + t;
            if x > 0.0 {
                let w = (x / p).powf(q);
                h += w;
                dh += q * w / x;
            }
        }
        (h - 1.0, dh)
    };
    let mut lo = 0.0;
    // len >= count * (t/p)^q, so this point is already long enough
    let mut hi = p * (1.0 / base.len() as f64).powf(1.0 / q);
    while f(hi).0 < 0.0 {
        hi *= 2.0;
    }
    let mut t = if guess > lo && guess < hi { guess } else { 0.5 * (lo + hi) };
    for _ in 0..200 {
        let (val, der) = f(t);
        if val == 0.0 {
            return t;
        }
        if val < 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let newton = if der.is_finite() && der > 0.0 { t - val / der } else { f64::NAN };
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - t).abs() <= 1e-16 * t.abs().max(1e-300) || hi - lo <= 1e-16 * hi {
            return next;
        }
        t = next;
    }
    t
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem {
    dist: f64,
    cell: u32,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (dist, cell)
        other.dist.total_cmp(&self.dist).then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Separation oracle: rho-shortest family path, vertex-weighted Dijkstra.
struct PathOracle<'f, 'a> {
    family: &'f CurveFamily<'a>,
    dist: Vec<f64>,
    pred: Vec<u32>,
    allowed: Vec<bool>,
    is_target: Vec<bool>,
    touched: Vec<u32>,
}

impl<'f, 'a> PathOracle<'f, 'a> {
    fn new(family: &'f CurveFamily<'a>) -> Self {
        let n = family.network.cell_count();
        let mut is_target = vec![false; n];
        for &t in &family.targets {
            is_target[t as usize] = true;
        }
        Self {
            family,
            dist: vec![f64::INFINITY; n],
            pred: vec![u32::MAX; n],
            allowed: vec![family.windows.is_none(); n],
            is_target,
            touched: Vec::new(),
        }
    }

    /// Shortest family length and up to `limit` distinct paths shorter than `threshold`.
    ///
    /// Returns `None` when no family path exists.
    fn violated(&mut self, rho: &[f64], threshold: f64, limit: usize) -> Option<(f64, Vec<Vec<u32>>)> {
        match self.family.windows {
            None => self.search(rho, threshold, limit),
            Some(ref windows) => {
                let mut best: Option<f64> = None;
                let mut found: Vec<(f64, Vec<u32>)> = Vec::new();
                for w in windows {
                    for &c in w {
                        self.allowed[c as usize] = true;
                    }
                    let res = self.search_with_lengths(rho, threshold, limit);
                    for &c in w {
                        self.allowed[c as usize] = false;
                    }
                    if let Some((len, paths)) = res {
                        best = Some(best.map_or(len, |b: f64| b.min(len)));
                        found.extend(paths);
                    }
                }
                let best = best?;
                found.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
                found.dedup_by(|a, b| a.1 == b.1);
                found.truncate(limit);
                Some((best, found.into_iter().map(|(_, p)| p).collect()))
            }
        }
    }

    fn search(&mut self, rho: &[f64], threshold: f64, limit: usize) -> Option<(f64, Vec<Vec<u32>>)> {
        self.search_with_lengths(rho, threshold, limit)
            .map(|(len, paths)| (len, paths.into_iter().map(|(_, p)| p).collect()))
    }

    /// Multi-source Dijkstra that stops at targets; pops are ordered by `(dist, cell)`.
    fn search_with_lengths(
        &mut self,
        rho: &[f64],
        threshold: f64,
        limit: usize,
    ) -> Option<(f64, Vec<(f64, Vec<u32>)>)> {
        let fam = self.family;
        let weight = |c: usize| if fam.chargeable[c] { rho[c] } else { 0.0 };
        for &c in &self.touched {
            self.dist[c as usize] = f64::INFINITY;
            self.pred[c as usize] = u32::MAX;
        }
        self.touched.clear();
        let mut heap = BinaryHeap::new();
        for &s in &fam.sources {
            let s = s as usize;
            if !self.allowed[s] {
                continue;
            }
            let d = weight(s);
            if d < self.dist[s] {
                if self.dist[s].is_infinite() {
                    self.touched.push(s as u32);
                }
                self.dist[s] = d;
                heap.push(HeapItem { dist: d, cell: s as u32 });
            }
        }
        let mut shortest: Option<f64> = None;
        let mut paths = Vec::new();
        while let Some(HeapItem { dist, cell }) = heap.pop() {
            let u = cell as usize;
            if dist > self.dist[u] {
                continue;
            }
            if self.is_target[u] {
                if shortest.is_none() {
                    shortest = Some(dist);
                }
                if dist >= threshold || paths.len() >= limit {
                    break;
                }
                let mut path = vec![cell];
                let mut cur = u;
                while self.pred[cur] != u32::MAX {
                    cur = self.pred[cur] as usize;
                    path.push(cur as u32);
                }
                path.reverse();
                paths.push((dist, path));
                continue;
            }
            for &v in fam.network.neighbors(u) {
                let vi = v as usize;
                if !self.allowed[vi] {
                    continue;
                }
                let nd = dist + weight(vi);
                if nd < self.dist[vi] {
                    if self.dist[vi].is_infinite() {
                        self.touched.push(v);
                    }
                    self.dist[vi] = nd;
                    self.pred[vi] = cell;
                    heap.push(HeapItem { dist: nd, cell: v });
                }
            }
        }
        shortest.map(|s| (s, paths))
    }
}

/// Annulus crossing modulus `Mod_p` of `B(x, r)` to the complement of `B(x, 2r)`.
///
/// `r` must satisfy `cell_diameter <= r <= diam / 2`.
pub fn annulus_modulus(
    graph: &ApproximationGraph,
    center: &[f64],
    r: f64,
    p: f64,
    tol: f64,
) -> Result<ModulusResult, ModulusError> {
    let eps = graph.cell_diameter();
    if r < eps * (1.0 - 1e-12) || 2.0 * r > graph.diameter() * (1.0 + 1e-12) {
        return Err(ModulusError::RadiusOutOfRange(format!(
            "need cell diameter {eps} <= r <= diam/2, got r = {r}"
        )));
    }
    let family = CurveFamily::annulus(graph, center, r, 2.0 * r)?;
    solve_modulus(&family, p, tol)
}

/// Diameter cap multiplier relative to the ball radius.
pub fn default_cap_factor(separation: f64) -> f64 {
    2.0 * (separation + 10.0)
}

/// Modulus of paths joining `B(x, r)` and `B(y, r)` with diameter at most `cap_factor * r`.
pub fn ball_to_ball_modulus(
    graph: &ApproximationGraph,
    x: usize,
    y: usize,
    r: f64,
    separation: f64,
    cap_factor: f64,
    p: f64,
    tol: f64,
) -> Result<ModulusResult, ModulusError> {
    let gap = graph.distance(x, y) - 2.0 * r;
    if gap > separation * r * (1.0 + 1e-12) {
        return Err(ModulusError::RadiusOutOfRange(format!(
            "balls are {gap} apart, more than A r = {}",
            separation * r
        )));
    }
    let family = CurveFamily::ball_to_ball(graph, x, y, r)?.with_diameter_cap(graph, cap_factor * r);
    solve_modulus(&family, p, tol)
}

/// Discrete potential `f(c)`: rho-length of the shortest path from `c` into
/// the target set (all cells counted), and `0` on the target set itself.
pub fn potential_from_weights(family: &CurveFamily<'_>, rho: &WeightFunction) -> Vec<f64> {
    let net = family.network;
    let n = net.cell_count();
    let w = |c: usize| if family.chargeable[c] { rho.rho[c] } else { 0.0 };
    let mut dist = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    // reverse search: distance to target including both endpoints' weights
    for &t in &family.targets {
        let t = t as usize;
        dist[t] = w(t);
        heap.push(HeapItem { dist: dist[t], cell: t as u32 });
    }
    while let Some(HeapItem { dist: d, cell }) = heap.pop() {
        let u = cell as usize;
        if d > dist[u] {
            continue;
        }
        for &v in net.neighbors(u) {
            let vi = v as usize;
            let nd = d + w(vi);
            if nd < dist[vi] {
                dist[vi] = nd;
                heap.push(HeapItem { dist: nd, cell: v });
            }
        }
    }
    for &t in &family.targets {
        dist[t as usize] = 0.0;
    }
    dist
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, AdjacencyGraph};
    use crate::spec::FractalSpec;

    #[test]
    fn single_mandatory_cell() {
        let g = AdjacencyGraph::from_edges(3, &[(0, 1), (1, 2)]);
        let fam = CurveFamily::point_to_point(&g, &[1], &[1]).unwrap();
        let r = solve_modulus(&fam, 2.0, 1e-12).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
        assert_eq!(r.optimal_rho.rho, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn v_instance() {
        // b - a - c, paths {a,b} and {a,c}
        let g = AdjacencyGraph::from_edges(3, &[(0, 1), (0, 2)]);
        let fam = CurveFamily::point_to_point(&g, &[0], &[1, 2]).unwrap();
        let r = solve_modulus(&fam, 2.0, 1e-12).unwrap();
        assert!((r.value - 2.0 / 3.0).abs() < 1e-10, "{}", r.value);
        let expect = [2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
        for (a, b) in r.optimal_rho.rho.iter().zip(expect) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(r.certificate.duality_gap.abs() < 1e-10);
    }

    #[test]
    fn interval_end_to_end() {
        let g = build_graph(&FractalSpec::interval(), 3).unwrap();
        let fam = CurveFamily::point_to_point(&g, &[0], &[7]).unwrap();
        let r = solve_modulus(&fam, 2.0, 1e-12).unwrap();
        assert!((r.value - 0.125).abs() < 1e-12);
        for x in &r.optimal_rho.rho {
            assert!((x - 0.125).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_family_is_zero() {
        let g = AdjacencyGraph::from_edges(4, &[(0, 1), (2, 3)]);
        let fam = CurveFamily::point_to_point(&g, &[0], &[3]).unwrap();
        let r = solve_modulus(&fam, 2.0, 1e-9).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.optimal_rho.rho.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn bad_exponent() {
        let g = AdjacencyGraph::from_edges(2, &[(0, 1)]);
        let fam = CurveFamily::point_to_point(&g, &[0], &[1]).unwrap();
        assert_eq!(solve_modulus(&fam, 1.0, 1e-6).unwrap_err(), ModulusError::BadExponent(1.0));
        assert!(matches!(solve_modulus(&fam, 0.5, 1e-6), Err(ModulusError::BadExponent(_))));
    }

    #[test]
    fn unchargeable_crossing_is_unbounded() {
        let g = build_graph(&FractalSpec::interval(), 2).unwrap();
        // inner ball and outer complement touch: no cell between them
        let fam = CurveFamily::annulus(&g, &[0.125], 0.2, 0.25).unwrap();
        assert_eq!(solve_modulus(&fam, 2.0, 1e-9).unwrap_err(), ModulusError::Unbounded);
    }

    #[test]
    fn potential_ramp() {
        let g = build_graph(&FractalSpec::interval(), 3).unwrap();
        let fam = CurveFamily::point_to_point(&g, &[0], &[7]).unwrap();
        let zero = potential_from_weights(&fam, &WeightFunction::zeros(8));
        assert!(zero.iter().all(|&x| x == 0.0));
        let rho = WeightFunction { rho: vec![0.125; 8] };
        let f = potential_from_weights(&fam, &rho);
        assert_eq!(f[7], 0.0);
        for k in 0..7 {
            assert!((f[k] - (8 - k) as f64 / 8.0).abs() < 1e-15);
        }
        assert!(f[0] >= 1.0 - 1e-15);
    }

    #[test]
    fn annulus_rejects_bad_radius() {
        let g = build_graph(&FractalSpec::interval(), 4).unwrap();
        assert!(matches!(
            annulus_modulus(&g, &[0.5], 0.01, 2.0, 1e-6),
            Err(ModulusError::RadiusOutOfRange(_))
        ));
        assert!(matches!(
            annulus_modulus(&g, &[0.5], 0.6, 2.0, 1e-6),
            Err(ModulusError::RadiusOutOfRange(_))
        ));
    }

    #[test]
    fn ball_overlap_detected() {
        let g = build_graph(&FractalSpec::interval(), 4).unwrap();
        let err = CurveFamily::ball_to_ball(&g, 3, 4, 0.2).unwrap_err();
        assert!(matches!(err, ModulusError::BallsOverlap(_)));
    }
}
