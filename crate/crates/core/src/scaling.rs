//! Multi-level annulus modulus studies, scaling exponents and the critical exponent.
//!
//! For every level the annular modulus `Mod_p(B(x, r), X \ B(x, 2r))` is solved
//! at a fixed deterministic set of centers. `log Mod` is regressed on
//! `log(eps / r)` over all (level, center) samples; the slope estimates
//! `beta_p - d_H`. The critical exponent is the root of `p -> slope(p)`.

use serde::{Deserialize, Serialize};

use crate::error::ScalingError;
use crate::graph::{build_graph, ApproximationGraph, CellNetwork};
use crate::modulus::annulus_modulus;
use crate::par::{self, Execution};
use crate::spec::FractalSpec;

/// Smallest p the theory allows in the search.
pub const P_FLOOR: f64 = 1.01;
/// Fewest levels a fit accepts: the slope error comes from the center scatter.
pub const MIN_LEVELS: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    /// Annulus inner radius; defaults to the coarsest level's cell diameter.
    pub radius: Option<f64>,
    /// Number of annulus centers, taken from coarsest-level cells by index stride.
    pub centers: usize,
    /// Relative tolerance of each modulus solve.
    pub tol: f64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self { radius: None, centers: 5, tol: 1e-5 }
    }
}

/// One (level, center) modulus value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CenterSample {
    pub center_cell: usize,
    pub modulus: f64,
    pub slack: f64,
    pub iterations: usize,
}

/// All centers at one level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSample {
    pub level: u32,
    pub eps_over_r: f64,
    /// Geometric mean over centers.
    pub modulus: f64,
    /// Smallest certified slack over centers.
    pub slack: f64,
    pub centers: Vec<CenterSample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub spec: String,
    pub p: f64,
    pub radius: f64,
    pub samples: Vec<LevelSample>,
    /// Slope of `log Mod` against `log(eps/r)`; estimates `beta_p - d_H`.
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Standard error of the slope from the pooled residuals.
    pub slope_stderr: f64,
    pub beta_p: f64,
    /// `Mod(n+1) / Mod(n)` of the level means.
    pub level_ratios: Vec<f64>,
}

/// Least squares line `y = a + b x` with the slope standard error and `r^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub slope_stderr: f64,
}

pub fn least_squares(xs: &[f64], ys: &[f64]) -> LineFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if syy > 0.0 { (1.0 - sse / syy).clamp(0.0, 1.0) } else { 1.0 };
    let dof = xs.len().saturating_sub(2);
    let slope_stderr = if dof > 0 && sxx > 0.0 { (sse / dof as f64 / sxx).sqrt() } else { 0.0 };
    LineFit { slope, intercept, r2, slope_stderr }
}

/// Graphs and annulus centers shared by every exponent of a study.
pub struct ScalingStudy {
    spec: FractalSpec,
    graphs: Vec<ApproximationGraph>,
    radius: f64,
    /// Center points and the coarsest-level cell they come from.
    centers: Vec<(usize, Vec<f64>)>,
    config: ScalingConfig,
    exec: Execution,
}

/// Cells `floor(k * N / count)` for `k < count` (deduplicated).
pub fn center_stride(cell_count: usize, count: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..count).map(|k| k * cell_count / count.max(1)).collect();
    out.dedup();
    out
}

impl ScalingStudy {
    pub fn new(
        spec: &FractalSpec,
        levels: std::ops::RangeInclusive<u32>,
        config: &ScalingConfig,
        exec: Execution,
    ) -> Result<Self, ScalingError> {
        let lv: Vec<u32> = levels.collect();
        if lv.len() < MIN_LEVELS {
            return Err(ScalingError::InsufficientLevels { needed: MIN_LEVELS, got: lv.len() });
        }
        if config.centers == 0 {
            return Err(ScalingError::BadAnnulus("at least one center is needed".into()));
        }
        let graphs = par::try_map(exec, &lv, |&n| build_graph(spec, n))?;
        Self::from_graphs(graphs, config, exec)
    }

    /// Study over prebuilt graphs of one spec, ordered by strictly increasing level.
    pub fn from_graphs(
        graphs: Vec<ApproximationGraph>,
        config: &ScalingConfig,
        exec: Execution,
    ) -> Result<Self, ScalingError> {
        if graphs.len() < MIN_LEVELS {
            return Err(ScalingError::InsufficientLevels { needed: MIN_LEVELS, got: graphs.len() });
        }
        if config.centers == 0 {
            return Err(ScalingError::BadAnnulus("at least one center is needed".into()));
        }
        let spec = graphs[0].spec().clone();
        if graphs.windows(2).any(|w| w[1].level() <= w[0].level() || w[1].spec() != &spec) {
            return Err(ScalingError::Graph("graphs must share a spec and increase in level".into()));
        }
        let coarse = &graphs[0];
        let radius = config.radius.unwrap_or_else(|| coarse.cell_diameter());
        let eps = coarse.cell_diameter();
        if !(radius >= eps * (1.0 - 1e-12)) || 2.0 * radius > coarse.diameter() * (1.0 + 1e-12) {
            return Err(ScalingError::BadAnnulus(format!(
                "radius {radius} must lie in [{eps}, {}] at the coarsest level",
                coarse.diameter() / 2.0
            )));
        }
        let centers = center_stride(coarse.cell_count(), config.centers)
            .into_iter()
            .map(|c| (c, coarse.center(c).to_vec()))
            .collect();
        Ok(Self { spec, graphs, radius, centers, config: config.clone(), exec })
    }

    pub fn levels(&self) -> Vec<u32> {
        self.graphs.iter().map(|g| g.level()).collect()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn spec(&self) -> &FractalSpec {
        &self.spec
    }

    pub fn center_cells(&self) -> Vec<usize> {
        self.centers.iter().map(|c| c.0).collect()
    }

    /// Restricts the study to its first `count` levels.
    pub fn truncated(&self, count: usize) -> Result<Self, ScalingError> {
        if count < MIN_LEVELS {
            return Err(ScalingError::InsufficientLevels { needed: MIN_LEVELS, got: count });
        }
        Ok(Self {
            spec: self.spec.clone(),
            graphs: self.graphs[..count.min(self.graphs.len())].to_vec(),
            radius: self.radius,
            centers: self.centers.clone(),
            config: self.config.clone(),
            exec: self.exec,
        })
    }

    pub fn fit(&self, p: f64) -> Result<ScalingFit, ScalingError> {
        let jobs: Vec<(usize, usize)> =
            (0..self.graphs.len()).flat_map(|l| (0..self.centers.len()).map(move |c| (l, c))).collect();
        let results = par::try_map(self.exec, &jobs, |&(l, c)| {
            annulus_modulus(&self.graphs[l], &self.centers[c].1, self.radius, p, self.config.tol).map(|r| {
                CenterSample {
                    center_cell: self.centers[c].0,
                    modulus: r.value,
                    slack: r.certificate.slack,
                    iterations: r.iterations,
                }
            })
        })?;
        let per_level = self.centers.len();
        let mut samples = Vec::with_capacity(self.graphs.len());
        let mut xs = Vec::with_capacity(results.len());
        let mut ys = Vec::with_capacity(results.len());
        for (l, chunk) in results.chunks(per_level).enumerate() {
            let g = &self.graphs[l];
            let eps_over_r = g.cell_diameter() / self.radius;
            for s in chunk {
                if !(s.modulus > 0.0) {
                    return Err(ScalingError::BadAnnulus(format!(
                        "zero modulus at level {} center {}",
                        g.level(),
                        s.center_cell
                    )));
                }
                xs.push(eps_over_r.ln());
                ys.push(s.modulus.ln());
            }
            let mean = (chunk.iter().map(|s| s.modulus.ln()).sum::<f64>() / chunk.len() as f64).exp();
            let slack = chunk.iter().map(|s| s.slack).fold(f64::INFINITY, f64::min);
            samples.push(LevelSample { level: g.level(), eps_over_r, modulus: mean, slack, centers: chunk.to_vec() });
        }
        let line = least_squares(&xs, &ys);
        let level_ratios = samples.windows(2).map(|w| w[1].modulus / w[0].modulus).collect();
        Ok(ScalingFit {
            spec: self.spec.name.clone(),
            p,
            radius: self.radius,
            samples,
            slope: line.slope,
            intercept: line.intercept,
            r2: line.r2,
            slope_stderr: line.slope_stderr,
            beta_p: line.slope + self.spec.hausdorff_dim(),
            level_ratios,
        })
    }
}

/// Scaling fit of the annular modulus at one exponent.
pub fn fit_exponent(
    spec: &FractalSpec,
    p: f64,
    levels: std::ops::RangeInclusive<u32>,
    config: &ScalingConfig,
    exec: Execution,
) -> Result<ScalingFit, ScalingError> {
    ScalingStudy::new(spec, levels, config, exec)?.fit(p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeSample {
    pub p: f64,
    pub slope: f64,
    pub slope_stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfDimEstimate {
    pub spec: String,
    /// Midpoint of the final bisection bracket; `P_FLOOR` when clamped there.
    pub q_estimate: f64,
    /// Final bisection bracket with `slope(p_low) <= 0 <= slope(p_high)`.
    pub bracket: (f64, f64),
    /// Where `slope -/+ stderr` vanish: the fit uncertainty of the root.
    pub uncertainty: (f64, f64),
    /// The slope was still positive at the floor `P_FLOOR`.
    pub clamped_at_floor: bool,
    pub per_p_slopes: Vec<SlopeSample>,
    pub levels_used: (u32, u32),
}

impl ConfDimEstimate {
    /// Width of the fit-uncertainty bracket.
    pub fn bracket_width(&self) -> f64 {
        self.uncertainty.1 - self.uncertainty.0
    }
}

/// Bisection for the root of `p -> slope(p)` on a prepared study.
pub fn estimate_confdim_on(
    study: &ScalingStudy,
    p_bracket: (f64, f64),
    bisect_tol: f64,
) -> Result<ConfDimEstimate, ScalingError> {
    let mut evals: Vec<SlopeSample> = Vec::new();
    let mut slope_at = |p: f64| -> Result<SlopeSample, ScalingError> {
        if let Some(s) = evals.iter().find(|s| s.p == p) {
            return Ok(s.clone());
        }
        let fit = study.fit(p)?;
        let s = SlopeSample { p, slope: fit.slope, slope_stderr: fit.slope_stderr };
        evals.push(s.clone());
        Ok(s)
    };
    let d_h = study.spec.hausdorff_dim();
    let ceiling = d_h + 1.0;
    let (mut lo, mut hi) = (p_bracket.0.max(P_FLOOR), p_bracket.1.min(ceiling).max(p_bracket.0.max(P_FLOOR)));
    let levels = study.levels();
    let levels_used = (levels[0], *levels.last().expect("levels"));
    let finish = |q: f64, bracket: (f64, f64), uncertainty: (f64, f64), clamped: bool, evals: Vec<SlopeSample>| {
        let mut per_p_slopes = evals;
        per_p_slopes.sort_by(|a, b| a.p.total_cmp(&b.p));
        ConfDimEstimate {
            spec: study.spec.name.clone(),
            q_estimate: q,
            bracket,
            uncertainty,
            clamped_at_floor: clamped,
            per_p_slopes,
            levels_used,
        }
    };

    let mut s_lo = slope_at(lo)?;
    if s_lo.slope > 0.0 && lo > P_FLOOR {
        lo = P_FLOOR;
        s_lo = slope_at(lo)?;
    }
    if s_lo.slope > 0.0 {
        drop(slope_at);
        return Ok(finish(P_FLOOR, (P_FLOOR, P_FLOOR), (1.0, P_FLOOR), true, evals));
    }
    let mut s_hi = slope_at(hi)?;
    if s_hi.slope < 0.0 && hi < ceiling {
        hi = ceiling;
        s_hi = slope_at(hi)?;
    }
    if s_hi.slope < 0.0 {
        return Err(ScalingError::BracketFailure { p_low: lo, p_high: hi, slope_low: s_lo.slope, slope_high: s_hi.slope });
    }
    while hi - lo >= bisect_tol {
        let mid = 0.5 * (lo + hi);
        let s = slope_at(mid)?;
        if s.slope <= 0.0 {
            lo = mid;
            s_lo = s;
        } else {
            hi = mid;
            s_hi = s;
        }
    }
    drop(slope_at);
    let q = 0.5 * (lo + hi);
    // linearize slope near the root: q +- stderr / slope'
    let deriv = if hi > lo { (s_hi.slope - s_lo.slope) / (hi - lo) } else { f64::NAN };
    let se = 0.5 * (s_lo.slope_stderr + s_hi.slope_stderr);
    let half = if deriv.is_finite() && deriv > 0.0 { se / deriv } else { f64::INFINITY };
    Ok(finish(q, (lo, hi), (q - half, q + half), false, evals))
}

/// Critical exponent of the annular-modulus scaling.
pub fn estimate_confdim(
    spec: &FractalSpec,
    levels: std::ops::RangeInclusive<u32>,
    p_bracket: (f64, f64),
    bisect_tol: f64,
    config: &ScalingConfig,
    exec: Execution,
) -> Result<ConfDimEstimate, ScalingError> {
    estimate_confdim_on(&ScalingStudy::new(spec, levels, config, exec)?, p_bracket, bisect_tol)
}

/// An adjacent pair of grid exponents whose slopes decrease beyond fit noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonMonotoneSlope {
    pub p_low: f64,
    pub p_high: f64,
    pub slope_low: f64,
    pub slope_high: f64,
    /// Allowed drop: twice the combined standard error.
    pub allowance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub spec: String,
    pub rows: Vec<SlopeSample>,
    pub flags: Vec<NonMonotoneSlope>,
}

impl MonotonicityReport {
    /// Slopes strictly increase along the grid.
    pub fn strictly_increasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].slope > w[0].slope)
    }
}

pub fn slope_monotonicity_on(study: &ScalingStudy, p_grid: &[f64]) -> Result<MonotonicityReport, ScalingError> {
    if p_grid.windows(2).any(|w| w[1] <= w[0]) || p_grid.iter().any(|&p| !(p > 1.0)) {
        return Err(ScalingError::BadAnnulus("p grid must be sorted, distinct and above 1".into()));
    }
    let mut rows = Vec::with_capacity(p_grid.len());
    for &p in p_grid {
        let fit = study.fit(p)?;
        rows.push(SlopeSample { p, slope: fit.slope, slope_stderr: fit.slope_stderr });
    }
    let flags = rows
        .windows(2)
        .filter_map(|w| {
            let allowance = 2.0 * (w[0].slope_stderr.powi(2) + w[1].slope_stderr.powi(2)).sqrt();
            (w[1].slope < w[0].slope - allowance).then(|| NonMonotoneSlope {
                p_low: w[0].p,
                p_high: w[1].p,
                slope_low: w[0].slope,
                slope_high: w[1].slope,
                allowance,
            })
        })
        .collect();
    Ok(MonotonicityReport { spec: study.spec.name.clone(), rows, flags })
}

pub fn slope_monotonicity_report(
    spec: &FractalSpec,
    p_grid: &[f64],
    levels: std::ops::RangeInclusive<u32>,
    config: &ScalingConfig,
    exec: Execution,
) -> Result<MonotonicityReport, ScalingError> {
    slope_monotonicity_on(&ScalingStudy::new(spec, levels, config, exec)?, p_grid)
}
