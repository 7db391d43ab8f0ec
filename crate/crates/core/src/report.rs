//! Machine-readable outputs: JSON envelopes, CSV tables and SVG plots.
//!
//! Everything here is a pure function of its input so identical runs give
//! byte-identical files.

use serde::Serialize;

use crate::energy::{AxiomReport, EnergyMeasure};
use crate::modulus::{ModulusResult, SolveMethod};
use crate::scaling::ScalingFit;
use crate::singularity::{ConcentrationReport, ProductDemoReport};

pub const SCHEMA_VERSION: &str = "v1";
pub use crate::TOOL_VERSION;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Top-level JSON document written by every command.
#[derive(Clone, Debug, Serialize)]
pub struct Envelope<'a, C: Serialize, R: Serialize> {
    pub schema: &'static str,
    pub tool_version: &'static str,
    pub command: &'a str,
    pub config: &'a C,
    /// Set when a solver stopped early; `result` then holds what finished.
    pub partial: bool,
    pub result: &'a R,
}

impl<'a, C: Serialize, R: Serialize> Envelope<'a, C, R> {
    pub fn new(command: &'a str, config: &'a C, result: &'a R) -> Self {
        Self { schema: SCHEMA_VERSION, tool_version: TOOL_VERSION, command, config, partial: false, result }
    }

    pub fn partial(mut self, partial: bool) -> Self {
        self.partial = partial;
        self
    }

    pub fn to_json(&self) -> Result<String, ReportError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// One modulus solve as a flat record.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModulusRecord {
    pub spec: String,
    pub level: u32,
    pub family: String,
    pub p: f64,
    pub value: f64,
    pub iterations: usize,
    pub slack: f64,
    pub duality_gap: f64,
    pub lower_bound: f64,
    pub method: SolveMethod,
}

impl ModulusRecord {
    pub fn new(spec: &str, level: u32, family: &str, result: &ModulusResult) -> Self {
        Self {
            spec: spec.to_string(),
            level,
            family: family.to_string(),
            p: result.p,
            value: result.value,
            iterations: result.iterations,
            slack: result.certificate.slack,
            duality_gap: result.certificate.duality_gap,
            lower_bound: result.certificate.lower_bound,
            method: result.method,
        }
    }
}

/// Serializes rows with a header line taken from the field names.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| ReportError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingRow {
    pub spec: String,
    pub p: f64,
    pub level: u32,
    pub eps_over_r: f64,
    pub modulus: f64,
    pub slack: f64,
}

/// Columns `spec,p,level,eps_over_r,modulus,slack`, one row per level and fit.
pub fn scaling_rows(fits: &[ScalingFit]) -> Vec<ScalingRow> {
    fits.iter()
        .flat_map(|f| {
            f.samples.iter().map(move |s| ScalingRow {
                spec: f.spec.clone(),
                p: f.p,
                level: s.level,
                eps_over_r: s.eps_over_r,
                modulus: s.modulus,
                slack: s.slack,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConcentrationCsvRow {
    pub spec: String,
    pub p: f64,
    pub level: u32,
    pub energy: f64,
    pub max_cell_ratio: f64,
    pub gini: f64,
    pub tv_distance: f64,
}

pub fn concentration_rows(reports: &[ConcentrationReport]) -> Vec<ConcentrationCsvRow> {
    reports
        .iter()
        .flat_map(|r| {
            r.rows.iter().map(move |row| ConcentrationCsvRow {
                spec: r.spec.clone(),
                p: r.p,
                level: row.level,
                energy: row.energy,
                max_cell_ratio: row.max_cell_ratio,
                gini: row.gini,
                tv_distance: row.tv_distance,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProductDemoCsvRow {
    pub spec_x: String,
    pub spec_y: String,
    pub p: f64,
    pub level: u32,
    pub mutual_tv: f64,
    pub tv_lambda_x_vs_uniform: f64,
    pub tv_lambda_y_vs_uniform: f64,
}

pub fn product_demo_rows(report: &ProductDemoReport) -> Vec<ProductDemoCsvRow> {
    report
        .rows
        .iter()
        .map(|r| ProductDemoCsvRow {
            spec_x: report.spec_x.clone(),
            spec_y: report.spec_y.clone(),
            p: report.p,
            level: r.level,
            mutual_tv: r.mutual_tv,
            tv_lambda_x_vs_uniform: r.tv_lambda_x_vs_uniform,
            tv_lambda_y_vs_uniform: r.tv_lambda_y_vs_uniform,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyCellRow {
    pub cell: usize,
    pub energy: f64,
}

/// Per-cell energy table of one energy measure.
pub fn energy_rows(measure: &EnergyMeasure) -> Vec<EnergyCellRow> {
    measure.cell_mass.iter().enumerate().map(|(cell, &energy)| EnergyCellRow { cell, energy }).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AxiomCsvRow {
    pub axiom: String,
    pub samples: usize,
    pub violations: usize,
    pub worst_residual: f64,
}

pub fn axiom_rows(report: &AxiomReport) -> Vec<AxiomCsvRow> {
    report
        .results
        .iter()
        .map(|r| AxiomCsvRow {
            axiom: serde_json::to_value(r.axiom)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_else(|| format!("{:?}", r.axiom)),
            samples: r.samples,
            violations: r.violations,
            worst_residual: r.worst_residual,
        })
        .collect()
}

/// One named polyline of a plot.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Minimal line plot with labeled axes, ticks and a legend.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (640.0, 420.0);
    let (l, r, t, b) = (70.0, 150.0, 40.0, 55.0);
    let pts = series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let sx = |x: f64| l + (x - x0) / (x1 - x0) * (w - l - r);
    let sy = |y: f64| h - b - (y - y0) / (y1 - y0) * (h - t - b);
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    out.push_str(&format!("<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"));
    out.push_str(&format!("<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n", w / 2.0, escape(title)));
    out.push_str(&format!(
        "<rect x=\"{l}\" y=\"{t}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>\n",
        w - l - r,
        h - t - b
    ));
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{fx:.3}</text>\n",
            sx(fx),
            h - b + 16.0
        ));
        out.push_str(&format!("<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{fy:.3}</text>\n", l - 6.0, sy(fy) + 4.0));
    }
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
        l + (w - l - r) / 2.0,
        h - 12.0,
        escape(x_label)
    ));
    out.push_str(&format!(
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>\n",
        t + (h - t - b) / 2.0,
        t + (h - t - b) / 2.0,
        escape(y_label)
    ));
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        out.push_str(&format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n", path.join(" ")));
        for pt in &path {
            let (cx, cy) = pt.split_once(',').expect("pair");
            out.push_str(&format!("<circle cx=\"{cx}\" cy=\"{cy}\" r=\"2.5\" fill=\"{color}\"/>\n"));
        }
        let ly = t + 14.0 + 18.0 * i as f64;
        out.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            w - r + 12.0,
            w - r + 32.0
        ));
        out.push_str(&format!("<text x=\"{:.1}\" y=\"{:.1}\">{}</text>\n", w - r + 38.0, ly + 4.0, escape(&s.name)));
    }
    out.push_str("</svg>\n");
    out
}

/// `log Mod` against `log(eps/r)`, one series per exponent.
pub fn scaling_svg(fits: &[ScalingFit]) -> String {
    let series: Vec<Series> = fits
        .iter()
        .map(|f| Series {
            name: format!("p = {}", f.p),
            points: f.samples.iter().map(|s| (s.eps_over_r.ln(), s.modulus.ln())).collect(),
        })
        .collect();
    let title = fits.first().map(|f| format!("annular modulus, {}", f.spec)).unwrap_or_default();
    line_plot_svg(&title, "log(eps / r)", "log Mod_p", &series)
}

/// tv distance against level for each report.
pub fn tv_svg(reports: &[ConcentrationReport]) -> String {
    let series: Vec<Series> = reports
        .iter()
        .map(|r| Series {
            name: format!("{} p = {}", r.spec, r.p),
            points: r.rows.iter().map(|row| (f64::from(row.level), row.tv_distance)).collect(),
        })
        .collect();
    line_plot_svg("energy measure vs reference measure", "level", "tv distance", &series)
}

pub fn product_demo_svg(report: &ProductDemoReport) -> String {
    let pick = |f: fn(&crate::singularity::ProductDemoRow) -> f64| -> Vec<(f64, f64)> {
        report.rows.iter().map(|r| (f64::from(r.level), f(r))).collect()
    };
    let series = vec![
        Series { name: "mutual".into(), points: pick(|r| r.mutual_tv) },
        Series { name: "L x mu vs uniform".into(), points: pick(|r| r.tv_lambda_x_vs_uniform) },
        Series { name: "mu x L vs uniform".into(), points: pick(|r| r.tv_lambda_y_vs_uniform) },
    ];
    line_plot_svg(&format!("{} x {}", report.spec_x, report.spec_y), "level", "tv distance", &series)
}
