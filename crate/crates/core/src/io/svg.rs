use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::table::ExperimentTable;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub column: String,
    pub label: String,
    pub dotted: bool,
}

impl PlotSeries {
    pub fn solid(column: &str) -> Self {
        Self {
            column: column.into(),
            label: column.into(),
            dotted: false,
        }
    }

    pub fn dotted(column: &str) -> Self {
        Self {
            dotted: true,
            ..Self::solid(column)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    pub title: String,
    pub x_column: String,
    pub series: Vec<PlotSeries>,
    pub y_scale: Scale,
    pub y_label: String,
    /// Horizontal reference line (e.g. 1 for eigenvalues).
    pub reference_line: Option<f64>,
    pub width: f64,
    pub height: f64,
}

impl PlotSpec {
    pub fn new(title: &str, x_column: &str, series: Vec<PlotSeries>) -> Self {
        Self {
            title: title.into(),
            x_column: x_column.into(),
            series,
            y_scale: Scale::Linear,
            y_label: String::new(),
            reference_line: None,
            width: 640.0,
            height: 420.0,
        }
    }

    /// Median congruence eigenvalues against `m` with the identity line.
    pub fn convergence_eigenvalues() -> Self {
        Self {
            y_label: "eigenvalue".into(),
            reference_line: Some(1.0),
            ..Self::new(
                "Congruence eigenvalues",
                "m",
                vec![PlotSeries::solid("lambda_max_median"), PlotSeries::solid("lambda_min_median")],
            )
        }
    }

    /// Median bootstrap variance against the theoretical CRB, log scale.
    pub fn convergence_variance() -> Self {
        Self {
            y_label: "variance".into(),
            y_scale: Scale::Log,
            ..Self::new(
                "Variance and CRB",
                "m",
                vec![
                    PlotSeries::solid("var_f_median"),
                    PlotSeries::dotted("crb_f_median"),
                    PlotSeries::solid("var_att_median"),
                    PlotSeries::dotted("crb_att_median"),
                ],
            )
        }
    }

    /// Both PLD subsets' variance with dotted CRB curves, log scale.
    pub fn subset_variance() -> Self {
        let mut series = Vec::new();
        for set in ["set1", "set2"] {
            for p in ["f", "att"] {
                series.push(PlotSeries::solid(&format!("{set}_var_{p}")));
                series.push(PlotSeries::dotted(&format!("{set}_crb_{p}")));
            }
        }
        Self {
            y_label: "variance".into(),
            y_scale: Scale::Log,
            ..Self::new("Subset variance and CRB", "m", series)
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-3..1e5).contains(&a) {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.1e}")
    }
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn transform(&self, v: f64) -> f64 {
        if self.log {
            v.log10()
        } else {
            v
        }
    }

    fn fraction(&self, v: f64) -> f64 {
        (self.transform(v) - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            (self.lo.ceil() as i32..=self.hi.floor() as i32)
                .map(|e| 10f64.powi(e))
                .collect()
        } else {
            (0..=4).map(|i| self.lo + (self.hi - self.lo) * i as f64 / 4.0).collect()
        }
    }

    fn fit(values: &[f64], log: bool) -> Axis {
        let t: Vec<f64> = values.iter().map(|&v| if log { v.log10() } else { v }).collect();
        let (mut lo, mut hi) = t
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if log {
            lo = lo.floor();
            hi = hi.ceil();
            if hi <= lo {
                hi = lo + 1.0;
            }
        } else {
            let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 * lo.abs().max(1.0) };
            lo -= pad;
            hi += pad;
        }
        Axis { lo, hi, log }
    }
}

/// Render a line plot of table columns as a standalone SVG document.
///
/// Missing cells break the line. On a log axis, non-positive values are
/// clamped to the axis floor and listed in an XML comment.
pub fn render_lineplot_svg(table: &ExperimentTable, spec: &PlotSpec) -> Result<String> {
    if spec.series.is_empty() {
        return Err(Error::InvalidInput("plot needs at least one series".into()));
    }
    let x = table.column(&spec.x_column)?;
    let ys = spec
        .series
        .iter()
        .map(|s| table.column(&s.column))
        .collect::<Result<Vec<_>>>()?;
    let log = spec.y_scale == Scale::Log;

    let xs_valid: Vec<f64> = x.iter().copied().filter(|v| v.is_finite()).collect();
    let x_axis = Axis::fit(&xs_valid, false);
    let mut y_valid: Vec<f64> = ys
        .iter()
        .flatten()
        .copied()
        .filter(|v| v.is_finite() && (!log || *v > 0.0))
        .collect();
    if let Some(r) = spec.reference_line {
        if !log || r > 0.0 {
            y_valid.push(r);
        }
    }
    let y_axis = Axis::fit(&y_valid, log);
    let floor = 10f64.powf(y_axis.lo);

    let (w, h) = (spec.width, spec.height);
    let (left, right, top, bottom) = (70.0, 160.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let px = |v: f64| left + x_axis.fraction(v) * pw;
    let py = |v: f64| top + (1.0 - y_axis.fraction(v)) * ph;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        left + pw / 2.0,
        escape(&spec.title)
    );
    let _ = writeln!(
        out,
        r#"<rect x="{left}" y="{top}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
    );
    for t in x_axis.ticks() {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            px(t),
            top + ph + 18.0,
            tick_label(t)
        );
    }
    for t in y_axis.ticks() {
        let _ = writeln!(
            out,
            r##"<line x1="{left}" x2="{:.2}" y1="{y:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            left + pw,
            left - 6.0,
            py(t) + 4.0,
            tick_label(t),
            y = py(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 12.0,
        escape(&spec.x_column)
    );
    let _ = writeln!(
        out,
        r#"<text transform="translate(16 {:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
        top + ph / 2.0,
        escape(&spec.y_label)
    );
    if let Some(r) = spec.reference_line.filter(|&r| !log || r > 0.0) {
        let _ = writeln!(
            out,
            r#"<line x1="{left}" x2="{:.2}" y1="{y:.2}" y2="{y:.2}" stroke="gray" stroke-dasharray="6,4"/>"#,
            left + pw,
            y = py(r)
        );
    }

    for (i, (s, y)) in spec.series.iter().zip(&ys).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let dash = if s.dotted { r#" stroke-dasharray="2,3""# } else { "" };
        let mut segments: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
        for (row, (&xv, &yv)) in x.iter().zip(y).enumerate() {
            if !xv.is_finite() || !yv.is_finite() {
                if !segments.last().expect("non-empty").is_empty() {
                    segments.push(Vec::new());
                }
                continue;
            }
            let yv = if log && yv <= 0.0 {
                let _ = writeln!(out, "<!-- clamped {} row {row} value {yv} -->", escape(&s.column));
                floor
            } else {
                yv
            };
            segments.last_mut().expect("non-empty").push((px(xv), py(yv)));
        }
        for seg in segments.iter().filter(|s| !s.is_empty()) {
            let pts: Vec<String> = seg.iter().map(|(a, b)| format!("{a:.2},{b:.2}")).collect();
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
                pts.join(" ")
            );
        }
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.2}" x2="{:.2}" y1="{ly:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="1.5"{dash}/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 24.0,
            lx + 30.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn emit_lineplot_svg(table: &ExperimentTable, spec: &PlotSpec, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let svg = render_lineplot_svg(table, spec)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::table::{Column, UNIT_COUNT, UNIT_NONE};

    fn table() -> ExperimentTable {
        let mut t = ExperimentTable::new(vec![
            Column::new("m", UNIT_COUNT),
            Column::new("a", UNIT_NONE),
            Column::new("b", UNIT_NONE),
        ]);
        for (m, a, b) in [(2.0, 1.0, 0.5), (3.0, f64::NAN, 0.2), (4.0, 0.7, -1.0), (5.0, 0.9, 0.01)] {
            t.push_row(vec![m, a, b]).unwrap();
        }
        t
    }

    #[test]
    fn deterministic_and_well_formed() {
        let spec = PlotSpec::new("t <&>", "m", vec![PlotSeries::solid("a"), PlotSeries::dotted("b")]);
        let a = render_lineplot_svg(&table(), &spec).unwrap();
        assert_eq!(a, render_lineplot_svg(&table(), &spec).unwrap());
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains("t &lt;&amp;&gt;"));
        assert!(a.contains("stroke-dasharray=\"2,3\""));
        // NaN splits series a into two polylines; b stays whole
        assert_eq!(a.matches("<polyline").count(), 3);
    }

    #[test]
    fn log_scale_clamps_non_positive() {
        let mut spec = PlotSpec::new("log", "m", vec![PlotSeries::solid("b")]);
        spec.y_scale = Scale::Log;
        spec.reference_line = Some(1.0);
        let s = render_lineplot_svg(&table(), &spec).unwrap();
        assert!(s.contains("<!-- clamped b row 2 value -1 -->"));
        assert!(s.contains("stroke-dasharray=\"6,4\""));
    }

    #[test]
    fn missing_column_is_reported() {
        let spec = PlotSpec::new("x", "m", vec![PlotSeries::solid("zzz")]);
        assert!(matches!(render_lineplot_svg(&table(), &spec), Err(Error::ColumnMissing(c)) if c == "zzz"));
    }
}
