//! Static SVG line plots of the metric table: one file per
//! (channel, region, metric) with lead time on x and one series per source.
//!
//! Every marker carries `data-lead` and `data-value` attributes holding the
//! table cells verbatim, so plots can be checked against the CSV exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::grid::Channel;
use crate::report::{read_metrics_csv, CsvRow, ReportError};
use crate::verify::Metric;

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 90.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 46.0;
const BOTTOM: f64 = 56.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: ReportError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub lead_hours: u32,
    pub value: f64,
    pub value_text: String,
}

/// Points of one panel, keyed by series label.
pub type Panel = BTreeMap<String, Vec<Point>>;

/// Panel key: (channel flat index, region, metric); sorted deterministically.
pub fn group_rows(rows: &[CsvRow]) -> BTreeMap<(usize, String, Metric), Panel> {
    let mut panels: BTreeMap<(usize, String, Metric), Panel> = BTreeMap::new();
    for row in rows {
        panels
            .entry((row.channel.flat_index(), row.region.clone(), row.metric))
            .or_default()
            .entry(row.source.clone())
            .or_default()
            .push(Point { lead_hours: row.lead_hours, value: row.value, value_text: row.value_text.clone() });
    }
    for panel in panels.values_mut() {
        for points in panel.values_mut() {
            points.sort_by_key(|p| p.lead_hours);
        }
    }
    panels
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// `<channel>_<region>_<metric>.svg`
pub fn plot_file_name(channel: Channel, region: &str, metric: Metric) -> String {
    format!("{}_{}_{}.svg", channel.name(), sanitize(region), metric.name())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Roughly five round tick values spanning `[lo, hi]`.
fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

/// Renders one panel. Output depends only on the arguments.
pub fn render_svg(channel: Channel, region: &str, metric: Metric, panel: &Panel) -> String {
    let points = panel.values().flatten();
    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x_lo = x_lo.min(p.lead_hours as f64);
        x_hi = x_hi.max(p.lead_hours as f64);
        if p.value.is_finite() {
            y_lo = y_lo.min(p.value);
            y_hi = y_hi.max(p.value);
        }
    }
    if !x_lo.is_finite() {
        (x_lo, x_hi) = (0.0, 24.0);
    }
    if x_hi - x_lo < 1.0 {
        (x_lo, x_hi) = (x_lo - 12.0, x_hi + 12.0);
    }
    if !y_lo.is_finite() {
        (y_lo, y_hi) = (0.0, 1.0);
    }
    let pad = if y_hi > y_lo { 0.05 * (y_hi - y_lo) } else { 0.05 * y_hi.abs().max(1.0) };
    let (y_lo, y_hi) = (y_lo - pad, y_hi + pad);

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| TOP + (y_hi - y) / (y_hi - y_lo) * plot_h;

    let (_, units) = channel.variable().display_units();
    let y_label = match metric {
        Metric::Rmse => format!("RMSE ({units})"),
        Metric::Acc => "ACC".to_string(),
    };
    let title = format!("{} {} {}", channel.name(), region, metric.name());

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(&title)
    );

    // axes and grid
    let _ = writeln!(svg, r##"<g stroke="#444" fill="none">"##);
    let _ = writeln!(svg, r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}"/>"#);
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, r##"<g class="y-ticks" stroke="#ddd">"##);
    for t in nice_ticks(y_lo, y_hi) {
        let y = sy(t);
        let _ = writeln!(svg, r#"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}"/>"#, LEFT + plot_w);
        let _ = writeln!(
            svg,
            r##"<text x="{:.2}" y="{:.2}" text-anchor="end" stroke="none" fill="#222">{}</text>"##,
            LEFT - 6.0,
            y + 4.0,
            tick_label(t)
        );
    }
    let _ = writeln!(svg, "</g>");
    let mut leads: Vec<u32> = panel.values().flatten().map(|p| p.lead_hours).collect();
    leads.sort_unstable();
    leads.dedup();
    let x_ticks: Vec<f64> = if leads.len() <= 12 {
        leads.iter().map(|&l| l as f64).collect()
    } else {
        nice_ticks(x_lo, x_hi)
    };
    let _ = writeln!(svg, r##"<g class="x-ticks" fill="#222">"##);
    for t in x_ticks {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            sx(t),
            TOP + plot_h + 18.0,
            tick_label(t)
        );
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">lead time (h)</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 14.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">{}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0,
        escape(&y_label)
    );

    for (k, (label, pts)) in panel.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let finite: Vec<&Point> = pts.iter().filter(|p| p.value.is_finite()).collect();
        let _ = writeln!(svg, r#"<g class="series" data-label="{}">"#, escape(label));
        if finite.len() >= 2 {
            let coords: Vec<String> = finite
                .iter()
                .map(|p| format!("{:.2},{:.2}", sx(p.lead_hours as f64), sy(p.value)))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                coords.join(" ")
            );
        }
        for p in &finite {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}" data-lead="{}" data-value="{}"><title>{} {} h: {}</title></circle>"#,
                sx(p.lead_hours as f64),
                sy(p.value),
                p.lead_hours,
                escape(&p.value_text),
                escape(label),
                p.lead_hours,
                escape(&p.value_text)
            );
        }
        let _ = writeln!(svg, "</g>");

        let ly = TOP + 10.0 + 20.0 * k as f64;
        let lx = LEFT + plot_w + 16.0;
        let _ = writeln!(
            svg,
            r#"<g class="legend"><line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><circle cx="{:.2}" cy="{ly:.2}" r="3.5" fill="{color}"/><text x="{:.2}" y="{:.2}">{}</text></g>"#,
            lx + 24.0,
            lx + 12.0,
            lx + 30.0,
            ly + 4.0,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Reads a metric table and writes one SVG per panel into `out_dir`.
/// Returns the written paths in panel order.
pub fn emit_plots(csv_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, PlotError> {
    let file = File::open(csv_path).map_err(|source| PlotError::Io { path: csv_path.into(), source })?;
    let rows = read_metrics_csv(BufReader::new(file))
        .map_err(|source| PlotError::Csv { path: csv_path.into(), source })?;
    std::fs::create_dir_all(out_dir).map_err(|source| PlotError::Io { path: out_dir.into(), source })?;
    let mut written = Vec::new();
    for ((flat, region, metric), panel) in group_rows(&rows) {
        let channel = Channel::from_flat(flat).expect("parsed channels are legal");
        let path = out_dir.join(plot_file_name(channel, &region, metric));
        let svg = render_svg(channel, &region, metric, &panel);
        std::fs::write(&path, svg).map_err(|source| PlotError::Io { path: path.clone(), source })?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(series: &[(&str, &[(u32, f64)])]) -> Panel {
        series
            .iter()
            .map(|(label, pts)| {
                let pts = pts
                    .iter()
                    .map(|&(l, v)| Point { lead_hours: l, value: v, value_text: crate::report::format_value(v) })
                    .collect();
                (label.to_string(), pts)
            })
            .collect()
    }

    fn z500() -> Channel {
        "Z500".parse().unwrap()
    }

    #[test]
    fn single_lead_has_markers_only() {
        let p = panel(&[("gfs", &[(24, 1.0)]), ("grapes", &[(24, 2.0)])]);
        let svg = render_svg(z500(), "global", Metric::Rmse, &p);
        assert!(!svg.contains("<polyline"));
        assert_eq!(svg.matches("data-value=").count(), 2);
    }

    #[test]
    fn identical_series_get_distinct_legend_entries() {
        let pts: &[(u32, f64)] = &[(24, 1.0), (48, 2.0), (72, 3.0)];
        let p = panel(&[("a", pts), ("b", pts)]);
        let svg = render_svg(z500(), "global", Metric::Acc, &p);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches(r#"class="legend""#).count(), 2);
        assert!(svg.contains(">a</text>") && svg.contains(">b</text>"));
        assert!(svg.contains(PALETTE[0]) && svg.contains(PALETTE[1]));
        assert_eq!(svg, render_svg(z500(), "global", Metric::Acc, &p));
    }

    #[test]
    fn file_names() {
        assert_eq!(plot_file_name(z500(), "east_asia", Metric::Acc), "Z500_east_asia_ACC.svg");
        assert_eq!(plot_file_name("MSLP".parse().unwrap(), "a b", Metric::Rmse), "MSLP_a_b_RMSE.svg");
    }

    #[test]
    fn ticks_cover_range() {
        let t = nice_ticks(0.0, 1.0);
        assert_eq!(t.first(), Some(&0.0));
        assert!(t.len() >= 4 && t.len() <= 11);
        let t = nice_ticks(-3.7, 812.0);
        assert!(t.iter().all(|v| *v >= -3.7 && *v <= 812.0));
    }
}
