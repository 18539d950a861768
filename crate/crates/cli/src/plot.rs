//! Native SVG budget-curve plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use afabench::datasets::DatasetId;
use afabench::harness::{CurveRow, MetricKind};
use anyhow::{bail, Context, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf", "#393b79", "#637939",
];

/// One method's curve.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub method: String,
    pub steps: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Metric kind for a dataset name; unknown names default to accuracy.
pub fn metric_for(dataset: &str) -> MetricKind {
    dataset
        .parse::<DatasetId>()
        .map(|id| id.metric())
        .unwrap_or(MetricKind::Accuracy)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders one plot: a polyline per series, error bars of ±1 std, a legend.
pub fn render_svg(title: &str, y_label: &str, series: &[Series]) -> Result<String> {
    if series.is_empty() {
        bail!("nothing to plot: no methods");
    }
    if series.iter().any(|s| s.steps.is_empty()) {
        bail!("nothing to plot: a method has no steps");
    }
    let max_step = series.iter().flat_map(|s| s.steps.iter()).copied().max().unwrap_or(1);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for (m, sd) in s.mean.iter().zip(&s.std) {
            lo = lo.min(m - sd);
            hi = hi.max(m + sd);
        }
    }
    if !(hi > lo) {
        lo -= 0.05;
        hi += 0.05;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let x_of = |step: usize| {
        if max_step <= 1 {
            LEFT + plot_w / 2.0
        } else {
            LEFT + plot_w * (step as f64 - 1.0) / (max_step as f64 - 1.0)
        }
    };
    let y_of = |v: f64| TOP + plot_h * (hi - v) / (hi - lo);

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )?;
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
    writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(title)
    )?;
    // Axes.
    let (x0, x1, y0, y1) = (LEFT, LEFT + plot_w, TOP + plot_h, TOP);
    writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#)?;
    writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#)?;
    for step in 1..=max_step {
        let x = x_of(step);
        writeln!(svg, r#"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{}" stroke="black"/>"#, y0 + 5.0)?;
        writeln!(svg, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{step}</text>"#, y0 + 19.0)?;
    }
    for k in 0..=5 {
        let v = lo + (hi - lo) * k as f64 / 5.0;
        let y = y_of(v);
        writeln!(svg, r#"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/>"#, x0 - 5.0)?;
        writeln!(
            svg,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.2}</text>"#,
            x0 - 8.0,
            y + 4.0
        )?;
    }
    writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">Acquired features</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 15.0
    )?;
    writeln!(
        svg,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        TOP + plot_h / 2.0,
        escape(y_label)
    )?;
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = s
            .steps
            .iter()
            .zip(&s.mean)
            .map(|(&t, &m)| format!("{:.2},{:.2}", x_of(t), y_of(m)))
            .collect();
        writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"><title>{}</title></polyline>"#,
            points.join(" "),
            escape(&s.method)
        )?;
        for ((&t, &m), &sd) in s.steps.iter().zip(&s.mean).zip(&s.std) {
            if sd > 0.0 {
                let x = x_of(t);
                writeln!(
                    svg,
                    r#"<line class="errorbar" x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{color}"/>"#,
                    y_of(m - sd),
                    y_of(m + sd)
                )?;
            }
        }
        let ly = TOP + 10.0 + 18.0 * k as f64;
        let lx = WIDTH - RIGHT + 15.0;
        writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        )?;
        writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&s.method))?;
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Groups rows by (dataset, classifier mode, budget) and writes one SVG per
/// group into `out_dir`, named `<dataset>_<mode>_b<budget>.svg`.
pub fn plot_curves(rows: &[CurveRow], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        bail!("curve file has no rows");
    }
    let mut groups: BTreeMap<(String, String, usize), BTreeMap<String, Vec<&CurveRow>>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.dataset.clone(), r.classifier_mode.clone(), r.budget))
            .or_default()
            .entry(r.method.clone())
            .or_default()
            .push(r);
    }
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut written = Vec::new();
    for ((dataset, mode, budget), methods) in groups {
        let series: Vec<Series> = methods
            .into_iter()
            .map(|(method, mut rs)| {
                rs.sort_by_key(|r| r.step);
                Series {
                    method,
                    steps: rs.iter().map(|r| r.step).collect(),
                    mean: rs.iter().map(|r| r.mean).collect(),
                    std: rs.iter().map(|r| r.std).collect(),
                }
            })
            .collect();
        let title = format!("{dataset} (budget {budget}, {mode} classifier)");
        let svg = render_svg(&title, metric_for(&dataset).label(), &series)?;
        let path = out_dir.join(format!("{dataset}_{mode}_b{budget}.svg"));
        fs::write(&path, svg).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}
