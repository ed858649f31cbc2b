//! Deterministic SVG line charts.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::sweep::ResultRow;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const BASELINE_COLOR: &str = "#1f4fd8";
const PALETTE: &[&str] = &[
    "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf", "#7f7f7f",
];

/// Linear data-to-pixel mapping for one chart.
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new((x0, x1): (f64, f64), (y0, y1): (f64, f64)) -> Self {
        let pad = |a: f64, b: f64| if b > a { (a, b) } else { (a - 1.0, b + 1.0) };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        out,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, xlabel: &str, ylabel: &str) {
    let (l, r, t, b) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(out, r#"<g class="axes" stroke="black" fill="none">"#);
    let _ = writeln!(
        out,
        r#"<line x1="{l:.2}" y1="{b:.2}" x2="{r:.2}" y2="{b:.2}"/>"#
    );
    let _ = writeln!(
        out,
        r#"<line x1="{l:.2}" y1="{t:.2}" x2="{l:.2}" y2="{b:.2}"/>"#
    );
    let _ = writeln!(out, "</g>");
    for i in 0..=4 {
        let fx = f.x0 + (f.x1 - f.x0) * i as f64 / 4.0;
        let fy = f.y0 + (f.y1 - f.y0) * i as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="10">{}</text>"#,
            f.px(fx),
            b + 15.0,
            tick(fx)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="10">{}</text>"#,
            l - 5.0,
            f.py(fy) + 3.0,
            tick(fy)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="12">{}</text>"#,
        (l + r) / 2.0,
        HEIGHT - 12.0,
        escape(xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.2}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {:.2})">{}</text>"#,
        (t + b) / 2.0,
        (t + b) / 2.0,
        escape(ylabel)
    );
}

fn tick(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn polyline(
    out: &mut String,
    f: &Frame,
    pts: &[(f64, f64)],
    color: &str,
    class: &str,
    label: &str,
) {
    let coords: Vec<String> = pts
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline class="{class}" data-label="{}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
        escape(label),
        coords.join(" ")
    );
}

fn series_label(r: &ResultRow) -> String {
    if r.mode == "feedback" {
        let on = |b: bool| if b { "on" } else { "off" };
        format!("feedback decay={} softmax={}", on(r.decay), on(r.softmax))
    } else if r.static_decay {
        "feedforward static-decay".into()
    } else {
        "feedforward".into()
    }
}

/// f1 against σ, or against D for train-size sweeps, one series per model
/// variant averaged over replicates, with the random baseline as a blue
/// horizontal line. Returns the SVG and any warnings.
pub fn render_sweep_svg(rows: &[ResultRow]) -> (String, Vec<String>) {
    let mut warnings = Vec::new();
    let by_d = rows.iter().any(|r| r.experiment == "trainsize");
    let x_of = |r: &ResultRow| if by_d { r.d_train as f64 } else { r.sigma };
    let mut series: BTreeMap<String, BTreeMap<u64, (f64, f64, usize)>> = BTreeMap::new();
    let mut baseline = Vec::new();
    for r in rows {
        if r.is_baseline() {
            baseline.push(r.mean_f1);
            continue;
        }
        let x = x_of(r);
        let e = series
            .entry(series_label(r))
            .or_default()
            .entry(x.to_bits())
            .or_insert((x, 0.0, 0));
        e.1 += r.mean_f1;
        e.2 += 1;
    }
    if rows.is_empty() {
        warnings.push("no rows to plot; writing empty axes".into());
    }
    let xs: Vec<f64> = rows.iter().map(x_of).collect();
    let xr = if xs.is_empty() {
        (0.0, 10.0)
    } else {
        (
            xs.iter().cloned().fold(f64::INFINITY, f64::min),
            xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        )
    };
    let f = Frame::new(xr, (0.0, 1.0));
    let mut out = String::new();
    header(
        &mut out,
        if by_d {
            "f1 vs training set size"
        } else {
            "f1 vs noise level"
        },
    );
    axes(&mut out, &f, if by_d { "D" } else { "sigma" }, "f1");
    for (i, (label, pts)) in series.iter().enumerate() {
        let mut p: Vec<(f64, f64)> = pts.values().map(|&(x, s, n)| (x, s / n as f64)).collect();
        p.sort_by(|a, b| a.0.total_cmp(&b.0));
        polyline(
            &mut out,
            &f,
            &p,
            PALETTE[i % PALETTE.len()],
            "series",
            label,
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" fill="{}">{}</text>"#,
            LEFT + 10.0,
            TOP + 12.0 * (i + 1) as f64,
            PALETTE[i % PALETTE.len()],
            escape(label)
        );
    }
    if !baseline.is_empty() {
        let y = baseline.iter().sum::<f64>() / baseline.len() as f64;
        let _ = writeln!(
            out,
            r#"<line class="baseline" data-f1="{y}" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{BASELINE_COLOR}" stroke-width="1.5"/>"#,
            LEFT,
            f.py(y),
            WIDTH - RIGHT,
            f.py(y)
        );
    }
    out.push_str("</svg>\n");
    (out, warnings)
}

/// One polyline per instance over timesteps plus the feedforward overlay as
/// a flat polyline at its mean projection.
pub fn render_pca_svg(series: &[Vec<f64>], feedforward: Option<f64>, explained: f64) -> String {
    let t_max = series.iter().map(|s| s.len()).max().unwrap_or(1).max(1) as f64;
    let all: Vec<f64> = series
        .iter()
        .flatten()
        .cloned()
        .chain(feedforward)
        .collect();
    let yr = if all.is_empty() {
        (0.0, 1.0)
    } else {
        (
            all.iter().cloned().fold(f64::INFINITY, f64::min),
            all.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        )
    };
    let f = Frame::new((1.0, t_max), yr);
    let mut out = String::new();
    header(
        &mut out,
        &format!(
            "strongest principal component ({:.1}% of variance)",
            100.0 * explained
        ),
    );
    axes(&mut out, &f, "timestep", "projection");
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<(f64, f64)> = s
            .iter()
            .enumerate()
            .map(|(t, &p)| ((t + 1) as f64, p))
            .collect();
        polyline(
            &mut out,
            &f,
            &pts,
            PALETTE[i % PALETTE.len()],
            "instance",
            &format!("instance {i}"),
        );
    }
    if let Some(y) = feedforward {
        polyline(
            &mut out,
            &f,
            &[(1.0, y), (t_max, y)],
            "#000000",
            "feedforward",
            "feedforward",
        );
    }
    out.push_str("</svg>\n");
    out
}
