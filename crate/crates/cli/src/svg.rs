//! Minimal deterministic SVG plotter: line charts and bar charts with axes,
//! ticks and a small legend. No external plotting dependency; the figures
//! are regenerated byte-identically from the same data.

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

fn fmt(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if a >= 1000.0 || a < 0.001 {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        MARGIN_L + (v - self.x_min) / (self.x_max - self.x_min) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT - MARGIN_B
            - (v - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn pad_range(lo: f64, hi: f64) -> (f64, f64) {
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = (hi - lo) * 0.05;
        (lo - pad, hi + pad)
    }
}

fn axes(out: &mut String, frame: &Frame, title: &str, x_label: &str, y_label: &str) {
    use std::fmt::Write;
    let x0 = MARGIN_L;
    let x1 = WIDTH - MARGIN_R;
    let y0 = HEIGHT - MARGIN_B;
    let y1 = MARGIN_T;
    write!(
        out,
        r#"<rect x="{x0}" y="{y1}" width="{w}" height="{h}" fill="none" stroke="#333" stroke-width="1"/>"#,
        w = x1 - x0,
        h = y0 - y1
    )
    .unwrap();
    writeln!(out).unwrap();
    write!(
        out,
        r#"<text x="{tx}" y="22" font-size="15" text-anchor="middle" font-family="sans-serif">{title}</text>"#,
        tx = (x0 + x1) / 2.0
    )
    .unwrap();
    writeln!(out).unwrap();
    write!(
        out,
        r#"<text x="{tx}" y="{ty}" font-size="12" text-anchor="middle" font-family="sans-serif">{x_label}</text>"#,
        tx = (x0 + x1) / 2.0,
        ty = HEIGHT - 12.0
    )
    .unwrap();
    writeln!(out).unwrap();
    write!(
        out,
        r#"<text x="16" y="{ty}" font-size="12" text-anchor="middle" font-family="sans-serif" transform="rotate(-90 16 {ty})">{y_label}</text>"#,
        ty = (y0 + y1) / 2.0
    )
    .unwrap();
    writeln!(out).unwrap();
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        let vx = frame.x_min + t * (frame.x_max - frame.x_min);
        let vy = frame.y_min + t * (frame.y_max - frame.y_min);
        let px = frame.x(vx);
        let py = frame.y(vy);
        write!(
            out,
            r#"<line x1="{px}" y1="{y0}" x2="{px}" y2="{yt}" stroke="#333"/><text x="{px}" y="{yl}" font-size="11" text-anchor="middle" font-family="sans-serif">{lx}</text>"#,
            yt = y0 + 5.0,
            yl = y0 + 18.0,
            lx = fmt(vx)
        )
        .unwrap();
        write!(
            out,
            r#"<line x1="{xt}" y1="{py}" x2="{x0}" y2="{py}" stroke="#333"/><text x="{xl}" y="{yv}" font-size="11" text-anchor="end" font-family="sans-serif">{ly}</text>"#,
            xt = x0 - 5.0,
            xl = x0 - 8.0,
            yv = py + 4.0,
            ly = fmt(vy)
        )
        .unwrap();
        writeln!(out).unwrap();
    }
}

fn document(body: String) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         fill=\"white\"/>\n{body}</svg>\n"
    )
}

/// Multi-series line chart.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> String {
    use std::fmt::Write;
    let mut pts = series.iter().flat_map(|(_, s)| s.iter());
    let first = pts.next().copied().unwrap_or((0.0, 0.0));
    let mut x_min = first.0;
    let mut x_max = first.0;
    let mut y_min = first.1;
    let mut y_max = first.1;
    for (x, y) in series.iter().flat_map(|(_, s)| s.iter()) {
        x_min = x_min.min(*x);
        x_max = x_max.max(*x);
        y_min = y_min.min(*y);
        y_max = y_max.max(*y);
    }
    let (x_min, x_max) = pad_range(x_min, x_max);
    let (y_min, y_max) = pad_range(y_min, y_max);
    let frame = Frame {
        x_min,
        x_max,
        y_min,
        y_max,
    };
    let mut body = String::new();
    axes(&mut body, &frame, title, x_label, y_label);
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", frame.x(*x), frame.y(*y)))
            .collect();
        write!(
            body,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"#,
            path.join(" ")
        )
        .unwrap();
        writeln!(body).unwrap();
        write!(
            body,
            r#"<text x="{x}" y="{y}" font-size="12" fill="{color}" font-family="sans-serif">{name}</text>"#,
            x = MARGIN_L + 10.0,
            y = MARGIN_T + 16.0 + 15.0 * i as f64
        )
        .unwrap();
        writeln!(body).unwrap();
    }
    document(body)
}

/// Bar chart over labeled categories, with an optional vertical marker line
/// (in value coordinates along x) for annotating an observed statistic.
pub fn bar_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    bars: &[(f64, f64, f64)], // (x_lo, x_hi, height)
    marker: Option<(f64, &str)>,
) -> String {
    use std::fmt::Write;
    let x_min = bars.first().map(|b| b.0).unwrap_or(0.0);
    let x_max = bars.last().map(|b| b.1).unwrap_or(1.0);
    let y_max = bars.iter().map(|b| b.2).fold(1.0f64, f64::max);
    let (x_min, x_max) = match marker {
        Some((m, _)) => (x_min.min(m), x_max.max(m)),
        None => (x_min, x_max),
    };
    let (x_min, x_max) = pad_range(x_min, x_max);
    let frame = Frame {
        x_min,
        x_max,
        y_min: 0.0,
        y_max: y_max * 1.05,
    };
    let mut body = String::new();
    axes(&mut body, &frame, title, x_label, y_label);
    for (lo, hi, h) in bars {
        if *h == 0.0 {
            continue;
        }
        let x = frame.x(*lo);
        let w = frame.x(*hi) - x;
        let y = frame.y(*h);
        let hh = frame.y(0.0) - y;
        write!(
            body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{hh:.2}" fill="#1f77b4" stroke="white" stroke-width="0.5"/>"#
        )
        .unwrap();
        writeln!(body).unwrap();
    }
    if let Some((m, label)) = marker {
        let x = frame.x(m);
        write!(
            body,
            r#"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{y1}" stroke="#d62728" stroke-width="2" stroke-dasharray="5,3"/><text x="{tx:.2}" y="{ty}" font-size="12" fill="#d62728" font-family="sans-serif">{label}</text>"#,
            y0 = HEIGHT - MARGIN_B,
            y1 = MARGIN_T,
            tx = x + 6.0,
            ty = MARGIN_T + 16.0
        )
        .unwrap();
        writeln!(body).unwrap();
    }
    document(body)
}

/// Histogram helper: bin values into `n_bins` equal bins over `[lo, hi]`.
pub fn histogram_bins(values: &[f64], lo: f64, hi: f64, n_bins: usize) -> Vec<(f64, f64, f64)> {
    let mut counts = vec![0usize; n_bins];
    let width = (hi - lo) / n_bins as f64;
    for v in values {
        let idx = (((v - lo) / width).floor() as i64).clamp(0, n_bins as i64 - 1) as usize;
        counts[idx] += 1;
    }
    counts
        .iter()
        .enumerate()
        .map(|(i, c)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, *c as f64))
        .collect()
}
