//! Minimal static SVG line plots.

use std::fmt::Write;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Draw dashed (used for theoretical bounds).
    pub dashed: bool,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            name: name.into(),
            points,
            dashed: false,
        }
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotOptions {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub width: f64,
    pub height: f64,
}

impl Default for PlotOptions {
    fn default() -> Self {
        PlotOptions {
            title: String::new(),
            x_label: "epoch".into(),
            y_label: "loss".into(),
            log_y: true,
            width: 720.0,
            height: 440.0,
        }
    }
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.0e}")
    } else if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Renders the series to an SVG document. On a log axis non-positive values
/// are dropped.
pub fn line_plot(series: &[Series], opts: &PlotOptions) -> String {
    let (ml, mr, mt, mb) = (70.0, 150.0, 36.0, 48.0);
    let pw = opts.width - ml - mr;
    let ph = opts.height - mt - mb;
    let ty = |y: f64| if opts.log_y { y.log10() } else { y };
    let usable = |&(x, y): &(f64, f64)| x.is_finite() && y.is_finite() && (!opts.log_y || y > 0.0);

    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for p in series.iter().flat_map(|s| s.points.iter()).filter(|p| usable(p)) {
        xmin = xmin.min(p.0);
        xmax = xmax.max(p.0);
        ymin = ymin.min(ty(p.1));
        ymax = ymax.max(ty(p.1));
    }
    if !xmin.is_finite() {
        (xmin, xmax, ymin, ymax) = (0.0, 1.0, 0.0, 1.0);
    }
    if xmax - xmin <= 0.0 {
        xmax = xmin + 1.0;
    }
    if ymax - ymin <= 0.0 {
        ymin -= 0.5;
        ymax += 0.5;
    }
    let sx = |x: f64| ml + (x - xmin) / (xmax - xmin) * pw;
    let sy = |y: f64| mt + ph - (ty(y) - ymin) / (ymax - ymin) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#,
        w = opts.width,
        h = opts.height
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r##"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let xv = xmin + f * (xmax - xmin);
        let yv = ymin + f * (ymax - ymin);
        let x = ml + f * pw;
        let y = mt + ph - f * ph;
        let ylabel = if opts.log_y { 10f64.powf(yv) } else { yv };
        let _ = writeln!(
            s,
            r##"<line x1="{x}" y1="{mt}" x2="{x}" y2="{yb}" stroke="#eee"/><text x="{x}" y="{yt}" text-anchor="middle">{}</text>"##,
            fmt_tick(xv),
            yb = mt + ph,
            yt = mt + ph + 16.0
        );
        let _ = writeln!(
            s,
            r##"<line x1="{ml}" y1="{y}" x2="{xr}" y2="{y}" stroke="#eee"/><text x="{xl}" y="{yy}" text-anchor="end">{}</text>"##,
            fmt_tick(ylabel),
            xr = ml + pw,
            xl = ml - 6.0,
            yy = y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        ml + pw / 2.0,
        opts.height - 10.0,
        escape(&opts.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        mt + ph / 2.0,
        mt + ph / 2.0,
        escape(&opts.y_label)
    );
    if !opts.title.is_empty() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            ml + pw / 2.0,
            escape(&opts.title)
        );
    }
    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|p| usable(p))
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        if !pts.is_empty() {
            let dash = if ser.dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let _ = writeln!(
                s,
                r##"<polyline fill="none" stroke="{color}" stroke-width="1.6"{dash} points="{}"/>"##,
                pts.join(" ")
            );
        }
        let ly = mt + 14.0 + 18.0 * k as f64;
        let lx = ml + pw + 12.0;
        let _ = writeln!(
            s,
            r##"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"##,
            lx + 22.0,
            lx + 28.0,
            ly + 4.0,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_every_series() {
        let svg = line_plot(
            &[
                Series::new("RR", vec![(0.0, 1.0), (1.0, 0.5), (2.0, 0.25)]),
                Series::new("bound <&>", vec![(0.0, 1.0), (2.0, 0.0)]).dashed(),
            ],
            &PlotOptions::default(),
        );
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("bound &lt;&amp;&gt;"));
        assert!(svg.contains("stroke-dasharray"));
    }

    #[test]
    fn empty_and_constant_series() {
        let svg = line_plot(&[Series::new("flat", vec![(0.0, 2.0), (0.0, 2.0)])], &PlotOptions::default());
        assert!(!svg.contains("NaN"));
        let svg = line_plot(&[], &PlotOptions::default());
        assert!(svg.ends_with("</svg>\n"));
    }
}
