//! Output artifacts: CSV tables, PGM map dumps, and small SVG line
//! plots. All writers are byte-deterministic for identical inputs.

use std::io::Write;
use std::path::Path;

/// Formats a real with 6 significant digits, trimming trailing zeros,
/// switching to exponent form outside [1e-4, 1e6). Integers within
/// range print without a decimal point.
pub fn fmt_g6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let a = v.abs();
    if (1e-4..1e6).contains(&a) {
        let exp = a.log10().floor() as i32;
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            let s = s.trim_end_matches('0').trim_end_matches('.');
            s.to_string()
        } else {
            s
        }
    } else {
        let s = format!("{v:.5e}");
        // normalize "1.50000e-7" to "1.5e-7"
        let (mant, exp) = s.split_once('e').expect("exponent form");
        let mant = mant.trim_end_matches('0').trim_end_matches('.');
        format!("{mant}e{exp}")
    }
}

/// A CSV cell: quotes only when the value needs it.
fn csv_cell(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes a CSV file with a header row, rows in the given order, LF
/// line endings.
pub fn write_csv(
    path: &Path,
    header: &[&str],
    rows: &[Vec<String>],
) -> std::io::Result<()> {
    let mut out = String::new();
    out.push_str(&header.iter().map(|h| csv_cell(h)).collect::<Vec<_>>().join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.iter().map(|c| csv_cell(c)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    std::fs::write(path, out)
}

/// Writes a single-channel map as binary PGM (P5, maxval 255), mapping
/// [lo, hi] linearly onto [0, 255] with clamping.
pub fn write_pgm(
    path: &Path,
    data: &[f64],
    height: usize,
    width: usize,
    lo: f64,
    hi: f64,
) -> std::io::Result<()> {
    assert_eq!(data.len(), height * width, "data length must match dimensions");
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut bytes = Vec::with_capacity(64 + data.len());
    write!(&mut bytes, "P5\n{width} {height}\n255\n")?;
    for &v in data {
        let scaled = ((v - lo) / span * 255.0).round().clamp(0.0, 255.0);
        bytes.push(scaled as u8);
    }
    std::fs::write(path, bytes)
}

/// One plotted series: a label and (x, y) points.
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const SVG_COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Writes a minimal self-contained SVG line plot with axes, tick
/// labels, and a legend. `log_y` plots log10 of the y values.
pub fn write_svg_plot(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    log_y: bool,
) -> std::io::Result<()> {
    let (w, h) = (720.0, 480.0);
    let (ml, mr, mt, mb) = (70.0, 20.0, 40.0, 55.0);
    let (pw, ph) = (w - ml - mr, h - mt - mb);

    let tf = |y: f64| if log_y { y.max(1e-12).log10() } else { y };
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in series {
        for &(x, y) in &s.points {
            xs.push(x);
            ys.push(tf(y));
        }
    }
    let (x0, x1) = bounds(&xs);
    let (y0, y1) = bounds(&ys);
    let px = |x: f64| ml + (x - x0) / (x1 - x0).max(1e-12) * pw;
    let py = |y: f64| mt + ph - (tf(y) - y0) / (y1 - y0).max(1e-12) * ph;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
        w / 2.0,
        xml_escape(title)
    ));
    // frame
    svg.push_str(&format!(
        "<rect x=\"{ml}\" y=\"{mt}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#333\"/>\n"
    ));
    // ticks
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let sx = px(fx);
        svg.push_str(&format!(
            "<line x1=\"{sx:.1}\" y1=\"{:.1}\" x2=\"{sx:.1}\" y2=\"{:.1}\" stroke=\"#333\"/>\n\
             <text x=\"{sx:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            mt + ph,
            mt + ph + 5.0,
            mt + ph + 20.0,
            fmt_g6(fx)
        ));
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let sy = mt + ph - ph * i as f64 / 4.0;
        let label = if log_y { format!("1e{}", fmt_g6(fy)) } else { fmt_g6(fy) };
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{sy:.1}\" x2=\"{ml}\" y2=\"{sy:.1}\" stroke=\"#333\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{label}</text>\n",
            ml - 5.0,
            ml - 8.0,
            sy + 4.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
        ml + pw / 2.0,
        h - 12.0,
        xml_escape(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>\n",
        mt + ph / 2.0,
        mt + ph / 2.0,
        xml_escape(y_label)
    ));
    for (si, s) in series.iter().enumerate() {
        let color = SVG_COLORS[si % SVG_COLORS.len()];
        let pts: Vec<String> =
            s.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            pts.join(" ")
        ));
        let ly = mt + 16.0 + 16.0 * si as f64;
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\">{}</text>\n",
            ml + pw - 140.0,
            ml + pw - 110.0,
            ml + pw - 104.0,
            ly + 4.0,
            xml_escape(&s.label)
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)
}

fn bounds(vals: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in vals {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn fmt_g6_cases() {
        assert_eq!(fmt_g6(0.0), "0");
        assert_eq!(fmt_g6(1.0), "1");
        assert_eq!(fmt_g6(-2.5), "-2.5");
        assert_eq!(fmt_g6(0.25), "0.25");
        assert_eq!(fmt_g6(1.0 / 3.0), "0.333333");
        assert_eq!(fmt_g6(123456.0), "123456");
        assert_eq!(fmt_g6(1234567.0), "1.23457e6");
        assert_eq!(fmt_g6(0.0001), "0.0001");
        assert_eq!(fmt_g6(0.00001), "1e-5");
        assert_eq!(fmt_g6(1.5e-7), "1.5e-7");
        assert_eq!(fmt_g6(4.0_f64.ln()), "1.38629");
    }

    #[test]
    fn csv_has_header_and_lf_endings() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_csv(
            &p,
            &["a", "b"],
            &[vec!["1".into(), "x,y".into()], vec!["2".into(), "q\"z".into()]],
        )
        .unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "a,b\n1,\"x,y\"\n2,\"q\"\"z\"\n");
    }

    #[test]
    fn pgm_header_and_payload() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("t.pgm");
        write_pgm(&p, &[0.0, 0.5, 1.0, 2.0], 2, 2, 0.0, 1.0).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P5\n2 2\n255\n"));
        let payload = &bytes[bytes.len() - 4..];
        assert_eq!(payload, &[0u8, 128, 255, 255]);
    }

    #[test]
    fn svg_is_written_and_contains_series_labels() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("t.svg");
        let series = vec![
            Series { label: "one".into(), points: vec![(0.0, 1.0), (1.0, 0.5), (2.0, 0.25)] },
            Series { label: "two".into(), points: vec![(0.0, 2.0), (2.0, 1.0)] },
        ];
        write_svg_plot(&p, "losses", "iteration", "loss", &series, true).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("<svg"));
        assert!(text.contains("one") && text.contains("two"));
        assert!(text.contains("polyline"));
    }

    #[test]
    fn writers_are_deterministic() {
        let dir = tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        let rows = vec![vec![fmt_g6(std::f64::consts::PI)]];
        write_csv(&p1, &["v"], &rows).unwrap();
        write_csv(&p2, &["v"], &rows).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
