//! SVG line plot of accuracy against inference steps for sweep CSVs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    /// (inference steps, accuracy percent)
    pub points: Vec<(usize, f64)>,
}

/// Reads the `inference_t` and `accuracy` columns of a sweep CSV.
pub fn read_sweep_csv(path: &Path) -> Result<Series> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty file"))?
        .split(',')
        .collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::format(path, format!("missing column {name}")))
    };
    let (ti, ai) = (col("inference_t")?, col("accuracy")?);
    let mut points = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        let field = |i: usize| {
            fields
                .get(i)
                .map(|s| s.trim())
                .ok_or_else(|| Error::format(path, format!("row {} is short", n + 2)))
        };
        let t = field(ti)?
            .parse::<usize>()
            .map_err(|e| Error::format(path, format!("row {}: inference_t: {e}", n + 2)))?;
        let a = field(ai)?
            .parse::<f64>()
            .map_err(|e| Error::format(path, format!("row {}: accuracy: {e}", n + 2)))?;
        points.push((t, a));
    }
    if points.is_empty() {
        return Err(Error::format(path, "no data rows"));
    }
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    Ok(Series { label, points })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn render_svg(series: &[Series]) -> Result<String> {
    if series.is_empty() {
        return Err(Error::Invalid("nothing to plot".into()));
    }
    let t_max = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .max()
        .unwrap_or(1)
        .max(2) as f64;
    let (pw, ph) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    let x = |t: f64| MARGIN + (t - 1.0) / (t_max - 1.0) * pw;
    let y = |a: f64| HEIGHT - MARGIN - a.clamp(0.0, 100.0) / 100.0 * ph;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    for a in (0..=100).step_by(20) {
        let yy = y(a as f64);
        writeln!(
            s,
            r##"<line x1="{MARGIN}" y1="{yy}" x2="{}" y2="{yy}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{a}</text>"##,
            WIDTH - MARGIN,
            MARGIN - 6.0,
            yy + 4.0
        )
        .unwrap();
    }
    for t in 1..=t_max as usize {
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{t}</text>"#,
            x(t as f64),
            HEIGHT - MARGIN + 16.0
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">inference time steps</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">accuracy (%)</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    )
    .unwrap();
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|&(t, a)| format!("{:.2},{:.2}", x(t as f64), y(a)))
            .collect();
        writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        )
        .unwrap();
        for &(t, a) in &ser.points {
            writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, x(t as f64), y(a)).unwrap();
        }
        let ly = MARGIN + 16.0 * i as f64;
        writeln!(
            s,
            r#"<text x="{}" y="{ly}" fill="{color}">{}</text>"#,
            WIDTH - MARGIN - 120.0,
            escape(&ser.label)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_sweep_and_renders() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tcl.csv");
        fs::write(&p, "inference_t,accuracy,mean_ce,train_t\n1,50,1.2,3\n2,60,1.0,3\n3,70,0.9,3\n").unwrap();
        let s = read_sweep_csv(&p).unwrap();
        assert_eq!(s.label, "tcl");
        assert_eq!(s.points, vec![(1, 50.0), (2, 60.0), (3, 70.0)]);
        let svg = render_svg(&[s]).unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<circle").count(), 3);
    }

    #[test]
    fn bad_csv_names_problem() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "inference_t,acc\n1,2\n").unwrap();
        assert!(read_sweep_csv(&p).unwrap_err().to_string().contains("accuracy"));
        fs::write(&p, "inference_t,accuracy\n1,abc\n").unwrap();
        assert!(read_sweep_csv(&p).unwrap_err().to_string().contains("row 2"));
    }
}
