//! Learning-curve plots: reads seed metrics CSVs and emits a deterministic
//! SVG with the across-seed median line and a 25-75 percentile band.

use std::fmt;
use std::fs;
use std::path::Path;

#[derive(Debug)]
pub enum PlotError {
    /// No input files given.
    NoInputs,
    Io(std::io::Error),
    /// Header mismatch, ragged rows, or non-numeric fields.
    Malformed { file: String, reason: String },
    /// Seed files must share the same evaluation step grid.
    StepGridMismatch { file: String },
}

impl fmt::Display for PlotError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlotError::NoInputs => write!(f, "plot requires at least one metrics file"),
            PlotError::Io(e) => write!(f, "{e}"),
            PlotError::Malformed { file, reason } => {
                write!(f, "malformed metrics file '{file}': {reason}")
            }
            PlotError::StepGridMismatch { file } => {
                write!(f, "metrics file '{file}' has a different evaluation step grid")
            }
        }
    }
}

impl std::error::Error for PlotError {}

impl From<std::io::Error> for PlotError {
    fn from(e: std::io::Error) -> Self {
        PlotError::Io(e)
    }
}

/// One parsed seed curve: aligned (step, eval_return) points.
pub struct SeedCurve {
    pub steps: Vec<u64>,
    pub returns: Vec<f64>,
}

/// Parses a metrics CSV produced by the harness.
pub fn parse_metrics(path: &Path) -> Result<SeedCurve, PlotError> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| PlotError::Malformed {
        file: name.clone(),
        reason: "empty file".into(),
    })?;
    if header != crate::harness::METRICS_HEADER {
        return Err(PlotError::Malformed { file: name, reason: "unexpected header row".into() });
    }
    let mut steps = Vec::new();
    let mut returns = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(PlotError::Malformed {
                file: name,
                reason: format!("row {} has {} fields, expected 9", i + 2, fields.len()),
            });
        }
        let step: u64 = fields[0].parse().map_err(|_| PlotError::Malformed {
            file: name.clone(),
            reason: format!("row {}: bad step '{}'", i + 2, fields[0]),
        })?;
        let ret: f64 = fields[7].parse().map_err(|_| PlotError::Malformed {
            file: name.clone(),
            reason: format!("row {}: bad eval_return '{}'", i + 2, fields[7]),
        })?;
        steps.push(step);
        returns.push(ret);
    }
    if steps.is_empty() {
        return Err(PlotError::Malformed { file: name, reason: "no data rows".into() });
    }
    Ok(SeedCurve { steps, returns })
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Renders median + interquartile band over the seed curves into an SVG
/// string. Single-seed inputs get a plain line without shading.
pub fn render_svg(curves: &[SeedCurve], title: &str) -> Result<String, PlotError> {
    if curves.is_empty() {
        return Err(PlotError::NoInputs);
    }
    let steps = &curves[0].steps;
    for (i, c) in curves.iter().enumerate() {
        if c.steps != *steps {
            return Err(PlotError::StepGridMismatch { file: format!("input {i}") });
        }
    }
    let n_points = steps.len();
    let mut median = Vec::with_capacity(n_points);
    let mut q25 = Vec::with_capacity(n_points);
    let mut q75 = Vec::with_capacity(n_points);
    for p in 0..n_points {
        let mut vals: Vec<f64> = curves.iter().map(|c| c.returns[p]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        median.push(percentile(&vals, 0.5));
        q25.push(percentile(&vals, 0.25));
        q75.push(percentile(&vals, 0.75));
    }

    let (w, h, ml, mr, mt, mb) = (640.0, 400.0, 60.0, 20.0, 40.0, 50.0);
    let x_min = *steps.first().unwrap() as f64;
    let x_max = (*steps.last().unwrap() as f64).max(x_min + 1.0);
    let y_lo = q25.iter().chain(median.iter()).cloned().fold(f64::INFINITY, f64::min).min(0.0);
    let y_hi = q75
        .iter()
        .chain(median.iter())
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
        .max(y_lo + 1.0);
    let sx = |x: f64| ml + (x - x_min) / (x_max - x_min) * (w - ml - mr);
    let sy = |y: f64| h - mb - (y - y_lo) / (y_hi - y_lo) * (h - mt - mb);

    let path_of = |ys: &[f64]| -> String {
        ys.iter()
            .zip(steps)
            .enumerate()
            .map(|(i, (&y, &s))| {
                format!("{}{:.2},{:.2}", if i == 0 { "M" } else { "L" }, sx(s as f64), sy(y))
            })
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n<text x=\"{:.0}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{title}</text>\n",
        w / 2.0
    ));
    // axes
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
        h - mb,
        w - mr,
        h - mb
    ));
    svg.push_str(&format!("<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{:.2}\" stroke=\"black\"/>\n", h - mb));
    for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let xv = x_min + frac * (x_max - x_min);
        let yv = y_lo + frac * (y_hi - y_lo);
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{:.0}</text>\n",
            sx(xv),
            h - mb + 16.0,
            xv
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{:.1}</text>\n",
            ml - 6.0,
            sy(yv) + 3.0,
            yv
        ));
    }
    if curves.len() > 1 {
        // interquartile band: q75 forward, q25 back
        let mut band = path_of(&q75);
        for (&y, &s) in q25.iter().zip(steps.iter()).rev() {
            band.push_str(&format!(" L{:.2},{:.2}", sx(s as f64), sy(y)));
        }
        band.push_str(" Z");
        svg.push_str(&format!("<path d=\"{band}\" fill=\"#4477aa\" fill-opacity=\"0.25\" stroke=\"none\"/>\n"));
    }
    svg.push_str(&format!(
        "<path d=\"{}\" fill=\"none\" stroke=\"#114488\" stroke-width=\"2\"/>\n",
        path_of(&median)
    ));
    svg.push_str(&format!(
        "<text x=\"{:.0}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">step</text>\n",
        (ml + w - mr) / 2.0,
        h - 12.0
    ));
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Reads seed metrics files and writes the learning-curve SVG.
pub fn emit_plots(metrics: &[&Path], out: &Path, title: &str) -> Result<(), PlotError> {
    if metrics.is_empty() {
        return Err(PlotError::NoInputs);
    }
    let curves: Vec<SeedCurve> =
        metrics.iter().map(|p| parse_metrics(p)).collect::<Result<_, _>>()?;
    let svg = render_svg(&curves, title)?;
    fs::write(out, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_csv(path: &Path, rows: &[(u64, f64)]) {
        let mut text = String::from(crate::harness::METRICS_HEADER);
        text.push('\n');
        for (step, ret) in rows {
            text.push_str(&format!("{step},1,,,,,,{ret:.6},0\n"));
        }
        fs::write(path, text).unwrap();
    }

    #[test]
    fn single_seed_renders_without_band() {
        let dir = std::env::temp_dir().join("dave_plot_test");
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("seed0.csv");
        write_csv(&p, &[(100, 0.0), (200, 4.0), (300, 8.0)]);
        let curve = parse_metrics(&p).unwrap();
        let svg = render_svg(&[curve], "matrix1").unwrap();
        assert!(!svg.contains("fill-opacity"), "no band for a single seed");
        assert!(svg.contains("<path"));
    }

    #[test]
    fn six_seeds_render_median_and_band() {
        let curves: Vec<SeedCurve> = (0..6)
            .map(|i| SeedCurve {
                steps: vec![100, 200],
                returns: vec![i as f64, 8.0 - i as f64],
            })
            .collect();
        let svg = render_svg(&curves, "matrix1").unwrap();
        assert!(svg.contains("fill-opacity"), "expected an interquartile band");
    }

    #[test]
    fn deterministic_output() {
        let mk = || {
            render_svg(
                &[SeedCurve { steps: vec![1, 2, 3], returns: vec![0.5, 0.75, 1.0] }],
                "t",
            )
            .unwrap()
        };
        assert_eq!(mk(), mk());
    }

    #[test]
    fn malformed_file_is_rejected() {
        let dir = std::env::temp_dir().join("dave_plot_test");
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("bad.csv");
        fs::write(&p, "nonsense\n1,2,3\n").unwrap();
        assert!(matches!(parse_metrics(&p), Err(PlotError::Malformed { .. })));
    }

    #[test]
    fn empty_input_list_is_a_usage_error() {
        let out = std::env::temp_dir().join("dave_plot_test_out.svg");
        assert!(matches!(emit_plots(&[], &out, "x"), Err(PlotError::NoInputs)));
    }

    #[test]
    fn mismatched_step_grids_are_rejected() {
        let a = SeedCurve { steps: vec![1, 2], returns: vec![0.0, 1.0] };
        let b = SeedCurve { steps: vec![1, 3], returns: vec![0.0, 1.0] };
        assert!(matches!(render_svg(&[a, b], "t"), Err(PlotError::StepGridMismatch { .. })));
    }
}
