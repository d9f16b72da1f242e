//! Plain-text and SVG renderings of one trajectory column.

use std::fmt::Write;

use stochastic_es::averaging::fmt_f64;

use crate::error::CliError;
use crate::output::Outputs;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub column: String,
    pub k: Vec<f64>,
    pub values: Vec<f64>,
}

/// Reads `k` and one value column from a CSV written by this tool. The first
/// column after `k` (and `t`, when present) is used when `column` is `None`.
pub fn read_series(text: &str, column: Option<&str>) -> Result<Series, CliError> {
    let bad = |msg: String| CliError::Config(format!("plot input: {msg}"));
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| bad("empty file".into()))?
        .split(',')
        .collect();
    if header.first() != Some(&"k") {
        return Err(bad("first column must be `k`".into()));
    }
    let index = match column {
        Some(name) => header
            .iter()
            .position(|h| *h == name)
            .filter(|&i| i > 0)
            .ok_or_else(|| bad(format!("no column `{name}`")))?,
        None => header
            .iter()
            .position(|h| *h != "k" && *h != "t")
            .ok_or_else(|| bad("no value column".into()))?,
    };
    let mut k = Vec::new();
    let mut values = Vec::new();
    for (row, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(bad(format!(
                "row {} has {} cells, expected {}",
                row + 2,
                cells.len(),
                header.len()
            )));
        }
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| bad(format!("row {}: {e}", row + 2)))
        };
        let kv = parse(cells[0])?;
        if let Some(&prev) = k.last() {
            if !(kv > prev) {
                return Err(bad(format!("k must be strictly increasing (row {})", row + 2)));
            }
        }
        k.push(kv);
        values.push(parse(cells[index])?);
    }
    if k.is_empty() {
        return Err(bad("no data rows".into()));
    }
    Ok(Series {
        column: header[index].to_string(),
        k,
        values,
    })
}

pub fn render(series: &Series, reference: Option<f64>) -> Outputs {
    let mut dat = format!("# k {}\n", series.column);
    for (k, v) in series.k.iter().zip(&series.values) {
        writeln!(dat, "{k} {}", fmt_f64(*v)).unwrap();
    }
    let mut out = Outputs::default();
    out.add("plot.dat", dat.into_bytes());
    out.add("plot.svg", svg(series, reference).into_bytes());
    out
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;

fn svg(series: &Series, reference: Option<f64>) -> String {
    let finite = series.values.iter().copied().filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if let Some(r) = reference {
        lo = lo.min(r);
        hi = hi.max(r);
    }
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let (k0, k1) = (series.k[0], *series.k.last().unwrap());
    let span = if k1 > k0 { k1 - k0 } else { 1.0 };
    let x = |k: f64| MARGIN + (k - k0) / span * (WIDTH - 2.0 * MARGIN);
    let y = |v: f64| HEIGHT - MARGIN - (v - lo) / (hi - lo) * (HEIGHT - 2.0 * MARGIN);
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    )
    .unwrap();
    let points: Vec<String> = series
        .k
        .iter()
        .zip(&series.values)
        .filter(|(_, v)| v.is_finite())
        .map(|(&k, &v)| format!("{:.2},{:.2}", x(k), y(v)))
        .collect();
    writeln!(
        s,
        r#"<polyline fill="none" stroke="steelblue" stroke-width="1" points="{}"/>"#,
        points.join(" ")
    )
    .unwrap();
    if let Some(r) = reference {
        writeln!(
            s,
            r#"<line x1="{MARGIN}" x2="{}" y1="{y:.2}" y2="{y:.2}" stroke="firebrick" stroke-dasharray="6 4"/>"#,
            WIDTH - MARGIN,
            y = y(r)
        )
        .unwrap();
    }
    for (v, label) in [(lo, lo), (hi, hi)] {
        writeln!(
            s,
            r#"<text x="{}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"#,
            MARGIN - 4.0,
            y(v) + 4.0,
            short(label)
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">k ({})</text>"#,
        WIDTH / 2.0,
        HEIGHT - 15.0,
        series.column
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}

fn short(v: f64) -> String {
    format!("{v:.4}")
}
