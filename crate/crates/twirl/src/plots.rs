//! Learning-curve rendering: standalone SVG plus the aggregated CSV the
//! figure was drawn from. No plotting dependencies — the SVG is assembled
//! directly, which also keeps output byte-reproducible.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::transfer::MetricsRecord;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;

/// Aggregated curves: one value series per run on a shared step grid.
#[derive(Debug)]
pub struct CurveSet {
    pub steps: Vec<usize>,
    pub runs: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Aligns runs on their common step grid and aggregates mean and std.
/// All runs must share the same grid (they come from the same config).
pub fn aggregate(logs: &[Vec<MetricsRecord>]) -> Result<CurveSet> {
    if logs.is_empty() || logs.iter().any(|l| l.is_empty()) {
        return Err(Error::config("cannot plot empty metrics logs"));
    }
    let steps: Vec<usize> = logs[0].iter().map(|r| r.step).collect();
    for (i, log) in logs.iter().enumerate() {
        let s: Vec<usize> = log.iter().map(|r| r.step).collect();
        if s != steps {
            return Err(Error::config(format!(
                "run {i} has a different step grid; plots need runs from the same config"
            )));
        }
    }
    let runs: Vec<Vec<f64>> = logs
        .iter()
        .map(|l| l.iter().map(|r| r.mean_recent_return).collect())
        .collect();
    let n = runs.len() as f64;
    let mut mean = Vec::with_capacity(steps.len());
    let mut std = Vec::with_capacity(steps.len());
    for i in 0..steps.len() {
        let m = runs.iter().map(|r| r[i]).sum::<f64>() / n;
        let v = runs.iter().map(|r| (r[i] - m).powi(2)).sum::<f64>() / n;
        mean.push(m);
        std.push(v.sqrt());
    }
    Ok(CurveSet { steps, runs, mean, std })
}

pub fn curves_csv(set: &CurveSet) -> String {
    let mut out = String::from("step,mean,std");
    for i in 0..set.runs.len() {
        out.push_str(&format!(",run{i}"));
    }
    out.push('\n');
    for (i, &s) in set.steps.iter().enumerate() {
        out.push_str(&format!("{s},{},{}", set.mean[i], set.std[i]));
        for r in &set.runs {
            out.push_str(&format!(",{}", r[i]));
        }
        out.push('\n');
    }
    out
}

fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let raw = (hi - lo) / n as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm < 1.5 {
        1.0
    } else if norm < 3.0 {
        2.0
    } else if norm < 7.0 {
        5.0
    } else {
        10.0
    } * mag;
    let mut t = (lo / step).ceil() * step;
    let mut ticks = Vec::new();
    while t <= hi + 1e-9 * step {
        ticks.push(t);
        t += step;
    }
    ticks
}

fn fmt(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1000.0 {
        format!("{v:.0}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Renders the curve set: faint per-run lines, a bold mean line, and (for
/// more than one run) a shaded +-1 std band.
pub fn render_svg(set: &CurveSet, title: &str, ylabel: &str) -> String {
    let x_lo = set.steps[0] as f64;
    let x_hi = *set.steps.last().unwrap() as f64;
    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for i in 0..set.steps.len() {
        y_lo = y_lo.min(set.mean[i] - set.std[i]);
        y_hi = y_hi.max(set.mean[i] + set.std[i]);
        for r in &set.runs {
            y_lo = y_lo.min(r[i]);
            y_hi = y_hi.max(r[i]);
        }
    }
    if y_hi <= y_lo {
        y_hi = y_lo + 1.0;
    }
    let pad = 0.05 * (y_hi - y_lo);
    y_lo -= pad;
    y_hi += pad;
    let x_span = (x_hi - x_lo).max(1.0);

    let px = |s: f64| MARGIN_L + (s - x_lo) / x_span * (WIDTH - MARGIN_L - MARGIN_R);
    let py = |v: f64| HEIGHT - MARGIN_B - (v - y_lo) / (y_hi - y_lo) * (HEIGHT - MARGIN_T - MARGIN_B);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{title}</text>\n",
        WIDTH / 2.0
    ));

    // axes
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN_B,
        WIDTH - MARGIN_R
    ));
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{MARGIN_T}\" x2=\"{MARGIN_L}\" y2=\"{}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN_B
    ));
    for t in nice_ticks(x_lo, x_hi, 6) {
        let x = px(t);
        svg.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{0}\" x2=\"{x}\" y2=\"{1}\" stroke=\"black\"/>\n\
             <text x=\"{x}\" y=\"{2}\" text-anchor=\"middle\" font-size=\"12\">{3}</text>\n",
            HEIGHT - MARGIN_B,
            HEIGHT - MARGIN_B + 5.0,
            HEIGHT - MARGIN_B + 20.0,
            fmt(t)
        ));
    }
    for t in nice_ticks(y_lo, y_hi, 6) {
        let y = py(t);
        svg.push_str(&format!(
            "<line x1=\"{0}\" y1=\"{y}\" x2=\"{MARGIN_L}\" y2=\"{y}\" stroke=\"black\"/>\n\
             <text x=\"{1}\" y=\"{2}\" text-anchor=\"end\" font-size=\"12\">{3}</text>\n",
            MARGIN_L - 5.0,
            MARGIN_L - 8.0,
            y + 4.0,
            fmt(t)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\">environment steps</text>\n",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" \
         transform=\"rotate(-90 16 {0})\">{ylabel}</text>\n",
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0
    ));

    // std band
    if set.runs.len() > 1 {
        let mut pts = String::new();
        for i in 0..set.steps.len() {
            pts.push_str(&format!(
                "{},{} ",
                px(set.steps[i] as f64),
                py(set.mean[i] + set.std[i])
            ));
        }
        for i in (0..set.steps.len()).rev() {
            pts.push_str(&format!(
                "{},{} ",
                px(set.steps[i] as f64),
                py(set.mean[i] - set.std[i])
            ));
        }
        svg.push_str(&format!(
            "<polygon points=\"{}\" fill=\"#4878cf\" fill-opacity=\"0.2\" stroke=\"none\"/>\n",
            pts.trim_end()
        ));
    }

    // per-run lines
    for r in &set.runs {
        let pts: Vec<String> = set
            .steps
            .iter()
            .zip(r)
            .map(|(&s, &v)| format!("{},{}", px(s as f64), py(v)))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#999999\" stroke-width=\"1\"/>\n",
            pts.join(" ")
        ));
    }

    // mean line
    let pts: Vec<String> = set
        .steps
        .iter()
        .zip(&set.mean)
        .map(|(&s, &v)| format!("{},{}", px(s as f64), py(v)))
        .collect();
    svg.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#4878cf\" stroke-width=\"2.5\"/>\n",
        pts.join(" ")
    ));

    svg.push_str("</svg>\n");
    svg
}

/// Writes `<stem>.svg` and `<stem>.csv` into the output directory.
pub fn emit_plots(
    logs: &[Vec<MetricsRecord>],
    out_dir: &Path,
    stem: &str,
    title: &str,
) -> Result<(PathBuf, PathBuf)> {
    let set = aggregate(logs)?;
    std::fs::create_dir_all(out_dir)?;
    let svg_path = out_dir.join(format!("{stem}.svg"));
    let csv_path = out_dir.join(format!("{stem}.csv"));
    std::fs::write(&svg_path, render_svg(&set, title, "mean recent return"))?;
    std::fs::write(&csv_path, curves_csv(&set))?;
    Ok((svg_path, csv_path))
}
