//! CSV tables and minimal SVG plots.

use std::fmt::Write as _;
use std::path::Path;

use clogsa_core::dataio::{fmt_f64, TrajectoryDataset};
use clogsa_core::hsic::HsicTimeSeries;
use clogsa_core::pce::{CvCell, FitDiagnostics, FitReport};
use clogsa_core::sobol::SobolTimeSeries;

use crate::CliError;

pub fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::data("io", format!("{}: {e}", path.display())))
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn fit_diagnostics_csv(times: &[f64], d: &FitDiagnostics) -> String {
    let mut s = String::from("time,terms,loo_error,degenerate\n");
    for k in 0..times.len() {
        let _ = writeln!(s, "{},{},{},{}", fmt_f64(times[k]), d.terms[k], fmt_f64(d.loo_errors[k]), d.degenerate[k]);
    }
    s
}

pub fn q2_csv(times: &[f64], r: &FitReport) -> String {
    let mut s = String::from("time,terms,q2\n");
    for k in 0..times.len() {
        let _ = writeln!(s, "{},{},{}", fmt_f64(times[k]), r.terms[k], opt(r.q2[k]));
    }
    let _ = writeln!(s, "mean,,{}", opt(r.q2_mean));
    s
}

pub fn cv_csv(cells: &[CvCell]) -> String {
    let mut s = String::from("p,q,split,q2_mean,error\n");
    for c in cells {
        for (i, score) in c.scores.iter().enumerate() {
            match score {
                Ok(v) => {
                    let _ = writeln!(s, "{},{},{},{},", c.p, fmt_f64(c.q), i, fmt_f64(*v));
                }
                Err(e) => {
                    let _ = writeln!(s, "{},{},{},,\"{}\"", c.p, fmt_f64(c.q), i, e.replace('"', "'"));
                }
            }
        }
    }
    s
}

pub fn sobol_csv(ts: &SobolTimeSeries) -> String {
    let mut s = String::from("time,input,S1,ST,var_contrib\n");
    for k in 0..ts.times.len() {
        let t = fmt_f64(ts.times[k]);
        for (i, name) in ts.input_names.iter().enumerate() {
            let _ = writeln!(
                s,
                "{t},{name},{},{},{}",
                opt(ts.first[i][k]),
                opt(ts.total[i][k]),
                fmt_f64(ts.variance_contribution[i][k])
            );
        }
    }
    for k in 0..ts.times.len() {
        let _ = writeln!(s, "{},_interaction,{},,", fmt_f64(ts.times[k]), opt(ts.interaction[k]));
    }
    s
}

pub fn hsic_csv(ts: &HsicTimeSeries) -> String {
    let mut s = String::from("time,input,index,p_value,target_set_size\n");
    for k in 0..ts.times.len() {
        for (i, name) in ts.input_names.iter().enumerate() {
            let c = &ts.cells[i][k];
            let size = c.target_set_size.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{name},{},{},{size}", fmt_f64(ts.times[k]), opt(c.index), opt(c.p_value));
        }
    }
    s
}

pub fn hsic_raw_csv(ts: &HsicTimeSeries) -> String {
    let mut s = String::from("time,input,raw,error\n");
    for k in 0..ts.times.len() {
        for (i, name) in ts.input_names.iter().enumerate() {
            let c = &ts.cells[i][k];
            let err = c.error.as_deref().map(|e| format!("\"{}\"", e.replace('"', "'"))).unwrap_or_default();
            let _ = writeln!(s, "{},{name},{},{err}", fmt_f64(ts.times[k]), opt(c.raw));
        }
    }
    s
}

pub fn ranking_row(time: f64, method: &str, names: &[String], order: &[usize]) -> String {
    let top: Vec<&str> = order.iter().take(3).map(|&i| names[i].as_str()).collect();
    format!("{},{method},{}\n", fmt_f64(time), top.join(","))
}

pub fn trajectories_csv(ds: &TrajectoryDataset) -> String {
    let mut s = String::from("row,time,tau_c\n");
    for r in 0..ds.n() {
        for k in 0..ds.n_steps() {
            let _ = writeln!(s, "{r},{},{}", fmt_f64(ds.times[k]), fmt_f64(ds.outputs[(r, k)]));
        }
    }
    s
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn trajectory_summary_csv(ds: &TrajectoryDataset) -> String {
    let mut s = String::from("time,mean,std,q05,q50,q95\n");
    for k in 0..ds.n_steps() {
        let mut col = ds.output_column(k);
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let sd = if col.len() > 1 {
            (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        col.sort_by(f64::total_cmp);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            fmt_f64(ds.times[k]),
            fmt_f64(mean),
            fmt_f64(sd),
            fmt_f64(quantile(&col, 0.05)),
            fmt_f64(quantile(&col, 0.5)),
            fmt_f64(quantile(&col, 0.95))
        );
    }
    s
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        let (x1, y1) = (if x1 > x0 { x1 } else { x0 + 1.0 }, if y1 > y0 { y1 } else { y0 + 1.0 });
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * MARGIN)
    }
}

fn svg_open(title: &str, f: &Frame) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(title));
    let (l, r, t, b) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
    let _ = writeln!(s, r#"<polyline points="{l},{t} {l},{b} {r},{b}" fill="none" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{l}" y="{}" text-anchor="middle">{}</text>"#, b + 15.0, short(f.x0));
    let _ = writeln!(s, r#"<text x="{r}" y="{}" text-anchor="middle">{}</text>"#, b + 15.0, short(f.x1));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, l - 4.0, b, short(f.y0));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, l - 4.0, t + 4.0, short(f.y1));
    s
}

fn short(v: f64) -> String {
    format!("{:.3}", v).trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('\'', "&#39;")
}

fn polyline(f: &Frame, pts: impl Iterator<Item = (f64, f64)>, color: &str, width: f64) -> String {
    let p: Vec<String> = pts.map(|(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y))).collect();
    format!(r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}"/>"#, p.join(" ")) + "\n"
}

/// One line per series; `None` values break nothing and are skipped.
pub fn series_svg(title: &str, times: &[f64], names: &[String], series: &[Vec<Option<f64>>]) -> String {
    let vals = series.iter().flatten().flatten().copied();
    let ymax = vals.fold(0.0f64, f64::max);
    let f = Frame::new(times[0], *times.last().unwrap(), 0.0, ymax);
    let mut s = svg_open(title, &f);
    for (i, row) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        s += &polyline(&f, times.iter().zip(row).filter_map(|(t, v)| v.map(|v| (*t, v))), color, 1.5);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            W - MARGIN + 4.0,
            MARGIN + 14.0 * i as f64,
            escape(&names[i])
        );
    }
    s + "</svg>\n"
}

pub fn trajectories_svg(ds: &TrajectoryDataset) -> String {
    let f = Frame::new(ds.times[0], *ds.times.last().unwrap(), 0.0, 100.0);
    let mut s = svg_open("Clogging rate trajectories (%)", &f);
    for r in 0..ds.n().min(100) {
        s += &polyline(&f, (0..ds.n_steps()).map(|k| (ds.times[k], ds.outputs[(r, k)])), "#1f77b4", 0.5);
    }
    s + "</svg>\n"
}

pub fn cv_svg(cells: &[CvCell]) -> String {
    let all: Vec<f64> = cells.iter().flat_map(|c| c.scores.iter().filter_map(|v| v.as_ref().ok().copied())).collect();
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min).min(1.0);
    let f = Frame::new(0.0, cells.len().max(1) as f64, if lo.is_finite() { lo } else { 0.0 }, 1.0);
    let mut s = svg_open("Q2 over train/test splits", &f);
    for (j, c) in cells.iter().enumerate() {
        let mut v: Vec<f64> = c.scores.iter().filter_map(|v| v.as_ref().ok().copied()).collect();
        let cx = j as f64 + 0.5;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">p={} q={}</text>"#,
            f.px(cx),
            H - MARGIN + 28.0,
            c.p,
            short(c.q)
        );
        if v.is_empty() {
            continue;
        }
        v.sort_by(f64::total_cmp);
        let (q1, med, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
        let (x0, x1) = (f.px(cx - 0.25), f.px(cx + 0.25));
        let _ = writeln!(
            s,
            r##"<rect x="{x0:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#9ecae1" stroke="black"/>"##,
            f.py(q3),
            x1 - x0,
            (f.py(q1) - f.py(q3)).max(0.5)
        );
        s += &polyline(&f, [(cx - 0.25, med), (cx + 0.25, med)].into_iter(), "black", 2.0);
        s += &polyline(&f, [(cx, v[0]), (cx, q1)].into_iter(), "black", 1.0);
        s += &polyline(&f, [(cx, q3), (cx, *v.last().unwrap())].into_iter(), "black", 1.0);
    }
    s + "</svg>\n"
}
