//! Minimal SVG plots: bifurcation diagrams and time series.

use std::fmt::Write;

use slowfast::continuation::{BifurcationEvent, Branch, EventKind};
use slowfast::equilibrium::Stability;
use slowfast::integrate::Trajectory;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 60.0;
const TICKS: usize = 5;
/// Time series longer than this are reduced to per-column min/max pairs.
const MAX_SERIES_POINTS: usize = 4000;

pub const HOPF_COLOR: &str = "red";
pub const STOP_COLOR: &str = "blue";
pub const BRANCH_POINT_COLOR: &str = "orange";
pub const FOLD_COLOR: &str = "green";

/// Linear map from data coordinates into the plot area.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Frame {
        Frame {
            x: padded_range(xs, 0.0),
            y: padded_range(ys, 0.05),
        }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }
}

/// Finite min/max widened by `pad` of the span; a degenerate range is
/// widened to a unit (or relative) interval around its value.
fn padded_range(vals: impl Iterator<Item = f64>, pad: f64) -> (f64, f64) {
    let (lo, hi) = vals
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let span = hi - lo;
    if span <= 1e-12 * lo.abs().max(1.0) {
        let h = 0.5 * lo.abs().max(1.0);
        return (lo - h, hi + h);
    }
    (lo - pad * span, hi + pad * span)
}

fn header(out: &mut String) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
}

fn axes(out: &mut String, f: &Frame, xlabel: &str, ylabel: &str) {
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        out,
        r#"<g class="axes" stroke="gray" fill="none"><line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>"#
    );
    out.push_str(r#"<g class="ticks" fill="gray">"#);
    for k in 0..TICKS {
        let s = k as f64 / (TICKS - 1) as f64;
        let xv = f.x.0 + s * (f.x.1 - f.x.0);
        let yv = f.y.0 + s * (f.y.1 - f.y.0);
        let _ = write!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            f.px(xv),
            y0 + 16.0,
            tick(xv)
        );
        let _ = write!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            x0 - 6.0,
            f.py(yv) + 4.0,
            tick(yv)
        );
    }
    out.push_str("</g>\n");
    let _ = writeln!(
        out,
        r#"<text class="xlabel" x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        0.5 * (x0 + x1),
        HEIGHT - 15.0,
        escape(xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text class="ylabel" x="20" y="{:.1}" text-anchor="middle" transform="rotate(-90 20 {:.1})">{}</text>"#,
        0.5 * (y0 + y1),
        0.5 * (y0 + y1),
        escape(ylabel)
    );
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{:.4}", v).trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn polyline(out: &mut String, f: &Frame, pts: &[(f64, f64)], extra: &str) {
    if pts.is_empty() {
        return;
    }
    out.push_str("<polyline points=\"");
    for (i, &(x, y)) in pts.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{:.2},{:.2}", f.px(x), f.py(y));
    }
    let _ = writeln!(out, "\" fill=\"none\" stroke=\"black\" stroke-width=\"1.5\"{extra}/>");
}

fn marker(out: &mut String, f: &Frame, class: &str, color: &str, x: f64, y: f64) {
    let _ = writeln!(
        out,
        r#"<circle class="{class}" cx="{:.2}" cy="{:.2}" r="5" fill="{color}" stroke="black" stroke-width="0.5"/>"#,
        f.px(x),
        f.py(y)
    );
}

/// Equilibrium branches against the bifurcation parameter: stable parts
/// solid, unstable and saddle parts dashed. Hopf points are red, fold points
/// green, branch points orange and the oscillation stop `(param, value)`
/// blue.
pub fn render_bifurcation_svg(
    branches: &[Branch],
    events: &[BifurcationEvent],
    stop: Option<(f64, f64)>,
    observable: usize,
    labels: (&str, &str),
) -> String {
    let pts = branches.iter().flat_map(|b| b.points.iter());
    let xs = pts
        .clone()
        .map(|p| p.param)
        .chain(events.iter().map(|e| e.param_at))
        .chain(stop.map(|s| s.0));
    let ys = pts
        .map(|p| p.state[observable])
        .chain(events.iter().map(|e| e.state_at[observable]))
        .chain(stop.map(|s| s.1));
    let f = Frame::new(xs.clone(), ys.clone());

    let mut out = String::new();
    header(&mut out);
    axes(&mut out, &f, labels.0, labels.1);
    for b in branches {
        let mut run: Vec<(f64, f64)> = Vec::new();
        let mut stable = None;
        for p in &b.points {
            let s = p.stability == Stability::Stable;
            let xy = (p.param, p.state[observable]);
            if stable.is_some_and(|prev| prev != s) {
                // share the boundary point so the pieces join up
                run.push(xy);
                emit_run(&mut out, &f, &run, stable.unwrap());
                run.clear();
            }
            stable = Some(s);
            run.push(xy);
        }
        if let Some(s) = stable {
            emit_run(&mut out, &f, &run, s);
        }
    }
    // intersecting branches report a shared branch point once each
    let mut drawn: Vec<(EventKind, String)> = Vec::new();
    for e in events {
        let key = (e.kind, format!("{:.2},{:.2}", f.px(e.param_at), f.py(e.state_at[observable])));
        if drawn.contains(&key) {
            continue;
        }
        drawn.push(key);
        let (class, color) = match e.kind {
            EventKind::Hopf => ("hopf", HOPF_COLOR),
            EventKind::Fold => ("fold", FOLD_COLOR),
            EventKind::BranchPoint => ("branch-point", BRANCH_POINT_COLOR),
            EventKind::OscillationStop => ("stop", STOP_COLOR),
        };
        marker(&mut out, &f, class, color, e.param_at, e.state_at[observable]);
    }
    if let Some((x, y)) = stop {
        marker(&mut out, &f, "stop", STOP_COLOR, x, y);
    }
    out.push_str("</svg>\n");
    out
}

fn emit_run(out: &mut String, f: &Frame, run: &[(f64, f64)], stable: bool) {
    let (class, dash) = if stable {
        ("stable", "")
    } else {
        ("unstable", " stroke-dasharray=\"6 4\"")
    };
    polyline(out, f, run, &format!(" class=\"{class}\"{dash}"));
}

/// One coordinate of a trajectory against time.
pub fn render_timeseries_svg(traj: &Trajectory, observable: usize, label: &str) -> String {
    let series: Vec<(f64, f64)> = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(&t, s)| (t, s[observable]))
        .filter(|p| p.1.is_finite())
        .collect();
    let pts = decimate(&series, MAX_SERIES_POINTS / 2);
    let f = Frame::new(pts.iter().map(|p| p.0), pts.iter().map(|p| p.1));
    let mut out = String::new();
    header(&mut out);
    axes(&mut out, &f, "t", label);
    polyline(&mut out, &f, &pts, " class=\"series\"");
    out.push_str("</svg>\n");
    out
}

/// Splits the series into `buckets` equal runs and keeps each run's
/// minimum and maximum in time order, so narrow spikes survive.
fn decimate(series: &[(f64, f64)], buckets: usize) -> Vec<(f64, f64)> {
    if series.len() <= 2 * buckets {
        return series.to_vec();
    }
    let mut out = Vec::with_capacity(2 * buckets + 1);
    let n = series.len();
    for b in 0..buckets {
        let chunk = &series[b * n / buckets..(b + 1) * n / buckets];
        let lo = chunk.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        let hi = chunk.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        if lo.0 <= hi.0 {
            out.extend([*lo, *hi]);
        } else {
            out.extend([*hi, *lo]);
        }
    }
    out.dedup();
    out
}
