//! Recurrence criterion: equilibrium existence, Hopf events, oscillation
//! window and stop classification, combined into a verdict.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::continuation::{
    detect_events, solve_at, trace_branch, BifurcationEvent, Branch, ContinuationConfig, EventKind, ParamFamily,
};
use crate::equilibrium::{find_equilibria_scan, find_equilibrium, norm2, seed_grid, EigenSpectrum};
use crate::error::{Error, Result};
use crate::integrate::{integrate, IntegratorConfig};
use crate::models::{ModelId, ParameterSet};
use crate::oscillation::{
    duration_heuristic, find_stop_point, scan_parameter, OscillationClass, ScanOptions, ScanResult,
};
use crate::studies::Study;

/// Closest approach below which two branches count as coinciding.
pub const COINCIDENCE_TOL: f64 = 1e-4;
pub const DEFAULT_NEIGHBORHOOD: f64 = 0.01;
pub const DEFAULT_GRID_DENSITY: usize = 9;
const NEIGHBORHOOD_SAMPLES: usize = 41;
const SOLVE_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopKind {
    SuddenStop,
    Transcritical,
    SaddleNode,
    /// Eigenvalue crossing with neither a second branch nor a fold.
    Unclassified,
    NoStop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Recurrence,
    SemiRecurrence,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StopClassification {
    pub param_at: f64,
    pub eigen_zero_crossing: bool,
    pub coinciding_branches: bool,
    pub fold_reversal: bool,
    /// The neighborhood was cut by the end of the parameter range.
    pub one_sided: bool,
    /// Smallest distance found between this branch and any other.
    pub closest_approach: Option<f64>,
    pub kind: StopKind,
}

/// Sign of the eigenvalue product. It flips exactly when an odd number of
/// real eigenvalues pass through zero; complex pairs crossing the imaginary
/// axis leave it unchanged.
fn det_sign(sp: &EigenSpectrum) -> i8 {
    let (mut re, mut im) = (1.0_f64, 0.0_f64);
    for l in &sp.eigenvalues {
        (re, im) = (re * l.re - im * l.im, re * l.im + im * l.re);
    }
    if re > 0.0 {
        1
    } else if re < 0.0 {
        -1
    } else {
        0
    }
}

/// States of `branch` at parameter `p`, one per crossing of `p` along the
/// branch, polished by Newton from the linear interpolant.
pub fn branch_states_at<F: ParamFamily + ?Sized>(fam: &F, branch: &Branch, p: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for w in branch.points.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let (lo, hi) = (a.param.min(b.param), a.param.max(b.param));
        if p < lo || p > hi {
            continue;
        }
        let th = if b.param == a.param { 0.0 } else { (p - a.param) / (b.param - a.param) };
        let seed: Vec<f64> = a.state.iter().zip(&b.state).map(|(x, y)| x + th * (y - x)).collect();
        if let Some(x) = solve_at(fam, p, &seed, SOLVE_TOL) {
            if !out.iter().any(|o| dist(o, &x) <= 1e-9 * norm2(&x).max(1.0)) {
                out.push(x);
            }
        }
    }
    out
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Quadratic least-squares extrapolation of the five branch points nearest
/// the branch end at parameter `pb`.
fn extrapolate_end(branch: &Branch, pb: f64) -> Option<Vec<f64>> {
    let pts = &branch.points;
    if pts.len() < 5 {
        return None;
    }
    let first = (pts[0].param - pb).abs();
    let last = (pts[pts.len() - 1].param - pb).abs();
    let end: Vec<_> = if first <= last { pts[..5].iter().collect() } else { pts[pts.len() - 5..].iter().collect() };
    let scale = end.iter().map(|q| (q.param - pb).abs()).fold(0.0, f64::max);
    if !(scale > 0.0) || first.min(last) > 0.5 * scale.max(1e-12) + 1e-9 {
        return None;
    }
    // normal equations for c0 + c1 s + c2 s^2, s = (p - pb) / scale
    let mut m = [[0.0; 3]; 3];
    let n = end[0].state.len();
    let mut rhs = vec![[0.0; 3]; n];
    for q in &end {
        let s = (q.param - pb) / scale;
        let basis = [1.0, s, s * s];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += basis[i] * basis[j];
            }
            for k in 0..n {
                rhs[k][i] += basis[i] * q.state[k];
            }
        }
    }
    let lu = crate::linalg::Matrix::from_rows(&[m[0].to_vec(), m[1].to_vec(), m[2].to_vec()]).lu();
    let mut out = Vec::with_capacity(n);
    for r in &rhs {
        out.push(lu.solve(&r[..]).ok()?[0]);
    }
    Some(out)
}

/// Marches along the sheet of `branch` through `start` at `p0` towards
/// each end of `[lo, hi]`, returning `(param, state)` sorted by param.
fn march<F: ParamFamily + ?Sized>(
    fam: &F,
    branch: &Branch,
    start: &[f64],
    p0: f64,
    lo: f64,
    hi: f64,
) -> Vec<(f64, Vec<f64>)> {
    let h = (hi - lo) / (NEIGHBORHOOD_SAMPLES - 1) as f64;
    let mut out = vec![(p0, start.to_vec())];
    for dir in [-1.0, 1.0] {
        let mut prev = start.to_vec();
        let mut prev_prev: Option<(f64, Vec<f64>)> = None;
        let mut p = p0;
        loop {
            let target = if dir < 0.0 { (p - h).max(lo) } else { (p + h).min(hi) };
            if (target - p).abs() < 1e-15 * p.abs().max(1.0) {
                break;
            }
            let seed: Vec<f64> = match &prev_prev {
                Some((pp, xp)) => prev
                    .iter()
                    .zip(xp)
                    .map(|(a, b)| a + (a - b) * (target - p) / (p - pp))
                    .collect(),
                None => prev.clone(),
            };
            // prefer the traced branch: Newton from a secant seed stalls where
            // the Jacobian is singular, e.g. at a transcritical crossing
            let on_branch = branch_states_at(fam, branch, target)
                .into_iter()
                .min_by(|a, b| dist(a, &seed).total_cmp(&dist(b, &seed)));
            let Some(x) = on_branch.or_else(|| solve_at(fam, target, &seed, SOLVE_TOL)) else {
                break;
            };
            // a jump to another sheet shows up as a large secant
            if dist(&x, &prev) > 0.5 * norm2(&prev).max(1.0) {
                break;
            }
            prev_prev = Some((p, prev));
            prev = x.clone();
            p = target;
            out.push((p, x));
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Distance-minimising parameter between two sheets, by golden section.
fn closest_between<F: ParamFamily + ?Sized>(
    fam: &F,
    a_seed: &[f64],
    b_seed: &[f64],
    lo: f64,
    hi: f64,
) -> Option<f64> {
    let d = |p: f64| -> Option<f64> {
        let xa = solve_at(fam, p, a_seed, SOLVE_TOL)?;
        let xb = solve_at(fam, p, b_seed, SOLVE_TOL)?;
        Some(dist(&xa, &xb))
    };
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - g * (b - a);
    let mut e = a + g * (b - a);
    let (mut fc, mut fe) = (d(c)?, d(e)?);
    for _ in 0..80 {
        if (b - a) <= 1e-13 * a.abs().max(1.0) {
            break;
        }
        if fc < fe {
            b = e;
            e = c;
            fe = fc;
            c = b - g * (b - a);
            fc = d(c)?;
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + g * (b - a);
            fe = d(e)?;
        }
    }
    Some(fc.min(fe))
}

/// Decides whether a stop at `stop_param` coincides with an eigenvalue
/// crossing, a second equilibrium branch or a fold of `branch`.
pub fn classify_stop_kind(
    branch: &Branch,
    other_branches: &[Branch],
    stop_param: f64,
    neighborhood: f64,
) -> Result<StopClassification> {
    if !(neighborhood > 0.0) || !stop_param.is_finite() {
        return Err(Error::InvalidInput("neighborhood must be positive and stop finite".into()));
    }
    let fam = branch.family()?;
    let (elo, ehi) = branch.param_extent();
    let (rlo, rhi) = branch.range;
    let tol = 1e-9 * stop_param.abs().max(1.0);
    if !(stop_param >= elo - tol && stop_param <= ehi + tol) {
        return Err(Error::InsufficientCoverage(format!(
            "branch covers [{elo}, {ehi}], stop at {stop_param}"
        )));
    }
    let p0 = stop_param.clamp(elo, ehi);
    let (wlo, whi) = (stop_param - neighborhood, stop_param + neighborhood);
    let one_sided = wlo < rlo || whi > rhi;
    let (lo, hi) = (wlo.max(elo), whi.min(ehi));

    let starts = branch_states_at(&fam, branch, p0);
    let start = starts
        .first()
        .ok_or_else(|| Error::InsufficientCoverage(format!("no branch state at {p0}")))?;
    let sheet = march(&fam, branch, start, p0, lo, hi);

    let mut signs = Vec::with_capacity(sheet.len());
    for (p, x) in &sheet {
        signs.push(det_sign(&EigenSpectrum::of(&fam.jacobian(*p, x))?));
    }
    let mut eigen_zero_crossing = signs.windows(2).any(|w| w[0] != w[1]);

    let fold_reversal = detect_events(branch)?
        .iter()
        .any(|e| e.kind == EventKind::Fold && e.param_at >= lo - tol && e.param_at <= hi + tol);
    if fold_reversal {
        eigen_zero_crossing = true;
    }

    // closest approach of any other branch within the neighborhood
    let mut closest: Option<f64> = None;
    let mut note = |d: f64| closest = Some(closest.map_or(d, |c: f64| c.min(d)));
    for other in other_branches {
        if other.bif_param != branch.bif_param {
            continue;
        }
        let ofam = other.family()?;
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for (k, (p, x)) in sheet.iter().enumerate() {
            for y in branch_states_at(&ofam, other, *p) {
                let d = dist(x, &y);
                if best.as_ref().is_none_or(|b| d < b.0) {
                    best = Some((d, k, y));
                }
            }
        }
        if let Some((d, k, y)) = best {
            note(d);
            let a = sheet[k.saturating_sub(1)].0;
            let b = sheet[(k + 1).min(sheet.len() - 1)].0;
            if b > a {
                if let Some(dm) = closest_between(&fam, &sheet[k].1, &y, a, b) {
                    note(dm);
                }
            }
        }
        if one_sided {
            for pb in [rlo, rhi] {
                if pb < wlo || pb > whi {
                    continue;
                }
                if let (Some(xa), Some(xb)) = (extrapolate_end(branch, pb), extrapolate_end(other, pb)) {
                    note(dist(&xa, &xb));
                }
            }
        }
    }
    let coinciding_branches = closest.is_some_and(|d| d < COINCIDENCE_TOL);
    let kind = match (eigen_zero_crossing, coinciding_branches, fold_reversal) {
        (false, false, _) => StopKind::SuddenStop,
        (true, true, _) => StopKind::Transcritical,
        (true, false, true) => StopKind::SaddleNode,
        _ => StopKind::Unclassified,
    };
    Ok(StopClassification {
        param_at: stop_param,
        eigen_zero_crossing,
        coinciding_branches,
        fold_reversal,
        one_sided,
        closest_approach: closest,
        kind,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowReport {
    pub interval: (f64, f64),
    pub continuity: bool,
    pub grid: Vec<f64>,
    pub classes: Vec<OscillationClass>,
}

/// Window between a Hopf point and a stop; continuous when every scan
/// record strictly inside it is sustained.
pub fn window_report(hopf: &BifurcationEvent, stop: f64, scan: &ScanResult) -> Result<WindowReport> {
    if hopf.kind != EventKind::Hopf {
        return Err(Error::InvalidInput(format!("expected a Hopf event, got {:?}", hopf.kind)));
    }
    let h = hopf.param_at;
    let interval = (h.min(stop), h.max(stop));
    let mut grid = Vec::new();
    let mut classes = Vec::new();
    for (p, r) in scan.grid.iter().zip(&scan.records) {
        if *p > interval.0 && *p < interval.1 {
            grid.push(*p);
            classes.push(r.class);
        }
    }
    if !classes.is_empty() && classes.iter().all(|c| !c.is_oscillating()) {
        return Err(Error::InvalidInput(format!(
            "no oscillation between Hopf {h} and stop {stop}: the stop lies on the stable side"
        )));
    }
    let continuity = interval.1 > interval.0 && !classes.is_empty() && classes.iter().all(|c| *c == OscillationClass::Sustained);
    Ok(WindowReport {
        interval,
        continuity,
        grid,
        classes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriterionOptions {
    pub observable: usize,
    /// Interior grid points used for the window continuity check.
    pub grid_density: usize,
    pub neighborhood: f64,
    /// Points of the coarse scan over the whole range.
    pub coarse_points: usize,
    pub seed_bounds: Vec<(f64, f64)>,
    pub seed_counts: Vec<usize>,
    /// Overrides the Hopf-frequency duration heuristic.
    pub duration: Option<f64>,
    pub integrator: IntegratorConfig,
}

impl Default for CriterionOptions {
    fn default() -> Self {
        CriterionOptions {
            observable: 0,
            grid_density: DEFAULT_GRID_DENSITY,
            neighborhood: DEFAULT_NEIGHBORHOOD,
            coarse_points: 37,
            seed_bounds: Vec::new(),
            seed_counts: Vec::new(),
            duration: None,
            integrator: IntegratorConfig::default(),
        }
    }
}

impl CriterionOptions {
    pub fn for_study(s: &Study) -> Self {
        CriterionOptions {
            observable: s.observable,
            seed_bounds: s.seed_bounds.to_vec(),
            seed_counts: s.seed_counts.to_vec(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageStatus {
    Holds,
    Fails,
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct C1Evidence {
    pub status: StageStatus,
    pub param: Option<f64>,
    pub count: usize,
    pub equilibria: Vec<Vec<f64>>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StopEvent {
    pub param: f64,
    pub kind: StopKind,
    pub bracket: (f64, f64),
    /// The oscillation that stops is damped rather than sustained.
    pub damped: bool,
    /// The stop lies within the neighborhood of a range end.
    pub at_boundary: bool,
    pub classification: Option<StopClassification>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct C2Evidence {
    pub status: StageStatus,
    pub stop: Option<StopEvent>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct C3Evidence {
    pub status: StageStatus,
    pub hopf: Vec<BifurcationEvent>,
    pub other_events: Vec<BifurcationEvent>,
    pub branch_count: usize,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct C4Evidence {
    pub status: StageStatus,
    pub window: Option<WindowReport>,
    pub note: Option<String>,
}

/// The transcritical/saddle-node form of the criterion, for comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OldCriterion {
    pub satisfied: bool,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionReport {
    pub model: ModelId,
    pub bif_param: String,
    pub range: (f64, f64),
    pub c1: C1Evidence,
    pub c2: C2Evidence,
    pub c3: C3Evidence,
    pub c4: C4Evidence,
    pub verdict: Verdict,
    pub stop_kind: StopKind,
    /// The Hopf pair bracketing the sustained region (semi-recurrence).
    pub hopf_pair: Option<(f64, f64)>,
    pub old_criterion: OldCriterion,
    pub scan: Option<ScanResult>,
}

impl CriterionReport {
    pub fn summary_table(&self) -> String {
        let st = |s: StageStatus| match s {
            StageStatus::Holds => "holds",
            StageStatus::Fails => "fails",
            StageStatus::Indeterminate => "indeterminate",
        };
        let mut s = format!("model {}  parameter {}  range [{}, {}]\n", self.model, self.bif_param, self.range.0, self.range.1);
        s.push_str(&format!(
            "  C1 equilibrium exists   {:<13} {} equilibria at {}\n",
            st(self.c1.status),
            self.c1.count,
            self.c1.param.map_or("-".into(), |p| format!("{p:.6}"))
        ));
        let stop = self.c2.stop.as_ref().map_or("-".to_string(), |e| format!("{:.6} ({:?})", e.param, e.kind));
        s.push_str(&format!("  C2 stop in oscillation  {:<13} {stop}\n", st(self.c2.status)));
        let hopf: Vec<String> = self.c3.hopf.iter().map(|e| format!("{:.6}", e.param_at)).collect();
        s.push_str(&format!("  C3 Hopf bifurcation     {:<13} [{}]\n", st(self.c3.status), hopf.join(", ")));
        let win = self
            .c4
            .window
            .as_ref()
            .map_or("-".to_string(), |w| format!("({:.6}, {:.6}) continuity {}", w.interval.0, w.interval.1, w.continuity));
        s.push_str(&format!("  C4 window               {:<13} {win}\n", st(self.c4.status)));
        s.push_str(&format!(
            "  verdict {:?}  stop kind {:?}  older criterion {}\n",
            self.verdict,
            self.stop_kind,
            if self.old_criterion.satisfied { "satisfied" } else { "not satisfied" }
        ));
        s
    }
}

struct Traced {
    branches: Vec<Branch>,
    events: Vec<Vec<BifurcationEvent>>,
}

fn same_branch(a: &Branch, b: &Branch) -> bool {
    let Ok(fam) = a.family() else { return false };
    let mid = &b.points[b.points.len() / 2];
    branch_states_at(&fam, a, mid.param)
        .iter()
        .any(|x| dist(x, &mid.state) <= 1e-6 * norm2(x).max(1.0))
}

fn trace_all(base: &ParameterSet, bif: &str, range: (f64, f64), sample_params: &[f64], seeds: &[Vec<f64>]) -> Result<Traced> {
    let mut starts = Vec::new();
    for &p in sample_params {
        let ps = base.with_bif_value(p);
        if let Ok(scan) = find_equilibria_scan(&ps, seeds) {
            starts.extend(scan.equilibria);
        }
    }
    let traced: Vec<Branch> = starts
        .par_iter()
        .filter_map(|e| trace_branch(base, bif, range, e, &ContinuationConfig::default()).ok())
        .filter(|b| b.points.len() >= 2)
        .collect();
    let mut branches: Vec<Branch> = Vec::new();
    for b in traced {
        if !branches.iter().any(|k| same_branch(k, &b)) {
            branches.push(b);
        }
    }
    let events = branches.par_iter().map(|b| detect_events(b).unwrap_or_default()).collect();
    Ok(Traced { branches, events })
}

/// Traces the branch through every equilibrium found from `seeds` at 10%,
/// 50% and 90% of `range`, drops duplicates, and detects events on each.
pub fn trace_equilibrium_set(
    base: &ParameterSet,
    bif_param: &str,
    range: (f64, f64),
    seeds: &[Vec<f64>],
) -> Result<Vec<(Branch, Vec<BifurcationEvent>)>> {
    let base = base.clone().with_bif_param(bif_param)?;
    let width = range.1 - range.0;
    let samples = [0.1, 0.5, 0.9].map(|f| range.0 + f * width);
    let t = trace_all(&base, bif_param, range, &samples, seeds)?;
    Ok(t.branches.into_iter().zip(t.events).collect())
}

/// One end of the sustained region of the coarse scan.
#[derive(Debug, Clone)]
struct RegionEnd {
    /// Grid index of the last sustained cell.
    edge: usize,
    /// Hopf (branch, event index) nearest the edge, searched from one cell
    /// inside the region to the outer neighbor.
    hopf: Option<(usize, usize)>,
}

fn hopf_between(traced: &Traced, a: f64, b: f64, near: f64) -> Option<(usize, usize)> {
    let (lo, hi) = (a.min(b), a.max(b));
    let tol = 1e-9 * hi.abs().max(1.0);
    let mut found: Option<((usize, usize), f64)> = None;
    for (bi, evs) in traced.events.iter().enumerate() {
        for (ei, e) in evs.iter().enumerate() {
            if e.kind == EventKind::Hopf && e.param_at >= lo - tol && e.param_at <= hi + tol {
                let d = (e.param_at - near).abs();
                if found.map_or(true, |(_, best)| d < best) {
                    found = Some(((bi, ei), d));
                }
            }
        }
    }
    found.map(|(id, _)| id)
}

/// Walks outward from `edge` in direction `step` past oscillating cells to
/// the first silent one: returns (last oscillating, first silent) indices.
fn outward_stop(scan: &ScanResult, edge: usize, step: isize) -> Option<(usize, usize)> {
    let n = scan.grid.len() as isize;
    let mut i = edge as isize;
    loop {
        let j = i + step;
        if j < 0 || j >= n {
            return None;
        }
        if !scan.records[j as usize].class.is_oscillating() {
            return Some((i as usize, j as usize));
        }
        i = j;
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

fn dedup_hopf(traced: &Traced) -> Vec<BifurcationEvent> {
    let mut out: Vec<BifurcationEvent> = Vec::new();
    for e in traced.events.iter().flatten().filter(|e| e.kind == EventKind::Hopf) {
        let dup = out.iter().any(|o| {
            (o.param_at - e.param_at).abs() <= 1e-7 * e.param_at.abs().max(1.0)
                && dist(&o.state_at, &e.state_at) <= 1e-5 * norm2(&e.state_at).max(1.0)
        });
        if !dup {
            out.push(e.clone());
        }
    }
    out.sort_by(|a, b| a.param_at.total_cmp(&b.param_at));
    out
}

/// Index of the traced branch whose state at `p` is closest to `x`, if
/// within 1e-3 relative.
fn branch_of(traced: &Traced, p: f64, x: &[f64]) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (i, b) in traced.branches.iter().enumerate() {
        let Ok(fam) = b.family() else { continue };
        for y in branch_states_at(&fam, b, p) {
            let d = dist(&y, x);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
    }
    best.filter(|(d, _)| *d <= 1e-3 * norm2(x).max(1.0)).map(|(_, i)| i)
}

fn stop_rank(k: StopKind) -> u8 {
    match k {
        StopKind::Transcritical => 3,
        StopKind::SaddleNode => 2,
        _ => 0,
    }
}

/// Runs the whole pipeline; a stage that cannot be completed is marked
/// indeterminate and the remaining stages still run where possible.
pub fn check_criterion(
    params: &ParameterSet,
    bif_param: &str,
    range: (f64, f64),
    x0: &[f64],
    opts: &CriterionOptions,
) -> Result<CriterionReport> {
    let base = params.clone().with_bif_param(bif_param)?;
    let model = base.model();
    let dim = base.def().dim;
    if !(range.1 > range.0) || !range.0.is_finite() || !range.1.is_finite() {
        return Err(Error::InvalidInput(format!("empty range [{}, {}]", range.0, range.1)));
    }
    if x0.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: x0.len() });
    }
    if opts.observable >= dim || opts.grid_density < 1 || opts.coarse_points < 3 || !(opts.neighborhood > 0.0) {
        return Err(Error::InvalidInput("invalid criterion options".into()));
    }
    let (bounds, counts) = if opts.seed_bounds.len() == dim && opts.seed_counts.len() == dim {
        (opts.seed_bounds.clone(), opts.seed_counts.clone())
    } else {
        let b: Vec<(f64, f64)> = x0.iter().map(|v| (0.0f64.min(2.0 * v), 0.0f64.max(2.0 * v).max(1.0))).collect();
        (b, vec![4; dim])
    };
    let seeds = seed_grid(&bounds, &counts);
    let width = range.1 - range.0;

    // C3: branches from equilibria found across the range, then events.
    let samples = [0.1, 0.5, 0.9].map(|f| range.0 + f * width);
    let traced = trace_all(&base, bif_param, range, &samples, &seeds)?;
    let hopf = dedup_hopf(&traced);
    let other_events: Vec<BifurcationEvent> = traced
        .events
        .iter()
        .flatten()
        .filter(|e| e.kind != EventKind::Hopf)
        .cloned()
        .collect();
    let mut c3 = C3Evidence {
        status: if hopf.is_empty() { StageStatus::Fails } else { StageStatus::Holds },
        hopf: hopf.clone(),
        other_events,
        branch_count: traced.branches.len(),
        note: traced.branches.is_empty().then(|| "no equilibrium branch could be traced".to_string()),
    };
    if traced.branches.is_empty() {
        c3.status = StageStatus::Indeterminate;
    }

    // Coarse oscillation scan over the whole range.
    let freq = hopf.iter().filter_map(|e| e.frequency).filter(|w| *w > 0.0).fold(None, |m: Option<f64>, w| {
        Some(m.map_or(w, |m| m.min(w)))
    });
    let scan_opts = ScanOptions {
        observable: opts.observable,
        duration: opts.duration.unwrap_or_else(|| duration_heuristic(freq)),
        integrator: opts.integrator,
        ..Default::default()
    };
    let coarse_n = opts.coarse_points.max(2 * opts.grid_density + 3);
    let grid = linspace(range.0, range.1, coarse_n);
    let scan = match scan_parameter(&base, bif_param, &grid, x0, &scan_opts) {
        Ok(s) => Some(s),
        Err(e) => {
            return Ok(indeterminate_report(model, bif_param, range, c3, format!("oscillation scan failed: {e}")));
        }
    };
    let scan_ref = scan.as_ref().expect("scan present");

    // Longest run of sustained cells.
    let sustained: Vec<bool> = scan_ref.records.iter().map(|r| r.class == OscillationClass::Sustained).collect();
    let mut best: Option<(usize, usize)> = None;
    let mut i = 0;
    while i < sustained.len() {
        if sustained[i] {
            let mut j = i;
            while j + 1 < sustained.len() && sustained[j + 1] {
                j += 1;
            }
            if best.is_none_or(|(a, b)| j - i > b - a) {
                best = Some((i, j));
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }

    let mut c2 = C2Evidence {
        status: StageStatus::Fails,
        stop: None,
        note: None,
    };
    let mut c4 = C4Evidence {
        status: StageStatus::Fails,
        window: None,
        note: None,
    };
    let mut verdict = Verdict::None;
    let mut hopf_pair = None;
    let mut c1_param = 0.5 * (range.0 + range.1);

    if let Some((a, b)) = best {
        // Decay is slowest next to a Hopf point, so the cell just inside
        // it often still reads as sustained: include one interior cell.
        let end_of = |edge: usize, step: isize| -> RegionEnd {
            let nb = edge as isize + step;
            let inner = (edge as isize - step).clamp(a as isize, b as isize) as usize;
            let hopf = (nb >= 0 && (nb as usize) < grid.len())
                .then(|| hopf_between(&traced, grid[inner], grid[nb as usize], grid[edge]))
                .flatten();
            RegionEnd { edge, hopf }
        };
        let lo_end = end_of(a, -1);
        let hi_end = end_of(b, 1);
        let stop_opts = scan_opts;

        match (lo_end.hopf, hi_end.hopf) {
            (Some(_), Some(_)) => {
                // Two Hopf points bracket the sustained region: look for a
                // stop of damped oscillation beyond either of them.
                let (hl, hh) = (lo_end.hopf.unwrap(), hi_end.hopf.unwrap());
                let p_lo = traced.events[hl.0][hl.1].param_at;
                let p_hi = traced.events[hh.0][hh.1].param_at;
                hopf_pair = Some((p_lo, p_hi));
                let mut candidates = Vec::new();
                for (hp, edge_out, toward) in [(p_lo, range.0, -1.0), (p_hi, range.1, 1.0)] {
                    if (hp - edge_out).abs() <= 0.0 {
                        continue;
                    }
                    let g = linspace(hp, edge_out, opts.grid_density + 2);
                    let g: Vec<f64> = g[1..].to_vec();
                    let g = if g.len() >= 3 { g } else { continue };
                    let Ok(s) = scan_parameter(&base, bif_param, &g, x0, &scan_opts) else { continue };
                    let classes: Vec<OscillationClass> = s.records.iter().map(|r| r.class).collect();
                    let first_damped = classes.iter().position(|c| *c == OscillationClass::Damped);
                    let Some(fd) = first_damped else { continue };
                    let Some(k) = (fd..classes.len()).find(|&k| !classes[k].is_oscillating()) else { continue };
                    if k == 0 || !classes[k - 1].is_oscillating() {
                        continue;
                    }
                    let bracket = (g[k - 1], g[k]);
                    let Ok(stop) = find_stop_point(&base, bif_param, bracket, x0, &stop_opts) else { continue };
                    let to_bound = (stop - edge_out).abs() / width;
                    candidates.push((to_bound, hp, stop, bracket, toward));
                }
                candidates.sort_by(|x, y| x.0.total_cmp(&y.0));
                if let Some(&(_, inner, stop, bracket, _)) = candidates.first() {
                    let hopf_branch = if inner == p_lo { hl.0 } else { hh.0 };
                    let (kind, cls) = stop_classification(&traced, hopf_branch, stop, opts.neighborhood);
                    let at_boundary = (stop - range.0).abs() <= opts.neighborhood || (stop - range.1).abs() <= opts.neighborhood;
                    c2 = C2Evidence {
                        status: StageStatus::Holds,
                        stop: Some(StopEvent {
                            param: stop,
                            kind,
                            bracket,
                            damped: true,
                            at_boundary,
                            classification: cls,
                        }),
                        note: None,
                    };
                    verdict = Verdict::SemiRecurrence;
                    let outer = if inner == p_lo { hh } else { hl };
                    let outer_ev = &traced.events[outer.0][outer.1];
                    c1_param = 0.5 * (p_lo + p_hi);
                    let (wr, note) = window_for(&base, bif_param, outer_ev, stop, x0, &scan_opts, opts.grid_density);
                    c4.window = wr;
                    c4.note = note;
                } else {
                    c2.note = Some("no stop of damped oscillation beyond either Hopf point".into());
                    c1_param = 0.5 * (p_lo + p_hi);
                }
            }
            (h, other) => {
                let (hopf_end, stop_end, step) = match (h, other) {
                    (Some(_), None) => (lo_end.clone(), hi_end.clone(), 1isize),
                    (None, Some(_)) => (hi_end.clone(), lo_end.clone(), -1isize),
                    _ => (lo_end.clone(), hi_end.clone(), 0isize),
                };
                // Stop side: from the sustained edge outward to the first silent cell.
                let stop_search = if step == 0 {
                    // no Hopf side: try both directions
                    outward_stop(scan_ref, b, 1).or_else(|| outward_stop(scan_ref, a, -1))
                } else {
                    outward_stop(scan_ref, stop_end.edge, step)
                };
                match stop_search {
                    Some((io, is)) => {
                        let bracket = (grid[io], grid[is]);
                        match find_stop_point(&base, bif_param, bracket, x0, &stop_opts) {
                            Ok(stop) => {
                                let hb = hopf_end.hopf.map(|(bi, _)| bi);
                                let attractor = attractor_branch(&base, &traced, grid[is], x0, &scan_opts);
                                let (mut kind, mut cls) = match hb {
                                    Some(bi) => stop_classification(&traced, bi, stop, opts.neighborhood),
                                    None => (StopKind::NoStop, None),
                                };
                                if let Some(ai) = attractor.filter(|ai| Some(*ai) != hb) {
                                    let (k2, c2c) = stop_classification(&traced, ai, stop, opts.neighborhood);
                                    if hb.is_none() || stop_rank(k2) > stop_rank(kind) {
                                        kind = k2;
                                        cls = c2c;
                                    }
                                }
                                let damped = scan_ref.records[io].class == OscillationClass::Damped;
                                let at_boundary = (stop - range.0).abs() <= opts.neighborhood
                                    || (stop - range.1).abs() <= opts.neighborhood;
                                c2 = C2Evidence {
                                    status: if kind == StopKind::NoStop { StageStatus::Indeterminate } else { StageStatus::Holds },
                                    stop: Some(StopEvent {
                                        param: stop,
                                        kind,
                                        bracket,
                                        damped,
                                        at_boundary,
                                        classification: cls,
                                    }),
                                    note: (kind == StopKind::NoStop)
                                        .then(|| "no equilibrium branch available to classify the stop".into()),
                                };
                                if let Some((bi, ei)) = hopf_end.hopf {
                                    let ev = &traced.events[bi][ei];
                                    c1_param = 0.5 * (ev.param_at + stop);
                                    let (wr, note) =
                                        window_for(&base, bif_param, ev, stop, x0, &scan_opts, opts.grid_density);
                                    c4.window = wr;
                                    c4.note = note;
                                } else {
                                    c1_param = 0.5 * (grid[a] + grid[b]);
                                    c4.note = Some("no Hopf point bounds the oscillation region".into());
                                }
                            }
                            Err(e) => {
                                c2.status = StageStatus::Indeterminate;
                                c2.note = Some(format!("stop bisection failed: {e}"));
                            }
                        }
                    }
                    None => {
                        c2.note = Some("sustained oscillation reaches the end of the range".into());
                        c1_param = 0.5 * (grid[a] + grid[b]);
                    }
                }
            }
        }
    } else {
        c2.note = Some("no sustained oscillation found in the range".into());
        c4.note = Some("no sustained oscillation found in the range".into());
    }
    if let Some(w) = &c4.window {
        c4.status = if w.continuity { StageStatus::Holds } else { StageStatus::Fails };
    } else if c4.note.is_none() {
        c4.status = StageStatus::Indeterminate;
    }

    // C1 at the window midpoint.
    let c1 = match find_equilibria_scan(&base.with_bif_value(c1_param), &seeds) {
        Ok(s) => C1Evidence {
            status: if s.equilibria.is_empty() { StageStatus::Fails } else { StageStatus::Holds },
            param: Some(c1_param),
            count: s.equilibria.len(),
            equilibria: s.equilibria.iter().map(|e| e.state.clone()).collect(),
            note: None,
        },
        Err(e) => C1Evidence {
            status: StageStatus::Indeterminate,
            param: Some(c1_param),
            count: 0,
            equilibria: Vec::new(),
            note: Some(e.to_string()),
        },
    };

    let stop_kind = c2.stop.as_ref().map_or(StopKind::NoStop, |s| s.kind);
    if verdict != Verdict::SemiRecurrence {
        let holds = |s: StageStatus| s == StageStatus::Holds;
        if holds(c1.status) && holds(c2.status) && holds(c3.status) && holds(c4.status) {
            verdict = Verdict::Recurrence;
        }
    } else if c1.status != StageStatus::Holds {
        verdict = Verdict::None;
    }
    let old_ok = c1.status == StageStatus::Holds
        && c3.status == StageStatus::Holds
        && matches!(stop_kind, StopKind::Transcritical | StopKind::SaddleNode);
    let old_criterion = OldCriterion {
        satisfied: old_ok,
        note: format!("oscillation ends at a {:?} point", stop_kind),
    };
    Ok(CriterionReport {
        model,
        bif_param: bif_param.to_string(),
        range,
        c1,
        c2,
        c3,
        c4,
        verdict,
        stop_kind,
        hopf_pair,
        old_criterion,
        scan,
    })
}

fn indeterminate_report(model: ModelId, bif: &str, range: (f64, f64), c3: C3Evidence, note: String) -> CriterionReport {
    let ind = || Some(note.clone());
    CriterionReport {
        model,
        bif_param: bif.to_string(),
        range,
        c1: C1Evidence {
            status: StageStatus::Indeterminate,
            param: None,
            count: 0,
            equilibria: Vec::new(),
            note: ind(),
        },
        c2: C2Evidence {
            status: StageStatus::Indeterminate,
            stop: None,
            note: ind(),
        },
        c3,
        c4: C4Evidence {
            status: StageStatus::Indeterminate,
            window: None,
            note: ind(),
        },
        verdict: Verdict::None,
        stop_kind: StopKind::NoStop,
        hopf_pair: None,
        old_criterion: OldCriterion {
            satisfied: false,
            note,
        },
        scan: None,
    }
}

fn stop_classification(traced: &Traced, bi: usize, stop: f64, nb: f64) -> (StopKind, Option<StopClassification>) {
    let branch = &traced.branches[bi];
    let others: Vec<Branch> = traced
        .branches
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != bi)
        .map(|(_, b)| b.clone())
        .collect();
    match classify_stop_kind(branch, &others, stop, nb) {
        Ok(c) => (c.kind, Some(c)),
        Err(_) => (StopKind::NoStop, None),
    }
}

/// Branch of the equilibrium the silent-side trajectory settles on.
fn attractor_branch(base: &ParameterSet, traced: &Traced, p: f64, x0: &[f64], opts: &ScanOptions) -> Option<usize> {
    let ps = base.with_bif_value(p);
    let cfg = IntegratorConfig {
        dense_dt: Some(opts.duration / 100.0),
        ..opts.integrator
    };
    let traj = integrate(&ps, x0, (0.0, opts.duration), &cfg).ok()?;
    if traj.is_failed() {
        return None;
    }
    let end = traj.last_state()?;
    let eq = find_equilibrium(&ps, end, 1e-12).ok()?;
    if dist(&eq.state, end) > 1e-3 * norm2(end).max(1.0) {
        return None;
    }
    branch_of(traced, p, &eq.state)
}

fn window_for(
    base: &ParameterSet,
    bif: &str,
    hopf: &BifurcationEvent,
    stop: f64,
    x0: &[f64],
    opts: &ScanOptions,
    density: usize,
) -> (Option<WindowReport>, Option<String>) {
    let (lo, hi) = (hopf.param_at.min(stop), hopf.param_at.max(stop));
    if !(hi > lo) {
        return (
            Some(WindowReport {
                interval: (lo, hi),
                continuity: false,
                grid: Vec::new(),
                classes: Vec::new(),
            }),
            Some("empty window".into()),
        );
    }
    let n = density.max(3);
    let grid: Vec<f64> = (1..=n).map(|k| lo + (hi - lo) * k as f64 / (n + 1) as f64).collect();
    match scan_parameter(base, bif, &grid, x0, opts) {
        Ok(s) => match window_report(hopf, stop, &s) {
            Ok(w) => (Some(w), None),
            Err(e) => (None, Some(e.to_string())),
        },
        Err(e) => (None, Some(format!("window scan failed: {e}"))),
    }
}

/// Convenience wrapper using a study preset.
pub fn check_study(study: &Study) -> Result<CriterionReport> {
    check_criterion(
        &study.params(),
        study.bif_param,
        study.range,
        study.x0,
        &CriterionOptions::for_study(study),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oscillation::OscillationRecord;

    fn branches_at(params: &ParameterSet, bif: &str, p0: f64, range: (f64, f64), seeds: &[Vec<f64>]) -> Vec<Branch> {
        let at = params.with_bif_value(p0);
        let scan = find_equilibria_scan(&at, seeds).unwrap();
        scan.equilibria
            .iter()
            .map(|e| trace_branch(params, bif, range, e, &ContinuationConfig::default()).unwrap())
            .collect()
    }

    fn hiv() -> ParameterSet {
        ParameterSet::defaults(ModelId::Hiv).with_bif_param("D").unwrap()
    }

    #[test]
    fn hiv_crossing_is_transcritical() {
        let p = hiv();
        let b = p.get("B").unwrap();
        let seeds = seed_grid(&[(0.0, 30.0), (0.0, 2.0)], &[7, 9]);
        let brs = branches_at(&p, "D", 0.08, (0.02, 0.1), &seeds);
        // the uninfected branch x = 1/D, y = 0
        let (i, free) = brs
            .iter()
            .enumerate()
            .find(|(_, br)| br.points.iter().all(|q| q.state[1].abs() < 1e-9))
            .expect("uninfected branch");
        let others: Vec<Branch> = brs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, b)| b.clone()).collect();
        let c = classify_stop_kind(free, &others, b, 0.01).unwrap();
        assert!(c.eigen_zero_crossing && c.coinciding_branches, "{c:?}");
        assert_eq!(c.kind, StopKind::Transcritical);

        // away from the crossing nothing happens on the same branch
        let c = classify_stop_kind(free, &others, 0.03, 0.005).unwrap();
        assert_eq!(c.kind, StopKind::SuddenStop, "{c:?}");
    }

    #[test]
    fn fold_is_saddle_node() {
        let p = hiv();
        let seeds = seed_grid(&[(0.0, 30.0), (0.0, 2.0)], &[7, 9]);
        let brs = branches_at(&p, "D", 0.08, (0.02, 0.15), &seeds);
        let (br, fold) = brs
            .iter()
            .find_map(|br| {
                let ev = detect_events(br).unwrap();
                ev.iter().find(|e| e.kind == EventKind::Fold).map(|e| (br, e.param_at))
            })
            .expect("a branch with a fold");
        let c = classify_stop_kind(br, &[], fold, 0.005).unwrap();
        assert!(c.fold_reversal && c.eigen_zero_crossing, "{c:?}");
        assert_eq!(c.kind, StopKind::SaddleNode);
    }

    #[test]
    fn gause_stop_is_sudden() {
        let p = ParameterSet::defaults(ModelId::Gause).with_bif_param("eps").unwrap();
        let brs = branches_at(&p, "eps", 0.1, (0.0, 0.6), &[vec![1.0, 10.0]]);
        let c = classify_stop_kind(&brs[0], &[], 0.005, 0.01).unwrap();
        assert!(c.one_sided && !c.eigen_zero_crossing, "{c:?}");
        assert_eq!(c.kind, StopKind::SuddenStop);
        assert!(classify_stop_kind(&brs[0], &[], 0.005, 0.0).is_err());
        assert!(classify_stop_kind(&brs[0], &[], 2.0, 0.01).is_err());
    }

    fn scan_of(classes: &[OscillationClass]) -> ScanResult {
        let grid = linspace(0.0, 1.0, classes.len());
        let records = grid
            .iter()
            .zip(classes)
            .map(|(&p, &class)| OscillationRecord {
                param: Some(p),
                class,
                amplitude: 0.0,
                period: None,
                quiescence_fraction: 0.0,
                spike_count: 0,
                peak_count: 0,
                decay_ratio: None,
                amp_floor: 0.0,
                duration: 0.0,
                error: None,
            })
            .collect();
        ScanResult {
            bif_param: "p".into(),
            grid,
            records,
            stop_bracket: None,
        }
    }

    fn hopf_at(p: f64) -> BifurcationEvent {
        BifurcationEvent {
            kind: EventKind::Hopf,
            param_at: p,
            state_at: vec![],
            test_value: 0.0,
            frequency: Some(1.0),
        }
    }

    #[test]
    fn window_continuity() {
        use OscillationClass as C;
        let scan = scan_of(&[C::None, C::Sustained, C::Sustained, C::Sustained, C::None]);
        let w = window_report(&hopf_at(0.9), 0.1, &scan).unwrap();
        assert!(w.continuity);
        assert_eq!(w.grid, vec![0.25, 0.5, 0.75]);
        assert_eq!(w.interval, (0.1, 0.9));

        let gap = scan_of(&[C::None, C::Sustained, C::Damped, C::Sustained, C::None]);
        assert!(!window_report(&hopf_at(0.9), 0.1, &gap).unwrap().continuity);

        // stop on the stable side of the Hopf point
        let silent = scan_of(&[C::Sustained, C::None, C::None, C::None, C::None]);
        assert!(window_report(&hopf_at(0.1), 0.9, &silent).is_err());

        let mut fold = hopf_at(0.5);
        fold.kind = EventKind::Fold;
        assert!(window_report(&fold, 0.1, &scan).is_err());
    }
}
