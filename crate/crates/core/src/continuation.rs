//! Pseudo-arclength continuation of equilibrium branches in one parameter,
//! with Hopf, fold and branch-point detection.

use serde::Serialize;

use crate::equilibrium::{norm2, EigenSpectrum, Equilibrium, Stability};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::models::{fd_jacobian_with, Constraint, ModelId, ParameterSet};

/// A one-parameter family `x' = f(x; p)`.
pub trait ParamFamily: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, p: f64, x: &[f64], out: &mut [f64]);

    fn jacobian(&self, p: f64, x: &[f64]) -> Matrix {
        fd_jacobian_with(self.dim(), x, 1e-7, |s, out| self.eval(p, s, out))
    }

    fn dfdp(&self, p: f64, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let h = 1e-7 * p.abs().max(1.0);
        let mut fp = vec![0.0; n];
        let mut fm = vec![0.0; n];
        self.eval(p + h, x, &mut fp);
        self.eval(p - h, x, &mut fm);
        fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
    }
}

/// A registered model with one designated free parameter.
#[derive(Debug, Clone)]
pub struct ModelFamily {
    params: ParameterSet,
    index: usize,
}

impl ModelFamily {
    pub fn new(base: &ParameterSet, bif_param: &str) -> Result<Self> {
        let mut params = base.clone();
        params.set_bif_param(bif_param)?;
        let index = params.index(bif_param)?;
        Ok(ModelFamily { params, index })
    }

    pub fn params_at(&self, p: f64) -> ParameterSet {
        let mut ps = self.params.clone();
        ps.set_bif_value(p);
        ps
    }

    pub fn base(&self) -> &ParameterSet {
        &self.params
    }

    pub fn bif_param(&self) -> &'static str {
        self.params.def().params[self.index].name
    }

    fn with_p<R>(&self, p: f64, f: impl FnOnce(&[f64]) -> R) -> R {
        let mut v = [0.0; 16];
        let vals = self.params.values();
        let v = &mut v[..vals.len()];
        v.copy_from_slice(vals);
        v[self.index] = p;
        f(v)
    }
}

impl ParamFamily for ModelFamily {
    fn dim(&self) -> usize {
        self.params.def().dim
    }

    fn eval(&self, p: f64, x: &[f64], out: &mut [f64]) {
        self.with_p(p, |v| self.params.def().eval(v, x, out))
    }

    fn jacobian(&self, p: f64, x: &[f64]) -> Matrix {
        let mut j = Matrix::zeros(self.dim());
        self.with_p(p, |v| self.params.def().eval_jacobian(v, x, &mut j));
        j
    }
}

/// A closure-defined family, mainly for synthetic test systems.
pub struct FnFamily<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(f64, &[f64], &mut [f64]) + Sync> ParamFamily for FnFamily<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, p: f64, x: &[f64], out: &mut [f64]) {
        (self.f)(p, x, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContinuationConfig {
    /// Largest arc step; defaults to (hi - lo)/50.
    pub max_step: Option<f64>,
    pub min_step: f64,
    pub corrector_tol: f64,
    pub max_points: usize,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        ContinuationConfig {
            max_step: None,
            min_step: 1e-6,
            corrector_tol: 1e-11,
            max_points: 4000,
        }
    }
}

/// Lower end used when a positive parameter's range starts at zero.
pub const POSITIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchPoint {
    pub param: f64,
    pub state: Vec<f64>,
    pub spectrum: EigenSpectrum,
    pub stability: Stability,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EndReason {
    RangeBoundary,
    CorrectorFailure,
    PointLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchDiagnostics {
    pub accepted_steps: usize,
    pub failed_steps: usize,
    /// How the branch ended at its first and last point.
    pub ends: [EndReason; 2],
    pub max_arc_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Branch {
    pub model: Option<ModelId>,
    pub bif_param: String,
    pub range: (f64, f64),
    pub points: Vec<BranchPoint>,
    pub diagnostics: BranchDiagnostics,
    #[serde(skip)]
    pub base: Option<ParameterSet>,
}

impl Branch {
    pub fn params(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.param).collect()
    }

    /// Parameter interval actually covered.
    pub fn param_extent(&self) -> (f64, f64) {
        self.points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.param), hi.max(p.param))
        })
    }

    pub fn family(&self) -> Result<ModelFamily> {
        let base = self
            .base
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("branch has no model attached".into()))?;
        ModelFamily::new(base, &self.bif_param)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EventKind {
    Hopf,
    Fold,
    BranchPoint,
    OscillationStop,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BifurcationEvent {
    pub kind: EventKind,
    pub param_at: f64,
    pub state_at: Vec<f64>,
    /// Defining test function at `param_at`: Re of the critical pair for
    /// Hopf, Jacobian determinant for fold and branch point.
    pub test_value: f64,
    /// Imaginary part of the critical pair (Hopf only).
    pub frequency: Option<f64>,
}

/// Continuation state in scaled coordinates: `w = (x / s, p)`.
struct Scaled<'a, F: ParamFamily + ?Sized> {
    fam: &'a F,
    s: Vec<f64>,
}

impl<F: ParamFamily + ?Sized> Scaled<'_, F> {
    fn n(&self) -> usize {
        self.s.len()
    }

    fn unscale(&self, w: &[f64]) -> (Vec<f64>, f64) {
        let n = self.n();
        ((0..n).map(|i| w[i] * self.s[i]).collect(), w[n])
    }

    fn scale(&self, x: &[f64], p: f64) -> Vec<f64> {
        let mut w: Vec<f64> = x.iter().zip(&self.s).map(|(v, s)| v / s).collect();
        w.push(p);
        w
    }

    fn residual(&self, w: &[f64]) -> Vec<f64> {
        let (x, p) = self.unscale(w);
        let mut f = vec![0.0; self.n()];
        self.fam.eval(p, &x, &mut f);
        f
    }

    /// Jacobian of F with respect to the scaled variables, n x (n+1).
    fn jac(&self, w: &[f64]) -> (Matrix, Vec<f64>) {
        let (x, p) = self.unscale(w);
        let mut jx = self.fam.jacobian(p, &x);
        let n = self.n();
        for r in 0..n {
            for c in 0..n {
                jx[(r, c)] *= self.s[c];
            }
        }
        (jx, self.fam.dfdp(p, &x))
    }

    /// Newton on F(w) = 0 with the hyperplane constraint `d . (w - anchor) = 0`.
    fn correct(&self, anchor: &[f64], d: &[f64], tol: f64, max_move: f64) -> Option<Vec<f64>> {
        let n = self.n();
        let mut w = anchor.to_vec();
        let mut f = self.residual(&w);
        let mut res = norm2(&f);
        let mut converged_at: Option<usize> = None;
        for it in 0..14 {
            if !res.is_finite() {
                return None;
            }
            if res < tol && converged_at.is_none() {
                converged_at = Some(it);
            }
            // a couple of polishing iterations after reaching tolerance
            if let Some(c) = converged_at {
                if it >= c + 2 {
                    break;
                }
            }
            let (jx, fp) = self.jac(&w);
            let mut b = Matrix::zeros(n + 1);
            for r in 0..n {
                for c in 0..n {
                    b[(r, c)] = jx[(r, c)];
                }
                b[(r, n)] = fp[r];
            }
            let mut rhs = vec![0.0; n + 1];
            for r in 0..n {
                b[(n, r)] = d[r];
                rhs[r] = -f[r];
            }
            b[(n, n)] = d[n];
            rhs[n] = -(0..=n).map(|i| d[i] * (w[i] - anchor[i])).sum::<f64>();
            let dw = b.solve(&rhs).ok()?;
            let mut trial: Vec<f64> = w.iter().zip(&dw).map(|(a, b)| a + b).collect();
            let mut ft = self.residual(&trial);
            let mut rt = norm2(&ft);
            if converged_at.is_some() && !(rt < res) {
                break;
            }
            if !rt.is_finite() {
                // one damped retry keeps the corrector alive near domain edges
                for v in trial.iter_mut().zip(&w) {
                    *v.0 = 0.5 * (*v.0 + v.1);
                }
                ft = self.residual(&trial);
                rt = norm2(&ft);
                if !rt.is_finite() {
                    return None;
                }
            }
            w = trial;
            f = ft;
            res = rt;
            if dist(&w, anchor) > max_move {
                return None;
            }
        }
        (res < tol).then_some(w)
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = norm2(v);
    v.iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Newton at a fixed parameter value.
pub fn solve_at<F: ParamFamily + ?Sized>(fam: &F, p: f64, seed: &[f64], tol: f64) -> Option<Vec<f64>> {
    let n = fam.dim();
    let mut x = seed.to_vec();
    let mut f = vec![0.0; n];
    fam.eval(p, &x, &mut f);
    let mut res = norm2(&f);
    let mut last_step = f64::INFINITY;
    for _ in 0..80 {
        if !res.is_finite() {
            return None;
        }
        let j = fam.jacobian(p, &x);
        let neg: Vec<f64> = f.iter().map(|v| -v).collect();
        let Ok(dx) = j.solve(&neg) else { break };
        let step = norm2(&dx);
        if res < tol {
            // polishing: near a degenerate root the residual stalls at
            // rounding level while Newton steps still shrink linearly
            if !(step < 0.9 * last_step) || step <= 1e-15 * norm2(&x).max(1.0) {
                break;
            }
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
            let mut ft = vec![0.0; n];
            fam.eval(p, &trial, &mut ft);
            let rt = norm2(&ft);
            if !(rt < tol) {
                break;
            }
            x = trial;
            f = ft;
            res = rt;
            last_step = step;
            continue;
        }
        last_step = step;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + lambda * b).collect();
            let mut ft = vec![0.0; n];
            fam.eval(p, &trial, &mut ft);
            let rt = norm2(&ft);
            if rt.is_finite() && rt < res {
                x = trial;
                f = ft;
                res = rt;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (res < tol).then_some(x)
}

fn make_point<F: ParamFamily + ?Sized>(fam: &F, p: f64, x: Vec<f64>) -> Result<BranchPoint> {
    let spectrum = EigenSpectrum::of(&fam.jacobian(p, &x))?;
    let stability = spectrum.stability();
    Ok(BranchPoint {
        param: p,
        state: x,
        spectrum,
        stability,
    })
}

/// Traces the branch through `(start_state, start_param)` across `range`.
pub fn trace_family<F: ParamFamily + ?Sized>(
    fam: &F,
    bif_param: &str,
    range: (f64, f64),
    start_state: &[f64],
    start_param: f64,
    cfg: &ContinuationConfig,
) -> Result<Branch> {
    let (lo, hi) = range;
    if !(hi > lo) {
        return Err(Error::InvalidInput(format!("empty continuation range [{lo}, {hi}]")));
    }
    if start_state.len() != fam.dim() {
        return Err(Error::DimensionMismatch {
            expected: fam.dim(),
            got: start_state.len(),
        });
    }
    let tol = cfg.corrector_tol;
    let p0 = start_param.clamp(lo, hi);
    let x0 = solve_at(fam, p0, start_state, tol).ok_or_else(|| {
        Error::InvalidInput(format!("start state is not an equilibrium at {bif_param} = {p0}"))
    })?;
    let sc = Scaled {
        fam,
        s: x0.iter().map(|v| v.abs().max(1.0)).collect(),
    };
    let n = sc.n();
    let w0 = sc.scale(&x0, p0);
    let max_ds = cfg.max_step.unwrap_or((hi - lo) / 50.0);

    // tangent from F_w dw/dp = -F_p
    let (jx, fp) = sc.jac(&w0);
    let neg: Vec<f64> = fp.iter().map(|v| -v).collect();
    let mut t0 = match jx.solve(&neg) {
        Ok(v) => {
            let mut t = v;
            t.push(1.0);
            unit(&t)
        }
        Err(_) => {
            let mut t = vec![0.0; n + 1];
            t[n] = 1.0;
            t
        }
    };
    if t0[n] < 0.0 {
        t0.iter_mut().for_each(|v| *v = -*v);
    }

    let mut accepted = 0;
    let mut failed = 0;
    let mut run = |dir: f64| -> (Vec<Vec<f64>>, EndReason) {
        let mut pts = vec![w0.clone()];
        if (dir > 0.0 && p0 >= hi) || (dir < 0.0 && p0 <= lo) {
            return (pts, EndReason::RangeBoundary);
        }
        let mut t: Vec<f64> = t0.iter().map(|v| v * dir).collect();
        let mut ds = max_ds / 4.0;
        let mut streak = 0;
        loop {
            if pts.len() >= cfg.max_points {
                return (pts, EndReason::PointLimit);
            }
            let w = pts.last().unwrap().clone();
            let pred: Vec<f64> = w.iter().zip(&t).map(|(a, b)| a + ds * b).collect();
            let next = sc.correct(&pred, &t, tol, 4.0 * ds + 1e-9).and_then(|wn| {
                let sec: Vec<f64> = wn.iter().zip(&w).map(|(a, b)| a - b).collect();
                let len = norm2(&sec);
                (len > 0.0 && len < 2.0 * ds && dot(&sec, &t) / len > 0.7).then_some((wn, sec))
            });
            match next {
                Some((wn, sec)) => {
                    accepted += 1;
                    let pn = wn[n];
                    if pn > hi || pn < lo {
                        let bound = if pn > hi { hi } else { lo };
                        let theta = (bound - w[n]) / (pn - w[n]);
                        let seed_w: Vec<f64> =
                            w.iter().zip(&wn).map(|(a, b)| a + theta * (b - a)).collect();
                        let (seed, _) = sc.unscale(&seed_w);
                        if let Some(xb) = solve_at(fam, bound, &seed, tol) {
                            pts.push(sc.scale(&xb, bound));
                        }
                        return (pts, EndReason::RangeBoundary);
                    }
                    pts.push(wn);
                    t = unit(&sec);
                    streak += 1;
                    if streak >= 4 {
                        ds = (ds * 1.3).min(max_ds);
                        streak = 0;
                    }
                }
                None => {
                    failed += 1;
                    streak = 0;
                    ds *= 0.5;
                    if ds < cfg.min_step {
                        return (pts, EndReason::CorrectorFailure);
                    }
                }
            }
        }
    };
    let (back, end_lo) = run(-1.0);
    let (fwd, end_hi) = run(1.0);
    let mut points = Vec::with_capacity(back.len() + fwd.len());
    for w in back.iter().rev().chain(fwd.iter().skip(1)) {
        let (x, p) = sc.unscale(w);
        points.push(make_point(fam, p, x)?);
    }
    Ok(Branch {
        model: None,
        bif_param: bif_param.to_string(),
        range,
        points,
        diagnostics: BranchDiagnostics {
            accepted_steps: accepted,
            failed_steps: failed,
            ends: [end_lo, end_hi],
            max_arc_step: max_ds,
        },
        base: None,
    })
}

/// Effective range: a zero lower end on a positive parameter becomes
/// [`POSITIVE_FLOOR`].
pub fn effective_range(params: &ParameterSet, bif_param: &str, range: (f64, f64)) -> Result<(f64, f64)> {
    let i = params.index(bif_param)?;
    let spec = &params.def().params[i];
    let (mut lo, hi) = range;
    if spec.constraint == Constraint::Positive && lo == 0.0 {
        lo = POSITIVE_FLOOR;
    }
    Ok((lo, hi))
}

/// Traces the equilibrium branch of a registered model through `start`.
pub fn trace_branch(
    base: &ParameterSet,
    bif_param: &str,
    range: (f64, f64),
    start: &Equilibrium,
    cfg: &ContinuationConfig,
) -> Result<Branch> {
    if !(range.1 > range.0) {
        return Err(Error::InvalidInput(format!(
            "empty continuation range [{}, {}]",
            range.0, range.1
        )));
    }
    if start.residual_norm >= 1e-9 || !start.residual_norm.is_finite() {
        return Err(Error::InvalidInput("start equilibrium is not converged".into()));
    }
    let fam = ModelFamily::new(base, bif_param)?;
    let p_start = start.params.get(bif_param)?;
    let range_eff = effective_range(base, bif_param, range)?;
    let mut b = trace_family(&fam, bif_param, range_eff, &start.state, p_start, cfg)?;
    b.model = Some(base.model());
    b.base = Some(fam.base().clone());
    b.range = range;
    Ok(b)
}

const DEAD_BAND: f64 = 1e-12;
const NUDGE: f64 = 1e-9;

fn hopf_test(sp: &EigenSpectrum) -> Option<f64> {
    sp.complex_pair_real
}

fn det_test(sp: &EigenSpectrum) -> f64 {
    // determinant as the product of eigenvalues (complex pairs contribute |z|^2)
    sp.eigenvalues
        .iter()
        .filter(|z| z.im >= 0.0)
        .map(|z| if z.im > 0.0 { z.norm_sqr() } else { z.re })
        .product()
}

/// Test value with the dead band resolved by re-evaluating at `p + 1e-9`.
fn signed<F: ParamFamily + ?Sized>(
    fam: &F,
    pt: &BranchPoint,
    test: impl Fn(&EigenSpectrum) -> Option<f64>,
    tol: f64,
) -> Option<f64> {
    let v = test(&pt.spectrum)?;
    if v.abs() >= DEAD_BAND {
        return Some(v);
    }
    let p = pt.param + NUDGE;
    let x = solve_at(fam, p, &pt.state, tol)?;
    let sp = EigenSpectrum::of(&fam.jacobian(p, &x)).ok()?;
    test(&sp).filter(|u| *u != 0.0).or(Some(v))
}

/// Point on the segment between two branch points, corrected onto the branch.
struct Segment<'a, F: ParamFamily + ?Sized> {
    sc: Scaled<'a, F>,
    wa: Vec<f64>,
    wb: Vec<f64>,
    d: Vec<f64>,
    tol: f64,
}

impl<'a, F: ParamFamily + ?Sized> Segment<'a, F> {
    fn new(fam: &'a F, a: &BranchPoint, b: &BranchPoint, tol: f64) -> Self {
        let sc = Scaled {
            fam,
            s: a.state
                .iter()
                .zip(&b.state)
                .map(|(u, v)| u.abs().max(v.abs()).max(1.0))
                .collect(),
        };
        let wa = sc.scale(&a.state, a.param);
        let wb = sc.scale(&b.state, b.param);
        let d = unit(&wa.iter().zip(&wb).map(|(x, y)| y - x).collect::<Vec<_>>());
        Segment { sc, wa, wb, d, tol }
    }

    fn at(&self, theta: f64) -> Option<BranchPoint> {
        let anchor: Vec<f64> = self
            .wa
            .iter()
            .zip(&self.wb)
            .map(|(a, b)| a + theta * (b - a))
            .collect();
        let len = dist(&self.wa, &self.wb);
        let w = self.sc.correct(&anchor, &self.d, self.tol, 2.0 * len + 1e-9)?;
        let (x, p) = self.sc.unscale(&w);
        make_point(self.sc.fam, p, x).ok()
    }
}

/// Bisection on `test` along a segment; returns the refined point.
fn bisect_segment<F: ParamFamily + ?Sized>(
    seg: &Segment<'_, F>,
    a: &BranchPoint,
    b: &BranchPoint,
    ta: f64,
    test: &dyn Fn(&EigenSpectrum) -> Option<f64>,
) -> Option<(BranchPoint, f64)> {
    let (mut lo, mut hi) = (0.0, 1.0);
    let (mut pa, mut pb) = (a.clone(), b.clone());
    let mut sa = ta.signum();
    for _ in 0..200 {
        let width = (pb.param - pa.param).abs();
        if width < 1e-10 * pa.param.abs().max(1.0) && hi - lo < 1e-6 {
            break;
        }
        if hi - lo < 1e-15 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let pm = seg.at(mid)?;
        let Some(tm) = test(&pm.spectrum) else {
            // test undefined here (pair turned real): shrink toward the defined side
            hi = mid;
            pb = pm;
            continue;
        };
        if tm.signum() == sa || tm == 0.0 && sa == 0.0 {
            lo = mid;
            pa = pm;
            sa = tm.signum();
        } else {
            hi = mid;
            pb = pm;
        }
    }
    let ta = test(&pa.spectrum);
    let tb = test(&pb.spectrum);
    let pick_b = match (ta, tb) {
        (Some(x), Some(y)) => y.abs() < x.abs(),
        (None, Some(_)) => true,
        _ => false,
    };
    let best = if pick_b { pb } else { pa };
    let v = test(&best.spectrum)?;
    Some((best, v))
}

/// Scans consecutive branch points for Hopf, fold and branch-point events.
pub fn detect_events_in<F: ParamFamily + ?Sized>(fam: &F, branch: &Branch) -> Vec<BifurcationEvent> {
    let pts = &branch.points;
    let tol = 1e-11;
    let mut events = Vec::new();
    if pts.len() < 2 {
        return events;
    }
    let hopf: &dyn Fn(&EigenSpectrum) -> Option<f64> = &hopf_test;
    let det: &dyn Fn(&EigenSpectrum) -> Option<f64> = &|sp| Some(det_test(sp));
    let hv: Vec<Option<f64>> = pts.iter().map(|p| signed(fam, p, hopf, tol)).collect();
    let dv: Vec<Option<f64>> = pts.iter().map(|p| signed(fam, p, det, tol)).collect();

    for i in 0..pts.len() - 1 {
        let (a, b) = (&pts[i], &pts[i + 1]);
        let seg = Segment::new(fam, a, b, tol);

        // Hopf: sign change of the leading pair's real part; where the pair
        // exists at only one end, sub-sample the segment first
        let mut hopf_pairs: Vec<(BranchPoint, BranchPoint, f64)> = Vec::new();
        match (hv[i], hv[i + 1]) {
            (Some(x), Some(y)) if x.signum() != y.signum() => {
                hopf_pairs.push((a.clone(), b.clone(), x));
            }
            (Some(_), None) | (None, Some(_)) => {
                let mut prev: Option<(BranchPoint, f64)> = hv[i].map(|v| (a.clone(), v));
                for k in 1..=8 {
                    let theta = k as f64 / 8.0;
                    let q = if k == 8 { Some(b.clone()) } else { seg.at(theta) };
                    let Some(q) = q else { continue };
                    let tq = hopf_test(&q.spectrum);
                    if let (Some((pq, tp)), Some(tv)) = (&prev, tq) {
                        if tp.signum() != tv.signum() {
                            hopf_pairs.push((pq.clone(), q.clone(), *tp));
                        }
                    }
                    prev = tq.map(|v| (q, v));
                }
            }
            _ => {}
        }
        for (qa, qb, ta) in hopf_pairs {
            let sub = Segment::new(fam, &qa, &qb, tol);
            if let Some((pt, v)) = bisect_segment(&sub, &qa, &qb, ta, hopf) {
                let freq = pt.spectrum.leading_pair().map(|z| z.im);
                events.push(BifurcationEvent {
                    kind: EventKind::Hopf,
                    param_at: pt.param,
                    state_at: pt.state,
                    test_value: v,
                    frequency: freq,
                });
            }
        }

        // real eigenvalue through zero
        if let (Some(x), Some(y)) = (dv[i], dv[i + 1]) {
            if x.signum() != y.signum() {
                if let Some((pt, v)) = bisect_segment(&seg, a, b, x, det) {
                    let before = if i > 0 { pts[i].param - pts[i - 1].param } else { b.param - a.param };
                    let after = if i + 2 < pts.len() {
                        pts[i + 2].param - pts[i + 1].param
                    } else {
                        b.param - a.param
                    };
                    let (smin, smax) = (a.param.min(b.param), a.param.max(b.param));
                    let overshoot = pt.param < smin - 1e-12 || pt.param > smax + 1e-12;
                    let kind = if before.signum() != after.signum() || overshoot {
                        EventKind::Fold
                    } else {
                        EventKind::BranchPoint
                    };
                    events.push(BifurcationEvent {
                        kind,
                        param_at: pt.param,
                        state_at: pt.state,
                        test_value: v,
                        frequency: None,
                    });
                }
            }
        }
    }
    events.sort_by(|a, b| a.param_at.partial_cmp(&b.param_at).unwrap_or(std::cmp::Ordering::Equal));
    events
}

/// [`detect_events_in`] for a branch traced from a registered model.
pub fn detect_events(branch: &Branch) -> Result<Vec<BifurcationEvent>> {
    let fam = branch.family()?;
    Ok(detect_events_in(&fam, branch))
}

/// Natural-parameter bisection for a Hopf point inside `bracket`.
pub fn refine_hopf_in<F: ParamFamily + ?Sized>(
    fam: &F,
    bracket: (f64, f64),
    seed: &[f64],
) -> Result<BifurcationEvent> {
    let tol = 1e-12;
    let eval = |p: f64, seed: &[f64]| -> Result<(Vec<f64>, EigenSpectrum)> {
        let x = solve_at(fam, p, seed, tol).ok_or(Error::NoConvergence {
            iterations: 60,
            residual: f64::NAN,
        })?;
        let sp = EigenSpectrum::of(&fam.jacobian(p, &x))?;
        Ok((x, sp))
    };
    let (mut lo, mut hi) = bracket;
    let (xa, sa) = eval(lo, seed)?;
    let (xb, sb) = eval(hi, &xa)?;
    let no_change = || Error::NoSignChange {
        what: "leading complex pair real part",
        lo: bracket.0,
        hi: bracket.1,
    };
    let ta = sa.complex_pair_real.ok_or_else(no_change)?;
    let tb = sb.complex_pair_real.ok_or_else(no_change)?;
    if ta.signum() == tb.signum() {
        return Err(no_change());
    }
    let (mut xlo, mut slo, mut tlo) = (xa, sa, ta);
    let (mut xhi, mut shi, mut thi) = (xb, sb, tb);
    for _ in 0..200 {
        if (hi - lo).abs() < 1e-10 * lo.abs().max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let (xm, sm) = eval(mid, &xlo)?;
        let tm = sm.complex_pair_real.ok_or_else(no_change)?;
        if tm.signum() == tlo.signum() {
            lo = mid;
            xlo = xm;
            slo = sm;
            tlo = tm;
        } else {
            hi = mid;
            xhi = xm;
            shi = sm;
            thi = tm;
        }
    }
    let (p, x, sp, t) = if tlo.abs() <= thi.abs() {
        (lo, xlo, slo, tlo)
    } else {
        (hi, xhi, shi, thi)
    };
    Ok(BifurcationEvent {
        kind: EventKind::Hopf,
        param_at: p,
        state_at: x,
        test_value: t,
        frequency: sp.leading_pair().map(|z| z.im),
    })
}

/// Hopf refinement for a registered model, seeded from `seed`.
pub fn refine_hopf(
    params: &ParameterSet,
    bif_param: &str,
    bracket: (f64, f64),
    seed: &[f64],
) -> Result<BifurcationEvent> {
    let fam = ModelFamily::new(params, bif_param)?;
    refine_hopf_in(&fam, bracket, seed)
}
