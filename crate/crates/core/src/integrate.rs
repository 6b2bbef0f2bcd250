//! Adaptive integration: Dormand–Prince 5(4) with dense output and an
//! automatic switch to a linearly implicit Rosenbrock 2(3) method when the
//! explicit step collapses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::models::{fd_jacobian_with, ModelDef, ModelId, ParameterSet};

/// An autonomous or time-dependent system `y' = f(t, y)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]);
    fn jacobian(&self, t: f64, y: &[f64], j: &mut Matrix) {
        *j = fd_jacobian_with(self.dim(), y, 1e-7, |s, out| self.eval(t, s, out));
    }
}

/// Wraps a closure as an [`OdeSystem`].
pub struct FnSystem<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(f64, &[f64], &mut [f64])> OdeSystem for FnSystem<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        (self.f)(t, y, dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Dormand–Prince, with automatic stiff fallback.
    ExplicitRk,
    /// Rosenbrock (ode23s-type) from the start.
    ImplicitStiff,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    /// Defaults to span/1000 when unset.
    pub max_step: Option<f64>,
    pub method: Method,
    /// Output sampling interval; defaults to span/5000 when unset.
    pub dense_dt: Option<f64>,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rtol: 1e-8,
            atol: 1e-10,
            max_step: None,
            method: Method::ExplicitRk,
            dense_dt: None,
            max_steps: 20_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        IntegratorConfig {
            rtol,
            atol,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.rtol) || !pos(self.atol) {
            return Err(Error::InvalidInput("rtol and atol must be positive".into()));
        }
        if self.max_step.is_some_and(|v| !pos(v)) {
            return Err(Error::InvalidInput("max_step must be positive".into()));
        }
        if self.dense_dt.is_some_and(|v| !pos(v)) {
            return Err(Error::InvalidInput("dense_dt must be positive".into()));
        }
        Ok(())
    }

    fn max_step_for(&self, span: f64) -> f64 {
        self.max_step.unwrap_or(span / 1000.0)
    }

    fn dense_dt_for(&self, span: f64) -> f64 {
        self.dense_dt.unwrap_or(span / 5000.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureReason {
    StepUnderflow,
    NonFinite,
    MaxSteps,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationFailure {
    pub time: f64,
    pub reason: FailureReason,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFlags {
    /// First time the state left the model domain by more than 1e-6.
    pub domain_exit: Option<f64>,
    pub failure: Option<IntegrationFailure>,
    /// Time at which the stiff method took over.
    pub stiff_switch: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IntegrationStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub flags: TrajectoryFlags,
    pub stats: IntegrationStats,
}

/// Domain excursions below this are ignored.
pub const DOMAIN_SLACK: f64 = 1e-6;

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn is_failed(&self) -> bool {
        self.flags.failure.is_some()
    }

    pub fn component(&self, i: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[i]).collect()
    }

    pub fn last_state(&self) -> Option<&[f64]> {
        self.states.last().map(|s| s.as_slice())
    }

    /// CSV with header `t,<labels>` and 17 significant digits.
    pub fn to_csv(&self, labels: &[&str]) -> String {
        let mut out = String::from("t");
        for l in labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (t, s) in self.times.iter().zip(&self.states) {
            out.push_str(&fmt_g17(*t));
            for v in s {
                out.push(',');
                out.push_str(&fmt_g17(*v));
            }
            out.push('\n');
        }
        out
    }
}

/// Formats with 17 significant digits (round-trip exact for f64).
pub fn fmt_g17(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    format!("{v:.16e}")
}

// Dormand–Prince coefficients
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SMALL_STEP_RUN: usize = 50;
const SMALL_STEP_FRACTION: f64 = 1e-10;

#[derive(Debug, Clone)]
enum Dense {
    None,
    Dopri {
        t0: f64,
        h: f64,
        r: [Vec<f64>; 5],
    },
    Rosenbrock {
        t0: f64,
        h: f64,
        y0: Vec<f64>,
        k1: Vec<f64>,
        k2: Vec<f64>,
    },
}

/// Outcome of a single call to [`Solver::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Accepted,
    Finished,
    Failed(FailureReason),
}

/// Step-by-step driver with dense interpolation over the last step.
pub struct Solver<'a, S: OdeSystem + ?Sized> {
    sys: &'a S,
    cfg: IntegratorConfig,
    t: f64,
    t_end: f64,
    span: f64,
    max_step: f64,
    y: Vec<f64>,
    f: Vec<f64>,
    h: f64,
    method: Method,
    facold: f64,
    last_rejected: bool,
    small_run: usize,
    dense: Dense,
    pub stats: IntegrationStats,
    pub stiff_switch: Option<f64>,
}

impl<'a, S: OdeSystem + ?Sized> Solver<'a, S> {
    pub fn new(sys: &'a S, t0: f64, y0: &[f64], t_end: f64, cfg: &IntegratorConfig) -> Result<Self> {
        cfg.validate()?;
        if !(t_end > t0) || !t0.is_finite() || !t_end.is_finite() {
            return Err(Error::InvalidInput(format!(
                "time span must satisfy t0 < t1 (got {t0}, {t_end})"
            )));
        }
        if y0.len() != sys.dim() {
            return Err(Error::DimensionMismatch {
                expected: sys.dim(),
                got: y0.len(),
            });
        }
        if y0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial state"));
        }
        let span = t_end - t0;
        let mut s = Solver {
            sys,
            cfg: *cfg,
            t: t0,
            t_end,
            span,
            max_step: cfg.max_step_for(span),
            y: y0.to_vec(),
            f: vec![0.0; y0.len()],
            h: 0.0,
            method: cfg.method,
            facold: 1e-4,
            last_rejected: false,
            small_run: 0,
            dense: Dense::None,
            stats: IntegrationStats::default(),
            stiff_switch: None,
        };
        s.sys.eval(t0, &s.y, &mut s.f);
        s.stats.rhs_evals += 1;
        s.h = s.initial_step();
        Ok(s)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn method(&self) -> Method {
        self.method
    }

    /// Moves the end time further out, keeping the solver state.
    pub fn extend_to(&mut self, t_end: f64) {
        if t_end > self.t_end {
            self.t_end = t_end;
        }
    }

    fn norm(&self, err: &[f64], y0: &[f64], y1: &[f64]) -> f64 {
        let n = err.len() as f64;
        let mut s = 0.0;
        for i in 0..err.len() {
            let sk = self.cfg.atol + self.cfg.rtol * y0[i].abs().max(y1[i].abs());
            let r = err[i] / sk;
            s += r * r;
        }
        (s / n).sqrt()
    }

    fn initial_step(&mut self) -> f64 {
        let n = self.y.len();
        let sk: Vec<f64> = self
            .y
            .iter()
            .map(|v| self.cfg.atol + self.cfg.rtol * v.abs())
            .collect();
        let rms = |v: &[f64]| {
            (v.iter().zip(&sk).map(|(a, s)| (a / s) * (a / s)).sum::<f64>() / n as f64).sqrt()
        };
        let d0 = rms(&self.y);
        let d1 = rms(&self.f);
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0 = h0.min(self.max_step);
        let y1: Vec<f64> = self.y.iter().zip(&self.f).map(|(y, f)| y + h0 * f).collect();
        let mut f1 = vec![0.0; n];
        self.sys.eval(self.t + h0, &y1, &mut f1);
        self.stats.rhs_evals += 1;
        let diff: Vec<f64> = f1.iter().zip(&self.f).map(|(a, b)| a - b).collect();
        let d2 = rms(&diff) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        let h = (100.0 * h0).min(h1).min(self.max_step);
        if h.is_finite() && h > 0.0 {
            h
        } else {
            1e-6_f64.min(self.max_step)
        }
    }

    fn min_step(&self) -> f64 {
        16.0 * f64::EPSILON * self.t.abs().max(self.span)
    }

    /// Takes one accepted step, retrying internally after rejections.
    pub fn step(&mut self) -> StepOutcome {
        if self.t >= self.t_end {
            return StepOutcome::Finished;
        }
        if self.stats.accepted >= self.cfg.max_steps {
            return StepOutcome::Failed(FailureReason::MaxSteps);
        }
        loop {
            let remaining = self.t_end - self.t;
            let mut h = self.h.min(self.max_step);
            let last = h >= remaining * 0.999_999;
            if last {
                h = remaining;
            }
            if h < self.min_step() && !last {
                if self.method == Method::ExplicitRk {
                    self.switch_to_stiff();
                    continue;
                }
                return StepOutcome::Failed(FailureReason::StepUnderflow);
            }
            let accepted = match self.method {
                Method::ExplicitRk => self.try_dopri(h, last),
                Method::ImplicitStiff => self.try_rosenbrock(h, last),
            };
            if accepted {
                self.stats.accepted += 1;
                if self.method == Method::ExplicitRk && !last {
                    if h < SMALL_STEP_FRACTION * self.span {
                        self.small_run += 1;
                        if self.small_run >= SMALL_STEP_RUN {
                            self.switch_to_stiff();
                        }
                    } else {
                        self.small_run = 0;
                    }
                }
                return StepOutcome::Accepted;
            }
            self.stats.rejected += 1;
        }
    }

    fn switch_to_stiff(&mut self) {
        self.method = Method::ImplicitStiff;
        self.stiff_switch = Some(self.t);
        self.small_run = 0;
        self.h = self.h.max(self.min_step() * 1e3).min(self.max_step);
    }

    fn try_dopri(&mut self, h: f64, last: bool) -> bool {
        let n = self.y.len();
        let (t, y, k1) = (self.t, &self.y, &self.f);
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut k5 = vec![0.0; n];
        let mut k6 = vec![0.0; n];
        let mut k7 = vec![0.0; n];
        let mut yt = vec![0.0; n];
        for i in 0..n {
            yt[i] = y[i] + h * A21 * k1[i];
        }
        self.sys.eval(t + C2 * h, &yt, &mut k2);
        for i in 0..n {
            yt[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        self.sys.eval(t + C3 * h, &yt, &mut k3);
        for i in 0..n {
            yt[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        self.sys.eval(t + C4 * h, &yt, &mut k4);
        for i in 0..n {
            yt[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        self.sys.eval(t + C5 * h, &yt, &mut k5);
        for i in 0..n {
            yt[i] = y[i]
                + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        self.sys.eval(t + h, &yt, &mut k6);
        let mut y1 = vec![0.0; n];
        for i in 0..n {
            y1[i] = y[i]
                + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        self.sys.eval(t + h, &y1, &mut k7);
        self.stats.rhs_evals += 6;
        let mut err = vec![0.0; n];
        for i in 0..n {
            err[i] = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let mut e = self.norm(&err, y, &y1);
        if !e.is_finite() || y1.iter().chain(&k7).any(|v| !v.is_finite()) {
            e = f64::INFINITY;
        }

        const SAFE: f64 = 0.9;
        const BETA: f64 = 0.04;
        let expo1 = 0.2 - BETA * 0.75;
        let (facc1, facc2): (f64, f64) = (1.0 / 0.2, 1.0 / 10.0);
        if e <= 1.0 {
            let fac11 = e.powf(expo1);
            let mut fac = fac11 / self.facold.powf(BETA);
            fac = facc2.max(facc1.min(fac / SAFE));
            let mut hnew = h / fac;
            if self.last_rejected {
                hnew = hnew.min(h);
            }
            self.facold = e.max(1e-4);
            let mut r4 = vec![0.0; n];
            let mut r5 = vec![0.0; n];
            let mut ydiff = vec![0.0; n];
            let mut bspl = vec![0.0; n];
            for i in 0..n {
                ydiff[i] = y1[i] - y[i];
                bspl[i] = h * k1[i] - ydiff[i];
                r4[i] = ydiff[i] - h * k7[i] - bspl[i];
                r5[i] = h
                    * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
            }
            self.dense = Dense::Dopri {
                t0: t,
                h,
                r: [y.clone(), ydiff, bspl, r4, r5],
            };
            self.t = if last { self.t_end } else { t + h };
            self.y = y1;
            self.f = k7;
            if !last || hnew > self.h {
                self.h = hnew;
            }
            self.last_rejected = false;
            true
        } else {
            let fac11 = if e.is_finite() { e.powf(expo1) } else { facc1 };
            self.h = h / facc1.min(fac11 / SAFE);
            self.last_rejected = true;
            false
        }
    }

    fn try_rosenbrock(&mut self, h: f64, last: bool) -> bool {
        let n = self.y.len();
        let d = 1.0 / (2.0 + std::f64::consts::SQRT_2);
        let e32 = 6.0 + std::f64::consts::SQRT_2;
        let (t, y, f0) = (self.t, self.y.clone(), self.f.clone());
        let mut jac = Matrix::zeros(n);
        self.sys.jacobian(t, &y, &mut jac);
        self.stats.rhs_evals += 2 * n;
        let mut w = Matrix::identity(n);
        for i in 0..n {
            for j in 0..n {
                w[(i, j)] -= h * d * jac[(i, j)];
            }
        }
        let lu = w.lu();
        let fail = |s: &mut Self| {
            s.h = h * 0.25;
            s.last_rejected = true;
            false
        };
        let k1 = match lu.solve(&f0) {
            Ok(v) => v,
            Err(_) => return fail(self),
        };
        let yh: Vec<f64> = (0..n).map(|i| y[i] + 0.5 * h * k1[i]).collect();
        let mut f1 = vec![0.0; n];
        self.sys.eval(t + 0.5 * h, &yh, &mut f1);
        let rhs2: Vec<f64> = (0..n).map(|i| f1[i] - k1[i]).collect();
        let k2 = match lu.solve(&rhs2) {
            Ok(v) => (0..n).map(|i| v[i] + k1[i]).collect::<Vec<_>>(),
            Err(_) => return fail(self),
        };
        let y1: Vec<f64> = (0..n).map(|i| y[i] + h * k2[i]).collect();
        let mut f2 = vec![0.0; n];
        self.sys.eval(t + h, &y1, &mut f2);
        self.stats.rhs_evals += 2;
        let rhs3: Vec<f64> = (0..n)
            .map(|i| f2[i] - e32 * (k2[i] - f1[i]) - 2.0 * (k1[i] - f0[i]))
            .collect();
        let k3 = match lu.solve(&rhs3) {
            Ok(v) => v,
            Err(_) => return fail(self),
        };
        let err: Vec<f64> = (0..n)
            .map(|i| h / 6.0 * (k1[i] - 2.0 * k2[i] + k3[i]))
            .collect();
        let mut e = self.norm(&err, &y, &y1);
        if !e.is_finite() || y1.iter().chain(&f2).any(|v| !v.is_finite()) {
            e = f64::INFINITY;
        }
        if e <= 1.0 {
            let fac: f64 = if e == 0.0 { 5.0 } else { (0.8 * e.powf(-1.0 / 3.0)).min(5.0) };
            let mut hnew = h * fac.max(0.2);
            if self.last_rejected {
                hnew = hnew.min(h);
            }
            self.dense = Dense::Rosenbrock {
                t0: t,
                h,
                y0: y,
                k1,
                k2,
            };
            self.t = if last { self.t_end } else { t + h };
            self.y = y1;
            self.f = f2;
            if !last || hnew > self.h {
                self.h = hnew;
            }
            self.last_rejected = false;
            true
        } else {
            let fac: f64 = if e.is_finite() {
                (0.8 * e.powf(-1.0 / 3.0)).max(0.1)
            } else {
                0.1
            };
            self.h = h * fac;
            self.last_rejected = true;
            false
        }
    }

    /// Interpolates the solution inside the last accepted step.
    pub fn interpolate(&self, t: f64, out: &mut [f64]) {
        match &self.dense {
            Dense::None => out.copy_from_slice(&self.y),
            Dense::Dopri { t0, h, r } => {
                let th = ((t - t0) / h).clamp(0.0, 1.0);
                let th1 = 1.0 - th;
                for i in 0..out.len() {
                    out[i] = r[0][i]
                        + th * (r[1][i] + th1 * (r[2][i] + th * (r[3][i] + th1 * r[4][i])));
                }
            }
            Dense::Rosenbrock { t0, h, y0, k1, k2 } => {
                let d = 1.0 / (2.0 + std::f64::consts::SQRT_2);
                let s = ((t - t0) / h).clamp(0.0, 1.0);
                let a = s * (1.0 - s) / (1.0 - 2.0 * d);
                let b = s * (s - 2.0 * d) / (1.0 - 2.0 * d);
                for i in 0..out.len() {
                    out[i] = y0[i] + h * (a * k1[i] + b * k2[i]);
                }
            }
        }
    }

    /// Start time of the last accepted step.
    pub fn step_start(&self) -> f64 {
        match &self.dense {
            Dense::None => self.t,
            Dense::Dopri { t0, .. } | Dense::Rosenbrock { t0, .. } => *t0,
        }
    }
}

/// A model bound to parameters, integrated in log coordinates for the
/// factored coordinates that start strictly inside their sign region.
pub struct ModelFlow {
    def: &'static ModelDef,
    params: Vec<f64>,
    /// (coordinate, sign) pairs integrated as `ln(sign * x)`.
    logs: Vec<(usize, f64)>,
}

impl ModelFlow {
    pub fn new(params: &ParameterSet, x0: &[f64]) -> Result<Self> {
        let def = params.def();
        if x0.len() != def.dim {
            return Err(Error::DimensionMismatch {
                expected: def.dim,
                got: x0.len(),
            });
        }
        let logs = def
            .factored
            .iter()
            .filter_map(|&i| {
                let s = def.domain[i].sign()?;
                (s * x0[i] > 0.0).then_some((i, s))
            })
            .collect();
        Ok(ModelFlow {
            def,
            params: params.values().to_vec(),
            logs,
        })
    }

    /// Plain coordinates throughout; used by tests and the stiff reference.
    pub fn raw(params: &ParameterSet) -> Self {
        ModelFlow {
            def: params.def(),
            params: params.values().to_vec(),
            logs: Vec::new(),
        }
    }

    pub fn to_internal(&self, x: &[f64]) -> Vec<f64> {
        let mut u = x.to_vec();
        for &(i, s) in &self.logs {
            u[i] = (s * x[i]).ln();
        }
        u
    }

    pub fn to_state(&self, u: &[f64], x: &mut [f64]) {
        x.copy_from_slice(u);
        for &(i, s) in &self.logs {
            x[i] = s * u[i].exp();
        }
    }

    pub fn model(&self) -> ModelId {
        self.def.id
    }
}

impl OdeSystem for ModelFlow {
    fn dim(&self) -> usize {
        self.def.dim
    }

    fn eval(&self, _t: f64, u: &[f64], du: &mut [f64]) {
        if self.logs.is_empty() {
            self.def.eval(&self.params, u, du);
            return;
        }
        let mut x = [0.0; 8];
        let x = &mut x[..u.len()];
        self.to_state(u, x);
        self.def.eval(&self.params, x, du);
        for &(i, _) in &self.logs {
            du[i] = self.def.eval_growth(&self.params, x, i);
        }
    }

    fn jacobian(&self, t: f64, u: &[f64], j: &mut Matrix) {
        if self.logs.is_empty() {
            self.def.eval_jacobian(&self.params, u, j);
        } else {
            *j = fd_jacobian_with(self.dim(), u, 1e-7, |s, out| self.eval(t, s, out));
        }
    }
}

/// Integrates a registered model over `t_span`, returning dense samples.
pub fn integrate(
    params: &ParameterSet,
    x0: &[f64],
    t_span: (f64, f64),
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    let flow = ModelFlow::new(params, x0)?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial state"));
    }
    let def = params.def();
    let u0 = flow.to_internal(x0);
    let mut traj = drive(&flow, &u0, t_span, config, |u, x| flow.to_state(u, x), |x| {
        def.domain_violation(x)
    })?;
    // the log round trip perturbs x0 in the last bits
    if let Some(first) = traj.states.first_mut() {
        first.copy_from_slice(x0);
    }
    Ok(traj)
}

/// Integrates an arbitrary system with dense output in its own coordinates.
pub fn integrate_system<S: OdeSystem + ?Sized>(
    sys: &S,
    y0: &[f64],
    t_span: (f64, f64),
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    drive(sys, y0, t_span, config, |u, x| x.copy_from_slice(u), |_| 0.0)
}

fn drive<S, M, D>(
    sys: &S,
    u0: &[f64],
    (t0, t1): (f64, f64),
    config: &IntegratorConfig,
    map: M,
    domain: D,
) -> Result<Trajectory>
where
    S: OdeSystem + ?Sized,
    M: Fn(&[f64], &mut [f64]),
    D: Fn(&[f64]) -> f64,
{
    let mut solver = Solver::new(sys, t0, u0, t1, config)?;
    let n = u0.len();
    let span = t1 - t0;
    let dt = config.dense_dt_for(span);
    let count = ((span / dt) * (1.0 + 1e-12)).floor() as usize;
    let mut grid: Vec<f64> = (0..=count).map(|k| t0 + k as f64 * dt).collect();
    if let Some(last) = grid.last_mut() {
        if (t1 - *last).abs() <= 1e-9 * dt {
            *last = t1;
        } else if *last < t1 {
            grid.push(t1);
        }
    }

    let mut traj = Trajectory {
        times: Vec::with_capacity(grid.len()),
        states: Vec::with_capacity(grid.len()),
        flags: TrajectoryFlags::default(),
        stats: IntegrationStats::default(),
    };
    let mut x = vec![0.0; n];
    map(u0, &mut x);
    traj.times.push(t0);
    traj.states.push(x.clone());
    if domain(&x) > DOMAIN_SLACK {
        traj.flags.domain_exit = Some(t0);
    }
    let mut next = 1;
    let mut u = vec![0.0; n];
    while next < grid.len() {
        match solver.step() {
            StepOutcome::Accepted => {}
            StepOutcome::Finished => break,
            StepOutcome::Failed(reason) => {
                traj.flags.failure = Some(IntegrationFailure {
                    time: solver.t(),
                    reason,
                });
                break;
            }
        }
        if solver.y().iter().any(|v| !v.is_finite()) {
            traj.flags.failure = Some(IntegrationFailure {
                time: solver.t(),
                reason: FailureReason::NonFinite,
            });
            break;
        }
        while next < grid.len() && grid[next] <= solver.t() {
            let tg = grid[next];
            if tg == solver.t() {
                u.copy_from_slice(solver.y());
            } else {
                solver.interpolate(tg, &mut u);
            }
            map(&u, &mut x);
            if x.iter().any(|v| !v.is_finite()) {
                traj.flags.failure = Some(IntegrationFailure {
                    time: tg,
                    reason: FailureReason::NonFinite,
                });
                next = grid.len();
                break;
            }
            if traj.flags.domain_exit.is_none() && domain(&x) > DOMAIN_SLACK {
                traj.flags.domain_exit = Some(tg);
            }
            traj.times.push(tg);
            traj.states.push(x.clone());
            next += 1;
        }
        if traj.flags.failure.is_some() {
            break;
        }
    }
    traj.stats = solver.stats;
    traj.flags.stiff_switch = solver.stiff_switch;
    Ok(traj)
}

/// Largest relative energy error of a trajectory of `x'' = -x` written as
/// `(x, v)`; absolute error when the initial energy is zero.
pub fn energy_drift_check(traj: &Trajectory) -> f64 {
    let energy = |s: &[f64]| 0.5 * (s[0] * s[0] + s[1] * s[1]);
    let Some(first) = traj.states.first() else {
        return 0.0;
    };
    let e0 = energy(first);
    let max_dev = traj
        .states
        .iter()
        .map(|s| (energy(s) - e0).abs())
        .fold(0.0, f64::max);
    if e0 == 0.0 {
        max_dev
    } else {
        max_dev / e0
    }
}
