//! Oscillation classification, parameter scans, stop-point location,
//! recurrence metrics and limit-cycle extraction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{integrate, IntegratorConfig, ModelFlow, OdeSystem, Solver, StepOutcome, Trajectory};
use crate::models::ParameterSet;

/// Prominence floor relative to the observable's scale.
pub const AMP_FLOOR_REL: f64 = 1e-4;
pub const DEFAULT_SETTLE_FRACTION: f64 = 0.5;
pub const DEFAULT_QUIESCENCE_BAND: f64 = 0.05;
const RATIO_LO: f64 = 0.99;
const RATIO_HI: f64 = 1.01;
const SUSTAINED_MIN_PEAKS: usize = 5;
const DAMPED_MIN_PEAKS: usize = 3;
const EXTEND_BELOW_PEAKS: usize = 8;
const HISTOGRAM_BINS: usize = 64;
/// Amplitude trend uses at most this many trailing peaks.
const TREND_PEAKS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OscillationClass {
    Sustained,
    Damped,
    None,
}

impl OscillationClass {
    pub fn as_str(self) -> &'static str {
        match self {
            OscillationClass::Sustained => "sustained",
            OscillationClass::Damped => "damped",
            OscillationClass::None => "none",
        }
    }

    pub fn is_oscillating(self) -> bool {
        self != OscillationClass::None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OscillationRecord {
    /// Parameter value; unset when classifying a bare trajectory.
    pub param: Option<f64>,
    pub class: OscillationClass,
    /// Largest peak-minus-preceding-trough after the transient.
    pub amplitude: f64,
    /// Mean inter-peak interval, when at least two peaks were found.
    pub period: Option<f64>,
    pub quiescence_fraction: f64,
    pub spike_count: usize,
    pub peak_count: usize,
    /// Per-peak amplitude ratio from the median-slope fit.
    pub decay_ratio: Option<f64>,
    pub amp_floor: f64,
    /// Simulated duration that produced this record.
    pub duration: f64,
    /// Set when the cell could not be simulated to the end (the class is
    /// then `None`).
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecurrenceMetrics {
    pub quiescence_fraction: f64,
    pub spike_count: usize,
    pub mean_interspike: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Peak {
    index: usize,
    time: f64,
    value: f64,
    /// Peak value minus the lowest sample since the previous peak.
    rise: f64,
}

fn scale_of(y: &[f64]) -> f64 {
    y.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-12)
}

/// 3-point maxima whose topographic prominence exceeds `floor`, with
/// parabolic refinement of time and height.
fn find_peaks(t: &[f64], y: &[f64], floor: f64) -> Vec<Peak> {
    let n = y.len();
    let mut peaks = Vec::new();
    if n < 3 {
        return peaks;
    }
    let mut last_idx = 0usize;
    for i in 1..n - 1 {
        let v = y[i];
        if !(v > y[i - 1] && v >= y[i + 1]) {
            continue;
        }
        let mut left_min = v;
        let mut j = i;
        while j > 0 {
            j -= 1;
            if y[j] > v {
                break;
            }
            left_min = left_min.min(y[j]);
        }
        let mut right_min = v;
        let mut j = i + 1;
        while j < n {
            if y[j] > v {
                break;
            }
            right_min = right_min.min(y[j]);
            j += 1;
        }
        let prominence = v - left_min.max(right_min);
        if prominence <= floor {
            continue;
        }
        let (a, b, c) = (y[i - 1], v, y[i + 1]);
        let curv = a - 2.0 * b + c;
        let (shift, value) = if curv < 0.0 {
            let d = 0.5 * (a - c) / curv;
            (d, b - 0.25 * (a - c) * d)
        } else {
            (0.0, b)
        };
        let dt = if shift >= 0.0 { t[i + 1] - t[i] } else { t[i] - t[i - 1] };
        let trough = y[last_idx..=i].iter().copied().fold(f64::INFINITY, f64::min);
        peaks.push(Peak {
            index: i,
            time: t[i] + shift * dt,
            value,
            rise: value - trough,
        });
        last_idx = i;
    }
    peaks
}

/// Ratio per peak from the Theil–Sen slope of log amplitudes.
fn decay_ratio(amps: &[f64]) -> Option<f64> {
    let amps: Vec<f64> = amps.iter().copied().filter(|a| *a > 0.0).collect();
    let amps = &amps[amps.len().saturating_sub(TREND_PEAKS)..];
    if amps.len() < 2 {
        return None;
    }
    let logs: Vec<f64> = amps.iter().map(|a| a.ln()).collect();
    let mut slopes = Vec::with_capacity(logs.len() * (logs.len() - 1) / 2);
    for i in 0..logs.len() {
        for j in i + 1..logs.len() {
            slopes.push((logs[j] - logs[i]) / (j - i) as f64);
        }
    }
    Some(median(&mut slopes).exp())
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Centre of the most populated of 64 equal bins over the sample range.
fn histogram_mode(y: &[f64]) -> f64 {
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
    if !(hi > lo) {
        return lo;
    }
    let width = (hi - lo) / HISTOGRAM_BINS as f64;
    let mut counts = [0usize; HISTOGRAM_BINS];
    for v in y {
        let k = (((v - lo) / width) as usize).min(HISTOGRAM_BINS - 1);
        counts[k] += 1;
    }
    let best = (0..HISTOGRAM_BINS)
        .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
        .unwrap_or(0);
    lo + (best as f64 + 0.5) * width
}

fn metrics_of(t: &[f64], y: &[f64], band: f64) -> RecurrenceMetrics {
    let flat = RecurrenceMetrics {
        quiescence_fraction: 1.0,
        spike_count: 0,
        mean_interspike: None,
    };
    if y.is_empty() {
        return flat;
    }
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
    let range = hi - lo;
    let floor = AMP_FLOOR_REL * scale_of(y);
    if !(range > floor) {
        return flat;
    }
    let mode = histogram_mode(y);
    let half = band * range;
    let inside = y.iter().filter(|v| (*v - mode).abs() <= half).count();
    let spikes: Vec<f64> = find_peaks(t, y, floor)
        .into_iter()
        .filter(|p| p.value - lo > 0.5 * range)
        .map(|p| p.time)
        .collect();
    let mean_interspike = (spikes.len() >= 2)
        .then(|| (spikes[spikes.len() - 1] - spikes[0]) / (spikes.len() - 1) as f64);
    RecurrenceMetrics {
        quiescence_fraction: inside as f64 / y.len() as f64,
        spike_count: spikes.len(),
        mean_interspike,
    }
}

/// Quiescence and spike statistics over the whole trajectory.
///
/// `quiescence_band` is a fraction of the observable's range, measured
/// around the histogram mode.
pub fn recurrence_metrics(traj: &Trajectory, observable: usize, quiescence_band: f64) -> Result<RecurrenceMetrics> {
    check_observable(traj, observable)?;
    if !(quiescence_band >= 0.0) {
        return Err(Error::InvalidInput(format!("quiescence band {quiescence_band} must be >= 0")));
    }
    let y = traj.component(observable);
    Ok(metrics_of(&traj.times, &y, quiescence_band))
}

fn check_observable(traj: &Trajectory, observable: usize) -> Result<()> {
    let dim = traj.states.first().map_or(0, |s| s.len());
    if observable >= dim {
        return Err(Error::InvalidInput(format!(
            "observable index {observable} out of range for dimension {dim}"
        )));
    }
    Ok(())
}

/// Classifies the part of `traj` after the first `settle_fraction` of samples.
pub fn classify_oscillation(traj: &Trajectory, observable: usize, settle_fraction: f64) -> Result<OscillationRecord> {
    if traj.is_failed() {
        return Err(Error::FailedTrajectory);
    }
    check_observable(traj, observable)?;
    if !(0.0..1.0).contains(&settle_fraction) {
        return Err(Error::InvalidInput(format!("settle fraction {settle_fraction} outside [0, 1)")));
    }
    let start = ((traj.len() as f64) * settle_fraction) as usize;
    let t = &traj.times[start..];
    let y: Vec<f64> = traj.states[start..].iter().map(|s| s[observable]).collect();
    let floor = AMP_FLOOR_REL * scale_of(&y);
    let peaks = find_peaks(t, &y, floor);
    // The first peak's trough may be cut by the window start.
    let amps: Vec<f64> = peaks.iter().skip(1).map(|p| p.rise).collect();
    let ratio = decay_ratio(&amps);
    let amplitude = peaks.iter().map(|p| p.rise).fold(0.0, f64::max);
    let class = match ratio {
        _ if amplitude <= floor => OscillationClass::None,
        Some(r) if peaks.len() >= SUSTAINED_MIN_PEAKS && r >= RATIO_LO => OscillationClass::Sustained,
        Some(r) if peaks.len() >= DAMPED_MIN_PEAKS && r < RATIO_LO => OscillationClass::Damped,
        _ => OscillationClass::None,
    };
    let period = (peaks.len() >= 2)
        .then(|| (peaks[peaks.len() - 1].time - peaks[0].time) / (peaks.len() - 1) as f64);
    let metrics = metrics_of(t, &y, DEFAULT_QUIESCENCE_BAND);
    Ok(OscillationRecord {
        param: None,
        class,
        amplitude,
        period,
        quiescence_fraction: metrics.quiescence_fraction,
        spike_count: metrics.spike_count,
        peak_count: peaks.len(),
        decay_ratio: ratio,
        amp_floor: floor,
        duration: traj.times.last().unwrap_or(&0.0) - traj.times.first().unwrap_or(&0.0),
        error: None,
    })
}

/// Base simulation span: 200 / Hopf frequency when known, else 500.
pub fn duration_heuristic(hopf_frequency: Option<f64>) -> f64 {
    match hopf_frequency {
        Some(w) if w.is_finite() && w.abs() > 1e-12 => 200.0 / w.abs(),
        _ => 500.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanOptions {
    pub observable: usize,
    pub settle_fraction: f64,
    /// Initial simulated span.
    pub duration: f64,
    /// Largest multiple of `duration` reached by doubling.
    pub max_extension: u32,
    /// Dense samples per simulated span.
    pub samples: usize,
    pub integrator: IntegratorConfig,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            observable: 0,
            settle_fraction: DEFAULT_SETTLE_FRACTION,
            duration: duration_heuristic(None),
            max_extension: 8,
            samples: 20_000,
            integrator: IntegratorConfig::default(),
        }
    }
}

impl ScanOptions {
    pub fn with_observable(observable: usize) -> Self {
        ScanOptions {
            observable,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::InvalidInput(format!("duration {} must be positive", self.duration)));
        }
        if self.max_extension < 1 || self.samples < 100 {
            return Err(Error::InvalidInput("max_extension >= 1 and samples >= 100 required".into()));
        }
        self.integrator.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanResult {
    pub bif_param: String,
    pub grid: Vec<f64>,
    pub records: Vec<OscillationRecord>,
    /// Adjacent (oscillating, non-oscillating) grid values, if any.
    pub stop_bracket: Option<(f64, f64)>,
}

impl ScanResult {
    pub fn to_csv(&self) -> String {
        use crate::integrate::fmt_g17;
        let mut s = String::from("param,class,amplitude,period,quiescence_fraction,spike_count\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                fmt_g17(r.param.unwrap_or(f64::NAN)),
                r.class.as_str(),
                fmt_g17(r.amplitude),
                r.period.map(fmt_g17).unwrap_or_default(),
                fmt_g17(r.quiescence_fraction),
                r.spike_count
            ));
        }
        s
    }
}

/// Simulates one parameter value, doubling the span while the record is
/// inconclusive: few peaks above the floor, still-growing amplitude, or
/// decay that may be a slow approach to a cycle. Extension can only
/// upgrade a damped record to sustained; otherwise the first damped
/// record is kept.
///
/// A trajectory that fails (typically escaping to infinity) yields a
/// `None` record carrying the failure in `error`.
pub fn simulate_cell(params: &ParameterSet, x0: &[f64], opts: &ScanOptions) -> Result<OscillationRecord> {
    opts.validate()?;
    let mut factor = 1u32;
    let mut first_damped: Option<OscillationRecord> = None;
    loop {
        let span = opts.duration * factor as f64;
        let cfg = IntegratorConfig {
            dense_dt: Some(span / opts.samples as f64),
            ..opts.integrator
        };
        let traj = integrate(params, x0, (0.0, span), &cfg)?;
        if let Some(f) = traj.flags.failure {
            let e = format!("integration failed at t = {} ({:?})", f.time, f.reason);
            let mut rec = failed_record(params.bif_value().unwrap_or(f64::NAN), span, e);
            rec.param = params.bif_value();
            return Ok(first_damped.unwrap_or(rec));
        }
        let mut rec = classify_oscillation(&traj, opts.observable, opts.settle_fraction)?;
        rec.param = params.bif_value();
        let few_peaks = rec.peak_count < EXTEND_BELOW_PEAKS && rec.amplitude > rec.amp_floor;
        let growing = rec.decay_ratio.is_some_and(|r| r > RATIO_HI);
        let damped = rec.class == OscillationClass::Damped;
        let done = !(few_peaks || growing || damped) || factor * 2 > opts.max_extension;
        if done || (rec.class == OscillationClass::Sustained && !few_peaks && !growing) {
            return Ok(match (rec.class, first_damped) {
                (OscillationClass::Sustained, _) | (_, None) => rec,
                (_, Some(d)) => d,
            });
        }
        if damped && first_damped.is_none() {
            first_damped = Some(rec);
        }
        factor *= 2;
    }
}

fn failed_record(param: f64, duration: f64, e: String) -> OscillationRecord {
    OscillationRecord {
        param: Some(param),
        class: OscillationClass::None,
        amplitude: 0.0,
        period: None,
        quiescence_fraction: 1.0,
        spike_count: 0,
        peak_count: 0,
        decay_ratio: None,
        amp_floor: 0.0,
        duration,
        error: Some(e),
    }
}

/// Adjacent grid pair (oscillating side, silent side); sustained-to-none
/// transitions take precedence over damped-to-none ones.
fn stop_bracket(records: &[OscillationRecord], grid: &[f64]) -> Option<(f64, f64)> {
    let pick = |osc: fn(OscillationClass) -> bool| {
        grid.windows(2).zip(records.windows(2)).find_map(|(g, r)| {
            let silent = |x: &OscillationRecord| x.class == OscillationClass::None;
            if osc(r[0].class) && silent(&r[1]) {
                Some((g[0], g[1]))
            } else if osc(r[1].class) && silent(&r[0]) {
                Some((g[1], g[0]))
            } else {
                None
            }
        })
    };
    pick(|c| c == OscillationClass::Sustained).or_else(|| pick(|c| c == OscillationClass::Damped))
}

/// Classifies oscillation at every grid value (cells run in parallel).
pub fn scan_parameter(
    params: &ParameterSet,
    bif_param: &str,
    grid: &[f64],
    x0: &[f64],
    opts: &ScanOptions,
) -> Result<ScanResult> {
    if grid.len() < 3 {
        return Err(Error::InvalidInput(format!("scan grid needs >= 3 values, got {}", grid.len())));
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("scan grid"));
    }
    let ascending = grid.windows(2).all(|w| w[0] < w[1]);
    let descending = grid.windows(2).all(|w| w[0] > w[1]);
    if !(ascending || descending) {
        return Err(Error::InvalidInput("scan grid must be strictly sorted".into()));
    }
    opts.validate()?;
    let base = params.clone().with_bif_param(bif_param)?;
    if x0.len() != base.def().dim {
        return Err(Error::DimensionMismatch {
            expected: base.def().dim,
            got: x0.len(),
        });
    }
    let records: Vec<OscillationRecord> = grid
        .par_iter()
        .map(|&p| {
            let cell = base.with_bif_value(p);
            simulate_cell(&cell, x0, opts).unwrap_or_else(|e| failed_record(p, opts.duration, e.to_string()))
        })
        .collect();
    let stop_bracket = stop_bracket(&records, grid);
    Ok(ScanResult {
        bif_param: bif_param.to_string(),
        grid: grid.to_vec(),
        records,
        stop_bracket,
    })
}

/// Bisects on oscillation class between an oscillating and a silent
/// parameter value; returns the midpoint of the final bracket.
pub fn find_stop_point(
    params: &ParameterSet,
    bif_param: &str,
    bracket: (f64, f64),
    x0: &[f64],
    opts: &ScanOptions,
) -> Result<f64> {
    let (mut osc, mut silent) = bracket;
    if !(osc.is_finite() && silent.is_finite()) || osc == silent {
        return Err(Error::InvalidInput(format!("degenerate stop bracket ({osc}, {silent})")));
    }
    let base = params.clone().with_bif_param(bif_param)?;
    let class_at = |p: f64| simulate_cell(&base.with_bif_value(p), x0, opts).map(|r| r.class);
    let (c_osc, c_silent) = rayon::join(|| class_at(osc), || class_at(silent));
    let (c_osc, c_silent) = (c_osc?, c_silent?);
    if !c_osc.is_oscillating() || c_silent.is_oscillating() {
        return Err(Error::InvalidInput(format!(
            "stop bracket endpoints classify as {} at {osc} and {} at {silent}; expected oscillating then none",
            c_osc.as_str(),
            c_silent.as_str()
        )));
    }
    let width = 1e-3 * (osc - silent).abs();
    for _ in 0..12 {
        if (osc - silent).abs() <= width {
            break;
        }
        let mid = 0.5 * (osc + silent);
        if class_at(mid)?.is_oscillating() {
            osc = mid;
        } else {
            silent = mid;
        }
    }
    Ok(0.5 * (osc + silent))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitCycle {
    /// Sample times relative to the section crossing that starts the period.
    pub times: Vec<f64>,
    /// One period of states; the last point is the next section crossing.
    pub points: Vec<Vec<f64>>,
    pub period: f64,
    pub observable: usize,
    pub section_level: f64,
    pub observable_min: f64,
    pub observable_max: f64,
}

impl LimitCycle {
    /// Largest pairwise extent over coordinates (bounding-box diagonal).
    pub fn diameter(&self) -> f64 {
        let n = self.points.first().map_or(0, |p| p.len());
        (0..n)
            .map(|i| {
                let (lo, hi) = self
                    .points
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p[i]), h.max(p[i])));
                (hi - lo) * (hi - lo)
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn closure_gap(&self) -> f64 {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) => crate::equilibrium::norm2(
                &a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>(),
            ),
            _ => 0.0,
        }
    }

    pub fn to_csv(&self, labels: &[&str]) -> String {
        use crate::integrate::fmt_g17;
        let mut s = String::from("t");
        for l in labels {
            s.push(',');
            s.push_str(l);
        }
        s.push('\n');
        for (t, p) in self.times.iter().zip(&self.points) {
            s.push_str(&fmt_g17(*t));
            for v in p {
                s.push(',');
                s.push_str(&fmt_g17(*v));
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CycleOptions {
    /// Base span; the search gives up after `8 * duration`.
    pub duration: f64,
    /// Poincaré hits must agree to this (relative to max(1, |x|)).
    pub hit_tol: f64,
    /// Samples stored over the returned period.
    pub samples: usize,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for CycleOptions {
    fn default() -> Self {
        CycleOptions {
            duration: duration_heuristic(None),
            hit_tol: 1e-8,
            samples: 2000,
            rtol: 1e-11,
            atol: 1e-13,
        }
    }
}

/// Integrates past transients and returns one period of the attracting
/// cycle through the section `{x[observable] = level, increasing}`.
///
/// The level is the histogram mode of the observable over the second half
/// of a preliminary run of `duration`, clamped to the central 80% of its
/// range so the section is crossed transversally.
pub fn extract_limit_cycle(params: &ParameterSet, x0: &[f64], observable: usize, opts: &CycleOptions) -> Result<LimitCycle> {
    let dim = params.def().dim;
    if x0.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: x0.len() });
    }
    if observable >= dim {
        return Err(Error::InvalidInput(format!("observable index {observable} out of range for dimension {dim}")));
    }
    if !(opts.duration > 0.0 && opts.hit_tol > 0.0 && opts.samples >= 10) {
        return Err(Error::InvalidInput("invalid cycle options".into()));
    }
    let icfg = IntegratorConfig {
        rtol: opts.rtol,
        atol: opts.atol,
        dense_dt: Some(opts.duration / 20_000.0),
        ..Default::default()
    };
    let pre = integrate(params, x0, (0.0, opts.duration), &icfg)?;
    if pre.is_failed() {
        return Err(Error::FailedTrajectory);
    }
    let half = pre.len() / 2;
    let y: Vec<f64> = pre.states[half..].iter().map(|s| s[observable]).collect();
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
    let floor = AMP_FLOOR_REL * scale_of(&y);
    if !(hi - lo > floor) {
        return Err(Error::NoCycle("observable is flat after transients".into()));
    }
    let level = histogram_mode(&y).clamp(lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo));
    let start = pre.last_state().expect("nonempty trajectory").to_vec();
    let t0 = opts.duration;

    let flow = ModelFlow::new(params, &start)?;
    let u0 = flow.to_internal(&start);
    let t_limit = 8.0 * opts.duration;
    let scfg = IntegratorConfig {
        rtol: opts.rtol,
        atol: opts.atol,
        max_step: Some(opts.duration / 1000.0),
        ..Default::default()
    };
    let mut solver = Solver::new(&flow, t0, &u0, t_limit, &scfg)?;
    let mut tracker = Tracker {
        flow: &flow,
        level,
        observable,
        u: vec![0.0; dim],
        x: vec![0.0; dim],
    };
    let mut prev_t = t0;
    let mut prev_g = tracker.g_of(&u0);
    let mut last_hit: Option<(f64, Vec<f64>)> = None;
    let mut confirmed: Option<(f64, f64)> = None;

    // Phase 1: locate two consecutive matching hits.
    while confirmed.is_none() {
        match solver.step() {
            StepOutcome::Accepted => {}
            StepOutcome::Finished => break,
            StepOutcome::Failed(_) => return Err(Error::FailedTrajectory),
        }
        let t1 = solver.t();
        let g1 = tracker.g_of(solver.y());
        if prev_g < 0.0 && g1 >= 0.0 {
            let (th, xh) = tracker.crossing(&solver, prev_t, t1, prev_g);
            if let Some((tp, xp)) = &last_hit {
                let close = xh
                    .iter()
                    .zip(xp)
                    .all(|(a, b)| (a - b).abs() <= opts.hit_tol * a.abs().max(1.0));
                if close {
                    confirmed = Some((th, th - tp));
                }
            }
            last_hit = Some((th, xh));
        }
        prev_t = t1;
        prev_g = g1;
    }
    let Some((t_start, period_guess)) = confirmed else {
        return Err(Error::NoCycle(format!(
            "no converged section returns within t = {t_limit}"
        )));
    };
    let start_state = last_hit.expect("hit recorded").1;

    // Phase 2: sample one more revolution up to the next crossing.
    let dt = period_guess / opts.samples as f64;
    let mut times = vec![0.0];
    let mut points = vec![start_state];
    let mut next_sample = t_start + dt;
    solver.extend_to(t_start + 4.0 * period_guess.max(1e-12) + t_limit);
    loop {
        let t_prev = solver.t();
        let g_prev = tracker.g_of(solver.y());
        match solver.step() {
            StepOutcome::Accepted => {}
            StepOutcome::Finished => {
                return Err(Error::NoCycle("section not crossed again".into()));
            }
            StepOutcome::Failed(_) => return Err(Error::FailedTrajectory),
        }
        let t1 = solver.t();
        let g1 = tracker.g_of(solver.y());
        let hit = (g_prev < 0.0 && g1 >= 0.0 && t_prev > t_start)
            .then(|| tracker.crossing(&solver, t_prev, t1, g_prev));
        let stop_at = hit.as_ref().map_or(t1, |h| h.0);
        while next_sample < stop_at - 1e-9 * dt {
            points.push(tracker.state_at(&solver, next_sample));
            times.push(next_sample - t_start);
            next_sample += dt;
        }
        if let Some((th, xh)) = hit {
            times.push(th - t_start);
            points.push(xh);
            let obs: Vec<f64> = points.iter().map(|p| p[observable]).collect();
            let (omin, omax) = obs
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
            if !(omax - omin > floor) {
                return Err(Error::NoCycle("returns converged to an equilibrium".into()));
            }
            return Ok(LimitCycle {
                times,
                points,
                period: th - t_start,
                observable,
                section_level: level,
                observable_min: omin,
                observable_max: omax,
            });
        }
    }
}

struct Tracker<'a> {
    flow: &'a ModelFlow,
    level: f64,
    observable: usize,
    u: Vec<f64>,
    x: Vec<f64>,
}

impl Tracker<'_> {
    fn g_of(&mut self, u: &[f64]) -> f64 {
        self.flow.to_state(u, &mut self.x);
        self.x[self.observable] - self.level
    }

    fn state_at<S: OdeSystem + ?Sized>(&mut self, solver: &Solver<'_, S>, t: f64) -> Vec<f64> {
        solver.interpolate(t, &mut self.u);
        self.flow.to_state(&self.u, &mut self.x);
        self.x.clone()
    }

    /// Bisection on the dense interpolant over the last step.
    fn crossing<S: OdeSystem + ?Sized>(&mut self, solver: &Solver<'_, S>, t0: f64, t1: f64, g0: f64) -> (f64, Vec<f64>) {
        let (mut a, mut b, mut ga) = (t0, t1, g0);
        for _ in 0..100 {
            if b - a <= 1e-14 * b.abs().max(1.0) {
                break;
            }
            let m = 0.5 * (a + b);
            solver.interpolate(m, &mut self.u);
            let gm = {
                let u = self.u.clone();
                self.g_of(&u)
            };
            if (gm < 0.0) == (ga < 0.0) {
                a = m;
                ga = gm;
            } else {
                b = m;
            }
        }
        let t = 0.5 * (a + b);
        (t, self.state_at(solver, t))
    }
}

/// Reference set for [`manifold_proximity`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Proximity {
    /// Coordinate axes of a planar system.
    Axes,
    /// A point in state space, typically an equilibrium.
    Point(Vec<f64>),
}

/// Closest approach of the cycle to the coordinate axes or to a point.
pub fn manifold_proximity(cycle: &LimitCycle, mode: &Proximity) -> Result<f64> {
    let dim = cycle.points.first().map_or(0, |p| p.len());
    if dim == 0 {
        return Err(Error::InvalidInput("empty cycle".into()));
    }
    match mode {
        Proximity::Axes => {
            if dim != 2 {
                return Err(Error::DimensionMismatch { expected: 2, got: dim });
            }
            Ok(cycle
                .points
                .iter()
                .map(|p| p[0].abs().min(p[1].abs()))
                .fold(f64::INFINITY, f64::min))
        }
        Proximity::Point(q) => {
            if q.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: q.len() });
            }
            Ok(cycle
                .points
                .iter()
                .map(|p| crate::equilibrium::norm2(&p.iter().zip(q).map(|(a, b)| a - b).collect::<Vec<_>>()))
                .fold(f64::INFINITY, f64::min))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::{TrajectoryFlags, IntegrationStats};
    use crate::models::ModelId;

    fn synthetic(f: impl Fn(f64) -> f64, t_end: f64, n: usize) -> Trajectory {
        let times: Vec<f64> = (0..=n).map(|k| t_end * k as f64 / n as f64).collect();
        let states = times.iter().map(|&t| vec![f(t)]).collect();
        Trajectory {
            times,
            states,
            flags: TrajectoryFlags::default(),
            stats: IntegrationStats::default(),
        }
    }

    #[test]
    fn sinusoid_is_sustained_with_low_quiescence() {
        let traj = synthetic(|t| t.sin(), 200.0, 20_000);
        let rec = classify_oscillation(&traj, 0, 0.5).unwrap();
        assert_eq!(rec.class, OscillationClass::Sustained);
        assert!((rec.period.unwrap() - std::f64::consts::TAU).abs() < 1e-3);
        assert!((rec.amplitude - 2.0).abs() < 1e-3);
        let m = recurrence_metrics(&traj, 0, 0.05).unwrap();
        assert!(m.quiescence_fraction < 0.3, "{}", m.quiescence_fraction);
    }

    #[test]
    fn decaying_and_flat_signals() {
        let traj = synthetic(|t| (-0.02 * t).exp() * t.sin(), 200.0, 20_000);
        let rec = classify_oscillation(&traj, 0, 0.5).unwrap();
        assert_eq!(rec.class, OscillationClass::Damped);
        let r = rec.decay_ratio.unwrap();
        assert!((r - (-0.02 * std::f64::consts::TAU).exp()).abs() < 1e-3, "{r}");

        let flat = synthetic(|_| 3.0, 100.0, 1000);
        let rec = classify_oscillation(&flat, 0, 0.5).unwrap();
        assert_eq!(rec.class, OscillationClass::None);
        assert_eq!(rec.amplitude, 0.0);
        let m = recurrence_metrics(&flat, 0, 0.05).unwrap();
        assert_eq!((m.quiescence_fraction, m.spike_count), (1.0, 0));
    }

    #[test]
    fn square_wave_dwell_fraction() {
        // 95% of each unit period at baseline 0, 5% at height 1.
        let traj = synthetic(|t| if t.fract() >= 0.95 { 1.0 } else { 0.0 }, 100.0, 100_000);
        let m = recurrence_metrics(&traj, 0, 0.05).unwrap();
        assert!((m.quiescence_fraction - 0.95).abs() < 0.02, "{}", m.quiescence_fraction);
    }

    #[test]
    fn spikes_counted_above_half_range() {
        let traj = synthetic(|t| (-(t - 10.0 * (t / 10.0).round()).powi(2) * 4.0).exp(), 100.0, 10_000);
        let m = recurrence_metrics(&traj, 0, 0.05).unwrap();
        assert_eq!(m.spike_count, 9);
        assert!((m.mean_interspike.unwrap() - 10.0).abs() < 1e-6);
    }

    #[test]
    fn failed_trajectory_is_refused() {
        let mut traj = synthetic(|t| t.sin(), 10.0, 100);
        traj.flags.failure = Some(crate::integrate::IntegrationFailure {
            time: 5.0,
            reason: crate::integrate::FailureReason::NonFinite,
        });
        assert!(matches!(classify_oscillation(&traj, 0, 0.5), Err(Error::FailedTrajectory)));
    }

    #[test]
    fn proximity_geometry() {
        let circle = |cx: f64, cy: f64| LimitCycle {
            times: (0..=1000).map(|k| k as f64).collect(),
            points: (0..=1000)
                .map(|k| {
                    let th = std::f64::consts::TAU * k as f64 / 1000.0;
                    vec![cx + th.cos(), cy + th.sin()]
                })
                .collect(),
            period: 1000.0,
            observable: 0,
            section_level: 0.0,
            observable_min: -1.0,
            observable_max: 1.0,
        };
        let unit = circle(0.0, 0.0);
        assert!(manifold_proximity(&unit, &Proximity::Axes).unwrap() < 1e-12);
        let off = circle(2.0, 2.0);
        let d = manifold_proximity(&off, &Proximity::Point(vec![0.0, 0.0])).unwrap();
        assert!((d - (2.0 * 2f64.sqrt() - 1.0)).abs() < 1e-5, "{d}");
        assert!(manifold_proximity(&off, &Proximity::Point(vec![0.0; 3])).is_err());
    }

    #[test]
    fn vanderpol_cycle_closes() {
        let p = ParameterSet::defaults(ModelId::VanDerPol).with("eps", 0.1).unwrap();
        let opts = CycleOptions {
            duration: 50.0,
            ..Default::default()
        };
        let cyc = extract_limit_cycle(&p, &[0.5, 0.0], 0, &opts).unwrap();
        assert!(cyc.closure_gap() < 1e-6 * cyc.diameter());
        assert!(cyc.observable_max > 1.9 && cyc.observable_min < -1.9);
    }

    #[test]
    fn stop_bracket_prefers_sustained() {
        let rec = |c| OscillationRecord {
            param: None,
            class: c,
            amplitude: 0.0,
            period: None,
            quiescence_fraction: 0.0,
            spike_count: 0,
            peak_count: 0,
            decay_ratio: None,
            amp_floor: 0.0,
            duration: 0.0,
            error: None,
        };
        use OscillationClass as C;
        let recs = vec![rec(C::None), rec(C::Damped), rec(C::Sustained), rec(C::None)];
        assert_eq!(stop_bracket(&recs, &[0.0, 1.0, 2.0, 3.0]), Some((2.0, 3.0)));
        let recs = vec![rec(C::None), rec(C::Damped), rec(C::Damped)];
        assert_eq!(stop_bracket(&recs, &[0.0, 1.0, 2.0]), Some((1.0, 0.0)));
    }
}
