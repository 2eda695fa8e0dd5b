//! Adaptive Dormand–Prince 5(4) integration with pump-discontinuity
//! handling.
//!
//! The driver splits the requested span at every pump breakpoint and at
//! every requested sample time, so no step straddles a discontinuity and
//! samples land on exact step endpoints. Within a smooth segment the
//! classic embedded 5(4) pair with FSAL runs with a proportional step
//! controller. Everything is plain f64 arithmetic in a fixed order:
//! identical inputs give bit-identical results.

use crate::dynamics::RateSystem;
use crate::error::{Error, Result};
use crate::pump::PumpSchedule;
use nalgebra::DVector;

// Dormand-Prince coefficients.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const A7: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
// y5 − y4 error weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;

#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    pub steps: usize,
    pub rejected: usize,
    pub evals: usize,
}

impl StepStats {
    fn absorb(&mut self, other: StepStats) {
        self.steps += other.steps;
        self.rejected += other.rejected;
        self.evals += other.evals;
    }
}

/// Tolerances and step limits; `sample_interval` is the trajectory grid.
#[derive(Debug, Clone, Copy)]
pub struct IntegratorSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: Option<f64>,
    pub sample_interval: f64,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        IntegratorSettings {
            rel_tol: 1e-8,
            abs_tol: 1e-12,
            max_step: None,
            sample_interval: 0.25,
        }
    }
}

impl IntegratorSettings {
    pub fn from_config(cfg: &crate::config::IntegratorConfig) -> Self {
        IntegratorSettings {
            rel_tol: cfg.rel_tol,
            abs_tol: cfg.abs_tol,
            max_step: cfg.max_step,
            sample_interval: cfg.sample_interval,
        }
    }
}

/// What the per-step observer wants next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

struct Dopri5 {
    k: [DVector<f64>; 7],
    y_stage: DVector<f64>,
    y_new: DVector<f64>,
    err: DVector<f64>,
}

impl Dopri5 {
    fn new(dim: usize) -> Self {
        Dopri5 {
            k: std::array::from_fn(|_| DVector::zeros(dim)),
            y_stage: DVector::zeros(dim),
            y_new: DVector::zeros(dim),
            err: DVector::zeros(dim),
        }
    }
}

/// Integrate from `t0` to `t1`, restarting at pump discontinuities and
/// forcing step endpoints on `sample_times` (ascending, within the span).
///
/// The observer runs at every accepted step; its last argument is true at
/// event boundaries (sample times, pump breakpoints, t1) and false at
/// interior steps. Returning [`Control::Stop`] ends the run early.
pub fn integrate<S: RateSystem + ?Sized>(
    sys: &mut S,
    pump: &PumpSchedule,
    t0: f64,
    t1: f64,
    y: &mut DVector<f64>,
    settings: &IntegratorSettings,
    sample_times: &[f64],
    observer: &mut dyn FnMut(f64, &DVector<f64>, bool) -> Control,
) -> Result<StepStats> {
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::Integration("non-finite initial state".into()));
    }
    if t1 <= t0 {
        return Err(Error::Integration(format!("empty time span [{t0}, {t1}]")));
    }

    // merged, deduplicated event grid: samples + pump breakpoints + t1
    let mut events: Vec<f64> = Vec::new();
    for &s in sample_times {
        if s > t0 && s <= t1 {
            events.push(s);
        }
    }
    events.extend(pump.breakpoints(t0, t1));
    events.push(t1);
    events.sort_by(|a, b| a.partial_cmp(b).unwrap());
    events.dedup_by(|a, b| (*a - *b).abs() < 1e-12 * t1.abs().max(1.0));

    let mut stats = StepStats::default();
    let mut solver = Dopri5::new(y.len());
    let mut t = t0;
    let mut h_carry: Option<f64> = None;
    for t_end in events {
        if t_end <= t {
            continue;
        }
        let (seg_stats, flow) = integrate_segment(
            sys, pump, t, t_end, y, settings, &mut solver, &mut h_carry, observer,
        )?;
        stats.absorb(seg_stats);
        if flow == Control::Stop {
            break;
        }
        t = t_end;
        if observer(t, y, true) == Control::Stop {
            break;
        }
    }
    Ok(stats)
}

/// One smooth segment: the pump is evaluated at segment times only, and the
/// FSAL derivative is rebuilt at entry so discontinuities never leak across.
#[allow(clippy::too_many_arguments)]
fn integrate_segment<S: RateSystem + ?Sized>(
    sys: &mut S,
    pump: &PumpSchedule,
    t0: f64,
    t1: f64,
    y: &mut DVector<f64>,
    settings: &IntegratorSettings,
    solver: &mut Dopri5,
    h_carry: &mut Option<f64>,
    observer: &mut dyn FnMut(f64, &DVector<f64>, bool) -> Control,
) -> Result<(StepStats, Control)> {
    let mut stats = StepStats::default();
    let mut t = t0;
    let p_of = |t: f64| pump.value(t);

    sys.rhs(t, y, p_of(t), &mut solver.k[0]);
    stats.evals += 1;

    let mut h = match *h_carry {
        Some(h) => h.min(t1 - t),
        None => initial_step(sys, t, y, &solver.k[0].clone(), p_of(t), settings, &mut stats),
    };
    if let Some(hm) = settings.max_step {
        h = h.min(hm);
    }
    h = h.min(t1 - t);

    loop {
        if !h.is_finite() || h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::Stiffness { t, h });
        }
        let clipped = h >= t1 - t;
        if clipped {
            h = t1 - t;
        }

        // stages
        for s in 1..7 {
            let coeffs: &[f64] = match s {
                1 => &A2,
                2 => &A3,
                3 => &A4,
                4 => &A5,
                5 => &A6,
                _ => &A7,
            };
            solver.y_stage.copy_from(y);
            for (j, &a) in coeffs.iter().enumerate() {
                if a != 0.0 {
                    solver.y_stage.axpy(h * a, &solver.k[j], 1.0);
                }
            }
            let ts = t + C[s] * h;
            if s == 6 {
                solver.y_new.copy_from(&solver.y_stage);
            }
            let k_s = &mut solver.k[s];
            sys.rhs(ts, &solver.y_stage, p_of(ts), k_s);
            stats.evals += 1;
        }

        // embedded error estimate
        solver.err.fill(0.0);
        for (j, &e) in E.iter().enumerate() {
            if e != 0.0 {
                solver.err.axpy(h * e, &solver.k[j], 1.0);
            }
        }
        let mut acc = 0.0f64;
        let n = y.len();
        for i in 0..n {
            let scale =
                settings.abs_tol + settings.rel_tol * y[i].abs().max(solver.y_new[i].abs());
            let r = solver.err[i] / scale;
            acc += r * r;
        }
        let err_norm = (acc / n as f64).sqrt();

        if err_norm.is_finite() && err_norm <= 1.0 {
            stats.steps += 1;
            t = if clipped { t1 } else { t + h };
            y.copy_from(&solver.y_new);
            solver.k.swap(0, 6); // FSAL
            let fac = if err_norm == 0.0 {
                FAC_MAX
            } else {
                (SAFETY * err_norm.powf(-0.2)).clamp(FAC_MIN, FAC_MAX)
            };
            h *= fac;
            if let Some(hm) = settings.max_step {
                h = h.min(hm);
            }
            *h_carry = Some(h);
            if clipped || t >= t1 {
                return Ok((stats, Control::Continue));
            }
            if observer(t, y, false) == Control::Stop {
                return Ok((stats, Control::Stop));
            }
        } else {
            stats.rejected += 1;
            let fac = if err_norm.is_finite() {
                (SAFETY * err_norm.powf(-0.2)).clamp(FAC_MIN, 1.0)
            } else {
                0.1
            };
            h *= fac;
        }
        h = h.min(t1 - t);
    }
}

/// Standard starting-step heuristic from scaled derivative norms plus one
/// explicit Euler probe.
fn initial_step<S: RateSystem + ?Sized>(
    sys: &mut S,
    t: f64,
    y: &DVector<f64>,
    f0: &DVector<f64>,
    pump: f64,
    settings: &IntegratorSettings,
    stats: &mut StepStats,
) -> f64 {
    let n = y.len();
    let scale = |yi: f64| settings.abs_tol + settings.rel_tol * yi.abs();
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for i in 0..n {
        let s = scale(y[i]);
        d0 += (y[i] / s).powi(2);
        d1 += (f0[i] / s).powi(2);
    }
    d0 = (d0 / n as f64).sqrt();
    d1 = (d1 / n as f64).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let mut y1 = y.clone();
    y1.axpy(h0, f0, 1.0);
    let mut f1 = DVector::zeros(n);
    sys.rhs(t + h0, &y1, pump, &mut f1);
    stats.evals += 1;
    let mut d2 = 0.0;
    for i in 0..n {
        let s = scale(y[i]);
        d2 += ((f1[i] - f0[i]) / s).powi(2);
    }
    d2 = (d2 / n as f64).sqrt() / h0;
    let d_max = d1.max(d2);
    let h1 = if d_max <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d_max).powf(0.2)
    };
    (100.0 * h0).min(h1)
}
