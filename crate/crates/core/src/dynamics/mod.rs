//! Right-hand sides for the exact and level-truncated dynamics, trajectory
//! integration and steady-state solving.
//!
//! State layout is a flat vector with the photon occupations n_i in the
//! first N_c slots, followed by either the molecular excitation fractions f
//! (exact) or the per-level coefficient vectors c_0..c_J (reduced). The
//! typed views [`FullState`] and [`ReducedState`] wrap that layout.

mod integrator;

pub use integrator::{integrate, Control, IntegratorSettings, StepStats};

use crate::error::{Error, Result};
use crate::hierarchy::{CouplingOperators, Hierarchy};
use crate::model::Model;
use crate::pump::PumpSchedule;
use nalgebra::DVector;

/// Photon occupations plus molecular excitation fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct FullState {
    pub photons: DVector<f64>,
    pub excitation: DVector<f64>,
}

impl FullState {
    pub fn into_flat(self) -> DVector<f64> {
        let mut y = DVector::zeros(self.photons.len() + self.excitation.len());
        y.rows_mut(0, self.photons.len()).copy_from(&self.photons);
        y.rows_mut(self.photons.len(), self.excitation.len())
            .copy_from(&self.excitation);
        y
    }

    pub fn from_flat(y: &DVector<f64>, mode_count: usize) -> Self {
        FullState {
            photons: y.rows(0, mode_count).into_owned(),
            excitation: y.rows(mode_count, y.len() - mode_count).into_owned(),
        }
    }
}

/// Photon occupations plus level-coefficient vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedState {
    pub photons: DVector<f64>,
    pub coefficients: Vec<DVector<f64>>,
}

impl ReducedState {
    pub fn into_flat(self) -> DVector<f64> {
        let total = self.photons.len() + self.coefficients.iter().map(|c| c.len()).sum::<usize>();
        let mut y = DVector::zeros(total);
        y.rows_mut(0, self.photons.len()).copy_from(&self.photons);
        let mut off = self.photons.len();
        for c in &self.coefficients {
            y.rows_mut(off, c.len()).copy_from(c);
            off += c.len();
        }
        y
    }

    pub fn from_flat(y: &DVector<f64>, mode_count: usize, dims: &[usize]) -> Self {
        let photons = y.rows(0, mode_count).into_owned();
        let mut coefficients = Vec::with_capacity(dims.len());
        let mut off = mode_count;
        for &d in dims {
            coefficients.push(y.rows(off, d).into_owned());
            off += d;
        }
        ReducedState { photons, coefficients }
    }
}

/// A first-order system ẏ = F(y, P) driven by the pump power.
pub trait RateSystem {
    fn dim(&self) -> usize;
    fn mode_count(&self) -> usize;
    fn rhs(&mut self, t: f64, y: &DVector<f64>, pump: f64, dydt: &mut DVector<f64>);
    /// Molecular excitation vector implied by the state (f, or Σ B_j c_j).
    fn molecular(&self, y: &DVector<f64>) -> DVector<f64>;
    fn label(&self) -> String;
}

/// Full rate equations on all N_m molecular groups.
pub struct ExactSystem<'a> {
    model: &'a Model,
    /// Diagonal of the pump-independent part of A⁽⁰⁾ (−Σ_i E_i g_i).
    base_shift: DVector<f64>,
    stim_coeff: DVector<f64>,
    gain: DVector<f64>,
    drive: DVector<f64>,
    reabsorb: DVector<f64>,
}

impl<'a> ExactSystem<'a> {
    pub fn new(model: &'a Model) -> Self {
        let ops = CouplingOperators::build(model);
        let nc = model.mode_count();
        let nm = model.group_count();
        ExactSystem {
            model,
            base_shift: ops.base_shift,
            stim_coeff: DVector::zeros(nc),
            gain: DVector::zeros(nc),
            drive: DVector::zeros(nm),
            reabsorb: DVector::zeros(nm),
        }
    }

    /// Cold-start state: a small photon seed and no molecular excitation.
    pub fn cold_start(&self, seed: f64) -> DVector<f64> {
        let mut y = DVector::zeros(self.dim());
        y.rows_mut(0, self.mode_count()).fill(seed);
        y
    }
}

impl RateSystem for ExactSystem<'_> {
    fn dim(&self) -> usize {
        self.model.mode_count() + self.model.group_count()
    }

    fn mode_count(&self) -> usize {
        self.model.mode_count()
    }

    fn rhs(&mut self, _t: f64, y: &DVector<f64>, pump: f64, dydt: &mut DVector<f64>) {
        let m = self.model;
        let nc = m.mode_count();
        let nm = m.group_count();
        let n = y.rows(0, nc);
        let f = y.rows(nc, nm);

        // ṅ_i = (n_i (E_i+A_i) + E_i)[Gf]_i − γ_i n_i
        self.gain.gemv(1.0, &m.coupling, &f, 0.0);
        for i in 0..nc {
            let total = m.emission[i] + m.absorption[i];
            dydt[i] = (n[i] * total + m.emission[i]) * self.gain[i] - m.gamma[i] * n[i];
        }

        // ḟ = Σ_i n_i A⁽ⁱ⁾ f − A⁽⁰⁾(P) f + v(P, n)
        for i in 0..nc {
            self.stim_coeff[i] = -(m.emission[i] + m.absorption[i]) * n[i];
        }
        self.drive.gemv_tr(1.0, &m.g, &self.stim_coeff, 0.0);
        for i in 0..nc {
            self.stim_coeff[i] = m.absorption[i] * n[i];
        }
        self.reabsorb.gemv_tr(1.0, &m.g, &self.stim_coeff, 0.0);
        let loss = m.gamma_down + pump;
        for p in 0..nm {
            dydt[nc + p] =
                (self.drive[p] - self.base_shift[p] - loss) * f[p] + pump + self.reabsorb[p];
        }
    }

    fn molecular(&self, y: &DVector<f64>) -> DVector<f64> {
        y.rows(self.model.mode_count(), self.model.group_count())
            .into_owned()
    }

    fn label(&self) -> String {
        "exact".into()
    }
}

/// Level-truncated dynamics on the hierarchy coefficients.
pub struct ReducedSystem<'a> {
    model: &'a Model,
    hierarchy: &'a Hierarchy,
    level: usize,
    offsets: Vec<usize>,
    weights: DVector<f64>,
    gain: DVector<f64>,
}

impl<'a> ReducedSystem<'a> {
    pub fn new(model: &'a Model, hierarchy: &'a Hierarchy, level: usize) -> Result<Self> {
        if level >= hierarchy.level_count() {
            return Err(Error::config(format!(
                "truncation level {level} exceeds the built hierarchy \
                 (levels 0..={})",
                hierarchy.level_count() - 1
            )));
        }
        let nc = model.mode_count();
        let mut offsets = Vec::with_capacity(level + 1);
        let mut off = nc;
        for j in 0..=level {
            offsets.push(off);
            off += hierarchy.bases[j].ncols();
        }
        Ok(ReducedSystem {
            model,
            hierarchy,
            level,
            offsets,
            weights: DVector::zeros(nc),
            gain: DVector::zeros(nc),
        })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    /// Lift an exact molecular state onto the retained levels.
    pub fn lift_state(&self, photons: &DVector<f64>, excitation: &DVector<f64>) -> DVector<f64> {
        let state = ReducedState {
            photons: photons.clone(),
            coefficients: self.hierarchy.lift(excitation, self.level),
        };
        state.into_flat()
    }

    pub fn cold_start(&self, seed: f64) -> DVector<f64> {
        let mut y = DVector::zeros(self.dim());
        y.rows_mut(0, self.mode_count()).fill(seed);
        y
    }

    fn dims(&self) -> Vec<usize> {
        (0..=self.level)
            .map(|j| self.hierarchy.bases[j].ncols())
            .collect()
    }
}

impl RateSystem for ReducedSystem<'_> {
    fn dim(&self) -> usize {
        self.offsets.last().unwrap() + self.hierarchy.bases[self.level].ncols()
    }

    fn mode_count(&self) -> usize {
        self.model.mode_count()
    }

    fn rhs(&mut self, _t: f64, y: &DVector<f64>, pump: f64, dydt: &mut DVector<f64>) {
        let m = self.model;
        let h = self.hierarchy;
        let nc = m.mode_count();
        let n = y.rows(0, nc);

        // cavity equations see only c_0
        let c0 = y.rows(self.offsets[0], h.bases[0].ncols());
        self.gain.gemv(1.0, &h.reduced_coupling, &c0, 0.0);
        for i in 0..nc {
            let total = m.emission[i] + m.absorption[i];
            dydt[i] = (n[i] * total + m.emission[i]) * self.gain[i] - m.gamma[i] * n[i];
        }

        for i in 0..nc {
            self.weights[i] = n[i] - h.emission_ratio[i];
        }
        let loss = m.gamma_down + pump;

        for j in 0..=self.level {
            let dj = h.bases[j].ncols();
            let cj = y.rows(self.offsets[j], dj);
            let mut out = dydt.rows_mut(self.offsets[j], dj);
            // −(Γ↓+P)c_j + P u_j + Σ_i A_i n_i s_{j,i}
            out.copy_from(&h.pump_components[j]);
            out *= pump;
            out.axpy(-loss, &cj, 1.0);
            out.gemv(1.0, &h.stim_components[j], &n, 1.0);
            // tri-diagonal level coupling, truncated at the deepest level
            let blocks = &h.blocks[j];
            for i in 0..nc {
                let w = self.weights[i];
                if let Some(below) = &blocks.below {
                    let ck = y.rows(self.offsets[j - 1], h.bases[j - 1].ncols());
                    out.gemv(w, &below[i], &ck, 1.0);
                }
                out.gemv(w, &blocks.diagonal[i], &cj, 1.0);
                if j < self.level {
                    if let Some(above) = &blocks.above {
                        let ck = y.rows(self.offsets[j + 1], h.bases[j + 1].ncols());
                        out.gemv(w, &above[i], &ck, 1.0);
                    }
                }
            }
        }
    }

    fn molecular(&self, y: &DVector<f64>) -> DVector<f64> {
        let state = ReducedState::from_flat(y, self.mode_count(), &self.dims());
        self.hierarchy.reconstruct(&state.coefficients)
    }

    fn label(&self) -> String {
        format!("level-{}", self.level)
    }
}

/// Sampled run: photon occupations at every sample time, optionally the
/// molecular excitation, plus integrator accounting.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub photons: Vec<DVector<f64>>,
    pub molecular: Option<Vec<DVector<f64>>>,
    pub pump: Vec<f64>,
    pub method: String,
    pub steps: usize,
    pub rejected: usize,
    pub evals: usize,
    pub cpu_seconds: f64,
}

impl Trajectory {
    pub fn mode_count(&self) -> usize {
        self.photons.first().map_or(0, |n| n.len())
    }
}

/// Integrate over [t0, t1] sampling on the regular grid (plus every pump
/// breakpoint) and return the trajectory together with the final state.
pub fn simulate(
    sys: &mut dyn RateSystem,
    pump: &PumpSchedule,
    t0: f64,
    t1: f64,
    y0: DVector<f64>,
    settings: &IntegratorSettings,
    record_molecular: bool,
) -> Result<(Trajectory, DVector<f64>)> {
    let mut y = y0;
    let nc = sys.mode_count();
    let mut samples = Vec::new();
    let mut k = 0usize;
    loop {
        let t = t0 + k as f64 * settings.sample_interval;
        if t >= t1 {
            break;
        }
        samples.push(t);
        k += 1;
    }
    samples.push(t1);

    let mut traj = Trajectory {
        times: vec![t0],
        photons: vec![y.rows(0, nc).into_owned()],
        molecular: record_molecular.then(|| vec![sys.molecular(&y)]),
        pump: vec![pump.value(t0)],
        method: sys.label(),
        steps: 0,
        rejected: 0,
        evals: 0,
        cpu_seconds: 0.0,
    };

    let cpu0 = thread_cpu_time();
    // pump breakpoints count as events too, so pulse edges appear exactly
    let stats = if record_molecular {
        // recording the molecular vector needs sys, so collect flat states
        let mut flats: Vec<(f64, DVector<f64>)> = Vec::new();
        let mut record_flat = |t: f64, y: &DVector<f64>, is_event: bool| {
            if is_event {
                flats.push((t, y.clone()));
            }
            Control::Continue
        };
        let stats = integrate(sys, pump, t0, t1, &mut y, settings, &samples, &mut record_flat)?;
        for (t, flat) in flats {
            traj.times.push(t);
            traj.photons.push(flat.rows(0, nc).into_owned());
            traj.pump.push(pump.value(t));
            traj.molecular.as_mut().unwrap().push(sys.molecular(&flat));
        }
        stats
    } else {
        let mut record = |t: f64, y: &DVector<f64>, is_event: bool| {
            if is_event {
                traj.times.push(t);
                traj.photons.push(y.rows(0, nc).into_owned());
                traj.pump.push(pump.value(t));
            }
            Control::Continue
        };
        integrate(sys, pump, t0, t1, &mut y, settings, &samples, &mut record)?
    };
    traj.cpu_seconds = thread_cpu_time() - cpu0;
    traj.steps = stats.steps;
    traj.rejected = stats.rejected;
    traj.evals = stats.evals;
    Ok((traj, y))
}

/// Solver knobs for [`steady_state`].
#[derive(Debug, Clone, Copy)]
pub struct SteadyStateOptions {
    /// Window length over which the fractional change is measured, 1/κ.
    pub window: f64,
    /// Per-mode fractional-change threshold over one window.
    pub frac_tol: f64,
    /// Residual acceptance: ‖rhs‖_∞ < residual_tol · max(‖n‖_∞, 1).
    pub residual_tol: f64,
    pub t_max: f64,
    /// Photon seed for the cold start.
    pub seed: f64,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        SteadyStateOptions {
            window: 10.0,
            frac_tol: 1e-9,
            residual_tol: 1e-8,
            t_max: 1e6,
            seed: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SteadyStateInfo {
    pub t_settle: f64,
    pub steps: usize,
    pub evals: usize,
    pub residual: f64,
}

const POPULATION_FLOOR: f64 = 1e-30;

/// Drive the system to its steady state at constant pump power from a cold
/// start. Converged means the fractional change of every mode over a window
/// stays below `frac_tol` and the instantaneous rhs is residually zero.
pub fn steady_state(
    sys: &mut dyn RateSystem,
    power: f64,
    settings: &IntegratorSettings,
    opts: &SteadyStateOptions,
) -> Result<(DVector<f64>, SteadyStateInfo)> {
    let pump = PumpSchedule::constant(power);
    let nc = sys.mode_count();
    let mut y = DVector::zeros(sys.dim());
    y.rows_mut(0, nc).fill(opts.seed);

    let mut n_prev = y.rows(0, nc).into_owned();
    let mut t = 0.0;
    let mut steps = 0;
    let mut evals = 0;
    let mut rhs = DVector::zeros(sys.dim());
    let mut last_change = f64::INFINITY;
    while t < opts.t_max {
        let t_end = t + opts.window;
        let mut sink = |_t: f64, _y: &DVector<f64>, _s: bool| Control::Continue;
        let stats = integrate(sys, &pump, t, t_end, &mut y, settings, &[], &mut sink)?;
        steps += stats.steps;
        evals += stats.evals;
        t = t_end;

        let n_now = y.rows(0, nc);
        last_change = (0..nc)
            .map(|i| (n_now[i] - n_prev[i]).abs() / n_now[i].abs().max(POPULATION_FLOOR))
            .fold(0.0, f64::max);
        n_prev.copy_from(&n_now);
        if last_change < opts.frac_tol {
            sys.rhs(t, &y, power, &mut rhs);
            evals += 1;
            let residual = rhs.amax();
            let n_scale = y.rows(0, nc).amax().max(1.0);
            if residual < opts.residual_tol * n_scale {
                return Ok((
                    y,
                    SteadyStateInfo { t_settle: t, steps, evals, residual },
                ));
            }
        }
    }
    Err(Error::Convergence {
        t_max: opts.t_max,
        residual: last_change,
        last_state: y,
    })
}

/// Current thread's CPU time in seconds; immune to wall-clock contention
/// from concurrent workers.
pub fn thread_cpu_time() -> f64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    if rc != 0 {
        return 0.0;
    }
    ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use approx::assert_relative_eq;

    fn paper_model() -> Model {
        Model::build(&ModelConfig::default()).unwrap()
    }

    /// Naive loop-based evaluation of the molecular rate equation, kept
    /// deliberately independent of the vectorized production path.
    fn rhs_oracle(model: &Model, y: &DVector<f64>, pump: f64) -> DVector<f64> {
        let nc = model.mode_count();
        let nm = model.group_count();
        let mut out = DVector::zeros(nc + nm);
        for i in 0..nc {
            let mut gf = 0.0;
            for p in 0..nm {
                gf += model.coupling[(i, p)] * y[nc + p];
            }
            let total = model.emission[i] + model.absorption[i];
            out[i] = (y[i] * total + model.emission[i]) * gf - model.gamma[i] * y[i];
        }
        for p in 0..nm {
            let f = y[nc + p];
            let mut acc = 0.0;
            for i in 0..nc {
                let total = model.emission[i] + model.absorption[i];
                // n_i A^(i) f  −  (E_i/(E_i+A_i)) A^(i) f  +  g A_i n_i
                acc += -(total) * model.g[(i, p)] * y[i] * f;
                acc += model.emission[i] * model.g[(i, p)] * f;
                acc += model.g[(i, p)] * model.absorption[i] * y[i];
            }
            // −(Γ↓+P)f + P, written in its balance form
            out[nc + p] = acc - model.gamma_down * f + pump * (1.0 - f);
        }
        out
    }

    #[test]
    fn rhs_zero_state_zero_pump_is_fixed_point() {
        let model = paper_model();
        let mut sys = ExactSystem::new(&model);
        let y = DVector::zeros(sys.dim());
        let mut dy = DVector::zeros(sys.dim());
        sys.rhs(0.0, &y, 0.0, &mut dy);
        assert_eq!(dy.amax(), 0.0);
    }

    #[test]
    fn rhs_pump_only_fills_molecules_uniformly() {
        let model = paper_model();
        let mut sys = ExactSystem::new(&model);
        let y = DVector::zeros(sys.dim());
        let mut dy = DVector::zeros(sys.dim());
        let pump = 3.7e-4;
        sys.rhs(0.0, &y, pump, &mut dy);
        let nc = model.mode_count();
        for i in 0..nc {
            assert_eq!(dy[i], 0.0);
        }
        for p in 0..model.group_count() {
            assert_relative_eq!(dy[nc + p], pump, max_relative = 1e-14);
        }
    }

    #[test]
    fn rhs_full_inversion_matches_symbolic_expansion() {
        // at f ≡ 1, n = 0 the pump cancels: ḟ_p = Σ_i E_i g_ip − Γ↓
        let model = paper_model();
        let mut sys = ExactSystem::new(&model);
        let nc = model.mode_count();
        let nm = model.group_count();
        let mut y = DVector::zeros(nc + nm);
        y.rows_mut(nc, nm).fill(1.0);
        let mut dy = DVector::zeros(nc + nm);
        sys.rhs(0.0, &y, 8.1e-3, &mut dy);
        for p in (0..nm).step_by(131) {
            let expected: f64 = (0..nc)
                .map(|i| model.emission[i] * model.g[(i, p)])
                .sum::<f64>()
                - model.gamma_down;
            assert_relative_eq!(dy[nc + p], expected, max_relative = 1e-10);
        }
    }

    #[test]
    fn rhs_matches_naive_oracle_on_generic_state() {
        let model = paper_model();
        let mut sys = ExactSystem::new(&model);
        let nc = model.mode_count();
        let nm = model.group_count();
        let mut y = DVector::zeros(nc + nm);
        // deterministic, structureless test state
        for i in 0..nc {
            y[i] = 0.3 + 1.7 * (i as f64 * 0.917).sin().abs();
        }
        for p in 0..nm {
            y[nc + p] = 0.5 + 0.4 * (p as f64 * 0.137).sin();
        }
        let pump = 2.3e-4;
        let mut dy = DVector::zeros(nc + nm);
        sys.rhs(0.0, &y, pump, &mut dy);
        let oracle = rhs_oracle(&model, &y, pump);
        for idx in 0..nc + nm {
            let scale = oracle[idx].abs().max(1e-12);
            assert!(
                (dy[idx] - oracle[idx]).abs() < 1e-9 * scale,
                "component {idx}: {} vs oracle {}",
                dy[idx],
                oracle[idx]
            );
        }
    }

    #[test]
    fn reduced_pump_only_projects_uniform_drive() {
        let model = paper_model();
        let h = Hierarchy::build(&model, 1, 1e-10, None).unwrap();
        let mut sys = ReducedSystem::new(&model, &h, 1).unwrap();
        let y = DVector::zeros(sys.dim());
        let mut dy = DVector::zeros(sys.dim());
        let pump = 5.0e-4;
        sys.rhs(0.0, &y, pump, &mut dy);
        let nc = model.mode_count();
        for i in 0..nc {
            assert_eq!(dy[i], 0.0);
        }
        let mut off = nc;
        for j in 0..=1usize {
            let d = h.bases[j].ncols();
            for r in 0..d {
                assert_relative_eq!(
                    dy[off + r],
                    pump * h.pump_components[j][r],
                    max_relative = 1e-13
                );
            }
            off += d;
        }
    }

    #[test]
    fn steady_state_unpumped_is_empty() {
        let model = paper_model();
        let mut sys = ExactSystem::new(&model);
        let settings = IntegratorSettings::default();
        let opts = SteadyStateOptions { t_max: 1e4, ..Default::default() };
        let (y, info) = steady_state(&mut sys, 0.0, &settings, &opts).unwrap();
        assert!(y.amax() < 1e-12, "unpumped system should empty, got {}", y.amax());
        assert!(info.t_settle < 1e3);
    }

    #[test]
    fn pulse_edges_are_sample_boundaries() {
        let model = paper_model();
        let mut sys = ExactSystem::new(&model);
        let pump = PumpSchedule::Pulsed { p_avg: 1e-4, duty: 0.25, period: 4.0 };
        let settings = IntegratorSettings { sample_interval: 1.7, ..Default::default() };
        let y0 = sys.cold_start(1e-9);
        let (traj, _) = simulate(&mut sys, &pump, 0.0, 9.0, y0, &settings, false).unwrap();
        for edge in [1.0, 4.0, 5.0, 8.0] {
            assert!(
                traj.times.iter().any(|t| *t == edge),
                "edge {edge} missing from samples {:?}",
                traj.times
            );
        }
        // times strictly increasing
        for w in traj.times.windows(2) {
            assert!(w[1] > w[0]);
        }
    }
}
