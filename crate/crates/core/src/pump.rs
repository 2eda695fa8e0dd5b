//! Time-dependent pump power P(t).

use crate::config::PumpConfig;
use crate::error::{Error, Result};

/// Pump protocol in κ units. Pulsed pumping delivers the peak power
/// P_avg/duty during the first duty·period of each period and nothing
/// otherwise, so the period-averaged power is exactly P_avg.
#[derive(Debug, Clone, PartialEq)]
pub enum PumpSchedule {
    Constant { power: f64 },
    Quench { p_initial: f64, p_final: f64, t_switch: f64 },
    Pulsed { p_avg: f64, duty: f64, period: f64 },
}

impl PumpSchedule {
    pub fn constant(power: f64) -> Self {
        PumpSchedule::Constant { power }
    }

    pub fn from_config(cfg: &PumpConfig) -> Result<Self> {
        let schedule = match *cfg {
            PumpConfig::Constant { power } => PumpSchedule::Constant { power },
            PumpConfig::Quench { p_initial, p_final, t_switch } => {
                PumpSchedule::Quench { p_initial, p_final, t_switch }
            }
            PumpConfig::Pulsed { p_avg, duty, period } => {
                PumpSchedule::Pulsed { p_avg, duty, period }
            }
        };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PumpSchedule::Constant { power } => {
                if power < 0.0 || !power.is_finite() {
                    return Err(Error::config("pump power must be finite and >= 0"));
                }
            }
            PumpSchedule::Quench { p_initial, p_final, .. } => {
                if p_initial < 0.0 || p_final < 0.0 {
                    return Err(Error::config("pump powers must be >= 0"));
                }
            }
            PumpSchedule::Pulsed { p_avg, duty, period } => {
                if p_avg < 0.0 {
                    return Err(Error::config("average pump power must be >= 0"));
                }
                if !(duty > 0.0 && duty <= 1.0) {
                    return Err(Error::config("duty cycle must lie in (0, 1]"));
                }
                if period <= 0.0 {
                    return Err(Error::config("pulse period must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Instantaneous pump power. Pulse intervals are half-open [mT, mT+dT).
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            PumpSchedule::Constant { power } => power,
            PumpSchedule::Quench { p_initial, p_final, t_switch } => {
                if t < t_switch {
                    p_initial
                } else {
                    p_final
                }
            }
            PumpSchedule::Pulsed { p_avg, duty, period } => {
                if duty >= 1.0 {
                    return p_avg;
                }
                let phase = t.rem_euclid(period);
                if phase < duty * period {
                    p_avg / duty
                } else {
                    0.0
                }
            }
        }
    }

    /// Discontinuity times strictly inside (t0, t1), ascending. Integration
    /// restarts at each of these so no step straddles a pump switch.
    pub fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        let mut out = Vec::new();
        match *self {
            PumpSchedule::Constant { .. } => {}
            PumpSchedule::Quench { t_switch, .. } => {
                if t_switch > t0 && t_switch < t1 {
                    out.push(t_switch);
                }
            }
            PumpSchedule::Pulsed { duty, period, .. } => {
                if duty >= 1.0 {
                    return out;
                }
                let mut m = (t0 / period).floor();
                loop {
                    let rise = m * period;
                    let fall = rise + duty * period;
                    if rise >= t1 && fall >= t1 {
                        break;
                    }
                    if rise > t0 && rise < t1 {
                        out.push(rise);
                    }
                    if fall > t0 && fall < t1 {
                        out.push(fall);
                    }
                    m += 1.0;
                    if m * period > t1 {
                        break;
                    }
                }
                out.sort_by(|a, b| a.partial_cmp(b).unwrap());
                out.dedup();
            }
        }
        out
    }

    /// Power delivered per period; pulse bookkeeping gives exactly P_avg·T.
    pub fn energy_per_period(&self) -> Option<f64> {
        match *self {
            PumpSchedule::Pulsed { p_avg, duty, period } => {
                Some(p_avg / duty * (duty * period))
            }
            _ => None,
        }
    }

    /// Reference power for choosing an initial condition: the pre-switch
    /// power for a quench, the constant power itself, 0 for pulsed (pulsed
    /// runs start cold and use warmup periods).
    pub fn initial_reference_power(&self) -> f64 {
        match *self {
            PumpSchedule::Constant { power } => power,
            PumpSchedule::Quench { p_initial, .. } => p_initial,
            PumpSchedule::Pulsed { .. } => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pulse_values_and_edges() {
        let p = PumpSchedule::Pulsed { p_avg: 0.01, duty: 0.25, period: 4.0 };
        assert_eq!(p.value(0.0), 0.04);
        assert_eq!(p.value(0.999), 0.04);
        assert_eq!(p.value(1.0), 0.0); // half-open interval
        assert_eq!(p.value(3.999), 0.0);
        assert_eq!(p.value(4.0), 0.04);
        let bks = p.breakpoints(0.0, 8.0);
        assert_eq!(bks, vec![1.0, 4.0, 5.0]);
    }

    #[test]
    fn full_duty_degenerates_to_constant() {
        let p = PumpSchedule::Pulsed { p_avg: 3e-4, duty: 1.0, period: 40.0 };
        for &t in &[0.0, 17.3, 40.0, 119.9] {
            assert_eq!(p.value(t), 3e-4);
        }
        assert!(p.breakpoints(0.0, 200.0).is_empty());
    }

    #[test]
    fn quench_switch() {
        let p = PumpSchedule::Quench { p_initial: 1.0, p_final: 2.0, t_switch: 5.0 };
        assert_eq!(p.value(4.999), 1.0);
        assert_eq!(p.value(5.0), 2.0);
        assert_eq!(p.breakpoints(0.0, 10.0), vec![5.0]);
        assert!(p.breakpoints(6.0, 10.0).is_empty());
    }

    proptest! {
        // time-integrated pump power per period equals P_avg·T
        #[test]
        fn pulse_energy_bookkeeping(
            p_avg in 1e-6f64..1e-2,
            duty in 0.001f64..1.0,
            period in 0.1f64..100.0,
        ) {
            let p = PumpSchedule::Pulsed { p_avg, duty, period };
            let energy = p.energy_per_period().unwrap();
            let expected = p_avg * period;
            prop_assert!((energy - expected).abs() <= 1e-10 * expected);
        }

        #[test]
        fn pulse_value_is_peak_or_zero(
            p_avg in 1e-6f64..1e-2,
            duty in 0.001f64..0.999,
            period in 0.1f64..100.0,
            t in 0.0f64..500.0,
        ) {
            let p = PumpSchedule::Pulsed { p_avg, duty, period };
            let v = p.value(t);
            let peak = p_avg / duty;
            prop_assert!(v == 0.0 || (v - peak).abs() < 1e-12 * peak);
        }
    }
}
