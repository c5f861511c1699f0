//! Threshold-hysteresis relaxation oscillator on chamber pressure.
//!
//! A monostable cap over an aperture behaves as a two-state valve: sealed
//! until the chamber reaches the snap-open pressure, open until the pressure
//! falls to the reseal threshold. With a constant supply the chamber cycles:
//! a slow linear fill (isothermal mass balance at fixed chamber volume) and
//! a fast vent through a linear conductance. Both phases have closed forms,
//! which the integrator is validated against.

use crate::num::{lit, to_f64, Real};
use crate::units::Quantity;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ValveError {
    #[error("invalid valve config: {0}")]
    InvalidConfig(&'static str),
    #[error("duration and dt must be positive")]
    BadTimeStep,
    #[error("trace holds {cycles} complete cycles; at least 3 are needed")]
    TooFewCycles { cycles: usize },
    #[error("pressure became non-finite at t = {t}")]
    NumericalFailure { t: f64 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Oscillating-valve parameters. All pressures are gauge except `p0`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ValveConfig<T: Real> {
    /// Chamber volume (fixed; cap compliance is neglected).
    pub v_chamber: T,
    /// Snap-open threshold.
    pub p_open: T,
    /// Reseal threshold.
    pub p_close: T,
    /// Gauge supply pressure.
    pub p_supply: T,
    /// Volumetric inflow rate, referenced at supply conditions.
    pub q_in: T,
    /// Linear vent model: outflow volumetric rate = conductance * gauge p.
    pub vent_conductance: T,
    /// Absolute atmospheric pressure.
    pub p0: T,
}

impl<T: Real> ValveConfig<T> {
    pub fn validate(&self) -> Result<(), ValveError> {
        if !(self.p_close > T::zero() && self.p_close < self.p_open) {
            return Err(ValveError::InvalidConfig("need 0 < p_close < p_open"));
        }
        if !(self.p_open < self.p_supply) {
            return Err(ValveError::InvalidConfig("need p_open < p_supply"));
        }
        if !(self.v_chamber > T::zero()) {
            return Err(ValveError::InvalidConfig("chamber volume must be positive"));
        }
        if !(self.vent_conductance > T::zero()) {
            return Err(ValveError::InvalidConfig("vent conductance must be positive"));
        }
        if self.q_in < T::zero() {
            return Err(ValveError::InvalidConfig("inflow rate must be nonnegative"));
        }
        if !(self.p0 > T::zero()) {
            return Err(ValveError::InvalidConfig("atmospheric pressure must be positive"));
        }
        Ok(())
    }

    /// Molar-balance inflow term `(p0 + p_supply) q_in`.
    fn inflow(&self) -> T {
        (self.p0 + self.p_supply) * self.q_in
    }

    /// Gauge pressure the open chamber decays toward (vent equals inflow).
    pub fn vent_equilibrium(&self) -> T {
        let cv = self.vent_conductance;
        let a = self.inflow();
        // positive root of cv p^2 + cv p0 p - a = 0
        let disc = cv * cv * self.p0 * self.p0 + lit::<T>(4.0) * cv * a;
        (-cv * self.p0 + disc.sqrt()) / (lit::<T>(2.0) * cv)
    }

    /// Oscillation feasibility from the closed-form balance.
    pub fn condition(&self) -> ValveCondition {
        if self.q_in <= T::zero() {
            return ValveCondition::SaturatesBelowOpen;
        }
        if self.vent_equilibrium() >= self.p_close {
            return ValveCondition::SaturatesAboveClose;
        }
        ValveCondition::Oscillating
    }
}

/// Named non-exception outcome of a valve run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValveCondition {
    Oscillating,
    /// Pressure never reaches the open threshold (no inflow).
    SaturatesBelowOpen,
    /// Vent cannot pull the open chamber below the reseal threshold.
    SaturatesAboveClose,
}

impl std::fmt::Display for ValveCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ValveCondition::Oscillating => write!(f, "oscillating"),
            ValveCondition::SaturatesBelowOpen => write!(f, "saturates-below-open"),
            ValveCondition::SaturatesAboveClose => write!(f, "saturates-above-close"),
        }
    }
}

/// Simulated pressure history with the valve state per sample.
#[derive(Clone, Debug)]
pub struct ValveTrace<T: Real> {
    /// `(t, gauge pressure, open)` per accepted step and threshold crossing.
    pub samples: Vec<(T, T, bool)>,
    /// Times of close-to-open transitions: the cycle boundaries.
    pub open_transitions: Vec<T>,
    /// Times of open-to-close transitions.
    pub close_transitions: Vec<T>,
    pub condition: ValveCondition,
}

/// Integrate the isothermal mass balance
/// `d[(p0+p) V]/dt = (p0+p_supply) q_in - open * C_v p (p0+p)`
/// with hysteresis switching: open at `p >= p_open` while closed, close at
/// `p <= p_close` while open. Crossing times are located by bisection on
/// the step to a relative time error below 1e-9 and the state is snapped
/// onto the threshold there.
pub fn simulate<T: Real>(
    config: &ValveConfig<T>,
    duration: T,
    dt: T,
) -> Result<ValveTrace<T>, ValveError> {
    config.validate()?;
    if !(duration > T::zero()) || !(dt > T::zero()) {
        return Err(ValveError::BadTimeStep);
    }
    let condition = config.condition();
    let deriv = |p: T, open: bool| -> T {
        let mut flow = config.inflow();
        if open {
            flow -= config.vent_conductance * p * (config.p0 + p);
        }
        flow / config.v_chamber
    };
    let rk4 = |p: T, open: bool, h: T| -> T {
        let half = lit::<T>(0.5);
        let sixth = lit::<T>(1.0 / 6.0);
        let k1 = deriv(p, open);
        let k2 = deriv(p + half * h * k1, open);
        let k3 = deriv(p + half * h * k2, open);
        let k4 = deriv(p + h * k3, open);
        p + h * sixth * (k1 + lit::<T>(2.0) * (k2 + k3) + k4)
    };

    let mut t = T::zero();
    let mut p = T::zero();
    let mut open = false;
    let mut samples = vec![(t, p, open)];
    let mut open_transitions = Vec::new();
    let mut close_transitions = Vec::new();

    while t < duration {
        let h = dt.min(duration - t);
        let p_next = rk4(p, open, h);
        if !p_next.is_finite() {
            return Err(ValveError::NumericalFailure { t: to_f64(t) });
        }
        let crossed = if open {
            p_next <= config.p_close
        } else {
            p_next >= config.p_open
        };
        if !crossed {
            t += h;
            p = p_next;
            samples.push((t, p, open));
            continue;
        }
        // bisect the step length until the crossing time is pinned
        let threshold = if open { config.p_close } else { config.p_open };
        let mut lo = T::zero();
        let mut hi = h;
        let t_tol = lit::<T>(1e-9) * if t > dt { t } else { dt };
        while hi - lo > t_tol {
            let mid = (lo + hi) * lit::<T>(0.5);
            let pm = rk4(p, open, mid);
            let reached = if open { pm <= threshold } else { pm >= threshold };
            if reached {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        t += hi;
        p = threshold; // snap exactly onto the threshold
        open = !open;
        if open {
            open_transitions.push(t);
        } else {
            close_transitions.push(t);
        }
        samples.push((t, p, open));
    }

    Ok(ValveTrace {
        samples,
        open_transitions,
        close_transitions,
        condition,
    })
}

/// Mean reciprocal cycle duration, cycle boundaries at open transitions.
pub fn frequency<T: Real>(trace: &ValveTrace<T>) -> Result<T, ValveError> {
    let b = &trace.open_transitions;
    let cycles = b.len().saturating_sub(1);
    if cycles < 3 {
        return Err(ValveError::TooFewCycles { cycles });
    }
    let mut sum = T::zero();
    for w in b.windows(2) {
        sum += T::one() / (w[1] - w[0]);
    }
    Ok(sum / lit::<T>(cycles as f64))
}

/// Closed-form steady-cycle phase durations `(t_fill, t_vent)` of the
/// linear model, available when the configuration oscillates.
///
/// The fill is linear in time; the vent integral resolves by partial
/// fractions over the roots of `C_v p (p0 + p) = (p0 + p_supply) q_in`.
pub fn analytic_period<T: Real>(config: &ValveConfig<T>) -> Option<(T, T)> {
    if config.condition() != ValveCondition::Oscillating {
        return None;
    }
    let a = config.inflow();
    let v = config.v_chamber;
    let t_fill = v * (config.p_open - config.p_close) / a;

    let cv = config.vent_conductance;
    let p0 = config.p0;
    // roots of cv p^2 + cv p0 p - a
    let disc = (cv * p0) * (cv * p0) + lit::<T>(4.0) * cv * a;
    let sq = disc.sqrt();
    let two_cv = lit::<T>(2.0) * cv;
    let r1 = (-cv * p0 + sq) / two_cv;
    let r2 = (-cv * p0 - sq) / two_cv;
    // t_vent = V / (cv (r1 - r2)) * [ln((p - r1)/(p - r2))] from open to close
    let g = |p: T| ((p - r1) / (p - r2)).ln();
    let t_vent = v / (cv * (r1 - r2)) * (g(config.p_open) - g(config.p_close));
    Some((t_fill, t_vent))
}

/// One row of a flow-rate sweep.
#[derive(Clone, Debug)]
pub enum SweepOutcome<T: Real> {
    Frequency(T),
    Condition(ValveCondition),
    Error(String),
}

/// Simulate and measure one frequency per inflow rate. Non-oscillating
/// entries carry their named condition; rows run in parallel.
pub fn frequency_sweep<T: Real>(
    config: &ValveConfig<T>,
    q_list: &[T],
    duration: T,
    dt: T,
) -> Vec<(T, SweepOutcome<T>)> {
    q_list
        .par_iter()
        .map(|&q| {
            let mut c = *config;
            c.q_in = q;
            let outcome = match c.condition() {
                ValveCondition::Oscillating => match simulate(&c, duration, dt) {
                    Ok(trace) => match frequency(&trace) {
                        Ok(f) => SweepOutcome::Frequency(f),
                        Err(e) => SweepOutcome::Error(e.to_string()),
                    },
                    Err(e) => SweepOutcome::Error(e.to_string()),
                },
                other => SweepOutcome::Condition(other),
            };
            (q, outcome)
        })
        .collect()
}

/// Trace CSV: `(t, p, open)` with units in the header.
pub fn write_trace_csv<T: Real>(
    trace: &ValveTrace<T>,
    path: &Path,
    time_unit: &str,
    pressure_unit: &str,
) -> Result<(), ValveError> {
    let tf = Quantity::Time.factor_of(time_unit).ok_or(ValveError::InvalidConfig("unknown time unit"))?;
    let pf = Quantity::Pressure
        .factor_of(pressure_unit)
        .ok_or(ValveError::InvalidConfig("unknown pressure unit"))?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "t_{time_unit},p_{pressure_unit},open")?;
    for &(t, p, open) in &trace.samples {
        writeln!(
            w,
            "{:.16e},{:.16e},{}",
            to_f64(t) / tf,
            to_f64(p) / pf,
            open as u8
        )?;
    }
    Ok(())
}

/// Sweep CSV: `(q_in, frequency, condition)` with units in the header.
pub fn write_sweep_csv<T: Real>(
    rows: &[(T, SweepOutcome<T>)],
    path: &Path,
    flow_unit: &str,
) -> Result<(), ValveError> {
    let qf = Quantity::FlowRate
        .factor_of(flow_unit)
        .ok_or(ValveError::InvalidConfig("unknown flow unit"))?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "q_in_{flow_unit},frequency_Hz,condition")?;
    for (q, outcome) in rows {
        let q = to_f64(*q) / qf;
        match outcome {
            SweepOutcome::Frequency(f) => writeln!(w, "{q:.16e},{:.16e},oscillating", to_f64(*f))?,
            SweepOutcome::Condition(c) => writeln!(w, "{q:.16e},,{c}")?,
            SweepOutcome::Error(msg) => writeln!(w, "{q:.16e},,error: {}", msg.replace(',', ";"))?,
        }
    }
    Ok(())
}

/// Calibration used for the documented frequency-span demonstration:
/// a 100 mL chamber at 50 kPa supply, 20 kPa open and 3.5 kPa reseal
/// thresholds, and a vent conductance fitted so the frequency runs from
/// 0.22 Hz to 2.11 Hz over a factor-10 inflow range.
pub fn reference_calibration<T: Real>() -> (ValveConfig<T>, T, T) {
    let config = ValveConfig {
        v_chamber: lit(100e-6),
        p_open: lit(20e3),
        p_close: lit(3.5e3),
        p_supply: lit(50e3),
        q_in: lit(2.4107e-6),
        vent_conductance: lit(7.297e-8),
        p0: lit(101.3e3),
    };
    (config, lit(2.4107e-6), lit(2.4107e-5))
}
