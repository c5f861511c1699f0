//! Compressible-air snap transitions of a cap on a finite chamber.
//!
//! The chamber air is isothermal, so the pre- and post-snap states share
//! `(P0 + P)(V0 + dV)`. The post-snap state is the first intersection of
//! that isotherm with a rising branch of the cap curve past the onset; the
//! energy released splits exactly into the cap's elastic change and the
//! gauge-pressure work done by the air along the isotherm.

use crate::curves::{CurveError, EnergyCurve, PvCurve};
use crate::num::{lit, to_f64, Real};
use crate::units::Quantity;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// Standard atmosphere, Pa.
pub fn standard_atmosphere<T: Real>() -> T {
    lit(101_300.0)
}

#[derive(Debug, Error)]
pub enum PneumaticsError {
    #[error("no snap onset: {reason}")]
    NoSnapOnset { reason: &'static str },
    #[error("chamber gauge pressure {p} is not at the snap onset pressure {p_c}")]
    ChamberNotAtOnset { p: f64, p_c: f64 },
    #[error("isotherm does not intersect a rising branch past the onset; enlarge the traced curve range")]
    NoIntersection,
    #[error("invalid chamber: {0}")]
    InvalidChamber(&'static str),
    #[error("negative energy release")]
    NegativeEnergy,
    #[error("mass must be positive")]
    NonPositiveMass,
    #[error(transparent)]
    Curve(#[from] CurveError),
}

/// Finite air chamber behind the cap.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ChamberState<T: Real> {
    /// Initial chamber volume V0.
    pub v0: T,
    /// Gauge pressure.
    pub p: T,
    /// Absolute atmospheric pressure P0.
    pub p0: T,
}

impl<T: Real> ChamberState<T> {
    pub fn new(v0: T, p: T, p0: T) -> Result<Self, PneumaticsError> {
        if !(v0 > T::zero()) {
            return Err(PneumaticsError::InvalidChamber("chamber volume must be positive"));
        }
        if !(p0 > T::zero()) {
            return Err(PneumaticsError::InvalidChamber("atmospheric pressure must be positive"));
        }
        if !(p0 + p > T::zero()) {
            return Err(PneumaticsError::InvalidChamber("absolute pressure must be positive"));
        }
        Ok(Self { v0, p, p0 })
    }

    /// Chamber at standard atmosphere pressurized to gauge `p`.
    pub fn at_gauge(v0: T, p: T) -> Result<Self, PneumaticsError> {
        Self::new(v0, p, standard_atmosphere())
    }
}

/// Snap onset: the first interior local pressure maximum along inflation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SnapOnset<T: Real> {
    pub p_c: T,
    pub dv_c: T,
}

/// One snap transition with its energy bookkeeping.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SnapEvent<T: Real> {
    pub p_c: T,
    pub dv_c: T,
    pub p_t: T,
    pub dv_t: T,
    /// Gauge isotherm work released by the air.
    pub de_air: T,
    /// Elastic energy released by the cap (negative means absorbed).
    pub de_cap: T,
    /// Total release: exactly `de_cap + de_air`.
    pub de_total: T,
}

impl<T: Real> SnapEvent<T> {
    pub fn new(p_c: T, dv_c: T, p_t: T, dv_t: T, de_air: T, de_cap: T) -> Self {
        Self {
            p_c,
            dv_c,
            p_t,
            dv_t,
            de_air,
            de_cap,
            de_total: de_cap + de_air,
        }
    }

    /// Relative Boyle residual `(P0+P)(V0+dV)` across the event.
    pub fn boyle_residual(&self, chamber: &ChamberState<T>) -> T {
        let pre = (chamber.p0 + self.p_c) * (chamber.v0 + self.dv_c);
        let post = (chamber.p0 + self.p_t) * (chamber.v0 + self.dv_t);
        ((post - pre) / pre).abs()
    }
}

/// First interior local maximum of the pressure along increasing volume.
pub fn find_snap_onset<T: Real>(cap: &PvCurve<T>) -> Result<SnapOnset<T>, PneumaticsError> {
    let branches = cap.branches();
    let samples = cap.samples();
    let mut saw_rise = false;
    let mut saw_fall = false;
    for (k, b) in branches.iter().enumerate() {
        saw_rise |= b.sign > 0;
        saw_fall |= b.sign < 0;
        if b.sign > 0 {
            // next non-flat branch decides whether this peak is a maximum
            if let Some(next) = branches[k + 1..].iter().find(|n| n.sign != 0) {
                if next.sign < 0 {
                    let idx = b.end_seg;
                    let (dv_c, p_c) = samples[idx];
                    return Ok(SnapOnset { p_c, dv_c });
                }
            }
        }
    }
    if saw_rise && saw_fall {
        Err(PneumaticsError::NoSnapOnset {
            reason: "maximum sits at an end sample; the onset must be interior",
        })
    } else {
        Err(PneumaticsError::NoSnapOnset {
            reason: "monotone curve cannot snap",
        })
    }
}

/// Gauge-pressure isotherm work from `dv_a` to `dv_b` for a chamber whose
/// state at `dv_a` is `(p0 + p_a, v0 + dv_a)`:
/// `(P0+Pa)(V0+dVa) ln((V0+dVb)/(V0+dVa)) - P0 (dVb - dVa)`.
pub fn isotherm_work<T: Real>(chamber: &ChamberState<T>, p_a: T, dv_a: T, dv_b: T) -> T {
    let c = (chamber.p0 + p_a) * (chamber.v0 + dv_a);
    c * ((chamber.v0 + dv_b) / (chamber.v0 + dv_a)).ln() - chamber.p0 * (dv_b - dv_a)
}

/// Post-snap state and energy bookkeeping via Boyle's law, using the cap's
/// own quasi-static work as its energy curve.
pub fn snap_transition<T: Real>(
    cap: &PvCurve<T>,
    chamber: &ChamberState<T>,
) -> Result<SnapEvent<T>, PneumaticsError> {
    let energy = cap.energy_from_pv()?;
    snap_transition_with_energy(cap, &energy, chamber)
}

/// Post-snap state with an explicitly supplied cap energy curve.
pub fn snap_transition_with_energy<T: Real>(
    cap: &PvCurve<T>,
    cap_energy: &EnergyCurve<T>,
    chamber: &ChamberState<T>,
) -> Result<SnapEvent<T>, PneumaticsError> {
    let onset = find_snap_onset(cap)?;
    let tol = lit::<T>(1e-6) * (chamber.p0 + onset.p_c.abs());
    if (chamber.p - onset.p_c).abs() > tol {
        return Err(PneumaticsError::ChamberNotAtOnset {
            p: to_f64(chamber.p),
            p_c: to_f64(onset.p_c),
        });
    }

    let c = (chamber.p0 + onset.p_c) * (chamber.v0 + onset.dv_c);
    let samples = cap.samples();
    let mut landing: Option<(T, T)> = None;
    'branches: for b in cap.branches().iter().filter(|b| b.sign > 0) {
        if samples[b.first_seg].0 < onset.dv_c {
            continue; // the pre-onset rise
        }
        for seg in b.first_seg..b.end_seg {
            let (x0, y0) = samples[seg];
            let (x1, y1) = samples[seg + 1];
            let slope = (y1 - y0) / (x1 - x0);
            let alpha = y0 - slope * x0;
            if let Some(root) = isotherm_segment_root(chamber.p0, chamber.v0, c, alpha, slope, x0, x1)
            {
                if root > onset.dv_c {
                    landing = Some((root, c / (chamber.v0 + root) - chamber.p0));
                    break 'branches;
                }
            }
        }
    }
    let Some((dv_t, p_t)) = landing else {
        return Err(PneumaticsError::NoIntersection);
    };

    let de_air = isotherm_work(chamber, onset.p_c, onset.dv_c, dv_t);
    let de_cap = cap_energy.energy_at(onset.dv_c)? - cap_energy.energy_at(dv_t)?;
    Ok(SnapEvent::new(onset.p_c, onset.dv_c, p_t, dv_t, de_air, de_cap))
}

/// Smallest root of `(alpha + slope x + p0)(v0 + x) = c` inside `[x0, x1]`.
fn isotherm_segment_root<T: Real>(
    p0: T,
    v0: T,
    c: T,
    alpha: T,
    slope: T,
    x0: T,
    x1: T,
) -> Option<T> {
    let a = slope;
    let b = alpha + p0 + slope * v0;
    let d = (alpha + p0) * v0 - c;
    let tol = (x1 - x0) * lit::<T>(1e-14);
    let mut roots: Vec<T> = Vec::with_capacity(2);
    if a == T::zero() {
        if b != T::zero() {
            roots.push(-d / b);
        }
    } else {
        let disc = b * b - lit::<T>(4.0) * a * d;
        if disc < T::zero() {
            return None;
        }
        let sq = disc.sqrt();
        // numerically stable pair
        let q = if b >= T::zero() {
            -(b + sq) * lit::<T>(0.5)
        } else {
            (-b + sq) * lit::<T>(0.5)
        };
        roots.push(q / a);
        if q != T::zero() {
            roots.push(d / q);
        }
    }
    roots
        .into_iter()
        .filter(|&x| x >= x0 - tol && x <= x1 + tol)
        .map(|x| x.max(x0).min(x1))
        .fold(None, |acc: Option<T>, x| match acc {
            Some(best) if best <= x => Some(best),
            _ => Some(x),
        })
}

/// One row of a chamber-volume sweep.
#[derive(Clone, Debug)]
pub struct SweepRow<T: Real> {
    pub v0: T,
    pub outcome: Result<SnapEvent<T>, String>,
}

/// One snap transition per initial chamber volume, sorted by volume.
/// Row failures are recorded and the sweep continues.
pub fn sweep_v0<T: Real>(
    cap: &PvCurve<T>,
    cap_energy: &EnergyCurve<T>,
    v0_list: &[T],
    p0: T,
) -> Vec<SweepRow<T>> {
    let mut volumes: Vec<T> = v0_list.to_vec();
    volumes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let onset = find_snap_onset(cap);
    volumes
        .into_iter()
        .map(|v0| {
            let outcome = match &onset {
                Err(e) => Err(e.to_string()),
                Ok(onset) => ChamberState::new(v0, onset.p_c, p0)
                    .and_then(|chamber| snap_transition_with_energy(cap, cap_energy, &chamber))
                    .map_err(|e| e.to_string()),
            };
            SweepRow { v0, outcome }
        })
        .collect()
}

/// Write a sweep as CSV with `(v0, de_air, de_cap, de_total, p_c, dv_c,
/// p_t, dv_t)` columns; failed rows carry the error in a trailing column.
pub fn write_sweep_csv<T: Real>(
    rows: &[SweepRow<T>],
    path: &Path,
    volume_unit: &str,
    pressure_unit: &str,
    energy_unit: &str,
) -> Result<(), CurveError> {
    let vf = Quantity::Volume.factor_of(volume_unit).ok_or(CurveError::Malformed {
        line: 0,
        what: format!("unknown volume unit {volume_unit:?}"),
    })?;
    let pf = Quantity::Pressure.factor_of(pressure_unit).ok_or(CurveError::Malformed {
        line: 0,
        what: format!("unknown pressure unit {pressure_unit:?}"),
    })?;
    let ef = Quantity::Energy.factor_of(energy_unit).ok_or(CurveError::Malformed {
        line: 0,
        what: format!("unknown energy unit {energy_unit:?}"),
    })?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        w,
        "v0_{volume_unit},de_air_{energy_unit},de_cap_{energy_unit},de_total_{energy_unit},p_c_{pressure_unit},dv_c_{volume_unit},p_t_{pressure_unit},dv_t_{volume_unit},error"
    )?;
    for row in rows {
        match &row.outcome {
            Ok(e) => writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},",
                to_f64(row.v0) / vf,
                to_f64(e.de_air) / ef,
                to_f64(e.de_cap) / ef,
                to_f64(e.de_total) / ef,
                to_f64(e.p_c) / pf,
                to_f64(e.dv_c) / vf,
                to_f64(e.p_t) / pf,
                to_f64(e.dv_t) / vf,
            )?,
            Err(msg) => writeln!(
                w,
                "{:.16e},,,,,,,,{}",
                to_f64(row.v0) / vf,
                msg.replace(',', ";")
            )?,
        }
    }
    Ok(())
}

/// Kinetic upper bound on the actuation speed: all of the released energy
/// into a rigid effective mass, `v = sqrt(2 dE / m)`. Dissipation is
/// ignored, so measured speeds sit below this.
pub fn speed_proxy<T: Real>(de_total: T, m_eff: T) -> Result<T, PneumaticsError> {
    if de_total < T::zero() {
        return Err(PneumaticsError::NegativeEnergy);
    }
    if !(m_eff > T::zero()) {
        return Err(PneumaticsError::NonPositiveMass);
    }
    Ok((lit::<T>(2.0) * de_total / m_eff).sqrt())
}

/// A documented synthetic bistable cap curve in the published design's
/// volume and pressure range: a steep drop just past the onset, a shallow
/// negative valley, and a long rising everted branch. Units are SI.
pub fn fixture_bistable_curve<T: Real>() -> (PvCurve<T>, EnergyCurve<T>) {
    // (mL, kPa) control points
    let pts = [
        (0.0, 0.0),
        (1.5, 14.0),
        (3.0, 24.0),
        (4.0, 30.0),
        (4.5, -8.0),
        (5.5, -8.0),
        (6.8333333333333333, 0.0),
        (10.0, 19.0),
        (15.0, 49.0),
        (20.0, 79.0),
        (30.0, 139.0),
    ];
    let samples: Vec<(T, T)> = pts
        .iter()
        .map(|&(v, p)| (lit::<T>(v * 1e-6), lit::<T>(p * 1e3)))
        .collect();
    let pv = PvCurve::new(samples, crate::curves::Direction::Inflation).unwrap();
    let energy = pv.energy_from_pv().unwrap();
    (pv, energy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curves::Direction;
    use crate::truss::{TrussOracle, TrussParams};
    use approx::assert_relative_eq;

    #[test]
    fn reported_component_sums_add_exactly() {
        // arithmetic fixtures for the two published operating points
        let a = SnapEvent::<f64>::new(0.0, 0.0, 0.0, 0.0, 97.6e-3, 19.3e-3);
        assert_relative_eq!(a.de_total, 116.9e-3, max_relative = 1e-12);
        let b = SnapEvent::<f64>::new(0.0, 0.0, 0.0, 0.0, 370.2e-3, -10.3e-3);
        assert_relative_eq!(b.de_total, 359.9e-3, max_relative = 1e-12);
    }

    #[test]
    fn monotone_curve_has_no_onset() {
        let cap = PvCurve::<f64>::new(
            vec![(0.0, 0.0), (1.0, 1.0), (2.0, 3.0)],
            Direction::Inflation,
        )
        .unwrap();
        match find_snap_onset(&cap) {
            Err(PneumaticsError::NoSnapOnset { reason }) => {
                assert!(reason.contains("monotone"))
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn maximum_at_last_sample_is_rejected() {
        // dips first, then rises to its global maximum at the end
        let cap = PvCurve::<f64>::new(
            vec![(0.0, 1.0), (1.0, 0.0), (2.0, 3.0)],
            Direction::Inflation,
        )
        .unwrap();
        match find_snap_onset(&cap) {
            Err(PneumaticsError::NoSnapOnset { reason }) => {
                assert!(reason.contains("interior"))
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn truss_onset_matches_the_analytic_limit_point() {
        let oracle = TrussOracle::new(TrussParams::<f64>::bistable_example());
        let onset = find_snap_onset(&oracle.pv_curve(10_000)).unwrap();
        let exact = oracle.limit_points()[0];
        assert_relative_eq!(onset.dv_c, exact.0, max_relative = 1e-9);
        assert_relative_eq!(onset.p_c, exact.1, max_relative = 1e-9);
    }

    #[test]
    fn doubled_volume_zeroes_the_gauge_pressure() {
        // chamber pressurized to one atmosphere gauge; doubling the total
        // volume halves the absolute pressure to ambient
        let p0 = 101.3e3;
        let cap = PvCurve::<f64>::new(
            vec![
                (0.0, 0.0),
                (20e-6, p0),
                (30e-6, -50e3),
                (250e-6, 50e3),
            ],
            Direction::Inflation,
        )
        .unwrap();
        let chamber = ChamberState::new(100e-6, p0, p0).unwrap();
        let event = snap_transition(&cap, &chamber).unwrap();
        assert_relative_eq!(event.dv_t, 140e-6, max_relative = 1e-9);
        assert!(event.p_t.abs() < 1e-6 * p0);
        assert!(event.boyle_residual(&chamber) < 1e-12);
    }

    #[test]
    fn isotherm_work_closed_form_matches_quadrature() {
        let p0 = 101.3e3;
        let chamber = ChamberState::new(100e-6, p0, p0).unwrap();
        let (dv_a, dv_b) = (0.0, 100e-6);
        let closed = isotherm_work(&chamber, chamber.p, dv_a, dv_b);
        // doubling the total volume: C ln 2 - P0 * V0
        let expected = (2.0 * p0) * 100e-6 * std::f64::consts::LN_2 - p0 * 100e-6;
        assert_relative_eq!(closed, expected, max_relative = 1e-12);
        // adaptive Simpson quadrature of the gauge isotherm
        let c = (chamber.p0 + chamber.p) * (chamber.v0 + dv_a);
        let f = |x: f64| c / (chamber.v0 + x) - chamber.p0;
        let quad = simpson_adaptive(&f, dv_a, dv_b, 1e-16, 40);
        assert_relative_eq!(closed, quad, max_relative = 1e-9);
    }

    fn simpson_adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
            let m = 0.5 * (a + b);
            (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b))
        }
        fn rec(
            f: &impl Fn(f64) -> f64,
            a: f64,
            b: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let left = simpson(f, a, m);
            let right = simpson(f, m, b);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                rec(f, a, m, left, tol / 2.0, depth - 1)
                    + rec(f, m, b, right, tol / 2.0, depth - 1)
            }
        }
        rec(f, a, b, simpson(f, a, b), tol, depth)
    }

    #[test]
    fn fixture_snap_releases_then_absorbs_cap_energy() {
        let (cap, energy) = fixture_bistable_curve::<f64>();
        let onset = find_snap_onset(&cap).unwrap();
        assert_relative_eq!(onset.p_c, 30e3);
        assert_relative_eq!(onset.dv_c, 4e-6);

        let small = ChamberState::at_gauge(10e-6, onset.p_c).unwrap();
        let ev_small = snap_transition_with_energy(&cap, &energy, &small).unwrap();
        assert!(ev_small.de_cap > 0.0, "small chamber releases cap energy");
        assert!(ev_small.boyle_residual(&small) < 1e-9);
        // the landing sits on the cap curve
        let on_curve = cap.pressure_at(ev_small.dv_t).unwrap();
        assert!((ev_small.p_t - on_curve).abs() <= 1e-9 * 139e3);

        let large = ChamberState::at_gauge(90e-6, onset.p_c).unwrap();
        let ev_large = snap_transition_with_energy(&cap, &energy, &large).unwrap();
        assert!(ev_large.de_cap < 0.0, "large chamber stores cap energy");
        assert!(ev_large.de_total > ev_small.de_total);
    }

    #[test]
    fn near_incompressible_limit_lands_at_constant_pressure() {
        let (cap, energy) = fixture_bistable_curve::<f64>();
        let onset = find_snap_onset(&cap).unwrap();
        let chamber = ChamberState::at_gauge(1.0, onset.p_c).unwrap(); // 1e6 mL
        let event = snap_transition_with_energy(&cap, &energy, &chamber).unwrap();
        // independent root: P(dv) = p_c on the far branch by bisection
        let f = |dv: f64| cap.pressure_at(dv).unwrap() - onset.p_c;
        let (mut lo, mut hi) = (6.9e-6, 30e-6);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let expected = 0.5 * (lo + hi);
        assert_relative_eq!(event.dv_t, expected, max_relative = 1e-4);
    }

    #[test]
    fn sweep_is_monotone_and_flips_cap_sign() {
        let (cap, energy) = fixture_bistable_curve::<f64>();
        let volumes: Vec<f64> = (1..=9).map(|k| k as f64 * 10e-6).collect();
        let rows = sweep_v0(&cap, &energy, &volumes, 101.3e3);
        assert_eq!(rows.len(), 9);
        let events: Vec<&SnapEvent<f64>> = rows
            .iter()
            .map(|r| r.outcome.as_ref().expect("all rows solve"))
            .collect();
        for w in events.windows(2) {
            assert!(w[1].de_total > w[0].de_total, "total release must grow with volume");
        }
        assert!(events.first().unwrap().de_cap > 0.0);
        assert!(events.last().unwrap().de_cap < 0.0);
    }

    #[test]
    fn single_entry_sweep_equals_snap_transition() {
        let (cap, energy) = fixture_bistable_curve::<f64>();
        let onset = find_snap_onset(&cap).unwrap();
        let rows = sweep_v0(&cap, &energy, &[50e-6], 101.3e3);
        let from_sweep = rows[0].outcome.as_ref().unwrap();
        let chamber = ChamberState::at_gauge(50e-6, onset.p_c).unwrap();
        let direct = snap_transition_with_energy(&cap, &energy, &chamber).unwrap();
        assert_eq!(from_sweep.dv_t, direct.dv_t);
        assert_eq!(from_sweep.de_total, direct.de_total);
    }

    #[test]
    fn sweep_records_row_errors_and_continues() {
        let (cap, energy) = fixture_bistable_curve::<f64>();
        let rows = sweep_v0(&cap, &energy, &[-1e-6, 10e-6], 101.3e3);
        assert!(rows[0].outcome.is_err());
        assert!(rows[1].outcome.is_ok());
    }

    #[test]
    fn chamber_must_sit_at_the_onset_pressure() {
        let (cap, energy) = fixture_bistable_curve::<f64>();
        let chamber = ChamberState::at_gauge(10e-6, 10e3).unwrap();
        assert!(matches!(
            snap_transition_with_energy(&cap, &energy, &chamber),
            Err(PneumaticsError::ChamberNotAtOnset { .. })
        ));
    }

    #[test]
    fn speed_proxy_closed_form() {
        assert_eq!(speed_proxy(0.0, 0.01).unwrap(), 0.0);
        let v = speed_proxy(0.5, 0.01).unwrap();
        assert_relative_eq!(v, 10.0);
        assert!(matches!(
            speed_proxy(-1.0, 1.0),
            Err(PneumaticsError::NegativeEnergy)
        ));
        // the sweep's monotone release maps to a monotone speed
        let (cap, energy) = fixture_bistable_curve::<f64>();
        let rows = sweep_v0(&cap, &energy, &[10e-6, 50e-6, 90e-6], 101.3e3);
        let speeds: Vec<f64> = rows
            .iter()
            .map(|r| speed_proxy(r.outcome.as_ref().unwrap().de_total, 0.01).unwrap())
            .collect();
        assert!(speeds[0] < speeds[1] && speeds[1] < speeds[2]);
    }
}
