//! Cap and bending actuator sharing one pressure and one injected volume.
//!
//! The connecting channel air is treated as incompressible: the injected
//! volume splits exactly between the two components while their pressures
//! equalize. The compressible-chamber case lives in the pneumatics module.

use crate::continuation::{landscape, Classification, LandscapeCell, LandscapeOptions};
use crate::curves::{CurveError, PvCurve};
use crate::geometry::{Material, MetacapGeometry};
use crate::num::{lit, to_f64, Real};
use crate::pneumatics::{find_snap_onset, PneumaticsError};
use crate::units::Quantity;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoupledError {
    #[error(transparent)]
    Pneumatics(#[from] PneumaticsError),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error("actuator law must be strictly increasing")]
    NonMonotoneActuator,
    #[error("actuator parameters must satisfy k1 > 0, k3 >= 0")]
    BadActuatorParams,
    #[error("pressure {0} outside the actuator curve range")]
    ActuatorOutOfRange(f64),
    #[error("no coupled solution at total volume {dv_total}")]
    NoSolution { dv_total: f64 },
    #[error("no coupled solution on cap branch {branch}")]
    NoSolutionOnBranch { branch: usize },
    #[error("{count} coupled solutions across cap branches; pass a branch hint")]
    AmbiguousBranch { count: usize },
    #[error("no post-snap coupled state: the actuator is too stiff to absorb the jump")]
    NoPostSnapState,
}

/// Monotone pressure–volume law of the bending actuator.
#[derive(Clone, Debug)]
pub enum ActuatorModel<T: Real> {
    /// An imported curve; must be strictly increasing in pressure.
    Curve(PvCurve<T>),
    /// Stiffening parametric law `p = k1 dv + k3 dv^3`.
    Cubic { k1: T, k3: T },
}

impl<T: Real> ActuatorModel<T> {
    pub fn from_curve(curve: PvCurve<T>) -> Result<Self, CoupledError> {
        let monotone = curve
            .samples()
            .windows(2)
            .all(|w| w[1].1 > w[0].1);
        if !monotone {
            return Err(CoupledError::NonMonotoneActuator);
        }
        Ok(Self::Curve(curve))
    }

    pub fn cubic(k1: T, k3: T) -> Result<Self, CoupledError> {
        if !(k1 > T::zero()) || k3 < T::zero() {
            return Err(CoupledError::BadActuatorParams);
        }
        Ok(Self::Cubic { k1, k3 })
    }

    pub fn pressure_at(&self, dv: T) -> Result<T, CoupledError> {
        match self {
            Self::Curve(c) => Ok(c.pressure_at(dv)?),
            Self::Cubic { k1, k3 } => Ok(*k1 * dv + *k3 * dv * dv * dv),
        }
    }

    /// Unique volume at which the actuator carries pressure `p`.
    pub fn inverse(&self, p: T) -> Result<T, CoupledError> {
        match self {
            Self::Curve(c) => {
                let s = c.samples();
                let (p_lo, p_hi) = (s[0].1, s[s.len() - 1].1);
                if p < p_lo || p > p_hi {
                    return Err(CoupledError::ActuatorOutOfRange(to_f64(p)));
                }
                let idx = s.partition_point(|&(_, pi)| pi < p).min(s.len() - 1);
                let i = idx.saturating_sub(1);
                let (x0, y0) = s[i];
                let (x1, y1) = s[i + 1];
                if p == y0 {
                    return Ok(x0);
                }
                Ok(x0 + (p - y0) / (y1 - y0) * (x1 - x0))
            }
            Self::Cubic { k1, k3 } => {
                // strictly monotone cubic: safeguarded Newton
                let k1 = *k1;
                let k3 = *k3;
                let mut hi = p.abs() / k1 + T::one();
                while k1 * hi + k3 * hi * hi * hi < p.abs() {
                    hi *= lit::<T>(2.0);
                }
                let (mut lo, mut hi, sign) = if p >= T::zero() {
                    (T::zero(), hi, T::one())
                } else {
                    (T::zero(), hi, -T::one())
                };
                let target = p * sign;
                for _ in 0..200 {
                    let mid = (lo + hi) * lit::<T>(0.5);
                    if mid == lo || mid == hi {
                        break;
                    }
                    if k1 * mid + k3 * mid * mid * mid < target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Ok((lo + hi) * lit::<T>(0.5) * sign)
            }
        }
    }

    /// Stored energy relative to the zero-volume state (curve models are
    /// referenced to their first sample, where only differences matter).
    pub fn energy_at(&self, dv: T) -> Result<T, CoupledError> {
        match self {
            Self::Curve(c) => {
                let (lo, _) = c.dv_range();
                Ok(c.work_integral(lo, dv)?)
            }
            Self::Cubic { k1, k3 } => {
                let half = lit::<T>(0.5);
                let quarter = lit::<T>(0.25);
                Ok(half * *k1 * dv * dv + quarter * *k3 * dv * dv * dv * dv)
            }
        }
    }

    fn dv_domain(&self) -> Option<(T, T)> {
        match self {
            Self::Curve(c) => Some(c.dv_range()),
            Self::Cubic { .. } => None,
        }
    }
}

/// Shared-pressure state of the coupled pair.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CoupledState<T: Real> {
    pub dv_total: T,
    pub dv_cap: T,
    pub dv_actuator: T,
    pub p: T,
}

/// Solve the shared-pressure, shared-volume system at the given injected
/// volume. With a multivalued cap branch structure, `branch_hint` names the
/// cap branch (index into `cap.branches()`); a unique solution needs none.
pub fn coupled_equilibrium<T: Real>(
    cap: &PvCurve<T>,
    act: &ActuatorModel<T>,
    dv_total: T,
    branch_hint: Option<usize>,
) -> Result<CoupledState<T>, CoupledError> {
    let mut roots = coupled_roots(cap, act, dv_total, T::zero(), false)?;
    if let Some(hint) = branch_hint {
        roots.retain(|&(branch, _, _)| branch == hint);
        if roots.is_empty() {
            return Err(CoupledError::NoSolutionOnBranch { branch: hint });
        }
        if roots.len() > 1 {
            return Err(CoupledError::AmbiguousBranch { count: roots.len() });
        }
    } else {
        if roots.is_empty() {
            return Err(CoupledError::NoSolution {
                dv_total: to_f64(dv_total),
            });
        }
        if roots.len() > 1 {
            return Err(CoupledError::AmbiguousBranch { count: roots.len() });
        }
    }
    let (_, dv_cap, p) = roots[0];
    Ok(CoupledState {
        dv_total,
        dv_cap,
        dv_actuator: dv_total - dv_cap,
        p,
    })
}

/// All `(branch, dv_cap, p)` roots of `P_cap(x) = P_act(dv_total - x)`.
/// `rising_only` + `past` restrict to rising branches beyond the onset.
fn coupled_roots<T: Real>(
    cap: &PvCurve<T>,
    act: &ActuatorModel<T>,
    dv_total: T,
    past: T,
    rising_only: bool,
) -> Result<Vec<(usize, T, T)>, CoupledError> {
    let samples = cap.samples();
    let (cap_lo, cap_hi) = cap.dv_range();
    let mut roots: Vec<(usize, T, T)> = Vec::new();
    let act_dom = act.dv_domain();
    let tol = (cap_hi - cap_lo) * lit::<T>(1e-13);
    for (bi, b) in cap.branches().iter().enumerate() {
        if rising_only && b.sign <= 0 {
            continue;
        }
        if rising_only && samples[b.first_seg].0 < past {
            continue;
        }
        for seg in b.first_seg..b.end_seg {
            let (mut x0, _) = samples[seg];
            let (mut x1, _) = samples[seg + 1];
            // clamp to the actuator's reachable window
            if let Some((alo, ahi)) = act_dom {
                x0 = x0.max(dv_total - ahi);
                x1 = x1.min(dv_total - alo);
            }
            if !(x0 < x1) {
                continue;
            }
            let f = |x: T| -> Result<T, CoupledError> {
                Ok(cap.pressure_at(x)? - act.pressure_at(dv_total - x)?)
            };
            // a linear cap piece against a monotone actuator: bracket on a
            // few subintervals, then bisect each sign change
            let parts = 8;
            let mut xa = x0;
            let mut fa = f(xa)?;
            for k in 1..=parts {
                let xb = x0 + (x1 - x0) * lit::<T>(k as f64) / lit::<T>(parts as f64);
                let fb = f(xb)?;
                if fa == T::zero() {
                    push_root(&mut roots, bi, xa, cap, tol)?;
                } else if fa * fb < T::zero() {
                    let root = bisect_to_machine(xa, xb, &f)?;
                    push_root(&mut roots, bi, root, cap, tol)?;
                }
                xa = xb;
                fa = fb;
            }
            if fa == T::zero() {
                push_root(&mut roots, bi, xa, cap, tol)?;
            }
        }
    }
    roots.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    roots.dedup_by(|a, b| (a.1 - b.1).abs() <= tol);
    Ok(roots)
}

fn push_root<T: Real>(
    roots: &mut Vec<(usize, T, T)>,
    branch: usize,
    x: T,
    cap: &PvCurve<T>,
    tol: T,
) -> Result<(), CoupledError> {
    if roots.iter().any(|&(_, r, _)| (r - x).abs() <= tol) {
        return Ok(());
    }
    roots.push((branch, x, cap.pressure_at(x)?));
    Ok(())
}

fn bisect_to_machine<T: Real>(
    mut lo: T,
    mut hi: T,
    f: &impl Fn(T) -> Result<T, CoupledError>,
) -> Result<T, CoupledError> {
    let mut flo = f(lo)?;
    let half = lit::<T>(0.5);
    for _ in 0..200 {
        let mid = (lo + hi) * half;
        if mid == lo || mid == hi {
            return Ok(mid);
        }
        let fm = f(mid)?;
        if fm == T::zero() {
            return Ok(mid);
        }
        if (flo > T::zero()) == (fm > T::zero()) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok((lo + hi) * half)
}

/// The snap jump of the coupled pair and the actuator energy it releases.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CoupledSnap<T: Real> {
    pub state_i: CoupledState<T>,
    pub state_ii: CoupledState<T>,
    /// Work released by the actuator relaxing from I to II.
    pub de_actuator: T,
}

/// Snap of the coupled system: state I sits at the cap's limit point; state
/// II solves the same equations at the same injected volume on the first
/// rising cap branch past the onset (smallest volume landing).
pub fn coupled_snap<T: Real>(
    cap: &PvCurve<T>,
    act: &ActuatorModel<T>,
) -> Result<CoupledSnap<T>, CoupledError> {
    let onset = find_snap_onset(cap)?;
    let dv_act_i = act.inverse(onset.p_c)?;
    let dv_total = onset.dv_c + dv_act_i;
    let state_i = CoupledState {
        dv_total,
        dv_cap: onset.dv_c,
        dv_actuator: dv_act_i,
        p: onset.p_c,
    };
    let roots = coupled_roots(cap, act, dv_total, onset.dv_c, true)?;
    let landing = roots
        .into_iter()
        .find(|&(_, x, _)| x > onset.dv_c)
        .ok_or(CoupledError::NoPostSnapState)?;
    let (_, dv_cap_ii, p_ii) = landing;
    let state_ii = CoupledState {
        dv_total,
        dv_cap: dv_cap_ii,
        dv_actuator: dv_total - dv_cap_ii,
        p: p_ii,
    };
    let de_actuator = act.energy_at(state_i.dv_actuator)? - act.energy_at(state_ii.dv_actuator)?;
    Ok(CoupledSnap {
        state_i,
        state_ii,
        de_actuator,
    })
}

/// One cell of the coupled design sweep.
#[derive(Clone, Debug)]
pub struct CoupledCell<T: Real> {
    pub t_c: T,
    pub t_r: T,
    pub outcome: Result<CoupledCellSolution<T>, String>,
}

#[derive(Clone, Debug)]
pub struct CoupledCellSolution<T: Real> {
    /// Standalone bistability of the cap; monostable designs are undesired
    /// because residual pressure keeps the actuator from closing.
    pub bistable: bool,
    pub snap: Result<CoupledSnap<T>, String>,
}

/// Per-cell cap trace plus coupled snap against a fixed actuator.
/// Cell failures are recorded in place and never abort the sweep.
pub fn coupled_landscape<T: Real>(
    base: &MetacapGeometry<T>,
    material: &Material<T>,
    act: &ActuatorModel<T>,
    tc_grid: &[T],
    tr_grid: &[T],
    opts: &LandscapeOptions<T>,
) -> Vec<CoupledCell<T>> {
    let cells: Vec<LandscapeCell<T>> = landscape(base, material, tc_grid, tr_grid, opts);
    cells
        .into_iter()
        .map(|cell| {
            let outcome = cell.outcome.map(|sol| {
                let snap = coupled_snap(&sol.pv, act).map_err(|e| e.to_string());
                CoupledCellSolution {
                    bistable: sol.report.classification == Classification::Bistable,
                    snap,
                }
            });
            CoupledCell {
                t_c: cell.t_c,
                t_r: cell.t_r,
                outcome,
            }
        })
        .collect()
}

/// CSV with `(t_c, t_r, bistable, de_actuator, dv_i, dv_ii, p_i, p_ii)`
/// columns; failed cells carry the error in a trailing column.
pub fn write_coupled_landscape_csv<T: Real>(
    cells: &[CoupledCell<T>],
    path: &Path,
    length_unit: &str,
    volume_unit: &str,
    pressure_unit: &str,
    energy_unit: &str,
) -> Result<(), CurveError> {
    let lf = factor(Quantity::Length, length_unit)?;
    let vf = factor(Quantity::Volume, volume_unit)?;
    let pf = factor(Quantity::Pressure, pressure_unit)?;
    let ef = factor(Quantity::Energy, energy_unit)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        w,
        "t_c_{length_unit},t_r_{length_unit},bistable,de_actuator_{energy_unit},dv_i_{volume_unit},dv_ii_{volume_unit},p_i_{pressure_unit},p_ii_{pressure_unit},error"
    )?;
    for cell in cells {
        let tc = to_f64(cell.t_c) / lf;
        let tr = to_f64(cell.t_r) / lf;
        match &cell.outcome {
            Ok(sol) => match &sol.snap {
                Ok(snap) => writeln!(
                    w,
                    "{tc:.16e},{tr:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},",
                    sol.bistable as u8,
                    to_f64(snap.de_actuator) / ef,
                    to_f64(snap.state_i.dv_total) / vf,
                    to_f64(snap.state_ii.dv_cap) / vf,
                    to_f64(snap.state_i.p) / pf,
                    to_f64(snap.state_ii.p) / pf,
                )?,
                Err(msg) => writeln!(
                    w,
                    "{tc:.16e},{tr:.16e},{},,,,,,{}",
                    sol.bistable as u8,
                    msg.replace(',', ";")
                )?,
            },
            Err(msg) => writeln!(w, "{tc:.16e},{tr:.16e},,,,,,,{}", msg.replace(',', ";"))?,
        }
    }
    Ok(())
}

fn factor(q: Quantity, unit: &str) -> Result<f64, CurveError> {
    q.factor_of(unit).ok_or(CurveError::Malformed {
        line: 0,
        what: format!("unknown {q:?} unit {unit:?}"),
    })
}

/// A documented synthetic actuator matching the scale of the cap fixtures:
/// monotone and stiffening over tens of milliliters and tens of kilopascals.
pub fn fixture_actuator<T: Real>() -> ActuatorModel<T> {
    // k1 = 1 kPa/mL, k3 = 0.005 kPa/mL^3 in SI
    ActuatorModel::cubic(lit::<T>(1e9), lit::<T>(5e24)).expect("valid fixture")
}
