//! Volume-controlled equilibrium continuation.
//!
//! Equilibria are stationary points of the elastic energy subject to a
//! prescribed volume change; the gauge pressure is the constraint
//! multiplier. Tracing in volume (not pressure) keeps the nonconvex branch
//! single-valued, so limit points are passed without jumping. The bordered
//! Newton matrix is factored by skyline LDL^T; its leading-block pivot signs
//! classify stability (positive definite tangent stiffness of the
//! rim-clamped shell at fixed pressure) and the border completes the
//! constrained solve.

use crate::curves::{CurveError, Direction, EnergyCurve, PvCurve};
use crate::geometry::{GeometryError, Material, MetacapGeometry, ShellMesh};
use crate::linalg::{profile_from_stencils, LinalgError, SkylineMatrix};
use crate::num::{lit, to_f64, Real};
use crate::shell::{DisplacementField, EnergyBreakdown, ShellError, ShellModel};
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SystemError {
    #[error(transparent)]
    Shell(#[from] ShellError),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error)]
pub enum ContinuationError {
    #[error("failed to converge on the starting state at dv = {dv}")]
    StartFailed { dv: f64 },
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Shell(#[from] ShellError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("trace range is empty or not finite")]
    InvalidRange,
    #[error("classification needs a deflation path")]
    NotDeflation,
    #[error("classification indeterminate: {0}")]
    Indeterminate(String),
}

/// Characteristic scales a system exposes so solver tolerances are
/// dimensionally consistent.
#[derive(Clone, Copy, Debug)]
pub struct SystemScales<T: Real> {
    /// Residual force scale (`mu R^2` for shells).
    pub force: T,
    /// Volume scale (`R^3` for shells).
    pub volume: T,
    /// Pressure scale (`mu` for shells).
    pub pressure: T,
    /// Tangent-stiffness eigenvalue scale (`mu R` for shells).
    pub stability: T,
}

/// A conservative mechanical system with one volume-like constraint
/// functional: the abstraction the tracer operates on.
pub trait ConstrainedSystem<T: Real> {
    fn num_dof(&self) -> usize;
    fn energy(&self, q: &[T]) -> Result<EnergyBreakdown<T>, SystemError>;
    fn energy_gradient(&self, q: &[T], out: &mut [T]) -> Result<(), SystemError>;
    fn volume_change(&self, q: &[T]) -> Result<T, SystemError>;
    fn volume_change_gradient(&self, q: &[T], out: &mut [T]) -> Result<(), SystemError>;
    /// Row profile (first structurally nonzero column per row) of the
    /// tangent matrix.
    fn tangent_profile(&self) -> Vec<usize>;
    /// Accumulate `K = d2E - p d2(dV)` into a zeroed skyline matrix.
    fn assemble_tangent(
        &self,
        q: &[T],
        p: T,
        k: &mut SkylineMatrix<T>,
    ) -> Result<(), SystemError>;
    fn scales(&self) -> SystemScales<T>;
}

/// One converged point on an equilibrium path.
#[derive(Clone, Debug)]
pub struct EquilibriumState<T: Real> {
    /// System degrees of freedom (free-vertex displacements for shells).
    pub q: Vec<T>,
    /// Volume change at this state.
    pub dv: T,
    /// Gauge pressure (the constraint multiplier).
    pub p: T,
    pub energy: EnergyBreakdown<T>,
    /// Positive-definite tangent stiffness at fixed pressure.
    pub stable: bool,
}

/// Solver settings echoed into path metadata.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SolverSettings {
    pub force_tol_rel: f64,
    pub volume_tol_rel: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
    pub dv_step_rel: f64,
    pub stability_tol_rel: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathMetadata {
    pub geometry_hash: Option<String>,
    pub settings: SolverSettings,
    /// Volume change past which stepping stalled, if the trace ended early.
    pub stalled_at: Option<f64>,
}

/// Ordered list of converged states, strictly monotone in volume change.
#[derive(Clone, Debug)]
pub struct EquilibriumPath<T: Real> {
    pub states: Vec<EquilibriumState<T>>,
    pub direction: Direction,
    pub metadata: PathMetadata,
}

impl<T: Real> EquilibriumPath<T> {
    pub fn completed(&self) -> bool {
        self.metadata.stalled_at.is_none()
    }

    /// Pressure–volume curve over ascending volume change.
    pub fn to_pv_curve(&self) -> Result<PvCurve<T>, CurveError> {
        PvCurve::new(self.ascending(|s| s.p), self.direction)
    }

    /// Strain-energy curve over ascending volume change.
    pub fn to_energy_curve(&self) -> Result<EnergyCurve<T>, CurveError> {
        EnergyCurve::new(self.ascending(|s| s.energy.total), self.direction)
    }

    fn ascending(&self, f: impl Fn(&EquilibriumState<T>) -> T) -> Vec<(T, T)> {
        let mut samples: Vec<(T, T)> = self.states.iter().map(|s| (s.dv, f(s))).collect();
        if self.direction == Direction::Deflation {
            samples.reverse();
        }
        // collapse numerically coincident neighbors
        samples.dedup_by(|b, a| b.0 <= a.0);
        samples
    }

    /// Synthesize a path from sampled curves, with stability flags taken
    /// from the local pressure slope. Used to classify analytic or imported
    /// curves; the state vectors are empty.
    pub fn from_pv_energy(
        pv: &PvCurve<T>,
        energy: &EnergyCurve<T>,
        direction: Direction,
    ) -> Result<Self, ContinuationError> {
        let ps = pv.samples();
        let es = energy.samples();
        if ps.len() != es.len() {
            return Err(ContinuationError::Indeterminate(
                "pressure and energy curves must share their volume samples".into(),
            ));
        }
        let n = ps.len();
        let slope_sign = |i: usize| -> i8 {
            let d = ps[i + 1].1 - ps[i].1;
            if d > T::zero() {
                1
            } else if d < T::zero() {
                -1
            } else {
                0
            }
        };
        let mut states: Vec<EquilibriumState<T>> = (0..n)
            .map(|i| {
                let seg = if i + 1 < n { i } else { n - 2 };
                EquilibriumState {
                    q: Vec::new(),
                    dv: ps[i].0,
                    p: ps[i].1,
                    energy: EnergyBreakdown::new(es[i].1, T::zero()),
                    stable: slope_sign(seg) > 0,
                }
            })
            .collect();
        if direction == Direction::Deflation {
            states.reverse();
        }
        Ok(Self {
            states,
            direction,
            metadata: PathMetadata {
                geometry_hash: None,
                settings: TraceOptions::<T>::default().settings(),
                stalled_at: None,
            },
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct NewtonOptions<T: Real> {
    /// Convergence when the force residual norm falls below this times the
    /// system force scale.
    pub force_tol_rel: T,
    pub volume_tol_rel: T,
    pub max_iterations: usize,
    /// Damping halvings per Newton step.
    pub max_halvings: usize,
}

impl<T: Real> Default for NewtonOptions<T> {
    fn default() -> Self {
        let eps = crate::shell::machine_epsilon::<T>();
        let floor = eps * lit::<T>(1e3);
        let tol = if floor > lit::<T>(1e-10) {
            floor
        } else {
            lit::<T>(1e-10)
        };
        Self {
            force_tol_rel: tol,
            volume_tol_rel: tol,
            max_iterations: 50,
            max_halvings: 10,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TraceOptions<T: Real> {
    /// Initial volume step as a fraction of the traced range.
    pub dv_step_rel: T,
    pub dv_step_min_rel: T,
    pub dv_step_max_rel: T,
    pub newton: NewtonOptions<T>,
    /// Smallest admissible tangent eigenvalue, relative to the stability
    /// scale, still counted as stable.
    pub stability_tol_rel: T,
    pub predictor: Predictor,
}

impl<T: Real> Default for TraceOptions<T> {
    fn default() -> Self {
        Self {
            dv_step_rel: lit(0.005),
            dv_step_min_rel: lit(1e-8),
            dv_step_max_rel: lit(0.02),
            newton: NewtonOptions::default(),
            stability_tol_rel: lit(1e-8),
            predictor: Predictor::default(),
        }
    }
}

impl<T: Real> TraceOptions<T> {
    fn settings(&self) -> SolverSettings {
        SolverSettings {
            force_tol_rel: to_f64(self.newton.force_tol_rel),
            volume_tol_rel: to_f64(self.newton.volume_tol_rel),
            max_iterations: self.newton.max_iterations,
            max_halvings: self.newton.max_halvings,
            dv_step_rel: to_f64(self.dv_step_rel),
            stability_tol_rel: to_f64(self.stability_tol_rel),
        }
    }
}

struct Residual<T: Real> {
    ru_norm: T,
    rc: T,
    merit: T,
}

/// Predictor for the next volume target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Predictor {
    /// Start from the previous converged state.
    Previous,
    /// Extrapolate along the last step, scaled to the new step length.
    #[default]
    Secant,
}

/// Damped-Newton stepper for one system, reusing its factorization
/// workspace across volume targets.
struct Tracer<'a, T: Real, S: ConstrainedSystem<T>> {
    system: &'a S,
    opts: TraceOptions<T>,
    scales: SystemScales<T>,
    n: usize,
    k: SkylineMatrix<T>,
    q: Vec<T>,
    p: T,
    dv: T,
    prev: Option<(Vec<T>, T, T)>,
    ge: Vec<T>,
    gv: Vec<T>,
    ru: Vec<T>,
    rhs: Vec<T>,
    last_stable: bool,
    /// The stored factorization was assembled within solver noise of the
    /// current converged state, so its pivots can classify stability.
    factor_is_current: bool,
}

struct StepReport {
    iterations: usize,
}

impl<'a, T: Real, S: ConstrainedSystem<T>> Tracer<'a, T, S> {
    fn new(system: &'a S, opts: TraceOptions<T>, q0: Vec<T>, p0: T) -> Self {
        let n = system.num_dof();
        let mut profile = system.tangent_profile();
        profile.push(0); // dense border row
        let dv0 = system.volume_change(&q0).unwrap_or_else(|_| T::zero());
        Self {
            system,
            opts,
            scales: system.scales(),
            n,
            k: SkylineMatrix::new(profile),
            q: q0,
            p: p0,
            dv: dv0,
            prev: None,
            ge: vec![T::zero(); n],
            gv: vec![T::zero(); n],
            ru: vec![T::zero(); n],
            rhs: vec![T::zero(); n + 1],
            last_stable: true,
            factor_is_current: false,
        }
    }

    fn residual_at(&mut self, q: &[T], p: T, target: T) -> Result<Residual<T>, SystemError> {
        self.system.energy_gradient(q, &mut self.ge)?;
        self.system.volume_change_gradient(q, &mut self.gv)?;
        let dv = self.system.volume_change(q)?;
        let mut norm2 = T::zero();
        for i in 0..self.n {
            let r = self.ge[i] - p * self.gv[i];
            self.ru[i] = r;
            norm2 += r * r;
        }
        let ru_norm = norm2.sqrt();
        let rc = dv - target;
        let fs = self.scales.force;
        let vs = self.scales.volume;
        let merit = norm2 / (fs * fs) + (rc / vs) * (rc / vs);
        Ok(Residual { ru_norm, rc, merit })
    }

    /// Assemble and factor the bordered tangent at `(q, p)`. Returns the
    /// border scale used for the multiplier column.
    fn factor_at(&mut self, q: &[T], p: T) -> Result<T, ContinuationError> {
        self.k.reset();
        self.system.assemble_tangent(q, p, &mut self.k)?;
        self.system.volume_change_gradient(q, &mut self.gv)?;
        let mut diag_max = T::zero();
        for i in 0..self.n {
            // before factorization the stored diagonal is the raw matrix
            let d = self.k.pivot_raw(i).abs();
            if d > diag_max {
                diag_max = d;
            }
        }
        let mut gmax = T::zero();
        for g in &self.gv[..self.n] {
            if g.abs() > gmax {
                gmax = g.abs();
            }
        }
        let bs = if gmax > T::zero() && diag_max > T::zero() {
            diag_max / gmax
        } else {
            T::one()
        };
        for j in 0..self.n {
            let v = self.gv[j];
            if v != T::zero() {
                self.k.add(self.n, j, -bs * v);
            }
        }
        self.k.factor(T::zero())?;
        Ok(bs)
    }

    /// Newton-iterate to the volume target, committing `(q, p)` and the
    /// predictor history only on success.
    fn solve_to(&mut self, target: T) -> Result<StepReport, ContinuationError> {
        match self.newton_from(target, true) {
            Ok(report) => Ok(report),
            // a failed extrapolated start falls back to the previous state
            Err(_) if self.opts.predictor == Predictor::Secant && self.prev.is_some() => {
                self.newton_from(target, false)
            }
            Err(e) => Err(e),
        }
    }

    fn newton_from(
        &mut self,
        target: T,
        extrapolate: bool,
    ) -> Result<StepReport, ContinuationError> {
        let ftol = self.opts.newton.force_tol_rel * self.scales.force;
        let vtol = self.opts.newton.volume_tol_rel * self.scales.volume;
        self.factor_is_current = false;
        let mut q = self.q.clone();
        let mut p = self.p;
        if extrapolate && self.opts.predictor == Predictor::Secant {
            if let Some((q_prev, p_prev, dv_prev)) = &self.prev {
                let denom = self.dv - *dv_prev;
                if denom != T::zero() {
                    let scale = (target - self.dv) / denom;
                    // cap wild extrapolations at adaptive step jumps
                    let scale = scale.max(-lit::<T>(2.0)).min(lit::<T>(2.0));
                    for i in 0..self.n {
                        q[i] += scale * (q[i] - q_prev[i]);
                    }
                    p += scale * (p - *p_prev);
                }
            }
        }
        let mut q_trial = vec![T::zero(); self.n];
        let merit_floor = {
            let f = self.opts.newton.force_tol_rel;
            let v = self.opts.newton.volume_tol_rel;
            (f * f + v * v) * lit::<T>(1e6)
        };
        let mut merit_at_factor = T::one() + merit_floor;
        for iter in 0..self.opts.newton.max_iterations {
            let res = self.residual_at(&q, p, target)?;
            if res.ru_norm <= ftol && res.rc.abs() <= vtol {
                self.factor_is_current = iter > 0 && merit_at_factor <= merit_floor;
                self.prev = Some((
                    std::mem::replace(&mut self.q, q),
                    self.p,
                    self.dv,
                ));
                self.p = p;
                self.dv = self.system.volume_change(&self.q)?;
                return Ok(StepReport { iterations: iter });
            }
            let bs = self.factor_at(&q, p)?;
            merit_at_factor = res.merit;
            for i in 0..self.n {
                self.rhs[i] = -self.ru[i];
            }
            self.rhs[self.n] = bs * res.rc;
            self.k.solve_in_place(&mut self.rhs);
            let dp = self.rhs[self.n] * bs;
            // damped line search on the merit function
            let mut alpha = T::one();
            let mut accepted = false;
            for _ in 0..=self.opts.newton.max_halvings {
                for i in 0..self.n {
                    q_trial[i] = q[i] + alpha * self.rhs[i];
                }
                let p_trial = p + alpha * dp;
                match self.residual_at(&q_trial, p_trial, target) {
                    Ok(trial) if trial.merit.is_finite() && trial.merit < res.merit => {
                        q.copy_from_slice(&q_trial);
                        p = p_trial;
                        accepted = true;
                        break;
                    }
                    _ => alpha *= lit::<T>(0.5),
                }
            }
            if !accepted {
                return Err(ContinuationError::System(SystemError::Other(format!(
                    "newton stalled at volume target {}",
                    to_f64(target)
                ))));
            }
        }
        Err(ContinuationError::System(SystemError::Other(format!(
            "newton did not converge within {} iterations at volume target {}",
            self.opts.newton.max_iterations,
            to_f64(target)
        ))))
    }

    /// Stability of the current converged state: sign structure of the
    /// tangent stiffness pivots, with an inverse-power estimate of the
    /// smallest-magnitude eigenvalue for marginal cases. Reuses the last
    /// Newton factorization when it was assembled at the converged point.
    fn stability(&mut self) -> bool {
        if !self.factor_is_current {
            let q = self.q.clone();
            let p = self.p;
            match self.factor_at(&q, p) {
                Ok(_) => self.factor_is_current = true,
                Err(_) => return self.last_stable, // singular exactly at a fold
            }
        }
        let neg = self.k.negative_pivots_leading(self.n);
        let stable = if neg == 0 {
            true
        } else if neg == 1 {
            let eps = self.opts.stability_tol_rel * self.scales.stability;
            let lambda = self.smallest_eigenvalue_estimate();
            lambda < T::zero() && lambda > -eps
        } else {
            false
        };
        self.last_stable = stable;
        stable
    }

    /// A few inverse-power iterations on the factored tangent block.
    fn smallest_eigenvalue_estimate(&mut self) -> T {
        let n = self.n;
        let mut w: Vec<T> = (0..n)
            .map(|i| lit::<T>(((i as f64) * 0.7391 + 0.31).sin()))
            .collect();
        let mut lambda = T::zero();
        for _ in 0..8 {
            let mut y = w.clone();
            self.k.solve_leading_in_place(n, &mut y);
            let wy: T = w.iter().zip(&y).map(|(a, b)| *a * *b).fold(T::zero(), |s, v| s + v);
            let ww: T = w.iter().map(|a| *a * *a).fold(T::zero(), |s, v| s + v);
            if !wy.is_finite() || wy == T::zero() {
                return T::zero();
            }
            lambda = ww / wy;
            let norm = y.iter().map(|a| *a * *a).fold(T::zero(), |s, v| s + v).sqrt();
            if !(norm > T::zero()) || !norm.is_finite() {
                return T::zero();
            }
            for (wi, yi) in w.iter_mut().zip(&y) {
                *wi = *yi / norm;
            }
        }
        lambda
    }

    fn make_state(&mut self) -> Result<EquilibriumState<T>, ContinuationError> {
        let dv = self.system.volume_change(&self.q)?;
        let energy = self.system.energy(&self.q)?;
        let stable = self.stability();
        Ok(EquilibriumState {
            q: self.q.clone(),
            dv,
            p: self.p,
            energy,
            stable,
        })
    }
}

/// Trace equilibria from `dv_range.0` to `dv_range.1` (either orientation),
/// starting from `start` or from the unloaded state.
///
/// Steps adapt: they halve on non-convergence and grow again after easy
/// steps. A stall leaves the states traced so far in the path and records
/// the stall position in the metadata.
pub fn trace_path<T: Real, S: ConstrainedSystem<T>>(
    system: &S,
    start: Option<(Vec<T>, T)>,
    dv_range: (T, T),
    opts: &TraceOptions<T>,
) -> Result<EquilibriumPath<T>, ContinuationError> {
    let (dv_from, dv_to) = dv_range;
    if !dv_from.is_finite() || !dv_to.is_finite() || dv_from == dv_to {
        return Err(ContinuationError::InvalidRange);
    }
    let direction = if dv_to > dv_from {
        Direction::Inflation
    } else {
        Direction::Deflation
    };
    let (q0, p0) = start.unwrap_or_else(|| (vec![T::zero(); system.num_dof()], T::zero()));
    let mut tracer = Tracer::new(system, *opts, q0, p0);
    run_trace(&mut tracer, dv_from, dv_to, direction, None, None)
}

/// Shared stepping loop; `stop` may end the trace early (used by the cap
/// analysis to cut off past the limit point).
fn run_trace<T: Real, S: ConstrainedSystem<T>>(
    tracer: &mut Tracer<'_, T, S>,
    dv_from: T,
    dv_to: T,
    direction: Direction,
    geometry_hash: Option<String>,
    mut stop: Option<&mut dyn FnMut(&EquilibriumState<T>) -> Option<T>>,
) -> Result<EquilibriumPath<T>, ContinuationError> {
    let range = (dv_to - dv_from).abs();
    let dir = if dv_to > dv_from { T::one() } else { -T::one() };
    let opts = tracer.opts;
    let mut step = opts.dv_step_rel * range;
    let step_min = opts.dv_step_min_rel * range;
    let step_max = opts.dv_step_max_rel * range;

    tracer
        .solve_to(dv_from)
        .map_err(|_| ContinuationError::StartFailed { dv: to_f64(dv_from) })?;
    let mut states = vec![tracer.make_state()?];
    let mut stalled_at = None;
    let mut end = dv_to;
    if let Some(cb) = stop.as_mut() {
        if let Some(new_end) = cb(&states[0]) {
            end = new_end;
        }
    }

    let mut dv = dv_from;
    while (end - dv) * dir > range * lit::<T>(1e-12) {
        let mut target = dv + dir * step;
        if (end - target) * dir < T::zero() {
            target = end;
        }
        match tracer.solve_to(target) {
            Ok(report) => {
                let state = tracer.make_state()?;
                dv = state.dv;
                if let Some(cb) = stop.as_mut() {
                    if let Some(new_end) = cb(&state) {
                        end = if (new_end - dv_from) * dir < (end - dv_from) * dir {
                            new_end
                        } else {
                            end
                        };
                    }
                }
                states.push(state);
                if report.iterations <= 6 {
                    step = (step * lit::<T>(1.4)).min(step_max);
                }
            }
            Err(_) => {
                step *= lit::<T>(0.5);
                if step < step_min {
                    stalled_at = Some(to_f64(dv));
                    break;
                }
            }
        }
    }

    Ok(EquilibriumPath {
        states,
        direction,
        metadata: PathMetadata {
            geometry_hash,
            settings: opts.settings(),
            stalled_at,
        },
    })
}

// ---------------------------------------------------------------------------
// Shell system
// ---------------------------------------------------------------------------

/// A [`ShellModel`] exposed as a constrained system over its free-vertex
/// displacement degrees of freedom.
pub struct ShellSystem<T: Real> {
    model: ShellModel<T>,
    free: Vec<usize>,
    free_index: Vec<Option<usize>>,
    scratch: std::cell::RefCell<ShellScratch<T>>,
}

struct ShellScratch<T: Real> {
    positions: Vec<Vector3<T>>,
    grad: Vec<Vector3<T>>,
}

impl<T: Real> ShellSystem<T> {
    pub fn new(mesh: &ShellMesh<T>) -> Result<Self, ShellError> {
        let model = ShellModel::new(mesh)?;
        let nv = model.num_vertices();
        let mut free = Vec::new();
        let mut free_index = vec![None; nv];
        for v in 0..nv {
            if !model.is_rim(v) {
                free_index[v] = Some(free.len());
                free.push(v);
            }
        }
        let positions = model.rest_positions().to_vec();
        Ok(Self {
            model,
            free,
            free_index,
            scratch: std::cell::RefCell::new(ShellScratch {
                positions,
                grad: vec![Vector3::zeros(); nv],
            }),
        })
    }

    pub fn model(&self) -> &ShellModel<T> {
        &self.model
    }

    /// Expand a dof vector into a full displacement field (rim zeros).
    pub fn displacement_field(&self, q: &[T]) -> DisplacementField<T> {
        let mut u = DisplacementField::zeros(self.model.num_vertices());
        for (i, &v) in self.free.iter().enumerate() {
            u.values[v] = Vector3::new(q[3 * i], q[3 * i + 1], q[3 * i + 2]);
        }
        u
    }

    /// Pack a displacement field into the dof layout.
    pub fn pack(&self, u: &DisplacementField<T>) -> Vec<T> {
        let mut q = vec![T::zero(); 3 * self.free.len()];
        for (i, &v) in self.free.iter().enumerate() {
            q[3 * i] = u.values[v].x;
            q[3 * i + 1] = u.values[v].y;
            q[3 * i + 2] = u.values[v].z;
        }
        q
    }

    fn load_positions(&self, q: &[T], scratch: &mut ShellScratch<T>) {
        let rest = self.model.rest_positions();
        scratch.positions.copy_from_slice(rest);
        for (i, &v) in self.free.iter().enumerate() {
            scratch.positions[v] +=
                Vector3::new(q[3 * i], q[3 * i + 1], q[3 * i + 2]);
        }
    }
}

impl<T: Real> ConstrainedSystem<T> for ShellSystem<T> {
    fn num_dof(&self) -> usize {
        3 * self.free.len()
    }

    fn energy(&self, q: &[T]) -> Result<EnergyBreakdown<T>, SystemError> {
        let mut scratch = self.scratch.borrow_mut();
        self.load_positions(q, &mut scratch);
        Ok(self.model.energy_at(&scratch.positions)?)
    }

    fn energy_gradient(&self, q: &[T], out: &mut [T]) -> Result<(), SystemError> {
        let mut scratch = self.scratch.borrow_mut();
        self.load_positions(q, &mut scratch);
        let ShellScratch { positions, grad } = &mut *scratch;
        grad.iter_mut().for_each(|g| *g = Vector3::zeros());
        self.model.add_energy_gradient_at(positions, grad)?;
        for (i, &v) in self.free.iter().enumerate() {
            out[3 * i] = grad[v].x;
            out[3 * i + 1] = grad[v].y;
            out[3 * i + 2] = grad[v].z;
        }
        Ok(())
    }

    fn volume_change(&self, q: &[T]) -> Result<T, SystemError> {
        let mut scratch = self.scratch.borrow_mut();
        self.load_positions(q, &mut scratch);
        Ok(self.model.volume_change_at(&scratch.positions)?)
    }

    fn volume_change_gradient(&self, q: &[T], out: &mut [T]) -> Result<(), SystemError> {
        let mut scratch = self.scratch.borrow_mut();
        self.load_positions(q, &mut scratch);
        let ShellScratch { positions, grad } = &mut *scratch;
        grad.iter_mut().for_each(|g| *g = Vector3::zeros());
        self.model.add_enclosed_volume_gradient_at(positions, grad);
        // dV is rest volume minus enclosed volume
        for (i, &v) in self.free.iter().enumerate() {
            out[3 * i] = -grad[v].x;
            out[3 * i + 1] = -grad[v].y;
            out[3 * i + 2] = -grad[v].z;
        }
        Ok(())
    }

    fn tangent_profile(&self) -> Vec<usize> {
        let mut stencils: Vec<Vec<usize>> = Vec::new();
        self.model.for_each_stencil(&mut |verts: &[usize]| {
            let free: Vec<usize> = verts
                .iter()
                .filter_map(|&v| self.free_index[v])
                .collect();
            if free.len() > 1 {
                stencils.push(free);
            }
        });
        profile_from_stencils(self.free.len(), 3, stencils)
    }

    fn assemble_tangent(
        &self,
        q: &[T],
        p: T,
        k: &mut SkylineMatrix<T>,
    ) -> Result<(), SystemError> {
        let mut scratch = self.scratch.borrow_mut();
        self.load_positions(q, &mut scratch);
        let free_index = &self.free_index;
        let positions = &scratch.positions;
        self.model
            .assemble_tangent(positions, p, &mut |vi, ci, vj, cj, val| {
                let (Some(fi), Some(fj)) = (free_index[vi], free_index[vj]) else {
                    return;
                };
                let r = 3 * fi + ci;
                let c = 3 * fj + cj;
                if r >= c {
                    k.add(r, c, val);
                }
            })
            .map_err(SystemError::from)?;
        Ok(())
    }

    fn scales(&self) -> SystemScales<T> {
        let mu = self.model.shear_modulus();
        let r = self.model.length_scale();
        SystemScales {
            force: mu * r * r,
            volume: r * r * r,
            pressure: mu,
            stability: mu * r,
        }
    }
}

/// Superpose a single low-order non-axisymmetric radial bump on the rest
/// shape, vanishing at the pole and the rim. Amplitude zero is the identity.
pub fn seed_imperfection<T: Real>(mesh: &ShellMesh<T>, amplitude: T) -> ShellMesh<T> {
    seed_imperfection_with_mode(mesh, amplitude, 3)
}

pub fn seed_imperfection_with_mode<T: Real>(
    mesh: &ShellMesh<T>,
    amplitude: T,
    mode: u32,
) -> ShellMesh<T> {
    let mut out = mesh.clone();
    let phi_max = mesh.geometry.phi;
    let r = mesh.geometry.r;
    let pi = lit::<T>(std::f64::consts::PI);
    let mut rim = vec![false; mesh.vertices.len()];
    for &v in &mesh.boundary_ring {
        rim[v] = true;
    }
    for (v, pos) in out.vertices.iter_mut().enumerate() {
        if rim[v] {
            continue;
        }
        let rho = (pos.x * pos.x + pos.y * pos.y).sqrt();
        let polar = rho.atan2(pos.z);
        let azimuth = pos.y.atan2(pos.x);
        let envelope = (pi * polar / phi_max).sin();
        let bump = amplitude / r * envelope * (lit::<T>(mode as f64) * azimuth).cos();
        *pos *= T::one() + bump;
    }
    out
}

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Monostable,
    Bistable,
}

/// Bistability report of one cap design.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilityReport<T: Real> {
    pub classification: Classification,
    /// Energy released going from the everted well to the rest state.
    pub e_r: Option<T>,
    /// Barrier to trigger the everted-to-rest transformation.
    pub e_b: Option<T>,
    /// Volume change of the everted zero-pressure equilibrium.
    pub everted_dv: Option<T>,
    /// `(dv, p)` at pressure-slope sign changes along the path.
    pub limit_points: Vec<(T, T)>,
}

struct Crossing<T: Real> {
    seg: usize,
    dv: T,
    energy: T,
    stable: bool,
    /// Pressure passes from positive to negative along the walk order.
    downward: bool,
}

fn zero_crossings<T: Real>(states: &[EquilibriumState<T>]) -> Vec<Crossing<T>> {
    let half = lit::<T>(0.5);
    // converged pressures carry solver noise near the rest state; crossings
    // below this volume floor are that noise, not equilibria
    let dv_span = states
        .iter()
        .map(|s| s.dv.abs())
        .fold(T::zero(), |a, b| if b > a { b } else { a });
    let dv_floor = dv_span * lit::<T>(1e-6);
    let mut out = Vec::new();
    for i in 0..states.len().saturating_sub(1) {
        let a = &states[i];
        let b = &states[i + 1];
        let crossing = if a.p * b.p < T::zero() {
            let s = a.p / (a.p - b.p);
            let dv = a.dv + s * (b.dv - a.dv);
            let energy = a.energy.total + half * a.p * (dv - a.dv);
            Some(Crossing {
                seg: i,
                dv,
                energy,
                stable: a.stable && b.stable,
                downward: a.p > T::zero(),
            })
        } else if b.p == T::zero() && a.p != T::zero() {
            Some(Crossing {
                seg: i,
                dv: b.dv,
                energy: b.energy.total,
                stable: b.stable,
                downward: a.p > T::zero(),
            })
        } else {
            None
        };
        if let Some(c) = crossing {
            if c.dv.abs() > dv_floor {
                out.push(c);
            }
        }
    }
    out
}

fn limit_points<T: Real>(states: &[EquilibriumState<T>]) -> Vec<(T, T)> {
    let mut out = Vec::new();
    let slope = |i: usize| -> T {
        let a = &states[i];
        let b = &states[i + 1];
        (b.p - a.p) / (b.dv - a.dv)
    };
    for i in 1..states.len().saturating_sub(1) {
        let s0 = slope(i - 1);
        let s1 = slope(i);
        if s0 * s1 < T::zero() {
            out.push((states[i].dv, states[i].p));
        }
    }
    out
}

/// Classify bistability from a deflation path traced down from the everted
/// side: bistable iff the path holds a stable zero-pressure equilibrium at
/// positive volume change. The release is that state's energy (the rest
/// energy is zero) and the barrier is the path-maximum energy beyond it.
pub fn classify<T: Real>(
    deflation: &EquilibriumPath<T>,
) -> Result<StabilityReport<T>, ContinuationError> {
    if deflation.direction != Direction::Deflation {
        return Err(ContinuationError::NotDeflation);
    }
    if deflation.states.len() < 3 {
        return Err(ContinuationError::Indeterminate(
            "deflation path has too few states".into(),
        ));
    }
    let states = &deflation.states;
    let crossings = zero_crossings(states);
    let lp = limit_points(states);

    let everted = crossings
        .iter()
        .find(|c| c.downward && c.stable && c.dv > T::zero());
    let Some(everted) = everted else {
        if !deflation.completed() {
            return Err(ContinuationError::Indeterminate(
                "path stalled before a stable zero-pressure equilibrium could be ruled out"
                    .into(),
            ));
        }
        return Ok(StabilityReport {
            classification: Classification::Monostable,
            e_r: None,
            e_b: None,
            everted_dv: None,
            limit_points: lp,
        });
    };

    // barrier: the next upward crossing past the well, cross-checked against
    // the sampled maximum below the well
    let upward = crossings
        .iter()
        .find(|c| c.seg >= everted.seg && !c.downward && c.dv < everted.dv);
    let sample_max = states
        .iter()
        .filter(|s| s.dv <= everted.dv)
        .map(|s| s.energy.total)
        .fold(None::<T>, |acc, e| Some(acc.map_or(e, |a| if e > a { e } else { a })));
    let barrier_top = match (upward, sample_max) {
        (Some(c), Some(m)) => Some(if c.energy > m { c.energy } else { m }),
        (Some(c), None) => Some(c.energy),
        (None, _) if !deflation.completed() => None,
        (None, Some(m)) => Some(m),
        (None, None) => None,
    };
    let Some(top) = barrier_top else {
        return Err(ContinuationError::Indeterminate(
            "path does not span the energy barrier".into(),
        ));
    };

    Ok(StabilityReport {
        classification: Classification::Bistable,
        e_r: Some(everted.energy),
        e_b: Some(top - everted.energy),
        everted_dv: Some(everted.dv),
        limit_points: lp,
    })
}

// ---------------------------------------------------------------------------
// Cap analysis pipeline
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct AnalyzeOptions<T: Real> {
    pub trace: TraceOptions<T>,
    /// Inflation extent as a multiple of the rest cap volume.
    pub dv_max_rel: T,
    /// Refine the everted equilibrium by bisection on the volume change.
    pub refine_everted: bool,
}

impl<T: Real> Default for AnalyzeOptions<T> {
    fn default() -> Self {
        Self {
            trace: TraceOptions::default(),
            dv_max_rel: lit(3.0),
            refine_everted: true,
        }
    }
}

/// Everything one cap design yields: the traced paths, the snap onset, the
/// stability report, and the refined everted state when one exists.
pub struct CapAnalysis<T: Real> {
    pub inflation: EquilibriumPath<T>,
    pub deflation: Option<EquilibriumPath<T>>,
    /// `(dv_c, p_c)` of the inflation limit point, if one was met.
    pub onset: Option<(T, T)>,
    pub report: StabilityReport<T>,
    pub everted: Option<EquilibriumState<T>>,
}

impl<T: Real> CapAnalysis<T> {
    /// The full single-valued equilibrium curve over ascending volume
    /// change: the deflation path when one was traced, else the inflation.
    pub fn cap_curve(&self) -> Result<(PvCurve<T>, EnergyCurve<T>), CurveError> {
        let path = self.deflation.as_ref().unwrap_or(&self.inflation);
        Ok((path.to_pv_curve()?, path.to_energy_curve()?))
    }
}

/// Run the full inflation / deflation / classification protocol on a mesh:
/// inflate from rest, watch for the pressure maximum, continue to 1.2 times
/// its volume, trace back down to zero, classify, and locate the everted
/// equilibrium by bisection when the cap is bistable.
pub fn analyze_cap<T: Real>(
    mesh: &ShellMesh<T>,
    opts: &AnalyzeOptions<T>,
) -> Result<CapAnalysis<T>, ContinuationError> {
    let system = ShellSystem::new(mesh)?;
    let hash = format!("{:016x}", mesh.geometry.hash());
    let dv_max = opts.dv_max_rel * system.model().rest_volume();

    // Phase 1: inflation with an online watch for the limit point and the
    // everted well. The trace runs past the pressure maximum until the
    // pressure has dipped negative and re-risen through zero (the well has
    // been passed), or until it recovers above the peak without ever going
    // negative (no zero crossing can exist), or until the volume cap.
    let mut p_max = T::zero();
    let mut dv_at_pmax = T::zero();
    let mut onset: Option<(T, T)> = None;
    let mut went_negative = false;
    let detect = lit::<T>(1e-4);
    let margin = lit::<T>(1.1);
    let extend = lit::<T>(1.2);
    let mut tracer = Tracer::new(
        &system,
        opts.trace,
        vec![T::zero(); system.num_dof()],
        T::zero(),
    );
    let inflation = {
        let mut watch = |state: &EquilibriumState<T>| -> Option<T> {
            match onset {
                None => {
                    if state.p > p_max {
                        p_max = state.p;
                        dv_at_pmax = state.dv;
                    } else if p_max > T::zero() && state.p < p_max * (T::one() - detect) {
                        onset = Some((dv_at_pmax, p_max));
                    }
                    None
                }
                Some((dv_c, p_c)) => {
                    let floor = dv_c * extend;
                    if state.p < T::zero() {
                        went_negative = true;
                        None
                    } else if went_negative && state.p > detect * p_c {
                        // past the everted well; a little headroom helps the
                        // deflation seed
                        Some((state.dv * margin).max(floor))
                    } else if !went_negative && state.p > p_c {
                        // recovered above the peak without a zero crossing
                        Some((state.dv * margin).max(floor))
                    } else {
                        None
                    }
                }
            }
        };
        run_trace(
            &mut tracer,
            T::zero(),
            dv_max,
            Direction::Inflation,
            Some(hash.clone()),
            Some(&mut watch),
        )?
    };

    if onset.is_none() {
        // monotone pressure all the way: monostable by construction
        if !inflation.completed() {
            return Err(ContinuationError::Indeterminate(
                "inflation stalled before the requested volume and showed no limit point"
                    .into(),
            ));
        }
        let report = StabilityReport {
            classification: Classification::Monostable,
            e_r: None,
            e_b: None,
            everted_dv: None,
            limit_points: Vec::new(),
        };
        return Ok(CapAnalysis {
            inflation,
            deflation: None,
            onset: None,
            report,
            everted: None,
        });
    }

    // Phase 2: deflation from the post-snap side down to rest.
    let last = inflation.states.last().expect("nonempty path");
    let deflation = {
        let mut tracer = Tracer::new(&system, opts.trace, last.q.clone(), last.p);
        run_trace(
            &mut tracer,
            last.dv,
            T::zero(),
            Direction::Deflation,
            Some(hash),
            None,
        )?
    };

    let mut report = classify(&deflation)?;

    // Phase 3: pin the everted equilibrium by bisection on the volume.
    let mut everted = None;
    if report.classification == Classification::Bistable && opts.refine_everted {
        if let Some(seed) = find_everted_bracket(&deflation) {
            let (hi_state, lo_state) = seed;
            let refined = bisect_everted(&system, &opts.trace, hi_state, lo_state)?;
            if let Some(state) = refined {
                // the barrier top is fixed; re-measure both energies from
                // the refined well
                let top = match (report.e_b, report.e_r) {
                    (Some(e_b), Some(e_r)) => Some(e_b + e_r),
                    _ => None,
                };
                report.e_r = Some(state.energy.total);
                report.everted_dv = Some(state.dv);
                if let Some(top) = top {
                    report.e_b = Some(top - state.energy.total);
                }
                everted = Some(state);
            }
        }
    }

    Ok(CapAnalysis {
        inflation,
        deflation: Some(deflation),
        onset,
        report,
        everted,
    })
}

/// States bracketing the first stable downward zero crossing, in walk order
/// (positive pressure first).
fn find_everted_bracket<T: Real>(
    deflation: &EquilibriumPath<T>,
) -> Option<(EquilibriumState<T>, EquilibriumState<T>)> {
    let states = &deflation.states;
    let dv_span = states
        .iter()
        .map(|s| s.dv.abs())
        .fold(T::zero(), |a, b| if b > a { b } else { a });
    let dv_floor = dv_span * lit::<T>(1e-6);
    for i in 0..states.len() - 1 {
        let a = &states[i];
        let b = &states[i + 1];
        if a.p > T::zero() && b.p < T::zero() && a.stable && b.stable && b.dv > dv_floor {
            return Some((a.clone(), b.clone()));
        }
    }
    None
}

fn bisect_everted<T: Real>(
    system: &ShellSystem<T>,
    trace: &TraceOptions<T>,
    hi: EquilibriumState<T>,
    lo: EquilibriumState<T>,
) -> Result<Option<EquilibriumState<T>>, ContinuationError> {
    let scales = system.scales();
    let p_tol = lit::<T>(1e-9) * scales.pressure;
    let dv_tol = lit::<T>(1e-12) * scales.volume;
    let mut tracer = Tracer::new(system, *trace, hi.q.clone(), hi.p);
    let (mut dv_hi, mut dv_lo) = (hi.dv, lo.dv);
    let half = lit::<T>(0.5);
    let mut best: Option<EquilibriumState<T>> = None;
    for _ in 0..80 {
        let mid = (dv_hi + dv_lo) * half;
        if (dv_hi - dv_lo).abs() < dv_tol {
            break;
        }
        if tracer.solve_to(mid).is_err() {
            return Ok(best);
        }
        let state = tracer.make_state()?;
        let p = state.p;
        best = Some(state);
        if p.abs() <= p_tol {
            break;
        }
        if p > T::zero() {
            dv_hi = mid;
        } else {
            dv_lo = mid;
        }
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Landscape sweep
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct LandscapeOptions<T: Real> {
    pub resolution: T,
    pub analyze: AnalyzeOptions<T>,
}

/// Everything a converged landscape cell carries.
#[derive(Clone, Debug)]
pub struct CellSolution<T: Real> {
    pub report: StabilityReport<T>,
    pub onset: Option<(T, T)>,
    pub pv: PvCurve<T>,
    pub energy: EnergyCurve<T>,
}

#[derive(Clone, Debug)]
pub struct LandscapeCell<T: Real> {
    pub t_c: T,
    pub t_r: T,
    pub outcome: Result<CellSolution<T>, String>,
}

/// Trace and classify one cap per `(t_c, t_r)` grid point. Cells run in
/// parallel; failures are recorded in the cell and never abort the sweep.
pub fn landscape<T: Real>(
    base: &MetacapGeometry<T>,
    material: &Material<T>,
    tc_grid: &[T],
    tr_grid: &[T],
    opts: &LandscapeOptions<T>,
) -> Vec<LandscapeCell<T>> {
    let cells: Vec<(T, T)> = tc_grid
        .iter()
        .flat_map(|&tc| tr_grid.iter().map(move |&tr| (tc, tr)))
        .collect();
    cells
        .into_par_iter()
        .map(|(t_c, t_r)| {
            let outcome = landscape_cell(base, material, t_c, t_r, opts)
                .map_err(|e| e.to_string());
            LandscapeCell { t_c, t_r, outcome }
        })
        .collect()
}

fn landscape_cell<T: Real>(
    base: &MetacapGeometry<T>,
    material: &Material<T>,
    t_c: T,
    t_r: T,
    opts: &LandscapeOptions<T>,
) -> Result<CellSolution<T>, ContinuationError> {
    let mut geom = *base;
    geom.t_c = t_c;
    geom.t_r = t_r;
    let mesh = crate::geometry::build_metacap_mesh(&geom, material, opts.resolution)?;
    let analysis = analyze_cap(&mesh, &opts.analyze)?;
    let (pv, energy) = analysis.cap_curve()?;
    Ok(CellSolution {
        report: analysis.report,
        onset: analysis.onset,
        pv,
        energy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::truss::{TrussOracle, TrussParams, TrussSystem};
    use approx::assert_relative_eq;

    fn bistable_system() -> TrussSystem<f64> {
        TrussSystem::new(TrussParams::bistable_example())
    }

    #[test]
    fn traced_truss_matches_the_analytic_curve() {
        let sys = bistable_system();
        let span = sys.oracle.span();
        let path = trace_path(&sys, None, (0.0, span), &TraceOptions::default()).unwrap();
        assert!(path.completed());
        assert!(path.states.len() > 50);
        let scale = sys.oracle.params.bar_stiffness * sys.oracle.params.rise;
        for s in &path.states {
            let exact = sys.oracle.force(s.dv);
            assert!(
                (s.p - exact).abs() <= 1e-8 * scale,
                "dv {}: {} vs {}",
                s.dv,
                s.p,
                exact
            );
            assert_relative_eq!(
                s.energy.total,
                sys.oracle.energy(s.dv),
                max_relative = 1e-8,
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn stability_flags_flip_exactly_at_limit_points() {
        let sys = bistable_system();
        let span = sys.oracle.span();
        let path = trace_path(&sys, None, (0.0, span), &TraceOptions::default()).unwrap();
        let limits = sys.oracle.limit_points();
        assert_eq!(limits.len(), 2);
        for w in path.states.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if a.stable != b.stable {
                // a flip must bracket an analytic limit point
                let inside = limits
                    .iter()
                    .any(|&(d, _)| d >= a.dv.min(b.dv) && d <= a.dv.max(b.dv));
                assert!(inside, "flip at [{}, {}] without a limit point", a.dv, b.dv);
            } else {
                let inside = limits
                    .iter()
                    .any(|&(d, _)| d > a.dv.min(b.dv) && d < a.dv.max(b.dv));
                assert!(
                    !inside,
                    "missed flip spanning a limit point at [{}, {}]",
                    a.dv, b.dv
                );
            }
        }
    }

    #[test]
    fn pressure_is_the_energy_slope_along_the_path() {
        let sys = bistable_system();
        let span = sys.oracle.span();
        let opts = TraceOptions {
            dv_step_rel: 0.002,
            dv_step_max_rel: 0.005,
            ..TraceOptions::default()
        };
        let path = trace_path(&sys, None, (0.0, span), &opts).unwrap();
        let states = &path.states;
        let p_scale = states.iter().map(|s| s.p.abs()).fold(0.0, f64::max);
        for i in 1..states.len() - 1 {
            // second-order centered difference on the uneven volume grid
            let h1 = states[i].dv - states[i - 1].dv;
            let h0 = states[i + 1].dv - states[i].dv;
            let (e_prev, e_mid, e_next) = (
                states[i - 1].energy.total,
                states[i].energy.total,
                states[i + 1].energy.total,
            );
            let fd = (h1 * h1 * e_next + (h0 * h0 - h1 * h1) * e_mid - h0 * h0 * e_prev)
                / (h0 * h1 * (h0 + h1));
            let mid = states[i].p;
            assert!(
                (fd - mid).abs() <= 1e-3 * p_scale,
                "slope mismatch at {}: {} vs {}",
                states[i].dv,
                fd,
                mid
            );
        }
        // work consistency along the whole path
        let pv = path.to_pv_curve().unwrap();
        let (lo, hi) = pv.dv_range();
        let work = pv.work_integral(lo, hi).unwrap();
        let de = states.last().unwrap().energy.total - states[0].energy.total;
        assert_relative_eq!(work, de, max_relative = 1e-3);
    }

    #[test]
    fn classify_reproduces_the_analytic_release_and_barrier() {
        let oracle = TrussOracle::new(TrussParams::<f64>::bistable_example());
        let pv = oracle.pv_curve(10_000);
        let energy = oracle.energy_curve(10_000);
        let path = EquilibriumPath::from_pv_energy(&pv, &energy, Direction::Deflation).unwrap();
        let report = classify(&path).unwrap();
        assert_eq!(report.classification, Classification::Bistable);
        let (e_r, e_b, d_w) = oracle.stability().unwrap();
        assert_relative_eq!(report.e_r.unwrap(), e_r, max_relative = 1e-6);
        assert_relative_eq!(report.e_b.unwrap(), e_b, max_relative = 1e-6);
        assert_relative_eq!(report.everted_dv.unwrap(), d_w, max_relative = 1e-6);
        assert!(report.limit_points.len() >= 2);
    }

    #[test]
    fn classify_symmetric_wells_gives_zero_release() {
        let oracle = TrussOracle::new(TrussParams::<f64> {
            half_span: 1.0,
            rise: 0.8,
            bar_stiffness: 1.0,
            support_stiffness: 0.0,
        });
        let path = EquilibriumPath::from_pv_energy(
            &oracle.pv_curve(10_000),
            &oracle.energy_curve(10_000),
            Direction::Deflation,
        )
        .unwrap();
        let report = classify(&path).unwrap();
        assert_eq!(report.classification, Classification::Bistable);
        assert!(report.e_r.unwrap().abs() < 1e-9);
    }

    #[test]
    fn classify_monostable_truss() {
        let oracle = TrussOracle::new(TrussParams::<f64> {
            half_span: 1.0,
            rise: 0.2,
            bar_stiffness: 1.0,
            support_stiffness: 0.5,
        });
        let path = EquilibriumPath::from_pv_energy(
            &oracle.pv_curve(4000),
            &oracle.energy_curve(4000),
            Direction::Deflation,
        )
        .unwrap();
        let report = classify(&path).unwrap();
        assert_eq!(report.classification, Classification::Monostable);
        assert!(report.e_r.is_none());
    }

    #[test]
    fn classify_scales_linearly_with_modulus() {
        let oracle = TrussOracle::new(TrussParams::<f64>::bistable_example());
        let pv1 = oracle.pv_curve(5000);
        let en1 = oracle.energy_curve(5000);
        let scale = 2.0;
        let pv2 = PvCurve::new(
            pv1.samples().iter().map(|&(d, p)| (d, scale * p)).collect(),
            Direction::Inflation,
        )
        .unwrap();
        let en2 = EnergyCurve::new(
            en1.samples().iter().map(|&(d, e)| (d, scale * e)).collect(),
            Direction::Inflation,
        )
        .unwrap();
        let r1 = classify(
            &EquilibriumPath::from_pv_energy(&pv1, &en1, Direction::Deflation).unwrap(),
        )
        .unwrap();
        let r2 = classify(
            &EquilibriumPath::from_pv_energy(&pv2, &en2, Direction::Deflation).unwrap(),
        )
        .unwrap();
        assert_eq!(r1.classification, r2.classification);
        assert_relative_eq!(r2.e_r.unwrap(), scale * r1.e_r.unwrap(), max_relative = 1e-12);
        assert_relative_eq!(r2.e_b.unwrap(), scale * r1.e_b.unwrap(), max_relative = 1e-12);
        assert_relative_eq!(
            r2.everted_dv.unwrap(),
            r1.everted_dv.unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn tracing_is_deterministic() {
        let sys = bistable_system();
        let span = sys.oracle.span();
        let a = trace_path(&sys, None, (0.0, span), &TraceOptions::default()).unwrap();
        let b = trace_path(&sys, None, (0.0, span), &TraceOptions::default()).unwrap();
        assert_eq!(a.states.len(), b.states.len());
        for (sa, sb) in a.states.iter().zip(&b.states) {
            assert_eq!(sa.dv.to_bits(), sb.dv.to_bits());
            assert_eq!(sa.p.to_bits(), sb.p.to_bits());
            assert_eq!(sa.stable, sb.stable);
        }
    }

    #[test]
    fn truss_traces_in_single_precision() {
        let sys = TrussSystem::<f32>::new(TrussParams {
            half_span: 1.0,
            rise: 0.8,
            bar_stiffness: 1.0,
            support_stiffness: 0.02,
        });
        let span = sys.oracle.span();
        let path = trace_path(&sys, None, (0.0, span), &TraceOptions::default()).unwrap();
        assert!(path.completed());
        let scale = 1.0f32 * 0.8;
        for s in &path.states {
            assert!((s.p - sys.oracle.force(s.dv)).abs() <= 1e-3 * scale);
        }
    }

    #[test]
    fn deflation_requires_matching_direction() {
        let oracle = TrussOracle::new(TrussParams::<f64>::bistable_example());
        let path = EquilibriumPath::from_pv_energy(
            &oracle.pv_curve(1000),
            &oracle.energy_curve(1000),
            Direction::Inflation,
        )
        .unwrap();
        assert!(matches!(classify(&path), Err(ContinuationError::NotDeflation)));
    }
}
