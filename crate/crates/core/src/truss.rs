//! Closed-form two-bar (von Mises) truss surrogate.
//!
//! Two elastic bars pinned at `(-w, 0)` and `(w, 0)` meet at an apex of rise
//! `h` that moves vertically; an optional grounded spring at the apex breaks
//! the energy degeneracy of the two wells. The apex displacement stands in
//! for the volume change and the applied force for the pressure, giving an
//! exactly solvable snap-through problem against which the continuation,
//! classification, and snap bookkeeping are validated.

use crate::continuation::{ConstrainedSystem, SystemScales};
use crate::curves::{Direction, EnergyCurve, PvCurve};
use crate::num::{lit, Real};
use crate::shell::EnergyBreakdown;

#[derive(Clone, Copy, Debug)]
pub struct TrussParams<T: Real> {
    /// Half distance between the supports.
    pub half_span: T,
    /// Initial apex height above the support line.
    pub rise: T,
    /// Combined axial stiffness of the two bars.
    pub bar_stiffness: T,
    /// Grounded spring at the apex; zero gives energy-degenerate wells.
    pub support_stiffness: T,
}

impl<T: Real> TrussParams<T> {
    /// A comfortably bistable configuration with distinct well energies.
    pub fn bistable_example() -> Self {
        Self {
            half_span: T::one(),
            rise: lit(0.8),
            bar_stiffness: T::one(),
            support_stiffness: lit(0.02),
        }
    }
}

/// Analytic force, energy, equilibria, and limit points of the truss.
#[derive(Clone, Copy, Debug)]
pub struct TrussOracle<T: Real> {
    pub params: TrussParams<T>,
}

impl<T: Real> TrussOracle<T> {
    pub fn new(params: TrussParams<T>) -> Self {
        assert!(params.half_span > T::zero(), "half_span must be positive");
        assert!(params.rise > T::zero(), "rise must be positive");
        assert!(params.bar_stiffness > T::zero(), "bar stiffness must be positive");
        assert!(params.support_stiffness >= T::zero());
        Self { params }
    }

    fn bar_length(&self, d: T) -> T {
        let w = self.params.half_span;
        let z = self.params.rise - d;
        (w * w + z * z).sqrt()
    }

    fn rest_length(&self) -> T {
        self.bar_length(T::zero())
    }

    /// Stored energy at apex displacement `d`.
    pub fn energy(&self, d: T) -> T {
        let k = self.params.bar_stiffness;
        let ks = self.params.support_stiffness;
        let dl = self.bar_length(d) - self.rest_length();
        k * dl * dl + lit::<T>(0.5) * ks * d * d
    }

    /// Applied force conjugate to `d` (the pressure surrogate).
    pub fn force(&self, d: T) -> T {
        let k = self.params.bar_stiffness;
        let ks = self.params.support_stiffness;
        let l = self.bar_length(d);
        let dl = l - self.rest_length();
        let two = lit::<T>(2.0);
        two * k * dl * (d - self.params.rise) / l + ks * d
    }

    /// Derivative of the force (the 1-dof tangent stiffness).
    pub fn force_derivative(&self, d: T) -> T {
        let k = self.params.bar_stiffness;
        let ks = self.params.support_stiffness;
        let w = self.params.half_span;
        let l = self.bar_length(d);
        let z = d - self.params.rise;
        let dl = l - self.rest_length();
        let two = lit::<T>(2.0);
        two * k * (z * z / (l * l) + dl * w * w / (l * l * l)) + ks
    }

    /// Upper end of the displacement range the oracle samples.
    pub fn span(&self) -> T {
        self.params.rise * lit::<T>(2.4)
    }

    /// Roots of the force over `(0, span]`: the nontrivial equilibria.
    pub fn equilibria(&self) -> Vec<T> {
        let lo = self.span() * lit::<T>(1e-9);
        scan_roots(lo, self.span(), 4000, |d| self.force(d))
    }

    /// Limit points `(d, force)` where the force derivative changes sign.
    pub fn limit_points(&self) -> Vec<(T, T)> {
        scan_roots(T::zero(), self.span(), 4000, |d| self.force_derivative(d))
            .into_iter()
            .map(|d| (d, self.force(d)))
            .collect()
    }

    /// Whether the truss is bistable, and if so its exact energy release,
    /// energy barrier, and everted-well location.
    pub fn stability(&self) -> Option<(T, T, T)> {
        let eq = self.equilibria();
        // bistable: an unstable crossing followed by a stable well
        let mut unstable = None;
        let mut well = None;
        for d in eq {
            if self.force_derivative(d) < T::zero() {
                unstable = Some(d);
            } else if unstable.is_some() {
                well = Some(d);
                break;
            }
        }
        let (du, dw) = (unstable?, well?);
        let e_r = self.energy(dw);
        let e_b = self.energy(du) - self.energy(dw);
        Some((e_r, e_b, dw))
    }

    /// Displacement on the far rising branch where the force equals `p`,
    /// if the truss is bistable and `p` is reachable there.
    pub fn far_branch_at_force(&self, p: T) -> Option<T> {
        let limits = self.limit_points();
        if limits.len() < 2 {
            return None;
        }
        let start = limits[1].0; // second limit point opens the far branch
        let hi = self.span();
        if (self.force(start) - p) * (self.force(hi) - p) > T::zero() {
            return None;
        }
        Some(bisect(start, hi, |d| self.force(d) - p))
    }

    /// Densely sampled force–displacement curve with the exact equilibria
    /// and limit points included as samples, so curve queries reproduce the
    /// closed forms to machine precision.
    pub fn pv_curve(&self, samples: usize) -> PvCurve<T> {
        let grid = self.sample_grid(samples);
        let pts = grid.iter().map(|&d| (d, self.force(d))).collect();
        PvCurve::new(pts, Direction::Inflation).expect("oracle grid is monotone")
    }

    pub fn energy_curve(&self, samples: usize) -> EnergyCurve<T> {
        let grid = self.sample_grid(samples);
        let pts = grid.iter().map(|&d| (d, self.energy(d))).collect();
        EnergyCurve::new(pts, Direction::Inflation).expect("oracle grid is monotone")
    }

    fn sample_grid(&self, samples: usize) -> Vec<T> {
        let n = samples.max(16);
        let span = self.span();
        let mut grid: Vec<T> = (0..=n)
            .map(|i| span * lit::<T>(i as f64) / lit::<T>(n as f64))
            .collect();
        for (d, _) in self.limit_points() {
            grid.push(d);
        }
        for d in self.equilibria() {
            grid.push(d);
        }
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        grid.dedup_by(|a, b| (*a - *b).abs() < span * lit::<T>(1e-13));
        grid
    }
}

/// Analytic curve pair and, when bistable, `(e_r, e_b)`.
pub fn reference_truss<T: Real>(
    params: TrussParams<T>,
    samples: usize,
) -> (PvCurve<T>, EnergyCurve<T>, Option<(T, T)>) {
    let oracle = TrussOracle::new(params);
    let release = oracle.stability().map(|(er, eb, _)| (er, eb));
    (oracle.pv_curve(samples), oracle.energy_curve(samples), release)
}

fn scan_roots<T: Real>(lo: T, hi: T, steps: usize, f: impl Fn(T) -> T) -> Vec<T> {
    let mut roots = Vec::new();
    let n = steps.max(8);
    let step = (hi - lo) / lit::<T>(n as f64);
    let mut x0 = lo;
    let mut f0 = f(x0);
    for i in 1..=n {
        let x1 = lo + step * lit::<T>(i as f64);
        let f1 = f(x1);
        if f0 == T::zero() {
            roots.push(x0);
        } else if f0 * f1 < T::zero() {
            roots.push(bisect(x0, x1, &f));
        }
        x0 = x1;
        f0 = f1;
    }
    if f0 == T::zero() {
        roots.push(x0);
    }
    roots
}

fn bisect<T: Real>(mut lo: T, mut hi: T, f: impl Fn(T) -> T) -> T {
    let mut flo = f(lo);
    let half = lit::<T>(0.5);
    for _ in 0..200 {
        let mid = (lo + hi) * half;
        if mid == lo || mid == hi {
            return mid;
        }
        let fm = f(mid);
        if fm == T::zero() {
            return mid;
        }
        if (flo > T::zero()) == (fm > T::zero()) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    (lo + hi) * half
}

/// The truss as a 1-dof constrained system for the continuation solver.
pub struct TrussSystem<T: Real> {
    pub oracle: TrussOracle<T>,
}

impl<T: Real> TrussSystem<T> {
    pub fn new(params: TrussParams<T>) -> Self {
        Self {
            oracle: TrussOracle::new(params),
        }
    }
}

impl<T: Real> ConstrainedSystem<T> for TrussSystem<T> {
    fn num_dof(&self) -> usize {
        1
    }

    fn energy(&self, q: &[T]) -> Result<EnergyBreakdown<T>, crate::continuation::SystemError> {
        Ok(EnergyBreakdown::new(self.oracle.energy(q[0]), T::zero()))
    }

    fn energy_gradient(
        &self,
        q: &[T],
        out: &mut [T],
    ) -> Result<(), crate::continuation::SystemError> {
        out[0] = self.oracle.force(q[0]);
        Ok(())
    }

    fn volume_change(&self, q: &[T]) -> Result<T, crate::continuation::SystemError> {
        Ok(q[0])
    }

    fn volume_change_gradient(
        &self,
        _q: &[T],
        out: &mut [T],
    ) -> Result<(), crate::continuation::SystemError> {
        out[0] = T::one();
        Ok(())
    }

    fn tangent_profile(&self) -> Vec<usize> {
        vec![0]
    }

    fn assemble_tangent(
        &self,
        q: &[T],
        _p: T,
        k: &mut crate::linalg::SkylineMatrix<T>,
    ) -> Result<(), crate::continuation::SystemError> {
        k.add(0, 0, self.oracle.force_derivative(q[0]));
        Ok(())
    }

    fn scales(&self) -> SystemScales<T> {
        let p = &self.oracle.params;
        SystemScales {
            force: p.bar_stiffness * p.rise,
            volume: p.rise,
            pressure: p.bar_stiffness,
            stability: p.bar_stiffness,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn symmetric_truss_has_degenerate_wells() {
        let params = TrussParams::<f64> {
            half_span: 1.0,
            rise: 0.8,
            bar_stiffness: 1.0,
            support_stiffness: 0.0,
        };
        let oracle = TrussOracle::new(params);
        let (e_r, e_b, d_w) = oracle.stability().expect("bistable");
        assert_relative_eq!(e_r, 0.0, epsilon = 1e-12);
        assert!(e_b > 0.0);
        assert_relative_eq!(d_w, 2.0 * params.rise, max_relative = 1e-10);
    }

    #[test]
    fn shallow_truss_with_support_spring_is_monostable() {
        let params = TrussParams::<f64> {
            half_span: 1.0,
            rise: 0.2,
            bar_stiffness: 1.0,
            support_stiffness: 0.5,
        };
        let oracle = TrussOracle::new(params);
        assert!(oracle.stability().is_none());
        assert!(oracle.limit_points().is_empty());
    }

    #[test]
    fn generic_truss_wells_and_barrier_are_consistent() {
        let oracle = TrussOracle::new(TrussParams::<f64>::bistable_example());
        let (e_r, e_b, d_w) = oracle.stability().expect("bistable");
        assert!(e_r > 0.0);
        assert!(e_b > 0.0);
        // the well is a zero-force point with positive stiffness
        assert_relative_eq!(oracle.force(d_w), 0.0, epsilon = 1e-12);
        assert!(oracle.force_derivative(d_w) > 0.0);
        // two limit points with force dropping between them
        let lp = oracle.limit_points();
        assert_eq!(lp.len(), 2);
        assert!(lp[0].1 > lp[1].1);
    }

    #[test]
    fn force_matches_energy_derivative() {
        let oracle = TrussOracle::new(TrussParams::<f64>::bistable_example());
        let h = 1e-7;
        for i in 1..20 {
            let d = 0.09 * i as f64;
            let fd = (oracle.energy(d + h) - oracle.energy(d - h)) / (2.0 * h);
            assert_relative_eq!(fd, oracle.force(d), max_relative = 1e-6, epsilon = 1e-10);
        }
    }

    #[test]
    fn curve_embeds_exact_critical_points() {
        let oracle = TrussOracle::new(TrussParams::<f64>::bistable_example());
        let curve = oracle.pv_curve(10_000);
        for (d, p) in oracle.limit_points() {
            assert_relative_eq!(curve.pressure_at(d).unwrap(), p, max_relative = 1e-14, epsilon = 1e-15);
        }
        // interpolant accuracy between nodes
        let span = oracle.span();
        for i in 0..500 {
            let d = span * (i as f64 + 0.5) / 500.0;
            let exact = oracle.force(d);
            let interp = curve.pressure_at(d).unwrap();
            assert_relative_eq!(interp, exact, max_relative = 1e-6, epsilon = 1e-9);
        }
    }
}
