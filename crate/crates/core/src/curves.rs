//! Pressure–volume and energy–volume curves.
//!
//! Curves are immutable sampled relations over strictly increasing volume
//! change, independent of how they were produced (traced, analytic, or
//! imported). Interpolation is piecewise-linear so monotone branches are
//! preserved and intersection problems stay exact per segment. Queries
//! outside the sampled range are errors, never extrapolations.

use crate::num::{lit, to_f64, Real};
use crate::units::Quantity;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

/// Orientation a curve was sampled in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Inflation,
    Deflation,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::Inflation => write!(f, "inflation"),
            Direction::Deflation => write!(f, "deflation"),
        }
    }
}

/// Maximal run of consecutive segments whose slope keeps one sign.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Branch {
    /// First segment index of the run.
    pub first_seg: usize,
    /// One past the last segment index of the run.
    pub end_seg: usize,
    /// Slope sign of the run: +1 rising, -1 falling, 0 flat.
    pub sign: i8,
}

impl Branch {
    pub fn is_rising(&self) -> bool {
        self.sign > 0
    }
}

#[derive(Debug, Error)]
pub enum CurveError {
    #[error("curve needs at least two samples, got {0}")]
    TooFewSamples(usize),
    #[error("volume samples must be strictly increasing: sample {index} does not advance")]
    NonMonotone { index: usize },
    #[error("non-finite value at sample {index}")]
    NonFinite { index: usize },
    #[error("query {value} outside sampled range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("energy integration requires an inflation curve starting at rest (first sample at zero volume change)")]
    NotFromRest,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {what}")]
    Malformed { line: usize, what: String },
}

/// Sampled gauge-pressure vs. volume-change relation with branch structure.
#[derive(Clone, Debug)]
pub struct PvCurve<T: Real> {
    samples: Vec<(T, T)>,
    direction: Direction,
    branches: Vec<Branch>,
    /// Cumulative trapezoidal work from the first sample, per sample.
    work_prefix: Vec<T>,
}

impl<T: Real> PvCurve<T> {
    /// Build a curve from `(dv, p)` samples; `dv` must be strictly increasing.
    pub fn new(samples: Vec<(T, T)>, direction: Direction) -> Result<Self, CurveError> {
        if samples.len() < 2 {
            return Err(CurveError::TooFewSamples(samples.len()));
        }
        for (i, &(dv, p)) in samples.iter().enumerate() {
            if !dv.is_finite() || !p.is_finite() {
                return Err(CurveError::NonFinite { index: i });
            }
            if i > 0 && dv <= samples[i - 1].0 {
                return Err(CurveError::NonMonotone { index: i });
            }
        }
        let branches = segment_branches(&samples);
        let work_prefix = cumulative_work(&samples);
        Ok(Self {
            samples,
            direction,
            branches,
            work_prefix,
        })
    }

    pub fn samples(&self) -> &[(T, T)] {
        &self.samples
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn with_direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }

    /// Monotone-slope branch partition of the segments.
    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn dv_range(&self) -> (T, T) {
        (self.samples[0].0, self.samples[self.samples.len() - 1].0)
    }

    fn check_range(&self, dv: T) -> Result<(), CurveError> {
        let (lo, hi) = self.dv_range();
        if dv < lo || dv > hi {
            return Err(CurveError::OutOfRange {
                value: to_f64(dv),
                lo: to_f64(lo),
                hi: to_f64(hi),
            });
        }
        Ok(())
    }

    /// Index of the segment containing `dv` (ties at a sample resolve left).
    fn segment_of(&self, dv: T) -> usize {
        let n = self.samples.len();
        match self
            .samples
            .binary_search_by(|&(x, _)| x.partial_cmp(&dv).expect("finite"))
        {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    /// Piecewise-linear interpolation of pressure at `dv`.
    pub fn pressure_at(&self, dv: T) -> Result<T, CurveError> {
        self.check_range(dv)?;
        let i = self.segment_of(dv);
        let (x0, y0) = self.samples[i];
        let (x1, y1) = self.samples[i + 1];
        if dv == x0 {
            return Ok(y0);
        }
        if dv == x1 {
            return Ok(y1);
        }
        let s = (dv - x0) / (x1 - x0);
        Ok(y0 + s * (y1 - y0))
    }

    /// Cumulative work `∫ p d(dv)` from the first sample up to `dv`.
    fn work_from_start(&self, dv: T) -> Result<T, CurveError> {
        self.check_range(dv)?;
        let i = self.segment_of(dv);
        let (x0, y0) = self.samples[i];
        if dv == x0 {
            return Ok(self.work_prefix[i]);
        }
        let p = self.pressure_at(dv)?;
        let half = lit::<T>(0.5);
        Ok(self.work_prefix[i] + half * (y0 + p) * (dv - x0))
    }

    /// Signed trapezoidal integral `∫ p d(dv)` from `dv_a` to `dv_b`.
    ///
    /// The sign follows the orientation of the limits: swapping them negates
    /// the result. Additivity over a common interior point is exact up to
    /// floating-point rounding because both sides share the same prefix sums.
    pub fn work_integral(&self, dv_a: T, dv_b: T) -> Result<T, CurveError> {
        Ok(self.work_from_start(dv_b)? - self.work_from_start(dv_a)?)
    }

    /// Integrate pressure into a strain-energy curve with `E(0) = 0`.
    ///
    /// Valid quasi-statically: the work done by the pressure equals the
    /// stored elastic energy along an inflation path from rest.
    pub fn energy_from_pv(&self) -> Result<EnergyCurve<T>, CurveError> {
        if self.direction != Direction::Inflation || self.samples[0].0 != T::zero() {
            return Err(CurveError::NotFromRest);
        }
        let samples = self
            .samples
            .iter()
            .zip(&self.work_prefix)
            .map(|(&(dv, _), &w)| (dv, w))
            .collect();
        EnergyCurve::new(samples, self.direction)
    }

    /// Write the curve as CSV in the given units (`None` means SI).
    pub fn export_csv(
        &self,
        path: &Path,
        units: Option<(&str, &str)>,
    ) -> Result<(), CurveError> {
        let (vu, pu) = units.unwrap_or(("m3", "Pa"));
        let vf = Quantity::Volume
            .factor_of(vu)
            .ok_or_else(|| bad_unit(Quantity::Volume, vu))?;
        let pf = Quantity::Pressure
            .factor_of(pu)
            .ok_or_else(|| bad_unit(Quantity::Pressure, pu))?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "dv_{vu},p_{pu}")?;
        for &(dv, p) in &self.samples {
            writeln!(w, "{:.16e},{:.16e}", to_f64(dv) / vf, to_f64(p) / pf)?;
        }
        Ok(())
    }

    /// Read a curve from CSV. Lines starting with `#` are skipped; the first
    /// data line must be the unit header `dv_<unit>,p_<unit>`. Values are
    /// converted to SI on ingest. The direction tag defaults to inflation.
    pub fn import_csv(path: &Path) -> Result<Self, CurveError> {
        let (samples, _) = read_two_column_csv::<T>(path, "dv", "p", Quantity::Volume, Quantity::Pressure)?;
        Self::new(samples, Direction::Inflation)
    }
}

/// Sampled strain-energy vs. volume-change relation.
#[derive(Clone, Debug)]
pub struct EnergyCurve<T: Real> {
    samples: Vec<(T, T)>,
    direction: Direction,
}

impl<T: Real> EnergyCurve<T> {
    pub fn new(samples: Vec<(T, T)>, direction: Direction) -> Result<Self, CurveError> {
        if samples.len() < 2 {
            return Err(CurveError::TooFewSamples(samples.len()));
        }
        for (i, &(dv, e)) in samples.iter().enumerate() {
            if !dv.is_finite() || !e.is_finite() {
                return Err(CurveError::NonFinite { index: i });
            }
            if i > 0 && dv <= samples[i - 1].0 {
                return Err(CurveError::NonMonotone { index: i });
            }
        }
        Ok(Self { samples, direction })
    }

    pub fn samples(&self) -> &[(T, T)] {
        &self.samples
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn dv_range(&self) -> (T, T) {
        (self.samples[0].0, self.samples[self.samples.len() - 1].0)
    }

    /// Piecewise-linear interpolation of energy at `dv`.
    pub fn energy_at(&self, dv: T) -> Result<T, CurveError> {
        let (lo, hi) = self.dv_range();
        if dv < lo || dv > hi {
            return Err(CurveError::OutOfRange {
                value: to_f64(dv),
                lo: to_f64(lo),
                hi: to_f64(hi),
            });
        }
        let i = match self
            .samples
            .binary_search_by(|&(x, _)| x.partial_cmp(&dv).expect("finite"))
        {
            Ok(i) => return Ok(self.samples[i].1),
            Err(i) => i - 1,
        };
        let (x0, y0) = self.samples[i];
        let (x1, y1) = self.samples[i + 1];
        let s = (dv - x0) / (x1 - x0);
        Ok(y0 + s * (y1 - y0))
    }

    pub fn export_csv(
        &self,
        path: &Path,
        units: Option<(&str, &str)>,
    ) -> Result<(), CurveError> {
        let (vu, eu) = units.unwrap_or(("m3", "J"));
        let vf = Quantity::Volume
            .factor_of(vu)
            .ok_or_else(|| bad_unit(Quantity::Volume, vu))?;
        let ef = Quantity::Energy
            .factor_of(eu)
            .ok_or_else(|| bad_unit(Quantity::Energy, eu))?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "dv_{vu},e_{eu}")?;
        for &(dv, e) in &self.samples {
            writeln!(w, "{:.16e},{:.16e}", to_f64(dv) / vf, to_f64(e) / ef)?;
        }
        Ok(())
    }

    pub fn import_csv(path: &Path) -> Result<Self, CurveError> {
        let (samples, _) = read_two_column_csv::<T>(path, "dv", "e", Quantity::Volume, Quantity::Energy)?;
        Self::new(samples, Direction::Inflation)
    }
}

fn bad_unit(q: Quantity, unit: &str) -> CurveError {
    CurveError::Malformed {
        line: 0,
        what: format!("unknown {q:?} unit {unit:?}"),
    }
}

fn segment_branches<T: Real>(samples: &[(T, T)]) -> Vec<Branch> {
    let nseg = samples.len() - 1;
    let sign_of = |i: usize| -> i8 {
        let dy = samples[i + 1].1 - samples[i].1;
        if dy > T::zero() {
            1
        } else if dy < T::zero() {
            -1
        } else {
            0
        }
    };
    let mut branches = Vec::new();
    let mut start = 0;
    let mut sign = sign_of(0);
    for i in 1..nseg {
        let s = sign_of(i);
        if s != sign {
            branches.push(Branch {
                first_seg: start,
                end_seg: i,
                sign,
            });
            start = i;
            sign = s;
        }
    }
    branches.push(Branch {
        first_seg: start,
        end_seg: nseg,
        sign,
    });
    branches
}

fn cumulative_work<T: Real>(samples: &[(T, T)]) -> Vec<T> {
    let half = lit::<T>(0.5);
    let mut acc = T::zero();
    let mut out = Vec::with_capacity(samples.len());
    out.push(acc);
    for w in samples.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        acc += half * (y0 + y1) * (x1 - x0);
        out.push(acc);
    }
    out
}

/// Shared two-column CSV reader: returns SI samples and the header units.
fn read_two_column_csv<T: Real>(
    path: &Path,
    col_a: &str,
    col_b: &str,
    qa: Quantity,
    qb: Quantity,
) -> Result<(Vec<(T, T)>, (String, String)), CurveError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut samples: Vec<(T, T)> = Vec::new();
    let mut units: Option<(f64, f64, String, String)> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if units.is_none() {
            let mut fields = trimmed.split(',');
            let ua = header_unit(fields.next(), col_a, lineno)?;
            let ub = header_unit(fields.next(), col_b, lineno)?;
            if fields.next().is_some() {
                return Err(CurveError::Malformed {
                    line: lineno,
                    what: "expected exactly two columns".into(),
                });
            }
            let fa = qa.factor_of(&ua).ok_or_else(|| CurveError::Malformed {
                line: lineno,
                what: format!("unknown {qa:?} unit {ua:?} in header"),
            })?;
            let fb = qb.factor_of(&ub).ok_or_else(|| CurveError::Malformed {
                line: lineno,
                what: format!("unknown {qb:?} unit {ub:?} in header"),
            })?;
            units = Some((fa, fb, ua, ub));
            continue;
        }
        let (fa, fb, _, _) = units.as_ref().unwrap();
        let mut fields = trimmed.split(',');
        let a: f64 = parse_field(fields.next(), lineno)?;
        let b: f64 = parse_field(fields.next(), lineno)?;
        if fields.next().is_some() {
            return Err(CurveError::Malformed {
                line: lineno,
                what: "expected exactly two columns".into(),
            });
        }
        let dv = lit::<T>(a * fa);
        let val = lit::<T>(b * fb);
        if let Some(&(prev, _)) = samples.last() {
            if dv <= prev {
                return Err(CurveError::Malformed {
                    line: lineno,
                    what: format!("volume column not strictly increasing ({a} after {})", to_f64(prev) / fa),
                });
            }
        }
        samples.push((dv, val));
    }
    let (_, _, ua, ub) = units.ok_or(CurveError::Malformed {
        line: 0,
        what: "missing unit header".into(),
    })?;
    Ok((samples, (ua, ub)))
}

fn header_unit(field: Option<&str>, expected_prefix: &str, line: usize) -> Result<String, CurveError> {
    let field = field.ok_or_else(|| CurveError::Malformed {
        line,
        what: "missing header column".into(),
    })?;
    let field = field.trim();
    let prefix = format!("{expected_prefix}_");
    field
        .strip_prefix(&prefix)
        .map(str::to_string)
        .ok_or_else(|| CurveError::Malformed {
            line,
            what: format!("header column {field:?} must be {expected_prefix}_<unit>"),
        })
}

fn parse_field(field: Option<&str>, line: usize) -> Result<f64, CurveError> {
    let field = field.ok_or_else(|| CurveError::Malformed {
        line,
        what: "missing column".into(),
    })?;
    field.trim().parse().map_err(|_| CurveError::Malformed {
        line,
        what: format!("malformed number {field:?}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn linear() -> PvCurve<f64> {
        PvCurve::new(vec![(0.0, 0.0), (2.0, 4.0)], Direction::Inflation).unwrap()
    }

    #[test]
    fn pressure_at_nodes_and_midpoint() {
        let c = linear();
        assert_eq!(c.pressure_at(0.0).unwrap(), 0.0);
        assert_eq!(c.pressure_at(2.0).unwrap(), 4.0);
        assert_relative_eq!(c.pressure_at(1.0).unwrap(), 2.0);
    }

    #[test]
    fn out_of_range_is_an_error() {
        let c = linear();
        assert!(matches!(
            c.pressure_at(-0.1),
            Err(CurveError::OutOfRange { .. })
        ));
        assert!(matches!(
            c.pressure_at(2.1),
            Err(CurveError::OutOfRange { .. })
        ));
    }

    #[test]
    fn work_integral_constant_pressure() {
        let c = PvCurve::new(vec![(0.0, 3.0), (5.0, 3.0)], Direction::Inflation).unwrap();
        assert_relative_eq!(c.work_integral(0.0, 5.0).unwrap(), 15.0);
        assert_eq!(c.work_integral(2.0, 2.0).unwrap(), 0.0);
        assert_relative_eq!(c.work_integral(5.0, 0.0).unwrap(), -15.0);
    }

    #[test]
    fn energy_of_linear_curve_is_quadratic() {
        let k = 2.0;
        let samples: Vec<_> = (0..=100).map(|i| {
            let dv = i as f64 * 0.01;
            (dv, k * dv)
        }).collect();
        let c = PvCurve::new(samples, Direction::Inflation).unwrap();
        let e = c.energy_from_pv().unwrap();
        for &(dv, en) in e.samples() {
            assert_relative_eq!(en, 0.5 * k * dv * dv, max_relative = 1e-12, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_pressure_curve_has_zero_energy() {
        let c = PvCurve::new(vec![(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)], Direction::Inflation)
            .unwrap();
        let e = c.energy_from_pv().unwrap();
        assert!(e.samples().iter().all(|&(_, en)| en == 0.0));
    }

    #[test]
    fn branch_segmentation_covers_all_segments() {
        // rise, fall, rise: the bistable signature.
        let c = PvCurve::new(
            vec![(0.0, 0.0), (1.0, 2.0), (2.0, -1.0), (3.0, -0.5), (4.0, 1.0)],
            Direction::Deflation,
        )
        .unwrap();
        let b = c.branches();
        assert_eq!(b.len(), 3);
        assert_eq!(b[0].sign, 1);
        assert_eq!(b[1].sign, -1);
        assert_eq!(b[2].sign, 1);
        assert_eq!(b[0].first_seg, 0);
        assert_eq!(b[b.len() - 1].end_seg, c.samples().len() - 1);
        for w in b.windows(2) {
            assert_eq!(w[0].end_seg, w[1].first_seg);
        }
    }

    #[test]
    fn non_monotone_rejected() {
        let err = PvCurve::new(vec![(0.0, 0.0), (0.0, 1.0)], Direction::Inflation).unwrap_err();
        assert!(matches!(err, CurveError::NonMonotone { index: 1 }));
    }

    #[test]
    fn csv_round_trip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        let c = PvCurve::new(
            vec![(0.0, 0.0), (1.0e-6, 2.34567890123456789e3), (2.5e-6, -7.0e2)],
            Direction::Inflation,
        )
        .unwrap();
        c.export_csv(&path, None).unwrap();
        let back = PvCurve::<f64>::import_csv(&path).unwrap();
        assert_eq!(c.samples(), back.samples());
    }

    #[test]
    fn csv_mixed_units_convert_to_si() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        std::fs::write(&path, "dv_mL,p_kPa\n0,0\n10,101.3\n").unwrap();
        let c = PvCurve::<f64>::import_csv(&path).unwrap();
        let (dv, _) = c.samples()[1];
        assert_relative_eq!(dv, 1.0e-5, max_relative = 1e-12);
        assert_relative_eq!(c.pressure_at(dv).unwrap(), 101300.0);
    }

    #[test]
    fn csv_decreasing_rows_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "dv_m3,p_Pa\n0,0\n2,1\n1,1\n").unwrap();
        let err = PvCurve::<f64>::import_csv(&path).unwrap_err();
        match err {
            CurveError::Malformed { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn csv_missing_unit_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "dv,p\n0,0\n1,1\n").unwrap();
        let err = PvCurve::<f64>::import_csv(&path).unwrap_err();
        assert!(matches!(err, CurveError::Malformed { line: 1, .. }));
    }
}
