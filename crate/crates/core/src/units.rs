//! Unit-suffixed quantity parsing and conversion.
//!
//! Everything internal is SI (m, Pa, J, m³, s). Configuration files and CSV
//! headers carry explicit unit suffixes; this module converts on ingest and
//! on output. A value without a unit suffix is rejected rather than guessed.

use crate::num::{lit, Real};
use thiserror::Error;

/// Physical dimension of a quantity, used to pick the legal unit table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quantity {
    Length,
    Angle,
    Pressure,
    Volume,
    Energy,
    Mass,
    Time,
    FlowRate,
    /// Volumetric conductance, volume per (time × pressure).
    Conductance,
    Frequency,
}

impl Quantity {
    /// Legal unit suffixes and their factors to SI.
    fn table(self) -> &'static [(&'static str, f64)] {
        match self {
            Quantity::Length => &[("m", 1.0), ("cm", 1e-2), ("mm", 1e-3), ("um", 1e-6)],
            Quantity::Angle => &[("rad", 1.0), ("deg", std::f64::consts::PI / 180.0)],
            Quantity::Pressure => &[("Pa", 1.0), ("kPa", 1e3), ("MPa", 1e6)],
            Quantity::Volume => &[("m3", 1.0), ("L", 1e-3), ("mL", 1e-6), ("uL", 1e-9)],
            Quantity::Energy => &[("J", 1.0), ("mJ", 1e-3), ("uJ", 1e-6)],
            Quantity::Mass => &[("kg", 1.0), ("g", 1e-3)],
            Quantity::Time => &[("s", 1.0), ("ms", 1e-3), ("min", 60.0)],
            Quantity::FlowRate => &[
                ("m3/s", 1.0),
                ("L/s", 1e-3),
                ("mL/s", 1e-6),
                ("mL/min", 1e-6 / 60.0),
            ],
            Quantity::Conductance => &[
                ("m3/(s*Pa)", 1.0),
                ("mL/(s*kPa)", 1e-9),
                ("L/(s*kPa)", 1e-6),
            ],
            Quantity::Frequency => &[("Hz", 1.0)],
        }
    }

    pub fn si_unit(self) -> &'static str {
        self.table()[0].0
    }

    /// SI factor for `unit`, if it is a legal suffix for this quantity.
    pub fn factor_of(self, unit: &str) -> Option<f64> {
        self.table().iter().find(|(u, _)| *u == unit).map(|(_, f)| *f)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum UnitError {
    #[error("empty quantity string")]
    Empty,
    #[error("missing unit suffix in {0:?} (expected e.g. {1:?})")]
    MissingUnit(String, &'static str),
    #[error("malformed number in {0:?}")]
    BadNumber(String),
    #[error("unknown {quantity:?} unit {unit:?}")]
    UnknownUnit { quantity: Quantity, unit: String },
}

/// Parse a `"value unit"` string (e.g. `"30 mm"`, `"101.3 kPa"`) into SI.
///
/// The unit suffix is mandatory; whitespace between value and unit is
/// optional for units that start with a letter.
pub fn parse_quantity<T: Real>(s: &str, quantity: Quantity) -> Result<T, UnitError> {
    let s = s.trim();
    if s.is_empty() {
        return Err(UnitError::Empty);
    }
    // Split at the end of the leading numeric token.
    let split = s
        .char_indices()
        .find(|&(_, c)| !(c.is_ascii_digit() || "+-.eE".contains(c)))
        .map(|(i, _)| i)
        .unwrap_or(s.len());
    // A trailing exponent sign like "1e-3" must not strand the digits.
    let (num_str, unit_str) = split_number(s, split);
    let unit_str = unit_str.trim();
    if unit_str.is_empty() {
        return Err(UnitError::MissingUnit(s.to_string(), quantity.si_unit()));
    }
    let value: f64 = num_str
        .trim()
        .parse()
        .map_err(|_| UnitError::BadNumber(s.to_string()))?;
    let factor = quantity
        .factor_of(unit_str)
        .ok_or_else(|| UnitError::UnknownUnit {
            quantity,
            unit: unit_str.to_string(),
        })?;
    Ok(lit::<T>(value) * lit::<T>(factor))
}

// "1e-3mL" splits into "1e-3" and "mL": the scan above stops at 'm' of "mL"
// only when 'e'/'E' inside the number has already consumed its exponent, so
// re-join cases where the numeric token ends with a dangling 'e' or sign.
fn split_number(s: &str, mut split: usize) -> (&str, &str) {
    let bytes = s.as_bytes();
    while split > 0 {
        let last = bytes[split - 1];
        if last == b'e' || last == b'E' || last == b'+' || last == b'-' || last == b'.' {
            split -= 1;
        } else {
            break;
        }
    }
    s.split_at(split)
}

/// Convert an SI value to `unit` for output.
pub fn convert_from_si(value_si: f64, quantity: Quantity, unit: &str) -> Option<f64> {
    quantity.factor_of(unit).map(|f| value_si / f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn parses_with_and_without_space() {
        let a: f64 = parse_quantity("30 mm", Quantity::Length).unwrap();
        let b: f64 = parse_quantity("30mm", Quantity::Length).unwrap();
        assert_relative_eq!(a, 0.030);
        assert_relative_eq!(b, 0.030);
    }

    #[test]
    fn parses_scientific_notation() {
        let v: f64 = parse_quantity("2.5e-6 m3/s", Quantity::FlowRate).unwrap();
        assert_relative_eq!(v, 2.5e-6);
        let v: f64 = parse_quantity("1e-3mL", Quantity::Volume).unwrap();
        assert_relative_eq!(v, 1e-9);
    }

    #[test]
    fn common_conversions() {
        let p: f64 = parse_quantity("101.3 kPa", Quantity::Pressure).unwrap();
        assert_relative_eq!(p, 101300.0);
        let v: f64 = parse_quantity("10 mL", Quantity::Volume).unwrap();
        assert_relative_eq!(v, 1e-5);
        let a: f64 = parse_quantity("57.85 deg", Quantity::Angle).unwrap();
        assert_relative_eq!(a, 57.85_f64.to_radians());
        let e: f64 = parse_quantity("116.9 mJ", Quantity::Energy).unwrap();
        assert_relative_eq!(e, 0.1169);
        let q: f64 = parse_quantity("145 mL/min", Quantity::FlowRate).unwrap();
        assert_relative_eq!(q, 145.0e-6 / 60.0);
    }

    #[test]
    fn missing_unit_is_an_error() {
        let err = parse_quantity::<f64>("30", Quantity::Length).unwrap_err();
        assert!(matches!(err, UnitError::MissingUnit(..)));
    }

    #[test]
    fn wrong_kind_unit_is_an_error() {
        let err = parse_quantity::<f64>("30 kPa", Quantity::Length).unwrap_err();
        assert!(matches!(err, UnitError::UnknownUnit { .. }));
    }

    #[test]
    fn round_trip_output_conversion() {
        let si: f64 = parse_quantity("3.5 kPa", Quantity::Pressure).unwrap();
        let back = convert_from_si(si, Quantity::Pressure, "kPa").unwrap();
        assert_relative_eq!(back, 3.5);
    }
}
