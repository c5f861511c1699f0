//! Snap-through analysis of rib-patterned spherical caps ("metacaps") and
//! the pneumatic systems built on them.
//!
//! The crate covers the full chain: parametric ribbed-cap geometry and
//! meshing, discrete-shell energetics, volume-controlled equilibrium
//! continuation with bistability classification, pressure–volume curve
//! algebra, Boyle-law snap transitions against a finite air chamber, the
//! coupled cap-plus-bending-actuator system, and a threshold-hysteresis
//! relaxation-oscillator valve.
//!
//! All numerics are generic over the scalar type through [`num::Real`];
//! the aliases below pin the common `f64` instantiations.

pub mod continuation;
pub mod coupled;
pub mod curves;
pub mod geometry;
pub mod linalg;
pub mod num;
pub mod pneumatics;
pub mod shell;
pub mod truss;
pub mod units;
pub mod valve;

pub use num::Real;

/// `f64` instantiations of the core types.
pub type MetacapGeometryF64 = geometry::MetacapGeometry<f64>;
pub type MaterialF64 = geometry::Material<f64>;
pub type ShellMeshF64 = geometry::ShellMesh<f64>;
pub type ShellModelF64 = shell::ShellModel<f64>;
pub type DisplacementFieldF64 = shell::DisplacementField<f64>;
pub type PvCurveF64 = curves::PvCurve<f64>;
pub type EnergyCurveF64 = curves::EnergyCurve<f64>;
pub type EquilibriumPathF64 = continuation::EquilibriumPath<f64>;
pub type StabilityReportF64 = continuation::StabilityReport<f64>;
pub type CapAnalysisF64 = continuation::CapAnalysis<f64>;
pub type ChamberStateF64 = pneumatics::ChamberState<f64>;
pub type SnapEventF64 = pneumatics::SnapEvent<f64>;
pub type ActuatorModelF64 = coupled::ActuatorModel<f64>;
pub type CoupledStateF64 = coupled::CoupledState<f64>;
pub type ValveConfigF64 = valve::ValveConfig<f64>;
pub type ValveTraceF64 = valve::ValveTrace<f64>;
