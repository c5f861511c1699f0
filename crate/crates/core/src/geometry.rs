//! Parametric ribbed-cap geometry and its triangulated shell mesh.
//!
//! A cap is a spherical surface of radius `r` from the pole down to polar
//! angle `phi`, clamped at the rim. Stiffening is described by a piecewise
//! constant thickness field: one circumferential rib (an annulus between
//! `phi_o` and `phi_c`) and `n_ribs` radial ribs (sectors of azimuthal width
//! `theta_r` between `phi_c` and `phi_r`). Uniform caps are the degenerate
//! case `t_c = t_r = 0`.

use crate::num::{lit, to_f64, Real};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

/// Cap and rib parameters. Angles in radians, lengths in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetacapGeometry<T: Real> {
    /// Cap radius.
    pub r: T,
    /// Base shell thickness.
    pub t: T,
    /// Cap polar half-angle at the clamped rim.
    pub phi: T,
    /// Central-region polar angle (inner edge of the circumferential rib).
    pub phi_o: T,
    /// Circumferential-rib outer polar angle.
    pub phi_c: T,
    /// Radial-rib outer polar angle.
    pub phi_r: T,
    /// Azimuthal width of each radial rib.
    pub theta_r: T,
    /// Circumferential-rib total local thickness (0 means absent).
    pub t_c: T,
    /// Radial-rib total local thickness (0 means absent).
    pub t_r: T,
    /// Number of radial ribs.
    pub n_ribs: u32,
}

impl<T: Real> MetacapGeometry<T> {
    /// The rib-patterned design used throughout: R = 30 mm, t/R = 0.075,
    /// phi_o = 5.0°, phi_c = 8.0°, t_c/R = 0.133, phi_r = 47.85°,
    /// theta_r = 35.0°, t_r/R = 0.267, phi = 57.85°, 8 radial ribs.
    pub fn reference() -> Self {
        let r = lit::<T>(0.030);
        let deg = |d: f64| lit::<T>(d.to_radians());
        Self {
            r,
            t: r * lit::<T>(0.075),
            phi: deg(57.85),
            phi_o: deg(5.0),
            phi_c: deg(8.0),
            phi_r: deg(47.85),
            theta_r: deg(35.0),
            t_c: r * lit::<T>(0.133),
            t_r: r * lit::<T>(0.267),
            n_ribs: 8,
        }
    }

    /// Uniform cap of thickness `t` with the reference angles.
    pub fn uniform(r: T, t: T, phi: T) -> Self {
        let mut g = Self::reference();
        g.r = r;
        g.t = t;
        g.phi = phi;
        g.t_c = T::zero();
        g.t_r = T::zero();
        g
    }

    pub fn has_circumferential_rib(&self) -> bool {
        self.t_c > T::zero()
    }

    pub fn has_radial_ribs(&self) -> bool {
        self.t_r > T::zero()
    }

    /// Stable 64-bit hash of the geometry for provenance metadata.
    pub fn hash(&self) -> u64 {
        let mut s = String::new();
        for v in [
            self.r, self.t, self.phi, self.phi_o, self.phi_c, self.phi_r, self.theta_r,
            self.t_c, self.t_r,
        ] {
            s.push_str(&format!("{:.17e};", to_f64(v)));
        }
        s.push_str(&format!("{};", self.n_ribs));
        fnv1a64(s.as_bytes())
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Elastomer description: initial shear modulus plus a near-incompressibility
/// parameter used by the bending stiffness.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material<T: Real> {
    /// Initial shear modulus, Pa.
    pub mu: T,
    /// Poisson-like parameter in [0, 0.5).
    pub poisson_like: T,
}

impl<T: Real> Material<T> {
    pub fn new(mu: T, poisson_like: T) -> Result<Self, GeometryError> {
        if !(mu > T::zero()) {
            return Err(GeometryError::InvalidMaterial("mu must be positive"));
        }
        if !(poisson_like >= T::zero() && poisson_like < lit::<T>(0.5)) {
            return Err(GeometryError::InvalidMaterial(
                "poisson_like must lie in [0, 0.5)",
            ));
        }
        Ok(Self { mu, poisson_like })
    }

    /// Elite Double 32 silicone, the soft elastomer used for gentle grippers.
    pub fn elite_double_32() -> Self {
        Self {
            mu: lit::<T>(0.36e6),
            poisson_like: lit::<T>(0.49),
        }
    }
}

/// One violated geometry invariant, naming the offending fields.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub fields: Vec<String>,
    pub message: String,
}

/// Result of [`validate_geometry`]: empty means the geometry is usable.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, fields: &[&str], message: impl Into<String>) {
        self.violations.push(Violation {
            fields: fields.iter().map(|s| s.to_string()).collect(),
            message: message.into(),
        });
    }
}

/// Check every geometry invariant and report all violations found.
///
/// Rib thicknesses below the base thickness are allowed (the footprint is
/// then locally thinner than the shell), so the whole design plane
/// `t_c, t_r in [0, 0.33 R]` is sweepable.
pub fn validate_geometry<T: Real>(geom: &MetacapGeometry<T>) -> ValidationReport {
    let mut report = ValidationReport::default();
    let zero = T::zero();
    let right_angle = lit::<T>(std::f64::consts::FRAC_PI_2);
    let full_turn = lit::<T>(std::f64::consts::TAU);

    for (name, v) in [
        ("r", geom.r),
        ("t", geom.t),
        ("phi", geom.phi),
        ("phi_o", geom.phi_o),
        ("phi_c", geom.phi_c),
        ("phi_r", geom.phi_r),
        ("theta_r", geom.theta_r),
        ("t_c", geom.t_c),
        ("t_r", geom.t_r),
    ] {
        if !v.is_finite() {
            report.push(&[name], format!("{name} is not finite"));
        }
    }
    if !report.is_ok() {
        return report;
    }

    if !(geom.r > zero) {
        report.push(&["r"], "cap radius must be positive");
    }
    if !(geom.t > zero) {
        report.push(&["t"], "base thickness must be positive");
    }
    if !(geom.phi_o > zero) {
        report.push(&["phi_o"], "phi_o must be positive");
    }
    if !(geom.phi_o < geom.phi_c) {
        report.push(&["phi_o", "phi_c"], "phi_o must be smaller than phi_c");
    }
    if !(geom.phi_c < geom.phi_r) {
        report.push(&["phi_c", "phi_r"], "phi_c must be smaller than phi_r");
    }
    if !(geom.phi_r < geom.phi) {
        report.push(&["phi_r", "phi"], "phi_r must be smaller than phi");
    }
    if !(geom.phi < right_angle) {
        report.push(&["phi"], "phi must be smaller than 90 degrees");
    }
    if geom.t_c < zero {
        report.push(&["t_c"], "t_c must be nonnegative");
    }
    if geom.t_r < zero {
        report.push(&["t_r"], "t_r must be nonnegative");
    }
    if geom.n_ribs < 1 {
        report.push(&["n_ribs"], "at least one radial rib position is required");
    }
    if geom.has_radial_ribs() && !(geom.theta_r > zero) {
        report.push(&["theta_r"], "theta_r must be positive when radial ribs are present");
    }
    if geom.theta_r < zero {
        report.push(&["theta_r"], "theta_r must be nonnegative");
    }
    let total = lit::<T>(geom.n_ribs as f64) * geom.theta_r;
    if total > full_turn * (T::one() + lit::<T>(1e-12)) {
        report.push(
            &["n_ribs", "theta_r"],
            "radial ribs overlap: n_ribs * theta_r exceeds a full turn",
        );
    }
    report
}

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid material: {0}")]
    InvalidMaterial(&'static str),
    #[error("polar angle {polar} outside [0, {phi}]")]
    PolarOutOfRange { polar: f64, phi: f64 },
    #[error("resolution {got} m too coarse to resolve the {band} rib footprint (needs <= {need} m)")]
    ResolutionTooCoarse {
        band: &'static str,
        got: f64,
        need: f64,
    },
    #[error("resolution must be positive")]
    NonPositiveResolution,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("mesh file line {line}: {what}")]
    MalformedMesh { line: usize, what: String },
}

/// Continuous thickness field the mesh samples.
///
/// Inside a footprint the local rib thickness wins; where the two kinds of
/// footprint share the boundary `phi_c`, the larger of the two wins.
pub fn thickness_at<T: Real>(
    geom: &MetacapGeometry<T>,
    polar: T,
    azimuth: T,
) -> Result<T, GeometryError> {
    if polar < T::zero() || polar > geom.phi {
        return Err(GeometryError::PolarOutOfRange {
            polar: to_f64(polar),
            phi: to_f64(geom.phi),
        });
    }
    let mut best: Option<T> = None;
    let mut consider = |v: T| {
        best = Some(match best {
            Some(b) if b >= v => b,
            _ => v,
        });
    };
    if geom.has_circumferential_rib() && polar >= geom.phi_o && polar <= geom.phi_c {
        consider(geom.t_c);
    }
    if geom.has_radial_ribs()
        && polar >= geom.phi_c
        && polar <= geom.phi_r
        && in_rib_sector(geom, azimuth)
    {
        consider(geom.t_r);
    }
    Ok(best.unwrap_or(geom.t))
}

/// Whether `azimuth` falls inside any radial-rib sector. Sectors of width
/// `theta_r` are centered at multiples of `2*pi/n_ribs`.
fn in_rib_sector<T: Real>(geom: &MetacapGeometry<T>, azimuth: T) -> bool {
    let sector = lit::<T>(std::f64::consts::TAU) / lit::<T>(geom.n_ribs as f64);
    let half = lit::<T>(0.5);
    // distance from the nearest sector center
    let k = (azimuth / sector).round();
    let d = (azimuth - k * sector).abs();
    d <= half * geom.theta_r
}

/// Triangulated midsurface with a per-triangle thickness.
#[derive(Clone, Debug)]
pub struct ShellMesh<T: Real> {
    /// Rest positions on the sphere.
    pub vertices: Vec<Vector3<T>>,
    /// Outward-oriented triangles (vertex index triples).
    pub triangles: Vec<[usize; 3]>,
    /// Per-triangle thickness.
    pub thickness: Vec<T>,
    /// Rim loop, ordered counterclockwise seen from the pole side.
    pub boundary_ring: Vec<usize>,
    pub material: Material<T>,
    /// Geometry the mesh was built from, for provenance.
    pub geometry: MetacapGeometry<T>,
}

impl<T: Real> ShellMesh<T> {
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_rim(&self, v: usize) -> bool {
        // rim vertices are the trailing block by construction
        v >= self.vertices.len() - self.boundary_ring.len()
    }

    /// Total rest surface area.
    pub fn surface_area(&self) -> T {
        let half = lit::<T>(0.5);
        self.triangles
            .iter()
            .map(|&[a, b, c]| {
                let e1 = self.vertices[b] - self.vertices[a];
                let e2 = self.vertices[c] - self.vertices[a];
                e1.cross(&e2).norm() * half
            })
            .fold(T::zero(), |acc, x| acc + x)
    }

    /// Structural sanity checks used by tests and on imported meshes:
    /// manifold-with-boundary, a single boundary loop matching
    /// `boundary_ring`, positive thickness, rim vertices on the rim circle.
    pub fn validate(&self) -> Result<(), GeometryError> {
        use std::collections::HashMap;
        if self.thickness.len() != self.triangles.len() {
            return Err(GeometryError::InvalidGeometry(
                "thickness count must match triangle count".into(),
            ));
        }
        if self.thickness.iter().any(|&t| !(t > T::zero())) {
            return Err(GeometryError::InvalidGeometry(
                "thickness must be positive on every triangle".into(),
            ));
        }
        let mut edge_count: HashMap<(usize, usize), u32> = HashMap::new();
        for &[a, b, c] in &self.triangles {
            for (u, v) in [(a, b), (b, c), (c, a)] {
                let key = (u.min(v), u.max(v));
                *edge_count.entry(key).or_insert(0) += 1;
            }
        }
        if edge_count.values().any(|&n| n > 2) {
            return Err(GeometryError::InvalidGeometry(
                "non-manifold edge (more than two incident triangles)".into(),
            ));
        }
        let boundary_edges = edge_count.values().filter(|&&n| n == 1).count();
        if boundary_edges != self.boundary_ring.len() {
            return Err(GeometryError::InvalidGeometry(format!(
                "boundary has {boundary_edges} edges but boundary_ring lists {}",
                self.boundary_ring.len()
            )));
        }
        for w in self.boundary_ring.windows(2) {
            let key = (w[0].min(w[1]), w[0].max(w[1]));
            if edge_count.get(&key) != Some(&1) {
                return Err(GeometryError::InvalidGeometry(
                    "boundary_ring is not the boundary loop".into(),
                ));
            }
        }
        let rim_z = self.geometry.r * self.geometry.phi.cos();
        let rim_rho = self.geometry.r * self.geometry.phi.sin();
        let tol = self.geometry.r * lit::<T>(1e-9);
        for &v in &self.boundary_ring {
            let p = self.vertices[v];
            let rho = (p.x * p.x + p.y * p.y).sqrt();
            if (p.z - rim_z).abs() > tol || (rho - rim_rho).abs() > tol {
                return Err(GeometryError::InvalidGeometry(
                    "rim vertex off the rim circle".into(),
                ));
            }
        }
        Ok(())
    }

    /// Write the mesh in the ASCII format described in the README:
    /// `v x y z` vertex lines, `f i j k thickness` face lines, a `rim` line
    /// listing the boundary loop, and a `material` line. An optional
    /// per-vertex displacement block (`d ux uy uz` lines) serializes a state.
    pub fn export_ascii(
        &self,
        path: &Path,
        displacements: Option<&[Vector3<T>]>,
    ) -> Result<(), GeometryError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "# metacap shell mesh v1")?;
        writeln!(w, "vertices {}", self.vertices.len())?;
        for p in &self.vertices {
            writeln!(
                w,
                "v {:.16e} {:.16e} {:.16e}",
                to_f64(p.x),
                to_f64(p.y),
                to_f64(p.z)
            )?;
        }
        writeln!(w, "faces {}", self.triangles.len())?;
        for (tri, &t) in self.triangles.iter().zip(&self.thickness) {
            writeln!(w, "f {} {} {} {:.16e}", tri[0], tri[1], tri[2], to_f64(t))?;
        }
        write!(w, "rim {}", self.boundary_ring.len())?;
        for &v in &self.boundary_ring {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
        writeln!(
            w,
            "material {:.16e} {:.16e}",
            to_f64(self.material.mu),
            to_f64(self.material.poisson_like)
        )?;
        writeln!(w, "geometry {}", geometry_line(&self.geometry))?;
        if let Some(u) = displacements {
            writeln!(w, "displacements {}", u.len())?;
            for d in u {
                writeln!(
                    w,
                    "d {:.16e} {:.16e} {:.16e}",
                    to_f64(d.x),
                    to_f64(d.y),
                    to_f64(d.z)
                )?;
            }
        }
        Ok(())
    }

    /// Read a mesh (and optional displacement block) written by
    /// [`ShellMesh::export_ascii`].
    pub fn import_ascii(path: &Path) -> Result<(Self, Option<Vec<Vector3<T>>>), GeometryError> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut lines = reader.lines().enumerate();
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        let mut thickness = Vec::new();
        let mut boundary_ring = Vec::new();
        let mut material = None;
        let mut geometry = None;
        let mut displacements: Option<Vec<Vector3<T>>> = None;
        while let Some((lineno, line)) = lines.next() {
            let lineno = lineno + 1;
            let line = line?;
            let s = line.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            let mut tok = s.split_whitespace();
            let bad = |what: &str| GeometryError::MalformedMesh {
                line: lineno,
                what: what.to_string(),
            };
            match tok.next() {
                Some("vertices") | Some("faces") | Some("displacements") if s.starts_with("vertices") || s.starts_with("faces") || s.starts_with("displacements") => {
                    if s.starts_with("displacements") {
                        displacements = Some(Vec::new());
                    }
                }
                Some("v") => {
                    let p = parse_vec3::<T>(&mut tok).ok_or_else(|| bad("malformed vertex"))?;
                    vertices.push(p);
                }
                Some("d") => {
                    let p = parse_vec3::<T>(&mut tok).ok_or_else(|| bad("malformed displacement"))?;
                    displacements
                        .as_mut()
                        .ok_or_else(|| bad("displacement line before displacements header"))?
                        .push(p);
                }
                Some("f") => {
                    let mut idx = [0usize; 3];
                    for slot in &mut idx {
                        *slot = tok
                            .next()
                            .and_then(|t| t.parse().ok())
                            .ok_or_else(|| bad("malformed face index"))?;
                    }
                    let t: f64 = tok
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| bad("missing face thickness"))?;
                    triangles.push(idx);
                    thickness.push(lit::<T>(t));
                }
                Some("rim") => {
                    let _count: usize = tok
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| bad("malformed rim count"))?;
                    for t in tok {
                        boundary_ring.push(
                            t.parse()
                                .map_err(|_| bad("malformed rim index"))?,
                        );
                    }
                }
                Some("material") => {
                    let mu: f64 = tok
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| bad("malformed material"))?;
                    let nu: f64 = tok
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| bad("malformed material"))?;
                    material = Some(Material {
                        mu: lit::<T>(mu),
                        poisson_like: lit::<T>(nu),
                    });
                }
                Some("geometry") => {
                    geometry = Some(parse_geometry_line::<T>(&mut tok).ok_or_else(|| bad("malformed geometry"))?);
                }
                _ => return Err(bad("unknown record")),
            }
        }
        let material = material.ok_or(GeometryError::MalformedMesh {
            line: 0,
            what: "missing material line".into(),
        })?;
        let geometry = geometry.ok_or(GeometryError::MalformedMesh {
            line: 0,
            what: "missing geometry line".into(),
        })?;
        let mesh = ShellMesh {
            vertices,
            triangles,
            thickness,
            boundary_ring,
            material,
            geometry,
        };
        Ok((mesh, displacements))
    }
}

fn parse_vec3<'a, T: Real>(tok: &mut impl Iterator<Item = &'a str>) -> Option<Vector3<T>> {
    let x: f64 = tok.next()?.parse().ok()?;
    let y: f64 = tok.next()?.parse().ok()?;
    let z: f64 = tok.next()?.parse().ok()?;
    Some(Vector3::new(lit(x), lit(y), lit(z)))
}

fn geometry_line<T: Real>(g: &MetacapGeometry<T>) -> String {
    format!(
        "{:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {}",
        to_f64(g.r),
        to_f64(g.t),
        to_f64(g.phi),
        to_f64(g.phi_o),
        to_f64(g.phi_c),
        to_f64(g.phi_r),
        to_f64(g.theta_r),
        to_f64(g.t_c),
        to_f64(g.t_r),
        g.n_ribs
    )
}

fn parse_geometry_line<'a, T: Real>(
    tok: &mut impl Iterator<Item = &'a str>,
) -> Option<MetacapGeometry<T>> {
    let mut next = || -> Option<T> { tok.next()?.parse::<f64>().ok().map(lit::<T>) };
    let (r, t, phi) = (next()?, next()?, next()?);
    let (phi_o, phi_c, phi_r) = (next()?, next()?, next()?);
    let (theta_r, t_c, t_r) = (next()?, next()?, next()?);
    Some(MetacapGeometry {
        r,
        t,
        phi,
        phi_o,
        phi_c,
        phi_r,
        theta_r,
        t_c,
        t_r,
        n_ribs: tok.next()?.parse().ok()?,
    })
}

/// Volume between a spherical cap and its rim plane: the closed form
/// `(pi/3) R^3 (1 - cos phi)^2 (2 + cos phi)`.
pub fn cap_volume_closed_form<T: Real>(r: T, phi: T) -> T {
    let c = phi.cos();
    let third = lit::<T>(std::f64::consts::PI / 3.0);
    third * r * r * r * (T::one() - c) * (T::one() - c) * (lit::<T>(2.0) + c)
}

/// Analytic cap surface area `2 pi R^2 (1 - cos phi)`.
pub fn cap_area_closed_form<T: Real>(r: T, phi: T) -> T {
    lit::<T>(std::f64::consts::TAU) * r * r * (T::one() - phi.cos())
}

/// Triangulate the cap from the pole to `phi` at the given target edge
/// length, sampling per-triangle thickness from [`thickness_at`] at triangle
/// centroids.
///
/// Ring latitudes are placed so that active rib footprint boundaries fall
/// exactly on rings and each active footprint holds at least two triangle
/// rows; within the radial-rib band, ring vertices snap onto sector
/// boundaries. The mesh is exactly `n_ribs`-fold symmetric: one azimuthal
/// sector is generated and replicated.
pub fn build_metacap_mesh<T: Real>(
    geom: &MetacapGeometry<T>,
    material: &Material<T>,
    resolution: T,
) -> Result<ShellMesh<T>, GeometryError> {
    let report = validate_geometry(geom);
    if !report.is_ok() {
        let msg = report
            .violations
            .iter()
            .map(|v| v.message.clone())
            .collect::<Vec<_>>()
            .join("; ");
        return Err(GeometryError::InvalidGeometry(msg));
    }
    if !(resolution > T::zero()) {
        return Err(GeometryError::NonPositiveResolution);
    }

    // Coarseness gate: a footprint band narrower than the edge length cannot
    // hold a row of triangles.
    let h_ang = resolution / geom.r;
    if geom.has_circumferential_rib() {
        let band = geom.phi_c - geom.phi_o;
        if h_ang > band {
            return Err(GeometryError::ResolutionTooCoarse {
                band: "circumferential",
                got: to_f64(resolution),
                need: to_f64(band * geom.r),
            });
        }
    }
    if geom.has_radial_ribs() {
        let band = geom.phi_r - geom.phi_c;
        if h_ang > band {
            return Err(GeometryError::ResolutionTooCoarse {
                band: "radial",
                got: to_f64(resolution),
                need: to_f64(band * geom.r),
            });
        }
    }

    let latitudes = ring_latitudes(geom, h_ang);
    let n_sym = geom.n_ribs.max(1) as usize;
    let tau = lit::<T>(std::f64::consts::TAU);
    let sector = tau / lit::<T>(n_sym as f64);

    // Per-ring azimuth pattern for one sector; replicated n_sym times. The
    // zipper below compares these construction values, not recomputed
    // angles, so the triangulation repeats exactly per sector.
    let mut ring_start = Vec::with_capacity(latitudes.len());
    let mut ring_size = Vec::with_capacity(latitudes.len());
    let mut ring_azimuths: Vec<Vec<T>> = Vec::with_capacity(latitudes.len());
    let mut vertices: Vec<Vector3<T>> = vec![Vector3::new(T::zero(), T::zero(), geom.r)];
    for &lat in &latitudes {
        let circ = tau * lat.sin();
        let target = to_f64(circ / resolution * geom.r);
        let per = ((target / n_sym as f64).round() as usize).max(1);
        let m = per * n_sym;
        let mut pattern: Vec<T> = (0..per)
            .map(|k| tau * lit::<T>(k as f64) / lit::<T>(m as f64))
            .collect();
        if geom.has_radial_ribs() && lat >= geom.phi_c && lat <= geom.phi_r {
            snap_pattern_to_sector_edges(&mut pattern, geom.theta_r, sector);
        }
        ring_start.push(vertices.len());
        ring_size.push(m);
        let mut azimuths = Vec::with_capacity(m);
        for k in 0..n_sym {
            let offset = sector * lit::<T>(k as f64);
            for &a in &pattern {
                let az = a + offset;
                azimuths.push(az);
                vertices.push(Vector3::new(
                    geom.r * lat.sin() * az.cos(),
                    geom.r * lat.sin() * az.sin(),
                    geom.r * lat.cos(),
                ));
            }
        }
        ring_azimuths.push(azimuths);
    }

    let mut triangles: Vec<[usize; 3]> = Vec::new();
    // pole fan
    let m0 = ring_size[0];
    for j in 0..m0 {
        triangles.push([0, ring_start[0] + j, ring_start[0] + (j + 1) % m0]);
    }
    // ring-to-ring zippers, merging the two loops by azimuth
    for r in 1..latitudes.len() {
        let (sa, ma) = (ring_start[r - 1], ring_size[r - 1]);
        let (sb, mb) = (ring_start[r], ring_size[r]);
        let az_a = &ring_azimuths[r - 1];
        let az_b = &ring_azimuths[r];
        let next_az = |az: &[T], idx: usize| -> T {
            let m = az.len();
            az[(idx + 1) % m] + if idx + 1 >= m { tau } else { T::zero() }
        };
        let (mut ia, mut ib) = (0usize, 0usize);
        while ia < ma || ib < mb {
            let take_a = if ia == ma {
                false
            } else if ib == mb {
                true
            } else {
                next_az(az_a, ia) <= next_az(az_b, ib)
            };
            if take_a {
                triangles.push([sa + ia % ma, sa + (ia + 1) % ma, sb + ib % mb]);
                ia += 1;
            } else {
                triangles.push([sa + ia % ma, sb + (ib + 1) % mb, sb + ib % mb]);
                ib += 1;
            }
        }
    }

    // orient all triangles outward (normal away from the sphere center)
    for tri in &mut triangles {
        let [a, b, c] = *tri;
        let n = (vertices[b] - vertices[a]).cross(&(vertices[c] - vertices[a]));
        let centroid = (vertices[a] + vertices[b] + vertices[c]) / lit::<T>(3.0);
        if n.dot(&centroid) < T::zero() {
            tri.swap(1, 2);
        }
    }

    // per-triangle thickness at the centroid
    let mut thickness = Vec::with_capacity(triangles.len());
    for &[a, b, c] in &triangles {
        let centroid = (vertices[a] + vertices[b] + vertices[c]) / lit::<T>(3.0);
        let rho = (centroid.x * centroid.x + centroid.y * centroid.y).sqrt();
        let polar = rho.atan2(centroid.z).min(geom.phi);
        let azimuth = centroid.y.atan2(centroid.x);
        thickness.push(thickness_at(geom, polar, azimuth)?);
    }

    let last = latitudes.len() - 1;
    let boundary_ring: Vec<usize> = (0..ring_size[last]).map(|j| ring_start[last] + j).collect();

    Ok(ShellMesh {
        vertices,
        triangles,
        thickness,
        boundary_ring,
        material: *material,
        geometry: *geom,
    })
}

/// Ring latitudes: a near-uniform grid with active footprint boundaries
/// inserted exactly, each active band subdivided to hold at least two rows.
fn ring_latitudes<T: Real>(geom: &MetacapGeometry<T>, h_ang: T) -> Vec<T> {
    let n_rings = (to_f64(geom.phi / h_ang).ceil() as usize).max(3);
    let dphi = geom.phi / lit::<T>(n_rings as f64);
    let mut lats: Vec<T> = (1..=n_rings)
        .map(|i| geom.phi * lit::<T>(i as f64) / lit::<T>(n_rings as f64))
        .collect();

    let mut specials: Vec<T> = Vec::new();
    if geom.has_circumferential_rib() {
        specials.push(geom.phi_o);
        specials.push(geom.phi_c);
    }
    if geom.has_radial_ribs() {
        specials.push(geom.phi_c);
        specials.push(geom.phi_r);
    }
    specials.sort_by(|a, b| a.partial_cmp(b).unwrap());
    specials.dedup();

    let snap_tol = dphi * lit::<T>(0.35);
    for &s in &specials {
        let mut nearest = None;
        let mut best = snap_tol;
        for (i, &l) in lats.iter().enumerate() {
            if i + 1 == lats.len() {
                continue; // never move the rim ring
            }
            let d = (l - s).abs();
            if d < best {
                best = d;
                nearest = Some(i);
            }
        }
        match nearest {
            Some(i) => lats[i] = s,
            None => lats.push(s),
        }
        lats.sort_by(|a, b| a.partial_cmp(b).unwrap());
        lats.dedup();
    }

    // guarantee two rows inside each active band
    let mut bands: Vec<(T, T)> = Vec::new();
    if geom.has_circumferential_rib() {
        bands.push((geom.phi_o, geom.phi_c));
    }
    if geom.has_radial_ribs() {
        bands.push((geom.phi_c, geom.phi_r));
    }
    for (a, b) in bands {
        loop {
            let inside = lats.iter().filter(|&&l| l > a && l < b).count();
            let intervals = inside + 1;
            if intervals >= 2 {
                break;
            }
            let half = lit::<T>(0.5);
            lats.push((a + b) * half);
            lats.sort_by(|x, y| x.partial_cmp(y).unwrap());
            lats.dedup();
        }
    }
    lats
}

/// Move the pattern entries nearest to the two sector-edge azimuths onto
/// them, keeping the pattern strictly increasing. Collisions (very coarse
/// patterns) leave the pattern untouched; centroid sampling still resolves
/// the footprint.
fn snap_pattern_to_sector_edges<T: Real>(pattern: &mut [T], theta_r: T, sector: T) {
    let half = lit::<T>(0.5);
    let edges = [theta_r * half, sector - theta_r * half];
    let mut taken: Vec<usize> = Vec::new();
    let original = pattern.to_vec();
    for &edge in &edges {
        if edge <= T::zero() || edge >= sector {
            continue;
        }
        let mut best_i = None;
        let mut best_d = sector;
        for (i, &a) in pattern.iter().enumerate() {
            if i == 0 || taken.contains(&i) {
                continue; // keep the rib centerline vertex in place
            }
            let d = (a - edge).abs();
            if d < best_d {
                best_d = d;
                best_i = Some(i);
            }
        }
        if let Some(i) = best_i {
            pattern[i] = edge;
            taken.push(i);
        }
    }
    let strictly_increasing = pattern.windows(2).all(|w| w[0] < w[1]);
    if !strictly_increasing {
        pattern.copy_from_slice(&original);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn reference_geometry_validates() {
        let g = MetacapGeometry::<f64>::reference();
        assert!(validate_geometry(&g).is_ok());
    }

    #[test]
    fn swapped_ordering_names_both_fields() {
        let mut g = MetacapGeometry::<f64>::reference();
        std::mem::swap(&mut g.phi_c, &mut g.phi_r);
        let report = validate_geometry(&g);
        assert!(!report.is_ok());
        let named: Vec<_> = report
            .violations
            .iter()
            .flat_map(|v| v.fields.iter().cloned())
            .collect();
        assert!(named.contains(&"phi_c".to_string()));
        assert!(named.contains(&"phi_r".to_string()));
    }

    #[test]
    fn zero_thickness_names_t() {
        let mut g = MetacapGeometry::<f64>::reference();
        g.t = 0.0;
        let report = validate_geometry(&g);
        assert!(report
            .violations
            .iter()
            .any(|v| v.fields == vec!["t".to_string()]));
    }

    #[test]
    fn perturbing_each_ordering_invariant_flips_validation() {
        let base = MetacapGeometry::<f64>::reference();
        let cases: Vec<(&str, Box<dyn Fn(&mut MetacapGeometry<f64>)>)> = vec![
            ("phi_o", Box::new(|g| g.phi_o = -0.01)),
            ("phi_o", Box::new(|g| g.phi_o = g.phi_c + 0.01)),
            ("phi_c", Box::new(|g| g.phi_c = g.phi_r + 0.01)),
            ("phi_r", Box::new(|g| g.phi_r = g.phi + 0.01)),
            ("phi", Box::new(|g| g.phi = 1.6)),
        ];
        for (field, perturb) in cases {
            let mut g = base;
            perturb(&mut g);
            let report = validate_geometry(&g);
            assert!(!report.is_ok(), "perturbing {field} should invalidate");
            assert!(
                report
                    .violations
                    .iter()
                    .any(|v| v.fields.iter().any(|f| f == field)),
                "violation should name {field}"
            );
        }
    }

    #[test]
    fn thickness_field_reference_points() {
        let g = MetacapGeometry::<f64>::reference();
        // inside a radial rib (sector centered at azimuth 0)
        let t = thickness_at(&g, 30f64.to_radians(), 0.0).unwrap();
        assert_relative_eq!(t, 0.267 * g.r);
        // between rib sectors
        let t = thickness_at(&g, 30f64.to_radians(), 22.5f64.to_radians()).unwrap();
        assert_relative_eq!(t, g.t);
        // circumferential annulus
        let t = thickness_at(&g, 6.5f64.to_radians(), 1.234).unwrap();
        assert_relative_eq!(t, 0.133 * g.r);
        // overlap at phi_c inside a sector: max wins
        let t = thickness_at(&g, g.phi_c, 0.0).unwrap();
        assert_relative_eq!(t, g.t_r.max(g.t_c));
    }

    #[test]
    fn uniform_cap_thickness_everywhere() {
        let g = MetacapGeometry::<f64>::uniform(0.03, 0.00225, 1.0);
        for polar in [0.0, 0.3, 0.6, 0.99] {
            for az in [0.0, 1.0, 3.0, 6.0] {
                assert_eq!(thickness_at(&g, polar, az).unwrap(), 0.00225);
            }
        }
    }

    #[test]
    fn thickness_out_of_range_polar() {
        let g = MetacapGeometry::<f64>::reference();
        assert!(thickness_at(&g, g.phi + 0.01, 0.0).is_err());
        assert!(thickness_at(&g, -0.01, 0.0).is_err());
    }

    #[test]
    fn thickness_rotation_symmetry() {
        let g = MetacapGeometry::<f64>::reference();
        let step = std::f64::consts::TAU / g.n_ribs as f64;
        for polar in [0.05, 0.14, 0.3, 0.7, 1.0] {
            for az in [0.0, 0.11, 0.29, 0.31, 1.5] {
                let a = thickness_at(&g, polar, az).unwrap();
                let b = thickness_at(&g, polar, az + step).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn mesh_thickness_takes_exactly_three_values() {
        let g = MetacapGeometry::<f64>::reference();
        let m = build_metacap_mesh(&g, &Material::elite_double_32(), 0.0012).unwrap();
        for &t in &m.thickness {
            assert!(
                t == g.t || t == g.t_c || t == g.t_r,
                "unexpected thickness {t}"
            );
        }
        let distinct: std::collections::BTreeSet<u64> =
            m.thickness.iter().map(|t| t.to_bits()).collect();
        assert_eq!(distinct.len(), 3);
    }

    #[test]
    fn uniform_mesh_single_thickness() {
        let g = MetacapGeometry::<f64>::uniform(0.03, 0.0045, 1.0);
        let m = build_metacap_mesh(&g, &Material::elite_double_32(), 0.004).unwrap();
        assert!(m.thickness.iter().all(|&t| t == 0.0045));
    }

    #[test]
    fn mesh_is_manifold_with_single_boundary_loop() {
        let g = MetacapGeometry::<f64>::reference();
        let m = build_metacap_mesh(&g, &Material::elite_double_32(), 0.0015).unwrap();
        m.validate().unwrap();
    }

    #[test]
    fn mesh_area_converges_to_cap_area() {
        let g = MetacapGeometry::<f64>::uniform(0.03, 0.00225, 1.0);
        let mat = Material::elite_double_32();
        let exact = cap_area_closed_form(g.r, g.phi);
        let coarse = build_metacap_mesh(&g, &mat, 0.004).unwrap().surface_area();
        let fine = build_metacap_mesh(&g, &mat, 0.001).unwrap().surface_area();
        let err_coarse = (coarse - exact).abs() / exact;
        let err_fine = (fine - exact).abs() / exact;
        assert!(err_fine < err_coarse, "refinement must reduce area error");
        assert!(err_fine < 5e-3, "fine-mesh area error {err_fine}");
    }

    #[test]
    fn too_coarse_resolution_is_rejected() {
        let g = MetacapGeometry::<f64>::reference();
        // circumferential band is 3 degrees of arc, about 1.57 mm
        let err = build_metacap_mesh(&g, &Material::elite_double_32(), 0.002).unwrap_err();
        assert!(matches!(err, GeometryError::ResolutionTooCoarse { .. }));
    }

    #[test]
    fn ascii_round_trip() {
        let g = MetacapGeometry::<f64>::uniform(0.03, 0.00225, 1.0);
        let m = build_metacap_mesh(&g, &Material::elite_double_32(), 0.006).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mesh.txt");
        let u: Vec<_> = m.vertices.iter().map(|v| v * 1e-3).collect();
        m.export_ascii(&path, Some(&u)).unwrap();
        let (back, du) = ShellMesh::<f64>::import_ascii(&path).unwrap();
        assert_eq!(m.triangles, back.triangles);
        assert_eq!(m.boundary_ring, back.boundary_ring);
        assert_eq!(m.vertices.len(), back.vertices.len());
        assert_eq!(du.unwrap().len(), u.len());
        back.validate().unwrap();
    }

    #[test]
    fn geometry_hash_is_stable_and_sensitive() {
        let g = MetacapGeometry::<f64>::reference();
        let mut g2 = g;
        g2.t_c += 1e-6;
        assert_eq!(g.hash(), MetacapGeometry::<f64>::reference().hash());
        assert_ne!(g.hash(), g2.hash());
    }
}
