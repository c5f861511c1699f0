//! Discrete shell energetics on a triangulated cap.
//!
//! Stretching is an incompressible neo-Hookean membrane evaluated from the
//! in-plane deformation gradient of each triangle, scaled by rest area and
//! local thickness. Bending is a quadratic hinge energy on each interior
//! edge, measured against the rest dihedral of the spherical rest shape, with
//! stiffness proportional to `mu * t^3`. The enclosed volume between the
//! deformed surface and the fixed rim plane closes the divergence-theorem sum
//! with a constant rim-disk term, so its gradient is the area-weighted
//! deformed normal assembly.

use crate::geometry::ShellMesh;
use crate::num::{lit, Real};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ShellError {
    #[error("displacement field has {got} entries, mesh has {expected} vertices")]
    LengthMismatch { expected: usize, got: usize },
    #[error("rim vertex {vertex} carries a nonzero displacement")]
    RimConstraint { vertex: usize },
    #[error("degenerate deformed triangle {triangle} (area below 1e-12 R^2)")]
    DegenerateTriangle { triangle: usize },
    #[error("degenerate reference triangle {triangle} in the rest mesh")]
    DegenerateReference { triangle: usize },
    #[error("mesh edge shared by more than two triangles")]
    NonManifold,
}

/// Per-vertex displacement from the rest configuration; rim entries are
/// exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField<T: Real> {
    pub values: Vec<Vector3<T>>,
}

impl<T: Real> DisplacementField<T> {
    pub fn zeros(num_vertices: usize) -> Self {
        Self {
            values: vec![Vector3::zeros(); num_vertices],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Elastic energy split into its stretching and bending contributions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown<T: Real> {
    pub stretching: T,
    pub bending: T,
    pub total: T,
}

impl<T: Real> EnergyBreakdown<T> {
    pub fn new(stretching: T, bending: T) -> Self {
        Self {
            stretching,
            bending,
            total: stretching + bending,
        }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }
}

struct TriangleData<T: Real> {
    verts: [usize; 3],
    /// Inverse of the upper-triangular reference shape matrix (2x2).
    inv_dm: [T; 3], // [i00, i01, i11]
    area: T,
    /// mu * thickness * area, the membrane energy scale.
    coeff: T,
}

struct Hinge<T: Real> {
    /// Shared edge (p0, p1), then the opposite vertices of the two faces.
    verts: [usize; 4],
    rest_angle: T,
    /// Energy is `stiffness * (theta - rest)^2`.
    stiffness: T,
    /// Clamped rim edges hinge against a fixed ghost reflection of the
    /// opposite vertex, which pins the boundary rotation; the fourth
    /// stencil slot then holds this constant instead of a mesh vertex.
    ghost: Option<Vector3<T>>,
}

/// Precomputed computational form of a [`ShellMesh`].
pub struct ShellModel<T: Real> {
    rest: Vec<Vector3<T>>,
    tris: Vec<TriangleData<T>>,
    hinges: Vec<Hinge<T>>,
    rim: Vec<bool>,
    /// Enclosed volume of the rest configuration.
    v_rest: T,
    /// Constant rim-disk closure of the divergence-theorem sum.
    closure: T,
    mu: T,
    length_scale: T,
    area_floor: T,
    fd_step: T,
}

impl<T: Real> ShellModel<T> {
    pub fn new(mesh: &ShellMesh<T>) -> Result<Self, ShellError> {
        let n = mesh.vertices.len();
        let mut rim = vec![false; n];
        for &v in &mesh.boundary_ring {
            rim[v] = true;
        }
        let r = mesh.geometry.r;
        let area_floor = lit::<T>(1e-12) * r * r;
        let mu = mesh.material.mu;
        let nu = mesh.material.poisson_like;

        let mut tris = Vec::with_capacity(mesh.triangles.len());
        for (idx, (&verts, &t)) in mesh.triangles.iter().zip(&mesh.thickness).enumerate() {
            let [a, b, c] = verts;
            let e1 = mesh.vertices[b] - mesh.vertices[a];
            let e2 = mesh.vertices[c] - mesh.vertices[a];
            let normal = e1.cross(&e2);
            let area = normal.norm() * lit::<T>(0.5);
            if area <= area_floor {
                return Err(ShellError::DegenerateReference { triangle: idx });
            }
            let u1 = e1.normalize();
            let u2 = (e2 - u1 * e2.dot(&u1)).normalize();
            let d00 = e1.dot(&u1);
            let d01 = e2.dot(&u1);
            let d11 = e2.dot(&u2);
            let inv_dm = [T::one() / d00, -d01 / (d00 * d11), T::one() / d11];
            tris.push(TriangleData {
                verts,
                inv_dm,
                area,
                coeff: mu * t * area,
            });
        }

        // interior edges: a hinge per edge appearing in both directions
        use std::collections::HashMap;
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for (idx, &[a, b, c]) in mesh.triangles.iter().enumerate() {
            for (u, v) in [(a, b), (b, c), (c, a)] {
                if directed.insert((u, v), idx).is_some() {
                    return Err(ShellError::NonManifold);
                }
            }
        }
        let third = |tri: &[usize; 3], u: usize, v: usize| -> usize {
            tri.iter().copied().find(|&w| w != u && w != v).unwrap()
        };
        let six = lit::<T>(6.0);
        let mut hinges = Vec::new();
        for (&(p0, p1), &t1) in directed.iter() {
            let q1 = third(&mesh.triangles[t1], p0, p1);
            let edge_len2 = (mesh.vertices[p1] - mesh.vertices[p0]).norm_squared();
            match directed.get(&(p1, p0)) {
                Some(&t2) => {
                    if p0 > p1 {
                        continue; // interior edges once
                    }
                    let q2 = third(&mesh.triangles[t2], p0, p1);
                    let t_cubed = (mesh.thickness[t1].powi(3)
                        + mesh.thickness[t2].powi(3))
                        * lit::<T>(0.5);
                    let plate_d = mu * t_cubed / (six * (T::one() - nu));
                    let a_sum = tris[t1].area + tris[t2].area;
                    // hinge energy density matches D/2 (2H)^2 for isotropic
                    // bending
                    let stiffness = plate_d * lit::<T>(1.5) * edge_len2 / a_sum;
                    let rest_angle = dihedral_angle(
                        &mesh.vertices[p0],
                        &mesh.vertices[p1],
                        &mesh.vertices[q1],
                        &mesh.vertices[q2],
                    );
                    hinges.push(Hinge {
                        verts: [p0, p1, q1, q2],
                        rest_angle,
                        stiffness,
                        ghost: None,
                    });
                }
                None => {
                    // boundary edge: clamp the rotation against the point
                    // reflection of the opposite vertex through the edge
                    // midpoint, frozen at its rest position
                    let ghost =
                        mesh.vertices[p0] + mesh.vertices[p1] - mesh.vertices[q1];
                    let t_cubed = mesh.thickness[t1].powi(3);
                    let plate_d = mu * t_cubed / (six * (T::one() - nu));
                    let a_sum = tris[t1].area * lit::<T>(2.0);
                    let stiffness = plate_d * lit::<T>(1.5) * edge_len2 / a_sum;
                    let rest_angle = dihedral_angle(
                        &mesh.vertices[p0],
                        &mesh.vertices[p1],
                        &mesh.vertices[q1],
                        &ghost,
                    );
                    hinges.push(Hinge {
                        verts: [p0, p1, q1, q1],
                        rest_angle,
                        stiffness,
                        ghost: Some(ghost),
                    });
                }
            }
        }
        // HashMap iteration order is arbitrary: fix it for determinism
        hinges.sort_by_key(|h| (h.verts[0], h.verts[1], h.verts[2], h.ghost.is_some()));

        let closure = rim_closure(&mesh.vertices, &mesh.boundary_ring);
        let mut model = Self {
            rest: mesh.vertices.clone(),
            tris,
            hinges,
            rim,
            v_rest: T::zero(),
            closure,
            mu,
            length_scale: r,
            area_floor,
            fd_step: r * machine_epsilon::<T>().powf(lit::<T>(1.0 / 3.0)),
        };
        let rest_positions = model.rest.clone();
        model.v_rest = model.enclosed_volume_at(&rest_positions)?;
        Ok(model)
    }

    pub fn num_vertices(&self) -> usize {
        self.rest.len()
    }

    pub fn is_rim(&self, v: usize) -> bool {
        self.rim[v]
    }

    pub fn shear_modulus(&self) -> T {
        self.mu
    }

    pub fn length_scale(&self) -> T {
        self.length_scale
    }

    pub fn rest_positions(&self) -> &[Vector3<T>] {
        &self.rest
    }

    /// Rest-configuration enclosed volume (cap against its rim plane).
    pub fn rest_volume(&self) -> T {
        self.v_rest
    }

    fn check_admissible(&self, u: &DisplacementField<T>) -> Result<(), ShellError> {
        if u.len() != self.rest.len() {
            return Err(ShellError::LengthMismatch {
                expected: self.rest.len(),
                got: u.len(),
            });
        }
        for (v, (d, &is_rim)) in u.values.iter().zip(&self.rim).enumerate() {
            if is_rim && (d.x != T::zero() || d.y != T::zero() || d.z != T::zero()) {
                return Err(ShellError::RimConstraint { vertex: v });
            }
        }
        Ok(())
    }

    fn deformed(&self, u: &DisplacementField<T>) -> Vec<Vector3<T>> {
        self.rest
            .iter()
            .zip(&u.values)
            .map(|(x, d)| x + d)
            .collect()
    }

    /// Elastic energy of an admissible displacement field.
    pub fn elastic_energy(
        &self,
        u: &DisplacementField<T>,
    ) -> Result<EnergyBreakdown<T>, ShellError> {
        self.check_admissible(u)?;
        self.energy_at(&self.deformed(u))
    }

    /// Analytic gradient of the elastic energy, rim rows zeroed.
    pub fn energy_gradient(
        &self,
        u: &DisplacementField<T>,
    ) -> Result<Vec<Vector3<T>>, ShellError> {
        self.check_admissible(u)?;
        let x = self.deformed(u);
        let mut g = vec![Vector3::zeros(); self.rest.len()];
        self.add_energy_gradient_at(&x, &mut g)?;
        self.zero_rim_rows(&mut g);
        Ok(g)
    }

    /// Signed volume between the deformed surface and the fixed rim plane.
    pub fn enclosed_volume(&self, u: &DisplacementField<T>) -> Result<T, ShellError> {
        self.check_admissible(u)?;
        self.enclosed_volume_at(&self.deformed(u))
    }

    /// Volume change `rest - current`: positive as the cap everts.
    pub fn volume_change(&self, u: &DisplacementField<T>) -> Result<T, ShellError> {
        Ok(self.v_rest - self.enclosed_volume(u)?)
    }

    /// Analytic gradient of the enclosed volume, rim rows zeroed. Equals one
    /// third of the area-weighted deformed normal assembly.
    pub fn volume_gradient(
        &self,
        u: &DisplacementField<T>,
    ) -> Result<Vec<Vector3<T>>, ShellError> {
        self.check_admissible(u)?;
        let x = self.deformed(u);
        let mut g = vec![Vector3::zeros(); self.rest.len()];
        self.add_enclosed_volume_gradient_at(&x, &mut g);
        self.zero_rim_rows(&mut g);
        Ok(g)
    }

    fn zero_rim_rows(&self, g: &mut [Vector3<T>]) {
        for (gv, &is_rim) in g.iter_mut().zip(&self.rim) {
            if is_rim {
                *gv = Vector3::zeros();
            }
        }
    }

    // ----- internals on raw deformed positions -----

    pub(crate) fn energy_at(&self, x: &[Vector3<T>]) -> Result<EnergyBreakdown<T>, ShellError> {
        let mut stretch = T::zero();
        for (idx, tri) in self.tris.iter().enumerate() {
            stretch += self.membrane_energy(idx, tri, x)?;
        }
        let mut bend = T::zero();
        for h in &self.hinges {
            let q2 = h.ghost.unwrap_or(x[h.verts[3]]);
            let theta = dihedral_angle(&x[h.verts[0]], &x[h.verts[1]], &x[h.verts[2]], &q2);
            let d = theta - h.rest_angle;
            bend += h.stiffness * d * d;
        }
        Ok(EnergyBreakdown::new(stretch, bend))
    }

    pub(crate) fn enclosed_volume_at(&self, x: &[Vector3<T>]) -> Result<T, ShellError> {
        let sixth = lit::<T>(1.0 / 6.0);
        let mut v = self.closure;
        for tri in &self.tris {
            let [a, b, c] = tri.verts;
            v += x[a].dot(&x[b].cross(&x[c])) * sixth;
        }
        Ok(v)
    }

    pub(crate) fn volume_change_at(&self, x: &[Vector3<T>]) -> Result<T, ShellError> {
        Ok(self.v_rest - self.enclosed_volume_at(x)?)
    }

    /// Gradient of the enclosed volume without rim zeroing.
    pub(crate) fn add_enclosed_volume_gradient_at(
        &self,
        x: &[Vector3<T>],
        g: &mut [Vector3<T>],
    ) {
        let sixth = lit::<T>(1.0 / 6.0);
        for tri in &self.tris {
            let [a, b, c] = tri.verts;
            g[a] += x[b].cross(&x[c]) * sixth;
            g[b] += x[c].cross(&x[a]) * sixth;
            g[c] += x[a].cross(&x[b]) * sixth;
        }
    }

    pub(crate) fn add_energy_gradient_at(
        &self,
        x: &[Vector3<T>],
        g: &mut [Vector3<T>],
    ) -> Result<(), ShellError> {
        for (idx, tri) in self.tris.iter().enumerate() {
            let [a, b, c] = tri.verts;
            let local = self.membrane_gradient(idx, tri, &[x[a], x[b], x[c]])?;
            g[a] += local[0];
            g[b] += local[1];
            g[c] += local[2];
        }
        for h in &self.hinges {
            let p = [
                x[h.verts[0]],
                x[h.verts[1]],
                x[h.verts[2]],
                h.ghost.unwrap_or(x[h.verts[3]]),
            ];
            let local = hinge_gradient(h, &p);
            let live = if h.ghost.is_some() { 3 } else { 4 };
            for k in 0..live {
                g[h.verts[k]] += local[k];
            }
        }
        Ok(())
    }

    fn membrane_energy(
        &self,
        idx: usize,
        tri: &TriangleData<T>,
        x: &[Vector3<T>],
    ) -> Result<T, ShellError> {
        let [a, b, c] = tri.verts;
        self.membrane_energy_local(idx, tri, &[x[a], x[b], x[c]])
    }

    fn membrane_energy_local(
        &self,
        idx: usize,
        tri: &TriangleData<T>,
        p: &[Vector3<T>; 3],
    ) -> Result<T, ShellError> {
        let (c00, c01, c11) = self.cauchy_green(tri, p);
        let det = c00 * c11 - c01 * c01;
        let half = lit::<T>(0.5);
        let def_area2 = det.max(T::zero()).sqrt() * tri.area;
        if !(def_area2 > self.area_floor) {
            return Err(ShellError::DegenerateTriangle { triangle: idx });
        }
        let i1 = c00 + c11;
        let w = half * (i1 + T::one() / det - lit::<T>(3.0));
        Ok(tri.coeff * w)
    }

    fn cauchy_green(&self, tri: &TriangleData<T>, p: &[Vector3<T>; 3]) -> (T, T, T) {
        let e1 = p[1] - p[0];
        let e2 = p[2] - p[0];
        let [i00, i01, i11] = tri.inv_dm;
        let f1 = e1 * i00; // first column of F
        let f2 = e1 * i01 + e2 * i11; // second column
        (f1.dot(&f1), f1.dot(&f2), f2.dot(&f2))
    }

    /// Forces on the three vertices of one membrane triangle.
    fn membrane_gradient(
        &self,
        idx: usize,
        tri: &TriangleData<T>,
        p: &[Vector3<T>; 3],
    ) -> Result<[Vector3<T>; 3], ShellError> {
        let e1 = p[1] - p[0];
        let e2 = p[2] - p[0];
        let [i00, i01, i11] = tri.inv_dm;
        let f1 = e1 * i00;
        let f2 = e1 * i01 + e2 * i11;
        let c00 = f1.dot(&f1);
        let c01 = f1.dot(&f2);
        let c11 = f2.dot(&f2);
        let det = c00 * c11 - c01 * c01;
        let def_area2 = det.max(T::zero()).sqrt() * tri.area;
        if !(def_area2 > self.area_floor) {
            return Err(ShellError::DegenerateTriangle { triangle: idx });
        }
        // dW/dF = mu (F - F C^-1 / det C); the model coefficient carries mu,
        // so work with the unit-modulus density. C^{-1}/detC = adj(C)/detC^2.
        let inv_det = T::one() / det;
        let s = inv_det * inv_det;
        let q00 = T::one() - c11 * s;
        let q01 = c01 * s;
        let q11 = T::one() - c00 * s;
        // P = F * (I - C^-1/detC): columns
        let p1 = f1 * q00 + f2 * q01;
        let p2 = f1 * q01 + f2 * q11;
        // chain back to edge vectors: dE/dDs = coeff * P * Dm^{-T}
        let g_e1 = p1 * i00 + p2 * i01;
        let g_e2 = p2 * i11;
        let gb = g_e1 * tri.coeff;
        let gc = g_e2 * tri.coeff;
        Ok([-(gb + gc), gb, gc])
    }

    /// Assemble `K = d2E - p d2(dV)` as full local matrices through `emit`,
    /// called as `emit(vertex_i, comp_i, vertex_j, comp_j, value)`.
    ///
    /// Elastic blocks are central finite differences of the analytic element
    /// gradients; the volume Hessian is assembled analytically from skew
    /// blocks. Summation order is fixed for determinism.
    pub(crate) fn assemble_tangent(
        &self,
        x: &[Vector3<T>],
        pressure: T,
        emit: &mut dyn FnMut(usize, usize, usize, usize, T),
    ) -> Result<(), ShellError> {
        let h = self.fd_step;
        let inv_2h = T::one() / (lit::<T>(2.0) * h);

        // membrane blocks
        for (idx, tri) in self.tris.iter().enumerate() {
            let [a, b, c] = tri.verts;
            let base = [x[a], x[b], x[c]];
            let mut cols = [[Vector3::<T>::zeros(); 3]; 9];
            for dof in 0..9 {
                let (v, comp) = (dof / 3, dof % 3);
                let mut plus = base;
                plus[v][comp] += h;
                let gp = self.membrane_gradient(idx, tri, &plus)?;
                let mut minus = base;
                minus[v][comp] -= h;
                let gm = self.membrane_gradient(idx, tri, &minus)?;
                for k in 0..3 {
                    cols[dof][k] = (gp[k] - gm[k]) * inv_2h;
                }
            }
            emit_symmetrized(&tri.verts, &cols, emit);
        }

        // bending blocks (ghost hinges only carry their three live vertices)
        for hinge in &self.hinges {
            let vs = hinge.verts;
            let base = [
                x[vs[0]],
                x[vs[1]],
                x[vs[2]],
                hinge.ghost.unwrap_or(x[vs[3]]),
            ];
            let live = if hinge.ghost.is_some() { 3 } else { 4 };
            let mut cols = [[Vector3::<T>::zeros(); 4]; 12];
            for dof in 0..3 * live {
                let (v, comp) = (dof / 3, dof % 3);
                let mut plus = base;
                plus[v][comp] += h;
                let gp = hinge_gradient(hinge, &plus);
                let mut minus = base;
                minus[v][comp] -= h;
                let gm = hinge_gradient(hinge, &minus);
                for k in 0..live {
                    cols[dof][k] = (gp[k] - gm[k]) * inv_2h;
                }
            }
            emit_symmetrized_n(&vs, &cols, live, emit);
        }

        // volume Hessian: d2(dV) = -d2(V_enc); K gets +p * d2(V_enc)
        let sixth = lit::<T>(1.0 / 6.0);
        let scale = pressure * sixth;
        if scale != T::zero() {
            for tri in &self.tris {
                let [a, b, c] = tri.verts;
                emit_skew_pair(a, b, x[c] * scale, emit);
                emit_skew_pair(b, c, x[a] * scale, emit);
                emit_skew_pair(c, a, x[b] * scale, emit);
            }
        }
        Ok(())
    }

    /// Element stencils, for building solver profiles.
    pub(crate) fn for_each_stencil(&self, f: &mut dyn FnMut(&[usize])) {
        for tri in &self.tris {
            f(&tri.verts);
        }
        for h in &self.hinges {
            let live = if h.ghost.is_some() { 3 } else { 4 };
            f(&h.verts[..live]);
        }
    }
}

/// Emit a symmetrized local Hessian given its FD columns.
fn emit_symmetrized<T: Real, const N: usize>(
    verts: &[usize; N],
    cols: &[[Vector3<T>; N]],
    emit: &mut dyn FnMut(usize, usize, usize, usize, T),
) {
    emit_symmetrized_n(verts, cols, N, emit);
}

fn emit_symmetrized_n<T: Real, const N: usize>(
    verts: &[usize; N],
    cols: &[[Vector3<T>; N]],
    live: usize,
    emit: &mut dyn FnMut(usize, usize, usize, usize, T),
) {
    let half = lit::<T>(0.5);
    let ndof = 3 * live;
    for r in 0..ndof {
        for c in 0..ndof {
            // cols[c][r/3][r%3] is H[r][c]; average with H[c][r]
            let hrc = cols[c][r / 3][r % 3];
            let hcr = cols[r][c / 3][c % 3];
            let v = (hrc + hcr) * half;
            emit(verts[r / 3], r % 3, verts[c / 3], c % 3, v);
        }
    }
}

/// The volume Hessian block pair for vertices `(i, j)`:
/// d2V/dxi dxj = -skew(w), d2V/dxj dxi = +skew(w).
fn emit_skew_pair<T: Real>(
    i: usize,
    j: usize,
    w: Vector3<T>,
    emit: &mut dyn FnMut(usize, usize, usize, usize, T),
) {
    // skew(w) = [[0,-wz,wy],[wz,0,-wx],[-wy,wx,0]]
    let s = Matrix3::new(
        T::zero(),
        -w.z,
        w.y,
        w.z,
        T::zero(),
        -w.x,
        -w.y,
        w.x,
        T::zero(),
    );
    for r in 0..3 {
        for c in 0..3 {
            let v = s[(r, c)];
            if v != T::zero() {
                emit(i, r, j, c, -v);
                emit(j, c, i, r, -v); // transpose block at (j, i)
            }
        }
    }
}

/// Signed dihedral angle at the edge `(p0, p1)` between the faces
/// `(p0, p1, q1)` and `(p1, p0, q2)`, zero when coplanar.
fn dihedral_angle<T: Real>(
    p0: &Vector3<T>,
    p1: &Vector3<T>,
    q1: &Vector3<T>,
    q2: &Vector3<T>,
) -> T {
    let e = p1 - p0;
    let n1 = e.cross(&(q1 - p0));
    let n2 = (q2 - p0).cross(&e);
    let e_hat = e.normalize();
    let sin = n1.cross(&n2).dot(&e_hat);
    let cos = n1.dot(&n2);
    sin.atan2(cos)
}

/// Gradient of the hinge energy w.r.t. its four stencil vertices.
fn hinge_gradient<T: Real>(h: &Hinge<T>, p: &[Vector3<T>; 4]) -> [Vector3<T>; 4] {
    let (theta, grad) = dihedral_gradient(&p[0], &p[1], &p[2], &p[3]);
    let scale = lit::<T>(2.0) * h.stiffness * (theta - h.rest_angle);
    [
        grad[0] * scale,
        grad[1] * scale,
        grad[2] * scale,
        grad[3] * scale,
    ]
}

/// Dihedral angle and its gradient w.r.t. `(p0, p1, q1, q2)`.
fn dihedral_gradient<T: Real>(
    p0: &Vector3<T>,
    p1: &Vector3<T>,
    q1: &Vector3<T>,
    q2: &Vector3<T>,
) -> (T, [Vector3<T>; 4]) {
    let e = p1 - p0;
    let t1 = q1 - p0;
    let t2 = q2 - p0;
    let n1 = e.cross(&t1);
    let n2 = t2.cross(&e);
    let e_len2 = e.norm_squared();
    let e_hat = e / e_len2.sqrt();
    let sin = n1.cross(&n2).dot(&e_hat);
    let cos = n1.dot(&n2);
    let theta = sin.atan2(cos);

    let c1 = e_len2.sqrt() / n1.norm_squared();
    let c2 = e_len2.sqrt() / n2.norm_squared();
    let r1 = t1.dot(&e) / e_len2;
    let r2 = t2.dot(&e) / e_len2;
    let g_q1 = n1 * (-c1);
    let g_q2 = n2 * (-c2);
    let g_p1 = n1 * (c1 * r1) + n2 * (c2 * r2);
    let g_p0 = n1 * (c1 * (T::one() - r1)) + n2 * (c2 * (T::one() - r2));
    (theta, [g_p0, g_p1, g_q1, g_q2])
}

fn rim_closure<T: Real>(vertices: &[Vector3<T>], ring: &[usize]) -> T {
    let m = ring.len();
    if m == 0 {
        return T::zero();
    }
    let inv_m = T::one() / lit::<T>(m as f64);
    let mut centroid = Vector3::zeros();
    for &v in ring {
        centroid += vertices[v];
    }
    centroid *= inv_m;
    let sixth = lit::<T>(1.0 / 6.0);
    let mut v = T::zero();
    for j in 0..m {
        let a = vertices[ring[(j + 1) % m]];
        let b = vertices[ring[j]];
        v += a.dot(&b.cross(&centroid)) * sixth;
    }
    v
}

/// Runtime machine epsilon of the scalar type.
pub(crate) fn machine_epsilon<T: Real>() -> T {
    let two = lit::<T>(2.0);
    let mut e = T::one();
    while T::one() + e / two > T::one() {
        e /= two;
    }
    e
}


#[cfg(test)]
mod bending_diagnostics {
    use super::tests::disk_mesh as disk_mesh_for_diag;
    use super::*;

    #[test]
    fn discrete_bending_energy_of_clamped_mode() {
        // w(r) = w0 (1 - (r/a)^2)^2 is clamped-admissible; its Kirchhoff
        // energy is D/2 * 64/3 * pi * w0^2/a^2 * ... evaluated below
        let (a, t, mu, nu) = (0.05f64, 0.001f64, 1.0e6, 0.3);
        let d_plate = mu * t.powi(3) / (6.0 * (1.0 - nu));
        for nr in [10usize, 20, 40] {
            let mesh = disk_mesh_for_diag(a, t, mu, nu, nr);
            let model = ShellModel::new(&mesh).unwrap();
            let w0 = 1e-6 * a;
            let mut u = DisplacementField::zeros(mesh.vertices.len());
            for (v, slot) in u.values.iter_mut().enumerate() {
                if !model.is_rim(v) {
                    let p = mesh.vertices[v];
                    let rho2 = (p.x * p.x + p.y * p.y) / (a * a);
                    slot.z = w0 * (1.0 - rho2) * (1.0 - rho2);
                }
            }
            let e = model.elastic_energy(&u).unwrap();
            let e_cont = 0.5 * d_plate * 67.0212 * w0 * w0 / (a * a) * 1.0; // integral computed analytically
            println!(
                "nr={nr}: E_bend={:.6e} E_cont={:.6e} ratio={:.4} (stretch {:.2e})",
                e.bending,
                e_cont,
                e.bending / e_cont,
                e.stretching
            );
        }
    }
}
