//! Quadrature-based assembly of the bilinear and trilinear forms of the
//! reduced MHD system on P2/P1 Taylor-Hood spaces.
//!
//! With the imposed field `B = (0, 0, b)` and in-plane vectors the cross
//! products reduce to
//!
//! * `u x B = b (u2, -u1)`,
//! * `(u x B, v x B) = b^2 (u, v)`,
//! * `(grad phi, v x B) = b * int(dphi/dx v2 - dphi/dy v1)`.
//!
//! Element contributions are accumulated in element order, so assembly is
//! deterministic regardless of the execution mode.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::{SparseMatrix, Triplets};
use crate::mesh::Point;
use crate::quadrature::{quad_rule, QuadratureRule, ASSEMBLY_DEGREE};
use crate::spaces::{FESpace, ShapeValues};

/// Out-of-plane imposed magnetic field `B = (0, 0, b)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FieldB {
    pub b: f64,
}

impl FieldB {
    pub fn new(b: f64) -> Result<Self> {
        if !b.is_finite() {
            return Err(Error::InvalidInput(format!("field magnitude {b} is not finite")));
        }
        Ok(FieldB { b })
    }

    pub fn vector(&self) -> [f64; 3] {
        [0.0, 0.0, self.b]
    }

    /// `v x B` for an in-plane `v`, returned as its in-plane part.
    pub fn cross(&self, v: [f64; 2]) -> [f64; 2] {
        let c = cross3([v[0], v[1], 0.0], self.vector());
        debug_assert!(c[2] == 0.0);
        [c[0], c[1]]
    }
}

pub fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub type LocalMatrix = [[f64; 6]; 6];

/// Precomputed shape data of one triangle at every point of a rule.
pub(crate) struct ElementData {
    pub shapes: Vec<ShapeValues>,
    pub weights: Vec<f64>,
    pub points: Vec<Point>,
}

impl ElementData {
    pub(crate) fn new(space: &FESpace, rule: &QuadratureRule, t: usize) -> Self {
        let geo = space.geometry(t);
        let mut shapes = Vec::with_capacity(rule.len());
        let mut weights = Vec::with_capacity(rule.len());
        let mut points = Vec::with_capacity(rule.len());
        for (b, w) in rule.iter() {
            shapes.push(geo.shape(space.degree(), b));
            weights.push(w * geo.area);
            points.push(geo.point(b));
        }
        ElementData {
            shapes,
            weights,
            points,
        }
    }
}

fn assembly_rule() -> QuadratureRule {
    quad_rule(ASSEMBLY_DEGREE).expect("assembly rule is always available")
}

fn same_mesh(a: &FESpace, b: &FESpace) -> Result<()> {
    if Arc::ptr_eq(a.mesh(), b.mesh()) {
        Ok(())
    } else {
        Err(Error::InvalidInput("spaces are defined on different meshes".into()))
    }
}

/// Assembles a scalar element kernel, replicated on the diagonal blocks of a
/// vector space.
fn assemble_block_diagonal<F>(space: &FESpace, kernel: F) -> SparseMatrix
where
    F: Fn(usize) -> LocalMatrix + Sync + Send,
{
    let nt = space.mesh().n_triangles();
    let nloc = space.local_size();
    let locals = exec::map_indexed(nt, kernel);
    let ns = space.n_scalar();
    let n = space.ndofs();
    let mut trip = Triplets::with_capacity(n, n, nt * nloc * nloc * space.components());
    for c in 0..space.components() {
        let off = c * ns;
        for (t, local) in locals.iter().enumerate() {
            let dofs = space.cell_dofs(t);
            for i in 0..nloc {
                for j in 0..nloc {
                    trip.push(off + dofs[i], off + dofs[j], local[i][j]);
                }
            }
        }
    }
    trip.build()
}

pub fn element_mass(space: &FESpace, rule: &QuadratureRule, t: usize) -> LocalMatrix {
    let el = ElementData::new(space, rule, t);
    let n = space.local_size();
    let mut m = [[0.0; 6]; 6];
    for (s, &w) in el.shapes.iter().zip(&el.weights) {
        for i in 0..n {
            for j in 0..n {
                m[i][j] += w * s.values[i] * s.values[j];
            }
        }
    }
    m
}

pub fn element_stiffness(space: &FESpace, rule: &QuadratureRule, t: usize) -> LocalMatrix {
    let el = ElementData::new(space, rule, t);
    let n = space.local_size();
    let mut k = [[0.0; 6]; 6];
    for (s, &w) in el.shapes.iter().zip(&el.weights) {
        for i in 0..n {
            for j in 0..n {
                k[i][j] += w * (s.grads[i][0] * s.grads[j][0] + s.grads[i][1] * s.grads[j][1]);
            }
        }
    }
    k
}

/// Scalar block of the skew-symmetrized convection operator:
/// `C_ij = 1/2 (w . grad phi_j, phi_i) - 1/2 (w . grad phi_i, phi_j)`.
pub fn element_convection(space: &FESpace, rule: &QuadratureRule, w: &[f64], t: usize) -> LocalMatrix {
    let el = ElementData::new(space, rule, t);
    let n = space.local_size();
    let dofs = space.cell_dofs(t);
    let mut a = [[0.0; 6]; 6];
    for (s, &wq) in el.shapes.iter().zip(&el.weights) {
        let (wv, _) = space.eval_with(w, dofs, s);
        for j in 0..n {
            let adv = wq * (wv[0] * s.grads[j][0] + wv[1] * s.grads[j][1]);
            for i in 0..n {
                a[i][j] += adv * s.values[i];
            }
        }
    }
    let mut c = [[0.0; 6]; 6];
    for i in 0..n {
        for j in 0..n {
            c[i][j] = 0.5 * (a[i][j] - a[j][i]);
        }
    }
    c
}

pub fn assemble_mass(space: &FESpace) -> SparseMatrix {
    let rule = assembly_rule();
    assemble_block_diagonal(space, |t| element_mass(space, &rule, t))
}

pub fn assemble_stiffness(space: &FESpace) -> SparseMatrix {
    let rule = assembly_rule();
    assemble_block_diagonal(space, |t| element_stiffness(space, &rule, t))
}

/// Matrix `C(w)` with `v^T C(w) u = b*(w, u, v)`; exactly skew-symmetric.
pub fn assemble_convection(space: &FESpace, w: &[f64]) -> Result<SparseMatrix> {
    if space.components() != 2 {
        return Err(Error::InvalidInput("convection needs a vector space".into()));
    }
    if w.len() != space.ndofs() {
        return Err(Error::DimensionMismatch {
            expected: space.ndofs(),
            actual: w.len(),
        });
    }
    let rule = assembly_rule();
    Ok(assemble_block_diagonal(space, |t| element_convection(space, &rule, w, t)))
}

/// `C(w) u` computed element by element without forming the matrix.
pub fn convection_action(space: &FESpace, w: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    for v in [w, u] {
        if v.len() != space.ndofs() {
            return Err(Error::DimensionMismatch {
                expected: space.ndofs(),
                actual: v.len(),
            });
        }
    }
    let rule = assembly_rule();
    let nloc = space.local_size();
    let locals = exec::map_indexed(space.mesh().n_triangles(), |t| {
        let el = ElementData::new(space, &rule, t);
        let dofs = space.cell_dofs(t);
        let mut r = [[0.0; 6]; 2];
        for (s, &wq) in el.shapes.iter().zip(&el.weights) {
            let (wv, _) = space.eval_with(w, dofs, s);
            let (uv, ug) = space.eval_with(u, dofs, s);
            for c in 0..2 {
                let w_grad_u = wv[0] * ug[c][0] + wv[1] * ug[c][1];
                for i in 0..nloc {
                    let w_grad_v = wv[0] * s.grads[i][0] + wv[1] * s.grads[i][1];
                    r[c][i] += 0.5 * wq * (w_grad_u * s.values[i] - w_grad_v * uv[c]);
                }
            }
        }
        r
    });
    let ns = space.n_scalar();
    let mut out = vec![0.0; space.ndofs()];
    for (t, r) in locals.iter().enumerate() {
        let dofs = space.cell_dofs(t);
        for c in 0..2 {
            for i in 0..nloc {
                out[c * ns + dofs[i]] += r[c][i];
            }
        }
    }
    Ok(out)
}

/// `(u x B, v x B)`, assembled from the cross products directly.
pub fn assemble_lorentz(space: &FESpace, field: FieldB) -> Result<SparseMatrix> {
    if space.components() != 2 {
        return Err(Error::InvalidInput("Lorentz operator needs a vector space".into()));
    }
    let rule = assembly_rule();
    let nloc = space.local_size();
    let nt = space.mesh().n_triangles();
    let unit = [[1.0, 0.0], [0.0, 1.0]];
    let ex_b = field.cross(unit[0]);
    let ey_b = field.cross(unit[1]);
    let dirs = [ex_b, ey_b];
    let locals = exec::map_indexed(nt, |t| {
        let el = ElementData::new(space, &rule, t);
        let mut m = [[[[0.0; 6]; 6]; 2]; 2];
        for (s, &w) in el.shapes.iter().zip(&el.weights) {
            for (ci, di) in dirs.iter().enumerate() {
                for (cj, dj) in dirs.iter().enumerate() {
                    let dot = di[0] * dj[0] + di[1] * dj[1];
                    for i in 0..nloc {
                        for j in 0..nloc {
                            m[ci][cj][i][j] += w * dot * s.values[i] * s.values[j];
                        }
                    }
                }
            }
        }
        m
    });
    let ns = space.n_scalar();
    let mut trip = Triplets::new(space.ndofs(), space.ndofs());
    for ci in 0..2 {
        for cj in 0..2 {
            for (t, m) in locals.iter().enumerate() {
                let dofs = space.cell_dofs(t);
                for i in 0..nloc {
                    for j in 0..nloc {
                        if m[ci][cj][i][j] != 0.0 || ci == cj {
                            trip.push(ci * ns + dofs[i], cj * ns + dofs[j], m[ci][cj][i][j]);
                        }
                    }
                }
            }
        }
    }
    Ok(trip.build())
}

/// `G[v_i][psi_j] = (grad psi_j, v_i x B)`; rows index velocity DOFs,
/// columns potential DOFs. `G^T u` gives `(u x B, grad psi)`.
pub fn assemble_grad_cross(phi_space: &FESpace, vel_space: &FESpace, field: FieldB) -> Result<SparseMatrix> {
    same_mesh(phi_space, vel_space)?;
    if phi_space.components() != 1 || vel_space.components() != 2 {
        return Err(Error::InvalidInput("expected scalar potential and vector velocity spaces".into()));
    }
    let rule = assembly_rule();
    let nt = vel_space.mesh().n_triangles();
    let nv = vel_space.local_size();
    let np = phi_space.local_size();
    let dirs = [field.cross([1.0, 0.0]), field.cross([0.0, 1.0])];
    let locals = exec::map_indexed(nt, |t| {
        let ev = ElementData::new(vel_space, &rule, t);
        let ep = ElementData::new(phi_space, &rule, t);
        let mut g = [[[0.0; 6]; 6]; 2];
        for q in 0..ev.weights.len() {
            let (sv, sp, w) = (&ev.shapes[q], &ep.shapes[q], ev.weights[q]);
            for (c, d) in dirs.iter().enumerate() {
                for i in 0..nv {
                    for j in 0..np {
                        g[c][i][j] += w * sv.values[i] * (d[0] * sp.grads[j][0] + d[1] * sp.grads[j][1]);
                    }
                }
            }
        }
        g
    });
    let ns = vel_space.n_scalar();
    let mut trip = Triplets::new(vel_space.ndofs(), phi_space.ndofs());
    for c in 0..2 {
        for (t, g) in locals.iter().enumerate() {
            let vd = vel_space.cell_dofs(t);
            let pd = phi_space.cell_dofs(t);
            for i in 0..nv {
                for j in 0..np {
                    trip.push(c * ns + vd[i], pd[j], g[c][i][j]);
                }
            }
        }
    }
    Ok(trip.build())
}

/// `D[q][v] = (q, div v)`; rows index pressure DOFs, columns velocity DOFs.
pub fn assemble_divergence(vel_space: &FESpace, p_space: &FESpace) -> Result<SparseMatrix> {
    same_mesh(vel_space, p_space)?;
    if p_space.components() != 1 || vel_space.components() != 2 {
        return Err(Error::InvalidInput("expected scalar pressure and vector velocity spaces".into()));
    }
    let rule = assembly_rule();
    let nt = vel_space.mesh().n_triangles();
    let nv = vel_space.local_size();
    let np = p_space.local_size();
    let locals = exec::map_indexed(nt, |t| {
        let ev = ElementData::new(vel_space, &rule, t);
        let ep = ElementData::new(p_space, &rule, t);
        let mut d = [[[0.0; 6]; 6]; 2];
        for q in 0..ev.weights.len() {
            let (sv, sp, w) = (&ev.shapes[q], &ep.shapes[q], ev.weights[q]);
            for (c, dc) in d.iter_mut().enumerate() {
                for i in 0..np {
                    for j in 0..nv {
                        dc[i][j] += w * sp.values[i] * sv.grads[j][c];
                    }
                }
            }
        }
        d
    });
    let ns = vel_space.n_scalar();
    let mut trip = Triplets::new(p_space.ndofs(), vel_space.ndofs());
    for c in 0..2 {
        for (t, d) in locals.iter().enumerate() {
            let vd = vel_space.cell_dofs(t);
            let pd = p_space.cell_dofs(t);
            for i in 0..np {
                for j in 0..nv {
                    trip.push(pd[i], c * ns + vd[j], d[c][i][j]);
                }
            }
        }
    }
    Ok(trip.build())
}

/// `F[i] = int f . psi_i`; `f` returns one value per component.
pub fn assemble_load<F>(space: &FESpace, f: F, quad_degree: usize) -> Result<Vec<f64>>
where
    F: Fn(Point) -> [f64; 2] + Sync + Send,
{
    let rule = quad_rule(quad_degree)?;
    let nloc = space.local_size();
    let ncomp = space.components();
    let locals = exec::map_indexed(space.mesh().n_triangles(), |t| {
        let el = ElementData::new(space, &rule, t);
        let mut r = [[0.0; 6]; 2];
        for ((s, &w), &p) in el.shapes.iter().zip(&el.weights).zip(&el.points) {
            let fv = f(p);
            for c in 0..ncomp {
                for i in 0..nloc {
                    r[c][i] += w * fv[c] * s.values[i];
                }
            }
        }
        r
    });
    let ns = space.n_scalar();
    let mut out = vec![0.0; space.ndofs()];
    for (t, r) in locals.iter().enumerate() {
        let dofs = space.cell_dofs(t);
        for c in 0..ncomp {
            for i in 0..nloc {
                out[c * ns + dofs[i]] += r[c][i];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{apply_dirichlet, factorize};
    use crate::mesh::build_rect_mesh;
    use crate::spaces::build_space;
    use std::f64::consts::PI;

    fn spaces(n: usize, x: (f64, f64)) -> (Arc<FESpace>, Arc<FESpace>, Arc<FESpace>) {
        let m = Arc::new(build_rect_mesh(x, x, n, n).unwrap());
        (
            Arc::new(build_space(m.clone(), 2, 2).unwrap()),
            Arc::new(build_space(m.clone(), 1, 1).unwrap()),
            Arc::new(build_space(m, 2, 1).unwrap()),
        )
    }

    #[test]
    fn cross_product_identities() {
        let f = FieldB { b: 1.7 };
        let u = [0.3, -1.2];
        assert_eq!(f.cross(u), [1.7 * u[1], -1.7 * u[0]]);
        let v = [2.0, 0.5];
        let lhs = f.cross(u)[0] * f.cross(v)[0] + f.cross(u)[1] * f.cross(v)[1];
        assert!((lhs - 1.7 * 1.7 * (u[0] * v[0] + u[1] * v[1])).abs() < 1e-14);
        // B x (B x u) = -b^2 u
        let bxu = cross3(f.vector(), [u[0], u[1], 0.0]);
        let bbu = cross3(f.vector(), bxu);
        assert!((bbu[0] + 1.7 * 1.7 * u[0]).abs() < 1e-14 && (bbu[1] + 1.7 * 1.7 * u[1]).abs() < 1e-14);
    }

    #[test]
    fn p1_element_mass() {
        let m = Arc::new(build_rect_mesh((0.0, 1.0), (0.0, 1.0), 1, 1).unwrap());
        let s = build_space(m, 1, 1).unwrap();
        let rule = quad_rule(5).unwrap();
        let local = element_mass(&s, &rule, 0);
        let area = 0.5;
        for i in 0..3 {
            for j in 0..3 {
                let expect = area / 12.0 * if i == j { 2.0 } else { 1.0 };
                assert!((local[i][j] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mass_row_sums_and_norm() {
        let (_, p1, p2) = spaces(40, (0.0, PI));
        let mass = assemble_mass(&p1);
        let total: f64 = mass.values().iter().sum();
        assert!((total - PI * PI).abs() < 1e-10);
        assert_eq!(mass.max_asymmetry(), 0.0);

        let mass = assemble_mass(&p2);
        let x = p2.interpolate_coeffs(|p| [(5.0 * p[0]).sin() * (5.0 * p[1]).sin(), 0.0]);
        assert!((mass.bilinear(&x, &x) - PI * PI / 4.0).abs() < 1e-3);
    }

    #[test]
    fn stiffness_kernel_and_energy() {
        let (_, _, p2) = spaces(40, (0.0, PI));
        let k = assemble_stiffness(&p2);
        let ones = vec![1.0; p2.ndofs()];
        assert!(k.matvec(&ones).iter().all(|v| v.abs() < 1e-12));
        let x = p2.interpolate_coeffs(|p| [p[0], 0.0]);
        assert!((k.bilinear(&x, &x) - PI * PI).abs() < 1e-10);
        let x = p2.interpolate_coeffs(|p| [(5.0 * p[0]).cos() * (5.0 * p[1]).cos(), 0.0]);
        let exact = 25.0 * PI * PI / 2.0;
        assert!((k.bilinear(&x, &x) - exact).abs() / exact < 5e-3);
    }

    #[test]
    fn convection_zero_and_skew() {
        let (v, _, _) = spaces(4, (0.0, 1.0));
        let c = assemble_convection(&v, &vec![0.0; v.ndofs()]).unwrap();
        assert_eq!(c.max_abs(), 0.0);
        let w = v.interpolate_coeffs(|p| [p[1].sin(), p[0] * p[1]]);
        let c = assemble_convection(&v, &w).unwrap();
        assert_eq!(c.max_skew_defect(), 0.0);
        let u = v.interpolate_coeffs(|p| [p[0].cos(), p[1] * p[1]]);
        assert!(c.bilinear(&u, &u).abs() < 1e-14);
        let direct = convection_action(&v, &w, &u).unwrap();
        let via_matrix = c.matvec(&u);
        for (a, b) in direct.iter().zip(&via_matrix) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn convection_against_quadrature_oracle() {
        let (v, _, _) = spaces(3, (0.0, 1.0));
        let w = v.interpolate_coeffs(|_| [1.0, 0.0]);
        let u = v.interpolate_coeffs(|p| [p[1], 0.0]);
        let t = v.interpolate_coeffs(|p| [p[0], 0.0]);
        let c = assemble_convection(&v, &w).unwrap();
        let assembled = c.bilinear(&t, &u);
        // b*(w,u,t) = 1/2 int du1/dx t1 - 1/2 int dt1/dx u1 with du1/dx = 0,
        // dt1/dx = 1: = -1/2 int y = -1/4.
        assert!((assembled + 0.25).abs() < 1e-13);
    }

    #[test]
    fn lorentz_is_scaled_mass() {
        let (v, _, _) = spaces(5, (0.0, 1.0));
        let mass = assemble_mass(&v);
        assert_eq!(assemble_lorentz(&v, FieldB { b: 0.0 }).unwrap().max_abs(), 0.0);
        for b in [1.0, 2.0, -0.7] {
            let l = assemble_lorentz(&v, FieldB { b }).unwrap();
            let mut scaled = mass.clone();
            scaled.scale(b * b);
            let mut diff = l.clone();
            diff.add_scaled(&scaled, -1.0).unwrap();
            assert!(diff.max_abs() <= 1e-12 * scaled.max_abs());
        }
    }

    #[test]
    fn grad_cross_properties() {
        let (v, _, s) = spaces(4, (0.0, 2.0));
        let g = assemble_grad_cross(&s, &v, FieldB { b: 1.5 }).unwrap();
        let ones = vec![1.0; s.ndofs()];
        assert!(g.matvec(&ones).iter().all(|x| x.abs() < 1e-12));
        let phi = s.interpolate_coeffs(|p| [p[0], 0.0]);
        let test = v.interpolate_coeffs(|_| [0.0, 1.0]);
        assert!((g.bilinear(&test, &phi) - 1.5 * 4.0).abs() < 1e-12);
        let g0 = assemble_grad_cross(&s, &v, FieldB { b: 0.0 }).unwrap();
        assert_eq!(g0.max_abs(), 0.0);
    }

    #[test]
    fn divergence_properties() {
        let (v, p, _) = spaces(4, (0.0, 1.0));
        let d = assemble_divergence(&v, &p).unwrap();
        let radial = v.interpolate_coeffs(|x| [x[0], x[1]]);
        let total: f64 = d.matvec(&radial).iter().sum();
        assert!((total - 2.0).abs() < 1e-12);
        let rot = v.interpolate_coeffs(|x| [x[1], -x[0]]);
        assert!(d.matvec(&rot).iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn divergence_row_against_oracle() {
        // Row of the centre vertex recomputed with a degree-8 rule.
        let (v, p, _) = spaces(2, (0.0, 1.0));
        let d = assemble_divergence(&v, &p).unwrap();
        let rule = quad_rule(8).unwrap();
        let qi = 4;
        let ns = v.n_scalar();
        let mut oracle = vec![0.0; v.ndofs()];
        for t in 0..v.mesh().n_triangles() {
            let Some(a) = p.cell_dofs(t).iter().position(|&d| d == qi) else {
                continue;
            };
            let geo = v.geometry(t);
            for (bary, w) in rule.iter() {
                let sp = geo.shape(1, bary);
                let sv = geo.shape(2, bary);
                for (b, &dof) in v.cell_dofs(t).iter().enumerate() {
                    for c in 0..2 {
                        oracle[c * ns + dof] += w * geo.area * sp.values[a] * sv.grads[b][c];
                    }
                }
            }
        }
        assert!(oracle.iter().any(|x| x.abs() > 1e-3));
        for (j, o) in oracle.iter().enumerate() {
            assert!((d.get(qi, j) - o).abs() < 1e-14, "entry {j}");
        }
    }

    #[test]
    fn load_vectors() {
        let (_, p1, p2) = spaces(40, (0.0, PI));
        let z = assemble_load(&p2, |_| [0.0, 0.0], 5).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        let one: f64 = assemble_load(&p1, |_| [1.0, 0.0], 2).unwrap().iter().sum();
        assert!((one - PI * PI).abs() < 1e-10);
        let f = |p: Point| [(5.0 * p[0]).sin() * (5.0 * p[1]).sin(), 0.0];
        let load = assemble_load(&p2, f, 6).unwrap();
        let x = p2.interpolate_coeffs(f);
        let dot: f64 = load.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((dot - PI * PI / 4.0).abs() < 1e-3);
    }

    #[test]
    fn harmonic_linear_reproduced() {
        let (_, _, s) = spaces(6, (0.0, 1.0));
        let mut k = assemble_stiffness(&s);
        let mut rhs = vec![0.0; s.ndofs()];
        let bd = s.boundary_dofs();
        let vals: Vec<f64> = bd.iter().map(|&d| s.dof_coord(d)[0]).collect();
        apply_dirichlet(&mut k, &mut rhs, &bd, &vals).unwrap();
        let x = factorize(&k).unwrap().solve(&rhs).unwrap();
        for (i, xi) in x.iter().enumerate() {
            assert!((xi - s.dof_coord(i)[0]).abs() < 1e-10);
        }
    }

    #[test]
    fn mesh_mismatch_rejected() {
        let (v, _, _) = spaces(2, (0.0, 1.0));
        let (_, p, _) = spaces(2, (0.0, 1.0));
        assert!(assemble_divergence(&v, &p).is_err());
    }
}
