//! Continuous Lagrange spaces of degree 1 and 2 on a triangle mesh.
//!
//! Local P2 ordering per triangle is `(v0, v1, v2, m12, m02, m01)` where `mij`
//! is the midpoint of the edge joining local vertices `i` and `j`. Global
//! scalar DOFs are the mesh vertices followed (for P2) by the mesh edges.
//! Vector spaces are component-blocked: all x-DOFs, then all y-DOFs.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};

#[derive(Debug, Clone)]
pub struct FESpace {
    mesh: Arc<Mesh>,
    degree: usize,
    components: usize,
    n_scalar: usize,
    /// Scalar DOFs per triangle, `nloc` consecutive entries each.
    cell_dofs: Vec<usize>,
    dof_coords: Vec<Point>,
    /// Scalar boundary DOFs (node on the boundary).
    scalar_boundary: Vec<usize>,
}

pub fn build_space(mesh: Arc<Mesh>, degree: usize, components: usize) -> Result<FESpace> {
    if !(1..=2).contains(&degree) {
        return Err(Error::UnsupportedDegree(degree));
    }
    if !(1..=2).contains(&components) {
        return Err(Error::InvalidInput(format!("unsupported component count {components}")));
    }
    let nv = mesh.n_vertices();
    let n_scalar = if degree == 1 { nv } else { nv + mesh.n_edges() };
    let nloc = if degree == 1 { 3 } else { 6 };

    let mut cell_dofs = Vec::with_capacity(nloc * mesh.n_triangles());
    for (tri, edges) in mesh.triangles().iter().zip(mesh.triangle_edges()) {
        cell_dofs.extend_from_slice(tri);
        if degree == 2 {
            // Edge opposite vertex k joins the other two, so edges[0] is m12.
            cell_dofs.extend(edges.iter().map(|&e| nv + e));
        }
    }

    let mut dof_coords: Vec<Point> = mesh.vertices().to_vec();
    if degree == 2 {
        dof_coords.extend(mesh.edges().iter().map(|&[a, b]| {
            let (pa, pb) = (mesh.vertices()[a], mesh.vertices()[b]);
            [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]
        }));
    }

    let mut scalar_boundary: Vec<usize> = mesh.boundary_vertices().to_vec();
    if degree == 2 {
        scalar_boundary.extend(mesh.boundary_edges().iter().map(|&e| nv + e));
    }
    scalar_boundary.sort_unstable();

    Ok(FESpace {
        mesh,
        degree,
        components,
        n_scalar,
        cell_dofs,
        dof_coords,
        scalar_boundary,
    })
}

/// Shape function values and gradients at one point of one triangle.
#[derive(Debug, Clone, Copy)]
pub struct ShapeValues {
    pub n: usize,
    pub values: [f64; 6],
    pub grads: [[f64; 2]; 6],
}

/// Affine geometry of one triangle.
#[derive(Debug, Clone, Copy)]
pub struct TriangleGeometry {
    pub area: f64,
    /// Physical gradients of the barycentric coordinates.
    pub grad_bary: [[f64; 2]; 3],
    pub vertices: [Point; 3],
}

impl TriangleGeometry {
    pub fn new(vertices: [Point; 3]) -> Self {
        let [p0, p1, p2] = vertices;
        let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        let grad_bary = [
            [(p1[1] - p2[1]) / det, (p2[0] - p1[0]) / det],
            [(p2[1] - p0[1]) / det, (p0[0] - p2[0]) / det],
            [(p0[1] - p1[1]) / det, (p1[0] - p0[0]) / det],
        ];
        TriangleGeometry {
            area: 0.5 * det,
            grad_bary,
            vertices,
        }
    }

    pub fn point(&self, bary: &[f64; 3]) -> Point {
        let v = &self.vertices;
        [
            bary[0] * v[0][0] + bary[1] * v[1][0] + bary[2] * v[2][0],
            bary[0] * v[0][1] + bary[1] * v[1][1] + bary[2] * v[2][1],
        ]
    }

    pub fn shape(&self, degree: usize, bary: &[f64; 3]) -> ShapeValues {
        let l = bary;
        let g = &self.grad_bary;
        let mut s = ShapeValues {
            n: if degree == 1 { 3 } else { 6 },
            values: [0.0; 6],
            grads: [[0.0; 2]; 6],
        };
        if degree == 1 {
            for k in 0..3 {
                s.values[k] = l[k];
                s.grads[k] = g[k];
            }
            return s;
        }
        for k in 0..3 {
            s.values[k] = l[k] * (2.0 * l[k] - 1.0);
            let c = 4.0 * l[k] - 1.0;
            s.grads[k] = [c * g[k][0], c * g[k][1]];
        }
        // Midpoint of edge (i, j) sits at local slot 3 + (vertex opposite).
        for (slot, (i, j)) in [(1usize, 2usize), (0, 2), (0, 1)].into_iter().enumerate() {
            s.values[3 + slot] = 4.0 * l[i] * l[j];
            s.grads[3 + slot] = [
                4.0 * (l[i] * g[j][0] + l[j] * g[i][0]),
                4.0 * (l[i] * g[j][1] + l[j] * g[i][1]),
            ];
        }
        s
    }
}

impl FESpace {
    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn components(&self) -> usize {
        self.components
    }

    /// Number of scalar DOFs per component.
    pub fn n_scalar(&self) -> usize {
        self.n_scalar
    }

    pub fn ndofs(&self) -> usize {
        self.n_scalar * self.components
    }

    pub fn local_size(&self) -> usize {
        if self.degree == 1 {
            3
        } else {
            6
        }
    }

    /// Scalar global DOFs of triangle `t`.
    pub fn cell_dofs(&self, t: usize) -> &[usize] {
        let n = self.local_size();
        &self.cell_dofs[n * t..n * (t + 1)]
    }

    /// Coordinates of scalar DOF nodes.
    pub fn dof_coords(&self) -> &[Point] {
        &self.dof_coords
    }

    /// Coordinate of any (possibly vector) DOF.
    pub fn dof_coord(&self, dof: usize) -> Point {
        self.dof_coords[dof % self.n_scalar]
    }

    /// Component a DOF belongs to.
    pub fn dof_component(&self, dof: usize) -> usize {
        dof / self.n_scalar
    }

    /// All boundary DOFs (every component), ascending.
    pub fn boundary_dofs(&self) -> Vec<usize> {
        (0..self.components)
            .flat_map(|c| self.scalar_boundary.iter().map(move |&d| c * self.n_scalar + d))
            .collect()
    }

    pub fn scalar_boundary_dofs(&self) -> &[usize] {
        &self.scalar_boundary
    }

    pub fn geometry(&self, t: usize) -> TriangleGeometry {
        TriangleGeometry::new(self.mesh.triangle_points(t))
    }

    /// Nodal interpolation; `f` returns one value per component.
    pub fn interpolate_coeffs<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(Point) -> [f64; 2],
    {
        let mut coeffs = vec![0.0; self.ndofs()];
        for (i, &p) in self.dof_coords.iter().enumerate() {
            let v = f(p);
            for c in 0..self.components {
                coeffs[c * self.n_scalar + i] = v[c];
            }
        }
        coeffs
    }

    /// Value and gradient of each component at a barycentric point.
    pub fn eval(&self, coeffs: &[f64], t: usize, bary: &[f64; 3]) -> Result<([f64; 2], [[f64; 2]; 2])> {
        if t >= self.mesh.n_triangles() {
            return Err(Error::IndexOutOfRange {
                index: t,
                len: self.mesh.n_triangles(),
            });
        }
        if coeffs.len() != self.ndofs() {
            return Err(Error::DimensionMismatch {
                expected: self.ndofs(),
                actual: coeffs.len(),
            });
        }
        let geo = self.geometry(t);
        let shape = geo.shape(self.degree, bary);
        Ok(self.eval_with(coeffs, self.cell_dofs(t), &shape))
    }

    /// Evaluation with precomputed shape data; no bounds checking.
    #[inline]
    pub fn eval_with(&self, coeffs: &[f64], dofs: &[usize], shape: &ShapeValues) -> ([f64; 2], [[f64; 2]; 2]) {
        let mut val = [0.0; 2];
        let mut grad = [[0.0; 2]; 2];
        for c in 0..self.components {
            let off = c * self.n_scalar;
            for k in 0..shape.n {
                let a = coeffs[off + dofs[k]];
                val[c] += a * shape.values[k];
                grad[c][0] += a * shape.grads[k][0];
                grad[c][1] += a * shape.grads[k][1];
            }
        }
        (val, grad)
    }
}

/// Coefficient vector bound to its space.
#[derive(Debug, Clone)]
pub struct FeFunction {
    space: Arc<FESpace>,
    coeffs: Vec<f64>,
}

impl FeFunction {
    pub fn new(space: Arc<FESpace>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.ndofs() {
            return Err(Error::DimensionMismatch {
                expected: space.ndofs(),
                actual: coeffs.len(),
            });
        }
        Ok(FeFunction { space, coeffs })
    }

    pub fn zeros(space: Arc<FESpace>) -> Self {
        let n = space.ndofs();
        FeFunction {
            space,
            coeffs: vec![0.0; n],
        }
    }

    pub fn space(&self) -> &Arc<FESpace> {
        &self.space
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn eval(&self, t: usize, bary: &[f64; 3]) -> Result<([f64; 2], [[f64; 2]; 2])> {
        self.space.eval(&self.coeffs, t, bary)
    }
}

pub fn interpolate<F>(space: &Arc<FESpace>, f: F) -> FeFunction
where
    F: Fn(Point) -> [f64; 2],
{
    FeFunction {
        space: space.clone(),
        coeffs: space.interpolate_coeffs(f),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_rect_mesh;
    use crate::quadrature::quad_rule;
    use std::f64::consts::PI;

    fn pi_mesh(n: usize) -> Arc<Mesh> {
        Arc::new(build_rect_mesh((0.0, PI), (0.0, PI), n, n).unwrap())
    }

    #[test]
    fn dof_counts() {
        let m = pi_mesh(20);
        assert_eq!(build_space(m.clone(), 2, 1).unwrap().ndofs(), 1681);
        assert_eq!(build_space(m.clone(), 1, 1).unwrap().ndofs(), 441);
        assert_eq!(build_space(m.clone(), 2, 2).unwrap().ndofs(), 3362);
        assert!(matches!(build_space(m, 3, 1), Err(Error::UnsupportedDegree(3))));
    }

    #[test]
    fn shared_dofs_are_continuous() {
        let m = pi_mesh(4);
        let s = build_space(m.clone(), 2, 1).unwrap();
        // Every global DOF referenced from two triangles sits at the same point.
        for e in 0..m.n_edges() {
            let tris = m.edge_triangles(e);
            let nv = m.n_vertices();
            for &t in tris {
                assert!(s.cell_dofs(t).contains(&(nv + e)));
            }
        }
        for t in 0..m.n_triangles() {
            let geo = s.geometry(t);
            let nodes = [
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
                [0.0, 0.5, 0.5],
                [0.5, 0.0, 0.5],
                [0.5, 0.5, 0.0],
            ];
            for (k, &d) in s.cell_dofs(t).iter().enumerate() {
                let p = geo.point(&nodes[k]);
                let q = s.dof_coords()[d];
                assert!((p[0] - q[0]).abs() < 1e-14 && (p[1] - q[1]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn boundary_dofs_on_boundary() {
        let m = pi_mesh(5);
        let s = build_space(m.clone(), 2, 2).unwrap();
        let b = s.boundary_dofs();
        assert_eq!(b.len(), 2 * 40);
        for d in b {
            assert!(m.on_boundary(s.dof_coord(d), 1e-12));
        }
    }

    #[test]
    fn interpolate_linear_and_zero() {
        let m = pi_mesh(3);
        let s = Arc::new(build_space(m, 2, 1).unwrap());
        let z = interpolate(&s, |_| [0.0, 0.0]);
        assert!(z.coeffs().iter().all(|&c| c == 0.0));
        let f = interpolate(&s, |p| [p[0], 0.0]);
        for (c, p) in f.coeffs().iter().zip(s.dof_coords()) {
            assert_eq!(*c, p[0]);
        }
    }

    #[test]
    fn eval_constant_and_linear() {
        let m = pi_mesh(3);
        let s = Arc::new(build_space(m, 2, 1).unwrap());
        let c = interpolate(&s, |_| [2.5, 0.0]);
        let (v, g) = c.eval(4, &[0.2, 0.3, 0.5]).unwrap();
        assert!((v[0] - 2.5).abs() < 1e-14);
        assert!(g[0][0].abs() < 1e-12 && g[0][1].abs() < 1e-12);

        let x = interpolate(&s, |p| [p[0], 0.0]);
        let (_, g) = x.eval(7, &[0.1, 0.6, 0.3]).unwrap();
        assert!((g[0][0] - 1.0).abs() < 1e-12 && g[0][1].abs() < 1e-12);
        assert!(x.eval(10_000, &[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn p2_reproduces_quadratics_at_quadrature_points() {
        let m = pi_mesh(3);
        let s = Arc::new(build_space(m.clone(), 2, 1).unwrap());
        let f = interpolate(&s, |p| [p[0] * p[0], 0.0]);
        let rule = quad_rule(6).unwrap();
        for t in 0..m.n_triangles() {
            let geo = s.geometry(t);
            for (b, _) in rule.iter() {
                let p = geo.point(b);
                let (v, g) = f.eval(t, b).unwrap();
                assert!((v[0] - p[0] * p[0]).abs() < 1e-12);
                assert!((g[0][0] - 2.0 * p[0]).abs() < 1e-11);
                assert!(g[0][1].abs() < 1e-11);
            }
        }
    }

    #[test]
    fn partition_of_unity() {
        let m = pi_mesh(2);
        let rule = quad_rule(8).unwrap();
        for degree in [1, 2] {
            let s = build_space(m.clone(), degree, 1).unwrap();
            for t in 0..m.n_triangles() {
                let geo = s.geometry(t);
                for (b, _) in rule.iter() {
                    let sh = geo.shape(degree, b);
                    let sum: f64 = sh.values[..sh.n].iter().sum();
                    assert!((sum - 1.0).abs() < 1e-14);
                    let gx: f64 = sh.grads[..sh.n].iter().map(|g| g[0]).sum();
                    assert!(gx.abs() < 1e-12);
                }
            }
        }
    }
}
