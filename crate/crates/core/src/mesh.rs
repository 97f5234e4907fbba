//! Structured conforming triangulations of axis-aligned rectangles.
//!
//! Vertices are numbered row-major (x fastest). Each grid cell is split along
//! the diagonal from its lower-left to its upper-right corner, giving the two
//! counterclockwise triangles `[ll, lr, ur]` and `[ll, ur, ul]`.

use std::collections::HashMap;
use std::io::Write;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
    /// `triangle_edges[t][k]` is the edge opposite local vertex `k`.
    triangle_edges: Vec<[usize; 3]>,
    edge_triangles: Vec<Vec<usize>>,
    boundary_edges: Vec<usize>,
    boundary_vertices: Vec<usize>,
    x_range: (f64, f64),
    y_range: (f64, f64),
    h: f64,
}

fn check_interval(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
        return Err(Error::InvalidInput(format!(
            "{name} interval [{lo}, {hi}] is empty or reversed"
        )));
    }
    Ok(())
}

/// Builds an `nx` x `ny` grid over `x_range` x `y_range`, two triangles per cell.
pub fn build_rect_mesh(x_range: (f64, f64), y_range: (f64, f64), nx: usize, ny: usize) -> Result<Mesh> {
    check_interval("x", x_range)?;
    check_interval("y", y_range)?;
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidInput(format!(
            "grid divisions must be positive, got nx={nx} ny={ny}"
        )));
    }

    let (x0, x1) = x_range;
    let (y0, y1) = y_range;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        // Interpolate from both ends so the far boundary is hit exactly.
        let y = if j == ny { y1 } else { y0 + (y1 - y0) * j as f64 / ny as f64 };
        for i in 0..=nx {
            let x = if i == nx { x1 } else { x0 + (x1 - x0) * i as f64 / nx as f64 };
            vertices.push([x, y]);
        }
    }

    let vid = |i: usize, j: usize| j * (nx + 1) + i;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let ll = vid(i, j);
            let lr = vid(i + 1, j);
            let ul = vid(i, j + 1);
            let ur = vid(i + 1, j + 1);
            triangles.push([ll, lr, ur]);
            triangles.push([ll, ur, ul]);
        }
    }

    let mut edge_index: HashMap<[usize; 2], usize> = HashMap::new();
    let mut edges = Vec::new();
    let mut edge_triangles: Vec<Vec<usize>> = Vec::new();
    let mut triangle_edges = Vec::with_capacity(triangles.len());
    for (t, tri) in triangles.iter().enumerate() {
        let mut local = [0usize; 3];
        for (k, slot) in local.iter_mut().enumerate() {
            let a = tri[(k + 1) % 3];
            let b = tri[(k + 2) % 3];
            let key = if a < b { [a, b] } else { [b, a] };
            let e = *edge_index.entry(key).or_insert_with(|| {
                edges.push(key);
                edge_triangles.push(Vec::with_capacity(2));
                edges.len() - 1
            });
            edge_triangles[e].push(t);
            *slot = e;
        }
        triangle_edges.push(local);
    }

    let boundary_edges: Vec<usize> = (0..edges.len())
        .filter(|&e| edge_triangles[e].len() == 1)
        .collect();
    let mut on_boundary = vec![false; vertices.len()];
    for &e in &boundary_edges {
        on_boundary[edges[e][0]] = true;
        on_boundary[edges[e][1]] = true;
    }
    let boundary_vertices = (0..vertices.len()).filter(|&v| on_boundary[v]).collect();

    let mut mesh = Mesh {
        vertices,
        triangles,
        edges,
        triangle_edges,
        edge_triangles,
        boundary_edges,
        boundary_vertices,
        x_range,
        y_range,
        h: 0.0,
    };
    mesh.h = (0..mesh.triangles.len())
        .map(|t| mesh.triangle_diameter(t))
        .fold(0.0, f64::max);
    Ok(mesh)
}

/// Maximum element diameter.
pub fn mesh_size(mesh: &Mesh) -> f64 {
    mesh.h
}

impl Mesh {
    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn triangle_edges(&self) -> &[[usize; 3]] {
        &self.triangle_edges
    }

    pub fn edge_triangles(&self, edge: usize) -> &[usize] {
        &self.edge_triangles[edge]
    }

    pub fn boundary_edges(&self) -> &[usize] {
        &self.boundary_edges
    }

    pub fn boundary_vertices(&self) -> &[usize] {
        &self.boundary_vertices
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn x_range(&self) -> (f64, f64) {
        self.x_range
    }

    pub fn y_range(&self) -> (f64, f64) {
        self.y_range
    }

    pub fn area(&self) -> f64 {
        (self.x_range.1 - self.x_range.0) * (self.y_range.1 - self.y_range.0)
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Signed area (positive for counterclockwise orientation).
    pub fn signed_area(&self, t: usize) -> f64 {
        let [p0, p1, p2] = self.triangle_points(t);
        0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]))
    }

    pub fn triangle_diameter(&self, t: usize) -> f64 {
        let p = self.triangle_points(t);
        (0..3)
            .map(|k| {
                let a = p[k];
                let b = p[(k + 1) % 3];
                (a[0] - b[0]).hypot(a[1] - b[1])
            })
            .fold(0.0, f64::max)
    }

    /// True when `p` lies on the rectangle boundary within `tol`.
    pub fn on_boundary(&self, p: Point, tol: f64) -> bool {
        (p[0] - self.x_range.0).abs() <= tol
            || (p[0] - self.x_range.1).abs() <= tol
            || (p[1] - self.y_range.0).abs() <= tol
            || (p[1] - self.y_range.1).abs() <= tol
    }

    /// Checks orientation, conformity and the Euler relation.
    pub fn validate(&self) -> Result<()> {
        for t in 0..self.n_triangles() {
            if self.signed_area(t) <= 0.0 {
                return Err(Error::InvalidInput(format!("triangle {t} is not counterclockwise")));
            }
        }
        // Conformity: every edge is shared by at most two triangles, and every
        // triangle pair sharing two vertices shares the full edge between them.
        for (e, tris) in self.edge_triangles.iter().enumerate() {
            if tris.is_empty() || tris.len() > 2 {
                return Err(Error::InvalidInput(format!("edge {e} has {} triangles", tris.len())));
            }
        }
        let mut vertex_triangles = vec![Vec::new(); self.n_vertices()];
        for (t, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                vertex_triangles[v].push(t);
            }
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            let mut neighbours: Vec<usize> = tri.iter().flat_map(|&v| vertex_triangles[v].iter().copied()).collect();
            neighbours.sort_unstable();
            neighbours.dedup();
            for s in neighbours.into_iter().filter(|&s| s != t) {
                let shared = tri.iter().filter(|v| self.triangles[s].contains(v)).count();
                if shared == 3 {
                    return Err(Error::InvalidInput(format!("triangles {t} and {s} coincide")));
                }
                if shared == 2 {
                    let common: Vec<usize> = self.triangle_edges[t]
                        .iter()
                        .filter(|e| self.triangle_edges[s].contains(e))
                        .copied()
                        .collect();
                    if common.len() != 1 {
                        return Err(Error::InvalidInput(format!(
                            "triangles {t} and {s} share two vertices but not an edge"
                        )));
                    }
                }
            }
        }
        let euler = self.n_vertices() as i64 - self.n_edges() as i64 + self.n_triangles() as i64;
        if euler != 1 {
            return Err(Error::InvalidInput(format!("Euler characteristic {euler} != 1")));
        }
        Ok(())
    }

    /// Plain-text dump: a header line, one `x y` line per vertex, then one
    /// `a b c` line per triangle.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.n_vertices(), self.n_triangles())?;
        for v in &self.vertices {
            writeln!(out, "{:.17e} {:.17e}", v[0], v[1])?;
        }
        for t in &self.triangles {
            writeln!(out, "{} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }
}
