//! Norms, errors against analytic fields, space-time norms and rates.

use serde::Serialize;

use crate::assembly::{assemble_mass, assemble_stiffness};
use crate::error::{Error, Result};
use crate::exec;
use crate::mesh::Point;
use crate::quadrature::quad_rule;
use crate::spaces::FESpace;

/// Lowest quadrature degree accepted for error norms.
pub const MIN_ERROR_DEGREE: usize = 6;

fn check_len(space: &FESpace, coeffs: &[f64]) -> Result<()> {
    if coeffs.len() != space.ndofs() {
        return Err(Error::DimensionMismatch {
            expected: space.ndofs(),
            actual: coeffs.len(),
        });
    }
    Ok(())
}

/// `sqrt(xᵀ M x)`.
pub fn l2_norm(space: &FESpace, coeffs: &[f64]) -> Result<f64> {
    check_len(space, coeffs)?;
    Ok(assemble_mass(space).bilinear(coeffs, coeffs).max(0.0).sqrt())
}

/// `sqrt(xᵀ K x)`.
pub fn h1_seminorm(space: &FESpace, coeffs: &[f64]) -> Result<f64> {
    check_len(space, coeffs)?;
    Ok(assemble_stiffness(space).bilinear(coeffs, coeffs).max(0.0).sqrt())
}

/// Sums `integrand(t, bary, point)` weighted over every quadrature point.
fn integrate<F>(space: &FESpace, degree: usize, integrand: F) -> Result<f64>
where
    F: Fn(usize, &[f64; 3], Point) -> f64 + Sync + Send,
{
    if degree < MIN_ERROR_DEGREE {
        return Err(Error::InvalidInput(format!(
            "error norms need quadrature degree >= {MIN_ERROR_DEGREE}, got {degree}"
        )));
    }
    let rule = quad_rule(degree)?;
    let parts = exec::map_indexed(space.mesh().n_triangles(), |t| {
        let geo = space.geometry(t);
        rule.iter()
            .map(|(b, w)| w * geo.area * integrand(t, b, geo.point(b)))
            .sum::<f64>()
    });
    Ok(parts.iter().sum())
}

/// `‖u_exact - u_h‖` by quadrature against the analytic field.
pub fn l2_error_vs_exact<F>(space: &FESpace, coeffs: &[f64], exact: F, degree: usize) -> Result<f64>
where
    F: Fn(Point) -> [f64; 2] + Sync + Send,
{
    check_len(space, coeffs)?;
    let nc = space.components();
    let sq = integrate(space, degree, |t, b, p| {
        let shape = space.geometry(t).shape(space.degree(), b);
        let (v, _) = space.eval_with(coeffs, space.cell_dofs(t), &shape);
        let e = exact(p);
        (0..nc).map(|c| (e[c] - v[c]).powi(2)).sum()
    })?;
    Ok(sq.max(0.0).sqrt())
}

/// `‖∇u_exact - ∇u_h‖`; `exact_grad(p)[c]` is the gradient of component `c`.
pub fn h1_error_vs_exact<F>(space: &FESpace, coeffs: &[f64], exact_grad: F, degree: usize) -> Result<f64>
where
    F: Fn(Point) -> [[f64; 2]; 2] + Sync + Send,
{
    check_len(space, coeffs)?;
    let nc = space.components();
    let sq = integrate(space, degree, |t, b, p| {
        let shape = space.geometry(t).shape(space.degree(), b);
        let (_, g) = space.eval_with(coeffs, space.cell_dofs(t), &shape);
        let e = exact_grad(p);
        (0..nc)
            .map(|c| (e[c][0] - g[c][0]).powi(2) + (e[c][1] - g[c][1]).powi(2))
            .sum()
    })?;
    Ok(sq.max(0.0).sqrt())
}

/// `(‖u_exact - u_h‖, ‖∇u_exact - ∇u_h‖)` in one pass over the mesh.
pub fn errors_vs_exact<F, G>(space: &FESpace, coeffs: &[f64], exact: F, exact_grad: G, degree: usize) -> Result<(f64, f64)>
where
    F: Fn(Point) -> [f64; 2] + Sync + Send,
    G: Fn(Point) -> [[f64; 2]; 2] + Sync + Send,
{
    check_len(space, coeffs)?;
    if degree < MIN_ERROR_DEGREE {
        return Err(Error::InvalidInput(format!(
            "error norms need quadrature degree >= {MIN_ERROR_DEGREE}, got {degree}"
        )));
    }
    let rule = quad_rule(degree)?;
    let nc = space.components();
    let parts = exec::map_indexed(space.mesh().n_triangles(), |t| {
        let geo = space.geometry(t);
        let dofs = space.cell_dofs(t);
        let mut acc = [0.0; 2];
        for (b, w) in rule.iter() {
            let p = geo.point(b);
            let (v, g) = space.eval_with(coeffs, dofs, &geo.shape(space.degree(), b));
            let (e, eg) = (exact(p), exact_grad(p));
            for c in 0..nc {
                acc[0] += w * geo.area * (e[c] - v[c]).powi(2);
                acc[1] += w * geo.area * ((eg[c][0] - g[c][0]).powi(2) + (eg[c][1] - g[c][1]).powi(2));
            }
        }
        acc
    });
    let (l2, h1) = parts.iter().fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
    Ok((l2.max(0.0).sqrt(), h1.max(0.0).sqrt()))
}

/// `(max_n e_n, sqrt(Σ_n dt e_n²))` over `n = 0..=Ñ`.
pub fn discrete_norms(errors: &[f64], dt: f64) -> Result<(f64, f64)> {
    if errors.is_empty() {
        return Err(Error::InvalidInput("empty error series".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
    }
    let sup = errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let l2 = (errors.iter().map(|e| e * e).sum::<f64>() * dt).sqrt();
    Ok((sup, l2))
}

/// Observed orders between consecutive rows, `ln(e_{i-1}/e_i) / ln(h_{i-1}/h_i)`.
pub fn convergence_rate(errors: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    if errors.len() != h.len() {
        return Err(Error::DimensionMismatch {
            expected: h.len(),
            actual: errors.len(),
        });
    }
    if errors.len() < 2 {
        return Err(Error::InvalidInput("rates need at least two rows".into()));
    }
    if let Some(e) = errors.iter().find(|e| !(**e > 0.0)) {
        return Err(Error::InvalidInput(format!("errors must be positive, got {e}")));
    }
    if let Some(x) = h.iter().find(|x| !(**x > 0.0)) {
        return Err(Error::InvalidInput(format!("mesh sizes must be positive, got {x}")));
    }
    errors
        .windows(2)
        .zip(h.windows(2))
        .map(|(e, h)| {
            if h[0] == h[1] {
                Err(Error::InvalidInput(format!("repeated mesh size {}", h[0])))
            } else {
                Ok((e[0] / e[1]).ln() / (h[0] / h[1]).ln())
            }
        })
        .collect()
}

/// `½‖φ̄‖² + ½‖ū‖²`.
pub fn ensemble_energy(vel_space: &FESpace, mean_u: &[f64], phi_space: &FESpace, mean_phi: &[f64]) -> Result<f64> {
    let u = l2_norm(vel_space, mean_u)?;
    let phi = l2_norm(phi_space, mean_phi)?;
    Ok(0.5 * phi * phi + 0.5 * u * u)
}

/// One refinement level of a convergence study.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorRow {
    /// Mesh-size label (e.g. `1/20`).
    pub h: f64,
    pub dt: f64,
    pub values: Vec<f64>,
}

/// Errors per refinement level for a fixed list of named norms, ordered by
/// decreasing `h`.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorSeries {
    pub names: Vec<String>,
    pub rows: Vec<ErrorRow>,
}

impl ErrorSeries {
    pub fn new(names: Vec<String>) -> Self {
        ErrorSeries { names, rows: Vec::new() }
    }

    pub fn push(&mut self, row: ErrorRow) -> Result<()> {
        if row.values.len() != self.names.len() {
            return Err(Error::DimensionMismatch {
                expected: self.names.len(),
                actual: row.values.len(),
            });
        }
        if let Some(last) = self.rows.last() {
            if row.h >= last.h {
                return Err(Error::InvalidInput(format!(
                    "refinements must have decreasing h: {} after {}",
                    row.h, last.h
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.values[k]).collect()
    }

    /// Rates for norm `k`; empty for fewer than two rows.
    pub fn rates(&self, k: usize) -> Result<Vec<f64>> {
        if self.rows.len() < 2 {
            return Ok(Vec::new());
        }
        let h: Vec<f64> = self.rows.iter().map(|r| r.h).collect();
        convergence_rate(&self.column(k), &h)
    }
}
