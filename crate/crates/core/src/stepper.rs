//! Partitioned ensemble time stepping and the per-member baseline.
//!
//! Each step solves two uncoupled problems from time-level-`n` data:
//!
//! 1. velocity/pressure: one saddle-point matrix built with the ensemble mean
//!    `ū^n` in the implicit convection, shared by every member; the
//!    fluctuation `u_j^n - ū^n` is convected explicitly;
//! 2. potential: `K φ_j^{n+1} = Gᵀ u_j^n`, with `K` factored once.
//!
//! The baseline instead puts each member's own `u_j^n` into the implicit
//! convection and therefore factors one matrix per member per step.
//!
//! Saddle unknowns are ordered `[u (vector P2), p (P1), λ]`, where `λ` is the
//! multiplier enforcing `∫p = 0`.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assembly::{
    assemble_divergence, assemble_grad_cross, assemble_load, assemble_lorentz, assemble_mass, assemble_stiffness,
    convection_action, element_convection, FieldB,
};
use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::{factorize, factorize_with, DirichletLift, Factorization, SparseMatrix, SymbolicAnalysis, Triplets};
use crate::mesh::{Mesh, Point};
use crate::quadrature::{quad_rule, QuadratureRule, ASSEMBLY_DEGREE};
use crate::spaces::{build_space, FESpace, FeFunction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Hartmann number `M`.
    pub hartmann: f64,
    /// Interaction parameter `N`.
    pub interaction: f64,
    pub field: FieldB,
    pub dt: f64,
    pub final_time: f64,
    pub members: usize,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(name, format!("must be positive and finite, got {v}")))
            }
        };
        positive("M", self.hartmann)?;
        positive("N", self.interaction)?;
        positive("dt", self.dt)?;
        positive("T", self.final_time)?;
        if !self.field.b.is_finite() {
            return Err(Error::config("b", "must be finite"));
        }
        if self.final_time < self.dt * (1.0 - 1e-12) {
            return Err(Error::config("T", format!("final time {} is below dt {}", self.final_time, self.dt)));
        }
        if self.members == 0 {
            return Err(Error::config("J", "ensemble needs at least one member"));
        }
        Ok(())
    }

    /// Number of steps to reach the final time, `round(T / dt)`.
    pub fn n_steps(&self) -> usize {
        (self.final_time / self.dt).round() as usize
    }
}

/// Time-dependent Dirichlet data, per member.
pub trait BcProvider: Sync {
    fn velocity(&self, member: usize, p: Point, t: f64) -> [f64; 2];
    fn potential(&self, member: usize, p: Point, t: f64) -> f64;
}

/// Momentum source, per member.
pub trait Forcing: Sync {
    fn eval(&self, member: usize, p: Point, t: f64) -> [f64; 2];

    /// When true the load vector is skipped entirely.
    fn is_zero(&self) -> bool {
        false
    }
}

/// Homogeneous boundary data and no forcing.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroData;

impl BcProvider for ZeroData {
    fn velocity(&self, _: usize, _: Point, _: f64) -> [f64; 2] {
        [0.0; 2]
    }

    fn potential(&self, _: usize, _: Point, _: f64) -> f64 {
        0.0
    }
}

impl Forcing for ZeroData {
    fn eval(&self, _: usize, _: Point, _: f64) -> [f64; 2] {
        [0.0; 2]
    }

    fn is_zero(&self) -> bool {
        true
    }
}

/// Spaces and time-independent operators on one mesh.
#[derive(Debug)]
pub struct Discretization {
    pub mesh: Arc<Mesh>,
    pub velocity: Arc<FESpace>,
    pub pressure: Arc<FESpace>,
    pub potential: Arc<FESpace>,
    pub field: FieldB,
    /// Vector P2 mass.
    pub mass_u: SparseMatrix,
    /// Vector P2 stiffness.
    pub stiff_u: SparseMatrix,
    /// `(u x B, v x B)`.
    pub lorentz: SparseMatrix,
    /// Rows velocity, columns potential: `(grad psi, v x B)`.
    pub grad_cross: SparseMatrix,
    pub grad_cross_t: SparseMatrix,
    /// Rows pressure, columns velocity: `(q, div v)`.
    pub divergence: SparseMatrix,
    /// `∫q` for each pressure basis function.
    pub pressure_mean: Vec<f64>,
    pub mass_phi: SparseMatrix,
    pub stiff_phi: SparseMatrix,
    pub velocity_boundary: Vec<usize>,
    pub potential_boundary: Vec<usize>,
}

impl Discretization {
    pub fn new(mesh: Arc<Mesh>, field: FieldB) -> Result<Self> {
        let velocity = Arc::new(build_space(mesh.clone(), 2, 2)?);
        let pressure = Arc::new(build_space(mesh.clone(), 1, 1)?);
        let potential = Arc::new(build_space(mesh.clone(), 2, 1)?);
        let grad_cross = assemble_grad_cross(&potential, &velocity, field)?;
        let pressure_mean = assemble_load(&pressure, |_| [1.0, 0.0], 1)?;
        Ok(Discretization {
            mass_u: assemble_mass(&velocity),
            stiff_u: assemble_stiffness(&velocity),
            lorentz: assemble_lorentz(&velocity, field)?,
            grad_cross_t: grad_cross.transpose(),
            grad_cross,
            divergence: assemble_divergence(&velocity, &pressure)?,
            pressure_mean,
            mass_phi: assemble_mass(&potential),
            stiff_phi: assemble_stiffness(&potential),
            velocity_boundary: velocity.boundary_dofs(),
            potential_boundary: potential.boundary_dofs(),
            mesh,
            velocity,
            pressure,
            potential,
            field,
        })
    }

    pub fn n_velocity(&self) -> usize {
        self.velocity.ndofs()
    }

    pub fn n_pressure(&self) -> usize {
        self.pressure.ndofs()
    }

    /// Size of the saddle-point system.
    pub fn n_saddle(&self) -> usize {
        self.n_velocity() + self.n_pressure() + 1
    }

    pub fn l2_velocity(&self, u: &[f64]) -> f64 {
        self.mass_u.bilinear(u, u).max(0.0).sqrt()
    }

    pub fn h1_velocity(&self, u: &[f64]) -> f64 {
        self.stiff_u.bilinear(u, u).max(0.0).sqrt()
    }

    pub fn l2_potential(&self, phi: &[f64]) -> f64 {
        self.mass_phi.bilinear(phi, phi).max(0.0).sqrt()
    }

    pub fn h1_potential(&self, phi: &[f64]) -> f64 {
        self.stiff_phi.bilinear(phi, phi).max(0.0).sqrt()
    }

    /// `½‖φ̄‖² + ½‖ū‖²`.
    pub fn ensemble_energy(&self, mean_u: &[f64], mean_phi: &[f64]) -> f64 {
        0.5 * self.mass_phi.bilinear(mean_phi, mean_phi) + 0.5 * self.mass_u.bilinear(mean_u, mean_u)
    }

    fn velocity_bc_values(&self, bc: &dyn BcProvider, member: usize, t: f64) -> Vec<f64> {
        let ns = self.velocity.n_scalar();
        self.velocity_boundary
            .iter()
            .map(|&d| {
                let comp = d / ns;
                bc.velocity(member, self.velocity.dof_coord(d), t)[comp]
            })
            .collect()
    }

    fn potential_bc_values(&self, bc: &dyn BcProvider, member: usize, t: f64) -> Vec<f64> {
        self.potential_boundary
            .iter()
            .map(|&d| bc.potential(member, self.potential.dof_coord(d), t))
            .collect()
    }
}

/// Members' fields at one time level.
#[derive(Debug, Clone)]
pub struct EnsembleState {
    pub n: usize,
    pub t: f64,
    pub u: Vec<FeFunction>,
    pub p: Vec<FeFunction>,
    pub phi: Vec<FeFunction>,
    pub mean_u: Vec<f64>,
    pub mean_phi: Vec<f64>,
}

impl EnsembleState {
    /// State at `n = 0` with zero pressure.
    pub fn new(disc: &Discretization, u0: Vec<Vec<f64>>, phi0: Vec<Vec<f64>>) -> Result<Self> {
        if u0.is_empty() || u0.len() != phi0.len() {
            return Err(Error::InvalidInput(format!(
                "need matching non-empty member lists, got {} velocities and {} potentials",
                u0.len(),
                phi0.len()
            )));
        }
        let u = u0
            .into_iter()
            .map(|c| FeFunction::new(disc.velocity.clone(), c))
            .collect::<Result<Vec<_>>>()?;
        let phi = phi0
            .into_iter()
            .map(|c| FeFunction::new(disc.potential.clone(), c))
            .collect::<Result<Vec<_>>>()?;
        let p = (0..u.len()).map(|_| FeFunction::zeros(disc.pressure.clone())).collect();
        let mut state = EnsembleState {
            n: 0,
            t: 0.0,
            u,
            p,
            phi,
            mean_u: Vec::new(),
            mean_phi: Vec::new(),
        };
        state.refresh_mean();
        Ok(state)
    }

    pub fn members(&self) -> usize {
        self.u.len()
    }

    pub fn refresh_mean(&mut self) {
        let (mu, mphi) = compute_mean(self);
        self.mean_u = mu;
        self.mean_phi = mphi;
    }

    pub fn is_finite(&self) -> bool {
        self.u
            .iter()
            .chain(&self.p)
            .chain(&self.phi)
            .all(|f| f.coeffs().iter().all(|v| v.is_finite()))
    }
}

fn mean_of(fields: &[FeFunction]) -> Vec<f64> {
    let mut mean = vec![0.0; fields[0].coeffs().len()];
    for f in fields {
        for (m, v) in mean.iter_mut().zip(f.coeffs()) {
            *m += v;
        }
    }
    let inv = fields.len() as f64;
    mean.iter_mut().for_each(|m| *m /= inv);
    mean
}

/// Arithmetic means `(ū, φ̄)` of the members' coefficient vectors.
pub fn compute_mean(state: &EnsembleState) -> (Vec<f64>, Vec<f64>) {
    (mean_of(&state.u), mean_of(&state.phi))
}

/// Velocity/pressure system after Dirichlet elimination, plus the eliminated
/// columns needed to lift each member's boundary data.
#[derive(Debug)]
pub struct VelocitySystem {
    pub matrix: SparseMatrix,
    pub lift: DirichletLift,
}

/// Stability-monitor settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CflSettings {
    /// Constant multiplying `κ`; unknown in theory, 1 by default.
    pub constant: f64,
    /// Steps with `max κ_j` above this are flagged.
    pub threshold: f64,
}

impl Default for CflSettings {
    fn default() -> Self {
        CflSettings {
            constant: 1.0,
            threshold: 1.0,
        }
    }
}

/// Per-step diagnostics delivered to observers.
#[derive(Debug, Clone, Serialize)]
pub struct StepReport {
    pub n: usize,
    pub t: f64,
    pub l2_u: Vec<f64>,
    pub h1_u: Vec<f64>,
    pub l2_phi: Vec<f64>,
    pub h1_phi: Vec<f64>,
    /// CFL monitor values from the level the step started at.
    pub kappa: Vec<f64>,
    pub max_kappa: f64,
    pub cfl_exceeded: bool,
    /// `½‖φ̄‖² + ½‖ū‖²` at the new level.
    pub energy: f64,
    /// Per-member stability functional at the new level.
    pub stability_energy: Vec<f64>,
    /// `max |D u_j|` relative to `max|u_j| * max_row Σ|D|`.
    pub divergence_residual: Vec<f64>,
    /// `|∫p_j|` relative to `max|p_j| * |Ω|`.
    pub pressure_mean: Vec<f64>,
    /// Velocity factorizations performed during this step.
    pub factorizations: usize,
}

/// Tolerances for the per-step invariants.
pub const DIVERGENCE_TOL: f64 = 1e-9;
pub const PRESSURE_MEAN_TOL: f64 = 1e-10;

impl StepReport {
    pub fn invariants_hold(&self) -> bool {
        self.divergence_residual.iter().all(|&r| r <= DIVERGENCE_TOL)
            && self.pressure_mean.iter().all(|&r| r <= PRESSURE_MEAN_TOL)
    }
}

/// Which velocity scheme `advance` uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// One shared matrix per step.
    Ensemble,
    /// One matrix per member per step.
    Serial,
}

/// Time stepper bound to a discretization and parameter set.
pub struct Stepper {
    disc: Arc<Discretization>,
    params: ModelParams,
    cfl: CflSettings,
    rule: QuadratureRule,
    /// Saddle matrix without convection; its pattern already holds every
    /// convection entry.
    base: SparseMatrix,
    /// Position in `base.values` of each local convection entry, indexed
    /// `[(t * 2 + c) * 36 + i * 6 + j]`.
    conv_positions: Vec<usize>,
    symbolic: SymbolicAnalysis,
    potential_factor: Factorization,
    potential_lift: DirichletLift,
    div_scale: f64,
    factorizations: usize,
    cfl_warned: AtomicBool,
}

impl std::fmt::Debug for Stepper {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stepper")
            .field("params", &self.params)
            .field("n_saddle", &self.base.nrows())
            .field("factorizations", &self.factorizations)
            .finish()
    }
}

impl Stepper {
    pub fn new(disc: Arc<Discretization>, params: ModelParams) -> Result<Self> {
        params.validate()?;
        if params.field != disc.field {
            return Err(Error::InvalidInput("field differs from the discretization's".into()));
        }
        let nv = disc.n_velocity();
        let np = disc.n_pressure();
        let n = disc.n_saddle();
        let inv_ndt = 1.0 / (params.interaction * params.dt);
        let inv_m2 = 1.0 / (params.hartmann * params.hartmann);

        let mut trip = Triplets::with_capacity(n, n, 3 * disc.mass_u.nnz() + 4 * disc.divergence.nnz() + 2 * np);
        trip.push_block(&disc.mass_u, 0, 0, inv_ndt);
        trip.push_block(&disc.stiff_u, 0, 0, inv_m2);
        trip.push_block(&disc.lorentz, 0, 0, 1.0);
        trip.push_block_transposed(&disc.divergence, 0, nv, -1.0);
        trip.push_block(&disc.divergence, nv, 0, -1.0);
        for (q, &m) in disc.pressure_mean.iter().enumerate() {
            trip.push(nv + q, nv + np, m);
            trip.push(nv + np, nv + q, m);
        }
        let base = trip.build();

        let vel = &disc.velocity;
        let ns = vel.n_scalar();
        let nt = disc.mesh.n_triangles();
        let mut conv_positions = Vec::with_capacity(nt * 72);
        for t in 0..nt {
            let dofs = vel.cell_dofs(t);
            for c in 0..2 {
                for i in 0..6 {
                    for j in 0..6 {
                        let pos = base
                            .position(c * ns + dofs[i], c * ns + dofs[j])
                            .ok_or_else(|| Error::InvalidInput("convection entry outside saddle pattern".into()))?;
                        conv_positions.push(pos);
                    }
                }
            }
        }
        // The multiplier row is dense over the pressure block; it and one
        // pressure node are split off the sparse factor.
        let symbolic = SymbolicAnalysis::with_border(&base, &[nv, nv + np])?;

        let mut kphi = disc.stiff_phi.clone();
        let potential_lift = DirichletLift::new(&kphi, &disc.potential_boundary)?;
        kphi.eliminate_rows_cols(&disc.potential_boundary)?;
        let potential_factor = factorize(&kphi)?;

        let div_scale = (0..disc.divergence.nrows())
            .map(|i| disc.divergence.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);

        Ok(Stepper {
            rule: quad_rule(ASSEMBLY_DEGREE)?,
            disc,
            params,
            cfl: CflSettings::default(),
            base,
            conv_positions,
            symbolic,
            potential_factor,
            potential_lift,
            div_scale,
            factorizations: 0,
            cfl_warned: AtomicBool::new(false),
        })
    }

    pub fn with_cfl(mut self, cfl: CflSettings) -> Self {
        self.cfl = cfl;
        self
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn discretization(&self) -> &Arc<Discretization> {
        &self.disc
    }

    /// Velocity factorizations performed so far.
    pub fn factorizations(&self) -> usize {
        self.factorizations
    }

    /// Saddle matrix with implicit convection `C(w)`, before Dirichlet rows.
    pub fn saddle_matrix(&self, w: &[f64]) -> Result<SparseMatrix> {
        let vel = &self.disc.velocity;
        if w.len() != vel.ndofs() {
            return Err(Error::DimensionMismatch {
                expected: vel.ndofs(),
                actual: w.len(),
            });
        }
        let nt = self.disc.mesh.n_triangles();
        let locals = exec::map_indexed(nt, |t| element_convection(vel, &self.rule, w, t));
        let scale = 1.0 / self.params.interaction;
        let mut matrix = self.base.clone();
        let values = matrix.values_mut();
        for (t, local) in locals.iter().enumerate() {
            for c in 0..2 {
                let pos = &self.conv_positions[(t * 2 + c) * 36..(t * 2 + c + 1) * 36];
                for i in 0..6 {
                    for j in 0..6 {
                        values[pos[i * 6 + j]] += scale * local[i][j];
                    }
                }
            }
        }
        Ok(matrix)
    }

    /// The shared velocity/pressure system for implicit convection by `mean_u`.
    pub fn build_shared_velocity_system(&self, mean_u: &[f64]) -> Result<VelocitySystem> {
        let mut matrix = self.saddle_matrix(mean_u)?;
        let lift = DirichletLift::new(&matrix, &self.disc.velocity_boundary)?;
        matrix.eliminate_rows_cols(&self.disc.velocity_boundary)?;
        Ok(VelocitySystem { matrix, lift })
    }

    /// Saddle right-hand side for one member before boundary lifting:
    /// `(1/(N dt)) M u + G φ + F(f(t)) - (1/N) C(fluct) u` in the velocity
    /// rows, zero elsewhere.
    pub fn build_member_rhs(
        &self,
        member: usize,
        u: &[f64],
        phi: &[f64],
        fluctuation: Option<&[f64]>,
        forcing: &dyn Forcing,
        t: f64,
    ) -> Result<Vec<f64>> {
        let disc = &*self.disc;
        let nv = disc.n_velocity();
        let mut rhs = vec![0.0; disc.n_saddle()];
        let vel_rhs = &mut rhs[..nv];
        disc.mass_u.matvec_into(u, vel_rhs);
        let inv_ndt = 1.0 / (self.params.interaction * self.params.dt);
        vel_rhs.iter_mut().for_each(|v| *v *= inv_ndt);
        let g_phi = disc.grad_cross.matvec(phi);
        for (r, g) in vel_rhs.iter_mut().zip(&g_phi) {
            *r += g;
        }
        if !forcing.is_zero() {
            let load = assemble_load(&disc.velocity, |p| forcing.eval(member, p, t), ASSEMBLY_DEGREE)?;
            for (r, l) in vel_rhs.iter_mut().zip(&load) {
                *r += l;
            }
        }
        if let Some(w) = fluctuation {
            let conv = convection_action(&disc.velocity, w, u)?;
            let inv_n = 1.0 / self.params.interaction;
            for (r, c) in vel_rhs.iter_mut().zip(&conv) {
                *r -= inv_n * c;
            }
        }
        Ok(rhs)
    }

    fn check_members(&self, state: &EnsembleState) -> Result<()> {
        if state.members() != self.params.members {
            return Err(Error::DimensionMismatch {
                expected: self.params.members,
                actual: state.members(),
            });
        }
        Ok(())
    }

    fn split_saddle(&self, x: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
        let nv = self.disc.n_velocity();
        let np = self.disc.n_pressure();
        (x[..nv].to_vec(), x[nv..nv + np].to_vec())
    }

    /// Ensemble velocity/pressure update for every member from level `n`.
    /// Performs exactly one factorization.
    pub fn velocity_step(
        &mut self,
        state: &EnsembleState,
        bc: &dyn BcProvider,
        forcing: &dyn Forcing,
    ) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        self.check_members(state)?;
        let t_next = state.t + self.params.dt;
        let system = self.build_shared_velocity_system(&state.mean_u)?;
        let factor = factorize_with(&self.symbolic, &system.matrix)?;
        self.factorizations += 1;

        let single = state.members() == 1;
        let rhs = exec::map_indexed(state.members(), |j| -> Result<Vec<f64>> {
            let u = state.u[j].coeffs();
            let fluct: Vec<f64> = u.iter().zip(&state.mean_u).map(|(a, b)| a - b).collect();
            let mut rhs = self.build_member_rhs(
                j,
                u,
                state.phi[j].coeffs(),
                (!single).then_some(fluct.as_slice()),
                forcing,
                t_next,
            )?;
            system.lift.apply_rhs(&mut rhs, &self.disc.velocity_bc_values(bc, j, t_next));
            Ok(rhs)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

        let sols = factor.solve_multi(&rhs)?;
        Ok(sols.into_iter().map(|x| self.split_saddle(x)).unzip())
    }

    /// Baseline update of one member: implicit convection by its own `u_j^n`,
    /// no fluctuation term, its own factorization.
    pub fn serial_member_velocity(
        &mut self,
        member: usize,
        state: &EnsembleState,
        bc: &dyn BcProvider,
        forcing: &dyn Forcing,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let t_next = state.t + self.params.dt;
        let u = state.u[member].coeffs();
        let system = self.build_shared_velocity_system(u)?;
        let factor = factorize_with(&self.symbolic, &system.matrix)?;
        self.factorizations += 1;
        let mut rhs = self.build_member_rhs(member, u, state.phi[member].coeffs(), None, forcing, t_next)?;
        system.lift.apply_rhs(&mut rhs, &self.disc.velocity_bc_values(bc, member, t_next));
        let sol = factor.solve_multi(&[rhs])?;
        Ok(self.split_saddle(sol.into_iter().next().expect("one solution")))
    }

    /// Potential update `K φ_j^{n+1} = Gᵀ u_j^n` for every member.
    pub fn potential_step(&self, state: &EnsembleState, bc: &dyn BcProvider) -> Result<Vec<Vec<f64>>> {
        let t_next = state.t + self.params.dt;
        let rhs = exec::map_indexed(state.members(), |j| {
            let mut rhs = self.disc.grad_cross_t.matvec(state.u[j].coeffs());
            self.potential_lift
                .apply_rhs(&mut rhs, &self.disc.potential_bc_values(bc, j, t_next));
            rhs
        });
        self.potential_factor.solve_multi(&rhs)
    }

    /// Per-member `κ_j = C (M²/N)(dt/h) ‖∇(u_j - ū)‖²`.
    pub fn cfl_monitor(&self, state: &EnsembleState) -> Vec<f64> {
        let p = &self.params;
        let factor =
            self.cfl.constant * p.hartmann * p.hartmann / p.interaction * p.dt / self.disc.mesh.h();
        state
            .u
            .iter()
            .map(|u| {
                let d: Vec<f64> = u.coeffs().iter().zip(&state.mean_u).map(|(a, b)| a - b).collect();
                factor * self.disc.stiff_u.bilinear(&d, &d)
            })
            .collect()
    }

    /// `(1/N)‖u‖² + (dt/2M²)‖∇u‖² + dt‖u x B‖² + dt‖∇φ‖²`.
    pub fn stability_energy(&self, u: &[f64], phi: &[f64]) -> f64 {
        let p = &self.params;
        let d = &*self.disc;
        d.mass_u.bilinear(u, u) / p.interaction
            + p.dt / (2.0 * p.hartmann * p.hartmann) * d.stiff_u.bilinear(u, u)
            + p.dt * d.lorentz.bilinear(u, u)
            + p.dt * d.stiff_phi.bilinear(phi, phi)
    }

    /// Advances every member one step with the chosen scheme.
    pub fn advance_with(
        &mut self,
        state: &mut EnsembleState,
        scheme: Scheme,
        bc: &dyn BcProvider,
        forcing: &dyn Forcing,
    ) -> Result<StepReport> {
        self.check_members(state)?;
        let kappa = self.cfl_monitor(state);
        let before = self.factorizations;
        let (u_new, p_new) = match scheme {
            Scheme::Ensemble => self.velocity_step(state, bc, forcing)?,
            Scheme::Serial => {
                let mut us = Vec::with_capacity(state.members());
                let mut ps = Vec::with_capacity(state.members());
                for j in 0..state.members() {
                    let (u, p) = self.serial_member_velocity(j, state, bc, forcing)?;
                    us.push(u);
                    ps.push(p);
                }
                (us, ps)
            }
        };
        let phi_new = self.potential_step(state, bc)?;
        for (j, ((u, p), phi)) in u_new.into_iter().zip(p_new).zip(phi_new).enumerate() {
            state.u[j].coeffs_mut().copy_from_slice(&u);
            state.p[j].coeffs_mut().copy_from_slice(&p);
            state.phi[j].coeffs_mut().copy_from_slice(&phi);
        }
        state.n += 1;
        state.t = state.n as f64 * self.params.dt;
        if !state.is_finite() {
            return Err(Error::Diverged { step: state.n });
        }
        state.refresh_mean();
        Ok(self.report(state, kappa, self.factorizations - before))
    }

    /// One ensemble step.
    pub fn advance(&mut self, state: &mut EnsembleState, bc: &dyn BcProvider, forcing: &dyn Forcing) -> Result<StepReport> {
        self.advance_with(state, Scheme::Ensemble, bc, forcing)
    }

    /// One step of the per-member baseline for every member.
    pub fn serial_baseline_step(
        &mut self,
        state: &mut EnsembleState,
        bc: &dyn BcProvider,
        forcing: &dyn Forcing,
    ) -> Result<StepReport> {
        self.advance_with(state, Scheme::Serial, bc, forcing)
    }

    fn report(&self, state: &EnsembleState, kappa: Vec<f64>, factorizations: usize) -> StepReport {
        let d = &*self.disc;
        let area = d.mesh.area();
        let max_kappa = kappa.iter().copied().fold(0.0, f64::max);
        let cfl_exceeded = max_kappa > self.cfl.threshold;
        if cfl_exceeded {
            // Warn on the first violation only; later ones go to debug.
            let level = if self.cfl_warned.swap(true, Ordering::Relaxed) {
                log::Level::Debug
            } else {
                log::Level::Warn
            };
            log::log!(
                level,
                "step {}: max kappa {max_kappa:.3e} exceeds threshold {:.3e}",
                state.n,
                self.cfl.threshold
            );
        }
        let max_abs = |v: &[f64]| v.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
        let divergence_residual = state
            .u
            .iter()
            .map(|u| {
                let r = max_abs(&d.divergence.matvec(u.coeffs()));
                let scale = max_abs(u.coeffs()) * self.div_scale;
                if scale > 0.0 {
                    r / scale
                } else {
                    r
                }
            })
            .collect();
        let pressure_mean = state
            .p
            .iter()
            .map(|p| {
                let m: f64 = p.coeffs().iter().zip(&d.pressure_mean).map(|(a, b)| a * b).sum();
                let scale = max_abs(p.coeffs()) * area;
                if scale > 0.0 {
                    m.abs() / scale
                } else {
                    m.abs()
                }
            })
            .collect();
        StepReport {
            n: state.n,
            t: state.t,
            l2_u: state.u.iter().map(|u| d.l2_velocity(u.coeffs())).collect(),
            h1_u: state.u.iter().map(|u| d.h1_velocity(u.coeffs())).collect(),
            l2_phi: state.phi.iter().map(|f| d.l2_potential(f.coeffs())).collect(),
            h1_phi: state.phi.iter().map(|f| d.h1_potential(f.coeffs())).collect(),
            kappa,
            max_kappa,
            cfl_exceeded,
            energy: d.ensemble_energy(&state.mean_u, &state.mean_phi),
            stability_energy: state
                .u
                .iter()
                .zip(&state.phi)
                .map(|(u, f)| self.stability_energy(u.coeffs(), f.coeffs()))
                .collect(),
            divergence_residual,
            pressure_mean,
            factorizations,
        }
    }

    /// Runs `n_steps` steps, handing each report to `observer`.
    pub fn run<F>(
        &mut self,
        state: &mut EnsembleState,
        scheme: Scheme,
        bc: &dyn BcProvider,
        forcing: &dyn Forcing,
        n_steps: usize,
        mut observer: F,
    ) -> Result<()>
    where
        F: FnMut(&EnsembleState, &StepReport),
    {
        for _ in 0..n_steps {
            let report = self.advance_with(state, scheme, bc, forcing)?;
            observer(state, &report);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_rect_mesh;

    fn setup(n: usize, members: usize) -> (Arc<Discretization>, ModelParams) {
        let mesh = Arc::new(build_rect_mesh((0.0, 1.0), (0.0, 1.0), n, n).unwrap());
        let field = FieldB { b: 1.0 };
        let disc = Arc::new(Discretization::new(mesh, field).unwrap());
        let params = ModelParams {
            hartmann: 4.0,
            interaction: 2.0,
            field,
            dt: 0.01,
            final_time: 0.1,
            members,
        };
        (disc, params)
    }

    fn vortex(disc: &Discretization, scale: f64) -> (Vec<f64>, Vec<f64>) {
        use std::f64::consts::PI;
        let u = disc.velocity.interpolate_coeffs(|p| {
            let (sx, cx) = (PI * p[0]).sin_cos();
            let (sy, cy) = (PI * p[1]).sin_cos();
            [scale * sx * sx * 2.0 * sy * cy, -scale * 2.0 * sx * cx * sy * sy]
        });
        let phi = disc.potential.interpolate_coeffs(|p| [scale * p[0] * (1.0 - p[0]) * p[1], 0.0]);
        (u, phi)
    }

    #[test]
    fn params_validation() {
        let (_, p) = setup(2, 1);
        assert!(p.validate().is_ok());
        assert_eq!(p.n_steps(), 10);
        for bad in [
            ModelParams { hartmann: 0.0, ..p },
            ModelParams { interaction: -1.0, ..p },
            ModelParams { dt: 0.0, ..p },
            ModelParams { final_time: 0.001, ..p },
            ModelParams { members: 0, ..p },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config { .. })));
        }
    }

    #[test]
    fn means() {
        let (disc, _) = setup(2, 3);
        let nv = disc.n_velocity();
        let np = disc.potential.ndofs();
        let u0 = (1..=3).map(|k| vec![k as f64; nv]).collect();
        let phi0 = (1..=3).map(|k| vec![-(k as f64); np]).collect();
        let s = EnsembleState::new(&disc, u0, phi0).unwrap();
        assert!(s.mean_u.iter().all(|&v| v == 2.0));
        assert!(s.mean_phi.iter().all(|&v| v == -2.0));

        let (u, phi) = vortex(&disc, 1.0);
        let neg: Vec<f64> = u.iter().map(|v| -v).collect();
        let s = EnsembleState::new(&disc, vec![u.clone(), neg], vec![phi.clone(), phi.clone()]).unwrap();
        assert!(s.mean_u.iter().all(|&v| v == 0.0));
        let s = EnsembleState::new(&disc, vec![u.clone()], vec![phi]).unwrap();
        assert_eq!(s.mean_u, u);
    }

    #[test]
    fn shared_matrix_structure() {
        let (disc, params) = setup(3, 1);
        let stepper = Stepper::new(disc.clone(), ModelParams { field: FieldB { b: 1.0 }, ..params }).unwrap();
        let zero = vec![0.0; disc.n_velocity()];
        let m = stepper.saddle_matrix(&zero).unwrap();
        let nv = disc.n_velocity();
        let mut sym = 0.0f64;
        for i in 0..nv {
            for (j, v) in m.row(i) {
                if j < nv {
                    sym = sym.max((v - m.get(j, i)).abs());
                }
            }
        }
        assert!(sym < 1e-13);
        let (w, _) = vortex(&disc, 1.0);
        let mw = stepper.saddle_matrix(&w).unwrap();
        assert!(mw.same_pattern(&m));
        // The velocity block of the difference is (1/N) C(w).
        let c = crate::assembly::assemble_convection(&disc.velocity, &w).unwrap();
        let mut diff = mw.clone();
        diff.add_scaled(&m, -1.0).unwrap();
        for i in 0..nv {
            for (j, v) in c.row(i) {
                assert!((diff.get(i, j) - v / params.interaction).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_data_stays_zero() {
        let (disc, params) = setup(3, 2);
        let mut stepper = Stepper::new(disc.clone(), params).unwrap();
        let nv = disc.n_velocity();
        let np = disc.potential.ndofs();
        let mut s = EnsembleState::new(&disc, vec![vec![0.0; nv]; 2], vec![vec![0.0; np]; 2]).unwrap();
        for _ in 0..3 {
            let r = stepper.advance(&mut s, &ZeroData, &ZeroData).unwrap();
            assert_eq!(r.energy, 0.0);
            assert_eq!(r.factorizations, 1);
        }
        assert!(s.u.iter().chain(&s.p).chain(&s.phi).all(|f| f.coeffs().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn single_member_matches_baseline() {
        let (disc, params) = setup(4, 1);
        let (u, phi) = vortex(&disc, 3.0);
        let mut a = EnsembleState::new(&disc, vec![u.clone()], vec![phi.clone()]).unwrap();
        let mut b = a.clone();
        let mut st = Stepper::new(disc.clone(), params).unwrap();
        for _ in 0..3 {
            st.advance(&mut a, &ZeroData, &ZeroData).unwrap();
            st.serial_baseline_step(&mut b, &ZeroData, &ZeroData).unwrap();
        }
        for (x, y) in a.u[0].coeffs().iter().zip(b.u[0].coeffs()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn step_invariants_and_monitor() {
        let (disc, params) = setup(4, 2);
        let (u, phi) = vortex(&disc, 2.0);
        let neg: Vec<f64> = u.iter().map(|v| -v).collect();
        let mut s = EnsembleState::new(&disc, vec![u.clone(), neg], vec![phi.clone(), phi]).unwrap();
        let mut st = Stepper::new(disc.clone(), params).unwrap();
        let kappa = st.cfl_monitor(&s);
        let expect = params.hartmann.powi(2) / params.interaction * params.dt / disc.mesh.h()
            * disc.stiff_u.bilinear(&u, &u);
        assert!((kappa[0] - expect).abs() < 1e-12 * expect);
        assert!((kappa[1] - expect).abs() < 1e-12 * expect);
        let r = st.advance(&mut s, &ZeroData, &ZeroData).unwrap();
        assert!(r.invariants_hold(), "{r:?}");
        assert_eq!(st.factorizations(), 1);
        st.serial_baseline_step(&mut s, &ZeroData, &ZeroData).unwrap();
        assert_eq!(st.factorizations(), 3);
    }

    #[test]
    fn identical_members_stay_identical() {
        let (disc, params) = setup(3, 3);
        let (u, phi) = vortex(&disc, 1.0);
        let mut s = EnsembleState::new(&disc, vec![u; 3], vec![phi; 3]).unwrap();
        let mut st = Stepper::new(disc, params).unwrap();
        st.advance(&mut s, &ZeroData, &ZeroData).unwrap();
        // The mean of equal vectors may differ from them by one rounding.
        assert!(st.cfl_monitor(&s).iter().all(|&k| k < 1e-25));
        for j in 1..3 {
            assert_eq!(s.u[0].coeffs(), s.u[j].coeffs());
        }
    }

    #[test]
    fn member_count_checked() {
        let (disc, params) = setup(2, 2);
        let (u, phi) = vortex(&disc, 1.0);
        let mut s = EnsembleState::new(&disc, vec![u], vec![phi]).unwrap();
        let mut st = Stepper::new(disc, params).unwrap();
        assert!(st.advance(&mut s, &ZeroData, &ZeroData).is_err());
    }
}
