//! Closed-form test cases: a decaying vortex with potential used for
//! convergence and timing, and vortex initial data for the energy test.
//!
//! The vortex family, with `A = (1 + ε) e^{-σt}` and `c_x = cos kx` etc.:
//!
//! ```text
//! u = A (k c_x s_y, -k s_x c_y),   p = 0,   φ = A (c_x c_y + x² - y²)
//! ```
//!
//! `u` is divergence free and `Δu = -2k² u`. With `B = (0, 0, b)` the
//! momentum source is
//!
//! ```text
//! f = (1/N)(-σ u + u·∇u) + (2k²/M²) u - B×∇φ + b² u
//! u·∇u = -k³ A² (s_x c_x, s_y c_y)
//! B×∇φ = b A (k c_x s_y + 2y, -k s_x c_y + 2x)
//! ```
//!
//! and `Δφ = ∇·(u×B) = -2k² A c_x c_y` holds exactly when `b = 1`.

use serde::Serialize;

use crate::assembly::FieldB;
use crate::error::{Error, Result};
use crate::mesh::Point;
use crate::stepper::{BcProvider, Discretization, EnsembleState, Forcing, ModelParams};

/// The vortex family above, without the `(1 + ε)` factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Vortex {
    /// Wave number `k`.
    pub k: f64,
    /// Decay rate `σ`.
    pub decay: f64,
}

impl Vortex {
    fn amp(&self, t: f64, eps: f64) -> f64 {
        (1.0 + eps) * (-self.decay * t).exp()
    }

    pub fn velocity(&self, p: Point, t: f64, eps: f64) -> [f64; 2] {
        let a = self.amp(t, eps);
        let (sx, cx) = (self.k * p[0]).sin_cos();
        let (sy, cy) = (self.k * p[1]).sin_cos();
        [a * self.k * cx * sy, -a * self.k * sx * cy]
    }

    /// `[∇u₁, ∇u₂]`.
    pub fn velocity_grad(&self, p: Point, t: f64, eps: f64) -> [[f64; 2]; 2] {
        let a = self.amp(t, eps);
        let k2 = self.k * self.k;
        let (sx, cx) = (self.k * p[0]).sin_cos();
        let (sy, cy) = (self.k * p[1]).sin_cos();
        [[-a * k2 * sx * sy, a * k2 * cx * cy], [-a * k2 * cx * cy, a * k2 * sx * sy]]
    }

    pub fn potential(&self, p: Point, t: f64, eps: f64) -> f64 {
        let (x, y) = (p[0], p[1]);
        self.amp(t, eps) * ((self.k * x).cos() * (self.k * y).cos() + x * x - y * y)
    }

    pub fn potential_grad(&self, p: Point, t: f64, eps: f64) -> [f64; 2] {
        let a = self.amp(t, eps);
        let (x, y) = (p[0], p[1]);
        let (sx, cx) = (self.k * x).sin_cos();
        let (sy, cy) = (self.k * y).sin_cos();
        [a * (-self.k * sx * cy + 2.0 * x), a * (-self.k * cx * sy - 2.0 * y)]
    }

    /// Momentum source for the given model coefficients.
    pub fn forcing(&self, p: Point, t: f64, eps: f64, m: f64, n: f64, b: f64) -> [f64; 2] {
        let a = self.amp(t, eps);
        let k = self.k;
        let (x, y) = (p[0], p[1]);
        let (sx, cx) = (k * x).sin_cos();
        let (sy, cy) = (k * y).sin_cos();
        let u = [a * k * cx * sy, -a * k * sx * cy];
        let k3a2 = k * k * k * a * a;
        let adv = [-k3a2 * sx * cx, -k3a2 * sy * cy];
        let b_cross_grad_phi = [b * a * (k * cx * sy + 2.0 * y), b * a * (-k * sx * cy + 2.0 * x)];
        let visc = 2.0 * k * k / (m * m);
        let mut f = [0.0; 2];
        for c in 0..2 {
            f[c] = (-self.decay * u[c] + adv[c]) / n + visc * u[c] - b_cross_grad_phi[c] + b * b * u[c];
        }
        f
    }
}

/// What a case provides for time stepping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum CaseKind {
    /// Exact solution known; boundary data and forcing come from it.
    Exact,
    /// Only initial data; zero forcing and zero boundary data.
    InitialOnly,
}

#[derive(Debug, Clone, Serialize)]
pub struct ManufacturedCase {
    pub name: String,
    pub kind: CaseKind,
    pub fields: Vortex,
    pub hartmann: f64,
    pub interaction: f64,
    pub b: f64,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub epsilons: Vec<f64>,
}

pub fn case_convergence() -> ManufacturedCase {
    ManufacturedCase {
        name: "convergence".into(),
        kind: CaseKind::Exact,
        fields: Vortex { k: 5.0, decay: 5.0 },
        hartmann: 16.0,
        interaction: 20.0,
        b: 1.0,
        x_range: (0.0, std::f64::consts::PI),
        y_range: (0.0, std::f64::consts::PI),
        epsilons: vec![1e-3, -1e-3],
    }
}

/// Eleven perturbations `0.01 - 0.0009 i`.
pub fn case_efficiency() -> ManufacturedCase {
    ManufacturedCase {
        name: "efficiency".into(),
        epsilons: (0..11).map(|i| 1e-2 - 9e-4 * i as f64).collect(),
        ..case_convergence()
    }
}

pub fn case_stability() -> ManufacturedCase {
    ManufacturedCase {
        name: "stability".into(),
        kind: CaseKind::InitialOnly,
        fields: Vortex {
            k: 10.0 * std::f64::consts::PI,
            decay: 0.0,
        },
        hartmann: 12255.0,
        interaction: 347.0,
        b: 1.0,
        x_range: (0.0, 0.1),
        y_range: (0.0, 0.1),
        epsilons: vec![0.1, 0.01],
    }
}

/// Names accepted by [`case_by_name`].
pub const CASE_NAMES: [&str; 3] = ["convergence", "efficiency", "stability"];

/// Looks a case up by name.
pub fn case_by_name(name: &str) -> Result<ManufacturedCase> {
    match name {
        "convergence" => Ok(case_convergence()),
        "efficiency" => Ok(case_efficiency()),
        "stability" => Ok(case_stability()),
        other => Err(Error::config("case", format!("unknown case '{other}'"))),
    }
}

impl ManufacturedCase {
    pub fn has_exact(&self) -> bool {
        self.kind == CaseKind::Exact
    }

    pub fn members(&self) -> usize {
        self.epsilons.len()
    }

    pub fn field(&self) -> FieldB {
        FieldB { b: self.b }
    }

    pub fn params(&self, dt: f64, final_time: f64) -> ModelParams {
        ModelParams {
            hartmann: self.hartmann,
            interaction: self.interaction,
            field: self.field(),
            dt,
            final_time,
            members: self.members(),
        }
    }

    fn eps(&self, member: usize) -> f64 {
        self.epsilons[member]
    }

    pub fn velocity(&self, member: usize, p: Point, t: f64) -> [f64; 2] {
        self.fields.velocity(p, t, self.eps(member))
    }

    pub fn potential(&self, member: usize, p: Point, t: f64) -> f64 {
        self.fields.potential(p, t, self.eps(member))
    }

    /// Interpolated initial data for every member, zero pressure.
    pub fn initial_state(&self, disc: &Discretization) -> Result<EnsembleState> {
        let u0 = (0..self.members())
            .map(|j| disc.velocity.interpolate_coeffs(|p| self.velocity(j, p, 0.0)))
            .collect();
        let phi0 = (0..self.members())
            .map(|j| disc.potential.interpolate_coeffs(|p| [self.potential(j, p, 0.0), 0.0]))
            .collect();
        EnsembleState::new(disc, u0, phi0)
    }

    /// Average of the members' exact velocities.
    pub fn mean_velocity(&self, p: Point, t: f64) -> [f64; 2] {
        let mut m = [0.0; 2];
        for j in 0..self.members() {
            let u = self.velocity(j, p, t);
            m[0] += u[0];
            m[1] += u[1];
        }
        let jn = self.members() as f64;
        [m[0] / jn, m[1] / jn]
    }

    pub fn mean_potential(&self, p: Point, t: f64) -> f64 {
        (0..self.members()).map(|j| self.potential(j, p, t)).sum::<f64>() / self.members() as f64
    }
}

impl BcProvider for ManufacturedCase {
    fn velocity(&self, member: usize, p: Point, t: f64) -> [f64; 2] {
        match self.kind {
            CaseKind::Exact => ManufacturedCase::velocity(self, member, p, t),
            CaseKind::InitialOnly => [0.0; 2],
        }
    }

    fn potential(&self, member: usize, p: Point, t: f64) -> f64 {
        match self.kind {
            CaseKind::Exact => ManufacturedCase::potential(self, member, p, t),
            CaseKind::InitialOnly => 0.0,
        }
    }
}

impl Forcing for ManufacturedCase {
    fn eval(&self, member: usize, p: Point, t: f64) -> [f64; 2] {
        match self.kind {
            CaseKind::Exact => self
                .fields
                .forcing(p, t, self.eps(member), self.hartmann, self.interaction, self.b),
            CaseKind::InitialOnly => [0.0; 2],
        }
    }

    fn is_zero(&self) -> bool {
        self.kind == CaseKind::InitialOnly
    }
}

/// Largest residuals found by the finite-difference audit.

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditReport {
    /// Momentum equation, `None` when the case has no exact solution.
    pub momentum: Option<f64>,
    /// `Δφ - ∇·(u×B)` and the defect of the closed-form `∇φ`, `None` when
    /// the case has no exact solution.
    pub potential: Option<f64>,
    /// `∇·u` of the (initial or exact) velocity.
    pub divergence: f64,
    /// Largest forcing value seen, zero for unforced cases.
    pub forcing: f64,
}

/// Step of the central differences used by the audit.
pub const FD_STEP: f64 = 1e-5;

/// Checks the closed forms against the model equations with central finite
/// differences at `samples` pseudo-random points in space and time.
pub fn audit(case: &ManufacturedCase, samples: usize, seed: u64) -> AuditReport {
    let (m, n, b) = (case.hartmann, case.interaction, case.b);
    audit_with(case, |p, t, eps| case.fields.forcing(p, t, eps, m, n, b), samples, seed)
}

/// `audit` with the closed-form forcing replaced by `forcing(p, t, ε)`.
pub fn audit_with<F>(case: &ManufacturedCase, forcing: F, samples: usize, seed: u64) -> AuditReport
where
    F: Fn(Point, f64, f64) -> [f64; 2],
{
    let h = FD_STEP;
    let (x0, x1) = case.x_range;
    let (y0, y1) = case.y_range;
    // splitmix64; the audit must not depend on an RNG crate's stream.
    let mut state = seed;
    let mut next = move || {
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64
    };
    let (m, n, b) = (case.hartmann, case.interaction, case.b);
    let mut report = AuditReport {
        momentum: None,
        potential: None,
        divergence: 0.0,
        forcing: 0.0,
    };
    let mut mom = 0.0f64;
    let mut pot = 0.0f64;
    for eps in case.epsilons.iter().cycle().take(samples) {
        let p = [x0 + (x1 - x0) * next(), y0 + (y1 - y0) * next()];
        let t = if case.has_exact() { next() } else { 0.0 };
        let eps = *eps;
        let f = &case.fields;
        let u = |q: Point, t: f64| f.velocity(q, t, eps);
        let phi = |q: Point| f.potential(q, t, eps);
        let dx = |g: &dyn Fn(Point) -> [f64; 2], q: Point, axis: usize| {
            let mut a = q;
            let mut c = q;
            a[axis] += h;
            c[axis] -= h;
            let (ga, gc) = (g(a), g(c));
            [(ga[0] - gc[0]) / (2.0 * h), (ga[1] - gc[1]) / (2.0 * h)]
        };
        let d2 = |g: &dyn Fn(Point) -> [f64; 2], q: Point, axis: usize| {
            let mut a = q;
            let mut c = q;
            a[axis] += h;
            c[axis] -= h;
            let (ga, gq, gc) = (g(a), g(q), g(c));
            [(ga[0] - 2.0 * gq[0] + gc[0]) / (h * h), (ga[1] - 2.0 * gq[1] + gc[1]) / (h * h)]
        };
        let ut = |q: Point| u(q, t);
        let ux = dx(&ut, p, 0);
        let uy = dx(&ut, p, 1);
        report.divergence = report.divergence.max((ux[0] + uy[1]).abs());
        if !case.has_exact() {
            continue;
        }
        let uv = u(p, t);
        let u_t = {
            let (a, c) = (u(p, t + h), u(p, t - h));
            [(a[0] - c[0]) / (2.0 * h), (a[1] - c[1]) / (2.0 * h)]
        };
        let lap = {
            let (a, c) = (d2(&ut, p, 0), d2(&ut, p, 1));
            [a[0] + c[0], a[1] + c[1]]
        };
        let phi2 = |q: Point| [phi(q), 0.0];
        let gphi = [dx(&phi2, p, 0)[0], dx(&phi2, p, 1)[0]];
        // Δφ as the difference quotient of the closed-form gradient, which is
        // itself checked against differences of φ below. Second differences
        // of φ at this step would be dominated by rounding in its x², y²
        // summands.
        let grad_phi = |q: Point| f.potential_grad(q, t, eps);
        let lap_phi = dx(&grad_phi, p, 0)[0] + dx(&grad_phi, p, 1)[1];
        let closed = grad_phi(p);
        let grad_defect = (closed[0] - gphi[0]).abs().max((closed[1] - gphi[1]).abs());
        // B×∇φ = b(-∂yφ, ∂xφ), B×(B×u) = -b² u, u×B = b(u₂, -u₁).
        let b_cross_grad_phi = [-b * gphi[1], b * gphi[0]];
        let fv = forcing(p, t, eps);
        report.forcing = report.forcing.max(fv[0].abs().max(fv[1].abs()));
        for c in 0..2 {
            let adv = uv[0] * ux[c] + uv[1] * uy[c];
            let r = (u_t[c] + adv) / n - lap[c] / (m * m) - b_cross_grad_phi[c] + b * b * uv[c] - fv[c];
            mom = mom.max(r.abs());
        }
        let uxb = |q: Point| {
            let v = u(q, t);
            [b * v[1], -b * v[0]]
        };
        let div_uxb = dx(&uxb, p, 0)[0] + dx(&uxb, p, 1)[1];
        pot = pot.max((lap_phi - div_uxb).abs()).max(grad_defect);
    }
    if case.has_exact() {
        report.momentum = Some(mom);
        report.potential = Some(pot);
    }
    report
}
