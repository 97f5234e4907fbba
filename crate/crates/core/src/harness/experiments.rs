//! The experiment drivers behind the command-line subcommands.

use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::output::{sci, Outputs, Table};
use crate::analysis::{convergence_rate, discrete_norms, errors_vs_exact, ErrorRow, ErrorSeries};
use crate::error::{Error, Result};
use crate::exec;
use crate::manufactured::ManufacturedCase;
use crate::mesh::build_rect_mesh;
use crate::quadrature::ERROR_DEGREE;
use crate::stepper::{Discretization, EnsembleState, Scheme, StepReport, Stepper};

/// Names of the four norms of a convergence row.
pub const CONVERGENCE_NORMS: [&str; 4] = ["u_linf_l2", "grad_u_l2_l2", "phi_linf_l2", "grad_phi_l2_l2"];

/// Worst invariant residuals seen during a run.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct InvariantSummary {
    pub steps: usize,
    pub max_divergence_residual: f64,
    pub max_pressure_mean: f64,
    pub violations: usize,
    /// Steps whose velocity update used other than one factorization per
    /// matrix required by the scheme.
    pub factorization_mismatches: usize,
}

impl InvariantSummary {
    fn record(&mut self, r: &StepReport, expected_factorizations: usize) {
        self.steps += 1;
        for &d in &r.divergence_residual {
            self.max_divergence_residual = self.max_divergence_residual.max(d);
        }
        for &p in &r.pressure_mean {
            self.max_pressure_mean = self.max_pressure_mean.max(p);
        }
        if !r.invariants_hold() {
            self.violations += 1;
        }
        if r.factorizations != expected_factorizations {
            self.factorization_mismatches += 1;
        }
    }

    fn merge(&mut self, o: &InvariantSummary) {
        self.steps += o.steps;
        self.max_divergence_residual = self.max_divergence_residual.max(o.max_divergence_residual);
        self.max_pressure_mean = self.max_pressure_mean.max(o.max_pressure_mean);
        self.violations += o.violations;
        self.factorization_mismatches += o.factorization_mismatches;
    }

    pub fn ok(&self) -> bool {
        self.violations == 0 && self.factorization_mismatches == 0
    }
}

fn expected_factorizations(scheme: Scheme, members: usize) -> usize {
    match scheme {
        Scheme::Ensemble => 1,
        Scheme::Serial => members,
    }
}

/// Sets the execution mode and, once per process, the rayon pool size.
pub fn configure_execution(cfg: &ExperimentConfig) {
    if let Some(n) = cfg.threads {
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("rayon pool already initialised; thread count {n} ignored");
        }
    }
    exec::set_mode(cfg.mode);
}

/// Discretization, stepper and initial state for one ladder row.
pub fn setup_row(case: &ManufacturedCase, cfg: &ExperimentConfig, row: usize) -> Result<(Stepper, EnsembleState)> {
    let n = cfg.divisions[row];
    let mesh = Arc::new(build_rect_mesh(case.x_range, case.y_range, n, n)?);
    let disc = Arc::new(Discretization::new(mesh, case.field())?);
    let params = case.params(cfg.dt[row], cfg.final_time());
    let stepper = Stepper::new(disc.clone(), params)?.with_cfl(cfg.cfl);
    let state = case.initial_state(&disc)?;
    Ok((stepper, state))
}

fn label(n: usize) -> f64 {
    1.0 / n as f64
}

/// `(‖u_j - u_jh‖, ‖∇(u_j - u_jh)‖, ‖φ_j - φ_jh‖, ‖∇(φ_j - φ_jh)‖)` at `state.t`.
pub fn member_errors(case: &ManufacturedCase, disc: &Discretization, state: &EnsembleState, j: usize) -> Result<[f64; 4]> {
    let (t, eps, f) = (state.t, case.epsilons[j], case.fields);
    let (eu, egu) = errors_vs_exact(
        &disc.velocity,
        state.u[j].coeffs(),
        |p| f.velocity(p, t, eps),
        |p| f.velocity_grad(p, t, eps),
        ERROR_DEGREE,
    )?;
    let (ep, egp) = errors_vs_exact(
        &disc.potential,
        state.phi[j].coeffs(),
        |p| [f.potential(p, t, eps), 0.0],
        |p| [f.potential_grad(p, t, eps), [0.0; 2]],
        ERROR_DEGREE,
    )?;
    Ok([eu, egu, ep, egp])
}

/// `(‖ū - ū_h‖, ‖φ̄ - φ̄_h‖)` at `state.t`.
pub fn mean_errors(case: &ManufacturedCase, disc: &Discretization, state: &EnsembleState) -> Result<[f64; 2]> {
    let t = state.t;
    let (eu, _) = errors_vs_exact(
        &disc.velocity,
        &state.mean_u,
        |p| case.mean_velocity(p, t),
        |_| [[0.0; 2]; 2],
        ERROR_DEGREE,
    )?;
    let (ep, _) = errors_vs_exact(
        &disc.potential,
        &state.mean_phi,
        |p| [case.mean_potential(p, t), 0.0],
        |_| [[0.0; 2]; 2],
        ERROR_DEGREE,
    )?;
    Ok([eu, ep])
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceResult {
    /// One series per member, norms in `CONVERGENCE_NORMS` order.
    pub members: Vec<ErrorSeries>,
    pub invariants: InvariantSummary,
    pub wall_seconds: Vec<f64>,
    pub outputs: Outputs,
}

impl ConvergenceResult {
    /// Rates of `norm` for `member`; empty for a single-row ladder.
    pub fn rates(&self, member: usize, norm: usize) -> Result<Vec<f64>> {
        self.members[member].rates(norm)
    }
}

pub fn run_convergence(cfg: &ExperimentConfig) -> Result<ConvergenceResult> {
    cfg.validate()?;
    configure_execution(cfg);
    let case = cfg.resolve_case()?;
    if !case.has_exact() {
        return Err(Error::config("case", "convergence needs an exact solution"));
    }
    let names: Vec<String> = CONVERGENCE_NORMS.iter().map(|s| s.to_string()).collect();
    let mut series: Vec<ErrorSeries> = (0..case.members()).map(|_| ErrorSeries::new(names.clone())).collect();
    let mut invariants = InvariantSummary::default();
    let mut wall = Vec::new();
    for row in 0..cfg.divisions.len() {
        let (mut stepper, mut state) = setup_row(&case, cfg, row)?;
        let disc = stepper.discretization().clone();
        let n_steps = stepper.params().n_steps();
        let mut traces: Vec<Vec<[f64; 4]>> = (0..case.members())
            .map(|j| member_errors(&case, &disc, &state, j).map(|e| vec![e]))
            .collect::<Result<_>>()?;
        let mut inv = InvariantSummary::default();
        let mut err = None;
        let start = Instant::now();
        stepper.run(&mut state, Scheme::Ensemble, &case, &case, n_steps, |s, r| {
            inv.record(r, 1);
            for (j, tr) in traces.iter_mut().enumerate() {
                match member_errors(&case, &disc, s, j) {
                    Ok(e) => tr.push(e),
                    Err(e) => err = Some(e),
                }
            }
        })?;
        wall.push(start.elapsed().as_secs_f64());
        if let Some(e) = err {
            return Err(e);
        }
        invariants.merge(&inv);
        let dt = cfg.dt[row];
        for (j, tr) in traces.iter().enumerate() {
            let col = |k: usize| tr.iter().map(|e| e[k]).collect::<Vec<f64>>();
            let (u_inf, _) = discrete_norms(&col(0), dt)?;
            let (_, gu_l2) = discrete_norms(&col(1), dt)?;
            let (phi_inf, _) = discrete_norms(&col(2), dt)?;
            let (_, gphi_l2) = discrete_norms(&col(3), dt)?;
            series[j].push(ErrorRow {
                h: label(cfg.divisions[row]),
                dt,
                values: vec![u_inf, gu_l2, phi_inf, gphi_l2],
            })?;
        }
        log::info!(
            "converge row h=1/{} dt={dt:.3e}: member 1 errors {:?} ({:.1}s)",
            cfg.divisions[row],
            series[0].rows.last().map(|r| r.values.clone()),
            wall.last().copied().unwrap_or(0.0)
        );
    }

    let mut outputs = Outputs::default();
    for (j, s) in series.iter().enumerate() {
        let mut header = vec!["h".to_string(), "dt".to_string()];
        for n in CONVERGENCE_NORMS {
            header.push(format!("err_{n}"));
            header.push(format!("rate_{n}"));
        }
        let mut table = Table::new(header);
        let rates: Vec<Vec<f64>> = (0..4).map(|k| s.rates(k)).collect::<Result<_>>()?;
        for (i, r) in s.rows.iter().enumerate() {
            let mut line = vec![sci(r.h), sci(r.dt)];
            for (k, v) in r.values.iter().enumerate() {
                line.push(sci(*v));
                line.push(if i == 0 { String::new() } else { sci(rates[k][i - 1]) });
            }
            table.push(line);
        }
        outputs.table(&cfg.out_dir, &format!("convergence_member{}.csv", j + 1), &table)?;
    }
    let result = ConvergenceResult {
        members: series,
        invariants,
        wall_seconds: wall,
        outputs: Outputs::default(),
    };
    outputs.json(&cfg.out_dir, "convergence_summary.json", &result)?;
    Ok(ConvergenceResult { outputs, ..result })
}

#[derive(Debug, Clone, Serialize)]
pub struct EfficiencyRow {
    pub h: f64,
    pub dt: f64,
    pub members: usize,
    pub ensemble_u_error: f64,
    pub serial_u_error: f64,
    pub ensemble_phi_error: f64,
    pub serial_phi_error: f64,
    pub ensemble_seconds: f64,
    pub serial_seconds: f64,
    /// Serial time over ensemble time.
    pub speedup: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EfficiencyResult {
    pub rows: Vec<EfficiencyRow>,
    pub invariants: InvariantSummary,
    pub outputs: Outputs,
}

/// Runs `scheme` over the whole interval; returns the time spent inside the
/// step calls, `(‖ū-ū_h‖_{∞,0}, ‖φ̄-φ̄_h‖_{∞,0})`, and invariant statistics.
fn timed_run(
    case: &ManufacturedCase,
    cfg: &ExperimentConfig,
    row: usize,
    scheme: Scheme,
) -> Result<(f64, [f64; 2], InvariantSummary)> {
    let (mut stepper, mut state) = setup_row(case, cfg, row)?;
    let disc = stepper.discretization().clone();
    let mut worst = mean_errors(case, &disc, &state)?;
    let mut inv = InvariantSummary::default();
    let mut seconds = 0.0;
    for _ in 0..stepper.params().n_steps() {
        let start = Instant::now();
        let report = stepper.advance_with(&mut state, scheme, case, case)?;
        seconds += start.elapsed().as_secs_f64();
        inv.record(&report, expected_factorizations(scheme, case.members()));
        let e = mean_errors(case, &disc, &state)?;
        worst = [worst[0].max(e[0]), worst[1].max(e[1])];
    }
    Ok((seconds, worst, inv))
}

pub fn run_efficiency(cfg: &ExperimentConfig) -> Result<EfficiencyResult> {
    cfg.validate()?;
    configure_execution(cfg);
    let case = cfg.resolve_case()?;
    let mut rows = Vec::new();
    let mut invariants = InvariantSummary::default();
    for row in 0..cfg.divisions.len() {
        let (te, ee, ie) = timed_run(&case, cfg, row, Scheme::Ensemble)?;
        let (ts, es, is) = timed_run(&case, cfg, row, Scheme::Serial)?;
        invariants.merge(&ie);
        invariants.merge(&is);
        log::info!(
            "efficiency row h=1/{}: ensemble {te:.2}s, serial {ts:.2}s",
            cfg.divisions[row]
        );
        rows.push(EfficiencyRow {
            h: label(cfg.divisions[row]),
            dt: cfg.dt[row],
            members: case.members(),
            ensemble_u_error: ee[0],
            serial_u_error: es[0],
            ensemble_phi_error: ee[1],
            serial_phi_error: es[1],
            ensemble_seconds: te,
            serial_seconds: ts,
            speedup: ts / te,
        });
    }
    let mut table = Table::new([
        "h",
        "dt",
        "members",
        "ensemble_u_mean_linf_l2",
        "serial_u_mean_linf_l2",
        "ensemble_phi_mean_linf_l2",
        "serial_phi_mean_linf_l2",
        "ensemble_seconds",
        "serial_seconds",
        "speedup",
    ]);
    for r in &rows {
        table.push(vec![
            sci(r.h),
            sci(r.dt),
            r.members.to_string(),
            sci(r.ensemble_u_error),
            sci(r.serial_u_error),
            sci(r.ensemble_phi_error),
            sci(r.serial_phi_error),
            sci(r.ensemble_seconds),
            sci(r.serial_seconds),
            sci(r.speedup),
        ]);
    }
    let mut outputs = Outputs::default();
    outputs.table(&cfg.out_dir, "efficiency.csv", &table)?;
    Ok(EfficiencyResult {
        rows,
        invariants,
        outputs,
    })
}

/// One row of an energy trace.
#[derive(Debug, Clone, Serialize)]
pub struct EnergyRow {
    pub step: usize,
    pub t: f64,
    pub energy: f64,
    pub max_kappa: f64,
    pub cfl_exceeded: bool,
    /// Per-member stability functional.
    pub stability_energy: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityRun {
    pub divisions: usize,
    pub dt: f64,
    pub trace: Vec<EnergyRow>,
    /// Step at which the solution overflowed or a solve failed.
    pub diverged_at: Option<usize>,
    pub failure: Option<String>,
    pub invariants: InvariantSummary,
}

impl StabilityRun {
    pub fn initial_energy(&self) -> f64 {
        self.trace[0].energy
    }

    pub fn final_energy(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.energy)
    }

    /// Largest `E^n / E^{n-1}` over steps `n > after`.
    pub fn max_growth_after(&self, after: usize) -> f64 {
        self.trace
            .windows(2)
            .filter(|w| w[1].step > after)
            .map(|w| w[1].energy / w[0].energy)
            .fold(0.0, f64::max)
    }

    /// True when every member's stability functional stays at or below its
    /// initial value.
    pub fn energy_bound_holds(&self) -> bool {
        let first = &self.trace[0].stability_energy;
        self.trace
            .iter()
            .all(|r| r.stability_energy.iter().zip(first).all(|(e, e0)| e <= e0))
    }

    pub fn grew(&self) -> bool {
        self.diverged_at.is_some() || self.final_energy() > self.initial_energy()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityResult {
    pub runs: Vec<StabilityRun>,
    pub outputs: Outputs,
}

fn energy_row(stepper: &Stepper, state: &EnsembleState, r: Option<&StepReport>) -> EnergyRow {
    match r {
        Some(r) => EnergyRow {
            step: r.n,
            t: r.t,
            energy: r.energy,
            max_kappa: r.max_kappa,
            cfl_exceeded: r.cfl_exceeded,
            stability_energy: r.stability_energy.clone(),
        },
        None => {
            let d = stepper.discretization();
            let kappa = stepper.cfl_monitor(state);
            let max_kappa = kappa.iter().copied().fold(0.0, f64::max);
            EnergyRow {
                step: state.n,
                t: state.t,
                energy: d.ensemble_energy(&state.mean_u, &state.mean_phi),
                max_kappa,
                cfl_exceeded: false,
                stability_energy: state
                    .u
                    .iter()
                    .zip(&state.phi)
                    .map(|(u, f)| stepper.stability_energy(u.coeffs(), f.coeffs()))
                    .collect(),
            }
        }
    }
}

/// Runs one ladder row, recording a trace; overflow ends the run early.
fn stability_row(case: &ManufacturedCase, cfg: &ExperimentConfig, row: usize, scheme: Scheme) -> Result<StabilityRun> {
    let (mut stepper, mut state) = setup_row(case, cfg, row)?;
    let mut trace = vec![energy_row(&stepper, &state, None)];
    let mut inv = InvariantSummary::default();
    let mut diverged_at = None;
    let mut failure = None;
    let members = case.members();
    for _ in 0..stepper.params().n_steps() {
        match stepper.advance_with(&mut state, scheme, case, case) {
            Ok(r) if r.energy.is_finite() && r.energy < f64::MAX / 4.0 => {
                inv.record(&r, expected_factorizations(scheme, members));
                trace.push(energy_row(&stepper, &state, Some(&r)));
            }
            Ok(r) => {
                diverged_at = Some(r.n);
                failure = Some(format!("energy overflow ({:e})", r.energy));
                break;
            }
            Err(Error::Diverged { step }) => {
                diverged_at = Some(step);
                failure = Some("non-finite solution".into());
                break;
            }
            Err(e @ Error::Singular { .. }) => {
                diverged_at = Some(state.n + 1);
                failure = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
    }
    if let Some(step) = diverged_at {
        log::warn!("run with dt={} diverged at step {step}", cfg.dt[row]);
    }
    Ok(StabilityRun {
        divisions: cfg.divisions[row],
        dt: cfg.dt[row],
        trace,
        diverged_at,
        failure,
        invariants: inv,
    })
}

fn trace_table(run: &StabilityRun, members: usize) -> Table {
    let mut header = vec!["step".to_string(), "t".into(), "energy".into(), "max_kappa".into()];
    header.extend((1..=members).map(|j| format!("stability_energy_{j}")));
    let mut table = Table::new(header);
    for r in &run.trace {
        let mut line = vec![r.step.to_string(), sci(r.t), sci(r.energy), sci(r.max_kappa)];
        line.extend(r.stability_energy.iter().map(|&e| sci(e)));
        table.push(line);
    }
    table
}

pub fn run_stability(cfg: &ExperimentConfig) -> Result<StabilityResult> {
    cfg.validate()?;
    configure_execution(cfg);
    let case = cfg.resolve_case()?;
    let mut outputs = Outputs::default();
    let mut runs = Vec::new();
    let mut summary = Table::new([
        "divisions",
        "dt",
        "steps",
        "initial_energy",
        "final_energy",
        "energy_ratio",
        "max_growth_after_step5",
        "diverged_at",
    ]);
    for row in 0..cfg.divisions.len() {
        let run = stability_row(&case, cfg, row, Scheme::Ensemble)?;
        let name = format!("stability_n{}_dt{}.csv", run.divisions, sci_tag(run.dt));
        outputs.table(&cfg.out_dir, &name, &trace_table(&run, case.members()))?;
        summary.push(vec![
            run.divisions.to_string(),
            sci(run.dt),
            (run.trace.len() - 1).to_string(),
            sci(run.initial_energy()),
            sci(run.final_energy()),
            sci(run.final_energy() / run.initial_energy()),
            sci(run.max_growth_after(5)),
            run.diverged_at.map_or(String::new(), |s| s.to_string()),
        ]);
        runs.push(run);
    }
    outputs.table(&cfg.out_dir, "stability_summary.csv", &summary)?;
    Ok(StabilityResult { runs, outputs })
}

/// Compact file-name form of a time step, e.g. `1e-3`.
fn sci_tag(x: f64) -> String {
    let s = format!("{x:e}");
    s.replace('.', "p")
}

/// Final coefficient vectors of a custom run.
#[derive(Debug, Clone, Serialize)]
pub struct FinalState {
    pub n: usize,
    pub t: f64,
    pub u: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CustomRun {
    pub divisions: usize,
    pub dt: f64,
    pub trace: Vec<StepReport>,
    pub final_state: FinalState,
    pub invariants: InvariantSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct CustomResult {
    pub runs: Vec<CustomRun>,
    pub outputs: Outputs,
}

/// General driver: norms, monitor values and energy every `stride` steps,
/// plus the final coefficients.
pub fn run_custom(cfg: &ExperimentConfig) -> Result<CustomResult> {
    cfg.validate()?;
    configure_execution(cfg);
    let case = cfg.resolve_case()?;
    let members = case.members();
    let mut outputs = Outputs::default();
    let mut runs = Vec::new();
    for row in 0..cfg.divisions.len() {
        let (mut stepper, mut state) = setup_row(&case, cfg, row)?;
        let n_steps = stepper.params().n_steps();
        let mut trace = Vec::new();
        let mut inv = InvariantSummary::default();
        let expected = expected_factorizations(cfg.scheme, members);
        stepper.run(&mut state, cfg.scheme, &case, &case, n_steps, |_, r| {
            inv.record(r, expected);
            if r.n % cfg.stride == 0 || r.n == n_steps {
                trace.push(r.clone());
            }
        })?;
        let mut header = vec!["step".to_string(), "t".into(), "energy".into(), "max_kappa".into()];
        for j in 1..=members {
            header.extend(
                ["l2_u", "h1_u", "l2_phi", "h1_phi", "kappa", "divergence_residual", "pressure_mean"]
                    .iter()
                    .map(|n| format!("{n}_{j}")),
            );
        }
        let mut table = Table::new(header);
        for r in &trace {
            let mut line = vec![r.n.to_string(), sci(r.t), sci(r.energy), sci(r.max_kappa)];
            for j in 0..members {
                line.extend(
                    [
                        r.l2_u[j],
                        r.h1_u[j],
                        r.l2_phi[j],
                        r.h1_phi[j],
                        r.kappa[j],
                        r.divergence_residual[j],
                        r.pressure_mean[j],
                    ]
                    .iter()
                    .map(|&v| sci(v)),
                );
            }
            table.push(line);
        }
        let suffix = if cfg.divisions.len() > 1 { format!("_{}", row + 1) } else { String::new() };
        outputs.table(&cfg.out_dir, &format!("run_trajectory{suffix}.csv"), &table)?;
        let final_state = FinalState {
            n: state.n,
            t: state.t,
            u: state.u.iter().map(|f| f.coeffs().to_vec()).collect(),
            p: state.p.iter().map(|f| f.coeffs().to_vec()).collect(),
            phi: state.phi.iter().map(|f| f.coeffs().to_vec()).collect(),
        };
        outputs.json(&cfg.out_dir, &format!("run_final_state{suffix}.json"), &final_state)?;
        runs.push(CustomRun {
            divisions: cfg.divisions[row],
            dt: cfg.dt[row],
            trace,
            final_state,
            invariants: inv,
        });
    }
    Ok(CustomResult { runs, outputs })
}

/// Rates between consecutive rows of one column, for callers holding raw
/// errors rather than an `ErrorSeries`.
pub fn ladder_rates(errors: &[f64], divisions: &[usize]) -> Result<Vec<f64>> {
    let h: Vec<f64> = divisions.iter().map(|&n| label(n)).collect();
    convergence_rate(errors, &h)
}
