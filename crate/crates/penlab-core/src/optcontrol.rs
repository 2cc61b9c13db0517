//! Optimal control of the obstacle problem through the penalization path.
//!
//! The control `f` enters the state equation as a load density; the tracking
//! objective `J(y, f) = ½‖y − y_d‖²_{L²} + (ν/2)‖f‖²_{L²}` is minimized over
//! a nodal box of admissible controls, with the constrained state replaced by
//! the penalized state `S_ρ(f)` along a decreasing ρ-schedule.  Each stage
//! runs a projected-gradient descent on the regularized objective
//! `J(S_ρ(f), f) + ½‖f − f_anchor‖²_{L²}`, the anchor pinned to the incumbent
//! control, and the final stage is distilled into a stationarity certificate:
//! control, state, adjoint, and the projected-stationarity residual
//! `‖f̄ − Π(f̄ − (p + νf̄))‖_{L²}`, which vanishes exactly when the first-order
//! inclusion holds on the box.  [`check_c_stationarity`] then compares the
//! certificate against the exact constrained solution at the final control.
//!
//! Only the differentiable penalty families are admitted: the descent
//! direction is the reduced gradient `p + νf + (f − f_anchor)` with the
//! adjoint `p` solved from the same weighted operator as the state
//! linearization, which requires the solution operator to be differentiable.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{DiscreteField, EllipticOperators};
use crate::penalty::{FamilySpec, PenaltyFamily};
use crate::penalty_solver::{solve_penalized_from, PenalizedSolution};
use crate::sensitivity::solve_derivative;
use crate::vi::VISolution;

/// Armijo sufficient-decrease fraction for the projection-arc search.
const SIGMA: f64 = 1e-4;
/// Most step halvings a single backtracking search may spend.
const MAX_HALVINGS: usize = 60;
/// Penalized-solve tolerance used by the one-shot [`reduced_gradient`].
const GRADIENT_SOLVE_TOL: f64 = 1e-12;

/// Tracking-type control problem on a fixed grid: obstacle `ψ`, target
/// `y_d`, Tikhonov weight `ν ≥ 0`, and an optional nodal box `lo ≤ f ≤ up`
/// of admissible control densities (absent bounds are unconstrained).
#[derive(Debug, Clone)]
pub struct ControlProblem {
    psi: DiscreteField,
    y_d: DiscreteField,
    nu: f64,
    lo: Option<DiscreteField>,
    up: Option<DiscreteField>,
}

impl ControlProblem {
    /// An unconstrained problem (no control bounds).
    pub fn new(psi: DiscreteField, y_d: DiscreteField, nu: f64) -> Result<Self> {
        if y_d.grid() != psi.grid() {
            return Err(Error::GridMismatch(
                "obstacle and tracking target must live on the same grid".into(),
            ));
        }
        if !(nu.is_finite() && nu >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "Tikhonov weight must be finite and nonnegative, got {nu}"
            )));
        }
        Ok(Self {
            psi,
            y_d,
            nu,
            lo: None,
            up: None,
        })
    }

    /// Restrict the admissible set to the nodal box `lo ≤ f ≤ up`; either
    /// side may be `None` (unconstrained on that side).
    pub fn with_bounds(
        mut self,
        lo: Option<DiscreteField>,
        up: Option<DiscreteField>,
    ) -> Result<Self> {
        let grid = self.psi.grid();
        for b in [&lo, &up].into_iter().flatten() {
            if b.grid() != grid {
                return Err(Error::GridMismatch(
                    "control bounds must live on the problem grid".into(),
                ));
            }
        }
        if let (Some(l), Some(u)) = (&lo, &up) {
            if l.values()
                .iter()
                .zip(u.values())
                .any(|(&li, &ui)| li > ui)
            {
                return Err(Error::InvalidArgument(
                    "lower control bound exceeds the upper bound at some node".into(),
                ));
            }
        }
        self.lo = lo;
        self.up = up;
        Ok(self)
    }

    pub fn psi(&self) -> &DiscreteField {
        &self.psi
    }

    pub fn target(&self) -> &DiscreteField {
        &self.y_d
    }

    pub fn tikhonov(&self) -> f64 {
        self.nu
    }

    pub fn lower(&self) -> Option<&DiscreteField> {
        self.lo.as_ref()
    }

    pub fn upper(&self) -> Option<&DiscreteField> {
        self.up.as_ref()
    }

    /// Nodal projection onto the admissible box (the `L²` projection, since
    /// the mass matrix is diagonal).
    pub fn project(&self, f: &DiscreteField) -> Result<DiscreteField> {
        if f.grid() != self.psi.grid() {
            return Err(Error::GridMismatch(
                "control must live on the problem grid".into(),
            ));
        }
        let mut v = f.values().to_vec();
        self.clamp(&mut v);
        DiscreteField::from_values(f.grid(), v)
    }

    fn clamp(&self, v: &mut [f64]) {
        if let Some(lo) = &self.lo {
            for (vi, &li) in v.iter_mut().zip(lo.values()) {
                *vi = vi.max(li);
            }
        }
        if let Some(up) = &self.up {
            for (vi, &ui) in v.iter_mut().zip(up.values()) {
                *vi = vi.min(ui);
            }
        }
    }
}

/// Per-stage diagnostics of the descent path.
#[derive(Debug, Clone, Serialize)]
pub struct OcPathRow {
    pub rho: f64,
    /// Tracking objective `J` at the stage's final control (no prox term).
    pub objective: f64,
    /// Accepted projected-gradient steps in this stage.
    pub inner_iterations: usize,
    /// `‖f − Π(f − g)‖_{L²}` at the stage's final control.
    pub proj_grad_norm: f64,
    /// Whether the stage reached the inner tolerance (a `false` row keeps
    /// the incumbent and moves on rather than failing the path).
    pub converged: bool,
}

/// Outcome of [`solve_oc_path`]: the final control/state/adjoint triple with
/// its box-stationarity residual and the per-stage history.
#[derive(Debug, Clone)]
pub struct StationarityCertificate {
    f_bar: DiscreteField,
    y_bar: DiscreteField,
    p: DiscreteField,
    multiplier_residual: f64,
    objective: f64,
    path: Vec<OcPathRow>,
}

impl StationarityCertificate {
    pub fn control(&self) -> &DiscreteField {
        &self.f_bar
    }

    pub fn state(&self) -> &DiscreteField {
        &self.y_bar
    }

    pub fn adjoint(&self) -> &DiscreteField {
        &self.p
    }

    /// `‖f̄ − Π(f̄ − (p + νf̄))‖_{L²}` — zero iff `f̄` satisfies the
    /// first-order inclusion on the admissible box.
    pub fn multiplier_residual(&self) -> f64 {
        self.multiplier_residual
    }

    /// Tracking objective at the final control.
    pub fn objective(&self) -> f64 {
        self.objective
    }

    pub fn path(&self) -> &[OcPathRow] {
        &self.path
    }

    /// True when every stage reached its inner tolerance.
    pub fn converged(&self) -> bool {
        self.path.iter().all(|row| row.converged)
    }
}

/// Knobs of the path solver.
#[derive(Debug, Clone, Copy)]
pub struct OcOptions {
    /// Stage exit test: `‖f − Π(f − g)‖_{L²} ≤ tol_inner`.  Keep this above
    /// the state-solve noise floor (roughly `√solver_tol`-ish on the
    /// objective scale); acceptance tests stop resolving decreases below it.
    pub tol_inner: f64,
    /// Cap on accepted steps per stage; hitting it marks the row
    /// unconverged but keeps the incumbent.  The prox term limits each step
    /// to about twice the gradient norm, so a cold first stage legitimately
    /// spends a few hundred cheap warm-started steps.
    pub max_inner: usize,
    /// Tolerance handed to the penalized state solves.
    pub solver_tol: f64,
}

impl Default for OcOptions {
    fn default() -> Self {
        Self {
            tol_inner: 1e-7,
            max_inner: 2000,
            solver_tol: 1e-11,
        }
    }
}

/// Nodal C-stationarity diagnostics of a certificate against the exact
/// constrained solution at the same control.
///
/// The multiplier estimate is `ν̂ = M(y − y_d) − Kp`, the amount by which the
/// unweighted adjoint equation fails; it concentrates on the contact set.
#[derive(Debug, Clone, Serialize)]
pub struct CStationarityReport {
    /// `max |ν̂_i|` over the inactive set (should vanish).
    pub max_multiplier_inactive: f64,
    /// `max |p_i|` over the strictly active set (the adjoint must degenerate
    /// where the constraint is strictly active).
    pub max_adjoint_strictly_active: f64,
    /// `Σ_i min(0, ν̂_i p_i)` — the worst value of `Σ ν̂_i p_i φ_i` over
    /// nodal test fields `0 ≤ φ ≤ 1`; the sign condition wants this `≥ 0`.
    pub sign_functional: f64,
}

/// `‖v‖_{L²}` of raw nodal values under the lumped mass matrix.
fn m_norm(ops: &EllipticOperators, v: &[f64]) -> f64 {
    let vol = ops.grid().cell_volume();
    (vol * v.iter().map(|x| x * x).sum::<f64>()).sqrt()
}

/// Tracking objective `J(y, f)` (no prox term).
fn tracking_objective(
    ops: &EllipticOperators,
    prob: &ControlProblem,
    f: &DiscreteField,
    y: &DiscreteField,
) -> Result<f64> {
    let dy = y.minus(&prob.y_d)?;
    Ok(0.5 * ops.l2_inner(&dy, &dy)? + 0.5 * prob.nu * ops.l2_inner(f, f)?)
}

/// Adjoint state at a penalized solution: `(K + M·diag(w)) p = M(y − y_d)`.
/// The system matrix is the state linearization, so this is a derivative
/// solve with the tracking misfit as the direction.
fn adjoint_state(
    ops: &EllipticOperators,
    prob: &ControlProblem,
    fam: &PenaltyFamily,
    sol: &PenalizedSolution,
) -> Result<DiscreteField> {
    let dy = sol.u_rho().minus(&prob.y_d)?;
    solve_derivative(ops, fam, sol, &prob.psi, &ops.load_from_density(&dy)?)
}

fn require_smooth(spec: &FamilySpec) -> Result<()> {
    if !spec.kind.is_smooth() {
        return Err(Error::InvalidArgument(format!(
            "the control loop needs a differentiable solution operator; \
             family kind `{}` is piecewise linear",
            spec.kind.name()
        )));
    }
    Ok(())
}

/// Value and gradient of the regularized reduced objective
/// `J(S_ρ(f), f) + ½‖f − f_anchor‖²_{L²}` at the control `f`.
///
/// The gradient is the nodal field `p + νf + (f − f_anchor)` with `p` the
/// adjoint state; pairing it against a perturbation under the `L²` inner
/// product gives the directional derivative.  The state solve is cold; the
/// path solver keeps its own warm starts.
pub fn reduced_gradient(
    ops: &EllipticOperators,
    prob: &ControlProblem,
    spec: &FamilySpec,
    rho: f64,
    f: &DiscreteField,
    f_anchor: &DiscreteField,
) -> Result<(f64, DiscreteField)> {
    require_smooth(spec)?;
    let grid = ops.grid();
    if prob.psi.grid() != grid || f.grid() != grid || f_anchor.grid() != grid {
        return Err(Error::GridMismatch(
            "problem, control and anchor must live on the operator grid".into(),
        ));
    }
    let fam = spec.instantiate(grid, rho)?;
    let load = ops.load_from_density(f)?;
    let u0 = ops.solve_poisson(&load)?;
    let sol = solve_penalized_from(ops, &fam, &prob.psi, &load, GRADIENT_SOLVE_TOL, &u0)?;

    let shift = f.minus(f_anchor)?;
    let value = tracking_objective(ops, prob, f, sol.u_rho())?
        + 0.5 * ops.l2_inner(&shift, &shift)?;
    let p = adjoint_state(ops, prob, &fam, &sol)?;
    let grad: Vec<f64> = (0..grid.node_count())
        .map(|i| p.values()[i] + prob.nu * f.values()[i] + shift.values()[i])
        .collect();
    Ok((value, DiscreteField::from_values(grid, grad)?))
}

/// Walk the penalization path: for each ρ of the (strictly decreasing)
/// schedule, run a projected-gradient descent on the regularized objective
/// anchored at the incumbent control, warm-starting states down the path,
/// and certify the final stage.
///
/// A stage that exhausts its step budget reports `converged: false` in its
/// path row and the path continues with the incumbent; hard failures of the
/// state solver abort with the offending ρ attached.
pub fn solve_oc_path(
    ops: &EllipticOperators,
    prob: &ControlProblem,
    spec: &FamilySpec,
    schedule: &[f64],
    f0: &DiscreteField,
) -> Result<StationarityCertificate> {
    solve_oc_path_with(ops, prob, spec, schedule, f0, OcOptions::default())
}

/// [`solve_oc_path`] with explicit solver knobs.
pub fn solve_oc_path_with(
    ops: &EllipticOperators,
    prob: &ControlProblem,
    spec: &FamilySpec,
    schedule: &[f64],
    f0: &DiscreteField,
    opts: OcOptions,
) -> Result<StationarityCertificate> {
    require_smooth(spec)?;
    let grid = ops.grid();
    if prob.psi.grid() != grid || f0.grid() != grid {
        return Err(Error::GridMismatch(
            "problem and initial control must live on the operator grid".into(),
        ));
    }
    if schedule.is_empty() {
        return Err(Error::InvalidArgument("empty ρ-schedule".into()));
    }
    for pair in schedule.windows(2) {
        if !(pair[1] < pair[0]) {
            return Err(Error::InvalidArgument(
                "ρ-schedule must be strictly decreasing".into(),
            ));
        }
    }
    if schedule.iter().any(|&r| !(r.is_finite() && r > 0.0 && r <= 1.0)) {
        return Err(Error::InvalidArgument(
            "ρ-schedule entries must lie in (0, 1]".into(),
        ));
    }
    if !(opts.tol_inner > 0.0 && opts.solver_tol > 0.0) {
        return Err(Error::InvalidArgument(
            "inner and solver tolerances must be positive".into(),
        ));
    }
    {
        let mut v = f0.values().to_vec();
        prob.clamp(&mut v);
        if v != f0.values() {
            return Err(Error::InvalidArgument(
                "initial control lies outside the admissible box".into(),
            ));
        }
    }

    let n = grid.node_count();
    let nu = prob.nu;
    let mut f = f0.clone();
    let mut warm: Option<DiscreteField> = None;
    // Trial step length, carried across iterations and stages; backtracking
    // shrinks it, accepted steps let it regrow.
    let mut step = 1.0_f64;
    let mut path = Vec::with_capacity(schedule.len());
    let mut final_state: Option<(PenaltyFamily, PenalizedSolution)> = None;

    for &rho in schedule {
        let tag = |e: Error| Error::Sweep {
            rho,
            source: Box::new(e),
        };
        let fam = spec.instantiate(grid, rho).map_err(tag)?;

        let load = ops.load_from_density(&f).map_err(tag)?;
        let init = match &warm {
            Some(u) => u.clone(),
            None => ops.solve_poisson(&load).map_err(tag)?,
        };
        let mut sol =
            solve_penalized_from(ops, &fam, &prob.psi, &load, opts.solver_tol, &init)
                .map_err(tag)?;
        let mut objective = tracking_objective(ops, prob, &f, sol.u_rho()).map_err(tag)?;

        let mut iters = 0;
        let mut converged = false;
        let pg_norm = loop {
            // Reduced gradient at the incumbent; the prox term is anchored
            // here, so it contributes nothing to the gradient.
            let p = adjoint_state(ops, prob, &fam, &sol).map_err(tag)?;
            let g: Vec<f64> = (0..n)
                .map(|i| p.values()[i] + nu * f.values()[i])
                .collect();
            let mut projected: Vec<f64> = (0..n).map(|i| f.values()[i] - g[i]).collect();
            prob.clamp(&mut projected);
            let residual: Vec<f64> = (0..n)
                .map(|i| f.values()[i] - projected[i])
                .collect();
            let pg_norm = m_norm(ops, &residual);
            if pg_norm <= opts.tol_inner {
                converged = true;
                break pg_norm;
            }
            if iters >= opts.max_inner {
                break pg_norm;
            }

            // Backtracking along the projection arc.  Acceptance compares
            // the regularized value at the trial (prox anchored at the
            // incumbent) against the incumbent objective, so accepted steps
            // decrease J strictly.
            step = (step * 4.0).min(1e8);
            let mut accepted = false;
            for _ in 0..MAX_HALVINGS {
                let mut trial: Vec<f64> =
                    (0..n).map(|i| f.values()[i] - step * g[i]).collect();
                prob.clamp(&mut trial);
                let diff: Vec<f64> = (0..n).map(|i| trial[i] - f.values()[i]).collect();
                let dist_sq = {
                    let d = m_norm(ops, &diff);
                    d * d
                };
                if dist_sq == 0.0 {
                    // The box pins every direction the gradient proposes;
                    // shrinking the step cannot unpin it.
                    break;
                }
                let trial_f = DiscreteField::from_values(grid, trial).map_err(tag)?;
                let trial_load = ops.load_from_density(&trial_f).map_err(tag)?;
                let trial_sol = solve_penalized_from(
                    ops,
                    &fam,
                    &prob.psi,
                    &trial_load,
                    opts.solver_tol,
                    sol.u_rho(),
                )
                .map_err(tag)?;
                let trial_obj =
                    tracking_objective(ops, prob, &trial_f, trial_sol.u_rho()).map_err(tag)?;
                if trial_obj + 0.5 * dist_sq <= objective - (SIGMA / step) * dist_sq {
                    f = trial_f;
                    sol = trial_sol;
                    objective = trial_obj;
                    iters += 1;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                // Stalled search: report the incumbent for this stage.
                break pg_norm;
            }
        };

        path.push(OcPathRow {
            rho,
            objective,
            inner_iterations: iters,
            proj_grad_norm: pg_norm,
            converged,
        });
        warm = Some(sol.u_rho().clone());
        final_state = Some((fam, sol));
    }

    let (fam, sol) = final_state.expect("schedule is nonempty");
    let p = adjoint_state(ops, prob, &fam, &sol)?;
    let mut projected: Vec<f64> = (0..n)
        .map(|i| f.values()[i] - (p.values()[i] + nu * f.values()[i]))
        .collect();
    prob.clamp(&mut projected);
    let residual: Vec<f64> = (0..n).map(|i| f.values()[i] - projected[i]).collect();
    let multiplier_residual = m_norm(ops, &residual);
    let objective = path.last().map(|row| row.objective).unwrap_or(f64::NAN);

    Ok(StationarityCertificate {
        y_bar: sol.u_rho().clone(),
        f_bar: f,
        p,
        multiplier_residual,
        objective,
        path,
    })
}

/// Nodal C-stationarity checks of a certificate against the exact
/// constrained solution at the same control: the multiplier estimate
/// `ν̂ = M(y − y_d) − Kp` must vanish off the contact set, the adjoint must
/// vanish where the constraint is strictly active, and the products
/// `ν̂_i p_i` must not go negative.
pub fn check_c_stationarity(
    ops: &EllipticOperators,
    prob: &ControlProblem,
    cert: &StationarityCertificate,
    vi: &VISolution,
) -> Result<CStationarityReport> {
    let grid = ops.grid();
    if prob.psi.grid() != grid || cert.y_bar.grid() != grid || vi.u().grid() != grid {
        return Err(Error::GridMismatch(
            "certificate and reference solution must live on the operator grid".into(),
        ));
    }
    let dy = cert.y_bar.minus(&prob.y_d)?;
    let m_dy = ops.load_from_density(&dy)?;
    let kp = ops.apply_stiffness(&cert.p)?;
    let nu_hat: Vec<f64> = m_dy
        .values()
        .iter()
        .zip(kp.values())
        .map(|(&a, &b)| a - b)
        .collect();

    let max_multiplier_inactive = vi
        .inactive()
        .iter()
        .map(|&i| nu_hat[i].abs())
        .fold(0.0, f64::max);
    let max_adjoint_strictly_active = vi
        .strictly_active()
        .iter()
        .map(|&i| cert.p.values()[i].abs())
        .fold(0.0, f64::max);
    let sign_functional = nu_hat
        .iter()
        .zip(cert.p.values())
        .map(|(&nh, &pi)| (nh * pi).min(0.0))
        .sum();

    Ok(CStationarityReport {
        max_multiplier_inactive,
        max_adjoint_strictly_active,
        sign_functional,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Extent, Grid};
    use crate::penalty::{FamilyKind, RegKind};
    use crate::vi::solve_pdas;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize) -> (Grid, EllipticOperators) {
        let grid = Grid::new(Extent::unit_interval(), n).unwrap();
        let ops = EllipticOperators::assemble(grid).unwrap();
        (grid, ops)
    }

    fn huber_family() -> FamilySpec {
        FamilySpec::new(FamilyKind::SmoothMax, Some(RegKind::HuberGlobal), None)
    }

    /// A state fitted exactly by its own target has zero value and gradient:
    /// the misfit is identically zero, hence so is the adjoint, and with
    /// ν = 0 and a zero prox shift nothing else contributes.
    #[test]
    fn exact_fit_has_zero_value_and_gradient() {
        let (grid, ops) = setup(31);
        let psi = DiscreteField::constant(grid, 1e6);
        let f = DiscreteField::from_fn(grid, |x, _| 8.0 * x * (1.0 - x) + 1.0);
        let rho = 0.05;
        let spec = huber_family();

        let fam = spec.instantiate(grid, rho).unwrap();
        let load = ops.load_from_density(&f).unwrap();
        let u0 = ops.solve_poisson(&load).unwrap();
        let y_d = solve_penalized_from(&ops, &fam, &psi, &load, 1e-12, &u0)
            .unwrap()
            .u_rho()
            .clone();

        let prob = ControlProblem::new(psi, y_d, 0.0).unwrap();
        let (value, grad) = reduced_gradient(&ops, &prob, &spec, rho, &f, &f).unwrap();
        assert_eq!(value, 0.0);
        assert_eq!(grad.linf_norm(), 0.0);
    }

    /// Central difference quotients of the value match the gradient pairing
    /// on an instance with genuine contact, for both smooth kinds.
    #[test]
    fn gradient_matches_difference_quotients() {
        let (grid, ops) = setup(31);
        let psi = DiscreteField::from_fn(grid, |x, _| 0.06 + 0.04 * x);
        let y_d = DiscreteField::from_fn(grid, |x, _| x * (1.0 - x));
        let prob = ControlProblem::new(psi, y_d, 1e-2).unwrap();
        let f = DiscreteField::from_fn(grid, |x, _| 4.0 - 6.0 * x);
        let anchor = DiscreteField::from_fn(grid, |x, _| 1.0 - x);
        let rho = 0.05;

        let lambda_bar = DiscreteField::constant(grid, 5.0);
        let specs = [
            huber_family(),
            FamilySpec::new(
                FamilyKind::SmoothCompMax,
                Some(RegKind::KwCubic),
                Some(lambda_bar),
            ),
        ];

        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for spec in &specs {
            let (_, grad) = reduced_gradient(&ops, &prob, spec, rho, &f, &anchor).unwrap();
            for _ in 0..3 {
                let delta = DiscreteField::from_values(
                    grid,
                    (0..grid.node_count())
                        .map(|_| rng.gen_range(-1.0..1.0))
                        .collect(),
                )
                .unwrap();
                let h = 1e-6;
                let value_at = |t: f64| {
                    let ft = DiscreteField::from_values(
                        grid,
                        f.values()
                            .iter()
                            .zip(delta.values())
                            .map(|(&fi, &di)| fi + t * di)
                            .collect(),
                    )
                    .unwrap();
                    reduced_gradient(&ops, &prob, spec, rho, &ft, &anchor)
                        .unwrap()
                        .0
                };
                let quotient = (value_at(h) - value_at(-h)) / (2.0 * h);
                let pairing = ops.l2_inner(&grad, &delta).unwrap();
                assert!(
                    (quotient - pairing).abs() <= 1e-5 * (1.0 + pairing.abs()),
                    "family {}: quotient {quotient:.10e} vs pairing {pairing:.10e}",
                    spec.label()
                );
            }
        }
    }

    /// With the obstacle far away the penalty never engages and the gradient
    /// reduces to the plain linear-quadratic control gradient
    /// `K⁻¹M(y − y_d) + νf + (f − anchor)`.
    #[test]
    fn never_active_gradient_is_the_poisson_control_gradient() {
        let (grid, ops) = setup(31);
        let psi = DiscreteField::constant(grid, 1e6);
        let y_d = DiscreteField::from_fn(grid, |x, _| x * (1.0 - x));
        let prob = ControlProblem::new(psi, y_d.clone(), 1e-2).unwrap();
        let f = DiscreteField::from_fn(grid, |x, _| 1.0 + x);
        let anchor = DiscreteField::constant(grid, 0.5);

        let (_, grad) = reduced_gradient(&ops, &prob, &huber_family(), 0.1, &f, &anchor).unwrap();

        let y = ops
            .solve_poisson(&ops.load_from_density(&f).unwrap())
            .unwrap();
        let dy = y.minus(&y_d).unwrap();
        let p = ops
            .solve_poisson(&ops.load_from_density(&dy).unwrap())
            .unwrap();
        for i in 0..grid.node_count() {
            let expected =
                p.values()[i] + 1e-2 * f.values()[i] + (f.values()[i] - anchor.values()[i]);
            assert!((grad.values()[i] - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
        }
    }

    /// Self-adjointness of the weighted solve: pairing the adjoint against a
    /// perturbation equals pairing the misfit against the state derivative.
    #[test]
    fn adjoint_pairing_matches_state_derivative_pairing() {
        let (grid, ops) = setup(31);
        let psi = DiscreteField::constant(grid, 0.05);
        let y_d = DiscreteField::from_fn(grid, |x, _| 0.5 * x);
        let prob = ControlProblem::new(psi.clone(), y_d, 1e-2).unwrap();
        let f = DiscreteField::constant(grid, 3.0);
        let rho = 0.02;
        let spec = huber_family();
        let fam = spec.instantiate(grid, rho).unwrap();

        let load = ops.load_from_density(&f).unwrap();
        let u0 = ops.solve_poisson(&load).unwrap();
        let sol = solve_penalized_from(&ops, &fam, &psi, &load, 1e-12, &u0).unwrap();
        let p = adjoint_state(&ops, &prob, &fam, &sol).unwrap();
        let dy = sol.u_rho().minus(prob.target()).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..5 {
            let delta = DiscreteField::from_values(
                grid,
                (0..grid.node_count())
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect(),
            )
            .unwrap();
            let s_prime = solve_derivative(
                &ops,
                &fam,
                &sol,
                &psi,
                &ops.load_from_density(&delta).unwrap(),
            )
            .unwrap();
            let lhs = ops.l2_inner(&p, &delta).unwrap();
            let rhs = ops.l2_inner(&dy, &s_prime).unwrap();
            assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        }
    }

    /// Never-active path lands on the solution of the equivalent quadratic
    /// program, solved densely as an oracle.
    #[test]
    fn never_active_path_matches_the_quadratic_program() {
        let (grid, ops) = setup(63);
        let n = grid.node_count();
        let vol = grid.cell_volume();
        let psi = DiscreteField::constant(grid, 1e6);
        let y_d = DiscreteField::from_fn(grid, |x, _| x * (1.0 - x));
        let nu = 1e-2;
        let prob = ControlProblem::new(psi, y_d.clone(), nu).unwrap();
        let f0 = DiscreteField::zeros(grid);
        let schedule = crate::limits::default_schedule();

        // ν = 1e−2 turns a stationarity residual of r into a control error
        // of up to 100·r, so the oracle comparison needs the inner loop an
        // order tighter than the default.
        let opts = OcOptions {
            tol_inner: 1e-8,
            max_inner: 3000,
            solver_tol: 1e-12,
        };
        let cert = solve_oc_path_with(&ops, &prob, &huber_family(), &schedule, &f0, opts).unwrap();
        assert!(cert.converged(), "path rows: {:?}", cert.path());
        assert!(
            cert.multiplier_residual() <= 1e-6,
            "residual {:.3e}",
            cert.multiplier_residual()
        );
        for pair in cert.path().windows(2) {
            assert!(pair[1].objective <= pair[0].objective + 1e-14);
        }

        // Dense oracle: minimize ½‖Bf − y_d‖²_M + (ν/2)‖f‖²_M with B = K⁻¹M,
        // i.e. solve (BᵀMB + νM) f = BᵀM y_d.
        let chol = ops.stiffness().cholesky().unwrap();
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = vol;
                chol.solve(&e)
            })
            .collect();
        let h = nalgebra::DMatrix::from_fn(n, n, |i, j| {
            let gram = vol * cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum::<f64>();
            gram + if i == j { nu * vol } else { 0.0 }
        });
        let rhs = nalgebra::DVector::from_fn(n, |j, _| {
            vol * cols[j]
                .iter()
                .zip(y_d.values())
                .map(|(a, b)| a * b)
                .sum::<f64>()
        });
        let f_star = h.cholesky().unwrap().solve(&rhs);

        let diff: Vec<f64> = (0..n)
            .map(|i| cert.control().values()[i] - f_star[i])
            .collect();
        assert!(
            m_norm(&ops, &diff) <= 1e-6,
            "‖f̄ − f*‖ = {:.3e}",
            m_norm(&ops, &diff)
        );
    }

    /// The shipped contact instance: the admissible box keeps the load
    /// strong enough that every candidate state is clamped on a band, and
    /// the target equals the obstacle there, so shrinking ρ can only improve
    /// the fit.  The path converges and the certificate passes the nodal
    /// C-stationarity checks against the exact solution at the final
    /// control.
    #[test]
    fn contact_path_produces_a_c_stationary_point() {
        let (grid, ops) = setup(63);
        let psi = DiscreteField::constant(grid, 0.5);
        let y_d = DiscreteField::from_fn(grid, |x, _| (4.0 * x * (1.0 - x)).min(0.5));
        let prob = ControlProblem::new(psi.clone(), y_d, 1e-2)
            .unwrap()
            .with_bounds(
                Some(DiscreteField::constant(grid, 6.0)),
                Some(DiscreteField::constant(grid, 10.0)),
            )
            .unwrap();
        let f0 = DiscreteField::constant(grid, 8.0);
        let schedule = crate::limits::default_schedule();

        let cert = solve_oc_path(&ops, &prob, &huber_family(), &schedule, &f0).unwrap();
        assert!(cert.converged(), "path rows: {:#?}", cert.path());
        assert!(
            cert.multiplier_residual() <= 1e-4,
            "residual {:.3e}",
            cert.multiplier_residual()
        );
        // The Tikhonov term pins the optimal control to the box floor, so
        // later stages re-solve the state at a fixed control; the objective
        // improves overall but may drift by O(ρ) across stages as the
        // junction region of the state settles.  Inner solves are monotone
        // by construction; across stages only the net improvement is stable.
        let first = cert.path().first().unwrap().objective;
        let last = cert.path().last().unwrap().objective;
        assert!(last <= first, "no net descent: {first:.6e} -> {last:.6e}");

        let load = ops.load_from_density(cert.control()).unwrap();
        let vi = solve_pdas(&ops, &psi, &load).unwrap();
        assert!(
            !vi.strictly_active().is_empty(),
            "instance must have genuine contact"
        );
        // Every inactive gap clears the smallest swept ρ by a wide margin,
        // so the final weights classify unambiguously.
        let rho_min = *schedule.last().unwrap();
        for &i in vi.inactive() {
            let gap = psi.values()[i] - vi.u().values()[i];
            assert!(gap >= 8.0 * rho_min, "straggler gap {gap:.3e} at node {i}");
        }

        let report = check_c_stationarity(&ops, &prob, &cert, &vi).unwrap();
        assert!(
            report.max_multiplier_inactive <= 1e-4,
            "max_I |ν̂| = {:.3e}",
            report.max_multiplier_inactive
        );
        assert!(
            report.max_adjoint_strictly_active <= 1e-4,
            "max_As |p| = {:.3e}",
            report.max_adjoint_strictly_active
        );
        assert!(
            report.sign_functional >= -1e-6,
            "sign functional {:.3e}",
            report.sign_functional
        );
    }

    /// A singleton admissible box pins the control: the path returns it
    /// unchanged with an exactly zero residual.
    #[test]
    fn singleton_box_returns_the_pinned_control() {
        let (grid, ops) = setup(31);
        let psi = DiscreteField::constant(grid, 0.25);
        let y_d = DiscreteField::constant(grid, 0.1);
        let pinned = DiscreteField::from_fn(grid, |x, _| 2.0 + x);
        let prob = ControlProblem::new(psi, y_d, 1e-2)
            .unwrap()
            .with_bounds(Some(pinned.clone()), Some(pinned.clone()))
            .unwrap();
        let schedule = [0.25, 0.0625];

        let cert = solve_oc_path(&ops, &prob, &huber_family(), &schedule, &pinned).unwrap();
        assert_eq!(cert.control().values(), pinned.values());
        assert_eq!(cert.multiplier_residual(), 0.0);
        assert!(cert.converged());
        assert!(cert.path().iter().all(|row| row.inner_iterations == 0));
    }

    /// A certificate with vanishing adjoint has a vanishing sign functional
    /// no matter what the multiplier estimate looks like.
    #[test]
    fn zero_adjoint_gives_zero_sign_functional() {
        let (grid, ops) = setup(31);
        let psi = DiscreteField::constant(grid, 0.05);
        let y_d = DiscreteField::from_fn(grid, |x, _| x);
        let prob = ControlProblem::new(psi.clone(), y_d, 1e-2).unwrap();
        let load = ops.load_constant(8.0);
        let vi = solve_pdas(&ops, &psi, &load).unwrap();

        let cert = StationarityCertificate {
            f_bar: DiscreteField::constant(grid, 8.0),
            y_bar: vi.u().clone(),
            p: DiscreteField::zeros(grid),
            multiplier_residual: 0.0,
            objective: 0.0,
            path: Vec::new(),
        };
        let report = check_c_stationarity(&ops, &prob, &cert, &vi).unwrap();
        assert_eq!(report.sign_functional, 0.0);
        assert_eq!(report.max_adjoint_strictly_active, 0.0);
    }

    /// With no contact anywhere the multiplier estimate vanishes wholesale.
    #[test]
    fn never_active_multiplier_vanishes() {
        let (grid, ops) = setup(31);
        let psi = DiscreteField::constant(grid, 1e6);
        let y_d = DiscreteField::from_fn(grid, |x, _| x * (1.0 - x));
        let prob = ControlProblem::new(psi.clone(), y_d, 1e-2).unwrap();
        let f0 = DiscreteField::zeros(grid);
        let schedule = [0.25, 0.0625, 0.015625];

        let cert = solve_oc_path(&ops, &prob, &huber_family(), &schedule, &f0).unwrap();
        let load = ops.load_from_density(cert.control()).unwrap();
        let vi = solve_pdas(&ops, &psi, &load).unwrap();
        assert!(vi.active().is_empty());

        let report = check_c_stationarity(&ops, &prob, &cert, &vi).unwrap();
        assert!(report.max_multiplier_inactive <= 1e-8);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (grid, ops) = setup(15);
        let psi = DiscreteField::constant(grid, 0.5);
        let y_d = DiscreteField::constant(grid, 0.1);
        let f = DiscreteField::zeros(grid);

        // Tikhonov weight must be nonnegative.
        assert!(matches!(
            ControlProblem::new(psi.clone(), y_d.clone(), -1.0),
            Err(Error::InvalidArgument(_))
        ));
        // Crossed bounds.
        assert!(matches!(
            ControlProblem::new(psi.clone(), y_d.clone(), 1.0)
                .unwrap()
                .with_bounds(
                    Some(DiscreteField::constant(grid, 1.0)),
                    Some(DiscreteField::constant(grid, 0.0)),
                ),
            Err(Error::InvalidArgument(_))
        ));
        // Mismatched target grid.
        let other = Grid::new(Extent::unit_interval(), 7).unwrap();
        assert!(matches!(
            ControlProblem::new(psi.clone(), DiscreteField::zeros(other), 1.0),
            Err(Error::GridMismatch(_))
        ));

        let prob = ControlProblem::new(psi.clone(), y_d, 1e-2).unwrap();
        // Kinked families cannot drive the control loop.
        let kinked = FamilySpec::new(FamilyKind::Max, None, None);
        assert!(matches!(
            reduced_gradient(&ops, &prob, &kinked, 0.1, &f, &f),
            Err(Error::InvalidArgument(_))
        ));
        // Initial control outside the box.
        let boxed = ControlProblem::new(psi, DiscreteField::constant(grid, 0.1), 1e-2)
            .unwrap()
            .with_bounds(Some(DiscreteField::constant(grid, 1.0)), None)
            .unwrap();
        assert!(matches!(
            solve_oc_path(&ops, &boxed, &huber_family(), &[0.25], &f),
            Err(Error::InvalidArgument(_))
        ));
        // Schedules must be strictly decreasing and inside (0, 1].
        assert!(matches!(
            solve_oc_path(&ops, &prob, &huber_family(), &[], &f),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            solve_oc_path(&ops, &prob, &huber_family(), &[0.25, 0.25], &f),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            solve_oc_path(&ops, &prob, &huber_family(), &[2.0, 0.25], &f),
            Err(Error::InvalidArgument(_))
        ));
    }

    /// Projection clamps nodewise and honors one-sided bounds.
    #[test]
    fn projection_clamps_nodewise() {
        let (grid, _ops) = setup(15);
        let psi = DiscreteField::constant(grid, 0.5);
        let y_d = DiscreteField::zeros(grid);
        let prob = ControlProblem::new(psi, y_d, 0.0)
            .unwrap()
            .with_bounds(Some(DiscreteField::constant(grid, -1.0)), None)
            .unwrap();
        let f = DiscreteField::from_fn(grid, |x, _| -3.0 + 4.0 * x);
        let proj = prob.project(&f).unwrap();
        for (p, &orig) in proj.values().iter().zip(f.values()) {
            assert_eq!(*p, orig.max(-1.0));
        }
    }
}
