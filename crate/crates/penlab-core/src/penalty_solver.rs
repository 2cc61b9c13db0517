//! Semismooth Newton solver for the penalized equation
//! `Ku + M·Λ_ρ(u−ψ) = F`.
//!
//! Newton directions come from the generalized slopes of the family
//! ([`crate::penalty::PenaltyFamily::newton_slope`]).  For the kinked
//! families a full step that flips the slope pattern is an active-set
//! update and is always accepted — damping those steps stalls the finite
//! termination the pattern updates provide.  Steps that leave the pattern
//! alone are kept honest by a halving line search on the dual-norm
//! residual, with a damped Richardson sweep as fallback when the Newton
//! direction stalls.  The returned solution carries the data downstream
//! sensitivity analysis needs: which nodes sit exactly on a kink of a
//! nonsmooth family, and hence whether a well-defined linearization exists
//! at this state.

use crate::error::{Error, Result};
use crate::grid::{DiscreteField, DualVector, EllipticOperators};
use crate::penalty::PenaltyFamily;

const MAX_NEWTON_ITERS: usize = 50;
const MAX_HALVINGS: usize = 30;
const RICHARDSON_STEPS: usize = 100;

/// Solution of the penalized equation at one parameter value.
#[derive(Debug, Clone)]
pub struct PenalizedSolution {
    u_rho: DiscreteField,
    residual_norm: f64,
    newton_iters: usize,
    kink_nodes: Vec<usize>,
    gateaux_flag: bool,
}

impl PenalizedSolution {
    pub fn u_rho(&self) -> &DiscreteField {
        &self.u_rho
    }

    /// Dual norm of `Ku + M·Λ_ρ(u−ψ) − F` at the returned state.
    pub fn residual_norm(&self) -> f64 {
        self.residual_norm
    }

    /// Number of outer iterations, counting the residual check at the loop
    /// head: a start that is already converged reports 1.
    pub fn newton_iters(&self) -> usize {
        self.newton_iters
    }

    /// Nodes where `u_ρ − ψ` sits on the kink of a nonsmooth family
    /// (always empty for smooth kinds).
    pub fn kink_nodes(&self) -> &[usize] {
        &self.kink_nodes
    }

    /// True when the solution map has a linearization at this state: smooth
    /// families always, nonsmooth ones only away from their kinks.
    pub fn is_gateaux(&self) -> bool {
        self.gateaux_flag
    }
}

struct Workspace<'a> {
    ops: &'a EllipticOperators,
    fam: &'a PenaltyFamily,
    psi: &'a [f64],
    f: &'a [f64],
    vol: f64,
}

impl Workspace<'_> {
    /// Residual load vector `Ku + M·Λ_ρ(u−ψ) − F`.
    fn residual(&self, u: &[f64], out: &mut Vec<f64>) {
        out.resize(u.len(), 0.0);
        self.ops.stiffness().matvec(u, out);
        for i in 0..u.len() {
            out[i] += self.vol * self.fam.eval(i, u[i] - self.psi[i]) - self.f[i];
        }
    }

    fn merit(&self, r: &[f64]) -> f64 {
        self.ops.dual_norm_raw(r)
    }
}

/// Solve the penalized equation starting from the unconstrained Poisson
/// solution.  Converges when the residual satisfies
/// `‖R‖_{H⁻¹} ≤ tol·(1 + ‖f_rho‖_{H⁻¹})`.
pub fn solve_penalized(
    ops: &EllipticOperators,
    fam: &PenaltyFamily,
    psi: &DiscreteField,
    f_rho: &DualVector,
    tol: f64,
) -> Result<PenalizedSolution> {
    let u0 = ops.solve_poisson(f_rho)?;
    solve_penalized_from(ops, fam, psi, f_rho, tol, &u0)
}

/// Same as [`solve_penalized`] but warm-started from `u0` — the workhorse
/// for sweeps that walk a decreasing ρ-schedule.
pub fn solve_penalized_from(
    ops: &EllipticOperators,
    fam: &PenaltyFamily,
    psi: &DiscreteField,
    f_rho: &DualVector,
    tol: f64,
    u0: &DiscreteField,
) -> Result<PenalizedSolution> {
    let grid = ops.grid();
    if fam.grid() != grid || psi.grid() != grid || f_rho.grid() != grid || u0.grid() != grid {
        return Err(Error::GridMismatch(
            "penalty family, obstacle, load and initial guess must share the solver grid".into(),
        ));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "solver tolerance must be positive, got {tol}"
        )));
    }
    let n = grid.node_count();
    let ws = Workspace {
        ops,
        fam,
        psi: psi.values(),
        f: f_rho.values(),
        vol: grid.cell_volume(),
    };
    let target = tol * (1.0 + ops.norm_hminus1(f_rho)?);

    let mut u = u0.values().to_vec();
    let mut r = Vec::with_capacity(n);
    ws.residual(&u, &mut r);
    let mut merit = ws.merit(&r);

    let mut iters = 0;
    while iters < MAX_NEWTON_ITERS {
        iters += 1;
        if merit <= target {
            return Ok(finish(ws.fam, psi, u, merit, iters));
        }

        // Newton direction from the generalized slopes at the current state
        let slopes: Vec<f64> = (0..n)
            .map(|i| ws.vol * fam.newton_slope(i, u[i] - ws.psi[i]))
            .collect();
        let jac = ops.stiffness().with_added_diagonal(&slopes);
        let mut delta: Vec<f64> = r.iter().map(|v| -v).collect();
        jac.cholesky()?.solve_in_place(&mut delta);

        // Full step first.  For the kinked families the slopes take only the
        // two branch values, so a changed slope vector means the step moved
        // nodes across the kink: an active-set update that must be taken as
        // is (the merit may transiently rise along that path).
        let trial: Vec<f64> = (0..n).map(|i| u[i] + delta[i]).collect();
        let mut r_trial = Vec::with_capacity(n);
        ws.residual(&trial, &mut r_trial);
        let m_trial = ws.merit(&r_trial);
        let pattern_changed = !fam.kind().is_smooth()
            && (0..n)
                .any(|i| ws.vol * fam.newton_slope(i, trial[i] - ws.psi[i]) != slopes[i]);
        if m_trial < merit || pattern_changed {
            u = trial;
            r = r_trial;
            merit = m_trial;
            continue;
        }

        match line_search(&ws, &u, &delta, merit) {
            Some((u_next, r_next, m_next)) => {
                u = u_next;
                r = r_next;
                merit = m_next;
            }
            None => {
                // Newton stalled; grind the residual down with damped
                // Richardson sweeps u ← u − t·K⁻¹R, then let Newton retry.
                let before = merit;
                for _ in 0..RICHARDSON_STEPS {
                    let dir: Vec<f64> = ops
                        .solve_stiffness_raw(&r)
                        .into_iter()
                        .map(|v| -v)
                        .collect();
                    match line_search(&ws, &u, &dir, merit) {
                        Some((u_next, r_next, m_next)) => {
                            u = u_next;
                            r = r_next;
                            merit = m_next;
                        }
                        None => break,
                    }
                    if merit <= target {
                        break;
                    }
                }
                if merit >= before {
                    return Err(Error::NoConvergence {
                        solver: "semismooth newton",
                        iterations: iters,
                        residual: merit,
                    });
                }
            }
        }
    }
    if merit <= target {
        return Ok(finish(ws.fam, psi, u, merit, iters));
    }
    Err(Error::NoConvergence {
        solver: "semismooth newton",
        iterations: iters,
        residual: merit,
    })
}

/// Halving line search: first step length in 1, 1/2, 1/4, … that strictly
/// decreases the dual-norm residual.
fn line_search(
    ws: &Workspace<'_>,
    u: &[f64],
    dir: &[f64],
    merit: f64,
) -> Option<(Vec<f64>, Vec<f64>, f64)> {
    let mut t = 1.0;
    let mut trial = vec![0.0; u.len()];
    let mut r_trial = Vec::with_capacity(u.len());
    for _ in 0..MAX_HALVINGS {
        for i in 0..u.len() {
            trial[i] = u[i] + t * dir[i];
        }
        ws.residual(&trial, &mut r_trial);
        let m = ws.merit(&r_trial);
        if m < merit {
            return Some((trial, r_trial, m));
        }
        t *= 0.5;
    }
    None
}

fn finish(
    fam: &PenaltyFamily,
    psi: &DiscreteField,
    u: Vec<f64>,
    merit: f64,
    iters: usize,
) -> PenalizedSolution {
    let eps_kink = 1e-9 * (1.0 + psi.linf_norm());
    let kink_nodes: Vec<usize> = if fam.kind().is_smooth() {
        Vec::new()
    } else {
        (0..u.len())
            .filter(|&i| fam.on_kink(i, u[i] - psi.values()[i], eps_kink))
            .collect()
    };
    let gateaux_flag = kink_nodes.is_empty();
    PenalizedSolution {
        u_rho: DiscreteField::from_values(psi.grid(), u)
            .expect("iterate length matches the grid"),
        residual_norm: merit,
        newton_iters: iters,
        kink_nodes,
        gateaux_flag,
    }
}

/// Ratio `‖S_ρ(f) − S_ρ(g)‖_{H¹₀} / ‖f − g‖_{H⁻¹}`, with both solves at
/// tolerance 1e−12.  Returns 0 when the loads coincide.
pub fn lipschitz_probe(
    ops: &EllipticOperators,
    fam: &PenaltyFamily,
    psi: &DiscreteField,
    f: &DualVector,
    g: &DualVector,
) -> Result<f64> {
    let diff_vals: Vec<f64> = f
        .values()
        .iter()
        .zip(g.values())
        .map(|(a, b)| a - b)
        .collect();
    let diff = DualVector::from_values(f.grid(), diff_vals)?;
    let denom = ops.norm_hminus1(&diff)?;
    if denom == 0.0 {
        return Ok(0.0);
    }
    let sf = solve_penalized(ops, fam, psi, f, 1e-12)?;
    let sg = solve_penalized(ops, fam, psi, g, 1e-12)?;
    let delta_vals: Vec<f64> = sf
        .u_rho()
        .values()
        .iter()
        .zip(sg.u_rho().values())
        .map(|(a, b)| a - b)
        .collect();
    let delta = DiscreteField::from_values(f.grid(), delta_vals)?;
    Ok(ops.norm_h10(&delta)? / denom)
}
