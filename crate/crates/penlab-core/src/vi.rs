//! Reference solver for the discrete obstacle problem.
//!
//! Solves `min ½⟨Kv,v⟩ − ⟨F,v⟩ over v ≤ ψ` nodally, i.e. the
//! complementarity system
//!
//! ```text
//! Ku + ξ = F,   u ≤ ψ,   ξ ≥ 0,   ξᵢ (ψᵢ − uᵢ) = 0,
//! ```
//!
//! via a primal-dual active-set iteration and, for tiny systems, by full
//! enumeration of active sets.  These solutions are the ground truth every
//! penalty sweep compares against.

use crate::error::{Error, Result};
use crate::grid::{DiscreteField, DualVector, EllipticOperators};
use std::collections::HashSet;

/// Maximum node count accepted by [`solve_bruteforce`] (2^N candidate sets).
pub const BRUTE_FORCE_MAX_NODES: usize = 14;

/// Iteration backstop for [`solve_pdas`], added to the node count: the
/// active sets it generates are pairwise distinct (the cycle guard catches
/// repeats), and on plateau instances the set genuinely sheds only one
/// boundary node per side and step, so the honest worst case grows with
/// the grid.
const PDAS_EXTRA_ITER: usize = 8;

/// Solution of the discrete obstacle problem with its multiplier and the
/// default active/inactive decomposition.
///
/// The multiplier `ξ = F − Ku` is a load vector: `ξᵢ` pairs against the
/// i-th nodal basis function.  Nodal comparisons against tolerances divide
/// by the cell volume first (see [`classify_sets`]).
#[derive(Debug, Clone)]
pub struct VISolution {
    u: DiscreteField,
    xi: DualVector,
    psi: DiscreteField,
    active: Vec<usize>,
    strictly_active: Vec<usize>,
    inactive: Vec<usize>,
    iterations: usize,
}

impl VISolution {
    fn assemble(
        u: DiscreteField,
        xi: DualVector,
        psi: DiscreteField,
        f: &DualVector,
        iterations: usize,
    ) -> Self {
        let (tol_act, tol_xi) = default_tolerances(&psi, f);
        let mut sol = Self {
            u,
            xi,
            psi,
            active: Vec::new(),
            strictly_active: Vec::new(),
            inactive: Vec::new(),
            iterations,
        };
        let (inactive, active, strictly) = classify_sets(&sol, tol_act, tol_xi);
        sol.active = active;
        sol.strictly_active = strictly;
        sol.inactive = inactive;
        sol
    }

    pub fn u(&self) -> &DiscreteField {
        &self.u
    }

    pub fn xi(&self) -> &DualVector {
        &self.xi
    }

    pub fn psi(&self) -> &DiscreteField {
        &self.psi
    }

    /// Nodes with `u = ψ` (within the default tolerance).
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    /// Active nodes carrying a positive multiplier.
    pub fn strictly_active(&self) -> &[usize] {
        &self.strictly_active
    }

    /// Nodes with `u < ψ`.
    pub fn inactive(&self) -> &[usize] {
        &self.inactive
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Worst complementarity violation: max over nodes of constraint
    /// violation, multiplier negativity (as a density), and the
    /// complementarity product scale `min(ψ−u, ξ/m)`.
    pub fn complementarity_residual(&self) -> f64 {
        let m = self.u.grid().cell_volume();
        let mut worst = 0.0f64;
        for i in 0..self.u.len() {
            let gap = self.psi.values()[i] - self.u.values()[i];
            let xid = self.xi.values()[i] / m;
            worst = worst
                .max(-gap)
                .max(-xid)
                .max(gap.max(0.0).min(xid.max(0.0)));
        }
        worst
    }
}

/// Default set-classification tolerances: proportional guards against
/// floating-point dust on top of exact set membership from the solvers.
pub fn default_tolerances(psi: &DiscreteField, f: &DualVector) -> (f64, f64) {
    let tol_act = 1e-10 * psi.linf_norm() + 1e-14;
    let tol_xi = 1e-10 * f.linf_norm() + 1e-14;
    (tol_act, tol_xi)
}

/// Split nodes into (inactive, active, strictly active) with explicit
/// tolerances: active means `ψ − u ≤ tol_act`; strictly active additionally
/// requires `ξ > tol_xi`.
pub fn classify_sets(
    sol: &VISolution,
    tol_act: f64,
    tol_xi: f64,
) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut inactive = Vec::new();
    let mut active = Vec::new();
    let mut strictly = Vec::new();
    for i in 0..sol.u.len() {
        if sol.psi.values()[i] - sol.u.values()[i] <= tol_act {
            active.push(i);
            if sol.xi.values()[i] > tol_xi {
                strictly.push(i);
            }
        } else {
            inactive.push(i);
        }
    }
    (inactive, active, strictly)
}

/// Given an active set, solve `u = ψ` there and `Ku = F` elsewhere;
/// returns `(u, ξ = F − Ku)`.
fn solve_with_active(
    ops: &EllipticOperators,
    psi: &DiscreteField,
    f: &DualVector,
    active: &[usize],
) -> Result<(DiscreteField, DualVector)> {
    let grid = psi.grid();
    let n = grid.node_count();
    let u = if active.len() == n {
        psi.clone()
    } else if active.is_empty() {
        ops.solve_poisson(f)?
    } else {
        let is_active: Vec<bool> = {
            let mut mask = vec![false; n];
            for &i in active {
                mask[i] = true;
            }
            mask
        };
        let keep: Vec<usize> = (0..n).filter(|i| !is_active[*i]).collect();
        // fold the pinned columns into the right-hand side: rhs_I = F_I − (Kw)_I
        // with w equal to ψ on the active set and 0 elsewhere
        let mut w = vec![0.0; n];
        for &i in active {
            w[i] = psi.values()[i];
        }
        let mut kw = vec![0.0; n];
        ops.stiffness().matvec(&w, &mut kw);
        let rhs: Vec<f64> = keep.iter().map(|&i| f.values()[i] - kw[i]).collect();
        let reduced = ops.stiffness().principal_submatrix(&keep);
        let mut sol = rhs;
        reduced.cholesky()?.solve_in_place(&mut sol);
        let mut vals = w;
        for (slot, &i) in keep.iter().enumerate() {
            vals[i] = sol[slot];
        }
        DiscreteField::from_values(grid, vals)?
    };
    let mut ku = vec![0.0; n];
    ops.stiffness().matvec(u.values(), &mut ku);
    let xi_vals: Vec<f64> = (0..n).map(|i| f.values()[i] - ku[i]).collect();
    Ok((u, DualVector::from_values(grid, xi_vals)?))
}

/// Primal-dual active-set iteration.  Finite termination: each step solves
/// the linear system pinned on the current guess of the contact set, then
/// re-guesses from the signs of `ξ/m + (u − ψ)`; the method stops as soon
/// as the set reproduces itself.  A repeat of an older set would mean a
/// cycle and is reported as non-convergence (it cannot happen for the
/// discretizations assembled here, whose stiffness matrices are
/// M-matrices, but the guard is cheap).
pub fn solve_pdas(
    ops: &EllipticOperators,
    psi: &DiscreteField,
    f: &DualVector,
) -> Result<VISolution> {
    let grid = ops.grid();
    if psi.grid() != grid || f.grid() != grid {
        return Err(Error::GridMismatch(
            "obstacle and load must live on the solver grid".into(),
        ));
    }
    let m = grid.cell_volume();

    // start from the violation set of the unconstrained solution
    let u0 = ops.solve_poisson(f)?;
    let mut active: Vec<usize> = (0..grid.node_count())
        .filter(|&i| u0.values()[i] > psi.values()[i])
        .collect();

    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    seen.insert(active.clone());

    let max_iter = grid.node_count() + PDAS_EXTRA_ITER;
    let mut last = None;
    for iter in 1..=max_iter {
        let (u, xi) = solve_with_active(ops, psi, f, &active)?;
        let next: Vec<usize> = (0..grid.node_count())
            .filter(|&i| xi.values()[i] / m + (u.values()[i] - psi.values()[i]) > 0.0)
            .collect();
        if next == active {
            return Ok(VISolution::assemble(u, xi, psi.clone(), f, iter));
        }
        if !seen.insert(next.clone()) {
            let sol = VISolution::assemble(u, xi, psi.clone(), f, iter);
            return Err(Error::NoConvergence {
                solver: "pdas",
                iterations: iter,
                residual: sol.complementarity_residual(),
            });
        }
        last = Some((u, xi, iter));
        active = next;
    }
    Err(Error::NoConvergence {
        solver: "pdas",
        iterations: max_iter,
        residual: last
            .map(|(u, xi, iter)| {
                VISolution::assemble(u, xi, psi.clone(), f, iter).complementarity_residual()
            })
            .unwrap_or(f64::NAN),
    })
}

/// Enumerate all 2^N active sets and return the one with the smallest
/// complementarity residual.  Exponential: capped at
/// [`BRUTE_FORCE_MAX_NODES`] nodes.  Serves as an independent oracle for
/// [`solve_pdas`]; the winning candidate is unique up to biactive nodes,
/// which change the set but not the solution.
pub fn solve_bruteforce(
    ops: &EllipticOperators,
    psi: &DiscreteField,
    f: &DualVector,
) -> Result<VISolution> {
    let grid = ops.grid();
    if psi.grid() != grid || f.grid() != grid {
        return Err(Error::GridMismatch(
            "obstacle and load must live on the solver grid".into(),
        ));
    }
    let n = grid.node_count();
    if n > BRUTE_FORCE_MAX_NODES {
        return Err(Error::TooLargeForBruteForce {
            max: BRUTE_FORCE_MAX_NODES,
            got: n,
        });
    }
    let m = grid.cell_volume();

    let mut best: Option<(f64, DiscreteField, DualVector)> = None;
    for mask in 0u32..(1u32 << n) {
        let active: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let (u, xi) = solve_with_active(ops, psi, f, &active)?;
        let mut score = 0.0f64;
        for i in 0..n {
            let gap = psi.values()[i] - u.values()[i];
            let xid = xi.values()[i] / m;
            score = score
                .max(-gap)
                .max(-xid)
                .max(gap.max(0.0).min(xid.max(0.0)));
        }
        if best.as_ref().map_or(true, |(s, _, _)| score < *s) {
            best = Some((score, u, xi));
        }
    }
    let (_, u, xi) = best.expect("at least the empty active set was tried");
    Ok(VISolution::assemble(u, xi, psi.clone(), f, 1 << n))
}
