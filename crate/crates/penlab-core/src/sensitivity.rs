//! Linearization of the penalized solution map.
//!
//! At a solution state the map `f ↦ u_ρ` has the derivative `α = S'_ρ(f)d`
//! solving `(K + M·diag(w))α = D` with nodal weights `w_i = λ'_ρ(u_i−ψ_i)`.
//! Those weights, read as the density of a nonnegative measure, are the
//! object that survives the ρ → 0 limit: nodes whose weight blows up end up
//! carrying the hard constraint `α = 0`.  [`WeightMeasure`] represents both
//! regimes — finite densities plus explicit `+∞` markers — and
//! [`solve_weighted`] solves the corresponding equation by eliminating the
//! pinned rows outright instead of faking them with large numbers, which
//! would trade an exact constraint for conditioning trouble.

use crate::error::{Error, Result};
use crate::grid::{DiscreteField, DualVector, EllipticOperators, Grid};
use crate::penalty::PenaltyFamily;
use crate::penalty_solver::PenalizedSolution;

/// Nodal weight measure for the linearized equation: finite entries scale
/// the lumped mass matrix, `f64::INFINITY` pins the solution to zero at
/// that node.
#[derive(Debug, Clone)]
pub struct WeightMeasure {
    grid: Grid,
    weights: Vec<f64>,
}

impl WeightMeasure {
    /// Wrap nodal weights.  Entries must be ≥ 0; `f64::INFINITY` is the
    /// pin-to-zero marker, NaN is rejected.
    pub fn from_values(grid: Grid, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.node_count() {
            return Err(Error::GridMismatch(format!(
                "weight vector has {} entries for a grid with {} nodes",
                weights.len(),
                grid.node_count()
            )));
        }
        if let Some(w) = weights.iter().find(|w| w.is_nan() || **w < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "measure weights must be nonnegative (or +inf), got {w}"
            )));
        }
        Ok(Self { grid, weights })
    }

    /// The zero measure: the weighted equation degenerates to the Poisson
    /// problem.
    pub fn zeros(grid: Grid) -> Self {
        let weights = vec![0.0; grid.node_count()];
        Self { grid, weights }
    }

    /// Constant weight on every node (`f64::INFINITY` pins the whole
    /// domain).
    pub fn constant(grid: Grid, w: f64) -> Result<Self> {
        let n = grid.node_count();
        Self::from_values(grid, vec![w; n])
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodes carrying the `+∞` marker, i.e. where solutions of the weighted
    /// equation are pinned to zero.
    pub fn pinned_nodes(&self) -> Vec<usize> {
        (0..self.weights.len())
            .filter(|&i| self.weights[i] == f64::INFINITY)
            .collect()
    }

    pub fn is_pinned(&self, node: usize) -> bool {
        self.weights[node] == f64::INFINITY
    }
}

fn check_state(
    ops: &EllipticOperators,
    fam: &PenaltyFamily,
    sol: &PenalizedSolution,
    psi: &DiscreteField,
) -> Result<()> {
    let grid = ops.grid();
    if fam.grid() != grid || sol.u_rho().grid() != grid || psi.grid() != grid {
        return Err(Error::GridMismatch(
            "family, solution state and obstacle must share the operator grid".into(),
        ));
    }
    if !sol.is_gateaux() {
        return Err(Error::NotGateaux {
            nodes: sol.kink_nodes().to_vec(),
        });
    }
    Ok(())
}

fn state_weights(fam: &PenaltyFamily, sol: &PenalizedSolution, psi: &DiscreteField) -> Vec<f64> {
    sol.u_rho()
        .values()
        .iter()
        .zip(psi.values())
        .enumerate()
        .map(|(i, (u, p))| fam.newton_slope(i, u - p))
        .collect()
}

/// Derivative of the penalized solution map at the state `sol` in direction
/// `d`: solves `(K + M·diag(w))α = D` with `w_i = λ'_ρ(u_i−ψ_i)`.
///
/// For the kinked families the state must be a Gâteaux point
/// (`sol.is_gateaux()`); otherwise the offending nodes are reported via
/// [`Error::NotGateaux`] and the caller may perturb the load.  The result
/// obeys `‖α‖_{H¹₀} ≤ ‖d‖_{H⁻¹}`.
pub fn solve_derivative(
    ops: &EllipticOperators,
    fam: &PenaltyFamily,
    sol: &PenalizedSolution,
    psi: &DiscreteField,
    d: &DualVector,
) -> Result<DiscreteField> {
    check_state(ops, fam, sol, psi)?;
    if d.grid() != ops.grid() {
        return Err(Error::GridMismatch(
            "direction must live on the operator grid".into(),
        ));
    }
    let vol = ops.grid().cell_volume();
    let scaled: Vec<f64> = state_weights(fam, sol, psi)
        .into_iter()
        .map(|w| vol * w)
        .collect();
    let jac = ops.stiffness().with_added_diagonal(&scaled);
    let alpha = jac.cholesky()?.solve(d.values());
    DiscreteField::from_values(ops.grid(), alpha)
}

/// The nodal weights `w_i = λ'_ρ(u_i−ψ_i)` of the state as a measure
/// density.  All entries are finite and lie in `[0, 1/ρ]`; the same Gâteaux
/// condition as [`solve_derivative`] applies.
pub fn extract_measure(
    ops: &EllipticOperators,
    fam: &PenaltyFamily,
    sol: &PenalizedSolution,
    psi: &DiscreteField,
) -> Result<WeightMeasure> {
    check_state(ops, fam, sol, psi)?;
    WeightMeasure::from_values(ops.grid(), state_weights(fam, sol, psi))
}

/// Solve the measure-weighted equation `(K + M·diag(μ))α = D`.
///
/// Rows and columns of pinned nodes (`μ_i = ∞`) are eliminated and the
/// returned field is zero there; finite weights enter through the lumped
/// mass matrix.  With `μ ≡ 0` this is the Poisson solve, with `μ ≡ ∞` the
/// zero field.
pub fn solve_weighted(
    ops: &EllipticOperators,
    mu: &WeightMeasure,
    d: &DualVector,
) -> Result<DiscreteField> {
    let grid = ops.grid();
    if mu.grid() != grid || d.grid() != grid {
        return Err(Error::GridMismatch(
            "measure and direction must live on the operator grid".into(),
        ));
    }
    let vol = grid.cell_volume();
    let n = grid.node_count();
    let keep: Vec<usize> = (0..n).filter(|&i| !mu.is_pinned(i)).collect();

    if keep.len() == n {
        let scaled: Vec<f64> = mu.weights().iter().map(|w| vol * w).collect();
        let system = ops.stiffness().with_added_diagonal(&scaled);
        let alpha = system.cholesky()?.solve(d.values());
        return DiscreteField::from_values(grid, alpha);
    }

    let mut alpha = vec![0.0; n];
    if !keep.is_empty() {
        let scaled: Vec<f64> = keep.iter().map(|&i| vol * mu.weights()[i]).collect();
        let system = ops
            .stiffness()
            .principal_submatrix(&keep)
            .with_added_diagonal(&scaled);
        let rhs: Vec<f64> = keep.iter().map(|&i| d.values()[i]).collect();
        let reduced = system.cholesky()?.solve(&rhs);
        for (&i, v) in keep.iter().zip(reduced) {
            alpha[i] = v;
        }
    }
    DiscreteField::from_values(grid, alpha)
}
