//! Shared fixtures for the solver benchmarks: the analytic bump instance
//! and a few representative family specs.

use penlab_core::{
    build_grid, DiscreteField, DualVector, EllipticOperators, Extent, FamilyKind, FamilySpec,
    Grid, RegKind,
};

/// Constant load 8 against the flat obstacle 1/2 on the unit interval —
/// the instance with a known contact interval that most tests use.
pub fn analytic_instance(n: usize) -> (Grid, EllipticOperators, DiscreteField, DualVector) {
    let (grid, ops) = build_grid(Extent::unit_interval(), n).expect("valid grid");
    let psi = DiscreteField::constant(grid, 0.5);
    let f = ops.load_constant(8.0);
    (grid, ops, psi, f)
}

/// The plain max penalty (nonsmooth, semismooth Newton path).
pub fn max_spec() -> FamilySpec {
    FamilySpec::new(FamilyKind::Max, None, None)
}

/// Globally smoothed max (smooth Newton path, no multiplier shift).
pub fn smooth_spec() -> FamilySpec {
    FamilySpec::new(FamilyKind::SmoothMax, Some(RegKind::HuberGlobal), None)
}

/// Composed smoothed family with the uniform shift the analytic instance
/// calls for.
pub fn composed_spec(grid: Grid) -> FamilySpec {
    FamilySpec::new(
        FamilyKind::SmoothCompMax,
        Some(RegKind::KwCubic),
        Some(DiscreteField::constant(grid, 8.0)),
    )
}
