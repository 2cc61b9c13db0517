//! Numerical laboratory for penalty approximations of the obstacle problem.
//!
//! The crate solves the discrete obstacle problem on uniform 1D/2D grids,
//! replaces the constraint by a configurable penalty family, and measures
//! what survives of the solution map's differentiability as the penalty
//! parameter goes to zero: solution errors, constraint violations, Gâteaux
//! derivatives, weight measures and their weak limits, and first-order
//! optimality systems of penalized optimal control problems.
//!
//! Modules mirror the pipeline:
//! * [`grid`] — meshes, P1 operators, norms;
//! * [`penalty`] — regularized max functions and penalty families;
//! * [`vi`] — reference solutions of the variational inequality;
//! * [`penalty_solver`] — semismooth Newton for the penalized PDE;
//! * [`sensitivity`] — linearized states and weight measures;
//! * [`limits`] — parameter sweeps, rate fits, limit diagnostics;
//! * [`optcontrol`] — penalized optimal control with stationarity checks;
//! * [`verify`] — the shipped acceptance checks run by tests and the CLI.

pub mod band;
pub mod error;
pub mod grid;
pub mod limits;
pub mod optcontrol;
pub mod penalty;
pub mod penalty_solver;
pub mod sensitivity;
pub mod verify;
pub mod vi;

pub use error::{Error, Result};
pub use grid::{build_grid, DiscreteField, DualVector, EllipticOperators, Extent, Grid};
pub use limits::{
    default_schedule, fit_rate, fit_record_rates, limit_condition_report,
    limit_measure_estimate, run_sweep, DirectionConditions, MeasureEstimate, RateFit,
    RateSummary, SweepConfig, SweepRecord, ThresholdRule,
};
pub use optcontrol::{
    check_c_stationarity, reduced_gradient, solve_oc_path, solve_oc_path_with,
    CStationarityReport, ControlProblem, OcOptions, OcPathRow, StationarityCertificate,
};
pub use penalty::{
    make_family, verify_assumptions, AssumptionReport, FamilyKind, FamilySpec, PenaltyFamily,
    PropertyCheck, RegKind, Regularization,
};
pub use penalty_solver::{
    lipschitz_probe, solve_penalized, solve_penalized_from, PenalizedSolution,
};
pub use sensitivity::{extract_measure, solve_derivative, solve_weighted, WeightMeasure};
pub use verify::{all_passed, run_all, Check, CriterionResult};
pub use vi::{classify_sets, solve_bruteforce, solve_pdas, VISolution};
