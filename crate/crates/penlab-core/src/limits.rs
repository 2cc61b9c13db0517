//! Convergence studies down a penalty-parameter schedule.
//!
//! [`run_sweep`] solves the penalized equation along a decreasing schedule
//! (warm-starting each solve from the previous one), compares against the
//! PDAS reference solution of the constrained problem, linearizes in a panel
//! of directions, and records per-parameter metrics: solution error,
//! constraint violation and its √ρ-scaled version, penalty magnitude, weight
//! statistics split by the reference active sets, and direction-wise
//! diagnostics for the limit conditions.  [`fit_rate`] turns metric columns
//! into log-log convergence rates, [`limit_measure_estimate`] classifies the
//! smallest-ρ weights into the limit measure, and [`limit_condition_report`]
//! summarizes how close the final linearized state is to the limit system.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{DiscreteField, DualVector, EllipticOperators};
use crate::penalty::FamilySpec;
use crate::penalty_solver::{solve_penalized, solve_penalized_from, PenalizedSolution};
use crate::sensitivity::{extract_measure, WeightMeasure};
use crate::vi::solve_pdas;

/// The stock schedule ρ_k = 4^{−k}, k = 1..8: each step halves √ρ, matching
/// the √ρ-scale estimates the sweep is checking.
pub fn default_schedule() -> Vec<f64> {
    (1..=8).map(|k| 0.25f64.powi(k)).collect()
}

/// Everything a sweep needs besides the assembled operators.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    psi: DiscreteField,
    f: DualVector,
    family: FamilySpec,
    schedule: Vec<f64>,
    directions: Vec<DualVector>,
    solver_tol: f64,
}

impl SweepConfig {
    /// Validates the schedule (strictly decreasing, inside (0, 1]) and that
    /// all fields live on one grid.  Solver tolerance defaults to 1e−11.
    pub fn new(
        psi: DiscreteField,
        f: DualVector,
        family: FamilySpec,
        schedule: Vec<f64>,
        directions: Vec<DualVector>,
    ) -> Result<Self> {
        if schedule.is_empty() {
            return Err(Error::InvalidArgument("empty parameter schedule".into()));
        }
        for pair in schedule.windows(2) {
            if !(pair[1] < pair[0]) {
                return Err(Error::InvalidArgument(format!(
                    "schedule must decrease strictly, got {} after {}",
                    pair[1], pair[0]
                )));
            }
        }
        if schedule.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
            return Err(Error::InvalidArgument(
                "schedule entries must lie in (0, 1]".into(),
            ));
        }
        let grid = psi.grid();
        if f.grid() != grid || directions.iter().any(|d| d.grid() != grid) {
            return Err(Error::GridMismatch(
                "obstacle, load and directions must share one grid".into(),
            ));
        }
        Ok(Self {
            psi,
            f,
            family,
            schedule,
            directions,
            solver_tol: 1e-11,
        })
    }

    /// Override the penalized-solver tolerance.
    pub fn with_solver_tol(mut self, tol: f64) -> Result<Self> {
        if !(tol.is_finite() && tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "solver tolerance must be positive, got {tol}"
            )));
        }
        self.solver_tol = tol;
        Ok(self)
    }

    pub fn schedule(&self) -> &[f64] {
        &self.schedule
    }

    pub fn directions(&self) -> &[DualVector] {
        &self.directions
    }
}

/// Direction-wise diagnostics at one schedule point.
#[derive(Debug, Clone)]
pub struct DirCell {
    alpha: DiscreteField,
    alpha_h10: f64,
    xi_alpha: f64,
    xi_alpha_pos: f64,
    xi_alpha_neg: f64,
    alpha_step_l2: Option<f64>,
    eq_residual_inactive: f64,
}

impl DirCell {
    /// The linearized state α_ρ for this direction.
    pub fn alpha(&self) -> &DiscreteField {
        &self.alpha
    }

    pub fn alpha_h10(&self) -> f64 {
        self.alpha_h10
    }

    /// Pairing ⟨ξ_ρ, α_ρ⟩ with the penalized multiplier ξ_ρ = F − K u_ρ.
    pub fn xi_alpha(&self) -> f64 {
        self.xi_alpha
    }

    pub fn xi_alpha_pos(&self) -> f64 {
        self.xi_alpha_pos
    }

    pub fn xi_alpha_neg(&self) -> f64 {
        self.xi_alpha_neg
    }

    /// ‖α_ρ − α_prev‖_{L²} against the previous schedule point; absent on
    /// the first one.
    pub fn alpha_step_l2(&self) -> Option<f64> {
        self.alpha_step_l2
    }

    /// max over the reference inactive set of |(Kα − D)_i| — how well α
    /// already satisfies the plain Poisson equation where the constraint is
    /// slack.
    pub fn eq_residual_inactive(&self) -> f64 {
        self.eq_residual_inactive
    }
}

/// Metrics recorded at one schedule point.
#[derive(Debug, Clone)]
pub struct RhoRow {
    rho: f64,
    u_rho: DiscreteField,
    weights: WeightMeasure,
    newton_iters: usize,
    u_err_h10: f64,
    violation_l2: f64,
    scaled_violation_l2: f64,
    penalty_l2: f64,
    w_max_inactive: f64,
    w_min_strict: Option<f64>,
    dirs: Vec<DirCell>,
}

impl RhoRow {
    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn u_rho(&self) -> &DiscreteField {
        &self.u_rho
    }

    /// Nodal weights λ'_ρ(u_ρ−ψ) at this schedule point.
    pub fn weights(&self) -> &WeightMeasure {
        &self.weights
    }

    pub fn newton_iters(&self) -> usize {
        self.newton_iters
    }

    /// ‖u_ρ − u‖_{H¹₀} against the PDAS reference.
    pub fn u_err_h10(&self) -> f64 {
        self.u_err_h10
    }

    /// ‖(u_ρ−ψ)⁺‖_{L²}.
    pub fn violation_l2(&self) -> f64 {
        self.violation_l2
    }

    /// ρ^{−1/2}·‖(u_ρ−ψ)⁺‖_{L²}.
    pub fn scaled_violation_l2(&self) -> f64 {
        self.scaled_violation_l2
    }

    /// ‖Λ_ρ(u_ρ−ψ)‖_{L²}.
    pub fn penalty_l2(&self) -> f64 {
        self.penalty_l2
    }

    /// Largest weight on the reference inactive set.
    pub fn w_max_inactive(&self) -> f64 {
        self.w_max_inactive
    }

    /// Smallest weight on the reference strictly-active set; absent when
    /// that set is empty.
    pub fn w_min_strict(&self) -> Option<f64> {
        self.w_min_strict
    }

    pub fn dirs(&self) -> &[DirCell] {
        &self.dirs
    }
}

/// Outcome of [`run_sweep`]: one [`RhoRow`] per schedule point plus the
/// reference index sets the row metrics were split by.
#[derive(Debug, Clone)]
pub struct SweepRecord {
    rows: Vec<RhoRow>,
    inactive: Vec<usize>,
    active: Vec<usize>,
    strictly_active: Vec<usize>,
}

impl SweepRecord {
    pub fn rows(&self) -> &[RhoRow] {
        &self.rows
    }

    /// Row at the smallest schedule value.
    pub fn final_row(&self) -> &RhoRow {
        self.rows.last().expect("a sweep has at least one row")
    }

    pub fn inactive(&self) -> &[usize] {
        &self.inactive
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn strictly_active(&self) -> &[usize] {
        &self.strictly_active
    }

    pub fn schedule(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.rho).collect()
    }
}

/// Run the full study: PDAS reference, warm-started penalized solves down
/// the schedule, linearizations in every configured direction.  Failures
/// are tagged with the schedule value at which they occurred.
pub fn run_sweep(ops: &EllipticOperators, cfg: &SweepConfig) -> Result<SweepRecord> {
    let grid = ops.grid();
    if cfg.psi.grid() != grid {
        return Err(Error::GridMismatch(
            "sweep config lives on a different grid than the operators".into(),
        ));
    }
    let vi = solve_pdas(ops, &cfg.psi, &cfg.f)?;
    let inactive = vi.inactive().to_vec();
    let active = vi.active().to_vec();
    let strictly_active = vi.strictly_active().to_vec();
    let vol = grid.cell_volume();
    let n = grid.node_count();

    let mut rows: Vec<RhoRow> = Vec::with_capacity(cfg.schedule.len());
    let mut warm: Option<DiscreteField> = None;
    for &rho in &cfg.schedule {
        let tag = |e: Error| Error::Sweep {
            rho,
            source: Box::new(e),
        };
        let fam = cfg.family.instantiate(grid, rho).map_err(tag)?;
        let sol: PenalizedSolution = match &warm {
            None => solve_penalized(ops, &fam, &cfg.psi, &cfg.f, cfg.solver_tol),
            Some(u0) => solve_penalized_from(ops, &fam, &cfg.psi, &cfg.f, cfg.solver_tol, u0),
        }
        .map_err(tag)?;

        let diff = sol.u_rho().minus(vi.u()).map_err(tag)?;
        let u_err_h10 = ops.norm_h10(&diff).map_err(tag)?;
        let gap = sol.u_rho().minus(&cfg.psi).map_err(tag)?;
        let violation_l2 = ops.norm_l2(&gap.positive_part()).map_err(tag)?;
        let penalty_density = DiscreteField::from_values(
            grid,
            (0..n).map(|i| fam.eval(i, gap.values()[i])).collect(),
        )
        .map_err(tag)?;
        let penalty_l2 = ops.norm_l2(&penalty_density).map_err(tag)?;

        let weights = extract_measure(ops, &fam, &sol, &cfg.psi).map_err(tag)?;
        let w_max_inactive = inactive
            .iter()
            .map(|&i| weights.weights()[i])
            .fold(0.0f64, f64::max);
        let w_min_strict = strictly_active
            .iter()
            .map(|&i| weights.weights()[i])
            .fold(None, |acc: Option<f64>, w| {
                Some(acc.map_or(w, |m| m.min(w)))
            });

        // ξ_ρ = F − K u_ρ, the multiplier the penalized state carries
        let mut xi = vec![0.0; n];
        ops.stiffness().matvec(sol.u_rho().values(), &mut xi);
        for i in 0..n {
            xi[i] = cfg.f.values()[i] - xi[i];
        }

        let scaled: Vec<f64> = weights.weights().iter().map(|w| vol * w).collect();
        let linearized = ops.stiffness().with_added_diagonal(&scaled);
        let chol = linearized.cholesky().map_err(tag)?;
        let prev_row = rows.last();
        let dirs: Vec<DirCell> = cfg
            .directions
            .par_iter()
            .enumerate()
            .map(|(j, d)| -> Result<DirCell> {
                let alpha_vals = chol.solve(d.values());
                let alpha = DiscreteField::from_values(grid, alpha_vals)?;
                let alpha_h10 = ops.norm_h10(&alpha)?;
                let pos = alpha.positive_part();
                let neg = alpha.negative_part();
                let dot = |v: &DiscreteField| {
                    xi.iter()
                        .zip(v.values())
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                };
                let mut k_alpha = vec![0.0; n];
                ops.stiffness().matvec(alpha.values(), &mut k_alpha);
                let eq_residual_inactive = inactive
                    .iter()
                    .map(|&i| (k_alpha[i] - d.values()[i]).abs())
                    .fold(0.0f64, f64::max);
                let alpha_step_l2 = match prev_row {
                    None => None,
                    Some(prev) => {
                        let step = alpha.minus(prev.dirs[j].alpha())?;
                        Some(ops.norm_l2(&step)?)
                    }
                };
                Ok(DirCell {
                    xi_alpha: dot(&alpha),
                    xi_alpha_pos: dot(&pos),
                    xi_alpha_neg: dot(&neg),
                    alpha,
                    alpha_h10,
                    alpha_step_l2,
                    eq_residual_inactive,
                })
            })
            .collect::<Result<_>>()
            .map_err(tag)?;

        warm = Some(sol.u_rho().clone());
        rows.push(RhoRow {
            rho,
            newton_iters: sol.newton_iters(),
            u_rho: sol.u_rho().clone(),
            weights,
            u_err_h10,
            violation_l2,
            scaled_violation_l2: violation_l2 / rho.sqrt(),
            penalty_l2,
            w_max_inactive,
            w_min_strict,
            dirs,
        });
    }

    Ok(SweepRecord {
        rows,
        inactive,
        active,
        strictly_active,
    })
}

/// A fitted log-log convergence rate.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub r_squared: f64,
    /// Points that survived the positivity filter and entered the fit.
    pub points_used: usize,
}

/// Ordinary least squares on (log x, log y).  Values of `y` at or below
/// 1e−300 are excluded; at least three points must survive, and the `x`
/// values must not collapse to a single abscissa.
pub fn fit_rate(xs: &[f64], ys: &[f64]) -> Result<RateFit> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs matching lengths, got {} xs and {} ys",
            xs.len(),
            ys.len()
        )));
    }
    if xs.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
        return Err(Error::InvalidArgument(
            "rate fit abscissae must be positive".into(),
        ));
    }
    if ys.iter().any(|&y| !y.is_finite() || y < 0.0) {
        return Err(Error::InvalidArgument(
            "rate fit ordinates must be finite and nonnegative".into(),
        ));
    }
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(_, &y)| y > 1e-300)
        .map(|(&x, &y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "{} usable points after excluding vanishing ordinates; need 3",
            pts.len()
        )));
    }
    let m = pts.len() as f64;
    let mean_x = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx = pts.iter().map(|p| (p.0 - mean_x).powi(2)).sum::<f64>();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit(
            "all abscissae coincide after filtering".into(),
        ));
    }
    let sxy = pts
        .iter()
        .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
        .sum::<f64>();
    let slope = sxy / sxx;
    let ss_tot = pts.iter().map(|p| (p.1 - mean_y).powi(2)).sum::<f64>();
    let ss_res = pts
        .iter()
        .map(|p| (p.1 - mean_y - slope * (p.0 - mean_x)).powi(2))
        .sum::<f64>();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(RateFit {
        slope,
        r_squared,
        points_used: pts.len(),
    })
}

/// Fitted rate of one named sweep metric.
#[derive(Debug, Clone, Serialize)]
pub struct RateSummary {
    pub metric: String,
    pub slope: f64,
    pub r_squared: f64,
    pub points_used: usize,
    /// Whether the raw metric decreased monotonically down the schedule.
    pub decreasing: bool,
}

/// Fit the standard per-ρ metric columns of a record.  Metrics whose fit is
/// degenerate (identically zero columns and the like) are skipped.
pub fn fit_record_rates(record: &SweepRecord) -> Vec<RateSummary> {
    let xs = record.schedule();
    let columns: [(&str, Vec<f64>); 4] = [
        (
            "u_err_h10",
            record.rows().iter().map(|r| r.u_err_h10).collect(),
        ),
        (
            "violation_l2",
            record.rows().iter().map(|r| r.violation_l2).collect(),
        ),
        (
            "scaled_violation_l2",
            record.rows().iter().map(|r| r.scaled_violation_l2).collect(),
        ),
        (
            "penalty_l2",
            record.rows().iter().map(|r| r.penalty_l2).collect(),
        ),
    ];
    columns
        .into_iter()
        .filter_map(|(name, ys)| {
            let decreasing = ys.windows(2).all(|w| w[1] <= w[0]);
            fit_rate(&xs, &ys).ok().map(|fit| RateSummary {
                metric: name.to_string(),
                slope: fit.slope,
                r_squared: fit.r_squared,
                points_used: fit.points_used,
                decreasing,
            })
        })
        .collect()
}

/// Buckets for classifying final-sweep weights into a limit measure.
#[derive(Debug, Clone, Copy)]
pub struct ThresholdRule {
    /// Weights at or below this are read as 0.
    pub tau_zero: f64,
    /// Weights at or above `tau_inf / ρ_min` are read as +∞.
    pub tau_inf: f64,
}

impl Default for ThresholdRule {
    fn default() -> Self {
        Self {
            tau_zero: 1e-6,
            tau_inf: 1e-2,
        }
    }
}

/// A classified limit measure plus the nodes that fell in neither bucket.
#[derive(Debug, Clone)]
pub struct MeasureEstimate {
    pub measure: WeightMeasure,
    /// Nodes whose final weight was neither ≤ τ_zero nor ≥ τ_inf/ρ_min;
    /// they keep their last finite weight in the measure.
    pub ambiguous: Vec<usize>,
}

/// Classify the smallest-ρ weights of a completed sweep: tiny weights
/// become 0, weights on the 1/ρ scale become the +∞ marker, anything in
/// between keeps its last value and is flagged as ambiguous.
pub fn limit_measure_estimate(record: &SweepRecord, rule: &ThresholdRule) -> Result<MeasureEstimate> {
    let last = record.final_row();
    let cut_inf = rule.tau_inf / last.rho();
    if !(rule.tau_zero >= 0.0 && cut_inf > rule.tau_zero) {
        return Err(Error::InvalidArgument(format!(
            "threshold buckets overlap: tau_zero = {}, tau_inf/rho_min = {cut_inf}",
            rule.tau_zero
        )));
    }
    let mut ambiguous = Vec::new();
    let classified: Vec<f64> = last
        .weights()
        .weights()
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            if w <= rule.tau_zero {
                0.0
            } else if w >= cut_inf {
                f64::INFINITY
            } else {
                ambiguous.push(i);
                w
            }
        })
        .collect();
    Ok(MeasureEstimate {
        measure: WeightMeasure::from_values(last.weights().grid(), classified)?,
        ambiguous,
    })
}

/// Final-row condition checks for one direction, all in absolute value.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DirectionConditions {
    pub xi_alpha: f64,
    pub xi_alpha_pos: f64,
    pub xi_alpha_neg: f64,
    /// max over the strictly-active reference set of |α_ρ|.
    pub max_alpha_strict: f64,
    /// max over the inactive reference set of |(Kα − D)_i|.
    pub eq_residual_inactive: f64,
}

impl DirectionConditions {
    /// Largest of the five reported quantities.
    pub fn worst(&self) -> f64 {
        self.xi_alpha
            .max(self.xi_alpha_pos)
            .max(self.xi_alpha_neg)
            .max(self.max_alpha_strict)
            .max(self.eq_residual_inactive)
    }
}

/// How close each direction's final linearized state is to the limit
/// system: vanishing multiplier pairings, vanishing values on the strictly
/// active set, and the plain equation holding on the inactive set.
pub fn limit_condition_report(record: &SweepRecord) -> Vec<DirectionConditions> {
    let last = record.final_row();
    last.dirs()
        .iter()
        .map(|cell| {
            let max_alpha_strict = record
                .strictly_active()
                .iter()
                .map(|&i| cell.alpha().values()[i].abs())
                .fold(0.0f64, f64::max);
            DirectionConditions {
                xi_alpha: cell.xi_alpha().abs(),
                xi_alpha_pos: cell.xi_alpha_pos().abs(),
                xi_alpha_neg: cell.xi_alpha_neg().abs(),
                max_alpha_strict,
                eq_residual_inactive: cell.eq_residual_inactive(),
            }
        })
        .collect()
}

/// Fixed CSV column order for [`to_csv`].
pub const CSV_HEADER: &str = "rho,u_err_h10,violation_l2,scaled_violation_l2,penalty_l2,\
newton_iters,w_max_inactive,w_min_strict,direction,alpha_h10,xi_alpha,xi_alpha_pos,\
xi_alpha_neg,alpha_step_l2,eq_residual_inactive";

fn push_float(out: &mut String, v: f64) {
    out.push_str(&format!("{v:.16e}"));
}

/// Render a record as CSV, one row per schedule point × direction (or one
/// row per schedule point when no directions were configured).  Optional
/// cells (first-step α distance, empty strictly-active set) are left empty.
pub fn to_csv(record: &SweepRecord) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in record.rows() {
        let cells: Vec<Option<&DirCell>> = if row.dirs().is_empty() {
            vec![None]
        } else {
            row.dirs().iter().map(Some).collect()
        };
        for (j, cell) in cells.into_iter().enumerate() {
            push_float(&mut out, row.rho());
            out.push(',');
            push_float(&mut out, row.u_err_h10());
            out.push(',');
            push_float(&mut out, row.violation_l2());
            out.push(',');
            push_float(&mut out, row.scaled_violation_l2());
            out.push(',');
            push_float(&mut out, row.penalty_l2());
            out.push(',');
            out.push_str(&row.newton_iters().to_string());
            out.push(',');
            push_float(&mut out, row.w_max_inactive());
            out.push(',');
            if let Some(w) = row.w_min_strict() {
                push_float(&mut out, w);
            }
            match cell {
                None => out.push_str(",,,,,,"),
                Some(cell) => {
                    out.push(',');
                    out.push_str(&j.to_string());
                    out.push(',');
                    push_float(&mut out, cell.alpha_h10());
                    out.push(',');
                    push_float(&mut out, cell.xi_alpha());
                    out.push(',');
                    push_float(&mut out, cell.xi_alpha_pos());
                    out.push(',');
                    push_float(&mut out, cell.xi_alpha_neg());
                    out.push(',');
                    if let Some(s) = cell.alpha_step_l2() {
                        push_float(&mut out, s);
                    }
                    out.push(',');
                    push_float(&mut out, cell.eq_residual_inactive());
                }
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, Extent, Grid};
    use crate::penalty::{FamilyKind, FamilySpec, RegKind};
    use crate::sensitivity::solve_weighted;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// 1D instance with constant load 8 and obstacle 1/2: contact region
    /// [1/(2√2), 1−1/(2√2)], multiplier density 8 inside it.
    fn analytic_instance(n: usize) -> (Grid, EllipticOperators, DiscreteField, DualVector) {
        let (grid, ops) = build_grid(Extent::unit_interval(), n).unwrap();
        let f = ops.load_constant(8.0);
        let psi = DiscreteField::constant(grid, 0.5);
        (grid, ops, psi, f)
    }

    fn analytic_sweep(n: usize, dirs: usize, kind: FamilyKind, reg: Option<RegKind>) -> SweepRecord {
        let (grid, ops, psi, f) = analytic_instance(n);
        let lambda_bar = kind
            .needs_multiplier_shift()
            .then(|| DiscreteField::constant(grid, 8.0));
        let spec = FamilySpec::new(kind, reg, lambda_bar);
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let directions: Vec<DualVector> = (0..dirs)
            .map(|_| {
                let vals: Vec<f64> = (0..grid.node_count())
                    .map(|_| rng.gen_range(-4.0..4.0))
                    .collect();
                ops.load_from_density(&DiscreteField::from_values(grid, vals).unwrap())
                    .unwrap()
            })
            .collect();
        let cfg = SweepConfig::new(psi, f, spec, default_schedule(), directions).unwrap();
        run_sweep(&ops, &cfg).unwrap()
    }

    #[test]
    fn schedule_validation_rejects_bad_input() {
        let (grid, _) = build_grid(Extent::unit_interval(), 7).unwrap();
        let psi = DiscreteField::zeros(grid);
        let f = DualVector::zeros(grid);
        let spec = FamilySpec::new(FamilyKind::Max, None, None);
        for bad in [
            vec![],
            vec![0.5, 0.5],
            vec![0.25, 0.5],
            vec![1.5, 0.5],
            vec![0.5, 0.0],
        ] {
            assert!(SweepConfig::new(psi.clone(), f.clone(), spec.clone(), bad, vec![]).is_err());
        }
        assert!(
            SweepConfig::new(psi, f, spec, vec![0.5, 0.25], vec![]).is_ok()
        );
    }

    #[test]
    fn solution_error_decreases_to_the_junction_floor() {
        let record = analytic_sweep(127, 0, FamilyKind::Max, None);
        let errs: Vec<f64> = record.rows().iter().map(|r| r.u_err_h10()).collect();
        for pair in errs.windows(2) {
            assert!(pair[1] < pair[0], "not decreasing: {errs:?}");
        }
        // the deflection of the node straddling the contact boundary scales
        // like ρ/√h and floors the error near 1e−3 on this mesh
        assert!(*errs.last().unwrap() < 1.2e-3, "final error {}", errs.last().unwrap());
        // warm starts keep the later solves cheap
        for row in &record.rows()[1..] {
            assert!(row.newton_iters() <= 15, "warm solve took {}", row.newton_iters());
        }
    }

    #[test]
    fn scaled_violation_decays_by_the_expected_factor() {
        let record = analytic_sweep(127, 0, FamilyKind::Max, None);
        let scaled: Vec<f64> = record
            .rows()
            .iter()
            .map(|r| r.scaled_violation_l2())
            .collect();
        // the first step still sits in the √ρ-saturation regime and may rise;
        // from the second step on the decay is strict
        for pair in scaled[1..].windows(2) {
            assert!(pair[1] < pair[0], "not decreasing: {scaled:?}");
        }
        assert!(*scaled.last().unwrap() <= 0.2 * scaled[0]);
    }

    #[test]
    fn multiplier_pairing_vanishes_for_a_positive_direction() {
        // direction d = −Δv with v > 0 on the inactive set
        let (grid, ops, psi, f) = analytic_instance(127);
        let vi = solve_pdas(&ops, &psi, &f).unwrap();
        let d = ops.apply_stiffness(vi.u()).unwrap();
        let d_norm = ops.norm_hminus1(&d).unwrap();
        let spec = FamilySpec::new(FamilyKind::Max, None, None);
        let cfg = SweepConfig::new(psi, f, spec, default_schedule(), vec![d]).unwrap();
        let record = run_sweep(&ops, &cfg).unwrap();
        let pairings: Vec<f64> = record
            .rows()
            .iter()
            .map(|r| r.dirs()[0].xi_alpha())
            .collect();
        for pair in pairings[1..].windows(2) {
            assert!(pair[1].abs() < pair[0].abs(), "not decreasing: {pairings:?}");
        }
        assert!(pairings.last().unwrap().abs() <= 1e-3 * d_norm);
        let _ = grid;
    }

    #[test]
    fn bound_chain_holds_along_the_whole_schedule() {
        let (grid, ops, psi, f) = analytic_instance(63);
        let shifted = ops.neg_laplacian_dual(&psi, 0.5).unwrap();
        let residual_load = f.minus(&shifted).unwrap();
        let dual = ops.norm_hminus1(&residual_load).unwrap();
        let cp = ops.poincare();

        for (kind, reg) in [
            (FamilyKind::Max, None),
            (FamilyKind::SmoothMax, Some(RegKind::HuberGlobal)),
            (FamilyKind::CompMax, None),
        ] {
            let lambda_bar = kind
                .needs_multiplier_shift()
                .then(|| DiscreteField::constant(grid, 8.0));
            let spec = FamilySpec::new(kind, reg, lambda_bar);
            let cfg = SweepConfig::new(
                psi.clone(),
                f.clone(),
                spec.clone(),
                default_schedule(),
                vec![],
            )
            .unwrap();
            let record = run_sweep(&ops, &cfg).unwrap();
            for row in record.rows() {
                let fam = spec.instantiate(grid, row.rho()).unwrap();
                let growth = fam.growth_constant();
                let budget = dual + cp * growth;
                let sqrt_rho = row.rho().sqrt();
                assert!(
                    row.violation_l2() <= (sqrt_rho / 2.0) * budget + 1e-10,
                    "{kind:?} rho={}: violation {} over budget",
                    row.rho(),
                    row.violation_l2()
                );
                assert!(
                    row.penalty_l2() <= budget / (2.0 * sqrt_rho) + growth + 1e-10,
                    "{kind:?} rho={}: penalty {} over budget",
                    row.rho(),
                    row.penalty_l2()
                );
            }
        }
    }

    #[test]
    fn square_integrable_data_gives_the_linear_violation_bound() {
        let (grid, ops, psi, f) = analytic_instance(63);
        let shifted = ops.neg_laplacian_dual(&psi, 0.5).unwrap();
        let residual_density = ops
            .density_from_load(&f.minus(&shifted).unwrap())
            .unwrap();

        for (kind, reg) in [
            (FamilyKind::Max, None),
            (FamilyKind::SmoothMax, Some(RegKind::KwQuadratic)),
        ] {
            let spec = FamilySpec::new(kind, reg, None);
            let cfg = SweepConfig::new(
                psi.clone(),
                f.clone(),
                spec.clone(),
                default_schedule(),
                vec![],
            )
            .unwrap();
            let record = run_sweep(&ops, &cfg).unwrap();
            for row in record.rows() {
                let fam = spec.instantiate(grid, row.rho()).unwrap();
                let density: Vec<f64> = residual_density
                    .values()
                    .iter()
                    .zip(fam.k1())
                    .map(|(r, k1)| r + k1 / row.rho())
                    .collect();
                let density = DiscreteField::from_values(grid, density).unwrap();
                let bound = row.rho() * ops.norm_l2(&density).unwrap();
                assert!(
                    row.violation_l2() <= bound + 1e-10,
                    "{kind:?} rho={}: {} vs {bound}",
                    row.rho(),
                    row.violation_l2()
                );
            }
        }
    }

    #[test]
    fn rate_fit_recovers_synthetic_slopes() {
        let xs = default_schedule();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.sqrt()).collect();
        let fit = fit_rate(&xs, &ys).unwrap();
        assert!((fit.slope - 0.5).abs() <= 1e-12);
        assert!((fit.r_squared - 1.0).abs() <= 1e-12);
        assert_eq!(fit.points_used, xs.len());

        let flat = vec![2.0; xs.len()];
        let fit = fit_rate(&xs, &flat).unwrap();
        assert_eq!(fit.slope, 0.0);
        assert_eq!(fit.r_squared, 1.0);
    }

    #[test]
    fn rate_fit_flags_degenerate_input() {
        assert!(matches!(
            fit_rate(&[0.5, 0.25], &[1.0, 2.0]),
            Err(Error::DegenerateFit(_))
        ));
        // zeros are excluded; too few survivors
        assert!(matches!(
            fit_rate(&[0.5, 0.25, 0.125, 0.0625], &[1.0, 0.0, 0.0, 2.0]),
            Err(Error::DegenerateFit(_))
        ));
        assert!(fit_rate(&[0.5, -0.25, 0.125], &[1.0, 1.0, 1.0]).is_err());
        assert!(fit_rate(&[0.5, 0.25, 0.125], &[1.0, f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn violation_rate_is_near_linear_for_the_plain_family() {
        let (grid, ops, psi, f) = analytic_instance(255);
        let spec = FamilySpec::new(FamilyKind::Max, None, None);
        let schedule: Vec<f64> = (1..=10).map(|k| 0.25f64.powi(k)).collect();
        let cfg = SweepConfig::new(psi, f, spec, schedule, vec![]).unwrap();
        let record = run_sweep(&ops, &cfg).unwrap();
        let xs = record.schedule();
        let ys: Vec<f64> = record.rows().iter().map(|r| r.violation_l2()).collect();
        // the linear rate is asymptotic; the first two schedule points sit in
        // the √ρ regime and would drag the fitted slope down
        let fit = fit_rate(&xs[2..], &ys[2..]).unwrap();
        assert!(fit.slope >= 0.9, "slope {}", fit.slope);
        assert!(fit.r_squared >= 0.98, "r² {}", fit.r_squared);
        let _ = grid;
    }

    #[test]
    fn limit_measure_recovers_the_reference_sets() {
        let record = analytic_sweep(127, 0, FamilyKind::Max, None);
        let est = limit_measure_estimate(&record, &ThresholdRule::default()).unwrap();
        assert!(est.ambiguous.is_empty(), "ambiguous nodes {:?}", est.ambiguous);
        assert_eq!(est.measure.pinned_nodes(), record.strictly_active());
        for &i in record.inactive() {
            assert_eq!(est.measure.weights()[i], 0.0);
        }
    }

    #[test]
    fn limit_measure_solves_match_the_final_derivative() {
        let record = analytic_sweep(127, 3, FamilyKind::Max, None);
        let est = limit_measure_estimate(&record, &ThresholdRule::default()).unwrap();
        let (_, ops, psi, f) = analytic_instance(127);
        let _ = (psi, f);
        for (j, cell) in record.final_row().dirs().iter().enumerate() {
            // re-derive the direction: K α known only through the record, so
            // rebuild d from the stored α and the final weights
            let _ = j;
            let grid = cell.alpha().grid();
            let n = grid.node_count();
            let mut d_vals = vec![0.0; n];
            ops.stiffness().matvec(cell.alpha().values(), &mut d_vals);
            let w = record.final_row().weights().weights();
            for i in 0..n {
                d_vals[i] += grid.cell_volume() * w[i] * cell.alpha().values()[i];
            }
            let d = DualVector::from_values(grid, d_vals).unwrap();
            let limit = solve_weighted(&ops, &est.measure, &d).unwrap();
            let gap = limit.minus(cell.alpha()).unwrap();
            let rel = ops.norm_l2(&gap).unwrap() / ops.norm_hminus1(&d).unwrap();
            assert!(rel <= 1e-2, "direction gap {rel}");
        }
    }

    #[test]
    fn unconstrained_instance_yields_the_zero_measure() {
        let (grid, ops) = build_grid(Extent::unit_interval(), 31).unwrap();
        let f = ops.load_constant(-2.0);
        let psi = DiscreteField::constant(grid, 0.25);
        let spec = FamilySpec::new(FamilyKind::Max, None, None);
        let d = ops.load_constant(1.0);
        let cfg =
            SweepConfig::new(psi, f, spec, default_schedule(), vec![d.clone()]).unwrap();
        let record = run_sweep(&ops, &cfg).unwrap();
        let est = limit_measure_estimate(&record, &ThresholdRule::default()).unwrap();
        assert!(est.ambiguous.is_empty());
        assert!(est.measure.pinned_nodes().is_empty());
        assert!(est.measure.weights().iter().all(|&w| w == 0.0));
        let alpha = solve_weighted(&ops, &est.measure, &d).unwrap();
        assert_eq!(alpha.values(), ops.solve_poisson(&d).unwrap().values());
    }

    #[test]
    fn limit_conditions_are_met_on_the_analytic_instance() {
        let record = analytic_sweep(127, 3, FamilyKind::Max, None);
        for (j, cond) in limit_condition_report(&record).iter().enumerate() {
            assert!(cond.worst() <= 1e-3, "direction {j}: {cond:?}");
        }
        // biactive-free instance: values on the strictly-active set vanish
        let xs = record.schedule();
        let ys: Vec<f64> = record
            .rows()
            .iter()
            .map(|row| {
                row.dirs()[0]
                    .alpha()
                    .values()
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| record.strictly_active().contains(i))
                    .map(|(_, a)| a.abs())
                    .fold(0.0f64, f64::max)
            })
            .collect();
        let fit = fit_rate(&xs, &ys).unwrap();
        assert!(fit.slope > 0.0, "strict-active sup should decay, slope {}", fit.slope);
    }

    #[test]
    fn zero_direction_reports_zeros() {
        let (grid, ops, psi, f) = analytic_instance(63);
        let spec = FamilySpec::new(FamilyKind::Max, None, None);
        let cfg = SweepConfig::new(
            psi,
            f,
            spec,
            vec![0.25, 0.0625],
            vec![DualVector::zeros(grid)],
        )
        .unwrap();
        let record = run_sweep(&ops, &cfg).unwrap();
        let report = limit_condition_report(&record);
        assert_eq!(report[0].worst(), 0.0);
        assert_eq!(record.final_row().dirs()[0].alpha_h10(), 0.0);
    }

    #[test]
    fn alpha_steps_are_reported_and_mostly_shrink() {
        let record = analytic_sweep(127, 2, FamilyKind::Max, None);
        for j in 0..2 {
            let steps: Vec<f64> = record.rows()[1..]
                .iter()
                .map(|r| r.dirs()[j].alpha_step_l2().unwrap())
                .collect();
            assert!(steps.iter().all(|s| s.is_finite() && *s > 0.0));
            // the linearized states settle down the schedule, but the node
            // straddling the contact boundary flips branches when ρ crosses
            // h² and bumps the step there — the diagnostics are a report,
            // not a monotone guarantee, so only the trend is checked
            for pair in steps[..steps.len() - 1].windows(2) {
                assert!(pair[1] <= pair[0] * 1.05, "steps not shrinking: {steps:?}");
            }
            assert!(
                *steps.last().unwrap() <= 0.1 * steps[0],
                "no overall decay: {steps:?}"
            );
        }
        assert!(record.rows()[0].dirs()[0].alpha_step_l2().is_none());
    }

    #[test]
    fn failures_are_tagged_with_the_schedule_point() {
        // zero data with the kinked family: every node sits on the kink, so
        // measure extraction fails at the very first schedule value
        let (grid, ops) = build_grid(Extent::unit_interval(), 15).unwrap();
        let psi = DiscreteField::zeros(grid);
        let f = DualVector::zeros(grid);
        let spec = FamilySpec::new(FamilyKind::Max, None, None);
        let cfg = SweepConfig::new(psi, f, spec, vec![0.5, 0.25], vec![]).unwrap();
        match run_sweep(&ops, &cfg) {
            Err(Error::Sweep { rho, source }) => {
                assert_eq!(rho, 0.5);
                assert!(matches!(*source, Error::NotGateaux { .. }));
            }
            other => panic!("expected a tagged sweep failure, got {other:?}"),
        }
    }

    #[test]
    fn csv_rendering_is_stable() {
        let record = analytic_sweep(31, 2, FamilyKind::Max, None);
        let csv = to_csv(&record);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let body: Vec<&str> = lines.collect();
        assert_eq!(body.len(), record.rows().len() * 2);
        let cols = CSV_HEADER.split(',').count();
        for line in &body {
            assert_eq!(line.split(',').count(), cols);
        }
        // first row has no previous α, hence an empty step cell
        let first_cells: Vec<&str> = body[0].split(',').collect();
        assert_eq!(first_cells[13], "");
        let second_rho_cells: Vec<&str> = body[2].split(',').collect();
        assert_ne!(second_rho_cells[13], "");
        // deterministic
        assert_eq!(csv, to_csv(&record));
    }

    #[test]
    fn record_rate_summaries_cover_the_standard_metrics() {
        let record = analytic_sweep(63, 0, FamilyKind::Max, None);
        let summaries = fit_record_rates(&record);
        let names: Vec<&str> = summaries.iter().map(|s| s.metric.as_str()).collect();
        assert!(names.contains(&"u_err_h10"));
        assert!(names.contains(&"violation_l2"));
        let violation = summaries
            .iter()
            .find(|s| s.metric == "violation_l2")
            .unwrap();
        assert!(violation.decreasing);
        assert!(violation.slope > 0.5);
    }
}

