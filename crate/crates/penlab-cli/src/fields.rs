//! Turning config field specs into nodal data, plus nodal CSV round-trips.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use penlab_core::{DiscreteField, DualVector, EllipticOperators, Extent, Grid};

use crate::config::{DirectionSpec, FieldSpec};
use crate::error::{CliError, Result};

/// Resolve a primal field spec (obstacle, target, bound, start iterate).
pub fn resolve_field(
    spec: &FieldSpec,
    grid: Grid,
    key: &str,
) -> Result<DiscreteField> {
    match spec {
        FieldSpec::Constant(v) => Ok(DiscreteField::constant(grid, *v)),
        FieldSpec::Expr(poly) => {
            if poly.uses_y() && grid.dim() == 1 {
                return Err(CliError::validation(format!(
                    "{key}: expression uses y but the grid is an interval"
                )));
            }
            Ok(DiscreteField::from_fn(grid, |x, y| poly.eval(x, y)))
        }
        FieldSpec::File(path) => read_nodal_csv(path, grid, key),
    }
}

/// Resolve a density spec into a load functional (mass matrix applied).
pub fn resolve_density(
    spec: &FieldSpec,
    ops: &EllipticOperators,
    key: &str,
) -> Result<DualVector> {
    match spec {
        FieldSpec::Constant(v) => Ok(ops.load_constant(*v)),
        _ => {
            let density = resolve_field(spec, ops.grid(), key)?;
            Ok(ops.load_from_density(&density)?)
        }
    }
}

/// Resolve the probe directions, in index order.  Random directions draw
/// i.i.d. uniform nodal densities from a stream keyed by (seed, index), so
/// a direction's data does not depend on what the other directions are.
pub fn resolve_directions(
    specs: &[DirectionSpec],
    ops: &EllipticOperators,
    seed: u64,
) -> Result<Vec<DualVector>> {
    specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let key = format!("direction.{}", i + 1);
            match spec {
                DirectionSpec::Field(field) => resolve_density(field, ops, &key),
                DirectionSpec::Random { amplitude } => {
                    let mut rng = direction_rng(seed, i);
                    let grid = ops.grid();
                    let values: Vec<f64> = (0..grid.node_count())
                        .map(|_| rng.gen_range(-amplitude..*amplitude))
                        .collect();
                    let density = DiscreteField::from_values(grid, values)?;
                    Ok(ops.load_from_density(&density)?)
                }
            }
        })
        .collect()
}

fn direction_rng(seed: u64, index: usize) -> ChaCha8Rng {
    // Golden-ratio stride keeps nearby (seed, index) pairs on distant
    // streams; the exact constant only has to stay fixed for reproducibility.
    let stream = seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(index as u64 + 1);
    ChaCha8Rng::seed_from_u64(stream)
}

/// Comma-free grid tag for nodal CSV headers, e.g. `interval 0..1 nodes=255`.
pub fn grid_csv_tag(grid: Grid) -> String {
    match grid.extent() {
        Extent::Interval { a, b } => format!("interval {a}..{b} nodes={}", grid.node_count()),
        Extent::Rect { x0, x1, y0, y1 } => format!(
            "square {x0}..{x1} x {y0}..{y1} nodes={}",
            grid.node_count()
        ),
    }
}

/// Nodal fields travel as single-column CSV: a header row naming the field
/// and its grid, then one value per interior node in node order.
pub fn nodal_csv(name: &str, field: &DiscreteField) -> String {
    let mut out = String::with_capacity(26 * (field.values().len() + 1));
    out.push_str(&format!("{name} @ {}\n", grid_csv_tag(field.grid())));
    for v in field.values() {
        out.push_str(&format!("{v:.16e}\n"));
    }
    out
}

fn read_nodal_csv(path: &Path, grid: Grid, key: &str) -> Result<DiscreteField> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::validation(format!("{key}: cannot read '{}': {e}", path.display()))
    })?;
    let mut lines = text.lines();
    let Some(_header) = lines.next() else {
        return Err(CliError::validation(format!(
            "{key}: '{}' is empty, expected a header row and one value per node",
            path.display()
        )));
    };
    let mut values = Vec::with_capacity(grid.node_count());
    for (idx, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v = line.parse::<f64>().map_err(|_| {
            CliError::validation(format!(
                "{key}: '{}' line {}: expected a number, got '{line}'",
                path.display(),
                idx + 2
            ))
        })?;
        values.push(v);
    }
    if values.len() != grid.node_count() {
        return Err(CliError::validation(format!(
            "{key}: '{}' has {} values but the grid has {} nodes",
            path.display(),
            values.len(),
            grid.node_count()
        )));
    }
    Ok(DiscreteField::from_values(grid, values)?)
}
