//! Experiment config files: flat `key = value` lines with dotted sections.
//!
//! ```text
//! # penalized solve on the analytic bump instance
//! command       = solve
//! grid.n        = 255
//! psi.constant  = 0.5
//! f.constant    = 8
//! family.kind   = m
//! family.rho    = 0.0625
//! ```
//!
//! Parsing is strict: every key must be known to the schema, spelled
//! lowercase, and appropriate for the chosen command; duplicates and
//! leftovers are errors that name the key.  All range checks happen here so
//! a bad config exits with 2 before any factorization starts.

use std::collections::BTreeMap;
use std::path::PathBuf;

use penlab_core::{default_schedule, Extent, FamilyKind, RegKind};

use crate::error::{CliError, Result};
use crate::expr::Polynomial;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Sweep,
    Derivative,
    Oc,
    Verify,
}

impl Command {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "solve" => Ok(Command::Solve),
            "sweep" => Ok(Command::Sweep),
            "derivative" => Ok(Command::Derivative),
            "oc" => Ok(Command::Oc),
            "verify" => Ok(Command::Verify),
            other => Err(CliError::validation(format!(
                "command: unknown command '{other}' (expected solve, sweep, \
                 derivative, oc, or verify)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Sweep => "sweep",
            Command::Derivative => "derivative",
            Command::Oc => "oc",
            Command::Verify => "verify",
        }
    }
}

/// Domain and resolution.  `n` counts interior nodes per axis.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub extent: Extent,
    pub n: usize,
    /// Human-readable form for CSV headers ("interval [0, 1]").
    pub label: String,
}

/// How a nodal field (or dual density) is specified.
#[derive(Debug, Clone)]
pub enum FieldSpec {
    Constant(f64),
    Expr(Polynomial),
    File(PathBuf),
}

/// One probe direction for sweeps and derivative solves.
#[derive(Debug, Clone)]
pub enum DirectionSpec {
    Field(FieldSpec),
    /// I.i.d. uniform nodal density in `[-amplitude, amplitude]`, drawn from
    /// the run's seeded generator.
    Random { amplitude: f64 },
}

#[derive(Debug, Clone)]
pub struct FamilyConfig {
    pub kind: FamilyKind,
    pub reg: Option<RegKind>,
    pub rho: Option<f64>,
    pub schedule: Vec<f64>,
    pub lambda_bar: Option<FieldSpec>,
}

#[derive(Debug, Clone)]
pub struct OcConfig {
    pub target: FieldSpec,
    pub nu: f64,
    pub lower: Option<FieldSpec>,
    pub upper: Option<FieldSpec>,
    pub start: Option<FieldSpec>,
    pub tol_inner: Option<f64>,
    pub max_inner: Option<usize>,
    pub solver_tol: Option<f64>,
}

/// A fully validated experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub command: Command,
    pub grid: Option<GridSpec>,
    pub psi: Option<FieldSpec>,
    pub f: Option<FieldSpec>,
    pub family: Option<FamilyConfig>,
    pub directions: Vec<DirectionSpec>,
    pub solver_tol: f64,
    pub oc: Option<OcConfig>,
    pub seed: u64,
    pub out_csv: Option<String>,
    pub out_json: Option<String>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut reader = Reader::parse(text)?;
        let command = Command::parse(&reader.require("command")?)?;

        let seed = reader.take_u64("seed")?.unwrap_or(0);
        let out_csv = reader.take("out.csv");
        let out_json = reader.take("out.json");
        let solver_tol = reader.take_positive("solver.tol")?.unwrap_or(1e-10);

        let grid = take_grid(&mut reader)?;
        let psi = take_field(&mut reader, "psi")?;
        let f = take_field(&mut reader, "f")?;
        let family = take_family(&mut reader, command)?;
        let directions = take_directions(&mut reader)?;
        let oc = take_oc(&mut reader)?;

        reader.finish()?;

        let config = ExperimentConfig {
            command,
            grid,
            psi,
            f,
            family,
            directions,
            solver_tol,
            oc,
            seed,
            out_csv,
            out_json,
        };
        config.check_command_shape()?;
        Ok(config)
    }

    /// Cross-field requirements per command.
    fn check_command_shape(&self) -> Result<()> {
        let need = |present: bool, key: &str| {
            if present {
                Ok(())
            } else {
                Err(CliError::validation(format!(
                    "{key}: required by command {}",
                    self.command.name()
                )))
            }
        };
        let forbid = |absent: bool, key: &str| {
            if absent {
                Ok(())
            } else {
                Err(CliError::validation(format!(
                    "{key}: not used by command {}",
                    self.command.name()
                )))
            }
        };
        match self.command {
            Command::Verify => {
                forbid(self.grid.is_none(), "grid.n")?;
                forbid(self.psi.is_none(), "psi")?;
                forbid(self.f.is_none(), "f")?;
                forbid(self.family.is_none(), "family.kind")?;
                forbid(self.directions.is_empty(), "direction.1")?;
                forbid(self.oc.is_none(), "oc.target")?;
            }
            Command::Solve | Command::Derivative => {
                need(self.grid.is_some(), "grid.n")?;
                need(self.psi.is_some(), "psi")?;
                need(self.f.is_some(), "f")?;
                let fam = self.family.as_ref().ok_or_else(|| {
                    CliError::validation("family.kind: required by this command")
                })?;
                need(fam.rho.is_some(), "family.rho")?;
                forbid(self.oc.is_none(), "oc.target")?;
                if self.command == Command::Derivative {
                    need(!self.directions.is_empty(), "direction.1")?;
                } else {
                    forbid(self.directions.is_empty(), "direction.1")?;
                }
            }
            Command::Sweep => {
                need(self.grid.is_some(), "grid.n")?;
                need(self.psi.is_some(), "psi")?;
                need(self.f.is_some(), "f")?;
                need(self.family.is_some(), "family.kind")?;
                forbid(self.oc.is_none(), "oc.target")?;
            }
            Command::Oc => {
                need(self.grid.is_some(), "grid.n")?;
                need(self.psi.is_some(), "psi")?;
                forbid(self.f.is_none(), "f")?;
                forbid(self.directions.is_empty(), "direction.1")?;
                let fam = self.family.as_ref().ok_or_else(|| {
                    CliError::validation("family.kind: required by command oc")
                })?;
                if !fam.kind.needs_regularization() {
                    return Err(CliError::validation(format!(
                        "family.kind: command oc needs a smoothed family, got '{}'",
                        fam.kind.name()
                    )));
                }
                need(self.oc.is_some(), "oc.target")?;
            }
        }
        Ok(())
    }
}

/// The raw `key = value` map with take-and-check access.  Whatever is left
/// after the schema has claimed its keys is unknown and rejected.
struct Reader {
    map: BTreeMap<String, String>,
}

impl Reader {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::validation(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    idx + 1
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(CliError::validation(format!("line {}: empty key", idx + 1)));
            }
            if map.insert(key.clone(), value).is_some() {
                return Err(CliError::validation(format!(
                    "{key}: duplicate key (line {})",
                    idx + 1
                )));
            }
        }
        Ok(Reader { map })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn require(&mut self, key: &str) -> Result<String> {
        self.take(key)
            .ok_or_else(|| CliError::validation(format!("{key}: missing required key")))
    }

    fn take_f64(&mut self, key: &str) -> Result<Option<f64>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => {
                let parsed = v.parse::<f64>().map_err(|_| {
                    CliError::validation(format!("{key}: expected a number, got '{v}'"))
                })?;
                if !parsed.is_finite() {
                    return Err(CliError::validation(format!("{key}: must be finite")));
                }
                Ok(Some(parsed))
            }
        }
    }

    fn take_positive(&mut self, key: &str) -> Result<Option<f64>> {
        match self.take_f64(key)? {
            Some(v) if v <= 0.0 => Err(CliError::validation(format!(
                "{key}: must be positive, got {v}"
            ))),
            other => Ok(other),
        }
    }

    fn take_u64(&mut self, key: &str) -> Result<Option<u64>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v.parse::<u64>().map(Some).map_err(|_| {
                CliError::validation(format!(
                    "{key}: expected a non-negative integer, got '{v}'"
                ))
            }),
        }
    }

    fn take_usize(&mut self, key: &str) -> Result<Option<usize>> {
        Ok(self.take_u64(key)?.map(|v| v as usize))
    }

    /// All remaining keys are unknown to the schema.
    fn finish(self) -> Result<()> {
        if let Some((key, _)) = self.map.into_iter().next() {
            return Err(CliError::validation(format!(
                "{key}: unknown config key"
            )));
        }
        Ok(())
    }
}

fn take_grid(reader: &mut Reader) -> Result<Option<GridSpec>> {
    let extent_word = reader.take("grid.extent");
    let n = reader.take_usize("grid.n")?;
    let a = reader.take_f64("grid.a")?;
    let b = reader.take_f64("grid.b")?;
    let x0 = reader.take_f64("grid.x0")?;
    let x1 = reader.take_f64("grid.x1")?;
    let y0 = reader.take_f64("grid.y0")?;
    let y1 = reader.take_f64("grid.y1")?;

    let any_given = extent_word.is_some()
        || n.is_some()
        || a.is_some()
        || b.is_some()
        || x0.is_some()
        || x1.is_some()
        || y0.is_some()
        || y1.is_some();
    if !any_given {
        return Ok(None);
    }
    let n = n.ok_or_else(|| CliError::validation("grid.n: missing required key"))?;
    if n == 0 {
        return Err(CliError::validation("grid.n: must be at least 1"));
    }

    let word = extent_word.as_deref().unwrap_or("interval");
    match word {
        "interval" => {
            for (key, given) in [
                ("grid.x0", x0.is_some()),
                ("grid.x1", x1.is_some()),
                ("grid.y0", y0.is_some()),
                ("grid.y1", y1.is_some()),
            ] {
                if given {
                    return Err(CliError::validation(format!(
                        "{key}: only valid with grid.extent = square"
                    )));
                }
            }
            let a = a.unwrap_or(0.0);
            let b = b.unwrap_or(1.0);
            if !(a < b) {
                return Err(CliError::validation(format!(
                    "grid.b: interval needs a < b, got [{a}, {b}]"
                )));
            }
            Ok(Some(GridSpec {
                extent: Extent::interval(a, b),
                n,
                label: format!("interval [{a}, {b}]"),
            }))
        }
        "square" => {
            for (key, given) in [("grid.a", a.is_some()), ("grid.b", b.is_some())] {
                if given {
                    return Err(CliError::validation(format!(
                        "{key}: only valid with grid.extent = interval"
                    )));
                }
            }
            let x0 = x0.unwrap_or(0.0);
            let x1 = x1.unwrap_or(1.0);
            let y0 = y0.unwrap_or(0.0);
            let y1 = y1.unwrap_or(1.0);
            if !(x0 < x1) || !(y0 < y1) {
                return Err(CliError::validation(
                    "grid.x1: square needs x0 < x1 and y0 < y1",
                ));
            }
            let side_x = x1 - x0;
            let side_y = y1 - y0;
            if (side_x - side_y).abs() > 1e-12 * side_x.max(side_y) {
                return Err(CliError::validation(format!(
                    "grid.y1: square sides must match, got {side_x} by {side_y}"
                )));
            }
            Ok(Some(GridSpec {
                extent: Extent::rect((x0, x1), (y0, y1)),
                n,
                label: format!("square [{x0}, {x1}] x [{y0}, {y1}]"),
            }))
        }
        other => Err(CliError::validation(format!(
            "grid.extent: unknown extent '{other}' (expected interval or square)"
        ))),
    }
}

/// Claim `prefix.constant | prefix.expr | prefix.file`; exactly one may be
/// present.
fn take_field(reader: &mut Reader, prefix: &str) -> Result<Option<FieldSpec>> {
    let constant_key = format!("{prefix}.constant");
    let expr_key = format!("{prefix}.expr");
    let file_key = format!("{prefix}.file");
    let constant = reader.take_f64(&constant_key)?;
    let expr = reader.take(&expr_key);
    let file = reader.take(&file_key);

    let given = constant.is_some() as u8 + expr.is_some() as u8 + file.is_some() as u8;
    if given > 1 {
        return Err(CliError::validation(format!(
            "{prefix}: give exactly one of {constant_key}, {expr_key}, {file_key}"
        )));
    }
    if let Some(v) = constant {
        return Ok(Some(FieldSpec::Constant(v)));
    }
    if let Some(text) = expr {
        return Ok(Some(FieldSpec::Expr(Polynomial::parse(&text, &expr_key)?)));
    }
    if let Some(path) = file {
        return Ok(Some(FieldSpec::File(PathBuf::from(path))));
    }
    Ok(None)
}

fn take_family(reader: &mut Reader, command: Command) -> Result<Option<FamilyConfig>> {
    let kind_word = reader.take("family.kind");
    let reg_word = reader.take("family.reg");
    let rho = reader.take("family.rho");
    let schedule_word = reader.take("family.rho_schedule");
    let lambda_bar = take_field(reader, "family.lambda_bar")?;

    let Some(kind_word) = kind_word else {
        let stray = [
            ("family.reg", reg_word.is_some()),
            ("family.rho", rho.is_some()),
            ("family.rho_schedule", schedule_word.is_some()),
            ("family.lambda_bar", lambda_bar.is_some()),
        ];
        if let Some((key, _)) = stray.iter().find(|(_, given)| *given) {
            return Err(CliError::validation(format!(
                "{key}: family.kind is missing"
            )));
        }
        return Ok(None);
    };

    let kind = FamilyKind::parse(&kind_word).map_err(|_| {
        CliError::validation(format!(
            "family.kind: unknown kind '{kind_word}' (expected m, c, sm, sc, or sc_tilde)"
        ))
    })?;

    let reg = match (kind.needs_regularization(), reg_word) {
        (true, Some(word)) => Some(RegKind::parse(&word).map_err(|_| {
            CliError::validation(format!(
                "family.reg: unknown regularization '{word}' (expected huber_global, \
                 kw_cubic, local, or kw_quadratic)"
            ))
        })?),
        (true, None) => {
            return Err(CliError::validation(format!(
                "family.reg: required for smoothed kind '{}'",
                kind.name()
            )));
        }
        (false, Some(_)) => {
            return Err(CliError::validation(format!(
                "family.reg: kind '{}' is not regularized",
                kind.name()
            )));
        }
        (false, None) => None,
    };

    if kind.needs_multiplier_shift() && lambda_bar.is_none() {
        return Err(CliError::validation(format!(
            "family.lambda_bar: required for composed kind '{}'",
            kind.name()
        )));
    }
    if !kind.needs_multiplier_shift() && lambda_bar.is_some() {
        return Err(CliError::validation(format!(
            "family.lambda_bar: kind '{}' takes no multiplier shift",
            kind.name()
        )));
    }

    // A single rho drives solve/derivative; a schedule drives sweep/oc.
    let wants_schedule = matches!(command, Command::Sweep | Command::Oc);
    if wants_schedule && rho.is_some() {
        return Err(CliError::validation(format!(
            "family.rho: command {} takes family.rho_schedule instead",
            command.name()
        )));
    }
    if !wants_schedule && schedule_word.is_some() {
        return Err(CliError::validation(format!(
            "family.rho_schedule: command {} takes a single family.rho",
            command.name()
        )));
    }

    let rho = match rho {
        Some(v) => Some(parse_rho("family.rho", &v)?),
        None => None,
    };
    let schedule = match schedule_word {
        Some(list) => {
            let values: Vec<f64> = list
                .split(',')
                .map(|part| parse_rho("family.rho_schedule", part.trim()))
                .collect::<Result<_>>()?;
            if values.is_empty() {
                return Err(CliError::validation("family.rho_schedule: empty schedule"));
            }
            for pair in values.windows(2) {
                if !(pair[1] < pair[0]) {
                    return Err(CliError::validation(format!(
                        "family.rho_schedule: must decrease strictly, got {} after {}",
                        pair[1], pair[0]
                    )));
                }
            }
            values
        }
        None => default_schedule(),
    };

    Ok(Some(FamilyConfig {
        kind,
        reg,
        rho,
        schedule,
        lambda_bar,
    }))
}

fn parse_rho(key: &str, text: &str) -> Result<f64> {
    let v = text
        .parse::<f64>()
        .map_err(|_| CliError::validation(format!("{key}: expected a number, got '{text}'")))?;
    if !(v.is_finite() && v > 0.0 && v <= 1.0) {
        return Err(CliError::validation(format!(
            "{key}: must lie in (0, 1], got {v}"
        )));
    }
    Ok(v)
}

fn take_directions(reader: &mut Reader) -> Result<Vec<DirectionSpec>> {
    // Collect the direction indices present before claiming their keys.
    let mut indices: Vec<usize> = Vec::new();
    for key in reader.map.keys() {
        if let Some(rest) = key.strip_prefix("direction.") {
            let idx_part = rest.split('.').next().unwrap_or(rest);
            let idx = idx_part.parse::<usize>().map_err(|_| {
                CliError::validation(format!(
                    "{key}: direction keys look like direction.1.expr"
                ))
            })?;
            if !indices.contains(&idx) {
                indices.push(idx);
            }
        }
    }
    indices.sort_unstable();
    if indices.is_empty() {
        return Ok(Vec::new());
    }
    if indices[0] != 1 || indices[indices.len() - 1] != indices.len() {
        return Err(CliError::validation(format!(
            "direction.{}: direction indices must be 1..{} with no gaps",
            indices[indices.len() - 1],
            indices.len()
        )));
    }

    let mut specs = Vec::with_capacity(indices.len());
    for idx in indices {
        let prefix = format!("direction.{idx}");
        let random_key = format!("{prefix}.random");
        let random = reader.take_positive(&random_key)?;
        let field = take_field(reader, &prefix)?;
        match (random, field) {
            (Some(_), Some(_)) => {
                return Err(CliError::validation(format!(
                    "{prefix}: give exactly one of constant, expr, file, random"
                )));
            }
            (Some(amplitude), None) => specs.push(DirectionSpec::Random { amplitude }),
            (None, Some(field)) => specs.push(DirectionSpec::Field(field)),
            (None, None) => {
                return Err(CliError::validation(format!(
                    "{prefix}: give one of {prefix}.constant, {prefix}.expr, \
                     {prefix}.file, {prefix}.random"
                )));
            }
        }
    }
    Ok(specs)
}

fn take_oc(reader: &mut Reader) -> Result<Option<OcConfig>> {
    let target = take_field(reader, "oc.target")?;
    let nu = reader.take_positive("oc.nu")?;
    let lower = take_field(reader, "oc.lower")?;
    let upper = take_field(reader, "oc.upper")?;
    let start = take_field(reader, "oc.start")?;
    let tol_inner = reader.take_positive("oc.tol_inner")?;
    let max_inner = reader.take_usize("oc.max_inner")?;
    let solver_tol = reader.take_positive("oc.solver_tol")?;

    let any_given = target.is_some()
        || nu.is_some()
        || lower.is_some()
        || upper.is_some()
        || start.is_some()
        || tol_inner.is_some()
        || max_inner.is_some()
        || solver_tol.is_some();
    if !any_given {
        return Ok(None);
    }
    let target =
        target.ok_or_else(|| CliError::validation("oc.target: missing required key"))?;
    let nu = nu.ok_or_else(|| CliError::validation("oc.nu: missing required key"))?;
    Ok(Some(OcConfig {
        target,
        nu,
        lower,
        upper,
        start,
        tol_inner,
        max_inner,
        solver_tol,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(text)
    }

    const SOLVE: &str = "command = solve\n\
                         grid.n = 31\n\
                         psi.constant = 0.5\n\
                         f.constant = 8\n\
                         family.kind = m\n\
                         family.rho = 0.25\n";

    #[test]
    fn minimal_solve_config_parses() {
        let cfg = parse(SOLVE).unwrap();
        assert_eq!(cfg.command, Command::Solve);
        let grid = cfg.grid.unwrap();
        assert_eq!(grid.n, 31);
        assert_eq!(grid.extent.dim(), 1);
        let fam = cfg.family.unwrap();
        assert_eq!(fam.rho, Some(0.25));
        assert_eq!(cfg.seed, 0);
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let text = format!("{SOLVE}family.rh = 0.1\n");
        let err = parse(&text).unwrap_err();
        assert!(err.to_string().contains("family.rh"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn negative_rho_names_the_field() {
        let text = SOLVE.replace("family.rho = 0.25", "family.rho = -1");
        let err = parse(&text).unwrap_err();
        assert!(err.to_string().contains("family.rho"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let text = format!("{SOLVE}family.rho = 0.5\n");
        let err = parse(&text).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn conflicting_field_variants_are_rejected() {
        let text = format!("{SOLVE}psi.expr = x\n");
        let err = parse(&text).unwrap_err();
        assert!(err.to_string().contains("psi"));
    }

    #[test]
    fn smooth_kind_requires_regularization() {
        let text = SOLVE.replace("family.kind = m", "family.kind = sm");
        let err = parse(&text).unwrap_err();
        assert!(err.to_string().contains("family.reg"));

        let ok = SOLVE.replace("family.kind = m", "family.kind = sm\nfamily.reg = huber_global");
        assert!(parse(&ok).is_ok());
    }

    #[test]
    fn composed_kind_requires_shift() {
        let text = SOLVE.replace("family.kind = m", "family.kind = c");
        let err = parse(&text).unwrap_err();
        assert!(err.to_string().contains("family.lambda_bar"));

        let ok = SOLVE.replace(
            "family.kind = m",
            "family.kind = c\nfamily.lambda_bar.constant = 8",
        );
        assert!(parse(&ok).is_ok());
    }

    #[test]
    fn sweep_takes_a_schedule_not_a_rho() {
        let text = SOLVE.replace("command = solve", "command = sweep");
        let err = parse(&text).unwrap_err();
        assert!(err.to_string().contains("family.rho"));

        let ok = text.replace("family.rho = 0.25", "family.rho_schedule = 0.25, 0.0625");
        let cfg = parse(&ok).unwrap();
        assert_eq!(cfg.family.unwrap().schedule, vec![0.25, 0.0625]);
    }

    #[test]
    fn sweep_defaults_to_the_standard_schedule() {
        let text = SOLVE
            .replace("command = solve", "command = sweep")
            .replace("family.rho = 0.25\n", "");
        let cfg = parse(&text).unwrap();
        assert_eq!(cfg.family.unwrap().schedule, default_schedule());
    }

    #[test]
    fn non_decreasing_schedule_is_rejected() {
        let text = SOLVE
            .replace("command = solve", "command = sweep")
            .replace("family.rho = 0.25", "family.rho_schedule = 0.25, 0.25");
        let err = parse(&text).unwrap_err();
        assert!(err.to_string().contains("family.rho_schedule"));
    }

    #[test]
    fn directions_must_be_contiguous_from_one() {
        let text = format!(
            "{}direction.2.constant = 1\n",
            SOLVE.replace("command = solve", "command = derivative")
        );
        let err = parse(&text).unwrap_err();
        assert!(err.to_string().contains("direction"));

        let ok = format!(
            "{}direction.1.expr = x - x^2\ndirection.2.random = 0.5\n",
            SOLVE.replace("command = solve", "command = derivative")
        );
        let cfg = parse(&ok).unwrap();
        assert_eq!(cfg.directions.len(), 2);
        assert!(matches!(
            cfg.directions[1],
            DirectionSpec::Random { amplitude } if amplitude == 0.5
        ));
    }

    #[test]
    fn verify_wants_a_bare_config() {
        assert!(parse("command = verify\n").is_ok());
        let err = parse("command = verify\ngrid.n = 15\n").unwrap_err();
        assert!(err.to_string().contains("grid.n"));
    }

    #[test]
    fn oc_requires_target_nu_and_smooth_family() {
        let base = "command = oc\n\
                    grid.n = 15\n\
                    psi.constant = 0.5\n\
                    family.kind = sm\n\
                    family.reg = huber_global\n\
                    oc.target.expr = x - x^2\n\
                    oc.nu = 0.01\n";
        assert!(parse(base).is_ok());

        let err = parse(&base.replace("oc.nu = 0.01\n", "")).unwrap_err();
        assert!(err.to_string().contains("oc.nu"));

        let err = parse(
            &base
                .replace("family.kind = sm\nfamily.reg = huber_global\n", "family.kind = m\n"),
        )
        .unwrap_err();
        assert!(err.to_string().contains("family.kind"));
    }

    #[test]
    fn square_grids_check_side_lengths() {
        let text = "command = solve\n\
                    grid.extent = square\n\
                    grid.n = 7\n\
                    grid.x1 = 2\n\
                    psi.constant = 0.5\n\
                    f.constant = 8\n\
                    family.kind = m\n\
                    family.rho = 0.25\n";
        let err = parse(text).unwrap_err();
        assert!(err.to_string().contains("grid.y1"));
    }
}
