//! Penalty families for the unilateral constraint `u ≤ ψ`.
//!
//! A family assigns to each node a nondecreasing convex scalar function
//! `λ(x, ·)` that vanishes on `(-∞, k0(x)]` and equals `(r + j(x))/ρ` on
//! `[k1(x), ∞)`.  The five kinds differ in how the transition between the
//! two branches looks:
//!
//! * `m`  — plain max penalty `r⁺/ρ` (kink at 0);
//! * `c`  — max penalty shifted by a multiplier estimate,
//!   `(ρ λ̄ + r)⁺/ρ` (kink at `-ρ λ̄`);
//! * `sm` — smoothed max `m_ρ(r)/ρ` for a C¹ profile `m_ρ`;
//! * `sc` — smoothed shifted max `m_ρ(ρ λ̄ + r)/ρ`;
//! * `sc_tilde` — like `sc` but with the profile rescaled first,
//!   `m(r) := ρ · m̃(r/ρ)`, so a fixed-width profile narrows with ρ.
//!
//! Four C¹ profiles ship with the crate; see [`RegKind`].  All of them are
//! piecewise polynomial, vanish left of `θ`, and match `r + l` right of `Θ`.

use crate::error::{Error, Result};
use crate::grid::{DiscreteField, Grid};
use serde::Serialize;

/// The shipped C¹ regularizations of `max(0, ·)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum RegKind {
    /// Quadratic blend on `(0, ρ)`, linear branch offset `-ρ/2`.
    HuberGlobal,
    /// Cubic-times-linear blend on `(-ρ/2, ρ/2)`; C² at the joints.
    KwCubic,
    /// Quadratic blend on `(-ρ, ρ)` centred at the kink.
    Local,
    /// Quadratic blend on `(-ρ/2, ρ/2)`.
    KwQuadratic,
}

impl RegKind {
    pub const ALL: [RegKind; 4] = [
        RegKind::HuberGlobal,
        RegKind::KwCubic,
        RegKind::Local,
        RegKind::KwQuadratic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RegKind::HuberGlobal => "huber_global",
            RegKind::KwCubic => "kw_cubic",
            RegKind::Local => "local",
            RegKind::KwQuadratic => "kw_quadratic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "huber_global" => Ok(RegKind::HuberGlobal),
            "kw_cubic" => Ok(RegKind::KwCubic),
            "local" => Ok(RegKind::Local),
            "kw_quadratic" => Ok(RegKind::KwQuadratic),
            other => Err(Error::InvalidArgument(format!(
                "unknown regularization '{other}' (expected huber_global, kw_cubic, local or kw_quadratic)"
            ))),
        }
    }

    fn theta(self, rho: f64) -> f64 {
        match self {
            RegKind::HuberGlobal => 0.0,
            RegKind::KwCubic | RegKind::KwQuadratic => -rho / 2.0,
            RegKind::Local => -rho,
        }
    }

    fn big_theta(self, rho: f64) -> f64 {
        match self {
            RegKind::HuberGlobal | RegKind::Local => rho,
            RegKind::KwCubic | RegKind::KwQuadratic => rho / 2.0,
        }
    }

    fn ell(self, rho: f64) -> f64 {
        match self {
            RegKind::HuberGlobal => -rho / 2.0,
            _ => 0.0,
        }
    }

    fn eval(self, rho: f64, r: f64) -> f64 {
        match self {
            RegKind::HuberGlobal => {
                if r <= 0.0 {
                    0.0
                } else if r >= rho {
                    r - rho / 2.0
                } else {
                    r * r / (2.0 * rho)
                }
            }
            RegKind::KwCubic => {
                if r <= -rho / 2.0 {
                    0.0
                } else if r >= rho / 2.0 {
                    r
                } else {
                    let s = r + rho / 2.0;
                    s * s * s * (1.5 * rho - r) / (2.0 * rho * rho * rho)
                }
            }
            RegKind::Local => {
                if r <= -rho {
                    0.0
                } else if r >= rho {
                    r
                } else {
                    r * r / (4.0 * rho) + r / 2.0 + rho / 4.0
                }
            }
            RegKind::KwQuadratic => {
                if r <= -rho / 2.0 {
                    0.0
                } else if r >= rho / 2.0 {
                    r
                } else {
                    let s = r + rho / 2.0;
                    s * s / (2.0 * rho)
                }
            }
        }
    }

    fn deriv(self, rho: f64, r: f64) -> f64 {
        match self {
            RegKind::HuberGlobal => {
                if r <= 0.0 {
                    0.0
                } else if r >= rho {
                    1.0
                } else {
                    r / rho
                }
            }
            RegKind::KwCubic => {
                if r <= -rho / 2.0 {
                    0.0
                } else if r >= rho / 2.0 {
                    1.0
                } else {
                    let s = r + rho / 2.0;
                    2.0 * s * s * (rho - r) / (rho * rho * rho)
                }
            }
            RegKind::Local => {
                if r <= -rho {
                    0.0
                } else if r >= rho {
                    1.0
                } else {
                    r / (2.0 * rho) + 0.5
                }
            }
            RegKind::KwQuadratic => {
                if r <= -rho / 2.0 {
                    0.0
                } else if r >= rho / 2.0 {
                    1.0
                } else {
                    (r + rho / 2.0) / rho
                }
            }
        }
    }

    /// Human-readable piecewise formula with the width spelled out.
    pub fn formula(self, rho: f64) -> String {
        match self {
            RegKind::HuberGlobal => format!(
                "m(r) = 0 for r <= 0;  r^2/(2*{rho:.6e}) for 0 < r < {rho:.6e};  r - {:.6e} for r >= {rho:.6e}",
                rho / 2.0
            ),
            RegKind::KwCubic => format!(
                "m(r) = 0 for r <= -{0:.6e};  (r + {0:.6e})^3 (1.5*{rho:.6e} - r) / (2*{rho:.6e}^3) for |r| < {0:.6e};  r for r >= {0:.6e}",
                rho / 2.0
            ),
            RegKind::Local => format!(
                "m(r) = 0 for r <= -{rho:.6e};  r^2/(4*{rho:.6e}) + r/2 + {:.6e} for |r| < {rho:.6e};  r for r >= {rho:.6e}",
                rho / 4.0
            ),
            RegKind::KwQuadratic => format!(
                "m(r) = 0 for r <= -{0:.6e};  (r + {0:.6e})^2/(2*{rho:.6e}) for |r| < {0:.6e};  r for r >= {0:.6e}",
                rho / 2.0
            ),
        }
    }
}

/// How a [`Regularization`] computes its values.
#[derive(Clone, Copy)]
enum Profile {
    Named(RegKind),
    /// Extension hook for experiments with hand-written profiles; the
    /// assumption checker treats it like any other profile.
    Custom {
        eval: fn(f64) -> f64,
        deriv: fn(f64) -> f64,
    },
}

impl std::fmt::Debug for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Profile::Named(k) => write!(f, "Named({})", k.name()),
            Profile::Custom { .. } => write!(f, "Custom"),
        }
    }
}

/// A concrete C¹ substitute for `max(0, ·)` together with its panel data:
/// it vanishes on `(-∞, θ]` and equals `r + l` on `[Θ, ∞)`.
///
/// `rescaled(s)` produces `r ↦ s · m(r/s)`, which multiplies all three
/// panel parameters by `s`; the `sc_tilde` family uses it with `s = ρ`.
#[derive(Debug, Clone, Copy)]
pub struct Regularization {
    profile: Profile,
    /// Width parameter the named profiles were built with.
    rho: f64,
    /// Outer rescaling factor (1 for the plain profiles).
    scale: f64,
    theta: f64,
    big_theta: f64,
    ell: f64,
}

impl Regularization {
    pub fn new(kind: RegKind, rho: f64) -> Result<Self> {
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "regularization width must be positive, got {rho}"
            )));
        }
        Ok(Self {
            profile: Profile::Named(kind),
            rho,
            scale: 1.0,
            theta: kind.theta(rho),
            big_theta: kind.big_theta(rho),
            ell: kind.ell(rho),
        })
    }

    /// Plug in an arbitrary profile with claimed panel parameters.  Nothing
    /// is validated here; `verify_assumptions` is the tool that decides
    /// whether the claim holds.
    pub fn custom(
        theta: f64,
        big_theta: f64,
        ell: f64,
        eval: fn(f64) -> f64,
        deriv: fn(f64) -> f64,
    ) -> Self {
        Self {
            profile: Profile::Custom { eval, deriv },
            rho: big_theta - theta,
            scale: 1.0,
            theta,
            big_theta,
            ell,
        }
    }

    /// `r ↦ s · m(r/s)` with `s > 0`.
    pub fn rescaled(&self, s: f64) -> Result<Self> {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "rescaling factor must be positive, got {s}"
            )));
        }
        Ok(Self {
            profile: self.profile,
            rho: self.rho,
            scale: self.scale * s,
            theta: self.theta * s,
            big_theta: self.big_theta * s,
            ell: self.ell * s,
        })
    }

    pub fn kind(&self) -> Option<RegKind> {
        match self.profile {
            Profile::Named(k) => Some(k),
            Profile::Custom { .. } => None,
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn big_theta(&self) -> f64 {
        self.big_theta
    }

    pub fn ell(&self) -> f64 {
        self.ell
    }

    pub fn eval(&self, r: f64) -> f64 {
        let base = |r: f64| match self.profile {
            Profile::Named(k) => k.eval(self.rho, r),
            Profile::Custom { eval, .. } => eval(r),
        };
        if self.scale == 1.0 {
            base(r)
        } else {
            self.scale * base(r / self.scale)
        }
    }

    pub fn deriv(&self, r: f64) -> f64 {
        let base = |r: f64| match self.profile {
            Profile::Named(k) => k.deriv(self.rho, r),
            Profile::Custom { deriv, .. } => deriv(r),
        };
        if self.scale == 1.0 {
            base(r)
        } else {
            base(r / self.scale)
        }
    }
}

/// The five penalty family kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum FamilyKind {
    /// `r⁺/ρ`, nonsmooth.
    Max,
    /// `(ρλ̄ + r)⁺/ρ`, nonsmooth, shifted by a multiplier estimate.
    CompMax,
    /// `m_ρ(r)/ρ`, C¹.
    SmoothMax,
    /// `m_ρ(ρλ̄ + r)/ρ`, C¹.
    SmoothCompMax,
    /// `m̃(λ̄ + r/ρ)` realised as `sc` with the profile rescaled by ρ.
    ScaledCompMax,
}

impl FamilyKind {
    pub const ALL: [FamilyKind; 5] = [
        FamilyKind::Max,
        FamilyKind::CompMax,
        FamilyKind::SmoothMax,
        FamilyKind::SmoothCompMax,
        FamilyKind::ScaledCompMax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::Max => "m",
            FamilyKind::CompMax => "c",
            FamilyKind::SmoothMax => "sm",
            FamilyKind::SmoothCompMax => "sc",
            FamilyKind::ScaledCompMax => "sc_tilde",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "m" => Ok(FamilyKind::Max),
            "c" => Ok(FamilyKind::CompMax),
            "sm" => Ok(FamilyKind::SmoothMax),
            "sc" => Ok(FamilyKind::SmoothCompMax),
            "sc_tilde" => Ok(FamilyKind::ScaledCompMax),
            other => Err(Error::InvalidArgument(format!(
                "unknown family kind '{other}' (expected m, c, sm, sc or sc_tilde)"
            ))),
        }
    }

    pub fn is_smooth(self) -> bool {
        matches!(
            self,
            FamilyKind::SmoothMax | FamilyKind::SmoothCompMax | FamilyKind::ScaledCompMax
        )
    }

    pub fn needs_multiplier_shift(self) -> bool {
        matches!(
            self,
            FamilyKind::CompMax | FamilyKind::SmoothCompMax | FamilyKind::ScaledCompMax
        )
    }

    pub fn needs_regularization(self) -> bool {
        self.is_smooth()
    }
}

/// A penalty family instantiated on a grid at a fixed parameter ρ.
///
/// Nodal structural data is precomputed: `k0` (the left panel edge below
/// which the penalty vanishes), `k1` (the right panel edge past which it is
/// exactly `(r + j)/ρ`) and the linear offset `j`.
#[derive(Debug, Clone)]
pub struct PenaltyFamily {
    grid: Grid,
    kind: FamilyKind,
    rho: f64,
    reg: Option<Regularization>,
    lambda_bar: Option<Vec<f64>>,
    k0: Vec<f64>,
    k1: Vec<f64>,
    j: Vec<f64>,
}

/// Build a family; `reg` is required for the smooth kinds and `lambda_bar`
/// for the shifted ones (`λ̄ ≥ 0` nodally).  For `sc_tilde` the profile is
/// rescaled by ρ before use, so pass the fixed-width profile.
pub fn make_family(
    grid: Grid,
    kind: FamilyKind,
    rho: f64,
    reg: Option<Regularization>,
    lambda_bar: Option<&DiscreteField>,
) -> Result<PenaltyFamily> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "penalty parameter must be positive, got {rho}"
        )));
    }
    let n = grid.node_count();
    let lb: Option<Vec<f64>> = match (kind.needs_multiplier_shift(), lambda_bar) {
        (true, Some(lb)) => {
            if lb.grid() != grid {
                return Err(Error::GridMismatch(
                    "multiplier estimate lives on a different grid".into(),
                ));
            }
            if lb.values().iter().any(|v| *v < 0.0) {
                return Err(Error::InvalidArgument(
                    "multiplier estimate must be nonnegative".into(),
                ));
            }
            Some(lb.values().to_vec())
        }
        (true, None) => {
            return Err(Error::InvalidArgument(format!(
                "family '{}' needs a multiplier estimate lambda_bar",
                kind.name()
            )))
        }
        (false, _) => None,
    };
    let reg = match (kind.needs_regularization(), reg) {
        (true, Some(r)) => Some(if kind == FamilyKind::ScaledCompMax {
            r.rescaled(rho)?
        } else {
            r
        }),
        (true, None) => {
            return Err(Error::InvalidArgument(format!(
                "family '{}' needs a regularization",
                kind.name()
            )))
        }
        (false, _) => None,
    };

    let mut k0 = vec![0.0; n];
    let mut k1 = vec![0.0; n];
    let mut j = vec![0.0; n];
    match kind {
        FamilyKind::Max => {}
        FamilyKind::CompMax => {
            let lb = lb.as_ref().unwrap();
            for i in 0..n {
                k0[i] = -rho * lb[i];
                k1[i] = -rho * lb[i];
                j[i] = rho * lb[i];
            }
        }
        FamilyKind::SmoothMax => {
            let r = reg.as_ref().unwrap();
            k0.fill(r.theta());
            k1.fill(r.big_theta());
            j.fill(r.ell());
        }
        FamilyKind::SmoothCompMax | FamilyKind::ScaledCompMax => {
            let r = reg.as_ref().unwrap();
            let lb = lb.as_ref().unwrap();
            for i in 0..n {
                k0[i] = r.theta() - rho * lb[i];
                k1[i] = r.big_theta() - rho * lb[i];
                j[i] = rho * lb[i] + r.ell();
            }
        }
    }

    Ok(PenaltyFamily {
        grid,
        kind,
        rho,
        reg,
        lambda_bar: lb,
        k0,
        k1,
        j,
    })
}

impl PenaltyFamily {
    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn regularization(&self) -> Option<&Regularization> {
        self.reg.as_ref()
    }

    pub fn k0(&self) -> &[f64] {
        &self.k0
    }

    pub fn k1(&self) -> &[f64] {
        &self.k1
    }

    pub fn offset_j(&self) -> &[f64] {
        &self.j
    }

    /// `λ(x_i, r)`.
    pub fn eval(&self, node: usize, r: f64) -> f64 {
        match self.kind {
            FamilyKind::Max => r.max(0.0) / self.rho,
            FamilyKind::CompMax => {
                let lb = self.lambda_bar.as_ref().unwrap();
                (self.rho * lb[node] + r).max(0.0) / self.rho
            }
            FamilyKind::SmoothMax => self.reg.as_ref().unwrap().eval(r) / self.rho,
            FamilyKind::SmoothCompMax | FamilyKind::ScaledCompMax => {
                let lb = self.lambda_bar.as_ref().unwrap();
                self.reg.as_ref().unwrap().eval(self.rho * lb[node] + r) / self.rho
            }
        }
    }

    /// One-sided directional derivative `λ'(x_i, r; h)`.  For the smooth
    /// kinds this is just `λ'(x_i, r) · h`; at the kink of a nonsmooth kind
    /// the positive part of `h` survives.
    pub fn dir_deriv(&self, node: usize, r: f64, h: f64) -> f64 {
        if self.kind.is_smooth() {
            return self.slope_smooth(node, r) * h;
        }
        let k0 = self.k0[node];
        if r > k0 {
            h / self.rho
        } else if r == k0 {
            h.max(0.0) / self.rho
        } else {
            0.0
        }
    }

    /// Generalized slope used by the semismooth Newton method: the actual
    /// derivative where it exists, and the right-branch element `1/ρ` at the
    /// kink of a nonsmooth kind.
    pub fn newton_slope(&self, node: usize, r: f64) -> f64 {
        if self.kind.is_smooth() {
            self.slope_smooth(node, r)
        } else if r >= self.k0[node] {
            1.0 / self.rho
        } else {
            0.0
        }
    }

    fn slope_smooth(&self, node: usize, r: f64) -> f64 {
        let reg = self.reg.as_ref().unwrap();
        let arg = match self.kind {
            FamilyKind::SmoothMax => r,
            _ => self.rho * self.lambda_bar.as_ref().unwrap()[node] + r,
        };
        reg.deriv(arg) / self.rho
    }

    /// Whether `r` sits exactly on a kink of a nonsmooth kind at `node`.
    pub fn on_kink(&self, node: usize, r: f64, tol: f64) -> bool {
        !self.kind.is_smooth() && (r - self.k0[node]).abs() <= tol
    }

    /// Growth constant of the structural fields: `(‖k0‖_L² + ‖k1‖_L²)/ρ`
    /// with the lumped L² norm.  For all shipped kinds this number does not
    /// depend on ρ, which is what makes it usable across a whole sweep.
    pub fn growth_constant(&self) -> f64 {
        let vol = self.grid.cell_volume();
        let l2 = |v: &[f64]| (vol * v.iter().map(|x| x * x).sum::<f64>()).sqrt();
        (l2(&self.k0) + l2(&self.k1)) / self.rho
    }

    /// Distinct structural rows (k0, k1, j) — one per class of nodes, so
    /// sampling checks need not revisit identical nodes.
    fn node_classes(&self) -> Vec<usize> {
        use std::collections::HashSet;
        let mut seen = HashSet::new();
        let mut reps = Vec::new();
        for i in 0..self.k0.len() {
            let key = (
                self.k0[i].to_bits(),
                self.k1[i].to_bits(),
                self.j[i].to_bits(),
            );
            if seen.insert(key) {
                reps.push(i);
            }
        }
        reps
    }
}

/// Declarative family description: everything except ρ.  `instantiate`
/// builds the concrete family for a given parameter, choosing the profile
/// width canonically (`ρ` itself for `sm`/`sc`, fixed width 1 rescaled by ρ
/// for `sc_tilde`).
#[derive(Debug, Clone)]
pub struct FamilySpec {
    pub kind: FamilyKind,
    pub reg: Option<RegKind>,
    pub lambda_bar: Option<DiscreteField>,
}

impl FamilySpec {
    pub fn new(kind: FamilyKind, reg: Option<RegKind>, lambda_bar: Option<DiscreteField>) -> Self {
        Self {
            kind,
            reg,
            lambda_bar,
        }
    }

    pub fn instantiate(&self, grid: Grid, rho: f64) -> Result<PenaltyFamily> {
        let reg = match (self.kind.needs_regularization(), self.reg) {
            (true, Some(kind)) => Some(if self.kind == FamilyKind::ScaledCompMax {
                // fixed-width profile; make_family narrows it by ρ
                Regularization::new(kind, 1.0)?
            } else {
                Regularization::new(kind, rho)?
            }),
            (true, None) => {
                return Err(Error::InvalidArgument(format!(
                    "family '{}' needs a regularization kind",
                    self.kind.name()
                )))
            }
            (false, _) => None,
        };
        make_family(grid, self.kind, rho, reg, self.lambda_bar.as_ref())
    }

    pub fn label(&self) -> String {
        match self.reg {
            Some(r) => format!("{}/{}", self.kind.name(), r.name()),
            None => self.kind.name().to_string(),
        }
    }
}

/// Outcome of one structural property check.
#[derive(Debug, Clone, Serialize)]
pub struct PropertyCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Worst violation seen (0 when the property holds everywhere sampled).
    pub worst_violation: f64,
    /// Fitted constant, for the growth-type properties.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fitted: Option<f64>,
}

/// Report of `verify_assumptions`.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub family: String,
    pub checks: Vec<PropertyCheck>,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn worst(&self) -> f64 {
        self.checks
            .iter()
            .fold(0.0f64, |m, c| m.max(c.worst_violation))
    }
}

/// Sample-based check of the structural assumptions across a ρ-schedule.
///
/// The family is re-instantiated at every schedule entry (named profiles
/// re-derive their width; a custom profile is reused as-is).  `r_samples`
/// values per node class span `[k0 - 1, k1 + 1]`, with the panel joints
/// added exactly.  Sampled inequalities get a 1e-12 absolute slack;
/// structural identities (vanishing and linear branches) must hold to
/// machine precision.
pub fn verify_assumptions(
    fam: &PenaltyFamily,
    rho_schedule: &[f64],
    r_samples: usize,
) -> Result<AssumptionReport> {
    if rho_schedule.is_empty() {
        return Err(Error::InvalidArgument("empty rho schedule".into()));
    }
    if r_samples < 8 {
        return Err(Error::InvalidArgument(
            "need at least 8 sample points".into(),
        ));
    }
    let mut checks = FamilyChecks::default();

    let mut k0_inf_per_rho = Vec::new();
    let mut growth_per_rho = Vec::new();
    let mut j_growth_per_rho = Vec::new();

    for &rho in rho_schedule {
        let fam_rho = respec(fam, rho)?;
        let vol = fam_rho.grid.cell_volume();
        let l2 = |v: &[f64]| (vol * v.iter().map(|x| x * x).sum::<f64>()).sqrt();
        k0_inf_per_rho.push(fam_rho.k0.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        growth_per_rho.push((l2(&fam_rho.k0) + l2(&fam_rho.k1)) / rho);
        j_growth_per_rho.push(l2(&fam_rho.j) / rho);
        sample_family(&fam_rho, r_samples, &mut checks);
    }

    let mut out = Vec::new();
    out.push(checks.nonnegative.into_check("nonnegative"));
    out.push(checks.monotone.into_check("monotone"));
    out.push(checks.convex.into_check("convex"));
    out.push(checks.vanishing_branch.into_check("vanishing_branch"));
    out.push(checks.linear_branch.into_check("linear_branch"));
    out.push(checks.panels_ordered.into_check("panels_ordered"));
    out.push(checks.k1_plus_j.into_check("k1_plus_j_nonnegative"));
    out.push(checks.lipschitz.into_check("lipschitz_1_over_rho"));
    out.push(checks.lower_quadratic.into_check("lower_quadratic_growth"));
    out.push(checks.pointwise_bound.into_check("pointwise_plus_part_bound"));
    out.push(checks.convexity_gradient.into_check("convexity_gradient"));
    out.push(checks.dir_deriv_bound.into_check("dir_deriv_bound"));
    out.push(checks.c1_joints.into_check("c1_at_panel_joints"));

    // k0 must vanish in L∞ as ρ does; for every shipped profile it scales
    // linearly, so compare the endpoints of the schedule.
    let (rho_max, k0_at_max) = rho_schedule
        .iter()
        .zip(&k0_inf_per_rho)
        .max_by(|a, b| a.0.total_cmp(b.0))
        .map(|(r, k)| (*r, *k))
        .unwrap();
    let (rho_min, k0_at_min) = rho_schedule
        .iter()
        .zip(&k0_inf_per_rho)
        .min_by(|a, b| a.0.total_cmp(b.0))
        .map(|(r, k)| (*r, *k))
        .unwrap();
    let k0_decay_violation = if rho_min < rho_max {
        (k0_at_min - k0_at_max * (rho_min / rho_max) * (1.0 + 1e-9)).max(0.0)
    } else {
        0.0
    };
    out.push(PropertyCheck {
        name: "k0_vanishes_with_rho",
        passed: k0_decay_violation <= 1e-12,
        worst_violation: k0_decay_violation,
        fitted: Some(k0_at_min),
    });

    // growth of the structural fields: (‖k0‖ + ‖k1‖)/ρ must stay bounded by
    // one constant along the schedule.
    let c_max = growth_per_rho.iter().fold(0.0f64, |m, v| m.max(*v));
    let c_min = growth_per_rho.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    let growth_spread = if c_max > 0.0 {
        (c_max - c_min) / c_max
    } else {
        0.0
    };
    out.push(PropertyCheck {
        name: "growth_l2_linear_in_rho",
        passed: growth_spread <= 1e-9,
        worst_violation: growth_spread,
        fitted: Some(c_max),
    });

    // ‖j‖_L² ≤ 2 C ρ with the fitted C above.
    let j_violation = j_growth_per_rho
        .iter()
        .fold(0.0f64, |m, v| m.max(v - 2.0 * c_max));
    out.push(PropertyCheck {
        name: "offset_growth_l2",
        passed: j_violation <= 1e-12,
        worst_violation: j_violation.max(0.0),
        fitted: Some(j_growth_per_rho.iter().fold(0.0f64, |m, v| m.max(*v))),
    });

    Ok(AssumptionReport {
        family: match fam.reg.as_ref().and_then(|r| r.kind()) {
            Some(reg) => format!("{}/{}", fam.kind.name(), reg.name()),
            None => fam.kind.name().to_string(),
        },
        checks: out,
    })
}

/// Re-instantiate `fam` at a different ρ, keeping kind, profile and λ̄.
fn respec(fam: &PenaltyFamily, rho: f64) -> Result<PenaltyFamily> {
    let lb_field = fam.lambda_bar.as_ref().map(|v| {
        DiscreteField::from_values(fam.grid, v.clone()).expect("lambda_bar length is consistent")
    });
    let reg = match fam.reg.as_ref() {
        None => None,
        Some(r) => match (r.kind(), fam.kind) {
            (Some(kind), FamilyKind::ScaledCompMax) => Some(Regularization::new(kind, r.rho)?),
            (Some(kind), _) => Some(Regularization::new(kind, rho)?),
            // a custom profile cannot re-derive its width; reuse it
            (None, FamilyKind::ScaledCompMax) => Some(Regularization {
                scale: 1.0,
                theta: r.theta / r.scale,
                big_theta: r.big_theta / r.scale,
                ell: r.ell / r.scale,
                ..*r
            }),
            (None, _) => Some(*r),
        },
    };
    make_family(fam.grid, fam.kind, rho, reg, lb_field.as_ref())
}

#[derive(Default)]
struct Worst {
    worst: f64,
}

impl Worst {
    fn record(&mut self, violation: f64) {
        if violation > self.worst {
            self.worst = violation;
        }
    }

    fn into_check(self, name: &'static str) -> PropertyCheck {
        PropertyCheck {
            name,
            passed: self.worst <= 1e-12,
            worst_violation: self.worst,
            fitted: None,
        }
    }
}

#[derive(Default)]
struct FamilyChecks {
    nonnegative: Worst,
    monotone: Worst,
    convex: Worst,
    vanishing_branch: Worst,
    linear_branch: Worst,
    panels_ordered: Worst,
    k1_plus_j: Worst,
    lipschitz: Worst,
    lower_quadratic: Worst,
    pointwise_bound: Worst,
    convexity_gradient: Worst,
    dir_deriv_bound: Worst,
    c1_joints: Worst,
}

fn sample_family(fam: &PenaltyFamily, r_samples: usize, checks: &mut FamilyChecks) {
    let rho = fam.rho;
    for node in fam.node_classes() {
        let k0 = fam.k0[node];
        let k1 = fam.k1[node];
        let j = fam.j[node];
        checks.panels_ordered.record(k0 - k1);
        checks.k1_plus_j.record(-(k1 + j));

        let lo = k0 - 1.0;
        let hi = k1 + 1.0;
        let step = (hi - lo) / (r_samples - 1) as f64;
        let mut rs: Vec<f64> = (0..r_samples).map(|i| lo + i as f64 * step).collect();
        rs.push(k0);
        rs.push(k1);
        if let Some(reg) = fam.reg.as_ref() {
            rs.push(reg.theta());
            rs.push(reg.big_theta());
        }
        rs.sort_by(f64::total_cmp);
        rs.dedup();

        let scale = 1.0 / rho;
        let vals: Vec<f64> = rs.iter().map(|&r| fam.eval(node, r)).collect();

        for (idx, (&r, &v)) in rs.iter().zip(&vals).enumerate() {
            checks.nonnegative.record(-v);
            if r <= k0 {
                checks.vanishing_branch.record(v.abs());
            }
            if r >= k1 {
                checks.linear_branch.record((v - (r + j) / rho).abs());
            }
            // λ(r) r⁺ ≥ -(k1/ρ) r⁺ + (r⁺)²/ρ
            let rp = r.max(0.0);
            checks
                .lower_quadratic
                .record((-(k1 / rho) * rp + rp * rp / rho - v * rp) / (1.0 + scale));
            // λ(r) ≤ (r⁺ + |k0|)/ρ
            checks
                .pointwise_bound
                .record((v - (rp + k0.abs()) / rho) / (1.0 + scale));
            // λ(r) ≤ (r - k0) λ'(r) on [k0, k1]
            if r >= k0 && r <= k1 {
                let slope = fam.newton_slope(node, r);
                checks
                    .convexity_gradient
                    .record((v - (r - k0) * slope) / (1.0 + scale));
            }
            // |λ'(r; h)| ≤ |h|/ρ for a few directions
            for h in [-1.0, -0.3, 0.4, 1.0] {
                let d = fam.dir_deriv(node, r, h);
                checks
                    .dir_deriv_bound
                    .record((d.abs() - h.abs() / rho) / scale);
            }
            if idx > 0 {
                let (r_prev, v_prev) = (rs[idx - 1], vals[idx - 1]);
                checks.monotone.record(v_prev - v);
                // |λ(u) - λ(v)| ≤ |u - v|/ρ, normalized by the slope scale
                checks
                    .lipschitz
                    .record(((v - v_prev).abs() - (r - r_prev) / rho) / scale);
            }
            if idx > 1 {
                // midpoint convexity on consecutive triples (uneven spacing
                // near the inserted joints is handled by interpolation)
                let (r0, v0) = (rs[idx - 2], vals[idx - 2]);
                let (r2, v2) = (r, v);
                let (r1, v1) = (rs[idx - 1], vals[idx - 1]);
                if r2 > r0 {
                    let t = (r1 - r0) / (r2 - r0);
                    let chord = v0 + t * (v2 - v0);
                    checks.convex.record((v1 - chord) / (1.0 + scale));
                }
            }
        }

        // C¹ at the panel joints for the smooth kinds: centred differences
        // of λ must match the reported slope as the stencil shrinks.
        if fam.kind.is_smooth() {
            for joint in [k0, k1] {
                let eps = 1e-7 * (1.0 + joint.abs()).min(rho);
                if eps == 0.0 {
                    continue;
                }
                let fd = (fam.eval(node, joint + eps) - fam.eval(node, joint - eps)) / (2.0 * eps);
                let slope = fam.newton_slope(node, joint);
                // a C¹ function with bounded second derivative on each panel
                // leaves an O(eps/ρ²-ish) mismatch; normalize accordingly
                let tol_scale = scale * (1.0 + eps / rho);
                checks
                    .c1_joints
                    .record(((fd - slope).abs() - 1e-5 * tol_scale) / tol_scale);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Extent;
    use approx::assert_relative_eq;

    fn small_grid() -> Grid {
        Grid::new(Extent::unit_interval(), 3).unwrap()
    }

    #[test]
    fn regularization_panel_parameters() {
        let huber = Regularization::new(RegKind::HuberGlobal, 0.1).unwrap();
        assert_relative_eq!(huber.theta(), 0.0);
        assert_relative_eq!(huber.big_theta(), 0.1);
        assert_relative_eq!(huber.ell(), -0.05);

        let cubic = Regularization::new(RegKind::KwCubic, 0.2).unwrap();
        assert_relative_eq!(cubic.theta(), -0.1);
        assert_relative_eq!(cubic.big_theta(), 0.1);
        assert_relative_eq!(cubic.ell(), 0.0);

        let local = Regularization::new(RegKind::Local, 0.3).unwrap();
        assert_relative_eq!(local.theta(), -0.3);
        assert_relative_eq!(local.big_theta(), 0.3);
        assert_relative_eq!(local.ell(), 0.0);
    }

    #[test]
    fn profiles_match_their_branches_at_joints() {
        for kind in RegKind::ALL {
            for rho in [1.0, 0.25, 1e-3] {
                let reg = Regularization::new(kind, rho).unwrap();
                let th = reg.theta();
                let bt = reg.big_theta();
                assert!(reg.eval(th).abs() < 1e-15, "{kind:?} value at theta");
                assert_relative_eq!(reg.eval(bt), bt + reg.ell(), epsilon = 1e-15);
                assert!(reg.deriv(th).abs() < 1e-15);
                assert_relative_eq!(reg.deriv(bt), 1.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn structural_fields_for_shifted_smooth_family() {
        let grid = small_grid();
        let reg = Regularization::new(RegKind::HuberGlobal, 0.1).unwrap();
        let lb = DiscreteField::constant(grid, 2.0);
        let fam = make_family(grid, FamilyKind::SmoothCompMax, 0.1, Some(reg), Some(&lb)).unwrap();
        for i in 0..grid.node_count() {
            assert_relative_eq!(fam.k0()[i], -0.2, epsilon = 1e-15);
            assert_relative_eq!(fam.k1()[i], -0.1, epsilon = 1e-15);
            assert_relative_eq!(fam.offset_j()[i], 0.15, epsilon = 1e-15);
        }
    }

    #[test]
    fn max_family_has_zero_fields() {
        let grid = small_grid();
        let fam = make_family(grid, FamilyKind::Max, 0.5, None, None).unwrap();
        assert!(fam.k0().iter().all(|v| *v == 0.0));
        assert!(fam.k1().iter().all(|v| *v == 0.0));
        assert!(fam.offset_j().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn smooth_family_values_and_slopes() {
        let grid = small_grid();
        let reg = Regularization::new(RegKind::HuberGlobal, 0.1).unwrap();
        let fam = make_family(grid, FamilyKind::SmoothMax, 0.1, Some(reg), None).unwrap();
        // quadratic panel: m(0.05) = 0.05²/0.2 = 0.0125, λ = m/ρ
        assert_relative_eq!(fam.eval(0, 0.05), 0.125, epsilon = 1e-15);
        assert_relative_eq!(fam.dir_deriv(0, 0.05, 1.0), 5.0, epsilon = 1e-12);
        // past Θ the slope saturates at 1/ρ
        assert_relative_eq!(fam.newton_slope(0, 0.2), 10.0, epsilon = 1e-12);
    }

    #[test]
    fn nonsmooth_kink_semantics() {
        let grid = small_grid();
        let fam = make_family(grid, FamilyKind::Max, 0.25, None, None).unwrap();
        // exactly on the kink only the positive part of the direction counts
        assert_eq!(fam.dir_deriv(0, 0.0, -3.0), 0.0);
        assert_relative_eq!(fam.dir_deriv(0, 0.0, 2.0), 8.0);

        let fam = make_family(grid, FamilyKind::Max, 0.5, None, None).unwrap();
        assert_relative_eq!(fam.eval(0, 1.0), 2.0);
        // Newton takes the right branch on the kink itself
        assert_relative_eq!(fam.newton_slope(0, 0.0), 2.0);
        assert_eq!(fam.newton_slope(0, -0.1), 0.0);
    }

    #[test]
    fn shifted_family_moves_the_kink() {
        let grid = small_grid();
        let lb = DiscreteField::constant(grid, 1.0);
        let fam = make_family(grid, FamilyKind::CompMax, 0.2, None, Some(&lb)).unwrap();
        // kink now at -ρλ̄ = -0.2
        assert_eq!(fam.eval(0, -0.3), 0.0);
        assert_relative_eq!(fam.eval(0, 0.0), 1.0); // (0.2+0)/0.2
        assert_eq!(fam.dir_deriv(0, -0.2, -1.0), 0.0);
        assert_relative_eq!(fam.dir_deriv(0, -0.2, 1.0), 5.0);
    }

    #[test]
    fn sc_tilde_narrows_a_fixed_profile() {
        let grid = small_grid();
        let rho = 0.01;
        let base = Regularization::new(RegKind::KwQuadratic, 1.0).unwrap();
        let lb = DiscreteField::constant(grid, 0.0);
        let fam =
            make_family(grid, FamilyKind::ScaledCompMax, rho, Some(base), Some(&lb)).unwrap();
        // effective profile is r ↦ ρ m̃(r/ρ): panel edges scale with ρ
        assert_relative_eq!(fam.k0()[0], -rho / 2.0, epsilon = 1e-15);
        assert_relative_eq!(fam.k1()[0], rho / 2.0, epsilon = 1e-15);
        // and λ(r) = m̃(r/ρ): for r = ρ/2, m̃(1/2) = 1/2... λ = m(r)/ρ = m̃(0.5)
        assert_relative_eq!(fam.eval(0, rho / 2.0), 0.5, epsilon = 1e-12);
        // deep in the linear branch λ(r) = (r + j)/ρ with j = ρ·l̃ = 0
        assert_relative_eq!(fam.eval(0, 3.0 * rho), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn fd_matches_dir_deriv_inside_smooth_panels() {
        let grid = small_grid();
        for reg_kind in RegKind::ALL {
            let rho = 0.2;
            let reg = Regularization::new(reg_kind, rho).unwrap();
            let fam = make_family(grid, FamilyKind::SmoothMax, rho, Some(reg), None).unwrap();
            for r in [-0.07, 0.013, 0.06, 0.09] {
                let eps = 1e-7;
                let fd = (fam.eval(0, r + eps) - fam.eval(0, r - eps)) / (2.0 * eps);
                let an = fam.dir_deriv(0, r, 1.0);
                assert!(
                    (fd - an).abs() <= 1e-4 * (1.0 / rho),
                    "{reg_kind:?} at {r}: fd {fd} vs {an}"
                );
            }
        }
    }

    #[test]
    fn assumptions_pass_for_all_shipped_families() {
        let grid = small_grid();
        let lb = DiscreteField::constant(grid, 1.0);
        let schedule = [1.0, 0.25, 0.0625];
        for kind in FamilyKind::ALL {
            let regs: Vec<Option<RegKind>> = if kind.needs_regularization() {
                RegKind::ALL.iter().copied().map(Some).collect()
            } else {
                vec![None]
            };
            for reg in regs {
                let spec = FamilySpec::new(
                    kind,
                    reg,
                    kind.needs_multiplier_shift().then(|| lb.clone()),
                );
                let fam = spec.instantiate(grid, 0.25).unwrap();
                let report = verify_assumptions(&fam, &schedule, 128).unwrap();
                assert!(
                    report.all_passed(),
                    "{} failed: {:?}",
                    report.family,
                    report
                        .checks
                        .iter()
                        .filter(|c| !c.passed)
                        .collect::<Vec<_>>()
                );
            }
        }
    }

    #[test]
    fn broken_profile_fails_linear_branch() {
        fn bad_eval(r: f64) -> f64 {
            if r > 0.0 {
                r * r
            } else {
                0.0
            }
        }
        fn bad_deriv(r: f64) -> f64 {
            if r > 0.0 {
                2.0 * r
            } else {
                0.0
            }
        }
        let grid = small_grid();
        let reg = Regularization::custom(0.0, 1.0, 0.0, bad_eval, bad_deriv);
        let fam = make_family(grid, FamilyKind::SmoothMax, 1.0, Some(reg), None).unwrap();
        let report = verify_assumptions(&fam, &[1.0], 64).unwrap();
        let linear = report
            .checks
            .iter()
            .find(|c| c.name == "linear_branch")
            .unwrap();
        assert!(!linear.passed);
    }

    #[test]
    fn missing_pieces_are_rejected() {
        let grid = small_grid();
        assert!(make_family(grid, FamilyKind::SmoothMax, 0.1, None, None).is_err());
        assert!(make_family(grid, FamilyKind::CompMax, 0.1, None, None).is_err());
        let lb_neg = DiscreteField::from_values(grid, vec![0.0, -1.0, 0.0]).unwrap();
        assert!(make_family(grid, FamilyKind::CompMax, 0.1, None, Some(&lb_neg)).is_err());
        assert!(make_family(grid, FamilyKind::Max, -0.5, None, None).is_err());
        assert!(FamilyKind::parse("zzz").is_err());
        assert!(RegKind::parse("zzz").is_err());
    }
}
