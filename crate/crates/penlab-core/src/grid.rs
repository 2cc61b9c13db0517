//! Uniform P1 grids on an interval or a square, with lumped mass.
//!
//! Only homogeneous Dirichlet problems are represented: vectors store the
//! interior nodes, the zero trace is implicit.  In 1D the interior node `i`
//! sits at `a + (i+1)h`; in 2D the flattened index is `iy * n + ix` and the
//! node sits at `(x0 + (ix+1)h, y0 + (iy+1)h)`.
//!
//! The stiffness matrix is the classical P1 one: `tridiag(-1, 2, -1)/h` in
//! 1D and the 5-point stencil (diagonal 4, axis neighbours -1) in 2D.  Mass
//! is lumped to `h^dim · I`, which keeps every Nemytskii operator diagonal
//! and preserves the sign structure the solvers lean on (the stiffness is an
//! M-matrix, so `⟨K z, z⁺⟩ ≥ ‖z⁺‖_K²` holds exactly on the mesh).

use crate::band::{BandCholesky, SymBandMatrix};
use crate::error::{Error, Result};

/// Domain of the problem; the variant fixes the dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Extent {
    Interval { a: f64, b: f64 },
    /// Axis-aligned square patch (equal side lengths, so one mesh width).
    Rect { x0: f64, x1: f64, y0: f64, y1: f64 },
}

impl Extent {
    pub fn interval(a: f64, b: f64) -> Self {
        Extent::Interval { a, b }
    }

    pub fn rect(x: (f64, f64), y: (f64, f64)) -> Self {
        Extent::Rect {
            x0: x.0,
            x1: x.1,
            y0: y.0,
            y1: y.1,
        }
    }

    pub fn unit_interval() -> Self {
        Self::interval(0.0, 1.0)
    }

    pub fn unit_square() -> Self {
        Self::rect((0.0, 1.0), (0.0, 1.0))
    }

    pub fn dim(&self) -> usize {
        match self {
            Extent::Interval { .. } => 1,
            Extent::Rect { .. } => 2,
        }
    }
}

/// Uniform tensor mesh; cheap to copy, compared by value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    extent: Extent,
    n_interior: usize,
    h: f64,
}

impl Grid {
    /// Validate the geometry and derive the mesh width `h = (b-a)/(n+1)`.
    pub fn new(extent: Extent, n_interior: usize) -> Result<Self> {
        if n_interior == 0 {
            return Err(Error::InvalidGrid("need at least one interior node".into()));
        }
        let h = match extent {
            Extent::Interval { a, b } => {
                if !(b - a).is_finite() || b <= a {
                    return Err(Error::InvalidGrid(format!("empty interval ({a}, {b})")));
                }
                (b - a) / (n_interior + 1) as f64
            }
            Extent::Rect { x0, x1, y0, y1 } => {
                let lx = x1 - x0;
                let ly = y1 - y0;
                if !lx.is_finite() || !ly.is_finite() || lx <= 0.0 || ly <= 0.0 {
                    return Err(Error::InvalidGrid(format!(
                        "empty rectangle ({x0}, {x1}) x ({y0}, {y1})"
                    )));
                }
                // one mesh width for both axes; reject anisotropic boxes
                if (lx - ly).abs() > 1e-12 * lx.max(ly) {
                    return Err(Error::InvalidGrid(format!(
                        "rectangle sides {lx} and {ly} differ; only square patches carry a single mesh width"
                    )));
                }
                lx / (n_interior + 1) as f64
            }
        };
        Ok(Self {
            extent,
            n_interior,
            h,
        })
    }

    pub fn extent(&self) -> Extent {
        self.extent
    }

    pub fn dim(&self) -> usize {
        self.extent.dim()
    }

    /// Interior nodes per dimension.
    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Total number of unknowns.
    pub fn node_count(&self) -> usize {
        match self.extent {
            Extent::Interval { .. } => self.n_interior,
            Extent::Rect { .. } => self.n_interior * self.n_interior,
        }
    }

    /// Volume of one lumped-mass cell, `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        match self.extent {
            Extent::Interval { .. } => self.h,
            Extent::Rect { .. } => self.h * self.h,
        }
    }

    /// Coordinates of interior node `i`; `y` is 0 for 1D grids.
    pub fn coords(&self, i: usize) -> (f64, f64) {
        match self.extent {
            Extent::Interval { a, .. } => (a + (i + 1) as f64 * self.h, 0.0),
            Extent::Rect { x0, y0, .. } => {
                let n = self.n_interior;
                let ix = i % n;
                let iy = i / n;
                (
                    x0 + (ix + 1) as f64 * self.h,
                    y0 + (iy + 1) as f64 * self.h,
                )
            }
        }
    }

    fn ensure_same(&self, other: &Grid, what: &str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{what} lives on a different grid")))
        }
    }
}

/// Nodal coefficients of a function in the P1 space (zero trace implied).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteField {
    grid: Grid,
    values: Vec<f64>,
}

/// Nodal values of a functional: entry `i` is the pairing with the `i`-th
/// hat function, so `⟨F, u⟩` is the plain dot product with `u`'s coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVector {
    grid: Grid,
    values: Vec<f64>,
}

macro_rules! nodal_impl {
    ($ty:ident) => {
        impl $ty {
            pub fn zeros(grid: Grid) -> Self {
                Self {
                    grid,
                    values: vec![0.0; grid.node_count()],
                }
            }

            pub fn constant(grid: Grid, c: f64) -> Self {
                Self {
                    grid,
                    values: vec![c; grid.node_count()],
                }
            }

            pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
                if values.len() != grid.node_count() {
                    return Err(Error::InvalidArgument(format!(
                        "expected {} nodal values, got {}",
                        grid.node_count(),
                        values.len()
                    )));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidArgument(
                        "nodal values must be finite".into(),
                    ));
                }
                Ok(Self { grid, values })
            }

            /// Evaluate a closure at every node's coordinates.
            pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
                let values = (0..grid.node_count())
                    .map(|i| {
                        let (x, y) = grid.coords(i);
                        f(x, y)
                    })
                    .collect();
                Self { grid, values }
            }

            pub fn grid(&self) -> Grid {
                self.grid
            }

            pub fn len(&self) -> usize {
                self.values.len()
            }

            pub fn is_empty(&self) -> bool {
                self.values.is_empty()
            }

            pub fn values(&self) -> &[f64] {
                &self.values
            }

            pub fn values_mut(&mut self) -> &mut [f64] {
                &mut self.values
            }

            pub fn into_values(self) -> Vec<f64> {
                self.values
            }

            pub fn linf_norm(&self) -> f64 {
                self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
            }

            /// Nodewise maximum with zero.
            pub fn positive_part(&self) -> Self {
                Self {
                    grid: self.grid,
                    values: self.values.iter().map(|v| v.max(0.0)).collect(),
                }
            }

            /// Nodewise `max(-v, 0)`, so `v = v⁺ - v⁻`.
            pub fn negative_part(&self) -> Self {
                Self {
                    grid: self.grid,
                    values: self.values.iter().map(|v| (-v).max(0.0)).collect(),
                }
            }

            pub fn scaled(&self, s: f64) -> Self {
                Self {
                    grid: self.grid,
                    values: self.values.iter().map(|v| s * v).collect(),
                }
            }

            /// self - other, failing on grid mismatch.
            pub fn minus(&self, other: &Self) -> Result<Self> {
                self.grid.ensure_same(&other.grid, stringify!($ty))?;
                Ok(Self {
                    grid: self.grid,
                    values: self
                        .values
                        .iter()
                        .zip(&other.values)
                        .map(|(a, b)| a - b)
                        .collect(),
                })
            }

            /// self + other, failing on grid mismatch.
            pub fn plus(&self, other: &Self) -> Result<Self> {
                self.grid.ensure_same(&other.grid, stringify!($ty))?;
                Ok(Self {
                    grid: self.grid,
                    values: self
                        .values
                        .iter()
                        .zip(&other.values)
                        .map(|(a, b)| a + b)
                        .collect(),
                })
            }
        }
    };
}

nodal_impl!(DiscreteField);
nodal_impl!(DualVector);

impl DualVector {
    /// Duality pairing `⟨F, u⟩`.
    pub fn pairing(&self, u: &DiscreteField) -> Result<f64> {
        self.grid.ensure_same(&u.grid, "pairing operand")?;
        Ok(self
            .values
            .iter()
            .zip(&u.values)
            .map(|(f, u)| f * u)
            .sum())
    }
}

/// Stiffness, lumped mass, Poincaré constant and a cached factorization.
/// Immutable after assembly; every solver borrows it.
#[derive(Debug, Clone)]
pub struct EllipticOperators {
    grid: Grid,
    stiffness: SymBandMatrix,
    mass: f64,
    poincare: f64,
    chol: BandCholesky,
}

/// Build the grid and assemble its elliptic operators in one step.
pub fn build_grid(extent: Extent, n_interior: usize) -> Result<(Grid, EllipticOperators)> {
    let grid = Grid::new(extent, n_interior)?;
    let ops = EllipticOperators::assemble(grid)?;
    Ok((grid, ops))
}

impl EllipticOperators {
    pub fn assemble(grid: Grid) -> Result<Self> {
        let stiffness = assemble_stiffness(&grid);
        let chol = stiffness.cholesky()?;
        let mass = grid.cell_volume();
        let poincare = poincare_constant(&stiffness, mass, &chol)?;
        Ok(Self {
            grid,
            stiffness,
            mass,
            poincare,
            chol,
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn stiffness(&self) -> &SymBandMatrix {
        &self.stiffness
    }

    /// Diagonal value of the lumped mass matrix, `h^dim`.
    pub fn mass_diag(&self) -> f64 {
        self.mass
    }

    /// Discrete Poincaré constant `1/sqrt(λ_min(M⁻¹K))`, so that
    /// `‖v‖_L² ≤ C_P ‖v‖_H¹₀` for every discrete `v`.
    pub fn poincare(&self) -> f64 {
        self.poincare
    }

    /// K u as a functional.
    pub fn apply_stiffness(&self, u: &DiscreteField) -> Result<DualVector> {
        self.grid.ensure_same(&u.grid, "stiffness operand")?;
        let mut out = DualVector::zeros(self.grid);
        self.stiffness.matvec(&u.values, &mut out.values);
        Ok(out)
    }

    /// Load functional of an L² density: `F = M f`.
    pub fn load_from_density(&self, density: &DiscreteField) -> Result<DualVector> {
        self.grid.ensure_same(&density.grid, "load density")?;
        Ok(DualVector {
            grid: self.grid,
            values: density.values.iter().map(|v| v * self.mass).collect(),
        })
    }

    /// Load functional of a constant density.
    pub fn load_constant(&self, c: f64) -> DualVector {
        DualVector::constant(self.grid, c * self.mass)
    }

    /// Nodal density representing a functional: `M⁻¹ F`.
    pub fn density_from_load(&self, f: &DualVector) -> Result<DiscreteField> {
        self.grid.ensure_same(&f.grid, "load")?;
        Ok(DiscreteField {
            grid: self.grid,
            values: f.values.iter().map(|v| v / self.mass).collect(),
        })
    }

    /// Solve `K u = F` with the cached factorization plus iterative
    /// refinement toward a 1e-12·‖F‖ residual.  Refinement in working
    /// precision cannot push the residual below its backward-stable floor
    /// `O(ε)·(‖K‖·‖u‖ + ‖F‖)`, and on fine grids that floor sits above the
    /// target, so the final acceptance allows it; anything larger is a
    /// genuine failure.
    pub fn solve_poisson(&self, f: &DualVector) -> Result<DiscreteField> {
        self.grid.ensure_same(&f.grid, "Poisson load")?;
        let mut u = self.chol.solve(&f.values);
        let norm_f = l2(&f.values).max(f64::MIN_POSITIVE);
        let mut ku = vec![0.0; u.len()];
        for _ in 0..3 {
            self.stiffness.matvec(&u, &mut ku);
            let mut r: Vec<f64> = f.values.iter().zip(&ku).map(|(b, a)| b - a).collect();
            if l2(&r) <= 1e-12 * norm_f {
                return Ok(DiscreteField {
                    grid: self.grid,
                    values: u,
                });
            }
            self.chol.solve_in_place(&mut r);
            for (ui, ri) in u.iter_mut().zip(&r) {
                *ui += ri;
            }
        }
        self.stiffness.matvec(&u, &mut ku);
        let res = f
            .values
            .iter()
            .zip(&ku)
            .map(|(b, a)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt();
        let floor = 32.0 * f64::EPSILON * (self.stiffness.inf_norm() * l2(&u) + norm_f);
        if res <= (1e-12 * norm_f).max(floor) {
            Ok(DiscreteField {
                grid: self.grid,
                values: u,
            })
        } else {
            Err(Error::Internal(format!(
                "Poisson solve stalled at residual {res:.3e} (load norm {norm_f:.3e}, \
                 attainable floor {floor:.3e})"
            )))
        }
    }

    /// Raw stiffness solve for internal reuse (no grid bookkeeping).
    pub(crate) fn solve_stiffness_raw(&self, b: &[f64]) -> Vec<f64> {
        self.chol.solve(b)
    }

    /// Dual norm of a raw load slice, for solver merit functions.
    pub(crate) fn dual_norm_raw(&self, f: &[f64]) -> f64 {
        let x = self.chol.solve(f);
        dot(f, &x).max(0.0).sqrt()
    }

    /// Energy norm `sqrt(uᵀ K u)`.
    pub fn norm_h10(&self, u: &DiscreteField) -> Result<f64> {
        self.grid.ensure_same(&u.grid, "norm operand")?;
        Ok(self.stiffness.quad_form(&u.values).max(0.0).sqrt())
    }

    /// Lumped L² norm `sqrt(uᵀ M u)`.
    pub fn norm_l2(&self, u: &DiscreteField) -> Result<f64> {
        self.grid.ensure_same(&u.grid, "norm operand")?;
        Ok((self.mass * u.values.iter().map(|v| v * v).sum::<f64>()).sqrt())
    }

    /// Dual norm `sqrt(Fᵀ K⁻¹ F)` through the cached factorization.
    pub fn norm_hminus1(&self, f: &DualVector) -> Result<f64> {
        self.grid.ensure_same(&f.grid, "norm operand")?;
        let x = self.chol.solve(&f.values);
        Ok(dot(&f.values, &x).max(0.0).sqrt())
    }

    /// Energy inner product `uᵀ K v`.
    pub fn h10_inner(&self, u: &DiscreteField, v: &DiscreteField) -> Result<f64> {
        self.grid.ensure_same(&u.grid, "inner operand")?;
        self.grid.ensure_same(&v.grid, "inner operand")?;
        let mut kv = vec![0.0; v.values.len()];
        self.stiffness.matvec(&v.values, &mut kv);
        Ok(dot(&u.values, &kv))
    }

    /// Lumped L² inner product `uᵀ M v`.
    pub fn l2_inner(&self, u: &DiscreteField, v: &DiscreteField) -> Result<f64> {
        self.grid.ensure_same(&u.grid, "inner operand")?;
        self.grid.ensure_same(&v.grid, "inner operand")?;
        Ok(self.mass * dot(&u.values, &v.values))
    }

    /// Functional `⟨-Δψ, e_i⟩ = ∫ ∇ψ·∇e_i` for an obstacle with constant
    /// boundary trace.  The boundary columns of the full stiffness matrix
    /// are folded in, so a constant obstacle yields exactly zero.
    pub fn neg_laplacian_dual(&self, psi: &DiscreteField, boundary: f64) -> Result<DualVector> {
        self.grid.ensure_same(&psi.grid, "obstacle")?;
        let mut out = DualVector::zeros(self.grid);
        self.stiffness.matvec(&psi.values, &mut out.values);
        let n = self.grid.n_interior();
        match self.grid.extent() {
            Extent::Interval { .. } => {
                let c = 1.0 / self.grid.h();
                out.values[0] -= c * boundary;
                out.values[n - 1] -= c * boundary;
            }
            Extent::Rect { .. } => {
                for iy in 0..n {
                    for ix in 0..n {
                        let mut sides = 0.0;
                        if ix == 0 {
                            sides += 1.0;
                        }
                        if ix == n - 1 {
                            sides += 1.0;
                        }
                        if iy == 0 {
                            sides += 1.0;
                        }
                        if iy == n - 1 {
                            sides += 1.0;
                        }
                        if sides > 0.0 {
                            out.values[iy * n + ix] -= sides * boundary;
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

fn assemble_stiffness(grid: &Grid) -> SymBandMatrix {
    let n = grid.n_interior();
    match grid.extent() {
        Extent::Interval { .. } => {
            let c = 1.0 / grid.h();
            let mut k = SymBandMatrix::zeros(n, 1);
            for i in 0..n {
                k.set(i, i, 2.0 * c);
                if i > 0 {
                    k.set(i, i - 1, -c);
                }
            }
            k
        }
        Extent::Rect { .. } => {
            // P1 on the right-triangle split of square cells: the h factors
            // cancel and the classical 5-point stencil remains.
            let total = n * n;
            let mut k = SymBandMatrix::zeros(total, n);
            for iy in 0..n {
                for ix in 0..n {
                    let i = iy * n + ix;
                    k.set(i, i, 4.0);
                    if ix > 0 {
                        k.set(i, i - 1, -1.0);
                    }
                    if iy > 0 {
                        k.set(i, i - n, -1.0);
                    }
                }
            }
            k
        }
    }
}

/// Smallest generalized eigenvalue of `K u = λ M u` by inverse power
/// iteration on the cached factorization; returns `1/sqrt(λ_min)`.
fn poincare_constant(k: &SymBandMatrix, mass: f64, chol: &BandCholesky) -> Result<f64> {
    let n = k.n();
    let mut x = vec![1.0f64; n];
    let norm0 = (mass * dot(&x, &x)).sqrt();
    for xi in &mut x {
        *xi /= norm0;
    }
    let mut lambda_old = f64::INFINITY;
    for _ in 0..10_000 {
        let mx: Vec<f64> = x.iter().map(|v| v * mass).collect();
        let y = chol.solve(&mx);
        let norm_y = (mass * dot(&y, &y)).sqrt();
        if norm_y == 0.0 {
            return Err(Error::Internal("power iteration collapsed to zero".into()));
        }
        x = y.iter().map(|v| v / norm_y).collect();
        let lambda = k.quad_form(&x) / (mass * dot(&x, &x));
        if (lambda - lambda_old).abs() <= 1e-8 * lambda.abs() {
            return Ok(1.0 / lambda.sqrt());
        }
        lambda_old = lambda;
    }
    Err(Error::Internal(
        "power iteration for the Poincaré constant did not settle".into(),
    ))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn l2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}
