//! Physical problem definition and the finite-difference reference solver.
//!
//! The solver advances
//!
//! ```text
//! u_t + v_x u_x + v_y u_y = D (u_xx + u_yy)
//! ```
//!
//! with forward Euler in time and second-order central differences in space,
//! clamping `u = 0` on all four edges after every step.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Normal};

/// Variance of the Gaussian initial release, `1 / 200`.
pub const IC_VARIANCE: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainSpec {
    pub t_final: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub diffusion_d: f64,
    pub vel_x: f64,
    pub vel_y: f64,
}

impl Default for DomainSpec {
    fn default() -> Self {
        Self { t_final: 0.25, x_max: 1.0, y_max: 1.0, diffusion_d: 0.01, vel_x: 0.5, vel_y: 0.5 }
    }
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.t_final > 0.0
            && self.x_max > 0.0
            && self.y_max > 0.0
            && self.diffusion_d >= 0.0
            && self.vel_x.is_finite()
            && self.vel_y.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("domain out of range: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    /// Number of time steps; `nt + 1` levels are stored.
    pub nt: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { nx: 51, ny: 51, nt: 100 }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nx >= 3 && self.ny >= 3 && self.nt >= 1 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("grid needs nx, ny >= 3 and nt >= 1, got {self:?}")))
        }
    }

    pub fn dx(&self, spec: &DomainSpec) -> f64 {
        spec.x_max / (self.nx - 1) as f64
    }

    pub fn dy(&self, spec: &DomainSpec) -> f64 {
        spec.y_max / (self.ny - 1) as f64
    }

    pub fn dt(&self, spec: &DomainSpec) -> f64 {
        spec.t_final / self.nt as f64
    }

    pub fn levels(&self) -> usize {
        self.nt + 1
    }

    pub fn nodes_per_level(&self) -> usize {
        self.nx * self.ny
    }

    pub fn total_values(&self) -> usize {
        self.levels() * self.nodes_per_level()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub bc_abs_sigma: f64,
    pub ic_rel_sigma: f64,
    pub data_rel_sigma: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { bc_abs_sigma: 0.01, ic_rel_sigma: 0.005, data_rel_sigma: 0.005, seed: 0 }
    }
}

impl NoiseSpec {
    pub fn noiseless(seed: u64) -> Self {
        Self { bc_abs_sigma: 0.0, ic_rel_sigma: 0.0, data_rel_sigma: 0.0, seed }
    }

    pub fn validate(&self) -> Result<()> {
        let sig = [self.bc_abs_sigma, self.ic_rel_sigma, self.data_rel_sigma];
        if sig.iter().all(|s| *s >= 0.0 && s.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("noise sigmas must be >= 0, got {self:?}")))
        }
    }
}

/// Dense space-time concentration field, indexed `[level][ix][iy]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSolution {
    pub spec: DomainSpec,
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl GridSolution {
    #[inline]
    pub fn index(&self, level: usize, ix: usize, iy: usize) -> usize {
        (level * self.grid.nx + ix) * self.grid.ny + iy
    }

    #[inline]
    pub fn at(&self, level: usize, ix: usize, iy: usize) -> f64 {
        self.values[self.index(level, ix, iy)]
    }

    /// The `nx * ny` slice of one time level.
    pub fn level(&self, level: usize) -> &[f64] {
        let n = self.grid.nodes_per_level();
        &self.values[level * n..(level + 1) * n]
    }

    pub fn time_of(&self, level: usize) -> f64 {
        level as f64 * self.grid.dt(&self.spec)
    }

    pub fn x_of(&self, ix: usize) -> f64 {
        ix as f64 * self.grid.dx(&self.spec)
    }

    pub fn y_of(&self, iy: usize) -> f64 {
        iy as f64 * self.grid.dy(&self.spec)
    }
}

/// Gaussian release centred at (0.5, 0.5).
#[inline]
pub fn initial_condition(x: f64, y: f64) -> f64 {
    (-100.0 * ((x - 0.5).powi(2) + (y - 0.5).powi(2))).exp()
}

/// Free-space solution for the Gaussian initial condition.
///
/// The release translates with the velocity and spreads with variance
/// `IC_VARIANCE + 2 D t`, conserving mass. It ignores the Dirichlet edges, so
/// it is only an oracle while the plume stays far from them.
pub fn analytic_solution(spec: &DomainSpec, t: f64, x: f64, y: f64) -> f64 {
    let var = IC_VARIANCE + 2.0 * spec.diffusion_d * t;
    let dx = x - 0.5 - spec.vel_x * t;
    let dy = y - 0.5 - spec.vel_y * t;
    (IC_VARIANCE / var) * (-(dx * dx + dy * dy) / (2.0 * var)).exp()
}

/// Analytic field sampled on every node of one time level.
pub fn analytic_level(spec: &DomainSpec, grid: &GridSpec, t: f64) -> Vec<f64> {
    let (dx, dy) = (grid.dx(spec), grid.dy(spec));
    let mut out = Vec::with_capacity(grid.nodes_per_level());
    for ix in 0..grid.nx {
        for iy in 0..grid.ny {
            out.push(analytic_solution(spec, t, ix as f64 * dx, iy as f64 * dy));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub r_x: f64,
    pub r_y: f64,
    pub c_x: f64,
    pub c_y: f64,
    pub peclet_x: f64,
    pub peclet_y: f64,
    pub passed: bool,
}

impl fmt::Display for StabilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "r_x={:.6} r_y={:.6} c_x={:.6} c_y={:.6} pe_x={:.6} pe_y={:.6} stable={}",
            self.r_x, self.r_y, self.c_x, self.c_y, self.peclet_x, self.peclet_y, self.passed
        )
    }
}

/// Diffusion numbers, Courant numbers and cell Péclet numbers of the explicit
/// scheme. Passes iff `r_x + r_y <= 0.5`, both Courant numbers are at most 1
/// and both cell Péclet numbers are at most 2.
pub fn check_stability(spec: &DomainSpec, grid: &GridSpec) -> StabilityReport {
    let (dx, dy, dt) = (grid.dx(spec), grid.dy(spec), grid.dt(spec));
    let d = spec.diffusion_d;
    let r_x = d * dt / (dx * dx);
    let r_y = d * dt / (dy * dy);
    let c_x = spec.vel_x.abs() * dt / dx;
    let c_y = spec.vel_y.abs() * dt / dy;
    let peclet = |v: f64, h: f64| {
        if v == 0.0 {
            0.0
        } else if d == 0.0 {
            f64::INFINITY
        } else {
            v.abs() * h / d
        }
    };
    let peclet_x = peclet(spec.vel_x, dx);
    let peclet_y = peclet(spec.vel_y, dy);
    let passed = r_x + r_y <= 0.5 && c_x <= 1.0 && c_y <= 1.0 && peclet_x <= 2.0 && peclet_y <= 2.0;
    StabilityReport { r_x, r_y, c_x, c_y, peclet_x, peclet_y, passed }
}

/// Solves on the full grid. Fails with [`Error::StabilityViolation`] unless
/// the scheme is stable or `force` is set.
pub fn solve_fdm(spec: &DomainSpec, grid: &GridSpec, force: bool) -> Result<GridSolution> {
    spec.validate()?;
    grid.validate()?;
    let report = check_stability(spec, grid);
    if !report.passed && !force {
        return Err(Error::StabilityViolation(report));
    }

    let (nx, ny) = (grid.nx, grid.ny);
    let (dx, dy, dt) = (grid.dx(spec), grid.dy(spec), grid.dt(spec));
    let n = nx * ny;
    let mut values = vec![0.0; grid.total_values()];
    for ix in 0..nx {
        for iy in 0..ny {
            values[ix * ny + iy] = initial_condition(ix as f64 * dx, iy as f64 * dy);
        }
    }

    // Stencil weights of u_new = sum(w * u) on the interior.
    let d = spec.diffusion_d;
    let w_east = dt * (d / (dx * dx) - spec.vel_x / (2.0 * dx));
    let w_west = dt * (d / (dx * dx) + spec.vel_x / (2.0 * dx));
    let w_north = dt * (d / (dy * dy) - spec.vel_y / (2.0 * dy));
    let w_south = dt * (d / (dy * dy) + spec.vel_y / (2.0 * dy));
    let w_center = 1.0 - 2.0 * dt * d * (1.0 / (dx * dx) + 1.0 / (dy * dy));

    for k in 1..grid.levels() {
        let (prev_part, next_part) = values.split_at_mut(k * n);
        let prev = &prev_part[(k - 1) * n..];
        let next = &mut next_part[..n];
        // Edges stay at exactly zero from the allocation.
        for ix in 1..nx - 1 {
            let row = ix * ny;
            for iy in 1..ny - 1 {
                let c = row + iy;
                next[c] = w_center * prev[c]
                    + w_east * prev[c + ny]
                    + w_west * prev[c - ny]
                    + w_north * prev[c + 1]
                    + w_south * prev[c - 1];
            }
        }
    }

    Ok(GridSolution { spec: *spec, grid: *grid, values })
}

pub fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// `U_clean + ε` with `ε ~ N(0, data_rel_sigma · std(U_clean))` per entry.
pub fn add_field_noise(sol: &GridSolution, noise: &NoiseSpec) -> GridSolution {
    let mut out = sol.clone();
    if noise.data_rel_sigma == 0.0 {
        return out;
    }
    let sigma = noise.data_rel_sigma * population_std(&sol.values);
    let mut normal = Normal::new(rng::derive_seed(noise.seed, "field-noise"));
    for v in &mut out.values {
        *v += normal.scaled(sigma);
    }
    out
}
