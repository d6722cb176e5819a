//! Space-time discretization: uniform grids, scalar fields, region masks,
//! and the truncated time window.
//!
//! Interior nodes are x_j = j·dx, j = 1..n_x with dx = 1/(n_x+1); the
//! boundary nodes j = 0 and j = n_x+1 carry homogeneous Dirichlet values and
//! are stored explicitly (always zero along trajectories).  Time levels are
//! t_n = n·dt, n = 0..n_t with dt = T/n_t.

use crate::error::{Result, SolverError};

/// Uniform space-time grid on the unit cylinder (0,1) × (0,T).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    n_x: usize,
    n_t: usize,
    horizon: f64,
}

impl Grid {
    pub fn new(n_x: usize, n_t: usize, horizon: f64) -> Result<Self> {
        if n_x < 2 || n_t < 2 {
            return Err(SolverError::Domain(format!(
                "grid too small: n_x = {n_x}, n_t = {n_t}"
            )));
        }
        if horizon <= 0.0 {
            return Err(SolverError::Domain("horizon must be positive".into()));
        }
        Ok(Self { n_x, n_t, horizon })
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dx(&self) -> f64 {
        1.0 / (self.n_x as f64 + 1.0)
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_t as f64
    }

    /// x_j including boundary nodes, j = 0..n_x+1.
    pub fn x(&self, j: usize) -> f64 {
        j as f64 * self.dx()
    }

    pub fn t(&self, n: usize) -> f64 {
        n as f64 * self.dt()
    }

    /// Number of stored nodes per level (interior + 2 boundary).
    pub fn nodes(&self) -> usize {
        self.n_x + 2
    }

    /// Number of stored time levels (including t = 0).
    pub fn levels(&self) -> usize {
        self.n_t + 1
    }
}

/// One scalar unknown on the full space-time grid, level-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    n_x: usize,
    n_t: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            n_x: grid.n_x,
            n_t: grid.n_t,
            data: vec![0.0; grid.nodes() * grid.levels()],
        }
    }

    pub fn from_fn(grid: &Grid, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut out = Self::zeros(grid);
        for n in 0..grid.levels() {
            let t = grid.t(n);
            for j in 0..grid.nodes() {
                out.data[n * (grid.n_x + 2) + j] = f(grid.x(j), t);
            }
        }
        out
    }

    #[inline]
    pub fn at(&self, n: usize, j: usize) -> f64 {
        self.data[n * (self.n_x + 2) + j]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, j: usize) -> &mut f64 {
        &mut self.data[n * (self.n_x + 2) + j]
    }

    pub fn level(&self, n: usize) -> &[f64] {
        let w = self.n_x + 2;
        &self.data[n * w..(n + 1) * w]
    }

    pub fn level_mut(&mut self, n: usize) -> &mut [f64] {
        let w = self.n_x + 2;
        &mut self.data[n * w..(n + 1) * w]
    }

    pub fn set_level(&mut self, n: usize, values: &[f64]) {
        self.level_mut(n).copy_from_slice(values);
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// L² norm of one time slice, dx-weighted.
    pub fn level_l2(&self, n: usize, dx: f64) -> f64 {
        self.level(n).iter().map(|v| v * v).sum::<f64>().sqrt() * dx.sqrt()
    }

    /// Max |value| over the whole trajectory.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Space-time L²(dt·dx) inner product.
    pub fn inner(&self, other: &Field, dx: f64, dt: f64) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * dx
            * dt
    }

    pub fn norm(&self, dx: f64, dt: f64) -> f64 {
        self.inner(self, dx, dt).sqrt()
    }

    /// self += c · other.
    pub fn axpy(&mut self, c: f64, other: &Field) {
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for a in self.data.iter_mut() {
            *a *= c;
        }
    }
}

/// The pair of state components (y₁, y₂).
#[derive(Debug, Clone, PartialEq)]
pub struct StatePair {
    pub y1: Field,
    pub y2: Field,
}

impl StatePair {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            y1: Field::zeros(grid),
            y2: Field::zeros(grid),
        }
    }

    pub fn component(&self, k: usize) -> &Field {
        match k {
            0 => &self.y1,
            1 => &self.y2,
            _ => panic!("component index {k} out of range"),
        }
    }

    /// Discrete L² norm of the terminal slice.
    pub fn terminal_norm(&self, grid: &Grid) -> f64 {
        let n = grid.n_t();
        let dx = grid.dx();
        (self.y1.level(n).iter().map(|v| v * v).sum::<f64>()
            + self.y2.level(n).iter().map(|v| v * v).sum::<f64>())
        .sqrt()
            * dx.sqrt()
    }

    /// Discrete L² norm of the initial slice.
    pub fn initial_norm(&self, grid: &Grid) -> f64 {
        let dx = grid.dx();
        (self.y1.level(0).iter().map(|v| v * v).sum::<f64>()
            + self.y2.level(0).iter().map(|v| v * v).sum::<f64>())
        .sqrt()
            * dx.sqrt()
    }
}

/// The four adjoint components (p¹₁, p¹₂, p²₁, p²₂): one backward pair per
/// follower.  All four vanish at t = T.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointQuad {
    /// p¹ = (p¹₁, p¹₂)
    pub p1: StatePair,
    /// p² = (p²₁, p²₂)
    pub p2: StatePair,
}

impl AdjointQuad {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            p1: StatePair::zeros(grid),
            p2: StatePair::zeros(grid),
        }
    }

    pub fn pair(&self, i: usize) -> &StatePair {
        match i {
            0 => &self.p1,
            1 => &self.p2,
            _ => panic!("follower index {i} out of range"),
        }
    }
}

/// Index set of interior nodes covering a real interval (rounded outward).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionMask {
    lo: usize,
    hi: usize,
}

impl RegionMask {
    /// Smallest node range [lo, hi] whose coordinates cover (a, b).
    pub fn from_interval(grid: &Grid, interval: (f64, f64)) -> Result<Self> {
        let (a, b) = interval;
        if !(0.0 <= a && a < b && b <= 1.0) {
            return Err(SolverError::Domain(format!(
                "region ({a}, {b}) must satisfy 0 <= a < b <= 1"
            )));
        }
        let dx = grid.dx();
        let lo = ((a / dx).floor() as usize).max(1);
        let hi = ((b / dx).ceil() as usize).min(grid.n_x());
        if lo > hi {
            return Err(SolverError::Domain(format!(
                "region ({a}, {b}) contains no interior node at n_x = {}",
                grid.n_x()
            )));
        }
        Ok(Self { lo, hi })
    }

    #[inline]
    pub fn contains(&self, j: usize) -> bool {
        j >= self.lo && j <= self.hi
    }

    pub fn lo(&self) -> usize {
        self.lo
    }

    pub fn hi(&self) -> usize {
        self.hi
    }

    pub fn len(&self) -> usize {
        self.hi - self.lo + 1
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> {
        self.lo..=self.hi
    }

    pub fn intersects(&self, other: &RegionMask) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    /// Trapezoid quadrature weight of node j for integrals over the mask
    /// interval (dx at interior nodes, dx/2 at the mask ends).
    pub fn trapezoid_weight(&self, j: usize, dx: f64) -> f64 {
        if !self.contains(j) {
            0.0
        } else if j == self.lo || j == self.hi {
            0.5 * dx
        } else {
            dx
        }
    }
}

/// Time levels inside the truncated window [δT, (1−δ)T].  Singular weights
/// are only evaluated, and controls only act, on these levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeWindow {
    lo: usize,
    hi: usize,
}

impl TimeWindow {
    pub fn from_delta(grid: &Grid, delta_frac: f64) -> Result<Self> {
        if !(delta_frac > 0.0 && delta_frac < 0.1) {
            return Err(SolverError::Domain(format!(
                "delta_frac = {delta_frac} outside (0, 0.1)"
            )));
        }
        let t_lo = delta_frac * grid.horizon();
        let t_hi = (1.0 - delta_frac) * grid.horizon();
        let dt = grid.dt();
        let lo = ((t_lo / dt).ceil() as usize).max(1);
        let hi = ((t_hi / dt).floor() as usize).min(grid.n_t() - 1);
        if lo > hi {
            return Err(SolverError::Domain(
                "truncated window contains no time level; increase n_t".into(),
            ));
        }
        Ok(Self { lo, hi })
    }

    #[inline]
    pub fn contains(&self, n: usize) -> bool {
        n >= self.lo && n <= self.hi
    }

    pub fn lo(&self) -> usize {
        self.lo
    }

    pub fn hi(&self) -> usize {
        self.hi
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> {
        self.lo..=self.hi
    }
}
