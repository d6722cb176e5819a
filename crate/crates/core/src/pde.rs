//! Finite-difference kernels for the transformed degenerate system.
//!
//! The spatial operator of one component at time t is
//!
//! ```text
//!   (A u)_j = −b(t)·[a_{j+1/2}(u_{j+1}−u_j) − a_{j−1/2}(u_j−u_{j−1})]/dx²
//!             − c_j·(u_{j+1}−u_{j−1})/(2dx),        c_j = (ℓ'/ℓ)(t)·x_j,
//! ```
//!
//! with the diffusion coefficient evaluated at half-points a_{j±1/2} =
//! a(x_j ± dx/2), so a is never differentiated (a' blows up at 0) and the
//! first flux weight a_{1/2} stays positive.  The adjoint operator replaces
//! the drift by its divergence form (c p)_x, discretized centrally, which
//! makes the assembled backward matrix the exact transpose of the forward
//! one.  Time stepping is implicit Euler; the adjoint recursion is the exact
//! transpose of the forward recursion, giving the discrete duality
//!
//! ```text
//!   Σ_n dt ⟨(L w)ⁿ, pⁿ⟩ = Σ_n dt ⟨wⁿ, (L* p)ⁿ⟩      (w⁰ = 0, p^{N+1} = 0)
//! ```
//!
//! on which every gradient computation in the control layers rests.

use crate::error::{Result, SolverError};
use crate::geometry::TransformedCoefficients;
use crate::grid::{Field, Grid, RegionMask, StatePair};

/// Semilinear coupling (F₁, F₂): closed-form families with analytic first and
/// second partials, globally bounded, F_i(0,0) = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CouplingF {
    /// F_i(y₁,y₂) = c_{i1}·y₁ + c_{i2}·y₂.
    Linear { c: [[f64; 2]; 2] },
    /// F_i(y₁,y₂) = amp_{i1}·sin(y₁) + amp_{i2}·sin(y₂).
    BoundedSine { amp: [[f64; 2]; 2] },
}

impl CouplingF {
    pub fn zero() -> Self {
        CouplingF::Linear { c: [[0.0; 2]; 2] }
    }

    /// F_i(y₁, y₂).
    pub fn eval(&self, i: usize, y1: f64, y2: f64) -> f64 {
        match *self {
            CouplingF::Linear { c } => c[i][0] * y1 + c[i][1] * y2,
            CouplingF::BoundedSine { amp } => amp[i][0] * y1.sin() + amp[i][1] * y2.sin(),
        }
    }

    /// D_j F_i(y₁, y₂) (j = 0, 1 for the two arguments).
    pub fn d(&self, i: usize, j: usize, y1: f64, y2: f64) -> f64 {
        match *self {
            CouplingF::Linear { c } => c[i][j],
            CouplingF::BoundedSine { amp } => {
                let y = if j == 0 { y1 } else { y2 };
                amp[i][j] * y.cos()
            }
        }
    }

    /// D²_{jk} F_i(y₁, y₂).
    pub fn d2(&self, i: usize, j: usize, k: usize, y1: f64, y2: f64) -> f64 {
        match *self {
            CouplingF::Linear { .. } => 0.0,
            CouplingF::BoundedSine { amp } => {
                if j != k {
                    0.0
                } else {
                    let y = if j == 0 { y1 } else { y2 };
                    -amp[i][j] * y.sin()
                }
            }
        }
    }

    /// Linearization coefficients at the origin, c_{ij} = D_j F_i(0,0).
    pub fn linearization_at_zero(&self) -> [[f64; 2]; 2] {
        let mut c = [[0.0; 2]; 2];
        for (i, row) in c.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.d(i, j, 0.0, 0.0);
            }
        }
        c
    }

    /// A bound M on all first and second partials.
    pub fn derivative_bound(&self) -> f64 {
        match *self {
            CouplingF::Linear { c } => c.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())),
            CouplingF::BoundedSine { amp } => {
                amp.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
            }
        }
    }

    /// Samples F_i(0,0) = 0 and |D F|, |D² F| ≤ M on a test box.
    pub fn check_hypotheses(&self, box_half_width: f64, n_samples: usize) -> CouplingReport {
        let m = self.derivative_bound();
        let mut max_origin = 0.0f64;
        let mut max_excess = f64::NEG_INFINITY;
        for i in 0..2 {
            max_origin = max_origin.max(self.eval(i, 0.0, 0.0).abs());
        }
        for a in 0..n_samples {
            for b in 0..n_samples {
                let y1 = box_half_width * (2.0 * a as f64 / (n_samples - 1) as f64 - 1.0);
                let y2 = box_half_width * (2.0 * b as f64 / (n_samples - 1) as f64 - 1.0);
                for i in 0..2 {
                    for j in 0..2 {
                        max_excess = max_excess.max(self.d(i, j, y1, y2).abs() - m);
                        for k in 0..2 {
                            max_excess = max_excess.max(self.d2(i, j, k, y1, y2).abs() - m);
                        }
                    }
                }
            }
        }
        CouplingReport {
            origin_value: max_origin,
            max_derivative_excess: max_excess,
        }
    }
}

/// Sampled verification of the coupling hypotheses.
#[derive(Debug, Clone, Copy)]
pub struct CouplingReport {
    pub origin_value: f64,
    pub max_derivative_excess: f64,
}

/// Leader and follower controls with their region masks.
#[derive(Debug, Clone)]
pub struct ControlSet {
    pub h: Field,
    pub v1: Field,
    pub v2: Field,
    pub leader_region: RegionMask,
    pub follower_regions: [RegionMask; 2],
    pub observation_region: RegionMask,
}

impl ControlSet {
    pub fn zeros(
        grid: &Grid,
        leader_region: RegionMask,
        follower_regions: [RegionMask; 2],
        observation_region: RegionMask,
    ) -> Self {
        Self {
            h: Field::zeros(grid),
            v1: Field::zeros(grid),
            v2: Field::zeros(grid),
            leader_region,
            follower_regions,
            observation_region,
        }
    }

    /// Zeroes every control outside its mask.
    pub fn enforce_masks(&mut self) {
        let n_t = self.h.n_t();
        let n_x = self.h.n_x();
        for n in 0..=n_t {
            for j in 0..n_x + 2 {
                if !(j >= 1 && j <= n_x && self.leader_region.contains(j)) {
                    *self.h.at_mut(n, j) = 0.0;
                }
                if !(j >= 1 && j <= n_x && self.follower_regions[0].contains(j)) {
                    *self.v1.at_mut(n, j) = 0.0;
                }
                if !(j >= 1 && j <= n_x && self.follower_regions[1].contains(j)) {
                    *self.v2.at_mut(n, j) = 0.0;
                }
            }
        }
    }
}

/// Per-grid cache of the discrete coefficients: half-point diffusion values,
/// b(t_n), and the drift ratio ℓ'(t_n)/ℓ(t_n).
#[derive(Debug, Clone)]
pub struct Discretization {
    grid: Grid,
    /// a(x_j + dx/2) for j = 0..n_x (flux between nodes j and j+1).
    a_half: Vec<f64>,
    /// b(t_n), n = 0..n_t.
    b: Vec<f64>,
    /// ℓ'(t_n)/ℓ(t_n), n = 0..n_t.
    drift_ratio: Vec<f64>,
}

impl Discretization {
    pub fn new(tc: &TransformedCoefficients, grid: Grid) -> Result<Self> {
        let dx = grid.dx();
        let diff = tc.diffusion();
        let mut a_half = Vec::with_capacity(grid.n_x() + 1);
        for j in 0..=grid.n_x() {
            a_half.push(diff.eval_a((j as f64 + 0.5) * dx)?);
        }
        let mut b = Vec::with_capacity(grid.levels());
        let mut drift_ratio = Vec::with_capacity(grid.levels());
        for n in 0..grid.levels() {
            let t = grid.t(n);
            b.push(tc.eval_b(t)?);
            let dom = tc.domain();
            drift_ratio.push(dom.ell_prime(t) / dom.ell(t));
        }
        Ok(Self {
            grid,
            a_half,
            b,
            drift_ratio,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn a_half(&self, j: usize) -> f64 {
        self.a_half[j]
    }

    pub fn b_at(&self, n: usize) -> f64 {
        self.b[n]
    }

    pub fn drift_ratio_at(&self, n: usize) -> f64 {
        self.drift_ratio[n]
    }

    /// Forward spatial operator A at time level n (interior rows only).
    pub fn forward_tridiagonal(&self, n: usize) -> Tridiagonal {
        let g = &self.grid;
        let dx = g.dx();
        let inv_dx2 = 1.0 / (dx * dx);
        let inv_2dx = 0.5 / dx;
        let b = self.b[n];
        let r = self.drift_ratio[n];
        let nx = g.n_x();
        let mut lower = vec![0.0; nx];
        let mut diag = vec![0.0; nx];
        let mut upper = vec![0.0; nx];
        for j in 1..=nx {
            let c = r * g.x(j);
            lower[j - 1] = -b * self.a_half[j - 1] * inv_dx2 + c * inv_2dx;
            diag[j - 1] = b * (self.a_half[j - 1] + self.a_half[j]) * inv_dx2;
            upper[j - 1] = -b * self.a_half[j] * inv_dx2 - c * inv_2dx;
        }
        Tridiagonal { lower, diag, upper }
    }

    /// Adjoint spatial operator A* at time level n: same diffusion, drift in
    /// divergence form.  Entrywise the transpose of `forward_tridiagonal`.
    pub fn adjoint_tridiagonal(&self, n: usize) -> Tridiagonal {
        let g = &self.grid;
        let dx = g.dx();
        let inv_dx2 = 1.0 / (dx * dx);
        let inv_2dx = 0.5 / dx;
        let b = self.b[n];
        let r = self.drift_ratio[n];
        let nx = g.n_x();
        let mut lower = vec![0.0; nx];
        let mut diag = vec![0.0; nx];
        let mut upper = vec![0.0; nx];
        for j in 1..=nx {
            let c_prev = r * g.x(j - 1);
            let c_next = r * g.x(j + 1);
            lower[j - 1] = -b * self.a_half[j - 1] * inv_dx2 - c_prev * inv_2dx;
            diag[j - 1] = b * (self.a_half[j - 1] + self.a_half[j]) * inv_dx2;
            upper[j - 1] = -b * self.a_half[j] * inv_dx2 + c_next * inv_2dx;
        }
        Tridiagonal { lower, diag, upper }
    }
}

/// Tridiagonal operator over the interior nodes (Dirichlet rows eliminated).
/// `lower[0]` and `upper[n_x−1]` multiply boundary zeros and are never used.
#[derive(Debug, Clone)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// out_j = Σ_k A_{jk} u_k on interior nodes of a padded slice
    /// (u has boundary entries at 0 and n_x+1).
    pub fn apply_padded(&self, u: &[f64], out: &mut [f64]) {
        let n = self.len();
        for j in 1..=n {
            out[j] = self.lower[j - 1] * u[j - 1]
                + self.diag[j - 1] * u[j]
                + self.upper[j - 1] * u[j + 1];
        }
        out[0] = 0.0;
        out[n + 1] = 0.0;
    }

    /// Dense interior matrix, for small-grid inspection in tests.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.len();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        for j in 0..n {
            m[(j, j)] = self.diag[j];
            if j > 0 {
                m[(j, j - 1)] = self.lower[j];
            }
            if j + 1 < n {
                m[(j, j + 1)] = self.upper[j];
            }
        }
        m
    }
}

/// 2×2 block helpers for the coupled pair systems.
pub type Mat2 = [[f64; 2]; 2];

fn mat2_inv(m: &Mat2) -> Option<Mat2> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    Some([
        [m[1][1] * inv, -m[0][1] * inv],
        [-m[1][0] * inv, m[0][0] * inv],
    ])
}

fn mat2_vec(m: &Mat2, v: [f64; 2]) -> [f64; 2] {
    [
        m[0][0] * v[0] + m[0][1] * v[1],
        m[1][0] * v[0] + m[1][1] * v[1],
    ]
}

/// One implicit-Euler step matrix for a coupled pair: block-tridiagonal with
/// scalar off-blocks (both components share the spatial stencil) and full
/// 2×2 diagonal blocks carrying the zeroth-order coupling.
pub struct PairSystem {
    /// dt·lower_j of the shared stencil, j = 0..n_x−1.
    sub: Vec<f64>,
    /// dt·upper_j.
    sup: Vec<f64>,
    /// I + dt·diag_j·I + dt·K_j.
    diag: Vec<Mat2>,
}

impl PairSystem {
    /// Assembles I + dt(A_n ⊕ A_n + K) from a stencil and per-node coupling.
    pub fn new(op: &Tridiagonal, dt: f64, coupling: impl Fn(usize) -> Mat2) -> Self {
        let n = op.len();
        let mut sub = Vec::with_capacity(n);
        let mut sup = Vec::with_capacity(n);
        let mut diag = Vec::with_capacity(n);
        for j in 0..n {
            sub.push(dt * op.lower[j]);
            sup.push(dt * op.upper[j]);
            let k = coupling(j);
            diag.push([
                [1.0 + dt * op.diag[j] + dt * k[0][0], dt * k[0][1]],
                [dt * k[1][0], 1.0 + dt * op.diag[j] + dt * k[1][1]],
            ]);
        }
        Self { sub, sup, diag }
    }

    /// Block-Thomas factorization; fails on a singular pivot block.
    pub fn factor(mut self, level: usize) -> Result<PairFactor> {
        let n = self.diag.len();
        let mut inv: Vec<Mat2> = Vec::with_capacity(n);
        for j in 0..n {
            if j > 0 {
                // D_j ← D_j − sub_j · inv(D̃_{j−1}) · sup_{j−1}
                let prev = inv[j - 1];
                let f = self.sub[j] * self.sup[j - 1];
                for r in 0..2 {
                    for c in 0..2 {
                        self.diag[j][r][c] -= f * prev[r][c];
                    }
                }
            }
            let d_inv = mat2_inv(&self.diag[j]).ok_or(SolverError::SingularSystem {
                level,
                pivot: self.diag[j][0][0] * self.diag[j][1][1]
                    - self.diag[j][0][1] * self.diag[j][1][0],
            })?;
            inv.push(d_inv);
        }
        Ok(PairFactor {
            inv,
            sub: self.sub,
            sup: self.sup,
        })
    }
}

/// Reusable block-Thomas factorization of a `PairSystem`.
pub struct PairFactor {
    inv: Vec<Mat2>,
    sub: Vec<f64>,
    sup: Vec<f64>,
}

impl PairFactor {
    /// Solves in place for the interior of two padded component slices.
    pub fn solve(&self, rhs1: &mut [f64], rhs2: &mut [f64]) {
        let n = self.inv.len();
        // forward sweep: g_j ← g_j − sub_j · inv(D̃_{j−1}) · g_{j−1}
        for j in 1..n {
            let g_prev = mat2_vec(&self.inv[j - 1], [rhs1[j], rhs2[j]]);
            rhs1[j + 1] -= self.sub[j] * g_prev[0];
            rhs2[j + 1] -= self.sub[j] * g_prev[1];
        }
        // back substitution
        let zn = mat2_vec(&self.inv[n - 1], [rhs1[n], rhs2[n]]);
        rhs1[n] = zn[0];
        rhs2[n] = zn[1];
        for j in (0..n - 1).rev() {
            let g = [
                rhs1[j + 1] - self.sup[j] * rhs1[j + 2],
                rhs2[j + 1] - self.sup[j] * rhs2[j + 2],
            ];
            let z = mat2_vec(&self.inv[j], g);
            rhs1[j + 1] = z[0];
            rhs2[j + 1] = z[1];
        }
        rhs1[0] = 0.0;
        rhs2[0] = 0.0;
        rhs1[n + 1] = 0.0;
        rhs2[n + 1] = 0.0;
    }
}

/// Options for the semilinear time stepper.
#[derive(Debug, Clone, Copy)]
pub struct StepperOptions {
    /// One Newton step per level (default) or a full Newton loop.
    pub full_newton: bool,
    pub newton_tol: f64,
    pub max_newton: usize,
}

impl Default for StepperOptions {
    fn default() -> Self {
        Self {
            full_newton: false,
            newton_tol: 1e-12,
            max_newton: 25,
        }
    }
}

/// Forward solve of the semilinear pair system
///
/// ```text
///   y_t + A(t)y + F(y) = src,    y(0) = y⁰,   Dirichlet boundary,
/// ```
///
/// by implicit Euler with the semilinear term handled by one Newton step per
/// level from the previous-level guess (exact for linear couplings), or by a
/// full Newton loop under `opts.full_newton`.
pub fn solve_forward(
    disc: &Discretization,
    coupling: &CouplingF,
    y0: (&[f64], &[f64]),
    src1: &Field,
    src2: &Field,
    opts: &StepperOptions,
) -> Result<StatePair> {
    let grid = disc.grid();
    let nx = grid.n_x();
    let dt = grid.dt();
    let mut state = StatePair::zeros(grid);
    state.y1.set_level(0, y0.0);
    state.y2.set_level(0, y0.1);
    *state.y1.level_mut(0).first_mut().unwrap() = 0.0;
    *state.y1.level_mut(0).last_mut().unwrap() = 0.0;
    *state.y2.level_mut(0).first_mut().unwrap() = 0.0;
    *state.y2.level_mut(0).last_mut().unwrap() = 0.0;

    let mut guess1 = vec![0.0; nx + 2];
    let mut guess2 = vec![0.0; nx + 2];
    for n in 1..=grid.n_t() {
        let op = disc.forward_tridiagonal(n);
        guess1.copy_from_slice(state.y1.level(n - 1));
        guess2.copy_from_slice(state.y2.level(n - 1));
        let mut iter = 0;
        loop {
            // Newton step: (I + dtA + dt·DF(g))·y = y^{n−1} + dt·src − dt·(F(g) − DF(g)g)
            let sys = PairSystem::new(&op, dt, |j| {
                let (g1, g2) = (guess1[j + 1], guess2[j + 1]);
                [
                    [coupling.d(0, 0, g1, g2), coupling.d(0, 1, g1, g2)],
                    [coupling.d(1, 0, g1, g2), coupling.d(1, 1, g1, g2)],
                ]
            });
            let factor = sys.factor(n)?;
            let mut rhs1 = vec![0.0; nx + 2];
            let mut rhs2 = vec![0.0; nx + 2];
            for j in 1..=nx {
                let (g1, g2) = (guess1[j], guess2[j]);
                let lin0 = coupling.eval(0, g1, g2)
                    - coupling.d(0, 0, g1, g2) * g1
                    - coupling.d(0, 1, g1, g2) * g2;
                let lin1 = coupling.eval(1, g1, g2)
                    - coupling.d(1, 0, g1, g2) * g1
                    - coupling.d(1, 1, g1, g2) * g2;
                rhs1[j] = state.y1.at(n - 1, j) + dt * (src1.at(n, j) - lin0);
                rhs2[j] = state.y2.at(n - 1, j) + dt * (src2.at(n, j) - lin1);
            }
            factor.solve(&mut rhs1, &mut rhs2);
            if !opts.full_newton {
                state.y1.set_level(n, &rhs1);
                state.y2.set_level(n, &rhs2);
                break;
            }
            // residual of the nonlinear level equation at the new iterate
            let mut residual = 0.0f64;
            let mut scale = 0.0f64;
            {
                let mut au1 = vec![0.0; nx + 2];
                let mut au2 = vec![0.0; nx + 2];
                op.apply_padded(&rhs1, &mut au1);
                op.apply_padded(&rhs2, &mut au2);
                for j in 1..=nx {
                    let f0 = coupling.eval(0, rhs1[j], rhs2[j]);
                    let f1 = coupling.eval(1, rhs1[j], rhs2[j]);
                    let r1 = rhs1[j] + dt * (au1[j] + f0)
                        - state.y1.at(n - 1, j)
                        - dt * src1.at(n, j);
                    let r2 = rhs2[j] + dt * (au2[j] + f1)
                        - state.y2.at(n - 1, j)
                        - dt * src2.at(n, j);
                    residual = residual.max(r1.abs()).max(r2.abs());
                    scale = scale.max(rhs1[j].abs()).max(rhs2[j].abs());
                }
            }
            guess1.copy_from_slice(&rhs1);
            guess2.copy_from_slice(&rhs2);
            iter += 1;
            if residual <= opts.newton_tol * (1.0 + scale) {
                state.y1.set_level(n, &rhs1);
                state.y2.set_level(n, &rhs2);
                break;
            }
            if iter >= opts.max_newton {
                return Err(SolverError::NewtonDiverged {
                    level: n,
                    residual,
                    iterations: iter,
                });
            }
        }
    }
    Ok(state)
}

/// Wrapper taking the controls of the hierarchical game: component 1 is
/// driven by h·1_O + v¹·1_{O₁} + v²·1_{O₂}, component 2 by nothing.
pub fn solve_forward_controlled(
    disc: &Discretization,
    coupling: &CouplingF,
    y0: (&[f64], &[f64]),
    ctrl: &ControlSet,
    extra_src: Option<(&Field, &Field)>,
    opts: &StepperOptions,
) -> Result<StatePair> {
    let grid = disc.grid();
    let mut src1 = Field::zeros(grid);
    let mut src2 = Field::zeros(grid);
    for n in 0..grid.levels() {
        for j in 1..=grid.n_x() {
            let mut s = 0.0;
            if ctrl.leader_region.contains(j) {
                s += ctrl.h.at(n, j);
            }
            if ctrl.follower_regions[0].contains(j) {
                s += ctrl.v1.at(n, j);
            }
            if ctrl.follower_regions[1].contains(j) {
                s += ctrl.v2.at(n, j);
            }
            *src1.at_mut(n, j) = s;
        }
    }
    if let Some((e1, e2)) = extra_src {
        src1.axpy(1.0, e1);
        src2.axpy(1.0, e2);
    }
    solve_forward(disc, coupling, y0, &src1, &src2, opts)
}

/// Per-node linearization coefficients for an adjoint solve: the 2×2 matrix
/// K(x_j, t_n) with K[i][j] = D_j F_i evaluated along a trajectory (or a
/// constant matrix for the linearized systems).
pub enum AdjointCoupling<'a> {
    Constant([[f64; 2]; 2]),
    AlongTrajectory {
        coupling: &'a CouplingF,
        state: &'a StatePair,
    },
}

impl AdjointCoupling<'_> {
    fn at(&self, n: usize, j: usize) -> Mat2 {
        match self {
            AdjointCoupling::Constant(c) => *c,
            AdjointCoupling::AlongTrajectory { coupling, state } => {
                let y1 = state.y1.at(n, j);
                let y2 = state.y2.at(n, j);
                [
                    [coupling.d(0, 0, y1, y2), coupling.d(0, 1, y1, y2)],
                    [coupling.d(1, 0, y1, y2), coupling.d(1, 1, y1, y2)],
                ]
            }
        }
    }
}

/// Backward solve of one adjoint pair
///
/// ```text
///   −p_t + A*(t)p + K(x,t)ᵀ p = src,    p(T) = terminal,   Dirichlet,
/// ```
///
/// by the exact transpose of the forward implicit-Euler recursion:
/// (I + dt·A*_n + dt·K_nᵀ)pⁿ = p^{n+1} + dt·srcⁿ for n = N−1..0, with the
/// terminal slice stored at level N.
pub fn solve_adjoint_pair(
    disc: &Discretization,
    coupling: &AdjointCoupling,
    terminal: (&[f64], &[f64]),
    src1: &Field,
    src2: &Field,
) -> Result<StatePair> {
    let grid = disc.grid();
    let nx = grid.n_x();
    let dt = grid.dt();
    let mut adj = StatePair::zeros(grid);
    let n_t = grid.n_t();
    adj.y1.set_level(n_t, terminal.0);
    adj.y2.set_level(n_t, terminal.1);
    *adj.y1.level_mut(n_t).first_mut().unwrap() = 0.0;
    *adj.y1.level_mut(n_t).last_mut().unwrap() = 0.0;
    *adj.y2.level_mut(n_t).first_mut().unwrap() = 0.0;
    *adj.y2.level_mut(n_t).last_mut().unwrap() = 0.0;

    for n in (0..n_t).rev() {
        let op = disc.adjoint_tridiagonal(n);
        // transposed coupling: row i gets D_i F_k p_k
        let sys = PairSystem::new(&op, dt, |j| {
            let k = coupling.at(n, j + 1);
            [[k[0][0], k[1][0]], [k[0][1], k[1][1]]]
        });
        let factor = sys.factor(n)?;
        let mut rhs1 = vec![0.0; nx + 2];
        let mut rhs2 = vec![0.0; nx + 2];
        for j in 1..=nx {
            rhs1[j] = adj.y1.at(n + 1, j) + dt * src1.at(n, j);
            rhs2[j] = adj.y2.at(n + 1, j) + dt * src2.at(n, j);
        }
        factor.solve(&mut rhs1, &mut rhs2);
        adj.y1.set_level(n, &rhs1);
        adj.y2.set_level(n, &rhs2);
    }
    Ok(adj)
}

/// Applies the discrete space-time forward operator
/// (L w)ⁿ = (wⁿ − w^{n−1})/dt + (A_n + K_n)wⁿ, n = 1..N, taking w⁰ = 0.
/// Levels 1..N of the result are meaningful; level 0 is zero.
pub fn apply_forward_spacetime(
    disc: &Discretization,
    coupling: &AdjointCoupling,
    w: &StatePair,
) -> (Field, Field) {
    let grid = disc.grid();
    let nx = grid.n_x();
    let dt = grid.dt();
    let mut out1 = Field::zeros(grid);
    let mut out2 = Field::zeros(grid);
    let mut a1 = vec![0.0; nx + 2];
    let mut a2 = vec![0.0; nx + 2];
    for n in 1..=grid.n_t() {
        let op = disc.forward_tridiagonal(n);
        op.apply_padded(w.y1.level(n), &mut a1);
        op.apply_padded(w.y2.level(n), &mut a2);
        for j in 1..=nx {
            let k = coupling.at(n, j);
            let prev1 = if n == 1 { 0.0 } else { w.y1.at(n - 1, j) };
            let prev2 = if n == 1 { 0.0 } else { w.y2.at(n - 1, j) };
            *out1.at_mut(n, j) = (w.y1.at(n, j) - prev1) / dt
                + a1[j]
                + k[0][0] * w.y1.at(n, j)
                + k[0][1] * w.y2.at(n, j);
            *out2.at_mut(n, j) = (w.y2.at(n, j) - prev2) / dt
                + a2[j]
                + k[1][0] * w.y1.at(n, j)
                + k[1][1] * w.y2.at(n, j);
        }
    }
    (out1, out2)
}

/// Applies the discrete space-time adjoint operator
/// (L* p)ⁿ = (pⁿ − p^{n+1})/dt + (A*_n + K_nᵀ)pⁿ, n = 1..N, taking p^{N+1} = 0.
pub fn apply_adjoint_spacetime(
    disc: &Discretization,
    coupling: &AdjointCoupling,
    p: &StatePair,
) -> (Field, Field) {
    let grid = disc.grid();
    let nx = grid.n_x();
    let dt = grid.dt();
    let mut out1 = Field::zeros(grid);
    let mut out2 = Field::zeros(grid);
    let mut a1 = vec![0.0; nx + 2];
    let mut a2 = vec![0.0; nx + 2];
    for n in 1..=grid.n_t() {
        let op = disc.adjoint_tridiagonal(n);
        op.apply_padded(p.y1.level(n), &mut a1);
        op.apply_padded(p.y2.level(n), &mut a2);
        for j in 1..=nx {
            let k = coupling.at(n, j);
            let next1 = if n == grid.n_t() { 0.0 } else { p.y1.at(n + 1, j) };
            let next2 = if n == grid.n_t() { 0.0 } else { p.y2.at(n + 1, j) };
            *out1.at_mut(n, j) = (p.y1.at(n, j) - next1) / dt
                + a1[j]
                + k[0][0] * p.y1.at(n, j)
                + k[1][0] * p.y2.at(n, j);
            *out2.at_mut(n, j) = (p.y2.at(n, j) - next2) / dt
                + a2[j]
                + k[0][1] * p.y1.at(n, j)
                + k[1][1] * p.y2.at(n, j);
        }
    }
    (out1, out2)
}

/// Space-time pairing Σ_{n=1..N} dt Σ_j dx uⁿ_j vⁿ_j used by the duality
/// identity (level 0 excluded: forward residuals live on levels 1..N).
pub fn spacetime_pairing(grid: &Grid, u: &(Field, Field), v: &StatePair) -> f64 {
    let mut acc = 0.0;
    for n in 1..=grid.n_t() {
        for j in 1..=grid.n_x() {
            acc += u.0.at(n, j) * v.y1.at(n, j) + u.1.at(n, j) * v.y2.at(n, j);
        }
    }
    acc * grid.dx() * grid.dt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DegenerateDiffusion, EllFamily, MovingDomain};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(n_x: usize, n_t: usize, gamma: f64) -> Discretization {
        let diff = DegenerateDiffusion::power_law(0.5).unwrap();
        let dom = if gamma == 0.0 {
            MovingDomain::fixed(1.0).unwrap()
        } else {
            MovingDomain::new(1.0, EllFamily::Linear { gamma }, None).unwrap()
        };
        let tc = TransformedCoefficients::new(diff, dom);
        Discretization::new(&tc, Grid::new(n_x, n_t, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn backward_matrix_is_exact_transpose() {
        let disc = setup(16, 8, 0.3);
        for n in [0, 3, 8] {
            let fwd = disc.forward_tridiagonal(n).to_dense();
            let adj = disc.adjoint_tridiagonal(n).to_dense();
            let diff = (&adj - fwd.transpose()).abs().max();
            assert!(diff <= 1e-12, "transpose mismatch {diff} at level {n}");
        }
    }

    #[test]
    fn diffusion_part_is_conservative() {
        // with no drift the stencil annihilates constants away from the boundary
        let disc = setup(16, 4, 0.0);
        let op = disc.forward_tridiagonal(2);
        let ones = vec![1.0; 18];
        let mut out = vec![0.0; 18];
        op.apply_padded(&ones, &mut out);
        for j in 2..=15 {
            assert!(out[j].abs() <= 1e-11, "row {j}: {}", out[j]);
        }
        // interior row sums vanish
        for j in 1..15 {
            let s = op.lower[j] + op.diag[j] + op.upper[j];
            assert!(s.abs() <= 1e-11);
        }
        // degenerate flux: first half-point weight is positive
        assert!(disc.a_half(0) > 0.0);
    }

    #[test]
    fn zero_data_stays_zero() {
        let disc = setup(12, 20, 0.2);
        let grid = *disc.grid();
        let zero = vec![0.0; grid.nodes()];
        let src = Field::zeros(&grid);
        let coupling = CouplingF::BoundedSine {
            amp: [[0.5, 0.3], [0.2, 0.4]],
        };
        let state = solve_forward(
            &disc,
            &coupling,
            (&zero, &zero),
            &src,
            &src,
            &StepperOptions::default(),
        )
        .unwrap();
        assert_eq!(state.y1.max_abs(), 0.0);
        assert_eq!(state.y2.max_abs(), 0.0);
    }

    #[test]
    fn l2_decay_on_fixed_domain() {
        let disc = setup(24, 40, 0.0);
        let grid = *disc.grid();
        let y0: Vec<f64> = (0..grid.nodes())
            .map(|j| (std::f64::consts::PI * grid.x(j)).sin())
            .collect();
        let src = Field::zeros(&grid);
        let state = solve_forward(
            &disc,
            &CouplingF::zero(),
            (&y0, &y0),
            &src,
            &src,
            &StepperOptions::default(),
        )
        .unwrap();
        let dx = grid.dx();
        for n in 1..=grid.n_t() {
            assert!(state.y1.level_l2(n, dx) <= state.y1.level_l2(n - 1, dx) + 1e-14);
        }
        // boundary stays exactly zero
        for n in 0..=grid.n_t() {
            assert_eq!(state.y1.at(n, 0), 0.0);
            assert_eq!(state.y1.at(n, grid.n_x() + 1), 0.0);
        }
    }

    #[test]
    fn max_principle_without_drift() {
        let disc = setup(24, 30, 0.0);
        let grid = *disc.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut y0 = vec![0.0; grid.nodes()];
        for v in y0.iter_mut().take(grid.n_x() + 1).skip(1) {
            *v = rng.gen_range(-1.0..1.0);
        }
        let src = Field::zeros(&grid);
        let state = solve_forward(
            &disc,
            &CouplingF::zero(),
            (&y0, &y0),
            &src,
            &src,
            &StepperOptions::default(),
        )
        .unwrap();
        let level_max =
            |n: usize| state.y1.level(n).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for n in 1..=grid.n_t() {
            assert!(level_max(n) <= level_max(n - 1) + 1e-13);
        }
    }

    #[test]
    fn discrete_duality_bilinear_identity() {
        let disc = setup(64, 128, 0.2);
        let grid = *disc.grid();
        let c = [[0.4, -0.3], [0.25, 0.6]];
        let coupling = AdjointCoupling::Constant(c);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let mut w = StatePair::zeros(&grid);
            let mut p = StatePair::zeros(&grid);
            for n in 1..=grid.n_t() {
                for j in 1..=grid.n_x() {
                    *w.y1.at_mut(n, j) = rng.gen_range(-1.0..1.0);
                    *w.y2.at_mut(n, j) = rng.gen_range(-1.0..1.0);
                    *p.y1.at_mut(n, j) = rng.gen_range(-1.0..1.0);
                    *p.y2.at_mut(n, j) = rng.gen_range(-1.0..1.0);
                }
            }
            let lw = apply_forward_spacetime(&disc, &coupling, &w);
            let lp = apply_adjoint_spacetime(&disc, &coupling, &p);
            let lhs = spacetime_pairing(&grid, &lw, &p);
            let rhs = spacetime_pairing(&grid, &lp, &w);
            let scale = lhs.abs().max(rhs.abs()).max(1e-30);
            assert!(
                ((lhs - rhs) / scale).abs() <= 1e-10,
                "duality violated: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn adjoint_solver_inverts_adjoint_operator() {
        let disc = setup(10, 12, 0.15);
        let grid = *disc.grid();
        let c = [[0.3, 0.1], [-0.2, 0.5]];
        let mut src1 = Field::zeros(&grid);
        let mut src2 = Field::zeros(&grid);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 0..grid.levels() {
            for j in 1..=grid.n_x() {
                *src1.at_mut(n, j) = rng.gen_range(-1.0..1.0);
                *src2.at_mut(n, j) = rng.gen_range(-1.0..1.0);
            }
        }
        let zero = vec![0.0; grid.nodes()];
        let p = solve_adjoint_pair(
            &disc,
            &AdjointCoupling::Constant(c),
            (&zero, &zero),
            &src1,
            &src2,
        )
        .unwrap();
        // zero terminal data and zero sources → zero adjoint
        let z = solve_adjoint_pair(
            &disc,
            &AdjointCoupling::Constant(c),
            (&zero, &zero),
            &Field::zeros(&grid),
            &Field::zeros(&grid),
        )
        .unwrap();
        assert_eq!(z.y1.max_abs(), 0.0);
        // the recursion satisfies (I + dtA* + dtKᵀ)pⁿ − p^{n+1} = dt·srcⁿ
        let dt = grid.dt();
        for n in 0..grid.n_t() {
            let op = disc.adjoint_tridiagonal(n);
            let mut ap1 = vec![0.0; grid.nodes()];
            let mut ap2 = vec![0.0; grid.nodes()];
            op.apply_padded(p.y1.level(n), &mut ap1);
            op.apply_padded(p.y2.level(n), &mut ap2);
            for j in 1..=grid.n_x() {
                let r1 = p.y1.at(n, j)
                    + dt * (ap1[j] + c[0][0] * p.y1.at(n, j) + c[1][0] * p.y2.at(n, j))
                    - p.y1.at(n + 1, j)
                    - dt * src1.at(n, j);
                assert!(r1.abs() <= 1e-11, "residual {r1} at ({n},{j})");
            }
        }
    }

    #[test]
    fn manufactured_solution_convergence() {
        // y₁ = sin(πx)e^{−t}, y₂ = x(1−x)e^{−t} with sources computed from
        // the strong form; orders measured in an interior-weighted norm.
        let pi = std::f64::consts::PI;
        let alpha = 0.5;
        let gamma = 0.2;
        let c = [[0.3, 0.2], [0.1, 0.4]];
        let exact1 = |x: f64, t: f64| (pi * x).sin() * (-t).exp();
        let exact2 = |x: f64, t: f64| x * (1.0 - x) * (-t).exp();

        // sources: y_t − b(a y_x)_x − c_drift·y_x + F(y), with the singular
        // diffusion term supplied as the exact flux difference over each cell
        // (the finite-volume consistency the half-point stencil realizes; the
        // pointwise value x^{α−1}·… is unbounded at the degenerate end)
        let exact_flux = |k: usize, x: f64, t: f64| -> f64 {
            let e = (-t).exp();
            if k == 0 {
                x.powf(alpha) * pi * (pi * x).cos() * e
            } else {
                x.powf(alpha) * (1.0 - 2.0 * x) * e
            }
        };
        let source = |k: usize, x: f64, t: f64, b: f64, ratio: f64, dx: f64| -> f64 {
            let e = (-t).exp();
            let y1 = exact1(x, t);
            let y2 = exact2(x, t);
            let coupling = c[k][0] * y1 + c[k][1] * y2;
            let flux_diff =
                (exact_flux(k, x + 0.5 * dx, t) - exact_flux(k, x - 0.5 * dx, t)) / dx;
            if k == 0 {
                let y1x = pi * (pi * x).cos() * e;
                -y1 - b * flux_diff - ratio * x * y1x + coupling
            } else {
                let y2x = (1.0 - 2.0 * x) * e;
                -y2 - b * flux_diff - ratio * x * y2x + coupling
            }
        };

        let run = |n_x: usize, n_t: usize| -> f64 {
            let disc = setup(n_x, n_t, gamma);
            let grid = *disc.grid();
            let mut s1 = Field::zeros(&grid);
            let mut s2 = Field::zeros(&grid);
            for n in 0..grid.levels() {
                let t = grid.t(n);
                let b = disc.b_at(n);
                let ratio = disc.drift_ratio_at(n);
                for j in 1..=grid.n_x() {
                    let x = grid.x(j);
                    *s1.at_mut(n, j) = source(0, x, t, b, ratio, grid.dx());
                    *s2.at_mut(n, j) = source(1, x, t, b, ratio, grid.dx());
                }
            }
            let y0_1: Vec<f64> = (0..grid.nodes()).map(|j| exact1(grid.x(j), 0.0)).collect();
            let y0_2: Vec<f64> = (0..grid.nodes()).map(|j| exact2(grid.x(j), 0.0)).collect();
            let state = solve_forward(
                &disc,
                &CouplingF::Linear { c },
                (&y0_1, &y0_2),
                &s1,
                &s2,
                &StepperOptions::default(),
            )
            .unwrap();
            // interior-weighted L² error at t = T: weight x(1−x) suppresses
            // the degenerate endpoint where the manufactured source is singular
            let dx = grid.dx();
            let n = grid.n_t();
            let mut acc = 0.0;
            for j in 1..=grid.n_x() {
                let x = grid.x(j);
                let w = x * (1.0 - x);
                let e1 = state.y1.at(n, j) - exact1(x, 1.0);
                let e2 = state.y2.at(n, j) - exact2(x, 1.0);
                acc += w * (e1 * e1 + e2 * e2) * dx;
            }
            acc.sqrt()
        };

        // space refinement at fine fixed time step
        let es1 = run(32, 4096);
        let es2 = run(64, 4096);
        let space_ratio = es1 / es2;
        assert!(
            space_ratio >= 2.8,
            "space ratio {space_ratio} (errors {es1:.3e}, {es2:.3e})"
        );
        // time refinement at fine fixed space step
        let et1 = run(256, 16);
        let et2 = run(256, 32);
        let time_ratio = et1 / et2;
        assert!(
            time_ratio >= 1.8,
            "time ratio {time_ratio} (errors {et1:.3e}, {et2:.3e})"
        );
    }

    #[test]
    fn full_newton_matches_single_step_for_linear() {
        let disc = setup(12, 10, 0.1);
        let grid = *disc.grid();
        let coupling = CouplingF::Linear {
            c: [[0.5, -0.2], [0.3, 0.7]],
        };
        let y0: Vec<f64> = (0..grid.nodes())
            .map(|j| (2.0 * std::f64::consts::PI * grid.x(j)).sin())
            .collect();
        let src = Field::from_fn(&grid, |x, t| x * t);
        let a = solve_forward(
            &disc,
            &coupling,
            (&y0, &y0),
            &src,
            &src,
            &StepperOptions::default(),
        )
        .unwrap();
        let b = solve_forward(
            &disc,
            &coupling,
            (&y0, &y0),
            &src,
            &src,
            &StepperOptions {
                full_newton: true,
                ..Default::default()
            },
        )
        .unwrap();
        for (u, v) in a.y1.data().iter().zip(b.y1.data().iter()) {
            assert!((u - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn coupling_hypotheses_report() {
        let f = CouplingF::BoundedSine {
            amp: [[0.5, 0.3], [0.2, 0.4]],
        };
        let rep = f.check_hypotheses(10.0, 41);
        assert_eq!(rep.origin_value, 0.0);
        assert!(rep.max_derivative_excess <= 1e-12);
        assert_eq!(f.linearization_at_zero()[0][0], 0.5);
    }
}
