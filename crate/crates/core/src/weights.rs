//! Carleman weight families for the degenerate operator.
//!
//! The spatial profile is built from
//!
//! ```text
//!   Ψ(x) = ∫₀ˣ s/a(s) ds          on [0, α'),
//!   Ψ(x) = −∫_{β'}^x s/a(s) ds    on [β', 1],
//! ```
//!
//! joined by a C² quintic bridge on [α', β'] (the inner window of the leader
//! region).  From Ψ the classical singular family is
//!
//! ```text
//!   θ(t) = (t(T−t))⁻⁴,   η(x) = e^{λ(|Ψ|∞+Ψ)},   σ = θη,
//!   φ(x,t) = θ(t)(η(x) − e^{3λ|Ψ|∞}) < 0,
//! ```
//!
//! and the modified family replaces θ by τ = 1/m with m ≥ t⁴(T−t)⁴, m(0) > 0,
//! m = t⁴(T−t)⁴ on [T/2, T], removing the blow-up at t = 0:
//!
//! ```text
//!   ζ = τη,   A(x,t) = τ(t)(η(x) − e^{3λ|Ψ|∞}) < 0.
//! ```
//!
//! The time-only envelopes A*, Â, ζ*, ζ̂ (max/min over x) control the ρ-family
//! used by the control estimates.  Every ρ is an exponential of a quantity
//! proportional to τ(t), which overflows f64 long before the grids of interest
//! are resolved, so all ρ accessors come in log form; linear values are
//! provided where finite and saturate to +∞ otherwise.

use crate::error::{Result, SolverError};
use crate::geometry::DegenerateDiffusion;

/// Scales (s, λ) and the inner window O' = (α', β') of the Carleman weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarlemanParameters {
    pub s: f64,
    pub lambda: f64,
    /// (α', β') with 0 < α' < β' < 1.
    pub inner_window: (f64, f64),
}

impl CarlemanParameters {
    pub fn new(s: f64, lambda: f64, inner_window: (f64, f64)) -> Result<Self> {
        let (a, b) = inner_window;
        if !(s > 0.0) || !(lambda > 0.0) {
            return Err(SolverError::Domain(format!(
                "Carleman scales must be positive: s = {s}, lambda = {lambda}"
            )));
        }
        if !(0.0 < a && a < b && b < 1.0) {
            return Err(SolverError::Domain(format!(
                "inner window ({a}, {b}) must satisfy 0 < alpha' < beta' < 1"
            )));
        }
        Ok(Self {
            s,
            lambda,
            inner_window,
        })
    }
}

/// The spatial weight profile Ψ: power-law integrals outside the inner
/// window, a quintic Hermite bridge (C² at both junctions) inside.
#[derive(Debug, Clone, Copy)]
pub struct PsiFunction {
    alpha: f64,
    alpha_prime: f64,
    beta_prime: f64,
    // bridge endpoint data: value, first and second derivative
    left: [f64; 3],
    right: [f64; 3],
    psi_max: f64,
    psi_min: f64,
    psi_inf: f64,
    x_of_max: f64,
    x_of_min: f64,
}

impl PsiFunction {
    fn antiderivative(alpha: f64, x: f64) -> f64 {
        // ∫₀ˣ s/a(s) ds = ∫₀ˣ s^{1−α} ds = x^{2−α}/(2−α)
        x.powf(2.0 - alpha) / (2.0 - alpha)
    }

    /// Ψ(x) for x ∈ [0,1].
    pub fn eval(&self, x: f64) -> f64 {
        if x < self.alpha_prime {
            Self::antiderivative(self.alpha, x)
        } else if x > self.beta_prime {
            -(Self::antiderivative(self.alpha, x) - Self::antiderivative(self.alpha, self.beta_prime))
        } else {
            self.bridge(x)
        }
    }

    fn bridge(&self, x: f64) -> f64 {
        let len = self.beta_prime - self.alpha_prime;
        let u = (x - self.alpha_prime) / len;
        let u2 = u * u;
        let u3 = u2 * u;
        let u4 = u3 * u;
        let u5 = u4 * u;
        // quintic Hermite basis on [0,1]
        let h0 = 1.0 - 10.0 * u3 + 15.0 * u4 - 6.0 * u5;
        let h1 = u - 6.0 * u3 + 8.0 * u4 - 3.0 * u5;
        let h2 = 0.5 * u2 - 1.5 * u3 + 1.5 * u4 - 0.5 * u5;
        let h3 = 10.0 * u3 - 15.0 * u4 + 6.0 * u5;
        let h4 = -4.0 * u3 + 7.0 * u4 - 3.0 * u5;
        let h5 = 0.5 * u3 - u4 + 0.5 * u5;
        self.left[0] * h0
            + self.left[1] * len * h1
            + self.left[2] * len * len * h2
            + self.right[0] * h3
            + self.right[1] * len * h4
            + self.right[2] * len * len * h5
    }

    pub fn max(&self) -> f64 {
        self.psi_max
    }

    pub fn min(&self) -> f64 {
        self.psi_min
    }

    /// |Ψ|∞ over [0,1].
    pub fn sup_norm(&self) -> f64 {
        self.psi_inf
    }

    /// Locations where Ψ attains its extrema (η inherits them).
    pub fn argmax(&self) -> f64 {
        self.x_of_max
    }

    pub fn argmin(&self) -> f64 {
        self.x_of_min
    }
}

/// Builds Ψ for a weakly degenerate coefficient.  `n_quad` controls the
/// sampling density used to locate the extrema of the bridge (the outer
/// pieces are monotone, so their extrema sit at the junctions).
pub fn build_psi(
    diff: &DegenerateDiffusion,
    params: &CarlemanParameters,
    n_quad: usize,
) -> Result<PsiFunction> {
    if n_quad < 16 {
        return Err(SolverError::Domain("n_quad must be >= 16".into()));
    }
    let alpha = diff.alpha();
    let (ap, bp) = params.inner_window;
    // endpoint data of the bridge: value, Ψ' = x/a(x) = x^{1-α}, Ψ'' = (1−α)x^{−α}
    let left = [
        PsiFunction::antiderivative(alpha, ap),
        ap.powf(1.0 - alpha),
        (1.0 - alpha) * ap.powf(-alpha),
    ];
    let right = [
        0.0,
        -bp.powf(1.0 - alpha),
        -(1.0 - alpha) * bp.powf(-alpha),
    ];
    let mut psi = PsiFunction {
        alpha,
        alpha_prime: ap,
        beta_prime: bp,
        left,
        right,
        psi_max: 0.0,
        psi_min: 0.0,
        psi_inf: 0.0,
        x_of_max: 0.0,
        x_of_min: 0.0,
    };
    let n = n_quad.max(1024);
    let mut max_v = f64::NEG_INFINITY;
    let mut min_v = f64::INFINITY;
    let mut x_max = 0.0;
    let mut x_min = 0.0;
    for i in 0..=n {
        let x = i as f64 / n as f64;
        let v = psi.eval(x);
        if v > max_v {
            max_v = v;
            x_max = x;
        }
        if v < min_v {
            min_v = v;
            x_min = x;
        }
    }
    psi.psi_max = max_v;
    psi.psi_min = min_v;
    psi.psi_inf = max_v.abs().max(min_v.abs());
    psi.x_of_max = x_max;
    psi.x_of_min = x_min;
    Ok(psi)
}

/// Pointwise values of the singular and modified weights at one (x, t).
/// Entries blow up (±∞) at t ∈ {0, T} by design.
#[derive(Debug, Clone, Copy)]
pub struct WeightValues {
    pub theta: f64,
    pub sigma: f64,
    pub phi: f64,
    pub zeta: f64,
    pub a: f64,
}

/// The full Carleman weight family for fixed (s, λ, Ψ, T).
///
/// Immutable after construction; all evaluations are pure.
#[derive(Debug, Clone, Copy)]
pub struct WeightFamily {
    psi: PsiFunction,
    params: CarlemanParameters,
    horizon: f64,
    /// e^{3λ|Ψ|∞}, the constant subtracted inside φ and A.
    e3: f64,
    log_eta_max: f64,
    log_eta_min: f64,
    /// floor value of m on [0, T/4]: m₀ = (T/2)⁸/16.
    m0: f64,
}

impl WeightFamily {
    pub fn new(psi: PsiFunction, params: CarlemanParameters, horizon: f64) -> Result<Self> {
        if horizon <= 0.0 {
            return Err(SolverError::Domain("horizon must be positive".into()));
        }
        let e3 = (3.0 * params.lambda * psi.psi_inf).exp();
        Ok(Self {
            psi,
            params,
            horizon,
            e3,
            log_eta_max: params.lambda * (psi.psi_inf + psi.psi_max),
            log_eta_min: params.lambda * (psi.psi_inf + psi.psi_min),
            m0: (horizon / 2.0).powi(8) / 16.0,
        })
    }

    pub fn params(&self) -> &CarlemanParameters {
        &self.params
    }

    pub fn psi(&self) -> &PsiFunction {
        &self.psi
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// θ(t) = (t(T−t))⁻⁴; +∞ at the endpoints.
    pub fn theta(&self, t: f64) -> f64 {
        let p = t * (self.horizon - t);
        if p <= 0.0 {
            f64::INFINITY
        } else {
            p.powi(-4)
        }
    }

    pub fn log_theta(&self, t: f64) -> f64 {
        let p = t * (self.horizon - t);
        if p <= 0.0 {
            f64::INFINITY
        } else {
            -4.0 * p.ln()
        }
    }

    pub fn eta(&self, x: f64) -> f64 {
        (self.params.lambda * (self.psi.psi_inf + self.psi.eval(x))).exp()
    }

    /// C^∞ bump: 1 on [0, T/4], 0 on [T/2, T].
    fn bump(&self, t: f64) -> f64 {
        let t1 = self.horizon / 4.0;
        let t2 = self.horizon / 2.0;
        if t <= t1 {
            1.0
        } else if t >= t2 {
            0.0
        } else {
            let u = (t2 - t) / (t2 - t1);
            let f = |v: f64| if v <= 0.0 { 0.0 } else { (-1.0 / v).exp() };
            f(u) / (f(u) + f(1.0 - u))
        }
    }

    /// m(t) = t⁴(T−t)⁴ + m₀·bump(t): equals t⁴(T−t)⁴ on [T/2,T], dominates it
    /// on (0,T/2], and m(0) = m₀ > 0.
    pub fn m_weight(&self, t: f64) -> f64 {
        let base = (t * (self.horizon - t)).powi(4);
        base + self.m0 * self.bump(t)
    }

    /// τ(t) = 1/m(t); +∞ at t = T.
    pub fn tau(&self, t: f64) -> f64 {
        let m = self.m_weight(t);
        if m <= 0.0 {
            f64::INFINITY
        } else {
            1.0 / m
        }
    }

    pub fn phi(&self, x: f64, t: f64) -> f64 {
        -self.theta(t) * (self.e3 - self.eta(x))
    }

    /// min over x of φ(x,t) (attained where η is smallest).
    pub fn phi_hat(&self, t: f64) -> f64 {
        -self.theta(t) * (self.e3 - self.log_eta_min.exp())
    }

    pub fn zeta(&self, x: f64, t: f64) -> f64 {
        self.tau(t) * self.eta(x)
    }

    pub fn a_weight(&self, x: f64, t: f64) -> f64 {
        -self.tau(t) * (self.e3 - self.eta(x))
    }

    /// A*(t) = max over x of A(x,t): still negative.
    pub fn a_star(&self, t: f64) -> f64 {
        -self.tau(t) * (self.e3 - self.log_eta_max.exp())
    }

    /// Â(t) = min over x of A(x,t).
    pub fn a_hat(&self, t: f64) -> f64 {
        -self.tau(t) * (self.e3 - self.log_eta_min.exp())
    }

    pub fn zeta_star(&self, t: f64) -> f64 {
        self.tau(t) * self.log_eta_max.exp()
    }

    pub fn zeta_hat(&self, t: f64) -> f64 {
        self.tau(t) * self.log_eta_min.exp()
    }

    pub fn log_zeta_star(&self, t: f64) -> f64 {
        -self.m_weight(t).ln() + self.log_eta_max
    }

    pub fn log_zeta_hat(&self, t: f64) -> f64 {
        -self.m_weight(t).ln() + self.log_eta_min
    }

    /// ζ*/ζ̂, independent of t.
    pub fn zeta0(&self) -> f64 {
        (self.log_eta_max - self.log_eta_min).exp()
    }

    /// Pointwise record used by reports; σ and φ carry the θ singularity.
    pub fn eval(&self, x: f64, t: f64) -> WeightValues {
        let theta = self.theta(t);
        let eta = self.eta(x);
        let phi = if theta.is_infinite() {
            f64::NEG_INFINITY
        } else {
            -theta * (self.e3 - eta)
        };
        let tau = self.tau(t);
        let (zeta, a) = if tau.is_infinite() {
            (f64::INFINITY, f64::NEG_INFINITY)
        } else {
            (tau * eta, -tau * (self.e3 - eta))
        };
        WeightValues {
            theta,
            sigma: theta * eta,
            phi,
            zeta,
            a,
        }
    }

    /// e^{2sφ(x,t)}; exactly 0 at t ∈ {0, T}.
    pub fn exp_2s_phi(&self, x: f64, t: f64) -> f64 {
        let phi = self.phi(x, t);
        if phi == f64::NEG_INFINITY {
            0.0
        } else {
            (2.0 * self.params.s * phi).exp()
        }
    }

    /// The sign-determining constant of the ordering 3A* < 2Â < 0, which is
    /// independent of t: 2Â − 3A* = τ(t)·(e^{3λ|Ψ|∞} + 2η_min − 3η_max).
    pub fn ordering_constant(&self) -> f64 {
        self.e3 + 2.0 * self.log_eta_min.exp() - 3.0 * self.log_eta_max.exp()
    }
}

/// The ρ-family of the null-control estimates, exposed in log form.
///
/// ρ₀ = e^{−sA*}(ζ*)⁻⁷, ρ₁ = e^{−sA*}(ζ*)⁻¹⁴, ρ₂ = e^{−3sA*/2}(ζ̂)⁻¹,
/// ρ̂ = e^{−sA*}(ζ*)^{−21/2}, and the follower weight ρ* = e^{−sφ̂/2}, the
/// minimal choice compatible with ρ*⁻² ≤ e^{sφ} for all x.
#[derive(Debug, Clone, Copy)]
pub struct RhoFamily {
    family: WeightFamily,
}

impl RhoFamily {
    pub fn new(family: WeightFamily) -> Self {
        Self { family }
    }

    pub fn family(&self) -> &WeightFamily {
        &self.family
    }

    pub fn log_rho0(&self, t: f64) -> f64 {
        let s = self.family.params.s;
        -s * self.family.a_star(t) - 7.0 * self.family.log_zeta_star(t)
    }

    pub fn log_rho1(&self, t: f64) -> f64 {
        let s = self.family.params.s;
        -s * self.family.a_star(t) - 14.0 * self.family.log_zeta_star(t)
    }

    pub fn log_rho2(&self, t: f64) -> f64 {
        let s = self.family.params.s;
        -1.5 * s * self.family.a_star(t) - self.family.log_zeta_hat(t)
    }

    pub fn log_rho_hat(&self, t: f64) -> f64 {
        let s = self.family.params.s;
        -s * self.family.a_star(t) - 10.5 * self.family.log_zeta_star(t)
    }

    /// log ρ*(t) = −s·φ̂(t)/2; +∞ at t ∈ {0, T}.
    pub fn log_rho_star(&self, t: f64) -> f64 {
        let phi_hat = self.family.phi_hat(t);
        if phi_hat == f64::NEG_INFINITY {
            f64::INFINITY
        } else {
            -0.5 * self.family.params.s * phi_hat
        }
    }

    pub fn rho0(&self, t: f64) -> f64 {
        self.log_rho0(t).exp()
    }

    pub fn rho1(&self, t: f64) -> f64 {
        self.log_rho1(t).exp()
    }

    pub fn rho2(&self, t: f64) -> f64 {
        self.log_rho2(t).exp()
    }

    pub fn rho_hat(&self, t: f64) -> f64 {
        self.log_rho_hat(t).exp()
    }

    pub fn rho_star(&self, t: f64) -> f64 {
        self.log_rho_star(t).exp()
    }

    /// ρ*(t)² with saturation; the follower feedback uses the reciprocal.
    pub fn rho_star_sq(&self, t: f64) -> f64 {
        (2.0 * self.log_rho_star(t)).exp()
    }

    /// ρ*(t)⁻² = e^{sφ̂(t)} ∈ (0, 1]; exactly 0 at t ∈ {0, T}.
    pub fn rho_star_inv_sq(&self, t: f64) -> f64 {
        let l = self.log_rho_star(t);
        if l == f64::INFINITY {
            0.0
        } else {
            (-2.0 * l).exp()
        }
    }
}

/// Uniform grid on [δT, (1−δ)T] used wherever θ-based weights are evaluated.
pub fn truncated_time_grid(horizon: f64, n_t: usize, delta_frac: f64) -> Result<Vec<f64>> {
    if !(delta_frac > 0.0 && delta_frac < 0.1) {
        return Err(SolverError::Domain(format!(
            "delta_frac = {delta_frac} outside (0, 0.1)"
        )));
    }
    if n_t < 1 {
        return Err(SolverError::Domain("n_t must be >= 1".into()));
    }
    let lo = delta_frac * horizon;
    let hi = (1.0 - delta_frac) * horizon;
    Ok((0..=n_t)
        .map(|i| lo + (hi - lo) * i as f64 / n_t as f64)
        .collect())
}

/// One row of the ordering report, evaluated at a single grid time.
#[derive(Debug, Clone, Copy)]
pub struct OrderingRow {
    pub t: f64,
    pub a_star: f64,
    pub a_hat: f64,
    /// 2Â − 3A*, positive when the ordering holds.
    pub margin: f64,
    pub log_rho0: f64,
    pub log_rho1: f64,
    pub log_rho2: f64,
    pub log_rho_hat: f64,
    /// |ρ̂²/(ρ₀ρ₁) − 1| evaluated in log space.
    pub identity_residual: f64,
}

/// Report of `verify_orderings`: the algebraic identity ρ̂² = ρ₀ρ₁, the
/// envelope ordering 3A* < 2Â < 0, the four order inequalities (as log
/// constants), and the ρ*-domination check.
#[derive(Debug, Clone)]
pub struct OrderingReport {
    pub rows: Vec<OrderingRow>,
    pub max_identity_residual: f64,
    pub min_margin: f64,
    /// log of the empirical constants for ρ₁ ≤ Cρ̂, ρ̂ ≤ Cρ₀, ρ₀ ≤ Cρ₂, ρ₂ ≤ Cρ₁².
    pub log_order_constants: [f64; 4],
    /// max over the grid of ρ*⁻²·e^{−sφ} (must be ≤ 1 + 1e-12).
    pub max_rho_star_domination: f64,
    /// first grid time at which the margin fails, if any.
    pub first_margin_failure: Option<f64>,
}

impl OrderingReport {
    pub fn ordering_holds(&self) -> bool {
        self.first_margin_failure.is_none()
    }
}

/// Checks the weight identities and orderings on the truncated grid.
/// Failures are reported, never thrown.
pub fn verify_orderings(
    rho: &RhoFamily,
    time_grid: &[f64],
    n_x_samples: usize,
) -> OrderingReport {
    let fam = rho.family();
    let s = fam.params().s;
    let mut rows = Vec::with_capacity(time_grid.len());
    let mut max_identity = 0.0f64;
    let mut min_margin = f64::INFINITY;
    let mut first_fail = None;
    let mut log_c = [f64::NEG_INFINITY; 4];
    let mut max_dom = f64::NEG_INFINITY;
    for &t in time_grid {
        let a_star = fam.a_star(t);
        let a_hat = fam.a_hat(t);
        let margin = 2.0 * a_hat - 3.0 * a_star;
        let lr0 = rho.log_rho0(t);
        let lr1 = rho.log_rho1(t);
        let lr2 = rho.log_rho2(t);
        let lrh = rho.log_rho_hat(t);
        let identity_residual = (2.0 * lrh - lr0 - lr1).exp_m1().abs();
        max_identity = max_identity.max(identity_residual);
        if margin < min_margin {
            min_margin = margin;
        }
        if margin <= 0.0 && first_fail.is_none() {
            first_fail = Some(t);
        }
        log_c[0] = log_c[0].max(lr1 - lrh);
        log_c[1] = log_c[1].max(lrh - lr0);
        log_c[2] = log_c[2].max(lr0 - lr2);
        log_c[3] = log_c[3].max(lr2 - 2.0 * lr1);
        // ρ*⁻² ≤ e^{sφ(x,t)} for every x
        let log_rho_star_inv_sq = s * fam.phi_hat(t);
        for i in 0..=n_x_samples {
            let x = i as f64 / n_x_samples as f64;
            let d = log_rho_star_inv_sq - s * fam.phi(x, t);
            max_dom = max_dom.max(d.exp());
        }
        rows.push(OrderingRow {
            t,
            a_star,
            a_hat,
            margin,
            log_rho0: lr0,
            log_rho1: lr1,
            log_rho2: lr2,
            log_rho_hat: lrh,
            identity_residual,
        });
    }
    OrderingReport {
        rows,
        max_identity_residual: max_identity,
        min_margin,
        log_order_constants: log_c,
        max_rho_star_domination: max_dom,
        first_margin_failure: first_fail,
    }
}

/// Scans λ upward from `lambda_start` until the envelope ordering
/// 3A*(t) < 2Â(t) holds (its sign does not depend on t).
pub fn find_lambda0(
    diff: &DegenerateDiffusion,
    s: f64,
    inner_window: (f64, f64),
    horizon: f64,
    lambda_start: f64,
) -> Result<f64> {
    let mut lambda = lambda_start.max(1e-3);
    let step = 0.05;
    let lambda_max = 256.0;
    while lambda <= lambda_max {
        let params = CarlemanParameters::new(s, lambda, inner_window)?;
        let psi = build_psi(diff, &params, 4096)?;
        let fam = WeightFamily::new(psi, params, horizon)?;
        if fam.ordering_constant() > 0.0 {
            return Ok(lambda);
        }
        lambda += step;
    }
    Err(SolverError::Unsupported(format!(
        "no lambda <= {lambda_max} yields 3A* < 2A-hat for this geometry"
    )))
}
