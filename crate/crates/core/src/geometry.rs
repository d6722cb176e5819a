//! Degenerate diffusion coefficient, moving-domain geometry, and the
//! cylinder transformation.
//!
//! The physical problem lives on the time-varying interval (0, ℓ(t)).  The
//! change of variable x = x'/ℓ(t) maps it onto the unit cylinder (0,1)×(0,T),
//! at the price of a time-dependent diffusion scaling
//!
//! ```text
//!   b(t) = a(ℓ(t)) / ℓ(t)²
//! ```
//!
//! and a transport term with speed ℓ'(t)·x/ℓ(t).  The diffusion coefficient
//! a(x) = x^α (0 < α < 1) vanishes at x = 0, so the transformed equation is
//! weakly degenerate at the left endpoint.

use crate::error::{Result, SolverError};

/// Weakly degenerate diffusion coefficient a(x) = x^α with α ∈ (0,1).
///
/// `k` is the constant of the structural hypothesis x·a'(x) ≤ k·a(x); for the
/// pure power law the inequality holds exactly when k ≥ α.  The coefficient is
/// extended to all x ≥ 0 as the same power law so that a(ℓ(t)) makes sense for
/// ℓ(t) > 1; multiplicativity a(xy) = a(x)a(y) then holds globally.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegenerateDiffusion {
    alpha: f64,
    k: f64,
}

impl DegenerateDiffusion {
    /// A weakly degenerate coefficient; fails for α outside (0,1).
    pub fn new(alpha: f64, k: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(SolverError::Unsupported(format!(
                "alpha = {alpha} outside (0,1); strongly degenerate coefficients are unsupported"
            )));
        }
        if !(k > 0.0 && k <= 1.0) {
            return Err(SolverError::Domain(format!("k = {k} outside (0,1]")));
        }
        Ok(Self { alpha, k })
    }

    /// Power law with the sharp hypothesis constant k = α.
    pub fn power_law(alpha: f64) -> Result<Self> {
        Self::new(alpha, alpha)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// a(x) = x^α, exact zero at x = 0.
    pub fn eval_a(&self, x: f64) -> Result<f64> {
        if x < 0.0 {
            return Err(SolverError::Domain(format!("a(x) evaluated at x = {x} < 0")));
        }
        if x == 0.0 {
            return Ok(0.0);
        }
        Ok(x.powf(self.alpha))
    }

    /// a'(x) = α·x^{α−1} for x > 0 (blows up at 0 for α < 1).
    pub fn a_prime(&self, x: f64) -> Result<f64> {
        if x <= 0.0 {
            return Err(SolverError::Domain(format!(
                "a'(x) evaluated at x = {x} <= 0"
            )));
        }
        Ok(self.alpha * x.powf(self.alpha - 1.0))
    }
}

/// Closed-form families for the moving endpoint ℓ(t).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EllFamily {
    /// ℓ(t) = c.
    Constant { value: f64 },
    /// ℓ(t) = 1 + γ·t.
    Linear { gamma: f64 },
    /// ℓ(t) = 1 + γ·sin(πt/T).
    Sinusoidal { gamma: f64 },
}

impl EllFamily {
    fn eval(&self, t: f64, horizon: f64) -> f64 {
        match *self {
            EllFamily::Constant { value } => value,
            EllFamily::Linear { gamma } => 1.0 + gamma * t,
            EllFamily::Sinusoidal { gamma } => {
                1.0 + gamma * (std::f64::consts::PI * t / horizon).sin()
            }
        }
    }

    fn eval_prime(&self, t: f64, horizon: f64) -> f64 {
        match *self {
            EllFamily::Constant { .. } => 0.0,
            EllFamily::Linear { gamma } => gamma,
            EllFamily::Sinusoidal { gamma } => {
                let w = std::f64::consts::PI / horizon;
                gamma * w * (w * t).cos()
            }
        }
    }
}

/// The moving spatial domain Ω_t = (0, ℓ(t)) over the horizon [0, T].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MovingDomain {
    horizon: f64,
    family: EllFamily,
    drift_bound: f64,
}

impl MovingDomain {
    /// Builds the domain, sampling ℓ'(t)/ℓ(t) on a fine grid to derive the
    /// drift bound when none is supplied.
    pub fn new(horizon: f64, family: EllFamily, drift_bound: Option<f64>) -> Result<Self> {
        if horizon <= 0.0 {
            return Err(SolverError::Domain(format!("horizon T = {horizon} <= 0")));
        }
        let n = 2048;
        let mut min_ell = f64::INFINITY;
        let mut max_ratio = f64::NEG_INFINITY;
        for i in 0..=n {
            let t = horizon * i as f64 / n as f64;
            let ell = family.eval(t, horizon);
            min_ell = min_ell.min(ell);
            max_ratio = max_ratio.max(family.eval_prime(t, horizon) / ell);
        }
        if min_ell <= 0.0 {
            return Err(SolverError::Domain(
                "ell(t) must stay positive on [0,T]".into(),
            ));
        }
        let drift_bound = drift_bound.unwrap_or(max_ratio.max(0.0));
        Ok(Self {
            horizon,
            family,
            drift_bound,
        })
    }

    /// Fixed unit domain, ℓ ≡ 1.
    pub fn fixed(horizon: f64) -> Result<Self> {
        Self::new(horizon, EllFamily::Constant { value: 1.0 }, Some(0.0))
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn family(&self) -> EllFamily {
        self.family
    }

    pub fn drift_bound(&self) -> f64 {
        self.drift_bound
    }

    pub fn ell(&self, t: f64) -> f64 {
        self.family.eval(t, self.horizon)
    }

    pub fn ell_prime(&self, t: f64) -> f64 {
        self.family.eval_prime(t, self.horizon)
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if t < 0.0 || t > self.horizon {
            return Err(SolverError::Domain(format!(
                "t = {t} outside [0, {}]",
                self.horizon
            )));
        }
        Ok(())
    }

    /// Physical coordinate x' ∈ [0, ℓ(t)] to cylinder coordinate x = x'/ℓ(t).
    pub fn map_to_cylinder(&self, x_prime: f64, t: f64) -> Result<f64> {
        self.check_time(t)?;
        let ell = self.ell(t);
        if x_prime < 0.0 || x_prime > ell * (1.0 + 1e-12) {
            return Err(SolverError::Domain(format!(
                "x' = {x_prime} outside [0, ell(t) = {ell}]"
            )));
        }
        Ok(x_prime / ell)
    }

    /// Cylinder coordinate x ∈ [0,1] back to the physical domain, x' = x·ℓ(t).
    pub fn map_from_cylinder(&self, x: f64, t: f64) -> Result<f64> {
        self.check_time(t)?;
        if !(0.0..=1.0 + 1e-12).contains(&x) {
            return Err(SolverError::Domain(format!("x = {x} outside [0,1]")));
        }
        Ok(x * self.ell(t))
    }
}

/// Time-dependent coefficients of the transformed equation on the unit
/// cylinder: the diffusion scaling b(t) and the transport speed
/// drift(x,t) = ℓ'(t)·x/ℓ(t).
///
/// Only the product B·√a = ℓ'x/ℓ is ever stored or evaluated; the factor
/// B(x,t) alone is 0/0 at x = 0.
#[derive(Debug, Clone, Copy)]
pub struct TransformedCoefficients {
    diffusion: DegenerateDiffusion,
    domain: MovingDomain,
}

impl TransformedCoefficients {
    pub fn new(diffusion: DegenerateDiffusion, domain: MovingDomain) -> Self {
        Self { diffusion, domain }
    }

    pub fn diffusion(&self) -> &DegenerateDiffusion {
        &self.diffusion
    }

    pub fn domain(&self) -> &MovingDomain {
        &self.domain
    }

    /// b(t) = a(ℓ(t))/ℓ(t)².
    pub fn eval_b(&self, t: f64) -> Result<f64> {
        self.domain.check_time(t)?;
        let ell = self.domain.ell(t);
        Ok(self.diffusion.eval_a(ell)? / (ell * ell))
    }

    /// Transport speed ℓ'(t)·x/ℓ(t); vanishes at x = 0 for every t.
    pub fn drift(&self, x: f64, t: f64) -> Result<f64> {
        self.domain.check_time(t)?;
        Ok(self.domain.ell_prime(t) * x / self.domain.ell(t))
    }

    /// Range [min b, max b] sampled on a fine time grid.
    pub fn b_range(&self, n_samples: usize) -> Result<(f64, f64)> {
        let n = n_samples.max(2);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let t = self.domain.horizon * i as f64 / (n - 1) as f64;
            let b = self.eval_b(t)?;
            lo = lo.min(b);
            hi = hi.max(b);
        }
        Ok((lo, hi))
    }
}

/// Sampled verification of the structural hypotheses on a and ℓ.
#[derive(Debug, Clone, Copy)]
pub struct HypothesisReport {
    /// max over the x-grid of x·a'(x) − k·a(x)  (should be ≤ 0 up to rounding).
    pub max_coefficient_violation: f64,
    pub coefficient_argmax: f64,
    /// max over the t-grid of ℓ'(t)/ℓ(t) − drift_bound.
    pub max_drift_violation: f64,
    pub drift_argmax: f64,
}

impl HypothesisReport {
    pub fn satisfied(&self, tol: f64) -> bool {
        self.max_coefficient_violation <= tol && self.max_drift_violation <= tol
    }
}

/// Samples both hypothesis inequalities on uniform grids of `n_samples`
/// points.  Violations are reported, never thrown.
pub fn check_hypotheses(
    diff: &DegenerateDiffusion,
    dom: &MovingDomain,
    n_samples: usize,
) -> Result<HypothesisReport> {
    if n_samples < 2 {
        return Err(SolverError::Domain("n_samples must be >= 2".into()));
    }
    let mut max_coeff = f64::NEG_INFINITY;
    let mut coeff_arg = 0.0;
    // x-grid avoids 0 where a' is singular; the inequality is trivial there.
    for i in 1..=n_samples {
        let x = i as f64 / n_samples as f64;
        let v = x * diff.a_prime(x)? - diff.k * diff.eval_a(x)?;
        if v > max_coeff {
            max_coeff = v;
            coeff_arg = x;
        }
    }
    let mut max_drift = f64::NEG_INFINITY;
    let mut drift_arg = 0.0;
    for i in 0..n_samples {
        let t = dom.horizon * i as f64 / (n_samples - 1) as f64;
        let v = dom.ell_prime(t) / dom.ell(t) - dom.drift_bound;
        if v > max_drift {
            max_drift = v;
            drift_arg = t;
        }
    }
    Ok(HypothesisReport {
        max_coefficient_violation: max_coeff,
        coefficient_argmax: coeff_arg,
        max_drift_violation: max_drift,
        drift_argmax: drift_arg,
    })
}

/// Linearly interpolates a field sampled on the uniform grid of [0, ℓ(t)]
/// onto the uniform unit grid (pullback along x = x'/ℓ(t)).
pub fn pullback_field(
    dom: &MovingDomain,
    physical: &[f64],
    t: f64,
    n_target: usize,
) -> Result<Vec<f64>> {
    let ell = dom.ell(t);
    dom.check_time(t)?;
    resample_linear(physical, 0.0, ell, n_target, |x| x * ell)
}

/// Inverse transfer: field on the unit grid onto the uniform grid of [0, ℓ(t)].
pub fn pushforward_field(
    dom: &MovingDomain,
    cylinder: &[f64],
    t: f64,
    n_target: usize,
) -> Result<Vec<f64>> {
    let ell = dom.ell(t);
    dom.check_time(t)?;
    resample_linear(cylinder, 0.0, 1.0, n_target, |xp| xp / ell)
}

fn resample_linear(
    source: &[f64],
    src_lo: f64,
    src_hi: f64,
    n_target: usize,
    target_to_source: impl Fn(f64) -> f64,
) -> Result<Vec<f64>> {
    if source.len() < 2 {
        return Err(SolverError::Domain(
            "field transfer needs at least 2 sample points".into(),
        ));
    }
    if n_target < 2 {
        return Err(SolverError::Domain(
            "target grid needs at least 2 points".into(),
        ));
    }
    let m = source.len() - 1;
    let h = (src_hi - src_lo) / m as f64;
    let mut out = Vec::with_capacity(n_target);
    for i in 0..n_target {
        let u = i as f64 / (n_target - 1) as f64;
        let pos = ((target_to_source(u) - src_lo) / h).clamp(0.0, m as f64);
        let j = (pos.floor() as usize).min(m - 1);
        let w = pos - j as f64;
        out.push(source[j] * (1.0 - w) + source[j + 1] * w);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn power_law_values() {
        let a = DegenerateDiffusion::power_law(0.5).unwrap();
        assert_eq!(a.eval_a(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(a.eval_a(0.25).unwrap(), 0.5, epsilon = 1e-15);
        assert!(a.eval_a(-1.0).is_err());
    }

    #[test]
    fn multiplicativity_on_random_pairs() {
        let a = DegenerateDiffusion::power_law(0.37).unwrap();
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut rand01 = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..10_000 {
            let x = rand01();
            let y = rand01();
            let lhs = a.eval_a(x * y).unwrap();
            let rhs = a.eval_a(x).unwrap() * a.eval_a(y).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
        }
    }

    #[test]
    fn hypothesis_holds_with_sharp_constant() {
        let a = DegenerateDiffusion::power_law(0.5).unwrap();
        let dom = MovingDomain::fixed(1.0).unwrap();
        let rep = check_hypotheses(&a, &dom, 1000).unwrap();
        assert!(rep.max_coefficient_violation <= 1e-12);
        assert!(rep.max_drift_violation <= 1e-12);
    }

    #[test]
    fn hypothesis_fails_below_alpha() {
        let a = DegenerateDiffusion::new(0.5, 0.4).unwrap();
        let dom = MovingDomain::fixed(1.0).unwrap();
        let rep = check_hypotheses(&a, &dom, 1000).unwrap();
        // x a' - k a = (alpha - k) x^alpha, maximal at x = 1.
        assert!(rep.max_coefficient_violation > 0.09);
        assert!(!rep.satisfied(1e-12));
    }

    #[test]
    fn linear_ell_drift_bound() {
        let a = DegenerateDiffusion::power_law(0.5).unwrap();
        let dom = MovingDomain::new(1.0, EllFamily::Linear { gamma: 0.2 }, Some(0.2)).unwrap();
        // max of 0.2/(1+0.2t) on [0,1] is 0.2, attained at t = 0.
        let rep = check_hypotheses(&a, &dom, 1000).unwrap();
        assert!(rep.max_drift_violation <= 1e-12);
        assert_abs_diff_eq!(dom.ell_prime(0.0) / dom.ell(0.0), 0.2, epsilon = 1e-15);
    }

    #[test]
    fn transformed_coefficients() {
        let a = DegenerateDiffusion::power_law(0.5).unwrap();
        // ell = 1: b = a(1) = 1 for all t.
        let tc = TransformedCoefficients::new(a, MovingDomain::fixed(1.0).unwrap());
        assert_abs_diff_eq!(tc.eval_b(0.3).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(tc.drift(0.0, 0.3).unwrap(), 0.0);
        assert!(tc.eval_b(1.5).is_err());

        // ell(t) = 4: b = 4^0.5 / 16 = 0.125.
        let dom4 = MovingDomain::new(1.0, EllFamily::Constant { value: 4.0 }, None).unwrap();
        let tc4 = TransformedCoefficients::new(a, dom4);
        assert_abs_diff_eq!(tc4.eval_b(0.7).unwrap(), 0.125, epsilon = 1e-15);

        // ell(t) = 1 + 0.2t at t = 0: b = 1.
        let dom = MovingDomain::new(1.0, EllFamily::Linear { gamma: 0.2 }, None).unwrap();
        let tcl = TransformedCoefficients::new(a, dom);
        assert_abs_diff_eq!(tcl.eval_b(0.0).unwrap(), 1.0, epsilon = 1e-15);
        let (lo, hi) = tcl.b_range(512).unwrap();
        assert!(lo > 0.0 && lo <= hi);
    }

    #[test]
    fn drift_is_linear_in_x() {
        let a = DegenerateDiffusion::power_law(0.5).unwrap();
        let dom = MovingDomain::new(1.0, EllFamily::Sinusoidal { gamma: 0.1 }, None).unwrap();
        let tc = TransformedCoefficients::new(a, dom);
        let t = 0.37;
        let d1 = tc.drift(0.25, t).unwrap();
        let d2 = tc.drift(0.5, t).unwrap();
        let d4 = tc.drift(1.0, t).unwrap();
        assert_abs_diff_eq!(2.0 * d1, d2, epsilon = 1e-15);
        assert_abs_diff_eq!(4.0 * d1, d4, epsilon = 1e-15);
    }

    #[test]
    fn cylinder_maps_invert() {
        let dom = MovingDomain::new(1.0, EllFamily::Linear { gamma: 0.5 }, None).unwrap();
        let t = 0.5; // ell = 1.25
        assert_abs_diff_eq!(dom.map_to_cylinder(0.625, t).unwrap(), 0.5, epsilon = 1e-15);
        let mut state = 12345u64;
        for _ in 0..100 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let xp = (state >> 11) as f64 / (1u64 << 53) as f64 * dom.ell(t);
            let x = dom.map_to_cylinder(xp, t).unwrap();
            let back = dom.map_from_cylinder(x, t).unwrap();
            assert!((back - xp).abs() <= 1e-15 * (1.0 + xp.abs()));
        }
        assert!(dom.map_to_cylinder(2.0, t).is_err());
    }

    #[test]
    fn identity_map_for_fixed_domain() {
        let dom = MovingDomain::fixed(1.0).unwrap();
        for i in 0..=10 {
            let x = i as f64 / 10.0;
            assert_abs_diff_eq!(dom.map_to_cylinder(x, 0.4).unwrap(), x, epsilon = 1e-15);
        }
    }

    #[test]
    fn field_transfer_constants_and_linears() {
        let dom = MovingDomain::new(1.0, EllFamily::Linear { gamma: 0.5 }, None).unwrap();
        let t = 1.0; // ell = 1.5
        let n = 33;
        let constant = vec![3.25; 65];
        let pulled = pullback_field(&dom, &constant, t, n).unwrap();
        assert!(pulled.iter().all(|&v| (v - 3.25).abs() <= 1e-15));

        // linear field f(x') = x'/ell pulled back is exactly x.
        let m = 65;
        let ell = dom.ell(t);
        let linear: Vec<f64> = (0..m)
            .map(|j| (j as f64 / (m - 1) as f64) * ell / ell)
            .collect();
        let pulled = pullback_field(&dom, &linear, t, n).unwrap();
        for (i, v) in pulled.iter().enumerate() {
            let x = i as f64 / (n - 1) as f64;
            assert!((v - x).abs() <= 1e-14);
        }

        // fixed domain, same resolution: identity.
        let fixed = MovingDomain::fixed(1.0).unwrap();
        let field: Vec<f64> = (0..n).map(|j| (j as f64).sin()).collect();
        let back = pullback_field(&fixed, &field, 0.5, n).unwrap();
        for (u, v) in field.iter().zip(back.iter()) {
            assert!((u - v).abs() <= 1e-15);
        }

        assert!(pullback_field(&dom, &[1.0], t, n).is_err());
    }

    proptest! {
        #[test]
        fn prop_round_trip_maps(x in 0.0..1.0f64, t in 0.0..1.0f64, gamma in -0.4..1.0f64) {
            let dom = MovingDomain::new(1.0, EllFamily::Linear { gamma }, None).unwrap();
            let xp = dom.map_from_cylinder(x, t).unwrap();
            let back = dom.map_to_cylinder(xp, t).unwrap();
            prop_assert!((back - x).abs() <= 1e-14);
        }
    }
}
