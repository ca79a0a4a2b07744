//! The four-dimensional energy supply-demand (ESD) system.
//!
//! The model couples the energy demand `x1` of a region with the supply `x2`
//! it receives, its imports `x3` and its renewable production `x4`:
//!
//! ```text
//! x1' = a1*x1*(1 - x1/M) - a2*(x2 + x3) - d3*x4
//! x2' = -z1*x2 - z2*x3 + z3*x1*[N - (x1 - x3)]
//! x3' = s1*x3*(s2*x1 - s3)
//! x4' = d1*x1 - d2*x4
//! ```
//!
//! All coefficients are strictly positive and `N < M`. Under
//! [`default_chaotic_params`] and [`default_initial_state`] the trajectory is
//! chaotic, which is what makes the system a worthwhile solver benchmark.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

/// The thirteen coefficients of the ESD system.
///
/// All values are dimensionless. Invariants: every field strictly positive
/// and finite, and `n < m`. Checked by [`validate_params`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsdParameters {
    pub a1: f64,
    pub a2: f64,
    pub z1: f64,
    pub z2: f64,
    pub z3: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    /// Demand saturation bound of the logistic term in the first equation.
    #[serde(rename = "M")]
    pub m: f64,
    /// Demand threshold in the second equation; must stay below `m`.
    #[serde(rename = "N")]
    pub n: f64,
}

/// System state: (demand, supply, imports, renewables) at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
    pub x4: f64,
}

impl State {
    pub const ZERO: State = State { x1: 0.0, x2: 0.0, x3: 0.0, x4: 0.0 };

    pub fn new(x1: f64, x2: f64, x3: f64, x4: f64) -> Self {
        Self { x1, x2, x3, x4 }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self { x1: a[0], x2: a[1], x3: a[2], x4: a[3] }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.x2, self.x3, self.x4]
    }

    pub fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.x2.is_finite() && self.x3.is_finite() && self.x4.is_finite()
    }
}

/// Time derivative of a [`State`], per unit time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub dx1: f64,
    pub dx2: f64,
    pub dx3: f64,
    pub dx4: f64,
}

impl StateDerivative {
    pub fn to_array(self) -> [f64; 4] {
        [self.dx1, self.dx2, self.dx3, self.dx4]
    }

    pub fn is_finite(&self) -> bool {
        self.dx1.is_finite() && self.dx2.is_finite() && self.dx3.is_finite() && self.dx4.is_finite()
    }
}

/// One violated parameter constraint, e.g. `"a1 > 0"` or `"N < M"`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintViolation {
    pub constraint: String,
}

impl fmt::Display for ConstraintViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "violated: {}", self.constraint)
    }
}

/// Right-hand side of the ESD system evaluated at `s`.
///
/// Pure function of its inputs; rejects non-finite states.
pub fn rhs(params: &EsdParameters, s: &State) -> Result<StateDerivative> {
    if !s.is_finite() {
        return Err(Error::NonFiniteState);
    }
    Ok(rhs_unchecked(params, s))
}

/// [`rhs`] without the finiteness guard, for hot loops that already validated.
#[inline]
pub(crate) fn rhs_unchecked(p: &EsdParameters, s: &State) -> StateDerivative {
    let dx1 = p.a1 * s.x1 * (1.0 - s.x1 / p.m) - p.a2 * (s.x2 + s.x3) - p.d3 * s.x4;
    let dx2 = -p.z1 * s.x2 - p.z2 * s.x3 + p.z3 * s.x1 * (p.n - (s.x1 - s.x3));
    let dx3 = p.s1 * s.x3 * (p.s2 * s.x1 - p.s3);
    let dx4 = p.d1 * s.x1 - p.d2 * s.x4;
    StateDerivative { dx1, dx2, dx3, dx4 }
}

/// The coefficient set under which the system is chaotic.
pub fn default_chaotic_params() -> EsdParameters {
    EsdParameters {
        a1: 0.09,
        a2: 0.15,
        z1: 0.06,
        z2: 0.082,
        z3: 0.07,
        s1: 0.2,
        s2: 0.5,
        s3: 0.4,
        d1: 0.1,
        d2: 0.06,
        d3: 0.08,
        m: 1.8,
        n: 1.0,
    }
}

/// The canonical initial condition used with [`default_chaotic_params`].
pub fn default_initial_state() -> State {
    State::new(0.82, 0.29, 0.48, 0.1)
}

/// Checks strict positivity of every coefficient and `N < M`.
///
/// Returns every violated constraint rather than stopping at the first.
/// Non-finite values count as violations of the positivity constraint.
pub fn validate_params(
    params: &EsdParameters,
) -> std::result::Result<(), Vec<ConstraintViolation>> {
    let fields = [
        ("a1", params.a1),
        ("a2", params.a2),
        ("z1", params.z1),
        ("z2", params.z2),
        ("z3", params.z3),
        ("s1", params.s1),
        ("s2", params.s2),
        ("s3", params.s3),
        ("d1", params.d1),
        ("d2", params.d2),
        ("d3", params.d3),
        ("M", params.m),
        ("N", params.n),
    ];
    let mut violations = Vec::new();
    for (name, value) in fields {
        if !(value > 0.0 && value.is_finite()) {
            violations.push(ConstraintViolation { constraint: format!("{name} > 0") });
        }
    }
    if !(params.n < params.m) {
        violations.push(ConstraintViolation { constraint: "N < M".to_string() });
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(got: f64, want: f64, tol: f64) {
        assert!(
            (got - want).abs() <= tol,
            "got {got}, want {want} (tol {tol})"
        );
    }

    #[test]
    fn origin_is_equilibrium() {
        let p = default_chaotic_params();
        let d = rhs(&p, &State::ZERO).unwrap();
        assert_eq!(d.to_array(), [0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn rhs_at_default_initial_state() {
        let p = default_chaotic_params();
        let d = rhs(&p, &default_initial_state()).unwrap();
        assert_close(d.dx1, -0.083320, 1e-6);
        assert_close(d.dx2, -0.018876, 1e-6);
        assert_close(d.dx3, 0.00096, 1e-6);
        assert_close(d.dx4, 0.076, 1e-6);
    }

    #[test]
    fn rhs_pure_demand_feeds_renewables() {
        let p = default_chaotic_params();
        let d = rhs(&p, &State::new(0.82, 0.0, 0.0, 0.0)).unwrap();
        assert_close(d.dx4, 0.082, 1e-12);
    }

    #[test]
    fn rhs_rejects_non_finite_state() {
        let p = default_chaotic_params();
        let err = rhs(&p, &State::new(f64::NAN, 0.0, 0.0, 0.0)).unwrap_err();
        assert_eq!(err.to_string(), "non-finite state");
        assert!(rhs(&p, &State::new(0.0, f64::INFINITY, 0.0, 0.0)).is_err());
    }

    #[test]
    fn dx4_ignores_supply_and_imports() {
        let p = default_chaotic_params();
        let base = rhs(&p, &State::new(0.7, 0.1, 0.2, 0.3)).unwrap();
        let perturbed = rhs(&p, &State::new(0.7, -5.0, 9.3, 0.3)).unwrap();
        assert_eq!(base.dx4.to_bits(), perturbed.dx4.to_bits());
    }

    #[test]
    fn dx3_vanishes_with_imports() {
        let p = default_chaotic_params();
        for x1 in [-1.0, 0.0, 0.5, 2.0] {
            let d = rhs(&p, &State::new(x1, 0.7, 0.0, -0.2)).unwrap();
            assert_eq!(d.dx3, 0.0);
        }
    }

    #[test]
    fn rhs_is_exactly_quadratic() {
        // Second finite differences of a quadratic map are independent of the
        // step size. Powers of two keep the directional steps exact.
        let p = default_chaotic_params();
        let base = default_initial_state().to_array();
        let dir = [1.0, -0.5, 0.25, 1.0];
        let eval = |eps: f64, sign: f64| {
            let s = State::from_array([
                base[0] + sign * eps * dir[0],
                base[1] + sign * eps * dir[1],
                base[2] + sign * eps * dir[2],
                base[3] + sign * eps * dir[3],
            ]);
            rhs(&p, &s).unwrap().to_array()
        };
        let second_diff = |eps: f64| -> [f64; 4] {
            let plus = eval(eps, 1.0);
            let zero = eval(eps, 0.0);
            let minus = eval(eps, -1.0);
            let mut out = [0.0; 4];
            for k in 0..4 {
                out[k] = (plus[k] - 2.0 * zero[k] + minus[k]) / (eps * eps);
            }
            out
        };
        let coarse = second_diff(0.5);
        let fine = second_diff(0.25);
        for k in 0..4 {
            // Relative 1e-9, with an absolute floor where the second
            // difference is pure rounding noise (the linear fourth equation).
            let tol = 1e-9 * coarse[k].abs().max(fine[k].abs()) + 1e-12;
            assert!(
                (coarse[k] - fine[k]).abs() <= tol,
                "component {k}: {} vs {}",
                coarse[k],
                fine[k]
            );
        }
    }

    #[test]
    fn default_params_are_the_chaotic_set() {
        let p = default_chaotic_params();
        assert_eq!(p.a1, 0.09);
        assert_eq!(p.a2, 0.15);
        assert_eq!(p.z1, 0.06);
        assert_eq!(p.z2, 0.082);
        assert_eq!(p.z3, 0.07);
        assert_eq!(p.s1, 0.2);
        assert_eq!(p.s2, 0.5);
        assert_eq!(p.s3, 0.4);
        assert_eq!(p.d1, 0.1);
        assert_eq!(p.d2, 0.06);
        assert_eq!(p.d3, 0.08);
        assert_eq!(p.m, 1.8);
        assert_eq!(p.n, 1.0);
        assert!(p.n < p.m);
        assert!(validate_params(&p).is_ok());
    }

    #[test]
    fn default_initial_state_values() {
        let s = default_initial_state();
        assert_eq!(s.to_array(), [0.82, 0.29, 0.48, 0.1]);
        assert!(s.is_finite());
        assert!(s.to_array().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn validate_rejects_zero_coefficient() {
        let mut p = default_chaotic_params();
        p.a1 = 0.0;
        let violations = validate_params(&p).unwrap_err();
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].constraint, "a1 > 0");
    }

    #[test]
    fn validate_rejects_equal_bounds() {
        let mut p = default_chaotic_params();
        p.n = 1.8;
        let violations = validate_params(&p).unwrap_err();
        assert!(violations.iter().any(|v| v.constraint == "N < M"));
    }

    #[test]
    fn validate_lists_every_violation() {
        let mut p = default_chaotic_params();
        p.d2 = -1.0;
        p.s3 = f64::NAN;
        p.n = 2.0;
        let violations = validate_params(&p).unwrap_err();
        let names: Vec<&str> = violations.iter().map(|v| v.constraint.as_str()).collect();
        assert_eq!(names, vec!["s3 > 0", "d2 > 0", "N < M"]);
    }

    #[test]
    fn params_serde_uses_capital_bounds() {
        let p = default_chaotic_params();
        let json = serde_json::to_string(&p).unwrap();
        assert!(json.contains("\"M\":1.8"));
        assert!(json.contains("\"N\":1.0"));
        let back: EsdParameters = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
    }

    proptest! {
        #[test]
        fn origin_equilibrium_for_any_valid_params(
            a1 in 1e-3..10.0f64, a2 in 1e-3..10.0f64,
            z1 in 1e-3..10.0f64, z2 in 1e-3..10.0f64, z3 in 1e-3..10.0f64,
            s1 in 1e-3..10.0f64, s2 in 1e-3..10.0f64, s3 in 1e-3..10.0f64,
            d1 in 1e-3..10.0f64, d2 in 1e-3..10.0f64, d3 in 1e-3..10.0f64,
            n in 1e-3..5.0f64, gap in 1e-3..5.0f64,
        ) {
            let p = EsdParameters { a1, a2, z1, z2, z3, s1, s2, s3, d1, d2, d3, m: n + gap, n };
            prop_assert!(validate_params(&p).is_ok());
            let d = rhs(&p, &State::ZERO).unwrap();
            prop_assert_eq!(d.to_array(), [0.0, 0.0, 0.0, 0.0]);
        }

        #[test]
        fn dx3_zero_whenever_x3_zero(
            x1 in -5.0..5.0f64, x2 in -5.0..5.0f64, x4 in -5.0..5.0f64,
        ) {
            let p = default_chaotic_params();
            let d = rhs(&p, &State::new(x1, x2, 0.0, x4)).unwrap();
            prop_assert_eq!(d.dx3, 0.0);
        }
    }
}
