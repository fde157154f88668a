//! Confinement potential: validation of the double-well hypotheses and
//! evaluation of `V`, its derivatives and the frozen effective potential.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::{Poly, SturmSequence};

const ROOT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("coefficient list is empty or identically zero")]
    EmptyCoefficients,
    #[error("degree {0} is below 4")]
    DegreeTooLow(usize),
    #[error("potential is not even: coefficient of x^{power} is {value}")]
    NotEven { power: usize, value: f64 },
    #[error("V(0) = {0} must be zero")]
    NonzeroAtOrigin(f64),
    #[error("leading coefficient {0} must be positive")]
    NotConvexAtInfinity(f64),
    #[error("even derivative of order {order} at 0 is negative ({value})")]
    NegativeEvenDerivative { order: usize, value: f64 },
    #[error("not a symmetric double well: {0}")]
    NotDoubleWell(String),
}

/// Even polynomial potential as supplied by the user, ascending powers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialPotential {
    pub coefficients: Vec<f64>,
}

impl PolynomialPotential {
    pub fn new(coefficients: Vec<f64>) -> Self {
        PolynomialPotential { coefficients }
    }

    /// `x^4/4 - x^2/2`, wells at ±1.
    pub fn quartic() -> Self {
        PolynomialPotential::new(vec![0.0, 0.0, -0.5, 0.0, 0.25])
    }
}

/// Interaction strength, noise amplitude and frozen mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveParams {
    pub alpha: f64,
    pub sigma: f64,
    pub m: f64,
}

impl EffectiveParams {
    pub fn new(alpha: f64, sigma: f64, m: f64) -> Self {
        debug_assert!(alpha > 0.0 && sigma > 0.0);
        EffectiveParams { alpha, sigma, m }
    }
}

/// A potential that passed [`validate`]. Holds the well location `a` and the
/// nonconvexity constant `theta = sup(-V'')`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedPotential {
    base: PolynomialPotential,
    v: Poly,
    dv: Poly,
    d2v: Poly,
    a: f64,
    theta: f64,
    even_derivatives_at_zero: Vec<f64>,
}

pub fn validate(p: &PolynomialPotential) -> Result<ValidatedPotential, PotentialError> {
    let v = Poly::new(p.coefficients.clone());
    if v.is_zero() {
        return Err(PotentialError::EmptyCoefficients);
    }
    let d = v.degree();
    if d < 4 {
        return Err(PotentialError::DegreeTooLow(d));
    }
    if let Some((power, &value)) = v
        .coeffs()
        .iter()
        .enumerate()
        .find(|&(k, &c)| k % 2 == 1 && c != 0.0)
    {
        return Err(PotentialError::NotEven { power, value });
    }
    if v.coeffs()[0] != 0.0 {
        return Err(PotentialError::NonzeroAtOrigin(v.coeffs()[0]));
    }
    if v.leading() <= 0.0 {
        return Err(PotentialError::NotConvexAtInfinity(v.leading()));
    }

    // V^(2k)(0) = (2k)! c_{2k}
    let mut even_derivatives_at_zero = Vec::new();
    for (k, &c) in v.coeffs().iter().enumerate().step_by(2) {
        let deriv = factorial(k) * c;
        if k >= 4 && deriv < 0.0 {
            return Err(PotentialError::NegativeEvenDerivative { order: k, value: deriv });
        }
        even_derivatives_at_zero.push(deriv);
    }

    let dv = v.derivative();
    let d2v = dv.derivative();
    let d3v = d2v.derivative();

    let crit = dv.real_roots(ROOT_TOL);
    if crit.len() != 3 {
        return Err(PotentialError::NotDoubleWell(format!(
            "V' has {} distinct real roots, expected 3",
            crit.len()
        )));
    }
    let (left, mid, right) = (crit[0], crit[1], crit[2]);
    let scale = right.abs().max(1.0);
    if mid.abs() > 1e-9 * scale || (left + right).abs() > 1e-9 * scale || right <= 0.0 {
        return Err(PotentialError::NotDoubleWell(format!(
            "critical points {crit:?} are not of the form {{-a, 0, a}}"
        )));
    }
    let a = 0.5 * (right - left);
    if d2v.eval(a) <= 0.0 {
        return Err(PotentialError::NotDoubleWell(format!("V''(a) = {} <= 0", d2v.eval(a))));
    }
    if d2v.eval(0.0) >= 0.0 {
        return Err(PotentialError::NotDoubleWell(format!(
            "V''(0) = {} >= 0",
            d2v.eval(0.0)
        )));
    }
    let sturm = SturmSequence::new(&d2v);
    let far = d2v.root_bound() * 1.01 + a + 1.0;
    if sturm.count(a, far) != 0 {
        return Err(PotentialError::NotDoubleWell(
            "V'' changes sign to the right of the well".into(),
        ));
    }

    // sup(-V'') is attained at a root of V'''
    let theta = d3v
        .real_roots(ROOT_TOL)
        .into_iter()
        .map(|x| -d2v.eval(x))
        .fold(-d2v.eval(0.0), f64::max);

    Ok(ValidatedPotential {
        base: PolynomialPotential::new(v.coeffs().to_vec()),
        v,
        dv,
        d2v,
        a,
        theta,
        even_derivatives_at_zero,
    })
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

impl ValidatedPotential {
    pub fn base(&self) -> &PolynomialPotential {
        &self.base
    }

    /// Location of the right well bottom.
    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// `V^(2k)(0)` for `k = 0, 1, 2, ...`.
    pub fn even_derivatives_at_zero(&self) -> &[f64] {
        &self.even_derivatives_at_zero
    }

    pub fn poly(&self) -> &Poly {
        &self.v
    }

    /// `V`, `V'` or `V''` at `x`. Orders above 2 are rejected.
    pub fn eval_derivs(&self, x: f64, order: u8) -> f64 {
        match order {
            0 => self.v.eval(x),
            1 => self.dv.eval(x),
            2 => self.d2v.eval(x),
            _ => panic!("derivative order {order} not supported"),
        }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        self.v.eval(x)
    }

    #[inline]
    pub fn grad(&self, x: f64) -> f64 {
        self.dv.eval(x)
    }

    #[inline]
    pub fn curvature(&self, x: f64) -> f64 {
        self.d2v.eval(x)
    }

    /// `W_m(x) = V(x) + (alpha/2) x^2 - alpha m x`.
    #[inline]
    pub fn effective_potential(&self, params: &EffectiveParams, x: f64) -> f64 {
        self.v.eval(x) + params.alpha * x * (0.5 * x - params.m)
    }

    /// `W_m'(x) = V'(x) + alpha (x - m)`.
    #[inline]
    pub fn effective_grad(&self, params: &EffectiveParams, x: f64) -> f64 {
        self.dv.eval(x) + params.alpha * (x - params.m)
    }

    /// `W_m` as a polynomial.
    pub fn effective_poly(&self, params: &EffectiveParams) -> Poly {
        self.v
            .add(&Poly::new(vec![0.0, -params.alpha * params.m, 0.5 * params.alpha]))
    }

    /// Largest `|V''|` over `[-r, r]`.
    pub fn max_abs_curvature(&self, r: f64) -> f64 {
        let r = r.abs();
        self.d2v
            .derivative()
            .real_roots(ROOT_TOL)
            .into_iter()
            .filter(|x| x.abs() <= r)
            .chain([r, -r, 0.0])
            .map(|x| self.d2v.eval(x).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quartic() -> ValidatedPotential {
        validate(&PolynomialPotential::quartic()).unwrap()
    }

    #[test]
    fn quartic_is_valid() {
        let vp = quartic();
        assert!((vp.a() - 1.0).abs() < 1e-12);
        assert!((vp.theta() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sextic_is_valid() {
        let vp = validate(&PolynomialPotential::new(vec![
            0.0,
            0.0,
            -0.5,
            0.0,
            0.0,
            0.0,
            1.0 / 6.0,
        ]))
        .unwrap();
        assert!((vp.a() - 1.0).abs() < 1e-12);
        assert!((vp.theta() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degree_too_low() {
        let err = validate(&PolynomialPotential::new(vec![0.0, 0.0, 0.5])).unwrap_err();
        assert_eq!(err, PotentialError::DegreeTooLow(2));
    }

    #[test]
    fn single_well_rejected() {
        let err =
            validate(&PolynomialPotential::new(vec![0.0, 0.0, 0.5, 0.0, 0.25])).unwrap_err();
        assert!(matches!(err, PotentialError::NotDoubleWell(_)), "{err:?}");
    }

    #[test]
    fn odd_term_rejected() {
        let err =
            validate(&PolynomialPotential::new(vec![0.0, 0.1, -0.5, 0.0, 0.25])).unwrap_err();
        assert!(matches!(err, PotentialError::NotEven { power: 1, .. }));
    }

    #[test]
    fn constant_term_rejected() {
        let err =
            validate(&PolynomialPotential::new(vec![1.0, 0.0, -0.5, 0.0, 0.25])).unwrap_err();
        assert_eq!(err, PotentialError::NonzeroAtOrigin(1.0));
    }

    #[test]
    fn negative_leading_rejected() {
        let err =
            validate(&PolynomialPotential::new(vec![0.0, 0.0, 0.5, 0.0, -0.25])).unwrap_err();
        assert!(matches!(err, PotentialError::NotConvexAtInfinity(_)));
    }

    #[test]
    fn negative_quartic_term_under_sextic_rejected() {
        // x^6 - x^4 - x^2/2: V^(4)(0) = -24
        let err = validate(&PolynomialPotential::new(vec![
            0.0, 0.0, -0.5, 0.0, -1.0, 0.0, 1.0,
        ]))
        .unwrap_err();
        assert!(matches!(
            err,
            PotentialError::NegativeEvenDerivative { order: 4, .. }
        ));
    }

    #[test]
    fn empty_rejected() {
        assert_eq!(
            validate(&PolynomialPotential::new(vec![])).unwrap_err(),
            PotentialError::EmptyCoefficients
        );
    }

    #[test]
    fn derivative_values() {
        let vp = quartic();
        assert_eq!(vp.eval_derivs(1.0, 0), -0.25);
        assert_eq!(vp.eval_derivs(1.0, 1), 0.0);
        assert_eq!(vp.eval_derivs(0.0, 2), -1.0);
    }

    #[test]
    fn effective_potential_values() {
        let vp = quartic();
        let p = |alpha, m| EffectiveParams::new(alpha, 1.0, m);
        assert_eq!(vp.effective_potential(&p(1.0, 0.0), 0.0), 0.0);
        assert_eq!(vp.effective_potential(&p(1.0, 0.0), 1.0), 0.25);
        assert_eq!(vp.effective_potential(&p(2.0, 1.0), 1.0), -1.25);
        let q = vp.effective_poly(&p(2.0, 1.0));
        assert!((q.eval(1.0) + 1.25).abs() < 1e-15);
        assert!((vp.effective_grad(&p(2.0, 1.0), 1.0) - 0.0).abs() < 1e-15);
    }

    #[test]
    fn max_curvature_on_window() {
        let vp = quartic();
        assert!((vp.max_abs_curvature(2.0) - 11.0).abs() < 1e-12);
        assert!((vp.max_abs_curvature(0.1) - 1.0).abs() < 1e-12);
    }
}
