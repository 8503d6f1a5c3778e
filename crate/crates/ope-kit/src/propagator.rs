//! The Euclidean two-point function of the free scalar field in four
//! dimensions, with exact derivatives of arbitrary multi-index order.
//!
//! Massive: `Delta(x) = m K_1(m|x|) / (4 pi^2 |x|)`.
//! Massless: `Delta(x) = 1 / (4 pi^2 |x|^2)`.
//!
//! Derivatives use the radial representation `Delta = h(s)` with `s = |x|^2`:
//! differentiation in `x` maps a term `h^(k)(s) x^gamma` to
//! `2 x_mu h^(k+1)(s) x^gamma + gamma_mu h^(k)(s) x^(gamma - e_mu)`, so
//! `d^alpha Delta` is a finite sum of such terms with integer coefficients.
//! The radial derivatives have closed forms:
//! `h^(k)(s) = (m^2/4pi^2) (-m^2/2)^k z^-(k+1) K_(k+1)(z)` with `z = m sqrt(s)`
//! in the massive case, and `h^(k)(s) = (-1)^k k! / (4 pi^2 s^(k+1))` in the
//! massless case.

use crate::multiindex::MultiIndex;
use crate::special;
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

/// `4 pi^2`, the normalization of the two-point function.
fn four_pi_sq() -> f64 {
    4.0 * std::f64::consts::PI * std::f64::consts::PI
}

// ---------------------------------------------------------------------------
// Points
// ---------------------------------------------------------------------------

/// A point of four-dimensional Euclidean space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point4(pub [f64; 4]);

impl Point4 {
    pub const ORIGIN: Point4 = Point4([0.0; 4]);

    pub fn sub(&self, rhs: &Point4) -> Point4 {
        Point4([
            self.0[0] - rhs.0[0],
            self.0[1] - rhs.0[1],
            self.0[2] - rhs.0[2],
            self.0[3] - rhs.0[3],
        ])
    }

    pub fn add(&self, rhs: &Point4) -> Point4 {
        Point4([
            self.0[0] + rhs.0[0],
            self.0[1] + rhs.0[1],
            self.0[2] + rhs.0[2],
            self.0[3] + rhs.0[3],
        ])
    }

    pub fn scale(&self, c: f64) -> Point4 {
        Point4([c * self.0[0], c * self.0[1], c * self.0[2], c * self.0[3]])
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Euclidean distance to another point.
    pub fn dist(&self, rhs: &Point4) -> f64 {
        self.sub(rhs).norm()
    }

    /// The monomial `prod_mu x_mu^(gamma_mu)` (with `0^0 = 1`).
    pub fn monomial(&self, gamma: &MultiIndex) -> f64 {
        let mut p = 1.0;
        for mu in 0..4 {
            p *= self.0[mu].powi(gamma.0[mu] as i32);
        }
        p
    }

    /// Applies a signed axis map: component `mu` of the result is
    /// `signs[perm[mu]] * x_(perm[mu])`. Companion of
    /// [`MultiIndex::axis_transformed`] for covariance tests.
    pub fn axis_transformed(&self, perm: &[usize; 4], signs: &[i8; 4]) -> Point4 {
        let mut out = [0.0f64; 4];
        for mu in 0..4 {
            out[mu] = signs[perm[mu]] as f64 * self.0[perm[mu]];
        }
        Point4(out)
    }
}

// ---------------------------------------------------------------------------
// Mass parameter
// ---------------------------------------------------------------------------

/// Nonnegative mass; zero selects the massless two-point function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct MassParam {
    m: f64,
}

/// Rejected mass value (negative, NaN, or infinite).
#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("mass must be a finite nonnegative number, got {0}")]
pub struct InvalidMassError(pub f64);

impl MassParam {
    pub fn new(m: f64) -> Result<MassParam, InvalidMassError> {
        if m.is_finite() && m >= 0.0 {
            Ok(MassParam { m })
        } else {
            Err(InvalidMassError(m))
        }
    }

    pub fn massless() -> MassParam {
        MassParam { m: 0.0 }
    }

    pub fn is_massless(&self) -> bool {
        self.m == 0.0
    }

    pub fn value(&self) -> f64 {
        self.m
    }
}

impl TryFrom<f64> for MassParam {
    type Error = InvalidMassError;
    fn try_from(m: f64) -> Result<MassParam, InvalidMassError> {
        MassParam::new(m)
    }
}

impl From<MassParam> for f64 {
    fn from(m: MassParam) -> f64 {
        m.m
    }
}

// ---------------------------------------------------------------------------
// Two-point function
// ---------------------------------------------------------------------------

/// Evaluation at coincident points, where the two-point function is singular.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("two-point function evaluated at its singular point x = 0")]
pub struct SingularPointError;

/// `Delta(x)`. Errors when `|x| = 0`.
pub fn propagator(x: Point4, m: MassParam) -> Result<f64, SingularPointError> {
    propagator_flagged(x, m).map(|(v, _)| v)
}

/// `Delta(x)` plus an underflow flag: `true` when the exact value is positive
/// but below binary64 range, so `0.0` is returned in its place.
pub fn propagator_flagged(x: Point4, m: MassParam) -> Result<(f64, bool), SingularPointError> {
    let s = x.norm_sq();
    if s == 0.0 {
        return Err(SingularPointError);
    }
    if m.is_massless() {
        Ok((1.0 / (four_pi_sq() * s), false))
    } else {
        let r = s.sqrt();
        let z = m.value() * r;
        let (k1, underflowed) = special::bessel_k(1, z);
        Ok((m.value() * k1 / (four_pi_sq() * r), underflowed))
    }
}

/// `d^alpha Delta(x)`, exact up to roundoff. Errors when `|x| = 0`.
pub fn propagator_derivative(
    alpha: &MultiIndex,
    x: Point4,
    m: MassParam,
) -> Result<f64, SingularPointError> {
    let s = x.norm_sq();
    if s == 0.0 {
        return Err(SingularPointError);
    }
    let terms = radial_terms(*alpha);
    let k_max = terms.iter().map(|t| t.k).max().unwrap_or(0);
    let h = radial_derivatives(s, m, k_max);
    let mut sum = 0.0;
    for t in terms.iter() {
        sum += t.coeff * h[t.k as usize] * x.monomial(&t.gamma);
    }
    Ok(sum)
}

/// `h^(k)(s)` for `k = 0..=k_max`, where `Delta(x) = h(|x|^2)`.
fn radial_derivatives(s: f64, m: MassParam, k_max: u32) -> Vec<f64> {
    let mut out = Vec::with_capacity(k_max as usize + 1);
    if m.is_massless() {
        // h^(k)(s) = (-1)^k k! / (4 pi^2 s^(k+1))
        let mut v = 1.0 / (four_pi_sq() * s);
        out.push(v);
        for k in 1..=k_max {
            v *= -(k as f64) / s;
            out.push(v);
        }
    } else {
        let mval = m.value();
        let z = mval * s.sqrt();
        let scaled = special::scaled_bessel_k_all(k_max + 1, z);
        let damp = (-z).exp();
        // h^(k)(s) = (m^2/4pi^2) (-m^2/2)^k z^-(k+1) K_(k+1)(z)
        let mut prefactor = mval * mval / four_pi_sq();
        let mut z_pow = 1.0 / z;
        for k in 0..=k_max {
            out.push(prefactor * z_pow * scaled[k as usize + 1] * damp);
            prefactor *= -0.5 * mval * mval;
            z_pow /= z;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Radial chain-rule expansion
// ---------------------------------------------------------------------------

/// One term `coeff * h^(k)(s) * x^gamma` of the expanded derivative.
#[derive(Clone, Copy, Debug, PartialEq)]
struct RadialTerm {
    k: u32,
    gamma: MultiIndex,
    coeff: f64,
}

/// Expansion of `d^alpha` applied to a radial function of `s = |x|^2`,
/// memoized per thread (the same few multi-indices recur throughout the
/// matching sums).
fn radial_terms(alpha: MultiIndex) -> Rc<Vec<RadialTerm>> {
    thread_local! {
        static CACHE: RefCell<HashMap<MultiIndex, Rc<Vec<RadialTerm>>>> =
            RefCell::new(HashMap::new());
    }
    CACHE.with(|cache| {
        if let Some(hit) = cache.borrow().get(&alpha) {
            return Rc::clone(hit);
        }
        let built = Rc::new(build_radial_terms(alpha));
        cache.borrow_mut().insert(alpha, Rc::clone(&built));
        built
    })
}

fn build_radial_terms(alpha: MultiIndex) -> Vec<RadialTerm> {
    let mut terms: HashMap<(u32, MultiIndex), f64> = HashMap::new();
    terms.insert((0, MultiIndex::ZERO), 1.0);
    for mu in 0..4 {
        for _ in 0..alpha.0[mu] {
            let mut next: HashMap<(u32, MultiIndex), f64> = HashMap::new();
            for (&(k, gamma), &coeff) in &terms {
                // d/dx_mu (h^(k)(s) x^gamma) =
                //     2 x_mu h^(k+1) x^gamma + gamma_mu h^(k) x^(gamma - e_mu)
                let mut up = gamma;
                up.0[mu] += 1;
                *next.entry((k + 1, up)).or_insert(0.0) += 2.0 * coeff;
                if gamma.0[mu] > 0 {
                    let mut down = gamma;
                    down.0[mu] -= 1;
                    *next.entry((k, down)).or_insert(0.0) += gamma.0[mu] as f64 * coeff;
                }
            }
            terms = next;
        }
    }
    let mut out: Vec<RadialTerm> = terms
        .into_iter()
        .filter(|&(_, coeff)| coeff != 0.0)
        .map(|((k, gamma), coeff)| RadialTerm { k, gamma, coeff })
        .collect();
    // Fixed order keeps floating-point sums reproducible run to run.
    out.sort_by_key(|t| (t.k, t.gamma));
    out
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    const E0: MultiIndex = MultiIndex([1, 0, 0, 0]);

    #[test]
    fn radial_expansion_first_orders() {
        let t = build_radial_terms(E0);
        assert_eq!(
            t,
            vec![RadialTerm {
                k: 1,
                gamma: E0,
                coeff: 2.0
            }]
        );
        let t = build_radial_terms(MultiIndex([2, 0, 0, 0]));
        assert_eq!(
            t,
            vec![
                RadialTerm {
                    k: 1,
                    gamma: MultiIndex::ZERO,
                    coeff: 2.0
                },
                RadialTerm {
                    k: 2,
                    gamma: MultiIndex([2, 0, 0, 0]),
                    coeff: 4.0
                },
            ]
        );
    }

    #[test]
    fn radial_expansion_structure() {
        // k is pinned to (|alpha| + |gamma|) / 2 and the leading term has
        // coefficient 2^|alpha| at gamma = alpha.
        for alpha in [
            MultiIndex([1, 2, 0, 1]),
            MultiIndex([3, 0, 0, 0]),
            MultiIndex([2, 2, 2, 2]),
            MultiIndex([0, 0, 5, 0]),
        ] {
            let a = alpha.order();
            let terms = build_radial_terms(alpha);
            for t in &terms {
                let g = t.gamma.order();
                assert_eq!((a + g) % 2, 0);
                assert_eq!(t.k, (a + g) / 2);
                assert!(t.gamma.checked_sub(&MultiIndex::ZERO).is_some());
            }
            let top = terms
                .iter()
                .find(|t| t.gamma == alpha)
                .expect("leading term present");
            assert_eq!(top.coeff, 2.0f64.powi(a as i32));
        }
    }

    #[test]
    fn zeroth_derivative_is_the_function() {
        let m = MassParam::new(1.3).unwrap();
        let x = Point4([0.4, -0.2, 0.9, 0.3]);
        let d0 = propagator_derivative(&MultiIndex::ZERO, x, m).unwrap();
        let direct = propagator(x, m).unwrap();
        assert!(((d0 - direct) / direct).abs() < 1e-14);
        // Massless: both paths evaluate the identical expression.
        let d0 = propagator_derivative(&MultiIndex::ZERO, x, MassParam::massless()).unwrap();
        assert_eq!(d0, propagator(x, MassParam::massless()).unwrap());
    }

    #[test]
    fn singular_point_rejected() {
        assert_eq!(
            propagator(Point4::ORIGIN, MassParam::massless()),
            Err(SingularPointError)
        );
        assert!(propagator_derivative(&E0, Point4::ORIGIN, MassParam::new(1.0).unwrap()).is_err());
    }

    #[test]
    fn mass_validation() {
        assert!(MassParam::new(0.0).unwrap().is_massless());
        assert!(!MassParam::new(2.0).unwrap().is_massless());
        assert_eq!(MassParam::new(-1.0), Err(InvalidMassError(-1.0)));
        assert!(MassParam::new(f64::NAN).is_err());
        assert!(MassParam::new(f64::INFINITY).is_err());
    }
}
