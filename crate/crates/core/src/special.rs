//! Standard normal distribution functions.
//!
//! The upper tail goes through `erfc` directly so that small p-values keep
//! full relative precision instead of being computed as `1 - cdf`.

use std::f64::consts::SQRT_2;

use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::scalar::Real;

/// `Phi(z)`.
pub fn normal_cdf<T: Real>(z: T) -> T {
    T::lit(0.5 * erfc(-z.as_f64() / SQRT_2))
}

/// `1 - Phi(z)`.
pub fn normal_sf<T: Real>(z: T) -> T {
    let z = z.as_f64();
    if z.is_nan() {
        return T::nan();
    }
    T::lit(0.5 * erfc(z / SQRT_2))
}

/// `Phi^{-1}(p)` for `p` in `[0, 1]`; returns `-inf`/`+inf` at the endpoints.
pub fn normal_quantile<T: Real>(p: T) -> T {
    let p = p.as_f64();
    if !(0.0..=1.0).contains(&p) {
        return T::nan();
    }
    if p == 0.0 {
        return T::neg_infinity();
    }
    if p == 1.0 {
        return T::infinity();
    }
    if p > 0.5 {
        return -normal_quantile(T::lit(1.0 - p));
    }
    // Polish the closed-form inverse with Newton steps on the lower tail.
    let mut z = -SQRT_2 * erfc_inv(2.0 * p);
    for _ in 0..3 {
        let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if !(pdf > 0.0) {
            break;
        }
        let step = (0.5 * erfc(-z / SQRT_2) - p) / pdf;
        z -= step;
        if step.abs() <= 1e-16 * z.abs().max(1.0) {
            break;
        }
    }
    T::lit(z)
}
