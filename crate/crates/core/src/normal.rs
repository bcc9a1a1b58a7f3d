//! Standard normal helpers.

use libm::erfc;
use statrs::function::erf::erfc_inv;

pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Φ(z), computed through erfc so the lower tail keeps relative accuracy.
#[inline]
pub fn cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Upper tail 1 − Φ(z).
#[inline]
pub fn sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Φ⁻¹(p) for p in (0, 1).
pub fn quantile(p: f64) -> f64 {
    let z = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    if !z.is_finite() {
        return z;
    }
    // One Halley step against the accurate cdf.
    let (err, dens) = if z > 0.0 { (p - 1.0 + sf(z), pdf(z)) } else { (cdf(z) - p, pdf(z)) };
    if dens <= 0.0 {
        return z;
    }
    let u = err / dens;
    z - u / (1.0 + 0.5 * z * u)
}
