//! Standard normal density, distribution function and the expected positive
//! part `E[max(z + Z, 0)]` used by both acquisition functions.

use libm::erfc;

pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

pub fn cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `z Φ(z) + φ(z)`, i.e. `E[max(z + Z, 0)]` for standard normal `Z`.
///
/// For large negative `z` the direct form cancels; the asymptotic series
/// `φ(z)/z² (1 − 3/z² + 15/z⁴ − 105/z⁶)` is used instead.
pub fn expected_positive_part(z: f64) -> f64 {
    if z < -8.0 {
        let inv2 = 1.0 / (z * z);
        pdf(z) * inv2 * (1.0 - 3.0 * inv2 + 15.0 * inv2 * inv2 - 105.0 * inv2 * inv2 * inv2)
    } else {
        (z * cdf(z) + pdf(z)).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert!((cdf(0.0) - 0.5).abs() < 1e-15);
        let c = cdf(1.959_963_984_540_054);
        assert!((c - 0.975).abs() < 1e-12, "{c}");
        assert!((pdf(0.0) - INV_SQRT_2PI).abs() < 1e-16);
        assert!((expected_positive_part(0.0) - INV_SQRT_2PI).abs() < 1e-15);
    }

    #[test]
    fn positive_part_is_continuous_at_switch() {
        let below = expected_positive_part(-8.0 - 1e-9);
        let above = expected_positive_part(-8.0 + 1e-9);
        assert!(below > 0.0 && above > 0.0);
        assert!(((below - above) / above).abs() < 1e-4, "{below} vs {above}");
    }

    #[test]
    fn positive_part_is_monotone() {
        let mut prev = 0.0;
        for i in 0..4000 {
            let z = -40.0 + i as f64 * 0.02;
            let v = expected_positive_part(z);
            assert!(v >= prev, "not monotone at {z}");
            prev = v;
        }
    }
}
