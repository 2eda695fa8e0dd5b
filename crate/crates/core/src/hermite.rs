//! Unit-normalized quantum harmonic-oscillator eigenfunctions.

/// Evaluate the m-th normalized 1D harmonic-oscillator eigenfunction at `x`
/// (oscillator length l_ho = 1), i.e. Φ_m with ∫ Φ_m² dx = 1.
///
/// Uses the three-term recurrence on the normalized functions
/// Φ_{m+1} = √(2/(m+1)) x Φ_m − √(m/(m+1)) Φ_{m−1},
/// which is numerically stable for the moderate orders used here, unlike
/// evaluating Hermite polynomials and normalizing afterwards.
pub fn eigenfunction(m: u32, x: f64) -> f64 {
    let phi0 = std::f64::consts::PI.powf(-0.25) * (-0.5 * x * x).exp();
    if m == 0 {
        return phi0;
    }
    let mut prev = phi0;
    let mut cur = std::f64::consts::SQRT_2 * x * phi0;
    for k in 1..m {
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * x * cur - (kf / (kf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// |Φ_m(x)|², the 1D mode intensity.
pub fn intensity(m: u32, x: f64) -> f64 {
    let v = eigenfunction(m, x);
    v * v
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn ground_state_at_origin() {
        // Φ_0(0)² = 1/√π
        assert_relative_eq!(
            intensity(0, 0.0),
            1.0 / std::f64::consts::PI.sqrt(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn odd_orders_vanish_at_origin() {
        assert_eq!(eigenfunction(1, 0.0), 0.0);
        assert_eq!(eigenfunction(3, 0.0), 0.0);
    }

    #[test]
    fn normalization_by_quadrature() {
        // High-resolution trapezoid quadrature as the independent oracle.
        let n = 20_001;
        let (a, b) = (-12.0, 12.0);
        let h = (b - a) / (n - 1) as f64;
        for m in 0..=3 {
            let mut acc = 0.0;
            for k in 0..n {
                let x = a + k as f64 * h;
                let w = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
                acc += w * intensity(m, x);
            }
            acc *= h;
            assert_relative_eq!(acc, 1.0, max_relative = 1e-8);
        }
    }

    #[test]
    fn matches_explicit_low_orders() {
        // Φ_2(x) = (2x²−1)/√2 · π^{-1/4} e^{-x²/2}
        for &x in &[-1.7, -0.3, 0.0, 0.9, 2.4] {
            let explicit = (2.0 * x * x - 1.0) / std::f64::consts::SQRT_2
                * std::f64::consts::PI.powf(-0.25)
                * (-0.5 * x * x).exp();
            assert_relative_eq!(eigenfunction(2, x), explicit, max_relative = 1e-13, epsilon = 1e-300);
        }
    }

    proptest! {
        #[test]
        fn intensity_is_even(m in 0u32..6, x in -8.0f64..8.0) {
            let lhs = intensity(m, x);
            let rhs = intensity(m, -x);
            prop_assert!((lhs - rhs).abs() <= 1e-14 * lhs.abs().max(1e-300));
        }
    }
}
