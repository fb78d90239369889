//! Polygamma functions not provided by `statrs`.

pub use statrs::function::gamma::{digamma, ln_gamma};

/// Shift argument up to this bound before using the asymptotic series.
const ASYMPTOTIC_FROM: f64 = 10.0;

/// First derivative of the digamma function, for `x > 0`.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < ASYMPTOTIC_FROM {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let r = 1.0 / x;
    let r2 = r * r;
    // 1/x + 1/(2x^2) + sum B_2k / x^(2k+1)
    let series = r
        + 0.5 * r2
        + r * r2
            * (1.0 / 6.0
                + r2 * (-1.0 / 30.0 + r2 * (1.0 / 42.0 + r2 * (-1.0 / 30.0 + r2 * 5.0 / 66.0))));
    acc + series
}

/// Second derivative of the digamma function, for `x > 0`.
pub fn tetragamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < ASYMPTOTIC_FROM {
        acc -= 2.0 / (x * x * x);
        x += 1.0;
    }
    let r = 1.0 / x;
    let r2 = r * r;
    let series = -r2
        - r2 * r
        - r2 * r2
            * (0.5 + r2 * (-1.0 / 6.0 + r2 * (1.0 / 6.0 + r2 * (-3.0 / 10.0 + r2 * 5.0 / 6.0))));
    acc + series
}

#[cfg(test)]
mod tests {
    use super::*;

    const ZETA3: f64 = 1.202_056_903_159_594_2;

    #[test]
    fn known_values() {
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((trigamma(1.0) - pi2 / 6.0).abs() < 1e-13);
        assert!((trigamma(0.5) - pi2 / 2.0).abs() < 1e-12);
        assert!((tetragamma(1.0) + 2.0 * ZETA3).abs() < 1e-12);
        assert!((tetragamma(0.5) + 14.0 * ZETA3).abs() < 1e-11);
    }

    #[test]
    fn derivatives_agree_with_differences() {
        for &x in &[0.3f64, 1.7, 4.2, 9.99, 10.01, 37.0, 400.0] {
            let h = 1e-5 * x.max(1.0);
            let d1 = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert!(
                (d1 - trigamma(x)).abs() < 1e-6 * trigamma(x).abs().max(1.0),
                "x={x}"
            );
            let d2 = (trigamma(x + h) - trigamma(x - h)) / (2.0 * h);
            assert!(
                (d2 - tetragamma(x)).abs() < 1e-6 * tetragamma(x).abs().max(1.0),
                "x={x}"
            );
        }
    }
}
