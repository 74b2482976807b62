//! Output formatting shared by the exporters: every float is written with
//! 12 significant digits so golden files stay stable across platforms.

use num_complex::Complex64;

/// Rounds to 12 significant digits.
pub fn sig12(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

pub fn fmt12(x: f64) -> String {
    let r = sig12(x);
    if r == 0.0 {
        // Normalizes -0.
        return "0".into();
    }
    format!("{r}")
}

pub fn complex_pair(z: Complex64) -> [f64; 2] {
    [sig12(z.re), sig12(z.im)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_digits() {
        assert_eq!(fmt12(59.99712345678901), "59.9971234568");
        assert_eq!(fmt12(-0.0), "0");
        assert_eq!(fmt12(1.0), "1");
        assert_eq!(fmt12(1.0 / 3.0), "0.333333333333");
    }
}
