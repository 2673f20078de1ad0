//! Deterministic float formatting for CSV outputs: 9 significant digits.

pub fn sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    format!("{v:.8e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(sig9(0.5), "5.00000000e-1");
        assert_eq!(sig9(0.0), "0");
        assert_eq!(sig9(-1.0 / 3.0), "-3.33333333e-1");
        assert_eq!(sig9(123456789012.0), "1.23456789e11");
    }

    #[test]
    fn stable_across_calls() {
        for v in [1.1, -0.07, 3.0e-17, f64::MAX] {
            assert_eq!(sig9(v), sig9(v));
        }
    }
}
