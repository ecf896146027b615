//! Fixed-precision number formatting for output files.

/// Significant digits written for every floating-point field.
pub const SIGNIFICANT_DIGITS: usize = 9;

/// Formats `x` with nine significant digits, trailing zeros removed.
pub fn format_sig(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "NaN".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if x == 0.0 {
        return "0".into();
    }
    let exponent = x.abs().log10().floor() as i32;
    if (-5..10).contains(&exponent) {
        let decimals = (SIGNIFICANT_DIGITS as i32 - 1 - exponent).max(0) as usize;
        let s = format!("{x:.decimals$}");
        let s = if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        };
        if s == "-0" {
            "0".into()
        } else {
            s
        }
    } else {
        format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formats() {
        assert_eq!(format_sig(0.0), "0");
        assert_eq!(format_sig(1.5), "1.5");
        assert_eq!(format_sig(237.6), "237.6");
        assert_eq!(format_sig(1.0 / 3.0), "0.333333333");
        assert_eq!(format_sig(-2.0 / 3.0 * 100.0), "-66.6666667");
        assert_eq!(format_sig(123456789.0), "123456789");
        assert_eq!(format_sig(1e-7), "1.00000000e-7");
        assert_eq!(format_sig(-1e-12), "-1.00000000e-12");
        assert_eq!(format_sig(f64::NAN), "NaN");
    }

    #[test]
    fn nine_digits_survive_reparse() {
        for x in [0.61234567891, 28.9841042, 8766.123456789, 1.0e-3 / 7.0] {
            let back: f64 = format_sig(x).parse().unwrap();
            assert!((back - x).abs() <= 5e-9 * x.abs());
        }
    }
}
