//! Fixed-precision decimal formatting shared by every text file format.

/// Formats `x` with 9 significant digits using the same rules as C's `%.9g`:
/// fixed notation for decimal exponents in `[-4, 9)`, scientific otherwise,
/// trailing zeros removed.
pub fn sig9(x: f64) -> String {
    format_g(x, 9)
}

pub fn format_g(x: f64, precision: usize) -> String {
    assert!(precision >= 1);
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{:.*e}", precision - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= precision as i32 {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (precision as i32 - 1 - exp) as usize;
        strip_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_printf_g() {
        assert_eq!(sig9(0.0), "0");
        assert_eq!(sig9(1.0), "1");
        assert_eq!(sig9(-2.5), "-2.5");
        assert_eq!(sig9(std::f64::consts::PI), "3.14159265");
        assert_eq!(sig9(0.0001234), "0.0001234");
        assert_eq!(sig9(0.00001234), "1.234e-05");
        assert_eq!(sig9(123456789.0), "123456789");
        assert_eq!(sig9(1234567890.0), "1.23456789e+09");
        assert_eq!(sig9(0.999999999949), "1");
        assert_eq!(sig9(7.0 - 2.0 * std::f64::consts::PI), "0.716814693");
    }

    #[test]
    fn parses_back_close() {
        for &x in &[1e-300, -3.3e12, 0.1, 42.0, 6.02214076e23] {
            let y: f64 = sig9(x).parse().unwrap();
            assert!(((x - y) / x).abs() < 1e-8);
        }
    }
}
