//! Number formatting for CSV output.

/// Formats `x` like C's `%.{digits}g`: shortest of fixed or exponent form,
/// trailing zeros stripped. Negative zero prints as `0`.
pub fn sig(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        let fixed = format!("{:.*}", decimals, x);
        let out = trim_zeros(&fixed);
        if out == "-0" { "0".into() } else { out.to_string() }
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::sig;

    #[test]
    fn matches_printf_g() {
        assert_eq!(sig(0.0, 9), "0");
        assert_eq!(sig(-0.0, 9), "0");
        assert_eq!(sig(1.0, 9), "1");
        assert_eq!(sig(-4.0, 9), "-4");
        assert_eq!(sig(0.1, 9), "0.1");
        assert_eq!(sig(1.0 / 3.0, 9), "0.333333333");
        assert_eq!(sig(123456.789, 4), "1.235e+05");
        assert_eq!(sig(1.5e-7, 9), "1.5e-07");
        assert_eq!(sig(0.0001, 9), "0.0001");
        assert_eq!(sig(-1e-20, 3), "-1e-20");
        assert_eq!(sig(2.5, 1), "2");
    }
}
