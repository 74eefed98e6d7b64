//! Six-significant-digit number formatting for reports and stdout.

/// `%g`-style formatting with 6 significant digits: fixed notation for
/// exponents in `[-4, 6)`, scientific otherwise, trailing zeros trimmed.
pub fn sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim(&format!("{v:.decimals$}")).to_string()
    } else {
        format!("{}e{exp}", trim(mantissa))
    }
}

fn trim(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Rounds through [`sig6`] so JSON reports carry the printed value.
pub fn round6(v: f64) -> f64 {
    sig6(v).parse().unwrap_or(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_printf_g() {
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(25.083), "25.083");
        assert_eq!(sig6(1.0 / 3.0), "0.333333");
        assert_eq!(sig6(-2.0 / 3.0), "-0.666667");
        assert_eq!(sig6(123456.7), "123457");
        assert_eq!(sig6(999999.6), "1e6");
        assert_eq!(sig6(1234567.0), "1.23457e6");
        assert_eq!(sig6(0.0000123456789), "1.23457e-5");
        assert_eq!(sig6(0.000123456789), "0.000123457");
        assert_eq!(sig6(100.0), "100");
        assert_eq!(sig6(1e-300), "1e-300");
        assert_eq!(round6(0.1234567), 0.123457);
    }
}
