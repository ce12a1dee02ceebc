//! Number formatting for reports: six significant digits, `%g` style.

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Format with six significant digits, switching to exponent notation for
/// magnitudes below 1e-4 or at least 1e6, trailing zeros trimmed.
pub fn fmt_sig(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        format!("{}e{exp}", trim_fraction(mantissa))
    } else {
        let decimals = (5 - exp) as usize;
        trim_fraction(&format!("{x:.decimals$}")).to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::fmt_sig;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt_sig(488.1631), "488.163");
        assert_eq!(fmt_sig(0.5989), "0.5989");
        assert_eq!(fmt_sig(1.0), "1");
        assert_eq!(fmt_sig(-242.857), "-242.857");
        assert_eq!(fmt_sig(1234567.0), "1.23457e6");
        assert_eq!(fmt_sig(0.000012345678), "1.23457e-5");
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(999999.7), "1e6");
        assert_eq!(fmt_sig(-0.918938533), "-0.918939");
    }
}
