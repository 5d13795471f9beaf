/// `v` rounded to five significant digits.
pub fn sig5(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if (-4..=5).contains(&exp) {
        let decimals = (4 - exp).max(0) as usize;
        format!("{v:.decimals$}")
    } else {
        format!("{v:.4e}")
    }
}

/// A `key=value` line for scripts.
pub fn kv(key: &str, value: impl std::fmt::Display) {
    println!("{key}={value}");
}

pub fn kv_num(key: &str, value: f64) {
    kv(key, sig5(value));
}

#[cfg(test)]
mod tests {
    use super::sig5;

    #[test]
    fn five_significant_digits() {
        assert_eq!(sig5(0.187204), "0.18720");
        assert_eq!(sig5(2.66831), "2.6683");
        assert_eq!(sig5(40.8031), "40.803");
        assert_eq!(sig5(123456.0), "123456");
        assert_eq!(sig5(1.23456e-7), "1.2346e-7");
        assert_eq!(sig5(0.0), "0");
    }
}
