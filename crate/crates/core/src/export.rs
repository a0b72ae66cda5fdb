//! Number formatting and tabular writers shared by the library and the CLI.

use std::fmt::Write as _;

/// `%.{digits}g`-style formatting (trailing zeros trimmed).
pub fn fmt_g(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= digits as i32 {
        let m = trim_zeros(mantissa);
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// 17 significant digits, for machine-readable files.
pub fn fmt_g17(x: f64) -> String {
    fmt_g(x, 17)
}

/// 4 significant digits, for human-facing summaries.
pub fn fmt_g4(x: f64) -> String {
    fmt_g(x, 4)
}

/// Quotes a cell if it contains a delimiter, quote or line break.
pub fn csv_cell(cell: &str) -> std::borrow::Cow<'_, str> {
    if cell.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", cell.replace('"', "\"\"")).into()
    } else {
        cell.into()
    }
}

/// Joins a header and rows of pre-formatted cells into CSV text.
pub fn csv_text(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = header.iter().map(|h| csv_cell(h)).collect::<Vec<_>>().join(",");
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.iter().map(|c| csv_cell(c)).collect::<Vec<_>>().join(","));
    }
    s
}
