//! Numeric text formatting shared by every CSV/JSON artifact.

use crate::scalar::Real;

/// 17 significant digits: round-trips any `f64` exactly.
pub fn fmt_real<T: Real>(x: T) -> String {
    format!("{:.16e}", x.to_f64_lossy())
}

/// Joins already formatted fields into one CSV line (no trailing newline).
pub fn csv_line<I, S>(fields: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut out = String::new();
    for (k, f) in fields.into_iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        out.push_str(f.as_ref());
    }
    out
}
