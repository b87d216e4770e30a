//! Formatting and small file helpers shared by the report writers.

use std::path::Path;

use crate::error::Result;

/// Shortest form that still carries 17 significant digits, so every value
/// round-trips through text exactly.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Writes a CSV with the given header and rows of pre-formatted fields.
pub fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut text = String::with_capacity(64 * (rows.len() + 1));
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_text(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmt17_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02e23, 0.0] {
            let s = fmt17(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
    }
}
