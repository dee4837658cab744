//! CSV writing with a fixed number format, so reruns are byte-identical.

use std::path::Path;

use crate::commands::{CliError, Result};

/// Twelve significant digits in exponent form; zero is written as 0.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        "0".into()
    } else {
        format!("{x:.12e}")
    }
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let err = |e: csv::Error| CliError::Output { path: path.to_path_buf(), msg: e.to_string() };
    let mut w = csv::WriterBuilder::new().delimiter(b',').from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::Output { path: path.to_path_buf(), msg: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format_is_stable() {
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(-0.0), "0");
        assert_eq!(fmt_num(0.9083362), "9.083362000000e-1");
        assert_eq!(fmt_num(1.0 / 3.0), "3.333333333333e-1");
    }
}
