use std::path::Path;

use crate::error::CliError;

/// Reads a two-column CSV with header `x,y`. Row numbers in diagnostics count
/// the header as row 1, matching what an editor shows.
pub fn read_xy(path: &Path) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| CliError::input(format!("cannot open {}: {e}", path.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?
        .clone();
    let names: Vec<String> = headers.iter().map(|h| h.to_ascii_lowercase()).collect();
    if names != ["x", "y"] {
        return Err(CliError::input(format!(
            "{}: expected header `x,y`, found `{}`",
            path.display(),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let row = record.position().map_or(0, |p| p.line());
        if record.len() != 2 {
            return Err(CliError::input(format!(
                "row {row}: expected 2 fields, found {}",
                record.len()
            )));
        }
        let mut pair = [0.0f64; 2];
        for (slot, (field, name)) in pair.iter_mut().zip(record.iter().zip(["x", "y"])) {
            let value: f64 = field.parse().map_err(|_| {
                CliError::input(format!("row {row}: cannot parse {name} value '{field}'"))
            })?;
            if !value.is_finite() {
                return Err(CliError::input(format!(
                    "row {row}: non-finite {name} value '{field}'"
                )));
            }
            *slot = value;
        }
        xs.push(pair[0]);
        ys.push(pair[1]);
    }
    if xs.is_empty() {
        return Err(CliError::input(format!("{}: no data rows", path.display())));
    }
    Ok((xs, ys))
}
