use std::fs;
use std::path::Path;

use mcdp_core::counting::CountingQuery;

use crate::CliError;

/// Client records, one per CSV row, with the file line each came from.
pub struct Dataset {
    pub values: Vec<u64>,
    pub lines: Vec<u64>,
}

impl Dataset {
    /// Rejects the first record outside `[0, 2^bits)`, naming its line.
    pub fn check_domain(&self, bits: u32) -> Result<(), CliError> {
        if bits >= 64 {
            return Ok(());
        }
        for (&v, &line) in self.values.iter().zip(&self.lines) {
            if v >> bits != 0 {
                return Err(CliError::Data(format!(
                    "line {line}: value {v} is outside the domain [0, 2^{bits})"
                )));
            }
        }
        Ok(())
    }
}

pub fn load_dataset(path: &Path, column: usize, header: bool) -> Result<Dataset, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut values = Vec::new();
    let mut lines = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        let field = record
            .get(column)
            .ok_or_else(|| CliError::Data(format!("line {line}: no column {column}")))?;
        let v = field.parse::<u64>().map_err(|_| {
            CliError::Data(format!("line {line}: {field:?} is not a non-negative integer"))
        })?;
        values.push(v);
        lines.push(line);
    }
    if values.is_empty() {
        return Err(CliError::Data(format!("{}: no records", path.display())));
    }
    Ok(Dataset { values, lines })
}

/// One query per line, `id,predicate` or a bare predicate; `#` starts a comment.
pub fn load_queries(path: &Path) -> Result<Vec<CountingQuery>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let queries = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            CountingQuery::parse_line(l.trim())
                .map_err(|e| CliError::Config(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if queries.is_empty() {
        return Err(CliError::Config(format!("{}: no queries", path.display())));
    }
    Ok(queries)
}
