//! Measurement tables: CSV with a header of measurement names and one row
//! per subject. Values are written in shortest round-trip form.

use std::path::Path;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementTable {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl MeasurementTable {
    pub fn new(names: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(i) = rows.iter().position(|r| r.len() != names.len()) {
            return Err(CliError::input(format!(
                "row {} has {} values, header has {}",
                i + 1,
                rows[i].len(),
                names.len()
            )));
        }
        Ok(Self { names, rows })
    }

    pub fn row(&self, index: usize) -> Result<&[f64]> {
        self.rows.get(index).map(Vec::as_slice).ok_or_else(|| {
            CliError::input(format!("row {index} requested, table has {} rows", self.rows.len()))
        })
    }

    /// Errors unless the header equals `names`, in order.
    pub fn expect_names<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> Result<()> {
        let expected: Vec<&str> = names.into_iter().collect();
        if self.names.iter().map(String::as_str).ne(expected.iter().copied()) {
            return Err(CliError::input(format!(
                "CSV header {:?} does not match profile {:?}",
                self.names, expected
            )));
        }
        Ok(())
    }
}

pub fn format_value(v: f64) -> String {
    format!("{v}")
}

pub fn format_table(table: &MeasurementTable) -> String {
    if table.names.is_empty() {
        return "\n".to_owned();
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(&table.names).expect("in-memory write");
    for row in &table.rows {
        w.write_record(row.iter().map(|&v| format_value(v)))
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output")
}

pub fn parse_table(text: &str) -> Result<MeasurementTable> {
    if text.trim().is_empty() {
        return Ok(MeasurementTable {
            names: Vec::new(),
            rows: Vec::new(),
        });
    }
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let names: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| CliError::input(format!("row {}: bad number `{f}`", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    MeasurementTable::new(names, rows)
}

pub fn read_table(path: &Path) -> Result<MeasurementTable> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::from(e).context(path.display()))?;
    parse_table(&text).map_err(|e| e.context(path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_round_trip_bitwise() {
        let rows = vec![
            vec![0.1 + 0.2, 1.0 / 3.0, 1e-300, 123_456_789.123_456_79],
            vec![f64::MIN_POSITIVE, 2.0f64.sqrt(), 1e22, 5e-324],
        ];
        let names = ["a", "b,c", "d\"e", "f"].map(String::from).to_vec();
        let t = MeasurementTable::new(names, rows).unwrap();
        let text = format_table(&t);
        assert!(!text.contains('\r'));
        let back = parse_table(&text).unwrap();
        assert_eq!(back.names, t.names);
        for (x, y) in back.rows.iter().flatten().zip(t.rows.iter().flatten()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn empty_header() {
        let t = MeasurementTable::new(vec![], vec![]).unwrap();
        assert_eq!(format_table(&t), "\n");
        assert_eq!(parse_table("\n").unwrap(), t);
    }

    #[test]
    fn ragged_rows_fail() {
        assert!(parse_table("a,b\n1,2\n3\n").is_err());
        assert!(parse_table("a\nx\n").is_err());
    }
}
