//! Reading back the CSV artifacts the commands write.

use std::path::Path;

use wavemotion::Error;

/// A CSV file held in memory as strings.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn expect_header(&self, expected: &str) -> Result<(), Error> {
        let joined = self.header.join(",");
        if joined == expected {
            Ok(())
        } else {
            Err(Error::Format(format!("expected header {expected:?}, found {joined:?}")))
        }
    }

    pub fn index_of(&self, column: &str) -> Result<usize, Error> {
        self.header
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| Error::Format(format!("no column {column:?}")))
    }

    /// Parses one column as numbers.
    pub fn column(&self, column: &str) -> Result<Vec<f64>, Error> {
        let i = self.index_of(column)?;
        self.rows
            .iter()
            .map(|r| r[i].parse::<f64>().map_err(|_| Error::Format(format!("{column}: not a number: {:?}", r[i]))))
            .collect()
    }

    /// Rows whose `column` equals `value`.
    pub fn filter(&self, column: &str, value: &str) -> Result<Table, Error> {
        let i = self.index_of(column)?;
        Ok(Table { header: self.header.clone(), rows: self.rows.iter().filter(|r| r[i] == value).cloned().collect() })
    }
}

pub fn read_table(path: &Path) -> anyhow::Result<Table> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    Ok(Table { header, rows })
}
