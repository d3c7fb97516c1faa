//! Uniformly sampled multi-channel time series and their CSV form.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub const ETA: &str = "eta";
pub const HEAVE: &str = "heave";

/// Uniformly sampled channels sharing one time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesRecord {
    pub case_id: String,
    pub t0: f64,
    pub dt: f64,
    channels: Vec<(String, Vec<f64>)>,
}

impl TimeSeriesRecord {
    pub fn new(case_id: impl Into<String>, t0: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Config(format!("sample interval must be positive, got {dt}")));
        }
        Ok(Self { case_id: case_id.into(), t0, dt, channels: Vec::new() })
    }

    /// Adds or replaces a channel. All channels must share one length of at least 2.
    pub fn set_channel(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if values.len() < 2 {
            return Err(Error::Data(format!("channel '{name}' needs at least 2 samples, got {}", values.len())));
        }
        if let Some((other, v)) = self.channels.iter().find(|(n, _)| n != name) {
            if v.len() != values.len() {
                return Err(Error::Data(format!(
                    "channel '{name}' has {} samples but '{other}' has {}",
                    values.len(),
                    v.len()
                )));
            }
        }
        match self.channels.iter_mut().find(|(n, _)| n == name) {
            Some((_, v)) => *v = values,
            None => self.channels.push((name.to_string(), values)),
        }
        Ok(())
    }

    pub fn with_channel(mut self, name: &str, values: Vec<f64>) -> Result<Self> {
        self.set_channel(name, values)?;
        Ok(self)
    }

    pub fn channel(&self, name: &str) -> Result<&[f64]> {
        self.channels
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::Data(format!("record '{}' has no channel '{name}'", self.case_id)))
    }

    pub fn has_channel(&self, name: &str) -> bool {
        self.channels.iter().any(|(n, _)| n == name)
    }

    pub fn channel_names(&self) -> impl Iterator<Item = &str> {
        self.channels.iter().map(|(n, _)| n.as_str())
    }

    /// Number of samples (0 for a record with no channels yet).
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, |(_, v)| v.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn time(&self, index: usize) -> f64 {
        self.t0 + index as f64 * self.dt
    }

    /// Drops the first `count` samples of every channel and advances `t0`.
    pub fn trim_head(&mut self, count: usize) -> Result<()> {
        let len = self.len();
        if count + 2 > len {
            return Err(Error::Config(format!(
                "cannot trim {count} samples from a record of {len}; at least 2 must remain"
            )));
        }
        for (_, v) in &mut self.channels {
            v.drain(..count);
        }
        self.t0 += count as f64 * self.dt;
        Ok(())
    }

    /// Writes the record as CSV: a `t,<channels...>` header, one row per sample.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = String::from("t");
        for (name, _) in &self.channels {
            header.push(',');
            header.push_str(name);
        }
        writeln!(out, "{header}")?;
        let mut line = String::new();
        for i in 0..self.len() {
            line.clear();
            line.push_str(&self.time(i).to_string());
            for (_, v) in &self.channels {
                line.push(',');
                line.push_str(&v[i].to_string());
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Reads a record written by [`write_csv`](Self::write_csv). The sample
    /// interval is recovered from the first and last time stamps.
    pub fn read_csv<R: BufRead>(case_id: &str, input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty CSV".into()))??;
        let names: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
        if names.first() != Some(&"t") || names.len() < 2 {
            return Err(Error::Format(format!("expected header 't,<channel>...', got '{header}'")));
        }
        let mut t = Vec::new();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len() - 1];
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let parse = |f: Option<&str>| -> Result<f64> {
                let f = f.ok_or_else(|| Error::Format(format!("row {} has too few fields", row + 2)))?;
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("row {}: cannot parse '{f}': {e}", row + 2)))
            };
            t.push(parse(fields.next())?);
            for col in cols.iter_mut() {
                col.push(parse(fields.next())?);
            }
            if fields.next().is_some() {
                return Err(Error::Format(format!("row {} has too many fields", row + 2)));
            }
        }
        if t.len() < 2 {
            return Err(Error::Data(format!("record '{case_id}' has fewer than 2 samples")));
        }
        let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
        let mut record = TimeSeriesRecord::new(case_id, t[0], dt)?;
        for (name, col) in names[1..].iter().zip(cols) {
            record.set_channel(name, col)?;
        }
        Ok(record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_preserves_values() {
        let rec = TimeSeriesRecord::new("c0", 120.0, 0.775)
            .unwrap()
            .with_channel(ETA, vec![0.1, -2.5e-9, 3.141592653589793])
            .unwrap()
            .with_channel(HEAVE, vec![1.0, 2.0, -1.0 / 3.0])
            .unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,eta,heave\n"));
        let back = TimeSeriesRecord::read_csv("c0", buf.as_slice()).unwrap();
        assert_eq!(back.channel(ETA).unwrap(), rec.channel(ETA).unwrap());
        assert_eq!(back.channel(HEAVE).unwrap(), rec.channel(HEAVE).unwrap());
        assert!((back.dt - 0.775).abs() < 1e-12);
    }

    #[test]
    fn mismatched_channel_lengths_rejected() {
        let rec = TimeSeriesRecord::new("c", 0.0, 1.0).unwrap().with_channel(ETA, vec![0.0; 4]).unwrap();
        assert!(matches!(rec.with_channel(HEAVE, vec![0.0; 3]), Err(Error::Data(_))));
    }

    #[test]
    fn trim_advances_start_time() {
        let mut rec = TimeSeriesRecord::new("c", 0.0, 0.5).unwrap().with_channel(ETA, (0..10).map(f64::from).collect()).unwrap();
        rec.trim_head(4).unwrap();
        assert_eq!(rec.len(), 6);
        assert_eq!(rec.t0, 2.0);
        assert_eq!(rec.channel(ETA).unwrap()[0], 4.0);
    }

    #[test]
    fn missing_channel_is_data_error() {
        let rec = TimeSeriesRecord::new("c", 0.0, 1.0).unwrap().with_channel(ETA, vec![0.0; 4]).unwrap();
        assert!(matches!(rec.channel(HEAVE), Err(Error::Data(_))));
    }
}
