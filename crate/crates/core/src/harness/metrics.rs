use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::Result;

/// One scalar measurement. The CSV column set is fixed:
/// `experiment,seed,metric,value,units`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub experiment: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
    pub units: String,
}

/// Append-only collection of metric rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics {
    experiment: String,
    seed: u64,
    rows: Vec<MetricsRow>,
}

impl Metrics {
    pub fn new(experiment: impl Into<String>, seed: u64) -> Self {
        Self {
            experiment: experiment.into(),
            seed,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, metric: impl Into<String>, value: f64, units: &str) {
        self.rows.push(MetricsRow {
            experiment: self.experiment.clone(),
            seed: self.seed,
            metric: metric.into(),
            value,
            units: units.to_string(),
        });
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn extend(&mut self, rows: impl IntoIterator<Item = MetricsRow>) {
        self.rows.extend(rows);
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        self.rows.iter().rev().find(|r| r.metric == metric).map(|r| r.value)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        for r in &self.rows {
            w.serialize(r).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Vec<MetricsRow>> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        r.deserialize()
            .map(|row| row.map_err(csv_err))
            .collect()
    }
}

pub(crate) fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::Other(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_fixed_columns_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut m = Metrics::new("exp", 3);
        m.push("a", 1.5, "m");
        m.push("b", -2.0, "");
        m.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("experiment,seed,metric,value,units\n"));
        assert_eq!(Metrics::read_csv(&path).unwrap(), m.rows());
        assert_eq!(m.get("b"), Some(-2.0));
    }
}
