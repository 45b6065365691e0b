use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ObservationVolume;
use crate::error::{Error, Result};

/// Per-subject real-valued covariates keyed by subject id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateTable {
    subject_ids: Vec<String>,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl CovariateTable {
    pub fn new(subject_ids: Vec<String>, columns: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut seen = HashMap::new();
        for (row, id) in subject_ids.iter().enumerate() {
            if let Some(first) = seen.insert(id.as_str(), row) {
                return Err(Error::Validation(format!(
                    "duplicate subject id '{id}' (rows {} and {})",
                    first + 1,
                    row + 1
                )));
            }
        }
        let mut names = Vec::with_capacity(columns.len());
        let mut values = Vec::with_capacity(columns.len());
        for (name, col) in columns {
            if names.contains(&name) {
                return Err(Error::Validation(format!("duplicate column name '{name}'")));
            }
            if col.len() != subject_ids.len() {
                return Err(Error::Dimension {
                    expected: subject_ids.len(),
                    found: col.len(),
                });
            }
            if let Some(row) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    row: row + 1,
                    column: name,
                    message: "missing or non-finite value".into(),
                });
            }
            names.push(name);
            values.push(col);
        }
        Ok(Self {
            subject_ids,
            names,
            columns: values,
        })
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
    }

    fn permute(&self, perm: &[usize]) -> Self {
        Self {
            subject_ids: perm.iter().map(|&p| self.subject_ids[p].clone()).collect(),
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| perm.iter().map(|&p| c[p]).collect())
                .collect(),
        }
    }

    /// Writes the table back as CSV with `id_column` first.
    pub fn to_csv(&self, id_column: &str) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<&str> = std::iter::once(id_column)
            .chain(self.names.iter().map(String::as_str))
            .collect();
        w.write_record(&header).expect("in-memory write");
        for (row, id) in self.subject_ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(self.columns.iter().map(|c| c[row].to_string()));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }
}

pub fn load_covariates(path: impl AsRef<Path>, id_column: &str) -> Result<CovariateTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_covariates(&text, id_column)
}

pub(crate) fn parse_covariates(text: &str, id_column: &str) -> Result<CovariateTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Schema(format!("unreadable header row: {e}")))?
        .clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(Error::Schema("empty covariate file (no header row)".into()));
    }
    let id_idx = headers
        .iter()
        .position(|h| h == id_column)
        .ok_or_else(|| Error::Schema(format!("id column '{id_column}' not found")))?;

    let mut ids = Vec::new();
    let mut columns: Vec<(String, Vec<f64>)> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != id_idx)
        .map(|(_, h)| (h.to_string(), Vec::new()))
        .collect();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let mut col = 0;
        for (i, cell) in record.iter().enumerate() {
            if i == id_idx {
                ids.push(cell.to_string());
                continue;
            }
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: columns[col].0.clone(),
                message: format!("'{cell}' is not a number"),
            })?;
            columns[col].1.push(value);
            col += 1;
        }
    }
    if ids.is_empty() {
        return Err(Error::Schema("covariate file has no subject rows".into()));
    }
    CovariateTable::new(ids, columns)
}

/// Reorders both the volume and the table to `order`.
///
/// The volume's subjects are assumed to be in the table's current order.
pub fn align_subjects(
    volume: &ObservationVolume,
    table: &CovariateTable,
    order: &[String],
) -> Result<(ObservationVolume, CovariateTable)> {
    if volume.n_subjects() != table.n_subjects() {
        return Err(Error::Dimension {
            expected: table.n_subjects(),
            found: volume.n_subjects(),
        });
    }
    let have: BTreeSet<&str> = table.subject_ids.iter().map(String::as_str).collect();
    let want: BTreeSet<&str> = order.iter().map(String::as_str).collect();
    if have != want || order.len() != want.len() {
        let diff: Vec<&str> = have.symmetric_difference(&want).copied().collect();
        return Err(Error::Validation(format!(
            "subject ids differ between covariates and requested order: {}",
            if diff.is_empty() {
                "duplicate ids in order".to_string()
            } else {
                diff.join(", ")
            }
        )));
    }
    let position: HashMap<&str, usize> = table
        .subject_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let perm: Vec<usize> = order.iter().map(|id| position[id.as_str()]).collect();
    Ok((volume.permute_subjects(&perm), table.permute(&perm)))
}
