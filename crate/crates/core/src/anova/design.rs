use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column holding the replicate index (1-based) in run tables.
pub const REPLICATE_COLUMN: &str = "replicate";
/// Column holding the measured outcome in run tables.
pub const OUTCOME_COLUMN: &str = "jaccard";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorKind {
    /// Controllable in deployment.
    Design,
    /// Controllable only in the experiment.
    Nuisance,
    /// Repetition of a treatment; generated by [`build_design`].
    Replicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub name: String,
    pub levels: Vec<String>,
    pub kind: FactorKind,
}

impl FactorSpec {
    pub fn new(name: &str, levels: &[&str], kind: FactorKind) -> Self {
        Self {
            name: name.to_owned(),
            levels: levels.iter().map(|s| (*s).to_owned()).collect(),
            kind,
        }
    }

    pub fn level_index(&self, level: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == level)
    }
}

/// The five treatment factors of the segmentation experiment, 108 cells.
pub fn default_factors() -> Vec<FactorSpec> {
    let conditionings = ["none", "opening", "convexhull"];
    vec![
        FactorSpec::new("training_set", &["all", "best"], FactorKind::Design),
        FactorSpec::new(
            "test_set",
            &["isic", "ph2", "dermofit"],
            FactorKind::Nuisance,
        ),
        FactorSpec::new("train_conditioning", &conditionings, FactorKind::Design),
        FactorSpec::new("test_conditioning", &conditionings, FactorKind::Design),
        FactorSpec::new("model", &["linknet", "deeplab"], FactorKind::Design),
    ]
}

/// One run: a level for every factor plus the replicate index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub assignment: BTreeMap<String, String>,
    pub outcome: Option<f64>,
}

impl RunRecord {
    pub fn level(&self, factor: &str) -> Option<&str> {
        self.assignment.get(factor).map(String::as_str)
    }
}

pub(crate) fn validate_factors(factors: &[FactorSpec]) -> Result<()> {
    if factors.is_empty() {
        return Err(Error::Design("design needs at least one factor".into()));
    }
    let mut names = HashSet::new();
    for f in factors {
        if f.kind == FactorKind::Replicate || f.name == REPLICATE_COLUMN {
            return Err(Error::Design(format!(
                "factor `{}`: the replicate factor is generated, not declared",
                f.name
            )));
        }
        if f.name == OUTCOME_COLUMN {
            return Err(Error::Design(format!(
                "factor name `{OUTCOME_COLUMN}` is reserved"
            )));
        }
        if !names.insert(f.name.as_str()) {
            return Err(Error::Design(format!("duplicate factor `{}`", f.name)));
        }
        if f.levels.is_empty() {
            return Err(Error::Design(format!("factor `{}` has no levels", f.name)));
        }
        let mut seen = HashSet::new();
        for l in &f.levels {
            if !seen.insert(l.as_str()) {
                return Err(Error::Design(format!(
                    "factor `{}` repeats level `{l}`",
                    f.name
                )));
            }
        }
    }
    Ok(())
}

/// Full cross product of all factor levels, each repeated `replicates`
/// times. Rows are ordered lexicographically by factor (first factor
/// slowest) then replicate.
pub fn build_design(factors: &[FactorSpec], replicates: usize) -> Result<Vec<RunRecord>> {
    validate_factors(factors)?;
    if replicates == 0 {
        return Err(Error::Design("replicates must be at least 1".into()));
    }
    let cells: usize = factors.iter().map(|f| f.levels.len()).product();
    let mut runs = Vec::with_capacity(cells * replicates);
    let mut idx = vec![0usize; factors.len()];
    for _ in 0..cells {
        for rep in 1..=replicates {
            let mut assignment: BTreeMap<String, String> = factors
                .iter()
                .zip(&idx)
                .map(|(f, &i)| (f.name.clone(), f.levels[i].clone()))
                .collect();
            assignment.insert(REPLICATE_COLUMN.to_owned(), rep.to_string());
            runs.push(RunRecord {
                assignment,
                outcome: None,
            });
        }
        // Odometer increment, last factor fastest.
        for k in (0..factors.len()).rev() {
            idx[k] += 1;
            if idx[k] < factors[k].levels.len() {
                break;
            }
            idx[k] = 0;
        }
    }
    Ok(runs)
}

/// Writes runs as CSV: factor columns in `factors` order, then `replicate`
/// and `jaccard` (empty when the outcome is absent).
pub fn write_runs<W: Write>(runs: &[RunRecord], factors: &[FactorSpec], writer: W) -> Result<()> {
    let to_err = |e: csv::Error| Error::Design(format!("cannot write runs: {e}"));
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = factors.iter().map(|f| f.name.as_str()).collect();
    header.extend([REPLICATE_COLUMN, OUTCOME_COLUMN]);
    w.write_record(&header).map_err(to_err)?;
    for run in runs {
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        for name in &header[..header.len() - 1] {
            row.push(run.level(name).unwrap_or_default().to_owned());
        }
        row.push(run.outcome.map(|o| o.to_string()).unwrap_or_default());
        w.write_record(&row).map_err(to_err)?;
    }
    w.flush()
        .map_err(|e| Error::Design(format!("cannot write runs: {e}")))
}

/// Reads a complete runs table, checking every level against `factors`.
///
/// Every row must carry a numeric outcome in `[0, 1]` and a positive
/// integer replicate index.
pub fn load_runs(path: impl AsRef<Path>, factors: &[FactorSpec]) -> Result<Vec<RunRecord>> {
    let path = path.as_ref();
    validate_factors(factors)?;
    let row_err = |row: usize, column: &str, reason: String| Error::RunsTable {
        path: path.to_owned(),
        row,
        column: column.to_owned(),
        reason,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|source| Error::Csv {
        path: path.to_owned(),
        source,
    })?;
    let headers = reader
        .headers()
        .map_err(|source| Error::Csv {
            path: path.to_owned(),
            source,
        })?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| row_err(1, name, "missing column".into()))
    };
    let factor_cols = factors
        .iter()
        .map(|f| column(&f.name))
        .collect::<Result<Vec<_>>>()?;
    let rep_col = column(REPLICATE_COLUMN)?;
    let out_col = column(OUTCOME_COLUMN)?;

    let mut runs = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| row_err(row, "*", format!("malformed row: {e}")))?;
        let field = |c: usize| record.get(c).unwrap_or("").trim();
        let mut assignment = BTreeMap::new();
        for (f, &c) in factors.iter().zip(&factor_cols) {
            let level = field(c);
            if f.level_index(level).is_none() {
                return Err(row_err(
                    row,
                    &f.name,
                    format!(
                        "unknown level `{level}` (expected one of {})",
                        f.levels.join("|")
                    ),
                ));
            }
            assignment.insert(f.name.clone(), level.to_owned());
        }
        let rep = field(rep_col);
        match rep.parse::<usize>() {
            Ok(r) if r >= 1 => {
                assignment.insert(REPLICATE_COLUMN.to_owned(), r.to_string());
            }
            _ => {
                return Err(row_err(
                    row,
                    REPLICATE_COLUMN,
                    format!("replicate must be a positive integer, got `{rep}`"),
                ))
            }
        }
        let raw = field(out_col);
        if raw.is_empty() {
            return Err(row_err(row, OUTCOME_COLUMN, "missing outcome".into()));
        }
        let outcome: f64 = raw
            .parse()
            .map_err(|_| row_err(row, OUTCOME_COLUMN, format!("non-numeric outcome `{raw}`")))?;
        if !(0.0..=1.0).contains(&outcome) {
            return Err(row_err(
                row,
                OUTCOME_COLUMN,
                format!("outcome {outcome} outside [0, 1]"),
            ));
        }
        runs.push(RunRecord {
            assignment,
            outcome: Some(outcome),
        });
    }
    Ok(runs)
}
