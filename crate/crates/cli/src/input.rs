//! CSV ingestion with per-analysis row deletion.
//!
//! Cells that are empty or read `NA`, `NaN` or `.` are missing. A row is
//! dropped from an analysis only when one of the columns that analysis
//! references is missing, so different features can retain different rows.

use std::fs::File;
use std::path::Path;

use palmrt::Dataset;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Columns of one analysis. Interaction columns are products of two
/// covariates and join the covariate block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub response: String,
    pub feature: String,
    pub covariates: Vec<String>,
    pub interactions: Vec<(String, String)>,
    #[serde(default = "default_intercept")]
    pub intercept: bool,
}

fn default_intercept() -> bool {
    true
}

impl ModelSpec {
    pub fn new(response: &str, feature: &str, covariates: &[&str]) -> Self {
        Self {
            response: response.to_string(),
            feature: feature.to_string(),
            covariates: covariates.iter().map(|c| c.to_string()).collect(),
            interactions: Vec::new(),
            intercept: true,
        }
    }

    /// Parses `a:b` into a pair.
    pub fn parse_interaction(term: &str) -> Result<(String, String)> {
        match term.split_once(':') {
            Some((a, b)) if !a.trim().is_empty() && !b.trim().is_empty() && !b.contains(':') => {
                Ok((a.trim().to_string(), b.trim().to_string()))
            }
            _ => Err(CliError::Spec(format!("interaction '{term}' must have the form a:b"))),
        }
    }

    fn validate(&self) -> Result<()> {
        let mut names = vec![&self.response, &self.feature];
        names.extend(&self.covariates);
        for (i, a) in names.iter().enumerate() {
            if names[..i].contains(a) {
                return Err(CliError::Spec(format!(
                    "column '{a}' is used more than once in the model"
                )));
            }
        }
        for (a, b) in &self.interactions {
            for name in [a, b] {
                if !self.covariates.contains(name) {
                    return Err(CliError::Spec(format!(
                        "interaction {a}:{b} references '{name}', which is not a declared covariate"
                    )));
                }
            }
            if a == b {
                return Err(CliError::Spec(format!("interaction {a}:{b} repeats a column")));
            }
        }
        for (i, pair) in self.interactions.iter().enumerate() {
            let flipped = (pair.1.clone(), pair.0.clone());
            if self.interactions[..i].iter().any(|p| p == pair || *p == flipped) {
                return Err(CliError::Spec(format!(
                    "interaction {}:{} is listed twice",
                    pair.0, pair.1
                )));
            }
        }
        Ok(())
    }
}

/// A dataset together with how many rows survived deletion.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub dataset: Dataset,
    pub n_used: usize,
    pub n_dropped: usize,
}

/// Raw CSV contents; columns are parsed on demand.
#[derive(Debug, Clone)]
pub struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
    /// 1-based file line of each row.
    lines: Vec<u64>,
}

fn is_missing(cell: &str) -> bool {
    let cell = cell.trim();
    cell.is_empty() || cell == "." || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan")
}

impl Table {
    pub fn from_path(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_reader(file)
    }

    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        for (i, h) in headers.iter().enumerate() {
            if headers[..i].contains(h) {
                return Err(CliError::Spec(format!("duplicate column header '{h}'")));
            }
        }
        let mut rows = Vec::new();
        let mut lines = Vec::new();
        for record in reader.records() {
            let record = record?;
            lines.push(record.position().map_or(0, |p| p.line()));
            rows.push(record.iter().map(str::to_string).collect());
        }
        Ok(Self { headers, rows, lines })
    }

    pub fn headers(&self) -> &[String] {
        &self.headers
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::MissingColumn(name.to_string()))
    }

    /// Parsed values of `name`, `None` where missing.
    fn column(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let j = self.column_index(name)?;
        self.rows
            .iter()
            .zip(&self.lines)
            .map(|(row, &line)| {
                let cell = row[j].trim();
                if is_missing(cell) {
                    return Ok(None);
                }
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(Some(v)),
                    _ => Err(CliError::Parse {
                        line,
                        column: name.to_string(),
                        value: cell.to_string(),
                    }),
                }
            })
            .collect()
    }

    /// Dataset for `model` after dropping rows with a missing referenced cell.
    pub fn dataset(&self, model: &ModelSpec) -> Result<Loaded> {
        model.validate()?;
        let y = self.column(&model.response)?;
        let x = self.column(&model.feature)?;
        let z: Vec<Vec<Option<f64>>> = model.covariates.iter().map(|c| self.column(c)).collect::<Result<_>>()?;
        let keep: Vec<usize> = (0..self.rows.len())
            .filter(|&i| y[i].is_some() && x[i].is_some() && z.iter().all(|c| c[i].is_some()))
            .collect();
        if keep.is_empty() {
            return Err(CliError::EmptyData {
                feature: model.feature.clone(),
                rows: self.rows.len(),
            });
        }
        let pick = |col: &[Option<f64>]| -> Vec<f64> { keep.iter().map(|&i| col[i].unwrap_or_default()).collect() };
        let mut covariates: Vec<Vec<f64>> = z.iter().map(|c| pick(c)).collect();
        for (a, b) in &model.interactions {
            let ia = model.covariates.iter().position(|c| c == a).unwrap_or_default();
            let ib = model.covariates.iter().position(|c| c == b).unwrap_or_default();
            let product = covariates[ia].iter().zip(&covariates[ib]).map(|(u, v)| u * v).collect();
            covariates.push(product);
        }
        let dataset = Dataset::new(pick(&y), pick(&x), covariates, model.intercept)?;
        Ok(Loaded {
            n_used: keep.len(),
            n_dropped: self.rows.len() - keep.len(),
            dataset,
        })
    }
}

/// Reads `path` and builds the dataset for `model`.
pub fn load_csv(path: &Path, model: &ModelSpec) -> Result<Loaded> {
    Table::from_path(path)?.dataset(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> Table {
        Table::from_reader(text.as_bytes()).unwrap()
    }

    const CSV: &str = "id,y,x,age,bmi\n\
        a,1.0,0.5,30,22.5\n\
        b,2.0,1.5,41,27.0\n\
        c,,2.5,35,24.0\n\
        d,0.5,NA,50,30.5\n\
        e,1.5,0.0,28,.\n\
        f,3.0,1.0,60,26.0\n";

    #[test]
    fn complete_rows_are_kept() {
        let t = table("y,x\n1,2\n3,4\n5,7\n");
        let loaded = t.dataset(&ModelSpec::new("y", "x", &[])).unwrap();
        assert_eq!(loaded.n_used, 3);
        assert_eq!(loaded.dataset.x(), &[2.0, 4.0, 7.0]);
    }

    #[test]
    fn deletion_depends_on_referenced_columns() {
        let t = table(CSV);
        assert_eq!(t.dataset(&ModelSpec::new("y", "age", &[])).unwrap().n_used, 5);
        assert_eq!(t.dataset(&ModelSpec::new("y", "x", &[])).unwrap().n_used, 4);
        let full = t.dataset(&ModelSpec::new("y", "x", &["age", "bmi"])).unwrap();
        assert_eq!((full.n_used, full.n_dropped), (3, 3));
        assert_eq!(full.dataset.y(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn interaction_is_product_of_retained_rows() {
        let mut model = ModelSpec::new("y", "x", &["age", "bmi"]);
        model
            .interactions
            .push(ModelSpec::parse_interaction("age:bmi").unwrap());
        let loaded = table(CSV).dataset(&model).unwrap();
        let z = loaded.dataset.z();
        assert_eq!(z.len(), 3);
        let expected: Vec<f64> = z[0].iter().zip(&z[1]).map(|(a, b)| a * b).collect();
        assert_eq!(z[2], expected);
        assert_eq!(z[2], vec![30.0 * 22.5, 41.0 * 27.0, 60.0 * 26.0]);
    }

    #[test]
    fn errors_name_the_problem() {
        let t = table(CSV);
        assert!(matches!(
            t.dataset(&ModelSpec::new("y", "height", &[])),
            Err(CliError::MissingColumn(c)) if c == "height"
        ));
        match t.dataset(&ModelSpec::new("y", "id", &[])) {
            Err(CliError::Parse { line, column, value }) => {
                assert_eq!((line, column.as_str(), value.as_str()), (2, "id", "a"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let empty = table("y,x\nNA,1\n2,\n");
        assert!(matches!(
            empty.dataset(&ModelSpec::new("y", "x", &[])),
            Err(CliError::EmptyData { .. })
        ));
    }

    #[test]
    fn model_validation() {
        let t = table(CSV);
        assert!(matches!(
            t.dataset(&ModelSpec::new("y", "x", &["x"])),
            Err(CliError::Spec(_))
        ));
        let mut model = ModelSpec::new("y", "x", &["age"]);
        model.interactions.push(("age".into(), "bmi".into()));
        assert!(matches!(t.dataset(&model), Err(CliError::Spec(_))));
        assert!(ModelSpec::parse_interaction("age").is_err());
        assert!(ModelSpec::parse_interaction("a:b:c").is_err());
        assert!(Table::from_reader("a,a\n1,2\n".as_bytes()).is_err());
    }
}
