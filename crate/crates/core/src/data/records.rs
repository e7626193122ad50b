use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use super::DataError;
use crate::month::YearMonth;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CompanySize {
    Small,
    Medium,
}

impl FromStr for CompanySize {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "small" => Ok(Self::Small),
            "medium" => Ok(Self::Medium),
            other => Err(format!("company_size must be small|medium, got `{other}`")),
        }
    }
}

impl fmt::Display for CompanySize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Small => "small",
            Self::Medium => "medium",
        })
    }
}

/// Identifying fields and label of one loan application.
#[derive(Clone, Debug, PartialEq)]
pub struct LoanRecord {
    pub loan_id: String,
    pub company_id: String,
    pub origination_month: YearMonth,
    pub company_size: CompanySize,
    pub default: bool,
}

/// One raw feature column; `None` marks an empty cell.
#[derive(Clone, Debug, PartialEq)]
pub enum RawColumn {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

impl RawColumn {
    pub fn len(&self) -> usize {
        match self {
            Self::Numeric(v) => v.len(),
            Self::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_null(&self, row: usize) -> bool {
        match self {
            Self::Numeric(v) => v[row].is_none(),
            Self::Categorical(v) => v[row].is_none(),
        }
    }

    pub fn kind(&self) -> FeatureKind {
        match self {
            Self::Numeric(_) => FeatureKind::Numerical,
            Self::Categorical(_) => FeatureKind::Categorical,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Categorical,
    Numerical,
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Categorical => "categorical",
            Self::Numerical => "numerical",
        })
    }
}

impl FromStr for FeatureKind {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "categorical" => Ok(Self::Categorical),
            "numerical" => Ok(Self::Numerical),
            other => Err(DataError::UnknownFeatureKind(other.to_string())),
        }
    }
}

/// Loans with their raw (pre-pipeline) feature columns.
#[derive(Clone, Debug, PartialEq)]
pub struct LoanTable {
    pub records: Vec<LoanRecord>,
    pub feature_names: Vec<String>,
    pub columns: Vec<RawColumn>,
}

impl LoanTable {
    pub fn new(
        records: Vec<LoanRecord>,
        feature_names: Vec<String>,
        columns: Vec<RawColumn>,
    ) -> Result<Self, DataError> {
        if feature_names.len() != columns.len() {
            return Err(DataError::Invalid(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                columns.len()
            )));
        }
        if let Some(c) = columns.iter().position(|c| c.len() != records.len()) {
            return Err(DataError::Invalid(format!(
                "column `{}` has {} values for {} loans",
                feature_names[c],
                columns[c].len(),
                records.len()
            )));
        }
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.loan_id.as_str()) {
                return Err(DataError::Invalid(format!("duplicate loan_id `{}`", r.loan_id)));
            }
        }
        Ok(Self {
            records,
            feature_names,
            columns,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.default).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransactionRow {
    pub src_company: String,
    pub dst_company: String,
    pub month: YearMonth,
    pub amount: f64,
}

/// Common-ownership relation observed in `month`; symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct OwnershipRow {
    pub company_a: String,
    pub company_b: String,
    pub month: YearMonth,
}

/// Model-ready features after the cleaning pipeline, one row per loan.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub rows: usize,
    pub values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn cols(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let d = self.cols();
        &self.values[r * d..(r + 1) * d]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r)[c]).collect()
    }

    /// Rows `idx` stacked into a flat row-major buffer.
    pub fn gather(&self, idx: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(idx.len() * self.cols());
        for &i in idx {
            out.extend_from_slice(self.row(i));
        }
        out
    }
}
