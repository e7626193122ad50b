use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, LoanRecord};
use crate::config::{Config, ConfigError};
use crate::month::YearMonth;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitConfig {
    pub train_start: YearMonth,
    pub train_months: u32,
    pub test_months: u32,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_start: YearMonth::new(2019, 7).expect("valid month"),
            train_months: 18,
            test_months: 10,
            validation_fraction: 0.2,
            seed: 42,
        }
    }
}

/// Keys read by [`SplitConfig::from_config`].
pub const SPLIT_KEYS: &[&str] = &["train_start", "train_months", "test_months", "validation_fraction", "split_seed"];

impl SplitConfig {
    pub fn from_config(config: &Config) -> Result<Self, ConfigError> {
        let d = Self::default();
        Ok(Self {
            train_start: config.parse_or("train_start", d.train_start)?,
            train_months: config.parse_or("train_months", d.train_months)?,
            test_months: config.parse_or("test_months", d.test_months)?,
            validation_fraction: config.parse_or("validation_fraction", d.validation_fraction)?,
            seed: config.parse_or("split_seed", d.seed)?,
        })
    }

    pub fn to_config(&self) -> Config {
        let mut c = Config::new();
        c.set("train_start", self.train_start.to_string());
        c.set("train_months", self.train_months.to_string());
        c.set("test_months", self.test_months.to_string());
        c.set("validation_fraction", self.validation_fraction.to_string());
        c.set("split_seed", self.seed.to_string());
        c
    }
}

/// Row indices into the loan list, each ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Out-of-time split with company-level hygiene.
///
/// Loans in the training window are split into train and validation by
/// company; the test window keeps only companies absent from both. Loans
/// outside both windows belong to no partition (they remain graph context).
pub fn temporal_split(loans: &[LoanRecord], config: &SplitConfig) -> Result<Split, DataError> {
    if !(0.0..1.0).contains(&config.validation_fraction) {
        return Err(DataError::Invalid(format!(
            "validation fraction must lie in [0, 1), got {}",
            config.validation_fraction
        )));
    }
    let train_end = config.train_start.plus(config.train_months as i64);
    let test_end = train_end.plus(config.test_months as i64);
    let in_train = |m: YearMonth| m >= config.train_start && m < train_end;
    let in_test = |m: YearMonth| m >= train_end && m < test_end;

    let train_companies: BTreeSet<&str> = loans
        .iter()
        .filter(|l| in_train(l.origination_month))
        .map(|l| l.company_id.as_str())
        .collect();
    let mut companies: Vec<&str> = train_companies.iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    companies.shuffle(&mut rng);
    let n_val = (companies.len() as f64 * config.validation_fraction).round() as usize;
    let val_companies: HashSet<&str> = companies[..n_val].iter().copied().collect();

    let mut split = Split {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (i, l) in loans.iter().enumerate() {
        let c = l.company_id.as_str();
        if in_train(l.origination_month) {
            if val_companies.contains(c) {
                split.validation.push(i);
            } else {
                split.train.push(i);
            }
        } else if in_test(l.origination_month) && !train_companies.contains(c) {
            split.test.push(i);
        }
    }
    if split.test.is_empty() {
        return Err(DataError::EmptyTest);
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CompanySize;

    fn loan(id: &str, company: &str, month: &str) -> LoanRecord {
        LoanRecord {
            loan_id: id.into(),
            company_id: company.into(),
            origination_month: month.parse().unwrap(),
            company_size: CompanySize::Small,
            default: false,
        }
    }

    #[test]
    fn test_window_excludes_seen_companies() {
        let loans = vec![
            loan("a1", "A", "2019-08"),
            loan("a2", "A", "2021-02"),
            loan("b1", "B", "2021-03"),
            loan("c0", "C", "2019-02"),
            loan("c1", "C", "2021-01"),
        ];
        let cfg = SplitConfig {
            validation_fraction: 0.0,
            ..SplitConfig::default()
        };
        let s = temporal_split(&loans, &cfg).unwrap();
        assert_eq!(s.train, vec![0]);
        // pre-window loans are context only and do not taint their company
        assert_eq!(s.test, vec![2, 4]);
    }

    #[test]
    fn empty_test_is_an_error() {
        let loans = vec![loan("a1", "A", "2019-08"), loan("a2", "A", "2021-02")];
        assert!(matches!(
            temporal_split(&loans, &SplitConfig::default()),
            Err(DataError::EmptyTest)
        ));
    }

    #[test]
    fn carve_out_is_by_company_and_seeded() {
        let mut loans = Vec::new();
        for c in 0..50 {
            for k in 0..3 {
                loans.push(loan(&format!("{c}-{k}"), &format!("C{c}"), "2019-09"));
            }
        }
        loans.push(loan("t", "T", "2021-06"));
        let s1 = temporal_split(&loans, &SplitConfig::default()).unwrap();
        let s2 = temporal_split(&loans, &SplitConfig::default()).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(s1.validation.len(), 30);
        let val: HashSet<&str> = s1.validation.iter().map(|&i| loans[i].company_id.as_str()).collect();
        assert!(s1.train.iter().all(|&i| !val.contains(loans[i].company_id.as_str())));
    }
}
