use std::collections::BTreeSet;

use multicredit::data::{
    generate_synthetic, null_rule, temporal_split, CompanySize, FeatureKind, LoanRecord, LoanTable, NullRule,
    PipelineStats, RawColumn, SplitConfig, SynthConfig,
};
use multicredit::YearMonth;

const FRACTIONS: [f64; 6] = [0.04, 0.05, 0.39, 0.40, 0.94, 0.95];

fn expected(kind: FeatureKind, f: f64) -> NullRule {
    match kind {
        FeatureKind::Numerical if f < 0.05 => NullRule::ImputeMedian,
        FeatureKind::Categorical if f < 0.05 => NullRule::ImputeMode,
        FeatureKind::Numerical if f < 0.40 => NullRule::ImputeMedianWithDummy,
        FeatureKind::Categorical if f < 0.40 => NullRule::NaLevel,
        _ if f < 0.95 => NullRule::DropWithDummy,
        _ => NullRule::Drop,
    }
}

/// 100 loans; one numeric and one categorical column per null fraction.
fn crafted() -> LoanTable {
    let n = 100;
    let month = YearMonth::new(2020, 1).unwrap();
    let records = (0..n)
        .map(|i| LoanRecord {
            loan_id: format!("L{i:03}"),
            company_id: format!("C{i:03}"),
            origination_month: month,
            company_size: CompanySize::Small,
            default: i % 4 == 0,
        })
        .collect();
    let mut names = Vec::new();
    let mut columns = Vec::new();
    for f in FRACTIONS {
        let nulls = (f * n as f64).round() as usize;
        // spread values so no two columns are correlated enough to prune
        names.push(format!("num_{}", (f * 100.0).round()));
        columns.push(RawColumn::Numeric(
            (0..n).map(|i| (i >= nulls).then_some(((i * 37 + nulls * 11) % 101) as f64)).collect(),
        ));
        names.push(format!("cat_{}", (f * 100.0).round()));
        columns.push(RawColumn::Categorical(
            (0..n).map(|i| (i >= nulls).then(|| ["a", "b", "c"][(i * 7 + nulls) % 3].to_string())).collect(),
        ));
    }
    LoanTable::new(records, names, columns).unwrap()
}

#[test]
fn decision_table_is_reproduced_at_the_boundaries() {
    let table = crafted();
    let rows: Vec<usize> = (0..table.len()).collect();
    let stats = PipelineStats::fit(&table, &rows).unwrap();
    for (k, f) in FRACTIONS.iter().enumerate() {
        for (offset, kind) in [(0, FeatureKind::Numerical), (1, FeatureKind::Categorical)] {
            let fs = &stats.features[2 * k + offset];
            assert!((fs.null_fraction - f).abs() < 1e-12, "{}", fs.name);
            assert_eq!(fs.rule, expected(kind, *f), "{}", fs.name);
            assert_eq!(null_rule(kind, *f), expected(kind, *f));
        }
    }
}

#[test]
fn split_keeps_test_companies_unseen() {
    let data = generate_synthetic(&SynthConfig::default()).unwrap();
    let loans = &data.loans.records;
    let split = temporal_split(loans, &SplitConfig::default()).unwrap();
    let companies = |rows: &[usize]| -> BTreeSet<&str> { rows.iter().map(|&r| loans[r].company_id.as_str()).collect() };
    let seen: BTreeSet<&str> = companies(&split.train).union(&companies(&split.validation)).copied().collect();
    assert!(companies(&split.test).is_disjoint(&seen));
    assert!(companies(&split.train).is_disjoint(&companies(&split.validation)));
    assert!(!split.test.is_empty());
}

#[test]
fn refitting_on_the_same_rows_is_idempotent() {
    let data = generate_synthetic(&SynthConfig {
        n_companies: 600,
        ..SynthConfig::default()
    })
    .unwrap();
    let split = temporal_split(&data.loans.records, &SplitConfig::default()).unwrap();
    let a = PipelineStats::fit(&data.loans, &split.train).unwrap();
    let b = PipelineStats::from_text(&a.to_text()).unwrap();
    assert_eq!(a, b);
    let twice = PipelineStats::fit(&data.loans, &split.train).unwrap();
    assert_eq!(a, twice);
    assert_eq!(
        a.transform_rows(&data.loans, &split.test).unwrap(),
        b.transform_rows(&data.loans, &split.test).unwrap()
    );
}
