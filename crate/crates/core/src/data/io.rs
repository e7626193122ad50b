//! CSV readers and writers for loans, transactions and ownership rows.

use std::io::{Read, Write};

use super::{DataError, LoanRecord, LoanTable, OwnershipRow, RawColumn, TransactionRow};
use crate::month::YearMonth;

const LOAN_PREFIX: [&str; 5] = [
    "loan_id",
    "company_id",
    "origination_month",
    "company_size",
    "default",
];

fn csv_err(line: u64, message: impl Into<String>) -> DataError {
    DataError::Csv {
        line,
        message: message.into(),
    }
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn check_header(headers: &csv::StringRecord, expected: &[&str]) -> Result<(), DataError> {
    let got: Vec<&str> = headers.iter().take(expected.len()).collect();
    if got != expected {
        return Err(csv_err(
            1,
            format!("header must start with `{}`, got `{}`", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

fn parse_month(field: &str, line: u64) -> Result<YearMonth, DataError> {
    field.parse().map_err(|e: crate::month::MonthParseError| csv_err(line, e.to_string()))
}

/// Reads `loan_id,company_id,origination_month,company_size,default,<features...>`.
///
/// A feature column is numerical when every non-empty cell parses as a number,
/// categorical otherwise.
pub fn read_loans(reader: impl Read) -> Result<LoanTable, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_err(1, e.to_string()))?.clone();
    check_header(&headers, &LOAN_PREFIX)?;
    let feature_names: Vec<String> = headers.iter().skip(LOAN_PREFIX.len()).map(String::from).collect();
    let mut records = Vec::new();
    let mut cells: Vec<Vec<Option<String>>> = vec![Vec::new(); feature_names.len()];
    for result in rdr.records() {
        let rec = result.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_err(line, e.to_string())
        })?;
        let line = line_of(&rec);
        if rec.len() != headers.len() {
            return Err(csv_err(line, format!("expected {} fields, got {}", headers.len(), rec.len())));
        }
        let default = match &rec[4] {
            "0" => false,
            "1" => true,
            other => return Err(csv_err(line, format!("default must be 0 or 1, got `{other}`"))),
        };
        records.push(LoanRecord {
            loan_id: rec[0].to_string(),
            company_id: rec[1].to_string(),
            origination_month: parse_month(&rec[2], line)?,
            company_size: rec[3].parse().map_err(|e: String| csv_err(line, e))?,
            default,
        });
        for (c, col) in cells.iter_mut().enumerate() {
            let v = &rec[LOAN_PREFIX.len() + c];
            col.push((!v.is_empty()).then(|| v.to_string()));
        }
    }
    let columns = cells
        .into_iter()
        .map(|col| {
            let numeric: Option<Vec<Option<f64>>> = col
                .iter()
                .map(|c| match c {
                    None => Some(None),
                    Some(s) => s.parse::<f64>().ok().filter(|v| v.is_finite()).map(Some),
                })
                .collect();
            match numeric {
                Some(v) => RawColumn::Numeric(v),
                None => RawColumn::Categorical(col),
            }
        })
        .collect();
    LoanTable::new(records, feature_names, columns)
}

pub fn write_loans(table: &LoanTable, writer: impl Write) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let header: Vec<&str> = LOAN_PREFIX
        .iter()
        .copied()
        .chain(table.feature_names.iter().map(String::as_str))
        .collect();
    w.write_record(&header)?;
    for (i, r) in table.records.iter().enumerate() {
        let mut row = vec![
            r.loan_id.clone(),
            r.company_id.clone(),
            r.origination_month.to_string(),
            r.company_size.to_string(),
            if r.default { "1" } else { "0" }.to_string(),
        ];
        for col in &table.columns {
            row.push(match col {
                RawColumn::Numeric(v) => v[i].map(format_number).unwrap_or_default(),
                RawColumn::Categorical(v) => v[i].clone().unwrap_or_default(),
            });
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed six-decimal rendering keeps generated files byte-stable.
pub fn format_number(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

pub fn read_transactions(reader: impl Read) -> Result<Vec<TransactionRow>, DataError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_err(1, e.to_string()))?.clone();
    check_header(&headers, &["src_company", "dst_company", "month", "amount"])?;
    let mut out = Vec::new();
    for result in rdr.records() {
        let rec = result.map_err(|e| csv_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = line_of(&rec);
        if rec.len() != 4 {
            return Err(csv_err(line, format!("expected 4 fields, got {}", rec.len())));
        }
        let amount: f64 = rec[3]
            .parse()
            .map_err(|_| csv_err(line, format!("amount `{}` is not a number", &rec[3])))?;
        if !amount.is_finite() || amount < 0.0 {
            return Err(csv_err(line, format!("amount must be non-negative, got {amount}")));
        }
        out.push(TransactionRow {
            src_company: rec[0].to_string(),
            dst_company: rec[1].to_string(),
            month: parse_month(&rec[2], line)?,
            amount,
        });
    }
    Ok(out)
}

pub fn write_transactions(rows: &[TransactionRow], writer: impl Write) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["src_company", "dst_company", "month", "amount"])?;
    for r in rows {
        w.write_record([
            r.src_company.as_str(),
            r.dst_company.as_str(),
            &r.month.to_string(),
            &format_number(r.amount),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ownerships(reader: impl Read) -> Result<Vec<OwnershipRow>, DataError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_err(1, e.to_string()))?.clone();
    check_header(&headers, &["company_a", "company_b", "month"])?;
    let mut out = Vec::new();
    for result in rdr.records() {
        let rec = result.map_err(|e| csv_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = line_of(&rec);
        if rec.len() != 3 {
            return Err(csv_err(line, format!("expected 3 fields, got {}", rec.len())));
        }
        out.push(OwnershipRow {
            company_a: rec[0].to_string(),
            company_b: rec[1].to_string(),
            month: parse_month(&rec[2], line)?,
        });
    }
    Ok(out)
}

pub fn write_ownerships(rows: &[OwnershipRow], writer: impl Write) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["company_a", "company_b", "month"])?;
    for r in rows {
        w.write_record([r.company_a.as_str(), r.company_b.as_str(), &r.month.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
