//! CSV emission with frozen headers and `%g`-style numbers.

use std::cmp::Ordering;
use std::path::Path;

use crate::diagnostics::MetricsRecord;
use crate::error::{Error, Result};

pub const METRICS_HEADER: [&str; 10] = [
    "experiment",
    "dataset",
    "image_id",
    "method",
    "lambda",
    "psnr",
    "ssim",
    "mse",
    "nullspace_consistency",
    "range_residual",
];

/// Six significant digits, trailing zeros trimmed, `inf`/`-inf`/`nan` spelled out.
pub fn format_number(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa.to_string()), exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn optional(v: Option<f64>) -> String {
    v.map(format_number).unwrap_or_default()
}

fn lambda_order(a: Option<f64>, b: Option<f64>) -> Ordering {
    match (a, b) {
        (None, None) => Ordering::Equal,
        (None, Some(_)) => Ordering::Less,
        (Some(_), None) => Ordering::Greater,
        (Some(x), Some(y)) => x.total_cmp(&y),
    }
}

/// Sorts by `(dataset, image_id, method, lambda)` so output does not depend
/// on scheduling.
pub fn sort_records(records: &mut [MetricsRecord]) {
    records.sort_by(|a, b| {
        (&a.dataset, &a.image_id, &a.method)
            .cmp(&(&b.dataset, &b.image_id, &b.method))
            .then_with(|| lambda_order(a.lambda, b.lambda))
    });
}

pub fn metrics_to_csv(records: &[MetricsRecord]) -> Result<String> {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let rows = sorted.iter().map(|r| {
        vec![
            r.experiment.clone(),
            r.dataset.clone(),
            r.image_id.clone(),
            r.method.clone(),
            optional(r.lambda),
            format_number(r.psnr),
            optional(r.ssim),
            format_number(r.mse),
            format_number(r.nullspace_consistency),
            format_number(r.range_residual),
        ]
    });
    table_to_csv(&METRICS_HEADER, rows)
}

pub fn table_to_csv<I>(header: &[&str], rows: I) -> Result<String>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = ::csv::WriterBuilder::new().terminator(::csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let csv_err = |e: ::csv::Error| Error::Format(format!("csv: {e}"));
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::Format(format!("csv row has {} fields, header has {}", row.len(), header.len())));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("utf-8 fields"))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads a CSV produced by this module into header and rows.
pub fn read_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = ::csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let csv_err = |e: ::csv::Error| Error::Format(format!("csv: {e}"));
    let header = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()).map_err(csv_err))
        .collect::<Result<_>>()?;
    Ok((header, rows))
}
