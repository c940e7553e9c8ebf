//! Reading and writing signals, spectra and result tables.
//!
//! Value lists are either CSV (one value per line under a `value` header,
//! `#` lines ignored) or JSON arrays. Tables are CSV with a header row,
//! optionally preceded by a `# manifest: <path>` comment line.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{invalid, Result};
use crate::estimators::RiskBreakdown;
use crate::opgf::OpgfTrace;
use crate::seqcore::EsdRecord;

pub fn read_values(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        parse_json_values(&text)
    } else {
        parse_csv_values(&text)
    }
}

pub fn parse_json_values(text: &str) -> Result<Vec<f64>> {
    Ok(serde_json::from_str(text)?)
}

pub fn parse_csv_values(text: &str) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = match headers.iter().position(|h| h == "value") {
        Some(c) => c,
        None => return invalid("CSV input needs a `value` column"),
    };
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = rec.get(col).unwrap_or("");
        match field.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) => return invalid(format!("row {}: `{field}` is not a number", line + 1)),
        }
    }
    Ok(out)
}

pub fn write_values_csv(path: &Path, values: &[f64]) -> Result<()> {
    let rows = values.iter().map(|v| vec![fmt_f64(*v)]);
    write_table(path, None, &["value"], rows)
}

pub fn write_values_json(path: &Path, values: &[f64]) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(values)?)?;
    Ok(())
}

pub fn write_esd_records_json(path: &Path, records: &[EsdRecord]) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(records)?)?;
    Ok(())
}

/// Shortest representation that parses back to the same double.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Render a CSV table to bytes.
pub fn render_table<I>(manifest: Option<&str>, header: &[&str], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut buf = Vec::new();
    if let Some(m) = manifest {
        writeln!(buf, "# manifest: {m}")?;
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    Ok(buf)
}

pub fn write_table<I>(path: &Path, manifest: Option<&str>, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    fs::write(path, render_table(manifest, header, rows)?)?;
    Ok(())
}

/// Table rows that skip the `#` comment line; for reading back emitted CSVs.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?;
    let header = rdr.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        rows.push(rec?.iter().map(str::to_owned).collect());
    }
    Ok((header, rows))
}

pub fn write_risk_curve_csv(path: &Path, curve: &[RiskBreakdown]) -> Result<()> {
    let rows = curve.iter().enumerate().map(|(k, r)| {
        vec![
            k.to_string(),
            fmt_f64(r.bias_sq),
            fmt_f64(r.variance),
            fmt_f64(r.total),
        ]
    });
    write_table(path, None, &["k", "bias_sq", "variance", "total"], rows)
}

/// Per-coordinate trace: `t,j,lambda_tilde,beta,theta_hat` (1-based `j`).
pub fn write_trace_csv(path: &Path, manifest: Option<&str>, trace: &OpgfTrace) -> Result<()> {
    let rows = trace.snapshots.iter().flat_map(|s| {
        (0..s.lambda_tilde.len()).map(move |j| {
            vec![
                fmt_f64(s.t),
                (j + 1).to_string(),
                fmt_f64(s.lambda_tilde[j]),
                fmt_f64(s.beta[j]),
                fmt_f64(s.theta_hat[j]),
            ]
        })
    });
    write_table(
        path,
        manifest,
        &["t", "j", "lambda_tilde", "beta", "theta_hat"],
        rows,
    )
}

/// Per-snapshot summary: `t,esd,tuned_pc_sq_error` (empty when no truth was given).
pub fn write_trace_summary_csv(path: &Path, manifest: Option<&str>, trace: &OpgfTrace) -> Result<()> {
    let rows = trace.snapshots.iter().map(|s| {
        vec![
            fmt_f64(s.t),
            s.esd.map(|e| e.to_string()).unwrap_or_default(),
            s.tuned_pc_sq_error.map(fmt_f64).unwrap_or_default(),
        ]
    });
    write_table(path, manifest, &["t", "esd", "tuned_pc_sq_error"], rows)
}
