//! The metric table.
//!
//! Columns, in this order: `init_time,source,variable,level,region,lead_hours,metric,value`.
//! `level` is in hPa with 0 for surface variables. Values carry 9 significant
//! digits; RMSE of specific humidity is written in g/kg, every other value
//! in storage units.

use std::io::{Read, Write};

use chrono::SecondsFormat;
use thiserror::Error;

use crate::grid::{Channel, PressureLevel, Variable};
use crate::verify::{Metric, MetricRecord};

pub const CSV_HEADER: [&str; 8] =
    ["init_time", "source", "variable", "level", "region", "lead_hours", "metric", "value"];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("CSV line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Formats `v` with 9 significant digits, `%g` style.
pub fn format_value(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        return format!("{}e{exp}", trim_zeros(mantissa));
    }
    let decimals = (8 - exp) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Value as written to the table: humidity RMSE in g/kg.
pub fn display_value(record: &MetricRecord) -> f64 {
    match record.metric {
        Metric::Rmse => record.value * record.channel.variable().display_units().0,
        Metric::Acc => record.value,
    }
}

/// Writes records in the order given.
pub fn write_metrics_csv<W: Write>(records: &[MetricRecord], sink: W) -> Result<(), ReportError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
    w.write_record(CSV_HEADER)?;
    for r in records {
        let level = r.channel.level().hpa().to_string();
        let lead = r.lead_hours.to_string();
        let value = format_value(display_value(r));
        w.write_record([
            r.init_time.to_rfc3339_opts(SecondsFormat::Secs, true).as_str(),
            &r.source,
            r.channel.variable().name(),
            &level,
            &r.region,
            &lead,
            r.metric.name(),
            &value,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One parsed table row. `value_text` is the cell exactly as written.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub line: u64,
    pub init_time: String,
    pub source: String,
    pub channel: Channel,
    pub region: String,
    pub lead_hours: u32,
    pub metric: Metric,
    pub value: f64,
    pub value_text: String,
}

pub fn read_metrics_csv<R: Read>(source: R) -> Result<Vec<CsvRow>, ReportError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(source);
    let mut rows = Vec::new();
    let mut saw_header = false;
    for result in reader.records() {
        let record = result.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            ReportError::Parse { line, message: e.to_string() }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let err = |message: String| ReportError::Parse { line, message };
        if !saw_header {
            let found: Vec<&str> = record.iter().collect();
            if found != CSV_HEADER {
                return Err(err(format!("expected header {}, found {}", CSV_HEADER.join(","), found.join(","))));
            }
            saw_header = true;
            continue;
        }
        if record.len() != CSV_HEADER.len() {
            return Err(err(format!("{} columns, expected {}", record.len(), CSV_HEADER.len())));
        }
        let variable: Variable = record[2].parse().map_err(|_| err(format!("unknown variable `{}`", &record[2])))?;
        let level: u16 = record[3].parse().map_err(|_| err(format!("bad level `{}`", &record[3])))?;
        let channel =
            Channel::new(variable, PressureLevel(level)).map_err(|e| err(e.to_string()))?;
        let lead_hours: u32 = record[5].parse().map_err(|_| err(format!("bad lead `{}`", &record[5])))?;
        let metric: Metric = record[6].parse().map_err(err)?;
        let value: f64 = record[7].parse().map_err(|_| err(format!("bad value `{}`", &record[7])))?;
        rows.push(CsvRow {
            line,
            init_time: record[0].to_string(),
            source: record[1].to_string(),
            channel,
            region: record[4].to_string(),
            lead_hours,
            metric,
            value,
            value_text: record[7].to_string(),
        });
    }
    if !saw_header {
        return Err(ReportError::Parse { line: 1, message: "empty table".into() });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};

    #[test]
    fn nine_significant_digits() {
        assert_eq!(format_value(0.0), "0");
        assert_eq!(format_value(1.0), "1");
        assert_eq!(format_value(123.456789012), "123.456789");
        assert_eq!(format_value(-0.000123456789012), "-0.000123456789");
        assert_eq!(format_value(9.9999999999), "10");
        assert_eq!(format_value(1.5e-7), "1.5e-7");
        assert_eq!(format_value(123456789012.0), "1.23456789e11");
        assert_eq!(format_value(0.987654321987), "0.987654322");
        for v in [std::f64::consts::PI, 2.5e-9, 1e12, -42.0, 0.1] {
            let back: f64 = format_value(v).parse().unwrap();
            assert!(((back - v) / v).abs() < 1e-8);
        }
    }

    fn record(channel: &str, metric: Metric, value: f64) -> MetricRecord {
        MetricRecord {
            init_time: Utc.with_ymd_and_hms(2023, 6, 6, 0, 0, 0).unwrap(),
            source: "gfs".into(),
            channel: channel.parse().unwrap(),
            region: "east_asia".into(),
            lead_hours: 24,
            metric,
            value,
        }
    }

    #[test]
    fn write_then_read() {
        let records = vec![
            record("MSLP", Metric::Rmse, 123.25),
            record("Q500", Metric::Rmse, 0.00042),
            record("Q500", Metric::Acc, 0.91),
        ];
        let mut out = Vec::new();
        write_metrics_csv(&records, &mut out).unwrap();
        let text = String::from_utf8(out.clone()).unwrap();
        assert_eq!(
            text,
            "init_time,source,variable,level,region,lead_hours,metric,value\n\
             2023-06-06T00:00:00Z,gfs,MSLP,0,east_asia,24,RMSE,123.25\n\
             2023-06-06T00:00:00Z,gfs,Q,500,east_asia,24,RMSE,0.42\n\
             2023-06-06T00:00:00Z,gfs,Q,500,east_asia,24,ACC,0.91\n"
        );
        let rows = read_metrics_csv(out.as_slice()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].channel.name(), "Q500");
        assert_eq!(rows[1].value, 0.42);
        assert_eq!(rows[2].line, 4);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "init_time,source,variable,level,region,lead_hours,metric,value\n\
                    2023-06-06T00:00:00Z,gfs,MSLP,0,global,24,RMSE,1\n\
                    2023-06-06T00:00:00Z,gfs,T2,500,global,24,RMSE,1\n";
        match read_metrics_csv(text.as_bytes()) {
            Err(ReportError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "a,b\n";
        assert!(matches!(read_metrics_csv(text.as_bytes()), Err(ReportError::Parse { line: 1, .. })));
        let text = "init_time,source,variable,level,region,lead_hours,metric,value\nx,y\n";
        assert!(matches!(read_metrics_csv(text.as_bytes()), Err(ReportError::Parse { line: 2, .. })));
    }
}
