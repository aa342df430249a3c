//! Result rows and their CSV/JSON persistence.
//!
//! CSV layout is fixed:
//!
//! ```text
//! run_id,config_label,epoch,loss,metric,wall_ms,seed
//! ```
//!
//! Reals are written like C's `%.17g`, lines end in `\n`, and an absent
//! metric is an empty field. JSON output is an array of objects with the
//! same keys (`metric: null` when absent).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "run_id,config_label,epoch,loss,metric,wall_ms,seed";
pub const AGGREGATE_HEADER: &str =
    "config_label,epoch,replicates,loss_mean,loss_var,metric_mean,metric_var";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config_label: String,
    pub epoch: u64,
    pub loss: f64,
    pub metric: Option<f64>,
    pub wall_ms: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::usage(format!(
                "unknown format `{other}` (expected csv or json)"
            ))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Json => "json",
        })
    }
}

/// Render a real like C's `printf("%.17g", x)`.
pub fn format_g17(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    const P: i32 = 17;
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..P).contains(&exp) {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (P - 1 - exp) as usize;
        strip_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Write rows of already formatted fields as CSV with `\n` line endings.
pub(crate) fn csv_text<I, R>(header: &str, rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let ok = "in-memory CSV writes cannot fail";
    w.write_record(header.split(',')).expect(ok);
    for row in rows {
        w.write_record(row).expect(ok);
    }
    String::from_utf8(w.into_inner().expect(ok)).expect("fields are UTF-8")
}

pub fn render_csv(records: &[RunRecord]) -> String {
    csv_text(
        CSV_HEADER,
        records.iter().map(|r| {
            [
                r.run_id.clone(),
                r.config_label.clone(),
                r.epoch.to_string(),
                format_g17(r.loss),
                r.metric.map(format_g17).unwrap_or_default(),
                r.wall_ms.to_string(),
                r.seed.to_string(),
            ]
        }),
    )
}

pub fn render_json(records: &[RunRecord]) -> Result<String> {
    let mut s = serde_json::to_string_pretty(records)
        .map_err(|e| Error::Parse(format!("json encode: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn render(records: &[RunRecord], format: Format) -> Result<String> {
    match format {
        Format::Csv => Ok(render_csv(records)),
        Format::Json => render_json(records),
    }
}

pub fn write_records(records: &[RunRecord], path: &Path, format: Format) -> Result<()> {
    let text = render(records, format)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_real(s: &str) -> Result<f64> {
    match s {
        "nan" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s
            .parse()
            .map_err(|_| Error::Parse(format!("bad real `{s}`"))),
    }
}

pub fn parse_csv(text: &str) -> Result<Vec<RunRecord>> {
    let bad = |e: csv::Error| Error::Parse(format!("csv: {e}"));
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = reader.headers().map_err(bad)?;
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(Error::Parse("missing or unexpected CSV header".into()));
    }
    reader
        .records()
        .map(|row| {
            let f = row.map_err(bad)?;
            let int = |s: &str| {
                s.parse::<u64>()
                    .map_err(|_| Error::Parse(format!("bad integer `{s}`")))
            };
            Ok(RunRecord {
                run_id: f[0].to_string(),
                config_label: f[1].to_string(),
                epoch: int(&f[2])?,
                loss: parse_real(&f[3])?,
                metric: if f[4].is_empty() {
                    None
                } else {
                    Some(parse_real(&f[4])?)
                },
                wall_ms: int(&f[5])?,
                seed: int(&f[6])?,
            })
        })
        .collect()
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("json decode: {e}")))
    } else {
        parse_csv(&text)
    }
}

/// Mean and variance across replicates for one `(config_label, epoch)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub config_label: String,
    pub epoch: u64,
    pub replicates: usize,
    pub loss_mean: f64,
    pub loss_var: f64,
    pub metric_mean: Option<f64>,
    pub metric_var: Option<f64>,
}

/// Sample mean and unbiased sample variance (0 for a single value).
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Group rows by `(config_label, epoch)` and summarize each group. Labels
/// keep their order of first appearance; epochs are ascending within a label.
pub fn aggregate_replicates(records: &[RunRecord]) -> Vec<AggregateRow> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<(usize, u64), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in records {
        let li = match order.iter().position(|l| *l == r.config_label) {
            Some(i) => i,
            None => {
                order.push(&r.config_label);
                order.len() - 1
            }
        };
        let g = groups.entry((li, r.epoch)).or_default();
        g.0.push(r.loss);
        if let Some(m) = r.metric {
            g.1.push(m);
        }
    }
    groups
        .into_iter()
        .map(|((li, epoch), (losses, metrics))| {
            let (loss_mean, loss_var) = mean_var(&losses);
            let (metric_mean, metric_var) = if metrics.is_empty() {
                (None, None)
            } else {
                let (m, v) = mean_var(&metrics);
                (Some(m), Some(v))
            };
            AggregateRow {
                config_label: order[li].to_string(),
                epoch,
                replicates: losses.len(),
                loss_mean,
                loss_var,
                metric_mean,
                metric_var,
            }
        })
        .collect()
}

pub fn render_aggregate_csv(rows: &[AggregateRow]) -> String {
    let opt = |x: Option<f64>| x.map(format_g17).unwrap_or_default();
    csv_text(
        AGGREGATE_HEADER,
        rows.iter().map(|r| {
            [
                r.config_label.clone(),
                r.epoch.to_string(),
                r.replicates.to_string(),
                format_g17(r.loss_mean),
                format_g17(r.loss_var),
                opt(r.metric_mean),
                opt(r.metric_var),
            ]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(label: &str, epoch: u64, loss: f64, metric: Option<f64>) -> RunRecord {
        RunRecord {
            run_id: "r0".into(),
            config_label: label.into(),
            epoch,
            loss,
            metric,
            wall_ms: 12,
            seed: 7,
        }
    }

    #[test]
    fn g17_matches_printf() {
        // reference strings from Python's "%.17g" % x
        let cases = [
            (0.1, "0.10000000000000001"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (4.149515568880993e-20, "4.1495155688809929e-20"),
            (123456789.0, "123456789"),
            (1e17, "1e+17"),
            (1e16, "10000000000000000"),
            (0.0001, "0.0001"),
            (0.00001, "1.0000000000000001e-05"),
            (1.0 / 3.0, "0.33333333333333331"),
        ];
        for (x, s) in cases {
            assert_eq!(format_g17(x), s, "{x:e}");
        }
        assert_eq!(format_g17(f64::NAN), "nan");
        assert_eq!(format_g17(0.0), "0");
    }

    #[test]
    fn empty_csv_is_header_only() {
        assert_eq!(render_csv(&[]), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn csv_rows_and_round_trip() {
        let rs = vec![
            rec("HyperAdamW+HyperT+HyperLoss", 0, 0.5, Some(1.25)),
            rec("odd,label", 1, 0.1, None),
        ];
        let text = render_csv(&rs);
        let mut lines = text.lines();
        lines.next();
        assert_eq!(
            lines.next().unwrap(),
            "r0,HyperAdamW+HyperT+HyperLoss,0,0.5,1.25,12,7"
        );
        assert_eq!(lines.next().unwrap(), "r0,\"odd,label\",1,0.10000000000000001,,12,7");
        assert_eq!(parse_csv(&text).unwrap(), rs);
    }

    #[test]
    fn json_round_trip() {
        let r = vec![rec("AdamW+LinearT", 3, 0.25, Some(0.125))];
        let text = render_json(&r).unwrap();
        let back: Vec<RunRecord> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let keys: Vec<_> = v[0].as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys.len(), 7);
        let none = render_json(&[rec("x", 0, 1.0, None)]).unwrap();
        assert!(none.contains("\"metric\": null"));
    }

    #[test]
    fn aggregate_three_row_fixture() {
        let rows = vec![
            rec("A", 1, 1.0, Some(10.0)),
            rec("A", 1, 2.0, Some(20.0)),
            rec("A", 1, 6.0, Some(30.0)),
        ];
        let agg = aggregate_replicates(&rows);
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[0].replicates, 3);
        assert_eq!(agg[0].loss_mean, 3.0);
        // ((1-3)^2 + (2-3)^2 + (6-3)^2) / 2 = 7
        assert_eq!(agg[0].loss_var, 7.0);
        assert_eq!(agg[0].metric_mean, Some(20.0));
        assert_eq!(agg[0].metric_var, Some(100.0));
    }

    #[test]
    fn aggregate_keeps_label_order() {
        let rows = vec![
            rec("Z", 0, 1.0, None),
            rec("A", 0, 1.0, None),
            rec("Z", 1, 1.0, None),
        ];
        let agg = aggregate_replicates(&rows);
        let keys: Vec<_> = agg.iter().map(|r| (r.config_label.as_str(), r.epoch)).collect();
        assert_eq!(keys, vec![("Z", 0), ("Z", 1), ("A", 0)]);
        assert!(render_aggregate_csv(&agg).starts_with(AGGREGATE_HEADER));
    }
}
