use std::path::Path;

use super::container::write_atomic;
use crate::error::{Error, Result};

/// One row of the metric CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub dataset: String,
    pub acceleration: usize,
    pub slice: usize,
    pub psnr_db: f64,
    pub nmse: f64,
    pub ssim: f64,
}

pub const METRIC_HEADER: &str = "dataset,acceleration,slice,psnr_db,nmse,ssim";

/// Header row plus LF-terminated records, `.` as decimal separator.
pub fn csv_text(header: &str, rows: &[Vec<String>]) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

pub fn write_csv(path: impl AsRef<Path>, header: &str, rows: &[Vec<String>]) -> Result<()> {
    write_atomic(path.as_ref(), csv_text(header, rows).as_bytes())
}

pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[MetricRow]) -> Result<()> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.dataset.clone(),
                r.acceleration.to_string(),
                r.slice.to_string(),
                r.psnr_db.to_string(),
                r.nmse.to_string(),
                r.ssim.to_string(),
            ]
        })
        .collect();
    write_csv(path, METRIC_HEADER, &rows)
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRIC_HEADER) {
        return Err(Error::Format("metric CSV header missing".into()));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Format(format!("bad number `{s}`")));
    let int = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad integer `{s}`")));
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let [d, a, s, p, n, m] = f[..] else {
                return Err(Error::Format(format!("expected 6 fields: `{l}`")));
            };
            Ok(MetricRow {
                dataset: d.into(),
                acceleration: int(a)?,
                slice: int(s)?,
                psnr_db: num(p)?,
                nmse: num(n)?,
                ssim: num(m)?,
            })
        })
        .collect()
}
