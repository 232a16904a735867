//! CSV panels: a `timestamp` column followed by one column per node.

use std::path::Path;

use super::STDataset;
use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Options for [`load_csv`].
#[derive(Debug, Clone, Copy, Default)]
pub struct CsvOptions {
    /// Expected stride in seconds; inferred from the first two rows when absent.
    pub freq_seconds: Option<i64>,
    /// Fill missing cells with the previous value instead of rejecting them.
    pub forward_fill: bool,
}

fn parse_timestamp(s: &str) -> Option<i64> {
    if let Ok(t) = s.parse::<i64>() {
        return Some(t);
    }
    chrono::DateTime::parse_from_rfc3339(s).ok().map(|d| d.timestamp())
}

pub fn load_csv(path: impl AsRef<Path>, opts: CsvOptions) -> Result<STDataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, opts)
}

/// Row numbers in errors are 1-based file lines (the header is line 1).
pub fn read_csv(reader: impl std::io::Read, opts: CsvOptions) -> Result<STDataset> {
    let mut rdr = ::csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Ingestion { row: 1, msg: e.to_string() })?
        .clone();
    if headers.is_empty() {
        return Err(Error::Ingestion { row: 1, msg: "missing header".into() });
    }
    let node_ids: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let n = node_ids.len();

    let mut timestamps = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut freq = opts.freq_seconds;
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Ingestion { row, msg: e.to_string() })?;
        if rec.len() != n + 1 {
            return Err(Error::Ingestion {
                row,
                msg: format!("expected {} fields, found {}", n + 1, rec.len()),
            });
        }
        let ts = parse_timestamp(rec[0].trim()).ok_or_else(|| Error::Ingestion {
            row,
            msg: format!("unparsable timestamp `{}`", &rec[0]),
        })?;
        if let Some(&prev) = timestamps.last() {
            let step = ts - prev;
            match freq {
                None if step > 0 => freq = Some(step),
                Some(f) if step == f => {}
                _ => {
                    return Err(Error::Ingestion {
                        row,
                        msg: format!(
                            "timestamp stride violation: step {step}s, expected {}s",
                            freq.map_or("positive".to_string(), |f| f.to_string())
                        ),
                    })
                }
            }
        }
        timestamps.push(ts);
        for (j, cell) in rec.iter().skip(1).enumerate() {
            let cell = cell.trim();
            let missing = cell.is_empty() || cell.eq_ignore_ascii_case("nan");
            let v = if missing {
                match (opts.forward_fill, columns[j].last()) {
                    (true, Some(&p)) => p,
                    _ => {
                        return Err(Error::Ingestion {
                            row,
                            msg: format!("missing value for node `{}`", node_ids[j]),
                        })
                    }
                }
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Ingestion {
                    row,
                    msg: format!("unparsable number `{cell}` for node `{}`", node_ids[j]),
                })?;
                if !v.is_finite() {
                    return Err(Error::Ingestion { row, msg: format!("non-finite value `{cell}`") });
                }
                v
            };
            columns[j].push(v);
        }
    }
    let t = timestamps.len();
    let data: Vec<f64> = columns.into_iter().flatten().collect();
    STDataset::new(Mat::from_vec(n, t, data), timestamps, node_ids, freq.unwrap_or(1))
}

pub fn write_csv(ds: &STDataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_csv_to(ds, file)
}

pub fn write_csv_to(ds: &STDataset, writer: impl std::io::Write) -> Result<()> {
    let mut w = ::csv::Writer::from_writer(writer);
    let io = |e: ::csv::Error| Error::Io(std::io::Error::other(e));
    let mut header = vec!["timestamp".to_string()];
    header.extend(ds.node_ids.iter().cloned());
    w.write_record(&header).map_err(io)?;
    for (t, ts) in ds.timestamps.iter().enumerate() {
        let mut rec = vec![ts.to_string()];
        rec.extend((0..ds.n_nodes()).map(|i| format!("{}", ds.values[(i, t)])));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
