//! Per-cell statistics over a sweep CSV.

use std::fmt::Write as _;
use std::io::Read;

use crate::sweep::{BenchError, BenchRow, Status, CSV_HEADER};

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub preset: String,
    pub scheduler: String,
    pub threads: usize,
    pub dtype: String,
    /// Rows of any status.
    pub rows: usize,
    /// Finished rows with a decode rate; only these enter the statistics.
    pub ok: usize,
    pub mean_decode_tps: Option<f64>,
    /// Sample standard deviation; 0 for a single row.
    pub stddev_decode_tps: Option<f64>,
}

/// Groups rows by (preset, scheduler, threads, dtype) in order of first
/// appearance.
pub fn summarize<R: Read>(input: R) -> Result<Vec<CellSummary>, BenchError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut records = reader.records();
    let header = match records.next() {
        None => return Ok(Vec::new()),
        Some(h) => h.map_err(|e| parse_error(&e, 1))?,
    };
    let got: Vec<&str> = header.iter().collect();
    let want: Vec<&str> = CSV_HEADER.split(',').collect();
    if got != want {
        let missing: Vec<&str> = want.iter().filter(|c| !got.contains(c)).copied().collect();
        let message = if missing.is_empty() {
            format!("header `{}` does not match `{CSV_HEADER}`", got.join(","))
        } else {
            format!("missing column(s): {}", missing.join(", "))
        };
        return Err(BenchError::Parse { line: 1, message });
    }
    let headers = header.clone();

    let mut cells: Vec<(CellSummary, Vec<f64>)> = Vec::new();
    for (i, record) in records.enumerate() {
        let fallback = i as u64 + 2;
        let record = record.map_err(|e| parse_error(&e, fallback))?;
        let line = record.position().map_or(fallback, |p| p.line());
        let row: BenchRow = record
            .deserialize(Some(&headers))
            .map_err(|e| BenchError::Parse {
                line,
                message: e.to_string(),
            })?;
        let idx = match cells.iter().position(|(c, _)| {
            c.preset == row.preset && c.scheduler == row.scheduler && c.threads == row.threads && c.dtype == row.dtype
        }) {
            Some(idx) => idx,
            None => {
                cells.push((
                    CellSummary {
                        preset: row.preset.clone(),
                        scheduler: row.scheduler.clone(),
                        threads: row.threads,
                        dtype: row.dtype.clone(),
                        rows: 0,
                        ok: 0,
                        mean_decode_tps: None,
                        stddev_decode_tps: None,
                    },
                    Vec::new(),
                ));
                cells.len() - 1
            }
        };
        let (cell, samples) = &mut cells[idx];
        cell.rows += 1;
        if let (Status::Ok, Some(tps)) = (row.status, row.decode_tps) {
            cell.ok += 1;
            samples.push(tps);
        }
    }

    Ok(cells
        .into_iter()
        .map(|(mut cell, samples)| {
            if !samples.is_empty() {
                let n = samples.len() as f64;
                let mean = samples.iter().sum::<f64>() / n;
                let var = if samples.len() > 1 {
                    samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                cell.mean_decode_tps = Some(mean);
                cell.stddev_decode_tps = Some(var.sqrt());
            }
            cell
        })
        .collect())
}

fn parse_error(e: &csv::Error, fallback: u64) -> BenchError {
    BenchError::Parse {
        line: e.position().map_or(fallback, |p| p.line()),
        message: e.to_string(),
    }
}

/// Fixed-width table, or `no data` when there are no rows.
pub fn render(cells: &[CellSummary]) -> String {
    if cells.is_empty() {
        return "no data\n".to_string();
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:<13} {:>7} {:<5} {:>5} {:>16} {:>12}",
        "preset", "scheduler", "threads", "dtype", "ok", "mean_decode_tps", "stddev"
    );
    for c in cells {
        let num = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
        let _ = writeln!(
            out,
            "{:<16} {:<13} {:>7} {:<5} {:>5} {:>16} {:>12}",
            c.preset,
            c.scheduler,
            c.threads,
            c.dtype,
            format!("{}/{}", c.ok, c.rows),
            num(c.mean_decode_tps),
            num(c.stddev_decode_tps)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv(rows: &[&str]) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    #[test]
    fn identical_rows_have_zero_spread() {
        let text = csv(&["toy,seq,1,f16,0,10.0,5.0,,ok"; 5]);
        let cells = summarize(text.as_bytes()).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].mean_decode_tps, Some(5.0));
        assert_eq!(cells[0].stddev_decode_tps, Some(0.0));
    }

    #[test]
    fn timeouts_are_excluded() {
        let text = csv(&[
            "toy,seq,1,f16,0,10.0,4.0,100,ok",
            "toy,seq,1,f16,1,,,100,timeout",
            "toy,seq,1,f16,2,10.0,6.0,100,ok",
            "toy,graph,2,q4,0,,,,timeout",
        ]);
        let cells = summarize(text.as_bytes()).unwrap();
        assert_eq!(cells[0].ok, 2);
        assert_eq!(cells[0].rows, 3);
        assert_eq!(cells[0].mean_decode_tps, Some(5.0));
        assert!((cells[0].stddev_decode_tps.unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(cells[1].mean_decode_tps, None);
        assert!(render(&cells).contains("0/1"));
    }

    #[test]
    fn empty_input_is_no_data() {
        assert!(summarize("".as_bytes()).unwrap().is_empty());
        assert!(summarize(csv(&[]).as_bytes()).unwrap().is_empty());
        assert_eq!(render(&[]), "no data\n");
    }

    #[test]
    fn malformed_rows_report_their_line() {
        let text = csv(&["toy,seq,1,f16,0,10.0,5.0,,ok", "toy,seq,many,f16,1,10.0,5.0,,ok"]);
        match summarize(text.as_bytes()) {
            Err(BenchError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let short = csv(&["toy,seq,1"]);
        assert!(matches!(summarize(short.as_bytes()), Err(BenchError::Parse { line: 2, .. })));
    }

    #[test]
    fn wrong_header_names_missing_columns() {
        let text = "preset,scheduler,threads,dtype,run,prefill_tps,peak_rss_bytes,status\n";
        match summarize(text.as_bytes()) {
            Err(BenchError::Parse { line: 1, message }) => assert!(message.contains("decode_tps")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn summarizing_twice_is_stable() {
        let text = csv(&["toy,seq,1,f16,0,10.0,4.0,,ok", "toy,seq,1,f16,1,10.0,7.0,,ok"]);
        let a = render(&summarize(text.as_bytes()).unwrap());
        let b = render(&summarize(text.as_bytes()).unwrap());
        assert_eq!(a, b);
    }
}
