//! Dataset ingestion and preparation.
//!
//! The on-disk format is plain CSV: UTF-8, comma separated, one header row.
//! Two column names are reserved: `label` (integer 0/1 ground truth) and
//! `subject` (free-text series identifier); every other column is a numeric
//! signal, kept in header order. Empty cells and literal `nan` (any case)
//! are treated as missing.

pub mod noise;
pub mod split;
pub mod synth;
pub mod window;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::data::window::Window;

pub const LABEL_COLUMN: &str = "label";
pub const SUBJECT_COLUMN: &str = "subject";

/// Column-major table of signals plus the optional reserved columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub signals: Vec<String>,
    /// One Vec per signal, all of equal length.
    pub columns: Vec<Vec<f64>>,
    pub labels: Option<Vec<u8>>,
    pub subjects: Option<Vec<String>>,
}

impl Frame {
    pub fn n_rows(&self) -> usize {
        self.columns.first().map(|c| c.len()).unwrap_or(0)
    }

    pub fn n_signals(&self) -> usize {
        self.signals.len()
    }
}

/// Read a CSV file into a [`Frame`]. Missing cells come back as NaN; use
/// [`fill_missing`] before windowing.
pub fn load_csv(path: &Path) -> Result<Frame> {
    let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();

    let mut signal_idx = Vec::new();
    let mut signals = Vec::new();
    let mut label_idx = None;
    let mut subject_idx = None;
    for (i, h) in headers.iter().enumerate() {
        match h.as_str() {
            LABEL_COLUMN => label_idx = Some(i),
            SUBJECT_COLUMN => subject_idx = Some(i),
            _ => {
                signal_idx.push(i);
                signals.push(h.clone());
            }
        }
    }
    if signals.is_empty() {
        return Err(Error::EmptyInput { what: format!("{}: no signal columns", path.display()) });
    }

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); signals.len()];
    let mut labels: Vec<u8> = Vec::new();
    let mut subjects: Vec<String> = Vec::new();

    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        for (k, &i) in signal_idx.iter().enumerate() {
            let cell = record.get(i).unwrap_or("").trim();
            let v = if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
                f64::NAN
            } else {
                cell.parse::<f64>().map_err(|_| Error::NonNumericCell { row, column: signals[k].clone() })?
            };
            columns[k].push(v);
        }
        if let Some(i) = label_idx {
            let cell = record.get(i).unwrap_or("").trim();
            let v: i64 = cell
                .parse()
                .map_err(|_| Error::NonNumericCell { row, column: LABEL_COLUMN.to_string() })?;
            if v != 0 && v != 1 {
                return Err(Error::NonNumericCell { row, column: LABEL_COLUMN.to_string() });
            }
            labels.push(v as u8);
        }
        if let Some(i) = subject_idx {
            subjects.push(record.get(i).unwrap_or("").trim().to_string());
        }
    }
    if columns[0].is_empty() {
        return Err(Error::EmptyFile { path: path.display().to_string() });
    }
    Ok(Frame {
        signals,
        columns,
        labels: label_idx.map(|_| labels),
        subjects: subject_idx.map(|_| subjects),
    })
}

/// Write a [`Frame`] back out as CSV (signals in order, then `label` and
/// `subject` if present).
pub fn save_csv(path: &Path, frame: &Frame) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    let mut wtr = csv::Writer::from_writer(file);
    let mut header: Vec<String> = frame.signals.clone();
    if frame.labels.is_some() {
        header.push(LABEL_COLUMN.to_string());
    }
    if frame.subjects.is_some() {
        header.push(SUBJECT_COLUMN.to_string());
    }
    wtr.write_record(&header)?;
    for r in 0..frame.n_rows() {
        let mut rec: Vec<String> = frame.columns.iter().map(|c| format!("{}", c[r])).collect();
        if let Some(l) = &frame.labels {
            rec.push(format!("{}", l[r]));
        }
        if let Some(s) = &frame.subjects {
            rec.push(s[r].clone());
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Interpolate interior NaN runs of length `<= max_gap` linearly; drop every
/// row that still holds a NaN afterwards (longer runs and runs touching the
/// start or end of the file). Dropping removes the row from *all* columns,
/// so later rows move up; callers that care about continuity should treat a
/// cleaned frame as approximate around dropped regions.
pub fn fill_missing(frame: &Frame, max_gap: usize) -> Result<Frame> {
    let n = frame.n_rows();
    let mut columns = frame.columns.clone();
    for col in columns.iter_mut() {
        let mut i = 0;
        while i < n {
            if !col[i].is_nan() {
                i += 1;
                continue;
            }
            let start = i;
            while i < n && col[i].is_nan() {
                i += 1;
            }
            let len = i - start;
            let interior = start > 0 && i < n;
            if interior && len <= max_gap {
                let a = col[start - 1];
                let b = col[i];
                for (k, slot) in (1..=len).zip(col[start..i].iter_mut()) {
                    *slot = a + (b - a) * k as f64 / (len + 1) as f64;
                }
            }
        }
    }
    let keep: Vec<bool> = (0..n).map(|r| columns.iter().all(|c| !c[r].is_nan())).collect();
    if keep.iter().all(|&k| k) {
        return Ok(Frame { columns, ..frame.clone() });
    }
    let filter_f64 = |col: &Vec<f64>| -> Vec<f64> {
        col.iter().zip(&keep).filter(|(_, &k)| k).map(|(v, _)| *v).collect()
    };
    let columns: Vec<Vec<f64>> = columns.iter().map(filter_f64).collect();
    if columns[0].is_empty() {
        return Err(Error::EmptyDataset);
    }
    let labels = frame
        .labels
        .as_ref()
        .map(|l| l.iter().zip(&keep).filter(|(_, &k)| k).map(|(v, _)| *v).collect());
    let subjects = frame
        .subjects
        .as_ref()
        .map(|s| s.iter().zip(&keep).filter(|(_, &k)| k).map(|(v, _)| v.clone()).collect());
    Ok(Frame { signals: frame.signals.clone(), columns, labels, subjects })
}

/// Per-signal z-score statistics. Standard deviations are population (1/n)
/// and floored at 1e-8 so constant signals stay finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-8;

/// Statistics over the given windows (normally: the training split only).
pub fn compute_stats(windows: &[Window], n_signals: usize) -> Result<NormStats> {
    if windows.is_empty() {
        return Err(Error::EmptyInput { what: "windows for normalization".to_string() });
    }
    let t = windows[0].data.len() / n_signals;
    let mut mean = vec![0.0; n_signals];
    let mut count = 0usize;
    for w in windows {
        if w.data.len() != n_signals * t {
            return Err(Error::LengthMismatch { left: w.data.len(), right: n_signals * t });
        }
        for s in 0..n_signals {
            for v in &w.data[s * t..(s + 1) * t] {
                mean[s] += v;
            }
        }
        count += t;
    }
    for m in mean.iter_mut() {
        *m /= count as f64;
    }
    let mut var = vec![0.0; n_signals];
    for w in windows {
        for s in 0..n_signals {
            for v in &w.data[s * t..(s + 1) * t] {
                let d = v - mean[s];
                var[s] += d * d;
            }
        }
    }
    let std = var.iter().map(|v| (v / count as f64).sqrt().max(STD_FLOOR)).collect();
    Ok(NormStats { mean, std })
}

/// Z-score every window in place.
pub fn apply_stats(windows: &mut [Window], n_signals: usize, stats: &NormStats) -> Result<()> {
    if stats.mean.len() != n_signals || stats.std.len() != n_signals {
        return Err(Error::SignalCountMismatch { expected: n_signals, got: stats.mean.len() });
    }
    for w in windows {
        let t = w.data.len() / n_signals;
        for s in 0..n_signals {
            for v in &mut w.data[s * t..(s + 1) * t] {
                *v = (*v - stats.mean[s]) / stats.std[s];
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn loads_signals_and_reserved_columns() {
        let f = write_temp("a,label,b,subject\n1.0,0,2.0,s1\n3.0,1,4.0,s2\n");
        let frame = load_csv(f.path()).unwrap();
        assert_eq!(frame.signals, vec!["a", "b"]);
        assert_eq!(frame.columns, vec![vec![1.0, 3.0], vec![2.0, 4.0]]);
        assert_eq!(frame.labels, Some(vec![0, 1]));
        assert_eq!(frame.subjects, Some(vec!["s1".to_string(), "s2".to_string()]));
    }

    #[test]
    fn non_numeric_cell_names_row_and_column() {
        let f = write_temp("a,b\n1.0,2.0\n1.0,oops\n");
        match load_csv(f.path()) {
            Err(Error::NonNumericCell { row, column }) => {
                assert_eq!(row, 1);
                assert_eq!(column, "b");
            }
            other => panic!("expected NonNumericCell, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn label_must_be_binary() {
        let f = write_temp("a,label\n1.0,2\n");
        assert!(matches!(load_csv(f.path()), Err(Error::NonNumericCell { .. })));
    }

    #[test]
    fn header_only_file_is_empty() {
        let f = write_temp("a,b\n");
        assert!(matches!(load_csv(f.path()), Err(Error::EmptyFile { .. })));
    }

    #[test]
    fn short_gaps_interpolate_linearly() {
        // Middle row uses an empty cell, the others the literal "nan".
        let f = write_temp("a,b\n0.0,1.0\nnan,1.0\n,1.0\nNaN,1.0\n4.0,1.0\n");
        let frame = load_csv(f.path()).unwrap();
        let filled = fill_missing(&frame, 3).unwrap();
        assert_eq!(filled.columns[0], vec![0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn long_gaps_drop_their_rows() {
        let f = write_temp("a,b\n0.0,1.0\nnan,1.0\nnan,1.0\nnan,1.0\nnan,1.0\n5.0,1.0\n");
        let frame = load_csv(f.path()).unwrap();
        let filled = fill_missing(&frame, 3).unwrap();
        // Gap of 4 > 3: those rows vanish from both columns.
        assert_eq!(filled.columns[0], vec![0.0, 5.0]);
        assert_eq!(filled.columns[1], vec![1.0, 1.0]);
    }

    #[test]
    fn edge_gaps_always_drop() {
        let f = write_temp("a\nnan\n1.0\n2.0\nnan\n");
        let frame = load_csv(f.path()).unwrap();
        let filled = fill_missing(&frame, 3).unwrap();
        assert_eq!(filled.columns[0], vec![1.0, 2.0]);
    }

    #[test]
    fn csv_roundtrip_preserves_values() {
        let frame = Frame {
            signals: vec!["x".to_string(), "y".to_string()],
            columns: vec![vec![1.25, -3.5], vec![0.125, 9.0]],
            labels: Some(vec![0, 1]),
            subjects: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        save_csv(&path, &frame).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(back, frame);
    }

    #[test]
    fn stats_are_train_only_and_floored() {
        let w1 = Window { data: vec![1.0, 3.0, 10.0, 10.0], label: false, subject: None };
        let w2 = Window { data: vec![5.0, 7.0, 10.0, 10.0], label: false, subject: None };
        let stats = compute_stats(&[w1.clone(), w2.clone()], 2).unwrap();
        assert_eq!(stats.mean, vec![4.0, 10.0]);
        // Signal 0: values 1,3,5,7 -> var 5, std sqrt(5). Signal 1: constant.
        assert!((stats.std[0] - 5.0_f64.sqrt()).abs() < 1e-12);
        assert_eq!(stats.std[1], STD_FLOOR);

        let mut test = [Window { data: vec![9.0, 4.0, 10.0, 11.0], label: true, subject: None }];
        apply_stats(&mut test, 2, &stats).unwrap();
        assert!((test[0].data[0] - 5.0 / 5.0_f64.sqrt()).abs() < 1e-12);
        assert_eq!(test[0].data[3], 1.0 / STD_FLOOR);
    }
}
