//! Sliding-window extraction.

use crate::data::Frame;
use crate::error::{Error, Result};

/// One training or evaluation sample: `data` is signal-major, length
/// `n_signals * window_len` (signal 0's run first, then signal 1's, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub data: Vec<f64>,
    /// True when any covered row is labelled anomalous.
    pub label: bool,
    pub subject: Option<String>,
}

/// Cut non-overlapping-by-default windows from a frame. `stride` may be
/// smaller than `window_len` for overlap. Windows never span a change of
/// subject: the frame is first split into maximal runs of equal subject and
/// each run is windowed independently.
pub fn make_windows(frame: &Frame, window_len: usize, stride: usize) -> Result<Vec<Window>> {
    if window_len == 0 || stride == 0 {
        return Err(Error::Config { detail: "window_len and stride must be positive".to_string() });
    }
    let n = frame.n_rows();
    if n < window_len {
        return Err(Error::FrameTooShort { rows: n, window: window_len });
    }
    let mut segments: Vec<(usize, usize)> = Vec::new();
    match &frame.subjects {
        None => segments.push((0, n)),
        Some(subs) => {
            let mut start = 0;
            for r in 1..n {
                if subs[r] != subs[start] {
                    segments.push((start, r));
                    start = r;
                }
            }
            segments.push((start, n));
        }
    }
    let mut out = Vec::new();
    for (lo, hi) in segments {
        if hi - lo < window_len {
            continue;
        }
        let mut pos = lo;
        while pos + window_len <= hi {
            let mut data = Vec::with_capacity(frame.n_signals() * window_len);
            for col in &frame.columns {
                data.extend_from_slice(&col[pos..pos + window_len]);
            }
            let label = frame
                .labels
                .as_ref()
                .map(|l| l[pos..pos + window_len].iter().any(|&v| v != 0))
                .unwrap_or(false);
            let subject = frame.subjects.as_ref().map(|s| s[pos].clone());
            out.push(Window { data, label, subject });
            pos += stride;
        }
    }
    if out.is_empty() {
        return Err(Error::FrameTooShort { rows: n, window: window_len });
    }
    Ok(out)
}

/// [`make_windows`] with the model's reshape contract enforced up front:
/// the window must divide evenly into `steps` sub-windows.
pub fn make_step_windows(
    frame: &Frame,
    window_len: usize,
    steps: usize,
    stride: usize,
) -> Result<Vec<Window>> {
    if steps == 0 || window_len % steps != 0 {
        return Err(Error::IndivisibleWindow { len: window_len, sub: steps });
    }
    make_windows(frame, window_len, stride)
}
