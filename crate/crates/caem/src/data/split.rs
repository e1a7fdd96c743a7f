//! Train / validation / test splitting.
//!
//! The model trains on normal behaviour only, so anomalous windows are
//! routed straight to the test split in both strategies here.

use rand::seq::SliceRandom;

use crate::data::window::Window;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<Window>,
    pub val: Vec<Window>,
    pub test: Vec<Window>,
}

/// Shuffle the normal windows with a seeded stream and deal them out in
/// `train:val:test = 5:1:4` proportions (floor arithmetic; the remainder
/// joins the test split). Anomalous windows all land in test.
pub fn split_ratio(windows: Vec<Window>, seed: u64) -> Result<Split> {
    let (mut normals, anomalies): (Vec<Window>, Vec<Window>) =
        windows.into_iter().partition(|w| !w.label);
    let mut rng = stream(seed, Stream::Split, 0, 0);
    normals.shuffle(&mut rng);

    let n = normals.len();
    let n_train = n * 5 / 10;
    let n_val = n / 10;
    if n_train == 0 || n_val == 0 {
        return Err(Error::TooFewSamples { needed: 10, got: n });
    }
    let mut it = normals.into_iter();
    let train: Vec<Window> = it.by_ref().take(n_train).collect();
    let val: Vec<Window> = it.by_ref().take(n_val).collect();
    let mut test: Vec<Window> = it.collect();
    test.extend(anomalies);
    Ok(Split { train, val, test })
}

/// Leave-one-subject-out: the named subject's windows (normal and anomalous)
/// form the test split; the other subjects' normal windows are dealt 5:1
/// into train and validation, and their anomalous windows are discarded.
pub fn split_loso(windows: Vec<Window>, holdout: &str, seed: u64) -> Result<Split> {
    let mut test = Vec::new();
    let mut rest_normal = Vec::new();
    let mut saw_holdout = false;
    for w in windows {
        let subject = w.subject.as_deref().ok_or_else(|| Error::Config {
            detail: "leave-one-subject-out needs a subject column".to_string(),
        })?;
        if subject == holdout {
            saw_holdout = true;
            test.push(w);
        } else if !w.label {
            rest_normal.push(w);
        }
    }
    if !saw_holdout {
        return Err(Error::UnknownVariant { name: format!("subject {holdout}") });
    }
    let mut rng = stream(seed, Stream::Split, 1, 0);
    rest_normal.shuffle(&mut rng);
    let n = rest_normal.len();
    let n_train = n * 5 / 6;
    if n_train == 0 || n_train == n {
        return Err(Error::TooFewSamples { needed: 6, got: n });
    }
    let mut it = rest_normal.into_iter();
    let train: Vec<Window> = it.by_ref().take(n_train).collect();
    let val: Vec<Window> = it.collect();
    Ok(Split { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(tag: f64, label: bool, subject: Option<&str>) -> Window {
        Window { data: vec![tag; 4], label, subject: subject.map(|s| s.to_string()) }
    }

    #[test]
    fn ratio_split_counts_and_anomaly_routing() {
        let mut windows: Vec<Window> = (0..100).map(|i| window(i as f64, false, None)).collect();
        windows.extend((0..7).map(|i| window(1000.0 + i as f64, true, None)));
        let split = split_ratio(windows, 11).unwrap();
        assert_eq!(split.train.len(), 50);
        assert_eq!(split.val.len(), 10);
        assert_eq!(split.test.len(), 47);
        assert!(split.train.iter().all(|w| !w.label));
        assert!(split.val.iter().all(|w| !w.label));
        assert_eq!(split.test.iter().filter(|w| w.label).count(), 7);
    }

    #[test]
    fn ratio_split_is_seed_deterministic_and_partitions() {
        let windows: Vec<Window> = (0..40).map(|i| window(i as f64, i % 5 == 0, None)).collect();
        let a = split_ratio(windows.clone(), 3).unwrap();
        let b = split_ratio(windows.clone(), 3).unwrap();
        assert_eq!(a, b);
        let c = split_ratio(windows.clone(), 4).unwrap();
        assert_ne!(a.train, c.train);

        let mut tags: Vec<i64> = a
            .train
            .iter()
            .chain(&a.val)
            .chain(&a.test)
            .map(|w| w.data[0] as i64)
            .collect();
        tags.sort_unstable();
        assert_eq!(tags, (0..40).collect::<Vec<i64>>());
    }

    #[test]
    fn ratio_split_rejects_tiny_inputs() {
        let windows: Vec<Window> = (0..5).map(|i| window(i as f64, false, None)).collect();
        assert!(matches!(split_ratio(windows, 0), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn loso_holds_out_exactly_the_subject() {
        let mut windows = Vec::new();
        for s in ["a", "b", "c"] {
            for i in 0..12 {
                windows.push(window(i as f64, i == 0, Some(s)));
            }
        }
        let split = split_loso(windows, "b", 7).unwrap();
        assert_eq!(split.test.len(), 12);
        assert!(split.test.iter().all(|w| w.subject.as_deref() == Some("b")));
        // 22 normal windows from a and c: 18 train, 4 val, anomalies dropped.
        assert_eq!(split.train.len() + split.val.len(), 22);
        assert_eq!(split.train.len(), 18);
        assert!(split.train.iter().chain(&split.val).all(|w| !w.label));
    }

    #[test]
    fn loso_unknown_subject_errors() {
        let windows = vec![window(0.0, false, Some("a"))];
        assert!(matches!(split_loso(windows, "zz", 0), Err(Error::UnknownVariant { .. })));
    }

    #[test]
    fn loso_requires_subjects() {
        let windows = vec![window(0.0, false, None)];
        assert!(matches!(split_loso(windows, "a", 0), Err(Error::Config { .. })));
    }
}
