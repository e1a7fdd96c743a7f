//! Synthetic multi-sensor benchmark generator.
//!
//! Every signal in a normal window rides a shared integer phase on one sine
//! table plus a signal-specific harmonic, so the signals are mutually
//! coupled and individually periodic. Anomalies come in two flavours:
//!
//! * `Amplitude`: the whole window is scaled by `amplitude_factor`. Each
//!   instant is far off the learned value range, so reconstruction alone
//!   can flag it.
//! * `Decoupling`: at every segment boundary the phase decouples from the
//!   shared progression, jumping by a random amount (common to all signals,
//!   plus an independent per-signal jitter when `max_phase_jitter > 0`).
//!   Each segment taken alone is indistinguishable from normal data, which
//!   hides the fault from reconstruction; only the broken continuity
//!   between segments gives it away, so a detector must carry memory
//!   across segments to catch it.
//!
//! Noise is AR(1) with a per-window log-normal scale, so quiet and noisy
//! windows coexist the way they do in field recordings. All randomness is
//! drawn from one dedicated stream per window, which keeps any window's
//! bytes independent of how many other windows are generated.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::window::Window;
use crate::data::Frame;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnomalyKind {
    Amplitude,
    Decoupling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_signals: usize,
    pub n_normal: usize,
    pub n_anomalous: usize,
    pub window_len: usize,
    /// Phase-jump granularity for decoupling windows; must divide `window_len`.
    pub segment_len: usize,
    /// Length of the base cycle in samples.
    pub period: usize,
    pub coupling_weight: f64,
    pub own_weight: f64,
    /// Median noise level; per-window scale is `noise_std * exp(noise_log_sigma * g)`.
    pub noise_std: f64,
    /// AR(1) coefficient of the additive noise, in `[0, 1)`.
    pub noise_rho: f64,
    pub noise_log_sigma: f64,
    pub amplitude_factor: f64,
    /// Fraction of anomalous windows that are `Amplitude` (rest decouple).
    pub amplitude_share: f64,
    /// Extra per-signal phase jitter added at each boundary, `0..=this`.
    pub max_phase_jitter: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_signals: 6,
            n_normal: 400,
            n_anomalous: 100,
            window_len: 80,
            segment_len: 16,
            period: 12,
            coupling_weight: 1.0,
            own_weight: 0.6,
            noise_std: 0.05,
            noise_rho: 0.7,
            noise_log_sigma: 0.3,
            amplitude_factor: 5.0,
            amplitude_share: 0.5,
            max_phase_jitter: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: &str| Err(Error::BadSpec { detail: detail.to_string() });
        if self.n_signals == 0 {
            return bad("n_signals must be positive");
        }
        if self.n_normal + self.n_anomalous == 0 {
            return bad("no windows requested");
        }
        if self.window_len == 0 || self.segment_len == 0 {
            return bad("window_len and segment_len must be positive");
        }
        if self.window_len % self.segment_len != 0 {
            return Err(Error::IndivisibleWindow { len: self.window_len, sub: self.segment_len });
        }
        if self.period < 2 {
            return bad("period must be at least 2");
        }
        if !(0.0..1.0).contains(&self.noise_rho) {
            return bad("noise_rho must lie in [0, 1)");
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return bad("noise_std must be finite and non-negative");
        }
        if !self.noise_log_sigma.is_finite() || self.noise_log_sigma < 0.0 {
            return bad("noise_log_sigma must be finite and non-negative");
        }
        if !self.amplitude_factor.is_finite() || self.amplitude_factor <= 0.0 {
            return bad("amplitude_factor must be positive");
        }
        if !(0.0..=1.0).contains(&self.amplitude_share) {
            return bad("amplitude_share must lie in [0, 1]");
        }
        if self.max_phase_jitter >= self.period {
            return bad("max_phase_jitter must be smaller than period");
        }
        if self.decoupling_count() > 0 && self.window_len / self.segment_len < 2 {
            return bad("decoupling windows need at least two segments");
        }
        Ok(())
    }

    pub fn amplitude_count(&self) -> usize {
        let n = (self.amplitude_share * self.n_anomalous as f64).round() as usize;
        n.min(self.n_anomalous)
    }

    pub fn decoupling_count(&self) -> usize {
        self.n_anomalous - self.amplitude_count()
    }

    /// Kind of the `j`-th anomalous window (generation order).
    pub fn kind_of(&self, j: usize) -> AnomalyKind {
        if j < self.amplitude_count() {
            AnomalyKind::Amplitude
        } else {
            AnomalyKind::Decoupling
        }
    }
}

fn sine_table(period: usize) -> Vec<f64> {
    (0..period).map(|k| (2.0 * std::f64::consts::PI * k as f64 / period as f64).sin()).collect()
}

fn one_window(spec: &SynthSpec, table: &[f64], kind: Option<AnomalyKind>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let p = spec.period as i64;
    let t = spec.window_len;
    let n_seg = t / spec.segment_len;

    let phi = rng.random_range(0..spec.period) as i64;
    let g: f64 = StandardNormal.sample(rng);
    let sigma_w = spec.noise_std * (spec.noise_log_sigma * g).exp();

    // Per-signal cumulative phase offset for each segment; zero everywhere
    // except in decoupling windows, whose first segment still starts clean.
    // Jumps stay in the middle half of the cycle so the continuation is
    // always at least a quarter period away from the true one.
    let mut offsets = vec![vec![0i64; n_seg]; spec.n_signals];
    if kind == Some(AnomalyKind::Decoupling) {
        let lo = (p / 4).max(1);
        let mut shared = 0i64;
        let mut per = vec![0i64; spec.n_signals];
        for s in 1..n_seg {
            shared += rng.random_range(lo..=p - lo);
            for i in 0..spec.n_signals {
                if spec.max_phase_jitter > 0 {
                    let j = spec.max_phase_jitter as i64;
                    per[i] += rng.random_range(-j..=j);
                }
                offsets[i][s] = shared + per[i];
            }
        }
    }

    let innovation = (1.0 - spec.noise_rho * spec.noise_rho).sqrt();
    let mut data = Vec::with_capacity(spec.n_signals * t);
    for i in 0..spec.n_signals {
        let harmonic = (1 + i % 3) as i64;
        let psi = (i * spec.period / spec.n_signals) as i64;
        let mut e = 0.0;
        for tau in 0..t {
            let gt: f64 = StandardNormal.sample(rng);
            e = if tau == 0 { sigma_w * gt } else { spec.noise_rho * e + innovation * sigma_w * gt };
            let phase = phi + tau as i64 + offsets[i][tau / spec.segment_len];
            let shared_c = table[phase.rem_euclid(p) as usize];
            let own_c = table[(harmonic * phase + psi).rem_euclid(p) as usize];
            data.push(spec.coupling_weight * shared_c + spec.own_weight * own_c + e);
        }
    }
    if kind == Some(AnomalyKind::Amplitude) {
        for v in data.iter_mut() {
            *v *= spec.amplitude_factor;
        }
    }
    data
}

/// Generate `n_normal` normal windows followed by `n_anomalous` anomalous
/// ones (amplitude first, then decoupling). Window `i` depends only on
/// `(seed, i)` and the spec fields, never on the other windows.
pub fn generate_windows(spec: &SynthSpec, seed: u64) -> Result<Vec<Window>> {
    spec.validate()?;
    let table = sine_table(spec.period);
    let total = spec.n_normal + spec.n_anomalous;
    let mut out = Vec::with_capacity(total);
    for idx in 0..total {
        let kind = if idx < spec.n_normal { None } else { Some(spec.kind_of(idx - spec.n_normal)) };
        let mut rng = stream(seed, Stream::Synth, idx as u64, 0);
        let data = one_window(spec, &table, kind, &mut rng);
        out.push(Window { data, label: kind.is_some(), subject: None });
    }
    Ok(out)
}

/// Same windows as [`generate_windows`], deterministically shuffled and
/// concatenated into one labelled frame (every row of an anomalous window
/// is marked). Cutting the frame back at `stride == window_len` recovers
/// the window set exactly.
pub fn generate_frame(spec: &SynthSpec, seed: u64) -> Result<Frame> {
    let mut windows = generate_windows(spec, seed)?;
    let mut rng = stream(seed, Stream::Synth, u64::MAX, 1);
    windows.shuffle(&mut rng);

    let t = spec.window_len;
    let signals: Vec<String> = (0..spec.n_signals).map(|i| format!("s{i}")).collect();
    let mut columns = vec![Vec::with_capacity(windows.len() * t); spec.n_signals];
    let mut labels = Vec::with_capacity(windows.len() * t);
    for w in &windows {
        for (i, col) in columns.iter_mut().enumerate() {
            col.extend_from_slice(&w.data[i * t..(i + 1) * t]);
        }
        labels.extend(std::iter::repeat(w.label as u8).take(t));
    }
    Ok(Frame { signals, columns, labels: Some(labels), subjects: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::window::make_windows;

    fn small_spec() -> SynthSpec {
        SynthSpec {
            n_signals: 3,
            n_normal: 8,
            n_anomalous: 4,
            window_len: 24,
            segment_len: 8,
            period: 6,
            max_phase_jitter: 1,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn counts_and_labels() {
        let spec = small_spec();
        let w = generate_windows(&spec, 5).unwrap();
        assert_eq!(w.len(), 12);
        assert!(w[..8].iter().all(|w| !w.label));
        assert!(w[8..].iter().all(|w| w.label));
        assert_eq!(spec.amplitude_count(), 2);
        assert_eq!(spec.kind_of(0), AnomalyKind::Amplitude);
        assert_eq!(spec.kind_of(2), AnomalyKind::Decoupling);
        assert!(w.iter().all(|w| w.data.len() == 3 * 24));
    }

    #[test]
    fn noiseless_normal_windows_repeat_with_the_period() {
        let spec = SynthSpec { noise_std: 0.0, ..small_spec() };
        let windows = generate_windows(&spec, 2).unwrap();
        for w in &windows[..spec.n_normal] {
            for i in 0..spec.n_signals {
                let row = &w.data[i * spec.window_len..(i + 1) * spec.window_len];
                for tau in 0..spec.window_len - spec.period {
                    assert_eq!(row[tau].to_bits(), row[tau + spec.period].to_bits());
                }
            }
        }
    }

    #[test]
    fn amplitude_windows_scale_exactly() {
        let spec = small_spec();
        let base = SynthSpec { amplitude_factor: 1.0, ..spec.clone() };
        let scaled = generate_windows(&spec, 17).unwrap();
        let plain = generate_windows(&base, 17).unwrap();
        for j in 0..spec.amplitude_count() {
            let idx = spec.n_normal + j;
            for (a, b) in scaled[idx].data.iter().zip(&plain[idx].data) {
                assert_eq!(a.to_bits(), (spec.amplitude_factor * b).to_bits());
            }
        }
        // Normal windows are untouched by the factor.
        for idx in 0..spec.n_normal {
            assert_eq!(scaled[idx].data, plain[idx].data);
        }
    }

    #[test]
    fn decoupling_windows_break_periodicity_across_a_boundary() {
        let spec = SynthSpec { noise_std: 0.0, ..small_spec() };
        let windows = generate_windows(&spec, 3).unwrap();
        for j in spec.amplitude_count()..spec.n_anomalous {
            let w = &windows[spec.n_normal + j];
            let mut broken = false;
            for i in 0..spec.n_signals {
                let row = &w.data[i * spec.window_len..(i + 1) * spec.window_len];
                for tau in 0..spec.window_len - spec.period {
                    if row[tau] != row[tau + spec.period] {
                        broken = true;
                    }
                }
            }
            assert!(broken, "decoupling window {j} looks periodic");
        }
    }

    #[test]
    fn same_seed_reproduces_different_seed_diverges() {
        let spec = small_spec();
        let a = generate_windows(&spec, 9).unwrap();
        let b = generate_windows(&spec, 9).unwrap();
        assert_eq!(a, b);
        let c = generate_windows(&spec, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn frame_roundtrips_through_windowing() {
        let spec = small_spec();
        let originals = generate_windows(&spec, 4).unwrap();
        let frame = generate_frame(&spec, 4).unwrap();
        let cut = make_windows(&frame, spec.window_len, spec.window_len).unwrap();
        assert_eq!(cut.len(), originals.len());
        for c in &cut {
            assert!(
                originals.iter().any(|o| o.data == c.data && o.label == c.label),
                "recovered window missing from the generated set"
            );
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let spec = SynthSpec { window_len: 25, ..small_spec() };
        assert!(matches!(generate_windows(&spec, 0), Err(Error::IndivisibleWindow { len: 25, sub: 8 })));
        let spec = SynthSpec { noise_rho: 1.0, ..small_spec() };
        assert!(matches!(generate_windows(&spec, 0), Err(Error::BadSpec { .. })));
        let spec = SynthSpec { amplitude_share: 1.5, ..small_spec() };
        assert!(matches!(generate_windows(&spec, 0), Err(Error::BadSpec { .. })));
        let spec = SynthSpec { max_phase_jitter: 6, ..small_spec() };
        assert!(matches!(generate_windows(&spec, 0), Err(Error::BadSpec { .. })));
    }
}
