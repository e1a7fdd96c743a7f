//! Training-set corruption for robustness experiments.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::window::Window;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

/// Add N(0, sigma^2) noise to every element of a seeded random subset of
/// windows. `ratio` is the fraction of windows touched, capped at 0.3;
/// `round(ratio * n)` distinct windows are picked.
pub fn inject_noise(
    windows: &mut [Window],
    ratio: f64,
    sigma: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    if !(0.0..=0.3).contains(&ratio) {
        return Err(Error::RatioOutOfRange { what: "noise ratio".to_string(), value: ratio });
    }
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(Error::RatioOutOfRange { what: "noise sigma".to_string(), value: sigma });
    }
    let count = (ratio * windows.len() as f64).round() as usize;
    let mut rng = stream(seed, Stream::Noise, 0, 0);
    let mut picked: Vec<usize> = sample(&mut rng, windows.len(), count).into_vec();
    picked.sort_unstable();
    let normal = Normal::new(0.0, sigma).expect("sigma validated above");
    for &i in &picked {
        let mut wrng = stream(seed, Stream::Noise, 1, i as u64);
        for v in windows[i].data.iter_mut() {
            *v += normal.sample(&mut wrng);
        }
        // Keep the per-window stream independent of data length changes.
        let _: u64 = wrng.random();
    }
    Ok(picked)
}
