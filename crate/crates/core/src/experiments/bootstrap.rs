use rand::Rng;

use crate::error::{Error, Result};
use crate::noise::{stream_rng, StreamDomain, StreamId};

/// `k` with-replacement resamples of the repetition indices `0..m`.
///
/// Resample `b` is drawn from the stream `(seed, m, b)`, so it depends only
/// on its own counters. The PLD axis is never resampled.
pub fn bootstrap_indices(m: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if m < 2 {
        return Err(Error::InvalidInput(format!(
            "bootstrap needs at least two repetitions, got {m}"
        )));
    }
    if k == 0 {
        return Err(Error::InvalidInput("bootstrap needs k >= 1".into()));
    }
    Ok((0..k)
        .map(|b| {
            let mut rng = stream_rng(seed, StreamDomain::Bootstrap, StreamId::new(0, m as u64, b as u64));
            (0..m).map(|_| rng.random_range(0..m)).collect()
        })
        .collect())
}
