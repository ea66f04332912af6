//! Seed fan-out from the master seed.
//!
//! | stream | seed |
//! |--------|------|
//! | subject `s` candidates (motion draws) | `derive_seed(master, "subject", s)` |
//! | anatomy of case `c = s * slices + slice` | `derive_seed(master, "anatomy", c)` |
//! | spoke subset of case `c` at acceleration `r` | `derive_seed(master, "undersample-{r}", c)` |
//! | train/test subject split | `derive_seed(master, "split", 0)` |
//! | training (init, batches, validation) | `derive_seed(master, "train", 0)` |
//! | diffusion sampling of case `c` at `r` | `derive_seed(master, "sample-{r}", c)` |
//!
//! `derive_seed` is [`dynmri_core::rng::derive_seed`].

use dynmri_core::rng::derive_seed;

pub fn subject(master: u64, subject: usize) -> u64 {
    derive_seed(master, "subject", subject as u64)
}

pub fn anatomy(master: u64, case: usize) -> u64 {
    derive_seed(master, "anatomy", case as u64)
}

pub fn undersample(master: u64, accel: u32, case: usize) -> u64 {
    derive_seed(master, &format!("undersample-{accel}"), case as u64)
}

pub fn split(master: u64) -> u64 {
    derive_seed(master, "split", 0)
}

pub fn train(master: u64) -> u64 {
    derive_seed(master, "train", 0)
}

pub fn sample(master: u64, accel: u32, case: usize) -> u64 {
    derive_seed(master, &format!("sample-{accel}"), case as u64)
}
