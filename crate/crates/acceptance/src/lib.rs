//! Tolerances, pinned regression values and fixtures for the acceptance suite.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Cross-attention against the naive oracle.
pub const ORACLE_TOL: f64 = 1e-9;
/// Weighted V against explicitly edited captures.
pub const WEIGHT_EDIT_TOL: f64 = 1e-12;
/// Pearson against hand-computed values.
pub const PEARSON_TOL: f64 = 1e-12;
/// Smoothness of the pinned waveform-mix sweep, and its tolerance.
pub const PINNED_MIX_RHO: f64 = 0.986_164_260_616_137_5;
pub const PINNED_RHO_TOL: f64 = 1e-6;

/// Time limits in seconds.
pub const ORACLE_SECS: f64 = 1.0;
pub const ENDPOINT_SECS: f64 = 30.0;

/// Source and target prompts of the pinned toy clips.
pub const PINNED_SOURCE: &str = "a dog barking";
pub const PINNED_TARGET: &str = "a cat meowing";

const SUBJECTS: &[&str] = &[
    "dog", "cat", "baby", "engine", "bell", "violin", "crowd", "river", "bird", "train", "drum",
    "kettle", "wind", "door", "phone",
];
const ACTIONS: &[&str] = &[
    "barking",
    "meowing",
    "crying",
    "humming",
    "ringing",
    "playing",
    "cheering",
    "flowing",
    "chirping",
    "passing",
    "rolling",
    "whistling",
    "howling",
    "creaking",
    "buzzing",
];
const QUALITIES: &[&str] = &[
    "loud", "soft", "distant", "heavy", "bright", "muffled", "fast", "slow",
];

/// A random prompt of the form `[a] [quality] subject action`.
pub fn random_prompt(rng: &mut impl Rng) -> String {
    let mut words = Vec::with_capacity(4);
    if rng.random_bool(0.7) {
        words.push("a");
    }
    if rng.random_bool(0.5) {
        words.push(QUALITIES.choose(rng).unwrap());
    }
    words.push(SUBJECTS.choose(rng).unwrap());
    words.push(ACTIONS.choose(rng).unwrap());
    words.join(" ")
}

/// `n` reproducible pairs of distinct random prompts.
pub fn random_pairs(seed: u64, n: usize) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| loop {
            let (a, b) = (random_prompt(&mut rng), random_prompt(&mut rng));
            if a != b {
                break (a, b);
            }
        })
        .collect()
}
