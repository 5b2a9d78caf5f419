//! Sweeps, the smoothness metric and ablation reports.
//!
//! Smoothness is the Pearson correlation between alpha and each clip's
//! similarity to the sweep's final (alpha = 1) clip.

mod corpus;
mod pearson;
mod report;
mod similarity;
mod sweep;

pub use corpus::{load_pairs, parse_pairs, PromptPair, WordType};
pub use pearson::pearson;
pub use report::{
    ablation_report, ablation_with, smoothness_of_sweep, smoothness_with, AblationRow,
    AblationTable, SmoothnessReport, SweepReport,
};
pub use similarity::{
    mel_filterbank, similarity, FilterbankConfig, SimilarityProvider, SpectralSimilarity,
};
pub use sweep::{
    alpha_grid, sweep_morph, sweep_recorded, sweep_sessions, sweep_weights, MorphMethod,
    DEFAULT_ALPHA_STEP, WEIGHT_GRID,
};
