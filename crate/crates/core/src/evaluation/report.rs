use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::corpus::PromptPair;
use super::pearson::pearson;
use super::similarity::{SimilarityProvider, SpectralSimilarity};
use super::sweep::{alpha_grid, sweep_sessions, DEFAULT_ALPHA_STEP};
use crate::audio::AudioClip;
use crate::backend::DiffusionBackend;
use crate::capture::record_pair;
use crate::error::{Error, Result};
use crate::morph::ComponentMask;

/// Similarity-to-target against alpha, and its Pearson correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessReport {
    pub alphas: Vec<f64>,
    pub scores: Vec<f64>,
    pub rho: f64,
}

/// Scores each clip against the highest-alpha clip of the sweep.
pub fn smoothness_with(
    provider: &dyn SimilarityProvider,
    sweep: &[(f64, AudioClip)],
) -> Result<SmoothnessReport> {
    if sweep.len() < 3 {
        return Err(Error::Input(format!(
            "a sweep needs at least 3 clips, got {}",
            sweep.len()
        )));
    }
    if sweep.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(Error::Input(
            "sweep alphas must be strictly ascending".into(),
        ));
    }
    let target = &sweep[sweep.len() - 1].1;
    let alphas: Vec<f64> = sweep.iter().map(|(a, _)| *a).collect();
    let scores = sweep
        .iter()
        .map(|(_, clip)| provider.similarity(clip, target))
        .collect::<Result<Vec<_>>>()?;
    let rho = pearson(&alphas, &scores)?;
    Ok(SmoothnessReport {
        alphas,
        scores,
        rho,
    })
}

pub fn smoothness_of_sweep(sweep: &[(f64, AudioClip)]) -> Result<SmoothnessReport> {
    smoothness_with(&SpectralSimilarity::default(), sweep)
}

/// A smoothness report labelled with what produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub method: String,
    pub pair: PromptPair,
    pub alphas: Vec<f64>,
    pub scores: Vec<f64>,
    pub rho: f64,
}

impl SweepReport {
    pub fn new(method: impl Into<String>, pair: PromptPair, report: SmoothnessReport) -> Self {
        Self {
            method: method.into(),
            pair,
            alphas: report.alphas,
            scores: report.scores,
            rho: report.rho,
        }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub mask: String,
    pub mean_rho: f64,
    pub pair_rhos: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seed: u64,
    pub steps: usize,
    pub pairs: Vec<PromptPair>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Aligned plain-text rendering, one row per mask.
    pub fn to_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .max()
            .unwrap_or(0)
            .max(10);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>10}", "Components", "Smoothness");
        let _ = writeln!(out, "{}", "-".repeat(width + 12));
        for row in &self.rows {
            let _ = writeln!(out, "{:<width$}  {:>10.4}", row.label, row.mean_rho);
        }
        out
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Mean smoothness per component mask over `pairs`, one row per mask in
/// [`ComponentMask::ABLATION`] order. Each pair is recorded once and reused
/// across masks.
pub fn ablation_report(
    pairs: &[PromptPair],
    seed: u64,
    steps: usize,
    backend: &dyn DiffusionBackend,
) -> Result<AblationTable> {
    ablation_with(&SpectralSimilarity::default(), pairs, seed, steps, backend)
}

pub fn ablation_with(
    provider: &dyn SimilarityProvider,
    pairs: &[PromptPair],
    seed: u64,
    steps: usize,
    backend: &dyn DiffusionBackend,
) -> Result<AblationTable> {
    if pairs.is_empty() {
        return Err(Error::Input(
            "ablation needs at least one prompt pair".into(),
        ));
    }
    let alphas = alpha_grid(DEFAULT_ALPHA_STEP)?;
    let sessions = pairs
        .iter()
        .map(|p| record_pair(backend, &p.source, &p.target, seed, steps))
        .collect::<Result<Vec<_>>>()?;
    let rows = ComponentMask::ABLATION
        .iter()
        .map(|&mask| {
            let pair_rhos = sessions
                .iter()
                .map(|(src, tgt)| {
                    let sweep = sweep_sessions(src, tgt, &alphas, mask, backend)?;
                    Ok(smoothness_with(provider, &sweep)?.rho)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(AblationRow {
                label: mask.table_label(),
                mask: mask.to_string(),
                mean_rho: pair_rhos.iter().sum::<f64>() / pair_rhos.len() as f64,
                pair_rhos,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable {
        seed,
        steps,
        pairs: pairs.to_vec(),
        rows,
    })
}
