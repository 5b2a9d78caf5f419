use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::corpus::PromptPair;
use crate::audio::AudioClip;
use crate::backend::DiffusionBackend;
use crate::baselines::{prompt_morph, waveform_mix};
use crate::capture::{record_pair, CaptureSession};
use crate::error::{Error, Result};
use crate::morph::{run_morph, run_weighted, ComponentMask, MorphConfig};
use crate::tensor::Tensor;

/// Word weights swept per token: -2 to 3 in steps of 1.
pub const WEIGHT_GRID: [f64; 6] = [-2.0, -1.0, 0.0, 1.0, 2.0, 3.0];

pub const DEFAULT_ALPHA_STEP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MorphMethod {
    /// Attention-component interpolation and injection.
    Ours,
    /// Linear mixing of the source and target waveforms.
    Mix,
    /// Engineered blend prompts.
    Prompt,
}

impl fmt::Display for MorphMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MorphMethod::Ours => "ours",
            MorphMethod::Mix => "mix",
            MorphMethod::Prompt => "prompt",
        })
    }
}

impl FromStr for MorphMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ours" => Ok(MorphMethod::Ours),
            "mix" => Ok(MorphMethod::Mix),
            "prompt" => Ok(MorphMethod::Prompt),
            other => Err(Error::Input(format!(
                "unknown method `{other}`; expected ours, mix or prompt"
            ))),
        }
    }
}

/// `[0, step, 2·step, …, 1]`; `step` must divide 1 evenly.
///
/// Entries are computed as `i / n`, so the endpoints are exactly 0 and 1.
pub fn alpha_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Range(format!(
            "alpha step must lie in (0, 1], got {step}"
        )));
    }
    let n = (1.0 / step).round();
    if (n * step - 1.0).abs() > 1e-9 {
        return Err(Error::Range(format!(
            "alpha step {step} does not divide 1 evenly"
        )));
    }
    let n = n as usize;
    Ok((0..=n).map(|i| i as f64 / n as f64).collect())
}

/// Injection morphs of a recorded pair at each alpha, generated in parallel.
pub fn sweep_sessions(
    source: &CaptureSession,
    target: &CaptureSession,
    alphas: &[f64],
    mask: ComponentMask,
    backend: &dyn DiffusionBackend,
) -> Result<Vec<(f64, AudioClip)>> {
    alphas
        .par_iter()
        .map(|&a| {
            Ok((
                a,
                run_morph(source, target, &MorphConfig::new(a, mask), backend)?,
            ))
        })
        .collect()
}

/// Sweeps one method across the alpha grid, in ascending alpha order.
pub fn sweep_morph(
    pair: &PromptPair,
    seed: u64,
    steps: usize,
    alpha_step: f64,
    backend: &dyn DiffusionBackend,
    method: MorphMethod,
) -> Result<Vec<(f64, AudioClip)>> {
    let alphas = alpha_grid(alpha_step)?;
    match method {
        MorphMethod::Ours | MorphMethod::Mix => {
            let (src, tgt) = record_pair(backend, &pair.source, &pair.target, seed, steps)?;
            sweep_recorded(&src, &tgt, &alphas, method, backend)
        }
        MorphMethod::Prompt => alphas
            .par_iter()
            .map(|&a| {
                Ok((
                    a,
                    prompt_morph(&pair.source, &pair.target, a, seed, steps, backend)?,
                ))
            })
            .collect(),
    }
}

/// Like [`sweep_morph`] for already-recorded sessions. The prompt method
/// generates from the sessions' prompts with their seed and step count.
pub fn sweep_recorded(
    source: &CaptureSession,
    target: &CaptureSession,
    alphas: &[f64],
    method: MorphMethod,
    backend: &dyn DiffusionBackend,
) -> Result<Vec<(f64, AudioClip)>> {
    match method {
        MorphMethod::Ours => sweep_sessions(source, target, alphas, ComponentMask::QKV, backend),
        MorphMethod::Mix => alphas
            .iter()
            .map(|&a| Ok((a, waveform_mix(&source.audio, &target.audio, a)?)))
            .collect(),
        MorphMethod::Prompt => alphas
            .par_iter()
            .map(|&a| {
                Ok((
                    a,
                    prompt_morph(
                        &source.prompt,
                        &target.prompt,
                        a,
                        source.seed,
                        source.steps,
                        backend,
                    )?,
                ))
            })
            .collect(),
    }
}

/// Renders `session` once per [`WEIGHT_GRID`] value on token `token_index`,
/// every other token at weight 1.
pub fn sweep_weights(
    session: &CaptureSession,
    token_index: usize,
    backend: &dyn DiffusionBackend,
) -> Result<Vec<(f64, AudioClip)>> {
    let m = session.token_count();
    if token_index >= m {
        return Err(Error::Input(format!(
            "token index {token_index} out of range for {m} tokens"
        )));
    }
    WEIGHT_GRID
        .par_iter()
        .map(|&w| {
            let mut weights = vec![1.0; m];
            weights[token_index] = w;
            Ok((
                w,
                run_weighted(session, &Tensor::vector(weights)?, backend)?,
            ))
        })
        .collect()
}
