//! Clip-to-clip similarity.
//!
//! [`SpectralSimilarity`] summarises a clip by the per-band mean and standard
//! deviation of a 64-band log-compressed mel filterbank (25 ms Hann frames,
//! 10 ms hop, 50 Hz to 8 kHz) and compares summaries by cosine similarity.
//! Other scorers can be plugged in through [`SimilarityProvider`].

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio::AudioClip;
use crate::error::{Error, Result};

pub trait SimilarityProvider: Send + Sync {
    /// Similarity in [-1, 1]; identical clips score 1.
    fn similarity(&self, a: &AudioClip, b: &AudioClip) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterbankConfig {
    pub bands: usize,
    pub frame_secs: f64,
    pub hop_secs: f64,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for FilterbankConfig {
    fn default() -> Self {
        Self {
            bands: 64,
            frame_secs: 0.025,
            hop_secs: 0.010,
            fmin: 50.0,
            fmax: 8000.0,
        }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters evaluated at FFT bin centre frequencies,
/// `bands × (n_fft/2 + 1)`.
pub fn mel_filterbank(
    bands: usize,
    n_fft: usize,
    sample_rate: u32,
    fmin: f64,
    fmax: f64,
) -> Vec<Vec<f64>> {
    let fmax = fmax.min(sample_rate as f64 / 2.0);
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..bands + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (bands + 1) as f64))
        .collect();
    let bins = n_fft / 2 + 1;
    (0..bands)
        .map(|b| {
            let (l, c, r) = (edges[b], edges[b + 1], edges[b + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * sample_rate as f64 / n_fft as f64;
                    if f <= l || f >= r {
                        0.0
                    } else if f <= c {
                        (f - l) / (c - l)
                    } else {
                        (r - f) / (r - c)
                    }
                })
                .collect()
        })
        .collect()
}

pub struct SpectralSimilarity {
    cfg: FilterbankConfig,
}

impl Default for SpectralSimilarity {
    fn default() -> Self {
        Self::new(FilterbankConfig::default())
    }
}

struct Analysis {
    frame: usize,
    hop: usize,
    n_fft: usize,
    window: Vec<f64>,
    filters: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl SpectralSimilarity {
    pub fn new(cfg: FilterbankConfig) -> Self {
        Self { cfg }
    }

    fn analysis(&self, sample_rate: u32) -> Analysis {
        let frame = (self.cfg.frame_secs * sample_rate as f64).round().max(1.0) as usize;
        let hop = (self.cfg.hop_secs * sample_rate as f64).round().max(1.0) as usize;
        let n_fft = frame.next_power_of_two();
        let window = (0..frame)
            .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / frame as f64).cos())
            .collect();
        Analysis {
            frame,
            hop,
            n_fft,
            window,
            filters: mel_filterbank(
                self.cfg.bands,
                n_fft,
                sample_rate,
                self.cfg.fmin,
                self.cfg.fmax,
            ),
            fft: FftPlanner::new().plan_fft_forward(n_fft),
        }
    }

    /// Per-band means followed by per-band standard deviations of
    /// `ln(1 + mel magnitude)` over frames.
    pub fn features(&self, clip: &AudioClip) -> Vec<f64> {
        let a = self.analysis(clip.sample_rate);
        let n_frames = if clip.len() <= a.frame {
            1
        } else {
            1 + (clip.len() - a.frame) / a.hop
        };
        let bands = self.cfg.bands;
        let mut frames = Vec::with_capacity(n_frames);
        let mut buf = vec![Complex::new(0.0, 0.0); a.n_fft];
        for f in 0..n_frames {
            let start = f * a.hop;
            for (i, slot) in buf.iter_mut().enumerate() {
                let x = if i < a.frame {
                    clip.samples.get(start + i).copied().unwrap_or(0.0) * a.window[i]
                } else {
                    0.0
                };
                *slot = Complex::new(x, 0.0);
            }
            a.fft.process(&mut buf);
            let mags: Vec<f64> = buf[..a.n_fft / 2 + 1].iter().map(|c| c.norm()).collect();
            let energies: Vec<f64> = a
                .filters
                .iter()
                .map(|w| w.iter().zip(&mags).map(|(w, m)| w * m).sum::<f64>().ln_1p())
                .collect();
            frames.push(energies);
        }
        let n = n_frames as f64;
        let means: Vec<f64> = (0..bands)
            .map(|b| frames.iter().map(|fr| fr[b]).sum::<f64>() / n)
            .collect();
        let stds: Vec<f64> = (0..bands)
            .map(|b| {
                (frames
                    .iter()
                    .map(|fr| (fr[b] - means[b]).powi(2))
                    .sum::<f64>()
                    / n)
                    .sqrt()
            })
            .collect();
        means.into_iter().chain(stds).collect()
    }
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateInput(
            "silent clip has a zero feature vector".into(),
        ));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

impl SimilarityProvider for SpectralSimilarity {
    fn similarity(&self, a: &AudioClip, b: &AudioClip) -> Result<f64> {
        if a.sample_rate != b.sample_rate {
            return Err(Error::SampleRateMismatch(a.sample_rate, b.sample_rate));
        }
        cosine(&self.features(a), &self.features(b))
    }
}

/// [`SpectralSimilarity`] with the default filterbank.
pub fn similarity(a: &AudioClip, b: &AudioClip) -> Result<f64> {
    SpectralSimilarity::default().similarity(a, b)
}
