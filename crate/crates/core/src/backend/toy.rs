//! A small deterministic text-to-audio "model".
//!
//! The latent is an `8 × 16` grid. Each denoising step runs two stacked
//! blocks; each block linearly mixes the latent, adds a cross-attention
//! read-out in which every latent entry queries the prompt tokens, and applies
//! `tanh`. The scheduler moves the latent a fixed fraction of the way toward
//! the block output. The decoder renders one sinusoid per latent row whose
//! amplitude envelope follows that row across the latent width.
//!
//! All weights come from a fixed internal seed, so the model is the same in
//! every process; only the initial noise depends on the caller's seed.
//! Q, K and V are rounded to `f32` at each site and the waveform is rounded
//! to `f32` samples, as a single-precision model would produce them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use sha2::{Digest, Sha256};

use super::{
    resolve_site, AttentionHook, DiffusionBackend, Generation, GenerationRequest, PromptEmbedding,
    MAX_PROMPT_CHARS, UNCOND_TOKEN,
};
use crate::audio::AudioClip;
use crate::capture::{AttentionCapture, AttentionSite};
use crate::error::{Error, Result};
use crate::tensor::{cross_attention, Tensor};

const MODEL_SEED: u64 = 0x4d6f_7270_6846_6164;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub latent_h: usize,
    pub latent_w: usize,
    pub embed_dim: usize,
    pub attn_dim: usize,
    pub value_dim: usize,
    pub blocks: usize,
    /// Longest padded token sequence the positional tables cover.
    pub max_tokens: usize,
    pub sample_rate: u32,
    pub samples_per_column: usize,
    /// Fraction of the block output blended into the latent per step.
    pub update_rate: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            latent_h: 8,
            latent_w: 16,
            embed_dim: 16,
            attn_dim: 16,
            value_dim: 16,
            blocks: 2,
            max_tokens: 128,
            sample_rate: 16_000,
            samples_per_column: 1000,
            update_rate: 0.35,
        }
    }
}

struct Block {
    layer_id: String,
    /// `n × n` linear mix of the latent.
    mix: Tensor,
    bias: Vec<f64>,
    /// Per-entry query: `z_i · query_gain + query_pos[i]`.
    query_gain: Vec<f64>,
    query_pos: Tensor,
    key_proj: Tensor,
    key_pos: Tensor,
    value_proj: Tensor,
    value_pos: Tensor,
    out_proj: Vec<f64>,
}

pub struct ToyBackend {
    cfg: ToyConfig,
    blocks: Vec<Block>,
    /// `latent_h × (latent_w · samples_per_column)` sinusoid table.
    carriers: Vec<Vec<f64>>,
}

fn gaussian(rng: &mut ChaCha8Rng, std: f64, n: usize) -> Vec<f64> {
    let dist = Normal::new(0.0, std).expect("positive std");
    (0..n).map(|_| dist.sample(rng)).collect()
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, std: f64, rows: usize, cols: usize) -> Tensor {
    Tensor::new(vec![rows, cols], gaussian(rng, std, rows * cols)).expect("finite gaussian")
}

fn round_f32(values: Vec<f64>) -> Vec<f64> {
    values.into_iter().map(|x| x as f32 as f64).collect()
}

impl Default for ToyBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl ToyBackend {
    pub fn new() -> Self {
        Self::with_config(ToyConfig::default())
    }

    pub fn with_config(cfg: ToyConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(MODEL_SEED);
        let n = cfg.latent_h * cfg.latent_w;
        let blocks = (0..cfg.blocks)
            .map(|b| {
                let mut mix = gaussian(&mut rng, 0.3 / (n as f64).sqrt(), n * n);
                for i in 0..n {
                    mix[i * n + i] += 0.5;
                }
                Block {
                    layer_id: format!("block{b}.xattn"),
                    mix: Tensor::new(vec![n, n], mix).expect("finite mix"),
                    bias: gaussian(&mut rng, 0.1, n),
                    query_gain: gaussian(&mut rng, 1.0, cfg.attn_dim),
                    query_pos: gaussian_matrix(&mut rng, 0.5, n, cfg.attn_dim),
                    key_proj: gaussian_matrix(
                        &mut rng,
                        1.0 / (cfg.embed_dim as f64).sqrt(),
                        cfg.embed_dim,
                        cfg.attn_dim,
                    ),
                    key_pos: gaussian_matrix(&mut rng, 0.5, cfg.max_tokens, cfg.attn_dim),
                    value_proj: gaussian_matrix(
                        &mut rng,
                        1.0 / (cfg.embed_dim as f64).sqrt(),
                        cfg.embed_dim,
                        cfg.value_dim,
                    ),
                    value_pos: gaussian_matrix(&mut rng, 0.5, cfg.max_tokens, cfg.value_dim),
                    out_proj: gaussian(
                        &mut rng,
                        1.0 / (cfg.value_dim as f64).sqrt(),
                        cfg.value_dim,
                    ),
                }
            })
            .collect();

        let len = cfg.latent_w * cfg.samples_per_column;
        let carriers = (0..cfg.latent_h)
            .map(|i| {
                let freq = 150.0 * 1.6f64.powi(i as i32);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                (0..len)
                    .map(|s| {
                        (std::f64::consts::TAU * freq * s as f64 / cfg.sample_rate as f64 + phase)
                            .sin()
                    })
                    .collect()
            })
            .collect();

        Self {
            cfg,
            blocks,
            carriers,
        }
    }

    pub fn config(&self) -> &ToyConfig {
        &self.cfg
    }

    fn token_row(&self, token: &str) -> Vec<f64> {
        let mut hasher = Sha256::new();
        hasher.update(MODEL_SEED.to_le_bytes());
        hasher.update(token.as_bytes());
        let digest = hasher.finalize();
        let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..self.cfg.embed_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect()
    }

    fn initial_latent(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..self.cfg.latent_h * self.cfg.latent_w)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect()
    }

    fn project_tokens(&self, emb: &Tensor, proj: &Tensor, pos: &Tensor) -> Result<Tensor> {
        let base = emb.matmul(proj)?;
        let (m, w) = base.dims2()?;
        let data = (0..m)
            .flat_map(|j| {
                base.row(j)
                    .iter()
                    .zip(pos.row(j))
                    .map(|(a, b)| a + b)
                    .collect::<Vec<_>>()
            })
            .collect();
        Tensor::new(vec![m, w], round_f32(data))
    }

    fn run_block(
        &self,
        block: &Block,
        z: &[f64],
        emb: &Tensor,
        timestep: usize,
        hook: Option<&mut (dyn AttentionHook + '_)>,
        captures: &mut Vec<AttentionCapture>,
    ) -> Result<Vec<f64>> {
        let d = self.cfg.attn_dim;
        let q_data = z
            .iter()
            .enumerate()
            .flat_map(|(i, &zi)| {
                block
                    .query_gain
                    .iter()
                    .zip(block.query_pos.row(i))
                    .map(move |(g, p)| zi * g + p)
            })
            .collect();
        let q = Tensor::new(vec![z.len(), d], round_f32(q_data))?;
        let k = self.project_tokens(emb, &block.key_proj, &block.key_pos)?;
        let v = self.project_tokens(emb, &block.value_proj, &block.value_pos)?;

        let site = AttentionSite::new(block.layer_id.clone(), 0, timestep);
        let (q, k, v) = resolve_site(&site, q, k, v, hook)?;
        let attended = cross_attention(&q, &k, &v).map_err(|e| e.at_site(&site))?;

        let mixed = block
            .mix
            .matmul(&Tensor::new(vec![z.len(), 1], z.to_vec())?)?;
        let out = (0..z.len())
            .map(|i| {
                let read: f64 = attended
                    .row(i)
                    .iter()
                    .zip(&block.out_proj)
                    .map(|(a, w)| a * w)
                    .sum();
                (mixed.data()[i] + read + block.bias[i]).tanh()
            })
            .collect();
        captures.push(AttentionCapture { site, q, k, v });
        Ok(out)
    }

    fn decode(&self, z: &[f64]) -> AudioClip {
        let (h, w, spc) = (
            self.cfg.latent_h,
            self.cfg.latent_w,
            self.cfg.samples_per_column,
        );
        let samples = (0..w * spc)
            .map(|s| {
                let pos = ((s as f64 + 0.5) / spc as f64 - 0.5).clamp(0.0, (w - 1) as f64);
                let j0 = pos.floor() as usize;
                let j1 = (j0 + 1).min(w - 1);
                let frac = pos - j0 as f64;
                let sum: f64 = (0..h)
                    .map(|i| {
                        let amp = (1.0 - frac) * z[i * w + j0] + frac * z[i * w + j1];
                        amp * self.carriers[i][s]
                    })
                    .sum();
                (sum / h as f64).clamp(-1.0, 1.0) as f32 as f64
            })
            .collect();
        AudioClip::new(samples, self.cfg.sample_rate)
    }
}

impl DiffusionBackend for ToyBackend {
    fn name(&self) -> &str {
        "toy"
    }

    fn sample_rate(&self) -> u32 {
        self.cfg.sample_rate
    }

    fn sites_per_step(&self) -> Vec<(String, usize)> {
        self.blocks
            .iter()
            .map(|b| (b.layer_id.clone(), 0))
            .collect()
    }

    fn encode_prompt(&self, text: &str, min_tokens: usize) -> Result<PromptEmbedding> {
        if text.chars().count() > MAX_PROMPT_CHARS {
            return Err(Error::Input(format!(
                "prompt exceeds {MAX_PROMPT_CHARS} characters"
            )));
        }
        let mut tokens: Vec<String> = text.split_whitespace().map(str::to_owned).collect();
        let mut rows: Vec<Vec<f64>> = tokens.iter().map(|t| self.token_row(t)).collect();
        if tokens.is_empty() {
            tokens.push(UNCOND_TOKEN.to_owned());
            rows.push(vec![0.0; self.cfg.embed_dim]);
        }
        while tokens.len() < min_tokens {
            tokens.push(UNCOND_TOKEN.to_owned());
            rows.push(vec![0.0; self.cfg.embed_dim]);
        }
        if tokens.len() > self.cfg.max_tokens {
            return Err(Error::Input(format!(
                "{} tokens exceed the backend limit of {}",
                tokens.len(),
                self.cfg.max_tokens
            )));
        }
        Ok(PromptEmbedding {
            tokens,
            embedding: Tensor::from_rows(&rows)?,
        })
    }

    fn generate(
        &self,
        request: &GenerationRequest,
        mut hook: Option<&mut dyn AttentionHook>,
    ) -> Result<Generation> {
        if request.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        let prompt = self.encode_prompt(&request.prompt, request.min_tokens)?;
        let mut z = self.initial_latent(request.seed);
        let mut captures = Vec::with_capacity(request.steps * self.blocks.len());
        let rate = self.cfg.update_rate;
        for t in (0..request.steps).rev() {
            let mut h = z.clone();
            for block in &self.blocks {
                h = self.run_block(
                    block,
                    &h,
                    &prompt.embedding,
                    t,
                    hook.as_deref_mut(),
                    &mut captures,
                )?;
            }
            for (zi, hi) in z.iter_mut().zip(&h) {
                *zi = (1.0 - rate) * *zi + rate * hi;
            }
        }
        Ok(Generation {
            audio: self.decode(&z),
            tokens: prompt.tokens,
            captures,
        })
    }
}
