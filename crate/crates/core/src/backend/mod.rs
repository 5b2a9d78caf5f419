//! The diffusion backend contract.
//!
//! A backend encodes prompts, runs the stepwise denoiser and decodes the final
//! latent to audio. At every cross-attention site it offers the natively
//! computed Q, K and V to an optional [`AttentionHook`], which may observe
//! them or substitute its own before the attention product is taken.
//!
//! [`ToyBackend`] is a small deterministic model built on this contract.
//! Pre-trained models plug in as adapters through [`BackendRegistry`].

mod toy;

use std::collections::BTreeMap;
use std::sync::Arc;

pub use toy::{ToyBackend, ToyConfig};

use crate::audio::AudioClip;
use crate::capture::{AttentionCapture, AttentionSite};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Token string used for the empty prompt and for padding rows.
pub const UNCOND_TOKEN: &str = "<uncond>";

/// Longest prompt accepted by [`DiffusionBackend::encode_prompt`], in characters.
pub const MAX_PROMPT_CHARS: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbedding {
    pub tokens: Vec<String>,
    /// One row per token.
    pub embedding: Tensor,
}

impl PromptEmbedding {
    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }
}

/// Latent `z_t` at a given timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub z: Tensor,
    pub timestep: usize,
}

/// One generation run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationRequest {
    pub prompt: String,
    pub seed: u64,
    pub steps: usize,
    /// The prompt embedding is padded with unconditional rows up to this many
    /// tokens. Zero means no padding.
    pub min_tokens: usize,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, seed: u64, steps: usize) -> Self {
        Self {
            prompt: prompt.into(),
            seed,
            steps,
            min_tokens: 0,
        }
    }

    pub fn padded_to(mut self, min_tokens: usize) -> Self {
        self.min_tokens = min_tokens;
        self
    }
}

/// Components supplied by a hook. `None` means "use the native value".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Injection {
    pub q: Option<Tensor>,
    pub k: Option<Tensor>,
    pub v: Option<Tensor>,
}

impl Injection {
    pub fn is_passthrough(&self) -> bool {
        self.q.is_none() && self.k.is_none() && self.v.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HookAction {
    Observe,
    Replace(Injection),
}

/// Called at every cross-attention site with the natively computed components.
pub trait AttentionHook {
    fn on_site(
        &mut self,
        site: &AttentionSite,
        q: &Tensor,
        k: &Tensor,
        v: &Tensor,
    ) -> Result<HookAction>;
}

/// Records nothing and changes nothing.
pub struct ObserveHook;

impl AttentionHook for ObserveHook {
    fn on_site(
        &mut self,
        _: &AttentionSite,
        _: &Tensor,
        _: &Tensor,
        _: &Tensor,
    ) -> Result<HookAction> {
        Ok(HookAction::Observe)
    }
}

/// Output of [`DiffusionBackend::generate`].
///
/// `captures` holds, per site and timestep, the components that actually went
/// into the attention product (the native ones unless a hook replaced them),
/// in visiting order.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub audio: AudioClip,
    pub tokens: Vec<String>,
    pub captures: Vec<AttentionCapture>,
}

pub trait DiffusionBackend: Send + Sync {
    fn name(&self) -> &str;

    fn sample_rate(&self) -> u32;

    /// Cross-attention sites visited on every denoising step, in visiting order.
    fn sites_per_step(&self) -> Vec<(String, usize)>;

    fn encode_prompt(&self, text: &str, min_tokens: usize) -> Result<PromptEmbedding>;

    fn generate(
        &self,
        request: &GenerationRequest,
        hook: Option<&mut dyn AttentionHook>,
    ) -> Result<Generation>;
}

/// Runs the hook for one site and returns the components to use.
///
/// Replacement Q must keep the native shape. Replacement K and V must keep
/// their native widths but may carry a different token count, as long as the
/// K and V actually used agree on it. Errors are tagged with the site.
pub fn resolve_site(
    site: &AttentionSite,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    hook: Option<&mut (dyn AttentionHook + '_)>,
) -> Result<(Tensor, Tensor, Tensor)> {
    let Some(hook) = hook else {
        return Ok((q, k, v));
    };
    let action = hook
        .on_site(site, &q, &k, &v)
        .map_err(|e| e.at_site(site))?;
    let injection = match action {
        HookAction::Observe => return Ok((q, k, v)),
        HookAction::Replace(injection) => injection,
    };
    let check = |name: &str, native: &Tensor, new: &Tensor, whole: bool| -> Result<()> {
        let ok = if whole {
            native.shape() == new.shape()
        } else {
            new.shape().len() == 2 && native.shape()[1] == new.shape()[1]
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "replacement {name} has shape {:?}, native is {:?}",
                new.shape(),
                native.shape()
            ))
            .at_site(site))
        }
    };
    if let Some(nq) = &injection.q {
        check("Q", &q, nq, true)?;
    }
    if let Some(nk) = &injection.k {
        check("K", &k, nk, false)?;
    }
    if let Some(nv) = &injection.v {
        check("V", &v, nv, false)?;
    }
    let q = injection.q.unwrap_or(q);
    let k = injection.k.unwrap_or(k);
    let v = injection.v.unwrap_or(v);
    if k.shape()[0] != v.shape()[0] {
        return Err(Error::Shape(format!(
            "K carries {} tokens but V carries {}",
            k.shape()[0],
            v.shape()[0]
        ))
        .at_site(site));
    }
    Ok((q, k, v))
}

type AdapterFactory = Box<dyn Fn() -> Result<Arc<dyn DiffusionBackend>> + Send + Sync>;

/// Resolves backend selectors: `toy` or `adapter:<name>`.
#[derive(Default)]
pub struct BackendRegistry {
    adapters: BTreeMap<String, AdapterFactory>,
}

impl BackendRegistry {
    pub fn register_adapter<F>(&mut self, name: impl Into<String>, factory: F)
    where
        F: Fn() -> Result<Arc<dyn DiffusionBackend>> + Send + Sync + 'static,
    {
        self.adapters.insert(name.into(), Box::new(factory));
    }

    pub fn resolve(&self, selector: &str) -> Result<Arc<dyn DiffusionBackend>> {
        let selector = selector.trim();
        if selector == "toy" {
            return Ok(Arc::new(ToyBackend::new()));
        }
        if let Some(name) = selector.strip_prefix("adapter:") {
            return match self.adapters.get(name) {
                Some(factory) => factory(),
                None => {
                    let known: Vec<&str> = self.adapters.keys().map(String::as_str).collect();
                    Err(Error::Config(format!(
                        "no adapter named `{name}` is registered (registered: [{}])",
                        known.join(", ")
                    )))
                }
            };
        }
        Err(Error::Config(format!(
            "unknown backend selector `{selector}`; expected `toy` or `adapter:<name>`"
        )))
    }
}
