//! Interpolating captured attention components between two prompts and
//! injecting them into an unconditional generation.
//!
//! For every site and timestep the morphed components are
//! `α·target + (1 − α)·source`, with optional per-token weights applied to
//! each session's V beforehand. The carrier run uses the empty prompt and the
//! source seed; at each site the masked components replace the native ones
//! and the unmasked ones pass through.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::backend::{AttentionHook, DiffusionBackend, GenerationRequest, HookAction, Injection};
use crate::capture::{AttentionCapture, AttentionSite, CaptureSession};
use crate::error::{Error, Result};
use crate::tensor::{check_alpha, lerp, scale_rows, Tensor};

/// Which of Q, K, V are interpolated and injected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ComponentMask {
    pub use_q: bool,
    pub use_k: bool,
    pub use_v: bool,
}

impl ComponentMask {
    pub const QKV: Self = Self::new(true, true, true);
    pub const KV: Self = Self::new(false, true, true);
    pub const QK: Self = Self::new(true, true, false);
    pub const QV: Self = Self::new(true, false, true);
    pub const Q: Self = Self::new(true, false, false);
    pub const K: Self = Self::new(false, true, false);
    pub const V: Self = Self::new(false, false, true);
    pub const NONE: Self = Self::new(false, false, false);

    /// The non-empty masks in ablation-table order.
    pub const ABLATION: [Self; 7] = [
        Self::QKV,
        Self::KV,
        Self::QK,
        Self::QV,
        Self::Q,
        Self::K,
        Self::V,
    ];

    pub const fn new(use_q: bool, use_k: bool, use_v: bool) -> Self {
        Self {
            use_q,
            use_k,
            use_v,
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.use_q || self.use_k || self.use_v)
    }

    /// Row label as used in the ablation table, e.g. `"Q,K,V"` or `"K only"`.
    pub fn table_label(&self) -> String {
        let parts: Vec<&str> = [(self.use_q, "Q"), (self.use_k, "K"), (self.use_v, "V")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect();
        match parts.len() {
            0 => "none".into(),
            1 => format!("{} only", parts[0]),
            _ => parts.join(","),
        }
    }
}

impl Default for ComponentMask {
    fn default() -> Self {
        Self::QKV
    }
}

/// Short form: `qkv`, `kv`, `qk`, `qv`, `q`, `k`, `v` or `none`.
impl fmt::Display for ComponentMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("none");
        }
        for (on, c) in [(self.use_q, 'q'), (self.use_k, 'k'), (self.use_v, 'v')] {
            if on {
                write!(f, "{c}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for ComponentMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "none" {
            return Ok(Self::NONE);
        }
        let mut mask = Self::NONE;
        for c in s.chars() {
            let slot = match c {
                'q' => &mut mask.use_q,
                'k' => &mut mask.use_k,
                'v' => &mut mask.use_v,
                _ => return Err(Error::Input(format!("invalid component mask `{s}`"))),
            };
            if *slot {
                return Err(Error::Input(format!("component `{c}` repeated in `{s}`")));
            }
            *slot = true;
        }
        if mask.is_empty() {
            return Err(Error::Input("empty component mask; use `none`".into()));
        }
        Ok(mask)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MorphConfig {
    pub alpha: f64,
    pub mask: ComponentMask,
    pub source_weights: Option<Tensor>,
    pub target_weights: Option<Tensor>,
}

impl MorphConfig {
    pub fn new(alpha: f64, mask: ComponentMask) -> Self {
        Self {
            alpha,
            mask,
            source_weights: None,
            target_weights: None,
        }
    }

    pub fn with_source_weights(mut self, w: Tensor) -> Self {
        self.source_weights = Some(w);
        self
    }

    pub fn with_target_weights(mut self, w: Tensor) -> Self {
        self.target_weights = Some(w);
        self
    }

    pub fn validate(&self, source_tokens: usize, target_tokens: usize) -> Result<()> {
        check_alpha(self.alpha)?;
        for (name, w, m) in [
            ("source", &self.source_weights, source_tokens),
            ("target", &self.target_weights, target_tokens),
        ] {
            if let Some(w) = w {
                if w.shape() != [m] {
                    return Err(Error::Shape(format!(
                        "{name} weights have shape {:?}, session has {m} tokens",
                        w.shape()
                    )));
                }
            }
        }
        Ok(())
    }
}

fn weighted_v(v: &Tensor, weights: Option<&Tensor>) -> Result<Tensor> {
    match weights {
        Some(w) => scale_rows(v, w),
        None => Ok(v.clone()),
    }
}

/// Morphed components for one site; unmasked components come back as `None`
/// ("use native").
pub fn morph_components(
    src: &AttentionCapture,
    tgt: &AttentionCapture,
    cfg: &MorphConfig,
) -> Result<Injection> {
    let site = &src.site;
    if src.site != tgt.site {
        return Err(Error::Config(format!(
            "cannot morph site {} with site {}",
            src.site, tgt.site
        )));
    }
    check_alpha(cfg.alpha)?;
    let interp = |a: &Tensor, b: &Tensor| lerp(a, b, cfg.alpha).map_err(|e| e.at_site(site));
    let q = if cfg.mask.use_q {
        Some(interp(&src.q, &tgt.q)?)
    } else {
        None
    };
    let k = if cfg.mask.use_k {
        Some(interp(&src.k, &tgt.k)?)
    } else {
        None
    };
    let v = if cfg.mask.use_v {
        let sv = weighted_v(&src.v, cfg.source_weights.as_ref()).map_err(|e| e.at_site(site))?;
        let tv = weighted_v(&tgt.v, cfg.target_weights.as_ref()).map_err(|e| e.at_site(site))?;
        Some(interp(&sv, &tv)?)
    } else {
        None
    };
    Ok(Injection { q, k, v })
}

/// Hook that injects morphed components drawn from two sessions.
pub struct MorphHook<'a> {
    source: &'a CaptureSession,
    target: &'a CaptureSession,
    cfg: &'a MorphConfig,
}

impl<'a> MorphHook<'a> {
    pub fn new(
        source: &'a CaptureSession,
        target: &'a CaptureSession,
        cfg: &'a MorphConfig,
    ) -> Self {
        Self {
            source,
            target,
            cfg,
        }
    }
}

impl AttentionHook for MorphHook<'_> {
    fn on_site(
        &mut self,
        site: &AttentionSite,
        _: &Tensor,
        _: &Tensor,
        _: &Tensor,
    ) -> Result<HookAction> {
        if self.cfg.mask.is_empty() {
            return Ok(HookAction::Observe);
        }
        let src = self
            .source
            .get(site)
            .ok_or_else(|| Error::Incomplete(site.clone()))?;
        let tgt = self
            .target
            .get(site)
            .ok_or_else(|| Error::Incomplete(site.clone()))?;
        Ok(HookAction::Replace(morph_components(src, tgt, self.cfg)?))
    }
}

/// The unconditional carrier request for a morph over `source`'s settings.
///
/// The empty prompt is padded to the sessions' token count so that K or V
/// passed through natively line up with injected ones.
pub fn carrier_request(source: &CaptureSession) -> GenerationRequest {
    GenerationRequest::new("", source.seed, source.steps).padded_to(source.token_count())
}

fn check_compatible(
    src: &CaptureSession,
    tgt: &CaptureSession,
    backend: &dyn DiffusionBackend,
) -> Result<()> {
    if src.steps != tgt.steps {
        return Err(Error::Config(format!(
            "step counts differ: {} vs {}",
            src.steps, tgt.steps
        )));
    }
    if src.seed != tgt.seed {
        return Err(Error::Config(format!(
            "seeds differ: {} vs {}",
            src.seed, tgt.seed
        )));
    }
    if src.token_count() != tgt.token_count() {
        return Err(Error::Shape(format!(
            "token counts differ: {} vs {}; record both prompts padded to a common length",
            src.token_count(),
            tgt.token_count()
        )));
    }
    for s in [src, tgt] {
        if s.backend != backend.name() {
            return Err(Error::Config(format!(
                "session was recorded with backend `{}`, running `{}`",
                s.backend,
                backend.name()
            )));
        }
    }
    Ok(())
}

/// Generates the morph of `src` toward `tgt` at `cfg.alpha`.
pub fn run_morph(
    src: &CaptureSession,
    tgt: &CaptureSession,
    cfg: &MorphConfig,
    backend: &dyn DiffusionBackend,
) -> Result<AudioClip> {
    check_compatible(src, tgt, backend)?;
    cfg.validate(src.token_count(), tgt.token_count())?;
    let mut hook = MorphHook::new(src, tgt, cfg);
    Ok(backend
        .generate(&carrier_request(src), Some(&mut hook))?
        .audio)
}

/// Re-renders one session with its V rows scaled per token.
pub fn run_weighted(
    session: &CaptureSession,
    weights: &Tensor,
    backend: &dyn DiffusionBackend,
) -> Result<AudioClip> {
    let cfg = MorphConfig::new(0.0, ComponentMask::QKV).with_source_weights(weights.clone());
    run_morph(session, session, &cfg, backend)
}

/// Builds a weight vector from `token=value` assignments.
///
/// Every occurrence of a named token gets the value; other tokens keep 1.
/// A name that matches no token is an error listing the valid tokens.
pub fn weights_for_tokens(tokens: &[String], assignments: &[(String, f64)]) -> Result<Tensor> {
    let mut weights = vec![1.0; tokens.len()];
    for (name, value) in assignments {
        let mut hit = false;
        for (w, t) in weights.iter_mut().zip(tokens) {
            if t == name {
                *w = *value;
                hit = true;
            }
        }
        if !hit {
            return Err(Error::UnknownToken {
                token: name.clone(),
                valid: tokens.join(", "),
            });
        }
    }
    Tensor::vector(weights)
}

/// Parses `"token=value,token=value"`.
pub fn parse_token_weights(spec: &str) -> Result<Vec<(String, f64)>> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let (tok, val) = pair
                .rsplit_once('=')
                .ok_or_else(|| Error::Input(format!("expected token=value, got `{pair}`")))?;
            let val: f64 = val
                .trim()
                .parse()
                .map_err(|_| Error::Input(format!("invalid weight in `{pair}`")))?;
            if !val.is_finite() {
                return Err(Error::Input(format!("non-finite weight in `{pair}`")));
            }
            Ok((tok.trim().to_owned(), val))
        })
        .collect()
}
