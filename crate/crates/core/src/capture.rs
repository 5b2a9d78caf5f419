//! Recording Q/K/V at every cross-attention site and timestep, and the
//! on-disk capture directory format.
//!
//! A capture directory holds `manifest.json` plus one raw blob per tensor:
//! little-endian IEEE-754 `f32`, row-major, no header. Shapes live only in the
//! manifest. Blob names follow `<layer_id>__h<head>__t<timestep>__{q|k|v}.f32`;
//! the session audio is stored the same way in `audio.f32`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::backend::{DiffusionBackend, GenerationRequest};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: &str = "1";
const AUDIO_BLOB: &str = "audio.f32";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AttentionSite {
    pub layer_id: String,
    pub head_index: usize,
    pub timestep: usize,
}

impl AttentionSite {
    pub fn new(layer_id: impl Into<String>, head_index: usize, timestep: usize) -> Self {
        Self {
            layer_id: layer_id.into(),
            head_index,
            timestep,
        }
    }

    pub fn blob_name(&self, component: char) -> String {
        format!(
            "{}__h{}__t{}__{}.f32",
            self.layer_id, self.head_index, self.timestep, component
        )
    }
}

impl fmt::Display for AttentionSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/h{}/t{}",
            self.layer_id, self.head_index, self.timestep
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionCapture {
    pub site: AttentionSite,
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureSession {
    pub backend: String,
    pub prompt: String,
    pub seed: u64,
    pub steps: usize,
    pub token_strings: Vec<String>,
    pub captures: BTreeMap<AttentionSite, AttentionCapture>,
    pub audio: AudioClip,
}

impl CaptureSession {
    pub fn token_count(&self) -> usize {
        self.token_strings.len()
    }

    pub fn get(&self, site: &AttentionSite) -> Option<&AttentionCapture> {
        self.captures.get(site)
    }

    /// Copy with every tensor and sample rounded to `f32`, i.e. what a
    /// save/load cycle yields.
    pub fn quantized(&self) -> CaptureSession {
        CaptureSession {
            captures: self
                .captures
                .iter()
                .map(|(s, c)| {
                    (
                        s.clone(),
                        AttentionCapture {
                            site: c.site.clone(),
                            q: c.q.round_to_f32(),
                            k: c.k.round_to_f32(),
                            v: c.v.round_to_f32(),
                        },
                    )
                })
                .collect(),
            audio: AudioClip::new(
                self.audio
                    .samples
                    .iter()
                    .map(|&x| x as f32 as f64)
                    .collect(),
                self.audio.sample_rate,
            ),
            ..self.clone()
        }
    }

    /// Bitwise equality over every tensor and sample, plus metadata equality.
    pub fn bit_eq(&self, other: &CaptureSession) -> bool {
        self.backend == other.backend
            && self.prompt == other.prompt
            && self.seed == other.seed
            && self.steps == other.steps
            && self.token_strings == other.token_strings
            && self.audio.bit_eq(&other.audio)
            && self.captures.len() == other.captures.len()
            && self
                .captures
                .iter()
                .zip(&other.captures)
                .all(|((sa, a), (sb, b))| {
                    sa == sb
                        && a.site == b.site
                        && a.q.bit_eq(&b.q)
                        && a.k.bit_eq(&b.k)
                        && a.v.bit_eq(&b.v)
                })
    }
}

/// Generates `prompt` and records every site's components.
///
/// The embedding is padded with unconditional rows to at least `min_tokens`
/// so that two sessions meant to be morphed share a token count.
pub fn record_session(
    backend: &dyn DiffusionBackend,
    prompt: &str,
    seed: u64,
    steps: usize,
    min_tokens: usize,
) -> Result<CaptureSession> {
    if steps == 0 {
        return Err(Error::Config("steps must be at least 1".into()));
    }
    let request = GenerationRequest::new(prompt, seed, steps).padded_to(min_tokens);
    let generation = backend.generate(&request, None)?;
    let expected = backend.sites_per_step().len() * steps;
    let mut captures = BTreeMap::new();
    for capture in generation.captures {
        if captures.insert(capture.site.clone(), capture).is_some() {
            return Err(Error::Backend("backend visited a site twice".into()));
        }
    }
    if captures.len() != expected {
        return Err(Error::Backend(format!(
            "backend reported {} captures, expected {expected}",
            captures.len()
        )));
    }
    Ok(CaptureSession {
        backend: backend.name().to_owned(),
        prompt: prompt.to_owned(),
        seed,
        steps,
        token_strings: generation.tokens,
        captures,
        audio: generation.audio,
    })
}

/// Records a source/target pair padded to a common token count.
pub fn record_pair(
    backend: &dyn DiffusionBackend,
    source: &str,
    target: &str,
    seed: u64,
    steps: usize,
) -> Result<(CaptureSession, CaptureSession)> {
    let m = backend
        .encode_prompt(source, 0)?
        .token_count()
        .max(backend.encode_prompt(target, 0)?.token_count());
    Ok((
        record_session(backend, source, seed, steps, m)?,
        record_session(backend, target, seed, steps, m)?,
    ))
}

#[derive(Debug, Serialize, Deserialize)]
struct BlobRef {
    file: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CaptureRecord {
    layer_id: String,
    head_index: usize,
    timestep: usize,
    q: BlobRef,
    k: BlobRef,
    v: BlobRef,
}

#[derive(Debug, Serialize, Deserialize)]
struct AudioRecord {
    file: String,
    sample_rate: u32,
    samples: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: String,
    backend: String,
    prompt: String,
    seed: u64,
    steps: usize,
    token_strings: Vec<String>,
    audio: AudioRecord,
    captures: Vec<CaptureRecord>,
}

fn write_blob(dir: &Path, name: &str, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &x in values {
        bytes.extend_from_slice(&(x as f32).to_le_bytes());
    }
    fs::write(dir.join(name), bytes)?;
    Ok(())
}

fn read_blob(dir: &Path, name: &str, count: usize) -> Result<Vec<f64>> {
    let path = dir.join(name);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingFile { path })
        }
        Err(e) => return Err(e.into()),
    };
    let expected = count as u64 * 4;
    let found = bytes.len() as u64;
    if found < expected {
        return Err(Error::TruncatedBlob {
            path,
            expected,
            found,
        });
    }
    if found > expected {
        return Err(Error::OversizedBlob {
            path,
            expected,
            found,
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn blob_ref(site: &AttentionSite, component: char, t: &Tensor) -> BlobRef {
    BlobRef {
        file: site.blob_name(component),
        shape: t.shape().to_vec(),
    }
}

fn load_tensor(dir: &Path, blob: &BlobRef) -> Result<Tensor> {
    let count = blob.shape.iter().product();
    let data = read_blob(dir, &blob.file, count)?;
    Tensor::new(blob.shape.clone(), data)
}

/// Writes the session into `dir` (created if needed); returns the manifest path.
pub fn save_session(session: &CaptureSession, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut records = Vec::with_capacity(session.captures.len());
    for (site, cap) in &session.captures {
        for (c, t) in [('q', &cap.q), ('k', &cap.k), ('v', &cap.v)] {
            write_blob(dir, &site.blob_name(c), t.data())?;
        }
        records.push(CaptureRecord {
            layer_id: site.layer_id.clone(),
            head_index: site.head_index,
            timestep: site.timestep,
            q: blob_ref(site, 'q', &cap.q),
            k: blob_ref(site, 'k', &cap.k),
            v: blob_ref(site, 'v', &cap.v),
        });
    }
    write_blob(dir, AUDIO_BLOB, &session.audio.samples)?;
    let manifest = Manifest {
        version: MANIFEST_VERSION.to_owned(),
        backend: session.backend.clone(),
        prompt: session.prompt.clone(),
        seed: session.seed,
        steps: session.steps,
        token_strings: session.token_strings.clone(),
        audio: AudioRecord {
            file: AUDIO_BLOB.to_owned(),
            sample_rate: session.audio.sample_rate,
            samples: session.audio.samples.len(),
        },
        captures: records,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

pub fn load_session(dir: impl AsRef<Path>) -> Result<CaptureSession> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingFile { path })
        }
        Err(e) => return Err(e.into()),
    };
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
    let version = raw
        .get("version")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::Manifest("missing string field `version`".into()))?;
    if version != MANIFEST_VERSION {
        return Err(Error::Version {
            found: version.to_owned(),
            supported: MANIFEST_VERSION.to_owned(),
        });
    }
    let manifest: Manifest =
        serde_json::from_value(raw).map_err(|e| Error::Manifest(e.to_string()))?;

    let mut captures = BTreeMap::new();
    for rec in &manifest.captures {
        let site = AttentionSite::new(rec.layer_id.clone(), rec.head_index, rec.timestep);
        if site.timestep >= manifest.steps {
            return Err(Error::Manifest(format!(
                "site {site} lies outside {} steps",
                manifest.steps
            )));
        }
        let cap = AttentionCapture {
            site: site.clone(),
            q: load_tensor(dir, &rec.q)?,
            k: load_tensor(dir, &rec.k)?,
            v: load_tensor(dir, &rec.v)?,
        };
        if captures.insert(site.clone(), cap).is_some() {
            return Err(Error::Manifest(format!("duplicate site {site}")));
        }
    }
    let samples = read_blob(dir, &manifest.audio.file, manifest.audio.samples)?;
    Ok(CaptureSession {
        backend: manifest.backend,
        prompt: manifest.prompt,
        seed: manifest.seed,
        steps: manifest.steps,
        token_strings: manifest.token_strings,
        captures,
        audio: AudioClip::new(samples, manifest.audio.sample_rate),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ToyBackend, UNCOND_TOKEN};

    #[test]
    fn session_is_complete() {
        let b = ToyBackend::new();
        for steps in [1, 2, 20] {
            let s = record_session(&b, "a dog barking", 7, steps, 0).unwrap();
            assert_eq!(s.captures.len(), b.sites_per_step().len() * steps);
            assert!(s.captures.keys().all(|site| site.timestep < steps));
        }
    }

    #[test]
    fn empty_prompt_session_has_single_token() {
        let s = record_session(&ToyBackend::new(), "", 7, 2, 0).unwrap();
        assert_eq!(s.token_strings, vec![UNCOND_TOKEN]);
        assert!(s.captures.values().all(|c| c.k.shape()[0] == 1));
    }

    #[test]
    fn capture_matches_plain_generation() {
        let b = ToyBackend::new();
        let s = record_session(&b, "wind through trees", 4, 6, 0).unwrap();
        let g = b
            .generate(&GenerationRequest::new("wind through trees", 4, 6), None)
            .unwrap();
        assert!(s.audio.bit_eq(&g.audio));
        assert!(s.bit_eq(&record_session(&b, "wind through trees", 4, 6, 0).unwrap()));
    }

    #[test]
    fn pair_is_padded_to_common_length() {
        let (s, t) =
            record_pair(&ToyBackend::new(), "a dog", "a cat meowing loudly", 0, 2).unwrap();
        assert_eq!(s.token_count(), 4);
        assert_eq!(t.token_count(), 4);
        assert_eq!(s.token_strings[2], UNCOND_TOKEN);
    }

    #[test]
    fn blob_names() {
        let site = AttentionSite::new("block1.xattn", 0, 19);
        assert_eq!(site.blob_name('v'), "block1.xattn__h0__t19__v.f32");
    }

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let s = record_session(&ToyBackend::new(), "a dog barking", 7, 3, 0).unwrap();
        let manifest = save_session(&s, dir.path()).unwrap();
        assert!(manifest.ends_with(MANIFEST_FILE));
        let back = load_session(dir.path()).unwrap();
        assert!(back.bit_eq(&s));
    }

    #[test]
    fn load_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_session(dir.path()),
            Err(Error::MissingFile { .. })
        ));

        let s = record_session(&ToyBackend::new(), "a", 0, 1, 0).unwrap();
        save_session(&s, dir.path()).unwrap();
        let blob = dir.path().join("block0.xattn__h0__t0__k.f32");
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 1]).unwrap();
        match load_session(dir.path()) {
            Err(Error::TruncatedBlob { path, .. }) => assert_eq!(path, blob),
            other => panic!("expected truncation error, got {other:?}"),
        }
        fs::remove_file(&blob).unwrap();
        assert!(matches!(
            load_session(dir.path()),
            Err(Error::MissingFile { .. })
        ));

        let mpath = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath)
            .unwrap()
            .replace("\"version\": \"1\"", "\"version\": \"2\"");
        fs::write(&mpath, text).unwrap();
        assert!(matches!(
            load_session(dir.path()),
            Err(Error::Version { .. })
        ));
    }
}
