//! Comparison methods: mixing raw waveforms, and prompting the model with a
//! templated description of the blend.

use crate::audio::AudioClip;
use crate::backend::{DiffusionBackend, GenerationRequest};
use crate::error::{Error, Result};
use crate::tensor::check_alpha;

/// `(1 − α)·src + α·tgt` per sample over the common length, clamped to [-1, 1].
pub fn waveform_mix(src: &AudioClip, tgt: &AudioClip, alpha: f64) -> Result<AudioClip> {
    if src.sample_rate != tgt.sample_rate {
        return Err(Error::SampleRateMismatch(src.sample_rate, tgt.sample_rate));
    }
    check_alpha(alpha)?;
    let n = src.len().min(tgt.len());
    let (s, t) = (&src.samples[..n], &tgt.samples[..n]);
    let samples = if alpha == 0.0 {
        s.iter().map(|x| x.clamp(-1.0, 1.0)).collect()
    } else if alpha == 1.0 {
        t.iter().map(|x| x.clamp(-1.0, 1.0)).collect()
    } else {
        s.iter()
            .zip(t)
            .map(|(a, b)| ((1.0 - alpha) * a + alpha * b).clamp(-1.0, 1.0))
            .collect()
    };
    Ok(AudioClip::new(samples, src.sample_rate))
}

/// Percentage of the target in an engineered prompt, `round(α·100)`.
pub fn alpha_percent(alpha: f64) -> u32 {
    (alpha * 100.0).round() as u32
}

/// Fills the blend template with the target as sound A at `round(α·100)`%
/// and the source as sound B at the remainder, so α = 1 means all target.
pub fn engineered_prompt(source: &str, target: &str, alpha: f64) -> Result<String> {
    check_alpha(alpha)?;
    let x = alpha_percent(alpha);
    let y = 100 - x;
    Ok(format!(
        "A morph between {target} and {source} where the level of {target} is at {x}% and level of {source} is at {y}%"
    ))
}

/// Generates from the engineered prompt with no interception.
pub fn prompt_morph(
    source: &str,
    target: &str,
    alpha: f64,
    seed: u64,
    steps: usize,
    backend: &dyn DiffusionBackend,
) -> Result<AudioClip> {
    let prompt = engineered_prompt(source, target, alpha)?;
    Ok(backend
        .generate(&GenerationRequest::new(prompt, seed, steps), None)?
        .audio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ToyBackend;

    #[test]
    fn mix_cases() {
        let s = AudioClip::new(vec![0.2, 0.2], 16000);
        let t = AudioClip::new(vec![0.6, -0.2], 16000);
        assert!(waveform_mix(&s, &t, 0.0).unwrap().bit_eq(&s));
        let m = waveform_mix(&s, &t, 0.5).unwrap();
        assert!((m.samples[0] - 0.4).abs() < 1e-15);
        assert!(m.samples[1].abs() < 1e-15);
        assert!(waveform_mix(&s, &t, 1.0).unwrap().bit_eq(&t));
    }

    #[test]
    fn mix_truncates_and_checks_rate() {
        let s = AudioClip::new(vec![0.1, 0.2, 0.3], 16000);
        let t = AudioClip::new(vec![0.5], 16000);
        assert_eq!(waveform_mix(&s, &t, 0.5).unwrap().len(), 1);
        let u = AudioClip::new(vec![0.5], 22050);
        assert_eq!(waveform_mix(&s, &u, 0.5).unwrap_err().code(), "sample_rate");
        assert_eq!(waveform_mix(&s, &t, -0.5).unwrap_err().code(), "range");
    }

    #[test]
    fn mix_clamps() {
        let s = AudioClip::new(vec![1.0], 8000);
        let t = AudioClip::new(vec![1.0], 8000);
        let m = waveform_mix(&s, &t, 0.3).unwrap();
        assert!(m.samples[0] <= 1.0);
    }

    #[test]
    fn template_fill() {
        assert_eq!(
            engineered_prompt("a dog barking", "a cat meowing", 0.3).unwrap(),
            "A morph between a cat meowing and a dog barking where the level of a cat meowing is at 30% and level of a dog barking is at 70%"
        );
        let p = engineered_prompt("s", "t", 1.0).unwrap();
        assert!(p.ends_with("level of t is at 100% and level of s is at 0%"));
        let p = engineered_prompt("s", "t", 0.5).unwrap();
        assert!(p.ends_with("level of t is at 50% and level of s is at 50%"));
        assert!(engineered_prompt("s", "t", 1.01).is_err());
    }

    #[test]
    fn prompt_morph_is_deterministic_and_alpha_sensitive() {
        let b = ToyBackend::new();
        let a = prompt_morph("a dog barking", "a cat meowing", 0.0, 0, 3, &b).unwrap();
        let again = prompt_morph("a dog barking", "a cat meowing", 0.0, 0, 3, &b).unwrap();
        let one = prompt_morph("a dog barking", "a cat meowing", 1.0, 0, 3, &b).unwrap();
        assert!(a.bit_eq(&again));
        assert!(a.rms_distance(&one) > 0.0);
    }
}
