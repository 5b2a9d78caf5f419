//! Mono audio clips and their 16-bit PCM WAV encoding.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Bitwise sample equality plus equal sample rate.
    pub fn bit_eq(&self, other: &AudioClip) -> bool {
        self.sample_rate == other.sample_rate
            && self.samples.len() == other.samples.len()
            && self
                .samples
                .iter()
                .zip(&other.samples)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Root-mean-square difference over the common prefix.
    pub fn rms_distance(&self, other: &AudioClip) -> f64 {
        let n = self.samples.len().min(other.samples.len());
        if n == 0 {
            return 0.0;
        }
        let ss: f64 = self.samples[..n]
            .iter()
            .zip(&other.samples[..n])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (ss / n as f64).sqrt()
    }

    fn wav_spec(&self) -> hound::WavSpec {
        hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        }
    }

    fn write_samples<W: std::io::Write + std::io::Seek>(&self, w: W) -> Result<()> {
        let mut writer = hound::WavWriter::new(w, self.wav_spec())?;
        for &s in &self.samples {
            writer.write_sample(to_pcm16(s))?;
        }
        writer.finalize()?;
        Ok(())
    }

    /// RIFF/WAVE, PCM 16-bit little-endian, mono.
    pub fn to_wav_bytes(&self) -> Result<Vec<u8>> {
        let mut cursor = Cursor::new(Vec::new());
        self.write_samples(&mut cursor)?;
        Ok(cursor.into_inner())
    }

    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_wav_bytes()?)?;
        Ok(())
    }

    pub fn from_wav_bytes(bytes: &[u8]) -> Result<AudioClip> {
        decode(hound::WavReader::new(Cursor::new(bytes))?)
    }

    pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile {
                path: path.to_path_buf(),
            });
        }
        decode(hound::WavReader::open(path)?)
    }
}

/// Clamps to [-1, 1] and scales by 32767, rounding to nearest.
pub fn to_pcm16(x: f64) -> i16 {
    (x.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

fn decode<R: std::io::Read>(reader: hound::WavReader<R>) -> Result<AudioClip> {
    let spec = reader.spec();
    if spec.channels != 1
        || spec.bits_per_sample != 16
        || spec.sample_format != hound::SampleFormat::Int
    {
        return Err(Error::Input(format!(
            "expected mono 16-bit PCM, got {} channel(s) at {} bits",
            spec.channels, spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32767.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(AudioClip::new(samples, spec.sample_rate))
}
