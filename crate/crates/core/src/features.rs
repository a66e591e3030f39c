//! Magnitude-STFT feature extraction.
//!
//! A signal is cut into overlapping frames of `frame_ms` milliseconds spaced
//! `hop_ms` apart (no padding at either end), each frame is windowed,
//! zero-padded to `fft_size` and transformed. Only the non-negative
//! frequency bins `0..=fft_size/2` are kept, so a feature has
//! `p = fft_size / 2 + 1` entries.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// L2 norms at or below this are treated as silence.
pub const SILENCE_EPSILON: f64 = 1e-10;

/// Mono audio with samples nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(AudioSignal {
            samples,
            sample_rate,
        })
    }

    /// Builds a mono signal from interleaved multi-channel samples by
    /// averaging the channels of each sample frame.
    pub fn from_interleaved(
        interleaved: &[f64],
        channels: usize,
        sample_rate: u32,
    ) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Config("channel count must be positive".into()));
        }
        let scale = 1.0 / channels as f64;
        let mono = interleaved
            .chunks_exact(channels)
            .map(|c| c.iter().sum::<f64>() * scale)
            .collect();
        Self::new(mono, sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
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

    /// Copies out the samples in `range` as a new signal.
    pub fn slice(&self, range: std::ops::Range<usize>) -> AudioSignal {
        AudioSignal {
            samples: self.samples[range].to_vec(),
            sample_rate: self.sample_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Hann,
    Rect,
}

impl Window {
    /// Periodic window coefficients of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rect => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

impl FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hann" => Ok(Window::Hann),
            "rect" => Ok(Window::Rect),
            other => Err(Error::Config(format!("unknown window {other:?}"))),
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Window::Hann => "hann",
            Window::Rect => "rect",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum FftSize {
    /// Smallest power of two holding one frame.
    #[default]
    Auto,
    Fixed(usize),
}

impl FromStr for FftSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(FftSize::Auto);
        }
        s.parse::<usize>().map(FftSize::Fixed).map_err(|_| {
            Error::Config(format!(
                "fft_size must be \"auto\" or an integer, got {s:?}"
            ))
        })
    }
}

impl fmt::Display for FftSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FftSize::Auto => f.write_str("auto"),
            FftSize::Fixed(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FramingConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub window: Window,
    pub fft_size: FftSize,
}

impl Default for FramingConfig {
    fn default() -> Self {
        FramingConfig {
            frame_ms: 60.0,
            hop_ms: 15.0,
            window: Window::Hann,
            fft_size: FftSize::Auto,
        }
    }
}

/// Framing resolved to sample counts for one sample rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Framing {
    pub frame_len: usize,
    pub hop_len: usize,
    pub fft_size: usize,
}

impl Framing {
    /// Number of bins per feature vector.
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frames that fit in `len` samples, zero when not even one does.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            (len - self.frame_len) / self.hop_len + 1
        }
    }
}

impl FramingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.frame_ms.is_finite() && self.hop_ms.is_finite()) {
            return Err(Error::Config("frame_ms and hop_ms must be finite".into()));
        }
        if !(self.hop_ms > 0.0 && self.hop_ms <= self.frame_ms) {
            return Err(Error::Config(format!(
                "need 0 < hop_ms <= frame_ms, got hop_ms={} frame_ms={}",
                self.hop_ms, self.frame_ms
            )));
        }
        Ok(())
    }

    /// Converts millisecond framing into sample counts at `sample_rate`.
    pub fn resolve(&self, sample_rate: u32) -> Result<Framing> {
        self.validate()?;
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        let sr = sample_rate as f64;
        let frame_len = (self.frame_ms * sr / 1000.0).round() as usize;
        let hop_len = (self.hop_ms * sr / 1000.0).round() as usize;
        if frame_len == 0 || hop_len == 0 {
            return Err(Error::Config(format!(
                "framing {} ms / {} ms rounds to zero samples at {sample_rate} Hz",
                self.frame_ms, self.hop_ms
            )));
        }
        let fft_size = match self.fft_size {
            FftSize::Auto => frame_len.next_power_of_two(),
            FftSize::Fixed(n) if n >= frame_len => n,
            FftSize::Fixed(n) => {
                return Err(Error::Config(format!(
                    "fft_size {n} smaller than frame length {frame_len} samples"
                )))
            }
        };
        Ok(Framing {
            frame_len,
            hop_len,
            fft_size,
        })
    }

    /// The spectral geometry features extracted with this config carry.
    pub fn meta(&self, sample_rate: u32) -> Result<FrameMeta> {
        let framing = self.resolve(sample_rate)?;
        Ok(FrameMeta {
            sample_rate,
            fft_size: framing.fft_size as u32,
            frame_ms: self.frame_ms,
            hop_ms: self.hop_ms,
        })
    }
}

/// Everything two feature streams must agree on to be comparable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub sample_rate: u32,
    pub fft_size: u32,
    pub frame_ms: f64,
    pub hop_ms: f64,
}

impl FrameMeta {
    pub fn bins(&self) -> usize {
        self.fft_size as usize / 2 + 1
    }
}

/// One frame's magnitude spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    /// Wraps `bins`, rejecting negative or non-finite entries.
    pub fn new(bins: Vec<f64>) -> Result<Self> {
        for (index, &value) in bins.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite(index));
            }
            if value < 0.0 {
                return Err(Error::NegativeEntry { index, value });
            }
        }
        Ok(FeatureVector(bins))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, alpha: f64) -> Result<FeatureVector> {
        FeatureVector::new(self.0.iter().map(|v| v * alpha).collect())
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Result of [`normalize`].
#[derive(Debug, Clone, PartialEq)]
pub enum Normalized {
    Unit(FeatureVector),
    /// Norm at or below [`SILENCE_EPSILON`]; the vector is returned as is.
    Silent(FeatureVector),
}

impl Normalized {
    pub fn is_silent(&self) -> bool {
        matches!(self, Normalized::Silent(_))
    }

    pub fn vector(&self) -> &FeatureVector {
        match self {
            Normalized::Unit(v) | Normalized::Silent(v) => v,
        }
    }

    pub fn into_vector(self) -> FeatureVector {
        match self {
            Normalized::Unit(v) | Normalized::Silent(v) => v,
        }
    }

    /// The unit vector, or `None` for silence.
    pub fn unit(self) -> Option<FeatureVector> {
        match self {
            Normalized::Unit(v) => Some(v),
            Normalized::Silent(_) => None,
        }
    }
}

pub fn normalize(f: &FeatureVector) -> Normalized {
    let norm = f.norm();
    if norm > SILENCE_EPSILON {
        Normalized::Unit(FeatureVector(f.0.iter().map(|v| v / norm).collect()))
    } else {
        Normalized::Silent(f.clone())
    }
}

/// Magnitude spectra of every full frame of `signal`.
pub fn frame_signal(signal: &AudioSignal, cfg: &FramingConfig) -> Result<Vec<FeatureVector>> {
    let framing = cfg.resolve(signal.sample_rate())?;
    if signal.len() < framing.frame_len {
        return Err(Error::SignalTooShort {
            len: signal.len(),
            frame_len: framing.frame_len,
        });
    }
    let window = cfg.window.coefficients(framing.frame_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(framing.fft_size);
    let mut buf = vec![Complex::new(0.0, 0.0); framing.fft_size];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let samples = signal.samples();

    let frames = framing.frame_count(samples.len());
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let start = t * framing.hop_len;
        let frame = &samples[start..start + framing.frame_len];
        for (slot, (s, w)) in buf.iter_mut().zip(frame.iter().zip(&window)) {
            *slot = Complex::new(s * w, 0.0);
        }
        for slot in &mut buf[framing.frame_len..] {
            *slot = Complex::new(0.0, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        out.push(FeatureVector(
            buf[..framing.bins()].iter().map(|c| c.norm()).collect(),
        ));
    }
    Ok(out)
}

/// Frames `signal`, L2-normalizes every frame and drops the silent ones.
pub fn unit_features(signal: &AudioSignal, cfg: &FramingConfig) -> Result<Vec<FeatureVector>> {
    Ok(frame_signal(signal, cfg)?
        .iter()
        .filter_map(|f| normalize(f).unit())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(frame_ms: f64, hop_ms: f64) -> FramingConfig {
        FramingConfig {
            frame_ms,
            hop_ms,
            window: Window::Rect,
            fft_size: FftSize::Auto,
        }
    }

    #[test]
    fn five_seconds_at_16k_is_330_frames() {
        let sig = AudioSignal::new(vec![0.0; 5 * 16_000], 16_000).unwrap();
        let frames = frame_signal(&sig, &FramingConfig::default()).unwrap();
        assert_eq!(frames.len(), 330);
        assert_eq!(frames[0].len(), 513);
    }

    #[test]
    fn silence_gives_zero_features() {
        let sig = AudioSignal::new(vec![0.0; 4000], 8000).unwrap();
        for f in frame_signal(&sig, &FramingConfig::default()).unwrap() {
            assert!(f.as_slice().iter().all(|&v| v == 0.0));
            assert!(normalize(&f).is_silent());
        }
    }

    #[test]
    fn tone_at_bin_center_peaks_at_that_bin() {
        let sr = 8000;
        let cfg = FramingConfig {
            fft_size: FftSize::Fixed(512),
            ..rect(64.0, 16.0)
        };
        let framing = cfg.resolve(sr).unwrap();
        assert_eq!(framing.frame_len, 512);
        let k = 37;
        let freq = k as f64 * sr as f64 / 512.0;
        let samples = (0..sr as usize)
            .map(|n| (2.0 * PI * freq * n as f64 / sr as f64).sin())
            .collect();
        let sig = AudioSignal::new(samples, sr).unwrap();
        for f in frame_signal(&sig, &cfg).unwrap() {
            let argmax = f
                .as_slice()
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(argmax, k);
        }
    }

    #[test]
    fn too_short_is_rejected() {
        let sig = AudioSignal::new(vec![0.1; 100], 16_000).unwrap();
        assert!(matches!(
            frame_signal(&sig, &FramingConfig::default()),
            Err(Error::SignalTooShort {
                len: 100,
                frame_len: 960
            })
        ));
    }

    #[test]
    fn bad_configs() {
        assert!(rect(60.0, 0.0).validate().is_err());
        assert!(rect(10.0, 15.0).validate().is_err());
        let small_fft = FramingConfig {
            fft_size: FftSize::Fixed(512),
            ..FramingConfig::default()
        };
        assert!(small_fft.resolve(16_000).is_err());
        assert_eq!(
            FramingConfig::default().resolve(16_000).unwrap().fft_size,
            1024
        );
        assert!(AudioSignal::new(vec![f64::NAN], 8000).is_err());
        assert!(AudioSignal::new(vec![0.0], 0).is_err());
    }

    #[test]
    fn normalize_examples() {
        let v = FeatureVector::new(vec![3.0, 4.0]).unwrap();
        let n = normalize(&v).unit().unwrap();
        assert!((n.as_slice()[0] - 0.6).abs() < 1e-15);
        assert!((n.as_slice()[1] - 0.8).abs() < 1e-15);

        let unit = FeatureVector::new(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(normalize(&unit).unit().unwrap(), unit);

        let zero = FeatureVector::new(vec![0.0; 4]).unwrap();
        assert_eq!(normalize(&zero), Normalized::Silent(zero.clone()));
        assert!(FeatureVector::new(vec![-1.0]).is_err());
    }

    #[test]
    fn downmix_averages_channels() {
        let sig = AudioSignal::from_interleaved(&[1.0, 0.0, 0.5, 0.5], 2, 100).unwrap();
        assert_eq!(sig.samples(), &[0.5, 0.5]);
    }
}
