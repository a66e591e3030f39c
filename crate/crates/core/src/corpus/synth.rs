//! Synthetic stand-in sources.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::AudioSignal;

/// Harmonics summed by [`SyntheticKind::HarmonicTone`].
pub const HARMONICS: usize = 8;

/// Output RMS of every generated signal.
const TARGET_RMS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticKind {
    /// White noise restricted to `[low_hz, high_hz]`.
    BandpassNoise { low_hz: f64, high_hz: f64 },
    /// First eight harmonics of `f0_hz` with slowly drifting amplitudes.
    HarmonicTone { f0_hz: f64 },
    /// Broadband noise amplitude-modulated at `rate_hz`.
    AmNoise { rate_hz: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSourceSpec {
    pub kind: SyntheticKind,
    pub duration_s: f64,
    pub rng_seed: u64,
}

impl SyntheticSourceSpec {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::Config(format!(
                "duration must be positive, got {}",
                self.duration_s
            )));
        }
        let nyquist = sample_rate as f64 / 2.0;
        match self.kind {
            SyntheticKind::BandpassNoise { low_hz, high_hz } => {
                if !(low_hz >= 0.0 && low_hz < high_hz && high_hz <= nyquist) {
                    return Err(Error::BandOutsideNyquist {
                        low: low_hz,
                        high: high_hz,
                        nyquist,
                    });
                }
            }
            SyntheticKind::HarmonicTone { f0_hz } => {
                let top = f0_hz * HARMONICS as f64;
                if !(f0_hz > 0.0 && top < nyquist) {
                    return Err(Error::BandOutsideNyquist {
                        low: f0_hz,
                        high: top,
                        nyquist,
                    });
                }
            }
            SyntheticKind::AmNoise { rate_hz } => {
                if !(rate_hz > 0.0 && rate_hz < nyquist) {
                    return Err(Error::Config(format!(
                        "modulation rate {rate_hz} Hz out of range"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Generates the source described by `spec`. Deterministic in `rng_seed`.
pub fn generate_synthetic(spec: &SyntheticSourceSpec, sample_rate: u32) -> Result<AudioSignal> {
    if sample_rate == 0 {
        return Err(Error::Config("sample rate must be positive".into()));
    }
    spec.validate(sample_rate)?;
    let n = (spec.duration_s * sample_rate as f64).round() as usize;
    let sr = sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut samples = match spec.kind {
        SyntheticKind::BandpassNoise { low_hz, high_hz } => {
            bandpass(&white(&mut rng, n), sr, low_hz, high_hz)
        }
        SyntheticKind::HarmonicTone { f0_hz } => harmonic(&mut rng, n, sr, f0_hz),
        SyntheticKind::AmNoise { rate_hz } => {
            let depth = 0.8;
            white(&mut rng, n)
                .into_iter()
                .enumerate()
                .map(|(i, w)| {
                    w * (1.0 + depth * (2.0 * PI * rate_hz * i as f64 / sr).sin()) / (1.0 + depth)
                })
                .collect()
        }
    };
    let rms = (samples.iter().map(|s| s * s).sum::<f64>() / n.max(1) as f64).sqrt();
    if rms > 0.0 {
        let g = TARGET_RMS / rms;
        samples.iter_mut().for_each(|s| *s *= g);
    }
    AudioSignal::new(samples, sample_rate)
}

fn white(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Brick-wall band-pass through one whole-signal FFT.
fn bandpass(x: &[f64], sr: f64, low: f64, high: f64) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k);
        let f = bin as f64 * sr / n as f64;
        if f < low || f > high {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Smooth random curve in `[-1, 1]`: fresh random knots every `period`
/// samples joined by raised-cosine interpolation.
fn drift(rng: &mut ChaCha8Rng, n: usize, period: usize) -> Vec<f64> {
    let knots: Vec<f64> = (0..n / period + 2)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    (0..n)
        .map(|i| {
            let k = i / period;
            let t = (i % period) as f64 / period as f64;
            let w = 0.5 - 0.5 * (PI * t).cos();
            knots[k] * (1.0 - w) + knots[k + 1] * w
        })
        .collect()
}

fn harmonic(rng: &mut ChaCha8Rng, n: usize, sr: f64, f0: f64) -> Vec<f64> {
    let period = (0.5 * sr).round().max(1.0) as usize;
    let mut out = vec![0.0; n];
    for h in 1..=HARMONICS {
        let phase = rng.gen_range(0.0..2.0 * PI);
        let base = 1.0 / h as f64;
        let env = drift(rng, n, period);
        let w = 2.0 * PI * f0 * h as f64 / sr;
        for (i, o) in out.iter_mut().enumerate() {
            *o += base * (1.0 + 0.5 * env[i]) * (w * i as f64 + phase).sin();
        }
    }
    out
}

/// Six sources: three disjoint noise bands, two harmonic tones and one
/// amplitude-modulated broadband noise.
pub fn six_source_set(duration_s: f64, seed: u64) -> Vec<(String, SyntheticSourceSpec)> {
    let kinds = [
        (
            "band_low",
            SyntheticKind::BandpassNoise {
                low_hz: 300.0,
                high_hz: 900.0,
            },
        ),
        (
            "band_mid",
            SyntheticKind::BandpassNoise {
                low_hz: 1500.0,
                high_hz: 2500.0,
            },
        ),
        (
            "band_high",
            SyntheticKind::BandpassNoise {
                low_hz: 4000.0,
                high_hz: 6000.0,
            },
        ),
        ("tone_150", SyntheticKind::HarmonicTone { f0_hz: 150.0 }),
        ("tone_233", SyntheticKind::HarmonicTone { f0_hz: 233.0 }),
        ("am_noise", SyntheticKind::AmNoise { rate_hz: 4.0 }),
    ];
    with_seeds(&kinds, duration_s, seed)
}

/// Twelve sources for dictionary-structure checks at 16 kHz.
pub fn twelve_source_set(duration_s: f64, seed: u64) -> Vec<(String, SyntheticSourceSpec)> {
    let kinds = [
        (
            "band_300_900",
            SyntheticKind::BandpassNoise {
                low_hz: 300.0,
                high_hz: 900.0,
            },
        ),
        (
            "band_1000_1400",
            SyntheticKind::BandpassNoise {
                low_hz: 1000.0,
                high_hz: 1400.0,
            },
        ),
        (
            "band_1500_2500",
            SyntheticKind::BandpassNoise {
                low_hz: 1500.0,
                high_hz: 2500.0,
            },
        ),
        (
            "band_2800_3600",
            SyntheticKind::BandpassNoise {
                low_hz: 2800.0,
                high_hz: 3600.0,
            },
        ),
        (
            "band_4000_6000",
            SyntheticKind::BandpassNoise {
                low_hz: 4000.0,
                high_hz: 6000.0,
            },
        ),
        (
            "band_6500_7500",
            SyntheticKind::BandpassNoise {
                low_hz: 6500.0,
                high_hz: 7500.0,
            },
        ),
        ("tone_110", SyntheticKind::HarmonicTone { f0_hz: 110.0 }),
        ("tone_150", SyntheticKind::HarmonicTone { f0_hz: 150.0 }),
        ("tone_233", SyntheticKind::HarmonicTone { f0_hz: 233.0 }),
        ("tone_310", SyntheticKind::HarmonicTone { f0_hz: 310.0 }),
        ("am_2", SyntheticKind::AmNoise { rate_hz: 2.0 }),
        ("am_9", SyntheticKind::AmNoise { rate_hz: 9.0 }),
    ];
    with_seeds(&kinds, duration_s, seed)
}

fn with_seeds(
    kinds: &[(&str, SyntheticKind)],
    duration_s: f64,
    seed: u64,
) -> Vec<(String, SyntheticSourceSpec)> {
    kinds
        .iter()
        .enumerate()
        .map(|(i, (label, kind))| {
            let rng_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            (
                label.to_string(),
                SyntheticSourceSpec {
                    kind: *kind,
                    duration_s,
                    rng_seed,
                },
            )
        })
        .collect()
}
