//! Corpus handling: reading sources, carving held-out test segments,
//! training, evaluation and reporting.

mod report;
pub mod synth;

use std::fmt;
use std::ops::Range;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dictlearn::{concat, learn_all, ConcatDictionary, LearnConfig, LearnedDictionary};
use crate::error::{Error, Result};
use crate::features::{
    frame_signal, unit_features, AudioSignal, FeatureVector, FrameMeta, FramingConfig,
};
use crate::wav::read_wav;

pub use report::{
    evaluate, sweep, write_report, write_sweep, EvalReport, MasdrReport, MeasureReport, SweepRow,
    MASDR_MAX_WINDOW, SWEEP_GRID,
};
pub use synth::{generate_synthetic, SyntheticKind, SyntheticSourceSpec};

/// Where the test segment is cut from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPosition {
    #[default]
    TailTest,
    HeadTest,
}

impl FromStr for SplitPosition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tail_test" => Ok(SplitPosition::TailTest),
            "head_test" => Ok(SplitPosition::HeadTest),
            other => Err(Error::Config(format!(
                "unknown split {other:?}; use tail_test or head_test"
            ))),
        }
    }
}

impl fmt::Display for SplitPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitPosition::TailTest => "tail_test",
            SplitPosition::HeadTest => "head_test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSource {
    pub label: String,
    /// Files are concatenated in order.
    pub paths: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub sources: Vec<CorpusSource>,
    pub test_seconds: f64,
    pub split: SplitPosition,
}

/// Test frames of one source, in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrames {
    pub label: String,
    /// Raw magnitude spectra; silent frames are kept.
    pub frames: Vec<FeatureVector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSource {
    pub label: String,
    /// L2-normalized, non-silent training features.
    pub train: Vec<FeatureVector>,
    pub test: LabeledFrames,
    pub train_range: Range<usize>,
    pub test_range: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub meta: FrameMeta,
    pub sources: Vec<SplitSource>,
}

impl Split {
    pub fn test_sets(&self) -> Vec<LabeledFrames> {
        self.sources.iter().map(|s| s.test.clone()).collect()
    }
}

/// Cuts `test_seconds` off one end of `signal` and frames both parts
/// separately, so no frame spans the boundary.
pub fn split_signal(
    label: &str,
    signal: &AudioSignal,
    test_seconds: f64,
    split: SplitPosition,
    framing: &FramingConfig,
) -> Result<SplitSource> {
    if !(test_seconds > 0.0 && test_seconds.is_finite()) {
        return Err(Error::Config(format!(
            "test_seconds must be positive, got {test_seconds}"
        )));
    }
    let resolved = framing.resolve(signal.sample_rate())?;
    let test_len = (test_seconds * signal.sample_rate() as f64).round() as usize;
    let n = signal.len();
    if test_len >= n || n - test_len < resolved.frame_len || test_len < resolved.frame_len {
        return Err(Error::SourceTooShort(format!(
            "{label}: {:.3} s of audio cannot hold a {test_seconds} s test segment plus training data",
            signal.duration_secs()
        )));
    }
    let (train_range, test_range) = match split {
        SplitPosition::TailTest => (0..n - test_len, n - test_len..n),
        SplitPosition::HeadTest => (test_len..n, 0..test_len),
    };
    let train = unit_features(&signal.slice(train_range.clone()), framing)?;
    let test = frame_signal(&signal.slice(test_range.clone()), framing)?;
    Ok(SplitSource {
        label: label.to_owned(),
        train,
        test: LabeledFrames {
            label: label.to_owned(),
            frames: test,
        },
        train_range,
        test_range,
    })
}

/// Splits in-memory signals that share one sample rate.
pub fn split_signals(
    sources: &[(String, AudioSignal)],
    test_seconds: f64,
    split: SplitPosition,
    framing: &FramingConfig,
) -> Result<Split> {
    let first = sources
        .first()
        .ok_or_else(|| Error::Config("corpus has no sources".into()))?;
    let sr = first.1.sample_rate();
    if let Some((label, s)) = sources.iter().find(|(_, s)| s.sample_rate() != sr) {
        return Err(Error::InconsistentSampleRate(format!(
            "{label} is {} Hz, {} is {sr} Hz",
            s.sample_rate(),
            first.0
        )));
    }
    let sources = sources
        .iter()
        .map(|(label, sig)| split_signal(label, sig, test_seconds, split, framing))
        .collect::<Result<_>>()?;
    Ok(Split {
        meta: framing.meta(sr)?,
        sources,
    })
}

/// Reads every source's files and splits them.
pub fn split_corpus(spec: &CorpusSpec, framing: &FramingConfig) -> Result<Split> {
    let mut signals = Vec::with_capacity(spec.sources.len());
    for src in &spec.sources {
        let mut samples = Vec::new();
        let mut rate = None;
        for path in &src.paths {
            let sig = read_wav(path)?;
            match rate {
                None => rate = Some(sig.sample_rate()),
                Some(r) if r != sig.sample_rate() => {
                    return Err(Error::InconsistentSampleRate(format!(
                        "{}: {} Hz, earlier files of {:?} are {r} Hz",
                        path.display(),
                        sig.sample_rate(),
                        src.label
                    )))
                }
                Some(_) => {}
            }
            samples.extend_from_slice(sig.samples());
        }
        let rate =
            rate.ok_or_else(|| Error::Config(format!("source {:?} lists no files", src.label)))?;
        signals.push((src.label.clone(), AudioSignal::new(samples, rate)?));
    }
    split_signals(&signals, spec.test_seconds, spec.split, framing)
}

/// Learns one dictionary per source of `split`, in source order.
pub fn train(
    split: &Split,
    cfg: &LearnConfig,
) -> Result<(ConcatDictionary, Vec<LearnedDictionary>)> {
    let learned = learn_all(
        split
            .sources
            .iter()
            .map(|s| (s.label.as_str(), s.train.as_slice())),
        cfg,
        split.meta,
    )?;
    let dict = concat(learned.iter().map(|l| l.dictionary.clone()).collect())?;
    Ok((dict, learned))
}
