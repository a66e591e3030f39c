//! Per-frame source measures and stream classification.
//!
//! Three frame measures are computed for `M` sources:
//!
//! * **SDR** – each source dictionary is fitted on its own and the source
//!   with the best signal-to-distortion ratio wins;
//! * **NNZ** – one fit against the concatenated dictionary, the source whose
//!   block holds the most non-zero weights wins;
//! * **SW** – same fit, the source whose block has the largest weight sum
//!   wins.
//!
//! Streams are classified by summing SDR vectors, over all frames so far
//! (ASDR) or over the last `P` frames (MASDR).

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictlearn::{ConcatDictionary, SourceDictionary};
use crate::error::{Error, Result};
use crate::features::{FeatureVector, FrameMeta, SILENCE_EPSILON};
use crate::solver::{solve_weights, SolverConfig, WeightVector};

/// SDR reported for (numerically) exact reconstructions, in dB.
pub const SDR_CAP_DB: f64 = 300.0;

/// Weights above this fraction of the largest weight count as non-zero.
pub const NNZ_REL_THRESHOLD: f64 = 1e-8;

/// Sources kept by the SW front end of the cascade measure.
pub const CASCADE_SHORTLIST: usize = 3;

/// `20 log10(||y|| / ||y - yhat||)`, capped at [`SDR_CAP_DB`].
pub fn sdr(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: yhat.len(),
        });
    }
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if ny <= SILENCE_EPSILON {
        return Err(Error::SilentFrame);
    }
    let ne = y
        .iter()
        .zip(yhat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if ne < ny * 1e-15 {
        return Ok(SDR_CAP_DB);
    }
    Ok((20.0 * (ny / ne).log10()).min(SDR_CAP_DB))
}

/// Index of the largest value, lowest index on ties.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Sdr,
    Nnz,
    Sw,
    Cascade,
}

impl Measure {
    /// The three measures every evaluation reports.
    pub const FRAME: [Measure; 3] = [Measure::Sdr, Measure::Nnz, Measure::Sw];

    pub fn name(self) -> &'static str {
        match self {
            Measure::Sdr => "sdr",
            Measure::Nnz => "nnz",
            Measure::Sw => "sw",
            Measure::Cascade => "cascade",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sdr" => Ok(Measure::Sdr),
            "nnz" => Ok(Measure::Nnz),
            "sw" => Ok(Measure::Sw),
            "cascade" => Ok(Measure::Cascade),
            other => Err(Error::Config(format!("unknown measure {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdrScores {
    pub sdr: Vec<f64>,
    pub predicted: usize,
    /// Solves that hit the iteration limit.
    pub unconverged: usize,
}

/// Fits `y` against every source dictionary separately.
pub fn score_frame_sdr(
    y: &[f64],
    dicts: &[SourceDictionary],
    cfg: &SolverConfig,
) -> Result<SdrScores> {
    if dicts.is_empty() {
        return Err(Error::Config("need at least one source dictionary".into()));
    }
    let mut sdrs = Vec::with_capacity(dicts.len());
    let mut unconverged = 0;
    for d in dicts {
        let (x, report) = solve_weights(y, d.atoms(), cfg)?;
        unconverged += usize::from(!report.converged);
        sdrs.push(sdr(y, &x.reconstruct(d.atoms()))?);
    }
    Ok(SdrScores {
        predicted: argmax(&sdrs),
        sdr: sdrs,
        unconverged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcatScores {
    pub nnz: Vec<usize>,
    pub sw: Vec<f64>,
    pub predicted_nnz: usize,
    pub predicted_sw: usize,
    pub weights: WeightVector,
    pub converged: bool,
}

/// Splits a concatenated weight vector into per-source NNZ and SW.
pub fn partition_weights(x: &WeightVector, dict: &ConcatDictionary) -> (Vec<usize>, Vec<f64>) {
    let tau = NNZ_REL_THRESHOLD * x.max();
    (0..dict.source_count())
        .map(|i| {
            let block = &x.as_slice()[dict.block(i)];
            (
                block.iter().filter(|&&w| w > tau).count(),
                block.iter().sum::<f64>(),
            )
        })
        .unzip()
}

/// One fit of `y` against the concatenated dictionary.
pub fn score_frame_concat(
    y: &[f64],
    dict: &ConcatDictionary,
    cfg: &SolverConfig,
) -> Result<ConcatScores> {
    let (x, report) = solve_weights(y, dict.atoms(), cfg)?;
    let (nnz, sw) = partition_weights(&x, dict);
    Ok(ConcatScores {
        predicted_nnz: argmax(&nnz),
        predicted_sw: argmax(&sw),
        nnz,
        sw,
        weights: x,
        converged: report.converged,
    })
}

/// SW shortlist of [`CASCADE_SHORTLIST`] sources, then SDR among them.
pub fn cascade_from(
    y: &[f64],
    dict: &ConcatDictionary,
    sw: &[f64],
    cfg: &SolverConfig,
) -> Result<usize> {
    let mut order: Vec<usize> = (0..sw.len()).collect();
    order.sort_by(|&a, &b| sw[b].total_cmp(&sw[a]).then(a.cmp(&b)));
    order.truncate(CASCADE_SHORTLIST);
    order.sort_unstable();
    let shortlist: Vec<SourceDictionary> =
        order.iter().map(|&i| dict.sources()[i].clone()).collect();
    let scores = score_frame_sdr(y, &shortlist, cfg)?;
    Ok(order[scores.predicted])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predictions {
    pub sdr: usize,
    pub nnz: usize,
    pub sw: usize,
}

impl Predictions {
    pub fn get(&self, m: Measure) -> Option<usize> {
        match m {
            Measure::Sdr => Some(self.sdr),
            Measure::Nnz => Some(self.nnz),
            Measure::Sw => Some(self.sw),
            Measure::Cascade => None,
        }
    }
}

/// All three measures for one non-silent frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScores {
    pub sdr: Vec<f64>,
    pub nnz: Vec<usize>,
    pub sw: Vec<f64>,
    pub predicted: Predictions,
    pub cascade: Option<usize>,
    pub unconverged: usize,
}

/// Scores frames against a fixed dictionary set.
#[derive(Debug, Clone)]
pub struct Classifier {
    dict: ConcatDictionary,
    solver: SolverConfig,
    cascade: bool,
}

impl Classifier {
    pub fn new(dict: ConcatDictionary, solver: SolverConfig) -> Result<Self> {
        solver.validate()?;
        Ok(Classifier {
            dict,
            solver,
            cascade: false,
        })
    }

    /// Also compute the cascade prediction for every frame.
    pub fn with_cascade(mut self, on: bool) -> Self {
        self.cascade = on;
        self
    }

    pub fn dictionary(&self) -> &ConcatDictionary {
        &self.dict
    }

    pub fn solver(&self) -> &SolverConfig {
        &self.solver
    }

    /// Rejects features extracted with a different spectral geometry.
    pub fn check_meta(&self, frame: &FrameMeta) -> Result<()> {
        let own = &self.dict.meta().frame;
        if own.sample_rate != frame.sample_rate {
            return Err(Error::SampleRateMismatch {
                dictionary: own.sample_rate,
                input: frame.sample_rate,
            });
        }
        if own != frame {
            return Err(Error::MetaMismatch(format!(
                "dictionary framing {own:?}, input framing {frame:?}"
            )));
        }
        Ok(())
    }

    /// Scores one frame; `None` when it is silent. The frame is
    /// L2-normalized before fitting.
    pub fn score(&self, y: &FeatureVector) -> Result<Option<FrameScores>> {
        let Some(unit) = crate::features::normalize(y).unit() else {
            return Ok(None);
        };
        let y = unit.as_slice();
        let s = score_frame_sdr(y, self.dict.sources(), &self.solver)?;
        let c = score_frame_concat(y, &self.dict, &self.solver)?;
        let cascade = if self.cascade {
            Some(cascade_from(y, &self.dict, &c.sw, &self.solver)?)
        } else {
            None
        };
        Ok(Some(FrameScores {
            predicted: Predictions {
                sdr: s.predicted,
                nnz: c.predicted_nnz,
                sw: c.predicted_sw,
            },
            sdr: s.sdr,
            nnz: c.nnz,
            sw: c.sw,
            cascade,
            unconverged: s.unconverged + usize::from(!c.converged),
        }))
    }

    /// Scores frames in parallel, preserving order.
    pub fn score_all(&self, frames: &[FeatureVector]) -> Result<Vec<Option<FrameScores>>> {
        frames.par_iter().map(|f| self.score(f)).collect()
    }
}

/// Running ASDR and length-`P` MASDR over a stream of SDR vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamState {
    window: usize,
    ring: VecDeque<Vec<f64>>,
    asdr: Vec<f64>,
    masdr: Vec<f64>,
    frames: usize,
}

impl StreamState {
    pub fn new(sources: usize, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("MASDR window must be at least 1".into()));
        }
        if sources == 0 {
            return Err(Error::Config("need at least one source".into()));
        }
        Ok(StreamState {
            window,
            ring: VecDeque::with_capacity(window),
            asdr: vec![0.0; sources],
            masdr: vec![0.0; sources],
            frames: 0,
        })
    }

    /// Pushes the SDR vector of the next frame and returns the MASDR
    /// prediction. Before `P` frames have arrived the window holds all of
    /// them.
    pub fn update(&mut self, sdr: &[f64]) -> Result<usize> {
        if sdr.len() != self.asdr.len() {
            return Err(Error::DimensionMismatch {
                expected: self.asdr.len(),
                got: sdr.len(),
            });
        }
        for (a, s) in self.asdr.iter_mut().zip(sdr) {
            *a += s;
        }
        if self.ring.len() == self.window {
            self.ring.pop_front();
        }
        self.ring.push_back(sdr.to_vec());
        self.masdr.iter_mut().for_each(|m| *m = 0.0);
        for frame in &self.ring {
            for (m, s) in self.masdr.iter_mut().zip(frame) {
                *m += s;
            }
        }
        self.frames += 1;
        Ok(self.prediction())
    }

    pub fn asdr(&self) -> &[f64] {
        &self.asdr
    }

    pub fn masdr(&self) -> &[f64] {
        &self.masdr
    }

    /// Frames seen so far (`q`).
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Whether the window is full.
    pub fn is_warm(&self) -> bool {
        self.frames >= self.window
    }

    pub fn prediction(&self) -> usize {
        argmax(&self.masdr)
    }

    pub fn asdr_prediction(&self) -> usize {
        argmax(&self.asdr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictlearn::{concat, DictMeta};
    use nalgebra::DMatrix;

    #[test]
    fn sdr_examples() {
        let y = [0.6, 0.8];
        assert_eq!(sdr(&y, &y).unwrap(), SDR_CAP_DB);
        assert!((sdr(&y, &[0.6, 0.7]).unwrap() - 20.0).abs() < 1e-12);
        assert!(sdr(&y, &[0.0, 0.0]).unwrap().abs() < 1e-15);
        assert!(matches!(
            sdr(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::SilentFrame)
        ));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0usize, 0, 0]), 0);
        assert_eq!(argmax(&[2, 1]), 0);
    }

    #[test]
    fn stream_window_of_one_tracks_current_frame() {
        let mut s = StreamState::new(2, 1).unwrap();
        s.update(&[1.0, 2.0]).unwrap();
        assert_eq!(s.update(&[5.0, -1.0]).unwrap(), 0);
        assert_eq!(s.masdr(), &[5.0, -1.0]);
        assert_eq!(s.asdr(), &[6.0, 1.0]);
    }

    #[test]
    fn stream_constant_input() {
        let c = [1.5, -2.0, 0.25];
        let mut s = StreamState::new(3, 4).unwrap();
        for q in 1..=9usize {
            s.update(&c).unwrap();
            let w = q.min(4) as f64;
            for (i, ci) in c.iter().enumerate() {
                assert_eq!(s.asdr()[i], ci * q as f64);
                assert_eq!(s.masdr()[i], ci * w);
            }
        }
        assert!(s.is_warm());
        assert!(StreamState::new(3, 0).is_err());
        assert!(s.update(&[1.0]).is_err());
    }

    #[test]
    fn degenerate_weights_partition_to_zero() {
        let frame = FrameMeta {
            sample_rate: 8000,
            fft_size: 4,
            frame_ms: 1.0,
            hop_ms: 1.0,
        };
        let meta = DictMeta {
            frame,
            t_intra: 1.0,
            t_inter: 1.0,
            rng_seed: 0,
        };
        let a =
            SourceDictionary::new("a", DMatrix::from_vec(3, 1, vec![1.0, 0.0, 0.0]), meta).unwrap();
        let b =
            SourceDictionary::new("b", DMatrix::from_vec(3, 1, vec![0.0, 1.0, 0.0]), meta).unwrap();
        let d = concat(vec![a, b]).unwrap();
        let s = score_frame_concat(&[0.0, 0.0, 1.0], &d, &SolverConfig::default()).unwrap();
        assert_eq!(s.nnz, vec![0, 0]);
        assert_eq!(s.sw, vec![0.0, 0.0]);
        assert_eq!((s.predicted_nnz, s.predicted_sw), (0, 0));
    }

    #[test]
    fn measure_parsing() {
        for m in [Measure::Sdr, Measure::Nnz, Measure::Sw, Measure::Cascade] {
            assert_eq!(m.name().parse::<Measure>().unwrap(), m);
        }
        assert!("foo".parse::<Measure>().is_err());
    }
}
