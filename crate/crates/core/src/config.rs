//! Flat `section.key = value` run configuration.
//!
//! ```text
//! # comments start with '#'
//! framing.frame_ms = 60
//! framing.hop_ms = 15
//! framing.window = hann          # or rect
//! framing.fft_size = auto        # or an integer
//! learn.t_intra = 0.95
//! learn.t_inter = 0.95
//! learn.n_atoms = 100
//! learn.seed = 0
//! solver.kkt_tol = 1e-6
//! solver.max_iters = 500
//! solver.y_floor = 1e-12
//! solver.max_active = unlimited  # or an integer
//! classify.window = 6
//! corpus.test_seconds = 5
//! corpus.split = tail_test       # or head_test
//! source.babble = babble.wav
//! source.street = street_1.wav, street_2.wav
//! ```
//!
//! Sources keep their order of appearance. Relative paths are resolved
//! against the directory holding the config file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::corpus::{CorpusSource, CorpusSpec, SplitPosition};
use crate::dictlearn::LearnConfig;
use crate::error::{Error, Result};
use crate::features::FramingConfig;
use crate::solver::SolverConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub framing: FramingConfig,
    pub learning: LearnConfig,
    pub solver: SolverConfig,
    /// MASDR window `P`.
    pub window: usize,
    pub test_seconds: f64,
    pub split: SplitPosition,
    pub sources: Vec<CorpusSource>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            framing: FramingConfig::default(),
            learning: LearnConfig::default(),
            solver: SolverConfig::default(),
            window: 6,
            test_seconds: 5.0,
            split: SplitPosition::TailTest,
            sources: Vec::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        self.framing.validate()?;
        self.learning.validate()?;
        self.solver.validate()?;
        if self.window == 0 {
            return Err(Error::Config("classify.window must be at least 1".into()));
        }
        if !(self.test_seconds > 0.0) {
            return Err(Error::Config("corpus.test_seconds must be positive".into()));
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn parse_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(label) = key.strip_prefix("source.") {
                if label.is_empty() {
                    return Err(Error::Config(format!(
                        "line {}: empty source label",
                        lineno + 1
                    )));
                }
                if cfg.sources.iter().any(|s| s.label == label) {
                    return Err(Error::Config(format!("source {label:?} listed twice")));
                }
                let paths = value
                    .split(',')
                    .map(str::trim)
                    .filter(|p| !p.is_empty())
                    .map(|p| base_dir.join(p))
                    .collect::<Vec<PathBuf>>();
                if paths.is_empty() {
                    return Err(Error::Config(format!("source {label:?} lists no files")));
                }
                cfg.sources.push(CorpusSource {
                    label: label.to_owned(),
                    paths,
                });
                continue;
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one non-source key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "framing.frame_ms" => self.framing.frame_ms = parse(key, value)?,
            "framing.hop_ms" => self.framing.hop_ms = parse(key, value)?,
            "framing.window" => self.framing.window = value.parse()?,
            "framing.fft_size" => self.framing.fft_size = value.parse()?,
            "learn.t_intra" => self.learning.t_intra = parse(key, value)?,
            "learn.t_inter" => self.learning.t_inter = parse(key, value)?,
            "learn.n_atoms" => self.learning.n_atoms = parse(key, value)?,
            "learn.seed" => self.learning.rng_seed = parse(key, value)?,
            "solver.kkt_tol" => self.solver.kkt_tol = parse(key, value)?,
            "solver.max_iters" => self.solver.max_iters = parse(key, value)?,
            "solver.y_floor" => self.solver.y_floor = parse(key, value)?,
            "solver.max_active" => {
                self.solver.max_active = if value == "unlimited" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "classify.window" => self.window = parse(key, value)?,
            "corpus.test_seconds" => self.test_seconds = parse(key, value)?,
            "corpus.split" => self.split = value.parse()?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn corpus(&self) -> CorpusSpec {
        CorpusSpec {
            sources: self.sources.clone(),
            test_seconds: self.test_seconds,
            split: self.split,
        }
    }

    /// Serializes back to the text format; `relative_to` strips that prefix
    /// from source paths when present.
    pub fn to_text(&self, relative_to: Option<&Path>) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "framing.frame_ms = {}", self.framing.frame_ms);
        let _ = writeln!(out, "framing.hop_ms = {}", self.framing.hop_ms);
        let _ = writeln!(out, "framing.window = {}", self.framing.window);
        let _ = writeln!(out, "framing.fft_size = {}", self.framing.fft_size);
        let _ = writeln!(out, "learn.t_intra = {}", self.learning.t_intra);
        let _ = writeln!(out, "learn.t_inter = {}", self.learning.t_inter);
        let _ = writeln!(out, "learn.n_atoms = {}", self.learning.n_atoms);
        let _ = writeln!(out, "learn.seed = {}", self.learning.rng_seed);
        let _ = writeln!(out, "solver.kkt_tol = {:e}", self.solver.kkt_tol);
        let _ = writeln!(out, "solver.max_iters = {}", self.solver.max_iters);
        let _ = writeln!(out, "solver.y_floor = {:e}", self.solver.y_floor);
        match self.solver.max_active {
            Some(n) => writeln!(out, "solver.max_active = {n}"),
            None => writeln!(out, "solver.max_active = unlimited"),
        }
        .ok();
        let _ = writeln!(out, "classify.window = {}", self.window);
        let _ = writeln!(out, "corpus.test_seconds = {}", self.test_seconds);
        let _ = writeln!(out, "corpus.split = {}", self.split);
        for s in &self.sources {
            let paths: Vec<String> = s
                .paths
                .iter()
                .map(|p| {
                    relative_to
                        .and_then(|b| p.strip_prefix(b).ok())
                        .unwrap_or(p)
                        .display()
                        .to_string()
                })
                .collect();
            let _ = writeln!(out, "source.{} = {}", s.label, paths.join(", "));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FftSize, Window};

    #[test]
    fn defaults_match_documented_values() {
        let c = RunConfig::default();
        assert_eq!((c.framing.frame_ms, c.framing.hop_ms), (60.0, 15.0));
        assert_eq!(
            (c.learning.t_intra, c.learning.t_inter, c.learning.n_atoms),
            (0.95, 0.95, 100)
        );
        assert_eq!(c.window, 6);
        assert_eq!(c.test_seconds, 5.0);
    }

    #[test]
    fn parses_all_keys() {
        let text = "\
# a comment
framing.frame_ms = 32
framing.hop_ms=8
framing.window = rect
framing.fft_size = 1024
learn.t_intra = 1.0
learn.t_inter = 0.9
learn.n_atoms = 12   # trailing comment
learn.seed = 42
solver.kkt_tol = 1e-8
solver.max_iters = 50
solver.y_floor = 1e-10
solver.max_active = 7
classify.window = 10
corpus.test_seconds = 2.5
corpus.split = head_test
source.a = a.wav
source.b = b1.wav, sub/b2.wav
";
        let c = RunConfig::parse_str(text, Path::new("/data")).unwrap();
        assert_eq!(c.framing.window, Window::Rect);
        assert_eq!(c.framing.fft_size, FftSize::Fixed(1024));
        assert_eq!(c.learning.n_atoms, 12);
        assert_eq!(c.learning.rng_seed, 42);
        assert_eq!(c.solver.max_active, Some(7));
        assert_eq!(c.window, 10);
        assert_eq!(c.split, SplitPosition::HeadTest);
        assert_eq!(c.sources.len(), 2);
        assert_eq!(
            c.sources[1].paths,
            vec![
                PathBuf::from("/data/b1.wav"),
                PathBuf::from("/data/sub/b2.wav")
            ]
        );

        let again =
            RunConfig::parse_str(&c.to_text(Some(Path::new("/data"))), Path::new("/data")).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn rejects_bad_input() {
        for bad in [
            "nonsense",
            "framing.frame_ms = abc",
            "unknown.key = 1",
            "learn.t_intra = 1.5",
            "classify.window = 0",
            "source.a = x.wav\nsource.a = y.wav",
            "source.a = ",
        ] {
            assert!(
                matches!(
                    RunConfig::parse_str(bad, Path::new(".")),
                    Err(Error::Config(_))
                ),
                "{bad}"
            );
        }
    }
}
