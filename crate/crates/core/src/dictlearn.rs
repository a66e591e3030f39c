//! Per-source dictionary learning by thresholded cosine similarity.
//!
//! Candidates are visited in a seeded random order. A candidate becomes the
//! next atom of the dictionary under construction when its largest cosine
//! similarity to the atoms already chosen for this source stays at or below
//! the intra-class threshold, and its largest similarity to every atom of
//! every previously learned source stays at or below the inter-class
//! threshold. Selection stops at `n_atoms` atoms. When the candidates run
//! out first, the remaining slots are filled with rejected candidates in
//! order of increasing maximum similarity to the accepted atoms.

use std::ops::Range;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureVector, FrameMeta};

/// Tolerance on the unit norm of stored atoms.
pub const ATOM_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    /// Intra-class cosine similarity threshold.
    pub t_intra: f64,
    /// Inter-class cosine similarity threshold.
    pub t_inter: f64,
    /// Atoms per source dictionary.
    pub n_atoms: usize,
    pub rng_seed: u64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            t_intra: 0.95,
            t_inter: 0.95,
            n_atoms: 100,
            rng_seed: 0,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("t_intra", self.t_intra), ("t_inter", self.t_inter)] {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {t}")));
            }
        }
        if self.n_atoms == 0 {
            return Err(Error::Config("n_atoms must be at least 1".into()));
        }
        Ok(())
    }
}

/// Provenance shared by every dictionary of one training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DictMeta {
    pub frame: FrameMeta,
    pub t_intra: f64,
    pub t_inter: f64,
    pub rng_seed: u64,
}

impl DictMeta {
    pub fn new(frame: FrameMeta, cfg: &LearnConfig) -> Self {
        DictMeta {
            frame,
            t_intra: cfg.t_intra,
            t_inter: cfg.t_inter,
            rng_seed: cfg.rng_seed,
        }
    }

    pub fn bins(&self) -> usize {
        self.frame.bins()
    }
}

/// A labeled `p x n_atoms` matrix of unit-norm non-negative atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceDictionary {
    label: String,
    atoms: DMatrix<f64>,
    meta: DictMeta,
}

impl SourceDictionary {
    pub fn new(label: impl Into<String>, atoms: DMatrix<f64>, meta: DictMeta) -> Result<Self> {
        if atoms.nrows() != meta.bins() {
            return Err(Error::DimensionMismatch {
                expected: meta.bins(),
                got: atoms.nrows(),
            });
        }
        if atoms.ncols() == 0 {
            return Err(Error::Config("a dictionary needs at least one atom".into()));
        }
        for (j, col) in atoms.column_iter().enumerate() {
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(j * atoms.nrows() + i));
            }
            if let Some(i) = col.iter().position(|&v| v < 0.0) {
                return Err(Error::NegativeEntry {
                    index: j * atoms.nrows() + i,
                    value: col[i],
                });
            }
            let norm = col.norm();
            if (norm - 1.0).abs() > ATOM_NORM_TOL {
                return Err(Error::Config(format!(
                    "atom {j} has norm {norm}, expected 1"
                )));
            }
        }
        Ok(SourceDictionary {
            label: label.into(),
            atoms,
            meta,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn meta(&self) -> &DictMeta {
        &self.meta
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn atom(&self, j: usize) -> &[f64] {
        let p = self.atoms.nrows();
        &self.atoms.as_slice()[j * p..(j + 1) * p]
    }
}

/// Output of [`learn_dictionary`].
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedDictionary {
    pub dictionary: SourceDictionary,
    /// Leading columns that passed both thresholds; the rest were appended.
    pub accepted: usize,
}

impl LearnedDictionary {
    pub fn appended(&self) -> usize {
        self.dictionary.n_atoms() - self.accepted
    }
}

/// Horizontal concatenation of source dictionaries.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcatDictionary {
    dicts: Vec<SourceDictionary>,
    offsets: Vec<usize>,
    atoms: DMatrix<f64>,
}

impl ConcatDictionary {
    pub fn sources(&self) -> &[SourceDictionary] {
        &self.dicts
    }

    pub fn into_sources(self) -> Vec<SourceDictionary> {
        self.dicts
    }

    /// First column of each source within the concatenated matrix.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn meta(&self) -> &DictMeta {
        self.dicts[0].meta()
    }

    pub fn source_count(&self) -> usize {
        self.dicts.len()
    }

    pub fn total_atoms(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn labels(&self) -> Vec<&str> {
        self.dicts.iter().map(|d| d.label()).collect()
    }

    /// Column range of source `i`.
    pub fn block(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i] + self.dicts[i].n_atoms()
    }

    /// Index of the source owning column `col`.
    pub fn source_of(&self, col: usize) -> usize {
        self.offsets.partition_point(|&o| o <= col) - 1
    }
}

/// Cosine similarity of two vectors with non-zero norm.
///
/// Rounding can push the similarity of parallel vectors a hair above one;
/// the result is clamped to `[-1, 1]`.
pub fn cosine_similarity(a: impl AsRef<[f64]>, b: impl AsRef<[f64]>) -> Result<f64> {
    let (a, b) = (a.as_ref(), b.as_ref());
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Similarity with precomputed norms.
fn cs(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Learns the dictionary of one source against the already learned `prior`.
///
/// `features` should be L2-normalized, non-silent frames of the source.
/// The candidate order is drawn from a ChaCha8 stream seeded with
/// `cfg.rng_seed` on stream `prior.len()`, so every source of a run gets
/// its own reproducible permutation.
pub fn learn_dictionary(
    features: &[FeatureVector],
    prior: &[SourceDictionary],
    cfg: &LearnConfig,
    label: &str,
    frame: FrameMeta,
) -> Result<LearnedDictionary> {
    cfg.validate()?;
    let meta = DictMeta::new(frame, cfg);
    if let Some(d) = prior.iter().find(|d| *d.meta() != meta) {
        return Err(Error::MetaMismatch(format!(
            "dictionary {:?} was learned with {:?}, this source with {:?}",
            d.label(),
            d.meta(),
            meta
        )));
    }
    let p = frame.bins();
    let mut norms = Vec::with_capacity(features.len());
    for f in features {
        if f.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: f.len(),
            });
        }
        let n = f.norm();
        if n == 0.0 {
            return Err(Error::DegenerateVector);
        }
        norms.push(n);
    }
    if features.len() < cfg.n_atoms {
        return Err(Error::InsufficientTrainingData {
            needed: cfg.n_atoms,
            available: features.len(),
        });
    }

    let prior_atoms: Vec<&[f64]> = prior
        .iter()
        .flat_map(|d| (0..d.n_atoms()).map(move |j| d.atom(j)))
        .collect();
    let prior_norms: Vec<f64> = prior_atoms.iter().map(|a| norm(a)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    rng.set_stream(prior.len() as u64);
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.shuffle(&mut rng);

    let mut accepted: Vec<usize> = Vec::with_capacity(cfg.n_atoms);
    for &t in &order {
        if accepted.len() == cfg.n_atoms {
            break;
        }
        let ft = features[t].as_slice();
        let intra_ok = accepted
            .iter()
            .all(|&a| cs(ft, norms[t], features[a].as_slice(), norms[a]) <= cfg.t_intra);
        if !intra_ok {
            continue;
        }
        let inter_ok = prior_atoms
            .iter()
            .zip(&prior_norms)
            .all(|(atom, &na)| cs(ft, norms[t], atom, na) <= cfg.t_inter);
        if inter_ok {
            accepted.push(t);
        }
    }

    let n_accepted = accepted.len();
    let mut columns = accepted.clone();
    if n_accepted < cfg.n_atoms {
        // Every candidate was visited; rank the rejects by their maximum
        // similarity to the final accepted set, ties by feature index.
        let mut is_accepted = vec![false; features.len()];
        for &a in &accepted {
            is_accepted[a] = true;
        }
        let mut rejected: Vec<(f64, usize)> = (0..features.len())
            .filter(|&t| !is_accepted[t])
            .map(|t| {
                let ft = features[t].as_slice();
                let m = accepted
                    .iter()
                    .map(|&a| cs(ft, norms[t], features[a].as_slice(), norms[a]))
                    .fold(f64::NEG_INFINITY, f64::max);
                (m, t)
            })
            .collect();
        rejected.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        columns.extend(
            rejected
                .iter()
                .take(cfg.n_atoms - n_accepted)
                .map(|&(_, t)| t),
        );
    }

    let mut data = Vec::with_capacity(p * cfg.n_atoms);
    for &c in &columns {
        data.extend_from_slice(features[c].as_slice());
    }
    let atoms = DMatrix::from_vec(p, cfg.n_atoms, data);
    Ok(LearnedDictionary {
        dictionary: SourceDictionary::new(label, atoms, meta)?,
        accepted: n_accepted,
    })
}

/// Learns every source in order, each constrained against the ones before it.
pub fn learn_all<'a, I>(
    sources: I,
    cfg: &LearnConfig,
    frame: FrameMeta,
) -> Result<Vec<LearnedDictionary>>
where
    I: IntoIterator<Item = (&'a str, &'a [FeatureVector])>,
{
    let mut prior: Vec<SourceDictionary> = Vec::new();
    let mut learned = Vec::new();
    for (label, features) in sources {
        let l = learn_dictionary(features, &prior, cfg, label, frame)?;
        prior.push(l.dictionary.clone());
        learned.push(l);
    }
    Ok(learned)
}

/// Concatenates dictionaries column-wise in the given order.
pub fn concat(dicts: Vec<SourceDictionary>) -> Result<ConcatDictionary> {
    let first = dicts
        .first()
        .ok_or_else(|| Error::Config("need at least one dictionary".into()))?;
    let meta = *first.meta();
    if let Some(d) = dicts.iter().find(|d| *d.meta() != meta) {
        return Err(Error::MetaMismatch(format!(
            "dictionary {:?} has metadata {:?}, expected {:?}",
            d.label(),
            d.meta(),
            meta
        )));
    }
    let p = meta.bins();
    let total: usize = dicts.iter().map(|d| d.n_atoms()).sum();
    let mut offsets = Vec::with_capacity(dicts.len());
    let mut data = Vec::with_capacity(p * total);
    for d in &dicts {
        offsets.push(data.len() / p);
        data.extend_from_slice(d.atoms().as_slice());
    }
    Ok(ConcatDictionary {
        atoms: DMatrix::from_vec(p, total, data),
        dicts,
        offsets,
    })
}
