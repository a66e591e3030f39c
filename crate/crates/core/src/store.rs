//! Binary dictionary files.
//!
//! Little-endian layout:
//!
//! ```text
//! "SDCT"            4 bytes magic
//! version           u32 (= 1)
//! sample_rate       u32
//! fft_size          u32
//! frame_ms          f64
//! hop_ms            f64
//! t_intra           f64
//! t_inter           f64
//! n_atoms           u32
//! sources           u32
//! rng_seed          u64
//! per source:
//!   label length    u16, then that many UTF-8 bytes
//!   atoms           p * n_atoms f64, column-major, p = fft_size / 2 + 1
//! ```

use std::path::Path;

use nalgebra::DMatrix;

use crate::dictlearn::{concat, ConcatDictionary, DictMeta, SourceDictionary};
use crate::error::{Error, Result};
use crate::features::FrameMeta;

pub const MAGIC: &[u8; 4] = b"SDCT";
pub const VERSION: u32 = 1;

pub fn to_bytes(dict: &ConcatDictionary) -> Result<Vec<u8>> {
    let meta = dict.meta();
    let n_atoms = dict.sources()[0].n_atoms();
    if let Some(d) = dict.sources().iter().find(|d| d.n_atoms() != n_atoms) {
        return Err(Error::Config(format!(
            "dictionary files need equal atom counts; {:?} has {}, expected {n_atoms}",
            d.label(),
            d.n_atoms()
        )));
    }
    let p = meta.bins();
    let mut out = Vec::with_capacity(64 + dict.source_count() * (32 + 8 * p * n_atoms));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&meta.frame.sample_rate.to_le_bytes());
    out.extend_from_slice(&meta.frame.fft_size.to_le_bytes());
    out.extend_from_slice(&meta.frame.frame_ms.to_le_bytes());
    out.extend_from_slice(&meta.frame.hop_ms.to_le_bytes());
    out.extend_from_slice(&meta.t_intra.to_le_bytes());
    out.extend_from_slice(&meta.t_inter.to_le_bytes());
    out.extend_from_slice(
        &u32::try_from(n_atoms)
            .map_err(|_| Error::Config("too many atoms".into()))?
            .to_le_bytes(),
    );
    out.extend_from_slice(
        &u32::try_from(dict.source_count())
            .map_err(|_| Error::Config("too many sources".into()))?
            .to_le_bytes(),
    );
    out.extend_from_slice(&meta.rng_seed.to_le_bytes());
    for d in dict.sources() {
        let label = d.label().as_bytes();
        let len = u16::try_from(label.len())
            .map_err(|_| Error::Config(format!("label {:?} longer than 65535 bytes", d.label())))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(label);
        for v in d.atoms().as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.pos as u64,
                message: format!(
                    "truncated: need {n} bytes for {what}, {} left",
                    self.buf.len() - self.pos
                ),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }

    fn err(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            offset: offset as u64,
            message: message.into(),
        }
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<ConcatDictionary> {
    if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
        return Err(Error::NotADictionaryFile);
    }
    let mut r = Reader {
        buf,
        pos: MAGIC.len(),
    };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.err(4, format!("unsupported version {version}")));
    }
    let sample_rate = r.u32("sample_rate")?;
    let fft_size = r.u32("fft_size")?;
    let frame_ms = r.f64("frame_ms")?;
    let hop_ms = r.f64("hop_ms")?;
    let t_intra = r.f64("t_intra")?;
    let t_inter = r.f64("t_inter")?;
    let n_atoms = r.u32("n_atoms")? as usize;
    let sources_at = r.pos;
    let sources = r.u32("source count")? as usize;
    let rng_seed = r.u64("rng_seed")?;
    if sources == 0 {
        return Err(r.err(sources_at, "file holds no sources"));
    }
    if sample_rate == 0 || fft_size < 2 {
        return Err(r.err(
            8,
            format!("bad geometry: sample_rate {sample_rate}, fft_size {fft_size}"),
        ));
    }
    let meta = DictMeta {
        frame: FrameMeta {
            sample_rate,
            fft_size,
            frame_ms,
            hop_ms,
        },
        t_intra,
        t_inter,
        rng_seed,
    };
    let p = meta.bins();
    let block = p
        .checked_mul(n_atoms)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| r.err(8, "atom block size overflows"))?;

    let mut dicts = Vec::with_capacity(sources.min(1024));
    for _ in 0..sources {
        let label_len = r.u16("label length")? as usize;
        let label_at = r.pos;
        let label = std::str::from_utf8(r.take(label_len, "label")?)
            .map_err(|e| r.err(label_at, format!("label is not UTF-8: {e}")))?
            .to_owned();
        let atoms_at = r.pos;
        let data: Vec<f64> = r
            .take(block, "atom block")?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let atoms = DMatrix::from_vec(p, n_atoms, data);
        let dict = SourceDictionary::new(label, atoms, meta)
            .map_err(|e| r.err(atoms_at, format!("invalid atom block: {e}")))?;
        dicts.push(dict);
    }
    if r.pos != buf.len() {
        return Err(r.err(r.pos, format!("{} trailing bytes", buf.len() - r.pos)));
    }
    concat(dicts)
}

pub fn save_dictionary(path: impl AsRef<Path>, dict: &ConcatDictionary) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(dict)?).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_dictionary(path: impl AsRef<Path>) -> Result<ConcatDictionary> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    from_bytes(&buf)
}
