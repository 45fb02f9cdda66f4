//! Binary image container and the little-endian primitives shared with checkpoints.

use std::path::Path;

use crate::error::FormatError;
use crate::synthdata::PatchOrigin;
use crate::tensor::{DType, Real, Tensor};

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let left = self.bytes.len() - self.pos;
        if n > left {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n - left,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn magic(&mut self, expected: &'static str) -> Result<(), FormatError> {
        let got = self
            .take(expected.len())
            .map_err(|_| FormatError::BadMagic { expected })?;
        if got != expected.as_bytes() {
            return Err(FormatError::BadMagic { expected });
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    /// `count` finite values of `dtype`, widened to `T` when stored narrower.
    pub(crate) fn values<T: Real>(&mut self, dtype: DType, count: usize) -> Result<Vec<T>, FormatError> {
        let n = count
            .checked_mul(dtype.size())
            .ok_or_else(|| FormatError::Invalid("payload size overflows".into()))?;
        let raw = self.take(n)?;
        let out: Vec<T> = match dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect(),
            DType::F64 => raw
                .chunks_exact(8)
                .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().unwrap())))
                .collect(),
        };
        if !out.iter().all(|v| v.as_f64().is_finite()) {
            return Err(FormatError::Invalid("payload holds a non-finite value".into()));
        }
        Ok(out)
    }

    pub(crate) fn finish(&self) -> Result<(), FormatError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(FormatError::Trailing(n)),
        }
    }
}

/// Append `values` in the on-disk representation of `T`.
pub(crate) fn put_values<T: Real>(out: &mut Vec<u8>, values: &[T]) {
    match T::DTYPE {
        DType::F32 => values
            .iter()
            .for_each(|v| out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes())),
        DType::F64 => values
            .iter()
            .for_each(|v| out.extend_from_slice(&v.as_f64().to_le_bytes())),
    }
}

/// Write through a sibling temporary so readers never see a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

pub const IMAGE_MAGIC: &str = "TXIM";
pub const IMAGE_VERSION: u32 = 1;

/// A single-slice image in offset-HU with its pixel spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageFile {
    /// `[H, W]`.
    pub pixels: Tensor<f64>,
    /// (dy, dx) in millimetres.
    pub spacing_mm: (f32, f32),
    /// Storage type of the payload.
    pub dtype: DType,
}

impl ImageFile {
    /// A lossless (64-bit) image.
    pub fn new(pixels: Tensor<f64>, spacing_mm: (f64, f64)) -> Self {
        Self {
            pixels,
            spacing_mm: (spacing_mm.0 as f32, spacing_mm.1 as f32),
            dtype: DType::F64,
        }
    }

    pub fn spacing_f64(&self) -> (f64, f64) {
        (self.spacing_mm.0 as f64, self.spacing_mm.1 as f64)
    }

    pub fn encode(&self) -> Result<Vec<u8>, FormatError> {
        if self.pixels.rank() != 2 {
            return Err(FormatError::Invalid(format!(
                "image must be [H,W], got {:?}",
                self.pixels.shape()
            )));
        }
        let (h, w) = (self.pixels.shape()[0], self.pixels.shape()[1]);
        let (h32, w32) = match (u32::try_from(h), u32::try_from(w)) {
            (Ok(a), Ok(b)) => (a, b),
            _ => return Err(FormatError::Invalid("image too large".into())),
        };
        let mut out = Vec::with_capacity(25 + h * w * self.dtype.size());
        out.extend_from_slice(IMAGE_MAGIC.as_bytes());
        out.extend_from_slice(&IMAGE_VERSION.to_le_bytes());
        out.extend_from_slice(&h32.to_le_bytes());
        out.extend_from_slice(&w32.to_le_bytes());
        out.extend_from_slice(&self.spacing_mm.0.to_le_bytes());
        out.extend_from_slice(&self.spacing_mm.1.to_le_bytes());
        out.push(self.dtype.tag());
        match self.dtype {
            DType::F32 => put_values::<f32>(&mut out, &self.pixels.cast::<f32>().into_data()),
            DType::F64 => put_values::<f64>(&mut out, self.pixels.data()),
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        r.magic(IMAGE_MAGIC)?;
        let version = r.u32()?;
        if version != IMAGE_VERSION {
            return Err(FormatError::Version {
                found: version,
                supported: IMAGE_VERSION,
            });
        }
        let (h, w) = (r.u32()? as usize, r.u32()? as usize);
        let spacing_mm = (r.f32()?, r.f32()?);
        let tag = r.u8()?;
        let dtype = DType::from_tag(tag).ok_or(FormatError::DType(tag))?;
        if h == 0 || w == 0 {
            return Err(FormatError::Invalid(format!(
                "image dimensions must be positive, got {h}x{w}"
            )));
        }
        if !(spacing_mm.0 > 0.0 && spacing_mm.1 > 0.0 && spacing_mm.0.is_finite() && spacing_mm.1.is_finite()) {
            return Err(FormatError::Invalid("pixel spacing must be positive and finite".into()));
        }
        let count = h
            .checked_mul(w)
            .ok_or_else(|| FormatError::Invalid("image dimensions overflow".into()))?;
        let data = r.values::<f64>(dtype, count)?;
        r.finish()?;
        Ok(Self {
            pixels: Tensor::new([h, w], data)?,
            spacing_mm,
            dtype,
        })
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        Self::decode(&std::fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        Ok(write_atomic(path, &self.encode()?)?)
    }
}

/// Which partition a patch belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
        }
    }
}

/// One patch of an exported dataset and the seeds that regenerate it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub split: Split,
    pub origin: PatchOrigin,
}

/// Patch listing of an exported dataset, one row per patch.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub const HEADER: &'static str = "index,split,phantom,phantom_seed,row,col,pair_seed";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            let o = &r.origin;
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                o.index,
                r.split.name(),
                o.phantom,
                o.phantom_seed,
                o.row,
                o.col,
                o.pair_seed
            ));
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Self, FormatError> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(Self::HEADER) {
            return Err(FormatError::Config {
                line: 1,
                msg: format!("expected header {:?}", Self::HEADER),
            });
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| FormatError::Config {
                line: i + 2,
                msg: msg.to_string(),
            };
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 7 {
                return Err(bad("expected 7 fields"));
            }
            let int = |s: &str| s.parse::<u64>().map_err(|_| bad("bad integer"));
            let split = match f[1] {
                "train" => Split::Train,
                "validation" => Split::Validation,
                _ => return Err(bad("split must be train or validation")),
            };
            rows.push(ManifestRow {
                split,
                origin: PatchOrigin {
                    index: int(f[0])? as usize,
                    phantom: int(f[2])? as usize,
                    phantom_seed: int(f[3])?,
                    row: int(f[4])? as usize,
                    col: int(f[5])? as usize,
                    pair_seed: int(f[6])?,
                },
            });
        }
        Ok(Self { rows })
    }
}
