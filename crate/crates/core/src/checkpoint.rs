//! Flat binary checkpoints of the full training state.
//!
//! Layout (little-endian): `"TMGN"`, u32 version, u32 config length + config text, u8 dtype,
//! u64 step, u64 generator Adam step, u64 discriminator Adam step, then seven tensor groups
//! (generator tensors, ln γ, discriminator parameters, generator first/second moments,
//! discriminator first/second moments), each a u32 count of tensors stored as u32 rank,
//! u32 dims, u64 element count and the values. A CRC-32 of everything before it closes the file.

use std::path::Path;

use crate::config::{parse_train_config, train_config_text};
use crate::error::FormatError;
use crate::formats::{put_values, write_atomic, Reader};
use crate::tensor::{DType, Real, Tensor};
use crate::trainer::{TrainConfig, TrainState};

pub const CHECKPOINT_MAGIC: &str = "TMGN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub config: TrainConfig,
    pub state: TrainState<T>,
}

/// A checkpoint of either precision.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyCheckpoint {
    F32(Checkpoint<f32>),
    F64(Checkpoint<f64>),
}

impl AnyCheckpoint {
    pub fn config(&self) -> &TrainConfig {
        match self {
            AnyCheckpoint::F32(c) => &c.config,
            AnyCheckpoint::F64(c) => &c.config,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            AnyCheckpoint::F32(c) => encode_checkpoint(&c.config, &c.state),
            AnyCheckpoint::F64(c) => encode_checkpoint(&c.config, &c.state),
        }
    }
}

fn put_group<T: Real>(out: &mut Vec<u8>, tensors: &[&Tensor<T>]) {
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(t.len() as u64).to_le_bytes());
        put_values(out, t.data());
    }
}

pub fn encode_checkpoint<T: Real>(config: &TrainConfig, state: &TrainState<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC.as_bytes());
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let text = train_config_text(config);
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.push(T::DTYPE.tag());
    out.extend_from_slice(&(state.step as u64).to_le_bytes());
    out.extend_from_slice(&state.adam_gen.step.to_le_bytes());
    out.extend_from_slice(&state.adam_disc.step.to_le_bytes());
    put_group(&mut out, &state.generator.tensors());
    put_group(&mut out, &[&state.gamma.log_gamma]);
    put_group(&mut out, &state.discriminator.params());
    for m in [&state.adam_gen.first_moment, &state.adam_gen.second_moment] {
        put_group(&mut out, &m.iter().collect::<Vec<_>>());
    }
    for m in [&state.adam_disc.first_moment, &state.adam_disc.second_moment] {
        put_group(&mut out, &m.iter().collect::<Vec<_>>());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Header {
    config: TrainConfig,
    dtype: DType,
    step: u64,
    adam_steps: (u64, u64),
}

/// Verify framing and checksum; returns the header and a reader positioned at the tensors.
fn open(bytes: &[u8]) -> Result<(Header, Reader<'_>), FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::Version {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    if bytes.len() < 12 {
        return Err(FormatError::Truncated {
            offset: bytes.len(),
            needed: 12 - bytes.len(),
        });
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed });
    }
    let mut r = Reader::new(body);
    r.take(8)?;
    let len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(len)?)
        .map_err(|_| FormatError::Invalid("checkpoint config block is not UTF-8".into()))?;
    let config = parse_train_config(text)?;
    let tag = r.u8()?;
    let dtype = DType::from_tag(tag).ok_or(FormatError::DType(tag))?;
    let step = r.u64()?;
    let adam_steps = (r.u64()?, r.u64()?);
    Ok((
        Header {
            config,
            dtype,
            step,
            adam_steps,
        },
        r,
    ))
}

/// Storage precision of an encoded checkpoint.
pub fn checkpoint_dtype(bytes: &[u8]) -> Result<DType, FormatError> {
    Ok(open(bytes)?.0.dtype)
}

fn read_group<T: Real>(r: &mut Reader<'_>, dtype: DType) -> Result<Vec<Tensor<T>>, FormatError> {
    let count = r.u32()? as usize;
    let mut out = Vec::new();
    for _ in 0..count {
        let rank = r.u32()? as usize;
        if rank == 0 || rank > 8 {
            return Err(FormatError::Invalid(format!("tensor rank {rank} out of range")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let len = r.u64()?;
        let expected = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| FormatError::Invalid("tensor shape overflows".into()))?;
        if len != expected as u64 {
            return Err(FormatError::Invalid(format!(
                "tensor of shape {shape:?} declares {len} elements"
            )));
        }
        let data = r.values::<T>(dtype, expected)?;
        out.push(Tensor::new(shape, data)?);
    }
    Ok(out)
}

fn fill<T: Real>(what: &str, slots: Vec<&mut Tensor<T>>, values: Vec<Tensor<T>>) -> Result<(), FormatError> {
    if slots.len() != values.len() {
        return Err(FormatError::Invalid(format!(
            "{what}: expected {} tensors, found {}",
            slots.len(),
            values.len()
        )));
    }
    for (s, v) in slots.into_iter().zip(values) {
        if s.shape() != v.shape() {
            return Err(FormatError::Invalid(format!(
                "{what}: expected shape {:?}, found {:?}",
                s.shape(),
                v.shape()
            )));
        }
        *s = v;
    }
    Ok(())
}

fn decode_as<T: Real>(header: Header, mut r: Reader<'_>) -> Result<Checkpoint<T>, FormatError> {
    let groups: Vec<Vec<Tensor<T>>> = (0..7)
        .map(|_| read_group::<T>(&mut r, header.dtype))
        .collect::<Result<_, _>>()?;
    r.finish()?;
    // the payload already decoded, so the template's size is bounded by the file
    let stored: usize = groups[..3].iter().flatten().map(Tensor::len).sum();
    let cfg = &header.config;
    if cfg.generator.param_count() + cfg.discriminator.param_count() > stored {
        return Err(FormatError::Invalid(
            "checkpoint tensors do not match its configuration".into(),
        ));
    }
    let mut state = TrainState::<T>::init(cfg)?;
    let mut g = groups.into_iter();
    fill("generator", state.generator.tensors_mut(), g.next().unwrap())?;
    fill("gamma", vec![&mut state.gamma.log_gamma], g.next().unwrap())?;
    fill("discriminator", state.discriminator.params_mut(), g.next().unwrap())?;
    fill(
        "generator moments",
        state.adam_gen.first_moment.iter_mut().collect(),
        g.next().unwrap(),
    )?;
    fill(
        "generator moments",
        state.adam_gen.second_moment.iter_mut().collect(),
        g.next().unwrap(),
    )?;
    fill(
        "discriminator moments",
        state.adam_disc.first_moment.iter_mut().collect(),
        g.next().unwrap(),
    )?;
    fill(
        "discriminator moments",
        state.adam_disc.second_moment.iter_mut().collect(),
        g.next().unwrap(),
    )?;
    state.step = usize::try_from(header.step).map_err(|_| FormatError::Invalid("step out of range".into()))?;
    state.adam_gen.step = header.adam_steps.0;
    state.adam_disc.step = header.adam_steps.1;
    Ok(Checkpoint {
        config: header.config,
        state,
    })
}

/// Decode a checkpoint stored in precision `T`.
pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<Checkpoint<T>, FormatError> {
    let (header, r) = open(bytes)?;
    if header.dtype != T::DTYPE {
        return Err(FormatError::Invalid(format!(
            "checkpoint holds {:?} tensors, expected {:?}",
            header.dtype,
            T::DTYPE
        )));
    }
    decode_as(header, r)
}

pub fn decode_any(bytes: &[u8]) -> Result<AnyCheckpoint, FormatError> {
    let (header, r) = open(bytes)?;
    Ok(match header.dtype {
        DType::F32 => AnyCheckpoint::F32(decode_as(header, r)?),
        DType::F64 => AnyCheckpoint::F64(decode_as(header, r)?),
    })
}

pub fn save_checkpoint<T: Real>(path: &Path, config: &TrainConfig, state: &TrainState<T>) -> Result<(), FormatError> {
    Ok(write_atomic(path, &encode_checkpoint(config, state))?)
}

pub fn load_checkpoint(path: &Path) -> Result<AnyCheckpoint, FormatError> {
    decode_any(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DiscriminatorConfig, GeneratorConfig};
    use crate::trainer::{Precision, Task};

    fn small() -> TrainConfig {
        let mut c = TrainConfig::preset(Task::Denoise);
        c.generator = GeneratorConfig {
            depth: 3,
            channels: 2,
            batch_norm: true,
            input_scale: 100.0,
        };
        c.discriminator = DiscriminatorConfig::scaled(0.05);
        c.precision = Precision::Test64;
        c
    }

    #[test]
    fn round_trip_bytes() {
        let cfg = small();
        let mut state = TrainState::<f64>::init(&cfg).unwrap();
        state.step = 17;
        state.adam_gen.step = 17;
        state.adam_disc.first_moment[0].data_mut()[0] = 0.125;
        let bytes = encode_checkpoint(&cfg, &state);
        let back = decode_checkpoint::<f64>(&bytes).unwrap();
        assert_eq!(back.state, state);
        assert_eq!(back.config, cfg);
        assert_eq!(encode_checkpoint(&back.config, &back.state), bytes);
        assert!(decode_checkpoint::<f32>(&bytes).is_err());
        assert!(matches!(decode_any(&bytes).unwrap(), AnyCheckpoint::F64(_)));
    }

    #[test]
    fn corruption_is_rejected() {
        let cfg = small();
        let state = TrainState::<f32>::init(&cfg).unwrap();
        let bytes = encode_checkpoint(&cfg, &state);
        for cut in [0, 4, 8, 11, 100, bytes.len() - 1] {
            assert!(decode_any(&bytes[..cut]).is_err(), "cut {cut}");
        }
        let mut flipped = bytes.clone();
        flipped[200] ^= 1;
        assert!(matches!(decode_any(&flipped), Err(FormatError::Checksum { .. })));
        let mut ver = bytes;
        ver[4] = 2;
        assert!(matches!(decode_any(&ver), Err(FormatError::Version { found: 2, .. })));
    }
}
