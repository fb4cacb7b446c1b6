//! Checkpoint files: encoder parameters alone, or full training state for
//! exact resume. Named parameter blobs are written in the canonical
//! traversal order and round-trip bit-exactly at the stored precision.

use super::{ModalityState, TrainState};
use crate::bank::{raw, BankGroup, MemoryBank};
use crate::config::RunConfig;
use crate::encoder::EncoderParams;
use crate::tensor::Tensor;
use crate::wire::{
    corrupt, put_f32s, put_f64s, put_str, put_u32, put_u64, write_atomic, FormatError, Reader,
};
use std::path::Path;

const PARAMS_MAGIC: &[u8; 4] = b"SKEP";
const STATE_MAGIC: &[u8; 4] = b"SKCK";
const VERSION: u32 = 1;

/// Storage precision for parameter blobs. Training state always uses F64;
/// F32 halves encoder exports at the cost of rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    fn byte(self) -> u8 {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }

    fn from_byte(b: u8) -> Result<Self, FormatError> {
        match b {
            4 => Ok(Precision::F32),
            8 => Ok(Precision::F64),
            other => Err(corrupt("checkpoint", format!("bad precision byte {other}"))),
        }
    }
}

fn put_tensor(buf: &mut Vec<u8>, t: &Tensor, precision: Precision) {
    put_u32(buf, t.rank() as u32);
    for &d in t.shape() {
        put_u64(buf, d as u64);
    }
    match precision {
        Precision::F64 => put_f64s(buf, t.data()),
        Precision::F32 => put_f32s(buf, t.data()),
    }
}

fn read_tensor(r: &mut Reader, precision: Precision) -> Result<Tensor, FormatError> {
    let rank = r.u32()? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u64()? as usize);
    }
    let numel: usize = shape.iter().product();
    let data = match precision {
        Precision::F64 => r.f64s(numel)?,
        Precision::F32 => r.f32s_as_f64(numel)?,
    };
    Tensor::from_vec(shape, data).map_err(|e| corrupt("checkpoint", e.to_string()))
}

fn put_params(buf: &mut Vec<u8>, params: &EncoderParams, precision: Precision) {
    let flat = params.tensors.flatten();
    let names = params.tensors.param_names();
    put_u32(buf, flat.len() as u32);
    for (name, t) in names.iter().zip(flat) {
        put_str(buf, name);
        put_tensor(buf, t, precision);
    }
}

fn read_params(
    r: &mut Reader,
    template: &EncoderParams,
    precision: Precision,
) -> Result<EncoderParams, FormatError> {
    let count = r.u32()? as usize;
    let names = template.tensors.param_names();
    if count != names.len() {
        return Err(corrupt(
            "checkpoint",
            format!("expected {} parameters, file has {count}", names.len()),
        ));
    }
    let mut flat = Vec::with_capacity(count);
    for expect in &names {
        let name = r.str()?;
        if &name != expect {
            return Err(corrupt(
                "checkpoint",
                format!("parameter order mismatch: {name} where {expect} expected"),
            ));
        }
        flat.push(read_tensor(r, precision)?);
    }
    Ok(EncoderParams {
        config: template.config.clone(),
        tensors: template.tensors.from_flat(&flat),
    })
}

/// Standalone encoder parameter file: header (version, precision, config
/// echo) then named blobs.
pub fn save_encoder_params(
    params: &EncoderParams,
    config_echo: &str,
    precision: Precision,
    path: &Path,
) -> Result<(), FormatError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(PARAMS_MAGIC);
    put_u32(&mut buf, VERSION);
    buf.push(precision.byte());
    put_str(&mut buf, config_echo);
    put_params(&mut buf, params, precision);
    write_atomic(path, &buf)
}

/// Loads a standalone parameter file. The template supplies the expected
/// structure (from its config); the echo string is returned alongside.
pub fn load_encoder_params(
    path: &Path,
    template: &EncoderParams,
) -> Result<(EncoderParams, String), FormatError> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader::new(&bytes, "encoder params");
    r.expect_magic(PARAMS_MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(corrupt("encoder params", format!("unsupported version {version}")));
    }
    let precision = Precision::from_byte(r.u8()?)?;
    let echo = r.str()?;
    let params = read_params(&mut r, template, precision)?;
    r.done()?;
    Ok((params, echo))
}

fn put_bank(buf: &mut Vec<u8>, bank: &MemoryBank) {
    let s = raw::state(bank);
    put_u64(buf, s.capacity as u64);
    put_u64(buf, s.key_dim as u64);
    match s.value_dim {
        Some(d) => {
            buf.push(1);
            put_u64(buf, d as u64);
        }
        None => {
            buf.push(0);
            put_u64(buf, 0);
        }
    }
    put_u64(buf, s.cursor as u64);
    put_u64(buf, s.fill as u64);
    put_f64s(buf, s.keys);
    put_f64s(buf, s.values);
    for &id in s.instance_ids {
        put_u64(buf, id);
    }
}

fn read_bank(r: &mut Reader) -> Result<MemoryBank, FormatError> {
    let capacity = r.u64()? as usize;
    let key_dim = r.u64()? as usize;
    let has_values = r.u8()? == 1;
    let vd = r.u64()? as usize;
    let value_dim = has_values.then_some(vd);
    let cursor = r.u64()? as usize;
    let fill = r.u64()? as usize;
    let keys = r.f64s(capacity * key_dim)?;
    let values = r.f64s(capacity * value_dim.unwrap_or(0))?;
    let mut instance_ids = Vec::with_capacity(capacity);
    for _ in 0..capacity {
        instance_ids.push(r.u64()?);
    }
    Ok(raw::build(
        capacity,
        key_dim,
        value_dim,
        keys,
        values,
        instance_ids,
        cursor,
        fill,
    ))
}

/// Full training state: config echo, counters, every encoder pair, optimizer
/// velocity, and all banks. Always f64; loading then saving reproduces the
/// file byte for byte.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<(), FormatError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(STATE_MAGIC);
    put_u32(&mut buf, VERSION);
    buf.push(Precision::F64.byte());
    put_str(&mut buf, &state.config.to_echo_toml());
    put_u64(&mut buf, state.epoch);
    put_u64(&mut buf, state.step);
    put_u32(&mut buf, state.modalities.len() as u32);
    for ms in &state.modalities {
        put_str(&mut buf, ms.modality.name());
        put_params(&mut buf, &ms.query, Precision::F64);
        put_params(&mut buf, &ms.key, Precision::F64);
        put_u32(&mut buf, ms.velocity.len() as u32);
        for v in &ms.velocity {
            put_tensor(&mut buf, v, Precision::F64);
        }
    }
    let (cursor, fill) = state.banks.raw_parts();
    put_u64(&mut buf, cursor as u64);
    put_u64(&mut buf, fill as u64);
    put_u32(&mut buf, state.banks.banks().len() as u32);
    for bank in state.banks.banks() {
        put_bank(&mut buf, bank);
    }
    write_atomic(path, &buf)
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState, FormatError> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader::new(&bytes, "checkpoint");
    r.expect_magic(STATE_MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(corrupt("checkpoint", format!("unsupported version {version}")));
    }
    let _precision = Precision::from_byte(r.u8()?)?;
    let echo = r.str()?;
    let config =
        RunConfig::from_toml(&echo).map_err(|e| corrupt("checkpoint", e.to_string()))?;
    let epoch = r.u64()?;
    let step = r.u64()?;
    let n_mods = r.u32()? as usize;
    if n_mods != config.modalities.len() {
        return Err(corrupt("checkpoint", "modality count mismatch with config"));
    }
    // template params provide the structure to read into
    let mut rng = crate::rng::rng_for(0, &[]);
    let template = EncoderParams::init(&config.encoder, &mut rng)
        .map_err(|e| corrupt("checkpoint", e.to_string()))?;
    let mut modalities = Vec::with_capacity(n_mods);
    for &m in &config.modalities {
        let name = r.str()?;
        if name != m.name() {
            return Err(corrupt(
                "checkpoint",
                format!("modality order mismatch: {name} vs {}", m.name()),
            ));
        }
        let query = read_params(&mut r, &template, Precision::F64)?;
        let key = read_params(&mut r, &template, Precision::F64)?;
        let n_vel = r.u32()? as usize;
        let mut velocity = Vec::with_capacity(n_vel);
        for _ in 0..n_vel {
            velocity.push(read_tensor(&mut r, Precision::F64)?);
        }
        modalities.push(ModalityState {
            modality: m,
            query,
            key,
            velocity,
        });
    }
    let cursor = r.u64()? as usize;
    let fill = r.u64()? as usize;
    let n_banks = r.u32()? as usize;
    if n_banks != config.modalities.len() * 2 {
        return Err(corrupt("checkpoint", "bank count mismatch"));
    }
    let mut banks = Vec::with_capacity(n_banks);
    for _ in 0..n_banks {
        banks.push(read_bank(&mut r)?);
    }
    r.done()?;
    let group = BankGroup::restore(config.modalities.clone(), banks, cursor, fill);
    let norm_adjacency = config.dataset.topology.normalized_adjacency();
    Ok(TrainState {
        config,
        modalities,
        banks: group,
        epoch,
        step,
        norm_adjacency,
    })
}
