//! Binary array snapshots.
//!
//! Layout: the 8-byte magic `MCACKPT\n`, a little-endian `u32` format
//! version, a `u64` header length and a JSON header describing every array
//! (shape, scheme, model parameters, seed, read and refresh bookkeeping),
//! followed per array by the device records
//! `(g_prog: f64, t_prog: f64, nu: f64, pulse_count: u64, device_id: u64)` and
//! the cached conductances, all little-endian. Floats are stored bit-exact, so
//! a restored array continues the simulation identically.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{ArraySettings, CrossbarArray};
use crate::counters::EventCounters;
use crate::device::{DeviceModelParams, DeviceState, PcmModel};
use crate::error::{McaError, Result};

pub const MAGIC: &[u8; 8] = b"MCACKPT\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ArrayHeader {
    rows: usize,
    cols: usize,
    n_devices: usize,
    settings: ArraySettings,
    model: DeviceModelParams,
    seed: u64,
    id_base: u64,
    read_counter: u64,
    policy_cursor: u64,
    refresh_clock: u64,
    refresh_cursor: usize,
    counters: EventCounters,
    pending: Vec<usize>,
    cache_sum: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    arrays: Vec<ArrayHeader>,
    extra: serde_json::Value,
}

fn ck<E: std::fmt::Display>(e: E) -> McaError {
    McaError::Checkpoint(e.to_string())
}

pub fn write_arrays<W: Write>(mut w: W, arrays: &[&CrossbarArray], extra: serde_json::Value) -> Result<()> {
    let header = Header {
        version: FORMAT_VERSION,
        arrays: arrays
            .iter()
            .map(|a| ArrayHeader {
                rows: a.rows,
                cols: a.cols,
                n_devices: a.devices.len(),
                settings: a.settings.clone(),
                model: a.model.params().clone(),
                seed: a.model.seed(),
                id_base: a.id_base,
                read_counter: a.read_counter,
                policy_cursor: a.policy.cursor(),
                refresh_clock: a.refresh_clock,
                refresh_cursor: a.refresh_cursor,
                counters: a.counters,
                pending: a.pending.clone(),
                cache_sum: a.cache_sum,
            })
            .collect(),
        extra,
    };
    let json = serde_json::to_vec(&header).map_err(ck)?;
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u64::<LittleEndian>(json.len() as u64)?;
    w.write_all(&json)?;
    for a in arrays {
        for d in &a.devices {
            w.write_f64::<LittleEndian>(d.g_prog)?;
            w.write_f64::<LittleEndian>(d.t_prog)?;
            w.write_f64::<LittleEndian>(d.nu)?;
            w.write_u64::<LittleEndian>(d.pulse_count)?;
            w.write_u64::<LittleEndian>(d.device_id)?;
        }
        for &g in &a.cache {
            w.write_f64::<LittleEndian>(g)?;
        }
    }
    Ok(())
}

pub fn read_arrays<R: Read>(mut r: R) -> Result<(Vec<CrossbarArray>, serde_json::Value)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(ck)?;
    if &magic != MAGIC {
        return Err(McaError::Checkpoint("not an array checkpoint (bad magic)".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(ck)?;
    if version > FORMAT_VERSION {
        return Err(McaError::Checkpoint(format!(
            "checkpoint format version {version} is newer than supported version {FORMAT_VERSION}"
        )));
    }
    if version == 0 {
        return Err(McaError::Checkpoint("checkpoint format version 0 is invalid".into()));
    }
    let len = r.read_u64::<LittleEndian>().map_err(ck)? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(ck)?;
    let header: Header = serde_json::from_slice(&json).map_err(ck)?;
    let mut arrays = Vec::with_capacity(header.arrays.len());
    for h in header.arrays {
        let mut devices = Vec::with_capacity(h.n_devices);
        for _ in 0..h.n_devices {
            let g_prog = r.read_f64::<LittleEndian>().map_err(ck)?;
            let t_prog = r.read_f64::<LittleEndian>().map_err(ck)?;
            let nu = r.read_f64::<LittleEndian>().map_err(ck)?;
            let pulse_count = r.read_u64::<LittleEndian>().map_err(ck)?;
            let device_id = r.read_u64::<LittleEndian>().map_err(ck)?;
            devices.push(DeviceState {
                g_prog,
                t_prog,
                nu,
                pulse_count,
                device_id,
            });
        }
        let mut cache = Vec::with_capacity(h.n_devices);
        for _ in 0..h.n_devices {
            cache.push(r.read_f64::<LittleEndian>().map_err(ck)?);
        }
        let model = PcmModel::new(h.model, h.seed)?;
        let mut a = CrossbarArray::from_devices(h.rows, h.cols, h.settings.clone(), model, h.id_base, devices)?;
        // from_devices recomputes g_scale from the range; keep the stored one.
        a.settings = h.settings;
        a.cache = cache;
        a.cache_sum = h.cache_sum;
        a.read_counter = h.read_counter;
        a.policy.set_cursor(h.policy_cursor);
        a.refresh_clock = h.refresh_clock;
        a.refresh_cursor = h.refresh_cursor;
        a.counters = h.counters;
        a.pending = h.pending;
        arrays.push(a);
    }
    Ok((arrays, header.extra))
}
