//! Dataset file formats: a binary round-trip format and a CSV for inspection.

use super::{Dataset, SkeletonSequence, Topology};
use crate::wire::{corrupt, put_f64, put_f64s, put_i32, put_u32, put_u64, write_atomic, FormatError, Reader};
use std::path::Path;

const MAGIC: &[u8; 4] = b"SKDS";
const VERSION: u32 = 1;

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<(), FormatError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_u32(&mut buf, ds.topology.joint_count() as u32);
    put_u32(&mut buf, ds.frames_per_seq as u32);
    put_u32(&mut buf, ds.num_classes as u32);
    put_u64(&mut buf, ds.train.len() as u64);
    put_u64(&mut buf, ds.test.len() as u64);
    put_f64(&mut buf, ds.noise_std);
    put_u64(&mut buf, ds.seed);
    for &p in ds.topology.parent() {
        put_i32(&mut buf, p);
    }
    for seq in ds.train.iter().chain(&ds.test) {
        put_u32(&mut buf, seq.label as u32);
        put_u64(&mut buf, seq.instance_id);
        put_f64s(&mut buf, &seq.frames);
    }
    write_atomic(path, &buf)
}

pub fn load_dataset(path: &Path) -> Result<Dataset, FormatError> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader::new(&bytes, "dataset");
    r.expect_magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(corrupt("dataset", format!("unsupported version {version}")));
    }
    let joints = r.u32()? as usize;
    let frames = r.u32()? as usize;
    let num_classes = r.u32()? as usize;
    let n_train = r.u64()? as usize;
    let n_test = r.u64()? as usize;
    let noise_std = r.f64()?;
    let seed = r.u64()?;
    let mut parent = Vec::with_capacity(joints);
    for _ in 0..joints {
        parent.push(r.i32()?);
    }
    let topology =
        Topology::new(parent).map_err(|e| corrupt("dataset", e.to_string()))?;
    let read_seq = |r: &mut Reader| -> Result<SkeletonSequence, FormatError> {
        let label = r.u32()? as usize;
        let instance_id = r.u64()?;
        let data = r.f64s(frames * joints * 3)?;
        SkeletonSequence::new(frames, joints, data, label, instance_id)
            .map_err(|e| corrupt("dataset", e.to_string()))
    };
    let mut train = Vec::with_capacity(n_train);
    for _ in 0..n_train {
        train.push(read_seq(&mut r)?);
    }
    let mut test = Vec::with_capacity(n_test);
    for _ in 0..n_test {
        test.push(read_seq(&mut r)?);
    }
    r.done()?;
    Ok(Dataset {
        topology,
        frames_per_seq: frames,
        num_classes,
        noise_std,
        seed,
        train,
        test,
    })
}

/// One row per sequence: split, label, instance id, then the flattened
/// `T*J*3` coordinates. Shortest round-trip float formatting.
pub fn save_dataset_csv(ds: &Dataset, path: &Path) -> Result<(), FormatError> {
    let mut out = String::new();
    out.push_str(&format!(
        "# joints={} frames={} classes={} train={} test={}\n",
        ds.topology.joint_count(),
        ds.frames_per_seq,
        ds.num_classes,
        ds.train.len(),
        ds.test.len()
    ));
    out.push_str("split,label,instance_id,coords...\n");
    for (split, seqs) in [("train", &ds.train), ("test", &ds.test)] {
        for seq in seqs.iter() {
            out.push_str(split);
            out.push_str(&format!(",{},{}", seq.label, seq.instance_id));
            for v in &seq.frames {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
    }
    write_atomic(path, out.as_bytes())
}
