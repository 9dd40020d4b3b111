//! Binary dataset container: a self-describing header followed by
//! length-prefixed records. Images are stored as 8-bit, targets as 32-bit
//! little-endian reals, so round-trips are exact at stored precision.

use super::SampleRecord;
use crate::anchors::{Joint, JointTarget};
use crate::diffmath::NdArray;
use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"A2JD";
const VERSION: u32 = 1;
const CHANNELS: usize = 3;

fn dataset_err(index: usize, message: impl Into<String>) -> Error {
    Error::Dataset {
        index,
        message: message.into(),
    }
}

pub fn write_dataset(records: &[SampleRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let (image_size, n_joints) = match records.first() {
        Some(r) => (r.image.dim(1), r.targets.num_joints()),
        None => (0, 0),
    };
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    w.write_all(&(image_size as u32).to_le_bytes())?;
    w.write_all(&(CHANNELS as u32).to_le_bytes())?;
    w.write_all(&(n_joints as u32).to_le_bytes())?;
    for (index, r) in records.iter().enumerate() {
        if r.image.shape() != [CHANNELS, image_size, image_size] {
            return Err(dataset_err(index, "inconsistent image shape"));
        }
        if r.targets.num_joints() != n_joints {
            return Err(dataset_err(index, "inconsistent joint count"));
        }
        let body = encode_record(r);
        w.write_all(&(body.len() as u64).to_le_bytes())?;
        w.write_all(&body)?;
    }
    w.flush()?;
    Ok(())
}

fn encode_record(r: &SampleRecord) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&r.seed.to_le_bytes());
    out.push(r.overlap as u8);
    out.extend_from_slice(&(r.targets.hand_roots.len() as u32).to_le_bytes());
    for &root in &r.targets.hand_roots {
        out.extend_from_slice(&(root as u32).to_le_bytes());
    }
    for &v in r.image.data() {
        out.push((v * 255.0).round() as u8);
    }
    for j in &r.targets.joints {
        out.extend_from_slice(&(j.x as f32).to_le_bytes());
        out.extend_from_slice(&(j.y as f32).to_le_bytes());
        out.extend_from_slice(&(j.depth as f32).to_le_bytes());
        out.push(j.valid as u8);
    }
    out
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    let mut r = BufReader::new(File::open(&path)?);
    let mut head = [0u8; 4];
    r.read_exact(&mut head)
        .map_err(|e| dataset_err(0, format!("missing header: {e}")))?;
    if &head != MAGIC {
        return Err(dataset_err(0, "bad magic, not a dataset file"));
    }
    let version = read_u32(&mut r, 0)?;
    if version != VERSION {
        return Err(dataset_err(0, format!("unsupported version {version}")));
    }
    let count = read_u64(&mut r, 0)? as usize;
    let image_size = read_u32(&mut r, 0)? as usize;
    let channels = read_u32(&mut r, 0)? as usize;
    let n_joints = read_u32(&mut r, 0)? as usize;
    if channels != CHANNELS && count > 0 {
        return Err(dataset_err(0, format!("unsupported channel count {channels}")));
    }
    let mut records = Vec::with_capacity(count);
    for index in 0..count {
        let body_len = read_u64(&mut r, index)? as usize;
        let mut body = vec![0u8; body_len];
        r.read_exact(&mut body)
            .map_err(|_| dataset_err(index, "truncated record"))?;
        records.push(decode_record(&body, index, image_size, n_joints)?);
    }
    Ok(records)
}

fn decode_record(
    body: &[u8],
    index: usize,
    image_size: usize,
    n_joints: usize,
) -> Result<SampleRecord> {
    let expected = 8 + 1 + 4; // seed + flag + root count, before variable parts
    if body.len() < expected {
        return Err(dataset_err(index, "record too short"));
    }
    let mut off = 0;
    let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
        if *off + n > body.len() {
            return Err(dataset_err(index, "truncated record body"));
        }
        let s = &body[*off..*off + n];
        *off += n;
        Ok(s)
    };
    let seed = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
    let overlap = take(&mut off, 1)?[0] != 0;
    let n_roots = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
    let mut hand_roots = Vec::with_capacity(n_roots);
    for _ in 0..n_roots {
        hand_roots.push(u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize);
    }
    let pixel_count = CHANNELS * image_size * image_size;
    let pixels = take(&mut off, pixel_count)?;
    let image = NdArray::from_vec(
        &[CHANNELS, image_size, image_size],
        pixels.iter().map(|&b| b as f64 / 255.0).collect(),
    )
    .map_err(|_| dataset_err(index, "image size mismatch"))?;
    let mut joints = Vec::with_capacity(n_joints);
    for _ in 0..n_joints {
        let x = f32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as f64;
        let y = f32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as f64;
        let depth = f32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as f64;
        let valid = take(&mut off, 1)?[0] != 0;
        joints.push(Joint { x, y, depth, valid });
    }
    if off != body.len() {
        return Err(dataset_err(index, "trailing bytes in record"));
    }
    Ok(SampleRecord {
        image,
        targets: JointTarget { joints, hand_roots },
        seed,
        overlap,
    })
}

fn read_u32(r: &mut impl Read, index: usize) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| dataset_err(index, "truncated header"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, index: usize) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| dataset_err(index, "truncated length prefix"))?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_synth::{generate_dataset, SynthConfig};

    #[test]
    fn round_trip_is_exact() {
        let cfg = SynthConfig::default();
        let records = generate_dataset(&cfg, 7, 5).unwrap();
        let dir = std::env::temp_dir().join("a2j_fmt_roundtrip.a2jd");
        write_dataset(&records, &dir).unwrap();
        let back = read_dataset(&dir).unwrap();
        assert_eq!(records, back);
        std::fs::remove_file(dir).ok();
    }

    #[test]
    fn empty_dataset_round_trips() {
        let dir = std::env::temp_dir().join("a2j_fmt_empty.a2jd");
        write_dataset(&[], &dir).unwrap();
        let back = read_dataset(&dir).unwrap();
        assert!(back.is_empty());
        std::fs::remove_file(dir).ok();
    }

    #[test]
    fn truncated_file_names_the_failing_record() {
        let cfg = SynthConfig::default();
        let records = generate_dataset(&cfg, 3, 3).unwrap();
        let path = std::env::temp_dir().join("a2j_fmt_trunc.a2jd");
        write_dataset(&records, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 200]).unwrap();
        match read_dataset(&path) {
            Err(Error::Dataset { index, .. }) => assert_eq!(index, 2),
            other => panic!("expected dataset error, got {:?}", other.map(|v| v.len())),
        }
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn bad_magic_is_rejected() {
        let path = std::env::temp_dir().join("a2j_fmt_magic.a2jd");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(matches!(
            read_dataset(&path),
            Err(Error::Dataset { index: 0, .. })
        ));
        std::fs::remove_file(path).ok();
    }
}
