//! Flat little-endian f32 feature-tensor files:
//! header (kind u8, C u32, F u32, T u32), then row-major data.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureTensor};
use crate::numerics::{Real, Tensor};

fn kind_tag(kind: FeatureKind) -> u8 {
    match kind {
        FeatureKind::Amplitude => 0,
        FeatureKind::DfsMagnitude => 1,
    }
}

pub fn save_feature_file<T: Real>(feat: &FeatureTensor<T>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_u8(kind_tag(feat.kind))?;
    w.write_u32::<LittleEndian>(feat.channels() as u32)?;
    w.write_u32::<LittleEndian>(feat.freq() as u32)?;
    w.write_u32::<LittleEndian>(feat.time() as u32)?;
    for v in feat.data.data() {
        w.write_f32::<LittleEndian>(v.to_f32().unwrap())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_feature_file<T: Real>(path: &Path) -> Result<FeatureTensor<T>> {
    let mut r = BufReader::new(File::open(path)?);
    let kind = match r.read_u8().map_err(truncated)? {
        0 => FeatureKind::Amplitude,
        1 => FeatureKind::DfsMagnitude,
        other => {
            return Err(Error::Format(format!("unknown feature kind tag {}", other)));
        }
    };
    let c = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let f = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let t = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let mut data = Vec::with_capacity(c * f * t);
    for _ in 0..c * f * t {
        data.push(T::from_f32(r.read_f32::<LittleEndian>().map_err(truncated)?).unwrap());
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Corruption(
            "trailing bytes after feature payload".into(),
        ));
    }
    Ok(FeatureTensor {
        kind,
        data: Tensor::from_vec(&[c, f, t], data)?,
    })
}

fn truncated(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Corruption("truncated feature file".into())
    } else {
        Error::Io(e)
    }
}
