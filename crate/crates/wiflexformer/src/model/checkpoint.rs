//! WFLX checkpoint container (little-endian): magic `WFLX`, version u16,
//! config block, tensor count u32; per tensor: name length u16, UTF-8 name,
//! rank u8, dims u32 x rank, f32 data row-major.
//!
//! Stored tensors are the learnable parameters in canonical order, the four
//! batch-norm running buffers, and a one-element `meta.step` tensor carrying
//! the optimizer step count.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::model::{BnBuffers, Model, ModelConfig, ParamSet};
use crate::numerics::{Real, Tensor};

const MAGIC: [u8; 4] = *b"WFLX";
const VERSION: u16 = 1;

/// A model plus the optimizer step it was saved at.
#[derive(Debug, Clone)]
pub struct Checkpoint<T: Real> {
    pub model: Model<T>,
    pub step: u64,
}

/// Serializes parameters, buffers, and step count. Data is stored as f32
/// regardless of the compute precision.
pub fn save_checkpoint<T: Real>(model: &Model<T>, step: u64, path: &Path) -> Result<()> {
    model.params.validate_shapes(&model.cfg)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_u16::<LittleEndian>(VERSION)?;
    write_config(&mut w, &model.cfg)?;

    let mut entries: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    model.params.visit(&mut |name, t: &Tensor<T>| {
        entries.push((
            name.to_string(),
            t.shape().to_vec(),
            t.data().iter().map(|v| v.to_f32().unwrap()).collect(),
        ));
    });
    for (name, t) in [
        ("stem1d.bn1.running_mean", &model.buffers.bn1_mean),
        ("stem1d.bn1.running_var", &model.buffers.bn1_var),
        ("stem1d.bn2.running_mean", &model.buffers.bn2_mean),
        ("stem1d.bn2.running_var", &model.buffers.bn2_var),
    ] {
        entries.push((
            name.to_string(),
            t.shape().to_vec(),
            t.data().iter().map(|v| v.to_f32().unwrap()).collect(),
        ));
    }
    entries.push(("meta.step".to_string(), vec![1], vec![step as f32]));

    w.write_u32::<LittleEndian>(entries.len() as u32)?;
    for (name, shape, data) in &entries {
        w.write_u16::<LittleEndian>(name.len() as u16)?;
        w.write_all(name.as_bytes())?;
        w.write_u8(shape.len() as u8)?;
        for &d in shape {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for &v in data {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"WFLX\"",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = r.read_u16::<LittleEndian>().map_err(truncated)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported WFLX version {}",
            version
        )));
    }
    let cfg = read_config(&mut r)?;
    cfg.validate().map_err(|e| Error::Format(e.to_string()))?;
    let count = r.read_u32::<LittleEndian>().map_err(truncated)?;
    let mut tensors: HashMap<String, Tensor<T>> = HashMap::new();
    for _ in 0..count {
        let name_len = r.read_u16::<LittleEndian>().map_err(truncated)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes).map_err(truncated)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = r.read_u8().map_err(truncated)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u32::<LittleEndian>().map_err(truncated)? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(T::from_f32(r.read_f32::<LittleEndian>().map_err(truncated)?).unwrap());
        }
        if tensors.insert(name.clone(), Tensor::from_vec(&shape, data)?).is_some() {
            return Err(Error::Format(format!("duplicate tensor {}", name)));
        }
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Corruption("trailing bytes after payload".into()));
    }

    let params = ParamSet::from_named(&cfg, &mut tensors)?;
    let mut buffer = |name: &str| -> Result<Tensor<T>> {
        let t = tensors
            .remove(name)
            .ok_or_else(|| Error::Format(format!("missing tensor {}", name)))?;
        if t.shape() != [cfg.d_model] {
            return Err(Error::Format(format!(
                "tensor {} has shape {:?}, expected [{}]",
                name,
                t.shape(),
                cfg.d_model
            )));
        }
        Ok(t)
    };
    let buffers = BnBuffers {
        bn1_mean: buffer("stem1d.bn1.running_mean")?,
        bn1_var: buffer("stem1d.bn1.running_var")?,
        bn2_mean: buffer("stem1d.bn2.running_mean")?,
        bn2_var: buffer("stem1d.bn2.running_var")?,
    };
    let step = tensors
        .remove("meta.step")
        .ok_or_else(|| Error::Format("missing tensor meta.step".into()))?;
    if step.len() != 1 {
        return Err(Error::Format("meta.step must hold one value".into()));
    }
    if let Some(name) = tensors.keys().next() {
        return Err(Error::Format(format!("unexpected tensor {}", name)));
    }
    Ok(Checkpoint {
        model: Model {
            cfg,
            params,
            buffers,
        },
        step: step.data()[0].to_f64().unwrap() as u64,
    })
}

fn write_config<W: Write>(w: &mut W, cfg: &ModelConfig) -> Result<()> {
    for v in [
        cfg.in_channels,
        cfg.in_freq,
        cfg.seq_len,
        cfg.d_model,
        cfg.encoder_layers,
        cfg.heads,
        cfg.ffn_dim,
        cfg.classes,
        cfg.gauss_count,
    ] {
        w.write_u32::<LittleEndian>(v as u32)?;
    }
    w.write_f32::<LittleEndian>(cfg.dropout as f32)?;
    w.write_u32::<LittleEndian>(u32::from(cfg.pe_includes_cls))?;
    w.write_u32::<LittleEndian>(u32::from(cfg.encoder_dropout))?;
    w.write_f32::<LittleEndian>(cfg.bn_momentum as f32)?;
    Ok(())
}

fn read_config<R: Read>(r: &mut R) -> Result<ModelConfig> {
    let mut next = || -> Result<u32> { r.read_u32::<LittleEndian>().map_err(truncated) };
    let in_channels = next()? as usize;
    let in_freq = next()? as usize;
    let seq_len = next()? as usize;
    let d_model = next()? as usize;
    let encoder_layers = next()? as usize;
    let heads = next()? as usize;
    let ffn_dim = next()? as usize;
    let classes = next()? as usize;
    let gauss_count = next()? as usize;
    let dropout = r.read_f32::<LittleEndian>().map_err(truncated)? as f64;
    let pe_includes_cls = r.read_u32::<LittleEndian>().map_err(truncated)? != 0;
    let encoder_dropout = r.read_u32::<LittleEndian>().map_err(truncated)? != 0;
    let bn_momentum = r.read_f32::<LittleEndian>().map_err(truncated)? as f64;
    Ok(ModelConfig {
        in_channels,
        in_freq,
        seq_len,
        d_model,
        encoder_layers,
        heads,
        ffn_dim,
        classes,
        dropout,
        gauss_count,
        pe_includes_cls,
        encoder_dropout,
        bn_momentum,
    })
}

fn truncated(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Corruption("truncated WFLX payload".into())
    } else {
        Error::Io(e)
    }
}
