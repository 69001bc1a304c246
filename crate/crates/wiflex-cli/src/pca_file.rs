//! WPCA sidecar: a fitted PCA projection persisted alongside checkpoints so
//! `eval` can reuse the projection fitted during `train`.
//!
//! Layout (little-endian): magic `WPCA`, version u16 = 1, F u32, n u32,
//! mean F x (re f64, im f64), components n x F x (re f64, im f64),
//! eigenvalues n x f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use wiflexformer::error::{Error, Result};
use wiflexformer::features::PcaModel;

const MAGIC: [u8; 4] = *b"WPCA";
const VERSION: u16 = 1;

pub fn save_pca(model: &PcaModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_u16::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(model.subcarriers() as u32)?;
    w.write_u32::<LittleEndian>(model.components.len() as u32)?;
    for v in &model.mean {
        w.write_f64::<LittleEndian>(v.re)?;
        w.write_f64::<LittleEndian>(v.im)?;
    }
    for row in &model.components {
        for v in row {
            w.write_f64::<LittleEndian>(v.re)?;
            w.write_f64::<LittleEndian>(v.im)?;
        }
    }
    for &l in &model.eigenvalues {
        w.write_f64::<LittleEndian>(l)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_pca(path: &Path) -> Result<PcaModel> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Corruption("truncated WPCA file".into()))?;
    if magic != MAGIC {
        return Err(Error::Format("bad WPCA magic".into()));
    }
    if r.read_u16::<LittleEndian>()? != VERSION {
        return Err(Error::Format("unsupported WPCA version".into()));
    }
    let f = r.read_u32::<LittleEndian>()? as usize;
    let n = r.read_u32::<LittleEndian>()? as usize;
    let complex = |r: &mut BufReader<File>| -> Result<wiflexformer::num_complex::Complex<f64>> {
        let re = r.read_f64::<LittleEndian>()?;
        let im = r.read_f64::<LittleEndian>()?;
        Ok(wiflexformer::num_complex::Complex::new(re, im))
    };
    let mean = (0..f).map(|_| complex(&mut r)).collect::<Result<_>>()?;
    let components = (0..n)
        .map(|_| (0..f).map(|_| complex(&mut r)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let eigenvalues = (0..n)
        .map(|_| Ok(r.read_f64::<LittleEndian>()?))
        .collect::<Result<_>>()?;
    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
    })
}
