//! CSIB container: the canonical little-endian binary dataset format.
//!
//! Layout: magic `CSIB`, version u16 = 1, F u16, c u16, sample_rate f32,
//! sequence_count u32; per sequence: packet_count u32, then packet_count
//! records of (label u8, timestamp f32, F x (re f32, im f32)). No padding.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::csi::{Complex32, CsiDataset, CsiPacket};
use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"CSIB";
const VERSION: u16 = 1;

/// Writes the dataset in CSIB format; byte-deterministic for identical input.
pub fn save_dataset(dataset: &CsiDataset, path: &Path) -> Result<()> {
    dataset.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_u16::<LittleEndian>(VERSION)?;
    w.write_u16::<LittleEndian>(dataset.subcarrier_count)?;
    w.write_u16::<LittleEndian>(dataset.class_count)?;
    w.write_f32::<LittleEndian>(dataset.sample_rate_hz)?;
    w.write_u32::<LittleEndian>(dataset.sequences.len() as u32)?;
    for seq in &dataset.sequences {
        w.write_u32::<LittleEndian>(seq.len() as u32)?;
        for p in seq {
            w.write_u8(p.label)?;
            w.write_f32::<LittleEndian>(p.timestamp)?;
            for v in &p.csi {
                w.write_f32::<LittleEndian>(v.re)?;
                w.write_f32::<LittleEndian>(v.im)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSIB file and re-validates every dataset invariant.
pub fn load_dataset(path: &Path) -> Result<CsiDataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"CSIB\"",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = r.read_u16::<LittleEndian>().map_err(truncated)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported CSIB version {}, expected {}",
            version, VERSION
        )));
    }
    let f = r.read_u16::<LittleEndian>().map_err(truncated)?;
    let c = r.read_u16::<LittleEndian>().map_err(truncated)?;
    let rate = r.read_f32::<LittleEndian>().map_err(truncated)?;
    let seq_count = r.read_u32::<LittleEndian>().map_err(truncated)?;
    let mut sequences = Vec::with_capacity(seq_count as usize);
    for _ in 0..seq_count {
        let packet_count = r.read_u32::<LittleEndian>().map_err(truncated)?;
        let mut seq = Vec::with_capacity(packet_count as usize);
        for _ in 0..packet_count {
            let label = r.read_u8().map_err(truncated)?;
            let timestamp = r.read_f32::<LittleEndian>().map_err(truncated)?;
            let mut csi = Vec::with_capacity(f as usize);
            for _ in 0..f {
                let re = r.read_f32::<LittleEndian>().map_err(truncated)?;
                let im = r.read_f32::<LittleEndian>().map_err(truncated)?;
                csi.push(Complex32::new(re, im));
            }
            seq.push(CsiPacket {
                csi,
                label,
                timestamp,
            });
        }
        sequences.push(seq);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Corruption("trailing bytes after payload".into()));
    }
    let dataset = CsiDataset {
        subcarrier_count: f,
        class_count: c,
        sample_rate_hz: rate,
        sequences,
        class_names: None,
    };
    dataset.validate()?;
    Ok(dataset)
}

fn truncated(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Corruption("truncated CSIB payload".into())
    } else {
        Error::Io(e)
    }
}
