//! Encoder checkpoints.
//!
//! ```text
//! magic "DSEN" | version u32 | precision u8 (4 or 8) | share u8 | reserved u16
//! d_emb u32 | output_size u32 | passes u32 | dropout_rate f64
//! seed u64 | config_hash u64
//! text encoder tensors, then code encoder tensors, each in the order
//! w_in, b_in, pass weights, pass biases; little-endian floats
//! ```
//!
//! Published checkpoints use 32-bit floats. 64-bit is used for resumable
//! training state so a resumed run continues from exact values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::network::{DualEncoder, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DSEN";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: u64,
}

fn write_params<W: Write>(w: &mut W, p: &EncoderParams, precision: Precision) -> std::io::Result<()> {
    for tensor in p.tensors() {
        for &x in tensor {
            match precision {
                Precision::F32 => w.write_f32::<LE>(x as f32)?,
                Precision::F64 => w.write_f64::<LE>(x)?,
            }
        }
    }
    Ok(())
}

fn read_params<R: Read>(r: &mut R, cfg: &EncoderConfig, precision: Precision) -> std::io::Result<EncoderParams> {
    let mut p = EncoderParams::zeros(cfg);
    for tensor in p.tensors_mut() {
        match precision {
            Precision::F32 => {
                for x in tensor.iter_mut() {
                    *x = f64::from(r.read_f32::<LE>()?);
                }
            }
            Precision::F64 => r.read_f64_into::<LE>(tensor)?,
        }
    }
    Ok(p)
}

pub fn write_checkpoint(path: &Path, dual: &DualEncoder, precision: Precision, prov: Provenance) -> Result<()> {
    let cfg = &dual.config;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    w.write_u8(match precision {
        Precision::F32 => 4,
        Precision::F64 => 8,
    })?;
    w.write_u8(u8::from(cfg.share_pass_weights))?;
    w.write_u16::<LE>(0)?;
    w.write_u32::<LE>(cfg.d_emb as u32)?;
    w.write_u32::<LE>(cfg.output_size as u32)?;
    w.write_u32::<LE>(cfg.passes as u32)?;
    w.write_f64::<LE>(cfg.dropout_rate)?;
    w.write_u64::<LE>(prov.seed)?;
    w.write_u64::<LE>(prov.config_hash)?;
    write_params(&mut w, &dual.text, precision)?;
    write_params(&mut w, &dual.code, precision)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(DualEncoder, Provenance)> {
    let file =
        File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format(format!("{} is not an encoder checkpoint", path.display())));
    }
    let version = r.read_u32::<LE>()?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let precision = match r.read_u8()? {
        4 => Precision::F32,
        8 => Precision::F64,
        other => return Err(Error::format(format!("unknown float width {other}"))),
    };
    let share_pass_weights = r.read_u8()? != 0;
    let _reserved = r.read_u16::<LE>()?;
    let config = EncoderConfig {
        d_emb: r.read_u32::<LE>()? as usize,
        output_size: r.read_u32::<LE>()? as usize,
        passes: r.read_u32::<LE>()? as usize,
        dropout_rate: r.read_f64::<LE>()?,
        share_pass_weights,
    };
    config.validate().map_err(|e| Error::format(format!("checkpoint header: {e}")))?;
    let prov = Provenance { seed: r.read_u64::<LE>()?, config_hash: r.read_u64::<LE>()? };
    let text = read_params(&mut r, &config, precision)?;
    let code = read_params(&mut r, &config, precision)?;
    Ok((DualEncoder { text, code, config }, prov))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_both_precisions() {
        let cfg = EncoderConfig { d_emb: 5, output_size: 7, passes: 3, dropout_rate: 0.3, share_pass_weights: false };
        let dual = DualEncoder::new(cfg, 9).unwrap();
        let prov = Provenance { seed: 9, config_hash: 42 };
        let dir = tempfile::tempdir().unwrap();

        let p64 = dir.path().join("a.ckpt");
        write_checkpoint(&p64, &dual, Precision::F64, prov).unwrap();
        let (back, got) = read_checkpoint(&p64).unwrap();
        assert_eq!(back, dual);
        assert_eq!(got, prov);

        let p32 = dir.path().join("b.ckpt");
        write_checkpoint(&p32, &dual, Precision::F32, prov).unwrap();
        let (back, _) = read_checkpoint(&p32).unwrap();
        assert_eq!(back.config, dual.config);
        for (a, b) in back.text.tensors().iter().zip(dual.text.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(*x, f64::from(*y as f32));
            }
        }
    }
}
