//! Binary persistence for embedding models.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic "DSEM" | version u32 | dim u32 | vocab_size u32 | bucket_count u32
//! min_n u32 | max_n u32 | subword_enabled u8 | scope u8 | reserved u16
//! min_count u64 | seed u64 | config_hash u64
//! vocab_size × (len u32, utf-8 bytes, count u64)
//! input  f32 × (vocab_size + bucket rows) × dim
//! output f32 × vocab_size × dim
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::model::{EmbeddingModel, EmbeddingScope};
use super::subword::SubwordConfig;
use super::vocab::Vocabulary;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DSEM";
const VERSION: u32 = 1;

pub(crate) fn write_f32s<W: Write>(w: &mut W, xs: &[f32]) -> std::io::Result<()> {
    for &x in xs {
        w.write_f32::<LE>(x)?;
    }
    Ok(())
}

pub(crate) fn read_f32s<R: Read>(r: &mut R, n: usize) -> std::io::Result<Vec<f32>> {
    let mut out = vec![0.0f32; n];
    r.read_f32_into::<LE>(&mut out)?;
    Ok(out)
}

pub(crate) fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_u32::<LE>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

pub(crate) fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = r.read_u32::<LE>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::format("string is not valid UTF-8"))
}

pub fn write_model(path: &Path, model: &EmbeddingModel) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    w.write_u32::<LE>(model.dim as u32)?;
    w.write_u32::<LE>(model.vocab.len() as u32)?;
    w.write_u32::<LE>(model.subword.bucket_count as u32)?;
    w.write_u32::<LE>(model.subword.min_n as u32)?;
    w.write_u32::<LE>(model.subword.max_n as u32)?;
    w.write_u8(u8::from(model.subword.enabled))?;
    w.write_u8(model.scope.tag())?;
    w.write_u16::<LE>(0)?;
    w.write_u64::<LE>(model.vocab.min_count())?;
    w.write_u64::<LE>(model.seed)?;
    w.write_u64::<LE>(model.config_hash)?;
    for (word, &count) in model.vocab.words().iter().zip(model.vocab.counts()) {
        write_str(&mut w, word)?;
        w.write_u64::<LE>(count)?;
    }
    write_f32s(&mut w, &model.input)?;
    write_f32s(&mut w, &model.output)?;
    w.flush()?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<EmbeddingModel> {
    let file =
        File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format(format!("{} is not an embedding model", path.display())));
    }
    let version = r.read_u32::<LE>()?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported embedding model version {version}")));
    }
    let dim = r.read_u32::<LE>()? as usize;
    let vocab_size = r.read_u32::<LE>()? as usize;
    let bucket_count = r.read_u32::<LE>()? as usize;
    let min_n = r.read_u32::<LE>()? as usize;
    let max_n = r.read_u32::<LE>()? as usize;
    let enabled = r.read_u8()? != 0;
    let scope = EmbeddingScope::from_tag(r.read_u8()?).ok_or_else(|| Error::format("unknown embedding scope"))?;
    let _reserved = r.read_u16::<LE>()?;
    let min_count = r.read_u64::<LE>()?;
    let seed = r.read_u64::<LE>()?;
    let config_hash = r.read_u64::<LE>()?;

    let mut words = Vec::with_capacity(vocab_size);
    let mut counts = Vec::with_capacity(vocab_size);
    for _ in 0..vocab_size {
        words.push(read_str(&mut r)?);
        counts.push(r.read_u64::<LE>()?);
    }
    let subword = SubwordConfig { min_n, max_n, bucket_count, enabled };
    subword.validate()?;
    let bucket_rows = if enabled { bucket_count } else { 0 };
    let input = read_f32s(&mut r, (vocab_size + bucket_rows) * dim)?;
    let output = read_f32s(&mut r, vocab_size * dim)?;
    Ok(EmbeddingModel {
        vocab: Vocabulary::from_parts(words, counts, min_count),
        input,
        output,
        dim,
        subword,
        scope,
        seed,
        config_hash,
    })
}

/// Plain-text dump: a `vocab_size dim` header, then `word v1 .. vdim` per line.
pub fn write_text_vectors(path: &Path, model: &EmbeddingModel) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{} {}", model.vocab.len(), model.dim)?;
    for word in model.vocab.words() {
        write!(w, "{word}")?;
        for x in model.word_vector(word) {
            write!(w, " {x:.6}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Split, TokenizedPair};
    use crate::embedding::{train_cbow, CbowTrainConfig};

    #[test]
    fn binary_round_trip() {
        let pairs = vec![TokenizedPair {
            id: "a".into(),
            split: Split::Train,
            text_tokens: vec!["read".into(), "file".into()],
            code_tokens: vec!["def".into(), "read".into(), "path".into()],
        }];
        let cfg = CbowTrainConfig { dim: 8, epochs: 1, ..CbowTrainConfig::default() };
        let sub = SubwordConfig { bucket_count: 32, ..SubwordConfig::default() };
        let mut model = train_cbow(&pairs, EmbeddingScope::Unified, &cfg, &sub).unwrap();
        model.config_hash = 0xdead_beef;

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        write_model(&path, &model).unwrap();
        assert_eq!(read_model(&path).unwrap(), model);

        let txt = dir.path().join("m.txt");
        write_text_vectors(&txt, &model).unwrap();
        let dump = std::fs::read_to_string(txt).unwrap();
        let mut lines = dump.lines();
        assert_eq!(lines.next(), Some("4 8"));
        assert_eq!(lines.next().unwrap().split(' ').count(), 9);
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk");
        std::fs::write(&path, b"NOPE0000").unwrap();
        assert!(matches!(read_model(&path), Err(Error::Format(_))));
    }
}
