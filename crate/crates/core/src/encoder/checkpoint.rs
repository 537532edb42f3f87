//! Checkpoint layout (little-endian):
//!
//! ```text
//! magic "KGCK" | version u32 | dim u32 | vocab size u64
//! vocab size × (u32 byte length, UTF-8 token)          row order, UNK first
//! vocab size × dim f32                                  query encoder table
//! vocab size × dim f32                                  document encoder table
//! ```

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use super::{DualEncoder, EncoderError, TextEncoder, Vocab};
use crate::binio::*;
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"KGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint<T: Scalar>(model: &DualEncoder<T>, path: &Path) -> Result<(), EncoderError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_to(model, &mut w)?;
    w.flush()?;
    Ok(())
}

fn write_to<T: Scalar, W: Write>(model: &DualEncoder<T>, w: &mut W) -> std::io::Result<()> {
    let vocab = model.vocab();
    w.write_all(CHECKPOINT_MAGIC)?;
    write_u32(w, CHECKPOINT_VERSION)?;
    write_u32(w, model.dim() as u32)?;
    write_u64(w, vocab.len() as u64)?;
    for row in 0..vocab.len() {
        write_str(w, vocab.token(row))?;
    }
    for enc in [model.query_encoder(), model.doc_encoder()] {
        for &v in enc.table() {
            write_f32(w, v.as_f32())?;
        }
    }
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<DualEncoder<T>, EncoderError> {
    read_from(&mut BufReader::new(fs::File::open(path)?))
}

fn read_from<T: Scalar, R: Read>(r: &mut R) -> Result<DualEncoder<T>, EncoderError> {
    expect_magic(r, CHECKPOINT_MAGIC)?;
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(invalid(&format!("unsupported checkpoint version {version}")).into());
    }
    let dim = read_u32(r)? as usize;
    let size = read_u64(r)? as usize;
    let mut tokens = Vec::with_capacity(size);
    for _ in 0..size {
        tokens.push(read_str(r)?);
    }
    if tokens.first().map(String::as_str) != Some(Vocab::UNK) {
        return Err(invalid("vocabulary must start with the UNK row").into());
    }
    let vocab = Arc::new(Vocab::from_rows(tokens));
    let mut table = || -> std::io::Result<Vec<T>> {
        (0..size * dim).map(|_| read_f32(r).map(|v| T::of(f64::from(v)))).collect()
    };
    let query = table()?;
    let doc = table()?;
    DualEncoder::from_parts(
        TextEncoder::from_table(vocab.clone(), dim, query)?,
        TextEncoder::from_table(vocab, dim, doc)?,
    )
}
