//! `T4D1` binary tensor files.
//!
//! Little-endian: magic `T4D1`, four `u32` dims (N, C, H, W), one `u8`
//! layout code, three zero bytes, then `n*c*h*w` `f32` values in the
//! layout's flat order.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{Layout, Shape, Tensor};
use crate::error::{Error, Result};

pub const T4D_MAGIC: [u8; 4] = *b"T4D1";
const HEADER_LEN: usize = 24;

pub fn write_t4d<W: Write>(mut out: W, t: &Tensor<f32>) -> Result<()> {
    let s = t.shape();
    let mut header = [0u8; HEADER_LEN];
    header[..4].copy_from_slice(&T4D_MAGIC);
    for (i, d) in s.extents().iter().enumerate() {
        header[4 + 4 * i..8 + 4 * i].copy_from_slice(&(*d as u32).to_le_bytes());
    }
    header[20] = t.layout().code();
    out.write_all(&header)?;
    let mut buf = Vec::with_capacity(t.len() * 4);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn read_t4d<R: Read>(mut input: R) -> Result<Tensor<f32>> {
    let mut header = [0u8; HEADER_LEN];
    input.read_exact(&mut header).map_err(truncated("header"))?;
    if header[..4] != T4D_MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &header[..4])));
    }
    let dim = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let shape = Shape::new(dim(0), dim(1), dim(2), dim(3))
        .map_err(|e| Error::Format(format!("invalid dims: {e}")))?;
    let layout = Layout::from_code(header[20])?;
    if header[21..24] != [0, 0, 0] {
        return Err(Error::Format("reserved header bytes must be zero".into()));
    }

    let mut payload = vec![0u8; shape.len() * 4];
    input.read_exact(&mut payload).map_err(truncated("payload"))?;
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(Error::Format(format!(
            "payload longer than {} elements for {}",
            shape.len(),
            shape
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Tensor::new(shape, layout, data)
}

fn truncated(what: &'static str) -> impl Fn(std::io::Error) -> Error {
    move |e| {
        if e.kind() == ErrorKind::UnexpectedEof {
            Error::Format(format!("truncated {what}"))
        } else {
            Error::Io(e)
        }
    }
}

pub fn save_t4d(path: impl AsRef<Path>, t: &Tensor<f32>) -> Result<()> {
    write_t4d(BufWriter::new(File::create(path)?), t)
}

pub fn load_t4d(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    read_t4d(BufReader::new(File::open(path)?))
}
