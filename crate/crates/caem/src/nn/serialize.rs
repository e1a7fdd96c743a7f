//! Binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "CAEMPAR\x01"
//! count     u32
//! per parameter, in container order:
//!   name_len u32, name bytes (UTF-8)
//!   ndim     u32, dims ndim x u64
//!   values   numel x f64 (IEEE-754 bits)
//! ```
//!
//! Values round-trip bit for bit: writing and re-reading a container yields
//! the identical byte stream.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::nn::Params;
use crate::tensor::numel;

pub const PARAMS_MAGIC: &[u8; 8] = b"CAEMPAR\x01";

pub fn write_params<W: Write>(w: &mut W, params: &Params) -> Result<()> {
    w.write_all(PARAMS_MAGIC)?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params.iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(p.shape.len() as u32).to_le_bytes())?;
        for &d in &p.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in &p.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact_or_format<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::Format { detail: format!("truncated while reading {what}") })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or_format(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact_or_format(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_params<R: Read>(r: &mut R) -> Result<Params> {
    let mut magic = [0u8; 8];
    read_exact_or_format(r, &mut magic, "magic")?;
    if &magic != PARAMS_MAGIC {
        return Err(Error::Format { detail: "bad parameter container magic".to_string() });
    }
    let count = read_u32(r, "parameter count")?;
    let mut params = Params::new();
    for _ in 0..count {
        let name_len = read_u32(r, "name length")? as usize;
        let mut name = vec![0u8; name_len];
        read_exact_or_format(r, &mut name, "name")?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format { detail: "parameter name is not UTF-8".to_string() })?;
        let ndim = read_u32(r, "rank")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(r, "dimension")? as usize);
        }
        let n = numel(&shape);
        let mut data = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            read_exact_or_format(r, &mut b, "values")?;
            data.push(f64::from_le_bytes(b));
        }
        params.add(&name, shape, data)?;
    }
    Ok(params)
}

pub fn save_params(path: &std::path::Path, params: &Params) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_params(&mut f, params)?;
    f.flush()?;
    Ok(())
}

pub fn load_params(path: &std::path::Path) -> Result<Params> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_params(&mut f)
}
