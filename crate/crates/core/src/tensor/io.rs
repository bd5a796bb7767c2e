//! `.nt` tensor files: `"NTEN"`, u32 version (1), u32 dtype (1 = f32),
//! u32 ndim, ndim x u32 dims, then little-endian f32 data. All integers are
//! little-endian.

use std::io::{Read, Write};
use std::path::Path;

use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NTEN";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 1;

pub fn write_tensor<T: Scalar, W: Write>(tensor: &Tensor<T>, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    for v in [VERSION, DTYPE_F32, 4] {
        out.write_all(&v.to_le_bytes())?;
    }
    for d in tensor.shape().dims() {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        out.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(tensor.data().len() * 4);
    for v in tensor.data() {
        buf.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads a tensor of rank <= 4; lower ranks are left-padded with ones.
pub fn read_tensor<R: Read>(mut input: R) -> Result<Tensor<f32>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not an NTEN tensor file".into()));
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported tensor file version {version}")));
    }
    let dtype = read_u32(&mut input)?;
    if dtype != DTYPE_F32 {
        return Err(Error::Format(format!("unsupported dtype code {dtype}")));
    }
    let ndim = read_u32(&mut input)? as usize;
    if ndim > 4 {
        return Err(Error::Format(format!("rank {ndim} tensors are not supported")));
    }
    let mut dims = [1usize; 4];
    for slot in dims.iter_mut().skip(4 - ndim) {
        *slot = read_u32(&mut input)? as usize;
    }
    let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
    let mut bytes = vec![0u8; shape.numel() * 4];
    input.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(shape, data)
}

pub fn save_tensor<T: Scalar>(tensor: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_tensor(tensor, std::io::BufWriter::new(file))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let file = std::fs::File::open(path)?;
    read_tensor(std::io::BufReader::new(file))
}
