//! Model file: `"S3D1"`, version byte `0x01`, u64-LE length-prefixed JSON
//! config, then every parameterised layer's weights and bias as u64-LE element
//! counts followed by little-endian fp64 values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{ConvParams, Network, NetworkConfig};
use crate::tensor::Tensor;

pub const MODEL_MAGIC: &[u8; 4] = b"S3D1";
pub const MODEL_VERSION: u8 = 1;

pub(crate) fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format(format!("truncated file while reading {what}")))?;
    Ok(u64::from_le_bytes(buf))
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, expected: usize, what: &str) -> Result<Vec<f64>> {
    let n = read_u64(r, what)? as usize;
    if n != expected {
        return Err(Error::format(format!("{what}: expected {expected} values, file has {n}")));
    }
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::format(format!("truncated file while reading {what}")))?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub(crate) fn read_header<R: Read>(r: &mut R, magic: &[u8; 4], version: u8) -> Result<()> {
    let mut head = [0u8; 5];
    r.read_exact(&mut head)
        .map_err(|_| Error::format("file too short for header"))?;
    if &head[..4] != magic {
        return Err(Error::format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&head[..4]),
            String::from_utf8_lossy(magic)
        )));
    }
    if head[4] != version {
        return Err(Error::format(format!(
            "unsupported version {}, expected {version}",
            head[4]
        )));
    }
    Ok(())
}

pub fn write_model<W: Write>(w: &mut W, net: &Network) -> Result<()> {
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&[MODEL_VERSION])?;
    let json = serde_json::to_vec(net.config())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for p in net.params() {
        write_f64s(w, p.weight.data())?;
        write_f64s(w, p.bias.data())?;
    }
    Ok(())
}

pub fn read_model<R: Read>(r: &mut R) -> Result<Network> {
    read_header(r, MODEL_MAGIC, MODEL_VERSION)?;
    let len = read_u64(r, "config length")? as usize;
    if len > 64 << 20 {
        return Err(Error::format(format!("config length {len} is implausible")));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)
        .map_err(|_| Error::format("truncated file while reading config"))?;
    let config: NetworkConfig = serde_json::from_slice(&json)?;
    let specs = config.conv_layers()?;
    let mut params = Vec::with_capacity(specs.len());
    for spec in &specs {
        let zeros = ConvParams::zeros_for(spec);
        let w = read_f64s(r, zeros.weight.len(), &format!("{}.weight", spec.name))?;
        let b = read_f64s(r, zeros.bias.len(), &format!("{}.bias", spec.name))?;
        params.push(ConvParams {
            weight: Tensor::from_vec(zeros.weight.shape(), w)?,
            bias: Tensor::from_vec(zeros.bias.shape(), b)?,
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::format("trailing bytes after last layer"));
    }
    Network::from_params(config, params)
}

pub fn save_model(net: &Network, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(&mut w, net)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Network> {
    read_model(&mut BufReader::new(File::open(path)?))
}
