//! Binary containers: a 16-byte magic, a little-endian `u64` header length,
//! a UTF-8 JSON header, then the values as little-endian `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridField};

pub const FIELD_MAGIC: &[u8; 16] = b"MIXVAR-FIELD\0\0\0\0";
pub const QFT_MAGIC: &[u8; 16] = b"MIXVAR-QFT\0\0\0\0\0\0";
const MAX_HEADER: u64 = 1 << 30;

pub fn write_container<W: Write, H: Serialize>(mut w: W, magic: &[u8; 16], header: &H, values: &[f64]) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    w.write_all(magic)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_container<R: Read, H: DeserializeOwned>(mut r: R, magic: &[u8; 16]) -> Result<(H, Vec<f64>)> {
    let mut got = [0u8; 16];
    r.read_exact(&mut got)?;
    if &got != magic {
        return Err(Error::Format(format!(
            "bad magic: expected {:?}, found {:?}",
            String::from_utf8_lossy(magic).trim_end_matches('\0'),
            String::from_utf8_lossy(&got).trim_end_matches('\0')
        )));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    if len > MAX_HEADER {
        return Err(Error::Format(format!("header length {len} is implausible")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)?;
    let header = serde_json::from_slice(&json)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if rest.len() % 8 != 0 {
        return Err(Error::Format(format!("value block of {} bytes is not a whole number of f64", rest.len())));
    }
    let values = rest.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((header, values))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldHeader {
    pub grid: Grid,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

pub fn save_field(path: impl AsRef<Path>, field: &GridField, config_hash: Option<&str>) -> Result<()> {
    let header = FieldHeader { grid: field.grid().clone(), n: field.n(), config_hash: config_hash.map(str::to_owned) };
    write_container(BufWriter::new(File::create(path)?), FIELD_MAGIC, &header, field.values())
}

pub fn load_field(path: impl AsRef<Path>) -> Result<(GridField, FieldHeader)> {
    let (header, values): (FieldHeader, Vec<f64>) = read_container(BufReader::new(File::open(path)?), FIELD_MAGIC)?;
    let expected = header.grid.num_nodes() * header.n;
    if values.len() != expected {
        return Err(Error::Format(format!("expected {expected} values, found {}", values.len())));
    }
    let field = GridField::from_values(header.grid.clone(), header.n, values)?;
    Ok((field, header))
}
