//! The `.mscube` container: `MSC1` magic, a little-endian u32 header
//! length, a UTF-8 JSON header, then the raw band-planar f32 payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datacube::SpectralCube;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MSC1";

#[derive(Serialize, Deserialize)]
struct Header {
    width: usize,
    height: usize,
    bands: usize,
    dtype: String,
    band_names: Vec<String>,
    scale_note: String,
}

pub fn write_cube(cube: &SpectralCube, path: &Path) -> Result<()> {
    let header = Header {
        width: cube.width(),
        height: cube.height(),
        bands: cube.bands(),
        dtype: "f32".to_string(),
        band_names: cube.band_names().to_vec(),
        scale_note: cube.scale_note().to_string(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Format(format!("header serialization failed: {e}")))?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&(header_json.len() as u32).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&header_json).map_err(io_err)?;
    let mut payload = Vec::with_capacity(cube.data().len() * 4);
    for &v in cube.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&payload).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn read_cube(path: &Path) -> Result<SpectralCube> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;

    if bytes.len() < 8 {
        return Err(Error::Truncation(format!(
            "{}: {} bytes is too short for the fixed preamble",
            path.display(),
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}, expected \"MSC1\"",
            path.display(),
            String::from_utf8_lossy(&bytes[0..4])
        )));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    if bytes.len() < 8 + header_len {
        return Err(Error::Truncation(format!(
            "{}: header claims {header_len} bytes but only {} remain",
            path.display(),
            bytes.len() - 8
        )));
    }
    let header: Header = serde_json::from_slice(&bytes[8..8 + header_len])
        .map_err(|e| Error::Format(format!("{}: invalid header JSON: {e}", path.display())))?;
    if header.dtype != "f32" {
        return Err(Error::Format(format!(
            "{}: unsupported dtype {:?}",
            path.display(),
            header.dtype
        )));
    }
    let expect_values = header.width * header.height * header.bands;
    let payload = &bytes[8 + header_len..];
    if payload.len() != expect_values * 4 {
        return Err(Error::Truncation(format!(
            "{}: payload holds {} bytes, header implies {} ({}×{}×{} f32 values)",
            path.display(),
            payload.len(),
            expect_values * 4,
            header.width,
            header.height,
            header.bands
        )));
    }
    let mut data = Vec::with_capacity(expect_values);
    for chunk in payload.chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().expect("4 bytes")));
    }
    if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "{}: non-finite value at flat index {bad}",
            path.display()
        )));
    }
    SpectralCube::new(
        header.width,
        header.height,
        header.bands,
        header.band_names,
        data,
        header.scale_note,
    )
}
