//! Adapter checkpoint format and toy-dataset loading.
//!
//! Checkpoint layout (little-endian):
//!   magic "SNTADP01" (8 bytes)
//!   n_latents: u32, d_img: u32, d_text: u32
//!   h_latents, w_q, w_k, w_v, w_out — row-major f64, in that order
//! Values must be finite; trailing bytes are corruption.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Deserialize;

use super::matrix::Mat;
use super::{AdapterError, AdapterParams, EncodedImage};

const MAGIC: &[u8; 8] = b"SNTADP01";

fn write_mat(writer: &mut impl Write, mat: &Mat) -> std::io::Result<()> {
    for &v in mat.data() {
        writer.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_mat(
    reader: &mut impl Read,
    rows: usize,
    cols: usize,
    name: &str,
) -> Result<Mat, AdapterError> {
    let mut mat = Mat::zeros(rows, cols);
    let mut buf = [0u8; 8];
    for i in 0..rows * cols {
        reader.read_exact(&mut buf).map_err(|_| {
            AdapterError::CorruptCheckpoint(format!("{name} truncated at entry {i}"))
        })?;
        let v = f64::from_le_bytes(buf);
        if !v.is_finite() {
            return Err(AdapterError::CorruptCheckpoint(format!(
                "{name} entry {i} is non-finite"
            )));
        }
        mat.data_mut()[i] = v;
    }
    Ok(mat)
}

/// Persist adapter parameters to a checkpoint file.
pub fn save_adapter<P: AsRef<Path>>(path: P, params: &AdapterParams) -> Result<(), AdapterError> {
    params.validate_shapes()?;
    let mut writer = BufWriter::new(std::fs::File::create(path.as_ref())?);
    writer.write_all(MAGIC)?;
    for dim in [
        params.h_latents.rows(),
        params.h_latents.cols(),
        params.w_out.cols(),
    ] {
        let dim = u32::try_from(dim).map_err(|_| {
            AdapterError::InvalidConfig("adapter dimension exceeds u32".to_string())
        })?;
        writer.write_all(&dim.to_le_bytes())?;
    }
    for (_, mat) in params.matrices() {
        write_mat(&mut writer, mat)?;
    }
    writer.flush()?;
    Ok(())
}

/// Load adapter parameters from a checkpoint file.
pub fn load_adapter<P: AsRef<Path>>(path: P) -> Result<AdapterParams, AdapterError> {
    let mut reader = BufReader::new(std::fs::File::open(path.as_ref())?);
    let mut magic = [0u8; 8];
    reader
        .read_exact(&mut magic)
        .map_err(|_| AdapterError::CorruptCheckpoint("file shorter than magic".to_string()))?;
    if &magic != MAGIC {
        return Err(AdapterError::CorruptCheckpoint(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut dims = [0usize; 3];
    let mut buf = [0u8; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        reader.read_exact(&mut buf).map_err(|_| {
            AdapterError::CorruptCheckpoint(format!("header truncated at dimension {i}"))
        })?;
        *d = u32::from_le_bytes(buf) as usize;
        if *d == 0 {
            return Err(AdapterError::CorruptCheckpoint(format!(
                "dimension {i} is zero"
            )));
        }
    }
    let [n_latents, d_img, d_text] = dims;
    let params = AdapterParams {
        h_latents: read_mat(&mut reader, n_latents, d_img, "h_latents")?,
        w_q: read_mat(&mut reader, d_img, d_img, "w_q")?,
        w_k: read_mat(&mut reader, d_img, d_img, "w_k")?,
        w_v: read_mat(&mut reader, d_img, d_img, "w_v")?,
        w_out: read_mat(&mut reader, d_img, d_text, "w_out")?,
    };
    let mut probe = [0u8; 1];
    if reader.read(&mut probe)? != 0 {
        return Err(AdapterError::CorruptCheckpoint(
            "trailing bytes after final matrix".to_string(),
        ));
    }
    Ok(params)
}

/// One training example as stored in the toy-dataset JSONL:
/// `{"features": [[f64…]…], "token_ids": [int…]}`.
#[derive(Debug, Deserialize)]
pub struct ToyExample {
    pub features: Vec<Vec<f64>>,
    pub token_ids: Vec<usize>,
}

/// Load a toy dataset: JSONL of [`ToyExample`] rows.
pub fn load_toy_dataset<P: AsRef<Path>>(
    path: P,
) -> Result<Vec<(EncodedImage, Vec<usize>)>, AdapterError> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let mut dataset = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let example: ToyExample = serde_json::from_str(line).map_err(|e| {
            AdapterError::CorruptCheckpoint(format!("toy dataset line {}: {e}", idx + 1))
        })?;
        let features = Mat::from_rows(&example.features).map_err(|e| {
            AdapterError::ShapeMismatch(format!("toy dataset line {}: {e}", idx + 1))
        })?;
        dataset.push((EncodedImage::new(features)?, example.token_ids));
    }
    Ok(dataset)
}
