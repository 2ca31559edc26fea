//! Middlebury `.flo` optical flow files.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const FLO_MAGIC: f32 = 202021.25;

/// Dense flow: per-pixel `(u, v)` displacement, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FloImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<[f32; 2]>,
}

pub fn encode_flo(flow: &FloImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + flow.data.len() * 8);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height as i32).to_le_bytes());
    for [u, v] in &flow.data {
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_flo(bytes: &[u8]) -> Result<FloImage> {
    if bytes.len() < 12 {
        return Err(Error::Data("flo file shorter than its header".into()));
    }
    let word = |i: usize| -> [u8; 4] { bytes[i..i + 4].try_into().unwrap() };
    if f32::from_le_bytes(word(0)) != FLO_MAGIC {
        return Err(Error::Data("bad flo magic".into()));
    }
    let width = i32::from_le_bytes(word(4));
    let height = i32::from_le_bytes(word(8));
    if width <= 0 || height <= 0 {
        return Err(Error::Data(format!("bad flo dimensions {width}x{height}")));
    }
    let n = width as usize * height as usize;
    if bytes.len() != 12 + n * 8 {
        return Err(Error::Data(format!(
            "flo body has {} bytes, expected {}",
            bytes.len() - 12,
            n * 8
        )));
    }
    let data = (0..n)
        .map(|i| {
            let o = 12 + i * 8;
            [f32::from_le_bytes(word(o)), f32::from_le_bytes(word(o + 4))]
        })
        .collect();
    Ok(FloImage {
        width: width as u32,
        height: height as u32,
        data,
    })
}

pub fn read_flo(path: &Path) -> Result<FloImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_flo(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write_flo(path: &Path, flow: &FloImage) -> Result<()> {
    fs::write(path, encode_flo(flow)).map_err(|e| Error::io(path, e))
}
