//! A patch on disk is two files side by side: `NAME.png`, the 8-bit image
//! to print, and `NAME.lspatch`, the exact float values.
//!
//! Sidecar layout (little-endian):
//!
//! ```text
//! magic "LSPATCH\0", u32 version, u32 height, u32 width,
//! height * width * 3 f32, row-major RGB
//! ```

use std::path::{Path, PathBuf};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::image::Patch;

pub const MAGIC: &[u8; 8] = b"LSPATCH\0";
pub const VERSION: u32 = 1;
const KIND: &str = "patch";
const MAX_SIDE: usize = 1 << 13;

pub fn encode_patch(patch: &Patch) -> Vec<u8> {
    let mut w = Writer::new(MAGIC, VERSION);
    w.len_u32(patch.size());
    w.len_u32(patch.size());
    for &v in patch.pixels() {
        w.f32(v);
    }
    w.buf
}

pub fn decode_patch(bytes: &[u8]) -> Result<Patch> {
    let mut r = Reader::open(KIND, bytes, MAGIC, VERSION)?;
    let h = r.count("height", MAX_SIDE)?;
    let w = r.count("width", MAX_SIDE)?;
    if h != w || h == 0 {
        return Err(r.bad(format!("patch must be square and non-empty, got {h}x{w}")));
    }
    let pixels = r.f32s(h * w * 3)?;
    r.finish()?;
    if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::DimensionMismatch {
            kind: KIND,
            detail: format!("channel value {v} outside [0,1]"),
        });
    }
    Patch::from_pixels(h, pixels)
}

/// `(image path, sidecar path)` for a patch path given with or without an
/// extension.
pub fn patch_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("png"), path.with_extension("lspatch"))
}

pub fn save_patch(patch: &Patch, path: &Path) -> Result<(PathBuf, PathBuf)> {
    let (png, sidecar) = patch_paths(path);
    if let Some(dir) = png.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(&sidecar, encode_patch(patch)).map_err(|e| Error::io(&sidecar, e))?;
    patch
        .to_rgb8()
        .save_with_format(&png, image::ImageFormat::Png)
        .map_err(|e| Error::image(&png, e))?;
    Ok((png, sidecar))
}

/// Reads the float sidecar; the PNG is not consulted.
pub fn load_patch(path: &Path) -> Result<Patch> {
    let (_, sidecar) = patch_paths(path);
    let bytes = std::fs::read(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    decode_patch(&bytes)
}
