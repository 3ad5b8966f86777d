//! Toy detector checkpoint format.
//!
//! ```text
//! magic "LSTOYDET", u32 version
//! u32 grid, u32 boxes_per_cell, u32 num_classes, u32 input_size, u32 car_class
//! num_classes x (u32 len, utf-8 name)
//! boxes_per_cell x (f64 anchor_w, f64 anchor_h)
//! u32 array_count
//! array_count x (u32 len, utf-8 name, u32 ndim, ndim x u32 dim, f32 values)
//! ```
//!
//! All integers and floats are little-endian. Arrays are named
//! `conv{i}.weight` (dims `[out, in, k, k]`) and `conv{i}.bias` (`[out]`).

use std::path::Path;

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvNet};

use super::toy::{ToyConfig, ToyDetector};

pub const MAGIC: &[u8; 8] = b"LSTOYDET";
pub const VERSION: u32 = 1;
const KIND: &str = "checkpoint";

const MAX_CLASSES: usize = 256;
const MAX_ANCHORS: usize = 64;
const MAX_ARRAYS: usize = 1024;
const MAX_DIM: usize = 1 << 16;
const MAX_ELEMENTS: usize = 1 << 26;

/// Serializes the detector; weights are narrowed to `f32`.
pub fn encode(det: &ToyDetector) -> Vec<u8> {
    let c = &det.config;
    let mut w = Writer::new(MAGIC, VERSION);
    for v in [c.grid, c.boxes_per_cell(), c.num_classes(), c.input_size, c.car_class] {
        w.len_u32(v);
    }
    for name in &c.class_names {
        w.str(name);
    }
    for &(aw, ah) in &c.anchors {
        w.f64(aw);
        w.f64(ah);
    }
    w.len_u32(det.net.layers.len() * 2);
    for (i, l) in det.net.layers.iter().enumerate() {
        w.str(&format!("conv{i}.weight"));
        w.u32(4);
        for d in [l.out_ch, l.in_ch, l.kernel, l.kernel] {
            w.len_u32(d);
        }
        for &v in &l.weight {
            w.f32(v as f32);
        }
        w.str(&format!("conv{i}.bias"));
        w.u32(1);
        w.len_u32(l.out_ch);
        for &v in &l.bias {
            w.f32(v as f32);
        }
    }
    w.buf
}

struct Array {
    name: String,
    dims: Vec<usize>,
    values: Vec<f32>,
}

fn read_array(r: &mut Reader) -> Result<Array> {
    let name = r.str(256)?;
    let ndim = r.count("array rank", 8)?;
    let mut dims = Vec::with_capacity(ndim);
    let mut total: usize = 1;
    for _ in 0..ndim {
        let d = r.count("array dimension", MAX_DIM)?;
        total = total
            .checked_mul(d)
            .filter(|&t| t <= MAX_ELEMENTS)
            .ok_or_else(|| r.bad(format!("array {name} is too large")))?;
        dims.push(d);
    }
    let values = r.f32s(total)?;
    Ok(Array { name, dims, values })
}

pub fn decode(bytes: &[u8]) -> Result<ToyDetector> {
    let mut r = Reader::open(KIND, bytes, MAGIC, VERSION)?;
    let grid = r.count("grid", 1024)?;
    let boxes = r.count("boxes per cell", MAX_ANCHORS)?;
    let nc = r.count("class count", MAX_CLASSES)?;
    let input_size = r.count("input size", 1 << 14)?;
    let car_class = r.u32()? as usize;
    let class_names = (0..nc).map(|_| r.str(256)).collect::<Result<Vec<_>>>()?;
    let mut anchors = Vec::with_capacity(boxes);
    for _ in 0..boxes {
        anchors.push((r.f64()?, r.f64()?));
    }
    let n_arrays = r.count("array count", MAX_ARRAYS)?;
    if n_arrays % 2 != 0 || n_arrays < 2 {
        return Err(r.bad(format!("expected weight/bias pairs, found {n_arrays} arrays")));
    }
    let mut layers = Vec::with_capacity(n_arrays / 2);
    for i in 0..n_arrays / 2 {
        let weight = read_array(&mut r)?;
        let bias = read_array(&mut r)?;
        if weight.name != format!("conv{i}.weight") || bias.name != format!("conv{i}.bias") {
            return Err(r.bad(format!("unexpected arrays {:?}/{:?} at layer {i}", weight.name, bias.name)));
        }
        let [out_ch, in_ch, k, k2] = weight.dims[..] else {
            return Err(r.bad(format!("{} must have rank 4", weight.name)));
        };
        if k != k2 || bias.dims != [out_ch] {
            return Err(r.bad(format!("layer {i} has inconsistent shapes")));
        }
        let mut conv = Conv2d::new(in_ch, out_ch, k, 1, k / 2);
        conv.weight = weight.values.iter().map(|&v| v as f64).collect();
        conv.bias = bias.values.iter().map(|&v| v as f64).collect();
        layers.push(conv);
    }
    r.finish()?;

    let widths: Vec<usize> = layers[..layers.len() - 1].iter().map(|l| l.out_ch).collect();
    let config = ToyConfig {
        input_size,
        grid,
        anchors,
        widths,
        class_names,
        car_class,
    };
    // the config fixes strides; shapes must then agree exactly
    let expected = config
        .build_net()
        .map_err(|e| Error::DimensionMismatch {
            kind: KIND,
            detail: e.to_string(),
        })?;
    for (got, want) in layers.iter_mut().zip(&expected.layers) {
        got.stride = want.stride;
        got.pad = want.pad;
    }
    ToyDetector::from_parts(config, ConvNet { layers }).map_err(|e| Error::DimensionMismatch {
        kind: KIND,
        detail: e.to_string(),
    })
}

pub fn save(det: &ToyDetector, path: &Path) -> Result<()> {
    std::fs::write(path, encode(det)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ToyDetector> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
