//! Attack state sidecar, for resuming an interrupted run bit-exactly.
//!
//! ```text
//! magic "LSSTATE\0", u32 version
//! u32 patch_size, patch_size^2 * 3 f32 patch values
//! u64 iteration
//! u64 steps, f64 last, f64 mean, f64 min          loss statistics
//! 32 bytes seed, u64 stream, u64 word_pos_lo, u64 word_pos_hi   generator
//! f64 lr, f64 beta1, f64 beta2, f64 eps, u64 step
//! n f64 first moments, n f64 second moments        (n = patch values)
//! u32 order_len, order_len u32, u64 cursor
//! ```

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::image::Patch;
use crate::nn::Adam;
use crate::trainer::{LossStats, TrainState};

pub const MAGIC: &[u8; 8] = b"LSSTATE\0";
pub const VERSION: u32 = 1;
const KIND: &str = "train state";

pub fn encode_state(state: &TrainState) -> Vec<u8> {
    let mut w = Writer::new(MAGIC, VERSION);
    w.len_u32(state.patch.size());
    for &v in state.patch.pixels() {
        w.f32(v);
    }
    w.u64(state.iteration);
    let s = &state.stats;
    w.u64(s.steps);
    w.f64(s.last);
    w.f64(s.mean);
    w.f64(s.min);
    w.buf.extend_from_slice(&state.rng.get_seed());
    w.u64(state.rng.get_stream());
    let pos = state.rng.get_word_pos();
    w.u64(pos as u64);
    w.u64((pos >> 64) as u64);
    let a = &state.optimizer;
    for v in [a.lr, a.beta1, a.beta2, a.eps] {
        w.f64(v);
    }
    w.u64(a.step);
    for &v in a.m.iter().chain(&a.v) {
        w.f64(v);
    }
    w.len_u32(state.order.len());
    for &i in &state.order {
        w.u32(i);
    }
    w.u64(state.cursor as u64);
    w.buf
}

pub fn decode_state(bytes: &[u8]) -> Result<TrainState> {
    let mut r = Reader::open(KIND, bytes, MAGIC, VERSION)?;
    let size = r.count("patch size", 1 << 13)?;
    if size == 0 {
        return Err(r.bad("empty patch".into()));
    }
    let n = size * size * 3;
    let pixels = r.f32s(n)?;
    let iteration = r.u64()?;
    let stats = LossStats {
        steps: r.u64()?,
        last: r.f64()?,
        mean: r.f64()?,
        min: r.f64()?,
    };
    let seed: [u8; 32] = r.bytes(32)?.try_into().expect("32 bytes");
    let stream = r.u64()?;
    let lo = r.u64()? as u128;
    let hi = r.u64()? as u128;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(lo | (hi << 64));
    let (lr, beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let step = r.u64()?;
    let m = r.f64s(n)?;
    let v = r.f64s(n)?;
    let order_len = r.count("order length", 1 << 28)?;
    // checked before allocating so a bogus length cannot reserve memory
    if bytes.len() < order_len.saturating_mul(4) {
        return Err(Error::Truncated {
            kind: KIND,
            needed: order_len.saturating_mul(4),
            found: bytes.len(),
        });
    }
    let mut order = Vec::with_capacity(order_len);
    for _ in 0..order_len {
        order.push(r.u32()?);
    }
    let cursor = r.u64()? as usize;
    r.finish()?;
    if cursor > order.len() {
        return Err(Error::DimensionMismatch {
            kind: KIND,
            detail: format!("cursor {cursor} past the end of a {}-frame order", order.len()),
        });
    }
    let patch = Patch::from_pixels(size, pixels).map_err(|e| Error::DimensionMismatch {
        kind: KIND,
        detail: e.to_string(),
    })?;
    Ok(TrainState {
        patch,
        iteration,
        stats,
        rng,
        optimizer: Adam {
            lr,
            beta1,
            beta2,
            eps,
            step,
            m,
            v,
        },
        order,
        cursor,
    })
}

pub fn save_state(state: &TrainState, path: &Path) -> Result<()> {
    // write-then-rename so an interrupted save leaves the old state intact
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode_state(state)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_state(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_state(&bytes)
}
