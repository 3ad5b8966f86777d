//! Video ingestion. Animated GIFs are decoded in-process; any other container
//! is handed to an `ffmpeg` binary on `PATH`, which dumps PNG frames into a
//! scratch directory.

use std::path::{Path, PathBuf};
use std::process::Command;

use image::{AnimationDecoder, RgbImage, imageops::FilterType};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::dataset::FrameDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestOptions {
    /// Keep every `stride`-th frame, starting with frame 0.
    pub stride: usize,
    pub resize: Option<(u32, u32)>,
    /// Fraction of kept frames assigned to the training split.
    pub train_percent: u32,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            stride: 1,
            resize: None,
            train_percent: 75,
        }
    }
}

fn is_gif(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("gif"))
}

fn decode_gif(path: &Path, stride: usize) -> Result<Vec<(usize, RgbImage)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = image::codecs::gif::GifDecoder::new(std::io::BufReader::new(file))
        .map_err(|e| Error::VideoDecode { frame: 0, detail: e.to_string() })?;
    let mut kept = Vec::new();
    for (i, frame) in decoder.into_frames().enumerate() {
        let frame = frame.map_err(|e| Error::VideoDecode { frame: i, detail: e.to_string() })?;
        if i % stride == 0 {
            kept.push((i, image::DynamicImage::ImageRgba8(frame.into_buffer()).to_rgb8()));
        }
    }
    Ok(kept)
}

fn decode_ffmpeg(path: &Path, stride: usize, scratch: &Path) -> Result<Vec<(usize, RgbImage)>> {
    let pattern = scratch.join("raw_%08d.png");
    let out = Command::new("ffmpeg")
        .args(["-v", "error", "-nostdin", "-i"])
        .arg(path)
        .args(["-vsync", "passthrough"])
        .arg(&pattern)
        .output()
        .map_err(|e| Error::VideoDecode {
            frame: 0,
            detail: format!("cannot run ffmpeg ({e}); only GIF input is decoded natively"),
        })?;
    if !out.status.success() {
        let raw = std::fs::read_dir(scratch).map(|d| d.count()).unwrap_or(0);
        return Err(Error::VideoDecode {
            frame: raw,
            detail: String::from_utf8_lossy(&out.stderr).trim().to_string(),
        });
    }
    let mut kept = Vec::new();
    for i in 0.. {
        // ffmpeg numbers output files from 1
        let p = scratch.join(format!("raw_{:08}.png", i + 1));
        if !p.exists() {
            break;
        }
        if i % stride == 0 {
            let img = image::open(&p)
                .map_err(|e| Error::VideoDecode { frame: i, detail: e.to_string() })?;
            kept.push((i, img.to_rgb8()));
        }
    }
    Ok(kept)
}

/// Decodes `video`, keeps every `stride`-th frame and writes them as a frame
/// dataset under `out`. The manifest is written only after every frame has
/// been decoded and stored.
pub fn ingest_video(video: &Path, out: &Path, options: IngestOptions) -> Result<FrameDataset> {
    if options.stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    if options.train_percent > 100 {
        return Err(Error::InvalidArgument("train_percent must be at most 100".into()));
    }
    if let Some((w, h)) = options.resize {
        if w == 0 || h == 0 {
            return Err(Error::InvalidArgument("resize target must be non-zero".into()));
        }
    }
    if !video.is_file() {
        return Err(Error::io(
            video,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such video file"),
        ));
    }
    let kept = if is_gif(video) {
        decode_gif(video, options.stride)?
    } else {
        let scratch = tempdir_in(out)?;
        let r = decode_ffmpeg(video, options.stride, &scratch);
        let _ = std::fs::remove_dir_all(&scratch);
        r?
    };
    if kept.is_empty() {
        return Err(Error::VideoDecode {
            frame: 0,
            detail: "video contains no frames".into(),
        });
    }
    let (w0, h0) = kept[0].1.dimensions();
    let mut frames = Vec::with_capacity(kept.len());
    let mut sources = Vec::with_capacity(kept.len());
    for (i, img) in kept {
        let img = match options.resize {
            Some((w, h)) => image::imageops::resize(&img, w, h, FilterType::Triangle),
            None if img.dimensions() != (w0, h0) => {
                return Err(Error::VideoDecode {
                    frame: i,
                    detail: format!("frame is {:?}, first frame was {:?}", img.dimensions(), (w0, h0)),
                });
            }
            None => img,
        };
        frames.push(Image::from_rgb8(&img));
        sources.push(i);
    }
    let train = (frames.len() * options.train_percent as usize) / 100;
    FrameDataset::create(out, &frames, sources, train, None)
}

fn tempdir_in(out: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let dir = out.join(format!(".ingest-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}
