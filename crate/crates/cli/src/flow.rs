//! Block-matching vertical motion over raw frame dumps.
//!
//! This is simple plumbing to turn a chest crop into a [`MotionMatrix`]; it is
//! not a dense optical-flow method. Each of 10×10 cells inside the bounding
//! box is matched against the next frame by normalized cross-correlation
//! over integer vertical shifts, then refined with a parabola through the
//! peak and its neighbours.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use rayon::prelude::*;
use thiserror::Error;
use vitalsig::respiration::MotionMatrix;

/// Cells per side of the grid.
pub const GRID: usize = 10;

/// Correlations this close to 1 are exact matches and are not refined.
const EXACT_MATCH: f64 = 1.0 - 1e-12;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("frame {path}: {message}")]
    Read { path: String, message: String },
    #[error("frame size mismatch: {path} is {found:?}, expected {expected:?}")]
    FrameSizeMismatch {
        path: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("need at least two frames, found {0}")]
    TooFewFrames(usize),
    #[error("bounding box {bbox:?} does not fit a {width}x{height} frame with 10x10 cells")]
    BadBox { bbox: [usize; 4], width: usize, height: usize },
    #[error("{0}")]
    Core(#[from] vitalsig::Error),
}

/// A grayscale frame, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl Frame {
    fn at(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }
}

const FRAME_EXTENSIONS: [&str; 4] = ["pgm", "ppm", "pbm", "pnm"];

/// Frame files in `dir`, sorted by name.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>, FlowError> {
    let entries = std::fs::read_dir(dir).map_err(|e| FlowError::Read {
        path: dir.display().to_string(),
        message: e.to_string(),
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

pub fn read_frame(path: &Path) -> Result<Frame, FlowError> {
    let img = image::open(path).map_err(|e| FlowError::Read {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let luma = img.to_luma8();
    let (w, h) = luma.dimensions();
    Ok(Frame {
        width: w as usize,
        height: h as usize,
        pixels: luma.into_raw().into_iter().map(f64::from).collect(),
    })
}

/// Reads every frame in `dir` and estimates per-cell vertical motion.
pub fn flow_dir(dir: &Path, fs: f64, bbox: Option<[usize; 4]>, search_px: usize) -> Result<MotionMatrix, FlowError> {
    let paths = list_frames(dir)?;
    if paths.len() < 2 {
        return Err(FlowError::TooFewFrames(paths.len()));
    }
    let frames = paths
        .par_iter()
        .map(|p| read_frame(p))
        .collect::<Result<Vec<_>, _>>()?;
    let expected = (frames[0].width, frames[0].height);
    if let Some((p, f)) = paths
        .iter()
        .zip(&frames)
        .find(|(_, f)| (f.width, f.height) != expected)
    {
        return Err(FlowError::FrameSizeMismatch {
            path: p.display().to_string(),
            expected,
            found: (f.width, f.height),
        });
    }
    flow(&frames, fs, bbox, search_px)
}

/// Vertical displacement, pixels per frame, of each cell between
/// consecutive frames: `frames.len() - 1` rows of 100 columns.
pub fn flow(frames: &[Frame], fs: f64, bbox: Option<[usize; 4]>, search_px: usize) -> Result<MotionMatrix, FlowError> {
    if frames.len() < 2 {
        return Err(FlowError::TooFewFrames(frames.len()));
    }
    let (width, height) = (frames[0].width, frames[0].height);
    let bbox = bbox.unwrap_or([0, 0, width, height]);
    let [bx, by, bw, bh] = bbox;
    if bw < GRID || bh < GRID || bx + bw > width || by + bh > height {
        return Err(FlowError::BadBox { bbox, width, height });
    }
    let (cw, ch) = (bw / GRID, bh / GRID);
    let rows: Vec<Vec<f64>> = frames
        .par_windows(2)
        .map(|pair| {
            let mut row = Vec::with_capacity(GRID * GRID);
            for gy in 0..GRID {
                for gx in 0..GRID {
                    let cell = Cell {
                        x: bx + gx * cw,
                        y: by + gy * ch,
                        w: cw,
                        h: ch,
                    };
                    row.push(cell_shift(&pair[0], &pair[1], cell, search_px));
                }
            }
            row
        })
        .collect();
    let n = rows.len();
    Ok(MotionMatrix::new(rows.concat(), n, fs)?)
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    x: usize,
    y: usize,
    w: usize,
    h: usize,
}

/// NCC between the cell in `a` and the same cell displaced by `dy` in `b`.
/// `None` when the displaced block leaves the frame or either block is flat.
fn ncc(a: &Frame, b: &Frame, c: Cell, dy: isize) -> Option<f64> {
    let y0 = c.y as isize + dy;
    if y0 < 0 || y0 as usize + c.h > b.height {
        return None;
    }
    let y0 = y0 as usize;
    let n = (c.w * c.h) as f64;
    let (mut sa, mut sb) = (0.0, 0.0);
    for j in 0..c.h {
        for i in 0..c.w {
            sa += a.at(c.x + i, c.y + j);
            sb += b.at(c.x + i, y0 + j);
        }
    }
    let (ma, mb) = (sa / n, sb / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for j in 0..c.h {
        for i in 0..c.w {
            let u = a.at(c.x + i, c.y + j) - ma;
            let v = b.at(c.x + i, y0 + j) - mb;
            sab += u * v;
            saa += u * u;
            sbb += v * v;
        }
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

fn cell_shift(a: &Frame, b: &Frame, c: Cell, search_px: usize) -> f64 {
    let s = search_px as isize;
    let scores: Vec<Option<f64>> = (-s..=s).map(|dy| ncc(a, b, c, dy)).collect();
    // Smallest |dy| wins ties so static or ambiguous cells report no motion.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by_key(|&k| ((k as isize - s).abs(), k));
    let mut best: Option<(usize, f64)> = None;
    for k in order {
        if let Some(r) = scores[k] {
            if best.is_none_or(|(_, br)| r > br) {
                best = Some((k, r));
            }
        }
    }
    let Some((k, r)) = best else { return 0.0 };
    let dy = k as f64 - s as f64;
    if r >= EXACT_MATCH || k == 0 || k + 1 == scores.len() {
        return dy;
    }
    match (scores[k - 1], scores[k + 1]) {
        (Some(l), Some(rr)) => {
            let denom = l - 2.0 * r + rr;
            if denom < 0.0 {
                dy + (0.5 * (l - rr) / denom).clamp(-0.5, 0.5)
            } else {
                dy
            }
        }
        _ => dy,
    }
}

/// Smooth, non-repeating texture used by [`render_shifted`].
fn texture(x: f64, y: f64) -> f64 {
    128.0
        + 40.0 * (2.0 * PI * y / 23.0 + 0.3 * x).sin()
        + 30.0 * (2.0 * PI * y / 37.0 + 2.0 * PI * x / 29.0).cos()
        + 20.0 * (2.0 * PI * (x + 0.5 * y) / 11.0).sin()
}

/// Grayscale frame of a texture translated down by `shift` pixels.
pub fn render_shifted(width: usize, height: usize, shift: f64) -> Frame {
    let pixels = (0..height)
        .flat_map(|y| (0..width).map(move |x| texture(x as f64, y as f64 - shift).round().clamp(0.0, 255.0)))
        .collect();
    Frame { width, height, pixels }
}

/// Writes a binary PGM (P5) frame.
pub fn write_pgm(path: &Path, frame: &Frame) -> Result<(), FlowError> {
    let raw: Vec<u8> = frame.pixels.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect();
    let err = |e: &dyn std::fmt::Display| FlowError::Read {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let file = std::fs::File::create(path).map_err(|e| err(&e))?;
    PnmEncoder::new(std::io::BufWriter::new(file))
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(&raw, frame.width as u32, frame.height as u32, ExtendedColorType::L8)
        .map_err(|e| err(&e))
}
