//! Image representation, file I/O, cropping and the two training
//! augmentations (horizontal reflection and right-angle rotation).

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::rng::RngStream;

#[derive(Debug, thiserror::Error)]
pub enum RasterError {
    #[error("image file not found: {0}")]
    Missing(PathBuf),
    #[error("unsupported image format: {0}")]
    Unsupported(String),
    #[error("corrupt image data: {0}")]
    Corrupt(String),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("crop {want_w}x{want_h} exceeds image {width}x{height}")]
    CropTooLarge {
        want_w: usize,
        want_h: usize,
        width: usize,
        height: usize,
    },
    #[error("invalid raster: {0}")]
    Invalid(String),
}

/// Channel-major pixel grid with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self, RasterError> {
        if channels != 1 && channels != 3 {
            return Err(RasterError::Invalid(format!("{channels} channels")));
        }
        if width == 0 || height == 0 {
            return Err(RasterError::Invalid("zero-sized raster".into()));
        }
        if data.len() != width * height * channels {
            return Err(RasterError::Invalid(format!(
                "data length {} != {width}x{height}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(RasterError::Invalid(format!("pixel value {v} outside [0,1]")));
        }
        Ok(Self { width, height, channels, data })
    }

    /// Builds a raster, clamping every value into [0, 1] (NaN maps to 0).
    pub fn from_clamped(width: usize, height: usize, channels: usize, mut data: Vec<f32>) -> Self {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(width, height, channels, data).expect("clamped raster is valid")
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self::from_clamped(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(c, y, x)]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    /// Per-pixel root-mean-square difference against `other` (same shape).
    pub fn rmse(&self, other: &Raster) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        let ss: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = f64::from(*a) - f64::from(*b);
                d * d
            })
            .sum();
        (ss / self.data.len() as f64).sqrt()
    }

    /// Copy of the `w`×`h` window whose top-left corner is `(x0, y0)`.
    pub fn window(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Raster, RasterError> {
        if x0 + w > self.width || y0 + h > self.height || w == 0 || h == 0 {
            return Err(RasterError::CropTooLarge { want_w: w, want_h: h, width: self.width, height: self.height });
        }
        let mut data = Vec::with_capacity(w * h * self.channels);
        for c in 0..self.channels {
            for y in y0..y0 + h {
                let start = self.index(c, y, x0);
                data.extend_from_slice(&self.data[start..start + w]);
            }
        }
        Ok(Raster { width: w, height: h, channels: self.channels, data })
    }

    pub fn flip_horizontal(&self) -> Raster {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in (0..self.width).rev() {
                    data.push(self.get(c, y, x));
                }
            }
        }
        Raster { data, ..*self }
    }

    /// Rotates counter-clockwise by `quarter_turns` × 90°.
    pub fn rotate_quarter(&self, quarter_turns: u8) -> Raster {
        let mut out = self.clone();
        for _ in 0..quarter_turns % 4 {
            out = out.rotate_ccw_once();
        }
        out
    }

    fn rotate_ccw_once(&self) -> Raster {
        let (w, h) = (self.width, self.height);
        // new dims: width' = h, height' = w; dst(x', y') = src(x = w-1-y', y = x')
        let mut data = vec![0.0; self.data.len()];
        for c in 0..self.channels {
            for yp in 0..w {
                for xp in 0..h {
                    data[(c * w + yp) * h + xp] = self.get(c, xp, w - 1 - yp);
                }
            }
        }
        Raster { width: h, height: w, channels: self.channels, data }
    }

    /// Luma plane (BT.601 weights); the plane itself for grayscale.
    pub fn luma(&self) -> Vec<f32> {
        if self.channels == 1 {
            return self.data.clone();
        }
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        r.iter().zip(g).zip(b).map(|((r, g), b)| 0.299 * r + 0.587 * g + 0.114 * b).collect()
    }
}

/// Random window of size `w`×`h`, offsets uniform over all valid positions.
pub fn random_crop(r: &Raster, w: usize, h: usize, rng: &mut RngStream) -> Result<Raster, RasterError> {
    if w > r.width || h > r.height {
        return Err(RasterError::CropTooLarge { want_w: w, want_h: h, width: r.width, height: r.height });
    }
    let x0 = rng.below(r.width - w + 1);
    let y0 = rng.below(r.height - h + 1);
    r.window(x0, y0, w, h)
}

/// Centered window; odd margins are floored.
pub fn center_crop(r: &Raster, w: usize, h: usize) -> Result<Raster, RasterError> {
    if w > r.width || h > r.height {
        return Err(RasterError::CropTooLarge { want_w: w, want_h: h, width: r.width, height: r.height });
    }
    r.window((r.width - w) / 2, (r.height - h) / 2, w, h)
}

/// One draw of the training augmentation policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Augmentation {
    pub flip: bool,
    /// Counter-clockwise quarter turns, 0..=3.
    pub quarter_turns: u8,
}

impl Augmentation {
    /// The only two transforms the training pipeline may apply.
    pub const KINDS: [&'static str; 2] = ["horizontal_flip", "right_angle_rotation"];

    pub fn draw(rng: &mut RngStream) -> Self {
        let flip = rng.bernoulli(0.5);
        let quarter_turns = rng.below(4) as u8;
        Self { flip, quarter_turns }
    }

    pub fn apply(&self, r: &Raster) -> Raster {
        let flipped = if self.flip { r.flip_horizontal() } else { r.clone() };
        flipped.rotate_quarter(self.quarter_turns)
    }
}

/// Horizontal flip with probability ½ and an independent uniform rotation
/// from {0°, 90°, 180°, 270°}.
pub fn augment(r: &Raster, rng: &mut RngStream) -> Raster {
    Augmentation::draw(rng).apply(r)
}

fn open_file(path: &Path) -> Result<File, RasterError> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => RasterError::Missing(path.to_path_buf()),
        _ => RasterError::Corrupt(format!("{}: {e}", path.display())),
    })
}

/// Loads an 8-bit PNG (gray/RGB, alpha dropped) or binary PGM/PPM.
pub fn load_image(path: &Path) -> Result<Raster, RasterError> {
    let mut bytes = Vec::new();
    open_file(path)?
        .read_to_end(&mut bytes)
        .map_err(|e| RasterError::Corrupt(format!("{}: {e}", path.display())))?;
    decode_image(&bytes)
}

pub fn decode_image(bytes: &[u8]) -> Result<Raster, RasterError> {
    if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(bytes)
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        decode_pnm(bytes)
    } else {
        Err(RasterError::Unsupported("expected PNG, binary PGM (P5) or PPM (P6)".into()))
    }
}

fn decode_png(bytes: &[u8]) -> Result<Raster, RasterError> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| RasterError::Corrupt(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| RasterError::Corrupt("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| RasterError::Corrupt(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(RasterError::Unsupported(format!("bit depth {:?}", info.bit_depth)));
    }
    let (src_ch, out_ch) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        other => return Err(RasterError::Unsupported(format!("color type {other:?}"))),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    interleaved_to_raster(&buf[..w * h * src_ch], w, h, src_ch, out_ch)
}

fn interleaved_to_raster(buf: &[u8], w: usize, h: usize, src_ch: usize, out_ch: usize) -> Result<Raster, RasterError> {
    let mut data = vec![0.0f32; w * h * out_ch];
    for p in 0..w * h {
        for c in 0..out_ch {
            data[c * w * h + p] = f32::from(buf[p * src_ch + c]) / 255.0;
        }
    }
    Raster::new(w, h, out_ch, data)
}

fn decode_pnm(bytes: &[u8]) -> Result<Raster, RasterError> {
    let channels = if bytes[1] == b'5' { 1 } else { 3 };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|b| *b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(RasterError::Corrupt("truncated PNM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| RasterError::Corrupt("bad PNM header field".into()))?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(RasterError::Unsupported(format!("PNM maxval {maxval} (only 8-bit)")));
    }
    if w == 0 || h == 0 {
        return Err(RasterError::Corrupt("zero PNM dimension".into()));
    }
    // exactly one whitespace byte separates header and raster
    pos += 1;
    let need = w * h * channels;
    let body = bytes
        .get(pos..pos + need)
        .ok_or_else(|| RasterError::Corrupt(format!("PNM body shorter than {need} bytes")))?;
    interleaved_to_raster(body, w, h, channels, channels)
}

fn quantize(r: &Raster) -> Vec<u8> {
    let n = r.width * r.height;
    let mut out = vec![0u8; n * r.channels];
    for p in 0..n {
        for c in 0..r.channels {
            out[p * r.channels + c] = (r.data[c * n + p] * 255.0).round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// Writes 8-bit PNG, or PGM/PPM when the extension is `.pgm`/`.ppm`.
pub fn save_image(r: &Raster, path: &Path) -> Result<(), RasterError> {
    let write_err = |source: std::io::Error| RasterError::Write { path: path.to_path_buf(), source };
    let bytes = encode_image(r, path.extension().and_then(|e| e.to_str()).unwrap_or("png"))?;
    let mut f = BufWriter::new(File::create(path).map_err(write_err)?);
    f.write_all(&bytes).map_err(write_err)?;
    f.flush().map_err(write_err)
}

pub fn encode_image(r: &Raster, extension: &str) -> Result<Vec<u8>, RasterError> {
    let pixels = quantize(r);
    match extension.to_ascii_lowercase().as_str() {
        "pgm" | "ppm" => {
            let magic = if r.channels == 1 { "P5" } else { "P6" };
            let mut out = format!("{magic}\n{} {}\n255\n", r.width, r.height).into_bytes();
            out.extend_from_slice(&pixels);
            Ok(out)
        }
        "png" => {
            let mut out = Vec::new();
            {
                let mut enc = png::Encoder::new(&mut out, r.width as u32, r.height as u32);
                enc.set_color(if r.channels == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb });
                enc.set_depth(png::BitDepth::Eight);
                let mut writer = enc.write_header().map_err(|e| RasterError::Corrupt(e.to_string()))?;
                writer.write_image_data(&pixels).map_err(|e| RasterError::Corrupt(e.to_string()))?;
            }
            Ok(out)
        }
        other => Err(RasterError::Unsupported(format!("extension .{other}"))),
    }
}

/// Reads every loadable image in `dir` (sorted by file name).
pub fn load_dir(dir: &Path) -> Result<Vec<(PathBuf, Raster)>, RasterError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|_| RasterError::Missing(dir.to_path_buf()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "pgm" | "ppm"))
        })
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let r = load_image(&p)?;
            Ok((p, r))
        })
        .collect()
}
