//! The 25-family × 5-level synthetic distortion taxonomy.
//!
//! Severity tables (level 1 → 5):
//!
//! | id | family               | parameter                         | values                         |
//! |----|----------------------|-----------------------------------|--------------------------------|
//! |  1 | gaussian_blur        | sigma (px)                        | 0.6 1.0 1.6 2.4 3.6            |
//! |  2 | lens_blur            | disk radius (px)                  | 1 2 3 4 6                      |
//! |  3 | motion_blur          | horizontal line length (px)       | 3 5 9 13 19                    |
//! |  4 | color_diffusion      | chroma blur sigma (px)            | 1 2 4 6 9                      |
//! |  5 | hue_shift            | CbCr rotation (rad)               | 0.15 0.3 0.5 0.75 1.0          |
//! |  6 | color_quantization   | levels per channel                | 24 12 8 5 3                    |
//! |  7 | saturation_up        | chroma gain                       | 1.4 1.8 2.4 3.2 4.5            |
//! |  8 | saturation_down      | chroma gain                       | 0.75 0.55 0.35 0.15 0.0        |
//! |  9 | block_dct            | JPEG table multiplier             | 0.5 1 2 4 8                    |
//! | 10 | wavelet_zeroing      | Haar detail threshold             | 0.02 0.05 0.1 0.18 0.3         |
//! | 11 | white_noise          | sigma                             | 0.02 0.04 0.07 0.11 0.16       |
//! | 12 | chroma_noise         | sigma on Cb/Cr (Y gets a third)   | 0.02 0.04 0.07 0.11 0.16       |
//! | 13 | impulse_noise        | corrupted pixel fraction          | 0.01 0.03 0.06 0.1 0.16        |
//! | 14 | speckle              | multiplicative sigma              | 0.05 0.1 0.18 0.28 0.4         |
//! | 15 | denoise_residual     | noise sigma, then blur sigma 1    | 0.03 0.06 0.1 0.15 0.2         |
//! | 16 | brighten             | k in 1-(1-x)^k                    | 1.3 1.7 2.2 2.8 3.6            |
//! | 17 | darken               | k in x^k                          | 1.3 1.7 2.2 2.8 3.6            |
//! | 18 | mean_shift           | offset away from the image mean   | 0.05 0.1 0.16 0.23 0.32        |
//! | 19 | contrast_stretch     | gain about the mean               | 1.25 1.5 1.9 2.4 3.0           |
//! | 20 | contrast_compress    | gain about the mean               | 0.8 0.6 0.45 0.3 0.15          |
//! | 21 | pixel_jitter         | max displacement (px)             | 1 2 3 4 6                      |
//! | 22 | pixelation           | block size (px)                   | 2 3 4 6 8                      |
//! | 23 | ordered_dither       | levels per channel (Bayer 4×4)    | 16 8 5 3 2                     |
//! | 24 | patch_erasure        | grey patches (side = min dim / 6) | 1 2 4 7 11                     |
//! | 25 | oversharpen          | unsharp amount (sigma 1)          | 1 2 3.5 5.5 8                  |
//!
//! Random draws for a family do not depend on the level, so one stream
//! replayed at increasing levels gives nested corruption.

pub mod corpus;
pub mod kernels;

use serde::{Deserialize, Serialize};

use crate::raster::Raster;
use crate::rng::RngStream;

pub use corpus::{generate_corpus, CorpusEntry, CorpusManifest, CorpusReport, MANIFEST_NAME};

pub const FAMILIES: usize = 25;
pub const LEVELS: usize = 5;
pub const CLASSES: usize = FAMILIES * LEVELS;
pub const MIN_SIDE: usize = 16;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DistortError {
    #[error("distortion type {0} out of range 1..=25")]
    TypeRange(i64),
    #[error("distortion level {0} out of range 1..=5")]
    LevelRange(i64),
    #[error("malformed label {0:?}")]
    Label(String),
    #[error("image {width}x{height} is smaller than the {min}x{min} minimum for {family}")]
    TooSmall { family: &'static str, width: usize, height: usize, min: usize },
    #[error("{0} needs a colour image")]
    NeedsColor(&'static str),
    #[error("no loadable images in {0}")]
    EmptySource(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DistortionSpec {
    type_id: u8,
    level: u8,
}

impl DistortionSpec {
    pub fn new(type_id: i64, level: i64) -> Result<Self, DistortError> {
        if !(1..=FAMILIES as i64).contains(&type_id) {
            return Err(DistortError::TypeRange(type_id));
        }
        if !(1..=LEVELS as i64).contains(&level) {
            return Err(DistortError::LevelRange(level));
        }
        Ok(Self { type_id: type_id as u8, level: level as u8 })
    }

    pub fn type_id(&self) -> usize {
        self.type_id as usize
    }

    pub fn level(&self) -> usize {
        self.level as usize
    }

    pub fn class_index(&self) -> usize {
        (self.type_id() - 1) * LEVELS + self.level() - 1
    }

    pub fn from_class_index(index: usize) -> Result<Self, DistortError> {
        if index >= CLASSES {
            return Err(DistortError::TypeRange((index / LEVELS + 1) as i64));
        }
        Self::new((index / LEVELS + 1) as i64, (index % LEVELS + 1) as i64)
    }

    pub fn label(&self) -> String {
        format!("{}_{}", self.type_id, self.level)
    }

    pub fn parse_label(s: &str) -> Result<Self, DistortError> {
        let (t, l) = s.split_once('_').ok_or_else(|| DistortError::Label(s.into()))?;
        let t: i64 = t.parse().map_err(|_| DistortError::Label(s.into()))?;
        let l: i64 = l.parse().map_err(|_| DistortError::Label(s.into()))?;
        Self::new(t, l)
    }

    pub fn full_sweep() -> Vec<Self> {
        (0..CLASSES).map(|i| Self::from_class_index(i).unwrap()).collect()
    }

    pub fn family(&self) -> &'static Family {
        &CATALOGUE[self.type_id() - 1]
    }
}

/// Label for raw ids, validating the range.
pub fn label(type_id: i64, level: i64) -> Result<String, DistortError> {
    DistortionSpec::new(type_id, level).map(|s| s.label())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Group {
    Blur,
    Color,
    Compression,
    Noise,
    Luminance,
    Spatial,
}

#[derive(Debug, Clone, Serialize)]
pub struct Family {
    pub id: usize,
    pub name: &'static str,
    pub group: Group,
    pub parameter: &'static str,
    pub levels: [f64; LEVELS],
}

impl Family {
    /// Families whose error must grow strictly with level.
    pub fn strictly_monotone(&self) -> bool {
        matches!(self.group, Group::Blur | Group::Noise | Group::Compression)
    }
}

macro_rules! fam {
    ($id:expr, $name:expr, $group:ident, $param:expr, [$($v:expr),*]) => {
        Family { id: $id, name: $name, group: Group::$group, parameter: $param, levels: [$($v as f64),*] }
    };
}

static CATALOGUE: [Family; FAMILIES] = [
    fam!(1, "gaussian_blur", Blur, "sigma_px", [0.6, 1.0, 1.6, 2.4, 3.6]),
    fam!(2, "lens_blur", Blur, "disk_radius_px", [1, 2, 3, 4, 6]),
    fam!(3, "motion_blur", Blur, "line_length_px", [3, 5, 9, 13, 19]),
    fam!(4, "color_diffusion", Color, "chroma_blur_sigma_px", [1, 2, 4, 6, 9]),
    fam!(5, "hue_shift", Color, "rotation_rad", [0.15, 0.3, 0.5, 0.75, 1.0]),
    fam!(6, "color_quantization", Color, "levels_per_channel", [24, 12, 8, 5, 3]),
    fam!(7, "saturation_up", Color, "chroma_gain", [1.4, 1.8, 2.4, 3.2, 4.5]),
    fam!(8, "saturation_down", Color, "chroma_gain", [0.75, 0.55, 0.35, 0.15, 0.0]),
    fam!(9, "block_dct", Compression, "table_multiplier", [0.5, 1, 2, 4, 8]),
    fam!(10, "wavelet_zeroing", Compression, "detail_threshold", [0.02, 0.05, 0.1, 0.18, 0.3]),
    fam!(11, "white_noise", Noise, "sigma", [0.02, 0.04, 0.07, 0.11, 0.16]),
    fam!(12, "chroma_noise", Noise, "chroma_sigma", [0.02, 0.04, 0.07, 0.11, 0.16]),
    fam!(13, "impulse_noise", Noise, "fraction", [0.01, 0.03, 0.06, 0.1, 0.16]),
    fam!(14, "speckle", Noise, "sigma", [0.05, 0.1, 0.18, 0.28, 0.4]),
    fam!(15, "denoise_residual", Noise, "sigma", [0.03, 0.06, 0.1, 0.15, 0.2]),
    fam!(16, "brighten", Luminance, "exponent", [1.3, 1.7, 2.2, 2.8, 3.6]),
    fam!(17, "darken", Luminance, "exponent", [1.3, 1.7, 2.2, 2.8, 3.6]),
    fam!(18, "mean_shift", Luminance, "offset", [0.05, 0.1, 0.16, 0.23, 0.32]),
    fam!(19, "contrast_stretch", Luminance, "gain", [1.25, 1.5, 1.9, 2.4, 3.0]),
    fam!(20, "contrast_compress", Luminance, "gain", [0.8, 0.6, 0.45, 0.3, 0.15]),
    fam!(21, "pixel_jitter", Spatial, "max_shift_px", [1, 2, 3, 4, 6]),
    fam!(22, "pixelation", Spatial, "block_px", [2, 3, 4, 6, 8]),
    fam!(23, "ordered_dither", Spatial, "levels_per_channel", [16, 8, 5, 3, 2]),
    fam!(24, "patch_erasure", Spatial, "patches", [1, 2, 4, 7, 11]),
    fam!(25, "oversharpen", Spatial, "amount", [1.0, 2.0, 3.5, 5.5, 8.0]),
];

pub fn catalogue() -> &'static [Family] {
    &CATALOGUE
}

/// Distorts `r` at `spec`. Pure given the rng state.
pub fn apply(r: &Raster, spec: DistortionSpec, rng: &mut RngStream) -> Result<Raster, DistortError> {
    let fam = spec.family();
    let (w, h, ch) = (r.width(), r.height(), r.channels());
    if w < MIN_SIDE || h < MIN_SIDE {
        return Err(DistortError::TooSmall { family: fam.name, width: w, height: h, min: MIN_SIDE });
    }
    if fam.group == Group::Color && ch != 3 {
        return Err(DistortError::NeedsColor(fam.name));
    }
    let p = fam.levels[spec.level() - 1];
    let n = w * h;
    let planes: Vec<&[f32]> = (0..ch).map(|c| r.plane(c)).collect();
    let per_plane = |f: &dyn Fn(&[f32]) -> Vec<f32>| -> Vec<f32> { planes.iter().flat_map(|p| f(p)).collect() };

    let data: Vec<f32> = match spec.type_id() {
        1 => per_plane(&|pl| kernels::gaussian_blur(pl, w, h, p)),
        2 => {
            let (k, size) = kernels::disk_kernel(p as usize);
            per_plane(&|pl| kernels::convolve2d(pl, w, h, &k, size))
        }
        3 => {
            let len = p as usize;
            let k = vec![1.0 / len as f32; len];
            per_plane(&|pl| kernels::separable(pl, w, h, &k, &[1.0]))
        }
        4 => with_ycc(r, |y, cb, cr| {
            (y.to_vec(), kernels::gaussian_blur(cb, w, h, p), kernels::gaussian_blur(cr, w, h, p))
        }),
        5 => with_ycc(r, |y, cb, cr| {
            let (s, c) = (p.sin() as f32, p.cos() as f32);
            let rb = cb.iter().zip(cr).map(|(b, r)| c * b - s * r).collect();
            let rr = cb.iter().zip(cr).map(|(b, r)| s * b + c * r).collect();
            (y.to_vec(), rb, rr)
        }),
        6 => {
            let q = p as f32 - 1.0;
            r.data().iter().map(|v| (v * q).round() / q).collect()
        }
        7 | 8 => with_ycc(r, |y, cb, cr| {
            let g = p as f32;
            (y.to_vec(), cb.iter().map(|v| v * g).collect(), cr.iter().map(|v| v * g).collect())
        }),
        9 => {
            let s = p as f32;
            if ch == 3 {
                with_ycc(r, |y, cb, cr| {
                    (
                        kernels::block_dct_quantize(y, w, h, false, s),
                        kernels::block_dct_quantize(cb, w, h, true, s),
                        kernels::block_dct_quantize(cr, w, h, true, s),
                    )
                })
            } else {
                per_plane(&|pl| kernels::block_dct_quantize(pl, w, h, false, s))
            }
        }
        10 => per_plane(&|pl| kernels::haar_threshold(pl, w, h, 3, p as f32)),
        11 => {
            let z = normals(rng, r.data().len());
            r.data().iter().zip(&z).map(|(v, z)| v + p as f32 * z).collect()
        }
        12 => {
            let z = normals(rng, 3 * n);
            if ch == 3 {
                with_ycc(r, |y, cb, cr| {
                    let s = p as f32;
                    (
                        y.iter().zip(&z[..n]).map(|(v, z)| v + s / 3.0 * z).collect(),
                        cb.iter().zip(&z[n..2 * n]).map(|(v, z)| v + s * z).collect(),
                        cr.iter().zip(&z[2 * n..]).map(|(v, z)| v + s * z).collect(),
                    )
                })
            } else {
                r.data().iter().zip(&z).map(|(v, z)| v + p as f32 / 3.0 * z).collect()
            }
        }
        13 => {
            // One (threshold, polarity) draw per pixel, shared across channels.
            let draws: Vec<(f64, bool)> = (0..n).map(|_| (rng.uniform(), rng.bernoulli(0.5))).collect();
            let mut out = r.data().to_vec();
            for (i, (u, salt)) in draws.iter().enumerate() {
                if *u < p {
                    for c in 0..ch {
                        out[c * n + i] = if *salt { 1.0 } else { 0.0 };
                    }
                }
            }
            out
        }
        14 => {
            let z = normals(rng, r.data().len());
            r.data().iter().zip(&z).map(|(v, z)| v * (1.0 + p as f32 * z)).collect()
        }
        15 => {
            let z = normals(rng, r.data().len());
            let noisy: Vec<f32> = r.data().iter().zip(&z).map(|(v, z)| (v + p as f32 * z).clamp(0.0, 1.0)).collect();
            (0..ch).flat_map(|c| kernels::gaussian_blur(&noisy[c * n..(c + 1) * n], w, h, 1.0)).collect()
        }
        16 => r.data().iter().map(|v| 1.0 - (1.0 - v).powf(p as f32)).collect(),
        17 => r.data().iter().map(|v| v.powf(p as f32)).collect(),
        18 => {
            let mean = mean(r.data());
            let dir = if mean < 0.5 { 1.0 } else { -1.0 };
            r.data().iter().map(|v| v + dir * p as f32).collect()
        }
        19 | 20 => {
            let m = mean(r.data());
            r.data().iter().map(|v| m + p as f32 * (v - m)).collect()
        }
        21 => {
            let d = p;
            let offsets: Vec<(f64, f64)> = (0..n).map(|_| (rng.uniform() * 2.0 - 1.0, rng.uniform() * 2.0 - 1.0)).collect();
            let mut out = vec![0.0f32; ch * n];
            for y in 0..h {
                for x in 0..w {
                    let (ox, oy) = offsets[y * w + x];
                    let sx = kernels::clamp_idx(x as isize + (ox * d).round() as isize, w);
                    let sy = kernels::clamp_idx(y as isize + (oy * d).round() as isize, h);
                    for c in 0..ch {
                        out[c * n + y * w + x] = r.get(c, sy, sx);
                    }
                }
            }
            out
        }
        22 => {
            let b = p as usize;
            let mut out = vec![0.0f32; ch * n];
            for c in 0..ch {
                let pl = r.plane(c);
                for by in (0..h).step_by(b) {
                    for bx in (0..w).step_by(b) {
                        let (ey, ex) = ((by + b).min(h), (bx + b).min(w));
                        let mut acc = 0.0;
                        for y in by..ey {
                            acc += pl[y * w + bx..y * w + ex].iter().sum::<f32>();
                        }
                        let avg = acc / ((ey - by) * (ex - bx)) as f32;
                        for y in by..ey {
                            out[c * n + y * w + bx..c * n + y * w + ex].iter_mut().for_each(|v| *v = avg);
                        }
                    }
                }
            }
            out
        }
        23 => {
            let q = p as f32 - 1.0;
            let mut out = r.data().to_vec();
            for c in 0..ch {
                for y in 0..h {
                    for x in 0..w {
                        let t = (kernels::BAYER4[(y % 4) * 4 + x % 4] + 0.5) / 16.0 - 0.5;
                        let v = &mut out[c * n + y * w + x];
                        *v = ((*v * q + t).round() / q).clamp(0.0, 1.0);
                    }
                }
            }
            out
        }
        24 => {
            let side = (w.min(h) / 6).max(2);
            let max_patches = CATALOGUE[23].levels[LEVELS - 1] as usize;
            let spots: Vec<(usize, usize)> =
                (0..max_patches).map(|_| (rng.below(w - side + 1), rng.below(h - side + 1))).collect();
            let mut out = r.data().to_vec();
            for &(px, py) in spots.iter().take(p as usize) {
                for c in 0..ch {
                    for y in py..py + side {
                        out[c * n + y * w + px..c * n + y * w + px + side].iter_mut().for_each(|v| *v = 0.5);
                    }
                }
            }
            out
        }
        25 => (0..ch)
            .flat_map(|c| {
                let pl = r.plane(c);
                let blurred = kernels::gaussian_blur(pl, w, h, 1.0);
                pl.iter().zip(blurred).map(|(v, b)| v + p as f32 * (v - b)).collect::<Vec<_>>()
            })
            .collect(),
        _ => unreachable!("type id validated at construction"),
    };
    Ok(Raster::from_clamped(w, h, ch, data))
}

fn with_ycc(r: &Raster, f: impl FnOnce(&[f32], &[f32], &[f32]) -> (Vec<f32>, Vec<f32>, Vec<f32>)) -> Vec<f32> {
    let [y, cb, cr] = kernels::rgb_to_ycc(r.plane(0), r.plane(1), r.plane(2));
    let (y, cb, cr) = f(&y, &cb, &cr);
    kernels::ycc_to_rgb(&y, &cb, &cr)
}

fn normals(rng: &mut RngStream, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.normal() as f32).collect()
}

fn mean(v: &[f32]) -> f32 {
    (v.iter().map(|x| *x as f64).sum::<f64>() / v.len() as f64) as f32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn catalogue_shape() {
        let cat = catalogue();
        assert_eq!(cat.len(), 25);
        for (i, f) in cat.iter().enumerate() {
            assert_eq!(f.id, i + 1);
            let increasing = f.levels.windows(2).all(|w| w[1] > w[0]);
            let decreasing = f.levels.windows(2).all(|w| w[1] < w[0]);
            assert!(increasing || decreasing, "{} levels not strictly monotone", f.name);
        }
        assert_eq!(DistortionSpec::full_sweep().len(), 125);
    }

    #[test]
    fn labels() {
        assert_eq!(label(23, 3).unwrap(), "23_3");
        assert_eq!(label(1, 1).unwrap(), "1_1");
        assert_eq!(label(26, 1), Err(DistortError::TypeRange(26)));
        assert_eq!(label(1, 0), Err(DistortError::LevelRange(0)));
        for i in 0..CLASSES {
            let s = DistortionSpec::from_class_index(i).unwrap();
            assert_eq!(s.class_index(), i);
            assert_eq!(DistortionSpec::parse_label(&s.label()).unwrap(), s);
        }
        assert!(DistortionSpec::from_class_index(125).is_err());
        assert!(DistortionSpec::parse_label("3-1").is_err());
    }

    #[test]
    fn too_small_rejected() {
        let r = Raster::filled(15, 40, 3, 0.5);
        let err = apply(&r, DistortionSpec::new(1, 1).unwrap(), &mut RngStream::new(0, 0));
        assert!(matches!(err, Err(DistortError::TooSmall { .. })));
    }

    #[test]
    fn grey_input_for_colour_family() {
        let r = Raster::filled(16, 16, 1, 0.5);
        let err = apply(&r, DistortionSpec::new(5, 1).unwrap(), &mut RngStream::new(0, 0));
        assert_eq!(err, Err(DistortError::NeedsColor("hue_shift")));
        assert!(apply(&r, DistortionSpec::new(11, 1).unwrap(), &mut RngStream::new(0, 0)).is_ok());
    }

    #[test]
    fn level_one_differs_and_is_deterministic() {
        let r = synth::reference_image();
        for t in 1..=25 {
            let spec = DistortionSpec::new(t, 1).unwrap();
            let a = apply(&r, spec, &mut RngStream::new(7, 0)).unwrap();
            let b = apply(&r, spec, &mut RngStream::new(7, 0)).unwrap();
            assert_eq!(a, b);
            assert_eq!((a.width(), a.height(), a.channels()), (64, 64, 3));
            assert!(a.rmse(&r) > 0.0, "{} level 1 equals source", spec.family().name);
        }
    }
}
