//! Plane-level image operators shared by the distortion families.
//! Planes are row-major `f32` slices; borders replicate the edge pixel.

pub fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Separable convolution with a symmetric odd-length 1-D kernel.
pub fn separable(plane: &[f32], w: usize, h: usize, kx: &[f32], ky: &[f32]) -> Vec<f32> {
    let (rx, ry) = ((kx.len() / 2) as isize, (ky.len() / 2) as isize);
    let mut tmp = vec![0.0f32; w * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in kx.iter().enumerate() {
                acc += k * row[clamp_idx(x as isize + i as isize - rx, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in ky.iter().enumerate() {
                acc += k * tmp[clamp_idx(y as isize + i as isize - ry, h) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

pub fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let raw: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| (v / total) as f32).collect()
}

pub fn gaussian_blur(plane: &[f32], w: usize, h: usize, sigma: f64) -> Vec<f32> {
    let k = gaussian_kernel(sigma);
    separable(plane, w, h, &k, &k)
}

/// Dense 2-D convolution with a square odd-sized kernel.
pub fn convolve2d(plane: &[f32], w: usize, h: usize, kernel: &[f32], size: usize) -> Vec<f32> {
    let r = (size / 2) as isize;
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ky in 0..size {
                let sy = clamp_idx(y as isize + ky as isize - r, h);
                for kx in 0..size {
                    let k = kernel[ky * size + kx];
                    if k != 0.0 {
                        acc += k * plane[sy * w + clamp_idx(x as isize + kx as isize - r, w)];
                    }
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Uniform disk of the given radius, normalized to unit sum.
pub fn disk_kernel(radius: usize) -> (Vec<f32>, usize) {
    let size = 2 * radius + 1;
    let r = radius as f64 + 0.5;
    let mut k: Vec<f32> = (0..size * size)
        .map(|i| {
            let (dy, dx) = ((i / size) as f64 - radius as f64, (i % size) as f64 - radius as f64);
            if dx * dx + dy * dy <= r * r {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let total: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    (k, size)
}

/// BT.601 full-range RGB → (Y, Cb, Cr) with chroma centred on 0.
pub fn rgb_to_ycc(r: &[f32], g: &[f32], b: &[f32]) -> [Vec<f32>; 3] {
    let n = r.len();
    let (mut y, mut cb, mut cr) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let (rr, gg, bb) = (r[i], g[i], b[i]);
        y.push(0.299 * rr + 0.587 * gg + 0.114 * bb);
        cb.push(-0.168_736 * rr - 0.331_264 * gg + 0.5 * bb);
        cr.push(0.5 * rr - 0.418_688 * gg - 0.081_312 * bb);
    }
    [y, cb, cr]
}

pub fn ycc_to_rgb(y: &[f32], cb: &[f32], cr: &[f32]) -> Vec<f32> {
    let n = y.len();
    let mut out = vec![0.0f32; 3 * n];
    for i in 0..n {
        out[i] = y[i] + 1.402 * cr[i];
        out[n + i] = y[i] - 0.344_136 * cb[i] - 0.714_136 * cr[i];
        out[2 * n + i] = y[i] + 1.772 * cb[i];
    }
    out
}

const JPEG_LUMA: [f32; 64] = [
    16., 11., 10., 16., 24., 40., 51., 61., 12., 12., 14., 19., 26., 58., 60., 55., 14., 13., 16., 24., 40., 57., 69.,
    56., 14., 17., 22., 29., 51., 87., 80., 62., 18., 22., 37., 56., 68., 109., 103., 77., 24., 35., 55., 64., 81.,
    104., 113., 92., 49., 64., 78., 87., 103., 121., 120., 101., 72., 92., 95., 98., 112., 100., 103., 99.,
];

const JPEG_CHROMA: [f32; 64] = [
    17., 18., 24., 47., 99., 99., 99., 99., 18., 21., 26., 66., 99., 99., 99., 99., 24., 26., 56., 99., 99., 99., 99.,
    99., 47., 66., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99.,
    99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99.,
];

fn dct_matrix() -> [[f32; 8]; 8] {
    let mut m = [[0.0f32; 8]; 8];
    for (k, row) in m.iter_mut().enumerate() {
        let scale = if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (n, v) in row.iter_mut().enumerate() {
            *v = (scale * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / 16.0).cos()) as f32;
        }
    }
    m
}

/// 8×8 block DCT quantization of a plane on a 0-255 scale. Edge blocks are
/// completed by edge replication and cropped back.
pub fn block_dct_quantize(plane: &[f32], w: usize, h: usize, chroma: bool, scale: f32) -> Vec<f32> {
    let m = dct_matrix();
    let table = if chroma { &JPEG_CHROMA } else { &JPEG_LUMA };
    let mut out = plane.to_vec();
    let offset = if chroma { 0.0 } else { 128.0 };
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            let mut block = [[0.0f32; 8]; 8];
            for (y, row) in block.iter_mut().enumerate() {
                for (x, v) in row.iter_mut().enumerate() {
                    let (sy, sx) = ((by + y).min(h - 1), (bx + x).min(w - 1));
                    *v = plane[sy * w + sx] * 255.0 - offset;
                }
            }
            // coef = M · block · Mᵀ
            let mut tmp = [[0.0f32; 8]; 8];
            let mut coef = [[0.0f32; 8]; 8];
            for i in 0..8 {
                for j in 0..8 {
                    tmp[i][j] = (0..8).map(|k| m[i][k] * block[k][j]).sum();
                }
            }
            for i in 0..8 {
                for j in 0..8 {
                    coef[i][j] = (0..8).map(|k| tmp[i][k] * m[j][k]).sum();
                }
            }
            for i in 0..8 {
                for j in 0..8 {
                    let q = (table[i * 8 + j] * scale).max(1.0);
                    coef[i][j] = (coef[i][j] / q).round() * q;
                }
            }
            // block = Mᵀ · coef · M
            for i in 0..8 {
                for j in 0..8 {
                    tmp[i][j] = (0..8).map(|k| m[k][i] * coef[k][j]).sum();
                }
            }
            for y in 0..8 {
                for x in 0..8 {
                    if by + y < h && bx + x < w {
                        let v: f32 = (0..8).map(|k| tmp[y][k] * m[k][x]).sum();
                        out[(by + y) * w + bx + x] = (v + offset) / 255.0;
                    }
                }
            }
        }
    }
    out
}

/// Multi-level orthonormal Haar transform with hard thresholding of the
/// detail coefficients.
pub fn haar_threshold(plane: &[f32], w: usize, h: usize, levels: usize, threshold: f32) -> Vec<f32> {
    let block = 1 << levels;
    let (pw, ph) = (w.div_ceil(block) * block, h.div_ceil(block) * block);
    let mut buf = vec![0.0f32; pw * ph];
    for y in 0..ph {
        for x in 0..pw {
            buf[y * pw + x] = plane[y.min(h - 1) * w + x.min(w - 1)];
        }
    }
    let s = std::f32::consts::FRAC_1_SQRT_2;
    let (mut cw, mut ch) = (pw, ph);
    for _ in 0..levels {
        haar_pass(&mut buf, pw, cw, ch, s, true);
        cw /= 2;
        ch /= 2;
    }
    for y in 0..ph {
        for x in 0..pw {
            if (x >= cw || y >= ch) && buf[y * pw + x].abs() < threshold {
                buf[y * pw + x] = 0.0;
            }
        }
    }
    for _ in 0..levels {
        cw *= 2;
        ch *= 2;
        haar_pass(&mut buf, pw, cw, ch, s, false);
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        out[y * w..(y + 1) * w].copy_from_slice(&buf[y * pw..y * pw + w]);
    }
    out
}

fn haar_pass(buf: &mut [f32], stride: usize, cw: usize, ch: usize, s: f32, forward: bool) {
    let mut line = vec![0.0f32; cw.max(ch)];
    let mut apply = |vals: &mut [f32]| {
        let n = vals.len();
        let half = n / 2;
        if forward {
            for i in 0..half {
                let (a, b) = (vals[2 * i], vals[2 * i + 1]);
                line[i] = (a + b) * s;
                line[half + i] = (a - b) * s;
            }
        } else {
            for i in 0..half {
                let (lo, hi) = (vals[i], vals[half + i]);
                line[2 * i] = (lo + hi) * s;
                line[2 * i + 1] = (lo - hi) * s;
            }
        }
        vals.copy_from_slice(&line[..n]);
    };
    if forward {
        for y in 0..ch {
            apply(&mut buf[y * stride..y * stride + cw]);
        }
        let mut col = vec![0.0f32; ch];
        for x in 0..cw {
            for y in 0..ch {
                col[y] = buf[y * stride + x];
            }
            apply(&mut col);
            for y in 0..ch {
                buf[y * stride + x] = col[y];
            }
        }
    } else {
        let mut col = vec![0.0f32; ch];
        for x in 0..cw {
            for y in 0..ch {
                col[y] = buf[y * stride + x];
            }
            apply(&mut col);
            for y in 0..ch {
                buf[y * stride + x] = col[y];
            }
        }
        for y in 0..ch {
            apply(&mut buf[y * stride..y * stride + cw]);
        }
    }
}

pub const BAYER4: [f32; 16] = [0., 8., 2., 10., 12., 4., 14., 6., 3., 11., 1., 9., 15., 7., 13., 5.];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn haar_zero_threshold_is_identity() {
        let w = 12;
        let h = 9;
        let plane: Vec<f32> = (0..w * h).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
        let back = haar_threshold(&plane, w, h, 3, 0.0);
        for (a, b) in plane.iter().zip(&back) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn dct_fine_step_is_near_identity() {
        let w = 10;
        let h = 10;
        let plane: Vec<f32> = (0..w * h).map(|i| ((i * 13) % 29) as f32 / 29.0).collect();
        let back = block_dct_quantize(&plane, w, h, false, 0.01);
        for (a, b) in plane.iter().zip(&back) {
            assert!((a - b).abs() < 3.0 / 255.0);
        }
    }

    #[test]
    fn color_round_trip() {
        let (r, g, b) = (vec![0.2, 0.9], vec![0.5, 0.1], vec![0.7, 0.3]);
        let [y, cb, cr] = rgb_to_ycc(&r, &g, &b);
        let back = ycc_to_rgb(&y, &cb, &cr);
        for (a, b) in back.iter().zip(r.iter().chain(&g).chain(&b)) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn blur_preserves_constant() {
        let plane = vec![0.4f32; 25];
        assert!(gaussian_blur(&plane, 5, 5, 1.5).iter().all(|v| (v - 0.4).abs() < 1e-6));
        let (k, size) = disk_kernel(2);
        assert!(convolve2d(&plane, 5, 5, &k, size).iter().all(|v| (v - 0.4).abs() < 1e-6));
    }
}
